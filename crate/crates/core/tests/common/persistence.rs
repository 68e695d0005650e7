//! Randomized round trips and single-byte corruptions over every binary format.

use std::collections::BTreeMap;

use rand::Rng as _;
use regdistill::data::format::layout;
use regdistill::data::{BankFile, Checkpoint, Dataset, ErrorClass, FeatureCache, FormatError};
use regdistill::rng::{stream, Rng};
use regdistill::tensor::{Scalar, Tensor};

fn finite_f32(r: &mut Rng) -> f32 {
    match r.random_range(0..10) {
        0 => -0.0,
        1 => f32::from_bits(r.random_range(1..0x0080_0000)), // subnormal
        _ => loop {
            let v = f32::from_bits(r.random());
            if v.is_finite() {
                break v;
            }
        },
    }
}

fn finite_f64(r: &mut Rng) -> f64 {
    loop {
        let v = f64::from_bits(r.random());
        if v.is_finite() {
            break v;
        }
    }
}

fn name(r: &mut Rng) -> String {
    let len = r.random_range(0..12);
    (0..len).map(|_| ['a', 'b', '.', '_', '7', 'é', 'Z'][r.random_range(0..7)]).collect()
}

fn checkpoint<T: Scalar>(r: &mut Rng, value: impl Fn(&mut Rng) -> T) -> Checkpoint<T> {
    let mut c = Checkpoint::new();
    let mut meta = BTreeMap::new();
    for _ in 0..r.random_range(0..4) {
        meta.insert(name(r), name(r));
    }
    c.meta = meta;
    for i in 0..r.random_range(0..5) {
        let rank = r.random_range(0..4);
        let shape: Vec<usize> = (0..rank).map(|_| r.random_range(0..5)).collect();
        let data = (0..shape.iter().product::<usize>()).map(|_| value(r)).collect();
        c.records.push((format!("{}{i}", name(r)), Tensor::new(shape, data).unwrap()));
    }
    c
}

fn cache(r: &mut Rng) -> FeatureCache {
    let dim = r.random_range(1..9);
    let mut c = FeatureCache::new(name(r), r.random(), dim);
    let mut id = 0u64;
    for _ in 0..r.random_range(0..20) {
        id += r.random_range(1..1000);
        let f: Vec<f32> = (0..dim).map(|_| finite_f32(r)).collect();
        c.push(id, &f).unwrap();
    }
    c
}

fn bank(r: &mut Rng) -> BankFile {
    let features = cache(r);
    let labels = (0..features.len()).map(|_| r.random_range(0..50)).collect();
    BankFile { features, layer: name(r), normalized: r.random(), labels }
}

fn dataset(r: &mut Rng) -> Dataset {
    let shape = (r.random_range(1..4), r.random_range(1..5), r.random_range(1..5));
    let n = r.random_range(0..6);
    let images = (0..n * shape.0 * shape.1 * shape.2).map(|_| finite_f32(r)).collect();
    let classes = r.random_range(1..5);
    let labels = r.random_bool(0.7).then(|| (0..n).map(|_| r.random_range(0..classes) as u32).collect());
    Dataset::new(shape, images, labels, classes).unwrap()
}

/// Encoded bytes of a random document of kind `i % 5`, plus a decoder that re-encodes.
fn document(i: u64, r: &mut Rng) -> (Vec<u8>, fn(&[u8]) -> Result<Vec<u8>, FormatError>) {
    match i % 5 {
        0 => (checkpoint::<f32>(r, finite_f32).to_bytes(), |b| Checkpoint::<f32>::from_bytes(b).map(|c| c.to_bytes())),
        1 => (checkpoint::<f64>(r, finite_f64).to_bytes(), |b| Checkpoint::<f64>::from_bytes(b).map(|c| c.to_bytes())),
        2 => (cache(r).to_bytes(), |b| FeatureCache::from_bytes(b).map(|c| c.to_bytes())),
        3 => (bank(r).to_bytes(), |b| BankFile::from_bytes(b).map(|c| c.to_bytes())),
        _ => (dataset(r).to_bytes(), |b| Dataset::from_bytes(b).map(|c| c.to_bytes())),
    }
}

/// Decoding then re-encoding reproduces every byte, for `count` random documents.
pub fn round_trips(count: u64) -> u64 {
    for i in 0..count {
        let mut r = stream(i, "persist.round", &[]);
        let (bytes, decode) = document(i, &mut r);
        let again = decode(&bytes).unwrap_or_else(|e| panic!("document {i}: {e}"));
        assert_eq!(again, bytes, "document {i} changed on round trip");
    }
    count
}

/// Class a single changed byte at `pos` must be reported as.
fn expected_class(pos: usize) -> ErrorClass {
    if layout::MAGIC.contains(&pos) {
        ErrorClass::Magic
    } else if layout::VERSION.contains(&pos) {
        ErrorClass::Version
    } else if layout::BODY_LEN.contains(&pos) {
        ErrorClass::Framing
    } else {
        ErrorClass::Checksum
    }
}

/// `count` random documents, each with one byte replaced by a different value.
pub fn corruptions(count: u64) -> BTreeMap<String, usize> {
    let mut seen = BTreeMap::new();
    for i in 0..count {
        let mut r = stream(i, "persist.corrupt", &[]);
        let (mut bytes, decode) = document(i, &mut r);
        // bias a quarter of the draws into the fixed prefix
        let pos = if i % 4 == 0 { r.random_range(0..20) } else { r.random_range(0..bytes.len()) };
        bytes[pos] ^= r.random_range(1..=255u8);
        let want = expected_class(pos);
        match decode(&bytes) {
            Ok(_) => panic!("document {i}: corruption at byte {pos} accepted"),
            Err(e) => assert_eq!(e.class(), want, "document {i}, byte {pos}: {e}"),
        }
        *seen.entry(format!("{want:?}")).or_insert(0) += 1;
    }
    seen
}
