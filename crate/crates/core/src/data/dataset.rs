use std::path::Path;

use super::checkpoint::Checkpoint;
use super::format::{self, FormatError};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 8] = b"RDDATA\0\0";

/// In-memory image set, raw values in `[0, 1]`, layout `[N, C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    channels: usize,
    height: usize,
    width: usize,
    images: Vec<f32>,
    labels: Option<Vec<u32>>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        (channels, height, width): (usize, usize, usize),
        images: Vec<f32>,
        labels: Option<Vec<u32>>,
        num_classes: usize,
    ) -> Result<Self, FormatError> {
        let per = channels * height * width;
        if per == 0 || images.len() % per != 0 {
            return Err(FormatError::Malformed(format!(
                "{} values do not tile {channels}x{height}x{width} images",
                images.len()
            )));
        }
        if !images.iter().all(|v| v.is_finite()) {
            return Err(FormatError::Malformed("non-finite pixel value".into()));
        }
        let n = images.len() / per;
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(FormatError::Malformed(format!("{} labels for {n} images", l.len())));
            }
            if let Some(bad) = l.iter().find(|&&v| v as usize >= num_classes) {
                return Err(FormatError::Malformed(format!("label {bad} outside [0, {num_classes})")));
            }
        }
        Ok(Dataset { channels, height, width, images, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.images.len() / self.image_len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let len = self.image_len();
        &self.images[i * len..(i + 1) * len]
    }

    pub fn images(&self) -> &[f32] {
        &self.images
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<u32> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        let labels = self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
        Dataset { images, labels, ..self.clone_meta() }
    }

    pub fn with_labels(mut self, labels: Vec<u32>, num_classes: usize) -> Result<Self, FormatError> {
        self.labels = Some(labels);
        self.num_classes = num_classes;
        Dataset::new(self.image_shape(), self.images, self.labels, self.num_classes)
    }

    fn clone_meta(&self) -> Dataset {
        Dataset { images: Vec::new(), labels: None, ..*self }
    }

    /// Uses the checkpoint record grammar: `images [N,C,H,W]` and optional `labels [N]`
    /// stored as exact small integers at 32-bit precision.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut ck = Checkpoint::<f32>::new();
        ck.meta.insert("num_classes".into(), self.num_classes.to_string());
        let shape = vec![self.len(), self.channels, self.height, self.width];
        ck.records.push(("images".into(), Tensor::new(shape, self.images.clone()).expect("consistent")));
        if let Some(l) = &self.labels {
            ck.records.push(("labels".into(), Tensor::new(vec![l.len()], l.iter().map(|&v| v as f32).collect()).expect("1-d")));
        }
        format::frame(DATASET_MAGIC, &ck.encode_body())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let ck = Checkpoint::<f32>::decode_body(format::unframe(DATASET_MAGIC, bytes)?)?;
        let num_classes = match ck.meta.get("num_classes") {
            Some(v) => v.parse::<usize>().map_err(|_| FormatError::Malformed(format!("num_classes `{v}`")))?,
            None => 0,
        };
        let images = ck.get("images").ok_or_else(|| FormatError::Malformed("missing `images` record".into()))?;
        let &[_, c, h, w] = images.shape() else {
            return Err(FormatError::Malformed(format!("images record has shape {:?}", images.shape())));
        };
        let labels = match ck.get("labels") {
            Some(t) => {
                let mut out = Vec::with_capacity(t.numel());
                for &v in t.data() {
                    if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f32 {
                        return Err(FormatError::Malformed(format!("label value {v}")));
                    }
                    out.push(v as u32);
                }
                Some(out)
            }
            None => None,
        };
        if ck.records.len() != 1 + labels.is_some() as usize {
            return Err(FormatError::Malformed("unexpected records in dataset file".into()));
        }
        Dataset::new((c, h, w), images.data().to_vec(), labels, num_classes)
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        format::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&format::read_file(path)?)
    }
}

/// Source format for [`load_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// Versioned binary tensor container.
    Binary,
    /// `<dir>/<class>/*.png`, classes labelled in sorted name order.
    #[cfg(feature = "png-import")]
    PngDir,
}

pub fn load_dataset(path: &Path, fmt: DatasetFormat) -> Result<Dataset, FormatError> {
    match fmt {
        DatasetFormat::Binary => Dataset::load(path),
        #[cfg(feature = "png-import")]
        DatasetFormat::PngDir => super::png_dir::load_png_dir(path),
    }
}
