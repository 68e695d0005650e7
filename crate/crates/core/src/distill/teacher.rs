use crate::augment::{augment, AugmentationPolicy, ViewKey, TEACHER_SIDE};
use crate::data::{Dataset, FeatureCache};
use crate::models::{Network, BACKBONE_TAP};
use crate::tensor::{Scalar, Tensor};

use super::DistillError;

/// Images per teacher forward when building a cache.
const CACHE_CHUNK: usize = 256;

/// Where teacher features come from.
#[derive(Debug, Clone)]
pub enum TeacherSource<T> {
    /// Frozen network queried in eval mode at `tap`.
    Live { network: Network<T>, tap: String },
    Cached(FeatureCache),
}

/// A frozen teacher. Nothing here ever receives a gradient or a parameter update.
#[derive(Debug, Clone)]
pub struct TeacherHandle<T> {
    pub id: String,
    pub source: TeacherSource<T>,
    dim: usize,
}

impl<T: Scalar> TeacherHandle<T> {
    /// Live teacher emitting its backbone feature.
    pub fn live(id: impl Into<String>, network: Network<T>) -> Self {
        let dim = network.feature_dim();
        TeacherHandle { id: id.into(), source: TeacherSource::Live { network, tap: BACKBONE_TAP.into() }, dim }
    }

    /// Live teacher emitting the activation at `tap` (e.g. a classifier head for KD).
    pub fn live_at(id: impl Into<String>, network: Network<T>, tap: &str) -> Result<Self, DistillError> {
        let id = id.into();
        let dim = network
            .taps()
            .into_iter()
            .find(|t| t.name == tap)
            .map(|t| t.width)
            .ok_or_else(|| DistillError::TeacherUnavailable { id: id.clone(), detail: format!("no tap `{tap}`") })?;
        Ok(TeacherHandle { id, source: TeacherSource::Live { network, tap: tap.into() }, dim })
    }

    pub fn cached(cache: FeatureCache) -> Self {
        TeacherHandle { id: cache.teacher_id.clone(), dim: cache.dim, source: TeacherSource::Cached(cache) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_cached(&self) -> bool {
        matches!(self.source, TeacherSource::Cached(_))
    }

    /// Teacher features `[N, d]` for a batch. Live teachers read `views`; cached teachers
    /// read `ids` and ignore the views.
    pub fn features(&self, views: Option<&Tensor<T>>, ids: &[u64]) -> Result<Tensor<T>, DistillError> {
        match &self.source {
            TeacherSource::Live { network, tap } => {
                let views = views.ok_or_else(|| self.unavailable("live teacher needs input views".into()))?;
                let mut out = network.forward_features(views, &[tap.as_str()])?;
                Ok(out.remove(tap.as_str()).expect("requested tap"))
            }
            TeacherSource::Cached(cache) => {
                let mut data = Vec::with_capacity(ids.len() * self.dim);
                for &id in ids {
                    let row = cache.lookup(id).ok_or_else(|| self.unavailable(format!("image {id} not cached")))?;
                    data.extend(row.iter().map(|&v| T::from_f64_lossy(v as f64)));
                }
                Ok(Tensor::new(vec![ids.len(), self.dim], data)?)
            }
        }
    }

    fn unavailable(&self, detail: String) -> DistillError {
        DistillError::TeacherUnavailable { id: self.id.clone(), detail }
    }
}

/// The augmented teacher view of every image for view-epoch 0 under `seed`, as used by
/// both caching and fixed-view distillation.
pub fn teacher_view(
    dataset: &Dataset,
    index: usize,
    policy: &AugmentationPolicy,
    seed: u64,
) -> Result<Vec<f32>, DistillError> {
    let key = ViewKey { seed, image: index as u64, epoch: 0 };
    Ok(augment(dataset.image(index), dataset.image_shape(), policy, &mut key.stream(TEACHER_SIDE))?)
}

/// One pass of the frozen teacher over a single augmented view of every image.
pub fn cache_teacher_features<T: Scalar>(
    teacher: &TeacherHandle<T>,
    dataset: &Dataset,
    policy: &AugmentationPolicy,
    seed: u64,
) -> Result<FeatureCache, DistillError> {
    if teacher.is_cached() {
        return Err(teacher.unavailable("cannot cache an already cached teacher".into()));
    }
    let c = dataset.image_shape().0;
    let s = policy.output_size;
    let mut cache = FeatureCache::new(teacher.id.clone(), seed, teacher.dim());
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(CACHE_CHUNK) {
        let mut views = Vec::with_capacity(chunk.len() * c * s * s);
        for &i in chunk {
            views.extend(teacher_view(dataset, i, policy, seed)?.into_iter().map(|v| T::from_f64_lossy(v as f64)));
        }
        let views = Tensor::new(vec![chunk.len(), c, s, s], views)?;
        let ids: Vec<u64> = chunk.iter().map(|&i| i as u64).collect();
        let feats = teacher.features(Some(&views), &ids)?;
        if feats.shape() != [chunk.len(), teacher.dim()] {
            return Err(teacher.unavailable(format!("teacher emitted {:?}, declared width {}", feats.shape(), teacher.dim())));
        }
        for (row, &id) in ids.iter().enumerate() {
            let f: Vec<f32> = feats.row(row).iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
            cache.push(id, &f)?;
        }
    }
    Ok(cache)
}
