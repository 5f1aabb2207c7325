//! Synthetic blob dataset: blurred random disks filtered to a component-count
//! window, plus its on-disk formats.

pub mod pgm;
mod render;
mod store;

pub use render::{
    gaussian_blur, gaussian_kernel, render_blob_image, render_stratified, render_with_info, RenderInfo,
};
pub use store::{
    decode_manifest, decode_pixels, encode_manifest, encode_pixels, load_dataset, load_dataset_with,
    save_dataset, write_manifest, DATA_FILE, MANIFEST_FILE, MANIFEST_HEADER,
};

use rayon::prelude::*;
use thiserror::Error;

use crate::topology::{self, GrayImage, ScoreConfig, NUM_LABELS};

/// Consecutive rejections for one slot after which generation gives up.
pub const MAX_REJECTIONS: u32 = 1000;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid blob config: {0}")]
    InvalidConfig(String),
    #[error("slot {index}: {rejections} consecutive rejections (target label {target:?})")]
    GenerationStall {
        index: usize,
        rejections: u32,
        target: Option<u8>,
    },
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("manifest row {index}: stored {field} {stored} != recomputed {recomputed}")]
    ManifestMismatch {
        index: usize,
        field: &'static str,
        stored: String,
        recomputed: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DatasetError {
    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        DatasetError::Format {
            offset,
            message: message.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlobConfig {
    pub count: usize,
    pub size: usize,
    pub min_components: usize,
    pub max_components: usize,
    pub circles_min: usize,
    pub circles_max: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Probability that the first circle of an image is drawn enlarged.
    pub dominant_prob: f64,
    pub dominant_scale: f64,
    /// Upper dominant-disk multiplier used by stratified proposals.
    pub stratify_dominant_max: f64,
    pub master_seed: u64,
    pub stratify_labels: bool,
    pub alpha: f32,
}

impl Default for BlobConfig {
    fn default() -> Self {
        Self {
            count: 10_000,
            size: 64,
            min_components: 8,
            max_components: 20,
            circles_min: 8,
            circles_max: 20,
            radius_min: 2.0,
            radius_max: 7.0,
            sigma_min: 0.5,
            sigma_max: 1.5,
            dominant_prob: 0.2,
            dominant_scale: 3.0,
            stratify_dominant_max: 12.0,
            master_seed: 0,
            stratify_labels: false,
            alpha: ScoreConfig::DEFAULT_ALPHA,
        }
    }
}

impl BlobConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let fail = |m: &str| Err(DatasetError::InvalidConfig(m.to_string()));
        if self.size == 0 {
            return fail("size must be positive");
        }
        if self.min_components > self.max_components {
            return fail("min_components > max_components");
        }
        if self.circles_min > self.circles_max {
            return fail("circles_min > circles_max");
        }
        if self.circles_min < self.min_components {
            return fail("circles_min < min_components");
        }
        if !(self.radius_min > 0.0 && self.radius_max >= self.radius_min) {
            return fail("need 0 < radius_min <= radius_max");
        }
        if !(self.sigma_min >= 0.0 && self.sigma_max >= self.sigma_min) {
            return fail("need 0 <= sigma_min <= sigma_max");
        }
        if !(0.0..=1.0).contains(&self.dominant_prob) || self.dominant_scale <= 0.0 {
            return fail("dominant_prob must be in [0,1] and dominant_scale positive");
        }
        if self.stratify_dominant_max < 0.0 {
            return fail("stratify_dominant_max must be non-negative");
        }
        ScoreConfig::new(self.alpha).map_err(|e| DatasetError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    pub fn score_config(&self) -> ScoreConfig {
        ScoreConfig::new(self.alpha).expect("validated alpha")
    }

    /// Labels reachable inside the component window. With at most `K`
    /// components the score is at least `1/K`, which rules out the low bins.
    pub fn feasible_labels(&self) -> std::ops::RangeInclusive<u8> {
        let lo = if self.max_components == 0 {
            0
        } else {
            topology::label_from_counts(1, self.max_components)
        };
        lo..=topology::TOP_LABEL
    }
}

/// One manifest row.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub index: usize,
    pub seed: u64,
    pub circles: usize,
    pub sigma: f64,
    pub score: f64,
    pub label: u8,
    pub components: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
}

impl DatasetManifest {
    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn label_histogram(&self) -> [usize; NUM_LABELS] {
        let mut h = [0; NUM_LABELS];
        for r in &self.records {
            h[r.label as usize] += 1;
        }
        h
    }
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub images: Vec<GrayImage>,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-image seed, a pure function of its slot and attempt number.
pub fn derive_seed(master_seed: u64, index: u64, attempt: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master_seed) ^ index) ^ attempt.rotate_left(32))
}

/// Target label of a slot in stratified mode: slots cycle over the feasible bins.
pub fn stratum_for(cfg: &BlobConfig, index: usize) -> u8 {
    let bins = cfg.feasible_labels();
    let (lo, hi) = (*bins.start(), *bins.end());
    lo + (index % (hi - lo + 1) as usize) as u8
}

/// Position of `label` within the feasible bins, scaled to `[0, 1]`.
pub fn dominance_for(cfg: &BlobConfig, label: u8) -> f64 {
    let bins = cfg.feasible_labels();
    let (lo, hi) = (*bins.start() as f64, *bins.end() as f64);
    if hi > lo {
        ((label as f64 - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

/// Re-renders a stored image from its manifest seed.
pub fn rerender(cfg: &BlobConfig, record: &ImageRecord) -> GrayImage {
    if cfg.stratify_labels {
        let t = stratum_for(cfg, record.index);
        render_stratified(cfg, record.seed, dominance_for(cfg, t)).0
    } else {
        render_with_info(cfg, record.seed).0
    }
}

/// Rejection-samples the image for slot `index`. In stratified mode the slot
/// targets one label bin and only images in that bin are accepted.
pub fn generate_slot(cfg: &BlobConfig, index: usize) -> Result<(GrayImage, ImageRecord), DatasetError> {
    let score_cfg = cfg.score_config();
    let target = cfg.stratify_labels.then(|| stratum_for(cfg, index));
    let mut attempt = 0u64;
    loop {
        let seed = derive_seed(cfg.master_seed, index as u64, attempt);
        let (img, info) = match target {
            Some(t) => render_stratified(cfg, seed, dominance_for(cfg, t)),
            None => render_with_info(cfg, seed),
        };
        let labels = topology::label_components(&topology::threshold(&img, &score_cfg));
        let components = labels.component_count();
        if (cfg.min_components..=cfg.max_components).contains(&components) && components > 0 {
            let largest = labels.largest_size();
            let total = labels.foreground();
            let label = topology::label_from_counts(largest, total);
            if target.is_none_or(|t| t == label) {
                let record = ImageRecord {
                    index,
                    seed,
                    circles: info.circles,
                    sigma: info.sigma,
                    score: largest as f64 / total as f64,
                    label,
                    components,
                };
                return Ok((img, record));
            }
        }
        attempt += 1;
        if attempt > MAX_REJECTIONS as u64 {
            return Err(DatasetError::GenerationStall {
                index,
                rejections: attempt as u32,
                target,
            });
        }
    }
}

/// Generates `cfg.count` images on the current rayon pool. Output is
/// independent of the pool size.
pub fn generate_dataset(cfg: &BlobConfig) -> Result<Dataset, DatasetError> {
    cfg.validate()?;
    let slots: Vec<(GrayImage, ImageRecord)> = (0..cfg.count)
        .into_par_iter()
        .map(|i| generate_slot(cfg, i))
        .collect::<Result<_, _>>()?;
    let (images, records) = slots.into_iter().unzip();
    Ok(Dataset {
        images,
        manifest: DatasetManifest { records },
    })
}
