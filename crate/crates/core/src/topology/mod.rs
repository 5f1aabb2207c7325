//! Connected-component topology of thresholded gray images.
//!
//! An image is binarized at `alpha` (inclusive), split into 4-connected
//! components, and scored by the share of foreground mass held by its largest
//! component. A score of 1 means the foreground is a single component.

mod image;
mod union_find;

pub use image::{BinaryImage, GrayImage};
pub use union_find::UnionFind;

use thiserror::Error;

/// Number of score bins produced by [`score_label`].
pub const NUM_LABELS: usize = 11;

/// Label of the bin holding single-component (score ≥ 0.95) images.
pub const TOP_LABEL: u8 = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("thresholded image has no foreground pixels")]
    EmptyForeground,
    #[error("image shape {height}x{width} has a zero dimension")]
    EmptyShape { height: usize, width: usize },
    #[error("expected {expected} pixels, got {actual}")]
    PixelCount { expected: usize, actual: usize },
    #[error("pixel {index} has value {value} outside [0, 1]")]
    PixelRange { index: usize, value: f32 },
    #[error("threshold alpha must lie strictly inside (0, 1), got {0}")]
    InvalidAlpha(f32),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreConfig {
    alpha: f32,
}

impl ScoreConfig {
    pub const DEFAULT_ALPHA: f32 = 0.6;

    pub fn new(alpha: f32) -> Result<Self, TopologyError> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self { alpha })
        } else {
            Err(TopologyError::InvalidAlpha(alpha))
        }
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            alpha: Self::DEFAULT_ALPHA,
        }
    }
}

/// Per-pixel component ids (0 = background, 1..=K) and component sizes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    sizes: Vec<usize>,
}

impl LabelMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// `sizes()[k - 1]` is the pixel count of component `k`.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn component_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn foreground(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Id of the largest component; ties go to the smallest id.
    pub fn largest(&self) -> Option<u32> {
        let mut best: Option<(u32, usize)> = None;
        for (i, &s) in self.sizes.iter().enumerate() {
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((i as u32 + 1, s));
            }
        }
        best.map(|(id, _)| id)
    }

    pub fn largest_size(&self) -> usize {
        self.sizes.iter().copied().max().unwrap_or(0)
    }
}

/// Binarizes at `alpha`: a pixel is foreground iff its value is `>= alpha`.
pub fn threshold(img: &GrayImage, cfg: &ScoreConfig) -> BinaryImage {
    let bits = img
        .pixels()
        .iter()
        .map(|&p| (p >= cfg.alpha()) as u8)
        .collect();
    BinaryImage::new(img.height(), img.width(), bits).expect("shape carried over from a valid image")
}

/// 4-connected component labeling: two-pass raster scan over a union-find
/// forest. Component ids are assigned in row-major order of first pixel.
pub fn label_components(bin: &BinaryImage) -> LabelMap {
    let (h, w) = (bin.height(), bin.width());
    let bits = bin.bits();
    let mut provisional = vec![u32::MAX; h * w];
    let mut uf = UnionFind::with_capacity(h * w / 4 + 1);

    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if bits[i] == 0 {
                continue;
            }
            let up = (r > 0 && bits[i - w] == 1).then(|| provisional[i - w]);
            let left = (c > 0 && bits[i - 1] == 1).then(|| provisional[i - 1]);
            provisional[i] = match (up, left) {
                (None, None) => uf.make_set(),
                (Some(a), None) | (None, Some(a)) => a,
                (Some(a), Some(b)) => {
                    if a != b {
                        uf.union(a, b);
                    }
                    a.min(b)
                }
            };
        }
    }

    let mut compact = vec![0u32; uf.len()];
    let mut sizes = Vec::new();
    let mut labels = vec![0u32; h * w];
    for i in 0..h * w {
        if bits[i] == 0 {
            continue;
        }
        let root = uf.find(provisional[i]) as usize;
        if compact[root] == 0 {
            sizes.push(0);
            compact[root] = sizes.len() as u32;
        }
        let id = compact[root];
        labels[i] = id;
        sizes[id as usize - 1] += 1;
    }

    LabelMap {
        height: h,
        width: w,
        labels,
        sizes,
    }
}

/// Total ink: the sum of all pixel values.
pub fn mass(img: &GrayImage) -> f64 {
    img.pixels().iter().map(|&p| p as f64).sum()
}

/// Number of set bits of a binary image.
pub fn binary_mass(bin: &BinaryImage) -> f64 {
    bin.count_ones() as f64
}

/// Largest-component size and total foreground of the thresholded image.
fn largest_and_total(img: &GrayImage, cfg: &ScoreConfig) -> Result<(usize, usize), TopologyError> {
    let labels = label_components(&threshold(img, cfg));
    let total = labels.foreground();
    if total == 0 {
        return Err(TopologyError::EmptyForeground);
    }
    Ok((labels.largest_size(), total))
}

/// Share of thresholded foreground held by the largest component.
pub fn score(img: &GrayImage, cfg: &ScoreConfig) -> Result<f64, TopologyError> {
    let (largest, total) = largest_and_total(img, cfg)?;
    Ok(largest as f64 / total as f64)
}

/// [`score`] with a blank thresholded image mapped to 0.0.
pub fn score_or_zero(img: &GrayImage, cfg: &ScoreConfig) -> f64 {
    score(img, cfg).unwrap_or(0.0)
}

/// Bin of a real-valued score: `floor(10 s + 0.5)` clamped to `0..=10`.
pub fn label_for_score(s: f64) -> u8 {
    (10.0 * s + 0.5).floor().clamp(0.0, 10.0) as u8
}

/// Score bin computed in exact integer arithmetic from the component counts,
/// so scores sitting exactly on a half-step (e.g. 19/20) round up reliably.
pub fn score_label(img: &GrayImage, cfg: &ScoreConfig) -> Result<u8, TopologyError> {
    let (largest, total) = largest_and_total(img, cfg)?;
    Ok(label_from_counts(largest, total))
}

/// [`score_label`] with a blank image mapped to label 0 (score 0).
pub fn score_label_or_zero(img: &GrayImage, cfg: &ScoreConfig) -> u8 {
    score_label(img, cfg).unwrap_or(0)
}

/// `floor((20 l + t) / (2 t))`, i.e. half-up rounding of `10 l / t`.
pub fn label_from_counts(largest: usize, total: usize) -> u8 {
    assert!(total > 0 && largest <= total);
    let v = (20 * largest as u64 + total as u64) / (2 * total as u64);
    v.min(10) as u8
}

pub fn component_count(img: &GrayImage, cfg: &ScoreConfig) -> usize {
    label_components(&threshold(img, cfg)).component_count()
}

/// Gray levels given to non-largest components, cycled in id order.
pub const RECOLOR_PALETTE: [f32; 5] = [0.35, 0.45, 0.55, 0.65, 0.75];

/// Largest component drawn at 1.0, every other component at a palette gray,
/// background at 0.0.
pub fn recolor(img: &GrayImage, cfg: &ScoreConfig) -> Result<GrayImage, TopologyError> {
    let labels = label_components(&threshold(img, cfg));
    let largest = labels.largest().ok_or(TopologyError::EmptyForeground)?;
    let mut shade = vec![0.0f32; labels.component_count() + 1];
    let mut next = 0;
    for id in 1..=labels.component_count() as u32 {
        shade[id as usize] = if id == largest {
            1.0
        } else {
            let g = RECOLOR_PALETTE[next % RECOLOR_PALETTE.len()];
            next += 1;
            g
        };
    }
    let pixels = labels.labels().iter().map(|&l| shade[l as usize]).collect();
    GrayImage::new(img.height(), img.width(), pixels)
}
