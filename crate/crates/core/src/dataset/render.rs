use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BlobConfig;
use crate::topology::GrayImage;

/// What went into one rendered image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderInfo {
    pub circles: usize,
    pub sigma: f64,
    pub dominant: bool,
}

/// Renders one blob image. Pure function of `(cfg, image_seed)`.
pub fn render_blob_image(cfg: &BlobConfig, image_seed: u64) -> GrayImage {
    render_with_info(cfg, image_seed).0
}

pub fn render_with_info(cfg: &BlobConfig, image_seed: u64) -> (GrayImage, RenderInfo) {
    render_inner(cfg, image_seed, None)
}

/// Stratified-mode proposal. `dominance` in `[0, 1]` steers each attempt:
/// the dominant-disk multiplier is drawn around `stratify_dominant_max *
/// dominance^1.5` and satellite radii shrink toward `radius_min` as
/// dominance grows.
pub fn render_stratified(cfg: &BlobConfig, image_seed: u64, dominance: f64) -> (GrayImage, RenderInfo) {
    render_inner(cfg, image_seed, Some(dominance.clamp(0.0, 1.0)))
}

fn render_inner(cfg: &BlobConfig, image_seed: u64, dominance: Option<f64>) -> (GrayImage, RenderInfo) {
    let mut rng = ChaCha8Rng::seed_from_u64(image_seed);
    let n = cfg.size;
    let circles = rng.random_range(cfg.circles_min..=cfg.circles_max);

    let (radius_max, dominant_scale) = match dominance {
        None => {
            let on = cfg.dominant_prob > 0.0 && rng.random_bool(cfg.dominant_prob);
            (cfg.radius_max, on.then_some(cfg.dominant_scale))
        }
        Some(level) => {
            let center = cfg.stratify_dominant_max * level.powf(1.5);
            let m = rng.random_range((center - 2.0).max(0.0)..center + 2.0);
            let span = (cfg.radius_max - cfg.radius_min) * (1.0 - level);
            let r_hi = cfg.radius_min + rng.random_range(0.0..=span);
            (r_hi, (m >= 1.5).then_some(m))
        }
    };

    let mut canvas = vec![0.0f64; n * n];
    for i in 0..circles {
        let cy = rng.random_range(0.0..n as f64);
        let cx = rng.random_range(0.0..n as f64);
        let mut radius = if radius_max > cfg.radius_min {
            rng.random_range(cfg.radius_min..=radius_max)
        } else {
            cfg.radius_min
        };
        if let (0, Some(scale)) = (i, dominant_scale) {
            radius *= scale;
        }
        fill_disk(&mut canvas, n, cy, cx, radius);
    }

    let sigma = if cfg.sigma_max > cfg.sigma_min {
        rng.random_range(cfg.sigma_min..=cfg.sigma_max)
    } else {
        cfg.sigma_min
    };
    let blurred = gaussian_blur(&canvas, n, n, sigma);
    let pixels = blurred.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect();
    let img = GrayImage::new(n, n, pixels).expect("clamped pixels of a square canvas");
    (
        img,
        RenderInfo {
            circles,
            sigma,
            dominant: dominant_scale.is_some(),
        },
    )
}

/// Sets every pixel whose center lies within `radius` of `(cy, cx)` to full ink.
fn fill_disk(canvas: &mut [f64], n: usize, cy: f64, cx: f64, radius: f64) {
    let r2 = radius * radius;
    let lo = |c: f64| (c - radius).floor().max(0.0) as usize;
    let hi = |c: f64| ((c + radius).ceil().max(0.0) as usize).min(n - 1);
    for y in lo(cy)..=hi(cy) {
        let dy = y as f64 - cy;
        for x in lo(cx)..=hi(cx) {
            let dx = x as f64 - cx;
            if dy * dy + dx * dx <= r2 {
                canvas[y * n + x] = 1.0;
            }
        }
    }
}

/// Normalized 1-D Gaussian taps for radius `ceil(3 sigma)`; `[1.0]` when sigma is 0.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(src: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    if kernel.len() == 1 {
        return src.to_vec();
    }
    let radius = (kernel.len() / 2) as i64;
    let clamp = |v: i64, len: usize| v.clamp(0, len as i64 - 1) as usize;

    let mut tmp = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, &t) in kernel.iter().enumerate() {
                let xx = clamp(x as i64 + k as i64 - radius, width);
                acc += t * src[y * width + xx];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, &t) in kernel.iter().enumerate() {
                let yy = clamp(y as i64 + k as i64 - radius, height);
                acc += t * tmp[yy * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}
