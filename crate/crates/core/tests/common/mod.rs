//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reggan::BinaryImage;

/// Breadth-first flood fill labeling. Ids are handed out in row-major order
/// of each component's first pixel. Returns (labels, sizes).
pub fn bfs_labels(bin: &BinaryImage) -> (Vec<u32>, Vec<usize>) {
    let (h, w) = (bin.height(), bin.width());
    let bits = bin.bits();
    let mut labels = vec![0u32; h * w];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if bits[start] == 0 || labels[start] != 0 {
            continue;
        }
        sizes.push(0usize);
        let id = sizes.len() as u32;
        labels[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            sizes[id as usize - 1] += 1;
            let (r, c) = (i / w, i % w);
            let mut visit = |j: usize| {
                if bits[j] == 1 && labels[j] == 0 {
                    labels[j] = id;
                    queue.push_back(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
    }
    (labels, sizes)
}

/// Score from the flood-fill oracle; None for blank images.
pub fn bfs_score(bin: &BinaryImage) -> Option<f64> {
    let (_, sizes) = bfs_labels(bin);
    let total: usize = sizes.iter().sum();
    (total > 0).then(|| *sizes.iter().max().unwrap() as f64 / total as f64)
}

pub fn random_binary(rng: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> BinaryImage {
    let bits = (0..h * w).map(|_| rng.random_bool(density) as u8).collect();
    BinaryImage::new(h, w, bits).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Filled disk of radius `r` centered at (cy, cx) drawn into `bits`.
pub fn draw_disk(bits: &mut [u8], h: usize, w: usize, cy: f64, cx: f64, r: f64) {
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            if dy * dy + dx * dx <= r * r {
                bits[y * w + x] = 1;
            }
        }
    }
}
