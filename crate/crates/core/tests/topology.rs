mod common;

use common::{bfs_labels, bfs_score, draw_disk, random_binary, rng};
use proptest::prelude::*;
use reggan::topology::{
    self, component_count, label_components, score, threshold, BinaryImage, GrayImage,
    ScoreConfig,
};

#[test]
fn exhaustive_3x3_matches_flood_fill() {
    for mask in 0u32..512 {
        let bits = (0..9).map(|i| ((mask >> i) & 1) as u8).collect();
        let bin = BinaryImage::new(3, 3, bits).unwrap();
        let got = label_components(&bin);
        let (labels, sizes) = bfs_labels(&bin);
        assert_eq!(got.labels(), labels.as_slice(), "mask {mask:09b}");
        assert_eq!(got.sizes(), sizes.as_slice(), "mask {mask:09b}");
    }
}

#[test]
fn random_16x16_matches_flood_fill() {
    let mut r = rng(0x5eed);
    for i in 0..10_000 {
        let density = [0.3, 0.45, 0.55, 0.7][i % 4];
        let bin = random_binary(&mut r, 16, 16, density);
        let got = label_components(&bin);
        let (labels, sizes) = bfs_labels(&bin);
        assert_eq!(got.labels(), labels.as_slice());
        assert_eq!(got.sizes(), sizes.as_slice());
    }
}

#[test]
fn count_matches_oracle_on_random_batch() {
    let mut r = rng(11);
    let cfg = ScoreConfig::default();
    for _ in 0..500 {
        let bin = random_binary(&mut r, 16, 16, 0.5);
        assert_eq!(component_count(&bin.to_gray(), &cfg), bfs_labels(&bin).1.len());
    }
}

#[test]
fn approaching_disks_jump_from_half_to_one() {
    let (h, w) = (24, 48);
    let cfg = ScoreConfig::default();
    let mut seen_half = false;
    // Two radius-5 disks on one row; the gap closes one pixel at a time.
    for sep in (10..=24).rev() {
        let mut bits = vec![0u8; h * w];
        let cx = 24.0 - sep as f64 / 2.0;
        draw_disk(&mut bits, h, w, 12.0, cx, 5.0);
        draw_disk(&mut bits, h, w, 12.0, cx + sep as f64, 5.0);
        let bin = BinaryImage::new(h, w, bits).unwrap();
        let s = score(&bin.to_gray(), &cfg).unwrap();
        let k = label_components(&bin).component_count();
        if k == 2 {
            assert_eq!(s, 0.5, "separation {sep}");
            seen_half = true;
        } else {
            assert_eq!(k, 1);
            assert_eq!(s, 1.0, "separation {sep}");
        }
    }
    assert!(seen_half);
}

#[test]
fn score_is_one_iff_single_component() {
    let mut r = rng(99);
    let cfg = ScoreConfig::default();
    let mut ones = 0;
    for i in 0..1000 {
        let density = 0.55 + 0.4 * (i % 10) as f64 / 10.0;
        let bin = random_binary(&mut r, 8, 8, density);
        let Ok(s) = score(&bin.to_gray(), &cfg) else {
            continue;
        };
        let single = label_components(&bin).component_count() == 1;
        assert_eq!(s == 1.0, single);
        assert_eq!(Some(s), bfs_score(&bin));
        ones += single as usize;
    }
    assert!(ones > 50, "sample should include single-component images");
}

fn arb_binary(max: usize) -> impl Strategy<Value = BinaryImage> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(0u8..=1, h * w)
            .prop_map(move |bits| BinaryImage::new(h, w, bits).unwrap())
    })
}

fn arb_gray(max: usize) -> impl Strategy<Value = GrayImage> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f32..=1.0, h * w)
            .prop_map(move |px| GrayImage::new(h, w, px).unwrap())
    })
}

proptest! {
    #[test]
    fn score_and_count_survive_symmetries(img in arb_gray(12)) {
        let cfg = ScoreConfig::default();
        let s = topology::score_or_zero(&img, &cfg);
        let k = component_count(&img, &cfg);
        for t in [img.transposed(), img.flipped_horizontal(), img.flipped_vertical(), img.rotated_90()] {
            prop_assert_eq!(topology::score_or_zero(&t, &cfg), s);
            prop_assert_eq!(component_count(&t, &cfg), k);
        }
    }

    #[test]
    fn score_bounded_and_sizes_sum_to_mass(img in arb_gray(12)) {
        let cfg = ScoreConfig::default();
        let bin = threshold(&img, &cfg);
        let l = label_components(&bin);
        prop_assert_eq!(l.foreground() as f64, topology::binary_mass(&bin));
        if let Ok(s) = score(&img, &cfg) {
            prop_assert!((0.0..=1.0).contains(&s));
            let label = topology::score_label(&img, &cfg).unwrap();
            prop_assert!(label <= 10);
        }
    }

    #[test]
    fn labeling_matches_oracle(bin in arb_binary(10)) {
        let (labels, sizes) = bfs_labels(&bin);
        let l = label_components(&bin);
        prop_assert_eq!(l.labels(), labels.as_slice());
        prop_assert_eq!(l.sizes(), sizes.as_slice());
    }

    #[test]
    fn isolated_pixel_strictly_lowers_score(bin in arb_binary(8)) {
        prop_assume!(bin.count_ones() > 0);
        // Pad by two columns and drop a lone pixel in the far one.
        let (h, w) = (bin.height(), bin.width());
        let mut bits = vec![0u8; h * (w + 2)];
        for r in 0..h {
            for c in 0..w {
                bits[r * (w + 2) + c] = bin.bits()[r * w + c];
            }
        }
        let before = BinaryImage::new(h, w + 2, bits.clone()).unwrap();
        bits[w + 1] = 1;
        let after = BinaryImage::new(h, w + 2, bits).unwrap();
        let cfg = ScoreConfig::default();
        let s0 = score(&before.to_gray(), &cfg).unwrap();
        let s1 = score(&after.to_gray(), &cfg).unwrap();
        prop_assert!(s1 < s0);
    }
}

#[test]
fn symmetries_of_the_square_preserve_scores() {
    let mut r = rng(77);
    let cfg = ScoreConfig::default();
    for _ in 0..200 {
        let img = random_binary(&mut r, 7, 11, 0.5).to_gray();
        let base = label_components(&threshold(&img, &cfg));
        let mut seen = Vec::new();
        for k in 0..8 {
            let t = img.dihedral(k);
            let l = label_components(&threshold(&t, &cfg));
            assert_eq!(l.component_count(), base.component_count());
            assert_eq!(l.largest_size(), base.largest_size());
            assert_eq!(score(&t, &cfg).ok(), score(&img, &cfg).ok());
            seen.push(t);
        }
        assert_eq!(seen[0], img);
        assert_eq!((seen[1].height(), seen[1].width()), (11, 7));
    }
    let asym = GrayImage::new(2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.5]).unwrap();
    let distinct: std::collections::HashSet<(usize, Vec<u32>)> = (0..8)
        .map(|k| {
            let t = asym.dihedral(k);
            (t.height(), t.pixels().iter().map(|p| p.to_bits()).collect())
        })
        .collect();
    assert_eq!(distinct.len(), 8);
}
