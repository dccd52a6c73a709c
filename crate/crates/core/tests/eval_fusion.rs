use proptest::prelude::*;

use vinescan_core::augment::{expected_count, generate, split_dataset, AugmentationGrid, Generated};
use vinescan_core::eval::{grapevine_level_report, leaf_level_report, ConfusionRow, MapPair};
use vinescan_core::fusion::{fuse_maps, symptom_mask, DiseaseLabel, DiseaseMap, FusionMode};
use vinescan_core::raster::{Mask, Raster};
use vinescan_core::segmap::{ClassLabel, ClassMap, Modality};

fn class_map(w: usize, h: usize, codes: &[u8]) -> ClassMap {
    ClassMap::from_codes(w, h, codes, Modality::Visible).unwrap()
}

fn maps() -> impl Strategy<Value = (usize, usize, Vec<u8>, Vec<u8>)> {
    (8usize..40, 8usize..40).prop_flat_map(|(w, h)| {
        (
            Just(w),
            Just(h),
            prop::collection::vec(0u8..4, w * h),
            prop::collection::vec(0u8..4, w * h),
        )
    })
}

fn majority(m: &ClassMap, x0: usize, y0: usize, n: usize) -> u8 {
    let mut counts = [0usize; 4];
    for y in y0..y0 + n {
        for x in x0..x0 + n {
            counts[m.get(x, y).code() as usize] += 1;
        }
    }
    let best = *counts.iter().max().unwrap();
    counts.iter().position(|&c| c == best).unwrap() as u8
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grapevine_counts_match_window_majorities((w, h, p, t) in maps()) {
        let pair: MapPair = (class_map(w, h, &p), class_map(w, h, &t));
        let rep = grapevine_level_report(std::slice::from_ref(&pair), 8, 8, FusionMode::Union).unwrap();
        let mut rows = [ConfusionRow::default(); 4];
        for y in (0..=h - 8).step_by(8) {
            for x in (0..=w - 8).step_by(8) {
                let (a, b) = (majority(&pair.0, x, y, 8), majority(&pair.1, x, y, 8));
                for (c, r) in rows.iter_mut().enumerate() {
                    let c = c as u8;
                    match (a == c, b == c) {
                        (true, true) => r.tp += 1,
                        (true, false) => r.fp += 1,
                        (false, true) => r.fn_ += 1,
                        (false, false) => r.tn += 1,
                    }
                }
            }
        }
        prop_assert_eq!(rep.units, ((w / 8) * (h / 8)) as u64);
        for (class, row) in rep.classes.iter().zip(rows) {
            prop_assert_eq!(class.confusion, row);
        }
    }

    #[test]
    fn leaf_counts_partition_the_pixels((w, h, p, t) in maps()) {
        let pair: MapPair = (class_map(w, h, &p), class_map(w, h, &t));
        let rep = leaf_level_report(std::slice::from_ref(&pair), FusionMode::Intersection).unwrap();
        let tp: u64 = rep.classes.iter().map(|c| c.confusion.tp).sum();
        let agree = p.iter().zip(&t).filter(|(a, b)| a == b).count() as u64;
        prop_assert_eq!(tp, agree);
        for c in &rep.classes {
            let r = c.confusion;
            prop_assert_eq!(r.tp + r.tn + r.fp + r.fn_, (w * h) as u64);
        }
        prop_assert_eq!(rep.accuracy.mean, Some(agree as f64 / (w * h) as f64));
    }

    #[test]
    fn fused_symptoms_follow_the_sources((w, h, v, i) in maps(), cut in any::<prop::sample::Index>()) {
        let (vm, im) = (class_map(w, h, &v), class_map(w, h, &i));
        let valid = Mask::new(w, h, (0..w * h).map(|k| k != cut.index(w * h)).collect());
        let d = fuse_maps(&vm, &im, Some(&valid)).unwrap();
        let and = symptom_mask(&d, FusionMode::Intersection);
        let or = symptom_mask(&d, FusionMode::Union);
        prop_assert!(and.is_subset_of(&or));
        for k in 0..w * h {
            let (x, y) = (k % w, k / w);
            let vs = vm.get(x, y) == ClassLabel::Symptom;
            let is = im.get(x, y) == ClassLabel::Symptom && valid.get(x, y);
            prop_assert_eq!(and.get(x, y), vs && is);
            prop_assert_eq!(or.get(x, y), vs || is);
        }
        let back = DiseaseMap::decode_png(&d.encode_png().unwrap()).unwrap();
        prop_assert_eq!(back.labels(), d.labels());
    }

    #[test]
    fn split_is_a_seeded_partition(n in 0usize..300, frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let items: Vec<usize> = (0..n).collect();
        let (a, b) = split_dataset(items.clone(), frac, seed);
        prop_assert_eq!(a.len(), (frac * n as f64 + 1e-9).floor() as usize);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, items.clone());
        prop_assert_eq!(split_dataset(items, frac, seed), (a, b));
    }
}

#[test]
fn invalid_pixels_take_the_visible_label() {
    let v = class_map(2, 1, &[ClassLabel::Healthy.code(), ClassLabel::Symptom.code()]);
    let i = class_map(2, 1, &[ClassLabel::Symptom.code(), ClassLabel::Symptom.code()]);
    let none = Mask::filled(2, 1, false);
    let d = fuse_maps(&v, &i, Some(&none)).unwrap();
    assert_eq!(d.labels(), &[DiseaseLabel::Healthy, DiseaseLabel::SymptomVisible]);
}

#[test]
fn default_grid_on_a_full_frame() {
    let g = AugmentationGrid::default();
    assert_eq!(expected_count(4608, 3456, &g).unwrap(), 28_350);
    assert!(expected_count(400, 300, &g).is_err());
}

#[test]
fn unrotated_unit_scale_patches_are_plain_crops() {
    let (w, h) = (100, 80);
    let frame = Raster::from_fn_gray(w, h, |x, y| (x * 2 + y) as u8);
    let codes: Vec<u8> = (0..w * h).map(|k| ((k % w) / 25) as u8).collect();
    let labels = class_map(w, h, &codes);
    let grid = AugmentationGrid {
        rotations: vec![0.0],
        scales: vec![1.0],
        brightness: vec![1.0],
        patch_w: 40,
        patch_h: 30,
        ..AugmentationGrid::default()
    };
    let mut n = 0;
    for item in generate(&frame, &labels, &grid, "f").unwrap() {
        let Generated::Patch(p) = item else { panic!("skipped an axis-aligned patch") };
        assert_eq!(p.image, frame.crop(p.provenance.x, p.provenance.y, 40, 30).unwrap());
        for v in 0..30 {
            for u in 0..40 {
                assert_eq!(p.labels.get(u, v), labels.get(p.provenance.x + u, p.provenance.y + v));
            }
        }
        n += 1;
    }
    assert_eq!(n, expected_count(w, h, &grid).unwrap());
}
