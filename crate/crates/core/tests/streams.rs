mod common;

use std::collections::BTreeSet;

use driftpatch::streams::{
    self, build_scenario, phase_map, phase_map_for, transform_flip, transform_rotate, LabeledImage,
    ScenarioKind, ScenarioSpec,
};
use proptest::prelude::*;

fn labels(chunk: &[LabeledImage]) -> BTreeSet<u32> {
    chunk.iter().map(|i| i.label).collect()
}

fn small(kind: ScenarioKind, seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        kind,
        init_count: 100,
        total: 1_100,
        chunks: 20,
        seed,
    }
}

#[test]
fn mnist_flip_chunk_arithmetic() {
    let spec = ScenarioSpec::mnist_flip(0);
    assert_eq!(spec.chunk_sizes(), vec![1000; 100]);
    assert_eq!(spec.chunk_of(70_000), Some(30));
}

#[test]
fn remainder_spreads_from_the_front() {
    let spec = ScenarioSpec {
        kind: ScenarioKind::Flip { cp: 20 },
        init_count: 10,
        total: 33,
        chunks: 5,
        seed: 0,
    };
    assert_eq!(spec.chunk_sizes(), vec![5, 5, 5, 4, 4]);
}

#[test]
fn flip_stream_is_flipped_after_the_change_point() {
    let ds = common::data::synthetic_dataset(3, 20, 4, 1);
    let spec = ScenarioSpec {
        kind: ScenarioKind::Flip { cp: 25 },
        init_count: 10,
        total: 40,
        chunks: 6,
        seed: 3,
    };
    let s = build_scenario(&ds, &spec).unwrap();
    assert_eq!(s.change_points, vec![3]);
    let flat: Vec<&LabeledImage> = s.init_set.iter().chain(s.chunks.iter().flatten()).collect();
    for (i, img) in flat.iter().enumerate() {
        let original = ds.contains(img);
        let flipped = ds.contains(&transform_flip(img));
        if i < 25 {
            assert!(original);
        } else {
            assert!(flipped);
        }
    }
}

#[test]
fn transfer_stream_separates_class_sets() {
    let ds = common::data::synthetic_dataset(6, 30, 3, 2);
    let spec = small(
        ScenarioKind::Transfer {
            first_classes: vec![0, 1, 2],
            second_classes: vec![3, 4, 5],
            cp: 600,
        },
        5,
    );
    let s = build_scenario(&ds, &spec).unwrap();
    assert_eq!(s.num_classes, 6);
    let flat: Vec<&LabeledImage> = s.init_set.iter().chain(s.chunks.iter().flatten()).collect();
    for (i, img) in flat.iter().enumerate() {
        if i < 600 {
            assert!(img.label < 3);
        } else {
            assert!(img.label >= 3);
        }
    }
}

#[test]
fn remap_keeps_labels_and_swaps_images() {
    let ds = common::data::synthetic_dataset(10, 20, 3, 3);
    let map: Vec<(u32, u32)> = (0..5).map(|c| (c, c + 5)).collect();
    let spec = small(
        ScenarioKind::Remap {
            label_map: map,
            cp: 600,
        },
        7,
    );
    let s = build_scenario(&ds, &spec).unwrap();
    assert_eq!(s.num_classes, 5);
    let flat: Vec<&LabeledImage> = s.init_set.iter().chain(s.chunks.iter().flatten()).collect();
    for (i, img) in flat.iter().enumerate() {
        assert!(img.label < 5);
        let source = ds.iter().find(|d| d.pixels == img.pixels).unwrap();
        if i < 600 {
            assert_eq!(source.label, img.label);
        } else {
            assert_eq!(source.label, img.label + 5);
        }
    }
}

#[test]
fn missing_class_is_a_construction_error() {
    let ds = common::data::synthetic_dataset(4, 10, 3, 3);
    let spec = small(
        ScenarioKind::Appear {
            initial_classes: vec![0, 7],
            cp: 600,
        },
        1,
    );
    assert!(build_scenario(&ds, &spec).is_err());
    let bad_cp = small(ScenarioKind::Flip { cp: 50 }, 1);
    assert!(build_scenario(&ds, &bad_cp).is_err());
}

#[test]
fn phase_map_examples() {
    let p = phase_map_for(100, &[30]).unwrap();
    assert_eq!(p.adaptation_range, 30..95);
    assert_eq!(p.finish_range, 95..100);
    let edge = phase_map_for(100, &[95]).unwrap();
    assert!(edge.adaptation_range.is_empty());
    assert_eq!(edge.finish_range, 95..100);
    assert!(phase_map_for(100, &[]).is_err());
    assert!(phase_map_for(5, &[1]).is_err());
}

#[test]
fn rotate_by_zero_and_half_turn() {
    let ds = common::data::synthetic_dataset(1, 3, 6, 9);
    for img in &ds {
        assert_eq!(&transform_rotate(img, 0.0), img);
        assert_eq!(transform_rotate(img, 180.0), transform_flip(img));
    }
}

#[test]
fn rotate_quarter_turn_moves_single_pixel() {
    let n = 8;
    for r in 0..n {
        for c in 0..n {
            let mut px = vec![0.0; n * n];
            px[r * n + c] = 1.0;
            let img = LabeledImage::new(n, n, px, 0);
            let out = transform_rotate(&img, 90.0);
            // Counter-clockwise quarter turn of a matrix: (r, c) -> (n-1-c, r).
            let want = (n - 1 - c) * n + r;
            let lit: Vec<usize> = (0..n * n).filter(|&i| out.pixels[i] == 1.0).collect();
            assert_eq!(lit, vec![want]);
        }
    }
}

#[test]
fn cache_round_trip_and_rejections() {
    let ds = common::data::synthetic_dataset(3, 20, 4, 4);
    let spec = small(
        ScenarioKind::Rotate {
            ramp_start: 300,
            ramp_end: 800,
            max_degrees: 90.0,
        },
        2,
    );
    let s = build_scenario(&ds, &spec).unwrap();
    let bytes = streams::encode_stream(&spec, &s).unwrap();
    let (spec2, s2) = streams::decode_stream(&bytes).unwrap();
    assert_eq!(spec2, spec);
    assert_eq!(s2.change_points, s.change_points);
    assert_eq!(s2.num_classes, s.num_classes);
    let a = s.init_set.iter().chain(s.chunks.iter().flatten());
    let b = s2.init_set.iter().chain(s2.chunks.iter().flatten());
    for (x, y) in a.zip(b) {
        assert_eq!(x.label, y.label);
        for (p, q) in x.pixels.iter().zip(&y.pixels) {
            assert!((p - q).abs() <= 1.0 / 255.0);
        }
    }
    let mut v = bytes.clone();
    v[4] = 9;
    assert!(streams::decode_stream(&v).is_err());
    assert!(streams::decode_stream(&bytes[..bytes.len() - 1]).is_err());
    assert_eq!(streams::encode_stream(&spec, &s).unwrap(), bytes);
}

#[test]
fn mnist_files_load_when_present() {
    let Some(root) = common::data::mnist_root() else {
        eprintln!("MNIST not found; set DRIFTPATCH_DATA to run this test");
        return;
    };
    let (train, test) = streams::load_mnist(&root).unwrap();
    assert_eq!(train.len(), 60_000);
    assert_eq!(test.len(), 10_000);
    assert!(train.iter().all(|i| i.rows == 28 && i.cols == 28 && i.label < 10));
    assert!(train[0].pixels.iter().all(|p| (0.0..=1.0).contains(p)));
}

fn arb_kind() -> impl Strategy<Value = ScenarioKind> {
    prop_oneof![
        (101usize..1_099).prop_map(|cp| ScenarioKind::Flip { cp }),
        (101usize..1_000, 0usize..100, 0.0f32..360.0).prop_map(|(s, w, m)| ScenarioKind::Rotate {
            ramp_start: s,
            ramp_end: s + w,
            max_degrees: m
        }),
        (prop::collection::btree_set(0u32..6, 1..5), 101usize..1_099).prop_map(|(c, cp)| {
            ScenarioKind::Appear {
                initial_classes: c.into_iter().collect(),
                cp,
            }
        }),
        (101usize..1_099).prop_map(|cp| ScenarioKind::Remap {
            label_map: vec![(0, 3), (1, 4), (2, 5)],
            cp
        }),
        (101usize..1_099).prop_map(|cp| ScenarioKind::Transfer {
            first_classes: vec![0, 2, 4],
            second_classes: vec![1, 3, 5],
            cp
        }),
        (101usize..1_000, 60usize..99).prop_map(|(a, gap)| ScenarioKind::Reoccur { cp1: a, cp2: a + gap }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn flip_is_an_involution(px in prop::collection::vec(0.0f32..=1.0, 12), label in 0u32..10) {
        let img = LabeledImage::new(3, 4, px, label);
        prop_assert_eq!(transform_flip(&transform_flip(&img)), img);
    }

    #[test]
    fn schedule_is_monotone(start in 0usize..1000, width in 0usize..1000, max in 0.0f32..360.0, a in 0usize..3000, b in 0usize..3000) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let end = start + width;
        prop_assert!(streams::rotation_schedule(start, end, max, lo) <= streams::rotation_schedule(start, end, max, hi));
    }

    #[test]
    fn streams_conserve_and_respect_contracts(kind in arb_kind(), chunks in 6usize..40, seed in any::<u64>()) {
        let ds = common::data::synthetic_dataset(6, 12, 3, 17);
        let spec = ScenarioSpec { kind: kind.clone(), init_count: 100, total: 1_100, chunks, seed };
        prop_assume!(spec.validate().is_ok());
        let s = build_scenario(&ds, &spec).unwrap();
        prop_assert_eq!(s.total(), spec.total);
        let sizes: Vec<usize> = s.chunks.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert!(s.change_points.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(s.change_points.iter().all(|&c| c < chunks));
        prop_assert_eq!(&build_scenario(&ds, &spec).unwrap(), &s);
        let pm = phase_map(&s).unwrap();
        prop_assert_eq!(pm.finish_range.len(), 5);
        match &kind {
            ScenarioKind::Appear { initial_classes, .. } => {
                let init: BTreeSet<u32> = initial_classes.iter().copied().collect();
                let cp_chunk = s.change_points[0];
                for c in 0..cp_chunk {
                    prop_assert!(labels(&s.chunks[c]).is_subset(&init));
                }
                prop_assert!(labels(&s.init_set).is_subset(&init));
            }
            ScenarioKind::Remap { .. } => {
                for c in &s.chunks {
                    prop_assert!(labels(c).is_subset(&[0, 1, 2].into_iter().collect()));
                }
            }
            _ => {}
        }
    }
}
