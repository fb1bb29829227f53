mod common;

use matchforge::feature_head::{
    decode_heatmap, extract_keypoints, sample_descriptors, DenseDescriptorTensor, DetectionTensor, Heatmap,
    Keypoint, CELL, DETECTION_CHANNELS, DUSTBIN,
};
use matchforge::Error;
use proptest::prelude::*;
use rand::Rng;

fn random_logits(rows: usize, cols: usize, seed: u64) -> DetectionTensor {
    let mut rng = common::rng(seed);
    let data = (0..rows * cols * DETECTION_CHANNELS)
        .map(|_| rng.gen_range(-6.0f32..6.0))
        .collect();
    DetectionTensor::new(rows, cols, data).unwrap()
}

fn random_dense(rows: usize, cols: usize, dim: usize, seed: u64) -> DenseDescriptorTensor {
    let mut rng = common::rng(seed);
    let data = (0..rows * cols * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    DenseDescriptorTensor::new(rows, cols, dim, data).unwrap()
}

#[test]
fn decode_matches_softmax_oracle() {
    let t = random_logits(3, 4, 1);
    let h = decode_heatmap(&t).unwrap();
    assert_eq!((h.height(), h.width()), (24, 32));
    for r in 0..3 {
        for c in 0..4 {
            let want = common::oracle_softmax(t.cell(r, c));
            for k in 0..DUSTBIN {
                let got = h.get(r * CELL + k / CELL, c * CELL + k % CELL) as f64;
                assert!((got - want[k]).abs() < 1e-6);
            }
            assert!((h.dustbin()[r * 4 + c] as f64 - want[DUSTBIN]).abs() < 1e-6);
        }
    }
}

#[test]
fn full_resolution_shape_contract() {
    let h = decode_heatmap(&DetectionTensor::zeros_for_image(1024, 1024).unwrap()).unwrap();
    assert_eq!((h.height(), h.width()), (1024, 1024));
    assert_eq!(h.dustbin().len(), 128 * 128);
    assert!(DetectionTensor::zeros_for_image(1020, 1024).is_err());
}

#[test]
fn nan_logits_rejected() {
    let mut t = random_logits(1, 1, 3);
    t.cell_mut(0, 0)[5] = f32::NAN;
    assert!(matches!(decode_heatmap(&t), Err(Error::NonFinite(_))));
}

#[test]
fn sampling_matches_bicubic_oracle() {
    let mut rng = common::rng(11);
    for trial in 0..20 {
        let d = random_dense(4, 4, 8, 100 + trial);
        let kps: Vec<Keypoint> = (0..10)
            .map(|_| Keypoint::new(rng.gen_range(0.0..32.0), rng.gen_range(0.0..32.0), 1.0))
            .collect();
        let got = sample_descriptors(&d, &kps).unwrap();
        for (i, kp) in kps.iter().enumerate() {
            let want = common::oracle_bicubic(d.data(), 4, 4, 8, kp.x, kp.y);
            for k in 0..8 {
                assert!((got.row(i)[k] as f64 - want[k]).abs() <= 1e-5);
            }
        }
    }
}

#[test]
fn cell_centre_returns_normalized_cell() {
    let d = random_dense(3, 3, 5, 4);
    // grid point (1, 2) sits at pixel (8 * 1 + 3.5, 8 * 2 + 3.5)
    let got = sample_descriptors(&d, &[Keypoint::new(11.5, 19.5, 1.0)]).unwrap();
    let cell = d.cell(2, 1);
    let n = cell.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
    for k in 0..5 {
        assert!((got.row(0)[k] as f64 - cell[k] as f64 / n).abs() < 1e-6);
    }
}

#[test]
fn sampling_errors() {
    let d = random_dense(2, 2, 3, 9);
    let err = sample_descriptors(&d, &[Keypoint::new(16.0, 3.0, 1.0)]).unwrap_err();
    assert!(matches!(err, Error::OutOfFrame { index: 0, .. }));
    let zero = DenseDescriptorTensor::new(2, 2, 3, vec![0.0; 12]).unwrap();
    assert!(matches!(
        sample_descriptors(&zero, &[Keypoint::new(3.0, 3.0, 1.0)]),
        Err(Error::DegenerateDescriptor(0))
    ));
}

fn heatmap_strategy() -> impl Strategy<Value = (usize, usize, Vec<f32>)> {
    (1usize..24, 1usize..24).prop_flat_map(|(h, w)| {
        // a coarse value alphabet produces plenty of equal scores
        prop::collection::vec((0u8..8).prop_map(|v| v as f32 / 8.0), h * w).prop_map(move |d| (h, w, d))
    })
}

proptest! {
    #[test]
    fn conservation_and_argmax(seed in any::<u64>(), rows in 1usize..4, cols in 1usize..4) {
        let t = random_logits(rows, cols, seed);
        let h = decode_heatmap(&t).unwrap();
        for r in 0..rows {
            for c in 0..cols {
                let mut emitted = 0.0f64;
                let mut best_px = (0usize, 0usize, f32::MIN);
                for k in 0..DUSTBIN {
                    let p = h.get(r * CELL + k / CELL, c * CELL + k % CELL);
                    emitted += p as f64;
                    if p > best_px.2 {
                        best_px = (k, 0, p);
                    }
                }
                let dust = h.dustbin()[r * cols + c] as f64;
                prop_assert!(emitted <= 1.0 + 1e-6);
                prop_assert!((emitted + dust - 1.0).abs() <= 1e-5);
                let logits = &t.cell(r, c)[..DUSTBIN];
                let mut best_logit = 0;
                for k in 1..DUSTBIN {
                    if logits[k] > logits[best_logit] {
                        best_logit = k;
                    }
                }
                prop_assert_eq!(best_px.0, best_logit);
            }
        }
    }

    #[test]
    fn nms_matches_oracle((h, w, data) in heatmap_strategy(), thr in 0.0f64..0.9, k in 0usize..40, r in 0usize..4) {
        let hm = Heatmap::from_scores(h, w, data.clone()).unwrap();
        let got: Vec<(usize, usize, f32)> = extract_keypoints(&hm, thr, k, r)
            .iter()
            .map(|kp| (kp.y as usize, kp.x as usize, kp.score as f32))
            .collect();
        let want = common::oracle_nms(&data, w, thr, k, r);
        prop_assert_eq!(&got, &want);
        prop_assert!(got.len() <= k);
        for (i, a) in got.iter().enumerate() {
            prop_assert!(a.2 as f64 >= thr);
            for b in &got[i + 1..] {
                let cheb = (a.0 as i64 - b.0 as i64).abs().max((a.1 as i64 - b.1 as i64).abs());
                prop_assert!(cheb > r as i64);
            }
        }
    }

    #[test]
    fn sub_threshold_pixels_do_not_change_output(
        (h, w, data) in heatmap_strategy(),
        extra in prop::collection::vec((any::<prop::sample::Index>(), 0.0f32..0.25), 0..20),
    ) {
        let thr = 0.25;
        let base = Heatmap::from_scores(h, w, data.clone()).unwrap();
        let mut noisy = data.clone();
        for (idx, v) in extra {
            let i = idx.index(noisy.len());
            if noisy[i] < thr as f32 {
                noisy[i] = v;
            }
        }
        let noisy = Heatmap::from_scores(h, w, noisy).unwrap();
        prop_assert_eq!(extract_keypoints(&base, thr, 100, 2), extract_keypoints(&noisy, thr, 100, 2));
    }

    #[test]
    fn sampling_is_unit_norm_and_scale_free(seed in any::<u64>(), exp in -8i32..8, alpha in 0.01f32..100.0) {
        let d = random_dense(3, 5, 6, seed);
        let mut rng = common::rng(seed ^ 0x5a5a);
        let kps: Vec<Keypoint> = (0..8)
            .map(|_| Keypoint::new(rng.gen_range(0.0..40.0), rng.gen_range(0.0..24.0), 1.0))
            .collect();
        let base = sample_descriptors(&d, &kps).unwrap();
        for row in base.rows() {
            let n = row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-5);
        }
        // power-of-two factors are exact in floating point
        let pow2 = sample_descriptors(&d.scaled(2f32.powi(exp)), &kps).unwrap();
        prop_assert_eq!(&base, &pow2);
        let any = sample_descriptors(&d.scaled(alpha), &kps).unwrap();
        for (x, y) in base.data().iter().zip(any.data()) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }
}

#[test]
fn one_hot_logits_localize_exactly() {
    for k in 0..DUSTBIN {
        let mut t = DetectionTensor::zeros_for_image(16, 24).unwrap();
        t.cell_mut(1, 2)[k] = 20.0;
        let h = decode_heatmap(&t).unwrap();
        let kps = extract_keypoints(&h, 0.5, 10, 4);
        assert_eq!(kps.len(), 1);
        assert_eq!((kps[0].x, kps[0].y), ((2 * CELL + k % CELL) as f64, (CELL + k / CELL) as f64));
    }
}
