use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tracerseg::classifier::{classify_features, extract_features, fit_builtin, FeatureVector, FitConfig, LinearClassifierModel, TracerClass, TrainingMeta};
use tracerseg::mip::{coronal_mip, normalize_mip, MipImage};
use tracerseg::volume::{Geometry, ImageVolume, Modality};

fn volume(d: [usize; 3], values: &[f64]) -> ImageVolume<f64> {
    let g = Geometry::canonical(d, [2.0; 3]).unwrap();
    let n = g.voxel_count();
    ImageVolume::new(g, values[..n].to_vec(), Modality::Pet, Modality::Pet.native_unit()).unwrap()
}

fn vol_strategy() -> impl Strategy<Value = ([usize; 3], Vec<f64>)> {
    ([1usize..7, 1usize..7, 1usize..7], prop::collection::vec(-10.0f64..10.0, 216))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn mip_is_monotone((d, v) in vol_strategy(), bump_at in 0usize..216, bump in 0.0f64..5.0) {
        let a = volume(d, &v);
        let n = a.voxels().len();
        let mut w = a.voxels().to_vec();
        w[bump_at % n] += bump;
        let b = volume(d, &w);
        let (ma, mb) = (coronal_mip(&a, "a").unwrap(), coronal_mip(&b, "b").unwrap());
        for (x, y) in ma.pixels().iter().zip(mb.pixels()) {
            prop_assert!(y >= x);
        }
    }

    #[test]
    fn mip_commutes_with_increasing_affine_map((d, v) in vol_strategy()) {
        let a = volume(d, &v);
        let mapped = a.map(|x| 2.0 * x + 1.0).unwrap();
        let lhs = coronal_mip(&mapped, "m").unwrap();
        let rhs: Vec<f64> = coronal_mip(&a, "a").unwrap().pixels().iter().map(|x| 2.0 * x + 1.0).collect();
        prop_assert_eq!(lhs.pixels(), &rhs[..]);
    }

    #[test]
    fn normalized_mip_in_unit_range(h in 1usize..9, w in 1usize..9, px in prop::collection::vec(-1e6f64..1e6, 64)) {
        let m = MipImage::new(h, w, px[..h * w].to_vec(), "x").unwrap();
        let n = normalize_mip(&m);
        prop_assert!(n.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn pixel_shuffle_keeps_histogram_features(px in prop::collection::vec(0.0f64..=1.0, 64), seed in any::<u64>()) {
        let a = MipImage::new(8, 8, px.clone(), "a").unwrap();
        let mut shuffled = px;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let b = MipImage::new(8, 8, shuffled, "b").unwrap();
        let (fa, fb) = (extract_features(&a).unwrap(), extract_features(&b).unwrap());
        prop_assert_eq!(fa.percentiles(), fb.percentiles());
        prop_assert_eq!(fa.fractions(), fb.fractions());
    }

    #[test]
    fn decision_invariant_under_feature_rescaling(
        f in prop::collection::vec(-3.0f64..3.0, 11),
        w in prop::collection::vec(-2.0f64..2.0, 11),
        bias in -1.0f64..1.0,
        c in 0.01f64..100.0,
    ) {
        let meta = TrainingMeta { epochs: 0, learning_rate: 0.0, seed: 0, final_loss: 0.0, loss_history: vec![] };
        let m = LinearClassifierModel { weights: w.clone(), bias, meta: meta.clone() };
        let scaled = LinearClassifierModel { weights: w.iter().map(|x| x / c).collect(), bias, meta };
        let z: f64 = f.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + bias;
        prop_assume!(z.abs() > 1e-9);
        let a = classify_features(&FeatureVector(f.clone()), &m).unwrap().tracer;
        let b = classify_features(&FeatureVector(f.iter().map(|x| x * c).collect()), &scaled).unwrap().tracer;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn full_batch_loss_never_increases(
        rows in prop::collection::vec((prop::collection::vec(-2.0f64..2.0, 4), any::<bool>()), 4..24),
        seed in any::<u64>(),
    ) {
        prop_assume!(rows.iter().any(|r| r.1) && rows.iter().any(|r| !r.1));
        let samples: Vec<(FeatureVector<f64>, TracerClass)> = rows
            .into_iter()
            .map(|(f, psma)| (FeatureVector(f), if psma { TracerClass::Psma } else { TracerClass::Fdg }))
            .collect();
        let model = fit_builtin(&samples, &FitConfig { learning_rate: 0.5, epochs: 60, seed }).unwrap();
        for pair in model.meta.loss_history.windows(2) {
            prop_assert!(pair[1] <= pair[0], "{} -> {}", pair[0], pair[1]);
        }
    }
}
