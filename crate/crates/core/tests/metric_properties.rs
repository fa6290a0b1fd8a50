mod common;

use proptest::prelude::*;
use tracerseg::metrics::{connected_components, dice_score, fn_volume, fp_volume, Connectivity, EvalMode, EvalOptions};
use tracerseg::volume::{Geometry, LabelVolume, Orientation};

fn masks(dims: [usize; 3]) -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
    let n: usize = dims.iter().product();
    (prop::collection::vec(prop::bool::weighted(0.3), n), prop::collection::vec(prop::bool::weighted(0.3), n))
}

fn build(g: &Geometry, on: &[bool]) -> LabelVolume {
    LabelVolume::mask_from_fn(g.clone(), |i| on[i]).unwrap()
}

fn opts() -> impl Strategy<Value = EvalOptions> {
    (prop_oneof![Just(EvalMode::Component), Just(EvalMode::Voxelwise)], prop::sample::select(Connectivity::ALL.to_vec()))
        .prop_map(|(mode, connectivity)| EvalOptions { mode, connectivity })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn dice_symmetric((a, b) in masks([6, 5, 4])) {
        let g = Geometry::canonical([6, 5, 4], [2.0; 3]).unwrap();
        let (p, t) = (build(&g, &a), build(&g, &b));
        prop_assert_eq!(dice_score(&p, &t).unwrap(), dice_score(&t, &p).unwrap());
    }

    #[test]
    fn fp_is_swapped_fn((a, b) in masks([6, 5, 4]), o in opts()) {
        let g = Geometry::canonical([6, 5, 4], [1.5; 3]).unwrap();
        let (p, t) = (build(&g, &a), build(&g, &b));
        prop_assert_eq!(fp_volume(&p, &t, &o).unwrap(), fn_volume(&t, &p, &o).unwrap());
    }

    #[test]
    fn component_fp_bounded_by_voxelwise((a, b) in masks([6, 5, 4]), c in prop::sample::select(Connectivity::ALL.to_vec())) {
        let g = Geometry::canonical([6, 5, 4], [2.0; 3]).unwrap();
        let (p, t) = (build(&g, &a), build(&g, &b));
        let comp = fp_volume(&p, &t, &EvalOptions { mode: EvalMode::Component, connectivity: c }).unwrap();
        let vox = fp_volume(&p, &t, &EvalOptions { mode: EvalMode::Voxelwise, connectivity: c }).unwrap();
        prop_assert!(comp <= vox, "{comp} > {vox}");
    }

    #[test]
    fn invariant_under_joint_reorientation(
        (a, b) in masks([5, 4, 3]),
        o in prop::sample::select(Orientation::all()),
        opt in opts(),
    ) {
        let g = Geometry::new([5, 4, 3], [2.0; 3], [10.0, -3.0, 7.0], o).unwrap();
        let (p, t) = (build(&g, &a), build(&g, &b));
        let (pc, tc) = (p.reorient_to_canonical(), t.reorient_to_canonical());
        prop_assert_eq!(dice_score(&p, &t).unwrap(), dice_score(&pc, &tc).unwrap());
        prop_assert_eq!(fp_volume(&p, &t, &opt).unwrap(), fp_volume(&pc, &tc, &opt).unwrap());
        prop_assert_eq!(fn_volume(&p, &t, &opt).unwrap(), fn_volume(&pc, &tc, &opt).unwrap());
    }

    #[test]
    fn components_match_oracle((a, _) in masks([5, 5, 5]), c in prop::sample::select(Connectivity::ALL.to_vec())) {
        let g = Geometry::canonical([5, 5, 5], [1.0; 3]).unwrap();
        let m = build(&g, &a);
        let got: std::collections::BTreeSet<std::collections::BTreeSet<usize>> = connected_components(&m, c)
            .components
            .into_iter()
            .map(|v| v.into_iter().collect())
            .collect();
        prop_assert_eq!(got, common::components_oracle(&m, c as u8));
    }
}
