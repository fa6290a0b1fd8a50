use proptest::prelude::*;
use tracerseg::fusion::{extract_binary_mask, fuse_labels, FusionPolicy, Source};
use tracerseg::volume::{Geometry, LabelId, LabelSchema, LabelVolume, LESION};

const DIMS: [usize; 3] = [6, 5, 4];
const N: usize = 120;

/// (bone, organs, lesions) label vectors, each mostly background.
fn triple() -> impl Strategy<Value = (Vec<LabelId>, Vec<LabelId>, Vec<LabelId>)> {
    let sparse = |values: Vec<LabelId>| {
        prop::collection::vec(prop_oneof![3 => Just(0 as LabelId), 1 => prop::sample::select(values)], N)
    };
    (sparse(vec![1, 12]), sparse((2..=11).collect()), sparse(vec![1]))
}

fn precedence() -> impl Strategy<Value = Vec<Source>> {
    Just(Source::ALL.to_vec()).prop_shuffle()
}

fn vol(labels: Vec<LabelId>) -> LabelVolume {
    LabelVolume::new(Geometry::canonical(DIMS, [2.0; 3]).unwrap(), labels, LabelSchema::DEFAULT_ID).unwrap()
}

fn oracle(b: LabelId, o: LabelId, l: LabelId, order: &[Source]) -> LabelId {
    for s in order {
        match s {
            Source::Lesion if l != 0 => return LESION,
            Source::Organ if o != 0 => return o,
            Source::Bone if b != 0 => return 12,
            _ => {}
        }
    }
    0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn every_voxel_follows_declared_precedence((b, o, l) in triple(), order in precedence()) {
        let policy = FusionPolicy::default().with_precedence(order.clone()).unwrap();
        let fused = fuse_labels(&vol(b.clone()), &vol(o.clone()), &vol(l.clone()), &policy).unwrap();
        for i in 0..N {
            prop_assert_eq!(fused.labels()[i], oracle(b[i], o[i], l[i], &order), "voxel {}", i);
        }
    }

    #[test]
    fn foreground_is_union_of_inputs((b, o, l) in triple(), order in precedence()) {
        let policy = FusionPolicy::default().with_precedence(order).unwrap();
        let fused = fuse_labels(&vol(b.clone()), &vol(o.clone()), &vol(l.clone()), &policy).unwrap();
        for i in 0..N {
            prop_assert_eq!(fused.labels()[i] != 0, b[i] != 0 || o[i] != 0 || l[i] != 0);
        }
    }

    #[test]
    fn refusing_lesion_channel_is_idempotent((b, o, l) in triple()) {
        let policy = FusionPolicy::default();
        let (bv, ov) = (vol(b), vol(o));
        let fused = fuse_labels(&bv, &ov, &vol(l), &policy).unwrap();
        let lesion_again = extract_binary_mask(&fused, LESION, &policy.schema).unwrap();
        prop_assert_eq!(fuse_labels(&bv, &ov, &lesion_again, &policy).unwrap(), fused);
    }

    #[test]
    fn lesions_survive_default_fusion((b, o, l) in triple()) {
        let fused = fuse_labels(&vol(b), &vol(o), &vol(l.clone()), &FusionPolicy::default()).unwrap();
        for i in 0..N {
            if l[i] != 0 {
                prop_assert_eq!(fused.labels()[i], LESION);
            }
        }
    }
}
