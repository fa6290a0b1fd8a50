//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tracerseg::classifier::{extract_features, fit_builtin, FitConfig, LinearClassifierModel};
use tracerseg::mip::{classifier_input, DEFAULT_MIP_SIZE};
use tracerseg::pipeline::phantom::{generate_phantom, write_suite, SuiteSpec};
use tracerseg::pipeline::StudyManifest;
use tracerseg::volume::{Geometry, LabelVolume};
use tracerseg::Real;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mask(rng: &mut ChaCha8Rng, dims: [usize; 3], density: f64, spacing: [f64; 3]) -> LabelVolume {
    let g = Geometry::canonical(dims, spacing).unwrap();
    let n = g.voxel_count();
    let on: Vec<bool> = (0..n).map(|_| rng.random_bool(density)).collect();
    LabelVolume::mask_from_fn(g, |i| on[i]).unwrap()
}

fn coords(i: usize, dims: [usize; 3]) -> [i64; 3] {
    [(i % dims[0]) as i64, ((i / dims[0]) % dims[1]) as i64, (i / (dims[0] * dims[1])) as i64]
}

/// Neighbourhood by coordinate distance: Chebyshev 1 and at most `k`
/// differing axes (1, 2, 3 for 6, 18, 26).
fn adjacent(a: [i64; 3], b: [i64; 3], connectivity: u8) -> bool {
    let k = match connectivity {
        6 => 1,
        18 => 2,
        26 => 3,
        _ => panic!("connectivity"),
    };
    let d: Vec<i64> = (0..3).map(|t| (a[t] - b[t]).abs()).collect();
    d.iter().all(|&x| x <= 1) && d.iter().filter(|&&x| x == 1).count() as i64 <= k && d.contains(&1)
}

/// Components by minimum-label propagation over all foreground pairs.
pub fn components_oracle(mask: &LabelVolume, connectivity: u8) -> BTreeSet<BTreeSet<usize>> {
    let dims = mask.dims();
    let fg: Vec<usize> = (0..mask.labels().len()).filter(|&i| mask.labels()[i] != 0).collect();
    let pos: Vec<[i64; 3]> = fg.iter().map(|&i| coords(i, dims)).collect();
    let neighbours: Vec<Vec<usize>> = (0..fg.len())
        .map(|a| (0..fg.len()).filter(|&b| adjacent(pos[a], pos[b], connectivity)).collect())
        .collect();
    let mut label: Vec<usize> = (0..fg.len()).collect();
    loop {
        let mut changed = false;
        for a in 0..fg.len() {
            for &b in &neighbours[a] {
                if label[b] < label[a] {
                    label[a] = label[b];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (a, &l) in label.iter().enumerate() {
        groups.entry(l).or_default().insert(fg[a]);
    }
    groups.into_values().collect()
}

pub fn set_of(mask: &LabelVolume) -> HashSet<usize> {
    (0..mask.labels().len()).filter(|&i| mask.labels()[i] != 0).collect()
}

pub fn dice_oracle(p: &LabelVolume, g: &LabelVolume) -> f64 {
    let (a, b) = (set_of(p), set_of(g));
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * a.intersection(&b).count() as f64 / (a.len() + b.len()) as f64
}

/// False volume in mL of `a` relative to `b`.
pub fn false_volume_oracle(a: &LabelVolume, b: &LabelVolume, component: bool, connectivity: u8) -> f64 {
    let bs = set_of(b);
    let voxels = if component {
        components_oracle(a, connectivity)
            .into_iter()
            .filter(|c| c.iter().all(|v| !bs.contains(v)))
            .map(|c| c.len())
            .sum()
    } else {
        set_of(a).difference(&bs).count()
    };
    voxels as f64 * a.voxel_volume_ml()
}

/// Builtin classifier fitted on `n` FDG-like and `n` PSMA-like phantoms.
pub fn fit_phantom_classifier(n: usize, seed: u64) -> LinearClassifierModel<Real> {
    let samples: Vec<_> = SuiteSpec::default()
        .suite(n, n, seed)
        .unwrap()
        .iter()
        .map(|spec| {
            let p = generate_phantom::<Real>(spec).unwrap();
            let mip = classifier_input(&p.pet, "train", DEFAULT_MIP_SIZE).unwrap();
            (extract_features(&mip).unwrap(), spec.tracer)
        })
        .collect();
    fit_builtin(&samples, &FitConfig { seed, ..FitConfig::default() }).unwrap()
}

/// Writes a 4 + 4 phantom suite under `dir`.
pub fn write_phantom_suite(dir: &Path, seed: u64) -> StudyManifest {
    let specs = SuiteSpec::default().suite(4, 4, seed).unwrap();
    write_suite(&specs, dir, "case").unwrap()
}
