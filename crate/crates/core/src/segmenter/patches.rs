use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::{ImageVolume, LabelVolume};

/// Two-channel image patches with binary lesion labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch<T> {
    pub patch_size: [usize; 3],
    /// Per patch: PET voxels then CT voxels, x fastest.
    pub images: Vec<Vec<T>>,
    pub labels: Vec<Vec<T>>,
    /// Corner of each patch in source voxel coordinates.
    pub origins: Vec<[usize; 3]>,
    pub seed: u64,
}

impl<T> PatchBatch<T> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Number of patches that must contain foreground.
pub fn required_foreground(count: usize, fraction: f64) -> usize {
    ((fraction * count as f64).ceil() as usize).min(count)
}

/// Samples `count` patches. The first `⌈fraction·count⌉` are centred on
/// randomly chosen lesion voxels (when the mask has any); the rest are
/// uniform. Volumes smaller than the patch are zero-padded at the high end.
pub fn sample_patches<T: Scalar>(
    pet: &ImageVolume<T>,
    ct: &ImageVolume<T>,
    mask: &LabelVolume,
    patch: [usize; 3],
    foreground_fraction: f64,
    count: usize,
    seed: u64,
) -> Result<PatchBatch<T>> {
    let geom = pet.geometry();
    geom.ensure_same(ct.geometry(), "PET vs CT")?;
    geom.ensure_same(mask.geometry(), "PET vs lesion mask")?;
    if geom.voxel_count() == 0 {
        return Err(Error::EmptyVolume);
    }
    if patch.contains(&0) {
        return Err(Error::InvalidParameter("patch size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&foreground_fraction) {
        return Err(Error::InvalidParameter(format!("foreground fraction {foreground_fraction}")));
    }
    let dims = geom.dims;
    let padded = [0, 1, 2].map(|d| dims[d].max(patch[d]));
    let fg: Vec<usize> = mask
        .labels()
        .iter()
        .enumerate()
        .filter_map(|(i, &l)| (l != 0).then_some(i))
        .collect();
    let n_fg = if fg.is_empty() { 0 } else { required_foreground(count, foreground_fraction) };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = PatchBatch {
        patch_size: patch,
        images: Vec::with_capacity(count),
        labels: Vec::with_capacity(count),
        origins: Vec::with_capacity(count),
        seed,
    };
    for n in 0..count {
        let start = if n < n_fg {
            let v = geom.unravel(fg[rng.random_range(0..fg.len())]);
            [0, 1, 2].map(|d| {
                let lo = v[d].saturating_sub(patch[d] - 1);
                let hi = v[d].min(padded[d] - patch[d]);
                rng.random_range(lo..=hi)
            })
        } else {
            [0, 1, 2].map(|d| rng.random_range(0..=padded[d] - patch[d]))
        };
        let (img, lab) = extract(pet, ct, mask, start, patch);
        batch.images.push(img);
        batch.labels.push(lab);
        batch.origins.push(start);
    }
    Ok(batch)
}

/// Copies one patch; voxels outside the volume read as zero.
pub fn extract<T: Scalar>(
    pet: &ImageVolume<T>,
    ct: &ImageVolume<T>,
    mask: &LabelVolume,
    start: [usize; 3],
    patch: [usize; 3],
) -> (Vec<T>, Vec<T>) {
    let nv = patch[0] * patch[1] * patch[2];
    let mut img = vec![T::zero(); 2 * nv];
    let mut lab = vec![T::zero(); nv];
    copy_window(pet.geometry().dims, start, patch, |src, dst| {
        img[dst] = pet.voxels()[src];
        img[nv + dst] = ct.voxels()[src];
        lab[dst] = if mask.labels()[src] != 0 { T::one() } else { T::zero() };
    });
    (img, lab)
}

/// Visits in-volume voxels of the window as `(source index, patch index)`.
pub(crate) fn copy_window(dims: [usize; 3], start: [usize; 3], patch: [usize; 3], mut f: impl FnMut(usize, usize)) {
    for k in 0..patch[2] {
        let z = start[2] + k;
        if z >= dims[2] {
            break;
        }
        for j in 0..patch[1] {
            let y = start[1] + j;
            if y >= dims[1] {
                break;
            }
            for i in 0..patch[0] {
                let x = start[0] + i;
                if x >= dims[0] {
                    break;
                }
                f(x + dims[0] * (y + dims[1] * z), i + patch[0] * (j + patch[1] * k));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Geometry, Modality};

    fn case(dims: [usize; 3], lesion: &[[usize; 3]]) -> (ImageVolume<f64>, ImageVolume<f64>, LabelVolume) {
        let g = Geometry::canonical(dims, [2.0; 3]).unwrap();
        let pet = ImageVolume::from_fn(g.clone(), Modality::Pet, |i, j, k| (i + 10 * j + 100 * k) as f64).unwrap();
        let ct = ImageVolume::from_fn(g.clone(), Modality::Ct, |i, _, _| -(i as f64)).unwrap();
        let mut labels = vec![0; g.voxel_count()];
        for v in lesion {
            labels[g.linear_index(v[0], v[1], v[2])] = 1;
        }
        (pet, ct, LabelVolume::new(g, labels, "default").unwrap())
    }

    #[test]
    fn full_fraction_always_hits_single_voxel() {
        let (p, c, m) = case([20, 18, 16], &[[13, 4, 9]]);
        let b = sample_patches(&p, &c, &m, [8; 3], 1.0, 25, 5).unwrap();
        for (o, lab) in b.origins.iter().zip(&b.labels) {
            assert!((0..3).all(|d| o[d] <= [13, 4, 9][d] && [13, 4, 9][d] < o[d] + 8));
            assert_eq!(lab.iter().filter(|&&l| l == 1.0).count(), 1);
        }
    }

    #[test]
    fn half_fraction_counted() {
        let (p, c, m) = case([20, 20, 20], &[[2, 2, 2], [3, 2, 2], [17, 15, 3]]);
        let b = sample_patches(&p, &c, &m, [6; 3], 0.5, 10, 9).unwrap();
        let with_fg = b.labels.iter().filter(|l| l.contains(&1.0)).count();
        assert!(with_fg >= 5);
    }

    #[test]
    fn deterministic() {
        let (p, c, m) = case([12, 12, 12], &[[5, 5, 5]]);
        let a = sample_patches(&p, &c, &m, [4; 3], 0.3, 7, 1).unwrap();
        assert_eq!(a, sample_patches(&p, &c, &m, [4; 3], 0.3, 7, 1).unwrap());
    }

    #[test]
    fn contents_match_source() {
        let (p, c, m) = case([10, 9, 8], &[[1, 1, 1]]);
        let b = sample_patches(&p, &c, &m, [4, 3, 2], 0.0, 5, 2).unwrap();
        for (o, img) in b.origins.iter().zip(&b.images) {
            for k in 0..2 {
                for j in 0..3 {
                    for i in 0..4 {
                        let v = img[i + 4 * (j + 3 * k)];
                        assert_eq!(v, p.get(o[0] + i, o[1] + j, o[2] + k));
                        assert_eq!(img[24 + i + 4 * (j + 3 * k)], c.get(o[0] + i, o[1] + j, o[2] + k));
                    }
                }
            }
        }
    }

    #[test]
    fn small_volume_is_padded() {
        let (p, c, m) = case([3, 3, 3], &[[1, 1, 1]]);
        let b = sample_patches(&p, &c, &m, [4; 3], 1.0, 3, 0).unwrap();
        for (o, img) in b.origins.iter().zip(&b.images) {
            assert_eq!(*o, [0, 0, 0]);
            assert_eq!(img[3], 0.0);
            assert_eq!(img[2], 2.0);
        }
    }
}
