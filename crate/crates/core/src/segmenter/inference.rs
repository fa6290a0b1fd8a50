use rayon::prelude::*;

use super::net::ToyUNet;
use super::patches::copy_window;
use crate::error::{Error, Result};
use crate::loss::ProbabilityField;
use crate::scalar::Scalar;
use crate::volume::{ImageVolume, LabelVolume};

pub const DEFAULT_OVERLAP: f64 = 0.5;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Tiles evaluated per model call.
const TILE_CHUNK: usize = 16;

/// Anything that maps a two-channel patch to per-voxel probabilities.
pub trait PatchModel<T: Scalar>: Sync {
    fn patch_size(&self) -> [usize; 3];

    fn predict_patch(&self, input: &[T]) -> Result<Vec<T>>;

    /// Evaluates `inputs` in order; implementations may run them
    /// concurrently but must return results in input order.
    fn predict_patches(&self, inputs: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        inputs.iter().map(|x| self.predict_patch(x)).collect()
    }
}

impl<T: Scalar> PatchModel<T> for ToyUNet<T> {
    fn patch_size(&self) -> [usize; 3] {
        self.config().patch_size
    }

    fn predict_patch(&self, input: &[T]) -> Result<Vec<T>> {
        self.forward(input, self.config().patch_size)
    }

    fn predict_patches(&self, inputs: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        inputs.par_iter().map(|x| self.predict_patch(x)).collect()
    }
}

/// Tile starts along one axis: stride `⌊p·(1-overlap)⌋` (at least 1), the
/// last tile flush with the far edge. A single tile at 0 when `n <= p`.
pub fn tile_starts(n: usize, p: usize, overlap: f64) -> Vec<usize> {
    if n <= p {
        return vec![0];
    }
    let step = ((p as f64 * (1.0 - overlap)).floor() as usize).max(1);
    let mut starts: Vec<usize> = (0..).map(|t| t * step).take_while(|&s| s + p < n).collect();
    starts.push(n - p);
    starts
}

pub struct SlidingWindowOutput<T> {
    pub probabilities: ProbabilityField<T>,
    /// Number of tiles covering each voxel.
    pub coverage: Vec<u32>,
}

pub fn predict_sliding_window<T: Scalar, M: PatchModel<T>>(
    model: &M,
    pet: &ImageVolume<T>,
    ct: &ImageVolume<T>,
    overlap: f64,
) -> Result<ProbabilityField<T>> {
    Ok(predict_with_coverage(model, pet, ct, overlap)?.probabilities)
}

/// Tiles the volume, averages overlapping predictions with uniform weights.
pub fn predict_with_coverage<T: Scalar, M: PatchModel<T>>(
    model: &M,
    pet: &ImageVolume<T>,
    ct: &ImageVolume<T>,
    overlap: f64,
) -> Result<SlidingWindowOutput<T>> {
    if pet.dims() != ct.dims() {
        return Err(Error::ShapeMismatch {
            expected: pet.dims().to_vec(),
            got: ct.dims().to_vec(),
        });
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidParameter(format!("overlap {overlap} outside [0, 1)")));
    }
    let dims = pet.dims();
    let patch = model.patch_size();
    let pv = patch.iter().product::<usize>();
    let axes = [0, 1, 2].map(|d| tile_starts(dims[d], patch[d], overlap));
    let mut tiles = Vec::new();
    for &z in &axes[2] {
        for &y in &axes[1] {
            for &x in &axes[0] {
                tiles.push([x, y, z]);
            }
        }
    }

    let nv = pet.geometry().voxel_count();
    let mut sum = vec![T::zero(); nv];
    let mut coverage = vec![0u32; nv];
    for chunk in tiles.chunks(TILE_CHUNK) {
        let inputs: Vec<Vec<T>> = chunk
            .iter()
            .map(|&start| {
                let mut img = vec![T::zero(); 2 * pv];
                copy_window(dims, start, patch, |src, dst| {
                    img[dst] = pet.voxels()[src];
                    img[pv + dst] = ct.voxels()[src];
                });
                img
            })
            .collect();
        let outputs = model.predict_patches(&inputs)?;
        for (&start, out) in chunk.iter().zip(&outputs) {
            if out.len() != pv {
                return Err(Error::ShapeMismatch {
                    expected: patch.to_vec(),
                    got: vec![out.len()],
                });
            }
            copy_window(dims, start, patch, |src, dst| {
                sum[src] += out[dst];
                coverage[src] += 1;
            });
        }
    }
    let probs = sum
        .iter()
        .zip(&coverage)
        .map(|(&s, &c)| s / T::of(c as f64))
        .collect();
    Ok(SlidingWindowOutput {
        probabilities: ProbabilityField::new(pet.geometry().clone(), probs)?,
        coverage,
    })
}

/// 1 where `p >= threshold`, else 0.
pub fn binarize<T: Scalar>(p: &ProbabilityField<T>, threshold: f64) -> Result<LabelVolume> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!("threshold {threshold} outside (0, 1)")));
    }
    let t = T::of(threshold);
    LabelVolume::mask_from_fn(p.geometry().clone(), |i| p.values()[i] >= t)
}
