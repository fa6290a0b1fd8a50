//! Tracer-routed preprocessing: resampling to a uniform voxel grid followed by
//! z-score intensity normalization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::TracerClass;
use crate::error::{Error, Result};
use crate::reduce::pairwise_sum_by;
use crate::scalar::Scalar;
use crate::volume::{AxisMap, Geometry, ImageVolume, IntensityUnit, LabelVolume, Orientation};

/// Population standard deviations below this are treated as constant images.
pub const DEGENERATE_STD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Statistics over every voxel.
    Zscore,
    /// Statistics over voxels with nonzero intensity; applied to all voxels.
    ZscoreMasked,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessParams {
    pub tracer: TracerClass,
    #[serde(default = "default_spacing")]
    pub target_spacing: [f64; 3],
    #[serde(default = "default_interpolation")]
    pub image_interpolation: Interpolation,
    #[serde(default = "default_normalization")]
    pub normalization: Normalization,
    /// CT percentile window `(lo, hi)` applied before normalization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ct_clip_percentiles: Option<(f64, f64)>,
}

fn default_spacing() -> [f64; 3] {
    [2.0; 3]
}
fn default_interpolation() -> Interpolation {
    Interpolation::Trilinear
}
fn default_normalization() -> Normalization {
    Normalization::Zscore
}

impl PreprocessParams {
    pub fn for_tracer(tracer: TracerClass) -> Self {
        Self {
            tracer,
            target_spacing: default_spacing(),
            image_interpolation: default_interpolation(),
            normalization: default_normalization(),
            ct_clip_percentiles: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::InvalidSpacing(format!("target spacing {:?}", self.target_spacing)));
        }
        if let Some((lo, hi)) = self.ct_clip_percentiles {
            if !(0.0 <= lo && lo < hi && hi <= 100.0) {
                return Err(Error::InvalidParameter(format!("clip percentiles ({lo}, {hi})")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    pub degenerate: bool,
}

/// Grid covering the same world extent as `source` at `target_spacing`,
/// centered on the source extent. Returns the grid and the index map from
/// the new grid into `source`.
pub fn target_grid(source: &Geometry, target_spacing: [f64; 3]) -> Result<(Geometry, [AxisMap; 3])> {
    if target_spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::InvalidSpacing(format!("target spacing {target_spacing:?}")));
    }
    if !source.orientation.is_canonical() {
        return Err(Error::NotCanonical(source.orientation.to_string()));
    }
    let mut dims = [0usize; 3];
    let mut origin = source.origin;
    let mut maps = [AxisMap::default(); 3];
    for d in 0..3 {
        let n = source.dims[d];
        let (s, t) = (source.spacing[d], target_spacing[d]);
        if s == t {
            dims[d] = n;
            maps[d] = AxisMap {
                source_axis: d,
                scale: 1.0,
                offset: 0.0,
            };
            continue;
        }
        let m = ((n as f64 * s / t).round() as usize).max(1);
        let ratio = t / s;
        let offset = ((n - 1) as f64 - (m - 1) as f64 * ratio) / 2.0;
        dims[d] = m;
        origin[d] += offset * s;
        maps[d] = AxisMap {
            source_axis: d,
            scale: ratio,
            offset,
        };
    }
    let geometry = Geometry::new(dims, target_spacing, origin, Orientation::RAS)?;
    Ok((geometry, maps))
}

#[derive(Clone, Copy)]
struct Tap<T> {
    i0: usize,
    i1: usize,
    frac: T,
}

fn linear_taps<T: Scalar>(map: &AxisMap, n_out: usize, n_src: usize) -> Vec<Tap<T>> {
    (0..n_out)
        .map(|i| {
            let u = map.apply(i).clamp(0.0, (n_src - 1) as f64);
            let i0 = u.floor() as usize;
            Tap {
                i0,
                i1: (i0 + 1).min(n_src - 1),
                frac: T::of(u - i0 as f64),
            }
        })
        .collect()
}

fn nearest_taps(map: &AxisMap, n_out: usize, n_src: usize) -> Vec<usize> {
    (0..n_out)
        .map(|i| map.apply(i).round().clamp(0.0, (n_src - 1) as f64) as usize)
        .collect()
}

/// Source strides per output axis, following the index map's axis routing.
fn source_strides(src: &Geometry, maps: &[AxisMap; 3]) -> [usize; 3] {
    let strides = [1, src.dims[0], src.dims[0] * src.dims[1]];
    [0, 1, 2].map(|d| strides[maps[d].source_axis])
}

fn sample_values<T: Scalar>(
    src: &Geometry,
    values: &[T],
    out: &Geometry,
    maps: &[AxisMap; 3],
    interpolation: Interpolation,
) -> Vec<T> {
    let [nx, ny, nz] = out.dims;
    let stride = source_strides(src, maps);
    let n_src = [0, 1, 2].map(|d| src.dims[maps[d].source_axis]);
    let mut result = vec![T::zero(); out.voxel_count()];
    match interpolation {
        Interpolation::Nearest => {
            let t: Vec<Vec<usize>> = (0..3).map(|d| nearest_taps(&maps[d], out.dims[d], n_src[d])).collect();
            result.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slice)| {
                let bk = t[2][k] * stride[2];
                for j in 0..ny {
                    let bj = bk + t[1][j] * stride[1];
                    for i in 0..nx {
                        slice[i + nx * j] = values[bj + t[0][i] * stride[0]];
                    }
                }
            });
        }
        Interpolation::Trilinear => {
            let tx = linear_taps::<T>(&maps[0], nx, n_src[0]);
            let ty = linear_taps::<T>(&maps[1], ny, n_src[1]);
            let tz = linear_taps::<T>(&maps[2], nz, n_src[2]);
            let one = T::one();
            result.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slice)| {
                let z = tz[k];
                for (j, y) in ty.iter().enumerate() {
                    for (i, x) in tx.iter().enumerate() {
                        let at = |a: usize, b: usize, c: usize| values[a * stride[0] + b * stride[1] + c * stride[2]];
                        let c00 = at(x.i0, y.i0, z.i0) * (one - x.frac) + at(x.i1, y.i0, z.i0) * x.frac;
                        let c10 = at(x.i0, y.i1, z.i0) * (one - x.frac) + at(x.i1, y.i1, z.i0) * x.frac;
                        let c01 = at(x.i0, y.i0, z.i1) * (one - x.frac) + at(x.i1, y.i0, z.i1) * x.frac;
                        let c11 = at(x.i0, y.i1, z.i1) * (one - x.frac) + at(x.i1, y.i1, z.i1) * x.frac;
                        let c0 = c00 * (one - y.frac) + c10 * y.frac;
                        let c1 = c01 * (one - y.frac) + c11 * y.frac;
                        slice[i + nx * j] = c0 * (one - z.frac) + c1 * z.frac;
                    }
                }
            });
        }
    }
    result
}

/// Resamples a canonical volume to `target_spacing`. Output dims are
/// `round(n * spacing / target)` (at least 1) and the output grid is centered
/// on the input extent. Samples outside the source grid clamp to the edge.
pub fn resample<T: Scalar>(vol: &ImageVolume<T>, target_spacing: [f64; 3], interpolation: Interpolation) -> Result<ImageVolume<T>> {
    let (geometry, maps) = target_grid(vol.geometry(), target_spacing)?;
    if geometry == *vol.geometry() {
        return Ok(vol.clone());
    }
    let voxels = sample_values(vol.geometry(), vol.voxels(), &geometry, &maps, interpolation);
    ImageVolume::new(geometry, voxels, vol.modality(), vol.unit())
}

/// Resamples an image onto an arbitrary axis-aligned reference grid by world
/// coordinate.
pub fn resample_onto<T: Scalar>(vol: &ImageVolume<T>, reference: &Geometry, interpolation: Interpolation) -> Result<ImageVolume<T>> {
    reference.validate()?;
    if reference == vol.geometry() {
        return Ok(vol.clone());
    }
    let maps = reference.index_map_into(vol.geometry());
    let voxels = sample_values(vol.geometry(), vol.voxels(), reference, &maps, interpolation);
    ImageVolume::new(reference.clone(), voxels, vol.modality(), vol.unit())
}

/// Nearest-neighbor label resampling onto `reference`. Never introduces a
/// label that is absent from the input.
pub fn resample_labels(lv: &LabelVolume, reference: &Geometry) -> Result<LabelVolume> {
    reference
        .validate()
        .map_err(|e| Error::InvalidSpacing(e.to_string()))?;
    if reference == lv.geometry() {
        return Ok(lv.clone());
    }
    let maps = reference.index_map_into(lv.geometry());
    let labels = sample_values_labels(lv.geometry(), lv.labels(), reference, &maps);
    LabelVolume::new(reference.clone(), labels, lv.schema_id())
}

fn sample_values_labels(src: &Geometry, values: &[u16], out: &Geometry, maps: &[AxisMap; 3]) -> Vec<u16> {
    let [nx, ny, _] = out.dims;
    let stride = source_strides(src, maps);
    let n_src = [0, 1, 2].map(|d| src.dims[maps[d].source_axis]);
    let t: Vec<Vec<usize>> = (0..3).map(|d| nearest_taps(&maps[d], out.dims[d], n_src[d])).collect();
    let mut result = vec![0u16; out.voxel_count()];
    result.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slice)| {
        let bk = t[2][k] * stride[2];
        for j in 0..ny {
            let bj = bk + t[1][j] * stride[1];
            for i in 0..nx {
                slice[i + nx * j] = values[bj + t[0][i] * stride[0]];
            }
        }
    });
    result
}

fn stats_over<T: Scalar>(values: &[T], include: impl Fn(usize) -> bool + Copy) -> NormalizationStats {
    let count = (0..values.len()).filter(|&i| include(i)).count();
    if count == 0 {
        return NormalizationStats {
            mean: 0.0,
            std: 0.0,
            count: 0,
            degenerate: true,
        };
    }
    let n = T::of_usize(count);
    let pick = |i: usize| if include(i) { values[i] } else { T::zero() };
    let mean = pairwise_sum_by(values.len(), pick) / n;
    let var = pairwise_sum_by(values.len(), |i| {
        if include(i) {
            let d = values[i] - mean;
            d * d
        } else {
            T::zero()
        }
    }) / n;
    let std = var.sqrt().as_f64();
    NormalizationStats {
        mean: mean.as_f64(),
        std,
        count,
        degenerate: std < DEGENERATE_STD,
    }
}

fn apply_zscore<T: Scalar>(vol: &ImageVolume<T>, stats: &NormalizationStats) -> Result<ImageVolume<T>> {
    let voxels = if stats.degenerate {
        vec![T::zero(); vol.voxels().len()]
    } else {
        let mean = T::of(stats.mean);
        let std = T::of(stats.std);
        vol.voxels().iter().map(|&v| (v - mean) / std).collect()
    };
    vol.with_voxels(voxels, IntensityUnit::Normalized)
}

/// Population z-score. With a mask, statistics come from voxels where the
/// mask is nonzero; the transform is applied to every voxel. A standard
/// deviation below [`DEGENERATE_STD`] yields an all-zero output.
pub fn zscore_normalize<T: Scalar>(
    vol: &ImageVolume<T>,
    mask: Option<&LabelVolume>,
) -> Result<(ImageVolume<T>, NormalizationStats)> {
    let stats = match mask {
        Some(m) => {
            vol.geometry().ensure_same(m.geometry(), "z-score mask")?;
            let labels = m.labels();
            stats_over(vol.voxels(), |i| labels[i] != 0)
        }
        None => stats_over(vol.voxels(), |_| true),
    };
    Ok((apply_zscore(vol, &stats)?, stats))
}

/// Linear-interpolated percentile (`q` in `[0, 100]`) of `values`.
pub fn percentile<T: Scalar>(values: &[T], q: f64) -> T {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite voxels"));
    percentile_sorted(&sorted, q)
}

pub(crate) fn percentile_sorted<T: Scalar>(sorted: &[T], q: f64) -> T {
    if sorted.is_empty() {
        return T::zero();
    }
    let pos = q.clamp(0.0, 100.0) / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let f = T::of(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * f
}

fn normalize_channel<T: Scalar>(vol: &ImageVolume<T>, mode: Normalization) -> Result<(ImageVolume<T>, Option<NormalizationStats>)> {
    match mode {
        Normalization::None => Ok((vol.clone(), None)),
        Normalization::Zscore => {
            let (v, s) = zscore_normalize(vol, None)?;
            Ok((v, Some(s)))
        }
        Normalization::ZscoreMasked => {
            let values = vol.voxels();
            let stats = stats_over(values, |i| values[i] != T::zero());
            Ok((apply_zscore(vol, &stats)?, Some(stats)))
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreprocessedStudy<T> {
    pub pet: ImageVolume<T>,
    pub ct: ImageVolume<T>,
    pub pet_stats: Option<NormalizationStats>,
    pub ct_stats: Option<NormalizationStats>,
    /// CT window actually applied, in HU.
    pub ct_clip: Option<(f64, f64)>,
}

/// Resamples PET to the target grid, CT onto the resampled PET grid, then
/// normalizes each channel independently (CT optionally percentile-clipped
/// first).
pub fn preprocess_study<T: Scalar>(pet: &ImageVolume<T>, ct: &ImageVolume<T>, params: &PreprocessParams) -> Result<PreprocessedStudy<T>> {
    params.validate()?;
    for v in [pet, ct] {
        if !v.geometry().orientation.is_canonical() {
            return Err(Error::NotCanonical(v.geometry().orientation.to_string()));
        }
    }
    let pet_r = resample(pet, params.target_spacing, params.image_interpolation)?;
    let mut ct_r = resample_onto(ct, pet_r.geometry(), params.image_interpolation)?;
    let mut ct_clip = None;
    if let Some((lo, hi)) = params.ct_clip_percentiles {
        let mut sorted = ct_r.voxels().to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite voxels"));
        let (vlo, vhi) = (percentile_sorted(&sorted, lo), percentile_sorted(&sorted, hi));
        ct_r = ct_r.map(|v| v.max(vlo).min(vhi))?;
        ct_clip = Some((vlo.as_f64(), vhi.as_f64()));
    }
    let (pet_n, pet_stats) = normalize_channel(&pet_r, params.normalization)?;
    let (ct_n, ct_stats) = normalize_channel(&ct_r, params.normalization)?;
    Ok(PreprocessedStudy {
        pet: pet_n,
        ct: ct_n,
        pet_stats,
        ct_stats,
        ct_clip,
    })
}
