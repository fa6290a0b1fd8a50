use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::geometry::{reorient_data, Geometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Pet,
    Ct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityUnit {
    Suv,
    Hu,
    Normalized,
}

impl Modality {
    pub fn native_unit(self) -> IntensityUnit {
        match self {
            Modality::Pet => IntensityUnit::Suv,
            Modality::Ct => IntensityUnit::Hu,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Pet => "PET",
            Modality::Ct => "CT",
        }
    }
}

impl IntensityUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            IntensityUnit::Suv => "SUV",
            IntensityUnit::Hu => "HU",
            IntensityUnit::Normalized => "normalized",
        }
    }
}

/// Scalar intensity grid (PET or CT) with physical geometry.
///
/// Immutable once built: every constructor checks that the voxel count
/// matches the dims and that all intensities are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageVolume<T> {
    geometry: Geometry,
    voxels: Vec<T>,
    modality: Modality,
    unit: IntensityUnit,
}

impl<T: Scalar> ImageVolume<T> {
    pub fn new(geometry: Geometry, voxels: Vec<T>, modality: Modality, unit: IntensityUnit) -> Result<Self> {
        geometry.validate()?;
        if voxels.len() != geometry.voxel_count() {
            return Err(Error::ShapeMismatch {
                expected: geometry.dims.to_vec(),
                got: vec![voxels.len()],
            });
        }
        let bad = voxels.iter().filter(|v| !v.is_finite()).count();
        if bad > 0 {
            return Err(Error::NonFiniteVoxels { count: bad });
        }
        Ok(Self {
            geometry,
            voxels,
            modality,
            unit,
        })
    }

    pub fn filled(geometry: Geometry, value: T, modality: Modality) -> Result<Self> {
        let n = geometry.voxel_count();
        Self::new(geometry, vec![value; n], modality, modality.native_unit())
    }

    /// Builds a volume by evaluating `f(i, j, k)` in x-fastest order.
    pub fn from_fn(geometry: Geometry, modality: Modality, mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self> {
        let [nx, ny, nz] = geometry.dims;
        let mut voxels = Vec::with_capacity(geometry.voxel_count());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    voxels.push(f(i, j, k));
                }
            }
        }
        Self::new(geometry, voxels, modality, modality.native_unit())
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn voxels(&self) -> &[T] {
        &self.voxels
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn unit(&self) -> IntensityUnit {
        self.unit
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.voxels[self.geometry.linear_index(i, j, k)]
    }

    pub fn into_voxels(self) -> Vec<T> {
        self.voxels
    }

    /// Same geometry and modality, new intensities.
    pub fn with_voxels(&self, voxels: Vec<T>, unit: IntensityUnit) -> Result<Self> {
        Self::new(self.geometry.clone(), voxels, self.modality, unit)
    }

    pub fn with_modality(mut self, modality: Modality, unit: IntensityUnit) -> Self {
        self.modality = modality;
        self.unit = unit;
        self
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        self.with_voxels(self.voxels.iter().map(|&v| f(v)).collect(), self.unit)
    }

    pub fn cast<U: Scalar>(&self) -> ImageVolume<U> {
        ImageVolume {
            geometry: self.geometry.clone(),
            voxels: self.voxels.iter().map(|v| U::of(v.as_f64())).collect(),
            modality: self.modality,
            unit: self.unit,
        }
    }

    pub fn voxel_volume_ml(&self) -> f64 {
        self.geometry.voxel_volume_ml()
    }

    /// Rearranges voxels so the volume is in RAS orientation. World
    /// positions of all voxel centers are unchanged.
    pub fn reorient_to_canonical(&self) -> Self {
        let (geometry, voxels) = reorient_data(&self.geometry, &self.voxels);
        Self {
            geometry,
            voxels,
            modality: self.modality,
            unit: self.unit,
        }
    }
}

pub fn reorient_to_canonical<T: Scalar>(vol: &ImageVolume<T>) -> ImageVolume<T> {
    vol.reorient_to_canonical()
}

pub fn voxel_volume_ml<T: Scalar>(vol: &ImageVolume<T>) -> f64 {
    vol.voxel_volume_ml()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::geometry::Orientation;

    fn ramp(geometry: Geometry) -> ImageVolume<f64> {
        ImageVolume::from_fn(geometry, Modality::Pet, |i, j, k| (i + 10 * j + 100 * k) as f64).unwrap()
    }

    /// World coordinate -> intensity for every voxel center, sorted.
    fn world_table(v: &ImageVolume<f64>) -> Vec<([i64; 3], f64)> {
        let g = v.geometry();
        let mut out: Vec<_> = (0..g.voxel_count())
            .map(|idx| {
                let [i, j, k] = g.unravel(idx);
                let w = g.index_to_world([i as f64, j as f64, k as f64]);
                // spacings in these tests are dyadic, so rounding to 1e-6 mm is exact
                let key = [
                    (w[0] * 1e6).round() as i64,
                    (w[1] * 1e6).round() as i64,
                    (w[2] * 1e6).round() as i64,
                ];
                (key, v.voxels()[idx])
            })
            .collect();
        out.sort_by_key(|a| a.0);
        out
    }

    #[test]
    fn canonical_is_identity() {
        let v = ramp(Geometry::canonical([3, 4, 5], [1.0, 2.0, 3.0]).unwrap());
        assert_eq!(v.reorient_to_canonical(), v);
    }

    #[test]
    fn flip_on_first_axis() {
        let g = Geometry::new([4, 3, 2], [2.0, 1.0, 1.0], [5.0, 0.0, 0.0], "LAS".parse().unwrap()).unwrap();
        let v = ramp(g);
        let c = v.reorient_to_canonical();
        assert!(c.geometry().orientation.is_canonical());
        for k in 0..2 {
            for j in 0..3 {
                assert_eq!(c.get(3, j, k), v.get(0, j, k));
                assert_eq!(c.get(0, j, k), v.get(3, j, k));
            }
        }
        assert_eq!(c.geometry().origin, [5.0 - 6.0, 0.0, 0.0]);
        assert_eq!(world_table(&c), world_table(&v));
    }

    #[test]
    fn every_orientation_preserves_world_positions() {
        for o in Orientation::all() {
            let g = Geometry::new([3, 4, 5], [1.0, 0.5, 2.0], [1.0, -2.0, 3.0], o).unwrap();
            let v = ramp(g);
            let c = v.reorient_to_canonical();
            assert!(c.geometry().orientation.is_canonical());
            assert_eq!(world_table(&c), world_table(&v), "orientation {o}");
            // idempotent
            assert_eq!(c.reorient_to_canonical(), c);
            // dims/spacing permuted consistently
            for d in 0..3 {
                let w = o.0[d].world_axis as usize;
                assert_eq!(c.dims()[w], v.dims()[d]);
                assert_eq!(c.geometry().spacing[w], v.geometry().spacing[d]);
            }
        }
    }

    #[test]
    fn rejects_non_finite() {
        let g = Geometry::canonical([2, 1, 1], [1.0; 3]).unwrap();
        let err = ImageVolume::new(g, vec![1.0, f64::NAN], Modality::Pet, IntensityUnit::Suv).unwrap_err();
        assert!(matches!(err, Error::NonFiniteVoxels { count: 1 }));
    }
}
