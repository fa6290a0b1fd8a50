//! Synthetic whole-body PET/CT phantoms with known lesions and tracer.
//!
//! Anatomy is a fixed arrangement of ellipsoids in normalized body
//! coordinates. Each tracer has its own organ-uptake template: FDG-like
//! studies light up brain and heart, PSMA-like ones salivary glands, liver,
//! spleen and kidneys. Lesions are spheres replacing PET intensity; a voxel
//! belongs to a sphere when its centre lies inside it.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classifier::TracerClass;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use super::manifest::{StudyEntry, StudyManifest};
use crate::volume::{organ, write_volume, Geometry, ImageVolume, LabelId, LabelVolume, Modality, LESION};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionSphere {
    /// Centre in millimetres from the first voxel centre.
    pub center_mm: [f64; 3],
    pub radius_mm: f64,
    /// PET intensity (SUV) inside the sphere.
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub tracer: TracerClass,
    pub lesions: Vec<LesionSphere>,
    /// Standard deviation of additive PET noise (SUV); CT noise is 20x in HU.
    pub noise: f64,
    /// Spread of per-organ uptake scaling around the template (0 = exact).
    #[serde(default)]
    pub uptake_jitter: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Phantom<T> {
    pub pet: ImageVolume<T>,
    pub ct: ImageVolume<T>,
    pub lesions: LabelVolume,
    pub organs: LabelVolume,
    /// Binary bone mask (spine and femurs).
    pub bones: LabelVolume,
    pub tracer: TracerClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Body,
    Brain,
    Salivary,
    Lung,
    Heart,
    Liver,
    Spleen,
    Stomach,
    Kidneys,
    Bladder,
    Prostate,
    Femur,
    Spine,
}

struct Ellipsoid {
    region: Region,
    center: [f64; 3],
    axes: [f64; 3],
}

const fn e(region: Region, center: [f64; 3], axes: [f64; 3]) -> Ellipsoid {
    Ellipsoid { region, center, axes }
}

/// Later entries overwrite earlier ones. Coordinates are fractions of the
/// volume extent along x (right-left), y (posterior-anterior), z (inferior-superior).
const ANATOMY: [Ellipsoid; 18] = [
    e(Region::Brain, [0.50, 0.50, 0.90], [0.14, 0.17, 0.08]),
    e(Region::Salivary, [0.42, 0.58, 0.80], [0.04, 0.04, 0.03]),
    e(Region::Salivary, [0.58, 0.58, 0.80], [0.04, 0.04, 0.03]),
    e(Region::Lung, [0.33, 0.50, 0.67], [0.11, 0.16, 0.10]),
    e(Region::Lung, [0.67, 0.50, 0.67], [0.11, 0.16, 0.10]),
    e(Region::Heart, [0.55, 0.58, 0.62], [0.08, 0.08, 0.06]),
    e(Region::Liver, [0.36, 0.52, 0.52], [0.12, 0.14, 0.06]),
    e(Region::Spleen, [0.68, 0.45, 0.52], [0.05, 0.06, 0.05]),
    e(Region::Stomach, [0.60, 0.62, 0.50], [0.06, 0.06, 0.04]),
    e(Region::Kidneys, [0.38, 0.35, 0.42], [0.045, 0.05, 0.06]),
    e(Region::Kidneys, [0.62, 0.35, 0.42], [0.045, 0.05, 0.06]),
    e(Region::Bladder, [0.50, 0.58, 0.20], [0.06, 0.06, 0.04]),
    e(Region::Prostate, [0.50, 0.55, 0.14], [0.03, 0.03, 0.025]),
    e(Region::Femur, [0.40, 0.50, 0.04], [0.04, 0.04, 0.07]),
    e(Region::Femur, [0.60, 0.50, 0.04], [0.04, 0.04, 0.07]),
    e(Region::Spine, [0.50, 0.25, 0.50], [0.03, 0.03, 0.38]),
    e(Region::Spine, [0.50, 0.25, 0.86], [0.02, 0.02, 0.02]),
    e(Region::Spine, [0.50, 0.25, 0.10], [0.02, 0.02, 0.02]),
];

/// Body outline: elliptic cylinder spanning the whole z range.
const BODY_AXES: [f64; 2] = [0.46, 0.42];

pub const REGIONS: [Region; 13] = [
    Region::Body,
    Region::Brain,
    Region::Salivary,
    Region::Lung,
    Region::Heart,
    Region::Liver,
    Region::Spleen,
    Region::Stomach,
    Region::Kidneys,
    Region::Bladder,
    Region::Prostate,
    Region::Femur,
    Region::Spine,
];

impl Region {
    pub fn organ_label(self) -> LabelId {
        match self {
            Region::Body | Region::Salivary | Region::Spine => 0,
            Region::Brain => organ::BRAIN,
            Region::Lung => organ::LUNG,
            Region::Heart => organ::HEART,
            Region::Liver => organ::LIVER,
            Region::Spleen => organ::SPLEEN,
            Region::Stomach => organ::STOMACH,
            Region::Kidneys => organ::KIDNEYS,
            Region::Bladder => organ::URINARY_BLADDER,
            Region::Prostate => organ::PROSTATE,
            Region::Femur => organ::FEMUR,
        }
    }

    pub fn is_bone(self) -> bool {
        matches!(self, Region::Femur | Region::Spine)
    }

    /// Template uptake in SUV.
    pub fn uptake(self, tracer: TracerClass) -> f64 {
        use Region::*;
        match tracer {
            TracerClass::Fdg => match self {
                Body => 1.0,
                Brain => 9.0,
                Salivary => 1.5,
                Lung => 0.5,
                Heart => 5.0,
                Liver => 2.2,
                Spleen => 1.8,
                Stomach => 1.6,
                Kidneys => 2.5,
                Bladder => 7.0,
                Prostate => 1.0,
                Femur | Spine => 0.9,
            },
            TracerClass::Psma => match self {
                Body => 0.4,
                Brain => 0.3,
                Salivary => 8.0,
                Lung => 0.3,
                Heart => 0.8,
                Liver => 5.0,
                Spleen => 4.0,
                Stomach => 1.2,
                Kidneys => 10.0,
                Bladder => 8.0,
                Prostate => 1.5,
                Femur | Spine => 0.5,
            },
        }
    }

    pub fn hounsfield(self) -> f64 {
        use Region::*;
        match self {
            Body => 20.0,
            Brain => 35.0,
            Salivary => 45.0,
            Lung => -800.0,
            Heart => 40.0,
            Liver => 60.0,
            Spleen => 50.0,
            Stomach => 10.0,
            Kidneys => 35.0,
            Bladder => 5.0,
            Prostate => 40.0,
            Femur | Spine => 700.0,
        }
    }
}

const AIR_HU: f64 = -1000.0;
const LESION_HU: f64 = 45.0;

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SpecInvalid(m));
        if self.dims.contains(&0) {
            return bad(format!("dims {:?}", self.dims));
        }
        if self.spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return bad(format!("spacing {:?}", self.spacing));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad(format!("noise {}", self.noise));
        }
        if !(0.0..1.0).contains(&self.uptake_jitter) {
            return bad(format!("uptake jitter {}", self.uptake_jitter));
        }
        for (n, l) in self.lesions.iter().enumerate() {
            if !(l.intensity > 0.0) || !l.intensity.is_finite() {
                return bad(format!("lesion {n}: intensity must be positive"));
            }
            if !(l.radius_mm > 0.0) || !l.radius_mm.is_finite() {
                return bad(format!("lesion {n}: radius must be positive"));
            }
            for d in 0..3 {
                let extent = (self.dims[d] - 1) as f64 * self.spacing[d];
                if l.center_mm[d] - l.radius_mm < 0.0 || l.center_mm[d] + l.radius_mm > extent {
                    return bad(format!("lesion {n}: sphere leaves the volume along axis {d}"));
                }
            }
        }
        Ok(())
    }
}

fn region_at(u: [f64; 3]) -> Option<Region> {
    let bx = (u[0] - 0.5) / BODY_AXES[0];
    let by = (u[1] - 0.5) / BODY_AXES[1];
    if bx * bx + by * by > 1.0 {
        return None;
    }
    let mut region = Region::Body;
    for el in &ANATOMY {
        let q: f64 = (0..3).map(|d| ((u[d] - el.center[d]) / el.axes[d]).powi(2)).sum();
        if q <= 1.0 {
            region = el.region;
        }
    }
    Some(region)
}

/// True when the voxel centre `idx` lies in the sphere.
pub fn in_sphere(idx: [usize; 3], spacing: [f64; 3], sphere: &LesionSphere) -> bool {
    let d2: f64 = (0..3)
        .map(|d| (idx[d] as f64 * spacing[d] - sphere.center_mm[d]).powi(2))
        .sum();
    d2 <= sphere.radius_mm * sphere.radius_mm
}

pub fn generate_phantom<T: Scalar>(spec: &PhantomSpec) -> Result<Phantom<T>> {
    spec.validate()?;
    let geom = Geometry::canonical(spec.dims, spec.spacing)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scale: Vec<f64> = REGIONS
        .iter()
        .map(|_| 1.0 + spec.uptake_jitter * rng.random_range(-1.0..=1.0))
        .collect();
    let uptake = |r: Region| {
        let k = REGIONS.iter().position(|&x| x == r).expect("region listed");
        r.uptake(spec.tracer) * scale[k]
    };

    let n = geom.voxel_count();
    let [nx, ny, nz] = spec.dims;
    let frac = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
    let mut pet = vec![0.0f64; n];
    let mut ct = vec![AIR_HU; n];
    let mut organs = vec![0 as LabelId; n];
    let mut bones = vec![0 as LabelId; n];
    let mut lesions = vec![0 as LabelId; n];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let v = geom.linear_index(i, j, k);
                if let Some(r) = region_at([frac(i, nx), frac(j, ny), frac(k, nz)]) {
                    pet[v] = uptake(r);
                    ct[v] = r.hounsfield();
                    organs[v] = r.organ_label();
                    bones[v] = r.is_bone() as LabelId;
                }
                for s in &spec.lesions {
                    if in_sphere([i, j, k], spec.spacing, s) {
                        pet[v] = s.intensity;
                        ct[v] = LESION_HU;
                        lesions[v] = LESION;
                    }
                }
            }
        }
    }
    if spec.noise > 0.0 {
        let pet_noise = Normal::new(0.0, spec.noise).expect("valid noise");
        let ct_noise = Normal::new(0.0, 20.0 * spec.noise).expect("valid noise");
        for v in 0..n {
            pet[v] = (pet[v] + pet_noise.sample(&mut rng)).max(0.0);
            ct[v] += ct_noise.sample(&mut rng);
        }
    }
    Ok(Phantom {
        pet: ImageVolume::new(geom.clone(), pet.into_iter().map(T::of).collect(), Modality::Pet, Modality::Pet.native_unit())?,
        ct: ImageVolume::new(geom.clone(), ct.into_iter().map(T::of).collect(), Modality::Ct, Modality::Ct.native_unit())?,
        lesions: LabelVolume::new(geom.clone(), lesions, "default")?,
        organs: LabelVolume::new(geom.clone(), organs, "default")?,
        bones: LabelVolume::new(geom, bones, "default")?,
        tracer: spec.tracer,
    })
}

/// Suite settings: random lesions inside the trunk for a run of seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub lesions_per_study: [usize; 2],
    pub radius_mm: [f64; 2],
    pub intensity: [f64; 2],
    pub noise: f64,
    pub uptake_jitter: f64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            dims: [48, 40, 64],
            spacing: [2.0, 2.0, 2.0],
            lesions_per_study: [1, 3],
            radius_mm: [6.0, 12.0],
            intensity: [12.0, 15.0],
            noise: 0.2,
            uptake_jitter: 0.15,
        }
    }
}

impl SuiteSpec {
    /// One phantom spec with lesions drawn from `seed`.
    pub fn phantom(&self, tracer: TracerClass, seed: u64) -> Result<PhantomSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F1E_5107);
        let [lo, hi] = self.lesions_per_study;
        if lo > hi || self.radius_mm[0] > self.radius_mm[1] || self.radius_mm[0] <= 0.0 || self.intensity[0] > self.intensity[1] {
            return Err(Error::SpecInvalid("suite ranges must be ordered and positive".into()));
        }
        let count = rng.random_range(lo..=hi);
        let extent = [0, 1, 2].map(|d| (self.dims[d].max(1) - 1) as f64 * self.spacing[d]);
        // trunk box in normalized coordinates
        let box_lo = [0.30, 0.35, 0.15];
        let box_hi = [0.70, 0.65, 0.85];
        let mut lesions = Vec::with_capacity(count);
        for _ in 0..count {
            let radius_mm = rng.random_range(self.radius_mm[0]..=self.radius_mm[1]);
            let center_mm = [0, 1, 2].map(|d| {
                let a = (box_lo[d] * extent[d]).max(radius_mm);
                let b = (box_hi[d] * extent[d]).min(extent[d] - radius_mm);
                if a < b {
                    rng.random_range(a..b)
                } else {
                    extent[d] / 2.0
                }
            });
            let intensity = rng.random_range(self.intensity[0]..=self.intensity[1]);
            lesions.push(LesionSphere {
                center_mm,
                radius_mm,
                intensity,
            });
        }
        let spec = PhantomSpec {
            dims: self.dims,
            spacing: self.spacing,
            tracer,
            lesions,
            noise: self.noise,
            uptake_jitter: self.uptake_jitter,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `n_fdg` FDG-like then `n_psma` PSMA-like specs; study `i` uses seed
    /// `seed + i`.
    pub fn suite(&self, n_fdg: usize, n_psma: usize, seed: u64) -> Result<Vec<PhantomSpec>> {
        (0..n_fdg + n_psma)
            .map(|i| {
                let tracer = if i < n_fdg { TracerClass::Fdg } else { TracerClass::Psma };
                self.phantom(tracer, seed.wrapping_add(i as u64))
            })
            .collect()
    }
}

/// Writes each spec as `<prefix>NNN_{pet,ct,lesions,organs,bones}.nii.gz`
/// under `dir` plus a `manifest.jsonl` with relative paths and known tracers.
pub fn write_suite(specs: &[PhantomSpec], dir: &Path, prefix: &str) -> Result<StudyManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::write_io(dir, e))?;
    let mut studies = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let p = generate_phantom::<f32>(spec)?;
        let id = format!("{prefix}{i:03}");
        let name = |part: &str| PathBuf::from(format!("{id}_{part}.nii.gz"));
        write_volume(&p.pet, dir.join(name("pet")))?;
        write_volume(&p.ct, dir.join(name("ct")))?;
        write_volume(&p.lesions, dir.join(name("lesions")))?;
        write_volume(&p.organs, dir.join(name("organs")))?;
        write_volume(&p.bones, dir.join(name("bones")))?;
        studies.push(StudyEntry {
            id: id.clone(),
            pet: name("pet"),
            ct: name("ct"),
            lesions: Some(name("lesions")),
            organs: Some(name("organs")),
            bones: Some(name("bones")),
            tracer: Some(spec.tracer),
        });
    }
    let manifest = StudyManifest { studies };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_jsonl()).map_err(|e| Error::write_io(&path, e))?;
    Ok(manifest)
}
