//! Dice score and false-positive / false-negative lesion volumes.
//!
//! Masks are binary in spirit; any nonzero label counts as foreground.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduce::pairwise_sum_by;
use crate::volume::LabelVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Face = 6,
    Edge = 18,
    Corner = 26,
}

impl Connectivity {
    pub const ALL: [Connectivity; 3] = [Connectivity::Face, Connectivity::Edge, Connectivity::Corner];

    /// Neighbour offsets `(dx, dy, dz)` in scan order.
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let l1 = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Face => l1 == 1,
                        Connectivity::Edge => l1 == 1 || l1 == 2,
                        Connectivity::Corner => l1 >= 1,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            6 => Ok(Connectivity::Face),
            18 => Ok(Connectivity::Edge),
            26 => Ok(Connectivity::Corner),
            _ => Err(Error::InvalidParameter(format!("connectivity {v} (expected 6, 18 or 26)"))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        c as u8
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Whole components with no overlap on the other side.
    #[default]
    Component,
    /// Plain set difference.
    Voxelwise,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "component" => Ok(EvalMode::Component),
            "voxelwise" => Ok(EvalMode::Voxelwise),
            _ => Err(Error::InvalidParameter(format!("evaluation mode `{s}`"))),
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Component => "component",
            EvalMode::Voxelwise => "voxelwise",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub mode: EvalMode,
    pub connectivity: Connectivity,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode: EvalMode::Component,
            connectivity: Connectivity::Edge,
        }
    }
}

/// Foreground components, ordered by their smallest linear index; voxel
/// lists are ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentSet {
    pub connectivity: Connectivity,
    pub components: Vec<Vec<usize>>,
}

impl ComponentSet {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

pub fn connected_components(mask: &LabelVolume, connectivity: Connectivity) -> ComponentSet {
    let [nx, ny, nz] = mask.dims();
    let labels = mask.labels();
    let offsets = connectivity.offsets();
    let mut seen = vec![false; labels.len()];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if labels[start] == 0 || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(v) = queue.pop_front() {
            comp.push(v);
            let (x, y, z) = ((v % nx) as isize, ((v / nx) % ny) as isize, (v / (nx * ny)) as isize);
            for d in &offsets {
                let (a, b, c) = (x + d[0], y + d[1], z + d[2]);
                if a < 0 || b < 0 || c < 0 || a >= nx as isize || b >= ny as isize || c >= nz as isize {
                    continue;
                }
                let u = a as usize + nx * (b as usize + ny * c as usize);
                if labels[u] != 0 && !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    ComponentSet {
        connectivity,
        components,
    }
}

fn check(pred: &LabelVolume, gt: &LabelVolume) -> Result<()> {
    pred.geometry().ensure_same(gt.geometry(), "prediction vs ground truth")
}

/// `2|P∩G| / (|P|+|G|)`, defined as 1 when both masks are empty.
pub fn dice_score(pred: &LabelVolume, gt: &LabelVolume) -> Result<f64> {
    check(pred, gt)?;
    let (mut p, mut g, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.labels().iter().zip(gt.labels()) {
        let (a, b) = (a != 0, b != 0);
        p += a as usize;
        g += b as usize;
        both += (a && b) as usize;
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (p + g) as f64)
}

/// Volume (mL) of prediction not explained by the ground truth.
pub fn fp_volume(pred: &LabelVolume, gt: &LabelVolume, opts: &EvalOptions) -> Result<f64> {
    check(pred, gt)?;
    let voxels = match opts.mode {
        EvalMode::Voxelwise => pred
            .labels()
            .iter()
            .zip(gt.labels())
            .filter(|(&a, &b)| a != 0 && b == 0)
            .count(),
        EvalMode::Component => {
            let g = gt.labels();
            connected_components(pred, opts.connectivity)
                .components
                .iter()
                .filter(|c| c.iter().all(|&v| g[v] == 0))
                .map(Vec::len)
                .sum()
        }
    };
    Ok(voxels as f64 * pred.voxel_volume_ml())
}

/// Volume (mL) of ground truth missed by the prediction.
pub fn fn_volume(pred: &LabelVolume, gt: &LabelVolume, opts: &EvalOptions) -> Result<f64> {
    fp_volume(gt, pred, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub study_id: String,
    pub dice: f64,
    pub fpvol_ml: f64,
    pub fnvol_ml: f64,
    pub mode: EvalMode,
    pub connectivity: Connectivity,
}

pub fn evaluate_study(study_id: &str, pred: &LabelVolume, gt: &LabelVolume, opts: &EvalOptions) -> Result<EvalReport> {
    Ok(EvalReport {
        study_id: study_id.to_string(),
        dice: dice_score(pred, gt)?,
        fpvol_ml: fp_volume(pred, gt, opts)?,
        fnvol_ml: fn_volume(pred, gt, opts)?,
        mode: opts.mode,
        connectivity: opts.connectivity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub studies: usize,
    pub mean_dice: f64,
    pub mean_fpvol_ml: f64,
    pub mean_fnvol_ml: f64,
}

/// Arithmetic means in report order.
pub fn aggregate(reports: &[EvalReport]) -> Result<EvalSummary> {
    if reports.is_empty() {
        return Err(Error::EmptyReportList);
    }
    let n = reports.len();
    let mean = |f: fn(&EvalReport) -> f64| pairwise_sum_by(n, |i| f(&reports[i])) / n as f64;
    Ok(EvalSummary {
        studies: n,
        mean_dice: mean(|r| r.dice),
        mean_fpvol_ml: mean(|r| r.fpvol_ml),
        mean_fnvol_ml: mean(|r| r.fnvol_ml),
    })
}

/// Per-cohort means reported for the full-scale GPU-trained models on the
/// public challenge data. Kept for comparison only; not reproducible here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceResult {
    pub cohort: &'static str,
    pub dice: f64,
    pub fpvol_ml: f64,
    pub fnvol_ml: f64,
}

pub const REFERENCE_RESULTS: [ReferenceResult; 2] = [
    ReferenceResult { cohort: "FDG", dice: 0.8408, fpvol_ml: 1.7979, fnvol_ml: 2.3625 },
    ReferenceResult { cohort: "PSMA", dice: 0.7385, fpvol_ml: 9.3574, fnvol_ml: 5.0745 },
];

/// Reported tracer classification accuracy of the full-scale detector.
pub const REFERENCE_CLASSIFIER_ACCURACY: f64 = 0.9985;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    fn mask(dims: [usize; 3], on: &[usize]) -> LabelVolume {
        let g = Geometry::canonical(dims, [2.0; 3]).unwrap();
        LabelVolume::mask_from_fn(g, |i| on.contains(&i)).unwrap()
    }

    #[test]
    fn dice_examples() {
        let a = mask([4, 4, 1], &[0, 1, 2]);
        assert_eq!(dice_score(&a, &a).unwrap(), 1.0);
        assert_eq!(dice_score(&a, &mask([4, 4, 1], &[9])).unwrap(), 0.0);
        let p = mask([4, 4, 1], &[0, 1, 2, 3]);
        let g = mask([4, 4, 1], &[1, 2, 3, 4, 5, 6]);
        assert!((dice_score(&p, &g).unwrap() - 0.6).abs() < 1e-15);
        let e = mask([2, 2, 2], &[]);
        assert_eq!(dice_score(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn connectivity_cases() {
        let face = mask([2, 2, 2], &[0, 1]);
        assert_eq!(connected_components(&face, Connectivity::Face).len(), 1);
        let corner = mask([2, 2, 2], &[0, 7]);
        assert_eq!(connected_components(&corner, Connectivity::Face).len(), 2);
        assert_eq!(connected_components(&corner, Connectivity::Edge).len(), 2);
        assert_eq!(connected_components(&corner, Connectivity::Corner).len(), 1);
        let edge = mask([2, 2, 2], &[0, 3]);
        assert_eq!(connected_components(&edge, Connectivity::Face).len(), 2);
        assert_eq!(connected_components(&edge, Connectivity::Edge).len(), 1);
    }

    #[test]
    fn offsets_count() {
        assert_eq!(Connectivity::Face.offsets().len(), 6);
        assert_eq!(Connectivity::Edge.offsets().len(), 18);
        assert_eq!(Connectivity::Corner.offsets().len(), 26);
    }

    #[test]
    fn false_volumes() {
        let opts = EvalOptions::default();
        // 5-voxel run disjoint from gt at 2 mm iso
        let p = mask([10, 2, 1], &[0, 1, 2, 3, 4, 17]);
        let g = mask([10, 2, 1], &[17, 18]);
        assert!((fp_volume(&p, &g, &opts).unwrap() - 0.04).abs() < 1e-12);
        let vox = EvalOptions { mode: EvalMode::Voxelwise, ..opts };
        assert!((fp_volume(&p, &g, &vox).unwrap() - 0.04).abs() < 1e-12);
        // gt component of 2 touched by pred: component FN 0, voxelwise 1 voxel
        assert_eq!(fn_volume(&p, &g, &opts).unwrap(), 0.0);
        assert!((fn_volume(&p, &g, &vox).unwrap() - 0.008).abs() < 1e-12);
        let empty = mask([10, 2, 1], &[]);
        assert_eq!(fn_volume(&p, &empty, &opts).unwrap(), 0.0);
    }

    #[test]
    fn missed_lesion() {
        let g = mask([10, 1, 1], &(0..10).collect::<Vec<_>>());
        let p = mask([10, 1, 1], &[]);
        assert!((fn_volume(&p, &g, &EvalOptions::default()).unwrap() - 0.08).abs() < 1e-12);
    }

    #[test]
    fn aggregate_means() {
        let r = |d| EvalReport {
            study_id: "x".into(),
            dice: d,
            fpvol_ml: 0.0,
            fnvol_ml: 1.0,
            mode: EvalMode::Component,
            connectivity: Connectivity::Edge,
        };
        let s = aggregate(&[r(0.8), r(0.6)]).unwrap();
        assert!((s.mean_dice - 0.7).abs() < 1e-15);
        assert_eq!(s.mean_fnvol_ml, 1.0);
        assert!(matches!(aggregate(&[]), Err(Error::EmptyReportList)));
    }

    #[test]
    fn connectivity_serde() {
        assert_eq!(serde_json::to_string(&Connectivity::Edge).unwrap(), "18");
        assert_eq!(serde_json::from_str::<Connectivity>("26").unwrap(), Connectivity::Corner);
        assert!(serde_json::from_str::<Connectivity>("7").is_err());
    }
}
