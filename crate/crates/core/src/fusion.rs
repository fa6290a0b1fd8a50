//! Merging of bone, organ and lesion label volumes into one multi-label
//! ground truth.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{organ, LabelId, LabelSchema, LabelVolume, BACKGROUND, LESION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Lesion,
    Organ,
    Bone,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Lesion, Source::Organ, Source::Bone];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Lesion => "lesion",
            Source::Organ => "organ",
            Source::Bone => "bone",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lesion" | "lesions" => Ok(Source::Lesion),
            "organ" | "organs" => Ok(Source::Organ),
            "bone" | "bones" => Ok(Source::Bone),
            _ => Err(Error::InvalidPolicy(format!("unknown source `{s}`"))),
        }
    }
}

/// Which source wins where several are labelled, and how each source's
/// label values translate into the output schema. Background (0) in any
/// source means "no opinion" and is never remapped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionPolicy {
    pub precedence: Vec<Source>,
    pub schema: LabelSchema,
    pub remaps: BTreeMap<Source, BTreeMap<LabelId, LabelId>>,
}

impl Default for FusionPolicy {
    /// Lesion over organ over bone. Lesion masks map `1 -> lesion`, organ
    /// volumes already use default-schema ids, and bone masks may be either
    /// binary (`1`) or already carry the bone id.
    fn default() -> Self {
        let lesion = BTreeMap::from([(LESION, LESION)]);
        let organs = (organ::LIVER..=organ::PROSTATE).map(|id| (id, id)).collect();
        let bone = BTreeMap::from([(1, organ::BONE), (organ::BONE, organ::BONE)]);
        Self {
            precedence: Source::ALL.to_vec(),
            schema: LabelSchema::default(),
            remaps: BTreeMap::from([(Source::Lesion, lesion), (Source::Organ, organs), (Source::Bone, bone)]),
        }
    }
}

impl FusionPolicy {
    pub fn with_precedence(mut self, precedence: Vec<Source>) -> Result<Self> {
        self.precedence = precedence;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let mut seen = self.precedence.clone();
        seen.sort();
        if seen != Source::ALL {
            return Err(Error::InvalidPolicy(format!(
                "precedence must list lesion, organ and bone exactly once, got {:?}",
                self.precedence
            )));
        }
        for (src, table) in &self.remaps {
            for (&from, &to) in table {
                if from == BACKGROUND {
                    return Err(Error::InvalidPolicy(format!("{src}: background cannot be remapped")));
                }
                if to == BACKGROUND || !self.schema.contains(to) {
                    return Err(Error::InvalidPolicy(format!(
                        "{src}: label {from} maps to {to}, which is not a foreground schema label"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Dense lookup table; unmapped values stay 0 and are rejected beforehand.
    fn lookup(&self, src: Source) -> Vec<LabelId> {
        let mut lut = vec![BACKGROUND; 1 << 16];
        if let Some(table) = self.remaps.get(&src) {
            for (&from, &to) in table {
                lut[from as usize] = to;
            }
        }
        lut
    }
}

fn check_mapped(vol: &LabelVolume, src: Source, policy: &FusionPolicy) -> Result<()> {
    let empty = BTreeMap::new();
    let table = policy.remaps.get(&src).unwrap_or(&empty);
    for l in vol.label_set() {
        if l != BACKGROUND && !table.contains_key(&l) {
            return Err(Error::UnmappedLabel {
                source_name: src.as_str(),
                label: l,
            });
        }
    }
    Ok(())
}

/// Per voxel, the highest-precedence source with a non-background label
/// wins, translated through that source's remap table.
pub fn fuse_labels(bone: &LabelVolume, organs: &LabelVolume, lesions: &LabelVolume, policy: &FusionPolicy) -> Result<LabelVolume> {
    policy.validate()?;
    let geom = lesions.geometry();
    geom.ensure_same(organs.geometry(), "organ labels vs lesion labels")?;
    geom.ensure_same(bone.geometry(), "bone labels vs lesion labels")?;

    let by_source = |s: Source| match s {
        Source::Lesion => lesions,
        Source::Organ => organs,
        Source::Bone => bone,
    };
    for &s in &policy.precedence {
        check_mapped(by_source(s), s, policy)?;
    }
    let ordered: Vec<(&[LabelId], Vec<LabelId>)> = policy
        .precedence
        .iter()
        .map(|&s| (by_source(s).labels(), policy.lookup(s)))
        .collect();

    let mut out = vec![BACKGROUND; geom.voxel_count()];
    out.par_chunks_mut(4096).enumerate().for_each(|(c, chunk)| {
        let base = c * 4096;
        for (o, slot) in chunk.iter_mut().enumerate() {
            let i = base + o;
            for (labels, lut) in &ordered {
                let l = labels[i];
                if l != BACKGROUND {
                    *slot = lut[l as usize];
                    break;
                }
            }
        }
    });
    LabelVolume::new(geom.clone(), out, policy.schema.id.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStat {
    pub id: LabelId,
    pub name: Option<String>,
    pub voxels: usize,
    pub volume_ml: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub schema_id: String,
    /// Schema labels (count 0 when absent) and out-of-schema labels found
    /// in the volume, ascending by id.
    pub labels: Vec<LabelStat>,
    pub unknown_labels: Vec<LabelId>,
}

impl FusionReport {
    pub fn stat(&self, id: LabelId) -> Option<&LabelStat> {
        self.labels.iter().find(|s| s.id == id)
    }
}

pub fn validate_fused(lv: &LabelVolume, schema: &LabelSchema) -> FusionReport {
    let mut counts: BTreeMap<LabelId, usize> = schema.iter().map(|(id, _)| (id, 0)).collect();
    for &l in lv.labels() {
        *counts.entry(l).or_insert(0) += 1;
    }
    let voxel_ml = lv.voxel_volume_ml();
    let labels = counts
        .iter()
        .map(|(&id, &voxels)| LabelStat {
            id,
            name: schema.name(id).map(str::to_string),
            voxels,
            volume_ml: voxels as f64 * voxel_ml,
        })
        .collect();
    let unknown_labels = counts.keys().copied().filter(|&id| !schema.contains(id)).collect();
    FusionReport {
        schema_id: schema.id.clone(),
        labels,
        unknown_labels,
    }
}

/// Binary mask of voxels equal to `label`.
pub fn extract_binary_mask(lv: &LabelVolume, label: LabelId, schema: &LabelSchema) -> Result<LabelVolume> {
    if !schema.contains(label) {
        return Err(Error::UnknownLabel(label));
    }
    let labels = lv.labels().iter().map(|&l| (l == label) as LabelId).collect();
    LabelVolume::new(lv.geometry().clone(), labels, LabelSchema::DEFAULT_ID)
}
