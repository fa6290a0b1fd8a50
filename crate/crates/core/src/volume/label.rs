use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::geometry::{reorient_data, Geometry};

pub type LabelId = u16;

pub const BACKGROUND: LabelId = 0;
pub const LESION: LabelId = 1;

/// Ordered mapping of label ids to names. Background (0) and lesion (1) are
/// always present; anatomy uses ids >= 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub id: String,
    labels: BTreeMap<LabelId, String>,
}

impl LabelSchema {
    pub const DEFAULT_ID: &'static str = "default";

    pub fn new(id: impl Into<String>, labels: BTreeMap<LabelId, String>) -> Result<Self> {
        let schema = Self {
            id: id.into(),
            labels,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.labels.contains_key(&BACKGROUND) || !self.labels.contains_key(&LESION) {
            return Err(Error::InvalidSchema("background (0) and lesion (1) are required".into()));
        }
        let mut names: Vec<&str> = self.labels.values().map(String::as_str).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSchema("label names must be unique".into()));
        }
        if names.iter().any(|n| n.is_empty() || n.contains(['\t', '\n'])) {
            return Err(Error::InvalidSchema("label names must be non-empty single tokens".into()));
        }
        Ok(())
    }

    pub fn contains(&self, id: LabelId) -> bool {
        self.labels.contains_key(&id)
    }

    pub fn name(&self, id: LabelId) -> Option<&str> {
        self.labels.get(&id).map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<LabelId> {
        self.labels.iter().find(|(_, n)| n.as_str() == name).map(|(&id, _)| id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (LabelId, &str)> {
        self.labels.iter().map(|(&id, n)| (id, n.as_str()))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `id<TAB>name` per line, ascending id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (id, name) in self.iter() {
            let _ = writeln!(s, "{id}\t{name}");
        }
        s
    }

    pub fn from_text(id: impl Into<String>, text: &str) -> Result<Self> {
        let mut labels = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (num, name) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| Error::InvalidSchema(format!("line {}: expected `id name`", n + 1)))?;
            let num: LabelId = num
                .parse()
                .map_err(|_| Error::InvalidSchema(format!("line {}: bad id `{num}`", n + 1)))?;
            if labels.insert(num, name.trim().to_string()).is_some() {
                return Err(Error::InvalidSchema(format!("duplicate id {num}")));
            }
        }
        Self::new(id, labels)
    }
}

impl Default for LabelSchema {
    /// Background, lesion, the ten high-uptake organs, and bone.
    fn default() -> Self {
        const NAMES: [&str; 13] = [
            "background",
            "lesion",
            "liver",
            "kidneys",
            "urinary_bladder",
            "spleen",
            "lung",
            "brain",
            "heart",
            "femur",
            "stomach",
            "prostate",
            "bone",
        ];
        let labels = NAMES
            .iter()
            .enumerate()
            .map(|(i, n)| (i as LabelId, n.to_string()))
            .collect();
        Self {
            id: Self::DEFAULT_ID.to_string(),
            labels,
        }
    }
}

/// Default-schema ids for the organs.
pub mod organ {
    use super::LabelId;
    pub const LIVER: LabelId = 2;
    pub const KIDNEYS: LabelId = 3;
    pub const URINARY_BLADDER: LabelId = 4;
    pub const SPLEEN: LabelId = 5;
    pub const LUNG: LabelId = 6;
    pub const BRAIN: LabelId = 7;
    pub const HEART: LabelId = 8;
    pub const FEMUR: LabelId = 9;
    pub const STOMACH: LabelId = 10;
    pub const PROSTATE: LabelId = 11;
    pub const BONE: LabelId = 12;
}

/// Integer label grid. Values are not forced into the schema at
/// construction so that out-of-schema labels in ingested files can be
/// reported rather than rejected; see [`LabelVolume::check_schema`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    geometry: Geometry,
    labels: Vec<LabelId>,
    schema_id: String,
}

impl LabelVolume {
    pub fn new(geometry: Geometry, labels: Vec<LabelId>, schema_id: impl Into<String>) -> Result<Self> {
        geometry.validate()?;
        if labels.len() != geometry.voxel_count() {
            return Err(Error::ShapeMismatch {
                expected: geometry.dims.to_vec(),
                got: vec![labels.len()],
            });
        }
        Ok(Self {
            geometry,
            labels,
            schema_id: schema_id.into(),
        })
    }

    pub fn zeros(geometry: Geometry) -> Result<Self> {
        let n = geometry.voxel_count();
        Self::new(geometry, vec![0; n], LabelSchema::DEFAULT_ID)
    }

    /// Binary mask (`0`/`1`) from a predicate over linear indices.
    pub fn mask_from_fn(geometry: Geometry, f: impl Fn(usize) -> bool) -> Result<Self> {
        let labels = (0..geometry.voxel_count()).map(|i| f(i) as LabelId).collect();
        Self::new(geometry, labels, LabelSchema::DEFAULT_ID)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn labels(&self) -> &[LabelId] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<LabelId> {
        self.labels
    }

    pub fn schema_id(&self) -> &str {
        &self.schema_id
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> LabelId {
        self.labels[self.geometry.linear_index(i, j, k)]
    }

    pub fn with_labels(&self, labels: Vec<LabelId>) -> Result<Self> {
        Self::new(self.geometry.clone(), labels, self.schema_id.clone())
    }

    pub fn with_schema_id(mut self, id: impl Into<String>) -> Self {
        self.schema_id = id.into();
        self
    }

    /// Distinct label values in ascending order.
    pub fn label_set(&self) -> Vec<LabelId> {
        let mut present = std::collections::BTreeSet::new();
        for &l in &self.labels {
            present.insert(l);
        }
        present.into_iter().collect()
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    pub fn check_schema(&self, schema: &LabelSchema) -> Result<()> {
        match self.label_set().into_iter().find(|l| !schema.contains(*l)) {
            Some(l) => Err(Error::UnknownLabel(l)),
            None => Ok(()),
        }
    }

    pub fn reorient_to_canonical(&self) -> Self {
        let (geometry, labels) = reorient_data(&self.geometry, &self.labels);
        Self {
            geometry,
            labels,
            schema_id: self.schema_id.clone(),
        }
    }

    pub fn voxel_volume_ml(&self) -> f64 {
        self.geometry.voxel_volume_ml()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_layout() {
        let s = LabelSchema::default();
        s.validate().unwrap();
        assert_eq!(s.len(), 13);
        assert_eq!(s.name(0), Some("background"));
        assert_eq!(s.name(1), Some("lesion"));
        assert_eq!(s.id_of("prostate"), Some(organ::PROSTATE));
        assert_eq!(s.id_of("bone"), Some(organ::BONE));
    }

    #[test]
    fn schema_text_round_trip() {
        let s = LabelSchema::default();
        let back = LabelSchema::from_text("default", &s.to_text()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn schema_requires_background_and_lesion() {
        assert!(LabelSchema::from_text("x", "0 background\n2 liver\n").is_err());
        assert!(LabelSchema::from_text("x", "0 background\n1 lesion\n2 lesion\n").is_err());
        assert!(LabelSchema::from_text("x", "0 background\n1 lesion\n1 liver\n").is_err());
    }

    #[test]
    fn out_of_schema_label_detected() {
        let g = Geometry::canonical([2, 1, 1], [1.0; 3]).unwrap();
        let lv = LabelVolume::new(g, vec![0, 99], "default").unwrap();
        assert!(matches!(lv.check_schema(&LabelSchema::default()), Err(Error::UnknownLabel(99))));
    }
}
