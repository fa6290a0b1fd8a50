use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::TracerClass;
use crate::error::{Error, Result};

/// One study. Relative paths are taken relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyEntry {
    pub id: String,
    pub pet: PathBuf,
    pub ct: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lesions: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub organs: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bones: Option<PathBuf>,
    /// Known tracer, used only to score the classifier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracer: Option<TracerClass>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyManifest {
    pub studies: Vec<StudyEntry>,
}

impl StudyManifest {
    /// Parses JSON lines; blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut studies = Vec::new();
        let mut seen = BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut e: StudyEntry =
                serde_json::from_str(line).map_err(|err| Error::ManifestUnreadable(format!("line {}: {err}", n + 1)))?;
            if e.id.is_empty() || e.id.contains(['/', '\\']) {
                return Err(Error::ManifestUnreadable(format!("line {}: invalid study id {:?}", n + 1, e.id)));
            }
            if !seen.insert(e.id.clone()) {
                return Err(Error::ManifestUnreadable(format!("line {}: duplicate study id {:?}", n + 1, e.id)));
            }
            for p in [Some(&mut e.pet), Some(&mut e.ct), e.lesions.as_mut(), e.organs.as_mut(), e.bones.as_mut()]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            studies.push(e);
        }
        Ok(Self { studies })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::ManifestUnreadable(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
            .map_err(|e| Error::ManifestUnreadable(format!("{}: {e}", path.display())))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.studies {
            out.push_str(&serde_json::to_string(s).expect("entry serializes"));
            out.push('\n');
        }
        out
    }
}
