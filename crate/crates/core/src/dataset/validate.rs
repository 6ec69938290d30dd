use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::DatasetManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub image_id: Option<String>,
    pub message: String,
}

impl Finding {
    fn error(image_id: Option<&str>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            image_id: image_id.map(str::to_string),
            message: message.into(),
        }
    }

    fn warning(image_id: Option<&str>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            image_id: image_id.map(str::to_string),
            message: message.into(),
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        match &self.image_id {
            Some(id) => write!(f, "{sev}: [{id}] {}", self.message),
            None => write!(f, "{sev}: {}", self.message),
        }
    }
}

/// Checks structural and methodological rules on a manifest. Never fails;
/// every problem becomes a [`Finding`].
pub fn validate_manifest(m: &DatasetManifest) -> Vec<Finding> {
    let mut findings = Vec::new();

    let mut seen = BTreeSet::new();
    let mut by_id = BTreeMap::new();
    for r in &m.records {
        if !seen.insert(r.image_id.as_str()) {
            findings.push(Finding::error(Some(&r.image_id), "duplicate image_id"));
        }
        by_id.entry(r.image_id.as_str()).or_insert(r);
        if r.width == 0 || r.height == 0 {
            findings.push(Finding::error(
                Some(&r.image_id),
                format!("zero-sized image {}x{}", r.width, r.height),
            ));
        }
    }

    for r in &m.records {
        if let Some(parent) = &r.parent_id {
            match by_id.get(parent.as_str()) {
                None => findings.push(Finding::error(
                    Some(&r.image_id),
                    format!("parent '{parent}' not found"),
                )),
                Some(p) if p.is_augmented() => findings.push(Finding::error(
                    Some(&r.image_id),
                    format!("parent '{parent}' is itself augmented"),
                )),
                Some(_) => {}
            }
        }
    }

    for (id, set) in &m.annotations {
        let Some(record) = by_id.get(id.as_str()) else {
            findings.push(Finding::error(Some(id), "annotations for unknown image"));
            continue;
        };
        if set.image_id != *id {
            findings.push(Finding::error(
                Some(id),
                format!("annotation set keyed '{id}' names image '{}'", set.image_id),
            ));
        }
        let (w, h) = (f64::from(record.width), f64::from(record.height));
        for (i, t) in set.truths.iter().enumerate() {
            if !t.bbox.fits_within(w, h) {
                findings.push(Finding::error(
                    Some(id),
                    format!("out of bounds: box {i} {} exceeds {}x{}", t.bbox, record.width, record.height),
                ));
            }
        }
    }

    for r in &m.records {
        if m.truths(&r.image_id).is_empty() {
            findings.push(Finding::warning(Some(&r.image_id), "zero annotations"));
        }
    }

    if let Some(split) = &m.split {
        for r in &m.records {
            if !split.contains_key(&r.image_id) {
                findings.push(Finding::error(
                    Some(&r.image_id),
                    "split is not a partition: record has no split",
                ));
            }
        }
        for id in split.keys() {
            if !by_id.contains_key(id.as_str()) {
                findings.push(Finding::error(
                    Some(id),
                    "split is not a partition: split names unknown image",
                ));
            }
        }
        for r in &m.records {
            let (Some(parent), Some(own)) = (&r.parent_id, split.get(&r.image_id)) else {
                continue;
            };
            if let Some(parent_split) = split.get(parent) {
                if parent_split != own {
                    findings.push(Finding::error(
                        Some(&r.image_id),
                        format!(
                            "split leakage: augmented image in {} but parent '{parent}' in {}",
                            own.name(),
                            parent_split.name()
                        ),
                    ));
                }
            }
        }
    }

    findings
}
