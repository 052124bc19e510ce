//! Binary annotations, gold classes and gold-labeled validation sets.

use std::collections::HashSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// True class of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Class {
    Expert,
    NonExpert,
}

impl Class {
    pub const BOTH: [Class; 2] = [Class::Expert, Class::NonExpert];

    pub fn from_indicator(positive: bool) -> Self {
        if positive {
            Class::Expert
        } else {
            Class::NonExpert
        }
    }

    pub fn is_expert(self) -> bool {
        self == Class::Expert
    }
}

/// One annotator's output on one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Annotation {
    Positive,
    Negative,
    Missing,
}

impl Annotation {
    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Annotation::Positive
        } else {
            Annotation::Negative
        }
    }

    pub fn is_missing(self) -> bool {
        self == Annotation::Missing
    }

    /// `Some(true)` for positive, `Some(false)` for negative.
    pub fn value(self) -> Option<bool> {
        match self {
            Annotation::Positive => Some(true),
            Annotation::Negative => Some(false),
            Annotation::Missing => None,
        }
    }
}

/// Annotations of one record across the ordered annotator panel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AnnotationPattern(pub Vec<Annotation>);

impl AnnotationPattern {
    pub fn missing(len: usize) -> Self {
        Self(vec![Annotation::Missing; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> Annotation {
        self.0[i]
    }

    pub fn is_all_missing(&self) -> bool {
        self.0.iter().all(|a| a.is_missing())
    }

    /// (availability mask, positive mask) packed into bit sets.
    pub fn masks(&self) -> (u32, u32) {
        let mut avail = 0u32;
        let mut pos = 0u32;
        for (i, a) in self.0.iter().enumerate() {
            match a {
                Annotation::Positive => {
                    avail |= 1 << i;
                    pos |= 1 << i;
                }
                Annotation::Negative => avail |= 1 << i,
                Annotation::Missing => {}
            }
        }
        (avail, pos)
    }
}

impl fmt::Display for AnnotationPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.0 {
            let c = match a {
                Annotation::Positive => '1',
                Annotation::Negative => '0',
                Annotation::Missing => '.',
            };
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRecord {
    pub record_id: String,
    pub gold: Class,
    pub annotations: AnnotationPattern,
}

/// Gold-labeled records annotated by an ordered panel.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSet {
    panel: Vec<String>,
    records: Vec<ValidationRecord>,
}

impl ValidationSet {
    pub fn new(panel: Vec<String>, records: Vec<ValidationRecord>) -> Result<Self> {
        let mut names = HashSet::new();
        for p in &panel {
            if !names.insert(p.as_str()) {
                return Err(domain(format!("annotator `{p}` listed twice in panel")));
            }
        }
        let mut ids = HashSet::new();
        for r in &records {
            if !ids.insert(r.record_id.as_str()) {
                return Err(domain(format!("duplicate record_id `{}`", r.record_id)));
            }
            if r.annotations.len() != panel.len() {
                return Err(domain(format!(
                    "record `{}` has {} annotations for a panel of {}",
                    r.record_id,
                    r.annotations.len(),
                    panel.len()
                )));
            }
        }
        let set = Self { panel, records };
        for class in Class::BOTH {
            if set.class_count(class) == 0 {
                return Err(domain(format!("validation set has no {class:?} records")));
            }
        }
        Ok(set)
    }

    pub fn panel(&self) -> &[String] {
        &self.panel
    }

    pub fn records(&self) -> &[ValidationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn annotator_index(&self, id: &str) -> Option<usize> {
        self.panel.iter().position(|p| p == id)
    }

    pub fn class_count(&self, class: Class) -> usize {
        self.records.iter().filter(|r| r.gold == class).count()
    }

    /// Bootstrap resample of the records (with replacement). Record ids get
    /// a `~k` suffix so they stay unique. Fails if a class disappears.
    pub fn resample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Self> {
        let n = self.records.len();
        let records = (0..n)
            .map(|k| {
                let src = &self.records[rng.gen_range(0..n)];
                ValidationRecord {
                    record_id: format!("{}~{k}", src.record_id),
                    gold: src.gold,
                    annotations: src.annotations.clone(),
                }
            })
            .collect();
        Self::new(self.panel.clone(), records)
    }
}
