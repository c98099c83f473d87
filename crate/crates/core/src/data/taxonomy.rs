use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repcount::EventKind;

/// Shipped four-exercise, 40-class label taxonomy.
pub const REFERENCE_TAXONOMY: &str = include_str!("../../data/taxonomy.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exercise {
    pub name: String,
    pub video_classes: Vec<String>,
    /// Frame-level annotation vocabulary and the generic kind of each entry.
    pub frame_classes: BTreeMap<String, EventKind>,
}

/// Exercises, their video-level classes and frame-level vocabularies.
/// Video-level classes are addressed as `"<exercise>/<class>"`; ids follow
/// file order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub name: String,
    pub version: u32,
    #[serde(default)]
    pub notes: Vec<String>,
    pub exercises: Vec<Exercise>,
}

impl Taxonomy {
    pub fn from_json(s: &str) -> Result<Self> {
        let t: Taxonomy = serde_json::from_str(s)?;
        let labels = t.class_labels();
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::config(format!("taxonomy lists class {l:?} twice")));
            }
        }
        Ok(t)
    }

    pub fn reference() -> &'static Self {
        static CELL: OnceLock<Taxonomy> = OnceLock::new();
        CELL.get_or_init(|| Self::from_json(REFERENCE_TAXONOMY).expect("shipped taxonomy parses"))
    }

    /// All qualified class labels in id order.
    pub fn class_labels(&self) -> Vec<String> {
        self.exercises.iter().flat_map(|e| e.video_classes.iter().map(move |c| format!("{}/{c}", e.name))).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.exercises.iter().map(|e| e.video_classes.len()).sum()
    }

    pub fn class_id(&self, label: &str) -> Option<usize> {
        self.class_labels().iter().position(|l| l == label)
    }

    /// Exercise that owns a qualified class label.
    pub fn exercise_of(&self, label: &str) -> Option<&str> {
        let (ex, class) = label.split_once('/')?;
        self.exercises
            .iter()
            .find(|e| e.name == ex && e.video_classes.iter().any(|c| c == class))
            .map(|e| e.name.as_str())
    }

    pub fn exercise(&self, name: &str) -> Option<&Exercise> {
        self.exercises.iter().find(|e| e.name == name)
    }
}
