use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const NONE_LABEL: &str = "None";

const DEFAULT_LABELS: &str = include_str!("../../data/labels.txt");

/// Ordered tag inventory. Index order is the on-disk line order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
    none_index: usize,
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() {
                return Err(Error::Config("empty label name".into()));
            }
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate label {l:?}")));
            }
        }
        let none_index = *index
            .get(NONE_LABEL)
            .ok_or_else(|| Error::Config(format!("label set lacks {NONE_LABEL:?}")))?;
        if labels.len() < 2 {
            return Err(Error::Config("label set needs at least one pronoun label besides None".into()));
        }
        Ok(Self {
            labels,
            none_index,
            index,
        })
    }

    /// Parses one label per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// The shipped 17-pronoun inventory plus `None`.
    pub fn default_inventory() -> Self {
        Self::parse(DEFAULT_LABELS).expect("bundled label file is valid")
    }

    pub fn to_text(&self) -> String {
        let mut out = self.labels.join("\n");
        out.push('\n');
        out
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn none_index(&self) -> usize {
        self.none_index
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn names(&self) -> &[String] {
        &self.labels
    }

    pub fn is_none(&self, i: usize) -> bool {
        i == self.none_index
    }
}
