//! Propositions and labels.
//!
//! A [`Label`] is a subset of a [`PropositionSet`], stored as a bitset whose
//! bit `i` stands for the `i`-th proposition name. The numeric value of the
//! bitset is the canonical label order used throughout the crate.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SrmError};

pub const MAX_PROPOSITIONS: usize = 32;

/// Ordered list of distinct proposition names.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct PropositionSet {
    names: Vec<String>,
}

impl PropositionSet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() > MAX_PROPOSITIONS {
            return Err(SrmError::TooManyPropositions(names.len()));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(SrmError::DuplicateProposition(n.clone()));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Bitmask with one bit per proposition.
    pub fn mask(&self) -> u32 {
        if self.names.len() == MAX_PROPOSITIONS {
            u32::MAX
        } else {
            (1u32 << self.names.len()) - 1
        }
    }

    pub fn contains(&self, label: Label) -> bool {
        label.0 & !self.mask() == 0
    }

    pub fn check(&self, label: Label) -> Result<()> {
        if self.contains(label) {
            Ok(())
        } else {
            Err(SrmError::LabelOutOfRange {
                label: label.0,
                size: self.len(),
            })
        }
    }

    /// Builds a label from proposition names.
    pub fn label<I, S>(&self, members: I) -> Result<Label>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut bits = 0u32;
        for m in members {
            let m = m.as_ref();
            let i = self
                .index_of(m)
                .ok_or_else(|| SrmError::UnknownProposition(m.to_string()))?;
            bits |= 1 << i;
        }
        Ok(Label(bits))
    }

    /// Proposition names of a label, in proposition order.
    pub fn names_of(&self, label: Label) -> Vec<String> {
        self.names
            .iter()
            .enumerate()
            .filter(|(i, _)| label.0 & (1 << i) != 0)
            .map(|(_, n)| n.clone())
            .collect()
    }

    /// Human-readable formula for a label, `∅` for the empty label.
    pub fn display(&self, label: Label) -> String {
        if label.is_empty() {
            "∅".to_string()
        } else {
            self.names_of(label).join("∧")
        }
    }

    /// Every label over this set in canonical order. Exponential in `len()`.
    pub fn all_labels(&self) -> impl Iterator<Item = Label> {
        (0..=self.mask() as u64).map(|b| Label(b as u32))
    }
}

impl TryFrom<Vec<String>> for PropositionSet {
    type Error = SrmError;

    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<PropositionSet> for Vec<String> {
    fn from(p: PropositionSet) -> Self {
        p.names
    }
}

/// A subset of the proposition set, as a bitset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Label(pub u32);

impl Label {
    pub const EMPTY: Label = Label(0);

    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        Label(indices.into_iter().fold(0, |acc, i| acc | (1 << i)))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn has(self, index: usize) -> bool {
        self.0 & (1 << index) != 0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == 0 {
            return write!(f, "∅");
        }
        let mut first = true;
        write!(f, "{{")?;
        for i in 0..32 {
            if self.has(i) {
                if !first {
                    write!(f, ",")?;
                }
                write!(f, "p{i}")?;
                first = false;
            }
        }
        write!(f, "}}")
    }
}
