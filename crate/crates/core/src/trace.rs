//! Traces: paired label and reward sequences, plus the JSON Lines trace format.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SrmError};
use crate::label::{Label, PropositionSet};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    labels: Vec<Label>,
    rewards: Vec<f64>,
}

impl Trace {
    pub fn new(labels: Vec<Label>, rewards: Vec<f64>) -> Result<Self> {
        if labels.len() != rewards.len() {
            return Err(SrmError::TraceLengthMismatch {
                labels: labels.len(),
                rewards: rewards.len(),
            });
        }
        Ok(Self { labels, rewards })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn push(&mut self, label: Label, reward: f64) {
        self.labels.push(label);
        self.rewards.push(reward);
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn steps(&self) -> impl Iterator<Item = (Label, f64)> + '_ {
        self.labels.iter().copied().zip(self.rewards.iter().copied())
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// On-disk form of one trace line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub labels: Vec<Vec<String>>,
    pub rewards: Vec<f64>,
}

impl TraceRecord {
    pub fn from_trace(trace: &Trace, props: &PropositionSet) -> Self {
        Self {
            labels: trace.labels().iter().map(|&l| props.names_of(l)).collect(),
            rewards: trace.rewards().to_vec(),
        }
    }

    pub fn to_trace(&self, props: &PropositionSet) -> Result<Trace> {
        let labels = self
            .labels
            .iter()
            .map(|names| props.label(names))
            .collect::<Result<Vec<_>>>()?;
        Trace::new(labels, self.rewards.clone())
    }
}

pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Proposition set spanning every name used in `records`, sorted by name.
pub fn propositions_of(records: &[TraceRecord]) -> Result<PropositionSet> {
    let names: BTreeSet<&str> = records
        .iter()
        .flat_map(|r| r.labels.iter().flatten().map(String::as_str))
        .collect();
    PropositionSet::new(names)
}

pub fn read_traces<R: BufRead>(reader: R, props: &PropositionSet) -> Result<Vec<Trace>> {
    read_records(reader)?.iter().map(|r| r.to_trace(props)).collect()
}

pub fn write_traces<W: Write>(mut writer: W, traces: &[Trace], props: &PropositionSet) -> Result<()> {
    for t in traces {
        serde_json::to_writer(&mut writer, &TraceRecord::from_trace(t, props))?;
        writeln!(writer)?;
    }
    Ok(())
}
