//! The Mining gridworld: collect equipment, then gold or platinum, then sell
//! at the marketplace, avoiding traps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{LabeledMdp, Outcome};
use crate::error::{Result, SrmError};
use crate::label::{Label, PropositionSet};
use crate::machine::{OutputDist, Srm};

/// Six rows by eight columns. `.` is an unlabeled cell and `A` the agent's
/// start (also unlabeled). Moving right ×3, down ×2, left ×2 from the start
/// emits `(∅, E, ∅, P, ∅, ∅, M)`.
pub const DEFAULT_GRID: [&str; 6] = ["..T...T.", "EA.E.G..", "T..TP...", "..M...T.", "..P.....", ".T.....P"];

pub const PROPOSITIONS: [&str; 5] = ["E", "P", "G", "M", "T"];

/// Action indices.
pub const UP: usize = 0;
pub const RIGHT: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;

const MOVES: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    pub grid: Vec<String>,
    pub slip_prob: f64,
    /// Half-width of the reward noise per ore kind (`"G"`, `"P"`).
    pub noise: BTreeMap<String, f64>,
    pub gold_mean: f64,
    pub platinum_mean: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            grid: DEFAULT_GRID.iter().map(|s| s.to_string()).collect(),
            slip_prob: 0.0,
            noise: BTreeMap::from([("G".into(), 0.1), ("P".into(), 0.1)]),
            gold_mean: 1.0,
            platinum_mean: 1.1,
        }
    }
}

impl MiningConfig {
    /// Noise-free rewards.
    pub fn deterministic() -> Self {
        let mut c = Self::default();
        c.noise.values_mut().for_each(|w| *w = 0.0);
        c
    }

    fn noise_of(&self, ore: &str) -> f64 {
        self.noise.get(ore).copied().unwrap_or(0.0)
    }

    pub fn propositions() -> PropositionSet {
        PropositionSet::new(PROPOSITIONS).expect("static propositions are distinct")
    }

    pub fn build_mdp(&self) -> Result<LabeledMdp> {
        if !(0.0..1.0).contains(&self.slip_prob) {
            return Err(SrmError::InvalidConfig(format!(
                "slip_prob {} not in [0,1)",
                self.slip_prob
            )));
        }
        let props = Self::propositions();
        let rows = self.grid.len();
        let cols = self.grid.first().map_or(0, |r| r.chars().count());
        if rows == 0 || cols == 0 || self.grid.iter().any(|r| r.chars().count() != cols) {
            return Err(SrmError::InvalidConfig("grid must be a non-empty rectangle".into()));
        }
        let mut labels = Vec::with_capacity(rows * cols);
        let mut start = None;
        for (r, row) in self.grid.iter().enumerate() {
            for (c, ch) in row.chars().enumerate() {
                let label = match ch {
                    '.' | ' ' => Label::EMPTY,
                    'A' => {
                        if start.replace(r * cols + c).is_some() {
                            return Err(SrmError::InvalidConfig("grid has more than one start cell".into()));
                        }
                        Label::EMPTY
                    }
                    other => props
                        .label([other.to_string()])
                        .map_err(|_| SrmError::InvalidConfig(format!("unknown grid cell `{other}`")))?,
                };
                labels.push(label);
            }
        }
        let start = start.ok_or_else(|| SrmError::InvalidConfig("grid has no start cell `A`".into()))?;

        let target = |s: usize, dir: usize| {
            let (r, c) = ((s / cols) as isize, (s % cols) as isize);
            let (nr, nc) = (r + MOVES[dir].0, c + MOVES[dir].1);
            if nr < 0 || nc < 0 || nr >= rows as isize || nc >= cols as isize {
                s
            } else {
                nr as usize * cols + nc as usize
            }
        };
        let mut outcomes = Vec::with_capacity(rows * cols * 4);
        for s in 0..rows * cols {
            for a in 0..4 {
                let mut row: Vec<Outcome> = Vec::new();
                let mut add = |next: usize, prob: f64| {
                    if prob == 0.0 {
                        return;
                    }
                    match row.iter_mut().find(|o| o.next == next) {
                        Some(o) => o.prob += prob,
                        None => row.push(Outcome {
                            next,
                            prob,
                            label: labels[next],
                        }),
                    }
                };
                add(target(s, a), 1.0 - self.slip_prob);
                add(target(s, (a + 1) % 4), self.slip_prob / 2.0);
                add(target(s, (a + 3) % 4), self.slip_prob / 2.0);
                outcomes.push(row);
            }
        }
        let names = (0..rows * cols)
            .map(|s| format!("r{}c{}", s / cols, s % cols))
            .collect();
        let actions = ["up", "right", "down", "left"].map(String::from).to_vec();
        LabeledMdp::new(props, names, actions, start, outcomes)
    }

    /// Ground-truth reward machine: `E`, then `P` or `G`, then `M` pays the
    /// ore's reward; `T` ends the episode from any state with reward 0.
    pub fn ground_truth(&self) -> Srm {
        let props = Self::propositions();
        let l = |n: &str| props.label([n]).expect("static label");
        let names = ["init", "equipped", "platinum", "gold", "done"]
            .map(String::from)
            .to_vec();
        let mut m = Srm::with_names(props.clone(), names, 0).expect("static machine");
        let (init, eq, plat, gold, done) = (0, 1, 2, 3, 4);
        let set = |m: &mut Srm, from, label, to, out| m.set_transition(from, label, to, out).expect("static machine");
        set(&mut m, init, l("E"), eq, OutputDist::ZERO);
        set(&mut m, eq, l("P"), plat, OutputDist::ZERO);
        set(&mut m, eq, l("G"), gold, OutputDist::ZERO);
        set(
            &mut m,
            plat,
            l("M"),
            done,
            OutputDist::uniform(self.platinum_mean, self.noise_of("P")),
        );
        set(
            &mut m,
            gold,
            l("M"),
            done,
            OutputDist::uniform(self.gold_mean, self.noise_of("G")),
        );
        for v in [init, eq, plat, gold] {
            set(&mut m, v, l("T"), done, OutputDist::ZERO);
        }
        m.set_terminal(done).expect("static machine");
        m
    }

    pub fn build(&self) -> Result<(LabeledMdp, Srm)> {
        Ok((self.build_mdp()?, self.ground_truth()))
    }
}
