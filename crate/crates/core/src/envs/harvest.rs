//! The Harvest crop cycle: plant, water, harvest, sell. The crop quality
//! evolves as a Markov chain and sets the harvest reward.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{LabeledMdp, Outcome};
use crate::error::{Result, SrmError};
use crate::label::{Label, PropositionSet};
use crate::machine::{OutputDist, Srm};

pub const ACTIONS: [&str; 4] = ["P", "W", "H", "S"];
pub const QUALITIES: [&str; 3] = ["G", "M", "B"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarvestConfig {
    /// Row-stochastic transition matrix over qualities, in `G, M, B` order.
    pub quality_dynamics: [[f64; 3]; 3],
    pub harvest_means: BTreeMap<String, f64>,
    pub noise_half_width: f64,
    /// Reward for an action that breaks the cycle.
    pub penalty: f64,
    pub initial_quality: String,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        Self {
            quality_dynamics: [[0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.2, 0.2, 0.6]],
            harvest_means: BTreeMap::from([("G".into(), 20.0), ("M".into(), 10.0), ("B".into(), 2.0)]),
            noise_half_width: 1.0,
            penalty: -1.0,
            initial_quality: "G".into(),
        }
    }
}

impl HarvestConfig {
    pub fn deterministic() -> Self {
        Self {
            noise_half_width: 0.0,
            ..Self::default()
        }
    }

    pub fn propositions() -> PropositionSet {
        PropositionSet::new(ACTIONS.iter().chain(QUALITIES.iter()).copied()).expect("static propositions")
    }

    /// Label of taking `action` while the crop has `quality`.
    pub fn label(action: usize, quality: usize) -> Label {
        Label::from_indices([action, ACTIONS.len() + quality])
    }

    pub fn build_mdp(&self) -> Result<LabeledMdp> {
        for (q, row) in self.quality_dynamics.iter().enumerate() {
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
                return Err(SrmError::InvalidConfig(format!(
                    "quality_dynamics row {} is not a distribution",
                    QUALITIES[q]
                )));
            }
        }
        let initial = QUALITIES
            .iter()
            .position(|q| *q == self.initial_quality)
            .ok_or_else(|| SrmError::InvalidConfig(format!("unknown quality `{}`", self.initial_quality)))?;
        let mut outcomes = Vec::new();
        for q in 0..3 {
            for a in 0..ACTIONS.len() {
                let row = (0..3)
                    .filter(|&n| self.quality_dynamics[q][n] > 0.0)
                    .map(|n| Outcome {
                        next: n,
                        prob: self.quality_dynamics[q][n],
                        label: Self::label(a, q),
                    })
                    .collect();
                outcomes.push(row);
            }
        }
        LabeledMdp::new(
            Self::propositions(),
            QUALITIES.map(String::from).to_vec(),
            ACTIONS.map(String::from).to_vec(),
            initial,
            outcomes,
        )
    }

    /// Ground-truth machine: the correct next action advances the cycle (the
    /// harvest pays by quality); any other action pays `penalty` and restarts.
    pub fn ground_truth(&self) -> Result<Srm> {
        let names = ["plant", "water", "harvest", "sell"].map(String::from).to_vec();
        let mut m = Srm::with_names(Self::propositions(), names, 0)?;
        for phase in 0..4 {
            for a in 0..ACTIONS.len() {
                for (q, qname) in QUALITIES.iter().enumerate() {
                    let label = Self::label(a, q);
                    if a == phase {
                        let out = if ACTIONS[a] == "H" {
                            let mean = *self.harvest_means.get(*qname).ok_or_else(|| {
                                SrmError::InvalidConfig(format!("missing harvest mean for `{qname}`"))
                            })?;
                            OutputDist::uniform(mean, self.noise_half_width)
                        } else {
                            OutputDist::ZERO
                        };
                        m.set_transition(phase, label, (phase + 1) % 4, out)?;
                    } else {
                        m.set_transition(phase, label, 0, OutputDist::deterministic(self.penalty))?;
                    }
                }
            }
        }
        Ok(m)
    }

    pub fn build(&self) -> Result<(LabeledMdp, Srm)> {
        Ok((self.build_mdp()?, self.ground_truth()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{optimal_return, run_episode, EpisodeConfig, ScriptedPolicy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn labels_carry_action_and_quality() {
        let env = HarvestConfig::default().build_mdp().unwrap();
        let props = HarvestConfig::propositions();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, l) = env.step(env.initial(), 2, &mut rng).unwrap();
        assert_eq!(props.names_of(l), vec!["H", "G"]);
        assert_eq!(env.alphabet().len(), 12);
    }

    #[test]
    fn cycle_pays_and_breaking_it_costs() {
        let (env, truth) = HarvestConfig::deterministic().build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ScriptedPolicy::new(vec![0, 1, 2, 3, 1]);
        let ep = run_episode(&env, &truth, &mut p, EpisodeConfig { max_steps: 5 }, &mut rng).unwrap();
        let r = ep.trace.rewards();
        assert_eq!(r[0], 0.0);
        assert_eq!(r[1], 0.0);
        assert!([20.0, 10.0, 2.0].contains(&r[2]));
        assert_eq!(r[3], 0.0);
        assert_eq!(r[4], -1.0);
    }

    #[test]
    fn rejects_bad_dynamics() {
        let mut c = HarvestConfig::default();
        c.quality_dynamics[1] = [0.5, 0.6, 0.0];
        assert!(c.build_mdp().is_err());
    }

    #[test]
    fn optimum_is_repeated_cycles() {
        let (env, truth) = HarvestConfig::default().build().unwrap();
        // One cycle in four steps from quality G: the harvest happens after
        // two quality transitions.
        let v4 = optimal_return(&env, &truth, 4);
        let p = HarvestConfig::default().quality_dynamics;
        let means = [20.0, 10.0, 2.0];
        let expect: f64 = (0..3)
            .flat_map(|a| (0..3).map(move |b| (a, b)))
            .map(|(a, b)| p[0][a] * p[a][b] * means[b])
            .sum();
        assert!((v4 - expect).abs() < 1e-9, "{v4} vs {expect}");
        let v100 = optimal_return(&env, &truth, 100);
        assert!(v100 > 24.0 * 10.0 && v100 < 25.0 * 20.0, "{v100}");
    }
}
