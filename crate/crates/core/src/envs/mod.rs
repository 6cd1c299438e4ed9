//! Labeled MDPs and the environments used in experiments.
//!
//! Environments are immutable tabular descriptions; the mutable part of an
//! episode is just the current state index, which callers carry around.

pub mod harvest;
pub mod mining;

pub use harvest::{HarvestConfig, QUALITIES};
pub use mining::{MiningConfig, DEFAULT_GRID};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SrmError};
use crate::label::{Label, PropositionSet};
use crate::machine::Srm;
use crate::trace::Trace;

/// One possible successor of a state-action pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub next: usize,
    pub prob: f64,
    pub label: Label,
}

/// A finite MDP whose transitions emit labels.
#[derive(Debug, Clone)]
pub struct LabeledMdp {
    props: PropositionSet,
    state_names: Vec<String>,
    action_names: Vec<String>,
    initial: usize,
    /// Indexed by `s * num_actions + a`.
    outcomes: Vec<Vec<Outcome>>,
}

impl LabeledMdp {
    pub fn new(
        props: PropositionSet,
        state_names: Vec<String>,
        action_names: Vec<String>,
        initial: usize,
        outcomes: Vec<Vec<Outcome>>,
    ) -> Result<Self> {
        let (ns, na) = (state_names.len(), action_names.len());
        if ns == 0 || na == 0 {
            return Err(SrmError::InvalidConfig("an MDP needs states and actions".into()));
        }
        if initial >= ns {
            return Err(SrmError::InvalidConfig(format!("initial state {initial} out of range")));
        }
        if outcomes.len() != ns * na {
            return Err(SrmError::InvalidConfig(format!(
                "expected {} outcome rows, got {}",
                ns * na,
                outcomes.len()
            )));
        }
        for (i, row) in outcomes.iter().enumerate() {
            let total: f64 = row.iter().map(|o| o.prob).sum();
            if (total - 1.0).abs() > 1e-9 || row.iter().any(|o| o.prob < 0.0 || o.next >= ns) {
                return Err(SrmError::InvalidConfig(format!(
                    "transition row for state {} action {} is not a distribution",
                    i / na,
                    i % na
                )));
            }
            for o in row {
                props.check(o.label)?;
            }
        }
        Ok(Self {
            props,
            state_names,
            action_names,
            initial,
            outcomes,
        })
    }

    pub fn propositions(&self) -> &PropositionSet {
        &self.props
    }

    pub fn num_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn num_actions(&self) -> usize {
        self.action_names.len()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn state_name(&self, s: usize) -> &str {
        &self.state_names[s]
    }

    pub fn action_names(&self) -> &[String] {
        &self.action_names
    }

    pub fn outcomes(&self, s: usize, a: usize) -> &[Outcome] {
        &self.outcomes[s * self.num_actions() + a]
    }

    /// Labels this MDP can emit, in canonical order.
    pub fn alphabet(&self) -> Vec<Label> {
        let mut ls: Vec<Label> = self.outcomes.iter().flatten().map(|o| o.label).collect();
        ls.sort();
        ls.dedup();
        ls
    }

    /// Samples a successor state and its label.
    pub fn step(&self, s: usize, a: usize, rng: &mut dyn RngCore) -> Result<(usize, Label)> {
        if a >= self.num_actions() {
            return Err(SrmError::InvalidAction {
                action: a,
                actions: self.num_actions(),
            });
        }
        let row = self.outcomes(s, a);
        if row.len() == 1 {
            return Ok((row[0].next, row[0].label));
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for o in row {
            acc += o.prob;
            if u < acc {
                return Ok((o.next, o.label));
            }
        }
        let last = row.last().expect("rows are non-empty distributions");
        Ok((last.next, last.label))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub max_steps: usize,
}

/// Chooses actions during an episode.
pub trait Policy {
    fn act(&mut self, env_state: usize, rng: &mut dyn RngCore) -> usize;
}

impl<F: FnMut(usize, &mut dyn RngCore) -> usize> Policy for F {
    fn act(&mut self, env_state: usize, rng: &mut dyn RngCore) -> usize {
        self(env_state, rng)
    }
}

/// Plays a fixed action script, then repeats its last action.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    actions: Vec<usize>,
    next: usize,
}

impl ScriptedPolicy {
    pub fn new(actions: Vec<usize>) -> Self {
        Self { actions, next: 0 }
    }
}

impl Policy for ScriptedPolicy {
    fn act(&mut self, _env_state: usize, _rng: &mut dyn RngCore) -> usize {
        let a = self.actions[self.next.min(self.actions.len() - 1)];
        self.next += 1;
        a
    }
}

/// A completed episode: the observed trace plus the actions and MDP states behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub trace: Trace,
    pub actions: Vec<usize>,
    pub states: Vec<usize>,
}

/// Runs one episode. The ground-truth machine advances on each emitted label
/// and its output is sampled for the reward; the episode stops after
/// `max_steps` or once the machine enters a terminal state.
pub fn run_episode(
    env: &LabeledMdp,
    truth: &Srm,
    policy: &mut dyn Policy,
    cfg: EpisodeConfig,
    rng: &mut dyn RngCore,
) -> Result<Episode> {
    if env.propositions() != truth.propositions() {
        return Err(SrmError::PropositionMismatch);
    }
    let mut s = env.initial();
    let mut v = truth.initial();
    let mut ep = Episode {
        trace: Trace::empty(),
        actions: Vec::new(),
        states: vec![s],
    };
    for _ in 0..cfg.max_steps {
        let a = policy.act(s, rng);
        let (next, label) = env.step(s, a, rng)?;
        let t = truth.step(v, label);
        ep.trace.push(label, t.output.sample(rng));
        ep.actions.push(a);
        ep.states.push(next);
        s = next;
        v = t.to;
        if truth.is_terminal(v) {
            break;
        }
    }
    Ok(ep)
}

/// Re-executes a recorded action sequence with fresh randomness. `matched`
/// reports whether the new label sequence equals `original`'s.
pub fn replay(
    env: &LabeledMdp,
    truth: &Srm,
    actions: &[usize],
    original: &[Label],
    rng: &mut dyn RngCore,
) -> Result<(Trace, bool)> {
    let mut script = ScriptedPolicy::new(actions.to_vec());
    let ep = if actions.is_empty() {
        Episode {
            trace: Trace::empty(),
            actions: vec![],
            states: vec![env.initial()],
        }
    } else {
        run_episode(
            env,
            truth,
            &mut script,
            EpisodeConfig {
                max_steps: actions.len(),
            },
            rng,
        )?
    };
    let matched = ep.trace.labels() == original;
    Ok((ep.trace, matched))
}

/// Episode length `2^(|M|+1) (|T|+1) - 1` sufficient for observing structural
/// counterexamples, or `None` if it overflows.
pub fn episode_length_bound(mdp_size: usize, srm_size: usize) -> Option<u64> {
    let pow = 1u64.checked_shl(u32::try_from(mdp_size + 1).ok()?)?;
    pow.checked_mul(srm_size as u64 + 1)?.checked_sub(1)
}

/// Expected undiscounted return of an optimal policy over `horizon` steps, by
/// backward induction on the product of `env` and `truth` (terminal machine
/// states absorb with zero reward).
pub fn optimal_return(env: &LabeledMdp, truth: &Srm, horizon: usize) -> f64 {
    let (ns, nv, na) = (env.num_states(), truth.num_states(), env.num_actions());
    let idx = |s: usize, v: usize| s * nv + v;
    let mut value = vec![0.0; ns * nv];
    for _ in 0..horizon {
        let mut next = vec![0.0; ns * nv];
        for s in 0..ns {
            for v in 0..nv {
                if truth.is_terminal(v) {
                    continue;
                }
                let mut best = f64::NEG_INFINITY;
                for a in 0..na {
                    let q: f64 = env
                        .outcomes(s, a)
                        .iter()
                        .map(|o| {
                            let t = truth.step(v, o.label);
                            o.prob * (t.output.mean + value[idx(o.next, t.to)])
                        })
                        .sum();
                    best = best.max(q);
                }
                next[idx(s, v)] = best;
            }
        }
        value = next;
    }
    value[idx(env.initial(), truth.initial())]
}

/// Expected `horizon`-step return, under `truth`, of the policy that is
/// optimal for `hypothesis` (backward induction on env × hypothesis, then
/// exact evaluation on env × hypothesis × truth).
pub fn policy_return(env: &LabeledMdp, truth: &Srm, hypothesis: &Srm, horizon: usize) -> f64 {
    let (ns, nh, nv, na) = (
        env.num_states(),
        hypothesis.num_states(),
        truth.num_states(),
        env.num_actions(),
    );
    // plan[t][s * nh + u]: greedy action with t steps to go
    let mut plan = Vec::with_capacity(horizon);
    let mut value = vec![0.0; ns * nh];
    for _ in 0..horizon {
        let mut next = vec![0.0; ns * nh];
        let mut act = vec![0usize; ns * nh];
        for s in 0..ns {
            for u in 0..nh {
                let mut best = (f64::NEG_INFINITY, 0);
                for a in 0..na {
                    let q: f64 = env
                        .outcomes(s, a)
                        .iter()
                        .map(|o| {
                            let t = hypothesis.step(u, o.label);
                            o.prob * (t.output.mean + value[o.next * nh + t.to])
                        })
                        .sum();
                    if q > best.0 {
                        best = (q, a);
                    }
                }
                next[s * nh + u] = best.0;
                act[s * nh + u] = best.1;
            }
        }
        value = next;
        plan.push(act);
    }
    let idx = |s: usize, u: usize, v: usize| (s * nh + u) * nv + v;
    let mut eval = vec![0.0; ns * nh * nv];
    for act in &plan {
        let mut next = vec![0.0; ns * nh * nv];
        for s in 0..ns {
            for u in 0..nh {
                for v in 0..nv {
                    if truth.is_terminal(v) {
                        continue;
                    }
                    let a = act[s * nh + u];
                    next[idx(s, u, v)] = env
                        .outcomes(s, a)
                        .iter()
                        .map(|o| {
                            let t = truth.step(v, o.label);
                            o.prob * (t.output.mean + eval[idx(o.next, hypothesis.delta(u, o.label), t.to)])
                        })
                        .sum();
                }
            }
        }
        eval = next;
    }
    eval[idx(env.initial(), hypothesis.initial(), truth.initial())]
}
