//! Q-learning over the product of an environment and a hypothesis machine,
//! with counterfactual updates for every machine state on each transition.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::envs::{Episode, EpisodeConfig, LabeledMdp};
use crate::error::{Result, SrmError};
use crate::label::Label;
use crate::machine::Srm;
use crate::trace::Trace;

/// Exploration rate as a function of episodes since the Q-table was last reset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExploreSchedule {
    Constant { eps: f64 },
    Linear { start: f64, end: f64, episodes: usize },
}

impl Default for ExploreSchedule {
    fn default() -> Self {
        ExploreSchedule::Constant { eps: 0.15 }
    }
}

impl ExploreSchedule {
    pub fn at(&self, episode: usize) -> f64 {
        match *self {
            ExploreSchedule::Constant { eps } => eps,
            ExploreSchedule::Linear { start, end, episodes } => {
                if episodes == 0 || episode >= episodes {
                    end
                } else {
                    start + (end - start) * episode as f64 / episodes as f64
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QrmParams {
    pub alpha: f64,
    pub gamma: f64,
    pub explore: ExploreSchedule,
}

impl Default for QrmParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.95,
            explore: ExploreSchedule::default(),
        }
    }
}

impl QrmParams {
    pub fn validate(&self) -> Result<()> {
        let eps_ok = |e: f64| (0.0..=1.0).contains(&e);
        let explore_ok = match self.explore {
            ExploreSchedule::Constant { eps } => eps_ok(eps),
            ExploreSchedule::Linear { start, end, .. } => eps_ok(start) && eps_ok(end),
        };
        if !(self.alpha > 0.0 && self.alpha <= 1.0) || !(0.0..1.0).contains(&self.gamma) || !explore_ok {
            return Err(SrmError::InvalidConfig(format!("bad QRM parameters {self:?}")));
        }
        Ok(())
    }
}

/// One q-function per machine state, stored densely as
/// `[machine_state][env_state][action]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    machine_states: usize,
    env_states: usize,
    actions: usize,
    alpha: f64,
    gamma: f64,
    values: Vec<f64>,
}

impl QTable {
    pub fn new(machine_states: usize, env_states: usize, actions: usize, alpha: f64, gamma: f64) -> Self {
        Self {
            machine_states,
            env_states,
            actions,
            alpha,
            gamma,
            values: vec![0.0; machine_states * env_states * actions],
        }
    }

    pub fn for_machine(machine: &Srm, env: &LabeledMdp, params: &QrmParams) -> Self {
        Self::new(
            machine.num_states(),
            env.num_states(),
            env.num_actions(),
            params.alpha,
            params.gamma,
        )
    }

    pub fn machine_states(&self) -> usize {
        self.machine_states
    }

    fn index(&self, v: usize, s: usize, a: usize) -> usize {
        (v * self.env_states + s) * self.actions + a
    }

    pub fn get(&self, v: usize, s: usize, a: usize) -> f64 {
        self.values[self.index(v, s, a)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn row(&self, v: usize, s: usize) -> &[f64] {
        let i = self.index(v, s, 0);
        &self.values[i..i + self.actions]
    }

    pub fn max(&self, v: usize, s: usize) -> f64 {
        self.row(v, s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action, ties broken uniformly at random.
    pub fn greedy(&self, v: usize, s: usize, rng: &mut dyn RngCore) -> usize {
        let row = self.row(v, s);
        let best = self.max(v, s);
        let ties = row.iter().filter(|&&x| x == best).count();
        if ties == 1 {
            return row.iter().position(|&x| x == best).expect("max is in row");
        }
        let pick = rng.gen_range(0..ties);
        row.iter()
            .enumerate()
            .filter(|(_, &x)| x == best)
            .nth(pick)
            .map(|(a, _)| a)
            .expect("pick < ties")
    }

    pub fn epsilon_greedy(&self, v: usize, s: usize, explore: f64, rng: &mut dyn RngCore) -> usize {
        if explore > 0.0 && rng.gen::<f64>() < explore {
            rng.gen_range(0..self.actions)
        } else {
            self.greedy(v, s, rng)
        }
    }
}

/// Updates `Q^v(s, a)` for every machine state `v` of `hypothesis` using the
/// hypothesis' output mean on `label` as the reward. When `done` the target
/// does not bootstrap. Returns the number of entries touched.
pub fn qrm_update(
    q: &mut QTable,
    hypothesis: &Srm,
    (s, a, next): (usize, usize, usize),
    label: Label,
    done: bool,
) -> usize {
    debug_assert_eq!(q.machine_states, hypothesis.num_states());
    for v in 0..q.machine_states {
        let t = hypothesis.step(v, label);
        let future = if done { 0.0 } else { q.gamma * q.max(t.to, next) };
        let i = q.index(v, s, a);
        q.values[i] = (1.0 - q.alpha) * q.values[i] + q.alpha * (t.output.mean + future);
    }
    q.machine_states
}

/// Runs one episode acting ε-greedily on `Q^u` where `u` is the hypothesis'
/// current state. Rewards are sampled from `truth`; updates use `hypothesis`
/// means. `hypothesis` must be in canonical form and sized like `q`.
pub fn qrm_episode(
    env: &LabeledMdp,
    truth: &Srm,
    hypothesis: &Srm,
    q: &mut QTable,
    explore: f64,
    cfg: EpisodeConfig,
    rng: &mut dyn RngCore,
) -> Result<Episode> {
    if env.propositions() != truth.propositions() || truth.propositions() != hypothesis.propositions() {
        return Err(SrmError::PropositionMismatch);
    }
    if q.machine_states != hypothesis.num_states() {
        return Err(SrmError::InvalidConfig(format!(
            "Q-table has {} machine states, hypothesis {}",
            q.machine_states,
            hypothesis.num_states()
        )));
    }
    let mut s = env.initial();
    let mut u = hypothesis.initial();
    let mut v = truth.initial();
    let mut ep = Episode {
        trace: Trace::empty(),
        actions: Vec::new(),
        states: vec![s],
    };
    for _ in 0..cfg.max_steps {
        let a = q.epsilon_greedy(u, s, explore, rng);
        let (next, label) = env.step(s, a, rng)?;
        let t = truth.step(v, label);
        let reward = t.output.sample(rng);
        let done = truth.is_terminal(t.to);
        qrm_update(q, hypothesis, (s, a, next), label, done);
        ep.trace.push(label, reward);
        ep.actions.push(a);
        ep.states.push(next);
        s = next;
        v = t.to;
        u = hypothesis.delta(u, label);
        if done {
            break;
        }
    }
    Ok(ep)
}

/// Return of one greedy (explore = 0) episode, without learning.
pub fn greedy_episode(
    env: &LabeledMdp,
    truth: &Srm,
    hypothesis: &Srm,
    q: &QTable,
    cfg: EpisodeConfig,
    rng: &mut dyn RngCore,
) -> Result<Episode> {
    let mut s = env.initial();
    let mut u = hypothesis.initial();
    let mut v = truth.initial();
    let mut ep = Episode {
        trace: Trace::empty(),
        actions: Vec::new(),
        states: vec![s],
    };
    for _ in 0..cfg.max_steps {
        let a = q.greedy(u, s, rng);
        let (next, label) = env.step(s, a, rng)?;
        let t = truth.step(v, label);
        ep.trace.push(label, t.output.sample(rng));
        ep.actions.push(a);
        ep.states.push(next);
        s = next;
        v = t.to;
        u = hypothesis.delta(u, label);
        if truth.is_terminal(v) {
            break;
        }
    }
    Ok(ep)
}
