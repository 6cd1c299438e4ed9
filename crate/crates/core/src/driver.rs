//! Learning loops that interleave QRM episodes with hypothesis refinement.
//!
//! All four algorithms share [`Learner`]: an episode is played with the
//! current hypothesis; a trace that is not ε-consistent with it is a
//! counterexample and triggers a refinement, after which the Q-table is
//! reinitialized.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::envs::{replay, Episode, EpisodeConfig, LabeledMdp};
use crate::error::{Result, SrmError};
use crate::estimates::{estimates, estimates_asymmetric};
use crate::infer::{infer_minimal_from, shift_repair, Backend, Inference, SolveBudget, SolveStats};
use crate::label::Label;
use crate::machine::{DispersionBound, Srm, StateId};
use crate::qrm::{qrm_episode, QTable, QrmParams};
use crate::trace::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "srmi")]
    Srmi,
    #[serde(rename = "srmi-asym")]
    SrmiAsym,
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "jirp")]
    Jirp,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Srmi => "srmi",
            Algorithm::SrmiAsym => "srmi-asym",
            Algorithm::Baseline => "baseline",
            Algorithm::Jirp => "jirp",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineParams {
    /// Label-matched samples per counterexample, the original included.
    pub samples_per_cx: usize,
    pub max_replay_attempts: usize,
    /// Estimates within this distance are pooled; `None` means `2ε`.
    pub aggregation_radius: Option<f64>,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            samples_per_cx: 20,
            max_replay_attempts: 200,
            aggregation_radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub algorithm: Algorithm,
    pub eps: DispersionBound,
    pub qrm: QrmParams,
    pub episode: EpisodeConfig,
    pub size_cap: usize,
    pub backend: Backend,
    pub budget: SolveBudget,
    pub baseline: BaselineParams,
    /// Bound on stored non-counterexample traces (reservoir sampling); `None` keeps all.
    pub store_cap: Option<usize>,
}

impl LearnerConfig {
    pub fn new(algorithm: Algorithm, eps: DispersionBound, max_steps: usize) -> Self {
        Self {
            algorithm,
            eps,
            qrm: QrmParams::default(),
            episode: EpisodeConfig { max_steps },
            size_cap: 10,
            backend: Backend::Internal,
            budget: SolveBudget::default(),
            baseline: BaselineParams::default(),
            store_cap: None,
        }
    }

    /// The dispersion bound actually used: JIRP always runs with `ε = 0`.
    pub fn effective_eps(&self) -> DispersionBound {
        match self.algorithm {
            Algorithm::Jirp => DispersionBound::EXACT,
            _ => self.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterexampleKind {
    /// Repaired by shifting outputs on the same structure.
    Type1,
    /// Required a new structure.
    Type2,
    /// Baseline only: replay could not collect enough samples.
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    TimedOut { size: usize },
    CapHit { cap: usize },
    Failed { reason: String },
}

impl RunStatus {
    pub fn is_running(&self) -> bool {
        matches!(self, RunStatus::Running)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub episodes: usize,
    pub type1_count: usize,
    pub type2_count: usize,
    pub dropped_count: usize,
    pub replays: usize,
    pub solver: SolveStats,
    /// Hypotheses whose structure repeats an abandoned earlier one.
    pub revisits: usize,
}

/// One line of the event stream. Solver effort is the deterministic node
/// count; wall time is only in [`Counters`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub episode: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub steps: usize,
    pub counterexample: Option<CounterexampleKind>,
    pub hypothesis_size: usize,
    pub solver_calls: u64,
    pub solver_nodes: u64,
    pub replays: usize,
    pub status: RunStatus,
}

/// Per-run learner state.
#[derive(Debug, Clone)]
pub struct Learner {
    cfg: LearnerConfig,
    hypothesis: Srm,
    auxiliary: Option<Srm>,
    counterexamples: Vec<Trace>,
    /// Consistent traces; the full store is these plus the counterexamples.
    pool: Vec<Trace>,
    pool_seen: usize,
    /// Baseline: per-position mean traces before aggregation.
    mean_traces: Vec<Trace>,
    q: QTable,
    since_reset: usize,
    counters: Counters,
    status: RunStatus,
    structures: Vec<Vec<(StateId, Label, StateId)>>,
}

impl Learner {
    pub fn new(cfg: LearnerConfig, env: &LabeledMdp) -> Result<Self> {
        cfg.qrm.validate()?;
        if cfg.size_cap == 0 {
            return Err(SrmError::InvalidConfig("size_cap must be at least 1".into()));
        }
        if cfg.algorithm == Algorithm::Baseline && cfg.baseline.samples_per_cx == 0 {
            return Err(SrmError::InvalidConfig("samples_per_cx must be at least 1".into()));
        }
        let hypothesis = Srm::new(env.propositions().clone(), 1)?;
        let auxiliary = (cfg.algorithm == Algorithm::SrmiAsym).then(|| hypothesis.clone());
        let q = QTable::for_machine(&hypothesis, env, &cfg.qrm);
        let structures = vec![hypothesis.structure_key()];
        Ok(Self {
            cfg,
            hypothesis,
            auxiliary,
            counterexamples: Vec::new(),
            pool: Vec::new(),
            pool_seen: 0,
            mean_traces: Vec::new(),
            q,
            since_reset: 0,
            counters: Counters::default(),
            status: RunStatus::Running,
            structures,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    /// Replaces the solver budget for subsequent refinements.
    pub fn set_budget(&mut self, budget: SolveBudget) {
        self.cfg.budget = budget;
    }

    pub fn hypothesis(&self) -> &Srm {
        &self.hypothesis
    }

    /// Mean-estimated machine driving exploitation in the asymmetric variant.
    pub fn auxiliary(&self) -> Option<&Srm> {
        self.auxiliary.as_ref()
    }

    pub fn counterexamples(&self) -> &[Trace] {
        &self.counterexamples
    }

    /// The trace store: counterexamples, then the retained consistent traces.
    pub fn store(&self) -> impl Iterator<Item = &Trace> + '_ {
        self.counterexamples.iter().chain(&self.pool)
    }

    pub fn store_len(&self) -> usize {
        self.counterexamples.len() + self.pool.len()
    }

    pub fn q(&self) -> &QTable {
        &self.q
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn status(&self) -> &RunStatus {
        &self.status
    }

    /// Plays one episode and refines the hypothesis on a counterexample.
    pub fn step(&mut self, env: &LabeledMdp, truth: &Srm, rng: &mut dyn RngCore) -> Result<StepEvent> {
        if !self.status.is_running() {
            return Err(SrmError::InvalidConfig(format!(
                "run already stopped: {:?}",
                self.status
            )));
        }
        let before = self.counters.solver;
        let replays_before = self.counters.replays;
        let explore = self.cfg.qrm.explore.at(self.since_reset);
        let acting = self.auxiliary.as_ref().unwrap_or(&self.hypothesis);
        let ep = qrm_episode(env, truth, acting, &mut self.q, explore, self.cfg.episode, rng)?;
        self.counters.episodes += 1;
        self.since_reset += 1;

        let eps = self.cfg.effective_eps();
        let counterexample = if self.hypothesis.eps_consistent(&ep.trace, eps)? {
            self.remember(ep.trace.clone(), rng);
            None
        } else {
            let kind = match self.cfg.algorithm {
                Algorithm::Baseline => self.baseline_refine(env, truth, &ep, rng)?,
                _ => self.srmi_refine(ep.trace.clone())?,
            };
            if kind != CounterexampleKind::Dropped && self.status.is_running() {
                self.after_update(env)?;
            }
            Some(kind)
        };
        Ok(StepEvent {
            episode: self.counters.episodes,
            ret: ep.trace.total_reward(),
            steps: ep.trace.len(),
            counterexample,
            hypothesis_size: self.hypothesis.num_states(),
            solver_calls: self.counters.solver.calls - before.calls,
            solver_nodes: self.counters.solver.nodes - before.nodes,
            replays: self.counters.replays - replays_before,
            status: self.status.clone(),
        })
    }

    fn remember(&mut self, trace: Trace, rng: &mut dyn RngCore) {
        self.pool_seen += 1;
        match self.cfg.store_cap {
            Some(cap) if self.pool.len() >= cap => {
                let j = rng.gen_range(0..self.pool_seen);
                if j < cap {
                    self.pool[j] = trace;
                }
            }
            _ => self.pool.push(trace),
        }
    }

    /// `from` is a size below which `traces` is known to have no machine.
    fn infer(&mut self, traces: &[Trace], eps: DispersionBound, from: usize) -> Result<Option<Srm>> {
        let props = self.hypothesis.propositions().clone();
        let res = infer_minimal_from(
            &props,
            traces,
            eps,
            &self.cfg.backend,
            from,
            self.cfg.size_cap,
            &self.cfg.budget,
            &mut self.counters.solver,
        );
        match res {
            Ok(Inference::Found(m)) => Ok(Some(m.canonical_form())),
            Ok(Inference::CapHit { cap }) => {
                self.status = RunStatus::CapHit { cap };
                Ok(None)
            }
            Err(SrmError::Timeout { size }) => {
                self.status = RunStatus::TimedOut { size };
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    fn srmi_refine(&mut self, trace: Trace) -> Result<CounterexampleKind> {
        let eps = self.cfg.effective_eps();
        self.counterexamples.push(trace);
        let (kind, next) = match shift_repair(&self.hypothesis, &self.counterexamples, eps)? {
            Some(z) => (CounterexampleKind::Type1, z),
            None => {
                // X only grows and the hypothesis is minimal for its
                // previous contents, so smaller sizes stay unsatisfiable
                let xs = self.counterexamples.clone();
                let from = self.hypothesis.num_states();
                match self.infer(&xs, eps, from)? {
                    Some(m) => (CounterexampleKind::Type2, m),
                    None => {
                        self.counters.type2_count += 1;
                        return Ok(CounterexampleKind::Type2);
                    }
                }
            }
        };
        match kind {
            CounterexampleKind::Type1 => self.counters.type1_count += 1,
            _ => self.counters.type2_count += 1,
        }
        let store: Vec<&Trace> = self.store().collect();
        if self.cfg.algorithm == Algorithm::SrmiAsym {
            let (h, g) = estimates_asymmetric(&next, store, eps)?;
            self.hypothesis = h;
            self.auxiliary = Some(g);
        } else {
            self.hypothesis = estimates(&next, store, eps)?;
        }
        Ok(kind)
    }

    /// Replays the episode's actions to average out noise, pools nearby
    /// estimates and infers a deterministic machine from the pooled means.
    fn baseline_refine(
        &mut self,
        env: &LabeledMdp,
        truth: &Srm,
        ep: &Episode,
        rng: &mut dyn RngCore,
    ) -> Result<CounterexampleKind> {
        let p = &self.cfg.baseline;
        let labels = ep.trace.labels();
        let mut samples = vec![ep.trace.clone()];
        let mut attempts = 0;
        while samples.len() < p.samples_per_cx {
            if attempts == p.max_replay_attempts {
                self.counters.replays += attempts;
                self.counters.dropped_count += 1;
                log::warn!(
                    "baseline: {} of {} samples after {attempts} replays, dropping counterexample",
                    samples.len(),
                    p.samples_per_cx
                );
                self.remember(ep.trace.clone(), rng);
                return Ok(CounterexampleKind::Dropped);
            }
            attempts += 1;
            let (t, matched) = replay(env, truth, &ep.actions, labels, rng)?;
            if matched {
                samples.push(t);
            }
        }
        self.counters.replays += attempts;
        let k = samples.len() as f64;
        let means = (0..labels.len())
            .map(|i| samples.iter().map(|s| s.rewards()[i]).sum::<f64>() / k)
            .collect();
        self.mean_traces.push(Trace::new(labels.to_vec(), means)?);
        self.counterexamples.push(ep.trace.clone());
        self.counters.type2_count += 1;

        let radius = p.aggregation_radius.unwrap_or(2.0 * self.cfg.eps.value());
        let pooled = aggregate(&self.mean_traces, radius)?;
        if let Some(m) = self.infer(&pooled, DispersionBound::EXACT, 1)? {
            self.hypothesis = m;
        }
        Ok(CounterexampleKind::Type2)
    }

    fn after_update(&mut self, env: &LabeledMdp) -> Result<()> {
        if self.cfg.algorithm != Algorithm::Baseline {
            let eps = self.cfg.effective_eps();
            for x in &self.counterexamples {
                if !self.hypothesis.eps_consistent(x, eps)? {
                    self.status = RunStatus::Failed {
                        reason: "hypothesis inconsistent with a counterexample after update".into(),
                    };
                    return Ok(());
                }
            }
        }
        let key = self.hypothesis.structure_key();
        if self.structures.last() != Some(&key) {
            if self.structures.contains(&key) {
                self.counters.revisits += 1;
                log::warn!(
                    "hypothesis structure revisited after {} episodes",
                    self.counters.episodes
                );
            }
            self.structures.push(key);
        }
        let acting = self.auxiliary.as_ref().unwrap_or(&self.hypothesis);
        self.q = QTable::for_machine(acting, env, &self.cfg.qrm);
        self.since_reset = 0;
        Ok(())
    }
}

/// Sorts all reward values, groups each run of values within `radius` of the
/// group's smallest member, and replaces every value by its group's midrange.
pub fn aggregate(traces: &[Trace], radius: f64) -> Result<Vec<Trace>> {
    let mut values: Vec<f64> = traces.iter().flat_map(|t| t.rewards().iter().copied()).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut reps: Vec<(f64, f64)> = Vec::new();
    let mut i = 0;
    while i < values.len() {
        let lo = values[i];
        let mut j = i;
        while j + 1 < values.len() && values[j + 1] - lo <= radius {
            j += 1;
        }
        let mid = lo + (values[j] - lo) / 2.0;
        for &v in &values[i..=j] {
            reps.push((v, mid));
        }
        i = j + 1;
    }
    let lookup = |r: f64| {
        let k = reps.binary_search_by(|(v, _)| v.total_cmp(&r)).expect("value present");
        reps[k].1
    };
    traces
        .iter()
        .map(|t| Trace::new(t.labels().to_vec(), t.rewards().iter().map(|&r| lookup(r)).collect()))
        .collect()
}
