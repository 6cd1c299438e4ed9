//! Experiment orchestration: configuration, seeded runs, metrics and artifacts.
//!
//! Every seed owns one ChaCha8 stream family; episode `k` of a seed draws
//! from stream `k`, so a run is a pure function of its config and seed.

pub mod metrics;

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::{Algorithm, BaselineParams, Counters, Learner, LearnerConfig, RunStatus, StepEvent};
use crate::envs::{optimal_return, EpisodeConfig, HarvestConfig, LabeledMdp, MiningConfig};
use crate::error::{Result, SrmError};
use crate::infer::{Backend, SolveBudget};
use crate::io::{machine_to_json, to_dot};
use crate::machine::{DispersionBound, Srm};
use crate::qrm::QrmParams;
use crate::trace::Trace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Mining(MiningConfig),
    Harvest(HarvestConfig),
}

impl EnvConfig {
    pub fn build(&self) -> Result<(LabeledMdp, Srm)> {
        match self {
            EnvConfig::Mining(c) => c.build(),
            EnvConfig::Harvest(c) => c.build(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EnvConfig::Mining(_) => "mining",
            EnvConfig::Harvest(_) => "harvest",
        }
    }
}

fn default_timeout() -> f64 {
    600.0
}

fn default_threshold() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub algorithm: Algorithm,
    pub env: EnvConfig,
    pub eps: DispersionBound,
    #[serde(default)]
    pub qrm: QrmParams,
    pub episodes: usize,
    pub max_steps: usize,
    pub size_cap: usize,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub budget: SolveBudget,
    #[serde(default)]
    pub baseline: BaselineParams,
    #[serde(default)]
    pub store_cap: Option<usize>,
    pub seeds: Vec<u64>,
    /// Wall-clock limit per seed, seconds.
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Fraction of the optimum the rolling mean must reach.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// End a seed's run as soon as it converges.
    #[serde(default)]
    pub stop_on_convergence: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(SrmError::InvalidConfig("seeds must be non-empty".into()));
        }
        if self.episodes == 0 || self.max_steps == 0 {
            return Err(SrmError::InvalidConfig(
                "episodes and max_steps must be positive".into(),
            ));
        }
        if !(self.timeout_secs > 0.0) || !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(SrmError::InvalidConfig("bad timeout or threshold".into()));
        }
        self.qrm.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn learner_config(&self) -> LearnerConfig {
        LearnerConfig {
            algorithm: self.algorithm,
            eps: self.eps,
            qrm: self.qrm,
            episode: EpisodeConfig {
                max_steps: self.max_steps,
            },
            size_cap: self.size_cap,
            backend: self.backend.clone(),
            budget: self.budget,
            baseline: self.baseline.clone(),
            store_cap: self.store_cap,
        }
    }
}

/// Why a seed's run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    EpisodeCap,
    Converged,
    SolverTimeout,
    CapHit,
    WallClock,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub episodes: usize,
    pub end: EndReason,
    pub converged: bool,
    pub episodes_to_threshold: Option<usize>,
    pub final_rolling: f64,
    pub timed_out: bool,
    pub cap_hit: bool,
    pub hypothesis_size: usize,
    pub counterexamples: usize,
    /// Dropped over all counterexamples; baseline only.
    pub replay_exhaustion_rate: f64,
    pub counters: Counters,
    pub wall_seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub algorithm: Algorithm,
    pub env: EnvConfig,
    pub eps: DispersionBound,
    pub optimum: f64,
    pub threshold: f64,
    pub seeds: Vec<SeedSummary>,
    /// First episode at which the cross-seed median of rolling means reaches the threshold.
    pub median_episodes_to_threshold: Option<usize>,
    pub converged_seeds: usize,
    pub timed_out_seeds: usize,
    pub cap_hit_seeds: usize,
    pub final_median_rolling: f64,
}

impl ExperimentSummary {
    pub fn timeout_rate(&self) -> f64 {
        (self.timed_out_seeds + self.cap_hit_seeds) as f64 / self.seeds.len().max(1) as f64
    }

    /// Mean replay-exhaustion rate over seeds.
    pub fn exhaustion_rate(&self) -> f64 {
        self.seeds.iter().map(|s| s.replay_exhaustion_rate).sum::<f64>() / self.seeds.len().max(1) as f64
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Everything produced by one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub events: Vec<StepEvent>,
    pub returns: Vec<f64>,
    pub rolling: Vec<f64>,
    pub hypothesis: Option<Srm>,
    /// The learner's trace store at the end of the run.
    pub store: Vec<Trace>,
    pub summary: SeedSummary,
}

impl SeedRun {
    /// The event stream as JSONL text.
    pub fn events_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&serde_json::to_string(e).expect("events serialize"));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub summary: ExperimentSummary,
    pub runs: Vec<SeedRun>,
    pub bands: Vec<metrics::Band>,
}

pub fn episode_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(episode as u64);
    r
}

pub fn optimum(env: &LabeledMdp, truth: &Srm, max_steps: usize) -> f64 {
    optimal_return(env, truth, max_steps)
}

/// Runs one seed to completion; learner errors are recorded, not propagated.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let (env, truth) = cfg.env.build()?;
    let target = cfg.threshold * optimum(&env, &truth, cfg.max_steps);
    let started = Instant::now();
    let limit = Duration::from_secs_f64(cfg.timeout_secs);
    let lcfg = cfg.learner_config();
    let mut learner = Learner::new(lcfg.clone(), &env)?;
    let mut events = Vec::new();
    let mut returns = Vec::new();
    let mut rolling_sum = 0.0;
    let mut rolling = Vec::new();
    let mut error = None;
    let mut end = EndReason::EpisodeCap;
    for k in 0..cfg.episodes {
        let elapsed = started.elapsed();
        if elapsed >= limit {
            end = EndReason::WallClock;
            break;
        }
        // keep the solver inside the seed's wall-clock allowance
        let rem = limit - elapsed;
        learner.set_budget(SolveBudget {
            total: Some(lcfg.budget.total.map_or(rem, |t| t.min(rem))),
            ..lcfg.budget
        });
        let mut rng = episode_rng(seed, k);
        let ev = match learner.step(&env, &truth, &mut rng) {
            Ok(ev) => ev,
            Err(e) => {
                error = Some(e.to_string());
                end = EndReason::Failed;
                break;
            }
        };
        returns.push(ev.ret);
        rolling_sum += ev.ret;
        if returns.len() > metrics::WINDOW {
            rolling_sum -= returns[returns.len() - 1 - metrics::WINDOW];
        }
        rolling.push(rolling_sum / returns.len().min(metrics::WINDOW) as f64);
        let status = ev.status.clone();
        events.push(ev);
        match status {
            RunStatus::Running => {}
            RunStatus::TimedOut { .. } => {
                end = if started.elapsed() >= limit {
                    EndReason::WallClock
                } else {
                    EndReason::SolverTimeout
                };
                break;
            }
            RunStatus::CapHit { .. } => {
                end = EndReason::CapHit;
                break;
            }
            RunStatus::Failed { reason } => {
                error = Some(reason);
                end = EndReason::Failed;
                break;
            }
        }
        if cfg.stop_on_convergence && returns.len() >= metrics::WINDOW && *rolling.last().unwrap() >= target {
            end = EndReason::Converged;
            break;
        }
    }
    // rolling sums drift; recompute exactly for reporting
    let rolling = metrics::rolling_mean(&returns, metrics::WINDOW);
    let to_threshold = metrics::first_reaching(&rolling, metrics::WINDOW, target);
    let c = *learner.counters();
    let cx = c.type1_count + c.type2_count + c.dropped_count;
    let summary = SeedSummary {
        seed,
        episodes: returns.len(),
        end,
        converged: to_threshold.is_some(),
        episodes_to_threshold: to_threshold,
        final_rolling: rolling.last().copied().unwrap_or(0.0),
        timed_out: matches!(end, EndReason::SolverTimeout | EndReason::WallClock),
        cap_hit: end == EndReason::CapHit,
        hypothesis_size: learner.hypothesis().num_states(),
        counterexamples: learner.counterexamples().len(),
        replay_exhaustion_rate: if cx == 0 {
            0.0
        } else {
            c.dropped_count as f64 / cx as f64
        },
        counters: c,
        wall_seconds: started.elapsed().as_secs_f64(),
        error,
    };
    Ok(SeedRun {
        events,
        returns,
        rolling,
        hypothesis: Some(learner.hypothesis().clone()),
        store: learner.store().cloned().collect(),
        summary,
    })
}

/// Runs every seed (in parallel), aggregates metrics and, if `out` is given,
/// writes the artifacts there.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (env, truth) = cfg.env.build()?;
    let opt = optimum(&env, &truth, cfg.max_steps);
    let runs: Vec<SeedRun> = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, seed).unwrap_or_else(|e| failed_seed(seed, e)))
        .collect();
    let series: Vec<Vec<f64>> = runs.iter().map(|r| r.rolling.clone()).collect();
    let bands = metrics::aggregate(&series);
    let medians: Vec<f64> = bands.iter().map(|b| b.median).collect();
    let summary = ExperimentSummary {
        name: cfg.name.clone(),
        algorithm: cfg.algorithm,
        env: cfg.env.clone(),
        eps: cfg.eps,
        optimum: opt,
        threshold: cfg.threshold,
        median_episodes_to_threshold: metrics::first_reaching(&medians, metrics::WINDOW, cfg.threshold * opt),
        converged_seeds: runs.iter().filter(|r| r.summary.converged).count(),
        timed_out_seeds: runs.iter().filter(|r| r.summary.timed_out).count(),
        cap_hit_seeds: runs.iter().filter(|r| r.summary.cap_hit).count(),
        final_median_rolling: medians.last().copied().unwrap_or(0.0),
        seeds: runs.iter().map(|r| r.summary.clone()).collect(),
    };
    let report = ExperimentReport { summary, runs, bands };
    if let Some(dir) = out {
        write_artifacts(&report, dir)?;
    }
    Ok(report)
}

fn failed_seed(seed: u64, e: SrmError) -> SeedRun {
    SeedRun {
        events: Vec::new(),
        returns: Vec::new(),
        rolling: Vec::new(),
        hypothesis: None,
        store: Vec::new(),
        summary: SeedSummary {
            seed,
            episodes: 0,
            end: EndReason::Failed,
            converged: false,
            episodes_to_threshold: None,
            final_rolling: 0.0,
            timed_out: false,
            cap_hit: false,
            hypothesis_size: 0,
            counterexamples: 0,
            replay_exhaustion_rate: 0.0,
            counters: Counters::default(),
            wall_seconds: 0.0,
            error: Some(e.to_string()),
        },
    }
}

pub fn write_artifacts(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for run in &report.runs {
        let seed = run.summary.seed;
        fs::write(dir.join(format!("events_seed{seed}.jsonl")), run.events_jsonl())?;
        if let Some(h) = &run.hypothesis {
            fs::write(dir.join(format!("hypothesis_seed{seed}.json")), machine_to_json(h))?;
            fs::write(dir.join(format!("hypothesis_seed{seed}.dot")), to_dot(h))?;
        }
    }
    let mut csv = BufWriter::new(fs::File::create(dir.join("curve.csv"))?);
    writeln!(csv, "episode,median,q25,q75")?;
    for (i, b) in report.bands.iter().enumerate() {
        writeln!(csv, "{},{},{},{}", i + 1, b.median, b.q25, b.q75)?;
    }
    csv.flush()?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&report.summary)?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub algorithm: Algorithm,
    pub name: String,
    pub median_episodes_to_threshold: Option<usize>,
    pub final_median_rolling: f64,
    pub converged_seeds: usize,
    pub seeds: usize,
    pub timeout_rate: f64,
    pub exhaustion_rate: f64,
    pub timed_out: bool,
    pub stalled: bool,
}

/// Tabulates reports that share an environment and dispersion bound.
pub fn compare(reports: &[ExperimentSummary]) -> Result<Vec<ComparisonRow>> {
    let first = reports
        .first()
        .ok_or_else(|| SrmError::InvalidConfig("nothing to compare".into()))?;
    for r in reports {
        if r.env != first.env || r.eps != first.eps {
            return Err(SrmError::InvalidConfig(format!(
                "report `{}` uses a different environment or eps than `{}`",
                r.name, first.name
            )));
        }
    }
    Ok(reports
        .iter()
        .map(|r| ComparisonRow {
            algorithm: r.algorithm,
            name: r.name.clone(),
            median_episodes_to_threshold: r.median_episodes_to_threshold,
            final_median_rolling: r.final_median_rolling,
            converged_seeds: r.converged_seeds,
            seeds: r.seeds.len(),
            timeout_rate: r.timeout_rate(),
            exhaustion_rate: r.exhaustion_rate(),
            timed_out: r.timeout_rate() > 0.5,
            stalled: r.exhaustion_rate() > 0.5,
        })
        .collect())
}

pub fn format_comparison(rows: &[ComparisonRow]) -> String {
    let mut s = format!(
        "{:<10} {:<24} {:>10} {:>10} {:>9} {:>8} {:>9}  flags\n",
        "algorithm", "name", "to-thresh", "final", "converged", "timeout", "exhausted"
    );
    for r in rows {
        let mut flags = Vec::new();
        if r.timed_out {
            flags.push("timed-out");
        }
        if r.stalled {
            flags.push("stalled");
        }
        let _ = writeln!(
            s,
            "{:<10} {:<24} {:>10} {:>10.3} {:>9} {:>8.2} {:>9.2}  {}",
            r.algorithm.name(),
            r.name,
            r.median_episodes_to_threshold
                .map_or("-".to_string(), |e| e.to_string()),
            r.final_median_rolling,
            format!("{}/{}", r.converged_seeds, r.seeds),
            r.timeout_rate,
            r.exhaustion_rate,
            flags.join(",")
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(alg: Algorithm) -> ExperimentConfig {
        ExperimentConfig {
            name: "t".into(),
            algorithm: alg,
            env: EnvConfig::Mining(MiningConfig::default()),
            eps: DispersionBound::new(0.1).unwrap(),
            qrm: QrmParams::default(),
            episodes: 30,
            max_steps: 50,
            size_cap: 6,
            backend: Backend::Internal,
            budget: SolveBudget::nodes(1_000_000),
            baseline: BaselineParams::default(),
            store_cap: None,
            seeds: vec![1, 2],
            timeout_secs: 60.0,
            threshold: 0.95,
            stop_on_convergence: false,
        }
    }

    #[test]
    fn config_round_trip() {
        let c = small(Algorithm::SrmiAsym);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
        let mut bad = c.clone();
        bad.seeds.clear();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn same_seed_same_events() {
        let c = small(Algorithm::Srmi);
        let a = run_seed(&c, 7).unwrap();
        let b = run_seed(&c, 7).unwrap();
        assert_eq!(a.events_jsonl(), b.events_jsonl());
        assert_eq!(a.events.len(), 30);
    }

    #[test]
    fn artifacts_written() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_experiment(&small(Algorithm::Srmi), Some(dir.path())).unwrap();
        let csv = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
        assert_eq!(csv.lines().count(), 31);
        assert!(csv.starts_with("episode,median,q25,q75\n"));
        assert!(dir.path().join("events_seed1.jsonl").exists());
        assert!(dir.path().join("hypothesis_seed2.dot").exists());
        let s = ExperimentSummary::load(&dir.path().join("summary.json")).unwrap();
        assert_eq!(s, r.summary);
    }

    #[test]
    fn compare_rejects_mismatch() {
        let a = run_experiment(&small(Algorithm::Srmi), None).unwrap().summary;
        let mut c = small(Algorithm::Jirp);
        c.env = EnvConfig::Mining(MiningConfig::deterministic());
        let b = run_experiment(&c, None).unwrap().summary;
        assert!(compare(&[a.clone(), b]).is_err());
        let rows = compare(std::slice::from_ref(&a)).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(format_comparison(&rows).contains("srmi"));
    }
}
