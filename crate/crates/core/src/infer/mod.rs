//! Minimal ε-consistent machine inference from a set of counterexample traces.
//!
//! [`encode`] builds a [`ConstraintProblem`] over the prefix tree of the
//! traces: for a machine size `n` it has boolean transition variables
//! `d_{p,l,q}`, real output variables `o_{v,l}` and boolean run variables
//! `x_{λ,v}`, constrained so that
//!
//! 1. the empty prefix runs to the initial state,
//! 2. each state has exactly one successor per label,
//! 3. prefix runs follow the transition variables, and
//! 4. every observed reward lies within `ε` of the output of the transition
//!    that produced it.
//!
//! [`solve`] decides the problem with either the built-in backtracking
//! search or an external SMT-LIB2 solver process; [`infer_minimal`] searches
//! sizes `1, 2, ...` for the first satisfiable one.

mod sat;
mod search;
pub mod sexp;
pub mod smtlib;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SrmError};
use crate::label::{Label, PropositionSet};
use crate::machine::{slack, DispersionBound, OutputDist, Srm, StateId};
use crate::trace::Trace;

pub use smtlib::SmtSolver;

pub type NodeId = usize;

/// One node per distinct label-sequence prefix of the traces.
#[derive(Debug, Clone)]
pub struct PrefixNode {
    pub parent: Option<NodeId>,
    /// Label read to reach this node from its parent.
    pub label: Label,
    pub depth: usize,
    pub children: BTreeMap<Label, NodeId>,
    /// Rewards observed on the edge into this node, one per trace through it.
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PrefixTree {
    nodes: Vec<PrefixNode>,
}

impl Default for PrefixTree {
    fn default() -> Self {
        Self {
            nodes: vec![PrefixNode {
                parent: None,
                label: Label::EMPTY,
                depth: 0,
                children: BTreeMap::new(),
                rewards: Vec::new(),
            }],
        }
    }
}

impl PrefixTree {
    pub const ROOT: NodeId = 0;

    pub fn from_traces<'a, I: IntoIterator<Item = &'a Trace>>(traces: I) -> Self {
        let mut tree = Self::default();
        for t in traces {
            tree.insert(t);
        }
        tree
    }

    pub fn insert(&mut self, trace: &Trace) {
        let mut at = Self::ROOT;
        for (l, r) in trace.steps() {
            let next = match self.nodes[at].children.get(&l) {
                Some(&c) => c,
                None => {
                    let id = self.nodes.len();
                    let depth = self.nodes[at].depth + 1;
                    self.nodes.push(PrefixNode {
                        parent: Some(at),
                        label: l,
                        depth,
                        children: BTreeMap::new(),
                        rewards: Vec::new(),
                    });
                    self.nodes[at].children.insert(l, id);
                    id
                }
            };
            self.nodes[next].rewards.push(r);
            at = next;
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn node(&self, id: NodeId) -> &PrefixNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[PrefixNode] {
        &self.nodes
    }

    /// `(next_label, reward)` observations at the prefix `id`.
    pub fn observations(&self, id: NodeId) -> impl Iterator<Item = (Label, f64)> + '_ {
        self.nodes[id]
            .children
            .iter()
            .flat_map(move |(&l, &c)| self.nodes[c].rewards.iter().map(move |&r| (l, r)))
    }

    /// Non-root nodes in breadth-first order (ties by label).
    pub fn bfs_edges(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut head = vec![Self::ROOT];
        let mut i = 0;
        while i < head.len() {
            let n = head[i];
            i += 1;
            for &c in self.nodes[n].children.values() {
                out.push(c);
                head.push(c);
            }
        }
        out
    }
}

/// The size-`n` constraint problem for a trace set.
#[derive(Debug, Clone)]
pub struct ConstraintProblem {
    pub props: PropositionSet,
    pub size: usize,
    pub eps: DispersionBound,
    pub tree: PrefixTree,
    /// Labels occurring in the traces plus `∅`, in canonical order.
    pub alphabet: Vec<Label>,
}

impl ConstraintProblem {
    pub fn label_index(&self, l: Label) -> usize {
        self.alphabet.binary_search(&l).expect("label in alphabet")
    }
}

pub fn encode(
    props: &PropositionSet,
    traces: &[Trace],
    size: usize,
    eps: DispersionBound,
) -> Result<ConstraintProblem> {
    if size == 0 {
        return Err(SrmError::InvalidConfig("machine size must be at least 1".into()));
    }
    let mut alphabet = vec![Label::EMPTY];
    for t in traces {
        for &l in t.labels() {
            props.check(l)?;
            alphabet.push(l);
        }
    }
    alphabet.sort();
    alphabet.dedup();
    Ok(ConstraintProblem {
        props: props.clone(),
        size,
        eps,
        tree: PrefixTree::from_traces(traces),
        alphabet,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    /// CDCL over a propositional encoding; `max_nodes` caps conflicts.
    #[default]
    Internal,
    /// Backtracking search; `max_nodes` caps branching decisions.
    Search,
    Smt(SmtSolver),
}

impl Backend {
    /// Parses `internal`, `search` or `smt:<path>`.
    pub fn parse(text: &str) -> Result<Self> {
        if text == "internal" {
            Ok(Backend::Internal)
        } else if text == "search" {
            Ok(Backend::Search)
        } else if let Some(path) = text.strip_prefix("smt:") {
            Ok(Backend::Smt(SmtSolver::new(path)))
        } else {
            Err(SrmError::InvalidConfig(format!("unknown backend `{text}`")))
        }
    }
}

/// Limits on one solver call. The node limit is deterministic; wall-clock
/// limits are not, so reproducible runs should rely on `max_nodes`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveBudget {
    pub max_nodes: Option<u64>,
    #[serde(with = "opt_secs")]
    pub per_size: Option<Duration>,
    #[serde(with = "opt_secs")]
    pub total: Option<Duration>,
}

impl Default for SolveBudget {
    fn default() -> Self {
        Self {
            max_nodes: None,
            per_size: Some(Duration::from_secs(60)),
            total: None,
        }
    }
}

impl SolveBudget {
    pub fn unlimited() -> Self {
        Self {
            max_nodes: None,
            per_size: None,
            total: None,
        }
    }

    pub fn nodes(max_nodes: u64) -> Self {
        Self {
            max_nodes: Some(max_nodes),
            ..Self::unlimited()
        }
    }
}

mod opt_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_some(&d.as_secs_f64()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.map(Duration::from_secs_f64))
    }
}

/// Effort spent by solver calls.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveStats {
    pub calls: u64,
    pub nodes: u64,
    pub seconds: f64,
}

impl SolveStats {
    pub fn absorb(&mut self, other: SolveStats) {
        self.calls += other.calls;
        self.nodes += other.nodes;
        self.seconds += other.seconds;
    }
}

pub(crate) struct Deadline {
    max_nodes: Option<u64>,
    until: Option<Instant>,
}

impl Deadline {
    fn new(max_nodes: Option<u64>, time: Option<Duration>) -> Self {
        Self {
            max_nodes,
            until: time.map(|d| Instant::now() + d),
        }
    }

    pub(crate) fn remaining(&self) -> Option<Duration> {
        self.until.map(|u| u.saturating_duration_since(Instant::now()))
    }

    pub(crate) fn expired(&self, nodes: u64) -> bool {
        if self.max_nodes.is_some_and(|m| nodes > m) {
            return true;
        }
        // checking the clock on every node is measurable; sample it
        nodes % 1024 == 0 && self.until.is_some_and(|u| Instant::now() >= u)
    }
}

/// Decides `problem`. `Ok(None)` means unsatisfiable; budget exhaustion is
/// [`SrmError::Timeout`]. Every returned machine has been rechecked for
/// ε-consistency against the traces behind the problem.
pub fn solve(problem: &ConstraintProblem, backend: &Backend, budget: &SolveBudget) -> Result<Option<Srm>> {
    let mut stats = SolveStats::default();
    solve_with_stats(problem, backend, budget, &mut stats)
}

pub fn solve_with_stats(
    problem: &ConstraintProblem,
    backend: &Backend,
    budget: &SolveBudget,
    stats: &mut SolveStats,
) -> Result<Option<Srm>> {
    let started = Instant::now();
    let deadline = Deadline::new(budget.max_nodes, budget.per_size);
    let result = match backend {
        Backend::Internal => {
            let (res, nodes) = sat::solve(problem, &deadline, budget.max_nodes);
            stats.nodes += nodes;
            res
        }
        Backend::Search => {
            let (res, nodes) = search::solve(problem, &deadline);
            stats.nodes += nodes;
            res
        }
        Backend::Smt(solver) => smtlib::solve(problem, solver, &deadline),
    };
    stats.calls += 1;
    stats.seconds += started.elapsed().as_secs_f64();
    let structure = match result? {
        Some(s) => s,
        None => return Ok(None),
    };
    let machine = machine_from_structure(problem, &structure)?;
    if !tree_consistent(&problem.tree, &machine, problem.eps) {
        return Err(SrmError::Solver(format!(
            "solver model of size {} is not ε-consistent with the traces",
            problem.size
        )));
    }
    Ok(Some(machine))
}

/// Transition targets chosen by a backend, indexed `[state][label index]`.
pub(crate) type Structure = Vec<Vec<Option<StateId>>>;

/// Builds a machine from transition choices, setting each observed output to
/// the midpoint of its feasible interval.
fn machine_from_structure(problem: &ConstraintProblem, structure: &Structure) -> Result<Srm> {
    let n = problem.size;
    let mut m = Srm::new(problem.props.clone(), n)?;
    for (v, row) in structure.iter().enumerate() {
        for (li, to) in row.iter().enumerate() {
            if let Some(to) = *to {
                m.set_transition(v, problem.alphabet[li], to, OutputDist::ZERO)?;
            }
        }
    }
    // Restrict to pairs the traces actually visit, like the internal search does.
    let buckets = tree_buckets(&problem.tree, &m);
    let mut out = Srm::new(problem.props.clone(), n)?;
    let e = problem.eps.value();
    for (&(v, l), &(lo, hi)) in &buckets {
        let to = m.delta(v, l);
        out.set_transition(v, l, to, OutputDist::uniform(midrange(lo, hi), e))?;
    }
    Ok(out)
}

fn midrange(lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) / 2.0
}

/// `(min, max)` reward per visited `(state, label)` when running the tree
/// through `m`'s structure.
fn tree_buckets(tree: &PrefixTree, m: &Srm) -> BTreeMap<(StateId, Label), (f64, f64)> {
    let mut state = vec![m.initial(); tree.len()];
    let mut buckets: BTreeMap<(StateId, Label), (f64, f64)> = BTreeMap::new();
    for id in tree.bfs_edges() {
        let node = tree.node(id);
        let v = state[node.parent.expect("non-root")];
        state[id] = m.delta(v, node.label);
        let (lo, hi) = node
            .rewards
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
        let b = buckets.entry((v, node.label)).or_insert((lo, hi));
        b.0 = b.0.min(lo);
        b.1 = b.1.max(hi);
    }
    buckets
}

fn tree_consistent(tree: &PrefixTree, m: &Srm, eps: DispersionBound) -> bool {
    let mut state = vec![m.initial(); tree.len()];
    for id in tree.bfs_edges() {
        let node = tree.node(id);
        let v = state[node.parent.expect("non-root")];
        let t = m.step(v, node.label);
        if node
            .rewards
            .iter()
            .any(|&r| !crate::machine::within(r, t.output.mean, eps.value()))
        {
            return false;
        }
        state[id] = t.to;
    }
    true
}

#[derive(Debug, Clone, PartialEq)]
pub enum Inference {
    Found(Srm),
    /// No consistent machine with at most `cap` states.
    CapHit {
        cap: usize,
    },
}

/// Searches sizes `1..=size_cap` and returns the first satisfiable size's machine.
pub fn infer_minimal(
    props: &PropositionSet,
    traces: &[Trace],
    eps: DispersionBound,
    backend: &Backend,
    size_cap: usize,
    budget: &SolveBudget,
    stats: &mut SolveStats,
) -> Result<Inference> {
    infer_minimal_from(props, traces, eps, backend, 1, size_cap, budget, stats)
}

/// Like [`infer_minimal`] but starts at size `from`. Sound when every size
/// below `from` is known to be unsatisfiable, e.g. `traces` extends a set
/// whose minimal machine has `from` states.
#[allow(clippy::too_many_arguments)]
pub fn infer_minimal_from(
    props: &PropositionSet,
    traces: &[Trace],
    eps: DispersionBound,
    backend: &Backend,
    from: usize,
    size_cap: usize,
    budget: &SolveBudget,
    stats: &mut SolveStats,
) -> Result<Inference> {
    if size_cap == 0 {
        return Err(SrmError::InvalidConfig("size_cap must be at least 1".into()));
    }
    let total = Deadline::new(None, budget.total);
    for size in from.max(1)..=size_cap {
        let mut per = *budget;
        if let Some(rem) = total.remaining() {
            if rem.is_zero() {
                return Err(SrmError::Timeout { size });
            }
            per.per_size = Some(per.per_size.map_or(rem, |p| p.min(rem)));
        }
        let problem = encode(props, traces, size, eps)?;
        match solve_with_stats(&problem, backend, &per, stats) {
            Ok(Some(m)) => return Ok(Inference::Found(m)),
            Ok(None) => continue,
            Err(SrmError::Timeout { .. }) => return Err(SrmError::Timeout { size }),
            Err(e) => return Err(e),
        }
    }
    Ok(Inference::CapHit { cap: size_cap })
}

/// Keeps `hypothesis`' transition structure and shifts outputs so that every
/// trace in `traces` becomes ε-consistent, setting each visited transition's
/// mean to the midrange of its rewards. `None` if some transition's rewards
/// span more than `2ε` (no structure-preserving fix exists).
pub fn shift_repair(hypothesis: &Srm, traces: &[Trace], eps: DispersionBound) -> Result<Option<Srm>> {
    let mut buckets: BTreeMap<(StateId, Label), (f64, f64)> = BTreeMap::new();
    for t in traces {
        let run = hypothesis.run(t.labels())?;
        for (i, (l, r)) in t.steps().enumerate() {
            let b = buckets.entry((run.states[i], l)).or_insert((r, r));
            b.0 = b.0.min(r);
            b.1 = b.1.max(r);
        }
    }
    let e = eps.value();
    if buckets.values().any(|&(lo, hi)| hi - lo > 2.0 * e + slack(hi - lo, e)) {
        return Ok(None);
    }
    let mut out = hypothesis.clone();
    for (&(v, l), &(lo, hi)) in &buckets {
        let to = hypothesis.delta(v, l);
        let hw = hypothesis.explicit(v, l).map_or(e, |t| t.output.half_width);
        out.set_transition(v, l, to, OutputDist::uniform(midrange(lo, hi), hw))?;
    }
    Ok(Some(out))
}
