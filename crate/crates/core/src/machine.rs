//! Stochastic reward machines.
//!
//! An [`Srm`] is a deterministic transducer from labels to interval
//! distributions. Only explicitly listed transitions are stored; every other
//! `(state, label)` pair is a self-loop with deterministic output 0, which
//! keeps `delta` and `sigma` total over `states × 2^P`.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SrmError};
use crate::label::{Label, PropositionSet};
use crate::trace::Trace;

pub type StateId = usize;

/// Slack used when comparing a reward against an output mean, so that a
/// midrange of a set whose range is exactly `2ε` still covers the set.
pub(crate) fn slack(a: f64, b: f64) -> f64 {
    1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// `|reward - mean| <= eps`, up to rounding.
pub fn within(reward: f64, mean: f64, eps: f64) -> bool {
    (reward - mean).abs() <= eps + slack(reward, mean)
}

/// Known upper bound on output noise half-width.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct DispersionBound(f64);

impl DispersionBound {
    pub const EXACT: DispersionBound = DispersionBound(0.0);

    pub fn new(eps_c: f64) -> Result<Self> {
        if eps_c.is_finite() && eps_c >= 0.0 {
            Ok(Self(eps_c))
        } else {
            Err(SrmError::InvalidConfig(format!(
                "dispersion bound must be finite and non-negative, got {eps_c}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for DispersionBound {
    type Error = SrmError;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DispersionBound> for f64 {
    fn from(d: DispersionBound) -> f64 {
        d.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFamily {
    #[default]
    Uniform,
}

/// Symmetric bounded output distribution `[mean - half_width, mean + half_width]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputDist {
    pub mean: f64,
    pub half_width: f64,
    pub family: OutputFamily,
}

impl OutputDist {
    pub const ZERO: OutputDist = OutputDist {
        mean: 0.0,
        half_width: 0.0,
        family: OutputFamily::Uniform,
    };

    pub fn uniform(mean: f64, half_width: f64) -> Self {
        debug_assert!(half_width >= 0.0);
        Self {
            mean,
            half_width,
            family: OutputFamily::Uniform,
        }
    }

    pub fn deterministic(value: f64) -> Self {
        Self::uniform(value, 0.0)
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            OutputFamily::Uniform => {
                if self.half_width == 0.0 {
                    self.mean
                } else {
                    rng.gen_range(self.lower()..=self.upper())
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub to: StateId,
    pub output: OutputDist,
}

/// Output of [`Srm::run`].
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub states: Vec<StateId>,
    pub means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Srm {
    props: PropositionSet,
    names: Vec<String>,
    initial: StateId,
    terminal: BTreeSet<StateId>,
    transitions: BTreeMap<(StateId, Label), Transition>,
}

impl Srm {
    /// Machine with `num_states` states named `q0, q1, ...` and no explicit transitions.
    pub fn new(props: PropositionSet, num_states: usize) -> Result<Self> {
        let names = (0..num_states).map(|i| format!("q{i}")).collect();
        Self::with_names(props, names, 0)
    }

    pub fn with_names(props: PropositionSet, names: Vec<String>, initial: StateId) -> Result<Self> {
        if names.is_empty() {
            return Err(SrmError::InvalidMachine("a machine needs at least one state".into()));
        }
        if initial >= names.len() {
            return Err(SrmError::InvalidMachine(format!(
                "initial state {initial} out of range"
            )));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(SrmError::DuplicateState(n.clone()));
            }
        }
        Ok(Self {
            props,
            names,
            initial,
            terminal: BTreeSet::new(),
            transitions: BTreeMap::new(),
        })
    }

    pub fn propositions(&self) -> &PropositionSet {
        &self.props
    }

    pub fn num_states(&self) -> usize {
        self.names.len()
    }

    pub fn state_names(&self) -> &[String] {
        &self.names
    }

    pub fn state_index(&self, name: &str) -> Option<StateId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn terminal(&self) -> &BTreeSet<StateId> {
        &self.terminal
    }

    pub fn is_terminal(&self, v: StateId) -> bool {
        self.terminal.contains(&v)
    }

    pub fn set_terminal(&mut self, v: StateId) -> Result<()> {
        self.check_state(v)?;
        self.terminal.insert(v);
        Ok(())
    }

    pub fn clear_terminal(&mut self) {
        self.terminal.clear();
    }

    fn check_state(&self, v: StateId) -> Result<()> {
        if v < self.names.len() {
            Ok(())
        } else {
            Err(SrmError::InvalidMachine(format!("state {v} out of range")))
        }
    }

    /// Adds or replaces an explicit transition.
    pub fn set_transition(&mut self, from: StateId, label: Label, to: StateId, output: OutputDist) -> Result<()> {
        self.check_state(from)?;
        self.check_state(to)?;
        self.props.check(label)?;
        if !(output.mean.is_finite() && output.half_width.is_finite() && output.half_width >= 0.0) {
            return Err(SrmError::InvalidMachine(format!(
                "bad output ({}, {}) on state {from}",
                output.mean, output.half_width
            )));
        }
        self.transitions.insert((from, label), Transition { to, output });
        Ok(())
    }

    /// Explicit transitions in `(state, label)` order.
    pub fn transitions(&self) -> impl Iterator<Item = (StateId, Label, &Transition)> + '_ {
        self.transitions.iter().map(|(&(v, l), t)| (v, l, t))
    }

    pub fn explicit(&self, v: StateId, label: Label) -> Option<&Transition> {
        self.transitions.get(&(v, label))
    }

    /// Explicit transitions leaving `v`, in label order.
    pub fn outgoing(&self, v: StateId) -> impl Iterator<Item = (Label, &Transition)> + '_ {
        self.transitions
            .range((v, Label(0))..=(v, Label(u32::MAX)))
            .map(|(&(_, l), t)| (l, t))
    }

    pub fn step(&self, v: StateId, label: Label) -> Transition {
        self.transitions.get(&(v, label)).copied().unwrap_or(Transition {
            to: v,
            output: OutputDist::ZERO,
        })
    }

    pub fn delta(&self, v: StateId, label: Label) -> StateId {
        self.step(v, label).to
    }

    pub fn sigma(&self, v: StateId, label: Label) -> OutputDist {
        self.step(v, label).output
    }

    pub fn max_half_width(&self) -> f64 {
        self.transitions
            .values()
            .map(|t| t.output.half_width)
            .fold(0.0, f64::max)
    }

    /// Replaces every output with `f(state, label, output)`, keeping the structure.
    pub fn map_outputs<F>(&self, mut f: F) -> Srm
    where
        F: FnMut(StateId, Label, OutputDist) -> OutputDist,
    {
        let mut out = self.clone();
        for (&(v, l), t) in out.transitions.iter_mut() {
            t.output = f(v, l, t.output);
        }
        out
    }

    pub fn run(&self, labels: &[Label]) -> Result<Run> {
        let mut states = Vec::with_capacity(labels.len() + 1);
        let mut means = Vec::with_capacity(labels.len());
        let mut v = self.initial;
        states.push(v);
        for &l in labels {
            self.props.check(l)?;
            let t = self.step(v, l);
            means.push(t.output.mean);
            v = t.to;
            states.push(v);
        }
        Ok(Run { states, means })
    }

    pub fn sample_run<R: Rng + ?Sized>(&self, labels: &[Label], rng: &mut R) -> Result<Trace> {
        let mut v = self.initial;
        let mut rewards = Vec::with_capacity(labels.len());
        for &l in labels {
            self.props.check(l)?;
            let t = self.step(v, l);
            rewards.push(t.output.sample(rng));
            v = t.to;
        }
        Trace::new(labels.to_vec(), rewards)
    }

    /// True iff every reward lies within `eps` of the corresponding output mean.
    pub fn eps_consistent(&self, trace: &Trace, eps: DispersionBound) -> Result<bool> {
        let mut v = self.initial;
        for (l, r) in trace.steps() {
            self.props.check(l)?;
            let t = self.step(v, l);
            if !within(r, t.output.mean, eps.value()) {
                return Ok(false);
            }
            v = t.to;
        }
        Ok(true)
    }

    /// Renumbers states in breadth-first order from the initial state, visiting
    /// labels in canonical order, and drops unreachable states. Explicit
    /// transitions equal to the default (self-loop, deterministic 0) are dropped.
    pub fn canonical_form(&self) -> Srm {
        let mut order = vec![self.initial];
        let mut index: HashMap<StateId, StateId> = HashMap::from([(self.initial, 0)]);
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            head += 1;
            for (_, t) in self.outgoing(v) {
                if let std::collections::hash_map::Entry::Vacant(e) = index.entry(t.to) {
                    e.insert(order.len());
                    order.push(t.to);
                }
            }
        }
        let names = order.iter().map(|&v| self.names[v].clone()).collect();
        let mut out = Srm {
            props: self.props.clone(),
            names,
            initial: 0,
            terminal: self.terminal.iter().filter_map(|v| index.get(v).copied()).collect(),
            transitions: BTreeMap::new(),
        };
        for (&(v, l), t) in &self.transitions {
            let Some(&nv) = index.get(&v) else { continue };
            if t.to == v && t.output == OutputDist::ZERO {
                continue;
            }
            out.transitions.insert(
                (nv, l),
                Transition {
                    to: index[&t.to],
                    output: t.output,
                },
            );
        }
        out
    }

    /// Non-self-loop edges `(from, label, to)` in stored numbering.
    pub fn delta_table(&self) -> Vec<(StateId, Label, StateId)> {
        self.transitions
            .iter()
            .filter(|(&(v, _), t)| t.to != v)
            .map(|(&(v, l), t)| (v, l, t.to))
            .collect()
    }

    /// Delta table of the canonical form; equal for structurally isomorphic
    /// reachable parts.
    pub fn structure_key(&self) -> Vec<(StateId, Label, StateId)> {
        self.canonical_form().delta_table()
    }

    /// Canonical structure plus output means, bit-exact.
    pub fn mean_table(&self) -> Vec<(StateId, Label, StateId, u64)> {
        let c = self.canonical_form();
        c.transitions
            .iter()
            .filter(|(&(v, _), t)| t.to != v || t.output.mean != 0.0)
            .map(|(&(v, l), t)| (v, l, t.to, t.output.mean.to_bits()))
            .collect()
    }
}

/// Product-construction check that two machines output equal means on every
/// label sequence, up to `tol`.
pub fn equivalent_in_expectation(a: &Srm, b: &Srm, tol: f64) -> Result<bool> {
    Ok(first_disagreement(a, b, tol)?.is_none())
}

/// Like [`equivalent_in_expectation`], but explores only label sequences
/// drawn from `alphabet` and stops expanding a pair once `b` has entered a
/// terminal state. This is the comparison that matters for an episodic
/// environment whose episodes end when the ground truth terminates.
pub fn equivalent_in_expectation_episodic(a: &Srm, truth: &Srm, tol: f64, alphabet: &[Label]) -> Result<bool> {
    let alphabet: BTreeSet<Label> = alphabet.iter().copied().collect();
    let ok = first_disagreement_over(a, truth, tol, &alphabet)?;
    Ok(ok.is_none())
}

/// Shortest label sequence on which the two machines' means differ by more than `tol`.
pub fn first_disagreement(a: &Srm, b: &Srm, tol: f64) -> Result<Option<Vec<Label>>> {
    if a.props != b.props {
        return Err(SrmError::PropositionMismatch);
    }
    let mut seen = BTreeMap::from([((a.initial, b.initial), None::<((StateId, StateId), Label)>)]);
    let mut queue = VecDeque::from([(a.initial, b.initial)]);
    while let Some((va, vb)) = queue.pop_front() {
        let labels: BTreeSet<Label> = a
            .outgoing(va)
            .map(|(l, _)| l)
            .chain(b.outgoing(vb).map(|(l, _)| l))
            .collect();
        for l in labels {
            let ta = a.step(va, l);
            let tb = b.step(vb, l);
            if (ta.output.mean - tb.output.mean).abs() > tol {
                return Ok(Some(witness(&seen, (va, vb), l)));
            }
            let next = (ta.to, tb.to);
            if !seen.contains_key(&next) {
                seen.insert(next, Some(((va, vb), l)));
                queue.push_back(next);
            }
        }
    }
    Ok(None)
}

fn first_disagreement_over(a: &Srm, truth: &Srm, tol: f64, alphabet: &BTreeSet<Label>) -> Result<Option<Vec<Label>>> {
    if a.props != truth.props {
        return Err(SrmError::PropositionMismatch);
    }
    let mut seen = BTreeMap::from([((a.initial, truth.initial), None)]);
    let mut queue = VecDeque::from([(a.initial, truth.initial)]);
    while let Some((va, vb)) = queue.pop_front() {
        if truth.is_terminal(vb) {
            continue;
        }
        for &l in alphabet {
            let ta = a.step(va, l);
            let tb = truth.step(vb, l);
            if (ta.output.mean - tb.output.mean).abs() > tol {
                return Ok(Some(witness(&seen, (va, vb), l)));
            }
            let next = (ta.to, tb.to);
            if !seen.contains_key(&next) {
                seen.insert(next, Some(((va, vb), l)));
                queue.push_back(next);
            }
        }
    }
    Ok(None)
}

type Parents = BTreeMap<(StateId, StateId), Option<((StateId, StateId), Label)>>;

fn witness(parents: &Parents, mut at: (StateId, StateId), last: Label) -> Vec<Label> {
    let mut word = vec![last];
    while let Some(Some((prev, l))) = parents.get(&at) {
        word.push(*l);
        at = *prev;
    }
    word.reverse();
    word
}

/// True iff the two machines' means agree within `tol` at every step of every trace.
pub fn agree_on_traces<'a, I>(a: &Srm, b: &Srm, tol: f64, traces: I) -> Result<bool>
where
    I: IntoIterator<Item = &'a Trace>,
{
    for t in traces {
        let ra = a.run(t.labels())?;
        let rb = b.run(t.labels())?;
        if ra.means.iter().zip(&rb.means).any(|(x, y)| (x - y).abs() > tol) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Checks the non-containment assumption: any two outputs whose intervals fit
/// jointly in an interval of length `2ε` have equal means, and `ε` bounds
/// every half-width.
pub fn check_assumption(outputs: &[OutputDist], eps: DispersionBound) -> bool {
    let e = eps.value();
    if outputs.iter().any(|o| o.half_width > e + slack(o.half_width, e)) {
        return false;
    }
    for (i, a) in outputs.iter().enumerate() {
        for b in &outputs[i + 1..] {
            let span = a.upper().max(b.upper()) - a.lower().min(b.lower());
            if span <= 2.0 * e + slack(span, e) && a.mean != b.mean {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn props2() -> PropositionSet {
        PropositionSet::new(["a", "b"]).unwrap()
    }

    fn eps(v: f64) -> DispersionBound {
        DispersionBound::new(v).unwrap()
    }

    #[test]
    fn empty_run_is_initial_state_only() {
        let m = Srm::new(props2(), 3).unwrap();
        let r = m.run(&[]).unwrap();
        assert_eq!(r.states, vec![0]);
        assert!(r.means.is_empty());
    }

    #[test]
    fn self_loop_means() {
        let mut m = Srm::new(props2(), 1).unwrap();
        m.set_transition(0, Label(1), 0, OutputDist::deterministic(0.5))
            .unwrap();
        let r = m.run(&[Label(1), Label(1)]).unwrap();
        assert_eq!(r.means, vec![0.5, 0.5]);
        assert_eq!(r.states, vec![0, 0, 0]);
    }

    #[test]
    fn unknown_proposition_is_input_error() {
        let m = Srm::new(props2(), 1).unwrap();
        assert!(m.run(&[Label(0b100)]).is_err());
    }

    #[test]
    fn eps_consistency_boundaries() {
        let mut m = Srm::new(props2(), 2).unwrap();
        m.set_transition(0, Label(1), 1, OutputDist::uniform(1.0, 0.05))
            .unwrap();
        assert!(m.eps_consistent(&Trace::empty(), eps(0.05)).unwrap());
        let ok = Trace::new(vec![Label(1)], vec![1.04]).unwrap();
        let bad = Trace::new(vec![Label(1)], vec![1.06]).unwrap();
        assert!(m.eps_consistent(&ok, eps(0.05)).unwrap());
        assert!(!m.eps_consistent(&bad, eps(0.05)).unwrap());
    }

    #[test]
    fn degenerate_sampling_matches_means() {
        let mut m = Srm::new(props2(), 2).unwrap();
        m.set_transition(0, Label(1), 1, OutputDist::deterministic(2.0))
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels = [Label(1), Label(2), Label(1)];
        let t = m.sample_run(&labels, &mut rng).unwrap();
        assert_eq!(t.rewards(), m.run(&labels).unwrap().means.as_slice());
    }

    #[test]
    fn sample_mean_converges() {
        let d = OutputDist::uniform(1.0, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() <= 0.01, "{mean}");
    }

    #[test]
    fn assumption_examples() {
        let u = |a: f64, b: f64| OutputDist::uniform((a + b) / 2.0, (b - a) / 2.0);
        assert!(!check_assumption(&[u(0.1, 0.2), u(0.0, 1.0)], eps(0.5)));
        assert!(check_assumption(&[u(0.1, 0.9), u(0.0, 1.0)], eps(0.5)));
        assert!(check_assumption(&[u(0.0, 1.0)], eps(0.5)));
        assert!(!check_assumption(&[u(0.0, 1.0)], eps(0.4)));
    }

    fn three_state_with_unreachable() -> Srm {
        let mut m = Srm::new(props2(), 3).unwrap();
        m.set_transition(0, Label(1), 1, OutputDist::deterministic(1.0))
            .unwrap();
        m.set_transition(1, Label(2), 0, OutputDist::deterministic(0.0))
            .unwrap();
        m.set_transition(2, Label(1), 0, OutputDist::deterministic(5.0))
            .unwrap();
        m
    }

    #[test]
    fn canonical_form_drops_unreachable() {
        let m = three_state_with_unreachable();
        let c = m.canonical_form();
        assert_eq!(c.num_states(), 2);
        assert_eq!(c.canonical_form(), c);
    }

    #[test]
    fn canonical_form_ignores_permutation() {
        let m = three_state_with_unreachable();
        let mut p = Srm::with_names(props2(), vec!["x".into(), "y".into(), "z".into()], 2).unwrap();
        // 0 -> 2, 1 -> 0, 2 -> 1
        p.set_transition(2, Label(1), 0, OutputDist::deterministic(1.0))
            .unwrap();
        p.set_transition(0, Label(2), 2, OutputDist::deterministic(0.0))
            .unwrap();
        p.set_transition(1, Label(1), 2, OutputDist::deterministic(5.0))
            .unwrap();
        assert_eq!(m.structure_key(), p.structure_key());
        assert_eq!(m.mean_table(), p.mean_table());
    }

    #[test]
    fn equivalence_ignores_unreachable_outputs() {
        let a = three_state_with_unreachable();
        let mut b = a.clone();
        b.set_transition(2, Label(1), 0, OutputDist::deterministic(-3.0))
            .unwrap();
        assert!(equivalent_in_expectation(&a, &b, 0.0).unwrap());
        assert!(equivalent_in_expectation(&a, &a, 0.0).unwrap());
    }

    #[test]
    fn single_state_shifted_outputs_not_equivalent() {
        // H_alpha: U[alpha-45, alpha+45] on l1, U[10,100] on l2.
        let h = |alpha: f64| {
            let mut m = Srm::new(props2(), 1).unwrap();
            m.set_transition(0, Label(1), 0, OutputDist::uniform(alpha, 45.0))
                .unwrap();
            m.set_transition(0, Label(2), 0, OutputDist::uniform(55.0, 45.0))
                .unwrap();
            m
        };
        assert!(!equivalent_in_expectation(&h(0.0), &h(1.0), 1e-9).unwrap());
        assert!(equivalent_in_expectation(&h(3.0), &h(3.0), 1e-9).unwrap());
        let w = first_disagreement(&h(0.0), &h(1.0), 0.0).unwrap().unwrap();
        assert_eq!(w, vec![Label(1)]);
    }

    #[test]
    fn equivalence_detects_deep_difference() {
        let mut a = Srm::new(props2(), 2).unwrap();
        a.set_transition(0, Label(1), 1, OutputDist::ZERO).unwrap();
        a.set_transition(1, Label(2), 1, OutputDist::deterministic(1.0))
            .unwrap();
        let mut b = Srm::new(props2(), 1).unwrap();
        b.set_transition(0, Label(2), 0, OutputDist::deterministic(1.0))
            .unwrap();
        // b rewards `b` immediately, a only after `a`.
        let w = first_disagreement(&a, &b, 0.0).unwrap().unwrap();
        assert_eq!(w, vec![Label(2)]);
    }

    #[test]
    fn episodic_equivalence_stops_at_terminal() {
        let mut truth = Srm::new(props2(), 2).unwrap();
        truth
            .set_transition(0, Label(1), 1, OutputDist::deterministic(1.0))
            .unwrap();
        truth.set_terminal(1).unwrap();
        // After `a`, the hypothesis returns to its start state.
        let mut h = Srm::new(props2(), 1).unwrap();
        h.set_transition(0, Label(1), 0, OutputDist::deterministic(1.0))
            .unwrap();
        let alphabet = [Label(0), Label(1), Label(2)];
        assert!(!equivalent_in_expectation(&h, &truth, 1e-9).unwrap());
        assert!(equivalent_in_expectation_episodic(&h, &truth, 1e-9, &alphabet).unwrap());
    }
}
