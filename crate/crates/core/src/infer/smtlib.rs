//! SMT-LIB2 rendering of the constraint problem and an external solver
//! process wrapper.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::sexp::{parse_all, Sexp};
use super::{ConstraintProblem, Deadline, PrefixTree, Structure};
use crate::error::{Result, SrmError};
use crate::label::Label;

/// Environment variable naming the solver binary used by [`SmtSolver::from_env`].
pub const SOLVER_ENV: &str = "SRM_SMT_SOLVER";

/// An external solver reading an SMT-LIB2 script on stdin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmtSolver {
    pub program: String,
    pub args: Vec<String>,
}

impl SmtSolver {
    /// Picks arguments from the binary name (z3 and cvc5 are recognised).
    pub fn new(program: &str) -> Self {
        let base = std::path::Path::new(program)
            .file_name()
            .map(|s| s.to_string_lossy().to_lowercase())
            .unwrap_or_default();
        let args: &[&str] = if base.contains("cvc") {
            &["--lang=smt2", "--produce-models"]
        } else if base.contains("z3") {
            &["-in", "-smt2"]
        } else {
            &["-in"]
        };
        Self {
            program: program.to_string(),
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// `$SRM_SMT_SOLVER` if set, otherwise `z3` when it is on `PATH`.
    pub fn from_env() -> Option<Self> {
        if let Ok(p) = std::env::var(SOLVER_ENV) {
            if !p.is_empty() {
                return Some(Self::new(&p));
            }
        }
        let path = std::env::var_os("PATH")?;
        std::env::split_paths(&path)
            .map(|d| d.join("z3"))
            .find(|p| p.is_file())
            .map(|p| Self::new(&p.to_string_lossy()))
    }
}

fn d_var(p: usize, l: Label, q: usize) -> String {
    format!("d_{p}_{}_{q}", l.bits())
}

fn o_var(v: usize, l: Label) -> String {
    format!("o_{v}_{}", l.bits())
}

fn x_var(node: usize, v: usize) -> String {
    format!("x_{node}_{v}")
}

/// Exact decimal literal for a finite float.
fn real(x: f64) -> String {
    let mut s = format!("{}", x.abs());
    if !s.contains('.') {
        s.push_str(".0");
    }
    if x < 0.0 {
        format!("(- {s})")
    } else {
        s
    }
}

/// Renders the problem as a QF_LRA script ending in `(check-sat)(get-model)`.
pub fn emit_smtlib(p: &ConstraintProblem) -> String {
    let n = p.size;
    let eps = real(p.eps.value());
    let mut s = String::new();
    s.push_str("(set-option :produce-models true)\n(set-logic QF_LRA)\n");
    for v in 0..n {
        for &l in &p.alphabet {
            for q in 0..n {
                let _ = writeln!(s, "(declare-const {} Bool)", d_var(v, l, q));
            }
            let _ = writeln!(s, "(declare-const {} Real)", o_var(v, l));
        }
    }
    for id in 0..p.tree.len() {
        for v in 0..n {
            let _ = writeln!(s, "(declare-const {} Bool)", x_var(id, v));
        }
    }
    // initial state
    let _ = writeln!(s, "(assert {})", x_var(PrefixTree::ROOT, 0));
    // exactly one successor per state and label
    for p_ in 0..n {
        for &l in &p.alphabet {
            let ds: Vec<String> = (0..n).map(|q| d_var(p_, l, q)).collect();
            if n == 1 {
                let _ = writeln!(s, "(assert {})", ds[0]);
            } else {
                let _ = writeln!(s, "(assert (or {}))", ds.join(" "));
            }
            for q in 0..n {
                for q2 in q + 1..n {
                    let _ = writeln!(s, "(assert (not (and {} {})))", ds[q], ds[q2]);
                }
            }
        }
    }
    for id in p.tree.bfs_edges() {
        let node = p.tree.node(id);
        let parent = node.parent.expect("non-root");
        let l = node.label;
        // runs follow transitions
        for v in 0..n {
            for q in 0..n {
                let _ = writeln!(
                    s,
                    "(assert (=> (and {} {}) {}))",
                    x_var(parent, v),
                    d_var(v, l, q),
                    x_var(id, q)
                );
            }
        }
        // rewards within eps of the output
        let mut rs = node.rewards.clone();
        rs.sort_by(f64::total_cmp);
        rs.dedup();
        for v in 0..n {
            for &r in &rs {
                let r = real(r);
                let o = o_var(v, l);
                let _ = writeln!(
                    s,
                    "(assert (=> {} (and (<= {o} (+ {r} {eps})) (>= {o} (- {r} {eps})))))",
                    x_var(parent, v)
                );
            }
        }
    }
    s.push_str("(check-sat)\n(get-model)\n");
    s
}

/// Variable assignments read back from a solver model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Model {
    pub delta: Structure,
    pub outputs: BTreeMap<(usize, Label), f64>,
}

/// Reads the `d` and `o` assignments of a `(get-model)` response.
pub fn parse_model(p: &ConstraintProblem, model: &Sexp) -> Result<Model> {
    let bad = |m: String| SrmError::Solver(format!("unreadable model: {m}"));
    let mut defs = model.list().ok_or_else(|| bad("expected a list".into()))?;
    if defs.first().and_then(Sexp::atom) == Some("model") {
        defs = &defs[1..];
    }
    let mut out = Model {
        delta: vec![vec![None; p.alphabet.len()]; p.size],
        outputs: BTreeMap::new(),
    };
    for def in defs {
        let parts = def.list().ok_or_else(|| bad(format!("{def:?}")))?;
        if parts.len() != 5 || parts[0].atom() != Some("define-fun") {
            continue;
        }
        let name = parts[1].atom().unwrap_or_default();
        let fields: Vec<&str> = name.split('_').collect();
        let num = |i: usize| fields[i].parse::<usize>().map_err(|_| bad(name.to_string()));
        match fields[0] {
            "d" if fields.len() == 4 => {
                if parts[4].atom() == Some("true") {
                    let (v, bits, q) = (num(1)?, num(2)?, num(3)?);
                    let li = p
                        .alphabet
                        .binary_search(&Label(bits as u32))
                        .map_err(|_| bad(name.to_string()))?;
                    if v >= p.size || q >= p.size {
                        return Err(bad(name.to_string()));
                    }
                    out.delta[v][li] = Some(q);
                }
            }
            "o" if fields.len() == 3 => {
                let val = parts[4].real().ok_or_else(|| bad(format!("{:?}", parts[4])))?;
                out.outputs.insert((num(1)?, Label(num(2)? as u32)), val);
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Runs the solver on the problem; the child is killed when the deadline passes.
pub(super) fn solve(p: &ConstraintProblem, solver: &SmtSolver, deadline: &Deadline) -> Result<Option<Structure>> {
    if p.tree.nodes().iter().any(|n| n.rewards.iter().any(|r| !r.is_finite())) {
        return Err(SrmError::Solver("non-finite reward in traces".into()));
    }
    let script = emit_smtlib(p);
    let mut child = Command::new(&solver.program)
        .args(&solver.args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| SrmError::Solver(format!("cannot start `{}`: {e}", solver.program)))?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let writer = thread::spawn(move || stdin.write_all(script.as_bytes()));
    let mut stdout = child.stdout.take().expect("piped stdout");
    let reader = thread::spawn(move || {
        let mut buf = String::new();
        stdout.read_to_string(&mut buf).map(|_| buf)
    });
    loop {
        if child.try_wait()?.is_some() {
            break;
        }
        if deadline.remaining().is_some_and(|r| r.is_zero()) {
            let _ = child.kill();
            let _ = child.wait();
            return Err(SrmError::Timeout { size: p.size });
        }
        thread::sleep(Duration::from_millis(2));
    }
    // a solver that exits early may close stdin first; its verdict still counts
    let _ = writer.join();
    let text = reader
        .join()
        .map_err(|_| SrmError::Solver("solver output reader panicked".into()))??;
    let exprs = parse_all(&text)?;
    match exprs.first().and_then(Sexp::atom) {
        Some("sat") => {
            let model = exprs
                .get(1)
                .ok_or_else(|| SrmError::Solver("sat without a model".into()))?;
            Ok(Some(parse_model(p, model)?.delta))
        }
        Some("unsat") => Ok(None),
        _ => Err(SrmError::Solver(format!(
            "unexpected solver response: {}",
            text.lines().next().unwrap_or("")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::{encode, Backend, SolveBudget};
    use crate::label::PropositionSet;
    use crate::machine::DispersionBound;
    use crate::trace::Trace;

    fn props() -> PropositionSet {
        PropositionSet::new(["a"]).unwrap()
    }

    #[test]
    fn literals_are_exact_decimals() {
        assert_eq!(real(1.5), "1.5");
        assert_eq!(real(3.0), "3.0");
        assert_eq!(real(-0.1), "(- 0.1)");
        assert_eq!(real(1e-20), "0.00000000000000000001");
    }

    #[test]
    fn reward_bounds_are_two_linear_constraints() {
        let x = [Trace::new(vec![Label(1)], vec![2.0]).unwrap()];
        let p = encode(&props(), &x, 1, DispersionBound::new(0.5).unwrap()).unwrap();
        let s = emit_smtlib(&p);
        assert!(s.contains("(assert (=> x_0_0 (and (<= o_0_1 (+ 2.0 0.5)) (>= o_0_1 (- 2.0 0.5)))))"));
        assert!(s.starts_with("(set-option :produce-models true)\n(set-logic QF_LRA)"));
        assert!(s.ends_with("(check-sat)\n(get-model)\n"));
        assert_eq!(parse_all(&s).unwrap().len(), s.lines().count());
    }

    #[test]
    fn model_round_trip() {
        let p = encode(&props(), &[], 1, DispersionBound::EXACT).unwrap();
        let text = "sat\n((define-fun o_0_0 () Real 0.0)\n (define-fun d_0_0_0 () Bool true)\n (define-fun x_0_0 () Bool true))";
        let exprs = parse_all(text).unwrap();
        let m = parse_model(&p, &exprs[1]).unwrap();
        assert_eq!(m.delta, vec![vec![Some(0)]]);
        assert_eq!(m.outputs[&(0, Label::EMPTY)], 0.0);
    }

    #[test]
    fn missing_binary_is_a_solver_error() {
        let p = encode(&props(), &[], 1, DispersionBound::EXACT).unwrap();
        let b = Backend::Smt(SmtSolver::new("/nonexistent/solver-binary"));
        let r = crate::infer::solve(&p, &b, &SolveBudget::unlimited());
        assert!(matches!(r, Err(SrmError::Solver(_))), "{r:?}");
    }

    #[test]
    fn external_solver_when_available() {
        let Some(solver) = SmtSolver::from_env() else { return };
        let b = Backend::Smt(solver);
        let e = DispersionBound::new(1.0).unwrap();
        let sat = [
            Trace::new(vec![Label(1)], vec![0.0]).unwrap(),
            Trace::new(vec![Label(1)], vec![1.5]).unwrap(),
        ];
        let m = crate::infer::solve(&encode(&props(), &sat, 1, e).unwrap(), &b, &SolveBudget::unlimited())
            .unwrap()
            .unwrap();
        assert!((m.sigma(0, Label(1)).mean - 0.75).abs() < 1e-12);
        let unsat = [
            Trace::new(vec![Label(1)], vec![0.0]).unwrap(),
            Trace::new(vec![Label(1)], vec![3.0]).unwrap(),
        ];
        let r = crate::infer::solve(&encode(&props(), &unsat, 2, e).unwrap(), &b, &SolveBudget::unlimited()).unwrap();
        assert!(r.is_none());
    }
}
