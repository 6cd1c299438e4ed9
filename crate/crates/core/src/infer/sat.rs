//! Propositional encoding solved by a CDCL solver.
//!
//! Intervals on the real line have a common point iff they intersect
//! pairwise, so the output constraint reduces to: two edges with the same
//! label whose reward intervals are disjoint may not leave the same state.
//! Edges are grouped into classes of identical intervals; for each label and
//! state, classes sorted by lower bound get prefix "some class at or above
//! this one is routed here" variables, which keeps the clause count linear.
//!
//! States are numbered in order of first visit along a breadth-first walk of
//! the prefix tree, which removes the renaming symmetry.

use std::collections::BTreeMap;

use cadical::{Callbacks, Solver};

use super::{ConstraintProblem, Deadline, PrefixTree, Structure};
use crate::error::{Result, SrmError};
use crate::machine::slack;

struct Vars {
    n: usize,
    width: usize,
    next: i32,
}

impl Vars {
    fn d(&self, p: usize, l: usize, q: usize) -> i32 {
        1 + ((p * self.width + l) * self.n + q) as i32
    }

    fn x(&self, node: usize, v: usize) -> i32 {
        1 + (self.n * self.width * self.n + node * self.n + v) as i32
    }

    fn fresh(&mut self) -> i32 {
        self.next += 1;
        self.next
    }
}

struct Effort<'a> {
    deadline: &'a Deadline,
    learned: u64,
}

impl Callbacks for Effort<'_> {
    fn terminate(&mut self) -> bool {
        self.deadline.remaining().is_some_and(|r| r.is_zero())
    }

    fn max_length(&self) -> i32 {
        i32::MAX
    }

    fn learn(&mut self, _clause: &[i32]) {
        self.learned += 1;
    }
}

/// Builds the clause set; a lone empty clause when some prefix already has
/// rewards spanning more than `2ε`.
fn clauses(p: &ConstraintProblem) -> Vec<Vec<i32>> {
    let n = p.size;
    let width = p.alphabet.len();
    let mut vars = Vars {
        n,
        width,
        next: (n * width * n + p.tree.len() * n) as i32,
    };
    let mut cls: Vec<Vec<i32>> = Vec::new();
    cls.push(vec![vars.x(PrefixTree::ROOT, 0)]);
    for node in 0..p.tree.len() {
        for v in 0..n {
            for w in v + 1..n {
                cls.push(vec![-vars.x(node, v), -vars.x(node, w)]);
            }
        }
    }
    for pp in 0..n {
        for l in 0..width {
            cls.push((0..n).map(|q| vars.d(pp, l, q)).collect());
            for q in 0..n {
                for r in q + 1..n {
                    cls.push(vec![-vars.d(pp, l, q), -vars.d(pp, l, r)]);
                }
            }
        }
    }
    // seen[i][q]: some of the first i + 1 nodes in walk order sits in state q
    let order: Vec<usize> = std::iter::once(PrefixTree::ROOT).chain(p.tree.bfs_edges()).collect();
    let mut seen_prev: Vec<i32> = Vec::new();
    for (i, &node) in order.iter().enumerate() {
        let seen: Vec<i32> = (0..n).map(|_| vars.fresh()).collect();
        for q in 0..n {
            let x = vars.x(node, q);
            cls.push(vec![-x, seen[q]]);
            if i == 0 {
                cls.push(vec![-seen[q], x]);
                continue;
            }
            cls.push(vec![-seen_prev[q], seen[q]]);
            cls.push(vec![-seen[q], seen_prev[q], x]);
            if q > 0 {
                cls.push(vec![-x, seen_prev[q - 1]]);
            }
        }
        seen_prev = seen;
    }
    let e = p.eps.value();
    // label index -> interval class (lo, hi bits) -> parent nodes
    let mut classes: BTreeMap<usize, BTreeMap<(u64, u64), Vec<usize>>> = BTreeMap::new();
    for id in p.tree.bfs_edges() {
        let node = p.tree.node(id);
        let parent = node.parent.expect("non-root");
        let l = p.label_index(node.label);
        cls.push((0..n).map(|q| vars.x(id, q)).collect());
        for v in 0..n {
            for q in 0..n {
                cls.push(vec![-vars.x(parent, v), -vars.d(v, l, q), vars.x(id, q)]);
            }
        }
        let (rmin, rmax) = node
            .rewards
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
        let (lo, hi) = (rmax - e, rmin + e);
        if hi < lo - slack(lo, hi) {
            return vec![vec![]];
        }
        classes
            .entry(l)
            .or_default()
            .entry((lo.to_bits(), hi.to_bits()))
            .or_default()
            .push(parent);
    }
    for by_interval in classes.values() {
        let mut cs: Vec<(f64, f64, &Vec<usize>)> = by_interval
            .iter()
            .map(|(&(lo, hi), ps)| (f64::from_bits(lo), f64::from_bits(hi), ps))
            .collect();
        // descending lower bound
        cs.sort_by(|a, b| b.0.total_cmp(&a.0));
        for v in 0..n {
            let mut prefix: Vec<i32> = Vec::with_capacity(cs.len());
            for (j, (_, _, parents)) in cs.iter().enumerate() {
                let z = vars.fresh();
                for &par in parents.iter() {
                    cls.push(vec![-vars.x(par, v), z]);
                }
                if j > 0 {
                    cls.push(vec![-prefix[j - 1], z]);
                }
                prefix.push(z);
            }
            for &(_, hi, parents) in &cs {
                // classes whose lower bound clears this one's upper bound
                let m = cs.partition_point(|&(lo, _, _)| hi < lo - slack(lo, hi));
                if m == 0 {
                    continue;
                }
                for &par in parents.iter() {
                    cls.push(vec![-vars.x(par, v), -prefix[m - 1]]);
                }
            }
        }
    }
    cls
}

/// Returns the structure of a consistent machine, `None` when none exists,
/// and the number of learned clauses.
pub(super) fn solve(
    p: &ConstraintProblem,
    deadline: &Deadline,
    max_conflicts: Option<u64>,
) -> (Result<Option<Structure>>, u64) {
    let mut solver: Solver<Effort> = Solver::new();
    let cls = clauses(p);
    for c in &cls {
        solver.add_clause(c.iter().copied());
    }
    if let Some(m) = max_conflicts {
        let m = i32::try_from(m).unwrap_or(i32::MAX);
        solver.set_limit("conflicts", m).expect("known limit");
    }
    solver.set_callbacks(Some(Effort { deadline, learned: 0 }));
    let verdict = solver.solve();
    let learned = solver.get_callbacks().map_or(0, |c| c.learned);
    match verdict {
        None => (Err(SrmError::Timeout { size: p.size }), learned),
        Some(false) => (Ok(None), learned),
        Some(true) => {
            let vars = Vars {
                n: p.size,
                width: p.alphabet.len(),
                next: 0,
            };
            let structure = (0..p.size)
                .map(|v| {
                    (0..p.alphabet.len())
                        .map(|l| (0..p.size).find(|&q| solver.value(vars.d(v, l, q)) == Some(true)))
                        .collect()
                })
                .collect();
            (Ok(Some(structure)), learned)
        }
    }
}
