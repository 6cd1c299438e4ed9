//! Built-in backtracking search for the constraint problem.
//!
//! Prefix-tree edges are visited in breadth-first order. An edge whose
//! `(state, label)` transition is still open branches over the possible
//! targets; states are numbered in order of first visit, so a new target is
//! always the lowest unused index. Each `(state, label)` pair keeps the
//! interval of outputs compatible with every reward routed through it.
//!
//! An empty interval is explained by two edges whose rewards cannot share an
//! output; the decisions along their root paths form the conflict set, and
//! the search jumps back to the latest decision in it (conflict-directed
//! backjumping). Decisions made before a branch point only mention states
//! already in use there, so the single fresh-state option stands for every
//! unused state and the explanations stay valid under the symmetry breaking.

use super::{ConstraintProblem, Deadline, Structure};
use crate::error::{Result, SrmError};
use crate::machine::slack;

struct Edge {
    parent: usize,
    node: usize,
    label: usize,
    lo: f64,
    hi: f64,
}

/// Set of decision levels.
#[derive(Clone)]
struct Levels(Vec<u64>);

impl Levels {
    fn new(cap: usize) -> Self {
        Self(vec![0; cap.div_ceil(64).max(1)])
    }

    fn insert(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn remove(&mut self, i: usize) {
        self.0[i / 64] &= !(1 << (i % 64));
    }

    fn union(&mut self, other: &Levels) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= b;
        }
    }

    fn max(&self) -> Option<usize> {
        self.0
            .iter()
            .enumerate()
            .rev()
            .find(|(_, &w)| w != 0)
            .map(|(i, &w)| i * 64 + 63 - w.leading_zeros() as usize)
    }
}

enum Undo {
    Delta(usize),
    Bound {
        key: usize,
        lo: f64,
        hi: f64,
        lo_src: usize,
        hi_src: usize,
    },
}

struct Frame {
    edge: usize,
    key: usize,
    options: Vec<usize>,
    next: usize,
    trail: usize,
    used: usize,
    conflict: Levels,
}

struct Search<'a> {
    edges: &'a [Edge],
    /// Edge index entering each node (root: unused).
    into: Vec<usize>,
    width: usize,
    delta: Vec<Option<usize>>,
    level: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    lo_src: Vec<usize>,
    hi_src: Vec<usize>,
    node_state: Vec<usize>,
    trail: Vec<Undo>,
    cap: usize,
}

impl Search<'_> {
    /// Narrows the interval of `key` by edge `e`; on failure returns the
    /// decision levels that routed the clashing edges into `key`.
    fn tighten(&mut self, key: usize, e: usize) -> std::result::Result<(), Levels> {
        let edge = &self.edges[e];
        let (lo, lo_src) = if edge.lo > self.lo[key] {
            (edge.lo, e)
        } else {
            (self.lo[key], self.lo_src[key])
        };
        let (hi, hi_src) = if edge.hi < self.hi[key] {
            (edge.hi, e)
        } else {
            (self.hi[key], self.hi_src[key])
        };
        if hi < lo - slack(lo, hi) {
            let mut c = Levels::new(self.cap);
            self.path_levels(self.edges[lo_src].parent, &mut c);
            self.path_levels(self.edges[hi_src].parent, &mut c);
            return Err(c);
        }
        if lo != self.lo[key] || hi != self.hi[key] {
            self.trail.push(Undo::Bound {
                key,
                lo: self.lo[key],
                hi: self.hi[key],
                lo_src: self.lo_src[key],
                hi_src: self.hi_src[key],
            });
            self.lo[key] = lo;
            self.hi[key] = hi;
            self.lo_src[key] = lo_src;
            self.hi_src[key] = hi_src;
        }
        Ok(())
    }

    /// Levels of the decisions that fix the state reached at `node`.
    fn path_levels(&self, mut node: usize, out: &mut Levels) {
        while node != 0 {
            let e = &self.edges[self.into[node]];
            let key = self.node_state[e.parent] * self.width + e.label;
            out.insert(self.level[key]);
            node = e.parent;
        }
    }

    fn undo_to(&mut self, len: usize) {
        while self.trail.len() > len {
            match self.trail.pop().expect("trail entry") {
                Undo::Delta(k) => self.delta[k] = None,
                Undo::Bound {
                    key,
                    lo,
                    hi,
                    lo_src,
                    hi_src,
                } => {
                    self.lo[key] = lo;
                    self.hi[key] = hi;
                    self.lo_src[key] = lo_src;
                    self.hi_src[key] = hi_src;
                }
            }
        }
    }

    fn structure(&self, n: usize) -> Structure {
        (0..n)
            .map(|v| self.delta[v * self.width..(v + 1) * self.width].to_vec())
            .collect()
    }
}

/// Returns the structure of a consistent machine, `None` when none exists,
/// and the number of branching decisions made.
pub(super) fn solve(p: &ConstraintProblem, deadline: &Deadline) -> (Result<Option<Structure>>, u64) {
    let n = p.size;
    let e = p.eps.value();
    let width = p.alphabet.len();
    let edges: Vec<Edge> = p
        .tree
        .bfs_edges()
        .into_iter()
        .map(|id| {
            let node = p.tree.node(id);
            let (rmin, rmax) = node
                .rewards
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
            Edge {
                parent: node.parent.expect("non-root"),
                node: id,
                label: p.label_index(node.label),
                lo: rmax - e,
                hi: rmin + e,
            }
        })
        .collect();
    let mut into = vec![0; p.tree.len()];
    for (i, ed) in edges.iter().enumerate() {
        into[ed.node] = i;
    }
    let keys = n * width;
    let mut s = Search {
        edges: &edges,
        into,
        width,
        delta: vec![None; keys],
        level: vec![0; keys],
        lo: vec![f64::NEG_INFINITY; keys],
        hi: vec![f64::INFINITY; keys],
        lo_src: vec![0; keys],
        hi_src: vec![0; keys],
        node_state: vec![0; p.tree.len()],
        trail: Vec::new(),
        cap: keys,
    };
    let mut frames: Vec<Frame> = Vec::new();
    let mut used = 1usize;
    let mut nodes = 0u64;
    let mut i = 0usize;

    'outer: loop {
        if i == edges.len() {
            return (Ok(Some(s.structure(n))), nodes);
        }
        let edge = &edges[i];
        let v = s.node_state[edge.parent];
        let key = v * width + edge.label;
        let mut failure = match s.tighten(key, i) {
            Ok(()) => {
                if let Some(t) = s.delta[key] {
                    s.node_state[edge.node] = t;
                    i += 1;
                    continue 'outer;
                }
                // self-loop first, then other visited states, then a fresh one
                let mut options = vec![v];
                options.extend((0..used).filter(|&q| q != v));
                if used < n {
                    options.push(used);
                }
                frames.push(Frame {
                    edge: i,
                    key,
                    options,
                    next: 0,
                    trail: s.trail.len(),
                    used,
                    conflict: Levels::new(keys),
                });
                None
            }
            Err(c) => Some(c),
        };
        loop {
            if let Some(mut c) = failure.take() {
                let Some(h) = c.max() else {
                    return (Ok(None), nodes);
                };
                c.remove(h);
                frames.truncate(h + 1);
                frames[h].conflict.union(&c);
            }
            let depth = frames.len() - 1;
            let f = frames.last_mut().expect("open decision");
            s.undo_to(f.trail);
            used = f.used;
            if f.next == f.options.len() {
                let c = f.conflict.clone();
                frames.pop();
                failure = Some(c);
                continue;
            }
            let t = f.options[f.next];
            f.next += 1;
            nodes += 1;
            if deadline.expired(nodes) {
                return (Err(SrmError::Timeout { size: n }), nodes);
            }
            s.delta[f.key] = Some(t);
            s.level[f.key] = depth;
            s.trail.push(Undo::Delta(f.key));
            if t == used {
                used += 1;
            }
            s.node_state[edges[f.edge].node] = t;
            i = f.edge + 1;
            continue 'outer;
        }
    }
}
