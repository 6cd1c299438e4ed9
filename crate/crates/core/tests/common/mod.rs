//! Brute-force oracle and random instance family shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srm_core::{Label, PropositionSet, Trace};

pub struct Instance {
    pub props: PropositionSet,
    pub traces: Vec<Trace>,
    pub eps: f64,
}

/// Small instance: at most 2 propositions, 4 traces, 4 steps per trace.
/// Rewards and bounds sit on a quarter grid so boundary cases are exact.
pub fn instance(rng: &mut ChaCha8Rng, eps_choices: &[f64]) -> Instance {
    let np = rng.gen_range(1..=2);
    let props = PropositionSet::new(["a", "b"].into_iter().take(np)).unwrap();
    let rewards = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0];
    let traces = (0..rng.gen_range(1..=4))
        .map(|_| {
            let len = rng.gen_range(0..=4);
            let labels = (0..len).map(|_| Label(rng.gen_range(0..1u32 << np))).collect();
            let rs = (0..len).map(|_| rewards[rng.gen_range(0..rewards.len())]).collect();
            Trace::new(labels, rs).unwrap()
        })
        .collect();
    let eps = eps_choices[rng.gen_range(0..eps_choices.len())];
    Instance { props, traces, eps }
}

pub fn family(seed: u64, count: usize, eps_choices: &[f64]) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| instance(&mut rng, eps_choices)).collect()
}

/// Whether some `n`-state transition structure routes every trace so that
/// the rewards collected on each (state, label) fit in one interval of width `2ε`.
pub fn feasible(traces: &[Trace], n: usize, eps: f64) -> bool {
    let labels: Vec<Label> = traces
        .iter()
        .flat_map(|t| t.labels().iter().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<Label, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let slots = n * labels.len();
    let total = (n as u64).pow(slots as u32);
    let mut delta = vec![0usize; slots];
    'structures: for code in 0..total {
        let mut c = code;
        for d in delta.iter_mut() {
            *d = (c % n as u64) as usize;
            c /= n as u64;
        }
        let mut lo = vec![f64::INFINITY; slots];
        let mut hi = vec![f64::NEG_INFINITY; slots];
        for t in traces {
            let mut v = 0;
            for (&l, &r) in t.labels().iter().zip(t.rewards()) {
                let k = v * labels.len() + index[&l];
                lo[k] = lo[k].min(r);
                hi[k] = hi[k].max(r);
                if hi[k] - lo[k] > 2.0 * eps + 1e-9 {
                    continue 'structures;
                }
                v = delta[k];
            }
        }
        return true;
    }
    false
}

/// Smallest feasible size up to `cap`.
pub fn minimum(traces: &[Trace], eps: f64, cap: usize) -> Option<usize> {
    (1..=cap).find(|&n| feasible(traces, n, eps))
}

/// `z3` on PATH, if any.
pub fn z3() -> Option<std::path::PathBuf> {
    std::env::var_os("PATH").and_then(|paths| {
        std::env::split_paths(&paths)
            .map(|p| p.join("z3"))
            .find(|p| p.is_file())
    })
}
