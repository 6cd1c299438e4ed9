//! Output re-estimation from the full trace store.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::label::Label;
use crate::machine::{DispersionBound, OutputDist, Srm, StateId};
use crate::trace::Trace;

/// Running summary of one bucket's rewards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bucket {
    pub min: f64,
    pub max: f64,
    pub sum: f64,
    pub count: usize,
}

impl Bucket {
    fn new(r: f64) -> Self {
        Self {
            min: r,
            max: r,
            sum: r,
            count: 1,
        }
    }

    fn add(&mut self, r: f64) {
        self.min = self.min.min(r);
        self.max = self.max.max(r);
        self.sum += r;
        self.count += 1;
    }

    pub fn midrange(&self) -> f64 {
        self.min + (self.max - self.min) / 2.0
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }
}

/// Rewards grouped by the hypothesis transition that produced them. Only
/// traces ε-consistent with the hypothesis contribute.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardBuckets {
    pub buckets: BTreeMap<(StateId, Label), Bucket>,
    /// Traces skipped as inconsistent.
    pub skipped: usize,
}

impl RewardBuckets {
    pub fn collect<'a, I>(h: &Srm, store: I, eps: DispersionBound) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Trace>,
    {
        let mut out = Self::default();
        for t in store {
            if !h.eps_consistent(t, eps)? {
                out.skipped += 1;
                continue;
            }
            let run = h.run(t.labels())?;
            for (i, (l, r)) in t.steps().enumerate() {
                out.buckets
                    .entry((run.states[i], l))
                    .and_modify(|b| b.add(r))
                    .or_insert_with(|| Bucket::new(r));
            }
        }
        Ok(out)
    }

    fn apply(&self, h: &Srm, eps: DispersionBound, mean: impl Fn(&Bucket) -> f64) -> Result<Srm> {
        let mut out = h.clone();
        for (&(v, l), b) in &self.buckets {
            out.set_transition(v, l, h.delta(v, l), OutputDist::uniform(mean(b), eps.value()))?;
        }
        Ok(out)
    }
}

/// Replaces each observed output mean by the midrange of its bucket.
pub fn estimates<'a, I>(h: &Srm, store: I, eps: DispersionBound) -> Result<Srm>
where
    I: IntoIterator<Item = &'a Trace>,
{
    RewardBuckets::collect(h, store, eps)?.apply(h, eps, Bucket::midrange)
}

/// Midrange machine `H` (guards consistency) and arithmetic-mean machine `G`
/// (drives exploitation under asymmetric noise), sharing `h`'s structure.
pub fn estimates_asymmetric<'a, I>(h: &Srm, store: I, eps: DispersionBound) -> Result<(Srm, Srm)>
where
    I: IntoIterator<Item = &'a Trace>,
{
    let b = RewardBuckets::collect(h, store, eps)?;
    Ok((b.apply(h, eps, Bucket::midrange)?, b.apply(h, eps, Bucket::mean)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::PropositionSet;

    fn h(eps: f64) -> Srm {
        hm(0.0, eps)
    }

    fn hm(mean: f64, eps: f64) -> Srm {
        let mut m = Srm::new(PropositionSet::new(["a"]).unwrap(), 1).unwrap();
        m.set_transition(0, Label(1), 0, OutputDist::uniform(mean, eps))
            .unwrap();
        m
    }

    fn singles(rs: &[f64]) -> Vec<Trace> {
        rs.iter()
            .map(|&r| Trace::new(vec![Label(1)], vec![r]).unwrap())
            .collect()
    }

    #[test]
    fn midrange_bucket() {
        let e = DispersionBound::new(1.0).unwrap();
        let m = estimates(&hm(1.0, 1.0), &singles(&[0.9, 1.0, 1.1]), e).unwrap();
        assert!((m.sigma(0, Label(1)).mean - 1.0).abs() < 1e-12);
        let m = estimates(&h(1.0), &singles(&[0.7]), e).unwrap();
        assert_eq!(m.sigma(0, Label(1)).mean, 0.7);
        assert_eq!(estimates(&h(1.0), &[], e).unwrap(), h(1.0));
    }

    #[test]
    fn asymmetric_pair() {
        let e = DispersionBound::new(2.0).unwrap();
        let (hh, g) = estimates_asymmetric(&hm(1.5, 2.0), &singles(&[0.0, 0.0, 3.0]), e).unwrap();
        assert_eq!(hh.sigma(0, Label(1)).mean, 1.5);
        assert_eq!(g.sigma(0, Label(1)).mean, 1.0);
        let (hh, g) = estimates_asymmetric(&h(2.0), &singles(&[-1.0, 1.0]), e).unwrap();
        assert_eq!(hh.sigma(0, Label(1)).mean, 0.0);
        assert_eq!(g.sigma(0, Label(1)).mean, 0.0);
        let (hh, g) = estimates_asymmetric(&h(2.0), &[], e).unwrap();
        assert_eq!((hh, g), (h(2.0), h(2.0)));
    }

    #[test]
    fn inconsistent_traces_are_skipped() {
        let e = DispersionBound::new(1.0).unwrap();
        let b = RewardBuckets::collect(&h(1.0), &singles(&[0.5, 5.0]), e).unwrap();
        assert_eq!(b.skipped, 1);
        assert_eq!(b.buckets[&(0, Label(1))].count, 1);
    }

    #[test]
    fn unobserved_transitions_keep_their_mean() {
        let mut m = h(1.0);
        m.set_transition(0, Label(0), 0, OutputDist::uniform(4.0, 1.0)).unwrap();
        let tr = [Trace::new(vec![Label(1)], vec![0.5]).unwrap()];
        let out = estimates(&m, &tr, DispersionBound::new(1.0).unwrap()).unwrap();
        assert_eq!(out.sigma(0, Label(0)).mean, 4.0);
        assert_eq!(out.sigma(0, Label(1)).mean, 0.5);
    }
}
