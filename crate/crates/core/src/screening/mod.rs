//! Safe feature elimination for the Lasso.
//!
//! A discarded feature is certified to be exactly zero at the optimum, so
//! its column can be dropped from the solve without changing the solution.
//! Two rules are provided in both a centralized form (all data in one
//! place) and a distributed form (every global quantity is a sum of
//! per-institution partials):
//!
//! * SAFE: a single-λ test from `A^T y`, the column norms and `||y||`.
//! * EDPP: a sequential test that projects the dual point of the previous
//!   path step and needs the previous solution.

mod central;
mod distributed;
mod shard;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use central::{edpp_screen, safe_screen, CentralEdpp};
pub use distributed::{
    compute_lambda_max, dsafe_screen, DedppSession, DsafeState, EdppState, LambdaMax,
};
pub use shard::{dual_estimate, ShardEdpp};

/// Which rule produced a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleOrigin {
    #[serde(rename = "SAFE")]
    Safe,
    #[serde(rename = "EDPP")]
    Edpp,
    #[serde(rename = "D-SAFE")]
    DSafe,
    #[serde(rename = "D-EDPP")]
    DEdpp,
    /// No screening; every feature kept.
    #[serde(rename = "NONE")]
    Unscreened,
}

/// Kept/discarded feature split at one λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MaskRecord", try_from = "MaskRecord")]
pub struct DiscardMask {
    lambda: f64,
    p: usize,
    kept: Vec<usize>,
    origin: RuleOrigin,
}

impl DiscardMask {
    /// `discard[j] == true` drops feature `j`.
    pub fn from_flags(lambda: f64, origin: RuleOrigin, discard: &[bool]) -> Self {
        Self {
            lambda,
            p: discard.len(),
            kept: (0..discard.len()).filter(|&j| !discard[j]).collect(),
            origin,
        }
    }

    pub fn keep_all(lambda: f64, p: usize, origin: RuleOrigin) -> Self {
        Self {
            lambda,
            p,
            kept: (0..p).collect(),
            origin,
        }
    }

    pub fn discard_all(lambda: f64, p: usize, origin: RuleOrigin) -> Self {
        Self {
            lambda,
            p,
            kept: Vec::new(),
            origin,
        }
    }

    /// Builds a mask from an explicit kept list (sorted, deduplicated).
    pub fn from_kept(lambda: f64, p: usize, origin: RuleOrigin, mut kept: Vec<usize>) -> Result<Self> {
        kept.sort_unstable();
        kept.dedup();
        if kept.last().is_some_and(|&j| j >= p) {
            return Err(Error::Dimension(format!("kept feature out of range for p = {p}")));
        }
        Ok(Self {
            lambda,
            p,
            kept,
            origin,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn feature_count(&self) -> usize {
        self.p
    }

    pub fn origin(&self) -> RuleOrigin {
        self.origin
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn discarded(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.p - self.kept.len());
        let mut it = self.kept.iter().peekable();
        for j in 0..self.p {
            if it.peek() == Some(&&j) {
                it.next();
            } else {
                out.push(j);
            }
        }
        out
    }

    pub fn is_kept(&self, j: usize) -> bool {
        self.kept.binary_search(&j).is_ok()
    }

    pub fn kept_count(&self) -> usize {
        self.kept.len()
    }

    pub fn discarded_count(&self) -> usize {
        self.p - self.kept.len()
    }

    pub fn rejection_fraction(&self) -> f64 {
        self.discarded_count() as f64 / self.p as f64
    }

    /// Adds features back (used when a KKT check finds a violation).
    pub fn restore(&mut self, features: &[usize]) {
        self.kept.extend_from_slice(features);
        self.kept.sort_unstable();
        self.kept.dedup();
    }

    /// Kept set as `(start, length)` runs.
    pub fn kept_runs(&self) -> Vec<(usize, usize)> {
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for &j in &self.kept {
            match runs.last_mut() {
                Some((s, l)) if *s + *l == j => *l += 1,
                _ => runs.push((j, 1)),
            }
        }
        runs
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mask serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// On-disk form of a mask: λ, p and a run-length-encoded kept set.
#[derive(Serialize, Deserialize)]
struct MaskRecord {
    lambda: f64,
    p: usize,
    origin: RuleOrigin,
    kept_runs: Vec<(usize, usize)>,
}

impl From<DiscardMask> for MaskRecord {
    fn from(m: DiscardMask) -> Self {
        Self {
            kept_runs: m.kept_runs(),
            lambda: m.lambda,
            p: m.p,
            origin: m.origin,
        }
    }
}

impl TryFrom<MaskRecord> for DiscardMask {
    type Error = Error;

    fn try_from(r: MaskRecord) -> Result<Self> {
        let mut kept = Vec::new();
        for (s, l) in r.kept_runs {
            if s + l > r.p || kept.last().is_some_and(|&prev| prev >= s) {
                return Err(Error::Format("invalid kept run".into()));
            }
            kept.extend(s..s + l);
        }
        Ok(Self {
            lambda: r.lambda,
            p: r.p,
            kept,
            origin: r.origin,
        })
    }
}

/// Column-subset view of a problem: maps between the reduced coordinates
/// used by the solver and full length-`p` vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedProblem {
    p: usize,
    kept: Vec<usize>,
}

/// Restricts a federation's problem to the columns a mask keeps.
pub fn reduce_problem(mask: &DiscardMask) -> ReducedProblem {
    ReducedProblem {
        p: mask.feature_count(),
        kept: mask.kept().to_vec(),
    }
}

impl ReducedProblem {
    pub fn columns(&self) -> &[usize] {
        &self.kept
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.kept.len() == self.p
    }

    /// Reduced coordinates of a full vector.
    pub fn restrict(&self, x: &crate::kernel::SparseVector) -> Vec<f64> {
        x.gather(&self.kept)
    }

    /// Full length-`p` vector with zeros at discarded features.
    pub fn inflate(&self, reduced: &[f64]) -> crate::kernel::SparseVector {
        crate::kernel::SparseVector::from_subset(self.p, &self.kept, reduced)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn discarded_is_complement() {
        let m = DiscardMask::from_flags(1.0, RuleOrigin::Edpp, &[true, false, false, true, false]);
        assert_eq!(m.kept(), &[1, 2, 4]);
        assert_eq!(m.discarded(), vec![0, 3]);
        assert_eq!(m.kept_runs(), vec![(1, 2), (4, 1)]);
        assert!((m.rejection_fraction() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn reduce_identity_and_empty() {
        let all = reduce_problem(&DiscardMask::keep_all(1.0, 4, RuleOrigin::Unscreened));
        assert!(all.is_identity());
        let x = crate::kernel::SparseVector::from_dense(&[1.0, 0.0, 2.0, 0.0]);
        assert_eq!(all.inflate(&all.restrict(&x)), x);
        let none = reduce_problem(&DiscardMask::discard_all(1.0, 4, RuleOrigin::DEdpp));
        assert!(none.is_empty());
        assert_eq!(none.inflate(&[]).nnz(), 0);
    }

    #[test]
    fn corrupt_runs_are_rejected() {
        let bad = r#"{"lambda":1.0,"p":3,"origin":"EDPP","kept_runs":[[2,5]]}"#;
        assert!(DiscardMask::from_json(bad).is_err());
    }

    proptest! {
        #[test]
        fn rle_json_round_trip(flags in prop::collection::vec(any::<bool>(), 1..200), lambda in 0.01f64..10.0) {
            let m = DiscardMask::from_flags(lambda, RuleOrigin::DEdpp, &flags);
            let back = DiscardMask::from_json(&m.to_json()).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
