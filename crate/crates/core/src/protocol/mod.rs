//! The local query protocol.
//!
//! A global center sends queries to every institution, each institution
//! answers with a partial result computed from its private shard, and the
//! center sums the partials in a fixed reduction order. Raw rows never cross
//! the wire: replies are always feature-space vectors (length `p` or the
//! size of the active column set) or scalars.

mod audit;
mod federation;
mod sim;
mod socket;
mod transport;
pub mod wire;
mod worker;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::SparseVector;

pub use audit::{privacy_audit, AuditReport, Direction, Transcript, TranscriptEntry, Violation};
pub use federation::Federation;
pub use sim::{DeliveryOrder, SimTransport};
pub use socket::{serve_worker, SocketTransport, WorkerServer};
pub use transport::Transport;
pub use worker::Institution;

/// Default per-round timeout of the socket transport.
pub const DEFAULT_SOCKET_TIMEOUT: Duration = Duration::from_secs(30);

/// Message tags. Query tags name the aggregated symbol.
pub mod tags {
    /// `A_i^T y_i` (vector, p). Serves as both `R` and `Q`.
    pub const CORRELATION: &str = "R";
    /// Column square norms `H_i` (vector, p).
    pub const COLUMN_NORMS: &str = "H";
    /// `||y_i||^2` (scalar).
    pub const RESPONSE_NORM: &str = "yy";
    /// `T_i = v_i^T y_i`; query payload `[J]` (scalar).
    pub const PIVOT: &str = "T";
    /// `S_i = ||v1_i||^2`; query payload `[lambda_k, lambda_prev, lambda_max, sign_t]`.
    pub const EDPP_S: &str = "S";
    /// `<v1_i, v2_i>` (scalar).
    pub const EDPP_V1V2: &str = "v1v2";
    /// `||v2perp_i||^2`; query payload `[<v1, v2>, S]` (scalar).
    pub const EDPP_PERP_NORM: &str = "v2pn";
    /// `<v1_i, v2perp_i>` (scalar), orthogonality diagnostics.
    pub const EDPP_ORTHO: &str = "v1perp";
    /// `w_i = A_i^T (theta_i + v2perp_i / 2)` (vector, p).
    pub const EDPP_SCORES: &str = "w";
    /// Gradient over the masked columns at the held model (vector, |mask|).
    pub const GRADIENT: &str = "grad";
    /// Gradient over all columns at the held model (vector, p).
    pub const FULL_GRADIENT: &str = "gradfull";
    /// `||A_i x - y_i||^2` at the held model (scalar).
    pub const RSS: &str = "rss";
    /// `A_K^T A_K u`; query payload `u` aligned with the mask (vector, |mask|).
    pub const GRAM: &str = "gram";
    /// Sum of the column sums, for centering (vector, p).
    pub const COLUMN_SUMS: &str = "colsum";
    /// Sum of responses (scalar).
    pub const RESPONSE_SUM: &str = "ysum";
    /// Active row count (scalar).
    pub const ROWS: &str = "rows";
    /// Column evaluations performed so far (scalar).
    pub const WORK: &str = "work";

    /// Broadcast: the shared model, sparse-encoded.
    pub const MODEL: &str = "x";
    /// Broadcast: restrict to the listed columns.
    pub const MASK: &str = "mask";
    /// Broadcast: lift the column restriction.
    pub const UNMASK: &str = "unmask";
    /// Broadcast: keep only the listed global row ids.
    pub const SUBSAMPLE: &str = "subsample";
    /// Broadcast: `[means..., y_mean]` then standardize locally with column scales.
    pub const STANDARDIZE: &str = "standardize";
    /// Broadcast: drop subsampling and standardization.
    pub const RESET: &str = "reset";
    /// Broadcast: terminate the worker process.
    pub const SHUTDOWN: &str = "shutdown";

    /// Tags an institution may legitimately reply with.
    pub const AGGREGATE: &[&str] = &[
        CORRELATION,
        COLUMN_NORMS,
        RESPONSE_NORM,
        PIVOT,
        EDPP_S,
        EDPP_V1V2,
        EDPP_PERP_NORM,
        EDPP_ORTHO,
        EDPP_SCORES,
        GRADIENT,
        FULL_GRADIENT,
        RSS,
        GRAM,
        COLUMN_SUMS,
        RESPONSE_SUM,
        ROWS,
        WORK,
    ];

    /// Tags the center may broadcast.
    pub const BROADCAST: &[&str] = &[MODEL, MASK, UNMASK, SUBSAMPLE, STANDARDIZE, RESET, SHUTDOWN];
}

/// Message kind byte on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum MessageKind {
    VectorSum = 0,
    ScalarSum = 1,
    Broadcast = 2,
    /// Reply carrying a worker-side failure; the text travels in the tag.
    Error = 3,
}

impl MessageKind {
    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Self::VectorSum),
            1 => Ok(Self::ScalarSum),
            2 => Ok(Self::Broadcast),
            3 => Ok(Self::Error),
            _ => Err(Error::Protocol(format!("unknown message kind {b}"))),
        }
    }
}

/// A single protocol message; queries and replies share the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub round_id: u64,
    pub kind: MessageKind,
    pub tag: String,
    pub payload: Vec<f64>,
}

pub type QueryMessage = Message;
pub type ReplyMessage = Message;

impl Message {
    pub fn new(round_id: u64, kind: MessageKind, tag: &str, payload: Vec<f64>) -> Self {
        Self {
            round_id,
            kind,
            tag: tag.to_owned(),
            payload,
        }
    }
}

/// Registry of a federation as seen by the center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub worker_count: usize,
    pub feature_count: usize,
    /// Order in which partial results are summed.
    pub reduction_order: Vec<usize>,
    /// Row counts per worker (public bookkeeping from the manifest).
    pub shard_rows: Vec<usize>,
    /// Size of the global subject id space (ids are `0..total_rows`).
    pub total_rows: u64,
    #[serde(skip)]
    pub timeout: Option<Duration>,
}

impl FederationConfig {
    pub fn new(feature_count: usize, shard_rows: Vec<usize>) -> Self {
        let m = shard_rows.len();
        let total = shard_rows.iter().sum::<usize>() as u64;
        Self {
            worker_count: m,
            feature_count,
            reduction_order: (0..m).collect(),
            shard_rows,
            total_rows: total,
            timeout: None,
        }
    }

    pub fn with_reduction_order(mut self, order: Vec<usize>) -> Self {
        self.reduction_order = order;
        self
    }

    pub fn with_timeout(mut self, timeout: Option<Duration>) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.worker_count == 0 {
            return Err(Error::Config("federation needs at least one worker".into()));
        }
        if self.feature_count == 0 {
            return Err(Error::Config("feature count must be positive".into()));
        }
        if self.shard_rows.len() != self.worker_count {
            return Err(Error::Config("one row count per worker required".into()));
        }
        let mut seen = vec![false; self.worker_count];
        if self.reduction_order.len() != self.worker_count {
            return Err(Error::Config("reduction order must list every worker once".into()));
        }
        for &w in &self.reduction_order {
            if w >= self.worker_count || std::mem::replace(&mut seen[w], true) {
                return Err(Error::Config(format!(
                    "reduction order {:?} is not a permutation of 0..{}",
                    self.reduction_order, self.worker_count
                )));
            }
        }
        Ok(())
    }
}

/// Element-wise sum of per-worker payloads, accumulated in `order`.
///
/// The first payload in `order` seeds the accumulator, so a single worker's
/// payload comes back bit-for-bit (including signed zeros).
pub fn sum_in_order(payloads: &[Vec<f64>], order: &[usize]) -> Result<Vec<f64>> {
    if payloads.len() != order.len() || payloads.is_empty() {
        return Err(Error::Protocol(format!(
            "{} payloads for {} workers",
            payloads.len(),
            order.len()
        )));
    }
    let len = payloads[order[0]].len();
    if let Some((w, p)) = payloads.iter().enumerate().find(|(_, p)| p.len() != len) {
        return Err(Error::Dimension(format!(
            "worker {w} sent {} values, expected {len}",
            p.len()
        )));
    }
    let mut acc = payloads[order[0]].clone();
    for &w in &order[1..] {
        for (a, v) in acc.iter_mut().zip(&payloads[w]) {
            *a += v;
        }
    }
    Ok(acc)
}

/// `[len, nnz, idx_0.., val_0..]`.
pub fn encode_sparse(x: &SparseVector) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 + 2 * x.nnz());
    out.push(x.len() as f64);
    out.push(x.nnz() as f64);
    out.extend(x.indices().iter().map(|&i| i as f64));
    out.extend_from_slice(x.values());
    out
}

pub fn decode_sparse(payload: &[f64]) -> Result<SparseVector> {
    let bad = || Error::Protocol("malformed sparse payload".into());
    if payload.len() < 2 {
        return Err(bad());
    }
    let len = as_index(payload[0]).ok_or_else(bad)?;
    let nnz = as_index(payload[1]).ok_or_else(bad)?;
    if payload.len() != 2 + 2 * nnz {
        return Err(bad());
    }
    let indices = payload[2..2 + nnz]
        .iter()
        .map(|&v| as_index(v).ok_or_else(bad))
        .collect::<Result<Vec<_>>>()?;
    SparseVector::new(len, indices, payload[2 + nnz..].to_vec())
}

/// Index list carried as floats; exact below 2^53.
pub fn encode_indices<I: IntoIterator<Item = usize>>(idx: I) -> Vec<f64> {
    idx.into_iter().map(|i| i as f64).collect()
}

pub fn decode_indices(payload: &[f64]) -> Result<Vec<usize>> {
    payload
        .iter()
        .map(|&v| as_index(v).ok_or_else(|| Error::Protocol(format!("bad index value {v}"))))
        .collect()
}

pub(crate) fn as_index(v: f64) -> Option<usize> {
    (v >= 0.0 && v.fract() == 0.0 && v < 9.007_199_254_740_992e15).then_some(v as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_term_sum() {
        let s = sum_in_order(&[vec![-3.0, 4.0], vec![1.0, 1.0]], &[0, 1]).unwrap();
        assert_eq!(s, vec![-2.0, 5.0]);
    }

    #[test]
    fn single_worker_is_identity() {
        let p = vec![-0.0, 1.5, f64::MIN_POSITIVE];
        let s = sum_in_order(std::slice::from_ref(&p), &[0]).unwrap();
        assert_eq!(
            s.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            p.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn length_mismatch_is_fatal() {
        assert!(matches!(
            sum_in_order(&[vec![1.0], vec![1.0, 2.0]], &[0, 1]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn config_rejects_non_permutation() {
        let c = FederationConfig::new(3, vec![2, 2]).with_reduction_order(vec![0, 0]);
        assert!(c.validate().is_err());
        assert!(FederationConfig::new(3, vec![2, 2]).validate().is_ok());
        assert!(FederationConfig::new(3, vec![]).validate().is_err());
    }

    #[test]
    fn sparse_encoding_round_trips() {
        let x = SparseVector::new(10, vec![1, 7], vec![0.25, -3.0]).unwrap();
        assert_eq!(decode_sparse(&encode_sparse(&x)).unwrap(), x);
        assert!(decode_sparse(&[3.0, 2.0, 1.0]).is_err());
    }
}
