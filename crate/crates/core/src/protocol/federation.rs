use log::debug;

use super::{
    encode_indices, encode_sparse, sum_in_order, tags, FederationConfig, Message,
    MessageKind, Transcript, TranscriptEntry, Transport,
};
use crate::error::{Error, Result};
use crate::kernel::SparseVector;

/// The global center.
///
/// Stateless between rounds apart from the round counter and the registry:
/// partial results are summed and returned, never stored.
pub struct Federation<T: Transport> {
    transport: T,
    config: FederationConfig,
    next_round: u64,
    transcript: Option<Transcript>,
}

impl<T: Transport> Federation<T> {
    pub fn new(transport: T, config: FederationConfig) -> Result<Self> {
        config.validate()?;
        if transport.worker_count() != config.worker_count {
            return Err(Error::Config(format!(
                "transport has {} workers, registry lists {}",
                transport.worker_count(),
                config.worker_count
            )));
        }
        Ok(Self {
            transport,
            config,
            next_round: 1,
            transcript: None,
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn feature_count(&self) -> usize {
        self.config.feature_count
    }

    pub fn worker_count(&self) -> usize {
        self.config.worker_count
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn transport_mut(&mut self) -> &mut T {
        &mut self.transport
    }

    /// Starts recording every message into a fresh transcript.
    pub fn record_transcript(&mut self) {
        self.transcript = Some(Transcript::new(
            self.config.feature_count,
            self.config.shard_rows.clone(),
        ));
    }

    pub fn transcript(&self) -> Option<&Transcript> {
        self.transcript.as_ref()
    }

    pub fn take_transcript(&mut self) -> Option<Transcript> {
        self.transcript.take()
    }

    fn record(&mut self, entry: TranscriptEntry) {
        if let Some(t) = &mut self.transcript {
            t.entries.push(entry);
        }
    }

    fn next_round(&mut self) -> u64 {
        let r = self.next_round;
        self.next_round += 1;
        r
    }

    /// One query round: every worker computes its partial for `tag` and the
    /// center returns the sum in reduction order. `expected_len` is the
    /// feature-space length of a legitimate reply (1 for scalars).
    pub fn aggregate(
        &mut self,
        kind: MessageKind,
        tag: &str,
        query: Vec<f64>,
        expected_len: usize,
    ) -> Result<Vec<f64>> {
        debug_assert!(matches!(kind, MessageKind::VectorSum | MessageKind::ScalarSum));
        let round = self.next_round();
        let msg = Message::new(round, kind, tag, query);
        let m = self.worker_count();
        for w in 0..m {
            self.transport.send(w, &msg)?;
            self.record(TranscriptEntry::sent(w, &msg, None));
        }

        let mut replies: Vec<Option<Vec<f64>>> = vec![None; m];
        let mut outstanding = m;
        while outstanding > 0 {
            let Some((w, reply)) = self.transport.receive(self.config.timeout)? else {
                let missing = (0..m).find(|&w| replies[w].is_none()).unwrap_or(0);
                return Err(Error::Timeout {
                    worker: missing,
                    round,
                    timeout: self.config.timeout.unwrap_or_default(),
                });
            };
            self.record(TranscriptEntry::received(w, &reply, Some(expected_len)));
            if reply.round_id != round {
                debug!("dropping stale reply from worker {w} (round {})", reply.round_id);
                continue;
            }
            if reply.kind == MessageKind::Error {
                return Err(Error::Protocol(format!("worker {w}: {}", reply.tag)));
            }
            if reply.kind != kind || reply.tag != tag {
                return Err(Error::Protocol(format!(
                    "worker {w} answered {:?}/{} to a {kind:?}/{tag} query",
                    reply.kind, reply.tag
                )));
            }
            if w >= m || replies[w].is_some() {
                debug!("dropping duplicate reply from worker {w} for round {round}");
                continue;
            }
            replies[w] = Some(reply.payload);
            outstanding -= 1;
        }
        let payloads: Vec<Vec<f64>> = replies.into_iter().map(Option::unwrap).collect();
        let total = sum_in_order(&payloads, &self.config.reduction_order)?;
        if total.len() != expected_len {
            return Err(Error::Dimension(format!(
                "{tag}: aggregated length {} but expected {expected_len}",
                total.len()
            )));
        }
        Ok(total)
    }

    pub fn aggregate_vector(&mut self, tag: &str, query: Vec<f64>, len: usize) -> Result<Vec<f64>> {
        self.aggregate(MessageKind::VectorSum, tag, query, len)
    }

    pub fn aggregate_scalar(&mut self, tag: &str, query: Vec<f64>) -> Result<f64> {
        Ok(self.aggregate(MessageKind::ScalarSum, tag, query, 1)?[0])
    }

    pub fn broadcast(&mut self, tag: &str, payload: Vec<f64>) -> Result<()> {
        let round = self.next_round();
        let msg = Message::new(round, MessageKind::Broadcast, tag, payload);
        self.transport.broadcast(&msg)?;
        for w in 0..self.worker_count() {
            self.record(TranscriptEntry::sent(w, &msg, None));
        }
        Ok(())
    }

    /// Delivers the shared model to every institution.
    pub fn broadcast_model(&mut self, x: &SparseVector) -> Result<()> {
        if x.len() != self.feature_count() {
            return Err(Error::Dimension(format!(
                "model of length {} for p = {}",
                x.len(),
                self.feature_count()
            )));
        }
        self.broadcast(tags::MODEL, encode_sparse(x))
    }

    pub fn broadcast_mask(&mut self, kept: Option<&[usize]>) -> Result<()> {
        match kept {
            Some(cols) => self.broadcast(tags::MASK, encode_indices(cols.iter().copied())),
            None => self.broadcast(tags::UNMASK, Vec::new()),
        }
    }

    /// Total column evaluations performed by all institutions so far.
    pub fn work(&mut self) -> Result<u64> {
        Ok(self.aggregate_scalar(tags::WORK, Vec::new())? as u64)
    }

    /// Asks every worker process to exit.
    pub fn shutdown(&mut self) -> Result<()> {
        self.broadcast(tags::SHUTDOWN, Vec::new())
    }
}
