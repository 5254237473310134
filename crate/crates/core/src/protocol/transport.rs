use std::time::Duration;

use super::Message;
use crate::error::Result;

/// Message delivery between the center and its workers.
///
/// Implementations guarantee per-worker FIFO ordering. Queries (vector or
/// scalar kinds) produce exactly one reply per worker; broadcasts produce
/// none.
pub trait Transport {
    fn worker_count(&self) -> usize;

    fn send(&mut self, worker: usize, msg: &Message) -> Result<()>;

    fn broadcast(&mut self, msg: &Message) -> Result<()> {
        for w in 0..self.worker_count() {
            self.send(w, msg)?;
        }
        Ok(())
    }

    /// Next available reply. `Ok(None)` means nothing arrived within
    /// `timeout` (or, for transports that cannot block, that nothing is
    /// pending).
    fn receive(&mut self, timeout: Option<Duration>) -> Result<Option<(usize, Message)>>;
}
