use std::collections::VecDeque;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Institution, Message, Transport};
use crate::error::{Error, Result};

/// Order in which the simulated network hands pending replies to the center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryOrder {
    /// Lowest worker id first.
    InOrder,
    /// Highest worker id first.
    Reversed,
    /// Uniformly random pending worker, seeded.
    Shuffled(u64),
}

/// In-process federation: workers are isolated state machines and messages
/// are passed by value. Replies queue up per worker and are released in a
/// test-controlled [`DeliveryOrder`].
#[derive(Debug)]
pub struct SimTransport {
    workers: Vec<Institution>,
    pending: Vec<VecDeque<Message>>,
    order: DeliveryOrder,
    rng: ChaCha8Rng,
    silenced: Vec<bool>,
}

impl SimTransport {
    pub fn new(workers: Vec<Institution>) -> Self {
        let m = workers.len();
        Self {
            workers,
            pending: vec![VecDeque::new(); m],
            order: DeliveryOrder::InOrder,
            rng: ChaCha8Rng::seed_from_u64(0),
            silenced: vec![false; m],
        }
    }

    pub fn with_delivery(mut self, order: DeliveryOrder) -> Self {
        if let DeliveryOrder::Shuffled(seed) = order {
            self.rng = ChaCha8Rng::seed_from_u64(seed);
        }
        self.order = order;
        self
    }

    pub fn workers(&self) -> &[Institution] {
        &self.workers
    }

    /// Drops every future reply of `worker`, simulating a dead institution.
    pub fn silence(&mut self, worker: usize) {
        self.silenced[worker] = true;
    }

    /// Queues an arbitrary reply as if `worker` had sent it.
    pub fn inject_reply(&mut self, worker: usize, msg: Message) {
        self.pending[worker].push_back(msg);
    }
}

impl Transport for SimTransport {
    fn worker_count(&self) -> usize {
        self.workers.len()
    }

    fn send(&mut self, worker: usize, msg: &Message) -> Result<()> {
        let w = self
            .workers
            .get_mut(worker)
            .ok_or_else(|| Error::Protocol(format!("no worker {worker}")))?;
        if let Some(reply) = w.handle(msg) {
            if !self.silenced[worker] {
                self.pending[worker].push_back(reply);
            }
        }
        Ok(())
    }

    fn receive(&mut self, _timeout: Option<Duration>) -> Result<Option<(usize, Message)>> {
        let ready: Vec<usize> = (0..self.pending.len())
            .filter(|&w| !self.pending[w].is_empty())
            .collect();
        let pick = match (self.order, ready.is_empty()) {
            (_, true) => return Ok(None),
            (DeliveryOrder::InOrder, _) => ready[0],
            (DeliveryOrder::Reversed, _) => *ready.last().unwrap(),
            (DeliveryOrder::Shuffled(_), _) => ready[self.rng.random_range(0..ready.len())],
        };
        Ok(self.pending[pick].pop_front().map(|m| (pick, m)))
    }
}
