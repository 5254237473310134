#![allow(dead_code)]

use fedlasso::data::{partition, EncodedMatrix};
use fedlasso::protocol::{Federation, FederationConfig, Institution, SimTransport, SocketTransport, WorkerServer};
use fedlasso::{CentralProblem, FeatureShard, ResponseShard};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Shards = Vec<(FeatureShard, ResponseShard)>;

/// Gaussian design, sparse planted coefficients, small noise.
pub fn gaussian_matrix(seed: u64, n: usize, p: usize) -> EncodedMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
    let k = 5.min(p);
    let mut beta = vec![0.0; p];
    for _ in 0..k {
        let j = rng.random_range(0..p);
        beta[j] = if rng.random_bool(0.5) { 1.0 } else { -1.0 } * rng.random_range(1.0..2.0);
    }
    let response = (0..n)
        .map(|i| {
            let signal: f64 = (0..p).map(|j| values[j * n + i] * beta[j]).sum();
            signal + 0.1 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    EncodedMatrix {
        rows: n,
        cols: p,
        values,
        response,
        snp_ids: (0..p).collect(),
        truth: None,
    }
}

pub fn split(m: &EncodedMatrix, shards: usize, seed: u64) -> Shards {
    partition(m, shards, &[], seed).unwrap()
}

pub fn central(shards: &Shards) -> CentralProblem {
    CentralProblem::from_shards(shards).unwrap()
}

pub fn config(shards: &Shards) -> FederationConfig {
    FederationConfig::new(shards[0].0.cols(), shards.iter().map(|(a, _)| a.rows()).collect())
}

pub fn institutions(shards: &Shards) -> Vec<Institution> {
    shards
        .iter()
        .map(|(a, y)| Institution::new(a.clone(), y.clone()).unwrap())
        .collect()
}

pub fn sim(shards: &Shards) -> Federation<SimTransport> {
    Federation::new(SimTransport::new(institutions(shards)), config(shards)).unwrap()
}

/// Loopback socket federation with one server thread per shard.
pub struct SocketFed {
    pub fed: Federation<SocketTransport>,
    servers: Vec<WorkerServer>,
}

impl SocketFed {
    pub fn new(shards: &Shards) -> Self {
        let servers: Vec<WorkerServer> = institutions(shards)
            .into_iter()
            .map(|w| WorkerServer::spawn(w).unwrap())
            .collect();
        let addrs: Vec<_> = servers.iter().map(WorkerServer::addr).collect();
        let transport = SocketTransport::connect(&addrs).unwrap();
        Self {
            fed: Federation::new(transport, config(shards)).unwrap(),
            servers,
        }
    }

    pub fn close(mut self) {
        self.fed.shutdown().unwrap();
        for s in self.servers {
            s.join().unwrap();
        }
    }
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}
