//! Synthetic transfer workload.

use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::{ChainId, EntityId, Leg, TransactionRequest, TxnId};
use crate::config::RunConfig;
use crate::time::{Dur, Time};

/// Independent random streams derived from one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Workload = 1,
    Network = 2,
    Failures = 3,
    /// Fork draws of chain `i` use stream `ChainBase + i`.
    ChainBase = 100,
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Samples ranks `0..n` with probability proportional to `1 / (rank+1)^s`.
#[derive(Clone, Debug)]
pub struct Zipf {
    cdf: Vec<f64>,
}

impl Zipf {
    pub fn new(n: u32, exponent: f64) -> Zipf {
        let mut cdf = Vec::with_capacity(n as usize);
        let mut acc = 0.0;
        for rank in 1..=n {
            acc += 1.0 / libm::pow(rank as f64, exponent);
            cdf.push(acc);
        }
        for v in &mut cdf {
            *v /= acc;
        }
        Zipf { cdf }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.gen();
        let i = self.cdf.partition_point(|&c| c <= u);
        i.min(self.cdf.len() - 1) as u32
    }
}

fn exponential<R: Rng>(rng: &mut R, rate: f64) -> f64 {
    let u: f64 = rng.gen();
    -libm::log(1.0 - u) / rate
}

/// Seeded transfers: a uniformly chosen coordinator chain that always holds a
/// leg, the other chains drawn without replacement, one payer covering the
/// payees' amounts (each uniform in `[1, 100]`), Poisson arrivals at
/// `arrival_rate` per chain.
pub fn generate_workload(cfg: &RunConfig) -> Vec<TransactionRequest> {
    let mut rng = rng_for(cfg.seed, Stream::Workload as u64);
    let zipf = Zipf::new(cfg.entities_per_chain, cfg.zipf_exponent);
    let total_rate = cfg.arrival_rate * cfg.n_chains as f64;
    let n = cfg.n_chains as usize;
    let legs = cfg.legs_per_txn as usize;
    let mut clock = 0.0f64;
    let mut out = Vec::with_capacity(cfg.n_transactions as usize);
    for k in 0..cfg.n_transactions {
        clock += exponential(&mut rng, total_rate);
        let coordinator = rng.gen_range(0..n);
        let mut chains = alloc::vec![coordinator];
        for c in index::sample(&mut rng, n - 1, legs - 1).into_iter() {
            // Indices skip the coordinator.
            chains.push(if c >= coordinator { c + 1 } else { c });
        }
        let payer = rng.gen_range(0..legs);
        let mut legs_out: Vec<Leg> = chains
            .iter()
            .map(|&c| {
                let chain = ChainId::from_slot(c);
                Leg { chain, entity: EntityId { chain, account: zipf.sample(&mut rng) }, delta: 0 }
            })
            .collect();
        let mut paid = 0i64;
        for (i, leg) in legs_out.iter_mut().enumerate() {
            if i != payer {
                let amount = rng.gen_range(1..=100i64);
                leg.delta = amount;
                paid += amount;
            }
        }
        legs_out[payer].delta = -paid;
        legs_out.sort_by_key(|l| l.chain);
        out.push(TransactionRequest {
            uuid: TxnId(k as u64 + 1),
            coordinator: ChainId::from_slot(coordinator),
            legs: legs_out,
            submit_time: Time::ZERO + Dur::from_secs_f64(clock),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_workload() {
        let cfg = RunConfig { n_transactions: 0, ..RunConfig::default() };
        assert!(generate_workload(&cfg).is_empty());
    }

    #[test]
    fn two_chains_span_both() {
        let cfg = RunConfig { n_chains: 2, legs_per_txn: 2, n_transactions: 200, ..RunConfig::default() };
        for r in generate_workload(&cfg) {
            assert_eq!(r.chains(), alloc::vec![ChainId(1), ChainId(2)]);
            r.validate().unwrap();
        }
    }

    #[test]
    fn requests_are_valid_and_ordered() {
        let cfg = RunConfig { n_chains: 8, legs_per_txn: 3, n_transactions: 500, zipf_exponent: 1.1, ..RunConfig::default() };
        let w = generate_workload(&cfg);
        assert_eq!(w, generate_workload(&cfg));
        let mut last = Time::ZERO;
        for r in &w {
            r.validate().unwrap();
            assert_eq!(r.legs.len(), 3);
            assert!(r.leg_on(r.coordinator).is_some());
            assert!(r.submit_time >= last);
            last = r.submit_time;
        }
    }

    #[test]
    fn zipf_uniform_and_skewed() {
        let mut rng = rng_for(3, 0);
        let flat = Zipf::new(4, 0.0);
        let mut counts = [0u32; 4];
        for _ in 0..40_000 {
            counts[flat.sample(&mut rng) as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 - 10_000.0).abs() < 500.0);
        }
        let skew = Zipf::new(100, 1.5);
        let top = (0..10_000).filter(|_| skew.sample(&mut rng) == 0).count();
        assert!(top > 3000);
    }
}
