//! Seeded Monte-Carlo simulation of discounted returns, grouped empirical
//! risk estimators, and exact finite-horizon enumeration.
//!
//! Both process kinds are compiled into the same form: from each state, a
//! table of `(next state, reward)` outcomes. For a [`RewardProcess`] the
//! reward is drawn jointly with the transition; for a [`DetChain`] it is the
//! reward of the current state, or of the next state when the chain starts
//! in zero-reward bookkeeping states.

mod enumerate;
mod estimators;

pub use enumerate::{enumerate_truncated, truncated_moments, TruncatedDistribution};
pub use estimators::{empirical_mean_variance, empirical_utility, Estimate};

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::mdp::{DetChain, RewardProcess, RewardTiming};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("{0} must be at least {1}")]
    TooSmall(&'static str, usize),
    #[error("enumeration is intractable: {0}")]
    Intractable(String),
    #[error("simulated returns contain NaN")]
    NotANumber,
    #[error("parameter must be finite, got {0}")]
    BadParameter(f64),
}

/// A process that can be simulated or enumerated.
#[derive(Debug, Clone, Copy)]
pub enum Process<'a> {
    Reward(&'a RewardProcess),
    Chain(&'a DetChain),
}

impl<'a> From<&'a RewardProcess> for Process<'a> {
    fn from(p: &'a RewardProcess) -> Self {
        Process::Reward(p)
    }
}

impl<'a> From<&'a DetChain> for Process<'a> {
    fn from(c: &'a DetChain) -> Self {
        Process::Chain(c)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Outcome {
    pub next: usize,
    pub reward: f64,
    pub prob: f64,
}

/// Outcome tables of a process.
#[derive(Debug, Clone)]
pub(crate) struct Compiled {
    pub gamma: f64,
    pub initial: Vec<f64>,
    pub outcomes: Vec<Vec<Outcome>>,
    pub max_abs_reward: f64,
}

impl Process<'_> {
    pub fn gamma(&self) -> f64 {
        match self {
            Process::Reward(p) => p.gamma(),
            Process::Chain(c) => c.gamma(),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Process::Reward(_) => "reward-process",
            Process::Chain(c) => match c.timing() {
                RewardTiming::Immediate => "chain",
                RewardTiming::AfterStart => "augmented-chain",
            },
        }
    }

    pub fn max_abs_reward(&self) -> f64 {
        match self {
            Process::Reward(p) => p.max_abs_reward(),
            Process::Chain(c) => c.max_abs_reward(),
        }
    }

    pub(crate) fn compile(&self) -> Compiled {
        let outcomes = match self {
            Process::Reward(p) => (0..p.num_states())
                .map(|x| {
                    p.row(x)
                        .iter()
                        .flat_map(|b| {
                            b.rewards.iter().map(move |r| Outcome {
                                next: b.to,
                                reward: r.value,
                                prob: b.prob * r.prob,
                            })
                        })
                        .collect()
                })
                .collect(),
            Process::Chain(c) => (0..c.len())
                .map(|x| {
                    c.row(x)
                        .iter()
                        .map(|&(y, p)| Outcome {
                            next: y,
                            reward: match c.timing() {
                                RewardTiming::Immediate => c.reward()[x],
                                RewardTiming::AfterStart => c.reward()[y],
                            },
                            prob: p,
                        })
                        .collect()
                })
                .collect(),
        };
        let initial = match self {
            Process::Reward(p) => p.initial().to_vec(),
            Process::Chain(c) => c.initial().to_vec(),
        };
        Compiled {
            gamma: self.gamma(),
            initial,
            outcomes,
            max_abs_reward: self.max_abs_reward(),
        }
    }
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    weights
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect()
}

fn draw(cum: &[f64], u: f64) -> usize {
    // u is in [0, 1); the last entry absorbs round-off in the cumulative sum.
    let total = *cum.last().expect("nonempty distribution");
    cum.partition_point(|&c| c <= u * total).min(cum.len() - 1)
}

/// Precomputed sampling tables for one process.
#[derive(Debug, Clone)]
pub struct Sampler {
    gamma: f64,
    start: Vec<f64>,
    cum: Vec<Vec<f64>>,
    next: Vec<Vec<usize>>,
    reward: Vec<Vec<f64>>,
    max_abs_reward: f64,
    tag: &'static str,
}

impl Sampler {
    pub fn new<'a>(process: impl Into<Process<'a>>) -> Self {
        let process = process.into();
        let c = process.compile();
        Sampler {
            gamma: c.gamma,
            start: cumulative(c.initial.iter().copied()),
            cum: c
                .outcomes
                .iter()
                .map(|o| cumulative(o.iter().map(|o| o.prob)))
                .collect(),
            next: c
                .outcomes
                .iter()
                .map(|o| o.iter().map(|o| o.next).collect())
                .collect(),
            reward: c
                .outcomes
                .iter()
                .map(|o| o.iter().map(|o| o.reward).collect())
                .collect(),
            max_abs_reward: c.max_abs_reward,
            tag: process.tag(),
        }
    }

    /// One truncated return `Σ_{t=1..N} γ^(t-1) R_t`, drawing every random
    /// number from `rng`.
    pub fn sample_return<R: Rng + ?Sized>(&self, horizon: usize, rng: &mut R) -> f64 {
        let mut x = draw(&self.start, rng.random::<f64>());
        let mut discount = 1.0;
        let mut ret = 0.0;
        for _ in 0..horizon {
            let k = draw(&self.cum[x], rng.random::<f64>());
            ret += discount * self.reward[x][k];
            discount *= self.gamma;
            x = self.next[x][k];
        }
        ret
    }

    /// Bound on `|φ|` for any horizon.
    pub fn return_bound(&self) -> f64 {
        self.max_abs_reward / (1.0 - self.gamma)
    }
}

/// Single-trajectory convenience wrapper around [`Sampler`].
pub fn sample_return<'a, R: Rng + ?Sized>(
    process: impl Into<Process<'a>>,
    horizon: usize,
    rng: &mut R,
) -> f64 {
    Sampler::new(process).sample_return(horizon, rng)
}

/// The RNG stream of simulation `sim` in group `group`.
///
/// Streams are a pure function of `(seed, group, sim)`, so results do not
/// depend on scheduling.
pub fn stream_rng(seed: u64, group: usize, sim: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((group as u64) << 32) | (sim as u64 & 0xffff_ffff));
    rng
}

/// `L × M` simulated truncated returns.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGroups {
    /// `returns[i][t]` is simulation `t` of group `i`.
    pub returns: Vec<Vec<f64>>,
    pub horizon: usize,
    pub seed: u64,
    pub process_tag: String,
}

impl SampleGroups {
    pub fn groups(&self) -> usize {
        self.returns.len()
    }

    pub fn sims_per_group(&self) -> usize {
        self.returns.first().map_or(0, Vec::len)
    }

    /// CSV with columns `group,sim,return`; returns in shortest round-trip
    /// notation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,sim,return\n");
        for (i, g) in self.returns.iter().enumerate() {
            for (t, phi) in g.iter().enumerate() {
                let _ = writeln!(out, "{i},{t},{phi}");
            }
        }
        out
    }
}

/// Runs `groups × sims` simulations of `horizon` reward epochs each.
pub fn run_groups<'a>(
    process: impl Into<Process<'a>>,
    groups: usize,
    sims: usize,
    horizon: usize,
    seed: u64,
) -> Result<SampleGroups, SimError> {
    if groups == 0 {
        return Err(SimError::TooSmall("L (groups)", 1));
    }
    if sims == 0 {
        return Err(SimError::TooSmall("M (simulations per group)", 1));
    }
    if horizon == 0 {
        return Err(SimError::TooSmall("N (horizon)", 1));
    }
    let sampler = Sampler::new(process);
    let returns = (0..groups)
        .into_par_iter()
        .map(|i| {
            (0..sims)
                .map(|t| sampler.sample_return(horizon, &mut stream_rng(seed, i, t)))
                .collect()
        })
        .collect();
    Ok(SampleGroups {
        returns,
        horizon,
        seed,
        process_tag: sampler.tag.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::mdp::induce;

    #[test]
    fn ref1_one_step_is_fair() {
        let (mdp, policy) = fixtures::ref1();
        let rp = induce(&mdp, &policy.unwrap()).unwrap();
        let sampler = Sampler::new(&rp);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let mut plus = 0;
        for _ in 0..n {
            let phi = sampler.sample_return(1, &mut rng);
            assert!(phi == 1.0 || phi == -1.0);
            plus += (phi == 1.0) as usize;
        }
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((plus as f64 - n as f64 / 2.0).abs() < 3.0 * sigma);
    }

    #[test]
    fn ref1_two_steps_hit_four_values() {
        let (mdp, policy) = fixtures::ref1();
        let rp = induce(&mdp, &policy.unwrap()).unwrap();
        let sampler = Sampler::new(&rp);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values = [1.5, 0.5, -0.5, -1.5];
        let mut counts = [0usize; 4];
        let n = 8000;
        for _ in 0..n {
            let phi = sampler.sample_return(2, &mut rng);
            let k = values.iter().position(|v| *v == phi).expect("unexpected return");
            counts[k] += 1;
        }
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 / 4.0).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn groups_are_deterministic_and_bounded() {
        let (mdp, policy) = fixtures::ref2();
        let rp = induce(&mdp, &policy.unwrap()).unwrap();
        let a = run_groups(&rp, 3, 4, 50, 9).unwrap();
        let b = run_groups(&rp, 3, 4, 50, 9).unwrap();
        assert_eq!(a, b);
        let bound = Sampler::new(&rp).return_bound() + 1e-9;
        assert!(a.returns.iter().flatten().all(|p| p.is_finite() && p.abs() <= bound));
        let single = run_groups(&rp, 1, 1, 1, 5).unwrap();
        assert_eq!(single, run_groups(&rp, 1, 1, 1, 5).unwrap());
        assert!(run_groups(&rp, 0, 1, 1, 5).is_err());
    }

    #[test]
    fn thread_count_does_not_matter() {
        let (mdp, policy) = fixtures::ref2();
        let rp = induce(&mdp, &policy.unwrap()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool.install(|| run_groups(&rp, 6, 20, 30, 1).unwrap());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let parallel = pool.install(|| run_groups(&rp, 6, 20, 30, 1).unwrap());
        assert_eq!(serial, parallel);
    }

    #[test]
    fn csv_layout() {
        let g = SampleGroups {
            returns: vec![vec![1.5, -0.25]],
            horizon: 2,
            seed: 0,
            process_tag: "chain".into(),
        };
        assert_eq!(g.to_csv(), "group,sim,return\n0,0,1.5\n0,1,-0.25\n");
    }
}
