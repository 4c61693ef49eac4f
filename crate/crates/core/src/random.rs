//! Seeded generator of small random MDP instances, used by property tests
//! and the acceptance suite.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::mdp::{Mdp, MdpBuilder, Policy};

/// Reward values instances draw from.
const REWARD_POOL: [f64; 10] = [-3.0, -2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0];

#[derive(Debug, Clone)]
pub struct InstanceShape {
    pub max_states: usize,
    pub max_actions: usize,
    pub max_rewards: usize,
    pub gamma: f64,
    /// Every state gets `max_actions` actions, every transition and every
    /// reward value gets positive probability, and exactly `max_states`
    /// states and `max_rewards` reward values are used.
    pub full_support: bool,
}

impl Default for InstanceShape {
    fn default() -> Self {
        InstanceShape {
            max_states: 3,
            max_actions: 2,
            max_rewards: 2,
            gamma: 0.5,
            full_support: false,
        }
    }
}

/// Random distribution over `k` outcomes; sparse unless `full`.
fn random_distribution<R: Rng>(rng: &mut R, k: usize, full: bool) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..k)
            .map(|_| {
                if !full && rng.random_bool(0.3) {
                    0.0
                } else {
                    rng.random_range(0.05..1.0)
                }
            })
            .collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            return w.iter().map(|x| x / total).collect();
        }
    }
}

pub fn random_instance<R: Rng>(rng: &mut R, shape: &InstanceShape) -> (Mdp, Policy) {
    let pick = |rng: &mut R, max: usize| {
        if shape.full_support {
            max
        } else {
            rng.random_range(1..=max)
        }
    };
    let n = pick(rng, shape.max_states);
    let nj = pick(rng, shape.max_rewards);
    let mut pool = REWARD_POOL.to_vec();
    pool.shuffle(rng);
    let support: Vec<f64> = pool[..nj].to_vec();
    let states: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();

    let mut b = MdpBuilder::new(shape.gamma);
    let mut policy = Policy::new();
    for s in &states {
        b.state(s.clone());
    }
    for s in &states {
        let na = pick(rng, shape.max_actions);
        let actions: Vec<String> = (0..na).map(|k| format!("u{k}")).collect();
        b.actions(s.clone(), actions.iter().cloned());
        let pi = random_distribution(rng, na, shape.full_support);
        for (a, p) in actions.iter().zip(&pi) {
            policy.set(s, a, *p);
        }
        for a in &actions {
            let next = random_distribution(rng, n, shape.full_support);
            for (t, &p) in states.iter().zip(&next) {
                if p == 0.0 {
                    continue;
                }
                b.transition(s.clone(), a.clone(), t.clone(), p);
                let d = random_distribution(rng, nj, shape.full_support);
                for (&j, &q) in support.iter().zip(&d) {
                    if q > 0.0 {
                        b.reward(s.clone(), a.clone(), t.clone(), j, q);
                    }
                }
            }
        }
    }
    let mu = if rng.random_bool(0.5) {
        let mut m = vec![0.0; n];
        m[rng.random_range(0..n)] = 1.0;
        m
    } else {
        random_distribution(rng, n, shape.full_support)
    };
    for (s, &p) in states.iter().zip(&mu) {
        if p > 0.0 {
            b.initial(s.clone(), p);
        }
    }
    let mdp = b.build().expect("generated instance is valid");
    (mdp, policy)
}
