//! Risk evaluation for the discounted return of finite MDPs whose rewards
//! are random functions of the transition.
//!
//! The crate turns an MDP with a stochastic transition-based reward and a
//! randomized policy into a Markov chain with a deterministic state reward
//! (the state-augmentation transformation, [`sat`]), shrinks that chain by
//! merging isotopic states ([`lumping`]), and computes the exact return
//! mean and variance ([`evaluator`]). Mean-variance and exponential-utility
//! risks follow from those two moments. A reward-simplification baseline,
//! a seeded Monte-Carlo simulator and an exact enumeration oracle
//! ([`simulator`]) serve as comparisons.
//!
//! ```
//! use satrisk::{evaluator, fixtures, Pipeline};
//!
//! let (mdp, policy) = fixtures::ref1();
//! let r = evaluator::evaluate(&mdp, &policy.unwrap(), Pipeline::Sat).unwrap();
//! assert!((r.variance - 4.0 / 3.0).abs() < 1e-12);
//! ```

pub mod evaluator;
pub mod fixtures;
pub mod format;
pub mod lumping;
pub mod mdp;
pub mod model_file;
pub mod random;
pub mod sat;
pub mod simulator;
pub mod sweep;

pub use evaluator::{EvalError, EvalResult, Pipeline};
pub use lumping::{LumpError, LumpReport, LumpStrategy};
pub use mdp::{DetChain, Mdp, MdpBuilder, ModelError, Policy, RewardProcess, RewardTiming};
pub use model_file::{parse_model, parse_policy, render_model};
pub use sat::{AugMdp, AugState};
pub use simulator::{Process, SampleGroups, SimError, TruncatedDistribution};
