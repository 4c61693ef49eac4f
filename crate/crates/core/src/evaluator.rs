//! Exact return mean and variance on chains with deterministic rewards, and
//! the two law-invariant risk measures built on them.
//!
//! For a chain with transition matrix `P`, reward `r` and discount `γ`, the
//! return from `x` satisfies `Φ(x) = r(x) + γ Φ(Y)`, which gives two linear
//! systems:
//!
//! ```text
//! v = r + γ P v
//! ψ = u + γ² P ψ,   u(x) = γ² [ Σ_y P(x,y) v(y)² − (Σ_y P(x,y) v(y))² ]
//! ```
//!
//! with `v(x) = E[Φ | X_1 = x]` and `ψ(x) = Var(Φ | X_1 = x)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::lumping::{lump, LumpError, LumpStrategy};
use crate::mdp::{simplify_reward, DetChain, Mdp, ModelError, Policy};
use crate::sat::transform_process;

/// Chains up to this size are solved by dense LU factorization; larger ones
/// by fixed-point iteration.
pub const DENSE_LIMIT: usize = 2000;
/// Bound on `‖(I − cP)x − b‖_∞`, scaled by `max(1, ‖b‖_∞)`.
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Negative variances down to this value are round-off and reported as 0.
pub const VARIANCE_FLOOR: f64 = -1e-10;

const ITERATIVE_TOL: f64 = 1e-12;
const ITERATIVE_CAP: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{system} system is singular")]
    Singular { system: &'static str },
    #[error("{system} system residual {residual:e} exceeds tolerance")]
    Residual { system: &'static str, residual: f64 },
    #[error("{system} iteration did not converge in {iterations} steps (residual {residual:e})")]
    NoConvergence {
        system: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("variance {0:e} is negative beyond round-off")]
    NegativeVariance(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lump(#[from] LumpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveMethod {
    #[default]
    Auto,
    Dense,
    Iterative,
}

/// Which route produced an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Sat,
    SatLumped,
    Simplified,
}

impl Pipeline {
    pub const ALL: [Pipeline; 3] = [Pipeline::Sat, Pipeline::SatLumped, Pipeline::Simplified];

    pub fn as_str(&self) -> &'static str {
        match self {
            Pipeline::Sat => "sat",
            Pipeline::SatLumped => "sat-lumped",
            Pipeline::Simplified => "simplified",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pipeline {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sat" => Ok(Pipeline::Sat),
            "sat-lumped" => Ok(Pipeline::SatLumped),
            "simplified" => Ok(Pipeline::Simplified),
            other => Err(format!(
                "unknown pipeline '{other}' (sat, sat-lumped, simplified)"
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalResult {
    pub mean: f64,
    pub variance: f64,
    pub per_state_value: Vec<f64>,
    pub per_state_variance: Vec<f64>,
    pub pipeline: Pipeline,
}

impl EvalResult {
    pub fn mean_variance_risk(&self, k: f64) -> f64 {
        mean_variance_risk(self.mean, self.variance, k)
    }

    pub fn utility_taylor(&self, beta: f64) -> f64 {
        utility_taylor(self.mean, self.variance, beta)
    }
}

/// Solves `(I − cP) x = b`.
fn solve(
    chain: &DetChain,
    c: f64,
    b: &[f64],
    method: SolveMethod,
    system: &'static str,
) -> Result<Vec<f64>, EvalError> {
    let n = chain.len();
    let dense = match method {
        SolveMethod::Auto => n <= DENSE_LIMIT,
        SolveMethod::Dense => true,
        SolveMethod::Iterative => false,
    };
    let x = if dense {
        let mut a = DMatrix::<f64>::identity(n, n);
        for (i, row) in chain.rows().iter().enumerate() {
            for &(j, p) in row {
                a[(i, j)] -= c * p;
            }
        }
        let rhs = DVector::from_column_slice(b);
        let sol = a.lu().solve(&rhs).ok_or(EvalError::Singular { system })?;
        sol.as_slice().to_vec()
    } else {
        fixed_point(chain, c, b, system)?
    };
    let scale = b.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let residual = residual(chain, c, &x, b);
    if residual > RESIDUAL_TOL * scale {
        return Err(EvalError::Residual { system, residual });
    }
    Ok(x)
}

fn apply(chain: &DetChain, x: &[f64]) -> Vec<f64> {
    chain
        .rows()
        .iter()
        .map(|row| row.iter().map(|&(j, p)| p * x[j]).sum())
        .collect()
}

/// `‖x − cPx − b‖_∞`.
pub fn residual(chain: &DetChain, c: f64, x: &[f64], b: &[f64]) -> f64 {
    apply(chain, x)
        .iter()
        .zip(x)
        .zip(b)
        .map(|((px, xi), bi)| (xi - c * px - bi).abs())
        .fold(0.0, f64::max)
}

fn fixed_point(
    chain: &DetChain,
    c: f64,
    b: &[f64],
    system: &'static str,
) -> Result<Vec<f64>, EvalError> {
    let scale = b.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let mut x = b.to_vec();
    let mut gap = f64::INFINITY;
    for _ in 0..ITERATIVE_CAP {
        let px = apply(chain, &x);
        let next: Vec<f64> = b.iter().zip(&px).map(|(bi, pi)| bi + c * pi).collect();
        gap = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        if gap < ITERATIVE_TOL * scale {
            return Ok(x);
        }
    }
    Err(EvalError::NoConvergence {
        system,
        iterations: ITERATIVE_CAP,
        residual: gap,
    })
}

/// Expected discounted return from each state, counting the state's own
/// reward at the first epoch.
pub fn value_vector(chain: &DetChain) -> Result<Vec<f64>, EvalError> {
    value_vector_with(chain, SolveMethod::Auto)
}

pub fn value_vector_with(chain: &DetChain, method: SolveMethod) -> Result<Vec<f64>, EvalError> {
    solve(chain, chain.gamma(), chain.reward(), method, "value")
}

/// Variance of the discounted return from each state, given the value
/// vector `v` of the same chain.
pub fn variance_vector(chain: &DetChain, v: &[f64]) -> Result<Vec<f64>, EvalError> {
    variance_vector_with(chain, v, SolveMethod::Auto)
}

pub fn variance_vector_with(
    chain: &DetChain,
    v: &[f64],
    method: SolveMethod,
) -> Result<Vec<f64>, EvalError> {
    let g2 = chain.gamma() * chain.gamma();
    let u: Vec<f64> = chain
        .rows()
        .iter()
        .map(|row| {
            let m: f64 = row.iter().map(|&(y, p)| p * v[y]).sum();
            // Centered form of E[v²] − (E v)²; never negative.
            let s: f64 = row.iter().map(|&(y, p)| p * (v[y] - m).powi(2)).sum();
            g2 * s
        })
        .collect();
    let psi = solve(chain, g2, &u, method, "variance")?;
    psi.into_iter().map(clamp_variance).collect()
}

fn clamp_variance(v: f64) -> Result<f64, EvalError> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= VARIANCE_FLOOR {
        Ok(0.0)
    } else {
        Err(EvalError::NegativeVariance(v))
    }
}

/// Mixes per-state moments over the distribution of the first rewarded
/// state (law of total variance).
fn mix(chain: &DetChain, v: &[f64], psi: &[f64]) -> Result<(f64, f64), EvalError> {
    let q = chain.first_reward_distribution();
    let mut mean: f64 = q.iter().zip(v).map(|(q, v)| q * v).sum();
    // A mean below the rounding bound of its own dot product is zero.
    let magnitude: f64 = q.iter().zip(v).map(|(q, v)| (q * v).abs()).sum();
    if mean.abs() <= 4.0 * q.len() as f64 * f64::EPSILON * magnitude {
        mean = 0.0;
    }
    let variance: f64 = q
        .iter()
        .zip(v)
        .zip(psi)
        .map(|((q, v), s)| q * (s + (v - mean).powi(2)))
        .sum();
    Ok((mean, clamp_variance(variance)?))
}

/// Mean and variance of the discounted return `Σ_{t≥1} γ^(t-1) R_t`.
///
/// For chains with [`RewardTiming::AfterStart`](crate::mdp::RewardTiming)
/// the start states are bookkeeping only: moments are mixed over the
/// distribution one step after the start.
pub fn return_moments(chain: &DetChain) -> Result<(f64, f64), EvalError> {
    let v = value_vector(chain)?;
    let psi = variance_vector(chain, &v)?;
    mix(chain, &v, &psi)
}

pub fn evaluate_chain(chain: &DetChain, pipeline: Pipeline) -> Result<EvalResult, EvalError> {
    let v = value_vector(chain)?;
    let psi = variance_vector(chain, &v)?;
    let (mean, variance) = mix(chain, &v, &psi)?;
    Ok(EvalResult {
        mean,
        variance,
        per_state_value: v,
        per_state_variance: psi,
        pipeline,
    })
}

/// Builds the chain a pipeline evaluates.
pub fn pipeline_chain(
    mdp: &Mdp,
    policy: &Policy,
    pipeline: Pipeline,
    strategy: LumpStrategy,
) -> Result<DetChain, EvalError> {
    Ok(match pipeline {
        Pipeline::Sat => transform_process(mdp, policy)?,
        Pipeline::SatLumped => lump(&transform_process(mdp, policy)?, strategy)?.merged_chain,
        Pipeline::Simplified => simplify_reward(mdp, policy)?,
    })
}

/// Evaluates `(mdp, policy)` through `pipeline`, lumping with the sat-key
/// strategy where applicable.
pub fn evaluate(mdp: &Mdp, policy: &Policy, pipeline: Pipeline) -> Result<EvalResult, EvalError> {
    let chain = pipeline_chain(mdp, policy, pipeline, LumpStrategy::SatKey)?;
    evaluate_chain(&chain, pipeline)
}

/// `E(Φ) − k σ(Φ)`; risk-averse for `k > 0`.
pub fn mean_variance_risk(mean: f64, variance: f64, k: f64) -> f64 {
    mean - k * variance.max(0.0).sqrt()
}

/// Second-order expansion of `β⁻¹ log E[exp(βΦ)]` around `β = 0`:
/// `E(Φ) + (β/2) V(Φ)`. Accurate only for small `|β|`.
pub fn utility_taylor(mean: f64, variance: f64, beta: f64) -> f64 {
    mean + 0.5 * beta * variance
}
