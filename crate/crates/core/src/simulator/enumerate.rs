//! Exact finite-horizon return distributions by dynamic programming over
//! (state, accumulated return).

use std::fmt::Write as _;

use super::{Process, SimError};

/// Atoms closer than this are merged.
pub const ATOM_TOL: f64 = 1e-12;
/// Outcome-count and horizon limits for enumerating a reward process.
pub const MAX_BRANCHES: usize = 12;
pub const MAX_PROCESS_HORIZON: usize = 10;
/// Horizon and total-atom limits for enumerating a chain.
pub const MAX_CHAIN_HORIZON: usize = 400;
pub const MAX_ATOMS: usize = 1 << 21;

/// Exact law of `Σ_{t=1..N} γ^(t-1) R_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedDistribution {
    /// `(value, probability)`, sorted by value.
    atoms: Vec<(f64, f64)>,
    horizon: usize,
}

/// Sorts and merges atoms whose values are within [`ATOM_TOL`] of the first
/// value of their run.
fn merge_atoms(atoms: &mut Vec<(f64, f64)>) {
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    let mut anchor = f64::NAN;
    for &(v, p) in atoms.iter() {
        match out.last_mut() {
            Some(last) if (v - anchor).abs() <= ATOM_TOL => last.1 += p,
            _ => {
                anchor = v;
                out.push((v, p));
            }
        }
    }
    *atoms = out;
}

impl TruncatedDistribution {
    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|(v, p)| v * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.atoms.iter().map(|(v, p)| p * (v - m).powi(2)).sum()
    }

    /// Largest difference in value or probability between matched atoms, or
    /// `None` when the atom counts differ.
    pub fn max_discrepancy(&self, other: &TruncatedDistribution) -> Option<f64> {
        if self.atoms.len() != other.atoms.len() {
            return None;
        }
        Some(
            self.atoms
                .iter()
                .zip(&other.atoms)
                .map(|(a, b)| (a.0 - b.0).abs().max((a.1 - b.1).abs()))
                .fold(0.0, f64::max),
        )
    }

    /// Atom-for-atom equality within `tol` on both values and probabilities.
    pub fn matches(&self, other: &TruncatedDistribution, tol: f64) -> bool {
        self.max_discrepancy(other).is_some_and(|d| d <= tol)
    }

    /// CSV with columns `value,probability`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,probability\n");
        for (v, p) in &self.atoms {
            let _ = writeln!(out, "{v},{p}");
        }
        out
    }
}

/// Exact distribution of the return truncated after `horizon` reward epochs.
///
/// Reward processes are limited to [`MAX_BRANCHES`] outcomes per state and
/// [`MAX_PROCESS_HORIZON`] epochs; chains to [`MAX_CHAIN_HORIZON`] epochs and
/// [`MAX_ATOMS`] live atoms.
pub fn enumerate_truncated<'a>(
    process: impl Into<Process<'a>>,
    horizon: usize,
) -> Result<TruncatedDistribution, SimError> {
    let process = process.into();
    let c = process.compile();
    match process {
        Process::Reward(_) => {
            let widest = c.outcomes.iter().map(Vec::len).max().unwrap_or(0);
            if widest > MAX_BRANCHES || horizon > MAX_PROCESS_HORIZON {
                return Err(SimError::Intractable(format!(
                    "{widest} branches per step over {horizon} epochs (limits {MAX_BRANCHES}, {MAX_PROCESS_HORIZON})"
                )));
            }
        }
        Process::Chain(_) => {
            if horizon > MAX_CHAIN_HORIZON {
                return Err(SimError::Intractable(format!(
                    "horizon {horizon} exceeds {MAX_CHAIN_HORIZON}"
                )));
            }
        }
    }

    let n = c.outcomes.len();
    let mut layer: Vec<Vec<(f64, f64)>> = c
        .initial
        .iter()
        .map(|&m| if m > 0.0 { vec![(0.0, m)] } else { Vec::new() })
        .collect();
    let mut discount = 1.0;
    for _ in 0..horizon {
        let mut next: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n];
        for (x, atoms) in layer.iter().enumerate() {
            for o in &c.outcomes[x] {
                let step = discount * o.reward;
                next[o.next].extend(atoms.iter().map(|&(v, p)| (v + step, p * o.prob)));
            }
        }
        let mut live = 0;
        for atoms in &mut next {
            merge_atoms(atoms);
            live += atoms.len();
        }
        if live > MAX_ATOMS {
            return Err(SimError::Intractable(format!(
                "{live} distinct atoms exceed {MAX_ATOMS}"
            )));
        }
        layer = next;
        discount *= c.gamma;
    }
    let mut atoms: Vec<(f64, f64)> = layer.into_iter().flatten().collect();
    merge_atoms(&mut atoms);
    Ok(TruncatedDistribution { atoms, horizon })
}

/// Exact mean and variance of the truncated return, propagating per-state
/// probability mass and the first two return moments forward epoch by
/// epoch. No horizon limit applies.
pub fn truncated_moments<'a>(process: impl Into<Process<'a>>, horizon: usize) -> (f64, f64) {
    let c = process.into().compile();
    let n = c.outcomes.len();
    // (mass, Σ p·φ, Σ p·φ²) per state
    let mut layer: Vec<(f64, f64, f64)> = c.initial.iter().map(|&m| (m, 0.0, 0.0)).collect();
    let mut discount = 1.0;
    for _ in 0..horizon {
        let mut next = vec![(0.0, 0.0, 0.0); n];
        for (x, &(m, s1, s2)) in layer.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for o in &c.outcomes[x] {
                let step = discount * o.reward;
                let e = &mut next[o.next];
                e.0 += o.prob * m;
                e.1 += o.prob * (s1 + step * m);
                e.2 += o.prob * (s2 + 2.0 * step * s1 + step * step * m);
            }
        }
        layer = next;
        discount *= c.gamma;
    }
    let (s1, s2) = layer
        .iter()
        .fold((0.0, 0.0), |(a, b), &(_, x, y)| (a + x, b + y));
    (s1, (s2 - s1 * s1).max(0.0))
}
