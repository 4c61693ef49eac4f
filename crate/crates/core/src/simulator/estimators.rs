use serde::Serialize;

use super::{SampleGroups, SimError};

/// A grouped estimate: the average of per-group statistics, with the sample
/// standard deviation of those statistics divided by `√L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

fn aggregate(per_group: &[f64]) -> Estimate {
    let l = per_group.len() as f64;
    let value = per_group.iter().sum::<f64>() / l;
    let stderr = if per_group.len() < 2 {
        f64::NAN
    } else {
        let ss: f64 = per_group.iter().map(|x| (x - value).powi(2)).sum();
        (ss / (l - 1.0)).sqrt() / l.sqrt()
    };
    Estimate { value, stderr }
}

fn check(groups: &SampleGroups, min_sims: usize) -> Result<(), SimError> {
    if groups.sims_per_group() < min_sims {
        return Err(SimError::TooSmall("M (simulations per group)", min_sims));
    }
    if groups.returns.iter().flatten().any(|x| x.is_nan()) {
        return Err(SimError::NotANumber);
    }
    Ok(())
}

/// Empirical mean-variance risk: per group `mean_i − k · sd_i` (sample
/// standard deviation with `M − 1` denominator), averaged over groups.
pub fn empirical_mean_variance(groups: &SampleGroups, k: f64) -> Result<Estimate, SimError> {
    if !k.is_finite() {
        return Err(SimError::BadParameter(k));
    }
    check(groups, 2)?;
    let per_group: Vec<f64> = groups
        .returns
        .iter()
        .map(|g| {
            let m = g.len() as f64;
            let mean = g.iter().sum::<f64>() / m;
            let sd = (g.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
            mean - k * sd
        })
        .collect();
    Ok(aggregate(&per_group))
}

/// Empirical exponential utility: per group `β⁻¹ log(M⁻¹ Σ_t exp(β φ_t))`,
/// averaged over groups. At `β = 0` the per-group statistic is the group
/// mean, the limit of the expression.
pub fn empirical_utility(groups: &SampleGroups, beta: f64) -> Result<Estimate, SimError> {
    if !beta.is_finite() {
        return Err(SimError::BadParameter(beta));
    }
    check(groups, 1)?;
    let per_group: Vec<f64> = groups
        .returns
        .iter()
        .map(|g| {
            let m = g.len() as f64;
            if beta == 0.0 {
                return g.iter().sum::<f64>() / m;
            }
            let shift = g.iter().map(|x| beta * x).fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = g.iter().map(|x| (beta * x - shift).exp()).sum();
            ((s / m).ln() + shift) / beta
        })
        .collect();
    Ok(aggregate(&per_group))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn groups(returns: Vec<Vec<f64>>) -> SampleGroups {
        SampleGroups {
            returns,
            horizon: 1,
            seed: 0,
            process_tag: "test".into(),
        }
    }

    #[test]
    fn k_zero_is_grand_mean() {
        let g = groups(vec![vec![1.0, 2.0, 6.0], vec![0.0, -1.0, 4.0]]);
        let e = empirical_mean_variance(&g, 0.0).unwrap();
        assert!((e.value - 2.0).abs() < 1e-15);
        // group means 3 and 1 → sd √2, stderr 1
        assert!((e.stderr - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_returns_ignore_k() {
        let g = groups(vec![vec![2.5; 4]; 3]);
        for k in [-3.0, 0.0, 1.0, 10.0] {
            assert_eq!(empirical_mean_variance(&g, k).unwrap().value, 2.5);
        }
        for b in [-3.0, -0.1, 0.0, 2.0] {
            let u = empirical_utility(&g, b).unwrap().value;
            assert!((u - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_sd_uses_m_minus_one() {
        let g = groups(vec![vec![0.0, 2.0]]);
        // mean 1, sd √2
        let e = empirical_mean_variance(&g, 1.0).unwrap();
        assert!((e.value - (1.0 - 2f64.sqrt())).abs() < 1e-15);
        assert!(e.stderr.is_nan());
    }

    #[test]
    fn mean_variance_needs_two_sims() {
        let g = groups(vec![vec![1.0]]);
        assert!(empirical_mean_variance(&g, 1.0).is_err());
    }

    #[test]
    fn single_sample_utility_is_the_sample() {
        let g = groups(vec![vec![3.25], vec![-1.5]]);
        for b in [-2.0, -0.01, 0.5, 3.0] {
            let e = empirical_utility(&g, b).unwrap();
            assert!((e.value - (3.25 - 1.5) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn utility_near_zero_approaches_mean() {
        let g = groups(vec![vec![1.0, 2.0, 6.0], vec![0.0, -1.0, 4.0]]);
        let at0 = empirical_utility(&g, 0.0).unwrap().value;
        assert_eq!(at0, empirical_mean_variance(&g, 0.0).unwrap().value);
        let near = empirical_utility(&g, 1e-7).unwrap().value;
        assert!((near - at0).abs() < 1e-5);
    }

    #[test]
    fn large_beta_does_not_overflow() {
        let g = groups(vec![vec![1000.0, 999.0], vec![-1000.0, -998.0]]);
        let e = empirical_utility(&g, 5.0).unwrap();
        assert!(e.value.is_finite());
        let e = empirical_utility(&g, -5.0).unwrap();
        assert!(e.value.is_finite());
    }

    #[test]
    fn nan_is_rejected() {
        let g = groups(vec![vec![1.0, f64::NAN]]);
        assert_eq!(empirical_utility(&g, 0.1), Err(SimError::NotANumber));
        assert!(empirical_utility(&groups(vec![vec![1.0]]), f64::NAN).is_err());
    }
}
