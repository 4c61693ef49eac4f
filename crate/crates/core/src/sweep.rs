//! Risk sweeps along `k` or `β` comparing exact pipelines with the grouped
//! empirical estimators.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::evaluator::{evaluate, mean_variance_risk, utility_taylor, EvalError, Pipeline};
use crate::format::sig12;
use crate::mdp::{induce, Mdp, Policy};
use crate::simulator::{
    empirical_mean_variance, empirical_utility, run_groups, Estimate, SampleGroups, SimError,
};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep: {0}")]
    Invalid(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Mean-variance risk `E − kσ`.
    K,
    /// Exponential utility; exact pipelines use the second-order expansion.
    Beta,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::K => "k",
            SweepParam::Beta => "beta",
        })
    }
}

impl FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "k" => Ok(SweepParam::K),
            "beta" => Ok(SweepParam::Beta),
            other => Err(format!("unknown sweep parameter '{other}' (k, beta)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepPipeline {
    Exact(Pipeline),
    Empirical,
}

impl FromStr for SweepPipeline {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "empirical" {
            Ok(SweepPipeline::Empirical)
        } else {
            s.parse()
                .map(SweepPipeline::Exact)
                .map_err(|e| format!("{e}; or empirical"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulationKnobs {
    /// `L`
    pub groups: usize,
    /// `M`
    pub sims: usize,
    /// `N`
    pub horizon: usize,
    pub seed: u64,
}

impl Default for SimulationKnobs {
    fn default() -> Self {
        SimulationKnobs {
            groups: 20,
            sims: 500,
            horizon: 200,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub from: f64,
    pub to: f64,
    pub step: f64,
    pub pipelines: Vec<SweepPipeline>,
    pub sim: SimulationKnobs,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        if !(self.from.is_finite() && self.to.is_finite() && self.step.is_finite()) {
            return Err(SweepError::Invalid("range bounds must be finite".into()));
        }
        if self.from >= self.to {
            return Err(SweepError::Invalid(format!(
                "from ({}) must be below to ({})",
                self.from, self.to
            )));
        }
        if self.step <= 0.0 {
            return Err(SweepError::Invalid("step must be positive".into()));
        }
        if self.pipelines.is_empty() {
            return Err(SweepError::Invalid("select at least one pipeline".into()));
        }
        Ok(())
    }

    /// `from, from + step, …` up to `to` inclusive (up to round-off).
    /// Values within `1e-9·step` of zero are set to exactly zero.
    pub fn values(&self) -> Vec<f64> {
        let count = ((self.to - self.from) / self.step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| {
                let v = self.from + i as f64 * self.step;
                if v.abs() < 1e-9 * self.step {
                    0.0
                } else {
                    v
                }
            })
            .collect()
    }

    fn has_empirical(&self) -> bool {
        self.pipelines.contains(&SweepPipeline::Empirical)
    }
}

/// A sweep result; `None` cells are left empty in CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl SweepTable {
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let c = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|c| c.map(sig12).unwrap_or_default()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

fn empirical_at(groups: &SampleGroups, param: SweepParam, x: f64) -> Result<Estimate, SimError> {
    match param {
        SweepParam::K => empirical_mean_variance(groups, x),
        SweepParam::Beta => empirical_utility(groups, x),
    }
}

/// Runs a sweep. The simulator is only invoked when the empirical pipeline
/// is selected; all empirical cells share one set of sample groups.
///
/// In a `β` sweep the empirical value at `β = 0` is the average of its two
/// neighbours, with the analytic limit (the sample mean) reported in the
/// `empirical_limit` column.
pub fn run_sweep(mdp: &Mdp, policy: &Policy, spec: &SweepSpec) -> Result<SweepTable, SweepError> {
    spec.validate()?;
    let values = spec.values();
    let mut header = vec![spec.param.to_string()];
    let mut columns: Vec<Vec<Option<f64>>> = Vec::new();
    for p in &spec.pipelines {
        match p {
            SweepPipeline::Exact(pipeline) => {
                let r = evaluate(mdp, policy, *pipeline)?;
                header.push(pipeline.as_str().replace('-', "_"));
                columns.push(
                    values
                        .iter()
                        .map(|&x| {
                            Some(match spec.param {
                                SweepParam::K => mean_variance_risk(r.mean, r.variance, x),
                                SweepParam::Beta => utility_taylor(r.mean, r.variance, x),
                            })
                        })
                        .collect(),
                );
            }
            SweepPipeline::Empirical => {
                let process = induce(mdp, policy).map_err(EvalError::from)?;
                let k = &spec.sim;
                let groups = run_groups(&process, k.groups, k.sims, k.horizon, k.seed)?;
                let mut est: Vec<Estimate> = values
                    .iter()
                    .map(|&x| empirical_at(&groups, spec.param, x))
                    .collect::<Result<_, _>>()?;
                let mut limit = vec![None; values.len()];
                if spec.param == SweepParam::Beta {
                    for i in 0..values.len() {
                        if values[i] != 0.0 {
                            continue;
                        }
                        limit[i] = Some(est[i].value);
                        if i > 0 && i + 1 < values.len() {
                            est[i] = Estimate {
                                value: 0.5 * (est[i - 1].value + est[i + 1].value),
                                stderr: 0.5 * (est[i - 1].stderr + est[i + 1].stderr),
                            };
                        }
                    }
                }
                header.push("empirical".into());
                header.push("empirical_stderr".into());
                columns.push(est.iter().map(|e| Some(e.value)).collect());
                columns.push(est.iter().map(|e| Some(e.stderr)).collect());
                if spec.param == SweepParam::Beta {
                    header.push("empirical_limit".into());
                    columns.push(limit);
                }
            }
        }
    }
    let rows = values
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            std::iter::once(Some(x))
                .chain(columns.iter().map(|c| c[i]))
                .collect()
        })
        .collect();
    Ok(SweepTable { header, rows })
}

/// Whether the sweep would touch the random number generator.
pub fn uses_rng(spec: &SweepSpec) -> bool {
    spec.has_empirical()
}
