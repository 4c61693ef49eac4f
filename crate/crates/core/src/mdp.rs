//! Finite MDPs with stochastic transition-based rewards, randomized policies,
//! and the two kinds of processes a policy induces: a Markov reward process
//! that keeps the stochastic reward, and a chain with a deterministic
//! state-based reward.

use std::collections::HashMap;

use indexmap::IndexMap;
use thiserror::Error;

use crate::sat::AugState;

/// Tolerance on every probability sum (rows, reward distributions, initial
/// distribution, policy rules).
pub const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("{what} for {location} sum to {sum} (residual {residual:+e})")]
    Invariant {
        what: &'static str,
        location: String,
        sum: f64,
        residual: f64,
    },
    #[error("policy does not match model: {0}")]
    PolicyMismatch(String),
}

impl ModelError {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Decides how a probability mass that should be 1 is treated.
///
/// Sums within a few ulps of 1 are kept bit-for-bit, sums inside the
/// tolerance band are renormalized, anything else is rejected with the
/// residual `sum - 1`.
pub(crate) fn mass_scale(sum: f64, terms: usize) -> Result<Option<f64>, f64> {
    let residual = sum - 1.0;
    if !sum.is_finite() {
        return Err(residual);
    }
    if residual.abs() <= (terms.max(1) as f64) * f64::EPSILON {
        Ok(None)
    } else if residual.abs() < PROB_TOL {
        Ok(Some(1.0 / sum))
    } else {
        Err(residual)
    }
}

fn check_probability(path: String, p: f64) -> Result<(), ModelError> {
    if !p.is_finite() || !(0.0..=1.0).contains(&p) {
        return Err(ModelError::schema(path, format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<(), ModelError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(ModelError::schema(
            "gamma",
            format!("discount factor {gamma} must lie in (0, 1)"),
        ));
    }
    Ok(())
}

/// One reward value with its conditional probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardAtom {
    pub value: f64,
    pub prob: f64,
}

/// A positive-probability transition to `to`, with the reward distribution
/// attached to that transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub to: usize,
    pub prob: f64,
    pub rewards: Vec<RewardAtom>,
}

/// A finite MDP whose reward is drawn from `d(j | x, a, y)` on every
/// transition.
///
/// Only positive-probability transitions and reward atoms are stored; zero
/// entries in the input are dropped during validation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    states: Vec<String>,
    actions: Vec<Vec<String>>,
    reward_support: Vec<f64>,
    kernel: Vec<Vec<Vec<Branch>>>,
    initial: Vec<f64>,
    gamma: f64,
}

impl Mdp {
    /// Assembles an MDP from parts that are valid by construction.
    pub(crate) fn from_parts(
        states: Vec<String>,
        actions: Vec<Vec<String>>,
        reward_support: Vec<f64>,
        kernel: Vec<Vec<Vec<Branch>>>,
        initial: Vec<f64>,
        gamma: f64,
    ) -> Self {
        Mdp {
            states,
            actions,
            reward_support,
            kernel,
            initial,
            gamma,
        }
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    /// The ordered action set `A_x`.
    pub fn actions(&self, x: usize) -> &[String] {
        &self.actions[x]
    }

    pub fn action_index(&self, x: usize, name: &str) -> Option<usize> {
        self.actions[x].iter().position(|a| a == name)
    }

    /// Size of the union of all action sets.
    pub fn num_distinct_actions(&self) -> usize {
        let mut names: Vec<&String> = self.actions.iter().flatten().collect();
        names.sort();
        names.dedup();
        names.len()
    }

    pub fn reward_support(&self) -> &[f64] {
        &self.reward_support
    }

    /// Positive-probability branches out of `(x, a)`, ordered by target.
    pub fn branches(&self, x: usize, a: usize) -> &[Branch] {
        &self.kernel[x][a]
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `p(y | x, a)`.
    pub fn transition(&self, x: usize, a: usize, y: usize) -> f64 {
        self.branch(x, a, y).map_or(0.0, |b| b.prob)
    }

    /// `d(j | x, a, y)`.
    pub fn reward_prob(&self, x: usize, a: usize, y: usize, j: f64) -> f64 {
        self.branch(x, a, y)
            .map(|b| b.rewards.iter().filter(|r| r.value == j).map(|r| r.prob).sum())
            .unwrap_or(0.0)
    }

    fn branch(&self, x: usize, a: usize, y: usize) -> Option<&Branch> {
        let row = &self.kernel[x][a];
        row.binary_search_by_key(&y, |b| b.to).ok().map(|i| &row[i])
    }

    /// Same model under a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Mdp, ModelError> {
        check_gamma(gamma)?;
        Ok(Mdp {
            gamma,
            ..self.clone()
        })
    }

    /// Largest absolute reward value with positive probability.
    pub fn max_abs_reward(&self) -> f64 {
        self.reward_support.iter().fold(0.0, |m, j| m.max(j.abs()))
    }
}

#[derive(Debug, Clone)]
struct PendingTransition {
    from: String,
    action: String,
    to: String,
    prob: f64,
}

#[derive(Debug, Clone)]
struct PendingReward {
    from: String,
    action: String,
    to: String,
    value: f64,
    prob: f64,
}

/// Name-based builder for [`Mdp`]; all validation happens in [`MdpBuilder::build`].
///
/// Error paths refer to entries by insertion order, e.g. `transitions[3].to`,
/// which lines up with the model file when the parser feeds entries in
/// document order.
#[derive(Debug, Clone, Default)]
pub struct MdpBuilder {
    gamma: f64,
    states: Vec<String>,
    actions: Vec<(String, Vec<String>)>,
    transitions: Vec<PendingTransition>,
    rewards: Vec<PendingReward>,
    initial: Vec<(String, f64)>,
    reward_support: Option<Vec<f64>>,
}

impl MdpBuilder {
    pub fn new(gamma: f64) -> Self {
        MdpBuilder {
            gamma,
            ..Default::default()
        }
    }

    pub fn state(&mut self, name: impl Into<String>) -> &mut Self {
        self.states.push(name.into());
        self
    }

    pub fn actions<S: Into<String>>(
        &mut self,
        state: impl Into<String>,
        names: impl IntoIterator<Item = S>,
    ) -> &mut Self {
        self.actions
            .push((state.into(), names.into_iter().map(Into::into).collect()));
        self
    }

    pub fn transition(
        &mut self,
        from: impl Into<String>,
        action: impl Into<String>,
        to: impl Into<String>,
        prob: f64,
    ) -> &mut Self {
        self.transitions.push(PendingTransition {
            from: from.into(),
            action: action.into(),
            to: to.into(),
            prob,
        });
        self
    }

    pub fn reward(
        &mut self,
        from: impl Into<String>,
        action: impl Into<String>,
        to: impl Into<String>,
        value: f64,
        prob: f64,
    ) -> &mut Self {
        self.rewards.push(PendingReward {
            from: from.into(),
            action: action.into(),
            to: to.into(),
            value,
            prob,
        });
        self
    }

    pub fn initial(&mut self, state: impl Into<String>, prob: f64) -> &mut Self {
        self.initial.push((state.into(), prob));
        self
    }

    pub fn reward_support(&mut self, values: Vec<f64>) -> &mut Self {
        self.reward_support = Some(values);
        self
    }

    pub fn build(&self) -> Result<Mdp, ModelError> {
        check_gamma(self.gamma)?;
        if self.states.is_empty() {
            return Err(ModelError::schema("states", "at least one state is required"));
        }
        let mut index = HashMap::new();
        for (i, s) in self.states.iter().enumerate() {
            if index.insert(s.as_str(), i).is_some() {
                return Err(ModelError::schema(
                    format!("states[{i}]"),
                    format!("duplicate state '{s}'"),
                ));
            }
        }
        let n = self.states.len();
        let lookup = |path: String, name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| ModelError::schema(path, format!("unknown state '{name}'")))
        };

        let mut actions: Vec<Option<Vec<String>>> = vec![None; n];
        for (state, names) in &self.actions {
            let x = lookup(format!("actions.{state}"), state)?;
            if actions[x].is_some() {
                return Err(ModelError::schema(
                    format!("actions.{state}"),
                    "action set given twice",
                ));
            }
            for (k, a) in names.iter().enumerate() {
                if names[..k].contains(a) {
                    return Err(ModelError::schema(
                        format!("actions.{state}[{k}]"),
                        format!("duplicate action '{a}'"),
                    ));
                }
            }
            actions[x] = Some(names.clone());
        }
        let actions: Vec<Vec<String>> = actions
            .into_iter()
            .enumerate()
            .map(|(x, a)| match a {
                Some(a) if !a.is_empty() => Ok(a),
                _ => Err(ModelError::schema(
                    format!("actions.{}", self.states[x]),
                    "every state needs a nonempty action set",
                )),
            })
            .collect::<Result<_, _>>()?;

        let resolve_action = |path: String, x: usize, name: &str| {
            actions[x].iter().position(|a| a == name).ok_or_else(|| {
                ModelError::schema(
                    path,
                    format!("action '{name}' not available in state '{}'", self.states[x]),
                )
            })
        };

        // (x, a, y) -> (entry index, prob)
        let mut trans: HashMap<(usize, usize, usize), (usize, f64)> = HashMap::new();
        for (i, t) in self.transitions.iter().enumerate() {
            let x = lookup(format!("transitions[{i}].from"), &t.from)?;
            let a = resolve_action(format!("transitions[{i}].action"), x, &t.action)?;
            let y = lookup(format!("transitions[{i}].to"), &t.to)?;
            check_probability(format!("transitions[{i}].prob"), t.prob)?;
            if trans.insert((x, a, y), (i, t.prob)).is_some() {
                return Err(ModelError::schema(
                    format!("transitions[{i}]"),
                    format!("duplicate transition ({}, {}, {})", t.from, t.action, t.to),
                ));
            }
        }

        let mut rewards: HashMap<(usize, usize, usize), Vec<RewardAtom>> = HashMap::new();
        for (i, r) in self.rewards.iter().enumerate() {
            let x = lookup(format!("rewards[{i}].from"), &r.from)?;
            let a = resolve_action(format!("rewards[{i}].action"), x, &r.action)?;
            let y = lookup(format!("rewards[{i}].to"), &r.to)?;
            if !r.value.is_finite() {
                return Err(ModelError::schema(
                    format!("rewards[{i}].value"),
                    "reward value must be finite",
                ));
            }
            check_probability(format!("rewards[{i}].prob"), r.prob)?;
            if !trans.contains_key(&(x, a, y)) {
                return Err(ModelError::schema(
                    format!("rewards[{i}]"),
                    format!("no transition ({}, {}, {}) declared", r.from, r.action, r.to),
                ));
            }
            let atoms = rewards.entry((x, a, y)).or_default();
            if atoms.iter().any(|at| at.value == r.value) {
                return Err(ModelError::schema(
                    format!("rewards[{i}]"),
                    format!(
                        "duplicate reward value {} for ({}, {}, {})",
                        r.value, r.from, r.action, r.to
                    ),
                ));
            }
            atoms.push(RewardAtom {
                value: r.value,
                prob: r.prob,
            });
        }

        let mut kernel: Vec<Vec<Vec<Branch>>> =
            actions.iter().map(|a| vec![Vec::new(); a.len()]).collect();
        let mut entries: Vec<_> = trans.into_iter().collect();
        entries.sort_by_key(|(key, _)| *key);
        for ((x, a, y), (_, prob)) in entries {
            if prob == 0.0 {
                continue;
            }
            let mut atoms: Vec<RewardAtom> = rewards
                .remove(&(x, a, y))
                .unwrap_or_default()
                .into_iter()
                .filter(|r| r.prob > 0.0)
                .collect();
            let location = format!(
                "({}, {}, {})",
                self.states[x], actions[x][a], self.states[y]
            );
            let sum: f64 = atoms.iter().map(|r| r.prob).sum();
            match mass_scale(sum, atoms.len()) {
                Ok(Some(scale)) => atoms.iter_mut().for_each(|r| r.prob *= scale),
                Ok(None) => {}
                Err(residual) => {
                    return Err(ModelError::Invariant {
                        what: "reward probabilities",
                        location,
                        sum,
                        residual,
                    })
                }
            }
            kernel[x][a].push(Branch {
                to: y,
                prob,
                rewards: atoms,
            });
        }
        for x in 0..n {
            for a in 0..actions[x].len() {
                let row = &mut kernel[x][a];
                let sum: f64 = row.iter().map(|b| b.prob).sum();
                match mass_scale(sum, row.len()) {
                    Ok(Some(scale)) => row.iter_mut().for_each(|b| b.prob *= scale),
                    Ok(None) => {}
                    Err(residual) => {
                        return Err(ModelError::Invariant {
                            what: "transition probabilities",
                            location: format!("({}, {})", self.states[x], actions[x][a]),
                            sum,
                            residual,
                        })
                    }
                }
            }
        }

        let mut used: Vec<f64> = Vec::new();
        for atom in kernel.iter().flatten().flatten().flat_map(|b| &b.rewards) {
            if !used.contains(&atom.value) {
                used.push(atom.value);
            }
        }
        let reward_support = match &self.reward_support {
            Some(support) => {
                for (k, j) in support.iter().enumerate() {
                    if !j.is_finite() || support[..k].contains(j) {
                        return Err(ModelError::schema(
                            format!("reward_support[{k}]"),
                            format!("invalid or duplicate reward value {j}"),
                        ));
                    }
                }
                if let Some(j) = used.iter().find(|j| !support.contains(j)) {
                    return Err(ModelError::schema(
                        "reward_support",
                        format!("reward value {j} has positive probability but is not listed"),
                    ));
                }
                support.clone()
            }
            None => {
                used.sort_by(f64::total_cmp);
                used
            }
        };

        let mut initial = vec![0.0; n];
        let mut seen = vec![false; n];
        for (state, p) in &self.initial {
            let x = lookup(format!("initial.{state}"), state)?;
            check_probability(format!("initial.{state}"), *p)?;
            if std::mem::replace(&mut seen[x], true) {
                return Err(ModelError::schema(
                    format!("initial.{state}"),
                    "initial probability given twice",
                ));
            }
            initial[x] = *p;
        }
        let sum: f64 = initial.iter().sum();
        match mass_scale(sum, n) {
            Ok(Some(scale)) => initial.iter_mut().for_each(|p| *p *= scale),
            Ok(None) => {}
            Err(residual) => {
                return Err(ModelError::Invariant {
                    what: "initial probabilities",
                    location: "the initial distribution".into(),
                    sum,
                    residual,
                })
            }
        }

        Ok(Mdp {
            states: self.states.clone(),
            actions,
            reward_support,
            kernel,
            initial,
            gamma: self.gamma,
        })
    }
}

/// A stationary randomized decision rule `π(a | x)`, keyed by names.
///
/// A policy is only checked against a model when it is resolved; see
/// [`Policy::resolve`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Policy {
    rules: IndexMap<String, IndexMap<String, f64>>,
}

impl Policy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rules(rules: IndexMap<String, IndexMap<String, f64>>) -> Self {
        Policy { rules }
    }

    /// Uniform choice over `A_x` in every state.
    pub fn uniform(mdp: &Mdp) -> Self {
        let mut policy = Policy::new();
        for (x, state) in mdp.states().iter().enumerate() {
            let acts = mdp.actions(x);
            for a in acts {
                policy.set(state, a, 1.0 / acts.len() as f64);
            }
        }
        policy
    }

    pub fn set(&mut self, state: &str, action: &str, prob: f64) -> &mut Self {
        self.rules
            .entry(state.to_string())
            .or_default()
            .insert(action.to_string(), prob);
        self
    }

    pub fn rules(&self) -> &IndexMap<String, IndexMap<String, f64>> {
        &self.rules
    }

    /// `π(a | x)` by name; zero when the pair is not listed.
    pub fn prob(&self, state: &str, action: &str) -> f64 {
        self.rules
            .get(state)
            .and_then(|r| r.get(action))
            .copied()
            .unwrap_or(0.0)
    }

    /// Aligns the policy with `mdp`: entry `[x][a]` is `π(A_x[a] | x)`.
    pub fn resolve(&self, mdp: &Mdp) -> Result<Vec<Vec<f64>>, ModelError> {
        for state in self.rules.keys() {
            if mdp.state_index(state).is_none() {
                return Err(ModelError::PolicyMismatch(format!("unknown state '{state}'")));
            }
        }
        let mut resolved = Vec::with_capacity(mdp.num_states());
        for (x, state) in mdp.states().iter().enumerate() {
            let rule = self.rules.get(state).ok_or_else(|| {
                ModelError::PolicyMismatch(format!("no decision rule for state '{state}'"))
            })?;
            let mut row = vec![0.0; mdp.actions(x).len()];
            for (action, &p) in rule {
                let a = mdp.action_index(x, action).ok_or_else(|| {
                    ModelError::PolicyMismatch(format!(
                        "action '{action}' is not available in state '{state}'"
                    ))
                })?;
                check_probability(format!("policy.{state}.{action}"), p)?;
                row[a] = p;
            }
            let sum: f64 = row.iter().sum();
            match mass_scale(sum, row.len()) {
                Ok(Some(scale)) => row.iter_mut().for_each(|p| *p *= scale),
                Ok(None) => {}
                Err(residual) => {
                    return Err(ModelError::Invariant {
                        what: "policy probabilities",
                        location: format!("state {state}"),
                        sum,
                        residual,
                    })
                }
            }
            resolved.push(row);
        }
        Ok(resolved)
    }
}

/// The Markov reward process `M_π` induced by fixing a policy: transitions
/// `p_π(y | x)` with the policy-mixed reward distribution `d_π(j | x, y)` on
/// each positive-probability transition.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardProcess {
    states: Vec<String>,
    rows: Vec<Vec<Branch>>,
    initial: Vec<f64>,
    gamma: f64,
}

impl RewardProcess {
    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    /// Branches out of `x`: `to`, `p_π(to | x)` and `d_π(· | x, to)`.
    pub fn row(&self, x: usize) -> &[Branch] {
        &self.rows[x]
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn transition(&self, x: usize, y: usize) -> f64 {
        self.rows[x]
            .binary_search_by_key(&y, |b| b.to)
            .map_or(0.0, |i| self.rows[x][i].prob)
    }

    /// `d_π(j | x, y)`; `None` where `p_π(y | x) = 0`, since the conditional
    /// is undefined there.
    pub fn reward_prob(&self, x: usize, y: usize, j: f64) -> Option<f64> {
        let i = self.rows[x].binary_search_by_key(&y, |b| b.to).ok()?;
        Some(
            self.rows[x][i]
                .rewards
                .iter()
                .filter(|r| r.value == j)
                .map(|r| r.prob)
                .sum(),
        )
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .flat_map(|b| &b.rewards)
            .fold(0.0, |m, r| m.max(r.value.abs()))
    }
}

/// Fixes `policy` in `mdp`, producing `M_π`.
pub fn induce(mdp: &Mdp, policy: &Policy) -> Result<RewardProcess, ModelError> {
    let pi = policy.resolve(mdp)?;
    let mut rows = Vec::with_capacity(mdp.num_states());
    for (x, weights) in pi.iter().enumerate() {
        // y -> (p_π(y|x), joint mass per reward value)
        let mut acc: Vec<(usize, f64, Vec<RewardAtom>)> = Vec::new();
        for (a, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for b in mdp.branches(x, a) {
                let slot = match acc.iter().position(|(y, _, _)| *y == b.to) {
                    Some(i) => i,
                    None => {
                        acc.push((b.to, 0.0, Vec::new()));
                        acc.len() - 1
                    }
                };
                let entry = &mut acc[slot];
                entry.1 += w * b.prob;
                for r in &b.rewards {
                    let mass = w * b.prob * r.prob;
                    match entry.2.iter_mut().find(|at| at.value == r.value) {
                        Some(at) => at.prob += mass,
                        None => entry.2.push(RewardAtom {
                            value: r.value,
                            prob: mass,
                        }),
                    }
                }
            }
        }
        acc.sort_by_key(|(y, _, _)| *y);
        let row = acc
            .into_iter()
            .filter(|(_, p, _)| *p > 0.0)
            .map(|(y, p, mut atoms)| {
                atoms.iter_mut().for_each(|at| at.prob /= p);
                atoms.sort_by(|l, r| l.value.total_cmp(&r.value));
                Branch {
                    to: y,
                    prob: p,
                    rewards: atoms,
                }
            })
            .collect();
        rows.push(row);
    }
    Ok(RewardProcess {
        states: mdp.states().to_vec(),
        rows,
        initial: mdp.initial().to_vec(),
        gamma: mdp.gamma(),
    })
}

/// When the first reward of a [`DetChain`] is collected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RewardTiming {
    /// `reward(X_t)` is discounted by `γ^(t-1)` from `t = 1` (epoch offset 0).
    Immediate,
    /// The chain starts in zero-reward bookkeeping states; rewards count from
    /// the state reached after the first step (epoch offset 1).
    AfterStart,
}

impl RewardTiming {
    pub fn epoch_offset(self) -> u8 {
        match self {
            RewardTiming::Immediate => 0,
            RewardTiming::AfterStart => 1,
        }
    }
}

/// A Markov chain with a deterministic state-based reward.
///
/// Rows are sparse `(target, probability)` lists sorted by target. Chains
/// built by the state-augmentation transformation carry the augmented state
/// of every index in [`DetChain::aug`].
#[derive(Debug, Clone, PartialEq)]
pub struct DetChain {
    states: Vec<String>,
    rows: Vec<Vec<(usize, f64)>>,
    reward: Vec<f64>,
    initial: Vec<f64>,
    gamma: f64,
    timing: RewardTiming,
    aug: Option<Vec<AugState>>,
}

impl DetChain {
    pub fn new(
        states: Vec<String>,
        mut rows: Vec<Vec<(usize, f64)>>,
        reward: Vec<f64>,
        mut initial: Vec<f64>,
        gamma: f64,
        timing: RewardTiming,
    ) -> Result<Self, ModelError> {
        check_gamma(gamma)?;
        let n = states.len();
        if n == 0 {
            return Err(ModelError::schema("states", "at least one state is required"));
        }
        if rows.len() != n || reward.len() != n || initial.len() != n {
            return Err(ModelError::schema(
                "chain",
                "rows, rewards and initial distribution must cover every state",
            ));
        }
        for (x, row) in rows.iter_mut().enumerate() {
            row.retain(|&(_, p)| p != 0.0);
            row.sort_by_key(|&(y, _)| y);
            for (k, &(y, p)) in row.iter().enumerate() {
                if y >= n {
                    return Err(ModelError::schema(
                        format!("rows[{x}]"),
                        format!("target index {y} out of range"),
                    ));
                }
                if k > 0 && row[k - 1].0 == y {
                    return Err(ModelError::schema(
                        format!("rows[{x}]"),
                        format!("duplicate target {y}"),
                    ));
                }
                check_probability(format!("rows[{x}][{k}]"), p)?;
            }
            let sum: f64 = row.iter().map(|&(_, p)| p).sum();
            match mass_scale(sum, row.len()) {
                Ok(Some(scale)) => row.iter_mut().for_each(|e| e.1 *= scale),
                Ok(None) => {}
                Err(residual) => {
                    return Err(ModelError::Invariant {
                        what: "transition probabilities",
                        location: format!("state {}", states[x]),
                        sum,
                        residual,
                    })
                }
            }
        }
        if let Some(x) = reward.iter().position(|r| !r.is_finite()) {
            return Err(ModelError::schema(
                format!("reward.{}", states[x]),
                "reward must be finite",
            ));
        }
        for (x, &p) in initial.iter().enumerate() {
            check_probability(format!("initial.{}", states[x]), p)?;
        }
        let sum: f64 = initial.iter().sum();
        match mass_scale(sum, n) {
            Ok(Some(scale)) => initial.iter_mut().for_each(|p| *p *= scale),
            Ok(None) => {}
            Err(residual) => {
                return Err(ModelError::Invariant {
                    what: "initial probabilities",
                    location: "the initial distribution".into(),
                    sum,
                    residual,
                })
            }
        }
        if timing == RewardTiming::AfterStart {
            if let Some(x) = (0..n).find(|&x| initial[x] > 0.0 && reward[x] != 0.0) {
                return Err(ModelError::schema(
                    format!("initial.{}", states[x]),
                    "start states of a chain with delayed rewards must have reward 0",
                ));
            }
        }
        Ok(DetChain {
            states,
            rows,
            reward,
            initial,
            gamma,
            timing,
            aug: None,
        })
    }

    pub(crate) fn from_parts(
        states: Vec<String>,
        rows: Vec<Vec<(usize, f64)>>,
        reward: Vec<f64>,
        initial: Vec<f64>,
        gamma: f64,
        timing: RewardTiming,
        aug: Option<Vec<AugState>>,
    ) -> Self {
        DetChain {
            states,
            rows,
            reward,
            initial,
            gamma,
            timing,
            aug,
        }
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn row(&self, x: usize) -> &[(usize, f64)] {
        &self.rows[x]
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn transition(&self, x: usize, y: usize) -> f64 {
        self.rows[x]
            .binary_search_by_key(&y, |&(t, _)| t)
            .map_or(0.0, |i| self.rows[x][i].1)
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn timing(&self) -> RewardTiming {
        self.timing
    }

    /// Augmented-state annotations, present on chains built by the SAT.
    pub fn aug(&self) -> Option<&[AugState]> {
        self.aug.as_deref()
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// The same dynamics started deterministically in `x`, with rewards
    /// counted from `x` itself.
    pub fn started_at(&self, x: usize) -> DetChain {
        let mut initial = vec![0.0; self.len()];
        initial[x] = 1.0;
        DetChain {
            initial,
            timing: RewardTiming::Immediate,
            ..self.clone()
        }
    }

    /// Distribution of the state whose reward is collected first.
    pub fn first_reward_distribution(&self) -> Vec<f64> {
        match self.timing {
            RewardTiming::Immediate => self.initial.clone(),
            RewardTiming::AfterStart => {
                let mut q = vec![0.0; self.len()];
                for (x, &m) in self.initial.iter().enumerate() {
                    if m > 0.0 {
                        for &(y, p) in &self.rows[x] {
                            q[y] += m * p;
                        }
                    }
                }
                q
            }
        }
    }
}

/// Expected immediate reward per state under `policy`:
/// `r'(x) = Σ_{a,y,j} j · π(a|x) · p(y|x,a) · d(j|x,a,y)`.
pub fn expected_rewards(mdp: &Mdp, policy: &Policy) -> Result<Vec<f64>, ModelError> {
    let pi = policy.resolve(mdp)?;
    Ok(pi
        .iter()
        .enumerate()
        .map(|(x, weights)| {
            weights
                .iter()
                .enumerate()
                .flat_map(|(a, &w)| {
                    mdp.branches(x, a).iter().flat_map(move |b| {
                        b.rewards.iter().map(move |r| r.value * w * b.prob * r.prob)
                    })
                })
                .sum()
        })
        .collect())
}

/// The reward-simplification baseline: the policy-induced chain with each
/// stochastic reward replaced by its expectation given the current state.
///
/// The return mean is unchanged; the return variance generally is not.
pub fn simplify_reward(mdp: &Mdp, policy: &Policy) -> Result<DetChain, ModelError> {
    let process = induce(mdp, policy)?;
    let reward = expected_rewards(mdp, policy)?;
    let rows = process
        .rows
        .iter()
        .map(|row| row.iter().map(|b| (b.to, b.prob)).collect())
        .collect();
    Ok(DetChain::from_parts(
        mdp.states().to_vec(),
        rows,
        reward,
        mdp.initial().to_vec(),
        mdp.gamma(),
        RewardTiming::Immediate,
        None,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn ref1_shape() {
        let (mdp, _) = fixtures::ref1();
        assert_eq!(mdp.num_states(), 1);
        assert_eq!(mdp.actions(0).len(), 1);
        assert_eq!(mdp.reward_support(), &[-1.0, 1.0]);
        assert_eq!(mdp.gamma(), 0.5);
    }

    #[test]
    fn ref2_shape() {
        let (mdp, policy) = fixtures::ref2();
        assert_eq!(mdp.num_states(), 2);
        assert_eq!(mdp.actions(0), &["a", "b"]);
        assert_eq!(mdp.actions(1), &["a"]);
        assert_eq!(mdp.reward_support().len(), 5);
        assert_eq!(mdp.transition(0, 0, 1), 0.4);
        assert_eq!(mdp.reward_prob(0, 0, 1, 5.0), 0.5);
        assert_eq!(policy.unwrap().prob("s1", "b"), 0.5);
    }

    #[test]
    fn bad_row_sum_names_the_pair() {
        let mut b = MdpBuilder::new(0.9);
        b.state("s1").state("s2");
        b.actions("s1", ["a"]).actions("s2", ["a"]);
        b.transition("s1", "a", "s1", 0.5).transition("s1", "a", "s2", 0.4);
        b.transition("s2", "a", "s2", 1.0);
        b.reward("s1", "a", "s1", 1.0, 1.0);
        b.reward("s1", "a", "s2", 1.0, 1.0);
        b.reward("s2", "a", "s2", 1.0, 1.0);
        b.initial("s1", 1.0);
        match b.build() {
            Err(ModelError::Invariant {
                location, residual, ..
            }) => {
                assert_eq!(location, "(s1, a)");
                assert!((residual + 0.1).abs() < 1e-12);
            }
            other => panic!("expected invariant violation, got {other:?}"),
        }
    }

    #[test]
    fn near_one_sums_are_renormalized() {
        let mut b = MdpBuilder::new(0.5);
        b.state("s").actions("s", ["a"]);
        b.transition("s", "a", "s", 1.0 - 5e-10);
        b.reward("s", "a", "s", 2.0, 1.0);
        b.initial("s", 1.0);
        let mdp = b.build().unwrap();
        assert_eq!(mdp.transition(0, 0, 0), 1.0);
    }

    #[test]
    fn schema_errors() {
        let mut b = MdpBuilder::new(1.0);
        b.state("s").actions("s", ["a"]);
        assert!(matches!(b.build(), Err(ModelError::Schema { ref path, .. }) if path == "gamma"));

        let mut b = MdpBuilder::new(0.5);
        b.state("s");
        assert!(matches!(b.build(), Err(ModelError::Schema { .. })));

        let mut b = MdpBuilder::new(0.5);
        b.state("s").actions("s", ["a"]);
        b.transition("s", "a", "t", 1.0);
        match b.build() {
            Err(ModelError::Schema { path, .. }) => assert_eq!(path, "transitions[0].to"),
            other => panic!("{other:?}"),
        }

        let mut b = MdpBuilder::new(0.5);
        b.state("s").actions("s", ["a"]);
        b.transition("s", "a", "s", 1.0);
        b.reward("s", "a", "s", 3.0, 1.0);
        b.reward_support(vec![1.0]);
        b.initial("s", 1.0);
        assert!(matches!(b.build(), Err(ModelError::Schema { ref path, .. }) if path == "reward_support"));
    }

    #[test]
    fn induce_ref1() {
        let (mdp, policy) = fixtures::ref1();
        let rp = induce(&mdp, &policy.unwrap()).unwrap();
        assert_eq!(rp.transition(0, 0), 1.0);
        assert_eq!(rp.reward_prob(0, 0, 1.0), Some(0.5));
        assert_eq!(rp.reward_prob(0, 0, -1.0), Some(0.5));
    }

    #[test]
    fn induce_ref2_mixes_actions() {
        let (mdp, policy) = fixtures::ref2();
        let rp = induce(&mdp, &policy.unwrap()).unwrap();
        assert!((rp.transition(0, 1) - (0.5 * 0.4 + 0.5 * 1.0)).abs() < 1e-15);
        assert!((rp.transition(0, 0) - 0.3).abs() < 1e-15);
        // d_π(0 | s1, s2) = 0.5 / 0.7
        let d0 = rp.reward_prob(0, 1, 0.0).unwrap();
        assert!((d0 - 0.5 / 0.7).abs() < 1e-15);
        let d5 = rp.reward_prob(0, 1, 5.0).unwrap();
        assert!((d5 - 0.1 / 0.7).abs() < 1e-15);
    }

    #[test]
    fn induce_rejects_unavailable_action() {
        let (mdp, _) = fixtures::ref2();
        let mut policy = Policy::new();
        policy.set("s1", "a", 1.0).set("s2", "b", 1.0);
        assert!(matches!(
            induce(&mdp, &policy),
            Err(ModelError::PolicyMismatch(_))
        ));
        let mut missing = Policy::new();
        missing.set("s1", "a", 1.0);
        assert!(matches!(
            induce(&mdp, &missing),
            Err(ModelError::PolicyMismatch(_))
        ));
    }

    #[test]
    fn simplified_rewards() {
        let (mdp, policy) = fixtures::ref1();
        let chain = simplify_reward(&mdp, &policy.unwrap()).unwrap();
        assert_eq!(chain.reward(), &[0.0]);
        assert_eq!(chain.timing(), RewardTiming::Immediate);

        let mut b = MdpBuilder::new(0.5);
        b.state("s").actions("s", ["a"]);
        b.transition("s", "a", "s", 1.0);
        b.reward("s", "a", "s", 1.0, 1.0);
        b.reward("s", "a", "s", -1.0, 0.0);
        b.initial("s", 1.0);
        let mdp = b.build().unwrap();
        let chain = simplify_reward(&mdp, &Policy::uniform(&mdp)).unwrap();
        assert_eq!(chain.reward(), &[1.0]);
    }

    /// Brute-force sum over every (a, y, j) in the REF-2 support, written out
    /// by hand from the fixture table.
    #[test]
    fn simplified_ref2_matches_hand_enumeration() {
        let support = [
            // (π(a|s1), p(y|s1,a), d(j|s1,a,y), j)
            (0.5, 0.6, 1.0, 1.0),
            (0.5, 0.4, 0.5, 5.0),
            (0.5, 0.4, 0.5, -1.0),
            (0.5, 1.0, 1.0, 0.0),
        ];
        let oracle_s1: f64 = support.iter().map(|(w, p, d, j)| w * p * d * j).sum();
        let oracle_s2 = 0.7 * 2.0 + 0.3 * -1.0;
        assert!((oracle_s1 - 0.7).abs() < 1e-15);

        let (mdp, policy) = fixtures::ref2();
        let chain = simplify_reward(&mdp, &policy.unwrap()).unwrap();
        assert!((chain.reward()[0] - oracle_s1).abs() < 1e-15);
        assert!((chain.reward()[1] - oracle_s2).abs() < 1e-15);
    }

    #[test]
    fn chain_rejects_rewarded_start_with_delay() {
        let err = DetChain::new(
            vec!["x".into()],
            vec![vec![(0, 1.0)]],
            vec![1.0],
            vec![1.0],
            0.5,
            RewardTiming::AfterStart,
        );
        assert!(err.is_err());
    }

    #[test]
    fn first_reward_distribution_pushes_forward() {
        let chain = DetChain::new(
            vec!["n".into(), "u".into(), "d".into()],
            vec![vec![(1, 0.25), (2, 0.75)], vec![(1, 1.0)], vec![(2, 1.0)]],
            vec![0.0, 1.0, -1.0],
            vec![1.0, 0.0, 0.0],
            0.5,
            RewardTiming::AfterStart,
        )
        .unwrap();
        assert_eq!(chain.first_reward_distribution(), vec![0.0, 0.25, 0.75]);
    }
}
