//! Lumping of isotopic states.
//!
//! Two states of a chain are isotopic when they carry the same reward and
//! send the same probability to every *other* state. Merging such a pair
//! leaves the law of the reward sequence unchanged, and so does merging a
//! whole class of pairwise-isotopic states.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::mdp::DetChain;
use crate::sat::AugState;

/// Transition probabilities closer than this count as equal.
pub const TRANSITION_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LumpError {
    #[error("unknown state '{0}'")]
    UnknownState(String),
    #[error("a state cannot be lumped with itself ('{0}')")]
    SameState(String),
    #[error("states '{0}' and '{1}' are not isotopic")]
    NotIsotopic(String, String),
    #[error("chain carries no augmented-state annotations; the sat-key strategy needs a SAT chain")]
    MissingSatAnnotations,
    #[error("sat-key grouping put non-isotopic states '{0}' and '{1}' together")]
    KeyNotIsotopic(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LumpStrategy {
    Pairwise,
    #[default]
    SatKey,
}

impl fmt::Display for LumpStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LumpStrategy::Pairwise => "pairwise",
            LumpStrategy::SatKey => "sat-key",
        })
    }
}

impl FromStr for LumpStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pairwise" => Ok(LumpStrategy::Pairwise),
            "sat-key" => Ok(LumpStrategy::SatKey),
            other => Err(format!("unknown lump strategy '{other}' (pairwise, sat-key)")),
        }
    }
}

/// Result of a lumping run. `classes[k]` lists the original states merged
/// into state `k` of `merged_chain`, which keeps the name of `classes[k][0]`.
#[derive(Debug, Clone)]
pub struct LumpReport {
    pub classes: Vec<Vec<String>>,
    pub merged_chain: DetChain,
    pub size_before: usize,
    pub size_after: usize,
    pub strategy: LumpStrategy,
}

#[derive(Debug, Serialize)]
pub struct LumpSummary<'a> {
    pub strategy: LumpStrategy,
    pub size_before: usize,
    pub size_after: usize,
    pub classes: &'a [Vec<String>],
}

impl LumpReport {
    pub fn summary(&self) -> LumpSummary<'_> {
        LumpSummary {
            strategy: self.strategy,
            size_before: self.size_before,
            size_after: self.size_after,
            classes: &self.classes,
        }
    }
}

fn lookup(chain: &DetChain, name: &str) -> Result<usize, LumpError> {
    chain
        .index_of(name)
        .ok_or_else(|| LumpError::UnknownState(name.to_string()))
}

/// Index form of [`are_isotopic`].
pub fn isotopic(chain: &DetChain, i: usize, j: usize) -> bool {
    if chain.reward()[i] != chain.reward()[j] {
        return false;
    }
    let (ri, rj) = (chain.row(i), chain.row(j));
    let (mut p, mut q) = (0, 0);
    loop {
        let (y, a, b) = match (ri.get(p), rj.get(q)) {
            (None, None) => return true,
            (Some(&(y, a)), None) => {
                p += 1;
                (y, a, 0.0)
            }
            (None, Some(&(y, b))) => {
                q += 1;
                (y, 0.0, b)
            }
            (Some(&(y1, a)), Some(&(y2, b))) => {
                if y1 < y2 {
                    p += 1;
                    (y1, a, 0.0)
                } else if y2 < y1 {
                    q += 1;
                    (y2, 0.0, b)
                } else {
                    p += 1;
                    q += 1;
                    (y1, a, b)
                }
            }
        };
        if y != i && y != j && (a - b).abs() > TRANSITION_TOL {
            return false;
        }
    }
}

/// Whether `xi` and `xj` have equal rewards and equal transition
/// probabilities to every state other than themselves.
pub fn are_isotopic(chain: &DetChain, xi: &str, xj: &str) -> Result<bool, LumpError> {
    let i = lookup(chain, xi)?;
    let j = lookup(chain, xj)?;
    if i == j {
        return Err(LumpError::SameState(xi.to_string()));
    }
    Ok(isotopic(chain, i, j))
}

/// Merges state `drop` into `keep` without checking isotopy.
fn merge_pair(chain: &DetChain, keep: usize, drop: usize) -> DetChain {
    let remap = |t: usize| {
        let t = if t == drop { keep } else { t };
        if t > drop {
            t - 1
        } else {
            t
        }
    };
    let mut rows = Vec::with_capacity(chain.len() - 1);
    for x in (0..chain.len()).filter(|&x| x != drop) {
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(chain.row(x).len());
        for &(t, p) in chain.row(x) {
            let t = remap(t);
            match row.iter_mut().find(|(u, _)| *u == t) {
                Some(e) => e.1 += p,
                None => row.push((t, p)),
            }
        }
        row.sort_by_key(|&(t, _)| t);
        rows.push(row);
    }
    let keep_all = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .enumerate()
            .filter(|&(x, _)| x != drop)
            .map(|(_, &r)| r)
            .collect()
    };
    let mut initial = keep_all(chain.initial());
    initial[remap(keep)] += chain.initial()[drop];
    let states = chain
        .states()
        .iter()
        .enumerate()
        .filter(|&(x, _)| x != drop)
        .map(|(_, s)| s.clone())
        .collect();
    let aug = chain.aug().map(|a| {
        a.iter()
            .enumerate()
            .filter(|&(x, _)| x != drop)
            .map(|(_, s)| *s)
            .collect()
    });
    DetChain::from_parts(
        states,
        rows,
        keep_all(chain.reward()),
        initial,
        chain.gamma(),
        chain.timing(),
        aug,
    )
}

/// Merges the isotopic state `xj` into `xi`: `xj` disappears, mass flowing
/// into it is redirected to `xi`, and its initial mass is added to `xi`'s.
pub fn lump_pair(chain: &DetChain, xi: &str, xj: &str) -> Result<DetChain, LumpError> {
    if !are_isotopic(chain, xi, xj)? {
        return Err(LumpError::NotIsotopic(xi.to_string(), xj.to_string()));
    }
    Ok(merge_pair(chain, lookup(chain, xi)?, lookup(chain, xj)?))
}

fn first_isotopic_pair(chain: &DetChain) -> Option<(usize, usize)> {
    let mut by_reward: HashMap<u64, Vec<usize>> = HashMap::new();
    for (x, r) in chain.reward().iter().enumerate() {
        by_reward.entry((r + 0.0).to_bits()).or_default().push(x);
    }
    let mut best: Option<(usize, usize)> = None;
    for group in by_reward.values() {
        'outer: for (k, &i) in group.iter().enumerate() {
            if best.is_some_and(|(bi, _)| i > bi) {
                break;
            }
            for &j in &group[k + 1..] {
                if best.is_some_and(|b| (i, j) >= b) {
                    break 'outer;
                }
                if isotopic(chain, i, j) {
                    best = Some((i, j));
                    break 'outer;
                }
            }
        }
    }
    best
}

/// Merges isotopic pairs until none remain, always taking the
/// lexicographically first pair of state indices.
pub fn lump_all(chain: &DetChain) -> LumpReport {
    let mut current = chain.clone();
    let mut classes: Vec<Vec<String>> = chain.states().iter().map(|s| vec![s.clone()]).collect();
    while let Some((i, j)) = first_isotopic_pair(&current) {
        current = merge_pair(&current, i, j);
        let absorbed = classes.remove(j);
        classes[if i > j { i - 1 } else { i }].extend(absorbed);
    }
    LumpReport {
        size_before: chain.len(),
        size_after: current.len(),
        classes,
        merged_chain: current,
        strategy: LumpStrategy::Pairwise,
    }
}

/// Merges every class in one pass. Each class keeps its lowest-index member
/// as representative; classes are ordered by representative.
fn merge_classes(chain: &DetChain, classes: &[Vec<usize>]) -> DetChain {
    let mut order: Vec<&Vec<usize>> = classes.iter().collect();
    order.sort_by_key(|c| c[0]);
    let mut class_of = vec![0; chain.len()];
    for (k, c) in order.iter().enumerate() {
        for &x in c.iter() {
            class_of[x] = k;
        }
    }
    let mut rows = Vec::with_capacity(order.len());
    let mut reward = Vec::with_capacity(order.len());
    let mut initial = Vec::with_capacity(order.len());
    let mut states = Vec::with_capacity(order.len());
    let mut aug: Option<Vec<AugState>> = chain.aug().map(|_| Vec::new());
    for c in &order {
        let rep = c[0];
        let mut row: Vec<(usize, f64)> = Vec::new();
        for &(t, p) in chain.row(rep) {
            let k = class_of[t];
            match row.iter_mut().find(|(u, _)| *u == k) {
                Some(e) => e.1 += p,
                None => row.push((k, p)),
            }
        }
        row.sort_by_key(|&(t, _)| t);
        rows.push(row);
        reward.push(chain.reward()[rep]);
        initial.push(c.iter().map(|&x| chain.initial()[x]).sum());
        states.push(chain.states()[rep].clone());
        if let (Some(out), Some(src)) = (aug.as_mut(), chain.aug()) {
            out.push(src[rep]);
        }
    }
    DetChain::from_parts(
        states,
        rows,
        reward,
        initial,
        chain.gamma(),
        chain.timing(),
        aug,
    )
}

/// One-pass lumping of a SAT chain: tuples sharing (landing state, reward)
/// form one class, and `Null(x)` joins the class keyed `(x, 0)`.
///
/// Every grouped pair is checked against the isotopy conditions before
/// anything is merged.
pub fn sat_fast_lump(chain: &DetChain) -> Result<LumpReport, LumpError> {
    let aug = chain.aug().ok_or(LumpError::MissingSatAnnotations)?;
    let mut key_index: HashMap<(usize, u64), usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (x, s) in aug.iter().enumerate() {
        let key = (s.anchor(), (s.reward() + 0.0).to_bits());
        let k = *key_index.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[k].push(x);
    }
    for g in &groups {
        for (k, &i) in g.iter().enumerate() {
            for &j in &g[k + 1..] {
                if !isotopic(chain, i, j) {
                    return Err(LumpError::KeyNotIsotopic(
                        chain.states()[i].clone(),
                        chain.states()[j].clone(),
                    ));
                }
            }
        }
    }
    let merged = merge_classes(chain, &groups);
    groups.sort_by_key(|g| g[0]);
    Ok(LumpReport {
        classes: groups
            .iter()
            .map(|g| g.iter().map(|&x| chain.states()[x].clone()).collect())
            .collect(),
        size_before: chain.len(),
        size_after: merged.len(),
        merged_chain: merged,
        strategy: LumpStrategy::SatKey,
    })
}

pub fn lump(chain: &DetChain, strategy: LumpStrategy) -> Result<LumpReport, LumpError> {
    match strategy {
        LumpStrategy::Pairwise => Ok(lump_all(chain)),
        LumpStrategy::SatKey => sat_fast_lump(chain),
    }
}
