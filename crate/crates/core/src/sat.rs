//! The state-augmentation transformation (SAT).
//!
//! Every "situation" that determines an immediate reward, i.e. a tuple
//! (previous state, action, landing state, reward value), becomes a state of
//! a new MDP whose reward is a deterministic function of the state. A
//! zero-reward `Null(x)` state per original state carries the initial mass.
//! Under the lifted policy the two processes produce the same reward
//! sequence `(R_t)`.

use std::collections::HashMap;

use crate::mdp::{Branch, DetChain, Mdp, ModelError, Policy, RewardAtom, RewardTiming};

/// A state of the augmented MDP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugState {
    /// `(prev, action, landing, reward)`; `action` indexes `A_prev`.
    Tuple {
        prev: usize,
        action: usize,
        landing: usize,
        reward: f64,
    },
    Null(usize),
}

impl AugState {
    /// The original state whose action set and outgoing dynamics this
    /// augmented state inherits.
    pub fn anchor(&self) -> usize {
        match *self {
            AugState::Tuple { landing, .. } => landing,
            AugState::Null(x) => x,
        }
    }

    pub fn reward(&self) -> f64 {
        match *self {
            AugState::Tuple { reward, .. } => reward,
            AugState::Null(_) => 0.0,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, AugState::Null(_))
    }

    /// `prev-action-landing-reward` for tuples, `null-x` for null states.
    pub fn label(&self, mdp: &Mdp) -> String {
        match *self {
            AugState::Tuple {
                prev,
                action,
                landing,
                reward,
            } => format!(
                "{}-{}-{}-{}",
                mdp.states()[prev],
                mdp.actions(prev)[action],
                mdp.states()[landing],
                reward
            ),
            AugState::Null(x) => format!("null-{}", mdp.states()[x]),
        }
    }
}

/// Which null states to materialize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NullStates {
    /// One per original state.
    #[default]
    All,
    /// Only for states with positive initial mass.
    Initial,
}

/// The homomorphic image of an MDP under the SAT.
///
/// The inner [`Mdp`] encodes the state reward `r(y†)` as a point-mass
/// reward on every transition into `y†`, so the augmented model is itself a
/// valid model file whose returns equal those of the source model.
#[derive(Debug, Clone)]
pub struct AugMdp {
    mdp: Mdp,
    back_map: Vec<AugState>,
    source: Mdp,
}

impl AugMdp {
    pub fn mdp(&self) -> &Mdp {
        &self.mdp
    }

    pub fn back_map(&self) -> &[AugState] {
        &self.back_map
    }

    pub fn source(&self) -> &Mdp {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.back_map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.back_map.is_empty()
    }

    pub fn index_of(&self, state: &AugState) -> Option<usize> {
        self.back_map.iter().position(|s| s == state)
    }
}

fn reward_key(j: f64) -> u64 {
    (j + 0.0).to_bits()
}

pub fn transform_mdp(mdp: &Mdp) -> Result<AugMdp, ModelError> {
    transform_mdp_with(mdp, NullStates::All)
}

/// Builds the augmented MDP, materializing only tuples with
/// `p(landing | prev, action) · d(reward | prev, action, landing) > 0`.
pub fn transform_mdp_with(mdp: &Mdp, nulls: NullStates) -> Result<AugMdp, ModelError> {
    let mut back_map = Vec::new();
    let mut index: HashMap<(usize, usize, usize, u64), usize> = HashMap::new();
    for x in 0..mdp.num_states() {
        for a in 0..mdp.actions(x).len() {
            for b in mdp.branches(x, a) {
                for r in &b.rewards {
                    index.insert((x, a, b.to, reward_key(r.value)), back_map.len());
                    back_map.push(AugState::Tuple {
                        prev: x,
                        action: a,
                        landing: b.to,
                        reward: r.value,
                    });
                }
            }
        }
    }
    for x in 0..mdp.num_states() {
        if nulls == NullStates::All || mdp.initial()[x] > 0.0 {
            back_map.push(AugState::Null(x));
        }
    }

    let labels: Vec<String> = back_map.iter().map(|s| s.label(mdp)).collect();
    let mut seen = HashMap::new();
    for (i, l) in labels.iter().enumerate() {
        if let Some(j) = seen.insert(l.as_str(), i) {
            return Err(ModelError::schema(
                "states",
                format!(
                    "augmented states {:?} and {:?} share the label '{l}'; rename states or actions",
                    back_map[j], back_map[i]
                ),
            ));
        }
    }

    // Outgoing kernel of every augmented state anchored at y: one row per a ∈ A_y.
    let anchored: Vec<Vec<Vec<Branch>>> = (0..mdp.num_states())
        .map(|y| {
            (0..mdp.actions(y).len())
                .map(|a| {
                    let mut row: Vec<Branch> = mdp
                        .branches(y, a)
                        .iter()
                        .flat_map(|b| {
                            let index = &index;
                            b.rewards.iter().map(move |r| {
                                let to = index[&(y, a, b.to, reward_key(r.value))];
                                (to, b.prob * r.prob, r.value)
                            })
                        })
                        .map(|(to, prob, value)| Branch {
                            to,
                            prob,
                            rewards: vec![RewardAtom { value, prob: 1.0 }],
                        })
                        .collect();
                    row.sort_by_key(|b| b.to);
                    row
                })
                .collect()
        })
        .collect();

    let actions = back_map
        .iter()
        .map(|s| mdp.actions(s.anchor()).to_vec())
        .collect();
    let kernel = back_map.iter().map(|s| anchored[s.anchor()].clone()).collect();
    let initial = back_map
        .iter()
        .map(|s| match s {
            AugState::Null(x) => mdp.initial()[*x],
            AugState::Tuple { .. } => 0.0,
        })
        .collect();
    let mut support = mdp.reward_support().to_vec();
    if !support.contains(&0.0) {
        support.push(0.0);
    }

    Ok(AugMdp {
        mdp: Mdp::from_parts(labels, actions, support, kernel, initial, mdp.gamma()),
        back_map,
        source: mdp.clone(),
    })
}

/// Lifts `policy` to the augmented MDP: every augmented state acts as the
/// policy does in its anchor state.
pub fn lift_policy(aug: &AugMdp, policy: &Policy) -> Result<Policy, ModelError> {
    let pi = policy.resolve(&aug.source)?;
    let mut lifted = Policy::new();
    for (i, s) in aug.back_map.iter().enumerate() {
        let y = s.anchor();
        for (a, &p) in pi[y].iter().enumerate() {
            lifted.set(&aug.mdp.states()[i], &aug.source.actions(y)[a], p);
        }
    }
    Ok(lifted)
}

/// Fixes a policy on an augmented MDP, producing the chain with
/// deterministic state rewards (reward timing [`RewardTiming::AfterStart`]).
pub fn induce_chain(aug: &AugMdp, lifted: &Policy) -> Result<DetChain, ModelError> {
    let pi = lifted.resolve(&aug.mdp)?;
    let rows = pi
        .iter()
        .enumerate()
        .map(|(x, weights)| {
            let mut acc: Vec<(usize, f64)> = Vec::new();
            for (a, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for b in aug.mdp.branches(x, a) {
                    match acc.iter_mut().find(|(t, _)| *t == b.to) {
                        Some(e) => e.1 += w * b.prob,
                        None => acc.push((b.to, w * b.prob)),
                    }
                }
            }
            acc.sort_by_key(|&(t, _)| t);
            acc
        })
        .collect();
    Ok(DetChain::from_parts(
        aug.mdp.states().to_vec(),
        rows,
        aug.back_map.iter().map(AugState::reward).collect(),
        aug.mdp.initial().to_vec(),
        aug.mdp.gamma(),
        RewardTiming::AfterStart,
        Some(aug.back_map.clone()),
    ))
}

/// SAT followed by the policy lift: the augmented Markov chain whose reward
/// sequence has the same law as that of `(mdp, policy)`.
pub fn transform_process(mdp: &Mdp, policy: &Policy) -> Result<DetChain, ModelError> {
    let aug = transform_mdp(mdp)?;
    let lifted = lift_policy(&aug, policy)?;
    induce_chain(&aug, &lifted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn names(aug: &AugMdp) -> Vec<&str> {
        aug.mdp().states().iter().map(String::as_str).collect()
    }

    #[test]
    fn ref1_has_three_states() {
        let (mdp, _) = fixtures::ref1();
        let aug = transform_mdp(&mdp).unwrap();
        assert_eq!(names(&aug), ["s-a-s-1", "s-a-s--1", "null-s"]);
    }

    #[test]
    fn ref2_has_eight_states() {
        let (mdp, _) = fixtures::ref2();
        let aug = transform_mdp(&mdp).unwrap();
        assert_eq!(
            names(&aug),
            [
                "s1-a-s1-1",
                "s1-a-s2-5",
                "s1-a-s2--1",
                "s1-b-s2-0",
                "s2-a-s1-2",
                "s2-a-s2--1",
                "null-s1",
                "null-s2"
            ]
        );
        let pruned = transform_mdp_with(&mdp, NullStates::Initial).unwrap();
        assert_eq!(pruned.len(), 7);
    }

    #[test]
    fn augmented_structure() {
        let (mdp, _) = fixtures::ref2();
        let aug = transform_mdp(&mdp).unwrap();
        let m = aug.mdp();
        for (i, s) in aug.back_map().iter().enumerate() {
            assert_eq!(m.actions(i), mdp.actions(s.anchor()));
            // Reward on entering i is r(i).
            for x in 0..m.num_states() {
                for a in 0..m.actions(x).len() {
                    if m.transition(x, a, i) > 0.0 {
                        assert_eq!(m.reward_prob(x, a, i, s.reward()), 1.0);
                    }
                }
            }
        }
        assert_eq!(m.initial()[aug.index_of(&AugState::Null(0)).unwrap()], 1.0);
        assert_eq!(m.initial()[aug.index_of(&AugState::Null(1)).unwrap()], 0.0);
        // p†(y† | x†, a_y) = p(z | y, a_y) · d(j | y, a_y, z)
        let y_dag = aug
            .index_of(&AugState::Tuple {
                prev: 0,
                action: 0,
                landing: 1,
                reward: 5.0,
            })
            .unwrap();
        let from_null = aug.index_of(&AugState::Null(0)).unwrap();
        let from_tuple = aug
            .index_of(&AugState::Tuple {
                prev: 1,
                action: 0,
                landing: 0,
                reward: 2.0,
            })
            .unwrap();
        assert!((m.transition(from_null, 0, y_dag) - 0.2).abs() < 1e-15);
        assert_eq!(
            m.transition(from_null, 0, y_dag),
            m.transition(from_tuple, 0, y_dag)
        );
    }

    #[test]
    fn lifted_policy_follows_anchor() {
        let (mdp, policy) = fixtures::ref2();
        let policy = policy.unwrap();
        let aug = transform_mdp(&mdp).unwrap();
        let lifted = lift_policy(&aug, &policy).unwrap();
        assert_eq!(lifted.prob("s1-a-s2-5", "a"), 1.0);
        assert_eq!(lifted.prob("s1-a-s2-5", "b"), 0.0);
        assert_eq!(lifted.prob("null-s1", "a"), 0.5);
        assert_eq!(lifted.prob("null-s1", "b"), 0.5);

        let (m1, p1) = fixtures::ref1();
        let aug1 = transform_mdp(&m1).unwrap();
        let lifted1 = lift_policy(&aug1, &p1.unwrap()).unwrap();
        for s in aug1.mdp().states() {
            assert_eq!(lifted1.prob(s, "a"), 1.0);
        }
    }

    #[test]
    fn ref1_chain_is_iid() {
        let (mdp, policy) = fixtures::ref1();
        let chain = transform_process(&mdp, &policy.unwrap()).unwrap();
        assert_eq!(chain.len(), 3);
        for x in 0..3 {
            assert_eq!(chain.row(x), &[(0, 0.5), (1, 0.5)]);
        }
        assert_eq!(chain.reward(), &[1.0, -1.0, 0.0]);
        assert_eq!(chain.timing(), RewardTiming::AfterStart);
    }

    #[test]
    fn ref2_rows_depend_only_on_anchor() {
        let (mdp, policy) = fixtures::ref2();
        let chain = transform_process(&mdp, &policy.unwrap()).unwrap();
        assert_eq!(chain.len(), 8);
        let aug = chain.aug().unwrap();
        for i in 0..chain.len() {
            for j in 0..chain.len() {
                if aug[i].anchor() == aug[j].anchor() {
                    assert_eq!(chain.row(i), chain.row(j));
                }
            }
        }
        let null1 = chain.index_of("null-s1").unwrap();
        let expected = [
            ("s1-a-s1-1", 0.3),
            ("s1-a-s2-5", 0.1),
            ("s1-a-s2--1", 0.1),
            ("s1-b-s2-0", 0.5),
        ];
        for (name, p) in expected {
            let y = chain.index_of(name).unwrap();
            assert!((chain.transition(null1, y) - p).abs() < 1e-15, "{name}");
        }
    }

    #[test]
    fn label_collisions_are_rejected() {
        let mut b = crate::mdp::MdpBuilder::new(0.5);
        b.state("a-b").state("a");
        b.actions("a-b", ["c"]).actions("a", ["b-c"]);
        b.transition("a-b", "c", "a", 1.0).transition("a", "b-c", "a", 1.0);
        b.reward("a-b", "c", "a", 1.0, 1.0).reward("a", "b-c", "a", 1.0, 1.0);
        b.initial("a", 1.0);
        // "a-b"-"c"-"a"-1 and "a"-"b-c"-"a"-1 render identically.
        let mdp = b.build().unwrap();
        assert!(transform_mdp(&mdp).is_err());
    }
}
