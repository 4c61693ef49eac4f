//! Model-file ingestion and rendering.
//!
//! A model file is a TOML (or, when the text starts with `{`, JSON) document
//! with the keys `gamma`, `states`, `actions`, `transitions`, `rewards`,
//! `initial` and optionally `reward_support` and `policy`:
//!
//! ```toml
//! gamma = 0.5
//! states = ["s"]
//!
//! [actions]
//! s = ["a"]
//!
//! [[transitions]]
//! from = "s"
//! action = "a"
//! to = "s"
//! prob = 1.0
//!
//! [[rewards]]
//! from = "s"
//! action = "a"
//! to = "s"
//! value = 1.0
//! prob = 1.0
//!
//! [initial]
//! s = 1.0
//!
//! [policy.s]
//! a = 1.0
//! ```

use std::fmt;

use indexmap::IndexMap;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::mdp::{Mdp, MdpBuilder, ModelError, Policy};

/// A number that accepts both integer and float notation.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Num(f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct NumVisitor;
        impl Visitor<'_> for NumVisitor {
            type Value = Num;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Num, E> {
                Ok(Num(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Num, E> {
                Ok(Num(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Num, E> {
                Ok(Num(v as f64))
            }
        }
        d.deserialize_any(NumVisitor)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionEntry {
    from: String,
    action: String,
    to: String,
    prob: Num,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardEntry {
    from: String,
    action: String,
    to: String,
    value: Num,
    prob: Num,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    gamma: Num,
    states: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reward_support: Option<Vec<Num>>,
    actions: IndexMap<String, Vec<String>>,
    transitions: Vec<TransitionEntry>,
    rewards: Vec<RewardEntry>,
    initial: IndexMap<String, Num>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy: Option<IndexMap<String, IndexMap<String, Num>>>,
}

#[derive(Debug, Deserialize)]
struct PolicyFile {
    policy: IndexMap<String, IndexMap<String, Num>>,
}

fn is_json(text: &str) -> bool {
    text.trim_start().starts_with('{')
}

/// Two-stage decode: syntax first, then the schema of `T`.
fn decode<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, ModelError> {
    if is_json(text) {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ModelError::Syntax(e.to_string()))?;
        serde_json::from_value(value).map_err(|e| ModelError::schema("document", e.to_string()))
    } else {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ModelError::Syntax(e.to_string().trim_end().into()))?;
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| {
                ModelError::schema("document", e.to_string().trim_end().to_string())
            })
    }
}

fn policy_from(rules: IndexMap<String, IndexMap<String, Num>>) -> Policy {
    Policy::from_rules(
        rules
            .into_iter()
            .map(|(s, r)| (s, r.into_iter().map(|(a, p)| (a, p.0)).collect()))
            .collect(),
    )
}

/// Parses and validates a model file, returning the MDP and the embedded
/// policy when one is present.
///
/// The policy is checked against the model here, so a returned policy is
/// always usable with the returned MDP.
pub fn parse_model(text: &str) -> Result<(Mdp, Option<Policy>), ModelError> {
    let file: ModelFile = decode(text)?;
    let mut b = MdpBuilder::new(file.gamma.0);
    for s in &file.states {
        b.state(s.clone());
    }
    for (s, acts) in &file.actions {
        b.actions(s.clone(), acts.iter().cloned());
    }
    for t in &file.transitions {
        b.transition(&t.from, &t.action, &t.to, t.prob.0);
    }
    for r in &file.rewards {
        b.reward(&r.from, &r.action, &r.to, r.value.0, r.prob.0);
    }
    for (s, p) in &file.initial {
        b.initial(s.clone(), p.0);
    }
    if let Some(support) = &file.reward_support {
        b.reward_support(support.iter().map(|j| j.0).collect());
    }
    let mdp = b.build()?;
    let policy = file.policy.map(policy_from);
    if let Some(p) = &policy {
        p.resolve(&mdp)?;
    }
    Ok((mdp, policy))
}

/// Reads only the `policy` table of a model-format document.
pub fn parse_policy(text: &str) -> Result<Policy, ModelError> {
    let file: PolicyFile = decode(text)?;
    Ok(policy_from(file.policy))
}

fn to_file(mdp: &Mdp, policy: Option<&Policy>) -> ModelFile {
    let mut transitions = Vec::new();
    let mut rewards = Vec::new();
    for x in 0..mdp.num_states() {
        for (a, action) in mdp.actions(x).iter().enumerate() {
            for b in mdp.branches(x, a) {
                transitions.push(TransitionEntry {
                    from: mdp.states()[x].clone(),
                    action: action.clone(),
                    to: mdp.states()[b.to].clone(),
                    prob: Num(b.prob),
                });
                for r in &b.rewards {
                    rewards.push(RewardEntry {
                        from: mdp.states()[x].clone(),
                        action: action.clone(),
                        to: mdp.states()[b.to].clone(),
                        value: Num(r.value),
                        prob: Num(r.prob),
                    });
                }
            }
        }
    }
    ModelFile {
        gamma: Num(mdp.gamma()),
        states: mdp.states().to_vec(),
        reward_support: Some(mdp.reward_support().iter().map(|&j| Num(j)).collect()),
        actions: mdp
            .states()
            .iter()
            .enumerate()
            .map(|(x, s)| (s.clone(), mdp.actions(x).to_vec()))
            .collect(),
        transitions,
        rewards,
        initial: mdp
            .states()
            .iter()
            .zip(mdp.initial())
            .filter(|(_, &p)| p > 0.0)
            .map(|(s, &p)| (s.clone(), Num(p)))
            .collect(),
        policy: policy.map(|p| {
            p.rules()
                .iter()
                .map(|(s, r)| (s.clone(), r.iter().map(|(a, &q)| (a.clone(), Num(q))).collect()))
                .collect()
        }),
    }
}

/// Renders a model in TOML. Numbers use the shortest representation that
/// parses back to the same `f64`, so `parse_model(render_model(m))`
/// reproduces `m` exactly.
pub fn render_model(mdp: &Mdp, policy: Option<&Policy>) -> String {
    toml::to_string(&to_file(mdp, policy)).expect("model file is always representable in TOML")
}

/// Renders a model as pretty-printed JSON.
pub fn render_model_json(mdp: &Mdp, policy: Option<&Policy>) -> String {
    serde_json::to_string_pretty(&to_file(mdp, policy))
        .expect("model file is always representable in JSON")
}
