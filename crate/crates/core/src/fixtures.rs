//! The two reference models shipped with the crate.
//!
//! `REF1` is a single state with an i.i.d. fair ±1 reward (γ = 0.5).
//! `REF2` has two states; `s1` offers actions `a` and `b`, `s2` only `a`
//! (γ = 0.9), with the uniform policy at `s1` embedded.

use crate::mdp::{Mdp, Policy};
use crate::model_file::parse_model;

pub const REF1: &str = include_str!("../fixtures/ref1.toml");
pub const REF2: &str = include_str!("../fixtures/ref2.toml");

pub fn ref1() -> (Mdp, Option<Policy>) {
    parse_model(REF1).expect("REF1 fixture is valid")
}

pub fn ref2() -> (Mdp, Option<Policy>) {
    parse_model(REF2).expect("REF2 fixture is valid")
}
