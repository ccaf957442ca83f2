//! Nonlinear feedback synthesis via state-dependent Riccati equations, plus
//! feedforward-network surrogates of the resulting feedback laws.
//!
//! The pipeline: cast dynamics in semilinear form `x' = A(x)x + B(x)u`
//! ([`models`]), solve the frozen Riccati equation pointwise ([`riccati`],
//! [`sdre`]), collect quasi-random training data ([`dataset`]), fit a network
//! to the feedback or to the value function with a gradient-augmented loss
//! ([`fnn`]), and compare controllers in closed loop ([`simulator`]).

pub mod dataset;
pub mod fnn;
pub mod models;
pub mod riccati;
pub mod sdre;
pub mod simulator;
pub mod util;
