//! Desk-scale bandwidth-estimation laboratory: an emulated bottleneck link,
//! a simulated RTC call on top of it, a QoE reward surrogate, a rule-based
//! behavior estimator, offline dataset collection, and a distributional
//! implicit Q-learning trainer with Gaussian-mixture heads.

pub mod behavior;
pub mod config;
pub mod dataset;
pub mod emulator;
pub mod evaluator;
pub mod learner;
pub mod mixture;
pub mod qoe;
pub mod session;
pub mod sim;
