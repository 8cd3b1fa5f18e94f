//! Closed-loop irrigation scheduling for multi-zone center pivots.
//!
//! A one-dimensional Richards-equation simulator plays the field. Each
//! management zone gets an LSTM surrogate of its root-zone moisture, a PPO
//! policy for daily on/off decisions and a zone MPC that sizes the rates.
//! The zone whose policy fires first sets the shared decision sequence.

pub mod agrohydro;
pub mod agronomy;
pub mod baseline;
pub mod error;
pub mod field;
pub mod harness;
pub mod optim;
pub mod rl_agent;
pub mod scheduler_mpc;
pub mod surrogate;
pub mod sync;
pub mod zones;

pub use error::{Error, Result};
