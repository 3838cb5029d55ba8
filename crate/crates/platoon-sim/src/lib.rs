//! Resource allocation toolkit for vehicle platoons on a sidelink shared
//! channel operating in autonomous (mode-2) resource selection.
//!
//! The crate has three legs:
//!
//! * [`analytic`]: closed-form collision probabilities for a platoon leader
//!   that picks a random idle resource block every period, including the
//!   hidden-terminal penalty seen by the platoon tail.
//! * [`scenario`] + [`sps`]: a discrete-period Monte Carlo simulator of the
//!   same highway, with every broadcast vehicle running semi-persistent
//!   scheduling over a shared pool of virtual resource blocks.
//! * [`nn`] + [`agents`]: a small convolutional Q-network, trained online
//!   from ACK/NACK feedback only, that replaces the leader's random pick.
//!
//! [`harness`] ties the three together into seeded, reproducible experiment
//! sweeps over vehicle density and the SPS keep probability.

pub mod agents;
pub mod analytic;
pub mod error;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod scenario;
pub mod sps;

pub use error::{Error, Result};
