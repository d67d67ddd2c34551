//! Simulation toolkit for power-system frequency control and congestion
//! management: swing-equation plant model, distributed primal-dual
//! controllers, small-signal stability analysis, and an independent
//! dispatch-optimization cross-check.

pub mod controller;
pub mod dynamics;
pub mod network;
pub mod oracle;
pub mod runner;
pub mod scenario;
pub mod stability;
