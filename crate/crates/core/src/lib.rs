//! Simulation cradle for running many isolated instances of a constrained
//! TCP/IP stack against a full-featured TCP peer in a deterministic
//! discrete-event simulator.

pub mod cradle;
pub mod full;
pub mod link;
pub mod rng;
pub mod sim;
pub mod tcp;
pub mod time;
pub mod trace;
pub mod uip;
pub mod wire;

pub use time::SimTime;
