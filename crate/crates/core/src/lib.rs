//! Temporal-logic guided safe reinforcement learning.
//!
//! A task written in scTLTL is compiled into a finite state automaton. The
//! automaton then drives three things at once: the reward for the learning
//! agent, goal selection for a control Lyapunov function, and safe sets for
//! control barrier functions. The latter two are fused with the agent's
//! action through a small quadratic program.

pub mod agent;
pub mod automaton;
pub mod env;
pub mod harness;
pub mod logic;
pub mod product;
pub mod qpsolver;
pub mod shield;
