//! Relational graph neural networks for learning general value functions over
//! planning states, including the pair-lifted `R-GNN[t]` input transformation,
//! baselines, exhaustive oracles, and Weisfeiler-Leman tooling.

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod domains;
pub mod joins;
pub mod net;
pub mod pddl;
pub mod policy;
pub mod state;
pub mod statespace;
pub mod train;
pub mod transform;
pub mod wl;
