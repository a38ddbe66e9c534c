//! Exact and entropic discrete optimal transport.

pub mod entropic;
pub mod exact;

pub use entropic::{sinkhorn, SinkhornConfig, SinkhornSolution};
pub use exact::{
    emd_1d, solve_emd, solve_emd_with, wasserstein2, CostMatrix, DualPotentials, EmdConfig, EmdSolution, TransportPlan,
};
