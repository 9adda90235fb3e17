//! Local rate `L(x, β)`, path action and the variational identity.

pub mod attain;
pub mod dual;
pub mod hamiltonian;
pub mod path;
pub mod perron;
pub mod primal;
pub mod stationarity;
pub mod variational;

pub use dual::{local_rate_dual, DualProblem, RateQuery};
pub use hamiltonian::{tilted_hamiltonian, FrozenNoise, TiltEval};
pub use path::{path_action, write_path_csv, PathAction, PathSpec};
pub use primal::{local_rate_primal, PairMeasure, PrimalRate};
pub use stationarity::{stationarity_residual, StationarityResidual};
pub use variational::{
    control_cost, gibbs_control_cost, variational_formula_check, TestFunctional, VariationalCheck,
};
