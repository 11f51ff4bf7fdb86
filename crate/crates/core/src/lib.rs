//! Random switching between two flows on the two-torus: trajectory sampling, the two-switch
//! transfer operator, its integration-by-parts derivative formula, and the special flow model.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fields;
pub mod flows;
pub mod grid;
pub mod ibp;
pub mod jet;
pub mod law;
pub mod quadrature;
pub mod sampler;
pub mod special_flow;
pub mod torus;
pub mod transfer;

pub use error::{Error, Result};
pub use fields::{check_transversality, presets, DiffeoSpec, FieldPair, TransversalityReport, VectorFieldSpec};
pub use flows::{composed_inverse, flow, inverse_flow, jacobian_bounds_scan, FlowResult, JacobianScan};
pub use grid::{CsvHeader, DensityGrid, PeriodicSpline};
pub use ibp::{build_kernels, check_transfer_identity, ibp_gradient, ibp_gradient_grid, l1_gradient_bound, tau, GradientGrids, IbpKernels};
pub use law::{CustomLaw, GapDistribution, SwitchingLaw};
pub use quadrature::{CompositeParams, QuadratureRule, QuadratureSpec, Rule1d};
pub use sampler::{embedded_chain, embedded_chain_histogram, occupation_density, sample_trajectories, sample_trajectory, SwitchingConfig, Trajectory};
pub use special_flow::{growth_report, shear_jacobian, special_step, Roof, Rotation, SpecialFlowSpec, SpecialPoint};
pub use torus::{Mat2, TorusPoint, Vec2};
pub use transfer::{apply_q, apply_single_switch, fixed_point, smoothing_profile, FixedPointReport, SmoothingRow, TransferOperator};
