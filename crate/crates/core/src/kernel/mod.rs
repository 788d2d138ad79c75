//! Grid viability and invariance kernels for subsystems.

mod certify;
mod constraint;
mod engine;

pub use certify::{certify_point, CertifyOptions};
pub use constraint::{Constraint, ProductPart};
pub use engine::{
    eta, initial_level, inv_step_etuc, invariance_kernel_etuc, viab_step, viability_kernel,
    DisturbanceBound, EvalMode, InvarianceTrace, KernelTrace, LevelGrid, MarginPolicy,
    ShrinkageStep, StepParams, SubsystemSpec, LEVEL_TOL,
};
