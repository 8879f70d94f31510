//! Experiment configuration, end-to-end runs, oracle checks and CSV output.

mod config;
mod output;
mod run;
mod verify;

pub use config::{Bounds, ExperimentConfig, TopologySpec};
pub use output::{
    write_criterion_csv, write_orders_csv, write_run, write_theta_csv, CRITERION_FILE, EXCITATION_FILE, ORACLE_FILE,
    ORDERS_FILE, THETA_FILE, TRACES_FILE,
};
pub use run::{diagnose, parameter_error, run, run_case1, run_case2, run_on, RunResult, StepRecord};
pub use verify::{
    closed_form_sigma, jacobi_eigenvalues, oracle_verify, OracleCheck, VerificationReport, GUARD_HORIZON, GUARD_SENSORS,
    TOL_EIGENVALUES, TOL_ERROR_RECURSION, TOL_INFORMATION_EXPANSION, TOL_INVERSE_IDENTITY, TOL_RLS_REDUCTION,
    TOL_SIGMA_CLOSED_FORM,
};
