use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::config::ExperimentConfig;
use super::run::RunResult;
use crate::dls::oracle::{batch_ls, rls_oracle};
use crate::dls::{error_recursion_residual, inverse_identity_residual, CandidateNetwork};
use crate::error::{Error, Result};
use crate::graph::{build_topology, TopologyKind, WeightPowers};
use crate::linalg::max_abs;

pub const GUARD_HORIZON: usize = 500;
pub const GUARD_SENSORS: usize = 6;

pub const TOL_ERROR_RECURSION: f64 = 1e-8;
pub const TOL_INVERSE_IDENTITY: f64 = 1e-10;
pub const TOL_INFORMATION_EXPANSION: f64 = 1e-8;
pub const TOL_SIGMA_CLOSED_FORM: f64 = 1e-8;
pub const TOL_RLS_REDUCTION: f64 = 1e-12;
pub const TOL_EIGENVALUES: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: &'static str,
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl OracleCheck {
    fn new(name: &'static str, max_residual: f64, tolerance: f64) -> Self {
        // NaN residuals fail.
        OracleCheck { name, max_residual, tolerance, passed: max_residual <= tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<OracleCheck>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&OracleCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// `Err(OracleMismatch)` naming every failed check.
    pub fn into_result(self) -> Result<Self> {
        let failed: Vec<String> = self
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{} ({:e} > {:e})", c.name, c.max_residual, c.tolerance))
            .collect();
        if failed.is_empty() {
            Ok(self)
        } else {
            Err(Error::OracleMismatch(failed.join(", ")))
        }
    }

    /// CSV `check,max_residual,tolerance,passed`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["check", "max_residual", "tolerance", "passed"])?;
        for c in &self.checks {
            wtr.write_record([c.name.to_string(), c.max_residual.to_string(), c.tolerance.to_string(), c.passed.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Recompute the run's key quantities from closed forms and compare.
///
/// Checks, by name:
/// - `error_recursion`: information-weighted error recursion, relative.
/// - `inverse_identity`: `Pbar * Pbar^{-1} = I` after adaptation.
/// - `information_expansion`: `P^{-1}_{t,i}` against its expansion in powers of the weight matrix, relative.
/// - `sigma_closed_form`: every recorded criterion value against the direct weighted double sum, relative.
/// - `rls_reduction`: sensor 0 alone against recursive least squares, every step.
/// - `batch_ls`: the same final estimate against the regularized normal equations.
/// - `eigenvalues`: the report's final network eigenvalues against a Jacobi eigen-solve.
pub fn oracle_verify(config: &ExperimentConfig, result: &RunResult) -> Result<VerificationReport> {
    if !config.oracle_checks {
        return Err(Error::validation("oracle_checks is disabled in this config"));
    }
    if config.horizon > GUARD_HORIZON || config.n() > GUARD_SENSORS {
        return Err(Error::OracleGuard(format!(
            "oracle mode is limited to T <= {GUARD_HORIZON} and n <= {GUARD_SENSORS} (got T = {}, n = {})",
            config.horizon,
            config.n()
        )));
    }
    if result.n != config.n() || result.horizon != config.horizon || result.case != config.case {
        return Err(Error::validation("run result does not belong to this config"));
    }
    let traces = config.simulate()?;
    let topo = config.build_topology()?;
    let (n, horizon) = (config.n(), config.horizon);
    let sys = &config.system;
    let (wp, wq) = config.max_window()?;
    let (p, q) = (wp.max(sys.p0()), wq.max(sys.q0()));
    let dim = p + q;
    let theta_true = sys.theta(p, q);
    let powers = WeightPowers::new(topo.weights(), horizon);

    let phis: Vec<Vec<DVector<f64>>> =
        (0..n).map(|j| (0..horizon).map(|k| traces.regressor(j, k, p, q).expect("within horizon")).collect()).collect();

    let mut recursion = 0.0_f64;
    let mut inverse = 0.0_f64;
    let mut expansion = 0.0_f64;
    let mut net = CandidateNetwork::new(p, q, n, config.gamma, 0);
    for _ in 0..horizon {
        net.advance_inspect(&traces, &topo, |t, before, mids, after| {
            recursion = recursion.max(error_recursion_residual(before, after, &traces, &topo, t, p, q, &theta_true));
            for m in mids {
                inverse = inverse.max(inverse_identity_residual(m));
            }
            let now = t + 1;
            for (i, state) in after.iter().enumerate() {
                let mut direct = DMatrix::zeros(dim, dim);
                for j in 0..n {
                    let prior = powers.entry(now, i, j) / config.gamma;
                    for d in 0..dim {
                        direct[(d, d)] += prior;
                    }
                    for (k, phi) in phis[j].iter().enumerate().take(now) {
                        direct += phi * phi.transpose() * powers.entry(now - k, i, j);
                    }
                }
                expansion = expansion.max(max_abs(&(&state.p_inv - &direct)) / max_abs(&direct));
            }
        })?;
    }

    let schedule = config.schedule();
    let mut sigma = 0.0_f64;
    for r in &result.records {
        let direct = closed_form_sigma(&traces, &powers, r.t, r.sensor, r.p_hat, r.q_hat, &r.theta)
            + (r.p_hat + r.q_hat) as f64 * schedule.a(r.t);
        sigma = sigma.max((r.criterion - direct).abs() / direct.abs().max(1.0));
    }

    let (rls, batch) = single_sensor_checks(config, &traces.select(&[0])?, p, q)?;

    let mut eigen = 0.0_f64;
    if let Some(last) = result.excitation.last() {
        let offset = result.excitation.offset;
        for (k, &(pp, qq)) in result.excitation.probes.iter().enumerate() {
            let mut gram = DMatrix::identity(pp + qq, pp + qq) * (n as f64 / config.gamma);
            if horizon >= offset {
                for j in 0..n {
                    for s in 0..=(horizon - offset) {
                        let phi = traces.regressor(j, s, pp, qq)?;
                        gram += &phi * phi.transpose();
                    }
                }
            }
            let ev = jacobi_eigenvalues(&gram);
            let (lo, hi) = (ev[0], ev[ev.len() - 1]);
            eigen = eigen.max((last.lambda_min[k] - lo).abs() / hi.max(f64::MIN_POSITIVE));
        }
    }

    Ok(VerificationReport {
        checks: vec![
            OracleCheck::new("error_recursion", recursion, TOL_ERROR_RECURSION),
            OracleCheck::new("inverse_identity", inverse, TOL_INVERSE_IDENTITY),
            OracleCheck::new("information_expansion", expansion, TOL_INFORMATION_EXPANSION),
            OracleCheck::new("sigma_closed_form", sigma, TOL_SIGMA_CLOSED_FORM),
            OracleCheck::new("rls_reduction", rls, TOL_RLS_REDUCTION),
            OracleCheck::new("batch_ls", batch, TOL_RLS_REDUCTION),
            OracleCheck::new("eigenvalues", eigen, TOL_EIGENVALUES),
        ],
    })
}

/// `sum_j sum_{k<t} a^{(t-k)}_ij (y_{k+1,j} - beta' phi_{k,j}(p, q))^2`.
pub fn closed_form_sigma(
    traces: &crate::arx::SensorTraces,
    powers: &WeightPowers,
    t: usize,
    i: usize,
    p: usize,
    q: usize,
    beta: &[f64],
) -> f64 {
    let mut phi = vec![0.0; p + q];
    let mut total = 0.0;
    for j in 0..traces.n() {
        for k in 0..t {
            traces.fill_regressor(j, k, p, q, &mut phi);
            let pred: f64 = phi.iter().zip(beta).map(|(a, b)| a * b).sum();
            let e = traces.y(j, k + 1) - pred;
            total += powers.entry(t - k, i, j) * e * e;
        }
    }
    total
}

/// Diffusion on one sensor against classical RLS (every step) and batch LS (final step).
fn single_sensor_checks(config: &ExperimentConfig, single: &crate::arx::SensorTraces, p: usize, q: usize) -> Result<(f64, f64)> {
    let topo = build_topology(TopologyKind::Complete, 1, 0)?;
    let dim = p + q;
    let data: Vec<(DVector<f64>, f64)> =
        (0..single.horizon()).map(|k| Ok((single.regressor(0, k, p, q)?, single.y(0, k + 1)))).collect::<Result<_>>()?;
    let theta0 = DVector::zeros(dim);
    let p0 = DMatrix::identity(dim, dim) * config.gamma;
    let reference = rls_oracle(&data, &theta0, &p0)?;

    let mut net = CandidateNetwork::new(p, q, 1, config.gamma, 0);
    let mut worst = 0.0_f64;
    for k in 0..single.horizon() {
        net.advance(single, &topo)?;
        let (theta_ref, p_ref) = &reference[k + 1];
        let s = &net.states()[0];
        worst = worst.max((&s.theta - theta_ref).amax() / theta_ref.amax().max(1.0));
        worst = worst.max(max_abs(&(&s.p - p_ref)) / max_abs(p_ref));
    }
    let batch = batch_ls(&data, &theta0, &p0)?;
    let final_theta = &net.states()[0].theta;
    let batch_err = (final_theta - &batch).amax() / batch.amax().max(1.0);
    Ok((worst, batch_err))
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].powi(2)).sum();
        let scale: f64 = a.iter().map(|v| v * v).sum();
        if off <= 1e-30 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)] == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}
