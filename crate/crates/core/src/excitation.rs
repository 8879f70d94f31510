//! Diagnostics for the cooperative excitation conditions.
//!
//! The conditions are asymptotic, so nothing here can prove or refute them.
//! What this module does is compute the finite-horizon quantities they are
//! stated in (`r_t`, the lagged network Gram eigenvalue, per-sensor Gram
//! eigenvalues) and report whether the relevant ratios look like they are
//! heading to zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arx::{SensorTraces, SignalModels};
use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::lic::GainSchedule;
use crate::linalg::lambda_min;

/// A log-ratio slope below `-TREND_MARGIN` counts as "trending to zero".
pub const TREND_MARGIN: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    /// Known order bounds.
    #[serde(rename = "I", alias = "1")]
    KnownBounds,
    /// Unknown order bounds.
    #[serde(rename = "II", alias = "2")]
    UnknownBounds,
}

/// `lambda_max(P0^{-1}) + sum_i sum_{k<=t} ||phi_{k,i}(p, q)||^2` with `P0 = gamma I`.
pub fn r_t(traces: &SensorTraces, p: usize, q: usize, gamma: f64, t: usize) -> Result<f64> {
    check_time(traces, t)?;
    let mut phi = vec![0.0; p + q];
    // lambda_max(P0^{-1}) for P0 = gamma I.
    let mut total = 1.0 / gamma;
    for i in 0..traces.n() {
        for k in 0..=t {
            traces.fill_regressor(i, k, p, q, &mut phi);
            total += phi.iter().map(|v| v * v).sum::<f64>();
        }
    }
    Ok(total)
}

/// Smallest eigenvalue of `sum_j P0_j^{-1} + sum_j sum_{k <= t - offset} phi phi'`.
///
/// `offset` is `D_G + 1` for known bounds and `D_G` for unknown bounds. When
/// `t < offset` only the prior term contributes and the flag is set.
pub fn lambda_min_pq(traces: &SensorTraces, p: usize, q: usize, gamma: f64, t: usize, offset: usize) -> Result<(f64, bool)> {
    check_time(traces, t)?;
    let n = traces.n();
    let mut gram = DMatrix::identity(p + q, p + q) * (n as f64 / gamma);
    let warm_up = t < offset;
    if !warm_up {
        let mut phi = DVector::zeros(p + q);
        for j in 0..n {
            for k in 0..=(t - offset) {
                traces.fill_regressor(j, k, p, q, phi.as_mut_slice());
                gram.ger(1.0, &phi, &phi, 1.0);
            }
        }
    }
    Ok((lambda_min(&gram), warm_up))
}

fn check_time(traces: &SensorTraces, t: usize) -> Result<()> {
    if t > traces.horizon() {
        Err(Error::arg(format!("t = {t} beyond horizon {}", traces.horizon())))
    } else {
        Ok(())
    }
}

/// What to report and against which schedule.
#[derive(Debug, Clone)]
pub struct ReportSpec<'a> {
    pub case: Case,
    pub schedule: &'a GainSchedule,
    /// Orders whose lagged network eigenvalue is tracked.
    pub probes: Vec<(usize, usize)>,
    /// Order for `r_t` (the bounds `(p*, q*)` for known bounds).
    pub r_order: (usize, usize),
    pub gamma: f64,
    /// Summation lag; `None` means `D_G + 1` (known bounds) or `D_G` (unknown).
    pub offset: Option<usize>,
    /// Needed for the unknown-bound noise envelope term.
    pub signals: Option<&'a SignalModels>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcitationRow {
    pub t: usize,
    pub penalty: f64,
    pub r_t: f64,
    /// Known bounds: `ln r_t / a_t`. Unknown: `(h_t ln t + (eta(t) ln ln t)^2) / abar_t`.
    pub ratio1: f64,
    /// Per probe.
    pub lambda_min: Vec<f64>,
    /// Per probe: `a_t / lambda_min`.
    pub ratio2: Vec<f64>,
    /// `[probe][sensor]`: `lambda_min(I / gamma + sum_{k<=t} phi_{k,j} phi_{k,j}')`.
    pub per_sensor_lambda_min: Vec<Vec<f64>>,
    pub warm_up: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendVerdict {
    pub ratio1_slope: f64,
    pub ratio1_to_zero: bool,
    pub ratio2_slopes: Vec<f64>,
    pub ratio2_to_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcitationReport {
    pub case: Case,
    pub probes: Vec<(usize, usize)>,
    pub offset: usize,
    pub rows: Vec<ExcitationRow>,
    /// Heuristic: least-squares slope of `ln ratio` against `ln t` over the last half of the horizon.
    pub verdict: TrendVerdict,
}

impl ExcitationReport {
    pub fn last(&self) -> Option<&ExcitationRow> {
        self.rows.last()
    }

    /// CSV with one row per `(t, probe)`:
    /// `t,p,q,r_t,lambda_min,ratio1,ratio2,per_sensor_lambda_min_0,...`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let n = self.rows.first().map(|r| r.per_sensor_lambda_min.first().map_or(0, Vec::len)).unwrap_or(0);
        let mut wtr = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["t", "p", "q", "r_t", "lambda_min", "ratio1", "ratio2"].iter().map(|s| s.to_string()).collect();
        header.extend((0..n).map(|j| format!("per_sensor_lambda_min_{j}")));
        wtr.write_record(&header)?;
        for row in &self.rows {
            for (k, &(p, q)) in self.probes.iter().enumerate() {
                let mut rec = vec![
                    row.t.to_string(),
                    p.to_string(),
                    q.to_string(),
                    row.r_t.to_string(),
                    row.lambda_min[k].to_string(),
                    row.ratio1.to_string(),
                    row.ratio2[k].to_string(),
                ];
                rec.extend(row.per_sensor_lambda_min[k].iter().map(f64::to_string));
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Full time series of both ratios for `t = 1..=T`.
pub fn condition_report(traces: &SensorTraces, topology: &Topology, spec: &ReportSpec<'_>) -> Result<ExcitationReport> {
    let n = traces.n();
    if topology.n() != n {
        return Err(Error::arg("topology and traces disagree on sensor count"));
    }
    if spec.probes.is_empty() {
        return Err(Error::arg("no probe orders"));
    }
    if spec.case == Case::UnknownBounds && spec.signals.is_none() {
        return Err(Error::arg("unknown-bound report needs the noise models"));
    }
    let offset = spec.offset.unwrap_or(match spec.case {
        Case::KnownBounds => topology.diameter() + 1,
        Case::UnknownBounds => topology.diameter(),
    });
    let horizon = traces.horizon();

    let dims: Vec<usize> = spec.probes.iter().map(|&(p, q)| p + q).collect();
    let mut network: Vec<DMatrix<f64>> = dims.iter().map(|&d| DMatrix::identity(d, d) * (n as f64 / spec.gamma)).collect();
    let mut local: Vec<Vec<DMatrix<f64>>> = dims.iter().map(|&d| vec![DMatrix::identity(d, d) / spec.gamma; n]).collect();
    let (rp, rq) = spec.r_order;
    let mut r_acc = 1.0 / spec.gamma;
    let mut r_phi = vec![0.0; rp + rq];

    let absorb = |gram: &mut DMatrix<f64>, j: usize, k: usize, (p, q): (usize, usize)| {
        let mut phi = DVector::zeros(p + q);
        traces.fill_regressor(j, k, p, q, phi.as_mut_slice());
        gram.ger(1.0, &phi, &phi, 1.0);
    };

    // Time 0 contributions to the per-sensor Grams and r_t.
    for j in 0..n {
        for (k, &probe) in spec.probes.iter().enumerate() {
            absorb(&mut local[k][j], j, 0, probe);
        }
        traces.fill_regressor(j, 0, rp, rq, &mut r_phi);
        r_acc += r_phi.iter().map(|v| v * v).sum::<f64>();
    }
    if offset == 0 {
        for j in 0..n {
            for (k, &probe) in spec.probes.iter().enumerate() {
                absorb(&mut network[k], j, 0, probe);
            }
        }
    }

    let mut rows = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        for j in 0..n {
            for (k, &probe) in spec.probes.iter().enumerate() {
                absorb(&mut local[k][j], j, t, probe);
                if t >= offset {
                    absorb(&mut network[k], j, t - offset, probe);
                }
            }
            traces.fill_regressor(j, t, rp, rq, &mut r_phi);
            r_acc += r_phi.iter().map(|v| v * v).sum::<f64>();
        }
        let penalty = spec.schedule.a(t);
        let ratio1 = match spec.case {
            Case::KnownBounds => r_acc.ln() / penalty,
            Case::UnknownBounds => {
                let lt = (t as f64).max(1.0).ln();
                let llt = (t as f64).max(16.0).ln().ln();
                let eta = spec.signals.expect("checked above").eta(n, t);
                (spec.schedule.h(t) as f64 * lt + (eta * llt).powi(2)) / penalty
            }
        };
        let lambda: Vec<f64> = network.iter().map(lambda_min).collect();
        let ratio2 = lambda.iter().map(|l| penalty / l).collect();
        let per_sensor = local.iter().map(|grams| grams.iter().map(lambda_min).collect()).collect();
        rows.push(ExcitationRow {
            t,
            penalty,
            r_t: r_acc,
            ratio1,
            lambda_min: lambda,
            ratio2,
            per_sensor_lambda_min: per_sensor,
            warm_up: t < offset,
        });
    }

    let verdict = trend_verdict(&rows, spec.probes.len());
    Ok(ExcitationReport { case: spec.case, probes: spec.probes.clone(), offset, rows, verdict })
}

/// Least-squares slope of `ln y` against `ln t`, skipping nonpositive or nonfinite points.
pub fn log_log_slope(points: impl IntoIterator<Item = (usize, f64)>) -> f64 {
    let pts: Vec<(f64, f64)> = points
        .into_iter()
        .filter(|&(t, y)| t > 0 && y > 0.0 && y.is_finite())
        .map(|(t, y)| ((t as f64).ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let m = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / m, b + y / m));
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx).powi(2)));
    if sxx == 0.0 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

fn trend_verdict(rows: &[ExcitationRow], probes: usize) -> TrendVerdict {
    let start = rows.len() / 2;
    let tail = &rows[start..];
    let ratio1_slope = log_log_slope(tail.iter().map(|r| (r.t, r.ratio1)));
    let ratio2_slopes: Vec<f64> = (0..probes).map(|k| log_log_slope(tail.iter().map(|r| (r.t, r.ratio2[k])))).collect();
    TrendVerdict {
        ratio1_slope,
        ratio1_to_zero: ratio1_slope < -TREND_MARGIN,
        ratio2_to_zero: ratio2_slopes.iter().all(|s| *s < -TREND_MARGIN),
        ratio2_slopes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arx::{simulate, ArxSystem, InputModel, NoiseModel};
    use crate::graph::{build_topology, TopologyKind};

    fn traces(input: InputModel, noise: NoiseModel, n: usize, horizon: usize) -> SensorTraces {
        let sys = ArxSystem::new(vec![1.2, -0.5], vec![1.0]).unwrap();
        simulate(&sys, &SignalModels::uniform(input, noise), n, horizon, 17).unwrap()
    }

    #[test]
    fn r_t_of_zero_signals_is_prior() {
        let tr = traces(InputModel::Zero, NoiseModel::Zero, 3, 10);
        assert_eq!(r_t(&tr, 2, 2, 100.0, 10).unwrap(), 0.01);
    }

    #[test]
    fn r_t_single_step() {
        let tr = traces(InputModel::Sequence { values: vec![2.0, 1.0] }, NoiseModel::Zero, 1, 3);
        // phi_0(2, 1) = [y_0, y_-1, u_0] = [0, 0, 2].
        assert_eq!(r_t(&tr, 2, 1, 100.0, 0).unwrap(), 0.01 + 4.0);
        // phi_0(0, 2) = [2, 0], phi_1(0, 2) = [1, 2].
        assert_eq!(r_t(&tr, 0, 2, 100.0, 1).unwrap(), 0.01 + 4.0 + 5.0);
    }

    #[test]
    fn lambda_min_of_zero_signals() {
        let tr = traces(InputModel::Zero, NoiseModel::Zero, 4, 20);
        let (l, warm) = lambda_min_pq(&tr, 2, 1, 100.0, 20, 2).unwrap();
        assert!((l - 4.0 / 100.0).abs() < 1e-15);
        assert!(!warm);
        assert!(lambda_min_pq(&tr, 2, 1, 100.0, 1, 2).unwrap().1);
    }

    #[test]
    fn report_matches_direct_functions() {
        let tr = traces(InputModel::IidGaussian { sigma: 1.0 }, NoiseModel::IidGaussian { sigma: 0.5 }, 3, 60);
        let topo = build_topology(TopologyKind::Ring, 3, 0).unwrap();
        let sched = GainSchedule::default_known_bounds();
        let spec = ReportSpec {
            case: Case::KnownBounds,
            schedule: &sched,
            probes: vec![(2, 3), (3, 1)],
            r_order: (3, 3),
            gamma: 100.0,
            offset: None,
            signals: None,
        };
        let rep = condition_report(&tr, &topo, &spec).unwrap();
        assert_eq!(rep.offset, 2);
        for row in rep.rows.iter().step_by(7) {
            let r = r_t(&tr, 3, 3, 100.0, row.t).unwrap();
            assert!((row.r_t - r).abs() <= 1e-12 * r);
            let (l, _) = lambda_min_pq(&tr, 2, 3, 100.0, row.t, 2).unwrap();
            assert!((row.lambda_min[0] - l).abs() <= 1e-9 * (1.0 + l));
        }
        assert!(rep.rows.windows(2).all(|w| w[1].r_t >= w[0].r_t));
        assert!(rep.rows.iter().all(|r| r.lambda_min.iter().all(|&l| l >= 0.0)));
    }

    #[test]
    fn unknown_bound_report_needs_signals() {
        let tr = traces(InputModel::IidGaussian { sigma: 1.0 }, NoiseModel::IidGaussian { sigma: 0.5 }, 2, 20);
        let topo = build_topology(TopologyKind::Complete, 2, 0).unwrap();
        let sched = GainSchedule::default_unknown_bounds();
        let mut spec = ReportSpec {
            case: Case::UnknownBounds,
            schedule: &sched,
            probes: vec![(2, 2)],
            r_order: (2, 2),
            gamma: 100.0,
            offset: None,
            signals: None,
        };
        assert!(condition_report(&tr, &topo, &spec).is_err());
        let sig = SignalModels::uniform(InputModel::IidGaussian { sigma: 1.0 }, NoiseModel::IidGaussian { sigma: 0.5 });
        spec.signals = Some(&sig);
        let rep = condition_report(&tr, &topo, &spec).unwrap();
        assert_eq!(rep.offset, 1);
        assert_eq!(rep.rows.len(), 20);
    }

    #[test]
    fn slope_of_power_law() {
        let s = log_log_slope((1..100).map(|t| (t, (t as f64).powf(-0.4))));
        assert!((s + 0.4).abs() < 1e-12);
        assert!(log_log_slope(vec![(1, 1.0)]).is_nan());
    }
}
