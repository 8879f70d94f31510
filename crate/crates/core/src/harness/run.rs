use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use serde::Serialize;

use super::config::ExperimentConfig;
use crate::arx::{ArxSystem, SensorTraces};
use crate::dls::CandidateNetwork;
use crate::error::{Error, Result};
use crate::excitation::{condition_report, Case, ExcitationReport, ReportSpec};
use crate::graph::Topology;
use crate::lic::{lic_value, search_range, select_order_case1, select_order_case2, OrderEstimate, SearchMode, SigmaStats};

/// One sensor at one time `t >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: usize,
    pub sensor: usize,
    /// Joint search (known bounds) or three-stage search (unknown bounds).
    pub p_hat: usize,
    pub q_hat: usize,
    /// Known bounds only.
    pub decoupled: Option<(usize, usize)>,
    /// Unknown bounds only.
    pub m_hat: Option<usize>,
    /// Unknown bounds only: `S(t)`.
    pub search_range: Option<usize>,
    /// `theta_{t,i}(p_hat, q_hat)`.
    pub theta: Vec<f64>,
    /// `||theta_true - theta||` with both padded to a common window.
    pub param_error: f64,
    pub decoupled_param_error: Option<f64>,
    /// Criterion at the selected order.
    pub criterion: f64,
    /// Criterion at the true order, when that order is in the search set.
    pub criterion_true: Option<f64>,
    pub warm_up: bool,
}

impl StepRecord {
    pub fn order(&self) -> (usize, usize) {
        (self.p_hat, self.q_hat)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub case: Case,
    pub n: usize,
    pub horizon: usize,
    /// Sorted by `t`, then sensor.
    pub records: Vec<StepRecord>,
    /// Per sensor, the selection made at `T`.
    pub final_estimates: Vec<OrderEstimate>,
    /// `(order, t)` at which each candidate started reporting estimates.
    pub created_at: Vec<((usize, usize), usize)>,
    pub excitation: ExcitationReport,
    pub elapsed: Duration,
}

impl RunResult {
    pub fn record(&self, t: usize, sensor: usize) -> &StepRecord {
        &self.records[(t - 1) * self.n + sensor]
    }

    pub fn at(&self, t: usize) -> &[StepRecord] {
        &self.records[(t - 1) * self.n..t * self.n]
    }

    /// Records with `t > (1 - fraction) T`.
    pub fn tail(&self, fraction: f64) -> &[StepRecord] {
        let start = ((1.0 - fraction) * self.horizon as f64).floor() as usize;
        &self.records[start.min(self.horizon) * self.n..]
    }

    pub fn max_final_error(&self) -> f64 {
        self.at(self.horizon).iter().map(|r| r.param_error).fold(0.0, f64::max)
    }
}

/// `||theta_true - theta_hat||_2` after padding both to `(max(p, p0), max(q, q0))`.
pub fn parameter_error(system: &ArxSystem, p: usize, q: usize, theta: &[f64]) -> f64 {
    let (pp, qq) = (p.max(system.p0()), q.max(system.q0()));
    let truth = system.theta(pp, qq);
    let mut est = DVector::zeros(pp + qq);
    for k in 0..p {
        est[k] = theta[k];
    }
    for k in 0..q {
        est[pp + k] = theta[p + k];
    }
    (truth - est).norm()
}

fn at_step(t: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numeric(m) => Error::Numeric(format!("step t = {t}: {m}")),
        other => other,
    }
}

/// Run whichever selection procedure the config's case names.
pub fn run(config: &ExperimentConfig) -> Result<RunResult> {
    match config.case {
        Case::KnownBounds => run_case1(config),
        Case::UnknownBounds => run_case2(config),
    }
}

/// Known order bounds: every `(p, q)` with `p <= p*`, `q <= q*` runs at every step.
pub fn run_case1(config: &ExperimentConfig) -> Result<RunResult> {
    if config.case != Case::KnownBounds {
        return Err(Error::validation("run_case1 needs a known-bound config"));
    }
    config.validate()?;
    let started = Instant::now();
    let traces = config.simulate()?;
    let topo = config.build_topology()?;
    run_case1_on(config, &traces, &topo, started)
}

fn run_case1_on(config: &ExperimentConfig, traces: &SensorTraces, topo: &Topology, started: Instant) -> Result<RunResult> {
    let (n, horizon) = (config.n(), config.horizon);
    let schedule = config.schedule();
    let b = config.bounds()?;
    let (ps, qs) = (b.p_star, b.q_star);
    let sys = &config.system;
    let true_order = (sys.p0(), sys.q0());
    let true_in_set = true_order.0 <= ps && true_order.1 <= qs;

    let mut cands: Vec<CandidateNetwork> = Vec::with_capacity((ps + 1) * (qs + 1));
    for p in 0..=ps {
        for q in 0..=qs {
            cands.push(CandidateNetwork::new(p, q, n, config.gamma, 0));
        }
    }
    let index = |p: usize, q: usize| p * (qs + 1) + q;
    let mut stats = SigmaStats::new(n, ps, qs);
    let mut records = Vec::with_capacity(n * horizon);
    let mut final_estimates = Vec::new();

    for t in 0..horizon {
        for c in cands.iter_mut() {
            c.advance(traces, topo).map_err(at_step(t))?;
        }
        stats.advance(topo, traces).map_err(at_step(t))?;
        let now = t + 1;
        let a = schedule.a(now);
        for i in 0..n {
            let values = cands
                .iter()
                .map(|c| {
                    let (p, q) = c.order();
                    Ok(((p, q), lic_value(&stats, i, p, q, c.theta(i), a)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let joint = select_order_case1(&values, ps, qs, SearchMode::Joint)?;
            let dec = select_order_case1(&values, ps, qs, SearchMode::Decoupled)?;
            let (p, q) = joint.order();
            let theta: Vec<f64> = cands[index(p, q)].theta(i).iter().copied().collect();
            let (dp, dq) = dec.order();
            let dec_err = parameter_error(sys, dp, dq, cands[index(dp, dq)].theta(i).as_slice());
            records.push(StepRecord {
                t: now,
                sensor: i,
                p_hat: p,
                q_hat: q,
                decoupled: Some((dp, dq)),
                m_hat: None,
                search_range: None,
                param_error: parameter_error(sys, p, q, &theta),
                theta,
                decoupled_param_error: Some(dec_err),
                criterion: joint.value_at(p, q).expect("selected from values"),
                criterion_true: if true_in_set { joint.value_at(true_order.0, true_order.1) } else { None },
                warm_up: false,
            });
            if now == horizon {
                final_estimates.push(joint);
            }
        }
    }

    let created_at = cands.iter().map(|c| (c.order(), c.created_at())).collect();
    let excitation = report(config, traces, topo, (ps, qs))?;
    Ok(RunResult {
        case: Case::KnownBounds,
        n,
        horizon,
        records,
        final_estimates,
        created_at,
        excitation,
        elapsed: started.elapsed(),
    })
}

/// Unknown order bounds: candidates `(p, q)` with `p, q <= S(t)` join as the range grows.
pub fn run_case2(config: &ExperimentConfig) -> Result<RunResult> {
    if config.case != Case::UnknownBounds {
        return Err(Error::validation("run_case2 needs an unknown-bound config"));
    }
    config.validate()?;
    let started = Instant::now();
    let traces = config.simulate()?;
    let topo = config.build_topology()?;
    run_case2_on(config, &traces, &topo, started)
}

fn run_case2_on(config: &ExperimentConfig, traces: &SensorTraces, topo: &Topology, started: Instant) -> Result<RunResult> {
    let (n, horizon) = (config.n(), config.horizon);
    let schedule = config.schedule();
    let sys = &config.system;
    let true_order = (sys.p0(), sys.q0());
    let (s_max, _) = config.max_window()?;

    let mut cands: BTreeMap<(usize, usize), CandidateNetwork> = BTreeMap::new();
    let mut created: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    cands.insert((0, 0), CandidateNetwork::new(0, 0, n, config.gamma, 0));
    created.insert((0, 0), 0);
    let mut stats = SigmaStats::new(n, s_max, s_max);
    let mut records = Vec::with_capacity(n * horizon);
    let mut final_estimates = Vec::new();

    for t in 0..horizon {
        for c in cands.values_mut() {
            c.advance(traces, topo).map_err(at_step(t))?;
        }
        stats.advance(topo, traces).map_err(at_step(t))?;
        let now = t + 1;
        let (s, warm_up) = search_range(now);
        for p in 0..=s {
            for q in 0..=s {
                if cands.contains_key(&(p, q)) {
                    continue;
                }
                let c = if config.replay_new_candidates {
                    let mut c = CandidateNetwork::new(p, q, n, config.gamma, 0);
                    while c.time() < now {
                        c.advance(traces, topo).map_err(at_step(c.time()))?;
                    }
                    c
                } else {
                    CandidateNetwork::new(p, q, n, config.gamma, now)
                };
                cands.insert((p, q), c);
                created.insert((p, q), now);
            }
        }
        let a = schedule.a(now);
        for i in 0..n {
            let est = select_order_case2(now, |p, q| lic_value(&stats, i, p, q, cands[&(p, q)].theta(i), a))?;
            let (p, q) = est.order();
            let theta: Vec<f64> = cands[&(p, q)].theta(i).iter().copied().collect();
            let criterion_true = match cands.get(&true_order) {
                Some(c) => Some(lic_value(&stats, i, true_order.0, true_order.1, c.theta(i), a)?),
                None => None,
            };
            records.push(StepRecord {
                t: now,
                sensor: i,
                p_hat: p,
                q_hat: q,
                decoupled: None,
                m_hat: est.m_hat,
                search_range: Some(s),
                param_error: parameter_error(sys, p, q, &theta),
                theta,
                decoupled_param_error: None,
                criterion: est.value_at(p, q).expect("selected from values"),
                criterion_true,
                warm_up,
            });
            if now == horizon {
                final_estimates.push(est);
            }
        }
    }

    let excitation = report(config, traces, topo, (s_max, s_max))?;
    Ok(RunResult {
        case: Case::UnknownBounds,
        n,
        horizon,
        records,
        final_estimates,
        created_at: created.into_iter().collect(),
        excitation,
        elapsed: started.elapsed(),
    })
}

/// Run on externally supplied traces and topology (sizes must match the config).
pub fn run_on(config: &ExperimentConfig, traces: &SensorTraces, topo: &Topology) -> Result<RunResult> {
    config.validate()?;
    if traces.n() != config.n() || topo.n() != config.n() || traces.horizon() != config.horizon {
        return Err(Error::validation("traces or topology do not match the config"));
    }
    match config.case {
        Case::KnownBounds => run_case1_on(config, traces, topo, Instant::now()),
        Case::UnknownBounds => run_case2_on(config, traces, topo, Instant::now()),
    }
}

/// Excitation diagnostics for the config's probes.
pub fn diagnose(config: &ExperimentConfig) -> Result<ExcitationReport> {
    config.validate()?;
    let traces = config.simulate()?;
    let topo = config.build_topology()?;
    report(config, &traces, &topo, config.max_window()?)
}

fn report(config: &ExperimentConfig, traces: &SensorTraces, topo: &Topology, r_order: (usize, usize)) -> Result<ExcitationReport> {
    let schedule = config.schedule();
    let spec = ReportSpec {
        case: config.case,
        schedule: &schedule,
        probes: config.probes()?,
        r_order,
        gamma: config.gamma,
        offset: config.lambda_offset,
        signals: Some(&config.signals),
    };
    condition_report(traces, topo, &spec)
}
