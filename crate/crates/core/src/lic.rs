//! Local information criterion and order selection.
//!
//! The weighted prediction-error sum `sigma_{t,i}(p, q, beta)` is quadratic in
//! `beta`, so each sensor diffuses its three coefficients (`c`, `b`, `G`) once for
//! a maximal regressor window and evaluates any sub-order and any `beta` from
//! them. This is what lets the criterion be evaluated at the time-varying
//! estimate `theta_{t,i}(p, q)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arx::SensorTraces;
use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::linalg::{sub_matrix, sub_vector, window_indices};

/// Diffused sufficient statistics of the criterion's fit term.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaStats {
    p_max: usize,
    q_max: usize,
    t: usize,
    c: Vec<f64>,
    b: Vec<DVector<f64>>,
    g: Vec<DMatrix<f64>>,
}

impl SigmaStats {
    /// Zero statistics (`t = 0`) for `n` sensors and window `(p_max, q_max)`.
    pub fn new(n: usize, p_max: usize, q_max: usize) -> Self {
        let d = p_max + q_max;
        SigmaStats { p_max, q_max, t: 0, c: vec![0.0; n], b: vec![DVector::zeros(d); n], g: vec![DMatrix::zeros(d, d); n] }
    }

    pub fn window(&self) -> (usize, usize) {
        (self.p_max, self.q_max)
    }

    pub fn time(&self) -> usize {
        self.t
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn c(&self, i: usize) -> f64 {
        self.c[i]
    }

    pub fn b(&self, i: usize) -> &DVector<f64> {
        &self.b[i]
    }

    pub fn g(&self, i: usize) -> &DMatrix<f64> {
        &self.g[i]
    }

    /// Advance from `t` to `t + 1` in place using `phi_{t,j}(p_max, q_max)` and `y_{t+1,j}`.
    pub fn advance(&mut self, topology: &Topology, traces: &SensorTraces) -> Result<()> {
        *self = sigma_update(self, topology, traces)?;
        Ok(())
    }

    /// `sigma_{t,i}(p, q, beta)` for the current `t`.
    ///
    /// Values are clamped at zero; the exact quantity is a sum of squares.
    pub fn eval(&self, i: usize, p: usize, q: usize, beta: &DVector<f64>) -> Result<f64> {
        if p > self.p_max || q > self.q_max {
            return Err(Error::arg(format!(
                "order ({p}, {q}) exceeds the statistics window ({}, {})",
                self.p_max, self.q_max
            )));
        }
        if beta.len() != p + q {
            return Err(Error::arg(format!("beta has dimension {}, order needs {}", beta.len(), p + q)));
        }
        if i >= self.n() {
            return Err(Error::arg(format!("sensor {i} out of range")));
        }
        let idx = window_indices(p, q, self.p_max);
        let b = sub_vector(&self.b[i], &idx);
        let g = sub_matrix(&self.g[i], &idx);
        let value = self.c[i] - 2.0 * beta.dot(&b) + beta.dot(&(g * beta));
        Ok(value.max(0.0))
    }
}

/// One diffusion step of the statistics:
/// `X_{t+1,i} = sum_j a_ij (X_{t,j} + increment_j)` with increments
/// `y^2`, `phi y`, `phi phi'`.
pub fn sigma_update(stats: &SigmaStats, topology: &Topology, traces: &SensorTraces) -> Result<SigmaStats> {
    let n = topology.n();
    if stats.n() != n || traces.n() != n {
        return Err(Error::arg("statistics, trace and topology sensor counts differ"));
    }
    let t = stats.t;
    if t >= traces.horizon() {
        return Err(Error::arg(format!("no sample y_(t+1) for t = {t}")));
    }
    let d = stats.p_max + stats.q_max;
    let mut phi = DVector::zeros(d);
    let mut local_c = Vec::with_capacity(n);
    let mut local_b = Vec::with_capacity(n);
    let mut local_g = Vec::with_capacity(n);
    for j in 0..n {
        traces.fill_regressor(j, t, stats.p_max, stats.q_max, phi.as_mut_slice());
        let y = traces.y(j, t + 1);
        local_c.push(stats.c[j] + y * y);
        local_b.push(&stats.b[j] + &phi * y);
        let mut g = stats.g[j].clone();
        g.ger(1.0, &phi, &phi, 1.0);
        local_g.push(g);
    }
    let mut next = SigmaStats::new(n, stats.p_max, stats.q_max);
    next.t = t + 1;
    for i in 0..n {
        for &(j, a) in topology.neighborhood(i) {
            next.c[i] += a * local_c[j];
            next.b[i].axpy(a, &local_b[j], 1.0);
            next.g[i] += &local_g[j] * a;
        }
    }
    if next.c.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("criterion statistics overflowed at t = {}", t + 1)));
    }
    Ok(next)
}

pub fn sigma_eval(stats: &SigmaStats, i: usize, p: usize, q: usize, beta: &DVector<f64>) -> Result<f64> {
    stats.eval(i, p, q, beta)
}

/// `sigma_{t,i}(p, q, theta) + (p + q) a_t`.
pub fn lic_value(stats: &SigmaStats, i: usize, p: usize, q: usize, theta: &DVector<f64>, a_t: f64) -> Result<f64> {
    Ok(stats.eval(i, p, q, theta)? + (p + q) as f64 * a_t)
}

/// Penalty growth sequence `a_t` (or `abar_t`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltySequence {
    /// `t^rho`, `0 < rho < 1`.
    Power { rho: f64 },
    /// `(ln t)^exponent`, evaluated at `max(t, 3)`.
    LogPower { exponent: f64 },
    /// `ln t * ln ln t`, evaluated at `max(t, 16)`.
    LogLog,
    /// `values[t - 1]` for `t >= 1`, holding the last value past the end.
    Table { values: Vec<f64> },
}

impl PenaltySequence {
    pub fn at(&self, t: usize) -> f64 {
        let tf = t.max(1) as f64;
        match self {
            PenaltySequence::Power { rho } => tf.powf(*rho),
            PenaltySequence::LogPower { exponent } => tf.max(3.0).ln().powf(*exponent),
            PenaltySequence::LogLog => {
                let l = tf.max(16.0).ln();
                l * l.ln()
            }
            PenaltySequence::Table { values } => values[(t.max(1) - 1).min(values.len() - 1)],
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            PenaltySequence::Power { rho } if !(*rho > 0.0 && *rho < 1.0) => {
                Err(Error::validation(format!("power penalty needs 0 < rho < 1, got {rho}")))
            }
            PenaltySequence::LogPower { exponent } if !(*exponent > 0.0 && exponent.is_finite()) => {
                Err(Error::validation("log-power penalty needs a positive exponent"))
            }
            PenaltySequence::Table { values } => {
                if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::validation("penalty table must hold positive finite values"));
                }
                if values.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::validation("penalty table must be nondecreasing"));
                }
                if values.last() <= values.first() {
                    return Err(Error::validation("penalty table is constant; the penalty must grow without bound"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Penalty sequence plus, for unknown order bounds, the regression-lag exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub a_t: PenaltySequence,
    /// `h_t = ceil((ln t)^h_alpha)`; required for unknown bounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_alpha: Option<f64>,
}

impl GainSchedule {
    /// `a_t = t^0.6`.
    pub fn default_known_bounds() -> Self {
        GainSchedule { a_t: PenaltySequence::Power { rho: 0.6 }, h_alpha: None }
    }

    /// `abar_t = (ln t)^3.5`, `h_t = ceil((ln t)^1.5)`.
    pub fn default_unknown_bounds() -> Self {
        GainSchedule { a_t: PenaltySequence::LogPower { exponent: 3.5 }, h_alpha: Some(1.5) }
    }

    pub fn validate(&self, unknown_bounds: bool) -> Result<()> {
        self.a_t.validate()?;
        match (unknown_bounds, self.h_alpha) {
            (true, None) => Err(Error::validation("unknown-bound selection needs h_alpha")),
            (true, Some(a)) if !(a > 1.0 && a.is_finite()) => {
                Err(Error::validation(format!("h_alpha must exceed 1, got {a}")))
            }
            _ => Ok(()),
        }
    }

    pub fn a(&self, t: usize) -> f64 {
        self.a_t.at(t)
    }

    /// Regression lag `h_t`, at least 1.
    pub fn h(&self, t: usize) -> usize {
        let alpha = self.h_alpha.unwrap_or(1.5);
        let l = (t as f64).max(1.0).ln();
        (l.powf(alpha).ceil() as usize).max(1)
    }
}

/// Largest candidate `s` searched at time `t` when order bounds are unknown:
/// `floor(ln t)`, and 0 while `t < 3`. The flag marks that warm-up.
pub fn search_range(t: usize) -> (usize, bool) {
    if t < 3 {
        (0, true)
    } else {
        ((t as f64).ln().floor() as usize, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Joint,
    Decoupled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderEstimate {
    pub p_hat: usize,
    pub q_hat: usize,
    /// Selected `max` order; only for unknown bounds.
    pub m_hat: Option<usize>,
    /// Criterion values that took part in the decision, in evaluation order.
    pub criterion_values: Vec<((usize, usize), f64)>,
    /// Set while the unknown-bound search range is still `{0}`.
    pub warm_up: bool,
}

impl OrderEstimate {
    pub fn order(&self) -> (usize, usize) {
        (self.p_hat, self.q_hat)
    }

    pub fn value_at(&self, p: usize, q: usize) -> Option<f64> {
        self.criterion_values.iter().find(|(o, _)| *o == (p, q)).map(|&(_, v)| v)
    }
}

/// Argmin with ties broken toward smaller `p + q`, then smaller `p`.
fn argmin<'a, I>(values: I) -> Option<((usize, usize), f64)>
where
    I: IntoIterator<Item = &'a ((usize, usize), f64)>,
{
    values.into_iter().copied().min_by(|(a, la), (b, lb)| {
        la.total_cmp(lb).then((a.0 + a.1).cmp(&(b.0 + b.1))).then(a.0.cmp(&b.0))
    })
}

/// Known-bound selection from precomputed criterion values.
///
/// `Joint` minimizes over every supplied `(p, q)`. `Decoupled` takes
/// `p_hat = argmin_{1<=p<=p*} L(p, q*)` and `q_hat = argmin_{1<=q<=q*} L(p*, q)`.
pub fn select_order_case1(
    values: &[((usize, usize), f64)],
    p_star: usize,
    q_star: usize,
    mode: SearchMode,
) -> Result<OrderEstimate> {
    if values.is_empty() {
        return Err(Error::arg("empty search set"));
    }
    let (p_hat, q_hat) = match mode {
        SearchMode::Joint => argmin(values).map(|(o, _)| o).expect("nonempty"),
        SearchMode::Decoupled => {
            let row: Vec<_> = values.iter().filter(|((p, q), _)| *q == q_star && *p >= 1 && *p <= p_star).collect();
            let col: Vec<_> = values.iter().filter(|((p, q), _)| *p == p_star && *q >= 1 && *q <= q_star).collect();
            let p_hat = argmin(row).ok_or_else(|| Error::arg("decoupled search needs L(p, q*) values"))?.0 .0;
            let q_hat = argmin(col).ok_or_else(|| Error::arg("decoupled search needs L(p*, q) values"))?.0 .1;
            (p_hat, q_hat)
        }
    };
    Ok(OrderEstimate { p_hat, q_hat, m_hat: None, criterion_values: values.to_vec(), warm_up: false })
}

/// Unknown-bound selection at time `t`.
///
/// `m_hat = argmin_s L(s, s)` over `0..=S(t)`, then `p_hat = argmin_p L(p, m_hat)`
/// and `q_hat = argmin_q L(p_hat, q)` over `0..=m_hat`. `criterion(p, q)` is only
/// called for the candidates these three stages need.
pub fn select_order_case2<F>(t: usize, mut criterion: F) -> Result<OrderEstimate>
where
    F: FnMut(usize, usize) -> Result<f64>,
{
    let (range, warm_up) = search_range(t);
    let mut values: Vec<((usize, usize), f64)> = Vec::new();
    let mut lookup = |p: usize, q: usize, values: &mut Vec<((usize, usize), f64)>| -> Result<f64> {
        if let Some(&(_, v)) = values.iter().find(|(o, _)| *o == (p, q)) {
            return Ok(v);
        }
        let v = criterion(p, q)?;
        values.push(((p, q), v));
        Ok(v)
    };

    let mut diag = Vec::with_capacity(range + 1);
    for s in 0..=range {
        diag.push(((s, s), lookup(s, s, &mut values)?));
    }
    let m_hat = argmin(&diag).expect("nonempty").0 .0;

    let mut row = Vec::with_capacity(m_hat + 1);
    for p in 0..=m_hat {
        row.push(((p, m_hat), lookup(p, m_hat, &mut values)?));
    }
    let p_hat = argmin(&row).expect("nonempty").0 .0;

    let mut col = Vec::with_capacity(m_hat + 1);
    for q in 0..=m_hat {
        col.push(((p_hat, q), lookup(p_hat, q, &mut values)?));
    }
    let q_hat = argmin(&col).expect("nonempty").0 .1;

    Ok(OrderEstimate { p_hat, q_hat, m_hat: Some(m_hat), criterion_values: values, warm_up })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arx::{simulate, ArxSystem, InputModel, NoiseModel, SignalModels};
    use crate::graph::{build_topology, TopologyKind};
    use proptest::prelude::*;

    #[test]
    fn zero_signals_keep_zero_statistics() {
        let sys = ArxSystem::new(vec![0.5], vec![1.0]).unwrap();
        let tr = simulate(&sys, &SignalModels::uniform(InputModel::Zero, NoiseModel::Zero), 3, 10, 0).unwrap();
        let topo = build_topology(TopologyKind::Ring, 3, 0).unwrap();
        let mut s = SigmaStats::new(3, 2, 2);
        for _ in 0..10 {
            s.advance(&topo, &tr).unwrap();
        }
        assert_eq!(s, SigmaStats { t: 10, ..SigmaStats::new(3, 2, 2) });
    }

    #[test]
    fn single_sensor_first_step() {
        let sys = ArxSystem::new(vec![0.5], vec![1.0]).unwrap();
        let sig = SignalModels::uniform(InputModel::IidGaussian { sigma: 1.0 }, NoiseModel::IidGaussian { sigma: 1.0 });
        let tr = simulate(&sys, &sig, 1, 5, 2).unwrap();
        let topo = build_topology(TopologyKind::Complete, 1, 0).unwrap();
        let s = sigma_update(&SigmaStats::new(1, 1, 2), &topo, &tr).unwrap();
        let phi0 = tr.regressor(0, 0, 1, 2).unwrap();
        let y1 = tr.y(0, 1);
        assert_eq!(s.c(0), y1 * y1);
        assert_eq!(s.b(0), &(&phi0 * y1));
        assert_eq!(s.g(0), &(&phi0 * phi0.transpose()));
    }

    #[test]
    fn zero_beta_gives_c_and_empty_model() {
        let mut s = SigmaStats::new(1, 2, 2);
        s.c[0] = 7.5;
        s.b[0] = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        s.g[0] = DMatrix::identity(4, 4);
        assert_eq!(s.eval(0, 2, 1, &DVector::zeros(3)).unwrap(), 7.5);
        assert_eq!(lic_value(&s, 0, 0, 0, &DVector::zeros(0), 123.0).unwrap(), 7.5);
        assert!(matches!(s.eval(0, 3, 1, &DVector::zeros(4)), Err(Error::Argument(_))));
        assert!(matches!(s.eval(0, 1, 1, &DVector::zeros(3)), Err(Error::Argument(_))));
    }

    #[test]
    fn lic_value_adds_penalty() {
        // c = 10 with beta = 0 gives sigma = 10.
        let mut s = SigmaStats::new(1, 2, 1);
        s.c[0] = 10.0;
        assert_eq!(lic_value(&s, 0, 2, 1, &DVector::zeros(3), 5.0).unwrap(), 25.0);
    }

    #[test]
    fn unique_minimum_and_tie_break() {
        let vals = vec![((1, 1), 5.0), ((2, 1), 1.0), ((2, 2), 3.0)];
        assert_eq!(select_order_case1(&vals, 2, 2, SearchMode::Joint).unwrap().order(), (2, 1));
        let tie = vec![((2, 1), 1.0), ((1, 2), 1.0), ((3, 3), 4.0)];
        assert_eq!(select_order_case1(&tie, 3, 3, SearchMode::Joint).unwrap().order(), (1, 2));
        let parsimony = vec![((2, 2), 1.0), ((2, 1), 1.0)];
        assert_eq!(select_order_case1(&parsimony, 2, 2, SearchMode::Joint).unwrap().order(), (2, 1));
        assert!(select_order_case1(&[], 1, 1, SearchMode::Joint).is_err());
    }

    #[test]
    fn decoupled_uses_the_two_slices() {
        let mut vals = Vec::new();
        for p in 0..=3 {
            for q in 0..=3 {
                let l = ((p as f64 - 2.0).powi(2) + (q as f64 - 1.0).powi(2)) + if (p, q) == (0, 0) { -100.0 } else { 0.0 };
                vals.push(((p, q), l));
            }
        }
        assert_eq!(select_order_case1(&vals, 3, 3, SearchMode::Joint).unwrap().order(), (0, 0));
        assert_eq!(select_order_case1(&vals, 3, 3, SearchMode::Decoupled).unwrap().order(), (2, 1));
        assert!(select_order_case1(&[((1, 1), 0.0)], 3, 3, SearchMode::Decoupled).is_err());
    }

    #[test]
    fn search_range_boundaries() {
        assert_eq!(search_range(1), (0, true));
        assert_eq!(search_range(2), (0, true));
        assert_eq!(search_range(3), (1, false));
        assert_eq!(search_range(7), (1, false));
        assert_eq!(search_range(8), (2, false));
        assert_eq!(search_range(5000), (8, false));
    }

    #[test]
    fn case2_all_zero_data_selects_zero() {
        // Identical fit term at every order: the penalty decides.
        let est = select_order_case2(100, |p, q| Ok(4.0 + (p + q) as f64 * 2.0)).unwrap();
        assert_eq!(est.m_hat, Some(0));
        assert_eq!(est.order(), (0, 0));
        assert!(!est.warm_up);
        let early = select_order_case2(2, |_, _| Ok(1.0)).unwrap();
        assert!(early.warm_up);
        assert_eq!(early.criterion_values.len(), 1);
    }

    #[test]
    fn case2_three_stage_order() {
        let target = |p: usize, q: usize| ((p as f64 - 2.0).abs() + (q as f64 - 1.0).abs()) + 0.1 * (p.max(q) as f64 - 2.0).abs();
        let mut calls = Vec::new();
        let est = select_order_case2(5000, |p, q| {
            calls.push((p, q));
            Ok(target(p, q))
        })
        .unwrap();
        assert_eq!(est.m_hat, Some(2));
        assert_eq!(est.order(), (2, 1));
        // Each candidate is evaluated at most once.
        let mut uniq = calls.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), calls.len());
    }

    #[test]
    fn schedule_validation() {
        assert!(GainSchedule::default_known_bounds().validate(false).is_ok());
        assert!(GainSchedule::default_unknown_bounds().validate(true).is_ok());
        assert!(GainSchedule::default_known_bounds().validate(true).is_err());
        let constant = GainSchedule { a_t: PenaltySequence::Table { values: vec![3.0, 3.0, 3.0] }, h_alpha: None };
        assert!(constant.validate(false).is_err());
        assert!(GainSchedule { a_t: PenaltySequence::Power { rho: 1.0 }, h_alpha: None }.validate(false).is_err());
        let s = GainSchedule::default_unknown_bounds();
        assert_eq!(s.h(5000), 25);
        assert!((s.a(5000) - 5000f64.ln().powf(3.5)).abs() < 1e-9);
        assert!(s.a(1) > 0.0 && PenaltySequence::LogLog.at(2) > 0.0);
    }

    #[test]
    fn schedule_json_shape() {
        let s: GainSchedule = serde_json::from_str(r#"{"a_t":{"kind":"power","rho":0.6}}"#).unwrap();
        assert_eq!(s, GainSchedule::default_known_bounds());
    }

    proptest! {
        #[test]
        fn larger_penalty_never_selects_larger_model(
            sigmas in proptest::collection::vec(0.0f64..100.0, 16),
            a_lo in 0.0f64..20.0,
            bump in 0.0f64..20.0,
        ) {
            let grid: Vec<(usize, usize)> = (0..4).flat_map(|p| (0..4).map(move |q| (p, q))).collect();
            let values = |a: f64| -> Vec<((usize, usize), f64)> {
                grid.iter().zip(&sigmas).map(|(&(p, q), s)| ((p, q), s + (p + q) as f64 * a)).collect()
            };
            let lo = select_order_case1(&values(a_lo), 3, 3, SearchMode::Joint).unwrap();
            let hi = select_order_case1(&values(a_lo + bump), 3, 3, SearchMode::Joint).unwrap();
            prop_assert!(hi.p_hat + hi.q_hat <= lo.p_hat + lo.q_hat);
        }

        #[test]
        fn sigma_is_nonnegative_and_window_consistent(seed in 0u64..500, beta in proptest::collection::vec(-3.0f64..3.0, 3)) {
            let sys = ArxSystem::new(vec![0.7], vec![1.0, 0.4]).unwrap();
            let sig = SignalModels::uniform(InputModel::IidGaussian { sigma: 1.0 }, NoiseModel::IidGaussian { sigma: 0.5 });
            let tr = simulate(&sys, &sig, 3, 20, seed).unwrap();
            let topo = build_topology(TopologyKind::Ring, 3, 0).unwrap();
            let mut s = SigmaStats::new(3, 3, 2);
            for _ in 0..20 { s.advance(&topo, &tr).unwrap(); }
            let beta = DVector::from_vec(beta);
            // (2, 1) embedded in the (3, 2) window at positions {0, 1, 3}.
            let padded = DVector::from_vec(vec![beta[0], beta[1], 0.0, beta[2], 0.0]);
            let small = s.eval(1, 2, 1, &beta).unwrap();
            let full = s.eval(1, 3, 2, &padded).unwrap();
            prop_assert!(small >= -1e-10);
            prop_assert!((small - full).abs() <= 1e-9 * (1.0 + small.abs()));
        }
    }
}
