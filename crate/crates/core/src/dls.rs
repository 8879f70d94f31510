//! Diffusion least squares for one candidate order.
//!
//! Each round every sensor first adapts its estimate on its own newest sample,
//! then replaces its information matrix and information vector with the
//! weighted average over its closed neighborhood.

use nalgebra::{DMatrix, DVector};

use crate::arx::SensorTraces;
use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::linalg::{is_finite_matrix, is_finite_vector, max_abs, spd_inverse, symmetrize};

/// Default prior scale: `P_0 = gamma * I`.
pub const DEFAULT_GAMMA: f64 = 100.0;

/// Estimate, covariance-like matrix `P`, and its inverse, kept in lockstep.
#[derive(Debug, Clone, PartialEq)]
pub struct LsState {
    pub theta: DVector<f64>,
    pub p: DMatrix<f64>,
    pub p_inv: DMatrix<f64>,
}

impl LsState {
    pub fn new(theta: DVector<f64>, p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() != theta.len() || p.ncols() != theta.len() {
            return Err(Error::arg("initial P must be square with the estimate's dimension"));
        }
        let mut p = p;
        symmetrize(&mut p);
        let p_inv = spd_inverse(&p)?;
        Ok(LsState { theta, p, p_inv })
    }

    /// `theta = 0`, `P = gamma * I`.
    pub fn prior(dim: usize, gamma: f64) -> Self {
        LsState {
            theta: DVector::zeros(dim),
            p: DMatrix::identity(dim, dim) * gamma,
            p_inv: DMatrix::identity(dim, dim) / gamma,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// `P^{-1} theta`.
    pub fn information(&self) -> DVector<f64> {
        &self.p_inv * &self.theta
    }
}

/// Post-adaptation state of one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct IntermediateState {
    pub theta_bar: DVector<f64>,
    pub p_bar: DMatrix<f64>,
    /// Built as `P^{-1} + phi phi'` rather than by inverting `p_bar`.
    pub p_bar_inv: DMatrix<f64>,
    /// `p_bar_inv * theta_bar`.
    pub info_bar: DVector<f64>,
    /// `1 / (1 + phi' P phi)`.
    pub gain: f64,
}

/// Local recursive least-squares update on `(phi_t, y_{t+1})`.
pub fn adapt(state: &LsState, phi: &DVector<f64>, y_next: f64) -> Result<IntermediateState> {
    if phi.len() != state.dim() {
        return Err(Error::arg(format!("regressor has dimension {}, state has {}", phi.len(), state.dim())));
    }
    if !y_next.is_finite() || !is_finite_vector(phi) {
        return Err(Error::numeric("nonfinite sample passed to adaptation"));
    }
    let p_phi = &state.p * phi;
    let gain = 1.0 / (1.0 + phi.dot(&p_phi));
    let innovation = y_next - phi.dot(&state.theta);
    let theta_bar = &state.theta + &p_phi * (gain * innovation);
    let mut p_bar = &state.p - (&p_phi * p_phi.transpose()) * gain;
    symmetrize(&mut p_bar);
    let p_bar_inv = &state.p_inv + phi * phi.transpose();
    let info_bar = &p_bar_inv * &theta_bar;
    if !is_finite_vector(&theta_bar) || !is_finite_matrix(&p_bar) {
        return Err(Error::numeric("adaptation produced nonfinite values"));
    }
    Ok(IntermediateState { theta_bar, p_bar, p_bar_inv, info_bar, gain })
}

/// Fuse neighbors' intermediate states: `P^{-1} = sum a_ij Pbar_j^{-1}`,
/// `theta = P sum a_ij Pbar_j^{-1} theta_bar_j`.
///
/// Sums accumulate in the order given, which callers keep ascending in `j`.
pub fn diffuse(neighbors: &[(f64, &IntermediateState)]) -> Result<LsState> {
    let (_, first) = neighbors.first().ok_or_else(|| Error::arg("diffusion needs at least one neighbor"))?;
    let dim = first.theta_bar.len();
    let mut p_inv = DMatrix::zeros(dim, dim);
    let mut info = DVector::zeros(dim);
    for (a, s) in neighbors {
        if !(*a > 0.0) {
            return Err(Error::arg(format!("diffusion weight {a} is not positive")));
        }
        if s.theta_bar.len() != dim {
            return Err(Error::arg("neighbor states have mismatched dimensions"));
        }
        p_inv += &s.p_bar_inv * *a;
        info += &s.info_bar * *a;
    }
    symmetrize(&mut p_inv);
    let p = spd_inverse(&p_inv).map_err(|_| Error::numeric("fused information matrix is singular"))?;
    let theta = &p * info;
    Ok(LsState { theta, p, p_inv })
}

/// One synchronous round for candidate `(p, q)`: all sensors adapt on
/// `(phi_{t,i}, y_{t+1,i})`, then all diffuse. Returns the intermediates too.
pub fn step_network_detailed(
    states: &[LsState],
    traces: &SensorTraces,
    t: usize,
    topology: &Topology,
    p: usize,
    q: usize,
) -> Result<(Vec<IntermediateState>, Vec<LsState>)> {
    let n = topology.n();
    if states.len() != n || traces.n() != n {
        return Err(Error::arg("state, trace and topology sensor counts differ"));
    }
    if t >= traces.horizon() {
        return Err(Error::arg(format!("step at t = {t} needs y_(t+1) beyond horizon {}", traces.horizon())));
    }
    let mut phi = DVector::zeros(p + q);
    let mut mids = Vec::with_capacity(n);
    for (i, s) in states.iter().enumerate() {
        traces.fill_regressor(i, t, p, q, phi.as_mut_slice());
        mids.push(adapt(s, &phi, traces.y(i, t + 1))?);
    }
    let next = (0..n)
        .map(|i| {
            let nb: Vec<(f64, &IntermediateState)> = topology.neighborhood(i).iter().map(|&(j, a)| (a, &mids[j])).collect();
            diffuse(&nb)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((mids, next))
}

pub fn step_network(
    states: &[LsState],
    traces: &SensorTraces,
    t: usize,
    topology: &Topology,
    p: usize,
    q: usize,
) -> Result<Vec<LsState>> {
    step_network_detailed(states, traces, t, topology, p, q).map(|(_, next)| next)
}

/// Network-wide state machine for one candidate order.
///
/// `time()` is the index `t` of the estimates currently held (`theta_{t,i}`).
#[derive(Debug, Clone)]
pub struct CandidateNetwork {
    p: usize,
    q: usize,
    created_at: usize,
    t: usize,
    states: Vec<LsState>,
}

impl CandidateNetwork {
    /// Fresh `(0, gamma I)` states at every sensor, holding estimates for time `t_start`.
    pub fn new(p: usize, q: usize, n: usize, gamma: f64, t_start: usize) -> Self {
        CandidateNetwork { p, q, created_at: t_start, t: t_start, states: vec![LsState::prior(p + q, gamma); n] }
    }

    pub fn order(&self) -> (usize, usize) {
        (self.p, self.q)
    }

    pub fn created_at(&self) -> usize {
        self.created_at
    }

    pub fn time(&self) -> usize {
        self.t
    }

    pub fn states(&self) -> &[LsState] {
        &self.states
    }

    pub fn theta(&self, i: usize) -> &DVector<f64> {
        &self.states[i].theta
    }

    pub fn advance(&mut self, traces: &SensorTraces, topology: &Topology) -> Result<()> {
        self.states = step_network(&self.states, traces, self.t, topology, self.p, self.q)?;
        self.t += 1;
        Ok(())
    }

    /// Advance and hand the pre-step states, intermediates and post-step states to `inspect`.
    pub fn advance_inspect<F>(&mut self, traces: &SensorTraces, topology: &Topology, mut inspect: F) -> Result<()>
    where
        F: FnMut(usize, &[LsState], &[IntermediateState], &[LsState]),
    {
        let (mids, next) = step_network_detailed(&self.states, traces, self.t, topology, self.p, self.q)?;
        inspect(self.t, &self.states, &mids, &next);
        self.states = next;
        self.t += 1;
        Ok(())
    }
}

/// `|| Pbar * Pbar_inv - I ||_inf` for an intermediate state.
pub fn inverse_identity_residual(mid: &IntermediateState) -> f64 {
    let dim = mid.theta_bar.len();
    max_abs(&(&mid.p_bar * &mid.p_bar_inv - DMatrix::<f64>::identity(dim, dim)))
}

/// Relative residual of the error recursion
/// `P^{-1}_{t+1,i} e_{t+1,i} = sum_j a_ij (P^{-1}_{t,j} e_{t,j} - phi_{t,j} w_{t+1,j})`
/// with `e = theta_true - theta`, valid when the candidate contains the true orders.
///
/// The scale is the magnitude of the products actually formed, so the number is
/// comparable to machine precision.
#[allow(clippy::too_many_arguments)]
pub fn error_recursion_residual(
    before: &[LsState],
    after: &[LsState],
    traces: &SensorTraces,
    topology: &Topology,
    t: usize,
    p: usize,
    q: usize,
    theta_true: &DVector<f64>,
) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..topology.n() {
        let lhs = &after[i].p_inv * (theta_true - &after[i].theta);
        let mut rhs = DVector::zeros(p + q);
        let mut scale = max_abs(&after[i].p_inv) * (theta_true.amax() + after[i].theta.amax());
        for &(j, a) in topology.neighborhood(i) {
            let phi = traces.regressor(j, t, p, q).expect("time within horizon");
            let w = traces.w(j, t + 1);
            rhs += (&before[j].p_inv * (theta_true - &before[j].theta) - &phi * w) * a;
            scale = scale.max(max_abs(&before[j].p_inv) * (theta_true.amax() + before[j].theta.amax()) + phi.amax() * w.abs());
        }
        let resid = (lhs - rhs).amax();
        worst = worst.max(resid / scale.max(1.0));
    }
    worst
}

/// Reference implementations used to check the diffusion engine.
pub mod oracle {
    use super::*;

    /// Classical single-sensor recursive least squares. Entry `k` holds `(theta_k, P_k)`;
    /// entry 0 is the initial condition.
    pub fn rls_oracle(
        data: &[(DVector<f64>, f64)],
        theta0: &DVector<f64>,
        p0: &DMatrix<f64>,
    ) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
        let mut theta = theta0.clone();
        let mut p = p0.clone();
        let mut out = Vec::with_capacity(data.len() + 1);
        out.push((theta.clone(), p.clone()));
        for (phi, y) in data {
            let denom = 1.0 + (phi.transpose() * &p * phi)[(0, 0)];
            let k = &p * phi / denom;
            theta = &theta + &k * (y - (phi.transpose() * &theta)[(0, 0)]);
            p = &p - &k * (phi.transpose() * &p);
            if !is_finite_matrix(&p) {
                return Err(Error::numeric("RLS oracle diverged"));
            }
            out.push((theta.clone(), p.clone()));
        }
        Ok(out)
    }

    /// Regularized batch least squares:
    /// `(P0^{-1} + sum phi phi')^{-1} (P0^{-1} theta0 + sum phi y)`, by LU solve.
    pub fn batch_ls(data: &[(DVector<f64>, f64)], theta0: &DVector<f64>, p0: &DMatrix<f64>) -> Result<DVector<f64>> {
        let p0_inv = p0.clone().try_inverse().ok_or_else(|| Error::numeric("P0 not invertible"))?;
        let mut lhs = p0_inv.clone();
        let mut rhs = &p0_inv * theta0;
        for (phi, y) in data {
            lhs += phi * phi.transpose();
            rhs += phi * *y;
        }
        lhs.lu().solve(&rhs).ok_or_else(|| Error::numeric("batch normal equations singular"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arx::{simulate, ArxSystem, InputModel, NoiseModel, SignalModels};
    use crate::graph::{build_topology, TopologyKind};

    fn scalar_state(theta: f64, p: f64) -> LsState {
        LsState::new(DVector::from_element(1, theta), DMatrix::from_element(1, 1, p)).unwrap()
    }

    #[test]
    fn zero_regressor_leaves_state_unchanged() {
        let s = LsState::new(DVector::from_vec(vec![1.0, -2.0]), DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let mid = adapt(&s, &DVector::zeros(2), 3.0).unwrap();
        assert_eq!(mid.theta_bar, s.theta);
        assert_eq!(mid.p_bar, s.p);
        assert_eq!(mid.gain, 1.0);
    }

    #[test]
    fn scalar_adaptation_by_hand() {
        let mid = adapt(&scalar_state(0.0, 1.0), &DVector::from_element(1, 1.0), 1.0).unwrap();
        assert_eq!(mid.gain, 0.5);
        assert_eq!(mid.theta_bar[0], 0.5);
        assert_eq!(mid.p_bar[(0, 0)], 0.5);
        assert_eq!(mid.p_bar_inv[(0, 0)], 2.0);
        assert_eq!(1.0 / mid.p_bar[(0, 0)], mid.p_bar_inv[(0, 0)]);
    }

    #[test]
    fn dimension_mismatch_is_an_argument_error() {
        assert!(matches!(adapt(&LsState::prior(2, 1.0), &DVector::zeros(3), 0.0), Err(Error::Argument(_))));
        assert!(matches!(adapt(&LsState::prior(1, 1.0), &DVector::zeros(1), f64::NAN), Err(Error::Numeric(_))));
    }

    fn mid_from(p_inv: f64, theta_bar: f64) -> IntermediateState {
        IntermediateState {
            theta_bar: DVector::from_element(1, theta_bar),
            p_bar: DMatrix::from_element(1, 1, 1.0 / p_inv),
            p_bar_inv: DMatrix::from_element(1, 1, p_inv),
            info_bar: DVector::from_element(1, p_inv * theta_bar),
            gain: 1.0,
        }
    }

    #[test]
    fn diffusion_examples() {
        let a = mid_from(1.0, 0.0);
        let b = mid_from(3.0, 2.0);
        let fused = diffuse(&[(0.5, &a), (0.5, &b)]).unwrap();
        assert_eq!(fused.p_inv[(0, 0)], 2.0);
        assert!((fused.theta[0] - 1.5).abs() < 1e-15);

        let single = diffuse(&[(1.0, &b)]).unwrap();
        assert!((single.theta[0] - 2.0).abs() < 1e-15 && (single.p[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);

        let same = diffuse(&[(0.5, &b), (0.5, &b)]).unwrap();
        assert!((same.theta[0] - 2.0).abs() < 1e-15);
        assert!(diffuse(&[]).is_err());
        assert!(diffuse(&[(0.0, &a)]).is_err());
    }

    #[test]
    fn identical_data_keeps_sensors_identical() {
        let sys = ArxSystem::new(vec![0.6], vec![1.0]).unwrap();
        let one = simulate(&sys, &SignalModels::uniform(InputModel::IidGaussian { sigma: 1.0 }, NoiseModel::IidGaussian { sigma: 0.3 }), 1, 30, 5).unwrap();
        let mut buf = Vec::new();
        one.write_csv(&mut buf).unwrap();
        // Duplicate sensor 0 into sensor 1.
        let text = String::from_utf8(buf).unwrap();
        let mut dup = text.clone();
        for line in text.lines().skip(1) {
            dup.push_str(&line.replacen("0,", "1,", 1));
            dup.push('\n');
        }
        let twin = SensorTraces::read_csv(dup.as_bytes()).unwrap();
        let topo = build_topology(TopologyKind::Complete, 2, 0).unwrap();
        let mut net = CandidateNetwork::new(1, 1, 2, DEFAULT_GAMMA, 0);
        for _ in 0..30 {
            net.advance(&twin, &topo).unwrap();
            assert_eq!(net.states()[0], net.states()[1]);
        }
    }
}
