//! The shared ARX law and per-sensor data generation.
//!
//! Every sensor observes
//!
//! ```text
//! y[t+1] = b_1 y[t] + ... + b_p0 y[t+1-p0] + c_1 u[t] + ... + c_q0 u[t+1-q0] + w[t+1]
//! ```
//!
//! with its own input and noise realization. Traces are stored for
//! `t = 0..=T`; `y[0] = w[0] = 0` and anything before `t = 0` reads as zero.

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// True system `(b, c)` with orders `p0 = b.len()`, `q0 = c.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArxRepr", into = "ArxRepr")]
pub struct ArxSystem {
    b: Vec<f64>,
    c: Vec<f64>,
}

impl ArxSystem {
    pub fn new(b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        if b.is_empty() || c.is_empty() {
            return Err(Error::validation("ARX orders p0 and q0 must both be at least 1"));
        }
        if b.iter().chain(&c).any(|v| !v.is_finite()) {
            return Err(Error::validation("ARX coefficients must be finite"));
        }
        if *b.last().unwrap() == 0.0 {
            return Err(Error::validation("leading AR coefficient b_p0 must be nonzero"));
        }
        if *c.last().unwrap() == 0.0 {
            return Err(Error::validation("leading input coefficient c_q0 must be nonzero"));
        }
        Ok(ArxSystem { b, c })
    }

    pub fn p0(&self) -> usize {
        self.b.len()
    }

    pub fn q0(&self) -> usize {
        self.c.len()
    }

    /// `max(p0, q0)`.
    pub fn m0(&self) -> usize {
        self.p0().max(self.q0())
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    /// `[b_1..b_p, c_1..c_q]`, zero-padded past the true orders and truncated below them.
    pub fn theta(&self, p: usize, q: usize) -> DVector<f64> {
        let coef = |v: &[f64], k: usize| v.get(k).copied().unwrap_or(0.0);
        DVector::from_iterator(p + q, (0..p).map(|k| coef(&self.b, k)).chain((0..q).map(|k| coef(&self.c, k))))
    }
}

#[derive(Serialize, Deserialize)]
struct ArxRepr {
    p0: usize,
    q0: usize,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl TryFrom<ArxRepr> for ArxSystem {
    type Error = Error;

    fn try_from(r: ArxRepr) -> Result<Self> {
        if r.p0 != r.b.len() || r.q0 != r.c.len() {
            return Err(Error::validation(format!(
                "system declares (p0, q0) = ({}, {}) but has {} b and {} c coefficients",
                r.p0,
                r.q0,
                r.b.len(),
                r.c.len()
            )));
        }
        ArxSystem::new(r.b, r.c)
    }
}

impl From<ArxSystem> for ArxRepr {
    fn from(s: ArxSystem) -> Self {
        ArxRepr { p0: s.p0(), q0: s.q0(), b: s.b, c: s.c }
    }
}

/// Per-sensor input generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputModel {
    IidGaussian { sigma: f64 },
    /// Deterministic excitation restricted to a set of frequency bins of an
    /// `period`-point grid: `u[t] = amplitude * sum_k sin(2 pi k (t + 1/2) / period)`.
    ///
    /// Each bin contributes a two-dimensional signal subspace, so a sensor fed
    /// one bin cannot excite more than two regressor directions on its own.
    SubspaceExcited { bins: Vec<usize>, period: usize, amplitude: f64 },
    Constant { value: f64 },
    Zero,
    /// Explicit values for `t = 0, 1, ...`; zero past the end.
    Sequence { values: Vec<f64> },
}

impl InputModel {
    fn validate(&self) -> Result<()> {
        match self {
            InputModel::IidGaussian { sigma } if !(sigma.is_finite() && *sigma >= 0.0) => {
                Err(Error::validation("input sigma must be finite and nonnegative"))
            }
            InputModel::SubspaceExcited { bins, period, amplitude } => {
                if *period == 0 || bins.is_empty() || !amplitude.is_finite() {
                    return Err(Error::validation("subspace excitation needs period >= 1, bins, finite amplitude"));
                }
                if bins.iter().any(|&k| k == 0 || 2 * k >= *period) {
                    return Err(Error::validation("subspace excitation bins must lie in 1..period/2"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn generate(&self, horizon: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            InputModel::IidGaussian { sigma } => {
                let normal = Normal::new(0.0, *sigma).expect("validated sigma");
                (0..=horizon).map(|_| normal.sample(rng)).collect()
            }
            InputModel::SubspaceExcited { bins, period, amplitude } => (0..=horizon)
                .map(|t| {
                    let phase = t as f64 + 0.5;
                    amplitude * bins.iter().map(|&k| (2.0 * PI * k as f64 * phase / *period as f64).sin()).sum::<f64>()
                })
                .collect(),
            InputModel::Constant { value } => vec![*value; horizon + 1],
            InputModel::Zero => vec![0.0; horizon + 1],
            InputModel::Sequence { values } => {
                (0..=horizon).map(|t| values.get(t).copied().unwrap_or(0.0)).collect()
            }
        }
    }
}

/// Per-sensor noise generator. All variants are zero-mean and drawn independently of the past.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    IidGaussian { sigma: f64 },
    BoundedUniform { bound: f64 },
    /// Student-t draws clamped to `±clamp * eta(t)` with
    /// `eta(t) = eta0 * (ln max(t, e))^log_exponent`.
    HeavyTailedTruncated {
        scale: f64,
        dof: f64,
        eta0: f64,
        #[serde(default)]
        log_exponent: f64,
        #[serde(default = "one")]
        clamp: f64,
    },
    Zero,
}

fn one() -> f64 {
    1.0
}

impl NoiseModel {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            NoiseModel::IidGaussian { sigma } => sigma.is_finite() && *sigma >= 0.0,
            NoiseModel::BoundedUniform { bound } => bound.is_finite() && *bound >= 0.0,
            NoiseModel::HeavyTailedTruncated { scale, dof, eta0, log_exponent, clamp } => {
                *scale >= 0.0 && *dof > 0.0 && *eta0 > 0.0 && *log_exponent >= 0.0 && *clamp > 0.0
            }
            NoiseModel::Zero => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("invalid noise model {self:?}")))
        }
    }

    /// Envelope `eta_i(t)` bounding the noise magnitude (up to a constant).
    pub fn eta(&self, t: usize) -> f64 {
        let log_t = (t as f64).max(std::f64::consts::E).ln();
        match self {
            NoiseModel::IidGaussian { sigma } => sigma * (2.0 * log_t).sqrt(),
            NoiseModel::BoundedUniform { bound } => *bound,
            NoiseModel::HeavyTailedTruncated { eta0, log_exponent, .. } => eta0 * log_t.powf(*log_exponent),
            NoiseModel::Zero => 0.0,
        }
    }

    fn generate(&self, horizon: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut w = vec![0.0; horizon + 1];
        match self {
            NoiseModel::IidGaussian { sigma } => {
                let normal = Normal::new(0.0, *sigma).expect("validated sigma");
                for v in w.iter_mut().skip(1) {
                    *v = normal.sample(rng);
                }
            }
            NoiseModel::BoundedUniform { bound } => {
                if *bound > 0.0 {
                    let uni = Uniform::new_inclusive(-bound, *bound).expect("validated bound");
                    for v in w.iter_mut().skip(1) {
                        *v = uni.sample(rng);
                    }
                }
            }
            NoiseModel::HeavyTailedTruncated { scale, dof, clamp, .. } => {
                let student = StudentT::new(*dof).expect("validated dof");
                for (t, v) in w.iter_mut().enumerate().skip(1) {
                    let limit = clamp * self.eta(t);
                    // Symmetric draw and symmetric clamp keep the mean at zero.
                    *v = (scale * student.sample(rng)).clamp(-limit, limit);
                }
            }
            NoiseModel::Zero => {}
        }
        w
    }
}

/// Either one model shared by every sensor or an explicit per-sensor list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerSensor<T> {
    Each(Vec<T>),
    All(T),
}

impl<T> PerSensor<T> {
    pub fn get(&self, i: usize) -> Option<&T> {
        match self {
            PerSensor::All(m) => Some(m),
            PerSensor::Each(v) => v.get(i),
        }
    }

    fn check_len(&self, n: usize, what: &str) -> Result<()> {
        match self {
            PerSensor::Each(v) if v.len() != n => {
                Err(Error::validation(format!("{what} lists {} sensors, network has {n}", v.len())))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalModels {
    pub input: PerSensor<InputModel>,
    pub noise: PerSensor<NoiseModel>,
}

impl SignalModels {
    pub fn uniform(input: InputModel, noise: NoiseModel) -> Self {
        SignalModels { input: PerSensor::All(input), noise: PerSensor::All(noise) }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        self.input.check_len(n, "input")?;
        self.noise.check_len(n, "noise")?;
        for i in 0..n {
            self.input(i).validate()?;
            self.noise(i).validate()?;
        }
        Ok(())
    }

    pub fn input(&self, i: usize) -> &InputModel {
        self.input.get(i).expect("validated sensor count")
    }

    pub fn noise(&self, i: usize) -> &NoiseModel {
        self.noise.get(i).expect("validated sensor count")
    }

    /// Network envelope `eta(t) = sqrt(sum_i eta_i(t)^2)`.
    pub fn eta(&self, n: usize, t: usize) -> f64 {
        (0..n).map(|i| self.noise(i).eta(t).powi(2)).sum::<f64>().sqrt()
    }
}

/// Input, output and noise records of every sensor for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorTraces {
    y: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
}

impl SensorTraces {
    /// Run the ARX recursion on given inputs and noise (`w[i][0]` is ignored and stored as 0).
    pub fn from_signals(system: &ArxSystem, u: Vec<Vec<f64>>, mut w: Vec<Vec<f64>>) -> Result<Self> {
        if u.len() != w.len() || u.is_empty() {
            return Err(Error::arg("inputs and noise must cover the same, nonzero number of sensors"));
        }
        let len = u[0].len();
        if len < 2 || u.iter().chain(&w).any(|s| s.len() != len) {
            return Err(Error::arg("every sensor trace must have the same length T + 1 with T >= 1"));
        }
        let mut y = vec![vec![0.0; len]; u.len()];
        for (i, yi) in y.iter_mut().enumerate() {
            w[i][0] = 0.0;
            for t in 0..len - 1 {
                let ar: f64 = system.b().iter().enumerate().filter(|(k, _)| *k <= t).map(|(k, b)| b * yi[t - k]).sum();
                let ex: f64 = system.c().iter().enumerate().filter(|(k, _)| *k <= t).map(|(k, c)| c * u[i][t - k]).sum();
                let next = ar + ex + w[i][t + 1];
                if !next.is_finite() {
                    return Err(Error::Simulation { sensor: i, t: t + 1 });
                }
                yi[t + 1] = next;
            }
        }
        Ok(SensorTraces { y, u, w })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Last stored time index `T`.
    pub fn horizon(&self) -> usize {
        self.y[0].len() - 1
    }

    pub fn y(&self, i: usize, t: usize) -> f64 {
        self.y[i][t]
    }

    pub fn u(&self, i: usize, t: usize) -> f64 {
        self.u[i][t]
    }

    pub fn w(&self, i: usize, t: usize) -> f64 {
        self.w[i][t]
    }

    /// `[y_t, ..., y_{t+1-p}, u_t, ..., u_{t+1-q}]` at sensor `i`, zero before `t = 0`.
    pub fn regressor(&self, i: usize, t: usize, p: usize, q: usize) -> Result<DVector<f64>> {
        if i >= self.n() {
            return Err(Error::arg(format!("sensor {i} out of range 0..{}", self.n())));
        }
        if t > self.horizon() {
            return Err(Error::arg(format!("time {t} beyond horizon {}", self.horizon())));
        }
        let mut out = DVector::zeros(p + q);
        self.fill_regressor(i, t, p, q, out.as_mut_slice());
        Ok(out)
    }

    /// Unchecked variant of [`regressor`](Self::regressor) writing into `buf[..p + q]`.
    pub fn fill_regressor(&self, i: usize, t: usize, p: usize, q: usize, buf: &mut [f64]) {
        let (y, u) = (&self.y[i], &self.u[i]);
        for k in 0..p {
            buf[k] = if k <= t { y[t - k] } else { 0.0 };
        }
        for k in 0..q {
            buf[p + k] = if k <= t { u[t - k] } else { 0.0 };
        }
    }

    /// Largest `|y_{t+1} - theta(p0,q0)' phi_t - w_{t+1}|` over all sensors and times.
    pub fn reconstruction_error(&self, system: &ArxSystem) -> f64 {
        let theta = system.theta(system.p0(), system.q0());
        let mut worst = 0.0_f64;
        for i in 0..self.n() {
            for t in 0..self.horizon() {
                let phi = self.regressor(i, t, system.p0(), system.q0()).expect("in range");
                worst = worst.max((self.y[i][t + 1] - theta.dot(&phi) - self.w[i][t + 1]).abs());
            }
        }
        worst
    }

    /// The records of a subset of sensors, in the given order.
    pub fn select(&self, sensors: &[usize]) -> Result<Self> {
        if sensors.is_empty() || sensors.iter().any(|&i| i >= self.n()) {
            return Err(Error::arg("sensor selection is empty or out of range"));
        }
        let pick = |v: &Vec<Vec<f64>>| sensors.iter().map(|&i| v[i].clone()).collect();
        Ok(SensorTraces { y: pick(&self.y), u: pick(&self.u), w: pick(&self.w) })
    }

    /// CSV with header `sensor,t,y,u,w`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["sensor", "t", "y", "u", "w"])?;
        for i in 0..self.n() {
            for t in 0..=self.horizon() {
                wtr.serialize((i, t, self.y[i][t], self.u[i][t], self.w[i][t]))?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv). Rows may come in any order but must be complete.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut rows: Vec<(usize, usize, f64, f64, f64)> = Vec::new();
        for rec in rdr.deserialize() {
            rows.push(rec?);
        }
        let n = rows.iter().map(|r| r.0 + 1).max().ok_or_else(|| Error::arg("empty trace file"))?;
        let len = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        if rows.len() != n * len || len < 2 {
            return Err(Error::arg(format!("trace file has {} rows, expected {n} x {len}", rows.len())));
        }
        let mut seen = vec![vec![false; len]; n];
        let (mut y, mut u, mut w) = (vec![vec![0.0; len]; n], vec![vec![0.0; len]; n], vec![vec![0.0; len]; n]);
        for (i, t, yv, uv, wv) in rows {
            if std::mem::replace(&mut seen[i][t], true) {
                return Err(Error::arg(format!("duplicate trace row for sensor {i}, t = {t}")));
            }
            y[i][t] = yv;
            u[i][t] = uv;
            w[i][t] = wv;
        }
        Ok(SensorTraces { y, u, w })
    }
}

/// Generate traces for `n` sensors over `t = 0..=horizon`.
///
/// Sensor `i` draws its input from ChaCha stream `2i` and its noise from stream `2i + 1`,
/// so a sensor's data does not depend on how many other sensors exist.
pub fn simulate(system: &ArxSystem, signals: &SignalModels, n: usize, horizon: usize, seed: u64) -> Result<SensorTraces> {
    if n == 0 {
        return Err(Error::arg("need at least one sensor"));
    }
    if horizon == 0 {
        return Err(Error::arg("horizon must be at least 1"));
    }
    signals.validate(n)?;
    let mut u = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        u.push(signals.input(i).generate(horizon, &mut sensor_rng(seed, 2 * i as u64)));
        w.push(signals.noise(i).generate(horizon, &mut sensor_rng(seed, 2 * i as u64 + 1)));
    }
    SensorTraces::from_signals(system, u, w)
}

fn sensor_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    fn first_order() -> ArxSystem {
        ArxSystem::new(vec![0.5], vec![1.0]).unwrap()
    }

    #[test]
    fn zero_leading_coefficient_rejected() {
        assert!(ArxSystem::new(vec![0.0], vec![1.0]).is_err());
        assert!(ArxSystem::new(vec![0.5], vec![1.0, 0.0]).is_err());
        assert!(ArxSystem::new(vec![], vec![1.0]).is_err());
    }

    #[test]
    fn zero_forcing_gives_zero_output() {
        let tr = simulate(&first_order(), &SignalModels::uniform(InputModel::Zero, NoiseModel::Zero), 1, 20, 3).unwrap();
        assert!((0..=20).all(|t| tr.y(0, t) == 0.0));
    }

    #[test]
    fn impulse_response_by_hand() {
        let signals = SignalModels::uniform(InputModel::Sequence { values: vec![1.0] }, NoiseModel::Zero);
        let tr = simulate(&first_order(), &signals, 1, 5, 0).unwrap();
        assert_eq!((tr.y(0, 1), tr.y(0, 2), tr.y(0, 3)), (1.0, 0.5, 0.25));
        assert_eq!(tr.regressor(0, 3, 1, 2).unwrap().as_slice(), &[0.25, 0.0, 0.0]);
    }

    #[test]
    fn regressor_windows() {
        let signals = SignalModels::uniform(InputModel::IidGaussian { sigma: 1.0 }, NoiseModel::IidGaussian { sigma: 0.1 });
        let tr = simulate(&first_order(), &signals, 2, 10, 9).unwrap();
        assert_eq!(tr.regressor(1, 4, 0, 0).unwrap().len(), 0);
        let phi = tr.regressor(0, 1, 2, 1).unwrap();
        assert_eq!(phi.as_slice(), &[tr.y(0, 1), tr.y(0, 0), tr.u(0, 1)]);
        assert_eq!(tr.y(0, 0), 0.0);
        assert!(matches!(tr.regressor(2, 0, 1, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn explosive_system_reports_time() {
        let sys = ArxSystem::new(vec![1e200], vec![1.0]).unwrap();
        let signals = SignalModels::uniform(InputModel::Constant { value: 1.0 }, NoiseModel::Zero);
        match simulate(&sys, &signals, 1, 10, 0) {
            Err(Error::Simulation { sensor: 0, t }) => assert!((2..=10).contains(&t)),
            other => panic!("expected simulation error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_noise_respects_envelope() {
        let noise = NoiseModel::HeavyTailedTruncated { scale: 1.0, dof: 1.5, eta0: 0.5, log_exponent: 0.5, clamp: 2.0 };
        let signals = SignalModels::uniform(InputModel::Zero, noise.clone());
        let tr = simulate(&first_order(), &signals, 3, 500, 1).unwrap();
        for i in 0..3 {
            for t in 1..=500 {
                assert!(tr.w(i, t).abs() <= 2.0 * noise.eta(t) + 1e-15);
            }
        }
    }

    #[test]
    fn subspace_excitation_is_deterministic_sinusoid() {
        let m = InputModel::SubspaceExcited { bins: vec![2], period: 16, amplitude: 1.5 };
        let u = m.generate(40, &mut ChaCha8Rng::seed_from_u64(0));
        let w = 2.0 * PI * 2.0 / 16.0;
        for t in 2..=40 {
            // Second-order recurrence of a pure sinusoid.
            assert!((u[t] - 2.0 * w.cos() * u[t - 1] + u[t - 2]).abs() < 1e-12);
        }
        assert!(InputModel::SubspaceExcited { bins: vec![8], period: 16, amplitude: 1.0 }.validate().is_err());
    }

    #[test]
    fn per_sensor_lists_must_match_network() {
        let signals = SignalModels {
            input: PerSensor::Each(vec![InputModel::Zero, InputModel::Zero]),
            noise: PerSensor::All(NoiseModel::Zero),
        };
        assert!(signals.validate(2).is_ok());
        assert!(signals.validate(3).is_err());
    }

    #[test]
    fn system_json_checks_declared_orders() {
        let ok: ArxSystem = serde_json::from_str(r#"{"p0":2,"q0":1,"b":[1.2,-0.5],"c":[1.0]}"#).unwrap();
        assert_eq!((ok.p0(), ok.q0(), ok.m0()), (2, 1, 2));
        assert!(serde_json::from_str::<ArxSystem>(r#"{"p0":1,"q0":1,"b":[1.2,-0.5],"c":[1.0]}"#).is_err());
    }

    #[test]
    fn theta_padding() {
        let sys = ArxSystem::new(vec![1.2, -0.5], vec![1.0]).unwrap();
        assert_eq!(sys.theta(3, 2).as_slice(), &[1.2, -0.5, 0.0, 1.0, 0.0]);
        assert_eq!(sys.theta(1, 1).as_slice(), &[1.2, 1.0]);
    }
}
