use serde::{Deserialize, Serialize};

use crate::arx::{simulate, ArxSystem, SensorTraces, SignalModels};
use crate::dls::DEFAULT_GAMMA;
use crate::error::{Error, Result};
use crate::excitation::Case;
use crate::graph::{build_topology, Topology, TopologyKind};
use crate::lic::{search_range, GainSchedule};

/// Either a generated topology (`kind`, `n`, `seed`) or an explicit edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<TopologyKind>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
}

impl TopologySpec {
    pub fn generated(kind: TopologyKind, n: usize) -> Self {
        TopologySpec { kind: Some(kind), n, seed: None, edges: None }
    }

    /// Random topologies fall back to the experiment seed.
    pub fn build(&self, experiment_seed: u64) -> Result<Topology> {
        match (&self.kind, &self.edges) {
            (Some(_), Some(_)) => Err(Error::validation("topology takes either kind or edges, not both")),
            (None, None) => Err(Error::validation("topology needs a kind or an edge list")),
            (Some(kind), None) => build_topology(*kind, self.n, self.seed.unwrap_or(experiment_seed)),
            (None, Some(edges)) => {
                let e: Vec<(usize, usize)> = edges.iter().map(|e| (e[0], e[1])).collect();
                Topology::from_edges(self.n, &e)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    pub p_star: usize,
    pub q_star: usize,
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: ArxSystem,
    pub signals: SignalModels,
    pub topology: TopologySpec,
    pub horizon: usize,
    pub seed: u64,
    pub case: Case,
    /// Required for known bounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Bounds>,
    /// Defaults to `t^0.6` (known bounds) or `(ln t)^3.5` with `h_alpha = 1.5` (unknown).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<GainSchedule>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Orders whose network Gram eigenvalue the excitation report tracks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<Vec<(usize, usize)>>,
    /// Summation lag of the excitation report; defaults by case.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_offset: Option<usize>,
    /// Unknown bounds: start late candidates from the full data history instead of the prior.
    #[serde(default)]
    pub replay_new_candidates: bool,
    /// Default output directory for the CLI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub oracle_checks: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::validation(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn n(&self) -> usize {
        self.topology.n
    }

    pub fn schedule(&self) -> GainSchedule {
        self.schedule.clone().unwrap_or_else(|| match self.case {
            Case::KnownBounds => GainSchedule::default_known_bounds(),
            Case::UnknownBounds => GainSchedule::default_unknown_bounds(),
        })
    }

    /// Bounds for known-bound runs.
    pub fn bounds(&self) -> Result<Bounds> {
        self.bounds.ok_or_else(|| Error::validation("known-bound runs need bounds {p_star, q_star}"))
    }

    /// Largest order window any candidate uses over the horizon.
    pub fn max_window(&self) -> Result<(usize, usize)> {
        match self.case {
            Case::KnownBounds => self.bounds().map(|b| (b.p_star, b.q_star)),
            Case::UnknownBounds => {
                let s = search_range(self.horizon).0;
                Ok((s, s))
            }
        }
    }

    pub fn probes(&self) -> Result<Vec<(usize, usize)>> {
        if let Some(p) = &self.probes {
            return Ok(p.clone());
        }
        let (p0, q0) = (self.system.p0(), self.system.q0());
        Ok(match self.case {
            Case::KnownBounds => {
                let b = self.bounds()?;
                let mut v = vec![(p0, b.q_star), (b.p_star, q0)];
                v.dedup();
                v
            }
            Case::UnknownBounds => vec![(self.system.m0(), self.system.m0())],
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::validation("topology needs at least one sensor"));
        }
        if self.horizon == 0 {
            return Err(Error::validation("horizon must be at least 1"));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::validation(format!("gamma must be positive, got {}", self.gamma)));
        }
        self.signals.validate(n)?;
        let schedule = self.schedule();
        match self.case {
            Case::KnownBounds => {
                let b = self.bounds()?;
                if b.p_star == 0 || b.q_star == 0 {
                    return Err(Error::validation("p_star and q_star must be at least 1"));
                }
                if schedule.h_alpha.is_some() {
                    return Err(Error::validation("h_alpha belongs to unknown-bound schedules"));
                }
                schedule.validate(false)?;
            }
            Case::UnknownBounds => {
                if self.bounds.is_some() {
                    return Err(Error::validation("unknown-bound runs take no bounds"));
                }
                schedule.validate(true)?;
            }
        }
        if let Some(probes) = &self.probes {
            if probes.is_empty() {
                return Err(Error::validation("probe list is empty"));
            }
            if probes.iter().any(|&(p, q)| p + q == 0) {
                return Err(Error::validation("probe order (0, 0) has no regressor"));
            }
        }
        Ok(())
    }

    pub fn build_topology(&self) -> Result<Topology> {
        let topo = self.topology.build(self.seed)?;
        if topo.n() != self.n() {
            return Err(Error::validation("topology size mismatch"));
        }
        Ok(topo)
    }

    pub fn simulate(&self) -> Result<SensorTraces> {
        simulate(&self.system, &self.signals, self.n(), self.horizon, self.seed)
    }
}
