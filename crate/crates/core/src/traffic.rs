//! Workload description shared by the analytical models and the simulator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Placement;
use crate::queueing::{KingmanMode, ServiceSpec};

/// Row-sum tolerance for access-probability matrices.
pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

/// How cores spread their L2 accesses over the caches.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessPattern {
    /// Every cache equally likely.
    #[default]
    Uniform,
    /// `p[i][j]`: core `i` to cache `j`, both indexed in row-major tile order.
    Matrix(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficSpec {
    /// Per-core request generation rate.
    pub lambda_g: f64,
    /// Optional per-core rates overriding `lambda_g`, in row-major core order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub core_rates: Option<Vec<f64>>,
    pub hit_l1: f64,
    pub miss_l2: f64,
    pub access: AccessPattern,
    /// Constant private-cache latency, added once per core.
    pub latency_l1: f64,
    /// Per-hop router service.
    pub svc: ServiceSpec,
    /// Squared coefficient of variation of arrivals (1 for Poisson sources).
    pub ca2: f64,
    pub kingman: KingmanMode,
    pub model_replies: bool,
    /// Off-chip access time added to every memory access.
    pub mem_fixed_latency: f64,
}

impl Default for TrafficSpec {
    fn default() -> Self {
        TrafficSpec {
            lambda_g: 0.01,
            core_rates: None,
            hit_l1: 0.0,
            miss_l2: 0.0,
            access: AccessPattern::Uniform,
            latency_l1: 0.0,
            svc: ServiceSpec::default(),
            ca2: 1.0,
            kingman: KingmanMode::Sojourn,
            model_replies: false,
            mem_fixed_latency: 0.0,
        }
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidTraffic(format!(
            "{name} = {v} is outside [0, 1]"
        )))
    }
}

impl TrafficSpec {
    pub fn with_lambda(&self, lambda_g: f64) -> Self {
        TrafficSpec {
            lambda_g,
            ..self.clone()
        }
    }

    pub fn miss_l1(&self) -> f64 {
        1.0 - self.hit_l1
    }

    /// Request rate of core `i`.
    pub fn core_rate(&self, i: usize) -> f64 {
        match &self.core_rates {
            Some(r) => r[i],
            None => self.lambda_g,
        }
    }

    /// Probability that core `i` targets cache `j` out of `n_caches`.
    pub fn access(&self, i: usize, j: usize, n_caches: usize) -> f64 {
        match &self.access {
            AccessPattern::Uniform => 1.0 / n_caches as f64,
            AccessPattern::Matrix(p) => p[i][j],
        }
    }

    pub fn validate(&self, p: &Placement) -> Result<()> {
        let counts = p.counts();
        if !(self.lambda_g.is_finite() && self.lambda_g >= 0.0) {
            return Err(Error::InvalidTraffic(format!(
                "lambda_g = {} must be finite and non-negative",
                self.lambda_g
            )));
        }
        unit_interval("hit_l1", self.hit_l1)?;
        unit_interval("miss_l2", self.miss_l2)?;
        if !(self.svc.mean > 0.0 && self.svc.mean.is_finite())
            || self.svc.scv.is_nan()
            || self.svc.scv < 0.0
        {
            return Err(Error::InvalidTraffic(format!(
                "service mean {} must be positive and scv {} non-negative",
                self.svc.mean, self.svc.scv
            )));
        }
        if self.ca2.is_nan() || self.ca2 < 0.0 {
            return Err(Error::InvalidTraffic(format!(
                "ca2 = {} is negative",
                self.ca2
            )));
        }
        if let Some(rates) = &self.core_rates {
            if rates.len() != counts.cores {
                return Err(Error::InvalidTraffic(format!(
                    "{} core rates for {} cores",
                    rates.len(),
                    counts.cores
                )));
            }
            if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                return Err(Error::InvalidTraffic(
                    "core rates must be non-negative".into(),
                ));
            }
        }
        if let AccessPattern::Matrix(m) = &self.access {
            if m.len() != counts.cores || m.iter().any(|r| r.len() != counts.caches) {
                return Err(Error::InvalidTraffic(format!(
                    "access matrix must be {}x{}",
                    counts.cores, counts.caches
                )));
            }
            for (i, row) in m.iter().enumerate() {
                for &v in row {
                    unit_interval("access probability", v)?;
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
                    return Err(Error::InvalidTraffic(format!(
                        "access row {i} sums to {sum}, not 1"
                    )));
                }
            }
        }
        Ok(())
    }
}
