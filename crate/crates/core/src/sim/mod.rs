//! Discrete-event simulation of message traffic on the mesh.
//!
//! Each router has one FIFO input queue per port. The message at the head of a
//! queue is served once the output port it needs is free; service holds both the
//! input queue and the output port for `length / mu` and moves the whole message
//! to the next router's input queue (or ejects it). A freed output port goes to
//! the waiting head that has waited longest, ties to the lower port index.
//! Buffers are unbounded, so there is no backpressure.

mod engine;
mod experiments;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Coord, Placement};
use crate::queueing::ServiceSpec;
use crate::routing::Port;
use crate::traffic::TrafficSpec;

pub use engine::run_sim;
pub use experiments::{
    compare_to_analytical, summarize_sweep, sweep_latency, sweep_summary_csv, sweep_to_csv,
    ChannelDelta, Comparison, FlowDelta, SweepCell, SweepRow,
};

/// Number of batches for the batch-means confidence interval.
pub const BATCHES: usize = 20;
/// Ratio of late to early mean latency above which a run is flagged saturated.
pub const TREND_THRESHOLD: f64 = 1.25;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Switching {
    #[default]
    VirtualCutThrough,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub placement: Placement,
    pub traffic: TrafficSpec,
    /// Mean of the exponential draw that is rounded into a message length.
    pub mean_message_size: f64,
    /// Packets served per unit time at every router.
    pub mu: f64,
    /// Number of core requests generated.
    pub messages: u64,
    /// Leading fraction of requests excluded from statistics.
    pub warmup: f64,
    pub seed: u64,
    pub switching: Switching,
    /// Keep running after the last request until the network is empty.
    pub drain: bool,
}

impl SimConfig {
    pub fn new(placement: Placement, traffic: TrafficSpec) -> Self {
        SimConfig {
            placement,
            traffic,
            mean_message_size: 10.0,
            mu: 1.0,
            messages: 100_000,
            warmup: 0.1,
            seed: 0,
            switching: Switching::VirtualCutThrough,
            drain: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.messages == 0 {
            return bad("message budget must be positive".into());
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad(format!("service rate {} must be positive", self.mu));
        }
        if !(self.mean_message_size > 0.0 && self.mean_message_size.is_finite()) {
            return bad(format!(
                "mean message size {} must be positive",
                self.mean_message_size
            ));
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return bad(format!("warmup fraction {} is outside [0, 1)", self.warmup));
        }
        self.traffic
            .validate(&self.placement)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let counts = self.placement.counts();
        if counts.cores == 0 {
            return bad("placement has no cores".into());
        }
        if counts.caches == 0 {
            return bad("placement has no caches".into());
        }
        if self.traffic.miss_l2 > 0.0 && counts.mcs == 0 {
            return bad("L2 misses need at least one memory controller".into());
        }
        let total: f64 = (0..counts.cores)
            .map(|i| self.traffic.core_rate(i))
            .sum::<f64>()
            * self.traffic.miss_l1();
        if total.is_nan() || total <= 0.0 {
            return bad("no core generates network traffic".into());
        }
        Ok(())
    }

    /// Mean per-hop service time, from the exact mean of the rounded length.
    pub fn mean_service_time(&self) -> f64 {
        LengthMoments::of(self.mean_message_size).mean / self.mu
    }

    /// The traffic description the analytical model should use for this run:
    /// per-hop service from the rounded length distribution.
    pub fn analytical_traffic(&self) -> TrafficSpec {
        let m = LengthMoments::of(self.mean_message_size);
        TrafficSpec {
            svc: ServiceSpec {
                mean: m.mean / self.mu,
                scv: m.scv(),
            },
            ..self.traffic.clone()
        }
    }
}

/// Moments of `max(1, round(X))` for exponential `X`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LengthMoments {
    pub mean: f64,
    pub second: f64,
}

impl LengthMoments {
    pub fn of(mean_size: f64) -> Self {
        let tail = |x: f64| (-x / mean_size).exp();
        let mut mean = 1.0 - tail(1.5);
        let mut second = mean;
        let mut k = 2.0f64;
        loop {
            let pk = tail(k - 0.5) - tail(k + 0.5);
            mean += k * pk;
            second += k * k * pk;
            if tail(k + 0.5) * (k + mean_size).powi(2) < 1e-16 {
                break;
            }
            k += 1.0;
        }
        LengthMoments { mean, second }
    }

    pub fn scv(&self) -> f64 {
        self.second / (self.mean * self.mean) - 1.0
    }
}

/// Measured statistics of one input queue over the measurement window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub router: Coord,
    pub port: Port,
    pub arrivals: u64,
    pub departures: u64,
    pub arrival_rate: f64,
    pub throughput: f64,
    pub mean_service_time: f64,
    pub utilization: f64,
    /// Time-average number of messages in the queue, including the one in service.
    pub mean_queue_length: f64,
    /// Mean time from arrival at the queue to the end of service.
    pub mean_response_time: f64,
}

impl ChannelStats {
    /// `|N - lambda T| / N`.
    pub fn little_residual(&self) -> f64 {
        let lt = self.arrival_rate * self.mean_response_time;
        (self.mean_queue_length - lt).abs() / self.mean_queue_length
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowStats {
    pub src: Coord,
    pub dst: Coord,
    pub messages: u64,
    pub mean_latency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub seed: u64,
    /// Core requests generated.
    pub requests: u64,
    /// All messages created, requests plus memory and reply messages.
    pub generated: u64,
    pub delivered: u64,
    pub in_flight: u64,
    /// Delivered messages created inside the measurement window.
    pub measured: u64,
    pub mean_latency: f64,
    pub ci95: f64,
    pub saturated: bool,
    /// Mean latency of the first and last thirds of measured messages.
    pub early_latency: f64,
    pub late_latency: f64,
    pub window_start: f64,
    pub window_end: f64,
    pub end_time: f64,
    pub mean_message_length: f64,
    pub channels: Vec<ChannelStats>,
    pub flows: Vec<FlowStats>,
}

impl SimStats {
    pub fn channel(&self, router: Coord, port: Port) -> Option<&ChannelStats> {
        self.channels
            .iter()
            .find(|c| c.router == router && c.port == port)
    }

    pub fn flow(&self, src: Coord, dst: Coord) -> Option<&FlowStats> {
        self.flows.iter().find(|f| f.src == src && f.dst == dst)
    }

    /// Arrival-weighted mean response time over the router's input queues.
    pub fn router_response_time(&self, router: Coord) -> Option<f64> {
        let (num, den) = self
            .channels
            .iter()
            .filter(|c| c.router == router && c.arrivals > 0)
            .fold((0.0, 0.0), |(n, d), c| {
                (
                    n + c.arrival_rate * c.mean_response_time,
                    d + c.arrival_rate,
                )
            });
        (den > 0.0).then(|| num / den)
    }

    /// `router_x,router_y,port,arrival_rate,throughput,service_time,utilization,queue_length,response_time`
    pub fn channel_csv(&self) -> String {
        let mut out = String::from(
            "router_x,router_y,port,arrival_rate,throughput,service_time,utilization,queue_length,response_time\n",
        );
        for c in &self.channels {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                c.router.x,
                c.router.y,
                c.port,
                c.arrival_rate,
                c.throughput,
                c.mean_service_time,
                c.utilization,
                c.mean_queue_length,
                c.mean_response_time
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rounded_length_moments() {
        let m = LengthMoments::of(10.0);
        // Closed form of the rounded mean: sum over k >= 1 of P(L >= k).
        let a = (-0.05f64).exp();
        let q = (-0.1f64).exp();
        let closed = 1.0 + a * q / (1.0 - q);
        assert_relative_eq!(m.mean, closed, max_relative = 1e-12);
        assert_relative_eq!(m.mean, 10.0446, max_relative = 1e-4);
        assert!((m.scv() - 1.0).abs() < 0.02);
    }

    #[test]
    fn config_validation() {
        let p = Placement::from_text("C$\n").unwrap();
        let ok = SimConfig::new(p.clone(), TrafficSpec::default());
        assert!(ok.validate().is_ok());
        for bad in [
            SimConfig {
                messages: 0,
                ..ok.clone()
            },
            SimConfig {
                mu: 0.0,
                ..ok.clone()
            },
            SimConfig {
                warmup: 1.0,
                ..ok.clone()
            },
            SimConfig::new(
                Placement::from_text("CC\n").unwrap(),
                TrafficSpec::default(),
            ),
            SimConfig::new(p.clone(), TrafficSpec::default().with_lambda(0.0)),
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        }
    }
}
