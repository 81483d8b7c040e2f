//! Expected per-core access latency of a placement, in the low-traffic (hop
//! distance) and high-traffic (router response time) regimes.
//!
//! Per core, `total = latency_l1 + l2_term * miss_l1 + mem_term * miss_l1 * miss_l2`,
//! and the placement objective is the sum of totals over all cores. Both regimes
//! report time: the low-traffic model charges one mean service time per hop, and the
//! high-traffic model charges the modeled response time of the input channel entered
//! at each hop after the source router.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{manhattan, Coord, Placement};
use crate::queueing::{packet_delay_inspector, InspectorReport};
use crate::routing::mc_assignment;
use crate::traffic::TrafficSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "low")]
    LowTraffic,
    #[serde(rename = "high")]
    HighTraffic,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Mode::LowTraffic),
            "high" => Ok(Mode::HighTraffic),
            _ => Err(Error::Parse(format!(
                "unknown mode `{s}` (expected low or high)"
            ))),
        }
    }
}

/// Which part of the objective to minimize.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Terms {
    /// Sum of per-core totals.
    Full,
    /// Sum of per-core L2 terms (cores and caches only).
    CacheOnly,
    /// Sum of per-core memory terms (memory controllers given the caches).
    MemoryOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreLatency {
    pub core: Coord,
    pub l2_term: f64,
    pub mem_term: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub mode: Mode,
    pub per_core: Vec<CoreLatency>,
    pub l2_sum: f64,
    pub mem_sum: f64,
    pub objective: f64,
    pub traffic: TrafficSpec,
}

fn core_index(core: Coord, p: &Placement) -> Result<usize> {
    p.cores()
        .iter()
        .position(|c| *c == core)
        .ok_or_else(|| Error::InvalidTraffic(format!("tile {core} is not a core")))
}

/// Expected hop distance from `core` to the cache serving a request.
pub fn low_traffic_l2_latency(core: Coord, p: &Placement, t: &TrafficSpec) -> Result<f64> {
    t.validate(p)?;
    let caches = p.caches();
    if caches.is_empty() {
        return Err(Error::NoCaches);
    }
    let i = core_index(core, p)?;
    Ok(caches
        .iter()
        .enumerate()
        .map(|(j, &cache)| t.access(i, j, caches.len()) * manhattan(core, cache) as f64)
        .sum())
}

/// Expected hop distance from the serving cache to its memory controller, for
/// requests issued by `core`. Excludes the fixed off-chip time.
pub fn low_traffic_mem_latency(core: Coord, p: &Placement, t: &TrafficSpec) -> Result<f64> {
    t.validate(p)?;
    let caches = p.caches();
    if caches.is_empty() {
        return Err(Error::NoCaches);
    }
    let mcs = p.mcs();
    if mcs.is_empty() {
        return Err(Error::NoMemControllers);
    }
    let i = core_index(core, p)?;
    let assignment = mc_assignment(p);
    Ok(caches
        .iter()
        .enumerate()
        .map(|(j, &cache)| {
            let per_cache: f64 = assignment[j]
                .iter()
                .map(|&(k, share)| share * manhattan(cache, mcs[k]) as f64)
                .sum();
            t.access(i, j, caches.len()) * per_cache
        })
        .sum())
}

struct PathCost<'a> {
    mode: Mode,
    hop: f64,
    report: Option<&'a InspectorReport>,
}

impl PathCost<'_> {
    fn between(&self, a: Coord, b: Coord) -> f64 {
        match (self.mode, self.report) {
            (Mode::HighTraffic, Some(r)) => r.path_time(a, b, false),
            _ => manhattan(a, b) as f64 * self.hop,
        }
    }
}

/// Per-core `(core, l2_term, mem_term)`. Memory terms are zero when they are not
/// needed and the placement has no controllers.
fn core_terms(
    p: &Placement,
    t: &TrafficSpec,
    mode: Mode,
    terms: Terms,
) -> Result<Vec<(Coord, f64, f64)>> {
    t.validate(p)?;
    let cores = p.cores();
    let caches = p.caches();
    let mcs = p.mcs();
    if caches.is_empty() {
        return Err(Error::NoCaches);
    }
    let mem_needed = match terms {
        Terms::Full => t.miss_l2 > 0.0,
        Terms::MemoryOnly => true,
        Terms::CacheOnly => false,
    };
    if mem_needed && mcs.is_empty() {
        return Err(Error::NoMemControllers);
    }
    let report = match mode {
        Mode::HighTraffic => Some(packet_delay_inspector(p, t)?),
        Mode::LowTraffic => None,
    };
    let cost = PathCost {
        mode,
        hop: t.svc.mean,
        report: report.as_ref(),
    };
    let n_caches = caches.len();
    let cache_mem: Vec<f64> = if mcs.is_empty() {
        vec![0.0; n_caches]
    } else {
        mc_assignment(p)
            .iter()
            .zip(&caches)
            .map(|(shares, &cache)| {
                shares
                    .iter()
                    .map(|&(k, share)| share * cost.between(cache, mcs[k]))
                    .sum::<f64>()
                    + t.mem_fixed_latency
            })
            .collect()
    };
    let cache_only = terms == Terms::CacheOnly;
    let memory_only = terms == Terms::MemoryOnly;
    Ok(cores
        .iter()
        .enumerate()
        .map(|(i, &core)| {
            let mut l2 = 0.0;
            let mut mem = 0.0;
            for (j, &cache) in caches.iter().enumerate() {
                let pij = t.access(i, j, n_caches);
                if pij == 0.0 {
                    continue;
                }
                if !memory_only {
                    l2 += pij * cost.between(core, cache);
                }
                if !cache_only {
                    mem += pij * cache_mem[j];
                }
            }
            (core, l2, mem)
        })
        .collect())
}

/// Scalar objective for search: the sum selected by `terms`.
pub fn objective_value(p: &Placement, t: &TrafficSpec, mode: Mode, terms: Terms) -> Result<f64> {
    let per_core = core_terms(p, t, mode, terms)?;
    Ok(match terms {
        Terms::Full => sum(per_core.iter().map(|&(_, l2, mem)| total(t, l2, mem))),
        Terms::CacheOnly => sum(per_core.iter().map(|&(_, l2, _)| l2)),
        Terms::MemoryOnly => sum(per_core.iter().map(|&(_, _, mem)| mem)),
    })
}

/// Empty sums are +0 rather than -0.
fn sum(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, |a, b| a + b)
}

fn total(t: &TrafficSpec, l2: f64, mem: f64) -> f64 {
    let m1 = t.miss_l1();
    t.latency_l1 + l2 * m1 + mem * m1 * t.miss_l2
}

/// Full latency report of a placement.
pub fn objective(p: &Placement, t: &TrafficSpec, mode: Mode) -> Result<LatencyReport> {
    let per_core: Vec<CoreLatency> = core_terms(p, t, mode, Terms::Full)?
        .into_iter()
        .map(|(core, l2_term, mem_term)| CoreLatency {
            core,
            l2_term,
            mem_term,
            total: total(t, l2_term, mem_term),
        })
        .collect();
    Ok(LatencyReport {
        mode,
        l2_sum: sum(per_core.iter().map(|c| c.l2_term)),
        mem_sum: sum(per_core.iter().map(|c| c.mem_term)),
        objective: sum(per_core.iter().map(|c| c.total)),
        per_core,
        traffic: t.clone(),
    })
}
