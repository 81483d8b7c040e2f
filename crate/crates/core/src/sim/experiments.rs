use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_sim, SimConfig, SimStats};
use crate::error::{Error, Result};
use crate::mesh::{Coord, Placement};
use crate::queueing::packet_delay_inspector;
use crate::routing::Port;
use crate::stats::{ci95_half_width, mean};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub family: String,
    pub lambda_g: f64,
    pub seed: u64,
    pub mean_latency: f64,
    pub ci95: f64,
    pub saturated: bool,
}

/// Runs every (placement, rate, seed) combination. Rows come back ordered by
/// placement, then rate, then seed, whatever the worker count.
pub fn sweep_latency(
    cfgs: &[(String, Placement)],
    rates: &[f64],
    seeds: &[u64],
    base: &SimConfig,
) -> Result<Vec<SweepRow>> {
    if let Some((_, first)) = cfgs.first() {
        if cfgs.iter().any(|(_, p)| p.grid() != first.grid()) {
            return Err(Error::InvalidConfig(
                "swept placements must share one grid".into(),
            ));
        }
    }
    let jobs: Vec<(usize, usize, usize)> = (0..cfgs.len())
        .flat_map(|i| (0..rates.len()).flat_map(move |r| (0..seeds.len()).map(move |s| (i, r, s))))
        .collect();
    jobs.par_iter()
        .map(|&(i, r, s)| {
            let (family, placement) = &cfgs[i];
            let cfg = SimConfig {
                placement: placement.clone(),
                traffic: base.traffic.with_lambda(rates[r]),
                seed: seeds[s],
                ..base.clone()
            };
            let stats = run_sim(&cfg)?;
            Ok(SweepRow {
                family: family.clone(),
                lambda_g: rates[r],
                seed: seeds[s],
                mean_latency: stats.mean_latency,
                ci95: stats.ci95,
                saturated: stats.saturated,
            })
        })
        .collect()
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("family,lambda_g,seed,mean_latency,ci95,saturated\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.family, r.lambda_g, r.seed, r.mean_latency, r.ci95, r.saturated
        ));
    }
    out
}

/// Seed-aggregated cell of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub family: String,
    pub lambda_g: f64,
    pub mean_interarrival: f64,
    pub seeds: usize,
    pub mean_latency: f64,
    /// Student-t 95% half-width across seed means.
    pub ci95: f64,
    pub saturated_seeds: usize,
}

impl SweepCell {
    /// Saturated in a majority of seeds.
    pub fn saturated(&self) -> bool {
        2 * self.saturated_seeds > self.seeds
    }

    pub fn low(&self) -> f64 {
        self.mean_latency - self.ci95
    }

    pub fn high(&self) -> f64 {
        self.mean_latency + self.ci95
    }
}

pub fn summarize_sweep(rows: &[SweepRow]) -> Vec<SweepCell> {
    let mut cells: Vec<SweepCell> = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let (family, rate) = (&rows[i].family, rows[i].lambda_g);
        let group: Vec<&SweepRow> = rows[i..]
            .iter()
            .take_while(|r| &r.family == family && r.lambda_g == rate)
            .collect();
        let means: Vec<f64> = group.iter().map(|r| r.mean_latency).collect();
        cells.push(SweepCell {
            family: family.clone(),
            lambda_g: rate,
            mean_interarrival: 1.0 / rate,
            seeds: group.len(),
            mean_latency: mean(&means),
            ci95: ci95_half_width(&means),
            saturated_seeds: group.iter().filter(|r| r.saturated).count(),
        });
        i += group.len();
    }
    cells
}

pub fn sweep_summary_csv(cells: &[SweepCell]) -> String {
    let mut out =
        String::from("family,lambda_g,mean_interarrival,seeds,mean_latency,ci95,saturated_seeds\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.family,
            c.lambda_g,
            c.mean_interarrival,
            c.seeds,
            c.mean_latency,
            c.ci95,
            c.saturated_seeds
        ));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelDelta {
    pub router: Coord,
    pub port: Port,
    pub sim_arrival_rate: f64,
    pub model_arrival_rate: Option<f64>,
    pub sim_rt: f64,
    pub model_rt: Option<f64>,
    pub rel_error: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowDelta {
    pub src: Coord,
    pub dst: Coord,
    pub sim_latency: f64,
    pub model_delay: Option<f64>,
    pub rel_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub channels: Vec<ChannelDelta>,
    pub flows: Vec<FlowDelta>,
    pub max_rel_error: Option<f64>,
    pub mean_rel_error: Option<f64>,
    pub flow_max_rel_error: Option<f64>,
    pub flow_mean_rel_error: Option<f64>,
    /// Why the analytical side is unavailable, when it is.
    pub analytical_error: Option<String>,
    pub sim: SimStats,
}

fn summary(errors: impl Iterator<Item = f64>) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = errors.collect();
    if v.is_empty() {
        (None, None)
    } else {
        (Some(v.iter().copied().fold(0.0, f64::max)), Some(mean(&v)))
    }
}

impl Comparison {
    /// `router_x,router_y,port,sim_lambda,model_lambda,sim_rt,model_rt,rel_error`,
    /// with `NA` where the model has no value.
    pub fn to_csv(&self) -> String {
        let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        let mut out = String::from(
            "router_x,router_y,port,sim_lambda,model_lambda,sim_rt,model_rt,rel_error\n",
        );
        for d in &self.channels {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                d.router.x,
                d.router.y,
                d.port,
                d.sim_arrival_rate,
                na(d.model_arrival_rate),
                d.sim_rt,
                na(d.model_rt),
                na(d.rel_error)
            ));
        }
        out
    }
}

/// Simulates `cfg` and sets each loaded input queue and flow against the
/// analytical model evaluated with the simulator's service-time distribution.
pub fn compare_to_analytical(cfg: &SimConfig) -> Result<Comparison> {
    let sim = run_sim(cfg)?;
    let t = cfg.analytical_traffic();
    let (report, analytical_error) = match packet_delay_inspector(&cfg.placement, &t) {
        Ok(r) => (Some(r), None),
        Err(e @ (Error::Unstable(_) | Error::NonConvergent { .. })) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let channels: Vec<ChannelDelta> = sim
        .channels
        .iter()
        .filter(|c| c.arrivals > 0)
        .map(|c| {
            let model = report.as_ref().map(|r| {
                let m = r.router(c.router);
                (m.arrival[c.port.index()], m.rt[c.port.index()])
            });
            let model_rt = model.filter(|(l, _)| *l > 0.0).map(|(_, rt)| rt);
            ChannelDelta {
                router: c.router,
                port: c.port,
                sim_arrival_rate: c.arrival_rate,
                model_arrival_rate: model.map(|(l, _)| l),
                sim_rt: c.mean_response_time,
                model_rt,
                rel_error: model_rt.map(|m| (c.mean_response_time - m).abs() / m),
            }
        })
        .collect();
    let flows: Vec<FlowDelta> = sim
        .flows
        .iter()
        .map(|f| {
            let model_delay = report.as_ref().and_then(|r| {
                r.flows
                    .iter()
                    .find(|d| d.flow.src == f.src && d.flow.dst == f.dst)
                    .map(|d| d.delay)
            });
            FlowDelta {
                src: f.src,
                dst: f.dst,
                sim_latency: f.mean_latency,
                model_delay,
                rel_error: model_delay.map(|m| (f.mean_latency - m).abs() / m),
            }
        })
        .collect();
    let (max_rel_error, mean_rel_error) = summary(channels.iter().filter_map(|d| d.rel_error));
    let (flow_max_rel_error, flow_mean_rel_error) =
        summary(flows.iter().filter_map(|d| d.rel_error));
    Ok(Comparison {
        channels,
        flows,
        max_rel_error,
        mean_rel_error,
        flow_max_rel_error,
        flow_mean_rel_error,
        analytical_error,
        sim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::TrafficSpec;

    fn base() -> SimConfig {
        SimConfig {
            messages: 2_000,
            ..SimConfig::new(
                Placement::from_text("C$\n").unwrap(),
                TrafficSpec::default(),
            )
        }
    }

    #[test]
    fn single_cell_sweep_equals_run() {
        let p = Placement::from_text("C.$\n").unwrap();
        let rows = sweep_latency(&[("line".into(), p.clone())], &[0.02], &[5], &base()).unwrap();
        assert_eq!(rows.len(), 1);
        let direct = run_sim(&SimConfig {
            placement: p,
            traffic: TrafficSpec::default().with_lambda(0.02),
            seed: 5,
            ..base()
        })
        .unwrap();
        assert_eq!(rows[0].mean_latency, direct.mean_latency);
        assert!(
            sweep_to_csv(&rows).starts_with("family,lambda_g,seed,mean_latency,ci95,saturated\n")
        );
    }

    #[test]
    fn sweep_order_and_summary() {
        let a = Placement::from_text("C$\n").unwrap();
        let b = Placement::from_text("$C\n").unwrap();
        let cfgs = vec![("a".to_string(), a), ("b".to_string(), b)];
        let rows = sweep_latency(&cfgs, &[0.01, 0.02], &[1, 2, 3], &base()).unwrap();
        let keys: Vec<(String, f64, u64)> = rows
            .iter()
            .map(|r| (r.family.clone(), r.lambda_g, r.seed))
            .collect();
        assert_eq!(keys[0], ("a".to_string(), 0.01, 1));
        assert_eq!(keys[5], ("a".to_string(), 0.02, 3));
        assert_eq!(keys[11], ("b".to_string(), 0.02, 3));
        let cells = summarize_sweep(&rows);
        assert_eq!(cells.len(), 4);
        assert!(cells
            .iter()
            .all(|c| c.seeds == 3 && c.mean_interarrival == 1.0 / c.lambda_g));
    }

    #[test]
    fn sweep_rejects_mixed_grids() {
        let cfgs = vec![
            ("a".to_string(), Placement::from_text("C$\n").unwrap()),
            ("b".to_string(), Placement::from_text("C.$\n").unwrap()),
        ];
        assert!(sweep_latency(&cfgs, &[0.01], &[1], &base()).is_err());
    }

    #[test]
    fn unstable_model_still_reports_simulation() {
        let cfg = SimConfig {
            traffic: TrafficSpec::default().with_lambda(0.2),
            ..base()
        };
        let c = compare_to_analytical(&cfg).unwrap();
        assert!(c.analytical_error.is_some());
        assert!(c.channels.iter().all(|d| d.model_rt.is_none()));
        assert!(c.to_csv().contains("NA"));
    }
}
