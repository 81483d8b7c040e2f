use anyhow::Result;
use noc_placement::mesh::Counts;
use noc_placement::optimizer::{
    exhaustive_search_with, local_search, two_phase_optimize_with, Prefilter, SearchOptions,
    SearchResult, SearchSpace, DEFAULT_BUDGET,
};
use noc_placement::queueing::packet_delay_inspector;
use noc_placement::sim::{
    compare_to_analytical, run_sim, summarize_sweep, sweep_latency, sweep_summary_csv,
    sweep_to_csv, SimConfig,
};
use noc_placement::*;

use crate::args::*;
use crate::manifest::Recorder;
use crate::UsageError;

const LOCAL_SEARCH_BUDGET: u64 = 10_000;

fn load_placement(rec: &mut Recorder, path: &std::path::Path) -> Result<Placement> {
    let text = rec.read_input(path)?;
    let p = if text.trim_start().starts_with('{') {
        Placement::from_json(&text)?
    } else {
        Placement::from_text(&text)?
    };
    Ok(p)
}

/// The given seed, or a fresh one announced on stderr.
fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s} (generated; pass --seed {s} to reproduce)");
        s
    })
}

fn json<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn sim_config(p: Placement, traffic: &TrafficArgs, sim: &SimArgs, seed: u64) -> SimConfig {
    SimConfig {
        mean_message_size: sim.mean_size,
        mu: sim.mu,
        messages: sim.messages,
        warmup: sim.warmup,
        seed,
        drain: !sim.no_drain,
        ..SimConfig::new(p, traffic.spec())
    }
}

pub fn count(a: &CountArgs, common: &Common) -> Result<()> {
    let rec = Recorder::new("count", a);
    let c = &a.counts;
    let space = SearchSpace::new(
        c.grid.0,
        Counts::new(c.cores, c.caches, c.mcs),
        Mode::LowTraffic,
    )?;
    let total = placement_count(c.grid.0.tiles(), c.cores, c.caches, c.mcs)?;
    let orbits = space.orbit_estimate()?;
    let group = space.group_size()?;
    match common.format {
        Format::Text => {
            println!("{total}");
            println!("about {orbits} after symmetry pruning ({group} symmetries)");
        }
        Format::Json => print!(
            "{}",
            json(&serde_json::json!({
                "count": total.to_string(),
                "orbit_estimate": orbits.to_string(),
                "symmetries": group,
            }))?
        ),
        Format::Csv => print!("count,orbit_estimate,symmetries\n{total},{orbits},{group}\n"),
    }
    rec.finish(common.manifest.as_deref())
}

pub fn place(a: &PlaceArgs, common: &Common) -> Result<()> {
    let mut rec = Recorder::new("place", a);
    let c = &a.counts;
    let p = canonical_placement(a.family, c.grid.0, c.cores, c.caches, c.mcs)?;
    let body = match common.format {
        Format::Json => json(&p)?,
        _ => p.to_text(),
    };
    match &a.out {
        Some(path) => rec.write_output(path, &body)?,
        None => print!("{body}"),
    }
    rec.finish(common.manifest.as_deref())
}

pub fn analyze(a: &AnalyzeArgs, common: &Common) -> Result<()> {
    let mut rec = Recorder::new("analyze", a);
    let p = load_placement(&mut rec, &a.placement)?;
    let t = a.spec();
    let mode = Mode::from(a.mode);
    let report = latency::objective(&p, &t, mode)?;
    if let Some(path) = &a.loads {
        let loads = derive_channel_rates(&build_flows(&p, &t)?, p.grid());
        rec.write_output(path, &loads.to_csv())?;
    }
    if a.routers.is_some() || a.flows.is_some() {
        let inspector = packet_delay_inspector(&p, &t)?;
        if let Some(path) = &a.routers {
            rec.write_output(path, &inspector.router_csv())?;
        }
        if let Some(path) = &a.flows {
            rec.write_output(path, &inspector.flow_csv())?;
        }
    }
    if let Some(path) = &a.out {
        rec.write_output(path, &json(&report)?)?;
    }
    match common.format {
        Format::Text => println!(
            "objective {:.6} ({} mode, {} cores, l2 {:.6}, memory {:.6})",
            report.objective,
            a.mode.name(),
            report.per_core.len(),
            report.l2_sum,
            report.mem_sum
        ),
        Format::Json => print!("{}", json(&report)?),
        Format::Csv => {
            println!("core_x,core_y,l2_term,mem_term,total");
            for c in &report.per_core {
                println!(
                    "{},{},{},{},{}",
                    c.core.x, c.core.y, c.l2_term, c.mem_term, c.total
                );
            }
        }
    }
    rec.finish(common.manifest.as_deref())
}

fn print_search(r: &SearchResult, format: Format) -> Result<()> {
    match format {
        Format::Text => {
            println!(
                "objective {:.6}: {} optimal placement(s), {} evaluated, {} pruned by symmetry",
                r.objective,
                r.best.len(),
                r.evaluated,
                r.pruned_by_symmetry
            );
            for p in &r.best {
                println!();
                print!("{}", p.to_text());
            }
        }
        Format::Json => print!("{}", json(r)?),
        Format::Csv => {
            println!("placement,objective");
            for p in &r.best {
                println!("{},{}", p.key(), r.objective);
            }
        }
    }
    Ok(())
}

pub fn optimize(a: &OptimizeArgs, common: &Common) -> Result<()> {
    let mut rec = Recorder::new("optimize", a);
    let c = &a.counts;
    let space = SearchSpace::new(
        c.grid.0,
        Counts::new(c.cores, c.caches, c.mcs),
        a.mode.into(),
    )?;
    let t = TrafficSpec {
        svc: noc_placement::queueing::ServiceSpec::from_rate(a.mu),
        ..a.traffic.spec()
    };
    let opts = SearchOptions {
        budget: a.budget.unwrap_or(DEFAULT_BUDGET),
        prefilter: (!a.exact).then(Prefilter::default),
        symmetry_pruning: true,
    };
    let result = match a.method {
        MethodArg::Exhaustive => exhaustive_search_with(&space, &t, &opts)?,
        MethodArg::TwoPhase => two_phase_optimize_with(&space, &t, &opts)?,
        MethodArg::Local => {
            let seed = resolve_seed(a.seed);
            rec.seed(seed);
            local_search(&space, &t, seed, a.budget.unwrap_or(LOCAL_SEARCH_BUDGET))?
        }
    };
    if let Some(path) = &a.out {
        rec.write_output(path, &json(&result)?)?;
    }
    print_search(&result, common.format)?;
    rec.finish(common.manifest.as_deref())
}

pub fn simulate(a: &SimulateArgs, common: &Common) -> Result<()> {
    let mut rec = Recorder::new("simulate", a);
    let p = load_placement(&mut rec, &a.placement)?;
    let seed = resolve_seed(a.sim.seed);
    rec.seed(seed);
    let stats = run_sim(&sim_config(p, &a.traffic, &a.sim, seed))?;
    if let Some(path) = &a.out {
        rec.write_output(path, &json(&stats)?)?;
    }
    if let Some(path) = &a.channels {
        rec.write_output(path, &stats.channel_csv())?;
    }
    match common.format {
        Format::Text => println!(
            "mean latency {:.4} +- {:.4} over {} messages (saturated: {})",
            stats.mean_latency, stats.ci95, stats.measured, stats.saturated
        ),
        Format::Json => print!("{}", json(&stats)?),
        Format::Csv => print!("{}", stats.channel_csv()),
    }
    rec.finish(common.manifest.as_deref())
}

pub fn sweep(a: &SweepArgs, common: &Common) -> Result<()> {
    let mut rec = Recorder::new("sweep", a);
    if a.seeds == 0 {
        return Err(UsageError("--seeds must be at least 1".into()).into());
    }
    if a.rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(UsageError("rates must be positive".into()).into());
    }
    let layouts = a
        .families
        .iter()
        .map(|&f| {
            Ok((
                f.to_string(),
                canonical_placement(f, a.grid.0, a.cores, a.caches, a.mcs)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let first = resolve_seed(a.sim.seed);
    let seeds: Vec<u64> = (0..a.seeds).map(|k| first.wrapping_add(k)).collect();
    for &s in &seeds {
        rec.seed(s);
    }
    let base = sim_config(layouts[0].1.clone(), &a.traffic, &a.sim, first);
    let rows = sweep_latency(&layouts, &a.rates, &seeds, &base)?;
    let cells = summarize_sweep(&rows);
    if let Some(path) = &a.out {
        rec.write_output(path, &sweep_to_csv(&rows))?;
    }
    if let Some(path) = &a.summary {
        rec.write_output(path, &sweep_summary_csv(&cells))?;
    }
    match common.format {
        Format::Text => {
            for &rate in &a.rates {
                let best = cells
                    .iter()
                    .filter(|c| c.lambda_g == rate)
                    .min_by(|x, y| x.mean_latency.total_cmp(&y.mean_latency))
                    .expect("every rate has cells");
                println!(
                    "lambda_g {rate}: best {} with mean latency {:.4} +- {:.4}{}",
                    best.family,
                    best.mean_latency,
                    best.ci95,
                    if best.saturated() { " (saturated)" } else { "" }
                );
            }
        }
        Format::Json => print!("{}", json(&cells)?),
        Format::Csv => print!("{}", sweep_summary_csv(&cells)),
    }
    rec.finish(common.manifest.as_deref())
}

pub fn compare(a: &CompareArgs, common: &Common) -> Result<()> {
    let mut rec = Recorder::new("compare", a);
    let p = load_placement(&mut rec, &a.placement)?;
    let seed = resolve_seed(a.sim.seed);
    rec.seed(seed);
    let cmp = compare_to_analytical(&sim_config(p, &a.traffic, &a.sim, seed))?;
    if let Some(path) = &a.out {
        rec.write_output(path, &cmp.to_csv())?;
    }
    match common.format {
        Format::Text => match (&cmp.analytical_error, cmp.max_rel_error, cmp.mean_rel_error) {
            (Some(reason), _, _) => println!(
                "analytical model unavailable ({reason}); simulated mean latency {:.4}",
                cmp.sim.mean_latency
            ),
            (None, Some(max), Some(mean)) => println!(
                "max relative error {max:.4}, mean {mean:.4} over {} channels",
                cmp.channels
                    .iter()
                    .filter(|d| d.rel_error.is_some())
                    .count()
            ),
            _ => println!("no loaded channels to compare"),
        },
        Format::Json => print!("{}", json(&cmp)?),
        Format::Csv => print!("{}", cmp.to_csv()),
    }
    rec.finish(common.manifest.as_deref())
}
