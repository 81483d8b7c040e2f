//! Property bodies shared by the proptest suite and the acceptance harness.

use noc_placement::latency::{objective_value, Terms};
use noc_placement::mesh::symmetries;
use noc_placement::queueing::packet_delay_inspector;
use noc_placement::sim::{run_sim, SimConfig};
use noc_placement::*;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

fn kind_of(code: u8) -> NodeKind {
    match code {
        0 => NodeKind::Core,
        1 => NodeKind::Cache,
        2 => NodeKind::MemController,
        _ => NodeKind::RouterOnly,
    }
}

/// Random placement on a grid up to 5x5 with at least one core and one cache.
pub fn placement() -> impl Strategy<Value = Placement> {
    (2usize..=5, 2usize..=5).prop_flat_map(|(w, h)| {
        proptest::collection::vec(0u8..4, w * h).prop_filter_map(
            "needs a core and a cache",
            move |codes| {
                let tiles: Vec<NodeKind> = codes.into_iter().map(kind_of).collect();
                let p = Placement::from_tiles(MeshGrid::new(w, h).unwrap(), tiles);
                let c = p.counts();
                (c.cores > 0 && c.caches > 0).then_some(p)
            },
        )
    })
}

pub fn small_sim_placement() -> impl Strategy<Value = Placement> {
    prop_oneof![
        Just(Placement::from_text("C$\n").unwrap()),
        Just(Placement::from_text("C.$\n").unwrap()),
        Just(Placement::from_text("C.C\n.$.\nC.C\n").unwrap()),
        Just(Placement::from_text("CC\n$C\n").unwrap()),
        Just(Placement::from_text("C$C\nC$C\n").unwrap()),
    ]
}

/// The objective is unchanged by every grid symmetry in low-traffic mode and by
/// the mirrors in high-traffic mode; transposes swap the XY routing order.
pub fn objective_symmetry(p: &Placement, miss: f64, high: bool) -> Result<(), TestCaseError> {
    let t = TrafficSpec {
        miss_l2: miss,
        lambda_g: 0.004,
        ..TrafficSpec::default()
    };
    let mode = if high {
        Mode::HighTraffic
    } else {
        Mode::LowTraffic
    };
    let Ok(base) = objective_value(p, &t, mode, Terms::Full) else {
        return Err(TestCaseError::reject("objective undefined"));
    };
    for sym in symmetries(p.grid())
        .into_iter()
        .filter(|s| !high || !s.transpose)
    {
        let v = objective_value(&p.transformed(sym), &t, mode, Terms::Full).unwrap();
        prop_assert!(
            (v - base).abs() <= 1e-9 * base.abs().max(1.0),
            "{} vs {}",
            v,
            base
        );
    }
    Ok(())
}

pub fn delay_monotone_in_rate(p: &Placement, lo: f64, step: f64) -> Result<(), TestCaseError> {
    let a = packet_delay_inspector(p, &TrafficSpec::default().with_lambda(lo));
    let b = packet_delay_inspector(p, &TrafficSpec::default().with_lambda(lo + step));
    let (Ok(a), Ok(b)) = (a, b) else {
        return Err(TestCaseError::reject("unstable"));
    };
    for (fa, fb) in a.flows.iter().zip(&b.flows) {
        prop_assert!(fb.delay >= fa.delay - 1e-12, "{} < {}", fb.delay, fa.delay);
    }
    prop_assert!(b.mean_flow_delay() >= a.mean_flow_delay() - 1e-12);
    Ok(())
}

pub fn sim_determinism(p: &Placement, seed: u64, lambda: f64) -> Result<(), TestCaseError> {
    let cfg = SimConfig {
        messages: 2_000,
        seed,
        ..SimConfig::new(p.clone(), TrafficSpec::default().with_lambda(lambda))
    };
    prop_assert_eq!(run_sim(&cfg).unwrap(), run_sim(&cfg).unwrap());
    Ok(())
}

pub fn little_law(p: &Placement, seed: u64, lambda: f64) -> Result<(), TestCaseError> {
    let cfg = SimConfig {
        messages: 20_000,
        seed,
        ..SimConfig::new(p.clone(), TrafficSpec::default().with_lambda(lambda))
    };
    let s = run_sim(&cfg).unwrap();
    if s.saturated {
        return Err(TestCaseError::reject("saturated"));
    }
    prop_assert_eq!(s.generated, s.delivered + s.in_flight);
    for c in s.channels.iter().filter(|c| c.arrivals >= 200) {
        prop_assert!(c.utilization <= 1.0 + 1e-9);
        prop_assert!(c.little_residual() <= 0.05, "{:?}", c);
    }
    Ok(())
}
