mod common;

use common::{naive_optimum, random_instances};
use noc_placement::mesh::Counts;
use noc_placement::optimizer::{
    exhaustive_search, exhaustive_search_with, local_search, two_phase_optimize, SearchOptions,
    SearchSpace,
};
use noc_placement::*;

fn traffic(miss_l2: f64) -> TrafficSpec {
    TrafficSpec {
        miss_l2,
        ..TrafficSpec::default()
    }
}

#[test]
fn pruned_search_matches_naive_enumeration() {
    for inst in random_instances(17, 24, 9, 5_000.0) {
        let s = SearchSpace::new(inst.grid, inst.counts, Mode::LowTraffic).unwrap();
        let t = traffic(inst.miss_l2);
        let r = exhaustive_search(&s, &t).unwrap();
        let (naive, seen) = naive_optimum(inst.grid, inst.counts, inst.miss_l2);
        assert_eq!(s.raw_count().unwrap(), (seen as u64).into(), "{inst:?}");
        assert!(
            (r.objective - naive).abs() <= 1e-9 * naive.max(1.0),
            "{inst:?}: {} vs {naive}",
            r.objective
        );
        for p in &r.best {
            let v = latency::objective(p, &t, Mode::LowTraffic)
                .unwrap()
                .objective;
            assert!((v - r.objective).abs() <= 1e-9 * r.objective.max(1.0));
        }
    }
}

#[test]
fn pruning_is_lossless_on_random_instances() {
    for inst in random_instances(23, 12, 9, 5_000.0) {
        for mode in [Mode::LowTraffic, Mode::HighTraffic] {
            let s = SearchSpace::new(inst.grid, inst.counts, mode).unwrap();
            let t = traffic(inst.miss_l2).with_lambda(0.01);
            let unpruned = SearchOptions {
                symmetry_pruning: false,
                ..SearchOptions::exact()
            };
            let a = exhaustive_search_with(&s, &t, &SearchOptions::exact()).unwrap();
            let b = exhaustive_search_with(&s, &t, &unpruned).unwrap();
            assert!(
                (a.objective - b.objective).abs() <= 1e-9 * b.objective,
                "{inst:?} {mode:?}"
            );
            assert_eq!(a.best, b.best, "{inst:?} {mode:?}");
        }
    }
}

#[test]
fn local_search_never_beats_exhaustive() {
    let mut gaps = Vec::new();
    for inst in random_instances(29, 16, 9, 5_000.0) {
        let s = SearchSpace::new(inst.grid, inst.counts, Mode::LowTraffic).unwrap();
        let t = traffic(inst.miss_l2);
        let exact = exhaustive_search(&s, &t).unwrap().objective;
        let local = local_search(&s, &t, 5, 2_000).unwrap().objective;
        assert!(local >= exact - 1e-9 * exact.max(1.0), "{inst:?}");
        gaps.push((local - exact) / exact.max(1e-12));
    }
    let worst = gaps.iter().copied().fold(0.0, f64::max);
    println!("local search worst relative gap {worst:.4}");
    assert!(worst < 1e-9, "local search missed an optimum by {worst}");
}

#[test]
fn two_phase_is_never_better_than_joint() {
    for inst in random_instances(31, 16, 9, 5_000.0) {
        let s = SearchSpace::new(inst.grid, inst.counts, Mode::LowTraffic).unwrap();
        let t = traffic(inst.miss_l2);
        let joint = exhaustive_search(&s, &t).unwrap().objective;
        let split = two_phase_optimize(&s, &t).unwrap().objective;
        assert!(split >= joint - 1e-9 * joint.max(1.0), "{inst:?}");
    }
}

#[test]
fn two_phase_is_exact_when_memory_traffic_vanishes() {
    for inst in random_instances(37, 16, 9, 100_000.0) {
        let s = SearchSpace::new(inst.grid, inst.counts, Mode::LowTraffic).unwrap();
        let t = traffic(0.0);
        let joint = exhaustive_search(&s, &t).unwrap();
        let split = two_phase_optimize(&s, &t).unwrap();
        assert_eq!(split.objective, joint.objective, "{inst:?}");
    }
}

/// A heavy L2 miss stream pulls the cache toward the controller, which the
/// cache-only first phase cannot see.
#[test]
fn two_phase_loses_to_joint_under_heavy_misses() {
    let s = SearchSpace::new(
        MeshGrid::square(4).unwrap(),
        Counts::new(4, 1, 1),
        Mode::LowTraffic,
    )
    .unwrap();
    let light = traffic(0.1);
    assert_eq!(
        two_phase_optimize(&s, &light).unwrap().objective,
        exhaustive_search(&s, &light).unwrap().objective
    );
    let heavy = traffic(0.45);
    let joint = exhaustive_search(&s, &heavy).unwrap().objective;
    let split = two_phase_optimize(&s, &heavy).unwrap().objective;
    assert!(split > joint + 1e-9, "{split} vs {joint}");
}
