//! Independent oracles shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

pub mod props;

use std::collections::HashMap;

use noc_placement::mesh::Counts;
use noc_placement::{Coord, MeshGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Kind codes used by the brute-force enumerators.
pub const CORE: u8 = 0;
pub const CACHE: u8 = 1;
pub const MC: u8 = 2;
pub const EMPTY: u8 = 3;

fn dist(a: (usize, usize), b: (usize, usize)) -> f64 {
    (a.0.abs_diff(b.0) + a.1.abs_diff(b.1)) as f64
}

/// Every assignment of the four kinds to `n` tiles, as base-4 digit vectors.
pub fn all_codes(n: usize) -> impl Iterator<Item = Vec<u8>> {
    (0..4u64.pow(n as u32)).map(move |mut v| {
        (0..n)
            .map(|_| {
                let d = (v % 4) as u8;
                v /= 4;
                d
            })
            .collect()
    })
}

/// Tally of `all_codes(n)` by (cores, caches, mcs).
pub fn tally_counts(n: usize) -> HashMap<(usize, usize, usize), u64> {
    let mut out = HashMap::new();
    for code in all_codes(n) {
        let c = |k| code.iter().filter(|&&d| d == k).count();
        *out.entry((c(CORE), c(CACHE), c(MC))).or_insert(0) += 1;
    }
    out
}

/// Hop-count objective with uniform cache access, every request missing L1,
/// and each cache sending misses to its nearest controller.
pub fn hop_objective(w: usize, code: &[u8], miss_l2: f64) -> f64 {
    let at = |k: u8| -> Vec<(usize, usize)> {
        code.iter()
            .enumerate()
            .filter(|(_, &d)| d == k)
            .map(|(i, _)| (i % w, i / w))
            .collect()
    };
    let (cores, caches, mcs) = (at(CORE), at(CACHE), at(MC));
    let nh = caches.len() as f64;
    let to_mem: f64 = if miss_l2 > 0.0 {
        caches
            .iter()
            .map(|&h| {
                mcs.iter()
                    .map(|&m| dist(h, m))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / nh
    } else {
        0.0
    };
    cores
        .iter()
        .map(|&c| caches.iter().map(|&h| dist(c, h)).sum::<f64>() / nh + miss_l2 * to_mem)
        .sum()
}

/// Minimum of [`hop_objective`] over every placement with the given counts.
pub fn naive_optimum(grid: MeshGrid, counts: Counts, miss_l2: f64) -> (f64, usize) {
    let mut best = f64::INFINITY;
    let mut seen = 0;
    for code in all_codes(grid.tiles()) {
        let c = |k| code.iter().filter(|&&d| d == k).count();
        if (c(CORE), c(CACHE), c(MC)) != (counts.cores, counts.caches, counts.mcs) {
            continue;
        }
        seen += 1;
        best = best.min(hop_objective(grid.width, &code, miss_l2));
    }
    (best, seen)
}

#[derive(Clone, Copy, Debug)]
pub struct Instance {
    pub grid: MeshGrid,
    pub counts: Counts,
    pub miss_l2: f64,
}

fn multinomial(n: usize, parts: &[usize]) -> f64 {
    let lf = |k: usize| (1..=k).map(|i| (i as f64).ln()).sum::<f64>();
    (lf(n) - parts.iter().map(|&p| lf(p)).sum::<f64>())
        .exp()
        .round()
}

/// Reproducible random instances on grids of at most `max_tiles` tiles whose raw
/// placement count is at most `max_raw`.
pub fn random_instances(seed: u64, n: usize, max_tiles: usize, max_raw: f64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < n {
        let w = rng.random_range(1..=4);
        let h = rng.random_range(2..=4);
        let tiles = w * h;
        if tiles > max_tiles {
            continue;
        }
        let cores = rng.random_range(1..tiles);
        let caches = rng.random_range(1..=tiles - cores);
        let mcs = rng.random_range(0..=(tiles - cores - caches).min(2));
        let rest = tiles - cores - caches - mcs;
        if multinomial(tiles, &[cores, caches, mcs, rest]) > max_raw {
            continue;
        }
        let miss_l2 = if mcs > 0 {
            rng.random_range(0.05..0.5)
        } else {
            0.0
        };
        out.push(Instance {
            grid: MeshGrid::new(w, h).unwrap(),
            counts: Counts::new(cores, caches, mcs),
            miss_l2,
        });
    }
    out
}

pub fn diagonal(n: usize) -> Vec<Coord> {
    (0..n).map(|i| Coord::new(i, i)).collect()
}
