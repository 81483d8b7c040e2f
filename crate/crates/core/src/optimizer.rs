//! Placement search: exhaustive enumeration over symmetry orbits, a two-phase
//! decomposition (cores and caches first, then memory controllers), and seeded
//! steepest-descent local search over tile swaps.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canonical::{canonical_placement, CanonicalFamily};
use crate::error::{Error, Result};
use crate::latency::{objective_value, Mode, Terms};
use crate::mesh::{symmetries, Coord, Counts, MeshGrid, NodeKind, Placement};
use crate::traffic::TrafficSpec;

/// Default cap on the number of evaluated orbit representatives.
pub const DEFAULT_BUDGET: u64 = 10_000_000;
/// Relative tolerance under which two objective values are tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Minimum number of prefix subtrees handed to the worker pool.
const MIN_PREFIXES: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exhaustive,
    TwoPhase,
    LocalSearch,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exhaustive" => Ok(Method::Exhaustive),
            "two-phase" => Ok(Method::TwoPhase),
            "local" | "local-search" => Ok(Method::LocalSearch),
            _ => Err(Error::Parse(format!(
                "unknown method `{s}` (expected exhaustive, two-phase or local)"
            ))),
        }
    }
}

/// The set of placements searched: fixed counts on a grid, optionally with
/// pinned tiles and a restricted set of tiles that may hold memory controllers.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    pub grid: MeshGrid,
    pub counts: Counts,
    pub fixed: Vec<(Coord, NodeKind)>,
    pub mc_sites: Option<Vec<Coord>>,
    pub mode: Mode,
}

impl SearchSpace {
    pub fn new(grid: MeshGrid, counts: Counts, mode: Mode) -> Result<Self> {
        let s = SearchSpace {
            grid,
            counts,
            fixed: Vec::new(),
            mc_sites: None,
            mode,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_fixed(mut self, fixed: Vec<(Coord, NodeKind)>) -> Result<Self> {
        self.fixed = fixed;
        self.validate()?;
        Ok(self)
    }

    pub fn with_mc_sites(mut self, sites: Vec<Coord>) -> Result<Self> {
        self.mc_sites = Some(sites);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        Layout::new(self, 0).map(|_| ())
    }

    /// Exact number of placements in the space.
    pub fn raw_count(&self) -> Result<BigUint> {
        let layout = Layout::new(self, 0)?;
        let free = layout.slots.len();
        let sites = layout.mc_ok.iter().filter(|&&ok| ok).count();
        let [a, b, m] = layout.need;
        Ok(binomial(sites, m) * multinomial(free - m, &[a, b, free - m - a - b]))
    }

    /// Symmetries of the grid that map the constraints onto themselves.
    pub fn group_size(&self) -> Result<usize> {
        Ok(Layout::new(self, 0)?.group.len() + 1)
    }

    pub fn orbit_estimate(&self) -> Result<BigUint> {
        let g = BigUint::from(self.group_size()?);
        Ok((self.raw_count()? + &g - 1u32) / g)
    }

    fn base_traffic_check(&self, t: &TrafficSpec) -> Result<()> {
        let mut tiles = vec![NodeKind::RouterOnly; self.grid.tiles()];
        let kinds = std::iter::repeat_n(NodeKind::Core, self.counts.cores)
            .chain(std::iter::repeat_n(NodeKind::Cache, self.counts.caches))
            .chain(std::iter::repeat_n(
                NodeKind::MemController,
                self.counts.mcs,
            ));
        for (slot, k) in tiles.iter_mut().zip(kinds) {
            *slot = k;
        }
        t.validate(&Placement::from_tiles(self.grid, tiles))
    }
}

fn factorial(n: usize) -> BigUint {
    (1..=n as u64).fold(BigUint::from(1u32), |acc, k| acc * k)
}

fn binomial(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::from(0u32);
    }
    factorial(n) / (factorial(k) * factorial(n - k))
}

fn multinomial(n: usize, parts: &[usize]) -> BigUint {
    parts
        .iter()
        .fold(factorial(n), |acc, &p| acc / factorial(p))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prefilter {
    /// Fraction of orbit representatives kept by the hop-count pass.
    pub fraction: f64,
    pub min_keep: usize,
}

impl Default for Prefilter {
    fn default() -> Self {
        Prefilter {
            fraction: 0.05,
            min_keep: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOptions {
    pub budget: u64,
    /// High-traffic searches first rank candidates by the hop-count objective and
    /// run the queueing model on the best of them only. `None` evaluates every
    /// candidate with the queueing model.
    pub prefilter: Option<Prefilter>,
    pub symmetry_pruning: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            budget: DEFAULT_BUDGET,
            prefilter: Some(Prefilter::default()),
            symmetry_pruning: true,
        }
    }
}

impl SearchOptions {
    pub fn exact() -> Self {
        SearchOptions {
            prefilter: None,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseObjectives {
    /// Summed L2 terms of the first phase.
    pub cache: f64,
    /// Summed memory terms of the second phase.
    pub memory: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub method: Method,
    pub mode: Mode,
    /// Every optimal placement found, sorted by key.
    pub best: Vec<Placement>,
    pub objective: f64,
    pub evaluated: u64,
    pub pruned_by_symmetry: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_objectives: Option<PhaseObjectives>,
}

fn rank(k: NodeKind) -> u8 {
    k.symbol() as u8
}

fn cmp_tiles(a: &[NodeKind], b: &[NodeKind]) -> Ordering {
    a.iter().map(|&k| rank(k)).cmp(b.iter().map(|&k| rank(k)))
}

fn tied(v: f64, best: f64) -> bool {
    v.is_finite() && v <= best + TIE_TOLERANCE * best.abs()
}

/// Kinds in key order, with their slot in the remaining-count array.
const ORDER: [(NodeKind, usize); 4] = [
    (NodeKind::Cache, 1),
    (NodeKind::RouterOnly, 3),
    (NodeKind::Core, 0),
    (NodeKind::MemController, 2),
];

#[derive(Clone, Copy, Debug)]
struct State {
    /// Remaining cores, caches, controllers and empty tiles.
    rem: [usize; 4],
    /// Controller-capable slots left empty so far.
    room: usize,
}

/// Precomputed enumeration structure of a search space.
struct Layout {
    grid: MeshGrid,
    base: Vec<NodeKind>,
    slots: Vec<usize>,
    mc_ok: Vec<bool>,
    mc_suffix: Vec<usize>,
    need: [usize; 3],
    /// Inverse tile maps of the non-identity constraint-preserving symmetries.
    group: Vec<Vec<usize>>,
    /// Controller-capable tiles that must stay empty (two-phase first phase).
    reserve: usize,
}

impl Layout {
    fn new(s: &SearchSpace, reserve: usize) -> Result<Self> {
        let grid = s.grid;
        let n = grid.tiles();
        let mut pinned: Vec<Option<NodeKind>> = vec![None; n];
        for &(c, k) in &s.fixed {
            if !grid.contains(c) {
                return Err(Error::OutOfBounds {
                    x: c.x,
                    y: c.y,
                    width: grid.width,
                    height: grid.height,
                });
            }
            let slot = &mut pinned[grid.index(c)];
            if slot.is_some() {
                return Err(Error::Infeasible(format!("tile {c} is pinned twice")));
            }
            *slot = Some(k);
        }
        let mut site = vec![s.mc_sites.is_none(); n];
        if let Some(sites) = &s.mc_sites {
            for &c in sites {
                if !grid.contains(c) {
                    return Err(Error::OutOfBounds {
                        x: c.x,
                        y: c.y,
                        width: grid.width,
                        height: grid.height,
                    });
                }
                site[grid.index(c)] = true;
            }
        }
        let mut fixed_counts = [0usize; 3];
        for (i, k) in pinned.iter().enumerate() {
            match k {
                Some(NodeKind::Core) => fixed_counts[0] += 1,
                Some(NodeKind::Cache) => fixed_counts[1] += 1,
                Some(NodeKind::MemController) => {
                    if !site[i] {
                        return Err(Error::Infeasible(format!(
                            "pinned memory controller at {} is not an allowed site",
                            grid.coord(i)
                        )));
                    }
                    fixed_counts[2] += 1
                }
                _ => {}
            }
        }
        let totals = [s.counts.cores, s.counts.caches, s.counts.mcs];
        if totals.iter().zip(&fixed_counts).any(|(t, f)| f > t) {
            return Err(Error::Infeasible(
                "pinned tiles exceed the requested counts".into(),
            ));
        }
        let need = [
            totals[0] - fixed_counts[0],
            totals[1] - fixed_counts[1],
            totals[2] - fixed_counts[2],
        ];
        let slots: Vec<usize> = (0..n).filter(|&i| pinned[i].is_none()).collect();
        let mc_ok: Vec<bool> = slots.iter().map(|&i| site[i]).collect();
        let mut mc_suffix = vec![0; slots.len() + 1];
        for k in (0..slots.len()).rev() {
            mc_suffix[k] = mc_suffix[k + 1] + mc_ok[k] as usize;
        }
        if need.iter().sum::<usize>() > slots.len() {
            return Err(Error::Infeasible(format!(
                "{} nodes do not fit on {} free tiles",
                need.iter().sum::<usize>(),
                slots.len()
            )));
        }
        if need[2] + reserve > mc_suffix[0] {
            return Err(Error::Infeasible(format!(
                "{} memory controllers do not fit on {} allowed free tiles",
                need[2] + reserve,
                mc_suffix[0]
            )));
        }
        let base: Vec<NodeKind> = pinned
            .iter()
            .map(|k| k.unwrap_or(NodeKind::RouterOnly))
            .collect();
        // XY routing is mirror-symmetric but not transpose-symmetric, so channel
        // loads only survive the mirrors.
        let group = symmetries(grid)
            .into_iter()
            .skip(1)
            .filter(|sym| s.mode == Mode::LowTraffic || !sym.transpose)
            .filter_map(|sym| {
                let map: Vec<usize> = (0..n)
                    .map(|i| grid.index(sym.apply(grid, grid.coord(i))))
                    .collect();
                let preserves =
                    (0..n).all(|i| pinned[map[i]] == pinned[i] && site[map[i]] == site[i]);
                preserves.then(|| {
                    let mut inv = vec![0; n];
                    for (i, &j) in map.iter().enumerate() {
                        inv[j] = i;
                    }
                    inv
                })
            })
            .collect();
        Ok(Layout {
            grid,
            base,
            slots,
            mc_ok,
            mc_suffix,
            need,
            group,
            reserve,
        })
    }

    fn start(&self) -> State {
        let [a, b, m] = self.need;
        State {
            rem: [a, b, m, self.slots.len() - a - b - m],
            room: 0,
        }
    }

    fn choices(&self, k: usize, st: State) -> impl Iterator<Item = (NodeKind, State)> + '_ {
        ORDER.iter().filter_map(move |&(kind, slot)| {
            if st.rem[slot] == 0 {
                return None;
            }
            let is_mc = kind == NodeKind::MemController;
            if is_mc && !self.mc_ok[k] {
                return None;
            }
            let mut next = st;
            next.rem[slot] -= 1;
            if self.mc_ok[k] && kind == NodeKind::RouterOnly {
                next.room += 1;
            }
            let suffix = self.mc_suffix[k + 1];
            if next.rem[2] > suffix || next.room + suffix < self.reserve + next.rem[2] {
                return None;
            }
            Some((kind, next))
        })
    }

    fn dfs(
        &self,
        k: usize,
        tiles: &mut Vec<NodeKind>,
        st: State,
        visit: &mut dyn FnMut(&[NodeKind]),
    ) {
        if k == self.slots.len() {
            visit(tiles);
            return;
        }
        let idx = self.slots[k];
        for (kind, next) in self.choices(k, st) {
            tiles[idx] = kind;
            self.dfs(k + 1, tiles, next, visit);
        }
        tiles[idx] = NodeKind::RouterOnly;
    }

    /// Partial assignments of the first `depth` free slots, in enumeration order.
    fn prefixes(&self) -> (usize, Vec<(Vec<NodeKind>, State)>) {
        let mut level = vec![(self.base.clone(), self.start())];
        let mut depth = 0;
        while depth < self.slots.len() && level.len() < MIN_PREFIXES {
            let idx = self.slots[depth];
            level = level
                .into_iter()
                .flat_map(|(tiles, st)| {
                    self.choices(depth, st)
                        .map(|(kind, next)| {
                            let mut t = tiles.clone();
                            t[idx] = kind;
                            (t, next)
                        })
                        .collect::<Vec<_>>()
                })
                .collect();
            depth += 1;
        }
        (depth, level)
    }

    fn is_canonical(&self, tiles: &[NodeKind]) -> bool {
        self.group.iter().all(|inv| {
            for (j, &src) in inv.iter().enumerate() {
                match rank(tiles[src]).cmp(&rank(tiles[j])) {
                    Ordering::Less => return false,
                    Ordering::Greater => return true,
                    Ordering::Equal => {}
                }
            }
            true
        })
    }

    fn orbit(&self, tiles: &[NodeKind]) -> Vec<Vec<NodeKind>> {
        let mut out = vec![tiles.to_vec()];
        for inv in &self.group {
            out.push(inv.iter().map(|&i| tiles[i]).collect());
        }
        out.sort_by(|a, b| cmp_tiles(a, b));
        out.dedup();
        out
    }

    fn admits(&self, tiles: &[NodeKind]) -> bool {
        if tiles.len() != self.base.len() {
            return false;
        }
        let pinned_ok = (0..tiles.len())
            .filter(|i| self.slots.binary_search(i).is_err())
            .all(|i| tiles[i] == self.base[i]);
        let mut counts = [0usize; 3];
        for (k, &i) in self.slots.iter().enumerate() {
            match tiles[i] {
                NodeKind::Core => counts[0] += 1,
                NodeKind::Cache => counts[1] += 1,
                NodeKind::MemController => {
                    if !self.mc_ok[k] {
                        return false;
                    }
                    counts[2] += 1
                }
                NodeKind::RouterOnly => {}
            }
        }
        pinned_ok && counts == self.need
    }
}

/// Per-worker running minimum with its tie set.
struct Acc {
    min: f64,
    items: Vec<(f64, Vec<NodeKind>)>,
    evaluated: u64,
    pruned: u64,
    error: Option<(Vec<NodeKind>, Error)>,
}

impl Acc {
    fn new() -> Self {
        Acc {
            min: f64::INFINITY,
            items: Vec::new(),
            evaluated: 0,
            pruned: 0,
            error: None,
        }
    }

    fn offer(&mut self, v: f64, tiles: &[NodeKind]) {
        if !v.is_finite() {
            return;
        }
        if v < self.min {
            self.min = v;
            let min = v;
            self.items.retain(|(w, _)| tied(*w, min));
        }
        if tied(v, self.min) {
            self.items.push((v, tiles.to_vec()));
        }
    }

    fn fail(&mut self, tiles: &[NodeKind], e: Error) {
        let replace = match &self.error {
            None => true,
            Some((t, _)) => cmp_tiles(tiles, t) == Ordering::Less,
        };
        if replace {
            self.error = Some((tiles.to_vec(), e));
        }
    }

    fn merge(mut self, other: Acc) -> Acc {
        self.evaluated += other.evaluated;
        self.pruned += other.pruned;
        if let Some((t, e)) = other.error {
            self.fail(&t, e);
        }
        for (v, t) in other.items {
            self.offer(v, &t);
        }
        self
    }

    fn finish(mut self) -> Result<(f64, Vec<Vec<NodeKind>>, u64, u64)> {
        if self.items.is_empty() {
            return Err(match self.error {
                Some((_, e)) => e,
                None => Error::Infeasible("search space is empty".into()),
            });
        }
        let min = self.min;
        self.items.retain(|(w, _)| tied(*w, min));
        let mut reps: Vec<Vec<NodeKind>> = self.items.into_iter().map(|(_, t)| t).collect();
        reps.sort_by(|a, b| cmp_tiles(a, b));
        reps.dedup();
        Ok((min, reps, self.evaluated, self.pruned))
    }
}

/// Keeps the `cap` smallest values seen, ordered by value then key.
struct TopK {
    cap: usize,
    items: Vec<(f64, Vec<NodeKind>)>,
    evaluated: u64,
    pruned: u64,
}

impl TopK {
    fn new(cap: usize) -> Self {
        TopK {
            cap,
            items: Vec::new(),
            evaluated: 0,
            pruned: 0,
        }
    }

    fn compact(&mut self) {
        self.items
            .sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| cmp_tiles(&a.1, &b.1)));
        self.items.truncate(self.cap);
    }

    fn push(&mut self, v: f64, tiles: &[NodeKind]) {
        if !v.is_finite() {
            return;
        }
        self.items.push((v, tiles.to_vec()));
        if self.items.len() >= 2 * self.cap.max(1) {
            self.compact();
        }
    }

    fn merge(mut self, other: TopK) -> TopK {
        self.evaluated += other.evaluated;
        self.pruned += other.pruned;
        self.items.extend(other.items);
        self.compact();
        self
    }
}

struct Outcome {
    value: f64,
    reps: Vec<Vec<NodeKind>>,
    evaluated: u64,
    pruned: u64,
}

fn check_budget(space: &SearchSpace, opts: &SearchOptions) -> Result<()> {
    let raw = space.raw_count()?;
    let orbits = if opts.symmetry_pruning {
        space.orbit_estimate()?
    } else {
        raw.clone()
    };
    if orbits > BigUint::from(opts.budget) {
        return Err(Error::BudgetExceeded {
            count: raw.to_string(),
            orbits: orbits.to_string(),
            budget: opts.budget,
        });
    }
    Ok(())
}

fn evaluate(
    grid: MeshGrid,
    tiles: &[NodeKind],
    t: &TrafficSpec,
    mode: Mode,
    terms: Terms,
) -> Result<f64> {
    objective_value(&Placement::from_tiles(grid, tiles.to_vec()), t, mode, terms)
}

fn is_skippable(e: &Error) -> bool {
    matches!(e, Error::Unstable(_) | Error::NonConvergent { .. })
}

fn enumerate_min(
    layout: &Layout,
    t: &TrafficSpec,
    mode: Mode,
    terms: Terms,
    pruning: bool,
) -> Result<Outcome> {
    let (depth, prefixes) = layout.prefixes();
    let acc = prefixes
        .into_par_iter()
        .map(|(mut tiles, st)| {
            let mut acc = Acc::new();
            layout.dfs(depth, &mut tiles, st, &mut |tl| {
                if pruning && !layout.is_canonical(tl) {
                    acc.pruned += 1;
                    return;
                }
                acc.evaluated += 1;
                match evaluate(layout.grid, tl, t, mode, terms) {
                    Ok(v) => acc.offer(v, tl),
                    Err(e) => acc.fail(tl, e),
                }
            });
            acc
        })
        .reduce(Acc::new, Acc::merge);
    if let Some((_, e)) = &acc.error {
        if !is_skippable(e) {
            return Err(e.clone());
        }
    }
    let (value, reps, evaluated, pruned) = acc.finish()?;
    Ok(Outcome {
        value,
        reps,
        evaluated,
        pruned,
    })
}

fn prefiltered_min(
    layout: &Layout,
    t: &TrafficSpec,
    terms: Terms,
    pruning: bool,
    pf: Prefilter,
    orbit_estimate: u64,
) -> Result<Outcome> {
    let keep = ((orbit_estimate as f64 * pf.fraction).ceil() as usize).max(pf.min_keep);
    let (depth, prefixes) = layout.prefixes();
    let top = prefixes
        .into_par_iter()
        .map(|(mut tiles, st)| {
            let mut top = TopK::new(keep);
            layout.dfs(depth, &mut tiles, st, &mut |tl| {
                if pruning && !layout.is_canonical(tl) {
                    top.pruned += 1;
                    return;
                }
                top.evaluated += 1;
                if let Ok(v) = evaluate(layout.grid, tl, t, Mode::LowTraffic, terms) {
                    top.push(v, tl);
                }
            });
            top
        })
        .reduce(|| TopK::new(keep), TopK::merge);
    let shortlisted = top.items.len() as u64;
    let acc = top
        .items
        .into_par_iter()
        .map(|(_, tl)| {
            let mut acc = Acc::new();
            acc.evaluated = 1;
            match evaluate(layout.grid, &tl, t, Mode::HighTraffic, terms) {
                Ok(v) => acc.offer(v, &tl),
                Err(e) => acc.fail(&tl, e),
            }
            acc
        })
        .reduce(Acc::new, Acc::merge);
    if let Some((_, e)) = &acc.error {
        if !is_skippable(e) {
            return Err(e.clone());
        }
    }
    let (value, reps, _, _) = acc.finish()?;
    Ok(Outcome {
        value,
        reps,
        evaluated: top.evaluated + shortlisted,
        pruned: top.pruned,
    })
}

fn run_search(
    space: &SearchSpace,
    t: &TrafficSpec,
    terms: Terms,
    opts: &SearchOptions,
    reserve: usize,
) -> Result<(Layout, Outcome)> {
    check_budget(space, opts)?;
    if space.counts.caches == 0 {
        return Err(Error::NoCaches);
    }
    let mem_needed = match terms {
        Terms::Full => t.miss_l2 > 0.0,
        Terms::MemoryOnly => true,
        Terms::CacheOnly => false,
    };
    if mem_needed && space.counts.mcs == 0 {
        return Err(Error::NoMemControllers);
    }
    space.base_traffic_check(t)?;
    let layout = Layout::new(space, reserve)?;
    let outcome = match (space.mode, opts.prefilter) {
        (Mode::HighTraffic, Some(pf)) => {
            let est = space.orbit_estimate()?;
            let est = u64::try_from(est).unwrap_or(u64::MAX);
            prefiltered_min(&layout, t, terms, opts.symmetry_pruning, pf, est)?
        }
        _ => enumerate_min(&layout, t, space.mode, terms, opts.symmetry_pruning)?,
    };
    Ok((layout, outcome))
}

fn expand(layout: &Layout, reps: &[Vec<NodeKind>]) -> Vec<Placement> {
    let mut all: BTreeMap<String, Placement> = BTreeMap::new();
    for r in reps {
        for img in layout.orbit(r) {
            let p = Placement::from_tiles(layout.grid, img);
            all.entry(p.key()).or_insert(p);
        }
    }
    all.into_values().collect()
}

/// Exhaustive search with default options.
pub fn exhaustive_search(space: &SearchSpace, t: &TrafficSpec) -> Result<SearchResult> {
    exhaustive_search_with(space, t, &SearchOptions::default())
}

pub fn exhaustive_search_with(
    space: &SearchSpace,
    t: &TrafficSpec,
    opts: &SearchOptions,
) -> Result<SearchResult> {
    let (layout, out) = run_search(space, t, Terms::Full, opts, 0)?;
    Ok(SearchResult {
        method: Method::Exhaustive,
        mode: space.mode,
        best: expand(&layout, &out.reps),
        objective: out.value,
        evaluated: out.evaluated,
        pruned_by_symmetry: out.pruned,
        phase_objectives: None,
    })
}

pub fn two_phase_optimize(space: &SearchSpace, t: &TrafficSpec) -> Result<SearchResult> {
    two_phase_optimize_with(space, t, &SearchOptions::default())
}

/// Places cores and caches against the L2 terms alone, then places memory
/// controllers against the memory terms with the first phase's optima pinned.
pub fn two_phase_optimize_with(
    space: &SearchSpace,
    t: &TrafficSpec,
    opts: &SearchOptions,
) -> Result<SearchResult> {
    let full_layout = Layout::new(space, 0)?;
    let pinned_mcs = space
        .fixed
        .iter()
        .filter(|(_, k)| *k == NodeKind::MemController)
        .count();
    let free_mcs = space.counts.mcs - pinned_mcs;

    let phase1 = SearchSpace {
        counts: Counts::new(space.counts.cores, space.counts.caches, pinned_mcs),
        ..space.clone()
    };
    let t1 = TrafficSpec {
        miss_l2: 0.0,
        ..t.clone()
    };
    let (_, p1) = run_search(&phase1, &t1, Terms::CacheOnly, opts, free_mcs)?;
    let mut evaluated = p1.evaluated;
    let mut pruned = p1.pruned;

    let mut acc = Acc::new();
    let mut memory_of: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
    for rep in &p1.reps {
        let (candidates, memory) = if space.counts.mcs == 0 {
            (vec![rep.clone()], 0.0)
        } else {
            let fixed: Vec<(Coord, NodeKind)> = rep
                .iter()
                .enumerate()
                .filter(|(_, k)| **k != NodeKind::RouterOnly)
                .map(|(i, &k)| (space.grid.coord(i), k))
                .chain(
                    space
                        .fixed
                        .iter()
                        .filter(|(_, k)| *k == NodeKind::RouterOnly)
                        .copied(),
                )
                .collect();
            let phase2 = SearchSpace {
                fixed,
                ..space.clone()
            };
            let (layout2, p2) = run_search(&phase2, t, Terms::MemoryOnly, opts, 0)?;
            evaluated += p2.evaluated;
            pruned += p2.pruned;
            let cands = expand(&layout2, &p2.reps)
                .into_iter()
                .map(Placement::into_tiles)
                .collect();
            (cands, p2.value)
        };
        for c in candidates {
            evaluated += 1;
            match evaluate(space.grid, &c, t, space.mode, Terms::Full) {
                Ok(v) => {
                    memory_of.insert(c.iter().map(|&k| rank(k)).collect(), memory);
                    acc.offer(v, &c);
                }
                Err(e) => acc.fail(&c, e),
            }
        }
    }
    let (value, reps, _, _) = acc.finish()?;
    let memory = memory_of[&reps[0].iter().map(|&k| rank(k)).collect::<Vec<u8>>()];
    Ok(SearchResult {
        method: Method::TwoPhase,
        mode: space.mode,
        best: expand(&full_layout, &reps),
        objective: value,
        evaluated,
        pruned_by_symmetry: pruned,
        phase_objectives: Some(PhaseObjectives {
            cache: p1.value,
            memory,
        }),
    })
}

/// Local search from the central reference layout (or a random one when the
/// constraints exclude it).
pub fn local_search(
    space: &SearchSpace,
    t: &TrafficSpec,
    seed: u64,
    budget: u64,
) -> Result<SearchResult> {
    local_search_from(space, t, None, seed, budget)
}

/// Steepest descent over swaps of two differently assigned free tiles, restarted
/// from seeded random placements until `budget` neighbor evaluations are spent.
pub fn local_search_from(
    space: &SearchSpace,
    t: &TrafficSpec,
    start: Option<&Placement>,
    seed: u64,
    budget: u64,
) -> Result<SearchResult> {
    let layout = Layout::new(space, 0)?;
    space.base_traffic_check(t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = |tiles: &[NodeKind]| -> f64 {
        evaluate(space.grid, tiles, t, space.mode, Terms::Full).unwrap_or(f64::INFINITY)
    };
    let mut current: Vec<NodeKind> = match start {
        Some(p) if layout.admits(p.tiles()) => p.tiles().to_vec(),
        Some(_) => {
            return Err(Error::Infeasible(
                "start placement does not belong to the search space".into(),
            ))
        }
        None => canonical_placement(
            CanonicalFamily::Central,
            space.grid,
            space.counts.cores,
            space.counts.caches,
            space.counts.mcs,
        )
        .ok()
        .map(Placement::into_tiles)
        .filter(|tl| layout.admits(tl))
        .unwrap_or_else(|| random_tiles(&layout, &mut rng)),
    };
    if space.counts.caches == 0 {
        return Err(Error::NoCaches);
    }
    if t.miss_l2 > 0.0 && space.counts.mcs == 0 {
        return Err(Error::NoMemControllers);
    }
    let mut value = eval(&current);
    let mut best = Acc::new();
    best.offer(value, &current);
    let mut spent = 0u64;

    'outer: while spent < budget {
        let moves = swaps(&layout, &current);
        let take = moves.len().min((budget - spent) as usize);
        spent += take as u64;
        let scored: Vec<(f64, usize)> = moves[..take]
            .par_iter()
            .enumerate()
            .map(|(m, &(i, j))| {
                let mut tl = current.clone();
                tl.swap(i, j);
                (eval(&tl), m)
            })
            .collect();
        let step = scored
            .iter()
            .copied()
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        match step {
            Some((v, m)) if v < value - TIE_TOLERANCE * value.abs() => {
                let (i, j) = moves[m];
                current.swap(i, j);
                value = v;
                best.offer(v, &current);
            }
            _ => {
                for &(v, m) in &scored {
                    let (i, j) = moves[m];
                    let mut tl = current.clone();
                    tl.swap(i, j);
                    best.offer(v, &tl);
                }
                if spent >= budget {
                    break 'outer;
                }
                current = random_tiles(&layout, &mut rng);
                value = eval(&current);
                spent += 1;
                best.offer(value, &current);
            }
        }
    }
    best.evaluated = spent + 1;
    let (objective, reps, evaluated, _) = best.finish()?;
    Ok(SearchResult {
        method: Method::LocalSearch,
        mode: space.mode,
        best: reps
            .into_iter()
            .map(|tl| Placement::from_tiles(space.grid, tl))
            .collect(),
        objective,
        evaluated,
        pruned_by_symmetry: 0,
        phase_objectives: None,
    })
}

fn swaps(layout: &Layout, tiles: &[NodeKind]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..layout.slots.len() {
        for b in a + 1..layout.slots.len() {
            let (i, j) = (layout.slots[a], layout.slots[b]);
            if tiles[i] == tiles[j] {
                continue;
            }
            let mc_ok = (tiles[i] != NodeKind::MemController || layout.mc_ok[b])
                && (tiles[j] != NodeKind::MemController || layout.mc_ok[a]);
            if mc_ok {
                out.push((i, j));
            }
        }
    }
    out
}

fn random_tiles(layout: &Layout, rng: &mut ChaCha8Rng) -> Vec<NodeKind> {
    let mut tiles = layout.base.clone();
    let [a, b, m] = layout.need;
    let mut sites: Vec<usize> = (0..layout.slots.len())
        .filter(|&k| layout.mc_ok[k])
        .collect();
    sites.shuffle(rng);
    let mut taken = vec![false; layout.slots.len()];
    for &k in &sites[..m] {
        tiles[layout.slots[k]] = NodeKind::MemController;
        taken[k] = true;
    }
    let mut rest: Vec<usize> = (0..layout.slots.len()).filter(|&k| !taken[k]).collect();
    rest.shuffle(rng);
    for (n, &k) in rest.iter().enumerate() {
        tiles[layout.slots[k]] = if n < a {
            NodeKind::Core
        } else if n < a + b {
            NodeKind::Cache
        } else {
            NodeKind::RouterOnly
        };
    }
    tiles
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latency::objective;

    fn space(w: usize, h: usize, c: usize, k: usize, m: usize, mode: Mode) -> SearchSpace {
        SearchSpace::new(MeshGrid::new(w, h).unwrap(), Counts::new(c, k, m), mode).unwrap()
    }

    #[test]
    fn single_cache_goes_to_center() {
        let s = space(3, 3, 8, 1, 0, Mode::LowTraffic);
        let r = exhaustive_search(&s, &TrafficSpec::default()).unwrap();
        assert_eq!(r.best.len(), 1);
        assert_eq!(r.best[0].caches(), vec![Coord::new(1, 1)]);
        assert_eq!(r.objective, 12.0);
        // 9 raw placements fall into 3 orbits: corner, edge, center.
        assert_eq!(r.evaluated, 3);
        assert_eq!(r.pruned_by_symmetry, 6);
    }

    #[test]
    fn adjacent_pairs_tie_on_two_by_two() {
        let s = space(2, 2, 1, 1, 0, Mode::LowTraffic);
        assert_eq!(s.raw_count().unwrap(), BigUint::from(12u32));
        let r = exhaustive_search(&s, &TrafficSpec::default()).unwrap();
        assert_eq!(r.objective, 1.0);
        assert_eq!(r.best.len(), 8);
        for p in &r.best {
            assert_eq!(crate::mesh::manhattan(p.cores()[0], p.caches()[0]), 1);
        }
        let keys: Vec<String> = r.best.iter().map(Placement::key).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn over_budget() {
        let s = space(8, 8, 48, 16, 0, Mode::LowTraffic);
        match exhaustive_search(&s, &TrafficSpec::default()) {
            Err(Error::BudgetExceeded { count, budget, .. }) => {
                assert_eq!(count, "488526937079580");
                assert_eq!(budget, DEFAULT_BUDGET);
            }
            other => panic!("expected BudgetExceeded, got {other:?}"),
        }
    }

    #[test]
    fn pruning_is_lossless() {
        let s = space(3, 3, 4, 2, 1, Mode::LowTraffic);
        let t = TrafficSpec {
            miss_l2: 0.3,
            ..Default::default()
        };
        let pruned = exhaustive_search(&s, &t).unwrap();
        let full = exhaustive_search_with(
            &s,
            &t,
            &SearchOptions {
                symmetry_pruning: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(pruned.objective, full.objective);
        assert_eq!(pruned.best, full.best);
        assert_eq!(full.pruned_by_symmetry, 0);
        assert_eq!(BigUint::from(full.evaluated), s.raw_count().unwrap());
    }

    #[test]
    fn high_traffic_pruning_keeps_routing_asymmetry() {
        let s = space(3, 3, 5, 2, 0, Mode::HighTraffic);
        assert_eq!(s.group_size().unwrap(), 4);
        let t = TrafficSpec::default().with_lambda(0.03);
        let pruned = exhaustive_search_with(&s, &t, &SearchOptions::exact()).unwrap();
        let full = exhaustive_search_with(
            &s,
            &t,
            &SearchOptions {
                symmetry_pruning: false,
                ..SearchOptions::exact()
            },
        )
        .unwrap();
        assert_eq!(pruned.objective, full.objective);
        assert_eq!(pruned.best, full.best);
    }

    #[test]
    fn two_phase_without_controllers_matches_exhaustive() {
        let s = space(3, 3, 5, 2, 0, Mode::LowTraffic);
        let t = TrafficSpec::default();
        let a = exhaustive_search(&s, &t).unwrap();
        let b = two_phase_optimize(&s, &t).unwrap();
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.best, b.best);
        assert_eq!(b.phase_objectives.unwrap().memory, 0.0);
    }

    #[test]
    fn two_phase_small_instance() {
        let s = space(4, 4, 4, 1, 1, Mode::LowTraffic);
        let t = TrafficSpec {
            miss_l2: 0.1,
            ..Default::default()
        };
        let joint = exhaustive_search(&s, &t).unwrap();
        let split = two_phase_optimize(&s, &t).unwrap();
        assert_eq!(split.objective, joint.objective);
    }

    #[test]
    fn perimeter_controller_next_to_central_cache() {
        let grid = MeshGrid::square(5).unwrap();
        let s = SearchSpace::new(grid, Counts::new(1, 1, 1), Mode::LowTraffic)
            .unwrap()
            .with_fixed(vec![
                (Coord::new(2, 2), NodeKind::Cache),
                (Coord::new(1, 1), NodeKind::Core),
            ])
            .unwrap()
            .with_mc_sites(grid.perimeter())
            .unwrap();
        let t = TrafficSpec {
            miss_l2: 0.5,
            ..Default::default()
        };
        let r = two_phase_optimize(&s, &t).unwrap();
        let mut mcs: Vec<Coord> = r.best.iter().map(|p| p.mcs()[0]).collect();
        mcs.sort();
        assert_eq!(
            mcs,
            vec![
                Coord::new(2, 0),
                Coord::new(0, 2),
                Coord::new(4, 2),
                Coord::new(2, 4)
            ]
        );
        assert_eq!(r.phase_objectives.unwrap().memory, 2.0);
    }

    #[test]
    fn local_search_examples() {
        let s = space(3, 3, 8, 1, 0, Mode::LowTraffic);
        let t = TrafficSpec::default();
        let r = local_search(&s, &t, 7, 1_000).unwrap();
        assert_eq!(r.objective, 12.0);
        assert_eq!(r.best[0].caches(), vec![Coord::new(1, 1)]);

        let corner = Placement::from_text("$CC\nCCC\nCCC\n").unwrap();
        let r = local_search_from(&s, &t, Some(&corner), 7, 0).unwrap();
        assert_eq!(r.best, vec![corner.clone()]);
        assert_eq!(r.objective, 18.0);

        let opt = Placement::from_text("CCC\nC$C\nCCC\n").unwrap();
        let r = local_search_from(&s, &t, Some(&opt), 3, 8).unwrap();
        assert_eq!(r.best, vec![opt]);
    }

    #[test]
    fn local_search_is_deterministic_and_beats_central() {
        let s = space(4, 4, 10, 3, 2, Mode::LowTraffic);
        let t = TrafficSpec {
            miss_l2: 0.2,
            ..Default::default()
        };
        let a = local_search(&s, &t, 11, 2_000).unwrap();
        let b = local_search(&s, &t, 11, 2_000).unwrap();
        assert_eq!(a, b);
        let central = canonical_placement(CanonicalFamily::Central, s.grid, 10, 3, 2).unwrap();
        let start = objective(&central, &t, Mode::LowTraffic).unwrap().objective;
        assert!(a.objective <= start);
    }

    #[test]
    fn high_traffic_prefilter_and_exact_agree_on_tiny_space() {
        let s = space(3, 3, 6, 2, 0, Mode::HighTraffic);
        let t = TrafficSpec::default().with_lambda(0.02);
        let pre = exhaustive_search(&s, &t).unwrap();
        let exact = exhaustive_search_with(&s, &t, &SearchOptions::exact()).unwrap();
        assert_eq!(pre.objective, exact.objective);
        assert_eq!(pre.best, exact.best);
    }
}
