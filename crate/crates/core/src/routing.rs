//! Dimension-ordered (XY) routes and the steady-state channel rates they induce.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{manhattan, Coord, MeshGrid, Placement};
use crate::traffic::TrafficSpec;

/// Router port. `North` points toward row 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Port {
    North,
    East,
    South,
    West,
    Local,
}

pub const PORTS: usize = 5;

impl Port {
    pub const ALL: [Port; PORTS] = [
        Port::North,
        Port::East,
        Port::South,
        Port::West,
        Port::Local,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Port {
        Port::ALL[i]
    }

    /// The port on the neighbouring router that faces this one.
    pub fn opposite(self) -> Port {
        match self {
            Port::North => Port::South,
            Port::South => Port::North,
            Port::East => Port::West,
            Port::West => Port::East,
            Port::Local => Port::Local,
        }
    }

    /// Neighbouring tile reached through this port, if inside the grid.
    pub fn step(self, grid: MeshGrid, c: Coord) -> Option<Coord> {
        let next = match self {
            Port::North => Coord::new(c.x, c.y.checked_sub(1)?),
            Port::South => Coord::new(c.x, c.y + 1),
            Port::East => Coord::new(c.x + 1, c.y),
            Port::West => Coord::new(c.x.checked_sub(1)?, c.y),
            Port::Local => return None,
        };
        grid.contains(next).then_some(next)
    }

    pub fn short(self) -> &'static str {
        match self {
            Port::North => "N",
            Port::East => "E",
            Port::South => "S",
            Port::West => "W",
            Port::Local => "L",
        }
    }

    pub fn from_short(s: &str) -> Option<Port> {
        Port::ALL.into_iter().find(|p| p.short() == s)
    }
}

impl fmt::Display for Port {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

/// Output port taken at `at` by a packet headed to `dst`: finish x first, then y.
pub fn next_port(at: Coord, dst: Coord) -> Port {
    if dst.x > at.x {
        Port::East
    } else if dst.x < at.x {
        Port::West
    } else if dst.y > at.y {
        Port::South
    } else if dst.y < at.y {
        Port::North
    } else {
        Port::Local
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub router: Coord,
    pub out_port: Port,
}

/// Routers visited from `src` to `dst`, each with the output port taken; the
/// last hop ejects through `Local`.
pub fn xy_route(src: Coord, dst: Coord) -> Vec<Hop> {
    let mut hops = Vec::with_capacity(manhattan(src, dst) + 1);
    let mut at = src;
    loop {
        let out_port = next_port(at, dst);
        hops.push(Hop {
            router: at,
            out_port,
        });
        at = match out_port {
            Port::East => Coord::new(at.x + 1, at.y),
            Port::West => Coord::new(at.x - 1, at.y),
            Port::South => Coord::new(at.x, at.y + 1),
            Port::North => Coord::new(at.x, at.y - 1),
            Port::Local => break,
        };
    }
    hops
}

/// Input port through which each hop of `route` is entered.
pub fn input_ports(route: &[Hop]) -> impl Iterator<Item = Port> + '_ {
    std::iter::once(Port::Local).chain(route.iter().map(|h| h.out_port.opposite()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowClass {
    CoreToCache,
    CacheToMc,
    Reply,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub src: Coord,
    pub dst: Coord,
    pub rate: f64,
    pub class: FlowClass,
}

/// Cache-to-memory-controller distribution: each cache sends its misses to the
/// nearest controllers, split evenly between ties. Returns `(mc index, share)`
/// per cache, in row-major order of both.
pub fn mc_assignment(p: &Placement) -> Vec<Vec<(usize, f64)>> {
    let mcs = p.mcs();
    p.caches()
        .into_iter()
        .map(|cache| {
            let Some(best) = mcs.iter().map(|m| manhattan(cache, *m)).min() else {
                return Vec::new();
            };
            let nearest: Vec<usize> = (0..mcs.len())
                .filter(|&k| manhattan(cache, mcs[k]) == best)
                .collect();
            let share = 1.0 / nearest.len() as f64;
            nearest.into_iter().map(|k| (k, share)).collect()
        })
        .collect()
}

/// Whether miss traffic toward memory controllers is generated for this placement.
pub fn has_memory_traffic(p: &Placement, t: &TrafficSpec) -> bool {
    t.miss_l2 > 0.0 && p.counts().mcs > 0
}

/// Steady-state end-to-end flows of a placement under the given traffic.
pub fn build_flows(p: &Placement, t: &TrafficSpec) -> Result<Vec<Flow>> {
    t.validate(p)?;
    let cores = p.cores();
    let caches = p.caches();
    if cores.is_empty() {
        return Err(Error::InvalidTraffic("placement has no cores".into()));
    }
    if caches.is_empty() {
        return Err(Error::NoCaches);
    }
    let n_caches = caches.len();
    let mut flows = Vec::new();
    let mut cache_ingress = vec![0.0; n_caches];
    for (i, &core) in cores.iter().enumerate() {
        let base = t.core_rate(i) * t.miss_l1();
        for (j, &cache) in caches.iter().enumerate() {
            let rate = base * t.access(i, j, n_caches);
            cache_ingress[j] += rate;
            flows.push(Flow {
                src: core,
                dst: cache,
                rate,
                class: FlowClass::CoreToCache,
            });
        }
    }
    if has_memory_traffic(p, t) {
        let mcs = p.mcs();
        for (j, shares) in mc_assignment(p).into_iter().enumerate() {
            for (k, share) in shares {
                flows.push(Flow {
                    src: caches[j],
                    dst: mcs[k],
                    rate: cache_ingress[j] * t.miss_l2 * share,
                    class: FlowClass::CacheToMc,
                });
            }
        }
    }
    if t.model_replies {
        let replies: Vec<Flow> = flows
            .iter()
            .map(|f| Flow {
                src: f.dst,
                dst: f.src,
                rate: f.rate,
                class: FlowClass::Reply,
            })
            .collect();
        flows.extend(replies);
    }
    Ok(flows)
}

/// Per-router arrival rates: `turn[in][out]` is the rate entering through `in`
/// and leaving through `out`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelLoadMap {
    grid: MeshGrid,
    turns: Vec<[[f64; PORTS]; PORTS]>,
}

impl ChannelLoadMap {
    pub fn zero(grid: MeshGrid) -> Self {
        ChannelLoadMap {
            grid,
            turns: vec![[[0.0; PORTS]; PORTS]; grid.tiles()],
        }
    }

    pub fn grid(&self) -> MeshGrid {
        self.grid
    }

    pub fn turn_rate(&self, router: Coord, input: Port, output: Port) -> f64 {
        self.turns[self.grid.index(router)][input.index()][output.index()]
    }

    /// Aggregate arrival rate on an input channel.
    pub fn input_rate(&self, router: Coord, input: Port) -> f64 {
        self.turns[self.grid.index(router)][input.index()]
            .iter()
            .sum()
    }

    pub fn output_rate(&self, router: Coord, output: Port) -> f64 {
        self.turns[self.grid.index(router)]
            .iter()
            .map(|row| row[output.index()])
            .sum()
    }

    /// The turn matrix of one router.
    pub fn router_turns(&self, router: Coord) -> &[[f64; PORTS]; PORTS] {
        &self.turns[self.grid.index(router)]
    }

    /// Largest mismatch between a router's outbound rate on a link and the
    /// inbound rate recorded at the neighbour across it.
    pub fn conservation_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in self.grid.coords() {
            for out in [Port::North, Port::East, Port::South, Port::West] {
                let sent = self.output_rate(r, out);
                let received = match out.step(self.grid, r) {
                    Some(n) => self.input_rate(n, out.opposite()),
                    None => 0.0,
                };
                worst = worst.max((sent - received).abs());
            }
        }
        worst
    }

    pub fn scaled(&self, factor: f64) -> ChannelLoadMap {
        let mut out = self.clone();
        for m in &mut out.turns {
            for row in m.iter_mut() {
                for v in row.iter_mut() {
                    *v *= factor;
                }
            }
        }
        out
    }

    /// Rows `router_x,router_y,in_port,out_port,rate` for every non-zero turn.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("router_x,router_y,in_port,out_port,rate\n");
        for r in self.grid.coords() {
            for i in Port::ALL {
                for o in Port::ALL {
                    let rate = self.turn_rate(r, i, o);
                    if rate != 0.0 {
                        out.push_str(&format!("{},{},{},{},{}\n", r.x, r.y, i, o, rate));
                    }
                }
            }
        }
        out
    }
}

/// Adds every flow's rate along its XY route. Flows are accumulated in a fixed
/// order so the result does not depend on the order they are supplied in.
pub fn derive_channel_rates(flows: &[Flow], grid: MeshGrid) -> ChannelLoadMap {
    let mut ordered: Vec<&Flow> = flows.iter().collect();
    ordered.sort_by(|a, b| {
        (a.src, a.dst, a.class)
            .cmp(&(b.src, b.dst, b.class))
            .then(a.rate.total_cmp(&b.rate))
    });
    let mut map = ChannelLoadMap::zero(grid);
    for f in ordered {
        let route = xy_route(f.src, f.dst);
        for (hop, input) in route.iter().zip(input_ports(&route)) {
            map.turns[grid.index(hop.router)][input.index()][hop.out_port.index()] += f.rate;
        }
    }
    map
}
