//! Reference cache layouts, from a single central block to an evenly spread lattice.
//!
//! Each family fixes where the caches go. Memory controllers then take evenly spaced
//! free perimeter tiles, and cores fill the remaining tiles closest to the cache
//! centroid first (row-major tie-break).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Coord, Counts, MeshGrid, NodeKind, Placement};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CanonicalFamily {
    /// One centered block, or the tiles nearest the center when no block fits.
    Central,
    /// Caches on alternate rings around the center, innermost first.
    Concentric { ring_count: usize },
    /// Evenly gapped columns of caches.
    Striped { stripe_width: usize },
    /// Alternating tiles inside a centered block twice the cache count.
    Checkerboard,
    /// A regular lattice with one cache per cell.
    FullyDistributed,
}

impl CanonicalFamily {
    /// The five reference layouts in order of increasing spread.
    pub const REFERENCE: [CanonicalFamily; 5] = [
        CanonicalFamily::Central,
        CanonicalFamily::Concentric { ring_count: 2 },
        CanonicalFamily::Striped { stripe_width: 1 },
        CanonicalFamily::Checkerboard,
        CanonicalFamily::FullyDistributed,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CanonicalFamily::Central => "central",
            CanonicalFamily::Concentric { .. } => "concentric",
            CanonicalFamily::Striped { .. } => "striped",
            CanonicalFamily::Checkerboard => "checkerboard",
            CanonicalFamily::FullyDistributed => "distributed",
        }
    }
}

impl fmt::Display for CanonicalFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CanonicalFamily::Concentric { ring_count } if *ring_count != 2 => {
                write!(f, "concentric:{ring_count}")
            }
            CanonicalFamily::Striped { stripe_width } if *stripe_width != 1 => {
                write!(f, "striped:{stripe_width}")
            }
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for CanonicalFamily {
    type Err = Error;

    /// Accepts `central`, `concentric[:rings]`, `striped[:width]`, `checkerboard`,
    /// `distributed`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |default: usize| -> Result<usize> {
            match arg {
                None => Ok(default),
                Some(a) => a
                    .parse()
                    .ok()
                    .filter(|v| *v > 0)
                    .ok_or_else(|| Error::Parse(format!("bad family parameter in `{s}`"))),
            }
        };
        let fam = match name.trim().to_ascii_lowercase().as_str() {
            "central" => CanonicalFamily::Central,
            "concentric" => CanonicalFamily::Concentric {
                ring_count: num(2)?,
            },
            "striped" => CanonicalFamily::Striped {
                stripe_width: num(1)?,
            },
            "checkerboard" => CanonicalFamily::Checkerboard,
            "distributed" | "fully-distributed" => CanonicalFamily::FullyDistributed,
            _ => return Err(Error::Parse(format!("unknown cache family `{s}`"))),
        };
        if arg.is_some()
            && !matches!(
                fam,
                CanonicalFamily::Concentric { .. } | CanonicalFamily::Striped { .. }
            )
        {
            return Err(Error::Parse(format!("family `{name}` takes no parameter")));
        }
        Ok(fam)
    }
}

/// Builds the reference placement of `family` on `grid`.
pub fn canonical_placement(
    family: CanonicalFamily,
    grid: MeshGrid,
    n_cores: usize,
    n_caches: usize,
    n_mcs: usize,
) -> Result<Placement> {
    let counts = Counts::new(n_cores, n_caches, n_mcs);
    if counts.placed() > grid.tiles() {
        return Err(Error::Infeasible(format!(
            "{} nodes do not fit on a {grid} grid",
            counts.placed()
        )));
    }
    let caches = cache_sites(family, grid, n_caches)?;
    debug_assert_eq!(caches.len(), n_caches);

    let mut tiles = vec![NodeKind::RouterOnly; grid.tiles()];
    for &c in &caches {
        tiles[grid.index(c)] = NodeKind::Cache;
    }

    let free_perimeter: Vec<Coord> = grid
        .perimeter()
        .into_iter()
        .filter(|c| tiles[grid.index(*c)] == NodeKind::RouterOnly)
        .collect();
    if free_perimeter.len() < n_mcs {
        return Err(Error::Infeasible(format!(
            "only {} free perimeter tiles for {n_mcs} memory controllers",
            free_perimeter.len()
        )));
    }
    for c in spread(&free_perimeter, n_mcs) {
        tiles[grid.index(c)] = NodeKind::MemController;
    }

    let (cx, cy) = centroid(&caches, grid);
    let mut free: Vec<Coord> = grid
        .coords()
        .filter(|c| tiles[grid.index(*c)] == NodeKind::RouterOnly)
        .collect();
    free.sort_by(|a, b| {
        let da = (a.x as f64 - cx).abs() + (a.y as f64 - cy).abs();
        let db = (b.x as f64 - cx).abs() + (b.y as f64 - cy).abs();
        da.total_cmp(&db).then(a.cmp(b))
    });
    for c in free.into_iter().take(n_cores) {
        tiles[grid.index(c)] = NodeKind::Core;
    }
    Ok(Placement::from_tiles(grid, tiles))
}

fn centroid(sites: &[Coord], grid: MeshGrid) -> (f64, f64) {
    if sites.is_empty() {
        return (
            (grid.width - 1) as f64 / 2.0,
            (grid.height - 1) as f64 / 2.0,
        );
    }
    let n = sites.len() as f64;
    (
        sites.iter().map(|c| c.x as f64).sum::<f64>() / n,
        sites.iter().map(|c| c.y as f64).sum::<f64>() / n,
    )
}

/// `count` entries of `walk` at evenly spaced positions.
fn spread(walk: &[Coord], count: usize) -> Vec<Coord> {
    (0..count).map(|i| walk[i * walk.len() / count]).collect()
}

/// Evenly spaced tiles of a ring walk. Square rings with a count divisible by four
/// get the same offsets on every side, so the selection is invariant under
/// quarter turns.
fn spread_on_ring(ring: &[Coord], count: usize) -> Vec<Coord> {
    if count == ring.len() {
        return ring.to_vec();
    }
    if count.is_multiple_of(4) && ring.len().is_multiple_of(4) {
        let side = ring.len() / 4;
        let per_side = count / 4;
        if per_side <= side {
            return (0..4)
                .flat_map(|s| {
                    (0..per_side).map(move |j| s * side + ((2 * j + 1) * side) / (2 * per_side))
                })
                .map(|i| ring[i])
                .collect();
        }
    }
    spread(ring, count)
}

/// Centered `a x b` block dimensions with `a * b == area`, closest to square.
fn centered_block(grid: MeshGrid, area: usize) -> Option<(usize, usize)> {
    (1..=grid.width)
        .filter(|a| area.is_multiple_of(*a))
        .map(|a| (a, area / a))
        .filter(|&(a, b)| {
            b <= grid.height
                && (grid.width - a).is_multiple_of(2)
                && (grid.height - b).is_multiple_of(2)
        })
        .min_by_key(|&(a, b)| (a.abs_diff(b), std::cmp::Reverse(a)))
}

/// The `n` tiles closest to the grid center, ties in row-major order.
fn nearest_to_center(grid: MeshGrid, n: usize) -> Vec<Coord> {
    let mut all: Vec<Coord> = grid.coords().collect();
    all.sort_by_key(|c| {
        let dx = (2 * c.x + 1).abs_diff(grid.width);
        let dy = (2 * c.y + 1).abs_diff(grid.height);
        (dx * dx + dy * dy, *c)
    });
    all.truncate(n);
    all
}

fn cache_sites(family: CanonicalFamily, grid: MeshGrid, n: usize) -> Result<Vec<Coord>> {
    let infeasible = |why: String| Err(Error::Infeasible(format!("{family} on {grid}: {why}")));
    if n == 0 {
        return Ok(Vec::new());
    }
    if n > grid.tiles() {
        return infeasible(format!("{n} caches exceed the tile count"));
    }
    let mut sites = match family {
        CanonicalFamily::Central => match centered_block(grid, n) {
            Some((a, b)) => {
                let (x0, y0) = ((grid.width - a) / 2, (grid.height - b) / 2);
                (y0..y0 + b)
                    .flat_map(|y| (x0..x0 + a).map(move |x| Coord::new(x, y)))
                    .collect::<Vec<_>>()
            }
            None => nearest_to_center(grid, n),
        },
        CanonicalFamily::Concentric { ring_count } => {
            let inner = grid.max_layer();
            let rings: Vec<Vec<Coord>> = (0..ring_count)
                .map_while(|r| inner.checked_sub(2 * r))
                .map(|layer| grid.ring(layer))
                .collect();
            if rings.len() < ring_count {
                return infeasible(format!(
                    "the grid has no room for {ring_count} alternate rings"
                ));
            }
            let capacity: usize = rings.iter().map(Vec::len).sum();
            if capacity < n {
                return infeasible(format!("{ring_count} rings hold only {capacity} tiles"));
            }
            let mut left = n;
            let mut out = Vec::with_capacity(n);
            for ring in &rings {
                let take = left.min(ring.len());
                out.extend(spread_on_ring(ring, take));
                left -= take;
            }
            out
        }
        CanonicalFamily::Striped { stripe_width } => {
            let per_stripe = stripe_width * grid.height;
            if stripe_width == 0 || !n.is_multiple_of(per_stripe) {
                return infeasible(format!(
                    "{n} caches are not a whole number of {stripe_width}-wide stripes"
                ));
            }
            let stripes = n / per_stripe;
            let used = stripes * stripe_width;
            if used > grid.width || !(grid.width - used).is_multiple_of(stripes + 1) {
                return infeasible(format!("{stripes} stripes cannot be evenly gapped"));
            }
            let gap = (grid.width - used) / (stripes + 1);
            let columns: Vec<usize> = (0..stripes)
                .flat_map(|s| {
                    let start = gap + s * (gap + stripe_width);
                    start..start + stripe_width
                })
                .collect();
            grid.coords().filter(|c| columns.contains(&c.x)).collect()
        }
        CanonicalFamily::Checkerboard => {
            let Some((a, b)) = centered_block(grid, 2 * n) else {
                return infeasible(format!("no centered block of {} tiles", 2 * n));
            };
            let (x0, y0) = ((grid.width - a) / 2, (grid.height - b) / 2);
            (y0..y0 + b)
                .flat_map(|y| (x0..x0 + a).map(move |x| Coord::new(x, y)))
                .filter(|c| (c.x + c.y) % 2 == 0)
                .collect()
        }
        CanonicalFamily::FullyDistributed => {
            let lattice = (1..=grid.width)
                .filter(|cx| n.is_multiple_of(*cx) && grid.width.is_multiple_of(*cx))
                .map(|cx| (cx, n / cx))
                .filter(|&(_, cy)| cy <= grid.height && grid.height.is_multiple_of(cy))
                .min_by_key(|&(cx, cy)| {
                    (
                        (grid.width / cx).abs_diff(grid.height / cy),
                        std::cmp::Reverse(cx),
                    )
                });
            let Some((cx, cy)) = lattice else {
                return infeasible(format!("{n} caches do not tile the grid as a lattice"));
            };
            let (sx, sy) = (grid.width / cx, grid.height / cy);
            (0..cy)
                .flat_map(|j| (0..cx).map(move |i| Coord::new(i * sx + sx / 2, j * sy + sy / 2)))
                .collect()
        }
    };
    sites.sort();
    let unique: BTreeSet<Coord> = sites.iter().copied().collect();
    debug_assert_eq!(unique.len(), sites.len());
    if sites.len() != n {
        return infeasible(format!(
            "layout yields {} caches, expected {n}",
            sites.len()
        ));
    }
    Ok(sites)
}
