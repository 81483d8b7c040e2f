//! Mesh grid, tile assignments and grid symmetries.
//!
//! Tiles are addressed by [`Coord`] with `x` the column and `y` the row, both
//! zero-based. `y` grows downward, so row 0 is the first line of the text form.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported side length.
pub const MAX_SIDE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Coord {
    pub x: usize,
    pub y: usize,
}

impl Coord {
    pub const fn new(x: usize, y: usize) -> Self {
        Coord { x, y }
    }
}

// Row-major: compare rows first.
impl Ord for Coord {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

impl PartialOrd for Coord {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Hop distance between two tiles.
pub fn manhattan(a: Coord, b: Coord) -> usize {
    a.x.abs_diff(b.x) + a.y.abs_diff(b.y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    #[serde(rename = "core")]
    Core,
    #[serde(rename = "cache")]
    Cache,
    #[serde(rename = "mc")]
    MemController,
    #[serde(rename = "router")]
    RouterOnly,
}

impl NodeKind {
    pub const ALL: [NodeKind; 4] = [
        NodeKind::Core,
        NodeKind::Cache,
        NodeKind::MemController,
        NodeKind::RouterOnly,
    ];

    pub fn symbol(self) -> char {
        match self {
            NodeKind::Core => 'C',
            NodeKind::Cache => '$',
            NodeKind::MemController => 'M',
            NodeKind::RouterOnly => '.',
        }
    }

    pub fn from_symbol(c: char) -> Option<NodeKind> {
        match c {
            'C' => Some(NodeKind::Core),
            '$' => Some(NodeKind::Cache),
            'M' => Some(NodeKind::MemController),
            '.' => Some(NodeKind::RouterOnly),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MeshGrid {
    pub width: usize,
    pub height: usize,
}

impl MeshGrid {
    /// Sides may be 1 (a line of routers) up to [`MAX_SIDE`]; at least two tiles overall.
    pub fn new(width: usize, height: usize) -> Result<Self> {
        let invalid = |reason| Error::InvalidGrid {
            width,
            height,
            reason,
        };
        if width == 0 || height == 0 {
            return Err(invalid("sides must be positive"));
        }
        if width > MAX_SIDE || height > MAX_SIDE {
            return Err(invalid("sides are limited to 16"));
        }
        if width * height < 2 {
            return Err(invalid("need at least two tiles"));
        }
        Ok(MeshGrid { width, height })
    }

    pub fn square(side: usize) -> Result<Self> {
        Self::new(side, side)
    }

    pub fn tiles(&self) -> usize {
        self.width * self.height
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn index(&self, c: Coord) -> usize {
        debug_assert!(self.contains(c));
        c.y * self.width + c.x
    }

    pub fn coord(&self, index: usize) -> Coord {
        Coord::new(index % self.width, index / self.width)
    }

    /// All tiles in row-major order.
    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.tiles()).map(move |i| self.coord(i))
    }

    /// Distance from the tile to the nearest grid border (0 on the perimeter).
    pub fn layer(&self, c: Coord) -> usize {
        c.x.min(c.y)
            .min(self.width - 1 - c.x)
            .min(self.height - 1 - c.y)
    }

    /// Tiles of ring `layer`, walked clockwise from its top-left corner.
    pub fn ring(&self, layer: usize) -> Vec<Coord> {
        if 2 * layer >= self.width || 2 * layer >= self.height {
            return Vec::new();
        }
        let (x0, y0) = (layer, layer);
        let (x1, y1) = (self.width - 1 - layer, self.height - 1 - layer);
        if x0 == x1 {
            return (y0..=y1).map(|y| Coord::new(x0, y)).collect();
        }
        if y0 == y1 {
            return (x0..=x1).map(|x| Coord::new(x, y0)).collect();
        }
        let mut out = Vec::with_capacity(2 * (x1 - x0 + y1 - y0));
        out.extend((x0..x1).map(|x| Coord::new(x, y0)));
        out.extend((y0..y1).map(|y| Coord::new(x1, y)));
        out.extend((x0 + 1..=x1).rev().map(|x| Coord::new(x, y1)));
        out.extend((y0 + 1..=y1).rev().map(|y| Coord::new(x0, y)));
        out
    }

    /// Perimeter tiles, clockwise from (0,0).
    pub fn perimeter(&self) -> Vec<Coord> {
        self.ring(0)
    }

    pub fn max_layer(&self) -> usize {
        (self.width.min(self.height) - 1) / 2
    }
}

impl fmt::Display for MeshGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl std::str::FromStr for MeshGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Parse(format!("grid `{s}` is not of the form WxH")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("grid `{s}` is not of the form WxH")))
        };
        MeshGrid::new(parse(w)?, parse(h)?)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Counts {
    pub cores: usize,
    pub caches: usize,
    pub mcs: usize,
}

impl Counts {
    pub fn new(cores: usize, caches: usize, mcs: usize) -> Self {
        Counts { cores, caches, mcs }
    }

    pub fn placed(&self) -> usize {
        self.cores + self.caches + self.mcs
    }

    pub fn of(&self, kind: NodeKind) -> Option<usize> {
        match kind {
            NodeKind::Core => Some(self.cores),
            NodeKind::Cache => Some(self.caches),
            NodeKind::MemController => Some(self.mcs),
            NodeKind::RouterOnly => None,
        }
    }
}

/// A total assignment of node kinds to the tiles of a grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Placement {
    grid: MeshGrid,
    tiles: Vec<NodeKind>,
    counts: Counts,
}

/// Builds a placement from an explicit per-tile assignment, which must cover
/// every tile of the grid exactly once.
pub fn build_placement<I>(grid: MeshGrid, assignment: I) -> Result<Placement>
where
    I: IntoIterator<Item = (Coord, NodeKind)>,
{
    let mut tiles: Vec<Option<NodeKind>> = vec![None; grid.tiles()];
    for (c, kind) in assignment {
        if !grid.contains(c) {
            return Err(Error::OutOfBounds {
                x: c.x,
                y: c.y,
                width: grid.width,
                height: grid.height,
            });
        }
        let slot = &mut tiles[grid.index(c)];
        if slot.is_some() {
            return Err(Error::Parse(format!("tile {c} assigned twice")));
        }
        *slot = Some(kind);
    }
    let tiles = tiles
        .into_iter()
        .enumerate()
        .map(|(i, k)| {
            k.ok_or_else(|| {
                let c = grid.coord(i);
                Error::Incomplete { x: c.x, y: c.y }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Placement::from_tiles(grid, tiles))
}

impl Placement {
    /// Wraps a row-major tile vector. Panics if the length does not match the grid.
    pub fn from_tiles(grid: MeshGrid, tiles: Vec<NodeKind>) -> Self {
        assert_eq!(
            tiles.len(),
            grid.tiles(),
            "tile vector does not cover the grid"
        );
        let mut counts = Counts::default();
        for k in &tiles {
            match k {
                NodeKind::Core => counts.cores += 1,
                NodeKind::Cache => counts.caches += 1,
                NodeKind::MemController => counts.mcs += 1,
                NodeKind::RouterOnly => {}
            }
        }
        Placement {
            grid,
            tiles,
            counts,
        }
    }

    pub fn empty(grid: MeshGrid) -> Self {
        Self::from_tiles(grid, vec![NodeKind::RouterOnly; grid.tiles()])
    }

    pub fn grid(&self) -> MeshGrid {
        self.grid
    }

    pub fn tiles(&self) -> &[NodeKind] {
        &self.tiles
    }

    pub fn into_tiles(self) -> Vec<NodeKind> {
        self.tiles
    }

    pub fn counts(&self) -> Counts {
        self.counts
    }

    pub fn kind_at(&self, c: Coord) -> NodeKind {
        self.tiles[self.grid.index(c)]
    }

    /// Tiles of the given kind in row-major order. Core and cache indices used by
    /// access-probability matrices follow this order.
    pub fn coords_of(&self, kind: NodeKind) -> Vec<Coord> {
        self.tiles
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == kind)
            .map(|(i, _)| self.grid.coord(i))
            .collect()
    }

    pub fn cores(&self) -> Vec<Coord> {
        self.coords_of(NodeKind::Core)
    }

    pub fn caches(&self) -> Vec<Coord> {
        self.coords_of(NodeKind::Cache)
    }

    pub fn mcs(&self) -> Vec<Coord> {
        self.coords_of(NodeKind::MemController)
    }

    /// Row-major tile symbols without line breaks; the ordering key for ties and
    /// canonical representatives.
    pub fn key(&self) -> String {
        self.tiles.iter().map(|k| k.symbol()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.grid.tiles() + self.grid.height);
        for row in self.tiles.chunks(self.grid.width) {
            out.extend(row.iter().map(|k| k.symbol()));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().collect();
        if rows.is_empty() {
            return Err(Error::Parse("empty placement".into()));
        }
        let width = rows[0].chars().count();
        let grid = MeshGrid::new(width, rows.len())?;
        let mut tiles = Vec::with_capacity(grid.tiles());
        for (y, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::Parse(format!(
                    "row {y} has {} tiles, expected {width}",
                    row.chars().count()
                )));
            }
            for (x, c) in row.chars().enumerate() {
                let kind = NodeKind::from_symbol(c).ok_or_else(|| {
                    Error::Parse(format!("unknown tile symbol `{c}` at ({x},{y})"))
                })?;
                tiles.push(kind);
            }
        }
        Ok(Placement::from_tiles(grid, tiles))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let doc = PlacementDoc {
            width: self.grid.width,
            height: self.grid.height,
            tiles: self
                .tiles
                .chunks(self.grid.width)
                .map(|r| r.to_vec())
                .collect(),
        };
        serde_json::to_value(doc).expect("placement serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PlacementDoc =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_doc(doc)
    }

    fn from_doc(doc: PlacementDoc) -> Result<Self> {
        let grid = MeshGrid::new(doc.width, doc.height)?;
        if doc.tiles.len() != grid.height || doc.tiles.iter().any(|r| r.len() != grid.width) {
            return Err(Error::Parse(format!(
                "tile rows do not match the declared {grid} grid"
            )));
        }
        Ok(Placement::from_tiles(grid, doc.tiles.concat()))
    }

    /// Image of this placement under a grid symmetry.
    pub fn transformed(&self, sym: Symmetry) -> Placement {
        let mut tiles = vec![NodeKind::RouterOnly; self.tiles.len()];
        for (i, &k) in self.tiles.iter().enumerate() {
            let c = sym.apply(self.grid, self.grid.coord(i));
            tiles[self.grid.index(c)] = k;
        }
        Placement {
            grid: self.grid,
            tiles,
            counts: self.counts,
        }
    }

    /// Lexicographically smallest image under the grid's symmetry group.
    pub fn canonical(&self) -> Placement {
        symmetry_orbit(self)
            .into_iter()
            .next()
            .expect("orbit contains the identity image")
    }

    pub fn with_kind(&self, c: Coord, kind: NodeKind) -> Placement {
        let mut tiles = self.tiles.clone();
        tiles[self.grid.index(c)] = kind;
        Placement::from_tiles(self.grid, tiles)
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl Serialize for Placement {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Placement {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let doc = PlacementDoc::deserialize(deserializer)?;
        Placement::from_doc(doc).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct PlacementDoc {
    width: usize,
    height: usize,
    tiles: Vec<Vec<NodeKind>>,
}

/// An element of the dihedral group of the grid: optional transpose, then
/// optional mirror of each axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Symmetry {
    pub transpose: bool,
    pub flip_x: bool,
    pub flip_y: bool,
}

impl Symmetry {
    pub const IDENTITY: Symmetry = Symmetry {
        transpose: false,
        flip_x: false,
        flip_y: false,
    };

    pub fn apply(&self, grid: MeshGrid, c: Coord) -> Coord {
        let (mut x, mut y) = if self.transpose {
            (c.y, c.x)
        } else {
            (c.x, c.y)
        };
        if self.flip_x {
            x = grid.width - 1 - x;
        }
        if self.flip_y {
            y = grid.height - 1 - y;
        }
        Coord::new(x, y)
    }
}

/// The 8 symmetries of a square grid, or the 4 of a rectangle.
pub fn symmetries(grid: MeshGrid) -> Vec<Symmetry> {
    let transposes: &[bool] = if grid.is_square() {
        &[false, true]
    } else {
        &[false]
    };
    let mut out = Vec::with_capacity(8);
    for &transpose in transposes {
        for flip_x in [false, true] {
            for flip_y in [false, true] {
                out.push(Symmetry {
                    transpose,
                    flip_x,
                    flip_y,
                });
            }
        }
    }
    out
}

/// Distinct images of `p` under the grid symmetries, sorted by [`Placement::key`].
pub fn symmetry_orbit(p: &Placement) -> Vec<Placement> {
    let mut images: BTreeMap<String, Placement> = BTreeMap::new();
    for sym in symmetries(p.grid) {
        let img = p.transformed(sym);
        images.entry(img.key()).or_insert(img);
    }
    images.into_values().collect()
}

fn factorial(n: usize) -> BigUint {
    (1..=n as u64).fold(BigUint::from(1u32), |acc, k| acc * k)
}

/// Number of distinct placements of the given counts on `n_tiles` tiles, the
/// multinomial `n! / (cores! caches! mcs! rest!)`.
pub fn placement_count(
    n_tiles: usize,
    n_cores: usize,
    n_caches: usize,
    n_mcs: usize,
) -> Result<BigUint> {
    let placed = n_cores + n_caches + n_mcs;
    if placed > n_tiles {
        return Err(Error::Infeasible(format!(
            "{placed} placed nodes exceed {n_tiles} tiles"
        )));
    }
    let denom =
        factorial(n_cores) * factorial(n_caches) * factorial(n_mcs) * factorial(n_tiles - placed);
    Ok(factorial(n_tiles) / denom)
}
