//! Placement of cores, shared caches and memory controllers on a mesh
//! network-on-chip, with analytical latency models, exact and heuristic placement
//! search, and a discrete-event simulator for validation.

pub mod canonical;
pub mod error;
pub mod latency;
pub mod mesh;
pub mod optimizer;
pub mod queueing;
pub mod routing;
pub mod sim;
pub mod stats;
pub mod traffic;

pub use canonical::{canonical_placement, CanonicalFamily};
pub use error::{Error, Result, Saturation};
pub use latency::{objective, LatencyReport, Mode, Terms};
pub use mesh::{placement_count, Coord, MeshGrid, NodeKind, Placement};
pub use routing::{build_flows, derive_channel_rates, xy_route, ChannelLoadMap, Flow, Port};
pub use traffic::{AccessPattern, TrafficSpec};
