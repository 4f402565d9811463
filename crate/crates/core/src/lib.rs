//! Equal-measure convex partitions of planar convex bodies.
//!
//! The geometric engine builds truncated power diagrams (`power_diagram`),
//! solves the semi-discrete optimal transport problem that pins prescribed
//! masses onto the cells (`transport`), and searches site configurations
//! whose equal-mass partition also equalizes a continuous functional such
//! as perimeter (`equipartition`). A separate combinatorial module
//! (`topology`) enumerates the tree-indexed cell decomposition of
//! compactified configuration space and computes the binomial boundary
//! coefficients whose gcd detects the prime-power dichotomy.

pub mod equipartition;
pub mod geometry;
pub mod optim;
pub mod power_diagram;
pub mod topology;
pub mod transport;

pub use equipartition::{EquipartitionResult, Functional, SearchOptions};
pub use geometry::{ConvexPolygon, HalfPlane, Point2};
pub use power_diagram::{PowerPartition, WeightedConfiguration};
pub use transport::{DensityField, MassTargets};

