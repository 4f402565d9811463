//! Truncated power diagrams: cell construction by halfplane clipping,
//! adjacency detection from shared edges, and radii reconstruction from a
//! diagram by traversing that adjacency graph.

use crate::geometry::{clip, ConvexPolygon, GeometryError, HalfPlane, Point2};
use thiserror::Error;

/// Minimum pairwise site separation, relative to `diameter(K)`.
pub const SITE_SEPARATION_REL_TOL: f64 = 1e-9;
/// Minimum shared-edge length for adjacency, relative to `diameter(K)`.
pub const ADJACENCY_EDGE_REL_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum PowerDiagramError {
    #[error("sites {0} and {1} coincide (or are closer than the separation tolerance)")]
    CoincidentSites(usize, usize),
    #[error("sites and radii have different lengths ({sites} vs {radii})")]
    LengthMismatch { sites: usize, radii: usize },
    #[error("configuration must contain at least one site")]
    NoSites,
    #[error("cell {0} is empty; radii reconstruction is underdetermined")]
    EmptyCell(usize),
    #[error("adjacency graph is disconnected; radii reconstruction is underdetermined")]
    DisconnectedAdjacency,
    #[error("body polygon is empty")]
    EmptyBody,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Sites with their additive weights ("radii").
#[derive(Debug, Clone)]
pub struct WeightedConfiguration {
    pub sites: Vec<Point2>,
    pub radii: Vec<f64>,
}

impl WeightedConfiguration {
    pub fn new(sites: Vec<Point2>, radii: Vec<f64>) -> Result<Self, PowerDiagramError> {
        if sites.is_empty() {
            return Err(PowerDiagramError::NoSites);
        }
        if sites.len() != radii.len() {
            return Err(PowerDiagramError::LengthMismatch {
                sites: sites.len(),
                radii: radii.len(),
            });
        }
        Ok(Self { sites, radii })
    }

    /// Sites with zero radii (an ordinary Voronoi configuration).
    pub fn voronoi(sites: Vec<Point2>) -> Result<Self, PowerDiagramError> {
        let radii = vec![0.0; sites.len()];
        Self::new(sites, radii)
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Shifts all radii so the last one is zero. The diagram is unchanged.
    pub fn shift_normalized(&self) -> WeightedConfiguration {
        let last = *self.radii.last().expect("nonempty by construction");
        WeightedConfiguration {
            sites: self.sites.clone(),
            radii: self.radii.iter().map(|r| r - last).collect(),
        }
    }
}

/// The truncated power diagram of a configuration inside a convex body.
#[derive(Debug, Clone)]
pub struct PowerPartition {
    pub cells: Vec<ConvexPolygon>,
    /// Unordered index pairs (i < j) of cells sharing a positive-length edge.
    pub adjacency: Vec<(usize, usize)>,
    pub body: ConvexPolygon,
}

/// The power function `f_i(x) = |x - x_i|^2 - r_i`.
pub fn power_value(x: Point2, site: Point2, radius: f64) -> f64 {
    x.sub(site).norm_sq() - radius
}

/// Halfplane `{f_i <= f_j}` between two weighted sites. Its boundary meets
/// the segment direction `x_j - x_i` at directed distance
/// `(|x_i - x_j|^2 - r_j + r_i) / (2 |x_i - x_j|)` from `x_i`.
pub fn bisector(
    x_i: Point2,
    x_j: Point2,
    r_i: f64,
    r_j: f64,
) -> Result<HalfPlane, PowerDiagramError> {
    let d = x_j.sub(x_i);
    let dist = d.norm();
    if dist == 0.0 {
        return Err(PowerDiagramError::CoincidentSites(0, 0));
    }
    let u = d.scale(1.0 / dist);
    let t = (dist * dist - r_j + r_i) / (2.0 * dist);
    // boundary: u . x = u . x_i + t, with the cell of x_i on the <= side
    Ok(HalfPlane {
        normal: u,
        offset: u.dot(x_i) + t,
    })
}

fn check_separation(
    sites: &[Point2],
    body: &ConvexPolygon,
) -> Result<(), PowerDiagramError> {
    let diam = body.diameter().map_err(|_| PowerDiagramError::EmptyBody)?;
    let min_sep = SITE_SEPARATION_REL_TOL * diam;
    for i in 0..sites.len() {
        for j in i + 1..sites.len() {
            if sites[i].dist(sites[j]) <= min_sep {
                return Err(PowerDiagramError::CoincidentSites(i, j));
            }
        }
    }
    Ok(())
}

/// Builds the truncated power diagram `C(x, r)` intersected with `body`.
/// Cells may come out empty; that is a legitimate result, not an error.
pub fn build(
    config: &WeightedConfiguration,
    body: &ConvexPolygon,
) -> Result<PowerPartition, PowerDiagramError> {
    if body.is_empty() {
        return Err(PowerDiagramError::EmptyBody);
    }
    check_separation(&config.sites, body)?;
    let n = config.len();
    let mut cells = Vec::with_capacity(n);
    for i in 0..n {
        let mut cell = body.clone();
        for j in 0..n {
            if i == j || cell.is_empty() {
                continue;
            }
            let h = bisector(
                config.sites[i],
                config.sites[j],
                config.radii[i],
                config.radii[j],
            )?;
            cell = clip(&cell, &h);
        }
        cells.push(cell);
    }
    let adjacency = detect_adjacency(config, body, &cells)?;
    Ok(PowerPartition {
        cells,
        adjacency,
        body: body.clone(),
    })
}

/// Interval of a cell's footprint on the bisector line of sites i, j,
/// parametrized along the in-line direction. `None` when the cell has no
/// edge on that line.
fn footprint_on_line(
    cell: &ConvexPolygon,
    normal: Point2,
    offset: f64,
    tol: f64,
) -> Option<(f64, f64)> {
    let along = Point2::new(-normal.y, normal.x);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut hits = 0;
    for v in cell.vertices() {
        if (normal.dot(*v) - offset).abs() <= tol {
            let s = along.dot(*v);
            lo = lo.min(s);
            hi = hi.max(s);
            hits += 1;
        }
    }
    if hits >= 2 {
        Some((lo, hi))
    } else {
        None
    }
}

fn detect_adjacency(
    config: &WeightedConfiguration,
    body: &ConvexPolygon,
    cells: &[ConvexPolygon],
) -> Result<Vec<(usize, usize)>, PowerDiagramError> {
    let diam = body.diameter().map_err(|_| PowerDiagramError::EmptyBody)?;
    let on_line_tol = 1e-9 * diam;
    let min_edge = ADJACENCY_EDGE_REL_TOL * diam;
    let n = cells.len();
    let mut adjacency = Vec::new();
    for i in 0..n {
        if cells[i].is_empty() {
            continue;
        }
        for j in i + 1..n {
            if cells[j].is_empty() {
                continue;
            }
            let h = bisector(
                config.sites[i],
                config.sites[j],
                config.radii[i],
                config.radii[j],
            )?;
            let fi = footprint_on_line(&cells[i], h.normal, h.offset, on_line_tol);
            let fj = footprint_on_line(&cells[j], h.normal, h.offset, on_line_tol);
            if let (Some((a0, a1)), Some((b0, b1))) = (fi, fj) {
                let overlap = a1.min(b1) - a0.max(b0);
                if overlap > min_edge {
                    adjacency.push((i, j));
                }
            }
        }
    }
    Ok(adjacency)
}

/// Shared-edge geometry per adjacency pair: `(i, j, length, midpoint)`.
/// Used by the transport solver, whose dual Hessian weights each adjacency
/// by the density mass carried on the shared edge.
pub fn shared_edge_geometry(
    config: &WeightedConfiguration,
    partition: &PowerPartition,
) -> Result<Vec<(usize, usize, f64, Point2)>, PowerDiagramError> {
    let diam = partition
        .body
        .diameter()
        .map_err(|_| PowerDiagramError::EmptyBody)?;
    let on_line_tol = 1e-9 * diam;
    let mut out = Vec::with_capacity(partition.adjacency.len());
    for &(i, j) in &partition.adjacency {
        let h = bisector(
            config.sites[i],
            config.sites[j],
            config.radii[i],
            config.radii[j],
        )?;
        let fi = footprint_on_line(&partition.cells[i], h.normal, h.offset, on_line_tol);
        let fj = footprint_on_line(&partition.cells[j], h.normal, h.offset, on_line_tol);
        if let (Some((a0, a1)), Some((b0, b1))) = (fi, fj) {
            let lo = a0.max(b0);
            let hi = a1.min(b1);
            if hi > lo {
                let along = Point2::new(-h.normal.y, h.normal.x);
                let mid = along.scale(0.5 * (lo + hi)).add(h.normal.scale(h.offset));
                out.push((i, j, hi - lo, mid));
            }
        }
    }
    Ok(out)
}

/// Recovers the radii (normalized so the last one is zero) that produce
/// `partition` for the given sites, by inverting the bisector offset across
/// every shared edge and breadth-first traversing the adjacency graph.
///
/// Fails when any cell is empty or the adjacency graph is disconnected:
/// the difference `r_i - r_j` is only pinned down across shared edges.
pub fn reconstruct_radii(
    partition: &PowerPartition,
    sites: &[Point2],
) -> Result<Vec<f64>, PowerDiagramError> {
    let n = partition.cells.len();
    assert_eq!(sites.len(), n, "sites/cells length mismatch");
    for (i, cell) in partition.cells.iter().enumerate() {
        if cell.is_empty() {
            return Err(PowerDiagramError::EmptyCell(i));
        }
    }
    let diam = partition
        .body
        .diameter()
        .map_err(|_| PowerDiagramError::EmptyBody)?;
    let shared_tol = 1e-8 * diam;

    // r_i - r_j per adjacency edge, from the observed bisector position
    let mut diffs: Vec<(usize, usize, f64)> = Vec::with_capacity(partition.adjacency.len());
    for &(i, j) in &partition.adjacency {
        let d = sites[j].sub(sites[i]);
        let dist = d.norm();
        if dist == 0.0 {
            return Err(PowerDiagramError::CoincidentSites(i, j));
        }
        let u = d.scale(1.0 / dist);
        // points of cell i that also lie on cell j mark the shared edge
        let mut sum = 0.0;
        let mut count = 0usize;
        for v in partition.cells[i].vertices() {
            if partition.cells[j].distance_to_point(*v)? <= shared_tol {
                sum += u.dot(*v);
                count += 1;
            }
        }
        if count == 0 {
            continue;
        }
        let t = sum / count as f64 - u.dot(sites[i]);
        // Invert the bisector offset: t = (dist^2 - r_j + r_i) / (2 dist)
        diffs.push((i, j, 2.0 * dist * t - dist * dist));
    }

    // BFS from the last site with r = 0
    let mut radii = vec![f64::NAN; n];
    radii[n - 1] = 0.0;
    let mut queue = std::collections::VecDeque::from([n - 1]);
    while let Some(k) = queue.pop_front() {
        for &(i, j, rij) in &diffs {
            let (other, value) = if i == k {
                (j, radii[k] - rij)
            } else if j == k {
                (i, radii[k] + rij)
            } else {
                continue;
            };
            if radii[other].is_nan() {
                radii[other] = value;
                queue.push_back(other);
            }
        }
    }
    if radii.iter().any(|r| r.is_nan()) {
        return Err(PowerDiagramError::DisconnectedAdjacency);
    }
    Ok(radii)
}
