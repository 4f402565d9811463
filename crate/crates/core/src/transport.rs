//! Semi-discrete optimal transport on a convex body: given a density on K,
//! sites, and target masses, find the radii whose truncated power cells
//! carry exactly those masses. The solver ascends the concave Kantorovich
//! dual with damped Newton steps (Hessian = density-weighted adjacency
//! Laplacian) and falls back to plain gradient steps while cells are still
//! empty or the adjacency graph is degenerate.

use crate::geometry::{ConvexPolygon, Point2};
use crate::power_diagram::{
    build, shared_edge_geometry, PowerDiagramError, PowerPartition,
    WeightedConfiguration,
};
use thiserror::Error;

/// Default mass tolerance for uniform densities (masses are exact polygon
/// areas).
pub const DEFAULT_TOL_UNIFORM: f64 = 1e-9;
/// Default mass tolerance for grid densities (the solver balances the
/// continuous partial-pixel masses, but they carry more float noise than
/// exact polygon areas).
pub const DEFAULT_TOL_GRID: f64 = 1e-6;
/// Iteration budget for the dual ascent.
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("targets must be positive, got q[{0}] = {1}")]
    NonPositiveTarget(usize, f64),
    #[error("targets sum to {sum} but total mass is {total}")]
    TargetSumMismatch { sum: f64, total: f64 },
    #[error("target count {targets} does not match site count {sites}")]
    TargetCountMismatch { targets: usize, sites: usize },
    #[error("grid density must have positive total mass")]
    DegenerateDensity,
    #[error(
        "dual ascent did not reach tolerance {tol} within {iterations} iterations \
         (best residual {best_residual})"
    )]
    NonConvergence {
        tol: f64,
        iterations: usize,
        best_residual: f64,
    },
    #[error(transparent)]
    PowerDiagram(#[from] PowerDiagramError),
}

/// The source measure: uniform Lebesgue density on the body, or a
/// nonnegative raster density sampled at grid-cell centers.
#[derive(Debug, Clone)]
pub enum DensityField {
    Uniform,
    Grid(GridDensity),
}

/// Raster density with per-row prefix sums of `v`, `v*x`, and `v*x^2`
/// (x = column center abscissa), so that cell masses and quadratic
/// transport costs are O(rows) per query instead of O(pixels).
#[derive(Debug, Clone)]
pub struct GridDensity {
    pub origin: Point2,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    values: Vec<f64>,
    p0: Vec<f64>,
    p1: Vec<f64>,
    p2: Vec<f64>,
    /// `qe[row][c] = integral from x_edge(0) to x_edge(c) of P_row`, where
    /// `P_row(x) = integral of the row's density up to x`; lets the exact
    /// (partial-pixel) polygon mass integrate `P_row` along a slanted
    /// boundary segment in O(1).
    qe: Vec<f64>,
}

impl GridDensity {
    pub fn new(
        origin: Point2,
        cell_size: f64,
        width: usize,
        height: usize,
        values: Vec<f64>,
    ) -> Self {
        assert_eq!(values.len(), width * height, "grid value count mismatch");
        assert!(cell_size > 0.0, "grid cell size must be positive");
        assert!(
            values.iter().all(|v| v.is_finite() && *v >= 0.0),
            "grid values must be finite and nonnegative"
        );
        let stride = width + 1;
        let mut p0 = vec![0.0; height * stride];
        let mut p1 = vec![0.0; height * stride];
        let mut p2 = vec![0.0; height * stride];
        let mut qe = vec![0.0; height * stride];
        for row in 0..height {
            for col in 0..width {
                let v = values[row * width + col];
                let xc = origin.x + (col as f64 + 0.5) * cell_size;
                let k = row * stride + col;
                p0[k + 1] = p0[k] + v;
                p1[k + 1] = p1[k] + v * xc;
                p2[k + 1] = p2[k] + v * xc * xc;
                // P at the left edge of this column is p0[k] * h
                qe[k + 1] =
                    qe[k] + p0[k] * cell_size * cell_size + 0.5 * v * cell_size * cell_size;
            }
        }
        GridDensity {
            origin,
            cell_size,
            width,
            height,
            values,
            p0,
            p1,
            p2,
            qe,
        }
    }

    /// Row-major, `values()[row * width + col]`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Pixel rows whose center line can meet the cell.
    fn row_span(&self, cell: &ConvexPolygon) -> (usize, usize) {
        let Some((lo, hi)) = cell.bounding_box() else {
            return (0, 0);
        };
        let h = self.cell_size;
        let row0 = (((lo.y - self.origin.y) / h - 0.5).ceil().max(0.0)) as usize;
        let row1 = ((((hi.y - self.origin.y) / h - 0.5).floor() + 1.0).max(0.0)
            as usize)
            .min(self.height);
        (row0, row1.max(row0))
    }

    /// Columns whose center lies in the cell on the given row, as a
    /// half-open range. The convex cell cuts a single x-interval out of
    /// each row line, obtained from the edge constraints
    /// `cross(b - a, p - a) >= 0` intersected with `y = yc`.
    fn col_span(&self, cell: &ConvexPolygon, row: usize) -> (usize, usize) {
        let h = self.cell_size;
        let yc = self.origin.y + (row as f64 + 0.5) * h;
        let Some((xlo, xhi)) = x_interval_at(cell, yc) else {
            return (0, 0);
        };
        let col0 = (((xlo - self.origin.x) / h - 0.5).ceil().max(0.0)) as usize;
        let col1 = ((((xhi - self.origin.x) / h - 0.5).floor() + 1.0).max(0.0)
            as usize)
            .min(self.width);
        (col0, col1.max(col0))
    }

    /// `P_row(x)`: row mass integrated in x up to `x` (per unit height).
    fn p_at(&self, row: usize, x: f64) -> f64 {
        let h = self.cell_size;
        let stride = self.width + 1;
        let t = (x - self.origin.x) / h;
        if t <= 0.0 {
            return 0.0;
        }
        if t >= self.width as f64 {
            return self.p0[row * stride + self.width] * h;
        }
        let c = (t as usize).min(self.width - 1);
        let v = self.values[row * self.width + c];
        self.p0[row * stride + c] * h + v * (x - (self.origin.x + c as f64 * h))
    }

    /// `Q_row(x) = integral of P_row up to x` (per unit height).
    fn q_at(&self, row: usize, x: f64) -> f64 {
        let h = self.cell_size;
        let stride = self.width + 1;
        let t = (x - self.origin.x) / h;
        if t <= 0.0 {
            return 0.0;
        }
        if t >= self.width as f64 {
            let k = row * stride + self.width;
            return self.qe[k] + self.p0[k] * h * (x - (self.origin.x + self.width as f64 * h));
        }
        let c = (t as usize).min(self.width - 1);
        let k = row * stride + c;
        let v = self.values[row * self.width + c];
        let dx = x - (self.origin.x + c as f64 * h);
        self.qe[k] + self.p0[k] * h * dx + 0.5 * v * dx * dx
    }

    /// Average of `P_row` along the segment from `xa` to `xb`.
    fn p_avg(&self, row: usize, xa: f64, xb: f64) -> f64 {
        if (xb - xa).abs() <= 1e-14 * self.cell_size {
            return self.p_at(row, 0.5 * (xa + xb));
        }
        (self.q_at(row, xb) - self.q_at(row, xa)) / (xb - xa)
    }

    /// Exact integral of the (nearest-neighbor) raster density over the
    /// cell: partial pixels count pro-rata, so the mass varies continuously
    /// (piecewise smoothly) with the cell geometry. The polygon is cut into
    /// horizontal strips at pixel-row edges and polygon-vertex heights; on
    /// each strip the left/right boundaries are single straight edges, and
    /// the strip integral reduces to averaging `P_row` along them.
    fn smooth_mass(&self, cell: &ConvexPolygon) -> f64 {
        let verts = cell.vertices();
        if verts.len() < 3 {
            return 0.0;
        }
        let h = self.cell_size;
        let Some((lo, hi)) = cell.bounding_box() else {
            return 0.0;
        };
        let y0 = self.origin.y;
        let y1 = y0 + h * self.height as f64;
        let ylo = lo.y.max(y0);
        let yhi = hi.y.min(y1);
        if yhi <= ylo {
            return 0.0;
        }
        let mut breaks: Vec<f64> = Vec::with_capacity(
            ((yhi - ylo) / h) as usize + verts.len() + 2,
        );
        breaks.push(ylo);
        let mut r = ((ylo - y0) / h).floor() as usize + 1;
        while y0 + r as f64 * h < yhi {
            breaks.push(y0 + r as f64 * h);
            r += 1;
        }
        for v in verts {
            if v.y > ylo && v.y < yhi {
                breaks.push(v.y);
            }
        }
        breaks.push(yhi);
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());

        let mut mass = 0.0;
        for w in breaks.windows(2) {
            let (ya, yb) = (w[0], w[1]);
            if yb - ya <= 1e-14 * h {
                continue;
            }
            let ym = 0.5 * (ya + yb);
            let row = (((ym - y0) / h) as usize).min(self.height - 1);
            let (Some((la, ha)), Some((lb, hb))) =
                (x_interval_at(cell, ya), x_interval_at(cell, yb))
            else {
                continue;
            };
            mass += (yb - ya) * (self.p_avg(row, ha, hb) - self.p_avg(row, la, lb));
        }
        mass
    }

    fn mass(&self, cell: &ConvexPolygon) -> f64 {
        let pixel = self.cell_size * self.cell_size;
        let stride = self.width + 1;
        let (row0, row1) = self.row_span(cell);
        let mut sum = 0.0;
        for row in row0..row1 {
            let (c0, c1) = self.col_span(cell, row);
            sum += self.p0[row * stride + c1] - self.p0[row * stride + c0];
        }
        sum * pixel
    }

    /// `integral over cell of |x - site|^2 dmu` with center-membership
    /// pixels, via the per-row quadratic prefix sums.
    fn cost(&self, cell: &ConvexPolygon, site: Point2) -> f64 {
        let pixel = self.cell_size * self.cell_size;
        let stride = self.width + 1;
        let (row0, row1) = self.row_span(cell);
        let mut sum = 0.0;
        for row in row0..row1 {
            let (c0, c1) = self.col_span(cell, row);
            let (a, b) = (row * stride + c0, row * stride + c1);
            let s0 = self.p0[b] - self.p0[a];
            let s1 = self.p1[b] - self.p1[a];
            let s2 = self.p2[b] - self.p2[a];
            let yc = self.origin.y + (row as f64 + 0.5) * self.cell_size;
            let dy = yc - site.y;
            sum += s2 - 2.0 * site.x * s1 + (site.x * site.x + dy * dy) * s0;
        }
        sum * pixel
    }
}

/// The x-interval cut out of the line `y = const` by the convex cell
/// (`cross(b - a, p - a) >= 0` for every CCW edge), or `None` when the line
/// misses the cell.
fn x_interval_at(cell: &ConvexPolygon, y: f64) -> Option<(f64, f64)> {
    let verts = cell.vertices();
    let m = verts.len();
    if m < 3 {
        return None;
    }
    let mut xlo = f64::NEG_INFINITY;
    let mut xhi = f64::INFINITY;
    for i in 0..m {
        let a = verts[i];
        let b = verts[(i + 1) % m];
        let dy = b.y - a.y;
        let rhs = (b.x - a.x) * (y - a.y) + dy * a.x;
        if dy > 0.0 {
            xhi = xhi.min(rhs / dy);
        } else if dy < 0.0 {
            xlo = xlo.max(rhs / dy);
        } else if (b.x - a.x) * (y - a.y) < 0.0 {
            return None;
        }
    }
    // at a vertex the interval degenerates to a point and roundoff can
    // leave it inverted by an ulp; collapse it instead of reporting a miss
    let tol = 1e-9 * (1.0 + xlo.abs() + xhi.abs());
    if xhi < xlo - tol {
        return None;
    }
    if xhi < xlo {
        let mid = 0.5 * (xlo + xhi);
        return Some((mid, mid));
    }
    Some((xlo, xhi))
}

impl DensityField {
    pub fn grid(
        origin: Point2,
        cell_size: f64,
        width: usize,
        height: usize,
        values: Vec<f64>,
    ) -> Self {
        DensityField::Grid(GridDensity::new(origin, cell_size, width, height, values))
    }

    /// Mass of a cell. Uniform density is 1 per unit area; grid mass sums
    /// the pixels whose center lies in the cell (no partial-pixel area).
    pub fn cell_mass(&self, cell: &ConvexPolygon) -> f64 {
        if cell.is_empty() {
            return 0.0;
        }
        match self {
            DensityField::Uniform => cell.area(),
            DensityField::Grid(g) => g.mass(cell),
        }
    }

    /// Total mass carried on the body.
    pub fn total_mass(&self, body: &ConvexPolygon) -> f64 {
        self.cell_mass(body)
    }

    /// Exact integral of the density over the cell: like [`cell_mass`] but
    /// boundary pixels count with their covered fraction, so the value is
    /// continuous in the cell geometry. The dual solver balances these
    /// masses (center-membership masses are quantized and can pin the
    /// residual above any tolerance); reported masses stay center-based.
    ///
    /// [`cell_mass`]: DensityField::cell_mass
    pub fn smooth_cell_mass(&self, cell: &ConvexPolygon) -> f64 {
        if cell.is_empty() {
            return 0.0;
        }
        match self {
            DensityField::Uniform => cell.area(),
            DensityField::Grid(g) => g.smooth_mass(cell),
        }
    }

    /// Total [`smooth_cell_mass`] on the body.
    ///
    /// [`smooth_cell_mass`]: DensityField::smooth_cell_mass
    pub fn smooth_total_mass(&self, body: &ConvexPolygon) -> f64 {
        self.smooth_cell_mass(body)
    }

    /// Density value at a point (0 outside the grid); uniform density is 1.
    pub fn value_at(&self, p: Point2) -> f64 {
        match self {
            DensityField::Uniform => 1.0,
            DensityField::Grid(g) => {
                let col = ((p.x - g.origin.x) / g.cell_size).floor();
                let row = ((p.y - g.origin.y) / g.cell_size).floor();
                if col < 0.0 || row < 0.0 {
                    return 0.0;
                }
                let (col, row) = (col as usize, row as usize);
                if col >= g.width || row >= g.height {
                    return 0.0;
                }
                g.values[row * g.width + col]
            }
        }
    }

    /// `sum_i integral over C_i of |x - x_i|^2 dmu`: exact polygon second
    /// moments for the uniform density, pixel sums for grids.
    pub fn transport_cost(&self, partition: &PowerPartition, sites: &[Point2]) -> f64 {
        let mut cost = 0.0;
        for (cell, site) in partition.cells.iter().zip(sites) {
            if cell.is_empty() {
                continue;
            }
            match self {
                DensityField::Uniform => cost += polygon_second_moment(cell, *site),
                DensityField::Grid(g) => cost += g.cost(cell, *site),
            }
        }
        cost
    }

    /// Restriction of the density to a subcell, for recursive partitioning.
    /// Uniform stays uniform (the subcell is the new body); grid values
    /// outside the subcell are zeroed using center membership.
    pub fn restrict_to(&self, cell: &ConvexPolygon) -> DensityField {
        match self {
            DensityField::Uniform => DensityField::Uniform,
            DensityField::Grid(g) => {
                let mut masked = vec![0.0; g.values.len()];
                let (row0, row1) = g.row_span(cell);
                for row in row0..row1 {
                    let (c0, c1) = g.col_span(cell, row);
                    masked[row * g.width + c0..row * g.width + c1]
                        .copy_from_slice(&g.values[row * g.width + c0..row * g.width + c1]);
                }
                DensityField::grid(g.origin, g.cell_size, g.width, g.height, masked)
            }
        }
    }
}

/// Exact `integral over poly of |x - a|^2 dx` by fan triangulation.
fn polygon_second_moment(poly: &ConvexPolygon, a: Point2) -> f64 {
    let verts = poly.vertices();
    if verts.len() < 3 {
        return 0.0;
    }
    let p0 = verts[0].sub(a);
    let mut total = 0.0;
    for i in 1..verts.len() - 1 {
        let p1 = verts[i].sub(a);
        let p2 = verts[i + 1].sub(a);
        let tri_area = 0.5 * p1.sub(p0).cross(p2.sub(p0));
        total += tri_area / 6.0
            * (p0.norm_sq()
                + p1.norm_sq()
                + p2.norm_sq()
                + p0.dot(p1)
                + p1.dot(p2)
                + p2.dot(p0));
    }
    total
}

/// Prescribed cell masses; positive and summing to the total mass.
#[derive(Debug, Clone)]
pub struct MassTargets {
    pub q: Vec<f64>,
}

impl MassTargets {
    pub fn new(q: Vec<f64>, total_mass: f64) -> Result<Self, TransportError> {
        for (i, qi) in q.iter().enumerate() {
            if !(qi > &0.0) {
                return Err(TransportError::NonPositiveTarget(i, *qi));
            }
        }
        let sum: f64 = q.iter().sum();
        if (sum - total_mass).abs() > 1e-9 * total_mass.abs().max(1.0) {
            return Err(TransportError::TargetSumMismatch {
                sum,
                total: total_mass,
            });
        }
        Ok(Self { q })
    }

    /// The equal split `total / n` per cell.
    pub fn equal(n: usize, total_mass: f64) -> Self {
        Self {
            q: vec![total_mass / n as f64; n],
        }
    }
}

/// Kantorovich dual objective
/// `Phi(r) = sum_i q_i r_i + sum_i integral over C_i of (|x-x_i|^2 - r_i) dmu`.
/// Concave in r; its gradient is `q_i - mu(C_i)`.
pub fn dual_objective(
    config: &WeightedConfiguration,
    partition: &PowerPartition,
    density: &DensityField,
    targets: &MassTargets,
) -> f64 {
    let mut phi = 0.0;
    for i in 0..config.len() {
        let mass = density.cell_mass(&partition.cells[i]);
        phi += targets.q[i] * config.radii[i] - config.radii[i] * mass;
    }
    phi + density.transport_cost(partition, &config.sites)
}

/// Options for [`solve_radii_with`].
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial radii; zeros (Voronoi) when absent.
    pub initial_radii: Option<Vec<f64>>,
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            max_iter: DEFAULT_MAX_ITER,
            initial_radii: None,
        }
    }
}

/// Solves for radii such that `|mu(C_i) - q_i| <= tol * mu(K)` for all i,
/// returned shift-normalized (`r_n = 0`).
pub fn solve_radii(
    sites: &[Point2],
    density: &DensityField,
    body: &ConvexPolygon,
    targets: &MassTargets,
    tol: f64,
) -> Result<WeightedConfiguration, TransportError> {
    solve_radii_with(sites, density, body, targets, &SolveOptions::with_tol(tol))
}

pub fn solve_radii_with(
    sites: &[Point2],
    density: &DensityField,
    body: &ConvexPolygon,
    targets: &MassTargets,
    opts: &SolveOptions,
) -> Result<WeightedConfiguration, TransportError> {
    let relaxed = solve_radii_relaxed(sites, density, body, targets, opts)?;
    if relaxed.converged {
        Ok(relaxed.config)
    } else {
        Err(TransportError::NonConvergence {
            tol: opts.tol,
            iterations: relaxed.iterations,
            best_residual: relaxed.residual,
        })
    }
}

/// Best dual iterate found, even when the tolerance was not reached.
/// `residual` is `max_i |mu(C_i) - q_i| / mu(K)` at `config`.
#[derive(Debug, Clone)]
pub struct RelaxedSolve {
    pub config: WeightedConfiguration,
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Like [`solve_radii_with`] but never fails on slow convergence: raster
/// densities quantize cell masses (a bisector sweeping across a row of
/// pixel centers moves many pixels at once), so the prescribed tolerance
/// can be unreachable at special site configurations. Callers that can
/// tolerate an approximate balance — notably the outer equipartition
/// search, which penalizes the excess residual and moves the sites — get
/// the best iterate instead of an error.
pub fn solve_radii_relaxed(
    sites: &[Point2],
    density: &DensityField,
    body: &ConvexPolygon,
    targets: &MassTargets,
    opts: &SolveOptions,
) -> Result<RelaxedSolve, TransportError> {
    let n = sites.len();
    if targets.q.len() != n {
        return Err(TransportError::TargetCountMismatch {
            targets: targets.q.len(),
            sites: n,
        });
    }
    // the solver balances the continuous (partial-pixel) masses; targets
    // are rescaled onto the same total so that the residual can vanish
    let total = density.smooth_total_mass(body);
    if !(total > 0.0) {
        return Err(TransportError::DegenerateDensity);
    }
    if n == 1 {
        return Ok(RelaxedSolve {
            config: WeightedConfiguration::new(sites.to_vec(), vec![0.0])?,
            residual: 0.0,
            converged: true,
            iterations: 0,
        });
    }
    let q_sum: f64 = targets.q.iter().sum();
    let targets = MassTargets {
        q: targets.q.iter().map(|q| q * total / q_sum).collect(),
    };
    let targets = &targets;

    let radii = opts.initial_radii.clone().unwrap_or_else(|| vec![0.0; n]);
    let mut config = WeightedConfiguration::new(sites.to_vec(), radii)?.shift_normalized();
    let mut partition = build(&config, body)?;
    let mut masses = smooth_cell_masses(&partition, density);

    let min_q = targets.q.iter().cloned().fold(f64::INFINITY, f64::min);
    let min_mass0 = masses.iter().cloned().fold(f64::INFINITY, f64::min);
    // KMT-style guard keeping iterates away from the vanishing locus; when
    // the Voronoi start itself has small cells the guard relaxes to half of
    // the starting minimum so that progress remains possible.
    let mass_floor = (0.1 * min_q).min(0.5 * min_mass0.max(0.0));

    let mut best_residual = residual_norm(&masses, targets);
    let mut best_config = config.clone();
    for iteration in 0..opts.max_iter {
        let residual = residual_norm(&masses, targets);
        if residual < best_residual {
            best_residual = residual;
            best_config = config.clone();
        }
        if residual <= opts.tol * total {
            return Ok(RelaxedSolve {
                config: config.shift_normalized(),
                residual: residual / total,
                converged: true,
                iterations: iteration,
            });
        }

        let gradient: Vec<f64> = targets
            .q
            .iter()
            .zip(&masses)
            .map(|(q, m)| q - m)
            .collect();

        let newton = newton_direction(&config, &partition, density, &gradient);
        let grad_dir: Vec<f64> = gradient.clone();
        let directions: [Option<&Vec<f64>>; 2] = [newton.as_ref(), Some(&grad_dir)];

        // the line search accepts on the l2 residual: requiring the
        // max-norm to fall monotonically stalls when refilling an emptied
        // cell necessarily steals mass from a neighbor, while the l2 norm
        // decreases strictly along the gradient (the mass Jacobian is a
        // positive-semidefinite Laplacian)
        let residual_l2 = residual_norm_l2(&masses, targets);
        let mut advanced = false;
        'dirs: for dir in directions.into_iter().flatten() {
            let slope: f64 = dir.iter().zip(&gradient).map(|(d, g)| d * g).sum();
            if slope <= 0.0 {
                continue;
            }
            // backtracking line search on the mass residual with the mass
            // floor guard (damped Newton in KMT style)
            let mut alpha = 1.0;
            for _ in 0..40 {
                let candidate = WeightedConfiguration::new(
                    sites.to_vec(),
                    config
                        .radii
                        .iter()
                        .zip(dir)
                        .map(|(r, d)| r + alpha * d)
                        .collect(),
                )?;
                let cand_partition = build(&candidate, body)?;
                let cand_masses = smooth_cell_masses(&cand_partition, density);
                let floor_ok = cand_masses
                    .iter()
                    .zip(&targets.q)
                    .all(|(m, q)| *q <= 0.0 || *m >= mass_floor);
                let cand_residual = residual_norm_l2(&cand_masses, targets);
                if floor_ok && cand_residual < residual_l2 * (1.0 - 1e-4 * alpha) {
                    config = candidate;
                    partition = cand_partition;
                    masses = cand_masses;
                    advanced = true;
                    break 'dirs;
                }
                alpha *= 0.5;
            }
        }

        if !advanced {
            return Ok(RelaxedSolve {
                config: best_config.shift_normalized(),
                residual: best_residual / total,
                converged: false,
                iterations: iteration,
            });
        }
    }
    let final_residual = residual_norm(&masses, targets);
    if final_residual <= opts.tol * total {
        return Ok(RelaxedSolve {
            config: config.shift_normalized(),
            residual: final_residual / total,
            converged: true,
            iterations: opts.max_iter,
        });
    }
    if final_residual < best_residual {
        best_residual = final_residual;
        best_config = config;
    }
    Ok(RelaxedSolve {
        config: best_config.shift_normalized(),
        residual: best_residual / total,
        converged: false,
        iterations: opts.max_iter,
    })
}

pub fn cell_masses(partition: &PowerPartition, density: &DensityField) -> Vec<f64> {
    partition
        .cells
        .iter()
        .map(|c| density.cell_mass(c))
        .collect()
}

/// Per-cell [`DensityField::smooth_cell_mass`] (what the solver balances).
pub fn smooth_cell_masses(partition: &PowerPartition, density: &DensityField) -> Vec<f64> {
    partition
        .cells
        .iter()
        .map(|c| density.smooth_cell_mass(c))
        .collect()
}

fn residual_norm(masses: &[f64], targets: &MassTargets) -> f64 {
    masses
        .iter()
        .zip(&targets.q)
        .map(|(m, q)| (m - q).abs())
        .fold(0.0, f64::max)
}

fn residual_norm_l2(masses: &[f64], targets: &MassTargets) -> f64 {
    masses
        .iter()
        .zip(&targets.q)
        .map(|(m, q)| (m - q) * (m - q))
        .sum::<f64>()
        .sqrt()
}

/// Newton direction `L d = g` where `L` is the density-weighted adjacency
/// Laplacian (the negated dual Hessian) reduced by fixing the last radius.
/// Returns `None` while the system is singular (empty cells, disconnected
/// adjacency) so that the caller falls back to a gradient step.
fn newton_direction(
    config: &WeightedConfiguration,
    partition: &PowerPartition,
    density: &DensityField,
    gradient: &[f64],
) -> Option<Vec<f64>> {
    if partition.cells.iter().any(|c| c.is_empty()) {
        return None;
    }
    let n = config.len();
    let edges = shared_edge_geometry(config, partition).ok()?;
    let mut laplacian = vec![vec![0.0; n]; n];
    for (i, j, length, midpoint) in edges {
        let dist = config.sites[i].dist(config.sites[j]);
        // weight = (density along the shared edge) * length / (2 dist)
        let w = density.value_at(midpoint) * length / (2.0 * dist);
        laplacian[i][j] -= w;
        laplacian[j][i] -= w;
        laplacian[i][i] += w;
        laplacian[j][j] += w;
    }
    // reduced system in the first n-1 coordinates (r_n stays 0)
    let m = n - 1;
    let mut a = vec![vec![0.0; m]; m];
    let mut b = vec![0.0; m];
    for i in 0..m {
        b[i] = gradient[i];
        a[i][..m].copy_from_slice(&laplacian[i][..m]);
    }
    let mut d = solve_dense(&mut a, &mut b)?;
    d.push(0.0);
    Some(d)
}

/// Gaussian elimination with partial pivoting; `None` on (near-)singular.
fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()
        })?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in col + 1..n {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Convenience: solve for equal masses and build the resulting partition.
pub fn equal_mass_partition(
    sites: &[Point2],
    density: &DensityField,
    body: &ConvexPolygon,
    tol: f64,
) -> Result<(WeightedConfiguration, PowerPartition), TransportError> {
    let total = density.total_mass(body);
    let targets = MassTargets::equal(sites.len(), total);
    let config = solve_radii(sites, density, body, &targets, tol)?;
    let partition = build(&config, body)?;
    Ok((config, partition))
}

/// Parses the grid density text format: header
/// `width height origin_x origin_y cell_size`, then `height` rows of
/// `width` nonnegative values, row-major.
pub fn parse_grid_density(text: &str) -> Result<DensityField, String> {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split_whitespace())
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .into_iter();
    let mut next_num = |what: &str| -> Result<f64, String> {
        tokens
            .next()
            .ok_or_else(|| format!("missing {what}"))?
            .parse::<f64>()
            .map_err(|e| format!("bad {what}: {e}"))
    };
    let width = next_num("width")? as usize;
    let height = next_num("height")? as usize;
    let ox = next_num("origin_x")?;
    let oy = next_num("origin_y")?;
    let cell_size = next_num("cell_size")?;
    if width == 0 || height == 0 || !(cell_size > 0.0) {
        return Err("grid header must have positive dimensions".into());
    }
    let mut values = Vec::with_capacity(width * height);
    for k in 0..width * height {
        values.push(next_num(&format!("value {k}"))?);
    }
    if values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err("grid values must be finite and nonnegative".into());
    }
    if values.iter().sum::<f64>() <= 0.0 {
        return Err("grid density must have positive total mass".into());
    }
    Ok(DensityField::grid(
        Point2::new(ox, oy),
        cell_size,
        width,
        height,
        values,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{clip, unit_square, HalfPlane};
    use approx::assert_abs_diff_eq;

    fn left_half() -> ConvexPolygon {
        clip(
            &unit_square(),
            &HalfPlane::new(Point2::new(1.0, 0.0), 0.5).unwrap(),
        )
    }

    fn constant_grid(n: usize) -> DensityField {
        DensityField::grid(
            Point2::new(0.0, 0.0),
            1.0 / n as f64,
            n,
            n,
            vec![1.0; n * n],
        )
    }

    #[test]
    fn cell_mass_uniform() {
        assert_abs_diff_eq!(DensityField::Uniform.cell_mass(&left_half()), 0.5);
        assert_abs_diff_eq!(
            DensityField::Uniform.cell_mass(&ConvexPolygon::empty()),
            0.0
        );
    }

    #[test]
    fn cell_mass_grid_half_square() {
        let grid = constant_grid(100);
        let m = grid.cell_mass(&left_half());
        assert!((m - 0.5).abs() < 1e-2, "grid half mass {m}");
        assert_abs_diff_eq!(grid.total_mass(&unit_square()), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn smooth_mass_constant_grid_is_exact_area() {
        // partial pixels count pro-rata, so a constant raster reproduces
        // the polygon area exactly for any polygon inside the grid
        let grid = constant_grid(16);
        let tri = ConvexPolygon::new(vec![
            Point2::new(0.13, 0.11),
            Point2::new(0.87, 0.23),
            Point2::new(0.31, 0.79),
        ]);
        assert_abs_diff_eq!(grid.smooth_cell_mass(&tri), tri.area(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            grid.smooth_total_mass(&unit_square()),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(grid.smooth_cell_mass(&left_half()), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn smooth_mass_piecewise_grid_matches_clipped_areas() {
        // density 3 on the left half, 1 on the right: mass of a polygon is
        // 3 * area(left part) + 1 * area(right part)
        let n = 64;
        let h = 1.0 / n as f64;
        let values: Vec<f64> = (0..n * n)
            .map(|k| if (k % n) < n / 2 { 3.0 } else { 1.0 })
            .collect();
        let grid = DensityField::grid(Point2::new(0.0, 0.0), h, n, n, values);
        let tri = ConvexPolygon::new(vec![
            Point2::new(0.1, 0.1),
            Point2::new(0.9, 0.3),
            Point2::new(0.4, 0.9),
        ]);
        let left = clip(&tri, &HalfPlane::new(Point2::new(1.0, 0.0), 0.5).unwrap());
        let right = clip(&tri, &HalfPlane::new(Point2::new(-1.0, 0.0), -0.5).unwrap());
        let expected = 3.0 * left.area() + right.area();
        assert_abs_diff_eq!(grid.smooth_cell_mass(&tri), expected, epsilon = 1e-12);
    }

    #[test]
    fn smooth_mass_tracks_center_membership_mass() {
        let n = 128;
        let h = 1.0 / n as f64;
        let values: Vec<f64> = (0..n * n)
            .map(|k| 0.5 + ((k % n) as f64) / n as f64)
            .collect();
        let grid = DensityField::grid(Point2::new(0.0, 0.0), h, n, n, values);
        let quad = ConvexPolygon::new(vec![
            Point2::new(0.21, 0.08),
            Point2::new(0.93, 0.34),
            Point2::new(0.71, 0.88),
            Point2::new(0.09, 0.61),
        ]);
        let smooth = grid.smooth_cell_mass(&quad);
        let center = grid.cell_mass(&quad);
        // they differ by at most the boundary pixels' worth of mass
        let boundary_bound = 1.5 * quad.perimeter() * h * grid_max(&grid);
        assert!(
            (smooth - center).abs() <= boundary_bound,
            "smooth {smooth} vs center {center} (bound {boundary_bound})"
        );
    }

    fn grid_max(d: &DensityField) -> f64 {
        match d {
            DensityField::Grid(g) => g.max_value(),
            DensityField::Uniform => 1.0,
        }
    }

    #[test]
    fn solve_symmetric_two_sites() {
        let sites = [Point2::new(0.25, 0.5), Point2::new(0.75, 0.5)];
        let targets = MassTargets::equal(2, 1.0);
        let config =
            solve_radii(&sites, &DensityField::Uniform, &unit_square(), &targets, 1e-9)
                .unwrap();
        assert_abs_diff_eq!(config.radii[0], 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(config.radii[1], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn solve_asymmetric_two_sites() {
        // 1D closed form: the bisector must sit at x = 0.25, so
        // r_1 - r_2 = -0.25 under the r_n = 0 normalization
        let sites = [Point2::new(0.25, 0.5), Point2::new(0.75, 0.5)];
        let targets = MassTargets::new(vec![0.25, 0.75], 1.0).unwrap();
        let config =
            solve_radii(&sites, &DensityField::Uniform, &unit_square(), &targets, 1e-9)
                .unwrap();
        assert_abs_diff_eq!(config.radii[0], -0.25, epsilon = 1e-8);
        assert_abs_diff_eq!(config.radii[1], 0.0, epsilon = 1e-12);
        let part = build(&config, &unit_square()).unwrap();
        assert!((part.cells[0].area() - 0.25).abs() <= 1e-9);
    }

    #[test]
    fn solve_quadrant_sites() {
        let sites = [
            Point2::new(0.25, 0.25),
            Point2::new(0.75, 0.25),
            Point2::new(0.25, 0.75),
            Point2::new(0.75, 0.75),
        ];
        let targets = MassTargets::equal(4, 1.0);
        let config =
            solve_radii(&sites, &DensityField::Uniform, &unit_square(), &targets, 1e-9)
                .unwrap();
        for r in &config.radii {
            assert_abs_diff_eq!(*r, 0.0, epsilon = 1e-8);
        }
        let part = build(&config, &unit_square()).unwrap();
        for cell in &part.cells {
            assert_abs_diff_eq!(cell.area(), 0.25, epsilon = 1e-9);
        }
    }

    #[test]
    fn transport_cost_single_site_center() {
        let sites = [Point2::new(0.5, 0.5)];
        let config = WeightedConfiguration::voronoi(sites.to_vec()).unwrap();
        let part = build(&config, &unit_square()).unwrap();
        let cost = DensityField::Uniform.transport_cost(&part, &sites);
        assert_abs_diff_eq!(cost, 1.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn transport_cost_single_site_corner() {
        let sites = [Point2::new(0.0, 0.0)];
        let config = WeightedConfiguration::voronoi(sites.to_vec()).unwrap();
        let part = build(&config, &unit_square()).unwrap();
        let cost = DensityField::Uniform.transport_cost(&part, &sites);
        assert_abs_diff_eq!(cost, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn transport_cost_two_symmetric_sites() {
        // each half is a 0.5 x 1 rectangle with its site at the center, so
        // per half the second moment is (w^2 + h^2)/12 * area = 5/96 and the
        // total is 5/48; cross-checked by dense midpoint quadrature below
        let sites = [Point2::new(0.25, 0.5), Point2::new(0.75, 0.5)];
        let config = WeightedConfiguration::voronoi(sites.to_vec()).unwrap();
        let part = build(&config, &unit_square()).unwrap();
        let cost = DensityField::Uniform.transport_cost(&part, &sites);
        assert_abs_diff_eq!(cost, 5.0 / 48.0, epsilon = 1e-12);

        let k = 400;
        let h = 1.0 / k as f64;
        let mut quad = 0.0;
        for i in 0..k {
            for j in 0..k {
                let p = Point2::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                let site = if p.x <= 0.5 { sites[0] } else { sites[1] };
                quad += p.sub(site).norm_sq() * h * h;
            }
        }
        assert!((cost - quad).abs() < 1e-5, "quadrature {quad} vs exact {cost}");
    }

    #[test]
    fn dual_gradient_matches_finite_differences() {
        let sites = vec![
            Point2::new(0.2, 0.3),
            Point2::new(0.7, 0.6),
            Point2::new(0.45, 0.8),
        ];
        let targets = MassTargets::equal(3, 1.0);
        let density = DensityField::Uniform;
        let body = unit_square();
        let radii = vec![0.01, -0.02, 0.0];
        let eps = 1e-6;
        for i in 0..3 {
            let eval = |ri: f64| {
                let mut r = radii.clone();
                r[i] = ri;
                let c = WeightedConfiguration::new(sites.clone(), r).unwrap();
                let p = build(&c, &body).unwrap();
                dual_objective(&c, &p, &density, &targets)
            };
            let fd = (eval(radii[i] + eps) - eval(radii[i] - eps)) / (2.0 * eps);
            let config = WeightedConfiguration::new(sites.clone(), radii.clone()).unwrap();
            let part = build(&config, &body).unwrap();
            let analytic = targets.q[i] - density.cell_mass(&part.cells[i]);
            assert!(
                (fd - analytic).abs() < 1e-5,
                "site {i}: fd {fd} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn ascent_is_monotone_and_unique_up_to_shift() {
        let sites = vec![
            Point2::new(0.15, 0.2),
            Point2::new(0.8, 0.35),
            Point2::new(0.5, 0.75),
            Point2::new(0.3, 0.55),
        ];
        let body = unit_square();
        let targets = MassTargets::equal(4, 1.0);
        let tol = 1e-10;
        let a = solve_radii(&sites, &DensityField::Uniform, &body, &targets, tol).unwrap();
        let opts = SolveOptions {
            tol,
            max_iter: DEFAULT_MAX_ITER,
            initial_radii: Some(vec![0.05, -0.03, 0.02, 0.0]),
        };
        let b = solve_radii_with(&sites, &DensityField::Uniform, &body, &targets, &opts)
            .unwrap();
        for (x, y) in a.radii.iter().zip(&b.radii) {
            assert!((x - y).abs() <= 10.0 * tol.max(1e-9), "{x} vs {y}");
        }
    }

    #[test]
    fn radii_stable_under_site_perturbation() {
        let sites = vec![
            Point2::new(0.2, 0.25),
            Point2::new(0.75, 0.3),
            Point2::new(0.5, 0.8),
        ];
        let body = unit_square();
        let targets = MassTargets::equal(3, 1.0);
        let base = solve_radii(&sites, &DensityField::Uniform, &body, &targets, 1e-10)
            .unwrap();
        let delta = 1e-5;
        let moved: Vec<Point2> = sites
            .iter()
            .map(|p| Point2::new(p.x + delta, p.y - delta))
            .collect();
        let perturbed =
            solve_radii(&moved, &DensityField::Uniform, &body, &targets, 1e-10).unwrap();
        for (a, b) in base.radii.iter().zip(&perturbed.radii) {
            assert!((a - b).abs() <= 1e3 * delta, "radii moved by {}", (a - b).abs());
        }
    }

    #[test]
    fn grid_solver_reaches_pixel_tolerance() {
        let grid = constant_grid(128);
        let sites = [Point2::new(0.3, 0.4), Point2::new(0.7, 0.6)];
        let total = grid.total_mass(&unit_square());
        let targets = MassTargets::equal(2, total);
        let config =
            solve_radii(&sites, &grid, &unit_square(), &targets, 1e-4).unwrap();
        let part = build(&config, &unit_square()).unwrap();
        let masses = cell_masses(&part, &grid);
        for m in masses {
            assert!((m - total / 2.0).abs() <= 1e-4 * total);
        }
    }

    #[test]
    fn invalid_targets_rejected() {
        assert!(MassTargets::new(vec![0.5, -0.1, 0.6], 1.0).is_err());
        assert!(MassTargets::new(vec![0.5, 0.4], 1.0).is_err());
        assert!(MassTargets::new(vec![0.5, 0.5], 1.0).is_ok());
    }

    #[test]
    fn parse_grid_density_roundtrip() {
        let text = "2 2 0 0 0.5\n1 2\n3 4\n";
        let grid = parse_grid_density(text).unwrap();
        match &grid {
            DensityField::Grid(g) => {
                assert_eq!((g.width, g.height), (2, 2));
                assert_eq!(g.values(), &[1.0, 2.0, 3.0, 4.0]);
            }
            _ => panic!("expected grid"),
        }
        assert!(parse_grid_density("2 2 0 0 0.5\n1 2 3\n").is_err());
        assert!(parse_grid_density("0 2 0 0 0.5\n").is_err());
    }
}
