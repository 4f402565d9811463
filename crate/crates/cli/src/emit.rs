//! Deterministic artifact emission: JSON reports with fixed-width float
//! formatting, CSV tables, and SVG renderings of partitions. All files are
//! written atomically (temp file + rename) so a crashed run never leaves a
//! truncated artifact behind.

use std::fs;
use std::io;
use std::path::Path;

use equipart::transport::GridDensity;
use equipart::{ConvexPolygon, DensityField, Point2};
use serde::Serialize;
use serde_json::Value;

/// JSON formatter printing every float with 17 significant digits so that
/// identical runs produce byte-identical reports and values round-trip.
struct SigFig17;

impl serde_json::ser::Formatter for SigFig17 {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

/// Serializes a JSON value with 17-significant-digit floats and a trailing
/// newline.
pub fn json_bytes(value: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigFig17);
    value
        .serialize(&mut ser)
        .expect("in-memory JSON serialization cannot fail");
    out.push(b'\n');
    out
}

/// Writes bytes atomically: to a sibling temp file first, then renamed
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes)?;
    fs::rename(tmp, path)
}

/// JSON vertex list of a polygon: `[[x, y], ...]`.
pub fn polygon_json(poly: &ConvexPolygon) -> Value {
    Value::Array(
        poly.vertices()
            .iter()
            .map(|p| Value::Array(vec![p.x.into(), p.y.into()]))
            .collect(),
    )
}

const CELL_FILLS: &[&str] = &[
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c",
    "#ccb974", "#64b5cd",
];

const HEAT_FILLS: &[&str] = &["#1f77b4", "#d62728"];

/// Maps body coordinates into a fixed 1000-unit SVG viewbox (y flipped to
/// SVG's downward axis), scaled isotropically to the body's bounding box.
struct ViewMap {
    lo: Point2,
    scale: f64,
}

impl ViewMap {
    fn new(body: &ConvexPolygon) -> ViewMap {
        let (lo, hi) = body
            .bounding_box()
            .expect("render target must be nonempty");
        let extent = (hi.x - lo.x).max(hi.y - lo.y).max(f64::MIN_POSITIVE);
        ViewMap {
            lo,
            scale: 1000.0 / extent,
        }
    }

    fn point(&self, p: Point2) -> (f64, f64) {
        (
            (p.x - self.lo.x) * self.scale,
            1000.0 - (p.y - self.lo.y) * self.scale,
        )
    }

    fn points_attr(&self, poly: &ConvexPolygon) -> String {
        poly.vertices()
            .iter()
            .map(|&p| {
                let (x, y) = self.point(p);
                format!("{x},{y}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Renders a partition as SVG: the body outline, one polygon per cell
/// (vertex lists exactly as reported, no smoothing), and optionally a
/// density heatmap underneath (one translucent rect per grid pixel).
pub fn partition_svg(
    body: &ConvexPolygon,
    cells: &[ConvexPolygon],
    heatmaps: &[&DensityField],
) -> String {
    let view = ViewMap::new(body);
    let mut svg = String::new();
    svg.push_str(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 1000 1000\" \
         width=\"1000\" height=\"1000\">\n",
    );
    for (k, density) in heatmaps.iter().enumerate() {
        if let DensityField::Grid(grid) = density {
            heatmap_rects(&mut svg, &view, grid, HEAT_FILLS[k % HEAT_FILLS.len()]);
        }
    }
    for (i, cell) in cells.iter().enumerate() {
        if cell.is_empty() {
            continue;
        }
        svg.push_str(&format!(
            "  <polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.35\" \
             stroke=\"black\" stroke-width=\"1.5\"/>\n",
            view.points_attr(cell),
            CELL_FILLS[i % CELL_FILLS.len()],
        ));
    }
    svg.push_str(&format!(
        "  <polygon points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"3\"/>\n",
        view.points_attr(body),
    ));
    svg.push_str("</svg>\n");
    svg
}

fn heatmap_rects(svg: &mut String, view: &ViewMap, grid: &GridDensity, fill: &str) {
    let max = grid
        .values()
        .iter()
        .cloned()
        .fold(f64::MIN_POSITIVE, f64::max);
    let side = grid.cell_size * view.scale;
    for row in 0..grid.height {
        for col in 0..grid.width {
            let v = grid.values()[row * grid.width + col];
            if v <= 0.0 {
                continue;
            }
            let corner = Point2::new(
                grid.origin.x + col as f64 * grid.cell_size,
                grid.origin.y + (row + 1) as f64 * grid.cell_size,
            );
            let (x, y) = view.point(corner);
            svg.push_str(&format!(
                "  <rect x=\"{x}\" y=\"{y}\" width=\"{side}\" height=\"{side}\" \
                 fill=\"{fill}\" fill-opacity=\"{}\"/>\n",
                0.5 * v / max,
            ));
        }
    }
}
