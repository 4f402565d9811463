//! Command-line front end: ingest convex bodies and densities, run the
//! partition solvers, and emit JSON reports, CSV tables, and SVG renderings.
//!
//! Exit codes: 0 on success, 1 when a search finished without converging
//! (the report is still written, with an honest `converged` flag), 2 on
//! input errors.

mod emit;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use equipart::equipartition::{multi_measure_partition, search, EquipartitionError};
use equipart::geometry::parse_polygon;
use equipart::topology::{dimension_table, obstruction};
use equipart::transport::parse_grid_density;
use equipart::{ConvexPolygon, DensityField, EquipartitionResult, Functional, SearchOptions};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "equipart", version, about = "Equal-measure convex partitions of planar bodies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition a convex body into n convex cells of equal measure and
    /// equal functional value.
    Partition(PartitionArgs),
    /// Partition a convex body into n convex cells each holding 1/n of two
    /// measures simultaneously.
    Hamsandwich(HamSandwichArgs),
    /// Tabulate the prime-power obstruction: the gcd of the boundary
    /// coefficients C(n, n1) for each n.
    Obstruction(ObstructionArgs),
    /// Tabulate the tree-indexed cell decomposition of compactified
    /// configuration space by dimension.
    Trees(TreesArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum FunctionalKind {
    Perimeter,
    Diameter,
    Width,
    CentroidX,
}

impl FunctionalKind {
    fn name(self) -> &'static str {
        match self {
            FunctionalKind::Perimeter => "perimeter",
            FunctionalKind::Diameter => "diameter",
            FunctionalKind::Width => "width",
            FunctionalKind::CentroidX => "centroid-x",
        }
    }

    fn functional(self) -> Functional {
        match self {
            FunctionalKind::Perimeter => Functional::Perimeter,
            FunctionalKind::Diameter => Functional::Diameter,
            FunctionalKind::Width => Functional::Width,
            FunctionalKind::CentroidX => Functional::centroid_x(),
        }
    }
}

#[derive(Args)]
struct SearchFlags {
    /// Number of cells.
    #[arg(long)]
    n: usize,
    /// Transport mass tolerance (defaults per density kind).
    #[arg(long)]
    tol: Option<f64>,
    /// Relative functional spread required for convergence.
    #[arg(long, default_value_t = 1e-5)]
    spread_tol: f64,
    /// RNG seed for the multi-start search.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of multi-start attempts.
    #[arg(long, default_value_t = 8)]
    starts: usize,
    /// Worker threads for the multi-start search.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory for the report artifacts.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

impl SearchFlags {
    fn options(&self) -> SearchOptions {
        SearchOptions {
            spread_tol: self.spread_tol,
            transport_tol: self.tol,
            starts: self.starts,
            seed: self.seed,
            jobs: self.jobs,
            ..SearchOptions::default()
        }
    }
}

#[derive(Args)]
struct PartitionArgs {
    /// Polygon file: one "x y" vertex per line, counterclockwise.
    #[arg(long)]
    body: PathBuf,
    /// Density: "uniform" or a grid density file.
    #[arg(long, default_value = "uniform")]
    density: String,
    /// Functional to equalize across cells.
    #[arg(long, value_enum, default_value_t = FunctionalKind::Perimeter)]
    functional: FunctionalKind,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(Args)]
struct HamSandwichArgs {
    /// Polygon file: one "x y" vertex per line, counterclockwise.
    #[arg(long)]
    body: PathBuf,
    /// Densities: "uniform" or grid density files; exactly two.
    #[arg(long, num_args = 1, action = clap::ArgAction::Append)]
    density: Vec<String>,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(Args)]
struct ObstructionArgs {
    /// Largest n to tabulate (at most 512).
    #[arg(long, default_value_t = 64)]
    n_max: usize,
    /// Output directory; prints to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TreesArgs {
    /// Number of tree leaves (points being configured).
    #[arg(long)]
    n: usize,
    /// Ambient dimension (maximum tree height).
    #[arg(long)]
    d: usize,
    /// Output directory; prints to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with its process exit code: 2 for input errors, 1 for runs
/// that finished without converging.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Failure {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn run(message: impl Into<String>) -> Failure {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Partition(args) => cmd_partition(&args),
        Command::Hamsandwich(args) => cmd_hamsandwich(&args),
        Command::Obstruction(args) => cmd_obstruction(&args),
        Command::Trees(args) => cmd_trees(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn read_body(path: &Path) -> Result<ConvexPolygon, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("cannot read body file {}: {e}", path.display())))?;
    parse_polygon(&text)
        .map_err(|e| Failure::input(format!("body file {}: {e}", path.display())))
}

fn read_density(spec: &str) -> Result<DensityField, Failure> {
    if spec == "uniform" {
        return Ok(DensityField::Uniform);
    }
    let text = fs::read_to_string(spec)
        .map_err(|e| Failure::input(format!("cannot read density file {spec}: {e}")))?;
    parse_grid_density(&text).map_err(|e| Failure::input(format!("density file {spec}: {e}")))
}

/// Search failures that indicate bad input rather than non-convergence.
fn search_failure(err: EquipartitionError) -> Failure {
    match err {
        EquipartitionError::BadCount(_)
        | EquipartitionError::EmptyBody
        | EquipartitionError::NeedTwoMeasures(_) => Failure::input(err.to_string()),
        other => Failure::run(other.to_string()),
    }
}

fn result_json(result: &EquipartitionResult) -> Value {
    json!({
        "sites": result
            .config
            .sites
            .iter()
            .map(|p| vec![p.x, p.y])
            .collect::<Vec<_>>(),
        "radii": result.config.radii,
        "cells": result
            .partition
            .cells
            .iter()
            .map(emit::polygon_json)
            .collect::<Vec<_>>(),
        "masses": result.masses,
        "functional_values": result.functional_values,
        "spread": result.spread,
        "mass_residual": result.mass_residual,
        "iterations": result.iterations,
        "converged": result.converged,
    })
}

fn write_artifacts(
    out: &Path,
    stem: &str,
    report: &Value,
    svg: &str,
) -> Result<(), Failure> {
    fs::create_dir_all(out)
        .map_err(|e| Failure::input(format!("cannot create {}: {e}", out.display())))?;
    let json_path = out.join(format!("{stem}.json"));
    emit::write_atomic(&json_path, &emit::json_bytes(report))
        .map_err(|e| Failure::input(format!("cannot write {}: {e}", json_path.display())))?;
    let svg_path = out.join(format!("{stem}.svg"));
    emit::write_atomic(&svg_path, svg.as_bytes())
        .map_err(|e| Failure::input(format!("cannot write {}: {e}", svg_path.display())))?;
    Ok(())
}

fn cmd_partition(args: &PartitionArgs) -> Result<(), Failure> {
    let body = read_body(&args.body)?;
    let density = read_density(&args.density)?;
    let functional = args.functional.functional();
    let result = search(&body, &density, args.search.n, &[functional], &args.search.options())
        .map_err(search_failure)?;

    let mut report = result_json(&result);
    let fields = report.as_object_mut().expect("report is an object");
    fields.insert("schema".into(), json!(1));
    fields.insert("command".into(), json!("partition"));
    fields.insert("n".into(), json!(args.search.n));
    fields.insert("seed".into(), json!(args.search.seed));
    fields.insert("functional".into(), json!(args.functional.name()));

    let svg = emit::partition_svg(&body, &result.partition.cells, &[&density]);
    write_artifacts(&args.search.out, "partition", &report, &svg)?;
    if result.converged {
        Ok(())
    } else {
        Err(Failure::run(format!(
            "search did not converge: spread {:.3e} (tolerance {:.3e})",
            result.spread, args.search.spread_tol,
        )))
    }
}

fn cmd_hamsandwich(args: &HamSandwichArgs) -> Result<(), Failure> {
    if args.density.len() != 2 {
        return Err(Failure::input(format!(
            "hamsandwich needs exactly two --density inputs, got {}",
            args.density.len(),
        )));
    }
    let body = read_body(&args.body)?;
    let measures = [read_density(&args.density[0])?, read_density(&args.density[1])?];
    let result = multi_measure_partition(&measures, &body, args.search.n, &args.search.options())
        .map_err(search_failure)?;

    // exact fraction of each measure held by each cell
    let fractions: Vec<Vec<f64>> = measures
        .iter()
        .map(|m| {
            let total = m.smooth_total_mass(&body);
            result
                .partition
                .cells
                .iter()
                .map(|cell| m.smooth_cell_mass(cell) / total)
                .collect()
        })
        .collect();

    let mut report = result_json(&result);
    let fields = report.as_object_mut().expect("report is an object");
    fields.insert("schema".into(), json!(1));
    fields.insert("command".into(), json!("hamsandwich"));
    fields.insert("n".into(), json!(args.search.n));
    fields.insert("seed".into(), json!(args.search.seed));
    fields.insert("mass_fractions".into(), json!(fractions));

    let svg = emit::partition_svg(
        &body,
        &result.partition.cells,
        &[&measures[0], &measures[1]],
    );
    write_artifacts(&args.search.out, "hamsandwich", &report, &svg)?;
    if result.converged {
        Ok(())
    } else {
        Err(Failure::run(format!(
            "search did not converge: spread {:.3e} (tolerance {:.3e})",
            result.spread, args.search.spread_tol,
        )))
    }
}

fn write_table(out: Option<&Path>, name: &str, csv: &str) -> Result<(), Failure> {
    match out {
        None => {
            print!("{csv}");
            Ok(())
        }
        Some(dir) => {
            fs::create_dir_all(dir)
                .map_err(|e| Failure::input(format!("cannot create {}: {e}", dir.display())))?;
            let path = dir.join(name);
            emit::write_atomic(&path, csv.as_bytes())
                .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
        }
    }
}

fn cmd_obstruction(args: &ObstructionArgs) -> Result<(), Failure> {
    if args.n_max < 2 || args.n_max > 512 {
        return Err(Failure::input(format!(
            "--n-max must be between 2 and 512, got {}",
            args.n_max,
        )));
    }
    let mut csv = String::from("n,gcd,is_prime_power,p\n");
    for n in 2..=args.n_max {
        let report = obstruction(n).map_err(|e| Failure::input(e.to_string()))?;
        let p = report.p.map(|p| p.to_string()).unwrap_or_default();
        writeln!(csv, "{},{},{},{}", n, report.gcd, report.is_prime_power, p)
            .expect("string write cannot fail");
    }
    write_table(args.out.as_deref(), "obstruction.csv", &csv)
}

fn cmd_trees(args: &TreesArgs) -> Result<(), Failure> {
    let table = dimension_table(args.n, args.d).map_err(|e| Failure::input(e.to_string()))?;
    let mut csv = String::from("dimension,unlabeled_count,labeled_count\n");
    for row in table {
        writeln!(csv, "{},{},{}", row.dimension, row.unlabeled, row.labeled)
            .expect("string write cannot fail");
    }
    write_table(args.out.as_deref(), "trees.csv", &csv)
}
