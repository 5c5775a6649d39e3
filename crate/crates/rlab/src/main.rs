//! `rlab`: batch driver for the restriction-lab workbench.
//!
//! Exit codes: 0 on success, 2 on input validation failure, 3 on budget
//! exhaustion, 1 on anything else.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use restriction_lab::battery;
use restriction_lab::field::{Field, GridSpec};
use restriction_lab::geom::{AxisBox, Vec2};
use restriction_lab::lab::{
    compute_tang_tran, emit_report, scan_decoupling, scan_theorem1, ReportFormat, RunConfig,
    ScanKind,
};
use restriction_lab::norms::{exp_sum_lp_torus, vinogradov_count, MeanValueProblem};
use restriction_lab::polypart::{
    partition, MassDistribution, Partition, PartitionConfig, Polynomial2, WeightedPoint,
};
use restriction_lab::tiles::{build_frequency_tiles, CurveParams, Tube};
use restriction_lab::variety::{sample_variety, tang_tran_split};
use restriction_lab::wavepacket::{decompose, tiling_carrier, DecomposeConfig};
use restriction_lab::Error as LabError;

#[derive(Parser)]
#[command(name = "rlab", about = "Numerical workbench for curve tilings, wave packets, polynomial partitioning, and exponential-sum mean values", version)]
struct Cli {
    /// JSON run configuration; flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for generated files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump the frequency tiling and one dual tube per tile as JSON.
    DumpTiles {
        #[arg(long = "N")]
        n: usize,
        #[arg(long)]
        d: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
    },
    /// Exact torus mean value of the exponential sum against the counting oracle.
    MeanValue {
        #[arg(long = "N")]
        n: usize,
        #[arg(long)]
        d: u32,
        #[arg(long)]
        s: u32,
        /// CSV of coefficients (re[,im] per line); unit coefficients if omitted.
        #[arg(long)]
        coeffs: Option<PathBuf>,
    },
    /// Polynomial partition of a point cloud: coefficients, masses, raster.
    Partition {
        /// CSV of points: x,y[,weight] per line.
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        degree: usize,
        /// Explicit domain "x0,y0,x1,y1" (default: padded point bounding box).
        #[arg(long, allow_hyphen_values = true)]
        domain: Option<String>,
        #[arg(long)]
        raster: Option<RasterFormat>,
    },
    /// Split a tube file against a polynomial's wall; emits class tables.
    Classify {
        /// JSON {"degree": k, "coeffs": [...]}.
        #[arg(long)]
        poly: PathBuf,
        /// JSON array of tubes {center, dir, length, width, dilation}.
        #[arg(long)]
        tubes: PathBuf,
        #[arg(long = "R")]
        r: usize,
        #[arg(long)]
        d: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
    },
    /// Wave-packet decomposition of a stored field; emits packet metadata JSONL.
    Decompose {
        /// Binary field file (see the field layout in the library docs).
        #[arg(long)]
        field: PathBuf,
        #[arg(long = "N")]
        n: usize,
        #[arg(long)]
        d: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        /// Region "x0,y0,x1,y1" (default: the field footprint).
        #[arg(long, allow_hyphen_values = true)]
        region: Option<String>,
    },
    /// Extension-operator scan across the configured tile counts.
    ScanSt,
    /// Decoupling scan (LHS/RHS ratio per tile count).
    ScanDec {
        #[arg(long, value_enum)]
        variant: DecVariant,
    },
    /// Tangential/transverse wall functionals of a seeded synthetic field.
    TangTran {
        #[arg(long = "N", default_value_t = 2)]
        n: usize,
    },
    /// Measured-constant batteries for the incidence lemmas.
    LemmaBattery {
        #[arg(long, value_enum)]
        which: Battery,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RasterFormat {
    Pgm,
    Svg,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecVariant {
    Conjecture2,
    Theorem2,
}

#[derive(Clone, Copy, ValueEnum)]
enum Battery {
    Wongkew,
    Segments,
    Incidence,
    Directions,
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = match err.downcast_ref::<LabError>() {
                Some(LabError::Validation(_)) | Some(LabError::GridTooCoarse(_)) => 2,
                Some(LabError::Budget(_)) => 3,
                _ => 1,
            };
            std::process::exit(code);
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = match &cli.config {
        Some(path) => {
            let body = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str::<RunConfig>(&body)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.display().to_string();
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    if config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global()
            .ok();
    }
    let out_dir = PathBuf::from(&config.out_dir);

    match cli.command {
        Command::DumpTiles { n, d, delta } => dump_tiles(n, d, delta),
        Command::MeanValue { n, d, s, coeffs } => mean_value(n, d, s, coeffs.as_deref()),
        Command::Partition { points, degree, domain, raster } => {
            run_partition(&config, &points, degree, domain, raster, &out_dir)
        }
        Command::Classify { poly, tubes, r, d, delta } => {
            run_classify(&poly, &tubes, r, d, delta)
        }
        Command::Decompose { field, n, d, delta, region } => {
            run_decompose(&field, n, d, delta, region)
        }
        Command::ScanSt => {
            let report = scan_theorem1(&config)?;
            let paths = emit_report(
                &report,
                &[ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg],
                &out_dir,
            )?;
            for p in paths {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::ScanDec { variant } => {
            let kind = match variant {
                DecVariant::Conjecture2 => ScanKind::Conjecture2,
                DecVariant::Theorem2 => ScanKind::Theorem2,
            };
            let report = scan_decoupling(&config, kind)?;
            let paths = emit_report(
                &report,
                &[ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg],
                &out_dir,
            )?;
            for p in paths {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::TangTran { n } => run_tang_tran(&config, n),
        Command::LemmaBattery { which } => run_battery(&config, which),
    }
}

fn parse_box(spec: &str) -> anyhow::Result<AxisBox> {
    let vals: Vec<f64> = spec
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("expected x0,y0,x1,y1, got {spec}"))?;
    if vals.len() != 4 {
        return Err(LabError::validation(format!("expected 4 box coordinates, got {}", vals.len())).into());
    }
    Ok(AxisBox::from_corners(vals[0], vals[1], vals[2], vals[3]))
}

fn dump_tiles(n: usize, d: f64, delta: f64) -> anyhow::Result<()> {
    let params = CurveParams::new(d, n)?;
    let tiles = build_frequency_tiles(&params);
    let origin = AxisBox::new(Vec2::ZERO, Vec2::ZERO);
    let records: Vec<serde_json::Value> = tiles
        .iter()
        .map(|rect| {
            let tube =
                restriction_lab::tiles::dual_tube_lattice(rect, &origin, delta).map(|t| t[0]);
            serde_json::json!({
                "index": rect.index,
                "center": [rect.center.x, rect.center.y],
                "tangent": [rect.tangent.x, rect.tangent.y],
                "long_side": rect.long_side,
                "short_side": rect.short_side,
                "tube": tube.ok().map(|t| serde_json::json!({
                    "center": [t.center.x, t.center.y],
                    "dir": [t.dir.x, t.dir.y],
                    "length": t.length,
                    "width": t.width,
                    "dilation": t.dilation,
                })),
            })
        })
        .collect();
    println!("{}", serde_json::to_string_pretty(&records)?);
    Ok(())
}

fn mean_value(n: usize, d: u32, s: u32, coeffs: Option<&Path>) -> anyhow::Result<()> {
    let record = match coeffs {
        None => {
            let prob = MeanValueProblem::unit(n, d, s)?;
            let value = exp_sum_lp_torus(&prob)?;
            let oracle = vinogradov_count(n, s, d)? as f64;
            serde_json::json!({
                "value": value,
                "oracle": oracle,
                "relative_gap": (value - oracle).abs() / oracle,
            })
        }
        Some(path) => {
            let body = std::fs::read_to_string(path)
                .with_context(|| format!("reading coefficients {}", path.display()))?;
            let mut parsed = Vec::new();
            for line in body.lines() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let mut parts = line.split(',').map(str::trim);
                let re: f64 = parts
                    .next()
                    .ok_or_else(|| anyhow!("empty coefficient line"))?
                    .parse()
                    .with_context(|| format!("bad coefficient line: {line}"))?;
                let im: f64 = match parts.next() {
                    Some(v) => v.parse().with_context(|| format!("bad line: {line}"))?,
                    None => 0.0,
                };
                parsed.push(Complex64::new(re, im));
            }
            let prob = MeanValueProblem::new(n, d, s, parsed)?;
            let value = exp_sum_lp_torus(&prob)?;
            serde_json::json!({
                "value": value,
                "oracle": serde_json::Value::Null,
                "relative_gap": serde_json::Value::Null,
            })
        }
    };
    println!("{record}");
    Ok(())
}

fn read_points_csv(path: &Path) -> anyhow::Result<Vec<WeightedPoint>> {
    let body = std::fs::read_to_string(path)
        .with_context(|| format!("reading points {}", path.display()))?;
    let mut points = Vec::new();
    for line in body.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let x: f64 = match fields[0].parse() {
            Ok(v) => v,
            Err(_) => continue, // header line
        };
        let y: f64 = fields
            .get(1)
            .ok_or_else(|| anyhow!("point line needs x,y: {line}"))?
            .parse()?;
        let weight: f64 = match fields.get(2) {
            Some(w) => w.parse()?,
            None => 1.0,
        };
        points.push(WeightedPoint { pos: Vec2::new(x, y), weight });
    }
    if points.is_empty() {
        return Err(LabError::validation("no points parsed from CSV").into());
    }
    Ok(points)
}

fn run_partition(
    config: &RunConfig,
    points_path: &Path,
    degree: usize,
    domain: Option<String>,
    raster: Option<RasterFormat>,
    out_dir: &Path,
) -> anyhow::Result<()> {
    let points = read_points_csv(points_path)?;
    let domain = match domain {
        Some(v) => parse_box(&v)?,
        None => {
            let mut bb = AxisBox::new(points[0].pos, points[0].pos);
            for p in &points {
                bb.min.x = bb.min.x.min(p.pos.x);
                bb.min.y = bb.min.y.min(p.pos.y);
                bb.max.x = bb.max.x.max(p.pos.x);
                bb.max.y = bb.max.y.max(p.pos.y);
            }
            let pad = 0.05 * bb.width().max(bb.height()).max(1e-9);
            AxisBox::from_corners(bb.min.x - pad, bb.min.y - pad, bb.max.x + pad, bb.max.y + pad)
        }
    };
    let mass = MassDistribution::Points(points);
    let pcfg = PartitionConfig { seed: config.seed, ..PartitionConfig::default() };
    let part = partition(&mass, degree, &domain, &pcfg)?;

    std::fs::create_dir_all(out_dir)?;
    let poly_path = out_dir.join("partition-poly.json");
    std::fs::write(
        &poly_path,
        serde_json::to_string_pretty(&part.polynomial)?,
    )?;
    let masses_path = out_dir.join("partition-masses.csv");
    let mut masses_csv = String::from("cell,mass\n");
    for (i, m) in part.masses.iter().enumerate() {
        masses_csv.push_str(&format!("{i},{m}\n"));
    }
    masses_csv.push_str(&format!("wall,{}\n", part.wall_mass));
    std::fs::write(&masses_path, masses_csv)?;
    println!("{}", poly_path.display());
    println!("{}", masses_path.display());
    println!(
        "cells={} thin_crossings={} wall_mass={}",
        part.cell_count, part.thin_crossings, part.wall_mass
    );

    match raster {
        Some(RasterFormat::Pgm) => {
            let path = out_dir.join("partition.pgm");
            write_pgm(&part, &path)?;
            println!("{}", path.display());
        }
        Some(RasterFormat::Svg) => {
            let path = out_dir.join("partition.svg");
            write_sign_svg(&part, &path)?;
            println!("{}", path.display());
        }
        None => {}
    }
    Ok(())
}

/// Binary PGM of the sign grid: positive cells light, negative cells dark,
/// the wall ribbon black.
fn write_pgm(part: &Partition, path: &Path) -> anyhow::Result<()> {
    let (nx, ny) = (part.grid.nx, part.grid.ny);
    let mut file = std::fs::File::create(path)?;
    write!(file, "P5\n{nx} {ny}\n255\n")?;
    let mut row = vec![0u8; nx];
    for iy in (0..ny).rev() {
        for ix in 0..nx {
            let i = iy * nx + ix;
            row[ix] = if part.ribbon[i] {
                0
            } else if part.signs[i] > 0 {
                220
            } else {
                120
            };
        }
        file.write_all(&row)?;
    }
    Ok(())
}

/// Run-length SVG of the sign grid with the ribbon overlaid.
fn write_sign_svg(part: &Partition, path: &Path) -> anyhow::Result<()> {
    let (nx, ny) = (part.grid.nx, part.grid.ny);
    let mut body = format!(
        "<svg xmlns='http://www.w3.org/2000/svg' width='{nx}' height='{ny}' viewBox='0 0 {nx} {ny}' shape-rendering='crispEdges'>\n"
    );
    for iy in 0..ny {
        let mut ix = 0;
        while ix < nx {
            let i = iy * nx + ix;
            let color = if part.ribbon[i] {
                "#000000"
            } else if part.signs[i] > 0 {
                "#dce8f5"
            } else {
                "#f5e3c8"
            };
            let mut run = 1;
            while ix + run < nx {
                let j = iy * nx + ix + run;
                let c = if part.ribbon[j] {
                    "#000000"
                } else if part.signs[j] > 0 {
                    "#dce8f5"
                } else {
                    "#f5e3c8"
                };
                if c != color {
                    break;
                }
                run += 1;
            }
            body.push_str(&format!(
                "<rect x='{ix}' y='{}' width='{run}' height='1' fill='{color}'/>\n",
                ny - 1 - iy
            ));
            ix += run;
        }
    }
    body.push_str("</svg>\n");
    std::fs::write(path, body)?;
    Ok(())
}

fn run_classify(
    poly_path: &Path,
    tubes_path: &Path,
    r: usize,
    d: f64,
    delta: f64,
) -> anyhow::Result<()> {
    let poly: Polynomial2 = serde_json::from_str(
        &std::fs::read_to_string(poly_path)
            .with_context(|| format!("reading {}", poly_path.display()))?,
    )?;
    let tubes: Vec<Tube> = serde_json::from_str(
        &std::fs::read_to_string(tubes_path)
            .with_context(|| format!("reading {}", tubes_path.display()))?,
    )?;
    let params = CurveParams::new(d, r)?;
    let root = restriction_lab::tiles::root_cube(&params);
    let domain = root.as_box();
    let sample = sample_variety(&poly, &domain, 512, 1e-9);
    let rho = params.scale().powf(1.0 + delta);
    let wall = restriction_lab::polypart::wall_for_poly(&poly, &domain, 1024, rho)?;
    let split = tang_tran_split(&tubes, &sample, &wall, &params, delta)?;
    let out = serde_json::json!({
        "cell": split.cell,
        "tangential": split.tang,
        "transverse": split.tran,
        "safeguarded": split.safeguarded,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn run_decompose(
    field_path: &Path,
    n: usize,
    d: f64,
    delta: f64,
    region: Option<String>,
) -> anyhow::Result<()> {
    let file = std::fs::File::open(field_path)
        .with_context(|| format!("opening field {}", field_path.display()))?;
    let f = Field::read_binary(std::io::BufReader::new(file))?;
    let params = CurveParams::new(d, n)?;
    let tiles = build_frequency_tiles(&params);
    let region = match region {
        Some(v) => parse_box(&v)?,
        None => AxisBox::new(
            f.origin,
            Vec2::new(
                f.origin.x + (f.nx - 1) as f64 * f.spacing,
                f.origin.y + (f.ny - 1) as f64 * f.spacing,
            ),
        ),
    };
    let cfg = DecomposeConfig { delta, ..DecomposeConfig::default() };
    let dec = decompose(&f, &tiles, &region, &cfg)?;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for p in &dec.packets {
        let line = serde_json::json!({
            "tile": p.tile_index,
            "tile_center": [p.rect.center.x, p.rect.center.y],
            "tube_center": [p.tube.center.x, p.tube.center.y],
            "dir": [p.tube.dir.x, p.tube.dir.y],
            "length": p.tube.length,
            "width": p.tube.width,
            "l2_mass": p.l2_mass,
        });
        writeln!(lock, "{line}")?;
    }
    Ok(())
}

/// Build the seeded synthetic field-and-partition pair and report the wall
/// functionals.
fn run_tang_tran(config: &RunConfig, n: usize) -> anyhow::Result<()> {
    let mut config = config.clone();
    config.tile_counts = vec![n];
    let params = CurveParams::new(config.curve_exponent, n)?;
    let tiles = build_frequency_tiles(&params);
    let extent = 4.0 * params.tube_length();
    // Resolution: 8 frequency bins across the doubled tile short side and a
    // Nyquist box holding the demodulated band.
    let carrier = tiling_carrier(&tiles);
    let band = tiles
        .iter()
        .flat_map(|t| t.corners(2.0))
        .map(|c| (c.x - carrier.x).abs().max((c.y - carrier.y).abs()))
        .fold(0.0f64, f64::max);
    let mut samples = 64usize;
    while (extent / samples as f64) > 1.0 / (2.0 * band * 1.1) {
        samples *= 2;
    }
    let bytes = samples * samples * 16 * (n + 3);
    if bytes > config.memory_budget_mb * 1024 * 1024 {
        return Err(LabError::budget(format!(
            "tang-tran at N={n} needs ~{} MB of fields, budget is {} MB",
            bytes >> 20,
            config.memory_budget_mb
        ))
        .into());
    }
    let spec = GridSpec::centered_square(extent / 2.0, samples, carrier)?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut modes = Vec::new();
    for rect in &tiles {
        for _ in 0..3 {
            let a = rng.gen_range(-0.3..0.3) * rect.long_side;
            let b = rng.gen_range(-0.3..0.3) * rect.short_side;
            let target = rect.center + rect.tangent.scale(a) + rect.normal().scale(b);
            let freq = spec.snap_frequency(target);
            if rect.contains(freq, 1.0) {
                modes.push((
                    freq,
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                ));
            }
        }
    }
    let f = Field::from_modes(&spec, &modes);
    // Partition the field's own p-mass.
    let domain = AxisBox::centered_square(Vec2::ZERO, extent);
    let density = 128usize;
    let mut values = vec![0.0f64; density * density];
    for iy in 0..density {
        for ix in 0..density {
            let x = Vec2::new(
                domain.min.x + (ix as f64 + 0.5) * domain.width() / density as f64,
                domain.min.y + (iy as f64 + 0.5) * domain.height() / density as f64,
            );
            // Nearest field sample.
            let gx = ((x.x - spec.origin.x) / spec.spacing).round() as isize;
            let gy = ((x.y - spec.origin.y) / spec.spacing).round() as isize;
            if gx >= 0 && gy >= 0 && (gx as usize) < spec.nx && (gy as usize) < spec.ny {
                values[iy * density + ix] =
                    f.at(gx as usize, gy as usize).norm().powf(config.p);
            }
        }
    }
    let mass = MassDistribution::Density {
        origin: domain.min,
        spacing: domain.width() / density as f64,
        nx: density,
        ny: density,
        values,
    };
    let pcfg = PartitionConfig { seed: config.seed, grid: 512, ..PartitionConfig::default() };
    let part = partition(&mass, config.degree, &domain, &pcfg)?;
    let record = compute_tang_tran(&config, &f, &part)?;
    println!("{}", serde_json::to_string_pretty(&record)?);
    Ok(())
}

fn run_battery(config: &RunConfig, which: Battery) -> anyhow::Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match which {
        Battery::Wongkew => {
            writeln!(out, "index,degree,rho,volume,std_error,bound,halved_volume")?;
            for r in battery::wongkew_battery(20, 6, 0.1, 2.0, 250_000, config.seed)? {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.index, r.degree, r.rho, r.volume, r.std_error, r.bound, r.halved_volume
                )?;
            }
        }
        Battery::Segments => {
            writeln!(out, "index,degree,count,bound")?;
            for r in battery::segments_battery(50, 0.05, config.seed)? {
                writeln!(out, "{},{},{},{}", r.index, r.degree, r.count, r.bound)?;
            }
        }
        Battery::Incidence => {
            writeln!(out, "kind,directions,length,width,value,oracle,bound")?;
            for r in battery::overlap_battery(&[(10.0, 1.0, 10), (20.0, 1.0, 40)])? {
                writeln!(
                    out,
                    "overlap,{},{},{},{},{},{}",
                    r.directions, r.length, r.width, r.total, r.direct, r.bound
                )?;
            }
            for r in battery::union_battery(16, config.seed)? {
                writeln!(
                    out,
                    "union,{},{},{},{},{},{}",
                    r.directions, r.length, r.width, r.tube_sum, r.union_area, r.bound
                )?;
            }
        }
        Battery::Directions => {
            writeln!(out, "directions,count,bound")?;
            let r = battery::directions_fixture(1000, 100.0, 1.0)?;
            writeln!(out, "{},{},{}", r.directions, r.count, r.bound)?;
        }
    }
    Ok(())
}
