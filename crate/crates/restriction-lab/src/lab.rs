//! Experiment driver: run configuration, the extension-operator and
//! decoupling scans, the tangential/transverse wall functionals, and
//! CSV/JSON/SVG report emission.
//!
//! Scan fields are superpositions of one wave packet per frequency tile,
//! evaluated directly (phase rotations along grid rows, no stored grids), so
//! the largest desk-scale runs stay within a few hundred megabytes and every
//! reported number is a pure function of (config, seed).

use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::geom::{is_dyadic, Vec2};
use crate::norms::{fit_exponent, ExponentFit};
use crate::polypart::{wall, Partition};
use crate::tiles::{build_frequency_tiles, dual_tube_lattice, CurveParams, FreqRect, Tube};
use crate::variety::{sample_variety, tang_tran_split, TangTranSplit};
use crate::wavepacket::{decompose, DecomposeConfig, TubeBump};

/// Parameters of a scan or wall-functional run; a single JSON document on
/// the CLI side.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Curve exponent `d`.
    pub curve_exponent: f64,
    /// Tile counts `N` to scan (dyadic).
    pub tile_counts: Vec<usize>,
    /// Lebesgue exponent `p`.
    pub p: f64,
    /// `T*` dilation exponent.
    pub delta: f64,
    /// Partition degree for wall functionals.
    pub degree: usize,
    pub seed: u64,
    /// Scan grid density: spacing = min(max_spacing, R / samples_per_width).
    pub samples_per_width: f64,
    pub max_spacing: f64,
    /// The L2 norm is taken over the ball box dilated by this factor.
    pub ball_padding: f64,
    pub memory_budget_mb: usize,
    pub out_dir: String,
    /// Worker threads (0 = rayon default).
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            curve_exponent: 3.0,
            tile_counts: vec![4, 8, 16],
            p: 8.0,
            delta: 0.1,
            degree: 4,
            seed: 0,
            samples_per_width: 8.0,
            max_spacing: 1.0,
            ball_padding: 1.25,
            memory_budget_mb: 4096,
            out_dir: "out".to_string(),
            threads: 0,
        }
    }
}

/// Which inequality a scan is probing; fixes the exponent constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanKind {
    SteinTomas,
    Conjecture2,
    Theorem2,
}

impl ScanKind {
    pub fn label(&self) -> &'static str {
        match self {
            ScanKind::SteinTomas => "stein-tomas",
            ScanKind::Conjecture2 => "conjecture2",
            ScanKind::Theorem2 => "theorem2",
        }
    }
}

impl RunConfig {
    pub fn validate_for(&self, kind: ScanKind) -> Result<()> {
        if self.tile_counts.is_empty() {
            return Err(Error::validation("no tile counts to scan"));
        }
        for &n in &self.tile_counts {
            if n < 1 || !is_dyadic(n as f64) {
                return Err(Error::validation(format!("tile count {n} is not dyadic")));
            }
        }
        if !(self.curve_exponent >= 3.0) {
            return Err(Error::validation("curve exponent must be >= 3"));
        }
        match kind {
            ScanKind::SteinTomas => {
                let floor = 2.0 * self.curve_exponent + 2.0;
                if self.p < floor {
                    return Err(Error::validation(format!(
                        "the extension scan requires p >= 2d+2 = {floor}, got p = {}",
                        self.p
                    )));
                }
            }
            ScanKind::Conjecture2 | ScanKind::Theorem2 => {
                let floor = 2.0 * (self.curve_exponent + 1.0);
                if self.p < floor {
                    return Err(Error::validation(format!(
                        "decoupling scans require p >= 2(d+1) = {floor}, got p = {}",
                        self.p
                    )));
                }
            }
        }
        Ok(())
    }

    fn scan_spacing(&self, n: usize) -> f64 {
        (n as f64 / self.samples_per_width).min(self.max_spacing)
    }
}

/// Test-function families for the scans. The single packet is the known
/// extremizer; the other two bracket it from the incoherent and coherent
/// sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Single,
    RandomPhase,
    Ones,
}

impl Family {
    pub fn label(&self) -> &'static str {
        match self {
            Family::Single => "single",
            Family::RandomPhase => "random",
            Family::Ones => "ones",
        }
    }

    pub fn all() -> [Family; 3] {
        [Family::Single, Family::RandomPhase, Family::Ones]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanRow {
    pub n: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilyReport {
    pub family: String,
    pub rows: Vec<ScanRow>,
    /// Log-log fit of ratio against N (absent for single-point scans).
    pub fit: Option<ExponentFit>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanReport {
    pub kind: String,
    pub families: Vec<FamilyReport>,
    pub config: RunConfig,
    pub seed: u64,
    pub wall_clock_secs: f64,
}

/// One wave packet term of a scan field.
struct PacketTerm {
    amp: Complex64,
    bump: TubeBump,
    freq: Vec2,
}

/// Build one packet per tile: the lattice tube whose cell contains the
/// origin, modulated at the tile center.
fn packet_terms(
    tiles: &[FreqRect],
    delta: f64,
    coeffs: &[Complex64],
) -> Result<Vec<PacketTerm>> {
    let origin = crate::geom::AxisBox::new(Vec2::ZERO, Vec2::ZERO);
    let mut terms = Vec::with_capacity(tiles.len());
    for (rect, &amp) in tiles.iter().zip(coeffs.iter()) {
        if amp == Complex64::new(0.0, 0.0) {
            continue;
        }
        let tube = dual_tube_lattice(rect, &origin, delta)?[0];
        terms.push(PacketTerm {
            amp,
            bump: TubeBump { tube, wraps: None },
            freq: rect.center,
        });
    }
    Ok(terms)
}

/// Accumulated norms of one scan field: `||f||_p` over the ball of radius
/// `R^d`, `||f||_2` over the padded box, and per-tile `p` and `p/2` masses
/// (same quadrature for left and right sides of the decoupling ratios).
struct ScanNorms {
    lhs_ball_p: f64,
    l2_box: f64,
    lhs_box_p: f64,
    tile_p: Vec<f64>,
    tile_half_p: Vec<f64>,
}

fn scan_norms(terms: &[PacketTerm], ball_radius: f64, pad: f64, h: f64, p: f64) -> ScanNorms {
    let half = pad * ball_radius;
    let n_axis = (2.0 * half / h).ceil() as usize + 1;
    let r2 = ball_radius * ball_radius;
    let per_row: Vec<(f64, f64, f64, Vec<f64>, Vec<f64>)> = (0..n_axis)
        .into_par_iter()
        .map(|iy| {
            let y = -half + iy as f64 * h;
            let mut ball_p = 0.0f64;
            let mut box_2 = 0.0f64;
            let mut box_p = 0.0f64;
            let mut tile_p = vec![0.0f64; terms.len()];
            let mut tile_hp = vec![0.0f64; terms.len()];
            // Per-term rotation state along the row.
            let mut states: Vec<RowState> = terms
                .iter()
                .enumerate()
                .map(|(i, t)| RowState::at(i, t, Vec2::new(-half, y), h))
                .collect();
            let mut x = -half;
            for _ in 0..n_axis {
                let mut f = Complex64::new(0.0, 0.0);
                for (t, st) in terms.iter().zip(states.iter_mut()) {
                    let (bump, phase) = st.value();
                    let v = t.amp * bump * phase;
                    f += v;
                    let m2 = v.norm_sqr();
                    let mp = m2.powf(p / 2.0);
                    let idx = st.index;
                    tile_p[idx] += mp;
                    tile_hp[idx] += m2.powf(p / 4.0);
                    st.advance();
                }
                let m2 = f.norm_sqr();
                box_2 += m2;
                let mp = m2.powf(p / 2.0);
                box_p += mp;
                if x * x + y * y <= r2 {
                    ball_p += mp;
                }
                x += h;
            }
            (ball_p, box_2, box_p, tile_p, tile_hp)
        })
        .collect();

    let h2 = h * h;
    let mut lhs_ball_p = 0.0;
    let mut l2 = 0.0;
    let mut box_p = 0.0;
    let mut tile_p = vec![0.0f64; terms.len()];
    let mut tile_half_p = vec![0.0f64; terms.len()];
    for (bp, b2, bxp, tp, thp) in per_row {
        lhs_ball_p += bp;
        l2 += b2;
        box_p += bxp;
        for (a, v) in tile_p.iter_mut().zip(tp) {
            *a += v;
        }
        for (a, v) in tile_half_p.iter_mut().zip(thp) {
            *a += v;
        }
    }
    ScanNorms {
        lhs_ball_p: (lhs_ball_p * h2).powf(1.0 / p),
        l2_box: (l2 * h2).sqrt(),
        lhs_box_p: (box_p * h2).powf(1.0 / p),
        tile_p: tile_p.into_iter().map(|v| (v * h2).powf(1.0 / p)).collect(),
        tile_half_p: tile_half_p
            .into_iter()
            .map(|v| (v * h2).powf(2.0 / p))
            .collect(),
    }
}

/// Row-sweep state of one packet term: the modulation phase and the two
/// Fejer axes advance by rotation, never by fresh transcendentals.
struct RowState {
    index: usize,
    // Modulation e(x . freq).
    ph: Complex64,
    dph: Complex64,
    // Tube-frame coordinates in lattice units and their sine/cosine pairs.
    u: f64,
    du: f64,
    su: f64,
    cu: f64,
    rot_u: (f64, f64),
    v: f64,
    dv: f64,
    sv: f64,
    cv: f64,
    rot_v: (f64, f64),
}

impl RowState {
    fn at(index: usize, term: &PacketTerm, start: Vec2, h: f64) -> RowState {
        let tube = &term.bump.tube;
        let rel = start - tube.center;
        let u = rel.dot(tube.dir) / tube.length;
        let v = rel.dot(tube.dir.perp()) / tube.width;
        let du = h * tube.dir.x / tube.length;
        let dv = h * tube.dir.perp().x / tube.width;
        let phase0 = 2.0 * std::f64::consts::PI * start.dot(term.freq);
        let dphase = 2.0 * std::f64::consts::PI * h * term.freq.x;
        let pi = std::f64::consts::PI;
        RowState {
            index,
            ph: Complex64::new(phase0.cos(), phase0.sin()),
            dph: Complex64::new(dphase.cos(), dphase.sin()),
            u,
            du,
            su: (pi * u).sin(),
            cu: (pi * u).cos(),
            rot_u: ((pi * du).cos(), (pi * du).sin()),
            v,
            dv,
            sv: (pi * v).sin(),
            cv: (pi * v).cos(),
            rot_v: ((pi * dv).cos(), (pi * dv).sin()),
        }
    }

    fn value(&self) -> (f64, Complex64) {
        (sinc_sq_from(self.su, self.u) * sinc_sq_from(self.sv, self.v), self.ph)
    }

    fn advance(&mut self) {
        self.ph *= self.dph;
        let (c, s) = self.rot_u;
        let (su, cu) = (self.su * c + self.cu * s, self.cu * c - self.su * s);
        self.su = su;
        self.cu = cu;
        self.u += self.du;
        let (c, s) = self.rot_v;
        let (sv, cv) = (self.sv * c + self.cv * s, self.cv * c - self.sv * s);
        self.sv = sv;
        self.cv = cv;
        self.v += self.dv;
    }
}

fn sinc_sq_from(sin_pix: f64, x: f64) -> f64 {
    let t = std::f64::consts::PI * x;
    if t.abs() < 1e-6 {
        let s = 1.0 - t * t / 6.0;
        s * s
    } else {
        let s = sin_pix / t;
        s * s
    }
}

fn family_coefficients(family: Family, n: usize, seed: u64, amplitude: f64) -> Vec<Complex64> {
    match family {
        Family::Single => {
            let mut c = vec![Complex64::new(0.0, 0.0); n];
            c[0] = Complex64::new(amplitude, 0.0);
            c
        }
        Family::Ones => vec![Complex64::new(amplitude, 0.0); n],
        Family::RandomPhase => {
            let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
            (0..n)
                .map(|_| {
                    let th: f64 = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                    Complex64::new(amplitude * th.cos(), amplitude * th.sin())
                })
                .collect()
        }
    }
}

/// One extension-scan measurement: `(lhs, rhs, ratio)` with
/// `lhs = ||sum f_w||_p(B(R^d))` and `rhs = ||f||_2`.
pub fn theorem1_row(
    config: &RunConfig,
    n: usize,
    family: Family,
    amplitude: f64,
) -> Result<ScanRow> {
    if amplitude == 0.0 {
        return Err(Error::validation("zero field: ratio undefined"));
    }
    let params = CurveParams::new(config.curve_exponent, n)?;
    let tiles = build_frequency_tiles(&params);
    let coeffs = family_coefficients(family, n, config.seed.wrapping_add(n as u64), amplitude);
    let terms = packet_terms(&tiles, config.delta, &coeffs)?;
    let norms = scan_norms(
        &terms,
        params.tube_length(),
        config.ball_padding,
        config.scan_spacing(n),
        config.p,
    );
    Ok(ScanRow {
        n,
        lhs: norms.lhs_ball_p,
        rhs: norms.l2_box,
        ratio: norms.lhs_ball_p / norms.l2_box,
    })
}

/// Extension-operator scan across the configured tile counts and all three
/// test families, with a per-family exponent fit.
pub fn scan_theorem1(config: &RunConfig) -> Result<ScanReport> {
    config.validate_for(ScanKind::SteinTomas)?;
    let start = std::time::Instant::now();
    let mut families = Vec::new();
    for family in Family::all() {
        let mut rows = Vec::new();
        for &n in &config.tile_counts {
            rows.push(theorem1_row(config, n, family, 1.0)?);
        }
        let fit = if rows.len() >= 2 {
            Some(fit_exponent(
                &rows.iter().map(|r| (r.n as f64, r.ratio)).collect::<Vec<_>>(),
            )?)
        } else {
            None
        };
        families.push(FamilyReport { family: family.label().to_string(), rows, fit });
    }
    Ok(ScanReport {
        kind: ScanKind::SteinTomas.label().to_string(),
        families,
        config: config.clone(),
        seed: config.seed,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

/// Decoupling scan: LHS/RHS of the chosen variant per tile count. Purely
/// exploratory; the report carries the fitted growth exponent and no
/// pass/fail judgement.
pub fn scan_decoupling(config: &RunConfig, kind: ScanKind) -> Result<ScanReport> {
    if kind == ScanKind::SteinTomas {
        return Err(Error::validation("use scan_theorem1 for the extension scan"));
    }
    config.validate_for(kind)?;
    let start = std::time::Instant::now();
    let d = config.curve_exponent;
    let p = config.p;
    let mut families = Vec::new();
    for family in Family::all() {
        let mut rows = Vec::new();
        for &n in &config.tile_counts {
            let params = CurveParams::new(d, n)?;
            let tiles = build_frequency_tiles(&params);
            let coeffs =
                family_coefficients(family, n, config.seed.wrapping_add(n as u64), 1.0);
            let terms = packet_terms(&tiles, config.delta, &coeffs)?;
            let norms = scan_norms(
                &terms,
                params.tube_length(),
                config.ball_padding,
                config.scan_spacing(n),
                p,
            );
            let nf = n as f64;
            let rhs = match kind {
                ScanKind::Conjecture2 => {
                    let sq: f64 = norms.tile_p.iter().map(|v| v * v).sum();
                    nf.powf(0.5 - (d + 1.0) / p) * sq.sqrt()
                }
                ScanKind::Theorem2 => {
                    let sq: f64 = norms.tile_half_p.iter().map(|v| v * v).sum();
                    nf.powf(0.5 - (d + 1.0) / p) * nf.powf(-(d + 1.0) / p) * sq.sqrt()
                }
                ScanKind::SteinTomas => unreachable!(),
            };
            let lhs = norms.lhs_box_p;
            rows.push(ScanRow { n, lhs, rhs, ratio: lhs / rhs });
        }
        let fit = if rows.len() >= 2 {
            Some(fit_exponent(
                &rows.iter().map(|r| (r.n as f64, r.ratio)).collect::<Vec<_>>(),
            )?)
        } else {
            None
        };
        families.push(FamilyReport { family: family.label().to_string(), rows, fit });
    }
    Ok(ScanReport {
        kind: kind.label().to_string(),
        families,
        config: config.clone(),
        seed: config.seed,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

/// The wall-integral bookkeeping of one field against one partition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TangTranRecord {
    /// `int_{B(R^d)} |sum f_w|^p`.
    pub total_ball: f64,
    /// Cell term: `sum_j int_{O'_j} |sum f_w|^p` (cells minus wall).
    pub cell_term: f64,
    /// `int_W |sum f_w|^p`.
    pub wall_term: f64,
    /// Per tangential scale: `sum_Q int_{W cap Q} |sum_{T in class} f_T|^p`.
    pub tang_terms: Vec<(f64, f64)>,
    /// Per transverse scale, same functional.
    pub tran_terms: Vec<(f64, f64)>,
    /// `total - cell - sum tang - sum tran`: genuine cross terms, reported
    /// rather than assumed zero.
    pub cross_residual: f64,
    /// Packets whose tube fell through both ladders (safeguard-assigned).
    pub safeguarded: usize,
}

/// Decompose `f` into packets, split them against the wall of `part` at
/// `rho = R^(1+delta)`, and integrate every class contribution.
pub fn compute_tang_tran(
    config: &RunConfig,
    f: &Field,
    part: &Partition,
) -> Result<TangTranRecord> {
    let n = config
        .tile_counts
        .first()
        .copied()
        .ok_or_else(|| Error::validation("config has no tile count"))?;
    let params = CurveParams::new(config.curve_exponent, n)?;
    let tiles = build_frequency_tiles(&params);
    let rho = params.scale().powf(1.0 + config.delta);
    let wall_mask = wall(part, rho)?;

    let spec = f.spec();
    let footprint = crate::geom::AxisBox::new(
        spec.origin,
        Vec2::new(
            spec.origin.x + (spec.nx - 1) as f64 * spec.spacing,
            spec.origin.y + (spec.ny - 1) as f64 * spec.spacing,
        ),
    );
    let dec = decompose(f, &tiles, &footprint, &DecomposeConfig {
        delta: config.delta,
        ..DecomposeConfig::default()
    })?;

    let sample = sample_variety(&part.polynomial, &footprint, 512, 1e-9);
    let tubes: Vec<Tube> = dec.packets.iter().map(|pk| pk.tube).collect();
    let split: TangTranSplit =
        tang_tran_split(&tubes, &sample, &wall_mask, &params, config.delta)?;

    let p = config.p;
    let h2 = spec.spacing * spec.spacing;
    let omega_sum = dec.restricted_sum();
    let ball_r2 = params.tube_length() * params.tube_length();

    let mut total_ball = 0.0;
    let mut cell_term = 0.0;
    let mut wall_term = 0.0;
    for iy in 0..spec.ny {
        for ix in 0..spec.nx {
            let x = spec.point(ix, iy);
            let m = omega_sum.at(ix, iy).norm_sqr().powf(p / 2.0);
            if x.dot(x) <= ball_r2 {
                total_ball += m;
            }
            if wall_mask.contains(x) {
                wall_term += m;
            } else if part.label_at(x).map_or(false, |l| l >= 0) {
                cell_term += m;
            }
        }
    }
    total_ball *= h2;
    cell_term *= h2;
    wall_term *= h2;

    // Class integrals: sum the member packets of each class on the wall
    // pixels of its cube, then aggregate per scale.
    let mut tang_terms: Vec<(f64, f64)> = Vec::new();
    let mut tran_terms: Vec<(f64, f64)> = Vec::new();
    for (classes, out) in [(&split.tang, &mut tang_terms), (&split.tran, &mut tran_terms)] {
        for class in classes.iter() {
            let qbox = class.cube.as_box();
            let x0 = (((qbox.min.x - spec.origin.x) / spec.spacing).floor().max(0.0)) as usize;
            let y0 = (((qbox.min.y - spec.origin.y) / spec.spacing).floor().max(0.0)) as usize;
            let x1 =
                ((((qbox.max.x - spec.origin.x) / spec.spacing).ceil()).max(0.0) as usize)
                    .min(spec.nx.saturating_sub(1));
            let y1 =
                ((((qbox.max.y - spec.origin.y) / spec.spacing).ceil()).max(0.0) as usize)
                    .min(spec.ny.saturating_sub(1));
            let mut acc = 0.0;
            for iy in y0..=y1 {
                for ix in x0..=x1 {
                    let x = spec.point(ix, iy);
                    if !qbox.contains(x) || !wall_mask.contains(x) {
                        continue;
                    }
                    let mut v = Complex64::new(0.0, 0.0);
                    for &ti in &class.members {
                        let pk = &dec.packets[ti];
                        v += dec.restricted[pk.tile_index].at(ix, iy) * pk.bump.value(x);
                    }
                    acc += v.norm_sqr().powf(p / 2.0);
                }
            }
            let acc = acc * h2;
            match out.iter_mut().find(|(s, _)| *s == class.scale) {
                Some((_, t)) => *t += acc,
                None => out.push((class.scale, acc)),
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    let tang_sum: f64 = tang_terms.iter().map(|(_, v)| v).sum();
    let tran_sum: f64 = tran_terms.iter().map(|(_, v)| v).sum();
    Ok(TangTranRecord {
        total_ball,
        cell_term,
        wall_term,
        tang_terms,
        tran_terms,
        cross_residual: total_ball - cell_term - tang_sum - tran_sum,
        safeguarded: split.safeguarded,
    })
}

/// Output formats of [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

/// Hash of the canonical config JSON; embedded in report file names.
pub fn config_hash(config: &RunConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

/// Write the report in the requested formats; returns the paths written.
/// The CSV is a pure function of (config, seeds); wall-clock lives only in
/// the JSON provenance.
pub fn emit_report(
    report: &ScanReport,
    formats: &[ReportFormat],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if report.families.iter().all(|f| f.rows.is_empty()) {
        return Err(Error::validation("nothing to report"));
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let stem = format!("scan-{}-{}", report.kind, config_hash(&report.config));
    let mut written = Vec::new();
    for format in formats {
        let path = match format {
            ReportFormat::Csv => {
                let path = out_dir.join(format!("{stem}.csv"));
                let mut buf = String::from("family,n,lhs,rhs,ratio\n");
                for fam in &report.families {
                    for row in &fam.rows {
                        buf.push_str(&format!(
                            "{},{},{},{},{}\n",
                            fam.family, row.n, row.lhs, row.rhs, row.ratio
                        ));
                    }
                }
                write_file(&path, buf.as_bytes())?;
                path
            }
            ReportFormat::Json => {
                let path = out_dir.join(format!("{stem}.json"));
                let body = serde_json::to_vec_pretty(report).expect("report serializes");
                write_file(&path, &body)?;
                path
            }
            ReportFormat::Svg => {
                let path = out_dir.join(format!("{stem}.svg"));
                write_file(&path, loglog_svg(report).as_bytes())?;
                path
            }
        };
        written.push(path);
    }
    Ok(written)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Minimal log-log scatter of ratio against N with the fitted lines.
fn loglog_svg(report: &ScanReport) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const MARGIN: f64 = 60.0;
    let points: Vec<(f64, f64)> = report
        .families
        .iter()
        .flat_map(|f| f.rows.iter().map(|r| ((r.n as f64).ln(), r.ratio.max(1e-300).ln())))
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let colors = ["#1f6feb", "#d29922", "#3fb950", "#f85149"];
    let mut body = String::new();
    body.push_str(&format!(
        "<svg xmlns='http://www.w3.org/2000/svg' width='{W}' height='{H}' viewBox='0 0 {W} {H}'>\n\
         <rect width='100%' height='100%' fill='white'/>\n\
         <line x1='{m}' y1='{b}' x2='{r}' y2='{b}' stroke='black'/>\n\
         <line x1='{m}' y1='{t}' x2='{m}' y2='{b}' stroke='black'/>\n\
         <text x='{cx}' y='{ly}' text-anchor='middle' font-size='13'>log N</text>\n\
         <text x='16' y='{cy}' font-size='13' transform='rotate(-90 16 {cy})' text-anchor='middle'>log ratio</text>\n",
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN,
        cx = W / 2.0,
        ly = H - 20.0,
        cy = H / 2.0,
    ));
    for (fi, fam) in report.families.iter().enumerate() {
        let color = colors[fi % colors.len()];
        for row in &fam.rows {
            let x = sx((row.n as f64).ln());
            let y = sy(row.ratio.max(1e-300).ln());
            body.push_str(&format!(
                "<circle cx='{x:.2}' cy='{y:.2}' r='4' fill='{color}'/>\n"
            ));
        }
        if let Some(fit) = &fam.fit {
            let ya = fit.intercept + fit.slope * x0;
            let yb = fit.intercept + fit.slope * x1;
            body.push_str(&format!(
                "<line x1='{:.2}' y1='{:.2}' x2='{:.2}' y2='{:.2}' stroke='{color}' stroke-dasharray='4 3'/>\n",
                sx(x0),
                sy(ya),
                sx(x1),
                sy(yb)
            ));
        }
        body.push_str(&format!(
            "<text x='{}' y='{}' font-size='12' fill='{color}'>{}{}</text>\n",
            W - MARGIN + 6.0,
            MARGIN + 16.0 * fi as f64,
            fam.family,
            fam.fit
                .as_ref()
                .map(|f| format!(" ({:+.2})", f.slope))
                .unwrap_or_default()
        ));
    }
    body.push_str("</svg>\n");
    body
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::AxisBox;
    use crate::polypart::{partition, MassDistribution, PartitionConfig};

    fn small_config() -> RunConfig {
        RunConfig {
            tile_counts: vec![2, 4],
            samples_per_width: 8.0,
            max_spacing: 0.5,
            ..RunConfig::default()
        }
    }

    #[test]
    fn config_validation_messages() {
        let mut cfg = small_config();
        cfg.p = 6.0;
        let err = cfg.validate_for(ScanKind::SteinTomas).unwrap_err();
        assert!(err.to_string().contains("p >= 2d+2"), "{err}");
        cfg.p = 7.0;
        assert!(cfg.validate_for(ScanKind::Conjecture2).is_err());
        cfg.p = 8.0;
        assert!(cfg.validate_for(ScanKind::SteinTomas).is_ok());
        cfg.tile_counts = vec![3];
        assert!(cfg.validate_for(ScanKind::SteinTomas).is_err());
    }

    #[test]
    fn zero_amplitude_rejected() {
        let cfg = small_config();
        assert!(theorem1_row(&cfg, 4, Family::Single, 0.0).is_err());
    }

    #[test]
    fn ratio_is_scale_invariant() {
        let cfg = small_config();
        let one = theorem1_row(&cfg, 4, Family::Single, 1.0).unwrap();
        let two = theorem1_row(&cfg, 4, Family::Single, 2.0).unwrap();
        assert!((one.ratio - two.ratio).abs() <= 1e-12 * one.ratio);
    }

    #[test]
    fn single_family_ratio_tracks_indicator_model() {
        // Indicator model at d=3, p=8: ratio = (R^4)^(-3/8) = R^(-3/2).
        let cfg = RunConfig { max_spacing: 0.25, ..small_config() };
        let row = theorem1_row(&cfg, 4, Family::Single, 1.0).unwrap();
        let model = 4.0f64.powf(-1.5);
        assert!(row.ratio >= model / 2.0 && row.ratio <= model * 2.0, "{}", row.ratio);
    }

    #[test]
    fn scan_fits_single_packet_decay() {
        let cfg = RunConfig { tile_counts: vec![2, 4, 8], ..small_config() };
        let report = scan_theorem1(&cfg).unwrap();
        let single = &report.families[0];
        assert_eq!(single.family, "single");
        let slope = single.fit.as_ref().unwrap().slope;
        assert!(slope < -1.1 && slope > -1.9, "slope {slope}");
    }

    #[test]
    fn decoupling_single_tile_ratio_is_one() {
        let cfg = RunConfig { tile_counts: vec![1], ..small_config() };
        let report = scan_decoupling(&cfg, ScanKind::Conjecture2).unwrap();
        for fam in &report.families {
            assert_eq!(fam.rows.len(), 1);
            assert!(
                (fam.rows[0].ratio - 1.0).abs() < 1e-12,
                "{}: {}",
                fam.family,
                fam.rows[0].ratio
            );
        }
    }

    #[test]
    fn decoupling_report_has_fits_and_echo() {
        let cfg = small_config();
        let report = scan_decoupling(&cfg, ScanKind::Theorem2).unwrap();
        assert_eq!(report.kind, "theorem2");
        assert_eq!(report.config.tile_counts, cfg.tile_counts);
        for fam in &report.families {
            assert!(fam.fit.is_some());
            for row in &fam.rows {
                assert!(row.ratio.is_finite() && row.ratio > 0.0);
            }
        }
    }

    #[test]
    fn emit_report_round_trip_and_determinism() {
        let dir = std::env::temp_dir().join(format!("rlab-report-{}", std::process::id()));
        let cfg = small_config();
        let report = scan_theorem1(&cfg).unwrap();
        let paths = emit_report(
            &report,
            &[ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg],
            &dir,
        )
        .unwrap();
        let csv1 = std::fs::read(&paths[0]).unwrap();
        assert!(csv1.starts_with(b"family,n,lhs,rhs,ratio\n"));
        let json: ScanReport =
            serde_json::from_slice(&std::fs::read(&paths[1]).unwrap()).unwrap();
        assert_eq!(json.families.len(), report.families.len());
        // Second run: byte-identical CSV.
        let report2 = scan_theorem1(&cfg).unwrap();
        let paths2 = emit_report(&report2, &[ReportFormat::Csv], &dir).unwrap();
        let csv2 = std::fs::read(&paths2[0]).unwrap();
        assert_eq!(csv1, csv2);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn emit_report_rejects_empty() {
        let cfg = small_config();
        let report = ScanReport {
            kind: "stein-tomas".into(),
            families: vec![FamilyReport { family: "single".into(), rows: vec![], fit: None }],
            config: cfg,
            seed: 0,
            wall_clock_secs: 0.0,
        };
        assert!(matches!(
            emit_report(&report, &[ReportFormat::Csv], Path::new("/tmp")),
            Err(Error::Validation(_))
        ));
    }

    /// A single tangential packet on a line variety: the coarsest tangential
    /// rung carries essentially the whole wall integral.
    #[test]
    fn tang_tran_single_tangential_packet() {
        let n = 2usize;
        let cfg = RunConfig {
            tile_counts: vec![n],
            degree: 1,
            ..RunConfig::default()
        };
        let params = CurveParams::new(3.0, n).unwrap();
        let tiles = build_frequency_tiles(&params);
        // Field: one packet of tile 0 near the origin.
        let spec = crate::field::GridSpec::centered_square(
            16.0,
            512,
            crate::wavepacket::tiling_carrier(&tiles),
        )
        .unwrap();
        let origin_region = AxisBox::new(Vec2::ZERO, Vec2::ZERO);
        let tube = dual_tube_lattice(&tiles[0], &origin_region, 0.1).unwrap()[0];
        let mut f = Field::zeros(&spec);
        let bump = TubeBump { tube, wraps: None };
        for iy in 0..spec.ny {
            for ix in 0..spec.nx {
                let x = spec.point(ix, iy);
                let ph = 2.0
                    * std::f64::consts::PI
                    * (x.dot(tiles[0].center) - x.dot(spec.carrier));
                *f.at_mut(ix, iy) =
                    Complex64::new(ph.cos(), ph.sin()) * bump.value(x);
            }
        }
        // Partition polynomial: the line through the tube axis. Build a
        // partition on the field's footprint from a mass straddling it.
        let domain = AxisBox::centered_square(Vec2::ZERO, 32.0);
        let mass = MassDistribution::uniform_square(&domain, 64);
        let pcfg = PartitionConfig { grid: 256, ..PartitionConfig::default() };
        let part = partition(&mass, 1, &domain, &pcfg).unwrap();
        let record = compute_tang_tran(&cfg, &f, &part).unwrap();
        assert!(record.total_ball > 0.0);
        // Terms are nonnegative and the bookkeeping is reported.
        for (_, v) in record.tang_terms.iter().chain(record.tran_terms.iter()) {
            assert!(*v >= 0.0);
        }
        assert!(record.cell_term >= 0.0 && record.wall_term >= 0.0);
    }
}
