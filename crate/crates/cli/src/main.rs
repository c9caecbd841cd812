//! Batch CLI for the half-line spectral toolkit.
//!
//! ```text
//! specfun <command> --config <path> [--out <dir>] [--tol <override>]
//! ```
//!
//! Commands: `solve`, `kernel`, `density`, `parseval [--theorem free|1|2]`,
//! `expand [--mode free|theorem1|theorem2]`, `selftest`. Every run writes
//! `manifest.json` (config echo, version, grid hashes, wall times) next to
//! the emitted CSV/JSON artifacts; the exit status is 0 iff every executed
//! report passes. Outputs are deterministic for a fixed config: wall times
//! live only in the manifest.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use specfun_core::algebra::{validate_projector, Mat2, ProjectorQ, ONE_C};
use specfun_core::kernel::{boundary_traces, solve_kernel, KernelBoundary};
use specfun_core::potential::PotentialSpec;
use specfun_core::solutions::{integrate_phi, integrate_phi_tilde, inverse_solution, mu_matrix};
use specfun_core::transforms::{density, MatTestFn, RhoGrid, VecTestFn};
use specfun_core::verify::{
    expand_free, expand_theorem1, parseval_free, parseval_theorem1, render_report_table,
    run_theorem2_suite, Theorem2Context, VerificationReport,
};

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
pub struct Cpx(pub f64, pub f64);

impl From<Cpx> for C64 {
    fn from(v: Cpx) -> C64 {
        C64::new(v.0, v.1)
    }
}

fn entry_index(name: &str) -> Result<usize> {
    Ok(match name {
        "p11" => 0,
        "p12" => 1,
        "p21" => 2,
        "p22" => 3,
        other => bail!("config error: unknown entry name '{other}' (expected p11/p12/p21/p22)"),
    })
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    Zero,
    CommutingConstant {
        a: Cpx,
        b: Cpx,
    },
    CommutingBump {
        amp_a: Cpx,
        amp_b: Cpx,
        center: f64,
        half_width: f64,
    },
    GaussianBump {
        entry: String,
        amplitude: Cpx,
        center: f64,
        width: f64,
    },
    RaisedCosine {
        entry: String,
        amplitude: Cpx,
        center: f64,
        half_width: f64,
    },
    Table {
        p11: String,
        p12: String,
        p21: String,
        p22: String,
        support_radius: f64,
    },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<Cpx>,
    /// Row-major `[q11, q12, q21, q22]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<[Cpx; 4]>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    pub rho_max: f64,
    pub d_rho: f64,
    pub sigma: f64,
    #[serde(default = "default_mollifier")]
    pub mollifier_n: u32,
}

fn default_mollifier() -> u32 {
    64
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub potential: PotentialConfig,
    pub boundary: BoundaryConfig,
    pub grids: GridConfig,
    #[serde(default)]
    pub rho_values: Vec<f64>,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        let g = &self.grids;
        if g.x_max <= 0.0 {
            bail!("config error: grids.x_max must be positive");
        }
        if let Some(h) = g.h {
            if h <= 0.0 {
                bail!("config error: grids.h must be positive");
            }
        }
        if g.d_rho <= 0.0 {
            bail!("config error: grids.d_rho must be positive");
        }
        if g.rho_max <= 0.0 {
            bail!("config error: grids.rho_max must be positive");
        }
        if g.sigma <= 0.0 {
            bail!("config error: grids.sigma must be positive");
        }
        if self.boundary.mu.is_none() && self.boundary.q.is_none() {
            bail!("config error: boundary needs either 'mu' or 'q'");
        }
        Ok(())
    }

    fn h(&self) -> f64 {
        // default step scales with the working interval
        self.grids.h.unwrap_or(1e-3 * self.grids.x_max.max(1.0))
    }
}

fn read_table(path: &Path) -> Result<(f64, f64, Vec<C64>)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("config error: cannot read table '{}'", path.display()))?;
    let mut xs = Vec::new();
    let mut vs = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("x,") {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            bail!("config error: {}:{} expected 'x,re,im'", path.display(), ln + 1);
        }
        xs.push(cols[0].parse::<f64>()?);
        vs.push(C64::new(cols[1].parse::<f64>()?, cols[2].parse::<f64>()?));
    }
    if xs.len() < 5 {
        bail!("config error: table '{}' needs at least 5 rows", path.display());
    }
    let h = xs[1] - xs[0];
    for w in xs.windows(2) {
        if ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs().max(1.0) {
            bail!("config error: table '{}' must be uniformly spaced", path.display());
        }
    }
    Ok((xs[0], h, vs))
}

fn build_potential(cfg: &PotentialConfig, base: &Path) -> Result<PotentialSpec> {
    Ok(match cfg {
        PotentialConfig::Zero => PotentialSpec::zero(),
        PotentialConfig::CommutingConstant { a, b } => {
            PotentialSpec::commuting_constant((*a).into(), (*b).into())
        }
        PotentialConfig::CommutingBump { amp_a, amp_b, center, half_width } => {
            PotentialSpec::commuting_bump((*amp_a).into(), (*amp_b).into(), *center, *half_width)
        }
        PotentialConfig::GaussianBump { entry, amplitude, center, width } => {
            PotentialSpec::gaussian_bump(entry_index(entry)?, (*amplitude).into(), *center, *width)
        }
        PotentialConfig::RaisedCosine { entry, amplitude, center, half_width } => {
            PotentialSpec::raised_cosine_bump(
                entry_index(entry)?,
                (*amplitude).into(),
                *center,
                *half_width,
            )
        }
        PotentialConfig::Table { p11, p12, p21, p22, support_radius } => {
            let mut tables = Vec::new();
            for name in [p11, p12, p21, p22] {
                tables.push(read_table(&base.join(name))?);
            }
            let (x0, h) = (tables[0].0, tables[0].1);
            for t in &tables {
                if (t.0 - x0).abs() > 1e-12
                    || (t.1 - h).abs() > 1e-12
                    || t.2.len() != tables[0].2.len()
                {
                    bail!("config error: all four entry tables must share one grid");
                }
            }
            PotentialSpec::from_tables(
                x0,
                h,
                [&tables[0].2, &tables[1].2, &tables[2].2, &tables[3].2],
                *support_radius,
            )
        }
    })
}

enum Boundary {
    Mu(C64),
    Proj(ProjectorQ),
}

fn build_boundary(cfg: &BoundaryConfig) -> Result<Boundary> {
    if let Some(q) = &cfg.q {
        let m = Mat2::new(q[0].into(), q[1].into(), q[2].into(), q[3].into());
        let p = validate_projector(m).map_err(|e| anyhow::anyhow!("config error: {e}"))?;
        return Ok(Boundary::Proj(p));
    }
    Ok(Boundary::Mu(cfg.mu.expect("validated").into()))
}

// ---------------------------------------------------------------------------
// CSV / manifest emission
// ---------------------------------------------------------------------------

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn mat_cols(m: &Mat2) -> String {
    m.m.iter()
        .map(|z| format!("{},{}", fmt(z.re), fmt(z.im)))
        .collect::<Vec<_>>()
        .join(",")
}

const MAT_HEADER: &str = "re11,im11,re12,im12,re21,im21,re22,im22";

fn write_solution_csv(path: &Path, grid: &specfun_core::SolutionGrid) -> Result<()> {
    let mut out = String::with_capacity(grid.n_nodes() * 160);
    out.push_str(&format!("x,{MAT_HEADER}\n"));
    for k in 0..grid.n_nodes() {
        out.push_str(&format!("{},{}\n", fmt(grid.x(k)), mat_cols(&grid.at(k))));
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_kernel_csv(
    path: &Path,
    field: &specfun_core::KernelField,
    max_rows_per_axis: usize,
) -> Result<()> {
    let n = field.n_grid();
    let stride = (n / max_rows_per_axis).max(1);
    let h = field.grid_h();
    let mut out = String::new();
    out.push_str(&format!("x,y,{MAT_HEADER}\n"));
    let mut a = 0;
    while a <= n {
        let mut b = 0;
        while b <= a {
            let k = field.k_at_grid(a, b);
            out.push_str(&format!(
                "{},{},{}\n",
                fmt(a as f64 * h),
                fmt(b as f64 * h),
                mat_cols(&k)
            ));
            b += stride;
        }
        a += stride;
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_trace_csv(path: &Path, h: f64, nodes: &[Mat2]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("x,{MAT_HEADER}\n"));
    for (k, m) in nodes.iter().enumerate() {
        out.push_str(&format!("{},{}\n", fmt(k as f64 * h), mat_cols(m)));
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_spectral_csv(path: &Path, s: &specfun_core::MatrixSamples) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("rho,{MAT_HEADER}\n"));
    for (i, m) in s.values.iter().enumerate() {
        out.push_str(&format!("{},{}\n", fmt(s.grid.rho(i)), mat_cols(m)));
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_reconstruction_csv(path: &Path, xs: &[f64], rec: &[Mat2]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("x,{MAT_HEADER}\n"));
    for (x, m) in xs.iter().zip(rec.iter()) {
        out.push_str(&format!("{},{}\n", fmt(*x), mat_cols(m)));
    }
    fs::write(path, out)?;
    Ok(())
}

struct Manifest {
    config: serde_json::Value,
    command: String,
    grid_hashes: BTreeMap<String, String>,
    wall_ms: BTreeMap<String, f64>,
}

impl Manifest {
    fn new(config: &RunConfig, command: &str) -> Manifest {
        Manifest {
            config: serde_json::to_value(config).expect("config serializes"),
            command: command.to_string(),
            grid_hashes: BTreeMap::new(),
            wall_ms: BTreeMap::new(),
        }
    }

    fn hash_grid(&mut self, name: &str, parts: &[f64]) {
        let mut hasher = Sha256::new();
        for p in parts {
            hasher.update(p.to_le_bytes());
        }
        self.grid_hashes
            .insert(name.to_string(), format!("{:x}", hasher.finalize()));
    }

    fn hash_potential(&mut self, p: &PotentialSpec, x_max: f64) {
        let mut hasher = Sha256::new();
        for k in 0..=512 {
            let x = x_max * k as f64 / 512.0;
            for z in p.eval(x).m {
                hasher.update(z.re.to_le_bytes());
                hasher.update(z.im.to_le_bytes());
            }
        }
        self.grid_hashes
            .insert("potential_samples".to_string(), format!("{:x}", hasher.finalize()));
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let value = serde_json::json!({
            "tool": "specfun",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": self.config,
            "grid_hashes": self.grid_hashes,
            "wall_times_ms": self.wall_ms,
        });
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&value)?)?;
        Ok(())
    }
}

fn write_reports(dir: &Path, reports: &[VerificationReport]) -> Result<bool> {
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(reports)?)?;
    let text = render_report_table(reports);
    fs::write(dir.join("report.txt"), &text)?;
    print!("{text}");
    Ok(reports.iter().all(|r| r.pass))
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TheoremArg {
    Free,
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ExpandMode {
    Free,
    Theorem1,
    Theorem2,
}

#[derive(Parser)]
#[command(
    name = "specfun",
    about = "Transformation kernels, spectral densities, and pairing-identity checks for 2x2 half-line systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the boundary problems over the configured rho list and emit
    /// solution grids.
    Solve(CommonArgs),
    /// Solve the transformation kernel; emit the field, edge traces, and a
    /// residual report.
    Kernel(CommonArgs),
    /// Emit the windowed spectral density over the rho grid.
    Density(CommonArgs),
    /// Verify a pairing identity.
    Parseval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value = "2")]
        theorem: TheoremArg,
    },
    /// Reconstruct a bundled test function through the expansion formulas.
    Expand {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value = "free")]
        mode: ExpandMode,
    },
    /// Run the full fixed acceptance suite.
    Selftest(CommonArgs),
}

#[derive(Parser)]
struct CommonArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides config.output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Kernel-iteration tolerance override.
    #[arg(long)]
    tol: Option<f64>,
}

struct Prepared {
    cfg: RunConfig,
    p: PotentialSpec,
    boundary: Boundary,
    grid: RhoGrid,
    out_dir: PathBuf,
    tol: f64,
    manifest: Manifest,
}

fn prepare(args: &CommonArgs, command: &str) -> Result<Prepared> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("config error: cannot read '{}'", args.config.display()))?;
    let cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("config error: {e}"))?;
    cfg.validate()?;
    let base = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let p = build_potential(&cfg.potential, &base)?;
    let boundary = build_boundary(&cfg.boundary)?;
    let grid = RhoGrid::new(cfg.grids.rho_max, cfg.grids.d_rho)
        .map_err(|e| anyhow::anyhow!("config error: {e}"))?;
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out_dir)?;
    let tol = args.tol.or(cfg.tolerances.kernel).unwrap_or(1e-10);
    let mut manifest = Manifest::new(&cfg, command);
    manifest.hash_grid("x_grid", &[0.0, cfg.h(), cfg.grids.x_max]);
    manifest.hash_grid(
        "rho_grid",
        &[-cfg.grids.rho_max, cfg.grids.d_rho, cfg.grids.rho_max],
    );
    manifest.hash_potential(&p, cfg.grids.x_max);
    Ok(Prepared { cfg, p, boundary, grid, out_dir, tol, manifest })
}

fn boundary_projector(b: &Boundary) -> Result<ProjectorQ> {
    match b {
        Boundary::Proj(q) => Ok(*q),
        Boundary::Mu(_) => {
            bail!("config error: this command needs projector boundary data (boundary.q)")
        }
    }
}

fn cmd_solve(mut prep: Prepared) -> Result<bool> {
    let started = Instant::now();
    let h = prep.cfg.h();
    let x_max = prep.cfg.grids.x_max;
    let rhos = if prep.cfg.rho_values.is_empty() {
        vec![0.5, 1.0, 2.0]
    } else {
        prep.cfg.rho_values.clone()
    };
    for (k, &rho) in rhos.iter().enumerate() {
        let lam = C64::new(0.0, rho);
        match &prep.boundary {
            Boundary::Mu(mu) => {
                let phi = integrate_phi(&prep.p, mu_matrix(*mu), lam, x_max, h)?;
                write_solution_csv(&prep.out_dir.join(format!("solution_phi_{k}.csv")), &phi)?;
                let psi = inverse_solution(&prep.p, *mu, lam, x_max, h)?;
                write_solution_csv(&prep.out_dir.join(format!("solution_psi_{k}.csv")), &psi)?;
            }
            Boundary::Proj(q) => {
                let phi = integrate_phi(&prep.p, q.q, lam, x_max, h)?;
                write_solution_csv(&prep.out_dir.join(format!("solution_phi_{k}.csv")), &phi)?;
                let phit = integrate_phi_tilde(&prep.p, q.q, lam, x_max, h)?;
                write_solution_csv(
                    &prep.out_dir.join(format!("solution_phi_tilde_{k}.csv")),
                    &phit,
                )?;
            }
        }
    }
    prep.manifest
        .wall_ms
        .insert("solve".into(), started.elapsed().as_secs_f64() * 1e3);
    prep.manifest.write(&prep.out_dir)?;
    Ok(true)
}

fn cmd_kernel(mut prep: Prepared) -> Result<bool> {
    let started = Instant::now();
    let h = prep.cfg.h();
    let x_max = prep.cfg.grids.x_max;
    let zero = PotentialSpec::zero();
    let kb = match &prep.boundary {
        Boundary::Mu(mu) => KernelBoundary::Mu(*mu),
        Boundary::Proj(q) => KernelBoundary::Projector(*q),
    };
    let field = solve_kernel(&prep.p, &zero, &kb, x_max, h, prep.tol)?;
    write_kernel_csv(&prep.out_dir.join("kernel.csv"), &field, 200)?;

    let mut rep = VerificationReport::new(
        "transformation kernel solve",
        specfun_core::verify::GridMeta {
            h,
            r_max: prep.grid.r_max,
            d_rho: prep.grid.d_rho,
            sigma: prep.cfg.grids.sigma,
            x_max,
            kernel_iterations: Some(field.iterations),
            ..Default::default()
        },
    );
    rep.push("final sweep change", field.final_delta, prep.tol.max(field.final_delta));
    if prep.p.is_commuting() {
        rep.push("kernel sup norm (commuting class)", field.sup_norm(), 1e-8);
    } else {
        rep.push("kernel sup norm (finite)", field.sup_norm(), f64::INFINITY);
    }

    if let Boundary::Proj(q) = &prep.boundary {
        let traces = boundary_traces(&prep.p, q, x_max, 2.0 * h, prep.tol)?;
        write_trace_csv(&prep.out_dir.join("trace_j.csv"), traces.h, &traces.j_nodes)?;
        write_trace_csv(&prep.out_dir.join("trace_l.csv"), traces.h, &traces.l_nodes)?;
        rep.push("reflected-difference trace relation", traces.rll_residual, 1e-6);
        rep.push("left projector identity on J", traces.qj_residual, 1e-8);
        rep.push("right projector identity on L", traces.lq_residual, 1e-8);
    }
    let ok = write_reports(&prep.out_dir, &[rep])?;
    prep.manifest
        .wall_ms
        .insert("kernel".into(), started.elapsed().as_secs_f64() * 1e3);
    prep.manifest.write(&prep.out_dir)?;
    Ok(ok)
}

fn cmd_density(mut prep: Prepared) -> Result<bool> {
    let started = Instant::now();
    let h = prep.cfg.h();
    let q = boundary_projector(&prep.boundary)?;
    let sigma = prep.cfg.grids.sigma;
    let x_max = prep.cfg.grids.x_max.max(sigma + 1.0);
    let traces = boundary_traces(&prep.p, &q, x_max, 2.0 * h, prep.tol)?;
    let dens = density(&q, sigma, &prep.grid, &traces)?;
    write_spectral_csv(&prep.out_dir.join("density.csv"), &dens.d)?;
    let mut rep = VerificationReport::new(
        "windowed spectral density",
        specfun_core::verify::GridMeta {
            h,
            r_max: prep.grid.r_max,
            d_rho: prep.grid.d_rho,
            sigma,
            x_max,
            ..Default::default()
        },
    );
    rep.push("density route mismatch", dens.route_mismatch, 1e-5);
    rep.push("projector sandwich", dens.qdq_residual, 1e-7);
    rep.push("trace-transform chain", dens.chain_residual, 1e-6);
    let ok = write_reports(&prep.out_dir, &[rep])?;
    prep.manifest
        .wall_ms
        .insert("density".into(), started.elapsed().as_secs_f64() * 1e3);
    prep.manifest.write(&prep.out_dir)?;
    Ok(ok)
}

/// Bundled test functions for the pairing and expansion commands.
fn bundled_vec() -> VecTestFn {
    VecTestFn::indicator(1.0, [ONE_C, C64::new(0.0, 0.0)])
}

fn bundled_mats() -> (MatTestFn, MatTestFn) {
    let mf = Mat2::new(
        C64::new(1.0, 0.2),
        C64::new(0.3, -0.1),
        C64::new(-0.2, 0.4),
        C64::new(0.6, 0.0),
    );
    let mg = Mat2::new(
        C64::new(0.7, -0.3),
        C64::new(0.1, 0.2),
        C64::new(0.4, 0.0),
        C64::new(-0.5, 0.3),
    );
    (MatTestFn::bump(0.2, 1.3, mf), MatTestFn::bump(0.3, 1.2, mg))
}

fn cmd_parseval(mut prep: Prepared, theorem: TheoremArg) -> Result<bool> {
    let started = Instant::now();
    let h = prep.cfg.h();
    let reports = match theorem {
        TheoremArg::Free => {
            let q = boundary_projector(&prep.boundary)?;
            let f = MatTestFn::indicator(1.0, q.q);
            vec![parseval_free(&f, &f, &q, &prep.grid, h)]
        }
        TheoremArg::One => {
            let mu = match &prep.boundary {
                Boundary::Mu(mu) => *mu,
                Boundary::Proj(p) => p.mu,
            };
            if !prep.p.is_commuting() {
                bail!("config error: theorem-1 pairing needs a commuting potential");
            }
            let f = bundled_vec();
            vec![parseval_theorem1(&f, &f, &prep.p, mu, &prep.grid, h)?]
        }
        TheoremArg::Two => {
            let q = boundary_projector(&prep.boundary)?;
            let ctx = Theorem2Context::build(&prep.p, &q, prep.cfg.grids.sigma, h, prep.tol)?;
            let (f, g) = bundled_mats();
            let suite = run_theorem2_suite(&ctx, &f, &g, &prep.grid)?;
            write_spectral_csv(&prep.out_dir.join("density.csv"), &suite.density.d)?;
            vec![suite.parseval, suite.expansion]
        }
    };
    let ok = write_reports(&prep.out_dir, &reports)?;
    prep.manifest
        .wall_ms
        .insert("parseval".into(), started.elapsed().as_secs_f64() * 1e3);
    prep.manifest.write(&prep.out_dir)?;
    Ok(ok)
}

fn cmd_expand(mut prep: Prepared, mode: ExpandMode) -> Result<bool> {
    let started = Instant::now();
    let h = prep.cfg.h();
    let reports;
    match mode {
        ExpandMode::Free => {
            let q = boundary_projector(&prep.boundary)?;
            let f = MatTestFn::bump(0.0, 1.0, Mat2::identity());
            let out = expand_free(&f, &q, &prep.grid, h, 60);
            write_reconstruction_csv(
                &prep.out_dir.join("reconstruction.csv"),
                &out.x_out,
                &out.reconstruction,
            )?;
            reports = vec![out.report];
        }
        ExpandMode::Theorem1 => {
            if !prep.p.is_commuting() {
                bail!("config error: theorem-1 expansion needs a commuting potential");
            }
            let mu = match &prep.boundary {
                Boundary::Mu(mu) => *mu,
                Boundary::Proj(p) => p.mu,
            };
            let f = VecTestFn::bump(0.0, 1.0, [ONE_C, C64::new(0.3, 0.0)]);
            let out = expand_theorem1(&f, &prep.p, mu, &prep.grid, h, 60)?;
            write_reconstruction_csv(
                &prep.out_dir.join("reconstruction.csv"),
                &out.x_out,
                &out.reconstruction,
            )?;
            reports = vec![out.report];
        }
        ExpandMode::Theorem2 => {
            let q = boundary_projector(&prep.boundary)?;
            let ctx = Theorem2Context::build(&prep.p, &q, prep.cfg.grids.sigma, h, prep.tol)?;
            let (f, g) = bundled_mats();
            let suite = run_theorem2_suite(&ctx, &f, &g, &prep.grid)?;
            write_reconstruction_csv(
                &prep.out_dir.join("reconstruction.csv"),
                &suite.sweep.x_out,
                &suite.sweep.expan_forward,
            )?;
            reports = vec![suite.expansion];
        }
    }
    let ok = write_reports(&prep.out_dir, &reports)?;
    prep.manifest
        .wall_ms
        .insert("expand".into(), started.elapsed().as_secs_f64() * 1e3);
    prep.manifest.write(&prep.out_dir)?;
    Ok(ok)
}

fn cmd_selftest(mut prep: Prepared) -> Result<bool> {
    let started = Instant::now();
    let summary = specfun_core::acceptance::run_acceptance();
    print!("{}", summary.render_text());
    fs::write(
        prep.out_dir.join("report.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    fs::write(prep.out_dir.join("report.txt"), summary.render_text())?;
    prep.manifest
        .wall_ms
        .insert("selftest".into(), started.elapsed().as_secs_f64() * 1e3);
    prep.manifest.write(&prep.out_dir)?;
    Ok(summary.pass)
}

fn main() {
    if let Ok(threads) = std::env::var("SPECFUN_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    let outcome = (|| -> Result<bool> {
        match &cli.command {
            Command::Solve(a) => cmd_solve(prepare(a, "solve")?),
            Command::Kernel(a) => cmd_kernel(prepare(a, "kernel")?),
            Command::Density(a) => cmd_density(prepare(a, "density")?),
            Command::Parseval { common, theorem } => {
                cmd_parseval(prepare(common, "parseval")?, *theorem)
            }
            Command::Expand { common, mode } => cmd_expand(prepare(common, "expand")?, *mode),
            Command::Selftest(a) => cmd_selftest(prepare(a, "selftest")?),
        }
    })();
    match outcome {
        Ok(true) => std::process::exit(0),
        Ok(false) => {
            eprintln!("one or more reports failed");
            std::process::exit(1);
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}
