use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use se3_scale::convolution::{build_kernel_table, default_radius, shift_twist_convolve_with, DEFAULT_RADIUS_CAP};
use se3_scale::fbc::{fbc_scores, fiber_density, filter_tractogram, FilterMode, Window};
use se3_scale::kernel::asymmetry_sum;
use se3_scale::pde::{
    build_lb_operator, compare_with_analytic, consistency_residual, kernel_table_from_pde, max_stable_dt,
    EvolutionConfig,
};
use se3_scale::{io, Boundary, DiffusionParams, Error, FodField, GridSpec, Section, SphereSampling};

/// Scale spaces on positions and orientations: kernels, enhancement,
/// symmetry checks, fiber coherence and a finite-difference reference.
#[derive(Parser)]
#[command(name = "se3-scale", version, args_override_self = true)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the normalized kernel and write it as a FODK file.
    Kernel(KernelArgs),
    /// Convolve an orientation field with the kernel.
    Enhance(EnhanceArgs),
    /// Asymmetry sums of both sections as TSV.
    SymmetryReport(SymmetryArgs),
    /// Fiber-to-bundle coherence scores and filtering.
    Fbc(FbcArgs),
    /// Compare the analytic kernel with the finite-difference solver.
    Oracle(OracleArgs),
    /// Export an icosphere sampling as a text table (index, x, y, z, weight).
    Sphere(SphereArgs),
}

#[derive(Args, Clone, Copy)]
struct Diffusion {
    #[arg(long, default_value_t = 1.0)]
    d33: f64,
    #[arg(long, default_value_t = 0.02)]
    d44: f64,
    #[arg(long, default_value_t = 2.0)]
    t: f64,
}

impl Diffusion {
    fn params(&self) -> Result<DiffusionParams, Error> {
        DiffusionParams::new(self.d33, self.d44, self.t)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SectionArg {
    New,
    Zero,
}

impl From<SectionArg> for Section {
    fn from(s: SectionArg) -> Self {
        match s {
            SectionArg::New => Section::New,
            SectionArg::Zero => Section::Zero,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundaryArg {
    Zero,
    Periodic,
}

impl From<BoundaryArg> for Boundary {
    fn from(b: BoundaryArg) -> Self {
        match b {
            BoundaryArg::Zero => Boundary::Zero,
            BoundaryArg::Periodic => Boundary::Periodic,
        }
    }
}

#[derive(Args)]
struct KernelArgs {
    #[command(flatten)]
    diffusion: Diffusion,
    /// Truncation radius in voxels (default: 99% of the mass, at most 5).
    #[arg(long)]
    radius: Option<usize>,
    #[arg(long, default_value_t = 1)]
    sphere_level: u32,
    #[arg(long, value_enum, default_value_t = SectionArg::New)]
    section: SectionArg,
    #[arg(long, default_value_t = 1.0)]
    spacing: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    field: PathBuf,
    #[command(flatten)]
    diffusion: Diffusion,
    #[arg(long)]
    radius: Option<usize>,
    #[arg(long, value_enum, default_value_t = SectionArg::New)]
    section: SectionArg,
    #[arg(long, value_enum, default_value_t = BoundaryArg::Zero)]
    boundary: BoundaryArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SymmetryArgs {
    #[arg(long, default_value_t = 1.0)]
    d33: f64,
    /// Comma-separated list of diffusion times.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    t: Vec<f64>,
    /// Comma-separated list of angular diffusivities.
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.02,0.04")]
    d44: Vec<f64>,
    /// Side of the cubic evaluation grid (odd).
    #[arg(long, default_value_t = 5)]
    grid: usize,
    #[arg(long, default_value_t = 1)]
    sphere_level: u32,
}

#[derive(Clone, Copy)]
struct WindowArg(Window);

impl FromStr for WindowArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "whole" {
            return Ok(WindowArg(Window::Whole));
        }
        match s.parse::<usize>() {
            Ok(0) => Err("window must be ≥ 1".into()),
            Ok(w) => Ok(WindowArg(Window::HalfWidth(w))),
            Err(_) => Err(format!("expected a positive integer or \"whole\", got {s:?}")),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    PerFiber,
    PerPointMin,
}

#[derive(Args)]
struct FbcArgs {
    #[arg(long)]
    tracto: PathBuf,
    #[command(flatten)]
    diffusion: Diffusion,
    /// Local FBC half-width in points, or "whole".
    #[arg(long, default_value = "5")]
    window: WindowArg,
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::PerFiber)]
    mode: ModeArg,
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    filtered: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    diffusion: Diffusion,
    /// Time step, or "auto" for the largest stable step.
    #[arg(long, default_value = "auto")]
    dt: String,
    /// Side of the periodic grid used for the consistency check (odd).
    #[arg(long, default_value_t = 7)]
    grid: usize,
    #[arg(long, default_value_t = 1)]
    sphere_level: u32,
    #[arg(long, value_enum, default_value_t = SectionArg::New)]
    compare: SectionArg,
    /// Radius of the compared kernel tables.
    #[arg(long, default_value_t = 3)]
    radius: usize,
}

#[derive(Args)]
struct SphereArgs {
    #[arg(long, default_value_t = 1)]
    level: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be ≥ 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 3 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Kernel(a) => kernel(a),
        Command::Enhance(a) => enhance(a),
        Command::SymmetryReport(a) => symmetry_report(a),
        Command::Fbc(a) => fbc(a),
        Command::Oracle(a) => oracle(a),
        Command::Sphere(a) => sphere(a),
    }
}

fn kernel(a: KernelArgs) -> Result<(), Error> {
    let p = a.diffusion.params()?;
    let sphere = Arc::new(SphereSampling::icosphere(a.sphere_level)?);
    let radius = match a.radius {
        Some(r) => r,
        None => default_radius(&p, a.section.into(), &sphere, a.spacing, DEFAULT_RADIUS_CAP),
    };
    let table = build_kernel_table(&p, a.section.into(), radius, sphere, a.spacing)?;
    io::save_kernel(&a.out, &table)?;
    println!(
        "radius={} orientations={} entries={} mass_before_normalization={:e} max_value={:e}",
        table.radius(),
        table.orientations(),
        table.values().len(),
        table.mass(),
        table.max_value()
    );
    Ok(())
}

fn enhance(a: EnhanceArgs) -> Result<(), Error> {
    let p = a.diffusion.params()?;
    let field = io::load_field(&a.field)?;
    let spacing = field.grid().spacing();
    let radius = match a.radius {
        Some(r) => r,
        None => default_radius(&p, a.section.into(), field.sphere(), spacing, DEFAULT_RADIUS_CAP),
    };
    let table = build_kernel_table(&p, a.section.into(), radius, field.sphere().clone(), spacing)?;
    let out = shift_twist_convolve_with(&table, &field, a.boundary.into())?;
    io::save_field(&a.out, &out)?;
    println!("radius={radius} input_mass={:e} output_mass={:e}", field.mass(), out.mass());
    Ok(())
}

fn symmetry_report(a: SymmetryArgs) -> Result<(), Error> {
    if a.grid.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("grid side must be odd, got {}", a.grid)));
    }
    let sphere = SphereSampling::icosphere(a.sphere_level)?;
    let radius = (a.grid / 2) as u32;
    let mut out = String::from("t\td44\tnew\tzero\n");
    for &d44 in &a.d44 {
        for &t in &a.t {
            let p = DiffusionParams::new(a.d33, d44, t)?;
            let new = asymmetry_sum(radius, &sphere, &p, Section::New);
            let zero = asymmetry_sum(radius, &sphere, &p, Section::Zero);
            writeln!(out, "{t}\t{d44}\t{new:e}\t{zero:e}").expect("string write");
        }
    }
    print!("{out}");
    Ok(())
}

fn fbc(a: FbcArgs) -> Result<(), Error> {
    let p = a.diffusion.params()?;
    let tr = io::load_tractogram(&a.tracto)?;
    let density = fiber_density(&tr, &p)?;
    let result = fbc_scores(&tr, &density.values, a.window.0)?;
    let mut table = String::from("fiber\tfbc\tnormalized_fbc\tmin_local_fbc\n");
    for i in 0..tr.len() {
        writeln!(
            table,
            "{i}\t{:e}\t{:e}\t{:e}",
            result.fiber_fbc[i], result.normalized_fbc[i], result.min_local_fbc[i]
        )
        .expect("string write");
    }
    std::fs::write(&a.scores, table)?;
    let mode = match a.mode {
        ModeArg::PerFiber => FilterMode::PerFiber,
        ModeArg::PerPointMin => FilterMode::PerPointMin,
    };
    let kept = filter_tractogram(&tr, &result, a.threshold, mode);
    if let Some(path) = &a.filtered {
        io::save_tractogram(path, &kept)?;
    }
    println!(
        "fibers={} points={} pair_evaluations={} kept={}",
        tr.len(),
        tr.n_total(),
        density.pair_evaluations,
        kept.len()
    );
    Ok(())
}

/// Smooth, strictly positive test field without any randomness.
fn oracle_field(grid: GridSpec, sphere: Arc<SphereSampling>) -> Result<FodField, Error> {
    let values = (0..grid.len() * sphere.len())
        .map(|i| 1.5 + (0.37 * i as f64).sin() + 0.25 * (1.91 * i as f64).cos())
        .collect();
    FodField::new(grid, sphere, values)
}

fn oracle(a: OracleArgs) -> Result<(), Error> {
    let p = a.diffusion.params()?;
    if a.grid.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("grid side must be odd, got {}", a.grid)));
    }
    let sphere = Arc::new(SphereSampling::icosphere(a.sphere_level)?);
    let lb = build_lb_operator(&sphere);
    let spacing = 1.0;
    let cfg = if a.dt == "auto" {
        EvolutionConfig::auto(&p, spacing, &lb, Boundary::Periodic)
    } else {
        let dt: f64 = a
            .dt
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("--dt expects a number or \"auto\", got {:?}", a.dt)))?;
        let cfg = EvolutionConfig::with_dt(&p, dt, Boundary::Periodic)?;
        let dt_max = max_stable_dt(&p, spacing, &lb);
        if dt > dt_max {
            return Err(Error::Unstable { dt, dt_max });
        }
        cfg
    };
    let analytic = build_kernel_table(&p, a.compare.into(), a.radius, sphere.clone(), spacing)?;
    let cmp = compare_with_analytic(&analytic, &p, &cfg)?;

    let grid = GridSpec::new([a.grid; 3], spacing)?;
    let u = oracle_field(grid, sphere.clone())?;
    let pde_table = kernel_table_from_pde(&p, sphere, spacing, &cfg, None)?.fold_periodic(a.grid)?;
    let residual = consistency_residual(&pde_table, &u, &p, &cfg)?;
    println!("dt\t{:e}", cfg.dt);
    println!("steps\t{}", cfg.steps);
    println!("correlation\t{:.6}", cmp.correlation);
    println!("relative_l2\t{:.6e}", cmp.relative_l2);
    println!("consistency_residual\t{residual:.3e}");
    Ok(())
}

fn sphere(a: SphereArgs) -> Result<(), Error> {
    let s = SphereSampling::icosphere(a.level)?;
    match &a.out {
        Some(path) => {
            let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
            s.write_table(&mut w)?;
            std::io::Write::flush(&mut w)?;
        }
        None => s.write_table(std::io::stdout().lock())?,
    }
    Ok(())
}
