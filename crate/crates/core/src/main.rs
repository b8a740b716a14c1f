use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use granubed::bench::{self, SizePreset};
use granubed::decomp::decompose;
use granubed::driver::{run, seed_bed, RunOptions};
use granubed::{Error, Result, SimConfig};

#[derive(Parser)]
#[command(name = "granubed", version, about = "Desk-scale CFD-DEM fluidized bed solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BenchKind {
    Sizes,
    Weak,
    Ats,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write timings.csv and diagnostics.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ranks: Option<usize>,
        #[arg(long, value_enum)]
        ats: Option<Switch>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the final particle states.
        #[arg(long)]
        particles: bool,
    },
    /// Check a configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Benchmark reports: problem-size sweep, weak scaling, or ATS on/off.
    Bench {
        #[arg(value_enum)]
        kind: BenchKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        max_factor: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        ranks_list: Vec<usize>,
        /// Simulated seconds per run.
        #[arg(long, default_value_t = bench::DEFAULT_DURATION)]
        duration: f64,
    },
}

fn load(path: &Path) -> Result<SimConfig> {
    let cfg = SimConfig::from_file(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn validate(path: &Path) -> Result<()> {
    let cfg = load(path)?;
    let consts = cfg.constants()?;
    let dt = cfg.fixed_substep()?;
    let d = decompose(&cfg.domain, cfg.tiling)?;
    let bed = seed_bed(&cfg)?;
    println!("config ok: {}", path.display());
    println!("  grid {:?}, {} boxes on {} ranks", cfg.domain.cells(), d.boxes.len(), cfg.ranks);
    println!("  particles {}, solids fraction {:.4}", bed.n_owned, bed.n_owned as f64 * cfg.particles.volume() / cfg.domain.volume());
    println!("  contact time {:e} s, fixed substep {dt:e} s", consts.contact_time);
    Ok(())
}

fn run_cmd(path: &Path, ranks: Option<usize>, ats: Option<Switch>, out: Option<PathBuf>, particles: bool) -> Result<()> {
    let mut cfg = load(path)?;
    if let Some(r) = ranks {
        cfg.ranks = r;
    }
    if let Some(a) = ats {
        cfg.ats = matches!(a, Switch::On);
    }
    cfg.validate()?;
    let rep = run(&cfg, &RunOptions { out_dir: out, write_particles: particles })?;
    let last = rep.diagnostics.last().copied().unwrap_or_default();
    println!(
        "{} steps, {} substeps, {:.3} s wall; final mean speed {:e} m/s, bed height {:e} m",
        rep.timings.len(),
        rep.substeps,
        rep.wall_s,
        last.mean_speed,
        last.bed_height
    );
    Ok(())
}

fn bench_cmd(kind: BenchKind, path: &Path, out: &Path, max_factor: usize, ranks: &[usize], duration: f64) -> Result<()> {
    let cfg = load(path)?;
    match kind {
        BenchKind::Sizes => {
            let presets = bench::scale_presets(&SizePreset::desk_base(), max_factor)?;
            let rows = bench::run_size_sweep(&presets, &cfg, duration);
            for r in rows.iter().filter_map(|r| r.error.as_ref().map(|e| (&r.label, e))) {
                eprintln!("preset {} failed: {}", r.0, r.1);
            }
            bench::write_report(&out.join("sizes.csv"), &bench::sizes_csv(&rows))?;
        }
        BenchKind::Weak => {
            let rep = bench::run_weak_scaling(&SizePreset::desk_base(), ranks, &cfg, duration)?;
            for r in rep.rows.iter().filter(|r| r.error.is_some()) {
                eprintln!("{} ranks (ats {}) failed: {}", r.ranks, r.ats, r.error.as_deref().unwrap_or(""));
            }
            bench::write_report(&out.join("weak.csv"), &bench::weak_csv(&rep.rows))?;
            bench::write_report(&out.join("weak_physics.csv"), &bench::weak_physics_csv(&rep.physics))?;
            println!("physics spread across rank counts: {:e}", rep.physics_spread());
        }
        BenchKind::Ats => {
            let label = path.file_stem().map_or("case".into(), |s| s.to_string_lossy().into_owned());
            let row = bench::ats_comparison(&label, &SimConfig { t_end: duration, ..cfg })?;
            println!("substep ratio {:.3}, wall ratio {:.3}", row.substep_ratio, row.wall_ratio);
            bench::write_report(&out.join("ats.csv"), &bench::ats_csv(&[row]))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run { config, ranks, ats, out, particles } => run_cmd(&config, ranks, ats, out, particles),
        Command::Validate { config } => validate(&config),
        Command::Bench { kind, config, out, max_factor, ranks_list, duration } => {
            bench_cmd(kind, &config, &out, max_factor, &ranks_list, duration)
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.root() {
                Error::Config(_) => ExitCode::from(2),
                Error::Io(_) => ExitCode::from(1),
                _ => ExitCode::from(3),
            }
        }
    }
}
