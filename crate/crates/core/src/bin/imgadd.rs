use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use imgadd::experiments::{run_experiment, verify_suite, ExperimentConfig, ExperimentKind};
use imgadd::io::{read_json, write_json};
use imgadd::problem::{
    default_grid, psf_trace, run_image, run_solve, ArraySetup, ImageConfig, SolveConfig,
    SolveOutput,
};
use imgadd::{Error, Result};

#[derive(Parser)]
#[command(
    name = "imgadd",
    version,
    about = "Beamformer synthesis for image addition"
)]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "COARRAY_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Design one beamformer bank.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the target seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Bank file; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Desired and realized PSF of a bank file.
    Psf {
        /// Bank file written by `solve`.
        #[arg(long)]
        config: PathBuf,
        /// Samples (linear) or samples per axis (planar).
        #[arg(long, default_value_t = 512)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Simulate measurements of a scene and form an image.
    Image {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the noise seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for `image.bin` and `image_db.csv`.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run a parameter sweep.
    Experiment {
        /// Sweep config; fields it omits come from the preset of its kind.
        #[arg(long, required_unless_present = "kind")]
        config: Option<PathBuf>,
        /// Run a preset without a config file.
        #[arg(long, value_enum, conflicts_with = "config")]
        kind: Option<KindArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Closed-form and invariant self-checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    AltminSweep,
    GreedySweep,
    BSweep,
    PsfPlot,
    TradeoffSweep,
    PlanarImaging,
    ClosedformVerify,
}

impl From<KindArg> for ExperimentKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::AltminSweep => Self::AltminSweep,
            KindArg::GreedySweep => Self::GreedySweep,
            KindArg::BSweep => Self::BSweep,
            KindArg::PsfPlot => Self::PsfPlot,
            KindArg::TradeoffSweep => Self::TradeoffSweep,
            KindArg::PlanarImaging => Self::PlanarImaging,
            KindArg::ClosedformVerify => Self::ClosedformVerify,
        }
    }
}

enum Failure {
    Error(Error),
    Verify(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn read_config<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn psf_csv(out: &SolveOutput, points: usize, format: Format) -> Result<String> {
    let setup = ArraySetup::new(out.tx.clone(), out.rx.clone(), out.gain)?;
    let grid = default_grid(&setup, points)?;
    let (desired, realized) = psf_trace(out, &grid)?;
    let peak = desired
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let db = |x: f64| (20.0 * (x / peak).log10()).max(imgadd::imaging::DB_FLOOR);
    let rows: Vec<[f64; 4]> = grid
        .directions
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let (ux, uz) = d.reduced();
            [ux, uz, db(desired[i].norm()), db(realized[i].norm())]
        })
        .collect();
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(&serde_json::json!({
            "columns": ["u_x", "u_z", "desired_db", "realized_db"],
            "rows": rows,
        }))?),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["u_x", "u_z", "desired_db", "realized_db"])?;
            for r in rows {
                w.write_record(r.iter().map(|x| format!("{x:.6}")))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
    }
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.cmd {
        Cmd::Solve { config, seed, out } => {
            let mut cfg: SolveConfig = read_config(&config)?;
            if let Some(s) = seed {
                cfg.target.seed = s;
            }
            let result = run_solve(&cfg)?;
            eprintln!(
                "Q = {}, relative error = {:.3e}",
                result.q, result.relative_error
            );
            match out {
                Some(p) => write_json(&p, &result)?,
                None => println!(
                    "{}",
                    serde_json::to_string_pretty(&result).map_err(Error::from)?
                ),
            }
        }
        Cmd::Psf {
            config,
            points,
            out,
            format,
        } => {
            let bank: SolveOutput = read_json(&config)
                .map_err(|e| Error::Config(format!("{}: {e}", config.display())))?;
            emit(&psf_csv(&bank, points, format)?, out.as_deref())?;
        }
        Cmd::Image { config, seed, out } => {
            let mut cfg: ImageConfig = read_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let bank = match &cfg.bank {
                Some(p) => {
                    let p = if p.is_relative() {
                        config.parent().unwrap_or(Path::new(".")).join(p)
                    } else {
                        p.clone()
                    };
                    Some(
                        read_json::<SolveOutput>(&p)
                            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
                    )
                }
                None => None,
            };
            let image = run_image(&cfg, bank.as_ref())?;
            std::fs::create_dir_all(&out).map_err(Error::from)?;
            image.write_grid(&out.join("image.bin"))?;
            image.write_db_csv(&out.join("image_db.csv"))?;
            let p = image.peak();
            match image.shape {
                Some((_, c)) => eprintln!("peak at row {}, col {}", p / c, p % c),
                None => eprintln!("peak at pixel {p}"),
            }
        }
        Cmd::Experiment {
            config,
            kind,
            seed,
            out,
            format,
        } => {
            let mut cfg = match (config, kind) {
                (Some(p), _) => ExperimentConfig::from_file(&p)?,
                (None, Some(k)) => ExperimentConfig::preset(k.into()),
                (None, None) => unreachable!("clap requires one of them"),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let table = run_experiment(&cfg)?;
            eprintln!("{} rows in {:.1} s", table.rows.len(), table.runtime_s);
            let text = match format {
                Format::Csv => table.to_csv()?,
                Format::Json => table.to_json()?,
            };
            emit(&text, out.as_deref().or(cfg.output.as_deref()))?;
        }
        Cmd::Verify { seed, format } => {
            let checks = verify_suite(seed)?;
            let failed: Vec<&str> = checks
                .iter()
                .filter(|c| !c.passed())
                .map(|c| c.name.as_str())
                .collect();
            match format {
                Format::Csv => {
                    println!("check,trials,failures,max_error,pass");
                    for c in &checks {
                        println!(
                            "{},{},{},{:.3e},{}",
                            c.name,
                            c.trials,
                            c.failures,
                            c.max_error,
                            c.passed()
                        );
                    }
                }
                Format::Json => {
                    let v: Vec<_> = checks
                        .iter()
                        .map(|c| serde_json::json!({"check": c.name, "trials": c.trials, "failures": c.failures, "max_error": c.max_error, "pass": c.passed()}))
                        .collect();
                    println!("{}", serde_json::to_string_pretty(&v).map_err(Error::from)?);
                }
            }
            if !failed.is_empty() {
                return Err(Failure::Verify(failed.join(", ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verify(names)) => {
            eprintln!("error: verification failed: {names}");
            ExitCode::from(3)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
