//! `optagg` command line: run scenarios, sweeps and the phase/weight tuner.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use optagg_core::scenario::sweep_csv;
use optagg_core::{
    golden, run, sensitivity, sweep, tune, Error, ModFormat, Outcome, Scenario, SweepParam,
    TuneSpec, GOLDEN,
};

/// Output root used when `--out` is not given.
const OUT_ENV: &str = "OPTAGG_OUT";

#[derive(Parser)]
#[command(
    name = "optagg",
    version,
    about = "Linear optical channel aggregation simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario (a config or a manifest) and write its artifacts.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a scenario once per value of one parameter.
    Sweep {
        config: PathBuf,
        /// One of phi_rad, alpha, target_evm_pct, rate_baud.
        #[arg(long)]
        param: String,
        /// Comma- or space-separated values.
        #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Parallel points; defaults to the number of cores.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search the drive phase (and weight) for a target format.
    Tune {
        config: PathBuf,
        /// Target format; defaults to the scenario's.
        #[arg(long)]
        target: Option<String>,
        /// Also search the waveshaper weight.
        #[arg(long)]
        free_alpha: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bundled scenarios reproducing the measured figures.
    Golden {
        #[command(subcommand)]
        cmd: GoldenCmd,
    },
}

#[derive(Subcommand)]
enum GoldenCmd {
    List,
    /// Print a bundled scenario's config.
    Show {
        name: String,
    },
    Run {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    Scenario::from_json(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn out_dir(out: Option<PathBuf>, name: &str) -> PathBuf {
    out.unwrap_or_else(|| {
        std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("optagg-out"))
            .join(name)
    })
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .and_then(|_| fs::write(dir.join(name), text))
        .map_err(|e| Failure::Runtime(format!("io: {}: {e}", dir.join(name).display())))
}

fn write_outcome(dir: &Path, o: &Outcome) -> Result<(), Failure> {
    for (name, text) in o.artifacts() {
        write_file(dir, name, &text)?;
    }
    Ok(())
}

fn summary(o: &Outcome) -> String {
    let r = &o.report;
    let mut line = format!(
        "{} {} symbols EVM {:.3}%",
        r.format.name(),
        r.symbols,
        r.evm_avg_pct
    );
    if let Some(q) = r.q_factor_db {
        line += &format!(" Q {q:.2} dB");
    }
    if let Some(ser) = r.ser {
        line += &format!(" SER {ser:.2e}");
    }
    if let Some(phi) = o.controls.phi_rad {
        line += &format!(" phi {phi:.4} rad alpha {:.4}", o.controls.alpha);
    }
    line
}

fn run_scenario(mut s: Scenario, out: Option<PathBuf>, seed: Option<u64>) -> Result<(), Failure> {
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let o = run(&s)?;
    let dir = out_dir(out, &s.name);
    write_outcome(&dir, &o)?;
    println!("{}: {}", s.name, summary(&o));
    println!("wrote {}", dir.display());
    Ok(())
}

fn parse_format(name: &str) -> Result<ModFormat, Failure> {
    ModFormat::ALL
        .into_iter()
        .find(|f| f.name().eq_ignore_ascii_case(name))
        .ok_or_else(|| {
            let known: Vec<_> = ModFormat::ALL.iter().map(|f| f.name()).collect();
            Failure::Config(format!(
                "unknown format `{name}`, expected one of {known:?}"
            ))
        })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run { config, out, seed } => load(&config).and_then(|s| run_scenario(s, out, seed)),
        Cmd::Sweep {
            config,
            param,
            values,
            jobs,
            out,
        } => cmd_sweep(&config, &param, &values, jobs, out),
        Cmd::Tune {
            config,
            target,
            free_alpha,
            out,
        } => cmd_tune(&config, target.as_deref(), free_alpha, out),
        Cmd::Golden { cmd } => cmd_golden(cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn cmd_sweep(
    config: &Path,
    param: &str,
    values: &[f64],
    jobs: Option<usize>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let p = SweepParam::parse(param).ok_or_else(|| {
        Failure::Config(format!(
            "unknown sweep parameter `{param}`, expected one of {:?}",
            SweepParam::NAMES
        ))
    })?;
    let s = load(config)?;
    let dir = out_dir(out, &format!("{}-sweep-{param}", s.name));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Runtime(format!("sweep: thread pool: {e}")))?;
    // Points write into their own directories; the first io failure is kept
    // and reported once the sweep is done.
    let io_error = Mutex::new(None);
    let rows = pool.install(|| {
        sweep(&s, p, values, |i, _, o| {
            if let Err(Failure::Runtime(msg)) = write_outcome(&dir.join(format!("point_{i:03}")), o)
            {
                io_error.lock().unwrap().get_or_insert(msg);
            }
            Ok(())
        })
    })?;
    if let Some(msg) = io_error.into_inner().unwrap() {
        return Err(Failure::Runtime(msg));
    }
    let csv = sweep_csv(&rows);
    write_file(&dir, "sweep.csv", &csv)?;
    print!("{csv}");
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_tune(
    config: &Path,
    target: Option<&str>,
    free_alpha: bool,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let s = load(config)?;
    let mut spec = TuneSpec::for_scenario(&s);
    spec.target = target.map(parse_format).transpose()?;
    if free_alpha && spec.alpha_bounds.is_none() {
        spec.alpha_bounds = Some((0.05, 1.0));
    }
    let t = tune(&s, &spec)?;
    let deg = |d: f64| d.to_radians();
    let phi_deltas: Vec<f64> = [-5.0, -2.0, -1.0, 0.0, 1.0, 2.0, 5.0].map(deg).to_vec();
    let alpha_deltas = [-0.05, -0.02, -0.01, 0.0, 0.01, 0.02, 0.05];
    let sens = sensitivity(&s, &t, &phi_deltas, &alpha_deltas)?;
    let dir = out_dir(out, &format!("{}-tune", s.name));
    write_file(&dir, "tune.json", &t.to_json())?;
    write_file(&dir, "landscape.csv", &t.landscape_csv())?;
    write_file(&dir, "sensitivity.csv", &sens.to_csv())?;
    println!(
        "{}: {} phi* {:.4} rad alpha* {:.4} EVM {:.3}% converged {}",
        s.name,
        t.target.name(),
        t.phi_star_rad,
        t.alpha_star,
        t.evm_at_opt_pct,
        t.converged
    );
    println!(
        "sensitivity: {:.3} EVM points per degree, {:.3} per 1% weight error",
        sens.evm_per_degree, sens.evm_per_alpha_pct
    );
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_golden(cmd: GoldenCmd) -> Result<(), Failure> {
    let find = |name: &str| {
        golden(name).ok_or_else(|| {
            Failure::Config(format!(
                "unknown golden scenario `{name}`; see `optagg golden list`"
            ))
        })
    };
    match cmd {
        GoldenCmd::List => {
            for (name, description, _) in GOLDEN {
                println!("{name:<18} {description}");
            }
            Ok(())
        }
        GoldenCmd::Show { name } => {
            print!("{}", find(&name)?.to_json());
            Ok(())
        }
        GoldenCmd::Run { name, out, seed } => run_scenario(find(&name)?, out, seed),
    }
}
