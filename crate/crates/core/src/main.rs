use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use lle_tooth::config::RunConfig;
use lle_tooth::diagnostics::{DecayModel, SeriesKind};
use lle_tooth::modulation::GammaMethod;
use lle_tooth::pipeline::{CheckStatus, Pipeline, RunOptions, Stage, Verdict};

/// Periodic Lugiato-Lefever waves under co-periodic plus localized perturbations.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Worker threads for per-snapshot work (0: all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Reuse the requested stage as well when its stored outputs are still valid.
    #[arg(long, global = true)]
    resume: bool,
    /// Seed of the random co-periodic perturbation (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Configuration file (TOML, or JSON by extension); defaults apply otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunDir {
    /// Run directory (same as --out).
    #[arg(long)]
    run: Option<PathBuf>,
}

#[derive(Subcommand, Clone)]
enum Command {
    /// Solve for the stationary wave.
    SolveWave {
        #[arg(long, allow_hyphen_values = true)]
        alpha: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        beta: Option<f64>,
        #[arg(long)]
        forcing: Option<f64>,
        #[arg(long)]
        period: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Bloch spectra and the spectral assumptions.
    BlochSpectrum {
        /// Stored profile to use instead of solving for the wave.
        #[arg(long)]
        wave: Option<PathBuf>,
        #[arg(long)]
        xi_count: Option<usize>,
    },
    /// Evolve tooth initial data.
    Evolve {
        #[arg(long)]
        wave: Option<PathBuf>,
        /// Knocked-out periods, comma separated.
        #[arg(long, value_delimiter = ',')]
        knockout: Option<Vec<usize>>,
        #[arg(long)]
        tmax: Option<f64>,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Extract the phase modulations sigma and gamma.
    ExtractModulation {
        #[command(flatten)]
        dir: RunDir,
        /// gamma extraction: duhamel or fit.
        #[arg(long, value_parser = parse_method)]
        method: Option<GammaMethod>,
    },
    /// Fit decay rates of the stored norm series.
    DecayFit {
        #[command(flatten)]
        dir: RunDir,
        /// Fit one series and print its report: hat_w_h1, sigma_dot, hat_v_l2, ring_v_linf or gamma_x_linf.
        #[arg(long, value_parser = parse_series)]
        norm: Option<SeriesKind>,
        /// exponential or algebraic; defaults by series.
        #[arg(long, value_parser = parse_model)]
        model: Option<DecayModel>,
    },
    /// Evaluate every check and write the verdict.
    VerifyReport {
        #[command(flatten)]
        dir: RunDir,
    },
    /// All stages end to end.
    Pipeline,
}

fn parse_method(s: &str) -> Result<GammaMethod, String> {
    match s {
        "duhamel" => Ok(GammaMethod::Duhamel),
        "fit" => Ok(GammaMethod::Fit),
        _ => Err(format!("expected duhamel or fit, got '{s}'")),
    }
}

fn parse_series(s: &str) -> Result<SeriesKind, String> {
    s.parse().map_err(|e: lle_tooth::Error| e.to_string())
}

fn parse_model(s: &str) -> Result<DecayModel, String> {
    s.parse().map_err(|e: lle_tooth::Error| e.to_string())
}

const PASS: u8 = 0;
const CHECK_FAIL: u8 = 1;
const USAGE: u8 = 2;
const NUMERIC: u8 = 3;

fn print_verdict(v: &Verdict) {
    for c in &v.checks {
        let tag = match c.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Inconclusive => "INCONCLUSIVE",
        };
        let value = c.value.map(|x| format!("{x:.4e}")).unwrap_or_else(|| "-".into());
        println!("{tag:<12} {:<32} {value:>12}  ({}) {}", c.name, c.bound, c.detail);
    }
    for w in &v.warnings {
        println!("warning: {w}");
    }
    println!("verdict: {}", if v.pass { "pass" } else { "fail" });
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(p) => match RunConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {}: {e}", p.display());
                return ExitCode::from(USAGE);
            }
        },
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let mut out = cli.out.clone();
    let mut wave_file = None;
    let target = match cli.command.clone() {
        Command::SolveWave { alpha, beta, forcing, period, points } => {
            let w = &mut config.wave;
            w.alpha = alpha.unwrap_or(w.alpha);
            w.beta = beta.unwrap_or(w.beta);
            w.forcing = forcing.unwrap_or(w.forcing);
            w.period = period.unwrap_or(w.period);
            w.points = points.unwrap_or(w.points);
            Stage::SolveWave
        }
        Command::BlochSpectrum { wave, xi_count } => {
            wave_file = wave;
            config.bloch.xi_count = xi_count.unwrap_or(config.bloch.xi_count);
            Stage::BlochSpectrum
        }
        Command::Evolve { wave, knockout, tmax, stride } => {
            wave_file = wave;
            if let Some(k) = knockout {
                config.tooth.knocked_out = k;
            }
            config.evolution.t_end = tmax.unwrap_or(config.evolution.t_end);
            config.evolution.stride = stride.unwrap_or(config.evolution.stride);
            Stage::Evolve
        }
        Command::ExtractModulation { dir, method } => {
            out = dir.run.unwrap_or(out);
            config.modulation.gamma_method = method.unwrap_or(config.modulation.gamma_method);
            Stage::ExtractModulation
        }
        Command::DecayFit { dir, .. } => {
            out = dir.run.unwrap_or(out);
            Stage::DecayFit
        }
        Command::VerifyReport { dir } => {
            out = dir.run.unwrap_or(out);
            Stage::VerifyReport
        }
        Command::Pipeline => Stage::VerifyReport,
    };
    if let Err(e) = config.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(USAGE);
    }
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(USAGE);
        }
    }
    let is_pipeline = matches!(cli.command, Command::Pipeline);
    let opts = RunOptions {
        resume: cli.resume,
        fresh: is_pipeline && !cli.resume,
        threads: rayon::current_num_threads(),
        wave_file,
    };
    let mut pipeline = match Pipeline::open(config, &out, opts) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(NUMERIC);
        }
    };
    let verdict = match pipeline.run(target) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(NUMERIC);
        }
    };
    for s in Stage::ALL.into_iter().filter(|s| *s <= target) {
        if let Some(r) = pipeline.manifest.stages.get(&s) {
            let note = r.skipped.as_deref().map(|s| format!(" (skipped: {s})")).unwrap_or_default();
            println!("{:<20} {:>8.2} s{note}", s.name(), r.seconds);
        }
    }
    let code = match (target, verdict) {
        (_, Some(v)) => {
            print_verdict(&v);
            if v.pass {
                PASS
            } else {
                CHECK_FAIL
            }
        }
        (Stage::BlochSpectrum, None) => match pipeline.bloch_report() {
            Ok(r) => {
                println!(
                    "d1 {} d2 {} d3 {}; delta0 {:.6}, theta {:.6}, xi0 {:.4}",
                    r.d1_ok, r.d2_ok, r.d3_ok, r.gap_delta0, r.theta_fit, r.cutoff_xi0
                );
                if let Some(w) = r.d1_witness {
                    println!("witness at xi = {:.4}: lambda = {:.4e} {:+.4e}i", w.0, w.1, w.2);
                }
                if r.all_ok() {
                    PASS
                } else {
                    CHECK_FAIL
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                NUMERIC
            }
        },
        (Stage::DecayFit, None) => match cli.command {
            Command::DecayFit { norm: Some(series), model, .. } => {
                let model = model.unwrap_or(match series {
                    SeriesKind::HatWH1 | SeriesKind::SigmaDot => DecayModel::Exponential,
                    _ => DecayModel::Algebraic,
                });
                match pipeline.fit_series(series, model) {
                    Ok(r) => {
                        println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
                        PASS
                    }
                    Err(e) => {
                        eprintln!("error: {e}");
                        NUMERIC
                    }
                }
            }
            _ => PASS,
        },
        _ => PASS,
    };
    println!("run directory: {}", out.display());
    ExitCode::from(code)
}
