use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use clp_lab::conditioning::{ParameterBundle, CHECKPOINT_MAGIC};
use clp_lab::config::{ExperimentConfig, Method};
use clp_lab::env::BanditEnv;
use clp_lab::evaluation::{self, BundleSource, DeraSource, OracleSource, PolicySource, SoupsSource};
use clp_lab::trainer::{self, TrainReport};
use clp_lab::verify::{self, Suite};
use clp_lab::weightings::RewardWeights;
use clp_lab::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "clp-lab", version, about = "Conditional language policies on finite multi-reward bandits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured method; writes checkpoint.txt, report.csv and config.toml.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        method: Option<String>,
    },
    /// Sweep a checkpoint (or the oracle) over a weighting grid; writes front.csv and plot.json.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `<out>/checkpoint.txt`; not needed for the oracle.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of two-reward grid points.
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        method: Option<String>,
    },
    /// Run a verification suite: fmix, gradients, logit_identity, regret, bound_fuzz, counterexample.
    Verify {
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write an environment in the text format (counterexample unless a config is given).
    ExportEnv {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Divergence { .. }) => EXIT_DIVERGENCE,
        Some(Error::Io(_)) => EXIT_IO,
        Some(_) => EXIT_CONFIG,
        None if err.downcast_ref::<std::io::Error>().is_some() => EXIT_IO,
        None => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Train { config, seed, out, method } => {
            let cfg = load_config(&config, seed, out, method)?;
            train(&cfg)?;
            Ok(0)
        }
        Command::Sweep { config, checkpoint, grid, seed, out, method } => {
            let mut cfg = load_config(&config, seed, out, method)?;
            if grid.is_some() {
                cfg.eval.grid = grid;
            }
            sweep(&cfg, checkpoint.as_deref())?;
            Ok(0)
        }
        Command::Verify { suite, seed, out } => {
            let suite = Suite::parse(&suite)?;
            let report = verify::run_suite(suite, seed)?;
            let text = report.to_text();
            print!("{text}");
            if let Some(p) = out {
                write_file(&p, &text)?;
            }
            Ok(if report.passed() { 0 } else { suite.failure_exit_code() as u8 })
        }
        Command::ExportEnv { config, seed, out } => {
            let env = match config {
                Some(c) => load_config(&c, seed, None, None)?.build_env()?,
                None => BanditEnv::counterexample(),
            };
            match out {
                Some(p) => env.save(&p).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{}", env.to_text()),
            }
            Ok(0)
        }
    }
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    method: Option<String>,
) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.output.dir = o;
    }
    if let Some(m) = method {
        cfg.method = Method::parse(&m)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::from).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).map_err(Error::from).with_context(|| format!("writing {}", path.display()))
}

/// Bundle checkpoint text with the method recorded in the header.
fn checkpoint_text(method: Method, bundle: &ParameterBundle) -> String {
    let body = bundle.to_text();
    let magic = format!("# {CHECKPOINT_MAGIC}\n");
    let rest = body.strip_prefix(&magic).unwrap_or(&body);
    format!("{magic}method {method}\n{rest}")
}

fn concat_reports(reports: Vec<TrainReport>) -> TrainReport {
    let mut all = TrainReport::default();
    for r in reports {
        let offset = all.records.len();
        all.records.extend(r.records.into_iter().map(|mut rec| {
            rec.step += offset;
            rec
        }));
    }
    all
}

fn train(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let dir = &cfg.output.dir;
    let env = cfg.build_env()?;
    let arch = cfg.build_arch(&env)?;
    let (theta_ref, env) = arch.init_reference(&env, clp_lab::rng::split_seed(cfg.seed, "policy"))?;
    let tc = cfg.train_config()?;
    write_file(&dir.join("config.toml"), &cfg.to_toml()?)?;
    let method = cfg.method;
    let (bundle, report) = match method {
        Method::Oracle => bail!(Error::Config("method oracle has nothing to train; run `sweep` instead".into())),
        Method::ClpFull | Method::ClpMid | Method::ClpLogit | Method::Prompting => {
            let bundle = if method == Method::Prompting {
                ParameterBundle::prompt_only(arch, &theta_ref, env.m(), cfg.policy.prompt_repeats)?
            } else {
                ParameterBundle::from_reference(arch, &theta_ref, env.m(), None)?
            };
            let every = cfg.train.checkpoint_every.filter(|&n| n > 0);
            trainer::clp_train_with(&env, bundle, &tc, |step, b| {
                if let Some(n) = every {
                    if step % n == 0 {
                        let p = dir.join("checkpoints").join(format!("step_{step}.txt"));
                        write_file(&p, &checkpoint_text(method, b)).map_err(|e| {
                            Error::Io(std::io::Error::other(format!("{e:#}")))
                        })?;
                    }
                }
                Ok(())
            })?
        }
        Method::RewardedSoups => {
            let runs = trainer::train_experts(&env, &arch, &theta_ref, cfg.single_alpha(), tc.steps, &tc)?;
            let mut bundle = ParameterBundle::from_reference(arch, &theta_ref, env.m(), None)?;
            let names = arch.conditioned_names();
            let mut reports = Vec::new();
            for (i, (theta, rep)) in runs.into_iter().enumerate() {
                bundle.set_conditioned(i, theta.restrict(&names)?)?;
                reports.push(rep);
            }
            (bundle, concat_reports(reports))
        }
        Method::Dera => {
            let w = RewardWeights::new(cfg.train.w.clone().unwrap_or_default())?;
            let (theta_min, rep) = trainer::soft_train(&env, &arch, &theta_ref, cfg.sampler.alpha_min, &w, &tc)?;
            let mut bundle = ParameterBundle::from_reference(arch, &theta_ref, 1, None)?;
            bundle.set_conditioned(0, theta_min.restrict(&arch.conditioned_names())?)?;
            (bundle, rep)
        }
    };
    write_file(&dir.join("checkpoint.txt"), &checkpoint_text(method, &bundle))?;
    write_file(&dir.join("report.csv"), &report.to_csv())?;
    println!("trained {method} for {} steps; outputs in {}", report.records.len(), dir.display());
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> anyhow::Result<()> {
    let dir = &cfg.output.dir;
    let env = cfg.build_env()?;
    let arch = cfg.build_arch(&env)?;
    let (_, env) = arch.init_reference(&env, clp_lab::rng::split_seed(cfg.seed, "policy"))?;
    let alphas = cfg.alphas()?;
    let grid = cfg.w_grid()?;
    let method = cfg.method;

    let bundle = if method == Method::Oracle {
        None
    } else {
        let path = checkpoint.map_or_else(|| dir.join("checkpoint.txt"), Path::to_path_buf);
        let text = fs::read_to_string(&path).map_err(Error::from).with_context(|| format!("reading {}", path.display()))?;
        let b = ParameterBundle::from_text(&text)?;
        if b.arch() != &arch {
            bail!(Error::Config(format!("checkpoint architecture `{}` does not match config `{arch}`", b.arch())));
        }
        Some(b)
    };

    let experts;
    let (theta_min, theta_ref);
    let source: Box<dyn PolicySource + '_> = match (method, &bundle) {
        (Method::Oracle, _) => Box::new(OracleSource),
        (Method::RewardedSoups, Some(b)) => {
            experts = (0..b.m()).map(|i| b.full_copy(i)).collect::<clp_lab::Result<Vec<_>>>()?;
            theta_ref = b.full_reference()?;
            Box::new(SoupsSource { arch, experts: &experts, theta_ref: &theta_ref })
        }
        (Method::Dera, Some(b)) => {
            theta_min = b.full_copy(0)?;
            theta_ref = b.full_reference()?;
            Box::new(DeraSource { arch, theta_min: &theta_min, theta_ref: &theta_ref })
        }
        (_, Some(b)) => Box::new(BundleSource { name: method.to_string(), bundle: b }),
        (_, None) => unreachable!("checkpoint loaded for every trained method"),
    };
    let front = evaluation::sweep(source.as_ref(), &env, &alphas, &grid)?;
    write_file(&dir.join("front.csv"), &evaluation::fronts_to_csv(&[&front])?)?;
    write_file(&dir.join("plot.json"), &evaluation::plot_data_json(&[&front])?)?;
    println!("{} points written to {}", front.points.len(), dir.join("front.csv").display());
    if let Ok(s) = evaluation::spread(&front) {
        println!("{} {s:?}", evaluation::SPREAD_LABEL);
    }
    Ok(())
}
