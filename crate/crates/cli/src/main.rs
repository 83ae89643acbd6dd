use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use vbcce::runner::{self, ExperimentConfig, Task};

#[derive(Parser)]
#[command(name = "vbcce", version, about = "Hahn-echo decoherence of V_B- in h-BN by cluster-correlation expansion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Coherence curves L(2τ) over a field grid, with T2 per field.
    Sweep(RunArgs),
    /// Analytic ESEEM decomposition per nucleus.
    Eseem(RunArgs),
    /// Cancellation ratios, transition boundary and the ∏V0 intercept.
    Tb(RunArgs),
    /// T2 from existing coherence CSV files.
    Fit {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` config file, applied after the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset (see `--preset list`).
    #[arg(long)]
    preset: Option<String>,
    /// Output directory (default: `out_dir` from the config, else ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// First bath seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 = one per core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn build_config(args: &RunArgs, task: Task) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match args.preset.as_deref() {
        Some("list") => {
            for p in runner::PRESETS {
                println!("{p}");
            }
            std::process::exit(0);
        }
        Some(name) => runner::preset(name)?,
        None => ExperimentConfig::default(),
    };
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        cfg.apply_text(&text).with_context(|| format!("in config {}", path.display()))?;
    }
    for kv in &args.set {
        let Some((k, v)) = kv.split_once('=') else { bail!("--set expects KEY=VALUE, got '{kv}'") };
        cfg.set(k, v).with_context(|| format!("--set {kv}"))?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.task = task;
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs, task: Task) -> anyhow::Result<ExitCode> {
    let cfg = build_config(&args, task)?;
    let out = args.out.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.threads).build()?;
    let outcome = pool.install(|| runner::run_experiment(&cfg, &out))?;
    println!("wrote {} files under {}", outcome.files.len(), out.display());
    if outcome.all_failed {
        eprintln!("every field failed; see {}", out.join("summary.json").display());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn fit(paths: &[PathBuf]) -> anyhow::Result<ExitCode> {
    println!("file\tt2_us\tfit_t2_us\tstretch_n");
    let mut failed = 0;
    for p in paths {
        let (t, a) = runner::read_curve_csv(p)?;
        match runner::fit_t2_series(&t, &a) {
            Ok(r) => {
                let show = |x: Option<f64>| x.map_or("-".to_string(), |v| v.to_string());
                println!("{}\t{}\t{}\t{}", p.display(), r.t2, show(r.fit_t2), show(r.stretch_n));
            }
            Err(e) => {
                failed += 1;
                println!("{}\t-\t-\t-\t# {e}", p.display());
            }
        }
    }
    Ok(if failed == paths.len() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Sweep(a) => run(a, Task::Sweep),
        Command::Eseem(a) => run(a, Task::Eseem),
        Command::Tb(a) => run(a, Task::Tb),
        Command::Fit { csv } => fit(&csv),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
