use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use admac::config::KvConfig;
use admac::envs::EnvConfig;
use admac::harness::{ablation, evaluate, gradcheck_suite, plot, read_results, write_results, AblationSpec, EvalSpec};
use admac::reliability::{build_dataset, train_estimator, Dataset};
use admac::training::{tail_mean_length, train_full_pipeline, train_stage1, Bundle, PipelineConfig};
use admac::{Error, Result};

#[derive(Parser)]
#[command(name = "admac", version, about = "Train, attack and evaluate communicating multi-agent policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// overrides the `seed` key
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Stage 1 policy training (`stage = 1`) or the full pipeline (`stage = full`)
    Train(Common),
    /// Collect a labelled reliability dataset from a trained bundle
    BuildDataset(Common),
    /// Fit the reliability estimator on a dataset and attach it to a bundle
    TrainEstimator(Common),
    /// Sweep attacks and probabilities, writing a results CSV
    Evaluate(Common),
    /// DPN / DPN+RE / DPN+IRE / attention at a fixed attack probability
    Ablate(Common),
    /// One SVG chart per task and attack from a results CSV
    Plot(Common),
    /// Finite-difference checks of every differentiable component
    Gradcheck(Common),
}

fn load_config(c: &Common) -> Result<KvConfig> {
    let mut kv = match &c.config {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::new(),
    };
    if let Some(s) = c.seed {
        kv.set("seed", s);
        if kv.raw("seeds").is_some() {
            kv.set("seeds", s);
        }
    }
    Ok(kv)
}

fn path_key(kv: &KvConfig, key: &str, default: &str) -> Result<PathBuf> {
    kv.get_or(key, PathBuf::from(default))
}

fn train(kv: &KvConfig) -> Result<()> {
    let env = EnvConfig::from_kv(kv)?;
    let cfg = PipelineConfig::from_kv(kv)?;
    let out = path_key(kv, "bundle", "bundle")?;
    let stage: String = kv.get_or("stage", "full".to_string())?;
    let (bundle, curve) = match stage.as_str() {
        "full" => train_full_pipeline(&env, &cfg)?,
        "1" => {
            let s1 = train_stage1(&env, &cfg.train)?;
            let bundle = Bundle {
                env: env.clone(),
                config: cfg.clone(),
                final_mean_length: tail_mean_length(&s1.curve),
                core: s1.core,
                value: s1.value,
                estimator: None,
                estimator_metrics: None,
                dataset_stats: None,
            };
            (bundle, s1.curve)
        }
        other => return Err(Error::Config(format!("stage must be 1 or full, got {other}"))),
    };
    if let Some(path) = kv.get::<PathBuf>("curve")? {
        let mut text = String::from("epoch,episodes,mean_length,mean_return,policy_loss,value_loss,grad_norm\n");
        for s in &curve {
            text.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.epoch, s.episodes, s.mean_length, s.mean_return, s.policy_loss, s.value_loss, s.grad_norm
            ));
        }
        std::fs::write(path, text)?;
    }
    bundle.save(&out)?;
    println!("final mean length {:.3}", bundle.final_mean_length);
    if let Some(m) = &bundle.estimator_metrics {
        println!("estimator recall {:.4} precision {:.4}", m.recall, m.precision);
    }
    println!("bundle written to {}", out.display());
    Ok(())
}

fn build(kv: &KvConfig) -> Result<()> {
    let bundle = Bundle::load(&path_key(kv, "bundle", "bundle")?)?;
    let mut cfg = PipelineConfig::from_kv(kv)?.dataset;
    if kv.raw("seed").is_none() {
        cfg.seed = bundle.config.dataset.seed;
    }
    let (data, stats) = build_dataset(&bundle.core, &bundle.env, &cfg)?;
    let out = path_key(kv, "dataset", "reliability.ds")?;
    data.save(&out)?;
    println!(
        "{} samples ({} reliable; raw {}, random {}, adversarial {}) written to {}",
        stats.samples,
        stats.reliable,
        stats.raw,
        stats.random,
        stats.adversarial,
        out.display()
    );
    Ok(())
}

fn fit_estimator(kv: &KvConfig) -> Result<()> {
    let dir = path_key(kv, "bundle", "bundle")?;
    let mut bundle = Bundle::load(&dir)?;
    let data = Dataset::load(&path_key(kv, "dataset", "reliability.ds")?)?;
    let cfg = PipelineConfig::from_kv(kv)?.estimator;
    let (est, metrics) = train_estimator(&data, &cfg)?;
    println!(
        "recall {:.4} precision {:.4} accuracy {:.4} ({} held out)",
        metrics.recall, metrics.precision, metrics.accuracy, metrics.holdout_samples
    );
    bundle.config.estimator = cfg;
    bundle.estimator = Some(est);
    bundle.estimator_metrics = Some(metrics);
    let out = kv.get::<PathBuf>("output_bundle")?.unwrap_or(dir);
    bundle.save(&out)?;
    println!("bundle written to {}", out.display());
    Ok(())
}

fn eval(kv: &KvConfig) -> Result<()> {
    let spec = EvalSpec::from_kv(kv)?;
    let rows = evaluate(&spec)?;
    write_results(&rows, &spec.output)?;
    println!("{} rows written to {}", rows.len(), spec.output.display());
    Ok(())
}

fn ablate(kv: &KvConfig) -> Result<()> {
    let spec = AblationSpec::from_kv(kv)?;
    let rows = ablation(&spec)?;
    write_results(&rows, &spec.output)?;
    for r in &rows {
        println!("{:<10} {:<11} mean {:.3} ± {:.3}", r.framework, r.attack, r.mean_timesteps, r.stderr);
    }
    Ok(())
}

fn charts(kv: &KvConfig) -> Result<()> {
    let rows = read_results(&path_key(kv, "input", "results.csv")?)?;
    let dir = path_key(kv, "plot_dir", "plots")?;
    for p in plot(&rows, &dir)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn gradcheck(kv: &KvConfig) -> Result<bool> {
    let cases: usize = kv.get_or("cases", 100)?;
    let seed: u64 = kv.get_or("seed", 0)?;
    let mut ok = true;
    for r in gradcheck_suite(cases, seed)? {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<22} {:>4} cases  max rel err {:.3e} (tol {:.0e})  {verdict}", r.name, r.cases, r.max_rel_err, r.tolerance);
        ok &= r.passed();
    }
    Ok(ok)
}

fn run(command: Command) -> Result<bool> {
    let common = match &command {
        Command::Train(c)
        | Command::BuildDataset(c)
        | Command::TrainEstimator(c)
        | Command::Evaluate(c)
        | Command::Ablate(c)
        | Command::Plot(c)
        | Command::Gradcheck(c) => c.clone(),
    };
    if let Some(p) = &common.config {
        if !Path::new(p).exists() {
            return Err(Error::Usage(format!("config file {} not found", p.display())));
        }
    }
    let kv = load_config(&common)?;
    match command {
        Command::Train(_) => train(&kv)?,
        Command::BuildDataset(_) => build(&kv)?,
        Command::TrainEstimator(_) => fit_estimator(&kv)?,
        Command::Evaluate(_) => eval(&kv)?,
        Command::Ablate(_) => ablate(&kv)?,
        Command::Plot(_) => charts(&kv)?,
        Command::Gradcheck(_) => return gradcheck(&kv),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e @ Error::Usage(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
