use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use ibm_core::harness::{
    evaluate_pool, load_pool, load_tasks, run_baseline_on, run_with_fwt, save_pool, RunConfig,
    RunReport, Strategy,
};

const REPORT_FILE: &str = "report.txt";
const POOL_FILE: &str = "pool.ibm";
const CONFIG_FILE: &str = "config.toml";
const TIMINGS_FILE: &str = "timings.csv";

#[derive(Parser)]
#[command(name = "ibm", version, about = "Continual learning with information-bottleneck masked sub-networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a task sequence and write report, memory pool and config to the output directory.
    Train { config: PathBuf },
    /// Re-evaluate every task stored in a memory pool on the datasets a config describes.
    Eval { pool: PathBuf, data_spec: PathBuf },
    /// Run a comparison baseline on the same tasks.
    Baseline {
        config: PathBuf,
        #[arg(long, value_enum)]
        strategy: BaselineArg,
    },
    /// Summarize a finished run directory.
    Report { run_dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Finetune,
    Multitask,
}

impl From<BaselineArg> for Strategy {
    fn from(b: BaselineArg) -> Self {
        match b {
            BaselineArg::Finetune => Strategy::Finetune,
            BaselineArg::Multitask => Strategy::Multitask,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config } => train(&config),
        Command::Eval { pool, data_spec } => eval(&pool, &data_spec),
        Command::Baseline { config, strategy } => baseline(&config, strategy.into()),
        Command::Report { run_dir } => report(&run_dir),
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn prepare_output(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.resolved_output_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn train(config_path: &Path) -> Result<()> {
    let config = load_config(config_path)?;
    let tasks = load_tasks(&config)?;
    info!("loaded {} tasks", tasks.len());
    let out = run_with_fwt(&config, &tasks)?;
    let dir = prepare_output(&config)?;
    write(&dir.join(REPORT_FILE), &out.report.to_text())?;
    write(&dir.join(TIMINGS_FILE), &out.report.timings_csv())?;
    write(&dir.join(CONFIG_FILE), &config.to_toml())?;
    save_pool(&dir.join(POOL_FILE), &out.net, &out.pool)?;
    print_summary(&out.report);
    println!("wrote {}", dir.display());
    Ok(())
}

fn eval(pool_path: &Path, data_spec: &Path) -> Result<()> {
    let (net, pool) = load_pool(pool_path).with_context(|| format!("loading pool {}", pool_path.display()))?;
    let config = load_config(data_spec)?;
    let tasks = load_tasks(&config)?;
    if tasks.len() < pool.len() {
        bail!("pool holds {} tasks but the data spec describes only {}", pool.len(), tasks.len());
    }
    let accuracies = evaluate_pool(&net, &pool, &tasks[..pool.len()])?;
    println!("task,accuracy");
    for (t, a) in accuracies.iter().enumerate() {
        println!("{t},{a}");
    }
    println!("mean,{}", accuracies.iter().sum::<f64>() / accuracies.len() as f64);
    Ok(())
}

fn baseline(config_path: &Path, strategy: Strategy) -> Result<()> {
    let config = load_config(config_path)?;
    let tasks = load_tasks(&config)?;
    let report = run_baseline_on(&config, &tasks, strategy)?;
    let dir = prepare_output(&config)?;
    let path = dir.join(format!("report-{}.txt", strategy.name()));
    write(&path, &report.to_text())?;
    print_summary(&report);
    println!("wrote {}", path.display());
    Ok(())
}

fn report(run_dir: &Path) -> Result<()> {
    let path = run_dir.join(REPORT_FILE);
    let report = RunReport::read(&path).with_context(|| format!("reading {}", path.display()))?;
    print_summary(&report);
    println!("accuracy matrix (row = after training task, column = evaluated task):");
    for row in report.accuracy.rows() {
        let cells: Vec<String> = row.iter().map(|a| format!("{a:.4}")).collect();
        println!("  {}", cells.join("  "));
    }
    if !report.mask_counts.is_empty() {
        println!("selected weights per task:");
        for t in 0..report.tasks() {
            let (sel, tot): (usize, usize) = report
                .mask_counts
                .iter()
                .filter(|m| m.task == t)
                .fold((0, 0), |(s, n), m| (s + m.selected, n + m.total));
            println!("  task {t}: {sel}/{tot} ({:.1}%)", 100.0 * sel as f64 / tot.max(1) as f64);
        }
    }
    Ok(())
}

fn print_summary(report: &RunReport) {
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "{} seed {}: tasks {}  ACC {:.4}  BWT {}  FWT {}",
        report.strategy.name(),
        report.seed,
        report.tasks(),
        report.acc,
        opt(report.bwt),
        opt(report.fwt)
    );
}
