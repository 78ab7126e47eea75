use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::{json, Value};

use lead_core::metrics::{evaluate, GroundTruth, Metric};
use lead_core::oracle::{run_suite, Suite};
use lead_core::synthetic::{SyntheticSpec, ZOO_SNRS};
use lead_core::zoo::SCHEMA_VERSION;
use lead_core::{
    read_feature_file, rank_zoo, run_lowdata, score_model, split_by_class, write_feature_file,
    Error, PipelineConfig, TimeScale,
};

#[derive(Parser)]
#[command(name = "lead", version, about = "Rank pre-trained models by transferability")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON config file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for scoring models concurrently.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Time scale: `auto` or a non-negative number.
    #[arg(long, global = true)]
    time: Option<TimeScale>,
    /// Overrides every seed in the config (head, NTK sampling, SVM, low-data).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path; defaults to `output.path` from the config, then stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Score a single feature file.
    Score { file: PathBuf },
    /// Score and rank every `.leadfeat` file in a directory.
    Rank { dir: Option<PathBuf> },
    /// Compare a rank or low-data report against ground-truth accuracies.
    Eval {
        report: PathBuf,
        ground_truth: PathBuf,
        /// Dataset column value to select from a three-column CSV.
        #[arg(long)]
        dataset: Option<String>,
        /// Comma-separated list, e.g. `tauw,tau,rw,rel1,rel3`.
        #[arg(long)]
        metrics: Option<String>,
    },
    /// Rank on repeated per-class subsamples and average the scores.
    Lowdata {
        dir: Option<PathBuf>,
        #[arg(long)]
        samples_per_class: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Run the numerical self-checks.
    Oracle {
        #[arg(long, default_value = "all")]
        suite: Suite,
    },
    /// Validate a feature file and print its shape.
    FmtCheck { file: PathBuf },
    /// Write a synthetic SNR zoo and its ground-truth CSV into a directory.
    SynthZoo {
        dir: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 256)]
        dim: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LEAD_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            let (kind, code) = match err.downcast_ref::<Error>() {
                Some(e) if e.is_input_error() => (e.kind(), 2),
                Some(e) => (e.kind(), 1),
                None => ("Internal", 1),
            };
            let body = json!({ "kind": kind, "message": format!("{err:#}") });
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}

fn load_config(global: &GlobalArgs) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &global.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(t) = global.time {
        cfg.evolution.time = t;
    }
    if let Some(seed) = global.seed {
        cfg.head.seed = seed;
        cfg.ntk.seed = seed;
        cfg.svm.seed = seed;
        cfg.lowdata.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.output.path = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(value: &Value, path: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").map_err(|source| io_error(p, source)),
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn io_error(path: &Path, source: std::io::Error) -> anyhow::Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
    .into()
}

fn zoo_dir(arg: Option<PathBuf>, cfg: &PipelineConfig) -> anyhow::Result<PathBuf> {
    arg.or_else(|| cfg.zoo.dir.clone())
        .ok_or_else(|| Error::Config("no zoo directory given and zoo.dir is unset".into()).into())
}

/// Pulls `(model_id, score)` pairs from the `ranking` array of a report.
fn ranking_from_report(report: &Value) -> anyhow::Result<Vec<(String, f64)>> {
    let entries = report
        .get("ranking")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::InvalidReport("report has no `ranking` array".into()))?;
    entries
        .iter()
        .map(|e| {
            let id = e.get("model_id").and_then(Value::as_str);
            let score = e.get("score").and_then(Value::as_f64);
            match (id, score) {
                (Some(id), Some(score)) => Ok((id.to_string(), score)),
                _ => Err(Error::InvalidReport(format!("malformed ranking entry {e}")).into()),
            }
        })
        .collect()
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let global = cli.global;
    if let Some(jobs) = global.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| anyhow!("thread pool: {e}"))?;
    }
    let cfg = load_config(&global)?;
    let out = cfg.output.path.clone();
    match cli.command {
        Command::Score { file } => {
            let fs = read_feature_file(&file)?;
            let report = score_model(&fs, &cfg)?;
            let mut value = serde_json::to_value(report)?;
            if let Value::Object(map) = &mut value {
                map.insert("schema_version".into(), json!(SCHEMA_VERSION));
                map.insert("config".into(), serde_json::to_value(&cfg)?);
            }
            emit(&value, out.as_deref())?;
        }
        Command::Rank { dir } => {
            let dir = zoo_dir(dir, &cfg)?;
            let sets = lead_core::zoo::load_zoo(&dir)?;
            info!("loaded {} feature files from {}", sets.len(), dir.display());
            let report = rank_zoo(&sets, &cfg)?;
            emit(&serde_json::to_value(report)?, out.as_deref())?;
        }
        Command::Eval {
            report,
            ground_truth,
            dataset,
            metrics,
        } => {
            let text = std::fs::read_to_string(&report).map_err(|source| Error::Io {
                path: report.clone(),
                source,
            })?;
            let value: Value = serde_json::from_str(&text).map_err(Error::from)?;
            let pred = ranking_from_report(&value)?;
            let gt = GroundTruth::from_csv(&ground_truth, dataset.as_deref())?;
            let list = match metrics {
                Some(s) => Metric::parse_list(&s)?,
                None => cfg.metrics.list.clone(),
            };
            let eval = evaluate(&gt, &pred, &list, cfg.metrics.rw_weights)?;
            emit(&serde_json::to_value(eval)?, out.as_deref())?;
        }
        Command::Lowdata {
            dir,
            samples_per_class,
            repeats,
        } => {
            let mut cfg = cfg;
            if let Some(n) = samples_per_class {
                cfg.lowdata.samples_per_class = n;
            }
            if let Some(r) = repeats {
                cfg.lowdata.repeats = r;
            }
            cfg.validate()?;
            let dir = zoo_dir(dir, &cfg)?;
            let sets = lead_core::zoo::load_zoo(&dir)?;
            let report = run_lowdata(&sets, &cfg)?;
            emit(&serde_json::to_value(report)?, out.as_deref())?;
        }
        Command::Oracle { suite } => {
            let report = run_suite(suite)?;
            eprint!("{}", report.table());
            emit(&serde_json::to_value(&report)?, out.as_deref())?;
            if !report.passed {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::FmtCheck { file } => {
            let fs = read_feature_file(&file)?;
            let summary = json!({
                "ok": true,
                "model_id": fs.model_id(),
                "n": fs.len(),
                "d": fs.dim(),
                "k": fs.num_classes(),
                "class_sizes": split_by_class(&fs).sizes(),
            });
            emit(&summary, out.as_deref())?;
        }
        Command::SynthZoo {
            dir,
            n,
            dim,
            classes,
        } => {
            let seed = global.seed.unwrap_or(0);
            std::fs::create_dir_all(&dir).map_err(|source| io_error(&dir, source))?;
            let zoo = SyntheticSpec::new(n, dim, classes, seed).zoo(&ZOO_SNRS)?;
            let mut csv = String::from("model_id,accuracy\n");
            for (fs, snr) in zoo.iter().zip(ZOO_SNRS) {
                write_feature_file(fs, dir.join(format!("{}.leadfeat", fs.model_id())))?;
                csv.push_str(&format!("{},{snr}\n", fs.model_id()));
            }
            let gt = dir.join("ground_truth.csv");
            std::fs::write(&gt, csv).map_err(|source| io_error(&gt, source))?;
            info!("wrote {} models to {}", zoo.len(), dir.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}
