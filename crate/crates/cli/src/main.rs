//! `embryo`: synthesize movies, run the pipeline, evaluate and tabulate.
//!
//! Exit codes: 0 on success, 1 on invalid input, 2 when a backend fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use embryo_core::json::{format_float, to_canonical_string_with, FloatStyle};
use embryo_core::model::EmbryoMovie;
use embryo_core::pipeline::{
    ablation_table, evaluate_run, run_pipeline, write_backend_outputs, BackendSuite, EvaluationReport, FileBackend,
    PipelineConfig, PipelineError, PipelineResult, ABLATION_COLUMNS,
};
use embryo_core::synth::{derive_seed, generate_movie, GroundTruth, SynthBackend, SynthConfig};

const MOVIE_FILE: &str = "movie.json";
const TRUTH_FILE: &str = "truth.json";
const SYNTH_CONFIG_FILE: &str = "synth_config.json";

#[derive(Parser)]
#[command(name = "embryo", version, about = "Embryo time-lapse measurement pipeline")]
struct Cli {
    /// Worker threads for per-embryo parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic embryos with ground truth and backend outputs.
    Synth {
        /// Synthetic data configuration (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        embryos: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pipeline configuration that fixes the ROI used for backend outputs.
        #[arg(long)]
        pipeline_config: Option<PathBuf>,
    },
    /// Run the pipeline on one movie manifest.
    Run {
        #[arg(long)]
        movie: PathBuf,
        /// Directory of backend NDJSON files, or `synth` to render from the
        /// ground truth next to the manifest.
        #[arg(long)]
        backends: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a pipeline result against ground truth.
    Eval {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Evaluation thresholds; defaults to the configuration stored in the result.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Aggregate evaluation reports into an ablation table.
    Report {
        /// Glob matching report JSON files.
        #[arg(long)]
        reports: String,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Validation(anyhow::Error),
    Backend(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Validation(e)
    }
}

fn pipeline_failure(e: PipelineError, context: &str) -> Failure {
    let err = anyhow::Error::new(e).context(context.to_string());
    let backend = err.downcast_ref::<PipelineError>().is_some_and(|e| e.is_backend_failure());
    if backend {
        Failure::Backend(err)
    } else {
        Failure::Validation(err)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T, style: FloatStyle) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let text = to_canonical_string_with(value, style)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_pipeline_config(path: Option<&Path>) -> anyhow::Result<PipelineConfig> {
    let config = match path {
        Some(p) => read_json(p)?,
        None => PipelineConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

fn synth(
    config: Option<&Path>,
    out: &Path,
    embryos: usize,
    seed: u64,
    pipeline_config: Option<&Path>,
) -> Result<(), Failure> {
    let base: SynthConfig = match config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    base.validate().map_err(|e| anyhow!(e))?;
    let pipeline = load_pipeline_config(pipeline_config)?;
    if embryos == 0 {
        return Err(anyhow!("--embryos must be positive").into());
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    (0..embryos).into_par_iter().try_for_each(|k| -> Result<(), Failure> {
        let config = SynthConfig {
            embryo_id: format!("{}_{k:04}", base.embryo_id),
            seed: derive_seed(seed, k as u64),
            ..base.clone()
        };
        let dir = out.join(&config.embryo_id);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let (movie, truth) = generate_movie(&config).map_err(|e| anyhow!(e))?;
        write_json(&dir.join(MOVIE_FILE), &movie, FloatStyle::RoundTrip)?;
        write_json(&dir.join(TRUTH_FILE), &truth, FloatStyle::RoundTrip)?;
        write_json(&dir.join(SYNTH_CONFIG_FILE), &config, FloatStyle::RoundTrip)?;
        let backend = SynthBackend::new(truth, config).map_err(|e| anyhow!(e))?;
        write_backend_outputs(&dir, &movie, &BackendSuite::uniform(&backend), &pipeline)
            .map_err(|e| pipeline_failure(e, &format!("embryo {}", movie.embryo_id)))
    })
}

fn run(movie_path: &Path, backends: &str, config: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let movie: EmbryoMovie = read_json(movie_path)?;
    let config = load_pipeline_config(config)?;
    let context = format!("embryo {}", movie.embryo_id);
    let result = if backends == "synth" {
        let dir = movie_path.parent().unwrap_or(Path::new("."));
        let truth: GroundTruth = read_json(&dir.join(TRUTH_FILE))?;
        let synth_config: SynthConfig = read_json(&dir.join(SYNTH_CONFIG_FILE))?;
        let backend = SynthBackend::new(truth, synth_config).map_err(|e| anyhow!(e))?;
        run_pipeline(&movie, &BackendSuite::uniform(&backend), &config)
    } else {
        let files = FileBackend::load(Path::new(backends)).map_err(|e| anyhow!(e))?;
        run_pipeline(&movie, &BackendSuite::uniform(&files), &config)
    }
    .map_err(|e| pipeline_failure(e, &context))?;
    write_json(out, &result, FloatStyle::RoundTrip)?;
    Ok(())
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn eval(result: &Path, truth: &Path, out: &Path, csv: Option<&Path>, config: Option<&Path>) -> Result<(), Failure> {
    let result: PipelineResult = read_json(result)?;
    let truth: GroundTruth = read_json(truth)?;
    let config = match config {
        Some(_) => load_pipeline_config(config)?,
        None => result.config.clone(),
    };
    let report = evaluate_run(&result, &truth, &config).map_err(|e| anyhow!(e))?;
    write_json(out, &report, FloatStyle::Fixed6)?;
    if let Some(path) = csv {
        let (header, row): (Vec<String>, Vec<String>) = report.flat_fields().into_iter().unzip();
        write_csv(path, &header, &[row])?;
    }
    Ok(())
}

fn report(pattern: &str, out: &Path) -> Result<(), Failure> {
    let mut paths: Vec<PathBuf> = glob::glob(pattern)
        .with_context(|| format!("bad glob {pattern:?}"))?
        .collect::<Result<_, _>>()
        .map_err(|e| anyhow!(e))?;
    paths.sort();
    if paths.is_empty() {
        return Err(anyhow!("no reports match {pattern:?}").into());
    }
    let reports: Vec<EvaluationReport> =
        paths.par_iter().map(|p| read_json(p)).collect::<anyhow::Result<_>>()?;
    let cell = |x: Option<f64>| x.map(format_float).unwrap_or_else(|| "--".to_string());
    let rows: Vec<Vec<String>> = ablation_table(&reports)
        .into_iter()
        .map(|r| {
            vec![
                r.setting,
                r.embryos.to_string(),
                cell(r.fragmentation_pct),
                cell(r.stage_pct),
                cell(r.blastomere_map),
                cell(r.pronuclei_map),
            ]
        })
        .collect();
    let header: Vec<String> = ABLATION_COLUMNS.iter().map(|s| s.to_string()).collect();
    write_csv(out, &header, &rows)?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(anyhow!("--threads must be positive").into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| anyhow!(e))?;
    }
    match cli.command {
        Command::Synth { config, out, embryos, seed, pipeline_config } => {
            synth(config.as_deref(), &out, embryos, seed, pipeline_config.as_deref())
        }
        Command::Run { movie, backends, config, out } => run(&movie, &backends, config.as_deref(), &out),
        Command::Eval { result, truth, out, csv, config } => {
            eval(&result, &truth, &out, csv.as_deref(), config.as_deref())
        }
        Command::Report { reports, out } => report(&reports, &out),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Backend(e)) => {
            eprintln!("backend failure: {e:#}");
            ExitCode::from(2)
        }
    }
}
