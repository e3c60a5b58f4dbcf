use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crisis_triage::corpus::{it_counts, load_corpus, Taxonomy};
use crisis_triage::metrics::{evaluate, PriorityLevels};
use crisis_triage::pipeline::{
    self, augmented_jsonl, judged, load_inputs, prepare_mtl, PipelineError, RunConfig, RunFile, AUGMENTED_FILE,
    PROVENANCE_FILE,
};
use crisis_triage::synthetic::DeskCorpus;

#[derive(Parser)]
#[command(name = "crisis-triage", version, about = "Crisis tweet IT classification and priority estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus and print per-IT counts.
    Ingest {
        input: PathBuf,
        /// Taxonomy JSON; the packaged TREC-IS taxonomy by default.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Write the normalized corpus here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the augmented training examples of an MTL config.
    Augment {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the model of a baseline or MTL config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Predict with a trained config and write the run file.
    Predict {
        #[arg(long)]
        config: PathBuf,
    },
    /// Combine member runs as configured by an ensemble config.
    Ensemble {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score one run file against gold labels.
    Evaluate {
        run: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Write the metric report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leaderboard over several run files.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Directory for leaderboard.txt and leaderboard.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a config end to end.
    Run {
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
    },
    /// Write the synthetic desk-scale corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn taxonomy(path: Option<&Path>) -> Result<Taxonomy, PipelineError> {
    Ok(match path {
        Some(p) => Taxonomy::load(p)?,
        None => Taxonomy::trec_is(),
    })
}

fn load_config(path: &Path) -> Result<RunConfig, PipelineError> {
    let cfg = RunConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn execute(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Ingest { input, taxonomy: tax, out } => {
            let tax = taxonomy(tax.as_deref())?;
            let records = load_corpus(&input, &tax)?;
            println!("{} tweets", records.len());
            for (name, n) in tax.names().iter().zip(it_counts(&records, &tax)) {
                println!("{n:>8}  {name}");
            }
            if let Some(out) = out {
                let text: String = records.iter().map(|r| r.to_json_line() + "\n").collect();
                fs::write(&out, text).map_err(io_err(&out))?;
            }
        }
        Command::Augment { config } => {
            let cfg = load_config(&config)?;
            if !cfg.pipeline.is_mtl() {
                return Err(PipelineError::Config("augment needs an MTL config".into()));
            }
            let inputs = load_inputs(&cfg)?;
            let prepared = prepare_mtl(&cfg, &inputs)?;
            let dir = cfg.output_path();
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let path = dir.join(AUGMENTED_FILE);
            fs::write(&path, augmented_jsonl(&prepared.augmented)).map_err(io_err(&path))?;
            let path = dir.join(PROVENANCE_FILE);
            fs::write(&path, crisis_triage::augmentation::provenance_jsonl(&prepared.augmented))
                .map_err(io_err(&path))?;
            println!("{} augmented examples written to {}", prepared.augmented.len(), dir.display());
        }
        Command::Train { config } => {
            let cfg = load_config(&config)?;
            let inputs = load_inputs(&cfg)?;
            pipeline::train_stage(&cfg, &inputs)?;
            println!("model written to {}", cfg.output_path().display());
        }
        Command::Predict { config } => {
            let cfg = load_config(&config)?;
            let inputs = load_inputs(&cfg)?;
            let model = pipeline::load_model(&cfg, &inputs.taxonomy)?;
            let preds = pipeline::predict(&cfg, &model, &inputs.test)?;
            report(&cfg, &pipeline::write_outputs(&cfg, &inputs, &preds)?);
        }
        Command::Ensemble { config } => {
            let cfg = load_config(&config)?;
            if !cfg.pipeline.is_ensemble() {
                return Err(PipelineError::Config("ensemble needs an ensemble config".into()));
            }
            report(&cfg, &pipeline::run(&cfg)?);
        }
        Command::Evaluate { run, gold, taxonomy: tax, out } => {
            let tax = taxonomy(tax.as_deref())?;
            let rf = RunFile::load(&run)?;
            rf.validate(None, &tax)?;
            let gold = judged(&load_corpus(&gold, &tax)?);
            let report = evaluate(&gold, &rf.to_predictions(&tax, None)?, &tax, &PriorityLevels::default())?;
            print!("{}", report.to_json());
            if let Some(out) = out {
                fs::write(&out, report.to_json()).map_err(io_err(&out))?;
            }
        }
        Command::Compare { runs, gold, taxonomy: tax, out } => {
            let tax = taxonomy(tax.as_deref())?;
            let files = runs.iter().map(RunFile::load).collect::<Result<Vec<_>, _>>()?;
            let gold = load_corpus(&gold, &tax)?;
            let board = pipeline::compare(&files, &gold, &tax)?;
            print!("{}", board.render());
            if let Some(dir) = out {
                fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                let path = dir.join("leaderboard.txt");
                fs::write(&path, board.render()).map_err(io_err(&path))?;
                let path = dir.join("leaderboard.json");
                fs::write(&path, board.to_json()).map_err(io_err(&path))?;
            }
        }
        Command::Run { config } => {
            // validate everything before doing any work
            let cfgs = config.iter().map(|c| load_config(c)).collect::<Result<Vec<_>, _>>()?;
            for cfg in &cfgs {
                report(cfg, &pipeline::run(cfg)?);
            }
        }
        Command::Synth { out, seed } => {
            let corpus = DeskCorpus::generate(seed);
            fs::create_dir_all(&out).map_err(io_err(&out))?;
            let path = out.join("taxonomy.json");
            fs::write(&path, corpus.taxonomy.to_json()).map_err(io_err(&path))?;
            for (name, records) in [("train.jsonl", &corpus.train), ("test.jsonl", &corpus.test)] {
                let path = out.join(name);
                let text: String = records.iter().map(|r| r.to_json_line() + "\n").collect();
                fs::write(&path, text).map_err(io_err(&path))?;
            }
            println!("desk corpus written to {}", out.display());
        }
    }
    Ok(())
}

fn report(cfg: &RunConfig, outcome: &pipeline::RunOutcome) {
    println!("{}: {} rows -> {}", cfg.run_name, outcome.run_file.rows.len(), cfg.output_path().display());
    if let Some(m) = &outcome.metrics {
        println!("  nDCG {:.4}  IT F1[All] {:.4}  Pri F1[All] {:.4}", m.ndcg, m.it_f1_all, m.pri_f1_all);
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
