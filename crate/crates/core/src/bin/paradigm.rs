use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use paradigm::baseline::Transducer;
use paradigm::config::{parse_override, ModelKind, RunConfig};
use paradigm::corpus::{read_split, read_triples, write_split, write_triples};
use paradigm::metrics::{accuracy, avg_edit_distance, AffixMatch, EvalOptions};
use paradigm::parallel;
use paradigm::predict::{
    evaluate_predictions, format_predictions, predict_all, read_predictions, read_queries, Query, System,
};
use paradigm::seq2seq;
use paradigm::synthetic;
use paradigm::Error;

#[derive(Parser)]
#[command(name = "paradigm", version, about = "Derivational paradigm completion")]
struct Cli {
    /// Config file (flat TOML). Defaults to $PARADIGM_CONFIG when set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set hidden=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a triple file and write train/dev/test splits plus a manifest.
    Split {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// uniform or stratified
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Train a model on a split directory and keep the best dev epoch.
    Train {
        #[arg(long)]
        splits: Option<PathBuf>,
        /// Model path to write.
        #[arg(long)]
        model: Option<PathBuf>,
        /// baseline or seq2seq
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Write k-best predictions for base/tag rows.
    Predict {
        #[arg(long)]
        model: Option<PathBuf>,
        /// TSV with base and tag in the first two columns.
        #[arg(long)]
        input: PathBuf,
        /// Output TSV; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a prediction file against gold triples.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Cutoff for k-best accuracy.
        #[arg(long)]
        k: Option<usize>,
        /// Affix inventory, one suffix per line.
        #[arg(long)]
        affixes: Option<PathBuf>,
        /// Count an affix as correct only when the whole word is.
        #[arg(long)]
        whole_word: bool,
        /// Also write the JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Generate a corpus from the built-in synthetic suffix grammar.
    Synth {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// sequential or parallel
    #[arg(long)]
    execution: Option<String>,
}

struct Failure {
    code: u8,
    message: String,
}

const USAGE: u8 = 1;
const DATA: u8 = 2;
const MODEL: u8 = 3;

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => USAGE,
            Error::GreedyOnly
            | Error::Model(_)
            | Error::ShapeMismatch { .. }
            | Error::NonScalarLoss(_)
            | Error::IdOutOfRange { .. } => MODEL,
            _ => DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::from(e).into()
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: USAGE,
        message: message.into(),
    }
}

fn model_error(e: Error) -> Failure {
    Failure {
        code: MODEL,
        message: e.to_string(),
    }
}

type CliResult<T = ()> = Result<T, Failure>;

struct Overrides(Vec<(String, toml::Value)>);

impl Overrides {
    fn from_cli(set: &[String]) -> CliResult<Self> {
        Ok(Overrides(
            set.iter().map(|s| parse_override(s)).collect::<Result<_, _>>()?,
        ))
    }

    fn path(&mut self, key: &str, v: &Option<PathBuf>) {
        if let Some(p) = v {
            self.0.push((key.into(), toml::Value::String(p.display().to_string())));
        }
    }

    fn text(&mut self, key: &str, v: &Option<String>) {
        if let Some(s) = v {
            self.0.push((key.into(), toml::Value::String(s.clone())));
        }
    }

    fn int(&mut self, key: &str, v: Option<u64>) -> CliResult {
        if let Some(n) = v {
            let n = i64::try_from(n).map_err(|_| usage(format!("{key} is too large")))?;
            self.0.push((key.into(), toml::Value::Integer(n)));
        }
        Ok(())
    }

    fn common(&mut self, c: &Common) -> CliResult {
        self.int("seed", c.seed)?;
        self.text("execution", &c.execution);
        Ok(())
    }
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| usage(format!("missing `{key}` (flag or config key)")))
}

/// Writes a log line to stderr and to the log file.
fn log(sink: &mut File, line: &str) -> io::Result<()> {
    eprintln!("{line}");
    writeln!(sink, "{line}")
}

fn cmd_split(config: &RunConfig) -> CliResult {
    let data = required(&config.data, "data")?;
    let out = required(&config.output, "output")?;
    let raw = read_triples(data)?;
    let m = write_split(&raw, config.seed, config.strategy, out)?;
    println!(
        "retained={} removed={} train={} dev={} test={} seed={} out={}",
        m.retained,
        m.removed,
        m.train,
        m.dev,
        m.test,
        m.seed,
        out.display()
    );
    Ok(())
}

fn cmd_train(config: &RunConfig) -> CliResult {
    let splits = required(&config.splits, "splits")?;
    let model_path = required(&config.model, "model")?;
    let split = read_split(splits)?;
    let log_path = PathBuf::from(format!("{}.log", model_path.display()));
    let mut sink = File::create(&log_path).map_err(|e| Error::File {
        path: log_path.clone(),
        source: e,
    })?;
    log(
        &mut sink,
        &format!(
            "{} train={} dev={} execution={}",
            config.header(),
            split.train.len(),
            split.dev.len(),
            if config.execution.is_parallel() {
                "parallel"
            } else {
                "sequential"
            }
        ),
    )?;
    match config.kind {
        ModelKind::Seq2seq => {
            let mut write_err = None;
            let (model, result) = seq2seq::train(&split, &config.seq2seq(), config.execution, |r| {
                let line = format!(
                    "epoch={} train_loss={:.6} dev_accuracy={:.6} dev_edit={:.6}",
                    r.epoch, r.train_loss, r.dev_accuracy, r.dev_edit
                );
                if let Err(e) = log(&mut sink, &line) {
                    write_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = write_err {
                return Err(e.into());
            }
            let best = result.best;
            model.save(model_path).map_err(model_error)?;
            log(
                &mut sink,
                &format!(
                    "selected_epoch={} dev_accuracy={:.6} dev_edit={:.6} model={}",
                    best.epoch,
                    best.dev_accuracy,
                    best.dev_edit,
                    model_path.display()
                ),
            )?;
        }
        ModelKind::Baseline => {
            let t = Transducer::train(&split.train, config.baseline())?;
            let preds = parallel::map(config.execution, &split.dev, |x| t.predict(&x.base, &x.tag).0);
            let gold: Vec<&str> = split.dev.iter().map(|x| x.derived.as_str()).collect();
            let (acc, edit) = if gold.is_empty() {
                (0.0, 0.0)
            } else {
                (accuracy(&preds, &gold)?, avg_edit_distance(&preds, &gold)?)
            };
            t.save(model_path).map_err(model_error)?;
            log(
                &mut sink,
                &format!(
                    "epochs={} dev_accuracy={acc:.6} dev_edit={edit:.6} model={}",
                    config.epochs(),
                    model_path.display()
                ),
            )?;
        }
    }
    Ok(())
}

fn cmd_predict(config: &RunConfig, input: &Path) -> CliResult {
    let model_path = required(&config.model, "model")?;
    let system = System::load(model_path).map_err(model_error)?;
    let queries: Vec<Query> = read_queries(input)?;
    let preds = predict_all(&system, &queries, config.predict_k, config.execution)?;
    let text = format_predictions(&preds);
    match &config.output {
        Some(path) => {
            fs::write(path, text).map_err(|e| Error::File {
                path: path.clone(),
                source: e,
            })?;
            eprintln!(
                "kind={} queries={} rows={} k={} output={}",
                system.kind(),
                queries.len(),
                preds.len(),
                config.predict_k,
                path.display()
            );
        }
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_evaluate(config: &RunConfig, predictions: &Path, gold: &Path, json: Option<&Path>) -> CliResult {
    let preds = read_predictions(predictions)?;
    let gold = read_triples(gold)?;
    let inventory = config.inventory()?;
    let opts = EvalOptions {
        k: config.k,
        inventory: &inventory,
        affix_match: config.affix_match,
    };
    let report = evaluate_predictions(&preds, &gold, &opts)?;
    let text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    if let Some(path) = json {
        fs::write(path, format!("{text}\n")).map_err(|e| Error::File {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    println!("{text}");
    println!();
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_synth(n: usize, seed: u64, out: &Path) -> CliResult {
    if n == 0 {
        return Err(usage("n must be positive"));
    }
    write_triples(out, &synthetic::generate(n, seed))?;
    eprintln!("triples={n} seed={seed} out={}", out.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let mut ov = Overrides::from_cli(&cli.set)?;
    let load = |ov: &Overrides| RunConfig::resolve(cli.config.as_deref(), &ov.0).map_err(Failure::from);
    match &cli.command {
        Command::Split {
            data,
            out,
            common,
            strategy,
        } => {
            ov.path("data", data);
            ov.path("output", out);
            ov.text("strategy", strategy);
            ov.common(common)?;
            cmd_split(&load(&ov)?)
        }
        Command::Train {
            splits,
            model,
            kind,
            epochs,
            common,
        } => {
            ov.path("splits", splits);
            ov.path("model", model);
            ov.text("kind", kind);
            ov.int("epochs", epochs.map(|e| e as u64))?;
            ov.common(common)?;
            cmd_train(&load(&ov)?)
        }
        Command::Predict {
            model,
            input,
            output,
            k,
            common,
        } => {
            ov.path("model", model);
            ov.path("output", output);
            ov.int("predict_k", k.map(|k| k as u64))?;
            ov.common(common)?;
            cmd_predict(&load(&ov)?, input)
        }
        Command::Evaluate {
            predictions,
            gold,
            k,
            affixes,
            whole_word,
            json,
        } => {
            ov.int("k", k.map(|k| k as u64))?;
            ov.path("affixes", affixes);
            let mut config = load(&ov)?;
            if *whole_word {
                config.affix_match = AffixMatch::WholeWord;
            }
            cmd_evaluate(&config, predictions, gold, json.as_deref())
        }
        Command::Synth { n, seed, out } => cmd_synth(*n, *seed, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
