use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use schemex::config::Config;
use schemex::data::{load_dataset, Example};
use schemex::engine::{
    evaluate, extract_traced, oracle_bundle, supervision, train, BundleScorer, ExtractionRecord, Scorer,
};
use schemex::grid::ScoreBundle;
use schemex::metrics::Task;
use schemex::model::checkpoint::{ensure_compatible, read_checkpoint, write_checkpoint};
use schemex::query::{Query, QueryBuilder};
use schemex::schema::{parse_schema, validate_schema};
use schemex::tokenize::Vocab;
use schemex::{Error, Model32, Result, Schema};

/// Recursive schema-guided information extraction.
#[derive(Parser, Debug)]
#[command(name = "schemex", version)]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 uses every core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Schema file (JSON mapping of labels to children or null).
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
    /// Dataset file, one JSON record per line.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Vocabulary file; defaults to `<checkpoint>.vocab`.
    #[arg(long, global = true)]
    vocab: Option<PathBuf>,
    /// Checkpoint file.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Any config key, as `key=value`; repeatable, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model with teacher forcing and write a checkpoint.
    Train {
        /// Also write per-epoch logs as JSON lines here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Extract the dataset with a checkpoint and score it.
    Eval {
        /// NER, RE-strict, RE-triplet, EE-trigger, EE-argument, ABSA, Quadruple, Quintuple or CLS-strict.
        #[arg(long)]
        task: String,
        /// JSON report path.
        #[arg(long, default_value = "metric_report.json")]
        report: PathBuf,
    },
    /// Extract label paths from text.
    Extract {
        #[command(flatten)]
        input: TextInput,
        /// Print the rendering of every executed query instead of records.
        #[arg(long)]
        dump_queries: bool,
        /// Score bundle replacing the model.
        #[arg(long)]
        oracle_scores: Option<PathBuf>,
        /// Write records here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the queries built from gold prefixes for every dataset record
    /// (or for `--text`, the first-level query).
    DumpQueries {
        #[command(flatten)]
        input: TextInput,
    },
    /// Write the oracle score bundle for every query extraction of the
    /// dataset executes.
    OracleScores {
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args, Debug)]
struct TextInput {
    /// A single input text.
    #[arg(long, conflicts_with = "input")]
    text: Option<String>,
    /// File with one input text per line.
    #[arg(long)]
    input: Option<PathBuf>,
}

fn not_found<'a>(what: &'static str, path: &'a Path) -> impl FnOnce(io::Error) -> Error + 'a {
    move |e| match e.kind() {
        io::ErrorKind::NotFound => Error::NotFound {
            what,
            path: path.display().to_string(),
        },
        _ => Error::Io(e),
    }
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
    p.as_ref()
        .ok_or_else(|| Error::InvalidConfig(format!("{key} path is not set")))
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut config = match &cli.config {
        Some(p) => Config::parse_str(&fs::read_to_string(p).map_err(not_found("config", p))?)?,
        None => Config::default(),
    };
    let show = |p: &PathBuf| p.display().to_string();
    let mut pairs: Vec<(String, String)> = Vec::new();
    if let Some(j) = cli.jobs {
        pairs.push(("jobs".into(), j.to_string()));
    }
    for (key, value) in [
        ("schema", cli.schema.as_ref().map(show)),
        ("data", cli.data.as_ref().map(show)),
        ("vocab", cli.vocab.as_ref().map(show)),
        ("checkpoint", cli.checkpoint.as_ref().map(show)),
        ("seed", cli.seed.map(|s| s.to_string())),
        ("epochs", cli.epochs.map(|e| e.to_string())),
    ] {
        if let Some(v) = value {
            pairs.push((key.into(), v));
        }
    }
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("--set expects key=value, got {o:?}")))?;
        pairs.push((k.into(), v.into()));
    }
    for (k, v) in pairs {
        config.set(&k, &v)?;
    }
    config.validate()?;
    Ok(config)
}

fn load_schema(config: &Config) -> Result<Schema> {
    let path = require(&config.schema, "schema")?;
    let text = fs::read_to_string(path).map_err(not_found("schema", path))?;
    let schema = parse_schema(&text)?.with_level_modes(&config.level_modes);
    validate_schema(&schema, usize::MAX)?;
    Ok(schema)
}

fn vocab_path(config: &Config) -> Result<PathBuf> {
    match (&config.vocab, &config.checkpoint) {
        (Some(v), _) => Ok(v.clone()),
        (None, Some(c)) => Ok(PathBuf::from(format!("{}.vocab", c.display()))),
        (None, None) => Err(Error::InvalidConfig("vocab path is not set".into())),
    }
}

fn load_vocab(config: &Config) -> Result<Vocab> {
    let path = vocab_path(config)?;
    Vocab::from_file_string(&fs::read_to_string(&path).map_err(not_found("vocab", &path))?)
}

/// Vocabulary for model-free commands: the configured file when present,
/// otherwise one built from the given texts.
fn vocab_for(config: &Config, schema: &Schema, texts: &[String]) -> Result<Vocab> {
    match vocab_path(config) {
        Ok(p) if p.exists() => load_vocab(config),
        _ => {
            let corpus: Vec<&str> = texts.iter().map(String::as_str).collect();
            // Renderings do not depend on token ids, so a placeholder vocabulary serves empty input.
            Vocab::build(&corpus, &schema.labels()).or_else(|_| Vocab::build(&["_"], &schema.labels()))
        }
    }
}

fn load_model(config: &Config, vocab: &Vocab) -> Result<Model32> {
    let path = require(&config.checkpoint, "checkpoint")?;
    let file = File::open(path).map_err(not_found("checkpoint", path))?;
    let model: Model32 = read_checkpoint(&mut io::BufReader::new(file))?;
    ensure_compatible(&model.config, &config.model_config(vocab.len()))?;
    Ok(model)
}

fn read_texts(input: &TextInput) -> Result<Vec<String>> {
    match (&input.text, &input.input) {
        (Some(t), _) => Ok(vec![t.clone()]),
        (None, Some(p)) => Ok(fs::read_to_string(p)
            .map_err(not_found("input", p))?
            .lines()
            .map(str::to_string)
            .collect()),
        (None, None) => Err(Error::InvalidConfig("give --text or --input".into())),
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn cmd_train(config: &Config, log: Option<&PathBuf>) -> Result<()> {
    let schema = load_schema(config)?;
    let data_path = require(&config.data, "data")?;
    let examples = load_dataset(data_path, &schema)?;
    let ckpt = require(&config.checkpoint, "checkpoint")?.clone();
    let texts: Vec<&str> = examples.iter().map(|e| e.text.as_str()).collect();
    let vocab = Vocab::build(&texts, &schema.labels())?;
    fs::write(vocab_path(config)?, vocab.to_file_string())?;
    let mut model = Model32::init(config.model_config(vocab.len()), config.seed, config.init_std)?;
    let mut log_file = log.map(File::create).transpose()?;
    let mut log_err: Option<io::Error> = None;
    train(
        &mut model,
        &schema,
        &vocab,
        &examples,
        &config.extract_config(),
        &config.train_config(),
        |e| {
            let f1 = e.train_f1.map_or("-".to_string(), |f| format!("{f:.4}"));
            eprintln!("epoch {:>4}  loss {:>12.6}  train_f1 {f1}", e.epoch, e.loss);
            if let Some(f) = log_file.as_mut() {
                if let Err(err) = writeln!(f, "{}", serde_json::to_string(e).expect("log serializes")) {
                    log_err.get_or_insert(err);
                }
            }
        },
    )?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    let mut w = BufWriter::new(File::create(&ckpt)?);
    write_checkpoint(&mut w, &model)?;
    w.flush()?;
    eprintln!("wrote {}", ckpt.display());
    Ok(())
}

fn cmd_eval(config: &Config, task: &str, report: &Path) -> Result<()> {
    let task: Task = task.parse()?;
    let schema = load_schema(config)?;
    let vocab = load_vocab(config)?;
    let model = load_model(config, &vocab)?;
    let examples = load_dataset(require(&config.data, "data")?, &schema)?;
    let r = evaluate(&schema, &vocab, &model, &examples, &config.extract_config(), task)?;
    let summary = r.summary(task.as_str());
    println!("{summary}");
    fs::write(report, serde_json::to_string_pretty(&summary).expect("report serializes") + "\n")?;
    Ok(())
}

fn run_extract<S: Scorer>(
    config: &Config,
    schema: &Schema,
    vocab: &Vocab,
    scorer: &S,
    texts: &[String],
    dump: bool,
    out: &mut dyn Write,
) -> Result<()> {
    let cfg = config.extract_config();
    let qb = QueryBuilder::new(schema, vocab, cfg.query);
    for text in texts {
        let mut trace: Vec<Query> = Vec::new();
        let paths = extract_traced(&qb, scorer, text, &cfg, dump.then_some(&mut trace))?;
        if dump {
            for q in &trace {
                writeln!(out, "{}", q.render())?;
            }
        } else {
            writeln!(out, "{}", ExtractionRecord::new(&paths).to_line())?;
        }
    }
    Ok(())
}

fn cmd_extract(
    config: &Config,
    input: &TextInput,
    dump: bool,
    oracle: Option<&PathBuf>,
    out_path: &Option<PathBuf>,
) -> Result<()> {
    let schema = load_schema(config)?;
    let texts = read_texts(input)?;
    let mut out = output(out_path)?;
    match oracle {
        Some(p) => {
            let file = File::open(p).map_err(not_found("oracle scores", p))?;
            let scorer = BundleScorer {
                bundle: ScoreBundle::read(&mut io::BufReader::new(file))?,
            };
            let vocab = vocab_for(config, &schema, &texts)?;
            run_extract(config, &schema, &vocab, &scorer, &texts, dump, &mut out)?;
        }
        None => {
            let vocab = load_vocab(config)?;
            let model = load_model(config, &vocab)?;
            run_extract(config, &schema, &vocab, &model, &texts, dump, &mut out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_dump_queries(config: &Config, input: &TextInput) -> Result<()> {
    let schema = load_schema(config)?;
    let examples: Vec<Example> = if input.text.is_some() || input.input.is_some() {
        read_texts(input)?
            .into_iter()
            .map(|text| Example {
                text,
                paths: Vec::new(),
                mode: None,
            })
            .collect()
    } else {
        load_dataset(require(&config.data, "data")?, &schema)?
    };
    let texts: Vec<String> = examples.iter().map(|e| e.text.clone()).collect();
    let vocab = vocab_for(config, &schema, &texts)?;
    let mut out = output(&None)?;
    for ex in &examples {
        for (q, _) in supervision(&schema, &vocab, config.query_config(), ex)? {
            writeln!(out, "{}", q.render())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_oracle_scores(config: &Config, out_path: &Path) -> Result<()> {
    let schema = load_schema(config)?;
    let examples = load_dataset(require(&config.data, "data")?, &schema)?;
    let texts: Vec<String> = examples.iter().map(|e| e.text.clone()).collect();
    let vocab = vocab_for(config, &schema, &texts)?;
    let bundle = oracle_bundle(&schema, &vocab, &examples, &config.extract_config())?;
    let mut w = BufWriter::new(File::create(out_path)?);
    bundle.write(&mut w)?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    if config.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build_global()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    match &cli.command {
        Command::Train { log } => cmd_train(&config, log.as_ref()),
        Command::Eval { task, report } => cmd_eval(&config, task, report),
        Command::Extract {
            input,
            dump_queries,
            oracle_scores,
            output,
        } => cmd_extract(&config, input, *dump_queries, oracle_scores.as_ref(), output),
        Command::DumpQueries { input } => cmd_dump_queries(&config, input),
        Command::OracleScores { output } => cmd_oracle_scores(&config, output),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
