use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use plmarker::corpus::{read_bio, read_jsonl, to_jsonl, Corpus, LabelSchema};
use plmarker::heads::NerMode;
use plmarker::metrics::{entity_keys, expand_symmetric, ner_f1, rel_f1, relation_keys, type_map, RelMode};
use plmarker::pipeline::{
    load_model, run_end_to_end, save_model, train_ner, train_re, write_predictions, PredictOptions, SavedModel,
    TrainConfig, DEFAULT_REFINE_THRESHOLD,
};
use plmarker::spanspace::PackingStrategy;
use plmarker::synthetic::{self, SyntheticConfig};
use plmarker::toolbench::{sweep_group_size, to_csv, BenchOptions};

#[derive(Parser)]
#[command(name = "plm", version, about = "Packed levitated markers for span NER and relation extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert BIO to JSONL, validate JSONL, or write a synthetic corpus.
    Prepare(PrepareArgs),
    /// Train a span NER model.
    TrainNer(TrainArgs),
    /// Train a relation model on gold entities.
    TrainRe(TrainArgs),
    /// Run NER (and optionally RE) over a corpus and write scored JSONL.
    Predict(PredictArgs),
    /// Score predictions against gold annotations.
    Eval(EvalArgs),
    /// Measure NER throughput across group sizes; CSV on stdout.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormat {
    Bio,
    Jsonl,
}

#[derive(Args)]
struct PrepareArgs {
    /// Input corpus (omit with --synthetic).
    #[arg(long, required_unless_present = "synthetic")]
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "jsonl")]
    format: InputFormat,
    /// Generate this many synthetic documents instead of reading input.
    #[arg(long, conflicts_with = "input")]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 1)]
    synthetic_seed: u64,
    #[arg(long)]
    output: PathBuf,
}

fn parse_packing(s: &str) -> Result<PackingStrategy, String> {
    s.parse()
}

fn parse_ner_mode(s: &str) -> Result<NerMode, String> {
    match s {
        "marker_only" => Ok(NerMode::MarkerOnly),
        "marker_plus_tconcat" => Ok(NerMode::MarkerPlusTconcat),
        "tconcat_only" => Ok(NerMode::TconcatOnly),
        other => Err(format!("unknown NER mode `{other}` (marker_only, marker_plus_tconcat, tconcat_only)")),
    }
}

/// Flags for every training setting; each overrides the config file.
#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    /// Where to write the model checkpoint.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Flat TOML file with training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Symmetric relation labels, comma separated.
    #[arg(long, value_delimiter = ',')]
    symmetric: Vec<String>,
    /// Keep overlapping entity predictions.
    #[arg(long)]
    nested: bool,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    warmup_fraction: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    max_span_len: Option<usize>,
    #[arg(long)]
    context_window: Option<usize>,
    #[arg(long, value_parser = parse_packing)]
    packing: Option<PackingStrategy>,
    #[arg(long)]
    aux_weight: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    num_layers: Option<usize>,
    #[arg(long)]
    num_heads: Option<usize>,
    #[arg(long)]
    ffn_dim: Option<usize>,
    #[arg(long, value_parser = parse_ner_mode)]
    ner_mode: Option<NerMode>,
    #[arg(long)]
    stage1_head: Option<bool>,
    #[arg(long)]
    prompt_init: Option<bool>,
    #[arg(long)]
    max_slots: Option<usize>,
    #[arg(long)]
    parallel: Option<bool>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    ner: PathBuf,
    #[arg(long)]
    re: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 256)]
    group_size: usize,
    #[arg(long, value_parser = parse_packing, default_value = "neighborhood")]
    packing: PackingStrategy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Re-score only the top-M first-stage candidates per sentence.
    #[arg(long)]
    two_stage: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_REFINE_THRESHOLD)]
    refine_threshold: f64,
    /// Keep NER entity types even when the RE model could refine them.
    #[arg(long)]
    no_refine: bool,
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    Entity,
    Boundaries,
    Strict,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, value_enum, default_value = "entity")]
    mode: EvalMode,
    /// Symmetric relation labels, comma separated.
    #[arg(long, value_delimiter = ',')]
    symmetric: Vec<String>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "128,256,512")]
    group_sizes: Vec<usize>,
    #[arg(long, value_parser = parse_packing, default_value = "neighborhood")]
    packing: PackingStrategy,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    #[arg(long)]
    two_stage: Option<usize>,
    /// Encode sentences on all cores.
    #[arg(long)]
    parallel: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn read_corpus(path: &Path) -> Result<Corpus> {
    read_jsonl(path).with_context(|| format!("reading {}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn prepare(args: PrepareArgs) -> Result<()> {
    let corpus = if let Some(n) = args.synthetic {
        synthetic::generate(&SyntheticConfig { documents: n, seed: args.synthetic_seed, ..Default::default() })
    } else {
        let input = args.input.as_deref().expect("clap enforces --input");
        match args.format {
            InputFormat::Jsonl => read_corpus(input)?,
            InputFormat::Bio => {
                let read = read_bio(input).with_context(|| format!("reading {}", input.display()))?;
                for d in &read.diagnostics {
                    eprintln!("{}:{}: {}", input.display(), d.line, d.message);
                }
                read.corpus
            }
        }
    };
    for doc in &corpus.documents {
        doc.validate()?;
        for r in doc.cross_sentence_relations() {
            eprintln!("note: {}: relation {} -> {} crosses sentences", doc.doc_id, r.subject, r.object);
        }
    }
    write_file(&args.output, &to_jsonl(&corpus))?;
    eprintln!(
        "{} documents, {} sentences, entity types {:?}, relation types {:?}",
        corpus.documents.len(),
        corpus.num_sentences(),
        corpus.entity_types(),
        corpus.relation_types()
    );
    Ok(())
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    macro_rules! apply {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field { cfg.$field = v; })*
        };
    }
    apply!(
        learning_rate,
        warmup_fraction,
        epochs,
        batch_size,
        group_size,
        max_span_len,
        context_window,
        packing,
        aux_weight,
        hidden_dim,
        num_layers,
        num_heads,
        ffn_dim,
        ner_mode,
        stage1_head,
        prompt_init,
        max_slots,
        parallel
    );
    cfg.seed = args.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn train(args: TrainArgs, relations: bool) -> Result<()> {
    let cfg = train_config(&args)?;
    let corpus = read_corpus(&args.train)?;
    let schema = LabelSchema::infer(&corpus, &args.symmetric, args.nested)?;
    let log = |epoch: usize, loss: f64| eprintln!("epoch {:>3}  loss {loss:.6}", epoch + 1);
    let model = if relations {
        SavedModel::Re(train_re(&corpus, &schema, &cfg, log)?.0)
    } else {
        SavedModel::Ner(train_ner(&corpus, &schema, &cfg, log)?.0)
    };
    let file = File::create(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    save_model(BufWriter::new(file), &model)?;
    eprintln!("wrote {}", args.output.display());
    Ok(())
}

fn load(path: &Path) -> Result<SavedModel> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    load_model(BufReader::new(file)).with_context(|| format!("loading {}", path.display()))
}

fn predict(args: PredictArgs) -> Result<()> {
    let SavedModel::Ner(ner) = load(&args.ner)? else {
        bail!("{} is not an NER model", args.ner.display());
    };
    let re = match &args.re {
        Some(path) => match load(path)? {
            SavedModel::Re(m) => Some(m),
            SavedModel::Ner(_) => bail!("{} is not a relation model", path.display()),
        },
        None => None,
    };
    let corpus = read_corpus(&args.input)?;
    let opts = PredictOptions {
        group_size: args.group_size,
        packing: args.packing,
        seed: args.seed,
        two_stage: args.two_stage,
        max_slots: usize::MAX,
        parallel: !args.sequential,
    };
    let refine = (!args.no_refine).then_some(args.refine_threshold);
    let preds = run_end_to_end(&ner, re.as_ref(), &corpus, &opts, refine)?;
    write_file(&args.output, &write_predictions(&corpus, &preds))
}

fn eval(args: EvalArgs) -> Result<()> {
    let gold = read_corpus(&args.gold)?;
    let pred = read_corpus(&args.pred)?;
    let report = match args.mode {
        EvalMode::Entity => ner_f1(&entity_keys(&gold), &entity_keys(&pred)),
        EvalMode::Boundaries | EvalMode::Strict => {
            let g = expand_symmetric(&relation_keys(&gold), &args.symmetric);
            let p = expand_symmetric(&relation_keys(&pred), &args.symmetric);
            let (gt, pt) = (type_map(&gold), type_map(&pred));
            let mode = if matches!(args.mode, EvalMode::Strict) { RelMode::Strict } else { RelMode::Boundaries };
            rel_f1(&g, &p, Some(&gt), Some(&pt), mode)?
        }
    };
    let name = match args.mode {
        EvalMode::Entity => "ent",
        EvalMode::Boundaries => "rel",
        EvalMode::Strict => "rel_strict",
    };
    print!("{}", report.kv_lines(name));
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let SavedModel::Ner(model) = load(&args.model)? else {
        bail!("{} is not an NER model", args.model.display());
    };
    let corpus = read_corpus(&args.input)?;
    let opts = BenchOptions {
        repetitions: args.repetitions,
        parallel: args.parallel,
        seed: args.seed,
        two_stage: args.two_stage,
    };
    let records = sweep_group_size(&model, &corpus, &args.group_sizes, args.packing, &opts)?;
    print!("{}", to_csv(&records));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::TrainNer(a) => train(a, false),
        Command::TrainRe(a) => train(a, true),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
