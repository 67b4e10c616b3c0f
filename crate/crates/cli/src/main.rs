use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hopwise::encoder::{build_encoder, EncoderConfig, EncoderKind, QuestionEncoder};
use hopwise::eval::{
    ablation_grid, evaluate, load_aliases, load_dataset, prepare_all, prepare_question,
    run_question, sweep_fewshot, sweep_kn, sweep_table, synth_generate, write_dataset, GraphSource,
    KhopRestriction, PipelineConfig, QaExample, SynthSpec,
};
use hopwise::kg::{load_graph, KnowledgeGraph, Vocab};
use hopwise::llm::{ClientConfig, ClientMode, LlmClient};
use hopwise::pathgen::{write_path_dump, PathConfig};
use hopwise::prompt::{default_exemplars, load_exemplars, DEFAULT_EXEMPLAR_COUNT};
use hopwise::reasoner::checkpoint::Checkpoint;
use hopwise::reasoner::train::{train, TrainConfig};
use hopwise::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(
    name = "hopwise",
    version,
    about = "Multi-hop question answering over knowledge graphs"
)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic family graph with train and test questions.
    Synth(SynthArgs),
    /// Train the reasoner and write a checkpoint.
    Train(TrainArgs),
    /// Print the reasoning paths for one question.
    Paths(PathsArgs),
    /// Answer one question end to end.
    Ask(AskArgs),
    /// Evaluate a dataset and write a report.
    Eval(EvalArgs),
    /// Evaluate a grid of configurations.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 600)]
    pairs: usize,
    #[arg(long, default_value_t = 2000)]
    entities: usize,
    #[arg(long, default_value_t = 5)]
    relation_types: usize,
    #[arg(long, default_value_t = 0.5)]
    direct_fraction: f64,
    /// Questions held out for the test split (taken from the end).
    #[arg(long, default_value_t = 100)]
    test: usize,
}

#[derive(Args)]
struct GraphArgs {
    /// Triple file shared by all questions.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Directory holding per-question graphs named by `subgraph_ref`.
    #[arg(long, conflicts_with = "graph")]
    subgraph_dir: Option<PathBuf>,
    /// Add an inverse relation for every relation of --graph.
    #[arg(long)]
    reverse: bool,
    /// Restrict each question to the k-hop neighbourhood of its topics.
    #[arg(long)]
    khop: Option<usize>,
    /// Follow edges in both directions for --khop.
    #[arg(long, requires = "khop")]
    khop_bidirectional: bool,
}

impl GraphArgs {
    fn check(&self) -> Result<()> {
        if self.graph.is_none() && self.subgraph_dir.is_none() {
            return Err(usage("one of --graph or --subgraph-dir is required"));
        }
        Ok(())
    }

    fn load(&self) -> Result<Option<KnowledgeGraph>> {
        self.graph
            .as_ref()
            .map(|p| load_graph(p, self.reverse))
            .transpose()
    }

    fn khop(&self) -> Option<KhopRestriction> {
        self.khop.map(|hops| KhopRestriction {
            hops,
            bidirectional: self.khop_bidirectional,
        })
    }
}

fn source<'a>(kg: &'a Option<KnowledgeGraph>, args: &'a GraphArgs) -> GraphSource<'a> {
    match kg {
        Some(kg) => GraphSource::Shared(kg),
        None => GraphSource::PerQuestion(args.subgraph_dir.as_deref().expect("checked")),
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Relation labels, one per line; required with --subgraph-dir.
    #[arg(long)]
    relations: Option<PathBuf>,
    /// Training config (TOML with keys T, d, epochs, lr, seed, ...).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Train the mask ablation: raw relation scores and a hidden mask.
    #[arg(long)]
    no_mask: bool,
    /// Precomputed question encodings (JSON Lines).
    #[arg(long)]
    encodings: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Precomputed question encodings (JSON Lines).
    #[arg(long)]
    encodings: Option<PathBuf>,
    /// Run the mask ablation at inference.
    #[arg(long)]
    no_mask: bool,
}

impl ModelArgs {
    fn load(&self) -> Result<Checkpoint> {
        let p = self
            .checkpoint
            .as_ref()
            .ok_or_else(|| usage("--checkpoint is required"))?;
        Checkpoint::load(p)
    }
}

#[derive(Args)]
struct PathArgs {
    /// Candidate answer entities K.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Paths per candidate N.
    #[arg(long, default_value_t = 1)]
    n: usize,
    /// Beam width B, or `inf`.
    #[arg(long, default_value = "1000")]
    beam: String,
}

impl PathArgs {
    fn config(&self) -> Result<PathConfig> {
        let beam = match self.beam.as_str() {
            "inf" | "none" => None,
            b => Some(
                b.parse()
                    .map_err(|_| usage(&format!("invalid --beam `{b}`")))?,
            ),
        };
        let cfg = PathConfig {
            top_k: self.k,
            per_entity: self.n,
            beam,
            ..PathConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct PromptArgs {
    /// Number of few-shot exemplars E.
    #[arg(long, default_value_t = DEFAULT_EXEMPLAR_COUNT)]
    fewshot: usize,
    /// Exemplar file replacing the built-in examples.
    #[arg(long)]
    exemplars: Option<PathBuf>,
}

#[derive(Args)]
struct ClientArgs {
    /// live, mock or replay.
    #[arg(long, default_value = "mock")]
    mode: String,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API token.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    token_env: String,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 60)]
    timeout: u64,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    #[arg(long, default_value_t = 0)]
    min_interval_ms: u64,
    /// Completions to replay in replay mode.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Append every completion to this file.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Tab-separated alias file for answer matching.
    #[arg(long)]
    aliases: Option<PathBuf>,
}

impl ClientArgs {
    fn config(&self) -> Result<ClientConfig> {
        let cfg = ClientConfig {
            mode: self.mode.parse::<ClientMode>()?,
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            token_env: self.token_env.clone(),
            temperature: self.temperature,
            timeout_secs: self.timeout,
            max_retries: self.max_retries,
            min_interval_ms: self.min_interval_ms,
            replay_path: self.replay.clone(),
            record_path: self.record.clone(),
            ..ClientConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn pipeline(
    model: &ModelArgs,
    graph: &GraphArgs,
    paths: &PathArgs,
    prompt: &PromptArgs,
    client: &ClientArgs,
) -> Result<PipelineConfig> {
    let exemplars = match &prompt.exemplars {
        Some(p) => load_exemplars(p)?,
        None => default_exemplars(),
    };
    let aliases = match &client.aliases {
        Some(p) => load_aliases(p)?,
        None => Default::default(),
    };
    let cfg = PipelineConfig {
        paths: paths.config()?,
        fewshot: prompt.fewshot,
        exemplars,
        mask_off: model.no_mask,
        client: client.config()?,
        encodings: model.encodings.clone(),
        khop: graph.khop(),
        aliases,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Args)]
struct PathsArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    paths: PathArgs,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Question id in --dataset.
    #[arg(long)]
    id: String,
}

#[derive(Args)]
struct AskArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    paths: PathArgs,
    #[command(flatten)]
    prompt: PromptArgs,
    #[command(flatten)]
    client: ClientArgs,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Question id in --dataset.
    #[arg(long, conflicts_with = "question")]
    id: Option<String>,
    /// Free-text question; needs --topic.
    #[arg(long)]
    question: Option<String>,
    /// Topic entity label (repeatable).
    #[arg(long, requires = "question")]
    topic: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    paths: PathArgs,
    #[command(flatten)]
    prompt: PromptArgs,
    #[command(flatten)]
    client: ClientArgs,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Grid {
    /// K x N grid.
    Kn,
    /// Exemplar counts.
    Fewshot,
    /// Mask on/off crossed with few-shot on/off.
    Ablation,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    paths: PathArgs,
    #[command(flatten)]
    prompt: PromptArgs,
    #[command(flatten)]
    client: ClientArgs,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    grid: Grid,
    #[arg(long, value_delimiter = ',', default_value = "5,10,15")]
    ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    ns: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5")]
    es: Vec<usize>,
    /// Model trained with --no-mask, used for the ablation rows without mask.
    #[arg(long)]
    baseline_checkpoint: Option<PathBuf>,
}

fn usage(msg: &str) -> Error {
    Error::Config(msg.to_string())
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref()
        .ok_or_else(|| usage(&format!("{flag} is required")))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let out = required(&a.out, "--out")?;
    let spec = SynthSpec {
        pairs: a.pairs,
        entities: a.entities,
        relation_types: a.relation_types,
        direct_fraction: a.direct_fraction,
    };
    if a.test > a.pairs {
        return Err(usage("--test exceeds --pairs"));
    }
    let (kg, examples) = synth_generate(&spec, a.seed)?;
    create_dir(out)?;
    kg.save(out.join("graph.tsv"))?;
    let (train, test) = examples.split_at(examples.len() - a.test);
    write_dataset(out.join("train.jsonl"), train)?;
    write_dataset(out.join("test.jsonl"), test)?;
    let relations: String = kg
        .relations()
        .names()
        .iter()
        .map(|r| format!("{r}\n"))
        .collect();
    write(&out.join("relations.txt"), relations)?;
    println!(
        "{} entities, {} relations, {} triples; {} train / {} test questions",
        kg.entity_count(),
        kg.relation_count(),
        kg.triples().len(),
        train.len(),
        test.len()
    );
    Ok(())
}

fn load_relations(path: &Path) -> Result<Vocab> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Vocab::from_names(text.lines().map(str::trim).filter(|l| !l.is_empty()))
}

fn encoder_for(
    dim: usize,
    seed: u64,
    encodings: &Option<PathBuf>,
) -> Result<Box<dyn QuestionEncoder>> {
    build_encoder(&EncoderConfig {
        dim,
        kind: match encodings {
            Some(p) => EncoderKind::PrecomputedFile(p.clone()),
            None => EncoderKind::DeterministicHash,
        },
        seed,
    })
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    a.graph.check()?;
    let dataset_path = required(&a.dataset, "--dataset")?;
    let out = required(&a.out, "--out")?;
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    cfg.mask_off |= a.no_mask;
    cfg.validate()?;

    let kg = a.graph.load()?;
    let relations = match (&kg, &a.relations) {
        (Some(kg), _) => kg.relations().clone(),
        (None, Some(p)) => load_relations(p)?,
        (None, None) => return Err(usage("--relations is required with --subgraph-dir")),
    };
    let dataset = load_dataset(dataset_path)?;
    let encoder = encoder_for(cfg.d, cfg.encoder_seed, &a.encodings)?;
    let base = dataset_path.parent().unwrap_or(Path::new("."));
    let src = match &kg {
        Some(kg) => GraphSource::Shared(kg),
        None => GraphSource::PerQuestion(a.graph.subgraph_dir.as_deref().unwrap_or(base)),
    };
    let prepared = prepare_all(&dataset, src, &relations, encoder.as_ref(), a.graph.khop())?;
    let samples: Vec<_> = prepared.iter().filter_map(|q| q.train_sample()).collect();
    let skipped = prepared.len() - samples.len();
    if skipped > 0 {
        log::warn!("{skipped} questions have no answer entity in their graph and are skipped");
    }
    if samples.is_empty() {
        return Err(Error::Data("no trainable questions".into()));
    }
    log::info!(
        "training on {} questions, {} relations",
        samples.len(),
        relations.len()
    );
    let outcome = train(&samples, relations.len(), &cfg)?;

    create_dir(out)?;
    let ckpt = Checkpoint {
        params: outcome.params,
        options: cfg.options(),
        encoder_seed: cfg.encoder_seed,
        relations,
    };
    ckpt.save(out.join("model.ckpt"))?;
    write(&out.join("config.toml"), cfg.to_text())?;
    let history: String = outcome
        .loss_history
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{}\t{l:.12}\n", i + 1))
        .collect();
    write(
        &out.join("loss_history.tsv"),
        format!("epoch\tloss\n{history}"),
    )?;
    println!(
        "final loss {:.6}; checkpoint {} sha256 {}",
        outcome.loss_history.last().copied().unwrap_or(f64::NAN),
        out.join("model.ckpt").display(),
        ckpt.fingerprint()
    );
    Ok(())
}

fn find<'a>(dataset: &'a [QaExample], id: &str) -> Result<&'a QaExample> {
    dataset
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| Error::Data(format!("no question with id `{id}`")))
}

fn cmd_paths(a: &PathsArgs) -> Result<()> {
    a.graph.check()?;
    let ckpt = a.model.load()?;
    let dataset = load_dataset(required(&a.dataset, "--dataset")?)?;
    let kg = a.graph.load()?;
    let ex = find(&dataset, &a.id)?;
    let cfg = PipelineConfig {
        paths: a.paths.config()?,
        mask_off: a.model.no_mask,
        ..PipelineConfig::default()
    };
    let encoder = encoder_for(ckpt.params.shape.dim, ckpt.encoder_seed, &a.model.encodings)?;
    let q = prepare_question(
        ex,
        source(&kg, &a.graph),
        &ckpt.relations,
        encoder.as_ref(),
        a.graph.khop(),
    )?;
    let trace = hopwise::reasoner::forward(
        &q.encoding,
        &q.topics,
        &q.graph,
        &ckpt.params,
        &cfg.options(&ckpt),
    )?;
    let report = hopwise::pathgen::generate_paths(&trace, &q.topics, &q.graph, &cfg.paths);
    let probs: Vec<String> = trace.hop.probs.iter().map(|p| format!("{p:.6}")).collect();
    println!("H = {}", trace.hop.hops);
    println!("c = [{}]", probs.join(", "));
    if report.selected.is_empty() {
        println!("no paths");
    } else {
        let mut stdout = std::io::stdout().lock();
        write_path_dump(&mut stdout, &ex.id, &report.selected, &q.graph)?;
    }
    Ok(())
}

fn cmd_ask(a: &AskArgs, verbose: bool) -> Result<()> {
    a.graph.check()?;
    let cfg = pipeline(&a.model, &a.graph, &a.paths, &a.prompt, &a.client)?;
    let ckpt = a.model.load()?;
    let kg = a.graph.load()?;
    let ex = match (&a.id, &a.question) {
        (Some(id), _) => find(&load_dataset(required(&a.dataset, "--dataset")?)?, id)?.clone(),
        (None, Some(q)) => {
            if a.topic.is_empty() {
                return Err(usage("--question needs at least one --topic"));
            }
            QaExample {
                id: "ask".into(),
                question: q.clone(),
                topic_entities: a.topic.clone(),
                answers: vec![String::new()],
                gold_hops: None,
                subgraph_ref: None,
            }
        }
        (None, None) => return Err(usage("either --id or --question is required")),
    };
    let encoder = encoder_for(ckpt.params.shape.dim, ckpt.encoder_seed, &a.model.encodings)?;
    let q = prepare_question(
        &ex,
        source(&kg, &a.graph),
        &ckpt.relations,
        encoder.as_ref(),
        cfg.khop,
    )?;
    let client = LlmClient::new(cfg.client.clone())?;
    let run = run_question(&q, &ckpt, &cfg, &client)?;
    if verbose {
        println!("{}", run.prompt.text);
    }
    if let Some(err) = &run.row.error {
        return Err(Error::Transport {
            attempts: cfg.client.max_retries + 1,
            msg: err.clone(),
        });
    }
    println!(
        "completion: {}",
        run.completion.as_deref().unwrap_or_default().trim()
    );
    println!(
        "answers: {}",
        serde_json::to_string(&run.row.answers).expect("strings serialize")
    );
    Ok(())
}

fn write_snapshot(
    out: &Path,
    cfg: &PipelineConfig,
    ckpt: &Checkpoint,
    extra: &[(&str, String)],
) -> Result<()> {
    let mut snap = cfg.snapshot(ckpt);
    snap.insert("checkpoint.sha256".into(), ckpt.fingerprint());
    for (k, v) in extra {
        snap.insert((*k).to_string(), v.clone());
    }
    let text: String = snap.iter().map(|(k, v)| format!("{k} = {v:?}\n")).collect();
    write(&out.join("run_config.txt"), text)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    a.graph.check()?;
    let out = required(&a.out, "--out")?;
    let dataset_path = required(&a.dataset, "--dataset")?;
    let cfg = pipeline(&a.model, &a.graph, &a.paths, &a.prompt, &a.client)?;
    let ckpt = a.model.load()?;
    let dataset = load_dataset(dataset_path)?;
    let kg = a.graph.load()?;
    let report = evaluate(&ckpt, &dataset, source(&kg, &a.graph), &cfg)?;
    create_dir(out)?;
    report.save(out, "report")?;
    write_snapshot(
        out,
        &cfg,
        &ckpt,
        &[("dataset", dataset_path.display().to_string())],
    )?;
    print!("{}", report.summary());
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    a.graph.check()?;
    let out = required(&a.out, "--out")?;
    let dataset_path = required(&a.dataset, "--dataset")?;
    let mut cfg = pipeline(&a.model, &a.graph, &a.paths, &a.prompt, &a.client)?;
    let ckpt = a.model.load()?;
    let dataset = load_dataset(dataset_path)?;
    let kg = a.graph.load()?;
    let src = source(&kg, &a.graph);
    let (name, rows) = match a.grid {
        Grid::Kn => {
            if let Some(&max_k) = a.ks.iter().max() {
                cfg.paths.beam = cfg.paths.beam.map(|b| b.max(max_k));
            }
            ("kn", sweep_kn(&ckpt, &dataset, src, &cfg, &a.ks, &a.ns)?)
        }
        Grid::Fewshot => {
            if let Some(&max_e) = a.es.iter().max() {
                if max_e > cfg.exemplars.len() {
                    return Err(usage(&format!(
                        "E = {max_e} requested, {} exemplars loaded",
                        cfg.exemplars.len()
                    )));
                }
            }
            ("fewshot", sweep_fewshot(&ckpt, &dataset, src, &cfg, &a.es)?)
        }
        Grid::Ablation => {
            let baseline = a
                .baseline_checkpoint
                .as_ref()
                .map(Checkpoint::load)
                .transpose()?;
            let e = if a.prompt.fewshot == 0 {
                DEFAULT_EXEMPLAR_COUNT
            } else {
                a.prompt.fewshot
            };
            (
                "ablation",
                ablation_grid(&ckpt, baseline.as_ref(), &dataset, src, &cfg, e)?,
            )
        }
    };
    create_dir(out)?;
    let table = sweep_table(&rows);
    write(&out.join(format!("sweep_{name}.tsv")), &table)?;
    write_snapshot(out, &cfg, &ckpt, &[("grid", name.to_string())])?;
    print!("{table}");
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Runtime => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();

    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Paths(a) => cmd_paths(a),
        Command::Ask(a) => cmd_ask(a, cli.verbose > 0),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
