use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use duallex::evaluation::{inconsistency_rate, precision_at_1};
use duallex::retrieval::CslsIndex;
use duallex::synthetic::{self, SourceShape};
use duallex::trainer::{self, load_mappings, refine_procrustes, RefineConfig, TrainConfig, TrainRun};
use duallex::{BilingualLexicon, EmbeddingSpace, Error, LinearMapping, Normalization};

const MANIFEST_FILE: &str = "run.manifest";
const EPOCHS_DIR: &str = "epochs";

#[derive(Parser)]
#[command(name = "duallex", version, about = "Unsupervised bilingual lexicon induction with dual mappings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic language pair with a known rotation.
    Synth(SynthArgs),
    /// Train the forward and backward mappings adversarially.
    Train(TrainArgs),
    /// Refine trained mappings with iterative Procrustes.
    Refine(RefineArgs),
    /// Translate words with a trained checkpoint.
    Translate(TranslateArgs),
    /// Score a checkpoint against a gold dictionary.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Ratio between the largest and smallest axis scale of the source cloud.
    #[arg(long)]
    anisotropy: Option<f64>,
    /// Norm of the source mean relative to the RMS axis scale.
    #[arg(long)]
    mean_offset: Option<f64>,
    /// Gamma shape of the source components; 0 for Gaussian.
    #[arg(long)]
    gamma_shape: Option<f64>,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    /// Keep only the most frequent words of each file.
    #[arg(long)]
    max_vocab: Option<usize>,
    #[arg(long, default_value_t = Normalization::Unit)]
    normalize: Normalization,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// `key=value` file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    cycle_weight: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Also save the mappings after every epoch under `epochs/`.
    #[arg(long)]
    keep_epochs: bool,
}

#[derive(Args)]
struct RefineArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    dict_size: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct TranslateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Translate target words with the backward mapping.
    #[arg(long)]
    backward: bool,
    /// File with one word per line; defaults to the whole vocabulary.
    #[arg(long)]
    words: Option<PathBuf>,
    #[arg(long, default_value_t = duallex::retrieval::DEFAULT_K)]
    k: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    /// Also score the backward mapping on the inverted dictionary.
    #[arg(long)]
    both_directions: bool,
    /// Number of most frequent source words checked for round-trip
    /// consistency; defaults to the whole vocabulary.
    #[arg(long)]
    eval_vocab: Option<usize>,
    #[arg(long, default_value_t = duallex::retrieval::DEFAULT_K)]
    k: usize,
    /// Also write the report to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Refine(a) => refine(a),
        Command::Translate(a) => translate(a),
        Command::Evaluate(a) => evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::NumericalAbort { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

struct Manifest(String);

impl Manifest {
    fn new(command: &str) -> Self {
        let mut m = Manifest(String::new());
        m.add("command", command);
        m.add("version", env!("CARGO_PKG_VERSION"));
        m
    }

    fn add(&mut self, key: &str, value: impl std::fmt::Display) {
        writeln!(self.0, "{key}={value}").unwrap();
    }

    fn add_data(&mut self, data: &DataArgs) {
        self.add("src", data.src.display());
        self.add("tgt", data.tgt.display());
        self.add("max_vocab", data.max_vocab.map_or("all".to_string(), |v| v.to_string()));
        self.add("normalize", data.normalize);
    }

    fn write(&self, path: &Path) -> Result<(), Error> {
        fs::write(path, &self.0).map_err(|e| io_error(path, e))
    }
}

fn io_error(path: &Path, e: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn load_spaces(data: &DataArgs) -> Result<(EmbeddingSpace, EmbeddingSpace), Error> {
    let src = EmbeddingSpace::load_text(&data.src, data.max_vocab)?.normalize(data.normalize)?;
    let tgt = EmbeddingSpace::load_text(&data.tgt, data.max_vocab)?.normalize(data.normalize)?;
    if src.dim() != tgt.dim() {
        return Err(Error::Shape(format!(
            "{} has dimension {}, {} has dimension {}",
            data.src.display(),
            src.dim(),
            data.tgt.display(),
            tgt.dim()
        )));
    }
    info!("loaded {} source and {} target words, d = {}", src.len(), tgt.len(), src.dim());
    Ok((src, tgt))
}

fn synth(a: SynthArgs) -> CliResult {
    let defaults = SourceShape::default();
    let shape = SourceShape {
        anisotropy: a.anisotropy.unwrap_or(defaults.anisotropy),
        mean_offset: a.mean_offset.unwrap_or(defaults.mean_offset),
        gamma_shape: a.gamma_shape.unwrap_or(defaults.gamma_shape),
        ..defaults
    };
    let pair = synthetic::generate_with_shape(a.n, a.d, a.sigma, a.seed, shape)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    pair.write_to_dir(&a.out)?;
    pair.rotation.save_text(a.out.join("rotation.txt"))?;
    let mut m = Manifest::new("synth");
    m.add("n", a.n);
    m.add("d", a.d);
    m.add("sigma", a.sigma);
    m.add("seed", a.seed);
    m.add("anisotropy", shape.anisotropy);
    m.add("mean_offset", shape.mean_offset);
    m.add("gamma_shape", shape.gamma_shape);
    m.write(&a.out.join(MANIFEST_FILE))?;
    info!("wrote synthetic pair to {}", a.out.display());
    Ok(())
}

fn split_pair(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once('=')?;
    Some((k.trim(), v.trim()))
}

/// Reads `key=value` lines; blank lines and `#` comments are ignored.
fn read_config_file(path: &Path) -> Result<Vec<(String, String)>, Failure> {
    let file = fs::File::open(path).map_err(|e| Failure::Run(io_error(path, e)))?;
    let mut pairs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Failure::Run(io_error(path, e)))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = split_pair(line)
            .ok_or_else(|| Failure::Usage(format!("{}:{}: expected key=value", path.display(), n + 1)))?;
        pairs.push((k.to_string(), v.to_string()));
    }
    Ok(pairs)
}

fn resolve_train_config(a: &TrainArgs) -> Result<(TrainConfig, Vec<(String, String)>), Failure> {
    let mut cfg = TrainConfig::default();
    let mut pairs = Vec::new();
    if let Some(path) = &a.config {
        pairs.extend(read_config_file(path)?);
    }
    if let Some(v) = a.epochs {
        pairs.push(("epochs".into(), v.to_string()));
    }
    if let Some(v) = a.cycle_weight {
        pairs.push(("cycle_weight".into(), v.to_string()));
    }
    if let Some(v) = a.seed {
        pairs.push(("seed".into(), v.to_string()));
    }
    for o in &a.overrides {
        let (k, v) = split_pair(o).ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        pairs.push((k.to_string(), v.to_string()));
    }
    for (k, v) in &pairs {
        cfg.set(k, v).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok((cfg, pairs))
}

fn train(a: TrainArgs) -> CliResult {
    let (cfg, _) = resolve_train_config(&a)?;
    let (src, tgt) = load_spaces(&a.data)?;
    create_dir(&a.out)?;
    let mut m = Manifest::new("train");
    m.add_data(&a.data);
    for (k, v) in cfg.to_pairs() {
        m.add(k, v);
    }
    m.write(&a.out.join(MANIFEST_FILE))?;

    let epochs_dir = a.out.join(EPOCHS_DIR);
    if a.keep_epochs {
        create_dir(&epochs_dir)?;
    }
    let mut run = TrainRun::new(cfg, src.dim())?;
    run.fit(&src, &tgt, |run| {
        if a.keep_epochs {
            let e = run.history.len() - 1;
            run.f_map.save_text(epochs_dir.join(format!("{e:03}_f.txt")))?;
            run.g_map.save_text(epochs_dir.join(format!("{e:03}_g.txt")))?;
        }
        run.save_checkpoint(&a.out)
    })?;
    let best = run.best.as_ref().expect("at least one epoch");
    info!("selected epoch {} with S_a = {:.6}", best.epoch, best.s_a);
    Ok(())
}

fn refine(a: RefineArgs) -> CliResult {
    let defaults = RefineConfig::default();
    let cfg = RefineConfig {
        rounds: a.rounds.unwrap_or(defaults.rounds),
        dict_size: a.dict_size.unwrap_or(defaults.dict_size),
        k: a.k.unwrap_or(defaults.k),
    };
    if cfg.dict_size == 0 {
        return Err(Failure::Usage("--dict-size must be positive".into()));
    }
    let (f, g) = load_mappings(&a.checkpoint)?;
    let (src, tgt) = load_spaces(&a.data)?;
    let out = refine_procrustes(&f, &g, &src, &tgt, &cfg)?;
    create_dir(&a.out)?;
    out.f_map.save_text(a.out.join(trainer::MAPPING_F_FILE))?;
    out.g_map.save_text(a.out.join(trainer::MAPPING_G_FILE))?;
    let mut m = Manifest::new("refine");
    m.add_data(&a.data);
    m.add("checkpoint", a.checkpoint.display());
    m.add("rounds", cfg.rounds);
    m.add("dict_size", cfg.dict_size);
    m.add("k", cfg.k);
    m.add("rounds_completed", out.rounds_completed);
    m.write(&a.out.join(MANIFEST_FILE))?;
    Ok(())
}

fn translate(a: TranslateArgs) -> CliResult {
    let (f, g) = load_mappings(&a.checkpoint)?;
    let (src, tgt) = load_spaces(&a.data)?;
    let (map, from, to): (&LinearMapping, _, _) = if a.backward { (&g, &tgt, &src) } else { (&f, &src, &tgt) };
    let ids: Vec<usize> = match &a.words {
        None => (0..from.len()).collect(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            text.lines()
                .map(str::trim)
                .filter(|w| !w.is_empty())
                .filter_map(|w| {
                    let id = from.id(w);
                    if id.is_none() {
                        warn!("{w:?} is not in the vocabulary; skipped");
                    }
                    id
                })
                .collect()
        }
    };
    let mapped = map.apply(from.vectors())?;
    let index = CslsIndex::build(mapped.view(), to.vectors(), a.k)?;
    let hits = index.translate_scored(&ids)?;
    let stdout = io::stdout();
    let mut out = io::BufWriter::new(stdout.lock());
    let res: io::Result<()> = (|| {
        for (&i, (j, score)) in ids.iter().zip(hits) {
            writeln!(out, "{}\t{}\t{}", from.token(i), to.token(j), duallex::linalg::fmt_sig(score, 6))?;
        }
        out.flush()
    })();
    res.map_err(|e| io_error(Path::new("<stdout>"), e))?;
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> CliResult {
    let (f, g) = load_mappings(&a.checkpoint)?;
    let (src, tgt) = load_spaces(&a.data)?;
    let lexicon = BilingualLexicon::load(&a.dict)?;
    let forward = precision_at_1(&f, &src, &tgt, &lexicon, a.k)?;
    let backward = if a.both_directions {
        Some(precision_at_1(&g, &tgt, &src, &lexicon.inverted(), a.k)?)
    } else {
        None
    };
    let eval_vocab = a.eval_vocab.unwrap_or(src.len());
    let rate = inconsistency_rate(&f, &g, &src, &tgt, eval_vocab, a.k)?;

    let mut report = String::new();
    let fmt = |v: f64| duallex::linalg::fmt_sig(v, 6);
    writeln!(report, "p_at_1_forward={}", fmt(forward.p_at_1)).unwrap();
    writeln!(report, "p_at_1_backward={}", backward.map_or("nan".to_string(), |b| fmt(b.p_at_1))).unwrap();
    writeln!(report, "inconsistency_rate={}", fmt(rate)).unwrap();
    writeln!(report, "evaluated={}", forward.evaluated).unwrap();
    writeln!(report, "skipped_oov={}", forward.skipped_oov).unwrap();
    print!("{report}");
    if let Some(path) = &a.report {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
        fs::write(path, &report).map_err(|e| io_error(path, e))?;
        let mut m = Manifest::new("evaluate");
        m.add_data(&a.data);
        m.add("checkpoint", a.checkpoint.display());
        m.add("dict", a.dict.display());
        m.add("both_directions", a.both_directions);
        m.add("eval_vocab", eval_vocab);
        m.add("k", a.k);
        let mut mpath = path.clone().into_os_string();
        mpath.push(".manifest");
        m.write(Path::new(&mpath))?;
    }
    Ok(())
}
