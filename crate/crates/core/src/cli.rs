//! The `ibis` command line.
//!
//! Every command reads its inputs line by line and writes one output line
//! per input line, in input order, to stdout. Logs go to stderr. Exit codes:
//! 2 for usage errors (including missing paths), 3 when the scorer fails, 4
//! for bad data.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::beam::beam_order;
use crate::constrained::{constrained_search, scorer_topk, ConstraintRecord, GenConstraints, VocabSource, SCORER_TOPK};
use crate::error::Error;
use crate::eval::{self, BucketOptions, SpanMode};
use crate::latent;
use crate::ngram::{NGramModel, Smoothing, DEFAULT_KAPPA};
use crate::par;
use crate::scorer::serve::{conformance, HttpServer, WireServer};
use crate::scorer::wire::{timeout_from_env, HttpTransport, Payload, RemoteScorer, StdioTransport, Transport};
use crate::scorer::Scorer;
use crate::search::{search_from_order, Algorithm, SearchConfig, SearchState};
use crate::tokenize::{bag_of, detokenize, shuffle_bag, tokenize, Bag, Mode, Vocab, WordUnit, WordUnitSeq};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SCORER: i32 = 3;
pub const EXIT_DATA: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Lib(Error::InvalidConfig(_)) => EXIT_USAGE,
            CliError::Lib(e) if e.is_scorer_failure() => EXIT_SCORER,
            CliError::Lib(_) => EXIT_DATA,
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Lib(Error::Io(e))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "ibis", version, about = "Recover likely word orders with k-opt local search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an n-gram model on a text corpus, one sentence per line.
    TrainLm(TrainArgs),
    /// Shuffle each input line and search for its most likely order.
    Shuffle(ShuffleArgs),
    /// Order each input line's bag with left-to-right beam search.
    Beam(BeamArgs),
    /// Compare latent, top and random order schemes for next-token prediction.
    LatentEval(LatentArgs),
    /// Generate text meeting the constraints in each line of a record file.
    Constrained(ConstrainedArgs),
    /// BLEU and perplexity ratio of reconstructions per length bucket.
    Eval(EvalArgs),
    /// Expose an n-gram model over the scorer protocol.
    Serve(ServeArgs),
    /// Check an external scorer against the protocol contract.
    Conformance(ConformanceArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training text, one sentence per line.
    pub corpus: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    /// add-k or interpolated
    #[arg(long, default_value = "add-k")]
    pub smoothing: String,
    #[arg(long, default_value_t = DEFAULT_KAPPA)]
    pub kappa: f64,
    /// Interpolation weights for orders above one, highest first.
    #[arg(long)]
    pub lambdas: Option<String>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// ngram:PATH, external:URL or stdio:COMMAND
    #[arg(long)]
    pub scorer: Option<String>,
    /// key=value defaults for any long flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Surface of the end-of-sequence token of an external scorer.
    #[arg(long)]
    pub end_token: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct SearchArgs {
    /// Comma-separated cut counts, e.g. 3,4,5.
    #[arg(long)]
    pub k_set: Option<String>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub frozen_prefix: Option<usize>,
    #[arg(long)]
    pub frozen_suffix: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ShuffleArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    /// ibis, random-kopt or beam
    #[arg(long)]
    pub algorithm: Option<String>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub future_costs: bool,
    /// N-gram model whose unigram marginals give future costs.
    #[arg(long)]
    pub unigram: Option<PathBuf>,
    /// Writes each line's search trace here as newline-delimited JSON.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    /// Writes the mean NLL-per-token curve over all lines here.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BeamArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub future_costs: bool,
    #[arg(long)]
    pub unigram: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LatentArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated bag sizes.
    #[arg(long, default_value = "1,2,3,4,5")]
    pub n: String,
    #[arg(long, default_value_t = latent::CONTEXT_TOTAL)]
    pub context: usize,
    #[arg(long, default_value_t = 500)]
    pub max_positions: usize,
}

#[derive(Debug, Args)]
pub struct ConstrainedArgs {
    /// Newline-delimited JSON records.
    pub input: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long)]
    pub algorithm: Option<String>,
    #[arg(long)]
    pub buckets: Option<String>,
    /// punctuationless-sentence or between-punctuation
    #[arg(long)]
    pub span_mode: Option<String>,
    #[arg(long)]
    pub max_per_bucket: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// ngram:PATH
    #[arg(long)]
    pub scorer: String,
    /// Serve HTTP on this address instead of stdio.
    #[arg(long)]
    pub http: Option<String>,
}

#[derive(Debug, Args)]
pub struct ConformanceArgs {
    /// Sentences to probe with, one per line.
    pub input: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

/// Values from a `key=value` config file; keys are long flag names.
#[derive(Debug, Default)]
struct ConfigFile(HashMap<String, String>);

impl ConfigFile {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else { return Ok(ConfigFile::default()) };
        let text = read_existing(path)?;
        let mut map = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
            map.insert(k.trim().trim_start_matches("--").to_owned(), v.trim().to_owned());
        }
        Ok(ConfigFile(map))
    }

    /// The flag value if given, else the config value, else `None`.
    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.0.get(key) {
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config value {key}={v} is invalid"))),
            None => Ok(None),
        }
    }

    fn flag(&self, set: bool, key: &str) -> CliResult<bool> {
        Ok(set || self.pick::<bool>(None, key)?.unwrap_or(false))
    }
}

fn read_existing(path: &Path) -> CliResult<String> {
    if !path.exists() {
        return Err(CliError::Usage(format!("{}: no such file", path.display())));
    }
    Ok(fs::read_to_string(path)?)
}

fn read_lines(path: &Path) -> CliResult<Vec<String>> {
    Ok(read_existing(path)?.lines().map(str::to_owned).collect())
}

fn parse_list(s: &str, what: &str) -> CliResult<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|_| CliError::Usage(format!("bad {what} entry {p:?}"))))
        .collect()
}

fn search_config(common: &CommonArgs, args: &SearchArgs, cfg: &ConfigFile) -> CliResult<SearchConfig> {
    let d = SearchConfig::default();
    let k_set = match cfg.pick(args.k_set.clone(), "k-set")? {
        Some(s) => parse_list(&s, "k-set")?,
        None => d.k_set,
    };
    let config = SearchConfig {
        k_set,
        pool_size: cfg.pick(args.pool_size, "pool-size")?.unwrap_or(d.pool_size),
        batch: cfg.pick(args.batch, "batch")?.unwrap_or(d.batch),
        patience: cfg.pick(args.patience, "patience")?.unwrap_or(d.patience),
        max_steps: cfg.pick(args.max_steps, "max-steps")?.unwrap_or(d.max_steps),
        seed: cfg.pick(common.seed, "seed")?.unwrap_or(d.seed),
        frozen_prefix: cfg.pick(args.frozen_prefix, "frozen-prefix")?.unwrap_or(0),
        frozen_suffix: cfg.pick(args.frozen_suffix, "frozen-suffix")?.unwrap_or(0),
    };
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScorerSpec {
    Ngram(PathBuf),
    External(String),
    Stdio(String),
}

impl FromStr for ScorerSpec {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s.split_once(':') {
            Some(("ngram", p)) => Ok(ScorerSpec::Ngram(PathBuf::from(p))),
            Some(("external", url)) => Ok(ScorerSpec::External(url.to_owned())),
            Some(("stdio", cmd)) => Ok(ScorerSpec::Stdio(cmd.to_owned())),
            _ => Err(CliError::Usage(format!("scorer {s:?} must be ngram:PATH, external:URL or stdio:COMMAND"))),
        }
    }
}

/// A scorer plus the vocabulary that maps input text onto its ids.
pub struct Backend {
    pub scorer: Box<dyn Scorer>,
    pub vocab: Vocab,
    pub ngram: Option<NGramModel>,
}

impl Backend {
    /// Loads the scorer named by `spec`. Words of `texts` missing from the
    /// model's vocabulary get fresh ids, which an n-gram model scores as its
    /// unknown token; surfaces survive into the output.
    pub fn open(spec: &ScorerSpec, texts: &[String], end_token: Option<&str>, base: Option<Vocab>) -> CliResult<Self> {
        match spec {
            ScorerSpec::Ngram(path) => {
                if !path.exists() {
                    return Err(CliError::Usage(format!("{}: no such file", path.display())));
                }
                let model = NGramModel::load(path)?;
                let mut vocab = model.vocab().clone();
                texts.iter().for_each(|t| vocab.extend_from_text(t));
                Ok(Backend { scorer: Box::new(model.clone()), vocab, ngram: Some(model) })
            }
            ScorerSpec::External(_) | ScorerSpec::Stdio(_) => {
                let mut vocab = base.unwrap_or_else(|| Vocab::new(false));
                texts.iter().for_each(|t| vocab.extend_from_text(t));
                let end = end_token.map(|s| vocab.get(s).unwrap_or_else(|| vocab.insert(s)));
                let timeout = timeout_from_env();
                let transport: Box<dyn Transport> = match spec {
                    ScorerSpec::External(url) => Box::new(HttpTransport::new(url, timeout)),
                    ScorerSpec::Stdio(cmd) => Box::new(StdioTransport::spawn(cmd, timeout)?),
                    ScorerSpec::Ngram(_) => unreachable!(),
                };
                let scorer = RemoteScorer::new(transport, Payload::Surfaces(Arc::new(vocab.clone()))).with_end_token(end);
                Ok(Backend { scorer: Box::new(scorer), vocab, ngram: None })
            }
        }
    }

    pub fn tokenize(&self, line: &str) -> CliResult<WordUnitSeq> {
        Ok(tokenize(line, Mode::WordAtomic, &self.vocab, false)?)
    }

    /// Every token the scorer may predict: the vocabulary without the start
    /// token.
    pub fn outcomes(&self) -> Vec<crate::tokenize::TokenId> {
        let bos = self.vocab.bos();
        self.vocab.ids().filter(|&t| t != bos).collect()
    }
}

fn scorer_spec(common: &CommonArgs, cfg: &ConfigFile) -> CliResult<ScorerSpec> {
    cfg.pick(common.scorer.clone(), "scorer")?
        .ok_or_else(|| CliError::Usage("--scorer is required".into()))?
        .parse()
}

fn load_unigram(path: Option<PathBuf>) -> CliResult<Option<NGramModel>> {
    match path {
        Some(p) if !p.exists() => Err(CliError::Usage(format!("{}: no such file", p.display()))),
        Some(p) => Ok(Some(NGramModel::load(&p)?)),
        None => Ok(None),
    }
}

fn algorithm(name: Option<String>) -> CliResult<Option<Algorithm>> {
    match name.as_deref().unwrap_or("ibis") {
        "ibis" => Ok(Some(Algorithm::Ibis)),
        "random-kopt" => Ok(Some(Algorithm::RandomKopt)),
        "beam" => Ok(None),
        other => Err(CliError::Usage(format!("unknown algorithm {other:?}"))),
    }
}

/// Shuffles `seq` (keeping frozen edges in place) with the config's seed
/// and searches from there. Exactly what `ibis shuffle` does per line, with
/// the line's seed in `config`.
pub fn shuffle_and_search<S: Scorer + ?Sized>(
    seq: &WordUnitSeq,
    scorer: &S,
    config: &SearchConfig,
    algorithm: Algorithm,
) -> crate::Result<SearchState> {
    let n = seq.len();
    if !config.has_frozen() {
        return match algorithm {
            Algorithm::Ibis => crate::search::ibis_search(&bag_of(seq), &seq.context, scorer, config),
            Algorithm::RandomKopt => crate::search::random_kopt_search(&bag_of(seq), &seq.context, scorer, config),
        };
    }
    let head = config.frozen_prefix.min(n);
    let tail = config.frozen_suffix.min(n - head);
    let mut rng = crate::rng_from_seed(config.seed);
    let middle = Bag::from_units(seq.units[head..n - tail].iter().cloned());
    let mut units = seq.units[..head].to_vec();
    units.extend(shuffle_bag(&middle, &mut rng));
    units.extend_from_slice(&seq.units[n - tail..]);
    search_from_order(WordUnitSeq::with_context(units, seq.context.clone()), scorer, config, algorithm, &mut rng)
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ibis: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::TrainLm(a) => cmd_train_lm(a),
        Command::Shuffle(a) => cmd_shuffle(a, out),
        Command::Beam(a) => cmd_beam(a, out),
        Command::LatentEval(a) => cmd_latent_eval(a, out),
        Command::Constrained(a) => cmd_constrained(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Serve(a) => cmd_serve(a, out),
        Command::Conformance(a) => cmd_conformance(a, out),
    }
}

fn cmd_train_lm(a: TrainArgs) -> CliResult<()> {
    let lines = read_lines(&a.corpus)?;
    let smoothing = match a.smoothing.as_str() {
        "add-k" => Smoothing::AddK(a.kappa),
        "interpolated" => {
            let lambdas = match &a.lambdas {
                Some(s) => s
                    .split(',')
                    .map(|p| p.trim().parse().map_err(|_| CliError::Usage(format!("bad lambda {p:?}"))))
                    .collect::<CliResult<Vec<f64>>>()?,
                None => vec![1.0 / a.order as f64; a.order.saturating_sub(1)],
            };
            Smoothing::Interpolated { lambdas, kappa: a.kappa }
        }
        other => return Err(CliError::Usage(format!("unknown smoothing {other:?}"))),
    };
    let vocab = Vocab::from_corpus(&lines, true);
    let model = NGramModel::train_on_text(&lines, vocab, a.order, smoothing)?;
    model.save(&a.out)?;
    log::info!("wrote order-{} model with {} types to {}", a.order, model.vocab().len(), a.out.display());
    Ok(())
}

fn cmd_shuffle(a: ShuffleArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let config = search_config(&a.common, &a.search, &cfg)?;
    let algorithm = algorithm(cfg.pick(a.algorithm.clone(), "algorithm")?)?;
    let lines = read_lines(&a.input)?;
    let unigram = load_unigram(cfg.pick(a.unigram.clone(), "unigram")?)?;
    let end = cfg.pick(a.common.end_token.clone(), "end-token")?;
    let backend = Backend::open(&scorer_spec(&a.common, &cfg)?, &lines, end.as_deref(), unigram.as_ref().map(|m| m.vocab().clone()))?;

    let Some(algorithm) = algorithm else {
        let width = cfg.pick(a.width, "width")?.unwrap_or(DEFAULT_WIDTH);
        let future = cfg.flag(a.future_costs, "future-costs")?;
        return write_beam(&backend, &lines, width, future, unigram.as_ref(), out);
    };
    let results = par::try_map_range(lines.len(), |i| -> CliResult<Option<SearchState>> {
        if lines[i].trim().is_empty() {
            return Ok(None);
        }
        let seq = backend.tokenize(&lines[i])?;
        let cfg_i = SearchConfig { seed: config.seed.wrapping_add(i as u64), ..config.clone() };
        Ok(Some(shuffle_and_search(&seq, &backend.scorer, &cfg_i, algorithm)?))
    })?;
    if let Some(dir) = &a.trace_dir {
        fs::create_dir_all(dir)?;
    }
    for (i, r) in results.iter().enumerate() {
        let Some(state) = r else {
            writeln!(out)?;
            continue;
        };
        let mut line = format!("{}\t{:.6}", detokenize(&state.best, &backend.vocab), state.nll_per_token());
        if let Some(dir) = &a.trace_dir {
            let path = dir.join(format!("line-{i:05}.ndjson"));
            fs::write(&path, state.trace_ndjson())?;
            let _ = write!(line, "\t{}", path.display());
        }
        writeln!(out, "{line}")?;
    }
    if let Some(path) = &a.curve {
        let states: Vec<SearchState> = results.into_iter().flatten().collect();
        fs::write(path, eval::format_curve(&eval::search_curve(&states)))?;
    }
    Ok(())
}

pub const DEFAULT_WIDTH: usize = 64;

fn write_beam(
    backend: &Backend,
    lines: &[String],
    width: usize,
    future: bool,
    unigram: Option<&NGramModel>,
    out: &mut dyn Write,
) -> CliResult<()> {
    let table = match (future, unigram, backend.ngram.as_ref()) {
        (false, _, _) => None,
        (true, Some(u), _) | (true, None, Some(u)) => Some(u),
        (true, None, None) => {
            return Err(CliError::Usage("future costs with an external scorer need --unigram".into()));
        }
    };
    let results = par::try_map_range(lines.len(), |i| -> CliResult<Option<(WordUnitSeq, f64)>> {
        if lines[i].trim().is_empty() {
            return Ok(None);
        }
        let seq = backend.tokenize(&lines[i])?;
        let r = beam_order(&bag_of(&seq), &seq.context, &backend.scorer, width, table)?;
        Ok(Some((r.order, r.nll / seq.token_count() as f64)))
    })?;
    for r in results {
        match r {
            Some((seq, nll)) => writeln!(out, "{}\t{nll:.6}", detokenize(&seq, &backend.vocab))?,
            None => writeln!(out)?,
        }
    }
    Ok(())
}

fn cmd_beam(a: BeamArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let lines = read_lines(&a.input)?;
    let unigram = load_unigram(cfg.pick(a.unigram.clone(), "unigram")?)?;
    let end = cfg.pick(a.common.end_token.clone(), "end-token")?;
    let backend = Backend::open(&scorer_spec(&a.common, &cfg)?, &lines, end.as_deref(), unigram.as_ref().map(|m| m.vocab().clone()))?;
    let width = cfg.pick(a.width, "width")?.unwrap_or(DEFAULT_WIDTH);
    let future = cfg.flag(a.future_costs, "future-costs")?;
    write_beam(&backend, &lines, width, future, unigram.as_ref(), out)
}

fn cmd_latent_eval(a: LatentArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let lines = read_lines(&a.input)?;
    let end = cfg.pick(a.common.end_token.clone(), "end-token")?;
    let backend = Backend::open(&scorer_spec(&a.common, &cfg)?, &lines, end.as_deref(), None)?;
    let corpus: Vec<Vec<crate::tokenize::TokenId>> = lines
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(tokenize(l, Mode::Subtoken, &backend.vocab, false)?.flatten()))
        .collect::<CliResult<_>>()?;
    let n_values = parse_list(&a.n, "n")?;
    let rows = latent::eval_latent_schemes(
        &backend.scorer,
        &corpus,
        &n_values,
        a.context,
        a.max_positions,
        &backend.outcomes(),
    )?;
    out.write_all(latent::format_report(&rows).as_bytes())?;
    Ok(())
}

fn units_of(backend: &Backend, text: &str) -> CliResult<Vec<WordUnit>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    Ok(backend.tokenize(text)?.units)
}

/// A required phrase is kept together as one unit.
fn phrase_unit(backend: &Backend, text: &str) -> CliResult<WordUnit> {
    Ok(WordUnit::new(backend.tokenize(text)?.flatten())?)
}

fn cmd_constrained(a: ConstrainedArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let config = search_config(&a.common, &a.search, &cfg)?;
    let temperature = cfg.pick(a.temperature, "temperature")?.unwrap_or(crate::constrained::DEFAULT_TEMPERATURE);
    let records: Vec<ConstraintRecord> = read_lines(&a.input)?
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| ConstraintRecord::parse_line(l))
        .collect::<crate::Result<_>>()?;

    let mut texts: Vec<String> = Vec::new();
    let mut vocab_files: HashMap<String, Vec<String>> = HashMap::new();
    for r in &records {
        texts.push(r.prefix.clone());
        texts.push(r.suffix.clone());
        texts.extend(r.required.iter().cloned());
        if let Some(VocabSource::File(path)) = r.vocab_source() {
            if let std::collections::hash_map::Entry::Vacant(slot) = vocab_files.entry(path) {
                let words = read_lines(Path::new(slot.key()))?;
                texts.extend(words.iter().cloned());
                slot.insert(words);
            }
        }
    }
    let end = cfg.pick(a.common.end_token.clone(), "end-token")?;
    let backend = Backend::open(&scorer_spec(&a.common, &cfg)?, &texts, end.as_deref(), None)?;

    let results = par::try_map_range(records.len(), |i| -> CliResult<SearchState> {
        let r = &records[i];
        let required = r.required.iter().map(|t| phrase_unit(&backend, t)).collect::<CliResult<Vec<_>>>()?;
        let mut c = GenConstraints::new(Bag::from_units(required.iter().cloned()), r.length);
        c.prefix = units_of(&backend, &r.prefix)?;
        c.suffix = units_of(&backend, &r.suffix)?;
        c.temperature = temperature;
        c.replacement_vocab = match r.vocab_source() {
            None => Vec::new(),
            Some(VocabSource::File(path)) => vocab_files[&path]
                .iter()
                .filter(|w| !w.trim().is_empty())
                .map(|w| phrase_unit(&backend, w))
                .collect::<CliResult<_>>()?,
            Some(VocabSource::ScorerTopK) => {
                let mut anchor = c.prefix.clone();
                anchor.extend(Bag::from_units(required).expand());
                scorer_topk(&backend.scorer, &[], &anchor, &backend.outcomes(), SCORER_TOPK)?
            }
        };
        let cfg_i = SearchConfig { seed: config.seed.wrapping_add(i as u64), ..config.clone() };
        Ok(constrained_search(&c, &[], &backend.scorer, &cfg_i)?)
    })?;
    for s in results {
        writeln!(out, "{}\t{:.6}", detokenize(&s.best, &backend.vocab), s.nll_per_token())?;
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let config = search_config(&a.common, &a.search, &cfg)?;
    let algorithm = algorithm(cfg.pick(a.algorithm.clone(), "algorithm")?)?
        .ok_or_else(|| CliError::Usage("eval supports the ibis and random-kopt algorithms".into()))?;
    let buckets = eval::parse_buckets(&cfg.pick(a.buckets.clone(), "buckets")?.unwrap_or_else(|| eval::DEFAULT_BUCKETS.into()))?;
    let mode: SpanMode = cfg.pick(a.span_mode.clone(), "span-mode")?.unwrap_or_else(|| "punctuationless-sentence".into()).parse()?;
    let lines = read_lines(&a.input)?;
    let end = cfg.pick(a.common.end_token.clone(), "end-token")?;
    let backend = Backend::open(&scorer_spec(&a.common, &cfg)?, &lines, end.as_deref(), None)?;
    let corpus: Vec<WordUnitSeq> = lines
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| backend.tokenize(l))
        .collect::<CliResult<_>>()?;
    let options = BucketOptions {
        buckets,
        mode,
        max_per_bucket: cfg.pick(a.max_per_bucket, "max-per-bucket")?.unwrap_or(usize::MAX),
        algorithm,
        ..Default::default()
    };
    let reports = eval::length_bucket_eval(&corpus, &backend.vocab, &backend.scorer, &config, &options)?;
    out.write_all(eval::format_reports(&reports).as_bytes())?;
    Ok(())
}

fn cmd_serve(a: ServeArgs, out: &mut dyn Write) -> CliResult<()> {
    let ScorerSpec::Ngram(path) = a.scorer.parse()? else {
        return Err(CliError::Usage("serve needs an ngram:PATH scorer".into()));
    };
    if !path.exists() {
        return Err(CliError::Usage(format!("{}: no such file", path.display())));
    }
    let model = NGramModel::load(&path)?;
    let vocab = model.vocab().clone();
    let server = WireServer::new(model, vocab);
    match a.http {
        Some(addr) => {
            let http = HttpServer::bind(&addr)?;
            let bound = http.local_addr().map_or(addr, |a| a.to_string());
            writeln!(out, "listening on http://{bound}")?;
            out.flush()?;
            http.run(&server)?;
        }
        None => {
            let stdin = io::stdin();
            server.serve_lines(BufReader::new(stdin.lock()), out)?;
        }
    }
    Ok(())
}

fn cmd_conformance(a: ConformanceArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let lines = read_lines(&a.input)?;
    let end = cfg.pick(a.common.end_token.clone(), "end-token")?;
    let backend = Backend::open(&scorer_spec(&a.common, &cfg)?, &lines, end.as_deref(), None)?;
    let sentences: Vec<Vec<crate::tokenize::TokenId>> = lines
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(tokenize(l, Mode::Subtoken, &backend.vocab, false)?.flatten()))
        .collect::<CliResult<_>>()?;
    let checks = conformance(&backend.scorer, &sentences, a.tolerance);
    for c in &checks {
        writeln!(out, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
    }
    if checks.iter().all(|c| c.passed) {
        Ok(())
    } else {
        Err(CliError::Lib(Error::Protocol("scorer failed conformance".into())))
    }
}
