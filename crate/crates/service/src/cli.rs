//! Command-line front end. Every subcommand wraps library operations;
//! validation problems exit with 2, runtime failures with 1.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use penwise::corrector::{apply_edits, train_null_tasks, CrfModel, Edit, NullDetectorModel};
use penwise::datapipe::{
    backtranslate, filter_pairs, mine_retrieval, read_pairs_jsonl, write_pairs_jsonl, Embeddings, SentenceIndex,
    SentencePair,
};
use penwise::decode::{decode, DecoderConfig, Strategy};
use penwise::infill::{infill_corpus, infill_generate, MaskScheme};
use penwise::lm::{self, LmModel, Objective, Vocab};
use penwise::metrics::{distinct_n, gen_diagnostics, novelty, sentence_prf, EvalReport};
use penwise::numerics::rng::seeded;
use penwise::numerics::FitOptions;
use penwise::polish::{build_graph, format_pairs, global_expand, local_expand, parse_annotations, polish, skeleton_pairs};
use penwise::store::{self, load_config, Config};
use serde::Serialize;

use crate::engine::{correction_edits, load_embeddings, read_corpus};
use crate::translator::HttpTranslator;

#[derive(Debug, Parser)]
#[command(name = "penwise", version, about = "Writing-assistant models: train, decode, correct, infill, polish, mine, serve")]
pub struct Cli {
    /// TOML config file; every section is optional.
    #[arg(long, global = true, env = "PENWISE_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write its archive.
    Train(TrainArgs),
    /// Continue a prefix with a causal LM.
    Decode(DecodeArgs),
    /// Propose substitution, insertion and deletion edits for each input line.
    Correct(CorrectArgs),
    /// Generate sentences containing the given keywords in order.
    Infill(InfillArgs),
    /// Rank replacement phrases for a span.
    Polish(PolishArgs),
    /// Expand a sentence skeleton.
    Expand(ExpandArgs),
    /// Mine and filter paraphrase pairs.
    Mine(MineArgs),
    /// Score system outputs and print a JSON report.
    Evaluate(EvaluateArgs),
    /// Run the HTTP suggestion service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKindArg {
    /// Causal LM on sentences.
    Lm,
    /// Substitution corrector on tab-separated `input<TAB>target` lines.
    Crf,
    /// Insertion/deletion detector on sentences.
    Null,
    /// Infilling LM on sentences.
    Infill,
    /// Skeleton-to-sentence LM on annotation JSON lines.
    Expand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Mle,
    Simctg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Greedy,
    Beam,
    Nucleus,
    Contrastive,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Greedy => Strategy::Greedy,
            StrategyArg::Beam => Strategy::Beam,
            StrategyArg::Nucleus => Strategy::Nucleus,
            StrategyArg::Contrastive => Strategy::Contrastive,
        }
    }
}

fn number<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.trim().parse().map_err(|e: T::Err| e.to_string())
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = number(s)?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} must be in [0, 1]"))
    }
}

fn open_unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = number(s)?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} must be in (0, 1)"))
    }
}

fn half_open_unit(s: &str) -> Result<f64, String> {
    let v: f64 = number(s)?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} must be in (0, 1]"))
    }
}

fn margin(s: &str) -> Result<f64, String> {
    let v: f64 = number(s)?;
    if (-1.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} must be in [-1, 1]"))
    }
}

fn positive(s: &str) -> Result<usize, String> {
    match number::<usize>(s)? {
        0 => Err("must be at least 1".into()),
        v => Ok(v),
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = number(s)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be a positive number"))
    }
}

fn span(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected START,LEN")?;
    let len = positive(b)?;
    Ok((number(a)?, len))
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub kind: ModelKindArg,
    /// Training data; its format depends on --kind.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
    /// Contrastive margin.
    #[arg(long, value_parser = margin, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    #[arg(long, value_parser = positive)]
    pub epochs: Option<usize>,
    #[arg(long, value_parser = positive)]
    pub batch_size: Option<usize>,
    #[arg(long, value_parser = positive_f64)]
    pub learning_rate: Option<f64>,
    #[arg(long, value_parser = positive)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rank of the CRF transition factorization.
    #[arg(long, default_value_t = 4, value_parser = positive)]
    pub rank: usize,
    /// Task draws for the null detector; defaults to ten per sentence.
    #[arg(long, value_parser = positive)]
    pub draws: Option<usize>,
    #[arg(long, default_value_t = 0.5, value_parser = open_unit_interval)]
    pub insert_rate: f64,
    #[arg(long, default_value_t = 0.5, value_parser = open_unit_interval)]
    pub mask_rate: f64,
}

/// Decoder flags shared by the generating subcommands.
#[derive(Debug, Args)]
pub struct DecoderArgs {
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// Candidate-set size for contrastive search.
    #[arg(long, value_parser = positive)]
    pub k: Option<usize>,
    /// Degeneration-penalty weight.
    #[arg(long, value_parser = unit_interval)]
    pub alpha: Option<f64>,
    #[arg(long, value_parser = positive)]
    pub beam_width: Option<usize>,
    /// Nucleus mass.
    #[arg(long, value_parser = half_open_unit)]
    pub top_p: Option<f64>,
    #[arg(long, value_parser = positive)]
    pub max_new: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl DecoderArgs {
    fn apply(&self, base: &DecoderConfig) -> DecoderConfig {
        let mut c = base.clone();
        if let Some(s) = self.strategy {
            c.strategy = s.into();
        }
        c.k = self.k.unwrap_or(c.k);
        c.alpha = self.alpha.unwrap_or(c.alpha);
        c.beam_width = self.beam_width.unwrap_or(c.beam_width);
        c.nucleus_p = self.top_p.unwrap_or(c.nucleus_p);
        c.max_new_tokens = self.max_new.unwrap_or(c.max_new_tokens);
        c.seed = self.seed.unwrap_or(c.seed);
        c
    }
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub prefix: String,
    #[command(flatten)]
    pub decoder: DecoderArgs,
    /// Write the per-step trace as JSON.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorrectArgs {
    /// Substitution corrector archive.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Insertion/deletion detector archive.
    #[arg(long)]
    pub null_model: Option<PathBuf>,
    /// One sentence per line.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// JSON lines `{text, edits, corrected}`; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InfillArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated keywords, in order.
    #[arg(long)]
    pub keywords: String,
    #[arg(long, value_parser = positive)]
    pub n: Option<usize>,
    #[command(flatten)]
    pub decoder: DecoderArgs,
}

#[derive(Debug, Args)]
pub struct PolishArgs {
    /// Embedding archive or text table.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub text: String,
    /// Token span as START,LEN.
    #[arg(long, value_parser = span)]
    pub span: (usize, usize),
    #[arg(long, value_parser = positive)]
    pub top_m: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    /// Skeleton LM, or an infilling LM when --pos is given.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub text: String,
    /// Space-separated POS tags, one per token; selects local expansion.
    #[arg(long)]
    pub pos: Option<String>,
    #[command(flatten)]
    pub decoder: DecoderArgs,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    /// Source sentences, one per line.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Embedding archive or text table used for retrieval and filtering.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Retrieve neighbors from this corpus.
    #[arg(long, conflicts_with = "translate_url")]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 5, value_parser = positive)]
    pub topn: usize,
    /// Back-translate through this endpoint.
    #[arg(long)]
    pub translate_url: Option<String>,
    #[arg(long, default_value = "en")]
    pub lang: String,
    #[arg(long, default_value = "de")]
    pub pivot: String,
    #[arg(long, default_value_t = 10_000, value_parser = positive)]
    pub timeout_ms: usize,
    #[arg(long, default_value_t = 2)]
    pub retries: usize,
    /// Filter existing JSON-line pairs instead of mining.
    #[arg(long, conflicts_with_all = ["corpus", "translate_url"])]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Rejection report; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Generated sentences, one per line.
    #[arg(long)]
    pub outputs: Option<PathBuf>,
    /// Comma-separated keywords per line, aligned with --outputs.
    #[arg(long, requires = "outputs")]
    pub keywords: Option<PathBuf>,
    /// Prefixes aligned with --outputs, scored by --model.
    #[arg(long, requires_all = ["outputs", "model"])]
    pub prefixes: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Gold `input<TAB>target` lines.
    #[arg(long, requires = "hyp")]
    pub gold: Option<PathBuf>,
    /// Corrected sentences aligned with --gold.
    #[arg(long, requires = "gold")]
    pub hyp: Option<PathBuf>,
    /// n-gram orders for distinct-n.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4", value_parser = positive)]
    pub distinct: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Overrides the configured listen address.
    #[arg(long)]
    pub bind: Option<String>,
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<penwise::Error> for CliError {
    fn from(e: penwise::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn lines(path: &Path) -> CliResult<Vec<String>> {
    Ok(read(path)?.lines().map(str::to_string).collect())
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn json_line<T: Serialize>(out: &mut dyn Write, v: &T) -> CliResult {
    let s = serde_json::to_string(v).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(out, "{s}")?;
    Ok(())
}

fn write_json<T: Serialize>(path: Option<&Path>, out: &mut dyn Write, v: &T) -> CliResult {
    let s = serde_json::to_string_pretty(v).map_err(|e| CliError::Runtime(e.to_string()))? + "\n";
    match path {
        Some(p) => fs::write(p, s)?,
        None => out.write_all(s.as_bytes())?,
    }
    Ok(())
}

fn load<T: store::Persist>(path: &Path) -> CliResult<T> {
    store::load(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return e.exit_code();
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.code()
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> CliResult {
    let config = match &cli.config {
        Some(p) => load_config(p).map_err(|e| match e {
            penwise::Error::Io(io) => CliError::Runtime(format!("{}: {io}", p.display())),
            other => other.into(),
        })?,
        None => Config::default(),
    };
    match cli.command {
        Command::Train(a) => train(a, &config, out),
        Command::Decode(a) => decode_cmd(a, &config, out),
        Command::Correct(a) => correct(a, &config, out),
        Command::Infill(a) => infill(a, &config, out),
        Command::Polish(a) => polish_cmd(a, &config, out),
        Command::Expand(a) => expand(a, &config, out),
        Command::Mine(a) => mine(a, &config, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Serve(a) => serve(a, config),
    }
}

fn train(a: TrainArgs, config: &Config, out: &mut dyn Write) -> CliResult {
    let mut tc = config.train.clone();
    if let Some(o) = a.objective {
        tc.objective = match o {
            ObjectiveArg::Mle => Objective::Mle,
            ObjectiveArg::Simctg => Objective::SimCtg,
        };
    }
    tc.rho = a.rho.unwrap_or(tc.rho);
    tc.epochs = a.epochs.unwrap_or(tc.epochs);
    tc.batch_size = a.batch_size.unwrap_or(tc.batch_size);
    tc.learning_rate = a.learning_rate.unwrap_or(tc.learning_rate);
    tc.max_steps = a.max_steps.or(tc.max_steps);
    tc.seed = a.seed.unwrap_or(tc.seed);
    tc.validate()?;
    let opts = FitOptions {
        epochs: tc.epochs,
        batch_size: tc.batch_size,
        learning_rate: tc.learning_rate,
        seed: tc.seed,
        max_steps: tc.max_steps,
        ..FitOptions::default()
    };
    let arch = config.model;
    let text = read(&a.corpus)?;
    let report = match a.kind {
        ModelKindArg::Lm | ModelKindArg::Null | ModelKindArg::Infill => {
            let corpus: Vec<Vec<String>> = text.lines().map(words).filter(|l| !l.is_empty()).collect();
            if corpus.is_empty() {
                return Err(invalid(format!("{}: no sentences", a.corpus.display())));
            }
            let vocab = Vocab::from_words(corpus.iter().flatten())?;
            match a.kind {
                ModelKindArg::Lm => {
                    let cls = vocab.specials().cls;
                    let seqs = corpus
                        .iter()
                        .map(|s| {
                            let mut ids = vocab.encode(s)?;
                            ids.push(cls);
                            Ok(ids)
                        })
                        .collect::<penwise::Result<Vec<_>>>()?;
                    let (m, r) = lm::train(vocab, arch, &seqs, &tc)?;
                    store::save(&m, &a.out)?;
                    r
                }
                ModelKindArg::Null => {
                    let ids = corpus.iter().map(|s| vocab.encode(s)).collect::<penwise::Result<Vec<_>>>()?;
                    let draws = a.draws.unwrap_or(10 * ids.len());
                    let (m, r) = train_null_tasks(vocab, arch, &ids, draws, a.insert_rate, a.mask_rate, &opts)?;
                    store::save(&m, &a.out)?;
                    r
                }
                _ => {
                    config.infill.validate()?;
                    let scheme = MaskScheme::Random {
                        rate: config.infill.mask_rate,
                    };
                    let seqs = infill_corpus(&vocab, &corpus, scheme, config.infill.copies, tc.seed)?;
                    let (m, r) = lm::train(vocab, arch, &seqs, &tc)?;
                    store::save(&m, &a.out)?;
                    r
                }
            }
        }
        ModelKindArg::Crf => {
            let mut pairs = Vec::new();
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let (x, y) = line.split_once('\t').ok_or_else(|| {
                    invalid(format!("{}:{}: expected input<TAB>target", a.corpus.display(), i + 1))
                })?;
                pairs.push((words(x), words(y)));
            }
            if pairs.is_empty() {
                return Err(invalid(format!("{}: no pairs", a.corpus.display())));
            }
            let vocab = Vocab::from_words(pairs.iter().flat_map(|(x, y)| x.iter().chain(y)))?;
            let ids = pairs
                .iter()
                .map(|(x, y)| Ok((vocab.encode(x)?, vocab.encode(y)?)))
                .collect::<penwise::Result<Vec<_>>>()?;
            let (m, r) = CrfModel::train(vocab, arch, a.rank, &ids, &config.crf, &opts)?;
            store::save(&m, &a.out)?;
            r
        }
        ModelKindArg::Expand => {
            config.expand.validate()?;
            let items = parse_annotations(&text)?;
            if items.is_empty() {
                return Err(invalid(format!("{}: no annotated sentences", a.corpus.display())));
            }
            let vocab = Vocab::from_words(items.iter().flat_map(|i| i.tokens.iter()))?;
            let mut rng = seeded(tc.seed);
            let pairs = skeleton_pairs(&items, &mut rng, config.expand.drop_rate)?;
            let seqs = format_pairs(&vocab, &pairs, arch.max_len)?;
            let (m, r) = lm::train(vocab, arch, &seqs, &tc)?;
            store::save(&m, &a.out)?;
            r
        }
    };
    json_line(out, &report)
}

fn decode_cmd(a: DecodeArgs, config: &Config, out: &mut dyn Write) -> CliResult {
    let m: LmModel = load(&a.model)?;
    let cfg = a.decoder.apply(&config.decoder);
    let prefix = m.vocab().encode(&words(&a.prefix))?;
    let (mut tokens, trace) = decode(&m, &prefix, &cfg)?;
    if let Some(p) = &a.trace {
        write_json(Some(p), out, &trace)?;
    }
    if tokens.last() == Some(&m.vocab().specials().cls) {
        tokens.pop();
    }
    writeln!(out, "{}", m.vocab().decode(&tokens)?.join(" "))?;
    Ok(())
}

#[derive(Serialize)]
struct CorrectionLine {
    text: String,
    edits: Vec<Edit>,
    corrected: String,
}

fn correct(a: CorrectArgs, config: &Config, out: &mut dyn Write) -> CliResult {
    if a.model.is_none() && a.null_model.is_none() {
        return Err(invalid("correct needs --model, --null-model or both"));
    }
    let crf: Option<CrfModel> = a.model.as_deref().map(load).transpose()?;
    let null: Option<NullDetectorModel> = a.null_model.as_deref().map(load).transpose()?;
    let mut buf = Vec::new();
    for line in lines(&a.input)? {
        let tokens = words(&line);
        if tokens.is_empty() {
            continue;
        }
        let edits = correction_edits(crf.as_ref(), null.as_ref(), &tokens, config)?;
        let corrected = apply_edits(&tokens, &edits)?.join(" ");
        json_line(
            &mut buf,
            &CorrectionLine {
                text: tokens.join(" "),
                edits,
                corrected,
            },
        )?;
    }
    match &a.out {
        Some(p) => fs::write(p, buf)?,
        None => out.write_all(&buf)?,
    }
    Ok(())
}

fn infill(a: InfillArgs, config: &Config, out: &mut dyn Write) -> CliResult {
    let m: LmModel = load(&a.model)?;
    let keywords: Vec<Vec<String>> = a.keywords.split(',').map(words).collect();
    if keywords.iter().any(Vec::is_empty) {
        return Err(invalid("--keywords has an empty entry"));
    }
    let cfg = a.decoder.apply(&config.decoder);
    let n = a.n.unwrap_or(config.infill.candidates);
    let outcome = infill_generate(&m, &keywords, &cfg, n)?;
    for s in outcome.sentences() {
        writeln!(out, "{}", s.join(" "))?;
    }
    Ok(())
}

fn polish_cmd(a: PolishArgs, config: &Config, out: &mut dyn Write) -> CliResult {
    let mut cfg = config.polish.clone();
    cfg.top_m = a.top_m.unwrap_or(cfg.top_m);
    let emb = load_embeddings(&a.embeddings).map_err(|e| CliError::Runtime(format!("{}: {e}", a.embeddings.display())))?;
    let graph = build_graph(&emb, cfg.graph_topn)?;
    for c in polish(&words(&a.text), a.span, &graph, &cfg)? {
        json_line(out, &c)?;
    }
    Ok(())
}

fn expand(a: ExpandArgs, config: &Config, out: &mut dyn Write) -> CliResult {
    let m: LmModel = load(&a.model)?;
    let cfg = a.decoder.apply(&config.decoder);
    let tokens = words(&a.text);
    let result = match &a.pos {
        Some(pos) => local_expand(&tokens, &words(pos), &m, &config.expand, &cfg)?.tokens,
        None => global_expand(&m, &tokens, &cfg)?,
    };
    writeln!(out, "{}", result.join(" "))?;
    Ok(())
}

fn mine(a: MineArgs, config: &Config, out: &mut dyn Write) -> CliResult {
    let emb: Embeddings =
        load_embeddings(&a.embeddings).map_err(|e| CliError::Runtime(format!("{}: {e}", a.embeddings.display())))?;
    let pairs: Vec<SentencePair> = if let Some(p) = &a.pairs {
        let f = fs::File::open(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        read_pairs_jsonl(BufReader::new(f))?
    } else {
        let sources: Vec<String> = lines(&a.input)?.into_iter().filter(|l| !l.trim().is_empty()).collect();
        if let Some(c) = &a.corpus {
            let corpus: Vec<String> = read_corpus(c)?.iter().map(|s| s.join(" ")).collect();
            let index = SentenceIndex::build(&corpus, &emb)?;
            let mut all = Vec::new();
            for s in &sources {
                all.extend(mine_retrieval(&index, s, a.topn, &emb)?);
            }
            all
        } else if let Some(url) = &a.translate_url {
            let client = HttpTranslator::new(url.clone(), Duration::from_millis(a.timeout_ms as u64), a.retries)?;
            let mut all = Vec::new();
            for s in &sources {
                match backtranslate(&client, s, &a.lang, &a.pivot) {
                    Ok(p) => all.push(p),
                    Err(e) => eprintln!("skipping {s:?}: {e}"),
                }
            }
            all
        } else {
            return Err(invalid("mine needs --corpus, --translate-url or --pairs"));
        }
    };
    let (kept, report) = filter_pairs(&pairs, &config.filter, &emb)?;
    let mut buf = Vec::new();
    write_pairs_jsonl(&mut buf, &kept)?;
    fs::write(&a.out, buf)?;
    write_json(a.report.as_deref(), out, &report)
}

fn evaluate(a: EvaluateArgs, out: &mut dyn Write) -> CliResult {
    let mut report = EvalReport::default();
    let outputs: Option<Vec<Vec<String>>> = a
        .outputs
        .as_deref()
        .map(|p| Ok::<_, CliError>(lines(p)?.iter().map(|l| words(l)).collect()))
        .transpose()?;
    let aligned = |p: &Path, what: &str, n: usize| -> CliResult<Vec<String>> {
        let l = lines(p)?;
        if l.len() != n {
            return Err(invalid(format!("{what} has {} lines, expected {n}", l.len())));
        }
        Ok(l)
    };
    if let Some(outputs) = &outputs {
        for &n in &a.distinct {
            report.distinct.insert(n, distinct_n(outputs, n));
        }
        if let Some(p) = &a.keywords {
            let kws = aligned(p, "--keywords", outputs.len())?;
            let total: f64 = kws
                .iter()
                .zip(outputs)
                .map(|(k, o)| {
                    let k: Vec<String> = k.split(',').flat_map(|w| words(w)).collect();
                    novelty(&k, o)
                })
                .sum();
            report.novelty = Some(if outputs.is_empty() { 0.0 } else { total / outputs.len() as f64 });
        }
        if let (Some(p), Some(mp)) = (&a.prefixes, &a.model) {
            let m: LmModel = load(mp)?;
            let prefixes = aligned(p, "--prefixes", outputs.len())?;
            let (mut ppl, mut coh) = (0.0, 0.0);
            for (pre, o) in prefixes.iter().zip(outputs) {
                let d = gen_diagnostics(&m.vocab().encode(&words(pre))?, &m.vocab().encode(o)?, &m)?;
                ppl += d.gen_ppl;
                coh += d.coh;
            }
            let n = outputs.len().max(1) as f64;
            report.gen_ppl = Some(ppl / n);
            report.coherence = Some(coh / n);
        }
    }
    if let (Some(g), Some(h)) = (&a.gold, &a.hyp) {
        let mut gold = Vec::new();
        for (i, line) in lines(g)?.iter().enumerate() {
            let (x, y) = line
                .split_once('\t')
                .ok_or_else(|| invalid(format!("{}:{}: expected input<TAB>target", g.display(), i + 1)))?;
            gold.push((words(x), words(y)));
        }
        let hyp: Vec<Vec<String>> = aligned(h, "--hyp", gold.len())?.iter().map(|l| words(l)).collect();
        let s = sentence_prf(&gold, &hyp)?;
        report.detection = Some(s.detection);
        report.correction = Some(s.correction);
    }
    write_json(None, out, &report)
}

fn serve(a: ServeArgs, mut config: Config) -> CliResult {
    if let Some(b) = a.bind {
        config.service.bind = b;
        config.validate()?;
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(crate::http::serve(config)).map_err(CliError::Runtime)
}
