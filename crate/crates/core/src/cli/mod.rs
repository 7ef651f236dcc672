//! Command-line front end. [`run`] parses arguments, dispatches one
//! subcommand and returns the process exit code.

mod verify;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ansatz::{CircuitConfig, Entanglement};
use crate::corpus::{
    gen_pairs, read_pairs, read_vocab, subsample, tokenize, write_pairs, write_vocab,
    NegativeSampler, PairStream, Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_similarity, label_index, logreg_train_eval, nearest_neighbors, read_labeled_texts,
    FeatureTable, SimilarityDataset, SimilarityMeasure, LOGREG_ITERATIONS,
};
use crate::model::{Lexicon, Model};
use crate::noise::{snr_sweep, write_snr_csv, PrefactorReport};
use crate::scoring::{HeadConfig, HeadKind, DEFAULT_EPSILON};
use crate::trainer::{
    shifted_pmi_targets, split_holdout, train, write_history_csv, Checkpoint, GradientMethod,
    TrainConfig, Validation, MIN_VALIDATION_COUNT,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "qembed", version, about = "Quantum-state word embeddings")]
struct Cli {
    /// Seed for every random choice the subcommand makes.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a vocabulary and, optionally, a binary pair file from raw text.
    BuildVocab(BuildVocabArgs),
    /// Train embeddings on a pair file.
    Train(Box<TrainArgs>),
    /// Spearman correlation against a word-similarity dataset.
    EvalSim(EvalSimArgs),
    /// Frozen-feature logistic-regression classification accuracy.
    EvalClf(EvalClfArgs),
    /// Nearest neighbours of query words by fidelity.
    Neighbors(NeighborsArgs),
    /// Noisy-fidelity sweep over register sizes and depolarizing strengths.
    NoiseSweep(NoiseSweepArgs),
    /// Run the built-in oracle suites and print PASS/FAIL per suite.
    Verify(VerifyArgs),
    /// Write per-token state features as TSV.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
struct BuildVocabArgs {
    /// Raw text corpus.
    #[arg(long)]
    input: PathBuf,
    /// Vocabulary TSV (`token<TAB>count`, line order is the id).
    #[arg(long)]
    out: PathBuf,
    /// Binary pair file of little-endian u32 (word, context) records.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    min_count: u64,
    /// Maximum window radius for pair extraction.
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Frequent-word subsampling threshold; 0 disables subsampling.
    #[arg(long, default_value_t = 1e-5)]
    subsample: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    /// Checkpoint path; the token sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Training history CSV (defaults to `<out>.history.csv`).
    #[arg(long)]
    history: Option<PathBuf>,
    /// `key = value` training settings; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Similarity dataset for model selection instead of held-out PMI.
    #[arg(long)]
    similarity: Option<PathBuf>,
    /// Fraction of pairs held out for the shifted-PMI validation metric.
    #[arg(long, default_value_t = 0.05)]
    holdout: f64,

    #[command(flatten)]
    circuit: CircuitArgs,
    #[command(flatten)]
    head: HeadArgs,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Debug, Args)]
struct CircuitArgs {
    #[arg(long, default_value_t = 4)]
    qubits: usize,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long, default_value = "ring")]
    entanglement: Entanglement,
}

#[derive(Debug, Args)]
struct HeadArgs {
    /// `lf` (logit fidelity) or `f` (scaled fidelity).
    #[arg(long, default_value = "lf")]
    head: HeadKind,
    #[arg(long, default_value_t = 10.0)]
    beta: f64,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    b: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
}

impl HeadArgs {
    fn config(&self) -> Result<HeadConfig> {
        let head = HeadConfig {
            kind: self.head,
            beta: self.beta,
            alpha: self.alpha,
            b: self.b,
            epsilon: self.epsilon,
        };
        head.validate()?;
        Ok(head)
    }
}

#[derive(Debug, Args)]
struct TrainOverrides {
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    lambda_decay: Option<f64>,
    #[arg(long)]
    lambda_ent: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    train_beta: Option<bool>,
    /// `adjoint` or `parameter-shift`.
    #[arg(long)]
    gradient: Option<GradientMethod>,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        take!(
            learning_rate,
            batch_size,
            negatives,
            lambda_decay,
            lambda_ent,
            max_epochs,
            patience,
            train_beta,
            gradient
        );
    }
}

#[derive(Debug, Args)]
struct EvalSimArgs {
    #[arg(long)]
    model: PathBuf,
    /// TSV of `word1<TAB>word2<TAB>score`.
    #[arg(long)]
    dataset: PathBuf,
    /// `fidelity` or `score` (the model's head applied to the fidelity).
    #[arg(long, default_value = "fidelity")]
    measure: SimilarityMeasure,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalClfArgs {
    #[arg(long)]
    model: PathBuf,
    /// TSV of `label<TAB>text`.
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = LOGREG_ITERATIONS)]
    iterations: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct NeighborsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    query: Vec<String>,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct NoiseSweepArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 4, 6, 8])]
    qubits: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5])]
    depolarizing_p: Vec<f64>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Random instances in the gradient suite.
    #[arg(long, default_value_t = 100)]
    gradient_instances: usize,
    /// Random circuits in the purity suite.
    #[arg(long, default_value_t = 1000)]
    purity_circuits: usize,
    /// Random (state pair, p) combinations in the noise suite.
    #[arg(long, default_value_t = 400)]
    noise_combos: usize,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    /// TSV of `token` followed by the real then imaginary amplitude parts.
    #[arg(long)]
    out: PathBuf,
}

/// Maps a library error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFinite(_) => EXIT_NUMERICAL,
        Error::InvalidArgument(_) | Error::QubitOutOfRange { .. } | Error::SameQubit(_) => {
            EXIT_USAGE
        }
        _ => EXIT_DATA,
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// exit code. Errors are reported on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "--threads must be at least 1".into(),
            ));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let seed = cli.seed;
    pool.install(|| match cli.command {
        Command::BuildVocab(a) => build_vocab_cmd(a, seed.unwrap_or(0)),
        Command::Train(a) => train_cmd(*a, seed),
        Command::EvalSim(a) => eval_sim_cmd(a),
        Command::EvalClf(a) => eval_clf_cmd(a),
        Command::Neighbors(a) => neighbors_cmd(a),
        Command::NoiseSweep(a) => noise_sweep_cmd(a, seed.unwrap_or(0)),
        Command::Verify(a) => verify::run(&a, seed.unwrap_or(0)),
        Command::Export(a) => export_cmd(a),
    })
}

fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| with_path(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| with_path(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| with_path(path, e))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn load_model(path: &Path) -> Result<(Model, Lexicon)> {
    open(path)?;
    Model::load(path)
}

fn build_vocab_cmd(a: BuildVocabArgs, seed: u64) -> Result<i32> {
    let text = read_text(&a.input)?;
    let tokens = tokenize(&text);
    let vocab = Vocabulary::from_tokens(&tokens, a.min_count)?;
    let mut out = create(&a.out)?;
    write_vocab(&vocab, &mut out)?;
    out.flush()?;
    println!(
        "vocabulary  {} types, {} tokens kept (min count {})",
        vocab.len(),
        vocab.total_tokens(),
        a.min_count
    );
    if let Some(path) = &a.pairs {
        if a.window == 0 {
            return Err(Error::InvalidArgument("--window must be at least 1".into()));
        }
        let ids = vocab.encode(&tokens);
        let ids = if a.subsample > 0.0 {
            subsample(
                &ids,
                &vocab,
                a.subsample,
                &mut ChaCha8Rng::seed_from_u64(seed),
            )?
        } else {
            ids
        };
        let mut out = create(path)?;
        let n = write_pairs(gen_pairs(&PairStream::new(&ids, a.window, seed)), &mut out)?;
        out.flush()?;
        println!("pairs       {n} from {} positions", ids.len());
    }
    Ok(EXIT_OK)
}

fn train_cmd(a: TrainArgs, seed: Option<u64>) -> Result<i32> {
    let mut cfg = match &a.config {
        Some(path) => TrainConfig::parse(&read_text(path)?)?,
        None => TrainConfig::default(),
    };
    a.overrides.apply(&mut cfg);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let circuit = CircuitConfig::new(a.circuit.qubits, a.circuit.blocks, a.circuit.entanglement)?;
    let head = a.head.config()?;

    let vocab = read_vocab(open(&a.vocab)?)?;
    let pairs = read_pairs(open(&a.pairs)?)?;
    let lexicon = Lexicon::from(&vocab);
    let sampler = NegativeSampler::from_counts(vocab.counts())?;

    let (train_pairs, validation) = match &a.similarity {
        Some(path) => {
            let dataset = SimilarityDataset::read_tsv(open(path)?)?;
            let v = Validation::Similarity {
                dataset,
                lexicon: lexicon.clone(),
                measure: SimilarityMeasure::Fidelity,
            };
            (pairs, v)
        }
        None if a.holdout > 0.0 => {
            let (train_pairs, held) = split_holdout(&pairs, a.holdout, cfg.seed)?;
            let targets = shifted_pmi_targets(&held, cfg.negatives, MIN_VALIDATION_COUNT)?;
            info!("{} held-out validation cells", targets.len());
            (train_pairs, Validation::ShiftedPmi(targets))
        }
        None => (pairs, Validation::TrainingLoss),
    };

    info!(
        "training {} tokens on {} pairs: {} qubits, {} blocks, {} entanglement, {} head",
        vocab.len(),
        train_pairs.len(),
        circuit.num_qubits(),
        circuit.num_blocks(),
        circuit.entanglement(),
        head.kind
    );
    let model = Model::init(circuit, vocab.len(), head, cfg.seed)?;
    let checkpoint = Checkpoint {
        path: a.out.clone(),
        tokens: vocab.tokens().to_vec(),
    };
    let outcome = train(
        &train_pairs,
        &sampler,
        model,
        &cfg,
        &validation,
        Some(&checkpoint),
    )?;
    outcome.model.save(&a.out, vocab.tokens())?;

    println!("epoch  nce_loss    ent_penalty  decay_penalty  val_metric");
    for r in &outcome.history {
        println!(
            "{:>5}  {:>10.5}  {:>11.3e}  {:>13.3e}  {:>10.5}",
            r.epoch, r.nce_loss, r.ent_penalty, r.decay_penalty, r.val_metric
        );
    }
    println!(
        "best epoch {}{}; model written to {}",
        outcome.best_epoch,
        if outcome.stopped_early {
            " (stopped early)"
        } else {
            ""
        },
        a.out.display()
    );
    let history = a.history.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    let mut out = create(&history)?;
    write_history_csv(&outcome.history, &mut out)?;
    out.flush()?;
    Ok(EXIT_OK)
}

fn eval_sim_cmd(a: EvalSimArgs) -> Result<i32> {
    let (model, lexicon) = load_model(&a.model)?;
    let dataset = SimilarityDataset::read_tsv(open(&a.dataset)?)?;
    let report = evaluate_similarity(&model, &lexicon, &dataset, a.measure)?;
    println!("{report}");
    if let Some(path) = &a.csv {
        let mut out = create(path)?;
        report.write_csv(&mut out)?;
        out.flush()?;
    }
    Ok(EXIT_OK)
}

fn eval_clf_cmd(a: EvalClfArgs) -> Result<i32> {
    let (model, lexicon) = load_model(&a.model)?;
    let train_docs = read_labeled_texts(open(&a.train)?)?;
    let test_docs = read_labeled_texts(open(&a.test)?)?;
    let classes = label_index(train_docs.iter().map(|(l, _)| l.as_str()));
    let table = FeatureTable::new(&model);
    let mut skipped = 0usize;
    let mut featurize = |docs: &[(String, Vec<String>)]| -> Result<Vec<(Vec<f64>, usize)>> {
        let mut rows = Vec::new();
        for (label, tokens) in docs {
            let Some(&class) = classes.get(label) else {
                warn!("test label '{label}' never appears in training data; skipped");
                skipped += 1;
                continue;
            };
            match table.document(&lexicon, tokens) {
                Ok(x) => rows.push((x, class)),
                Err(Error::OutOfVocabulary(_)) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(rows)
    };
    let train_rows = featurize(&train_docs)?;
    let test_rows = featurize(&test_docs)?;
    let accuracy = logreg_train_eval(&train_rows, &test_rows, classes.len(), a.iterations)?;
    println!("accuracy      {accuracy:.4}");
    println!("classes       {}", classes.len());
    println!(
        "documents     {} train, {} test, {skipped} skipped",
        train_rows.len(),
        test_rows.len()
    );
    if let Some(path) = &a.csv {
        let mut out = create(path)?;
        writeln!(out, "accuracy,classes,n_train,n_test,skipped")?;
        writeln!(
            out,
            "{accuracy},{},{},{},{skipped}",
            classes.len(),
            train_rows.len(),
            test_rows.len()
        )?;
        out.flush()?;
    }
    Ok(EXIT_OK)
}

fn neighbors_cmd(a: NeighborsArgs) -> Result<i32> {
    let (model, lexicon) = load_model(&a.model)?;
    let mut rows = Vec::new();
    for query in &a.query {
        let word = query.to_lowercase();
        let id = lexicon
            .id(&word)
            .ok_or_else(|| Error::OutOfVocabulary(word.clone()))?;
        println!("{word}");
        for (rank, (other, f)) in nearest_neighbors(&model, id, a.top_k)?
            .into_iter()
            .enumerate()
        {
            println!("  {:>3}  {:<20} {f:.6}", rank + 1, lexicon.token(other));
            rows.push((word.clone(), rank + 1, lexicon.token(other).to_string(), f));
        }
    }
    if let Some(path) = &a.csv {
        let mut out = create(path)?;
        writeln!(out, "query,rank,neighbor,fidelity")?;
        for (q, rank, n, f) in rows {
            writeln!(out, "{q},{rank},{n},{f}")?;
        }
        out.flush()?;
    }
    Ok(EXIT_OK)
}

fn noise_sweep_cmd(a: NoiseSweepArgs, seed: u64) -> Result<i32> {
    let rows = snr_sweep(&a.qubits, &a.depolarizing_p, seed)?;
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
    println!(
        "{:>2}  {:>6}  {:>8}  {:>8}  {:>8}  {:>12}  {:>11}",
        "Q", "p", "F", "F_exact", "F_closed", "snr_(1-p)^2Q", "snr_oracle"
    );
    for r in &rows {
        println!(
            "{:>2}  {:>6}  {:>8.6}  {:>8}  {:>8.6}  {:>12.4e}  {:>11}",
            r.num_qubits,
            r.p,
            r.f_ideal,
            opt(r.f_noisy_exact),
            r.f_closed_form,
            r.snr_paper,
            r.snr_oracle
                .map_or_else(|| "-".to_string(), |x| format!("{x:.4e}"))
        );
    }
    println!();
    print!("{}", PrefactorReport::from_rows(&rows)?);
    if let Some(path) = &a.csv {
        let mut out = create(path)?;
        write_snr_csv(&rows, &mut out)?;
        out.flush()?;
    }
    Ok(EXIT_OK)
}

fn export_cmd(a: ExportArgs) -> Result<i32> {
    let (model, lexicon) = load_model(&a.model)?;
    let table = FeatureTable::new(&model);
    let mut out = create(&a.out)?;
    for token in lexicon.tokens() {
        let row = table.document(&lexicon, &[token])?;
        write!(out, "{token}")?;
        for v in row {
            write!(out, "\t{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    println!(
        "{} tokens x {} features written to {}",
        lexicon.len(),
        table.dim(),
        a.out.display()
    );
    Ok(EXIT_OK)
}
