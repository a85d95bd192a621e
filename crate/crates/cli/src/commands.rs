use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use charrnn::checkpoint::{self, AnyCheckpoint, Checkpoint};
use charrnn::data::{load_corpus, load_corpus_with, split_dataset, Corpus, Vocabulary};
use charrnn::eval::{
    bench_schemes, eval_schedule, perplexity, train_with_schedule, BenchResult, MetricsWriter,
    BENCH_HEADER,
};
use charrnn::gradcheck::{run_suite, TOLERANCE};
use charrnn::model::{ModelConfig, Parameters};
use charrnn::numerics::{Precision, Real, Rng};
use charrnn::schemes::{sample, DrawMode, Sampling, SchemeId, Trainer};
use charrnn::TokenId;

use crate::config::{InitMode, RunConfig};
use crate::{
    io_error, CliError, Command, ConfigArgs, BENCH_FILE, CHECKPOINT_FILE, CONFIG_SNAPSHOT,
    DEFAULT_OUT_ROOT, LOG_FILE, METRICS_FILE, OUT_ROOT_ENV,
};

type CliResult<T = ()> = Result<T, CliError>;

pub fn run(command: Command) -> CliResult {
    match command {
        Command::Train(args) => cmd_train(&load_config(&args)?).map(|_| ()),
        Command::Eval {
            checkpoint,
            dataset,
        } => {
            let ppl = cmd_eval(&checkpoint, &dataset)?;
            println!("perplexity {ppl:.6}");
            Ok(())
        }
        Command::Sample {
            checkpoint,
            n,
            mode,
            seed_text,
            sampling,
            rng_seed,
        } => {
            let text = cmd_sample(
                &checkpoint,
                n,
                mode.into(),
                seed_text.as_deref(),
                sampling.map(Into::into),
                rng_seed,
            )?;
            println!("{text}");
            Ok(())
        }
        Command::Bench(args) => cmd_bench(&load_config(&args)?).map(|_| ()),
        Command::Gradcheck(args) => cmd_gradcheck(&load_config(&args)?),
    }
}

/// Reads the config file (if any), applies overrides and validates.
pub fn load_config(args: &ConfigArgs) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            RunConfig::parse_text(&text)?
        }
        None => RunConfig::default(),
    };
    for pair in &args.overrides {
        cfg.apply_override(pair)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `output_dir` if set, otherwise `$CHARRNN_OUT_ROOT/run_name`.
pub fn run_dir(cfg: &RunConfig) -> PathBuf {
    match &cfg.output_dir {
        Some(dir) => dir.clone(),
        None => {
            let root = std::env::var_os(OUT_ROOT_ENV).unwrap_or_else(|| DEFAULT_OUT_ROOT.into());
            PathBuf::from(root).join(&cfg.run_name)
        }
    }
}

struct Log {
    path: PathBuf,
    file: BufWriter<File>,
}

impl Log {
    fn create(dir: &Path) -> CliResult<Self> {
        let path = dir.join(LOG_FILE);
        let file = File::create(&path).map_err(|e| io_error(&path, e))?;
        Ok(Log {
            path,
            file: BufWriter::new(file),
        })
    }

    fn line(&mut self, text: &str) -> CliResult {
        println!("{text}");
        writeln!(self.file, "{text}")
            .and_then(|_| self.file.flush())
            .map_err(|e| io_error(&self.path, e))
    }
}

fn prepare_run_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = run_dir(cfg);
    fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    let snapshot = dir.join(CONFIG_SNAPSHOT);
    fs::write(&snapshot, cfg.to_text()).map_err(|e| io_error(&snapshot, e))?;
    Ok(dir)
}

fn model_config(
    cfg: &RunConfig,
    vocab_size: usize,
    num_layers: usize,
    hidden_size: usize,
) -> ModelConfig {
    let mut m =
        ModelConfig::new(vocab_size, num_layers, hidden_size).with_dense_size(cfg.dense_size);
    m.leakiness = cfg.leakiness;
    m
}

/// Trains per `cfg` and fills the run directory. Returns its path.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dataset = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::Config("train needs a dataset".into()))?;
    let (vocab, corpus) = load_corpus(dataset)?;
    let split = split_dataset(&corpus, cfg.rotation, cfg.test_len)?;
    if split.test.len() <= cfg.k2 {
        return Err(CliError::Config(format!(
            "test split has {} tokens; perplexity needs more than k2 = {}",
            split.test.len(),
            cfg.k2
        )));
    }
    let dir = prepare_run_dir(cfg)?;
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg, &dir, vocab, split.train, &split.test.tokens)?,
        Precision::F64 => train_typed::<f64>(cfg, &dir, vocab, split.train, &split.test.tokens)?,
    }
    Ok(dir)
}

fn train_typed<T: Real>(
    cfg: &RunConfig,
    dir: &Path,
    vocab: Vocabulary,
    train: Corpus,
    test: &[TokenId],
) -> CliResult {
    let model = model_config(cfg, vocab.len(), cfg.num_layers, cfg.hidden_size);
    let tc = cfg.train_config();
    let mut log = Log::create(dir)?;
    log.line(&format!(
        "{} on {} ({} train / {} test tokens, |V| = {}), {} parameters, {}-bit",
        tc.scheme,
        train.name,
        train.len(),
        test.len(),
        vocab.len(),
        model.parameter_count(),
        T::PRECISION.bits()
    ))?;
    let mut trainer = match cfg.init {
        InitMode::Default => Trainer::<T>::new(model.clone(), tc.clone(), train)?,
        InitMode::Zeros => {
            let mut rng = Rng::new(tc.seed);
            let _init = rng.fork();
            let stream = rng.fork();
            Trainer::with_params(
                model.clone(),
                tc.clone(),
                train,
                Parameters::zeros(&model),
                stream,
            )?
        }
    };

    let metrics_path = dir.join(METRICS_FILE);
    let file = File::create(&metrics_path).map_err(|e| io_error(&metrics_path, e))?;
    let mut metrics =
        MetricsWriter::new(BufWriter::new(file)).map_err(|e| io_error(&metrics_path, e))?;
    let schedule = eval_schedule(tc.total_batches, cfg.eval_points);
    let result = train_with_schedule(&mut trainer, test, &schedule, |r| {
        metrics.write(r).map_err(|e| charrnn::Error::Io {
            path: metrics_path.clone(),
            source: e,
        })?;
        let _ = log.line(&format!(
            "batch {:>6}  sequences {:>8}  loss {:.6}  perplexity {:.6}  {:.1} s",
            r.batch_index,
            r.sequences_seen,
            r.train_loss,
            r.test_perplexity,
            r.wall_ms / 1e3
        ));
        Ok(true)
    });
    let mut out = metrics.into_inner();
    out.flush().map_err(|e| io_error(&metrics_path, e))?;
    if let Err(e) = result {
        let e = CliError::from(e);
        log.line(&format!("aborted: {e}"))?;
        return Err(e);
    }

    let ckpt = Checkpoint {
        model,
        scheme: tc.scheme,
        k1: tc.k1,
        k2: tc.k2,
        vocab,
        seed_tokens: test[..tc.k2].to_vec(),
        params: trainer.params,
    };
    let path = dir.join(CHECKPOINT_FILE);
    ckpt.save(&path)?;
    log.line(&format!("wrote {}", path.display()))?;
    Ok(())
}

/// Perplexity of the whole of `dataset` under the checkpoint.
pub fn cmd_eval(checkpoint: &Path, dataset: &Path) -> CliResult<f64> {
    fn typed<T: Real>(c: &Checkpoint<T>, dataset: &Path) -> CliResult<f64> {
        let corpus = load_corpus_with(dataset, &c.vocab)?;
        Ok(perplexity(&c.params, &c.model, &corpus.tokens, c.k2)?)
    }
    match checkpoint::load(checkpoint)? {
        AnyCheckpoint::F32(c) => typed(&c, dataset),
        AnyCheckpoint::F64(c) => typed(&c, dataset),
    }
}

/// Seed followed by `n` generated characters.
pub fn cmd_sample(
    checkpoint: &Path,
    n: usize,
    mode: DrawMode,
    seed_text: Option<&str>,
    sampling: Option<Sampling>,
    rng_seed: u64,
) -> CliResult<String> {
    fn typed<T: Real>(
        c: &Checkpoint<T>,
        n: usize,
        mode: DrawMode,
        seed_text: Option<&str>,
        sampling: Option<Sampling>,
        rng_seed: u64,
    ) -> CliResult<String> {
        let seed = match seed_text {
            Some(text) => c
                .vocab
                .encode(text)
                .map_err(|e| CliError::Config(e.to_string()))?,
            None => c.seed_tokens.clone(),
        };
        let sampling = sampling.unwrap_or(c.scheme.sampling());
        let mut rng = Rng::new(rng_seed);
        let out = sample(
            sampling, &c.params, &c.model, &seed, n, c.k2, &mut rng, mode,
        )?;
        Ok(c.vocab.decode(&out)?)
    }
    match checkpoint::load(checkpoint)? {
        AnyCheckpoint::F32(c) => typed(&c, n, mode, seed_text, sampling, rng_seed),
        AnyCheckpoint::F64(c) => typed(&c, n, mode, seed_text, sampling, rng_seed),
    }
}

/// Benchmarks every scheme in `bench_schemes` on every architecture in
/// `bench_archs`, printing a table and writing `bench.csv` to the run
/// directory. Without a dataset, a uniform random 85-symbol corpus is used.
pub fn cmd_bench(cfg: &RunConfig) -> CliResult<Vec<BenchResult>> {
    let train = match &cfg.dataset {
        Some(path) => {
            let (_, corpus) = load_corpus(path)?;
            split_dataset(&corpus, cfg.rotation, cfg.test_len)?.train
        }
        None => {
            let mut rng = Rng::new(cfg.seed);
            Corpus::new("random", (0..100_000).map(|_| rng.below(85)).collect())
        }
    };
    let vocab_size = train.tokens.iter().max().map_or(1, |&m| m + 1);
    let dir = prepare_run_dir(cfg)?;
    let mut log = Log::create(&dir)?;
    let configs: Vec<_> = cfg
        .bench_schemes
        .iter()
        .map(|&s| {
            let mut c = cfg.clone();
            c.scheme = s;
            if s == SchemeId::Scheme2 {
                c.loss_window = None;
            }
            c.train_config()
        })
        .collect();
    let mut results = Vec::new();
    for &(layers, hidden) in &cfg.bench_archs {
        let arch = model_config(cfg, vocab_size, layers, hidden);
        let rows = match cfg.precision {
            Precision::F32 => bench_schemes::<f32>(
                &arch,
                &configs,
                &train,
                cfg.bench_tokens,
                cfg.bench_warmup,
                cfg.bench_iters,
            )?,
            Precision::F64 => bench_schemes::<f64>(
                &arch,
                &configs,
                &train,
                cfg.bench_tokens,
                cfg.bench_warmup,
                cfg.bench_iters,
            )?,
        };
        results.extend(rows);
    }

    log.line(&format!(
        "{:<8} {:>6} {:>6} {:>4} {:>4} {:>14} {:>7} {:>14} {:>7}",
        "scheme", "layers", "hidden", "k1", "k2", "train ms/batch", "cov", "sample ms/tok", "cov"
    ))?;
    for r in &results {
        log.line(&format!(
            "{:<8} {:>6} {:>6} {:>4} {:>4} {:>14.3} {:>7.3} {:>14.4} {:>7.3}",
            r.scheme.number(),
            r.num_layers,
            r.hidden_size,
            r.k1,
            r.k2,
            r.train_ms_per_batch.mean_ms(),
            r.train_ms_per_batch.cov(),
            r.sample_ms_per_token.mean_ms(),
            r.sample_ms_per_token.cov()
        ))?;
        for (what, t) in [
            ("training", &r.train_ms_per_batch),
            ("sampling", &r.sample_ms_per_token),
        ] {
            if !t.is_stable() {
                log.line(&format!(
                    "warning: {} {what} timing is noisy ({} samples, cov {:.3})",
                    r.scheme,
                    t.samples_ms.len(),
                    t.cov()
                ))?;
            }
        }
    }
    let mut csv = String::from(BENCH_HEADER);
    csv.push('\n');
    for r in &results {
        csv.push_str(&r.to_csv_row());
        csv.push('\n');
    }
    let path = dir.join(BENCH_FILE);
    fs::write(&path, csv).map_err(|e| io_error(&path, e))?;
    Ok(results)
}

/// Runs `gradcheck_cases` random tiny models from `seed`.
pub fn cmd_gradcheck(cfg: &RunConfig) -> CliResult {
    let reports = run_suite(cfg.gradcheck_cases, cfg.seed)?;
    let mut failed = 0;
    for (i, r) in reports.iter().enumerate() {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        failed += usize::from(!r.passed());
        println!(
            "case {i:>3}  |V|={} layers={} hidden={} dense={} len={} window={} {:?}  max rel err {:.3e}  {verdict}",
            r.model.vocab_size,
            r.model.num_layers,
            r.model.hidden_size,
            r.model.dense_size,
            r.seq_len,
            r.loss.window,
            r.loss.decay,
            r.max_relative_error
        );
    }
    println!(
        "{} of {} cases within {TOLERANCE:e}",
        reports.len() - failed,
        reports.len()
    );
    if failed > 0 {
        return Err(CliError::Gradcheck {
            failed,
            total: reports.len(),
        });
    }
    Ok(())
}
