//! Test-set perplexity, the evaluation schedule, the metrics log and timing
//! benchmarks.

use std::io::{BufRead, Write};
use std::time::Instant;

use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::model::{advance_state, initial_state, predict, ModelConfig, Parameters};
use crate::numerics::{Real, Rng};
use crate::schemes::{sample, DrawMode, Sampling, SchemeId, TrainConfig, Trainer};
use crate::TokenId;

pub const DEFAULT_SCHEDULE_POINTS: usize = 40;
pub const DEFAULT_WARMUP: usize = 5;
pub const MIN_BENCH_ITERS: usize = 5;
/// Samples a timing needs before its spread is trusted.
pub const STABLE_SAMPLES: usize = 20;
pub const METRICS_HEADER: &str = "batch_index,sequences_seen,wall_ms,train_loss,test_perplexity";
pub const BENCH_HEADER: &str =
    "scheme,num_layers,hidden_size,k1,k2,train_ms_per_batch,train_cov,sample_ms_per_token,sample_cov";

/// Perplexity of `test` under the model. The state is burned in from the
/// learned initial state on the first `k2` tokens; each of the remaining
/// `len - k2` tokens is then scored by one continuous forward pass.
pub fn perplexity<T: Real>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    test: &[TokenId],
    k2: usize,
) -> Result<f64> {
    if k2 == 0 {
        return Err(Error::Config("k2 must be at least 1".into()));
    }
    if test.len() <= k2 {
        return Err(Error::SequenceTooShort {
            needed: k2 + 1,
            got: test.len(),
        });
    }
    let mut state = advance_state(params, cfg, &test[..k2 - 1], &initial_state(params))?;
    let mut nll = 0.0f64;
    for t in k2..test.len() {
        let (y, next) = predict(params, cfg, test[t - 1], &state)?;
        let target = test[t];
        if target >= cfg.vocab_size {
            return Err(Error::TokenOutOfRange {
                token: target,
                vocab_size: cfg.vocab_size,
            });
        }
        nll -= y[target].as_f64().ln();
        state = next;
    }
    Ok((nll / (test.len() - k2) as f64).exp())
}

/// Rounded log-spaced batch indices from 1 to `total` inclusive, sorted and
/// without duplicates.
pub fn eval_schedule(total: usize, points: usize) -> Vec<usize> {
    if total == 0 {
        return Vec::new();
    }
    if points <= 1 || total == 1 {
        return vec![total];
    }
    let span = (total as f64).ln();
    let mut out: Vec<usize> = (0..points)
        .map(|k| (span * k as f64 / (points - 1) as f64).exp().round() as usize)
        .map(|b| b.clamp(1, total))
        .collect();
    out.push(1);
    out.push(total);
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRecord {
    pub batch_index: usize,
    pub sequences_seen: usize,
    pub wall_ms: f64,
    pub train_loss: f64,
    pub test_perplexity: f64,
}

impl MetricsRecord {
    /// One CSV row without the trailing newline. Reals carry 17 significant
    /// digits so the text round-trips exactly.
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{:.16e},{:.16e},{:.16e}",
            self.batch_index,
            self.sequences_seen,
            self.wall_ms,
            self.train_loss,
            self.test_perplexity
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Config(format!(
                "metrics row needs 5 fields, got {}: {line:?}",
                fields.len()
            )));
        }
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad integer {s:?} in metrics row")))
        };
        let real = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number {s:?} in metrics row")))
        };
        Ok(MetricsRecord {
            batch_index: int(fields[0])?,
            sequences_seen: int(fields[1])?,
            wall_ms: real(fields[2])?,
            train_loss: real(fields[3])?,
            test_perplexity: real(fields[4])?,
        })
    }
}

/// Writes the metrics header on creation and one row per record.
pub struct MetricsWriter<W: Write> {
    out: W,
    last_batch: Option<usize>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(MetricsWriter {
            out,
            last_batch: None,
        })
    }

    /// Panics if batch indices stop increasing.
    pub fn write(&mut self, record: &MetricsRecord) -> std::io::Result<()> {
        if let Some(last) = self.last_batch {
            assert!(
                record.batch_index > last,
                "metrics batch index went from {last} to {}",
                record.batch_index
            );
        }
        self.last_batch = Some(record.batch_index);
        writeln!(self.out, "{}", record.to_csv_row())?;
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Parses a metrics log, header included.
pub fn read_metrics(input: impl BufRead) -> Result<Vec<MetricsRecord>> {
    let mut lines = input.lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io("metrics", e))?,
        None => return Err(Error::Config("metrics file is empty".into())),
    };
    if header.trim_end() != METRICS_HEADER {
        return Err(Error::Config(format!(
            "unexpected metrics header {header:?}"
        )));
    }
    let mut out: Vec<MetricsRecord> = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io("metrics", e))?;
        if line.is_empty() {
            continue;
        }
        let record = MetricsRecord::parse_csv_row(&line)?;
        if out
            .last()
            .is_some_and(|r| r.batch_index >= record.batch_index)
        {
            return Err(Error::Config(format!(
                "metrics batch index {} is not increasing",
                record.batch_index
            )));
        }
        out.push(record);
    }
    Ok(out)
}

/// Trains `trainer` to its configured batch count, scoring `test` after
/// every batch listed in `schedule` and handing each record to `on_record`.
/// Returning `Ok(false)` from `on_record` stops training early.
pub fn train_with_schedule<T: Real>(
    trainer: &mut Trainer<T>,
    test: &[TokenId],
    schedule: &[usize],
    mut on_record: impl FnMut(&MetricsRecord) -> Result<bool>,
) -> Result<()> {
    let start = Instant::now();
    let total = trainer.config.total_batches;
    let mut next = schedule
        .iter()
        .copied()
        .filter(|&b| b >= 1 && b <= total)
        .peekable();
    while trainer.batches_done() < total {
        let loss = trainer.step()?;
        let done = trainer.batches_done();
        if next.peek() != Some(&done) {
            continue;
        }
        next.next();
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let record = MetricsRecord {
            batch_index: done,
            sequences_seen: done * trainer.config.lanes,
            wall_ms,
            train_loss: loss.as_f64(),
            test_perplexity: perplexity(&trainer.params, &trainer.model, test, trainer.config.k2)?,
        };
        if !on_record(&record)? {
            break;
        }
    }
    Ok(())
}

/// Mean and spread of repeated wall-clock measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct Timing {
    pub samples_ms: Vec<f64>,
}

impl Timing {
    pub fn mean_ms(&self) -> f64 {
        self.samples_ms.iter().sum::<f64>() / self.samples_ms.len() as f64
    }

    pub fn std_ms(&self) -> f64 {
        let n = self.samples_ms.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean_ms();
        let ss: f64 = self.samples_ms.iter().map(|x| (x - m) * (x - m)).sum();
        (ss / (n - 1) as f64).sqrt()
    }

    /// Coefficient of variation; a measurement is trusted below 0.2.
    pub fn cov(&self) -> f64 {
        self.std_ms() / self.mean_ms()
    }

    pub fn is_stable(&self) -> bool {
        self.samples_ms.len() >= STABLE_SAMPLES && self.cov() < 0.2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub scheme: SchemeId,
    pub num_layers: usize,
    pub hidden_size: usize,
    pub k1: usize,
    pub k2: usize,
    pub train_ms_per_batch: Timing,
    pub sample_ms_per_token: Timing,
}

impl BenchResult {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.4},{:.6},{:.4}",
            self.scheme.number(),
            self.num_layers,
            self.hidden_size,
            self.k1,
            self.k2,
            self.train_ms_per_batch.mean_ms(),
            self.train_ms_per_batch.cov(),
            self.sample_ms_per_token.mean_ms(),
            self.sample_ms_per_token.cov(),
        )
    }
}

fn check_iters(iters: usize) -> Result<()> {
    if iters < MIN_BENCH_ITERS {
        return Err(Error::Config(format!(
            "benchmark needs at least {MIN_BENCH_ITERS} timed iterations, got {iters}"
        )));
    }
    Ok(())
}

/// Milliseconds per training batch for each configuration. Configurations
/// take turns batch by batch so that drift in machine load hits all of them
/// alike; the first `warmup` rounds are discarded.
pub fn bench_train<T: Real>(
    arch: &ModelConfig,
    configs: &[TrainConfig],
    train: &Corpus,
    warmup: usize,
    iters: usize,
) -> Result<Vec<Timing>> {
    check_iters(iters)?;
    let mut trainers = configs
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.total_batches = warmup + iters;
            Trainer::<T>::new(arch.clone(), c, train.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut timings = vec![
        Timing {
            samples_ms: Vec::with_capacity(iters)
        };
        configs.len()
    ];
    for round in 0..warmup + iters {
        for (trainer, timing) in trainers.iter_mut().zip(&mut timings) {
            let t0 = Instant::now();
            trainer.step()?;
            let ms = t0.elapsed().as_secs_f64() * 1e3;
            if round >= warmup {
                timing.samples_ms.push(ms);
            }
        }
    }
    Ok(timings)
}

/// One sampling measurement: the procedure and its window length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleCase {
    pub sampling: Sampling,
    pub k2: usize,
}

/// Milliseconds per generated token for each case on the same parameters,
/// interleaved like [`bench_train`]. Each iteration draws `n_tokens` tokens
/// after a seed of `max k2` tokens.
pub fn bench_sample<T: Real>(
    params: &Parameters<T>,
    arch: &ModelConfig,
    cases: &[SampleCase],
    seed: &[TokenId],
    n_tokens: usize,
    warmup: usize,
    iters: usize,
) -> Result<Vec<Timing>> {
    check_iters(iters)?;
    if n_tokens == 0 {
        return Err(Error::Config(
            "sampling benchmark needs n_tokens >= 1".into(),
        ));
    }
    let mut rng = Rng::new(0);
    let mut timings = vec![
        Timing {
            samples_ms: Vec::with_capacity(iters)
        };
        cases.len()
    ];
    for round in 0..warmup + iters {
        for (case, timing) in cases.iter().zip(&mut timings) {
            let t0 = Instant::now();
            let out = sample(
                case.sampling,
                params,
                arch,
                seed,
                n_tokens,
                case.k2,
                &mut rng,
                DrawMode::Multinomial,
            )?;
            let ms = t0.elapsed().as_secs_f64() * 1e3 / n_tokens as f64;
            std::hint::black_box(out);
            if round >= warmup {
                timing.samples_ms.push(ms);
            }
        }
    }
    Ok(timings)
}

/// Training and sampling cost of every scheme in `configs` on one
/// architecture. Sampling for each scheme uses its own procedure on
/// freshly initialised parameters.
pub fn bench_schemes<T: Real>(
    arch: &ModelConfig,
    configs: &[TrainConfig],
    train: &Corpus,
    n_tokens: usize,
    warmup: usize,
    iters: usize,
) -> Result<Vec<BenchResult>> {
    let train_timings = bench_train::<T>(arch, configs, train, warmup, iters)?;
    let mut rng = Rng::new(configs.first().map_or(0, |c| c.seed));
    let params = Parameters::<T>::init(arch, &mut rng);
    let cases: Vec<SampleCase> = configs
        .iter()
        .map(|c| SampleCase {
            sampling: c.scheme.sampling(),
            k2: c.k2,
        })
        .collect();
    let longest = cases.iter().map(|c| c.k2).max().unwrap_or(1);
    let seed: Vec<TokenId> = train.tokens.iter().copied().cycle().take(longest).collect();
    let sample_timings = bench_sample(&params, arch, &cases, &seed, n_tokens, warmup, iters)?;
    Ok(configs
        .iter()
        .zip(train_timings)
        .zip(sample_timings)
        .map(|((c, t), s)| BenchResult {
            scheme: c.scheme,
            num_layers: arch.num_layers,
            hidden_size: arch.hidden_size,
            k1: c.k1,
            k2: c.k2,
            train_ms_per_batch: t,
            sample_ms_per_token: s,
        })
        .collect())
}
