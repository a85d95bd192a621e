//! The four training/sampling schemes.
//!
//! | scheme | training                 | sampling    |
//! |--------|--------------------------|-------------|
//! | 1      | multi-loss               | windowed    |
//! | 2      | single-loss              | windowed    |
//! | 3      | multi-loss               | progressive |
//! | 4      | conditional multi-loss   | progressive |
//!
//! Multi- and single-loss training restart every lane from the learned
//! initial state and differ only in their loss weights, so they share
//! [`train_step_scheme123`]. Conditional multi-loss training carries one
//! state per lane from batch to batch ([`train_step_scheme4`]).

use std::fmt;

use crate::bptt::{
    backward_into, clip_elementwise, loss_weights, BackwardOptions, Decay, Gradients, Horizon,
    InitialState, LossSpec,
};
use crate::data::{Batch, BatchStream, Corpus, DEFAULT_LANES};
use crate::error::{Error, Result};
use crate::model::{
    advance_state, forward_sequence_masked, forward_step, initial_state, predict, LstmState,
    ModelConfig, Parameters,
};
use crate::numerics::{Precision, Real, Rng, Vector};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::TokenId;

pub const DEFAULT_TOTAL_BATCHES: usize = 12_800;
pub const DEFAULT_CLIP: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchemeId {
    Scheme1,
    Scheme2,
    Scheme3,
    Scheme4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Training {
    MultiLoss,
    SingleLoss,
    ConditionalMultiLoss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    Windowed,
    Progressive,
}

impl SchemeId {
    pub const ALL: [SchemeId; 4] = [
        SchemeId::Scheme1,
        SchemeId::Scheme2,
        SchemeId::Scheme3,
        SchemeId::Scheme4,
    ];

    pub fn number(self) -> u8 {
        match self {
            SchemeId::Scheme1 => 1,
            SchemeId::Scheme2 => 2,
            SchemeId::Scheme3 => 3,
            SchemeId::Scheme4 => 4,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(SchemeId::Scheme1),
            2 => Some(SchemeId::Scheme2),
            3 => Some(SchemeId::Scheme3),
            4 => Some(SchemeId::Scheme4),
            _ => None,
        }
    }

    pub fn training(self) -> Training {
        match self {
            SchemeId::Scheme1 | SchemeId::Scheme3 => Training::MultiLoss,
            SchemeId::Scheme2 => Training::SingleLoss,
            SchemeId::Scheme4 => Training::ConditionalMultiLoss,
        }
    }

    pub fn sampling(self) -> Sampling {
        match self {
            SchemeId::Scheme1 | SchemeId::Scheme2 => Sampling::Windowed,
            SchemeId::Scheme3 | SchemeId::Scheme4 => Sampling::Progressive,
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "scheme {}", self.number())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub scheme: SchemeId,
    pub k1: usize,
    pub k2: usize,
    pub lanes: usize,
    pub total_batches: usize,
    pub adam: AdamConfig,
    pub clip: f64,
    /// Optional per-step clamp on gate gradients inside the reverse pass.
    pub cell_clip: Option<f64>,
    /// `k3`; `None` picks the scheme's own window.
    pub loss_window: Option<usize>,
    pub decay: Decay,
    pub seed: u64,
    pub precision: Precision,
}

impl TrainConfig {
    pub fn new(scheme: SchemeId, k1: usize, k2: usize) -> Self {
        TrainConfig {
            scheme,
            k1,
            k2,
            lanes: DEFAULT_LANES,
            total_batches: DEFAULT_TOTAL_BATCHES,
            adam: AdamConfig::default(),
            clip: DEFAULT_CLIP,
            cell_clip: None,
            loss_window: None,
            decay: Decay::None,
            seed: 0,
            precision: Precision::F64,
        }
    }

    pub fn loss_spec(&self) -> LossSpec {
        let default = match self.scheme.training() {
            Training::SingleLoss => 1,
            Training::MultiLoss | Training::ConditionalMultiLoss => self.k2,
        };
        LossSpec {
            window: self.loss_window.unwrap_or(default),
            decay: self.decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k1 == 0 || self.k2 == 0 {
            return Err(Error::Config("k1 and k2 must be at least 1".into()));
        }
        if self.k1 > self.k2 {
            return Err(Error::Config(format!(
                "k1 ({}) must not exceed k2 ({}): 1 <= k1 <= k2",
                self.k1, self.k2
            )));
        }
        if self.lanes == 0 {
            return Err(Error::Config("lanes must be at least 1".into()));
        }
        if self.total_batches == 0 {
            return Err(Error::Config("total_batches must be at least 1".into()));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(Error::Config(format!(
                "clip must be positive, got {}",
                self.clip
            )));
        }
        if let Some(c) = self.cell_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!(
                    "cell_clip must be positive, got {c}"
                )));
            }
        }
        let a = &self.adam;
        if !(a.learning_rate >= 0.0 && a.epsilon > 0.0)
            || !(0.0..1.0).contains(&a.beta1)
            || !(0.0..1.0).contains(&a.beta2)
        {
            return Err(Error::Config(
                "adam needs learning_rate >= 0, epsilon > 0 and betas in [0, 1)".into(),
            ));
        }
        let spec = self.loss_spec();
        if spec.window == 0 || spec.window > self.k2 {
            return Err(Error::Config(format!(
                "k3 ({}) must lie in 1..=k2 ({})",
                spec.window, self.k2
            )));
        }
        if self.scheme == SchemeId::Scheme2 && spec.window != 1 {
            return Err(Error::Config(
                "scheme 2 trains on the final position only (k3 = 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Settings shared by every training step of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOptions<T> {
    pub k1: usize,
    pub k2: usize,
    pub clip: T,
    pub cell_clip: Option<T>,
    pub loss: LossSpec,
}

impl<T: Real> StepOptions<T> {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        StepOptions {
            k1: cfg.k1,
            k2: cfg.k2,
            clip: T::from_f64_lossy(cfg.clip),
            cell_clip: cfg.cell_clip.map(T::from_f64_lossy),
            loss: cfg.loss_spec(),
        }
    }
}

/// Per-lane recurrent state carried between batches by scheme 4.
#[derive(Clone, Debug, PartialEq)]
pub struct LaneStates<T> {
    pub states: Vec<LstmState<T>>,
}

impl<T: Real> LaneStates<T> {
    pub fn zeros(cfg: &ModelConfig, lanes: usize) -> Self {
        LaneStates {
            states: vec![LstmState::zeros(cfg); lanes],
        }
    }

    pub fn reset(&mut self, cfg: &ModelConfig) {
        for s in &mut self.states {
            *s = LstmState::zeros(cfg);
        }
    }
}

fn check_batch(batch: &Batch, k2: usize) -> Result<()> {
    if batch.lanes.is_empty() {
        return Err(Error::LengthMismatch("batch has no lanes".into()));
    }
    if let Some(lane) = batch
        .lanes
        .iter()
        .find(|l| l.inputs.len() != k2 || l.targets.len() != k2)
    {
        return Err(Error::LengthMismatch(format!(
            "lane at offset {} has {} inputs, expected k2 = {k2}",
            lane.offset,
            lane.inputs.len()
        )));
    }
    Ok(())
}

/// Averages lane gradients, clips, and takes one Adam step.
fn apply_update<T: Real>(
    params: &mut Parameters<T>,
    grads: &mut Gradients<T>,
    lanes: usize,
    clip: T,
    opt: &mut AdamState<T>,
) {
    grads.scale(T::one() / T::from_usize(lanes).expect("lane count"));
    clip_elementwise(grads, clip);
    adam_step(params, grads, opt);
}

/// Multi-loss (scheme 1 and 3) or single-loss (scheme 2) training on one
/// batch, depending on `options.loss`. Every lane starts from the learned
/// initial state, which is updated along with the weights. Returns the mean
/// over lanes of the weighted loss.
pub fn train_step_scheme123<T: Real>(
    params: &mut Parameters<T>,
    cfg: &ModelConfig,
    batch: &Batch,
    options: &StepOptions<T>,
    opt: &mut AdamState<T>,
) -> Result<T> {
    check_batch(batch, options.k2)?;
    let weights: Vector<T> = loss_weights(options.k2, options.loss)?;
    let start = initial_state(params);
    let mut grads = Gradients::zeros(cfg);
    let backward = BackwardOptions {
        horizon: Horizon::Steps(options.k2),
        initial: InitialState::Learned,
        cell_clip: options.cell_clip,
    };
    let mut total = T::zero();
    for lane in &batch.lanes {
        let (tape, _) = forward_sequence_masked(params, cfg, &lane.inputs, &start, |t| {
            weights[t] != T::zero()
        })?;
        total = total
            + backward_into(
                params,
                cfg,
                &tape,
                &lane.targets,
                &weights,
                backward,
                &mut grads,
            )?;
    }
    let loss = total / T::from_usize(batch.lanes.len()).expect("lane count");
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFiniteLoss { batch: 0 });
    }
    apply_update(params, &mut grads, batch.lanes.len(), options.clip, opt);
    Ok(loss)
}

/// Conditional multi-loss training on one batch. Each lane starts from its
/// carried state, which is treated as a constant; the state after `k1`
/// tokens becomes the lane's state for the next batch. The learned initial
/// state is not used or updated.
pub fn train_step_scheme4<T: Real>(
    params: &mut Parameters<T>,
    cfg: &ModelConfig,
    batch: &Batch,
    lane_states: &mut LaneStates<T>,
    options: &StepOptions<T>,
    opt: &mut AdamState<T>,
) -> Result<T> {
    check_batch(batch, options.k2)?;
    if lane_states.states.len() != batch.lanes.len() {
        return Err(Error::LengthMismatch(format!(
            "{} lane states for a batch of {} lanes",
            lane_states.states.len(),
            batch.lanes.len()
        )));
    }
    if options.k1 == 0 || options.k1 > options.k2 {
        return Err(Error::Config(format!(
            "k1 ({}) must lie in 1..=k2 ({})",
            options.k1, options.k2
        )));
    }
    let weights: Vector<T> = loss_weights(options.k2, options.loss)?;
    let mut grads = Gradients::zeros(cfg);
    let backward = BackwardOptions {
        horizon: Horizon::Steps(options.k2),
        initial: InitialState::Constant,
        cell_clip: options.cell_clip,
    };
    let mut total = T::zero();
    let mut captured = Vec::with_capacity(batch.lanes.len());
    for (lane, state) in batch.lanes.iter().zip(&lane_states.states) {
        let (tape, _) = forward_sequence_masked(params, cfg, &lane.inputs, state, |t| {
            weights[t] != T::zero()
        })?;
        captured.push(tape.state_after(options.k1));
        total = total
            + backward_into(
                params,
                cfg,
                &tape,
                &lane.targets,
                &weights,
                backward,
                &mut grads,
            )?;
    }
    let loss = total / T::from_usize(batch.lanes.len()).expect("lane count");
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFiniteLoss { batch: 0 });
    }
    lane_states.states = captured;
    apply_update(params, &mut grads, batch.lanes.len(), options.clip, opt);
    Ok(loss)
}

/// Owns everything one training run mutates.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: ModelConfig,
    pub config: TrainConfig,
    pub params: Parameters<T>,
    pub opt: AdamState<T>,
    pub lane_states: Option<LaneStates<T>>,
    options: StepOptions<T>,
    stream: BatchStream,
    batches_done: usize,
}

impl<T: Real> Trainer<T> {
    /// Initializes parameters and the batch stream from `config.seed`.
    pub fn new(model: ModelConfig, config: TrainConfig, train: Corpus) -> Result<Self> {
        model.validate()?;
        config.validate()?;
        let mut rng = Rng::new(config.seed);
        let mut init_rng = rng.fork();
        let stream_rng = rng.fork();
        let params = Parameters::init(&model, &mut init_rng);
        Self::with_params(model, config, train, params, stream_rng)
    }

    pub fn with_params(
        model: ModelConfig,
        config: TrainConfig,
        train: Corpus,
        params: Parameters<T>,
        stream_rng: Rng,
    ) -> Result<Self> {
        model.validate()?;
        config.validate()?;
        if !params.matches(&model) {
            return Err(Error::Config(
                "parameters do not match the model configuration".into(),
            ));
        }
        if let Some(&bad) = train.tokens.iter().find(|&&t| t >= model.vocab_size) {
            return Err(Error::TokenOutOfRange {
                token: bad,
                vocab_size: model.vocab_size,
            });
        }
        let stream = BatchStream::new(train, config.k1, config.k2, config.lanes, stream_rng)?;
        let lane_states =
            (config.scheme == SchemeId::Scheme4).then(|| LaneStates::zeros(&model, config.lanes));
        Ok(Trainer {
            opt: AdamState::new(&model, config.adam),
            options: StepOptions::from_config(&config),
            model,
            config,
            params,
            lane_states,
            stream,
            batches_done: 0,
        })
    }

    pub fn batches_done(&self) -> usize {
        self.batches_done
    }

    /// Trains on the next batch and returns its loss.
    pub fn step(&mut self) -> Result<T> {
        let item = self.stream.next_batch();
        let index = self.batches_done + 1;
        let result = match self.lane_states.as_mut() {
            Some(lanes) => {
                if item.epoch_start {
                    lanes.reset(&self.model);
                }
                train_step_scheme4(
                    &mut self.params,
                    &self.model,
                    &item.batch,
                    lanes,
                    &self.options,
                    &mut self.opt,
                )
            }
            None => train_step_scheme123(
                &mut self.params,
                &self.model,
                &item.batch,
                &self.options,
                &mut self.opt,
            ),
        };
        let loss = result.map_err(|e| match e {
            Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { batch: index },
            other => other,
        })?;
        self.batches_done = index;
        Ok(loss)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DrawMode {
    Multinomial,
    Greedy,
}

impl std::str::FromStr for DrawMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multinomial" => Ok(DrawMode::Multinomial),
            "greedy" => Ok(DrawMode::Greedy),
            other => Err(Error::Config(format!(
                "sampling mode must be greedy or multinomial, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for DrawMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DrawMode::Multinomial => "multinomial",
            DrawMode::Greedy => "greedy",
        })
    }
}

/// Greedy: argmax with the lowest index winning ties. Multinomial: inverse
/// CDF of one uniform draw.
pub fn draw_token<T: Real>(y: &Vector<T>, rng: &mut Rng, mode: DrawMode) -> TokenId {
    match mode {
        DrawMode::Greedy => y.argmax(),
        DrawMode::Multinomial => {
            let u = rng.uniform();
            let mut cumulative = 0.0;
            let mut last_positive = 0;
            for (k, &p) in y.as_slice().iter().enumerate() {
                let p = p.as_f64();
                if p > 0.0 {
                    last_positive = k;
                }
                cumulative += p;
                if u < cumulative {
                    return k;
                }
            }
            // Rounding left the total just below u.
            last_positive
        }
    }
}

/// Windowed sampling: for every new token, restart from the learned initial
/// state, feed the last `k2` tokens, and draw from the final output.
/// Returns the seed followed by `n` generated tokens.
#[allow(clippy::too_many_arguments)]
pub fn sample_windowed<T: Real>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    seed: &[TokenId],
    n: usize,
    k2: usize,
    rng: &mut Rng,
    mode: DrawMode,
) -> Result<Vec<TokenId>> {
    if k2 == 0 {
        return Err(Error::Config("k2 must be at least 1".into()));
    }
    if seed.len() < k2 {
        return Err(Error::SequenceTooShort {
            needed: k2,
            got: seed.len(),
        });
    }
    let start = initial_state(params);
    let mut out = seed.to_vec();
    out.reserve(n);
    for _ in 0..n {
        let window = &out[out.len() - k2..];
        let state = advance_state(params, cfg, &window[..k2 - 1], &start)?;
        let (y, _, _) = forward_step(params, cfg, window[k2 - 1], &state)?;
        out.push(draw_token(&y, rng, mode));
    }
    Ok(out)
}

/// Progressive sampling: bootstrap once through the seed from the learned
/// initial state, then feed each drawn token back without ever resetting.
pub fn sample_progressive<T: Real>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    seed: &[TokenId],
    n: usize,
    rng: &mut Rng,
    mode: DrawMode,
) -> Result<Vec<TokenId>> {
    let (&last, prefix) = seed.split_last().ok_or(Error::EmptySequence)?;
    let mut out = seed.to_vec();
    if n == 0 {
        for &t in seed {
            if t >= cfg.vocab_size {
                return Err(Error::TokenOutOfRange {
                    token: t,
                    vocab_size: cfg.vocab_size,
                });
            }
        }
        return Ok(out);
    }
    out.reserve(n);
    let state = advance_state(params, cfg, prefix, &initial_state(params))?;
    let (mut y, mut state) = predict(params, cfg, last, &state)?;
    for k in 0..n {
        let token = draw_token(&y, rng, mode);
        out.push(token);
        if k + 1 < n {
            (y, state) = predict(params, cfg, token, &state)?;
        }
    }
    Ok(out)
}

/// Dispatches to the windowed or progressive sampler.
#[allow(clippy::too_many_arguments)]
pub fn sample<T: Real>(
    sampling: Sampling,
    params: &Parameters<T>,
    cfg: &ModelConfig,
    seed: &[TokenId],
    n: usize,
    k2: usize,
    rng: &mut Rng,
    mode: DrawMode,
) -> Result<Vec<TokenId>> {
    match sampling {
        Sampling::Windowed => sample_windowed(params, cfg, seed, n, k2, rng, mode),
        Sampling::Progressive => sample_progressive(params, cfg, seed, n, rng, mode),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bptt::{cross_entropy, LossSpec};
    use crate::data::{batch_offsets, make_batch};
    use crate::model::forward_sequence;

    fn tiny_model(vocab: usize) -> ModelConfig {
        ModelConfig::new(vocab, 1, 6).with_dense_size(8)
    }

    fn random_params(cfg: &ModelConfig, seed: u64) -> Parameters<f64> {
        let mut rng = Rng::new(seed);
        let mut p = Parameters::<f64>::zeros(cfg);
        p.for_each_mut(|x| *x = rng.uniform_range(-0.5, 0.5));
        p
    }

    fn corpus(len: usize, vocab: usize, seed: u64) -> Corpus {
        let mut rng = Rng::new(seed);
        Corpus::new("r", (0..len).map(|_| rng.below(vocab)).collect())
    }

    fn options(k1: usize, k2: usize, loss: LossSpec) -> StepOptions<f64> {
        StepOptions {
            k1,
            k2,
            clip: 50.0,
            cell_clip: None,
            loss,
        }
    }

    #[test]
    fn scheme_table() {
        assert_eq!(SchemeId::Scheme1.training(), Training::MultiLoss);
        assert_eq!(SchemeId::Scheme2.training(), Training::SingleLoss);
        assert_eq!(SchemeId::Scheme4.training(), Training::ConditionalMultiLoss);
        assert_eq!(SchemeId::Scheme2.sampling(), Sampling::Windowed);
        assert_eq!(SchemeId::Scheme3.sampling(), Sampling::Progressive);
        for s in SchemeId::ALL {
            assert_eq!(SchemeId::from_number(s.number()), Some(s));
        }
    }

    #[test]
    fn config_rules() {
        assert!(TrainConfig::new(SchemeId::Scheme1, 20, 10)
            .validate()
            .is_err());
        assert!(TrainConfig::new(SchemeId::Scheme1, 10, 10)
            .validate()
            .is_ok());
        assert_eq!(
            TrainConfig::new(SchemeId::Scheme2, 5, 10)
                .loss_spec()
                .window,
            1
        );
        assert_eq!(
            TrainConfig::new(SchemeId::Scheme4, 5, 10)
                .loss_spec()
                .window,
            10
        );
        let mut c = TrainConfig::new(SchemeId::Scheme2, 5, 10);
        c.loss_window = Some(3);
        assert!(c.validate().is_err());
        let mut c = TrainConfig::new(SchemeId::Scheme1, 5, 10);
        c.loss_window = Some(11);
        assert!(c.validate().is_err());
    }

    #[test]
    fn batch_loss_matches_forward_only_means() {
        let cfg = tiny_model(5);
        let p = random_params(&cfg, 1);
        let train = corpus(300, 5, 2);
        let k2 = 7;
        let batch = make_batch(&train, &batch_offsets(0, 3, train.len(), 4), k2);
        let mut expected_multi = 0.0;
        let mut expected_last = 0.0;
        for lane in &batch.lanes {
            let (tape, _) = forward_sequence(&p, &cfg, &lane.inputs, &initial_state(&p)).unwrap();
            let ce: Vec<f64> = tape
                .steps
                .iter()
                .zip(&lane.targets)
                .map(|(s, &t)| cross_entropy(s.probs().unwrap(), t).unwrap())
                .collect();
            expected_multi += ce.iter().sum::<f64>() / k2 as f64;
            expected_last += ce[k2 - 1];
        }
        expected_multi /= 4.0;
        expected_last /= 4.0;

        let mut a = p.clone();
        let mut opt = AdamState::new(&cfg, AdamConfig::default());
        let multi = train_step_scheme123(
            &mut a,
            &cfg,
            &batch,
            &options(3, k2, LossSpec::multi(k2)),
            &mut opt,
        )
        .unwrap();
        assert!((multi - expected_multi).abs() < 1e-9);

        let mut b = p.clone();
        let mut opt = AdamState::new(&cfg, AdamConfig::default());
        let single = train_step_scheme123(
            &mut b,
            &cfg,
            &batch,
            &options(3, k2, LossSpec::single()),
            &mut opt,
        )
        .unwrap();
        assert!((single - expected_last).abs() < 1e-9);
    }

    #[test]
    fn scheme4_captures_state_after_k1_tokens() {
        let cfg = tiny_model(5);
        let p = random_params(&cfg, 3);
        let train = corpus(200, 5, 4);
        let (k1, k2) = (3, 6);
        for k1 in [k1, k2] {
            let batch = make_batch(&train, &batch_offsets(0, k1, train.len(), 3), k2);
            let mut lanes = LaneStates::zeros(&cfg, 3);
            let before = lanes.clone();
            let mut q = p.clone();
            let mut opt = AdamState::new(&cfg, AdamConfig::default());
            train_step_scheme4(
                &mut q,
                &cfg,
                &batch,
                &mut lanes,
                &options(k1, k2, LossSpec::multi(k2)),
                &mut opt,
            )
            .unwrap();
            for (j, lane) in batch.lanes.iter().enumerate() {
                let (_, expect) =
                    forward_sequence(&p, &cfg, &lane.inputs[..k1], &before.states[j]).unwrap();
                assert!(lanes.states[j].max_abs_diff(&expect) < 1e-12);
            }
            // Learned initial state untouched.
            assert_eq!(q.layers[0].h0, p.layers[0].h0);
            assert_eq!(q.layers[0].c0, p.layers[0].c0);
        }
    }

    #[test]
    fn trainer_resets_lane_states_each_epoch() {
        let cfg = tiny_model(4);
        let train = corpus(80, 4, 5);
        // 8 lanes over 80 tokens: stride 10, k1 5, so two batches per epoch.
        let mut tc = TrainConfig::new(SchemeId::Scheme4, 5, 5);
        tc.lanes = 8;
        tc.seed = 11;
        let mut trainer = Trainer::<f64>::new(cfg.clone(), tc, train.clone()).unwrap();

        let mut rng = Rng::new(11);
        let _ = rng.fork();
        let mut replay = BatchStream::new(train, 5, 5, 8, rng.fork()).unwrap();
        let items: Vec<_> = (0..3).map(|_| replay.next_batch()).collect();
        assert!(items[0].epoch_start && !items[1].epoch_start && items[2].epoch_start);

        trainer.step().unwrap();
        trainer.step().unwrap();
        let zero = LstmState::zeros(&cfg);
        assert!(trainer.lane_states.as_ref().unwrap().states[0].max_abs_diff(&zero) > 0.0);
        let params = trainer.params.clone();
        trainer.step().unwrap();
        let lanes = trainer.lane_states.as_ref().unwrap();
        for (lane, state) in items[2].batch.lanes.iter().zip(&lanes.states) {
            let (_, expect) = forward_sequence(&params, &cfg, &lane.inputs, &zero).unwrap();
            assert!(state.max_abs_diff(&expect) < 1e-12);
        }
    }

    #[test]
    fn draw_token_cases() {
        let mut rng = Rng::new(1);
        let point = Vector::from_vec(vec![0.0f64, 1.0, 0.0]);
        assert_eq!(draw_token(&point, &mut rng, DrawMode::Greedy), 1);
        for _ in 0..100 {
            assert_eq!(draw_token(&point, &mut rng, DrawMode::Multinomial), 1);
        }
        let tie = Vector::from_vec(vec![0.5f64, 0.5]);
        assert_eq!(draw_token(&tie, &mut rng, DrawMode::Greedy), 0);
    }

    #[test]
    fn multinomial_frequencies() {
        let mut rng = Rng::new(99);
        let y = Vector::from_vec(vec![0.25f64, 0.75]);
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| draw_token(&y, &mut rng, DrawMode::Multinomial) == 1)
            .count();
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        assert!((ones as f64 - 0.75 * n as f64).abs() < 3.0 * sigma);
    }

    #[test]
    fn sampling_edge_cases() {
        let cfg = tiny_model(4);
        let p = random_params(&cfg, 6);
        let mut rng = Rng::new(0);
        let seed = vec![0, 1, 2, 3, 0];
        assert_eq!(
            sample_windowed(&p, &cfg, &seed, 0, 5, &mut rng, DrawMode::Greedy).unwrap(),
            seed
        );
        assert_eq!(
            sample_progressive(&p, &cfg, &seed, 0, &mut rng, DrawMode::Greedy).unwrap(),
            seed
        );
        let out = sample_windowed(&p, &cfg, &seed, 9, 3, &mut rng, DrawMode::Multinomial).unwrap();
        assert_eq!(out.len(), 14);
        assert!(out.iter().all(|&t| t < 4));
        assert!(matches!(
            sample_windowed(&p, &cfg, &seed, 1, 6, &mut rng, DrawMode::Greedy),
            Err(Error::SequenceTooShort { needed: 6, got: 5 })
        ));
        assert!(sample_progressive(&p, &cfg, &[], 3, &mut rng, DrawMode::Greedy).is_err());
    }

    #[test]
    fn windowed_greedy_is_pure() {
        let cfg = tiny_model(4);
        let p = random_params(&cfg, 7);
        let seed = [1, 2, 3, 0, 1, 2];
        let a =
            sample_windowed(&p, &cfg, &seed, 12, 4, &mut Rng::new(1), DrawMode::Greedy).unwrap();
        let b =
            sample_windowed(&p, &cfg, &seed, 12, 4, &mut Rng::new(2), DrawMode::Greedy).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn first_token_agrees_between_samplers() {
        let cfg = tiny_model(5);
        let p = random_params(&cfg, 8);
        let seed = [4, 0, 2, 2, 1];
        let w = sample_windowed(
            &p,
            &cfg,
            &seed,
            1,
            seed.len(),
            &mut Rng::new(3),
            DrawMode::Greedy,
        )
        .unwrap();
        let g = sample_progressive(&p, &cfg, &seed, 1, &mut Rng::new(3), DrawMode::Greedy).unwrap();
        assert_eq!(w, g);
        let w = sample_windowed(
            &p,
            &cfg,
            &seed,
            1,
            seed.len(),
            &mut Rng::new(3),
            DrawMode::Multinomial,
        )
        .unwrap();
        let g = sample_progressive(&p, &cfg, &seed, 1, &mut Rng::new(3), DrawMode::Multinomial)
            .unwrap();
        assert_eq!(w, g);
    }
}
