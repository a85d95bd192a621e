//! Reverse pass over a [`ForwardTape`]: per-position loss weighting,
//! truncated backpropagation through time, gradient clipping and a central
//! finite-difference oracle.

use std::ops::{Deref, DerefMut, Range};

use crate::error::{Error, Result};
use crate::model::{
    forward_sequence_masked, initial_state, ForwardTape, LstmState, ModelConfig, Parameters,
    CANDIDATE, FORGET, GATES, INPUT, OUTPUT, PEEP_FORGET, PEEP_INPUT, PEEP_OUTPUT,
};
use crate::numerics::{leaky_relu_grad, matvec_t_acc, outer_acc, Real, Vector};
use crate::TokenId;

/// Gradient of a scalar loss with respect to every tensor in [`Parameters`].
/// The `h0`/`c0` slots hold the gradient with respect to the initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T>(Parameters<T>);

impl<T: Real> Gradients<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Gradients(Parameters::zeros(cfg))
    }

    pub fn into_inner(self) -> Parameters<T> {
        self.0
    }

    pub fn scale(&mut self, factor: T) {
        self.0.for_each_mut(|x| *x = *x * factor);
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        self.0.zip_apply(&other.0, |a, b| *a = *a + b);
    }

    pub fn max_abs(&self) -> T {
        self.0
            .tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0
            .tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Zeroes the initial-state slots.
    pub fn clear_initial_state(&mut self) {
        for layer in &mut self.0.layers {
            layer.h0.fill(T::zero());
            layer.c0.fill(T::zero());
        }
    }
}

impl<T> Deref for Gradients<T> {
    type Target = Parameters<T>;
    fn deref(&self) -> &Parameters<T> {
        &self.0
    }
}

impl<T> DerefMut for Gradients<T> {
    fn deref_mut(&mut self) -> &mut Parameters<T> {
        &mut self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decay {
    None,
    Linear,
    Exponential,
}

/// Which positions of a training sequence contribute to the loss, and how
/// strongly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossSpec {
    /// Number of trailing positions that carry loss (`k3`).
    pub window: usize,
    pub decay: Decay,
}

impl LossSpec {
    /// Loss on every position, equally weighted.
    pub fn multi(seq_len: usize) -> Self {
        LossSpec {
            window: seq_len,
            decay: Decay::None,
        }
    }

    /// Loss on the final position only.
    pub fn single() -> Self {
        LossSpec {
            window: 1,
            decay: Decay::None,
        }
    }
}

/// How far back gradients flow from each loss term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Horizon {
    Full,
    Steps(usize),
}

/// What the tape's initial state is with respect to training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialState {
    /// The learned `h0`/`c0`; its gradient is written to the `h0`/`c0` slots.
    Learned,
    /// A constant (a carried-over state); no gradient flows into it.
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackwardOptions<T> {
    pub horizon: Horizon,
    pub initial: InitialState,
    /// Clamp gate pre-activation gradients to `±clip` at every step.
    pub cell_clip: Option<T>,
}

impl<T> BackwardOptions<T> {
    pub fn truncated(k2: usize) -> Self {
        BackwardOptions {
            horizon: Horizon::Steps(k2),
            initial: InitialState::Learned,
            cell_clip: None,
        }
    }
}

/// `-ln y[target]`.
pub fn cross_entropy<T: Real>(y: &Vector<T>, target: TokenId) -> Result<T> {
    if target >= y.len() {
        return Err(Error::TokenOutOfRange {
            token: target,
            vocab_size: y.len(),
        });
    }
    Ok(-y[target].ln())
}

/// Per-position loss weights for a sequence of `seq_len` predictions.
///
/// Only the last `spec.window` positions are nonzero. Decay multiplies
/// position `i` by `i / (seq_len - 1)` (linear) or `exp(i - seq_len + 1)`
/// (exponential) before the window is renormalized to sum to one.
pub fn loss_weights<T: Real>(seq_len: usize, spec: LossSpec) -> Result<Vector<T>> {
    if seq_len == 0 {
        return Err(Error::EmptySequence);
    }
    if spec.window == 0 || spec.window > seq_len {
        return Err(Error::Config(format!(
            "loss window k3 = {} must lie in 1..={seq_len}",
            spec.window
        )));
    }
    let first = seq_len - spec.window;
    let mut raw = vec![0.0f64; seq_len];
    for (i, w) in raw.iter_mut().enumerate().skip(first) {
        *w = match spec.decay {
            Decay::None => 1.0,
            Decay::Linear if seq_len == 1 => 1.0,
            Decay::Linear => i as f64 / (seq_len - 1) as f64,
            Decay::Exponential => (i as f64 - seq_len as f64 + 1.0).exp(),
        };
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config("loss weights sum to zero".into()));
    }
    Ok(Vector::from_vec(
        raw.into_iter()
            .map(|w| T::from_f64_lossy(w / total))
            .collect(),
    ))
}

/// Weighted loss `Σ weights[t] · CE(y_t, targets[t])` over a tape.
pub fn weighted_loss<T: Real>(
    tape: &ForwardTape<T>,
    targets: &[TokenId],
    weights: &Vector<T>,
) -> Result<T> {
    check_lengths(tape, targets, weights)?;
    let mut loss = T::zero();
    for (t, step) in tape.steps.iter().enumerate() {
        let w = weights[t];
        if w == T::zero() {
            continue;
        }
        let y = step.probs().ok_or_else(|| missing_output(t))?;
        loss = loss + w * cross_entropy(y, targets[t])?;
    }
    Ok(loss)
}

fn missing_output(t: usize) -> Error {
    Error::LengthMismatch(format!(
        "tape has no output distribution at weighted position {t}"
    ))
}

fn check_lengths<T: Real>(
    tape: &ForwardTape<T>,
    targets: &[TokenId],
    weights: &Vector<T>,
) -> Result<()> {
    if tape.len() != targets.len() || tape.len() != weights.len() {
        return Err(Error::LengthMismatch(format!(
            "tape {}, targets {}, weights {}",
            tape.len(),
            targets.len(),
            weights.len()
        )));
    }
    Ok(())
}

/// Truncated BPTT with horizon `k2` from the learned initial state.
/// Returns fresh gradients and the weighted loss.
pub fn backward<T: Real>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    tape: &ForwardTape<T>,
    targets: &[TokenId],
    weights: &Vector<T>,
    k2: usize,
) -> Result<(Gradients<T>, T)> {
    let mut grads = Gradients::zeros(cfg);
    let loss = backward_into(
        params,
        cfg,
        tape,
        targets,
        weights,
        BackwardOptions::truncated(k2),
        &mut grads,
    )?;
    Ok((grads, loss))
}

/// Accumulates the gradient of the weighted loss into `grads` and returns
/// the loss.
///
/// When the horizon covers the whole tape this is a single reverse sweep.
/// Otherwise each loss term at position `t` is backpropagated separately
/// over steps `t + 1 - k2 ..= t`, with the state entering that window held
/// constant.
pub fn backward_into<T: Real>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    tape: &ForwardTape<T>,
    targets: &[TokenId],
    weights: &Vector<T>,
    options: BackwardOptions<T>,
    grads: &mut Gradients<T>,
) -> Result<T> {
    check_lengths(tape, targets, weights)?;
    for &t in targets {
        if t >= cfg.vocab_size {
            return Err(Error::TokenOutOfRange {
                token: t,
                vocab_size: cfg.vocab_size,
            });
        }
    }
    let loss = weighted_loss(tape, targets, weights)?;
    let n = tape.len();
    let horizon = match options.horizon {
        Horizon::Full => n,
        Horizon::Steps(0) => {
            return Err(Error::Config("backpropagation horizon must be >= 1".into()))
        }
        Horizon::Steps(k) => k.min(n),
    };
    if horizon >= n {
        reverse_sweep(
            params,
            cfg,
            tape,
            targets,
            weights,
            0..n,
            &|_| true,
            options,
            grads,
        );
    } else {
        for t in (0..n).filter(|&t| weights[t] != T::zero()) {
            let start = (t + 1).saturating_sub(horizon);
            reverse_sweep(
                params,
                cfg,
                tape,
                targets,
                weights,
                start..t + 1,
                &|p| p == t,
                options,
                grads,
            );
        }
    }
    Ok(loss)
}

/// One reverse sweep over `range`, with loss terms at positions accepted by
/// `has_loss`. Gradient reaching the state before `range.start` is written
/// to the `h0`/`c0` slots only when the range starts at the beginning of the
/// tape and the initial state is learned.
#[allow(clippy::too_many_arguments)]
fn reverse_sweep<T: Real>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    tape: &ForwardTape<T>,
    targets: &[TokenId],
    weights: &Vector<T>,
    range: Range<usize>,
    has_loss: &dyn Fn(usize) -> bool,
    options: BackwardOptions<T>,
    grads: &mut Gradients<T>,
) {
    let g = cfg.hidden_size;
    let num_layers = cfg.num_layers;
    let leak = T::from_f64_lossy(cfg.leakiness);
    let mut carry_h = vec![vec![T::zero(); g]; num_layers];
    let mut carry_c = vec![vec![T::zero(); g]; num_layers];
    let mut from_above = vec![T::zero(); g];
    let mut dlogits = vec![T::zero(); cfg.vocab_size];
    let mut d_dense = vec![T::zero(); cfg.dense_size];
    let mut da: [Vec<T>; GATES] = std::array::from_fn(|_| vec![T::zero(); g]);

    for t in range.clone().rev() {
        let step = &tape.steps[t];
        from_above.iter_mut().for_each(|x| *x = T::zero());
        let w = weights[t];
        if w != T::zero() && has_loss(t) {
            let head = step.head.as_ref().expect("checked by weighted_loss");
            let top_h = step.layers[num_layers - 1].hidden.as_slice();
            for (k, d) in dlogits.iter_mut().enumerate() {
                let indicator = if k == targets[t] { T::one() } else { T::zero() };
                *d = w * (head.probs[k] - indicator);
            }
            outer_acc(&mut grads.head.weight, &dlogits, head.dense_out.as_slice());
            for (b, &d) in grads.head.bias.as_mut_slice().iter_mut().zip(&dlogits) {
                *b = *b + d;
            }
            d_dense.iter_mut().for_each(|x| *x = T::zero());
            matvec_t_acc(&params.head.weight, &dlogits, &mut d_dense);
            for (d, &z) in d_dense.iter_mut().zip(head.dense_pre.as_slice()) {
                *d = *d * leaky_relu_grad(z, leak);
            }
            outer_acc(&mut grads.dense.weight, &d_dense, top_h);
            for (b, &d) in grads.dense.bias.as_mut_slice().iter_mut().zip(&d_dense) {
                *b = *b + d;
            }
            matvec_t_acc(&params.dense.weight, &d_dense, &mut from_above);
        }

        for l in (0..num_layers).rev() {
            let cache = &step.layers[l];
            let layer = &params.layers[l];
            let (h_prev, c_prev) = tape.prev_state(t, l);
            let (wi, wf, wo) = (
                layer.peepholes[PEEP_INPUT].as_slice(),
                layer.peepholes[PEEP_FORGET].as_slice(),
                layer.peepholes[PEEP_OUTPUT].as_slice(),
            );
            let mut dc_prev = vec![T::zero(); g];
            for j in 0..g {
                let dh = carry_h[l][j] + from_above[j];
                let o = cache.output_gate[j];
                let i = cache.input_gate[j];
                let f = cache.forget_gate[j];
                let cand = cache.candidate[j];
                let tc = cache.cell_tanh[j];
                let d_o = dh * tc;
                let dc = carry_c[l][j] + dh * o * (T::one() - tc * tc);
                let d_f = dc * c_prev[j];
                let d_i = dc * cand;
                let d_cand = dc * i;
                da[INPUT][j] = d_i * i * (T::one() - i);
                da[FORGET][j] = d_f * f * (T::one() - f);
                da[CANDIDATE][j] = d_cand * (T::one() - cand * cand);
                da[OUTPUT][j] = d_o * o * (T::one() - o);
                if let Some(clip) = options.cell_clip {
                    for gate in da.iter_mut() {
                        gate[j] = gate[j].max(-clip).min(clip);
                    }
                }
                dc_prev[j] =
                    dc * f + da[INPUT][j] * wi[j] + da[FORGET][j] * wf[j] + da[OUTPUT][j] * wo[j];
            }
            let gl = &mut grads.layers[l];
            for j in 0..g {
                let cp = c_prev[j];
                gl.peepholes[PEEP_INPUT][j] = gl.peepholes[PEEP_INPUT][j] + da[INPUT][j] * cp;
                gl.peepholes[PEEP_FORGET][j] = gl.peepholes[PEEP_FORGET][j] + da[FORGET][j] * cp;
                gl.peepholes[PEEP_OUTPUT][j] = gl.peepholes[PEEP_OUTPUT][j] + da[OUTPUT][j] * cp;
            }
            let mut dh_prev = vec![T::zero(); g];
            let mut dx = if l > 0 {
                vec![T::zero(); g]
            } else {
                Vec::new()
            };
            for k in 0..GATES {
                for (b, &d) in gl.biases[k].as_mut_slice().iter_mut().zip(&da[k]) {
                    *b = *b + d;
                }
                outer_acc(&mut gl.recurrent_weights[k], &da[k], h_prev);
                matvec_t_acc(&layer.recurrent_weights[k], &da[k], &mut dh_prev);
                if l == 0 {
                    let u = &mut gl.input_weights[k];
                    let token = step.token;
                    for (r, &d) in da[k].iter().enumerate() {
                        let v = u.get(r, token) + d;
                        u.set(r, token, v);
                    }
                } else {
                    let x = step.layers[l - 1].hidden.as_slice();
                    outer_acc(&mut gl.input_weights[k], &da[k], x);
                    matvec_t_acc(&layer.input_weights[k], &da[k], &mut dx);
                }
            }
            carry_h[l] = dh_prev;
            carry_c[l] = dc_prev;
            if l > 0 {
                from_above = dx;
            }
        }
    }

    if range.start == 0 && options.initial == InitialState::Learned {
        for (l, gl) in grads.layers.iter_mut().enumerate() {
            for j in 0..g {
                gl.h0[j] = gl.h0[j] + carry_h[l][j];
                gl.c0[j] = gl.c0[j] + carry_c[l][j];
            }
        }
    }
}

/// Clamps every entry to `[-threshold, threshold]`.
pub fn clip_elementwise<T: Real>(grads: &mut Gradients<T>, threshold: T) {
    assert!(threshold > T::zero(), "clip threshold must be positive");
    grads.for_each_mut(|x| *x = x.max(-threshold).min(threshold));
}

/// Loss of `tokens`/`targets` under `weights`, starting from `start` (or the
/// learned initial state when `None`).
pub fn sequence_loss<T: Real>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    tokens: &[TokenId],
    targets: &[TokenId],
    weights: &Vector<T>,
    start: Option<&LstmState<T>>,
) -> Result<T> {
    let state = match start {
        Some(s) => s.clone(),
        None => initial_state(params),
    };
    let (tape, _) =
        forward_sequence_masked(params, cfg, tokens, &state, |t| weights[t] != T::zero())?;
    weighted_loss(&tape, targets, weights)
}

/// Central differences `(L(w + ε) - L(w - ε)) / 2ε` for every scalar,
/// starting each evaluation from the learned initial state.
pub fn finite_diff_gradient<T: Real>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    tokens: &[TokenId],
    targets: &[TokenId],
    weights: &Vector<T>,
    eps: T,
) -> Result<Gradients<T>> {
    let mut probe = params.clone();
    let mut grads = Gradients::zeros(cfg);
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let two_eps = eps + eps;
    for (ti, &len) in sizes.iter().enumerate() {
        for k in 0..len {
            let original = probe.tensors()[ti][k];
            probe.tensors_mut()[ti][k] = original + eps;
            let plus = sequence_loss(&probe, cfg, tokens, targets, weights, None)?;
            probe.tensors_mut()[ti][k] = original - eps;
            let minus = sequence_loss(&probe, cfg, tokens, targets, weights, None)?;
            probe.tensors_mut()[ti][k] = original;
            grads.tensors_mut()[ti][k] = (plus - minus) / two_eps;
        }
    }
    Ok(grads)
}

/// Largest relative error between two gradients, skipping entries where both
/// magnitudes are below `floor`.
pub fn max_relative_error<T: Real>(a: &Gradients<T>, b: &Gradients<T>, floor: f64) -> f64 {
    let mut worst = 0.0f64;
    for (x, y) in a.tensors().iter().zip(b.tensors()) {
        for (&p, &q) in x.iter().zip(y) {
            let (p, q) = (p.as_f64(), q.as_f64());
            if p.abs() < floor && q.abs() < floor {
                continue;
            }
            let rel = (p - q).abs() / p.abs().max(q.abs());
            worst = worst.max(rel);
        }
    }
    worst
}
