//! Stacked peephole LSTM followed by a leaky-ReLU dense layer and a softmax
//! head, plus parameter storage and recurrent state.
//!
//! Gate tensors are stored in the order input, forget, candidate, output.
//! Peepholes exist only for the three sigmoid gates (input, forget, output)
//! and all three read the previous cell state:
//!
//! ```text
//! i = σ(U_i x + W_i h' + w_i ⊙ c' + b_i)
//! f = σ(U_f x + W_f h' + w_f ⊙ c' + b_f)
//! c = f ⊙ c' + i ⊙ tanh(U_c x + W_c h' + b_c)
//! o = σ(U_o x + W_o h' + w_o ⊙ c' + b_o)
//! h = o ⊙ tanh(c)
//! ```

use crate::error::{Error, Result};
use crate::numerics::{
    glorot_uniform_init, leaky_relu, matvec_acc, orthogonal_init, sigmoid, softmax_in_place,
    Matrix, Real, Rng, Vector,
};
use crate::TokenId;

pub const GATES: usize = 4;
pub const INPUT: usize = 0;
pub const FORGET: usize = 1;
pub const CANDIDATE: usize = 2;
pub const OUTPUT: usize = 3;

/// Index into [`LstmLayer::peepholes`] for each sigmoid gate.
pub const PEEP_INPUT: usize = 0;
pub const PEEP_FORGET: usize = 1;
pub const PEEP_OUTPUT: usize = 2;

pub const DEFAULT_DENSE_SIZE: usize = 1024;
pub const DEFAULT_LEAKINESS: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub num_layers: usize,
    pub hidden_size: usize,
    pub dense_size: usize,
    pub leakiness: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, num_layers: usize, hidden_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            num_layers,
            hidden_size,
            dense_size: DEFAULT_DENSE_SIZE,
            leakiness: DEFAULT_LEAKINESS,
        }
    }

    pub fn with_dense_size(mut self, dense_size: usize) -> Self {
        self.dense_size = dense_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("num_layers", self.num_layers),
            ("hidden_size", self.hidden_size),
            ("dense_size", self.dense_size),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.leakiness >= 0.0 && self.leakiness.is_finite()) {
            return Err(Error::Config(format!(
                "leakiness must be finite and >= 0, got {}",
                self.leakiness
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.vocab_size
        } else {
            self.hidden_size
        }
    }

    /// Number of scalars in [`Parameters`] for this configuration.
    pub fn parameter_count(&self) -> usize {
        let g = self.hidden_size;
        let lstm: usize = (0..self.num_layers)
            .map(|l| GATES * (g * self.input_dim(l) + g * g + g) + 3 * g + 2 * g)
            .sum();
        lstm + (self.dense_size * g + self.dense_size)
            + (self.vocab_size * self.dense_size + self.vocab_size)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer<T> {
    /// `U_*`, each `hidden × input_dim`.
    pub input_weights: [Matrix<T>; GATES],
    /// `W_*`, each `hidden × hidden`.
    pub recurrent_weights: [Matrix<T>; GATES],
    /// `w_i`, `w_f`, `w_o`.
    pub peepholes: [Vector<T>; 3],
    pub biases: [Vector<T>; GATES],
    /// Learned initial hidden state.
    pub h0: Vector<T>,
    /// Learned initial cell state.
    pub c0: Vector<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Vector<T>,
}

/// All trainable tensors of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T> {
    pub layers: Vec<LstmLayer<T>>,
    /// Hidden dense layer (leaky ReLU).
    pub dense: Dense<T>,
    /// Output layer (softmax over the vocabulary).
    pub head: Dense<T>,
}

impl<T: Real> Parameters<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let g = cfg.hidden_size;
        let layers = (0..cfg.num_layers)
            .map(|l| {
                let d = cfg.input_dim(l);
                LstmLayer {
                    input_weights: std::array::from_fn(|_| Matrix::zeros(g, d)),
                    recurrent_weights: std::array::from_fn(|_| Matrix::zeros(g, g)),
                    peepholes: std::array::from_fn(|_| Vector::zeros(g)),
                    biases: std::array::from_fn(|_| Vector::zeros(g)),
                    h0: Vector::zeros(g),
                    c0: Vector::zeros(g),
                }
            })
            .collect();
        Parameters {
            layers,
            dense: Dense {
                weight: Matrix::zeros(cfg.dense_size, g),
                bias: Vector::zeros(cfg.dense_size),
            },
            head: Dense {
                weight: Matrix::zeros(cfg.vocab_size, cfg.dense_size),
                bias: Vector::zeros(cfg.vocab_size),
            },
        }
    }

    /// Orthogonal LSTM matrices, Glorot-uniform dense layers, everything else
    /// zero.
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(cfg);
        let g = cfg.hidden_size;
        for (l, layer) in p.layers.iter_mut().enumerate() {
            for m in layer.input_weights.iter_mut() {
                *m = orthogonal_init(g, cfg.input_dim(l), rng);
            }
            for m in layer.recurrent_weights.iter_mut() {
                *m = orthogonal_init(g, g, rng);
            }
        }
        p.dense.weight = glorot_uniform_init(cfg.dense_size, g, rng);
        p.head.weight = glorot_uniform_init(cfg.vocab_size, cfg.dense_size, rng);
        p
    }

    /// Tensors in declaration order: per layer `U_i..U_o`, `W_i..W_o`,
    /// `w_i, w_f, w_o`, `b_i..b_o`, `h0`, `c0`; then dense weight and bias,
    /// then head weight and bias.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 17 + 4);
        for layer in &self.layers {
            out.extend(layer.input_weights.iter().map(|m| m.as_slice()));
            out.extend(layer.recurrent_weights.iter().map(|m| m.as_slice()));
            out.extend(layer.peepholes.iter().map(|v| v.as_slice()));
            out.extend(layer.biases.iter().map(|v| v.as_slice()));
            out.push(layer.h0.as_slice());
            out.push(layer.c0.as_slice());
        }
        out.push(self.dense.weight.as_slice());
        out.push(self.dense.bias.as_slice());
        out.push(self.head.weight.as_slice());
        out.push(self.head.bias.as_slice());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 17 + 4);
        for layer in &mut self.layers {
            out.extend(layer.input_weights.iter_mut().map(|m| m.as_mut_slice()));
            out.extend(layer.recurrent_weights.iter_mut().map(|m| m.as_mut_slice()));
            out.extend(layer.peepholes.iter_mut().map(|v| v.as_mut_slice()));
            out.extend(layer.biases.iter_mut().map(|v| v.as_mut_slice()));
            out.push(layer.h0.as_mut_slice());
            out.push(layer.c0.as_mut_slice());
        }
        out.push(self.dense.weight.as_mut_slice());
        out.push(self.dense.bias.as_mut_slice());
        out.push(self.head.weight.as_mut_slice());
        out.push(self.head.bias.as_mut_slice());
        out
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Applies `f(param, other)` to every scalar pair in declaration order.
    pub fn zip_apply(&mut self, other: &Parameters<T>, mut f: impl FnMut(&mut T, T)) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            debug_assert_eq!(a.len(), b.len());
            for (x, &y) in a.iter_mut().zip(b) {
                f(x, y);
            }
        }
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut T)) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(&mut f);
        }
    }

    pub fn fill(&mut self, value: T) {
        self.for_each_mut(|x| *x = value);
    }

    /// True when every tensor has the shape `cfg` prescribes.
    pub fn matches(&self, cfg: &ModelConfig) -> bool {
        let reference = Parameters::<T>::zeros(cfg);
        self.layers.len() == reference.layers.len()
            && self
                .tensors()
                .iter()
                .zip(reference.tensors())
                .all(|(a, b)| a.len() == b.len())
            && self.dense.weight.shape() == reference.dense.weight.shape()
            && self.head.weight.shape() == reference.head.weight.shape()
    }
}

/// Hidden and cell vectors of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState<T> {
    pub h: Vector<T>,
    pub c: Vector<T>,
}

/// Recurrent state of the whole stack at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    pub layers: Vec<LayerState<T>>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        LstmState {
            layers: (0..cfg.num_layers)
                .map(|_| LayerState {
                    h: Vector::zeros(cfg.hidden_size),
                    c: Vector::zeros(cfg.hidden_size),
                })
                .collect(),
        }
    }

    /// Hidden vector of the top layer.
    pub fn top_hidden(&self) -> &Vector<T> {
        &self.layers.last().expect("at least one layer").h
    }

    pub fn max_abs_diff(&self, other: &LstmState<T>) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .flat_map(|(a, b)| {
                a.h.as_slice()
                    .iter()
                    .zip(b.h.as_slice())
                    .chain(a.c.as_slice().iter().zip(b.c.as_slice()))
            })
            .map(|(x, y)| (x.as_f64() - y.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-layer activations cached by one forward step.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerCache<T> {
    pub input_gate: Vector<T>,
    pub forget_gate: Vector<T>,
    pub output_gate: Vector<T>,
    /// `tanh` of the candidate pre-activation.
    pub candidate: Vector<T>,
    pub cell: Vector<T>,
    pub cell_tanh: Vector<T>,
    pub hidden: Vector<T>,
}

/// Dense and softmax activations of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadCache<T> {
    pub dense_pre: Vector<T>,
    pub dense_out: Vector<T>,
    pub probs: Vector<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepCache<T> {
    pub token: TokenId,
    pub layers: Vec<LayerCache<T>>,
    /// Absent when the step was run without computing its output
    /// distribution.
    pub head: Option<HeadCache<T>>,
}

impl<T: Real> StepCache<T> {
    pub fn state(&self) -> LstmState<T> {
        LstmState {
            layers: self
                .layers
                .iter()
                .map(|l| LayerState {
                    h: l.hidden.clone(),
                    c: l.cell.clone(),
                })
                .collect(),
        }
    }

    pub fn probs(&self) -> Option<&Vector<T>> {
        self.head.as_ref().map(|h| &h.probs)
    }
}

/// Activations recorded by a forward pass, consumed by the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTape<T> {
    pub initial: LstmState<T>,
    pub steps: Vec<StepCache<T>>,
}

impl<T: Real> ForwardTape<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// State after the first `n` tokens; `n == 0` gives the initial state.
    pub fn state_after(&self, n: usize) -> LstmState<T> {
        if n == 0 {
            self.initial.clone()
        } else {
            self.steps[n - 1].state()
        }
    }

    /// `(h, c)` entering layer `layer` at step `t`.
    pub(crate) fn prev_state(&self, t: usize, layer: usize) -> (&[T], &[T]) {
        if t == 0 {
            let s = &self.initial.layers[layer];
            (s.h.as_slice(), s.c.as_slice())
        } else {
            let s = &self.steps[t - 1].layers[layer];
            (s.hidden.as_slice(), s.cell.as_slice())
        }
    }
}

/// Input of one LSTM layer: a one-hot token (first layer) or the hidden
/// vector of the layer below.
#[derive(Clone, Copy, Debug)]
pub enum LayerInput<'a, T> {
    Token(TokenId),
    Dense(&'a [T]),
}

fn check_token(token: TokenId, vocab_size: usize) -> Result<()> {
    if token >= vocab_size {
        Err(Error::TokenOutOfRange { token, vocab_size })
    } else {
        Ok(())
    }
}

pub fn one_hot<T: Real>(token: TokenId, size: usize) -> Result<Vector<T>> {
    check_token(token, size)?;
    let mut v = Vector::zeros(size);
    v[token] = T::one();
    Ok(v)
}

pub(crate) fn layer_forward<T: Real>(
    layer: &LstmLayer<T>,
    input: LayerInput<'_, T>,
    h_prev: &[T],
    c_prev: &[T],
) -> LayerCache<T> {
    let g = h_prev.len();
    let mut pre: [Vec<T>; GATES] = std::array::from_fn(|k| layer.biases[k].as_slice().to_vec());
    for k in 0..GATES {
        match input {
            LayerInput::Token(t) => {
                let u = &layer.input_weights[k];
                for (r, p) in pre[k].iter_mut().enumerate() {
                    *p = *p + u.get(r, t);
                }
            }
            LayerInput::Dense(x) => matvec_acc(&layer.input_weights[k], x, &mut pre[k]),
        }
        matvec_acc(&layer.recurrent_weights[k], h_prev, &mut pre[k]);
    }
    let [pi, pf, pc, po] = pre;
    let (wi, wf, wo) = (
        layer.peepholes[PEEP_INPUT].as_slice(),
        layer.peepholes[PEEP_FORGET].as_slice(),
        layer.peepholes[PEEP_OUTPUT].as_slice(),
    );
    let mut input_gate = Vec::with_capacity(g);
    let mut forget_gate = Vec::with_capacity(g);
    let mut output_gate = Vec::with_capacity(g);
    let mut candidate = Vec::with_capacity(g);
    let mut cell = Vec::with_capacity(g);
    let mut cell_tanh = Vec::with_capacity(g);
    let mut hidden = Vec::with_capacity(g);
    for j in 0..g {
        let cp = c_prev[j];
        let i = sigmoid(pi[j] + wi[j] * cp);
        let f = sigmoid(pf[j] + wf[j] * cp);
        let o = sigmoid(po[j] + wo[j] * cp);
        let cand = pc[j].tanh();
        let c = f * cp + i * cand;
        let tc = c.tanh();
        input_gate.push(i);
        forget_gate.push(f);
        output_gate.push(o);
        candidate.push(cand);
        cell.push(c);
        cell_tanh.push(tc);
        hidden.push(o * tc);
    }
    LayerCache {
        input_gate: Vector::from_vec(input_gate),
        forget_gate: Vector::from_vec(forget_gate),
        output_gate: Vector::from_vec(output_gate),
        candidate: Vector::from_vec(candidate),
        cell: Vector::from_vec(cell),
        cell_tanh: Vector::from_vec(cell_tanh),
        hidden: Vector::from_vec(hidden),
    }
}

/// One LSTM cell update for `layer` with a dense input vector.
pub fn lstm_step<T: Real>(
    params: &Parameters<T>,
    layer: usize,
    x: &Vector<T>,
    h_prev: &Vector<T>,
    c_prev: &Vector<T>,
) -> (Vector<T>, Vector<T>, LayerCache<T>) {
    let cache = layer_forward(
        &params.layers[layer],
        LayerInput::Dense(x.as_slice()),
        h_prev.as_slice(),
        c_prev.as_slice(),
    );
    (cache.hidden.clone(), cache.cell.clone(), cache)
}

pub(crate) fn head_forward<T: Real>(
    params: &Parameters<T>,
    leakiness: T,
    top_hidden: &[T],
) -> HeadCache<T> {
    let mut dense_pre = params.dense.bias.as_slice().to_vec();
    matvec_acc(&params.dense.weight, top_hidden, &mut dense_pre);
    let dense_out: Vec<T> = dense_pre
        .iter()
        .map(|&z| leaky_relu(z, leakiness))
        .collect();
    let mut logits = params.head.bias.as_slice().to_vec();
    matvec_acc(&params.head.weight, &dense_out, &mut logits);
    softmax_in_place(&mut logits);
    HeadCache {
        dense_pre: Vector::from_vec(dense_pre),
        dense_out: Vector::from_vec(dense_out),
        probs: Vector::from_vec(logits),
    }
}

/// Advances the recurrent stack by one token without touching the head.
pub(crate) fn recurrent_step<T: Real>(
    params: &Parameters<T>,
    token: TokenId,
    prev: &[(&[T], &[T])],
) -> Vec<LayerCache<T>> {
    let mut caches: Vec<LayerCache<T>> = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let input = match caches.last() {
            None => LayerInput::Token(token),
            Some(below) => LayerInput::Dense(below.hidden.as_slice()),
        };
        let (h, c) = prev[l];
        caches.push(layer_forward(layer, input, h, c));
    }
    caches
}

fn state_refs<T: Real>(state: &LstmState<T>) -> Vec<(&[T], &[T])> {
    state
        .layers
        .iter()
        .map(|s| (s.h.as_slice(), s.c.as_slice()))
        .collect()
}

fn check_state<T: Real>(cfg: &ModelConfig, state: &LstmState<T>) -> Result<()> {
    if state.layers.len() != cfg.num_layers
        || state
            .layers
            .iter()
            .any(|s| s.h.len() != cfg.hidden_size || s.c.len() != cfg.hidden_size)
    {
        return Err(Error::LengthMismatch(format!(
            "state does not match {} layers of width {}",
            cfg.num_layers, cfg.hidden_size
        )));
    }
    Ok(())
}

/// Feeds one token through the stack and the head.
pub fn forward_step<T: Real>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    token: TokenId,
    state: &LstmState<T>,
) -> Result<(Vector<T>, LstmState<T>, StepCache<T>)> {
    check_token(token, cfg.vocab_size)?;
    check_state(cfg, state)?;
    let layers = recurrent_step(params, token, &state_refs(state));
    let top = &layers.last().expect("at least one layer").hidden;
    let head = head_forward(params, T::from_f64_lossy(cfg.leakiness), top.as_slice());
    let cache = StepCache {
        token,
        layers,
        head: Some(head),
    };
    let y = cache.probs().expect("head computed").clone();
    Ok((y, cache.state(), cache))
}

pub fn forward_sequence<T: Real>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    tokens: &[TokenId],
    state: &LstmState<T>,
) -> Result<(ForwardTape<T>, LstmState<T>)> {
    forward_sequence_masked(params, cfg, tokens, state, |_| true)
}

/// Like [`forward_sequence`] but only computes the output distribution at
/// positions where `needs_output(t)` holds.
pub fn forward_sequence_masked<T: Real>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    tokens: &[TokenId],
    state: &LstmState<T>,
    needs_output: impl Fn(usize) -> bool,
) -> Result<(ForwardTape<T>, LstmState<T>)> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    for &t in tokens {
        check_token(t, cfg.vocab_size)?;
    }
    check_state(cfg, state)?;
    let leak = T::from_f64_lossy(cfg.leakiness);
    let mut steps: Vec<StepCache<T>> = Vec::with_capacity(tokens.len());
    for (t, &token) in tokens.iter().enumerate() {
        let layers = match steps.last() {
            None => recurrent_step(params, token, &state_refs(state)),
            Some(prev) => {
                let refs: Vec<(&[T], &[T])> = prev
                    .layers
                    .iter()
                    .map(|l| (l.hidden.as_slice(), l.cell.as_slice()))
                    .collect();
                recurrent_step(params, token, &refs)
            }
        };
        let head = needs_output(t).then(|| {
            head_forward(
                params,
                leak,
                layers.last().expect("layer").hidden.as_slice(),
            )
        });
        steps.push(StepCache {
            token,
            layers,
            head,
        });
    }
    let out = steps.last().expect("non-empty").state();
    Ok((
        ForwardTape {
            initial: state.clone(),
            steps,
        },
        out,
    ))
}

/// Advances `state` through `tokens` without recording a tape or computing
/// outputs.
pub fn advance_state<T: Real>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    tokens: &[TokenId],
    state: &LstmState<T>,
) -> Result<LstmState<T>> {
    check_state(cfg, state)?;
    let mut current = state.clone();
    for &token in tokens {
        check_token(token, cfg.vocab_size)?;
        let layers = recurrent_step(params, token, &state_refs(&current));
        current = LstmState {
            layers: layers
                .into_iter()
                .map(|l| LayerState {
                    h: l.hidden,
                    c: l.cell,
                })
                .collect(),
        };
    }
    Ok(current)
}

/// Output distribution after feeding `token` from `state`, plus the new
/// state.
pub fn predict<T: Real>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    token: TokenId,
    state: &LstmState<T>,
) -> Result<(Vector<T>, LstmState<T>)> {
    let (y, next, _) = forward_step(params, cfg, token, state)?;
    Ok((y, next))
}

/// The learned `(h0, c0)` of every layer, copied.
pub fn initial_state<T: Real>(params: &Parameters<T>) -> LstmState<T> {
    LstmState {
        layers: params
            .layers
            .iter()
            .map(|l| LayerState {
                h: l.h0.clone(),
                c: l.c0.clone(),
            })
            .collect(),
    }
}
