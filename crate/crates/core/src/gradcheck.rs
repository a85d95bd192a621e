//! Finite-difference checks of the analytic gradient on random tiny models.
//!
//! Plain two-point central differences in `f64` carry an absolute roundoff
//! error near `1e-11`, which is already a relative error above `1e-4` for
//! gradient entries near `1e-8`. The check therefore differentiates a
//! separate scalar implementation of the loss with an eighth-order central
//! stencil and a larger step. To keep the larger step from straddling a
//! leaky-ReLU kink, the perturbed evaluations reuse the activation pattern of
//! the unperturbed point; that function agrees with the loss in a
//! neighbourhood of the point, so the two share a derivative there.

use crate::bptt::{backward, loss_weights, max_relative_error, Decay, Gradients, LossSpec};
use crate::error::Result;
use crate::model::{forward_sequence, initial_state, ModelConfig, Parameters};
use crate::numerics::Rng;
use crate::TokenId;

pub const TOLERANCE: f64 = 1e-4;
/// Entries where both gradients are smaller than this are skipped.
pub const FLOOR: f64 = 1e-8;
pub const STEP: f64 = 1e-2;

/// Eighth-order central-difference weights for offsets 1..=4.
const STENCIL: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];

/// Which dense units are on the positive side, in evaluation order.
pub enum Activations<'a> {
    Record(&'a mut Vec<bool>),
    Replay(&'a [bool]),
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `Σ_t weights[t] · -ln p(targets[t])`, computed straight from the
/// equations. `bump` adds a value to one scalar, addressed as
/// `(tensor, index)` in declaration order.
pub fn reference_loss(
    params: &Parameters<f64>,
    cfg: &ModelConfig,
    tokens: &[TokenId],
    targets: &[TokenId],
    weights: &[f64],
    bump: Option<(usize, usize, f64)>,
    mut activations: Activations<'_>,
) -> f64 {
    let mut p: Vec<Vec<f64>> = params.tensors().iter().map(|t| t.to_vec()).collect();
    if let Some((t, k, delta)) = bump {
        p[t][k] += delta;
    }
    let g = cfg.hidden_size;
    let r = cfg.num_layers;
    let base = |l: usize| 17 * l;
    let mut unit = 0;

    let mut h: Vec<Vec<f64>> = (0..r).map(|l| p[base(l) + 15].clone()).collect();
    let mut c: Vec<Vec<f64>> = (0..r).map(|l| p[base(l) + 16].clone()).collect();
    let mut loss = 0.0;
    for (t, &token) in tokens.iter().enumerate() {
        let mut below: Vec<f64> = Vec::new();
        for l in 0..r {
            let b0 = base(l);
            let in_dim = if l == 0 { cfg.vocab_size } else { g };
            let mut pre = [vec![0.0; g], vec![0.0; g], vec![0.0; g], vec![0.0; g]];
            for (k, pre_k) in pre.iter_mut().enumerate() {
                let u = &p[b0 + k];
                let w = &p[b0 + 4 + k];
                let b = &p[b0 + 11 + k];
                for j in 0..g {
                    let mut s = b[j];
                    if l == 0 {
                        s += u[j * in_dim + token];
                    } else {
                        for m in 0..in_dim {
                            s += u[j * in_dim + m] * below[m];
                        }
                    }
                    for m in 0..g {
                        s += w[j * g + m] * h[l][m];
                    }
                    pre_k[j] = s;
                }
            }
            let (wi, wf, wo) = (&p[b0 + 8], &p[b0 + 9], &p[b0 + 10]);
            let mut new_h = vec![0.0; g];
            let mut new_c = vec![0.0; g];
            for j in 0..g {
                let cp = c[l][j];
                let i = sigmoid(pre[0][j] + wi[j] * cp);
                let f = sigmoid(pre[1][j] + wf[j] * cp);
                let cand = pre[2][j].tanh();
                let o = sigmoid(pre[3][j] + wo[j] * cp);
                new_c[j] = f * cp + i * cand;
                new_h[j] = o * new_c[j].tanh();
            }
            h[l] = new_h;
            c[l] = new_c;
            below = h[l].clone();
        }
        if weights[t] == 0.0 {
            continue;
        }
        let (dw, db, hw, hb) = (&p[17 * r], &p[17 * r + 1], &p[17 * r + 2], &p[17 * r + 3]);
        let mut dense = vec![0.0; cfg.dense_size];
        for (j, a) in dense.iter_mut().enumerate() {
            let mut z = db[j];
            for m in 0..g {
                z += dw[j * g + m] * below[m];
            }
            let positive = match &mut activations {
                Activations::Record(out) => {
                    out.push(z >= 0.0);
                    z >= 0.0
                }
                Activations::Replay(pattern) => pattern[unit],
            };
            unit += 1;
            *a = if positive { z } else { cfg.leakiness * z };
        }
        let logits: Vec<f64> = (0..cfg.vocab_size)
            .map(|k| {
                let row = &hw[k * cfg.dense_size..(k + 1) * cfg.dense_size];
                hb[k] + row.iter().zip(&dense).map(|(w, a)| w * a).sum::<f64>()
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
        loss += weights[t] * (sum.ln() + max - logits[targets[t]]);
    }
    loss
}

/// Eighth-order central differences of [`reference_loss`] with the
/// activation pattern held at that of `params`.
pub fn reference_gradient(
    params: &Parameters<f64>,
    cfg: &ModelConfig,
    tokens: &[TokenId],
    targets: &[TokenId],
    weights: &[f64],
    step: f64,
) -> Gradients<f64> {
    let mut pattern = Vec::new();
    reference_loss(
        params,
        cfg,
        tokens,
        targets,
        weights,
        None,
        Activations::Record(&mut pattern),
    );
    let mut grads = Gradients::zeros(cfg);
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut out = grads.tensors_mut();
    for (ti, &len) in sizes.iter().enumerate() {
        for k in 0..len {
            let mut d = 0.0;
            for (n, &coef) in STENCIL.iter().enumerate() {
                let off = step * (n + 1) as f64;
                let eval = |delta: f64| {
                    reference_loss(
                        params,
                        cfg,
                        tokens,
                        targets,
                        weights,
                        Some((ti, k, delta)),
                        Activations::Replay(&pattern),
                    )
                };
                d += coef * (eval(off) - eval(-off));
            }
            out[ti][k] = d / step;
        }
    }
    drop(out);
    grads
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckCase {
    pub model: ModelConfig,
    pub params: Parameters<f64>,
    pub tokens: Vec<TokenId>,
    pub targets: Vec<TokenId>,
    pub loss: LossSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub model: ModelConfig,
    pub seq_len: usize,
    pub loss: LossSpec,
    pub max_relative_error: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < TOLERANCE
    }
}

/// A model with `|V| <= 8`, hidden and dense width `<= 8`, at most two
/// layers, every parameter (initial state included) uniform in
/// `[-0.5, 0.5]`, and a random loss window and decay over at most 10 steps.
pub fn random_case(rng: &mut Rng) -> GradcheckCase {
    let vocab = 2 + rng.below(7);
    let layers = 1 + rng.below(2);
    let hidden = 1 + rng.below(8);
    let dense = 1 + rng.below(8);
    let model = ModelConfig::new(vocab, layers, hidden).with_dense_size(dense);
    let mut params = Parameters::<f64>::zeros(&model);
    params.for_each_mut(|x| *x = rng.uniform_range(-0.5, 0.5));
    let len = 1 + rng.below(10);
    let tokens = (0..len).map(|_| rng.below(vocab)).collect();
    let targets = (0..len).map(|_| rng.below(vocab)).collect();
    let decay = [Decay::None, Decay::Linear, Decay::Exponential][rng.below(3)];
    let loss = LossSpec {
        window: 1 + rng.below(len),
        decay,
    };
    GradcheckCase {
        model,
        params,
        tokens,
        targets,
        loss,
    }
}

pub fn check_case(case: &GradcheckCase) -> Result<GradcheckReport> {
    let weights = loss_weights::<f64>(case.tokens.len(), case.loss)?;
    let start = initial_state(&case.params);
    let (tape, _) = forward_sequence(&case.params, &case.model, &case.tokens, &start)?;
    let (analytic, _) = backward(
        &case.params,
        &case.model,
        &tape,
        &case.targets,
        &weights,
        case.tokens.len(),
    )?;
    let numeric = reference_gradient(
        &case.params,
        &case.model,
        &case.tokens,
        &case.targets,
        weights.as_slice(),
        STEP,
    );
    Ok(GradcheckReport {
        model: case.model.clone(),
        seq_len: case.tokens.len(),
        loss: case.loss,
        max_relative_error: max_relative_error(&analytic, &numeric, FLOOR),
    })
}

/// Checks `cases` random models drawn from `seed`.
pub fn run_suite(cases: usize, seed: u64) -> Result<Vec<GradcheckReport>> {
    let mut rng = Rng::new(seed);
    (0..cases)
        .map(|_| check_case(&random_case(&mut rng)))
        .collect()
}
