use serde::{Deserialize, Serialize};

use crate::decoder::DecoderKind;
use crate::error::{GcmError, Result};
use crate::linalg::{add_assign, axpy, dot, Matrix};
use crate::model::{ModelState, Parameters, PropagationPlan};

/// Scores beyond this magnitude are clamped before the sigmoid.
pub const SCORE_CLAMP: f64 = 40.0;

/// One training instance. `label` is 1 for observed interactions and 0 for
/// sampled negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTriple {
    pub user: u32,
    pub item: u32,
    pub context: Vec<u32>,
    pub label: f64,
}

impl LabeledTriple {
    pub fn positive(user: u32, item: u32, context: Vec<u32>) -> Self {
        LabeledTriple {
            user,
            item,
            context,
            label: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    /// Raw scores `ŷ` before clamping.
    pub scores: Vec<f64>,
    /// Summed log loss over the batch.
    pub data_loss: f64,
    /// `λ‖Θ‖²`.
    pub reg_loss: f64,
}

impl BatchOutput {
    pub fn loss(&self) -> f64 {
        self.data_loss + self.reg_loss
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Log loss of one instance: `softplus(ŷ) − y·ŷ` at the clamped score.
pub fn log_loss(score: f64, label: f64) -> f64 {
    let s = score.clamp(-SCORE_CLAMP, SCORE_CLAMP);
    softplus(s) - label * s
}

/// Scores and loss for a batch, recomputing propagation from the current
/// parameters.
pub fn forward(batch: &[LabeledTriple], model: &ModelState, plan: &PropagationPlan, l2: f64) -> Result<BatchOutput> {
    run(batch, model, plan, l2, false).map(|(out, _)| out)
}

/// Gradients of the batch loss with respect to every parameter.
pub fn backward(batch: &[LabeledTriple], model: &ModelState, plan: &PropagationPlan, l2: f64) -> Result<Parameters> {
    loss_and_gradients(batch, model, plan, l2).map(|(_, g)| g)
}

/// Forward and backward in one pass.
pub fn loss_and_gradients(
    batch: &[LabeledTriple],
    model: &ModelState,
    plan: &PropagationPlan,
    l2: f64,
) -> Result<(BatchOutput, Parameters)> {
    run(batch, model, plan, l2, true).map(|(out, g)| (out, g.expect("gradients requested")))
}

fn run(
    batch: &[LabeledTriple],
    model: &ModelState,
    plan: &PropagationPlan,
    l2: f64,
    want_grad: bool,
) -> Result<(BatchOutput, Option<Parameters>)> {
    if batch.is_empty() {
        return Err(GcmError::contract("batch is empty"));
    }
    if !(l2 >= 0.0) {
        return Err(GcmError::param(format!("l2 must be non-negative, got {l2}")));
    }
    let (n, m) = (plan.n_users(), plan.n_items());
    let tables = &model.params.tables;
    let n_ctx = tables.context.rows();
    for t in batch {
        if t.user as usize >= n {
            return Err(GcmError::UnknownUser(t.user.to_string()));
        }
        if t.item as usize >= m {
            return Err(GcmError::UnknownItem(t.item.to_string()));
        }
        if let Some(&c) = t.context.iter().find(|&&c| c as usize >= n_ctx) {
            return Err(GcmError::contract(format!("unknown context feature {c}")));
        }
    }

    let stacked = model.propagate_stacked(plan)?;
    let d = stacked.cols();
    let use_ctx = model.config.decoder == DecoderKind::Fm;
    let bias = model.params.bias.as_ref();
    let features = &plan.features;

    let mut grads = want_grad.then(|| model.params.zeros_like());
    let mut g_final = want_grad.then(|| Matrix::zeros(stacked.rows(), d));

    let mut scores = Vec::with_capacity(batch.len());
    let mut data_loss = 0.0;
    let mut s = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    for t in batch {
        let (u, i) = (t.user as usize, t.item as usize);
        let p = stacked.row(u);
        let q = stacked.row(n + i);
        let ctx: &[u32] = if use_ctx { &t.context } else { &[] };

        s.iter_mut().for_each(|x| *x = 0.0);
        let mut self_sq = 0.0;
        for &c in ctx {
            let v = tables.context.row(c as usize);
            add_assign(&mut s, v);
            self_sq += dot(v, v);
        }
        let mut y = dot(p, q);
        if use_ctx {
            y += dot(p, &s) + dot(q, &s) + 0.5 * (dot(&s, &s) - self_sq);
        }
        if let Some(b) = bias {
            y += b.global[0];
            y += features.users[u].iter().map(|&f| b.user[f as usize]).sum::<f64>();
            y += features.items[i].iter().map(|&f| b.item[f as usize]).sum::<f64>();
            y += ctx.iter().map(|&c| b.context[c as usize]).sum::<f64>();
        }
        scores.push(y);
        data_loss += log_loss(y, t.label);

        let (Some(grads), Some(g_final)) = (grads.as_mut(), g_final.as_mut()) else {
            continue;
        };
        let gy = sigmoid(y.clamp(-SCORE_CLAMP, SCORE_CLAMP)) - t.label;

        tmp.copy_from_slice(q);
        add_assign(&mut tmp, &s);
        axpy(gy, &tmp, g_final.row_mut(u));
        tmp.copy_from_slice(p);
        add_assign(&mut tmp, &s);
        axpy(gy, &tmp, g_final.row_mut(n + i));
        for &c in ctx {
            // ∂/∂v_c of the pair sum is p + q + s − v_c
            let v = tables.context.row(c as usize);
            for k in 0..d {
                tmp[k] = p[k] + q[k] + s[k] - v[k];
            }
            axpy(gy, &tmp, grads.tables.context.row_mut(c as usize));
        }
        if let Some(b) = grads.bias.as_mut() {
            b.global[0] += gy;
            for &f in &features.users[u] {
                b.user[f as usize] += gy;
            }
            for &f in &features.items[i] {
                b.item[f as usize] += gy;
            }
            for &c in ctx {
                b.context[c as usize] += gy;
            }
        }
    }

    let reg_loss = l2 * model.params.sum_squares();
    let out = BatchOutput {
        scores,
        data_loss,
        reg_loss,
    };
    let (Some(mut grads), Some(g_final)) = (grads, g_final) else {
        return Ok((out, None));
    };

    let h = adjoint(plan, model.config.alphas.as_slice(), &g_final)?;
    distribute(plan, &h, &mut grads);

    add_l2_gradient(&mut grads, &model.params, l2);
    Ok((out, Some(grads)))
}

/// Adds `2λΘ` to `grads`.
pub fn add_l2_gradient(grads: &mut Parameters, params: &Parameters, l2: f64) {
    if l2 == 0.0 {
        return;
    }
    for (g, theta) in grads.tensors_mut().into_iter().zip(params.tensors()) {
        axpy(2.0 * l2, theta, g);
    }
}

/// `Σ_l α_l (Âᵀ)^l G` by Horner's rule.
fn adjoint(plan: &PropagationPlan, alphas: &[f64], g: &Matrix) -> Result<Matrix> {
    let layers = alphas.len() - 1;
    let mut h = g.clone();
    h.scale(alphas[layers]);
    for l in (0..layers).rev() {
        h = plan.adjacency_t.mul_dense(&h)?;
        h.add_scaled(alphas[l], g)?;
    }
    Ok(h)
}

/// Pushes layer-0 node gradients back to feature embeddings through the
/// mean-pooling weights.
fn distribute(plan: &PropagationPlan, h: &Matrix, grads: &mut Parameters) {
    let n = plan.n_users();
    let features = &plan.features;
    let tables = &mut grads.tables;
    for (u, feats) in features.users.iter().enumerate() {
        let w = 1.0 / feats.len() as f64;
        for &f in feats {
            axpy(w, h.row(u), tables.user.row_mut(f as usize));
        }
    }
    for (i, feats) in features.items.iter().enumerate() {
        let w = 1.0 / feats.len() as f64;
        for &f in feats {
            axpy(w, h.row(n + i), tables.item.row_mut(f as usize));
        }
    }
    if let Some(nodes) = &plan.contexts {
        let base = plan.adjacency.context_offset();
        for (c, combo) in nodes.combos().iter().enumerate() {
            if combo.is_empty() {
                continue;
            }
            let w = 1.0 / combo.len() as f64;
            for &f in combo {
                axpy(w, h.row(base + c), tables.context.row_mut(f as usize));
            }
        }
    }
}
