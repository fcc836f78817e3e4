//! Reverse-mode gradients of the batch loss, written out by hand.

use crate::data::Triple;
use crate::error::{Error, Result};
use crate::geometry::backward::{block_rotate_vjp, block_scale_vjp};
use crate::geometry::{block_rotate_into, block_scale_into, Curvature};
use crate::model::{sigmoid, softplus, CurvatureMode, GeometryKind, Model, ParamGroup, Params};

use super::Batch;

/// Dense gradient tables with a record of which rows were written.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Params,
    touched: Vec<Vec<usize>>,
    mask: Vec<Vec<bool>>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        let grads = Params::zeros(model.config(), model.n_entities(), model.n_relations());
        let mask = grads.iter().map(|(_, t)| vec![false; t.rows()]).collect();
        Gradients {
            grads,
            touched: vec![Vec::new(); ParamGroup::ALL.len()],
            mask,
        }
    }

    pub fn row(&self, group: ParamGroup, row: usize) -> &[f64] {
        self.grads[group].row(row)
    }

    /// Rows of `group` that received a contribution, in first-touch order.
    pub fn touched(&self, group: ParamGroup) -> &[usize] {
        &self.touched[group.index()]
    }

    pub fn as_params(&self) -> &Params {
        &self.grads
    }

    fn add_row(&mut self, group: ParamGroup, row: usize, values: &[f64]) {
        let gi = group.index();
        if !self.mask[gi][row] {
            self.mask[gi][row] = true;
            self.touched[gi].push(row);
        }
        for (a, b) in self.grads[group].row_mut(row).iter_mut().zip(values) {
            *a += b;
        }
    }

    /// Zeroes the touched rows and forgets them.
    pub fn clear(&mut self) {
        for group in ParamGroup::ALL {
            let gi = group.index();
            for &row in &self.touched[gi] {
                self.grads[group].row_mut(row).fill(0.0);
                self.mask[gi][row] = false;
            }
            self.touched[gi].clear();
        }
    }

    /// Adds every touched row of `other`.
    pub fn merge(&mut self, other: &Gradients) {
        for group in ParamGroup::ALL {
            for &row in other.touched(group) {
                self.add_row(group, row, other.row(group, row));
            }
        }
    }

    /// Squared Euclidean norm over all touched rows.
    pub fn norm_sq(&self) -> f64 {
        ParamGroup::ALL
            .iter()
            .flat_map(|&g| self.touched(g).iter().map(move |&r| (g, r)))
            .map(|(g, r)| self.row(g, r).iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for group in ParamGroup::ALL {
            for &row in &self.touched[group.index()] {
                for v in self.grads[group].row_mut(row) {
                    *v *= factor;
                }
            }
        }
    }
}

fn score_error(index: usize, t: &Triple, tail: usize, s: f64) -> Error {
    Error::numeric(
        "score",
        format!(
            "score {s} for batch triple #{index} ({}, {}, {}) against tail {tail}",
            t.head, t.relation, t.tail
        ),
    )
}

/// Accumulates `weight · ∂L_i/∂θ` for positives `range` of the batch into
/// `grads`, where `L_i` is the summed loss of a positive and its negatives.
/// Returns the unweighted summed loss.
pub(crate) fn accumulate(
    model: &Model,
    batch: &Batch,
    range: std::ops::Range<usize>,
    weight: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    let mut total = 0.0;
    for i in range {
        let pos = &batch.positives[i];
        let tails = std::iter::once((pos.tail, -1.0)).chain(batch.negatives_of(i).iter().map(|&t| (t, 1.0)));
        total += match model.config().geometry {
            GeometryKind::Hyperbolic => hyperbolic(model, i, pos, tails, weight, grads)?,
            GeometryKind::Euclidean => euclidean(model, i, pos, tails, weight, grads)?,
        };
    }
    Ok(total)
}

fn hyperbolic(
    model: &Model,
    index: usize,
    pos: &Triple,
    tails: impl Iterator<Item = (usize, f64)>,
    weight: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    let p = model.params();
    let cfg = model.config();
    let ball = model.ball();
    let d = cfg.dim;
    let (h, r) = (pos.head, pos.relation);

    let logit = model.curvature_logit(h, r)?;
    let c = match logit {
        None => Curvature::ONE,
        Some(z) => Curvature::new(softplus(z))
            .map_err(|_| Error::numeric("curvature", format!("softplus({z}) is not positive")))?,
    };

    // forward
    let he = p[ParamGroup::EntityEmb].row(h);
    let scale = p[ParamGroup::Scale].row(r);
    let theta = p[ParamGroup::Theta].row(r);
    let trans = p[ParamGroup::Translation].row(r);
    let mut u = he.to_vec();
    if cfg.use_inter_level {
        block_scale_into(he, scale, &mut u);
    }
    let mut x0 = vec![0.0; d];
    ball.exp0_into(&u, c, &mut x0);
    let x = if cfg.use_intra_level {
        let mut out = vec![0.0; d];
        block_rotate_into(&x0, theta, &mut out);
        out
    } else {
        x0.clone()
    };
    let mut eps = vec![0.0; d];
    ball.exp0_into(trans, c, &mut eps);
    let mut anchor = vec![0.0; d];
    ball.mobius_add_into(&x, &eps, c, &mut anchor)?;
    let bh = p[ParamGroup::EntityBias].row(h)[0];

    // tails, forward and backward together
    let mut g_anchor = vec![0.0; d];
    let mut g_c = 0.0;
    let mut g_bh = 0.0;
    let mut loss = 0.0;
    let (mut y, mut neg, mut w) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let (mut g_y, mut g_te) = (vec![0.0; d], vec![0.0; d]);
    for (tail, sign) in tails {
        let te = p[ParamGroup::EntityEmb].row(tail);
        ball.exp0_into(te, c, &mut y);
        let sq = ball.sq_distance_with(&anchor, &y, c, &mut neg, &mut w)?;
        let s = -sq + bh + p[ParamGroup::EntityBias].row(tail)[0];
        if !s.is_finite() {
            return Err(score_error(index, pos, tail, s));
        }
        loss += softplus(sign * s);
        let g_s = weight * sign * sigmoid(sign * s);
        g_bh += g_s;
        grads.add_row(ParamGroup::EntityBias, tail, &[g_s]);
        g_y.fill(0.0);
        g_c += ball.sq_distance_vjp(&anchor, &y, c, -g_s, &mut g_anchor, &mut g_y)?;
        g_te.fill(0.0);
        g_c += ball.exp0_vjp(te, c, &g_y, &mut g_te);
        grads.add_row(ParamGroup::EntityEmb, tail, &g_te);
    }
    grads.add_row(ParamGroup::EntityBias, h, &[g_bh]);

    // head and relation
    let (mut g_x, mut g_eps) = (vec![0.0; d], vec![0.0; d]);
    g_c += ball.mobius_add_vjp(&x, &eps, c, &g_anchor, &mut g_x, &mut g_eps)?;
    let mut g_trans = vec![0.0; d];
    g_c += ball.exp0_vjp(trans, c, &g_eps, &mut g_trans);
    grads.add_row(ParamGroup::Translation, r, &g_trans);

    let g_x0 = if cfg.use_intra_level {
        let mut g_x0 = vec![0.0; d];
        let mut g_theta = vec![0.0; d / 2];
        block_rotate_vjp(&x0, theta, &g_x, &mut g_x0, &mut g_theta);
        grads.add_row(ParamGroup::Theta, r, &g_theta);
        g_x0
    } else {
        g_x
    };
    let mut g_u = vec![0.0; d];
    g_c += ball.exp0_vjp(&u, c, &g_x0, &mut g_u);
    let mut g_he = if cfg.use_inter_level {
        let mut g_he = vec![0.0; d];
        let mut g_k = vec![0.0; d / 2];
        block_scale_vjp(he, scale, &g_u, &mut g_he, &mut g_k);
        grads.add_row(ParamGroup::Scale, r, &g_k);
        g_he
    } else {
        g_u
    };

    // curvature head: c = softplus(z), softplus' = sigmoid
    if let Some(z) = logit {
        let g_z = g_c * sigmoid(z);
        match cfg.curvature_mode {
            CurvatureMode::FixedOne => {}
            CurvatureMode::Global => grads.add_row(ParamGroup::CurvaturePre, 0, &[g_z]),
            CurvatureMode::PerRelation => grads.add_row(ParamGroup::CurvaturePre, r, &[g_z]),
            CurvatureMode::Attention => {
                attention_backward(model, h, r, g_z, &mut g_he, grads)?;
            }
        }
    }
    grads.add_row(ParamGroup::EntityEmb, h, &g_he);
    Ok(loss)
}

/// Backward through `z = pᵀ(α_h hᴱ + α_r rᴱ)` with `α = softmax(aᵀhᴱ, aᵀrᴱ)`.
fn attention_backward(
    model: &Model,
    h: usize,
    r: usize,
    g_z: f64,
    g_he: &mut [f64],
    grads: &mut Gradients,
) -> Result<()> {
    let p = model.params();
    let he = p[ParamGroup::EntityEmb].row(h);
    let re = p[ParamGroup::RelationEmb].row(r);
    let a = p[ParamGroup::AttentionA].row(0);
    let pv = p[ParamGroup::AttentionP].row(0);
    let alpha = model.attention_weights(h, r)?;
    let d = he.len();

    let mut g_p = vec![0.0; d];
    let mut g_re = vec![0.0; d];
    let (mut g_ah, mut g_ar) = (0.0, 0.0);
    for i in 0..d {
        let v = alpha.head * he[i] + alpha.relation * re[i];
        g_p[i] = g_z * v;
        let g_v = g_z * pv[i];
        g_ah += g_v * he[i];
        g_ar += g_v * re[i];
        g_he[i] += alpha.head * g_v;
        g_re[i] += alpha.relation * g_v;
    }
    // softmax backward
    let mean = alpha.head * g_ah + alpha.relation * g_ar;
    let g_lh = alpha.head * (g_ah - mean);
    let g_lr = alpha.relation * (g_ar - mean);
    let mut g_a = vec![0.0; d];
    for i in 0..d {
        g_a[i] = g_lh * he[i] + g_lr * re[i];
        g_he[i] += g_lh * a[i];
        g_re[i] += g_lr * a[i];
    }
    grads.add_row(ParamGroup::AttentionP, 0, &g_p);
    grads.add_row(ParamGroup::AttentionA, 0, &g_a);
    grads.add_row(ParamGroup::RelationEmb, r, &g_re);
    Ok(())
}

fn euclidean(
    model: &Model,
    index: usize,
    pos: &Triple,
    tails: impl Iterator<Item = (usize, f64)>,
    weight: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    let p = model.params();
    let cfg = model.config();
    let d = cfg.dim;
    let (h, r) = (pos.head, pos.relation);
    let he = p[ParamGroup::EntityEmb].row(h);
    let scale = p[ParamGroup::Scale].row(r);
    let theta = p[ParamGroup::Theta].row(r);
    let trans = p[ParamGroup::Translation].row(r);

    let mut us = he.to_vec();
    if cfg.use_inter_level {
        block_scale_into(he, scale, &mut us);
    }
    let mut anchor = us.clone();
    if cfg.use_intra_level {
        block_rotate_into(&us, theta, &mut anchor);
    }
    for (a, b) in anchor.iter_mut().zip(trans) {
        *a += b;
    }
    let bh = p[ParamGroup::EntityBias].row(h)[0];

    let mut g_anchor = vec![0.0; d];
    let mut g_bh = 0.0;
    let mut loss = 0.0;
    let mut g_te = vec![0.0; d];
    for (tail, sign) in tails {
        let te = p[ParamGroup::EntityEmb].row(tail);
        let sq: f64 = anchor.iter().zip(te).map(|(a, b)| (a - b) * (a - b)).sum();
        let s = -4.0 * sq + bh + p[ParamGroup::EntityBias].row(tail)[0];
        if !s.is_finite() {
            return Err(score_error(index, pos, tail, s));
        }
        loss += softplus(sign * s);
        let g_s = weight * sign * sigmoid(sign * s);
        g_bh += g_s;
        grads.add_row(ParamGroup::EntityBias, tail, &[g_s]);
        // ∂s/∂anchor = -8(anchor - te)
        for ((ga, gt), (a, b)) in g_anchor.iter_mut().zip(g_te.iter_mut()).zip(anchor.iter().zip(te)) {
            let k = -8.0 * g_s * (a - b);
            *ga += k;
            *gt = -k;
        }
        grads.add_row(ParamGroup::EntityEmb, tail, &g_te);
    }
    grads.add_row(ParamGroup::EntityBias, h, &[g_bh]);
    grads.add_row(ParamGroup::Translation, r, &g_anchor);

    let g_us = if cfg.use_intra_level {
        let mut g_us = vec![0.0; d];
        let mut g_theta = vec![0.0; d / 2];
        block_rotate_vjp(&us, theta, &g_anchor, &mut g_us, &mut g_theta);
        grads.add_row(ParamGroup::Theta, r, &g_theta);
        g_us
    } else {
        g_anchor
    };
    let g_he = if cfg.use_inter_level {
        let mut g_he = vec![0.0; d];
        let mut g_k = vec![0.0; d / 2];
        block_scale_vjp(he, scale, &g_us, &mut g_he, &mut g_k);
        grads.add_row(ParamGroup::Scale, r, &g_k);
        g_he
    } else {
        g_us
    };
    grads.add_row(ParamGroup::EntityEmb, h, &g_he);
    Ok(loss)
}
