//! Pre-norm transformer encoder with learned absolute position and token
//! type embeddings, driven by an explicit attention mask.

use ndarray::{s, Array1, Array2, Axis};

use super::ops::{gelu, gelu_grad, layer_norm, layer_norm_backward, masked_softmax, LnCache};
use crate::error::{Error, Result};
use crate::query::Query;
use crate::scalar::Scalar;

pub const TOKEN_TYPES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub ln1_gain: Array1<T>,
    pub ln1_bias: Array1<T>,
    pub attn_q: Array2<T>,
    pub attn_q_bias: Array1<T>,
    pub attn_k: Array2<T>,
    pub attn_k_bias: Array1<T>,
    pub attn_v: Array2<T>,
    pub attn_v_bias: Array1<T>,
    pub attn_out: Array2<T>,
    pub attn_out_bias: Array1<T>,
    pub ln2_gain: Array1<T>,
    pub ln2_bias: Array1<T>,
    pub ffn_in: Array2<T>,
    pub ffn_in_bias: Array1<T>,
    pub ffn_out: Array2<T>,
    pub ffn_out_bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub token_emb: Array2<T>,
    pub position_emb: Array2<T>,
    pub type_emb: Array2<T>,
    pub layers: Vec<Layer<T>>,
    pub final_gain: Array1<T>,
    pub final_bias: Array1<T>,
}

pub(crate) struct LayerCache<T> {
    ln1: LnCache<T>,
    normed1: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    context: Array2<T>,
    ln2: LnCache<T>,
    normed2: Array2<T>,
    pre_act: Array2<T>,
    act: Array2<T>,
}

pub(crate) struct EncoderCache<T> {
    layers: Vec<LayerCache<T>>,
    final_ln: Option<LnCache<T>>,
}

impl<T: Scalar> Layer<T> {
    pub(crate) fn zeros(d: usize, ffn: usize) -> Self {
        Self {
            ln1_gain: Array1::zeros(d),
            ln1_bias: Array1::zeros(d),
            attn_q: Array2::zeros((d, d)),
            attn_q_bias: Array1::zeros(d),
            attn_k: Array2::zeros((d, d)),
            attn_k_bias: Array1::zeros(d),
            attn_v: Array2::zeros((d, d)),
            attn_v_bias: Array1::zeros(d),
            attn_out: Array2::zeros((d, d)),
            attn_out_bias: Array1::zeros(d),
            ln2_gain: Array1::zeros(d),
            ln2_bias: Array1::zeros(d),
            ffn_in: Array2::zeros((d, ffn)),
            ffn_in_bias: Array1::zeros(ffn),
            ffn_out: Array2::zeros((ffn, d)),
            ffn_out_bias: Array1::zeros(d),
        }
    }

    fn forward(&self, x: &Array2<T>, mask: &Array2<bool>, heads: usize) -> (Array2<T>, LayerCache<T>) {
        let d = x.ncols();
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();

        let (normed1, ln1) = layer_norm(x, &self.ln1_gain, &self.ln1_bias);
        let q = normed1.dot(&self.attn_q) + &self.attn_q_bias;
        let k = normed1.dot(&self.attn_k) + &self.attn_k_bias;
        let v = normed1.dot(&self.attn_v) + &self.attn_v_bias;

        let mut context = Array2::zeros(x.raw_dim());
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut p = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            masked_softmax(&mut p, mask.view());
            context.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
            probs.push(p);
        }
        let x1 = x + &(context.dot(&self.attn_out) + &self.attn_out_bias);

        let (normed2, ln2) = layer_norm(&x1, &self.ln2_gain, &self.ln2_bias);
        let pre_act = normed2.dot(&self.ffn_in) + &self.ffn_in_bias;
        let act = pre_act.mapv(gelu);
        let x2 = &x1 + &(act.dot(&self.ffn_out) + &self.ffn_out_bias);

        let cache = LayerCache {
            ln1,
            normed1,
            q,
            k,
            v,
            probs,
            context,
            ln2,
            normed2,
            pre_act,
            act,
        };
        (x2, cache)
    }

    fn backward(&self, dx2: Array2<T>, cache: &LayerCache<T>, heads: usize, grad: &mut Layer<T>) -> Array2<T> {
        let d = dx2.ncols();
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();

        // feed-forward block
        grad.ffn_out += &cache.act.t().dot(&dx2);
        grad.ffn_out_bias += &dx2.sum_axis(Axis(0));
        let mut d_pre = dx2.dot(&self.ffn_out.t());
        d_pre.zip_mut_with(&cache.pre_act, |g, &u| *g *= gelu_grad(u));
        grad.ffn_in += &cache.normed2.t().dot(&d_pre);
        grad.ffn_in_bias += &d_pre.sum_axis(Axis(0));
        let d_normed2 = d_pre.dot(&self.ffn_in.t());
        let mut dx1 = dx2;
        dx1 += &layer_norm_backward(&d_normed2, &cache.ln2, &self.ln2_gain, &mut grad.ln2_gain, &mut grad.ln2_bias);

        // attention block
        grad.attn_out += &cache.context.t().dot(&dx1);
        grad.attn_out_bias += &dx1.sum_axis(Axis(0));
        let d_context = dx1.dot(&self.attn_out.t());
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let d_out = d_context.slice(cols);
            let mut dp = d_out.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&d_out));
            for (mut drow, prow) in dp.rows_mut().into_iter().zip(p.rows()) {
                let dot: T = drow.iter().zip(prow.iter()).map(|(&a, &b)| a * b).sum();
                for (g, &pv) in drow.iter_mut().zip(prow.iter()) {
                    *g = pv * (*g - dot) * scale;
                }
            }
            dq.slice_mut(cols).assign(&dp.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&dp.t().dot(&cache.q.slice(cols)));
        }
        grad.attn_q += &cache.normed1.t().dot(&dq);
        grad.attn_q_bias += &dq.sum_axis(Axis(0));
        grad.attn_k += &cache.normed1.t().dot(&dk);
        grad.attn_k_bias += &dk.sum_axis(Axis(0));
        grad.attn_v += &cache.normed1.t().dot(&dv);
        grad.attn_v_bias += &dv.sum_axis(Axis(0));
        let d_normed1 = dq.dot(&self.attn_q.t()) + dk.dot(&self.attn_k.t()) + dv.dot(&self.attn_v.t());
        let mut dx = dx1;
        dx += &layer_norm_backward(&d_normed1, &cache.ln1, &self.ln1_gain, &mut grad.ln1_gain, &mut grad.ln1_bias);
        dx
    }
}

impl<T: Scalar> EncoderParams<T> {
    pub fn hidden(&self) -> usize {
        self.token_emb.ncols()
    }

    fn check(&self, query: &Query) -> Result<()> {
        let vocab = self.token_emb.nrows();
        if let Some(&id) = query.token_ids.iter().find(|&&id| id as usize >= vocab) {
            return Err(Error::DimensionMismatch(format!("token id {id} >= vocab size {vocab}")));
        }
        let table = self.position_emb.nrows();
        if let Some(&p) = query.position_ids.iter().find(|&&p| p >= table) {
            return Err(Error::DimensionMismatch(format!("position id {p} >= table size {table}")));
        }
        if query.attention_mask.dim() != (query.len(), query.len()) {
            return Err(Error::DimensionMismatch("attention mask shape".into()));
        }
        Ok(())
    }

    fn embed(&self, query: &Query) -> Array2<T> {
        let mut x = Array2::zeros((query.len(), self.hidden()));
        for (i, mut row) in x.rows_mut().into_iter().enumerate() {
            row += &self.token_emb.row(query.token_ids[i] as usize);
            row += &self.position_emb.row(query.position_ids[i]);
            row += &self.type_emb.row(query.token_type_ids[i] as usize);
        }
        x
    }

    pub(crate) fn forward(
        &self,
        query: &Query,
        heads: usize,
        final_norm: bool,
    ) -> Result<(Array2<T>, EncoderCache<T>)> {
        self.check(query)?;
        let mut x = self.embed(query);
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward(&x, &query.attention_mask, heads);
            x = next;
            layers.push(cache);
        }
        let final_ln = if final_norm {
            let (y, cache) = layer_norm(&x, &self.final_gain, &self.final_bias);
            x = y;
            Some(cache)
        } else {
            None
        };
        Ok((x, EncoderCache { layers, final_ln }))
    }

    pub(crate) fn backward(
        &self,
        query: &Query,
        cache: &EncoderCache<T>,
        d_hidden: Array2<T>,
        heads: usize,
        grad: &mut EncoderParams<T>,
    ) {
        let mut dx = match &cache.final_ln {
            Some(ln) => layer_norm_backward(&d_hidden, ln, &self.final_gain, &mut grad.final_gain, &mut grad.final_bias),
            None => d_hidden,
        };
        for ((layer, lc), lg) in self.layers.iter().zip(&cache.layers).zip(grad.layers.iter_mut()).rev() {
            dx = layer.backward(dx, lc, heads, lg);
        }
        for (i, row) in dx.rows().into_iter().enumerate() {
            let mut t = grad.token_emb.row_mut(query.token_ids[i] as usize);
            t += &row;
            let mut p = grad.position_emb.row_mut(query.position_ids[i]);
            p += &row;
            let mut y = grad.type_emb.row_mut(query.token_type_ids[i] as usize);
            y += &row;
        }
    }
}
