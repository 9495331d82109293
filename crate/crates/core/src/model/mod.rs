//! Encoder, rotary scoring head and circle loss with exact reverse-mode
//! gradients.

pub mod checkpoint;
mod encoder;
mod head;
pub mod loss;
pub(crate) mod ops;
pub mod optim;

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use encoder::{EncoderParams, Layer, TOKEN_TYPES};
pub use head::{ScoringHead, ROPE_BASE};
pub use loss::{circle_loss, circle_loss_grad};

use crate::decode::ScoreMatrix;
use crate::error::{Error, Result};
use crate::query::{Query, TargetMatrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn: usize,
    /// Scoring head width; must be even.
    pub head_dim: usize,
    /// Rows of the position table.
    pub max_len: usize,
    pub final_norm: bool,
    pub rotary: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.head_dim % 2 != 0 {
            return Err(Error::OddHeadDim(self.head_dim));
        }
        if self.hidden == 0 || self.heads == 0 || self.head_dim == 0 || self.ffn == 0 || self.max_len == 0 {
            return Err(Error::DimensionMismatch("dimensions must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::DimensionMismatch(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

/// Every trainable tensor. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub encoder: EncoderParams<T>,
    pub head: ScoringHead<T>,
}

macro_rules! layer_fields {
    ($layer:expr, $i:expr, $view:ident, $out:ident) => {{
        let l = $layer;
        let p = |n: &str| format!("layers.{}.{}", $i, n);
        $out.push((p("ln1_gain"), l.ln1_gain.$view().into_dyn()));
        $out.push((p("ln1_bias"), l.ln1_bias.$view().into_dyn()));
        $out.push((p("attn_q"), l.attn_q.$view().into_dyn()));
        $out.push((p("attn_q_bias"), l.attn_q_bias.$view().into_dyn()));
        $out.push((p("attn_k"), l.attn_k.$view().into_dyn()));
        $out.push((p("attn_k_bias"), l.attn_k_bias.$view().into_dyn()));
        $out.push((p("attn_v"), l.attn_v.$view().into_dyn()));
        $out.push((p("attn_v_bias"), l.attn_v_bias.$view().into_dyn()));
        $out.push((p("attn_out"), l.attn_out.$view().into_dyn()));
        $out.push((p("attn_out_bias"), l.attn_out_bias.$view().into_dyn()));
        $out.push((p("ln2_gain"), l.ln2_gain.$view().into_dyn()));
        $out.push((p("ln2_bias"), l.ln2_bias.$view().into_dyn()));
        $out.push((p("ffn_in"), l.ffn_in.$view().into_dyn()));
        $out.push((p("ffn_in_bias"), l.ffn_in_bias.$view().into_dyn()));
        $out.push((p("ffn_out"), l.ffn_out.$view().into_dyn()));
        $out.push((p("ffn_out_bias"), l.ffn_out_bias.$view().into_dyn()));
    }};
}

macro_rules! all_fields {
    ($enc:expr, $head:expr, $view:ident, $iter:ident) => {{
        let mut out = Vec::new();
        let e = $enc;
        out.push(("token_emb".to_string(), e.token_emb.$view().into_dyn()));
        out.push(("position_emb".to_string(), e.position_emb.$view().into_dyn()));
        out.push(("type_emb".to_string(), e.type_emb.$view().into_dyn()));
        for (i, layer) in e.layers.$iter().enumerate() {
            layer_fields!(layer, i, $view, out);
        }
        out.push(("final_gain".to_string(), e.final_gain.$view().into_dyn()));
        out.push(("final_bias".to_string(), e.final_bias.$view().into_dyn()));
        let h = $head;
        out.push(("head.query_w".to_string(), h.query_w.$view().into_dyn()));
        out.push(("head.query_b".to_string(), h.query_b.$view().into_dyn()));
        out.push(("head.key_w".to_string(), h.key_w.$view().into_dyn()));
        out.push(("head.key_b".to_string(), h.key_b.$view().into_dyn()));
        out
    }};
}

impl<T: Scalar> Params<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.hidden;
        Self {
            encoder: EncoderParams {
                token_emb: Array2::zeros((config.vocab_size, d)),
                position_emb: Array2::zeros((config.max_len, d)),
                type_emb: Array2::zeros((TOKEN_TYPES, d)),
                layers: (0..config.layers).map(|_| Layer::zeros(d, config.ffn)).collect(),
                final_gain: Array1::zeros(d),
                final_bias: Array1::zeros(d),
            },
            head: ScoringHead::zeros(d, config.head_dim),
        }
    }

    /// Named views in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        all_fields!(&self.encoder, &self.head, view, iter)
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        all_fields!(&mut self.encoder, &mut self.head, view_mut, iter_mut)
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn squared_norm(&self) -> T {
        self.tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|&v| v * v).sum::<T>())
            .sum()
    }

    pub fn scale(&mut self, factor: T) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &Params<T>) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a += &b;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        let mut out = Params::<U>::zeros(&self.shape_config());
        for ((_, mut dst), (_, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            dst.zip_mut_with(&src, |d, &s| *d = U::of(s.to_f64_lossy()));
        }
        out
    }

    fn shape_config(&self) -> ModelConfig {
        let e = &self.encoder;
        ModelConfig {
            vocab_size: e.token_emb.nrows(),
            hidden: e.token_emb.ncols(),
            heads: 1,
            layers: e.layers.len(),
            ffn: e.layers.first().map(|l| l.ffn_in.ncols()).unwrap_or(1),
            head_dim: self.head.head_dim(),
            max_len: e.position_emb.nrows(),
            final_norm: true,
            rotary: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: Params<T>,
}

impl<T: Scalar> Model<T> {
    /// Normal(0, `std`) weights and embeddings, unit layer-norm gains, zero biases.
    pub fn init(config: ModelConfig, seed: u64, std: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        let mut params = Params::zeros(&config);
        for (name, mut t) in params.tensors_mut() {
            if name.ends_with("gain") {
                t.fill(T::one());
            } else if t.ndim() == 2 {
                t.mapv_inplace(|_| T::of(normal.sample(&mut rng)));
            }
        }
        Ok(Self { config, params })
    }

    pub fn encode(&self, query: &Query) -> Result<Array2<T>> {
        Ok(self
            .params
            .encoder
            .forward(query, self.config.heads, self.config.final_norm)?
            .0)
    }

    /// Score matrix of `hidden` for `query`; masked cells are `-∞`.
    pub fn score_hidden(&self, hidden: &Array2<T>, query: &Query) -> Result<ScoreMatrix<T>> {
        Ok(self.params.head.forward(hidden, query, self.config.rotary)?.0)
    }

    pub fn score(&self, query: &Query) -> Result<ScoreMatrix<T>> {
        let hidden = self.encode(query)?;
        self.score_hidden(&hidden, query)
    }

    pub fn loss(&self, query: &Query, target: &TargetMatrix) -> Result<T> {
        circle_loss(&self.score(query)?, target, &query.scoring_mask)
    }

    /// Adds the gradient of the query's circle loss into `grad` and returns the loss.
    pub fn accumulate_gradient(&self, query: &Query, target: &TargetMatrix, grad: &mut Params<T>) -> Result<T> {
        let heads = self.config.heads;
        let (hidden, enc_cache) = self.params.encoder.forward(query, heads, self.config.final_norm)?;
        let (z, head_cache) = self.params.head.forward(&hidden, query, self.config.rotary)?;
        let (loss, dz) = circle_loss_grad(&z, target, &query.scoring_mask)?;
        let d_hidden = self
            .params
            .head
            .backward(&hidden, query, &head_cache, &dz, self.config.rotary, &mut grad.head);
        self.params
            .encoder
            .backward(query, &enc_cache, d_hidden, heads, &mut grad.encoder);
        Ok(loss)
    }

    pub fn loss_and_gradient(&self, query: &Query, target: &TargetMatrix) -> Result<(T, Params<T>)> {
        let mut grad = Params::zeros(&self.config);
        let loss = self.accumulate_gradient(query, target, &mut grad)?;
        Ok((loss, grad))
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config,
            params: self.params.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::{build_target, GoldItem, Passage, PrefixGroup, QueryBuilder, QueryConfig};
    use crate::schema::{parse_schema, Mode};
    use crate::tokenize::Vocab;

    fn config(vocab: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab,
            hidden: 8,
            heads: 2,
            layers: 1,
            ffn: 16,
            head_dim: 8,
            max_len: 64,
            final_norm: true,
            rotary: true,
        }
    }

    fn fixture() -> (Query, TargetMatrix, usize) {
        let text = "Steve Jobs founded Apple";
        let schema = parse_schema(r#"{"person": null, "org": null}"#).unwrap();
        let vocab = Vocab::build(&[text], &schema.labels()).unwrap();
        let cfg = QueryConfig { max_len: 64, max_prompt_len: 32, isolation: true };
        let qb = QueryBuilder::new(&schema, &vocab, cfg);
        let group = PrefixGroup::from_schema(&schema, vec![]).unwrap();
        let q = qb.build_query(vec![group], &Passage::new(&vocab, text), Mode::Extract).unwrap();
        let t = build_target(&q, &[vec![GoldItem { label: "person".into(), span: Some((0, 10)) }]]).unwrap();
        (q, t, vocab.len())
    }

    #[test]
    fn forward_is_deterministic() {
        let (q, _, v) = fixture();
        let m = Model::<f64>::init(config(v), 3, 0.3).unwrap();
        assert_eq!(m.score(&q).unwrap(), m.score(&q).unwrap());
        let z = m.score(&q).unwrap();
        for ((i, j), &ok) in q.scoring_mask.indexed_iter() {
            assert_eq!(z.values[[i, j]].is_finite(), ok);
        }
    }

    #[test]
    fn zero_layers_without_final_norm_is_embedding_sum() {
        let (q, _, v) = fixture();
        let cfg = ModelConfig { layers: 0, final_norm: false, ..config(v) };
        let m = Model::<f64>::init(cfg, 1, 0.3).unwrap();
        let h = m.encode(&q).unwrap();
        let e = &m.params.encoder;
        for i in 0..q.len() {
            let expected = &e.token_emb.row(q.token_ids[i] as usize)
                + &e.position_emb.row(q.position_ids[i])
                + &e.type_emb.row(q.token_type_ids[i] as usize);
            assert_eq!(h.row(i), expected);
        }
    }

    #[test]
    fn rejects_out_of_range_ids() {
        let (q, _, v) = fixture();
        let small = Model::<f64>::init(config(v - 1), 1, 0.1).unwrap();
        assert!(matches!(small.encode(&q), Err(Error::DimensionMismatch(_))));
        let short = Model::<f64>::init(ModelConfig { max_len: 16, ..config(v) }, 1, 0.1).unwrap();
        assert!(matches!(short.encode(&q), Err(Error::DimensionMismatch(_))));
        assert!(matches!(
            Model::<f64>::init(ModelConfig { head_dim: 7, ..config(v) }, 1, 0.1),
            Err(Error::OddHeadDim(7))
        ));
    }

    #[test]
    fn gradient_is_linear_in_batch() {
        let (q, t, v) = fixture();
        let m = Model::<f64>::init(config(v), 5, 0.3).unwrap();
        let (l1, g1) = m.loss_and_gradient(&q, &t).unwrap();
        let mut g2 = Params::zeros(&m.config);
        let l2 = m.accumulate_gradient(&q, &t, &mut g2).unwrap() + m.accumulate_gradient(&q, &t, &mut g2).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
        for ((_, a), (_, b)) in g1.tensors().into_iter().zip(g2.tensors()) {
            for (&x, &y) in a.iter().zip(b.iter()) {
                assert!((2.0 * x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tensor_names_unique_and_complete() {
        let p = Params::<f32>::zeros(&config(20));
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert_eq!(names.len(), 3 + 16 + 2 + 4);
    }
}
