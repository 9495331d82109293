//! Rotary pairwise scoring head.
//!
//! `Z[j,k] = rope(q_j, P_j) · rope(k_k, P_k) = q_jᵀ R(P_k − P_j) k_k` with
//! `q = h W_q + b_q` and `k = h W_k + b_k`.

use ndarray::{Array1, Array2, Axis};

use super::ops::rope;
use crate::decode::ScoreMatrix;
use crate::error::{Error, Result};
use crate::query::Query;
use crate::scalar::Scalar;

pub const ROPE_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringHead<T> {
    pub query_w: Array2<T>,
    pub query_b: Array1<T>,
    pub key_w: Array2<T>,
    pub key_b: Array1<T>,
}

pub(crate) struct HeadCache<T> {
    q_rot: Array2<T>,
    k_rot: Array2<T>,
}

impl<T: Scalar> ScoringHead<T> {
    pub(crate) fn zeros(d: usize, head_dim: usize) -> Self {
        Self {
            query_w: Array2::zeros((d, head_dim)),
            query_b: Array1::zeros(head_dim),
            key_w: Array2::zeros((d, head_dim)),
            key_b: Array1::zeros(head_dim),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.query_w.ncols()
    }

    /// Projected and rotated queries and keys.
    pub fn project(&self, hidden: &Array2<T>, positions: &[usize], rotary: bool) -> Result<(Array2<T>, Array2<T>)> {
        let dp = self.head_dim();
        if dp % 2 != 0 {
            return Err(Error::OddHeadDim(dp));
        }
        if hidden.nrows() != positions.len() || hidden.ncols() != self.query_w.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "hidden {:?} vs {} positions and input dim {}",
                hidden.dim(),
                positions.len(),
                self.query_w.nrows()
            )));
        }
        let q = hidden.dot(&self.query_w) + &self.query_b;
        let k = hidden.dot(&self.key_w) + &self.key_b;
        if rotary {
            Ok((rope(&q, positions, ROPE_BASE, 1.0), rope(&k, positions, ROPE_BASE, 1.0)))
        } else {
            Ok((q, k))
        }
    }

    pub(crate) fn forward(
        &self,
        hidden: &Array2<T>,
        query: &Query,
        rotary: bool,
    ) -> Result<(ScoreMatrix<T>, HeadCache<T>)> {
        let (q_rot, k_rot) = self.project(hidden, &query.position_ids, rotary)?;
        let raw = q_rot.dot(&k_rot.t());
        let z = ScoreMatrix::masked(&raw, &query.scoring_mask);
        Ok((z, HeadCache { q_rot, k_rot }))
    }

    /// `d_scores` must be zero outside the scoring mask. Returns the hidden-state gradient.
    pub(crate) fn backward(
        &self,
        hidden: &Array2<T>,
        query: &Query,
        cache: &HeadCache<T>,
        d_scores: &Array2<T>,
        rotary: bool,
        grad: &mut ScoringHead<T>,
    ) -> Array2<T> {
        let dq_rot = d_scores.dot(&cache.k_rot);
        let dk_rot = d_scores.t().dot(&cache.q_rot);
        let (dq, dk) = if rotary {
            (
                rope(&dq_rot, &query.position_ids, ROPE_BASE, -1.0),
                rope(&dk_rot, &query.position_ids, ROPE_BASE, -1.0),
            )
        } else {
            (dq_rot, dk_rot)
        };
        grad.query_w += &hidden.t().dot(&dq);
        grad.query_b += &dq.sum_axis(Axis(0));
        grad.key_w += &hidden.t().dot(&dk);
        grad.key_b += &dk.sum_axis(Axis(0));
        dq.dot(&self.query_w.t()) + dk.dot(&self.key_w.t())
    }
}
