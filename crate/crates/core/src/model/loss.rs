//! Circle loss over the valid cells of a score matrix:
//! `log(1 + Σ_neg e^z) + log(1 + Σ_pos e^-z)`.

use ndarray::Array2;

use crate::decode::ScoreMatrix;
use crate::error::{Error, Result};
use crate::query::TargetMatrix;
use crate::scalar::Scalar;

/// `log(1 + Σ e^x)` computed stably, with the softmax weights of each term.
fn log1p_sum_exp<T: Scalar>(xs: &[T]) -> (T, Vec<T>) {
    let m = xs.iter().copied().fold(T::zero(), T::max);
    let mut sum = (-m).exp();
    for &x in xs {
        sum += (x - m).exp();
    }
    let lse = m + sum.ln();
    (lse, xs.iter().map(|&x| (x - lse).exp()).collect())
}

fn check<T: Scalar>(z: &ScoreMatrix<T>, target: &TargetMatrix, mask: &Array2<bool>) -> Result<()> {
    if z.values.dim() != target.cells.dim() || z.values.dim() != mask.dim() {
        return Err(Error::ShapeMismatch(format!(
            "scores {:?}, target {:?}, mask {:?}",
            z.values.dim(),
            target.cells.dim(),
            mask.dim()
        )));
    }
    if target.cells.iter().zip(mask.iter()).any(|(&t, &m)| t && !m) {
        return Err(Error::ShapeMismatch("target cell outside scoring mask".into()));
    }
    Ok(())
}

/// Loss and its gradient with respect to every cell of `z` (zero outside `mask`).
pub fn circle_loss_grad<T: Scalar>(
    z: &ScoreMatrix<T>,
    target: &TargetMatrix,
    mask: &Array2<bool>,
) -> Result<(T, Array2<T>)> {
    check(z, target, mask)?;
    let mut neg_idx = Vec::new();
    let mut neg = Vec::new();
    let mut pos_idx = Vec::new();
    let mut pos = Vec::new();
    for (((idx, &v), &t), &m) in z.values.indexed_iter().zip(target.cells.iter()).zip(mask.iter()) {
        if !m {
            continue;
        }
        if t {
            pos_idx.push(idx);
            pos.push(-v);
        } else {
            neg_idx.push(idx);
            neg.push(v);
        }
    }
    let (l_neg, w_neg) = log1p_sum_exp(&neg);
    let (l_pos, w_pos) = log1p_sum_exp(&pos);
    let mut grad = Array2::zeros(z.values.raw_dim());
    for (idx, w) in neg_idx.into_iter().zip(w_neg) {
        grad[idx] = w;
    }
    for (idx, w) in pos_idx.into_iter().zip(w_pos) {
        grad[idx] = -w;
    }
    Ok((l_neg + l_pos, grad))
}

pub fn circle_loss<T: Scalar>(z: &ScoreMatrix<T>, target: &TargetMatrix, mask: &Array2<bool>) -> Result<T> {
    circle_loss_grad(z, target, mask).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn setup(values: Array2<f64>, cells: Array2<bool>) -> (ScoreMatrix<f64>, TargetMatrix, Array2<bool>) {
        let mask = Array2::from_elem(values.raw_dim(), true);
        (ScoreMatrix { values }, TargetMatrix { cells }, mask)
    }

    #[test]
    fn zero_logits_closed_form() {
        let (z, t, m) = setup(arr2(&[[0.0, 0.0]]), arr2(&[[true, false]]));
        let l = circle_loss(&z, &t, &m).unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_is_zero() {
        let (z, t, m) = setup(arr2(&[[-1000.0, -1000.0], [1000.0, -1000.0]]), arr2(&[[false, false], [true, false]]));
        let (l, g) = circle_loss_grad(&z, &t, &m).unwrap();
        assert!(l.abs() < 1e-12);
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-8);
        let (z, t, m) = setup(arr2(&[[-1000.0, -1000.0]]), arr2(&[[false, false]]));
        assert!(circle_loss(&z, &t, &m).unwrap().abs() < 1e-12);
    }

    #[test]
    fn matches_direct_formula() {
        let values = Array2::from_shape_fn((4, 4), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 3.0 - 1.7);
        let cells = Array2::from_shape_fn((4, 4), |(i, j)| (i + 2 * j) % 5 == 0);
        let mut mask = Array2::from_shape_fn((4, 4), |(i, j)| i <= j || j == 0);
        mask.zip_mut_with(&cells, |m, &c| *m |= c);
        // direct scalar re-implementation
        let mut sn = 0.0;
        let mut sp = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                if !mask[[i, j]] {
                    continue;
                }
                if cells[[i, j]] {
                    sp += (-values[[i, j]] as f64).exp();
                } else {
                    sn += (values[[i, j]] as f64).exp();
                }
            }
        }
        let direct = (1.0 + sn).ln() + (1.0 + sp).ln();
        let z = ScoreMatrix { values: values.clone() };
        let t = TargetMatrix { cells };
        let (l, g) = circle_loss_grad(&z, &t, &mask).unwrap();
        assert!((l - direct).abs() < 1e-12);
        // finite differences on the cells
        for i in 0..4 {
            for j in 0..4 {
                let h = 1e-6;
                let mut up = z.clone();
                up.values[[i, j]] += h;
                let mut dn = z.clone();
                dn.values[[i, j]] -= h;
                let num = (circle_loss(&up, &t, &mask).unwrap() - circle_loss(&dn, &t, &mask).unwrap()) / (2.0 * h);
                assert!((num - g[[i, j]]).abs() < 1e-7, "({i},{j})");
            }
        }
    }

    #[test]
    fn shape_mismatch() {
        let z = ScoreMatrix { values: Array2::<f64>::zeros((2, 2)) };
        let t = TargetMatrix { cells: Array2::from_elem((3, 3), false) };
        let m = Array2::from_elem((2, 2), true);
        assert!(matches!(circle_loss(&z, &t, &m), Err(Error::ShapeMismatch(_))));
    }
}
