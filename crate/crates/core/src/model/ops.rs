use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::scalar::Scalar;

pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) struct LnCache<T> {
    pub xhat: Array2<T>,
    pub inv_std: Array1<T>,
}

pub(crate) fn layer_norm<T: Scalar>(x: &Array2<T>, gain: &Array1<T>, bias: &Array1<T>) -> (Array2<T>, LnCache<T>) {
    let d = T::of(x.ncols() as f64);
    let eps = T::of(LN_EPS);
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<T>() / d;
        *s = T::one() / (var + eps).sqrt();
        let is = *s;
        row.mapv_inplace(|v| v * is);
    }
    let y = &xhat * gain + bias;
    (y, LnCache { xhat, inv_std })
}

/// Returns `dx` and accumulates into the gain and bias gradients.
pub(crate) fn layer_norm_backward<T: Scalar>(
    dy: &Array2<T>,
    cache: &LnCache<T>,
    gain: &Array1<T>,
    dgain: &mut Array1<T>,
    dbias: &mut Array1<T>,
) -> Array2<T> {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let d = T::of(dy.ncols() as f64);
    let mut dx = dy * gain;
    for ((mut row, xh), &is) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(cache.inv_std.iter()) {
        let mean_d = row.sum() / d;
        let mean_dx = row.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>() / d;
        for (v, &h) in row.iter_mut().zip(xh.iter()) {
            *v = (*v - mean_d - h * mean_dx) * is;
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<T: Scalar>(u: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * u * (T::one() + (c * (u + a * u * u * u)).tanh())
}

pub(crate) fn gelu_grad<T: Scalar>(u: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let inner = c * (u + a * u * u * u);
    let t = inner.tanh();
    let dinner = c * (T::one() + T::of(3.0) * a * u * u);
    half * (T::one() + t) + half * u * (T::one() - t * t) * dinner
}

/// Row softmax restricted to `allowed`; disallowed entries are exactly zero.
pub(crate) fn masked_softmax<T: Scalar>(scores: &mut Array2<T>, allowed: ArrayView2<bool>) {
    for (mut row, ok) in scores.rows_mut().into_iter().zip(allowed.rows()) {
        let mut max = T::neg_infinity();
        for (&v, &a) in row.iter().zip(ok.iter()) {
            if a && v > max {
                max = v;
            }
        }
        let mut sum = T::zero();
        for (v, &a) in row.iter_mut().zip(ok.iter()) {
            *v = if a { (*v - max).exp() } else { T::zero() };
            sum += *v;
        }
        if sum > T::zero() {
            row.mapv_inplace(|v| v / sum);
        }
    }
}

/// Rotates coordinate pairs `(2t, 2t+1)` of each row by `sign * pos * θ_t`
/// with `θ_t = base^(-2t/d)`.
pub(crate) fn rope<T: Scalar>(x: &Array2<T>, positions: &[usize], base: f64, sign: f64) -> Array2<T> {
    let d = x.ncols();
    let thetas: Vec<f64> = (0..d / 2).map(|t| base.powf(-2.0 * t as f64 / d as f64)).collect();
    let mut out = x.clone();
    for (mut row, &p) in out.rows_mut().into_iter().zip(positions) {
        for (t, &theta) in thetas.iter().enumerate() {
            let angle = sign * p as f64 * theta;
            let (s, c) = (T::of(angle.sin()), T::of(angle.cos()));
            let (a, b) = (row[2 * t], row[2 * t + 1]);
            row[2 * t] = a * c - b * s;
            row[2 * t + 1] = a * s + b * c;
        }
    }
    out
}
