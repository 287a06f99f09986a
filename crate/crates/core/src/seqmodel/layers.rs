//! Dense kernels with hand-written backward passes.
//!
//! Every kernel reduces in a fixed order that depends only on the vector
//! length, so a row computed alone and the same row computed inside a longer
//! pass produce identical bits.

use crate::real::Real;

const LN_EPS: f64 = 1e-5;

/// Dot product with eight fixed accumulation lanes.
#[inline]
pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = F::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `W x + b`, `W` stored `out x inp` row-major.
pub(crate) fn linear<F: Real>(w: &[F], b: &[F], x: &[F]) -> Vec<F> {
    let inp = x.len();
    w.chunks_exact(inp)
        .zip(b)
        .map(|(row, &bias)| bias + dot(row, x))
        .collect()
}

/// Accumulates the gradients of `y = W x + b` given `dy`; returns `dx`.
pub(crate) fn linear_backward<F: Real>(
    w: &[F],
    x: &[F],
    dy: &[F],
    dw: &mut [F],
    db: &mut [F],
) -> Vec<F> {
    let inp = x.len();
    let mut dx = vec![F::zero(); inp];
    for (o, &g) in dy.iter().enumerate() {
        if g == F::zero() {
            continue;
        }
        db[o] += g;
        axpy(g, x, &mut dw[o * inp..(o + 1) * inp]);
        axpy(g, &w[o * inp..(o + 1) * inp], &mut dx);
    }
    dx
}

#[derive(Clone, Debug)]
pub(crate) struct NormTrace<F> {
    pub xhat: Vec<F>,
    pub rstd: F,
}

pub(crate) fn layer_norm<F: Real>(gain: &[F], bias: &[F], x: &[F]) -> (Vec<F>, NormTrace<F>) {
    let n = F::of(x.len() as f64);
    let mean = x.iter().copied().sum::<F>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
    let rstd = F::one() / (var + F::of(LN_EPS)).sqrt();
    let xhat: Vec<F> = x.iter().map(|&v| (v - mean) * rstd).collect();
    let y = xhat
        .iter()
        .zip(gain.iter().zip(bias))
        .map(|(&xh, (&g, &b))| g * xh + b)
        .collect();
    (y, NormTrace { xhat, rstd })
}

pub(crate) fn layer_norm_backward<F: Real>(
    gain: &[F],
    tr: &NormTrace<F>,
    dy: &[F],
    dgain: &mut [F],
    dbias: &mut [F],
) -> Vec<F> {
    let n = F::of(dy.len() as f64);
    let mut dxhat = Vec::with_capacity(dy.len());
    for i in 0..dy.len() {
        dgain[i] += dy[i] * tr.xhat[i];
        dbias[i] += dy[i];
        dxhat.push(dy[i] * gain[i]);
    }
    let mean_d = dxhat.iter().copied().sum::<F>() / n;
    let mean_dx = dxhat.iter().zip(&tr.xhat).map(|(&a, &b)| a * b).sum::<F>() / n;
    dxhat
        .iter()
        .zip(&tr.xhat)
        .map(|(&d, &xh)| tr.rstd * (d - mean_d - xh * mean_dx))
        .collect()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh approximation of GELU.
#[inline]
pub(crate) fn gelu<F: Real>(z: F) -> F {
    let inner = F::of(GELU_C) * (z + F::of(GELU_A) * z * z * z);
    F::of(0.5) * z * (F::one() + inner.tanh())
}

#[inline]
pub(crate) fn gelu_grad<F: Real>(z: F) -> F {
    let c = F::of(GELU_C);
    let a = F::of(GELU_A);
    let th = (c * (z + a * z * z * z)).tanh();
    let half = F::of(0.5);
    half * (F::one() + th) + half * z * (F::one() - th * th) * c * (F::one() + F::of(3.0) * a * z * z)
}

/// Multi-head attention of one query row over `rows` key/value rows, each of
/// width `q.len()`. Returns the attended vector and the probabilities,
/// laid out `heads x rows`.
pub(crate) fn attend<F: Real>(q: &[F], keys: &[F], values: &[F], heads: usize) -> (Vec<F>, Vec<F>) {
    let h = q.len();
    let hd = h / heads;
    let rows = keys.len() / h;
    let scale = F::of(1.0 / (hd as f64).sqrt());
    let mut out = vec![F::zero(); h];
    let mut probs = vec![F::zero(); heads * rows];
    for a in 0..heads {
        let span = a * hd..(a + 1) * hd;
        let p = &mut probs[a * rows..(a + 1) * rows];
        let mut max = F::neg_infinity();
        for (u, pu) in p.iter_mut().enumerate() {
            *pu = dot(&q[span.clone()], &keys[u * h + span.start..u * h + span.end]) * scale;
            max = max.max(*pu);
        }
        let mut sum = F::zero();
        for pu in p.iter_mut() {
            *pu = (*pu - max).exp();
            sum += *pu;
        }
        for (u, pu) in p.iter_mut().enumerate() {
            *pu /= sum;
            axpy(*pu, &values[u * h + span.start..u * h + span.end], &mut out[span.clone()]);
        }
    }
    (out, probs)
}

/// Backward of [`attend`]: accumulates into `dkeys`/`dvalues`, returns `dq`.
pub(crate) fn attend_backward<F: Real>(
    q: &[F],
    keys: &[F],
    values: &[F],
    probs: &[F],
    heads: usize,
    dout: &[F],
    dkeys: &mut [F],
    dvalues: &mut [F],
) -> Vec<F> {
    let h = q.len();
    let hd = h / heads;
    let rows = keys.len() / h;
    let scale = F::of(1.0 / (hd as f64).sqrt());
    let mut dq = vec![F::zero(); h];
    let mut dp = vec![F::zero(); rows];
    for a in 0..heads {
        let span = a * hd..(a + 1) * hd;
        let p = &probs[a * rows..(a + 1) * rows];
        let g = &dout[span.clone()];
        for u in 0..rows {
            let vs = u * h + span.start..u * h + span.end;
            dp[u] = dot(g, &values[vs.clone()]);
            axpy(p[u], g, &mut dvalues[vs]);
        }
        let inner: F = p.iter().zip(&dp).map(|(&pu, &du)| pu * du).sum();
        for u in 0..rows {
            let ds = p[u] * (dp[u] - inner) * scale;
            if ds == F::zero() {
                continue;
            }
            let ks = u * h + span.start..u * h + span.end;
            axpy(ds, &keys[ks.clone()], &mut dq[span.clone()]);
            axpy(ds, &q[span.clone()], &mut dkeys[ks]);
        }
    }
    dq
}
