//! Layers built from [`Graph`] primitives. Parameters are looked up by name in
//! a [`ParameterStore`]; the `register_*` helpers create them.

use rand::Rng;

use super::{Graph, ParameterStore, Var};
use crate::error::{Error, Result};

/// Registers `{prefix}.w` `[d_in, d_out]` (Glorot) and `{prefix}.b` `[d_out]` (zeros).
pub fn register_affine(
    store: &mut ParameterStore,
    prefix: &str,
    d_in: usize,
    d_out: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    store.insert_glorot(&format!("{prefix}.w"), &[d_in, d_out], rng)?;
    store.insert_zeros(&format!("{prefix}.b"), &[d_out])
}

/// `x · W + b` over the last axis.
pub fn affine(g: &mut Graph, store: &ParameterStore, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    let b = g.param(store, &format!("{prefix}.b"))?;
    let xw = g.matmul(x, w)?;
    g.add(xw, b)
}

/// Registers the three projections `{prefix}.wq`, `.wk`, `.wv`, each `[d, d]`.
pub fn register_attention(
    store: &mut ParameterStore,
    prefix: &str,
    d: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    for m in ["wq", "wk", "wv"] {
        store.insert_glorot(&format!("{prefix}.{m}"), &[d, d], rng)?;
    }
    Ok(())
}

/// Output and weights of one attention call.
#[derive(Debug, Clone, Copy)]
pub struct Attended {
    pub output: Var,
    pub weights: Var,
}

/// Single-head scaled dot-product attention,
/// `softmax((q Wq)(k Wk)ᵀ / √d) (v Wv)`.
///
/// Inputs are `[..., L, d]` for `q` and `[..., S, d]` for `k` and `v` with
/// matching leading dims. With `invariant` set, the reduction over keys is
/// order-independent, so permuting the key axis gives bit-identical results.
pub fn scaled_dot_attention(
    g: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    q: Var,
    k: Var,
    v: Var,
    invariant: bool,
) -> Result<Attended> {
    let d = *g.shape(q).last().unwrap_or(&0);
    if d == 0 {
        return Err(Error::arg("attention over zero-width features"));
    }
    for x in [k, v] {
        if g.shape(x).last() != Some(&d) {
            return Err(Error::shape("attention", g.shape(q), g.shape(x)));
        }
    }
    let wq = g.param(store, &format!("{prefix}.wq"))?;
    let wk = g.param(store, &format!("{prefix}.wk"))?;
    let wv = g.param(store, &format!("{prefix}.wv"))?;
    let qp = g.matmul(q, wq)?;
    let kp = g.matmul(k, wk)?;
    let vp = g.matmul(v, wv)?;
    let kt = g.transpose(kp)?;
    let scores = g.matmul(qp, kt)?;
    let scaled = g.scale(scores, 1.0 / (d as f64).sqrt());
    let weights = g.softmax(scaled)?;
    let output = if invariant {
        g.matmul_sorted(weights, vp)?
    } else {
        g.matmul(weights, vp)?
    };
    Ok(Attended { output, weights })
}

/// Registers `{prefix}.theta` `[taps, d, d]` and `{prefix}.b` `[d]`.
pub fn register_causal_conv(
    store: &mut ParameterStore,
    prefix: &str,
    taps: usize,
    d: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    store.insert_glorot(&format!("{prefix}.theta"), &[taps, d, d], rng)?;
    store.insert_zeros(&format!("{prefix}.b"), &[d])
}

/// Dilated causal convolution along `axis` of `x` (last axis holds `d`
/// channels): `y[t] = Σ_j x[t − dilation·j] · Θ_j + b`.
pub fn causal_conv(
    g: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    x: Var,
    axis: usize,
    dilation: usize,
) -> Result<Var> {
    if dilation == 0 {
        return Err(Error::arg("dilation must be at least 1"));
    }
    let theta = g.param(store, &format!("{prefix}.theta"))?;
    let b = g.param(store, &format!("{prefix}.b"))?;
    let ts = g.shape(theta).to_vec();
    let d = *g.shape(x).last().unwrap_or(&0);
    if ts.len() != 3 || ts[1] != d || ts[2] != d {
        return Err(Error::shape("causal_conv", g.shape(x), &ts));
    }
    let mut acc = None;
    for j in 0..ts[0] {
        let tap = g.slice(theta, 0, j, 1)?;
        let tap = g.reshape(tap, &[d, d])?;
        let shifted = g.causal_shift(x, axis, j * dilation)?;
        let term = g.matmul(shifted, tap)?;
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    let acc = acc.ok_or_else(|| Error::arg("convolution with zero taps"))?;
    g.add(acc, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn identity_attention(d: usize) -> ParameterStore {
        let mut s = ParameterStore::new();
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        for m in ["wq", "wk", "wv"] {
            s.insert(
                &format!("att.{m}"),
                Tensor::new(vec![d, d], eye.clone()).unwrap(),
            )
            .unwrap();
        }
        s
    }

    #[test]
    fn two_position_mixture_matches_hand_softmax() {
        let store = identity_attention(2);
        let mut g = Graph::new(false, 0);
        let x = g.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let a = scaled_dot_attention(&mut g, &store, "att", x, x, x, false).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let w0 = s.exp() / (s.exp() + 1.0);
        let out = g.value(a.output).data();
        assert!((out[0] - w0).abs() < 1e-15);
        assert!((out[1] - (1.0 - w0)).abs() < 1e-15);
        assert!((out[2] - (1.0 - w0)).abs() < 1e-15);
        assert!((out[3] - w0).abs() < 1e-15);
    }

    #[test]
    fn zero_width_rejected() {
        let store = identity_attention(1);
        let mut g = Graph::new(false, 0);
        let x = g.constant(Tensor::zeros(&[2, 0]));
        assert!(scaled_dot_attention(&mut g, &store, "att", x, x, x, false).is_err());
    }

    #[test]
    fn conv_with_identity_taps_adds_delayed_input() {
        let mut s = ParameterStore::new();
        s.insert(
            "c.theta",
            Tensor::new(vec![2, 1, 1], vec![1.0, 1.0]).unwrap(),
        )
        .unwrap();
        s.insert_zeros("c.b", &[1]).unwrap();
        let mut g = Graph::new(false, 0);
        let x = g.constant(Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let y = causal_conv(&mut g, &s, "c", x, 0, 2).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 4.0]);
    }
}
