//! Cross-attention fusion between two equally shaped feature streams.
//!
//! With `L = H * W` positions and channel projections applied per position:
//!
//! ```text
//! Q = Wq Fa, K = Wk Fb                (C' x L)
//! A = softmax_rows(Q^T K / sqrt(C'))  (L x L)
//! Fa' = Fa + gate_a * (Vb Fb) A^T
//! Fb' = Fb + gate_b * (Va Fa) A
//! ```
//!
//! Gates start at zero, so a freshly initialized block is the identity.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_nt, matmul_tn, FeatureMap};

/// Learnable parameters of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct MixBlockParams {
    pub channels: usize,
    pub reduced: usize,
    /// `reduced × channels`
    pub query: Vec<f64>,
    /// `reduced × channels`
    pub key: Vec<f64>,
    /// `channels × channels`, projects stream A values into stream B.
    pub value_a: Vec<f64>,
    /// `channels × channels`, projects stream B values into stream A.
    pub value_b: Vec<f64>,
    pub gate_a: f64,
    pub gate_b: f64,
}

/// Reduced query/key width for `channels` input channels.
pub fn reduced_channels(channels: usize) -> usize {
    (channels / 8).max(1)
}

impl MixBlockParams {
    /// All-zero parameters (useful as a gradient accumulator).
    pub fn zeros(channels: usize) -> Self {
        let reduced = reduced_channels(channels);
        Self {
            channels,
            reduced,
            query: vec![0.0; reduced * channels],
            key: vec![0.0; reduced * channels],
            value_a: vec![0.0; channels * channels],
            value_b: vec![0.0; channels * channels],
            gate_a: 0.0,
            gate_b: 0.0,
        }
    }

    /// Gaussian projections with variance `1 / channels`; gates at zero.
    pub fn init<R: Rng>(channels: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(channels);
        let normal = Normal::new(0.0, 1.0 / (channels as f64).sqrt()).expect("finite std");
        for v in p
            .query
            .iter_mut()
            .chain(p.key.iter_mut())
            .chain(p.value_a.iter_mut())
            .chain(p.value_b.iter_mut())
        {
            *v = normal.sample(rng);
        }
        p
    }

    /// Named views over every learnable tensor, in a fixed order.
    pub fn tensors(&self) -> [(&'static str, &[f64]); 6] {
        [
            ("query", &self.query),
            ("key", &self.key),
            ("value_a", &self.value_a),
            ("value_b", &self.value_b),
            ("gate_a", std::slice::from_ref(&self.gate_a)),
            ("gate_b", std::slice::from_ref(&self.gate_b)),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 6] {
        [
            ("query", &mut self.query),
            ("key", &mut self.key),
            ("value_a", &mut self.value_a),
            ("value_b", &mut self.value_b),
            ("gate_a", std::slice::from_mut(&mut self.gate_a)),
            ("gate_b", std::slice::from_mut(&mut self.gate_b)),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Intermediate values of a forward pass.
#[derive(Clone, Debug)]
pub struct MixBlockTrace {
    /// Row-stochastic `L × L` attention matrix.
    pub attention: Vec<f64>,
    /// `Vb Fb` (`C × L`)
    pub values_b: Vec<f64>,
    /// `Va Fa` (`C × L`)
    pub values_a: Vec<f64>,
    query: Vec<f64>,
    key: Vec<f64>,
}

fn check_shapes(fa: &FeatureMap, fb: &FeatureMap, params: &MixBlockParams) -> Result<()> {
    if fa.shape() != fb.shape() {
        return Err(Error::arg(format!(
            "stream shapes differ: {:?} vs {:?}",
            fa.shape(),
            fb.shape()
        )));
    }
    if fa.channels() != params.channels {
        return Err(Error::arg(format!(
            "block expects {} channels, got {}",
            params.channels,
            fa.channels()
        )));
    }
    Ok(())
}

/// In-place numerically stable softmax of every row of an `n × n` matrix.
fn softmax_rows(m: &mut [f64], n: usize) {
    for row in m.chunks_mut(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
}

fn attention(
    fa: &FeatureMap,
    fb: &FeatureMap,
    params: &MixBlockParams,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (c, r, l) = (params.channels, params.reduced, fa.area());
    let query = matmul(&params.query, fa.data(), r, c, l);
    let key = matmul(&params.key, fb.data(), r, c, l);
    let mut scores = matmul_tn(&query, &key, l, r, l);
    let scale = 1.0 / (r as f64).sqrt();
    scores.iter_mut().for_each(|s| *s *= scale);
    softmax_rows(&mut scores, l);
    (query, key, scores)
}

/// Forward pass, also returning the intermediates.
pub fn mixblock_forward_traced(
    fa: &FeatureMap,
    fb: &FeatureMap,
    params: &MixBlockParams,
) -> Result<(FeatureMap, FeatureMap, MixBlockTrace)> {
    check_shapes(fa, fb, params)?;
    let (c, l) = (params.channels, fa.area());
    let (query, key, attn) = attention(fa, fb, params);
    let values_b = matmul(&params.value_b, fb.data(), c, c, l);
    let values_a = matmul(&params.value_a, fa.data(), c, c, l);

    let mut out_a = fa.clone();
    if params.gate_a != 0.0 {
        let mixed = matmul_nt(&values_b, &attn, c, l, l);
        for (o, m) in out_a.data_mut().iter_mut().zip(&mixed) {
            *o += params.gate_a * m;
        }
    }
    let mut out_b = fb.clone();
    if params.gate_b != 0.0 {
        let mixed = matmul(&values_a, &attn, c, l, l);
        for (o, m) in out_b.data_mut().iter_mut().zip(&mixed) {
            *o += params.gate_b * m;
        }
    }
    Ok((
        out_a,
        out_b,
        MixBlockTrace {
            attention: attn,
            values_b,
            values_a,
            query,
            key,
        },
    ))
}

pub fn mixblock_forward(
    fa: &FeatureMap,
    fb: &FeatureMap,
    params: &MixBlockParams,
) -> Result<(FeatureMap, FeatureMap)> {
    let (a, b, _) = mixblock_forward_traced(fa, fb, params)?;
    Ok((a, b))
}

/// Gradients of a block.
#[derive(Clone, Debug)]
pub struct MixBlockGrads {
    pub input_a: FeatureMap,
    pub input_b: FeatureMap,
    pub params: MixBlockParams,
}

/// Reverse-mode gradients given `dL/dFa'` and `dL/dFb'`.
pub fn mixblock_backward(
    grad_a: &FeatureMap,
    grad_b: &FeatureMap,
    fa: &FeatureMap,
    fb: &FeatureMap,
    params: &MixBlockParams,
) -> Result<MixBlockGrads> {
    check_shapes(fa, fb, params)?;
    if grad_a.shape() != fa.shape() || grad_b.shape() != fb.shape() {
        return Err(Error::arg("upstream gradient shape mismatch"));
    }
    let (_, _, trace) = mixblock_forward_traced(fa, fb, params)?;
    let (c, r, l) = (params.channels, params.reduced, fa.area());
    let attn = &trace.attention;
    let mut dp = MixBlockParams::zeros(c);

    // Residual paths.
    let mut d_fa = grad_a.clone();
    let mut d_fb = grad_b.clone();

    // Gate gradients: <upstream, attended values>.
    let mixed_a = matmul_nt(&trace.values_b, attn, c, l, l);
    let mixed_b = matmul(&trace.values_a, attn, c, l, l);
    dp.gate_a = grad_a.data().iter().zip(&mixed_a).map(|(g, m)| g * m).sum();
    dp.gate_b = grad_b.data().iter().zip(&mixed_b).map(|(g, m)| g * m).sum();

    let d_mixed_a: Vec<f64> = grad_a.data().iter().map(|g| g * params.gate_a).collect();
    let d_mixed_b: Vec<f64> = grad_b.data().iter().map(|g| g * params.gate_b).collect();

    // mixed_a = Ub A^T: dUb = dMa A, dA += dMa^T Ub
    let d_values_b = matmul(&d_mixed_a, attn, c, l, l);
    let mut d_attn = matmul_tn(&d_mixed_a, &trace.values_b, l, c, l);
    // mixed_b = Ua A: dUa = dMb A^T, dA += Ua^T dMb
    let d_values_a = matmul_nt(&d_mixed_b, attn, c, l, l);
    let extra = matmul_tn(&trace.values_a, &d_mixed_b, l, c, l);
    for (d, e) in d_attn.iter_mut().zip(&extra) {
        *d += e;
    }

    // Value projections.
    dp.value_b = matmul_nt(&d_values_b, fb.data(), c, l, c);
    dp.value_a = matmul_nt(&d_values_a, fa.data(), c, l, c);
    for (d, e) in d_fb
        .data_mut()
        .iter_mut()
        .zip(matmul_tn(&params.value_b, &d_values_b, c, c, l))
    {
        *d += e;
    }
    for (d, e) in d_fa
        .data_mut()
        .iter_mut()
        .zip(matmul_tn(&params.value_a, &d_values_a, c, c, l))
    {
        *d += e;
    }

    // Softmax rows: dS = A * (dA - <dA, A>_row)
    let mut d_scores = vec![0.0; l * l];
    for ((ds, a), da) in d_scores
        .chunks_mut(l)
        .zip(attn.chunks(l))
        .zip(d_attn.chunks(l))
    {
        let inner: f64 = a.iter().zip(da).map(|(x, y)| x * y).sum();
        for ((s, x), y) in ds.iter_mut().zip(a).zip(da) {
            *s = x * (y - inner);
        }
    }
    let scale = 1.0 / (r as f64).sqrt();
    d_scores.iter_mut().for_each(|s| *s *= scale);

    // S = Q^T K: dQ = K dS^T, dK = Q dS
    let d_query = matmul_nt(&trace.key, &d_scores, r, l, l);
    let d_key = matmul(&trace.query, &d_scores, r, l, l);
    dp.query = matmul_nt(&d_query, fa.data(), r, l, c);
    dp.key = matmul_nt(&d_key, fb.data(), r, l, c);
    for (d, e) in d_fa
        .data_mut()
        .iter_mut()
        .zip(matmul_tn(&params.query, &d_query, c, r, l))
    {
        *d += e;
    }
    for (d, e) in d_fb
        .data_mut()
        .iter_mut()
        .zip(matmul_tn(&params.key, &d_key, c, r, l))
    {
        *d += e;
    }

    Ok(MixBlockGrads {
        input_a: d_fa,
        input_b: d_fb,
        params: dp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
        FeatureMap::from_vec(
            c,
            h,
            w,
            (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_gates_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (c, h, w) in [(2, 2, 2), (16, 4, 3), (9, 1, 5)] {
            let p = MixBlockParams::init(c, &mut rng);
            let fa = random_map(&mut rng, c, h, w);
            let fb = random_map(&mut rng, c, h, w);
            let (oa, ob) = mixblock_forward(&fa, &fb, &p).unwrap();
            assert_eq!(oa, fa);
            assert_eq!(ob, fb);
        }
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = MixBlockParams::init(16, &mut rng);
        let fa = random_map(&mut rng, 16, 3, 4);
        let fb = random_map(&mut rng, 16, 3, 4);
        let (_, _, t) = mixblock_forward_traced(&fa, &fb, &p).unwrap();
        for row in t.attention.chunks(12) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&a| (0.0..=1.0).contains(&a)));
        }
    }

    #[test]
    fn reduced_width() {
        assert_eq!(reduced_channels(2), 1);
        assert_eq!(reduced_channels(16), 2);
        assert_eq!(reduced_channels(32), 4);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MixBlockParams::init(2, &mut rng);
        let fa = random_map(&mut rng, 2, 2, 2);
        let fb = random_map(&mut rng, 2, 2, 3);
        assert!(mixblock_forward(&fa, &fb, &p).is_err());
        let fc = random_map(&mut rng, 3, 2, 2);
        assert!(mixblock_forward(&fc, &fc, &p).is_err());
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = MixBlockParams::init(4, &mut rng);
        p.gate_a = 0.3;
        p.gate_b = -0.7;
        let fa = random_map(&mut rng, 4, 2, 3);
        let fb = random_map(&mut rng, 4, 2, 3);
        let z = FeatureMap::zeros(4, 2, 3);
        let g = mixblock_backward(&z, &z, &fa, &fb, &p).unwrap();
        assert!(g.input_a.data().iter().all(|&v| v == 0.0));
        assert!(g.input_b.data().iter().all(|&v| v == 0.0));
        assert!(g
            .params
            .tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_gate_gradients_flow_only_through_gates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = MixBlockParams::init(2, &mut rng);
        let fa = random_map(&mut rng, 2, 2, 2);
        let fb = random_map(&mut rng, 2, 2, 2);
        let ga = random_map(&mut rng, 2, 2, 2);
        let gb = random_map(&mut rng, 2, 2, 2);
        let g = mixblock_backward(&ga, &gb, &fa, &fb, &p).unwrap();
        assert_eq!(g.input_a, ga);
        assert_eq!(g.input_b, gb);
        let (_, _, t) = mixblock_forward_traced(&fa, &fb, &p).unwrap();
        let attended = matmul_nt(&t.values_b, &t.attention, 2, 4, 4);
        let expected: f64 = ga.data().iter().zip(&attended).map(|(a, b)| a * b).sum();
        assert!((g.params.gate_a - expected).abs() < 1e-12);
        assert!(g
            .params
            .query
            .iter()
            .chain(&g.params.value_b)
            .all(|&v| v == 0.0));
    }
}
