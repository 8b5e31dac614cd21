//! Attentive pooling over per-step recurrent outputs.
//!
//! `u_t = tanh(W_u h_t + b_w)`, `α_t = softmax_t(u_tᵀ u_w)`, `s = Σ_t α_t h_t`.

use rand::Rng;

use super::linalg::{axpy, dot, softmax, Matrix};
use super::NetError;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `attn_size × input width`
    pub w_u: Matrix,
    pub b_w: Vec<f64>,
    /// Context vector scoring each projected step.
    pub u_w: Vec<f64>,
}

impl AttentionParams {
    pub fn zeros(input_size: usize, attn_size: usize) -> Self {
        Self {
            w_u: Matrix::zeros(attn_size, input_size),
            b_w: vec![0.0; attn_size],
            u_w: vec![0.0; attn_size],
        }
    }

    pub fn init<R: Rng>(input_size: usize, attn_size: usize, rng: &mut R) -> Self {
        let w_u = Matrix::glorot(attn_size, input_size, rng);
        let u_w = Matrix::glorot(attn_size, 1, rng).as_slice().to_vec();
        Self {
            w_u,
            b_w: vec![0.0; attn_size],
            u_w,
        }
    }

    pub fn attn_size(&self) -> usize {
        self.w_u.rows()
    }

    pub fn input_size(&self) -> usize {
        self.w_u.cols()
    }
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub projected: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub summary: Vec<f64>,
}

pub(crate) fn attend(p: &AttentionParams, hidden: &[Vec<f64>]) -> AttentionCache {
    let a = p.attn_size();
    let projected: Vec<Vec<f64>> = hidden
        .iter()
        .map(|h| {
            let mut u = vec![0.0; a];
            p.w_u.affine(h, &p.b_w, &mut u);
            u.iter_mut().for_each(|v| *v = v.tanh());
            u
        })
        .collect();
    let scores: Vec<f64> = projected.iter().map(|u| dot(u, &p.u_w)).collect();
    let weights = softmax(&scores);
    let mut summary = vec![0.0; p.input_size()];
    for (alpha, h) in weights.iter().zip(hidden) {
        axpy(*alpha, h, &mut summary);
    }
    AttentionCache {
        projected,
        weights,
        summary,
    }
}

/// Pools `hidden` into a summary vector; returns `(summary, weights)`.
pub fn attention(
    p: &AttentionParams,
    hidden: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<f64>), NetError> {
    if hidden.is_empty() {
        return Err(NetError::EmptySequence);
    }
    if let Some(h) = hidden.iter().find(|h| h.len() != p.input_size()) {
        return Err(NetError::Shape(format!(
            "attention input has width {}, expected {}",
            h.len(),
            p.input_size()
        )));
    }
    let c = attend(p, hidden);
    Ok((c.summary, c.weights))
}

/// Returns the gradient for each `h_t`, accumulating parameter gradients
/// into `grad`.
pub(crate) fn attend_backward(
    p: &AttentionParams,
    hidden: &[Vec<f64>],
    cache: &AttentionCache,
    d_summary: &[f64],
    grad: &mut AttentionParams,
) -> Vec<Vec<f64>> {
    let d_alpha: Vec<f64> = hidden.iter().map(|h| dot(h, d_summary)).collect();
    let mean: f64 = cache.weights.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
    let mut d_hidden = Vec::with_capacity(hidden.len());
    let mut da = vec![0.0; p.attn_size()];
    for (t, h) in hidden.iter().enumerate() {
        let alpha = cache.weights[t];
        let d_score = alpha * (d_alpha[t] - mean);
        let u = &cache.projected[t];
        axpy(d_score, u, &mut grad.u_w);
        for k in 0..da.len() {
            da[k] = d_score * p.u_w[k] * (1.0 - u[k] * u[k]);
        }
        grad.w_u.outer_acc(&da, h);
        super::add_assign(&mut grad.b_w, &da);
        let mut dh: Vec<f64> = d_summary.iter().map(|d| alpha * d).collect();
        p.w_u.t_matvec_acc(&da, &mut dh);
        d_hidden.push(dh);
    }
    d_hidden
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_step_gets_all_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = AttentionParams::init(4, 3, &mut rng);
        let h = vec![vec![0.3, -1.0, 2.0, 0.5]];
        let (s, w) = attention(&p, &h).unwrap();
        assert_eq!(w, vec![1.0]);
        assert_eq!(s, h[0]);
    }

    #[test]
    fn identical_steps_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = AttentionParams::init(3, 8, &mut rng);
        let h = vec![vec![0.1, 0.2, -0.3]; 7];
        let (_, w) = attention(&p, &h).unwrap();
        for a in w {
            assert!((a - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_direct_transcription() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = AttentionParams::init(4, 3, &mut rng);
        let h: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let (s, w) = attention(&p, &h).unwrap();
        let scores: Vec<f64> = h
            .iter()
            .map(|ht| {
                (0..3)
                    .map(|k| {
                        let mut pre = p.b_w[k];
                        for j in 0..4 {
                            pre += p.w_u.get(k, j) * ht[j];
                        }
                        pre.tanh() * p.u_w[k]
                    })
                    .sum::<f64>()
            })
            .collect();
        let z: f64 = scores.iter().map(|e| e.exp()).sum();
        for t in 0..6 {
            assert!((w[t] - scores[t].exp() / z).abs() < 1e-14);
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for j in 0..4 {
            let direct: f64 = (0..6).map(|t| scores[t].exp() / z * h[t][j]).sum();
            assert!((s[j] - direct).abs() < 1e-13);
        }
    }

    #[test]
    fn empty_input_fails() {
        let p = AttentionParams::zeros(2, 2);
        assert!(matches!(attention(&p, &[]), Err(NetError::EmptySequence)));
    }
}
