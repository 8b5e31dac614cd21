//! GRU and LSTM cells with per-step caches for backpropagation through time.
//!
//! Every gate reads the concatenation `[h_prev, x]` (hidden state first).
//!
//! ```text
//! GRU:  r = σ(W_r·[h, x] + b_r)
//!       z = σ(W_z·[h, x] + b_z)
//!       g = tanh(W_h·[r∗h, x] + b_h)
//!       h' = (1 − z)∗h + z∗g
//!
//! LSTM: i, f, o = σ(W_{i,f,o}·[h, x] + b_{i,f,o})
//!       g = tanh(W_g·[h, x] + b_g)
//!       c' = f∗c + i∗g,  h' = o∗tanh(c')
//! ```

use rand::Rng;

use super::linalg::{sigmoid, Matrix};
use super::NetError;

fn check_shapes(hidden: usize, input: usize, h: &[f64], x: &[f64]) -> Result<(), NetError> {
    if h.len() != hidden {
        return Err(NetError::Shape(format!(
            "hidden state has length {}, expected {hidden}",
            h.len()
        )));
    }
    if x.len() != input {
        return Err(NetError::Shape(format!(
            "input has length {}, expected {input}",
            x.len()
        )));
    }
    Ok(())
}

fn concat(h: &[f64], x: &[f64]) -> Vec<f64> {
    let mut c = Vec::with_capacity(h.len() + x.len());
    c.extend_from_slice(h);
    c.extend_from_slice(x);
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruCellParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_r: Matrix,
    pub w_z: Matrix,
    pub w_h: Matrix,
    pub b_r: Vec<f64>,
    pub b_z: Vec<f64>,
    pub b_h: Vec<f64>,
}

impl GruCellParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let cols = hidden_size + input_size;
        Self {
            input_size,
            hidden_size,
            w_r: Matrix::zeros(hidden_size, cols),
            w_z: Matrix::zeros(hidden_size, cols),
            w_h: Matrix::zeros(hidden_size, cols),
            b_r: vec![0.0; hidden_size],
            b_z: vec![0.0; hidden_size],
            b_h: vec![0.0; hidden_size],
        }
    }

    pub fn init<R: Rng>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let cols = hidden_size + input_size;
        Self {
            w_r: Matrix::glorot(hidden_size, cols, rng),
            w_z: Matrix::glorot(hidden_size, cols, rng),
            w_h: Matrix::glorot(hidden_size, cols, rng),
            ..Self::zeros(input_size, hidden_size)
        }
    }
}

/// Intermediate values of one GRU step.
#[derive(Debug, Clone)]
pub struct GruStep {
    /// `[h_prev, x]`
    pub joined: Vec<f64>,
    /// `[r∗h_prev, x]`
    pub joined_reset: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub candidate: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn gru_step(p: &GruCellParams, h_prev: &[f64], x: &[f64]) -> GruStep {
    let n = p.hidden_size;
    let joined = concat(h_prev, x);
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    p.w_r.affine(&joined, &p.b_r, &mut r);
    p.w_z.affine(&joined, &p.b_z, &mut z);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));
    z.iter_mut().for_each(|v| *v = sigmoid(*v));
    let mut joined_reset = joined.clone();
    for (j, rv) in joined_reset[..n].iter_mut().zip(&r) {
        *j *= rv;
    }
    let mut candidate = vec![0.0; n];
    p.w_h.affine(&joined_reset, &p.b_h, &mut candidate);
    candidate.iter_mut().for_each(|v| *v = v.tanh());
    let h = (0..n)
        .map(|k| (1.0 - z[k]) * h_prev[k] + z[k] * candidate[k])
        .collect();
    GruStep {
        joined,
        joined_reset,
        r,
        z,
        candidate,
        h,
    }
}

/// One GRU update of `h_prev` with input `x`.
pub fn gru_cell(p: &GruCellParams, h_prev: &[f64], x: &[f64]) -> Result<Vec<f64>, NetError> {
    check_shapes(p.hidden_size, p.input_size, h_prev, x)?;
    Ok(gru_step(p, h_prev, x).h)
}

/// Accumulates parameter gradients of one step into `grad` and returns
/// the gradient with respect to `h_prev`.
pub fn gru_step_backward(
    p: &GruCellParams,
    step: &GruStep,
    h_prev: &[f64],
    dh: &[f64],
    grad: &mut GruCellParams,
) -> Vec<f64> {
    let n = p.hidden_size;
    let mut dh_prev = vec![0.0; n];
    let mut da_h = vec![0.0; n];
    let mut da_z = vec![0.0; n];
    for k in 0..n {
        let z = step.z[k];
        let g = step.candidate[k];
        dh_prev[k] = dh[k] * (1.0 - z);
        da_h[k] = dh[k] * z * (1.0 - g * g);
        da_z[k] = dh[k] * (g - h_prev[k]) * z * (1.0 - z);
    }
    grad.w_h.outer_acc(&da_h, &step.joined_reset);
    super::add_assign(&mut grad.b_h, &da_h);
    let mut d_joined_reset = vec![0.0; n + p.input_size];
    p.w_h.t_matvec_acc(&da_h, &mut d_joined_reset);

    let mut da_r = vec![0.0; n];
    for k in 0..n {
        let r = step.r[k];
        da_r[k] = d_joined_reset[k] * h_prev[k] * r * (1.0 - r);
        dh_prev[k] += d_joined_reset[k] * r;
    }
    grad.w_r.outer_acc(&da_r, &step.joined);
    grad.w_z.outer_acc(&da_z, &step.joined);
    super::add_assign(&mut grad.b_r, &da_r);
    super::add_assign(&mut grad.b_z, &da_z);
    let mut d_joined = vec![0.0; n + p.input_size];
    p.w_r.t_matvec_acc(&da_r, &mut d_joined);
    p.w_z.t_matvec_acc(&da_z, &mut d_joined);
    for k in 0..n {
        dh_prev[k] += d_joined[k];
    }
    dh_prev
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_i: Matrix,
    pub w_f: Matrix,
    pub w_o: Matrix,
    pub w_g: Matrix,
    pub b_i: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_o: Vec<f64>,
    pub b_g: Vec<f64>,
}

impl LstmCellParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let cols = hidden_size + input_size;
        Self {
            input_size,
            hidden_size,
            w_i: Matrix::zeros(hidden_size, cols),
            w_f: Matrix::zeros(hidden_size, cols),
            w_o: Matrix::zeros(hidden_size, cols),
            w_g: Matrix::zeros(hidden_size, cols),
            b_i: vec![0.0; hidden_size],
            b_f: vec![0.0; hidden_size],
            b_o: vec![0.0; hidden_size],
            b_g: vec![0.0; hidden_size],
        }
    }

    pub fn init<R: Rng>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let cols = hidden_size + input_size;
        Self {
            w_i: Matrix::glorot(hidden_size, cols, rng),
            w_f: Matrix::glorot(hidden_size, cols, rng),
            w_o: Matrix::glorot(hidden_size, cols, rng),
            w_g: Matrix::glorot(hidden_size, cols, rng),
            ..Self::zeros(input_size, hidden_size)
        }
    }
}

#[derive(Debug, Clone)]
pub struct LstmStep {
    pub joined: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn lstm_step(p: &LstmCellParams, h_prev: &[f64], c_prev: &[f64], x: &[f64]) -> LstmStep {
    let n = p.hidden_size;
    let joined = concat(h_prev, x);
    let mut i = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut o = vec![0.0; n];
    let mut g = vec![0.0; n];
    p.w_i.affine(&joined, &p.b_i, &mut i);
    p.w_f.affine(&joined, &p.b_f, &mut f);
    p.w_o.affine(&joined, &p.b_o, &mut o);
    p.w_g.affine(&joined, &p.b_g, &mut g);
    for k in 0..n {
        i[k] = sigmoid(i[k]);
        f[k] = sigmoid(f[k]);
        o[k] = sigmoid(o[k]);
        g[k] = g[k].tanh();
    }
    let c: Vec<f64> = (0..n).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h = (0..n).map(|k| o[k] * tanh_c[k]).collect();
    LstmStep {
        joined,
        i,
        f,
        o,
        g,
        c,
        tanh_c,
        h,
    }
}

/// One LSTM update; returns `(h, c)`.
pub fn lstm_cell(
    p: &LstmCellParams,
    h_prev: &[f64],
    c_prev: &[f64],
    x: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), NetError> {
    check_shapes(p.hidden_size, p.input_size, h_prev, x)?;
    if c_prev.len() != p.hidden_size {
        return Err(NetError::Shape(format!(
            "cell state has length {}, expected {}",
            c_prev.len(),
            p.hidden_size
        )));
    }
    let s = lstm_step(p, h_prev, c_prev, x);
    Ok((s.h, s.c))
}

/// Returns `(dh_prev, dc_prev)`. `dc` is the gradient flowing into this
/// step's cell state from the next step.
pub fn lstm_step_backward(
    p: &LstmCellParams,
    step: &LstmStep,
    c_prev: &[f64],
    dh: &[f64],
    dc: &[f64],
    grad: &mut LstmCellParams,
) -> (Vec<f64>, Vec<f64>) {
    let n = p.hidden_size;
    let mut da_i = vec![0.0; n];
    let mut da_f = vec![0.0; n];
    let mut da_o = vec![0.0; n];
    let mut da_g = vec![0.0; n];
    let mut dc_prev = vec![0.0; n];
    for k in 0..n {
        let tc = step.tanh_c[k];
        let dck = dc[k] + dh[k] * step.o[k] * (1.0 - tc * tc);
        let (i, f, o, g) = (step.i[k], step.f[k], step.o[k], step.g[k]);
        da_o[k] = dh[k] * tc * o * (1.0 - o);
        da_f[k] = dck * c_prev[k] * f * (1.0 - f);
        da_i[k] = dck * g * i * (1.0 - i);
        da_g[k] = dck * i * (1.0 - g * g);
        dc_prev[k] = dck * f;
    }
    let mut d_joined = vec![0.0; n + p.input_size];
    for (w, gw, gb, da) in [
        (&p.w_i, &mut grad.w_i, &mut grad.b_i, &da_i),
        (&p.w_f, &mut grad.w_f, &mut grad.b_f, &da_f),
        (&p.w_o, &mut grad.w_o, &mut grad.b_o, &da_o),
        (&p.w_g, &mut grad.w_g, &mut grad.b_g, &da_g),
    ] {
        gw.outer_acc(da, &step.joined);
        super::add_assign(gb, da);
        w.t_matvec_acc(da, &mut d_joined);
    }
    d_joined.truncate(n);
    (d_joined, dc_prev)
}

/// A recurrent cell of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum CellParams {
    Gru(GruCellParams),
    Lstm(LstmCellParams),
}

/// Cached forward pass of one cell over a sequence.
#[derive(Debug, Clone)]
pub enum ScanCache {
    Gru(Vec<GruStep>),
    Lstm(Vec<LstmStep>),
}

impl ScanCache {
    pub fn len(&self) -> usize {
        match self {
            ScanCache::Gru(s) => s.len(),
            ScanCache::Lstm(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hidden(&self, t: usize) -> &[f64] {
        match self {
            ScanCache::Gru(s) => &s[t].h,
            ScanCache::Lstm(s) => &s[t].h,
        }
    }
}

impl CellParams {
    pub fn hidden_size(&self) -> usize {
        match self {
            CellParams::Gru(p) => p.hidden_size,
            CellParams::Lstm(p) => p.hidden_size,
        }
    }

    pub fn input_size(&self) -> usize {
        match self {
            CellParams::Gru(p) => p.input_size,
            CellParams::Lstm(p) => p.input_size,
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            CellParams::Gru(p) => {
                CellParams::Gru(GruCellParams::zeros(p.input_size, p.hidden_size))
            }
            CellParams::Lstm(p) => {
                CellParams::Lstm(LstmCellParams::zeros(p.input_size, p.hidden_size))
            }
        }
    }

    /// Runs the cell over `inputs` from a zero state.
    pub fn scan<'a, I>(&self, inputs: I) -> ScanCache
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        match self {
            CellParams::Gru(p) => {
                let mut steps: Vec<GruStep> = Vec::new();
                let zero = vec![0.0; p.hidden_size];
                for x in inputs {
                    let h_prev = steps.last().map_or(&zero[..], |s| &s.h[..]);
                    let s = gru_step(p, h_prev, x);
                    steps.push(s);
                }
                ScanCache::Gru(steps)
            }
            CellParams::Lstm(p) => {
                let mut steps: Vec<LstmStep> = Vec::new();
                let zero = vec![0.0; p.hidden_size];
                for x in inputs {
                    let (h_prev, c_prev) = steps
                        .last()
                        .map_or((&zero[..], &zero[..]), |s| (&s.h[..], &s.c[..]));
                    let s = lstm_step(p, h_prev, c_prev, x);
                    steps.push(s);
                }
                ScanCache::Lstm(steps)
            }
        }
    }

    /// Backpropagation through time. `dhs[t]` is the loss gradient arriving
    /// at the output of step `t` from above; gradients accumulate into
    /// `grad`, which must be the same kind of cell.
    pub fn scan_backward(&self, cache: &ScanCache, dhs: &[Vec<f64>], grad: &mut CellParams) {
        match (self, cache, grad) {
            (CellParams::Gru(p), ScanCache::Gru(steps), CellParams::Gru(g)) => {
                let zero = vec![0.0; p.hidden_size];
                let mut carry = vec![0.0; p.hidden_size];
                for t in (0..steps.len()).rev() {
                    let dh: Vec<f64> = dhs[t].iter().zip(&carry).map(|(a, b)| a + b).collect();
                    let h_prev = if t == 0 {
                        &zero[..]
                    } else {
                        &steps[t - 1].h[..]
                    };
                    carry = gru_step_backward(p, &steps[t], h_prev, &dh, g);
                }
            }
            (CellParams::Lstm(p), ScanCache::Lstm(steps), CellParams::Lstm(g)) => {
                let zero = vec![0.0; p.hidden_size];
                let mut carry_h = vec![0.0; p.hidden_size];
                let mut carry_c = vec![0.0; p.hidden_size];
                for t in (0..steps.len()).rev() {
                    let dh: Vec<f64> = dhs[t].iter().zip(&carry_h).map(|(a, b)| a + b).collect();
                    let c_prev = if t == 0 {
                        &zero[..]
                    } else {
                        &steps[t - 1].c[..]
                    };
                    (carry_h, carry_c) = lstm_step_backward(p, &steps[t], c_prev, &dh, &carry_c, g);
                }
            }
            _ => panic!("cell, cache and gradient kinds differ"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Scalar transcription of the GRU equations.
    fn gru_oracle(p: &GruCellParams, h: &[f64], x: &[f64]) -> Vec<f64> {
        let n = p.hidden_size;
        let m = p.input_size;
        let pre = |w: &Matrix, b: &[f64], k: usize, hh: &[f64]| {
            let mut s = b[k];
            for j in 0..n {
                s += w.get(k, j) * hh[j];
            }
            for j in 0..m {
                s += w.get(k, n + j) * x[j];
            }
            s
        };
        let r: Vec<f64> = (0..n).map(|k| sig(pre(&p.w_r, &p.b_r, k, h))).collect();
        let z: Vec<f64> = (0..n).map(|k| sig(pre(&p.w_z, &p.b_z, k, h))).collect();
        let rh: Vec<f64> = (0..n).map(|k| r[k] * h[k]).collect();
        (0..n)
            .map(|k| {
                let cand = pre(&p.w_h, &p.b_h, k, &rh).tanh();
                (1.0 - z[k]) * h[k] + z[k] * cand
            })
            .collect()
    }

    fn lstm_oracle(p: &LstmCellParams, h: &[f64], c: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = p.hidden_size;
        let pre = |w: &Matrix, b: &[f64], k: usize| {
            let mut s = b[k];
            for (j, v) in h.iter().chain(x).enumerate() {
                s += w.get(k, j) * v;
            }
            s
        };
        let mut hs = Vec::new();
        let mut cs = Vec::new();
        for k in 0..n {
            let i = sig(pre(&p.w_i, &p.b_i, k));
            let f = sig(pre(&p.w_f, &p.b_f, k));
            let o = sig(pre(&p.w_o, &p.b_o, k));
            let g = pre(&p.w_g, &p.b_g, k).tanh();
            let cn = f * c[k] + i * g;
            cs.push(cn);
            hs.push(o * cn.tanh());
        }
        (hs, cs)
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()
    }

    #[test]
    fn gru_zero_weights_halve_state() {
        let p = GruCellParams::zeros(1, 3);
        let h = gru_cell(&p, &[0.4, -2.0, 1.0], &[7.0]).unwrap();
        assert_eq!(h, vec![0.2, -1.0, 0.5]);
        let h = gru_cell(&p, &[0.0; 3], &[0.0]).unwrap();
        assert_eq!(h, vec![0.0; 3]);
    }

    #[test]
    fn gru_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut p = GruCellParams::init(2, 5, &mut rng);
            p.b_r = random_vec(5, &mut rng);
            p.b_z = random_vec(5, &mut rng);
            p.b_h = random_vec(5, &mut rng);
            let h = random_vec(5, &mut rng);
            let x = random_vec(2, &mut rng);
            let got = gru_cell(&p, &h, &x).unwrap();
            for (a, b) in got.iter().zip(gru_oracle(&p, &h, &x)) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gru_shape_mismatch() {
        let p = GruCellParams::zeros(1, 3);
        assert!(matches!(
            gru_cell(&p, &[0.0; 2], &[0.0]),
            Err(NetError::Shape(_))
        ));
        assert!(matches!(
            gru_cell(&p, &[0.0; 3], &[0.0; 2]),
            Err(NetError::Shape(_))
        ));
    }

    #[test]
    fn lstm_zero_weights() {
        let p = LstmCellParams::zeros(1, 2);
        let (h, c) = lstm_cell(&p, &[3.0, 1.0], &[0.8, -4.0], &[2.0]).unwrap();
        assert_eq!(c, vec![0.4, -2.0]);
        assert_eq!(h, vec![0.5 * 0.4f64.tanh(), 0.5 * (-2.0f64).tanh()]);
        let (h, c) = lstm_cell(&p, &[0.0; 2], &[0.0; 2], &[0.0]).unwrap();
        assert_eq!((h, c), (vec![0.0; 2], vec![0.0; 2]));
    }

    #[test]
    fn lstm_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let mut p = LstmCellParams::init(1, 4, &mut rng);
            p.b_f = random_vec(4, &mut rng);
            p.b_g = random_vec(4, &mut rng);
            let h = random_vec(4, &mut rng);
            let c = random_vec(4, &mut rng);
            let x = random_vec(1, &mut rng);
            let (gh, gc) = lstm_cell(&p, &h, &c, &x).unwrap();
            let (oh, oc) = lstm_oracle(&p, &h, &c, &x);
            for (a, b) in gh.iter().chain(&gc).zip(oh.iter().chain(&oc)) {
                assert!((a - b).abs() < 1e-14);
            }
        }
        assert!(lstm_cell(&LstmCellParams::zeros(1, 2), &[0.0; 2], &[0.0], &[0.0]).is_err());
    }
}
