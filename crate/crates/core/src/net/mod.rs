//! Recurrent respiration classifiers trained from scratch.
//!
//! Four architectures share one parameter container:
//!
//! | variant     | recurrent layer        | pooling        |
//! |-------------|------------------------|----------------|
//! | `BiGRU-AT`  | bidirectional GRU      | attention      |
//! | `GRU-AT`    | GRU                    | attention      |
//! | `BiLSTM-AT` | bidirectional LSTM     | attention      |
//! | `LSTM`      | LSTM                   | last state     |
//!
//! followed by a 2-way dense layer and softmax (normal, abnormal). Each
//! trace sample enters the network as a 1-dimensional input vector.

pub mod attention;
pub mod cell;
pub mod checkpoint;
pub mod linalg;
pub mod train;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use attention::{attention, AttentionParams};
pub use cell::{gru_cell, lstm_cell, CellParams, GruCellParams, LstmCellParams, ScanCache};
pub use checkpoint::{load_model, save_model};
pub use linalg::Matrix;
pub use train::{train, EpochLog, TrainConfig};

use crate::frameio::Label;
use attention::{attend, attend_backward, AttentionCache};
use linalg::softmax;

/// Hidden units per recurrent direction.
pub const DEFAULT_HIDDEN: usize = 32;
/// Width of the attention projection.
pub const DEFAULT_ATTN: usize = 8;
/// Clamp applied to probabilities inside the log of the loss.
pub const LOSS_EPSILON: f64 = 1e-12;

const NORMALIZATION_TOLERANCE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sequence is empty")]
    EmptySequence,
    #[error(
        "input is not normalised (mean {mean:.3}, std {std:.3}); normalise traces before inference"
    )]
    NotNormalized { mean: f64, std: f64 },
    #[error("training example {0} has no label")]
    MissingLabel(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("loss diverged (non-finite) at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("unknown model variant {0:?}")]
    UnknownVariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;

pub(crate) fn add_assign(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    BiGruAt,
    GruAt,
    BiLstmAt,
    Lstm,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::BiGruAt,
        Variant::GruAt,
        Variant::BiLstmAt,
        Variant::Lstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::BiGruAt => "BiGRU-AT",
            Variant::GruAt => "GRU-AT",
            Variant::BiLstmAt => "BiLSTM-AT",
            Variant::Lstm => "LSTM",
        }
    }

    pub fn bidirectional(self) -> bool {
        matches!(self, Variant::BiGruAt | Variant::BiLstmAt)
    }

    pub fn uses_attention(self) -> bool {
        !matches!(self, Variant::Lstm)
    }

    pub fn uses_gru(self) -> bool {
        matches!(self, Variant::BiGruAt | Variant::GruAt)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "bigruat" => Ok(Variant::BiGruAt),
            "gruat" => Ok(Variant::GruAt),
            "bilstmat" => Ok(Variant::BiLstmAt),
            "lstm" => Ok(Variant::Lstm),
            _ => Err(NetError::UnknownVariant(s.to_string())),
        }
    }
}

/// Architecture descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub variant: Variant,
    pub input_size: usize,
    pub hidden_size: usize,
    pub attn_size: usize,
}

impl Architecture {
    pub fn new(variant: Variant, hidden_size: usize, attn_size: usize) -> Self {
        Self {
            variant,
            input_size: 1,
            hidden_size,
            attn_size,
        }
    }

    pub fn summary_size(&self) -> usize {
        if self.variant.bidirectional() {
            2 * self.hidden_size
        } else {
            self.hidden_size
        }
    }
}

/// All trainable weights of a classifier. Also used as the gradient
/// container, since gradients share the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub forward_cell: CellParams,
    pub backward_cell: Option<CellParams>,
    pub attention: Option<AttentionParams>,
    /// `2 × summary_size`
    pub dense_w: Matrix,
    pub dense_b: Vec<f64>,
}

/// Borrowed view of one named parameter block.
pub struct Block<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: &'a [f64],
}

pub struct BlockMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: &'a mut [f64],
}

fn cell_blocks_mut<'a>(prefix: &str, cell: &'a mut CellParams, out: &mut Vec<BlockMut<'a>>) {
    let mut push = |name: &str, shape: Vec<usize>, values: &'a mut [f64]| {
        out.push(BlockMut {
            name: format!("{prefix}.{name}"),
            shape,
            values,
        })
    };
    match cell {
        CellParams::Gru(p) => {
            let (r, c) = (p.w_r.rows(), p.w_r.cols());
            push("w_r", vec![r, c], p.w_r.as_mut_slice());
            push("w_z", vec![r, c], p.w_z.as_mut_slice());
            push("w_h", vec![r, c], p.w_h.as_mut_slice());
            push("b_r", vec![r], &mut p.b_r);
            push("b_z", vec![r], &mut p.b_z);
            push("b_h", vec![r], &mut p.b_h);
        }
        CellParams::Lstm(p) => {
            let (r, c) = (p.w_i.rows(), p.w_i.cols());
            push("w_i", vec![r, c], p.w_i.as_mut_slice());
            push("w_f", vec![r, c], p.w_f.as_mut_slice());
            push("w_o", vec![r, c], p.w_o.as_mut_slice());
            push("w_g", vec![r, c], p.w_g.as_mut_slice());
            push("b_i", vec![r], &mut p.b_i);
            push("b_f", vec![r], &mut p.b_f);
            push("b_o", vec![r], &mut p.b_o);
            push("b_g", vec![r], &mut p.b_g);
        }
    }
}

impl ModelParams {
    /// All-zero parameters for `arch`.
    pub fn zeros(arch: Architecture) -> Self {
        let (i, h, a) = (arch.input_size, arch.hidden_size, arch.attn_size);
        let cell = || {
            if arch.variant.uses_gru() {
                CellParams::Gru(GruCellParams::zeros(i, h))
            } else {
                CellParams::Lstm(LstmCellParams::zeros(i, h))
            }
        };
        Self {
            arch,
            forward_cell: cell(),
            backward_cell: arch.variant.bidirectional().then(cell),
            attention: arch
                .variant
                .uses_attention()
                .then(|| AttentionParams::zeros(arch.summary_size(), a)),
            dense_w: Matrix::zeros(2, arch.summary_size()),
            dense_b: vec![0.0; 2],
        }
    }

    /// Glorot-uniform weight matrices and zero biases, drawn from `seed`.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (i, h, a) = (arch.input_size, arch.hidden_size, arch.attn_size);
        let cell = |rng: &mut ChaCha8Rng| {
            if arch.variant.uses_gru() {
                CellParams::Gru(GruCellParams::init(i, h, rng))
            } else {
                CellParams::Lstm(LstmCellParams::init(i, h, rng))
            }
        };
        let forward_cell = cell(&mut rng);
        let backward_cell = arch.variant.bidirectional().then(|| cell(&mut rng));
        let attention = arch
            .variant
            .uses_attention()
            .then(|| AttentionParams::init(arch.summary_size(), a, &mut rng));
        let dense_w = Matrix::glorot(2, arch.summary_size(), &mut rng);
        Self {
            arch,
            forward_cell,
            backward_cell,
            attention,
            dense_w,
            dense_b: vec![0.0; 2],
        }
    }

    pub fn variant(&self) -> Variant {
        self.arch.variant
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.arch)
    }

    pub fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let mut out = Vec::new();
        cell_blocks_mut("forward", &mut self.forward_cell, &mut out);
        if let Some(c) = self.backward_cell.as_mut() {
            cell_blocks_mut("backward", c, &mut out);
        }
        if let Some(a) = self.attention.as_mut() {
            let (r, c) = (a.w_u.rows(), a.w_u.cols());
            out.push(BlockMut {
                name: "attention.w_u".into(),
                shape: vec![r, c],
                values: a.w_u.as_mut_slice(),
            });
            out.push(BlockMut {
                name: "attention.b_w".into(),
                shape: vec![r],
                values: &mut a.b_w,
            });
            out.push(BlockMut {
                name: "attention.u_w".into(),
                shape: vec![r],
                values: &mut a.u_w,
            });
        }
        let (r, c) = (self.dense_w.rows(), self.dense_w.cols());
        out.push(BlockMut {
            name: "dense.w".into(),
            shape: vec![r, c],
            values: self.dense_w.as_mut_slice(),
        });
        out.push(BlockMut {
            name: "dense.b".into(),
            shape: vec![2],
            values: &mut self.dense_b,
        });
        out
    }

    /// Named parameter blocks in a fixed order.
    pub fn blocks(&self) -> Vec<Block<'_>> {
        // same order as blocks_mut
        let mut out = Vec::new();
        fn push_cell<'a>(prefix: &str, c: &'a CellParams) -> Vec<Block<'a>> {
            let mut v = Vec::new();
            let mut add = |name: &str, shape: Vec<usize>, values| {
                v.push(Block {
                    name: format!("{prefix}.{name}"),
                    shape,
                    values,
                })
            };
            match c {
                CellParams::Gru(p) => {
                    let (r, cc) = (p.w_r.rows(), p.w_r.cols());
                    add("w_r", vec![r, cc], p.w_r.as_slice());
                    add("w_z", vec![r, cc], p.w_z.as_slice());
                    add("w_h", vec![r, cc], p.w_h.as_slice());
                    add("b_r", vec![r], &p.b_r[..]);
                    add("b_z", vec![r], &p.b_z[..]);
                    add("b_h", vec![r], &p.b_h[..]);
                }
                CellParams::Lstm(p) => {
                    let (r, cc) = (p.w_i.rows(), p.w_i.cols());
                    add("w_i", vec![r, cc], p.w_i.as_slice());
                    add("w_f", vec![r, cc], p.w_f.as_slice());
                    add("w_o", vec![r, cc], p.w_o.as_slice());
                    add("w_g", vec![r, cc], p.w_g.as_slice());
                    add("b_i", vec![r], &p.b_i[..]);
                    add("b_f", vec![r], &p.b_f[..]);
                    add("b_o", vec![r], &p.b_o[..]);
                    add("b_g", vec![r], &p.b_g[..]);
                }
            }
            v
        }
        out.extend(push_cell("forward", &self.forward_cell));
        if let Some(c) = &self.backward_cell {
            out.extend(push_cell("backward", c));
        }
        if let Some(a) = &self.attention {
            let (r, c) = (a.w_u.rows(), a.w_u.cols());
            out.push(Block {
                name: "attention.w_u".into(),
                shape: vec![r, c],
                values: a.w_u.as_slice(),
            });
            out.push(Block {
                name: "attention.b_w".into(),
                shape: vec![r],
                values: &a.b_w,
            });
            out.push(Block {
                name: "attention.u_w".into(),
                shape: vec![r],
                values: &a.u_w,
            });
        }
        out.push(Block {
            name: "dense.w".into(),
            shape: vec![self.dense_w.rows(), self.dense_w.cols()],
            values: self.dense_w.as_slice(),
        });
        out.push(Block {
            name: "dense.b".into(),
            shape: vec![2],
            values: &self.dense_b,
        });
        out
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.values.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.values.iter().all(|v| v.is_finite()))
    }

    /// `self += scale · other`, block by block.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        let src = other.blocks();
        for (dst, src) in self.blocks_mut().into_iter().zip(src) {
            for (d, s) in dst.values.iter_mut().zip(src.values) {
                *d += scale * s;
            }
        }
    }
}

/// Outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Per-step recurrent output; `[forward, backward]` for bidirectional
    /// variants.
    pub hidden: Vec<Vec<f64>>,
    /// Attention weights per step (absent for the plain LSTM variant).
    pub attention: Option<Vec<f64>>,
    pub summary: Vec<f64>,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

struct Pass {
    forward: ScanCache,
    backward: Option<ScanCache>,
    hidden: Vec<Vec<f64>>,
    attention: Option<AttentionCache>,
    summary: Vec<f64>,
    logits: Vec<f64>,
    probabilities: Vec<f64>,
}

fn join_directions(forward: &ScanCache, backward: Option<&ScanCache>) -> Vec<Vec<f64>> {
    let t_len = forward.len();
    (0..t_len)
        .map(|t| {
            let mut h = forward.hidden(t).to_vec();
            if let Some(b) = backward {
                h.extend_from_slice(b.hidden(t_len - 1 - t));
            }
            h
        })
        .collect()
}

/// Runs `forward_cell` over the sequence and `backward_cell` over its
/// reverse; output `t` is `[→h_t, ←h_t]`.
pub fn bidirectional_scan(
    forward_cell: &CellParams,
    backward_cell: &CellParams,
    sequence: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    if sequence.is_empty() {
        return Err(NetError::EmptySequence);
    }
    for cell in [forward_cell, backward_cell] {
        if let Some(x) = sequence.iter().find(|x| x.len() != cell.input_size()) {
            return Err(NetError::Shape(format!(
                "input has width {}, cell expects {}",
                x.len(),
                cell.input_size()
            )));
        }
    }
    let fwd = forward_cell.scan(sequence.iter().map(Vec::as_slice));
    let bwd = backward_cell.scan(sequence.iter().rev().map(Vec::as_slice));
    Ok(join_directions(&fwd, Some(&bwd)))
}

impl ModelParams {
    fn run(&self, inputs: &[f64]) -> Pass {
        let width = self.arch.input_size;
        let forward = self.forward_cell.scan(inputs.chunks(width));
        let backward = self
            .backward_cell
            .as_ref()
            .map(|c| c.scan(inputs.chunks(width).rev()));
        let hidden = join_directions(&forward, backward.as_ref());
        let (attention, summary) = match &self.attention {
            Some(p) => {
                let cache = attend(p, &hidden);
                let s = cache.summary.clone();
                (Some(cache), s)
            }
            None => (None, hidden.last().expect("nonempty").clone()),
        };
        let mut logits = vec![0.0; 2];
        self.dense_w.affine(&summary, &self.dense_b, &mut logits);
        let probabilities = softmax(&logits);
        Pass {
            forward,
            backward,
            hidden,
            attention,
            summary,
            logits,
            probabilities,
        }
    }

    fn check_inputs(&self, inputs: &[f64]) -> Result<()> {
        if inputs.is_empty() {
            return Err(NetError::EmptySequence);
        }
        if !inputs.len().is_multiple_of(self.arch.input_size) {
            return Err(NetError::Shape(format!(
                "{} values do not split into steps of width {}",
                inputs.len(),
                self.arch.input_size
            )));
        }
        Ok(())
    }

    /// Forward pass on a normalised trace. Traces of two or more samples
    /// whose mean or standard deviation is off by more than 0.1 are
    /// rejected as pipeline misuse.
    pub fn forward(&self, trace: &[f64]) -> Result<ForwardTrace> {
        self.check_inputs(trace)?;
        if trace.len() >= 2 {
            let n = trace.len() as f64;
            let mean = trace.iter().sum::<f64>() / n;
            let std = (trace.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            if mean.abs() > NORMALIZATION_TOLERANCE || (std - 1.0).abs() > NORMALIZATION_TOLERANCE {
                return Err(NetError::NotNormalized { mean, std });
            }
        }
        self.forward_unchecked(trace)
    }

    /// Forward pass without the normalisation check.
    pub fn forward_unchecked(&self, inputs: &[f64]) -> Result<ForwardTrace> {
        self.check_inputs(inputs)?;
        let p = self.run(inputs);
        Ok(ForwardTrace {
            hidden: p.hidden,
            attention: p.attention.map(|a| a.weights),
            summary: p.summary,
            logits: p.logits,
            probabilities: p.probabilities,
        })
    }

    /// Arg-max class (ties go to normal).
    pub fn predict(&self, trace: &[f64]) -> Result<Label> {
        let p = self.forward_unchecked(trace)?.probabilities;
        Ok(if p[1] > p[0] {
            Label::Abnormal
        } else {
            Label::Normal
        })
    }

    /// Loss and exact gradients for one labelled trace.
    pub fn backward(&self, inputs: &[f64], label: Label) -> Result<Backprop> {
        self.check_inputs(inputs)?;
        Ok(self.backward_unchecked(inputs, label))
    }

    pub(crate) fn backward_unchecked(&self, inputs: &[f64], label: Label) -> Backprop {
        let pass = self.run(inputs);
        let mut grad = self.zeros_like();
        let y = label.index();
        let loss_value = loss(&pass.probabilities, label);

        // softmax + cross-entropy
        let mut d_logits = pass.probabilities.clone();
        d_logits[y] -= 1.0;
        grad.dense_w.outer_acc(&d_logits, &pass.summary);
        add_assign(&mut grad.dense_b, &d_logits);
        let mut d_summary = vec![0.0; pass.summary.len()];
        self.dense_w.t_matvec_acc(&d_logits, &mut d_summary);

        let t_len = pass.hidden.len();
        let d_hidden = match (&self.attention, &pass.attention) {
            (Some(p), Some(cache)) => attend_backward(
                p,
                &pass.hidden,
                cache,
                &d_summary,
                grad.attention.as_mut().expect("same architecture"),
            ),
            _ => {
                let mut d = vec![vec![0.0; pass.summary.len()]; t_len];
                d[t_len - 1] = d_summary;
                d
            }
        };

        let h = self.arch.hidden_size;
        let d_forward: Vec<Vec<f64>> = d_hidden.iter().map(|d| d[..h].to_vec()).collect();
        self.forward_cell
            .scan_backward(&pass.forward, &d_forward, &mut grad.forward_cell);
        if let (Some(cell), Some(cache)) = (&self.backward_cell, &pass.backward) {
            // backward-cell step k consumed input T-1-k
            let d_backward: Vec<Vec<f64>> = (0..t_len)
                .map(|k| d_hidden[t_len - 1 - k][h..].to_vec())
                .collect();
            cell.scan_backward(
                cache,
                &d_backward,
                grad.backward_cell.as_mut().expect("same architecture"),
            );
        }
        Backprop {
            loss: loss_value,
            probabilities: pass.probabilities,
            grads: grad,
        }
    }
}

/// Result of [`ModelParams::backward`].
#[derive(Debug, Clone)]
pub struct Backprop {
    pub loss: f64,
    pub probabilities: Vec<f64>,
    pub grads: ModelParams,
}

/// Cross-entropy `−ln p[label]` with the probability clamped at 1e-12.
pub fn loss(probabilities: &[f64], label: Label) -> f64 {
    -probabilities[label.index()].max(LOSS_EPSILON).ln()
}
