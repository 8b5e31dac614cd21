//! Dataset splitting, screening metrics and model comparison.
//!
//! Abnormal breathing is the positive class throughout.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::frameio::{Label, RespirationTrace};
use crate::net::{self, Architecture, ModelParams, NetError, TrainConfig, Variant};

/// Train share that mirrors a 3207 / 1010 split.
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.76;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    Fraction(f64),
    #[error("class {label} has {count} member(s); at least 2 are needed to split")]
    ClassTooSmall { label: Label, count: usize },
    #[error("trace {0} has no label")]
    MissingLabel(usize),
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Stratified split. Each class contributes `round(n · train_fraction)`
/// members to the training side, clamped so both sides keep at least one.
pub fn split_indices(
    labels: &[Label],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(EvalError::Fraction(train_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in [Label::Normal, Label::Abnormal] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        if members.len() < 2 {
            return Err(EvalError::ClassTooSmall {
                label,
                count: members.len(),
            });
        }
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok((train, test))
}

pub fn labels_of(dataset: &[RespirationTrace]) -> Result<Vec<Label>> {
    dataset
        .iter()
        .enumerate()
        .map(|(i, t)| t.label.ok_or(EvalError::MissingLabel(i)))
        .collect()
}

/// Splits labelled traces into `(train, test)`.
pub fn split(
    dataset: &[RespirationTrace],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<RespirationTrace>, Vec<RespirationTrace>)> {
    let (a, b) = split_indices(&labels_of(dataset)?, train_fraction, seed)?;
    let pick = |idx: Vec<usize>| idx.into_iter().map(|i| dataset[i].clone()).collect();
    Ok((pick(a), pick(b)))
}

/// 2×2 confusion counts; rows are true labels, columns predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tp: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tn + self.fp + self.fn_ + self.tp
    }

    /// `[[tn, fp], [fn, tp]]`
    pub fn matrix(&self) -> [[usize; 2]; 2] {
        [[self.tn, self.fp], [self.fn_, self.tp]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    /// Set when TP + FP = 0 and precision was reported as 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn metrics(model: &str, predictions: &[Label], labels: &[Label]) -> Result<EvalReport> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut c = Confusion::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (y, p) {
            (Label::Normal, Label::Normal) => c.tn += 1,
            (Label::Normal, Label::Abnormal) => c.fp += 1,
            (Label::Abnormal, Label::Normal) => c.fn_ += 1,
            (Label::Abnormal, Label::Abnormal) => c.tp += 1,
        }
    }
    Ok(report_from_confusion(model, c))
}

/// Metrics recomputed from confusion counts alone.
pub fn report_from_confusion(model: &str, c: Confusion) -> EvalReport {
    let (accuracy, _) = ratio(c.tp + c.tn, c.total());
    let (precision, precision_undefined) = ratio(c.tp, c.tp + c.fp);
    let (recall, recall_undefined) = ratio(c.tp, c.tp + c.fn_);
    let (f1, f1_undefined) = if precision + recall > 0.0 {
        (2.0 * precision * recall / (precision + recall), false)
    } else {
        (0.0, true)
    };
    EvalReport {
        model: model.to_string(),
        accuracy,
        precision,
        recall,
        f1,
        confusion: c,
        precision_undefined,
        recall_undefined,
        f1_undefined,
    }
}

/// Classifies every trace in `test` with `model`.
pub fn evaluate_model(model: &ModelParams, test: &[RespirationTrace]) -> Result<EvalReport> {
    let labels = labels_of(test)?;
    let preds = test
        .iter()
        .map(|t| model.predict(t.values()))
        .collect::<Result<Vec<_>, _>>()?;
    metrics(model.variant().name(), &preds, &labels)
}

/// Shared settings for [`compare_models`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareConfig {
    pub hidden_size: usize,
    pub attn_size: usize,
    pub train_fraction: f64,
    /// Seeds the split, the initialisation and the shuffle.
    pub train: TrainConfig,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            hidden_size: net::DEFAULT_HIDDEN,
            attn_size: net::DEFAULT_ATTN,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            train: TrainConfig::default(),
        }
    }
}

/// A trained variant with its log and test-set report.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub model: ModelParams,
    pub log: Vec<net::EpochLog>,
    pub report: EvalReport,
}

/// Trains a freshly initialised model on `train` and scores it on `test`.
pub fn train_and_evaluate(
    variant: Variant,
    train: &[RespirationTrace],
    test: &[RespirationTrace],
    config: &CompareConfig,
) -> Result<Comparison> {
    let arch = Architecture::new(variant, config.hidden_size, config.attn_size);
    let init = ModelParams::init(arch, config.train.seed);
    let (model, log) = net::train(init, train, Some(test), &config.train)?;
    let report = evaluate_model(&model, test)?;
    Ok(Comparison { model, log, report })
}

/// Splits once, then trains and evaluates every variant under identical
/// seeds and settings.
pub fn compare_models(
    dataset: &[RespirationTrace],
    variants: &[Variant],
    config: &CompareConfig,
) -> Result<Vec<Comparison>> {
    let (train, test) = split(dataset, config.train_fraction, config.train.seed)?;
    variants
        .iter()
        .map(|&v| train_and_evaluate(v, &train, &test, config))
        .collect()
}

pub fn report_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("model,accuracy,precision,recall,f1,tn,fp,fn,tp\n");
    for r in reports {
        let c = r.confusion;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.model, r.accuracy, r.precision, r.recall, r.f1, c.tn, c.fp, c.fn_, c.tp
        );
    }
    out
}

pub fn confusion_csv(c: &Confusion) -> String {
    format!(
        "true\\pred,normal,abnormal\nnormal,{},{}\nabnormal,{},{}\n",
        c.tn, c.fp, c.fn_, c.tp
    )
}

fn write(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `report.csv` and `confusion_<model>.csv` files into `dir`.
pub fn write_reports(dir: &Path, reports: &[EvalReport]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write(&dir.join("report.csv"), report_csv(reports))?;
    for r in reports {
        write(
            &dir.join(format!("confusion_{}.csv", r.model)),
            confusion_csv(&r.confusion),
        )?;
    }
    Ok(())
}
