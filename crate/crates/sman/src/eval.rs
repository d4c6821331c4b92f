//! Classification metrics, early-detection curves, and the ablation runner.

use std::path::Path;

use crate::corpus::{Corpus, Split};
use crate::error::{Result, SmanError};
use crate::graphs::{build_graphs, truncate_by_delay, GraphSet};
use crate::model::{Ablation, Model};
use crate::train::{train, Checkpoint, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// True when the class had zero predicted and zero actual support, so
    /// its metrics are 0 by definition rather than by measurement.
    pub absent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<usize>>,
    pub variant: String,
    pub delay: Option<u64>,
}

/// Accuracy and per-class precision/recall/F1 from predicted and gold class
/// indices.
pub fn compute_metrics(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<EvalReport> {
    if predictions.len() != labels.len() {
        return Err(SmanError::Shape(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(SmanError::Size("cannot evaluate an empty set".into()));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= num_classes || l >= num_classes {
            return Err(SmanError::Index(format!(
                "class index out of range: pred {}, label {}, classes {}",
                p, l, num_classes
            )));
        }
        confusion[l][p] += 1;
    }
    let total = predictions.len();
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let actual: usize = confusion[c].iter().sum();
        let predicted: usize = (0..num_classes).map(|l| confusion[l][c]).sum();
        let tp = confusion[c][c];
        let absent = actual == 0 && predicted == 0;
        let precision = if predicted > 0 { tp as f64 / predicted as f64 } else { 0.0 };
        let recall = if actual > 0 { tp as f64 / actual as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support: actual,
            absent,
        });
    }
    Ok(EvalReport {
        accuracy: correct as f64 / total as f64,
        per_class,
        confusion,
        variant: "full".into(),
        delay: None,
    })
}

/// Evaluate a model on a set of news ids against their corpus labels.
pub fn evaluate(
    model: &Model,
    corpus: &Corpus,
    graphs: &GraphSet,
    ids: &[u32],
) -> Result<EvalReport> {
    let predictions = model.predict(corpus, graphs, ids, 64)?;
    let labels: Vec<usize> = ids
        .iter()
        .map(|&id| corpus.scheme.class_index(corpus.get(id).unwrap().label))
        .collect::<Result<_>>()?;
    compute_metrics(&predictions, &labels, corpus.scheme.num_classes())
}

/// Evaluate one trained model on the test split at each delay: reposts are
/// truncated, the diffusion graph and repost matrix rebuilt, text and the
/// publishing graph left untouched. No retraining per delay.
pub fn early_detection_curve(
    checkpoint: &Checkpoint,
    corpus: &Corpus,
    split: &Split,
    delays: &[u64],
) -> Result<Vec<(u64, EvalReport)>> {
    let model = &checkpoint.model;
    let test_ids: Vec<u32> = split.test.iter().copied().collect();
    let mut out = Vec::with_capacity(delays.len());
    for &delay in delays {
        let truncated = truncate_by_delay(corpus, delay);
        let graphs = build_graphs(&truncated, model.cfg.k, model.cfg.pattern)?;
        let mut report = evaluate(model, &truncated, &graphs, &test_ids)?;
        report.delay = Some(delay);
        report.variant = checkpoint.train_config.ablation.to_string();
        out.push((delay, report));
    }
    Ok(out)
}

/// Train and evaluate each ablation variant from the same seed and data.
pub fn run_ablation(
    corpus: &Corpus,
    split: &Split,
    base: &TrainConfig,
    variants: &[Ablation],
) -> Result<Vec<(Ablation, EvalReport)>> {
    let test_ids: Vec<u32> = split.test.iter().copied().collect();
    let mut out = Vec::with_capacity(variants.len());
    for &variant in variants {
        let config = TrainConfig {
            ablation: variant,
            ..base.clone()
        };
        let result = train(corpus, split, &config)?;
        let graphs = build_graphs(corpus, config.model.k, config.model.pattern)?;
        let mut report = evaluate(&result.checkpoint.model, corpus, &graphs, &test_ids)?;
        report.variant = variant.to_string();
        out.push((variant, report));
    }
    Ok(out)
}

/// One CSV row per class per report, plus an `overall` row carrying the
/// accuracy.
pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("variant,delay,class,precision,recall,f1,support,accuracy,absent\n");
    for r in reports {
        let delay = r
            .delay
            .map(|d| if d == u64::MAX { "inf".to_string() } else { d.to_string() })
            .unwrap_or_default();
        for (c, m) in r.per_class.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6},{},{:.6},{}\n",
                r.variant, delay, c, m.precision, m.recall, m.f1, m.support, r.accuracy, m.absent
            ));
        }
        out.push_str(&format!(
            "{},{},overall,,,,{},{:.6},\n",
            r.variant,
            delay,
            r.confusion.iter().flatten().sum::<usize>(),
            r.accuracy
        ));
    }
    out
}

pub fn write_csv(reports: &[EvalReport], path: &Path) -> Result<()> {
    crate::train::atomic_write(path, reports_to_csv(reports).as_bytes())
}

/// Human-readable summary block for one report.
pub fn summarize(report: &EvalReport) -> String {
    let mut out = format!(
        "variant: {}\ndelay: {}\naccuracy: {:.4}\n",
        report.variant,
        report
            .delay
            .map(|d| if d == u64::MAX { "inf".to_string() } else { d.to_string() })
            .unwrap_or_else(|| "-".into()),
        report.accuracy
    );
    for (c, m) in report.per_class.iter().enumerate() {
        out.push_str(&format!(
            "class {}: precision {:.4} recall {:.4} f1 {:.4} support {}{}\n",
            c,
            m.precision,
            m.recall,
            m.f1,
            m.support,
            if m.absent { " (absent)" } else { "" }
        ));
    }
    out
}
