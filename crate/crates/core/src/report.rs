//! Evaluation reports: confusion matrix, accuracies and training history,
//! rendered as a table for people and as `key value...` lines for tools.

use std::fmt::Write as _;

use crate::dataset::Dataset;
use crate::nn::model::predict_batch;
use crate::nn::{EpochStats, ModelParams, NnError};
use crate::sensor::TactileFrame;
use crate::textures::{class_label, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub overall_accuracy: f64,
    /// NaN for a class with no examples.
    pub per_class_accuracy: [f64; NUM_CLASSES],
    /// `confusion[true][predicted]`.
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
    pub history: Vec<EpochStats>,
}

impl EvalReport {
    pub fn from_pairs<I>(pairs: I, history: Vec<EpochStats>) -> Self
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut confusion = [[0u64; NUM_CLASSES]; NUM_CLASSES];
        for (truth, pred) in pairs {
            confusion[truth][pred] += 1;
        }
        let total: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
        let per_class_accuracy = std::array::from_fn(|c| {
            let n: u64 = confusion[c].iter().sum();
            if n == 0 {
                f64::NAN
            } else {
                confusion[c][c] as f64 / n as f64
            }
        });
        EvalReport {
            overall_accuracy: if total == 0 {
                f64::NAN
            } else {
                trace as f64 / total as f64
            },
            per_class_accuracy,
            confusion,
            history,
        }
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> [u64; NUM_CLASSES] {
        self.confusion.map(|r| r.iter().sum())
    }

    /// Predictions of one class counted as the other, both directions.
    pub fn confusion_between(&self, a: usize, b: usize) -> u64 {
        self.confusion[a][b] + self.confusion[b][a]
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        if !self.history.is_empty() {
            s.push_str("epoch  train_loss  train_acc  val_loss  val_acc\n");
            for e in &self.history {
                let _ = writeln!(
                    s,
                    "{:>5}  {:>10.4}  {:>9.4}  {:>8.4}  {:>7.4}",
                    e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
                );
            }
            s.push('\n');
        }
        s.push_str("true \\ predicted  ");
        for c in 0..NUM_CLASSES {
            let _ = write!(s, "{:>5}", letter(c));
        }
        s.push_str("  accuracy\n");
        for (c, row) in self.confusion.iter().enumerate() {
            let _ = write!(s, "{:<18}", class_label(c as u8));
            for v in row {
                let _ = write!(s, "{v:>5}");
            }
            let _ = writeln!(s, "  {:.4}", self.per_class_accuracy[c]);
        }
        let _ = writeln!(
            s,
            "\noverall accuracy {:.4} ({} frames)",
            self.overall_accuracy,
            self.total()
        );
        s
    }

    pub fn render_machine(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "overall_accuracy {:?}", self.overall_accuracy);
        let _ = writeln!(s, "frames {}", self.total());
        for (c, a) in self.per_class_accuracy.iter().enumerate() {
            let _ = writeln!(s, "class_accuracy {c} {a:?}");
        }
        for (c, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(s, "confusion {c} {}", cells.join(" "));
        }
        for e in &self.history {
            let _ = writeln!(
                s,
                "epoch {} train_loss {:?} train_accuracy {:?} val_loss {:?} val_accuracy {:?}",
                e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
            );
        }
        s
    }
}

fn letter(c: usize) -> char {
    (b'a' + c as u8) as char
}

/// Classifies `indices` of `ds` and tabulates the result.
pub fn evaluate_indices(
    model: &ModelParams,
    ds: &Dataset,
    indices: &[usize],
    history: Vec<EpochStats>,
) -> Result<EvalReport, NnError> {
    let frames: Vec<&TactileFrame> = indices
        .iter()
        .map(|&i| {
            ds.frames.get(i).ok_or_else(|| {
                NnError::BadConfig(format!("index {i} outside dataset of {}", ds.len()))
            })
        })
        .collect::<Result<_, _>>()?;
    let mut labels = Vec::with_capacity(frames.len());
    for f in &frames {
        match f.label {
            Some(l) if usize::from(l) < NUM_CLASSES => labels.push(usize::from(l)),
            other => {
                return Err(NnError::LabelOutOfRange {
                    label: other.map_or(usize::MAX, usize::from),
                    classes: NUM_CLASSES,
                })
            }
        }
    }
    let preds = if frames.is_empty() {
        Vec::new()
    } else {
        predict_batch(model, &frames, 64)?
    };
    Ok(EvalReport::from_pairs(
        labels.into_iter().zip(preds.iter().map(|p| p.class_id)),
        history,
    ))
}
