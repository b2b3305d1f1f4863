//! Detector scoring: ROC/AUC, fixed and greedy-threshold accuracy, and
//! per-group score averaging.
//!
//! A sample is predicted fake iff its score is strictly above the threshold.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{csv_err, Label};

/// One scored sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub id: String,
    pub group: String,
    pub label: Label,
    pub score: f64,
}

/// Scores in `[0, 1]`, higher meaning more likely fake.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSet {
    entries: Vec<ScoreEntry>,
}

impl ScoreSet {
    pub fn new(entries: Vec<ScoreEntry>) -> Result<Self> {
        if let Some(e) = entries
            .iter()
            .find(|e| !(e.score.is_finite() && (0.0..=1.0).contains(&e.score)))
        {
            return Err(Error::Data(format!(
                "score {} of '{}' not in [0, 1]",
                e.score, e.id
            )));
        }
        Ok(Self { entries })
    }

    /// Entries with ids `0..n` and singleton groups.
    pub fn from_pairs(pairs: &[(Label, f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .enumerate()
                .map(|(i, &(label, score))| ScoreEntry {
                    id: i.to_string(),
                    group: i.to_string(),
                    label,
                    score,
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn class_counts(&self) -> (usize, usize) {
        let fakes = self
            .entries
            .iter()
            .filter(|e| e.label == Label::Fake)
            .count();
        (self.entries.len() - fakes, fakes)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["id", "group", "label", "score"] {
            return Err(Error::Data(format!(
                "{}: expected header id,group,label,score",
                path.display()
            )));
        }
        let entries = r
            .deserialize()
            .map(|row| row.map_err(|e| csv_err(path, e)))
            .collect::<Result<Vec<ScoreEntry>>>()?;
        Self::new(entries)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for e in &self.entries {
            w.serialize(e).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Area under the ROC curve from the Mann-Whitney rank statistic, with tied
/// scores given their average rank.
pub fn auc(scores: &ScoreSet) -> Result<f64> {
    let (n_real, n_fake) = scores.class_counts();
    if n_real == 0 || n_fake == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both real and fake samples".into(),
        ));
    }
    let mut order: Vec<&ScoreEntry> = scores.entries.iter().collect();
    order.sort_by(|a, b| a.score.total_cmp(&b.score));
    let mut fake_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && order[j].score == order[i].score {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let rank = (i + 1 + j) as f64 / 2.0;
        let fakes = order[i..j]
            .iter()
            .filter(|e| e.label == Label::Fake)
            .count();
        fake_rank_sum += rank * fakes as f64;
        i = j;
    }
    let nf = n_fake as f64;
    let u = fake_rank_sum - nf * (nf + 1.0) / 2.0;
    Ok(u / (nf * n_real as f64))
}

/// Fraction of samples classified correctly with "fake iff score > theta".
pub fn accuracy_at(scores: &ScoreSet, theta: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::arg("accuracy of an empty score set"));
    }
    let correct = scores
        .entries
        .iter()
        .filter(|e| (e.score > theta) == (e.label == Label::Fake))
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// The 101 thresholds `k / 100` for `k = 0..=100`.
pub fn threshold_grid() -> impl Iterator<Item = f64> {
    (0..=100).map(|k| k as f64 / 100.0)
}

/// Best accuracy over the threshold grid and the smallest threshold reaching it.
pub fn greedy_threshold_acc(scores: &ScoreSet) -> Result<(f64, f64)> {
    let mut best = (0.0, -1.0);
    for theta in threshold_grid() {
        let acc = accuracy_at(scores, theta)?;
        if acc > best.1 {
            best = (theta, acc);
        }
    }
    Ok(best)
}

/// One entry per group carrying the mean score; groups keep first-seen order.
pub fn group_average(scores: &ScoreSet) -> Result<ScoreSet> {
    let mut order: Vec<&str> = Vec::new();
    let mut acc: BTreeMap<&str, (Label, f64, usize)> = BTreeMap::new();
    for e in &scores.entries {
        match acc.get_mut(e.group.as_str()) {
            Some(slot) => {
                if slot.0 != e.label {
                    return Err(Error::Data(format!(
                        "group '{}' mixes real and fake",
                        e.group
                    )));
                }
                slot.1 += e.score;
                slot.2 += 1;
            }
            None => {
                order.push(&e.group);
                acc.insert(&e.group, (e.label, e.score, 1));
            }
        }
    }
    ScoreSet::new(
        order
            .into_iter()
            .map(|g| {
                let (label, sum, n) = acc[g];
                ScoreEntry {
                    id: g.to_string(),
                    group: g.to_string(),
                    label,
                    score: (sum / n as f64).clamp(0.0, 1.0),
                }
            })
            .collect(),
    )
}

/// ROC curve as `(false positive rate, true positive rate)` points, one per
/// distinct score (fake iff score >= cut), from (0, 0) to (1, 1).
pub fn roc_points(scores: &ScoreSet) -> Result<Vec<(f64, f64)>> {
    let (n_real, n_fake) = scores.class_counts();
    if n_real == 0 || n_fake == 0 {
        return Err(Error::UndefinedMetric(
            "ROC needs both real and fake samples".into(),
        ));
    }
    let mut order: Vec<&ScoreEntry> = scores.entries.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = order[i].score;
        while i < order.len() && order[i].score == s {
            match order[i].label {
                Label::Fake => tp += 1,
                Label::Real => fp += 1,
            }
            i += 1;
        }
        points.push((fp as f64 / n_real as f64, tp as f64 / n_fake as f64));
    }
    Ok(points)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub acc_at_half: f64,
    pub acc_greedy: f64,
    pub theta_max: f64,
    pub n_val: usize,
    pub n_test: usize,
    #[serde(skip)]
    pub roc: Vec<(f64, f64)>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn write_roc_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["fpr", "tpr"])
            .map_err(|e| csv_err(path, e))?;
        for (fpr, tpr) in &self.roc {
            w.write_record([fpr.to_string(), tpr.to_string()])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Fits the threshold on `val`, then reports test AUC and test accuracy at
/// that threshold and at 0.5.
pub fn val_test_protocol(val: &ScoreSet, test: &ScoreSet) -> Result<EvalReport> {
    if val.is_empty() || test.is_empty() {
        return Err(Error::arg("validation and test sets must be non-empty"));
    }
    let (theta_max, _) = greedy_threshold_acc(val)?;
    Ok(EvalReport {
        auc: auc(test)?,
        acc_at_half: accuracy_at(test, 0.5)?,
        acc_greedy: accuracy_at(test, theta_max)?,
        theta_max,
        n_val: val.len(),
        n_test: test.len(),
        roc: roc_points(test)?,
    })
}
