use std::collections::BTreeMap;
use std::fmt::Write;

use super::ScoreRecord;
use crate::data::Condition;
use crate::error::{invalid, Result};

/// Area under the ROC curve: the probability that a random positive
/// (`true`) outscores a random negative, ties counting one half. Computed
/// from midranks in O(n log n).
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(invalid(format!("score {s} is not a number")));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(invalid(format!(
            "AUC needs both classes, got {n_pos} anomalous and {n_neg} normal"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Ranks are doubled so midranks stay integral.
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank2 = (i + 1 + j + 1) as u64;
        let pos_in_group = order[i..=j].iter().filter(|&&k| positive[k]).count() as u64;
        rank_sum2 += midrank2 * pos_in_group;
        i = j + 1;
    }
    let (p, n) = (n_pos as u64, n_neg as u64);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / 2.0 / (p * n) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucRow {
    pub machine_type: String,
    pub machine_id: usize,
    pub auc: f64,
    pub normals: usize,
    pub anomalies: usize,
}

/// Per-id AUC grouped by machine type, with per-type and overall means.
#[derive(Debug, Clone, PartialEq)]
pub struct AucReport {
    pub rows: Vec<AucRow>,
}

impl AucReport {
    /// Ids lacking either class are skipped; records of unknown condition
    /// are ignored.
    pub fn from_scores(scores: &[ScoreRecord]) -> Result<Self> {
        let mut groups: BTreeMap<(String, usize), (Vec<f64>, Vec<bool>)> = BTreeMap::new();
        for s in scores {
            if s.condition == Condition::Unknown {
                continue;
            }
            let g = groups
                .entry((s.machine_type.clone(), s.machine_id))
                .or_default();
            g.0.push(s.score);
            g.1.push(s.condition == Condition::Anomaly);
        }
        let mut rows = Vec::new();
        for ((machine_type, machine_id), (sc, labels)) in groups {
            let anomalies = labels.iter().filter(|&&l| l).count();
            let normals = labels.len() - anomalies;
            if anomalies == 0 || normals == 0 {
                continue;
            }
            rows.push(AucRow {
                machine_type,
                machine_id,
                auc: roc_auc(&sc, &labels)?,
                normals,
                anomalies,
            });
        }
        if rows.is_empty() {
            return Err(invalid(
                "no machine id has both normal and anomalous scores",
            ));
        }
        Ok(Self { rows })
    }

    /// AUC over all records pooled, regardless of id.
    pub fn pooled(scores: &[ScoreRecord]) -> Result<f64> {
        let known: Vec<&ScoreRecord> = scores
            .iter()
            .filter(|s| s.condition != Condition::Unknown)
            .collect();
        let sc: Vec<f64> = known.iter().map(|s| s.score).collect();
        let labels: Vec<bool> = known
            .iter()
            .map(|s| s.condition == Condition::Anomaly)
            .collect();
        roc_auc(&sc, &labels)
    }

    pub fn type_means(&self) -> Vec<(String, f64)> {
        let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = acc.entry(&r.machine_type).or_default();
            e.0 += r.auc;
            e.1 += 1;
        }
        acc.into_iter()
            .map(|(t, (s, n))| (t.to_string(), s / n as f64))
            .collect()
    }

    /// Mean of the per-type means.
    pub fn mean(&self) -> f64 {
        let means = self.type_means();
        means.iter().map(|(_, m)| m).sum::<f64>() / means.len() as f64
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>4} {:>8} {:>8} {:>9}",
            "machine_type", "id", "normal", "anomaly", "AUC(%)"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<14} {:>4} {:>8} {:>8} {:>9.2}",
                r.machine_type,
                format!("{:02}", r.machine_id),
                r.normals,
                r.anomalies,
                100.0 * r.auc
            );
        }
        for (t, m) in self.type_means() {
            let _ = writeln!(
                out,
                "{:<14} {:>4} {:>8} {:>8} {:>9.2}",
                t,
                "avg",
                "",
                "",
                100.0 * m
            );
        }
        let _ = writeln!(
            out,
            "{:<14} {:>4} {:>8} {:>8} {:>9.2}",
            "average",
            "",
            "",
            "",
            100.0 * self.mean()
        );
        out
    }
}
