use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::scoring::{Aggregation, ScoreTable};

/// Operating points reported by default.
pub const DEFAULT_TPR_POINTS: [f64; 2] = [0.99, 0.995];

/// Scores with binary labels; `true` marks an anomaly. Higher scores are
/// more anomalous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScores {
    scores: Vec<f64>,
    anomalous: Vec<bool>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, anomalous: Vec<bool>) -> Result<Self> {
        if scores.len() != anomalous.len() {
            bail!(Eval, "{} scores but {} labels", scores.len(), anomalous.len());
        }
        if let Some(s) = scores.iter().find(|s| s.is_nan()) {
            bail!(Eval, "score {s} is not a number");
        }
        Ok(Self { scores, anomalous })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn anomalous(&self) -> &[bool] {
        &self.anomalous
    }

    pub fn counts(&self) -> (usize, usize) {
        let n_anom = self.anomalous.iter().filter(|a| **a).count();
        (self.anomalous.len() - n_anom, n_anom)
    }

    fn require_both(&self) -> Result<(usize, usize)> {
        let (n_norm, n_anom) = self.counts();
        if n_norm == 0 || n_anom == 0 {
            bail!(Eval, "need both classes, got {n_norm} normal and {n_anom} anomalous samples");
        }
        Ok((n_norm, n_anom))
    }

    pub fn normal_scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores.iter().zip(&self.anomalous).filter(|(_, a)| !**a).map(|(s, _)| *s)
    }

    pub fn anomaly_scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores.iter().zip(&self.anomalous).filter(|(_, a)| **a).map(|(s, _)| *s)
    }
}

/// Mann-Whitney estimate of `P(anomaly > normal) + ½·P(tie)` using average
/// ranks.
pub fn auroc(ls: &LabeledScores) -> Result<f64> {
    let (n_norm, n_anom) = ls.require_both()?;
    let mut order: Vec<usize> = (0..ls.scores.len()).collect();
    order.sort_by(|&a, &b| ls.scores[a].total_cmp(&ls.scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && ls.scores[order[j + 1]] == ls.scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += rank * order[i..=j].iter().filter(|&&k| ls.anomalous[k]).count() as f64;
        i = j + 1;
    }
    let na = n_anom as f64;
    Ok((rank_sum - na * (na + 1.0) / 2.0) / (na * n_norm as f64))
}

/// Smallest false-positive rate over thresholds `t` (anomalous iff
/// `score >= t`) whose true-positive rate reaches `target_tpr`.
pub fn fpr_at_tpr(ls: &LabeledScores, target_tpr: f64) -> Result<f64> {
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        bail!(Eval, "target TPR must lie in (0, 1], got {target_tpr}");
    }
    let (n_norm, n_anom) = ls.require_both()?;
    let mut anomalies: Vec<f64> = ls.anomaly_scores().collect();
    anomalies.sort_by(|a, b| b.total_cmp(a));
    // fewest detections that reach the target, guarding against 0.99 * 100 = 98.99999
    let k = ((target_tpr * n_anom as f64) - 1e-9).ceil().max(1.0) as usize;
    let threshold = anomalies[k.min(n_anom) - 1];
    let false_pos = ls.normal_scores().filter(|s| *s >= threshold).count();
    Ok(false_pos as f64 / n_norm as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// ROC points for every distinct score, from the empty threshold (`+inf`)
/// down to the lowest score.
pub fn roc_curve(ls: &LabeledScores) -> Result<Vec<RocPoint>> {
    let (n_norm, n_anom) = ls.require_both()?;
    let mut order: Vec<usize> = (0..ls.scores.len()).collect();
    order.sort_by(|&a, &b| ls.scores[b].total_cmp(&ls.scores[a]));
    let mut out = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = ls.scores[order[i]];
        while i < order.len() && ls.scores[order[i]] == t {
            if ls.anomalous[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(RocPoint { fpr: fp as f64 / n_norm as f64, tpr: tp as f64 / n_anom as f64, threshold: t });
    }
    Ok(out)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregation: Aggregation,
    pub auroc: f64,
    /// Keyed by the target TPR as written, e.g. `"0.99"`.
    pub fpr_at_tpr: BTreeMap<String, f64>,
    pub n_normal: usize,
    pub n_anomalous: usize,
}

impl EvalReport {
    pub fn from_scores(ls: &LabeledScores, aggregation: Aggregation, tpr_points: &[f64]) -> Result<Self> {
        let (n_normal, n_anomalous) = ls.require_both()?;
        let mut fpr = BTreeMap::new();
        for &t in tpr_points {
            fpr.insert(t.to_string(), fpr_at_tpr(ls, t)?);
        }
        Ok(Self { aggregation, auroc: auroc(ls)?, fpr_at_tpr: fpr, n_normal, n_anomalous })
    }

    /// One report per aggregation from a single scoring pass.
    pub fn all_aggregations(table: &ScoreTable, anomalous: &[bool], tpr_points: &[f64]) -> Result<Vec<Self>> {
        Aggregation::ALL
            .iter()
            .map(|&agg| Self::from_scores(&LabeledScores::new(table.aggregates(agg), anomalous.to_vec())?, agg, tpr_points))
            .collect()
    }
}

pub fn write_roc_csv<W: Write>(mut w: W, points: &[RocPoint]) -> Result<()> {
    writeln!(w, "fpr,tpr,threshold")?;
    for p in points {
        writeln!(w, "{},{},{}", p.fpr, p.tpr, p.threshold)?;
    }
    Ok(())
}

/// A minimal square SVG plot of the curve with the chance diagonal.
pub fn roc_svg(points: &[RocPoint], title: &str) -> String {
    const SIZE: f64 = 360.0;
    const PAD: f64 = 40.0;
    let mut path = String::new();
    for (i, p) in points.iter().enumerate() {
        let x = PAD + p.fpr * SIZE;
        let y = PAD + (1.0 - p.tpr) * SIZE;
        let _ = write!(path, "{}{x:.2},{y:.2}", if i == 0 { "" } else { " " });
    }
    let title = title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let full = SIZE + 2.0 * PAD;
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{full}\" height=\"{full}\" viewBox=\"0 0 {full} {full}\">\n",
            "<rect x=\"{pad}\" y=\"{pad}\" width=\"{size}\" height=\"{size}\" fill=\"none\" stroke=\"#444\"/>\n",
            "<line x1=\"{pad}\" y1=\"{bottom}\" x2=\"{right}\" y2=\"{pad}\" stroke=\"#bbb\" stroke-dasharray=\"4 4\"/>\n",
            "<polyline points=\"{path}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n",
            "<text x=\"{pad}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n",
            "<text x=\"{mid}\" y=\"{xlabel}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">FPR</text>\n",
            "<text x=\"14\" y=\"{mid}\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 {mid})\" text-anchor=\"middle\">TPR</text>\n",
            "</svg>\n"
        ),
        full = full,
        pad = PAD,
        size = SIZE,
        bottom = PAD + SIZE,
        right = PAD + SIZE,
        path = path,
        title = title,
        mid = PAD + SIZE / 2.0,
        xlabel = full - 10.0,
    )
}
