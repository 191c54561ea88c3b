//! Line-level (LIU) and pixel-level (PIU) intersection-over-union scores.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::doc_io::{BinaryImage, LabelMap};
use crate::error::{Error, Result};

/// Pixel IU a matched pair needs to count as a hit.
pub const DEFAULT_THETA: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub pred: u32,
    pub gt: u32,
    pub intersection: usize,
    pub union: usize,
    pub iu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    pub pairs: Vec<MatchPair>,
    pub unmatched_pred: Vec<u32>,
    pub unmatched_gt: Vec<u32>,
    pub pred_sizes: BTreeMap<u32, usize>,
    pub gt_sizes: BTreeMap<u32, usize>,
}

fn sizes(map: &LabelMap) -> BTreeMap<u32, usize> {
    let mut out = BTreeMap::new();
    for &l in map.labels() {
        if l > 0 {
            *out.entry(l).or_insert(0) += 1;
        }
    }
    out
}

/// Greedy one-to-one matching by descending pixel intersection. Ties go to
/// the lower pred id, then the lower gt id. Pairs without overlap never match.
pub fn match_lines(pred: &LabelMap, gt: &LabelMap) -> Result<Matching> {
    if pred.dims() != gt.dims() {
        return Err(Error::invalid(format!(
            "prediction is {:?} but ground truth is {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let mut inter: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if p > 0 && g > 0 {
            *inter.entry((p, g)).or_insert(0) += 1;
        }
    }
    let pred_sizes = sizes(pred);
    let gt_sizes = sizes(gt);
    let mut cand: Vec<((u32, u32), usize)> = inter.into_iter().collect();
    cand.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let (mut used_p, mut used_g) = (BTreeSet::new(), BTreeSet::new());
    let mut pairs = Vec::new();
    for ((p, g), i) in cand {
        if used_p.contains(&p) || used_g.contains(&g) {
            continue;
        }
        used_p.insert(p);
        used_g.insert(g);
        let union = pred_sizes[&p] + gt_sizes[&g] - i;
        pairs.push(MatchPair {
            pred: p,
            gt: g,
            intersection: i,
            union,
            iu: i as f64 / union as f64,
        });
    }
    Ok(Matching {
        unmatched_pred: pred_sizes.keys().copied().filter(|p| !used_p.contains(p)).collect(),
        unmatched_gt: gt_sizes.keys().copied().filter(|g| !used_g.contains(g)).collect(),
        pairs,
        pred_sizes,
        gt_sizes,
    })
}

/// `sum |P n G| / (sum |P u G| + unmatched pred px + unmatched gt px)`; 1 when both maps are empty.
pub fn pixel_iu(m: &Matching) -> f64 {
    let num: usize = m.pairs.iter().map(|p| p.intersection).sum();
    let den: usize = m.pairs.iter().map(|p| p.union).sum::<usize>()
        + m.unmatched_pred.iter().map(|p| m.pred_sizes[p]).sum::<usize>()
        + m.unmatched_gt.iter().map(|g| m.gt_sizes[g]).sum::<usize>();
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// `hits / (|pred| + |gt| - hits)` where a hit is a pair with IU >= theta; 1 when both are empty.
pub fn line_iu(m: &Matching, theta: f64) -> f64 {
    let hits = m.pairs.iter().filter(|p| p.iu >= theta).count();
    let den = m.pred_sizes.len() + m.gt_sizes.len() - hits;
    if den == 0 {
        1.0
    } else {
        hits as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub pairs: Vec<MatchPair>,
    pub unmatched_pred: Vec<u32>,
    pub unmatched_gt: Vec<u32>,
    pub pred_lines: usize,
    pub gt_lines: usize,
    pub theta: f64,
    pub liu: f64,
    pub piu: f64,
}

impl MatchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

/// Zero every label outside `fg`.
pub fn restrict_to(map: &LabelMap, fg: &BinaryImage) -> Result<LabelMap> {
    if map.dims() != fg.dims() {
        return Err(Error::invalid("foreground mask size differs from label map"));
    }
    let labels = map.labels().iter().zip(fg.mask()).map(|(&l, &m)| if m { l } else { 0 }).collect();
    LabelMap::new(map.height(), map.width(), labels)
}

/// Match and score. With `foreground`, both maps are first restricted to it.
pub fn evaluate(pred: &LabelMap, gt: &LabelMap, theta: f64, foreground: Option<&BinaryImage>) -> Result<MatchReport> {
    let (pred, gt) = match foreground {
        Some(fg) => (restrict_to(pred, fg)?, restrict_to(gt, fg)?),
        None => (pred.clone(), gt.clone()),
    };
    let m = match_lines(&pred, &gt)?;
    Ok(MatchReport {
        liu: line_iu(&m, theta),
        piu: pixel_iu(&m),
        pred_lines: m.pred_sizes.len(),
        gt_lines: m.gt_sizes.len(),
        theta,
        pairs: m.pairs,
        unmatched_pred: m.unmatched_pred,
        unmatched_gt: m.unmatched_gt,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageMetrics {
    pub page_id: String,
    pub liu: f64,
    pub piu: f64,
    pub pred_lines: usize,
    pub gt_lines: usize,
}

impl PageMetrics {
    pub fn from_report(page_id: impl Into<String>, r: &MatchReport) -> Self {
        PageMetrics {
            page_id: page_id.into(),
            liu: r.liu,
            piu: r.piu,
            pred_lines: r.pred_lines,
            gt_lines: r.gt_lines,
        }
    }
}

/// Mean LIU and PIU over pages, `(0, 0)` for none.
pub fn mean_scores(rows: &[PageMetrics]) -> (f64, f64) {
    if rows.is_empty() {
        return (0.0, 0.0);
    }
    let n = rows.len() as f64;
    (
        rows.iter().map(|r| r.liu).sum::<f64>() / n,
        rows.iter().map(|r| r.piu).sum::<f64>() / n,
    )
}

/// One row per page plus a `mean` summary row.
pub fn write_metrics_csv(rows: &[PageMetrics], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Other(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let (liu, piu) = mean_scores(rows);
    w.serialize(PageMetrics {
        page_id: "mean".into(),
        liu,
        piu,
        pred_lines: rows.iter().map(|r| r.pred_lines).sum(),
        gt_lines: rows.iter().map(|r| r.gt_lines).sum(),
    })
    .map_err(csv_err)?;
    w.flush().map_err(|e| Error::io(path, e))
}
