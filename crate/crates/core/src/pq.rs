//! Panoptic quality.
//!
//! Segments of the same class match when IoU > 0.5, which makes matches
//! unique. Ground-truth VOID pixels are removed from the union, and an
//! unmatched prediction lying mostly (> 50%) on VOID is not a false positive.
//!
//! Per class: `PQ = Σ IoU / (TP + FP/2 + FN/2)`, `SQ = Σ IoU / TP`,
//! `RQ = TP / (TP + FP/2 + FN/2)`. Aggregates average over classes that have
//! at least one TP, FP or FN.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::panoptic::{ClassKind, ClassTable, PanopticMap, PixelLabel};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ClassQuality {
    pub class: u32,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub iou_sum: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct QualitySummary {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    /// Classes averaged.
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PqReport {
    pub all: QualitySummary,
    pub things: QualitySummary,
    pub stuff: QualitySummary,
    pub per_class: Vec<ClassQuality>,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn summarize<'a>(rows: impl Iterator<Item = &'a ClassQuality>) -> QualitySummary {
    let mut s = QualitySummary::default();
    for r in rows {
        s.pq += r.pq;
        s.sq += r.sq;
        s.rq += r.rq;
        s.classes += 1;
    }
    if s.classes > 0 {
        let k = s.classes as f64;
        s.pq /= k;
        s.sq /= k;
        s.rq /= k;
    }
    s
}

pub fn pq_evaluate(pred: &PanopticMap, gt: &PanopticMap, classes: &ClassTable) -> Result<PqReport> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::shape(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    for seg in pred.segments().iter().chain(gt.segments().iter()) {
        if classes.kind(seg.class).is_none() {
            return Err(Error::Format(format!(
                "class id {} outside 0..{}",
                seg.class,
                classes.len()
            )));
        }
    }

    let mut pred_area: BTreeMap<PixelLabel, u64> = BTreeMap::new();
    let mut gt_area: BTreeMap<PixelLabel, u64> = BTreeMap::new();
    let mut pred_on_void: BTreeMap<PixelLabel, u64> = BTreeMap::new();
    let mut inter: BTreeMap<(PixelLabel, PixelLabel), u64> = BTreeMap::new();
    for (&p, &g) in pred.pixels().iter().zip(gt.pixels()) {
        if !p.is_void() {
            *pred_area.entry(p).or_default() += 1;
        }
        if !g.is_void() {
            *gt_area.entry(g).or_default() += 1;
        }
        match (p.is_void(), g.is_void()) {
            (false, true) => *pred_on_void.entry(p).or_default() += 1,
            (false, false) if p.class == g.class => *inter.entry((p, g)).or_default() += 1,
            _ => {}
        }
    }

    let mut rows: BTreeMap<u32, ClassQuality> = BTreeMap::new();
    let mut matched_pred = std::collections::BTreeSet::new();
    let mut matched_gt = std::collections::BTreeSet::new();
    for (&(p, g), &i) in &inter {
        let union = pred_area[&p] + gt_area[&g] - i - pred_on_void.get(&p).copied().unwrap_or(0);
        let iou = i as f64 / union as f64;
        if iou > 0.5 {
            matched_pred.insert(p);
            matched_gt.insert(g);
            let row = rows.entry(g.class).or_default();
            row.tp += 1;
            row.iou_sum += iou;
        }
    }
    for g in gt_area.keys().filter(|g| !matched_gt.contains(*g)) {
        rows.entry(g.class).or_default().fn_ += 1;
    }
    for (p, &area) in pred_area.iter().filter(|(p, _)| !matched_pred.contains(*p)) {
        let void = pred_on_void.get(p).copied().unwrap_or(0);
        if void * 2 > area {
            continue;
        }
        rows.entry(p.class).or_default().fp += 1;
    }

    let mut per_class = Vec::with_capacity(rows.len());
    for (class, mut r) in rows {
        r.class = class;
        let denom = r.tp as f64 + 0.5 * r.fp as f64 + 0.5 * r.fn_ as f64;
        if denom == 0.0 {
            continue;
        }
        r.pq = r.iou_sum / denom;
        r.rq = r.tp as f64 / denom;
        r.sq = if r.tp > 0 { r.iou_sum / r.tp as f64 } else { 0.0 };
        per_class.push(r);
    }
    let kind = |c: &ClassQuality| classes.kind(c.class);
    Ok(PqReport {
        all: summarize(per_class.iter()),
        things: summarize(per_class.iter().filter(|c| kind(c) == Some(ClassKind::Thing))),
        stuff: summarize(per_class.iter().filter(|c| kind(c) == Some(ClassKind::Stuff))),
        tp: per_class.iter().map(|c| c.tp).sum(),
        fp: per_class.iter().map(|c| c.fp).sum(),
        fn_: per_class.iter().map(|c| c.fn_).sum(),
        per_class,
    })
}
