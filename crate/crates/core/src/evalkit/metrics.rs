//! Pixel-count quality metrics for binary predictions (1 = ink).

use serde::{Deserialize, Serialize};

use super::skeleton::skeletonize;
use crate::error::{Error, Result};
use crate::pipeline::image::BinaryImage;

pub const PSNR_CAP: f64 = 100.0;

fn same_dims(op: &str, a: &BinaryImage, b: &BinaryImage) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::Data(format!(
            "{op}: prediction is {}x{} but ground truth is {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Confusion counts with ink as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn add(&mut self, pred: bool, gt: bool) {
        match (pred, gt) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn count(pred: &BinaryImage, gt: &BinaryImage) -> Result<Self> {
        same_dims("confusion", pred, gt)?;
        let mut c = Confusion::default();
        for (&p, &g) in pred.data.iter().zip(&gt.data) {
            c.add(p == 1, g == 1);
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `TP/(TP+FP)`; 0 when nothing is predicted as ink.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Result<f64> {
        if self.tp + self.fn_ == 0 {
            return Err(Error::UndefinedMetric(
                "recall is undefined: ground truth has no ink pixels".into(),
            ));
        }
        Ok(ratio(self.tp, self.tp + self.fn_))
    }

    /// F-measure in percent.
    pub fn f_measure(&self) -> Result<f64> {
        Ok(harmonic(self.precision(), self.recall()?) * 100.0)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// `2PR/(P+R)`, or 0 when both are 0.
pub fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// `10·log10(1/MSE)` on `{0,1}` pixels, capped at [`PSNR_CAP`].
pub fn psnr(pred: &BinaryImage, gt: &BinaryImage) -> Result<f64> {
    same_dims("psnr", pred, gt)?;
    let diff = pred.data.iter().zip(&gt.data).filter(|(a, b)| a != b).count();
    if diff == 0 {
        return Ok(PSNR_CAP);
    }
    let mse = diff as f64 / pred.data.len() as f64;
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// `(precision, recall, FM)`, all in percent.
pub fn f_measure(pred: &BinaryImage, gt: &BinaryImage) -> Result<(f64, f64, f64)> {
    let c = Confusion::count(pred, gt)?;
    Ok((c.precision() * 100.0, c.recall()? * 100.0, c.f_measure()?))
}

/// Skeleton used as the pseudo-recall reference. Falls back to the ground
/// truth itself when thinning erases everything (e.g. isolated 2×2 blobs).
pub fn recall_reference(gt: &BinaryImage) -> BinaryImage {
    let skel = skeletonize(gt);
    if skel.ink_count() == 0 {
        gt.clone()
    } else {
        skel
    }
}

/// `(pseudo_recall, precision, F_ps)` in percent. Pseudo-recall is recall
/// against the ground-truth skeleton; precision uses the full ground truth.
pub fn pseudo_f_measure(pred: &BinaryImage, gt: &BinaryImage) -> Result<(f64, f64, f64)> {
    let c = Confusion::count(pred, gt)?;
    c.recall()?;
    let skel = recall_reference(gt);
    let ps = Confusion::count(pred, &skel)?;
    let pr = ps.recall()?;
    let p = c.precision();
    Ok((pr * 100.0, p * 100.0, harmonic(p, pr) * 100.0))
}

/// All metrics for one prediction/ground-truth pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub psnr: f64,
    pub fmeasure: f64,
    pub pseudo_fmeasure: f64,
    pub precision: f64,
    pub recall: f64,
    pub pseudo_recall: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl MetricsReport {
    /// Flat `key=value` record, space separated.
    pub fn to_kv(&self) -> String {
        format!(
            "psnr={:.4} fmeasure={:.4} pseudo_fmeasure={:.4} precision={:.4} recall={:.4} pseudo_recall={:.4} tp={} fp={} fn={} tn={}",
            self.psnr,
            self.fmeasure,
            self.pseudo_fmeasure,
            self.precision,
            self.recall,
            self.pseudo_recall,
            self.tp,
            self.fp,
            self.fn_,
            self.tn
        )
    }

    /// Unweighted mean of each field (counts are summed).
    pub fn mean(rows: &[MetricsReport]) -> Option<MetricsReport> {
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Some(MetricsReport {
            psnr: avg(|r| r.psnr),
            fmeasure: avg(|r| r.fmeasure),
            pseudo_fmeasure: avg(|r| r.pseudo_fmeasure),
            precision: avg(|r| r.precision),
            recall: avg(|r| r.recall),
            pseudo_recall: avg(|r| r.pseudo_recall),
            tp: rows.iter().map(|r| r.tp).sum(),
            fp: rows.iter().map(|r| r.fp).sum(),
            fn_: rows.iter().map(|r| r.fn_).sum(),
            tn: rows.iter().map(|r| r.tn).sum(),
        })
    }
}

pub fn evaluate(pred: &BinaryImage, gt: &BinaryImage) -> Result<MetricsReport> {
    let c = Confusion::count(pred, gt)?;
    let (pseudo_recall, _, pseudo_fmeasure) = pseudo_f_measure(pred, gt)?;
    Ok(MetricsReport {
        psnr: psnr(pred, gt)?,
        fmeasure: c.f_measure()?,
        pseudo_fmeasure,
        precision: c.precision() * 100.0,
        recall: c.recall()? * 100.0,
        pseudo_recall,
        tp: c.tp,
        fp: c.fp,
        fn_: c.fn_,
        tn: c.tn,
    })
}
