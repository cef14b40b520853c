use serde::Serialize;

use crate::data::ClassCatalog;
use crate::error::{Error, Result};

/// `counts[gt·n + pred]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub n: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn from_labels(n: usize, gt: &[usize], pred: &[usize]) -> Result<Self> {
        let mut m = Self::new(n);
        m.add(gt, pred)?;
        Ok(m)
    }

    pub fn add(&mut self, gt: &[usize], pred: &[usize]) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::dim("confusion", &[gt.len()], &[pred.len()]));
        }
        for (&g, &p) in gt.iter().zip(pred) {
            if g >= self.n || p >= self.n {
                return Err(Error::contract(format!(
                    "label ({g}, {p}) outside {} classes",
                    self.n
                )));
            }
            self.counts[g * self.n + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        debug_assert_eq!(self.n, other.n);
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `TP / (TP + FP + FN)`, `None` when the class is absent from both
    /// predictions and ground truth.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let n = self.n;
        let tp = self.counts[c * n + c];
        let gt: u64 = self.counts[c * n..(c + 1) * n].iter().sum();
        let pred: u64 = (0..n).map(|g| self.counts[g * n + c]).sum();
        let union = gt + pred - tp;
        (union > 0).then(|| tp as f64 / union as f64)
    }
}

/// Harmonic mean of seen and unseen mIoU; 0 when either is 0.
pub fn hmiou(seen: f64, unseen: f64) -> f64 {
    if seen <= 0.0 || unseen <= 0.0 {
        0.0
    } else {
        2.0 * seen * unseen / (seen + unseen)
    }
}

/// Per-class IoU in `[0, 1]` and the mean IoUs in percent. A mean is `None`
/// when no class of its group occurs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub iou: Vec<Option<f64>>,
    pub miou_s: Option<f64>,
    pub miou_u: Option<f64>,
    pub miou_all: Option<f64>,
    pub hmiou: Option<f64>,
}

fn mean_percent(iou: &[Option<f64>], classes: &[usize]) -> Option<f64> {
    let vals: Vec<f64> = classes.iter().filter_map(|&c| iou[c]).collect();
    (!vals.is_empty()).then(|| 100.0 * vals.iter().sum::<f64>() / vals.len() as f64)
}

impl MetricsReport {
    pub fn from_confusion(confusion: ConfusionMatrix, catalog: &ClassCatalog) -> Self {
        let iou: Vec<Option<f64>> = (0..confusion.n).map(|c| confusion.iou(c)).collect();
        let miou_s = mean_percent(&iou, catalog.seen());
        let miou_u = mean_percent(&iou, catalog.unseen());
        let miou_all = mean_percent(&iou, &catalog.all());
        let hm = match (miou_s, miou_u) {
            (Some(s), Some(u)) => Some(hmiou(s, u)),
            _ => None,
        };
        Self {
            confusion,
            iou,
            miou_s,
            miou_u,
            miou_all,
            hmiou: hm,
        }
    }

    /// Table row: `mIoU-S  mIoU-U  mIoU-All  hmIoU`.
    pub fn table(&self, title: &str) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
        format!(
            "{:<16} {:>8} {:>8} {:>8} {:>8}",
            title,
            f(self.miou_s),
            f(self.miou_u),
            f(self.miou_all),
            f(self.hmiou)
        )
    }

    pub fn table_header() -> String {
        format!(
            "{:<16} {:>8} {:>8} {:>8} {:>8}",
            "", "mIoU-S", "mIoU-U", "mIoU-All", "hmIoU"
        )
    }
}
