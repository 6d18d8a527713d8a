use std::io::Write;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "epoch,step,loss_total,loss_elbo,loss_d,loss_g,loss_ae,loss_cls,rmse,auc,seconds";

/// One evaluation event. Inapplicable fields are `None` and written empty.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: usize,
    pub loss_total: Option<f64>,
    pub loss_elbo: Option<f64>,
    pub loss_d: Option<f64>,
    pub loss_g: Option<f64>,
    pub loss_ae: Option<f64>,
    pub loss_cls: Option<f64>,
    pub rmse: Option<f64>,
    pub auc: Option<f64>,
    pub seconds: Option<f64>,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.step,
            f(self.loss_total),
            f(self.loss_elbo),
            f(self.loss_d),
            f(self.loss_g),
            f(self.loss_ae),
            f(self.loss_cls),
            f(self.rmse),
            f(self.auc),
            f(self.seconds)
        )
    }
}

pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[MetricsRow], header: bool) -> Result<()> {
    if header {
        writeln!(w, "{METRICS_HEADER}")?;
    }
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    w.flush()?;
    Ok(())
}

/// Mann–Whitney estimate of `P(score⁺ > score⁻) + ½ P(tie)`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::invalid(format!("score {bad} is not a number")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of mid-ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass)));
    }

    #[test]
    fn empty_fields_are_blank() {
        let row = MetricsRow {
            epoch: 0,
            step: 0,
            loss_total: None,
            loss_elbo: None,
            loss_d: None,
            loss_g: None,
            loss_ae: None,
            loss_cls: None,
            rmse: Some(0.5),
            auc: None,
            seconds: None,
        };
        assert_eq!(row.csv_line(), "0,0,,,,,,,0.5,,");
    }
}
