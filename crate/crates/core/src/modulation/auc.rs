use crate::error::{Error, Result};

/// Rank-based ROC-AUC (Mann-Whitney U) with tied scores given midranks.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("roc_auc", &[scores.len()], &[labels.len()]));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedScore(format!(
            "ground truth has {pos} positive and {neg} negative tokens"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("roc_auc scores contain NaN".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j + 1) as f64 / 2.0;
        rank_sum += midrank * order[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_inverse_and_tied() {
        let gt = [true, false, false, true];
        let s: Vec<f64> = gt.iter().map(|&g| if g { 1.0 } else { 0.0 }).collect();
        assert_eq!(roc_auc(&s, &gt).unwrap(), 1.0);
        let inv: Vec<f64> = s.iter().map(|v| 1.0 - v).collect();
        assert_eq!(roc_auc(&inv, &gt).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.3; 4], &gt).unwrap(), 0.5);
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(Error::UndefinedScore(_))
        ));
    }
}
