//! Average precision over ranked lists with binary relevance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-interpolated AP of a best-first relevance sequence:
/// the mean of precision@k over the ranks k holding relevant items.
pub fn average_precision(relevance: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0.0;
    for (k, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            total += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::NoRelevant);
    }
    Ok(total / hits as f64)
}

/// AP of `ordering` where relevance is looked up per id; ids missing
/// from `relevant` count as irrelevant.
pub fn ranking_ap<S: AsRef<str>>(ordering: &[S], relevant: &dyn Fn(&str) -> bool) -> Result<f64> {
    let rel: Vec<bool> = ordering.iter().map(|id| relevant(id.as_ref())).collect();
    average_precision(&rel)
}

/// AP of items ranked by `scores` descending, ties broken by input index.
pub fn scored_ap(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let rel: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
    average_precision(&rel)
}

pub fn mean_average_precision(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::InvalidArgument("no rankings to average".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_event_ap: BTreeMap<String, f64>,
    pub map: f64,
}

impl EvalReport {
    pub fn from_aps(per_event_ap: BTreeMap<String, f64>) -> Result<Self> {
        let aps: Vec<f64> = per_event_ap.values().copied().collect();
        let map = mean_average_precision(&aps)?;
        Ok(EvalReport { per_event_ap, map })
    }

    pub fn render(&self) -> String {
        let width = self.per_event_ap.keys().map(String::len).max().unwrap_or(0).max(5);
        let mut out = format!("{:<width$}  AP\n", "event");
        for (event, ap) in &self.per_event_ap {
            out.push_str(&format!("{event:<width$}  {ap:.4}\n"));
        }
        out.push_str(&format!("{:<width$}  {:.4}\n", "mAP", self.map));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_values() {
        assert_eq!(average_precision(&[true, true, false, false]).unwrap(), 1.0);
        assert!((average_precision(&[true, false, true]).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!((average_precision(&[false, false, false, true]).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(average_precision(&[false, false]), Err(Error::NoRelevant)));
        assert_eq!(mean_average_precision(&[1.0, 0.5]).unwrap(), 0.75);
        assert_eq!(mean_average_precision(&[0.3, 0.3, 0.3]).unwrap(), 0.3);
    }

    #[test]
    fn scored_ap_breaks_ties_by_index() {
        assert_eq!(scored_ap(&[0.5, 0.5], &[true, false]).unwrap(), 1.0);
        assert_eq!(scored_ap(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
    }

    proptest! {
        #[test]
        fn tail_reordering_is_invisible(rel in proptest::collection::vec(any::<bool>(), 1..30), seed in any::<u64>()) {
            prop_assume!(rel.iter().any(|&r| r));
            let last = rel.iter().rposition(|&r| r).unwrap();
            let mut shuffled = rel.clone();
            let tail = &mut shuffled[last + 1..];
            let n = tail.len();
            if n > 1 {
                tail.rotate_left((seed as usize) % n);
            }
            prop_assert_eq!(average_precision(&rel).unwrap(), average_precision(&shuffled).unwrap());
        }

        #[test]
        fn promoting_a_relevant_item_never_hurts(rel in proptest::collection::vec(any::<bool>(), 2..30), pos in any::<usize>()) {
            prop_assume!(rel.iter().any(|&r| r));
            let i = 1 + pos % (rel.len() - 1);
            prop_assume!(rel[i] && !rel[i - 1]);
            let mut up = rel.clone();
            up.swap(i, i - 1);
            prop_assert!(average_precision(&up).unwrap() >= average_precision(&rel).unwrap());
        }
    }
}
