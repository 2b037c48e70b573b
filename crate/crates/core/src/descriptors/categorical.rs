use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datamodel::DataMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSummary {
    pub column: usize,
    /// `(level, count, relative frequency)` in sorted level order.
    pub frequencies: Vec<(String, usize, f64)>,
    pub modal_level: String,
    pub modal_frequency: f64,
    pub unique_levels: usize,
    /// Levels with at least `n_min` rows, eligible for partitioning.
    pub qualifying: Vec<String>,
}

/// Returns `None` for a column with no observed cells.
pub fn categorical_summary(m: &DataMatrix, column: usize, n_min: usize) -> Option<CategoricalSummary> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for i in 0..m.n() {
        if let Some(k) = m.level_key(i, column) {
            *counts.entry(k).or_default() += 1;
        }
    }
    let total: usize = counts.values().sum();
    if total == 0 {
        return None;
    }
    let frequencies: Vec<(String, usize, f64)> = counts
        .iter()
        .map(|(k, &c)| (k.clone(), c, c as f64 / total as f64))
        .collect();
    // strict comparison keeps the first level in sorted order on ties
    let modal = frequencies
        .iter()
        .fold(&frequencies[0], |best, f| if f.1 > best.1 { f } else { best });
    Some(CategoricalSummary {
        column,
        modal_level: modal.0.clone(),
        modal_frequency: modal.2,
        unique_levels: frequencies.len(),
        qualifying: frequencies
            .iter()
            .filter(|f| f.1 >= n_min)
            .map(|f| f.0.clone())
            .collect(),
        frequencies,
    })
}

/// Row indices where `column` takes `level`.
pub fn level_rows(m: &DataMatrix, column: usize, level: &str) -> Vec<usize> {
    (0..m.n())
        .filter(|&i| m.level_key(i, column).as_deref() == Some(level))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::read_csv;

    fn labels(spec: &[(&str, usize)]) -> DataMatrix {
        let mut s = String::from("x,lab\n");
        let mut i = 0;
        for (l, c) in spec {
            for _ in 0..*c {
                s.push_str(&format!("{i},{l}\n"));
                i += 1;
            }
        }
        read_csv(s.as_bytes()).unwrap()
    }

    #[test]
    fn balanced_three_levels() {
        let m = labels(&[("setosa", 50), ("versicolor", 50), ("virginica", 50)]);
        let s = categorical_summary(&m, 1, 30).unwrap();
        assert_eq!(s.unique_levels, 3);
        assert!(s.frequencies.iter().all(|f| (f.2 - 1.0 / 3.0).abs() < 1e-12));
        assert_eq!(s.qualifying.len(), 3);
        assert_eq!(s.modal_level, "setosa");
    }

    #[test]
    fn undersized_level_excluded() {
        let m = labels(&[("a", 29), ("b", 30)]);
        let s = categorical_summary(&m, 1, 30).unwrap();
        assert_eq!(s.qualifying, vec!["b".to_string()]);
        assert_eq!(s.modal_level, "b");
        assert_eq!(level_rows(&m, 1, "a").len(), 29);
    }

    #[test]
    fn single_level() {
        let m = labels(&[("only", 5)]);
        let s = categorical_summary(&m, 1, 30).unwrap();
        assert_eq!((s.modal_level.as_str(), s.unique_levels), ("only", 1));
        assert!(s.qualifying.is_empty());
    }

    #[test]
    fn numeric_levels_use_canonical_keys() {
        let m = read_csv("q\n5\n5.0\n6\n".as_bytes()).unwrap();
        let s = categorical_summary(&m, 0, 1).unwrap();
        assert_eq!(s.frequencies[0], ("5".to_string(), 2, 2.0 / 3.0));
    }
}
