use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::retrieval::RankedList;

fn check_unique(list: &RankedList) -> Result<()> {
    let mut seen = HashSet::with_capacity(list.len());
    for id in list.ids() {
        if !seen.insert(id) {
            return Err(Error::Input(format!(
                "item `{id}` appears twice in a ranking"
            )));
        }
    }
    Ok(())
}

/// Mean over relevant items of the precision at the rank where each is
/// found. Relevant items missing from the ranking contribute zero; an empty
/// relevant set gives 0.
pub fn average_precision(list: &RankedList, relevant: &HashSet<String>) -> Result<f64> {
    check_unique(list)?;
    if relevant.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, id) in list.ids().enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

/// Mean average precision over queries.
pub fn evaluate_map(rankings: &[RankedList], relevant: &[HashSet<String>]) -> Result<f64> {
    if rankings.len() != relevant.len() {
        return Err(Error::Input(format!(
            "{} rankings but {} relevance sets",
            rankings.len(),
            relevant.len()
        )));
    }
    if rankings.is_empty() {
        return Err(Error::Input("no queries to evaluate".into()));
    }
    let mut total = 0.0;
    for (list, rel) in rankings.iter().zip(relevant) {
        total += average_precision(list, rel)?;
    }
    Ok(total / rankings.len() as f64)
}

/// Fraction of queries whose true match is among the first `k` results.
pub fn evaluate_acc_at_k(rankings: &[RankedList], true_match: &[String], k: usize) -> Result<f64> {
    if rankings.len() != true_match.len() {
        return Err(Error::Input(format!(
            "{} rankings but {} true matches",
            rankings.len(),
            true_match.len()
        )));
    }
    if rankings.is_empty() {
        return Err(Error::Input("no queries to evaluate".into()));
    }
    let found = rankings
        .iter()
        .zip(true_match)
        .filter(|(list, m)| list.ids().take(k).any(|id| id == m.as_str()))
        .count();
    Ok(found as f64 / rankings.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(ids: &[&str]) -> RankedList {
        RankedList {
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, s)| (s.to_string(), -(i as f64)))
                .collect(),
        }
    }

    fn set(ids: &[&str]) -> HashSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn hand_fixture() {
        let l = list(&["a", "x", "b", "y"]);
        let ap = average_precision(&l, &set(&["a", "b"])).unwrap();
        assert!((ap - 0.8333).abs() < 1e-4);
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_empty() {
        let l = list(&["a", "b", "c"]);
        assert_eq!(average_precision(&l, &set(&["a", "b"])).unwrap(), 1.0);
        assert_eq!(average_precision(&l, &set(&[])).unwrap(), 0.0);
        assert_eq!(average_precision(&l, &set(&["a", "zz"])).unwrap(), 0.5);
    }

    #[test]
    fn duplicates_are_rejected() {
        assert!(matches!(
            evaluate_map(&[list(&["a", "a"])], &[set(&["a"])]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn acc_at_k_examples() {
        let one = list(&["x", "y", "m"]);
        assert_eq!(
            evaluate_acc_at_k(std::slice::from_ref(&one), &["m".into()], 1).unwrap(),
            0.0
        );
        assert_eq!(evaluate_acc_at_k(&[one], &["m".into()], 10).unwrap(), 1.0);

        let ids: Vec<String> = (0..12).map(|i| format!("i{i}")).collect();
        let mk = |rank: usize| {
            let mut v: Vec<&str> = ids.iter().map(String::as_str).collect();
            v.swap(0, rank - 1);
            list(&v)
        };
        let rankings: Vec<RankedList> = [1, 2, 11, 5].iter().map(|&r| mk(r)).collect();
        let truth = vec!["i0".to_string(); 4];
        assert_eq!(evaluate_acc_at_k(&rankings, &truth, 10).unwrap(), 0.75);
    }
}
