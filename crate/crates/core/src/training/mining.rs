use std::cmp::Ordering;
use std::collections::HashSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::{describe, Descriptor, NetworkWeights};
use crate::training::tuple::TrainingItem;

/// A mining candidate: its id, model, and descriptor under the current
/// weights (`None` when the descriptor is degenerate).
pub struct Candidate<'a> {
    pub id: &'a str,
    pub model_id: &'a str,
    pub descriptor: Option<&'a Descriptor>,
}

/// Pick the `n` nearest candidates whose models differ from the query's
/// and from each other. Equal distances are broken by id.
pub fn select_negatives(
    query_id: &str,
    query_model: &str,
    query: &Descriptor,
    candidates: &[Candidate<'_>],
    n: usize,
) -> Result<Vec<usize>> {
    let mut order: Vec<(f64, usize)> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.model_id != query_model)
        .filter_map(|(i, c)| c.descriptor.map(|d| (query.distance(d), i)))
        .collect();
    order.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| candidates[a.1].id.cmp(candidates[b.1].id))
    });
    let mut used = HashSet::new();
    let mut chosen = Vec::with_capacity(n);
    for (_, i) in order {
        if chosen.len() == n {
            break;
        }
        if used.insert(candidates[i].model_id) {
            chosen.push(i);
        }
    }
    if chosen.len() < n {
        return Err(Error::Mining(format!(
            "query `{query_id}` has only {} eligible negative models, needs {n}",
            chosen.len()
        )));
    }
    Ok(chosen)
}

/// Descriptors of `items` under `weights`, computed in parallel. Degenerate
/// (all-zero) descriptors come back as `None`.
pub fn describe_items<T: AsRef<TrainingItem> + Sync>(
    weights: &NetworkWeights,
    items: &[T],
) -> Vec<Option<Descriptor>> {
    items
        .par_iter()
        .map(|item| {
            let item = item.as_ref();
            match describe(weights, &item.map) {
                Ok(d) => Some(d),
                Err(e) => {
                    log::debug!("skipping `{}` during mining: {e}", item.id);
                    None
                }
            }
        })
        .collect()
}

/// For each query, indices into `pool` of its `n` hardest negatives.
/// Queries whose own descriptor is degenerate get `None`.
pub fn mine_hard_negatives<Q, P>(
    weights: &NetworkWeights,
    queries: &[Q],
    pool: &[P],
    n: usize,
) -> Result<Vec<Option<Vec<usize>>>>
where
    Q: AsRef<TrainingItem> + Sync,
    P: AsRef<TrainingItem> + Sync,
{
    let pool_desc = describe_items(weights, pool);
    let query_desc = describe_items(weights, queries);
    let candidates: Vec<Candidate<'_>> = pool
        .iter()
        .zip(&pool_desc)
        .map(|(item, d)| Candidate {
            id: &item.as_ref().id,
            model_id: &item.as_ref().model_id,
            descriptor: d.as_ref(),
        })
        .collect();
    queries
        .iter()
        .zip(&query_desc)
        .map(|(q, d)| {
            let q = q.as_ref();
            d.as_ref()
                .map(|d| select_negatives(&q.id, &q.model_id, d, &candidates, n))
                .transpose()
        })
        .collect()
}

impl AsRef<TrainingItem> for TrainingItem {
    fn as_ref(&self) -> &TrainingItem {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: &[f64]) -> Descriptor {
        Descriptor::normalize(v.to_vec()).unwrap()
    }

    fn angle(a: f64) -> Descriptor {
        d(&[a.cos(), a.sin()])
    }

    #[test]
    fn same_model_neighbour_is_skipped() {
        let q = angle(0.0);
        let descs = [
            angle(0.05),
            angle(0.1),
            angle(0.2),
            angle(0.3),
            angle(0.4),
            angle(0.5),
            angle(0.6),
        ];
        let models = ["Q", "a", "b", "c", "d", "e", "f"];
        let ids = ["x0", "x1", "x2", "x3", "x4", "x5", "x6"];
        let cands: Vec<Candidate<'_>> = (0..7)
            .map(|i| Candidate {
                id: ids[i],
                model_id: models[i],
                descriptor: Some(&descs[i]),
            })
            .collect();
        let picked = select_negatives("q", "Q", &q, &cands, 5).unwrap();
        assert_eq!(picked, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn exactly_five_foreign_models_are_all_taken() {
        let q = angle(0.0);
        let descs = [angle(3.0), angle(0.1), angle(2.0), angle(1.0), angle(-2.5)];
        let ids = ["a", "b", "c", "d", "e"];
        let cands: Vec<Candidate<'_>> = (0..5)
            .map(|i| Candidate {
                id: ids[i],
                model_id: ids[i],
                descriptor: Some(&descs[i]),
            })
            .collect();
        let mut picked = select_negatives("q", "Q", &q, &cands, 5).unwrap();
        picked.sort();
        assert_eq!(picked, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn hand_built_pool_of_eight() {
        // Distances from the query are chord lengths 2 sin(|angle| / 2); the
        // brute-force order by angle magnitude is
        //   p3 (0.05, model Q: skip), p6 (0.10, m2), p1 (0.15, m1),
        //   p7 (0.20, m2: duplicate, skip), p0 (0.30, m0), p4 (0.50, m4),
        //   p2 (0.70, m3), p5 (0.90, m5)
        let q = angle(0.0);
        let fixture = [
            ("p0", "m0", 0.30),
            ("p1", "m1", -0.15),
            ("p2", "m3", 0.70),
            ("p3", "Q", 0.05),
            ("p4", "m4", -0.50),
            ("p5", "m5", 0.90),
            ("p6", "m2", 0.10),
            ("p7", "m2", -0.20),
        ];
        let descs: Vec<Descriptor> = fixture.iter().map(|s| angle(s.2)).collect();
        let cands: Vec<Candidate<'_>> = fixture
            .iter()
            .zip(&descs)
            .map(|(s, d)| Candidate {
                id: s.0,
                model_id: s.1,
                descriptor: Some(d),
            })
            .collect();
        let picked = select_negatives("q", "Q", &q, &cands, 5).unwrap();
        let ids: Vec<&str> = picked.iter().map(|&i| fixture[i].0).collect();
        assert_eq!(ids, vec!["p6", "p1", "p0", "p4", "p2"]);
    }

    #[test]
    fn ties_break_by_id() {
        let q = angle(0.0);
        let same = angle(0.3);
        let ids = ["b", "a", "c", "e", "d", "f"];
        let cands: Vec<Candidate<'_>> = ids
            .iter()
            .map(|id| Candidate {
                id,
                model_id: id,
                descriptor: Some(&same),
            })
            .collect();
        let picked = select_negatives("q", "Q", &q, &cands, 5).unwrap();
        let got: Vec<&str> = picked.iter().map(|&i| ids[i]).collect();
        assert_eq!(got, vec!["a", "b", "c", "d", "e"]);
    }

    #[test]
    fn too_few_models_names_the_query() {
        let q = angle(0.0);
        let descs = [angle(0.1), angle(0.2), angle(0.3)];
        let cands: Vec<Candidate<'_>> = descs
            .iter()
            .map(|d| Candidate {
                id: "x",
                model_id: "m",
                descriptor: Some(d),
            })
            .collect();
        match select_negatives("query-17", "Q", &q, &cands, 5) {
            Err(Error::Mining(msg)) => assert!(msg.contains("query-17")),
            other => panic!("expected mining error, got {other:?}"),
        }
    }
}
