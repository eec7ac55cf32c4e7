use std::sync::Arc;

use crate::edgemap::{binarize_at, mirror, EdgeMap, BINARIZE_MAX_THRESHOLD};
use crate::error::{Error, Result};

pub const NEGATIVES_PER_TUPLE: usize = 5;

/// An edge map together with the model (cluster) it was rendered from.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingItem {
    pub id: String,
    pub map: EdgeMap,
    pub model_id: String,
    pub is_query: bool,
}

impl TrainingItem {
    pub fn new(
        id: impl Into<String>,
        map: EdgeMap,
        model_id: impl Into<String>,
        is_query: bool,
    ) -> Self {
        TrainingItem {
            id: id.into(),
            map,
            model_id: model_id.into(),
            is_query,
        }
    }
}

/// A query, a matching positive, and five non-matching negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTuple {
    pub query: Arc<TrainingItem>,
    pub positive: Arc<TrainingItem>,
    pub negatives: Vec<Arc<TrainingItem>>,
}

impl TrainingTuple {
    pub fn new(
        query: Arc<TrainingItem>,
        positive: Arc<TrainingItem>,
        negatives: Vec<Arc<TrainingItem>>,
    ) -> Result<Self> {
        if positive.model_id != query.model_id {
            return Err(Error::Input(format!(
                "positive `{}` is from model `{}`, query `{}` from `{}`",
                positive.id, positive.model_id, query.id, query.model_id
            )));
        }
        if negatives.len() != NEGATIVES_PER_TUPLE {
            return Err(Error::Input(format!(
                "tuple needs {NEGATIVES_PER_TUPLE} negatives, got {}",
                negatives.len()
            )));
        }
        for (i, n) in negatives.iter().enumerate() {
            if n.model_id == query.model_id {
                return Err(Error::Input(format!(
                    "negative `{}` shares model `{}` with the query",
                    n.id, n.model_id
                )));
            }
            if negatives[..i].iter().any(|m| m.model_id == n.model_id) {
                return Err(Error::Input(format!(
                    "two negatives come from model `{}`",
                    n.model_id
                )));
            }
        }
        Ok(TrainingTuple {
            query,
            positive,
            negatives,
        })
    }
}

/// One labeled pair drawn from a tuple.
#[derive(Debug, Clone, Copy)]
pub struct LabeledPair<'a> {
    pub first: &'a TrainingItem,
    pub second: &'a TrainingItem,
    pub positive: bool,
}

/// The query-positive pair followed by the five query-negative pairs.
pub fn pairs_from_tuple(t: &TrainingTuple) -> Vec<LabeledPair<'_>> {
    std::iter::once(LabeledPair {
        first: &t.query,
        second: &t.positive,
        positive: true,
    })
    .chain(t.negatives.iter().map(|n| LabeledPair {
        first: &t.query,
        second: n,
        positive: false,
    }))
    .collect()
}

/// The random choices of one augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    /// Mirror query and positive together.
    pub mirror: bool,
    /// Binarize the query at this threshold.
    pub binarize: Option<f64>,
}

impl Augmentation {
    pub const NONE: Augmentation = Augmentation {
        mirror: false,
        binarize: None,
    };

    /// Two independent fair coins; the threshold is drawn only when binarizing.
    pub fn draw<R: rand::Rng + ?Sized>(rng: &mut R) -> Self {
        let mirror = rng.gen_bool(0.5);
        let binarize = rng
            .gen_bool(0.5)
            .then(|| rng.gen_range(0.0..=BINARIZE_MAX_THRESHOLD));
        Augmentation { mirror, binarize }
    }

    /// Apply to a query/positive pair. Negatives are never transformed; they
    /// are mined afresh against the augmented query.
    pub fn apply(
        &self,
        query: &TrainingItem,
        positive: &TrainingItem,
    ) -> (TrainingItem, TrainingItem) {
        let mut q = query.clone();
        let mut p = positive.clone();
        if self.mirror {
            q.map = mirror(&q.map);
            p.map = mirror(&p.map);
        }
        if let Some(t) = self.binarize {
            q.map = binarize_at(&q.map, t);
        }
        (q, p)
    }
}

/// Draw an augmentation and apply it to the tuple's query and positive.
pub fn augment_tuple<R: rand::Rng + ?Sized>(t: &TrainingTuple, rng: &mut R) -> TrainingTuple {
    let aug = Augmentation::draw(rng);
    apply_augmentation(t, aug)
}

pub fn apply_augmentation(t: &TrainingTuple, aug: Augmentation) -> TrainingTuple {
    if aug == Augmentation::NONE {
        return t.clone();
    }
    let (q, p) = aug.apply(&t.query, &t.positive);
    TrainingTuple {
        query: Arc::new(q),
        positive: Arc::new(p),
        negatives: t.negatives.clone(),
    }
}
