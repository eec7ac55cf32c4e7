use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::edgemap::{resize_max_side, EdgeMap, Raster};
use crate::error::{Error, Result};
use crate::net::NetworkWeights;
use crate::training::mining::{describe_items, select_negatives, Candidate};
use crate::training::tuple::{TrainingItem, TrainingTuple, NEGATIVES_PER_TUPLE};

/// A query and its matching positive. Negatives are mined during training.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub query: Arc<TrainingItem>,
    pub positive: Arc<TrainingItem>,
}

/// Everything [`train`](crate::training::train) consumes.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub anchors: Vec<Anchor>,
    /// Candidates for hard-negative mining.
    pub pool: Vec<Arc<TrainingItem>>,
    /// Fixed tuples scored after every epoch for model selection.
    pub validation: Vec<TrainingTuple>,
}

impl TrainingSet {
    pub fn new(
        anchors: Vec<Anchor>,
        pool: Vec<Arc<TrainingItem>>,
        validation: Vec<TrainingTuple>,
    ) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::Input(
                "training set has no query/positive pairs".into(),
            ));
        }
        if validation.is_empty() {
            return Err(Error::Input("training set has no validation tuples".into()));
        }
        if let Some(a) = anchors
            .iter()
            .find(|a| a.query.model_id != a.positive.model_id)
        {
            return Err(Error::Input(format!(
                "positive `{}` does not share the model of query `{}`",
                a.positive.id, a.query.id
            )));
        }
        Ok(TrainingSet {
            anchors,
            pool,
            validation,
        })
    }

    /// Every map in the set, for size checks.
    pub(crate) fn maps(&self) -> impl Iterator<Item = &TrainingItem> {
        self.anchors
            .iter()
            .flat_map(|a| [&*a.query, &*a.positive])
            .chain(self.pool.iter().map(|p| &**p))
            .chain(self.validation.iter().flat_map(|t| {
                [&*t.query, &*t.positive]
                    .into_iter()
                    .chain(t.negatives.iter().map(|n| &**n))
            }))
    }

    /// Build validation tuples from labeled items: each item with a
    /// same-model partner becomes a query, its positive is the next partner
    /// in order, and its negatives are the hardest foreign-model items under
    /// `weights`.
    pub fn validation_tuples(
        weights: &NetworkWeights,
        items: &[Arc<TrainingItem>],
    ) -> Result<Vec<TrainingTuple>> {
        let descs = describe_items(weights, items);
        let candidates: Vec<Candidate<'_>> = items
            .iter()
            .zip(&descs)
            .map(|(it, d)| Candidate {
                id: &it.id,
                model_id: &it.model_id,
                descriptor: d.as_ref(),
            })
            .collect();
        let mut tuples = Vec::new();
        for (i, item) in items.iter().enumerate() {
            let Some(desc) = &descs[i] else { continue };
            let n = items.len();
            let Some(j) = (1..n)
                .map(|k| (i + k) % n)
                .find(|&j| items[j].model_id == item.model_id)
            else {
                continue;
            };
            let negs = select_negatives(
                &item.id,
                &item.model_id,
                desc,
                &candidates,
                NEGATIVES_PER_TUPLE,
            )?;
            tuples.push(TrainingTuple::new(
                item.clone(),
                items[j].clone(),
                negs.into_iter().map(|k| items[k].clone()).collect(),
            )?);
        }
        Ok(tuples)
    }
}

/// Resize so the longer side equals `max_side`, leaving maps already at that
/// size untouched.
pub fn prepare_map(map: &EdgeMap, max_side: usize) -> EdgeMap {
    if map.max_side() == max_side {
        map.clone()
    } else {
        resize_max_side(map, max_side)
    }
}

/// Role of a manifest record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Query,
    PositivePool,
    NegativePool,
    Validation,
}

impl Role {
    fn parse(s: &str) -> Option<Role> {
        match s {
            "query" => Some(Role::Query),
            "positive-pool" => Some(Role::PositivePool),
            "negative-pool" => Some(Role::NegativePool),
            "validation" => Some(Role::Validation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    pub path: PathBuf,
    pub model_id: String,
    pub role: Role,
}

/// Parse a dataset manifest: one whitespace-separated record per line,
/// `id path model_id role`. Blank lines and lines starting with `#` are
/// skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [id, path, model, role] = fields[..] else {
            return Err(Error::Format(format!(
                "manifest line {}: expected 4 fields, found {}",
                lineno + 1,
                fields.len()
            )));
        };
        let role = Role::parse(role).ok_or_else(|| {
            Error::Format(format!(
                "manifest line {}: unknown role `{role}`",
                lineno + 1
            ))
        })?;
        if !seen.insert(id.to_string()) {
            return Err(Error::Input(format!("duplicate manifest id `{id}`")));
        }
        out.push(ManifestRecord {
            id: id.to_string(),
            path: PathBuf::from(path),
            model_id: model.to_string(),
            role,
        });
    }
    Ok(out)
}

/// Load a manifest and its rasters (paths relative to the manifest's
/// directory), resize every map to `max_side`, pair queries with positives
/// of the same model (the k-th query of a model takes the k-th positive,
/// cycling) and build validation tuples under `weights`.
pub fn load_training_set(
    manifest: &Path,
    weights: &NetworkWeights,
    max_side: usize,
) -> Result<TrainingSet> {
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let records = parse_manifest(&text)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut queries = Vec::new();
    let mut positives: HashMap<String, Vec<Arc<TrainingItem>>> = HashMap::new();
    let mut pool = Vec::new();
    let mut validation = Vec::new();
    for rec in records {
        let raster = Raster::read(&base.join(&rec.path))?;
        let map = prepare_map(&raster.to_edge_map(), max_side);
        let item = Arc::new(TrainingItem::new(
            rec.id,
            map,
            rec.model_id,
            rec.role == Role::Query,
        ));
        match rec.role {
            Role::Query => queries.push(item),
            Role::PositivePool => positives
                .entry(item.model_id.clone())
                .or_default()
                .push(item),
            Role::NegativePool => pool.push(item),
            Role::Validation => validation.push(item),
        }
    }
    let mut used: HashMap<&str, usize> = HashMap::new();
    let mut anchors = Vec::with_capacity(queries.len());
    for q in &queries {
        let candidates = positives.get(&q.model_id).ok_or_else(|| {
            Error::Input(format!(
                "query `{}` has no positive of model `{}`",
                q.id, q.model_id
            ))
        })?;
        let k = used.entry(&q.model_id).or_insert(0);
        anchors.push(Anchor {
            query: q.clone(),
            positive: candidates[*k % candidates.len()].clone(),
        });
        *k += 1;
    }
    let validation = TrainingSet::validation_tuples(weights, &validation)?;
    TrainingSet::new(anchors, pool, validation)
}
