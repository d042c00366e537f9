//! Hidden-state embeddings and the clusterings built on them.

mod kmeans;
mod kmedoids;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use kmeans::kmeans;
pub use kmedoids::kmedoids;

use crate::data::{EntityKey, EntityRecord};
use crate::error::{Error, Result};
use crate::model::{EmbedMode, EmbedSource, LstmModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub key: EntityKey,
    pub pit_days: usize,
    pub mode: EmbedMode,
    #[serde(default)]
    pub source: EmbedSource,
    pub hidden_part: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_part: Option<Vec<f64>>,
}

impl Embedding {
    /// Clustering vector: the hidden part, optionally followed by the
    /// weighted static part.
    pub fn combined(&self, with_static: bool, w_static: f64) -> Result<Vec<f64>> {
        if !with_static {
            return Ok(self.hidden_part.clone());
        }
        match &self.static_part {
            Some(s) => Ok(combine_embedding(&self.hidden_part, Some(s), w_static)),
            None => Err(Error::Usage(format!("{}: embedding carries no static part", self.key))),
        }
    }
}

/// Feeds the first `pit_days` days and reads out the final recurrent state.
pub fn extract_embedding(
    model: &LstmModel,
    entity: &EntityRecord,
    pit_days: usize,
    mode: EmbedMode,
    source: EmbedSource,
) -> Result<Embedding> {
    let len = entity.series.len();
    if pit_days == 0 || pit_days > len {
        return Err(Error::Data(format!(
            "{}: point in time {pit_days} outside a {len}-day series",
            entity.key
        )));
    }
    let inputs = entity.series.prefix(pit_days).channels();
    let hidden_part = model.embed(&inputs, &entity.statics, mode, source)?;
    Ok(Embedding {
        key: entity.key.clone(),
        pit_days,
        mode,
        source,
        hidden_part,
        static_part: (!entity.statics.is_empty()).then(|| entity.statics.clone()),
    })
}

pub fn combine_embedding(hidden_part: &[f64], static_part: Option<&[f64]>, w_static: f64) -> Vec<f64> {
    let mut out = hidden_part.to_vec();
    if let Some(s) = static_part {
        out.extend(s.iter().map(|v| v * w_static));
    }
    out
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn check_points(points: &[Vec<f64>], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if k > points.len() {
        return Err(Error::Config(format!("k = {k} exceeds {} points", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Usage("points have mixed dimensions".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite coordinate".into()));
    }
    Ok(())
}

/// Relabels clusters in order of first appearance. Returns the new labels
/// and, for each new label, the old one.
pub(crate) fn canonicalize(labels: &[usize], k: usize) -> (Vec<usize>, Vec<usize>) {
    let mut map = vec![usize::MAX; k];
    let mut order = Vec::with_capacity(k);
    for &l in labels {
        if map[l] == usize::MAX {
            map[l] = order.len();
            order.push(l);
        }
    }
    for (old, slot) in map.iter_mut().enumerate() {
        if *slot == usize::MAX {
            *slot = order.len();
            order.push(old);
        }
    }
    (labels.iter().map(|&l| map[l]).collect(), order)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    #[default]
    Kmeans,
    Kmedoids,
}

impl std::str::FromStr for ClusterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(ClusterMethod::Kmeans),
            "kmedoids" => Ok(ClusterMethod::Kmedoids),
            other => Err(Error::Config(format!("unknown clustering method {other:?}"))),
        }
    }
}

impl std::fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClusterMethod::Kmeans => "kmeans",
            ClusterMethod::Kmedoids => "kmedoids",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centers {
    Centroids(Vec<Vec<f64>>),
    /// Point indices.
    Medoids(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub method: ClusterMethod,
    pub labels: Vec<usize>,
    pub centers: Centers,
    /// Total squared distance to the assigned center.
    pub inertia: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        ClusterOptions {
            restarts: 10,
            max_iter: 300,
            tol: 1e-8,
            seed: 0,
        }
    }
}

/// A clustering of named entities with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub method: ClusterMethod,
    pub k: usize,
    pub pit: usize,
    pub mode: EmbedMode,
    pub source: EmbedSource,
    pub with_static: bool,
    pub w_static: f64,
    pub seed: u64,
    pub labels: BTreeMap<EntityKey, usize>,
    /// Centroid vectors, or the keys of the medoid entities.
    pub centers: ClusterCenters,
    pub inertia: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterCenters {
    Centroids(Vec<Vec<f64>>),
    Medoids(Vec<EntityKey>),
}

impl Clustering {
    pub fn keys(&self) -> Vec<EntityKey> {
        self.labels.keys().cloned().collect()
    }

    pub fn label_of(&self, key: &EntityKey) -> Option<usize> {
        self.labels.get(key).copied()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::pipeline::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::pipeline::read_json(path)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub method: ClusterMethod,
    pub k: usize,
    pub with_static: bool,
    pub w_static: f64,
    pub options: ClusterOptions,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        ClusterSpec {
            method: ClusterMethod::Kmeans,
            k: 3,
            with_static: false,
            w_static: 1.0,
            options: ClusterOptions::default(),
        }
    }
}

/// Clusters embeddings that share one point in time, mode and dimension.
/// Entities are ordered by key before clustering.
pub fn cluster_entities(embeddings: &[Embedding], spec: &ClusterSpec) -> Result<Clustering> {
    let Some(first) = embeddings.first() else {
        return Err(Error::Usage("no embeddings to cluster".into()));
    };
    if let Some(bad) = embeddings.iter().find(|e| {
        e.pit_days != first.pit_days || e.mode != first.mode || e.source != first.source
    }) {
        return Err(Error::Usage(format!(
            "{} was extracted at pit {} / {} / {:?}, expected pit {} / {} / {:?}",
            bad.key, bad.pit_days, bad.mode, bad.source, first.pit_days, first.mode, first.source
        )));
    }
    let mut sorted: Vec<&Embedding> = embeddings.iter().collect();
    sorted.sort_by(|a, b| a.key.cmp(&b.key));
    if let Some(w) = sorted.windows(2).find(|w| w[0].key == w[1].key) {
        return Err(Error::Usage(format!("duplicate embedding for {}", w[0].key)));
    }
    let points = sorted
        .iter()
        .map(|e| e.combined(spec.with_static, spec.w_static))
        .collect::<Result<Vec<_>>>()?;
    let dim = points[0].len();
    if let Some((e, p)) = sorted.iter().zip(&points).find(|(_, p)| p.len() != dim) {
        return Err(Error::Usage(format!(
            "{} has dimension {}, expected {dim}",
            e.key,
            p.len()
        )));
    }
    let model = match spec.method {
        ClusterMethod::Kmeans => kmeans(&points, spec.k, &spec.options)?,
        ClusterMethod::Kmedoids => kmedoids(&points, spec.k, &spec.options)?,
    };
    Ok(Clustering {
        method: spec.method,
        k: spec.k,
        pit: first.pit_days,
        mode: first.mode,
        source: first.source,
        with_static: spec.with_static,
        w_static: spec.w_static,
        seed: spec.options.seed,
        labels: sorted
            .iter()
            .zip(&model.labels)
            .map(|(e, &l)| (e.key.clone(), l))
            .collect(),
        centers: match model.centers {
            Centers::Centroids(c) => ClusterCenters::Centroids(c),
            Centers::Medoids(m) => ClusterCenters::Medoids(m.into_iter().map(|i| sorted[i].key.clone()).collect()),
        },
        inertia: model.inertia,
    })
}
