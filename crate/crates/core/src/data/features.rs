use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{median, EntityKey, FeatureTable, StaticFeatures};
use crate::error::{Error, Result};

/// Audit record of how static vectors were built, reusable on new entities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    /// Every joined input feature, in join order.
    pub input_names: Vec<String>,
    /// Per-input median used for imputation.
    pub medians: Vec<f64>,
    /// Features kept after dropping zero-variance columns.
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub stdevs: Vec<f64>,
    pub dropped: Vec<String>,
    pub imputed: usize,
    pub warnings: Vec<String>,
}

impl FeatureManifest {
    /// Standardizes a raw row laid out like `input_names`.
    pub fn apply(&self, raw: &[Option<f64>]) -> Result<Vec<f64>> {
        if raw.len() != self.input_names.len() {
            return Err(Error::Shape(format!(
                "raw row has {} features, manifest expects {}",
                raw.len(),
                self.input_names.len()
            )));
        }
        let mut out = Vec::with_capacity(self.names.len());
        let mut kept = self.names.iter().zip(&self.means).zip(&self.stdevs).peekable();
        for ((name, value), med) in self.input_names.iter().zip(raw).zip(&self.medians) {
            if let Some(((kname, mean), sd)) = kept.peek() {
                if *kname == name {
                    out.push((value.unwrap_or(*med) - **mean) / **sd);
                    kept.next();
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct StaticMatrix {
    pub features: BTreeMap<EntityKey, StaticFeatures>,
    pub manifest: FeatureManifest,
}

/// Joins feature tables for `keys`, imputes gaps with medians, and z-scores
/// every column (population standard deviation). Constant columns are
/// dropped.
pub fn build_static_matrix(sources: &[&FeatureTable], keys: &[EntityKey]) -> Result<StaticMatrix> {
    let missing: Vec<String> = keys
        .iter()
        .filter(|k| sources.iter().all(|s| !s.rows.contains_key(k)))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Join { keys: missing });
    }

    let mut input_names = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = Vec::new();
    let mut warnings = Vec::new();
    for source in sources {
        for (j, name) in source.names.iter().enumerate() {
            if input_names.contains(name) {
                warnings.push(format!("feature {name} present in several sources; first kept"));
                continue;
            }
            input_names.push(name.clone());
            columns.push(
                keys.iter()
                    .map(|k| source.rows.get(k).and_then(|r| r.get(j).copied().flatten()))
                    .collect(),
            );
        }
    }

    let n = keys.len() as f64;
    let mut imputed = 0;
    let mut medians = Vec::with_capacity(columns.len());
    let mut names = Vec::new();
    let mut means = Vec::new();
    let mut stdevs = Vec::new();
    let mut dropped = Vec::new();
    let mut kept_cols: Vec<Vec<f64>> = Vec::new();
    for (name, col) in input_names.iter().zip(columns) {
        let mut present: Vec<f64> = col.iter().flatten().copied().collect();
        let med = median(&mut present).unwrap_or(0.0);
        medians.push(med);
        let filled: Vec<f64> = col
            .iter()
            .map(|v| {
                v.unwrap_or_else(|| {
                    imputed += 1;
                    med
                })
            })
            .collect();
        let mean = filled.iter().sum::<f64>() / n;
        let var = filled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            dropped.push(name.clone());
            continue;
        }
        names.push(name.clone());
        means.push(mean);
        stdevs.push(sd);
        kept_cols.push(filled.into_iter().map(|v| (v - mean) / sd).collect());
    }
    if !dropped.is_empty() {
        warnings.push(format!("{} constant feature(s) dropped", dropped.len()));
    }

    let features = keys
        .iter()
        .enumerate()
        .map(|(i, k)| {
            (
                k.clone(),
                StaticFeatures {
                    key: k.clone(),
                    values: kept_cols.iter().map(|c| c[i]).collect(),
                },
            )
        })
        .collect();
    Ok(StaticMatrix {
        features,
        manifest: FeatureManifest {
            input_names,
            medians,
            names,
            means,
            stdevs,
            dropped,
            imputed,
            warnings,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(names: &[&str], rows: &[(&str, Vec<Option<f64>>)]) -> FeatureTable {
        FeatureTable {
            names: names.iter().map(|s| s.to_string()).collect(),
            rows: rows
                .iter()
                .map(|(k, v)| (k.parse().unwrap(), v.clone()))
                .collect(),
            ..Default::default()
        }
    }

    fn keys(ks: &[&str]) -> Vec<EntityKey> {
        ks.iter().map(|k| k.parse().unwrap()).collect()
    }

    #[test]
    fn two_point_z_score() {
        let t = table(&["a"], &[("39001", vec![Some(2.0)]), ("39003", vec![Some(4.0)])]);
        let m = build_static_matrix(&[&t], &keys(&["39001", "39003"])).unwrap();
        assert_eq!(m.features[&"39001".parse().unwrap()].values, vec![-1.0]);
        assert_eq!(m.features[&"39003".parse().unwrap()].values, vec![1.0]);
    }

    #[test]
    fn constant_feature_dropped() {
        let t = table(
            &["a", "const"],
            &[("39001", vec![Some(2.0), Some(7.0)]), ("39003", vec![Some(4.0), Some(7.0)])],
        );
        let m = build_static_matrix(&[&t], &keys(&["39001", "39003"])).unwrap();
        assert_eq!(m.manifest.names, vec!["a"]);
        assert_eq!(m.manifest.dropped, vec!["const"]);
        assert_eq!(m.manifest.warnings.len(), 1);
    }

    #[test]
    fn three_entity_hand_z_scores() {
        let census = table(
            &["pop", "male"],
            &[
                ("39001", vec![Some(10.0), Some(4.0)]),
                ("39003", vec![Some(20.0), Some(9.0)]),
                ("39005", vec![Some(60.0), Some(5.0)]),
            ],
        );
        let usda = table(&["income"], &[("39001", vec![Some(1.0)]), ("39005", vec![Some(3.0)])]);
        let ks = keys(&["39001", "39003", "39005"]);
        let m = build_static_matrix(&[&census, &usda], &ks).unwrap();

        // pop: mean 30, var (400 + 100 + 900)/3
        let sd_pop = (1400.0f64 / 3.0).sqrt();
        // male: mean 6, var (4 + 9 + 1)/3
        let sd_male = (14.0f64 / 3.0).sqrt();
        // income: "39003" imputed with median(1, 3) = 2 → mean 2, var 2/3
        let sd_inc = (2.0f64 / 3.0).sqrt();
        let expected = [
            [-20.0 / sd_pop, -2.0 / sd_male, -1.0 / sd_inc],
            [-10.0 / sd_pop, 3.0 / sd_male, 0.0],
            [30.0 / sd_pop, -1.0 / sd_male, 1.0 / sd_inc],
        ];
        for (k, row) in ks.iter().zip(expected) {
            let got = &m.features[k].values;
            for (g, e) in got.iter().zip(row) {
                assert!((g - e).abs() < 1e-12, "{k}: {g} vs {e}");
            }
        }
        assert_eq!(m.manifest.imputed, 1);
        assert_eq!(m.manifest.names, vec!["pop", "male", "income"]);

        let again = m.manifest.apply(&[Some(20.0), Some(9.0), None]).unwrap();
        assert_eq!(again, m.features[&ks[1]].values);
    }

    #[test]
    fn join_error_lists_keys() {
        let t = table(&["a"], &[("39001", vec![Some(1.0)])]);
        match build_static_matrix(&[&t], &keys(&["39001", "39099", "39097"])) {
            Err(Error::Join { keys }) => assert_eq!(keys, vec!["39099", "39097"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn output_keys_match_request() {
        let t = table(
            &["a", "b"],
            &[
                ("39001", vec![Some(1.0), Some(5.0)]),
                ("39003", vec![Some(2.0), None]),
                ("39005", vec![Some(4.0), Some(1.0)]),
            ],
        );
        let ks = keys(&["39005", "39001"]);
        let m = build_static_matrix(&[&t], &ks).unwrap();
        let got: Vec<&EntityKey> = m.features.keys().collect();
        assert_eq!(got.len(), 2);
        assert!(m.features.values().all(|f| f.values.len() == m.manifest.names.len()));
    }
}
