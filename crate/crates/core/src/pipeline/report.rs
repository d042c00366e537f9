use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stages::{
    actual_clustering_path, load_ground_truth, ForecastCompareRow, ForecastSummaryRow, HorizonErrorRow, StabilityRow,
};
use super::svg::{line_chart, Series};
use super::{read_csv, variant_name, write_csv};
use crate::data::{median, EntityKey};
use crate::embedding::{ClusterMethod, Clustering};
use crate::error::{Error, Result};
use crate::metrics::cluster_stability;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReportOptions {
    pub svg: bool,
}

/// One row per clustering, in the layout method / PIT / k / statics / Acc / ARI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummaryRow {
    pub method: ClusterMethod,
    pub pit: usize,
    pub k: usize,
    pub with_static: bool,
    pub accuracy_vs_actual: Option<f64>,
    pub ari_vs_actual: Option<f64>,
    pub accuracy_vs_truth: Option<f64>,
    pub ari_vs_truth: Option<f64>,
    pub inertia: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonSummaryRow {
    pub horizon: usize,
    pub entities: usize,
    pub mean_abs_rel_err_infections: f64,
    pub median_abs_rel_err_infections: f64,
    pub mean_abs_rel_err_deaths: f64,
    pub median_abs_rel_err_deaths: f64,
}

/// Medians are over targets that received at least one donor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastOverviewRow {
    pub targets: usize,
    pub with_donors: usize,
    pub median_ma_rel_err_plain: Option<f64>,
    pub median_ma_rel_err_augmented: Option<f64>,
    pub improved: usize,
}

fn agreement(
    a: &BTreeMap<EntityKey, usize>,
    b: &BTreeMap<EntityKey, usize>,
    k: usize,
) -> Result<Option<(f64, f64)>> {
    let a: BTreeMap<_, _> = a.iter().filter(|(key, _)| b.contains_key(*key)).map(|(k, v)| (k.clone(), *v)).collect();
    if a.is_empty() {
        return Ok(None);
    }
    let b: BTreeMap<_, _> = b.iter().filter(|(key, _)| a.contains_key(*key)).map(|(k, v)| (k.clone(), *v)).collect();
    let s = cluster_stability(&a, &b, k)?;
    Ok(Some((s.accuracy, s.ari)))
}

fn embedding_clusterings(run_dir: &Path) -> Result<Vec<Clustering>> {
    let dir = run_dir.join("clusters");
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|s| s.to_str()).unwrap_or_default();
            name.ends_with(".json") && !name.starts_with("actual_")
        })
        .collect();
    paths.sort();
    let mut out = paths
        .iter()
        .map(|p| super::read_json::<Clustering>(p))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| (a.method, a.with_static, a.pit).cmp(&(b.method, b.with_static, b.pit)));
    Ok(out)
}

fn abs_median(v: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = v.map(f64::abs).collect();
    median(&mut v).unwrap_or(f64::NAN)
}

fn write_svg(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Summary tables under `<run_dir>/report`, built from whatever stage
/// outputs exist; sections without inputs are left out. With `svg`, each
/// chart is written next to the CSV holding its data.
pub fn emit_report(run_dir: &Path, opts: &ReportOptions) -> Result<Vec<PathBuf>> {
    let out_dir = run_dir.join("report");
    let mut written = Vec::new();

    let clusterings = embedding_clusterings(run_dir)?;
    if !clusterings.is_empty() {
        let truth = load_ground_truth(&run_dir.join("entities"))?;
        let mut rows = Vec::new();
        for c in &clusterings {
            let actual_path = actual_clustering_path(run_dir, c.method, c.pit, c.with_static);
            let vs_actual = if actual_path.is_file() {
                let a: Clustering = super::read_json(&actual_path)?;
                agreement(&c.labels, &a.labels, c.k.max(a.k))?
            } else {
                None
            };
            let vs_truth = match &truth {
                Some(t) => {
                    let groups = t.labels.values().copied().max().map_or(0, |m| m + 1);
                    agreement(&c.labels, &t.labels, c.k.max(groups))?
                }
                None => None,
            };
            rows.push(ClusterSummaryRow {
                method: c.method,
                pit: c.pit,
                k: c.k,
                with_static: c.with_static,
                accuracy_vs_actual: vs_actual.map(|v| v.0),
                ari_vs_actual: vs_actual.map(|v| v.1),
                accuracy_vs_truth: vs_truth.map(|v| v.0),
                ari_vs_truth: vs_truth.map(|v| v.1),
                inertia: c.inertia,
            });
        }
        let path = out_dir.join("clustering_summary.csv");
        write_csv(&path, &rows)?;
        written.push(path);
    }

    let stability = run_dir.join("stability.csv");
    if stability.is_file() {
        let rows: Vec<StabilityRow> = read_csv(&stability)?;
        let path = out_dir.join("stability_over_time.csv");
        write_csv(&path, &rows)?;
        written.push(path);
        if opts.svg {
            let mut groups: BTreeMap<(ClusterMethod, bool), (Vec<(f64, f64)>, Vec<(f64, f64)>)> = BTreeMap::new();
            for r in &rows {
                let g = groups.entry((r.method, r.with_static)).or_default();
                g.0.push((r.pit as f64, r.accuracy));
                g.1.push((r.pit as f64, r.actual_accuracy));
            }
            let mut series = Vec::new();
            for ((m, ws), (emb, act)) in groups {
                series.push(Series {
                    name: format!("{m} {}", variant_name(ws)),
                    points: emb,
                });
                series.push(Series {
                    name: format!("{m} {} actual", variant_name(ws)),
                    points: act,
                });
            }
            let reference = rows.first().map_or(0, |r| r.reference_pit);
            let path = out_dir.join("stability_over_time.svg");
            write_svg(
                &path,
                &line_chart(
                    &format!("Cluster stability against PIT {reference}"),
                    "PIT (days)",
                    "accuracy",
                    &series,
                ),
            )?;
            written.push(path);
        }
    }

    let horizons = run_dir.join("horizon_errors.csv");
    if horizons.is_file() {
        let rows: Vec<HorizonErrorRow> = read_csv(&horizons)?;
        let mut by_h: BTreeMap<usize, Vec<&HorizonErrorRow>> = BTreeMap::new();
        for r in &rows {
            by_h.entry(r.horizon).or_default().push(r);
        }
        let summary: Vec<HorizonSummaryRow> = by_h
            .iter()
            .map(|(&h, rs)| {
                let n = rs.len() as f64;
                HorizonSummaryRow {
                    horizon: h,
                    entities: rs.len(),
                    mean_abs_rel_err_infections: rs.iter().map(|r| r.rel_err_infections.abs()).sum::<f64>() / n,
                    median_abs_rel_err_infections: abs_median(rs.iter().map(|r| r.rel_err_infections)),
                    mean_abs_rel_err_deaths: rs.iter().map(|r| r.rel_err_deaths.abs()).sum::<f64>() / n,
                    median_abs_rel_err_deaths: abs_median(rs.iter().map(|r| r.rel_err_deaths)),
                }
            })
            .collect();
        let path = out_dir.join("horizon_summary.csv");
        write_csv(&path, &summary)?;
        written.push(path);
        if opts.svg {
            let series = vec![
                Series {
                    name: "infections".into(),
                    points: summary.iter().map(|r| (r.horizon as f64, r.median_abs_rel_err_infections)).collect(),
                },
                Series {
                    name: "deaths".into(),
                    points: summary.iter().map(|r| (r.horizon as f64, r.median_abs_rel_err_deaths)).collect(),
                },
            ];
            let path = out_dir.join("horizon_summary.svg");
            write_svg(
                &path,
                &line_chart("Median absolute relative error", "horizon (days)", "relative error", &series),
            )?;
            written.push(path);
        }
    }

    let forecasts = run_dir.join("forecast_summary.csv");
    if forecasts.is_file() {
        let rows: Vec<ForecastSummaryRow> = read_csv(&forecasts)?;
        let helped: Vec<&ForecastSummaryRow> = rows.iter().filter(|r| r.donor_count > 0).collect();
        let overview = ForecastOverviewRow {
            targets: rows.len(),
            with_donors: helped.len(),
            median_ma_rel_err_plain: median(&mut helped.iter().map(|r| r.ma_rel_err_plain).collect::<Vec<_>>()),
            median_ma_rel_err_augmented: median(&mut helped.iter().map(|r| r.ma_rel_err_augmented).collect::<Vec<_>>()),
            improved: helped.iter().filter(|r| r.ma_rel_err_augmented < r.ma_rel_err_plain).count(),
        };
        let path = out_dir.join("forecast_summary.csv");
        write_csv(&path, &rows)?;
        written.push(path);
        let path = out_dir.join("forecast_overview.csv");
        write_csv(&path, &[overview])?;
        written.push(path);

        let compare_path = run_dir.join("forecast_vs_actual.csv");
        let shown = rows
            .iter()
            .max_by(|a, b| a.donor_count.cmp(&b.donor_count).then(b.fips.cmp(&a.fips)));
        if let (true, Some(shown)) = (compare_path.is_file(), shown) {
            let compare: Vec<ForecastCompareRow> = read_csv(&compare_path)?
                .into_iter()
                .filter(|r: &ForecastCompareRow| r.fips == shown.fips)
                .collect();
            let path = out_dir.join("forecast_vs_actual.csv");
            write_csv(&path, &compare)?;
            written.push(path);
            if opts.svg {
                let pick = |f: fn(&ForecastCompareRow) -> f64| compare.iter().map(|r| (r.date_offset as f64, f(r))).collect();
                let series = vec![
                    Series { name: "actual".into(), points: pick(|r| r.actual_infections) },
                    Series { name: "plain".into(), points: pick(|r| r.plain_infections) },
                    Series { name: "augmented".into(), points: pick(|r| r.augmented_infections) },
                ];
                let path = out_dir.join("forecast_vs_actual.svg");
                write_svg(
                    &path,
                    &line_chart(
                        &format!("{} infections per capita ({} donors)", shown.fips, shown.donor_count),
                        "days past the cut",
                        "cumulative infections / population",
                        &series,
                    ),
                )?;
                written.push(path);
            }
        }
    }

    if written.is_empty() {
        return Err(Error::Usage(format!("no stage outputs to report under {}", run_dir.display())));
    }
    Ok(written)
}
