//! Report products built from a campaign's result store: per-task
//! performance vs similarity, property-vs-performance scatter data,
//! property-over-time series, pairwise property correlations, and minimal
//! SVG renderings of the scatter/line data.

use std::collections::BTreeMap;
use std::path::Path;

use crate::csvio;
use crate::error::{Error, Result};

/// Pearson correlation coefficient; None when either side is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = xs[i] - mx;
        let dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

const PROPERTIES: [&str; 6] = [
    "complexity_reduction",
    "dynamics_awareness",
    "diversity",
    "orthogonality",
    "sparsity",
    "non_interference",
];

struct TransferTable {
    /// (source, spec, task_rank, seed) -> auc
    rows: Vec<(String, String, usize, u32, f64)>,
}

fn load_transfers(out: &Path) -> Result<TransferTable> {
    let table = csvio::read_table(&out.join("transfer_auc.csv"))?;
    let (ci_source, ci_spec, ci_rank, ci_seed, ci_auc) = (
        table.col("source")?,
        table.col("spec")?,
        table.col("task_rank")?,
        table.col("seed")?,
        table.col("auc")?,
    );
    let mut rows = Vec::new();
    for row in &table.rows {
        rows.push((
            row[ci_source].clone(),
            row[ci_spec].clone(),
            row[ci_rank].parse().map_err(|e| Error::format(format!("task_rank: {e}")))?,
            row[ci_seed].parse().map_err(|e| Error::format(format!("seed: {e}")))?,
            row[ci_auc].parse().map_err(|e| Error::format(format!("auc: {e}")))?,
        ));
    }
    Ok(TransferTable { rows })
}

/// Emits every report table; returns the list of files written.
pub fn write_reports(out: &Path) -> Result<Vec<String>> {
    let mut written = Vec::new();
    let transfers = load_transfers(out)?;
    if transfers.rows.is_empty() {
        return Err(Error::usage(
            "result store has no transfer rows; run a campaign first",
        ));
    }

    // 1. Performance vs task similarity: mean AUC per (source, task).
    let mut by_source_task: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for (source, _spec, rank, _seed, auc) in &transfers.rows {
        by_source_task
            .entry((source.clone(), *rank))
            .or_default()
            .push(*auc);
    }
    let perf_rows: Vec<Vec<String>> = by_source_task
        .iter()
        .map(|((source, rank), aucs)| {
            let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
            vec![
                source.clone(),
                rank.to_string(),
                aucs.len().to_string(),
                csvio::fmt_f64(mean),
            ]
        })
        .collect();
    let text = csvio::render(&["source", "task_rank", "samples", "mean_auc"], &perf_rows);
    csvio::write_atomic(&out.join("report_perf_vs_similarity.csv"), &text)?;
    written.push("report_perf_vs_similarity.csv".into());

    // Representation-level mean transfer AUC over tasks: frozen sources only
    // (each (spec, seed) is one representation).
    let mut rep_auc: BTreeMap<(String, u32), Vec<f64>> = BTreeMap::new();
    for (source, spec, _rank, seed, auc) in &transfers.rows {
        if source.starts_with("frozen-") {
            rep_auc.entry((spec.clone(), *seed)).or_default().push(*auc);
        }
    }
    let rep_mean: BTreeMap<(String, u32), f64> = rep_auc
        .iter()
        .map(|(k, v)| (k.clone(), v.iter().sum::<f64>() / v.len() as f64))
        .collect();

    // 2. Property-vs-performance scatter: freeze-time normalized properties
    // joined with mean transfer AUC; top-3 representations flagged per
    // activation family.
    let props = csvio::read_table(&out.join("properties_norm.csv"))?;
    let (pi_spec, pi_seed, pi_freeze) = (
        props.col("spec")?,
        props.col("seed")?,
        props.col("is_freeze")?,
    );
    let mut freeze_props: BTreeMap<(String, u32), Vec<(String, f64)>> = BTreeMap::new();
    for row in &props.rows {
        if row[pi_freeze] != "1" {
            continue;
        }
        let spec = row[pi_spec].clone();
        let seed: u32 = row[pi_seed].parse().unwrap_or(0);
        let mut vals = Vec::new();
        for name in PROPERTIES {
            let col = props.col(name)?;
            if let Ok(v) = row[col].parse::<f64>() {
                vals.push((name.to_string(), v));
            }
        }
        freeze_props.insert((spec, seed), vals);
    }
    // top-3 per activation family (the part of the spec label before '-')
    let mut by_family: BTreeMap<String, Vec<((String, u32), f64)>> = BTreeMap::new();
    for (key, auc) in &rep_mean {
        let family = key.0.split('-').next().unwrap_or("").to_string();
        by_family.entry(family).or_default().push((key.clone(), *auc));
    }
    let mut top3: Vec<(String, u32)> = Vec::new();
    for list in by_family.values_mut() {
        list.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        top3.extend(list.iter().take(3).map(|(k, _)| k.clone()));
    }
    let mut scatter_rows: Vec<Vec<String>> = Vec::new();
    for (key, vals) in &freeze_props {
        let Some(auc) = rep_mean.get(key) else {
            continue;
        };
        let flag = top3.contains(key);
        for (name, v) in vals {
            scatter_rows.push(vec![
                key.0.clone(),
                key.1.to_string(),
                name.clone(),
                csvio::fmt_f64(*v),
                csvio::fmt_f64(*auc),
                (flag as u8).to_string(),
            ]);
        }
    }
    let text = csvio::render(
        &["spec", "seed", "property", "value", "mean_transfer_auc", "top3"],
        &scatter_rows,
    );
    csvio::write_atomic(&out.join("report_property_vs_performance.csv"), &text)?;
    written.push("report_property_vs_performance.csv".into());

    // 3. Property-over-time series (straight projection of the norm table).
    let mut series_rows: Vec<Vec<String>> = Vec::new();
    let pi_step = props.col("step")?;
    for row in &props.rows {
        for name in PROPERTIES {
            let col = props.col(name)?;
            if row[col].is_empty() {
                continue;
            }
            series_rows.push(vec![
                row[pi_spec].clone(),
                row[pi_seed].clone(),
                row[pi_step].clone(),
                name.to_string(),
                row[col].clone(),
            ]);
        }
    }
    let text = csvio::render(&["spec", "seed", "step", "property", "value"], &series_rows);
    csvio::write_atomic(&out.join("report_property_over_time.csv"), &text)?;
    written.push("report_property_over_time.csv".into());

    // 4. Pairwise property correlations over representations (freeze-time).
    let mut corr_rows: Vec<Vec<String>> = Vec::new();
    for (i, a) in PROPERTIES.iter().enumerate() {
        for b in PROPERTIES.iter().skip(i + 1) {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for vals in freeze_props.values() {
                let va = vals.iter().find(|(n, _)| n == a).map(|(_, v)| *v);
                let vb = vals.iter().find(|(n, _)| n == b).map(|(_, v)| *v);
                if let (Some(x), Some(y)) = (va, vb) {
                    xs.push(x);
                    ys.push(y);
                }
            }
            let r = pearson(&xs, &ys);
            corr_rows.push(vec![
                a.to_string(),
                b.to_string(),
                xs.len().to_string(),
                r.map(csvio::fmt_f64).unwrap_or_default(),
            ]);
        }
    }
    let text = csvio::render(&["property_a", "property_b", "samples", "pearson_r"], &corr_rows);
    csvio::write_atomic(&out.join("report_property_correlations.csv"), &text)?;
    written.push("report_property_correlations.csv".into());

    // 5. Minimal SVG renderings.
    let svg = scatter_svg(
        "mean transfer AUC vs task rank",
        &by_source_task
            .iter()
            .map(|((source, rank), aucs)| {
                (
                    source.clone(),
                    *rank as f64,
                    aucs.iter().sum::<f64>() / aucs.len() as f64,
                )
            })
            .collect::<Vec<_>>(),
    );
    csvio::write_atomic(&out.join("report_perf_vs_similarity.svg"), &svg)?;
    written.push("report_perf_vs_similarity.svg".into());

    let scatter_pts: Vec<(String, f64, f64)> = scatter_rows
        .iter()
        .filter(|r| r[2] == "complexity_reduction")
        .map(|r| {
            (
                r[0].clone(),
                r[3].parse().unwrap_or(0.0),
                r[4].parse().unwrap_or(0.0),
            )
        })
        .collect();
    let svg2 = scatter_svg("transfer AUC vs complexity reduction", &scatter_pts);
    csvio::write_atomic(&out.join("report_property_scatter.svg"), &svg2)?;
    written.push("report_property_scatter.svg".into());

    Ok(written)
}

/// Tiny scatter plot writer: series keyed by label, colored from a fixed
/// palette, with axes spanning the data range.
pub fn scatter_svg(title: &str, points: &[(String, f64, f64)]) -> String {
    let (w, h, m) = (640.0, 420.0, 50.0);
    let mut xs: Vec<f64> = points.iter().map(|p| p.1).collect();
    let mut ys: Vec<f64> = points.iter().map(|p| p.2).collect();
    if xs.is_empty() {
        xs.push(0.0);
        ys.push(0.0);
    }
    let (x0, x1) = bounds(&xs);
    let (y0, y1) = bounds(&ys);
    let sx = |x: f64| m + (x - x0) / (x1 - x0).max(1e-12) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0).max(1e-12) * (h - 2.0 * m);
    let palette = [
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
    ];
    let mut labels: Vec<&str> = Vec::new();
    for p in points {
        if !labels.contains(&p.0.as_str()) {
            labels.push(&p.0);
        }
    }
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" font-size=\"14\" text-anchor=\"middle\">{title}</text>\n\
         <line x1=\"{m}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>\n",
        w / 2.0,
        h - m,
        w - m,
        h - m,
        h - m,
    );
    for p in points {
        let color = palette[labels.iter().position(|l| *l == p.0).unwrap() % palette.len()];
        svg.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"><title>{}</title></circle>\n",
            sx(p.1),
            sy(p.2),
            p.0
        ));
    }
    for (i, label) in labels.iter().enumerate() {
        let color = palette[i % palette.len()];
        let y = m + 14.0 * i as f64;
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{y}\" r=\"3\" fill=\"{color}\"/><text x=\"{}\" y=\"{}\" font-size=\"10\">{label}</text>\n",
            w - m + 8.0,
            w - m + 14.0,
            y + 3.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(vals: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    (lo, hi)
}
