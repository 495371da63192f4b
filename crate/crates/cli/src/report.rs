//! `report`: long-format regret curves and fitted log-log slopes.
//!
//! Runs are grouped by their echoed config with the seed removed, so seeds
//! of one setting share a group.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

use mamex::experiment::write_atomic;

use crate::{input, Failure};

#[derive(Deserialize)]
struct Row {
    k: usize,
    cum_regret: f64,
}

struct Curve {
    run_id: String,
    group: String,
    rows: Vec<Row>,
}

/// Least-squares slope of `ln y` on `ln x`, skipping non-positive points.
/// `None` with fewer than two distinct abscissas.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (logs.len() >= 2 && sxx > 0.0).then(|| sxy / sxx)
}

fn load(dir: &Path) -> Result<Curve, Failure> {
    let record = dir.join("record.csv");
    let mut reader = csv::Reader::from_path(&record)
        .with_context(|| format!("cannot read {}", record.display()))
        .map_err(input)?;
    let rows = reader
        .deserialize()
        .collect::<Result<Vec<Row>, _>>()
        .with_context(|| format!("malformed {}", record.display()))
        .map_err(input)?;
    let echo_path = dir.join("config_echo.json");
    let mut echo: serde_json::Value = std::fs::read_to_string(&echo_path)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .with_context(|| format!("cannot read {}", echo_path.display()))
        .map_err(input)?;
    if let Some(m) = echo.get_mut("mamex").and_then(|m| m.as_object_mut()) {
        m.remove("seed");
    }
    let run_id = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
    Ok(Curve { run_id, group: echo.to_string(), rows })
}

pub fn cmd_report(bundles: &[PathBuf], out: &Path) -> Result<(), Failure> {
    let curves = bundles.iter().map(|b| load(b)).collect::<Result<Vec<_>, _>>()?;
    let mut group_ids: BTreeMap<&str, usize> = BTreeMap::new();
    let mut order = Vec::new();
    for c in &curves {
        if !group_ids.contains_key(c.group.as_str()) {
            group_ids.insert(&c.group, order.len());
            order.push(c.group.as_str());
        }
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run_id", "group", "k", "cum_regret", "avg_regret"]).context("curves")?;
    for c in &curves {
        let g = format!("g{}", group_ids[c.group.as_str()]);
        for r in &c.rows {
            w.write_record([c.run_id.clone(), g.clone(), r.k.to_string(), r.cum_regret.to_string(), (r.cum_regret / r.k as f64).to_string()])
                .context("curves")?;
        }
    }
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write_atomic(&out.join("curves.csv"), &w.into_inner().context("curves")?)?;

    let fmt = |s: Option<f64>| s.map_or_else(String::new, |v| v.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scope", "id", "group", "runs", "slope"]).context("slopes")?;
    for c in &curves {
        let pts: Vec<(f64, f64)> = c.rows.iter().map(|r| (r.k as f64, r.cum_regret)).collect();
        let g = format!("g{}", group_ids[c.group.as_str()]);
        w.write_record(["run".into(), c.run_id.clone(), g, "1".into(), fmt(loglog_slope(&pts))]).context("slopes")?;
    }
    for (gi, key) in order.iter().enumerate() {
        let members: Vec<&Curve> = curves.iter().filter(|c| c.group == *key).collect();
        let pts: Vec<(f64, f64)> = members.iter().flat_map(|c| c.rows.iter().map(|r| (r.k as f64, r.cum_regret))).collect();
        w.write_record(["group".into(), format!("g{gi}"), format!("g{gi}"), members.len().to_string(), fmt(loglog_slope(&pts))])
            .context("slopes")?;
    }
    write_atomic(&out.join("slopes.csv"), &w.into_inner().context("slopes")?)?;
    println!("{} runs in {} groups written to {}", curves.len(), order.len(), out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::loglog_slope;

    #[test]
    fn power_law_slope_is_exact() {
        let pts: Vec<(f64, f64)> = (1..=50).map(|k| (k as f64, 3.0 * (k as f64).powf(0.5))).collect();
        assert!((loglog_slope(&pts).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs_have_no_slope() {
        assert_eq!(loglog_slope(&[(1.0, 2.0)]), None);
        assert_eq!(loglog_slope(&[(2.0, 1.0), (2.0, 3.0)]), None);
        assert_eq!(loglog_slope(&[(1.0, 0.0), (2.0, 0.0)]), None);
    }
}
