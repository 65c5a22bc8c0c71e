//! On-disk layout of audit reports and simulation traces.
//!
//! ```text
//! <dir>/report.json        full AuditReport
//! <dir>/u_metrics.csv      taxonomy,metric,k,value
//! <dir>/distributions.json {group: [probs]}
//! <dir>/rankings.jsonl     every list and counterfactual ranking behind the tables
//! <dir>/probe.csv          mode,taxonomy,group,metric,value (when a probe ran)
//!
//! <dir>/simulation.json    metadata, config and per-group series
//! <dir>/trace-<group>.csv  round,gini,shannon,<topic labels...>
//! ```
//!
//! Files carry no timestamps, so equal inputs give byte-identical output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::audit::{AuditReport, ReportMetadata};
use crate::simulate::SimulationResult;
use crate::Error;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(io_err(path))
}

fn pretty<T: Serialize>(value: &T) -> Result<String, Error> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn u_metrics_csv(report: &AuditReport) -> String {
    let mut out = String::from("taxonomy,metric,k,value\n");
    for cf in &report.counterfactual {
        for c in &cf.cells {
            let _ = writeln!(out, "{},{},{},{:.6}", c.taxonomy, c.metric, c.k, c.value);
        }
    }
    out
}

pub fn probe_csv(report: &AuditReport) -> String {
    let mut out = String::from("mode,taxonomy,group,metric,value\n");
    for a in &report.probe_accuracy {
        let _ = writeln!(
            out,
            "{},{},all,accuracy,{:.6}",
            a.mode, a.taxonomy, a.accuracy
        );
        let _ = writeln!(
            out,
            "{},{},all,random_baseline,{:.6}",
            a.mode, a.taxonomy, a.random_baseline
        );
    }
    for p in &report.probe {
        let _ = writeln!(
            out,
            "{},{},{},recall,{:.6}",
            p.mode, p.taxonomy, p.group, p.recall
        );
    }
    out
}

/// `{group: probs}` over every topic audit in the report.
pub fn distributions_json(report: &AuditReport) -> Result<String, Error> {
    let map: BTreeMap<&str, &Vec<f64>> = report
        .topic_audits
        .iter()
        .flat_map(|t| t.distributions.iter())
        .map(|d| (d.group.as_str(), &d.probs))
        .collect();
    pretty(&map)
}

pub fn rankings_jsonl(report: &AuditReport) -> Result<String, Error> {
    let mut out = String::new();
    for audit in &report.topic_audits {
        for (group, list) in &audit.lists {
            let line = json!({
                "kind": "topic",
                "taxonomy": audit.taxonomy,
                "group": group,
                "list": list,
            });
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
    }
    for cf in &report.counterfactual {
        for o in &cf.outcomes {
            let line = json!({
                "kind": "counterfactual",
                "taxonomy": cf.taxonomy,
                "outcome": o,
            });
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Write the report directory and return the paths written.
pub fn write_report(dir: &Path, report: &AuditReport) -> Result<Vec<PathBuf>, Error> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = vec![
        ("report.json", pretty(report)?),
        ("u_metrics.csv", u_metrics_csv(report)),
        ("distributions.json", distributions_json(report)?),
        ("rankings.jsonl", rankings_jsonl(report)?),
    ];
    if !report.probe.is_empty() || !report.probe_accuracy.is_empty() {
        files.push(("probe.csv", probe_csv(report)));
    }
    let mut written = Vec::with_capacity(files.len());
    for (name, contents) in files {
        let path = dir.join(name);
        write_file(&path, &contents)?;
        written.push(path);
    }
    Ok(written)
}

/// Read a `report.json` written by [`write_report`]. Raw lists are not part
/// of it, so `rankings.jsonl` cannot be regenerated from the result.
pub fn read_report(path: &Path) -> Result<AuditReport, Error> {
    let raw = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&raw)?)
}

/// Plot-ready per-round series of one group.
pub fn trace_csv(result: &SimulationResult, group: usize) -> String {
    let g = &result.groups[group];
    let mut out = String::from("round,gini,shannon");
    for (label, _) in &g.topic_series {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    for r in 0..g.rounds() {
        let _ = write!(
            out,
            "{},{:.6},{:.6}",
            r + 1,
            g.gini_series[r],
            g.shannon_series[r]
        );
        for (_, series) in &g.topic_series {
            let _ = write!(out, ",{:.6}", series[r]);
        }
        out.push('\n');
    }
    if let Some(err) = &g.truncated {
        let _ = writeln!(out, "# truncated: {}", err.replace('\n', " "));
    }
    out
}

fn file_safe(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

/// Write `simulation.json` and one `trace-<group>.csv` per group.
pub fn write_simulation(
    dir: &Path,
    metadata: &ReportMetadata,
    result: &SimulationResult,
) -> Result<Vec<PathBuf>, Error> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let summary = json!({
        "metadata": metadata,
        "config": result.config,
        "backend_id": result.backend_id,
        "groups": result.groups,
        "user_errors": result
            .users
            .iter()
            .filter_map(|u| u.error.as_ref().map(|e| json!({"user_id": u.user_id, "error": e})))
            .collect::<Vec<_>>(),
    });
    let mut written = Vec::new();
    let path = dir.join("simulation.json");
    write_file(&path, &pretty(&summary)?)?;
    written.push(path);
    for (i, g) in result.groups.iter().enumerate() {
        let path = dir.join(format!("trace-{}.csv", file_safe(&g.group)));
        write_file(&path, &trace_csv(result, i))?;
        written.push(path);
    }
    Ok(written)
}
