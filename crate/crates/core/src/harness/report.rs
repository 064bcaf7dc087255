use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{MetricName, PublishedClaim, PublishedRow};
use super::HarnessError;
use crate::forecast::ModelSpec;
use crate::metrics::relative_change;

/// Claims further than this from the recomputed change, in percentage points, are flagged.
pub const CLAIM_TOLERANCE_PP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowSource {
    Computed,
    Published,
}

/// Per-interval averages of the OD metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub rmse_od: f64,
    pub mae_od: f64,
    pub cpc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub source: RowSource,
    pub rmse_od: f64,
    pub mae_od: f64,
    pub cpc: f64,
    /// RMSE over inflow and outflow; absent for published rows.
    pub rmse_flows: Option<f64>,
    pub per_interval: Option<MacroMetrics>,
}

impl ReportRow {
    pub fn published(row: &PublishedRow) -> Self {
        Self {
            model: row.model.clone(),
            source: RowSource::Published,
            rmse_od: row.rmse,
            mae_od: row.mae,
            cpc: row.cpc,
            rmse_flows: None,
            per_interval: None,
        }
    }

    pub fn metric(&self, m: MetricName) -> f64 {
        match m {
            MetricName::Rmse => self.rmse_od,
            MetricName::Mae => self.mae_od,
            MetricName::Cpc => self.cpc,
        }
    }
}

/// Signed fractional changes of one row against the baseline row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeChange {
    pub model: String,
    pub rmse: f64,
    pub mae: f64,
    pub cpc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimCheck {
    pub model: String,
    pub metric: MetricName,
    pub claimed_percent: f64,
    pub recomputed_percent: f64,
    /// `|claimed - recomputed|` in percentage points.
    pub discrepancy_pp: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelLog {
    pub model: String,
    pub spec: ModelSpec,
    pub forecast_calls: u64,
    /// Calls answered with zeros because the context was all zero.
    pub zero_skipped: u64,
    pub adapter: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataProvenance {
    pub rows_rejected: u64,
    pub records_processed: u64,
    pub unlocated: u64,
    pub out_of_axis: u64,
    pub tiles: usize,
    pub train_intervals: usize,
    pub test_intervals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_digest: String,
    pub evaluation: String,
    pub data: DataProvenance,
    pub models: Vec<ModelLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub name: String,
    pub rows: Vec<ReportRow>,
    pub baseline: Option<String>,
    pub relative_changes: Vec<RelativeChange>,
    pub claims: Vec<ClaimCheck>,
    pub provenance: Option<Provenance>,
}

impl EvaluationReport {
    pub fn row(&self, model: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn change(&self, model: &str) -> Option<&RelativeChange> {
        self.relative_changes.iter().find(|c| c.model == model)
    }

    pub fn flagged_claims(&self) -> impl Iterator<Item = &ClaimCheck> {
        self.claims.iter().filter(|c| c.flagged)
    }
}

/// Builds a report from computed rows followed by published rows.
///
/// Relative changes are listed for every row except the baseline. Each
/// claim is compared with the change recomputed from the rows and flagged
/// when it is off by more than [`CLAIM_TOLERANCE_PP`].
pub fn assemble_report(
    name: &str,
    computed: Vec<ReportRow>,
    published: &[PublishedRow],
    baseline: Option<&str>,
    claims: &[PublishedClaim],
    provenance: Option<Provenance>,
) -> Result<EvaluationReport, HarnessError> {
    let mut rows = computed;
    rows.extend(published.iter().map(ReportRow::published));
    for r in &rows {
        let values = [Some(r.rmse_od), Some(r.mae_od), Some(r.cpc), r.rmse_flows];
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(HarnessError::Report(format!("row {:?} has non-finite metrics", r.model)));
        }
        if rows.iter().filter(|o| o.model == r.model).count() > 1 {
            return Err(HarnessError::Report(format!("duplicate row {:?}", r.model)));
        }
    }

    let base = match baseline {
        Some(b) => Some(
            rows.iter()
                .find(|r| r.model == b)
                .ok_or_else(|| HarnessError::Report(format!("baseline row {b:?} not found")))?
                .clone(),
        ),
        None => None,
    };
    let change = |m: MetricName, r: &ReportRow, b: &ReportRow| {
        relative_change(r.metric(m), b.metric(m))
            .map_err(|e| HarnessError::Report(format!("{} change of {:?}: {e}", m.as_str(), r.model)))
    };

    let mut relative_changes = Vec::new();
    if let Some(b) = &base {
        for r in rows.iter().filter(|r| r.model != b.model) {
            relative_changes.push(RelativeChange {
                model: r.model.clone(),
                rmse: change(MetricName::Rmse, r, b)?,
                mae: change(MetricName::Mae, r, b)?,
                cpc: change(MetricName::Cpc, r, b)?,
            });
        }
    }

    let mut checks = Vec::new();
    for c in claims {
        let b = base.as_ref().ok_or_else(|| HarnessError::Report("claims need a baseline row".into()))?;
        let r = rows
            .iter()
            .find(|r| r.model == c.model)
            .ok_or_else(|| HarnessError::Report(format!("claim refers to unknown row {:?}", c.model)))?;
        let recomputed_percent = 100.0 * change(c.metric, r, b)?;
        let discrepancy_pp = (c.percent - recomputed_percent).abs();
        checks.push(ClaimCheck {
            model: c.model.clone(),
            metric: c.metric,
            claimed_percent: c.percent,
            recomputed_percent,
            discrepancy_pp,
            flagged: discrepancy_pp > CLAIM_TOLERANCE_PP,
        });
    }

    Ok(EvaluationReport {
        name: name.to_string(),
        rows,
        baseline: base.map(|b| b.model),
        relative_changes,
        claims: checks,
        provenance,
    })
}

const CSV_HEADER: [&str; 9] =
    ["model", "source", "rmse_od", "mae_od", "cpc", "rmse_flows", "rel_rmse_od", "rel_mae_od", "rel_cpc"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One line per row in report order, floats in shortest round-trip form.
pub fn render_csv(report: &EvaluationReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in &report.rows {
        let rel = report.change(&r.model);
        let source = match r.source {
            RowSource::Computed => "computed",
            RowSource::Published => "published",
        };
        w.write_record([
            r.model.clone(),
            source.to_string(),
            r.rmse_od.to_string(),
            r.mae_od.to_string(),
            r.cpc.to_string(),
            opt(r.rmse_flows),
            opt(rel.map(|c| c.rmse)),
            opt(rel.map(|c| c.mae)),
            opt(rel.map(|c| c.cpc)),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// Index of the best value in a column, lowest or highest; ties go to the first row.
fn best(values: &[Option<f64>], lower_is_better: bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        let Some(v) = *v else { continue };
        let better = match best {
            None => true,
            Some((_, b)) => if lower_is_better { v < b } else { v > b },
        };
        if better {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

fn cell(v: Option<f64>, is_best: bool) -> String {
    match v {
        None => "-".into(),
        Some(x) if is_best => format!("**{x:.4}**"),
        Some(x) => format!("{x:.4}"),
    }
}

fn percent(v: Option<f64>) -> String {
    v.map(|x| format!("{:+.2}%", 100.0 * x)).unwrap_or_else(|| "-".into())
}

/// Markdown table with the best value of each metric column in bold.
pub fn render_markdown(report: &EvaluationReport) -> String {
    let mut out = String::new();
    let title = if report.name.is_empty() { "Evaluation report" } else { &report.name };
    let _ = writeln!(out, "# {title}\n");

    let columns: [(Vec<Option<f64>>, bool); 4] = [
        (report.rows.iter().map(|r| Some(r.rmse_od)).collect(), true),
        (report.rows.iter().map(|r| Some(r.mae_od)).collect(), true),
        (report.rows.iter().map(|r| Some(r.cpc)).collect(), false),
        (report.rows.iter().map(|r| r.rmse_flows).collect(), true),
    ];
    let winners: Vec<Option<usize>> = columns.iter().map(|(v, low)| best(v, *low)).collect();

    let has_base = report.baseline.is_some();
    out.push_str("| Model | Source | RMSE | MAE | CPC | RMSE (in/out flows) |");
    if has_base {
        out.push_str(" ΔRMSE | ΔMAE | ΔCPC |");
    }
    out.push_str("\n|---|---|---:|---:|---:|---:|");
    if has_base {
        out.push_str("---:|---:|---:|");
    }
    out.push('\n');
    for (i, r) in report.rows.iter().enumerate() {
        let source = match r.source {
            RowSource::Computed => "computed",
            RowSource::Published => "published",
        };
        let _ = write!(out, "| {} | {source} |", r.model);
        for (k, (values, _)) in columns.iter().enumerate() {
            let _ = write!(out, " {} |", cell(values[i], winners[k] == Some(i)));
        }
        if has_base {
            let rel = report.change(&r.model);
            let _ = write!(
                out,
                " {} | {} | {} |",
                percent(rel.map(|c| c.rmse)),
                percent(rel.map(|c| c.mae)),
                percent(rel.map(|c| c.cpc))
            );
        }
        out.push('\n');
    }
    if let Some(b) = &report.baseline {
        let _ = writeln!(out, "\nBold marks the best value per column. Changes are relative to {b}.");
    } else {
        out.push_str("\nBold marks the best value per column.\n");
    }

    if !report.claims.is_empty() {
        out.push_str("\n## Stated changes\n\n| Model | Metric | Stated | Recomputed | Gap (pp) | Flag |\n|---|---|---:|---:|---:|---|\n");
        for c in &report.claims {
            let _ = writeln!(
                out,
                "| {} | {} | {:+.2}% | {:+.2}% | {:.2} | {} |",
                c.model,
                c.metric.as_str(),
                c.claimed_percent,
                c.recomputed_percent,
                c.discrepancy_pp,
                if c.flagged { "MISMATCH" } else { "ok" }
            );
        }
    }

    if let Some(p) = &report.provenance {
        let _ = writeln!(out, "\n## Provenance\n");
        let _ = writeln!(out, "- odflow {}", p.tool_version);
        let _ = writeln!(out, "- config sha256: `{}`", p.config_digest);
        let _ = writeln!(out, "- evaluation: {}", p.evaluation);
        let d = &p.data;
        let _ = writeln!(
            out,
            "- data: {} tiles, {} train / {} test intervals; {} records processed, {} rejected rows, {} unlocated, {} off the time axis",
            d.tiles, d.train_intervals, d.test_intervals, d.records_processed, d.rows_rejected, d.unlocated, d.out_of_axis
        );
        for m in &p.models {
            let spec = serde_json::to_string(&m.spec).expect("spec serializes");
            let _ = write!(out, "- {}: `{spec}`, {} forecast calls, {} all-zero contexts skipped", m.model, m.forecast_calls, m.zero_skipped);
            if let Some(a) = &m.adapter {
                let _ = write!(out, ", adapter {a}");
            }
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub csv: PathBuf,
    pub markdown: PathBuf,
    pub json: PathBuf,
}

impl ReportPaths {
    pub fn in_dir(dir: &Path, stem: &str) -> Self {
        Self {
            csv: dir.join(format!("{stem}.csv")),
            markdown: dir.join(format!("{stem}.md")),
            json: dir.join(format!("{stem}.json")),
        }
    }
}

pub fn write_report(report: &EvaluationReport, paths: &ReportPaths) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(report).map_err(|e| HarnessError::Report(e.to_string()))?;
    for (path, body) in [(&paths.csv, render_csv(report)), (&paths.markdown, render_markdown(report)), (&paths.json, json)] {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }
        std::fs::write(path, body).map_err(|e| HarnessError::io(path, e))?;
    }
    Ok(())
}

pub fn read_report(path: &Path) -> Result<EvaluationReport, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Report(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn computed(model: &str, rmse: f64, mae: f64, cpc: f64) -> ReportRow {
        ReportRow {
            model: model.into(),
            source: RowSource::Computed,
            rmse_od: rmse,
            mae_od: mae,
            cpc,
            rmse_flows: Some(rmse * 2.0),
            per_interval: None,
        }
    }

    #[test]
    fn two_model_csv() {
        let r = assemble_report("t", vec![computed("A", 1.0, 0.5, 0.9), computed("B", 2.0, 1.0, 0.8)], &[], None, &[], None)
            .unwrap();
        let csv = render_csv(&r);
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(r.rows.len(), 2);
        assert!(r.relative_changes.is_empty());
    }

    #[test]
    fn changes_and_claims() {
        let published = [
            PublishedRow { model: "MSAGGN".into(), rmse: 14.12, mae: 11.95, cpc: 0.58 },
            PublishedRow { model: "Moirai-L".into(), rmse: 9.32, mae: 7.34, cpc: 0.62 },
        ];
        let claims = [
            PublishedClaim { model: "Moirai-L".into(), metric: MetricName::Cpc, percent: 6.89 },
            PublishedClaim { model: "Moirai-L".into(), metric: MetricName::Rmse, percent: -32.86 },
        ];
        let r = assemble_report("taxi", vec![], &published, Some("MSAGGN"), &claims, None).unwrap();
        let c = r.change("Moirai-L").unwrap();
        assert!((c.cpc - 0.04 / 0.58).abs() < 1e-12);
        assert!(!r.claims[0].flagged);
        assert!(r.claims[1].flagged);
        assert_eq!(r.flagged_claims().count(), 1);
        assert!(r.change("MSAGGN").is_none());
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(assemble_report("", vec![computed("A", f64::NAN, 0.0, 1.0)], &[], None, &[], None).is_err());
        assert!(assemble_report("", vec![computed("A", 1.0, 1.0, 1.0)], &[], Some("Z"), &[], None).is_err());
        let dup = [PublishedRow { model: "A".into(), rmse: 1.0, mae: 1.0, cpc: 1.0 }];
        assert!(assemble_report("", vec![computed("A", 1.0, 1.0, 1.0)], &dup, None, &[], None).is_err());
    }

    #[test]
    fn markdown_marks_best() {
        let r = assemble_report("m", vec![computed("A", 1.0, 0.5, 0.7), computed("B", 2.0, 0.25, 0.9)], &[], Some("B"), &[], None)
            .unwrap();
        let md = render_markdown(&r);
        assert!(md.contains("| A | computed | **1.0000** | 0.5000 | 0.7000 | **2.0000** | -50.00% | +100.00% | -22.22% |"), "{md}");
        assert!(md.contains("| B | computed | 2.0000 | **0.2500** | **0.9000** | 4.0000 | - | - | - |"), "{md}");
    }

    #[test]
    fn write_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let r = assemble_report("w", vec![computed("A", 1.0, 0.5, 0.9)], &[], None, &[], None).unwrap();
        let paths = ReportPaths::in_dir(&dir.path().join("out"), "rep");
        write_report(&r, &paths).unwrap();
        assert_eq!(read_report(&paths.json).unwrap(), r);
        assert_eq!(std::fs::read_to_string(&paths.csv).unwrap(), render_csv(&r));
    }
}
