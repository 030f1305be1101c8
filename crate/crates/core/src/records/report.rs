//! Transfer reports as JSON, CSV and Markdown. Rendering is a pure function
//! of the document, so re-rendering a saved report gives identical bytes.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::transfer::{search_time_ledger, SearchTimeLedger, SourceFilter, TransferReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format `{other}` (json, csv, md)")),
        }
    }
}

/// A report plus the provenance needed to reproduce it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportDocument {
    pub version: String,
    /// Resolved configuration of the run that produced the report.
    pub config: serde_json::Value,
    pub report: TransferReport,
    pub ledger: SearchTimeLedger,
}

impl ReportDocument {
    pub fn new(version: impl Into<String>, config: serde_json::Value, report: TransferReport) -> Self {
        ReportDocument {
            version: version.into(),
            config,
            ledger: search_time_ledger(&report),
            report,
        }
    }
}

pub fn render(doc: &ReportDocument, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(doc).expect("reports serialize");
            s.push('\n');
            s
        }
        ReportFormat::Csv => render_csv(&doc.report),
        ReportFormat::Markdown => render_markdown(doc),
    }
}

pub const CSV_HEADER: [&str; 6] = [
    "kernel",
    "class",
    "chosen_source",
    "cost_ns",
    "invalid_count",
    "fallback",
];

fn render_csv(report: &TransferReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for k in &report.per_kernel {
        w.write_record([
            k.kernel.clone(),
            k.class.to_string(),
            k.chosen_source.clone(),
            k.cost_ns.to_string(),
            k.invalid_count.to_string(),
            k.fallback.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

fn ms(ns: Option<u64>) -> String {
    ns.map_or_else(|| "n/a".to_string(), |v| format!("{:.3}", v as f64 / 1e6))
}

fn render_markdown(doc: &ReportDocument) -> String {
    let r = &doc.report;
    let source = match &r.source {
        SourceFilter::Pool => "pool".to_string(),
        SourceFilter::Models(m) => m.join(", "),
    };
    let mut s = String::new();
    let _ = writeln!(s, "# Transfer report: {}", r.target);
    let _ = writeln!(s);
    let _ = writeln!(s, "- version: `{}`", doc.version);
    let _ = writeln!(s, "- source: {source}");
    let _ = writeln!(s, "- cost mode: {:?}", r.mode);
    let _ = writeln!(s, "- untuned: {} ms", ms(r.untuned_cost.median_ns));
    let _ = writeln!(s, "- composed: {} ms", ms(r.composed_cost.median_ns));
    let _ = writeln!(s, "- speedup: {:.3}x", r.speedup);
    let _ = writeln!(s, "- search time: {} ms", ms(Some(r.search_time_ns)));
    let _ = writeln!(s, "- fallbacks: {} of {}", r.fallback_count(), r.per_kernel.len());
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "| kernel | class | uses | source | untuned ms | chosen ms | candidates | invalid | fallback |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|");
    for k in &r.per_kernel {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            k.kernel,
            k.class,
            k.use_count,
            k.chosen_source,
            ms(k.baseline.median_ns),
            ms(Some(k.cost_ns)),
            k.candidates.len(),
            k.invalid_count,
            if k.fallback { "yes" } else { "no" }
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "## Search time by class");
    let _ = writeln!(s);
    for (class, ns) in &doc.ledger.per_class {
        let _ = writeln!(s, "- {class}: {} ms", ms(Some(*ns)));
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "## Configuration");
    let _ = writeln!(s);
    let _ = writeln!(s, "```json");
    let _ = writeln!(
        s,
        "{}",
        serde_json::to_string_pretty(&doc.config).expect("config serializes")
    );
    let _ = writeln!(s, "```");
    s
}
