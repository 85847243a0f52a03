//! Report documents: a human-readable Markdown table followed by a fenced
//! `json` block carrying the same values.

use serde::{Deserialize, Serialize};

use bsynth_core::downstream::{Arm, MetricRow, ScenarioReport};
use bsynth_core::fidelity::{FidelityReport, REPORT_COLUMNS};
use bsynth_core::privacy::{EpsilonReport, MiaResult, UniquenessAudit};

pub const FIDELITY_FILE: &str = "fidelity_report.md";
pub const PRIVACY_FILE: &str = "privacy_report.md";
pub const SUMMARY_FILE: &str = "report.md";

pub fn scenario_file(id: bsynth_core::downstream::ScenarioId) -> String {
    format!("scenario_{}.md", id.as_str())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityDocument {
    pub synthetic_users: usize,
    pub real_users: usize,
    pub metrics: FidelityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaSummary {
    pub classifier: String,
    pub mean_success_rate: f64,
    pub trials: Vec<MiaResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessSummary {
    pub threshold: f64,
    pub fraction_below_threshold: f64,
    /// `(k, mean of the top-k overlap ratios)` per requested k.
    pub mean_top_k: Vec<(usize, f64)>,
    pub audit: UniquenessAudit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSummary {
    pub below_4_at_cdf_0_9: bool,
    pub report: EpsilonReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyDocument {
    pub runs: u32,
    pub members: usize,
    pub nonmembers: usize,
    pub uniqueness: UniquenessSummary,
    pub mia: Option<Vec<MiaSummary>>,
    pub epsilon: Option<EpsilonSummary>,
    /// Why an optional section was skipped.
    pub notes: Vec<String>,
}

fn json_block<T: Serialize>(value: &T) -> String {
    format!(
        "```json\n{}\n```\n",
        serde_json::to_string_pretty(value).expect("serializable report")
    )
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for r in rows {
        out.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    out
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{:.1}%", v * 100.0))
}

pub fn render_fidelity(doc: &FidelityDocument) -> String {
    let m = &doc.metrics;
    let mut out = String::from("# Fidelity\n\n");
    out.push_str(&format!(
        "{} synthetic users against {} real users. KS over timeslots ({:?}), statistic {:.4}.\n\n",
        doc.synthetic_users, doc.real_users, m.ks_mode, m.ks_statistic
    ));
    out.push_str(&table(&REPORT_COLUMNS, &[m.row().to_vec()]));
    out.push('\n');
    out.push_str(&json_block(doc));
    out
}

pub fn render_privacy(doc: &PrivacyDocument) -> String {
    let mut out = String::from("# Privacy\n\n");
    out.push_str(&format!(
        "{} generation run(s); {} member and {} non-member users.\n\n",
        doc.runs, doc.members, doc.nonmembers
    ));

    let u = &doc.uniqueness;
    out.push_str("## Uniqueness\n\n");
    out.push_str(&format!(
        "{:.1}% of generated trajectories have a top-1 overlap ratio below {:.2}.\n\n",
        u.fraction_below_threshold * 100.0,
        u.threshold
    ));
    let rows: Vec<Vec<String>> = u
        .mean_top_k
        .iter()
        .map(|(k, v)| vec![k.to_string(), format!("{v:.4}")])
        .collect();
    out.push_str(&table(&["k", "mean top-k overlap"], &rows));
    out.push('\n');
    let rows: Vec<Vec<String>> = u
        .audit
        .top1_cdf
        .iter()
        .map(|(x, c)| vec![format!("{x:.4}"), format!("{c:.4}")])
        .collect();
    out.push_str(&table(&["top-1 overlap", "CDF"], &rows));
    out.push('\n');

    out.push_str("## Membership inference\n\n");
    match &doc.mia {
        Some(mia) => {
            let rows: Vec<Vec<String>> = mia
                .iter()
                .map(|m| {
                    vec![
                        m.classifier.clone(),
                        format!("{:.4}", m.mean_success_rate),
                        m.trials.len().to_string(),
                    ]
                })
                .collect();
            out.push_str(&table(&["classifier", "success rate", "trials"], &rows));
        }
        None => out.push_str("Skipped.\n"),
    }
    out.push('\n');

    out.push_str("## Privacy budget\n\n");
    match &doc.epsilon {
        Some(e) => {
            out.push_str(&format!(
                "delta = {:e}; epsilon < 4 at CDF 0.9: {}.\n\n",
                e.report.delta,
                if e.below_4_at_cdf_0_9 { "yes" } else { "no" }
            ));
            let rows: Vec<Vec<String>> = e
                .report
                .cdf_points
                .iter()
                .map(|(x, c)| vec![format!("{x:.4}"), format!("{c:.4}")])
                .collect();
            out.push_str(&table(&["epsilon", "CDF"], &rows));
        }
        None => out.push_str("Skipped.\n"),
    }
    out.push('\n');
    if !doc.notes.is_empty() {
        for n in &doc.notes {
            out.push_str(&format!("- {n}\n"));
        }
        out.push('\n');
    }
    out.push_str(&json_block(doc));
    out
}

fn arm_label(a: Arm) -> &'static str {
    a.as_str()
}

pub fn render_scenario(r: &ScenarioReport) -> String {
    let mut out = format!("# Scenario {}\n\n", r.scenario.as_str());
    out.push_str(&format!("{} individual users evaluated.\n\n", r.per_user.len()));
    let mut rows: Vec<Vec<String>> = r
        .arms
        .iter()
        .map(|(a, e)| {
            let mut row = vec![arm_label(*a).to_string()];
            row.extend(e.values().iter().map(|v| format!("{v:.4}")));
            row
        })
        .collect();
    let extra = |label: &str, m: &MetricRow| {
        let mut row = vec![label.to_string()];
        row.extend(m.values().iter().map(|v| pct(*v)));
        row
    };
    if let Some(m) = &r.improvement {
        rows.push(extra("improvement", m));
    }
    if let Some(m) = &r.replacement_rate {
        rows.push(extra("replacement rate", m));
    }
    out.push_str(&table(&["arm", "Pre", "Rec", "N@3", "N@5"], &rows));
    out.push('\n');
    out.push_str(&json_block(r));
    out
}

/// Extracts the structured block of a report document.
pub fn extract_json(doc: &str) -> Option<serde_json::Value> {
    let start = doc.find("```json\n")? + "```json\n".len();
    let end = start + doc[start..].find("\n```")?;
    serde_json::from_str(&doc[start..end]).ok()
}

/// Joins section documents under one title, demoting their headings by one
/// level. The merged JSON block maps each section name to its values.
pub fn merge(title: &str, sections: &[(String, String)]) -> String {
    let mut out = format!("# {title}\n\n");
    let mut merged = serde_json::Map::new();
    for (name, doc) in sections {
        let mut in_code = false;
        for line in doc.lines() {
            if line.starts_with("```") {
                in_code = !in_code;
            }
            if !in_code && line.starts_with('#') {
                out.push('#');
            }
            out.push_str(line);
            out.push('\n');
        }
        out.push('\n');
        if let Some(v) = extract_json(doc) {
            merged.insert(name.clone(), v);
        }
    }
    out.push_str("## Combined\n\n");
    out.push_str(&json_block(&merged));
    out
}
