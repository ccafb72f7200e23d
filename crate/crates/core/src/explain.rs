//! Concept-contribution reports for single predictions.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::IncrementalModel;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportEntry {
    pub concept: String,
    /// Task that introduced the concept.
    pub task: usize,
    pub value: f64,
    /// Negative contribution, rendered as `NOT <concept>`.
    pub negated: bool,
    /// Global concept id (registry identity).
    #[serde(skip)]
    pub concept_id: usize,
}

impl ReportEntry {
    pub fn label(&self) -> String {
        if self.negated {
            format!("NOT {}", self.concept)
        } else {
            self.concept.clone()
        }
    }
}

/// Ranked concept contributions to one class logit for one sample.
///
/// Serializes to `{sample_id, class, entries[{concept, task, value, negated}],
/// residual, logit}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExplanationReport {
    pub sample_id: String,
    /// The explained class.
    pub class: usize,
    /// Top entries by absolute contribution, descending.
    pub entries: Vec<ReportEntry>,
    /// Summed contribution of every concept not in `entries`.
    pub residual: f64,
    pub logit: f64,
    #[serde(skip)]
    pub predicted: usize,
    #[serde(skip)]
    pub target: Option<usize>,
    #[serde(skip)]
    pub top_k: usize,
    #[serde(skip)]
    pub total_concepts: usize,
}

impl ExplanationReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(Error::json("explanation"))
    }

    /// Concepts summarized by `residual`.
    pub fn residual_count(&self) -> usize {
        self.total_concepts - self.entries.len()
    }

    pub fn is_complete(&self) -> bool {
        self.entries.len() == self.total_concepts
    }
}

/// Explains the logit of `class` for `feature`, keeping the `top_k`
/// concepts with the largest absolute contribution.
pub fn build_report(
    model: &IncrementalModel,
    sample_id: impl Into<String>,
    feature: &[f64],
    class: usize,
    top_k: usize,
    target: Option<usize>,
) -> Result<ExplanationReport> {
    let contributions = model.contributions(feature, class)?;
    let x = Matrix::from_vec(1, feature.len(), feature.to_vec())?;
    let logits = model.logits(&x)?;
    let logit = logits.get(0, model.class_row(class).expect("checked by contributions"));
    let predicted = model.predict(&x)?[0];

    let mut order: Vec<usize> = (0..contributions.len()).collect();
    // stable: equal magnitudes keep registry order
    order.sort_by(|&a, &b| contributions[b].abs().total_cmp(&contributions[a].abs()));
    let keep = top_k.min(order.len());
    let entries: Vec<ReportEntry> = order[..keep]
        .iter()
        .map(|&i| {
            let c = &model.concepts()[i];
            ReportEntry {
                concept: c.text.clone(),
                task: c.task,
                value: contributions[i],
                negated: contributions[i] < 0.0,
                concept_id: c.id,
            }
        })
        .collect();
    let residual = if keep == order.len() {
        0.0
    } else {
        logit - entries.iter().map(|e| e.value).sum::<f64>()
    };
    Ok(ExplanationReport {
        sample_id: sample_id.into(),
        class,
        entries,
        residual,
        logit,
        predicted,
        target,
        top_k,
        total_concepts: contributions.len(),
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Horizontal bar chart: positive contributions extend right of the axis,
/// negative ones left, with a final bar for the residual.
pub fn render_svg(report: &ExplanationReport) -> String {
    const ROW: f64 = 26.0;
    const LABEL_W: f64 = 320.0;
    const HALF: f64 = 220.0;
    const TOP: f64 = 40.0;

    let mut bars: Vec<(String, f64, &str)> = report
        .entries
        .iter()
        .map(|e| {
            let color = if e.negated { "#c0504d" } else { "#4f81bd" };
            (e.label(), e.value, color)
        })
        .collect();
    if report.residual_count() > 0 {
        bars.push((
            format!("{} other concepts", report.residual_count()),
            report.residual,
            "#999999",
        ));
    }
    let scale = bars
        .iter()
        .map(|b| b.1.abs())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let width = LABEL_W + 2.0 * HALF + 80.0;
    let height = TOP + ROW * bars.len() as f64 + 20.0;
    let axis = LABEL_W + HALF;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="10" y="20" font-size="14">{} class {} (logit {:.4})</text>"#,
        escape(&report.sample_id),
        report.class,
        report.logit
    );
    for (i, (label, value, color)) in bars.iter().enumerate() {
        let y = TOP + ROW * i as f64;
        let len = value.abs() / scale * HALF;
        let x = if *value >= 0.0 { axis } else { axis - len };
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LABEL_W - 8.0,
            y + 15.0,
            escape(label)
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.1}" y="{:.1}" width="{len:.1}" height="{:.1}" fill="{color}"/>"#,
            y + 4.0,
            ROW - 8.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}">{value:.4}</text>"#,
            axis + HALF + 6.0,
            y + 15.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<line x1="{axis}" y1="{:.1}" x2="{axis}" y2="{:.1}" stroke="black"/>"#,
        TOP,
        TOP + ROW * bars.len() as f64
    );
    svg.push_str("</svg>\n");
    svg
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftStatus {
    /// Present in both reports.
    Shared,
    /// Learned after the earlier report.
    New,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftRow {
    pub concept: String,
    pub task: usize,
    pub status: DriftStatus,
    pub before: Option<f64>,
    pub after: f64,
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftTable {
    pub sample_id: String,
    pub class: usize,
    pub rows: Vec<DriftRow>,
}

/// Pairs the entries of `after` with the same concepts in `before`.
///
/// `before` must be a complete report (`top_k` at least its concept count)
/// so that a missing concept unambiguously means "learned later".
pub fn concept_drift(before: &ExplanationReport, after: &ExplanationReport) -> Result<DriftTable> {
    if before.class != after.class {
        return Err(Error::Model(format!(
            "drift compares class {} with class {}",
            before.class, after.class
        )));
    }
    if !before.is_complete() {
        return Err(Error::Model(format!(
            "earlier report keeps {} of {} concepts; build it with top_k >= {}",
            before.entries.len(),
            before.total_concepts,
            before.total_concepts
        )));
    }
    let rows = after
        .entries
        .iter()
        .map(|e| {
            let prev = before
                .entries
                .iter()
                .find(|b| b.concept_id == e.concept_id)
                .map(|b| b.value);
            DriftRow {
                concept: e.concept.clone(),
                task: e.task,
                status: if prev.is_some() {
                    DriftStatus::Shared
                } else {
                    DriftStatus::New
                },
                before: prev,
                after: e.value,
                delta: prev.map(|p| e.value - p),
            }
        })
        .collect();
    Ok(DriftTable {
        sample_id: after.sample_id.clone(),
        class: after.class,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConceptEntry;

    fn model(w_l_row: Vec<f64>) -> IncrementalModel {
        let n = w_l_row.len();
        IncrementalModel::from_parts(
            Matrix::identity(n),
            Matrix::from_vec(1, n, w_l_row).unwrap(),
            (0..n)
                .map(|i| ConceptEntry {
                    id: i,
                    text: format!("c{i}"),
                    task: 0,
                })
                .collect(),
            vec![0],
            Matrix::identity(n),
        )
        .unwrap()
    }

    #[test]
    fn ranks_and_negates() {
        let m = model(vec![0.5, -2.0, 1.0]);
        let r = build_report(&m, "s", &[1.0, 1.0, 1.0], 0, 2, None).unwrap();
        assert_eq!(r.entries.len(), 2);
        assert_eq!(r.entries[0].concept, "c1");
        assert!(r.entries[0].negated);
        assert_eq!(r.entries[0].label(), "NOT c1");
        assert_eq!(r.entries[1].concept, "c2");
        assert!((r.residual - 0.5).abs() < 1e-15);
        assert!((r.logit + 0.5).abs() < 1e-15);
    }

    #[test]
    fn full_report_has_no_residual() {
        let m = model(vec![0.5, -2.0, 1.0]);
        let r = build_report(&m, "s", &[0.3, 0.1, -0.2], 0, 10, None).unwrap();
        assert_eq!(r.residual, 0.0);
        assert!(r.is_complete());
    }

    #[test]
    fn zero_row_explains_nothing() {
        let m = model(vec![0.0, 0.0]);
        let r = build_report(&m, "s", &[1.0, 2.0], 0, 1, None).unwrap();
        assert!(r.entries.iter().all(|e| e.value == 0.0 && !e.negated));
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn json_keys_are_fixed() {
        let m = model(vec![1.0, -1.0]);
        let r = build_report(&m, "s7", &[1.0, 0.5], 0, 1, Some(0)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["class", "entries", "logit", "residual", "sample_id"]);
        let mut ekeys: Vec<_> = v["entries"][0].as_object().unwrap().keys().cloned().collect();
        ekeys.sort();
        assert_eq!(ekeys, ["concept", "negated", "task", "value"]);
    }

    #[test]
    fn svg_mentions_not_and_residual() {
        let m = model(vec![1.0, -3.0, 0.1]);
        let r = build_report(&m, "s<1>", &[1.0, 1.0, 1.0], 0, 2, None).unwrap();
        let svg = render_svg(&r);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("NOT c1"));
        assert!(svg.contains("1 other concepts"));
        assert!(svg.contains("s&lt;1&gt;"));
    }

    #[test]
    fn drift_of_identical_reports_is_zero() {
        let m = model(vec![1.0, -3.0, 0.1]);
        let r = build_report(&m, "s", &[1.0, 1.0, 1.0], 0, 3, None).unwrap();
        let d = concept_drift(&r, &r).unwrap();
        assert!(d.rows.iter().all(|row| row.delta == Some(0.0)));
        let partial = build_report(&m, "s", &[1.0, 1.0, 1.0], 0, 1, None).unwrap();
        assert!(concept_drift(&partial, &r).is_err());
    }
}
