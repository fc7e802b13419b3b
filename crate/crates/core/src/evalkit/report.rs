use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Metrics of one model on one domain's test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    pub domain_id: u32,
    pub recall: f64,
    pub ap: f64,
    pub map: f64,
    pub top1: f64,
    pub evaluated_queries: usize,
    pub skipped_queries: usize,
}

/// Evaluation after one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    /// Zero-based stage index.
    pub stage: usize,
    /// Domains trained at this stage (several in joint mode).
    pub trained_domains: Vec<u32>,
    pub per_domain: Vec<DomainMetrics>,
}

impl StageMetrics {
    pub fn domain(&self, id: u32) -> Option<&DomainMetrics> {
        self.per_domain.iter().find(|m| m.domain_id == id)
    }

    /// Arithmetic mean of each metric over the evaluated domains.
    pub fn average(&self) -> [f64; 4] {
        mean_metrics(self.per_domain.iter())
    }

    /// Mean over the listed domains only.
    pub fn average_over(&self, ids: &[u32]) -> [f64; 4] {
        mean_metrics(self.per_domain.iter().filter(|m| ids.contains(&m.domain_id)))
    }
}

fn mean_metrics<'a>(it: impl Iterator<Item = &'a DomainMetrics>) -> [f64; 4] {
    let mut acc = [0.0; 4];
    let mut n = 0usize;
    for m in it {
        for (a, v) in acc.iter_mut().zip([m.recall, m.ap, m.map, m.top1]) {
            *a += v;
        }
        n += 1;
    }
    if n > 0 {
        acc.iter_mut().for_each(|a| *a /= n as f64);
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub stages: Vec<StageMetrics>,
}

impl MetricsReport {
    pub fn last(&self) -> Option<&StageMetrics> {
        self.stages.last()
    }

    /// Domains trained before the final stage, in training order.
    pub fn old_domains(&self) -> Vec<u32> {
        let n = self.stages.len();
        self.stages.iter().take(n.saturating_sub(1)).flat_map(|s| s.trained_domains.iter().copied()).collect()
    }
}

/// A labeled history, e.g. one training mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeHistory {
    pub label: String,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgettingReport {
    pub table: String,
    /// `(file stem, svg document)`; empty when no history has two stages.
    pub plots: Vec<(String, String)>,
}

fn pct(v: f64) -> String {
    format!("{:6.2}", 100.0 * v)
}

/// Structured-text table: one row per stage, column groups per domain with
/// detection recall/AP and re-ID mAP/top-1, then the average.
pub fn render_table(history: &ModeHistory) -> String {
    let mut domains: Vec<u32> = Vec::new();
    for s in &history.report.stages {
        for m in &s.per_domain {
            if !domains.contains(&m.domain_id) {
                domains.push(m.domain_id);
            }
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "mode: {}", history.label);
    let mut head = format!("{:<14}", "stage");
    let mut sub = format!("{:<14}", "");
    for d in &domains {
        let _ = write!(head, "| {:<30}", format!("domain {d}"));
        let _ = write!(sub, "| {:>6} {:>6} {:>6} {:>6}  ", "Recall", "AP", "mAP", "Top-1");
    }
    let _ = write!(head, "| {:<30}", "Average");
    let _ = write!(sub, "| {:>6} {:>6} {:>6} {:>6}  ", "Recall", "AP", "mAP", "Top-1");
    let _ = writeln!(out, "{}", head.trim_end());
    let _ = writeln!(out, "{}", sub.trim_end());
    for s in &history.report.stages {
        let trained: Vec<String> = s.trained_domains.iter().map(u32::to_string).collect();
        let mut row = format!("{:<14}", format!("{} [{}]", s.stage + 1, trained.join(",")));
        for d in &domains {
            match s.domain(*d) {
                Some(m) => {
                    let _ = write!(row, "| {} {} {} {}  ", pct(m.recall), pct(m.ap), pct(m.map), pct(m.top1));
                }
                None => {
                    let _ = write!(row, "| {:>6} {:>6} {:>6} {:>6}  ", "-", "-", "-", "-");
                }
            }
        }
        let a = s.average();
        let _ = write!(row, "| {} {} {} {}", pct(a[0]), pct(a[1]), pct(a[2]), pct(a[3]));
        let _ = writeln!(out, "{}", row.trim_end());
    }
    out
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Line plot of one metric against training stage: one color per
/// evaluated domain, one dash style per history.
pub fn render_plot_svg(histories: &[ModeHistory], metric: &str, pick: fn(&DomainMetrics) -> f64) -> String {
    let (w, h) = (480.0, 320.0);
    let (left, right, top, bottom) = (50.0, 130.0, 30.0, 40.0);
    let stages = histories.iter().map(|m| m.report.stages.len()).max().unwrap_or(1).max(2);
    let x_of = |s: usize| left + (w - left - right) * s as f64 / (stages - 1) as f64;
    let y_of = |v: f64| top + (h - top - bottom) * (1.0 - v.clamp(0.0, 1.0));
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{metric} vs training stage</text>"#, w / 2.0);
    for t in 0..=5 {
        let v = t as f64 / 5.0;
        let y = y_of(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{:.0}</text>"##,
            w - right,
            left - 5.0,
            y + 4.0,
            v * 100.0
        );
    }
    for s in 0..stages {
        let x = x_of(s);
        let _ = writeln!(svg, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, h - bottom + 16.0, s + 1);
    }
    let _ = writeln!(
        svg,
        r##"<line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#000"/>"##,
        h - bottom,
        w - right,
        h - bottom
    );
    let mut domains: Vec<u32> = Vec::new();
    for hist in histories {
        for s in &hist.report.stages {
            for m in &s.per_domain {
                if !domains.contains(&m.domain_id) {
                    domains.push(m.domain_id);
                }
            }
        }
    }
    let mut legend_y = top;
    for (hi, hist) in histories.iter().enumerate() {
        let dash = if hi == 0 { "" } else { r#" stroke-dasharray="6,4""# };
        for (di, d) in domains.iter().enumerate() {
            let pts: Vec<String> = hist
                .report
                .stages
                .iter()
                .filter_map(|s| s.domain(*d).map(|m| format!("{:.1},{:.1}", x_of(s.stage), y_of(pick(m)))))
                .collect();
            if pts.is_empty() {
                continue;
            }
            let color = COLORS[di % COLORS.len()];
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
                pts.join(" ")
            );
            let lx = w - right + 10.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{lx}" y1="{legend_y}" x2="{}" y2="{legend_y}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{} d{d}</text>"#,
                lx + 20.0,
                lx + 24.0,
                legend_y + 4.0,
                hist.label
            );
            legend_y += 14.0;
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Tables for every history plus AP and mAP trajectory plots when at
/// least one history spans two or more stages.
pub fn forgetting_report(histories: &[ModeHistory]) -> ForgettingReport {
    let table = histories.iter().map(render_table).collect::<Vec<_>>().join("\n");
    let plots = if histories.iter().any(|h| h.report.stages.len() >= 2) {
        vec![
            ("detection_ap".to_string(), render_plot_svg(histories, "Detection AP", |m| m.ap)),
            ("reid_map".to_string(), render_plot_svg(histories, "Re-ID mAP", |m| m.map)),
        ]
    } else {
        Vec::new()
    };
    ForgettingReport { table, plots }
}
