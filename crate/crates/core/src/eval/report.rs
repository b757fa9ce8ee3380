use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::MetricsReport;

/// One line of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub policy: String,
    pub model: String,
    pub metrics: MetricsReport,
}

const HEADER: [&str; 8] = ["Policy", "Model", "Accuracy(%)", "Precision", "F1-Score", "Recall", "Reward", "TTR"];

fn cells(row: &ReportRow) -> [String; 8] {
    let m = &row.metrics;
    let opt = |v: Option<f64>, digits: usize| v.map_or("-".to_string(), |v| format!("{v:.digits$}"));
    [
        row.policy.clone(),
        row.model.clone(),
        format!("{:.2}", 100.0 * m.accuracy),
        format!("{:.4}", m.precision),
        format!("{:.4}", m.f1),
        format!("{:.4}", m.recall),
        opt(m.normalized_reward, 2),
        opt(m.mean_ttr, 4),
    ]
}

/// Aligned plain-text table: text columns left-aligned, numbers right-aligned.
pub fn render_table(rows: &[ReportRow]) -> String {
    let body: Vec<[String; 8]> = rows.iter().map(cells).collect();
    let mut widths = HEADER.map(str::len);
    for r in &body {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cols: &[String]| {
        let mut s = String::new();
        for (i, c) in cols.iter().enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            if i < 2 {
                let _ = write!(s, "{c:<w$}", w = widths[i]);
            } else {
                let _ = write!(s, "{c:>w$}", w = widths[i]);
            }
        }
        s.trim_end().to_string()
    };
    let mut out = String::new();
    out.push_str(&line(&HEADER.map(String::from)));
    out.push('\n');
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for r in &body {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

/// Bar charts of accuracy, normalized reward and TTR, one bar per row.
pub fn render_svg(rows: &[ReportRow]) -> String {
    const PANEL_W: f64 = 260.0;
    const PANEL_H: f64 = 200.0;
    const MARGIN: f64 = 40.0;
    let panels: [(&str, Box<dyn Fn(&MetricsReport) -> Option<f64>>, f64); 3] = [
        ("Accuracy (%)", Box::new(|m| Some(100.0 * m.accuracy)), 100.0),
        ("Normalized reward", Box::new(|m| m.normalized_reward), 120.0),
        ("TTR", Box::new(|m| m.mean_ttr), 1.0),
    ];
    let width = MARGIN + panels.len() as f64 * (PANEL_W + MARGIN);
    let height = PANEL_H + 3.0 * MARGIN + 14.0 * rows.len() as f64;
    let palette = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1", "#9c755f"];
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let bar_w = if rows.is_empty() { 0.0 } else { PANEL_W / rows.len() as f64 * 0.8 };
    for (pi, (title, value, top)) in panels.iter().enumerate() {
        let x0 = MARGIN + pi as f64 * (PANEL_W + MARGIN);
        let base = MARGIN + PANEL_H;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{title}</text>"#, x0 + PANEL_W / 2.0, MARGIN - 10.0);
        let _ = writeln!(s, r#"<line x1="{x0:.1}" y1="{base:.1}" x2="{:.1}" y2="{base:.1}" stroke="black"/>"#, x0 + PANEL_W);
        for (ri, row) in rows.iter().enumerate() {
            let Some(v) = value(&row.metrics) else { continue };
            let h = (v.clamp(0.0, *top) / top) * PANEL_H;
            let x = x0 + ri as f64 * PANEL_W / rows.len() as f64 + 0.1 * PANEL_W / rows.len() as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="{bar_w:.1}" height="{h:.1}" fill="{}"/>"#,
                base - h,
                palette[ri % palette.len()]
            );
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#, x + bar_w / 2.0, base - h - 3.0);
        }
    }
    for (ri, row) in rows.iter().enumerate() {
        let y = MARGIN + PANEL_H + 30.0 + 14.0 * ri as f64;
        let _ = writeln!(s, r#"<rect x="{MARGIN:.1}" y="{:.1}" width="10" height="10" fill="{}"/>"#, y - 9.0, palette[ri % palette.len()]);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}">{} / {}</text>"#, MARGIN + 16.0, row.policy, row.model);
    }
    s.push_str("</svg>\n");
    s
}
