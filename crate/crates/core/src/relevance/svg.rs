use std::fmt::Write;

use super::RelevanceReport;

const BAR_H: f64 = 22.0;
const GAP: f64 = 6.0;
const LABEL_W: f64 = 70.0;
const PLOT_W: f64 = 360.0;
const PANEL_W: f64 = LABEL_W + PLOT_W + 70.0;
const TITLE_H: f64 = 30.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Self-contained SVG: one horizontal bar panel per class, bars scaled to
/// the largest share in that panel.
pub fn render_svg(report: &RelevanceReport) -> String {
    let rows = report.classes.iter().map(|c| c.features.len()).max().unwrap_or(0) as f64;
    let panel_h = TITLE_H + rows * (BAR_H + GAP) + GAP;
    let width = PANEL_W * report.classes.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{panel_h}" viewBox="0 0 {width} {panel_h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, class) in report.classes.iter().enumerate() {
        let x0 = k as f64 * PANEL_W;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" font-size="14" font-weight="bold">{} (n = {})</text>"#,
            x0 + 10.0,
            escape(class.class.as_str()),
            class.samples
        );
        let max = class.features.iter().map(|f| f.percent).fold(0.0, f64::max).max(1e-12);
        for (r, share) in class.features.iter().enumerate() {
            let y = TITLE_H + r as f64 * (BAR_H + GAP);
            let w = PLOT_W * share.percent / max;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                x0 + LABEL_W - 6.0,
                y + BAR_H * 0.7,
                share.feature.as_str()
            );
            let _ = writeln!(
                s,
                r##"<rect x="{}" y="{y}" width="{w:.2}" height="{BAR_H}" fill="#4a7ab5"/>"##,
                x0 + LABEL_W
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{}">{:.1}%</text>"#,
                x0 + LABEL_W + w + 4.0,
                y + BAR_H * 0.7,
                share.percent
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
