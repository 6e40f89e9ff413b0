//! Minimal bar charts of Monte Carlo bias and coverage as standalone SVG.

use std::fmt::Write as _;

use super::MetricsTable;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#7f7f7f"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chart {
    Bias,
    Coverage,
}

/// Grouped bars: one group per coefficient, one bar per estimator. Coverage
/// charts draw a reference line at 0.95.
pub fn render(table: &MetricsTable, chart: Chart) -> String {
    let mut estimators: Vec<_> = table.rows.iter().map(|r| r.estimator).collect();
    estimators.dedup();
    let coefs = table.rows.iter().map(|r| r.coefficient).max().map_or(0, |m| m + 1);
    let value = |r: &super::MetricsRow| match chart {
        Chart::Bias => Some(r.bias),
        Chart::Coverage => r.coverage,
    };
    let values: Vec<f64> = table.rows.iter().filter_map(value).filter(|v| v.is_finite()).collect();
    let (lo, hi) = match chart {
        Chart::Coverage => (0.8, 1.0),
        Chart::Bias => {
            let m = values.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-12);
            (-m * 1.1, m * 1.1)
        }
    };
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let y_of = |v: f64| MARGIN + plot_h * (hi - v.clamp(lo, hi)) / (hi - lo);
    let group_w = plot_w / coefs.max(1) as f64;
    let bar_w = group_w * 0.8 / estimators.len().max(1) as f64;
    let title = match chart {
        Chart::Bias => "Monte Carlo bias",
        Chart::Coverage => "Coverage of 95% intervals",
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle">{title}: {}</text>"#,
        WIDTH / 2.0,
        table.scenario.label()
    );
    let base = match chart {
        Chart::Bias => y_of(0.0),
        Chart::Coverage => y_of(lo),
    };
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{base:.2}" x2="{}" y2="{base:.2}" stroke="black"/>"#,
        WIDTH - MARGIN
    );
    if chart == Chart::Coverage {
        let y = y_of(0.95);
        let _ = writeln!(
            s,
            r#"<line x1="{MARGIN}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="black" stroke-dasharray="4 3"/>"#,
            WIDTH - MARGIN
        );
    }
    for r in &table.rows {
        let Some(v) = value(r).filter(|v| v.is_finite()) else {
            continue;
        };
        let k = estimators.iter().position(|e| *e == r.estimator).unwrap_or(0);
        let x = MARGIN + group_w * r.coefficient as f64 + group_w * 0.1 + bar_w * k as f64;
        let (top, bottom) = if y_of(v) < base { (y_of(v), base) } else { (base, y_of(v)) };
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{top:.2}" width="{bar_w:.2}" height="{:.2}" fill="{}"><title>{} beta{}: {v:.4}</title></rect>"#,
            (bottom - top).max(0.5),
            COLORS[k % COLORS.len()],
            r.estimator.name(),
            r.coefficient
        );
    }
    for j in 0..coefs {
        let x = MARGIN + group_w * (j as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle">beta{j}</text>"#,
            HEIGHT - MARGIN + 16.0
        );
    }
    for (k, e) in estimators.iter().enumerate() {
        let y = HEIGHT - 12.0;
        let x = MARGIN + 120.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{y}">{}</text>"#,
            y - 9.0,
            COLORS[k % COLORS.len()],
            x + 14.0,
            e.name()
        );
    }
    s.push_str("</svg>\n");
    s
}
