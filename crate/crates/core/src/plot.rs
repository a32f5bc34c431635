//! Minimal SVG line charts for ROC curves and training histories.

use std::fmt::Write as _;

use crate::metrics::RocCurve;
use crate::trainer::EpochRecord;

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// One named polyline in data coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Line chart over `x_range` × `y_range` with axis labels and a legend.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    x_range: (f64, f64),
    y_range: (f64, f64),
    series: &[Series],
) -> String {
    let span = |r: (f64, f64)| if r.1 > r.0 { r.1 - r.0 } else { 1.0 };
    let px = |x: f64| MARGIN + (x - x_range.0) / span(x_range) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y_range.0) / span(y_range) * (H - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (px(x_range.0), px(x_range.1), py(y_range.0), py(y_range.1));
    let _ = writeln!(
        s,
        r#"<path d="M{x0:.1},{y1:.1} L{x0:.1},{y0:.1} L{x1:.1},{y0:.1}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x_range.0 + f * span(x_range);
        let yv = y_range.0 + f * span(y_range);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(xv),
            y0 + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            py(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .enumerate()
            .map(|(j, &(x, y))| format!("{}{:.2},{:.2}", if j == 0 { 'M' } else { 'L' }, px(x), py(y)))
            .collect();
        if !path.is_empty() {
            let _ = writeln!(
                s,
                r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                path.join(" ")
            );
        }
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            x1 - 120.0,
            x1 - 100.0,
            x1 - 95.0,
            ly + 4.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn roc_svg(curves: &[(String, &RocCurve)]) -> String {
    let mut series: Vec<Series> = curves
        .iter()
        .map(|(name, c)| Series {
            name: format!("{name} (AUC {:.3})", c.auc),
            points: c.points.iter().map(|p| (p.fpr, p.tpr)).collect(),
        })
        .collect();
    series.push(Series {
        name: "chance".into(),
        points: vec![(0.0, 0.0), (1.0, 1.0)],
    });
    line_chart(
        "ROC",
        "false positive rate",
        "true positive rate",
        (0.0, 1.0),
        (0.0, 1.0),
        &series,
    )
}

pub fn roc_csv(curve: &RocCurve) -> String {
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in &curve.points {
        let _ = writeln!(s, "{},{},{}", p.threshold, p.fpr, p.tpr);
    }
    s
}

/// Training and validation accuracy per epoch, one pair of lines per run.
pub fn accuracy_svg(runs: &[(String, &[EpochRecord])]) -> String {
    let epochs = runs.iter().map(|(_, h)| h.len()).max().unwrap_or(1).max(1);
    let mut series = Vec::new();
    for (name, h) in runs {
        series.push(Series {
            name: format!("{name} train"),
            points: h.iter().map(|r| (r.epoch as f64, r.train_acc)).collect(),
        });
        let val: Vec<(f64, f64)> = h
            .iter()
            .filter_map(|r| r.val_acc.map(|v| (r.epoch as f64, v)))
            .collect();
        if !val.is_empty() {
            series.push(Series {
                name: format!("{name} val"),
                points: val,
            });
        }
    }
    line_chart(
        "Accuracy",
        "epoch",
        "accuracy",
        (1.0, epochs as f64),
        (0.0, 1.0),
        &series,
    )
}
