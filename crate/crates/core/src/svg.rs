//! Self-contained SVG box plots and heatmaps.

use std::fmt::Write;

use crate::report::{format_fixed, CellStatus, ExperimentPool, HeatmapMatrix, Metric};

const FONT: &str = "font-family=\"Helvetica, Arial, sans-serif\"";

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Round to 0.01 px so output does not depend on float noise.
fn px(v: f64) -> String {
    format_fixed(v, 2)
}

/// Axis range padded by 5 % (or ±0.5 around a constant).
fn value_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

/// One panel per metric, one box per experiment with Tukey whiskers and outliers.
pub fn boxplots(pools: &[ExperimentPool]) -> String {
    let (panel_w, panel_h, margin) = (360.0, 260.0, 50.0);
    let width = panel_w * 2.0 + margin;
    let height = panel_h * 2.0 + margin;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" {FONT} font-size=\"11\">",
        px(width),
        px(height),
        px(width),
        px(height)
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    for (k, metric) in Metric::ALL.iter().enumerate() {
        let ox = margin / 2.0 + (k % 2) as f64 * panel_w;
        let oy = margin / 2.0 + (k / 2) as f64 * panel_h;
        let (plot_x, plot_y) = (ox + 45.0, oy + 25.0);
        let (plot_w, plot_h) = (panel_w - 60.0, panel_h - 60.0);
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" font-weight=\"bold\">{}</text>",
            px(plot_x + plot_w / 2.0),
            px(oy + 15.0),
            escape(metric.label())
        );
        let boxes: Vec<_> = pools
            .iter()
            .filter_map(|p| p.metrics.get(metric).map(|d| (p.experiment_id, d)))
            .collect();
        let (lo, hi) = value_range(boxes.iter().flat_map(|(_, d)| [d.min, d.max]));
        let y = |v: f64| plot_y + plot_h - (v - lo) / (hi - lo) * plot_h;
        let _ = writeln!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>",
            px(plot_x),
            px(plot_y),
            px(plot_w),
            px(plot_h)
        );
        for t in 0..=4 {
            let v = lo + (hi - lo) * f64::from(t) / 4.0;
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" fill=\"#444\">{}</text>",
                px(plot_x - 4.0),
                px(y(v) + 4.0),
                format_fixed(v, metric.decimals())
            );
        }
        if boxes.is_empty() {
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#888\">no data</text>",
                px(plot_x + plot_w / 2.0),
                px(plot_y + plot_h / 2.0)
            );
            continue;
        }
        let slot = plot_w / boxes.len() as f64;
        for (i, (exp, d)) in boxes.iter().enumerate() {
            let cx = plot_x + slot * (i as f64 + 0.5);
            let half = slot * 0.3;
            let _ = writeln!(
                s,
                "<line x1=\"{c}\" y1=\"{}\" x2=\"{c}\" y2=\"{}\" stroke=\"#333\"/>",
                px(y(d.whisker_low)),
                px(y(d.q1)),
                c = px(cx)
            );
            let _ = writeln!(
                s,
                "<line x1=\"{c}\" y1=\"{}\" x2=\"{c}\" y2=\"{}\" stroke=\"#333\"/>",
                px(y(d.q3)),
                px(y(d.whisker_high)),
                c = px(cx)
            );
            for w in [d.whisker_low, d.whisker_high] {
                let _ = writeln!(
                    s,
                    "<line x1=\"{}\" y1=\"{yy}\" x2=\"{}\" y2=\"{yy}\" stroke=\"#333\"/>",
                    px(cx - half / 2.0),
                    px(cx + half / 2.0),
                    yy = px(y(w))
                );
            }
            let _ = writeln!(
                s,
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#9ecae1\" stroke=\"#333\"/>",
                px(cx - half),
                px(y(d.q3)),
                px(half * 2.0),
                px((y(d.q1) - y(d.q3)).max(0.5))
            );
            let _ = writeln!(
                s,
                "<line x1=\"{}\" y1=\"{m}\" x2=\"{}\" y2=\"{m}\" stroke=\"#d62728\" stroke-width=\"2\"/>",
                px(cx - half),
                px(cx + half),
                m = px(y(d.median))
            );
            for o in &d.outliers {
                let _ = writeln!(
                    s,
                    "<circle cx=\"{}\" cy=\"{}\" r=\"2.5\" fill=\"none\" stroke=\"#333\"/>",
                    px(cx),
                    px(y(*o))
                );
            }
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{exp} (n={})</text>",
                px(cx),
                px(plot_y + plot_h + 15.0),
                d.n
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Linear blend between two colours, `t` in [0, 1].
fn blend(t: f64) -> String {
    let (a, b) = ([247.0, 251.0, 255.0], [8.0, 48.0, 107.0]);
    let c: Vec<String> = (0..3)
        .map(|i| format!("{:02x}", (a[i] + (b[i] - a[i]) * t).round() as u8))
        .collect();
    format!("#{}", c.concat())
}

/// Experiment rows × prompt columns, cells shaded by mean value.
pub fn heatmap(map: &HeatmapMatrix) -> String {
    let (cell_w, cell_h, left, top) = (90.0, 40.0, 60.0, 50.0);
    let width = left + cell_w * map.cols.len() as f64 + 20.0;
    let height = top + cell_h * map.rows.len() as f64 + 20.0;
    let (lo, hi) = value_range(map.cells.iter().flatten().filter_map(|c| c.value));
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" {FONT} font-size=\"12\">",
        px(width),
        px(height),
        px(width),
        px(height)
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\" font-weight=\"bold\">{}</text>",
        px(width / 2.0),
        escape(map.metric.label())
    );
    for (j, col) in map.cols.iter().enumerate() {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{col}</text>",
            px(left + cell_w * (j as f64 + 0.5)),
            px(top - 8.0)
        );
    }
    for (i, row) in map.rows.iter().enumerate() {
        let y0 = top + cell_h * i as f64;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{row}</text>",
            px(left - 8.0),
            px(y0 + cell_h / 2.0 + 4.0)
        );
        for (j, cell) in map.cells[i].iter().enumerate() {
            let x0 = left + cell_w * j as f64;
            let (fill, label, ink) = match (cell.status, cell.value) {
                (CellStatus::Populated, Some(v)) => {
                    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
                    let ink = if t > 0.55 { "white" } else { "black" };
                    (blend(t), format_fixed(v, map.metric.decimals()), ink)
                }
                (CellStatus::NotInMatrix, _) => ("#eeeeee".to_string(), String::new(), "black"),
                _ => ("#ffffff".to_string(), "n/a".to_string(), "#888"),
            };
            let _ = writeln!(
                s,
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{fill}\" stroke=\"#bbb\"/>",
                px(x0),
                px(y0),
                px(cell_w),
                px(cell_h)
            );
            if !label.is_empty() {
                let _ = writeln!(
                    s,
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{ink}\">{label}</text>",
                    px(x0 + cell_w / 2.0),
                    px(y0 + cell_h / 2.0 + 4.0)
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}
