//! Dependency-free SVG rendering of binned recall curves.

use crate::error::{Error, Result};
use crate::eval::{BinKey, BinnedReport};

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 56.0;

/// Render a recall-vs-attribute curve. Bins with no queries are skipped.
/// Area plots use a log x axis; distance plots are linear.
pub fn render_binned_svg(binned: &BinnedReport) -> Result<String> {
    let (x_label, log_x) = match binned.key {
        BinKey::DistanceFromNadirKm => ("distance from nadir (km)", false),
        BinKey::AreaSqkm => ("area (sq. km)", true),
    };
    let points: Vec<(f64, f64)> = binned
        .bins
        .iter()
        .filter_map(|b| b.recall_at_1_pct.map(|r| ((b.lo + b.hi) / 2.0, r)))
        .collect();
    if points.is_empty() {
        return Err(Error::invalid("no non-empty bins to plot"));
    }
    let xmin = binned.bins.first().unwrap().lo.max(if log_x { 1e-9 } else { f64::MIN });
    let xmax = binned.bins.last().unwrap().hi;
    let tx = |x: f64| -> f64 {
        let t = if log_x {
            (x.max(1e-9) / xmin).ln() / (xmax / xmin).ln()
        } else {
            (x - xmin) / (xmax - xmin)
        };
        MARGIN_L + t.clamp(0.0, 1.0) * (W - MARGIN_L - MARGIN_R)
    };
    let ty = |r: f64| -> f64 { H - MARGIN_B - (r / 100.0).clamp(0.0, 1.0) * (H - MARGIN_T - MARGIN_B) };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        W, H, W, H
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{} — Recall@1 vs {}</text>\n",
        W / 2.0,
        xml_escape(&binned.set_name),
        x_label
    ));

    // axes
    svg.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n",
        l = MARGIN_L,
        r = W - MARGIN_R,
        t = MARGIN_T,
        b = H - MARGIN_B
    ));
    for yt in [0.0, 25.0, 50.0, 75.0, 100.0] {
        let y = ty(yt);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ddd\"/>\n",
            MARGIN_L,
            y,
            W - MARGIN_R,
            y
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            MARGIN_L - 6.0,
            y + 4.0,
            yt
        ));
    }
    for b in &binned.bins {
        let x = tx(b.lo);
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
            x,
            H - MARGIN_B + 16.0,
            format_tick(b.lo)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        (MARGIN_L + W - MARGIN_R) / 2.0,
        H - 12.0,
        x_label
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">Recall@1 (%)</text>\n",
        (MARGIN_T + H - MARGIN_B) / 2.0,
        (MARGIN_T + H - MARGIN_B) / 2.0
    ));

    // polyline + markers
    let path: Vec<String> = points
        .iter()
        .map(|(x, r)| format!("{:.1},{:.1}", tx(*x), ty(*r)))
        .collect();
    svg.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{}\"/>\n",
        path.join(" ")
    ));
    for (x, r) in &points {
        svg.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3.5\" fill=\"#1f77b4\"/>\n",
            tx(*x),
            ty(*r)
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn format_tick(v: f64) -> String {
    if v >= 1000.0 {
        format!("{}k", (v / 1000.0).round() as i64)
    } else {
        format!("{}", v.round() as i64)
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
