//! Minimal SVG renderings of the evaluation report.

use std::fmt::Write;

use ews_core::alarm::EventPrReport;
use ews_core::{Seconds, HOUR};

const W: f64 = 640.0;
const H: f64 = 440.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 4] = ["#d62728", "#1f77b4", "#2ca02c", "#7f7f7f"];

fn px(x: f64) -> f64 {
    LEFT + x * (W - LEFT - RIGHT)
}

fn py(y: f64) -> f64 {
    H - BOTTOM - y * (H - TOP - BOTTOM)
}

fn frame(out: &mut String, title: &str, xlabel: &str, ylabel: &str, xticks: &[(f64, String)], yticks: &[(f64, String)]) {
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{title}</text>"#, px(0.5));
    let _ = writeln!(out, r#"<path d="M{} {} H{} M{} {} V{}" stroke="black" fill="none"/>"#, px(0.0), py(0.0), px(1.0), px(0.0), py(0.0), py(1.0));
    for (v, label) in xticks {
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#, px(*v), py(0.0) + 16.0);
    }
    for (v, label) in yticks {
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#, px(0.0) - 6.0, py(*v) + 4.0);
        let _ = writeln!(out, r##"<path d="M{:.1} {:.1} H{:.1}" stroke="#dddddd"/>"##, px(0.0), py(*v), px(1.0));
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xlabel}</text>"#, px(0.5), H - 12.0);
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{ylabel}</text>"#,
        py(0.5),
        py(0.5)
    );
}

fn unit_ticks() -> Vec<(f64, String)> {
    (0..=5).map(|k| (k as f64 / 5.0, format!("{:.1}", k as f64 / 5.0))).collect()
}

/// Mean interpolated precision against event recall, one line per model.
pub fn pr_curves_svg(reports: &[&EventPrReport]) -> String {
    let mut out = String::new();
    frame(&mut out, "Event-based precision / recall", "event recall", "alarm precision", &unit_ticks(), &unit_ticks());
    for (k, r) in reports.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for (x, y) in r.recall_levels.iter().zip(&r.precision_mean) {
            match y {
                Some(y) => {
                    let _ = write!(d, "{}{:.1} {:.1} ", if pen_down { "L" } else { "M" }, px(*x), py(*y));
                    pen_down = true;
                }
                None => pen_down = false,
            }
        }
        if !d.is_empty() {
            let _ = writeln!(out, r#"<path d="{}" stroke="{color}" stroke-width="2" fill="none"/>"#, d.trim_end());
        }
        let ly = TOP + 20.0 + 20.0 * k as f64;
        let _ = writeln!(out, r#"<path d="M{:.1} {ly:.1} h20" stroke="{color}" stroke-width="2"/>"#, W - RIGHT + 12.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{} ({:.3})</text>"#, W - RIGHT + 38.0, ly + 4.0, r.model, r.auprc_mean);
    }
    out.push_str("</svg>\n");
    out
}

/// Histogram of alarm lead times in whole hours before event onset.
pub fn lead_histogram_svg(leads_s: &[Seconds], horizon_s: Seconds) -> String {
    let n_bins = (horizon_s / HOUR).max(1) as usize;
    let mut counts = vec![0usize; n_bins];
    for &l in leads_s {
        let b = ((l.max(1) - 1) / HOUR) as usize;
        counts[b.min(n_bins - 1)] += 1;
    }
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let xticks: Vec<(f64, String)> = (0..=n_bins).map(|h| (h as f64 / n_bins as f64, h.to_string())).collect();
    let yticks: Vec<(f64, String)> = (0..=4).map(|k| (k as f64 / 4.0, format!("{:.0}", max * k as f64 / 4.0))).collect();
    let mut out = String::new();
    frame(&mut out, &format!("Lead time of first alarm ({} caught events)", leads_s.len()), "hours before onset", "events", &xticks, &yticks);
    let bw = (px(1.0) - px(0.0)) / n_bins as f64;
    for (b, &c) in counts.iter().enumerate() {
        let h = py(0.0) - py(c as f64 / max);
        let _ = writeln!(
            out,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="#1f77b4" stroke="white"/>"##,
            px(0.0) + b as f64 * bw,
            py(0.0) - h,
            bw
        );
    }
    out.push_str("</svg>\n");
    out
}
