//! CSV tables and SVG line plots.

use std::fmt::Write as _;

use psno_core::evaluation::{SuperResRow, SweepReport};
use psno_core::training::TrainReport;

use crate::io::LOSS_NAME;

fn csv_string(rows: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    rows(&mut w).expect("in-memory CSV");
    String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("UTF-8")
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// `epoch,train_loss,val_loss`, preceded by a `#` line naming the loss.
pub fn train_csv(r: &TrainReport) -> String {
    let body = csv_string(|w| {
        w.write_record(["epoch", "train_loss", "val_loss"])?;
        w.write_record(["0".into(), num(r.initial_train_loss), num(r.initial_val_loss)])?;
        for (i, (t, v)) in r.train_loss.iter().zip(&r.val_loss).enumerate() {
            w.write_record([(i + 1).to_string(), num(*t), num(*v)])?;
        }
        Ok(())
    });
    format!("# loss: {LOSS_NAME}; model: {}; best_epoch: {}\n{body}", r.kind, r.best_epoch)
}

pub fn superres_csv(rows: &[SuperResRow]) -> String {
    csv_string(|w| {
        w.write_record([
            "model",
            "coarse_rmse_mean",
            "coarse_rmse_se",
            "fine_rmse_mean",
            "fine_rmse_se",
            "pct_diff",
            "ci_low",
            "ci_high",
        ])?;
        for r in rows {
            let pd = r.pct_diff;
            w.write_record([
                r.model.name().to_string(),
                num(r.coarse_rmse_mean),
                num(r.coarse_rmse_se),
                num(r.fine_rmse_mean),
                num(r.fine_rmse_se),
                opt(pd.map(|p| p.point)),
                opt(pd.map(|p| p.ci_low)),
                opt(pd.map(|p| p.ci_high)),
            ])?;
        }
        Ok(())
    })
}

/// Grid rows plus the two marker rows, sorted by `pm1`. Missing MASE cells
/// are degenerate points or markers.
pub fn sweep_csv(r: &SweepReport) -> String {
    let mut rows: Vec<(f64, Option<f64>, Option<f64>, String)> = r
        .pm1
        .iter()
        .zip(r.mase_mix0.iter().zip(&r.mase_mix20))
        .map(|(p, (a, b))| {
            let flag = if a.is_none() || b.is_none() { "degenerate" } else { "" };
            (*p, *a, *b, flag.to_string())
        })
        .collect();
    rows.push((r.pm, None, None, "pm_marker".into()));
    rows.push((r.threshold, None, None, "threshold_marker".into()));
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    csv_string(|w| {
        w.write_record(["pm1", "mase_mix0", "mase_mix20", "flags"])?;
        for (p, a, b, f) in rows {
            w.write_record([num(p), opt(a), opt(b), f])?;
        }
        Ok(())
    })
}

/// Markdown table with the super-resolution columns.
pub fn summary_markdown(rows: &[SuperResRow]) -> String {
    let mut s = String::from("| Model | Coarse RMSE | Fine RMSE | Percent Difference (95% CI) |\n|---|---|---|---|\n");
    for r in rows {
        let pd = match r.pct_diff {
            Some(p) => format!("{:.1} ({:.1}, {:.1})", p.point, p.ci_low, p.ci_high),
            None => "n/a".into(),
        };
        let _ = writeln!(
            s,
            "| {} | {:.4} ± {:.4} | {:.4} ± {:.4} | {pd} |",
            r.model, r.coarse_rmse_mean, r.coarse_rmse_se, r.fine_rmse_mean, r.fine_rmse_se
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
    pub dotted: bool,
}

#[derive(Debug, Clone)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Vertical reference lines `(x, label)`.
    pub markers: Vec<(f64, String)>,
}

pub const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

impl Plot {
    pub fn render(&self) -> String {
        let (x0, x1) = range(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).chain(self.markers.iter().map(|m| m.0)));
        let (y0, y1) = range(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
        let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(&self.title));
        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for t in ticks(x0, x1) {
            let x = sx(t);
            let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0);
            let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, trim(t));
        }
        for t in ticks(y0, y1) {
            let y = sy(t);
            let _ = writeln!(s, r#"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0);
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, y + 4.0, trim(t));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 12.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for (x, label) in &self.markers {
            let px = sx(*x);
            let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{TOP}" x2="{px:.2}" y2="{}" stroke="gray" stroke-dasharray="6 4"/>"#, TOP + ph);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{}" fill="gray">{}</text>"#, px + 3.0, TOP + 14.0, escape(label));
        }
        for (i, ser) in self.series.iter().enumerate() {
            // Gaps (non-finite values) split a series into separate polylines.
            for run in ser.points.split(|p| !p.1.is_finite()) {
                if run.is_empty() {
                    continue;
                }
                let pts: Vec<String> = run.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
                let dash = if ser.dotted { r#" stroke-dasharray="2 3""# } else { "" };
                let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#, pts.join(" "), ser.color);
            }
            let ly = TOP + 10.0 + 18.0 * i as f64;
            let lx = W - RIGHT + 12.0;
            let dash = if ser.dotted { r#" stroke-dasharray="2 3""# } else { "" };
            let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="1.5"{dash}/>"#, lx + 24.0, ser.color);
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, ly + 4.0, escape(&ser.label));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn trim(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

/// MASE of both training mixes along Pm1 with the two vertical markers.
pub fn sweep_plot(r: &SweepReport) -> Plot {
    let curve = |v: &[Option<f64>]| r.pm1.iter().zip(v).map(|(p, m)| (*p, m.unwrap_or(f64::NAN))).collect();
    Plot {
        title: format!("{}: MASE over Pm1 (Pm = {}, D = {})", r.model, r.pm, r.d),
        x_label: "Pm1 (p.u.)".into(),
        y_label: "MASE".into(),
        series: vec![
            Series { label: "0% unstable".into(), points: curve(&r.mase_mix0), color: PALETTE[0], dotted: false },
            Series { label: "20% unstable".into(), points: curve(&r.mase_mix20), color: PALETTE[1], dotted: false },
        ],
        markers: vec![(r.pm, "Pm1 = Pm".into()), (r.threshold, "threshold".into())],
    }
}
