//! CSV tables and hand-rolled SVG charts for run and ablation reports.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use cpfreeze_core::metrics::attack_success_rate;

use crate::defense::AblationReport;
use crate::experiment::RunReport;

#[derive(Debug, Serialize)]
struct FrameRow {
    seed: u64,
    attack: &'static str,
    warp: bool,
    frame: usize,
    benign_latency_s: f64,
    attacked_latency_s: f64,
    benign_pre_nms: usize,
    attacked_pre_nms: usize,
    attacked_nms_input: usize,
    benign_post_nms: usize,
    attacked_post_nms: usize,
    benign_iou_evaluations: u64,
    attacked_iou_evaluations: u64,
    benign_ap: f64,
    attacked_ap: f64,
    delta_linf: f64,
}

/// One row per frame.
pub fn write_run_csv<W: Write>(w: W, report: &RunReport) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for f in &report.frames {
        out.serialize(FrameRow {
            seed: report.seed,
            attack: report.attack.name(),
            warp: report.warp,
            frame: f.frame,
            benign_latency_s: f.benign.latency_s,
            attacked_latency_s: f.attacked.latency_s,
            benign_pre_nms: f.benign.pre_nms,
            attacked_pre_nms: f.attacked.pre_nms,
            attacked_nms_input: f.attacked.nms_input,
            benign_post_nms: f.benign.post_nms,
            attacked_post_nms: f.attacked.post_nms,
            benign_iou_evaluations: f.benign.iou_evaluations,
            attacked_iou_evaluations: f.attacked.iou_evaluations,
            benign_ap: f.benign.ap,
            attacked_ap: f.attacked.ap,
            delta_linf: f.delta_linf,
        })?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    seed: u64,
    attack: &'static str,
    warp: bool,
    frames: usize,
    roi_latency: Option<f64>,
    roi_latency_ratio_of_means: Option<f64>,
    roi_proposals: Option<f64>,
    median_pre_nms_benign: f64,
    median_pre_nms_attacked: f64,
    asr: f64,
    rsd_benign_percent: f64,
    rsd_attacked_percent: f64,
    mean_ap_benign: f64,
    mean_ap_attacked: f64,
}

/// One row per report.
pub fn write_summary_csv<W: Write>(w: W, reports: &[RunReport]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        out.serialize(SummaryRow {
            seed: r.seed,
            attack: r.attack.name(),
            warp: r.warp,
            frames: r.frames.len(),
            roi_latency: r.roi_latency.map(|s| s.per_frame_mean),
            roi_latency_ratio_of_means: r.roi_latency.map(|s| s.ratio_of_means),
            roi_proposals: r.roi_proposals.map(|s| s.per_frame_mean),
            median_pre_nms_benign: r.median_pre_nms_benign,
            median_pre_nms_attacked: r.median_pre_nms_attacked,
            asr: r.asr,
            rsd_benign_percent: r.rsd_benign_percent,
            rsd_attacked_percent: r.rsd_attacked_percent,
            mean_ap_benign: r.mean_ap_benign,
            mean_ap_attacked: r.mean_ap_attacked,
        })?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblationRow {
    score_threshold: f64,
    iou_threshold: f64,
    max_keep: usize,
    roi_latency: Option<f64>,
    roi_proposals: Option<f64>,
    roi_iou_evaluations: Option<f64>,
    median_pre_nms_attacked: f64,
    mean_nms_input_attacked: f64,
    mean_ap_benign: f64,
    mean_ap_attacked: f64,
}

pub fn write_ablation_csv<W: Write>(w: W, report: &AblationReport) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in &report.points {
        out.serialize(AblationRow {
            score_threshold: p.post.score_threshold,
            iou_threshold: p.post.iou_threshold,
            max_keep: p.post.max_keep,
            roi_latency: p.roi_latency.map(|s| s.per_frame_mean),
            roi_proposals: p.roi_proposals.map(|s| s.per_frame_mean),
            roi_iou_evaluations: p.roi_iou_evaluations.map(|s| s.per_frame_mean),
            median_pre_nms_attacked: p.median_pre_nms_attacked,
            mean_nms_input_attacked: p.mean_nms_input_attacked,
            mean_ap_benign: p.mean_ap_benign,
            mean_ap_attacked: p.mean_ap_attacked,
        })?;
    }
    out.flush()?;
    Ok(())
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Log10 axis over positive values, padded to whole decades.
struct LogAxis {
    lo: f64,
    hi: f64,
}

impl LogAxis {
    fn new(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| *v > 0.0 && v.is_finite()) {
            lo = lo.min(v.log10());
            hi = hi.max(v.log10());
        }
        if !lo.is_finite() {
            (lo, hi) = (-3.0, 0.0);
        }
        Self { lo: lo.floor(), hi: hi.ceil().max(lo.floor() + 1.0) }
    }

    fn y(&self, v: f64) -> f64 {
        let t = (v.max(10f64.powf(self.lo)).log10() - self.lo) / (self.hi - self.lo);
        H - MARGIN - t * (H - 2.0 * MARGIN)
    }

    fn draw(&self, s: &mut String, label: &str) {
        let _ = writeln!(s, r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{}" stroke="black"/>"#, H - MARGIN);
        let mut e = self.lo;
        while e <= self.hi + 1e-9 {
            let y = self.y(10f64.powf(e));
            let _ = writeln!(s, r#"<line x1="{}" y1="{y:.1}" x2="{MARGIN}" y2="{y:.1}" stroke="black"/>"#, MARGIN - 4.0);
            let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">1e{e}</text>"#, MARGIN - 6.0, y + 4.0);
            e += 1.0;
        }
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(label)
        );
    }
}

fn quartiles(values: &[f64]) -> [f64; 5] {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let (i, f) = (pos.floor() as usize, pos.fract());
        if i + 1 < v.len() {
            v[i] * (1.0 - f) + v[i + 1] * f
        } else {
            v[i]
        }
    };
    [v[0], q(0.25), q(0.5), q(0.75), v[v.len() - 1]]
}

/// Per-frame latency distributions, benign and attacked, one pair of boxes
/// per report, on a log axis.
pub fn latency_boxplot_svg(reports: &[RunReport]) -> String {
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for r in reports {
        let tag = format!("{}{}", r.attack.name(), if r.warp { "" } else { " (no warp)" });
        groups.push((format!("benign/{tag}"), r.frames.iter().map(|f| f.benign.latency_s).collect()));
        groups.push((tag, r.frames.iter().map(|f| f.attacked.latency_s).collect()));
    }
    groups.retain(|(_, v)| !v.is_empty());
    let axis = LogAxis::new(groups.iter().flat_map(|(_, v)| v.iter().copied()));
    let mut s = svg_open("Per-frame pipeline latency");
    axis.draw(&mut s, "latency (s)");
    let slot = (W - 2.0 * MARGIN) / groups.len().max(1) as f64;
    for (i, (name, values)) in groups.iter().enumerate() {
        let [min, q1, med, q3, max] = quartiles(values);
        let cx = MARGIN + slot * (i as f64 + 0.5);
        let half = (slot * 0.3).min(30.0);
        let color = COLORS[(i / 2) % COLORS.len()];
        let fill = if i % 2 == 0 { "white" } else { color };
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="{color}"/>"#,
            axis.y(min),
            axis.y(max)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{fill}" stroke="{color}"/>"#,
            cx - half,
            axis.y(q3),
            2.0 * half,
            (axis.y(q1) - axis.y(q3)).max(1.0)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            axis.y(med),
            cx + half,
            axis.y(med)
        );
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="end" transform="rotate(-30 {cx:.1} {:.1})">{}</text>"#,
            H - MARGIN + 14.0,
            H - MARGIN + 14.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Attack success rate as the latency threshold sweeps across the observed
/// range, one curve per report.
pub fn asr_curve_svg(reports: &[RunReport]) -> String {
    let axis = LogAxis::new(reports.iter().flat_map(|r| r.frames.iter().map(|f| f.attacked.latency_s)));
    let mut s = svg_open("Attack success rate vs latency threshold");
    let x_of = |e: f64| MARGIN + (e - axis.lo) / (axis.hi - axis.lo) * (W - 2.0 * MARGIN);
    let y_of = |asr: f64| H - MARGIN - asr * (H - 2.0 * MARGIN);
    let _ = writeln!(s, r#"<line x1="{MARGIN}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - MARGIN, W - MARGIN, H - MARGIN);
    let _ = writeln!(s, r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{}" stroke="black"/>"#, H - MARGIN);
    for k in 0..=4 {
        let a = k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{a:.2}</text>"#, MARGIN - 6.0, y_of(a) + 4.0);
    }
    let mut e = axis.lo;
    while e <= axis.hi + 1e-9 {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">1e{e}</text>"#, x_of(e), H - MARGIN + 16.0);
        e += 1.0;
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">threshold (s)</text>"#, W / 2.0, H - 16.0);
    for (i, r) in reports.iter().enumerate() {
        let lat: Vec<f64> = r.frames.iter().map(|f| f.attacked.latency_s).collect();
        if lat.is_empty() {
            continue;
        }
        let color = COLORS[i % COLORS.len()];
        let steps = 100;
        let pts: Vec<String> = (0..=steps)
            .map(|k| {
                let e = axis.lo + (axis.hi - axis.lo) * k as f64 / steps as f64;
                let asr = attack_success_rate(&lat, 10f64.powf(e)).unwrap_or(0.0);
                format!("{:.1},{:.1}", x_of(e), y_of(asr))
            })
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        let label = format!("{}{}", r.attack.name(), if r.warp { "" } else { " (no warp)" });
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - MARGIN - 120.0,
            MARGIN + 16.0 * i as f64,
            escape(&label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// RoI-L over (IoU threshold, max_keep) for the first score threshold of
/// the sweep, colored on a log scale.
pub fn ablation_heatmap_svg(report: &AblationReport) -> String {
    let mut s = svg_open("RoI-L over post-processing settings");
    let Some(first) = report.points.first() else {
        s.push_str("</svg>\n");
        return s;
    };
    let score = first.post.score_threshold;
    let pts: Vec<_> = report.points.iter().filter(|p| p.post.score_threshold == score).collect();
    let mut ious: Vec<f64> = pts.iter().map(|p| p.post.iou_threshold).collect();
    ious.sort_by(f64::total_cmp);
    ious.dedup();
    let mut keeps: Vec<usize> = pts.iter().map(|p| p.post.max_keep).collect();
    keeps.sort_unstable();
    keeps.dedup();
    let values: Vec<f64> = pts.iter().filter_map(|p| p.roi_latency.map(|r| r.per_frame_mean)).collect();
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
        let l = v.max(1e-3).log10();
        (a.min(l), b.max(l))
    });
    let cw = (W - 2.0 * MARGIN) / keeps.len() as f64;
    let ch = (H - 2.0 * MARGIN) / ious.len() as f64;
    for p in &pts {
        let xi = keeps.iter().position(|&k| k == p.post.max_keep).unwrap_or(0);
        let yi = ious.iter().position(|&v| v == p.post.iou_threshold).unwrap_or(0);
        let v = p.roi_latency.map(|r| r.per_frame_mean).unwrap_or(0.0);
        let t = if hi > lo { (v.max(1e-3).log10() - lo) / (hi - lo) } else { 1.0 };
        let shade = (255.0 - 200.0 * t.clamp(0.0, 1.0)) as u8;
        let (x, y) = (MARGIN + cw * xi as f64, MARGIN + ch * yi as f64);
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{cw:.1}" height="{ch:.1}" fill="rgb(255,{shade},{shade})" stroke="white"/>"#
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.1}</text>"#, x + cw / 2.0, y + ch / 2.0 + 4.0);
    }
    for (i, k) in keeps.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{k}</text>"#, MARGIN + cw * (i as f64 + 0.5), H - MARGIN + 16.0);
    }
    for (i, v) in ious.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v}</text>"#, MARGIN - 6.0, MARGIN + ch * (i as f64 + 0.5) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">max_keep (score threshold {score})</text>"#, W / 2.0, H - 16.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">IoU threshold</text>"#,
        H / 2.0,
        H / 2.0
    );
    s.push_str("</svg>\n");
    s
}
