//! Minimal static SVG charts: statistic-versus-limit panels and bar charts.

use std::fmt::Write;

pub const STAT_COLOR: &str = "#1f4fd1";
pub const LIMIT_COLOR: &str = "#d62728";
const BAR_COLOR: &str = "#4c72b0";

const WIDTH: f64 = 960.0;
const PANEL_HEIGHT: f64 = 280.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 44.0;

/// One monitoring statistic over time with its control limit.
pub struct Panel {
    pub label: String,
    pub index: Vec<f64>,
    /// `None` marks samples without a value (lag warm-up).
    pub statistic: Vec<Option<f64>>,
    pub limit: Vec<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Round tick positions covering `[lo, hi]`.
fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|k| k as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Scale {
    lo: f64,
    hi: f64,
    log: bool,
    top: f64,
    height: f64,
}

impl Scale {
    fn y(&self, v: f64) -> f64 {
        let (v, lo, hi) = if self.log {
            (v.max(self.lo).log10(), self.lo.log10(), self.hi.log10())
        } else {
            (v, self.lo, self.hi)
        };
        self.top + self.height * (1.0 - (v - lo) / (hi - lo))
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.log10().ceil() as i32, self.hi.log10().floor() as i32);
            (a..=b).map(|e| 10f64.powi(e)).collect()
        } else {
            linear_ticks(self.lo, self.hi)
        }
    }
}

/// Picks a log axis when the statistic spans several decades above the limit.
fn y_scale(panel: &Panel, top: f64, height: f64) -> Scale {
    let values: Vec<f64> = panel
        .statistic
        .iter()
        .flatten()
        .chain(panel.limit.iter())
        .copied()
        .filter(|v| v.is_finite())
        .collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let limit_max = panel
        .limit
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let min_pos = values
        .iter()
        .copied()
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    if values.is_empty() {
        return Scale {
            lo: 0.0,
            hi: 1.0,
            log: false,
            top,
            height,
        };
    }
    if limit_max > 0.0 && max > 100.0 * limit_max && min_pos.is_finite() {
        let lo = 10f64.powf(min_pos.log10().floor());
        let hi = 10f64.powf(max.log10().ceil());
        return Scale {
            lo,
            hi,
            log: true,
            top,
            height,
        };
    }
    let lo = min.min(0.0);
    let hi = if max > lo { max * 1.05 } else { lo + 1.0 };
    Scale {
        lo,
        hi,
        log: false,
        top,
        height,
    }
}

fn polyline(out: &mut String, points: &[(f64, f64)], class: &str, color: &str, dash: bool) {
    if points.is_empty() {
        return;
    }
    let coords: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let dash = if dash { r#" stroke-dasharray="6 4""# } else { "" };
    let _ = writeln!(
        out,
        r#"<polyline class="{class}" fill="none" stroke="{color}" stroke-width="1.4"{dash} points="{}"/>"#,
        coords.join(" ")
    );
}

/// Stacked panels sharing the sample axis; the statistic is drawn in blue
/// and its limit as a dashed red line.
pub fn statistic_chart(title: &str, panels: &[Panel]) -> String {
    let height = MARGIN_TOP + panels.len() as f64 * PANEL_HEIGHT;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    for (k, panel) in panels.iter().enumerate() {
        let top = MARGIN_TOP + k as f64 * PANEL_HEIGHT + 10.0;
        let plot_h = PANEL_HEIGHT - MARGIN_BOTTOM - 10.0;
        let (x0, x1) = match (panel.index.first(), panel.index.last()) {
            (Some(&a), Some(&b)) if b > a => (a, b),
            (Some(&a), _) => (a, a + 1.0),
            _ => (0.0, 1.0),
        };
        let x = |v: f64| MARGIN_LEFT + plot_w * (v - x0) / (x1 - x0);
        let scale = y_scale(panel, top, plot_h);

        let _ = writeln!(out, r#"<g class="panel">"#);
        let _ = writeln!(
            out,
            r##"<rect x="{MARGIN_LEFT}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
        );
        for t in scale.ticks() {
            let y = scale.y(t);
            let _ = writeln!(
                out,
                r##"<line x1="{MARGIN_LEFT}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="#e5e5e5"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
                MARGIN_LEFT + plot_w,
                MARGIN_LEFT - 6.0,
                y + 4.0,
                tick_label(t)
            );
        }
        for t in linear_ticks(x0, x1) {
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                x(t),
                top + plot_h + 16.0,
                tick_label(t)
            );
        }
        let _ = writeln!(
            out,
            r#"<text transform="translate(18,{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
            top + plot_h / 2.0,
            escape(&panel.label)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Sample</text>"#,
            MARGIN_LEFT + plot_w / 2.0,
            top + plot_h + 34.0
        );

        let mut segment = Vec::new();
        for (i, v) in panel.index.iter().zip(&panel.statistic) {
            match v {
                Some(v) if v.is_finite() => segment.push((x(*i), scale.y(*v))),
                _ => {
                    polyline(&mut out, &segment, "statistic", STAT_COLOR, false);
                    segment.clear();
                }
            }
        }
        polyline(&mut out, &segment, "statistic", STAT_COLOR, false);
        let limit: Vec<(f64, f64)> = panel
            .index
            .iter()
            .zip(&panel.limit)
            .filter(|(_, l)| l.is_finite())
            .map(|(i, l)| (x(*i), scale.y(*l)))
            .collect();
        polyline(&mut out, &limit, "limit", LIMIT_COLOR, true);
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    out
}

/// Vertical bars, one per label, with the tallest highlighted.
pub fn bar_chart(title: &str, y_label: &str, labels: &[String], values: &[f64]) -> String {
    let height = 420.0;
    let bottom = 70.0;
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = height - MARGIN_TOP - bottom;
    let max = values.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let hi = if max > 0.0 { max * 1.05 } else { 1.0 };
    let scale = Scale {
        lo: 0.0,
        hi,
        log: false,
        top: MARGIN_TOP,
        height: plot_h,
    };
    let best = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for t in scale.ticks() {
        let y = scale.y(t);
        let _ = writeln!(
            out,
            r##"<line x1="{MARGIN_LEFT}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="#e5e5e5"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            MARGIN_LEFT + plot_w,
            MARGIN_LEFT - 6.0,
            y + 4.0,
            tick_label(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text transform="translate(18,{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        escape(y_label)
    );
    let slot = plot_w / values.len().max(1) as f64;
    for (i, (label, v)) in labels.iter().zip(values).enumerate() {
        let v = if v.is_finite() { *v } else { 0.0 };
        let y = scale.y(v);
        let x = MARGIN_LEFT + i as f64 * slot + 0.15 * slot;
        let color = if Some(i) == best { LIMIT_COLOR } else { BAR_COLOR };
        let _ = writeln!(
            out,
            r#"<rect class="bar" data-label="{}" data-value="{v}" x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
            escape(label),
            0.7 * slot,
            MARGIN_TOP + plot_h - y
        );
        let lx = x + 0.35 * slot;
        let ly = MARGIN_TOP + plot_h + 10.0;
        let _ = writeln!(
            out,
            r#"<text transform="translate({lx:.2},{ly:.2}) rotate(60)" text-anchor="start">{}</text>"#,
            escape(label)
        );
    }
    let _ = writeln!(
        out,
        r##"<line x1="{MARGIN_LEFT}" x2="{}" y1="{:.2}" y2="{:.2}" stroke="#444"/>"##,
        MARGIN_LEFT + plot_w,
        MARGIN_TOP + plot_h,
        MARGIN_TOP + plot_h
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round() {
        assert_eq!(linear_ticks(0.0, 10.0), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        let small = linear_ticks(0.0, 0.9);
        assert_eq!(small.len(), 5);
        assert!((small[4] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn one_bar_per_value() {
        let labels: Vec<String> = (1..=5).map(|i| format!("V{i}")).collect();
        let svg = bar_chart("t", "y", &labels, &[1.0, 3.0, 2.0, 0.0, 0.5]);
        assert_eq!(svg.matches(r#"class="bar""#).count(), 5);
    }

    #[test]
    fn gaps_split_the_statistic_line() {
        let panel = Panel {
            label: "T2".into(),
            index: (0..6).map(f64::from).collect(),
            statistic: vec![None, Some(1.0), Some(2.0), None, Some(1.0), Some(3.0)],
            limit: vec![2.5; 6],
        };
        let svg = statistic_chart("t", &[panel]);
        assert_eq!(svg.matches(r#"class="statistic""#).count(), 2);
        assert_eq!(svg.matches(r#"class="limit""#).count(), 1);
    }

    #[test]
    fn huge_excursions_switch_to_log_axis() {
        let panel = Panel {
            label: "T2".into(),
            index: vec![0.0, 1.0],
            statistic: vec![Some(1.0), Some(1e6)],
            limit: vec![2.0, 2.0],
        };
        assert!(y_scale(&panel, 0.0, 100.0).log);
    }
}
