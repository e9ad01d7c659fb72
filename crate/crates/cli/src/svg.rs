//! Minimal self-contained SVG line and polygon plots.

use std::fmt::Write as _;

pub const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 40.0;

pub struct Panel {
    title: String,
    x_label: String,
    y_label: String,
    x_range: (f64, f64),
    y_range: (f64, f64),
    body: String,
    legend: Vec<(String, String)>,
    equal_aspect: bool,
}

impl Panel {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            x_range: (f64::INFINITY, f64::NEG_INFINITY),
            y_range: (f64::INFINITY, f64::NEG_INFINITY),
            body: String::new(),
            legend: Vec::new(),
            equal_aspect: false,
        }
    }

    pub fn equal_aspect(mut self) -> Self {
        self.equal_aspect = true;
        self
    }

    fn include(&mut self, x: f64, y: f64) {
        if x.is_finite() && y.is_finite() {
            self.x_range = (self.x_range.0.min(x), self.x_range.1.max(x));
            self.y_range = (self.y_range.0.min(y), self.y_range.1.max(y));
        }
    }

    // Shapes are stored in data coordinates and mapped when rendered.
    pub fn polyline(&mut self, points: &[(f64, f64)], color: &str, label: Option<&str>) {
        for &(x, y) in points {
            self.include(x, y);
        }
        let _ = writeln!(self.body, "L|{color}|{}", encode(points));
        if let Some(l) = label {
            self.legend.push((l.into(), color.into()));
        }
    }

    pub fn polygon(&mut self, points: &[(f64, f64)], color: &str, label: Option<&str>) {
        for &(x, y) in points {
            self.include(x, y);
        }
        let _ = writeln!(self.body, "P|{color}|{}", encode(points));
        if let Some(l) = label {
            self.legend.push((l.into(), color.into()));
        }
    }

    pub fn markers(&mut self, points: &[(f64, f64)], color: &str, cross: bool, label: Option<&str>) {
        for &(x, y) in points {
            self.include(x, y);
        }
        let kind = if cross { "X" } else { "O" };
        let _ = writeln!(self.body, "{kind}|{color}|{}", encode(points));
        if let Some(l) = label {
            self.legend.push((l.into(), color.into()));
        }
    }

    fn render(&self, out: &mut String, ox: f64, oy: f64, w: f64, h: f64) {
        let (mut x0, mut x1) = pad(self.x_range);
        let (mut y0, mut y1) = pad(self.y_range);
        let pw = w - MARGIN_LEFT - MARGIN_RIGHT;
        let ph = h - MARGIN_TOP - MARGIN_BOTTOM;
        if self.equal_aspect {
            let sx = (x1 - x0) / pw;
            let sy = (y1 - y0) / ph;
            if sx > sy {
                let extra = sx * ph - (y1 - y0);
                y0 -= extra / 2.0;
                y1 += extra / 2.0;
            } else {
                let extra = sy * pw - (x1 - x0);
                x0 -= extra / 2.0;
                x1 += extra / 2.0;
            }
        }
        let px = |x: f64| ox + MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| oy + MARGIN_TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{pw:.2}" height="{ph:.2}" fill="white" stroke="#444"/>"##,
            ox + MARGIN_LEFT,
            oy + MARGIN_TOP
        );
        for t in ticks(x0, x1) {
            let x = px(t);
            let _ = writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"##,
                oy + MARGIN_TOP,
                oy + MARGIN_TOP + ph,
                oy + MARGIN_TOP + ph + 14.0,
                tick_label(t)
            );
        }
        for t in ticks(y0, y1) {
            let y = py(t);
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"##,
                ox + MARGIN_LEFT,
                ox + MARGIN_LEFT + pw,
                ox + MARGIN_LEFT - 4.0,
                y + 3.0,
                tick_label(t)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#,
            ox + w / 2.0,
            oy + 18.0,
            escape(&self.title)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            ox + MARGIN_LEFT + pw / 2.0,
            oy + h - 6.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
            ox + 14.0,
            oy + MARGIN_TOP + ph / 2.0,
            ox + 14.0,
            oy + MARGIN_TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for line in self.body.lines() {
            let mut parts = line.splitn(3, '|');
            let (kind, color, data) = (parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap_or(""));
            let pts: Vec<(f64, f64)> = decode(data).into_iter().map(|(x, y)| (px(x), py(y))).collect();
            let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            match kind {
                "L" => {
                    let _ = writeln!(
                        out,
                        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.2"/>"#,
                        coords.join(" ")
                    );
                }
                "P" => {
                    let _ = writeln!(
                        out,
                        r#"<polygon points="{}" fill="{color}" fill-opacity="0.12" stroke="{color}" stroke-width="1.5"/>"#,
                        coords.join(" ")
                    );
                }
                "X" => {
                    for (x, y) in pts {
                        let _ = writeln!(
                            out,
                            r#"<path d="M{:.2},{:.2}L{:.2},{:.2}M{:.2},{:.2}L{:.2},{:.2}" stroke="{color}" stroke-width="2"/>"#,
                            x - 5.0,
                            y - 5.0,
                            x + 5.0,
                            y + 5.0,
                            x - 5.0,
                            y + 5.0,
                            x + 5.0,
                            y - 5.0
                        );
                    }
                }
                _ => {
                    for (x, y) in pts {
                        let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{color}"/>"#);
                    }
                }
            }
        }

        for (k, (label, color)) in self.legend.iter().enumerate() {
            let lx = ox + MARGIN_LEFT + pw - 150.0;
            let ly = oy + MARGIN_TOP + 14.0 + 14.0 * k as f64;
            let _ = writeln!(
                out,
                r#"<rect x="{lx:.2}" y="{:.2}" width="10" height="10" fill="{color}"/><text x="{:.2}" y="{:.2}" font-size="10">{}</text>"#,
                ly - 9.0,
                lx + 14.0,
                ly,
                escape(label)
            );
        }
    }
}

fn encode(points: &[(f64, f64)]) -> String {
    points
        .iter()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(x, y)| format!("{x:e};{y:e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn decode(data: &str) -> Vec<(f64, f64)> {
    data.split_whitespace()
        .filter_map(|p| {
            let (x, y) = p.split_once(';')?;
            Some((x.parse().ok()?, y.parse().ok()?))
        })
        .collect()
}

fn pad((lo, hi): (f64, f64)) -> (f64, f64) {
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let m = 0.05 * (hi - lo);
    (lo - m, hi + m)
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn tick_label(t: f64) -> String {
    let s = format!("{t:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Stacks panels vertically into one document.
pub fn document(panels: &[Panel], width: f64, panel_height: f64) -> String {
    let height = panel_height * panels.len() as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    for (k, p) in panels.iter().enumerate() {
        p.render(&mut out, 0.0, k as f64 * panel_height, width, panel_height);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn document_is_self_contained() {
        let mut p = Panel::new("t", "x", "y");
        p.polyline(&[(0.0, 0.0), (1.0, 2.0)], PALETTE[0], Some("a"));
        p.polygon(&[(0.0, 0.0), (1.0, 0.0), (0.5, 1.0)], PALETTE[1], None);
        p.markers(&[(0.5, 0.5)], PALETTE[2], true, None);
        let svg = document(&[p], 400.0, 300.0);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("<polyline") && svg.contains("<polygon") && svg.contains("<path"));
        assert!(!svg.contains("href"));
    }

    #[test]
    fn ticks_cover_range() {
        let t = ticks(0.0, 1.0);
        assert!(t.first().unwrap() >= &0.0 && t.last().unwrap() <= &1.0 && t.len() >= 4);
    }
}
