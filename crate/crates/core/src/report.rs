//! Hand-emitted SVG figures and CSV number formatting.
//!
//! Output is a pure function of the inputs: fixed element order and fixed
//! decimal formatting, so identical runs write identical files.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::write_atomic;
use crate::error::Result;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `text` to `path` through a temporary file and a rename.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Pixel coordinates with two decimals.
fn px(v: f64) -> String {
    format!("{v:.2}")
}

pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        let mut s = Self { width, height, body: String::new() };
        s.rect(0.0, 0.0, width, height, "white", "none");
        s
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}" stroke="{stroke}"/>"#,
            px(x),
            px(y),
            px(w),
            px(h)
        );
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}" stroke-width="{width}"/>"#,
            px(x1),
            px(y1),
            px(x2),
            px(y2)
        );
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], stroke: &str, width: f64, dashed: bool) {
        if points.is_empty() {
            return;
        }
        let pts: Vec<String> = points.iter().map(|&(x, y)| format!("{},{}", px(x), px(y))).collect();
        let dash = if dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width}"{dash}/>"#,
            pts.join(" ")
        );
    }

    pub fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{}" cy="{}" r="{}" fill="{fill}" stroke="{stroke}"/>"#,
            px(cx),
            px(cy),
            px(r)
        );
    }

    pub fn text(&mut self, x: f64, y: f64, s: &str, size: f64, anchor: &str, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="{size}" text-anchor="{anchor}" fill="{fill}">{}</text>"#,
            px(x),
            px(y),
            esc(s)
        );
    }

    /// Text rotated a quarter turn counter-clockwise about its anchor.
    pub fn vtext(&mut self, x: f64, y: f64, s: &str, size: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{0}" y="{1}" font-family="sans-serif" font-size="{size}" text-anchor="middle" fill="{fill}" transform="rotate(-90 {0} {1})">{2}</text>"#,
            px(x),
            px(y),
            esc(s)
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Tick positions at 1, 2 or 5 times a power of ten covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return vec![lo];
    }
    let raw = (hi - lo) / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|&s| s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
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

/// A rectangular plotting area mapping data coordinates to pixels.
#[derive(Clone, Copy, Debug)]
pub struct Panel {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub xr: (f64, f64),
    pub yr: (f64, f64),
    /// Logarithmic y axis; `yr` then holds base-10 exponents.
    pub log_y: bool,
}

impl Panel {
    pub fn new(x: f64, y: f64, w: f64, h: f64, xr: (f64, f64), yr: (f64, f64)) -> Self {
        Self { x, y, w, h, xr: widen(xr), yr: widen(yr), log_y: false }
    }

    /// Log-scale y covering the positive values in `[lo, hi]`, padded to whole decades.
    pub fn semilog(x: f64, y: f64, w: f64, h: f64, xr: (f64, f64), lo: f64, hi: f64) -> Self {
        let lo = lo.max(1e-300).log10().floor();
        let hi = hi.max(1e-300).log10().ceil();
        Self { log_y: true, ..Self::new(x, y, w, h, xr, (lo, hi.max(lo + 1.0))) }
    }

    pub fn px(&self, v: f64) -> f64 {
        self.x + (v - self.xr.0) / (self.xr.1 - self.xr.0) * self.w
    }

    pub fn py(&self, v: f64) -> f64 {
        let v = if self.log_y { v.max(1e-300).log10() } else { v };
        self.y + self.h - (v - self.yr.0) / (self.yr.1 - self.yr.0) * self.h
    }

    pub fn series(&self, svg: &mut Svg, xs: &[f64], ys: &[f64], color: &str, width: f64, dashed: bool) {
        let pts: Vec<(f64, f64)> = xs
            .iter()
            .zip(ys)
            .filter(|(_, &y)| y.is_finite() && (!self.log_y || y > 0.0))
            .map(|(&x, &y)| (self.px(x), self.py(y)))
            .collect();
        svg.polyline(&pts, color, width, dashed);
    }

    pub fn markers(&self, svg: &mut Svg, xs: &[f64], ys: &[f64], color: &str, r: f64) {
        for (&x, &y) in xs.iter().zip(ys) {
            svg.circle(self.px(x), self.py(y), r, color, "none");
        }
    }

    /// Frame, ticks and labels. Pass `None` for `ylabel` to leave the left axis unlabelled.
    pub fn frame(&self, svg: &mut Svg, title: &str, xlabel: &str, ylabel: Option<&str>) {
        svg.rect(self.x, self.y, self.w, self.h, "none", "black");
        for t in nice_ticks(self.xr.0, self.xr.1, 6) {
            let x = self.px(t);
            svg.line(x, self.y + self.h, x, self.y + self.h + 4.0, "black", 1.0);
            svg.text(x, self.y + self.h + 16.0, &tick_label(t), 10.0, "middle", "black");
        }
        if self.log_y {
            for e in (self.yr.0 as i64)..=(self.yr.1 as i64) {
                let y = self.py(10f64.powi(e as i32));
                svg.line(self.x - 4.0, y, self.x, y, "black", 1.0);
                svg.text(self.x - 6.0, y + 3.0, &format!("1e{e}"), 10.0, "end", "black");
            }
        } else {
            self.yticks(svg, self.x, -1.0, "black");
        }
        if !title.is_empty() {
            svg.text(self.x + self.w / 2.0, self.y - 8.0, title, 13.0, "middle", "black");
        }
        if !xlabel.is_empty() {
            svg.text(self.x + self.w / 2.0, self.y + self.h + 34.0, xlabel, 12.0, "middle", "black");
        }
        if let Some(l) = ylabel {
            svg.vtext(self.x - 46.0, self.y + self.h / 2.0, l, 12.0, "black");
        }
    }

    /// Linear y ticks on a vertical axis at `x`; `dir` is −1 for left labels, +1 for right.
    pub fn yticks(&self, svg: &mut Svg, x: f64, dir: f64, color: &str) {
        for t in nice_ticks(self.yr.0, self.yr.1, 5) {
            let y = self.py(t);
            svg.line(x, y, x + 4.0 * dir, y, color, 1.0);
            let anchor = if dir < 0.0 { "end" } else { "start" };
            svg.text(x + 6.0 * dir, y + 3.0, &tick_label(t), 10.0, anchor, color);
        }
    }

    pub fn legend(&self, svg: &mut Svg, entries: &[(&str, &str)]) {
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = self.y + 14.0 + 15.0 * i as f64;
            let x = self.x + self.w - 120.0;
            svg.line(x, y - 4.0, x + 18.0, y - 4.0, color, 2.0);
            svg.text(x + 22.0, y, label, 11.0, "start", "black");
        }
    }
}

/// Pads degenerate or reversed ranges so the mapping stays finite.
fn widen((lo, hi): (f64, f64)) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    }
}

/// `(min, max)` of finite values, padded by 5% of the span.
pub fn padded_range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.into_iter().filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return (0.0, 1.0);
    }
    let pad = 0.05 * (hi - lo);
    widen((lo - pad, hi + pad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_inside() {
        let t = nice_ticks(0.0, 1.0, 5);
        assert_eq!(t, vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]);
        assert!(nice_ticks(-3.2, 7.9, 6).iter().all(|&v| (-3.2..=7.9).contains(&v)));
    }

    #[test]
    fn svg_is_well_formed_and_escaped() {
        let mut s = Svg::new(100.0, 50.0);
        s.text(1.0, 2.0, "a<b", 10.0, "start", "black");
        let out = s.finish();
        assert!(out.starts_with("<svg") && out.ends_with("</svg>\n"));
        assert!(out.contains("a&lt;b"));
    }

    #[test]
    fn panel_maps_corners() {
        let p = Panel::new(10.0, 20.0, 100.0, 50.0, (0.0, 1.0), (-1.0, 1.0));
        assert_eq!(p.px(0.0), 10.0);
        assert_eq!(p.py(-1.0), 70.0);
        let l = Panel::semilog(0.0, 0.0, 10.0, 10.0, (0.0, 1.0), 0.02, 3.0);
        assert_eq!(l.yr, (-2.0, 1.0));
    }

    #[test]
    fn num_round_trips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 12345.678] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }
}
