//! SVG rendering of forgetting curves.
//!
//! The background is shaded by memory phase: green up to the fine length,
//! blue up to the coarse length, red beyond. Region rectangles carry
//! `data-start`/`data-end` attributes holding the exact token lengths.

use std::fmt::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ReportError;
use crate::analysis::memory::MemoryLengths;
use crate::evaluator::{CurvePoint, ForgettingCurve};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Palette {
    #[default]
    Standard,
    /// Okabe-Ito colors.
    ColorBlind,
}

impl FromStr for Palette {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(Palette::Standard),
            "color-blind" | "colorblind" => Ok(Palette::ColorBlind),
            other => Err(format!("unknown palette {other:?} (expected standard or color-blind)")),
        }
    }
}

struct Colors {
    fine: &'static str,
    coarse: &'static str,
    amnesia: &'static str,
    copy: &'static str,
    lm: &'static str,
    series: [&'static str; 8],
}

impl Palette {
    pub(crate) fn colors_for_series(self) -> [&'static str; 8] {
        self.colors().series
    }

    fn colors(self) -> Colors {
        match self {
            Palette::Standard => Colors {
                fine: "#2ca02c",
                coarse: "#1f77b4",
                amnesia: "#d62728",
                copy: "#e6a800",
                lm: "#1f4e9c",
                series: ["#e6a800", "#1f4e9c", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"],
            },
            Palette::ColorBlind => Colors {
                fine: "#009e73",
                coarse: "#56b4e9",
                amnesia: "#d55e00",
                copy: "#e69f00",
                lm: "#0072b2",
                series: ["#e69f00", "#0072b2", "#009e73", "#d55e00", "#cc79a7", "#56b4e9", "#f0e442", "#000000"],
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOptions {
    pub width: f64,
    pub height: f64,
    pub palette: Palette,
    pub title: Option<String>,
}

impl Default for PlotOptions {
    fn default() -> Self {
        PlotOptions { width: 820.0, height: 480.0, palette: Palette::Standard, title: None }
    }
}

pub(crate) fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '&' => out.push_str("&amp;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Plot frame: maps token lengths and accuracies to pixels.
pub(crate) struct Frame {
    pub left: f64,
    pub top: f64,
    pub plot_w: f64,
    pub plot_h: f64,
    pub x_max: f64,
}

impl Frame {
    pub fn new(options: &PlotOptions, x_max: f64, legend_w: f64) -> Self {
        let (left, top, bottom) = (64.0, 44.0, 56.0);
        Frame {
            left,
            top,
            plot_w: options.width - left - legend_w,
            plot_h: options.height - top - bottom,
            x_max,
        }
    }

    pub fn x(&self, length: f64) -> f64 {
        self.left + length / self.x_max * self.plot_w
    }

    pub fn y(&self, acc: f64) -> f64 {
        self.top + (1.0 - acc.clamp(0.0, 1.0)) * self.plot_h
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.plot_h
    }
}

fn nice_step(span: f64, target_ticks: f64) -> f64 {
    let raw = span / target_ticks;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

pub(crate) fn header(svg: &mut String, options: &PlotOptions) {
    let (w, h) = (options.width, options.height);
    let _ = writeln!(
        svg,
        r##"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="Helvetica, Arial, sans-serif" font-size="12">
<rect x="0" y="0" width="{w:.0}" height="{h:.0}" fill="#ffffff"/>"##
    );
    if let Some(title) = &options.title {
        let _ = writeln!(
            svg,
            r##"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"##,
            w / 2.0,
            escape(title)
        );
    }
}

pub(crate) fn axes(svg: &mut String, f: &Frame) {
    let step = nice_step(f.x_max, 6.0);
    let _ = writeln!(svg, r##"<g id="axes" stroke="#333333" stroke-width="1">"##);
    let _ = writeln!(
        svg,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"##,
        f.left,
        f.bottom(),
        f.left + f.plot_w,
        f.bottom()
    );
    let _ = writeln!(svg, r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"##, f.left, f.top, f.left, f.bottom());
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r##"<g id="ticks" fill="#333333">"##);
    let mut v = 0.0;
    while v <= f.x_max + 1e-9 {
        let x = f.x(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333333"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            f.bottom(),
            f.bottom() + 5.0,
            f.bottom() + 18.0,
            v as u64
        );
        v += step;
    }
    for i in 0..=5 {
        let acc = f64::from(i) / 5.0;
        let y = f.y(acc);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#333333"/><text x="{:.2}" y="{:.2}" text-anchor="end">{acc:.1}</text>"##,
            f.left - 5.0,
            f.left,
            f.left - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r##"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">prefix length (total input tokens)</text>"##,
        f.left + f.plot_w / 2.0,
        f.bottom() + 40.0
    );
    let _ = writeln!(
        svg,
        r##"<text transform="translate({:.2},{:.2}) rotate(-90)" text-anchor="middle" font-size="13">accuracy</text>"##,
        f.left - 44.0,
        f.top + f.plot_h / 2.0
    );
    let _ = writeln!(svg, "</g>");
}

/// Consecutive runs of points that have statistics.
pub(crate) fn segments(points: &[CurvePoint]) -> Vec<Vec<&CurvePoint>> {
    let mut out: Vec<Vec<&CurvePoint>> = Vec::new();
    let mut current = Vec::new();
    for p in points {
        if p.stats.is_some() {
            current.push(p);
        } else if !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Mean line, ±std band and markers for one series.
#[allow(clippy::too_many_arguments)]
pub(crate) fn series(
    svg: &mut String,
    f: &Frame,
    points: &[CurvePoint],
    id: &str,
    color: &str,
    dashed: bool,
    band: bool,
    pick: impl Fn(&CurvePoint) -> (f64, f64),
) {
    let _ = writeln!(svg, r##"<g id="{}">"##, escape(id));
    for seg in segments(points) {
        let coords: Vec<(f64, f64, f64)> = seg
            .iter()
            .map(|p| {
                let (m, s) = pick(p);
                (p.grid_length as f64, m, s)
            })
            .collect();
        if band && coords.len() > 1 {
            let upper = coords.iter().map(|&(l, m, s)| format!("{:.2},{:.2}", f.x(l), f.y(m + s)));
            let lower = coords.iter().rev().map(|&(l, m, s)| format!("{:.2},{:.2}", f.x(l), f.y(m - s)));
            let pts: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(svg, r##"<polygon points="{}" fill="{color}" fill-opacity="0.25" stroke="none"/>"##, pts.join(" "));
        }
        let line: Vec<String> = coords.iter().map(|&(l, m, _)| format!("{:.2},{:.2}", f.x(l), f.y(m))).collect();
        let dash = if dashed { r##" stroke-dasharray="6,4""## } else { "" };
        let _ = writeln!(
            svg,
            r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"##,
            line.join(" ")
        );
        for &(l, m, _) in &coords {
            let _ = writeln!(svg, r##"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"##, f.x(l), f.y(m));
        }
    }
    let _ = writeln!(svg, "</g>");
}

pub(crate) fn legend_entry(svg: &mut String, x: f64, y: f64, color: &str, label: &str, kind: &str) {
    match kind {
        "box" => {
            let _ = writeln!(
                svg,
                r##"<rect x="{x:.2}" y="{:.2}" width="14" height="10" fill="{color}" fill-opacity="0.25" stroke="{color}"/>"##,
                y - 9.0
            );
        }
        "dash" => {
            let _ = writeln!(
                svg,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2" stroke-dasharray="6,4"/>"##,
                y - 4.0,
                x + 14.0,
                y - 4.0
            );
        }
        _ => {
            let _ = writeln!(
                svg,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"##,
                y - 4.0,
                x + 14.0,
                y - 4.0
            );
        }
    }
    let _ = writeln!(svg, r##"<text x="{:.2}" y="{y:.2}">{}</text>"##, x + 20.0, escape(label));
}

fn region(svg: &mut String, f: &Frame, id: &str, start: usize, end: usize, color: &str) {
    if end <= start {
        return;
    }
    let (x0, x1) = (f.x(start as f64), f.x(end as f64));
    let _ = writeln!(
        svg,
        r##"<rect id="{id}" data-start="{start}" data-end="{end}" x="{x0:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.15"/>"##,
        f.top,
        x1 - x0,
        f.plot_h
    );
}

/// Render the forgetting curve. `analysis = None` draws no phase regions.
pub fn plot_svg(
    curve: &ForgettingCurve,
    analysis: Option<&MemoryLengths>,
    options: &PlotOptions,
) -> Result<String, ReportError> {
    let valid = curve.points.iter().filter(|p| p.stats.is_some()).count();
    if valid < 2 {
        return Err(ReportError::DegenerateCurve(valid));
    }
    let colors = options.palette.colors();
    let x_max = curve.points.iter().map(|p| p.grid_length).max().unwrap_or(1) as f64;
    let f = Frame::new(options, x_max, 190.0);
    let mut svg = String::new();
    header(&mut svg, options);

    if let Some(m) = analysis {
        let end = x_max as usize;
        let coarse_end = m.coarse.max(m.fine).min(end);
        let fine_end = m.fine.min(end);
        let _ = writeln!(svg, r##"<g id="regions">"##);
        region(&mut svg, &f, "region-fine", 0, fine_end, colors.fine);
        region(&mut svg, &f, "region-coarse", fine_end, coarse_end, colors.coarse);
        region(&mut svg, &f, "region-amnesia", coarse_end, end, colors.amnesia);
        let _ = writeln!(svg, "</g>");
        let y = f.y(m.thresholds.fine_acc);
        let _ = writeln!(
            svg,
            r##"<g id="threshold"><line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#555555" stroke-dasharray="2,3"/><text x="{:.2}" y="{:.2}" text-anchor="end" fill="#555555">{}% copy threshold</text></g>"##,
            f.left,
            f.left + f.plot_w,
            f.left + f.plot_w - 4.0,
            y - 4.0,
            m.thresholds.fine_acc * 100.0
        );
    }

    axes(&mut svg, &f);
    let stats = |p: &CurvePoint| p.stats.clone().expect("segments hold valid points");
    series(&mut svg, &f, &curve.points, "lm-curve", colors.lm, false, true, |p| {
        let s = stats(p);
        (s.lm_mean, s.lm_std)
    });
    series(&mut svg, &f, &curve.points, "copy-curve", colors.copy, false, true, |p| {
        let s = stats(p);
        (s.copy_mean, s.copy_std)
    });

    let lx = f.left + f.plot_w + 20.0;
    let mut ly = f.top + 12.0;
    let _ = writeln!(svg, r##"<g id="legend">"##);
    legend_entry(&mut svg, lx, ly, colors.copy, "copy accuracy", "line");
    ly += 20.0;
    legend_entry(&mut svg, lx, ly, colors.lm, "LM accuracy", "line");
    if let Some(m) = analysis {
        ly += 28.0;
        legend_entry(&mut svg, lx, ly, colors.fine, "fine-grained memory", "box");
        ly += 20.0;
        legend_entry(&mut svg, lx, ly, colors.coarse, "coarse-grained memory", "box");
        ly += 20.0;
        legend_entry(&mut svg, lx, ly, colors.amnesia, "amnesia", "box");
        ly += 28.0;
        let _ = writeln!(svg, r##"<text x="{lx:.2}" y="{ly:.2}">fine: {}</text>"##, escape(&m.fine_display));
        ly += 18.0;
        let _ = writeln!(svg, r##"<text x="{lx:.2}" y="{ly:.2}">coarse: {}</text>"##, escape(&m.coarse_display));
    }
    ly += 18.0;
    let _ = writeln!(
        svg,
        r##"<text x="{lx:.2}" y="{ly:.2}" fill="#555555">bands: ±1 std, R={}</text>"##,
        curve.config.repeats
    );
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    Ok(svg)
}
