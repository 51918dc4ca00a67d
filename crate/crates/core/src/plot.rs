//! Deterministic SVG output: metric histograms and attribution galleries.
//!
//! All coordinates are written with two decimals so identical inputs give
//! byte-identical files.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::Vector;

pub const DEFAULT_BINS: usize = 40;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Which per-record quantity a plot shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Mu,
    NormFraction,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mu => "mu",
            Metric::NormFraction => "norm_fraction",
        }
    }

    fn axis_label(self) -> &'static str {
        match self {
            Metric::Mu => "μ (squared tangent fraction ‖πv‖²/‖v‖²)",
            Metric::NormFraction => "norm fraction ‖πv‖/‖v‖",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu" => Ok(Metric::Mu),
            "norm_fraction" => Ok(Metric::NormFraction),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

/// Values of one method, in the order they should be drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
}

/// A labelled vertical line.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceLine {
    pub label: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramOptions {
    pub metric: Metric,
    pub bins: usize,
    pub references: Vec<ReferenceLine>,
    /// Overlay a Gaussian kernel density estimate with Silverman bandwidth.
    pub kde: bool,
    pub title: String,
}

/// Counts of `values` in `bins` equal bins over `[0, 1]`. The last bin is
/// closed, so `1.0` lands in it; values outside `[0, 1]` are clamped.
pub fn histogram_counts(values: &[f64], bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for v in values {
        let b = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

/// Silverman's rule of thumb, `0.9 · min(sd, IQR/1.34) · n^(-1/5)`.
/// `None` when the sample has no spread.
pub fn silverman_bandwidth(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    (h > 0.0 && h.is_finite()).then_some(h)
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn kde(values: &[f64], h: f64, at: f64) -> f64 {
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    values.iter().map(|v| (-0.5 * ((at - v) / h).powi(2)).exp()).sum::<f64>() * norm
}

// Histogram canvas.
const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn plot_width() -> f64 {
    WIDTH - LEFT - RIGHT
}

fn plot_height() -> f64 {
    HEIGHT - TOP - BOTTOM
}

/// Horizontal pixel position of a metric value in histogram plots.
pub fn histogram_x(value: f64) -> f64 {
    LEFT + value.clamp(0.0, 1.0) * plot_width()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Normalized histograms (densities over `[0, 1]`) of several series drawn
/// on one set of axes, with reference lines and a legend.
pub fn render_histogram(series: &[Series], opts: &HistogramOptions) -> Result<String> {
    let series: Vec<&Series> = series.iter().filter(|s| !s.values.is_empty()).collect();
    if series.is_empty() {
        return Err(Error::EmptySelection);
    }
    if opts.bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let bins = opts.bins;
    let width = 1.0 / bins as f64;
    let densities: Vec<Vec<f64>> = series
        .iter()
        .map(|s| {
            let n = s.values.len() as f64;
            histogram_counts(&s.values, bins).iter().map(|c| *c as f64 / (n * width)).collect()
        })
        .collect();
    let kdes: Vec<Option<Vec<(f64, f64)>>> = series
        .iter()
        .map(|s| {
            if !opts.kde {
                return None;
            }
            let h = silverman_bandwidth(&s.values)?;
            Some((0..=200).map(|i| i as f64 / 200.0).map(|t| (t, kde(&s.values, h, t))).collect())
        })
        .collect();
    let peak = densities
        .iter()
        .flatten()
        .copied()
        .chain(kdes.iter().flatten().flatten().map(|p| p.1))
        .fold(0.0, f64::max);
    let y_max = if peak > 0.0 { peak * 1.05 } else { 1.0 };
    let y = |v: f64| TOP + plot_height() * (1.0 - v / y_max);

    let mut svg = String::new();
    let w = &mut svg;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + plot_width() / 2.0,
        escape(&opts.title)
    );
    // Axes and ticks.
    let (x0, x1, y0) = (LEFT, LEFT + plot_width(), TOP + plot_height());
    let _ = writeln!(w, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="black"/>"#);
    let _ = writeln!(w, r#"<line x1="{x0:.2}" y1="{TOP:.2}" x2="{x0:.2}" y2="{y0:.2}" stroke="black"/>"#);
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let px = histogram_x(t);
        let _ = writeln!(w, r#"<line x1="{px:.2}" y1="{y0:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#, y0 + 5.0);
        let _ = writeln!(w, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{t:.1}</text>"#, y0 + 18.0);
        let v = y_max * t;
        let py = y(v);
        let _ = writeln!(w, r#"<line x1="{:.2}" y1="{py:.2}" x2="{x0:.2}" y2="{py:.2}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"#, x0 - 8.0, py + 4.0);
    }
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + plot_width() / 2.0,
        HEIGHT - 18.0,
        escape(opts.metric.axis_label())
    );
    let _ = writeln!(
        w,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">density</text>"#,
        TOP + plot_height() / 2.0,
        TOP + plot_height() / 2.0
    );
    // Histogram outlines.
    for (k, dens) in densities.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut points = format!("{x0:.2},{y0:.2}");
        for (b, d) in dens.iter().enumerate() {
            let (l, r) = (histogram_x(b as f64 * width), histogram_x((b + 1) as f64 * width));
            let py = y(*d);
            let _ = write!(points, " {l:.2},{py:.2} {r:.2},{py:.2}");
        }
        let _ = write!(points, " {x1:.2},{y0:.2}");
        let _ = writeln!(
            w,
            r#"<polygon points="{points}" fill="{color}" fill-opacity="0.15" stroke="{color}" stroke-width="1.5"/>"#
        );
    }
    for (k, curve) in kdes.iter().enumerate() {
        if let Some(curve) = curve {
            let color = PALETTE[k % PALETTE.len()];
            let pts: Vec<String> = curve.iter().map(|(t, d)| format!("{:.2},{:.2}", histogram_x(*t), y(*d))).collect();
            let _ = writeln!(w, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        }
    }
    for (k, r) in opts.references.iter().enumerate() {
        let px = histogram_x(r.value);
        let dash = if k == 0 { "6,4" } else { "2,3" };
        let _ = writeln!(
            w,
            r#"<line x1="{px:.2}" y1="{TOP:.2}" x2="{px:.2}" y2="{y0:.2}" stroke="black" stroke-width="1.5" stroke-dasharray="{dash}"/>"#
        );
    }
    // Legend.
    let lx = x1 + 20.0;
    let mut ly = TOP + 10.0;
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            w,
            r#"<rect x="{lx:.2}" y="{:.2}" width="14" height="10" fill="{color}" fill-opacity="0.4" stroke="{color}"/>"#,
            ly - 9.0
        );
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{ly:.2}">{} (n={})</text>"#,
            lx + 20.0,
            escape(&s.label),
            s.values.len()
        );
        ly += 18.0;
    }
    for (k, r) in opts.references.iter().enumerate() {
        let dash = if k == 0 { "6,4" } else { "2,3" };
        let _ = writeln!(
            w,
            r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-dasharray="{dash}"/>"#,
            ly - 4.0,
            lx + 14.0,
            ly - 4.0
        );
        let _ = writeln!(w, r#"<text x="{:.2}" y="{ly:.2}">{} = {:.4}</text>"#, lx + 20.0, escape(&r.label), r.value);
        ly += 18.0;
    }
    let _ = writeln!(w, "</svg>");
    Ok(svg)
}

/// Diverging blue-white-red colour for `t ∈ [-1, 1]`.
pub fn diverging_color(t: f64) -> (u8, u8, u8) {
    let t = if t.is_finite() { t.clamp(-1.0, 1.0) } else { 0.0 };
    let fade = (255.0 * (1.0 - t.abs())).round() as u8;
    if t < 0.0 {
        (fade, fade, 255)
    } else {
        (255, fade, fade)
    }
}

fn gray(t: f64) -> (u8, u8, u8) {
    let g = (255.0 * t.clamp(0.0, 1.0)).round() as u8;
    (g, g, g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryCell {
    pub label: String,
    pub values: Vector,
    /// Tangent fraction of `values`; `None` for a zero attribution.
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryRow {
    pub point_id: usize,
    pub image: Vector,
    pub cells: Vec<GalleryCell>,
}

/// Caption under a gallery heatmap.
pub fn mu_caption(mu: Option<f64>) -> String {
    match mu {
        Some(m) => format!("μ = {m:.4}"),
        None => "μ undefined".to_string(),
    }
}

const CELL: f64 = 96.0;
const GAP: f64 = 16.0;
const LABEL_W: f64 = 70.0;
const HEADER: f64 = 30.0;
const CAPTION: f64 = 20.0;

fn draw_pixels(w: &mut String, side: usize, ox: f64, oy: f64, color: impl Fn(usize) -> (u8, u8, u8)) {
    let px = CELL / side as f64;
    for r in 0..side {
        for c in 0..side {
            let (red, green, blue) = color(r * side + c);
            let _ = writeln!(
                w,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({red},{green},{blue})"/>"#,
                ox + c as f64 * px,
                oy + r as f64 * px,
                px,
                px
            );
        }
    }
}

/// A grid with one row per point: the input image (grey scale over
/// `pixel_range`) followed by one heatmap per attribution, coloured
/// symmetrically over `[-max|a|, max|a|]` and captioned with its μ.
pub fn render_gallery(side: usize, pixel_range: (f64, f64), rows: &[GalleryRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::EmptySelection);
    }
    let cells = rows[0].cells.len();
    for row in rows {
        if side == 0 || row.image.len() != side * side || row.cells.iter().any(|c| c.values.len() != side * side) {
            return Err(Error::NotAnImage);
        }
        if row.cells.len() != cells {
            return Err(Error::InvalidArgument("gallery rows need the same methods".into()));
        }
    }
    let (lo, hi) = pixel_range;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let width = LABEL_W + (cells + 1) as f64 * (CELL + GAP) + GAP;
    let height = HEADER + rows.len() as f64 * (CELL + CAPTION + GAP) + GAP;
    let mut svg = String::new();
    let w = &mut svg;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.2}" height="{height:.2}" viewBox="0 0 {width:.2} {height:.2}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(w, r#"<rect width="{width:.2}" height="{height:.2}" fill="white"/>"#);
    let col_x = |k: usize| LABEL_W + k as f64 * (CELL + GAP);
    let headers = std::iter::once("input").chain(rows[0].cells.iter().map(|c| c.label.as_str()));
    for (k, label) in headers.enumerate() {
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            col_x(k) + CELL / 2.0,
            HEADER - 10.0,
            escape(label)
        );
    }
    for (r, row) in rows.iter().enumerate() {
        let oy = HEADER + r as f64 * (CELL + CAPTION + GAP);
        let _ = writeln!(w, r#"<text x="8" y="{:.2}">#{}</text>"#, oy + CELL / 2.0, row.point_id);
        draw_pixels(w, side, col_x(0), oy, |i| gray((row.image[i] - lo) / span));
        for (k, cell) in row.cells.iter().enumerate() {
            let scale = cell.values.max_abs();
            let ox = col_x(k + 1);
            draw_pixels(w, side, ox, oy, |i| {
                if scale > 0.0 {
                    diverging_color(cell.values[i] / scale)
                } else {
                    diverging_color(0.0)
                }
            });
            let _ = writeln!(
                w,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                ox + CELL / 2.0,
                oy + CELL + 14.0,
                mu_caption(cell.mu)
            );
        }
    }
    let _ = writeln!(w, "</svg>");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(references: Vec<ReferenceLine>) -> HistogramOptions {
        HistogramOptions {
            metric: Metric::NormFraction,
            bins: DEFAULT_BINS,
            references,
            kde: true,
            title: "test".into(),
        }
    }

    #[test]
    fn single_value_at_one_fills_last_bin() {
        let counts = histogram_counts(&[1.0], 40);
        assert_eq!(counts[39], 1);
        assert_eq!(counts.iter().sum::<usize>(), 1);
        assert_eq!(histogram_counts(&[0.0, 0.024, 0.025], 40)[..2], [2, 1]);
        let svg = render_histogram(&[Series { label: "a".into(), values: vec![1.0] }], &opts(vec![])).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn histogram_is_deterministic() {
        let series = vec![
            Series { label: "a".into(), values: vec![0.1, 0.2, 0.25, 0.9] },
            Series { label: "b<c".into(), values: vec![0.5, 0.55] },
        ];
        let o = opts(vec![ReferenceLine { label: "sqrt(n/d)".into(), value: 0.3 }]);
        let a = render_histogram(&series, &o).unwrap();
        assert_eq!(a, render_histogram(&series, &o).unwrap());
        assert!(a.contains("b&lt;c"));
    }

    #[test]
    fn reference_line_position() {
        let value = (10.0f64 / 1024.0).sqrt();
        let svg = render_histogram(
            &[Series { label: "a".into(), values: vec![0.5] }],
            &opts(vec![ReferenceLine { label: "r".into(), value }]),
        )
        .unwrap();
        // Plot spans x ∈ [60, 520] for values in [0, 1].
        let expected = 60.0 + value * 460.0;
        let needle = format!(r#"<line x1="{expected:.2}" y1="40.00" x2="{expected:.2}""#);
        assert!(svg.contains(&needle), "{needle}");
    }

    #[test]
    fn empty_selection() {
        assert!(matches!(render_histogram(&[], &opts(vec![])), Err(Error::EmptySelection)));
        let empty = Series { label: "a".into(), values: vec![] };
        assert!(matches!(render_histogram(&[empty], &opts(vec![])), Err(Error::EmptySelection)));
    }

    #[test]
    fn silverman_examples() {
        assert_eq!(silverman_bandwidth(&[0.5, 0.5, 0.5]), None);
        assert_eq!(silverman_bandwidth(&[0.5]), None);
        // sd = 1/√2 · …: for {0, 1}, sd = √0.5, IQR = 0.5.
        let h = silverman_bandwidth(&[0.0, 1.0]).unwrap();
        let expected = 0.9 * (0.5f64.sqrt()).min(0.5 / 1.34) * 2f64.powf(-0.2);
        assert!((h - expected).abs() < 1e-15);
    }

    #[test]
    fn color_map_is_symmetric() {
        assert_eq!(diverging_color(0.0), (255, 255, 255));
        assert_eq!(diverging_color(1.0), (255, 0, 0));
        assert_eq!(diverging_color(-1.0), (0, 0, 255));
        let (r, g, b) = diverging_color(0.5);
        assert_eq!((b, g, r), diverging_color(-0.5));
    }

    #[test]
    fn zero_attribution_is_uniform_mid_colour() {
        let rows = vec![GalleryRow {
            point_id: 3,
            image: Vector::from([0.0, 0.5, 0.75, 0.25]),
            cells: vec![GalleryCell { label: "zero".into(), values: Vector::zeros(4), mu: None }],
        }];
        let svg = render_gallery(2, (0.0, 1.0), &rows).unwrap();
        assert_eq!(svg.matches("rgb(255,255,255)").count(), 4);
        assert!(svg.contains("μ undefined"));
        assert!(svg.contains("#3"));
    }

    #[test]
    fn gallery_caption_has_four_decimals() {
        assert_eq!(mu_caption(Some(0.912345)), "μ = 0.9123");
        let rows = vec![GalleryRow {
            point_id: 0,
            image: Vector::zeros(4),
            cells: vec![GalleryCell { label: "m".into(), values: Vector::from([1.0, -1.0, 0.5, 0.0]), mu: Some(0.5) }],
        }];
        let svg = render_gallery(2, (0.0, 1.0), &rows).unwrap();
        assert!(svg.contains("μ = 0.5000"));
        assert!(svg.contains("rgb(255,0,0)") && svg.contains("rgb(0,0,255)"));
    }

    #[test]
    fn gallery_rejects_non_images() {
        let rows = vec![GalleryRow { point_id: 0, image: Vector::zeros(5), cells: vec![] }];
        assert!(matches!(render_gallery(2, (0.0, 1.0), &rows), Err(Error::NotAnImage)));
        assert!(matches!(render_gallery(2, (0.0, 1.0), &[]), Err(Error::EmptySelection)));
    }
}
