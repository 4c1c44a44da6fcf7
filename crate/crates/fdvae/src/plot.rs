//! File-based SVG plots: training-loss curves, fairness-metric curves, and
//! 2-D embedding scatter plots.
//!
//! Plots are plain data until rendered: every series keeps its points as the
//! exact `f64` values handed in, so callers can compare a plot's contents
//! against the log records it was built from before writing the image.

use std::path::Path;

use crate::train::{StepRecord, ValRecord};

/// Canvas size in pixels.
pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 480.0;

const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 48.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
    "#bcbd22", "#e377c2",
];

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    /// No series, or every series is empty.
    #[error("cannot render a plot with no points")]
    Empty,
    /// A point is NaN or infinite.
    #[error("series {label:?} contains a non-finite point at index {index}")]
    NonFinite { label: String, index: usize },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// One named sequence of (x, y) points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Affine data→pixel mapping shared by every element of one plot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Frame {
    fn over(series: &[Series]) -> Result<Self, PlotError> {
        let mut frame: Option<Frame> = None;
        for s in series {
            for (index, &(x, y)) in s.points.iter().enumerate() {
                if !x.is_finite() || !y.is_finite() {
                    return Err(PlotError::NonFinite {
                        label: s.label.clone(),
                        index,
                    });
                }
                let f = frame.get_or_insert(Frame {
                    x_min: x,
                    x_max: x,
                    y_min: y,
                    y_max: y,
                });
                f.x_min = f.x_min.min(x);
                f.x_max = f.x_max.max(x);
                f.y_min = f.y_min.min(y);
                f.y_max = f.y_max.max(y);
            }
        }
        let mut f = frame.ok_or(PlotError::Empty)?;
        // Degenerate extents still need a nonzero span to map through.
        if f.x_max == f.x_min {
            let pad = f.x_min.abs().max(1.0) * 0.5;
            f.x_min -= pad;
            f.x_max += pad;
        }
        if f.y_max == f.y_min {
            let pad = f.y_min.abs().max(1.0) * 0.5;
            f.y_min -= pad;
            f.y_max += pad;
        }
        Ok(f)
    }

    pub fn x_to_px(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.x_min) / (self.x_max - self.x_min) * self.plot_width()
    }

    /// SVG y grows downward, so the data maximum maps to the top edge.
    pub fn y_to_px(&self, y: f64) -> f64 {
        MARGIN_TOP + (self.y_max - y) / (self.y_max - self.y_min) * self.plot_height()
    }

    pub fn plot_width(&self) -> f64 {
        WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    }

    pub fn plot_height(&self) -> f64 {
        HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mark {
    Line,
    Point,
}

/// A metric- or loss-over-time plot rendered as polylines.
#[derive(Debug, Clone, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

impl LinePlot {
    pub fn new(
        title: impl Into<String>,
        x_label: impl Into<String>,
        y_label: impl Into<String>,
    ) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
        }
    }

    pub fn push_series(&mut self, label: impl Into<String>, points: Vec<(f64, f64)>) {
        self.series.push(Series {
            label: label.into(),
            points,
        });
    }

    pub fn frame(&self) -> Result<Frame, PlotError> {
        Frame::over(&self.series)
    }

    pub fn to_svg(&self) -> Result<String, PlotError> {
        render(
            &self.title,
            &self.x_label,
            &self.y_label,
            &self.series,
            Mark::Line,
        )
    }

    pub fn write_svg(&self, path: &Path) -> Result<(), PlotError> {
        write_file(path, &self.to_svg()?)
    }
}

/// A point-cloud plot; each series is one colored group.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub groups: Vec<Series>,
}

impl ScatterPlot {
    pub fn new(
        title: impl Into<String>,
        x_label: impl Into<String>,
        y_label: impl Into<String>,
    ) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            groups: Vec::new(),
        }
    }

    pub fn push_group(&mut self, label: impl Into<String>, points: Vec<(f64, f64)>) {
        self.groups.push(Series {
            label: label.into(),
            points,
        });
    }

    pub fn frame(&self) -> Result<Frame, PlotError> {
        Frame::over(&self.groups)
    }

    pub fn to_svg(&self) -> Result<String, PlotError> {
        render(
            &self.title,
            &self.x_label,
            &self.y_label,
            &self.groups,
            Mark::Point,
        )
    }

    pub fn write_svg(&self, path: &Path) -> Result<(), PlotError> {
        write_file(path, &self.to_svg()?)
    }
}

/// Loss components over optimization steps, one series per component present
/// in the log. The y values are the logged scalars, unmodified.
pub fn loss_curves(records: &[StepRecord]) -> LinePlot {
    let mut plot = LinePlot::new("Representation losses", "step", "loss");
    let mut component = |label: &str, get: fn(&StepRecord) -> Option<f64>| {
        let points: Vec<(f64, f64)> = records
            .iter()
            .enumerate()
            .filter_map(|(i, r)| get(r).map(|v| (i as f64, v)))
            .collect();
        if !points.is_empty() {
            plot.push_series(label, points);
        }
    };
    component("recon", |r| Some(r.losses.recon));
    component("kl", |r| r.losses.kl);
    component("tc", |r| r.losses.tc);
    component("disc", |r| r.losses.disc);
    component("cls_t", |r| r.losses.cls_t);
    component("cls_p", |r| r.losses.cls_p);
    component("adv_t", |r| r.losses.adv_t);
    component("adv_p", |r| r.losses.adv_p);
    component("sensitive", |r| r.losses.sensitive);
    component("total", |r| Some(r.losses.total));
    plot
}

/// Validation accuracy and fairness metrics over downstream epochs.
pub fn fairness_curves(records: &[ValRecord]) -> LinePlot {
    let mut plot = LinePlot::new("Downstream validation metrics", "epoch", "value");
    let mut metric = |label: &str, get: fn(&ValRecord) -> f64| {
        plot.push_series(
            label,
            records
                .iter()
                .map(|r| (r.epoch as f64, get(r)))
                .collect(),
        );
    };
    metric("accuracy", |r| r.accuracy);
    metric("equalized_accuracy", |r| r.equalized_accuracy);
    metric("equal_opportunity", |r| r.equal_opportunity);
    metric("equalized_odds", |r| r.equalized_odds);
    plot
}

/// Scatter of projected embedding rows, one color per subspace tag; rows are
/// grouped by tag in first-seen order.
pub fn projection_scatter(rows: &[(String, f64, f64)]) -> ScatterPlot {
    let mut plot = ScatterPlot::new("Embedding projection", "pc1", "pc2");
    for (tag, x, y) in rows {
        match plot.groups.iter_mut().find(|g| &g.label == tag) {
            Some(group) => group.points.push((*x, *y)),
            None => plot.push_group(tag.clone(), vec![(*x, *y)]),
        }
    }
    plot
}

fn write_file(path: &Path, contents: &str) -> Result<(), PlotError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| PlotError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| PlotError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn escape_xml(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            '&' => "&amp;".to_string(),
            '<' => "&lt;".to_string(),
            '>' => "&gt;".to_string(),
            '"' => "&quot;".to_string(),
            '\'' => "&apos;".to_string(),
            other => other.to_string(),
        })
        .collect()
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let magnitude = v.abs();
    if !(1e-3..1e5).contains(&magnitude) {
        return format!("{v:.2e}");
    }
    let s = format!("{v:.4}");
    let trimmed = s.trim_end_matches('0').trim_end_matches('.');
    trimmed.to_string()
}

fn render(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    mark: Mark,
) -> Result<String, PlotError> {
    let frame = Frame::over(series)?;
    let mut svg = format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
        ),
        w = WIDTH,
        h = HEIGHT
    );
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        escape_xml(title)
    ));

    // Axes.
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    svg.push_str(&format!(
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x1:.1}\" y2=\"{y0:.1}\" stroke=\"#333\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x0:.1}\" y2=\"{y1:.1}\" stroke=\"#333\"/>\n"
    ));

    // Five evenly spaced ticks per axis.
    for i in 0..5 {
        let t = i as f64 / 4.0;
        let xv = frame.x_min + t * (frame.x_max - frame.x_min);
        let xp = frame.x_to_px(xv);
        svg.push_str(&format!(
            "<line x1=\"{xp:.1}\" y1=\"{y0:.1}\" x2=\"{xp:.1}\" y2=\"{:.1}\" stroke=\"#333\"/>\n",
            y0 + 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{xp:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"11\">{}</text>\n",
            y0 + 18.0,
            fmt_tick(xv)
        ));
        let yv = frame.y_min + t * (frame.y_max - frame.y_min);
        let yp = frame.y_to_px(yv);
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{yp:.1}\" x2=\"{x0:.1}\" y2=\"{yp:.1}\" stroke=\"#333\"/>\n",
            x0 - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"11\">{}</text>\n",
            x0 - 8.0,
            yp + 4.0,
            fmt_tick(yv)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\">{}</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 10.0,
        escape_xml(x_label)
    ));
    svg.push_str(&format!(
        concat!(
            "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\" ",
            "transform=\"rotate(-90 16 {:.1})\">{}</text>\n"
        ),
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape_xml(y_label)
    ));

    // Data.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        match mark {
            Mark::Line => {
                let points: Vec<String> = s
                    .points
                    .iter()
                    .map(|&(x, y)| format!("{:.2},{:.2}", frame.x_to_px(x), frame.y_to_px(y)))
                    .collect();
                svg.push_str(&format!(
                    concat!(
                        "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" ",
                        "points=\"{}\"/>\n"
                    ),
                    color,
                    points.join(" ")
                ));
            }
            Mark::Point => {
                for &(x, y) in &s.points {
                    svg.push_str(&format!(
                        concat!(
                            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{}\" ",
                            "fill-opacity=\"0.7\"/>\n"
                        ),
                        frame.x_to_px(x),
                        frame.y_to_px(y),
                        color
                    ));
                }
            }
        }
    }

    // Legend, top-right inside the plot area.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let ly = MARGIN_TOP + 14.0 + 16.0 * i as f64;
        svg.push_str(&format!(
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n",
            x1 - 150.0,
            ly - 9.0,
            color
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{ly:.1}\" font-size=\"11\">{}</text>\n",
            x1 - 136.0,
            escape_xml(&s.label)
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossReport;

    fn step_record(epoch: usize, step: usize, recon: f64, kl: Option<f64>) -> StepRecord {
        StepRecord {
            epoch,
            step,
            losses: LossReport {
                recon,
                kl,
                tc: None,
                disc: None,
                cls_t: None,
                cls_p: None,
                adv_t: None,
                adv_p: None,
                sensitive: None,
                total: recon + kl.unwrap_or(0.0),
            },
        }
    }

    #[test]
    fn line_plot_renders_each_series_with_a_legend_entry() {
        let mut plot = LinePlot::new("t", "x", "y");
        plot.push_series("alpha", vec![(0.0, 1.0), (1.0, 2.0)]);
        plot.push_series("beta", vec![(0.0, 3.0), (1.0, 0.5)]);
        let svg = plot.to_svg().unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(">alpha</text>"));
        assert!(svg.contains(">beta</text>"));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn pixel_coordinates_follow_the_affine_mapping() {
        let mut plot = LinePlot::new("t", "x", "y");
        plot.push_series("s", vec![(0.0, 0.0), (5.0, 1.0), (10.0, 2.0)]);
        let frame = plot.frame().unwrap();
        // Hand check: x spans [0, 10] across 800 − 64 − 16 = 720 px from 64,
        // so x = 5 lands at 64 + 360 = 424. y spans [0, 2] over
        // 480 − 40 − 48 = 392 px with y = 2 at the top (40).
        assert!((frame.x_to_px(5.0) - 424.0).abs() < 1e-9);
        assert!((frame.y_to_px(2.0) - 40.0).abs() < 1e-9);
        assert!((frame.y_to_px(0.0) - 432.0).abs() < 1e-9);
        let svg = plot.to_svg().unwrap();
        assert!(svg.contains("points=\"64.00,432.00 424.00,236.00 784.00,40.00\""));
    }

    #[test]
    fn scatter_emits_one_marker_per_point() {
        let mut plot = ScatterPlot::new("t", "x", "y");
        plot.push_group("a", vec![(0.0, 0.0), (1.0, 1.0), (2.0, 0.5)]);
        plot.push_group("b", vec![(0.5, 0.25)]);
        let svg = plot.to_svg().unwrap();
        assert_eq!(svg.matches("<circle").count(), 4);
        // Two groups, two distinct colors.
        assert!(svg.contains(PALETTE[0]));
        assert!(svg.contains(PALETTE[1]));
    }

    #[test]
    fn empty_or_non_finite_input_is_rejected() {
        let plot = LinePlot::new("t", "x", "y");
        assert!(matches!(plot.to_svg(), Err(PlotError::Empty)));
        let mut only_empty_series = LinePlot::new("t", "x", "y");
        only_empty_series.push_series("s", vec![]);
        assert!(matches!(only_empty_series.to_svg(), Err(PlotError::Empty)));
        let mut bad = LinePlot::new("t", "x", "y");
        bad.push_series("s", vec![(0.0, f64::NAN)]);
        assert!(matches!(
            bad.to_svg(),
            Err(PlotError::NonFinite { index: 0, .. })
        ));
    }

    #[test]
    fn degenerate_ranges_render_without_nan() {
        let mut plot = ScatterPlot::new("t", "x", "y");
        plot.push_group("only", vec![(3.0, 3.0)]);
        let svg = plot.to_svg().unwrap();
        assert!(!svg.contains("NaN"));
        let frame = plot.frame().unwrap();
        assert!(frame.x_max > frame.x_min && frame.y_max > frame.y_min);
    }

    #[test]
    fn loss_curves_reproduce_log_scalars_exactly() {
        let records = vec![
            step_record(0, 0, 12.5, Some(0.75)),
            step_record(0, 1, 11.25, Some(0.5)),
            step_record(1, 0, 10.0, Some(0.25)),
        ];
        let plot = loss_curves(&records);
        let labels: Vec<&str> = plot.series.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, vec!["recon", "kl", "total"]);
        let recon = &plot.series[0];
        for (i, record) in records.iter().enumerate() {
            assert_eq!(recon.points[i], (i as f64, record.losses.recon));
        }
        let kl = &plot.series[1];
        assert_eq!(kl.points[2], (2.0, 0.25));
    }

    #[test]
    fn gated_components_do_not_appear() {
        let records = vec![step_record(0, 0, 1.0, None)];
        let plot = loss_curves(&records);
        let labels: Vec<&str> = plot.series.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, vec!["recon", "total"]);
    }

    #[test]
    fn fairness_curves_track_epochs() {
        let records = vec![
            ValRecord {
                epoch: 0,
                accuracy: 0.7,
                equalized_accuracy: 0.65,
                equal_opportunity: 0.1,
                equalized_odds: 0.2,
            },
            ValRecord {
                epoch: 1,
                accuracy: 0.75,
                equalized_accuracy: 0.7,
                equal_opportunity: 0.08,
                equalized_odds: 0.15,
            },
        ];
        let plot = fairness_curves(&records);
        assert_eq!(plot.series.len(), 4);
        assert_eq!(plot.series[0].points, vec![(0.0, 0.7), (1.0, 0.75)]);
        assert_eq!(plot.series[3].points, vec![(0.0, 0.2), (1.0, 0.15)]);
    }

    #[test]
    fn projection_scatter_groups_by_tag_in_first_seen_order() {
        let rows = vec![
            ("TAL".to_string(), 0.0, 1.0),
            ("PAL".to_string(), 1.0, 2.0),
            ("MAL".to_string(), 2.0, 3.0),
            ("TAL".to_string(), 0.5, 1.5),
        ];
        let plot = projection_scatter(&rows);
        let labels: Vec<&str> = plot.groups.iter().map(|g| g.label.as_str()).collect();
        assert_eq!(labels, vec!["TAL", "PAL", "MAL"]);
        assert_eq!(plot.groups[0].points.len(), 2);
    }

    #[test]
    fn titles_are_xml_escaped() {
        let mut plot = LinePlot::new("a < b & c", "x", "y");
        plot.push_series("s", vec![(0.0, 0.0), (1.0, 1.0)]);
        let svg = plot.to_svg().unwrap();
        assert!(svg.contains("a &lt; b &amp; c"));
        assert!(!svg.contains("a < b & c"));
    }

    #[test]
    fn write_svg_creates_a_nonempty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plots").join("curve.svg");
        let mut plot = LinePlot::new("t", "x", "y");
        plot.push_series("s", vec![(0.0, 0.0), (1.0, 1.0)]);
        plot.write_svg(&path).unwrap();
        let raw = std::fs::read_to_string(&path).unwrap();
        assert!(raw.len() > 200);
        assert!(raw.starts_with("<svg"));
    }
}
