//! Minimal standalone SVG emitters: line charts for loss curves and
//! FAR/FRR sweeps, scatter plots for feature projections. Coordinates are
//! rounded to fixed precision, so output bytes depend only on the data.

use std::fs;
use std::path::Path;

use crate::error::Result;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn from_points<'a>(points: impl Iterator<Item = &'a (f64, f64)>) -> Frame {
        let mut f = Frame { x_min: f64::INFINITY, x_max: f64::NEG_INFINITY, y_min: f64::INFINITY, y_max: f64::NEG_INFINITY };
        for (x, y) in points {
            f.x_min = f.x_min.min(*x);
            f.x_max = f.x_max.max(*x);
            f.y_min = f.y_min.min(*y);
            f.y_max = f.y_max.max(*y);
        }
        for (min, max) in [(&mut f.x_min, &mut f.x_max), (&mut f.y_min, &mut f.y_max)] {
            if !min.is_finite() || !max.is_finite() {
                *min = 0.0;
                *max = 1.0;
            }
            if *max - *min < 1e-12 {
                *min -= 0.5;
                *max += 0.5;
            }
        }
        f
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - 2.0 * MARGIN)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn document(body: &str, title: &str, xlabel: &str, ylabel: &str, frame: &Frame) -> String {
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"monospace\" font-size=\"15\" text-anchor=\"middle\">{title}</text>\n",
        WIDTH / 2.0
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    ));
    for (value, label_x) in [(frame.x_min, true), (frame.x_max, true)] {
        let _ = label_x;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            fmt(frame.sx(value)),
            HEIGHT - MARGIN + 18.0,
            fmt(value)
        ));
    }
    for value in [frame.y_min, frame.y_max] {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            MARGIN - 6.0,
            fmt(frame.sy(value) + 4.0),
            fmt(value)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\">{xlabel}</text>\n",
        WIDTH / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {y})\">{ylabel}</text>\n",
        HEIGHT / 2.0,
        y = HEIGHT / 2.0
    ));
    svg.push_str(body);
    svg.push_str("</svg>\n");
    svg
}

/// Multi-series line chart.
pub fn line_chart(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let frame = Frame::from_points(series.iter().flat_map(|(_, pts)| pts.iter()));
    let mut body = String::new();
    for (i, (name, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = points
            .iter()
            .map(|(x, y)| format!("{},{}", fmt(frame.sx(*x)), fmt(frame.sy(*y))))
            .collect();
        body.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            coords.join(" ")
        ));
        body.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" fill=\"{color}\">{name}</text>\n",
            WIDTH - MARGIN + 4.0,
            MARGIN + 16.0 * i as f64
        ));
    }
    document(&body, title, xlabel, ylabel, &frame)
}

/// Scatter plot with one color per class.
pub fn scatter(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    classes: &[String],
    points: &[(f64, f64, usize)],
) -> String {
    let plain: Vec<(f64, f64)> = points.iter().map(|(x, y, _)| (*x, *y)).collect();
    let frame = Frame::from_points(plain.iter());
    let mut body = String::new();
    for (x, y, class) in points {
        let color = PALETTE[class % PALETTE.len()];
        body.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"2.5\" fill=\"{color}\" fill-opacity=\"0.7\"/>\n",
            fmt(frame.sx(*x)),
            fmt(frame.sy(*y))
        ));
    }
    for (i, name) in classes.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        body.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" fill=\"{color}\">{name}</text>\n",
            WIDTH - MARGIN + 4.0,
            MARGIN + 16.0 * i as f64
        ));
    }
    document(&body, title, xlabel, ylabel, &frame)
}

pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    fs::write(path, svg)?;
    Ok(())
}
