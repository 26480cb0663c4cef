//! Minimal SVG plot emitters: line charts, frequency polygons, balance dot
//! plots and CDF overlays. Output is plain text SVG so runs diff cleanly.

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

const PALETTE: [&str; 6] = ["#1f6fb2", "#d1495b", "#3f7d20", "#8c5383", "#c77d2c", "#4a4a4a"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn fmt(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (0.001..100000.0).contains(&a) {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.3e}")
    }
}

struct Scale {
    min: f64,
    max: f64,
    lo_px: f64,
    hi_px: f64,
}

impl Scale {
    fn map(&self, v: f64) -> f64 {
        if self.max == self.min {
            return 0.5 * (self.lo_px + self.hi_px);
        }
        self.lo_px + (v - self.min) / (self.max - self.min) * (self.hi_px - self.lo_px)
    }
}

fn pad_range(min: f64, max: f64) -> (f64, f64) {
    if min == max {
        (min - 0.5, max + 0.5)
    } else {
        let pad = 0.05 * (max - min);
        (min - pad, max + pad)
    }
}

pub struct Plot {
    title: String,
    x_label: String,
    y_label: String,
    body: Vec<String>,
    timestamp: Option<String>,
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Plot {
        Plot {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            body: Vec::new(),
            timestamp: None,
        }
    }

    /// Embed a generation timestamp comment (suppressed in deterministic
    /// runs).
    pub fn with_timestamp(mut self, stamp: &str) -> Plot {
        self.timestamp = Some(stamp.to_string());
        self
    }

    fn axes(&mut self, xs: &Scale, ys: &Scale, x_ticks: &[f64], y_ticks: &[f64]) {
        let x0 = xs.lo_px;
        let x1 = xs.hi_px;
        let y0 = ys.lo_px;
        let y1 = ys.hi_px;
        self.body.push(format!(
            "<line x1='{x0}' y1='{y0}' x2='{x1}' y2='{y0}' stroke='#333' stroke-width='1'/>"
        ));
        self.body.push(format!(
            "<line x1='{x0}' y1='{y0}' x2='{x0}' y2='{y1}' stroke='#333' stroke-width='1'/>"
        ));
        for &t in x_ticks {
            let px = xs.map(t);
            self.body.push(format!(
                "<line x1='{px}' y1='{y0}' x2='{px}' y2='{}' stroke='#333' stroke-width='1'/>",
                y0 + 4.0
            ));
            self.body.push(format!(
                "<text x='{px}' y='{}' font-size='11' text-anchor='middle'>{}</text>",
                y0 + 18.0,
                fmt(t)
            ));
        }
        for &t in y_ticks {
            let py = ys.map(t);
            self.body.push(format!(
                "<line x1='{}' y1='{py}' x2='{x0}' y2='{py}' stroke='#333' stroke-width='1'/>",
                x0 - 4.0
            ));
            self.body.push(format!(
                "<text x='{}' y='{}' font-size='11' text-anchor='end'>{}</text>",
                x0 - 7.0,
                py + 4.0,
                fmt(t)
            ));
        }
    }

    fn legend(&mut self, labels: &[String]) {
        for (i, label) in labels.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let y = MARGIN_T + 14.0 + 18.0 * i as f64;
            let x = WIDTH - MARGIN_R + 16.0;
            self.body.push(format!(
                "<line x1='{x}' y1='{y}' x2='{}' y2='{y}' stroke='{color}' stroke-width='2'/>",
                x + 18.0
            ));
            self.body.push(format!(
                "<text x='{}' y='{}' font-size='11'>{}</text>",
                x + 23.0,
                y + 4.0,
                escape(label)
            ));
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns='http://www.w3.org/2000/svg' width='{WIDTH}' height='{HEIGHT}' viewBox='0 0 {WIDTH} {HEIGHT}'>\n"
        ));
        if let Some(stamp) = &self.timestamp {
            out.push_str(&format!("<!-- generated {stamp} -->\n"));
        }
        out.push_str("<rect width='100%' height='100%' fill='white'/>\n");
        out.push_str(&format!(
            "<text x='{}' y='22' font-size='15' text-anchor='middle' font-weight='bold'>{}</text>\n",
            WIDTH / 2.0,
            escape(&self.title)
        ));
        out.push_str(&format!(
            "<text x='{}' y='{}' font-size='12' text-anchor='middle'>{}</text>\n",
            (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        ));
        out.push_str(&format!(
            "<text x='16' y='{}' font-size='12' text-anchor='middle' transform='rotate(-90 16 {})'>{}</text>\n",
            (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
            (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
            escape(&self.y_label)
        ));
        for el in &self.body {
            out.push_str(el);
            out.push('\n');
        }
        out.push_str("</svg>\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn ticks(min: f64, max: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| min + (max - min) * i as f64 / n as f64).collect()
}

/// Multi-series line chart over a shared numeric x axis.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Plot {
    let mut plot = Plot::new(title, x_label, y_label);
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    if all.is_empty() {
        return plot;
    }
    let (x_min, x_max) =
        pad_range(all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min), all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max));
    let (y_min, y_max) =
        pad_range(all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min), all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max));
    let xs = Scale { min: x_min, max: x_max, lo_px: MARGIN_L, hi_px: WIDTH - MARGIN_R };
    let ys = Scale { min: y_min, max: y_max, lo_px: HEIGHT - MARGIN_B, hi_px: MARGIN_T };
    plot.axes(&xs, &ys, &ticks(x_min, x_max, 6), &ticks(y_min, y_max, 6));
    if y_min < 0.0 && y_max > 0.0 {
        let py = ys.map(0.0);
        plot.body.push(format!(
            "<line x1='{}' y1='{py}' x2='{}' y2='{py}' stroke='#999' stroke-width='1' stroke-dasharray='4 3'/>",
            xs.lo_px, xs.hi_px
        ));
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> =
            s.points.iter().map(|&(x, y)| format!("{},{}", xs.map(x), ys.map(y))).collect();
        plot.body.push(format!(
            "<polyline points='{}' fill='none' stroke='{color}' stroke-width='2'/>",
            coords.join(" ")
        ));
    }
    plot.legend(&series.iter().map(|s| s.label.clone()).collect::<Vec<_>>());
    plot
}

/// Frequency polygons (histogram outlines) of one or more samples.
pub fn frequency_polygon(title: &str, x_label: &str, samples: &[(String, Vec<f64>)], bins: usize) -> Plot {
    let all: Vec<f64> = samples.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    if all.is_empty() {
        return Plot::new(title, x_label, "frequency");
    }
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let width = (hi - lo) / bins as f64;
    let series: Vec<Series> = samples
        .iter()
        .map(|(label, values)| {
            let mut counts = vec![0.0; bins];
            for &v in values {
                let mut b = ((v - lo) / width) as usize;
                if b >= bins {
                    b = bins - 1;
                }
                counts[b] += 1.0;
            }
            let total = values.len().max(1) as f64;
            let points = counts
                .iter()
                .enumerate()
                .map(|(b, c)| (lo + (b as f64 + 0.5) * width, c / total))
                .collect();
            Series { label: label.clone(), points }
        })
        .collect();
    line_chart(title, x_label, "relative frequency", &series)
}

/// Standardized-bias dot plot with guides at +-5%.
pub fn balance_dot_plot(title: &str, rows: &[(String, f64, f64)]) -> Plot {
    let mut plot = Plot::new(title, "standardized bias (%)", "");
    if rows.is_empty() {
        return plot;
    }
    let max_abs = rows
        .iter()
        .flat_map(|r| [r.1.abs(), r.2.abs()])
        .fold(6.0f64, f64::max)
        * 1.1;
    let xs = Scale { min: -max_abs, max: max_abs, lo_px: MARGIN_L + 90.0, hi_px: WIDTH - MARGIN_R };
    let row_height =
        ((HEIGHT - MARGIN_T - MARGIN_B) / rows.len() as f64).min(26.0);
    // guides
    for guide in [-5.0, 0.0, 5.0] {
        let px = xs.map(guide);
        let dash = if guide == 0.0 { "" } else { " stroke-dasharray='5 3'" };
        plot.body.push(format!(
            "<line x1='{px}' y1='{MARGIN_T}' x2='{px}' y2='{}' stroke='#888' stroke-width='1'{dash}/>",
            HEIGHT - MARGIN_B
        ));
        plot.body.push(format!(
            "<text x='{px}' y='{}' font-size='11' text-anchor='middle'>{}</text>",
            HEIGHT - MARGIN_B + 16.0,
            fmt(guide)
        ));
    }
    for (i, (name, before, after)) in rows.iter().enumerate() {
        let y = MARGIN_T + row_height * (i as f64 + 0.5);
        plot.body.push(format!(
            "<text x='{}' y='{}' font-size='10' text-anchor='end'>{}</text>",
            MARGIN_L + 82.0,
            y + 3.0,
            escape(name)
        ));
        plot.body.push(format!(
            "<circle cx='{}' cy='{y}' r='4' fill='none' stroke='{}' stroke-width='1.5'/>",
            xs.map(*before),
            PALETTE[0]
        ));
        plot.body.push(format!(
            "<circle cx='{}' cy='{y}' r='4' fill='{}'/>",
            xs.map(*after),
            PALETTE[1]
        ));
    }
    plot.legend(&["before matching".to_string(), "after matching".to_string()]);
    plot
}

/// Overlaid empirical CDF step curves.
pub fn cdf_overlay(title: &str, x_label: &str, curves: &[(String, Vec<f64>, Vec<f64>)]) -> Plot {
    let series: Vec<Series> = curves
        .iter()
        .map(|(label, values, probs)| {
            let mut points = Vec::with_capacity(values.len() * 2);
            let mut prev = 0.0;
            for (v, p) in values.iter().zip(probs) {
                points.push((*v, prev));
                points.push((*v, *p));
                prev = *p;
            }
            Series { label: label.clone(), points }
        })
        .collect();
    line_chart(title, x_label, "cumulative probability", &series)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_valid_svg_skeleton() {
        let plot = line_chart(
            "demo",
            "x",
            "y",
            &[Series { label: "a".into(), points: vec![(0.0, 0.0), (1.0, 2.0)] }],
        );
        let svg = plot.render();
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(svg.contains("polyline"));
        assert!(!svg.contains("generated"));
    }

    #[test]
    fn timestamp_comment_is_optional() {
        let svg = Plot::new("t", "x", "y").with_timestamp("2020-01-01T00:00:00Z").render();
        assert!(svg.contains("<!-- generated 2020-01-01T00:00:00Z -->"));
    }

    #[test]
    fn balance_plot_has_guides() {
        let plot = balance_dot_plot("balance", &[("age".into(), 12.0, 1.0)]);
        let svg = plot.render();
        assert!(svg.matches("stroke-dasharray='5 3'").count() >= 2);
    }
}
