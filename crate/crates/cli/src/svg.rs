//! Dependency-free SVG line/scatter plots: linear or log axes, decade or
//! 1–2–5 ticks, markers, and a legend (scaling plots print the fitted
//! exponent there). Every rendered point's exact value lives in a CSV in
//! the same bundle; the SVG is presentation only.

const W: f64 = 640.0;
const H: f64 = 440.0;
const ML: f64 = 70.0; // left margin
const MR: f64 = 24.0;
const MT: f64 = 40.0;
const MB: f64 = 56.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub line: bool,
    pub markers: bool,
}

pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
    /// Extra legend-only lines (e.g. a fitted exponent).
    pub notes: Vec<String>,
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_x: false,
            log_y: false,
            series: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn log_log(mut self) -> Self {
        self.log_x = true;
        self.log_y = true;
        self
    }

    pub fn with_series(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    fn tx(&self, v: f64) -> f64 {
        if self.log_x {
            v.log10()
        } else {
            v
        }
    }

    fn ty(&self, v: f64) -> f64 {
        if self.log_y {
            v.log10()
        } else {
            v
        }
    }

    pub fn render(&self) -> String {
        let mut pts: Vec<(f64, f64)> = Vec::new();
        for s in &self.series {
            for &(x, y) in &s.points {
                if (self.log_x && x <= 0.0) || (self.log_y && y <= 0.0) {
                    continue;
                }
                let (x, y) = (self.tx(x), self.ty(y));
                if x.is_finite() && y.is_finite() {
                    pts.push((x, y));
                }
            }
        }
        let (x0, x1) = padded_range(pts.iter().map(|p| p.0));
        let (y0, y1) = padded_range(pts.iter().map(|p| p.1));
        let px = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
        let py = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);

        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
             viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
        ));
        out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        out.push_str(&format!(
            "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
            W / 2.0,
            esc(&self.title)
        ));

        // Axes frame.
        out.push_str(&format!(
            "<rect x=\"{ML}\" y=\"{MT}\" width=\"{}\" height=\"{}\" fill=\"none\" \
             stroke=\"#333\"/>\n",
            W - ML - MR,
            H - MT - MB
        ));

        // Ticks and grid.
        for t in ticks(x0, x1, self.log_x) {
            let x = px(t);
            out.push_str(&format!(
                "<line x1=\"{x:.2}\" y1=\"{MT}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#ddd\"/>\n",
                H - MB
            ));
            out.push_str(&format!(
                "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
                H - MB + 16.0,
                tick_label(t, self.log_x)
            ));
        }
        for t in ticks(y0, y1, self.log_y) {
            let y = py(t);
            out.push_str(&format!(
                "<line x1=\"{ML}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#ddd\"/>\n",
                W - MR
            ));
            out.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
                ML - 6.0,
                y + 4.0,
                tick_label(t, self.log_y)
            ));
        }

        // Axis labels.
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            ML + (W - ML - MR) / 2.0,
            H - 14.0,
            esc(&self.x_label)
        ));
        out.push_str(&format!(
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}\
             </text>\n",
            MT + (H - MT - MB) / 2.0,
            MT + (H - MT - MB) / 2.0,
            esc(&self.y_label)
        ));

        // Series.
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let mapped: Vec<(f64, f64)> = s
                .points
                .iter()
                .filter(|&&(x, y)| !(self.log_x && x <= 0.0) && !(self.log_y && y <= 0.0))
                .map(|&(x, y)| (px(self.tx(x)), py(self.ty(y))))
                .filter(|&(x, y)| x.is_finite() && y.is_finite())
                .collect();
            if s.line && mapped.len() > 1 {
                let path: Vec<String> = mapped.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                out.push_str(&format!(
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" \
                     stroke-width=\"1.5\"/>\n",
                    path.join(" ")
                ));
            }
            if s.markers {
                for (x, y) in &mapped {
                    out.push_str(&format!(
                        "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"{color}\"/>\n"
                    ));
                }
            }
        }

        // Legend (series labels plus notes).
        let mut row = 0usize;
        let lx = ML + 12.0;
        let ly = MT + 10.0;
        for (i, s) in self.series.iter().enumerate() {
            if s.label.is_empty() {
                continue;
            }
            let color = PALETTE[i % PALETTE.len()];
            let y = ly + row as f64 * 16.0;
            out.push_str(&format!(
                "<line x1=\"{lx}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{color}\" \
                 stroke-width=\"2\"/>\n",
                lx + 18.0
            ));
            out.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>\n",
                lx + 24.0,
                y + 4.0,
                esc(&s.label)
            ));
            row += 1;
        }
        for n in &self.notes {
            let y = ly + row as f64 * 16.0;
            out.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>\n",
                lx,
                y + 4.0,
                esc(n)
            ));
            row += 1;
        }

        out.push_str("</svg>\n");
        out
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Range with 5% padding; degenerate or empty input falls back to (0, 1).
fn padded_range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

/// Tick positions in transformed coordinates: whole decades for log axes,
/// 1–2–5 steps for linear ones.
fn ticks(lo: f64, hi: f64, log: bool) -> Vec<f64> {
    if log {
        let first = lo.ceil() as i64;
        let last = hi.floor() as i64;
        return (first..=last).map(|d| d as f64).collect();
    }
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        mag
    } else if norm < 3.5 {
        2.0 * mag
    } else if norm < 7.5 {
        5.0 * mag
    } else {
        10.0 * mag
    };
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(t);
        t += step;
    }
    out
}

fn tick_label(t: f64, log: bool) -> String {
    if log {
        format!("1e{}", t.round() as i64)
    } else if t == 0.0 {
        "0".into()
    } else if t.abs() >= 1e4 || t.abs() < 1e-3 {
        format!("{t:.0e}")
    } else {
        let s = format!("{t:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_a_well_formed_log_log_plot() {
        let plot = Plot::new("scaling", "N", "MSE")
            .log_log()
            .with_series(Series {
                label: "iPINN".into(),
                points: vec![(1e3, 1e-1), (1e4, 1e-2), (1e5, 1e-3)],
                line: true,
                markers: true,
            })
            .with_note("fitted ℓ = 2.00");
        let svg = plot.render();
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("fitted ℓ = 2.00"));
        assert!(svg.contains("1e-2"));
        assert_eq!(svg.matches("<circle").count(), 3);
    }

    #[test]
    fn linear_ticks_are_round_numbers() {
        let t = ticks(0.0, 10.0, false);
        assert!(t.contains(&0.0) && t.contains(&10.0));
        let t = ticks(-0.03, 0.07, false);
        assert!(t.len() >= 3 && t.len() <= 12);
    }

    #[test]
    fn degenerate_ranges_do_not_panic() {
        let plot = Plot::new("empty", "x", "y").with_series(Series {
            label: String::new(),
            points: vec![],
            line: true,
            markers: true,
        });
        assert!(plot.render().contains("</svg>"));
        let one = Plot::new("one", "x", "y").with_series(Series {
            label: "p".into(),
            points: vec![(2.0, 3.0)],
            line: true,
            markers: true,
        });
        assert!(one.render().contains("circle"));
    }
}
