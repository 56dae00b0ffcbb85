//! Minimal SVG emission for one-dimensional measures (bars) and curves
//! (polylines). No interactivity; a single static chart per run.

use qbass::measures::DiscreteMeasure;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 45.0;
const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

pub struct Plot {
    measures: Vec<(String, DiscreteMeasure)>,
    curves: Vec<(String, Vec<(f64, f64)>)>,
}

impl Plot {
    pub fn new() -> Self {
        Plot {
            measures: Vec::new(),
            curves: Vec::new(),
        }
    }

    pub fn measure(&mut self, label: &str, m: &DiscreteMeasure) -> &mut Self {
        self.measures.push((label.to_string(), m.clone()));
        self
    }

    pub fn curve(&mut self, label: &str, points: Vec<(f64, f64)>) -> &mut Self {
        self.curves.push((label.to_string(), points));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty() && self.curves.is_empty()
    }

    /// Render bars for measures and polylines for curves into one SVG.
    /// Bars use the left axis (weights), curves the right axis (values).
    pub fn render(&self) -> String {
        let mut xs: Vec<f64> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (_, m) in &self.measures {
            xs.extend(m.atoms().iter().map(|a| a[0]));
            weights.extend_from_slice(m.weights());
        }
        let mut curve_vals: Vec<f64> = Vec::new();
        for (_, pts) in &self.curves {
            xs.extend(pts.iter().map(|p| p.0));
            curve_vals.extend(pts.iter().map(|p| p.1));
        }
        let (x_lo, x_hi) = padded_range(&xs);
        let w_hi = weights.iter().copied().fold(1e-12, f64::max) * 1.1;
        let (c_lo, c_hi) = padded_range(&curve_vals);

        let sx = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo) * (WIDTH - 2.0 * MARGIN);
        let sy_bar = |w: f64| HEIGHT - MARGIN - w / w_hi * (HEIGHT - 2.0 * MARGIN);
        let sy_curve = |v: f64| HEIGHT - MARGIN - (v - c_lo) / (c_hi - c_lo) * (HEIGHT - 2.0 * MARGIN);

        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
             viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
        ));
        out.push_str(&format!(
            "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
        ));
        // Axes.
        out.push_str(&format!(
            "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"#444\"/>\n",
            m = MARGIN,
            b = HEIGHT - MARGIN,
            r = WIDTH - MARGIN
        ));
        out.push_str(&format!(
            "<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"#444\"/>\n",
            m = MARGIN,
            t = MARGIN,
            b = HEIGHT - MARGIN
        ));
        for (tick, label) in [(x_lo, format!("{x_lo:.2}")), (x_hi, format!("{x_hi:.2}"))] {
            out.push_str(&format!(
                "<text x=\"{x}\" y=\"{y}\" font-size=\"11\" text-anchor=\"middle\" fill=\"#444\">{label}</text>\n",
                x = sx(tick),
                y = HEIGHT - MARGIN + 16.0
            ));
        }

        let mut color_idx = 0usize;
        let mut legend_y = MARGIN - 24.0;
        for (label, m) in &self.measures {
            let color = COLORS[color_idx % COLORS.len()];
            color_idx += 1;
            let half = 2.5 + color_idx as f64;
            for (a, &w) in m.atoms().iter().zip(m.weights()) {
                let x = sx(a[0]);
                let y = sy_bar(w);
                out.push_str(&format!(
                    "<rect x=\"{:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" \
                     fill=\"{color}\" fill-opacity=\"0.55\"/>\n",
                    x - half,
                    2.0 * half,
                    HEIGHT - MARGIN - y
                ));
            }
            legend_y += 14.0;
            out.push_str(&format!(
                "<text x=\"{x}\" y=\"{legend_y}\" font-size=\"12\" fill=\"{color}\">{label}</text>\n",
                x = WIDTH - MARGIN - 120.0
            ));
        }
        for (label, pts) in &self.curves {
            let color = COLORS[color_idx % COLORS.len()];
            color_idx += 1;
            let path: Vec<String> = pts
                .iter()
                .map(|&(x, v)| format!("{:.2},{:.2}", sx(x), sy_curve(v)))
                .collect();
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                path.join(" ")
            ));
            legend_y += 14.0;
            out.push_str(&format!(
                "<text x=\"{x}\" y=\"{legend_y}\" font-size=\"12\" fill=\"{color}\">{label}</text>\n",
                x = WIDTH - MARGIN - 120.0
            ));
        }
        out.push_str("</svg>\n");
        out
    }
}

fn padded_range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let pad = (hi - lo).max(1e-9) * 0.08;
    (lo - pad, hi + pad)
}
