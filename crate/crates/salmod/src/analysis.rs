//! Result aggregation: Pearson correlation, the map-quality sweep that pairs
//! NSS against downstream accuracy, cross-variant ablation tables, and small
//! self-contained SVG plots.

use crate::data::{fixation_seed, Dataset, SplitPlan, MAX_FIXATIONS};
use crate::error::{Error, Result};
use crate::model::NetworkConfig;
use crate::saliency::{attach_maps, sample_fixations, nss, MapSource, SaliencyMap};
use crate::train::{scarce_protocol, Hyperparams, ProtocolOptions};

/// Pearson product-moment correlation. Needs at least two points and
/// nonzero variance on both axes.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::data(format!(
            "correlation inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::data(format!(
            "correlation needs at least 2 points, got {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::data(
            "correlation is undefined for zero-variance input".to_string(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone)]
pub struct CorrelationPoint {
    pub quality: f64,
    /// Mean NSS of the quality-q oracle map against the test-split fixations.
    pub mean_nss: f64,
    /// Mean test accuracy over seeds when training with those maps.
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct CorrelationReport {
    pub points: Vec<CorrelationPoint>,
    /// Pearson correlation between mean NSS and mean accuracy across levels.
    pub pearson: f64,
}

impl CorrelationReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("quality,nss,accuracy\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.quality, p.mean_nss, p.mean_accuracy));
        }
        out
    }
}

/// Sweep oracle map quality: for each level, attach quality-q maps, score
/// them with NSS on the test split, train the fusion model at the given k
/// over the usual seeds, and correlate map quality's NSS with accuracy.
pub fn correlation_study(
    dataset: &Dataset,
    plan: &SplitPlan,
    config: &NetworkConfig,
    hyper: &Hyperparams,
    k: usize,
    qualities: &[f64],
    n_seeds: usize,
    options: &ProtocolOptions,
) -> Result<CorrelationReport> {
    if qualities.len() < 3 {
        return Err(Error::config(format!(
            "a correlation sweep needs at least 3 quality levels, got {}",
            qualities.len()
        )));
    }
    if !config.variant.needs_saliency() {
        return Err(Error::config(
            "the correlation sweep trains a saliency-consuming variant; baseline has no map input"
                .to_string(),
        ));
    }
    let mut points = Vec::with_capacity(qualities.len());
    for &q in qualities {
        let mut dq = dataset.clone();
        attach_maps(&mut dq, &MapSource::Oracle { quality: q })?;
        let mut nss_sum = 0.0;
        for &id in &plan.test {
            let sample = &dq.samples[id];
            let map = SaliencyMap::from_gray(sample.saliency.as_ref().expect("just attached"));
            let fixations = sample_fixations(
                &sample.mask,
                MAX_FIXATIONS,
                fixation_seed(dq.spec.seed, sample.id),
            );
            nss_sum += nss(&map, &fixations)?;
        }
        let mean_nss = nss_sum / plan.test.len() as f64;
        let report = scarce_protocol(&dq, plan, config, hyper, &[k], n_seeds, options)?;
        let (mean_accuracy, _) = report.mean_std(k);
        points.push(CorrelationPoint {
            quality: q,
            mean_nss,
            mean_accuracy,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.mean_nss).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_accuracy).collect();
    let pearson = pearson(&xs, &ys)?;
    Ok(CorrelationReport { points, pearson })
}

/// Rows of named runs against a shared k grid, with a trailing AVG column
/// (mean of the per-k means). Row order follows the input.
pub fn ablation_table(rows: &[(String, crate::train::RunReport)]) -> Result<String> {
    let first = rows
        .first()
        .ok_or_else(|| Error::config("ablation table needs at least one run".to_string()))?;
    for (name, report) in rows {
        if report.k_list != first.1.k_list {
            return Err(Error::config(format!(
                "run '{name}' uses k grid {:?}, expected {:?}",
                report.k_list, first.1.k_list
            )));
        }
    }
    let mut out = String::from("variant");
    for &k in &first.1.k_list {
        out.push_str(&format!(",k={}", first.1.k_label(k)));
    }
    out.push_str(",AVG\n");
    for (name, report) in rows {
        out.push_str(name);
        let mut sum = 0.0;
        for &k in &report.k_list {
            let (mean, _) = report.mean_std(k);
            out.push_str(&format!(",{mean:.2}"));
            sum += mean;
        }
        out.push_str(&format!(",{:.2}\n", sum / report.k_list.len() as f64));
    }
    Ok(out)
}

// ---- SVG plotting ----

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 480.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 52.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

struct Axes {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Axes {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Axes {
        let mut x_min = f64::INFINITY;
        let mut x_max = f64::NEG_INFINITY;
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for (x, y) in points {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
        if !x_min.is_finite() {
            (x_min, x_max, y_min, y_max) = (0.0, 1.0, 0.0, 1.0);
        }
        // degenerate ranges get unit padding so projection stays finite
        if x_max - x_min < 1e-12 {
            x_min -= 0.5;
            x_max += 0.5;
        }
        if y_max - y_min < 1e-12 {
            y_min -= 0.5;
            y_max += 0.5;
        }
        let pad_x = 0.05 * (x_max - x_min);
        let pad_y = 0.05 * (y_max - y_min);
        Axes {
            x_min: x_min - pad_x,
            x_max: x_max + pad_x,
            y_min: y_min - pad_y,
            y_max: y_max + pad_y,
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (PLOT_W - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        PLOT_H - MARGIN_B
            - (y - self.y_min) / (self.y_max - self.y_min) * (PLOT_H - MARGIN_T - MARGIN_B)
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.trunc() {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2}")
    }
}

fn plot_frame(out: &mut String, axes: &Axes, title: &str, x_label: &str, y_label: &str) {
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" viewBox=\"0 0 {PLOT_W} {PLOT_H}\">\n"
    ));
    out.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" fill=\"white\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>\n",
        PLOT_W / 2.0,
        xml_escape(title)
    ));
    // axes
    let x0 = MARGIN_L;
    let x1 = PLOT_W - MARGIN_R;
    let y0 = PLOT_H - MARGIN_B;
    let y1 = MARGIN_T;
    out.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n"
    ));
    out.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let vx = axes.x_min + t * (axes.x_max - axes.x_min);
        let vy = axes.y_min + t * (axes.y_max - axes.y_min);
        let px = axes.px(vx);
        let py = axes.py(vy);
        out.push_str(&format!(
            "<line x1=\"{px}\" y1=\"{y0}\" x2=\"{px}\" y2=\"{}\" stroke=\"black\"/>\n",
            y0 + 4.0
        ));
        out.push_str(&format!(
            "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            y0 + 18.0,
            fmt_tick(vx)
        ));
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{x0}\" y2=\"{py}\" stroke=\"black\"/>\n",
            x0 - 4.0
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            x0 - 8.0,
            py + 4.0,
            fmt_tick(vy)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
        (x0 + x1) / 2.0,
        PLOT_H - 12.0,
        xml_escape(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        xml_escape(y_label)
    ));
}

/// Multi-series line plot with a legend; one polyline plus point markers per
/// series.
pub fn line_plot_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let axes = Axes::fit(series.iter().flat_map(|(_, pts)| pts.iter().copied()));
    let mut out = String::new();
    plot_frame(&mut out, &axes, title, x_label, y_label);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if pts.len() > 1 {
            let coords: Vec<String> = pts
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", axes.px(x), axes.py(y)))
                .collect();
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                coords.join(" ")
            ));
        }
        for &(x, y) in pts {
            out.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                axes.px(x),
                axes.py(y)
            ));
        }
        let ly = MARGIN_T + 16.0 * i as f64;
        out.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n",
            PLOT_W - MARGIN_R - 150.0,
            ly
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            PLOT_W - MARGIN_R - 136.0,
            ly + 9.0,
            xml_escape(name)
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Scatter plot with a least-squares fitted line through the points.
pub fn scatter_fit_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    points: &[(f64, f64, String)],
) -> String {
    let mut out = scatter_plot_svg(title, x_label, y_label, points);
    if points.len() >= 2 {
        let axes = Axes::fit(points.iter().map(|&(x, y, _)| (x, y)));
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        if sxx > 0.0 {
            let slope = sxy / sxx;
            let (x0, x1) = (axes.x_min, axes.x_max);
            let line = format!(
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#888888\" stroke-dasharray=\"5,4\"/>\n</svg>\n",
                axes.px(x0),
                axes.py(my + slope * (x0 - mx)),
                axes.px(x1),
                axes.py(my + slope * (x1 - mx)),
            );
            out = out.replace("</svg>\n", &line);
        }
    }
    out
}

/// Scatter plot with one annotated point per entry.
pub fn scatter_plot_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    points: &[(f64, f64, String)],
) -> String {
    let axes = Axes::fit(points.iter().map(|&(x, y, _)| (x, y)));
    let mut out = String::new();
    plot_frame(&mut out, &axes, title, x_label, y_label);
    for (i, (x, y, label)) in points.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        out.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{color}\"/>\n",
            axes.px(*x),
            axes.py(*y)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            axes.px(*x) + 6.0,
            axes.py(*y) - 6.0,
            xml_escape(label)
        ));
    }
    out.push_str("</svg>\n");
    out
}
