//! Run outputs: one directory per run holding `config.json`, `results.csv`,
//! `distributions.json` and, on request, `plots/*.svg`. Everything is
//! emitted deterministically (sorted keys, shortest float formatting) so a
//! rerun with the same config and seed is byte-identical.

use qsd_core::montecarlo::EmpiricalDistribution;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub experiment: String,
    pub metric: String,
    pub time: Option<f64>,
    pub value: f64,
    pub stderr: Option<f64>,
    pub ess: Option<u64>,
}

/// Labeled distribution snapshot for `distributions.json`: either exact
/// probabilities or empirical counts normalized on write.
#[derive(Debug, Serialize)]
pub struct DistributionSnapshot {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    pub kind: &'static str,
    pub entries: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
}

impl DistributionSnapshot {
    pub fn empirical(label: impl Into<String>, time: Option<f64>, d: &EmpiricalDistribution) -> Self {
        let entries = d
            .counts()
            .iter()
            .map(|(k, &c)| (k.clone(), c as f64 / d.total() as f64))
            .collect();
        DistributionSnapshot {
            label: label.into(),
            time,
            kind: "empirical",
            entries,
            samples: Some(d.total()),
        }
    }

    pub fn exact(label: impl Into<String>, time: Option<f64>, probs: &BTreeMap<String, f64>) -> Self {
        DistributionSnapshot {
            label: label.into(),
            time,
            kind: "exact",
            entries: probs.clone(),
            samples: None,
        }
    }
}

/// Collects rows, snapshots and plots for one run, then writes the
/// directory in one go.
pub struct RunOutput {
    dir: PathBuf,
    config: ExperimentConfig,
    hash: String,
    plots_wanted: bool,
    records: Vec<ResultRecord>,
    snapshots: Vec<DistributionSnapshot>,
    plots: Vec<(String, String)>,
}

impl RunOutput {
    pub fn new(dir: &Path, config: &ExperimentConfig, plots_wanted: bool) -> Self {
        RunOutput {
            dir: dir.to_path_buf(),
            config: config.clone(),
            hash: config.hash_without_seed(),
            plots_wanted,
            records: Vec::new(),
            snapshots: Vec::new(),
            plots: Vec::new(),
        }
    }

    pub fn row(
        &mut self,
        metric: &str,
        time: Option<f64>,
        value: f64,
        stderr: Option<f64>,
        ess: Option<u64>,
    ) {
        self.records.push(ResultRecord {
            config_hash: self.hash.clone(),
            experiment: self.config.experiment.clone(),
            metric: metric.to_string(),
            time,
            value,
            stderr,
            ess,
        });
    }

    pub fn snapshot(&mut self, snapshot: DistributionSnapshot) {
        self.snapshots.push(snapshot);
    }

    /// Queue a static line plot. `series` pairs a legend label with its
    /// (x, y) points; emitted only when plots were requested.
    pub fn plot(&mut self, name: &str, title: &str, series: &[(String, Vec<(f64, f64)>)]) {
        if self.plots_wanted {
            self.plots.push((format!("{name}.svg"), render_svg(title, series)));
        }
    }

    pub fn write(self) -> Result<(), CliError> {
        let io = |e: std::io::Error| CliError::Runtime(format!("cannot write outputs: {e}"));
        std::fs::create_dir_all(&self.dir).map_err(io)?;
        let config_json =
            serde_json::to_string_pretty(&self.config).expect("config serializes");
        std::fs::write(self.dir.join("config.json"), config_json + "\n").map_err(io)?;

        let mut csv = csv::Writer::from_path(self.dir.join("results.csv"))
            .map_err(|e| CliError::Runtime(format!("cannot open results.csv: {e}")))?;
        for record in &self.records {
            csv.serialize(record)
                .map_err(|e| CliError::Runtime(format!("cannot write results.csv: {e}")))?;
        }
        csv.flush().map_err(io)?;

        let dist_json =
            serde_json::to_string_pretty(&self.snapshots).expect("snapshots serialize");
        std::fs::write(self.dir.join("distributions.json"), dist_json + "\n").map_err(io)?;

        if self.plots_wanted {
            let plot_dir = self.dir.join("plots");
            std::fs::create_dir_all(&plot_dir).map_err(io)?;
            for (name, svg) in &self.plots {
                std::fs::write(plot_dir.join(name), svg).map_err(io)?;
            }
        }
        Ok(())
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Minimal self-contained SVG line plot: axes, tick labels, legend, one
/// polyline per series.
fn render_svg(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (width, height) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 50.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;

    let points: Vec<(f64, f64)> = series.iter().flat_map(|(_, pts)| pts.iter().copied()).collect();
    let (mut x0, mut x1) = min_max(points.iter().map(|p| p.0));
    let (mut y0, mut y1) = min_max(points.iter().map(|p| p.1));
    if x0 == x1 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y0 == y1 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = (y1 - y0) * 0.05;
    y0 -= pad;
    y1 += pad;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| top + (y1 - y) / (y1 - y0) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        width / 2.0,
        escape(title)
    ));

    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let gx = sx(fx);
        let gy = sy(fy);
        svg.push_str(&format!(
            "<line x1=\"{gx:.1}\" y1=\"{:.1}\" x2=\"{gx:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>\n",
            top,
            top + plot_h
        ));
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{gy:.1}\" x2=\"{:.1}\" y2=\"{gy:.1}\" stroke=\"#ddd\"/>\n",
            left,
            left + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{gx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            top + plot_h + 18.0,
            tick(fx)
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            left - 8.0,
            gy + 4.0,
            tick(fy)
        ));
    }
    svg.push_str(&format!(
        "<rect x=\"{left}\" y=\"{top}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" \
         stroke=\"black\"/>\n"
    ));

    for (i, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            path.join(" ")
        ));
        for &(x, y) in pts {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{color}\"/>\n",
                sx(x),
                sy(y)
            ));
        }
        let ly = top + 16.0 + 16.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" \
             stroke-width=\"2\"/>\n",
            left + plot_w - 150.0,
            left + plot_w - 130.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
            left + plot_w - 124.0,
            ly + 4.0,
            escape(label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo.is_finite() && hi.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
