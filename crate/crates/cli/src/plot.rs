//! Converts a run directory's CSV files into long-format plot data.
//!
//! Every `.dat` file has a `#` header line, then one point per line: the quoted
//! series name followed by whitespace-separated numbers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde::Serialize;

use crate::output::{num, CsvFile};
use crate::run::WRONG_ANSWER_CAP;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotFile {
    pub file: String,
    pub source: String,
    pub columns: Vec<String>,
    pub x_label: String,
    pub y_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotManifest {
    pub run_dir: PathBuf,
    pub files: Vec<PlotFile>,
}

/// Points kept per CDF series.
const CDF_POINTS: usize = 1000;

struct Series {
    rows: Vec<(String, Vec<f64>)>,
}

impl Series {
    fn new() -> Self {
        Self { rows: Vec::new() }
    }

    fn push(&mut self, name: &str, values: Vec<f64>) {
        self.rows.push((name.to_string(), values));
    }

    fn render(&self, columns: &[String]) -> String {
        let mut out = format!("# {}\n", columns.join(" "));
        for (name, values) in &self.rows {
            let _ = write!(out, "\"{name}\"");
            for v in values {
                let _ = write!(out, " {}", num(*v));
            }
            out.push('\n');
        }
        out
    }
}

fn mean_by<K: Ord + Clone>(points: impl IntoIterator<Item = (K, f64)>) -> BTreeMap<K, f64> {
    let mut acc: BTreeMap<K, (f64, usize)> = BTreeMap::new();
    for (k, v) in points {
        let e = acc.entry(k).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

fn metrics(csv: &CsvFile, out: &mut Vec<(PlotFile, String)>) -> Result<()> {
    let (init, epoch, err, acc) =
        (csv.column("initializer")?, csv.column("epoch")?, csv.column("val_error")?, csv.column("val_accuracy")?);
    let mut points = Vec::new();
    for i in 0..csv.rows.len() {
        let e: usize = csv.rows[i][epoch].parse()?;
        points.push(((csv.rows[i][init].clone(), e), csv.f64_at(i, err)?));
    }
    let mut series = Series::new();
    for ((name, e), v) in mean_by(points) {
        series.push(&name, vec![e as f64, v]);
    }
    let columns = vec!["initializer".into(), "epoch".into(), "mean_val_error".into()];
    out.push((
        PlotFile {
            file: "error_vs_epoch.dat".into(),
            source: "metrics.csv".into(),
            x_label: "epoch".into(),
            y_label: "wrong answer probability".into(),
            columns: columns.clone(),
        },
        series.render(&columns),
    ));

    let path_columns: Vec<(usize, &String)> =
        csv.header.iter().enumerate().filter(|(_, h)| h.starts_with("path_fraction_")).collect();
    if !path_columns.is_empty() {
        let mut series = Series::new();
        for (c, name) in &path_columns {
            for i in 0..csv.rows.len() {
                if !csv.rows[i][*c].is_empty() {
                    series.push(name, vec![csv.f64_at(i, *c)?, csv.f64_at(i, acc)?]);
                }
            }
        }
        let columns = vec!["k".into(), "path_fraction".into(), "val_accuracy".into()];
        out.push((
            PlotFile {
                file: "paths_vs_accuracy.dat".into(),
                source: "metrics.csv".into(),
                x_label: "proportion of edges on complete paths".into(),
                y_label: "validation accuracy".into(),
                columns: columns.clone(),
            },
            series.render(&columns),
        ));
    }
    Ok(())
}

fn path_curve(csv: &CsvFile, out: &mut Vec<(PlotFile, String)>) -> Result<()> {
    let (init, k, mean, std) = (
        csv.column("initializer")?,
        csv.column("k")?,
        csv.column("mean_path_fraction")?,
        csv.column("std_path_fraction")?,
    );
    let mut series = Series::new();
    for i in 0..csv.rows.len() {
        series.push(&csv.rows[i][init], vec![csv.f64_at(i, k)?, csv.f64_at(i, mean)?, csv.f64_at(i, std)?]);
    }
    let columns = vec!["initializer".into(), "k".into(), "mean_path_fraction".into(), "std_path_fraction".into()];
    out.push((
        PlotFile {
            file: "path_curve.dat".into(),
            source: "path_curve.csv".into(),
            x_label: "remaining edges".into(),
            y_label: "proportion of edges on complete paths".into(),
            columns: columns.clone(),
        },
        series.render(&columns),
    ));
    Ok(())
}

fn param_study(csv: &CsvFile, out: &mut Vec<(PlotFile, String)>) -> Result<()> {
    let (n, s, w) = (csv.column("n_lightnings")?, csv.column("strength")?, csv.column("wrong_answer")?);
    let mut series = Series::new();
    for i in 0..csv.rows.len() {
        series.push("lightning", vec![csv.f64_at(i, n)?, csv.f64_at(i, s)?, csv.f64_at(i, w)?.min(WRONG_ANSWER_CAP)]);
    }
    let columns = vec!["series".into(), "n_lightnings".into(), "strength".into(), "wrong_answer_capped".into()];
    out.push((
        PlotFile {
            file: "param_study.dat".into(),
            source: "param_study.csv".into(),
            x_label: "number of lightnings".into(),
            y_label: "lightning strength".into(),
            columns: columns.clone(),
        },
        series.render(&columns),
    ));
    Ok(())
}

fn cdf(csv: &CsvFile, out: &mut Vec<(PlotFile, String)>) -> Result<()> {
    let (init, layer, w, f) =
        (csv.column("initializer")?, csv.column("layer")?, csv.column("abs_weight")?, csv.column("cumulative_fraction")?);
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for i in 0..csv.rows.len() {
        let name = format!("{}/{}", csv.rows[i][init], csv.rows[i][layer]);
        match groups.last_mut() {
            Some((last, idx)) if *last == name => idx.push(i),
            _ => groups.push((name, vec![i])),
        }
    }
    let mut series = Series::new();
    for (name, idx) in &groups {
        let step = idx.len().div_ceil(CDF_POINTS).max(1);
        for (j, &i) in idx.iter().enumerate() {
            if j % step == 0 || j + 1 == idx.len() {
                series.push(name, vec![csv.f64_at(i, w)?, csv.f64_at(i, f)?]);
            }
        }
    }
    let columns = vec!["initializer/layer".into(), "abs_weight".into(), "cumulative_fraction".into()];
    out.push((
        PlotFile {
            file: "cdf.dat".into(),
            source: "cdf.csv".into(),
            x_label: "absolute weight".into(),
            y_label: "cumulative fraction".into(),
            columns: columns.clone(),
        },
        series.render(&columns),
    ));
    Ok(())
}

fn prune_reinit(csv: &CsvFile, out: &mut Vec<(PlotFile, String)>) -> Result<()> {
    let (stage, fraction) = (csv.column("stage")?, csv.column("active_fraction")?);
    let metrics = ["change_over_all", "pearson_over_all", "accuracy_best"];
    let mut series = Series::new();
    for metric in metrics {
        let c = csv.column(metric)?;
        let points = (0..csv.rows.len())
            .filter(|&i| csv.rows[i][stage] == "retrained" && !csv.rows[i][c].is_empty())
            .map(|i| Ok((csv.rows[i][fraction].clone(), csv.f64_at(i, c)?)))
            .collect::<Result<Vec<_>>>()?;
        for (fr, v) in mean_by(points) {
            series.push(metric, vec![fr.parse()?, v]);
        }
    }
    let columns = vec!["metric".into(), "active_fraction".into(), "mean_over_repeats".into()];
    out.push((
        PlotFile {
            file: "prune_reinit.dat".into(),
            source: "prune_reinit.csv".into(),
            x_label: "active fraction".into(),
            y_label: "value".into(),
            columns: columns.clone(),
        },
        series.render(&columns),
    ));
    Ok(())
}

type Converter = fn(&CsvFile, &mut Vec<(PlotFile, String)>) -> Result<()>;

/// Writes `<run_dir>/plot/*.dat` and `plot.json`; fails when no known CSV is present.
pub fn cmd_plot(run_dir: &Path, out: Option<&Path>) -> Result<PlotManifest> {
    if !run_dir.is_dir() {
        bail!("run directory {} does not exist", run_dir.display());
    }
    let converters: [(&str, Converter); 5] = [
        ("metrics.csv", metrics),
        ("path_curve.csv", path_curve),
        ("param_study.csv", param_study),
        ("cdf.csv", cdf),
        ("prune_reinit.csv", prune_reinit),
    ];
    let mut produced = Vec::new();
    for (name, convert) in converters {
        let path = run_dir.join(name);
        if path.exists() {
            let csv = CsvFile::read(&path)?;
            convert(&csv, &mut produced).map_err(|e| e.context(format!("converting {}", path.display())))?;
        }
    }
    if produced.is_empty() {
        bail!("{} is not a run directory: no metrics, path-curve, param-study, cdf or prune-reinit CSV found", run_dir.display());
    }
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join("plot"));
    std::fs::create_dir_all(&out)?;
    let mut files = Vec::new();
    for (meta, body) in produced {
        std::fs::write(out.join(&meta.file), body)?;
        files.push(meta);
    }
    let manifest = PlotManifest { run_dir: run_dir.to_path_buf(), files };
    std::fs::write(out.join("plot.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}
