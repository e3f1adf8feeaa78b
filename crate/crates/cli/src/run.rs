//! Experiment commands. Each returns its in-memory results and writes its run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lightnet::analysis::{self, CdfSeries, GapCriteria, MassGap, PathCurve, PathTracker};
use lightnet::data::{self, Dataset};
use lightnet::graph::{self, SparseGraphView};
use lightnet::init::{InitKind, InitializerSpec};
use lightnet::nn::{self, DenseNetwork, EpochHook, ExperimentRecord, NetworkSnapshot, TrainConfig};
use rayon::prelude::*;

use crate::config::{DataConfig, ExperimentConfig, ExperimentKind};
use crate::output::{column_name, num, now, opt_num, RunDir, Table};

pub fn load_data(cfg: &DataConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = match &cfg.idx_dir {
        Some(dir) => data::load_idx_dir(dir).with_context(|| format!("loading IDX files from {}", dir.display()))?,
        None => {
            let cache = cfg.cache_dir.clone().unwrap_or_else(data::default_cache_dir);
            data::fetch_or_load(&cache, cfg.offline).context("loading MNIST")?
        }
    };
    let train = match cfg.train_limit {
        Some(n) => train.head(n),
        None => train,
    };
    let test = match cfg.test_limit {
        Some(n) => test.head(n),
        None => test,
    };
    Ok((train, test))
}

/// One trained network with its per-epoch history.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub initializer: String,
    pub repeat: usize,
    pub seed: u64,
    pub net: DenseNetwork,
    pub records: Vec<ExperimentRecord>,
    /// Complete-path fractions before the first update.
    pub initial_paths: BTreeMap<usize, f64>,
}

impl TrainedRun {
    pub fn best_accuracy(&self) -> f64 {
        self.records.iter().map(|r| r.val_accuracy).fold(f64::NAN, f64::max)
    }

    pub fn final_accuracy(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.val_accuracy)
    }

    pub fn error_at(&self, epoch: usize) -> Option<f64> {
        self.records.iter().find(|r| r.epoch == epoch).map(ExperimentRecord::val_error)
    }
}

/// Trains `net` with the run seed driving the shuffle.
pub fn train_network(
    mut net: DenseNetwork,
    training: &TrainConfig,
    seed: u64,
    path_k: &[usize],
    (train, test): (&Dataset, &Dataset),
) -> Result<(DenseNetwork, Vec<ExperimentRecord>, BTreeMap<usize, f64>)> {
    let config = TrainConfig { rng_seed: seed, ..training.clone() };
    let mut tracker = PathTracker::new(path_k.to_vec());
    let records = if path_k.is_empty() {
        nn::train(&mut net, train, test, &config, &mut [])?
    } else {
        nn::train(&mut net, train, test, &config, &mut [&mut tracker as &mut dyn EpochHook])?
    };
    Ok((net, records, tracker.initial))
}

pub fn train_one(
    sizes: &[usize],
    init: &InitializerSpec,
    repeat: usize,
    seed: u64,
    training: &TrainConfig,
    path_k: &[usize],
    data: (&Dataset, &Dataset),
) -> Result<TrainedRun> {
    let spec = init.with_seed(seed);
    let net = spec.build_network(sizes)?;
    let (net, records, initial_paths) = train_network(net, training, seed, path_k, data)?;
    Ok(TrainedRun { initializer: spec.kind.label(), repeat, seed, net, records, initial_paths })
}

fn seeds(config: &ExperimentConfig) -> Vec<u64> {
    (0..config.repeats as u64).map(|r| config.seed + r).collect()
}

/// Every (initializer, repeat) pair, trained in parallel; results keep that order.
pub fn train_all(config: &ExperimentConfig, data: (&Dataset, &Dataset)) -> Result<Vec<TrainedRun>> {
    let jobs: Vec<(&InitializerSpec, usize)> =
        config.initializers.iter().flat_map(|i| (0..config.repeats).map(move |r| (i, r))).collect();
    jobs.par_iter()
        .map(|&(init, r)| {
            train_one(
                &config.architecture,
                init,
                r,
                config.seed + r as u64,
                &config.training,
                &config.path_tracking,
                data,
            )
        })
        .collect()
}

fn metrics_table(runs: &[TrainedRun], path_k: &[usize]) -> Table {
    let mut columns: Vec<String> = [
        "initializer",
        "repeat",
        "seed",
        "epoch",
        "train_loss",
        "train_accuracy",
        "val_accuracy",
        "val_error",
    ]
    .map(String::from)
    .to_vec();
    columns.extend(path_k.iter().map(|k| format!("path_fraction_{k}")));
    let mut table = Table::new(columns);
    for run in runs {
        for rec in &run.records {
            let mut row = vec![
                run.initializer.clone(),
                run.repeat.to_string(),
                run.seed.to_string(),
                rec.epoch.to_string(),
                num(rec.train_loss),
                num(rec.train_accuracy),
                num(rec.val_accuracy),
                num(rec.val_error()),
            ];
            row.extend(path_k.iter().map(|&k| opt_num(rec.path_fraction(k))));
            table.push(row);
        }
    }
    table
}

fn timings_table(runs: &[TrainedRun]) -> Table {
    let mut table = Table::new(["initializer", "repeat", "epoch", "wall_time_s"]);
    for run in runs {
        for rec in &run.records {
            table.push(vec![run.initializer.clone(), run.repeat.to_string(), rec.epoch.to_string(), num(rec.wall_time_s)]);
        }
    }
    table
}

fn initial_paths_table(runs: &[TrainedRun]) -> Table {
    let mut table = Table::new(["initializer", "repeat", "k", "path_fraction"]);
    for run in runs {
        for (k, f) in &run.initial_paths {
            table.push(vec![run.initializer.clone(), run.repeat.to_string(), k.to_string(), num(*f)]);
        }
    }
    table
}

fn write_training(dir: &mut RunDir, runs: &[TrainedRun], path_k: &[usize]) -> Result<()> {
    dir.table("metrics.csv", &metrics_table(runs, path_k))?;
    dir.table("timings.csv", &timings_table(runs))?;
    if !path_k.is_empty() {
        dir.table("initial_paths.csv", &initial_paths_table(runs))?;
    }
    for run in runs {
        let name = format!("weights/{}-r{}.json", run.initializer, run.repeat);
        dir.json(&name, &NetworkSnapshot::from(&run.net))?;
    }
    Ok(())
}

fn expect_kind(config: &ExperimentConfig, command: &str) -> Result<()> {
    if config.experiment.command() != command {
        bail!("config describes a {} experiment, not {command}", config.experiment.command());
    }
    config.validate()
}

pub struct TrainOutcome {
    pub dir: PathBuf,
    pub runs: Vec<TrainedRun>,
}

pub fn cmd_train(config: &ExperimentConfig, out: &Path) -> Result<TrainOutcome> {
    expect_kind(config, "train")?;
    let started = now();
    let (train, test) = load_data(&config.data)?;
    let runs = train_all(config, (&train, &test))?;
    let mut dir = RunDir::create(out)?;
    write_training(&mut dir, &runs, &config.path_tracking)?;
    let dir = dir.finish("train", config, seeds(config), started)?;
    Ok(TrainOutcome { dir, runs })
}

/// One pruned child of a trained parent.
#[derive(Debug, Clone)]
pub struct ChildResult {
    pub active_fraction: f64,
    pub view: SparseGraphView,
    /// Parent graph against the freshly reinitialized child.
    pub before: analysis::ChangeRateReport,
    /// Parent graph against the retrained child.
    pub after: analysis::ChangeRateReport,
    pub child: TrainedRun,
}

#[derive(Debug, Clone)]
pub struct PruneReinitResult {
    pub parent: TrainedRun,
    pub children: Vec<ChildResult>,
}

/// Prunes `parent` to each active fraction, reinitializes and retrains with the parent's setup.
pub fn prune_reinit_children(
    parent: &TrainedRun,
    fractions: &[f64],
    magnitude: f64,
    training: &TrainConfig,
    data: (&Dataset, &Dataset),
) -> Result<Vec<ChildResult>> {
    fractions
        .par_iter()
        .map(|&fraction| {
            let view = graph::categorize_fraction(&parent.net, fraction)?;
            let reinit = graph::reinit_from_view(&view, magnitude)?;
            let before = analysis::compare_parent_child(&view, &reinit)?;
            let (net, records, initial_paths) = train_network(reinit, training, parent.seed, &[], data)?;
            let mut after = analysis::compare_parent_child(&view, &net)?;
            let child = TrainedRun {
                initializer: format!("child-{fraction}"),
                repeat: parent.repeat,
                seed: parent.seed,
                net,
                records,
                initial_paths,
            };
            after.child_accuracy = Some(child.best_accuracy());
            Ok(ChildResult { active_fraction: fraction, view, before, after, child })
        })
        .collect()
}

fn prune_table(results: &[PruneReinitResult]) -> Table {
    let names: Vec<String> = results[0].parent.net.layer_names().to_vec();
    let mut columns: Vec<String> =
        ["repeat", "seed", "active_fraction", "stage", "threshold", "active_edges"].map(String::from).to_vec();
    columns.extend(names.iter().map(|n| format!("change_{}", column_name(n))));
    columns.push("change_over_all".into());
    columns.extend(names.iter().map(|n| format!("pearson_{}", column_name(n))));
    columns.push("pearson_over_all".into());
    columns.extend(names.iter().map(|n| format!("sign_pearson_{}", column_name(n))));
    columns.push("sign_pearson_over_all".into());
    columns.extend(["accuracy_final", "accuracy_best", "parent_accuracy_best"].map(String::from));
    let mut table = Table::new(columns);
    for res in results {
        let parent = &res.parent;
        let edges = parent.net.edge_count();
        let mut row = vec![
            parent.repeat.to_string(),
            parent.seed.to_string(),
            "1".into(),
            "parent".into(),
            String::new(),
            edges.to_string(),
        ];
        row.extend(std::iter::repeat_n(String::new(), 3 * names.len() + 3));
        row.extend([num(parent.final_accuracy()), num(parent.best_accuracy()), num(parent.best_accuracy())]);
        table.push(row);
        for child in &res.children {
            for (stage, report, accuracy) in [
                ("reinit", &child.before, None),
                ("retrained", &child.after, Some((child.child.final_accuracy(), child.child.best_accuracy()))),
            ] {
                let mut row = vec![
                    parent.repeat.to_string(),
                    parent.seed.to_string(),
                    num(child.active_fraction),
                    stage.into(),
                    num(child.view.threshold()),
                    child.view.counts().active().to_string(),
                ];
                row.extend(report.layer_rates.iter().map(|&r| num(r)));
                row.push(num(report.overall_rate));
                row.extend(report.layer_pearson.iter().map(|&p| opt_num(p)));
                row.push(opt_num(report.overall_pearson));
                row.extend(report.layer_sign_pearson.iter().map(|&p| opt_num(p)));
                row.push(opt_num(report.overall_sign_pearson));
                row.push(opt_num(accuracy.map(|a| a.0)));
                row.push(opt_num(accuracy.map(|a| a.1)));
                row.push(num(parent.best_accuracy()));
                table.push(row);
            }
        }
    }
    table
}

pub struct PruneReinitOutcome {
    pub dir: PathBuf,
    pub results: Vec<PruneReinitResult>,
}

pub fn cmd_prune_reinit(config: &ExperimentConfig, out: &Path) -> Result<PruneReinitOutcome> {
    expect_kind(config, "prune-reinit")?;
    let ExperimentKind::PruneReinit { active_fractions, magnitude, child_epochs } = &config.experiment else {
        unreachable!()
    };
    let started = now();
    let (train, test) = load_data(&config.data)?;
    let data = (&train, &test);
    let parents_config = ExperimentConfig { initializers: config.initializers[..1].to_vec(), ..config.clone() };
    let parents = train_all(&parents_config, data)?;
    let child_training = TrainConfig { epochs: child_epochs.unwrap_or(config.training.epochs), ..config.training.clone() };
    let mut results = Vec::new();
    for parent in parents {
        let children = prune_reinit_children(&parent, active_fractions, *magnitude, &child_training, data)?;
        results.push(PruneReinitResult { parent, children });
    }
    let mut dir = RunDir::create(out)?;
    dir.table("prune_reinit.csv", &prune_table(&results))?;
    let mut runs = Vec::new();
    for res in &results {
        for child in &res.children {
            let path = dir.path(&format!("graphs/r{}-active-{}.sg", res.parent.repeat, child.active_fraction))?;
            let file = std::fs::File::create(&path)?;
            child.view.write_to(std::io::BufWriter::new(file))?;
        }
        runs.push(res.parent.clone());
        runs.extend(res.children.iter().map(|c| c.child.clone()));
    }
    write_training(&mut dir, &runs, &[])?;
    let dir = dir.finish("prune-reinit", config, seeds(config), started)?;
    Ok(PruneReinitOutcome { dir, results })
}

pub struct PathCurveOutcome {
    pub dir: PathBuf,
    pub curves: Vec<(String, PathCurve)>,
}

pub fn cmd_path_curve(config: &ExperimentConfig, out: &Path) -> Result<PathCurveOutcome> {
    expect_kind(config, "path-curve")?;
    let ExperimentKind::PathCurve { grid, trials } = &config.experiment else { unreachable!() };
    let started = now();
    let grid = grid.values();
    let mut curves = Vec::new();
    for init in &config.initializers {
        let spec = init.with_seed(config.seed);
        let curve = analysis::path_curve(&config.architecture, &spec, &grid, *trials)?;
        curves.push((spec.kind.label(), curve));
    }
    let mut table =
        Table::new(["initializer", "k", "edge_fraction", "mean_path_fraction", "std_path_fraction", "trials"]);
    let mut summary = Table::new(["initializer", "crossing_5", "crossing_95", "transition_width"]);
    for (label, curve) in &curves {
        for (i, &k) in curve.grid.iter().enumerate() {
            table.push(vec![
                label.clone(),
                k.to_string(),
                num(curve.edge_fraction(i)),
                num(curve.mean_fraction[i]),
                num(curve.std_fraction[i]),
                curve.trials.to_string(),
            ]);
        }
        summary.push(vec![
            label.clone(),
            opt_num(curve.crossing(0.05)),
            opt_num(curve.crossing(0.95)),
            opt_num(curve.transition_width(0.05, 0.95)),
        ]);
    }
    let mut dir = RunDir::create(out)?;
    dir.table("path_curve.csv", &table)?;
    dir.table("path_curve_summary.csv", &summary)?;
    let dir = dir.finish("path-curve", config, vec![config.seed], started)?;
    Ok(PathCurveOutcome { dir, curves })
}

/// Aggregate over the repeats of one (n_lightnings, strength) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCell {
    pub n_lightnings: usize,
    pub strength: f64,
    pub best_accuracies: Vec<f64>,
    pub final_errors: Vec<f64>,
}

impl ParamCell {
    pub fn mean_best_accuracy(&self) -> f64 {
        mean(&self.best_accuracies)
    }

    /// Wrong-answer probability of the mean best accuracy.
    pub fn wrong_answer(&self) -> f64 {
        1.0 - self.mean_best_accuracy()
    }
}

/// Cap applied to wrong-answer probabilities in plot data.
pub const WRONG_ANSWER_CAP: f64 = 0.1;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub struct ParamStudyOutcome {
    pub dir: PathBuf,
    pub cells: Vec<ParamCell>,
}

pub fn cmd_param_study(config: &ExperimentConfig, out: &Path) -> Result<ParamStudyOutcome> {
    expect_kind(config, "param-study")?;
    let ExperimentKind::ParamStudy { lightnings, strengths } = &config.experiment else { unreachable!() };
    let started = now();
    let (train, test) = load_data(&config.data)?;
    let grid: Vec<(usize, f64)> = lightnings.iter().flat_map(|&n| strengths.iter().map(move |&s| (n, s))).collect();
    let initializers = grid
        .iter()
        .map(|&(n_lightnings, strength)| InitializerSpec::new(InitKind::Lightning { n_lightnings, strength }, 0))
        .collect();
    let runs = train_all(&ExperimentConfig { initializers, ..config.clone() }, (&train, &test))?;
    let cells: Vec<ParamCell> = grid
        .iter()
        .zip(runs.chunks(config.repeats))
        .map(|(&(n_lightnings, strength), runs)| ParamCell {
            n_lightnings,
            strength,
            best_accuracies: runs.iter().map(TrainedRun::best_accuracy).collect(),
            final_errors: runs.iter().map(|r| 1.0 - r.final_accuracy()).collect(),
        })
        .collect();
    let mut table = Table::new([
        "n_lightnings",
        "strength",
        "repeats",
        "mean_best_accuracy",
        "std_best_accuracy",
        "wrong_answer",
        "wrong_answer_capped",
        "mean_final_error",
    ]);
    for cell in &cells {
        table.push(vec![
            cell.n_lightnings.to_string(),
            num(cell.strength),
            cell.best_accuracies.len().to_string(),
            num(cell.mean_best_accuracy()),
            num(std_dev(&cell.best_accuracies)),
            num(cell.wrong_answer()),
            num(cell.wrong_answer().min(WRONG_ANSWER_CAP)),
            num(mean(&cell.final_errors)),
        ]);
    }
    let mut dir = RunDir::create(out)?;
    dir.table("param_study.csv", &table)?;
    write_training(&mut dir, &runs, &config.path_tracking)?;
    let dir = dir.finish("param-study", config, seeds(config), started)?;
    Ok(ParamStudyOutcome { dir, cells })
}

/// Per-layer CDFs of one network and the plateau gap found in each.
#[derive(Debug, Clone)]
pub struct CdfResult {
    pub label: String,
    pub series: Vec<CdfSeries>,
    pub gaps: Vec<Option<MassGap>>,
}

impl CdfResult {
    pub fn from_network(label: impl Into<String>, net: &DenseNetwork, criteria: &GapCriteria) -> Self {
        let series = analysis::cdf_by_layer(net);
        let gaps = series.iter().map(|s| s.find_gap(criteria)).collect();
        Self { label: label.into(), series, gaps }
    }
}

pub struct CdfOutcome {
    pub dir: PathBuf,
    pub results: Vec<CdfResult>,
}

pub fn load_snapshot(path: &Path) -> Result<DenseNetwork> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading weights file {}", path.display()))?;
    let snapshot: NetworkSnapshot =
        serde_json::from_str(&text).with_context(|| format!("parsing weights file {}", path.display()))?;
    Ok(DenseNetwork::try_from(snapshot)?)
}

fn write_cdf(dir: &mut RunDir, results: &[CdfResult]) -> Result<()> {
    let mut table = Table::new(["initializer", "layer", "abs_weight", "cumulative_fraction"]);
    let mut gaps = Table::new(["initializer", "layer", "gap", "lower", "upper", "mass_below", "mass_inside", "mass_above"]);
    for res in results {
        for (series, gap) in res.series.iter().zip(&res.gaps) {
            for (v, f) in series.values.iter().zip(&series.fractions) {
                table.push(vec![res.label.clone(), series.layer.clone(), num(*v), num(*f)]);
            }
            let mut row = vec![res.label.clone(), series.layer.clone(), gap.is_some().to_string()];
            row.extend(match gap {
                Some(g) => [g.lower, g.upper, g.mass_below, g.mass_inside, g.mass_above].map(num).to_vec(),
                None => vec![String::new(); 5],
            });
            gaps.push(row);
        }
    }
    dir.table("cdf.csv", &table)?;
    dir.table("cdf_gaps.csv", &gaps)
}

/// Trains each configured initializer once (or reads `weights`) and exports the |w| CDFs.
pub fn cmd_cdf(config: &ExperimentConfig, weights: Option<&Path>, out: &Path) -> Result<CdfOutcome> {
    let started = now();
    let criteria = GapCriteria::default();
    if let Some(path) = weights {
        let net = load_snapshot(path)?;
        let label = path.file_stem().map_or("weights".into(), |s| s.to_string_lossy().into_owned());
        let results = vec![CdfResult::from_network(label, &net, &criteria)];
        let mut dir = RunDir::create(out)?;
        write_cdf(&mut dir, &results)?;
        let dir = dir.finish("cdf", config, Vec::new(), started)?;
        return Ok(CdfOutcome { dir, results });
    }
    expect_kind(config, "cdf")?;
    let (train, test) = load_data(&config.data)?;
    let single = ExperimentConfig { repeats: 1, ..config.clone() };
    let runs = train_all(&single, (&train, &test))?;
    let results: Vec<CdfResult> =
        runs.iter().map(|r| CdfResult::from_network(r.initializer.clone(), &r.net, &criteria)).collect();
    let mut dir = RunDir::create(out)?;
    write_cdf(&mut dir, &results)?;
    write_training(&mut dir, &runs, &config.path_tracking)?;
    let dir = dir.finish("cdf", &single, vec![config.seed], started)?;
    Ok(CdfOutcome { dir, results })
}
