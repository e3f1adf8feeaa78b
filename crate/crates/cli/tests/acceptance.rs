//! End-to-end acceptance run on MNIST. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use lightnet::analysis::{linear_grid, path_curve, pearson, GapCriteria};
use lightnet::data::{encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels, IdxImages};
use lightnet::graph::path_report_for_mask;
use lightnet::init::{init_lightning, InitKind, InitializerSpec, LightningConfig};
use lightnet::nn::{one_hot, DenseNetwork, TrainConfig};
use lightnet::LENET_300_100;
use lightnet_cli::config::{self, DataConfig, ExperimentConfig};
use lightnet_cli::run::{self, CdfResult, TrainedRun};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: &'static str, pass: bool, detail: String) -> Verdict {
    println!("[{}] criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    Verdict { id, pass, detail }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn runs_of<'a>(runs: &'a [TrainedRun], label: &str) -> Vec<&'a TrainedRun> {
    runs.iter().filter(|r| r.initializer == label).collect()
}

fn baseline_runs(runs: &[TrainedRun]) -> Vec<&TrainedRun> {
    runs.iter().filter(|r| !r.initializer.starts_with("lightning")).collect()
}

fn relative_reduction(runs: &[TrainedRun], epoch: usize) -> (f64, f64, f64) {
    let light = mean(runs_of(runs, "lightning-1000-0.5").iter().map(|r| r.error_at(epoch).unwrap()));
    let base = mean(baseline_runs(runs).iter().map(|r| r.error_at(epoch).unwrap()));
    (light, base, 1.0 - light / base)
}

fn criterion_1(runs: &[TrainedRun]) -> Verdict {
    let glorot = runs_of(runs, "glorot");
    let seed0 = glorot.iter().find(|r| r.repeat == 0).unwrap();
    let acc = seed0.final_accuracy();
    let others: Vec<String> = glorot.iter().map(|r| format!("{:.2}%", 100.0 * r.final_accuracy())).collect();
    verdict(
        "1",
        acc >= 0.975,
        format!("Glorot seed 0 epoch-30 val accuracy {:.2}% (>= 97.50%); all seeds [{}]", 100.0 * acc, others.join(", ")),
    )
}

fn criterion_2_3(runs: &[TrainedRun], epochs: usize) -> Vec<Verdict> {
    let mut out = Vec::new();
    for (id, epoch, needed) in [("2", 1, 0.15), ("3", epochs, 0.05)] {
        let (light, base, red) = relative_reduction(runs, epoch);
        out.push(verdict(
            id,
            red >= needed,
            format!(
                "epoch {epoch} wrong-answer: lightning {:.3}% vs baseline mean {:.3}% -> {:.1}% lower (>= {:.0}%)",
                100.0 * light,
                100.0 * base,
                100.0 * red,
                100.0 * needed
            ),
        ));
    }
    out
}

fn criterion_4(parent: &TrainedRun, children: &[run::ChildResult]) -> Verdict {
    let parent_best = parent.best_accuracy();
    let mut pass = true;
    let mut parts = vec![format!("parent best {:.2}%", 100.0 * parent_best)];
    for c in children {
        let acc = c.child.best_accuracy();
        let rate = c.after.overall_rate;
        let r = c.after.overall_pearson.unwrap_or(f64::NAN);
        let ok = if c.active_fraction < 0.15 {
            acc >= 0.97
        } else {
            rate <= 0.02 && r >= 0.98 && acc >= parent_best - 0.005
        };
        pass &= ok;
        let layers: Vec<String> = c.after.layer_pearson.iter().map(|p| format!("{:.3}", p.unwrap_or(f64::NAN))).collect();
        parts.push(format!(
            "{:.0}%: change {:.2}% pearson {:.4} [{}] sign-pearson {:.4} acc {:.2}%{}",
            100.0 * c.active_fraction,
            100.0 * rate,
            r,
            layers.join(" "),
            c.after.overall_sign_pearson.unwrap_or(f64::NAN),
            100.0 * acc,
            if ok { "" } else { " (x)" }
        ));
    }
    verdict("4", pass, parts.join("; "))
}

fn criterion_5() -> Verdict {
    let grid = linear_grid(0, 60_000, 601);
    let at10k = grid.iter().position(|&k| k == 10_000).unwrap();
    let glorot = path_curve(&LENET_300_100, &InitializerSpec::new(InitKind::GlorotUniform, 0), &grid, 50).unwrap();
    let trunc =
        path_curve(&LENET_300_100, &InitializerSpec::new(InitKind::TruncatedNormal { std: 0.1 }, 0), &grid, 50).unwrap();
    let zero_trials = glorot.per_trial.iter().filter(|t| t[at10k] == 0.0).count();
    let width = glorot.transition_width(0.05, 0.95).unwrap_or(f64::INFINITY);
    let max_diff = glorot.mean_fraction.iter().zip(&trunc.mean_fraction).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let trunc_zero = trunc.per_trial.iter().filter(|t| t[at10k] == 0.0).count();
    let pass = zero_trials * 100 >= 95 * 50 && width <= 0.015 && max_diff <= 0.05;
    verdict(
        "5",
        pass,
        format!(
            "Glorot top-10000 zero in {zero_trials}/50 trials (>= 48); 5%->95% width {:.3}% of edges (<= 1.5%); \
             Glorot vs truncated(0.1) max pointwise gap {max_diff:.3} (<= 0.05); truncated zero at 10000 in {trunc_zero}/50",
            100.0 * width
        ),
    )
}

/// Forward/backward reachability over nonzero entries, written independently of the library.
fn on_complete_path(sizes: &[usize], active: &[Array2<bool>]) -> Vec<Array2<bool>> {
    let n = sizes.len();
    let mut fwd: Vec<Vec<bool>> = sizes.iter().map(|&s| vec![false; s]).collect();
    fwd[0] = vec![true; sizes[0]];
    for l in 0..n - 1 {
        for i in 0..sizes[l] {
            for j in 0..sizes[l + 1] {
                if fwd[l][i] && active[l][[i, j]] {
                    fwd[l + 1][j] = true;
                }
            }
        }
    }
    let mut bwd: Vec<Vec<bool>> = sizes.iter().map(|&s| vec![false; s]).collect();
    bwd[n - 1] = vec![true; sizes[n - 1]];
    for l in (0..n - 1).rev() {
        for i in 0..sizes[l] {
            for j in 0..sizes[l + 1] {
                if bwd[l + 1][j] && active[l][[i, j]] {
                    bwd[l][i] = true;
                }
            }
        }
    }
    (0..n - 1)
        .map(|l| Array2::from_shape_fn((sizes[l], sizes[l + 1]), |(i, j)| active[l][[i, j]] && fwd[l][i] && bwd[l + 1][j]))
        .collect()
}

/// Enumerates every input→output path explicitly and marks the edges it uses.
fn brute_force_paths(sizes: &[usize], active: &[Array2<bool>]) -> Vec<Array2<bool>> {
    fn walk(sizes: &[usize], active: &[Array2<bool>], path: &mut Vec<usize>, marks: &mut [Array2<bool>]) {
        let level = path.len() - 1;
        if level == sizes.len() - 1 {
            for l in 0..level {
                marks[l][[path[l], path[l + 1]]] = true;
            }
            return;
        }
        let from = path[level];
        for j in 0..sizes[level + 1] {
            if active[level][[from, j]] {
                path.push(j);
                walk(sizes, active, path, marks);
                path.pop();
            }
        }
    }
    let mut marks: Vec<Array2<bool>> = sizes.windows(2).map(|w| Array2::from_elem((w[0], w[1]), false)).collect();
    for i in 0..sizes[0] {
        walk(sizes, active, &mut vec![i], &mut marks);
    }
    marks
}

fn random_sizes(rng: &mut ChaCha8Rng, max_total: usize) -> Vec<usize> {
    loop {
        let levels = rng.random_range(2..=5);
        let sizes: Vec<usize> = (0..levels).map(|_| rng.random_range(1..=10)).collect();
        if sizes.iter().sum::<usize>() <= max_total {
            return sizes;
        }
    }
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = Vec::new();
    let mut nonzero_total = 0;
    for case in 0..100 {
        let levels = rng.random_range(2..=6);
        let sizes: Vec<usize> = (0..levels).map(|_| rng.random_range(1..=40)).collect();
        let n = rng.random_range(0..=300);
        let strength = rng.random_range(0.001..10.0);
        let weights = init_lightning(&sizes, &LightningConfig::new(n, strength, rng.random())).unwrap();
        let active: Vec<Array2<bool>> = weights.iter().map(|w| w.mapv(|x| x != 0.0)).collect();
        let on_path = on_complete_path(&sizes, &active);
        let mut magnitudes = BTreeSet::new();
        for (w, p) in weights.iter().zip(&on_path) {
            for (&x, &ok) in w.iter().zip(p.iter()) {
                if x != 0.0 {
                    nonzero_total += 1;
                    magnitudes.insert(x.abs().to_bits());
                    if !ok {
                        failures.push(format!("case {case}: nonzero weight off every complete path"));
                    }
                }
            }
        }
        if n > 0 && magnitudes != BTreeSet::from([strength.to_bits()]) {
            failures.push(format!("case {case}: magnitudes {magnitudes:?} != {{{strength}}}"));
        }
    }
    verdict(
        "6",
        failures.is_empty(),
        if failures.is_empty() {
            format!("100 random configurations, {nonzero_total} nonzero weights, all on complete paths with |w| = strength")
        } else {
            failures[..failures.len().min(3)].join("; ")
        },
    )
}

fn random_net(rng: &mut ChaCha8Rng) -> DenseNetwork {
    let levels = rng.random_range(2..=4);
    let sizes: Vec<usize> = (0..levels).map(|_| rng.random_range(2..=6)).collect();
    let mut net = DenseNetwork::mlp(&sizes).unwrap();
    for l in 0..sizes.len() - 1 {
        let layer = net.layer_mut(l);
        let w = Array2::from_shape_fn((sizes[l], sizes[l + 1]), |_| rng.random_range(-1.0..1.0));
        let b = Array1::from_shape_fn(sizes[l + 1], |_| rng.random_range(-0.5..0.5));
        layer.set_weights(w).unwrap();
        layer.set_biases(b).unwrap();
    }
    net
}

fn gradient_check(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut net = random_net(rng);
    let sizes = net.layer_sizes();
    let batch = rng.random_range(1..=5);
    let x = Array2::from_shape_fn((batch, sizes[0]), |_| rng.random_range(-1.0..1.0));
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..*sizes.last().unwrap())).collect();
    let y = one_hot(&labels, *sizes.last().unwrap()).unwrap();
    let (_, grads) = net.loss_and_gradients(x.view(), y.view()).unwrap();
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let loss = |net: &DenseNetwork| net.loss_and_gradients(x.view(), y.view()).unwrap().0;
    for l in 0..sizes.len() - 1 {
        for idx in 0..sizes[l] * sizes[l + 1] {
            let (i, j) = (idx / sizes[l + 1], idx % sizes[l + 1]);
            let orig = net.layers()[l].weights().clone();
            let mut w = orig.clone();
            w[[i, j]] += eps;
            net.layer_mut(l).set_weights(w.clone()).unwrap();
            let up = loss(&net);
            w[[i, j]] -= 2.0 * eps;
            net.layer_mut(l).set_weights(w).unwrap();
            let down = loss(&net);
            net.layer_mut(l).set_weights(orig).unwrap();
            let fd = (up - down) / (2.0 * eps);
            let g = grads.weights[l][[i, j]];
            let err = (g - fd).abs();
            if err > 1e-4 * g.abs().max(fd.abs()) + 1e-7 {
                return Err(format!("layer {l} weight ({i},{j}): analytic {g:e} vs numeric {fd:e}"));
            }
            worst = worst.max(err / g.abs().max(fd.abs()).max(1e-7));
        }
        for j in 0..sizes[l + 1] {
            let orig = net.layers()[l].biases().clone();
            let mut b = orig.clone();
            b[j] += eps;
            net.layer_mut(l).set_biases(b.clone()).unwrap();
            let up = loss(&net);
            b[j] -= 2.0 * eps;
            net.layer_mut(l).set_biases(b).unwrap();
            let down = loss(&net);
            net.layer_mut(l).set_biases(orig).unwrap();
            let fd = (up - down) / (2.0 * eps);
            let g = grads.biases[l][j];
            if (g - fd).abs() > 1e-4 * g.abs().max(fd.abs()) + 1e-7 {
                return Err(format!("layer {l} bias {j}: analytic {g:e} vs numeric {fd:e}"));
            }
        }
    }
    Ok(worst)
}

fn pearson_direct(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn criterion_7(data: &DataConfig, scratch: &std::path::Path) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut problems = Vec::new();

    let mut worst_grad: f64 = 0.0;
    for _ in 0..20 {
        match gradient_check(&mut rng) {
            Ok(w) => worst_grad = worst_grad.max(w),
            Err(e) => problems.push(format!("gradient: {e}")),
        }
    }

    let mut graphs_ok = 0;
    for g in 0..200 {
        let sizes = random_sizes(&mut rng, 30);
        let density = rng.random_range(0.05..0.9);
        let active: Vec<Array2<bool>> =
            sizes.windows(2).map(|w| Array2::from_shape_fn((w[0], w[1]), |_| rng.random_bool(density))).collect();
        let expected = brute_force_paths(&sizes, &active);
        let report = path_report_for_mask(&sizes, &active);
        if report.on_complete_path == expected {
            graphs_ok += 1;
        } else {
            problems.push(format!("reachability graph {g} sizes {sizes:?} differs from path enumeration"));
        }
    }

    let mut worst_pearson: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..200);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 * v + rng.random_range(-5.0..5.0)).collect();
        let got = pearson(&x, &y).unwrap().unwrap();
        worst_pearson = worst_pearson.max((got - pearson_direct(&x, &y)).abs());
    }
    if worst_pearson > 1e-12 {
        problems.push(format!("pearson off by {worst_pearson:e}"));
    }

    let mut idx_ok = true;
    for _ in 0..20 {
        let (count, rows, cols) = (rng.random_range(0..20), rng.random_range(1..30), rng.random_range(1..30));
        let images = IdxImages { count, rows, cols, pixels: (0..count * rows * cols).map(|_| rng.random()).collect() };
        let bytes = encode_idx_images(&images);
        idx_ok &= parse_idx_images(&bytes).map(|p| encode_idx_images(&p) == bytes && p == images).unwrap_or(false);
        let labels: Vec<u8> = (0..count).map(|_| rng.random_range(0..10)).collect();
        let bytes = encode_idx_labels(&labels);
        idx_ok &= parse_idx_labels(&bytes).map(|p| encode_idx_labels(&p) == bytes).unwrap_or(false);
    }
    let fixture = [0u8, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 7, 9];
    idx_ok &= parse_idx_images(&fixture).map(|p| encode_idx_images(&p) == fixture).unwrap_or(false);
    if !idx_ok {
        problems.push("IDX round trip not byte-exact".into());
    }

    let small = ExperimentConfig {
        repeats: 2,
        path_tracking: vec![1000],
        training: TrainConfig { epochs: 2, ..TrainConfig::default() },
        data: DataConfig { train_limit: Some(3000), test_limit: Some(1000), ..data.clone() },
        initializers: vec![
            InitializerSpec::new(InitKind::GlorotUniform, 0),
            InitializerSpec::new(InitKind::Lightning { n_lightnings: 1000, strength: 0.5 }, 0),
        ],
        ..config::preset("mnist-lenet-300-100").unwrap()
    };
    let a = run::cmd_train(&small, &scratch.join("rerun-a")).unwrap();
    let manifest = lightnet_cli::output::RunManifest::load(&a.dir.join("manifest.json")).unwrap();
    let b = run::cmd_train(&manifest.config, &scratch.join("rerun-b")).unwrap();
    let (ma, mb) = (std::fs::read(a.dir.join("metrics.csv")).unwrap(), std::fs::read(b.dir.join("metrics.csv")).unwrap());
    let identical = ma == mb && !ma.is_empty();
    if !identical {
        problems.push("re-run metrics.csv differs".into());
    }

    verdict(
        "7",
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "20 gradient checks (worst rel err {worst_grad:.1e}); {graphs_ok}/200 reachability graphs match; \
                 pearson max diff {worst_pearson:.1e}; IDX byte-exact; re-run metrics identical ({} bytes)",
                ma.len()
            )
        } else {
            problems[..problems.len().min(3)].join("; ")
        },
    )
}

fn criterion_8(runs: &[TrainedRun]) -> Verdict {
    let criteria = GapCriteria::default();
    let describe = |r: &CdfResult| {
        r.series
            .iter()
            .zip(&r.gaps)
            .map(|(s, g)| match g {
                Some(g) => format!(
                    "{}: gap [{:.3},{:.3}] below {:.1}% inside {:.2}%",
                    s.layer,
                    g.lower,
                    g.upper,
                    100.0 * g.mass_below,
                    100.0 * g.mass_inside
                ),
                None => format!("{}: none", s.layer),
            })
            .collect::<Vec<_>>()
            .join(", ")
    };
    let pick = |label: &str| runs.iter().find(|r| r.initializer == label && r.repeat == 0).unwrap();
    let light = CdfResult::from_network("lightning", &pick("lightning-1000-0.5").net, &criteria);
    let glorot = CdfResult::from_network("glorot", &pick("glorot").net, &criteria);
    let light_gaps = light.gaps.iter().filter(|g| g.is_some()).count();
    let glorot_gaps = glorot.gaps.iter().filter(|g| g.is_some()).count();
    verdict(
        "8",
        light_gaps >= 1 && glorot_gaps == 0,
        format!("lightning [{}]; Glorot [{}]", describe(&light), describe(&glorot)),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let scratch = tempfile::tempdir().unwrap();
    let data = DataConfig::default();

    let mut verdicts = vec![criterion_6()];
    verdicts.push(criterion_7(&data, scratch.path()));
    verdicts.push(criterion_5());

    let comparison = config::preset("init-comparison").unwrap();
    let epochs = comparison.training.epochs;
    let outcome = run::cmd_train(&comparison, &scratch.path().join("comparison")).expect("comparison training");
    let runs = outcome.runs;
    verdicts.push(criterion_1(&runs));
    verdicts.extend(criterion_2_3(&runs, epochs));
    verdicts.push(criterion_8(&runs));

    let prune = config::preset("prune-reinit-desk").unwrap();
    let lightnet_cli::ExperimentKind::PruneReinit { active_fractions, magnitude, child_epochs } = &prune.experiment else {
        unreachable!()
    };
    let (train, test) = run::load_data(&prune.data).unwrap();
    let parent = runs.iter().find(|r| r.initializer == "glorot" && r.repeat == 0).unwrap();
    let child_training = TrainConfig { epochs: child_epochs.unwrap_or(epochs), ..prune.training.clone() };
    let children =
        run::prune_reinit_children(parent, active_fractions, *magnitude, &child_training, (&train, &test)).unwrap();
    verdicts.push(criterion_4(parent, &children));

    verdicts.sort_by_key(|v| v.id);
    println!("\nacceptance summary ({:.0} s)", started.elapsed().as_secs_f64());
    for v in &verdicts {
        println!("  criterion {}: {}  {}", v.id, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!("{} of {} criteria passed", verdicts.len() - failed, verdicts.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
