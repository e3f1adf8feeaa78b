use lightnet::analysis::change_rate;
use lightnet::graph::{
    categorize, categorize_fraction, path_report, path_report_for_mask, reinit_from_view, threshold_for_fraction,
    EdgeCategory,
};
use lightnet::init::{InitKind, InitializerSpec};
use lightnet::nn::DenseNetwork;
use ndarray::Array2;
use proptest::prelude::*;

fn sizes_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..7, 2..6).prop_filter("at most 30 neurons", |s| s.iter().sum::<usize>() <= 30)
}

fn masks_for(sizes: &[usize], bits: &[bool]) -> Vec<Array2<bool>> {
    let mut it = bits.iter().copied().cycle();
    sizes.windows(2).map(|w| Array2::from_shape_fn((w[0], w[1]), |_| it.next().unwrap())).collect()
}

fn net_for(sizes: &[usize], values: &[f64]) -> DenseNetwork {
    let mut net = DenseNetwork::mlp(sizes).unwrap();
    let mut it = values.iter().copied().cycle();
    for l in 0..sizes.len() - 1 {
        let w = Array2::from_shape_fn((sizes[l], sizes[l + 1]), |_| it.next().unwrap());
        net.layer_mut(l).set_weights(w).unwrap();
    }
    net
}

/// Marks every edge used by some explicitly enumerated input→output path.
fn enumerate_paths(sizes: &[usize], active: &[Array2<bool>]) -> Vec<Array2<bool>> {
    fn walk(sizes: &[usize], active: &[Array2<bool>], path: &mut Vec<usize>, marks: &mut [Array2<bool>]) {
        let level = path.len() - 1;
        if level == sizes.len() - 1 {
            for l in 0..level {
                marks[l][[path[l], path[l + 1]]] = true;
            }
            return;
        }
        for j in 0..sizes[level + 1] {
            if active[level][[path[level], j]] {
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

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn reachability_matches_path_enumeration(sizes in sizes_strategy(), bits in prop::collection::vec(any::<bool>(), 1..200)) {
        let active = masks_for(&sizes, &bits);
        let report = path_report_for_mask(&sizes, &active);
        prop_assert_eq!(&report.on_complete_path, &enumerate_paths(&sizes, &active));
        let on_path: usize = report.on_complete_path.iter().map(|m| m.iter().filter(|&&b| b).count()).sum();
        prop_assert_eq!(report.active_on_complete_paths, on_path);
    }

    #[test]
    fn dead_neurons_cut_every_path_through_them(sizes in sizes_strategy(), bits in prop::collection::vec(any::<bool>(), 1..200)) {
        let active = masks_for(&sizes, &bits);
        let report = path_report_for_mask(&sizes, &active);
        let mut dead = 0;
        for (level, &size) in sizes.iter().enumerate().take(sizes.len() - 1).skip(1) {
            for n in 0..size {
                let alive = report.reachable_from_input[level][n] && report.reaches_output[level][n];
                dead += !alive as usize;
                if !alive {
                    prop_assert!(report.on_complete_path[level - 1].column(n).iter().all(|&b| !b));
                    prop_assert!(report.on_complete_path[level].row(n).iter().all(|&b| !b));
                }
            }
        }
        prop_assert_eq!(report.dead_neuron_count, dead);
    }

    #[test]
    fn categories_partition_edges(sizes in sizes_strategy(), values in prop::collection::vec(-1.0f64..1.0, 1..100), t in 0.0f64..1.0) {
        let net = net_for(&sizes, &values);
        let view = categorize(&net, t);
        let c = view.counts();
        prop_assert_eq!(c.activating + c.inhibiting + c.inactive, net.edge_count());
        for (cats, layer) in view.categories().iter().zip(net.layers()) {
            for (&cat, &w) in cats.iter().zip(layer.weights().iter()) {
                let expected = if w == 0.0 || w.abs() < t {
                    EdgeCategory::Inactive
                } else if w > 0.0 {
                    EdgeCategory::Activating
                } else {
                    EdgeCategory::Inhibiting
                };
                prop_assert_eq!(cat, expected);
            }
        }
    }

    #[test]
    fn raising_the_threshold_only_removes_edges(sizes in sizes_strategy(), values in prop::collection::vec(-1.0f64..1.0, 1..100), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let net = net_for(&sizes, &values);
        let (lo, hi) = (a.min(b), a.max(b));
        let (low, high) = (categorize(&net, lo), categorize(&net, hi));
        for (l, h) in low.categories().iter().zip(high.categories()) {
            for (&cl, &ch) in l.iter().zip(h.iter()) {
                prop_assert!(!ch.is_active() || cl == ch);
            }
        }
    }

    #[test]
    fn reinit_round_trips_categories(sizes in sizes_strategy(), values in prop::collection::vec(-1.0f64..1.0, 1..100), f in 0.01f64..1.0, m in 0.01f64..1.0) {
        let net = net_for(&sizes, &values);
        let view = categorize_fraction(&net, f).unwrap();
        let child = reinit_from_view(&view, m).unwrap();
        let again = categorize(&child, m / 2.0);
        prop_assert_eq!(again.categories(), view.categories());
        prop_assert_eq!(change_rate(&view, &child).unwrap().overall_rate, 0.0);
        for (cats, layer) in view.categories().iter().zip(child.layers()) {
            for ((&cat, &w), &keep) in cats.iter().zip(layer.weights().iter()).zip(layer.mask().iter()) {
                prop_assert_eq!(keep, cat.is_active());
                prop_assert_eq!(w.abs(), if cat.is_active() { m } else { 0.0 });
            }
        }
    }

    #[test]
    fn fraction_threshold_keeps_at_least_the_fraction(sizes in sizes_strategy(), values in prop::collection::vec(-1.0f64..1.0, 1..100), f in 0.01f64..1.0) {
        let net = net_for(&sizes, &values);
        let t = threshold_for_fraction(&net, f).unwrap();
        let kept = categorize(&net, t).counts().active();
        let nonzero: usize = net.layers().iter().map(|l| l.weights().iter().filter(|w| **w != 0.0).count()).sum();
        let wanted = ((f * net.edge_count() as f64).ceil() as usize).min(nonzero);
        prop_assert!(kept >= wanted);
    }
}

#[test]
fn lenet_ten_percent_keeps_exactly_26620_edges() {
    let net = InitializerSpec::new(InitKind::GlorotUniform, 3).build_network(&lightnet::LENET_300_100).unwrap();
    let view = categorize_fraction(&net, 0.1).unwrap();
    assert_eq!(view.counts().active(), 26_620);
    let report = path_report(&view);
    assert_eq!(report.active_edges, 26_620);
}
