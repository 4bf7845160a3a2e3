use cotree::gnn::{ClassifierConfig, TreeClassifier};
use cotree::GraphSample;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> GraphSample {
    let node_features = (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(-2.0..2.0))).collect();
    let (mut edge_index, mut edge_codes) = (Vec::new(), Vec::new());
    for child in 1..n {
        let parent = rng.gen_range(0..child);
        let code: i8 = rng.gen_range(1..=4);
        edge_index.extend([[parent, child], [child, parent]]);
        edge_codes.extend([code, -code]);
    }
    GraphSample {
        sample_id: "g".into(),
        label: Some(1),
        node_features,
        edge_index,
        edge_codes,
    }
}

struct Report {
    worst: f64,
    checked: usize,
    kinks: usize,
}

/// Central differences at step 1e-5. A parameter whose +-h perturbation flips
/// an activation is sitting on a kink; it is counted and skipped.
fn check(seed: u64, label: f64, picks: usize) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graph = random_graph(&mut rng, 15);
    let mut model = TreeClassifier::init(ClassifierConfig::default(), &mut rng).unwrap();
    let (_, grad) = model.loss_gradient(&graph, label).unwrap();
    let h = 1e-5;
    let mut idx: Vec<usize> = model.layout().groups().iter().map(|(_, r)| r.start + rng.gen_range(0..r.len())).collect();
    idx.extend(sample(&mut rng, model.params.len(), picks));
    let mut report = Report { worst: 0.0, checked: 0, kinks: 0 };
    for &i in &idx {
        let orig = model.params[i];
        model.params[i] = orig + h;
        let up = model.loss(&graph, label).unwrap();
        let up_pattern = model.activation_pattern(&graph).unwrap();
        model.params[i] = orig - h;
        let down = model.loss(&graph, label).unwrap();
        let down_pattern = model.activation_pattern(&graph).unwrap();
        model.params[i] = orig;
        if up_pattern != down_pattern {
            report.kinks += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * h);
        let denom = grad[i].abs().max(numeric.abs()).max(1e-8);
        report.worst = report.worst.max((grad[i] - numeric).abs() / denom);
        report.checked += 1;
    }
    report
}

#[test]
fn analytic_gradient_matches_central_differences() {
    for (seed, label) in [(0, 1.0), (1, 0.0), (2, 1.0), (4, 1.0)] {
        let r = check(seed, label, 150);
        assert!(r.checked >= 100, "seed {seed}: only {} smooth parameters", r.checked);
        assert!(r.kinks * 10 < r.checked);
        assert!(r.worst <= 1e-3, "seed {seed}: relative error {:e}", r.worst);
    }
}

#[test]
fn kinks_are_detected() {
    // hidden units sit right at zero when every weight is zero
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let graph = random_graph(&mut rng, 6);
    let mut model = TreeClassifier::zeros(ClassifierConfig { hidden_size: 4, ..Default::default() }).unwrap();
    let base = model.activation_pattern(&graph).unwrap();
    let b1 = model.layout().head_b1.start;
    model.params[b1] = 1e-5;
    let up = model.activation_pattern(&graph).unwrap();
    model.params[b1] = -1e-5;
    assert_ne!(up, model.activation_pattern(&graph).unwrap());
    assert_eq!(base, model.activation_pattern(&graph).unwrap());
}
