use proptest::prelude::*;
use tive::model::LossBreakdown;
use tive::{Instance, Matrix, ReferenceModel, TrainConfig};

fn inst(features: Vec<f64>, instruction: Vec<u32>, target: Vec<u32>) -> Instance {
    Instance {
        instance_id: "x".into(),
        task_id: "t".into(),
        features,
        instruction_tokens: instruction,
        target_tokens: target,
    }
}

fn instance_strategy(d_v: usize, vocab: u32) -> impl Strategy<Value = Instance> {
    (
        prop::collection::vec(-2.0f64..2.0, d_v),
        prop::collection::vec(0..vocab, 0..4),
        prop::collection::vec(0..vocab, 1..5),
    )
        .prop_map(|(f, i, t)| inst(f, i, t))
}

fn central_difference(model: &ReferenceModel, x: &Instance, output: bool, k: usize, h: f64) -> f64 {
    let bump = |d: f64| {
        let mut m = model.clone();
        let w = if output { m.output_mut() } else { m.projection_mut() };
        w.as_mut_slice()[k] += d;
        m.loss(x).unwrap()
    };
    (bump(h) - bump(-h)) / (2.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn gradients_match_finite_differences(seed in 0u64..1_000, x in instance_strategy(4, 5)) {
        let model = ReferenceModel::init(4, 4, 5, seed).unwrap();
        let g = model.per_sample_gradient(&x).unwrap();
        for (output, analytic) in [(false, g.grad_projection()), (true, g.grad_output())] {
            for (k, &a) in analytic.iter().enumerate() {
                let n = central_difference(&model, &x, output, k, 1e-5);
                let scale = a.abs().max(n.abs());
                let err = if scale < 1e-8 { (a - n).abs() } else { (a - n).abs() / scale };
                prop_assert!(err <= 1e-4, "component {k} (output={output}): {a} vs {n}");
            }
        }
    }

    #[test]
    fn probabilities_normalise_and_loss_is_nonnegative(seed in 0u64..1_000, x in instance_strategy(3, 6)) {
        let model = ReferenceModel::init(3, 5, 6, seed).unwrap();
        let b = model.forward_loss(&x).unwrap();
        for p in &b.probabilities {
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        prop_assert!(b.loss >= 0.0);
        prop_assert!((model.perplexity(&x).unwrap() - b.loss.exp()).abs() <= 1e-12);
    }
}

#[test]
fn hand_built_two_by_two_loss() {
    let p = Matrix::from_row_major(2, 2, vec![0.5, -0.25, 0.1, 0.3]).unwrap();
    let o = Matrix::from_row_major(2, 2, vec![1.0, -1.0, 0.5, 2.0]).unwrap();
    let e = Matrix::from_row_major(2, 2, vec![0.2, 0.0, -0.4, 0.6]).unwrap();
    let model = ReferenceModel::from_parts(p, o, e, 0).unwrap();
    let x = inst(vec![1.0, 2.0], vec![0, 1], vec![1, 0]);

    // Scalar recomputation: embedding mean (-0.1, 0.3).
    let h0 = (0.5 * 1.0 - 0.25 * 2.0 - 0.1_f64).tanh();
    let h1 = (0.1 * 1.0 + 0.3 * 2.0 + 0.3_f64).tanh();
    let l0 = h0 - h1;
    let l1 = 0.5 * h0 + 2.0 * h1;
    let log_z = (l0.exp() + l1.exp()).ln();
    let expected = ((log_z - l1) + (log_z - l0)) / 2.0;
    assert!((model.loss(&x).unwrap() - expected).abs() <= 1e-12);
}

#[test]
fn perfect_injected_errors_give_zero_gradient() {
    let model = ReferenceModel::init(3, 4, 5, 1).unwrap();
    let x = inst(vec![0.3, -1.0, 2.0], vec![1], vec![2, 4]);
    let mut b = model.forward_loss(&x).unwrap();
    b = LossBreakdown {
        errors: vec![vec![0.0; 5]; b.errors.len()],
        ..b
    };
    let g = model.gradient_from_breakdown(&x, &b);
    assert!(g.g().iter().all(|&v| v == 0.0));
}

#[test]
fn replicating_a_target_token_keeps_the_gradient() {
    let model = ReferenceModel::init(3, 4, 5, 2).unwrap();
    let one = inst(vec![1.0, 0.5, -0.5], vec![0, 3], vec![2]);
    let many = inst(vec![1.0, 0.5, -0.5], vec![0, 3], vec![2, 2, 2, 2]);
    let a = model.per_sample_gradient(&one).unwrap();
    let b = model.per_sample_gradient(&many).unwrap();
    for (x, y) in a.g().iter().zip(b.g()) {
        assert!((x - y).abs() <= 1e-15);
    }
}

#[test]
fn gradients_leave_the_model_untouched() {
    let model = ReferenceModel::init(3, 4, 5, 3).unwrap();
    let copy = model.clone();
    model.per_sample_gradient(&inst(vec![1.0, 2.0, 3.0], vec![], vec![1])).unwrap();
    assert_eq!(model, copy);
}

fn learnable_instances(n: usize) -> Vec<Instance> {
    // Separable: the target is the index of the largest feature.
    (0..n)
        .map(|i| {
            let mut f = vec![0.0; 4];
            f[i % 4] = 2.0;
            f[(i + 1) % 4] = 0.1 * (i % 7) as f64;
            let mut x = inst(f, vec![], vec![(i % 4) as u32; 2]);
            x.instance_id = format!("s{i}");
            x
        })
        .collect()
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let data = learnable_instances(200);
    let refs: Vec<&Instance> = data.iter().collect();
    let model = ReferenceModel::init(4, 8, 4, 9).unwrap();
    let config = TrainConfig {
        seed: 3,
        ..TrainConfig::default()
    };
    let before = model.evaluate(&refs).unwrap().mean_loss;
    let a = model.train(&refs, &config).unwrap();
    let b = model.train(&refs, &config).unwrap();
    assert_eq!(a, b);
    assert!(a.evaluate(&refs).unwrap().mean_loss < before);

    let none = model.train(&refs, &TrainConfig { epochs: 0, ..config }).unwrap();
    assert_eq!(none, model);
}

#[test]
fn zero_output_guesses_at_chance() {
    let vocab = 5;
    let mut model = ReferenceModel::init(3, 4, vocab, 4).unwrap();
    model.output_mut().as_mut_slice().iter_mut().for_each(|w| *w = 0.0);
    // Balanced targets: every token appears equally often.
    let data: Vec<Instance> = (0..500)
        .map(|i| {
            let t = (i % vocab) as u32;
            inst(vec![i as f64 * 0.01, 1.0, -1.0], vec![], vec![t, (t + 1) % 5, (t + 2) % 5, (t + 3) % 5])
        })
        .collect();
    let refs: Vec<&Instance> = data.iter().collect();
    let r = model.evaluate(&refs).unwrap();
    assert!(r.positions >= 2000);
    assert!((r.token_accuracy - 1.0 / vocab as f64).abs() <= 0.05);
    assert!((r.mean_loss - (vocab as f64).ln()).abs() <= 1e-12);
}

#[test]
fn mean_loss_matches_external_average() {
    let data = learnable_instances(37);
    let refs: Vec<&Instance> = data.iter().collect();
    let model = ReferenceModel::init(4, 6, 4, 5).unwrap();
    let external = data.iter().map(|x| model.loss(x).unwrap()).sum::<f64>() / data.len() as f64;
    assert!((model.evaluate(&refs).unwrap().mean_loss - external).abs() <= 1e-12);
}

#[test]
fn uniform_four_way_perplexity_is_four() {
    let mut model = ReferenceModel::init(2, 3, 4, 6).unwrap();
    model.output_mut().as_mut_slice().iter_mut().for_each(|w| *w = 0.0);
    let p = model.perplexity(&inst(vec![0.5, 0.5], vec![1], vec![3, 0])).unwrap();
    assert!((p - 4.0).abs() <= 1e-12);
}

#[test]
fn init_entries_have_fan_in_scale() {
    // P is 100x100, so 10^4 entries with std 1/sqrt(d_v) = 0.1.
    let model = ReferenceModel::init(100, 100, 3, 8).unwrap();
    let w = model.projection().as_slice();
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64;
    assert!((var.sqrt() - 0.1).abs() <= 0.01);
    assert_ne!(model, ReferenceModel::init(100, 100, 3, 9).unwrap());
}
