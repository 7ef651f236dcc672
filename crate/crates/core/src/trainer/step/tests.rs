use super::*;
use crate::ansatz::{CircuitConfig, Entanglement};
use crate::scoring::HeadConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_model(head: HeadConfig, seed: u64) -> Model {
    let cfg = CircuitConfig::new(4, 2, Entanglement::Ring).unwrap();
    let mut m = Model::init(cfg, 3, head, seed).unwrap();
    // Larger angles than the default init so every gate matters.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for t in &mut m.tokens {
        t.alpha
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-1.5..1.5));
        t.z.iter_mut()
            .for_each(|v| *v = rng.random_range(-1.5..1.5));
    }
    m
}

fn toy_batch() -> Batch {
    Batch::new(vec![(0, 1), (1, 2), (2, 0)], vec![2, 0, 1, 2, 0, 0], 2).unwrap()
}

fn strong_regularizers() -> TrainConfig {
    TrainConfig {
        lambda_decay: 0.05,
        lambda_ent: 0.3,
        ..TrainConfig::default()
    }
}

fn check_against_finite_differences(model: &Model, batch: &Batch, cfg: &TrainConfig) {
    let (_, grad) = batch_gradient(model, batch, cfg).unwrap();
    let layout = ParamLayout::of(model);
    let mut analytic = vec![0.0; layout.len()];
    let n = layout.layer_size;
    for (id, rec) in &grad.tokens {
        let base = layout.token_offset(*id);
        analytic[base..base + n].copy_from_slice(&rec.d_alpha);
        analytic[base + n..base + 2 * n].copy_from_slice(&rec.d_z);
        analytic[base + 2 * n] = rec.d_x;
    }
    let s = layout.shared_offset();
    analytic[s..s + n].copy_from_slice(&grad.shared);
    let h = layout.head_offset();
    analytic[h] = grad.head.d_beta;
    analytic[h + 1] = grad.head.d_alpha;
    analytic[h + 2] = grad.head.d_b;

    let base = layout.flatten(model);
    let h_step = 1e-5;
    let mut probe = model.clone();
    for i in 0..layout.len() {
        let frozen = match model.head.kind {
            HeadKind::Fidelity => i == h + 1 || i == h + 2 || (i == h && !cfg.train_beta),
            HeadKind::LogitFidelity => i == h,
        };
        if frozen {
            assert_eq!(analytic[i], 0.0);
            continue;
        }
        let mut p = base.clone();
        p[i] += h_step;
        layout.unflatten(&mut probe, &p).unwrap();
        let up = batch_loss(&probe, batch, cfg).unwrap().total;
        p[i] -= 2.0 * h_step;
        layout.unflatten(&mut probe, &p).unwrap();
        let down = batch_loss(&probe, batch, cfg).unwrap().total;
        let fd = (up - down) / (2.0 * h_step);
        let tol = (1e-3 * analytic[i].abs()).max(1e-4);
        assert!(
            (fd - analytic[i]).abs() < tol,
            "param {i}: analytic {} vs fd {fd}",
            analytic[i]
        );
    }
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let batch = toy_batch();
    for method in [GradientMethod::Adjoint, GradientMethod::ParameterShift] {
        let cfg = TrainConfig {
            gradient: method,
            ..strong_regularizers()
        };
        let lf = toy_model(HeadConfig::logit_fidelity(1.3, -0.4).unwrap(), 1);
        check_against_finite_differences(&lf, &batch, &cfg);
        let f = toy_model(HeadConfig::fidelity(4.0).unwrap(), 2);
        check_against_finite_differences(&f, &batch, &cfg);
        let trained_beta = TrainConfig {
            train_beta: true,
            ..cfg.clone()
        };
        check_against_finite_differences(&f, &batch, &trained_beta);
    }
}

#[test]
fn adjoint_and_parameter_shift_agree() {
    let model = toy_model(HeadConfig::logit_fidelity(0.8, 0.3).unwrap(), 3);
    let batch = toy_batch();
    let adj = batch_gradient(&model, &batch, &strong_regularizers())
        .unwrap()
        .1;
    let cfg = TrainConfig {
        gradient: GradientMethod::ParameterShift,
        ..strong_regularizers()
    };
    let ps = batch_gradient(&model, &batch, &cfg).unwrap().1;
    for ((ia, a), (ib, b)) in adj.tokens.iter().zip(&ps.tokens) {
        assert_eq!(ia, ib);
        for (x, y) in a.components().iter().zip(b.components()) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn report_parts_sum_to_total() {
    let model = toy_model(HeadConfig::default(), 4);
    let r = batch_loss(&model, &toy_batch(), &strong_regularizers()).unwrap();
    assert!((r.total - (r.nce_loss + r.ent_penalty + r.decay_penalty)).abs() < 1e-9);
    assert!(r.ent_penalty > 0.0 && r.decay_penalty > 0.0);
    // Decay covers alpha, z and the shared offsets, never x.
    let mut shifted = model.clone();
    shifted.tokens.iter_mut().for_each(|t| t.x += 3.0);
    let r2 = batch_loss(&shifted, &toy_batch(), &strong_regularizers()).unwrap();
    assert_eq!(r.decay_penalty, r2.decay_penalty);
}

#[test]
fn zero_gradient_point_stays_put() {
    // Every score compares a token with itself, so F = 1 regardless of the
    // circuit, and the fixed-scale head has nothing to learn.
    let mut model = toy_model(HeadConfig::fidelity(10.0).unwrap(), 5);
    let before = model.clone();
    let cfg = TrainConfig {
        lambda_decay: 0.0,
        lambda_ent: 0.0,
        ..TrainConfig::default()
    };
    let batch = Batch::new(vec![(1, 1)], vec![1; 5], 5).unwrap();
    let mut opt = AdamState::new(ParamLayout::of(&model).len());
    for _ in 0..5 {
        train_step(&mut model, &mut opt, &batch, &cfg).unwrap();
    }
    let layout = ParamLayout::of(&model);
    for (a, b) in layout.flatten(&model).iter().zip(layout.flatten(&before)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn single_pair_loss_decreases() {
    let mut model = toy_model(HeadConfig::default(), 6);
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let batch = Batch::new(vec![(0, 1)], vec![2; 5], 5).unwrap();
    let mut opt = AdamState::new(ParamLayout::of(&model).len());
    let mut losses = Vec::new();
    for _ in 0..201 {
        losses.push(
            train_step(&mut model, &mut opt, &batch, &cfg)
                .unwrap()
                .nce_loss,
        );
    }
    let decreasing = losses.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(decreasing >= 190, "{decreasing} of 200 steps decreased");
}

#[test]
fn untouched_tokens_are_bit_identical() {
    let cfg = CircuitConfig::new(3, 1, Entanglement::Linear).unwrap();
    let mut model = Model::init(cfg, 6, HeadConfig::default(), 7).unwrap();
    let before = model.clone();
    let batch = Batch::new(vec![(0, 2)], vec![4, 4], 2).unwrap();
    let mut opt = AdamState::new(ParamLayout::of(&model).len());
    train_step(&mut model, &mut opt, &batch, &TrainConfig::default()).unwrap();
    for id in [1, 3, 5] {
        assert_eq!(model.tokens[id], before.tokens[id]);
    }
    for id in [0, 2, 4] {
        assert_ne!(model.tokens[id], before.tokens[id]);
    }
    assert_ne!(model.shared, before.shared);
}

#[test]
fn non_finite_step_leaves_model_untouched() {
    let mut model = toy_model(HeadConfig::default(), 8);
    model.tokens[0].x = f64::NAN;
    let snapshot = format!("{model:?}");
    let mut opt = AdamState::new(ParamLayout::of(&model).len());
    let err = train_step(&mut model, &mut opt, &toy_batch(), &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    assert_eq!(format!("{model:?}"), snapshot);
    assert_eq!(opt.step(), 0);
}

#[test]
fn batch_shape_errors() {
    assert!(Batch::new(vec![], vec![], 1).is_err());
    assert!(Batch::new(vec![(0, 1)], vec![2], 2).is_err());
    assert!(Batch::new(vec![(0, 1)], vec![], 0).is_err());
    let model = toy_model(HeadConfig::default(), 9);
    let out_of_range = Batch::new(vec![(0, 7)], vec![1], 1).unwrap();
    assert!(batch_loss(&model, &out_of_range, &TrainConfig::default()).is_err());
}

#[test]
fn layout_round_trip() {
    let model = toy_model(HeadConfig::default(), 10);
    let layout = ParamLayout::of(&model);
    assert_eq!(layout.len(), 3 * 17 + 8 + 3);
    let flat = layout.flatten(&model);
    let mut copy = model.clone();
    copy.tokens.iter_mut().for_each(|t| t.x = 0.0);
    layout.unflatten(&mut copy, &flat).unwrap();
    assert_eq!(copy, model);
    assert!(layout.unflatten(&mut copy, &flat[1..]).is_err());
}
