use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::tabgan::schema::Column;

fn toy_schema() -> Schema {
    Schema::new(vec![
        Column::categorical("color", &["red", "blue"]),
        Column::continuous("size", None),
    ])
}

/// 70/30 categorical; size bimodal and tied to the colour.
fn toy_rows(n: usize, seed: u64) -> Vec<Row> {
    let mut rng = rng_from(seed);
    let red = Normal::new(0.0, 0.5).unwrap();
    let blue = Normal::new(6.0, 0.8).unwrap();
    (0..n)
        .map(|i| {
            if i % 10 < 7 {
                vec![Cell::Cat(0), Cell::Num(red.sample(&mut rng))]
            } else {
                vec![Cell::Cat(1), Cell::Num(blue.sample(&mut rng))]
            }
        })
        .collect()
}

fn tiny_hyper() -> GanHyper {
    GanHyper {
        epochs: 0,
        batch: 8,
        z_dim: 2,
        hidden_dims: vec![4],
        max_modes: 1,
        ..GanHyper::default()
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn value_at_even_scores() {
    let v = gan_value(&[0.5; 8], &[0.5; 5]).unwrap();
    assert!((v + 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn value_approaches_zero_for_a_perfect_discriminator() {
    let v = gan_value(&[1.0 - 1e-12], &[1e-12]).unwrap();
    assert!(v < 0.0 && v > -1e-10);
}

#[test]
fn value_rejects_scores_outside_the_open_interval() {
    assert!(gan_value(&[1.0], &[0.5]).is_err());
    assert!(gan_value(&[0.5], &[0.0]).is_err());
    assert!(gan_value(&[], &[0.5]).is_err());
}

#[test]
fn gradients_match_finite_differences() {
    let rows = toy_rows(40, 1);
    let m = GanModel::init(&rows, &toy_schema(), &tiny_hyper(), 5).unwrap();
    assert!(m.generator.param_count() + m.discriminator.param_count() <= 100);
    let mut rng = rng_from(8);
    let conds: Vec<CondVector> = (0..6).map(|_| m.cond.sample_training(&mut rng)).collect();
    let real: Vec<Vec<f64>> = rows[..6].iter().map(|r| m.encode_row(r, &mut rng)).collect();
    let z: Vec<Vec<f64>> = (0..6).map(|_| standard_normal(m.z_dim, &mut rng)).collect();
    let fake: Vec<Vec<f64>> = z
        .iter()
        .zip(&conds)
        .map(|(z, c)| m.generate_rep(z, &c.to_dense()))
        .collect();
    let eps = 1e-5;

    let (_, analytic) = discriminator_objective(&m, &real, &fake, &conds);
    let p = m.discriminator.params();
    for i in 0..p.len() {
        let mut probe = m.clone();
        let mut q = p.clone();
        q[i] += eps;
        probe.discriminator.set_params(&q);
        let up = discriminator_objective(&probe, &real, &fake, &conds).0;
        q[i] -= 2.0 * eps;
        probe.discriminator.set_params(&q);
        let down = discriminator_objective(&probe, &real, &fake, &conds).0;
        let numeric = (up - down) / (2.0 * eps);
        assert!(rel_err(analytic[i], numeric) < 1e-4, "D param {i}: {} vs {numeric}", analytic[i]);
    }

    let (_, analytic) = generator_objective(&m, &z, &conds, 1.0);
    let p = m.generator.params();
    for i in 0..p.len() {
        let mut probe = m.clone();
        let mut q = p.clone();
        q[i] += eps;
        probe.generator.set_params(&q);
        let up = generator_objective(&probe, &z, &conds, 1.0).0;
        q[i] -= 2.0 * eps;
        probe.generator.set_params(&q);
        let down = generator_objective(&probe, &z, &conds, 1.0).0;
        let numeric = (up - down) / (2.0 * eps);
        assert!(rel_err(analytic[i], numeric) < 1e-4, "G param {i}: {} vs {numeric}", analytic[i]);
    }
}

#[test]
fn discriminator_scores_stay_inside_the_unit_interval() {
    let rows = toy_rows(200, 2);
    let m = GanModel::init(&rows, &toy_schema(), &GanHyper::default(), 3).unwrap();
    let mut rng = rng_from(4);
    let dim = m.rep_dim() + m.cond.len();
    for i in 0..10_000 {
        let scale = if i % 2 == 0 { 1.0 } else { 1e6 };
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0f64..1.0) * scale).collect();
        let s = m.score(&x[..m.rep_dim()], &x[m.rep_dim()..]);
        assert!(s > 0.0 && s < 1.0);
    }
}

#[test]
fn zero_epochs_leaves_history_empty() {
    let rows = toy_rows(64, 3);
    let hyper = GanHyper {
        epochs: 0,
        batch: 16,
        ..GanHyper::default()
    };
    let trained = GanModel::train(&rows, &toy_schema(), &hyper, 9).unwrap();
    let fresh = GanModel::init(&rows, &toy_schema(), &hyper, 9).unwrap();
    assert!(trained.history.is_empty());
    assert_eq!(trained, fresh);
}

#[test]
fn too_few_rows_is_rejected() {
    let rows = toy_rows(10, 3);
    assert!(GanModel::train(&rows, &toy_schema(), &GanHyper::default(), 1).is_err());
}

#[test]
fn non_finite_parameters_abort_training() {
    let rows = toy_rows(64, 3);
    let hyper = GanHyper {
        epochs: 2,
        batch: 16,
        ..GanHyper::default()
    };
    let mut m = GanModel::init(&rows, &toy_schema(), &hyper, 1).unwrap();
    m.discriminator.layers[0].w[0] = f64::NAN;
    match m.fit(&rows, &hyper) {
        Err(Error::Diverged { epoch, layer }) => {
            assert_eq!(epoch, 0);
            assert!(layer.contains("discriminator"));
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

fn short_training() -> (Vec<Row>, GanModel) {
    let rows = toy_rows(400, 11);
    let hyper = GanHyper {
        epochs: 30,
        batch: 50,
        hidden_dims: vec![32, 32],
        ..GanHyper::default()
    };
    let m = GanModel::train(&rows, &toy_schema(), &hyper, 21).unwrap();
    (rows, m)
}

#[test]
fn training_is_deterministic_and_logged() {
    let (_, a) = short_training();
    let (_, b) = short_training();
    assert_eq!(a, b);
    assert_eq!(a.history.len(), 30);
    assert!(a.history.iter().all(|e| e.value <= 0.0 && e.value.is_finite()));
    assert_eq!(a.generate(20, None, 4).unwrap(), b.generate(20, None, 4).unwrap());
    assert_ne!(a.generate(20, None, 4).unwrap(), a.generate(20, None, 5).unwrap());

    let mut csv = Vec::new();
    a.write_history_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("epoch,value,d_loss,g_loss\n"));
    assert_eq!(text.lines().count(), 31);
}

#[test]
fn hard_condition_is_always_met() {
    let (_, m) = short_training();
    let rows = m.generate(200, Some(("color", "blue")), 1).unwrap();
    assert!(rows.iter().all(|r| r[0] == Cell::Cat(1)));
    assert!(m.generate(0, None, 1).unwrap().is_empty());
    assert!(m.generate(5, Some(("color", "green")), 1).is_err());
    assert!(m.generate(5, Some(("size", "1")), 1).is_err());
}

#[test]
fn save_and_load_round_trip() {
    let (_, m) = short_training();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gan.json");
    m.save(&path).unwrap();
    let back = GanModel::load(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.generate(10, None, 2).unwrap(), m.generate(10, None, 2).unwrap());
}

proptest! {
    #[test]
    fn value_is_never_positive(
        r in proptest::collection::vec(1e-9f64..1.0 - 1e-9, 1..20),
        f in proptest::collection::vec(1e-9f64..1.0 - 1e-9, 1..20),
    ) {
        prop_assert!(gan_value(&r, &f).unwrap() <= 0.0);
    }
}

#[test]
fn toy_marginal_is_reproduced() {
    let rows = toy_rows(500, 7);
    let hyper = GanHyper {
        epochs: 300,
        batch: 50,
        hidden_dims: vec![32, 32],
        ..GanHyper::default()
    };
    let m = GanModel::train(&rows, &toy_schema(), &hyper, 3).unwrap();
    let gen = m.generate(2000, None, 17).unwrap();
    let real_red = rows.iter().filter(|r| r[0] == Cell::Cat(0)).count() as f64 / rows.len() as f64;
    let gen_red = gen.iter().filter(|r| r[0] == Cell::Cat(0)).count() as f64 / gen.len() as f64;
    // two categories: total variation is the gap in either one
    let tv = (real_red - gen_red).abs();
    assert!(tv < 0.15);
}
