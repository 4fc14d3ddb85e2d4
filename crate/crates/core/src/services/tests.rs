use std::sync::OnceLock;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::*;
use crate::dtconnect::{collect, TwinningInterval};
use crate::netsim::{build_topology, SimConfig, Simulation, TrafficMix, TrafficProfile};
use crate::rng::rng_from;
use crate::scenario::{ScenarioEvent, ScenarioKind, TimedEvent};
use crate::tabgan::nn::{Activation, Mlp};
use crate::twingraph::{NodeId, TwinGraph, TwinNode, TwinState};
use crate::whatif::{KpiWeights, WeightProfile};

fn bs(id: u32, load: f64, neighbours: Vec<(u32, u64)>) -> TwinNode {
    TwinNode {
        id: NodeId::Bs(id),
        state: TwinState::Bs {
            ssid: format!("bss-{id}"),
            channel: 36,
            cpu_util: 0.1,
            offered_load_mbps: load,
            neighbours,
        },
        last_update: 1.0,
        quarantined: false,
    }
}

fn ue(id: u32, rssi: f64, rx: u64, tx: u64) -> TwinNode {
    TwinNode {
        id: NodeId::Ue(id),
        state: TwinState::Ue {
            rx_packets: rx,
            tx_packets: tx,
            rssi_dbm: rssi,
            associated_bs_mac: "02:00:00:00:00:00".into(),
        },
        last_update: 1.0,
        quarantined: false,
    }
}

fn snap(nodes: Vec<TwinNode>) -> TwinSnapshot {
    TwinSnapshot {
        timestamp: 1.0,
        nodes,
        relationships: Vec::new(),
        twinning_interval_s: 1.0,
    }
}

fn cfg100() -> SimConfig {
    SimConfig {
        phy_rate_mbps: 100.0,
        ..SimConfig::default()
    }
}

fn features(neighbours: f64, load: f64) -> FeatureVector {
    FeatureVector {
        neighbours,
        rssi_dbm: -60.0,
        load_fraction: load,
        pl: 0.0,
        c: 1.0,
    }
}

#[test]
fn preprocess_examples() {
    let s = snap(vec![bs(0, 50.0, vec![]), ue(0, -55.0, 10, 10), ue(1, -55.0, 8, 10)]);
    let f = preprocess_flows(&s, &cfg100()).unwrap();
    assert_eq!(f.rssi_dbm, -55.0);
    assert_eq!(f.load_fraction, 0.5);
    assert_eq!(f.neighbours, 0.0);
    assert_abs_diff_eq!(f.pl, 0.1, epsilon = 1e-12);
    assert_eq!(f.c, 1.0);

    let mut q = ue(2, -95.0, 0, 50);
    q.quarantined = true;
    let s = snap(vec![bs(0, 50.0, vec![]), ue(0, -55.0, 10, 10), q]);
    let f = preprocess_flows(&s, &cfg100()).unwrap();
    assert_eq!((f.rssi_dbm, f.c, f.pl), (-55.0, 1.0, 0.0));
}

#[test]
fn preprocess_counts_the_contention_domain() {
    // bs-1 hears bs-0 and the quarantined bs-2, whose load is imputed
    let mut q = bs(2, 90.0, vec![]);
    q.quarantined = true;
    let s = snap(vec![bs(0, 10.0, vec![(1, 5)]), bs(1, 30.0, vec![(0, 5), (2, 5)]), q]);
    let f = preprocess_flows(&s, &cfg100()).unwrap();
    // domains: 10 + 30 and 30 + 10 + 20
    assert_abs_diff_eq!(f.load_fraction, (40.0 + 60.0) / 2.0 / 100.0, epsilon = 1e-12);
    assert_eq!(f.neighbours, 1.5);
    // no UE telemetry
    assert_eq!((f.rssi_dbm, f.c), (-82.0, 1.0));
}

#[test]
fn preprocess_rejects_empty() {
    assert!(matches!(preprocess_flows(&snap(vec![]), &cfg100()), Err(Error::InvalidArgument(_))));
    assert!(preprocess_flows(&snap(vec![ue(0, -50.0, 1, 1)]), &cfg100()).is_err());
}

fn separable(n: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = rng_from(seed);
    (0..n)
        .map(|_| {
            let load: f64 = rng.random();
            let k = ((load * 5.0) as usize).min(4);
            LabeledExample {
                features: features(rng.random_range(0.0..8.0), load),
                cst_dbm: CST_GRID[k],
            }
        })
        .collect()
}

#[test]
fn s1_fits_separable_labels() {
    let data = separable(400, 1);
    let m = s1_train(&data, &CST_GRID, &S1Hyper::default(), 3).unwrap();
    assert!(m.train_accuracy >= 0.9, "accuracy {}", m.train_accuracy);
    for e in &data {
        assert!(CST_GRID.contains(&m.predict(&e.features)));
    }
}

#[test]
fn s1_is_deterministic_and_persists() {
    let data = separable(80, 2);
    let hyper = S1Hyper {
        epochs: 20,
        ..S1Hyper::default()
    };
    let a = s1_train(&data, &CST_GRID, &hyper, 5).unwrap();
    let b = s1_train(&data, &CST_GRID, &hyper, 5).unwrap();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s1.json");
    a.save(&p).unwrap();
    assert_eq!(CstModel::load(&p).unwrap(), a);
}

#[test]
fn s1_refuses_bad_datasets() {
    assert!(s1_train(&[], &CST_GRID, &S1Hyper::default(), 1).is_err());
    let mut one: Vec<_> = separable(60, 3);
    for e in &mut one {
        e.cst_dbm = -72.0;
    }
    let err = s1_train(&one, &CST_GRID, &S1Hyper::default(), 1).unwrap_err();
    assert!(err.to_string().contains("-72 dBm x60"), "{err}");
    let mut off = separable(60, 3);
    off[0].cst_dbm = -70.0;
    assert!(s1_train(&off, &CST_GRID, &S1Hyper::default(), 1).is_err());
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = rng_from(9);
    let mut net = Mlp::new(&[FEATURE_DIM, 6, 5], Activation::Relu, &mut rng);
    assert!(net.param_count() <= 100);
    let xs: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let ys = vec![0, 2, 4, 1];
    let (_, g) = cross_entropy(&net, &xs, &ys);
    let analytic = g.flat();
    let p0 = net.params();
    let eps = 1e-5;
    for i in 0..p0.len() {
        let mut p = p0.clone();
        p[i] += eps;
        net.set_params(&p);
        let up = cross_entropy(&net, &xs, &ys).0;
        p[i] -= 2.0 * eps;
        net.set_params(&p);
        let down = cross_entropy(&net, &xs, &ys).0;
        let fd = (up - down) / (2.0 * eps);
        let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-8);
        assert!(err < 1e-4 || (fd - analytic[i]).abs() < 1e-9, "param {i}: {fd} vs {}", analytic[i]);
    }
}

#[test]
fn cst_pick_examples() {
    assert_eq!(pick_cst(&CST_GRID, &[0.1, 0.7, 0.1, 0.05, 0.05]), -77.0);
    assert_eq!(pick_cst(&CST_GRID, &[0.4, 0.1, 0.05, 0.05, 0.4]), -82.0);
    assert_eq!(pick_cst(&CST_GRID, &[0.0, 0.0, 0.0, 0.0, 1.0]), -62.0);
}

fn st(load: usize, interference: usize) -> QState {
    QState { load, interference }
}

#[test]
fn q_update_examples() {
    let mut p = TpcPolicy::new(&TPC_GRID, QHyper::default()).unwrap();
    let next = st(1, 1);
    p.set(next, 3, 2.0).unwrap();
    s2_update(&mut p, st(0, 0), 0, 1.0, next).unwrap();
    assert_abs_diff_eq!(p.values(st(0, 0)).unwrap()[0], 1.4, epsilon = 1e-12);

    let mut z = TpcPolicy::new(&TPC_GRID, QHyper::default()).unwrap();
    s2_update(&mut z, st(2, 2), 1, 0.0, st(2, 2)).unwrap();
    assert_eq!(z.values(st(2, 2)).unwrap()[1], 0.0);

    let mut g0 = TpcPolicy::new(
        &TPC_GRID,
        QHyper {
            gamma: 0.0,
            ..QHyper::default()
        },
    )
    .unwrap();
    for _ in 0..50 {
        g0.update(st(3, 1), 2, 0.7, st(3, 1)).unwrap();
    }
    assert!((g0.values(st(3, 1)).unwrap()[2] - 0.7).abs() < 1e-6);
}

#[test]
fn q_rejects_unknown_indices() {
    let mut p = TpcPolicy::new(&TPC_GRID, QHyper::default()).unwrap();
    assert!(p.update(st(5, 0), 0, 0.5, st(0, 0)).is_err());
    assert!(p.update(st(0, 0), 6, 0.5, st(0, 0)).is_err());
    assert!(p.update(st(0, 0), 0, 0.5, st(0, 9)).is_err());
    assert!(p.update(st(0, 0), 0, 1.5, st(0, 0)).is_err());
    assert!(TpcPolicy::new(&TPC_GRID, QHyper { alpha: 0.0, ..QHyper::default() }).is_err());
}

#[test]
fn greedy_selection() {
    let mut rng = rng_from(1);
    let mut p = TpcPolicy::new(&TPC_GRID, QHyper::default()).unwrap();
    assert_eq!(s2_select_tpc(&p, st(0, 0), false, &mut rng).unwrap(), 10.0);
    p.set(st(0, 0), 3, 0.5).unwrap();
    assert_eq!(s2_select_tpc(&p, st(0, 0), false, &mut rng).unwrap(), 16.0);
    p.set(st(0, 0), 5, 0.5).unwrap();
    assert_eq!(s2_select_tpc(&p, st(0, 0), false, &mut rng).unwrap(), 16.0);
}

#[test]
fn full_exploration_is_uniform() {
    let mut p = TpcPolicy::new(
        &TPC_GRID,
        QHyper {
            epsilon: 1.0,
            ..QHyper::default()
        },
    )
    .unwrap();
    p.set(st(1, 1), 4, 10.0).unwrap();
    let mut rng = rng_from(77);
    let mut counts = [0f64; 6];
    let n = 10_000;
    for _ in 0..n {
        counts[p.select_index(st(1, 1), true, &mut rng).unwrap()] += 1.0;
    }
    let expected = n as f64 / 6.0;
    let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    let pval = 1.0 - ChiSquared::new(5.0).unwrap().cdf(chi2);
    assert!(pval > 0.01, "chi2 {chi2}, p {pval}");
}

#[test]
fn q_learning_finds_the_rewarded_action() {
    let mut p = TpcPolicy::new(&TPC_GRID, QHyper::default()).unwrap();
    let mut rng = rng_from(4);
    train_s2(
        &mut p,
        20_000,
        10,
        |r| Ok(st(r.random_range(0..5), r.random_range(0..5))),
        |s, a, _| Ok((if a == s.load { 1.0 } else { 0.2 }, s)),
        &mut rng,
    )
    .unwrap();
    for l in 0..5 {
        assert_eq!(p.greedy(st(l, 2)).unwrap(), l);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s2.json");
    p.save(&path).unwrap();
    assert_eq!(TpcPolicy::load(&path).unwrap(), p);
}

#[test]
fn mode_names_round_trip() {
    for m in StrategyMode::ALL {
        assert_eq!(m.name().parse::<StrategyMode>().unwrap(), m);
        assert_eq!(format!("{m:?}").parse::<StrategyMode>().unwrap(), m);
    }
    assert!("fastest".parse::<StrategyMode>().is_err());
}

struct Fixture {
    snapshot: TwinSnapshot,
    net: NetworkModel,
    scenarios: Vec<ScenarioSpec>,
    opts: EvalOptions,
    s1: CstModel,
    s2: TpcPolicy,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let topology = build_topology(4, (3, 5), 20.0, 8).unwrap();
        let traffic = TrafficProfile::for_topology(&topology, 4.0, &TrafficMix::default(), 8).unwrap();
        let sim = SimConfig {
            sinr_threshold_db: 10.0,
            ..SimConfig::default()
        };
        let mut s = Simulation::new(&sim, &topology, &traffic, 8).unwrap();
        let samples = s.run_sampled(sim.slots_for_seconds(0.4), sim.slots_for_seconds(0.1));
        let mut g = TwinGraph::default();
        for b in collect(&samples, TwinningInterval::new(0.2).unwrap()).unwrap() {
            g.apply_telemetry(&b).unwrap();
        }
        let snapshot = (*g.snapshot_retrospective().unwrap()).clone();
        let spec = |kind, timeline, seed: u64| ScenarioSpec {
            id: format!("{}-{seed:016x}", ScenarioKind::name(kind)),
            kind,
            base_timestamp: snapshot.timestamp,
            base_hash: snapshot.content_hash(),
            base_ues: 0,
            timeline,
            duration_s: 0.3,
            seed,
            gan_model_id: None,
        };
        let scale = |f| {
            vec![TimedEvent {
                t_s: 0.0,
                event: ScenarioEvent::ScaleTraffic { factor: f },
            }]
        };
        let scenarios = vec![
            spec(ScenarioKind::A, vec![], 1),
            spec(ScenarioKind::C1, scale(1.2), 1),
            spec(ScenarioKind::C2, scale(1.4), 1),
        ];
        let weights = WeightProfile {
            kpi: KpiWeights {
                t: 0.4,
                l: 0.2,
                pl: 0.2,
                c: 0.2,
            },
            scenario: crate::whatif::ScenarioWeights {
                a: 0.6,
                b: 0.0,
                c: 0.4,
                d: 0.0,
            },
        };
        let opts = EvalOptions {
            sim,
            weights,
            ..EvalOptions::default()
        };
        let s1 = s1_train(&separable(60, 4), &CST_GRID, &S1Hyper { epochs: 10, ..S1Hyper::default() }, 4).unwrap();
        let mut s2 = TpcPolicy::new(&TPC_GRID, QHyper::default()).unwrap();
        for l in 0..LOAD_BUCKETS {
            for i in 0..INTERFERENCE_BUCKETS {
                s2.set(st(l, i), 2, 1.0).unwrap();
            }
        }
        Fixture {
            snapshot,
            net: NetworkModel { topology, traffic },
            scenarios,
            opts,
            s1,
            s2,
        }
    })
}

fn input<'a>(f: &'a Fixture, grids: &'a Grids) -> StrategyInput<'a> {
    StrategyInput {
        snapshot: &f.snapshot,
        net: &f.net,
        scenarios: &f.scenarios,
        opts: &f.opts,
        grids,
        s1: Some(&f.s1),
        s2: Some(&f.s2),
        seed: 21,
    }
}

#[test]
fn strategies_evaluate_the_expected_counts() {
    let f = fixture();
    let grids = Grids::default();
    let inp = input(f, &grids);
    let expected = [30, 1, 1, 6, 5, 1];
    let mut outcomes = Vec::new();
    for (m, n) in StrategyMode::ALL.into_iter().zip(expected) {
        let o = run_strategy(m, &inp).unwrap();
        assert_eq!(o.evaluations, n, "{m}");
        assert_eq!(m.evaluations(&grids), n);
        assert!(o.wall_time_s > 0.0);
        outcomes.push(o);
    }
    let brute = outcomes[0].best.xi;
    for o in &outcomes {
        assert!(o.best.xi <= brute, "{} beats brute force", o.mode);
        assert!((0.0..=1.0).contains(&o.best.xi));
    }
    // the S2 table prefers 14 dBm everywhere
    assert!(outcomes[2].reports[0].config == RadioConfig::new(DEFAULT_CST_DBM, 14.0));
    assert!(outcomes[4].reports.iter().all(|r| r.config.tpc_dbm == 14.0));
    let ind = outcomes[5].reports[0].config;
    assert_eq!(ind.tpc_dbm, 14.0);
    assert!(outcomes[3].reports.iter().all(|r| r.config.cst_dbm == ind.cst_dbm));
}

#[test]
fn same_config_scores_the_same_in_every_mode() {
    let f = fixture();
    let grids = Grids::default();
    let inp = input(f, &grids);
    let brute = run_strategy(StrategyMode::BruteForce, &inp).unwrap();
    let ind = run_strategy(StrategyMode::S1AndS2Independent, &inp).unwrap();
    let same = brute.reports.iter().find(|r| r.config == ind.best.config).unwrap();
    assert_eq!(same.xi, ind.best.xi);
}

#[test]
fn grids_are_configurable() {
    let f = fixture();
    let grids = Grids {
        cst: vec![-82.0, -62.0],
        tpc: vec![10.0, 20.0],
    };
    let mut inp = input(f, &grids);
    inp.s1 = None;
    assert_eq!(run_strategy(StrategyMode::BruteForce, &inp).unwrap().evaluations, 4);
    for m in [StrategyMode::OnlyS1, StrategyMode::S1CrossS2, StrategyMode::S1AndS2Independent] {
        assert!(matches!(run_strategy(m, &inp), Err(Error::InvalidArgument(_))), "{m}");
    }
    inp.s2 = None;
    assert!(run_strategy(StrategyMode::OnlyS2, &inp).is_err());
    let bad = Grids {
        cst: vec![-90.0],
        tpc: vec![10.0],
    };
    assert!(run_strategy(StrategyMode::BruteForce, &input(f, &bad)).is_err());
}

proptest! {
    #[test]
    fn state_buckets_stay_in_range(n in 0.0..50.0f64, load in 0.0..=1.0f64) {
        let s = QState::from_features(&features(n, load));
        prop_assert!(s.load < LOAD_BUCKETS && s.interference < INTERFERENCE_BUCKETS);
    }

    #[test]
    fn q_stays_finite_and_bounded(steps in prop::collection::vec((0usize..5, 0usize..5, 0usize..6, 0.0..=1.0f64), 1..200)) {
        let mut p = TpcPolicy::new(&TPC_GRID, QHyper::default()).unwrap();
        for (l, i, a, r) in steps {
            p.update(st(l, i), a, r, st(i, l)).unwrap();
        }
        // rewards in [0, 1] keep Q inside [0, 1 / (1 - gamma)]
        prop_assert!(p.q.iter().all(|v| v.is_finite() && *v >= 0.0 && *v <= 10.0 + 1e-9));
    }

    #[test]
    fn prediction_stays_on_grid(scores in prop::collection::vec(0.0..1.0f64, 5)) {
        prop_assert!(CST_GRID.contains(&pick_cst(&CST_GRID, &scores)));
    }
}
