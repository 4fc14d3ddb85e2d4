use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::netsim::KpiVector;
use crate::netsim::{build_topology, RadioConfig, SimConfig, TrafficMix, TrafficProfile};
use crate::scenario::{ScenarioEvent, ScenarioKind, ScenarioSpec, TimedEvent};
use crate::twingraph::TwinGraph;

fn equal_kpi() -> KpiWeights {
    KpiWeights {
        t: 0.25,
        l: 0.25,
        pl: 0.25,
        c: 0.25,
    }
}

fn kv(t: f64, l: f64, pl: f64, c: f64) -> KpiVector {
    KpiVector { t, l, pl, c }
}

fn spec(kind: ScenarioKind, timeline: Vec<TimedEvent>, seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        id: format!("{}-{seed:016x}", kind.name()),
        kind,
        base_timestamp: 0.0,
        base_hash: String::new(),
        base_ues: 0,
        timeline,
        duration_s: 0.5,
        seed,
        gan_model_id: None,
    }
}

fn scale(kind: ScenarioKind, f: f64, seed: u64) -> ScenarioSpec {
    spec(
        kind,
        vec![TimedEvent {
            t_s: 0.0,
            event: ScenarioEvent::ScaleTraffic { factor: f },
        }],
        seed,
    )
}

fn net(num_bs: usize, spacing: f64, seed: u64) -> NetworkModel {
    let topology = build_topology(num_bs, (4, 6), spacing, seed).unwrap();
    let traffic = TrafficProfile::for_topology(&topology, 4.0, &TrafficMix::default(), seed).unwrap();
    NetworkModel { topology, traffic }
}

fn opts(weights: WeightProfile) -> EvalOptions {
    EvalOptions {
        sim: SimConfig {
            sinr_threshold_db: 10.0,
            ..SimConfig::default()
        },
        weights,
        ..EvalOptions::default()
    }
}

fn report_with(cst: f64, tpc: f64, xi: f64) -> EffectivenessReport {
    EffectivenessReport {
        config: RadioConfig::new(cst, tpc),
        outcomes: Vec::new(),
        cs_a: Some(xi),
        cs_b: None,
        cs_c: None,
        cs_d: None,
        xi,
        valid: true,
        error: None,
        origin: Origin::Twin,
    }
}

#[test]
fn normalization_examples() {
    let b = KpiBounds::for_offered(100.0);
    let m = normalize_kpis(&kv(50.0, 20.0, 0.0, 0.7), &b).unwrap();
    assert_abs_diff_eq!(m.m_t, 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(m.m_l, 0.8, epsilon = 1e-12);
    assert_eq!(m.m_pl, 1.0);
    assert_eq!(m.m_c, 0.7);
    // out-of-range values clamp
    let m = normalize_kpis(&kv(150.0, 500.0, 0.5, 1.0), &b).unwrap();
    assert_eq!((m.m_t, m.m_l, m.m_pl), (1.0, 0.0, 0.5));
}

#[test]
fn inverted_bounds_rejected() {
    let b = KpiBounds {
        t_min: 10.0,
        t_max: 5.0,
        l_min: 0.0,
        l_max: 100.0,
    };
    assert!(matches!(normalize_kpis(&kv(1.0, 1.0, 0.0, 1.0), &b), Err(Error::InvalidArgument(_))));
    assert!(normalize_kpis(&kv(1.0, 1.0, 0.0, 1.0), &KpiBounds::for_offered(0.0)).is_err());
}

#[test]
fn composite_examples() {
    let w = WeightProfile::a_only(equal_kpi());
    let m = |a, b, c, d| NormalizedKpis {
        m_t: a,
        m_l: b,
        m_pl: c,
        m_c: d,
    };
    assert_abs_diff_eq!(composite_score(&m(0.8, 0.6, 0.9, 0.7), &w).unwrap(), 0.75, epsilon = 1e-12);
    assert_abs_diff_eq!(composite_score(&m(1.0, 1.0, 1.0, 1.0), &WeightProfile::default()).unwrap(), 1.0, epsilon = 1e-12);
    assert_eq!(composite_score(&m(0.0, 0.0, 0.0, 0.0), &w).unwrap(), 0.0);
}

#[test]
fn effectiveness_examples() {
    let w = WeightProfile::default();
    let cs = ScenarioScores {
        a: Some(0.9),
        b: Some(0.8),
        c: Some(0.7),
        d: Some(0.6),
    };
    assert_abs_diff_eq!(effectiveness(&cs, &w).unwrap(), 0.78, epsilon = 1e-12);
    let flat = ScenarioScores {
        a: Some(0.42),
        b: Some(0.42),
        c: Some(0.42),
        d: Some(0.42),
    };
    assert_abs_diff_eq!(effectiveness(&flat, &w).unwrap(), 0.42, epsilon = 1e-12);
    let missing = ScenarioScores { d: None, ..cs };
    assert!(matches!(effectiveness(&missing, &w), Err(Error::InvalidArgument(_))));
    // a group with zero weight may be absent
    let a_only = WeightProfile::a_only(equal_kpi());
    assert_eq!(effectiveness(&ScenarioScores { a: Some(0.6), ..Default::default() }, &a_only).unwrap(), 0.6);
}

#[test]
fn weights_must_sum_to_one() {
    let mut w = WeightProfile::default();
    w.kpi.t = 0.5;
    assert!(w.validate().is_err());
    let mut w = WeightProfile::default();
    w.scenario.a = -0.1;
    w.scenario.b = 0.5;
    assert!(w.validate().is_err());
    assert!(WeightProfile::default().validate().is_ok());
}

#[test]
fn selection_is_strict_and_tie_broken() {
    let reports = vec![
        report_with(-72.0, 20.0, 0.85),
        report_with(-72.0, 20.0, 0.8),
        report_with(-72.0, 20.0, 0.79),
    ];
    assert_eq!(select_configs(&reports, 0.8).unwrap().len(), 1);
    assert!(select_configs(&[], 0.8).unwrap().is_empty());
    let tied = vec![
        report_with(-62.0, 20.0, 0.9),
        report_with(-77.0, 14.0, 0.9),
        report_with(-67.0, 14.0, 0.9),
    ];
    let sel = select_configs(&tied, 0.8).unwrap();
    let order: Vec<(f64, f64)> = sel.iter().map(|r| (r.config.cst_dbm, r.config.tpc_dbm)).collect();
    assert_eq!(order, vec![(-67.0, 14.0), (-77.0, 14.0), (-62.0, 20.0)]);
    assert!(select_configs(&tied, 1.5).is_err());
}

#[test]
fn a_only_weighting_gives_cs_a() {
    let n = net(3, 20.0, 3);
    let scenarios = vec![spec(ScenarioKind::A, vec![], 1), scale(ScenarioKind::C1, 1.2, 1)];
    let r = evaluate_config(RadioConfig::new(-72.0, 17.0), &n, &scenarios, &opts(WeightProfile::a_only(equal_kpi())), 9);
    assert!(r.valid, "{:?}", r.error);
    assert_eq!(r.xi, r.cs_a.unwrap());
    assert_eq!(r.cs_c, r.outcomes.iter().find(|o| o.kind == ScenarioKind::C1).map(|o| o.cs));
}

#[test]
fn evaluation_is_deterministic() {
    let n = net(3, 20.0, 4);
    let scenarios = vec![
        scale(ScenarioKind::C2, 1.4, 2),
        spec(ScenarioKind::A, vec![], 2),
        scale(ScenarioKind::C1, 1.2, 2),
    ];
    let w = WeightProfile {
        kpi: equal_kpi(),
        scenario: ScenarioWeights {
            a: 0.5,
            b: 0.0,
            c: 0.5,
            d: 0.0,
        },
    };
    let mut o = opts(w);
    let a = evaluate_config(RadioConfig::new(-77.0, 20.0), &n, &scenarios, &o, 11);
    o.mode = crate::par::ExecMode::Sequential;
    let b = evaluate_config(RadioConfig::new(-77.0, 20.0), &n, &scenarios, &o, 11);
    assert!(a.valid, "{:?}", a.error);
    assert_eq!(a, b);
    let kinds: Vec<_> = a.outcomes.iter().map(|o| o.kind).collect();
    assert_eq!(kinds, vec![ScenarioKind::A, ScenarioKind::C1, ScenarioKind::C2]);
    let c_mean = (a.outcomes[1].cs + a.outcomes[2].cs) / 2.0;
    assert_abs_diff_eq!(a.xi, 0.5 * a.cs_a.unwrap() + 0.5 * c_mean, epsilon = 1e-12);
}

#[test]
fn failures_give_invalid_reports() {
    let n = net(2, 20.0, 5);
    let dup = vec![spec(ScenarioKind::A, vec![], 1), spec(ScenarioKind::A, vec![], 2)];
    let r = evaluate_config(RadioConfig::default(), &n, &dup, &opts(WeightProfile::default()), 1);
    assert!(!r.valid && r.error.is_some());
    // B-D missing under default weights
    let only_a = vec![spec(ScenarioKind::A, vec![], 1)];
    let r = evaluate_config(RadioConfig::default(), &n, &only_a, &opts(WeightProfile::default()), 1);
    assert!(!r.valid);
    let r = evaluate_config(RadioConfig::new(-90.0, 20.0), &n, &only_a, &opts(WeightProfile::a_only(equal_kpi())), 1);
    assert!(!r.valid);
    assert!(select_configs(&[r], 0.0).unwrap().is_empty());
}

#[test]
fn low_power_loses_coverage_on_sparse_layout() {
    let w = WeightProfile::a_only(equal_kpi());
    let (mut xi_lo, mut xi_hi, mut c_lo) = (0.0, 0.0, 0.0);
    for seed in 0..20 {
        let n = net(2, 50.0, 100 + seed);
        let s = vec![spec(ScenarioKind::A, vec![], seed)];
        let lo = evaluate_config(RadioConfig::new(-72.0, 10.0), &n, &s, &opts(w), seed);
        let hi = evaluate_config(RadioConfig::new(-72.0, 20.0), &n, &s, &opts(w), seed);
        xi_lo += lo.xi / 20.0;
        xi_hi += hi.xi / 20.0;
        c_lo += lo.outcomes[0].kpis.c / 20.0;
    }
    assert!(c_lo < 1.0, "coverage {c_lo}");
    assert!(xi_lo < xi_hi, "{xi_lo} vs {xi_hi}");
}

#[test]
fn reports_record_as_prospective_twins() {
    let n = net(2, 20.0, 6);
    let s = vec![spec(ScenarioKind::A, vec![], 1)];
    let r = evaluate_config(RadioConfig::default(), &n, &s, &opts(WeightProfile::a_only(equal_kpi())), 3);
    let mut g = TwinGraph::default();
    let before = g.state_hash();
    let ids = record_report(&mut g, &r, None).unwrap();
    assert_eq!(ids.len(), 1);
    assert_eq!(g.prospective_for(&s[0].id).len(), 1);
    assert_eq!(g.state_hash(), before);
    assert!(matches!(record_report(&mut g, &r, None), Err(Error::Conflict(_))));
}

#[test]
fn csv_and_json_export() {
    let reports = vec![report_with(-72.0, 20.0, 0.812345678)];
    let mut buf = Vec::new();
    write_reports_csv(&reports, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(
        text,
        "origin,cst_dbm,tpc_dbm,cs_a,cs_b,cs_c,cs_d,xi,valid,error\ntwin,-72,20,0.812346,,,,0.812346,true,\n"
    );
    let json = reports[0].to_json().unwrap();
    let back: EffectivenessReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back.xi, 0.812346);
}

fn unit() -> impl Strategy<Value = f64> {
    0.0..=1.0f64
}

fn simplex() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(0.01..1.0f64).prop_map(|w| {
        let s: f64 = w.iter().sum();
        let mut out = w.map(|x| x / s);
        out[3] = 1.0 - out[0] - out[1] - out[2];
        out
    })
}

fn profile(k: [f64; 4], s: [f64; 4]) -> WeightProfile {
    WeightProfile {
        kpi: KpiWeights {
            t: k[0],
            l: k[1],
            pl: k[2],
            c: k[3],
        },
        scenario: ScenarioWeights {
            a: s[0],
            b: s[1],
            c: s[2],
            d: s[3],
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn xi_stays_in_unit_interval(k in simplex(), s in simplex(), cs in prop::array::uniform4(unit())) {
        let w = profile(k, s);
        prop_assume!(w.validate().is_ok());
        let xi = effectiveness(&ScenarioScores { a: Some(cs[0]), b: Some(cs[1]), c: Some(cs[2]), d: Some(cs[3]) }, &w).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&xi));
    }

    #[test]
    fn cs_monotone_in_each_kpi(k in simplex(), m in prop::array::uniform4(unit()), i in 0usize..4, bump in 0.0..1.0f64) {
        let w = profile(k, [1.0, 0.0, 0.0, 0.0]);
        prop_assume!(w.validate().is_ok());
        let to = |v: [f64; 4]| NormalizedKpis { m_t: v[0], m_l: v[1], m_pl: v[2], m_c: v[3] };
        let mut up = m;
        up[i] = (up[i] + bump).min(1.0);
        prop_assert!(composite_score(&to(up), &w).unwrap() >= composite_score(&to(m), &w).unwrap() - 1e-15);
    }

    #[test]
    fn cs_invariant_under_joint_permutation(k in simplex(), m in prop::array::uniform4(unit()), rot in 0usize..4) {
        let to = |v: [f64; 4]| NormalizedKpis { m_t: v[0], m_l: v[1], m_pl: v[2], m_c: v[3] };
        let w = profile(k, [1.0, 0.0, 0.0, 0.0]);
        prop_assume!(w.validate().is_ok());
        let mut kr = k;
        let mut mr = m;
        kr.rotate_left(rot);
        mr.rotate_left(rot);
        let wr = profile(kr, [1.0, 0.0, 0.0, 0.0]);
        prop_assume!(wr.validate().is_ok());
        prop_assert!((composite_score(&to(m), &w).unwrap() - composite_score(&to(mr), &wr).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn xi_monotone_in_each_score(s in simplex(), cs in prop::array::uniform4(unit()), i in 0usize..4, bump in 0.0..1.0f64) {
        let w = profile([0.25; 4], s);
        prop_assume!(w.validate().is_ok());
        let sc = |v: [f64; 4]| ScenarioScores { a: Some(v[0]), b: Some(v[1]), c: Some(v[2]), d: Some(v[3]) };
        let mut up = cs;
        up[i] = (up[i] + bump).min(1.0);
        prop_assert!(effectiveness(&sc(up), &w).unwrap() >= effectiveness(&sc(cs), &w).unwrap() - 1e-15);
    }

    #[test]
    fn ranking_invariant_under_positive_scaling(xs in prop::collection::vec(0.0..1.0f64, 0..20), f in 0.05..1.0f64) {
        let tpcs = [10.0, 14.0, 20.0];
        let reports: Vec<_> = xs.iter().enumerate().map(|(i, &x)| report_with(-72.0, tpcs[i % 3], x)).collect();
        let scaled: Vec<_> = reports.iter().map(|r| EffectivenessReport { xi: r.xi * f, ..r.clone() }).collect();
        let a: Vec<_> = select_configs(&reports, 0.0).unwrap().iter().map(|r| (r.config.tpc_dbm, r.xi)).collect();
        let b: Vec<_> = select_configs(&scaled, 0.0).unwrap().iter().map(|r| (r.config.tpc_dbm, r.xi / f)).collect();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.0, y.0);
            prop_assert!((x.1 - y.1).abs() < 1e-12);
        }
    }
}
