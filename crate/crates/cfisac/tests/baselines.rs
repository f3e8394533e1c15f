use cfisac::b2s::B2sConfig;
use cfisac::baselines::*;
use cfisac::scenario::{dist, generate_scenario, ScenarioConfig};
use cfisac::SystemParams;
use proptest::prelude::*;

fn ctx(seed: u64, k: usize) -> SeedContext {
    let params = SystemParams::default();
    let cfg = ScenarioConfig { num_ues: k, ..Default::default() };
    SeedContext::new(generate_scenario(&cfg, &params, seed).unwrap(), &params).unwrap()
}

fn eval(name: &str, c: &SeedContext) -> SchemeResult {
    evaluate_scheme(&SchemeSpec::parse(name).unwrap(), c, &B2sConfig::default(), None, None).unwrap()
}

#[test]
fn heuristic_spends_the_beam_budget() {
    for seed in 0..10 {
        let c = ctx(seed, 3);
        let r = eval("heuristic", &c);
        let p = &c.params;
        for m in 0..c.scenario.num_aps() {
            let serves = c.mask.ue[m].iter().any(|&x| x);
            let beams: f64 = r.design.w[m].iter().map(|w| w.norm_squared()).sum();
            if serves {
                assert!((beams - p.p_max() * (1.0 - p.rho_sen)).abs() <= 1e-9 * p.p_max());
            } else {
                assert_eq!(beams, 0.0);
            }
            assert!(r.design.ap_power(m) <= p.p_max() * (1.0 + 1e-12));
        }
    }
}

#[test]
fn zf_nulls_interference_at_each_ap() {
    for seed in 0..10 {
        let c = ctx(seed, 3);
        let r = eval("zf", &c);
        for m in 0..c.scenario.num_aps() {
            for k in 0..3 {
                for j in (0..3).filter(|&j| j != k && c.mask.ue[m][j] && c.mask.ue[m][k]) {
                    let h = &c.channels.ue[m][j].h;
                    let w = &r.design.w[m][k];
                    assert!(h.dotc(w).norm() <= 1e-8 * h.norm() * w.norm().max(f64::MIN_POSITIVE));
                }
            }
        }
    }
}

#[test]
fn multicell_designs_use_one_serving_ap() {
    let c = ctx(3, 4);
    let mc = multicell_association(&c.scenario, &c.mask);
    let r = eval("mc_isac", &c);
    for k in 0..4 {
        let serving: Vec<usize> = (0..c.scenario.num_aps()).filter(|&m| r.design.delta[m][k] > 0.0).collect();
        assert!(serving.len() <= 1);
        for m in serving {
            assert!(mc.ue[m][k]);
        }
    }
}

#[test]
fn schemes_share_the_realisation() {
    let c = ctx(9, 2);
    let a = eval("heuristic", &c);
    let b = eval("cf_fixed", &c);
    assert_eq!(a.crb.per_st.len(), b.crb.per_st.len());
    assert_eq!(a.design.q_sen, b.design.q_sen);
}

#[test]
fn invalid_combinations_are_rejected() {
    assert!(SchemeSpec::parse("nope").is_err());
    let bad = SchemeSpec::new(Architecture::CellFree, DesignMode::Joint, Beamformer::Mrt);
    assert!(evaluate_scheme(&bad, &ctx(1, 2), &B2sConfig::default(), None, None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn multicell_association_is_a_function(seed in 0u64..10_000, k in 1usize..6) {
        let c = ctx(seed, k);
        let mc = multicell_association(&c.scenario, &c.mask);
        for k in 0..k {
            let serving: Vec<usize> = (0..c.scenario.num_aps()).filter(|&m| mc.ue[m][k]).collect();
            prop_assert_eq!(serving.len(), 1);
            let m = serving[0];
            prop_assert!(c.mask.ue[m][k]);
            let u = c.scenario.ue_positions[k];
            let d = |a: usize| dist(c.scenario.ap_positions[a], u);
            prop_assert!((0..c.scenario.num_aps()).all(|a| d(m) <= d(a)));
        }
    }

    #[test]
    fn mrt_budget_is_exact(seed in 0u64..10_000, p in 0.01f64..10.0) {
        let c = ctx(seed, 3);
        let b = vec![p; c.scenario.num_aps()];
        let w = mrt_beamformers(&c.channels, &c.mask.ue, &b);
        for m in 0..c.scenario.num_aps() {
            let s: f64 = w[m].iter().map(|v| v.norm_squared()).sum();
            if c.mask.ue[m].iter().any(|&x| x) {
                prop_assert!((s - p).abs() <= 1e-12 * p);
            } else {
                prop_assert_eq!(s, 0.0);
            }
        }
    }
}
