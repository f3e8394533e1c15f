//! Experiment orchestration: configuration, paired Monte-Carlo sweeps,
//! runtime benchmarks and tidy exports.
//!
//! Every scheme at a given `(sweep value, seed index)` sees the same
//! scenario and channels. Result tables never contain wall-clock numbers;
//! timings go to separate files so that repeated runs are byte-identical.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::b2s::B2sConfig;
use crate::baselines::{evaluate_scheme, SchemeSpec, SeedContext};
use crate::dolg::{self, DolgConfig, Env, Policy};
use crate::error::{Error, Result};
use crate::fim::CrbReport;
use crate::par;
use crate::rng::derive;
use crate::scenario::{generate_scenario, Scenario, ScenarioConfig};
use crate::signal::CommReport;
use crate::SystemParams;

/// Learned schemes accepted next to the baseline names.
pub const LEARNED_SCHEMES: [&str; 2] = ["dolg", "marl"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVar {
    K,
    M,
}

impl SweepVar {
    pub fn label(self) -> &'static str {
        match self {
            SweepVar::K => "K",
            SweepVar::M => "M",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub var: SweepVar,
    pub values: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub m_values: Vec<usize>,
    pub num_ues: usize,
    pub reps: usize,
    /// Inference calls averaged inside one DOLG timing sample.
    pub inner: usize,
    /// Instances slower than this are recorded as timed out and the
    /// remaining repetitions at that size are skipped.
    pub timeout_s: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { m_values: vec![2, 4, 8], num_ues: 2, reps: 3, inner: 20, timeout_s: 600.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub params: SystemParams,
    pub schemes: Vec<String>,
    pub seeds: usize,
    /// `None` evaluates the scenario configuration as is.
    pub sweep: Option<Sweep>,
    pub b2s: B2sConfig,
    pub dolg: DolgConfig,
    /// Feed encoder slack weights and warm starts to B2S.
    pub gtn_hints: bool,
    pub bench: BenchConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            params: SystemParams::default(),
            schemes: vec!["cf_joint".into(), "heuristic".into()],
            seeds: 200,
            sweep: None,
            b2s: B2sConfig::default(),
            dolg: DolgConfig::toy(),
            gtn_hints: false,
            bench: BenchConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("scheme list is empty".into()));
        }
        for s in &self.schemes {
            if !LEARNED_SCHEMES.contains(&s.as_str()) {
                SchemeSpec::parse(s)?.validate()?;
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() || sw.values.contains(&0) {
                return Err(Error::Config("sweep values must be nonempty and positive".into()));
            }
        }
        if self.bench.m_values.is_empty() || self.bench.reps == 0 {
            return Err(Error::Config("benchmark needs M values and repetitions".into()));
        }
        self.params.validate()
    }

    /// Scenario recipe at one sweep point.
    pub fn scenario_at(&self, value: Option<usize>) -> ScenarioConfig {
        let mut sc = self.scenario.clone();
        match (self.sweep.as_ref().map(|s| s.var), value) {
            (Some(SweepVar::K), Some(v)) => sc.num_ues = v,
            (Some(SweepVar::M), Some(v)) => sc.num_aps = v,
            _ => {}
        }
        sc
    }

    fn points(&self) -> Vec<Option<usize>> {
        match &self.sweep {
            Some(s) => s.values.iter().map(|&v| Some(v)).collect(),
            None => vec![None],
        }
    }
}

/// Scenario seed for seed index `i`; shared by all schemes and sweep points.
pub fn scenario_seed(base: u64, i: usize) -> u64 {
    derive(base, "scenario", &[i as u64])
}

/// First feasible scenario for seed index `i`.
pub fn paired_scenario(cfg: &ScenarioConfig, params: &SystemParams, base: u64, i: usize) -> Result<Scenario> {
    generate_scenario(cfg, params, scenario_seed(base, i))
}

/// One tidy result row. Failed evaluations carry `status = "error"` and
/// NaN metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_var: String,
    pub value: usize,
    pub seed_index: usize,
    pub scenario_seed: u64,
    pub scheme: String,
    pub status: String,
    pub tr_crb: f64,
    pub sum_rate: f64,
    pub ee: f64,
    pub p_tot: f64,
    pub min_sinr: f64,
    pub sinr_ok: bool,
    pub crb_ok: bool,
    pub iterations: usize,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub value: usize,
    pub seed_index: usize,
    pub scheme: String,
    pub runtime_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub value: usize,
    pub scheme: String,
    pub ok: usize,
    pub failed: usize,
    pub tr_crb: Stat,
    pub ee: Stat,
    pub sum_rate: Stat,
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub rows: Vec<ResultRow>,
    pub timing: Vec<TimingRow>,
    pub summary: Vec<SummaryRow>,
}

/// Policies used by the learned schemes, keyed by sweep value.
pub type PolicySet = BTreeMap<(usize, String), Policy>;

fn row_from(
    label: &str,
    value: usize,
    i: usize,
    seed: u64,
    scheme: &str,
    comm: &CommReport,
    crb: &CrbReport,
    params: &SystemParams,
    iterations: usize,
    note: String,
) -> ResultRow {
    let min_sinr = comm.sinr.iter().copied().fold(f64::INFINITY, f64::min);
    ResultRow {
        sweep_var: label.into(),
        value,
        seed_index: i,
        scenario_seed: seed,
        scheme: scheme.into(),
        status: "ok".into(),
        tr_crb: crb.total_capped(),
        sum_rate: comm.sum_rate,
        ee: comm.ee,
        p_tot: comm.p_tot,
        min_sinr,
        sinr_ok: comm.sinr.iter().all(|&g| g >= params.gamma_th() * (1.0 - 1e-6)),
        crb_ok: crb.per_st.iter().all(|s| s.meets_eps),
        iterations,
        note,
    }
}

fn failed_row(label: &str, value: usize, i: usize, seed: u64, scheme: &str, e: &Error) -> ResultRow {
    ResultRow {
        sweep_var: label.into(),
        value,
        seed_index: i,
        scenario_seed: seed,
        scheme: scheme.into(),
        status: "error".into(),
        tr_crb: f64::NAN,
        sum_rate: f64::NAN,
        ee: f64::NAN,
        p_tot: f64::NAN,
        min_sinr: f64::NAN,
        sinr_ok: false,
        crb_ok: false,
        iterations: 0,
        note: e.to_string(),
    }
}

/// Trains the policies the learned schemes need at every sweep point.
pub fn train_policies(cfg: &ExperimentConfig, seed: u64) -> Result<PolicySet> {
    let mut out = PolicySet::new();
    for v in cfg.points() {
        for name in cfg.schemes.iter().filter(|s| LEARNED_SCHEMES.contains(&s.as_str())) {
            let dc = DolgConfig { scenario: cfg.scenario_at(v), use_gtn: name == "dolg", ..cfg.dolg.clone() };
            let key = derive(seed, "policy", &[v.unwrap_or(0) as u64]);
            let (p, _) = dolg::train(&dc, &cfg.params, key)?;
            out.insert((v.unwrap_or(0), name.clone()), p);
        }
    }
    Ok(out)
}

/// Evaluates every scheme on `cfg.seeds` paired realisations per sweep
/// point. Failures are recorded per `(seed, scheme)` and the run continues.
pub fn run_sweep(cfg: &ExperimentConfig, seed: u64, policies: &PolicySet) -> Result<SweepOutput> {
    cfg.validate()?;
    let label = cfg.sweep.as_ref().map_or("none", |s| s.var.label());
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    for v in cfg.points() {
        let sc_cfg = cfg.scenario_at(v);
        let value = v.unwrap_or(0);
        let per_seed: Vec<Vec<(ResultRow, Option<TimingRow>)>> = par::map_range(cfg.seeds, |i| {
            let sseed = scenario_seed(seed, i);
            let ctx = paired_scenario(&sc_cfg, &cfg.params, seed, i).and_then(|sc| SeedContext::new(sc, &cfg.params));
            let ctx = match ctx {
                Ok(c) => c,
                Err(e) => return cfg.schemes.iter().map(|s| (failed_row(label, value, i, sseed, s, &e), None)).collect(),
            };
            cfg.schemes.iter().map(|s| eval_one(cfg, label, value, i, &ctx, s, policies)).collect()
        });
        for r in per_seed.into_iter().flatten() {
            rows.push(r.0);
            timing.extend(r.1);
        }
    }
    let summary = summarize(&rows);
    Ok(SweepOutput { rows, timing, summary })
}

fn eval_one(
    cfg: &ExperimentConfig,
    label: &str,
    value: usize,
    i: usize,
    ctx: &SeedContext,
    scheme: &str,
    policies: &PolicySet,
) -> (ResultRow, Option<TimingRow>) {
    let sseed = ctx.seed;
    let res = if LEARNED_SCHEMES.contains(&scheme) {
        match policies.get(&(value, scheme.to_string())) {
            None => Err(Error::Config(format!("no trained policy for {scheme} at {label}={value}"))),
            Some(p) => dolg::evaluate(p, ctx).map(|ev| {
                let note = if ev.hard_ok { String::new() } else { "hard constraint violated".into() };
                (row_from(label, value, i, sseed, scheme, &ev.comm, &ev.crb, &cfg.params, 0, note), ev.runtime_s)
            }),
        }
    } else {
        let hints = if cfg.gtn_hints {
            hint_policy(cfg, ctx).and_then(|p| p.b2s_hints(&Env::new(ctx.clone())?)).ok().flatten()
        } else {
            None
        };
        let (lam, warm) = match hints {
            Some((l, w)) => (Some(l), Some(w)),
            None => (None, None),
        };
        SchemeSpec::parse(scheme)
            .and_then(|spec| evaluate_scheme(&spec, ctx, &cfg.b2s, lam.as_deref(), warm))
            .map(|r| (row_from(label, value, i, sseed, scheme, &r.comm, &r.crb, &cfg.params, r.b2s_iterations, r.fallback), r.runtime_s))
    };
    match res {
        Ok((row, t)) => (row, Some(TimingRow { value, seed_index: i, scheme: scheme.into(), runtime_s: t })),
        Err(e) => (failed_row(label, value, i, sseed, scheme, &e), None),
    }
}

/// Seeded, untrained encoder used for B2S hints.
fn hint_policy(cfg: &ExperimentConfig, ctx: &SeedContext) -> Result<Policy> {
    let sc = &ctx.scenario;
    let ant: Vec<usize> = (0..sc.num_aps()).map(|m| sc.antennas(m)).collect();
    let dc = DolgConfig { use_gtn: true, ..cfg.dolg.clone() };
    Policy::new(&dc, &ant, sc.num_ues(), sc.num_sts(), derive(ctx.seed, "gtn-hints", &[]))
}

/// Mean ± std per `(value, scheme)` over successful rows, in first-seen
/// order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, String)> = Vec::new();
    for r in rows {
        let k = (r.value, r.scheme.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(value, scheme)| {
            let sel: Vec<&ResultRow> = rows.iter().filter(|r| r.value == value && r.scheme == scheme).collect();
            let ok: Vec<&&ResultRow> = sel.iter().filter(|r| r.status == "ok").collect();
            let col = |f: fn(&ResultRow) -> f64| Stat::of(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
            SummaryRow {
                value,
                scheme,
                ok: ok.len(),
                failed: sel.len() - ok.len(),
                tr_crb: col(|r| r.tr_crb),
                ee: col(|r| r.ee),
                sum_rate: col(|r| r.sum_rate),
            }
        })
        .collect()
}

/// Plot-ready series: one entry per scheme with x values and statistics.
pub fn summary_json(label: &str, summary: &[SummaryRow]) -> serde_json::Value {
    let mut series = serde_json::Map::new();
    for s in summary {
        let e = series.entry(s.scheme.clone()).or_insert_with(|| {
            serde_json::json!({ "x": [], "tr_crb_mean": [], "tr_crb_std": [], "ee_mean": [], "ee_std": [], "sum_rate_mean": [], "sum_rate_std": [], "ok": [], "failed": [] })
        });
        let push = |e: &mut serde_json::Value, k: &str, v: serde_json::Value| e[k].as_array_mut().unwrap().push(v);
        push(e, "x", s.value.into());
        for (k, st) in [("tr_crb", &s.tr_crb), ("ee", &s.ee), ("sum_rate", &s.sum_rate)] {
            push(e, &format!("{k}_mean"), finite(st.mean));
            push(e, &format!("{k}_std"), finite(st.std));
        }
        push(e, "ok", s.ok.into());
        push(e, "failed", s.failed.into());
    }
    serde_json::json!({ "sweep_var": label, "series": series })
}

fn finite(x: f64) -> serde_json::Value {
    if x.is_finite() {
        x.into()
    } else {
        serde_json::Value::Null
    }
}

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `results.csv`, `summary.json` and `timing.csv` into `dir`.
pub fn write_sweep(out: &SweepOutput, label: &str, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv(&out.rows, &dir.join("results.csv"))?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary_json(label, &out.summary))?)?;
    write_csv(&out.timing, &dir.join("timing.csv"))?;
    Ok(())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Deterministic description of one benchmark instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchInstance {
    pub m: usize,
    pub rep: usize,
    pub scenario_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub m: usize,
    pub b2s_median_s: f64,
    pub dolg_median_s: f64,
    pub b2s_timeouts: usize,
    pub b2s_failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub instances: Vec<BenchInstance>,
    pub rows: Vec<BenchRow>,
    pub b2s_slope: Option<f64>,
    pub dolg_slope: Option<f64>,
}

/// Wall-clock medians of one B2S solve and one DOLG inference step over
/// `M ∈ bench.m_values`, run sequentially so timings are not contended.
pub fn bench_runtime(cfg: &ExperimentConfig, seed: u64) -> Result<BenchReport> {
    cfg.validate()?;
    let b = &cfg.bench;
    let spec = SchemeSpec::parse("cf_joint")?;
    let mut instances = Vec::new();
    let mut rows = Vec::new();
    for &m in &b.m_values {
        let sc_cfg = ScenarioConfig { num_aps: m, num_ues: b.num_ues, ..cfg.scenario.clone() };
        let (mut tb, mut td) = (Vec::new(), Vec::new());
        let (mut timeouts, mut failures) = (0, 0);
        for rep in 0..b.reps {
            let sseed = derive(seed, "bench", &[m as u64, rep as u64]);
            instances.push(BenchInstance { m, rep, scenario_seed: sseed });
            let ctx = SeedContext::new(generate_scenario(&sc_cfg, &cfg.params, sseed)?, &cfg.params)?;
            let env = Env::new(ctx.clone())?;
            let ant: Vec<usize> = (0..m).map(|a| ctx.scenario.antennas(a)).collect();
            let pol = Policy::new(&DolgConfig { use_gtn: true, ..cfg.dolg.clone() }, &ant, b.num_ues, ctx.scenario.num_sts(), sseed)?;
            let mut acc = 0.0;
            for _ in 0..b.inner.max(1) {
                acc += dolg::inference_time(&pol, &env)?;
            }
            td.push(acc / b.inner.max(1) as f64);
            if timeouts > 0 {
                continue;
            }
            let t0 = Instant::now();
            let r = evaluate_scheme(&spec, &ctx, &cfg.b2s, None, None);
            let t = t0.elapsed().as_secs_f64();
            match r {
                Ok(r) if r.fallback.is_empty() => tb.push(t),
                _ => failures += 1,
            }
            if t > b.timeout_s {
                timeouts += 1;
            }
        }
        rows.push(BenchRow { m, b2s_median_s: median(&mut tb), dolg_median_s: median(&mut td), b2s_timeouts: timeouts, b2s_failures: failures });
    }
    let ms: Vec<f64> = rows.iter().map(|r| r.m as f64).collect();
    let b2s_slope = loglog_slope(&ms, &rows.iter().map(|r| r.b2s_median_s).collect::<Vec<_>>());
    let dolg_slope = loglog_slope(&ms, &rows.iter().map(|r| r.dolg_median_s).collect::<Vec<_>>());
    Ok(BenchReport { instances, rows, b2s_slope, dolg_slope })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.7)).collect();
        assert!((loglog_slope(&x, &y).unwrap() - 1.7).abs() < 1e-12);
        assert!(loglog_slope(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn unknown_scheme_is_rejected() {
        let cfg = ExperimentConfig { schemes: vec!["nope".into()], ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
