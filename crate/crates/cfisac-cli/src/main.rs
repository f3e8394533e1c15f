//! `cfisac` command-line harness.
//!
//! Every subcommand takes `--seed`, `--config` (JSON experiment file, see
//! the README) and `--out` (output directory). The worker count comes from
//! the `CFISAC_THREADS` environment variable only.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cfisac::b2s::{run_b2s, B2sInput};
use cfisac::baselines::{SeedContext, SYSTEM_SCHEMES};
use cfisac::dolg::{self, DolgConfig, Policy};
use cfisac::harness::{self, ExperimentConfig, PolicySet};
use cfisac::rng::derive;
use cfisac::scenario::{generate_scenario, Scenario};

#[derive(Parser)]
#[command(name = "cfisac", version, about = "Terahertz cell-free ISAC laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Base seed for every random stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Experiment configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw one scenario and export geometry, visibility and channels.
    GenScenario {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate baseline schemes on paired seeds.
    EvalBaselines {
        #[command(flatten)]
        common: Common,
        /// Comma-separated scheme names, or `all`.
        #[arg(long)]
        schemes: Option<String>,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Run the joint B2S designer on one scenario and export its trace.
    RunB2s {
        #[command(flatten)]
        common: Common,
        /// Scenario file from `gen-scenario`; drawn from the config otherwise.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Train a DOLG policy and export the checkpoint and learning curve.
    TrainDolg {
        #[command(flatten)]
        common: Common,
        /// Train the encoder-free MARL variant.
        #[arg(long)]
        no_gtn: bool,
    },
    /// Evaluate a trained policy on paired seeds.
    EvalPolicy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Paired Monte-Carlo sweep over the configured schemes.
    RunSweep {
        #[command(flatten)]
        common: Common,
    },
    /// Runtime of B2S and DOLG inference against the number of APs.
    BenchRuntime {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    match &c.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn prepare(c: &Common, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    std::fs::write(c.out.join("config.json"), cfg.to_json()?)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn main() -> Result<()> {
    cfisac::par::init_from_env()?;
    match Cli::parse().cmd {
        Cmd::GenScenario { common } => gen_scenario(&common),
        Cmd::EvalBaselines { common, schemes, seeds } => eval_baselines(&common, schemes, seeds),
        Cmd::RunB2s { common, scenario } => run_b2s_cmd(&common, scenario),
        Cmd::TrainDolg { common, no_gtn } => train_dolg(&common, no_gtn),
        Cmd::EvalPolicy { common, ckpt, seeds } => eval_policy(&common, &ckpt, seeds),
        Cmd::RunSweep { common } => run_sweep(&common),
        Cmd::BenchRuntime { common } => bench_runtime(&common),
    }
}

fn gen_scenario(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    prepare(c, &cfg)?;
    let sc = generate_scenario(&cfg.scenario, &cfg.params, c.seed)?;
    let ctx = SeedContext::new(sc, &cfg.params)?;
    std::fs::write(c.out.join("scenario.json"), ctx.scenario.to_json()?)?;
    write_json(&c.out.join("mask.json"), &ctx.mask)?;
    ctx.channels.write_csv(std::fs::File::create(c.out.join("channels.csv"))?)?;
    println!("scenario seed {} written to {}", c.seed, c.out.display());
    Ok(())
}

fn eval_baselines(c: &Common, schemes: Option<String>, seeds: Option<usize>) -> Result<()> {
    let mut cfg = load_config(c)?;
    if let Some(s) = schemes {
        cfg.schemes = if s == "all" {
            SYSTEM_SCHEMES.iter().chain(&["heuristic", "zf"]).map(|x| x.to_string()).collect()
        } else {
            s.split(',').map(|x| x.trim().to_string()).collect()
        };
    }
    if let Some(n) = seeds {
        cfg.seeds = n;
    }
    if cfg.schemes.iter().any(|s| harness::LEARNED_SCHEMES.contains(&s.as_str())) {
        bail!("learned schemes need run-sweep or eval-policy");
    }
    cfg.sweep = None;
    cfg.validate()?;
    prepare(c, &cfg)?;
    let out = harness::run_sweep(&cfg, c.seed, &PolicySet::new())?;
    harness::write_sweep(&out, "none", &c.out)?;
    report_summary(&out.summary);
    Ok(())
}

fn report_summary(summary: &[harness::SummaryRow]) {
    for s in summary {
        println!(
            "{:>3} {:<10} ok {:>4} failed {:>3}  trCRB {:.4e} ± {:.2e}  EE {:.4e}  sum-rate {:.4e}",
            s.value, s.scheme, s.ok, s.failed, s.tr_crb.mean, s.tr_crb.std, s.ee.mean, s.sum_rate.mean
        );
    }
}

fn run_b2s_cmd(c: &Common, scenario: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(c)?;
    prepare(c, &cfg)?;
    let sc = match scenario {
        Some(p) => Scenario::from_json(&std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?,
        None => generate_scenario(&cfg.scenario, &cfg.params, c.seed)?,
    };
    let ctx = SeedContext::new(sc, &cfg.params)?;
    let inp = B2sInput {
        ch: &ctx.channels,
        params: &ctx.params,
        xi: ctx.mask.ue.clone(),
        sense: ctx.mask.st.clone(),
        eval_mask: ctx.mask.st.clone(),
        q_sen: ctx.pilots(&ctx.mask.st)?,
        lambda: vec![1.0; ctx.scenario.num_ues()],
        warm: None,
        seed: derive(ctx.seed, "b2s", &[]),
    };
    let o = run_b2s(&inp, &cfg.b2s)?;
    let (comm, crb) = ctx.evaluate(&o.design)?;
    o.trace.write_csv(&c.out.join("trace.csv"))?;
    o.trace.write_timing_csv(&c.out.join("timing.csv"))?;
    let power: Vec<f64> = (0..ctx.scenario.num_aps()).map(|m| o.design.ap_power(m)).collect();
    write_json(
        &c.out.join("design.json"),
        &serde_json::json!({
            "status": o.trace.status,
            "delta": o.design.delta,
            "relaxed_delta": o.relaxed_delta,
            "ap_power": power,
            "comm": comm,
            "crb": crb,
            "verify": o.report,
        }),
    )?;
    println!("B2S {}; trCRB {:.4e}, sum-rate {:.4e}", o.trace.status, crb.total_capped(), comm.sum_rate);
    Ok(())
}

fn train_dolg(c: &Common, no_gtn: bool) -> Result<()> {
    let cfg = load_config(c)?;
    prepare(c, &cfg)?;
    let dc = DolgConfig { scenario: cfg.scenario.clone(), use_gtn: !no_gtn, ..cfg.dolg.clone() };
    let (pol, curve) = dolg::train(&dc, &cfg.params, c.seed)?;
    pol.save(&c.out.join("policy.ckpt"))?;
    dolg::write_curve_csv(&curve, &c.out.join("curve.csv"))?;
    if let (Some(a), Some(b)) = (curve.first(), curve.last()) {
        println!("reward {:.4} -> {:.4}, violation {:.4} -> {:.4}", a.reward_mean, b.reward_mean, a.violation, b.violation);
    }
    Ok(())
}

fn eval_policy(c: &Common, ckpt: &Path, seeds: Option<usize>) -> Result<()> {
    let mut cfg = load_config(c)?;
    if let Some(n) = seeds {
        cfg.seeds = n;
    }
    let pol = Policy::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let name = if pol.gtn.is_some() { "dolg" } else { "marl" };
    cfg.scenario = pol.cfg.scenario.clone();
    cfg.schemes = vec![name.into()];
    cfg.sweep = None;
    cfg.validate()?;
    prepare(c, &cfg)?;
    let mut set = PolicySet::new();
    set.insert((0, name.into()), pol);
    let out = harness::run_sweep(&cfg, c.seed, &set)?;
    harness::write_sweep(&out, "none", &c.out)?;
    report_summary(&out.summary);
    Ok(())
}

fn run_sweep(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    prepare(c, &cfg)?;
    let policies = harness::train_policies(&cfg, c.seed)?;
    let out = harness::run_sweep(&cfg, c.seed, &policies)?;
    let label = cfg.sweep.as_ref().map_or("none", |s| s.var.label());
    harness::write_sweep(&out, label, &c.out)?;
    report_summary(&out.summary);
    Ok(())
}

fn bench_runtime(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    prepare(c, &cfg)?;
    let r = harness::bench_runtime(&cfg, c.seed)?;
    harness::write_csv(&r.instances, &c.out.join("bench_instances.csv"))?;
    write_json(&c.out.join("bench_timing.json"), &r)?;
    for row in &r.rows {
        println!("M {:>2}  B2S {:.4e} s  DOLG {:.4e} s  timeouts {}", row.m, row.b2s_median_s, row.dolg_median_s, row.b2s_timeouts);
    }
    println!("log-log slope: B2S {:?}, DOLG {:?}", r.b2s_slope, r.dolg_slope);
    Ok(())
}
