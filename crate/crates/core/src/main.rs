use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use nafd::baselines::{fixed_controls, greedy_modes};
use nafd::harness::{emit, realization_seed, run, ExperimentPlan};
use nafd::netgen::realize;
use nafd::oracle::{exhaustive_mode_search, mc_dl_se, mc_ul_se, MAX_EXHAUSTIVE_APS};
use nafd::perfmodel::{dl_sinr, ul_sinr, Link, Scheme};
use nafd::scasolver::{run_with_restoration, Objective, SchemeModel};

#[derive(Parser)]
#[command(name = "nafd", version, about = "NAFD cell-free massive MIMO simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment plan and write summary.csv and records.json.
    Run {
        /// JSON plan; defaults are used for missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        objective: Option<Objective>,
        /// Comma-separated subset of nafd,rvfd,gvfd,hd,fd.
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<Scheme>>,
        #[arg(long)]
        realizations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "NAFD_WORKERS", default_value_t = 1)]
        workers: usize,
        /// SCA multi-start count.
        #[arg(long)]
        starts: Option<usize>,
    },
    /// Check closed-form SEs against Monte-Carlo and, for small M, mode
    /// selection against exhaustive search.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        realizations: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
}

fn load(config: Option<PathBuf>) -> Result<ExperimentPlan> {
    match config {
        Some(p) => ExperimentPlan::load(&p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ExperimentPlan::default()),
    }
}

fn verify(plan: &ExperimentPlan, realizations: usize, samples: usize) -> Result<bool> {
    let (_, cfg) = plan.points()?.into_iter().next().context("empty plan")?;
    let mut ok = true;
    for r in 0..realizations {
        let seed = realization_seed(plan.seed, 0, r);
        let (_, ch) = realize(&cfg, seed)?;
        let sets = greedy_modes(&ch, &cfg);
        let (a, b) = sets.indicators(ch.num_aps());
        let vars = fixed_controls(&ch, &cfg, &a, &b);
        let link = Link::nafd(&cfg);
        let closed = dl_sinr(&link, &ch, &vars).into_iter().chain(ul_sinr(&link, &ch, &vars)).map(|s| link.se(s));
        let mc = mc_dl_se(&link, &ch, &vars, samples, seed).into_iter().chain(mc_ul_se(&link, &ch, &vars, samples, seed));
        let mut worst: f64 = 0.0;
        let mut inside = true;
        for (c, e) in closed.zip(mc) {
            inside &= e.contains(c);
            if c > 0.0 {
                worst = worst.max((e.se - c).abs() / c);
            }
        }
        let pass = inside && worst <= 0.02;
        ok &= pass;
        println!("{} monte-carlo realization {r}: max rel err {worst:.4}, within 3 sigma: {inside}", tag(pass));
        if ch.num_aps() <= MAX_EXHAUSTIVE_APS {
            let model = SchemeModel::nafd(&ch, &cfg, &plan.power);
            let sca = plan.sca_config(&cfg);
            let best = exhaustive_mode_search(&model, &sca, seed)?;
            let got = run_with_restoration(&model, Objective::Se, &sca, seed)?;
            let got_se = if got.result.feasible { got.result.sum_se } else { 0.0 };
            let ratio = if best.best_sum_se > 0.0 { got_se / best.best_sum_se } else { 1.0 };
            let pass = ratio >= 0.95;
            ok &= pass;
            println!("{} mode search realization {r}: sum SE {got_se:.4} vs exhaustive {:.4} (ratio {ratio:.3})", tag(pass), best.best_sum_se);
        }
    }
    Ok(ok)
}

fn tag(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { config, objective, schemes, realizations, seed, out, workers, starts } => {
            let mut plan = load(config)?;
            if let Some(o) = objective {
                plan.objective = o;
            }
            if let Some(s) = schemes {
                plan.schemes = s;
            }
            if let Some(r) = realizations {
                plan.realizations = r;
            }
            if let Some(s) = seed {
                plan.seed = s;
            }
            if let Some(o) = out {
                plan.out = Some(o);
            }
            if starts.is_some() {
                plan.starts = starts;
            }
            let Some(dir) = plan.out.clone() else { bail!("no output directory (use --out or set `out` in the plan)") };
            let output = run(&plan, workers)?;
            emit(&output, &dir)?;
            for row in &output.summary {
                println!(
                    "{:>8} {:<5} sum SE {:.4} ± {:.4}  EE {:.4e}  infeasible {:.2}",
                    row.sweep_value.map_or("-".to_string(), |v| v.to_string()),
                    row.scheme,
                    row.mean_sum_se,
                    row.se_std_err,
                    row.mean_ee,
                    row.infeasible_rate
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { config, realizations, samples } => {
            let plan = load(config)?;
            Ok(if verify(&plan, realizations, samples)? { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}
