use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::{info, warn};

use svyacd::io::{column_levels, load_dataset_csv, run_loaded, AnalysisConfig, SimFile};
use svyacd::simulator::{run_sensitivity, run_study, SimResult};

#[derive(Parser)]
#[command(name = "svyacd", version, about = "Average controlled difference under group-dependent selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured estimator battery on a CSV file.
    Estimate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        /// Output directory for report.csv and report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo study.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=8))]
        setting: Option<u8>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check that a dataset and config load, without estimating.
    Validate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
    },
}

fn data_path(cli: Option<PathBuf>, cfg: &AnalysisConfig) -> Result<PathBuf> {
    match (cli, &cfg.data) {
        (Some(p), _) => Ok(p),
        (None, Some(p)) => Ok(PathBuf::from(p)),
        (None, None) => bail!("no data file: pass --data or set `data` in the config"),
    }
}

fn out_dir(cli: Option<PathBuf>, cfg: Option<&String>) -> PathBuf {
    cli.or_else(|| cfg.map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("."))
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let p = dir.join(name);
    fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
    info!("wrote {}", p.display());
    Ok(())
}

fn estimate(data: Option<PathBuf>, config: &Path, out: Option<PathBuf>) -> Result<bool> {
    let cfg = AnalysisConfig::from_path(config)?;
    let path = data_path(data, &cfg)?;
    let loaded = load_dataset_csv(&path, &cfg)?;
    eprintln!("{}", loaded.summary());
    let report = run_loaded(&cfg, &loaded);
    let dir = out_dir(out, cfg.output_dir.as_ref());
    write(&dir, "report.csv", &report.to_csv()?)?;
    write(&dir, "report.json", &report.to_json()?)?;

    println!("{:<14} {:>10} {:>9} {:>10} {:>10}", "method", "acd", "se", "ci_low", "ci_high");
    let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    for r in &report.rows {
        match &r.error {
            None => println!(
                "{:<14} {:>10} {:>9} {:>10} {:>10}",
                r.method.tag(),
                f(r.acd),
                f(r.se),
                f(r.ci_low),
                f(r.ci_high)
            ),
            Some(e) => println!("{:<14} failed: {e}", r.method.tag()),
        }
    }
    Ok(!report.any_failed())
}

fn simulate(
    config: &Path,
    setting: Option<u8>,
    reps: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<bool> {
    let file = SimFile::from_path(config)?;
    let mut sim = file.sim.clone();
    if let Some(id) = setting {
        sim = sim.with_setting(id)?;
    }
    if let Some(r) = reps {
        sim.n_reps = r;
    }
    if let Some(s) = seed {
        sim.seed = s;
    }
    sim.validate()?;
    info!("simulating N={} reps={} seed={}", sim.n_pop, sim.n_reps, sim.seed);

    let results: Vec<SimResult> = match &file.gamma_ax_sweep {
        Some(g) => run_sensitivity(&sim, g)?,
        None => vec![run_study(&sim)?],
    };

    let mut summary = String::new();
    let mut per_rep = String::new();
    for (k, r) in results.iter().enumerate() {
        let s = r.summary_csv()?;
        summary += if k == 0 { &s } else { s.split_once('\n').map_or("", |(_, rest)| rest) };
        if file.per_rep {
            let body = r.per_rep_csv()?;
            // Prefix the interaction value so sweeps stay distinguishable.
            for (i, line) in body.lines().enumerate() {
                if i == 0 {
                    if k == 0 {
                        per_rep += &format!("gamma_ax,{line}\n");
                    }
                } else {
                    per_rep += &format!("{},{line}\n", r.gamma_ax);
                }
            }
        }
    }
    let dir = out_dir(out, file.output_dir.as_ref());
    write(&dir, "report.csv", &summary)?;
    write(&dir, "report.json", &serde_json::to_string_pretty(&results)?)?;
    if file.per_rep {
        write(&dir, "per_rep.csv", &per_rep)?;
    }

    let mut ok = true;
    for r in &results {
        println!("gamma_ax={} true_acd={:.4} mean_n={:.1}", r.gamma_ax, r.true_acd, r.mean_sample_size);
        println!(
            "  {:<14} {:>8} {:>10} {:>9} {:>9} {:>9}",
            "method", "n_ok", "bias", "pct_bias", "coverage", "mc_sd"
        );
        for m in &r.methods {
            println!(
                "  {:<14} {:>8} {:>10.4} {:>9.2} {:>9.3} {:>9.4}",
                m.method.tag(),
                m.n_ok,
                m.bias,
                m.percent_bias,
                m.coverage,
                m.mc_se
            );
            if m.n_failed > 0 {
                warn!("{}: {} replicates failed", m.method.tag(), m.n_failed);
            }
            if m.n_ok == 0 {
                ok = false;
            }
        }
    }
    Ok(ok)
}

fn validate(data: Option<PathBuf>, config: &Path) -> Result<()> {
    let cfg = AnalysisConfig::from_path(config)?;
    let path = data_path(data, &cfg)?;
    let loaded = load_dataset_csv(&path, &cfg)?;
    println!("{}", loaded.summary());
    let d = &loaded.data;
    let n1 = d.a.iter().filter(|&&a| a == 1).count();
    println!("group sizes: a=0 {}, a=1 {}", d.n() - n1, n1);
    if let Some((l0, l1)) = &loaded.group_levels {
        println!("group coding: {l0} -> 0, {l1} -> 1");
    }
    for (name, levels) in column_levels(&loaded) {
        println!("covariate {name}: {levels} distinct values");
    }
    println!("methods: {}", cfg.methods.iter().map(|m| m.tag()).collect::<Vec<_>>().join(", "));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate { data, config, out } => estimate(data, &config, out),
        Command::Simulate {
            config,
            setting,
            reps,
            seed,
            out,
        } => simulate(&config, setting, reps, seed, out),
        Command::Validate { data, config } => validate(data, &config).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
