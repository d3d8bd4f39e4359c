use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};

use rsss::config::RunConfig;
use rsss::evaluate::{average_metrics, recovery_stats, RegimeMetrics, WindowMetrics};
use rsss::io::write_text;
use rsss::model::Layout;
use rsss::pipeline::{self, FitDocument, Job, JobEvaluation, FIT_FILE};
use rsss::RsssError;

#[derive(Parser, Debug)]
#[command(name = "rsss", version, about = "Regime-switching state-space models: simulate, fit, forecast, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Write simulated panels, truth sidecars and a manifest.
    Simulate,
    /// Estimate the model on the training window.
    Fit,
    /// Filter the full horizon with the fitted parameters.
    Forecast,
    /// Regime metrics, forecast scores and parameter recovery.
    Evaluate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let numerical = err.downcast_ref::<RsssError>().is_some_and(RsssError::is_numerical);
            ExitCode::from(if numerical { 3 } else { 2 })
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let path = cli.config.as_ref().ok_or_else(|| RsssError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.directory = out.clone();
    }
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring worker threads")?;
    }
    let out = cfg.output.directory.clone();
    match cli.command {
        Command::Simulate => {
            let manifest = pipeline::simulate_to_dir(&cfg, &out)?;
            println!(
                "simulated {} replication(s) of N={} T={} into {}",
                manifest.replications.len(),
                manifest.n_individuals,
                manifest.n_occasions,
                out.display()
            );
        }
        Command::Fit => {
            let (jobs, _) = pipeline::jobs(&cfg, &out)?;
            for job in &jobs {
                let started = Instant::now();
                let doc = pipeline::fit_job(&cfg, job).with_context(|| format!("fitting {}", job.label))?;
                println!(
                    "{}: loglik {:.4} after {} iterations (start {} of {}), {:.1} s",
                    job.label,
                    doc.loglik,
                    doc.loglik_trace.len(),
                    doc.start_index + 1,
                    doc.starts.len(),
                    started.elapsed().as_secs_f64()
                );
            }
        }
        Command::Forecast => {
            let (jobs, _) = pipeline::jobs(&cfg, &out)?;
            for job in &jobs {
                let track = pipeline::forecast_job(&cfg, job).with_context(|| format!("forecasting {}", job.label))?;
                let n_t = track.pr_s2.first().map_or(0, |r| r.len());
                println!("{}: forecasts for t = {}..={}", job.label, track.split + 1, n_t);
            }
        }
        Command::Evaluate => evaluate(&cfg, &out)?,
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn window_row(label: &str, w: &WindowMetrics) -> String {
    format!("{label},{},{},{}", opt(w.accuracy), opt(w.sensitivity), opt(w.specificity))
}

fn evaluate(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let (jobs, manifest) = pipeline::jobs(cfg, out)?;
    let mut results: Vec<(&Job, JobEvaluation)> = Vec::with_capacity(jobs.len());
    for job in &jobs {
        let ev = pipeline::evaluate_job(cfg, job).with_context(|| format!("evaluating {}", job.label))?;
        results.push((job, ev));
    }
    let runs: Vec<RegimeMetrics> = results.iter().map(|(_, e)| e.metrics).collect();
    let avg = average_metrics(&runs);

    let mut table = String::from("metric,observed,forecast\n");
    for (name, pick) in [
        ("accuracy", (|w: &WindowMetrics| w.accuracy) as fn(&WindowMetrics) -> Option<f64>),
        ("sensitivity", |w| w.sensitivity),
        ("specificity", |w| w.specificity),
    ] {
        table.push_str(&format!("{name},{},{}\n", opt(pick(&avg.observed)), opt(pick(&avg.forecast))));
    }
    write_text(&out.join("metrics.csv"), &table)?;

    let mut pooled = String::from("window,tp,fn,tn,fp,accuracy,sensitivity,specificity\n");
    for (label, w) in [("observed", &avg.observed), ("forecast", &avg.forecast)] {
        let pooled_metrics = w.counts.metrics();
        let c = &w.counts;
        pooled.push_str(&format!(
            "{label},{},{},{},{},{}\n",
            c.tp,
            c.fn_,
            c.tn,
            c.fp,
            window_row("", &pooled_metrics).trim_start_matches(',')
        ));
    }
    write_text(&out.join("metrics_pooled.csv"), &pooled)?;

    let mut by_rep = String::from("label,window,accuracy,sensitivity,specificity\n");
    let mut scores = String::from("label,t,delta\n");
    for (job, ev) in &results {
        by_rep.push_str(&format!("{}\n", window_row(&format!("{},observed", job.label), &ev.metrics.observed)));
        by_rep.push_str(&format!("{}\n", window_row(&format!("{},forecast", job.label), &ev.metrics.forecast)));
        for (t, d) in ev.score.occasions.iter().zip(&ev.score.delta) {
            scores.push_str(&format!("{},{t},{d:.8}\n", job.label));
        }
    }
    write_text(&out.join("metrics_by_replication.csv"), &by_rep)?;
    write_text(&out.join("score.csv"), &scores)?;

    println!("{}", table.trim_end());
    if let Some(manifest) = manifest {
        let layout = Layout::new(&manifest.spec)?;
        let truth = layout.constrained_values(&manifest.truth.to_parameter_set()?);
        let estimates: Vec<Option<Vec<f64>>> = jobs
            .iter()
            .map(|job| {
                FitDocument::load(&job.out_dir.join(FIT_FILE))
                    .ok()
                    .and_then(|doc| doc.params().ok())
                    .map(|p| layout.constrained_values(&p))
            })
            .collect();
        if estimates.iter().flatten().count() >= 2 {
            let rec = recovery_stats(&layout.names(), &estimates, &truth)?;
            let mut csv = String::from("parameter,truth,mean,bias,rmse,sd\n");
            for r in &rec.rows {
                csv.push_str(&format!(
                    "{},{},{:.6},{:.6},{:.6},{:.6}\n",
                    r.name, r.truth, r.mean, r.bias, r.rmse, r.sd
                ));
            }
            write_text(&out.join("recovery.csv"), &csv)?;
            println!("recovery over {} replication(s), {} failed", rec.used, rec.failed);
        }
    }
    Ok(())
}
