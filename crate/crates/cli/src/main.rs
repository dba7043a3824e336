mod annotate;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use servo_core::bench::{
    alpha_sweep, run_benchmark, trajectory_svg, write_alpha_csv, write_trajectory_csv, BenchConfig, BenchContext,
    BenchmarkReport, Stat, TrialRecord,
};
use servo_core::descriptors::{Extractor, ProviderConfig, ProviderRegistry};
use servo_core::matching::{cyclical_distance_map, select_correspondences, MatcherConfig};
use servo_core::simenv::render;
use tracing_subscriber::EnvFilter;

use annotate::{match_lines, side_by_side, MatchSummary};

#[derive(Parser)]
#[command(name = "servo", version, about = "Visual servoing simulation and benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single trial; writes its trajectory, record and the desired,
    /// initial and final views.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        #[arg(long, default_value = "servo_run")]
        out: PathBuf,
    },
    /// Run every trial and write report.json, trials.csv and trajectories.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `threads` from the config (0 = all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Overrides `trials` from the config.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Rerun the benchmark for each EMA smoothing factor.
    SweepAlpha {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Match two images and write an annotated side-by-side image plus JSON.
    Match {
        #[arg(long)]
        desired: PathBuf,
        #[arg(long)]
        current: PathBuf,
        /// Benchmark config whose provider and matcher sections are used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, trial, out } => cmd_run(&config, trial, &out),
        Command::Bench {
            config,
            out,
            threads,
            trials,
        } => cmd_bench(&config, &out, threads, trials),
        Command::SweepAlpha {
            config,
            alphas,
            out,
            trials,
        } => cmd_sweep(&config, &alphas, out.as_deref(), trials),
        Command::Match {
            desired,
            current,
            config,
            out,
            k,
            threshold,
            seed,
        } => cmd_match(&desired, &current, config.as_deref(), &out, k, threshold, seed),
    }
}

fn load_context(path: &Path, trials: Option<usize>, threads: Option<usize>) -> Result<BenchContext> {
    let mut config = BenchConfig::load(path)?;
    if let Some(n) = trials {
        config.trials = n;
    }
    if let Some(t) = threads {
        config.threads = t;
    }
    let base = path.parent().filter(|p| !p.as_os_str().is_empty());
    Ok(BenchContext::new(config, &ProviderRegistry::with_builtins(), base)?)
}

fn cmd_run(config: &Path, trial: usize, out: &Path) -> Result<()> {
    let ctx = load_context(config, None, None)?;
    let record = ctx.run_trial(trial)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let stem = format!("trial_{trial:04}");
    let f = fs::File::create(out.join(format!("{stem}.csv")))?;
    write_trajectory_csv(&record, f)?;
    fs::write(out.join(format!("{stem}.json")), serde_json::to_string_pretty(&record)?)?;
    if ctx.config.output.svg {
        fs::write(out.join(format!("{stem}.svg")), trajectory_svg(&record))?;
    }
    ctx.desired_image.save(out.join("desired.png")).context("writing desired.png")?;
    for (name, pose) in [("initial", &record.initial), ("final", &record.final_pose)] {
        let view = render(&ctx.target, &ctx.config.camera, pose)?;
        view.rgb.save(out.join(format!("{stem}_{name}.png"))).with_context(|| format!("writing {name} view"))?;
    }
    print_trial(&record);
    Ok(())
}

fn print_trial(r: &TrialRecord) {
    println!(
        "trial {}: converged={} iterations={} initial=({:.1} cm, {:.1} deg) end=({:.2} mm, {:.2} deg)",
        r.id,
        r.converged,
        r.iterations,
        r.initial_error.0 * 100.0,
        r.initial_error.1,
        r.end_error.0 * 1000.0,
        r.end_error.1,
    );
    if let Some(rot) = &r.rotation {
        println!(
            "  rotation compensation: {} deg (best of {} candidates)",
            rot.angle_deg,
            rot.scores.len()
        );
    }
    if let Some(lr) = r.length_ratio {
        println!("  length ratio: {lr:.3}");
    }
    if let Some(f) = &r.failure {
        println!("  failure: {f}");
    }
}

fn fmt_stat(s: &Option<Stat>) -> String {
    match s {
        Some(s) => format!("{:.3} ± {:.3}", s.mean, s.std),
        None => "n/a".into(),
    }
}

fn print_report(r: &BenchmarkReport) {
    println!(
        "converged {}/{} ({:.1}%), failures {}",
        r.converged, r.trials, r.convergence_rate_pct, r.failures
    );
    println!("end error (mm):   {}", fmt_stat(&r.end_error_trans_mm));
    println!("end error (deg):  {}", fmt_stat(&r.end_error_rot_deg));
    println!("{} (cm):  {}", r.ape_label, fmt_stat(&r.ape_trans_cm));
    println!("{} (deg): {}", r.ape_label, fmt_stat(&r.ape_rot_deg));
    println!("length ratio:     {}", fmt_stat(&r.length_ratio));
    println!("initial error (cm):  {}", fmt_stat(&r.initial_error_trans_cm));
    println!("initial error (deg): {}", fmt_stat(&r.initial_error_rot_deg));
}

fn cmd_bench(config: &Path, out: &Path, threads: Option<usize>, trials: Option<usize>) -> Result<()> {
    let ctx = load_context(config, trials, threads)?;
    let (report, _) = run_benchmark(&ctx, Some(out))?;
    print_report(&report);
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_sweep(config: &Path, alphas: &[f64], out: Option<&Path>, trials: Option<usize>) -> Result<()> {
    if alphas.is_empty() {
        bail!("no alphas given");
    }
    let ctx = load_context(config, trials, None)?;
    let rows = alpha_sweep(&ctx, alphas)?;
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    println!("alpha  conv%   lr_mean  lr_std  lr_all  end_mm  end_deg");
    for r in &rows {
        println!(
            "{:<5}  {:>5.1}  {:>7}  {:>6}  {:>6}  {:>6}  {:>7}",
            r.alpha,
            r.convergence_rate_pct,
            opt(r.length_ratio_mean),
            opt(r.length_ratio_std),
            opt(r.length_ratio_all_mean),
            opt(r.end_error_trans_mm),
            opt(r.end_error_rot_deg),
        );
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_alpha_csv(&rows, fs::File::create(dir.join("alpha_sweep.csv"))?)?;
        println!("wrote {}", dir.join("alpha_sweep.csv").display());
    }
    Ok(())
}

fn cmd_match(
    desired: &Path,
    current: &Path,
    config: Option<&Path>,
    out: &Path,
    k: Option<usize>,
    threshold: Option<f64>,
    seed: u64,
) -> Result<()> {
    let (provider, mut matcher) = match config {
        Some(p) => {
            let c = BenchConfig::load(p)?;
            (c.provider, c.matcher)
        }
        None => (ProviderConfig::default(), MatcherConfig::default()),
    };
    if let Some(k) = k {
        matcher.k = k;
    }
    if let Some(t) = threshold {
        matcher.threshold = t;
    }
    let open = |p: &Path| -> Result<image::RgbImage> {
        Ok(image::open(p).with_context(|| format!("reading {}", p.display()))?.to_rgb8())
    };
    let (img_d, img_c) = (open(desired)?, open(current)?);
    let extractor = Extractor::from_config(&provider, &ProviderRegistry::with_builtins())?;
    let grid_d = extractor.extract_desired(&img_d)?;
    let grid_c = extractor.extract_current(&img_c)?;
    let matches = cyclical_distance_map(&grid_d, &grid_c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let set = select_correspondences(&matches, matcher.k, matcher.threshold, &mut rng)?;
    let lines = match_lines(&set, &grid_d, &grid_c, img_d.dimensions(), img_c.dimensions())?;
    let summary = MatchSummary {
        provider: extractor.provider_name().to_string(),
        grid: [grid_d.rows(), grid_d.cols()],
        usable: matches.usable(),
        eligible: matches.eligible(matcher.threshold).len(),
        threshold: matcher.threshold,
        k: matcher.k,
        mean_cosine: set.mean_cosine(),
        matches: lines,
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let canvas = side_by_side(&img_d, &img_c, &summary.matches);
    canvas.save(out.join("match.png")).context("writing match.png")?;
    fs::write(out.join("match.json"), serde_json::to_string_pretty(&summary)?)?;
    println!(
        "{} matches ({} eligible of {} usable), mean cosine {:.3}",
        summary.matches.len(),
        summary.eligible,
        summary.usable,
        summary.mean_cosine
    );
    println!("wrote {} and {}", out.join("match.png").display(), out.join("match.json").display());
    Ok(())
}
