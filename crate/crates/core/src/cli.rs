//! Command-line front end. Every subcommand writes into a fresh
//! `run-NNNN` directory under the output directory.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::copula::{PairMode, Variant};
use crate::error::{Error, Result};
use crate::estimator::{bootstrap, to_data_scale, BootstrapResult, NeuralEstimator};
use crate::marginal::MarginalSpec;
use crate::panel::{export_files, Scale};
use crate::rng::Stream;
use crate::tail::{chi_grid, verify_dependence_classes, VerifyConfig};
use crate::workbench::pipelines::{self, FitReport};
use crate::workbench::{derive_seed, load_data, next_run_dir, RunConfig};

const TAG_SIMULATE: u64 = 6;

#[derive(Debug, Parser)]
#[command(name = "scalemix", version, about = "Space-time scale-mixture copulas for extremes")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// JSON run configuration; defaults apply when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (all cores when absent).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print progress messages.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a panel from the configured copula and margins.
    Simulate {
        #[arg(long)]
        years: Option<usize>,
        /// Keep values on the uniform scale.
        #[arg(long)]
        uniform: bool,
    },
    /// Train a neural estimator for the data's layout.
    Train {
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Two-step fit with bootstrap intervals.
    Fit {
        #[arg(long)]
        estimator: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        b: Option<usize>,
    },
    /// Parametric bootstrap around a previous fit.
    Bootstrap {
        #[arg(long)]
        estimator: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        b: Option<usize>,
    },
    /// Cross-validated comparison of candidate variants.
    Select {
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        mc: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        candidates: Option<Vec<Variant>>,
        #[arg(long)]
        holdout: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Site-wise GPD fits, empirical chi grid with bands, and neighbourhood chi.
    Diagnose,
    /// Monte Carlo check of the asymptotic dependence classes.
    VerifyClasses {
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Simulate consecutive days on a lattice covering the stations.
    Storm {
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        lattice: Option<usize>,
        #[arg(long)]
        replicates: Option<usize>,
    },
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(dir) => {
            println!("outputs written to {}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

/// Applies overrides, validates, runs, and returns the run directory.
pub fn execute(cli: Cli) -> Result<PathBuf> {
    let mut cfg = load_config(&cli.global)?;
    apply_overrides(&mut cfg, &cli.command);
    cfg.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.global.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let dir = next_run_dir(&cfg.output_dir)?;
    write_json(&dir.join("config.json"), &cfg)?;
    pool.install(|| dispatch(&cfg, &cli.command, &dir))?;
    Ok(dir)
}

fn apply_overrides(cfg: &mut RunConfig, cmd: &Command) {
    match cmd {
        Command::Simulate { years, uniform } => {
            if let Some(y) = years {
                cfg.simulate.n_years = *y;
            }
            cfg.simulate.uniform |= uniform;
        }
        Command::Train { variant, k } => {
            if let Some(v) = variant {
                cfg.copula.variant = *v;
            }
            if let Some(k) = k {
                cfg.budgets.k = *k;
            }
        }
        Command::Fit { estimator, k, b } => {
            if let Some(e) = estimator {
                cfg.estimator = Some(e.clone());
            }
            if let Some(k) = k {
                cfg.budgets.k = *k;
            }
            if let Some(b) = b {
                cfg.budgets.b = *b;
            }
        }
        Command::Bootstrap { b, .. } => {
            if let Some(b) = b {
                cfg.budgets.b = *b;
            }
        }
        Command::Select {
            folds,
            mc,
            candidates,
            holdout,
            k,
        } => {
            if let Some(f) = folds {
                cfg.budgets.select_folds = *f;
            }
            if let Some(m) = mc {
                cfg.budgets.select_mc = *m;
            }
            if let Some(c) = candidates {
                cfg.select.candidates = c.clone();
            }
            if let Some(h) = holdout {
                cfg.select.holdout_years = *h;
            }
            if let Some(k) = k {
                cfg.budgets.k = *k;
            }
        }
        Command::Diagnose => {}
        Command::VerifyClasses {
            variant,
            delta,
            replicates,
        } => {
            if let Some(v) = variant {
                cfg.copula.variant = *v;
            }
            if let Some(d) = delta {
                cfg.copula.delta = *d;
            }
            if let Some(r) = replicates {
                cfg.budgets.verify_replicates = *r;
            }
        }
        Command::Storm {
            days,
            lattice,
            replicates,
        } => {
            if let Some(d) = days {
                cfg.storm.n_days = *d;
            }
            if let Some(l) = lattice {
                cfg.storm.lattice = *l;
            }
            if let Some(r) = replicates {
                cfg.storm.replicates = *r;
            }
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_estimator(path: &Path) -> Result<NeuralEstimator> {
    NeuralEstimator::from_json(&std::fs::read_to_string(path)?)
}

fn write_bootstrap_csv(path: &Path, boot: &BootstrapResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["replicate", "delta", "phi", "psi1", "psi2", "sigma", "xi"])?;
    for (i, d) in boot.draws.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(d.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn dispatch(cfg: &RunConfig, cmd: &Command, dir: &Path) -> Result<()> {
    match cmd {
        Command::Simulate { .. } => {
            let layout = load_data(cfg)?.layout;
            let mut sim = crate::copula::CopulaSimulator::new(&cfg.copula, &layout)?;
            let root = Stream::root(derive_seed(cfg.seed, TAG_SIMULATE));
            let uniform = sim.panel(&layout, cfg.simulate.n_years, root)?;
            let panel = if cfg.simulate.uniform {
                uniform
            } else {
                let plane = cfg.marginal.threshold_plane;
                let m = MarginalSpec {
                    p: cfg.marginal.p,
                    mu: layout.sites.iter().map(|s| plane[0] + plane[1] * s.x_km + plane[2] * s.y_km).collect(),
                    sigma: cfg.marginal.sigma,
                    xi: cfg.marginal.xi,
                };
                to_data_scale(&uniform, &m)?
            };
            export_files(&panel, &dir.join("stations.csv"), &dir.join("values.csv"))
        }
        Command::Train { .. } => {
            let data = load_data(cfg)?;
            let est = pipelines::train_estimator(cfg, cfg.copula.variant, &data.layout, data.n_years())?;
            std::fs::write(dir.join("estimator.json"), est.to_json()?)?;
            std::fs::write(dir.join("loss_curve.csv"), est.curve.to_csv())?;
            Ok(())
        }
        Command::Fit { .. } => {
            let data = load_data(cfg)?;
            let est = cfg.estimator.as_deref().map(read_estimator).transpose()?;
            let loaded = est.is_some();
            let out = pipelines::pipeline_fit(cfg, &data, est)?;
            write_json(&dir.join("report.json"), &out.report)?;
            if let Some(b) = &out.bootstrap {
                write_bootstrap_csv(&dir.join("bootstrap.csv"), b)?;
            }
            if !loaded {
                std::fs::write(dir.join("estimator.json"), out.estimator.to_json()?)?;
                std::fs::write(dir.join("loss_curve.csv"), out.estimator.curve.to_csv())?;
            }
            print_report(&out.report);
            Ok(())
        }
        Command::Bootstrap { estimator, report, .. } => {
            let est = read_estimator(estimator)?;
            let rep: FitReport = serde_json::from_str(&std::fs::read_to_string(report)?)?;
            let marginal = rep.marginal_spec(&est.layout);
            let boot = bootstrap(
                &est,
                rep.theta_d(),
                marginal.as_ref(),
                cfg.budgets.b,
                cfg.budgets.bootstrap_level,
                derive_seed(cfg.seed, 2),
            )
            .map_err(|e| e.in_stage("bootstrap"))?;
            write_bootstrap_csv(&dir.join("bootstrap.csv"), &boot)?;
            write_json(&dir.join("intervals.json"), &boot.intervals)?;
            Ok(())
        }
        Command::Select { .. } => {
            let data = load_data(cfg)?;
            let rep = pipelines::pipeline_model_select_cfg(cfg, &data)?;
            for s in &rep.scores {
                println!("{}: mean RMSE {:.5}", s.model, s.mean_rmse);
            }
            println!("selected {}", rep.best);
            write_json(&dir.join("select.json"), &rep)
        }
        Command::Diagnose => {
            let data = load_data(cfg)?;
            let rep = pipelines::pipeline_diagnose(cfg, &data)?;
            rep.chi_grid.write_csv(BufWriter::new(File::create(dir.join("chi_grid.csv"))?))?;
            let plain = chi_grid(&data, &cfg.grid)?;
            if plain.clipped > 0 {
                log::warn!("{} chi estimates were clipped to 1", plain.clipped);
            }
            write_json(&dir.join("diagnose.json"), &rep)
        }
        Command::VerifyClasses { .. } => {
            let vc = VerifyConfig {
                n_replicates: cfg.budgets.verify_replicates,
                seed: cfg.seed,
                ..VerifyConfig::default()
            };
            let reports = verify_dependence_classes(&cfg.copula, &vc)?;
            for r in &reports {
                let mode = match r.mode {
                    PairMode::Space => "space",
                    PairMode::Time => "time",
                    PairMode::SpaceTime => "space-time",
                };
                let chis: Vec<String> = r.levels.iter().map(|l| format!("{:.3}", l.chi)).collect();
                println!(
                    "{} delta={} {mode:<10} chi=[{}] verdict={:?} expected={:?}",
                    cfg.copula.variant,
                    cfg.copula.delta,
                    chis.join(", "),
                    r.verdict,
                    r.expected
                );
            }
            write_json(&dir.join("classes.json"), &reports)
        }
        Command::Storm { .. } => {
            let data = load_data(cfg)?;
            if data.scale == Scale::Uniform {
                log::info!("storm margins come from the config; the data supply coordinates only");
            }
            let rows = pipelines::storm_from_config(cfg, &data.layout.sites)?;
            pipelines::write_storm_csv(&rows, BufWriter::new(File::create(dir.join("storm.csv"))?))?;
            write_json(&dir.join("exceedance_fractions.json"), &pipelines::exceedance_fractions(&rows))
        }
    }
}

fn print_report(rep: &FitReport) {
    println!("model {}  ({} sites, {} years x {} days)", rep.model, rep.n_sites, rep.n_years, rep.n_days);
    for p in &rep.parameters {
        match (p.ci_lo, p.ci_hi) {
            (Some(lo), Some(hi)) => println!("  {:<6} {:>9.4}  [{:.4}, {:.4}]", p.name, p.estimate, lo, hi),
            _ => println!("  {:<6} {:>9.4}", p.name, p.estimate),
        }
    }
    for f in &rep.flags {
        println!("  note: {f}");
    }
}
