use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fddpilot::harness::{self, ExperimentSpec};
use fddpilot::{checks, io, pilot_design};

#[derive(Parser)]
#[command(name = "fddpl", version, about = "GMM-based pilot design and channel estimation simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate training channels, fit the Kronecker GMM and save it.
    Fit {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Model file (FDDGMM1); a `.json` sidecar is written next to it.
        #[arg(long, default_value = "model.gmm")]
        out: PathBuf,
        /// Also save the training set (FDDPL1).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Store the training set in single precision.
        #[arg(long)]
        single: bool,
        /// Also export the training set as CSV.
        #[arg(long)]
        dataset_csv: Option<PathBuf>,
        /// `--key value` pairs overriding config entries.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
        overrides: Vec<String>,
    },
    /// Build the per-component pilot codebook of a saved model.
    Codebook {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n_pilots: usize,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        /// FDDPM1 output, or CSV when the name ends in `.csv`.
        #[arg(long, default_value = "codebook.fddpm")]
        out: PathBuf,
    },
    /// Run an experiment and write the result table.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print the effective configuration and exit.
        #[arg(long)]
        dry_run: bool,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
        overrides: Vec<String>,
    },
    /// Run the quick invariant and oracle suite.
    Check {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(key) = a.strip_prefix("--") else { bail!("expected `--key`, got `{a}`") };
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        } else {
            let v = it.next().with_context(|| format!("`--{key}` needs a value"))?;
            out.push((key.to_string(), v.clone()));
        }
    }
    Ok(out)
}

fn load_spec(config: Option<&Path>, overrides: &[String]) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::default();
    if let Some(p) = config {
        let src = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        spec.apply_toml(&src).with_context(|| format!("in {}", p.display()))?;
    }
    let pairs = parse_overrides(overrides)?;
    spec.apply_overrides(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    Ok(spec)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let threads = harness::init_threads();
    log::debug!("{threads} worker threads");
    match cli.cmd {
        Cmd::Fit { config, out, dataset, single, dataset_csv, overrides } => {
            let spec = load_spec(config.as_deref(), &overrides)?;
            spec.scenario.validate()?;
            let data = harness::training_set(&spec)?;
            let model = harness::fit_model(&spec, &data, spec.k_tx, spec.k_rx)?;
            io::write_gmm(&out, &model)?;
            io::write_gmm_meta(&io::sidecar_path(&out), &model, Some(&spec.scenario))?;
            log::info!("wrote {} ({} components)", out.display(), model.k());
            if let Some(p) = dataset {
                let prec = if single { io::Precision::Single } else { io::Precision::Double };
                io::write_dataset(&p, &data, &spec.scenario, prec)?;
            }
            if let Some(p) = dataset_csv {
                io::export_dataset_csv(&p, &data)?;
            }
        }
        Cmd::Codebook { model, n_pilots, rho, out } => {
            let m = io::read_gmm(&model)?;
            let cb = pilot_design::build_pilot_codebook(&m, n_pilots, rho)?;
            if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
                io::export_pilots_csv(&out, &cb.entries)?;
            } else {
                io::write_codebook(&out, &cb)?;
            }
            log::info!("wrote {} pilots to {}", cb.len(), out.display());
        }
        Cmd::Run { config, dry_run, overrides } => {
            let spec = load_spec(config.as_deref(), &overrides)?;
            if dry_run {
                print!("{}", spec.to_toml());
                return Ok(());
            }
            let rows = harness::run_experiment(&spec)?;
            if spec.output.is_none() {
                let mut w = csv::Writer::from_writer(std::io::stdout());
                for r in &rows {
                    w.serialize(r)?;
                }
                w.flush()?;
            }
            let failed = rows.iter().filter(|r| r.failed()).count();
            if failed > 0 {
                bail!("{failed} of {} rows failed", rows.len());
            }
        }
        Cmd::Check { seed } => {
            let results = checks::run_checks(seed);
            for c in &results {
                println!("{:<36} {} {}", c.name, if c.passed { "ok" } else { "FAIL" }, c.detail);
            }
            if results.iter().any(|c| !c.passed) {
                bail!("some checks failed");
            }
        }
    }
    Ok(())
}
