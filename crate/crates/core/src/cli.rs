//! Command-line front end: `augment`, `train`, `sweep`, `eval`, `gradcheck`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::encoder::{EncoderParams, Vocabulary};
use crate::error::{Error, Result};
use crate::harness::{
    evaluate, load_checkpoint, prepare_data, run_experiment, run_sweep, write_atomic, Dataset, RunResult,
};
use crate::verify::{format_table, gradient_suite, meta_gradient_check, SuiteSettings};

/// Environment variable consulted when `--out-dir` is absent.
pub const OUT_DIR_ENV: &str = "MRK_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mrco", version, about = "Meta reweighting with contrastive learning for augmented text classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment config; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `key=value` override applied after the config file, in order.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (falls back to $MRK_OUT_DIR).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Comma-separated seed list replacing the configured seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the augmented dataset and write it as TSV.
    Augment(Common),
    /// Train and evaluate the configured methods over all seeds.
    Train(Common),
    /// Run the configured methods at every point of the sweep grid.
    Sweep(Common),
    /// Evaluate a saved checkpoint on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Vocabulary written next to the run's results.
        #[arg(long)]
        vocab: PathBuf,
        /// TSV dataset; defaults to the configured dev set.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Finite-difference verification of the autodiff engine and meta-gradient.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Exit status for an error: configuration and input validation problems
/// map to 1, everything else to 2.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parse { .. } | Error::Label { .. } | Error::Json(_) => EXIT_INVALID,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).map_err(|e| match e {
                Error::Io(io) => Error::config(format!("cannot read config {}: {io}", path.display())),
                other => other,
            })?,
            None => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(seeds) = &self.seeds {
            let mut c = cfg.clone();
            c.seeds = seeds.clone();
            c.validate()?;
            cfg = c;
        }
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<PathBuf> {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .ok_or_else(|| Error::config(format!("no output directory: pass --out-dir or set {OUT_DIR_ENV}")))
    }

    fn logger(&self) -> impl Fn(&str) + Sync {
        let quiet = self.quiet;
        move |msg: &str| {
            if !quiet {
                eprintln!("{msg}");
            }
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Augment(c) => augment(&c),
        Command::Train(c) => train(&c),
        Command::Sweep(c) => {
            let cfg = c.resolve()?;
            let out = c.out_dir()?;
            std::fs::create_dir_all(&out)?;
            let points = run_sweep(&cfg, &out, &c.logger())?;
            if !c.quiet {
                println!("{} grid points written to {}", points.len(), out.join("sweep.csv").display());
            }
            Ok(EXIT_OK)
        }
        Command::Eval {
            common,
            checkpoint,
            vocab,
            data,
        } => eval(&common, &checkpoint, &vocab, data.as_deref()),
        Command::Gradcheck { common, trials, seed } => gradcheck(&common, trials, seed),
    }
}

fn augment(c: &Common) -> Result<i32> {
    let cfg = c.resolve()?;
    let out = c.out_dir()?;
    std::fs::create_dir_all(&out)?;
    let data = prepare_data(&cfg, false)?;
    data.augmented.save(&out.join("augmented.tsv"))?;
    if cfg.data.train.is_none() {
        data.train.save(&out.join("train.tsv"))?;
        data.dev.save(&out.join("dev.tsv"))?;
        data.lexicon.save(&out.join("lexicon.txt"))?;
    }
    let flipped = data.augmented.examples.iter().filter(|e| e.is_flipped()).count();
    if !c.quiet {
        println!(
            "{} augmented examples ({flipped} label-flipped) from {} raw examples written to {}",
            data.augmented.len(),
            data.train.len(),
            out.join("augmented.tsv").display()
        );
    }
    Ok(EXIT_OK)
}

fn print_summary(results: &[RunResult]) {
    println!("{:<22} {:>16} {:>16}", "method", "dev accuracy", "dev mcc");
    for r in results {
        let (am, asd) = r.accuracy();
        let (mm, msd) = r.mcc();
        println!("{:<22} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4}", r.method.name(), am, asd, mm, msd);
    }
}

fn train(c: &Common) -> Result<i32> {
    let cfg = c.resolve()?;
    let out = c.out_dir()?;
    std::fs::create_dir_all(&out)?;
    let results = run_experiment(&cfg, &out, &c.logger())?;
    if !c.quiet {
        print_summary(&results);
    }
    Ok(EXIT_OK)
}

fn eval(c: &Common, checkpoint: &Path, vocab: &Path, data: Option<&Path>) -> Result<i32> {
    let cfg = c.resolve()?;
    let vocab = Vocabulary::load(vocab)?;
    let params = load_checkpoint(checkpoint)?;
    let dataset = match data {
        Some(path) => Dataset::load(path, None)?,
        None => prepare_data(&cfg, false)?.dev,
    };
    let config = cfg.encoder_config(vocab.len(), dataset.num_classes());
    let expected = config.init(&mut rand::rngs::mock::StepRng::new(0, 0))?;
    if !expected.same_layout(&params) {
        return Err(Error::config(format!(
            "checkpoint {} does not match the configured encoder and vocabulary",
            checkpoint.display()
        )));
    }
    let model = EncoderParams { config, params };
    let e = evaluate(&model, &vocab, &dataset)?;
    let row = format!("dataset,examples,accuracy,mcc\n{},{},{},{}\n", dataset.name, dataset.len(), e.accuracy, e.mcc);
    if let Some(out) = c.out_dir.clone().or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)) {
        std::fs::create_dir_all(&out)?;
        write_atomic(&out.join("eval.csv"), row.as_bytes())?;
    }
    print!("{row}");
    std::io::stdout().flush()?;
    Ok(EXIT_OK)
}

fn gradcheck(c: &Common, trials: usize, seed: u64) -> Result<i32> {
    let cfg = c.resolve()?;
    if trials == 0 {
        return Err(Error::config("--trials must be at least 1"));
    }
    let settings = SuiteSettings {
        trials,
        seed,
        ..SuiteSettings::default()
    };
    let cases = gradient_suite(&settings)?;
    print!("{}", format_table(&cases));
    let meta = meta_gradient_check(seed, cfg.train.alpha, 1e-5, 1e-3)?;
    println!(
        "{:<20} {:>6} {:>8} {:>12.3e}  {}",
        "meta_gradient",
        meta.reweight_params,
        usize::from(!meta.passed()),
        meta.max_rel_error,
        if meta.passed() { "pass" } else { "FAIL" }
    );
    let ok = cases.iter().all(|c| c.passed()) && meta.passed();
    Ok(if ok { EXIT_OK } else { EXIT_RUNTIME })
}
