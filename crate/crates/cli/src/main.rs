mod args;

use std::path::PathBuf;
use std::process::ExitCode;

use urbancf::check::run_checks;
use urbancf::config::RunConfig;
use urbancf::pipeline::{self, RunDir, StageError};

use args::{parse, thread_count, Invocation, Parsed, USAGE};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;

fn resolve(inv: &Invocation) -> Result<RunConfig, StageError> {
    let mut cfg = match &inv.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for (key, value) in &inv.overrides {
        cfg.set(key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_threads(cfg: &RunConfig) -> Result<(), StageError> {
    let env = std::env::var("LCZ_THREADS").ok();
    let n = match env.as_deref() {
        Some(v) => thread_count(Some(v)).map_err(StageError::Usage)?,
        None => cfg.threads,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| StageError::Data(format!("thread pool: {e}")))
}

fn run(inv: &Invocation) -> Result<(), StageError> {
    let cfg = resolve(inv)?;
    init_threads(&cfg)?;
    let dir = RunDir::new(inv.out.clone().unwrap_or_else(|| PathBuf::from("run")));
    if inv.subcommand == "check" {
        if inv.out.is_some() {
            pipeline::write_resolved_config(&cfg, &dir)?;
        }
        let report = run_checks(cfg.seed).map_err(|e| StageError::Data(e.to_string()))?;
        print!("{}", report.text());
        if !report.passed() {
            return Err(StageError::Data("self checks failed".into()));
        }
        return Ok(());
    }
    pipeline::write_resolved_config(&cfg, &dir)?;
    match inv.subcommand.as_str() {
        "synth" => {
            let m = pipeline::synth(&cfg, &dir)?;
            println!("wrote {} scenes to {}", m.entries.len(), dir.root.display());
        }
        "rasterize" => {
            pipeline::rasterize_stage(&cfg, &dir)?;
            println!("wrote stacks and {}", dir.norm().display());
        }
        "train-vae" => {
            pipeline::train_vae_stage(&cfg, &dir)?;
            println!("wrote {}", dir.vae().display());
        }
        "train-reg" => {
            let s = pipeline::train_reg_stage(&cfg, &dir)?;
            println!("train MAE {:.4} K over {} scenes", s.train.mae, s.train.n);
            if let Some(t) = &s.test {
                println!("test MAE {:.4} K over {} scenes", t.mae, t.n);
            }
            println!("temperature range {:.4} K", s.temperature_range);
        }
        "perturb" => {
            let s = pipeline::perturb_stage(&cfg, &dir)?;
            println!(
                "{} counterfactuals for {} scenes, {} failures",
                s.counterfactuals,
                s.scenes.len(),
                s.failures
            );
        }
        "label" => {
            let r = pipeline::label_stage(&cfg, &dir)?;
            println!("labeled {} counterfactuals", r.len());
        }
        "analyze" => {
            let r = pipeline::analyze_stage(&cfg, &dir)?;
            print!("{}", r.text());
        }
        "pipeline" => {
            let o = pipeline::run_pipeline(&cfg, &dir)?;
            if let Some(t) = &o.regressor.test {
                println!(
                    "regressor test MAE {:.4} K (temperature range {:.4} K)",
                    t.mae, o.regressor.temperature_range
                );
            }
            print!("{}", o.report.text());
        }
        other => return Err(StageError::Usage(format!("unknown subcommand `{other}`"))),
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let inv = match parse(&argv) {
        Ok(Parsed::Help) => {
            print!("{USAGE}");
            return ExitCode::SUCCESS;
        }
        Ok(Parsed::Run(inv)) => inv,
        Err(msg) => {
            eprintln!("error: {msg}\n\n{USAGE}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(&inv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(StageError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(StageError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
