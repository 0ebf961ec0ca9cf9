use std::path::PathBuf;

pub const SUBCOMMANDS: [&str; 9] = [
    "synth",
    "rasterize",
    "train-vae",
    "train-reg",
    "perturb",
    "label",
    "analyze",
    "pipeline",
    "check",
];

pub const USAGE: &str = "\
usage: urbancf <subcommand> [--config PATH] [--seed N] [--out DIR] [--KEY=VALUE ...]

subcommands:
  synth       generate a synthetic corpus (clouds, thermal grids, manifest)
  rasterize   rasterize clouds into 13-channel stacks and fit normalization
  train-vae   train the scene VAE on the training split
  train-reg   train the latent temperature regressor
  perturb     write counterfactual scenes for the temperature sweep
  label       segment counterfactuals and record vegetation fractions
  analyze     fit the sweep and write the figure table and report
  pipeline    run every stage in order
  check       run the gradient and latent-step self tests

options:
  --config PATH     key = value configuration file
  --seed N          master seed
  --out DIR         run directory (default: run)
  --dt-sweep LIST   comma-separated temperature offsets in kelvin
  --KEY=VALUE       any configuration key, e.g. --vae.latent_dim=64

environment:
  LCZ_THREADS       worker threads (0 = all cores)
";

#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub subcommand: String,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// `(key, value)` overrides in command-line order, `--seed` included.
    pub overrides: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Parsed {
    Help,
    Run(Invocation),
}

fn flag_key(flag: &str) -> String {
    match flag {
        "dt-sweep" => "perturb.dt_sweep".to_string(),
        other => other.to_string(),
    }
}

pub fn parse(args: &[String]) -> Result<Parsed, String> {
    let mut it = args.iter();
    let subcommand = match it.next() {
        None => return Err("missing subcommand".into()),
        Some(s) if s == "-h" || s == "--help" || s == "help" => return Ok(Parsed::Help),
        Some(s) if SUBCOMMANDS.contains(&s.as_str()) => s.clone(),
        Some(s) => return Err(format!("unknown subcommand `{s}`")),
    };
    let mut inv = Invocation {
        subcommand,
        config: None,
        out: None,
        overrides: Vec::new(),
    };
    while let Some(arg) = it.next() {
        if arg == "-h" || arg == "--help" {
            return Ok(Parsed::Help);
        }
        let Some(body) = arg.strip_prefix("--") else {
            return Err(format!("unexpected argument `{arg}`"));
        };
        let (flag, value) = match body.split_once('=') {
            Some((f, v)) => (f.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| format!("flag `{arg}` needs a value"))?;
                (body.to_string(), v.clone())
            }
        };
        if flag.is_empty() {
            return Err(format!("unexpected argument `{arg}`"));
        }
        match flag.as_str() {
            "config" => inv.config = Some(PathBuf::from(value)),
            "out" => inv.out = Some(PathBuf::from(value)),
            _ => inv.overrides.push((flag_key(&flag), value)),
        }
    }
    Ok(Parsed::Run(inv))
}

/// Parses `LCZ_THREADS`; unset means automatic.
pub fn thread_count(var: Option<&str>) -> Result<usize, String> {
    match var {
        None => Ok(0),
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("LCZ_THREADS must be a non-negative integer, got `{v}`")),
    }
}
