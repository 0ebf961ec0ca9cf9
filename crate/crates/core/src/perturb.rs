//! Moves a scene's latent code so the regressor's prediction changes by a
//! requested temperature offset, and decodes the resulting counterfactual.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::io::{save_model, IoError, NamedTensor};
use crate::rasterizer::RasterStack;
use crate::regressor::RegressorModel;
use crate::vae::{ModelError, VaeModel};

pub const DEFAULT_G_FLOOR: f64 = 1e-8;
pub const DEFAULT_MAX_STEPS: usize = 100;

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("gradient norm {norm:e} is below the floor {floor:e}")]
    DegenerateGradient { norm: f64, floor: f64 },
    #[error("{0}")]
    Usage(String),
    #[error("every scene failed; first failure: {0}")]
    AllFailed(Box<PerturbError>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PerturbMode {
    /// Minimal-norm step `Δc = Δt g / |g|²`.
    ClosedForm,
    /// Repeated gradient steps `c ← c + ζ ∂R/∂c` until the prediction has
    /// moved by at least `|Δt|` or the step budget is spent. `zeta = None`
    /// uses `0.1 Δt / |g₀|`.
    Iterative { zeta: Option<f64>, steps: usize },
}

impl PerturbMode {
    pub fn name(self) -> &'static str {
        match self {
            PerturbMode::ClosedForm => "closed_form",
            PerturbMode::Iterative { .. } => "iterative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub delta_t: f64,
    pub mode: PerturbMode,
    pub g_floor: f64,
}

impl Perturbation {
    pub fn closed_form(delta_t: f64) -> Self {
        Self {
            delta_t,
            mode: PerturbMode::ClosedForm,
            g_floor: DEFAULT_G_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<(), PerturbError> {
        if !self.delta_t.is_finite() {
            return Err(PerturbError::Usage("delta_t must be finite".into()));
        }
        if !(self.g_floor > 0.0 && self.g_floor.is_finite()) {
            return Err(PerturbError::Usage("g_floor must be positive".into()));
        }
        if let PerturbMode::Iterative { zeta, steps } = self.mode {
            if steps == 0 {
                return Err(PerturbError::Usage(
                    "iterative mode needs steps >= 1".into(),
                ));
            }
            if zeta.is_some_and(|z| !z.is_finite()) {
                return Err(PerturbError::Usage("zeta must be finite".into()));
            }
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `Δc = Δt · g / |g|²`, the shortest code step whose first-order effect on
/// the prediction is exactly `Δt`.
pub fn delta_c(g: &[f64], delta_t: f64, g_floor: f64) -> Result<Vec<f64>, PerturbError> {
    let n = norm(g);
    if n.is_nan() || n < g_floor {
        return Err(PerturbError::DegenerateGradient {
            norm: n,
            floor: g_floor,
        });
    }
    let k = delta_t / (n * n);
    Ok(g.iter().map(|gi| k * gi).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualScene {
    pub delta_t: f64,
    pub original: RasterStack,
    /// `D(E(s))`.
    pub reconstruction: RasterStack,
    /// `D(E(s) + Δc)`.
    pub counterfactual: RasterStack,
    pub code: Vec<f64>,
    pub delta_c: Vec<f64>,
    /// `R(c + Δc) - R(c)`.
    pub achieved_dt: f64,
}

/// Latent step for one code, without decoding.
pub fn latent_step(
    regressor: &RegressorModel,
    c: &[f64],
    p: &Perturbation,
) -> Result<(Vec<f64>, f64), PerturbError> {
    p.validate()?;
    let (t0, g0) = regressor.value_and_grad(c)?;
    match p.mode {
        PerturbMode::ClosedForm => {
            let dc = delta_c(&g0, p.delta_t, p.g_floor)?;
            if p.delta_t == 0.0 {
                return Ok((dc, 0.0));
            }
            let moved: Vec<f64> = c.iter().zip(&dc).map(|(a, b)| a + b).collect();
            let achieved = regressor.predict(&moved)? - t0;
            Ok((dc, achieved))
        }
        PerturbMode::Iterative { zeta, steps } => {
            let n0 = norm(&g0);
            if n0.is_nan() || n0 < p.g_floor {
                return Err(PerturbError::DegenerateGradient {
                    norm: n0,
                    floor: p.g_floor,
                });
            }
            if p.delta_t == 0.0 {
                return Ok((vec![0.0; c.len()], 0.0));
            }
            let zeta = zeta.unwrap_or(0.1 * p.delta_t / n0);
            // the step direction follows the sign of the requested change
            let zeta = zeta.abs() * p.delta_t.signum();
            let mut cur = c.to_vec();
            let mut g = g0;
            let mut achieved = 0.0;
            for _ in 0..steps {
                for (ci, gi) in cur.iter_mut().zip(&g) {
                    *ci += zeta * gi;
                }
                let (t, next) = regressor.value_and_grad(&cur)?;
                achieved = t - t0;
                if achieved.abs() >= p.delta_t.abs() {
                    break;
                }
                let next_norm = norm(&next);
                if next_norm.is_nan() || next_norm < p.g_floor {
                    break;
                }
                g = next;
            }
            let dc = cur.iter().zip(c).map(|(a, b)| a - b).collect();
            Ok((dc, achieved))
        }
    }
}

/// Encodes `s` (normalized), shifts the code for `p.delta_t` and decodes
/// both the reconstruction and the counterfactual.
pub fn perturb_scene(
    vae: &VaeModel,
    regressor: &RegressorModel,
    s: &RasterStack,
    p: &Perturbation,
) -> Result<CounterfactualScene, PerturbError> {
    let code = vae.encode_mean(s)?;
    perturb_code(vae, regressor, s, code, p)
}

fn perturb_code(
    vae: &VaeModel,
    regressor: &RegressorModel,
    s: &RasterStack,
    code: Vec<f64>,
    p: &Perturbation,
) -> Result<CounterfactualScene, PerturbError> {
    if code.len() != regressor.config().latent_dim {
        return Err(PerturbError::Usage(format!(
            "vae latent_dim {} does not match regressor input {}",
            code.len(),
            regressor.config().latent_dim
        )));
    }
    let (dc, achieved_dt) = latent_step(regressor, &code, p)?;
    let moved: Vec<f64> = code.iter().zip(&dc).map(|(a, b)| a + b).collect();
    let mut decoded = vae.decode_batch(&[code.clone(), moved])?;
    let counterfactual = decoded.pop().expect("two decodes");
    let reconstruction = decoded.pop().expect("two decodes");
    Ok(CounterfactualScene {
        delta_t: p.delta_t,
        original: s.clone(),
        reconstruction,
        counterfactual,
        code,
        delta_c: dc,
        achieved_dt,
    })
}

#[derive(Debug)]
pub struct SceneFailure {
    pub scene: usize,
    pub delta_t: f64,
    pub error: PerturbError,
}

#[derive(Debug, Default)]
pub struct BatchResult {
    /// Scene-major, in sweep order within each scene; failed pairs are absent.
    pub scenes: Vec<(usize, CounterfactualScene)>,
    pub failures: Vec<SceneFailure>,
}

/// Perturbs every scene with every offset in parallel. Per-scene failures
/// are collected; the batch fails only when no counterfactual succeeds.
pub fn batch_perturb(
    vae: &VaeModel,
    regressor: &RegressorModel,
    scenes: &[RasterStack],
    deltas: &[f64],
    template: &Perturbation,
) -> Result<BatchResult, PerturbError> {
    if scenes.is_empty() {
        return Err(PerturbError::Usage("no scenes to perturb".into()));
    }
    if deltas.is_empty() {
        return Ok(BatchResult::default());
    }
    let per_scene: Vec<Vec<Result<CounterfactualScene, PerturbError>>> = scenes
        .par_iter()
        .map(|s| match vae.encode_mean(s) {
            Ok(code) => deltas
                .iter()
                .map(|&dt| {
                    let p = Perturbation {
                        delta_t: dt,
                        ..*template
                    };
                    perturb_code(vae, regressor, s, code.clone(), &p)
                })
                .collect(),
            Err(e) => {
                let msg = e.to_string();
                deltas
                    .iter()
                    .map(|_| Err(PerturbError::Usage(format!("encode failed: {msg}"))))
                    .collect()
            }
        })
        .collect();
    let mut out = BatchResult::default();
    for (i, results) in per_scene.into_iter().enumerate() {
        for (r, &dt) in results.into_iter().zip(deltas) {
            match r {
                Ok(cf) => out.scenes.push((i, cf)),
                Err(error) => out.failures.push(SceneFailure {
                    scene: i,
                    delta_t: dt,
                    error,
                }),
            }
        }
    }
    if out.scenes.is_empty() {
        let first = out.failures.remove(0).error;
        return Err(PerturbError::AllFailed(Box::new(first)));
    }
    Ok(out)
}

/// Writes one LCZM file per counterfactual (original, reconstruction and
/// counterfactual stacks plus the code step) and `index.csv` under `dir`.
pub fn write_counterfactuals(
    dir: &Path,
    items: &[(String, CounterfactualScene)],
) -> Result<(), PerturbError> {
    fs::create_dir_all(dir).map_err(IoError::from)?;
    let mut index = BufWriter::new(fs::File::create(dir.join("index.csv")).map_err(IoError::from)?);
    writeln!(index, "scene_id,delta_t,achieved_dt,delta_c_norm,path").map_err(IoError::from)?;
    for (id, cf) in items {
        let file = format!("{id}_dt{}.lczm", cf.delta_t);
        let mut set = cf.counterfactual.to_tensors();
        for t in cf.original.to_tensors().tensors {
            if let Some(rest) = t.name.strip_prefix("channel/") {
                set.push(NamedTensor::new(
                    format!("original/{rest}"),
                    t.dims,
                    t.values,
                ));
            }
        }
        for t in cf.reconstruction.to_tensors().tensors {
            if let Some(rest) = t.name.strip_prefix("channel/") {
                set.push(NamedTensor::new(
                    format!("reconstruction/{rest}"),
                    t.dims,
                    t.values,
                ));
            }
        }
        set.push(NamedTensor::from_slice("code", &cf.code));
        set.push(NamedTensor::from_slice("delta_c", &cf.delta_c));
        set.push(NamedTensor::from_slice(
            "delta_t",
            &[cf.delta_t, cf.achieved_dt],
        ));
        save_model(&set, dir.join(&file))?;
        writeln!(
            index,
            "{id},{},{},{},{file}",
            cf.delta_t,
            cf.achieved_dt,
            norm(&cf.delta_c)
        )
        .map_err(IoError::from)?;
    }
    index.flush().map_err(IoError::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rasterizer::GridSpec;
    use crate::regressor::{Activation, RegressorConfig, TargetScale};
    use crate::vae::VaeConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_evaluated_step() {
        assert_eq!(delta_c(&[2.0, 0.0], 4.0, 1e-8).unwrap(), vec![2.0, 0.0]);
        assert_eq!(delta_c(&[0.3, -1.0, 2.0], 0.0, 1e-8).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn degenerate_gradient_is_an_error() {
        assert!(matches!(
            delta_c(&[1e-10, 0.0], 1.0, 1e-8),
            Err(PerturbError::DegenerateGradient { .. })
        ));
        assert!(delta_c(&[0.0; 4], 1.0, 1e-8).is_err());
        assert!(delta_c(&[f64::NAN], 1.0, 1e-8).is_err());
    }

    #[test]
    fn step_meets_constraint_and_is_parallel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let g: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dt = rng.random_range(-10.0..10.0);
            let dc = delta_c(&g, dt, 1e-8).unwrap();
            let dot: f64 = dc.iter().zip(&g).map(|(a, b)| a * b).sum();
            assert!((dot - dt).abs() <= 1e-9 * dt.abs().max(1.0));
            let lambda = dt / g.iter().map(|x| x * x).sum::<f64>();
            for (a, b) in dc.iter().zip(&g) {
                assert!((a - lambda * b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }

    fn models(act: Activation) -> (VaeModel, RegressorModel) {
        let grid = GridSpec::new(4, 4, 1.0).unwrap();
        let mut vc = VaeConfig::new(grid, 6);
        vc.hidden = 4;
        vc.hidden2 = 4;
        let vae = VaeModel::new(vc, 3).unwrap();
        let mut rc = RegressorConfig::new(6);
        rc.activation = act;
        rc.hidden1 = 8;
        rc.hidden2 = 4;
        let reg = RegressorModel::new(
            rc,
            TargetScale {
                mean: 290.0,
                std: 2.0,
            },
            5,
        )
        .unwrap();
        (vae, reg)
    }

    fn stack(seed: u64) -> RasterStack {
        let grid = GridSpec::new(4, 4, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..13 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
        RasterStack::from_flat(grid, data).unwrap()
    }

    #[test]
    fn zero_offset_reproduces_reconstruction() {
        let (vae, reg) = models(Activation::Relu);
        let s = stack(2);
        let cf = perturb_scene(&vae, &reg, &s, &Perturbation::closed_form(0.0)).unwrap();
        assert_eq!(cf.delta_c, vec![0.0; 6]);
        assert_eq!(cf.counterfactual, cf.reconstruction);
        assert_eq!(
            cf.reconstruction,
            vae.decode(&vae.encode_mean(&s).unwrap()).unwrap()
        );
        assert_eq!(cf.achieved_dt, 0.0);
    }

    #[test]
    fn linear_regressor_hits_target_exactly() {
        let (vae, reg) = models(Activation::Linear);
        let s = stack(4);
        for dt in [1.0, -1.0, 3.0, -3.0, 5.0, -5.0, 10.0, -10.0] {
            let cf = perturb_scene(&vae, &reg, &s, &Perturbation::closed_form(dt)).unwrap();
            assert!(
                (cf.achieved_dt - dt).abs() <= 1e-6,
                "{dt}: {}",
                cf.achieved_dt
            );
        }
    }

    #[test]
    fn iterative_mode_reaches_target() {
        let (_, reg) = models(Activation::Tanh);
        let c = [0.1, -0.2, 0.3, 0.0, 0.5, -0.1];
        for dt in [0.5, -0.5] {
            let p = Perturbation {
                delta_t: dt,
                mode: PerturbMode::Iterative {
                    zeta: None,
                    steps: DEFAULT_MAX_STEPS,
                },
                g_floor: DEFAULT_G_FLOOR,
            };
            let (dc, achieved) = latent_step(&reg, &c, &p).unwrap();
            assert!(
                achieved.abs() >= dt.abs() && achieved.signum() == dt.signum(),
                "{achieved}"
            );
            assert!(dc.iter().any(|v| *v != 0.0));
        }
        let bad = Perturbation {
            delta_t: 1.0,
            mode: PerturbMode::Iterative {
                zeta: None,
                steps: 0,
            },
            g_floor: DEFAULT_G_FLOOR,
        };
        assert!(latent_step(&reg, &c, &bad).is_err());
    }

    #[test]
    fn batch_cardinality_and_order_independence() {
        let (vae, reg) = models(Activation::Tanh);
        let scenes = vec![stack(1), stack(2)];
        let sweep = [1.0, 3.0, 5.0, 10.0, -1.0, -3.0, -5.0, -10.0];
        let p = Perturbation::closed_form(0.0);
        let out = batch_perturb(&vae, &reg, &scenes, &sweep, &p).unwrap();
        assert_eq!(out.scenes.len(), 16);
        assert!(out.failures.is_empty());
        assert!(batch_perturb(&vae, &reg, &scenes, &[], &p)
            .unwrap()
            .scenes
            .is_empty());

        let swapped = vec![stack(2), stack(1)];
        let rev = batch_perturb(&vae, &reg, &swapped, &sweep, &p).unwrap();
        for (i, cf) in out
            .scenes
            .iter()
            .filter(|(i, _)| *i == 0)
            .map(|(_, c)| c)
            .enumerate()
        {
            let other = &rev.scenes.iter().filter(|(i, _)| *i == 1).nth(i).unwrap().1;
            assert_eq!(cf, other);
        }
    }

    #[test]
    fn frozen_models_are_not_modified() {
        let (vae, reg) = models(Activation::Relu);
        let (vb, rb) = (vae.to_tensors(), reg.to_tensors());
        perturb_scene(&vae, &reg, &stack(9), &Perturbation::closed_form(3.0)).unwrap();
        assert_eq!(vb, vae.to_tensors());
        assert_eq!(rb, reg.to_tensors());
    }

    #[test]
    fn all_failures_fail_the_batch() {
        let (vae, mut reg) = models(Activation::Relu);
        reg.set_params(|_, shape| crate::autodiff::Matrix::zeros(shape));
        let r = batch_perturb(
            &vae,
            &reg,
            &[stack(1)],
            &[1.0],
            &Perturbation::closed_form(0.0),
        );
        assert!(matches!(r, Err(PerturbError::AllFailed(_))));
    }

    #[test]
    fn counterfactuals_persist_with_index() {
        let (vae, reg) = models(Activation::Tanh);
        let cf = perturb_scene(&vae, &reg, &stack(3), &Perturbation::closed_form(-3.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_counterfactuals(dir.path(), &[("scene_00001".to_string(), cf.clone())]).unwrap();
        let index = fs::read_to_string(dir.path().join("index.csv")).unwrap();
        assert!(
            index.starts_with("scene_id,delta_t,achieved_dt,delta_c_norm,path\nscene_00001,-3,")
        );
        let set = crate::io::load_model(dir.path().join("scene_00001_dt-3.lczm")).unwrap();
        let back = RasterStack::from_tensors(&set).unwrap();
        for (a, b) in back.as_flat().iter().zip(cf.counterfactual.as_flat()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
        assert!(set.get("original/z_min").is_ok());
        assert!(set.get("reconstruction/z_min").is_ok());
    }
}
