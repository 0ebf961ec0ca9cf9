//! Three-layer fully connected regressor from latent codes to mean scene
//! temperature, and its gradient with respect to the code.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Bindings, Graph, Matrix, Var};
use crate::io::{NamedTensor, TensorSet};
use crate::vae::{ModelError, OptimizerKind};

/// Target standard deviations below this are treated as 1.
const TARGET_STD_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    /// No nonlinearity: the whole network is an affine map.
    Linear,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }

    fn code(self) -> f32 {
        match self {
            Activation::Relu => 0.0,
            Activation::Tanh => 1.0,
            Activation::Linear => 2.0,
        }
    }

    fn from_code(c: f64) -> Option<Self> {
        match c as i64 {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Linear),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressorConfig {
    pub latent_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub activation: Activation,
}

impl RegressorConfig {
    pub fn new(latent_dim: usize) -> Self {
        Self {
            latent_dim,
            hidden1: 128,
            hidden2: 32,
            activation: Activation::Relu,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.latent_dim == 0 || self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(ModelError::Usage("regressor sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Mean and spread used to z-score targets during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

impl TargetScale {
    pub const IDENTITY: TargetScale = TargetScale {
        mean: 0.0,
        std: 1.0,
    };

    /// Population mean and standard deviation, with a zero spread replaced by 1.
    pub fn fit(targets: &[f64]) -> Self {
        let n = targets.len().max(1) as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std: if std < TARGET_STD_FLOOR { 1.0 } else { std },
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Handles {
    c: Var,
    target: Var,
    out: Var,
    loss: Var,
}

#[derive(Debug, Clone)]
pub struct RegressorModel {
    config: RegressorConfig,
    scale: TargetScale,
    graph: Graph,
    h: Handles,
}

impl RegressorModel {
    pub fn new(config: RegressorConfig, scale: TargetScale, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if !(scale.mean.is_finite() && scale.std.is_finite() && scale.std > 0.0) {
            return Err(ModelError::Usage(
                "target scale must be finite with std > 0".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut graph = Graph::new();
        let c = graph.input_with_grad("c");
        let target = graph.input("target");
        let dims = [config.latent_dim, config.hidden1, config.hidden2, 1];
        let mut x = c;
        for layer in 0..3 {
            let (fan_in, fan_out) = (dims[layer], dims[layer + 1]);
            let bound = match (config.activation, layer) {
                (Activation::Relu, 0 | 1) => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let w = graph.param(
                format!("reg/l{}/w", layer + 1),
                Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound)),
            );
            let b = graph.param(format!("reg/l{}/b", layer + 1), Matrix::zeros((1, fan_out)));
            x = graph.affine(x, w, b);
            if layer < 2 {
                x = match config.activation {
                    Activation::Relu => graph.relu(x),
                    Activation::Tanh => graph.tanh(x),
                    Activation::Linear => x,
                };
            }
        }
        let kelvin = graph.scale(x, scale.std);
        let out = graph.offset(kelvin, scale.mean);
        let diff = graph.sub(x, target);
        let abs = graph.abs(diff);
        let loss = graph.mean(abs);
        Ok(Self {
            config,
            scale,
            graph,
            h: Handles {
                c,
                target,
                out,
                loss,
            },
        })
    }

    pub fn config(&self) -> &RegressorConfig {
        &self.config
    }

    pub fn scale(&self) -> TargetScale {
        self.scale
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    fn check_code(&self, c: &[f64]) -> Result<(), ModelError> {
        if c.len() != self.config.latent_dim {
            return Err(ModelError::Usage(format!(
                "code has length {}, regressor expects {}",
                c.len(),
                self.config.latent_dim
            )));
        }
        Ok(())
    }

    fn code_matrix(&self, codes: &[Vec<f64>]) -> Result<Matrix, ModelError> {
        for c in codes {
            self.check_code(c)?;
        }
        Ok(
            Array2::from_shape_vec((codes.len(), self.config.latent_dim), codes.concat())
                .expect("code batch shape"),
        )
    }

    /// Predicted temperature in kelvin.
    pub fn predict(&self, c: &[f64]) -> Result<f64, ModelError> {
        Ok(self.predict_batch(&[c.to_vec()])?[0])
    }

    pub fn predict_batch(&self, codes: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
        if codes.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.code_matrix(codes)?;
        let ev = self
            .graph
            .forward(&Bindings::new().bind(self.h.c, x), &[self.h.out])?;
        let out: Vec<f64> = ev.value(self.h.out)?.iter().copied().collect();
        if out.iter().any(|t| !t.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(out)
    }

    /// `dR/dc` at `c` in kelvin per code unit. Weights are only read.
    pub fn grad_wrt_code(&self, c: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(self.value_and_grad(c)?.1)
    }

    /// `R(c)` together with `dR/dc` from one forward pass.
    pub fn value_and_grad(&self, c: &[f64]) -> Result<(f64, Vec<f64>), ModelError> {
        self.check_code(c)?;
        let x = Array2::from_shape_vec((1, c.len()), c.to_vec()).expect("code shape");
        let ev = self
            .graph
            .forward(&Bindings::new().bind(self.h.c, x), &[self.h.out])?;
        let t = ev.scalar(self.h.out)?;
        let grads = ev.backward_wrt(self.h.out, &[self.h.c])?;
        let g: Vec<f64> = match grads.get(self.h.c) {
            Some(m) => m.iter().copied().collect(),
            None => vec![0.0; c.len()],
        };
        if !t.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok((t, g))
    }

    /// Bindings and root of the L1 training loss on z-scored targets.
    pub fn loss_bindings(
        &self,
        codes: &[Vec<f64>],
        temps: &[f64],
    ) -> Result<(Bindings, Var), ModelError> {
        if codes.len() != temps.len() {
            return Err(ModelError::Usage(
                "codes and temperatures differ in length".into(),
            ));
        }
        let x = self.code_matrix(codes)?;
        let y = Array2::from_shape_fn((temps.len(), 1), |(i, _)| {
            (temps[i] - self.scale.mean) / self.scale.std
        });
        Ok((
            Bindings::new().bind(self.h.c, x).bind(self.h.target, y),
            self.h.loss,
        ))
    }

    pub fn param_vars(&self) -> Vec<Var> {
        self.graph.params().map(|(v, _, _)| v).collect()
    }

    pub fn to_tensors(&self) -> TensorSet {
        let mut set = TensorSet::new();
        let c = &self.config;
        set.push(NamedTensor::new(
            "reg/meta",
            vec![4],
            vec![
                c.latent_dim as f32,
                c.hidden1 as f32,
                c.hidden2 as f32,
                c.activation.code(),
            ],
        ));
        set.push(NamedTensor::from_slice(
            "reg/target_scale",
            &[self.scale.mean, self.scale.std],
        ));
        for (_, name, m) in self.graph.params() {
            set.push(NamedTensor::from_matrix(name, m));
        }
        set
    }

    pub fn from_tensors(set: &TensorSet) -> Result<Self, ModelError> {
        let meta = set.get("reg/meta")?.to_f64();
        let scale = set.get("reg/target_scale")?.to_f64();
        if meta.len() != 4 || scale.len() != 2 {
            return Err(ModelError::Usage("malformed regressor metadata".into()));
        }
        let activation = Activation::from_code(meta[3])
            .ok_or_else(|| ModelError::Usage(format!("unknown activation code {}", meta[3])))?;
        let config = RegressorConfig {
            latent_dim: meta[0] as usize,
            hidden1: meta[1] as usize,
            hidden2: meta[2] as usize,
            activation,
        };
        let scale = TargetScale {
            mean: scale[0],
            std: scale[1],
        };
        let mut model = Self::new(config, scale, 0)?;
        let vars: Vec<(Var, String)> = model
            .graph
            .params()
            .map(|(v, n, _)| (v, n.to_string()))
            .collect();
        for (var, name) in vars {
            let m = set.get(&name)?.to_matrix()?;
            let slot = model.graph.param_value_mut(var).expect("param");
            if slot.dim() != m.dim() {
                return Err(ModelError::Usage(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    m.dim(),
                    slot.dim()
                )));
            }
            *slot = m;
        }
        Ok(model)
    }

    /// Replaces every weight and bias with `f(name, shape)`.
    pub fn set_params(&mut self, mut f: impl FnMut(&str, (usize, usize)) -> Matrix) {
        let vars: Vec<(Var, String)> = self
            .graph
            .params()
            .map(|(v, n, _)| (v, n.to_string()))
            .collect();
        for (var, name) in vars {
            let slot = self.graph.param_value_mut(var).expect("param");
            let m = f(&name, slot.dim());
            assert_eq!(m.dim(), slot.dim(), "shape of `{name}`");
            *slot = m;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for RegressorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-3,
            batch_size: 8,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

/// Signed errors `prediction - target` summarized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub n: usize,
    pub mae: f64,
    pub min_signed: f64,
    pub max_signed: f64,
}

pub fn error_report(
    model: &RegressorModel,
    codes: &[Vec<f64>],
    temps: &[f64],
) -> Result<ErrorReport, ModelError> {
    if codes.len() != temps.len() {
        return Err(ModelError::Usage(
            "codes and temperatures differ in length".into(),
        ));
    }
    if codes.is_empty() {
        return Err(ModelError::Usage("no samples to evaluate".into()));
    }
    let pred = model.predict_batch(codes)?;
    let errs: Vec<f64> = pred.iter().zip(temps).map(|(p, t)| p - t).collect();
    Ok(ErrorReport {
        n: errs.len(),
        mae: errs.iter().map(|e| e.abs()).sum::<f64>() / errs.len() as f64,
        min_signed: errs.iter().cloned().fold(f64::INFINITY, f64::min),
        max_signed: errs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorFit {
    /// Mean L1 loss per epoch, in standardized units.
    pub history: Vec<f64>,
    pub train_error: ErrorReport,
}

/// Trains on the L1 loss with z-scored targets. Initialization and batch
/// order derive from `train.seed`.
pub fn train_regressor(
    codes: &[Vec<f64>],
    temps: &[f64],
    config: RegressorConfig,
    train: &RegressorTrainConfig,
) -> Result<(RegressorModel, RegressorFit), ModelError> {
    if codes.len() != temps.len() {
        return Err(ModelError::Usage(format!(
            "{} codes but {} temperatures",
            codes.len(),
            temps.len()
        )));
    }
    if codes.len() < 2 {
        return Err(ModelError::Usage(
            "need at least two training samples".into(),
        ));
    }
    if train.batch_size == 0 {
        return Err(ModelError::Usage("batch_size must be positive".into()));
    }
    if temps.iter().any(|t| !t.is_finite()) {
        return Err(ModelError::Usage("temperatures must be finite".into()));
    }
    let mut model = RegressorModel::new(config, TargetScale::fit(temps), train.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x5851_f42d_4c95_7f2d);
    let mut opt = train.optimizer.build(train.lr);
    let mut order: Vec<usize> = (0..codes.len()).collect();
    let mut history = Vec::with_capacity(train.epochs);
    for epoch in 0..train.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(train.batch_size) {
            let bc: Vec<Vec<f64>> = batch.iter().map(|&i| codes[i].clone()).collect();
            let bt: Vec<f64> = batch.iter().map(|&i| temps[i]).collect();
            let (binds, root) = model.loss_bindings(&bc, &bt)?;
            let ev = model.graph.forward(&binds, &[root])?;
            let loss = ev.scalar(root)?;
            if !loss.is_finite() {
                return Err(ModelError::Divergence { epoch, loss });
            }
            sum += loss * batch.len() as f64;
            let grads = ev.backward(root)?;
            drop(ev);
            opt.step(&mut model.graph, &grads);
        }
        history.push(sum / codes.len() as f64);
    }
    let train_error = error_report(&model, codes, temps)?;
    Ok((
        model,
        RegressorFit {
            history,
            train_error,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{check_gradient, check_leaf_gradient};

    fn random_codes(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect()
    }

    #[test]
    fn zero_network_predicts_zero() {
        let mut m = RegressorModel::new(RegressorConfig::new(5), TargetScale::IDENTITY, 1).unwrap();
        m.set_params(|_, shape| Matrix::zeros(shape));
        assert_eq!(m.predict(&[0.3, -1.0, 2.0, 0.0, 5.0]).unwrap(), 0.0);
        assert!(m.predict(&[0.0; 4]).is_err());
    }

    #[test]
    fn repeated_predictions_are_identical() {
        let m = RegressorModel::new(RegressorConfig::new(6), TargetScale::IDENTITY, 3).unwrap();
        let c = [0.1, 0.2, -0.3, 0.4, 0.5, -0.6];
        assert_eq!(
            m.predict(&c).unwrap().to_bits(),
            m.predict(&c).unwrap().to_bits()
        );
    }

    #[test]
    fn linear_network_gradient_is_weight_product() {
        let mut cfg = RegressorConfig::new(4);
        cfg.activation = Activation::Linear;
        cfg.hidden1 = 5;
        cfg.hidden2 = 3;
        let scale = TargetScale {
            mean: 290.0,
            std: 2.5,
        };
        let m = RegressorModel::new(cfg, scale, 11).unwrap();
        let w: Vec<Matrix> = m
            .graph
            .params()
            .filter(|(_, n, _)| n.ends_with("/w"))
            .map(|(_, _, w)| w.clone())
            .collect();
        let product = w[0].dot(&w[1]).dot(&w[2]) * scale.std;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for c in random_codes(&mut rng, 5, 4) {
            let g = m.grad_wrt_code(&c).unwrap();
            for (i, gi) in g.iter().enumerate() {
                assert!((gi - product[(i, 0)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn code_gradient_passes_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for act in [Activation::Tanh, Activation::Relu, Activation::Linear] {
            let mut cfg = RegressorConfig::new(8);
            cfg.activation = act;
            let m = RegressorModel::new(
                cfg,
                TargetScale {
                    mean: 291.0,
                    std: 1.7,
                },
                2,
            )
            .unwrap();
            for c in random_codes(&mut rng, 10, 8) {
                let err = check_gradient(|x| m.value_and_grad(x).unwrap(), &c, 1e-6).unwrap();
                assert!(err <= 1e-5, "{act:?}: {err}");
            }
        }
    }

    #[test]
    fn relu_gradient_is_locally_constant() {
        let m = RegressorModel::new(RegressorConfig::new(6), TargetScale::IDENTITY, 8).unwrap();
        let c = [0.4, -0.2, 0.9, 0.1, -0.7, 0.3];
        let shifted: Vec<f64> = c.iter().map(|v| v + 1e-9).collect();
        assert_eq!(
            m.grad_wrt_code(&c).unwrap(),
            m.grad_wrt_code(&shifted).unwrap()
        );
    }

    #[test]
    fn gradient_leaves_weights_untouched() {
        let m = RegressorModel::new(RegressorConfig::new(3), TargetScale::IDENTITY, 4).unwrap();
        let before = m.to_tensors();
        m.grad_wrt_code(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(before, m.to_tensors());
    }

    #[test]
    fn loss_is_mean_absolute_error() {
        let mut m = RegressorModel::new(
            RegressorConfig::new(2),
            TargetScale {
                mean: 1.0,
                std: 2.0,
            },
            0,
        )
        .unwrap();
        m.set_params(|_, shape| Matrix::zeros(shape));
        let (b, root) = m
            .loss_bindings(&[vec![0.0, 0.0], vec![1.0, 1.0]], &[5.0, -1.0])
            .unwrap();
        // standardized targets 2 and -1, prediction 0
        let loss = m.graph.forward(&b, &[root]).unwrap().scalar(root).unwrap();
        assert_eq!(loss, 1.5);
    }

    #[test]
    fn loss_gradient_passes_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut cfg = RegressorConfig::new(4);
        cfg.activation = Activation::Tanh;
        cfg.hidden1 = 6;
        cfg.hidden2 = 5;
        let m = RegressorModel::new(
            cfg,
            TargetScale {
                mean: 290.0,
                std: 3.0,
            },
            1,
        )
        .unwrap();
        let codes = random_codes(&mut rng, 6, 4);
        let temps: Vec<f64> = (0..6).map(|i| 285.0 + i as f64 * 2.3).collect();
        let (b, root) = m.loss_bindings(&codes, &temps).unwrap();
        for v in m.param_vars() {
            let err = check_leaf_gradient(&m.graph, &b, root, v, 1e-6).unwrap();
            assert!(err <= 1e-5, "{:?}: {err}", m.graph.name(v));
        }
    }

    #[test]
    fn constant_targets_converge() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let codes = random_codes(&mut rng, 40, 4);
        let temps = vec![290.0; 40];
        let (m, fit) = train_regressor(
            &codes,
            &temps,
            RegressorConfig::new(4),
            &RegressorTrainConfig::default(),
        )
        .unwrap();
        assert_eq!(m.scale().std, 1.0);
        assert!(fit.train_error.mae < 0.1, "{:?}", fit.train_error);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let codes = random_codes(&mut rng, 64, 3);
        let temps: Vec<f64> = codes.iter().map(|c| 290.0 - 2.0 * c[0] + c[1]).collect();
        let train = RegressorTrainConfig {
            epochs: 100,
            seed: 4,
            ..RegressorTrainConfig::default()
        };
        let (a, fa) = train_regressor(&codes, &temps, RegressorConfig::new(3), &train).unwrap();
        let (b, fb) = train_regressor(&codes, &temps, RegressorConfig::new(3), &train).unwrap();
        assert_eq!(a.to_tensors(), b.to_tensors());
        assert_eq!(fa, fb);
        assert!(fa.history.last().unwrap() < &fa.history[0]);
        assert!(fa.train_error.mae < 0.3, "{:?}", fa.train_error);
    }

    #[test]
    fn training_usage_errors() {
        let cfg = RegressorConfig::new(2);
        let t = RegressorTrainConfig::default();
        assert!(train_regressor(&[vec![0.0, 0.0]], &[1.0], cfg, &t).is_err());
        assert!(train_regressor(&vec![vec![0.0, 0.0]; 3], &[1.0; 2], cfg, &t).is_err());
    }

    #[test]
    fn persistence_round_trip() {
        let mut cfg = RegressorConfig::new(3);
        cfg.activation = Activation::Tanh;
        let m = RegressorModel::new(
            cfg,
            TargetScale {
                mean: 288.5,
                std: 2.0,
            },
            6,
        )
        .unwrap();
        let back = RegressorModel::from_tensors(&m.to_tensors()).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.scale(), m.scale());
        let c = [0.2, -0.4, 1.0];
        assert!((back.predict(&c).unwrap() - m.predict(&c).unwrap()).abs() < 1e-4);
        // a second round trip is exact
        assert_eq!(
            RegressorModel::from_tensors(&back.to_tensors())
                .unwrap()
                .to_tensors(),
            back.to_tensors()
        );
    }
}
