//! Variational autoencoder compressing a normalized statistics stack into a
//! latent code and decoding codes back into stacks.
//!
//! Two encoder/decoder bodies sit behind the same interface:
//!
//! * [`VaeArch::Patch`]: two stride-2 layers, each a shared affine map over
//!   non-overlapping 2×2 patches followed by relu, then affine heads for the
//!   mean and log-variance. The decoder mirrors it. Needs height and width
//!   divisible by 4.
//! * [`VaeArch::Mlp`]: one hidden fully connected layer each way.

use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::autodiff::{scalar, Adam, Bindings, Graph, GraphError, Matrix, Optimizer, Sgd, Var};
use crate::io::{IoError, NamedTensor, TensorSet};
use crate::rasterizer::{GridSpec, RasterStack, CHANNEL_COUNT};

type DecoderBuild = Box<dyn Fn(&mut Graph, Var) -> Var>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{0}")]
    Usage(String),
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("non-finite model output")]
    NonFinite,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VaeArch {
    Mlp,
    Patch,
}

impl VaeArch {
    pub fn name(self) -> &'static str {
        match self {
            VaeArch::Mlp => "mlp",
            VaeArch::Patch => "patch",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mlp" => Some(VaeArch::Mlp),
            "patch" => Some(VaeArch::Patch),
            _ => None,
        }
    }

    fn code(self) -> f32 {
        match self {
            VaeArch::Mlp => 0.0,
            VaeArch::Patch => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub arch: VaeArch,
    /// Hidden width of the MLP body, or channel count of the first patch layer.
    pub hidden: usize,
    /// Channel count of the second patch layer (unused by the MLP body).
    pub hidden2: usize,
    pub grid: GridSpec,
}

impl VaeConfig {
    pub fn new(grid: GridSpec, latent_dim: usize) -> Self {
        Self {
            latent_dim,
            arch: VaeArch::Patch,
            hidden: 24,
            hidden2: 48,
            grid,
        }
    }

    pub fn input_len(&self) -> usize {
        CHANNEL_COUNT * self.grid.cells()
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.latent_dim == 0 || self.hidden == 0 {
            return Err(ModelError::Usage(
                "latent_dim and hidden must be positive".into(),
            ));
        }
        if self.arch == VaeArch::Patch
            && (!self.grid.width.is_multiple_of(4)
                || !self.grid.height.is_multiple_of(4)
                || self.hidden2 == 0)
        {
            return Err(ModelError::Usage(format!(
                "patch architecture needs a grid divisible by 4, got {}x{}",
                self.grid.width, self.grid.height
            )));
        }
        Ok(())
    }
}

/// Linear warm-up of the KL weight: `lambda_max * min(1, epoch / ramp_epochs)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KldSchedule {
    pub ramp_epochs: usize,
    pub lambda_max: f64,
}

impl Default for KldSchedule {
    fn default() -> Self {
        Self {
            ramp_epochs: 50,
            lambda_max: 1e-5,
        }
    }
}

pub fn kld_weight(schedule: &KldSchedule, epoch: usize) -> f64 {
    if schedule.ramp_epochs == 0 || epoch >= schedule.ramp_epochs {
        return schedule.lambda_max;
    }
    schedule.lambda_max * (epoch as f64 / schedule.ramp_epochs as f64)
}

/// `c = mu + exp(logvar / 2) ⊙ epsilon`.
pub fn reparameterize(mu: &[f64], logvar: &[f64], epsilon: &[f64]) -> Result<Vec<f64>, ModelError> {
    if mu.len() != logvar.len() || mu.len() != epsilon.len() {
        return Err(ModelError::Usage("reparameterize: length mismatch".into()));
    }
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(epsilon)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// KL divergence of `N(mu, exp(logvar))` from the standard normal.
pub fn kld(mu: &[f64], logvar: &[f64]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

/// Mean squared reconstruction error plus `lambda` times the KL term.
pub fn elbo_loss(s: &[f64], s_hat: &[f64], mu: &[f64], logvar: &[f64], lambda: f64) -> f64 {
    let mse = s
        .iter()
        .zip(s_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / s.len().max(1) as f64;
    mse + lambda * kld(mu, logvar)
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    w: Var,
    b: Var,
}

#[derive(Debug, Clone, Copy)]
struct Handles {
    x: Var,
    eps: Var,
    lambda: Var,
    mu: Var,
    logvar: Var,
    mse: Var,
    kld: Var,
    loss: Var,
    z: Var,
    z_hat: Var,
}

#[derive(Debug, Clone)]
pub struct VaeModel {
    config: VaeConfig,
    graph: Graph,
    h: Handles,
}

/// Gather index turning a `cells × channels` row (cell-major) of an
/// `h × w` grid into `(h/2)(w/2)` rows of `4 × channels` patch features.
fn patch_index(h: usize, w: usize, channels: usize, channel_major: bool) -> Vec<usize> {
    let (ph, pw) = (h / 2, w / 2);
    let mut idx = Vec::with_capacity(h * w * channels);
    for i in 0..ph {
        for j in 0..pw {
            if channel_major {
                for c in 0..channels {
                    for di in 0..2 {
                        for dj in 0..2 {
                            idx.push(c * h * w + (2 * i + di) * w + (2 * j + dj));
                        }
                    }
                }
            } else {
                for di in 0..2 {
                    for dj in 0..2 {
                        for c in 0..channels {
                            idx.push(((2 * i + di) * w + (2 * j + dj)) * channels + c);
                        }
                    }
                }
            }
        }
    }
    idx
}

fn inverse(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (j, &t) in perm.iter().enumerate() {
        inv[t] = j;
    }
    inv
}

fn init_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

impl VaeModel {
    /// Freshly initialized model; weights are drawn from a seeded generator.
    pub fn new(config: VaeConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut graph = Graph::new();
        let mut layer = |g: &mut Graph, name: &str, fan_in: usize, fan_out: usize, relu: bool| {
            let bound = if relu {
                (6.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            };
            let w = g.param(
                format!("{name}/w"),
                init_matrix(&mut rng, fan_in, fan_out, bound),
            );
            let b = g.param(format!("{name}/b"), Matrix::zeros((1, fan_out)));
            Layer { w, b }
        };
        let n = config.latent_dim;
        let f = config.input_len();
        let (c, hh, ww) = (CHANNEL_COUNT, config.grid.height, config.grid.width);

        let x = graph.input("x");
        let eps = graph.input("eps");
        let lambda = graph.input("lambda");
        let z = graph.input_with_grad("z");

        let (mu, logvar, dec): (Var, Var, DecoderBuild) = match config.arch {
            VaeArch::Mlp => {
                let e1 = layer(&mut graph, "vae/enc/l1", f, config.hidden, true);
                let emu = layer(&mut graph, "vae/enc/mu", config.hidden, n, false);
                let elv = layer(&mut graph, "vae/enc/logvar", config.hidden, n, false);
                let d1 = layer(&mut graph, "vae/dec/l1", n, config.hidden, true);
                let d2 = layer(&mut graph, "vae/dec/out", config.hidden, f, false);
                let h = graph.affine(x, e1.w, e1.b);
                let h = graph.relu(h);
                let mu = graph.affine(h, emu.w, emu.b);
                let lv = graph.affine(h, elv.w, elv.b);
                let dec = move |g: &mut Graph, code: Var| {
                    let h = g.affine(code, d1.w, d1.b);
                    let h = g.relu(h);
                    g.affine(h, d2.w, d2.b)
                };
                (mu, lv, Box::new(dec))
            }
            VaeArch::Patch => {
                let (k1, k2) = (config.hidden, config.hidden2);
                let (p1h, p1w) = (hh / 2, ww / 2);
                let p2 = (hh / 4) * (ww / 4);
                let g1: Arc<[usize]> = patch_index(hh, ww, c, true).into();
                let g2: Arc<[usize]> = patch_index(p1h, p1w, k1, false).into();
                let g1_inv: Arc<[usize]> = inverse(&g1).into();
                let g2_inv: Arc<[usize]> = inverse(&g2).into();

                let e1 = layer(&mut graph, "vae/enc/patch1", 4 * c, k1, true);
                let e2 = layer(&mut graph, "vae/enc/patch2", 4 * k1, k2, true);
                let emu = layer(&mut graph, "vae/enc/mu", p2 * k2, n, false);
                let elv = layer(&mut graph, "vae/enc/logvar", p2 * k2, n, false);
                let d0 = layer(&mut graph, "vae/dec/dense", n, p2 * k2, true);
                let d2 = layer(&mut graph, "vae/dec/patch2", k2, 4 * k1, true);
                let d1 = layer(&mut graph, "vae/dec/patch1", k1, 4 * c, false);

                let h = graph.gather(x, g1.clone());
                let h = graph.reshape(h, 4 * c);
                let h = graph.affine(h, e1.w, e1.b);
                let h = graph.relu(h);
                let h = graph.reshape(h, p1h * p1w * k1);
                let h = graph.gather(h, g2.clone());
                let h = graph.reshape(h, 4 * k1);
                let h = graph.affine(h, e2.w, e2.b);
                let h = graph.relu(h);
                let h = graph.reshape(h, p2 * k2);
                let mu = graph.affine(h, emu.w, emu.b);
                let lv = graph.affine(h, elv.w, elv.b);
                let dec = move |g: &mut Graph, code: Var| {
                    let h = g.affine(code, d0.w, d0.b);
                    let h = g.relu(h);
                    let h = g.reshape(h, k2);
                    let h = g.affine(h, d2.w, d2.b);
                    let h = g.relu(h);
                    let h = g.reshape(h, p2 * 4 * k1);
                    let h = g.gather(h, g2_inv.clone());
                    let h = g.reshape(h, k1);
                    let h = g.affine(h, d1.w, d1.b);
                    let h = g.reshape(h, p1h * p1w * 4 * c);
                    g.gather(h, g1_inv.clone())
                };
                (mu, lv, Box::new(dec))
            }
        };

        // logvar head starts near zero so early codes sit close to the prior
        let logvar_w = graph
            .params()
            .find(|(_, name, _)| *name == "vae/enc/logvar/w")
            .map(|(v, _, _)| v);
        if let Some(w) = logvar_w.and_then(|v| graph.param_value_mut(v)) {
            w.mapv_inplace(|v| v * 0.1);
        }

        let half = graph.scale(logvar, 0.5);
        let sd = graph.exp(half);
        let noise = graph.mul(sd, eps);
        let code = graph.add(mu, noise);
        let x_hat = dec(&mut graph, code);
        let diff = graph.sub(x_hat, x);
        let sq = graph.square(diff);
        let mse = graph.mean(sq);
        // per-sample KLD averaged over the batch: -n/2 * mean(1 + lv - mu^2 - e^lv)
        let one_plus = graph.offset(logvar, 1.0);
        let mu2 = graph.square(mu);
        let elv = graph.exp(logvar);
        let t = graph.sub(one_plus, mu2);
        let t = graph.sub(t, elv);
        let t = graph.mean(t);
        let kld = graph.scale(t, -0.5 * n as f64);
        let weighted = graph.scale_by(kld, lambda);
        let loss = graph.add(mse, weighted);
        let z_hat = dec(&mut graph, z);

        Ok(Self {
            config,
            graph,
            h: Handles {
                x,
                eps,
                lambda,
                mu,
                logvar,
                mse,
                kld,
                loss,
                z,
                z_hat,
            },
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    fn check_stack(&self, s: &RasterStack) -> Result<(), ModelError> {
        if (s.spec.width, s.spec.height) != (self.config.grid.width, self.config.grid.height) {
            return Err(ModelError::Usage(format!(
                "stack is {}x{}, model expects {}x{}",
                s.spec.width, s.spec.height, self.config.grid.width, self.config.grid.height
            )));
        }
        Ok(())
    }

    fn batch_matrix(&self, stacks: &[&RasterStack]) -> Result<Matrix, ModelError> {
        let f = self.config.input_len();
        let mut data = Vec::with_capacity(stacks.len() * f);
        for s in stacks {
            self.check_stack(s)?;
            data.extend_from_slice(s.as_flat());
        }
        Ok(Array2::from_shape_vec((stacks.len(), f), data).expect("batch shape"))
    }

    /// Posterior mean and log-variance of a normalized stack.
    pub fn encode(&self, s: &RasterStack) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let x = self.batch_matrix(&[s])?;
        let ev = self.graph.forward(
            &Bindings::new().bind(self.h.x, x),
            &[self.h.mu, self.h.logvar],
        )?;
        let mu = ev.value(self.h.mu)?.iter().copied().collect::<Vec<_>>();
        let lv = ev.value(self.h.logvar)?.iter().copied().collect::<Vec<_>>();
        if mu.iter().chain(&lv).any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok((mu, lv))
    }

    /// Deterministic code `c = mu`, used at inference.
    pub fn encode_mean(&self, s: &RasterStack) -> Result<Vec<f64>, ModelError> {
        Ok(self.encode(s)?.0)
    }

    /// Decodes a code into a normalized stack on the model's grid.
    pub fn decode(&self, c: &[f64]) -> Result<RasterStack, ModelError> {
        Ok(self.decode_batch(&[c.to_vec()])?.remove(0))
    }

    pub fn decode_batch(&self, codes: &[Vec<f64>]) -> Result<Vec<RasterStack>, ModelError> {
        let n = self.config.latent_dim;
        if let Some(bad) = codes.iter().find(|c| c.len() != n) {
            return Err(ModelError::Usage(format!(
                "code has length {}, model latent_dim is {n}",
                bad.len()
            )));
        }
        if codes.is_empty() {
            return Ok(Vec::new());
        }
        let z = Array2::from_shape_vec((codes.len(), n), codes.concat()).expect("code shape");
        let ev = self
            .graph
            .forward(&Bindings::new().bind(self.h.z, z), &[self.h.z_hat])?;
        let out = ev.value(self.h.z_hat)?;
        out.rows()
            .into_iter()
            .map(|r| {
                let data: Vec<f64> = r.to_vec();
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(ModelError::NonFinite);
                }
                RasterStack::from_flat(self.config.grid, data)
                    .map_err(|e| ModelError::Usage(e.to_string()))
            })
            .collect()
    }

    /// Bindings and root of the training loss for a batch, for gradient
    /// checks and custom loops.
    pub fn loss_bindings(
        &self,
        stacks: &[&RasterStack],
        eps: Matrix,
        lambda: f64,
    ) -> Result<(Bindings, Var), ModelError> {
        let x = self.batch_matrix(stacks)?;
        if eps.dim() != (stacks.len(), self.config.latent_dim) {
            return Err(ModelError::Usage("eps must be batch x latent_dim".into()));
        }
        Ok((
            Bindings::new()
                .bind(self.h.x, x)
                .bind(self.h.eps, eps)
                .bind(self.h.lambda, scalar(lambda)),
            self.h.loss,
        ))
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

    pub fn param_vars(&self) -> Vec<Var> {
        self.graph.params().map(|(v, _, _)| v).collect()
    }

    pub fn to_tensors(&self) -> TensorSet {
        let mut set = TensorSet::new();
        let c = &self.config;
        set.push(NamedTensor::new(
            "vae/meta",
            vec![8],
            vec![
                c.latent_dim as f32,
                c.arch.code(),
                c.hidden as f32,
                c.hidden2 as f32,
                CHANNEL_COUNT as f32,
                c.grid.height as f32,
                c.grid.width as f32,
                c.grid.cell_size as f32,
            ],
        ));
        for (_, name, m) in self.graph.params() {
            set.push(NamedTensor::from_matrix(name, m));
        }
        set
    }

    pub fn from_tensors(set: &TensorSet) -> Result<Self, ModelError> {
        let meta = set.get("vae/meta")?.to_f64();
        if meta.len() != 8 || meta[4] as usize != CHANNEL_COUNT {
            return Err(ModelError::Usage("malformed vae/meta".into()));
        }
        let arch = if meta[1] == 1.0 {
            VaeArch::Patch
        } else {
            VaeArch::Mlp
        };
        let grid = GridSpec::new(meta[6] as usize, meta[5] as usize, meta[7])
            .map_err(|e| ModelError::Usage(e.to_string()))?;
        let config = VaeConfig {
            latent_dim: meta[0] as usize,
            arch,
            hidden: meta[2] as usize,
            hidden2: meta[3] as usize,
            grid,
        };
        let mut model = Self::new(config, 0)?;
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
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn build(self, lr: f64) -> Box<dyn Optimizer> {
        match self {
            OptimizerKind::Adam => Box::new(Adam::new(lr)),
            OptimizerKind::Sgd => Box::new(Sgd { lr }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "adam" => Some(OptimizerKind::Adam),
            "sgd" => Some(OptimizerKind::Sgd),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub schedule: KldSchedule,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            batch_size: 16,
            schedule: KldSchedule::default(),
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub lambda: f64,
    pub loss: f64,
    pub recon: f64,
    pub kld: f64,
}

/// Trains a fresh model on normalized stacks. Weight initialization, batch
/// order and reparameterization noise all derive from `train.seed`.
pub fn train_vae(
    corpus: &[RasterStack],
    model_config: VaeConfig,
    train: &VaeTrainConfig,
) -> Result<(VaeModel, Vec<EpochLoss>), ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::Usage("training corpus is empty".into()));
    }
    if train.batch_size == 0 {
        return Err(ModelError::Usage("batch_size must be positive".into()));
    }
    let mut model = VaeModel::new(model_config, train.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut opt = train.optimizer.build(train.lr);
    let n = model.latent_dim();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut history = Vec::with_capacity(train.epochs);
    for epoch in 0..train.epochs {
        let lambda = kld_weight(&train.schedule, epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut recon_sum, mut kld_sum) = (0.0, 0.0, 0.0);
        for batch in order.chunks(train.batch_size) {
            let stacks: Vec<&RasterStack> = batch.iter().map(|&i| &corpus[i]).collect();
            let eps = Array2::from_shape_fn((batch.len(), n), |_| rng.sample(StandardNormal));
            let (binds, root) = model.loss_bindings(&stacks, eps, lambda)?;
            let ev = model
                .graph
                .forward(&binds, &[root, model.h.mse, model.h.kld])?;
            let loss = ev.scalar(root)?;
            if !loss.is_finite() {
                return Err(ModelError::Divergence { epoch, loss });
            }
            let w = batch.len() as f64;
            loss_sum += loss * w;
            recon_sum += ev.scalar(model.h.mse)? * w;
            kld_sum += ev.scalar(model.h.kld)? * w;
            let grads = ev.backward(root)?;
            drop(ev);
            opt.step(&mut model.graph, &grads);
        }
        let total = corpus.len() as f64;
        history.push(EpochLoss {
            epoch,
            lambda,
            loss: loss_sum / total,
            recon: recon_sum / total,
            kld: kld_sum / total,
        });
    }
    Ok((model, history))
}
