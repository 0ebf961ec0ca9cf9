//! Self-test suites run by `urbancf check`: finite-difference checks of every
//! autodiff primitive and both model losses, plus the closed-form latent step
//! properties (exact temperature change, minimal norm).

use std::fmt::Write as _;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::autodiff::{
    check_gradient, check_leaf_gradient, Bindings, GradCheckError, Graph, GraphError, Matrix, Var,
};
use crate::perturb::{delta_c, PerturbError, DEFAULT_G_FLOOR};
use crate::rasterizer::{GridSpec, RasterStack, CHANNEL_COUNT};
use crate::regressor::{RegressorConfig, RegressorModel, TargetScale};
use crate::vae::{ModelError, VaeArch, VaeConfig, VaeModel};

pub const GRADIENT_TOLERANCE: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-5;
pub const POINTS: usize = 10;
const KINK_MARGIN: f64 = 1e-3;
const MAX_DRAWS: usize = 100;

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("{name}: {source}")]
    Gradient {
        name: String,
        source: GradCheckError,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckKind {
    Gradient,
    Property,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckItem {
    pub name: String,
    pub kind: CheckKind,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckItem {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub items: Vec<CheckItem>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(CheckItem::passed)
    }

    pub fn max_gradient_error(&self) -> f64 {
        self.items
            .iter()
            .filter(|i| i.kind == CheckKind::Gradient)
            .map(|i| i.max_error)
            .fold(0.0, f64::max)
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        for i in &self.items {
            let status = if i.passed() { "ok" } else { "FAIL" };
            let _ = writeln!(
                s,
                "{status:4} {:<28} max error {:.3e} (tol {:.0e})",
                i.name, i.max_error, i.tolerance
            );
        }
        let _ = writeln!(s, "max gradient error: {:.3e}", self.max_gradient_error());
        s
    }
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Matrix {
    Array2::from_shape_fn((r, c), |_| rng.random_range(lo..hi))
}

/// Entries at least 0.1 from zero, away from the relu/abs kinks.
fn away_from_zero(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Array2::from_shape_fn((r, c), |_| {
        let m = rng.random_range(0.1..2.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn leaf_error(
    name: &str,
    g: &Graph,
    b: &Bindings,
    root: Var,
    leaf: Var,
) -> Result<f64, CheckError> {
    check_leaf_gradient(g, b, root, leaf, FD_STEP).map_err(|source| CheckError::Gradient {
        name: name.to_string(),
        source,
    })
}

fn gradient_item(name: &str, max_error: f64) -> CheckItem {
    CheckItem {
        name: name.to_string(),
        kind: CheckKind::Gradient,
        max_error,
        tolerance: GRADIENT_TOLERANCE,
    }
}

type UnaryBuild = fn(&mut Graph, Var) -> Var;
type BinaryBuild = fn(&mut Graph, Var, Var) -> Var;
type Shapes = ((usize, usize), (usize, usize));

/// Projects `f(x)` onto a fixed random matrix so every output entry counts.
fn project(g: &mut Graph, b: &Bindings, y: Var, rng: &mut ChaCha8Rng) -> Result<Var, CheckError> {
    let shape = g
        .forward(b, &[y])
        .and_then(|ev| ev.value(y).map(|m| m.dim()))
        .map_err(|e| CheckError::Gradient {
            name: "forward".into(),
            source: e.into(),
        })?;
    let c = g.constant(random(rng, shape.0, shape.1, -1.0, 1.0));
    let m = g.mul(y, c);
    Ok(g.sum(m))
}

fn unary(
    name: &str,
    build: UnaryBuild,
    positive: bool,
    rng: &mut ChaCha8Rng,
) -> Result<CheckItem, CheckError> {
    let mut worst = 0.0f64;
    for _ in 0..POINTS {
        let xv = if positive {
            random(rng, 3, 4, 0.2, 3.0)
        } else {
            away_from_zero(rng, 3, 4)
        };
        let mut g = Graph::new();
        let x = g.input_with_grad("x");
        let y = build(&mut g, x);
        let b = Bindings::new().bind(x, xv);
        let root = project(&mut g, &b, y, rng)?;
        worst = worst.max(leaf_error(name, &g, &b, root, x)?);
    }
    Ok(gradient_item(name, worst))
}

fn binary(
    name: &str,
    build: BinaryBuild,
    shapes: ((usize, usize), (usize, usize)),
    rng: &mut ChaCha8Rng,
) -> Result<CheckItem, CheckError> {
    let mut worst = 0.0f64;
    for _ in 0..POINTS {
        let (sa, sb) = shapes;
        let av = random(rng, sa.0, sa.1, -2.0, 2.0);
        let bv = random(rng, sb.0, sb.1, -2.0, 2.0);
        let mut g = Graph::new();
        let a = g.input_with_grad("a");
        let bb = g.input_with_grad("b");
        let y = build(&mut g, a, bb);
        let binds = Bindings::new().bind(a, av).bind(bb, bv);
        let root = project(&mut g, &binds, y, rng)?;
        for leaf in [a, bb] {
            worst = worst.max(leaf_error(name, &g, &binds, root, leaf)?);
        }
    }
    Ok(gradient_item(name, worst))
}

fn affine(rng: &mut ChaCha8Rng) -> Result<CheckItem, CheckError> {
    let mut worst = 0.0f64;
    for _ in 0..POINTS {
        let mut g = Graph::new();
        let x = g.input_with_grad("x");
        let w = g.param("w", random(rng, 4, 3, -1.0, 1.0));
        let b = g.param("b", random(rng, 1, 3, -1.0, 1.0));
        let y = g.affine(x, w, b);
        let binds = Bindings::new().bind(x, random(rng, 5, 4, -1.0, 1.0));
        let root = project(&mut g, &binds, y, rng)?;
        for leaf in [x, w, b] {
            worst = worst.max(leaf_error("affine", &g, &binds, root, leaf)?);
        }
    }
    Ok(gradient_item("affine", worst))
}

/// Finite-difference checks for every differentiable primitive.
pub fn primitive_checks(seed: u64) -> Result<Vec<CheckItem>, CheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let unaries: [(&str, UnaryBuild, bool); 12] = [
        ("relu", |g, x| g.relu(x), false),
        ("tanh", |g, x| g.tanh(x), false),
        ("exp", |g, x| g.exp(x), false),
        ("ln", |g, x| g.ln(x), true),
        ("square", |g, x| g.square(x), false),
        ("abs", |g, x| g.abs(x), false),
        ("scale", |g, x| g.scale(x, -2.5), false),
        ("offset", |g, x| g.offset(x, 4.0), false),
        ("sum", |g, x| g.sum(x), false),
        ("mean", |g, x| g.mean(x), false),
        ("gather", |g, x| g.gather(x, vec![3, 0, 0, 2, 1]), false),
        ("reshape", |g, x| g.reshape(x, 6), false),
    ];
    let binaries: [(&str, BinaryBuild, Shapes); 6] = [
        ("add", |g, a, b| g.add(a, b), ((3, 4), (3, 4))),
        ("sub", |g, a, b| g.sub(a, b), ((3, 4), (3, 4))),
        ("mul", |g, a, b| g.mul(a, b), ((3, 4), (3, 4))),
        ("matmul", |g, a, b| g.matmul(a, b), ((3, 4), (4, 2))),
        ("add_row", |g, a, b| g.add_row(a, b), ((3, 4), (1, 4))),
        ("scale_by", |g, a, b| g.scale_by(a, b), ((3, 4), (1, 1))),
    ];
    let mut items = Vec::new();
    for (name, build, positive) in unaries {
        items.push(unary(name, build, positive, r)?);
    }
    for (name, build, shapes) in binaries {
        items.push(binary(name, build, shapes, r)?);
    }
    items.push(affine(r)?);
    Ok(items)
}

fn random_stack(rng: &mut ChaCha8Rng, g: GridSpec) -> RasterStack {
    let data = (0..CHANNEL_COUNT * g.cells())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    RasterStack::from_flat(g, data).expect("stack size")
}

fn snapshot(graph: &Graph) -> Vec<(String, Matrix)> {
    graph
        .params()
        .map(|(_, name, m)| (name.to_string(), m.clone()))
        .collect()
}

/// Biases drawn from U(-0.5, 0.5), weights kept as initialized.
fn bias_or_init(
    init: &[(String, Matrix)],
    name: &str,
    shape: (usize, usize),
    rng: &mut ChaCha8Rng,
) -> Matrix {
    if name.ends_with("/b") {
        random(rng, shape.0, shape.1, -0.5, 0.5)
    } else {
        init.iter()
            .find(|(n, _)| n == name)
            .expect("param")
            .1
            .clone()
    }
}

/// Redraws a test point until every relu and abs argument is at least
/// `KINK_MARGIN` from zero, so the difference stencil stays on one smooth
/// piece.
fn draw_smooth<T>(mut draw: impl FnMut() -> Result<(f64, T), CheckError>) -> Result<T, CheckError> {
    let mut last = None;
    for _ in 0..MAX_DRAWS {
        let (margin, point) = draw()?;
        if margin >= KINK_MARGIN {
            return Ok(point);
        }
        last = Some(point);
    }
    Ok(last.expect("at least one draw"))
}

/// Checks the VAE loss (both architectures) with respect to every parameter,
/// and the regressor L1 loss and code gradient.
pub fn model_loss_checks(seed: u64) -> Result<Vec<CheckItem>, CheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = GridSpec::new(4, 4, 1.0).map_err(|e| ModelError::Usage(e.to_string()))?;
    let mut items = Vec::new();
    for arch in [VaeArch::Mlp, VaeArch::Patch] {
        let mut worst = 0.0f64;
        for point in 0..POINTS {
            let cfg = VaeConfig {
                arch,
                hidden: 4,
                hidden2: 3,
                ..VaeConfig::new(grid, 2)
            };
            let mut m = VaeModel::new(cfg, seed.wrapping_add(point as u64))?;
            let init = snapshot(m.graph());
            let (b, root) = draw_smooth(|| {
                m.set_params(|name, shape| bias_or_init(&init, name, shape, &mut rng));
                let stacks: Vec<RasterStack> =
                    (0..2).map(|_| random_stack(&mut rng, grid)).collect();
                let refs: Vec<&RasterStack> = stacks.iter().collect();
                let eps = Array2::from_shape_fn((2, 2), |_| rng.sample(StandardNormal));
                let lambda = rng.random_range(0.0..1.0);
                let (b, root) = m.loss_bindings(&refs, eps, lambda)?;
                Ok((m.graph().kink_margin(&b, &[root])?, (b, root)))
            })?;
            for v in m.param_vars() {
                worst = worst.max(leaf_error("vae loss", m.graph(), &b, root, v)?);
            }
        }
        items.push(gradient_item(&format!("vae loss ({})", arch.name()), worst));
    }

    let mut loss_worst = 0.0f64;
    let mut code_worst = 0.0f64;
    for point in 0..POINTS {
        let cfg = RegressorConfig {
            hidden1: 6,
            hidden2: 4,
            ..RegressorConfig::new(3)
        };
        let scale = TargetScale {
            mean: 290.0,
            std: 2.0,
        };
        let mut m = RegressorModel::new(cfg, scale, seed.wrapping_add(100 + point as u64))?;
        let init = snapshot(m.graph());
        let (b, root, c) = draw_smooth(|| {
            m.set_params(|name, shape| bias_or_init(&init, name, shape, &mut rng));
            let mut codes: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let temps: Vec<f64> = (0..5).map(|_| rng.random_range(280.0..300.0)).collect();
            let (b, root) = m.loss_bindings(&codes, &temps)?;
            // the last code is the point of the code-gradient check
            let (bc, rc) = m.loss_bindings(&codes[4..], &temps[4..])?;
            let margin = m
                .graph()
                .kink_margin(&b, &[root])?
                .min(m.graph().kink_margin(&bc, &[rc])?);
            Ok((margin, (b, root, codes.pop().expect("five codes"))))
        })?;
        for v in m.param_vars() {
            loss_worst = loss_worst.max(leaf_error("regressor loss", m.graph(), &b, root, v)?);
        }
        let e = check_gradient(
            |x| {
                let v = m.predict(x).unwrap_or(f64::NAN);
                let g = m
                    .grad_wrt_code(x)
                    .unwrap_or_else(|_| vec![f64::NAN; x.len()]);
                (v, g)
            },
            &c,
            FD_STEP,
        )
        .map_err(|source| CheckError::Gradient {
            name: "regressor code gradient".into(),
            source,
        })?;
        code_worst = code_worst.max(e);
    }
    items.push(gradient_item("regressor loss", loss_worst));
    items.push(gradient_item("regressor code gradient", code_worst));
    Ok(items)
}

/// Closed-form step properties over random gradients: `g . dc = dt` (relative
/// error) on `cases` draws, and on the first `norm_cases` of them no
/// `alternatives` random solutions of the same constraint are shorter.
pub fn closed_form_checks(
    seed: u64,
    cases: usize,
    norm_cases: usize,
    alternatives: usize,
) -> Result<Vec<CheckItem>, CheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exact = 0.0f64;
    let mut norm_excess = 0.0f64;
    for case in 0..cases {
        let n = rng.random_range(1..=64usize);
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let dt = rng.random_range(-10.0..10.0);
        let dc = match delta_c(&g, dt, DEFAULT_G_FLOOR) {
            Ok(dc) => dc,
            Err(PerturbError::DegenerateGradient { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        let dot: f64 = g.iter().zip(&dc).map(|(a, b)| a * b).sum();
        exact = exact.max((dot - dt).abs() / dt.abs().max(1.0));
        if case < norm_cases {
            let norm = dc.iter().map(|v| v * v).sum::<f64>().sqrt();
            let gg: f64 = g.iter().map(|v| v * v).sum();
            for _ in 0..alternatives {
                // dc + v with v projected orthogonal to g also satisfies g . x = dt
                let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let proj: f64 = v.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() / gg;
                for (vi, gi) in v.iter_mut().zip(&g) {
                    *vi -= proj * gi;
                }
                let alt = dc
                    .iter()
                    .zip(&v)
                    .map(|(a, b)| (a + b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                norm_excess = norm_excess.max((norm - alt) / norm.max(f64::MIN_POSITIVE));
            }
        }
    }
    Ok(vec![
        CheckItem {
            name: "closed-form exactness".into(),
            kind: CheckKind::Property,
            max_error: exact,
            tolerance: 1e-9,
        },
        CheckItem {
            name: "closed-form minimal norm".into(),
            kind: CheckKind::Property,
            max_error: norm_excess.max(0.0),
            tolerance: 1e-12,
        },
    ])
}

/// Runs every suite.
pub fn run_checks(seed: u64) -> Result<CheckReport, CheckError> {
    let mut items = primitive_checks(seed)?;
    items.extend(model_loss_checks(seed ^ 0x5eed)?);
    items.extend(closed_form_checks(seed ^ 0xc105ed, 1000, 100, 100)?);
    Ok(CheckReport { items })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        let r = run_checks(1).unwrap();
        assert!(r.passed(), "{}", r.text());
        assert!(r.max_gradient_error() <= GRADIENT_TOLERANCE);
        assert!(r.text().contains("max gradient error"));
    }

    #[test]
    fn failing_item_is_reported() {
        let r = CheckReport {
            items: vec![gradient_item("broken", 0.5)],
        };
        assert!(!r.passed());
        assert!(r.text().starts_with("FAIL"));
    }
}
