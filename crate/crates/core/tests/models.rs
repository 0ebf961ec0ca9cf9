use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use urbancf::perturb::{latent_step, Perturbation};
use urbancf::rasterizer::{compute_norm_stats, normalize, rasterize, GridSpec, RasterStack};
use urbancf::regressor::{
    error_report, train_regressor, Activation, RegressorConfig, RegressorTrainConfig,
};
use urbancf::synthcity::{generate_corpus, CorpusConfig};
use urbancf::vae::{train_vae, VaeConfig, VaeTrainConfig};

fn normalized_corpus(n: usize, seed: u64) -> (GridSpec, Vec<RasterStack>) {
    let corpus = generate_corpus(&CorpusConfig::new(n, seed)).unwrap();
    let grid = corpus.scenes[0].params.grid();
    let raw: Vec<RasterStack> = corpus
        .scenes
        .iter()
        .map(|s| rasterize(&s.scene.cloud, grid).unwrap().stack)
        .collect();
    let stats = compute_norm_stats(&raw).unwrap();
    (grid, raw.iter().map(|s| normalize(s, &stats)).collect())
}

#[test]
fn vae_training_reconstructs_and_separates_scenes() {
    let (grid, stacks) = normalized_corpus(50, 21);
    assert_eq!((grid.width, grid.height), (16, 16));
    let train = VaeTrainConfig {
        epochs: 100,
        seed: 4,
        ..VaeTrainConfig::default()
    };
    let (model, history) = train_vae(&stacks, VaeConfig::new(grid, 32), &train).unwrap();
    assert_eq!(history.len(), 100);
    let first = history[0].loss;
    let last = history.last().unwrap().recon;
    assert!(
        last < 0.5 * first,
        "epoch 1 loss {first}, final recon {last}"
    );

    let n = stacks.len() as f64;
    let mut codes = Vec::new();
    let mut var_mean = vec![0.0; 32];
    let mut mse = 0.0;
    for s in &stacks {
        let (mu, lv) = model.encode(s).unwrap();
        for k in 0..32 {
            var_mean[k] += lv[k].exp() / n;
        }
        let back = model.decode(&mu).unwrap();
        codes.push(mu);
        let d = s
            .as_flat()
            .iter()
            .zip(back.as_flat())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
        mse += d / s.as_flat().len() as f64 / n;
    }
    // scenes stay distinguishable: codes sit further apart than their posterior spread
    let spread = (var_mean.iter().sum::<f64>() / 32.0).sqrt();
    let mut gap = 0.0;
    for w in codes.windows(2) {
        gap += w[0]
            .iter()
            .zip(&w[1])
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
    }
    gap /= (codes.len() - 1) as f64;
    assert!(
        gap > 10.0 * spread,
        "code gap {gap}, posterior spread {spread}"
    );
    // the KL weight stays below 1e-5, so posteriors end up much tighter than the prior
    assert!(
        var_mean.iter().all(|v| *v > 0.0 && *v < 1.0),
        "{var_mean:?}"
    );
    // unit-variance inputs: an untrained decoder scores about 1
    assert!(mse < 0.5, "reconstruction mse {mse}");
}

#[test]
fn vae_training_is_seed_deterministic() {
    let (grid, stacks) = normalized_corpus(12, 22);
    let train = VaeTrainConfig {
        epochs: 4,
        seed: 9,
        ..VaeTrainConfig::default()
    };
    let (a, ha) = train_vae(&stacks, VaeConfig::new(grid, 8), &train).unwrap();
    let (b, hb) = train_vae(&stacks, VaeConfig::new(grid, 8), &train).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a.to_tensors(), b.to_tensors());
}

/// Codes with a planted linear temperature law plus N(0, sigma) noise.
fn planted_codes(n: usize, dim: usize, sigma: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..dim)
        .map(|k| if k % 2 == 0 { 1.0 } else { -0.5 })
        .collect();
    let codes: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let temps = codes
        .iter()
        .map(|c| {
            let signal: f64 = c.iter().zip(&w).map(|(a, b)| a * b).sum();
            291.0 + signal + sigma * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    (codes, temps)
}

#[test]
fn regressor_held_out_error_is_within_twice_the_noise() {
    let sigma = 0.5;
    let (codes, temps) = planted_codes(500, 8, sigma, 31);
    let (model, fit) = train_regressor(
        &codes[..400],
        &temps[..400],
        RegressorConfig::new(8),
        &RegressorTrainConfig::default(),
    )
    .unwrap();
    assert!(fit.history.last().unwrap() < &fit.history[0]);
    let held_out = error_report(&model, &codes[400..], &temps[400..]).unwrap();
    assert!(held_out.mae < 2.0 * sigma, "held-out MAE {}", held_out.mae);
}

#[test]
fn small_offsets_are_met_to_first_order_on_a_smooth_regressor() {
    let (codes, temps) = planted_codes(400, 8, 0.5, 32);
    let cfg = RegressorConfig {
        activation: Activation::Tanh,
        ..RegressorConfig::new(8)
    };
    let (model, _) =
        train_regressor(&codes, &temps, cfg, &RegressorTrainConfig::default()).unwrap();
    let mean = temps.iter().sum::<f64>() / temps.len() as f64;
    let scale = (temps.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / temps.len() as f64).sqrt();
    let dt = 0.01 * scale;
    for c in codes.iter().take(20) {
        for signed in [dt, -dt] {
            let (_, achieved) = latent_step(&model, c, &Perturbation::closed_form(signed)).unwrap();
            assert!(
                ((achieved - signed) / signed).abs() <= 0.1,
                "{achieved} vs {signed}"
            );
        }
    }
}
