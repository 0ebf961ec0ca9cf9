//! Measures how well the labeling rules recover the planted vegetation
//! cover on synthetic scenes, for the default rules and a sweep of the
//! multi-return threshold.
//!
//! cargo run --release -p urbancf --example calibrate_rules -- [n_scenes] [seed]

use urbancf::autogeolabel::{segment, vegetation_fraction, LabelRules};
use urbancf::rasterizer::{rasterize, RasterStack};
use urbancf::synthcity::{generate_corpus, CorpusConfig};

fn report(label: &str, rules: &LabelRules, stacks: &[(RasterStack, f64)]) {
    let signed: Vec<f64> = stacks
        .iter()
        .map(|(stack, truth)| vegetation_fraction(&segment(stack, rules)) - truth)
        .collect();
    let n = signed.len() as f64;
    let within = signed.iter().filter(|e| e.abs() <= 0.1).count();
    let mean = signed.iter().map(|e| e.abs()).sum::<f64>() / n;
    let bias = signed.iter().sum::<f64>() / n;
    let worst = signed.iter().map(|e| e.abs()).fold(0.0, f64::max);
    println!("{label:<24} within 0.1: {within:>4}  mean |err| {mean:.4}  bias {bias:+.4}  worst {worst:.4}");
}

fn main() {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let corpus = generate_corpus(&CorpusConfig::new(n, seed)).expect("corpus");
    let stacks: Vec<(RasterStack, f64)> = corpus
        .scenes
        .iter()
        .map(|s| {
            let stack = rasterize(&s.scene.cloud, s.params.grid())
                .expect("rasterize")
                .stack;
            (stack, s.scene.true_veg_fraction)
        })
        .collect();
    let max_v = stacks.iter().map(|s| s.1).fold(0.0, f64::max);
    println!("{n} scenes, largest planted cover {max_v:.3}");
    report("default rules", &LabelRules::default(), &stacks);
    for multiret in [0.2, 0.4, 0.5, 0.6] {
        let rules = LabelRules {
            veg_multiret_min: multiret,
            ..LabelRules::default()
        };
        report(&format!("veg_multiret_min {multiret}"), &rules, &stacks);
    }
}
