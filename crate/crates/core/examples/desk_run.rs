//! Runs every pipeline stage on the desk configuration and prints timings
//! and headline numbers.
//!
//! cargo run --release -p urbancf --example desk_run -- OUT_DIR [key=value ...]

use std::time::Instant;

use urbancf::config::RunConfig;
use urbancf::pipeline::*;

fn main() {
    let mut args = std::env::args().skip(1);
    let out = args
        .next()
        .expect("usage: desk_run OUT_DIR [key=value ...]");
    let mut cfg = RunConfig::default();
    for kv in args {
        let (k, v) = kv.split_once('=').expect("key=value");
        cfg.set(k, v).expect("override");
    }
    let dir = RunDir::new(out);
    std::fs::create_dir_all(&dir.root).unwrap();
    write_resolved_config(&cfg, &dir).unwrap();
    let t = Instant::now();
    synth(&cfg, &dir).unwrap();
    println!("synth      {:>7.1}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    rasterize_stage(&cfg, &dir).unwrap();
    println!("rasterize  {:>7.1}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    train_vae_stage(&cfg, &dir).unwrap();
    println!("train-vae  {:>7.1}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let reg = train_reg_stage(&cfg, &dir).unwrap();
    println!("train-reg  {:>7.1}s  {:?}", t.elapsed().as_secs_f64(), reg);
    let t = Instant::now();
    let p = perturb_stage(&cfg, &dir).unwrap();
    println!(
        "perturb    {:>7.1}s  {} counterfactuals, {} failures",
        t.elapsed().as_secs_f64(),
        p.counterfactuals,
        p.failures
    );
    let t = Instant::now();
    label_stage(&cfg, &dir).unwrap();
    println!("label      {:>7.1}s", t.elapsed().as_secs_f64());
    let r = analyze_stage(&cfg, &dir).unwrap();
    print!("{}", r.text());
    for row in &r.aggregated {
        println!("  {:>6} {:.4}", row.0, row.1);
    }
}
