use std::fs;

use proptest::prelude::*;
use urbancf::config::RunConfig;
use urbancf::pipeline::{self, RunDir, StageError};
use urbancf::report::{build_report, ExperimentRecord};

fn records(slope: f64) -> Vec<ExperimentRecord> {
    let mut out = Vec::new();
    for s in 0..4 {
        let base = 0.2 + 0.05 * s as f64;
        for dt in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            out.push(ExperimentRecord {
                scene_id: format!("scene_{s:05}"),
                delta_t: dt,
                achieved_dt: dt * 1.01,
                v_prime: (base + slope * dt).clamp(0.0, 1.0),
                v_baseline: base,
            });
        }
    }
    out
}

fn write_records(dir: &RunDir, recs: &[ExperimentRecord]) {
    fs::create_dir_all(dir.records().parent().unwrap()).unwrap();
    let mut text = String::from("scene_id,delta_t,achieved_dt,v_prime,v_baseline\n");
    for r in recs {
        text += &format!(
            "{},{},{},{},{}\n",
            r.scene_id, r.delta_t, r.achieved_dt, r.v_prime, r.v_baseline
        );
    }
    fs::write(dir.records(), text).unwrap();
}

proptest! {
    #[test]
    fn report_ignores_record_order(perm in Just((0..20usize).collect::<Vec<_>>()).prop_shuffle()) {
        let recs = records(-0.03);
        let shuffled: Vec<ExperimentRecord> = perm.iter().map(|&i| recs[i].clone()).collect();
        let a = build_report(&recs, 0, 0.05).unwrap();
        let b = build_report(&shuffled, 0, 0.05).unwrap();
        prop_assert_eq!(a.rows, b.rows);
        prop_assert_eq!(a.fit.a.to_bits(), b.fit.a.to_bits());
        prop_assert_eq!(a.n_scenes, 4);
    }
}

#[test]
fn analyze_is_a_pure_function_of_its_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = RunDir::new(tmp.path());
    write_records(&dir, &records(-0.03));
    fs::create_dir_all(dir.counterfactuals()).unwrap();
    fs::write(
        dir.failures(),
        "scene_id,delta_t,error\nscene_00009,2,gradient norm below floor\n",
    )
    .unwrap();
    let cfg = RunConfig::default();
    let first = pipeline::analyze_stage(&cfg, &dir).unwrap();
    let figure = fs::read(dir.figure()).unwrap();
    let text = fs::read(dir.report()).unwrap();
    let second = pipeline::analyze_stage(&cfg, &dir).unwrap();
    assert_eq!(first, second);
    assert_eq!(fs::read(dir.figure()).unwrap(), figure);
    assert_eq!(fs::read(dir.report()).unwrap(), text);

    assert_eq!(first.excluded, 1);
    assert_eq!(first.n_records, 20);
    assert!((first.fit.a + 0.03).abs() < 1e-12);
    assert!(first.decision.reject_null);
    assert!(String::from_utf8(text).unwrap().contains("excluded: 1"));
}

#[test]
fn flat_sweep_is_not_a_cooling_effect() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = RunDir::new(tmp.path());
    write_records(&dir, &records(0.0));
    let r = pipeline::analyze_stage(&RunConfig::default(), &dir).unwrap();
    assert!(!r.decision.reject_null);
}

#[test]
fn stages_name_their_missing_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = RunDir::new(tmp.path().join("empty"));
    let cfg = RunConfig::default();
    let errors = [
        pipeline::rasterize_stage(&cfg, &dir).map(drop),
        pipeline::train_vae_stage(&cfg, &dir).map(drop),
        pipeline::train_reg_stage(&cfg, &dir).map(drop),
        pipeline::perturb_stage(&cfg, &dir).map(drop),
        pipeline::label_stage(&cfg, &dir).map(drop),
        pipeline::analyze_stage(&cfg, &dir).map(drop),
    ];
    for e in errors {
        match e {
            Err(StageError::Data(msg)) => assert!(msg.contains("not found"), "{msg}"),
            other => panic!("expected a data error, got {other:?}"),
        }
    }
}

#[test]
fn malformed_records_are_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = RunDir::new(tmp.path());
    fs::create_dir_all(dir.records().parent().unwrap()).unwrap();
    fs::write(
        dir.records(),
        "scene_id,delta_t,achieved_dt,v_prime,v_baseline\na,1,1,x,0\n",
    )
    .unwrap();
    let e = pipeline::analyze_stage(&RunConfig::default(), &dir).unwrap_err();
    assert!(
        matches!(&e, StageError::Data(m) if m.contains("line 2")),
        "{e:?}"
    );
}

#[test]
fn invalid_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.set("vae.latent_dim", "0").unwrap();
    let e = pipeline::synth(&cfg, &RunDir::new(tmp.path())).unwrap_err();
    assert!(matches!(e, StageError::Usage(_)), "{e:?}");
}
