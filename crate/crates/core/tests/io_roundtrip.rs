use proptest::prelude::*;

use urbancf::config::RunConfig;
use urbancf::io::{
    decode_tensors, encode_tensors, export_ascii_grid, import_ascii_grid, parse_point_cloud,
    read_manifest, write_manifest, write_point_cloud, ManifestEntry, NamedTensor, PointCloud,
    PointRecord, SceneManifest, TensorSet,
};

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6f64,
        any::<f64>().prop_filter("finite", |v| v.is_finite())
    ]
}

fn record() -> impl Strategy<Value = PointRecord> {
    (finite(), finite(), finite(), any::<u16>(), 1u8..=7).prop_flat_map(
        |(x, y, z, intensity, n)| {
            (1u8..=n).prop_map(move |r| PointRecord {
                x,
                y,
                z,
                intensity,
                return_number: r,
                num_returns: n,
            })
        },
    )
}

fn entry_list() -> impl Strategy<Value = Vec<ManifestEntry>> {
    prop::collection::vec(("[a-z0-9_, \"]{0,12}", "[ -~]{0,20}", finite()), 0..20).prop_map(
        |rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (id, path, t))| ManifestEntry {
                    scene_id: format!("{i}-{id}"),
                    raster_path: path,
                    temperature_kelvin: t,
                })
                .collect()
        },
    )
}

proptest! {
    #[test]
    fn point_clouds_round_trip_exactly(points in prop::collection::vec(record(), 0..50)) {
        let cloud = PointCloud { points };
        let mut buf = Vec::new();
        write_point_cloud(&cloud, &mut buf).unwrap();
        prop_assert_eq!(parse_point_cloud(buf.as_slice()).unwrap(), cloud);
    }

    #[test]
    fn manifests_round_trip_exactly(entries in entry_list()) {
        let m = SceneManifest { entries };
        let mut buf = Vec::new();
        write_manifest(&m, &mut buf).unwrap();
        prop_assert_eq!(read_manifest(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn tensor_sets_round_trip_bit_exactly(
        tensors in prop::collection::vec(("[a-z/]{1,16}", prop::collection::vec(any::<f32>(), 0..12)), 0..6)
    ) {
        let mut set = TensorSet::new();
        for (name, values) in tensors {
            let n = values.len() as u32;
            set.push(NamedTensor::new(name, vec![n], values));
        }
        let mut buf = Vec::new();
        encode_tensors(&set, &mut buf).unwrap();
        let back = decode_tensors(&buf).unwrap();
        let mut again = Vec::new();
        encode_tensors(&back, &mut again).unwrap();
        prop_assert_eq!(buf, again);
    }

    #[test]
    fn text_parsers_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
        let _ = parse_point_cloud(bytes.as_slice());
        let _ = import_ascii_grid(bytes.as_slice());
        let _ = read_manifest(bytes.as_slice());
        let _ = decode_tensors(&bytes);
        let _ = RunConfig::from_text(&String::from_utf8_lossy(&bytes));
    }

    #[test]
    fn structured_garbage_never_panics(
        lines in prop::collection::vec(
            prop_oneof![
                Just("ncols 3".to_string()),
                Just("nrows 2".to_string()),
                Just("cellsize 0".to_string()),
                Just("NODATA_value -9999".to_string()),
                Just("xllcenter 1e308".to_string()),
                Just("1 2 3 4 2 1".to_string()),
                Just("-9999 nan inf".to_string()),
                Just("vae.latent_dim = 99999999999999999999".to_string()),
                "[ -~]{0,30}",
            ],
            0..12,
        )
    ) {
        let text = lines.join("\n");
        let _ = import_ascii_grid(text.as_bytes());
        let _ = parse_point_cloud(text.as_bytes());
        let _ = RunConfig::from_text(&text);
    }
}

/// Mirrors the fuzz targets: input that parses must survive a write and reparse.
fn reparse_is_stable(bytes: &[u8]) {
    if let Ok(cloud) = parse_point_cloud(bytes) {
        let mut text = Vec::new();
        write_point_cloud(&cloud, &mut text).unwrap();
        assert_eq!(
            parse_point_cloud(text.as_slice()).unwrap().points.len(),
            cloud.points.len()
        );
    }
    if let Ok(grid) = import_ascii_grid(bytes) {
        assert_eq!(grid.values.len(), grid.width * grid.height);
        let mut text = Vec::new();
        export_ascii_grid(&grid, &mut text).unwrap();
        let again = import_ascii_grid(text.as_slice()).unwrap();
        assert_eq!((again.width, again.height), (grid.width, grid.height));
    }
    if let Ok(set) = decode_tensors(bytes) {
        let mut out = Vec::new();
        encode_tensors(&set, &mut out).unwrap();
        assert_eq!(
            decode_tensors(&out).unwrap().tensors.len(),
            set.tensors.len()
        );
    }
    if let Ok(m) = read_manifest(bytes) {
        let mut text = Vec::new();
        if write_manifest(&m, &mut text).is_ok() {
            assert_eq!(
                read_manifest(text.as_slice()).unwrap().entries.len(),
                m.entries.len()
            );
        }
    }
    if let Ok(cfg) = std::str::from_utf8(bytes)
        .map_err(drop)
        .and_then(|t| RunConfig::from_text(t).map_err(drop))
    {
        let printed = cfg.to_text();
        assert_eq!(RunConfig::from_text(&printed).unwrap().to_text(), printed);
    }
}

#[test]
fn fuzz_seeds_parse_and_reparse() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus");
    let mut seen = 0;
    for target in [
        "point_cloud",
        "ascii_grid",
        "lczm_decode",
        "manifest",
        "config",
    ] {
        for entry in std::fs::read_dir(root.join(target)).unwrap() {
            let bytes = std::fs::read(entry.unwrap().path()).unwrap();
            let parsed = match target {
                "point_cloud" => parse_point_cloud(bytes.as_slice()).is_ok(),
                "ascii_grid" => import_ascii_grid(bytes.as_slice()).is_ok(),
                "lczm_decode" => decode_tensors(&bytes).is_ok(),
                "manifest" => read_manifest(bytes.as_slice()).is_ok(),
                _ => RunConfig::from_text(std::str::from_utf8(&bytes).unwrap()).is_ok(),
            };
            assert!(parsed, "{target} seed does not parse");
            reparse_is_stable(&bytes);
            seen += 1;
        }
    }
    assert!(seen >= 10);
}

proptest! {
    #[test]
    fn parsed_garbage_reparses(
        lines in prop::collection::vec(
            prop_oneof![
                Just("ncols 2".to_string()),
                Just("nrows 1".to_string()),
                Just("cellsize 0.5".to_string()),
                Just("NODATA_value nan".to_string()),
                Just("1e308 -9999".to_string()),
                Just("0 0 0 0 1 1".to_string()),
                Just("nan inf -inf 7 2 2".to_string()),
                Just("scene_id,raster_path,temperature_kelvin".to_string()),
                Just("a,b/c.lczm,nan".to_string()),
                Just("seed = 18446744073709551615".to_string()),
                Just("perturb.dt_sweep = 1e-300,-0".to_string()),
                "[ -~]{0,20}",
            ],
            0..8,
        )
    ) {
        reparse_is_stable(lines.join("\n").as_bytes());
    }
}

proptest! {
    #[test]
    fn mutated_model_files_never_panic(
        flips in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..6),
        cut in any::<prop::sample::Index>(),
    ) {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../fuzz/corpus/lczm_decode/seed_norm.lczm");
        let mut bytes = std::fs::read(path).unwrap();
        for (at, v) in flips {
            let i = at.index(bytes.len());
            bytes[i] = v;
        }
        bytes.truncate(cut.index(bytes.len() + 1));
        reparse_is_stable(&bytes);
    }
}
