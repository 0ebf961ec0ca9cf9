use proptest::prelude::*;

use urbancf::autogeolabel::{aggregate_fractions, segment, vegetation_fraction, Label, LabelRules};
use urbancf::rasterizer::{GridSpec, RasterStack, CHANNEL_COUNT};

fn stack() -> impl Strategy<Value = RasterStack> {
    let g = GridSpec::new(6, 5, 1.0).unwrap();
    prop::collection::vec(0.0..20.0f64, CHANNEL_COUNT * g.cells())
        .prop_map(move |data| RasterStack::from_flat(g, data).unwrap())
}

fn rules() -> impl Strategy<Value = LabelRules> {
    (0.0..3.0f64, 0.0..1.0f64, 0.0..10.0f64, 0.0..3.0f64).prop_map(|(a, b, c, d)| LabelRules {
        veg_zstd_min: a,
        veg_multiret_min: b,
        bld_height_min: c,
        bld_zstd_max: d,
    })
}

proptest! {
    #[test]
    fn labels_partition_the_grid(s in stack(), r in rules()) {
        let map = segment(&s, &r);
        let total = map.count(Label::Background) + map.count(Label::Building) + map.count(Label::Vegetation);
        prop_assert_eq!(total, map.width * map.height);
        let brute = map.labels.iter().filter(|l| **l == Label::Vegetation).count() as f64 / map.labels.len() as f64;
        prop_assert_eq!(vegetation_fraction(&map), brute);
    }

    #[test]
    fn raising_the_roughness_threshold_never_adds_vegetation(s in stack(), r in rules(), bump in 0.0..5.0f64) {
        let stricter = LabelRules { veg_zstd_min: r.veg_zstd_min + bump, ..r };
        prop_assert!(vegetation_fraction(&segment(&s, &stricter)) <= vegetation_fraction(&segment(&s, &r)));
    }

    #[test]
    fn aggregation_keeps_one_row_per_offset(
        tuples in prop::collection::vec((prop::sample::select(vec![-10.0, -5.0, -3.0, -1.0, 0.0, 1.0, 3.0, 5.0, 10.0]), 0.0..1.0f64), 1..200)
    ) {
        let rows = aggregate_fractions(&tuples);
        let mut offsets: Vec<f64> = tuples.iter().map(|t| t.0).collect();
        offsets.sort_by(f64::total_cmp);
        offsets.dedup();
        prop_assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), offsets);
        for (dt, mean) in rows {
            let group: Vec<f64> = tuples.iter().filter(|t| t.0 == dt).map(|t| t.1).collect();
            let want = group.iter().sum::<f64>() / group.len() as f64;
            prop_assert!((mean - want).abs() < 1e-12);
        }
    }
}

#[test]
fn default_sweep_yields_nine_rows() {
    let sweep = [0.0, 1.0, -1.0, 3.0, -3.0, 5.0, -5.0, 10.0, -10.0];
    let tuples: Vec<(f64, f64)> = (0..30)
        .flat_map(|scene| {
            sweep
                .iter()
                .map(move |&dt| (dt, (scene as f64 * 0.01 + 0.1) - 0.002 * dt))
        })
        .collect();
    assert_eq!(aggregate_fractions(&tuples).len(), 9);
}
