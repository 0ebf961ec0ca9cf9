use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use urbancf::io::{PointCloud, PointRecord};
use urbancf::rasterizer::{
    compute_norm_stats, denormalize, normalize, rasterize, Channel, GridSpec, RasterStack,
};

fn point() -> impl Strategy<Value = PointRecord> {
    (
        -2.0..10.0f64,
        -2.0..10.0f64,
        -5.0..30.0f64,
        any::<u16>(),
        1u8..=5,
    )
        .prop_flat_map(|(x, y, z, intensity, n)| {
            (1u8..=n).prop_map(move |r| PointRecord {
                x,
                y,
                z,
                intensity,
                return_number: r,
                num_returns: n,
            })
        })
}

fn cloud() -> impl Strategy<Value = Vec<PointRecord>> {
    prop::collection::vec(point(), 0..200)
}

fn grid() -> GridSpec {
    GridSpec::new(8, 8, 1.0).unwrap()
}

fn bits(s: &RasterStack) -> Vec<u64> {
    s.as_flat().iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #[test]
    fn shuffling_points_changes_nothing(points in cloud(), seed in any::<u64>()) {
        let a = rasterize(&PointCloud { points: points.clone() }, grid()).unwrap();
        let mut shuffled = points;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let b = rasterize(&PointCloud { points: shuffled }, grid()).unwrap();
        prop_assert_eq!(bits(&a.stack), bits(&b.stack));
        prop_assert_eq!(a.out_of_extent, b.out_of_extent);
    }

    #[test]
    fn counts_and_orderings_hold(points in cloud()) {
        let g = grid();
        let r = rasterize(&PointCloud { points: points.clone() }, g).unwrap();
        let s = &r.stack;
        let inside = points.iter().filter(|p| g.cell_of(p.x, p.y).is_some()).count();
        let counted: f64 = s.channel(Channel::PointCount).iter().sum();
        prop_assert_eq!(counted, inside as f64);
        prop_assert_eq!(r.out_of_extent, points.len() - inside);
        for cell in 0..g.cells() {
            if s.get(Channel::PointCount, cell) >= 1.0 {
                let (lo, mean, hi) = (
                    s.get(Channel::ZMin, cell),
                    s.get(Channel::ZMean, cell),
                    s.get(Channel::ZMax, cell),
                );
                prop_assert!(lo <= mean + 1e-9 && mean <= hi + 1e-9, "{} {} {}", lo, mean, hi);
                prop_assert!((s.get(Channel::ZRange, cell) - (hi - lo)).abs() < 1e-9);
            }
            for ch in [Channel::MultiReturnFraction, Channel::LastReturnFraction] {
                let v = s.get(ch, cell);
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn denormalize_inverts_normalize(points in cloud(), other in cloud()) {
        let a = rasterize(&PointCloud { points }, grid()).unwrap().stack;
        let b = rasterize(&PointCloud { points: other }, grid()).unwrap().stack;
        let stats = compute_norm_stats(&[a.clone(), b]).unwrap();
        let back = denormalize(&normalize(&a, &stats), &stats);
        for (x, y) in a.as_flat().iter().zip(back.as_flat()) {
            prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "{} {}", x, y);
        }
    }
}

#[test]
fn norm_stats_match_two_pass_arithmetic() {
    let g = grid();
    let mut stacks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut next = || rng.random::<f64>();
    for _ in 0..20 {
        let points = (0..150)
            .map(|_| {
                let n = 1 + (next() * 3.0) as u8;
                PointRecord {
                    x: next() * 8.0,
                    y: next() * 8.0,
                    z: 100.0 + next() * 20.0,
                    intensity: (next() * 4000.0) as u16,
                    return_number: 1 + (next() * n as f64) as u8,
                    num_returns: n,
                }
            })
            .collect();
        stacks.push(rasterize(&PointCloud { points }, g).unwrap().stack);
    }
    let stats = compute_norm_stats(&stacks).unwrap();
    for ch in Channel::ALL {
        let values: Vec<f64> = stacks.iter().flat_map(|s| s.channel(ch).to_vec()).collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt().max(1e-6);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
        assert!(close(stats.mean[ch.index()], mean), "{}", ch.name());
        assert!(close(stats.std[ch.index()], std), "{}", ch.name());
    }
}
