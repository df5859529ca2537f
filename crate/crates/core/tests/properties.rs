use proptest::prelude::*;

use shelab::islands::{d_alpha, threshold};
use shelab::kernels::{dalang_finite, heat_kernel, Family, KernelSpec};
use shelab::noise::{fill_standard_normal, read_dump, write_dump, Grid, SeedPath};
use shelab::stats::Moments;

proptest! {
    #[test]
    fn moments_merge_matches_sequential(xs in prop::collection::vec(-1e3f64..1e3, 2..60), cut in 0usize..60) {
        let cut = cut.min(xs.len());
        let (mut a, mut b, mut all) = (Moments::default(), Moments::default(), Moments::default());
        xs[..cut].iter().for_each(|&x| a.push(x));
        xs[cut..].iter().for_each(|&x| b.push(x));
        xs.iter().for_each(|&x| all.push(x));
        let m = a.merge(&b);
        prop_assert_eq!(m.count, all.count);
        prop_assert!((m.mean - all.mean).abs() <= 1e-9 * (1.0 + all.mean.abs()));
        prop_assert!((m.variance() - all.variance()).abs() <= 1e-7 * (1.0 + all.variance()));
    }

    #[test]
    fn dump_round_trips(k in 3u32..8, dx in 0.01f64..2.0, seed: u64) {
        let grid = Grid::new(1, 1 << k, dx, dx * dx / 4.0).unwrap();
        let mut v = vec![0.0; grid.cells()];
        fill_standard_normal(seed, SeedPath { replica: 0, step: 0 }, &mut v);
        let mut buf = Vec::new();
        write_dump(&mut buf, &grid, &v).unwrap();
        let (g, w) = read_dump(buf.as_slice()).unwrap();
        prop_assert_eq!(g, grid);
        prop_assert_eq!(w, v);
    }

    #[test]
    fn noise_streams_are_deterministic_and_distinct(seed: u64, replica in 0u64..1000, step in 0u64..1000) {
        let p = SeedPath { replica, step };
        let (mut a, mut b, mut c) = (vec![0.0; 16], vec![0.0; 16], vec![0.0; 16]);
        fill_standard_normal(seed, p, &mut a);
        fill_standard_normal(seed, p, &mut b);
        fill_standard_normal(seed, SeedPath { replica: replica + 1, step }, &mut c);
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(&a, &c);
    }

    #[test]
    fn threshold_is_monotone(alpha in 0.01f64..1.0, n in 3.0f64..1e6, f in 1.01f64..10.0) {
        prop_assert!(threshold(alpha, n * f) >= threshold(alpha, n));
        prop_assert!(threshold(alpha * f, n) >= threshold(alpha, n));
        prop_assert!(threshold(alpha, n) > 1.0);
    }

    #[test]
    fn d_alpha_is_linear_in_alpha(alpha in 0.01f64..1.0, t in 0.1f64..50.0, f in 1.0f64..5.0) {
        let a = d_alpha(alpha, t).unwrap();
        let b = d_alpha(alpha * f, t).unwrap();
        prop_assert!((b - f * a).abs() <= 1e-12 * b);
        prop_assert!(d_alpha(-alpha, t).is_err());
    }

    #[test]
    fn heat_kernel_has_unit_mass(t in 0.05f64..4.0) {
        let h = 0.01 * t.sqrt();
        let half = (12.0 * t.sqrt() / h) as i64;
        let mass: f64 = (-half..=half).map(|i| heat_kernel(t, &[i as f64 * h]).unwrap()).sum::<f64>() * h;
        prop_assert!((mass - 1.0).abs() < 1e-9);
    }

    #[test]
    fn heat_kernel_semigroup(s in 0.1f64..2.0, t in 0.1f64..2.0, x in -3.0f64..3.0) {
        let h = 0.005;
        let conv: f64 = (-4000..=4000).map(|i| {
            let y = i as f64 * h;
            heat_kernel(s, &[x - y]).unwrap() * heat_kernel(t, &[y]).unwrap()
        }).sum::<f64>() * h;
        let direct = heat_kernel(s + t, &[x]).unwrap();
        prop_assert!((conv - direct).abs() < 1e-8);
    }

    #[test]
    fn riesz_dalang_threshold(gamma in 0.05f64..2.95) {
        let k = KernelSpec::new(3, Family::RieszF { gamma }).unwrap();
        prop_assert_eq!(dalang_finite(&k), gamma < 2.0);
    }

    #[test]
    fn spectral_densities_are_nonnegative(z in -50.0f64..50.0, rate in 0.1f64..5.0, scale in 0.1f64..5.0) {
        for fam in [Family::ExpDecayF { rate }, Family::CauchyF { scale }, Family::GaussianH { scale }] {
            let k = KernelSpec::new(1, fam).unwrap();
            prop_assert!(k.spectral_density(z).unwrap() >= 0.0);
        }
    }
}
