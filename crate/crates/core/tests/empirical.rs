use proptest::prelude::*;
use sliced_ot::empirical::{brute_force_wp_pow, w1_cdf, wp_pow_equal, wp_pow_weighted, Sample1D};

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, n)
}

fn pair(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max).prop_flat_map(|n| (values(n), values(n)))
}

fn order() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.0), Just(1.5), Just(2.0), Just(3.0)]
}

fn wp(xs: &[f64], ys: &[f64], p: f64) -> f64 {
    wp_pow_equal(&Sample1D::uniform(xs.to_vec()).unwrap(), &Sample1D::uniform(ys.to_vec()).unwrap(), p)
        .unwrap()
        .powf(1.0 / p)
}

proptest! {
    #[test]
    fn sorting_matches_permutation_brute_force((xs, ys) in pair(7), p in order()) {
        let (x, y) = (Sample1D::uniform(xs).unwrap(), Sample1D::uniform(ys).unwrap());
        let fast = wp_pow_equal(&x, &y, p).unwrap();
        let slow = brute_force_wp_pow(&x, &y, p).unwrap();
        prop_assert!((fast - slow).abs() <= 1e-10 * (1.0 + slow), "{fast} vs {slow}");
    }

    #[test]
    fn metric_axioms((xs, ys) in pair(30), zs in values(30), p in order()) {
        let zs = &zs[..xs.len()];
        prop_assert_eq!(wp(&xs, &xs, p), 0.0);
        prop_assert!((wp(&xs, &ys, p) - wp(&ys, &xs, p)).abs() <= 1e-12);
        prop_assert!(wp(&xs, &ys, p) <= wp(&xs, zs, p) + wp(zs, &ys, p) + 1e-9);
    }

    #[test]
    fn scale_and_translation((xs, ys) in pair(20), a in -5.0f64..5.0, t in -5.0f64..5.0, p in order()) {
        let base = wp(&xs, &ys, p);
        let scaled = wp(&xs.iter().map(|v| a * v).collect::<Vec<_>>(), &ys.iter().map(|v| a * v).collect::<Vec<_>>(), p);
        prop_assert!((scaled - a.abs() * base).abs() <= 1e-9 * (1.0 + base));
        let shifted = wp(&xs.iter().map(|v| v + t).collect::<Vec<_>>(), &ys.iter().map(|v| v + t).collect::<Vec<_>>(), p);
        prop_assert!((shifted - base).abs() <= 1e-9 * (1.0 + base));
    }

    #[test]
    fn weighted_route_agrees_with_equal_route((xs, ys) in pair(25), p in order()) {
        let n = xs.len();
        let x = Sample1D::uniform(xs.clone()).unwrap();
        let y = Sample1D::uniform(ys.clone()).unwrap();
        let xw = Sample1D::weighted(xs, vec![1.0 / n as f64; n]).unwrap();
        let yw = Sample1D::weighted(ys, vec![1.0 / n as f64; n]).unwrap();
        let equal = wp_pow_equal(&x, &y, p).unwrap();
        let weighted = wp_pow_weighted(&xw, &yw, p).unwrap();
        prop_assert!((equal - weighted).abs() <= 1e-10 * (1.0 + equal));
    }

    #[test]
    fn duplicated_atoms_equal_their_weighted_merge(xs in values(6), ys in values(6), reps in 1usize..4) {
        // Repeating each atom `reps` times is the same measure.
        let rep = |v: &[f64]| v.iter().flat_map(|a| std::iter::repeat_n(*a, reps)).collect::<Vec<_>>();
        let direct = wp(&xs, &ys, 2.0);
        let repeated = wp(&rep(&xs), &rep(&ys), 2.0);
        prop_assert!((direct - repeated).abs() <= 1e-9 * (1.0 + direct));
    }

    #[test]
    fn w1_matches_cdf_formula(xs in values(9), ws in prop::collection::vec(0.01f64..1.0, 9), ys in values(5)) {
        let total: f64 = ws.iter().sum();
        let x = Sample1D::weighted(xs, ws.iter().map(|w| w / total).collect()).unwrap();
        let y = Sample1D::uniform(ys).unwrap();
        let coupling = wp_pow_weighted(&x, &y, 1.0).unwrap();
        let cdf = w1_cdf(&x, &y).unwrap();
        prop_assert!((coupling - cdf).abs() <= 1e-10 * (1.0 + cdf));
    }
}

#[test]
fn unequal_sizes_use_the_quantile_coupling() {
    // {0, 1} against {0, 0.5, 1}: masses 1/2 vs 1/3 each.
    let x = Sample1D::uniform(vec![0.0, 1.0]).unwrap();
    let y = Sample1D::uniform(vec![0.0, 0.5, 1.0]).unwrap();
    // Quantile coupling moves 1/6 of mass by 1/2 from each side to the middle atom.
    let v = wp_pow_weighted(&x, &y, 1.0).unwrap();
    assert!((v - 1.0 / 6.0).abs() < 1e-12, "{v}");
    assert!((w1_cdf(&x, &y).unwrap() - 1.0 / 6.0).abs() < 1e-12);
}
