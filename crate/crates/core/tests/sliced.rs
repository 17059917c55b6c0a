use ndarray::Array2;
use proptest::prelude::*;
use sliced_ot::{estimate_swp, rng, ModelSpec, PointCloud};

fn cloud(n: usize, d: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(-3.0f64..3.0, n * d)
        .prop_map(move |v| PointCloud::new(Array2::from_shape_vec((n, d), v).unwrap()).unwrap())
}

/// Rotation in the (0, 1) coordinate plane.
fn plane_rotation(d: usize, angle: f64) -> Array2<f64> {
    let mut q = Array2::eye(d);
    q[[0, 0]] = angle.cos();
    q[[0, 1]] = -angle.sin();
    q[[1, 0]] = angle.sin();
    q[[1, 1]] = angle.cos();
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn identical_clouds_give_zero(x in cloud(20, 4), seed in any::<u64>()) {
        prop_assert_eq!(estimate_swp(&x, &x, 2.0, 30, seed).unwrap().value, 0.0);
    }

    #[test]
    fn scale_equivariance(x in cloud(15, 3), y in cloud(15, 3), a in 0.1f64..5.0, seed in any::<u64>()) {
        let base = estimate_swp(&x, &y, 2.0, 40, seed).unwrap().value;
        let scaled = estimate_swp(&x.scaled(a), &y.scaled(a), 2.0, 40, seed).unwrap().value;
        prop_assert!((scaled - a * base).abs() <= 1e-9 * (1.0 + a * base));
    }

    #[test]
    fn same_seed_same_bits(x in cloud(12, 3), y in cloud(9, 3), seed in any::<u64>()) {
        let a = estimate_swp(&x, &y, 1.5, 25, seed).unwrap();
        let b = estimate_swp(&x, &y, 1.5, 25, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sw_is_symmetric(x in cloud(10, 2), y in cloud(10, 2), seed in any::<u64>()) {
        let a = estimate_swp(&x, &y, 2.0, 30, seed).unwrap().value_pow;
        let b = estimate_swp(&y, &x, 2.0, 30, seed).unwrap().value_pow;
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
    }
}

#[test]
fn worker_count_does_not_change_bits() {
    let x = ModelSpec::standard_gaussian(6).sample(300, &mut rng::root(1)).unwrap();
    let y = ModelSpec::gaussian(vec![1.0; 6], None).sample(200, &mut rng::root(2)).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| estimate_swp(&x, &y, 2.0, 500, 9).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(7));
}

#[test]
fn rotation_invariance_within_monte_carlo_error() {
    let d = 4;
    let x = ModelSpec::standard_gaussian(d).sample(400, &mut rng::root(3)).unwrap();
    let y = ModelSpec::gaussian(vec![0.5, -1.0, 0.0, 2.0], None).sample(400, &mut rng::root(4)).unwrap();
    let q = plane_rotation(d, 0.7);
    let a = estimate_swp(&x, &y, 2.0, 4000, 5).unwrap();
    let b = estimate_swp(&x.transformed(&q).unwrap(), &y.transformed(&q).unwrap(), 2.0, 4000, 6).unwrap();
    let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    assert!((a.value_pow - b.value_pow).abs() <= 4.0 * se, "{} vs {} (se {se})", a.value_pow, b.value_pow);
}

#[test]
fn gaussian_mean_shift_closed_form() {
    // SW_2^2 between N(0, I) and N(m, I) is ‖m‖²/d in the population; with
    // shared noise the two-sample estimate is close.
    let d = 5;
    let x = ModelSpec::standard_gaussian(d).sample(4000, &mut rng::root(7)).unwrap();
    let shift = Array2::from_shape_fn((4000, d), |(_, j)| if j == 0 { 3.0 } else { 0.0 });
    let y = PointCloud::new(x.points() + &shift).unwrap();
    let rep = estimate_swp(&x, &y, 2.0, 20_000, 8).unwrap();
    assert!((rep.value_pow - 9.0 / d as f64).abs() <= 3.0 * rep.std_error + 1e-3, "{rep:?}");
}

#[test]
fn weighted_cloud_matches_its_expanded_copy() {
    let points = Array2::from_shape_vec((3, 2), vec![0.0, 0.0, 1.0, 2.0, -1.0, 3.0]).unwrap();
    let weighted = PointCloud::with_weights(points.clone(), vec![0.5, 0.25, 0.25]).unwrap();
    let expanded = PointCloud::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 2.0], vec![-1.0, 3.0]]).unwrap();
    let y = PointCloud::from_rows(&[vec![2.0, 2.0], vec![0.0, 1.0], vec![3.0, -1.0], vec![1.0, 1.0]]).unwrap();
    let a = estimate_swp(&weighted, &y, 2.0, 200, 1).unwrap().value_pow;
    let b = estimate_swp(&expanded, &y, 2.0, 200, 1).unwrap().value_pow;
    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
}
