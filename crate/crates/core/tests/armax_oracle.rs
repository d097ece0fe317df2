use rand::Rng;
use rand_distr::{Distribution, Normal};
use vbfs_core::armax::{fit_armax, fit_miso, simulate_miso, ArmaxOrders, IoSeq};
use vbfs_core::nnet::rng_for;

/// `A = 1 - 1.2 q^-1 + 0.5 q^-2`, `B = q^-1 + 0.4 q^-2`, `C = 1 + 0.5 q^-1`.
fn simulate(len: usize, sigma: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng_for(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let u: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let e: Vec<f64> = (0..len).map(|_| noise.sample(&mut rng)).collect();
    let mut y = vec![0.0; len];
    for t in 2..len {
        y[t] = 1.2 * y[t - 1] - 0.5 * y[t - 2] + u[t - 1] + 0.4 * u[t - 2] + e[t] + 0.5 * e[t - 1];
    }
    (u, y)
}

#[test]
fn second_order_process_with_coloured_noise() {
    let sigma = 1e-4;
    let (u, y) = simulate(10_000, sigma, 42);
    let o = ArmaxOrders { na: 2, nb: 2, nc: 1, nk: 1 };
    let m = fit_armax(&[IoSeq { u: &u, y: &y }], 1, o).unwrap();
    let truth = [-1.2, 0.5, 1.0, 0.4, 0.5];
    for (est, want) in m.theta().iter().zip(truth) {
        assert!(((est - want) / want).abs() < 0.05, "{:?}", m.theta());
    }
    assert!(m.is_stable());

    let (ut, yt) = simulate(10_000, sigma, 43);
    let p = m.predict(&ut, &yt).unwrap();
    let rmse = (p.iter().zip(&yt).skip(100).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (yt.len() - 100) as f64).sqrt();
    assert!((rmse / sigma - 1.0).abs() < 0.2, "rmse {rmse}");
}

#[test]
fn miso_fits_each_output_independently() {
    let (u, y1) = simulate(3000, 1e-6, 1);
    let y2: Vec<f64> = y1.iter().map(|v| -2.0 * v).collect();
    let y: Vec<f64> = y1.iter().zip(&y2).flat_map(|(a, b)| [*a, *b]).collect();
    let o = ArmaxOrders { na: 2, nb: 2, nc: 1, nk: 1 };
    let ms = fit_miso(&[(&u, &y)], 1, 2, o).unwrap();
    assert_eq!(ms.len(), 2);
    assert!((ms[0].a[0] - ms[1].a[0]).abs() < 1e-3);
    assert!((ms[1].b[0][0] + 2.0 * ms[0].b[0][0]).abs() < 1e-2);
    let sim = simulate_miso(&ms, &u, &y).unwrap();
    assert_eq!(sim.len(), y.len());
}
