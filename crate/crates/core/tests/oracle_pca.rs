mod oracles;

use affectmix::preprocess::{fit_pca, PcaBasis};
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(seed: u64, n: usize, f: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scales: Vec<f64> = (0..f).map(|j| 0.5 + j as f64).collect();
    Array2::from_shape_fn((n, f), |(_, j)| rng.random_range(-1.0..1.0) * scales[j])
}

#[test]
fn agrees_with_covariance_eigendecomposition() {
    for seed in 0..10 {
        let x = random(seed, 50, 10);
        let model = fit_pca(x.view(), 1.0).unwrap();
        assert_eq!(model.n_components(), 10);
        let (ratios, axes) = oracles::pca_by_covariance(x.view());
        for (a, b) in model.explained_variance_ratio().iter().zip(&ratios) {
            assert!((a - b).abs() < 1e-8, "seed {seed}: {a} vs {b}");
        }
        for k in 0..10 {
            let dot = model.components().row(k).dot(&axes.row(k));
            assert!((dot.abs() - 1.0).abs() < 1e-8, "seed {seed} axis {k}: {dot}");
        }
    }
}

#[test]
fn orthonormal_sorted_and_complete() {
    for seed in 0..10 {
        let x = random(seed + 50, 50, 10);
        let model = fit_pca(x.view(), 1.0).unwrap();
        let c = model.components();
        let gram = c.dot(&c.t());
        for i in 0..10 {
            for j in 0..10 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() < 1e-8);
            }
        }
        let r = model.explained_variance_ratio();
        assert!((r.sum() - 1.0).abs() < 1e-12);
        assert!(r.windows(2).into_iter().all(|w| w[0] >= w[1]));

        let scores = model.transform(x.view()).unwrap();
        let back = model.inverse_transform(scores.view()).unwrap();
        let centred = &x - &x.mean_axis(Axis(0)).unwrap();
        let recon_centred = &back - &x.mean_axis(Axis(0)).unwrap();
        let err = (&recon_centred - &centred).mapv(|v| v * v).sum().sqrt();
        let norm = centred.mapv(|v| v * v).sum().sqrt();
        assert!(err / norm < 1e-8);

        let cov = scores.t().dot(&scores) / 49.0;
        let scale = cov.diag().iter().cloned().fold(0.0, f64::max);
        for i in 0..10 {
            for j in 0..10 {
                if i != j {
                    assert!(cov[[i, j]].abs() < 1e-8 * scale);
                }
            }
        }
    }
}

#[test]
fn component_count_is_monotone_in_threshold() {
    let x = random(7, 50, 10);
    let basis = PcaBasis::fit(x.view()).unwrap();
    let mut last = 0;
    for t in 1..=100 {
        let m = basis.n_components_for(t as f64 / 100.0).unwrap();
        assert!(m >= last && m >= 1);
        last = m;
    }
    assert_eq!(last, 10);
}
