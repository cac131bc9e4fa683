use fairwash::attack::{analytic_fairwash, FlatManifoldSpec};
use fairwash::explain::{explain_gradient, explain_xgrad};
use fairwash::manifold::{decoder_tangent, hyperplane_tangent, tsp_explanation, Projector, TspVariant};
use fairwash::models::{Activation, AutoencoderModel, DenseLayer, LogRegModel, MlpModel};
use fairwash::{RngState, Tensor};

fn normal_vec(rng: &mut RngState, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal(0.0, 1.0)).collect()
}

/// Orthonormal `D x d` matrix as a list of columns.
fn orthonormal_columns(rng: &mut RngState, dim: usize, d: usize) -> Vec<Vec<f64>> {
    let spanning: Vec<Vec<f64>> = (0..d).map(|_| normal_vec(rng, dim)).collect();
    Projector::from_basis(spanning, dim).unwrap().basis().to_vec()
}

/// Linear autoencoder `x ↦ A Aᵀ x` with orthonormal `A`.
fn linear_autoencoder(cols: &[Vec<f64>]) -> AutoencoderModel {
    let (dim, d) = (cols[0].len(), cols.len());
    let at: Vec<f64> = cols.iter().flatten().copied().collect();
    let a: Vec<f64> = (0..dim).flat_map(|i| cols.iter().map(move |c| c[i])).collect();
    let encoder = DenseLayer::new(
        Tensor::matrix(d, dim, at).unwrap(),
        Tensor::zeros(&[1, d]),
        Activation::Identity,
    )
    .unwrap();
    let decoder = DenseLayer::new(
        Tensor::matrix(dim, d, a).unwrap(),
        Tensor::zeros(&[1, dim]),
        Activation::Identity,
    )
    .unwrap();
    AutoencoderModel::new(
        MlpModel::from_layers(vec![encoder]).unwrap(),
        MlpModel::from_layers(vec![decoder]).unwrap(),
    )
    .unwrap()
}

#[test]
fn linear_decoder_gives_column_space_projector() {
    let mut rng = RngState::new(11);
    let (dim, d) = (9, 3);
    let cols = orthonormal_columns(&mut rng, dim, d);
    let ae = linear_autoencoder(&cols);
    let x = normal_vec(&mut rng, dim);
    let p = decoder_tangent(&ae, &x, d).unwrap().dense();
    for i in 0..dim {
        for j in 0..dim {
            let aat: f64 = cols.iter().map(|c| c[i] * c[j]).sum();
            assert!((p.get(i, j) - aat).abs() < 1e-10, "({i},{j}): {} vs {aat}", p.get(i, j));
        }
    }
}

#[test]
fn autoencoder_and_hyperplane_agree_on_a_flat_manifold() {
    let mut rng = RngState::new(12);
    let (dim, d) = (12, 3);
    let cols = orthonormal_columns(&mut rng, dim, d);
    let offset = normal_vec(&mut rng, dim);
    // Slightly noisy samples of an affine 3-plane.
    let point = |rng: &mut RngState| -> Vec<f64> {
        let z = normal_vec(rng, d);
        (0..dim)
            .map(|i| offset[i] + cols.iter().zip(&z).map(|(c, zi)| c[i] * zi).sum::<f64>() + 1e-3 * rng.normal(0.0, 1.0))
            .collect()
    };
    let cloud: Vec<Vec<f64>> = (0..400).map(|_| point(&mut rng)).collect();
    let train = Tensor::from_rows(&cloud).unwrap();
    let ae = linear_autoencoder(&cols);
    for _ in 0..10 {
        let x = point(&mut rng);
        let hp = hyperplane_tangent(&x, &train, 50, d).unwrap().dense();
        let dec = decoder_tangent(&ae, &x, d).unwrap().dense();
        let diff = hp.max_abs_diff(&dec);
        assert!(diff <= 1e-2, "projectors differ by {diff}");
    }
}

#[test]
fn tsp_maps_cannot_see_an_analytic_attack() {
    let spec = FlatManifoldSpec::new(vec![vec![0.0, 0.4, -1.0]], vec![0.0]).unwrap().normalized();
    let p = spec.projector().unwrap();
    let g = LogRegModel::new(vec![0.9, 0.1, 0.0], 0.3).unwrap();
    let gt = analytic_fairwash(&g, &spec, &[25.0], None).unwrap();
    let mut rng = RngState::new(13);
    for _ in 0..50 {
        let (a, b) = (rng.normal(0.0, 1.0), rng.uniform_range(0.5, 1.5));
        // On the manifold: x₃ = 0.4·x₂.
        let x = vec![a, b, 0.4 * b];
        assert!((g.score(&x) - gt.score(&x)).abs() < 1e-12);
        for (explain, variant) in [
            (explain_gradient as fn(&LogRegModel, &[f64], usize) -> _, TspVariant::Standard),
            (explain_xgrad, TspVariant::Generalized),
        ] {
            let h = explain(&g, &x, 0).unwrap();
            let ht = explain(&gt, &x, 0).unwrap();
            let raw: f64 = h.values().iter().zip(ht.values()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            assert!(raw > 1.0, "the attack should change the raw map");
            let ph = tsp_explanation(&h, &p, &x, None, variant).unwrap();
            let pht = tsp_explanation(&ht, &p, &x, None, variant).unwrap();
            for (u, v) in ph.values().iter().zip(pht.values()) {
                assert!((u - v).abs() < 1e-10, "{u} vs {v}");
            }
        }
    }
}
