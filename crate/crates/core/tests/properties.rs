use fairwash::attack::{analytic_fairwash, normal_components, solve_lambda, FlatManifoldSpec};
use fairwash::evalmetrics::{flip_curve_with_order, inpaint, kl, mse, pcc, ssim, FlipConfig};
use fairwash::explain::Method;
use fairwash::manifold::Projector;
use fairwash::models::{softmax_probs, Activation, Classifier, LogRegModel, MlpModel};
use fairwash::tensor::{dot, norm};
use fairwash::Tensor;
use proptest::prelude::*;

fn vec_of(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, n)
}

/// Ambient dimension, rank and spanning vectors of a projector.
fn basis() -> impl Strategy<Value = (usize, Vec<Vec<f64>>)> {
    (2usize..12).prop_flat_map(|dim| {
        (1..=dim).prop_flat_map(move |rank| (Just(dim), prop::collection::vec(vec_of(dim), rank)))
    })
}

fn image() -> impl Strategy<Value = Vec<f64>> {
    vec_of(14 * 14)
}

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, n).prop_filter_map("all zero", |v| {
        let s: f64 = v.iter().sum();
        (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
    })
}

/// One unit normal, its offset and points projected onto the hyperplane.
fn hyperplane_data(dim: usize) -> impl Strategy<Value = (FlatManifoldSpec, Vec<Vec<f64>>)> {
    (vec_of(dim), -2.0..2.0f64, prop::collection::vec(vec_of(dim), 1..20)).prop_filter_map(
        "degenerate normal",
        |(n, b, points)| {
            let l = norm(&n);
            if l < 1e-3 {
                return None;
            }
            let n: Vec<f64> = n.iter().map(|v| v / l).collect();
            let on: Vec<Vec<f64>> = points
                .iter()
                .map(|x| {
                    let r = dot(&n, x) - b;
                    x.iter().zip(&n).map(|(xi, ni)| xi - r * ni).collect()
                })
                .collect();
            Some((FlatManifoldSpec::new(vec![n], vec![b]).unwrap(), on))
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projector_algebra_holds((dim, vectors) in basis()) {
        let rank = vectors.len();
        let p = match Projector::from_basis(vectors, dim) {
            Ok(p) => p,
            // Nearly dependent draws are rejected by construction.
            Err(_) => return Ok(()),
        };
        prop_assert_eq!(p.rank(), rank);
        let d = p.defects();
        prop_assert!(d.within_tolerance(), "{:?}", d);
    }

    #[test]
    fn projection_never_lengthens((dim, vectors) in basis(), seed in vec_of(12)) {
        let Ok(p) = Projector::from_basis(vectors, dim) else { return Ok(()) };
        let h = &seed[..dim];
        let ph = p.apply(h);
        prop_assert!(norm(&ph) <= norm(h) * (1.0 + 1e-12) + 1e-12);
        let pph = p.apply(&ph);
        for (a, b) in pph.iter().zip(&ph) {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + norm(h)));
        }
    }

    #[test]
    fn complement_is_orthogonal_to_normals((dim, vectors) in basis(), seed in vec_of(12)) {
        if vectors.len() == dim {
            return Ok(());
        }
        let Ok(p) = Projector::complement_of(&vectors, dim) else { return Ok(()) };
        prop_assert_eq!(p.rank(), dim - vectors.len());
        let ph = p.apply(&seed[..dim]);
        for n in &vectors {
            prop_assert!(dot(n, &ph).abs() <= 1e-9 * norm(n) * (1.0 + norm(&seed)));
        }
    }

    #[test]
    fn ssim_of_identical_images_is_one(a in image()) {
        prop_assert!((ssim(&a, &a, 14, 14).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(a in image(), b in image()) {
        let ab = ssim(&a, &b, 14, 14).unwrap();
        let ba = ssim(&b, &a, 14, 14).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12 && ab >= -1.0 - 1e-12);
    }

    #[test]
    fn pcc_and_mse_are_symmetric(a in vec_of(30), b in vec_of(30)) {
        let (pab, pba) = (pcc(&a, &b).unwrap(), pcc(&b, &a).unwrap());
        prop_assert!((pab - pba).abs() <= 1e-12);
        prop_assert!(pab.abs() <= 1.0 + 1e-12);
        prop_assert!((pcc(&a, &a).unwrap() - 1.0).abs() <= 1e-12);
        prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        prop_assert_eq!(mse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn kl_vanishes_on_equal_distributions(p in distribution(10), q in distribution(10)) {
        prop_assert!(kl(&p, &p).unwrap().abs() <= 1e-12);
        prop_assert!(kl(&p, &q).unwrap() >= -1e-12);
    }

    #[test]
    fn inpainting_keeps_known_pixels(a in vec_of(64), mask in prop::collection::vec(any::<bool>(), 64)) {
        let mut img = a.clone();
        inpaint(&mut img, &mask, 8, 8, &FlipConfig::default());
        let (lo, hi) = a.iter().fold((0.0f64, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
        for i in 0..64 {
            if mask[i] {
                // Harmonic values stay within the range of the boundary data.
                prop_assert!(img[i] >= lo - 1e-9 && img[i] <= hi + 1e-9);
            } else {
                prop_assert_eq!(img[i], a[i]);
            }
        }
    }

    #[test]
    fn flipping_curve_endpoints(x in vec_of(36), seed in 0u64..1000, perm_seed in 0u64..1000) {
        let model = MlpModel::init(&[36, 8, 3], Activation::Relu, seed).unwrap();
        let order = fairwash::RngState::new(perm_seed).permutation(36);
        let cfg = FlipConfig { steps: 6, ..FlipConfig::default() };
        let curve = flip_curve_with_order(&model, &x, (6, 6), &order, &cfg).unwrap();
        prop_assert_eq!(curve.fractions.len(), 7);
        prop_assert_eq!(curve.fractions[0], 0.0);
        prop_assert_eq!(*curve.fractions.last().unwrap(), 1.0);
        let p0 = softmax_probs(&model.predict(&Tensor::row_vector(x.clone()).unwrap()).unwrap());
        let class = fairwash::models::argmax(p0.row(0));
        prop_assert!((curve.confidence[0] - p0.get(0, class)).abs() <= 1e-12);
        // Everything removed: the zero fill has no known pixels to diffuse.
        let pz = softmax_probs(&model.predict(&Tensor::zeros(&[1, 36])).unwrap());
        prop_assert!((curve.confidence[6] - pz.get(0, class)).abs() <= 1e-12);
        prop_assert!(curve.auc >= 0.0 && curve.auc <= 1.0);
    }

    #[test]
    fn fairwashing_preserves_scores_on_the_manifold(
        (spec, points) in hyperplane_data(5),
        w in vec_of(5),
        c in -1.0..1.0f64,
        lambda in -1e3..1e3f64,
    ) {
        let g = LogRegModel::new(w, c).unwrap();
        let data = Tensor::from_rows(&points).unwrap();
        let gt = analytic_fairwash(&g, &spec, &[lambda], Some(&data)).unwrap();
        for x in &points {
            let scale = 1.0 + lambda.abs() * (1.0 + norm(x));
            prop_assert!((g.score(x) - gt.score(x)).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn solved_lambda_hits_the_target(
        (spec, points) in hyperplane_data(5),
        w in vec_of(5),
        t in -2.0..2.0f64,
    ) {
        let g = LogRegModel::new(w.clone(), 0.0).unwrap();
        let lambda = solve_lambda(Method::Gradient, &w, None, &spec, &[t]).unwrap();
        let gt = analytic_fairwash(&g, &spec, &lambda, None).unwrap();
        prop_assert!((normal_components(&spec, &gt.w)[0] - t).abs() <= 1e-9);

        let x = &points[0];
        let Ok(lambda) = solve_lambda(Method::Xgrad, &w, Some(x), &spec, &[t]) else { return Ok(()) };
        let denom: f64 = x.iter().zip(&spec.normals()[0]).map(|(a, n)| a * n * n).sum();
        prop_assume!(denom.abs() > 1e-3);
        let gt = analytic_fairwash(&g, &spec, &lambda, None).unwrap();
        let xw: Vec<f64> = x.iter().zip(&gt.w).map(|(a, b)| a * b).collect();
        prop_assert!((normal_components(&spec, &xw)[0] - t).abs() <= 1e-9 * (1.0 + lambda[0].abs()));
    }
}
