use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tabfp::embed::EmbeddingMatrix;
use tabfp::similarity::{
    canonical_correlations, cca_similarity, distance_matrix, preprocess, sparse_cca, CcaConfig, SparseCcaConfig, View,
};

fn random(d: usize, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(d, m, |_, _| StandardNormal.sample(rng))
}

fn emb(id: &str, m: DMatrix<f64>) -> EmbeddingMatrix {
    EmbeddingMatrix {
        dataset_id: id.into(),
        provider_tag: "test".into(),
        columns: m,
    }
}

/// Canonical correlations from `C_ab C_bb^-1 C_ba u = rho^2 C_aa u`, reduced to
/// a symmetric eigenproblem with the Cholesky factor of `C_aa`.
fn gep_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let (x, y) = (preprocess(a), preprocess(b));
    let caa = x.transpose() * &x;
    let cbb = y.transpose() * &y;
    let cab = x.transpose() * &y;
    let la = caa.cholesky().expect("full rank").l();
    let la_inv = la.clone().try_inverse().unwrap();
    let cbb_inv = cbb.try_inverse().unwrap();
    let lhs = &cab * cbb_inv * cab.transpose();
    let sym = &la_inv * lhs * la_inv.transpose();
    let sym = (&sym + sym.transpose()) * 0.5;
    let mut rho: Vec<f64> = sym.symmetric_eigenvalues().iter().map(|l| l.max(0.0).sqrt().min(1.0)).collect();
    rho.sort_by(|p, q| q.total_cmp(p));
    rho.truncate(a.ncols().min(b.ncols()));
    rho
}

/// Orthogonal `d x d` matrix that maps the ones vector to itself.
fn rotation_fixing_ones(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let r = random(d - 1, d - 1, rng).qr().q();
    let mut block = DMatrix::identity(d, d);
    block.view_mut((1, 1), (d - 1, d - 1)).copy_from(&r);
    let mut w = DMatrix::from_element(d, 1, -1.0 / (d as f64).sqrt());
    w[(0, 0)] += 1.0;
    let w = &w / w.norm();
    let h = DMatrix::identity(d, d) - 2.0 * &w * w.transpose();
    &h * block * &h
}

#[test]
fn correlations_match_generalized_eigen_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for pair in 0..20 {
        let ma = 2 + pair % 7;
        let mb = 2 + (pair * 3) % 7;
        let a = random(50, ma, &mut rng);
        let mut b = random(50, mb, &mut rng);
        if pair % 2 == 0 {
            let mix = random(ma, mb, &mut rng);
            b = &a * mix + 0.3 * b;
        }
        let mut ours = canonical_correlations(&View::from_matrix(&a).unwrap(), &View::from_matrix(&b).unwrap(), 1e-6).unwrap();
        ours.sort_by(|p, q| q.total_cmp(p));
        let oracle = gep_oracle(&a, &b);
        assert_eq!(ours.len(), oracle.len());
        for (o, e) in ours.iter().zip(&oracle) {
            assert!((o - e).abs() < 1e-6, "pair {pair}: {o} vs {e}");
        }
    }
}

#[test]
fn dense_sparse_component_matches_leading_singular_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(60, 6, &mut rng);
    let b = &a * random(6, 5, &mut rng) + random(60, 5, &mut rng);
    let comps = sparse_cca(&emb("a", a.clone()), &emb("b", b.clone()), 1.0, 1.0, 1, &SparseCcaConfig::default()).unwrap();
    let (x, y) = (preprocess(&a), preprocess(&b));
    let dec = (x.transpose() * &y).svd(true, true);
    let k = dec.singular_values.imax();
    let u = dec.u.unwrap().column(k).into_owned();
    let v = dec.v_t.unwrap().row(k).transpose();
    let (xa, yb) = (&x * u, &y * v);
    let expected = (xa.dot(&yb) / (xa.norm() * yb.norm())).abs();
    assert!((comps[0].rho - expected).abs() < 1e-4, "{} vs {expected}", comps[0].rho);
}

#[test]
fn distance_matrix_agrees_with_pairwise_calls() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cat: Vec<EmbeddingMatrix> = (0..4).map(|i| emb(&format!("d{i}"), random(40, 4 + i, &mut rng))).collect();
    let cfg = CcaConfig::default();
    let dm = distance_matrix(&cat, &cfg).unwrap();
    for i in 0..4 {
        assert_eq!(dm.d[i][i], 0.0);
        for j in 0..4 {
            assert_eq!(dm.d[i][j], dm.d[j][i]);
            if i < j {
                assert_eq!(dm.d[i][j], cca_similarity(&cat[i], &cat[j], &cfg).unwrap().distance);
            }
        }
    }
    let mut mixed = cat.clone();
    mixed[2].provider_tag = "other".into();
    assert!(distance_matrix(&mixed, &cfg).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cca_invariants(seed in any::<u64>(), ma in 2usize..8, mb in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 30;
        let a = random(d, ma, &mut rng);
        let b = random(d, mb, &mut rng);
        let cfg = CcaConfig::default();
        let ab = cca_similarity(&emb("a", a.clone()), &emb("b", b.clone()), &cfg).unwrap();
        let ba = cca_similarity(&emb("b", b.clone()), &emb("a", a.clone()), &cfg).unwrap();
        prop_assert!((ab.similarity - ba.similarity).abs() <= 1e-10);
        prop_assert!((0.0..=1.0).contains(&ab.distance));
        prop_assert!(ab.correlations.windows(2).all(|w| w[0] >= w[1]));

        let aa = cca_similarity(&emb("a", a.clone()), &emb("a", a.clone()), &cfg).unwrap();
        prop_assert!(aa.similarity >= 1.0 - 1e-8);

        let mut perm: Vec<usize> = (0..ma).collect();
        perm.reverse();
        let ap = a.select_columns(perm.iter());
        let pb = cca_similarity(&emb("a", ap), &emb("b", b.clone()), &cfg).unwrap();
        prop_assert!((pb.similarity - ab.similarity).abs() <= 1e-8);

        let q = rotation_fixing_ones(d, &mut rng);
        let rot = cca_similarity(&emb("a", &q * &a), &emb("b", &q * &b), &cfg).unwrap();
        prop_assert!((rot.similarity - ab.similarity).abs() <= 1e-8);
    }

    #[test]
    fn sparse_constraints_hold(seed in any::<u64>(), c in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(40, 6, &mut rng);
        let b = random(40, 5, &mut rng);
        let comps = sparse_cca(&emb("a", a.clone()), &emb("b", b.clone()), c, c, 3, &SparseCcaConfig::default()).unwrap();
        let (mut x, mut y) = (preprocess(&a), preprocess(&b));
        for comp in &comps {
            let u = nalgebra::DVector::from_vec(comp.u.clone());
            let v = nalgebra::DVector::from_vec(comp.v.clone());
            prop_assert!((u.norm() - 1.0).abs() < 1e-9);
            prop_assert!(u.lp_norm(1) <= comp.penalty_u * 6f64.sqrt() + 1e-8);
            prop_assert!(v.lp_norm(1) <= comp.penalty_v * 5f64.sqrt() + 1e-8);
            let before = (x.transpose() * &y).norm();
            let xu = &x * &u;
            x -= &xu * u.transpose();
            let yv = &y * &v;
            y -= &yv * v.transpose();
            prop_assert!((x.transpose() * &y).norm() < before);
        }
        let min = sparse_cca(&emb("a", a), &emb("b", b), 0.0, 0.0, 1, &SparseCcaConfig::default()).unwrap();
        prop_assert_eq!(min[0].u.iter().filter(|w| **w != 0.0).count(), 1);
        prop_assert_eq!(min[0].v.iter().filter(|w| **w != 0.0).count(), 1);
    }
}
