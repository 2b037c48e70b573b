use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tabfp::datamodel::DataMatrix;
use tabfp::cluster::{query_top_k, ward_d2, Catalog, Merge};
use tabfp::embed::{encode, ProviderConfig};
use tabfp::serialize::Fingerprint;
use tabfp::similarity::{CcaConfig, DistanceMatrix};
use tabfp::Error;

/// Textbook agglomeration: full scan for the closest active pair each step.
fn naive_ward(d: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let n = d.len();
    let mut sq: Vec<Vec<f64>> = d.iter().map(|r| r.iter().map(|v| v * v).collect()).collect();
    let mut clusters: Vec<Option<(usize, usize)>> = (0..n).map(|i| Some((i, 1))).collect();
    let mut out = Vec::new();
    for step in 0..n - 1 {
        let mut best: Option<(usize, usize)> = None;
        for i in 0..n {
            for j in i + 1..n {
                if clusters[i].is_some() && clusters[j].is_some() && best.is_none_or(|(a, b)| sq[i][j] < sq[a][b]) {
                    best = Some((i, j));
                }
            }
        }
        let (i, j) = best.unwrap();
        let ((id_i, ni), (id_j, nj)) = (clusters[i].unwrap(), clusters[j].unwrap());
        let dij = sq[i][j];
        for k in 0..n {
            if let Some((_, nk)) = clusters[k] {
                if k != i && k != j {
                    let (ni, nj, nk) = (ni as f64, nj as f64, nk as f64);
                    let v = ((ni + nk) * sq[i][k] + (nj + nk) * sq[j][k] - nk * dij) / (ni + nj + nk);
                    sq[i][k] = v;
                    sq[k][i] = v;
                }
            }
        }
        out.push((id_i, id_j, dij.max(0.0).sqrt()));
        clusters[i] = Some((n + step, ni + nj));
        clusters[j] = None;
    }
    out
}

fn random_distances(n: usize, rng: &mut ChaCha8Rng, quantize: bool) -> DistanceMatrix {
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let mut v: f64 = rng.random_range(0.01..1.0);
            if quantize {
                v = (v * 5.0).ceil() / 5.0;
            }
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    DistanceMatrix {
        labels: (0..n).map(|i| format!("x{i}")).collect(),
        d,
    }
}

#[test]
fn ward_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..50 {
        let n = 2 + case % 11;
        let dm = random_distances(n, &mut rng, case % 3 == 0);
        let t = ward_d2(&dm).unwrap();
        let got: Vec<(usize, usize, f64)> = t.merges.iter().map(|m: &Merge| (m.left, m.right, m.height)).collect();
        assert_eq!(got, naive_ward(&dm.d), "case {case}");
        assert!(t.merges.windows(2).all(|w| w[0].height <= w[1].height));
        assert_eq!(t.merges.last().unwrap().size, n);
    }
}

proptest! {
    #[test]
    fn ward_heights_are_monotone(seed in any::<u64>(), n in 2usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = ward_d2(&random_distances(n, &mut rng, false)).unwrap();
        prop_assert_eq!(t.merges.len(), n - 1);
        prop_assert!(t.merges.windows(2).all(|w| w[0].height <= w[1].height + 1e-12));
        let newick = t.to_newick();
        prop_assert_eq!(newick.matches('(').count(), n - 1);
    }
}

fn fingerprint_of(id: &str, seed: u64, p: usize) -> Fingerprint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..60)
        .map(|_| (0..p).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let m = DataMatrix::from_rows((0..p).map(|j| format!("c{j}")).collect(), &rows).unwrap();
    tabfp::serialize::fingerprint(id, &m, &Default::default()).unwrap()
}

#[test]
fn catalog_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ProviderConfig::default();
    let mut cat = Catalog::open_or_create(dir.path()).unwrap();
    for (i, id) in ["alpha", "beta", "gamma"].iter().enumerate() {
        let fp = fingerprint_of(id, i as u64, 2);
        let e = encode(&fp, &cfg).unwrap();
        cat.add(&fp, &e).unwrap();
    }
    let loaded = Catalog::load(dir.path()).unwrap();
    assert_eq!(loaded.manifest, cat.manifest);
    assert_eq!(loaded.embedding("beta").unwrap(), encode(&fingerprint_of("beta", 1, 2), &cfg).unwrap());
    let dm = loaded.distance_matrix(&CcaConfig::default()).unwrap();
    assert_eq!(dm.labels, vec!["alpha", "beta", "gamma"]);

    let small = ProviderConfig { d_e: 64, ..cfg.clone() };
    let fp = fingerprint_of("delta", 9, 2);
    let e = encode(&fp, &small).unwrap();
    assert!(matches!(cat.add(&fp, &e), Err(Error::ProviderMismatch { .. } | Error::DimMismatch { .. })));

    let path = dir.path().join("gamma.emb.bin");
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(Catalog::load(dir.path()), Err(Error::CorruptEntry { id, .. }) if id == "gamma"));
}

#[test]
fn retrieval_properties() {
    let cfg = ProviderConfig::default();
    let cca = CcaConfig::default();
    let mut catalog: Vec<_> = (0..5)
        .map(|i| encode(&fingerprint_of(&format!("d{i}"), 100 + i, 2 + (i as usize % 2)), &cfg).unwrap())
        .collect();
    let mut copy = catalog[2].clone();
    copy.dataset_id = "copy_of_d2".into();
    catalog.push(copy);

    let r = query_top_k(&catalog[2], &catalog, 10, &cca).unwrap();
    assert_eq!(r.neighbors.len(), 5);
    assert_eq!(r.neighbors[0].dataset_id, "copy_of_d2");
    assert!(r.neighbors[0].distance < 1e-8);
    assert!(r.neighbors.iter().all(|n| n.dataset_id != "d2"));
    assert!(r.neighbors.windows(2).all(|w| w[0].distance <= w[1].distance));

    let mut shuffled = catalog.clone();
    shuffled.reverse();
    assert_eq!(query_top_k(&catalog[2], &shuffled, 10, &cca).unwrap(), r);

    let mut other = catalog[0].clone();
    other.provider_tag = "http:x".into();
    assert!(matches!(query_top_k(&other, &catalog, 3, &cca), Err(Error::ProviderMismatch { .. })));
}
