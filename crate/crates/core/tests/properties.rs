use fuelseg::clustering::{ward_cluster, WardVariant};
use fuelseg::distance::euclidean;
use fuelseg::inference::PermutationPlan;
use fuelseg::npstats::{kruskal_wallis, mann_whitney_u};
use fuelseg::ordination::{centroids, envfit, pcoa};
use fuelseg::permanova::gower_center;
use fuelseg::Factor;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(seed: u64, n: usize, dim: usize) -> Array2<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, dim), |_| r.random_range(-1.0..1.0))
}

fn within_ss(x: &Array2<f64>, members: &[usize]) -> f64 {
    let dim = x.ncols();
    let mut s = 0.0;
    for c in 0..dim {
        let mean = members.iter().map(|&i| x[[i, c]]).sum::<f64>() / members.len() as f64;
        s += members.iter().map(|&i| (x[[i, c]] - mean).powi(2)).sum::<f64>();
    }
    s
}

#[test]
fn two_blobs_split_at_the_root() {
    let mut x = cloud(11, 10, 2);
    for i in 5..10 {
        x[[i, 0]] += 20.0;
    }
    let d = euclidean(&x, None).unwrap();
    let dend = ward_cluster(&d, WardVariant::D2).unwrap();
    let root = dend.merges.last().unwrap();
    let mut sides = [dend.leaves(root.left), dend.leaves(root.right)];
    sides.sort();
    assert_eq!(sides, [vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8, 9]]);

    // The blob split is also the best of every two-way partition.
    let blob = within_ss(&x, &sides[0]) + within_ss(&x, &sides[1]);
    for mask in 1u32..(1 << 9) {
        let a: Vec<usize> = (0..10).filter(|&i| i < 9 && mask >> i & 1 == 1).collect();
        let b: Vec<usize> = (0..10).filter(|i| !a.contains(i)).collect();
        assert!(within_ss(&x, &a) + within_ss(&x, &b) >= blob - 1e-9);
    }
}

#[test]
fn dendrogram_ignores_row_order() {
    let x = cloud(12, 9, 3);
    let labels: Vec<String> = (0..9).map(|i| format!("p{i}")).collect();
    let d = euclidean(&x, Some(labels.clone())).unwrap();
    let perm = [4usize, 7, 0, 8, 2, 5, 1, 6, 3];
    let xp = Array2::from_shape_fn((9, 3), |(i, c)| x[[perm[i], c]]);
    let lp: Vec<String> = perm.iter().map(|&i| labels[i].clone()).collect();
    let dp = euclidean(&xp, Some(lp)).unwrap();

    let a = ward_cluster(&d, WardVariant::D2).unwrap();
    let b = ward_cluster(&dp, WardVariant::D2).unwrap();
    let named = |t: &fuelseg::Dendrogram, node| -> Vec<String> {
        let mut v: Vec<String> = t.leaves(node).into_iter().map(|i| t.labels[i].clone()).collect();
        v.sort();
        v
    };
    for (ma, mb) in a.merges.iter().zip(&b.merges) {
        assert!((ma.height - mb.height).abs() < 1e-12);
        let mut sa = [named(&a, ma.left), named(&a, ma.right)];
        let mut sb = [named(&b, mb.left), named(&b, mb.right)];
        sa.sort();
        sb.sort();
        assert_eq!(sa, sb);
    }
    let order = |t: &fuelseg::Dendrogram| t.order.iter().map(|&i| t.labels[i].clone()).collect::<Vec<_>>();
    assert_eq!(order(&a), order(&b));
}

#[test]
fn kruskal_wallis_two_groups_is_squared_normal_score() {
    let mut r = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let (m, n) = (r.random_range(2..30), r.random_range(2..30));
        let v: Vec<f64> = (0..m + n).map(|_| r.random_range(0.0..1.0)).collect();
        let codes: Vec<usize> = (0..m + n).map(|i| usize::from(i >= m)).collect();
        let f = Factor::new("g", vec!["a".into(), "b".into()], codes).unwrap();
        let h = kruskal_wallis(&v, &f).unwrap().statistic;
        let z = mann_whitney_u(&v[..m], &v[m..]).unwrap().z.unwrap();
        assert!((h - z * z).abs() < 1e-9, "H={h} z^2={}", z * z);
    }
}

#[test]
fn ordination_invariants() {
    for seed in 0..20 {
        let x = cloud(100 + seed, 12, 4);
        let d = euclidean(&x, None).unwrap();
        let ord = pcoa(&d, 11).unwrap();
        let trace = gower_center(&d).trace();
        let sum: f64 = ord.eigenvalues.iter().sum();
        assert!((sum - trace).abs() <= 1e-8 * trace);
        for a in 0..ord.k() {
            let sq: f64 = ord.scores.column(a).iter().map(|v| v * v).sum();
            let lambda = ord.eigenvalues[a].max(0.0);
            assert!((sq - lambda).abs() <= 1e-8 * trace);
            for b in a + 1..ord.k() {
                let dot: f64 = ord.scores.column(a).iter().zip(ord.scores.column(b)).map(|(p, q)| p * q).sum();
                assert!(dot.abs() <= 1e-8 * trace);
            }
        }
        let explained: f64 = ord.proportion_explained.iter().sum();
        assert!(explained <= 1.0 + 1e-12);
    }
}

#[test]
fn centroids_match_direct_means_and_follow_sign_flips() {
    let x = cloud(21, 15, 3);
    let d = euclidean(&x, None).unwrap();
    let mut ord = pcoa(&d, 3).unwrap();
    let codes: Vec<usize> = (0..15).map(|i| i % 4).collect();
    let levels: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    let f = Factor::new("g", levels, codes.clone()).unwrap();
    let c = centroids(&ord, &f).unwrap();
    for (lvl, cen) in c.centroids.iter().enumerate() {
        let members: Vec<usize> = (0..15).filter(|&i| codes[i] == lvl).collect();
        for a in 0..3 {
            let mean = members.iter().map(|&i| ord.scores[[i, a]]).sum::<f64>() / members.len() as f64;
            assert!((cen.coords[a] - mean).abs() < 1e-12);
        }
    }
    ord.scores.column_mut(1).mapv_inplace(|v| -v);
    let flipped = centroids(&ord, &f).unwrap();
    for (p, q) in c.centroids.iter().zip(&flipped.centroids) {
        assert!((p.coords[1] + q.coords[1]).abs() < 1e-12);
        assert!((p.coords[0] - q.coords[0]).abs() < 1e-12);
    }
}

#[test]
fn envfit_noise_is_mostly_not_significant() {
    let x = cloud(31, 200, 3);
    let d = euclidean(&x, None).unwrap();
    let ord = pcoa(&d, 2).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(32);
    let reps = 40;
    let noise = Array2::from_shape_fn((200, reps), |_| r.random_range(-1.0..1.0));
    let names: Vec<String> = (0..reps).map(|i| format!("v{i}")).collect();
    let plan = PermutationPlan::new(200, 199, 5).unwrap();
    let arrows = envfit(&ord, &noise, &names, &[0, 1], &plan).unwrap();
    let significant = arrows.iter().filter(|a| a.p.unwrap() <= 0.05).count();
    assert!(significant <= reps / 5, "{significant} of {reps} noise variables significant");
    for a in &arrows {
        assert!(a.r2 < 0.1);
        let dir = a.direction.as_ref().unwrap();
        assert!((dir.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
