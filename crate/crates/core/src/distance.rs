//! Pairwise dissimilarities between treatment rows.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::csv_write_err;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    BrayCurtis,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::BrayCurtis => "bray_curtis",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "euclidean" => Some(Metric::Euclidean),
            "bray_curtis" | "bray-curtis" | "braycurtis" => Some(Metric::BrayCurtis),
            _ => None,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Metric::Euclidean => 0,
            Metric::BrayCurtis => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Metric::Euclidean),
            1 => Some(Metric::BrayCurtis),
            _ => None,
        }
    }
}

/// Symmetric, zero-diagonal, nonnegative dissimilarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix<T> {
    pub metric: Metric,
    pub labels: Vec<String>,
    data: Array2<T>,
}

impl<T: Scalar> DistanceMatrix<T> {
    /// Wraps a square matrix after checking the distance-matrix invariants.
    pub fn from_matrix(metric: Metric, labels: Vec<String>, data: Array2<T>) -> Result<Self> {
        let n = data.nrows();
        if data.ncols() != n {
            return Err(Error::InvalidInput("distance matrix must be square".into()));
        }
        if labels.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} labels for a {n}x{n} distance matrix",
                labels.len()
            )));
        }
        for i in 0..n {
            if data[(i, i)] != T::zero() {
                return Err(Error::InvalidInput(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let x = data[(i, j)];
                if !x.is_finite() || x < T::zero() {
                    return Err(Error::InvalidInput(format!(
                        "entry ({i},{j}) = {x} is not a finite nonnegative distance"
                    )));
                }
                if x != data[(j, i)] {
                    return Err(Error::InvalidInput(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self {
            metric,
            labels,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[(i, j)]
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.data
    }

    /// Sub-matrix over `idx`, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let data = Array2::from_shape_fn((idx.len(), idx.len()), |(a, b)| self.data[(idx[a], idx[b])]);
        Self {
            metric: self.metric,
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
            data,
        }
    }

    /// Multiplies every distance by `c > 0`.
    pub fn scaled(&self, c: T) -> Self {
        Self {
            metric: self.metric,
            labels: self.labels.clone(),
            data: self.data.mapv(|x| x * c),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        wtr.write_record(&header).map_err(csv_write_err)?;
        for (i, label) in self.labels.iter().enumerate() {
            let mut rec = vec![label.clone()];
            rec.extend(self.data.row(i).iter().map(|x| x.to_string()));
            wtr.write_record(&rec).map_err(csv_write_err)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))
    }

    /// Writes the binary cache: `FSDM`, format version, metric tag, item
    /// count, length-prefixed labels, then the strict upper triangle as
    /// little-endian `f64`, row by row.
    pub fn write_cache<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<distance cache>", e);
        w.write_all(CACHE_MAGIC).map_err(io)?;
        w.write_all(&CACHE_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&[self.metric.tag()]).map_err(io)?;
        w.write_all(&(self.len() as u64).to_le_bytes()).map_err(io)?;
        for label in &self.labels {
            let bytes = label.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(bytes).map_err(io)?;
        }
        let n = self.len();
        for i in 0..n {
            for j in (i + 1)..n {
                w.write_all(&self.data[(i, j)].f64().to_le_bytes()).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn read_cache<R: Read>(mut r: R) -> Result<Self> {
        let io = |e| Error::io("<distance cache>", e);
        let bad = |m: &str| Error::InvalidInput(format!("distance cache: {m}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != CACHE_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2).map_err(io)?;
        let version = u16::from_le_bytes(b2);
        if version != CACHE_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut b1 = [0u8; 1];
        r.read_exact(&mut b1).map_err(io)?;
        let metric = Metric::from_tag(b1[0]).ok_or_else(|| bad("unknown metric tag"))?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(io)?;
        let n = u64::from_le_bytes(b8) as usize;
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b4 = [0u8; 4];
            r.read_exact(&mut b4).map_err(io)?;
            let mut buf = vec![0u8; u32::from_le_bytes(b4) as usize];
            r.read_exact(&mut buf).map_err(io)?;
            labels.push(String::from_utf8(buf).map_err(|_| bad("label is not UTF-8"))?);
        }
        let mut data = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                r.read_exact(&mut b8).map_err(io)?;
                let x = T::of(f64::from_le_bytes(b8));
                data[(i, j)] = x;
                data[(j, i)] = x;
            }
        }
        Self::from_matrix(metric, labels, data)
    }
}

const CACHE_MAGIC: &[u8; 4] = b"FSDM";
const CACHE_VERSION: u16 = 1;

fn default_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

fn pairwise<T, F>(rows: &Array2<T>, labels: Option<Vec<String>>, metric: Metric, f: F) -> Result<DistanceMatrix<T>>
where
    T: Scalar,
    F: Fn(ArrayView1<T>, ArrayView1<T>) -> T + Sync,
{
    let n = rows.nrows();
    let labels = labels.unwrap_or_else(|| default_labels(n));
    if labels.len() != n {
        return Err(Error::InvalidInput(format!("{} labels for {n} rows", labels.len())));
    }
    let upper: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| ((i + 1)..n).map(|j| f(rows.row(i), rows.row(j))).collect())
        .collect();
    let mut data = Array2::zeros((n, n));
    for (i, row) in upper.into_iter().enumerate() {
        for (off, x) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            data[(i, j)] = x;
            data[(j, i)] = x;
        }
    }
    Ok(DistanceMatrix {
        metric,
        labels,
        data,
    })
}

/// Euclidean distance between every pair of rows.
pub fn euclidean<T: Scalar>(rows: &Array2<T>, labels: Option<Vec<String>>) -> Result<DistanceMatrix<T>> {
    if rows.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("euclidean: non-finite input".into()));
    }
    pairwise(rows, labels, Metric::Euclidean, |a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>()
            .sqrt()
    })
}

/// Bray-Curtis dissimilarity between every pair of rows. Two all-zero rows
/// are at distance 0.
pub fn bray_curtis<T: Scalar>(rows: &Array2<T>, labels: Option<Vec<String>>) -> Result<DistanceMatrix<T>> {
    if rows.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("bray_curtis: non-finite input".into()));
    }
    if rows.iter().any(|&x| x < T::zero()) {
        return Err(Error::InvalidInput("bray_curtis: negative input".into()));
    }
    pairwise(rows, labels, Metric::BrayCurtis, |a, b| {
        let (num, den) = a.iter().zip(b.iter()).fold((T::zero(), T::zero()), |(n, d), (&x, &y)| {
            (n + (x - y).abs(), d + x + y)
        });
        if den == T::zero() {
            T::zero()
        } else {
            num / den
        }
    })
}

pub fn compute<T: Scalar>(metric: Metric, rows: &Array2<T>, labels: Option<Vec<String>>) -> Result<DistanceMatrix<T>> {
    match metric {
        Metric::Euclidean => euclidean(rows, labels),
        Metric::BrayCurtis => bray_curtis(rows, labels),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    // Independent double-loop references.
    fn naive_euclidean(x: &Array2<f64>) -> Array2<f64> {
        let n = x.nrows();
        let mut d = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..x.ncols() {
                    s += (x[(i, k)] - x[(j, k)]).powi(2);
                }
                d[(i, j)] = s.sqrt();
            }
        }
        d
    }

    fn naive_bray_curtis(x: &Array2<f64>) -> Array2<f64> {
        let n = x.nrows();
        let mut d = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let mut num = 0.0;
                let mut den = 0.0;
                for k in 0..x.ncols() {
                    num += (x[(i, k)] - x[(j, k)]).abs();
                    den += x[(i, k)] + x[(j, k)];
                }
                d[(i, j)] = if den == 0.0 { 0.0 } else { num / den };
            }
        }
        d
    }

    #[test]
    fn euclidean_examples() {
        let d: DistanceMatrix<f64> = euclidean(&array![[0.0, 3.0], [4.0, 0.0], [0.0, 3.0]], None).unwrap();
        assert_eq!(d.get(0, 1), 5.0);
        assert_eq!(d.get(0, 2), 0.0);
    }

    #[test]
    fn euclidean_rejects_nan() {
        assert!(euclidean::<f64>(&array![[0.0, f64::NAN]], None).is_err());
    }

    #[test]
    fn bray_curtis_examples() {
        let d: DistanceMatrix<f64> = bray_curtis(
            &array![[1.0, 2.0, 3.0], [3.0, 2.0, 1.0], [1.0, 2.0, 3.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
            None,
        )
        .unwrap();
        assert!((d.get(0, 1) - 4.0 / 12.0).abs() < 1e-15);
        assert_eq!(d.get(0, 2), 0.0);
        assert_eq!(d.get(3, 4), 0.0);
        assert_eq!(d.get(0, 3), 1.0);
        let disjoint: DistanceMatrix<f64> = bray_curtis(&array![[5.0, 0.0], [0.0, 7.0]], None).unwrap();
        assert_eq!(disjoint.get(0, 1), 1.0);
    }

    #[test]
    fn bray_curtis_rejects_negative() {
        assert!(bray_curtis::<f64>(&array![[1.0, -1.0], [0.0, 1.0]], None).is_err());
    }

    #[test]
    fn random_6x4_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let x = Array2::from_shape_fn((6, 4), |_| rng.random_range(0.0..10.0));
        let d = euclidean(&x, None).unwrap();
        let oracle = naive_euclidean(&x);
        for i in 0..6 {
            for j in 0..6 {
                assert!((d.get(i, j) - oracle[(i, j)]).abs() <= 1e-12 * oracle[(i, j)].max(1.0));
            }
        }
    }

    #[test]
    fn cache_round_trip() {
        let x = array![[1.0, 2.0], [3.5, 0.25], [0.0, 9.0]];
        let d: DistanceMatrix<f64> = bray_curtis(&x, Some(vec!["a".into(), "b b".into(), "ç".into()])).unwrap();
        let mut buf = Vec::new();
        d.write_cache(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"FSDM");
        let back = DistanceMatrix::<f64>::read_cache(buf.as_slice()).unwrap();
        assert_eq!(back, d);
        buf[4] = 9;
        assert!(DistanceMatrix::<f64>::read_cache(buf.as_slice()).is_err());
    }

    #[test]
    fn csv_is_square_and_labeled() {
        let d: DistanceMatrix<f64> = euclidean(&array![[0.0], [2.0]], Some(vec!["x".into(), "y".into()])).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), ",x,y\nx,0,2\ny,2,0\n");
    }

    fn matrix_strategy() -> impl Strategy<Value = Array2<f64>> {
        (2usize..9, 1usize..7).prop_flat_map(|(n, m)| {
            proptest::collection::vec(0.0f64..100.0, n * m)
                .prop_map(move |v| Array2::from_shape_vec((n, m), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn invariants_and_naive_agreement(x in matrix_strategy(), c in 0.01f64..50.0) {
            let e = euclidean(&x, None).unwrap();
            let b = bray_curtis(&x, None).unwrap();
            let (ne, nb) = (naive_euclidean(&x), naive_bray_curtis(&x));
            let n = x.nrows();
            for i in 0..n {
                prop_assert_eq!(e.get(i, i), 0.0);
                prop_assert_eq!(b.get(i, i), 0.0);
                for j in 0..n {
                    prop_assert_eq!(e.get(i, j), e.get(j, i));
                    prop_assert_eq!(b.get(i, j), b.get(j, i));
                    prop_assert!(e.get(i, j) >= 0.0);
                    prop_assert!((0.0..=1.0).contains(&b.get(i, j)));
                    prop_assert!((e.get(i, j) - ne[(i, j)]).abs() <= 1e-12 * ne[(i, j)].max(1e-300));
                    prop_assert!((b.get(i, j) - nb[(i, j)]).abs() <= 1e-12 * nb[(i, j)].max(1e-300));
                    for k in 0..n {
                        prop_assert!(e.get(i, k) <= e.get(i, j) + e.get(j, k) + 1e-9);
                    }
                }
            }
            // Differences of nearly equal coordinates cancel, so the bound is
            // relative to the coordinate magnitude, not the distance.
            let scaled = euclidean(&x.mapv(|v| v * c), None).unwrap();
            let mag = x.iter().fold(0.0f64, |a, v| a.max(v.abs())) * x.ncols() as f64;
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((scaled.get(i, j) - c * e.get(i, j)).abs() <= 1e-13 * c * mag.max(1e-300));
                }
            }
        }
    }
}
