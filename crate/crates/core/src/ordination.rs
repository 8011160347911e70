//! Principal coordinates analysis, level centroids, and fitted variable
//! vectors for biplots.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};
use crate::factor::Factor;
use crate::inference::{permutation_p_values, PermutationPlan};
use crate::ingest::csv_write_err;
use crate::linalg::{dot, rank_tolerance, symmetric_eigen, symmetric_pinv};
use crate::permanova::{gower_center, GowerMatrix};
use crate::scalar::Scalar;

/// Eigen-axes of a Gower matrix with deterministic signs.
#[derive(Debug, Clone)]
pub(crate) struct PrincipalAxes<T> {
    pub values: Vec<T>,
    pub vectors: Vec<Vec<T>>,
    /// Eigenvalues with `|lambda| <= tol` are treated as zero.
    pub tol: T,
}

impl<T: Scalar> PrincipalAxes<T> {
    pub fn of(g: &GowerMatrix<T>) -> Result<Self> {
        let eig = symmetric_eigen(g.matrix())?;
        let n = g.len();
        let lmax = eig.values.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
        let tol = rank_tolerance(n, n, lmax);
        let vectors = eig
            .vectors
            .into_iter()
            .map(|mut v| {
                let lead = v
                    .iter()
                    .enumerate()
                    .fold((0usize, T::zero()), |best, (i, &x)| {
                        if x.abs() > best.1.abs() {
                            (i, x)
                        } else {
                            best
                        }
                    })
                    .1;
                if lead < T::zero() {
                    for x in &mut v {
                        *x = -*x;
                    }
                }
                v
            })
            .collect();
        Ok(Self {
            values: eig.values,
            vectors,
            tol,
        })
    }

    pub fn is_positive(&self, a: usize) -> bool {
        self.values[a] > self.tol
    }

    pub fn is_negative(&self, a: usize) -> bool {
        self.values[a] < -self.tol
    }

    /// `v_a * sqrt(|lambda_a|)` for nonzero axes, zeros otherwise.
    pub fn scores(&self, a: usize) -> Vec<T> {
        if self.is_positive(a) || self.is_negative(a) {
            let s = self.values[a].abs().sqrt();
            self.vectors[a].iter().map(|&x| x * s).collect()
        } else {
            vec![T::zero(); self.vectors[a].len()]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ordination<T> {
    pub labels: Vec<String>,
    /// All eigenvalues of the Gower matrix, descending.
    pub eigenvalues: Vec<T>,
    /// `n x k`; column `a` squares-sums to `eigenvalues[a]` for positive axes.
    pub scores: Array2<T>,
    /// Share of the positive eigenvalue mass per retained axis.
    pub proportion_explained: Vec<T>,
    /// Retained axes whose eigenvalue is negative (their scores are zero).
    pub negative_axes: Vec<bool>,
}

impl<T: Scalar> Ordination<T> {
    pub fn k(&self) -> usize {
        self.scores.ncols()
    }

    pub fn axis_labels(&self) -> Vec<String> {
        (1..=self.k()).map(|a| format!("PCoA{a}")).collect()
    }

    /// Eigenvalues within this distance of zero are roundoff.
    pub fn eigen_tolerance(&self) -> T {
        let lmax = self.eigenvalues.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
        rank_tolerance(self.eigenvalues.len(), self.eigenvalues.len(), lmax)
    }

    pub fn has_negative_eigenvalues(&self) -> bool {
        let tol = self.eigen_tolerance();
        self.eigenvalues.iter().any(|&l| l < -tol)
    }

    pub fn write_scores_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["item".to_string()];
        header.extend(self.axis_labels());
        wtr.write_record(&header).map_err(csv_write_err)?;
        for (i, label) in self.labels.iter().enumerate() {
            let mut rec = vec![label.clone()];
            rec.extend(self.scores.row(i).iter().map(|x| x.to_string()));
            wtr.write_record(&rec).map_err(csv_write_err)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn write_eigenvalues_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["axis", "eigenvalue", "proportion_explained", "negative"])
            .map_err(csv_write_err)?;
        let tol = self.eigen_tolerance();
        let pos: T = self.eigenvalues.iter().filter(|&&l| l > tol).copied().sum();
        for (a, &l) in self.eigenvalues.iter().enumerate() {
            let prop = if l > tol && pos > T::zero() { l / pos } else { T::zero() };
            wtr.write_record([
                format!("PCoA{}", a + 1),
                l.to_string(),
                prop.to_string(),
                (l < -tol).to_string(),
            ])
            .map_err(csv_write_err)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// Classical scaling of `d` onto its first `k` principal coordinates.
pub fn pcoa<T: Scalar>(d: &DistanceMatrix<T>, k: usize) -> Result<Ordination<T>> {
    let n = d.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidInput(format!(
            "pcoa needs 1 <= k < n, got k = {k}, n = {n}"
        )));
    }
    let axes = PrincipalAxes::of(&gower_center(d))?;
    let positive_mass: T = axes.values.iter().filter(|&&l| l > axes.tol).copied().sum();
    let mut scores = Array2::zeros((n, k));
    let mut proportion_explained = Vec::with_capacity(k);
    let mut negative_axes = Vec::with_capacity(k);
    for a in 0..k {
        let positive = axes.is_positive(a);
        if positive {
            for (i, s) in axes.scores(a).into_iter().enumerate() {
                scores[(i, a)] = s;
            }
        }
        proportion_explained.push(if positive && positive_mass > T::zero() {
            axes.values[a] / positive_mass
        } else {
            T::zero()
        });
        negative_axes.push(axes.is_negative(a));
    }
    Ok(Ordination {
        labels: d.labels.clone(),
        eigenvalues: axes.values,
        scores,
        proportion_explained,
        negative_axes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroid<T> {
    pub level: String,
    pub size: usize,
    pub coords: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroids<T> {
    pub factor: String,
    pub centroids: Vec<Centroid<T>>,
    /// Declared levels without members; omitted from `centroids`.
    pub empty_levels: Vec<String>,
}

impl<T: Scalar> Centroids<T> {
    pub fn write_csv<W: Write>(&self, w: W, axis_labels: &[String]) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["factor".to_string(), "level".to_string(), "n".to_string()];
        header.extend(axis_labels.iter().cloned());
        wtr.write_record(&header).map_err(csv_write_err)?;
        for c in &self.centroids {
            let mut rec = vec![self.factor.clone(), c.level.clone(), c.size.to_string()];
            rec.extend(c.coords.iter().map(|x| x.to_string()));
            wtr.write_record(&rec).map_err(csv_write_err)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// Mean ordination scores per level of `factor`.
pub fn centroids<T: Scalar>(ord: &Ordination<T>, factor: &Factor) -> Result<Centroids<T>> {
    let n = ord.scores.nrows();
    if factor.len() != n {
        return Err(Error::InvalidInput(format!(
            "factor `{}` covers {} items, ordination has {n}",
            factor.name,
            factor.len()
        )));
    }
    let mut out = Vec::new();
    let mut empty = Vec::new();
    for (level, members) in factor.levels.iter().zip(factor.members()) {
        if members.is_empty() {
            empty.push(level.clone());
            continue;
        }
        let m = T::of_usize(members.len());
        let coords = (0..ord.k())
            .map(|a| members.iter().map(|&i| ord.scores[(i, a)]).sum::<T>() / m)
            .collect();
        out.push(Centroid {
            level: level.clone(),
            size: members.len(),
            coords,
        });
    }
    Ok(Centroids {
        factor: factor.name.clone(),
        centroids: out,
        empty_levels: empty,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedArrow<T> {
    pub variable: String,
    /// Unit vector in the fitted axes; `None` when the variable is constant.
    pub direction: Option<Vec<T>>,
    pub r2: T,
    pub p: Option<T>,
}

impl<T: Scalar> FittedArrow<T> {
    /// Plot coordinates: the direction scaled by `sqrt(r2)`.
    pub fn head(&self) -> Option<Vec<T>> {
        let len = self.r2.sqrt();
        self.direction.as_ref().map(|d| d.iter().map(|&x| x * len).collect())
    }
}

pub fn write_arrows_csv<T: Scalar, W: Write>(arrows: &[FittedArrow<T>], axis_labels: &[String], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["variable".to_string()];
    header.extend(axis_labels.iter().map(|a| format!("dir_{a}")));
    header.extend(["r2".to_string(), "p".to_string()]);
    wtr.write_record(&header).map_err(csv_write_err)?;
    for arrow in arrows {
        let mut rec = vec![arrow.variable.clone()];
        match &arrow.direction {
            Some(d) => rec.extend(d.iter().map(|x| x.to_string())),
            None => rec.extend(axis_labels.iter().map(|_| String::new())),
        }
        rec.push(arrow.r2.to_string());
        rec.push(arrow.p.map(|p| p.to_string()).unwrap_or_default());
        wtr.write_record(&rec).map_err(csv_write_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))
}

/// Least-squares fit of each variable column onto the ordination `axes`
/// (0-based), with permutation p-values for `r2` under row shuffling.
pub fn envfit<T: Scalar>(
    ord: &Ordination<T>,
    variables: &Array2<T>,
    names: &[String],
    axes: &[usize],
    plan: &PermutationPlan,
) -> Result<Vec<FittedArrow<T>>> {
    let n = ord.scores.nrows();
    if variables.nrows() != n {
        return Err(Error::InvalidInput(format!(
            "variables have {} rows, ordination has {n}",
            variables.nrows()
        )));
    }
    if names.len() != variables.ncols() {
        return Err(Error::InvalidInput("one name per variable column required".into()));
    }
    if axes.is_empty() || axes.iter().any(|&a| a >= ord.k()) {
        return Err(Error::InvalidInput(format!(
            "envfit axes {axes:?} outside the {} retained axes",
            ord.k()
        )));
    }
    let nf = T::of_usize(n);
    let basis: Vec<Vec<T>> = axes
        .iter()
        .map(|&a| {
            let col = ord.scores.column(a);
            let mean = col.sum() / nf;
            col.iter().map(|&x| x - mean).collect()
        })
        .collect();
    let m = basis.len();
    let gram = Array2::from_shape_fn((m, m), |(i, j)| dot(&basis[i], &basis[j]));
    let gram_inv = symmetric_pinv(&gram)?;

    let fit = |v: &[T]| -> (Vec<T>, T) {
        let sv: Vec<T> = basis.iter().map(|b| dot(b, v)).collect();
        let coef: Vec<T> = (0..m)
            .map(|i| (0..m).map(|j| gram_inv[(i, j)] * sv[j]).sum())
            .collect();
        let explained: T = coef.iter().zip(&sv).map(|(&c, &s)| c * s).sum();
        let total = dot(v, v);
        (coef, if total > T::zero() { explained / total } else { T::zero() })
    };

    let mut out = Vec::with_capacity(names.len());
    for (c, name) in names.iter().enumerate() {
        let col = variables.column(c);
        let mean = col.sum() / nf;
        let v: Vec<T> = col.iter().map(|&x| x - mean).collect();
        let spread = v.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()));
        if spread <= T::epsilon() * mean.abs().max(T::one()) {
            out.push(FittedArrow {
                variable: name.clone(),
                direction: None,
                r2: T::zero(),
                p: None,
            });
            continue;
        }
        let (coef, r2) = fit(&v);
        let norm = coef.iter().map(|&x| x * x).sum::<T>().sqrt();
        let direction = (norm > T::zero()).then(|| coef.iter().map(|&x| x / norm).collect());
        let p = permutation_p_values(plan, &[r2], |perm| {
            let shuffled: Vec<T> = perm.iter().map(|&i| v[i]).collect();
            vec![fit(&shuffled).1]
        })?[0];
        out.push(FittedArrow {
            variable: name.clone(),
            direction,
            r2: r2.min(T::one()).max(T::zero()),
            p: Some(p),
        });
    }
    Ok(out)
}
