//! Permutational multivariate analysis of variance on a distance matrix.
//!
//! Sums of squares are partitioned sequentially: each term's SS is the
//! increase in `tr(H G)` when its indicator columns join the model, where `G`
//! is the Gower-centred matrix and `H` the hat matrix of the cumulative
//! design. The hat matrices are represented by orthonormal bases, so the
//! per-term SS is `sum(u' G u)` over the basis vectors the term contributes.
//!
//! Permutations relabel observations, which is the same as permuting the rows
//! of every basis vector against a fixed `G`.

mod dispersion;
mod pairwise;

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use dispersion::{dispersion, Dispersion, GroupDispersion};
pub use pairwise::{pairwise_permanova, PairwiseEntry, PairwiseTable};

use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};
use crate::factor::Factor;
use crate::inference::{permutation_p_values, PermutationPlan, Scheme};
use crate::ingest::csv_write_err;
use crate::linalg::{column_svd, project_out, rank_tolerance};
use crate::scalar::Scalar;

/// Double-centred inner-product matrix `(I - J/n)(-d²/2)(I - J/n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GowerMatrix<T> {
    data: Array2<T>,
}

impl<T: Scalar> GowerMatrix<T> {
    pub fn matrix(&self) -> &Array2<T> {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn trace(&self) -> T {
        self.data.diag().iter().copied().sum()
    }
}

pub fn gower_center<T: Scalar>(d: &DistanceMatrix<T>) -> GowerMatrix<T> {
    let n = d.len();
    if n == 0 {
        return GowerMatrix {
            data: Array2::zeros((0, 0)),
        };
    }
    let half = T::of(0.5);
    let a = d.matrix().mapv(|x| -half * x * x);
    let nf = T::of_usize(n);
    let row_means: Vec<T> = a.rows().into_iter().map(|r| r.sum() / nf).collect();
    let grand = row_means.iter().copied().sum::<T>() / nf;
    let data = Array2::from_shape_fn((n, n), |(i, j)| a[(i, j)] - row_means[i] - row_means[j] + grand);
    GowerMatrix { data }
}

/// Ordered additive terms over `n` observations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Design {
    pub n: usize,
    pub terms: Vec<Factor>,
}

impl Design {
    pub fn new(terms: Vec<Factor>) -> Result<Self> {
        let n = terms.first().map(Factor::len).unwrap_or(0);
        if terms.is_empty() {
            return Err(Error::InvalidInput("design has no terms".into()));
        }
        for t in &terms {
            if t.len() != n {
                return Err(Error::InvalidInput(format!(
                    "term `{}` covers {} observations, expected {n}",
                    t.name,
                    t.len()
                )));
            }
            if t.levels_present() < 2 {
                return Err(Error::InvalidInput(format!(
                    "term `{}` has fewer than 2 levels present",
                    t.name
                )));
            }
        }
        Ok(Self { n, terms })
    }

    pub fn term_names(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.name.clone()).collect()
    }
}

/// Orthonormal model basis, split by the term that introduced each vector.
/// The intercept is implicit: all vectors are orthogonal to the ones vector.
#[derive(Debug, Clone)]
pub(crate) struct ModelBasis<T> {
    pub terms: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> ModelBasis<T> {
    pub fn build(design: &Design) -> Result<Self> {
        let n = design.n;
        let mut basis: Vec<Vec<T>> = vec![vec![T::one() / T::of_usize(n).sqrt(); n]];
        let mut terms = Vec::with_capacity(design.terms.len());
        for (k, term) in design.terms.iter().enumerate() {
            let counts = term.level_counts();
            let mut block: Vec<Vec<T>> = Vec::new();
            for (level, &count) in counts.iter().enumerate() {
                if count == 0 {
                    continue;
                }
                let col: Vec<T> = term
                    .codes
                    .iter()
                    .map(|&c| if c == level { T::one() } else { T::zero() })
                    .collect();
                block.push(col);
            }
            let sigma_max = T::of_usize(counts.iter().copied().max().unwrap_or(0)).sqrt();
            let tol = rank_tolerance(n, basis.len() + block.len(), sigma_max);
            for col in &mut block {
                project_out(&basis, col);
            }
            let svd = column_svd(&block)?;
            let added: Vec<Vec<T>> = svd
                .singular_values
                .iter()
                .zip(svd.left)
                .filter(|(s, _)| **s > tol)
                .map(|(_, u)| u)
                .collect();
            if added.is_empty() {
                return Err(Error::SingularDesign {
                    term: term.name.clone(),
                    previous: design.terms[..k].iter().map(|t| t.name.clone()).collect(),
                });
            }
            // Re-orthogonalise against the running basis before accepting.
            let mut accepted = Vec::with_capacity(added.len());
            for mut u in added {
                project_out(&basis, &mut u);
                project_out(&accepted, &mut u);
                let norm = u.iter().map(|&x| x * x).sum::<T>().sqrt();
                for x in &mut u {
                    *x = *x / norm;
                }
                accepted.push(u);
            }
            basis.extend(accepted.iter().cloned());
            terms.push(accepted);
        }
        Ok(Self { terms })
    }

    pub fn dfs(&self) -> Vec<usize> {
        self.terms.iter().map(Vec::len).collect()
    }

    pub fn rank(&self) -> usize {
        1 + self.dfs().iter().sum::<usize>()
    }

    /// Per-term `sum(u' G u)` with observations relabelled by `perm`
    /// (`None` for the identity).
    pub fn term_ss(&self, g: &Array2<T>, perm: Option<&[usize]>) -> Vec<T> {
        let n = g.nrows();
        let total: usize = self.dfs().iter().sum();
        let mut w = Array2::<T>::zeros((n, total));
        let mut col = 0;
        for vecs in &self.terms {
            for u in vecs {
                match perm {
                    Some(p) => {
                        for (i, &x) in u.iter().enumerate() {
                            w[(p[i], col)] = x;
                        }
                    }
                    None => {
                        for (i, &x) in u.iter().enumerate() {
                            w[(i, col)] = x;
                        }
                    }
                }
                col += 1;
            }
        }
        let gw = g.dot(&w);
        let mut out = Vec::with_capacity(self.terms.len());
        let mut col = 0;
        for vecs in &self.terms {
            let mut ss = T::zero();
            for _ in vecs {
                ss = ss + w.column(col).dot(&gw.column(col));
                col += 1;
            }
            out.push(ss);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermRow<T> {
    pub term: String,
    pub df: usize,
    pub ss: T,
    pub f: T,
    pub r2: T,
    pub p: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermanovaTable<T> {
    pub terms: Vec<TermRow<T>>,
    pub residual_df: usize,
    pub residual_ss: T,
    pub residual_r2: T,
    pub total_df: usize,
    pub total_ss: T,
    pub n_perm: usize,
    pub seed: u64,
    pub scheme: Scheme,
}

impl<T: Scalar> PermanovaTable<T> {
    pub fn term(&self, name: &str) -> Option<&TermRow<T>> {
        self.terms.iter().find(|t| t.term == name)
    }

    /// CSV with columns `term,df,SS,F,R2,p,n_perm,seed`. Roundoff negatives
    /// in SS are clamped to zero here only.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["term", "df", "SS", "F", "R2", "p", "n_perm", "seed"])
            .map_err(csv_write_err)?;
        let clamp = |x: T| if x < T::zero() { T::zero() } else { x };
        let (np, seed) = (self.n_perm.to_string(), self.seed.to_string());
        for t in &self.terms {
            wtr.write_record([
                t.term.clone(),
                t.df.to_string(),
                clamp(t.ss).to_string(),
                t.f.to_string(),
                clamp(t.r2).to_string(),
                t.p.to_string(),
                np.clone(),
                seed.clone(),
            ])
            .map_err(csv_write_err)?;
        }
        wtr.write_record([
            "Residual".to_string(),
            self.residual_df.to_string(),
            clamp(self.residual_ss).to_string(),
            String::new(),
            clamp(self.residual_r2).to_string(),
            String::new(),
            np.clone(),
            seed.clone(),
        ])
        .map_err(csv_write_err)?;
        wtr.write_record([
            "Total".to_string(),
            self.total_df.to_string(),
            self.total_ss.to_string(),
            String::new(),
            "1".to_string(),
            String::new(),
            np,
            seed,
        ])
        .map_err(csv_write_err)?;
        wtr.flush().map_err(|e| Error::io("<csv>", e))
    }
}

fn pseudo_f<T: Scalar>(ss: &[T], dfs: &[usize], ss_total: T, df_res: usize) -> Vec<T> {
    let ss_res = ss_total - ss.iter().copied().sum::<T>();
    let denom = ss_res / T::of_usize(df_res);
    ss.iter()
        .zip(dfs)
        .map(|(&s, &df)| (s / T::of_usize(df)) / denom)
        .collect()
}

/// Sequential PERMANOVA of `design` on `d`.
pub fn permanova<T: Scalar>(d: &DistanceMatrix<T>, design: &Design, plan: &PermutationPlan) -> Result<PermanovaTable<T>> {
    let n = d.len();
    if design.n != n {
        return Err(Error::InvalidInput(format!(
            "design has {} observations, distance matrix has {n}",
            design.n
        )));
    }
    if plan.n != n {
        return Err(Error::InvalidInput(format!(
            "permutation plan is for {} items, expected {n}",
            plan.n
        )));
    }
    let g = gower_center(d);
    permanova_gower(&g, design, plan)
}

pub(crate) fn permanova_gower<T: Scalar>(g: &GowerMatrix<T>, design: &Design, plan: &PermutationPlan) -> Result<PermanovaTable<T>> {
    let n = g.len();
    let basis = ModelBasis::<T>::build(design)?;
    let dfs = basis.dfs();
    let rank = basis.rank();
    if rank >= n {
        return Err(Error::InvalidInput(format!(
            "no residual degrees of freedom: {n} observations, model rank {rank}"
        )));
    }
    let df_res = n - rank;
    let ss_total = g.trace();
    let ss = basis.term_ss(g.matrix(), None);
    let observed = pseudo_f(&ss, &dfs, ss_total, df_res);

    let gm = g.matrix();
    let p = permutation_p_values(plan, &observed, |perm| {
        let ss = basis.term_ss(gm, Some(perm));
        pseudo_f(&ss, &dfs, ss_total, df_res)
    })?;

    let ss_res = ss_total - ss.iter().copied().sum::<T>();
    let terms = design
        .terms
        .iter()
        .enumerate()
        .map(|(k, t)| TermRow {
            term: t.name.clone(),
            df: dfs[k],
            ss: ss[k],
            f: observed[k],
            r2: ss[k] / ss_total,
            p: p[k],
        })
        .collect();
    Ok(PermanovaTable {
        terms,
        residual_df: df_res,
        residual_ss: ss_res,
        residual_r2: ss_res / ss_total,
        total_df: n - 1,
        total_ss: ss_total,
        n_perm: plan.n_perm,
        seed: plan.seed,
        scheme: plan.scheme,
    })
}

/// Classical one-way ANOVA F of `values` grouped by `codes`.
pub(crate) fn anova_f<T: Scalar>(values: &[T], codes: &[usize], n_levels: usize) -> T {
    let n = values.len();
    let mut sums = vec![T::zero(); n_levels];
    let mut counts = vec![0usize; n_levels];
    for (&v, &c) in values.iter().zip(codes) {
        sums[c] = sums[c] + v;
        counts[c] += 1;
    }
    let grand = values.iter().copied().sum::<T>() / T::of_usize(n);
    let means: Vec<T> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / T::of_usize(c) } else { T::zero() })
        .collect();
    let groups = counts.iter().filter(|&&c| c > 0).count();
    let ss_between = means
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0)
        .map(|(&m, &c)| T::of_usize(c) * (m - grand) * (m - grand))
        .sum::<T>();
    let ss_within = values
        .iter()
        .zip(codes)
        .map(|(&v, &c)| (v - means[c]) * (v - means[c]))
        .sum::<T>();
    (ss_between / T::of_usize(groups - 1)) / (ss_within / T::of_usize(n - groups))
}
