use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{permanova, Design};
use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};
use crate::factor::Factor;
use crate::inference::PermutationPlan;
use crate::ingest::csv_write_err;
use crate::npstats::bonferroni;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseEntry<T> {
    pub a: String,
    pub b: String,
    pub n_a: usize,
    pub n_b: usize,
    /// `None` when either level has fewer than two observations.
    pub f: Option<T>,
    pub r2: Option<T>,
    pub p_raw: Option<T>,
    pub p_adjusted: Option<T>,
}

impl<T> PairwiseEntry<T> {
    pub fn testable(&self) -> bool {
        self.p_raw.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTable<T> {
    pub factor: String,
    pub entries: Vec<PairwiseEntry<T>>,
    pub n_perm: usize,
    pub seed: u64,
}

impl<T: Scalar> PairwiseTable<T> {
    pub fn get(&self, a: &str, b: &str) -> Option<&PairwiseEntry<T>> {
        self.entries
            .iter()
            .find(|e| (e.a == a && e.b == b) || (e.a == b && e.b == a))
    }

    /// Smallest Bonferroni-adjusted p over testable pairs.
    pub fn min_adjusted(&self) -> Option<T> {
        self.entries
            .iter()
            .filter_map(|e| e.p_adjusted)
            .fold(None, |m, p| Some(m.map_or(p, |m: T| m.min(p))))
    }

    /// Lower-triangular pair list with raw and adjusted p side by side.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["level_a", "level_b", "n_a", "n_b", "F", "R2", "p_raw", "p_bonferroni", "n_perm", "seed"])
            .map_err(csv_write_err)?;
        let opt = |x: Option<T>| x.map(|v| v.to_string()).unwrap_or_default();
        for e in &self.entries {
            wtr.write_record([
                e.a.clone(),
                e.b.clone(),
                e.n_a.to_string(),
                e.n_b.to_string(),
                opt(e.f),
                opt(e.r2),
                opt(e.p_raw),
                opt(e.p_adjusted),
                self.n_perm.to_string(),
                self.seed.to_string(),
            ])
            .map_err(csv_write_err)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// One-factor PERMANOVA for every pair of levels of `group`, Bonferroni
/// adjusted over the testable pairs. Pairs are listed in level order,
/// `(1,0), (2,0), (2,1), ...`.
pub fn pairwise_permanova<T: Scalar>(
    d: &DistanceMatrix<T>,
    group: &Factor,
    plan: &PermutationPlan,
) -> Result<PairwiseTable<T>> {
    if group.len() != d.len() {
        return Err(Error::InvalidInput(format!(
            "factor `{}` covers {} items, distance matrix has {}",
            group.name,
            group.len(),
            d.len()
        )));
    }
    let members = group.members();
    let present: Vec<usize> = (0..group.levels.len()).filter(|&l| !members[l].is_empty()).collect();
    if present.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "factor `{}` needs at least 2 levels for pairwise tests",
            group.name
        )));
    }

    let mut entries = Vec::new();
    for (bi, &b) in present.iter().enumerate() {
        for &a in &present[..bi] {
            let (ma, mb) = (&members[a], &members[b]);
            let mut entry = PairwiseEntry {
                a: group.levels[b].clone(),
                b: group.levels[a].clone(),
                n_a: mb.len(),
                n_b: ma.len(),
                f: None,
                r2: None,
                p_raw: None,
                p_adjusted: None,
            };
            if ma.len() >= 2 && mb.len() >= 2 {
                let idx: Vec<usize> = ma.iter().chain(mb).copied().collect();
                let sub = d.subset(&idx);
                let sub_factor = Factor::new(
                    group.name.clone(),
                    vec![entry.b.clone(), entry.a.clone()],
                    (0..idx.len()).map(|i| usize::from(i >= ma.len())).collect(),
                )?;
                let table = permanova(&sub, &Design::new(vec![sub_factor])?, &plan.with_n(idx.len())?)?;
                let row = &table.terms[0];
                entry.f = Some(row.f);
                entry.r2 = Some(row.r2);
                entry.p_raw = Some(row.p);
            }
            entries.push(entry);
        }
    }

    let raw: Vec<T> = entries.iter().filter_map(|e| e.p_raw).collect();
    let adjusted = bonferroni(&raw, raw.len());
    let mut it = adjusted.into_iter();
    for e in entries.iter_mut().filter(|e| e.p_raw.is_some()) {
        e.p_adjusted = it.next();
    }
    Ok(PairwiseTable {
        factor: group.name.clone(),
        entries,
        n_perm: plan.n_perm,
        seed: plan.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::euclidean;
    use ndarray::Array2;

    #[test]
    fn duplicated_groups_are_not_separated() {
        let base = [0.3f64, 1.7, 2.2, 0.9, 1.1];
        let x = Array2::from_shape_fn((10, 1), |(i, _)| base[i % 5]);
        let d = euclidean(&x, None).unwrap();
        let g = Factor::from_labels("g", &["a", "a", "a", "a", "a", "b", "b", "b", "b", "b"]);
        let plan = PermutationPlan::new(10, 199, 4).unwrap();
        let t = pairwise_permanova(&d, &g, &plan).unwrap();
        let e = t.get("a", "b").unwrap();
        assert!(e.f.unwrap().abs() < 1e-12);
        assert_eq!(e.p_adjusted.unwrap(), 1.0);
    }

    #[test]
    fn small_level_is_untestable() {
        let x = Array2::from_shape_fn((7, 1), |(i, _)| i as f64);
        let d = euclidean(&x, None).unwrap();
        let g = Factor::from_labels("g", &["a", "a", "a", "b", "b", "b", "c"]);
        let plan = PermutationPlan::new(7, 99, 4).unwrap();
        let t = pairwise_permanova(&d, &g, &plan).unwrap();
        assert_eq!(t.entries.len(), 3);
        let ab = t.get("a", "b").unwrap();
        assert!(ab.testable());
        // Only one testable pair, so the adjustment factor is 1.
        assert_eq!(ab.p_adjusted, ab.p_raw);
        assert!(!t.get("a", "c").unwrap().testable());
        assert!(!t.get("b", "c").unwrap().testable());
    }

    #[test]
    fn separated_groups_reach_the_floor() {
        let x = Array2::from_shape_fn((12, 2), |(i, j)| (i / 4) as f64 * 10.0 + (i % 4) as f64 * 0.1 + j as f64);
        let d = euclidean(&x, None).unwrap();
        let g = Factor::from_labels("g", &(0..12).map(|i| ["a", "b", "c"][i / 4]).collect::<Vec<_>>());
        let plan = PermutationPlan::new(12, 999, 8).unwrap();
        let t = pairwise_permanova(&d, &g, &plan).unwrap();
        for e in &t.entries {
            // With 4+4 items only 70 distinct splits exist: p is at least 1/35 after ties.
            assert!(e.p_raw.unwrap() < 0.05);
            assert!((e.p_adjusted.unwrap() - (3.0 * e.p_raw.unwrap()).min(1.0)).abs() < 1e-15);
        }
    }
}
