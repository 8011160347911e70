//! Homogeneity of multivariate dispersions: distance of each item to its
//! group centroid in the full principal-coordinate space, then an ANOVA on
//! those distances with a label-permutation p-value.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{anova_f, gower_center, PairwiseEntry};
use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};
use crate::factor::Factor;
use crate::inference::{permutation_p_values, PermutationPlan};
use crate::ingest::csv_write_err;
use crate::npstats::bonferroni;
use crate::ordination::PrincipalAxes;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDispersion<T> {
    pub level: String,
    pub n: usize,
    pub mean_distance: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispersion<T> {
    pub factor: String,
    pub labels: Vec<String>,
    /// Distance of each item to its own group centroid.
    pub distances: Vec<T>,
    pub groups: Vec<GroupDispersion<T>>,
    pub f: T,
    pub df_between: usize,
    pub df_within: usize,
    pub p: T,
    pub pairwise: Vec<PairwiseEntry<T>>,
    pub n_perm: usize,
    pub seed: u64,
}

impl<T: Scalar> Dispersion<T> {
    pub fn write_distances_csv<W: Write>(&self, w: W, levels: &[String]) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["item", "group", "distance_to_centroid"])
            .map_err(csv_write_err)?;
        for ((label, level), d) in self.labels.iter().zip(levels).zip(&self.distances) {
            wtr.write_record([label.clone(), level.clone(), d.to_string()])
                .map_err(csv_write_err)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))
    }

    /// Global test first (`level_a = *`), then each pair.
    pub fn write_tests_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["level_a", "level_b", "df_between", "df_within", "F", "p_raw", "p_bonferroni", "n_perm", "seed"])
            .map_err(csv_write_err)?;
        let (np, seed) = (self.n_perm.to_string(), self.seed.to_string());
        wtr.write_record([
            "*".to_string(),
            "*".to_string(),
            self.df_between.to_string(),
            self.df_within.to_string(),
            self.f.to_string(),
            self.p.to_string(),
            String::new(),
            np.clone(),
            seed.clone(),
        ])
        .map_err(csv_write_err)?;
        let opt = |x: Option<T>| x.map(|v| v.to_string()).unwrap_or_default();
        for e in &self.pairwise {
            wtr.write_record([
                e.a.clone(),
                e.b.clone(),
                "1".to_string(),
                (e.n_a + e.n_b).saturating_sub(2).to_string(),
                opt(e.f),
                opt(e.p_raw),
                opt(e.p_adjusted),
                np.clone(),
                seed.clone(),
            ])
            .map_err(csv_write_err)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// Centroid distances in the space spanned by all principal axes. Axes with
/// negative eigenvalues subtract their contribution; the squared distance is
/// floored at zero before the square root.
pub(crate) fn centroid_distances<T: Scalar>(d: &DistanceMatrix<T>, group: &Factor) -> Result<Vec<T>> {
    let axes = PrincipalAxes::of(&gower_center(d))?;
    let n = d.len();
    let members = group.members();
    let mut sq_pos = vec![T::zero(); n];
    let mut sq_neg = vec![T::zero(); n];
    for a in 0..axes.values.len() {
        let (pos, neg) = (axes.is_positive(a), axes.is_negative(a));
        if !pos && !neg {
            continue;
        }
        let s = axes.scores(a);
        for m in &members {
            if m.is_empty() {
                continue;
            }
            let c = m.iter().map(|&i| s[i]).sum::<T>() / T::of_usize(m.len());
            for &i in m {
                let dev = (s[i] - c) * (s[i] - c);
                if pos {
                    sq_pos[i] = sq_pos[i] + dev;
                } else {
                    sq_neg[i] = sq_neg[i] + dev;
                }
            }
        }
    }
    Ok(sq_pos
        .iter()
        .zip(&sq_neg)
        .map(|(&p, &q)| (p - q).max(T::zero()).sqrt())
        .collect())
}

pub fn dispersion<T: Scalar>(d: &DistanceMatrix<T>, group: &Factor, plan: &PermutationPlan) -> Result<Dispersion<T>> {
    let n = d.len();
    if group.len() != n {
        return Err(Error::InvalidInput(format!(
            "factor `{}` covers {} items, distance matrix has {n}",
            group.name,
            group.len()
        )));
    }
    if plan.n != n {
        return Err(Error::InvalidInput(format!(
            "permutation plan is for {} items, expected {n}",
            plan.n
        )));
    }
    let k = group.levels_present();
    if k < 2 || n <= k {
        return Err(Error::InvalidInput(format!(
            "dispersion test on `{}` needs 2+ groups and more items than groups",
            group.name
        )));
    }
    let distances = centroid_distances(d, group)?;
    let members = group.members();
    let levels = group.levels.len();
    let codes = &group.codes;

    let f = anova_f(&distances, codes, levels);
    let p = permutation_p_values(plan, &[f], |perm| {
        let shuffled: Vec<usize> = (0..n).map(|i| codes[perm[i]]).collect();
        vec![anova_f(&distances, &shuffled, levels)]
    })?[0];

    let groups = group
        .levels
        .iter()
        .zip(&members)
        .filter(|(_, m)| !m.is_empty())
        .map(|(level, m)| GroupDispersion {
            level: level.clone(),
            n: m.len(),
            mean_distance: m.iter().map(|&i| distances[i]).sum::<T>() / T::of_usize(m.len()),
        })
        .collect();

    let present: Vec<usize> = (0..levels).filter(|&l| !members[l].is_empty()).collect();
    let mut pairwise = Vec::new();
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
                let vals: Vec<T> = ma.iter().chain(mb).map(|&i| distances[i]).collect();
                let sub_codes: Vec<usize> = (0..vals.len()).map(|i| usize::from(i >= ma.len())).collect();
                let fo = anova_f(&vals, &sub_codes, 2);
                let sub_plan = plan.with_n(vals.len())?;
                let pr = permutation_p_values(&sub_plan, &[fo], |perm| {
                    let shuffled: Vec<usize> = perm.iter().map(|&i| sub_codes[i]).collect();
                    vec![anova_f(&vals, &shuffled, 2)]
                })?[0];
                entry.f = Some(fo);
                entry.p_raw = Some(pr);
            }
            pairwise.push(entry);
        }
    }
    let raw: Vec<T> = pairwise.iter().filter_map(|e| e.p_raw).collect();
    let mut adjusted = bonferroni(&raw, raw.len()).into_iter();
    for e in pairwise.iter_mut().filter(|e| e.p_raw.is_some()) {
        e.p_adjusted = adjusted.next();
    }

    Ok(Dispersion {
        factor: group.name.clone(),
        labels: d.labels.clone(),
        distances,
        groups,
        f,
        df_between: k - 1,
        df_within: n - k,
        p,
        pairwise,
        n_perm: plan.n_perm,
        seed: plan.seed,
    })
}
