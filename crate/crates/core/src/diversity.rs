//! Shannon diversity and total (row-sum) standardisation.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{csv_write_err, AbundanceTable};
use crate::scalar::Scalar;

/// `-sum p ln p` over the nonzero entries, in nats.
pub fn shannon<T: Scalar>(counts: &[T]) -> Result<T> {
    if counts.iter().any(|&c| !c.is_finite() || c < T::zero()) {
        return Err(Error::InvalidInput("Shannon index needs finite nonnegative counts".into()));
    }
    let total: T = counts.iter().copied().sum();
    if total <= T::zero() {
        return Err(Error::InvalidInput("Shannon index of an all-zero vector".into()));
    }
    let h = counts
        .iter()
        .filter(|&&c| c > T::zero())
        .map(|&c| {
            let p = c / total;
            -p * p.ln()
        })
        .sum::<T>();
    Ok(h.max(T::zero()))
}

pub fn richness<T: Scalar>(counts: &[T]) -> usize {
    counts.iter().filter(|&&c| c > T::zero()).count()
}

/// Divides each row by its sum. Zero rows are an error.
pub fn total_transform<T: Scalar>(rows: &Array2<T>) -> Result<Array2<T>> {
    let mut out = rows.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let s = row.sum();
        if !(s > T::zero()) {
            return Err(Error::InvalidInput(format!("row {i} sums to zero")));
        }
        row.mapv_inplace(|x| x / s);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum By {
    Treatment,
    /// Counts pooled over treatments sharing a level of this factor.
    Group(usize),
    /// Every household in one row.
    Overall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeAbundance<T> {
    pub labels: Vec<String>,
    pub fuels: Vec<String>,
    pub proportions: Array2<T>,
}

impl<T: Scalar> RelativeAbundance<T> {
    pub fn get(&self, label: &str, fuel: &str) -> Option<T> {
        let i = self.labels.iter().position(|l| l == label)?;
        let g = self.fuels.iter().position(|f| f == fuel)?;
        Some(self.proportions[(i, g)])
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["label".to_string()];
        header.extend(self.fuels.iter().cloned());
        wtr.write_record(&header).map_err(csv_write_err)?;
        for (label, row) in self.labels.iter().zip(self.proportions.rows()) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|x| x.to_string()));
            wtr.write_record(&rec).map_err(csv_write_err)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))
    }
}

pub fn relative_abundance<T: Scalar>(a: &AbundanceTable, by: By) -> Result<RelativeAbundance<T>> {
    let (labels, counts) = match by {
        By::Treatment => (a.labels(), a.counts.clone()),
        By::Group(k) => {
            if k >= a.factor_names.len() {
                return Err(Error::InvalidInput(format!("no design factor {k}")));
            }
            a.pooled_by(k)
        }
        By::Overall => (vec!["all".to_string()], vec![a.column_totals()]),
    };
    if counts.is_empty() {
        return Err(Error::InvalidInput("no rows to standardise".into()));
    }
    let rows = Array2::from_shape_fn((counts.len(), a.n_fuels()), |(i, g)| {
        T::from_u64(counts[i][g]).expect("count fits scalar")
    });
    Ok(RelativeAbundance {
        labels,
        fuels: a.fuels.clone(),
        proportions: total_transform(&rows)?,
    })
}

/// Linear-interpolation quantile of sorted data (the common "type 7").
pub fn quantile_sorted<T: Scalar>(sorted: &[T], q: f64) -> T {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = T::of(h - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotStats<T> {
    pub n: usize,
    pub q1: T,
    pub median: T,
    pub q3: T,
    /// Most extreme observations within 1.5 IQR of the quartiles.
    pub lower_whisker: T,
    pub upper_whisker: T,
    pub outliers: Vec<T>,
}

pub fn boxplot_stats<T: Scalar>(values: &[T]) -> Result<BoxplotStats<T>> {
    if values.is_empty() {
        return Err(Error::InvalidInput("boxplot of no values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let q1 = quantile_sorted(&v, 0.25);
    let median = quantile_sorted(&v, 0.5);
    let q3 = quantile_sorted(&v, 0.75);
    let reach = T::of(1.5) * (q3 - q1);
    let (lo, hi) = (q1 - reach, q3 + reach);
    let inside: Vec<T> = v.iter().copied().filter(|&x| x >= lo && x <= hi).collect();
    Ok(BoxplotStats {
        n: v.len(),
        q1,
        median,
        q3,
        lower_whisker: inside.first().copied().unwrap_or(q1),
        upper_whisker: inside.last().copied().unwrap_or(q3),
        outliers: v.iter().copied().filter(|&x| x < lo || x > hi).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentDiversity<T> {
    pub treatment: String,
    pub group: String,
    pub shannon: T,
    pub richness: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDiversity<T> {
    pub group: String,
    /// Summary of the per-treatment indices in this group.
    pub boxplot: BoxplotStats<T>,
    /// Index of the group's pooled counts.
    pub pooled_shannon: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityFrame<T> {
    pub factor: String,
    pub treatments: Vec<TreatmentDiversity<T>>,
    pub groups: Vec<GroupDiversity<T>>,
}

impl<T: Scalar> DiversityFrame<T> {
    pub fn group(&self, name: &str) -> Option<&GroupDiversity<T>> {
        self.groups.iter().find(|g| g.group == name)
    }

    pub fn values(&self) -> Vec<T> {
        self.treatments.iter().map(|t| t.shannon).collect()
    }

    pub fn write_treatments_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["treatment", &self.factor, "shannon", "richness"])
            .map_err(csv_write_err)?;
        for t in &self.treatments {
            wtr.write_record([t.treatment.clone(), t.group.clone(), t.shannon.to_string(), t.richness.to_string()])
                .map_err(csv_write_err)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn write_groups_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "group",
            "n",
            "q1",
            "median",
            "q3",
            "lower_whisker",
            "upper_whisker",
            "outliers",
            "pooled_shannon",
        ])
        .map_err(csv_write_err)?;
        for g in &self.groups {
            let b = &g.boxplot;
            let outliers = b.outliers.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
            wtr.write_record([
                g.group.clone(),
                b.n.to_string(),
                b.q1.to_string(),
                b.median.to_string(),
                b.q3.to_string(),
                b.lower_whisker.to_string(),
                b.upper_whisker.to_string(),
                outliers,
                g.pooled_shannon.to_string(),
            ])
            .map_err(csv_write_err)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// Per-treatment Shannon indices grouped by design factor `k`.
pub fn diversity_frame<T: Scalar>(a: &AbundanceTable, k: usize) -> Result<DiversityFrame<T>> {
    if k >= a.factor_names.len() {
        return Err(Error::InvalidInput(format!("no design factor {k}")));
    }
    let labels = a.labels();
    let mut treatments = Vec::with_capacity(a.n_treatments());
    for (t, row) in a.counts.iter().enumerate() {
        let counts: Vec<T> = row.iter().map(|&c| T::from_u64(c).expect("count fits scalar")).collect();
        treatments.push(TreatmentDiversity {
            treatment: labels[t].clone(),
            group: a.level_label(t, k).to_string(),
            shannon: shannon(&counts)?,
            richness: richness(&counts),
        });
    }
    let (pooled_labels, pooled) = a.pooled_by(k);
    let mut groups = Vec::with_capacity(pooled_labels.len());
    for (level, counts) in pooled_labels.iter().zip(&pooled) {
        let values: Vec<T> = treatments.iter().filter(|t| &t.group == level).map(|t| t.shannon).collect();
        let counts: Vec<T> = counts.iter().map(|&c| T::from_u64(c).expect("count fits scalar")).collect();
        groups.push(GroupDiversity {
            group: level.clone(),
            boxplot: boxplot_stats(&values)?,
            pooled_shannon: shannon(&counts)?,
        });
    }
    Ok(DiversityFrame {
        factor: a.factor_names[k].clone(),
        treatments,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shannon_examples() {
        assert_eq!(shannon(&[0.0, 5.0, 0.0]).unwrap(), 0.0);
        assert!((shannon(&[3.0f64; 6]).unwrap() - 6f64.ln()).abs() < 1e-12);
        assert!((shannon(&[1.0f64, 1.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(shannon(&[0.0f64, 0.0]).is_err());
        assert!(shannon(&[1.0f64, -1.0]).is_err());
    }

    #[test]
    fn shannon_f32() {
        assert!((shannon(&[1.0f32, 1.0, 1.0, 1.0]).unwrap() - 4f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn total_transform_rows() {
        let r = total_transform(&ndarray::array![[1.0, 3.0], [0.0, 2.0]]).unwrap();
        assert_eq!(r, ndarray::array![[0.25, 0.75], [0.0, 1.0]]);
        assert_eq!(total_transform(&r).unwrap(), r);
        assert!(total_transform(&ndarray::array![[0.0, 0.0]]).is_err());
    }

    #[test]
    fn quantiles_and_whiskers() {
        let b = boxplot_stats(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (2.0, 3.0, 4.0));
        assert_eq!((b.lower_whisker, b.upper_whisker), (1.0, 4.0));
        assert_eq!(b.outliers, vec![100.0]);
        let one = boxplot_stats(&[0.5]).unwrap();
        assert_eq!((one.q1, one.median, one.q3), (0.5, 0.5, 0.5));
    }

    fn table() -> AbundanceTable {
        AbundanceTable {
            factor_names: vec!["ethnicity".into(), "income".into(), "education".into(), "geo".into()],
            factor_levels: vec![
                vec!["A".into(), "B".into(), "C".into()],
                vec!["lo".into(), "hi".into()],
                vec!["e".into()],
                vec!["g".into()],
            ],
            fuels: vec!["wood".into(), "lpg".into()],
            treatments: vec![[0, 0, 0, 0], [0, 1, 0, 0], [1, 0, 0, 0]],
            counts: vec![vec![3, 1], vec![0, 4], vec![2, 2]],
        }
    }

    #[test]
    fn relative_abundance_by_group() {
        let r = relative_abundance::<f64>(&table(), By::Group(0)).unwrap();
        assert_eq!(r.labels, vec!["A", "B"]);
        assert_eq!(r.get("A", "lpg"), Some(5.0 / 8.0));
        let all = relative_abundance::<f64>(&table(), By::Overall).unwrap();
        assert_eq!(all.get("all", "wood"), Some(5.0 / 12.0));
    }

    #[test]
    fn frame_groups_treatments() {
        let f = diversity_frame::<f64>(&table(), 0).unwrap();
        assert_eq!(f.treatments.len(), 3);
        assert_eq!(f.treatments[1].shannon, 0.0);
        assert_eq!(f.treatments[1].richness, 1);
        let a = f.group("A").unwrap();
        assert_eq!(a.boxplot.n, 2);
        let h0 = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert!((a.boxplot.median - h0 / 2.0).abs() < 1e-15);
        assert!(f.group("C").is_none());
    }
}
