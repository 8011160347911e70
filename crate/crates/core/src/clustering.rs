//! Ward agglomerative clustering with Lance–Williams updates.

use std::cmp::Ordering;
use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::distance::{euclidean, DistanceMatrix};
use crate::error::{Error, Result};
use crate::ingest::{csv_write_err, log_value, AbundanceTable, LogVariant};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WardVariant {
    /// Squares the input distances, reports `sqrt` of the merge criterion.
    #[default]
    #[serde(rename = "ward.D2")]
    D2,
    /// Applies the update to the distances as given.
    #[serde(rename = "ward.D")]
    D,
}

impl WardVariant {
    pub fn name(self) -> &'static str {
        match self {
            WardVariant::D2 => "ward.D2",
            WardVariant::D => "ward.D",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ward.d2" | "d2" => Some(WardVariant::D2),
            "ward.d" | "d" => Some(WardVariant::D),
            _ => None,
        }
    }
}

/// One agglomeration step. Nodes `0..n` are leaves; the cluster formed at
/// step `s` is node `n + s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge<T> {
    pub left: usize,
    pub right: usize,
    pub height: T,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram<T> {
    pub labels: Vec<String>,
    pub variant: WardVariant,
    pub merges: Vec<Merge<T>>,
    /// Leaves left to right, with the tighter subtree first at every node.
    pub order: Vec<usize>,
}

impl<T: Scalar> Dendrogram<T> {
    pub fn n_leaves(&self) -> usize {
        self.labels.len()
    }

    fn height_of(&self, node: usize) -> T {
        let n = self.n_leaves();
        if node < n {
            T::zero()
        } else {
            self.merges[node - n].height
        }
    }

    /// Leaf indices under `node`, ascending.
    pub fn leaves(&self, node: usize) -> Vec<usize> {
        let n = self.n_leaves();
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < n {
                out.push(x);
            } else {
                let m = &self.merges[x - n];
                stack.push(m.left);
                stack.push(m.right);
            }
        }
        out.sort_unstable();
        out
    }

    /// Cluster id per leaf after undoing the last `k - 1` merges. Ids are
    /// numbered by first appearance in leaf index order.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>> {
        let n = self.n_leaves();
        if k == 0 || k > n {
            return Err(Error::InvalidInput(format!("cannot cut {n} leaves into {k} clusters")));
        }
        let mut roots: Vec<usize> = vec![2 * n - 2];
        if n == 1 {
            roots = vec![0];
        }
        while roots.len() < k {
            // Split the most recent merge still standing.
            let (pos, &node) = roots.iter().enumerate().max_by_key(|(_, &r)| r).unwrap();
            let m = &self.merges[node - n];
            roots.swap_remove(pos);
            roots.push(m.left);
            roots.push(m.right);
        }
        let mut assignment = vec![usize::MAX; n];
        for (c, &r) in roots.iter().enumerate() {
            for leaf in self.leaves(r) {
                assignment[leaf] = c;
            }
        }
        let mut remap = vec![usize::MAX; k];
        let mut next = 0;
        for a in &mut assignment {
            if remap[*a] == usize::MAX {
                remap[*a] = next;
                next += 1;
            }
            *a = remap[*a];
        }
        Ok(assignment)
    }

    /// Label sets of the two clusters below the root, each sorted.
    pub fn top_split(&self) -> Option<[Vec<String>; 2]> {
        let m = self.merges.last()?;
        let side = |node| {
            let mut v: Vec<String> = self.leaves(node).into_iter().map(|i| self.labels[i].clone()).collect();
            v.sort();
            v
        };
        Some([side(m.left), side(m.right)])
    }

    pub fn to_json(&self) -> Value {
        fn node<T: Scalar>(d: &Dendrogram<T>, x: usize) -> Value {
            let n = d.n_leaves();
            if x < n {
                json!({ "label": d.labels[x], "index": x })
            } else {
                let m = &d.merges[x - n];
                json!({
                    "height": m.height.f64(),
                    "size": m.size,
                    "children": [node(d, m.left), node(d, m.right)],
                })
            }
        }
        let root = if self.merges.is_empty() { 0 } else { 2 * self.n_leaves() - 2 };
        json!({
            "method": self.variant.name(),
            "order": self.order.iter().map(|&i| self.labels[i].clone()).collect::<Vec<_>>(),
            "tree": node(self, root),
        })
    }

    pub fn write_merges_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.n_leaves();
        let name = |x: usize| {
            if x < n {
                self.labels[x].clone()
            } else {
                format!("#{}", x - n + 1)
            }
        };
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["step", "left", "right", "height", "size"])
            .map_err(csv_write_err)?;
        for (s, m) in self.merges.iter().enumerate() {
            wtr.write_record([(s + 1).to_string(), name(m.left), name(m.right), m.height.to_string(), m.size.to_string()])
                .map_err(csv_write_err)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))
    }

    /// Distance matrix rows and columns permuted into leaf order.
    pub fn write_heatmap_csv<W: Write>(&self, d: &DistanceMatrix<T>, w: W) -> Result<()> {
        d.subset(&self.order).write_csv(w)
    }
}

/// Ward clustering of `d`. Ties in the merge criterion go to the pair whose
/// smallest labels sort first, so the tree does not depend on row order.
pub fn ward_cluster<T: Scalar>(d: &DistanceMatrix<T>, variant: WardVariant) -> Result<Dendrogram<T>> {
    let n = d.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("clustering needs at least 2 items, got {n}")));
    }
    let mut w: Array2<T> = match variant {
        WardVariant::D2 => d.matrix().mapv(|x| x * x),
        WardVariant::D => d.matrix().clone(),
    };
    // Rank of each label in sorted order, for tie-breaking.
    let mut sorted: Vec<usize> = (0..n).collect();
    sorted.sort_by(|&a, &b| d.labels[a].cmp(&d.labels[b]).then(a.cmp(&b)));
    let mut label_rank = vec![0; n];
    for (r, &i) in sorted.iter().enumerate() {
        label_rank[i] = r;
    }

    // Slot i holds the cluster currently stored in row i.
    let mut active: Vec<bool> = vec![true; n];
    let mut node: Vec<usize> = (0..n).collect();
    let mut size: Vec<usize> = vec![1; n];
    let mut key: Vec<usize> = label_rank.clone();
    let mut merges = Vec::with_capacity(n - 1);
    let scale = w.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
    let tol = T::of(8.0) * T::epsilon() * scale;

    for step in 0..n - 1 {
        let mut best: Option<(usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..n {
                if !active[j] {
                    continue;
                }
                best = Some(match best {
                    None => (i, j),
                    Some((bi, bj)) => {
                        let (c, cb) = (w[(i, j)], w[(bi, bj)]);
                        let pair = |a: usize, b: usize| {
                            let (x, y) = (key[a], key[b]);
                            (x.min(y), x.max(y))
                        };
                        let ord = if (c - cb).abs() <= tol {
                            Ordering::Equal
                        } else {
                            c.partial_cmp(&cb).unwrap_or(Ordering::Equal)
                        };
                        match ord.then_with(|| pair(i, j).cmp(&pair(bi, bj))) {
                            Ordering::Less => (i, j),
                            _ => (bi, bj),
                        }
                    }
                });
            }
        }
        let (i, j) = best.expect("two active clusters remain");
        let crit = w[(i, j)];
        let height = match variant {
            WardVariant::D2 => crit.max(T::zero()).sqrt(),
            WardVariant::D => crit,
        };
        let (ni, nj) = (T::of_usize(size[i]), T::of_usize(size[j]));
        for k in 0..n {
            if !active[k] || k == i || k == j {
                continue;
            }
            let nk = T::of_usize(size[k]);
            let v = ((ni + nk) * w[(k, i)] + (nj + nk) * w[(k, j)] - nk * crit) / (ni + nj + nk);
            w[(k, i)] = v;
            w[(i, k)] = v;
        }
        let (left, right) = if key[i] <= key[j] { (node[i], node[j]) } else { (node[j], node[i]) };
        merges.push(Merge {
            left,
            right,
            height,
            size: size[i] + size[j],
        });
        active[j] = false;
        size[i] += size[j];
        key[i] = key[i].min(key[j]);
        node[i] = n + step;
    }

    let mut dendro = Dendrogram {
        labels: d.labels.clone(),
        variant,
        merges,
        order: Vec::new(),
    };
    dendro.order = leaf_order(&dendro, &label_rank);
    Ok(dendro)
}

fn leaf_order<T: Scalar>(d: &Dendrogram<T>, label_rank: &[usize]) -> Vec<usize> {
    let n = d.n_leaves();
    let min_rank = |x: usize| d.leaves(x).into_iter().map(|l| label_rank[l]).min().unwrap_or(0);
    let mut out = Vec::with_capacity(n);
    let mut stack = vec![2 * n - 2];
    while let Some(x) = stack.pop() {
        if x < n {
            out.push(x);
            continue;
        }
        let m = &d.merges[x - n];
        let (a, b) = (m.left, m.right);
        let tighter_first = d
            .height_of(a)
            .partial_cmp(&d.height_of(b))
            .unwrap_or(Ordering::Equal)
            .then_with(|| min_rank(a).cmp(&min_rank(b)));
        let (first, second) = if tighter_first == Ordering::Greater { (b, a) } else { (a, b) };
        stack.push(second);
        stack.push(first);
    }
    out
}

/// Euclidean distances between the log-transformed fuel profiles of the
/// levels of `ethnicity` (counts pooled over all other factors). Levels with
/// no households are left out.
pub fn ethnic_profile_distance<T: Scalar>(a: &AbundanceTable, variant: LogVariant) -> Result<DistanceMatrix<T>> {
    let k = a
        .factor_names
        .iter()
        .position(|f| f == "ethnicity")
        .ok_or_else(|| Error::InvalidInput("abundance table has no ethnicity factor".into()))?;
    if a.n_treatments() == 0 {
        return Err(Error::InvalidInput("abundance table is empty".into()));
    }
    let (labels, pooled) = a.pooled_by(k);
    for level in &a.factor_levels[k] {
        if !labels.contains(level) {
            log::warn!("ethnicity `{level}` has no households and is left out of the profile distances");
        }
    }
    let rows = Array2::from_shape_fn((labels.len(), a.n_fuels()), |(i, g)| {
        log_value(T::from_u64(pooled[i][g]).expect("count fits scalar"), variant)
    });
    euclidean(&rows, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::Metric;

    fn line(xs: &[f64]) -> DistanceMatrix<f64> {
        let x = Array2::from_shape_fn((xs.len(), 1), |(i, _)| xs[i]);
        euclidean(&x, Some((0..xs.len()).map(|i| format!("p{i}")).collect())).unwrap()
    }

    #[test]
    fn three_points_on_a_line() {
        let d = ward_cluster(&line(&[0.0, 1.0, 10.0]), WardVariant::D2).unwrap();
        assert_eq!((d.merges[0].left, d.merges[0].right), (0, 1));
        assert_eq!(d.merges[0].height, 1.0);
        assert_eq!((d.merges[1].left, d.merges[1].right), (3, 2));
        // sqrt(2 * (ESS{0,1,10} - ESS{0,1})) = sqrt(2 * (60.667 - 0.5)).
        assert!((d.merges[1].height - (2.0f64 * (182.0 / 3.0 - 0.5)).sqrt()).abs() < 1e-12);
        // The singleton is the tighter subtree at the root.
        assert_eq!(d.order, vec![2, 0, 1]);
    }

    #[test]
    fn ward_d_uses_raw_distances() {
        let d = ward_cluster(&line(&[0.0, 1.0, 10.0]), WardVariant::D).unwrap();
        // (2 * 10 + 2 * 9 - 1) / 3
        assert!((d.merges[1].height - 37.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cut_and_top_split() {
        let d = ward_cluster(&line(&[0.0, 0.1, 0.2, 5.0, 5.1]), WardVariant::D2).unwrap();
        assert_eq!(d.cut(2).unwrap(), vec![0, 0, 0, 1, 1]);
        assert_eq!(d.cut(5).unwrap(), vec![0, 1, 2, 3, 4]);
        let [a, b] = d.top_split().unwrap();
        let mut sides = [a, b];
        sides.sort();
        assert_eq!(sides[0], vec!["p0", "p1", "p2"]);
        assert_eq!(sides[1], vec!["p3", "p4"]);
    }

    #[test]
    fn exact_ties_break_by_label() {
        let d = DistanceMatrix::from_matrix(
            Metric::Euclidean,
            vec!["c".into(), "a".into(), "b".into(), "d".into()],
            Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 0.0 } else { 1.0 }),
        )
        .unwrap();
        let t = ward_cluster(&d, WardVariant::D2).unwrap();
        // "a" and "b" are the smallest labels.
        assert_eq!((t.merges[0].left, t.merges[0].right), (1, 2));
    }

    #[test]
    fn nested_json_has_all_leaves() {
        let d = ward_cluster(&line(&[0.0, 2.0, 3.0, 7.0]), WardVariant::D2).unwrap();
        let j = d.to_json();
        let text = j.to_string();
        for i in 0..4 {
            assert!(text.contains(&format!("\"p{i}\"")));
        }
        assert_eq!(j["order"].as_array().unwrap().len(), 4);
    }
}
