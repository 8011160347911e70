//! Seeded permutation engine and permutation p-values.
//!
//! Permutation `index` of a plan is a pure function of `(seed, index)`: the
//! ChaCha stream number is the index, so permutations can be evaluated in any
//! order on any number of threads and the published counts do not change.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_PERMUTATIONS: usize = 999;
pub const DEFAULT_SEED: u64 = 20_160_301;

/// Largest `n` accepted by [`Scheme::Exhaustive`] (10! permutations).
pub const MAX_EXHAUSTIVE_N: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Uniform random permutations of all observations.
    Free,
    /// Every permutation of the observations, in lexicographic order. The
    /// identity is included, so p-values are plain proportions.
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationPlan {
    pub n: usize,
    pub n_perm: usize,
    pub seed: u64,
    pub scheme: Scheme,
}

impl PermutationPlan {
    pub fn new(n: usize, n_perm: usize, seed: u64) -> Result<Self> {
        if n_perm == 0 {
            return Err(Error::InvalidInput("n_perm must be at least 1".into()));
        }
        Ok(Self {
            n,
            n_perm,
            seed,
            scheme: Scheme::Free,
        })
    }

    /// Plan enumerating all `n!` permutations.
    pub fn exhaustive(n: usize) -> Result<Self> {
        if n > MAX_EXHAUSTIVE_N {
            return Err(Error::InvalidInput(format!(
                "exhaustive enumeration is limited to n <= {MAX_EXHAUSTIVE_N}, got {n}"
            )));
        }
        Ok(Self {
            n,
            n_perm: (1..=n).product(),
            seed: 0,
            scheme: Scheme::Exhaustive,
        })
    }

    /// The same plan for a different number of items.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        match self.scheme {
            Scheme::Free => Self::new(n, self.n_perm, self.seed),
            Scheme::Exhaustive => Self::exhaustive(n),
        }
    }

    pub fn permutation(&self, index: usize) -> Result<Vec<usize>> {
        gen_permutation(self, index)
    }
}

/// Permutation number `index` of `plan`, as a vector mapping position to item.
pub fn gen_permutation(plan: &PermutationPlan, index: usize) -> Result<Vec<usize>> {
    if index >= plan.n_perm {
        return Err(Error::PermutationIndex {
            index,
            n_perm: plan.n_perm,
        });
    }
    Ok(match plan.scheme {
        Scheme::Free => shuffled(plan.n, plan.seed, index as u64),
        Scheme::Exhaustive => nth_lexicographic(plan.n, index),
    })
}

fn shuffled(n: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = Uniform::new_inclusive(0, i).expect("valid range").sample(&mut rng);
        perm.swap(i, j);
    }
    perm
}

fn nth_lexicographic(n: usize, mut index: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    let mut radix: usize = (1..n.max(1)).product();
    let mut out = Vec::with_capacity(n);
    for remaining in (1..=n).rev() {
        let pick = index / radix;
        index %= radix;
        out.push(pool.remove(pick));
        if remaining > 1 {
            radix /= remaining - 1;
        }
    }
    out
}

#[inline]
fn at_least<T: Scalar>(t: T, obs: T) -> bool {
    t >= obs - T::tie_tolerance() * obs.abs().max(T::one())
}

/// `(#{t >= obs} + 1) / (n_perm + 1)`; values within `sqrt(eps) * max(|obs|, 1)`
/// of `obs` count as ties. All statistics tested here are dimensionless, so
/// the absolute floor only absorbs roundoff around zero.
pub fn p_value<T: Scalar>(obs: T, perm_stats: &[T]) -> T {
    let hits = perm_stats.iter().filter(|&&t| at_least(t, obs)).count();
    T::of_usize(hits + 1) / T::of_usize(perm_stats.len() + 1)
}

/// Evaluates `stat` under every permutation of `plan` and counts, per
/// statistic, how many permuted values reach the observed one. `stat`
/// receives the permutation and must return one value per entry of
/// `observed`.
pub fn count_exceedances<T, F>(plan: &PermutationPlan, observed: &[T], stat: F) -> Result<Vec<usize>>
where
    T: Scalar,
    F: Fn(&[usize]) -> Vec<T> + Sync,
{
    let k = observed.len();
    (0..plan.n_perm)
        .into_par_iter()
        .map(|index| {
            let perm = gen_permutation(plan, index)?;
            let values = stat(&perm);
            debug_assert_eq!(values.len(), k);
            Ok(values
                .iter()
                .zip(observed)
                .map(|(&t, &o)| usize::from(at_least(t, o)))
                .collect::<Vec<usize>>())
        })
        .try_reduce(
            || vec![0; k],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                Ok(a)
            },
        )
}

/// Converts exceedance counts into p-values according to the plan's scheme.
pub fn p_from_counts<T: Scalar>(plan: &PermutationPlan, count: usize) -> T {
    match plan.scheme {
        Scheme::Free => T::of_usize(count + 1) / T::of_usize(plan.n_perm + 1),
        Scheme::Exhaustive => T::of_usize(count) / T::of_usize(plan.n_perm),
    }
}

/// Permutation p-values of `observed` under `plan`.
pub fn permutation_p_values<T, F>(plan: &PermutationPlan, observed: &[T], stat: F) -> Result<Vec<T>>
where
    T: Scalar,
    F: Fn(&[usize]) -> Vec<T> + Sync,
{
    let counts = count_exceedances(plan, observed, stat)?;
    Ok(counts.into_iter().map(|c| p_from_counts(plan, c)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_index() {
        let plan = PermutationPlan::new(30, 10, 42).unwrap();
        assert_eq!(plan.permutation(7).unwrap(), plan.permutation(7).unwrap());
        assert_ne!(plan.permutation(7).unwrap(), plan.permutation(8).unwrap());
        let other_seed = PermutationPlan::new(30, 10, 43).unwrap();
        assert_ne!(plan.permutation(7).unwrap(), other_seed.permutation(7).unwrap());
    }

    #[test]
    fn permutations_are_bijections() {
        let plan = PermutationPlan::new(17, 50, 1).unwrap();
        for i in 0..50 {
            let mut p = plan.permutation(i).unwrap();
            p.sort_unstable();
            assert_eq!(p, (0..17).collect::<Vec<_>>());
        }
    }

    #[test]
    fn single_item_is_identity() {
        let plan = PermutationPlan::new(1, 20, 9).unwrap();
        for i in 0..20 {
            assert_eq!(plan.permutation(i).unwrap(), vec![0]);
        }
    }

    #[test]
    fn index_out_of_range() {
        let plan = PermutationPlan::new(3, 5, 0).unwrap();
        assert!(matches!(plan.permutation(5), Err(Error::PermutationIndex { .. })));
        assert!(PermutationPlan::new(3, 0, 0).is_err());
    }

    #[test]
    fn position_frequencies_are_uniform() {
        let plan = PermutationPlan::new(5, 10_000, 2024).unwrap();
        let mut freq = [[0usize; 5]; 5];
        for i in 0..plan.n_perm {
            for (pos, &item) in plan.permutation(i).unwrap().iter().enumerate() {
                freq[item][pos] += 1;
            }
        }
        for row in freq {
            for c in row {
                let f = c as f64 / 10_000.0;
                assert!((f - 0.2).abs() <= 0.02, "frequency {f}");
            }
        }
    }

    #[test]
    fn exhaustive_enumerates_each_permutation_once() {
        let plan = PermutationPlan::exhaustive(4).unwrap();
        assert_eq!(plan.n_perm, 24);
        let mut all: Vec<Vec<usize>> = (0..24).map(|i| plan.permutation(i).unwrap()).collect();
        assert_eq!(all[0], vec![0, 1, 2, 3]);
        assert_eq!(all[23], vec![3, 2, 1, 0]);
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 24);
        assert!(PermutationPlan::exhaustive(11).is_err());
    }

    #[test]
    fn p_value_examples() {
        let stats: Vec<f64> = (0..999).map(|i| i as f64 / 1000.0).collect();
        assert_eq!(p_value(5.0, &stats), 0.001);
        assert_eq!(p_value(-1.0, &stats), 1.0);
        let nine = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        assert_eq!(p_value(5.0, &nine), 0.6);
    }

    #[test]
    fn counts_do_not_depend_on_thread_count() {
        let data: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64).collect();
        let stat = |perm: &[usize]| {
            let a: f64 = perm[..20].iter().map(|&i| data[i]).sum();
            vec![a, a * a]
        };
        let plan = PermutationPlan::new(40, 499, 5).unwrap();
        let obs = stat(&(0..40).collect::<Vec<_>>());
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| count_exceedances(&plan, &obs, stat).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(4));
        assert_eq!(one, run(8));
    }

    /// Kolmogorov-Smirnov distance of a sample from Uniform(0, 1).
    fn ks_uniform(mut sample: Vec<f64>) -> f64 {
        sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sample.len() as f64;
        sample
            .iter()
            .enumerate()
            .map(|(i, &p)| ((i as f64 + 1.0) / n - p).max(p - i as f64 / n))
            .fold(0.0, f64::max)
    }

    #[test]
    fn null_p_values_are_uniform() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut ps = Vec::with_capacity(500);
        for sim in 0..500u64 {
            let data: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
            let stat = |perm: &[usize]| {
                let a: f64 = perm[..6].iter().map(|&i| data[i]).sum();
                let b: f64 = perm[6..].iter().map(|&i| data[i]).sum();
                vec![(a - b).abs()]
            };
            let plan = PermutationPlan::new(12, 199, sim).unwrap();
            let obs = stat(&(0..12).collect::<Vec<_>>());
            ps.push(permutation_p_values(&plan, &obs, stat).unwrap()[0]);
        }
        let d = ks_uniform(ps);
        // Asymptotic critical value at the 0.1% level.
        assert!(d < 1.949 / (500f64).sqrt(), "KS distance {d}");
    }

    proptest::proptest! {
        #[test]
        fn p_value_bounds(obs in -10.0f64..10.0, stats in proptest::collection::vec(-10.0f64..10.0, 1..200)) {
            let p = p_value(obs, &stats);
            let n = stats.len() as f64;
            proptest::prop_assert!(p >= 1.0 / (n + 1.0) && p <= 1.0);
        }
    }
}
