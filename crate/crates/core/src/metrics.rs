//! Aggregate statistics over per-sentence, per-path attribution tables.
//!
//! A table is a slice of rows, one per sentence, each holding one
//! attribution per path (or per neuron).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Condition, TaskKind};
use crate::error::{Error, Result};

/// Path counts above this use Monte-Carlo t-values.
pub const EXACT_T_LIMIT: usize = 10_000;
pub const DEFAULT_T_SAMPLES: usize = 100_000;

fn check_table(table: &[Vec<f64>], target: usize) -> Result<usize> {
    let width = table
        .first()
        .map(Vec::len)
        .ok_or(Error::Empty("attribution table has no sentences"))?;
    if table.iter().any(|r| r.len() != width) {
        return Err(Error::Dimension("attribution table rows differ in length".into()));
    }
    if target >= width {
        return Err(Error::Dimension(format!("target {target} outside {width} paths")));
    }
    Ok(width)
}

/// Exact t-value against every `(sentence, other path)` pair in `pool`.
fn t_exact_pool(table: &[Vec<f64>], target: usize, pool: &[usize]) -> f64 {
    let wins: usize = table
        .iter()
        .map(|row| pool.iter().filter(|&&p| row[target] > row[p]).count())
        .sum();
    wins as f64 / (table.len() * pool.len()) as f64
}

pub fn t_value_exact(table: &[Vec<f64>], target: usize) -> Result<f64> {
    let width = check_table(table, target)?;
    let pool: Vec<usize> = (0..width).filter(|&p| p != target).collect();
    if pool.is_empty() {
        return Err(Error::Empty("t-value needs at least two paths"));
    }
    Ok(t_exact_pool(table, target, &pool))
}

/// Monte-Carlo t-value from `samples` uniform `(sentence, other path)` draws.
pub fn t_value_sampled(table: &[Vec<f64>], target: usize, seed: u64, samples: usize) -> Result<f64> {
    let width = check_table(table, target)?;
    if width < 2 {
        return Err(Error::Empty("t-value needs at least two paths"));
    }
    if samples == 0 {
        return Err(Error::Empty("t-value needs at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins = 0usize;
    for _ in 0..samples {
        let row = &table[rng.gen_range(0..table.len())];
        let mut p = rng.gen_range(0..width - 1);
        if p >= target {
            p += 1;
        }
        if row[target] > row[p] {
            wins += 1;
        }
    }
    Ok(wins as f64 / samples as f64)
}

/// Probability that `target` strictly beats a uniformly drawn other path on a
/// uniformly drawn sentence. Exact up to [`EXACT_T_LIMIT`] paths.
pub fn t_value(table: &[Vec<f64>], target: usize, seed: u64, samples: usize) -> Result<f64> {
    let width = check_table(table, target)?;
    if width <= EXACT_T_LIMIT {
        t_value_exact(table, target)
    } else {
        t_value_sampled(table, target, seed, samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
}

impl Sign {
    pub fn symbol(self) -> char {
        match self {
            Sign::Positive => '+',
            Sign::Negative => '-',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Share {
    pub sign: Sign,
    pub value: f64,
    pub skipped: usize,
}

impl Share {
    /// `+0.47` style rendering.
    pub fn signed(&self) -> f64 {
        match self.sign {
            Sign::Positive => self.value,
            Sign::Negative => -self.value,
        }
    }
}

/// Mean over sentences of the fraction of same-sign attribution carried by
/// each path, for the given sign. Sentences whose same-sign total is zero
/// are skipped.
pub fn signed_shares(table: &[Vec<f64>], sign: Sign) -> Result<(Vec<f64>, usize)> {
    let width = check_table(table, 0)?;
    let pick = |a: f64| match sign {
        Sign::Positive => a.max(0.0),
        Sign::Negative => (-a).max(0.0),
    };
    let mut sums = vec![0.0; width];
    let mut used = 0usize;
    for row in table {
        let total: f64 = row.iter().map(|&a| pick(a)).sum();
        if total == 0.0 {
            continue;
        }
        used += 1;
        for (s, &a) in sums.iter_mut().zip(row) {
            *s += pick(a) / total;
        }
    }
    if used == 0 {
        return Err(Error::Empty("every sentence has zero same-sign attribution"));
    }
    sums.iter_mut().for_each(|s| *s /= used as f64);
    Ok((sums, table.len() - used))
}

/// Share of `target`, tagged by the sign of its mean attribution.
pub fn share(table: &[Vec<f64>], target: usize) -> Result<Share> {
    check_table(table, target)?;
    let mean = table.iter().map(|r| r[target]).sum::<f64>() / table.len() as f64;
    let sign = if mean > 0.0 { Sign::Positive } else { Sign::Negative };
    let (shares, skipped) = signed_shares(table, sign)?;
    Ok(Share {
        sign,
        value: shares[target],
        skipped,
    })
}

/// Per-neuron t-values; each neuron is compared with every other neuron not
/// in `exclude`.
pub fn neuron_t_values(table: &[Vec<f64>], exclude: &[usize]) -> Result<BTreeMap<usize, f64>> {
    let width = check_table(table, 0)?;
    let mut out = BTreeMap::new();
    for i in 0..width {
        let pool: Vec<usize> = (0..width).filter(|&j| j != i && !exclude.contains(&j)).collect();
        if pool.is_empty() {
            return Err(Error::Empty("exclusion leaves no neuron to compare against"));
        }
        out.insert(i, t_exact_pool(table, i, &pool));
    }
    Ok(out)
}

/// Indices of the `k` largest values, ties broken by lower index.
pub fn top_k(values: &BTreeMap<usize, f64>, k: usize) -> Vec<usize> {
    let mut v: Vec<(usize, f64)> = values.iter().map(|(&i, &t)| (i, t)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.into_iter().take(k).map(|(i, _)| i).collect()
}

/// Fraction of strictly positive values.
pub fn p_plus(totals: &[f64]) -> Result<f64> {
    if totals.is_empty() {
        return Err(Error::Empty("P+ needs at least one sentence"));
    }
    Ok(totals.iter().filter(|&&a| a > 0.0).count() as f64 / totals.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Focus {
    #[serde(rename = "subject")]
    Subject,
    #[serde(rename = "intervening")]
    Intervening,
}

impl Focus {
    pub fn name(self) -> &'static str {
        match self {
            Focus::Subject => "subject",
            Focus::Intervening => "intervening",
        }
    }
}

/// One row of the path-analysis table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: TaskKind,
    pub condition: Condition,
    pub focus: Focus,
    pub p_plus: f64,
    pub num_paths: u64,
    pub primary_share: Share,
    pub primary_t: f64,
    /// Mean primary-path attribution over sentences.
    pub primary_mean: f64,
    /// Whether the primary path has the largest +Share of all paths.
    pub primary_top_share: bool,
    pub neuron_t: BTreeMap<usize, f64>,
    pub top_neurons: Vec<usize>,
    /// t-value of each top neuron with the other top neuron left out of its pool.
    pub top_neuron_t: Vec<f64>,
    pub sentences: usize,
    pub k_steps: usize,
    pub t_seed: u64,
    pub t_samples: usize,
    pub t_exact: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dominant_path_has_t_one() {
        let table = vec![vec![5.0, 1.0, -2.0], vec![3.0, 2.9, 0.0]];
        assert_eq!(t_value_exact(&table, 0).unwrap(), 1.0);
        assert_eq!(t_value_sampled(&table, 0, 3, 1000).unwrap(), 1.0);
    }

    #[test]
    fn ties_count_against_target() {
        let table = vec![vec![1.0, 1.0, 0.0]];
        assert_eq!(t_value_exact(&table, 0).unwrap(), 0.5);
    }

    #[test]
    fn single_path_share_is_one() {
        let table = vec![vec![0.3], vec![1.2]];
        let s = share(&table, 0).unwrap();
        assert_eq!(s.sign, Sign::Positive);
        assert_eq!(s.value, 1.0);
        assert_eq!(s.skipped, 0);
    }

    #[test]
    fn positive_shares_normalize_per_sentence() {
        let table = vec![vec![0.5, -0.2, 0.25, 0.25]];
        let (shares, _) = signed_shares(&table, Sign::Positive).unwrap();
        assert!((shares.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(shares[1], 0.0);
    }

    #[test]
    fn negative_path_gets_negative_tag() {
        let table = vec![vec![-3.0, -1.0, 2.0], vec![-1.0, -1.0, 1.0]];
        let s = share(&table, 0).unwrap();
        assert_eq!(s.sign, Sign::Negative);
        assert!((s.value - 0.625).abs() < 1e-15);
        assert_eq!(s.signed(), -s.value);
    }

    #[test]
    fn all_zero_sentences_error() {
        assert!(share(&[vec![0.0, 0.0]], 0).is_err());
        assert!(share(&[], 0).is_err());
    }

    #[test]
    fn zero_neuron_never_beats_positive() {
        let table = vec![vec![0.0, 1.0, 2.0], vec![0.0, 0.5, -1.0]];
        let t = neuron_t_values(&table, &[]).unwrap();
        assert!(t[&0] <= 0.5);
        assert!(neuron_t_values(&table, &[1, 2]).is_err());
    }

    #[test]
    fn exclusion_of_dominator_does_not_lower_runner_up() {
        let table = vec![vec![9.0, 4.0, 1.0, 0.5], vec![8.0, 5.0, 6.0, 0.1]];
        let before = neuron_t_values(&table, &[]).unwrap()[&1];
        let after = neuron_t_values(&table, &[0]).unwrap()[&1];
        assert!(after >= before);
        let t = neuron_t_values(&table, &[]).unwrap();
        assert_eq!(top_k(&t, 2), vec![0, 1]);
    }

    #[test]
    fn p_plus_counts_strict_positives() {
        assert_eq!(p_plus(&[1.0, -1.0, 0.0, 2.0]).unwrap(), 0.5);
        let table = [1.0, -1.0, -2.0, -3.0];
        let neg: Vec<f64> = table.iter().map(|a| -a).collect();
        assert_eq!(p_plus(&neg).unwrap(), 1.0 - p_plus(&table).unwrap());
        assert!(p_plus(&[]).is_err());
    }
}
