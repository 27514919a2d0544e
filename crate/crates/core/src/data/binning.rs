use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{DataError, Table};

/// Equal-frequency split points for `column`.
///
/// With `v` the sorted finite values and `n = v.len()`, candidate `k` for
/// `k = 1..max_bins` sits at `i = floor(k * n / max_bins)` and yields the
/// midpoint `(v[i-1] + v[i]) / 2` unless `v[i-1] == v[i]`. Duplicates are
/// collapsed, so a constant column yields no splits (one bin).
pub fn equal_frequency_binning(column: &[f64], max_bins: usize) -> Result<Vec<f64>, DataError> {
    if max_bins < 2 {
        return Err(DataError::InvalidMaxBins(max_bins));
    }
    let mut v: Vec<f64> = column.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mut splits: Vec<f64> = Vec::new();
    for k in 1..max_bins {
        let i = k * n / max_bins;
        if i == 0 || i >= n || v[i - 1] == v[i] {
            continue;
        }
        let s = v[i - 1] + (v[i] - v[i - 1]) / 2.0;
        if splits.last().is_none_or(|&last| s > last) {
            splits.push(s);
        }
    }
    Ok(splits)
}

/// Bin of `x`: the number of split points strictly below it, so `x` goes
/// left of a split exactly when `x <= split`.
pub fn bin_index(splits: &[f64], x: f64) -> usize {
    splits.partition_point(|&s| s < x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinMap {
    pub max_bins: usize,
    pub splits: Vec<Vec<f64>>,
}

impl BinMap {
    pub fn fit(table: &Table, max_bins: usize) -> Result<Self, DataError> {
        let splits = table
            .columns()
            .iter()
            .map(|c| equal_frequency_binning(c, max_bins))
            .collect::<Result<_, _>>()?;
        Ok(Self { max_bins, splits })
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.splits[feature].len() + 1
    }

    /// Column-major bin indices.
    pub fn transform(&self, table: &Table) -> Result<Vec<Vec<u32>>, DataError> {
        if table.n_features() != self.splits.len() {
            return Err(DataError::LengthMismatch(table.n_features(), self.splits.len()));
        }
        Ok(table
            .columns()
            .iter()
            .zip(&self.splits)
            .map(|(c, s)| c.iter().map(|&x| bin_index(s, x) as u32).collect())
            .collect())
    }

    /// Upper edge of `bin`; samples with `x <= threshold` fall in bins `0..=bin`.
    pub fn threshold(&self, feature: usize, bin: usize) -> Option<f64> {
        self.splits.get(feature)?.get(bin).copied()
    }
}
