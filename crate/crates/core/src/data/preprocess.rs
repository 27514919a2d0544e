use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Table};

/// Fitted per-column shift and scale; `x -> (x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ScalerParams {
    pub fn apply(&self, table: &Table) -> Result<Table, DataError> {
        if table.n_features() != self.mean.len() {
            return Err(DataError::LengthMismatch(table.n_features(), self.mean.len()));
        }
        let cols = table
            .columns()
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(c, (&m, &s))| c.iter().map(|&x| (x - m) / s).collect())
            .collect();
        table.with_columns(cols)
    }
}

/// Standardizes columns with the population (ddof 0) standard deviation.
/// Zero-variance columns are left untouched.
pub fn standard_scaler(table: &Table, with_mean: bool, with_std: bool) -> (Table, ScalerParams) {
    let mut params = ScalerParams { mean: Vec::new(), scale: Vec::new() };
    for col in table.columns() {
        let n = col.len() as f64;
        let mean = if col.is_empty() { 0.0 } else { col.iter().sum::<f64>() / n };
        let var = if col.is_empty() { 0.0 } else { col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n };
        let std = libm::sqrt(var);
        if std == 0.0 {
            params.mean.push(0.0);
            params.scale.push(1.0);
            continue;
        }
        params.mean.push(if with_mean { mean } else { 0.0 });
        params.scale.push(if with_std { std } else { 1.0 });
    }
    let scaled = params.apply(table).expect("params fitted on this table");
    (scaled, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormAxis {
    Row,
    Column,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    L2,
    Max,
}

impl NormKind {
    fn of<'a>(self, v: impl Iterator<Item = &'a f64>) -> f64 {
        match self {
            NormKind::L1 => v.map(|x| libm::fabs(*x)).sum(),
            NormKind::L2 => libm::sqrt(v.map(|x| x * x).sum()),
            NormKind::Max => v.map(|x| libm::fabs(*x)).fold(0.0, f64::max),
        }
    }
}

/// Column norms fitted by [`normalization`]; empty for row normalization,
/// which needs no state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub axis: NormAxis,
    pub norm: NormKind,
    pub column_norms: Vec<f64>,
}

impl NormParams {
    pub fn apply(&self, table: &Table) -> Result<Table, DataError> {
        let cols = match self.axis {
            NormAxis::Column => {
                if table.n_features() != self.column_norms.len() {
                    return Err(DataError::LengthMismatch(table.n_features(), self.column_norms.len()));
                }
                table
                    .columns()
                    .iter()
                    .zip(&self.column_norms)
                    .map(|(c, &z)| if z == 0.0 { c.clone() } else { c.iter().map(|x| x / z).collect() })
                    .collect()
            }
            NormAxis::Row => {
                let mut cols: Vec<Vec<f64>> = table.columns().to_vec();
                for i in 0..table.n_rows() {
                    let z = self.norm.of(table.columns().iter().map(|c| &c[i]));
                    if z != 0.0 {
                        for c in &mut cols {
                            c[i] /= z;
                        }
                    }
                }
                cols
            }
        };
        table.with_columns(cols)
    }
}

/// Divides each row or column by its norm; zero vectors are unchanged.
pub fn normalization(table: &Table, axis: NormAxis, norm: NormKind) -> (Table, NormParams) {
    let column_norms = match axis {
        NormAxis::Column => table.columns().iter().map(|c| norm.of(c.iter())).collect(),
        NormAxis::Row => Vec::new(),
    };
    let params = NormParams { axis, norm, column_norms };
    let out = params.apply(table).expect("params fitted on this table");
    (out, params)
}

/// Seeded shuffle, then the first `round(ratio * n)` indices form the train
/// side. Both sides keep the original row order.
pub fn data_split(table: &Table, train_ratio: f64, seed: u64) -> Result<(Table, Table), DataError> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(DataError::InvalidRatio(train_ratio));
    }
    let n = table.n_rows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let n_train = libm::round(train_ratio * n as f64) as usize;
    if n_train == 0 || n_train >= n {
        return Err(DataError::EmptySplit);
    }
    let (train, valid) = idx.split_at_mut(n_train);
    train.sort_unstable();
    valid.sort_unstable();
    Ok((table.select_rows(train), table.select_rows(valid)))
}
