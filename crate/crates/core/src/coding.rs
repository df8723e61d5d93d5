//! Survey categorization of latent counts and the outcome codings compared by
//! the simulator.

use crate::matrix::CountMatrix;

/// Number of response categories: never, once, a few times (2-4), many times (5+).
pub const N_CATEGORIES: usize = 4;

/// Highest category score.
pub const MAX_CATEGORY: u8 = 3;

/// `0 -> 0`, `1 -> 1`, `2..=4 -> 2`, `5.. -> 3`.
pub fn categorize(y: u64) -> u8 {
    match y {
        0 => 0,
        1 => 1,
        2..=4 => 2,
        _ => 3,
    }
}

/// Inclusive latent-count interval of a category; `None` as upper bound means unbounded.
pub fn category_interval(category: u8) -> (u64, Option<u64>) {
    match category {
        0 => (0, Some(0)),
        1 => (1, Some(1)),
        2 => (2, Some(4)),
        _ => (5, None),
    }
}

/// 1 if any act was reported, else 0.
pub fn code_binary(categories: &[u8]) -> u8 {
    u8::from(categories.iter().any(|&c| c > 0))
}

/// Sum of category scores divided by the maximum possible score `3K`.
pub fn code_sum(categories: &[u8]) -> f64 {
    if categories.is_empty() {
        return 0.0;
    }
    let total: u32 = categories.iter().map(|&c| u32::from(c)).sum();
    f64::from(total) / (f64::from(MAX_CATEGORY) * categories.len() as f64)
}

/// Straus chronicity: the normalized sum among respondents reporting any act,
/// undefined otherwise. Not part of the default reports.
pub fn code_chronicity(categories: &[u8]) -> Option<f64> {
    (code_binary(categories) == 1).then(|| code_sum(categories))
}

/// Both codings for every row of a latent count matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CodedOutcomes {
    pub binary: Vec<f64>,
    pub sum: Vec<f64>,
}

impl CodedOutcomes {
    pub fn from_latent(counts: &CountMatrix) -> Self {
        let mut binary = Vec::with_capacity(counts.n_rows());
        let mut sum = Vec::with_capacity(counts.n_rows());
        let mut cats = vec![0u8; counts.n_cols()];
        for row in counts.rows() {
            for (c, &y) in cats.iter_mut().zip(row) {
                *c = categorize(u64::from(y));
            }
            binary.push(f64::from(code_binary(&cats)));
            sum.push(code_sum(&cats));
        }
        Self { binary, sum }
    }
}
