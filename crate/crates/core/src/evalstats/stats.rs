//! Repeated-measures and nonparametric tests on `users × modes` matrices.
//!
//! Matrices are row-major slices of rows: one row per user (subject), one
//! column per condition.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal, StudentsT};

use crate::error::StatsError;

/// Largest number of non-zero differences for which the Wilcoxon test uses
/// its exact permutation distribution.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

pub fn standard_error(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    sample_sd(xs) / (xs.len() as f64).sqrt()
}

fn check_matrix(data: &[Vec<f64>], min_rows: usize, min_cols: usize) -> Result<(usize, usize), StatsError> {
    let n = data.len();
    if n < min_rows {
        return Err(StatsError::InvalidInput(format!("need at least {min_rows} users, got {n}")));
    }
    let k = data[0].len();
    if k < min_cols {
        return Err(StatsError::InvalidInput(format!("need at least {min_cols} conditions, got {k}")));
    }
    if let Some(i) = data.iter().position(|r| r.len() != k) {
        return Err(StatsError::InvalidInput(format!("row {i} has {} cells, expected {k}", data[i].len())));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(StatsError::InvalidInput("matrix contains missing or non-finite cells".into()));
    }
    Ok((n, k))
}

fn column(data: &[Vec<f64>], j: usize) -> Vec<f64> {
    data.iter().map(|r| r[j]).collect()
}

/// Upper-tail probability of an F statistic; handles the infinite and zero
/// edge cases explicitly.
fn f_sf(f: f64, df1: f64, df2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    FisherSnedecor::new(df1, df2).expect("positive dfs").sf(f)
}

/// One-way repeated-measures ANOVA with Greenhouse–Geisser correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmAnovaResult {
    pub n_subjects: usize,
    pub n_conditions: usize,
    pub ss_conditions: f64,
    pub ss_subjects: f64,
    pub ss_error: f64,
    pub ss_total: f64,
    pub f: f64,
    pub df_conditions: f64,
    pub df_error: f64,
    pub p_uncorrected: f64,
    /// Greenhouse–Geisser epsilon, in `[1/(k-1), 1]`.
    pub epsilon_gg: f64,
    pub df_conditions_gg: f64,
    pub df_error_gg: f64,
    pub p_gg: f64,
}

pub fn rm_anova_gg(data: &[Vec<f64>]) -> Result<RmAnovaResult, StatsError> {
    let (n, k) = check_matrix(data, 3, 2)?;
    let (nf, kf) = (n as f64, k as f64);
    let grand = data.iter().flatten().sum::<f64>() / (nf * kf);
    let row_means: Vec<f64> = data.iter().map(|r| mean(r)).collect();
    let col_means: Vec<f64> = (0..k).map(|j| mean(&column(data, j))).collect();

    let ss_total: f64 = data.iter().flatten().map(|x| (x - grand).powi(2)).sum();
    let ss_subjects = kf * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_conditions = nf * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    // Interaction residuals summed directly rather than by subtraction, so a
    // perfectly additive matrix gives an exact zero.
    let ss_error: f64 = data
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, x)| (i, j, *x)))
        .map(|(i, j, x)| (x - row_means[i] - col_means[j] + grand).powi(2))
        .sum();

    let scale = ss_total.max(f64::MIN_POSITIVE);
    let tiny = |v: f64| v <= 1e-24 * scale || v == 0.0;
    if ss_total == 0.0 {
        return Err(StatsError::Degenerate("all cells are equal".into()));
    }

    let df_conditions = kf - 1.0;
    let df_error = (nf - 1.0) * (kf - 1.0);
    let (f, p_uncorrected) = match (tiny(ss_conditions), tiny(ss_error)) {
        (true, _) => (0.0, 1.0),
        (false, true) => (f64::INFINITY, 0.0),
        (false, false) => {
            let f = (ss_conditions / df_conditions) / (ss_error / df_error);
            (f, f_sf(f, df_conditions, df_error))
        }
    };

    let epsilon_gg = greenhouse_geisser_epsilon(data);
    let df_conditions_gg = epsilon_gg * df_conditions;
    let df_error_gg = epsilon_gg * df_error;
    let p_gg = if f == 0.0 {
        1.0
    } else if f.is_infinite() {
        0.0
    } else {
        f_sf(f, df_conditions_gg, df_error_gg)
    };

    Ok(RmAnovaResult {
        n_subjects: n,
        n_conditions: k,
        ss_conditions,
        ss_subjects,
        ss_error,
        ss_total,
        f,
        df_conditions,
        df_error,
        p_uncorrected,
        epsilon_gg,
        df_conditions_gg,
        df_error_gg,
        p_gg,
    })
}

/// Greenhouse–Geisser epsilon from the sample covariance `S` of the
/// conditions. With `D = double-centered S`:
///
/// ```text
/// epsilon = (sum_i D_ii)^2 / ((k - 1) * sum_ij D_ij^2)
/// D_ij = S_ij - mean_row_i(S) - mean_col_j(S) + mean(S)
/// ```
///
/// Clamped to `[1/(k-1), 1]`; returns 1 when the covariance is zero.
pub fn greenhouse_geisser_epsilon(data: &[Vec<f64>]) -> f64 {
    let n = data.len();
    let k = data.first().map_or(0, Vec::len);
    if k < 2 || n < 2 {
        return 1.0;
    }
    let col_means: Vec<f64> = (0..k).map(|j| mean(&column(data, j))).collect();
    let mut s = vec![vec![0.0; k]; k];
    for (a, row) in s.iter_mut().enumerate() {
        for (b, cell) in row.iter_mut().enumerate() {
            *cell = data.iter().map(|r| (r[a] - col_means[a]) * (r[b] - col_means[b])).sum::<f64>() / (n as f64 - 1.0);
        }
    }
    let kf = k as f64;
    let row_mean: Vec<f64> = s.iter().map(|r| mean(r)).collect();
    let col_mean: Vec<f64> = (0..k).map(|j| s.iter().map(|r| r[j]).sum::<f64>() / kf).collect();
    let all_mean = row_mean.iter().sum::<f64>() / kf;
    let mut trace = 0.0;
    let mut sum_sq = 0.0;
    for a in 0..k {
        for b in 0..k {
            let d = s[a][b] - row_mean[a] - col_mean[b] + all_mean;
            if a == b {
                trace += d;
            }
            sum_sq += d * d;
        }
    }
    if !(sum_sq > 0.0) {
        return 1.0;
    }
    let eps = trace * trace / ((kf - 1.0) * sum_sq);
    eps.clamp(1.0 / (kf - 1.0), 1.0)
}

/// Between-groups one-way ANOVA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneWayAnovaResult {
    pub ss_between: f64,
    pub ss_within: f64,
    pub f: f64,
    pub df_between: f64,
    pub df_within: f64,
    pub p: f64,
}

pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<OneWayAnovaResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::InvalidInput("need at least two groups".into()));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(StatsError::InvalidInput("empty group".into()));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(StatsError::InvalidInput("non-finite observation".into()));
    }
    let n_total: usize = groups.iter().map(Vec::len).sum();
    let k = groups.len();
    if n_total <= k {
        return Err(StatsError::InvalidInput("need more observations than groups".into()));
    }
    let grand = groups.iter().flatten().sum::<f64>() / n_total as f64;
    let ss_between: f64 = groups.iter().map(|g| g.len() as f64 * (mean(g) - grand).powi(2)).sum();
    let ss_within: f64 = groups
        .iter()
        .map(|g| {
            let m = mean(g);
            g.iter().map(|x| (x - m).powi(2)).sum::<f64>()
        })
        .sum();
    if ss_between == 0.0 && ss_within == 0.0 {
        return Err(StatsError::Degenerate("all observations are equal".into()));
    }
    let df_between = (k - 1) as f64;
    let df_within = (n_total - k) as f64;
    let f = if ss_within == 0.0 { f64::INFINITY } else { (ss_between / df_between) / (ss_within / df_within) };
    Ok(OneWayAnovaResult { ss_between, ss_within, f, df_between, df_within, p: f_sf(f, df_between, df_within) })
}

pub fn bonferroni(raw_p: f64, comparisons: usize) -> f64 {
    (raw_p * comparisons as f64).min(1.0)
}

/// Paired t-test on `a - b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedT {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    /// Two-sided p; `None` when the differences have zero variance.
    pub p: Option<f64>,
    pub zero_variance: bool,
}

pub fn paired_t(a: &[f64], b: &[f64]) -> Result<PairedT, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::InvalidInput(format!("unpaired lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(StatsError::InvalidInput("need at least two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::InvalidInput("non-finite observation".into()));
    }
    let n = d.len();
    let df = (n - 1) as f64;
    let mean_diff = mean(&d);
    let sd = sample_sd(&d);
    if sd == 0.0 {
        let t = if mean_diff == 0.0 { 0.0 } else { mean_diff.signum() * f64::INFINITY };
        return Ok(PairedT { n, mean_diff, t, df, p: None, zero_variance: true });
    }
    let t = mean_diff / (sd / (n as f64).sqrt());
    let p = 2.0 * StudentsT::new(0.0, 1.0, df).expect("df >= 1").sf(t.abs());
    Ok(PairedT { n, mean_diff, t, df, p: Some(p.min(1.0)), zero_variance: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub a: String,
    pub b: String,
    pub test: PairedT,
    pub raw_p: Option<f64>,
    pub corrected_p: Option<f64>,
}

/// Paired t-tests over every pair of columns, Bonferroni-corrected over the
/// number of pairs.
pub fn pairwise_tests(data: &[Vec<f64>], names: &[String]) -> Result<Vec<PairwiseComparison>, StatsError> {
    let (_, k) = check_matrix(data, 2, 2)?;
    if names.len() != k {
        return Err(StatsError::InvalidInput(format!("{} names for {k} conditions", names.len())));
    }
    let m = k * (k - 1) / 2;
    let mut out = Vec::with_capacity(m);
    for i in 0..k {
        for j in i + 1..k {
            let test = paired_t(&column(data, i), &column(data, j))?;
            out.push(PairwiseComparison {
                a: names[i].clone(),
                b: names[j].clone(),
                test,
                raw_p: test.p,
                corrected_p: test.p.map(|p| bonferroni(p, m)),
            });
        }
    }
    Ok(out)
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            ranks[p] = r;
        }
        i = j + 1;
    }
    ranks
}

fn tie_sizes(xs: &[f64]) -> Vec<usize> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        out.push(j - i + 1);
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Friedman {
    pub chi2: f64,
    pub df: f64,
    pub p: f64,
    pub rank_sums: Vec<f64>,
}

/// Friedman test. Values are ranked within each row (so raw scores and
/// rankings both work); ties get midranks and the tie-corrected statistic.
pub fn friedman(data: &[Vec<f64>]) -> Result<Friedman, StatsError> {
    let (n, k) = check_matrix(data, 1, 2)?;
    let (nf, kf) = (n as f64, k as f64);
    let mut rank_sums = vec![0.0; k];
    let mut tie_term = 0.0;
    for row in data {
        for (s, r) in rank_sums.iter_mut().zip(midranks(row)) {
            *s += r;
        }
        tie_term += tie_sizes(row).iter().map(|&t| (t * t * t - t) as f64).sum::<f64>();
    }
    let raw = 12.0 / (nf * kf * (kf + 1.0)) * rank_sums.iter().map(|r| r * r).sum::<f64>() - 3.0 * nf * (kf + 1.0);
    let denom = 1.0 - tie_term / (nf * (kf * kf * kf - kf));
    if denom <= 0.0 {
        return Err(StatsError::Degenerate("every row is fully tied".into()));
    }
    let chi2 = (raw / denom).max(0.0);
    let df = kf - 1.0;
    let p = ChiSquared::new(df).expect("df >= 1").sf(chi2);
    Ok(Friedman { chi2, df, p, rank_sums })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Pairs with a non-zero difference.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub p_two_sided: f64,
    /// `P(W+ <= observed)`: evidence that `a < b`.
    pub p_less: f64,
    /// `P(W+ >= observed)`: evidence that `a > b`.
    pub p_greater: f64,
    pub exact: bool,
}

/// Exact null distribution of `sum(scores of positive signs)` under random
/// sign flips. Scores are non-negative integers; returns probabilities
/// indexed by the sum.
pub fn signed_rank_null_distribution(scores: &[u64]) -> Vec<f64> {
    let total: u64 = scores.iter().sum();
    let mut counts = vec![0.0_f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &s in scores {
        let s = s as usize;
        for v in (0..=reach).rev() {
            if counts[v] != 0.0 {
                counts[v + s] += counts[v];
            }
        }
        reach += s;
    }
    let norm = 2f64.powi(scores.len() as i32);
    counts.iter().map(|c| c / norm).collect()
}

/// Wilcoxon signed-rank test on paired samples. Zero differences are
/// dropped; ties share midranks. Exact (conditional on the ranks) for up to
/// [`WILCOXON_EXACT_MAX_N`] non-zero pairs, normal approximation with
/// continuity and tie correction above.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::InvalidInput(format!("unpaired lengths {} and {}", a.len(), b.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::InvalidInput("non-finite observation".into()));
    }
    let n = d.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            n,
            w_plus: 0.0,
            w_minus: 0.0,
            statistic: 0.0,
            p_two_sided: 1.0,
            p_less: 1.0,
            p_greater: 1.0,
            exact: true,
        });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;

    let (p_less, p_greater, exact) = if n <= WILCOXON_EXACT_MAX_N {
        // Midranks are multiples of 1/2; doubling makes them integers.
        let scores: Vec<u64> = ranks.iter().map(|r| (2.0 * r).round() as u64).collect();
        let dist = signed_rank_null_distribution(&scores);
        let obs = (2.0 * w_plus).round() as usize;
        let le: f64 = dist[..=obs].iter().sum();
        let ge: f64 = dist[obs..].iter().sum();
        (le.min(1.0), ge.min(1.0), true)
    } else {
        let nf = n as f64;
        let ties: f64 = tie_sizes(&abs).iter().map(|&t| (t * t * t - t) as f64).sum();
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
        let mu = total / 2.0;
        let sd = var.sqrt();
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        let p_less = std.cdf((w_plus - mu + 0.5) / sd);
        let p_greater = std.sf((w_plus - mu - 0.5) / sd);
        (p_less, p_greater, false)
    };
    let p_two_sided = (2.0 * p_less.min(p_greater)).min(1.0);
    Ok(WilcoxonResult { n, w_plus, w_minus, statistic: w_plus.min(w_minus), p_two_sided, p_less, p_greater, exact })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseWilcoxon {
    pub a: String,
    pub b: String,
    pub test: WilcoxonResult,
    pub corrected_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanWilcoxon {
    pub friedman: Friedman,
    pub pairwise: Vec<PairwiseWilcoxon>,
}

/// Friedman omnibus plus Bonferroni-corrected pairwise signed-rank tests.
pub fn friedman_wilcoxon(ranks: &[Vec<f64>], names: &[String]) -> Result<FriedmanWilcoxon, StatsError> {
    let (_, k) = check_matrix(ranks, 1, 2)?;
    if names.len() != k {
        return Err(StatsError::InvalidInput(format!("{} names for {k} conditions", names.len())));
    }
    let friedman = friedman(ranks)?;
    let m = k * (k - 1) / 2;
    let mut pairwise = Vec::with_capacity(m);
    for i in 0..k {
        for j in i + 1..k {
            let test = wilcoxon_signed_rank(&column(ranks, i), &column(ranks, j))?;
            let corrected_p = bonferroni(test.p_two_sided, m);
            pairwise.push(PairwiseWilcoxon { a: names[i].clone(), b: names[j].clone(), test, corrected_p });
        }
    }
    Ok(FriedmanWilcoxon { friedman, pairwise })
}
