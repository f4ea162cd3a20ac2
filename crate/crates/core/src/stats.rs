//! Exact nonparametric tests for paired comparisons, plus precision@k and
//! the counterbalanced assignment of system orders to subjects.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::ids::ImageId;

/// Largest number of nonzero differences handled by the exact distribution.
pub const WILCOXON_EXACT_MAX: usize = 20;

/// Direction of a one-tailed alternative hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "lowercase"))]
pub enum Alternative {
    /// First sample tends to be larger.
    Greater,
    /// First sample tends to be smaller.
    Less,
}

/// `|top-k ∩ relevant| / k`; shorter rankings still divide by `k`.
pub fn precision_at_k(ranked: &[ImageId], relevant: &BTreeSet<ImageId>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let hits = ranked.iter().take(k).filter(|id| relevant.contains(id)).count();
    Ok(hits as f64 / k as f64)
}

/// `count / 2^n` without intermediate overflow.
fn ratio_pow2(count: &BigUint, n: u64) -> f64 {
    let excess = count.bits().saturating_sub(1000);
    let head = (count >> excess).to_f64().unwrap_or(f64::INFINITY);
    libm::scalbn(head, excess as i32 - n as i32)
}

/// Exact sign-test tail as `numerator / 2^n`.
pub fn sign_test_tail(n_plus: u64, n_minus: u64, alternative: Alternative) -> Result<(BigUint, u64)> {
    let n = n_plus + n_minus;
    if n == 0 {
        return Err(Error::DegenerateSample("sign test needs at least one untied pair"));
    }
    let mut c = BigUint::one();
    let mut tail = BigUint::zero();
    for i in 0..=n {
        let in_tail = match alternative {
            Alternative::Greater => i >= n_plus,
            Alternative::Less => i <= n_plus,
        };
        if in_tail {
            tail += &c;
        }
        // C(n, i+1) = C(n, i) * (n - i) / (i + 1)
        c = c * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    Ok((tail, n))
}

/// One-tailed binomial sign test with success probability 1/2.
pub fn fisher_sign_test(n_plus: u64, n_minus: u64, alternative: Alternative) -> Result<f64> {
    let (tail, n) = sign_test_tail(n_plus, n_minus, alternative)?;
    Ok(ratio_pow2(&tail, n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    /// Number of nonzero differences.
    pub m: usize,
    pub p_value: f64,
    pub exact: bool,
}

/// Average ranks of `values` (1-based), doubled so ties stay integral.
pub fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = alloc::vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j share rank ((i+1) + (j+1)) / 2
        let doubled = (i + 1 + j + 1) as u64;
        for &o in &order[i..=j] {
            ranks[o] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Number of sign assignments per doubled positive-rank sum.
fn signed_rank_distribution(doubled: &[u64]) -> Vec<u64> {
    let total: u64 = doubled.iter().sum();
    let mut counts = alloc::vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            let c = counts[s];
            if c != 0 {
                counts[s + r] += c;
            }
        }
        reach += r;
    }
    counts
}

/// Wilcoxon matched-pairs signed-ranks test on `a - b`.
///
/// Zero differences are dropped and tied magnitudes get average ranks. The
/// null distribution is exact for at most [`WILCOXON_EXACT_MAX`] nonzero
/// differences and a tie- and continuity-corrected normal otherwise.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], alternative: Alternative) -> Result<WilcoxonResult> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidArgument(format!("paired samples of lengths {} and {}", a.len(), b.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite difference".into()));
    }
    if d.is_empty() {
        return Err(Error::DegenerateSample("all paired differences are zero"));
    }
    let m = d.len();
    let mags: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let ranks = doubled_ranks(&mags);
    let w2: u64 = ranks.iter().zip(&d).filter(|(_, x)| **x > 0.0).map(|(r, _)| r).sum();
    let w_plus = w2 as f64 / 2.0;

    if m <= WILCOXON_EXACT_MAX {
        let counts = signed_rank_distribution(&ranks);
        let w2 = w2 as usize;
        let tail: u64 = match alternative {
            Alternative::Greater => counts[w2..].iter().sum(),
            Alternative::Less => counts[..=w2].iter().sum(),
        };
        let p = libm::scalbn(tail as f64, -(m as i32));
        return Ok(WilcoxonResult { w_plus, m, p_value: p, exact: true });
    }

    let mf = m as f64;
    let mean = mf * (mf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_unstable();
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|r| **r == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = mf * (mf + 1.0) * (2.0 * mf + 1.0) / 24.0 - tie_term / 48.0;
    let sd = libm::sqrt(var);
    let p = match alternative {
        Alternative::Greater => 0.5 * libm::erfc((w_plus - mean - 0.5) / sd / core::f64::consts::SQRT_2),
        Alternative::Less => 0.5 * libm::erfc(-(w_plus - mean + 0.5) / sd / core::f64::consts::SQRT_2),
    };
    Ok(WilcoxonResult { w_plus, m, p_value: p.clamp(0.0, 1.0), exact: false })
}

/// Three significant figures, rounded upward so a reported p-value is never
/// smaller than the exact one. Values below 1e-4 use exponent notation.
pub fn format_p_value(p: f64) -> String {
    // NaN and non-positive values both print as zero
    if p.is_nan() || p <= 0.0 {
        return String::from("0");
    }
    let mut e = libm::floor(libm::log10(p)) as i32;
    let mut scaled = p * libm::pow(10.0, (2 - e) as f64);
    // guard against log10 landing one decade off
    if scaled >= 1000.0 {
        e += 1;
        scaled /= 10.0;
    } else if scaled < 100.0 {
        e -= 1;
        scaled *= 10.0;
    }
    let mut digits = libm::ceil(scaled * (1.0 - 1e-12));
    if digits >= 1000.0 {
        digits = 100.0;
        e += 1;
    }
    if e < -4 {
        return format!("{}.{:02}e{e}", digits as u32 / 100, digits as u32 % 100);
    }
    let decimals = (2 - e).max(0) as usize;
    let value = digits * libm::pow(10.0, (e - 2) as f64);
    format!("{value:.decimals$}")
}

/// Rows indexed by subject; each row lists 0-based system indices in the
/// order that subject uses them. Group `g` starts at system `g` and cycles.
pub fn counterbalance_plan(n_subjects: usize, n_systems: usize) -> Result<Vec<Vec<usize>>> {
    if n_systems == 0 || n_subjects == 0 || !n_subjects.is_multiple_of(n_systems) {
        return Err(Error::InvalidConfig(format!("{n_subjects} subjects cannot be split evenly over {n_systems} systems")));
    }
    let per_group = n_subjects / n_systems;
    Ok((0..n_subjects)
        .map(|s| {
            let g = s / per_group;
            (0..n_systems).map(|i| (g + i) % n_systems).collect()
        })
        .collect())
}
