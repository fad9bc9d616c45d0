//! Summary statistics and the nonparametric tests used by the analyses.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal, StudentsT};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    compensated_sum(xs.iter().copied()) / xs.len() as f64
}

/// Neumaier-compensated sum.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolation quantile (Hyndman-Fan type 7) of unsorted data.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    quantile_sorted(&sorted(xs), q)
}

pub fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    assert!(!v.is_empty(), "quantile of empty sample");
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    let v = sorted(xs);
    let n = v.len();
    assert!(n > 0, "median of empty sample");
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Pearson correlation; `None` when either sample has zero variance or the
/// lengths differ or fewer than two points are given.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    TwoSided,
    /// Location of the differences is above zero.
    Greater,
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub d: f64,
    pub p: f64,
}

/// Two-sample Kolmogorov-Smirnov statistic with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    assert!(!a.is_empty() && !b.is_empty(), "KS needs non-empty samples");
    let a = sorted(a);
    let b = sorted(b);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    KsResult {
        d,
        p: kolmogorov_survival(lambda),
    }
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    if lambda < 1.18 {
        // small-lambda form converges faster here
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        let mut cdf = 0.0;
        let mut k = 1;
        loop {
            let term = y.powi(((2 * k - 1) * (2 * k - 1)) as i32);
            cdf += term;
            if term < 1e-17 || k > 100 {
                break;
            }
            k += 1;
        }
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * cdf;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-17 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn nonzero(diffs: &[f64]) -> Vec<f64> {
    diffs.iter().copied().filter(|d| *d != 0.0).collect()
}

const MIN_NONZERO: usize = 6;

/// Exact binomial sign test on the count of positive differences; zeros
/// are dropped.
pub fn sign_test(diffs: &[f64], alternative: Alternative) -> Result<f64> {
    let nz = nonzero(diffs);
    if nz.len() < MIN_NONZERO {
        return Err(Error::InsufficientData(format!(
            "sign test needs {MIN_NONZERO} nonzero differences, got {}",
            nz.len()
        )));
    }
    let n = nz.len() as u64;
    let k = nz.iter().filter(|d| **d > 0.0).count() as u64;
    let binom = Binomial::new(0.5, n).expect("valid binomial");
    let lower = binom.cdf(k);
    let upper = if k == 0 { 1.0 } else { binom.sf(k - 1) };
    Ok(match alternative {
        Alternative::Greater => upper,
        Alternative::Less => lower,
        Alternative::TwoSided => (2.0 * lower.min(upper)).min(1.0),
    })
}

/// Average ranks (1-based) of `xs`, ties sharing the mean rank. Also
/// returns the tie-correction term `sum(t^3 - t)`.
pub fn average_ranks(xs: &[f64]) -> (Vec<f64>, f64) {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    (ranks, ties)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WilcoxonResult {
    pub w_plus: f64,
    pub n: usize,
    pub p: f64,
    pub exact: bool,
}

/// Wilcoxon signed-rank test. Zeros are dropped. Below 20 nonzero
/// differences without ties the exact null distribution is used; otherwise
/// the normal approximation with tie and continuity corrections.
pub fn wilcoxon_signed_rank(diffs: &[f64], alternative: Alternative) -> Result<WilcoxonResult> {
    let nz = nonzero(diffs);
    let n = nz.len();
    if n < MIN_NONZERO {
        return Err(Error::InsufficientData(format!(
            "Wilcoxon test needs {MIN_NONZERO} nonzero differences, got {n}"
        )));
    }
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    let w_plus: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();

    if n < 20 && ties == 0.0 {
        let p = exact_signed_rank_p(n, w_plus.round() as usize, alternative);
        return Ok(WilcoxonResult {
            w_plus,
            n,
            p,
            exact: true,
        });
    }
    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    let sd = var.sqrt();
    let normal = Normal::standard();
    let p = match alternative {
        Alternative::Greater => normal.sf((w_plus - mu - 0.5) / sd),
        Alternative::Less => normal.cdf((w_plus - mu + 0.5) / sd),
        Alternative::TwoSided => {
            let z = ((w_plus - mu).abs() - 0.5).max(0.0) / sd;
            (2.0 * normal.sf(z)).min(1.0)
        }
    };
    Ok(WilcoxonResult {
        w_plus,
        n,
        p,
        exact: false,
    })
}

/// Null distribution of W+ by subset-sum counting.
fn exact_signed_rank_p(n: usize, w: usize, alternative: Alternative) -> f64 {
    let max = n * (n + 1) / 2;
    let mut counts = vec![0f64; max + 1];
    counts[0] = 1.0;
    for r in 1..=n {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    let total = 2f64.powi(n as i32);
    let lower: f64 = counts[..=w].iter().sum::<f64>() / total;
    let upper: f64 = counts[w..].iter().sum::<f64>() / total;
    match alternative {
        Alternative::Greater => upper,
        Alternative::Less => lower,
        Alternative::TwoSided => (2.0 * lower.min(upper)).min(1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationResult {
    pub rho: f64,
    pub p: f64,
    pub dof: usize,
}

/// Partial Pearson correlation between `columns[target.0]` and
/// `columns[target.1]`, controlling linearly (with intercept) for the
/// listed control columns. Two-sided p from Student's t with
/// `n - controls - 2` degrees of freedom.
pub fn partial_pearson(
    columns: &[Vec<f64>],
    target: (usize, usize),
    controls: &[usize],
) -> Result<CorrelationResult> {
    let n = columns.first().map_or(0, Vec::len);
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::InsufficientData("columns differ in length".into()));
    }
    let k = controls.len();
    if n <= k + 2 {
        return Err(Error::InsufficientData(format!(
            "{n} observations for {k} controls, need more than {}",
            k + 2
        )));
    }
    let design = DMatrix::from_fn(n, k + 1, |i, j| if j == 0 { 1.0 } else { columns[controls[j - 1]][i] });
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|s| **s > smax * 1e-10 * n as f64)
        .count();
    if rank < k + 1 {
        return Err(Error::SingularControls);
    }
    let residual = |col: &[f64]| -> Result<DVector<f64>> {
        let y = DVector::from_column_slice(col);
        let beta = svd.solve(&y, smax * 1e-12).map_err(|_| Error::SingularControls)?;
        let r = &y - &design * beta;
        let centered_norm = {
            let m = y.mean();
            y.iter().map(|v| (v - m) * (v - m)).sum::<f64>().sqrt()
        };
        if r.norm() <= 1e-10 * centered_norm.max(f64::MIN_POSITIVE) || centered_norm == 0.0 {
            return Err(Error::SingularControls);
        }
        Ok(r)
    };
    let rx = residual(&columns[target.0])?;
    let ry = residual(&columns[target.1])?;
    let rho = pearson(rx.as_slice(), ry.as_slice()).ok_or(Error::SingularControls)?;
    let dof = n - k - 2;
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (dof as f64 / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, dof as f64).expect("positive dof");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(CorrelationResult { rho, p, dof })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(median(&v), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(median(&[5.0]), 5.0);
    }

    #[test]
    fn compensated_sum_is_accurate() {
        let xs = [1e16, 1.0, -1e16];
        assert_eq!(compensated_sum(xs), 1.0);
    }

    #[test]
    fn ks_examples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_two_sample(&a, &a).d, 0.0);
        assert_eq!(ks_two_sample(&a, &a).p, 1.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[5.0, 6.0]).d, 1.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[1.5]).d, 0.5);
    }

    #[test]
    fn ks_detects_shift() {
        let a: Vec<f64> = (0..200).map(|i| i as f64 / 200.0).collect();
        // offset off the grid so no values tie; 61 of a lie below b's minimum
        let b: Vec<f64> = a.iter().map(|x| x + 0.3025).collect();
        let r = ks_two_sample(&a, &b);
        assert!((r.d - 0.305).abs() < 1e-9, "{}", r.d);
        assert!(r.p < 1e-6);
    }

    #[test]
    fn kolmogorov_branches_agree() {
        // the two series overlap around the switch point
        let y = |l: f64| {
            let mut s = 0.0;
            let mut sign = 1.0;
            for k in 1..200 {
                s += sign * (-2.0 * (k * k) as f64 * l * l).exp();
                sign = -sign;
            }
            2.0 * s
        };
        for l in [0.6, 0.9, 1.1, 1.17, 1.19, 1.5] {
            assert!((kolmogorov_survival(l) - y(l)).abs() < 1e-10, "{l}");
        }
    }

    #[test]
    fn sign_test_extremes() {
        let p = sign_test(&[1.0; 20], Alternative::TwoSided).unwrap();
        assert!((p - 2.0 * 0.5f64.powi(20)).abs() < 1e-15);
        let sym = [1.0, -1.0, 2.0, -2.0, 3.0, -3.0, 4.0, -4.0];
        assert_eq!(sign_test(&sym, Alternative::TwoSided).unwrap(), 1.0);
        assert!(matches!(
            sign_test(&[1.0, 0.0, 0.0, 2.0, 3.0, 4.0, 5.0], Alternative::TwoSided),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn wilcoxon_symmetric_is_one() {
        let sym = [1.0, -1.0, 2.0, -2.0, 3.0, -3.0, 4.0, -4.0];
        let r = wilcoxon_signed_rank(&sym, Alternative::TwoSided).unwrap();
        assert!(r.p > 0.99, "{r:?}");
        let sym: Vec<f64> = (1..=15).flat_map(|i| [i as f64, -(i as f64)]).collect();
        let r = wilcoxon_signed_rank(&sym, Alternative::TwoSided).unwrap();
        assert!(!r.exact);
        assert!(r.p > 0.99, "{r:?}");
    }

    #[test]
    fn wilcoxon_exact_small_sample() {
        // all 6 positive: W+ = 21, P(W+ >= 21) = 1/64
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], Alternative::Greater).unwrap();
        assert!(r.exact);
        assert!((r.p - 1.0 / 64.0).abs() < 1e-15);
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], Alternative::TwoSided).unwrap();
        assert!((r.p - 2.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn ranks_with_ties() {
        let (r, t) = average_ranks(&[2.0, 1.0, 2.0, 3.0]);
        assert_eq!(r, vec![2.5, 1.0, 2.5, 4.0]);
        assert_eq!(t, 6.0);
    }

    #[test]
    fn partial_without_controls_is_pearson() {
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 7.0];
        let y = vec![2.0, 1.0, 4.0, 3.0, 7.0, 5.0];
        let r = partial_pearson(&[x.clone(), y.clone()], (0, 1), &[]).unwrap();
        assert!((r.rho - pearson(&x, &y).unwrap()).abs() < 1e-12);
        assert_eq!(r.dof, 4);
        assert!(r.p > 0.0 && r.p < 1.0);
    }

    #[test]
    fn partial_singular_when_target_is_control_function() {
        let z = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let x = vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0];
        let y: Vec<f64> = z.iter().map(|v| 2.0 * v - 1.0).collect();
        assert!(matches!(
            partial_pearson(&[x, y, z], (0, 1), &[2]),
            Err(Error::SingularControls)
        ));
    }
}
