//! Descriptive statistics used by the native tools.

pub fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v)?;
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (v.len() - 1) as f64).sqrt())
}

/// Population variance (n denominator).
pub fn population_variance(v: &[f64]) -> Option<f64> {
    let m = mean(v)?;
    Some(v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64)
}

pub fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Quantile by linear interpolation between closest ranks:
/// h = (n - 1) p, q = x[floor h] + (h - floor h)(x[floor h + 1] - x[floor h]).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() || !(0.0..=1.0).contains(&p) {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn quantile(v: &[f64], p: f64) -> Option<f64> {
    quantile_sorted(&sorted(v), p)
}

pub fn median(v: &[f64]) -> Option<f64> {
    quantile(v, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

pub fn quartiles(v: &[f64]) -> Option<Quartiles> {
    let s = sorted(v);
    Some(Quartiles { q1: quantile_sorted(&s, 0.25)?, median: quantile_sorted(&s, 0.5)?, q3: quantile_sorted(&s, 0.75)? })
}

/// Tukey fences at 1.5 IQR.
pub fn iqr_bounds(v: &[f64]) -> Option<(f64, f64)> {
    let q = quartiles(v)?;
    let iqr = q.q3 - q.q1;
    Some((q.q1 - 1.5 * iqr, q.q3 + 1.5 * iqr))
}

pub fn outlier_count(v: &[f64]) -> usize {
    match iqr_bounds(v) {
        Some((lo, hi)) => v.iter().filter(|x| **x < lo || **x > hi).count(),
        None => 0,
    }
}

/// Sample skewness (moment estimator, g1).
pub fn skewness(v: &[f64]) -> Option<f64> {
    let m = mean(v)?;
    let n = v.len() as f64;
    let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    if m2 == 0.0 {
        return None;
    }
    let m3 = v.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    Some(m3 / m2.powf(1.5))
}

/// Excess kurtosis (moment estimator, g2).
pub fn excess_kurtosis(v: &[f64]) -> Option<f64> {
    let m = mean(v)?;
    let n = v.len() as f64;
    let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    if m2 == 0.0 {
        return None;
    }
    let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    Some(m4 / (m2 * m2) - 3.0)
}

/// Normality heuristic: |skew| < 1 and |excess kurtosis| < 2 with at least
/// 8 values and more than 5 distinct values.
pub fn looks_normal(v: &[f64]) -> bool {
    if v.len() < 8 {
        return false;
    }
    let mut s = sorted(v);
    s.dedup();
    if s.len() <= 5 {
        return false;
    }
    match (skewness(v), excess_kurtosis(v)) {
        (Some(sk), Some(ku)) => sk.abs() < 1.0 && ku.abs() < 2.0,
        _ => false,
    }
}

/// Ranks (1-based) with ties given their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let mx = mean(x)?;
    let my = mean(y)?;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Spearman correlation over rows where both values are present.
pub fn spearman_pairwise(x: &[Option<f64>], y: &[Option<f64>]) -> Option<(f64, usize)> {
    let (a, b): (Vec<f64>, Vec<f64>) = x.iter().zip(y).filter_map(|(a, b)| Some(((*a)?, (*b)?))).unzip();
    if a.len() < 3 {
        return None;
    }
    spearman(&a, &b).map(|r| (r, a.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_of_one_to_five() {
        let q = quartiles(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (2.0, 3.0, 4.0));
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.25), Some(1.75));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn perfect_rank_correlation() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v * v).collect();
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sample_sd_known() {
        assert!((sample_sd(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap() - 2.138089935299395).abs() < 1e-12);
    }
}
