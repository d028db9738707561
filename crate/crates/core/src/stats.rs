//! Summary statistics shared by the experiment modules.

use alloc::vec::Vec;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    libm::sqrt(mean(&xs.iter().map(|x| (x - m) * (x - m)).collect::<Vec<_>>()))
}

/// Sample standard deviation (n − 1 denominator).
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    libm::sqrt(ss / (xs.len() - 1) as f64)
}

/// Excess kurtosis `m4 / m2² − 3` (population moments); 0 for constant input.
pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let m2 = mean(&xs.iter().map(|x| (x - m) * (x - m)).collect::<Vec<_>>());
    if m2 == 0.0 {
        return 0.0;
    }
    let m4 = mean(&xs.iter().map(|x| { let d = (x - m) * (x - m); d * d }).collect::<Vec<_>>());
    m4 / (m2 * m2) - 3.0
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Normal-approximation 95% confidence interval for a mean.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeanCi {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl MeanCi {
    pub fn of(xs: &[f64]) -> Self {
        let m = mean(xs);
        let half = if xs.len() > 1 { Z95 * sample_std(xs) / libm::sqrt(xs.len() as f64) } else { 0.0 };
        Self { mean: m, lo: m - half, hi: m + half, n: xs.len() }
    }

    /// CI of `a_i − b_i`.
    pub fn paired(a: &[f64], b: &[f64]) -> Self {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        Self::of(&d)
    }

    /// Whether `value` lies in the interval widened by `floor` on each side.
    pub fn contains(&self, value: f64, floor: f64) -> bool {
        self.lo - floor <= value && value <= self.hi + floor
    }
}

/// Ordinary least-squares line `y = slope·x + intercept` with its r².
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(xs), mean(ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some((slope, intercept, r2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((std_dev(&xs) - libm::sqrt(1.25)).abs() < 1e-15);
        assert_eq!(median(&xs), Some(2.5));
        assert_eq!(excess_kurtosis(&[2.0, 2.0]), 0.0);
        // Two-point symmetric distribution has kurtosis 1.
        assert!((excess_kurtosis(&[-1.0, 1.0, -1.0, 1.0]) + 2.0).abs() < 1e-15);
    }

    #[test]
    fn fit_line() {
        let xs = vec![0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        let (s, i, r2) = linear_fit(&xs, &ys).unwrap();
        assert!((s - 2.0).abs() < 1e-15 && (i + 1.0).abs() < 1e-15 && r2 == 1.0);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }

    #[test]
    fn ci_contains_zero_for_identical_arms() {
        let a = [0.3, 0.5, 0.1];
        let ci = MeanCi::paired(&a, &a);
        assert!(ci.contains(0.0, 0.0));
    }
}
