//! Scalar helpers on top of `libm`, since `core` has no float intrinsics.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

/// `log Σ exp(x_k)` with max subtraction. Returns `-inf` for an empty slice.
pub fn logsumexp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = xs.into_iter().map(|x| exp(x - max)).sum();
    max + ln(s)
}

pub fn norm2(v: &[f64]) -> f64 {
    sqrt(v.iter().map(|x| x * x).sum())
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| f64::max(m, x.abs()))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_matches_naive_and_survives_large_negatives() {
        let xs = [0.1, -0.3, 1.2];
        let naive = ln(xs.iter().map(|&x| exp(x)).sum());
        assert!((logsumexp(xs) - naive).abs() < 1e-14);
        let tiny = [-1000.0, -1000.0];
        assert!((logsumexp(tiny) - (-1000.0 + ln(2.0))).abs() < 1e-12);
        assert_eq!(logsumexp([] as [f64; 0]), f64::NEG_INFINITY);
    }
}
