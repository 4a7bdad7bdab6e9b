/// Number of clusters suggested by the largest gap among the first
/// `max_k + 1` eigenvalues: the 1-based `i` maximizing `λ_{i+1} − λ_i`,
/// with ties going to the smaller `i`. `max_k` is clamped to one less than
/// the number of eigenvalues.
pub fn eigengap_estimate(eigenvalues: &[f64], max_k: usize) -> usize {
    let max_k = max_k.min(eigenvalues.len().saturating_sub(1));
    if max_k == 0 {
        return 1;
    }
    let mut best = 1;
    let mut best_gap = eigenvalues[1] - eigenvalues[0];
    for i in 2..=max_k {
        let gap = eigenvalues[i] - eigenvalues[i - 1];
        // ignore rounding noise so equal gaps keep the smaller index
        if gap > best_gap + 1e-12 * best_gap.abs().max(1.0) {
            best = i;
            best_gap = gap;
        }
    }
    best
}

/// The successive differences `λ_{i+1} − λ_i`.
pub fn gaps(eigenvalues: &[f64]) -> Vec<f64> {
    eigenvalues.windows(2).map(|w| w[1] - w[0]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_zeros_then_jump() {
        assert_eq!(eigengap_estimate(&[0.0, 0.0, 0.0, 0.0, 0.6, 0.7, 0.75, 0.8], 6), 4);
    }

    #[test]
    fn linear_spectrum_picks_first() {
        let e: Vec<f64> = (1..=10).map(|i| i as f64 * 0.1).collect();
        assert_eq!(eigengap_estimate(&e, 8), 1);
    }

    #[test]
    fn first_gap_largest() {
        assert_eq!(eigengap_estimate(&[0.0, 0.5, 0.51, 0.52], 3), 1);
    }

    #[test]
    fn max_k_limits_search() {
        let e = [0.0, 0.01, 0.02, 0.03, 0.9];
        assert_eq!(eigengap_estimate(&e, 4), 4);
        assert_eq!(eigengap_estimate(&e, 2), 1);
        assert_eq!(eigengap_estimate(&e, 99), 4);
    }
}
