//! Monotone least-squares smoothing by pool-adjacent-violators.

/// Projects `values` onto the cone of non-increasing sequences in the
/// least-squares sense. Runs in O(n) using a block stack.
pub fn decreasing_pava(values: &[f64]) -> Vec<f64> {
    // (mean, count) blocks; merge while a block exceeds its predecessor.
    let mut means: Vec<f64> = Vec::with_capacity(values.len());
    let mut counts: Vec<usize> = Vec::with_capacity(values.len());
    for &v in values {
        means.push(v);
        counts.push(1);
        while means.len() > 1 {
            let last = means.len() - 1;
            if means[last - 1] >= means[last] {
                break;
            }
            let merged_count = counts[last - 1] + counts[last];
            let merged_mean = (means[last - 1] * counts[last - 1] as f64
                + means[last] * counts[last] as f64)
                / merged_count as f64;
            means.truncate(last);
            counts.truncate(last);
            means[last - 1] = merged_mean;
            counts[last - 1] = merged_count;
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for (mean, count) in means.iter().zip(&counts) {
        out.extend(std::iter::repeat_n(*mean, *count));
    }
    out
}
