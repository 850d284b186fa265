/// `y[t] = Σ_j filter[j] · x[t - dilation·j]`, reading zeros before the start.
///
/// Output `y[t]` depends only on `x[..=t]`.
pub fn dilated_causal_conv(x: &[f64], filter: &[f64], dilation: usize) -> Vec<f64> {
    assert!(dilation >= 1, "dilation must be at least 1");
    (0..x.len())
        .map(|t| {
            filter
                .iter()
                .enumerate()
                .filter_map(|(j, f)| t.checked_sub(dilation * j).map(|s| f * x[s]))
                .sum()
        })
        .collect()
}
