/// Min-max normalization squeezed into `[epsilon, 1 - epsilon]`.
///
/// A constant column carries no ordering information and maps to 0.5
/// everywhere.
pub fn normalize_column(scores: &[f64], epsilon: f64) -> Vec<f64> {
    let (min, max) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if !(max > min) {
        return vec![0.5; scores.len()];
    }
    let span = max - min;
    let scale = 1.0 - 2.0 * epsilon;
    scores
        .iter()
        .map(|&s| ((s - min) / span * scale + epsilon).clamp(epsilon, 1.0 - epsilon))
        .collect()
}
