const BARS: [char; 8] = ['▁', '▂', '▃', '▄', '▅', '▆', '▇', '█'];

/// Bucket means of `values` drawn as `width` bars, on a log scale when every value is positive.
pub fn sparkline(values: &[f64], width: usize) -> String {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || width == 0 {
        return String::new();
    }
    let log = finite.iter().all(|&v| v > 0.0);
    let scale = |v: f64| if log { v.log10() } else { v };
    let buckets = width.min(finite.len());
    let means: Vec<f64> = (0..buckets)
        .map(|b| {
            let lo = b * finite.len() / buckets;
            let hi = (b + 1) * finite.len() / buckets;
            scale(finite[lo..hi].iter().sum::<f64>() / (hi - lo) as f64)
        })
        .collect();
    let min = means.iter().copied().fold(f64::INFINITY, f64::min);
    let max = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    means
        .iter()
        .map(|&m| {
            if max == min {
                BARS[3]
            } else {
                BARS[(((m - min) / (max - min)) * 7.0).round() as usize]
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramps_and_flat_lines() {
        assert_eq!(
            sparkline(&[1.0, 10.0, 100.0, 1000.0, 1e4, 1e5, 1e6, 1e7], 8),
            "▁▂▃▄▅▆▇█"
        );
        assert_eq!(sparkline(&[2.0; 5], 3).chars().count(), 3);
        assert_eq!(sparkline(&[], 3), "");
        assert_eq!(sparkline(&[0.0, 1.0], 10).chars().count(), 2);
    }
}
