//! Rolling means and cross-seed quantiles.

pub const WINDOW: usize = 100;

/// Mean of the last `window` values at every position (shorter at the start).
pub fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

pub fn band(values: &[f64]) -> Band {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Band {
        median: quantile_sorted(&v, 0.5),
        q25: quantile_sorted(&v, 0.25),
        q75: quantile_sorted(&v, 0.75),
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| band(values).median)
}

/// Per-episode median and interquartile band across seeds. Series may have
/// different lengths; each row uses the seeds that reached that episode.
pub fn aggregate(series: &[Vec<f64>]) -> Vec<Band> {
    let len = series.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            let col: Vec<f64> = series.iter().filter_map(|s| s.get(i).copied()).collect();
            band(&col)
        })
        .collect()
}

/// First 1-based episode whose full-window rolling mean reaches `threshold`.
pub fn first_reaching(rolling: &[f64], window: usize, threshold: f64) -> Option<usize> {
    rolling
        .iter()
        .enumerate()
        .skip(window.saturating_sub(1))
        .find(|(_, &r)| r >= threshold)
        .map(|(i, _)| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rolling_constant() {
        let r = rolling_mean(&[2.5; 250], WINDOW);
        assert!(r.iter().all(|&x| (x - 2.5).abs() < 1e-12));
    }

    #[test]
    fn rolling_window_edges() {
        let v: Vec<f64> = (1..=5).map(f64::from).collect();
        assert_eq!(rolling_mean(&v, 2), vec![1.0, 1.5, 2.5, 3.5, 4.5]);
    }

    #[test]
    fn identical_seeds_have_zero_iqr() {
        let s = vec![vec![1.0, 2.0, 3.0]; 4];
        for b in aggregate(&s) {
            assert_eq!(b.q25, b.q75);
        }
    }

    #[test]
    fn quartiles() {
        let b = band(&[4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!((b.q25, b.median, b.q75), (2.0, 3.0, 4.0));
        assert_eq!(median(&[1.0, 2.0]), Some(1.5));
    }

    #[test]
    fn threshold_needs_full_window() {
        let mut v = vec![1.0; 3];
        v.extend([0.0; 3]);
        assert_eq!(first_reaching(&v, 3, 0.9), Some(3));
        assert_eq!(first_reaching(&[1.0, 1.0], 3, 0.9), None);
    }
}
