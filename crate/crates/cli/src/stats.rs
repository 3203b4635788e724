//! Error and timing summaries.

use std::time::Instant;

/// Largest absolute difference over `1 + max |reference|`.
pub fn rel_err(a: &[f32], reference: &[f32]) -> f64 {
    let diff = a
        .iter()
        .zip(reference)
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .fold(0.0, f64::max);
    let norm = reference.iter().map(|&y| (y as f64).abs()).fold(0.0, f64::max);
    diff / (1.0 + norm)
}

const WARMUP: usize = 2;

/// Calls per second for each of `repeats` timed runs, after two warm-ups.
pub fn rates<E>(repeats: usize, mut f: impl FnMut() -> Result<(), E>) -> Result<Vec<f64>, E> {
    for _ in 0..WARMUP {
        f()?;
    }
    let mut out = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        f()?;
        out.push(1.0 / t.elapsed().as_secs_f64().max(1e-9));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub median: f64,
    pub iqr: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Median and interquartile range (linear interpolation). `v` must be non-empty.
pub fn summary(v: &[f64]) -> Summary {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    Summary {
        median: quantile(&s, 0.5),
        iqr: quantile(&s, 0.75) - quantile(&s, 0.25),
    }
}
