//! Periodogram and sinusoid fitting for trace statistics.

use nalgebra::{Matrix3, Vector3};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// One-sided periodogram of `series` (mean removed) sampled every `dt`.
/// Returns `(frequency, power)` for bins 1..=n/2.
pub fn periodogram(series: &[f64], dt: f64) -> Vec<(f64, f64)> {
    let n = series.len();
    if n < 2 {
        return Vec::new();
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&x| Complex::new(x - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    (1..=n / 2)
        .map(|k| (k as f64 / (n as f64 * dt), buf[k].norm_sqr() / n as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakStats {
    /// Power at the bin nearest `frequency` over the mean of all other bins.
    pub ratio_at: f64,
    /// Frequency of the strongest bin.
    pub dominant_frequency: f64,
}

pub fn peak_stats(series: &[f64], dt: f64, frequency: f64) -> Option<PeakStats> {
    let pg = periodogram(series, dt);
    if pg.len() < 2 {
        return None;
    }
    let target = pg
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 .0 - frequency).abs().total_cmp(&(b.1 .0 - frequency).abs()))?
        .0;
    let others: Vec<f64> = pg
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target)
        .map(|(_, p)| p.1)
        .collect();
    let mean_other = others.iter().sum::<f64>() / others.len() as f64;
    let dominant = pg.iter().max_by(|a, b| a.1.total_cmp(&b.1))?.0;
    Some(PeakStats {
        ratio_at: match (pg[target].1, mean_other) {
            (p, m) if m > 0.0 => p / m,
            (p, _) if p > 0.0 => f64::INFINITY,
            _ => 0.0,
        },
        dominant_frequency: dominant,
    })
}

/// Least-squares fit of `a + b cos(wx) + c sin(wx)`; returns the
/// peak-to-peak amplitude `2 sqrt(b^2 + c^2)` and the offset `a`.
pub fn sinusoid_amplitude(xs: &[f64], ys: &[f64], w: f64) -> Option<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return None;
    }
    let mut ata = Matrix3::zeros();
    let mut aty = Vector3::zeros();
    for (&x, &y) in xs.iter().zip(ys) {
        let row = Vector3::new(1.0, (w * x).cos(), (w * x).sin());
        ata += row * row.transpose();
        aty += row * y;
    }
    let sol = ata.lu().solve(&aty)?;
    Some((2.0 * sol[1].hypot(sol[2]), sol[0]))
}
