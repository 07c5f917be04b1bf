//! Seasonal-trend decomposition by LOESS, with a moving-median detrend for
//! series too short to hold two seasonal cycles.

use super::stats::{median, StatsError};

/// Components of an additive decomposition `y = trend + seasonal + residual`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub residual: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StlParams {
    pub period: usize,
    pub seasonal_window: usize,
    pub trend_window: usize,
    pub low_pass_window: usize,
    pub inner_iterations: usize,
    pub robust_iterations: usize,
}

impl StlParams {
    /// Standard window choices for a given period, robust fitting on.
    pub fn for_period(period: usize) -> Self {
        let seasonal_window = 7;
        let trend = (1.5 * period as f64 / (1.0 - 1.5 / seasonal_window as f64)).ceil() as usize;
        StlParams {
            period,
            seasonal_window,
            trend_window: next_odd(trend),
            low_pass_window: next_odd(period + 1),
            inner_iterations: 2,
            robust_iterations: 15,
        }
    }
}

fn next_odd(n: usize) -> usize {
    if n.is_multiple_of(2) {
        n + 1
    } else {
        n
    }
}

/// Residuals after removing trend and seasonality. Uses STL when the series
/// spans at least two periods, otherwise a centred moving median.
pub fn robust_residuals(values: &[f64], period: usize) -> Result<Vec<f64>, StatsError> {
    if values.len() < 4 {
        return Err(StatsError::SeriesTooShort {
            len: values.len(),
            lag: period,
        });
    }
    if period >= 2 && values.len() >= 2 * period {
        Ok(stl(values, StlParams::for_period(period)).residual)
    } else {
        Ok(moving_median_residuals(values))
    }
}

/// Residuals from a centred moving median of odd width `min(7, n)`; the
/// window shrinks symmetrically at the edges.
pub fn moving_median_residuals(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let width = if n.min(7).is_multiple_of(2) {
        n.min(7) - 1
    } else {
        n.min(7)
    };
    let half = width / 2;
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let m = median(&values[i - h..=i + h]).expect("non-empty window");
            values[i] - m
        })
        .collect()
}

/// Robust STL decomposition of a gap-free series.
pub fn stl(y: &[f64], params: StlParams) -> Decomposition {
    let n = y.len();
    let np = params.period;
    let mut trend = vec![0.0; n];
    let mut seasonal = vec![0.0; n];
    let mut weights = vec![1.0; n];

    for outer in 0..=params.robust_iterations {
        for _ in 0..params.inner_iterations {
            let detrended: Vec<f64> = y.iter().zip(&trend).map(|(a, b)| a - b).collect();

            // Smooth each cycle-subseries, extended one step at both ends.
            let mut cycle = vec![0.0; n + 2 * np];
            for k in 0..np {
                let idx: Vec<usize> = (k..n).step_by(np).collect();
                let sub: Vec<f64> = idx.iter().map(|&i| detrended[i]).collect();
                let sub_w: Vec<f64> = idx.iter().map(|&i| weights[i]).collect();
                let m = sub.len();
                for (j, x) in (-1..=m as isize).enumerate() {
                    let fit = loess_at(&sub, &sub_w, params.seasonal_window, x as f64);
                    cycle[k + j * np] = fit;
                }
            }

            // Low-pass filter of the cycle series removes its trend leakage.
            let ma1 = moving_average(&cycle, np);
            let ma2 = moving_average(&ma1, np);
            let ma3 = moving_average(&ma2, 3);
            let unit = vec![1.0; ma3.len()];
            let low: Vec<f64> = (0..n)
                .map(|i| loess_at(&ma3, &unit, params.low_pass_window, i as f64))
                .collect();

            for i in 0..n {
                seasonal[i] = cycle[np + i] - low[i];
            }
            let deseasoned: Vec<f64> = y.iter().zip(&seasonal).map(|(a, b)| a - b).collect();
            for (i, t) in trend.iter_mut().enumerate() {
                *t = loess_at(&deseasoned, &weights, params.trend_window, i as f64);
            }
        }
        if outer < params.robust_iterations {
            let resid: Vec<f64> = (0..n).map(|i| y[i] - trend[i] - seasonal[i]).collect();
            weights = bisquare_weights(&resid);
        }
    }

    let residual = (0..n).map(|i| y[i] - trend[i] - seasonal[i]).collect();
    Decomposition {
        trend,
        seasonal,
        residual,
    }
}

fn bisquare_weights(resid: &[f64]) -> Vec<f64> {
    let abs: Vec<f64> = resid.iter().map(|r| r.abs()).collect();
    let h = 6.0 * median(&abs).unwrap_or(0.0);
    abs.iter()
        .map(|&r| {
            if h <= 0.0 {
                // Degenerate scale: keep exact fits, drop everything else.
                if r <= f64::EPSILON {
                    1.0
                } else {
                    0.0
                }
            } else {
                let u = r / h;
                if u < 1.0 {
                    (1.0 - u * u).powi(2)
                } else {
                    0.0
                }
            }
        })
        .collect()
}

fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    if x.len() < width {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(x.len() - width + 1);
    let mut sum: f64 = x[..width].iter().sum();
    out.push(sum / width as f64);
    for i in width..x.len() {
        sum += x[i] - x[i - width];
        out.push(sum / width as f64);
    }
    out
}

/// Locally linear fit at position `x` over the `q` nearest of the points
/// `(i, ys[i])`, tricube-weighted and multiplied by robustness weights.
fn loess_at(ys: &[f64], robustness: &[f64], q: usize, x: f64) -> f64 {
    let n = ys.len();
    if n == 0 {
        return 0.0;
    }
    if n == 1 {
        return ys[0];
    }
    let q = q.max(2);
    let (lo, hi, mut h) = if q >= n {
        let h = x.max((n - 1) as f64 - x);
        (0, n, h + (q - n) as f64 / 2.0)
    } else {
        let centre = x.round().clamp(0.0, (n - 1) as f64) as usize;
        let lo = centre.saturating_sub((q - 1) / 2).min(n - q);
        let h = (x - lo as f64).abs().max(((lo + q - 1) as f64 - x).abs());
        (lo, lo + q, h)
    };
    if h <= 0.0 {
        h = 1.0;
    }

    let fit = |use_robustness: bool| -> Option<f64> {
        let mut sw = 0.0;
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut w = Vec::with_capacity(hi - lo);
        for i in lo..hi {
            let u = (i as f64 - x).abs() / h;
            let tri = if u < 1.0 {
                (1.0 - u.powi(3)).powi(3)
            } else {
                0.0
            };
            let wi = tri * if use_robustness { robustness[i] } else { 1.0 };
            w.push(wi);
            sw += wi;
            sx += wi * i as f64;
            sy += wi * ys[i];
        }
        if sw <= 0.0 {
            return None;
        }
        let (mx, my) = (sx / sw, sy / sw);
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for (k, i) in (lo..hi).enumerate() {
            let dx = i as f64 - mx;
            sxx += w[k] * dx * dx;
            sxy += w[k] * dx * (ys[i] - my);
        }
        // Spread of x below ~1e-7 of the window means the slope is unreliable.
        let slope = if sxx > 1e-7 * h * h * sw {
            sxy / sxx
        } else {
            0.0
        };
        Some(my + slope * (x - mx))
    };
    fit(true)
        .or_else(|| fit(false))
        .unwrap_or(ys[x.round().clamp(0.0, (n - 1) as f64) as usize])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_series_has_zero_residuals() {
        for period in [3, 7] {
            let r = robust_residuals(&[7.0; 28], period).unwrap();
            assert!(r.iter().all(|v| v.abs() < 1e-9), "{r:?}");
        }
        let short = robust_residuals(&[7.0; 6], 7).unwrap();
        assert!(short.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn spike_dominates_residuals() {
        let mut y = vec![7.0; 28];
        y[14] = 20.0;
        // Fallback oracle: the moving median around day 15 is 7, so the
        // residual there is exactly 13; STL with robust weights must agree
        // to within the bound.
        let oracle = moving_median_residuals(&y);
        assert_eq!(oracle[14], 13.0);
        let r = robust_residuals(&y, 7).unwrap();
        assert!(r[14].abs() >= 10.0, "{}", r[14]);
        let others = r
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 14)
            .map(|(_, v)| v.abs());
        assert!(others.fold(0.0, f64::max) < 1.0);
    }

    #[test]
    fn weekly_sinusoid_is_absorbed_by_the_seasonal_component() {
        let amplitude = 2.0;
        let y: Vec<f64> = (0..28)
            .map(|t| 10.0 + amplitude * (2.0 * PI * t as f64 / 7.0).sin())
            .collect();
        let r = robust_residuals(&y, 7).unwrap();
        let max = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= 0.15 * amplitude, "max residual {max}");
    }

    #[test]
    fn decomposition_is_additive() {
        let y: Vec<f64> = (0..35).map(|t| t as f64 * 0.3 + (t % 7) as f64).collect();
        let d = stl(&y, StlParams::for_period(7));
        for (i, v) in y.iter().enumerate() {
            assert!((d.trend[i] + d.seasonal[i] + d.residual[i] - v).abs() < 1e-9);
        }
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            robust_residuals(&[1.0, 2.0, 3.0], 7),
            Err(StatsError::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn moving_median_window_is_odd() {
        // n = 4 -> width 3
        let r = moving_median_residuals(&[1.0, 5.0, 2.0, 2.0]);
        assert_eq!(r, vec![0.0, 3.0, 0.0, 0.0]);
    }
}
