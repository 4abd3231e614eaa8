//! Small statistics toolbox: time-weighted accumulators, weighted
//! histograms, batch means, t-based confidence intervals and least squares.

use serde::Serialize;

/// Time-weighted first and second moments.
#[derive(Debug, Clone, Default)]
pub struct WeightedMoments {
    sum_w: f64,
    sum_wv: f64,
    sum_wv2: f64,
}

impl WeightedMoments {
    pub fn record(&mut self, value: f64, weight: f64) {
        self.sum_w += weight;
        self.sum_wv += weight * value;
        self.sum_wv2 += weight * value * value;
    }

    pub fn total_weight(&self) -> f64 {
        self.sum_w
    }

    pub fn mean(&self) -> f64 {
        if self.sum_w > 0.0 {
            self.sum_wv / self.sum_w
        } else {
            f64::NAN
        }
    }

    pub fn second_moment(&self) -> f64 {
        if self.sum_w > 0.0 {
            self.sum_wv2 / self.sum_w
        } else {
            f64::NAN
        }
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        (self.second_moment() - m * m).max(0.0)
    }
}

/// Fixed-grid weighted histogram used for quantiles of path functionals.
#[derive(Debug, Clone)]
pub struct WeightedHistogram {
    lo: f64,
    width: f64,
    bins: Vec<f64>,
    below: f64,
    above: f64,
    total: f64,
}

impl WeightedHistogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        assert!(hi > lo && bins > 0);
        Self {
            lo,
            width: (hi - lo) / bins as f64,
            bins: vec![0.0; bins],
            below: 0.0,
            above: 0.0,
            total: 0.0,
        }
    }

    pub fn record(&mut self, value: f64, weight: f64) {
        self.total += weight;
        if value < self.lo {
            self.below += weight;
            return;
        }
        let idx = ((value - self.lo) / self.width) as usize;
        if idx >= self.bins.len() {
            self.above += weight;
        } else {
            self.bins[idx] += weight;
        }
    }

    /// Weighted quantile (linear within the containing bin).
    pub fn quantile(&self, p: f64) -> f64 {
        if self.total <= 0.0 {
            return f64::NAN;
        }
        let target = p.clamp(0.0, 1.0) * self.total;
        let mut acc = self.below;
        if acc >= target {
            return self.lo;
        }
        for (i, &w) in self.bins.iter().enumerate() {
            if acc + w >= target && w > 0.0 {
                let frac = (target - acc) / w;
                return self.lo + (i as f64 + frac) * self.width;
            }
            acc += w;
        }
        self.lo + self.bins.len() as f64 * self.width
    }
}

/// Ordinary least squares of `y` on `x`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Two-sided 97.5% Student-t quantile (95% CI half-width multiplier).
pub fn t_975(df: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179,
        2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
        2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    if df == 0 {
        f64::INFINITY
    } else if df <= 30 {
        TABLE[df - 1]
    } else {
        1.96
    }
}

/// Sample mean with a t-based 95% confidence half-width.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub ci_half_width: f64,
    pub count: usize,
}

pub fn mean_ci(values: &[f64]) -> Estimate {
    let n = values.len();
    if n == 0 {
        return Estimate {
            mean: f64::NAN,
            se: f64::NAN,
            ci_half_width: f64::NAN,
            count: 0,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Estimate {
            mean,
            se: f64::NAN,
            ci_half_width: f64::NAN,
            count: 1,
        };
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    Estimate {
        mean,
        se,
        ci_half_width: t_975(n - 1) * se,
        count: n,
    }
}

/// Batch-means standard error for one autocorrelated time-average.
///
/// The run is split into `batches` equal spans; the variability of the batch
/// means replaces the (invalid) iid standard error.
#[derive(Debug, Clone)]
pub struct BatchMeans {
    batches: usize,
    span: f64,
    t_end: f64,
    acc: Vec<WeightedMoments>,
    t_start: f64,
}

impl BatchMeans {
    pub fn new(t_start: f64, t_end: f64, batches: usize) -> Self {
        assert!(batches >= 2);
        let span = ((t_end - t_start) / batches as f64).max(f64::MIN_POSITIVE);
        Self {
            batches,
            span,
            t_end,
            acc: vec![WeightedMoments::default(); batches],
            t_start,
        }
    }

    /// Records a constant `value` over `[t, t + dt)`, splitting across batches.
    pub fn record(&mut self, mut t: f64, mut dt: f64, value: f64) {
        while dt > 0.0 && t < self.t_end {
            let idx = (((t - self.t_start) / self.span) as usize).min(self.batches - 1);
            let batch_end = self.t_start + (idx + 1) as f64 * self.span;
            let take = dt.min(batch_end - t);
            if take <= 0.0 {
                break;
            }
            self.acc[idx].record(value, take);
            t += take;
            dt -= take;
        }
    }

    pub fn estimate(&self) -> Estimate {
        let means: Vec<f64> = self
            .acc
            .iter()
            .filter(|a| a.total_weight() > 0.0)
            .map(|a| a.mean())
            .collect();
        mean_ci(&means)
    }
}

/// Complementary-CDF accumulator on a fixed radius grid, for tail fits.
#[derive(Debug, Clone)]
pub struct TailGrid {
    pub radii: Vec<f64>,
    pub weight_above: Vec<f64>,
    pub visits_above: Vec<u64>,
    pub total_weight: f64,
}

impl TailGrid {
    pub fn new(radii: Vec<f64>) -> Self {
        let n = radii.len();
        Self {
            radii,
            weight_above: vec![0.0; n],
            visits_above: vec![0; n],
            total_weight: 0.0,
        }
    }

    pub fn record(&mut self, value: f64, weight: f64) {
        self.total_weight += weight;
        for (k, &r) in self.radii.iter().enumerate() {
            if value > r {
                self.weight_above[k] += weight;
                self.visits_above[k] += 1;
            } else {
                break;
            }
        }
    }

    pub fn merge(&mut self, other: &TailGrid) {
        assert_eq!(self.radii, other.radii);
        self.total_weight += other.total_weight;
        for k in 0..self.radii.len() {
            self.weight_above[k] += other.weight_above[k];
            self.visits_above[k] += other.visits_above[k];
        }
    }

    /// Empirical `P(value > r)` per grid radius.
    pub fn survival(&self) -> Vec<f64> {
        self.weight_above
            .iter()
            .map(|w| w / self.total_weight)
            .collect()
    }
}
