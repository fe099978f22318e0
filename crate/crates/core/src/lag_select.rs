//! Histogram estimates of entropy and mutual information, the auto-mutual
//! information curve of a series, and first-minimum lag selection.
//!
//! All quantities are in bits. Samples are binned on equal-width bins over
//! their observed range; a lagged copy of a series reuses the edges of the
//! series itself so that `MI(x, x) = H(x)` holds exactly.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::PixelSeries;
use crate::num::Real;

pub const MAX_DEFAULT_BINS: usize = 64;
pub const DEFAULT_TAU_MAX: usize = 24;
pub const FALLBACK_LAG: usize = 7;

/// `ceil(sqrt(n))`, capped at [`MAX_DEFAULT_BINS`].
pub fn default_bin_count(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).clamp(1, MAX_DEFAULT_BINS)
}

/// Equal-width bins spanning `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Binning<T> {
    pub min: T,
    pub max: T,
    pub bins: usize,
}

impl<T: Real> Binning<T> {
    /// Bins over the non-missing samples.
    pub fn fit(samples: &[T], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument("bin count must be >= 1".into()));
        }
        let mut it = samples.iter().copied().filter(|v| !v.is_missing());
        let first = it
            .next()
            .ok_or_else(|| Error::InvalidArgument("no samples to bin".into()))?;
        let (min, max) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Ok(Self { min, max, bins })
    }

    #[inline]
    pub fn index(&self, x: T) -> usize {
        let span = self.max - self.min;
        if span <= T::zero() {
            return 0;
        }
        let k = ((x - self.min) / span * T::lit(self.bins as f64)).floor();
        k.to_usize().unwrap_or(0).min(self.bins - 1)
    }

    pub fn edges(&self) -> Vec<T> {
        let w = (self.max - self.min) / T::lit(self.bins as f64);
        (0..=self.bins).map(|k| self.min + w * T::lit(k as f64)).collect()
    }
}

/// Joint occupancy counts of two binned samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D<T> {
    pub x_binning: Binning<T>,
    pub y_binning: Binning<T>,
    /// `bins_x * bins_y`, indexed `[bx * bins_y + by]`.
    pub joint_counts: Vec<u64>,
    pub n: u64,
}

impl<T: Real> Histogram2D<T> {
    /// Counts the pairs where neither side is missing.
    pub fn build(x: &[T], y: &[T], x_binning: Binning<T>, y_binning: Binning<T>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InvalidArgument(format!("length mismatch: {} vs {}", x.len(), y.len())));
        }
        let mut joint_counts = vec![0u64; x_binning.bins * y_binning.bins];
        let mut n = 0;
        for (&a, &b) in x.iter().zip(y) {
            if a.is_missing() || b.is_missing() {
                continue;
            }
            joint_counts[x_binning.index(a) * y_binning.bins + y_binning.index(b)] += 1;
            n += 1;
        }
        Ok(Self {
            x_binning,
            y_binning,
            joint_counts,
            n,
        })
    }

    pub fn bins_x(&self) -> usize {
        self.x_binning.bins
    }

    pub fn bins_y(&self) -> usize {
        self.y_binning.bins
    }

    pub fn marginal_x(&self) -> Vec<u64> {
        self.joint_counts
            .chunks(self.bins_y())
            .map(|row| row.iter().sum())
            .collect()
    }

    pub fn marginal_y(&self) -> Vec<u64> {
        let mut out = vec![0; self.bins_y()];
        for row in self.joint_counts.chunks(self.bins_y()) {
            for (o, c) in out.iter_mut().zip(row) {
                *o += c;
            }
        }
        out
    }

    /// Double sum of `p(x,y) log2(p(x,y) / (p(x) p(y)))`.
    ///
    /// Terms are summed in sorted order so that transposing the histogram
    /// yields a bit-identical value.
    pub fn mutual_information(&self) -> T {
        let n = T::lit(self.n as f64);
        let (mx, my) = (self.marginal_x(), self.marginal_y());
        let mut terms: Vec<T> = Vec::new();
        for (bx, row) in self.joint_counts.chunks(self.bins_y()).enumerate() {
            for (by, &c) in row.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let pxy = T::lit(c as f64) / n;
                let px = T::lit(mx[bx] as f64) / n;
                let py = T::lit(my[by] as f64) / n;
                terms.push(pxy * (pxy / (px * py)).log2());
            }
        }
        terms.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        terms.into_iter().fold(T::zero(), |acc, t| acc + t).max(T::zero())
    }

    /// `H(X | Y) = -ΣΣ p(x,y) log2(p(x,y) / p(y))`.
    pub fn conditional_entropy_x_given_y(&self) -> T {
        let n = T::lit(self.n as f64);
        let my = self.marginal_y();
        let mut h = T::zero();
        for row in self.joint_counts.chunks(self.bins_y()) {
            for (by, &c) in row.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let pxy = T::lit(c as f64) / n;
                let py = T::lit(my[by] as f64) / n;
                h = h - pxy * (pxy / py).log2();
            }
        }
        h.max(T::zero())
    }

    pub fn entropy_x(&self) -> T {
        entropy_of_counts(&self.marginal_x(), self.n)
    }
}

/// `-Σ p log2 p` over the occupied bins.
pub fn entropy_of_counts<T: Real>(counts: &[u64], n: u64) -> T {
    if n == 0 {
        return T::zero();
    }
    let n = T::lit(n as f64);
    let h = counts
        .iter()
        .filter(|c| **c > 0)
        .map(|&c| {
            let p = T::lit(c as f64) / n;
            -p * p.log2()
        })
        .fold(T::zero(), |a, b| a + b);
    h.max(T::zero())
}

fn counts<T: Real>(samples: &[T], binning: &Binning<T>) -> (Vec<u64>, u64) {
    let mut c = vec![0u64; binning.bins];
    let mut n = 0;
    for &v in samples.iter().filter(|v| !v.is_missing()) {
        c[binning.index(v)] += 1;
        n += 1;
    }
    (c, n)
}

/// Shannon entropy in bits of `samples` on `bins` equal-width bins.
pub fn entropy<T: Real>(samples: &[T], bins: usize) -> Result<T> {
    if samples.iter().all(|v| v.is_missing()) {
        return Err(Error::InvalidArgument("entropy of an empty sample".into()));
    }
    let binning = Binning::fit(samples, bins)?;
    let (c, n) = counts(samples, &binning);
    Ok(entropy_of_counts(&c, n))
}

fn check_pair<T: Real>(x: &[T], y: &[T]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("mutual information needs at least 2 samples".into()));
    }
    Ok(())
}

fn pair_histogram<T: Real>(x: &[T], y: &[T], bins: usize) -> Result<Histogram2D<T>> {
    check_pair(x, y)?;
    let keep: (Vec<T>, Vec<T>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| !a.is_missing() && !b.is_missing())
        .map(|(a, b)| (*a, *b))
        .unzip();
    let bx = Binning::fit(&keep.0, bins)?;
    let by = Binning::fit(&keep.1, bins)?;
    Histogram2D::build(&keep.0, &keep.1, bx, by)
}

/// Mutual information in bits, each variable binned over its own range.
/// Pairs with a missing side are dropped first.
pub fn mutual_information<T: Real>(x: &[T], y: &[T], bins: usize) -> Result<T> {
    Ok(pair_histogram(x, y, bins)?.mutual_information())
}

/// `H(X | Y)` on the same binning as [`mutual_information`].
pub fn conditional_entropy<T: Real>(x: &[T], y: &[T], bins: usize) -> Result<T> {
    Ok(pair_histogram(x, y, bins)?.conditional_entropy_x_given_y())
}

/// Mutual information through `H(X) - H(X | Y)`.
pub fn mutual_information_by_entropies<T: Real>(x: &[T], y: &[T], bins: usize) -> Result<T> {
    let h = pair_histogram(x, y, bins)?;
    Ok(h.entropy_x() - h.conditional_entropy_x_given_y())
}

/// Settings for [`auto_mi_curve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagSelection {
    pub tau_max: usize,
    /// `None` picks [`default_bin_count`] of the valid sample count.
    pub bins: Option<usize>,
    /// A minimum only counts once the curve climbs this fraction of `H(X)`
    /// above it before dropping below it again.
    pub min_rise_fraction: f64,
    pub fallback_lag: usize,
}

impl Default for LagSelection {
    fn default() -> Self {
        Self {
            tau_max: DEFAULT_TAU_MAX,
            bins: None,
            min_rise_fraction: 0.01,
            fallback_lag: FALLBACK_LAG,
        }
    }
}

/// Auto-mutual information over lags `1..=tau_max` and the lag picked from it.
#[derive(Debug, Clone, PartialEq)]
pub struct MiCurve<T> {
    pub pixel: (usize, usize),
    pub lags: Vec<usize>,
    pub mi: Vec<T>,
    /// `MI` at lag 0, i.e. the entropy of the series.
    pub entropy: T,
    pub selected_lag: usize,
    /// False when no qualifying minimum exists and the fallback was used.
    pub found_minimum: bool,
}

impl<T: Real> MiCurve<T> {
    pub fn mi_at(&self, tau: usize) -> T {
        if tau == 0 {
            self.entropy
        } else {
            self.mi[tau - 1]
        }
    }

    /// `lag,mi_bits` rows.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "lag,mi_bits")?;
        writeln!(w, "0,{}", self.entropy)?;
        for (l, v) in self.lags.iter().zip(&self.mi) {
            writeln!(w, "{l},{v}")?;
        }
        Ok(())
    }
}

/// First lag `τ` with `mi[τ-1] > mi[τ] < mi[τ+1]` whose right side climbs at
/// least `min_rise` before going below `mi[τ]`. `mi[0]` is the entropy.
pub fn first_local_minimum<T: Real>(mi_with_zero: &[T], min_rise: T) -> Option<usize> {
    let m = mi_with_zero;
    (1..m.len().saturating_sub(1)).find(|&tau| {
        if !(m[tau - 1] > m[tau] && m[tau] < m[tau + 1]) {
            return false;
        }
        for &v in &m[tau + 1..] {
            if v < m[tau] {
                return false;
            }
            if v - m[tau] >= min_rise {
                return true;
            }
        }
        false
    })
}

pub fn auto_mi_curve<T: Real>(series: &PixelSeries<T>, cfg: &LagSelection) -> Result<MiCurve<T>> {
    let x = &series.values;
    if cfg.tau_max == 0 {
        return Err(Error::InvalidArgument("tau_max must be >= 1".into()));
    }
    if x.len() <= cfg.tau_max + 2 {
        return Err(Error::InvalidArgument(format!(
            "series of length {} too short for tau_max {}",
            x.len(),
            cfg.tau_max
        )));
    }
    let valid = x.iter().filter(|v| !v.is_missing()).count();
    if valid < 2 {
        return Err(Error::InvalidArgument("series has fewer than 2 valid samples".into()));
    }
    let bins = cfg.bins.unwrap_or_else(|| default_bin_count(valid));
    let binning = Binning::fit(x, bins)?;
    let (c, n) = counts(x, &binning);
    let entropy = entropy_of_counts::<T>(&c, n);

    let mut mi = Vec::with_capacity(cfg.tau_max);
    for tau in 1..=cfg.tau_max {
        let h = Histogram2D::build(&x[tau..], &x[..x.len() - tau], binning, binning)?;
        mi.push(if h.n == 0 { T::zero() } else { h.mutual_information() });
    }

    let mut with_zero = Vec::with_capacity(mi.len() + 1);
    with_zero.push(entropy);
    with_zero.extend_from_slice(&mi);
    let found = first_local_minimum(&with_zero, entropy * T::lit(cfg.min_rise_fraction));

    Ok(MiCurve {
        pixel: series.pixel,
        lags: (1..=cfg.tau_max).collect(),
        mi,
        entropy,
        selected_lag: found.unwrap_or(cfg.fallback_lag),
        found_minimum: found.is_some(),
    })
}

/// Order statistics of the selected lags over a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagStatistics {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub stddev: f64,
    pub count: usize,
}

pub fn lag_statistics(lags: &[usize]) -> Result<LagStatistics> {
    if lags.is_empty() {
        return Err(Error::InvalidArgument("no lags to summarize".into()));
    }
    let mut sorted = lags.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let mean = sorted.iter().sum::<usize>() as f64 / n as f64;
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    };
    let var = sorted.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n as f64;
    Ok(LagStatistics {
        min: sorted[0],
        max: sorted[n - 1],
        mean,
        median,
        stddev: var.sqrt(),
        count: n,
    })
}

pub fn grid_lag_statistics<T: Real>(curves: &[MiCurve<T>]) -> Result<LagStatistics> {
    let lags: Vec<usize> = curves.iter().map(|c| c.selected_lag).collect();
    lag_statistics(&lags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::StackKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(values: Vec<f64>) -> PixelSeries<f64> {
        let ts = (0..values.len() as i64).map(|t| t * 3600).collect();
        PixelSeries::new((0, 0), values, ts, StackKind::ClearSkyIndex).unwrap()
    }

    #[test]
    fn constant_sample_has_zero_entropy() {
        assert_eq!(entropy(&[0.7f64; 50], 10).unwrap(), 0.0);
    }

    #[test]
    fn fair_binary_is_one_bit() {
        let x: Vec<f64> = (0..1000).map(|k| (k % 2) as f64).collect();
        assert!((entropy(&x, 2).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn balanced_uniform_sample_reaches_log2_k() {
        for k in [3usize, 5, 8, 13] {
            // 40 samples at the center of each bin of [0, k).
            let x: Vec<f64> = (0..k * 40).map(|s| (s % k) as f64 + 0.5).collect();
            let brute = -(0..k).map(|_| (1.0 / k as f64) * (1.0 / k as f64).log2()).sum::<f64>();
            assert!((entropy(&x, k).unwrap() - brute).abs() < 1e-12);
            assert!((brute - (k as f64).log2()).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_entropy_is_an_error() {
        assert!(entropy::<f64>(&[], 4).is_err());
        assert!(entropy(&[f64::missing()], 4).is_err());
        assert!(entropy(&[1.0f64], 0).is_err());
    }

    #[test]
    fn mi_length_mismatch() {
        assert!(mutual_information(&[1.0f64, 2.0], &[1.0], 4).is_err());
        assert!(mutual_information(&[1.0f64], &[1.0], 4).is_err());
    }

    #[test]
    fn self_information_equals_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let mi = mutual_information(&x, &x, 12).unwrap();
        let h = entropy(&x, 12).unwrap();
        assert!((mi - h).abs() < 1e-12);
    }

    #[test]
    fn independent_streams_carry_little_information() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        assert!(mutual_information(&x, &y, 10).unwrap() <= 0.05);
    }

    #[test]
    fn shuffled_copy_carries_little_information() {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let mut y = x.clone();
        y.shuffle(&mut rng);
        assert!(mutual_information(&x, &y, 10).unwrap() <= 0.05);
    }

    #[test]
    fn missing_pairs_are_dropped() {
        let x = vec![0.0, 1.0, f64::missing(), 0.0, 1.0];
        let y = vec![0.0, 1.0, 5.0, 0.0, 1.0];
        assert!((mutual_information(&x, &y, 2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_marginals_sum_to_n() {
        let x = [0.1f64, 0.2, 0.9, 0.5, 0.5];
        let y = [1.0f64, 3.0, 2.0, 2.0, f64::missing()];
        let h = Histogram2D::build(&x, &y, Binning::fit(&x, 3).unwrap(), Binning::fit(&y, 2).unwrap()).unwrap();
        assert_eq!(h.n, 4);
        assert_eq!(h.joint_counts.iter().sum::<u64>(), 4);
        assert_eq!(h.marginal_x().iter().sum::<u64>(), 4);
        assert_eq!(h.marginal_y().iter().sum::<u64>(), 4);
        assert_eq!(h.x_binning.edges().len(), 4);
    }

    /// Noisy sinusoid of period `period`: the lagged scatter is an ellipse
    /// that is thinnest at lags 0, P/2, P and roundest at P/4, so the first
    /// auto-MI minimum sits at P/4.
    fn noisy_sinusoid(period: usize, cycles: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = rand_distr::Normal::new(0.0, 0.05).unwrap();
        (0..period * cycles)
            .map(|t| {
                0.6 + 0.3 * (2.0 * std::f64::consts::PI * t as f64 / period as f64).sin()
                    + rng.sample(normal)
            })
            .collect()
    }

    #[test]
    fn embedded_period_sets_first_minimum() {
        for period in [16usize, 24, 28] {
            let s = series(noisy_sinusoid(period, 400, period as u64));
            let curve = auto_mi_curve(&s, &LagSelection::default()).unwrap();
            assert!(curve.found_minimum);
            assert_eq!(curve.selected_lag, period / 4, "period {period}");
        }
    }

    #[test]
    fn alternating_series_has_flat_curve() {
        // Every lag of a two-value alternation determines the present value,
        // so the curve never dips and the fallback lag is used.
        let s = series((0..400).map(|t| (t % 2) as f64).collect());
        let curve = auto_mi_curve(&s, &LagSelection::default()).unwrap();
        assert!(curve.mi.iter().all(|v| (*v - 1.0).abs() < 1e-4));
        assert!(!curve.found_minimum);
        assert_eq!(curve.selected_lag, FALLBACK_LAG);
    }

    #[test]
    fn iid_noise_falls_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = series((0..10_000).map(|_| rng.random::<f64>()).collect());
        let curve = auto_mi_curve(&s, &LagSelection::default()).unwrap();
        assert!(!curve.found_minimum);
        assert_eq!(curve.selected_lag, FALLBACK_LAG);
    }

    #[test]
    fn short_series_rejected() {
        let s = series(vec![0.5; 26]);
        assert!(auto_mi_curve(&s, &LagSelection::default()).is_err());
    }

    #[test]
    fn curve_csv_layout() {
        let s = series(noisy_sinusoid(8, 50, 1));
        let cfg = LagSelection {
            tau_max: 3,
            ..Default::default()
        };
        let curve = auto_mi_curve(&s, &cfg).unwrap();
        let mut out = Vec::new();
        curve.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "lag,mi_bits");
        assert_eq!(lines.len(), 5);
        assert!(lines[4].starts_with("3,"));
    }

    #[test]
    fn local_minimum_rules() {
        assert_eq!(first_local_minimum(&[5.0, 3.0, 4.0, 2.0], 0.5), Some(1));
        assert_eq!(first_local_minimum(&[5.0, 3.0, 3.2, 2.0, 4.0], 0.5), Some(3));
        assert_eq!(first_local_minimum(&[5.0, 3.0, 3.0, 4.0], 0.5), None);
        assert_eq!(first_local_minimum(&[5.0, 4.0, 3.0], 0.5), None);
    }

    #[test]
    fn lag_summary_examples() {
        let s = lag_statistics(&[5, 7, 10]).unwrap();
        assert_eq!((s.min, s.max, s.median), (5, 10, 7.0));
        let s = lag_statistics(&[9]).unwrap();
        assert_eq!((s.min, s.max, s.mean, s.median, s.stddev), (9, 9, 9.0, 9.0, 0.0));
        let s = lag_statistics(&[7, 7, 8, 8]).unwrap();
        assert_eq!(s.mean, 7.5);
        assert_eq!(s.median, 7.5);
        assert_eq!(s.stddev, 0.5);
        assert!(lag_statistics(&[]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn nonnegative_and_symmetric(
                x in prop::collection::vec(-5.0f64..5.0, 2..200),
                seed in 0u64..1000,
                bins in 1usize..20,
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let y: Vec<f64> = x.iter().map(|v| if rng.random::<bool>() { v * 0.5 } else { rng.random() }).collect();
                let a = mutual_information(&x, &y, bins).unwrap();
                let b = mutual_information(&y, &x, bins).unwrap();
                prop_assert!(a >= 0.0);
                prop_assert_eq!(a.to_bits(), b.to_bits());
                prop_assert!(entropy(&x, bins).unwrap() >= 0.0);
            }

            #[test]
            fn entropy_route_matches_double_sum(
                x in prop::collection::vec(0.0f64..1.0, 10..300),
                bins in 2usize..16,
            ) {
                let y: Vec<f64> = x.iter().enumerate().map(|(k, v)| (v * 7.0 + k as f64 * 0.13).sin()).collect();
                let direct = mutual_information(&x, &y, bins).unwrap();
                let split = mutual_information_by_entropies(&x, &y, bins).unwrap();
                prop_assert!((direct - split).abs() < 1e-10);
            }
        }
    }
}
