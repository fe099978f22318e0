//! Seeded synthetic irradiance: a clear-sky field multiplied by the clear-sky
//! index of a stochastic cloud-index field.
//!
//! Cloud index per pixel and hour:
//!
//! * `Clear`: `n = 0`, so the irradiance equals the clear-sky stack exactly.
//! * `Ar1`: `n = mean + x`, with an independent AR(1) state per pixel,
//!   `x_t = phi x_{t-1} + sigma e_t`, started from its stationary law.
//! * `AdvectingBlobs`: the AR(1) field plus Gaussian bumps
//!   `amplitude · exp(-d² / 2 radius²)` whose centres move at `drift`
//!   pixels/hour in a random heading on a torus the size of the grid.
//!
//! `n` is clipped to `[-0.2, 1.3]`. All draws come from one ChaCha8 stream
//! in a fixed order (blob setup, initial states, then frames row-major).

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::clearsky::{clear_sky_stack, ClearSkyParams};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, MapStack, StackKind};
use crate::heliosat::{csi_from_cloud_index, irradiance_from_csi};
use crate::num::Real;

pub const CLOUD_INDEX_MIN: f64 = -0.2;
pub const CLOUD_INDEX_MAX: f64 = 1.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudMode {
    Clear,
    Ar1,
    AdvectingBlobs,
}

impl std::str::FromStr for CloudMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clear" => Ok(CloudMode::Clear),
            "ar1" => Ok(CloudMode::Ar1),
            "advecting_blobs" | "blobs" => Ok(CloudMode::AdvectingBlobs),
            _ => Err(Error::InvalidArgument(format!("unknown cloud mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudProcess {
    pub mode: CloudMode,
    pub ar1_phi: f64,
    pub noise_sigma: f64,
    /// Mean cloud index of the AR(1) field.
    pub mean: f64,
    pub blob_count: usize,
    pub blob_radius_px: f64,
    /// Pixels per hour.
    pub blob_drift_px: f64,
    pub blob_amplitude: f64,
    pub seed: u64,
}

impl Default for CloudProcess {
    fn default() -> Self {
        Self {
            mode: CloudMode::Ar1,
            ar1_phi: 0.9,
            noise_sigma: 0.1,
            mean: 0.3,
            blob_count: 3,
            blob_radius_px: 2.5,
            blob_drift_px: 0.5,
            blob_amplitude: 0.4,
            seed: 0,
        }
    }
}

impl CloudProcess {
    pub fn clear(seed: u64) -> Self {
        Self {
            mode: CloudMode::Clear,
            seed,
            ..Self::default()
        }
    }

    pub fn ar1(phi: f64, sigma: f64, mean: f64, seed: u64) -> Self {
        Self {
            mode: CloudMode::Ar1,
            ar1_phi: phi,
            noise_sigma: sigma,
            mean,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.ar1_phi) {
            return Err(Error::InvalidArgument(format!("ar1_phi {} outside [0, 1)", self.ar1_phi)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite() && self.mean.is_finite()) {
            return Err(Error::InvalidArgument("noise_sigma must be >= 0 and mean finite".into()));
        }
        if self.mode == CloudMode::AdvectingBlobs
            && !(self.blob_radius_px > 0.0 && self.blob_drift_px >= 0.0 && self.blob_amplitude.is_finite())
        {
            return Err(Error::InvalidArgument("blob radius must be > 0 and drift >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    y: f64,
    x: f64,
    vy: f64,
    vx: f64,
}

/// Cloud-index stack with `frames` frames.
pub fn cloud_index_stack<T: Real>(spec: &GridSpec, frames: usize, proc: &CloudProcess) -> Result<MapStack<T>> {
    spec.validate()?;
    proc.validate()?;
    let shape = spec.shape();
    if proc.mode == CloudMode::Clear {
        return MapStack::filled(spec.clone(), StackKind::CloudIndex, frames, T::zero());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(proc.seed);
    let (h, w) = (spec.height as f64, spec.width as f64);
    let blobs: Vec<Blob> = if proc.mode == CloudMode::AdvectingBlobs {
        (0..proc.blob_count)
            .map(|_| {
                let heading = rng.random_range(0.0..std::f64::consts::TAU);
                Blob {
                    y: rng.random_range(0.0..h),
                    x: rng.random_range(0.0..w),
                    vy: proc.blob_drift_px * heading.sin(),
                    vx: proc.blob_drift_px * heading.cos(),
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    let phi = proc.ar1_phi;
    let sigma = proc.noise_sigma;
    let stationary = sigma / (1.0 - phi * phi).sqrt();
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut state = Array2::from_shape_simple_fn(shape, || stationary * normal());

    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        if t > 0 {
            state.mapv_inplace(|x| phi * x + sigma * normal());
        }
        let mut n = state.mapv(|x| proc.mean + x);
        for b in &blobs {
            let (cy, cx) = (
                (b.y + b.vy * t as f64).rem_euclid(h),
                (b.x + b.vx * t as f64).rem_euclid(w),
            );
            let two_r2 = 2.0 * proc.blob_radius_px * proc.blob_radius_px;
            for ((i, j), v) in n.indexed_iter_mut() {
                let dy = torus_delta(i as f64 - cy, h);
                let dx = torus_delta(j as f64 - cx, w);
                *v += proc.blob_amplitude * (-(dy * dy + dx * dx) / two_r2).exp();
            }
        }
        out.push(n.mapv(|v| T::lit(v.clamp(CLOUD_INDEX_MIN, CLOUD_INDEX_MAX))));
    }
    MapStack::new(spec.clone(), StackKind::CloudIndex, out)
}

#[inline]
fn torus_delta(d: f64, period: f64) -> f64 {
    let d = d.rem_euclid(period);
    if d > period / 2.0 {
        d - period
    } else {
        d
    }
}

/// Irradiance composed from a cloud-index stack and an aligned clear-sky stack.
pub fn compose_irradiance<T: Real>(cloud: &MapStack<T>, clear_sky: &MapStack<T>) -> Result<MapStack<T>> {
    if cloud.kind() != StackKind::CloudIndex || clear_sky.kind() != StackKind::Irradiance {
        return Err(Error::InvalidArgument("expected a cloud-index and an irradiance stack".into()));
    }
    cloud.check_aligned(clear_sky)?;
    let frames = cloud
        .frames()
        .iter()
        .zip(clear_sky.frames())
        .map(|(n, cs)| ndarray::Zip::from(n).and(cs).map_collect(|&n, &c| irradiance_from_csi(csi_from_cloud_index(n), c)))
        .collect();
    MapStack::new(cloud.spec().clone(), StackKind::Irradiance, frames)
}

/// Synthetic dataset of `frames` hours.
#[derive(Debug, Clone)]
pub struct Synthetic<T> {
    pub truth: MapStack<T>,
    pub cloud: MapStack<T>,
    pub clear_sky: MapStack<T>,
}

/// `truth = csi(n) × clear sky` for `frames` frames.
pub fn generate<T: Real>(spec: &GridSpec, frames: usize, cs_params: &ClearSkyParams<T>, proc: &CloudProcess) -> Result<Synthetic<T>> {
    let clear_sky = clear_sky_stack(spec, frames, cs_params)?;
    let cloud = cloud_index_stack(spec, frames, proc)?;
    let truth = compose_irradiance(&cloud, &clear_sky)?;
    Ok(Synthetic { truth, cloud, clear_sky })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::extract_series;

    fn spec(w: usize, h: usize) -> GridSpec {
        // 2010-06-01
        GridSpec::new(w, h, 42.0, 9.0, 1_275_350_400).unwrap()
    }

    #[test]
    fn clear_mode_reproduces_clear_sky() {
        let s = spec(4, 3);
        let syn = generate::<f64>(&s, 48, &ClearSkyParams::default(), &CloudProcess::clear(1)).unwrap();
        let cs = clear_sky_stack(&s, 48, &ClearSkyParams::<f64>::default()).unwrap();
        for (a, b) in syn.truth.frames().iter().zip(cs.frames()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn same_seed_same_stack() {
        let s = spec(12, 12);
        let proc = CloudProcess {
            mode: CloudMode::AdvectingBlobs,
            seed: 9,
            ..CloudProcess::default()
        };
        let a = generate::<f64>(&s, 30, &ClearSkyParams::default(), &proc).unwrap();
        let b = generate::<f64>(&s, 30, &ClearSkyParams::default(), &proc).unwrap();
        assert_eq!(a.truth.frames(), b.truth.frames());
        assert_eq!(a.cloud.frames(), b.cloud.frames());
        let c = generate::<f64>(&s, 30, &ClearSkyParams::default(), &CloudProcess { seed: 10, ..proc }).unwrap();
        assert_ne!(a.cloud.frames(), c.cloud.frames());
    }

    #[test]
    fn white_noise_has_no_lag_one_correlation() {
        let s = spec(1, 1);
        let proc = CloudProcess::ar1(0.0, 0.2, 0.4, 3);
        let n = cloud_index_stack::<f64>(&s, 10_000, &proc).unwrap();
        let x = extract_series(&n, (0, 0)).unwrap().values;
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let var: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
        let cov: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        assert!((cov / var).abs() <= 0.1, "{}", cov / var);
    }

    #[test]
    fn ar1_has_expected_persistence() {
        let s = spec(1, 1);
        let proc = CloudProcess::ar1(0.9, 0.05, 0.4, 4);
        let n = cloud_index_stack::<f64>(&s, 20_000, &proc).unwrap();
        let x = extract_series(&n, (0, 0)).unwrap().values;
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let var: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
        let cov: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        assert!((cov / var - 0.9).abs() < 0.03);
    }

    #[test]
    fn cloud_index_clipped_and_irradiance_bounded() {
        let s = spec(6, 6);
        let proc = CloudProcess {
            mode: CloudMode::AdvectingBlobs,
            noise_sigma: 0.5,
            blob_amplitude: 2.0,
            seed: 5,
            ..CloudProcess::default()
        };
        let syn = generate::<f64>(&s, 72, &ClearSkyParams::default(), &proc).unwrap();
        for t in 0..72 {
            for ((n, i), c) in syn.cloud.frame(t).iter().zip(syn.truth.frame(t)).zip(syn.clear_sky.frame(t)) {
                assert!((CLOUD_INDEX_MIN..=CLOUD_INDEX_MAX).contains(n));
                assert!(*i >= 0.05 * c - 1e-9 && *i <= 1.2 * c + 1e-9);
            }
        }
    }

    #[test]
    fn invalid_process() {
        let s = spec(2, 2);
        assert!(cloud_index_stack::<f64>(&s, 3, &CloudProcess::ar1(1.0, 0.1, 0.3, 0)).is_err());
        assert!(cloud_index_stack::<f64>(&s, 3, &CloudProcess::ar1(0.5, -0.1, 0.3, 0)).is_err());
        assert!("fog".parse::<CloudMode>().is_err());
    }

    #[test]
    fn torus_wraps() {
        assert_eq!(torus_delta(7.0, 8.0), -1.0);
        assert_eq!(torus_delta(-7.0, 8.0), 1.0);
        assert_eq!(torus_delta(3.0, 8.0), 3.0);
    }
}
