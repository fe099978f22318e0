//! Pixel-wise next-hour predictors: persistence, scaled persistence, clear
//! sky, and the per-pixel network on clear-sky index lags.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{DaylightFilter, GridSpec, MapStack, StackKind};
use crate::heliosat::{clamp_csi, csi_from_irradiance, CSI_FLOOR};
use crate::mlp::PixelMlp;
use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Predictor {
    Persistence,
    ScaledPersistence,
    ClearSky,
    Mlp,
}

impl Predictor {
    pub const ALL: [Predictor; 4] = [
        Predictor::Persistence,
        Predictor::ScaledPersistence,
        Predictor::ClearSky,
        Predictor::Mlp,
    ];

    /// Tag written to sidecars and reports.
    pub fn id(self) -> &'static str {
        match self {
            Predictor::Persistence => "persistence",
            Predictor::ScaledPersistence => "scaled_persistence",
            Predictor::ClearSky => "clear_sky",
            Predictor::Mlp => "mlp",
        }
    }

    /// Short name used on the command line.
    pub fn cli_name(self) -> &'static str {
        match self {
            Predictor::Persistence => "persistence",
            Predictor::ScaledPersistence => "scaled",
            Predictor::ClearSky => "clearsky",
            Predictor::Mlp => "mlp",
        }
    }
}

impl fmt::Display for Predictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Predictor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Predictor::ALL
            .into_iter()
            .find(|p| p.id() == s || p.cli_name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown predictor {s:?}")))
    }
}

/// History through `t`, clear sky covering at least `t` and `t+1`.
#[derive(Debug, Clone, Copy)]
pub struct ForecastRequest<'a, T> {
    pub history: &'a MapStack<T>,
    pub clear_sky: &'a MapStack<T>,
    pub target_time: i64,
    /// Targets outside this window get an all-missing map.
    pub window: Option<DaylightFilter>,
}

impl<'a, T: Real> ForecastRequest<'a, T> {
    /// Request for the step right after the last history frame.
    pub fn next_step(history: &'a MapStack<T>, clear_sky: &'a MapStack<T>) -> Result<Self> {
        if history.is_empty() {
            return Err(Error::InvalidArgument("history has no frames".into()));
        }
        let target_time = history.timestamp(history.len() - 1) + history.spec().step_s as i64;
        Ok(Self {
            history,
            clear_sky,
            target_time,
            window: None,
        })
    }

    pub fn with_window(mut self, window: DaylightFilter) -> Self {
        self.window = Some(window);
        self
    }

    fn step(&self) -> i64 {
        self.history.spec().step_s as i64
    }

    /// Index of frame `t` in the history.
    fn last_index(&self) -> Result<usize> {
        if self.history.is_empty() {
            return Err(Error::InvalidArgument("history has no frames".into()));
        }
        self.history
            .index_of(self.target_time - self.step())
            .ok_or_else(|| Error::InvalidArgument(format!("history does not reach the step before {}", self.target_time)))
    }

    fn validate(&self) -> Result<()> {
        if self.history.kind() != StackKind::Irradiance || self.clear_sky.kind() != StackKind::Irradiance {
            return Err(Error::InvalidArgument("forecasting needs irradiance stacks".into()));
        }
        let (h, c) = (self.history.spec(), self.clear_sky.spec());
        if !h.same_raster(c) || h.step_s != c.step_s {
            return Err(Error::Alignment("history and clear-sky grids differ".into()));
        }
        self.last_index().map(|_| ())
    }

    fn clear_sky_at(&self, ts: i64) -> Result<&'a Array2<T>> {
        self.clear_sky
            .index_of(ts)
            .map(|k| self.clear_sky.frame(k))
            .ok_or_else(|| Error::Alignment(format!("clear sky does not cover {ts}")))
    }

    fn outside_window(&self) -> bool {
        self.window.is_some_and(|w| !w.in_window(self.target_time))
    }
}

/// Forecast raster for one target time.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastMap<T> {
    pub spec: GridSpec,
    pub values: Array2<T>,
    pub predictor: Predictor,
    pub target_time: i64,
}

impl<T: Real> ForecastMap<T> {
    fn new(req: &ForecastRequest<'_, T>, predictor: Predictor, values: Array2<T>) -> Self {
        let mut spec = req.history.spec().clone();
        spec.t0 = req.target_time;
        Self {
            spec,
            values,
            predictor,
            target_time: req.target_time,
        }
    }

    fn missing(req: &ForecastRequest<'_, T>, predictor: Predictor) -> Self {
        Self::new(req, predictor, Array2::from_elem(req.history.spec().shape(), T::missing()))
    }
}

pub fn persistence<T: Real>(req: &ForecastRequest<'_, T>) -> Result<ForecastMap<T>> {
    req.validate()?;
    if req.outside_window() {
        return Ok(ForecastMap::missing(req, Predictor::Persistence));
    }
    let last = req.history.frame(req.last_index()?).clone();
    Ok(ForecastMap::new(req, Predictor::Persistence, last))
}

pub fn scaled_persistence<T: Real>(req: &ForecastRequest<'_, T>) -> Result<ForecastMap<T>> {
    req.validate()?;
    if req.outside_window() {
        return Ok(ForecastMap::missing(req, Predictor::ScaledPersistence));
    }
    let last = req.history.frame(req.last_index()?);
    let cs_t = req.clear_sky_at(req.target_time - req.step())?;
    let cs_next = req.clear_sky_at(req.target_time)?;
    let floor = T::lit(CSI_FLOOR);
    let values = Zip::from(last).and(cs_t).and(cs_next).map_collect(|&i, &c0, &c1| {
        if i.is_missing() || c0.is_missing() || c1.is_missing() || c0 <= floor {
            T::missing()
        } else {
            i * (c1 / c0)
        }
    });
    Ok(ForecastMap::new(req, Predictor::ScaledPersistence, values))
}

pub fn clear_sky_predictor<T: Real>(req: &ForecastRequest<'_, T>) -> Result<ForecastMap<T>> {
    req.validate()?;
    if req.outside_window() {
        return Ok(ForecastMap::missing(req, Predictor::ClearSky));
    }
    let cs = req.clear_sky_at(req.target_time)?.clone();
    Ok(ForecastMap::new(req, Predictor::ClearSky, cs))
}

/// `models` is row-major, one entry per pixel; `None` yields missing output.
pub fn mlp_predict<T: Real>(req: &ForecastRequest<'_, T>, models: &[Option<PixelMlp<T>>]) -> Result<ForecastMap<T>> {
    req.validate()?;
    let spec = req.history.spec();
    if models.len() != spec.pixel_count() {
        return Err(Error::InvalidArgument(format!(
            "{} models for {} pixels",
            models.len(),
            spec.pixel_count()
        )));
    }
    if req.outside_window() {
        return Ok(ForecastMap::missing(req, Predictor::Mlp));
    }
    let last = req.last_index()?;
    let cs_next = req.clear_sky_at(req.target_time)?;
    let in_count = models.iter().flatten().map(|m| m.in_count).max().unwrap_or(0);

    // Clear-sky index lag frames, most recent first; absent lags stay `None`.
    let mut lags: Vec<Option<Array2<T>>> = Vec::with_capacity(in_count);
    for k in 0..in_count {
        let frame = if k <= last {
            let ts = req.history.timestamp(last - k);
            req.clear_sky.index_of(ts).map(|c| {
                Zip::from(req.history.frame(last - k))
                    .and(req.clear_sky.frame(c))
                    .map_collect(|&i, &cs| clamp_csi(csi_from_irradiance(i, cs)))
            })
        } else {
            None
        };
        lags.push(frame);
    }

    let width = spec.width;
    let mut values = Array2::from_elem(spec.shape(), T::missing());
    let mut x = Vec::with_capacity(in_count);
    for ((i, j), out) in values.indexed_iter_mut() {
        let cs = cs_next[(i, j)];
        if cs.is_missing() {
            continue;
        }
        if cs <= T::zero() {
            *out = T::zero();
            continue;
        }
        let Some(net) = &models[i * width + j] else { continue };
        x.clear();
        for lag in &lags[..net.in_count] {
            match lag {
                Some(f) if !f[(i, j)].is_missing() => x.push(f[(i, j)]),
                _ => break,
            }
        }
        if x.len() == net.in_count {
            *out = cs * net.predict_csi(&x);
        }
    }
    Ok(ForecastMap::new(req, Predictor::Mlp, values))
}

pub fn predict<T: Real>(
    predictor: Predictor,
    req: &ForecastRequest<'_, T>,
    models: Option<&[Option<PixelMlp<T>>]>,
) -> Result<ForecastMap<T>> {
    match predictor {
        Predictor::Persistence => persistence(req),
        Predictor::ScaledPersistence => scaled_persistence(req),
        Predictor::ClearSky => clear_sky_predictor(req),
        Predictor::Mlp => {
            let models = models.ok_or_else(|| Error::InvalidArgument("the network predictor needs trained models".into()))?;
            mlp_predict(req, models)
        }
    }
}

/// Forecasts for every step after each history frame: frame `k` of the
/// result targets `history.timestamp(k) + step`. The clear-sky stack must
/// cover one step past the history.
pub fn forecast_stack<T: Real>(
    predictor: Predictor,
    history: &MapStack<T>,
    clear_sky: &MapStack<T>,
    models: Option<&[Option<PixelMlp<T>>]>,
    window: Option<DaylightFilter>,
) -> Result<MapStack<T>> {
    forecast_span(predictor, history, clear_sky, models, window, 0..history.len())
}

/// Forecasts following history frames `frames`, each using all history up
/// to its own frame. Frames are computed in parallel on the current rayon
/// pool; the output does not depend on scheduling.
pub fn forecast_span<T: Real>(
    predictor: Predictor,
    history: &MapStack<T>,
    clear_sky: &MapStack<T>,
    models: Option<&[Option<PixelMlp<T>>]>,
    window: Option<DaylightFilter>,
    frames: std::ops::Range<usize>,
) -> Result<MapStack<T>> {
    if history.is_empty() {
        return Err(Error::InvalidArgument("history has no frames".into()));
    }
    if frames.is_empty() || frames.end > history.len() {
        return Err(Error::InvalidArgument(format!(
            "forecast frames {frames:?} outside history of {} frames",
            history.len()
        )));
    }
    let step = history.spec().step_s as i64;
    let start = frames.start;
    let out = frames
        .into_par_iter()
        .map(|k| {
            let req = ForecastRequest {
                history,
                clear_sky,
                target_time: history.timestamp(k) + step,
                window,
            };
            predict(predictor, &req, models).map(|m| m.values)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut spec = history.spec().clone();
    spec.t0 = history.timestamp(start) + step;
    MapStack::new(spec, StackKind::Irradiance, out)
}
