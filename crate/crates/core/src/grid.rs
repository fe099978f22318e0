//! Gridded hourly time series: raster geometry, map stacks, per-pixel series
//! and the daylight/threshold filter applied before scoring.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::num::Real;

/// Meters per degree of latitude on the reference sphere.
pub const METERS_PER_DEGREE: f64 = 111_320.0;

const SECONDS_PER_DAY: i64 = 86_400;

/// Raster geometry and time axis of a [`MapStack`].
///
/// Pixel `(0, 0)` is centered on `(origin_lat, origin_lon)`. Row index `i`
/// grows southward and column index `j` grows eastward, both in steps of
/// `pixel_size_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub pixel_size_m: f32,
    pub origin_lat: f64,
    pub origin_lon: f64,
    /// Per-pixel elevation in meters, row-major. `None` means sea level.
    pub elevation_m: Option<Vec<f64>>,
    /// Unix seconds of the first frame.
    pub t0: i64,
    pub step_s: u32,
}

impl GridSpec {
    pub fn new(width: usize, height: usize, origin_lat: f64, origin_lon: f64, t0: i64) -> Result<Self> {
        let spec = Self {
            width,
            height,
            pixel_size_m: 2500.0,
            origin_lat,
            origin_lon,
            elevation_m: None,
            t0,
            step_s: 3600,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_pixel_size(mut self, pixel_size_m: f32) -> Result<Self> {
        self.pixel_size_m = pixel_size_m;
        self.validate()?;
        Ok(self)
    }

    pub fn with_step(mut self, step_s: u32) -> Result<Self> {
        self.step_s = step_s;
        self.validate()?;
        Ok(self)
    }

    pub fn with_elevation(mut self, elevation_m: Vec<f64>) -> Result<Self> {
        self.elevation_m = Some(elevation_m);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid must be at least 1x1, got {}x{}",
                self.height, self.width
            )));
        }
        if !(self.pixel_size_m > 0.0) || !self.pixel_size_m.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "pixel size must be positive, got {}",
                self.pixel_size_m
            )));
        }
        if self.step_s == 0 {
            return Err(Error::InvalidArgument("time step must be positive".into()));
        }
        if let Some(elev) = &self.elevation_m {
            if elev.len() != self.pixel_count() {
                return Err(Error::InvalidArgument(format!(
                    "elevation raster has {} values for {} pixels",
                    elev.len(),
                    self.pixel_count()
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_lat(&self, i: usize) -> f64 {
        self.origin_lat - i as f64 * self.pixel_size_m as f64 / METERS_PER_DEGREE
    }

    pub fn pixel_lon(&self, j: usize) -> f64 {
        let scale = METERS_PER_DEGREE * self.origin_lat.to_radians().cos().max(1e-6);
        self.origin_lon + j as f64 * self.pixel_size_m as f64 / scale
    }

    pub fn pixel_elevation(&self, i: usize, j: usize) -> f64 {
        self.elevation_m
            .as_ref()
            .map_or(0.0, |e| e[i * self.width + j])
    }

    #[inline]
    pub fn timestamp(&self, frame: usize) -> i64 {
        self.t0 + frame as i64 * self.step_s as i64
    }

    pub fn check_pixel(&self, i: usize, j: usize) -> Result<()> {
        if i >= self.height || j >= self.width {
            return Err(Error::Index {
                i,
                j,
                height: self.height,
                width: self.width,
            });
        }
        Ok(())
    }

    /// Same raster geometry (dimensions, pixel size, anchor). Time axes may differ.
    pub fn same_raster(&self, other: &GridSpec) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.pixel_size_m == other.pixel_size_m
            && self.origin_lat == other.origin_lat
            && self.origin_lon == other.origin_lon
    }
}

/// What the values of a stack measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StackKind {
    /// Hourly irradiation in Wh/m².
    Irradiance,
    ClearSkyIndex,
    CloudIndex,
}

impl StackKind {
    pub fn code(self) -> u8 {
        match self {
            StackKind::Irradiance => 0,
            StackKind::ClearSkyIndex => 1,
            StackKind::CloudIndex => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(StackKind::Irradiance),
            1 => Some(StackKind::ClearSkyIndex),
            2 => Some(StackKind::CloudIndex),
            _ => None,
        }
    }
}

/// A time-ordered sequence of `height x width` rasters sharing one [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct MapStack<T> {
    spec: GridSpec,
    kind: StackKind,
    frames: Vec<Array2<T>>,
}

impl<T: Real> MapStack<T> {
    pub fn new(spec: GridSpec, kind: StackKind, frames: Vec<Array2<T>>) -> Result<Self> {
        spec.validate()?;
        for (k, f) in frames.iter().enumerate() {
            if f.dim() != spec.shape() {
                return Err(Error::InvalidArgument(format!(
                    "frame {k} has shape {:?}, grid is {:?}",
                    f.dim(),
                    spec.shape()
                )));
            }
            if kind == StackKind::Irradiance {
                if let Some(v) = f.iter().find(|v| !v.is_missing() && **v < T::zero()) {
                    return Err(Error::InvalidArgument(format!(
                        "frame {k} holds negative irradiance {v}"
                    )));
                }
            }
        }
        Ok(Self { spec, kind, frames })
    }

    /// Stack of `count` frames filled with `value`.
    pub fn filled(spec: GridSpec, kind: StackKind, count: usize, value: T) -> Result<Self> {
        let frames = vec![Array2::from_elem(spec.shape(), value); count];
        Self::new(spec, kind, frames)
    }

    /// Builds a stack by evaluating `f(frame, i, j)` at every cell.
    pub fn from_fn(
        spec: GridSpec,
        kind: StackKind,
        count: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let shape = spec.shape();
        let frames = (0..count)
            .map(|t| Array2::from_shape_fn(shape, |(i, j)| f(t, i, j)))
            .collect();
        Self::new(spec, kind, frames)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn kind(&self) -> StackKind {
        self.kind
    }

    pub fn frames(&self) -> &[Array2<T>] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &Array2<T> {
        &self.frames[t]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn timestamp(&self, t: usize) -> i64 {
        self.spec.timestamp(t)
    }

    pub fn timestamps(&self) -> Vec<i64> {
        (0..self.len()).map(|t| self.timestamp(t)).collect()
    }

    /// Frame index holding timestamp `ts`, if it lies on this stack's axis.
    pub fn index_of(&self, ts: i64) -> Option<usize> {
        let d = ts - self.spec.t0;
        let step = self.spec.step_s as i64;
        if d < 0 || d % step != 0 {
            return None;
        }
        let k = (d / step) as usize;
        (k < self.len()).then_some(k)
    }

    pub fn into_parts(self) -> (GridSpec, StackKind, Vec<Array2<T>>) {
        (self.spec, self.kind, self.frames)
    }

    /// Converts to another scalar width. Values pass through `f64`.
    pub fn cast<U: Real>(&self) -> MapStack<U> {
        MapStack {
            spec: self.spec.clone(),
            kind: self.kind,
            frames: self
                .frames
                .iter()
                .map(|f| {
                    f.mapv(|v| {
                        if v.is_missing() {
                            U::missing()
                        } else {
                            U::lit(v.as_f64())
                        }
                    })
                })
                .collect(),
        }
    }

    /// Copy of frames `[start, end)` with the time axis shifted accordingly.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.len() {
            return Err(Error::InvalidArgument(format!(
                "frame range {start}..{end} outside 0..{}",
                self.len()
            )));
        }
        let mut spec = self.spec.clone();
        spec.t0 = self.timestamp(start);
        Ok(Self {
            spec,
            kind: self.kind,
            frames: self.frames[start..end].to_vec(),
        })
    }

    /// Same dimensions, pixel size, anchor, time axis and frame count.
    pub fn check_aligned<U: Real>(&self, other: &MapStack<U>) -> Result<()> {
        let (a, b) = (&self.spec, other.spec());
        if !a.same_raster(b) {
            return Err(Error::Alignment(format!(
                "grids differ: {}x{} @ {} m vs {}x{} @ {} m",
                a.height, a.width, a.pixel_size_m, b.height, b.width, b.pixel_size_m
            )));
        }
        if a.t0 != b.t0 || a.step_s != b.step_s || self.len() != other.len() {
            return Err(Error::Alignment(format!(
                "time axes differ: t0 {} step {} x{} vs t0 {} step {} x{}",
                a.t0,
                a.step_s,
                self.len(),
                b.t0,
                b.step_s,
                other.len()
            )));
        }
        Ok(())
    }

    pub fn extract_series(&self, i: usize, j: usize) -> Result<PixelSeries<T>> {
        self.spec.check_pixel(i, j)?;
        Ok(PixelSeries {
            pixel: (i, j),
            values: self.frames.iter().map(|f| f[[i, j]]).collect(),
            timestamps: self.timestamps(),
            kind: self.kind,
        })
    }
}

/// Free-function form of [`MapStack::extract_series`].
pub fn extract_series<T: Real>(stack: &MapStack<T>, pixel: (usize, usize)) -> Result<PixelSeries<T>> {
    stack.extract_series(pixel.0, pixel.1)
}

/// One pixel's time series.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSeries<T> {
    pub pixel: (usize, usize),
    pub values: Vec<T>,
    pub timestamps: Vec<i64>,
    pub kind: StackKind,
}

impl<T: Real> PixelSeries<T> {
    pub fn new(pixel: (usize, usize), values: Vec<T>, timestamps: Vec<i64>, kind: StackKind) -> Result<Self> {
        if values.len() != timestamps.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values vs {} timestamps",
                values.len(),
                timestamps.len()
            )));
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("timestamps must be strictly increasing".into()));
        }
        Ok(Self {
            pixel,
            values,
            timestamps,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Constant sampling step, if the series has one.
    pub fn step(&self) -> Option<i64> {
        let first = self.timestamps.windows(2).next().map(|w| w[1] - w[0])?;
        self.timestamps
            .windows(2)
            .all(|w| w[1] - w[0] == first)
            .then_some(first)
    }
}

/// UTC hour of day, 0..24.
#[inline]
pub fn utc_hour(ts: i64) -> u32 {
    (ts.rem_euclid(SECONDS_PER_DAY) / 3600) as u32
}

/// Retains samples inside a UTC hour window and above an irradiance floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DaylightFilter {
    pub hour_min: u32,
    pub hour_max: u32,
    /// Wh/m².
    pub irradiance_floor: f64,
}

impl Default for DaylightFilter {
    fn default() -> Self {
        Self {
            hour_min: 8,
            hour_max: 18,
            irradiance_floor: 10.0,
        }
    }
}

impl DaylightFilter {
    pub fn new(hour_min: u32, hour_max: u32, irradiance_floor: f64) -> Result<Self> {
        if hour_min >= hour_max || hour_max > 24 {
            return Err(Error::InvalidArgument(format!(
                "hour window [{hour_min}, {hour_max}) must satisfy 0 <= min < max <= 24"
            )));
        }
        if !(irradiance_floor >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "irradiance floor must be >= 0, got {irradiance_floor}"
            )));
        }
        Ok(Self {
            hour_min,
            hour_max,
            irradiance_floor,
        })
    }

    /// Window and floor that keep every non-missing sample.
    pub fn all_day() -> Self {
        Self {
            hour_min: 0,
            hour_max: 24,
            irradiance_floor: 0.0,
        }
    }

    #[inline]
    pub fn in_window(&self, ts: i64) -> bool {
        let h = utc_hour(ts);
        self.hour_min <= h && h < self.hour_max
    }

    #[inline]
    pub fn accepts<T: Real>(&self, ts: i64, value: T) -> bool {
        !value.is_missing() && value.as_f64() >= self.irradiance_floor && self.in_window(ts)
    }

    pub fn apply<T: Real>(&self, series: &PixelSeries<T>) -> Result<PixelSeries<T>> {
        apply_filter(series, self)
    }
}

/// Subsequence of an irradiance series passing `filter`, original timestamps kept.
pub fn apply_filter<T: Real>(series: &PixelSeries<T>, filter: &DaylightFilter) -> Result<PixelSeries<T>> {
    if series.kind != StackKind::Irradiance {
        return Err(Error::InvalidArgument(format!(
            "daylight filter applies to irradiance series, got {:?}",
            series.kind
        )));
    }
    let (values, timestamps) = series
        .values
        .iter()
        .zip(&series.timestamps)
        .filter(|(v, ts)| filter.accepts(**ts, **v))
        .map(|(v, ts)| (*v, *ts))
        .unzip();
    Ok(PixelSeries {
        pixel: series.pixel,
        values,
        timestamps,
        kind: series.kind,
    })
}
