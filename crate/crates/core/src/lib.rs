//! Next-hour forecasting of gridded solar irradiance maps.
//!
//! Gridded hourly irradiance is handled as a stack of rasters ([`MapStack`]);
//! every pixel is an independent time series. The crate provides a clear-sky
//! model, clear-sky index transforms, four pixel-wise predictors (persistence,
//! scaled persistence, clear sky, and a small per-pixel neural network trained
//! with Levenberg-Marquardt), mutual-information lag selection, and map
//! verification through nRMSE and the gamma index.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`). The `*F64`/`*F32`
//! aliases below fix the scalar for callers that do not care.

pub mod clearsky;
pub mod error;
pub mod grid;
pub mod heliosat;
pub mod io;
pub mod lag_select;
pub mod metrics;
pub mod mlp;
pub mod num;
pub mod pipeline;
pub mod predictors;
pub mod synthgen;

pub use error::{Error, Result};
pub use grid::{DaylightFilter, GridSpec, MapStack, PixelSeries, StackKind};
pub use metrics::{GammaConfig, GammaResult};
pub use mlp::{ModelBundle, PixelMlp, TrainConfig};
pub use num::Real;
pub use pipeline::{Pipeline, RunConfig};
pub use predictors::{ForecastMap, ForecastRequest, Predictor};
pub use synthgen::CloudProcess;

pub type MapStackF64 = MapStack<f64>;
pub type MapStackF32 = MapStack<f32>;
pub type PixelSeriesF64 = PixelSeries<f64>;
pub type PixelSeriesF32 = PixelSeries<f32>;
pub type ClearSkyParamsF64 = clearsky::ClearSkyParams<f64>;
pub type ClearSkyParamsF32 = clearsky::ClearSkyParams<f32>;
pub type PixelMlpF64 = PixelMlp<f64>;
pub type PixelMlpF32 = PixelMlp<f32>;
pub type ForecastMapF64 = ForecastMap<f64>;
pub type ModelBundleF64 = ModelBundle<f64>;
