//! Stage-by-stage run over files in an output directory:
//! generate → lagselect → train → predict → evaluate → report.
//!
//! Every stage reads its inputs from the output directory, so each one can be
//! rerun alone. Every written file gets a `.meta` sidecar with the seed.
//!
//! | file | stage |
//! |------|-------|
//! | `truth.ssi`, `cloud.ssi`, `clearsky.ssi` | generate |
//! | `lags.csv`, `mi_curve.csv`, `lag_summary.txt` | lagselect |
//! | `models.bin`, `train_report.csv` | train |
//! | `forecast_<predictor>.ssi` | predict |
//! | `evaluation.csv`, `nrmse_pixel.csv`, `gamma_<predictor>.ssi`, `gamma_<predictor>.pgm` | evaluate |
//! | `report.txt` | report |
//!
//! The last `holdout_fraction` of the frames is never used for lag selection
//! or training; forecasts and scores cover it only.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Deserialize;

use crate::clearsky::{clear_sky_stack, ClearSkyParams};
use crate::error::{Error, Result};
use crate::grid::{DaylightFilter, GridSpec, MapStack, StackKind};
use crate::heliosat::csi_stack;
use crate::io::{import_csv_file, read_stack, write_sidecar, write_stack};
use crate::lag_select::{auto_mi_curve, grid_lag_statistics, LagSelection, MiCurve};
use crate::metrics::{gamma_passes, gamma_stack, nrmse_per_pixel, season_rows, write_pass_mask_pgm_file, write_report_csv, GammaConfig, IntensityTolerance, SeasonRow};
use crate::mlp::{pixel_seed, train, ModelBundle, TrainConfig, TrainReport};
use crate::num::Real;
use crate::predictors::{forecast_span, Predictor};
use crate::synthgen::{cloud_index_stack, compose_irradiance, CloudMode, CloudProcess};

/// Run settings. Read from a flat `key = value` file (TOML syntax); every
/// key is optional.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    /// 0 uses every available core.
    pub workers: usize,
    /// Predictor for `predict`; all four when unset.
    pub predictor: Option<String>,

    pub width: usize,
    pub height: usize,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub pixel_size_m: f32,
    pub elevation_m: f64,
    /// `YYYY-MM-DD`, midnight UTC.
    pub start: String,
    pub days: usize,
    /// Overrides `days` when set.
    pub frames: Option<usize>,
    pub step_s: u32,
    /// Irradiance as `t,i,j,value` rows instead of synthetic data.
    pub input_csv: Option<PathBuf>,

    pub linke_turbidity: f64,
    pub linke_turbidity_monthly: Option<Vec<f64>>,

    pub cloud_mode: String,
    pub ar1_phi: f64,
    pub noise_sigma: f64,
    pub cloud_mean: f64,
    pub blob_count: usize,
    pub blob_radius_px: f64,
    pub blob_drift_px: f64,
    pub blob_amplitude: f64,

    pub hour_min: u32,
    pub hour_max: u32,
    pub irradiance_floor: f64,
    /// Mark forecasts outside the hour window as missing.
    pub forecast_window: bool,

    pub tau_max: usize,
    pub mi_bins: Option<usize>,
    pub lag_min_rise: f64,

    pub in_count: usize,
    pub hidden_count: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub max_fail: usize,
    pub max_epochs: usize,
    pub holdout_fraction: f64,

    pub gamma_tol_r_m: f64,
    /// `fraction` or `absolute`.
    pub gamma_tol_i_mode: String,
    pub gamma_tol_i: f64,
    pub gamma_tol_i_floor: f64,
    pub gamma_search_radius: Option<usize>,
    pub gamma_intensity_only: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let filter = DaylightFilter::default();
        let lag = LagSelection::default();
        let cloud = CloudProcess::default();
        Self {
            out_dir: PathBuf::from("out"),
            seed: 42,
            workers: 0,
            predictor: None,
            width: 8,
            height: 8,
            origin_lat: 42.0,
            origin_lon: 9.0,
            pixel_size_m: 2500.0,
            elevation_m: 0.0,
            start: "2010-01-01".into(),
            days: 90,
            frames: None,
            step_s: 3600,
            input_csv: None,
            linke_turbidity: 3.0,
            linke_turbidity_monthly: None,
            cloud_mode: "ar1".into(),
            ar1_phi: cloud.ar1_phi,
            noise_sigma: cloud.noise_sigma,
            cloud_mean: cloud.mean,
            blob_count: cloud.blob_count,
            blob_radius_px: cloud.blob_radius_px,
            blob_drift_px: cloud.blob_drift_px,
            blob_amplitude: cloud.blob_amplitude,
            hour_min: filter.hour_min,
            hour_max: filter.hour_max,
            irradiance_floor: filter.irradiance_floor,
            forecast_window: true,
            tau_max: lag.tau_max,
            mi_bins: lag.bins,
            lag_min_rise: lag.min_rise_fraction,
            in_count: train.in_count,
            hidden_count: train.hidden_count,
            train_fraction: train.train_fraction,
            val_fraction: train.val_fraction,
            test_fraction: train.test_fraction,
            max_fail: train.max_fail,
            max_epochs: train.max_epochs,
            holdout_fraction: 0.25,
            gamma_tol_r_m: 2500.0,
            gamma_tol_i_mode: "fraction".into(),
            gamma_tol_i: 0.1,
            gamma_tol_i_floor: 10.0,
            gamma_search_radius: None,
            gamma_intensity_only: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Relative `input_csv` paths are taken relative to the config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(csv), Some(dir)) = (&cfg.input_csv, path.parent()) {
            if csv.is_relative() {
                cfg.input_csv = Some(dir.join(csv));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid_spec()?;
        self.clear_sky_params::<f64>()?;
        self.cloud_process()?.validate()?;
        self.daylight_filter()?;
        self.train_config().validate()?;
        self.gamma_config()?.validate()?;
        self.predictors()?;
        if self.frame_count() == 0 {
            return Err(Error::Config("run needs at least one frame".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config(format!("holdout_fraction {} outside [0, 1)", self.holdout_fraction)));
        }
        Ok(())
    }

    pub fn start_timestamp(&self) -> Result<i64> {
        let d = NaiveDate::parse_from_str(&self.start, "%Y-%m-%d")
            .map_err(|e| Error::Config(format!("start {:?}: {e}", self.start)))?;
        Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp())
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        let spec = GridSpec::new(self.width, self.height, self.origin_lat, self.origin_lon, self.start_timestamp()?)?
            .with_pixel_size(self.pixel_size_m)?
            .with_step(self.step_s)?;
        if self.elevation_m != 0.0 {
            return spec.with_elevation(vec![self.elevation_m; self.width * self.height]);
        }
        Ok(spec)
    }

    pub fn frame_count(&self) -> usize {
        self.frames
            .unwrap_or(self.days * 86_400 / self.step_s.max(1) as usize)
    }

    pub fn clear_sky_params<T: Real>(&self) -> Result<ClearSkyParams<T>> {
        match &self.linke_turbidity_monthly {
            Some(m) => {
                let arr: [f64; 12] = m
                    .as_slice()
                    .try_into()
                    .map_err(|_| Error::Config(format!("linke_turbidity_monthly needs 12 values, got {}", m.len())))?;
                ClearSkyParams::monthly(arr.map(T::lit))
            }
            None => ClearSkyParams::constant(T::lit(self.linke_turbidity)),
        }
    }

    pub fn cloud_process(&self) -> Result<CloudProcess> {
        Ok(CloudProcess {
            mode: self.cloud_mode.parse::<CloudMode>()?,
            ar1_phi: self.ar1_phi,
            noise_sigma: self.noise_sigma,
            mean: self.cloud_mean,
            blob_count: self.blob_count,
            blob_radius_px: self.blob_radius_px,
            blob_drift_px: self.blob_drift_px,
            blob_amplitude: self.blob_amplitude,
            seed: self.seed,
        })
    }

    pub fn daylight_filter(&self) -> Result<DaylightFilter> {
        DaylightFilter::new(self.hour_min, self.hour_max, self.irradiance_floor)
    }

    pub fn lag_selection(&self) -> LagSelection {
        LagSelection {
            tau_max: self.tau_max,
            bins: self.mi_bins,
            min_rise_fraction: self.lag_min_rise,
            ..LagSelection::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            in_count: self.in_count,
            hidden_count: self.hidden_count,
            train_fraction: self.train_fraction,
            val_fraction: self.val_fraction,
            test_fraction: self.test_fraction,
            max_fail: self.max_fail,
            max_epochs: self.max_epochs,
            ..TrainConfig::default()
        }
    }

    pub fn gamma_config(&self) -> Result<GammaConfig> {
        let tol_i = match self.gamma_tol_i_mode.as_str() {
            "fraction" => IntensityTolerance::Fraction {
                fraction: self.gamma_tol_i,
                floor: self.gamma_tol_i_floor,
            },
            "absolute" => IntensityTolerance::Absolute(self.gamma_tol_i),
            m => return Err(Error::Config(format!("gamma_tol_i_mode {m:?} is neither fraction nor absolute"))),
        };
        Ok(GammaConfig {
            tol_r_m: self.gamma_tol_r_m,
            tol_i,
            search_radius: self.gamma_search_radius,
            intensity_only: self.gamma_intensity_only,
        })
    }

    pub fn predictors(&self) -> Result<Vec<Predictor>> {
        match &self.predictor {
            Some(p) => Ok(vec![p.parse()?]),
            None => Ok(Predictor::ALL.to_vec()),
        }
    }

    /// First frame of the scored period; at least 1 so a forecast exists.
    pub fn holdout_start(&self, frames: usize) -> usize {
        let held = (frames as f64 * self.holdout_fraction).round() as usize;
        frames.saturating_sub(held).max(1)
    }
}

pub const TRUTH_FILE: &str = "truth.ssi";
pub const CLOUD_FILE: &str = "cloud.ssi";
pub const CLEAR_SKY_FILE: &str = "clearsky.ssi";
pub const LAGS_FILE: &str = "lags.csv";
pub const MI_CURVE_FILE: &str = "mi_curve.csv";
pub const LAG_SUMMARY_FILE: &str = "lag_summary.txt";
pub const MODELS_FILE: &str = "models.bin";
pub const TRAIN_REPORT_FILE: &str = "train_report.csv";
pub const EVALUATION_FILE: &str = "evaluation.csv";
pub const NRMSE_PIXEL_FILE: &str = "nrmse_pixel.csv";
pub const REPORT_FILE: &str = "report.txt";

pub fn forecast_file(p: Predictor) -> String {
    format!("forecast_{}.ssi", p.id())
}

pub fn gamma_file(p: Predictor) -> String {
    format!("gamma_{}.ssi", p.id())
}

pub fn gamma_mask_file(p: Predictor) -> String {
    format!("gamma_{}.pgm", p.id())
}

/// Stage runner bound to one configuration.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub cfg: RunConfig,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn input(&self, name: &str, producer: &str) -> Result<PathBuf> {
        let p = self.out(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::InvalidArgument(format!(
                "missing input {}; run `{producer}` first",
                p.display()
            )))
        }
    }

    fn meta(&self, path: &Path, stage: &str, extra: &[(&str, String)]) -> Result<()> {
        let mut entries = vec![("stage", stage.to_string()), ("seed", self.cfg.seed.to_string())];
        entries.extend(extra.iter().cloned());
        write_sidecar(path, &entries)
    }

    /// Runs `f` on a pool of `workers` threads.
    fn pooled<R: Send>(&self, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(f)
    }

    fn staged<R: Send>(&self, stage: &str, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
        fs::create_dir_all(&self.cfg.out_dir).map_err(|e| Error::from(e).in_stage(stage))?;
        self.pooled(f).map_err(|e| e.in_stage(stage))
    }

    pub fn generate(&self) -> Result<Vec<PathBuf>> {
        self.staged("generate", || {
            let spec = self.cfg.grid_spec()?;
            let (truth, cloud) = match &self.cfg.input_csv {
                Some(csv) => {
                    if !csv.is_file() {
                        return Err(Error::InvalidArgument(format!("input_csv {} not found", csv.display())));
                    }
                    (import_csv_file::<f64>(csv, spec.clone(), StackKind::Irradiance)?, None)
                }
                None => {
                    let n = self.cfg.frame_count();
                    let cs = clear_sky_stack(&spec, n, &self.cfg.clear_sky_params::<f64>()?)?;
                    let cloud = cloud_index_stack::<f64>(&spec, n, &self.cfg.cloud_process()?)?;
                    (compose_irradiance(&cloud, &cs)?, Some(cloud))
                }
            };
            // One frame past the data so the last hour has a forecast target.
            let cs = clear_sky_stack(&spec, truth.len() + 1, &self.cfg.clear_sky_params::<f64>()?)?;
            let mut written = Vec::new();
            let mut put = |name: &str, stack: &MapStack<f64>, source: &str| -> Result<()> {
                let p = self.out(name);
                write_stack(stack, &p)?;
                self.meta(&p, "generate", &[("source", source.to_string()), ("frames", stack.len().to_string())])?;
                written.push(p);
                Ok(())
            };
            let source = if self.cfg.input_csv.is_some() { "csv" } else { self.cfg.cloud_mode.as_str() };
            put(TRUTH_FILE, &truth, source)?;
            if let Some(c) = &cloud {
                put(CLOUD_FILE, c, source)?;
            } else if self.out(CLOUD_FILE).exists() {
                fs::remove_file(self.out(CLOUD_FILE))?;
            }
            put(CLEAR_SKY_FILE, &cs, "clear_sky_model")?;
            Ok(written)
        })
    }

    fn load_inputs(&self, stage: &str) -> Result<(MapStack<f64>, MapStack<f64>)> {
        let truth: MapStack<f64> = read_stack(self.input(TRUTH_FILE, "generate")?)?;
        let cs: MapStack<f64> = read_stack(self.input(CLEAR_SKY_FILE, "generate")?)?;
        if !truth.spec().same_raster(cs.spec()) || cs.len() < truth.len() + 1 || cs.spec().t0 != truth.spec().t0 {
            return Err(Error::Alignment(format!("{stage}: truth and clear-sky stacks do not line up")));
        }
        Ok((truth, cs))
    }

    /// Clear-sky index of the training period.
    fn training_csi(&self, truth: &MapStack<f64>, cs: &MapStack<f64>) -> Result<MapStack<f64>> {
        let h0 = self.cfg.holdout_start(truth.len());
        csi_stack(&truth.slice_frames(0, h0)?, &cs.slice_frames(0, h0)?)
    }

    pub fn lagselect(&self) -> Result<Vec<PathBuf>> {
        self.staged("lagselect", || {
            let (truth, cs) = self.load_inputs("lagselect")?;
            let csi = self.training_csi(&truth, &cs)?;
            let spec = csi.spec().clone();
            let lag_cfg = self.cfg.lag_selection();
            let curves: Vec<MiCurve<f64>> = (0..spec.pixel_count())
                .into_par_iter()
                .map(|idx| auto_mi_curve(&csi.extract_series(idx / spec.width, idx % spec.width)?, &lag_cfg))
                .collect::<Result<_>>()?;

            let lags_path = self.out(LAGS_FILE);
            let mut w = csv::Writer::from_path(&lags_path)?;
            w.write_record(["i", "j", "selected_lag", "found_minimum"])?;
            for c in &curves {
                w.write_record([
                    c.pixel.0.to_string(),
                    c.pixel.1.to_string(),
                    c.selected_lag.to_string(),
                    c.found_minimum.to_string(),
                ])?;
            }
            w.flush()?;
            self.meta(&lags_path, "lagselect", &[("tau_max", lag_cfg.tau_max.to_string())])?;

            let centre = (spec.height / 2) * spec.width + spec.width / 2;
            let curve_path = self.out(MI_CURVE_FILE);
            let mut f = BufWriter::new(fs::File::create(&curve_path)?);
            curves[centre].write_csv(&mut f)?;
            f.flush()?;
            let (ci, cj) = curves[centre].pixel;
            self.meta(&curve_path, "lagselect", &[("pixel", format!("{ci},{cj}"))])?;

            let stats = grid_lag_statistics(&curves)?;
            let found = curves.iter().filter(|c| c.found_minimum).count();
            let summary_path = self.out(LAG_SUMMARY_FILE);
            fs::write(
                &summary_path,
                format!(
                    "count={}\nfound_minimum={}\nmin={}\nmax={}\nmean={:.4}\nmedian={}\nstddev={:.4}\n",
                    stats.count, found, stats.min, stats.max, stats.mean, stats.median, stats.stddev
                ),
            )?;
            self.meta(&summary_path, "lagselect", &[])?;
            Ok(vec![lags_path, curve_path, summary_path])
        })
    }

    pub fn train(&self) -> Result<Vec<PathBuf>> {
        self.staged("train", || {
            let (truth, cs) = self.load_inputs("train")?;
            let csi = self.training_csi(&truth, &cs)?;
            let spec = csi.spec().clone();
            let tcfg = self.cfg.train_config();
            let seed = self.cfg.seed;
            type Trained = std::result::Result<(crate::mlp::PixelMlp<f64>, TrainReport<f64>), String>;
            let results: Vec<Trained> = (0..spec.pixel_count())
                .into_par_iter()
                .map(|idx| {
                    let series = csi.extract_series(idx / spec.width, idx % spec.width)?;
                    Ok(match train(&series, &tcfg, pixel_seed(seed, idx)) {
                        Ok(r) => Ok(r),
                        Err(e @ (Error::InsufficientData(_) | Error::Diverged(_))) => Err(e.to_string()),
                        Err(e) => return Err(e),
                    })
                })
                .collect::<Result<_>>()?;

            let report_path = self.out(TRAIN_REPORT_FILE);
            let mut w = csv::Writer::from_path(&report_path)?;
            w.write_record(["i", "j", "status", "epochs", "best_epoch", "train_mse", "val_mse", "stop_reason"])?;
            for (idx, r) in results.iter().enumerate() {
                let (i, j) = ((idx / spec.width).to_string(), (idx % spec.width).to_string());
                match r {
                    Ok((_, rep)) => w.write_record([
                        i,
                        j,
                        "trained".into(),
                        rep.epochs.to_string(),
                        rep.best_epoch.to_string(),
                        format!("{:.9e}", rep.train_mse),
                        format!("{:.9e}", rep.val_mse),
                        format!("{:?}", rep.stop_reason),
                    ])?,
                    Err(msg) => w.write_record([i, j, "skipped".into(), String::new(), String::new(), String::new(), String::new(), msg.clone()])?,
                }
            }
            w.flush()?;
            let trained = results.iter().filter(|r| r.is_ok()).count();
            self.meta(&report_path, "train", &[("trained", trained.to_string())])?;

            let bundle = ModelBundle {
                width: spec.width,
                height: spec.height,
                in_count: tcfg.in_count,
                hidden_count: tcfg.hidden_count,
                seed,
                train_start: csi.timestamp(0),
                train_end: csi.timestamp(csi.len() - 1),
                models: results.into_iter().map(|r| r.ok().map(|(m, _)| m)).collect(),
            };
            let models_path = self.out(MODELS_FILE);
            bundle.write(&models_path)?;
            self.meta(&models_path, "train", &[("trained", trained.to_string()), ("pixels", spec.pixel_count().to_string())])?;
            Ok(vec![models_path, report_path])
        })
    }

    pub fn predict(&self) -> Result<Vec<PathBuf>> {
        self.staged("predict", || {
            let (truth, cs) = self.load_inputs("predict")?;
            let h0 = self.cfg.holdout_start(truth.len());
            let window = if self.cfg.forecast_window { Some(self.cfg.daylight_filter()?) } else { None };
            let mut written = Vec::new();
            for p in self.cfg.predictors()? {
                let bundle = if p == Predictor::Mlp {
                    let b = ModelBundle::<f64>::read(self.input(MODELS_FILE, "train")?)?;
                    if (b.width, b.height) != (truth.spec().width, truth.spec().height) {
                        return Err(Error::Alignment("model bundle grid differs from the data grid".into()));
                    }
                    Some(b)
                } else {
                    None
                };
                let models = bundle.as_ref().map(|b| b.models.as_slice());
                // Targets h0 ..= len: the last one lies one step past the data.
                let forecast = forecast_span(p, &truth, &cs, models, window, h0 - 1..truth.len())?;
                let path = self.out(&forecast_file(p));
                write_stack(&forecast, &path)?;
                self.meta(
                    &path,
                    "predict",
                    &[
                        ("predictor", p.id().to_string()),
                        ("target_time", forecast.timestamp(0).to_string()),
                        ("frames", forecast.len().to_string()),
                    ],
                )?;
                written.push(path);
            }
            Ok(written)
        })
    }

    /// Forecast stacks present in the output directory, cut to the scored
    /// period and checked against the measurements.
    fn load_forecasts(&self, measured: &MapStack<f64>) -> Result<Vec<(Predictor, MapStack<f64>)>> {
        let mut out = Vec::new();
        for p in Predictor::ALL {
            let path = self.out(&forecast_file(p));
            if !path.is_file() {
                continue;
            }
            let f: MapStack<f64> = read_stack(&path)?;
            if f.len() < measured.len() {
                return Err(Error::Alignment(format!("{} has {} frames, need {}", path.display(), f.len(), measured.len())));
            }
            let f = f.slice_frames(0, measured.len())?;
            measured
                .check_aligned(&f)
                .map_err(|e| Error::Alignment(format!("{}: {e}", path.display())))?;
            out.push((p, f));
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument("no forecast files found; run `predict` first".into()));
        }
        Ok(out)
    }

    pub fn evaluate(&self) -> Result<Vec<PathBuf>> {
        self.staged("evaluate", || {
            let truth: MapStack<f64> = read_stack(self.input(TRUTH_FILE, "generate")?)?;
            let h0 = self.cfg.holdout_start(truth.len());
            let measured = truth.slice_frames(h0, truth.len())?;
            if measured.is_empty() {
                return Err(Error::InsufficientData("scored period has no frames".into()));
            }
            let forecasts = self.load_forecasts(&measured)?;
            let filter = self.cfg.daylight_filter()?;
            let gcfg = self.cfg.gamma_config()?;
            let mut written = Vec::new();
            let mut rows: Vec<SeasonRow> = Vec::new();
            let mut per_pixel = Vec::new();
            for (p, f) in &forecasts {
                let g = gamma_stack(&measured, f, &gcfg, &filter)?;
                rows.extend(season_rows(*p, &measured, f, &g, &filter)?);
                per_pixel.push(nrmse_per_pixel(&measured, f, &filter)?);

                let gpath = self.out(&gamma_file(*p));
                write_stack(&g, &gpath)?;
                self.meta(&gpath, "evaluate", &[("predictor", p.id().to_string()), ("target_time", g.timestamp(0).to_string())])?;
                written.push(gpath);

                // Pass mask of the best-covered hour.
                let (k, _) = g
                    .frames()
                    .iter()
                    .enumerate()
                    .map(|(k, fr)| (k, fr.iter().filter(|v| !v.is_missing()).count()))
                    .fold((0, 0), |best, c| if c.1 > best.1 { c } else { best });
                let mask = g.frame(k).map(|v| (!v.is_missing()).then(|| gamma_passes(*v)));
                let mpath = self.out(&gamma_mask_file(*p));
                write_pass_mask_pgm_file(&mask, &mpath)?;
                self.meta(&mpath, "evaluate", &[("predictor", p.id().to_string()), ("target_time", g.timestamp(k).to_string())])?;
                written.push(mpath);
            }

            let epath = self.out(EVALUATION_FILE);
            write_report_csv(&rows, fs::File::create(&epath)?)?;
            self.meta(&epath, "evaluate", &[("frames", measured.len().to_string())])?;
            written.push(epath);

            let ppath = self.out(NRMSE_PIXEL_FILE);
            let mut w = csv::Writer::from_path(&ppath)?;
            let mut header = vec!["i".to_string(), "j".to_string()];
            header.extend(forecasts.iter().map(|(p, _)| p.id().to_string()));
            w.write_record(&header)?;
            let spec = measured.spec();
            for i in 0..spec.height {
                for j in 0..spec.width {
                    let mut rec = vec![i.to_string(), j.to_string()];
                    rec.extend(per_pixel.iter().map(|a| {
                        let v = a[(i, j)];
                        if v.is_missing() { String::new() } else { format!("{v:.6}") }
                    }));
                    w.write_record(&rec)?;
                }
            }
            w.flush()?;
            self.meta(&ppath, "evaluate", &[])?;
            written.push(ppath);
            Ok(written)
        })
    }

    pub fn report(&self) -> Result<Vec<PathBuf>> {
        self.staged("report", || {
            let rows = crate::metrics::read_report_csv(fs::File::open(self.input(EVALUATION_FILE, "evaluate")?)?)?;
            let mut text = String::new();
            writeln!(text, "Next-hour forecast comparison on the scored period").ok();
            writeln!(text, "nRMSE over all retained pixel-hours; g_xx = mean gamma, GP_xx = gamma passing rate (%) per season").ok();
            writeln!(text).ok();
            text.push_str(&crate::metrics::format_table(&rows));
            let path = self.out(REPORT_FILE);
            fs::write(&path, text)?;
            self.meta(&path, "report", &[])?;
            Ok(vec![path])
        })
    }

    pub fn run_all(&self) -> Result<Vec<PathBuf>> {
        let mut all = self.generate()?;
        all.extend(self.lagselect()?);
        if self.cfg.predictors()?.contains(&Predictor::Mlp) {
            all.extend(self.train()?);
        }
        all.extend(self.predict()?);
        all.extend(self.evaluate()?);
        all.extend(self.report()?);
        Ok(all)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parses_flat_keys() {
        let cfg = RunConfig::from_toml_str("linke_turbidity = 3.5\nwidth = 4\nseed = 7\n").unwrap();
        assert_eq!(cfg.linke_turbidity, 3.5);
        assert_eq!(cfg.width, 4);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.height, 8);
        let m = RunConfig::from_toml_str("linke_turbidity_monthly = [2,2,3,3,4,4,4,4,3,3,2,2]").unwrap();
        assert!(matches!(
            m.clear_sky_params::<f64>().unwrap().linke,
            crate::clearsky::LinkeTurbidity::Monthly(_)
        ));
    }

    #[test]
    fn config_rejects_bad_input() {
        assert!(matches!(RunConfig::from_toml_str("wdith = 3"), Err(Error::Config(_))));
        let cfg = RunConfig::from_toml_str("linke_turbidity_monthly = [1, 2]").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::from_toml_str("predictor = \"arma\"").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::from_toml_str("start = \"2010-13-01\"").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn frames_and_holdout() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.frame_count(), 90 * 24);
        assert_eq!(cfg.holdout_start(100), 75);
        assert_eq!(cfg.holdout_start(1), 1);
        assert_eq!(cfg.start_timestamp().unwrap(), 1_262_304_000);
    }

    #[test]
    fn missing_inputs_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            out_dir: dir.path().to_path_buf(),
            ..RunConfig::default()
        };
        let err = Pipeline::new(cfg).unwrap().predict().unwrap_err();
        assert!(err.to_string().contains("run `generate` first"), "{err}");
    }
}
