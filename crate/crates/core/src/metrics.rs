//! Map verification: pixel error, pooled nRMSE, the gamma index and its
//! passing rate, and the per-season comparison table.
//!
//! The gamma value of a reference pixel `m` is
//! `min_p sqrt(r(p, m)² / tol_r² + (E_p - R_m)² / tol_i²)` over evaluated
//! pixels `p` within the search window, `r` being the centre distance in
//! metres. A pixel passes when its gamma is at most 1.
//!
//! Sums are accumulated in `f64` in a fixed order whatever the input scalar.

use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Datelike};
use ndarray::{Array2, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{DaylightFilter, GridSpec, MapStack, StackKind};
use crate::num::Real;
use crate::predictors::Predictor;

/// `measured - predicted` per pixel-hour.
pub fn pixel_error<T: Real>(measured: &MapStack<T>, predicted: &MapStack<T>) -> Result<MapStack<T>> {
    measured.check_aligned(predicted)?;
    let frames = measured
        .frames()
        .iter()
        .zip(predicted.frames())
        .map(|(m, p)| {
            Zip::from(m).and(p).map_collect(|&a, &b| {
                if a.is_missing() || b.is_missing() {
                    T::missing()
                } else {
                    a - b
                }
            })
        })
        .collect();
    // Errors are signed, so the irradiance kind (non-negative) does not fit.
    MapStack::new(measured.spec().clone(), StackKind::CloudIndex, frames)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSummary {
    /// Percent of the mean measured value.
    pub nrmse: f64,
    /// Mean of `measured - predicted`.
    pub mean_error: f64,
    pub n_samples: usize,
}

#[derive(Debug, Default, Clone, Copy)]
struct ErrorAccumulator {
    sq: f64,
    err: f64,
    measured: f64,
    n: usize,
}

impl ErrorAccumulator {
    fn push(&mut self, m: f64, p: f64) {
        let e = m - p;
        self.sq += e * e;
        self.err += e;
        self.measured += m;
        self.n += 1;
    }

    fn merge(&mut self, o: &ErrorAccumulator) {
        self.sq += o.sq;
        self.err += o.err;
        self.measured += o.measured;
        self.n += o.n;
    }

    fn summary(&self) -> Result<ErrorSummary> {
        if self.n == 0 {
            return Err(Error::InsufficientData("no pixel-hour survives filtering".into()));
        }
        let n = self.n as f64;
        let mean_measured = self.measured / n;
        if mean_measured == 0.0 {
            return Err(Error::Degenerate("mean measured irradiance is zero".into()));
        }
        Ok(ErrorSummary {
            nrmse: 100.0 * (self.sq / n).sqrt() / mean_measured,
            mean_error: self.err / n,
            n_samples: self.n,
        })
    }
}

fn accumulate_frame<T: Real>(acc: &mut ErrorAccumulator, ts: i64, m: &Array2<T>, p: &Array2<T>, filter: &DaylightFilter) {
    if !filter.in_window(ts) {
        return;
    }
    for (&a, &b) in m.iter().zip(p) {
        if filter.accepts(ts, a) && !b.is_missing() {
            acc.push(a.as_f64(), b.as_f64());
        }
    }
}

/// Pooled over every retained pixel-hour. Samples are retained when the
/// measured value passes `filter` and the prediction is not missing.
pub fn error_summary<T: Real>(measured: &MapStack<T>, predicted: &MapStack<T>, filter: &DaylightFilter) -> Result<ErrorSummary> {
    measured.check_aligned(predicted)?;
    let mut acc = ErrorAccumulator::default();
    for t in 0..measured.len() {
        accumulate_frame(&mut acc, measured.timestamp(t), measured.frame(t), predicted.frame(t), filter);
    }
    acc.summary()
}

pub fn nrmse<T: Real>(measured: &MapStack<T>, predicted: &MapStack<T>, filter: &DaylightFilter) -> Result<f64> {
    error_summary(measured, predicted, filter).map(|s| s.nrmse)
}

/// nRMSE of each pixel's own series; missing where undefined.
pub fn nrmse_per_pixel<T: Real>(measured: &MapStack<T>, predicted: &MapStack<T>, filter: &DaylightFilter) -> Result<Array2<f64>> {
    measured.check_aligned(predicted)?;
    let mut acc = Array2::from_elem(measured.spec().shape(), ErrorAccumulator::default());
    for t in 0..measured.len() {
        let ts = measured.timestamp(t);
        if !filter.in_window(ts) {
            continue;
        }
        Zip::from(&mut acc)
            .and(measured.frame(t))
            .and(predicted.frame(t))
            .for_each(|a, &m, &p| {
                if filter.accepts(ts, m) && !p.is_missing() {
                    a.push(m.as_f64(), p.as_f64());
                }
            });
    }
    Ok(acc.map(|a| a.summary().map(|s| s.nrmse).unwrap_or(f64::missing())))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntensityTolerance {
    /// Wh/m².
    Absolute(f64),
    /// `max(fraction × reference, floor)`.
    Fraction { fraction: f64, floor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaConfig {
    pub tol_r_m: f64,
    pub tol_i: IntensityTolerance,
    /// Window radius in pixels; defaults to `3 × ceil(tol_r / pixel size)`.
    pub search_radius: Option<usize>,
    /// Compare each pixel only with itself, ignoring distance.
    pub intensity_only: bool,
}

impl Default for GammaConfig {
    fn default() -> Self {
        Self {
            tol_r_m: 2500.0,
            tol_i: IntensityTolerance::Fraction {
                fraction: 0.1,
                floor: 10.0,
            },
            search_radius: None,
            intensity_only: false,
        }
    }
}

impl GammaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_r_m > 0.0 && self.tol_r_m.is_finite()) {
            return Err(Error::InvalidArgument(format!("distance tolerance must be > 0, got {}", self.tol_r_m)));
        }
        let ok = match self.tol_i {
            IntensityTolerance::Absolute(v) => v > 0.0 && v.is_finite(),
            IntensityTolerance::Fraction { fraction, floor } => fraction > 0.0 && floor > 0.0 && fraction.is_finite() && floor.is_finite(),
        };
        if !ok {
            return Err(Error::InvalidArgument(format!("intensity tolerance must be > 0: {:?}", self.tol_i)));
        }
        if self.search_radius == Some(0) {
            return Err(Error::InvalidArgument("search radius must be >= 1".into()));
        }
        Ok(())
    }

    pub fn effective_radius(&self, pixel_size_m: f64) -> usize {
        self.search_radius
            .unwrap_or_else(|| 3 * (self.tol_r_m / pixel_size_m).ceil() as usize)
            .max(1)
    }

    #[inline]
    pub fn intensity_tolerance(&self, reference: f64) -> f64 {
        match self.tol_i {
            IntensityTolerance::Absolute(v) => v,
            IntensityTolerance::Fraction { fraction, floor } => (fraction * reference).max(floor),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaResult {
    /// Missing where the reference is missing or no evaluated pixel was found.
    pub gamma: Array2<f64>,
    /// `None` for pixels without a gamma value.
    pub pass_mask: Array2<Option<bool>>,
    /// Percent; `None` when no pixel was evaluated.
    pub passing_rate: Option<f64>,
    pub evaluated: usize,
    pub passes: usize,
}

impl GammaResult {
    pub fn mean_gamma(&self) -> Option<f64> {
        let (s, n) = self
            .gamma
            .iter()
            .filter(|g| !g.is_missing())
            .fold((0.0, 0usize), |(s, n), g| (s + g, n + 1));
        (n > 0).then(|| s / n as f64)
    }
}

#[inline]
pub fn gamma_passes(gamma: f64) -> bool {
    gamma <= 1.0
}

/// Window offsets `(di, dj, r²/tol_r²)` inside the radius, nearest first.
fn window_offsets(radius: usize, pixel_size_m: f64, tol_r_m: f64) -> Vec<(isize, isize, f64)> {
    let r = radius as isize;
    let mut out: Vec<_> = (-r..=r)
        .flat_map(|di| (-r..=r).map(move |dj| (di, dj)))
        .filter(|(di, dj)| di * di + dj * dj <= r * r)
        .map(|(di, dj)| {
            let d2 = ((di * di + dj * dj) as f64) * pixel_size_m * pixel_size_m;
            (di, dj, d2 / (tol_r_m * tol_r_m))
        })
        .collect();
    out.sort_by(|a, b| a.2.total_cmp(&b.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    out
}

pub fn gamma_map<T: Real>(reference: &Array2<T>, evaluated: &Array2<T>, cfg: &GammaConfig, spec: &GridSpec) -> Result<GammaResult> {
    cfg.validate()?;
    if reference.dim() != evaluated.dim() || reference.dim() != spec.shape() {
        return Err(Error::Alignment(format!(
            "gamma rasters {:?} and {:?} on grid {:?}",
            reference.dim(),
            evaluated.dim(),
            spec.shape()
        )));
    }
    let (h, w) = spec.shape();
    let ps = spec.pixel_size_m as f64;
    let offsets = if cfg.intensity_only {
        vec![(0, 0, 0.0)]
    } else {
        window_offsets(cfg.effective_radius(ps), ps, cfg.tol_r_m)
    };

    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|i| {
            (0..w)
                .map(|j| {
                    let r = reference[(i, j)];
                    if r.is_missing() {
                        return f64::missing();
                    }
                    let r = r.as_f64();
                    let tol = cfg.intensity_tolerance(r);
                    let mut best = f64::INFINITY;
                    for &(di, dj, d2) in &offsets {
                        if d2 >= best {
                            break;
                        }
                        let (pi, pj) = (i as isize + di, j as isize + dj);
                        if pi < 0 || pj < 0 || pi >= h as isize || pj >= w as isize {
                            continue;
                        }
                        let e = evaluated[(pi as usize, pj as usize)];
                        if e.is_missing() {
                            continue;
                        }
                        let di = (e.as_f64() - r) / tol;
                        best = best.min(d2 + di * di);
                    }
                    if best.is_finite() {
                        best.sqrt()
                    } else {
                        f64::missing()
                    }
                })
                .collect()
        })
        .collect();

    let gamma = Array2::from_shape_vec((h, w), rows.into_iter().flatten().collect()).expect("raster shape");
    let pass_mask = gamma.map(|g| (!g.is_missing()).then(|| gamma_passes(*g)));
    let evaluated_n = pass_mask.iter().filter(|p| p.is_some()).count();
    let passes = pass_mask.iter().filter(|p| **p == Some(true)).count();
    Ok(GammaResult {
        gamma,
        pass_mask,
        passing_rate: (evaluated_n > 0).then(|| 100.0 * passes as f64 / evaluated_n as f64),
        evaluated: evaluated_n,
        passes,
    })
}

/// Gamma of every frame; reference pixel-hours rejected by `filter` are
/// left missing. The result is a dimensionless stack.
pub fn gamma_stack<T: Real>(
    measured: &MapStack<T>,
    predicted: &MapStack<T>,
    cfg: &GammaConfig,
    filter: &DaylightFilter,
) -> Result<MapStack<f64>> {
    measured.check_aligned(predicted)?;
    let spec = measured.spec();
    let frames = (0..measured.len())
        .map(|t| {
            let ts = measured.timestamp(t);
            let reference = measured.frame(t).map(|&v| if filter.accepts(ts, v) { v } else { T::missing() });
            gamma_map(&reference, predicted.frame(t), cfg, spec).map(|g| g.gamma)
        })
        .collect::<Result<Vec<_>>>()?;
    MapStack::new(spec.clone(), StackKind::ClearSkyIndex, frames)
}

/// Binary P5 graymap: 255 pass, 0 fail, 128 no value.
pub fn write_pass_mask_pgm<W: Write>(mask: &Array2<Option<bool>>, w: &mut W) -> Result<()> {
    let (h, wd) = mask.dim();
    write!(w, "P5\n{wd} {h}\n255\n")?;
    let bytes: Vec<u8> = mask
        .iter()
        .map(|p| match p {
            Some(true) => 255,
            Some(false) => 0,
            None => 128,
        })
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn write_pass_mask_pgm_file(mask: &Array2<Option<bool>>, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_pass_mask_pgm(mask, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Percent of evaluated hours each pixel passes.
pub fn pass_frequency(gamma: &MapStack<f64>) -> Array2<f64> {
    let mut counts = Array2::<(usize, usize)>::from_elem(gamma.spec().shape(), (0, 0));
    for f in gamma.frames() {
        Zip::from(&mut counts).and(f).for_each(|c, &g| {
            if !g.is_missing() {
                c.1 += 1;
                if gamma_passes(g) {
                    c.0 += 1;
                }
            }
        });
    }
    counts.map(|&(p, n)| if n == 0 { f64::missing() } else { 100.0 * p as f64 / n as f64 })
}

/// Meteorological season.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Season {
    Winter,
    Spring,
    Summer,
    Autumn,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Winter, Season::Spring, Season::Summer, Season::Autumn];

    pub fn of_month(month: u32) -> Season {
        match month {
            12 | 1 | 2 => Season::Winter,
            3..=5 => Season::Spring,
            6..=8 => Season::Summer,
            _ => Season::Autumn,
        }
    }

    pub fn of_timestamp(ts: i64) -> Season {
        let month = DateTime::from_timestamp(ts, 0).map(|d| d.month()).unwrap_or(1);
        Season::of_month(month)
    }

    pub fn name(self) -> &'static str {
        match self {
            Season::Winter => "winter",
            Season::Spring => "spring",
            Season::Summer => "summer",
            Season::Autumn => "autumn",
        }
    }
}

/// `None` season means the whole period.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonRow {
    pub predictor: Predictor,
    pub season: Option<Season>,
    pub nrmse: Option<f64>,
    /// Mean over evaluated pixel-hours.
    pub gamma_mean: Option<f64>,
    /// Pooled over evaluated pixel-hours.
    pub gp_percent: Option<f64>,
    pub samples: usize,
}

impl SeasonRow {
    pub fn season_name(&self) -> &'static str {
        self.season.map_or("all", Season::name)
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct GammaAccumulator {
    sum: f64,
    passes: usize,
    n: usize,
}

/// One row per predictor and season, plus an `all` row per predictor.
/// Cells without data are `None`.
pub fn seasonal_report<T: Real>(
    measured: &MapStack<T>,
    predictions: &[(Predictor, &MapStack<T>)],
    gamma: &GammaConfig,
    filter: &DaylightFilter,
) -> Result<Vec<SeasonRow>> {
    let mut rows = Vec::new();
    for &(predictor, predicted) in predictions {
        let g = gamma_stack(measured, predicted, gamma, filter)?;
        rows.extend(season_rows(predictor, measured, predicted, &g, filter)?);
    }
    Ok(rows)
}

/// Season rows of one predictor from its precomputed gamma stack.
pub fn season_rows<T: Real>(
    predictor: Predictor,
    measured: &MapStack<T>,
    predicted: &MapStack<T>,
    gamma: &MapStack<f64>,
    filter: &DaylightFilter,
) -> Result<Vec<SeasonRow>> {
    measured.check_aligned(predicted)?;
    measured.check_aligned(gamma)?;
    let mut err = [ErrorAccumulator::default(); 5];
    let mut gam = [GammaAccumulator::default(); 5];
    for t in 0..measured.len() {
        let ts = measured.timestamp(t);
        if !filter.in_window(ts) {
            continue;
        }
        let s = Season::of_timestamp(ts) as usize;
        let mut frame_err = ErrorAccumulator::default();
        accumulate_frame(&mut frame_err, ts, measured.frame(t), predicted.frame(t), filter);
        let mut frame_gam = GammaAccumulator::default();
        for v in gamma.frame(t).iter().filter(|v| !v.is_missing()) {
            frame_gam.sum += v;
            frame_gam.n += 1;
            frame_gam.passes += gamma_passes(*v) as usize;
        }
        for k in [s, 4] {
            err[k].merge(&frame_err);
            gam[k].sum += frame_gam.sum;
            gam[k].n += frame_gam.n;
            gam[k].passes += frame_gam.passes;
        }
    }
    let seasons = Season::ALL.iter().map(|s| Some(*s)).chain([None]);
    Ok(seasons
        .enumerate()
        .map(|(k, season)| {
            let g = gam[k];
            SeasonRow {
                predictor,
                season,
                nrmse: err[k].summary().ok().map(|s| s.nrmse),
                gamma_mean: (g.n > 0).then(|| g.sum / g.n as f64),
                gp_percent: (g.n > 0).then(|| 100.0 * g.passes as f64 / g.n as f64),
                samples: err[k].n,
            }
        })
        .collect())
}

/// `predictor,season,nrmse,gamma_mean,gp_percent`; absent cells are empty.
pub fn write_report_csv<W: Write>(rows: &[SeasonRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["predictor", "season", "nrmse", "gamma_mean", "gp_percent"])?;
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        out.write_record([
            r.predictor.id().to_string(),
            r.season_name().to_string(),
            cell(r.nrmse),
            cell(r.gamma_mean),
            cell(r.gp_percent),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_report_csv<R: std::io::Read>(r: R) -> Result<Vec<SeasonRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(Error::Format(format!("report row has {} fields", rec.len())));
        }
        let num = |k: usize| -> Result<Option<f64>> {
            let s = rec[k].trim();
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| Error::Format(format!("bad number {s:?}")))
            }
        };
        let season = match &rec[1] {
            "all" => None,
            s => Some(
                Season::ALL
                    .into_iter()
                    .find(|x| x.name() == s)
                    .ok_or_else(|| Error::Format(format!("unknown season {s:?}")))?,
            ),
        };
        rows.push(SeasonRow {
            predictor: rec[0].parse()?,
            season,
            nrmse: num(2)?,
            gamma_mean: num(3)?,
            gp_percent: num(4)?,
            samples: 0,
        });
    }
    Ok(rows)
}

/// Fixed-width comparison table: nRMSE, then gamma and %GP per season.
pub fn format_table(rows: &[SeasonRow]) -> String {
    let mut predictors: Vec<Predictor> = rows.iter().map(|r| r.predictor).collect();
    predictors.dedup();
    let cell = |v: Option<f64>, d: usize| v.map(|x| format!("{x:.d$}")).unwrap_or_else(|| "-".into());
    let mut s = format!("{:<20}{:>9}", "predictor", "nRMSE%");
    for season in Season::ALL {
        s.push_str(&format!("{:>11}", format!("g_{}", &season.name()[..2])));
    }
    for season in Season::ALL {
        s.push_str(&format!("{:>11}", format!("GP_{}", &season.name()[..2])));
    }
    s.push('\n');
    for p in predictors {
        let find = |season: Option<Season>| rows.iter().find(|r| r.predictor == p && r.season == season);
        s.push_str(&format!("{:<20}{:>9}", p.id(), cell(find(None).and_then(|r| r.nrmse), 2)));
        for season in Season::ALL {
            s.push_str(&format!("{:>11}", cell(find(Some(season)).and_then(|r| r.gamma_mean), 3)));
        }
        for season in Season::ALL {
            s.push_str(&format!("{:>11}", cell(find(Some(season)).and_then(|r| r.gp_percent), 1)));
        }
        s.push('\n');
    }
    s
}

/// Mean over the pixel axis of every frame, for quick summaries.
pub fn frame_means(stack: &MapStack<f64>) -> Vec<Option<f64>> {
    stack
        .frames()
        .iter()
        .map(|f| {
            let v: Vec<f64> = f.iter().copied().filter(|x| !x.is_missing()).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}
