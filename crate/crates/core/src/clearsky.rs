//! Clear-sky global horizontal irradiance after the ESRA model.
//!
//! Beam and diffuse components are driven by the Linke turbidity factor `TL`
//! (air mass 2). Constants:
//!
//! - solar constant `I0 = 1367 W/m²`;
//! - day angle `j' = 2π·doy/365.25`;
//! - eccentricity correction `ε = 1 + 0.03344·cos(j' − 0.048869)`;
//! - declination `δ = asin(0.3978·sin(j' − 1.4 + 0.0355·sin(j' − 0.0489)))`;
//! - equation of time in hours
//!   `ET = −0.128·sin(j' − 0.04887) − 0.165·sin(2j' + 0.34383)`;
//! - relative optical air mass (Kasten & Young 1989) with the refraction
//!   correction `Δγ = 0.061359·(0.1594 + 1.123γ + 0.065656γ²)/(1 + 28.9344γ + 277.3971γ²)`
//!   and the altitude correction `p/p0 = exp(−z/8434.5)`;
//! - Rayleigh optical thickness (Kasten 1996):
//!   `1/δR = 6.6296 + 1.7513m − 0.1202m² + 0.0065m³ − 0.00013m⁴` for `m ≤ 20`,
//!   `1/δR = 10.4 + 0.718m` above;
//! - beam `B = I0·ε·sinγ·exp(−0.8662·TL·m·δR(m))`;
//! - diffuse `D = I0·ε·Trd(TL)·Fd(γ, TL)` with
//!   `Trd = −1.5843e−2 + 3.0543e−2·TL + 3.797e−4·TL²` and
//!   `Fd = A0 + A1·sinγ + A2·sin²γ`,
//!   `A0 = 2.6463e−1 − 6.1581e−2·TL + 3.1408e−3·TL²` (raised to `2e−3/Trd` when `A0·Trd < 2e−3`),
//!   `A1 = 2.0402 + 1.8945e−2·TL − 1.1161e−2·TL²`,
//!   `A2 = −1.3025 + 3.9231e−2·TL + 8.5079e−3·TL²`.
//!
//! Hourly irradiation is the instantaneous irradiance at the middle of the
//! interval times its length.
//!
//! Note that the diffuse term grows with turbidity. Below roughly 10° of
//! solar elevation that growth can outweigh the beam loss, so global
//! irradiance is only guaranteed to fall with `TL` once the sun is higher.

use chrono::{DateTime, Datelike};
use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, MapStack, StackKind};
use crate::num::Real;

pub const SOLAR_CONSTANT: f64 = 1367.0;
pub const MIN_ELEVATION_M: f64 = -500.0;

/// Linke turbidity, constant or per calendar month.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinkeTurbidity<T> {
    Constant(T),
    Monthly([T; 12]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClearSkyParams<T> {
    pub linke: LinkeTurbidity<T>,
}

impl<T: Real> Default for ClearSkyParams<T> {
    fn default() -> Self {
        Self {
            linke: LinkeTurbidity::Constant(T::lit(3.0)),
        }
    }
}

impl<T: Real> ClearSkyParams<T> {
    pub fn constant(tl: T) -> Result<Self> {
        let p = Self {
            linke: LinkeTurbidity::Constant(tl),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn monthly(tl: [T; 12]) -> Result<Self> {
        let p = Self {
            linke: LinkeTurbidity::Monthly(tl),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: &T| *v >= T::one() && v.is_finite();
        let valid = match &self.linke {
            LinkeTurbidity::Constant(v) => ok(v),
            LinkeTurbidity::Monthly(vs) => vs.iter().all(ok),
        };
        if !valid {
            return Err(Error::InvalidArgument("Linke turbidity must be >= 1".into()));
        }
        Ok(())
    }

    /// Turbidity in effect at Unix time `ts`.
    pub fn turbidity_at(&self, ts: i64) -> T {
        match &self.linke {
            LinkeTurbidity::Constant(v) => *v,
            LinkeTurbidity::Monthly(vs) => {
                let month = DateTime::from_timestamp(ts, 0).map_or(1, |d| d.month());
                vs[(month - 1) as usize]
            }
        }
    }
}

/// Sun geometry for one instant and site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolarPosition<T> {
    pub declination: T,
    pub hour_angle: T,
    /// Angle above the horizon, radians.
    pub solar_elevation: T,
    pub earth_sun_correction: T,
}

pub fn solar_position<T: Real>(ts: i64, lat_deg: T, lon_deg: T) -> SolarPosition<T> {
    let l = T::lit;
    let (doy, ut_hours) = match DateTime::from_timestamp(ts, 0) {
        Some(d) => (d.ordinal() as f64, ts.rem_euclid(86_400) as f64 / 3600.0),
        None => (1.0, 0.0),
    };
    let day_angle = l(2.0 * std::f64::consts::PI * doy / 365.25);

    let earth_sun_correction = T::one() + l(0.03344) * (day_angle - l(0.048869)).cos();
    let declination = (l(0.3978)
        * (day_angle - l(1.4) + l(0.0355) * (day_angle - l(0.0489)).sin()).sin())
    .asin();
    let eot_hours = l(-0.128) * (day_angle - l(0.04887)).sin() - l(0.165) * (l(2.0) * day_angle + l(0.34383)).sin();

    let solar_time = l(ut_hours) + lon_deg / l(15.0) + eot_hours;
    let hour_angle = ((solar_time - l(12.0)) * l(15.0)).to_radians();

    let lat = lat_deg.to_radians();
    let sin_el = lat.sin() * declination.sin() + lat.cos() * declination.cos() * hour_angle.cos();
    let solar_elevation = sin_el.max(-T::one()).min(T::one()).asin();

    SolarPosition {
        declination,
        hour_angle,
        solar_elevation,
        earth_sun_correction,
    }
}

/// Relative optical air mass at the site's pressure.
pub fn relative_air_mass<T: Real>(solar_elevation: T, elevation_m: T) -> T {
    let l = T::lit;
    let g = solar_elevation;
    let refraction = l(0.061359) * (l(0.1594) + l(1.123) * g + l(0.065656) * g * g)
        / (T::one() + l(28.9344) * g + l(277.3971) * g * g);
    let g_true = g + refraction;
    let pressure_ratio = (-elevation_m / l(8434.5)).exp();
    pressure_ratio / (g_true.sin() + l(0.50572) * (g_true.to_degrees() + l(6.07995)).powf(l(-1.6364)))
}

/// Integral Rayleigh optical thickness for air mass `m`.
pub fn rayleigh_optical_thickness<T: Real>(m: T) -> T {
    let l = T::lit;
    let inv = if m <= l(20.0) {
        l(6.6296) + m * (l(1.7513) + m * (l(-0.1202) + m * (l(0.0065) + m * l(-0.00013))))
    } else {
        l(10.4) + l(0.718) * m
    };
    inv.recip()
}

/// Beam and diffuse horizontal irradiance, W/m².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClearSkyIrradiance<T> {
    pub beam: T,
    pub diffuse: T,
}

impl<T: Real> ClearSkyIrradiance<T> {
    pub fn global(&self) -> T {
        self.beam + self.diffuse
    }
}

pub fn clear_sky_components<T: Real>(pos: &SolarPosition<T>, linke: T, elevation_m: T) -> ClearSkyIrradiance<T> {
    let l = T::lit;
    let g = pos.solar_elevation;
    if g <= T::zero() {
        return ClearSkyIrradiance {
            beam: T::zero(),
            diffuse: T::zero(),
        };
    }
    let extraterrestrial = l(SOLAR_CONSTANT) * pos.earth_sun_correction;
    let s = g.sin();

    let m = relative_air_mass(g, elevation_m);
    let beam = extraterrestrial * s * (l(-0.8662) * linke * m * rayleigh_optical_thickness(m)).exp();

    let tl = linke;
    let trd = l(-1.5843e-2) + l(3.0543e-2) * tl + l(3.797e-4) * tl * tl;
    let mut a0 = l(2.6463e-1) + l(-6.1581e-2) * tl + l(3.1408e-3) * tl * tl;
    if a0 * trd < l(2e-3) {
        a0 = l(2e-3) / trd;
    }
    let a1 = l(2.0402) + l(1.8945e-2) * tl + l(-1.1161e-2) * tl * tl;
    let a2 = l(-1.3025) + l(3.9231e-2) * tl + l(8.5079e-3) * tl * tl;
    let diffuse = extraterrestrial * trd * (a0 + a1 * s + a2 * s * s);

    ClearSkyIrradiance {
        beam,
        diffuse: diffuse.max(T::zero()),
    }
}

/// Global clear-sky irradiance in W/m², numerically the Wh/m² of a one-hour
/// interval centered on `pos`.
pub fn clear_sky_ghi<T: Real>(pos: &SolarPosition<T>, linke: T, elevation_m: T) -> T {
    clear_sky_components(pos, linke, elevation_m).global()
}

/// Clear-sky irradiation (Wh/m²) of the interval `[ts, ts + step_s)`.
pub fn interval_clear_sky<T: Real>(
    ts: i64,
    step_s: u32,
    lat_deg: T,
    lon_deg: T,
    elevation_m: T,
    params: &ClearSkyParams<T>,
) -> T {
    let mid = ts + step_s as i64 / 2;
    let pos = solar_position(mid, lat_deg, lon_deg);
    clear_sky_ghi(&pos, params.turbidity_at(mid), elevation_m) * T::lit(step_s as f64 / 3600.0)
}

/// Clear-sky irradiation for every frame and pixel of `spec`.
pub fn clear_sky_stack<T: Real>(spec: &GridSpec, frames: usize, params: &ClearSkyParams<T>) -> Result<MapStack<T>> {
    spec.validate()?;
    params.validate()?;
    if let Some(e) = spec.elevation_m.as_ref().and_then(|e| e.iter().find(|z| !(**z >= MIN_ELEVATION_M))) {
        return Err(Error::InvalidArgument(format!("elevation {e} m below {MIN_ELEVATION_M} m")));
    }
    let lats: Vec<T> = (0..spec.height).map(|i| T::lit(spec.pixel_lat(i))).collect();
    let lons: Vec<T> = (0..spec.width).map(|j| T::lit(spec.pixel_lon(j))).collect();
    let out: Vec<Array2<T>> = (0..frames)
        .into_par_iter()
        .map(|t| {
            let ts = spec.timestamp(t);
            Array2::from_shape_fn(spec.shape(), |(i, j)| {
                let z = T::lit(spec.pixel_elevation(i, j));
                interval_clear_sky(ts, spec.step_s, lats[i], lons[j], z, params)
            })
        })
        .collect();
    MapStack::new(spec.clone(), StackKind::Irradiance, out)
}
