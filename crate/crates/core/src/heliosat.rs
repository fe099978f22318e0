//! Cloud index from apparent albedos, the piecewise cloud index to clear-sky
//! index mapping, and conversions between irradiance and clear-sky index.

use ndarray::Zip;

use crate::error::{Error, Result};
use crate::grid::{MapStack, StackKind};
use crate::num::Real;

/// Clear-sky irradiation (Wh/m²) at or below which the index is undefined.
pub const CSI_FLOOR: f64 = 10.0;

/// Range enforced on data-derived clear-sky indices before model training.
pub const CSI_DATA_MIN: f64 = 0.0;
pub const CSI_DATA_MAX: f64 = 1.5;

/// Apparent albedo measured by the sensor together with the reference
/// albedos of the brightest clouds and of the clear-sky ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlbedoTriple<T> {
    pub rho: T,
    pub rho_cloud: T,
    pub rho_cs: T,
}

impl<T: Real> AlbedoTriple<T> {
    pub fn new(rho: T, rho_cloud: T, rho_cs: T) -> Result<Self> {
        let range = |v: T| v >= T::zero() && v <= T::lit(1.5);
        if !(range(rho) && range(rho_cloud) && range(rho_cs)) {
            return Err(Error::InvalidArgument("albedos must lie in [0, 1.5]".into()));
        }
        if rho_cloud == rho_cs {
            return Err(Error::Degenerate("cloud and clear-sky albedos coincide".into()));
        }
        Ok(Self { rho, rho_cloud, rho_cs })
    }
}

pub fn cloud_index<T: Real>(a: &AlbedoTriple<T>) -> Result<T> {
    let denom = a.rho_cloud - a.rho_cs;
    if denom == T::zero() {
        return Err(Error::Degenerate("cloud and clear-sky albedos coincide".into()));
    }
    Ok((a.rho - a.rho_cs) / denom)
}

/// Piecewise map from cloud index to clear-sky index. The linear branch owns
/// both closed ends `[-0.2, 0.8]`; the quadratic owns `(0.8, 1.1]`.
pub fn csi_from_cloud_index<T: Real>(n: T) -> T {
    let l = T::lit;
    if n < l(-0.2) {
        l(1.2)
    } else if n <= l(0.8) {
        T::one() - n
    } else if n <= l(1.1) {
        l(2.0667) - l(3.6667) * n + l(1.6667) * n * n
    } else {
        l(0.05)
    }
}

/// `csi * i_cs`; zero whenever there is no clear-sky irradiance.
pub fn irradiance_from_csi<T: Real>(csi: T, i_cs: T) -> T {
    if csi.is_missing() || i_cs.is_missing() {
        return T::missing();
    }
    if i_cs <= T::zero() {
        return T::zero();
    }
    csi * i_cs
}

/// `i / i_cs`, missing when `i_cs` is at or below [`CSI_FLOOR`].
pub fn csi_from_irradiance<T: Real>(i: T, i_cs: T) -> T {
    if i.is_missing() || i_cs.is_missing() || i_cs <= T::lit(CSI_FLOOR) {
        return T::missing();
    }
    i / i_cs
}

/// Clamps a data-derived index into `[0, 1.5]`, passing missing through.
pub fn clamp_csi<T: Real>(csi: T) -> T {
    if csi.is_missing() {
        csi
    } else {
        csi.max(T::lit(CSI_DATA_MIN)).min(T::lit(CSI_DATA_MAX))
    }
}

/// Clear-sky index stack of an irradiance stack, clamped for training use.
pub fn csi_stack<T: Real>(irradiance: &MapStack<T>, clear_sky: &MapStack<T>) -> Result<MapStack<T>> {
    if irradiance.kind() != StackKind::Irradiance || clear_sky.kind() != StackKind::Irradiance {
        return Err(Error::InvalidArgument("clear-sky index needs two irradiance stacks".into()));
    }
    irradiance.check_aligned(clear_sky)?;
    let frames = irradiance
        .frames()
        .iter()
        .zip(clear_sky.frames())
        .map(|(i, cs)| Zip::from(i).and(cs).map_collect(|&v, &c| clamp_csi(csi_from_irradiance(v, c))))
        .collect();
    MapStack::new(irradiance.spec().clone(), StackKind::ClearSkyIndex, frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cloud_index_examples() {
        let a = AlbedoTriple::new(0.2, 0.8, 0.2).unwrap();
        assert_eq!(cloud_index(&a).unwrap(), 0.0);
        let a = AlbedoTriple::new(0.8, 0.8, 0.2).unwrap();
        assert_eq!(cloud_index(&a).unwrap(), 1.0);
        let a = AlbedoTriple::new(0.4, 0.8, 0.2).unwrap();
        assert_abs_diff_eq!(cloud_index(&a).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_albedos() {
        assert!(matches!(AlbedoTriple::new(0.3, 0.5, 0.5), Err(Error::Degenerate(_))));
        let raw = AlbedoTriple {
            rho: 0.3f64,
            rho_cloud: 0.5,
            rho_cs: 0.5,
        };
        assert!(matches!(cloud_index(&raw), Err(Error::Degenerate(_))));
        assert!(AlbedoTriple::new(1.6, 0.5, 0.1).is_err());
    }

    #[test]
    fn mapping_branches() {
        assert_eq!(csi_from_cloud_index(-0.5), 1.2);
        assert_eq!(csi_from_cloud_index(0.5), 0.5);
        // 2.0667 - 3.6667 * 0.9 + 1.6667 * 0.81
        assert_abs_diff_eq!(csi_from_cloud_index(0.9), 0.116697, epsilon = 1e-5);
        assert_eq!(csi_from_cloud_index(2.0), 0.05);
    }

    #[test]
    fn mapping_breakpoints() {
        let quad = |n: f64| 2.0667 - 3.6667 * n + 1.6667 * n * n;
        assert_abs_diff_eq!(csi_from_cloud_index(-0.2), 1.2, epsilon = 1e-15);
        assert_abs_diff_eq!(csi_from_cloud_index(0.8), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(quad(0.8), 0.2, epsilon = 3e-5);
        assert_abs_diff_eq!(quad(1.1), 0.05, epsilon = 1e-4);
    }

    #[test]
    fn mapping_range() {
        for k in -4000..=4000 {
            let v = csi_from_cloud_index(k as f64 / 1000.0);
            assert!((0.05..=1.2).contains(&v));
        }
    }

    #[test]
    fn irradiance_examples() {
        assert_eq!(irradiance_from_csi(1.0, 800.0), 800.0);
        assert_abs_diff_eq!(irradiance_from_csi(0.05, 800.0), 40.0, epsilon = 1e-12);
        assert_eq!(irradiance_from_csi(0.7, 0.0), 0.0);
    }

    #[test]
    fn csi_examples() {
        assert_eq!(csi_from_irradiance(400.0, 800.0), 0.5);
        assert_eq!(csi_from_irradiance(600.0, 600.0), 1.0);
        assert!(csi_from_irradiance(100.0, 0.0).is_missing());
        assert!(csi_from_irradiance(5.0, 10.0).is_missing());
        assert!(csi_from_irradiance(f64::missing(), 500.0).is_missing());
    }

    #[test]
    fn clamp_data_csi() {
        assert_eq!(clamp_csi(2.0), 1.5);
        assert_eq!(clamp_csi(-0.1), 0.0);
        assert!(clamp_csi(f64::missing()).is_missing());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mapping_non_increasing(a in -3.0f64..3.0, b in -3.0f64..3.0) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                // The rounded quadratic dips to its vertex at n ~ 1.09998 and
                // climbs back by < 1e-9 before the 1.1 breakpoint.
                prop_assert!(csi_from_cloud_index(hi) <= csi_from_cloud_index(lo) + 1e-9);
            }

            #[test]
            fn csi_round_trip(i in 0.0f64..1500.0, cs in 10.0001f64..1200.0) {
                let back = irradiance_from_csi(csi_from_irradiance(i, cs), cs);
                prop_assert!((back - i).abs() <= 1e-12 * i.max(1.0));
            }
        }
    }
}
