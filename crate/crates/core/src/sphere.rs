//! Fibonacci-lattice directions and sphere <-> UV-plane projections.
//!
//! Axis convention: z up; latitude is measured from the equator
//! (`z = sin lat`), longitude from +x toward +y (`lon = atan2(y, x)`).

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryError, UNIT_TOLERANCE};

/// Golden ratio.
pub const PHI: f64 = 1.618_033_988_749_895;

/// Latitude limit for the Mercator projection, in degrees. At the limit the
/// projected square is exactly square (the usual web-map clamp).
pub const MERCATOR_LAT_LIMIT_DEG: f64 = 85.051_13;

/// `2n + 1` near-uniform directions: latitude `asin(2i/(2n+1))` and longitude
/// `2πi/φ` for `i ∈ [-n, n]`, stored in ascending `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FibonacciLattice {
    n: u32,
    directions: Vec<DVec3>,
    latitudes: Vec<f64>,
    longitudes: Vec<f64>,
}

impl FibonacciLattice {
    pub fn new(n: u32) -> Self {
        let count = 2 * n as usize + 1;
        let denom = (2 * n as u64 + 1) as f64;
        let mut directions = Vec::with_capacity(count);
        let mut latitudes = Vec::with_capacity(count);
        let mut longitudes = Vec::with_capacity(count);
        for k in 0..count {
            let i = k as i64 - n as i64;
            let lat = (2.0 * i as f64 / denom).asin();
            let lon = TAU * i as f64 / PHI;
            latitudes.push(lat);
            longitudes.push(lon);
            directions.push(lat_lon_to_dir(lat, lon));
        }
        FibonacciLattice {
            n,
            directions,
            latitudes,
            longitudes,
        }
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    /// Number of directions, `2n + 1`.
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> &[DVec3] {
        &self.directions
    }

    pub fn latitudes(&self) -> &[f64] {
        &self.latitudes
    }

    /// Unwrapped longitudes (`2πi/φ`, not reduced to `(-π, π]`).
    pub fn longitudes(&self) -> &[f64] {
        &self.longitudes
    }
}

pub fn fibonacci_directions(n: u32) -> FibonacciLattice {
    FibonacciLattice::new(n)
}

#[inline]
pub fn lat_lon_to_dir(lat: f64, lon: f64) -> DVec3 {
    let (sl, cl) = lat.sin_cos();
    let (so, co) = lon.sin_cos();
    DVec3::new(cl * co, cl * so, sl)
}

/// `(lat, lon)` with `lon ∈ (-π, π]`.
#[inline]
pub fn dir_to_lat_lon(d: DVec3) -> (f64, f64) {
    (d.z.clamp(-1.0, 1.0).asin(), d.y.atan2(d.x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Projection {
    #[default]
    LongLat,
    Mercator,
}

impl Projection {
    pub fn tag(self) -> u8 {
        match self {
            Projection::LongLat => 0,
            Projection::Mercator => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Projection::LongLat),
            1 => Some(Projection::Mercator),
            _ => None,
        }
    }
}

/// A point on the UV plane. `u ∈ [0, 1)` wraps with longitude, `v ∈ [0, 1]`
/// runs south to north and clamps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalUV {
    pub u: f64,
    pub v: f64,
    pub projection: Projection,
}

fn mercator_y(lat: f64) -> f64 {
    (FRAC_PI_4 + 0.5 * lat).tan().ln()
}

fn mercator_y_max() -> f64 {
    mercator_y(MERCATOR_LAT_LIMIT_DEG.to_radians())
}

/// Projection without the unit-length check; callers guarantee `|d| ≈ 1`.
#[inline]
pub(crate) fn project(d: DVec3, projection: Projection) -> (f64, f64) {
    let (lat, lon) = dir_to_lat_lon(d);
    let mut u = (lon + PI) / TAU;
    if u >= 1.0 {
        u -= 1.0;
    }
    let v = match projection {
        Projection::LongLat => (lat + FRAC_PI_2) / PI,
        Projection::Mercator => {
            let limit = MERCATOR_LAT_LIMIT_DEG.to_radians();
            let ymax = mercator_y_max();
            let y = mercator_y(lat.clamp(-limit, limit));
            ((y + ymax) / (2.0 * ymax)).clamp(0.0, 1.0)
        }
    };
    (u, v)
}

pub fn dir_to_uv(d: DVec3, projection: Projection) -> Result<SphericalUV, GeometryError> {
    let norm = d.length();
    if (norm - 1.0).abs() > UNIT_TOLERANCE || !norm.is_finite() {
        return Err(GeometryError::NonUnitDirection { norm });
    }
    let (u, v) = project(d, projection);
    Ok(SphericalUV { u, v, projection })
}

pub fn uv_to_dir(uv: SphericalUV) -> DVec3 {
    let lon = TAU * uv.u - PI;
    let v = uv.v.clamp(0.0, 1.0);
    let lat = match uv.projection {
        Projection::LongLat => v * PI - FRAC_PI_2,
        Projection::Mercator => {
            let y = (2.0 * v - 1.0) * mercator_y_max();
            2.0 * y.exp().atan() - FRAC_PI_2
        }
    };
    lat_lon_to_dir(lat, lon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn angle(a: DVec3, b: DVec3) -> f64 {
        // atan2 form stays accurate for tiny angles.
        a.cross(b).length().atan2(a.dot(b))
    }

    #[test]
    fn lattice_counts() {
        assert_eq!(fibonacci_directions(100).len(), 201);
        assert_eq!(fibonacci_directions(20000).len(), 40001);
        let l = fibonacci_directions(0);
        assert_eq!(l.len(), 1);
        assert_eq!(l.directions()[0], DVec3::X);
        assert_eq!((l.latitudes()[0], l.longitudes()[0]), (0.0, 0.0));
    }

    #[test]
    fn lattice_latitudes_follow_arcsin_law() {
        let l = fibonacci_directions(37);
        for (k, lat) in l.latitudes().iter().enumerate() {
            let i = k as f64 - 37.0;
            assert_eq!(*lat, (2.0 * i / 75.0).asin());
        }
        for d in l.directions() {
            assert!((d.length() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lattice_is_near_uniform() {
        // Coefficient of variation of nearest-neighbour geodesic distances.
        for n in [500u32, 1000] {
            let dirs = fibonacci_directions(n);
            let d = dirs.directions();
            let nn: Vec<f64> = d
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    d.iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, b)| angle(*a, *b))
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            let mean = nn.iter().sum::<f64>() / nn.len() as f64;
            let var = nn.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nn.len() as f64;
            let cv = var.sqrt() / mean;
            assert!(cv < 0.25, "n={n}: cv={cv}");
        }
    }

    #[test]
    fn uv_examples() {
        let uv = dir_to_uv(DVec3::X, Projection::LongLat).unwrap();
        assert_eq!((uv.u, uv.v), (0.5, 0.5));
        assert_eq!(dir_to_uv(DVec3::Z, Projection::LongLat).unwrap().v, 1.0);
        assert_eq!(dir_to_uv(DVec3::Z, Projection::Mercator).unwrap().v, 1.0);
        assert_eq!(dir_to_uv(-DVec3::Z, Projection::Mercator).unwrap().v, 0.0);
        // Longitude π wraps to u = 0.
        assert_eq!(dir_to_uv(-DVec3::X, Projection::LongLat).unwrap().u, 0.0);
        assert!(matches!(
            dir_to_uv(DVec3::new(2.0, 0.0, 0.0), Projection::LongLat),
            Err(GeometryError::NonUnitDirection { .. })
        ));
    }

    #[test]
    fn inverse_examples() {
        let d = uv_to_dir(SphericalUV {
            u: 0.5,
            v: 0.5,
            projection: Projection::LongLat,
        });
        assert!(angle(d, DVec3::X) < 1e-15);
        let d = uv_to_dir(SphericalUV {
            u: 0.0,
            v: 0.5,
            projection: Projection::LongLat,
        });
        assert!(angle(d, -DVec3::X) < 1e-15);
    }

    #[test]
    fn lattice_round_trips_through_uv() {
        let limit = MERCATOR_LAT_LIMIT_DEG.to_radians();
        let lattice = fibonacci_directions(5000);
        for proj in [Projection::LongLat, Projection::Mercator] {
            let mut worst: f64 = 0.0;
            for (d, lat) in lattice.directions().iter().zip(lattice.latitudes()) {
                if lat.abs() >= limit {
                    continue;
                }
                let back = uv_to_dir(dir_to_uv(*d, proj).unwrap());
                worst = worst.max(angle(*d, back));
            }
            assert!(worst < 1e-9, "{proj:?}: {worst}");
        }
    }

    proptest! {
        #[test]
        fn projections_share_u_and_order_v(
            lat1 in -1.5f64..1.5, lat2 in -1.5f64..1.5, lon in -3.1f64..3.1
        ) {
            let a = lat_lon_to_dir(lat1, lon);
            let b = lat_lon_to_dir(lat2, lon);
            let (ua, va) = project(a, Projection::LongLat);
            let (um, vm) = project(a, Projection::Mercator);
            prop_assert_eq!(ua, um);
            prop_assert!((0.0..1.0).contains(&ua));
            let (_, vb) = project(b, Projection::LongLat);
            let (_, vbm) = project(b, Projection::Mercator);
            // Mercator clamps near the poles, so ordering is weak there.
            if va < vb { prop_assert!(vm <= vbm); }
            if va > vb { prop_assert!(vm >= vbm); }
        }
    }
}
