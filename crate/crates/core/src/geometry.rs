//! Spherical geodesy and the relative-orientation features carried on graph edges.
//!
//! Every edge between two cells is described by the great-circle distance `d`
//! between the sites and three angles, all folded into `[0, 180]`:
//!
//! * `alpha`: boresight of the source cell against the bearing toward the other site,
//! * `theta`: boresight of the other cell against the bearing back toward the source,
//! * `rho`: angle between the two boresights.
//!
//! Angles are meaningless when either antenna is omnidirectional or when the two
//! sites coincide; in that case they are zeroed and `angles_valid` is cleared.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in meters (IUGG).
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Below this separation two sites are treated as co-located and bearings are undefined.
pub const CO_LOCATION_THRESHOLD_M: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    /// Builds a point, rejecting latitudes outside `[-90, 90]` and non-finite input.
    /// Longitude is wrapped into `[-180, 180)`.
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidCoordinate {
                field: "lat",
                value: lat,
            });
        }
        if !lon.is_finite() {
            return Err(Error::InvalidCoordinate {
                field: "lon",
                value: lon,
            });
        }
        Ok(Self {
            lat,
            lon: normalize_longitude(lon),
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Point reached by travelling `distance_m` along a great circle with the given
    /// initial bearing.
    pub fn destination(&self, bearing_deg: f64, distance_m: f64) -> GeoPoint {
        let delta = distance_m / EARTH_RADIUS_M;
        let brg = bearing_deg.to_radians();
        let (phi1, lambda1) = (self.lat.to_radians(), self.lon.to_radians());
        let sin_phi2 = phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * brg.cos();
        let phi2 = sin_phi2.clamp(-1.0, 1.0).asin();
        let lambda2 = lambda1
            + (brg.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * sin_phi2);
        GeoPoint {
            lat: phi2.to_degrees().clamp(-90.0, 90.0),
            lon: normalize_longitude(lambda2.to_degrees()),
        }
    }
}

fn normalize_longitude(lon: f64) -> f64 {
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

/// Antenna boresight, degrees clockwise from true North.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Azimuth {
    value: f64,
    is_omni: bool,
}

impl Azimuth {
    /// Sectored antenna pointing at `deg`, wrapped into `[0, 360)`.
    pub fn degrees(deg: f64) -> Self {
        let mut value = deg.rem_euclid(360.0);
        if value >= 360.0 {
            value = 0.0;
        }
        Self {
            value,
            is_omni: false,
        }
    }

    pub fn omni() -> Self {
        Self {
            value: 0.0,
            is_omni: true,
        }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn is_omni(&self) -> bool {
        self.is_omni
    }

    /// `None` for omnidirectional antennas.
    pub fn bearing(&self) -> Option<f64> {
        (!self.is_omni).then_some(self.value)
    }
}

/// Distance and relative orientation between two cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeGeometry {
    pub d: f64,
    pub alpha: f64,
    pub theta: f64,
    pub rho: f64,
    pub angles_valid: bool,
}

impl EdgeGeometry {
    /// Geometry of the same pair seen from the other end.
    pub fn reversed(&self) -> Self {
        Self {
            d: self.d,
            alpha: self.theta,
            theta: self.alpha,
            rho: self.rho,
            angles_valid: self.angles_valid,
        }
    }

    /// Model-facing encoding: `(d / distance_scale, alpha/180, theta/180, rho/180, valid)`.
    pub fn features(&self, distance_scale: f64) -> [f64; EDGE_FEATURE_DIM] {
        [
            self.d / distance_scale,
            self.alpha / 180.0,
            self.theta / 180.0,
            self.rho / 180.0,
            if self.angles_valid { 1.0 } else { 0.0 },
        ]
    }
}

/// Width of [`EdgeGeometry::features`].
pub const EDGE_FEATURE_DIM: usize = 5;

/// Great-circle distance on the mean-radius sphere (haversine form).
pub fn geodesic_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let s_phi = (dphi * 0.5).sin();
    let s_lambda = (dlambda * 0.5).sin();
    let h = s_phi * s_phi + phi1.cos() * phi2.cos() * s_lambda * s_lambda;
    2.0 * EARTH_RADIUS_M * h.sqrt().atan2((1.0 - h).max(0.0).sqrt())
}

/// Initial great-circle bearing at `a` toward `b`, in `[0, 360)`.
pub fn initial_bearing(a: GeoPoint, b: GeoPoint) -> Result<f64> {
    let d = geodesic_distance(a, b);
    if d < CO_LOCATION_THRESHOLD_M {
        return Err(Error::CoLocatedSites { distance_m: d });
    }
    Ok(bearing_unchecked(a, b))
}

fn bearing_unchecked(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let y = dlambda.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
    let deg = y.atan2(x).to_degrees().rem_euclid(360.0);
    if deg >= 360.0 {
        0.0
    } else {
        deg
    }
}

/// Smallest absolute angle equivalent to `deg`, in `[0, 180]`.
pub fn fold_angle(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    if r > 180.0 {
        360.0 - r
    } else {
        r
    }
}

pub fn relative_angles(a: GeoPoint, az_a: Azimuth, b: GeoPoint, az_b: Azimuth) -> EdgeGeometry {
    let d = geodesic_distance(a, b);
    match (az_a.bearing(), az_b.bearing()) {
        (Some(boresight_a), Some(boresight_b)) if d >= CO_LOCATION_THRESHOLD_M => {
            let ab = bearing_unchecked(a, b);
            let ba = bearing_unchecked(b, a);
            EdgeGeometry {
                d,
                alpha: fold_angle(boresight_a - ab),
                theta: fold_angle(boresight_b - ba),
                rho: fold_angle(boresight_a - boresight_b),
                angles_valid: true,
            }
        }
        _ => EdgeGeometry {
            d,
            alpha: 0.0,
            theta: 0.0,
            rho: 0.0,
            angles_valid: false,
        },
    }
}
