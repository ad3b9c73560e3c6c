//! Spherical geodesy helpers.

use serde::{Deserialize, Serialize};

/// Mean Earth radius in kilometres. The Earth is treated as a sphere.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// A longitude/latitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LonLat {
    pub lon: f64,
    pub lat: f64,
}

impl LonLat {
    pub const fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }

    pub fn is_valid(&self) -> bool {
        self.lon.is_finite()
            && self.lat.is_finite()
            && (-180.0..=180.0).contains(&self.lon)
            && (-90.0..=90.0).contains(&self.lat)
    }
}

/// Great-circle distance in km between two points (haversine form).
pub fn arc_distance(a: LonLat, b: LonLat) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();

    let s = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * s.clamp(0.0, 1.0).sqrt().asin()
}

/// Area in km² of a `resolution` x `resolution` degree cell centred at
/// latitude `lat_center`.
///
/// Exact spherical quadrangle: `R² Δλ (sin φ₂ − sin φ₁)`. Cell edges are
/// clamped to the poles.
pub fn cell_area(lat_center: f64, resolution: f64) -> f64 {
    let half = resolution / 2.0;
    let south = (lat_center - half).clamp(-90.0, 90.0).to_radians();
    let north = (lat_center + half).clamp(-90.0, 90.0).to_radians();
    let dlambda = resolution.to_radians();
    EARTH_RADIUS_KM * EARTH_RADIUS_KM * dlambda * (north.sin() - south.sin()).abs()
}
