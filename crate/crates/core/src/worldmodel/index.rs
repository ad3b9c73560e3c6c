//! Spatial lookups: radius queries over points and point-to-cell location.

use std::collections::HashMap;

use super::geo::{arc_distance, LonLat, EARTH_RADIUS_KM};

/// Bucketed index over a fixed set of points for great-circle radius
/// queries. Buckets are regular lon/lat bins; longitude wraps at the
/// antimeridian.
#[derive(Debug, Clone)]
pub struct PointIndex {
    points: Vec<LonLat>,
    bucket_deg: f64,
    n_lon: usize,
    n_lat: usize,
    buckets: Vec<Vec<u32>>,
}

impl PointIndex {
    pub fn new(points: &[LonLat], bucket_deg: f64) -> Self {
        assert!(bucket_deg > 0.0, "bucket size must be positive");
        let n_lon = (360.0 / bucket_deg).ceil() as usize;
        let n_lat = (180.0 / bucket_deg).ceil() as usize;
        let mut buckets = vec![Vec::new(); n_lon * n_lat];
        for (i, p) in points.iter().enumerate() {
            let (bx, by) = Self::bucket_of(*p, bucket_deg, n_lon, n_lat);
            buckets[by * n_lon + bx].push(i as u32);
        }
        Self {
            points: points.to_vec(),
            bucket_deg,
            n_lon,
            n_lat,
            buckets,
        }
    }

    fn bucket_of(p: LonLat, deg: f64, n_lon: usize, n_lat: usize) -> (usize, usize) {
        let bx = (((p.lon + 180.0) / deg).floor().max(0.0) as usize).min(n_lon - 1);
        let by = (((p.lat + 90.0) / deg).floor().max(0.0) as usize).min(n_lat - 1);
        (bx, by)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> LonLat {
        self.points[i]
    }

    /// Calls `visit(index, distance_km)` for every point within `radius_km`
    /// of `center` (inclusive). Visit order is deterministic but not sorted.
    pub fn for_each_within(&self, center: LonLat, radius_km: f64, mut visit: impl FnMut(usize, f64)) {
        let delta = radius_km / EARTH_RADIUS_KM;
        let dlat = delta.to_degrees();
        let lat_lo = center.lat - dlat;
        let lat_hi = center.lat + dlat;

        // Longitude half-width of the spherical cap; the whole circle when
        // the cap reaches a pole.
        let lon_half = if lat_hi >= 90.0 || lat_lo <= -90.0 || delta >= std::f64::consts::FRAC_PI_2 {
            None
        } else {
            let ratio = delta.sin() / center.lat.to_radians().cos();
            if ratio >= 1.0 {
                None
            } else {
                Some(ratio.asin().to_degrees() + 1e-9)
            }
        };

        let deg = self.bucket_deg;
        let by_lo = (((lat_lo.max(-90.0) + 90.0) / deg).floor().max(0.0) as usize).min(self.n_lat - 1);
        let by_hi = (((lat_hi.min(90.0) + 90.0) / deg).floor().max(0.0) as usize).min(self.n_lat - 1);

        let lon_buckets: Vec<usize> = match lon_half {
            None => (0..self.n_lon).collect(),
            Some(h) => {
                let lo = ((center.lon - h + 180.0) / deg).floor() as i64;
                let hi = ((center.lon + h + 180.0) / deg).floor() as i64;
                if (hi - lo + 1) as usize >= self.n_lon {
                    (0..self.n_lon).collect()
                } else {
                    let n = self.n_lon as i64;
                    (lo..=hi).map(|b| b.rem_euclid(n) as usize).collect()
                }
            }
        };

        for by in by_lo..=by_hi {
            for &bx in &lon_buckets {
                for &i in &self.buckets[by * self.n_lon + bx] {
                    let i = i as usize;
                    let d = arc_distance(center, self.points[i]);
                    if d <= radius_km {
                        visit(i, d);
                    }
                }
            }
        }
    }

    /// Indices and distances within `radius_km`, sorted by index.
    pub fn within(&self, center: LonLat, radius_km: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.for_each_within(center, radius_km, |i, d| out.push((i, d)));
        out.sort_unstable_by_key(|&(i, _)| i);
        out
    }
}

/// Maps coordinates to the grid cell containing them.
///
/// Cells are identified by their centre; a point belongs to the cell whose
/// `resolution`-sized square contains it.
#[derive(Debug, Clone)]
pub struct GridLocator {
    resolution: f64,
    cells: HashMap<(i64, i64), usize>,
}

impl GridLocator {
    pub fn new(centers: impl IntoIterator<Item = LonLat>, resolution: f64) -> Self {
        let cells = centers
            .into_iter()
            .enumerate()
            .map(|(i, c)| (Self::key(c, resolution), i))
            .collect();
        Self { resolution, cells }
    }

    fn key(p: LonLat, resolution: f64) -> (i64, i64) {
        (
            (p.lon / resolution).floor() as i64,
            (p.lat / resolution).floor() as i64,
        )
    }

    pub fn locate(&self, p: LonLat) -> Option<usize> {
        self.cells.get(&Self::key(p, self.resolution)).copied()
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }
}
