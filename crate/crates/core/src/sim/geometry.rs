use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{RadarConfig, ScatterPoint};

/// Top-down chest model: a flat torso of `width` facing the radar at
/// `center_range`, cut into thin patches that are grouped by range bin.
///
/// Patches are grouped into slices one range resolution deep, starting at
/// the sternum, the nearest point of the chest, and each slice becomes one
/// [`ScatterPoint`] at its mean patch range. Anchoring the slices on the
/// chest rather than on the FFT grid keeps a chest shallower than one
/// resolution cell a single scatterer wherever it sits between bins; two
/// scatterers a few millimetres apart would beat against each other and
/// fade.
/// Patch reflectivity falls off with incidence angle and `1/r²`; motion gain
/// and lag vary quadratically and linearly from the sternum to the edges.
/// The strongest bin has amplitude `(1 m / center_range)²`, the two-way
/// spreading loss relative to a chest at 1 m, so the SNR drops with range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChestGeometry {
    pub center_range: f64,
    pub width: f64,
    pub patch_spacing: f64,
    /// Motion gain at the lateral edge (1 at the centre).
    pub edge_gain: f64,
    /// Motion lag at the lateral edge, s (0 at the centre).
    pub edge_delay: f64,
}

impl ChestGeometry {
    pub fn at(center_range: f64) -> Self {
        ChestGeometry {
            center_range,
            width: 0.6,
            patch_spacing: 0.005,
            edge_gain: 0.6,
            edge_delay: 0.1,
        }
    }

    pub fn scatterers(&self, cfg: &RadarConfig) -> Vec<ScatterPoint> {
        let res = cfg.range_resolution();
        let half = 0.5 * self.width;
        let n = (self.width / self.patch_spacing).round().max(1.0) as usize;
        // bin -> (weight, Σ w·r, Σ w·gain, Σ w·delay)
        let mut groups: std::collections::BTreeMap<i64, [f64; 4]> = Default::default();
        for j in 0..=n {
            let x = -half + self.width * j as f64 / n as f64;
            let r = (self.center_range * self.center_range + x * x).sqrt();
            let cos_inc = self.center_range / r;
            let w = cos_inc * (self.center_range / r).powi(2);
            let frac = (x / half).abs();
            let gain = 1.0 - (1.0 - self.edge_gain) * frac * frac;
            let delay = self.edge_delay * frac;
            let bin = ((r - self.center_range) / res).floor() as i64;
            let g = groups.entry(bin).or_insert([0.0; 4]);
            g[0] += w;
            g[1] += w * r;
            g[2] += w * gain;
            g[3] += w * delay;
        }
        let wmax = groups.values().map(|g| g[0]).fold(0.0, f64::max);
        let spreading = self.center_range.powi(-2);
        groups
            .values()
            .map(|g| ScatterPoint {
                base_range: g[1] / g[0],
                amplitude: Complex64::new(spreading * g[0] / wmax, 0.0),
                motion_gain: g[2] / g[0],
                motion_delay: g[3] / g[0],
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn occupied_bins_shrink_with_range() {
        let cfg = RadarConfig::default();
        let counts: Vec<usize> = [0.3, 1.0, 2.0, 5.0]
            .iter()
            .map(|&r| ChestGeometry::at(r).scatterers(&cfg).len())
            .collect();
        assert!(counts[0] >= 3, "{counts:?}");
        assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{counts:?}");
        assert!(counts[0] > counts[2], "{counts:?}");
    }

    #[test]
    fn patches_are_valid_scatterers() {
        let cfg = RadarConfig::default();
        for r in [0.3, 1.0, 2.0, 5.0] {
            let s = ChestGeometry::at(r).scatterers(&cfg);
            let strongest = s.iter().map(|p| p.amplitude.norm()).fold(0.0, f64::max);
            assert!((strongest * r * r - 1.0).abs() < 1e-12);
            for p in &s {
                p.validate(&cfg).unwrap();
                assert!(p.base_range >= r - 1e-12);
            }
        }
    }
}
