//! Waypoint tracks and the model-free Pure Pursuit steering law.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SysidError};
use crate::model::{wrap_angle, Pose};

/// Steering limit of the target platform (rad).
pub const STEER_LIMIT: f64 = 0.4;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    /// Target speed when this waypoint is the nearest one (m/s).
    pub v_target: f64,
}

/// Closed or open sequence of waypoints.
#[derive(Debug, Clone)]
pub struct Track {
    pub waypoints: Vec<Waypoint>,
    pub closed: bool,
}

impl Track {
    pub fn new(waypoints: Vec<Waypoint>, closed: bool) -> Result<Track> {
        let t = Track { waypoints, closed };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 4 {
            return Err(SysidError::Config(format!(
                "track needs at least 4 waypoints, got {}",
                self.waypoints.len()
            )));
        }
        let n = self.waypoints.len();
        let pairs = if self.closed { n } else { n - 1 };
        for i in 0..pairs {
            let a = &self.waypoints[i];
            let b = &self.waypoints[(i + 1) % n];
            if (a.x - b.x).hypot(a.y - b.y) < 1e-9 {
                return Err(SysidError::Config(format!(
                    "consecutive waypoints {i} and {} coincide",
                    (i + 1) % n
                )));
            }
        }
        Ok(())
    }

    /// Index of the waypoint closest to `(x, y)`.
    pub fn nearest(&self, x: f64, y: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, w) in self.waypoints.iter().enumerate() {
            let d = (w.x - x).hypot(w.y - y);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// First waypoint at least `lookahead` away from `(x, y)` walking
    /// forward from the nearest waypoint.
    pub fn lookahead_point(&self, x: f64, y: f64, lookahead: f64) -> Waypoint {
        let n = self.waypoints.len();
        let start = self.nearest(x, y);
        for k in 0..n {
            let i = if self.closed {
                (start + k) % n
            } else {
                (start + k).min(n - 1)
            };
            let w = self.waypoints[i];
            if (w.x - x).hypot(w.y - y) >= lookahead {
                return w;
            }
        }
        // Degenerate small track: fall back to the farthest forward point.
        self.waypoints[if self.closed { (start + n / 2) % n } else { n - 1 }]
    }

    pub fn target_speed(&self, x: f64, y: f64) -> f64 {
        self.waypoints[self.nearest(x, y)].v_target
    }

    /// Read a track from CSV with header `x_m,y_m,v_target_mps`.
    pub fn from_csv(path: &Path) -> Result<Track> {
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| SysidError::Config(format!("cannot open track {path:?}: {e}")))?;
        let hdr = rdr
            .headers()
            .map_err(|e| SysidError::Config(format!("track {path:?}: {e}")))?
            .clone();
        let expected = ["x_m", "y_m", "v_target_mps"];
        if hdr.iter().collect::<Vec<_>>() != expected {
            return Err(SysidError::Config(format!(
                "track {path:?}: expected header {expected:?}, got {hdr:?}"
            )));
        }
        let mut waypoints = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec
                .map_err(|e| SysidError::Config(format!("track {path:?} line {}: {e}", line + 2)))?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or(())
                    .and_then(|s| s.trim().parse::<f64>().map_err(|_| ()))
                    .map_err(|_| {
                        SysidError::Config(format!(
                            "track {path:?} line {}: bad field {i}",
                            line + 2
                        ))
                    })
            };
            waypoints.push(Waypoint { x: parse(0)?, y: parse(1)?, v_target: parse(2)? });
        }
        Track::new(waypoints, true)
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x_m", "y_m", "v_target_mps"]).map_err(io_err)?;
        for p in &self.waypoints {
            w.write_record([
                format!("{}", p.x),
                format!("{}", p.y),
                format!("{}", p.v_target),
            ])
            .map_err(io_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn io_err(e: csv::Error) -> SysidError {
    SysidError::Data(format!("csv write: {e}"))
}

/// Pure Pursuit steering: `delta = atan(2 L sin(beta) / lookahead)` where
/// `beta` is the bearing from the heading to the lookahead point, clamped
/// to the platform steering limit.
pub fn pure_pursuit_steer(pose: Pose, track: &Track, lookahead: f64, wheelbase: f64) -> Result<f64> {
    track.validate()?;
    if !(lookahead > 0.0) {
        return Err(SysidError::Config(format!(
            "lookahead must be positive, got {lookahead}"
        )));
    }
    let target = track.lookahead_point(pose.x, pose.y, lookahead);
    let beta = wrap_angle((target.y - pose.y).atan2(target.x - pose.x) - pose.psi);
    let delta = (2.0 * wheelbase * beta.sin() / lookahead).atan();
    Ok(delta.clamp(-STEER_LIMIT, STEER_LIMIT))
}

/// Circle track helper used by the bundled tracks and tests.
pub fn circle_track(radius: f64, n: usize, v_target: f64) -> Track {
    let waypoints = (0..n)
        .map(|i| {
            let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            Waypoint {
                x: radius * th.cos(),
                y: radius * th.sin(),
                v_target,
            }
        })
        .collect();
    Track { waypoints, closed: true }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rejects_tiny_track() {
        let wps = vec![
            Waypoint { x: 0.0, y: 0.0, v_target: 1.0 },
            Waypoint { x: 1.0, y: 0.0, v_target: 1.0 },
        ];
        assert!(Track::new(wps, true).is_err());
    }

    #[test]
    fn rejects_coincident_waypoints() {
        let wps = vec![
            Waypoint { x: 0.0, y: 0.0, v_target: 1.0 },
            Waypoint { x: 1.0, y: 0.0, v_target: 1.0 },
            Waypoint { x: 1.0, y: 0.0, v_target: 1.0 },
            Waypoint { x: 0.0, y: 1.0, v_target: 1.0 },
        ];
        assert!(Track::new(wps, true).is_err());
    }

    #[test]
    fn dead_ahead_gives_zero_steer() {
        let wps = (0..10)
            .map(|i| Waypoint { x: i as f64, y: 0.0, v_target: 2.0 })
            .collect();
        let track = Track { waypoints: wps, closed: false };
        let pose = Pose { x: 0.0, y: 0.0, psi: 0.0 };
        let d = pure_pursuit_steer(pose, &track, 1.0, 0.33).unwrap();
        assert_relative_eq!(d, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn mirrored_track_negates_steer() {
        let wps: Vec<Waypoint> = (0..20)
            .map(|i| Waypoint { x: i as f64 * 0.5, y: 0.2 * i as f64, v_target: 2.0 })
            .collect();
        let mirrored: Vec<Waypoint> = wps
            .iter()
            .map(|w| Waypoint { x: w.x, y: -w.y, v_target: w.v_target })
            .collect();
        let pose = Pose { x: 0.0, y: 0.0, psi: 0.0 };
        let t1 = Track { waypoints: wps, closed: false };
        let t2 = Track { waypoints: mirrored, closed: false };
        let d1 = pure_pursuit_steer(pose, &t1, 1.0, 0.33).unwrap();
        let d2 = pure_pursuit_steer(pose, &t2, 1.0, 0.33).unwrap();
        assert_relative_eq!(d2, -d1, epsilon = 1e-12);
    }

    #[test]
    fn circle_gives_geometric_steer() {
        // Vehicle on a radius-R circle, tangent heading: steady-state pure
        // pursuit steer approaches atan(L/R) as waypoint density grows.
        let r = 2.5;
        let wheelbase = 0.33;
        let track = circle_track(r, 720, 2.0);
        let pose = Pose { x: r, y: 0.0, psi: std::f64::consts::FRAC_PI_2 };
        let d = pure_pursuit_steer(pose, &track, 1.0, wheelbase).unwrap();
        // Chord geometry: sin(beta) = ld / (2R) for a point on the circle.
        let expected = (wheelbase / r).atan();
        assert_relative_eq!(d, expected, epsilon = 0.02);
    }

    #[test]
    fn csv_roundtrip() {
        let track = circle_track(3.0, 16, 2.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        track.to_csv(&path).unwrap();
        let back = Track::from_csv(&path).unwrap();
        assert_eq!(back.waypoints.len(), 16);
        assert_relative_eq!(back.waypoints[3].x, track.waypoints[3].x);
    }
}
