use serde::{Deserialize, Serialize};

use crate::math::wrap_angle;

/// Planar pose of an agent: position in meters, heading in radians.
///
/// Constructors normalize `yaw` into (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseSE2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl PoseSE2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw: wrap_angle(yaw) }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    /// Maps a world point into this pose's local frame.
    pub fn world_to_local(&self, wx: f64, wy: f64) -> (f64, f64) {
        let (s, c) = crate::math::sin_cos(self.yaw);
        let dx = wx - self.x;
        let dy = wy - self.y;
        (c * dx + s * dy, -s * dx + c * dy)
    }

    pub fn local_to_world(&self, lx: f64, ly: f64) -> (f64, f64) {
        let (s, c) = crate::math::sin_cos(self.yaw);
        (self.x + c * lx - s * ly, self.y + s * lx + c * ly)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    #[test]
    fn yaw_is_normalized() {
        assert!((PoseSE2::new(0.0, 0.0, 3.0 * PI).yaw - PI).abs() < 1e-12);
        assert!((PoseSE2::new(0.0, 0.0, -PI).yaw - PI).abs() < 1e-12);
        assert!((PoseSE2::new(0.0, 0.0, -0.5).yaw + 0.5).abs() < 1e-15);
    }

    #[test]
    fn local_world_round_trip() {
        let p = PoseSE2::new(3.0, -2.0, 0.7);
        let (lx, ly) = p.world_to_local(10.0, 4.0);
        let (wx, wy) = p.local_to_world(lx, ly);
        assert!((wx - 10.0).abs() < 1e-12 && (wy - 4.0).abs() < 1e-12);
    }
}
