//! Planar rigid transforms.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub type Point2 = [f64; 2];

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

pub fn rotate(v: Point2, angle: f64) -> Point2 {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

pub fn distance(a: Point2, b: Point2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn distance_sq(a: Point2, b: Point2) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// A planar pose; also used as a rigid transform `p ↦ R(heading)·p + position`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub position: Point2,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose2 {
            position: [x, y],
            heading,
        }
    }

    pub fn identity() -> Self {
        Pose2::new(0.0, 0.0, 0.0)
    }

    /// Maps a world point into the frame where this pose is the origin
    /// facing +x.
    pub fn to_local(&self, p: Point2) -> Point2 {
        rotate(
            [p[0] - self.position[0], p[1] - self.position[1]],
            -self.heading,
        )
    }

    pub fn to_world(&self, p: Point2) -> Point2 {
        let r = rotate(p, self.heading);
        [r[0] + self.position[0], r[1] + self.position[1]]
    }

    pub fn vector_to_local(&self, v: Point2) -> Point2 {
        rotate(v, -self.heading)
    }

    pub fn vector_to_world(&self, v: Point2) -> Point2 {
        rotate(v, self.heading)
    }

    pub fn heading_to_local(&self, h: f64) -> f64 {
        wrap_angle(h - self.heading)
    }

    pub fn heading_to_world(&self, h: f64) -> f64 {
        wrap_angle(h + self.heading)
    }

    /// `self ∘ other`: first apply `other`, then `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        Pose2 {
            position: self.to_world(other.position),
            heading: wrap_angle(self.heading + other.heading),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn local_world_inverse() {
        let pose = Pose2::new(3.0, -2.0, 0.7);
        let p = [1.5, 4.0];
        let back = pose.to_world(pose.to_local(p));
        assert!(distance(p, back) < 1e-12);
    }
}
