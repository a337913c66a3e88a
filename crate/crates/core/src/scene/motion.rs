//! Closed-form agent motion: a piecewise constant-curvature path traversed
//! with a constant-speed or stop-at-point speed profile.

use crate::geometry::{wrap_angle, Point2};

/// One piece of a path. A curvature of zero is a straight line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathSegment {
    pub length: f64,
    pub curvature: f64,
}

impl PathSegment {
    pub fn straight(length: f64) -> Self {
        PathSegment {
            length,
            curvature: 0.0,
        }
    }

    pub fn arc(radius: f64, sweep: f64) -> Self {
        // signed radius: positive turns left
        PathSegment {
            length: (radius * sweep).abs(),
            curvature: sweep.signum() / radius,
        }
    }
}

/// Uniform deceleration that starts at `start_time` and brings the agent to
/// rest.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stop {
    pub start_time: f64,
    pub decel: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionProfile {
    pub start: Point2,
    pub heading: f64,
    pub speed: f64,
    /// Traversed in order from arc length 0; the path continues straight
    /// after the last segment and before arc length 0.
    pub segments: Vec<PathSegment>,
    pub stop: Option<Stop>,
}

fn advance(p: Point2, heading: f64, curvature: f64, s: f64) -> (Point2, f64) {
    if curvature.abs() < 1e-12 {
        let (sn, cs) = heading.sin_cos();
        ([p[0] + s * cs, p[1] + s * sn], heading)
    } else {
        let h1 = heading + curvature * s;
        (
            [
                p[0] + (h1.sin() - heading.sin()) / curvature,
                p[1] - (h1.cos() - heading.cos()) / curvature,
            ],
            h1,
        )
    }
}

impl MotionProfile {
    pub fn constant_velocity(start: Point2, heading: f64, speed: f64) -> Self {
        MotionProfile {
            start,
            heading,
            speed,
            segments: Vec::new(),
            stop: None,
        }
    }

    /// Position and tangent heading at arc length `s` (may be negative).
    pub fn path_at(&self, s: f64) -> (Point2, f64) {
        if s <= 0.0 {
            return advance(self.start, self.heading, 0.0, s);
        }
        let mut p = self.start;
        let mut h = self.heading;
        let mut remaining = s;
        for seg in &self.segments {
            if remaining <= seg.length {
                let (q, hq) = advance(p, h, seg.curvature, remaining);
                return (q, wrap_angle(hq));
            }
            let (q, hq) = advance(p, h, seg.curvature, seg.length);
            p = q;
            h = hq;
            remaining -= seg.length;
        }
        let (q, hq) = advance(p, h, 0.0, remaining);
        (q, wrap_angle(hq))
    }

    /// Arc length travelled and speed at time `t` (negative `t` is history,
    /// always at the initial speed).
    pub fn travel(&self, t: f64) -> (f64, f64) {
        match self.stop {
            Some(stop) if t > stop.start_time => {
                let stop_duration = self.speed / stop.decel;
                let dt = (t - stop.start_time).min(stop_duration);
                let s = self.speed * stop.start_time + self.speed * dt - 0.5 * stop.decel * dt * dt;
                let v = (self.speed - stop.decel * dt).max(0.0);
                (s, v)
            }
            _ => (self.speed * t, self.speed),
        }
    }

    pub fn position_at(&self, t: f64) -> Point2 {
        self.path_at(self.travel(t).0).0
    }

    pub fn velocity_at(&self, t: f64) -> Point2 {
        let (s, v) = self.travel(t);
        let (_, h) = self.path_at(s);
        [v * h.cos(), v * h.sin()]
    }

    pub fn heading_at(&self, t: f64) -> f64 {
        self.path_at(self.travel(t).0).1
    }
}
