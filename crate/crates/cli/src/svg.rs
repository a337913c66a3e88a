//! Static SVG plot of one scenario: map, histories, ground truth and the
//! predicted modes of every target.

use std::fmt::Write;

use mgtr_core::geometry::Point2;
use mgtr_core::scene::{MapElementKind, Scenario};

pub struct TargetPlot {
    pub target_id: u64,
    /// `(probability, world-frame trajectory)` per mode.
    pub modes: Vec<(f64, Vec<Point2>)>,
}

const SIZE: f64 = 800.0;
const MARGIN: f64 = 20.0;

struct View {
    min: Point2,
    scale: f64,
}

impl View {
    fn fit<'a>(points: impl Iterator<Item = &'a Point2>) -> View {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for i in 0..2 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        if !lo[0].is_finite() {
            return View { min: [0.0, 0.0], scale: 1.0 };
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1.0);
        View {
            min: lo,
            scale: (SIZE - 2.0 * MARGIN) / span,
        }
    }

    // y flipped so north is up
    fn map(&self, p: Point2) -> (f64, f64) {
        (
            MARGIN + (p[0] - self.min[0]) * self.scale,
            SIZE - MARGIN - (p[1] - self.min[1]) * self.scale,
        )
    }

    fn path(&self, points: &[Point2]) -> String {
        let mut d = String::new();
        for (i, p) in points.iter().enumerate() {
            let (x, y) = self.map(*p);
            let _ = write!(d, "{}{x:.2},{y:.2}", if i == 0 { "M" } else { " L" });
        }
        d
    }
}

fn polyline(out: &mut String, view: &View, points: &[Point2], style: &str) {
    if points.len() >= 2 {
        let _ = writeln!(out, r#"<path d="{}" fill="none" {style}/>"#, view.path(points));
    }
}

pub fn render(scene: &Scenario, targets: &[TargetPlot]) -> String {
    let map_points = scene.map.iter().flat_map(|e| e.points.iter());
    let view = View::fit(map_points);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(out, "<title>{}</title>", scene.scenario_id);
    for e in &scene.map {
        let style = match e.kind {
            MapElementKind::LaneCenterline => r##"stroke="#c8c8c8" stroke-width="1" stroke-dasharray="4 3""##,
            MapElementKind::RoadBoundary => r##"stroke="#555555" stroke-width="1.5""##,
            MapElementKind::Crosswalk => r##"stroke="#e0b000" stroke-width="2""##,
        };
        polyline(&mut out, &view, &e.points, style);
    }
    for a in &scene.agents {
        let history: Vec<Point2> = a
            .states
            .iter()
            .zip(&a.valid)
            .filter(|(_, v)| **v)
            .map(|(s, _)| s.position())
            .collect();
        let is_target = scene.targets.contains(&a.agent_id);
        let colour = if is_target { "#1f5fbf" } else { "#888888" };
        polyline(&mut out, &view, &history, &format!(r#"stroke="{colour}" stroke-width="2""#));
        if let Some(last) = history.last() {
            let (x, y) = view.map(*last);
            let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{colour}"/>"#);
        }
        if is_target {
            if let Some(f) = &a.future {
                let gt: Vec<Point2> = history
                    .last()
                    .into_iter()
                    .copied()
                    .chain(f.iter().map(|s| [s.x, s.y]))
                    .collect();
                polyline(&mut out, &view, &gt, r##"stroke="#2a9d2a" stroke-width="2""##);
            }
        }
    }
    for t in targets {
        let start = scene.agent(t.target_id).map(|a| a.current().position());
        for (p, traj) in &t.modes {
            let pts: Vec<Point2> = start.into_iter().chain(traj.iter().copied()).collect();
            let opacity = (0.25 + 0.75 * p).min(1.0);
            polyline(
                &mut out,
                &view,
                &pts,
                &format!(r##"stroke="#d6336c" stroke-width="1.5" stroke-opacity="{opacity:.3}""##),
            );
            if let Some(end) = traj.last() {
                let (x, y) = view.map(*end);
                let _ = writeln!(
                    out,
                    r##"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="#d6336c" fill-opacity="{opacity:.3}"/>"##
                );
            }
        }
    }
    out.push_str("</svg>\n");
    out
}
