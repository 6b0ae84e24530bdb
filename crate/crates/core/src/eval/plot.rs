use std::fmt::Write as _;

use crate::lane_graph::geometry::Point;
use crate::model::PredictionSet;
use crate::scene::Scene;

const WIDTH: f64 = 800.0;
const MARGIN: f64 = 20.0;

struct View {
    min: Point,
    scale: f64,
    height: f64,
}

impl View {
    fn fit<'a>(points: impl Iterator<Item = &'a Point>) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if !lo[0].is_finite() {
            (lo, hi) = ([0.0; 2], [1.0; 2]);
        }
        let span = [(hi[0] - lo[0]).max(1.0), (hi[1] - lo[1]).max(1.0)];
        let scale = (WIDTH - 2.0 * MARGIN) / span[0];
        Self {
            min: lo,
            scale,
            height: span[1] * scale + 2.0 * MARGIN,
        }
    }

    /// SVG's y axis points down; world y points up.
    fn map(&self, p: Point) -> (f64, f64) {
        (
            MARGIN + (p[0] - self.min[0]) * self.scale,
            self.height - MARGIN - (p[1] - self.min[1]) * self.scale,
        )
    }

    fn polyline(&self, out: &mut String, pts: &[Point], style: &str) {
        if pts.is_empty() {
            return;
        }
        out.push_str("  <polyline points=\"");
        for (i, p) in pts.iter().enumerate() {
            let (x, y) = self.map(*p);
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{x:.2},{y:.2}").expect("string write");
        }
        writeln!(out, "\" fill=\"none\" {style}/>").expect("string write");
    }
}

/// One scene as SVG: lanes gray dashed, past green, ground truth blue and
/// predicted samples red.
pub fn scene_svg(scene: &Scene, predictions: Option<&PredictionSet>) -> String {
    let lanes = scene.graph.segments();
    let samples = predictions.map(|p| p.trajectories.iter().flatten().flatten());
    let view = View::fit(
        lanes
            .iter()
            .flat_map(|l| &l.centerline)
            .chain(scene.agents.iter().flat_map(|a| a.past.iter().chain(&a.future)))
            .chain(samples.into_iter().flatten()),
    );
    let mut out = String::new();
    writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#).expect("string write");
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{h:.0}" viewBox="0 0 {WIDTH:.0} {h:.0}">"#,
        h = view.height
    )
    .expect("string write");
    writeln!(out, "  <title>{} scene {}</title>", scene.scenario_kind.name(), scene.seed).expect("string write");
    writeln!(out, r#"  <rect width="100%" height="100%" fill="white"/>"#).expect("string write");
    for lane in lanes {
        view.polyline(&mut out, &lane.centerline, r#"stroke="gray" stroke-width="1.5" stroke-dasharray="6 4""#);
    }
    if let Some(pred) = predictions {
        for (agent, samples) in scene.agents.iter().zip(&pred.trajectories) {
            for s in samples {
                let mut path = vec![agent.current_position()];
                path.extend_from_slice(s);
                view.polyline(&mut out, &path, r#"stroke="red" stroke-width="1.2" stroke-opacity="0.6""#);
            }
        }
    }
    for agent in &scene.agents {
        let mut gt = vec![agent.current_position()];
        gt.extend_from_slice(&agent.future);
        view.polyline(&mut out, &gt, r#"stroke="blue" stroke-width="2""#);
        view.polyline(&mut out, &agent.past, r#"stroke="green" stroke-width="2.5""#);
        let (x, y) = view.map(agent.current_position());
        writeln!(out, r#"  <circle cx="{x:.2}" cy="{y:.2}" r="3" fill="green"/>"#).expect("string write");
    }
    out.push_str("</svg>\n");
    out
}
