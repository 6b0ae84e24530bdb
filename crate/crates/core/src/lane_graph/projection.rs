use super::geometry::{project_onto_polyline, Point};
use super::{GraphError, LaneGraph, WaypointOccupancy};

/// Largest admissible distance (m) between an agent and its lane centerline.
pub const DEFAULT_MAX_OFFLANE: f64 = 5.0;

/// Lane index occupied at each timestep: the closest centerline among
/// segments whose local tangent lies within 90 degrees of the heading.
/// Equal distances resolve to the lowest segment id.
pub fn project_track_indices(
    positions: &[Point],
    headings: &[f64],
    graph: &LaneGraph,
    max_offlane: f64,
) -> Result<Vec<usize>, GraphError> {
    if positions.len() != headings.len() {
        return Err(GraphError::TrackLength {
            positions: positions.len(),
            headings: headings.len(),
        });
    }
    positions
        .iter()
        .zip(headings)
        .enumerate()
        .map(|(step, (&p, &h))| {
            let dir = [h.cos(), h.sin()];
            let mut best: Option<(usize, f64)> = None;
            for (m, seg) in graph.segments().iter().enumerate() {
                let proj = project_onto_polyline(&seg.centerline, p);
                let aligned = proj.tangent[0] * dir[0] + proj.tangent[1] * dir[1] >= 0.0;
                if aligned && best.is_none_or(|(_, d)| proj.distance < d) {
                    best = Some((m, proj.distance));
                }
            }
            match best {
                Some((m, d)) if d <= max_offlane => Ok(m),
                other => Err(GraphError::OffMap {
                    timestep: step,
                    distance: other.map_or(f64::INFINITY, |(_, d)| d),
                    limit: max_offlane,
                }),
            }
        })
        .collect()
}

/// Ground-truth occupancy (`1 x M x T`) of one track.
pub fn project_track(
    positions: &[Point],
    headings: &[f64],
    graph: &LaneGraph,
    max_offlane: f64,
) -> Result<WaypointOccupancy, GraphError> {
    let lanes = project_track_indices(positions, headings, graph, max_offlane)?;
    WaypointOccupancy::one_hot(&[lanes], graph.num_segments())
}
