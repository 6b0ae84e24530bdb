pub mod numkit;
pub mod lane_graph;
pub mod scene;
pub mod model;
pub mod frm;
pub mod training;
pub mod eval;
