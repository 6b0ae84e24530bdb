//! Line-delimited JSON scene files.
//!
//! Line 1 is a header object `{"format_version": 1, "scenes": <count>}`;
//! each following line is one [`Scene`]. The declared count lets readers
//! detect files cut at a line boundary.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Scene;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported dataset format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("line {line}: parse error at byte offset {byte_offset}: {message}")]
    Parse {
        line: usize,
        byte_offset: usize,
        message: String,
    },
    #[error("line {line}: schema violation: {message}")]
    Schema { line: usize, message: String },
    #[error("truncated file: header declares {expected} scenes, found {found} (ends at byte offset {byte_offset})")]
    Truncated {
        expected: usize,
        found: usize,
        byte_offset: usize,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    scenes: usize,
}

pub fn write_dataset(scenes: &[Scene], path: &Path) -> Result<(), DatasetError> {
    let mut out = serde_json::to_string(&Header {
        format_version: DATASET_FORMAT_VERSION,
        scenes: scenes.len(),
    })
    .expect("header serializes");
    out.push('\n');
    for s in scenes {
        out.push_str(&serde_json::to_string(s).expect("scene serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_dataset(path: &Path) -> Result<Vec<Scene>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text)
}

fn classify(err: serde_json::Error, line: usize, line_start: usize) -> DatasetError {
    match err.classify() {
        serde_json::error::Category::Data => DatasetError::Schema {
            line,
            message: err.to_string(),
        },
        _ => DatasetError::Parse {
            line,
            byte_offset: line_start + err.column().saturating_sub(1),
            message: err.to_string(),
        },
    }
}

pub fn parse_dataset(text: &str) -> Result<Vec<Scene>, DatasetError> {
    let mut offset = 0;
    let mut lines = text.split_inclusive('\n').map(|l| {
        let start = offset;
        offset += l.len();
        (start, l.trim_end_matches(['\n', '\r']))
    });

    let (start, first) = lines.next().unwrap_or((0, ""));
    let header: Header = serde_json::from_str(first).map_err(|e| classify(e, 1, start))?;
    if header.format_version != DATASET_FORMAT_VERSION {
        return Err(DatasetError::Version {
            found: header.format_version,
            expected: DATASET_FORMAT_VERSION,
        });
    }

    let mut scenes = Vec::with_capacity(header.scenes);
    for (i, (start, line)) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let scene: Scene = serde_json::from_str(line).map_err(|e| classify(e, line_no, start))?;
        scene.validate().map_err(|e| DatasetError::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        scenes.push(scene);
    }
    if scenes.len() != header.scenes {
        return Err(DatasetError::Truncated {
            expected: header.scenes,
            found: scenes.len(),
            byte_offset: text.len(),
        });
    }
    Ok(scenes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, ScenarioKind, SceneParams};

    fn sample() -> Vec<Scene> {
        let p = SceneParams {
            num_agents: 3,
            ..SceneParams::default()
        };
        vec![
            generate_scene(ScenarioKind::Merge, 1, p).unwrap(),
            generate_scene(ScenarioKind::Intersection, 2, p).unwrap(),
            generate_scene(ScenarioKind::Follow, 3, p).unwrap(),
        ]
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenes.jsonl");
        let scenes = sample();
        write_dataset(&scenes, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("{\"format_version\":1"));
        assert_eq!(read_dataset(&path).unwrap(), scenes);
    }

    #[test]
    fn truncated_mid_line_reports_byte_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenes.jsonl");
        write_dataset(&sample(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let cut = &text[..text.len() - 40];
        match parse_dataset(cut) {
            Err(DatasetError::Parse { line, byte_offset, .. }) => {
                assert_eq!(line, 4);
                assert!(byte_offset > text.find("\n{\"scenario_kind\":\"follow").unwrap());
                assert!(byte_offset <= cut.len());
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        // Cut on a line boundary: caught by the header count.
        let lines: Vec<&str> = text.split_inclusive('\n').collect();
        let cut = lines[..3].concat();
        assert!(matches!(
            parse_dataset(&cut),
            Err(DatasetError::Truncated { expected: 3, found: 2, .. })
        ));
    }

    #[test]
    fn unknown_kind_is_schema_error() {
        let text = serde_json::to_string(&sample()[0]).unwrap().replace("\"merge\"", "\"roundabout\"");
        let file = format!("{{\"format_version\":1,\"scenes\":1}}\n{text}\n");
        match parse_dataset(&file) {
            Err(DatasetError::Schema { line: 2, message }) => assert!(message.contains("roundabout"), "{message}"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch() {
        assert!(matches!(
            parse_dataset("{\"format_version\":7,\"scenes\":0}\n"),
            Err(DatasetError::Version { found: 7, .. })
        ));
    }
}
