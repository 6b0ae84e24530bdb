use proptest::prelude::*;

use super::*;
use crate::model::ModelConfig;
use crate::scene::{generate_scene, ScenarioKind, SceneParams};

fn line(offset: Point, steps: usize) -> Vec<Point> {
    (1..=steps).map(|k| [k as f64 + offset[0], offset[1]]).collect()
}

#[test]
fn ade_examples() {
    let gt = line([0.0, 0.0], 6);
    assert_eq!(min_ade(std::slice::from_ref(&gt), &gt, 1).unwrap(), 0.0);
    assert!((min_ade(&[line([3.0, 4.0], 6)], &gt, 1).unwrap() - 5.0).abs() < 1e-12);
    let preds = vec![line([3.0, 4.0], 6), line([0.0, 1.0], 6)];
    assert!(min_ade(&preds, &gt, 2).unwrap() <= min_ade(&preds, &gt, 1).unwrap());
    assert_eq!(min_ade(&preds, &gt, 3), Err(EvalError::TooFewSamples { k: 3, available: 2 }));
    assert_eq!(min_ade(&preds, &gt, 0), Err(EvalError::ZeroK));
    assert!(matches!(min_ade(&[line([0.0, 0.0], 5)], &gt, 1), Err(EvalError::Horizon { .. })));
}

#[test]
fn fde_examples() {
    let gt = line([0.0, 0.0], 4);
    let mut same_end = line([5.0, 5.0], 4);
    *same_end.last_mut().unwrap() = *gt.last().unwrap();
    assert_eq!(min_fde(&[same_end], &gt, 1).unwrap(), 0.0);
    assert!((min_fde(&[line([0.0, 2.0], 4)], &gt, 1).unwrap() - 2.0).abs() < 1e-12);
    // k = 1 sees the first-ranked sample only.
    let preds = vec![line([0.0, 2.0], 4), gt.clone()];
    assert!((min_fde(&preds, &gt, 1).unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(min_fde(&preds, &gt, 2).unwrap(), 0.0);
}

#[test]
fn miss_rate_examples() {
    let gt = line([0.0, 0.0], 3);
    let hit = vec![line([0.0, 1.0], 3)];
    let edge = vec![line([0.0, 2.0], 3)];
    let miss = vec![line([0.0, 2.5], 3)];
    assert_eq!(miss_rate(&[(&hit, &gt), (&edge, &gt)], 1, 2.0).unwrap(), 0.0);
    assert_eq!(miss_rate(&[(&miss, &gt), (&miss, &gt)], 1, 2.0).unwrap(), 1.0);
    assert_eq!(miss_rate(&[(&miss, &gt), (&hit, &gt)], 1, 2.0).unwrap(), 0.5);
    assert!(miss_rate(&[(&hit, &gt)], 1, 0.0).is_err());
}

fn merge(seed: u64) -> Scene {
    generate_scene(ScenarioKind::Merge, seed, SceneParams::default()).unwrap()
}

#[test]
fn perfect_predictions_score_zero() {
    let scenes: Vec<Scene> = (0..3).map(merge).collect();
    let preds: Vec<PredictionSet> = scenes
        .iter()
        .map(|s| {
            let mut p = constant_velocity_baseline(s, 6);
            for (traj, agent) in p.trajectories.iter_mut().zip(&s.agents) {
                traj.iter_mut().for_each(|t| t.clone_from(&agent.future));
            }
            p
        })
        .collect();
    let r = score(&scenes, &preds, &DEFAULT_KS, "oracle").unwrap();
    assert_eq!(r.num_agents, 6);
    assert!(r.made.values().chain(r.mfde.values()).chain(r.miss_rate.values()).all(|v| *v == 0.0));
    assert_eq!(r.made.keys().copied().collect::<Vec<_>>(), vec![1, 5, 6]);
    assert!(r.is_consistent());
    assert!(score(&scenes, &preds[..2], &DEFAULT_KS, "x").is_err());
    assert!(score(&scenes[1..], &preds[..2], &DEFAULT_KS, "x").is_err());
}

#[test]
fn baseline_examples() {
    let mut s = merge(0);
    let t_f = s.t_future();
    // Stationary past.
    let here = s.agents[0].current_position();
    s.agents[0].past.iter_mut().for_each(|p| *p = here);
    // Constant 1 m/step along x with matching ground truth.
    let start = s.agents[1].current_position();
    let t_p = s.agents[1].past.len();
    s.agents[1].past = (0..t_p).map(|k| [start[0] + k as f64, start[1]]).collect();
    let cur = s.agents[1].current_position();
    s.agents[1].future = (1..=t_f).map(|k| [cur[0] + k as f64, cur[1]]).collect();
    let p = constant_velocity_baseline(&s, 3);
    assert_eq!(p.num_samples(), 3);
    assert!(p.trajectories[0][0].iter().all(|q| *q == here));
    assert!(min_ade(&p.trajectories[1], &s.agents[1].future, 1).unwrap() < 1e-12);

    // Curving ground truth.
    s.agents[1].future = (1..=t_f).map(|k| [cur[0] + k as f64, cur[1] + 0.1 * (k * k) as f64]).collect();
    let p = constant_velocity_baseline(&s, 1);
    assert!(min_ade(&p.trajectories[1], &s.agents[1].future, 1).unwrap() > 0.0);

    // Single-point past.
    s.agents[1].past = vec![cur];
    let p = constant_velocity_baseline(&s, 1);
    assert!(p.trajectories[1][0].iter().all(|q| *q == cur));
}

fn tiny_model() -> Model {
    Model::new(
        ModelConfig {
            hidden: 16,
            edge_dim: 8,
            mixtures: 2,
            conv_channels: 4,
            ..ModelConfig::default()
        },
        1,
    )
    .unwrap()
}

#[test]
fn evaluation_is_order_independent_and_reproducible() {
    let model = tiny_model();
    let scenes: Vec<Scene> = (0..5).map(merge).collect();
    let a = evaluate_model(&model, &scenes, &DEFAULT_KS, 9).unwrap();
    let mut rev = scenes.clone();
    rev.reverse();
    let b = evaluate_model(&model, &rev, &DEFAULT_KS, 9).unwrap();
    for (x, y) in [(&a.made, &b.made), (&a.mfde, &b.mfde), (&a.miss_rate, &b.miss_rate)] {
        for k in DEFAULT_KS {
            assert!((x[&k] - y[&k]).abs() <= 1e-12);
        }
    }
    assert_eq!(a.to_json(), evaluate_model(&model, &scenes, &DEFAULT_KS, 9).unwrap().to_json());
    assert!(a.is_consistent());
    assert_eq!(a.variant, "full");
    let back: MetricsReport = serde_json::from_str(&a.to_json()).unwrap();
    assert_eq!(back, a);
}

#[test]
fn edge_noise_probe() {
    let mut model = tiny_model();
    let scenes: Vec<Scene> = (0..2).map(merge).collect();
    assert_eq!(edge_sensitivity(&model, &scenes, 3, 0, 0.0).unwrap(), 0.0);
    // A zero-initialized decoder output ignores every input.
    assert_eq!(edge_sensitivity(&model, &scenes, 3, 0, 1.0).unwrap(), 0.0);
    let w = model.params.get_mut("decoder.out.w").unwrap();
    w.data_mut().iter_mut().enumerate().for_each(|(q, v)| *v = 0.1 * ((q % 7) as f64 - 3.0));
    assert!(edge_sensitivity(&model, &scenes, 3, 0, 1.0).unwrap() > 0.0);
}

#[test]
fn svg_has_expected_layers() {
    let s = merge(3);
    let p = constant_velocity_baseline(&s, 2);
    let svg = scene_svg(&s, Some(&p));
    assert!(svg.starts_with("<?xml version=\"1.0\""));
    assert!(svg.contains("<svg xmlns=\"http://www.w3.org/2000/svg\""));
    assert!(svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("stroke-dasharray").count(), s.graph.num_segments());
    assert_eq!(svg.matches("stroke=\"red\"").count(), 4);
    assert_eq!(svg.matches("stroke=\"blue\"").count(), 2);
    assert_eq!(svg.matches("stroke=\"green\"").count(), 2);
    assert!(!scene_svg(&s, None).contains("stroke=\"red\""));
}

fn arb_samples() -> impl Strategy<Value = (Vec<Vec<Point>>, Vec<Point>)> {
    let pt = || (-50.0..50.0f64, -50.0..50.0f64).prop_map(|(x, y)| [x, y]);
    (1usize..8, 1usize..6).prop_flat_map(move |(t, f)| (prop::collection::vec(prop::collection::vec(pt(), t), f), prop::collection::vec(pt(), t)))
}

proptest! {
    #[test]
    fn metrics_monotone_in_k((preds, gt) in arb_samples()) {
        for k in 1..preds.len() {
            prop_assert!(min_ade(&preds, &gt, k + 1).unwrap() <= min_ade(&preds, &gt, k).unwrap());
            prop_assert!(min_fde(&preds, &gt, k + 1).unwrap() <= min_fde(&preds, &gt, k).unwrap());
            let one = [(preds.as_slice(), gt.as_slice())];
            prop_assert!(miss_rate(&one, k + 1, 2.0).unwrap() <= miss_rate(&one, k, 2.0).unwrap());
        }
        prop_assert!(min_ade(&preds, &gt, 1).unwrap() >= 0.0);
    }
}
