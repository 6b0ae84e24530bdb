use super::*;
use crate::model::layers::check_session_gradients;
use crate::model::PredictOptions;
use crate::scene::{generate_scene, ScenarioKind, SceneParams};

fn small() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_scenes: 2,
        f_train: 3,
        model: ModelConfig {
            hidden: 16,
            edge_dim: 8,
            mixtures: 2,
            samples: 3,
            conv_channels: 4,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn scenes(count: u64) -> Vec<Scene> {
    (0..count)
        .map(|seed| generate_scene(ScenarioKind::Merge, seed, SceneParams::default()).unwrap())
        .collect()
}

#[test]
fn toml_round_trip_and_defaults() {
    let cfg = TrainConfig::from_toml(
        r#"
        seed = 7
        epochs = 3
        lr = 0.002
        [weights]
        kl = 0.5
        [ablation]
        no_fr = true
        [model]
        hidden = 32
        "#,
    )
    .unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.weights, LossWeights { nll: 1.0, kl: 0.5, recon: 1.0 });
    assert!(cfg.ablation.no_fr);
    assert_eq!(cfg.model.hidden, 32);
    assert_eq!(cfg.batch_scenes, TrainConfig::default().batch_scenes);
    assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);

    let mc = cfg.model_config(5, 9);
    assert_eq!((mc.t_past, mc.t_future), (5, 9));
    assert!(mc.ablation.no_fr);
}

#[test]
fn toml_rejects_bad_configs() {
    assert!(matches!(TrainConfig::from_toml("epoch = 3"), Err(TrainError::Config(_))));
    assert!(matches!(TrainConfig::from_toml("lr = -1.0"), Err(TrainError::Config(_))));
    assert!(matches!(TrainConfig::from_toml("[weights]\nkl = -1.0"), Err(TrainError::Config(_))));
    assert!(matches!(TrainConfig::from_toml("[ablation]\nno_xyz = true"), Err(TrainError::Config(_))));
}

#[test]
fn csv_format() {
    let h = [LossReport {
        step: 0,
        nll: 1.5,
        kl: 0.25,
        recon: 2.0,
        total: 3.75,
    }];
    assert_eq!(losses_to_csv(&h), "step,nll,kl,recon,total\n0,1.5,0.25,2,3.75\n");
}

#[test]
fn objective_terms_are_consistent() {
    let cfg = small();
    let sc = scenes(2);
    let model = Model::new(cfg.model_config(4, 12), 3).unwrap();
    let data = prepare(&sc, 4, 12).unwrap();
    let w = LossWeights { nll: 2.0, kl: 0.5, recon: 3.0 };
    let mut s = Session::new(&model.params);
    let l = scene_objective(&model, &mut s, &data[0], 3, 11, w, 0).unwrap();
    let r = report_of(&s, &l, 0);
    assert!((r.total - (2.0 * r.nll + 0.5 * r.kl + 3.0 * r.recon)).abs() < 1e-12);
    assert!(r.kl >= -1e-12);
    // Zero-initialized occupancy head: uniform over lanes.
    let m = data[0].inputs.num_lanes() as f64;
    assert!((r.nll - m.ln()).abs() < 1e-9);
}

#[test]
fn objective_gradients() {
    let cfg = small();
    let sc = scenes(1);
    let mut model = Model::new(cfg.model_config(4, 12), 5).unwrap();
    // Move zero-initialized heads off zero so every path carries gradient.
    for name in ["waypoint.out.w", "decoder.out.w", "frm.post.head.w"] {
        let t = model.params.get_mut(name).unwrap();
        let len = t.len();
        t.data_mut().iter_mut().enumerate().for_each(|(q, v)| *v = 0.05 * ((q * 7919 % 13) as f64 - 6.0) / 6.0 + 0.001 * (q as f64 / len as f64));
    }
    // The identity-initialized smoothing weights put ReLU inputs exactly on
    // the kink; small positive off-diagonal weights move them off it.
    let gcn: Vec<String> = model.params.names().filter(|n| n.starts_with("frm.gcn")).map(String::from).collect();
    for name in gcn {
        let t = model.params.get_mut(&name).unwrap();
        t.data_mut().iter_mut().enumerate().for_each(|(q, v)| *v += 0.01 + 0.002 * (q % 5) as f64);
    }
    let data = prepare(&sc, 4, 12).unwrap();
    let names: Vec<String> = [
        "waypoint.out.w",
        "frm.gcn0.successor",
        "frm.prior.head.w",
        "frm.post.conv.w",
        "frm.sender.w",
        "decoder.out.b",
        "motion.conv.w",
        "intention.out.w",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    // End-to-end through every stage: forward round-off in the deep graph
    // limits finite differences to about 1e-4 here; the individual terms are
    // checked at 1e-5 in `losses`.
    let report = check_session_gradients(&model.params, &names, &[], 1e-4, 6, |s, _| {
        let l = scene_objective(&model, s, &data[0], 2, 9, LossWeights::default(), 0).map_err(|e| match e {
            TrainError::Model(ModelError::Num(n)) => n,
            other => panic!("{other}"),
        })?;
        Ok(l.total)
    })
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn non_finite_inputs_are_reported_as_divergence() {
    let cfg = small();
    let sc = scenes(1);
    let model = Model::new(cfg.model_config(4, 12), 1).unwrap();
    let mut data = prepare(&sc, 4, 12).unwrap();
    data[0].target.future.data_mut()[7] = f64::NAN;
    let mut s = Session::new(&model.params);
    match scene_objective(&model, &mut s, &data[0], 2, 1, LossWeights::default(), 17) {
        Err(TrainError::Divergence { term, step, .. }) => assert_eq!((term, step), ("kl", 17)),
        other => panic!("unexpected {other:?}"),
    }

    let mut data = prepare(&sc, 4, 12).unwrap();
    data[0].inputs.past.data_mut()[0] = f64::INFINITY;
    let mut s = Session::new(&model.params);
    match scene_objective(&model, &mut s, &data[0], 2, 1, LossWeights::default(), 3) {
        Err(TrainError::Divergence { term, step, .. }) => assert_eq!((term, step), ("nll", 3)),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn training_is_deterministic() {
    let cfg = TrainConfig {
        max_steps: Some(3),
        ..small()
    };
    let sc = scenes(4);
    let a = train(&sc, &cfg, |_| {}).unwrap();
    let b = train(&sc, &cfg, |_| {}).unwrap();
    assert_eq!(a.history.len(), 3);
    assert_eq!(a.history, b.history);
    assert_eq!(a.model, b.model);
    let c = train(&sc, &TrainConfig { seed: 1, ..cfg }, |_| {}).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn training_reduces_loss() {
    let cfg = TrainConfig {
        epochs: 15,
        batch_scenes: 4,
        lr: 3e-3,
        ..small()
    };
    let sc = scenes(8);
    let data = prepare(&sc, 4, 12).unwrap();
    let init = Model::new(cfg.model_config(4, 12), derive_seed(cfg.seed, 0)).unwrap();
    let before = evaluate_loss(&init, &data, 3, 5).unwrap();
    let mut steps = 0;
    let out = train(&sc, &cfg, |_| steps += 1).unwrap();
    assert_eq!(steps, 30);
    let after = evaluate_loss(&out.model, &data, 3, 5).unwrap();
    assert!(after.total < before.total, "{before:?} -> {after:?}");
    assert!(after.nll < before.nll);
}

#[test]
fn checkpoint_round_trip() {
    let cfg = TrainConfig {
        max_steps: Some(2),
        ablation: Ablation {
            symmetric: true,
            ..Ablation::default()
        },
        ..small()
    };
    let sc = scenes(2);
    let out = train(&sc, &cfg, |_| {}).unwrap();
    let ckpt = out.checkpoint(&cfg);
    assert_eq!(ckpt.metadata["variant"], "symmetric");
    assert_eq!(ckpt.metadata["steps"], 2);
    let stored: TrainConfig = serde_json::from_value(ckpt.metadata["train"].clone()).unwrap();
    assert_eq!(stored, cfg);

    let text = serde_json::to_string(&ckpt).unwrap();
    let back = Model::from_checkpoint(&Checkpoint::parse(&text).unwrap()).unwrap();
    assert_eq!(back, out.model);
    let opts = PredictOptions {
        samples: 3,
        seed: 4,
        edge_noise: None,
    };
    assert_eq!(back.predict(&sc[0], &opts).unwrap(), out.model.predict(&sc[0], &opts).unwrap());

    let mut broken = ckpt.clone();
    broken.params.retain(|p| p.name != "decoder.out.w");
    assert!(Model::from_checkpoint(&broken).is_err());
}

#[test]
fn empty_dataset_is_an_error() {
    assert!(matches!(train(&[], &small(), |_| {}), Err(TrainError::EmptyDataset)));
}
