use radcam_core::numkit::ParamSet;
use radcam_core::pipeline::gradsuite::{default_registry, run_suite, TOLERANCE};
use radcam_core::pipeline::{
    ablate, evaluate_bypass, evaluate_model, load_checkpoint, load_samples, save_checkpoint, to_gray, train,
    AblationAxis, Pipeline, PipelineConfig,
};
use radcam_core::Error;

fn small() -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.train.scenes = 4;
    c.train.epochs = 2;
    c.eval.test_scenes = 2;
    c
}

#[test]
fn training_and_evaluation_are_deterministic() {
    let cfg = small();
    let run = || {
        let pipe = Pipeline::new(cfg.clone()).unwrap();
        let samples = load_samples(&pipe, &cfg.train_seeds()).unwrap();
        let test = load_samples(&pipe, &cfg.test_seeds()).unwrap();
        let mut p = pipe.init_params(cfg.seed).unwrap();
        let rep = train(&pipe, &mut p, &samples).unwrap();
        (rep, p.clone(), evaluate_model(&pipe, &p, &test).unwrap())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    assert_eq!(a.0.epochs.len(), 2);
    assert_eq!(a.0.config_fingerprint, cfg.fingerprint());
    assert!(a
        .0
        .epochs
        .iter()
        .all(|e| e.radar_grad_norm > 0.0 && e.camera_grad_norm > 0.0));
}

#[test]
fn zero_epochs_leave_weights_untouched() {
    let mut cfg = small();
    cfg.train.epochs = 0;
    let pipe = Pipeline::new(cfg.clone()).unwrap();
    let samples = load_samples(&pipe, &cfg.train_seeds()).unwrap();
    let mut p = pipe.init_params(7).unwrap();
    let rep = train(&pipe, &mut p, &samples).unwrap();
    assert_eq!(p, pipe.init_params(7).unwrap());
    assert!(rep.epochs.is_empty());
    assert_eq!(rep.initial_loss, rep.final_loss);
}

#[test]
fn ground_truth_scores_perfectly_against_itself() {
    let cfg = small();
    let pipe = Pipeline::new(cfg.clone()).unwrap();
    let test = load_samples(&pipe, &cfg.test_seeds()).unwrap();
    let rep = evaluate_bypass(&pipe, &test).unwrap();
    assert_eq!(rep.entire_area.map, Some(1.0));
    assert!(rep.entire_area.counts.iter().all(|c| c.fp == 0 && c.fn_ == 0));
}

#[test]
fn empty_sets_are_errors() {
    let pipe = Pipeline::new(small()).unwrap();
    let p = pipe.init_params(0).unwrap();
    assert!(evaluate_model(&pipe, &p, &[]).is_err());
    assert!(evaluate_bypass(&pipe, &[]).is_err());
    let mut cfg = small();
    cfg.train.scenes = 0;
    assert!(matches!(Pipeline::new(cfg), Err(Error::Config(_))));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = small();
    c.model.frames = 2;
    assert!(c.validate().is_err());
    let mut c = small();
    c.model.frames = c.scene.frames + 2;
    if c.model.frames <= 5 {
        assert!(c.validate().is_err());
    }
    let mut c = small();
    c.eval.threshold = 1.0;
    assert!(c.validate().is_err());
    assert!(PipelineConfig::from_toml_str("[train]\nbogus = 1\n").is_err());
}

#[test]
fn config_survives_toml_round_trip() {
    let mut c = small();
    c.seed = 99;
    c.train.optimizer.lr = 1.0 / 3.0;
    let text = c.to_toml_string().unwrap();
    let back = PipelineConfig::from_toml_str(&text).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.fingerprint(), c.fingerprint());
    assert_ne!(small().fingerprint(), c.fingerprint());
    // omitted keys take their defaults
    assert_eq!(PipelineConfig::from_toml_str("").unwrap(), PipelineConfig::default());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let cfg = small();
    let pipe = Pipeline::new(cfg.clone()).unwrap();
    let p = pipe.init_params(3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &cfg, &p).unwrap();
    let (pipe2, q) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(pipe2.config, cfg);
    assert_eq!(q.num_scalars(), p.num_scalars());
    for (a, b) in p.tensors().iter().zip(q.tensors()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn rendered_maps_match_the_grid() {
    let cfg = small();
    let pipe = Pipeline::new(cfg.clone()).unwrap();
    let s = &load_samples(&pipe, &[1]).unwrap()[0];
    let p = pipe.init_params(0).unwrap();
    let t = pipe.forward(&p, s).unwrap();
    for map in [&t.radar_map, &t.camera_map, &t.fused] {
        let (img, _) = to_gray(&map.tensor).unwrap();
        assert_eq!((img.height, img.width), (cfg.scene.grid.rows, cfg.scene.grid.cols));
        assert_eq!(img.pixels.len(), img.height * img.width);
    }
    let (black, flag) = to_gray(&radcam_core::numkit::Tensor::zeros(&[2, 3, 3])).unwrap();
    assert!(black.pixels.iter().all(|v| *v == 0) && !flag);
    let (gray, flag) = to_gray(&radcam_core::numkit::Tensor::full(&[1, 3, 3], 2.0)).unwrap();
    assert!(gray.pixels.iter().all(|v| *v == 128) && flag);
}

#[test]
fn gradient_suite_passes_and_catches_corruption() {
    let rep = run_suite(&default_registry(), 2, 5, TOLERANCE);
    assert!(rep.passed, "{:?}", rep.failures().collect::<Vec<_>>());
    assert!(rep.ops.iter().all(|o| o.scalars_checked > 0));

    let bad: Vec<_> = default_registry()
        .into_iter()
        .take(1)
        .map(|c| c.corrupted(1.01))
        .collect();
    let rep = run_suite(&bad, 2, 5, TOLERANCE);
    assert!(!rep.passed);
    assert!(rep.ops[0].max_rel_error > 1e-3);
}

#[test]
fn empty_registry_passes_with_a_warning() {
    let rep = run_suite(&[], 5, 0, TOLERANCE);
    assert!(rep.passed);
    assert!(rep.ops.is_empty());
    assert_eq!(rep.warnings.len(), 1);
}

#[test]
fn ablation_rows_share_everything_but_the_axis() {
    let mut cfg = small();
    cfg.train.epochs = 1;
    cfg.train.scenes = 2;
    cfg.eval.test_scenes = 1;
    let rep = ablate(&cfg, AblationAxis::Order).unwrap();
    let names: Vec<_> = rep.rows.iter().map(|r| r.setting.as_str()).collect();
    assert_eq!(names.len(), 2);
    let r0 = &rep.rows[0];
    for r in &rep.rows {
        assert_eq!(r.fixed_fingerprint, rep.base_fingerprint);
        assert_eq!(r.scene_fingerprint, r0.scene_fingerprint);
        assert_eq!(r.seed, r0.seed);
    }
    assert_ne!(rep.rows[0].config_fingerprint, rep.rows[1].config_fingerprint);
}

#[test]
fn nested_tables_may_be_partial() {
    let c = PipelineConfig::from_toml_str("[train.optimizer]\nlr = 0.01\n\n[scene.grid]\nrows = 16\n").unwrap();
    assert_eq!(c.train.optimizer.lr, 0.01);
    assert_eq!(c.train.optimizer.beta1, PipelineConfig::default().train.optimizer.beta1);
    assert_eq!(c.scene.grid.rows, 16);
    assert_eq!(c.scene.grid.cols, PipelineConfig::default().scene.grid.cols);
}
