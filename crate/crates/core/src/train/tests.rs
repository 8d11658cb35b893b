use super::*;
use crate::data::{synth_generate, window_samples, SynthConfig};
use crate::numerics::functions::smooth_l1_elem;

fn cfg() -> TrainConfig {
    let mut c = TrainConfig {
        batch_size: 16,
        max_steps: 12,
        eval_every: 4,
        lr: 1e-3,
        seed: 3,
        ..TrainConfig::default()
    };
    c.model = ModelConfig {
        d_model: 8,
        m_obs: 6,
        n_pred: 4,
        seed: 3,
        ..ModelConfig::default()
    };
    c
}

fn samples(n_tracks: usize, seed: u64) -> Vec<TrackSample> {
    let tracks = synth_generate(&SynthConfig {
        n_tracks,
        len: 14,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    window_samples(&tracks, 6, 4, 2).unwrap()
}

#[test]
fn step_zero_loss_is_closed_form() {
    let train = samples(3, 1);
    let mut c = cfg();
    c.batch_size = train.len();
    let out = train_loop(&train, &[], &c).unwrap();
    let mut total = 0.0;
    let mut count = 0;
    for s in &train {
        let r = reference_for_window(&s.obs_boxes, 4).unwrap();
        for d in offsets_from_targets(&r, &s.future_boxes).unwrap().flat() {
            total += smooth_l1_elem(-d, c.beta);
            count += 1;
        }
    }
    let closed = total / count as f64;
    let got = out.log[0].train_loss;
    assert!((got - closed).abs() <= 1e-12 * closed, "{got} vs {closed}");
    assert!(closed > 0.0);
}

#[test]
fn one_step_decreases_the_loss() {
    let train = samples(2, 5);
    let refs: Vec<&TrackSample> = train.iter().collect();
    let c = TrainConfig {
        batch_size: train.len(),
        max_steps: 1,
        eval_every: 1,
        lr: 1e-4,
        ..cfg()
    };
    let before = batch_loss(&init_model(&train, &c).unwrap(), &refs, c.beta).unwrap();
    let out = train_loop(&train, &[], &c).unwrap();
    assert_eq!(out.steps_run, 1);
    assert_eq!(out.log.len(), 2);
    assert!((out.log[0].train_loss - before).abs() <= 1e-12 * before);
    assert!(out.log[1].train_loss < before, "{} !< {before}", out.log[1].train_loss);
}

#[test]
fn same_seed_same_log_and_bytes() {
    let train = samples(6, 2);
    let val = samples(2, 9);
    let a = train_loop(&train, &val, &cfg()).unwrap();
    let b = train_loop(&train, &val, &cfg()).unwrap();
    assert_eq!(log_to_csv(&a.log), log_to_csv(&b.log));
    assert_eq!(a.best.to_bytes(), b.best.to_bytes());
    let mut other = cfg();
    other.set("seed", "4").unwrap();
    let c = train_loop(&train, &val, &other).unwrap();
    assert_ne!(log_to_csv(&a.log), log_to_csv(&c.log));
}

#[test]
fn best_checkpoint_is_the_minimum_logged_ade() {
    let train = samples(6, 2);
    let val = samples(2, 9);
    let c = TrainConfig {
        max_steps: 40,
        eval_every: 2,
        patience: 3,
        lr: 3e-2,
        ..cfg()
    };
    let out = train_loop(&train, &val, &c).unwrap();
    let min = out.log.iter().map(|r| r.val_ade).fold(f64::INFINITY, f64::min);
    assert_eq!(out.best.best_val_ade, min);
    let row = out.log.iter().find(|r| r.step == out.best.step).unwrap();
    assert_eq!(row.val_ade, min);
    let reloaded = out.best.model().unwrap();
    assert_eq!(evaluate(&val, &reloaded, false).unwrap().ade, min);
    if out.stopped_early {
        let tail = &out.log[out.log.len() - c.patience..];
        assert!(tail.iter().all(|r| r.val_ade >= min));
    }
}

#[test]
fn empty_sets_are_errors() {
    let c = cfg();
    assert!(matches!(train_loop(&[], &[], &c), Err(Error::EmptyDataset(_))));
    let model = TrajMamba::new(c.model.clone()).unwrap();
    assert!(matches!(evaluate(&[], &model, false), Err(Error::EmptyDataset(_))));
    assert!(matches!(evaluate_cvcs(&[], 4), Err(Error::EmptyDataset(_))));
}

#[test]
fn non_finite_loss_names_the_step() {
    let mut train = samples(1, 1);
    train[0].future_boxes[2].x = f64::NAN;
    let e = train_loop(&train, &[], &cfg()).unwrap_err();
    assert!(matches!(e, Error::NonFiniteLoss { step: 0, .. }), "{e}");
}

#[test]
fn untrained_model_reports_the_cvcs_baseline() {
    let s = samples(4, 7);
    let c = cfg();
    let model = TrajMamba::new(c.model.clone()).unwrap();
    let r = evaluate(&s, &model, false).unwrap();
    assert_eq!(r, evaluate_cvcs(&s, 4).unwrap());
    assert_eq!(r, evaluate(&s, &model, true).unwrap());
    for v in [r.ade, r.fde, r.arb, r.frb] {
        assert!(v.is_finite() && v >= 0.0);
    }
}

#[test]
fn evaluate_matches_a_per_sample_loop() {
    let train = samples(4, 2);
    let c = TrainConfig {
        max_steps: 20,
        lr: 1e-2,
        ..cfg()
    };
    let model = train_loop(&train, &[], &c).unwrap().best.model().unwrap();
    let s = &samples(1, 8)[..3];
    let r = evaluate(s, &model, false).unwrap();

    let (mut ade, mut fde, mut arb, mut frb) = (0.0, 0.0, 0.0, 0.0);
    for sample in s {
        let pred = model.predict(&sample.obs_boxes, &sample.obs_ego).unwrap();
        let gt = &sample.future_boxes;
        for t in 0..4 {
            let (p, g) = (pred[t], gt[t]);
            let d = ((p.x - g.x).powi(2) + (p.y - g.y).powi(2)).sqrt();
            let pc = [p.x - p.w / 2.0, p.y - p.h / 2.0, p.x + p.w / 2.0, p.y + p.h / 2.0];
            let gc = [g.x - g.w / 2.0, g.y - g.h / 2.0, g.x + g.w / 2.0, g.y + g.h / 2.0];
            let rmse = ((0..4).map(|k| (pc[k] - gc[k]).powi(2)).sum::<f64>() / 4.0).sqrt();
            ade += d / 12.0;
            arb += rmse / 12.0;
            if t == 3 {
                fde += d / 3.0;
                frb += rmse / 3.0;
            }
        }
    }
    for (a, b) in [(r.ade, ade), (r.fde, fde), (r.arb, arb), (r.frb, frb)] {
        assert!((a - b).abs() <= 1e-10 * b.max(1.0), "{a} vs {b}");
    }
    assert_ne!(r, evaluate_cvcs(s, 4).unwrap());
}

#[test]
fn zscore_statistics_come_from_training_windows() {
    let train = samples(3, 4);
    let mut c = cfg();
    c.set("ego_zscore", "true").unwrap();
    let model = init_model(&train, &c).unwrap();
    let (mean, std) = ego_statistics(&train).unwrap();
    assert_eq!((model.config().ego_mean, model.config().ego_std), (mean, std));
    assert!(std > 0.0);
    assert_eq!(ego_statistics(&[]).unwrap_err().to_string(), Error::EmptyDataset("ego statistics").to_string());
}

#[test]
fn whole_model_grad_check_covers_every_parameter() {
    let mut c = cfg();
    c.set("normalize", "true").unwrap();
    let r = grad_check_model(&c.model, crate::model::GRAD_CHECK_EPS, 1).unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
    assert_eq!(r.checked, TrajMamba::new(c.model).unwrap().count_params());
}
