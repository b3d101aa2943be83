use mrco::config::{ExperimentConfig, Method};
use mrco::harness::{prepare_data, run_seed, split_meta, PreparedData};

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.data.synthetic.n_train = 120;
    cfg.data.synthetic.n_dev = 80;
    cfg.augment.per_example = 3;
    cfg.train.epochs = 2;
    cfg
}

fn data(cfg: &ExperimentConfig) -> PreparedData {
    prepare_data(cfg, false).unwrap()
}

#[test]
fn zero_epochs_reports_the_untrained_model() {
    let mut cfg = small();
    let d = data(&cfg);
    let trained = run_seed(&cfg, &d, Method::Plain, 4, None).unwrap();
    cfg.train.epochs = 0;
    let untrained = run_seed(&cfg, &d, Method::Plain, 4, None).unwrap();
    assert_eq!(untrained.curve.len(), 1);
    assert_eq!(trained.curve.len(), 3);
    assert_eq!(untrained.final_eval(), trained.curve[0]);
}

#[test]
fn no_contrastive_ablation_is_mrco_with_zero_lambda() {
    let mut cfg = small();
    let d = data(&cfg);
    let ablation = run_seed(&cfg, &d, Method::MrcoNoContrastive, 2, None).unwrap();
    cfg.train.lambda = 0.0;
    let zero = run_seed(&cfg, &d, Method::Mrco, 2, None).unwrap();
    assert_eq!(ablation.records(), zero.records());
    assert_eq!(ablation.weights.unwrap().weights, zero.weights.unwrap().weights);
}

#[test]
fn seeds_are_reproducible_and_distinct() {
    let cfg = small();
    let d = data(&cfg);
    let a = run_seed(&cfg, &d, Method::Mrco, 1, None).unwrap();
    let b = run_seed(&cfg, &d, Method::Mrco, 1, None).unwrap();
    let c = run_seed(&cfg, &d, Method::Mrco, 2, None).unwrap();
    assert_eq!(a.records(), b.records());
    assert_ne!(a.weights.unwrap().weights, c.weights.unwrap().weights);
}

#[test]
fn half_flipped_augmentations_get_lower_weight_within_two_hundred_iterations() {
    let mut cfg = ExperimentConfig::default();
    cfg.augment.flip_rate = 0.5;
    cfg.train.lambda = 0.0;
    let d = data(&cfg);
    let (task, _) = split_meta(&d.train, cfg.train.meta_fraction, 0).unwrap();
    let per_epoch = task.len().div_ceil(cfg.train.batch_size);
    cfg.train.epochs = 200usize.div_ceil(per_epoch);
    let (mut clean, mut flipped) = (0.0, 0.0);
    for &seed in &cfg.seeds {
        let run = run_seed(&cfg, &d, Method::MrcoNoContrastive, seed, None).unwrap();
        let w = run.weights.unwrap();
        clean += w.clean_mean().unwrap();
        flipped += w.flipped_mean().unwrap();
    }
    let n = cfg.seeds.len() as f64;
    assert!(flipped / n < clean / n, "flipped {} clean {}", flipped / n, clean / n);
}
