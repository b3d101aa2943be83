//! Trains the plain baseline for one seed, saves the main model, reloads the
//! checkpoint and vocabulary from disk and re-evaluates on the dev set.
//!
//! cargo run --release --example checkpoint_eval

use mrco::config::{ExperimentConfig, Method};
use mrco::encoder::{EncoderParams, Vocabulary};
use mrco::harness::{evaluate, load_checkpoint, prepare_data, run_seed};

fn main() -> mrco::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.train.epochs = 3;
    for arg in std::env::args().skip(1) {
        cfg.apply_override(&arg)?;
    }
    let data = prepare_data(&cfg, false)?;
    let dir = std::env::temp_dir().join("mrco-checkpoint");
    std::fs::create_dir_all(&dir)?;
    data.vocab.save(&dir.join("vocab.txt"))?;
    let run = run_seed(&cfg, &data, Method::Plain, 0, Some(&dir))?;
    println!("after training: {:?}", run.final_eval());

    let vocab = Vocabulary::load(&dir.join("vocab.txt"))?;
    let params = load_checkpoint(&dir.join("model.ckpt"))?;
    let config = cfg.encoder_config(vocab.len(), data.dev.num_classes());
    let reloaded = evaluate(&EncoderParams { config, params }, &vocab, &data.dev)?;
    println!("reloaded:       {reloaded:?}");
    assert_eq!(reloaded, run.final_eval());
    Ok(())
}
