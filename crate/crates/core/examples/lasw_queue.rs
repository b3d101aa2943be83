//! Feeds the same stream of weighted negatives to a lifetime-aware
//! smallest-weight queue and to a FIFO queue and dumps both after each
//! update. The LASW queue holds on to light entries until they expire; the
//! FIFO queue keeps whatever arrived last.
//!
//! cargo run --example lasw_queue

use mrco::contrastive::{new_queues, queues_csv, update_queues, QueuePolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> mrco::Result<()> {
    let (capacity, lifetime, classes) = (4, 3, 2);
    let mut lasw = new_queues(classes, capacity);
    let mut fifo = new_queues(classes, capacity);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for step in 1..=5 {
        let n = 6;
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let weights: Vec<f64> = (0..n).map(|_| (rng.gen_range(1..100) as f64) / 100.0).collect();
        let reprs: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        update_queues(QueuePolicy::Lasw, &mut lasw, &reprs, &labels, &weights, lifetime)?;
        update_queues(QueuePolicy::Fifo, &mut fifo, &reprs, &labels, &weights, lifetime)?;
        let batch: Vec<String> = labels.iter().zip(&weights).map(|(y, w)| format!("{y}:{w:.2}")).collect();
        println!("update {step}, batch (class:weight) {}", batch.join(" "));
        println!("-- lasw\n{}-- fifo\n{}", queues_csv(&lasw), queues_csv(&fifo));
    }
    Ok(())
}
