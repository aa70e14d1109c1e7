//! Cosine codebook life cycle: k-means initialization on clustered points,
//! nearest-entry lookup, and EMA updates that track drifting clusters.
//!
//! `cargo run --release --example codebook`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqsep::vq::{kmeans_init, usage_stats, Assignments, CODE_DIM, KMEANS_ITERS};

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn main() -> vqsep::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let centers: Vec<Vec<f64>> = (0..4)
        .map(|_| unit((0..CODE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    let draw = |rng: &mut ChaCha8Rng, c: usize| {
        unit(centers[c].iter().map(|v| v + rng.random_range(-0.1..0.1)).collect())
    };

    let batch: Vec<f64> = (0..64).flat_map(|i| draw(&mut rng, i % 4)).collect();
    let mut codebook = kmeans_init(&batch, CODE_DIM, 4, KMEANS_ITERS, &mut rng)?;
    let indices: Vec<usize> = (0..4).map(|c| codebook.nearest(&centers[c])).collect();
    println!("cluster centers map to codes {indices:?}");

    for step in 0..200 {
        let mut acc = Assignments::zeros(codebook.size(), codebook.dim());
        let mut picks = Vec::new();
        for i in 0..32 {
            let z = draw(&mut rng, i % 4);
            let q = codebook.quantize(&z);
            acc.add(q.code_index, &z);
            picks.push(q.code_index);
        }
        codebook.ema_update(&acc);
        if step % 50 == 0 {
            let usage = usage_stats(codebook.size(), &picks)?;
            println!(
                "step {step}: perplexity {:.2}, max norm deviation {:.1e}",
                usage.perplexity,
                codebook.max_norm_deviation()
            );
        }
    }
    for (c, center) in centers.iter().enumerate() {
        let q = codebook.quantize(center);
        println!("center {c}: code {} commitment {:.4}", q.code_index, q.commitment);
    }
    Ok(())
}
