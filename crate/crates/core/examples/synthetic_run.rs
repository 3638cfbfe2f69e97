//! Trains MiniNet on a synthetic corpus and reports held-out AP.
//!
//! `cargo run --release -p densescan --example synthetic_run [iterations] [seed]`

use std::time::Instant;

use densescan::detector::{DetectConfig, DetectionRecord, Detector};
use densescan::eval::{evaluate, GroundTruth};
use densescan::nnet::mininet;
use densescan::sampler::PoolConfig;
use densescan::synth::{generate_corpus, SynthConfig};
use densescan::trainer::{train_on_corpus, TrainConfig};

fn main() -> densescan::Result<()> {
    let iterations = std::env::args().nth(1).map_or(2000, |v| v.parse().expect("iterations"));
    let seed: u64 = std::env::args().nth(2).map_or(0, |v| v.parse().expect("seed"));
    let start = Instant::now();
    let cfg = SynthConfig::default();
    let train = generate_corpus(&cfg, 200, seed + 1);
    let test = generate_corpus(&cfg, 50, seed + 2);
    let corpus: Vec<_> = train.iter().map(|s| (s.id.clone(), s.image.clone(), s.faces.clone())).collect();
    let tc = TrainConfig { iterations, seed: seed + 3, ..Default::default() };
    let (net, outcome) =
        train_on_corpus(&mininet::mininet(seed + 7), &corpus, &PoolConfig::default(), &tc, seed + 4, |i, r| {
            if i % 250 == 0 {
                eprintln!("iter {i} risk {r:.4}");
            }
        })?;
    eprintln!("trained in {:.1?}, final risk {:.4}", start.elapsed(), outcome.risk.last().unwrap());
    let det = Detector::new(&net, DetectConfig::default())?;
    let mut recs = Vec::new();
    for s in &test {
        for d in det.detect(&s.image)? {
            recs.push(DetectionRecord::new(&s.id, &d));
        }
    }
    let gts: Vec<GroundTruth> =
        test.iter().map(|s| GroundTruth { image: s.id.clone(), boxes: s.faces.clone() }).collect();
    let report = evaluate(&recs, &gts, 0.5)?;
    print!("{}", report.summary());
    eprintln!("total {:.1?}", start.elapsed());
    Ok(())
}
