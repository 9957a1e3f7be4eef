//! Times one forward and backward pass of the default encoder and
//! projection head on a batch of random images.
//!
//! `cargo run --release -p sslse-core --example encoder_throughput [batch]`

use std::time::Instant;

use sslse_autodiff::{Tape, Tensor};
use sslse_core::model::{encoder_forward, init_params, project, EncoderConfig};

fn main() {
    let batch: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(64);
    let cfg = EncoderConfig::default();
    let params = init_params::<f32>(&cfg, 0).expect("default config is valid");
    let data: Vec<f32> = (0..batch * 3 * 224 * 224).map(|i| (i % 251) as f32 / 251.0).collect();
    let images = Tensor::new(vec![batch, 3, 224, 224], data).expect("sized to shape");

    for round in 0..3 {
        let start = Instant::now();
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, true);
        let x = tape.constant(images.clone());
        let h = encoder_forward(&mut tape, &p, &cfg, x).expect("forward");
        let z = project(&mut tape, &p, h).expect("projection");
        let forward = start.elapsed();
        let loss = tape.sum(z);
        tape.backward(loss).expect("backward");
        let total = start.elapsed();
        println!(
            "round {round}: batch {batch} forward {:.0} ms, forward+backward {:.0} ms ({:.1} ms/image)",
            forward.as_secs_f64() * 1e3,
            total.as_secs_f64() * 1e3,
            total.as_secs_f64() * 1e3 / batch as f64
        );
    }
}
