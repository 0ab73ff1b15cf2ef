// Scratch micro-benchmark for the matmul kernels.

use std::time::Instant;

use lenprobe::math::{mm_ab, mm_abt, mm_atb_add};
use lenprobe::rng::Rng;

fn main() {
    let mut rng = Rng::new(1);
    let cases = [(38usize, 128usize, 128usize), (38, 128, 512), (38, 512, 128), (38, 128, 264)];
    for (m, k, n) in cases {
        let a: Vec<f32> = (0..m * k).map(|_| rng.normal_f32(0.0, 1.0)).collect();
        let b: Vec<f32> = (0..k * n).map(|_| rng.normal_f32(0.0, 1.0)).collect();
        let mut c = vec![0.0f32; m * n];
        let iters = 2000;
        let t = Instant::now();
        for _ in 0..iters {
            mm_ab(&mut c, &a, &b, m, k, n);
        }
        let el = t.elapsed().as_secs_f64();
        let gf = (2.0 * m as f64 * k as f64 * n as f64 * iters as f64) / el / 1e9;
        println!("mm_ab    {m}x{k}x{n}: {gf:.1} GF/s");

        let bt: Vec<f32> = (0..n * k).map(|_| rng.normal_f32(0.0, 1.0)).collect();
        let t = Instant::now();
        for _ in 0..iters {
            mm_abt(&mut c, &a, &bt, m, k, n);
        }
        let el = t.elapsed().as_secs_f64();
        let gf = (2.0 * m as f64 * k as f64 * n as f64 * iters as f64) / el / 1e9;
        println!("mm_abt   {m}x{k}x{n}: {gf:.1} GF/s");

        let a2: Vec<f32> = (0..m * k).map(|_| rng.normal_f32(0.0, 1.0)).collect();
        let b2: Vec<f32> = (0..m * n).map(|_| rng.normal_f32(0.0, 1.0)).collect();
        let mut c2 = vec![0.0f32; k * n];
        let t = Instant::now();
        for _ in 0..iters {
            mm_atb_add(&mut c2, &a2, &b2, m, k, n);
        }
        let el = t.elapsed().as_secs_f64();
        let gf = (2.0 * m as f64 * k as f64 * n as f64 * iters as f64) / el / 1e9;
        println!("mm_atb_add {m}x{k}x{n}: {gf:.1} GF/s");
    }
}
