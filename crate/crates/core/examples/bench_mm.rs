use framepaint_core::ops::{matmul, matmul_nt, matmul_tn};
use framepaint_core::rng::Rng;
use framepaint_core::tensor::Tensor;
use std::time::Instant;

fn main() {
    let mut rng = Rng::new(1);
    for &(m, k, n) in &[(192usize, 48usize, 48usize), (192, 48, 192), (64, 64, 256), (192, 192, 48), (144, 64, 64)] {
        let a = Tensor::randn(&[m, k], 1.0, &mut rng);
        let b = Tensor::randn(&[k, n], 1.0, &mut rng);
        let bt = Tensor::randn(&[n, k], 1.0, &mut rng);
        let at = Tensor::randn(&[k, m], 1.0, &mut rng);
        let reps = (200_000_000 / (2 * m * k * n)).max(1);
        let t0 = Instant::now();
        for _ in 0..reps { std::hint::black_box(matmul(&a, &b).unwrap()); }
        let el = t0.elapsed().as_secs_f64();
        let gf = (2.0 * (m * k * n) as f64 * reps as f64) / el / 1e9;
        let t0 = Instant::now();
        for _ in 0..reps { std::hint::black_box(matmul_nt(&a, &bt).unwrap()); }
        let el2 = t0.elapsed().as_secs_f64();
        let gf2 = (2.0 * (m * k * n) as f64 * reps as f64) / el2 / 1e9;
        let t0 = Instant::now();
        for _ in 0..reps { std::hint::black_box(matmul_tn(&at, &b).unwrap()); }
        let el3 = t0.elapsed().as_secs_f64();
        let gf3 = (2.0 * (m * k * n) as f64 * reps as f64) / el3 / 1e9;
        println!("{m}x{k}x{n}: nn {gf:.2} Gflop/s  nt {gf2:.2}  tn {gf3:.2}");
    }
}
