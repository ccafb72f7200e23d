//! Compares every analytic loss gradient with central finite differences on
//! a few random inputs.
//!
//! cargo run --example gradient_check

use concept_cil::tensor::{
    cosine_alignment_loss_grad, elastic_net_penalty_grad, mahalanobis_loss_grad,
    softmax_ce_loss_grad, Matrix, ZeroColumn,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn max_rel_error(analytic: &Matrix, f: impl Fn(&Matrix) -> f64, at: &Matrix) -> f64 {
    let h = 1e-5;
    let mut probe = at.clone();
    let mut worst: f64 = 0.0;
    for r in 0..at.rows() {
        for c in 0..at.cols() {
            let v = at.get(r, c);
            probe.set(r, c, v + h);
            let up = f(&probe);
            probe.set(r, c, v - h);
            let down = f(&probe);
            probe.set(r, c, v);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(r, c);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
        }
    }
    worst
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1993);
    let (n, c) = (6, 4);

    let logits = random(&mut rng, n, c);
    let targets = [0, 1, 2, 3, 0, 1];
    let (_, g) = softmax_ce_loss_grad(&logits, &targets).unwrap();
    let e = max_rel_error(&g, |x| softmax_ce_loss_grad(x, &targets).unwrap().0, &logits);
    println!("cross-entropy        max relative error {e:.2e}");

    let scores = random(&mut rng, n, c);
    let reference = random(&mut rng, n, c);
    let (_, g) = cosine_alignment_loss_grad(&scores, &reference, ZeroColumn::Reject).unwrap();
    let e = max_rel_error(
        &g,
        |x| cosine_alignment_loss_grad(x, &reference, ZeroColumn::Reject).unwrap().0,
        &scores,
    );
    println!("cubed-cosine align   max relative error {e:.2e}");

    let w = random(&mut rng, n, c).map(|v| if v.abs() < 0.05 { 0.5 } else { v });
    let (_, g) = elastic_net_penalty_grad(&w, 0.99, true).unwrap();
    let e = max_rel_error(&g, |x| elastic_net_penalty_grad(x, 0.99, true).unwrap().0, &w);
    println!("elastic net          max relative error {e:.2e}");

    let q = random(&mut rng, 3, c);
    let mu = random(&mut rng, 1, c).into_vec();
    let a = random(&mut rng, c, c);
    let mut sigma_inv = a.matmul_t(&a).unwrap();
    sigma_inv.add_scaled(&Matrix::identity(c), 0.5).unwrap();
    let (_, g) = mahalanobis_loss_grad(&q, &mu, &sigma_inv).unwrap();
    let e = max_rel_error(&g, |x| mahalanobis_loss_grad(x, &mu, &sigma_inv).unwrap().0, &q);
    println!("mahalanobis          max relative error {e:.2e}");
}
