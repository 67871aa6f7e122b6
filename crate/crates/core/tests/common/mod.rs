#![allow(dead_code)]

use mjls_core::stability::{ms_spectral_radius, SolverConfig};
use mjls_core::{Mat, MjlsModel, Policy, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn scalar(v: f64) -> Mat {
    Mat::from_element(1, 1, v)
}

pub fn gains(v: &[f64]) -> Policy {
    Policy::new(v.iter().map(|&x| scalar(x)).collect())
}

/// Scalar model with `B = Q = R = sigma0 = 1`.
pub fn scalar_model(a: &[f64], trans: &[f64], rho: &[f64]) -> MjlsModel {
    let n = a.len();
    MjlsModel::new(
        a.iter().map(|&v| scalar(v)).collect(),
        vec![scalar(1.0); n],
        vec![scalar(1.0); n],
        vec![scalar(1.0); n],
        Mat::from_row_slice(n, n, trans),
        Vector::from_row_slice(rho),
        scalar(1.0),
    )
    .unwrap()
}

/// The two-mode scalar instance used across the examples:
/// `A = {0.8, 1.2}`, `B = 1`, `Q = R = 1`, `trans = [[0.9, 0.1], [0.2, 0.8]]`.
pub fn two_mode() -> MjlsModel {
    scalar_model(&[0.8, 1.2], &[0.9, 0.1, 0.2, 0.8], &[0.5, 0.5])
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let g = gaussian(rng, n, n);
    g.tr_mul(&g) * (1.0 / n as f64) + Mat::identity(n, n) * 0.5
}

/// A model with generic (non-identity) costs, covariance and initial law,
/// scaled so the zero policy has mean-square radius `margin`.
pub fn random_general_model(n_s: usize, d: usize, k: usize, seed: u64, margin: f64) -> MjlsModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trans = Mat::from_fn(n_s, n_s, |_, _| rng.random::<f64>() + 0.05);
    for i in 0..n_s {
        let s = trans.row(i).sum();
        for j in 0..n_s {
            trans[(i, j)] /= s;
        }
        let excess = trans.row(i).sum() - 1.0;
        trans[(i, i)] -= excess;
    }
    let mut rho = Vector::from_fn(n_s, |_, _| rng.random::<f64>() + 0.2);
    rho /= rho.sum();
    let excess = rho.sum() - 1.0;
    rho[0] -= excess;
    let mut a: Vec<Mat> = (0..n_s).map(|_| gaussian(&mut rng, d, d)).collect();
    let b = (0..n_s).map(|_| gaussian(&mut rng, d, k)).collect();
    let q = (0..n_s).map(|_| random_spd(&mut rng, d)).collect();
    let r = (0..n_s).map(|_| random_spd(&mut rng, k)).collect();
    let sigma0 = random_spd(&mut rng, d);
    let mut m = MjlsModel::new(a.clone(), b, q, r, trans, rho, sigma0).unwrap();
    let r0 = ms_spectral_radius(&m, &Policy::zeros(&m), &SolverConfig::default())
        .unwrap()
        .radius;
    let s = (margin / r0).sqrt();
    for ai in &mut a {
        *ai *= s;
    }
    m.a = a;
    m
}

/// Random gains around the stabilizing `center`, shrunk until the radius is at
/// most `max_radius`.
pub fn random_stabilizing_policy(
    m: &MjlsModel,
    center: &Policy,
    seed: u64,
    max_radius: f64,
) -> Policy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let noise: Vec<Mat> = (0..m.n_s).map(|_| gaussian(&mut rng, m.k, m.d)).collect();
    let cfg = SolverConfig::default();
    // a barely stabilizing center widens the limit halfway to one
    let r_center = ms_spectral_radius(m, center, &cfg).unwrap().radius;
    assert!(r_center < 1.0, "center is not stabilizing");
    let max_radius = max_radius.max(0.5 * (1.0 + r_center));
    let mut scale = 1.0;
    loop {
        let p = Policy::new(
            center
                .gains
                .iter()
                .zip(&noise)
                .map(|(c, n)| c + n * scale)
                .collect(),
        );
        if let Ok(r) = ms_spectral_radius(m, &p, &cfg) {
            if r.radius <= max_radius {
                return p;
            }
        }
        scale *= 0.5;
        assert!(scale > 1e-12, "could not find a stabilizing perturbation");
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
