//! Test-side oracles shared by the integration targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use servo_core::bench::BenchConfig;
use servo_core::control::FeatureObservation;
use servo_core::control::interaction_matrix;
use servo_core::descriptors::{Cell, DescriptorGrid};
use servo_core::geometry::{integrate_twist, so3_exp, Pose, Twist, Vec3};

pub fn workspace_file(rel: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// The calibrated desk configuration shipped in `configs/desk.toml`.
pub fn desk_config() -> BenchConfig {
    BenchConfig::load(&workspace_file("configs/desk.toml")).expect("configs/desk.toml")
}

fn normalized(p: &Pose, world: &Vec3) -> (f64, f64, f64) {
    let c = p.inverse_transform_point(world);
    (c.x / c.z, c.y / c.z, c.z)
}

/// Worst relative error between `L·ξ` and a central finite difference of the
/// projected point under the camera motion `ξ`, over `n` random triples.
pub fn interaction_fd_worst(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let h = 1e-6;
    let mut done = 0;
    while done < n {
        let w = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        let t = Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(0.3..1.2));
        // Camera roughly looking down at the z = 0 plane.
        let down = Pose::new(so3_exp(&Vec3::new(std::f64::consts::PI, 0.0, 0.0)), Vec3::zeros());
        let pose = Pose::new(down.rotation * so3_exp(&w), t);
        let world = Vec3::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(-0.1..0.1));
        let (x, y, z) = normalized(&pose, &world);
        if !(z > 0.1) {
            continue;
        }
        let xi = Twist::new(
            Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
        );
        let obs = FeatureObservation {
            x,
            y,
            depth: z,
            desired_x: 0.0,
            desired_y: 0.0,
        };
        let l = interaction_matrix(&[obs]).unwrap();
        let predicted = &l * xi.to_vector();
        let (xp, yp, _) = normalized(&integrate_twist(&pose, &xi, h), &world);
        let (xm, ym, _) = normalized(&integrate_twist(&pose, &xi, -h), &world);
        let fd = [(xp - xm) / (2.0 * h), (yp - ym) / (2.0 * h)];
        let diff = ((predicted[0] - fd[0]).powi(2) + (predicted[1] - fd[1]).powi(2)).sqrt();
        let scale = (predicted[0].powi(2) + predicted[1].powi(2)).sqrt();
        if scale < 1e-3 {
            continue;
        }
        worst = worst.max(diff / scale);
        done += 1;
    }
    worst
}

/// Plain double-loop cosine argmax; first index wins ties.
pub fn brute_nearest(query: &[f32], grid: &DescriptorGrid) -> Option<(usize, f64)> {
    let qn: f64 = query.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
    let mut best: Option<(usize, f64)> = None;
    for i in 0..grid.len() {
        if !grid.eligible_mask()[i] {
            continue;
        }
        let d = grid.descriptor_at(i);
        let mut dot = 0.0;
        let mut dn = 0.0;
        for (a, b) in query.iter().zip(d) {
            dot += *a as f64 * *b as f64;
            dn += (*b as f64).powi(2);
        }
        let s = dot / (qn * dn.sqrt());
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best
}

/// Brute-force cyclical distance for every desired cell.
pub fn brute_cyclical(desired: &DescriptorGrid, current: &DescriptorGrid) -> Vec<Option<(Cell, f64)>> {
    (0..desired.len())
        .map(|i| {
            if !desired.eligible_mask()[i] {
                return None;
            }
            let (v, _) = brute_nearest(desired.descriptor_at(i), current)?;
            let (back, _) = brute_nearest(current.descriptor_at(v), desired)?;
            let (u, up) = (desired.cell(i), desired.cell(back));
            let d = -(((u.row as f64 - up.row as f64).powi(2) + (u.col as f64 - up.col as f64).powi(2)).sqrt());
            Some((current.cell(v), d))
        })
        .collect()
}

pub fn random_grid(rows: usize, cols: usize, dim: usize, rng: &mut ChaCha8Rng) -> DescriptorGrid {
    let data = (0..rows * cols * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    DescriptorGrid::from_cells(rows, cols, dim, data)
}

/// `y_n = (1−α)^n x_0 + Σ_{k=1..n} α (1−α)^{n−k} x_k`, the filter seeded with `x_0`.
pub fn ema_closed_form(inputs: &[f64], alpha: f64) -> f64 {
    let n = inputs.len() - 1;
    let mut y = (1.0 - alpha).powi(n as i32) * inputs[0];
    for (k, x) in inputs.iter().enumerate().skip(1) {
        y += alpha * (1.0 - alpha).powi((n - k) as i32) * x;
    }
    y
}

/// Two-sided one-sample Kolmogorov–Smirnov test against U[lo, hi].
/// Returns `(D, p)` with the asymptotic p-value.
pub fn ks_uniform(samples: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in s.iter().enumerate() {
        let f = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    (d, p.clamp(0.0, 1.0))
}
