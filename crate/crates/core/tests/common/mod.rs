//! Instance generators and brute-force oracles shared by the integration
//! tests. Nothing here calls into the solvers under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use recovery_core::design::Problem;
use recovery_core::geometry::ModelSet;
use recovery_core::noise::NoiseModel;

pub type TestRng = Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> TestRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut TestRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(rng: &mut TestRng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Diagonally dominated random matrix, comfortably invertible.
pub fn well_conditioned(rng: &mut TestRng, n: usize) -> DMatrix<f64> {
    let mut a = gaussian_matrix(rng, n, n) * 0.3;
    for i in 0..n {
        a[(i, i)] += rng.gen_range(0.5..2.0);
    }
    a
}

pub fn orthonormal_columns(rng: &mut TestRng, n: usize, k: usize) -> DMatrix<f64> {
    gaussian_matrix(rng, n, k).qr().q()
}

pub fn ellipsoid_problem(rng: &mut TestRng, n: usize, m: usize, sigma: f64) -> Problem {
    let set = ModelSet::ellipsoid(well_conditioned(rng, n)).unwrap();
    Problem::new(
        gaussian_matrix(rng, m, n),
        gaussian_vector(rng, n),
        set,
        NoiseModel::GaussianIso { sigma, m },
    )
    .unwrap()
}

/// `max over the 2ⁿ vertices of [−τ, τ]ⁿ of |⟨c, v⟩|`.
pub fn box_support_by_vertices(c: &DVector<f64>, tau: f64) -> f64 {
    let n = c.len();
    (0..1u32 << n)
        .map(|mask| {
            (0..n)
                .map(|i| if mask >> i & 1 == 1 { tau * c[i] } else { -tau * c[i] })
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max)
}

/// Euclidean projection onto `{x : xᵀGx ≤ 1}` for symmetric PSD `G`, by
/// bisection on the multiplier of `x = (I + λG)⁻¹y`.
pub struct EllipsoidProjector {
    eig: SymmetricEigen<f64, nalgebra::Dyn>,
}

impl EllipsoidProjector {
    pub fn new(g: &DMatrix<f64>) -> Self {
        EllipsoidProjector {
            eig: SymmetricEigen::new(g.clone()),
        }
    }

    fn form(&self, z: &DVector<f64>, lambda: f64) -> f64 {
        z.iter()
            .zip(self.eig.eigenvalues.iter())
            .map(|(zi, &d)| {
                let d = d.max(0.0);
                d * (zi / (1.0 + lambda * d)).powi(2)
            })
            .sum()
    }

    pub fn project(&self, y: &DVector<f64>) -> DVector<f64> {
        let q = &self.eig.eigenvectors;
        let z = q.tr_mul(y);
        if self.form(&z, 0.0) <= 1.0 {
            return y.clone();
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        while self.form(&z, hi) > 1.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.form(&z, mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let scaled = DVector::from_fn(z.len(), |i, _| {
            z[i] / (1.0 + hi * self.eig.eigenvalues[i].max(0.0))
        });
        q * scaled
    }
}

/// Projected gradient ascent of `⟨c, f⟩` over `{fᵀGf ≤ 1}`.
pub fn ellipsoid_support_by_ascent(g: &DMatrix<f64>, c: &DVector<f64>) -> f64 {
    let proj = EllipsoidProjector::new(g);
    let step = 1.0 / c.norm().max(1e-300);
    let mut f = DVector::zeros(c.len());
    for _ in 0..20_000 {
        let next = proj.project(&(&f + c * step));
        let moved = (&next - &f).norm();
        f = next;
        if moved < 1e-15 {
            break;
        }
    }
    c.dot(&f).abs()
}

/// Dykstra's alternating projections onto the intersection of two convex
/// sets.
pub fn dykstra(
    p1: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    p2: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    y: &DVector<f64>,
    iters: usize,
) -> DVector<f64> {
    let n = y.len();
    let mut x = y.clone();
    let mut r1 = DVector::zeros(n);
    let mut r2 = DVector::zeros(n);
    for _ in 0..iters {
        let a = p1(&(&x + &r1));
        r1 = &x + &r1 - &a;
        let b = p2(&(&a + &r2));
        r2 = &a + &r2 - &b;
        let moved = (&b - &x).norm();
        x = b;
        if moved < 1e-14 * (1.0 + x.norm()) {
            break;
        }
    }
    x
}

/// Projected ascent of `⟨q, h⟩` over the intersection of two convex sets;
/// `gauge` must be the gauge of the intersection and is used to repair the
/// residual infeasibility of the final point.
pub fn ascent_over_intersection(
    q: &DVector<f64>,
    p1: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    p2: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    gauge: &dyn Fn(&DVector<f64>) -> f64,
) -> f64 {
    let step = 1.0 / q.norm();
    let mut h = DVector::zeros(q.len());
    for _ in 0..3000 {
        let next = dykstra(p1, p2, &(&h + q * step), 2000);
        let moved = (&next - &h).norm();
        h = next;
        if moved < 1e-13 {
            break;
        }
    }
    q.dot(&h).abs() / gauge(&h).max(1.0)
}

/// Null error over `{hᵀG₁h ≤ 1} ∩ {hᵀG₂h ≤ 1}` by projected ascent.
pub fn null_error_by_ascent(g1: &DMatrix<f64>, g2: &DMatrix<f64>, q: &DVector<f64>) -> f64 {
    let e1 = EllipsoidProjector::new(g1);
    let e2 = EllipsoidProjector::new(g2);
    let gauge = |h: &DVector<f64>| h.dot(&(g1 * h)).max(h.dot(&(g2 * h))).max(0.0).sqrt();
    ascent_over_intersection(q, &|y| e1.project(y), &|y| e2.project(y), &gauge)
}

/// Null error over `[−τ, τ]ⁿ ∩ {hᵀGh ≤ 1}` by projected ascent.
pub fn box_null_error_by_ascent(tau: f64, g: &DMatrix<f64>, q: &DVector<f64>) -> f64 {
    let e = EllipsoidProjector::new(g);
    let clip = |y: &DVector<f64>| y.map(|x| x.clamp(-tau, tau));
    let gauge = |h: &DVector<f64>| (h.amax() / tau).max(h.dot(&(g * h)).max(0.0).sqrt());
    ascent_over_intersection(q, &clip, &|y| e.project(y), &gauge)
}

/// Best linear squared risk `min_a √((b − ac)²τ² + a²σ²)` by two nested
/// 10⁴-point grids over `a`.
pub fn oned_grid_search(b: f64, c: f64, tau: f64, sigma: f64) -> (f64, f64) {
    let risk = |a: f64| ((b - a * c).powi(2) * tau * tau + a * a * sigma * sigma).sqrt();
    let (mut lo, mut hi) = {
        let end = b / c;
        (end.min(0.0), end.max(0.0))
    };
    let mut best = (lo, risk(lo));
    for _ in 0..2 {
        let points = 10_000;
        let h = (hi - lo) / (points - 1) as f64;
        for k in 0..points {
            let a = lo + h * k as f64;
            let r = risk(a);
            if r < best.1 {
                best = (a, r);
            }
        }
        lo = best.0 - h;
        hi = best.0 + h;
    }
    best
}
