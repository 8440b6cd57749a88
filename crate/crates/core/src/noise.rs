//! Mean-zero noise models and the log-concavity diagnostics that the
//! near-optimality argument relies on.
//!
//! Every isotropic family is parameterised by its standard deviation `σ`:
//! Laplace uses scale `σ/√2` and the uniform law lives on `[−√3σ, √3σ]`, so
//! all of them have covariance `σ²·Id`.

use std::f64::consts::{E, PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::Serialize;

use crate::design::Problem;
use crate::error::{Error, Result};
use crate::linalg;
use crate::mc;
use crate::oned::Constants;
use crate::rng::{self, Stream};

/// Points in the density-floor grid over `[−γσ, γσ]`.
pub const DENSITY_GRID: usize = 1001;

const SQRT_3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    /// i.i.d. `N(0, σ²)` coordinates.
    GaussianIso { sigma: f64, m: usize },
    /// i.i.d. Laplace coordinates with variance `σ²`.
    LaplaceIid { sigma: f64, m: usize },
    /// i.i.d. uniform coordinates on `[−√3σ, √3σ]`.
    UniformCube { sigma: f64, m: usize },
    /// Scalar atoms `±σ`, each with probability 1/2.
    Rademacher { sigma: f64 },
    /// Law of `M·e` for `e` drawn from `base`.
    Correlated {
        base: Box<NoiseModel>,
        mixing: DMatrix<f64>,
    },
}

impl NoiseModel {
    pub fn correlated(base: NoiseModel, mixing: DMatrix<f64>) -> Result<Self> {
        let model = NoiseModel::Correlated {
            base: Box::new(base),
            mixing,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::GaussianIso { sigma, m }
            | NoiseModel::LaplaceIid { sigma, m }
            | NoiseModel::UniformCube { sigma, m } => {
                check_sigma(*sigma)?;
                if *m == 0 {
                    return Err(Error::invalid("noise.m", "must be positive"));
                }
                Ok(())
            }
            NoiseModel::Rademacher { sigma } => check_sigma(*sigma),
            NoiseModel::Correlated { base, mixing } => {
                base.validate()?;
                let m = base.dim();
                if mixing.nrows() != m || mixing.ncols() != m {
                    return Err(Error::dims("noise.mixing", m, mixing.nrows().max(mixing.ncols())));
                }
                linalg::checked_inverse(mixing, "noise.mixing").map(|_| ())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseModel::GaussianIso { m, .. }
            | NoiseModel::LaplaceIid { m, .. }
            | NoiseModel::UniformCube { m, .. } => *m,
            NoiseModel::Rademacher { .. } => 1,
            NoiseModel::Correlated { base, .. } => base.dim(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            NoiseModel::GaussianIso { .. } => "gaussian",
            NoiseModel::LaplaceIid { .. } => "laplace",
            NoiseModel::UniformCube { .. } => "uniform",
            NoiseModel::Rademacher { .. } => "rademacher",
            NoiseModel::Correlated { .. } => "correlated",
        }
    }

    /// Standard deviation of the isotropic base law.
    pub fn sigma(&self) -> f64 {
        match self {
            NoiseModel::GaussianIso { sigma, .. }
            | NoiseModel::LaplaceIid { sigma, .. }
            | NoiseModel::UniformCube { sigma, .. }
            | NoiseModel::Rademacher { sigma } => *sigma,
            NoiseModel::Correlated { base, .. } => base.sigma(),
        }
    }

    pub fn is_log_concave(&self) -> bool {
        match self {
            NoiseModel::Rademacher { .. } => false,
            NoiseModel::Correlated { base, .. } => base.is_log_concave(),
            _ => true,
        }
    }

    /// True when the law is a point mass at the origin.
    pub fn is_degenerate(&self) -> bool {
        self.sigma() == 0.0
    }

    /// Innermost isotropic law and the product of all mixing matrices
    /// (`None` when there is no mixing).
    pub fn base_and_mixing(&self) -> (&NoiseModel, Option<DMatrix<f64>>) {
        match self {
            NoiseModel::Correlated { base, mixing } => {
                let (inner, inner_mix) = base.base_and_mixing();
                let total = match inner_mix {
                    Some(m) => mixing * m,
                    None => mixing.clone(),
                };
                (inner, Some(total))
            }
            other => (other, None),
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        match self {
            NoiseModel::Correlated { base, mixing } => mixing * base.covariance() * mixing.transpose(),
            _ => {
                let s = self.sigma();
                DMatrix::identity(self.dim(), self.dim()) * (s * s)
            }
        }
    }

    /// Fills `out` with one draw from `rng`.
    pub fn draw(&self, rng: &mut Stream, out: &mut [f64]) {
        match self {
            NoiseModel::GaussianIso { sigma, .. } => {
                for x in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *x = sigma * z;
                }
            }
            NoiseModel::LaplaceIid { sigma, .. } => {
                let scale = sigma / SQRT_2;
                for x in out.iter_mut() {
                    let magnitude: f64 = Exp1.sample(rng);
                    let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    *x = sign * scale * magnitude;
                }
            }
            NoiseModel::UniformCube { sigma, .. } => {
                let half = SQRT_3 * sigma;
                for x in out.iter_mut() {
                    *x = if half > 0.0 {
                        rng.gen_range(-half..=half)
                    } else {
                        0.0
                    };
                }
            }
            NoiseModel::Rademacher { sigma } => {
                out[0] = if rng.gen::<bool>() { *sigma } else { -sigma };
            }
            NoiseModel::Correlated { base, mixing } => {
                let mut raw = vec![0.0; out.len()];
                base.draw(rng, &mut raw);
                for (i, x) in out.iter_mut().enumerate() {
                    *x = mixing.row(i).iter().zip(&raw).map(|(a, b)| a * b).sum();
                }
            }
        }
    }

    /// Draw number `index` of the stream identified by `seed`.
    pub fn sample_into(&self, seed: u64, index: u64, out: &mut [f64]) {
        let mut rng = rng::stream(seed, index);
        self.draw(&mut rng, out);
    }

    /// `count × m` matrix of i.i.d. draws; row `i` equals
    /// `sample_into(seed, i)`.
    pub fn sample(&self, count: usize, seed: u64) -> Result<DMatrix<f64>> {
        if count == 0 {
            return Err(Error::invalid("count", "must be at least 1"));
        }
        let m = self.dim();
        let mut out = DMatrix::zeros(count, m);
        let mut row = vec![0.0; m];
        for i in 0..count {
            self.sample_into(seed, i as u64, &mut row);
            for (j, v) in row.iter().enumerate() {
                out[(i, j)] = *v;
            }
        }
        Ok(out)
    }

    /// Closed-form density at `x` for scalar Gaussian, Laplace and uniform laws.
    pub fn density(&self, x: f64) -> Result<f64> {
        if self.dim() != 1 {
            return Err(Error::Unsupported(
                "closed-form densities are provided for scalar noise only".into(),
            ));
        }
        match self {
            NoiseModel::GaussianIso { sigma, .. } if *sigma > 0.0 => {
                let z = x / sigma;
                Ok((-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt()))
            }
            NoiseModel::LaplaceIid { sigma, .. } if *sigma > 0.0 => {
                let b = sigma / SQRT_2;
                Ok((-x.abs() / b).exp() / (2.0 * b))
            }
            NoiseModel::UniformCube { sigma, .. } if *sigma > 0.0 => {
                let half = SQRT_3 * sigma;
                Ok(if x.abs() <= half { 1.0 / (2.0 * half) } else { 0.0 })
            }
            _ => Err(Error::Unsupported(format!(
                "no closed-form density for {} noise with sigma {}",
                self.kind(),
                self.sigma()
            ))),
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("noise.sigma", "must be finite and nonnegative"));
    }
    Ok(())
}

/// Rewrites a correlated-noise problem `y = Λf + Me` as `ỹ = M⁻¹Λf + e`.
///
/// A recovery map `Δ` for the original problem corresponds to `Δ ∘ M` for the
/// converted one; for linear maps, `a` becomes `Mᵀa`.
pub fn whiten(problem: &Problem) -> Result<Problem> {
    let (base, mixing) = problem.noise().base_and_mixing();
    let Some(mixing) = mixing else {
        return Err(Error::Precondition("whitening requires correlated noise".into()));
    };
    let inverse = linalg::checked_inverse(&mixing, "noise.mixing")?;
    let lambda = inverse * problem.lambda();
    Problem::new(lambda, problem.q().clone(), problem.model_set().clone(), base.clone())
}

/// Monte Carlo check of `‖⟨u,e⟩‖_q ≤ e·(q/p)·‖⟨u,e⟩‖_p`.
#[derive(Debug, Clone, Serialize)]
pub struct BorellCheck {
    pub p: f64,
    pub q: f64,
    pub ratio: f64,
    pub std_error: f64,
    /// `e·q/p`.
    pub bound: f64,
    pub pass: bool,
    /// False when the noise is not log-concave; the ratio is still measured.
    pub applicable: bool,
    pub samples: usize,
}

pub fn borell_ratio_check(
    model: &NoiseModel,
    u: &DVector<f64>,
    p: f64,
    q: f64,
    count: usize,
    seed: u64,
) -> Result<BorellCheck> {
    if u.len() != model.dim() {
        return Err(Error::dims("u", model.dim(), u.len()));
    }
    if (u.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("u", "must have unit Euclidean norm"));
    }
    if !(p >= 1.0 && q >= p && q.is_finite()) {
        return Err(Error::invalid("p, q", "need 1 ≤ p ≤ q < ∞"));
    }
    if count < 2 {
        return Err(Error::invalid("count", "need at least two samples"));
    }
    let m = model.dim();
    let sums = mc::sum_rows(
        count,
        4,
        || vec![0.0; m],
        |e, i, out| {
            model.sample_into(seed, i as u64, e);
            let x = u.iter().zip(e.iter()).map(|(a, b)| a * b).sum::<f64>().abs();
            let xq = x.powf(q);
            let xp = x.powf(p);
            out[0] = xq;
            out[1] = xp;
            out[2] = xq * xq;
            out[3] = xp * xp;
        },
    );
    let n = count as f64;
    let (mq, mp) = (sums[0] / n, sums[1] / n);
    let ratio = if mp > 0.0 {
        mq.powf(1.0 / q) / mp.powf(1.0 / p)
    } else {
        1.0
    };
    // Delta method with independent moment errors; conservative since the
    // two moments are positively correlated.
    let se_q = mc::mean_and_se(sums[0], sums[2], count).1;
    let se_p = mc::mean_and_se(sums[1], sums[3], count).1;
    let std_error = if mq > 0.0 && mp > 0.0 {
        ratio * ((se_q / (q * mq)).powi(2) + (se_p / (p * mp)).powi(2)).sqrt()
    } else {
        0.0
    };
    let bound = Constants::new().borell_c * q / p;
    Ok(BorellCheck {
        p,
        q,
        ratio,
        std_error,
        bound,
        pass: ratio <= bound + 3.0 * std_error,
        applicable: model.is_log_concave(),
        samples: count,
    })
}

/// Density floor and two-sided bound on the density at zero.
#[derive(Debug, Clone, Serialize)]
pub struct DensityDiagnostics {
    pub pi0: f64,
    /// Minimum of the density over the grid on `[−γσ, γσ]`.
    pub min_density: f64,
    /// `δ/σ`.
    pub floor: f64,
    pub floor_ok: bool,
    /// `[1/(2√3eσ), 3/σ]`.
    pub hensley_bounds: (f64, f64),
    pub hensley_ok: bool,
}

pub fn density_floor_check(model: &NoiseModel) -> Result<DensityDiagnostics> {
    match model {
        NoiseModel::GaussianIso { m: 1, sigma }
        | NoiseModel::LaplaceIid { m: 1, sigma }
        | NoiseModel::UniformCube { m: 1, sigma }
            if *sigma > 0.0 => {}
        _ => {
            return Err(Error::Unsupported(format!(
                "density diagnostics need scalar gaussian, laplace or uniform noise with positive sigma, got {}",
                model.kind()
            )))
        }
    }
    let sigma = model.sigma();
    let constants = Constants::new();
    let half_width = constants.gamma * sigma;
    let mut min_density = f64::INFINITY;
    for k in 0..DENSITY_GRID {
        let x = -half_width + 2.0 * half_width * k as f64 / (DENSITY_GRID - 1) as f64;
        min_density = min_density.min(model.density(x)?);
    }
    let pi0 = model.density(0.0)?;
    let floor = constants.delta / sigma;
    let lower = 1.0 / (2.0 * SQRT_3 * E * sigma);
    let upper = 3.0 / sigma;
    Ok(DensityDiagnostics {
        pi0,
        min_density,
        floor,
        floor_ok: min_density >= floor,
        hensley_bounds: (lower, upper),
        hensley_ok: lower <= pi0 && pi0 <= upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ModelSet;

    fn gaussian(sigma: f64, m: usize) -> NoiseModel {
        NoiseModel::GaussianIso { sigma, m }
    }

    #[test]
    fn sampling_is_deterministic() {
        let model = gaussian(1.0, 2);
        assert_eq!(model.sample(4, 7).unwrap(), model.sample(4, 7).unwrap());
        assert_ne!(model.sample(4, 7).unwrap(), model.sample(4, 8).unwrap());
    }

    #[test]
    fn rademacher_mean_within_clt_bracket() {
        let model = NoiseModel::Rademacher { sigma: 2.0 };
        let n = 100_000;
        let draws = model.sample(n, 1).unwrap();
        let mean = draws.sum() / n as f64;
        assert!(mean.abs() <= 3.0 * 2.0 / (n as f64).sqrt());
        assert!(draws.iter().all(|x| x.abs() == 2.0));
    }

    #[test]
    fn uniform_support() {
        let model = NoiseModel::UniformCube { sigma: 1.0, m: 1 };
        let draws = model.sample(100_000, 1).unwrap();
        assert!(draws.iter().all(|x| x.abs() <= SQRT_3));
    }

    #[test]
    fn zero_count_rejected() {
        assert!(gaussian(1.0, 1).sample(0, 0).is_err());
    }

    #[test]
    fn correlated_applies_mixing_to_base_stream() {
        let mixing = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 3.0]);
        let base = NoiseModel::LaplaceIid { sigma: 1.0, m: 2 };
        let model = NoiseModel::correlated(base.clone(), mixing.clone()).unwrap();
        let raw = base.sample(5, 11).unwrap();
        let mixed = model.sample(5, 11).unwrap();
        let expected = raw * mixing.transpose();
        assert!((mixed - expected).amax() < 1e-14);
        assert!(!NoiseModel::Rademacher { sigma: 1.0 }.is_log_concave());
        assert!(model.is_log_concave());
    }

    #[test]
    fn singular_mixing_rejected() {
        let mixing = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(
            NoiseModel::correlated(gaussian(1.0, 2), mixing),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn covariance_of_correlated() {
        let mixing = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 2.0]);
        let model = NoiseModel::correlated(gaussian(0.5, 2), mixing.clone()).unwrap();
        let expected = &mixing * mixing.transpose() * 0.25;
        assert!((model.covariance() - expected).amax() < 1e-15);
    }

    #[test]
    fn whiten_identity_and_scalar_mixing() {
        let lambda = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let q = DVector::from_vec(vec![1.0, 0.0]);
        let set = ModelSet::cube(2, 1.0).unwrap();
        let base = gaussian(0.3, 2);

        let same = Problem::new(
            lambda.clone(),
            q.clone(),
            set.clone(),
            NoiseModel::correlated(base.clone(), DMatrix::identity(2, 2)).unwrap(),
        )
        .unwrap();
        let w = whiten(&same).unwrap();
        assert_eq!(w.lambda(), &lambda);
        assert_eq!(w.noise(), &base);

        let doubled = Problem::new(
            lambda.clone(),
            q,
            set,
            NoiseModel::correlated(base.clone(), DMatrix::identity(2, 2) * 2.0).unwrap(),
        )
        .unwrap();
        let w = whiten(&doubled).unwrap();
        assert!((w.lambda() - &lambda / 2.0).amax() < 1e-15);
        assert_eq!(w.noise().covariance(), DMatrix::identity(2, 2) * 0.09);
    }

    #[test]
    fn whiten_requires_correlated_noise() {
        let p = Problem::new(
            DMatrix::identity(1, 1),
            DVector::from_vec(vec![1.0]),
            ModelSet::cube(1, 1.0).unwrap(),
            gaussian(1.0, 1),
        )
        .unwrap();
        assert!(matches!(whiten(&p), Err(Error::Precondition(_))));
    }

    #[test]
    fn density_examples() {
        let g = density_floor_check(&gaussian(1.0, 1)).unwrap();
        assert!((g.pi0 - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-15);
        assert!(g.floor_ok && g.hensley_ok);
        assert!((g.hensley_bounds.0 - 0.106_197_647_194_830_67).abs() < 1e-15);
        assert!((g.hensley_bounds.0 - 0.106_199).abs() < 2e-6);

        let u = density_floor_check(&NoiseModel::UniformCube { sigma: 1.0, m: 1 }).unwrap();
        assert!((u.pi0 - 1.0 / (2.0 * SQRT_3)).abs() < 1e-15);
        assert!(u.floor_ok && u.pi0 >= u.hensley_bounds.0);

        let l = density_floor_check(&NoiseModel::LaplaceIid { sigma: 1.0, m: 1 }).unwrap();
        assert!((l.pi0 - 1.0 / SQRT_2).abs() < 1e-15);
        assert!(l.hensley_ok);
    }

    #[test]
    fn density_check_rejects_unsupported() {
        assert!(matches!(
            density_floor_check(&NoiseModel::Rademacher { sigma: 1.0 }),
            Err(Error::Unsupported(_))
        ));
        assert!(density_floor_check(&gaussian(1.0, 2)).is_err());
    }

    #[test]
    fn borell_equal_exponents_give_unit_ratio() {
        let u = DVector::from_vec(vec![1.0]);
        let c = borell_ratio_check(&gaussian(1.0, 1), &u, 2.0, 2.0, 1000, 3).unwrap();
        assert!((c.ratio - 1.0).abs() < 1e-12);
        assert!(c.pass);
    }

    #[test]
    fn borell_flags_rademacher_but_still_measures() {
        let u = DVector::from_vec(vec![1.0]);
        let c = borell_ratio_check(&NoiseModel::Rademacher { sigma: 1.0 }, &u, 1.0, 2.0, 1000, 3)
            .unwrap();
        assert!(!c.applicable);
        assert!((c.ratio - 1.0).abs() < 1e-12);
    }
}
