//! Global recovery errors of a recovery map `Δ`.
//!
//! For `p ≥ 1`, the statistical-estimation risk is
//! `ge_se_p(Δ) = sup_{f∈K} (E|⟨q,f⟩ − Δ(Λf+e)|^p)^{1/p}` and the
//! optimal-recovery risk is `ge_or_p(Δ) = (E sup_{f∈K} |⟨q,f⟩ − Δ(Λf+e)|^p)^{1/p}`.
//!
//! Linear maps are handled in any dimension through the residual functional
//! `c = q − Λᵀa` and its support value `h`: the error is `⟨c,f⟩ − ⟨a,e⟩`, so
//! the inner supremum of the `or` risk is exactly `h + |⟨a,e⟩|`. General
//! maps are supported in the scalar setting only.
//!
//! All Monte Carlo estimates draw sample `i` from the stream `(seed, i)`, so
//! calls sharing a seed use common random numbers.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::design::{LinearEstimator, Problem};
use crate::error::{Error, Result};
use crate::geometry::ExtendedReal;
use crate::mc;
use crate::noise::NoiseModel;
use crate::oned::SimplestSetting;

/// Points of the `t`-grid over `[−1, 1]` for `se` risks of linear maps.
pub const LINEAR_SE_GRID: usize = 65;
/// Points of the `f`-grid over `[−τ, τ]` for scalar `se` risks.
pub const SCALAR_SE_GRID: usize = 129;
/// Points of the `f`-grid used to approximate the supremum for opaque maps.
pub const OPAQUE_SUP_GRID: usize = 4097;

/// Default Monte Carlo sample count for a given `p`.
pub fn default_samples(p: f64) -> usize {
    if p <= 2.0 {
        100_000
    } else {
        400_000
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskKind {
    Se,
    Or,
}

impl fmt::Display for RiskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RiskKind::Se => "se",
            RiskKind::Or => "or",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub kind: RiskKind,
    pub p: f64,
    pub value: f64,
    pub std_error: f64,
    pub method: Method,
    pub samples: usize,
    /// The inner supremum came from a finite grid, so `value` is a lower
    /// bound up to Monte Carlo error.
    pub one_sided: bool,
}

impl RiskEstimate {
    fn exact(kind: RiskKind, p: f64, value: f64) -> Self {
        RiskEstimate {
            kind,
            p,
            value,
            std_error: 0.0,
            method: Method::Exact,
            samples: 0,
            one_sided: false,
        }
    }

    fn monte_carlo(kind: RiskKind, p: f64, value: f64, std_error: f64, samples: usize) -> Self {
        // identical draws carry no sampling error: report them as exact
        let method = if std_error > 0.0 { Method::MonteCarlo } else { Method::Exact };
        RiskEstimate {
            kind,
            p,
            value,
            std_error,
            method,
            samples,
            one_sided: false,
        }
    }
}

/// One affine piece `y ↦ slope·y + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinePiece {
    pub slope: f64,
    pub intercept: f64,
}

impl AffinePiece {
    fn eval(&self, y: f64) -> f64 {
        self.slope * y + self.intercept
    }
}

/// A recovery map `Δ: ℝᵐ → ℝ`.
#[derive(Clone)]
pub enum RecoveryMap {
    Linear(LinearEstimator),
    /// Scalar map, affine on each open interval between consecutive
    /// breakpoints, with explicit values at the breakpoints themselves.
    PiecewiseAffine1D {
        breakpoints: Vec<f64>,
        pieces: Vec<AffinePiece>,
        at_breakpoints: Vec<f64>,
    },
    /// Scalar map known only through evaluations.
    Opaque(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for RecoveryMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecoveryMap::Linear(a) => f.debug_tuple("Linear").field(&a.a).finish(),
            RecoveryMap::PiecewiseAffine1D {
                breakpoints,
                pieces,
                at_breakpoints,
            } => f
                .debug_struct("PiecewiseAffine1D")
                .field("breakpoints", breakpoints)
                .field("pieces", pieces)
                .field("at_breakpoints", at_breakpoints)
                .finish(),
            RecoveryMap::Opaque(_) => f.write_str("Opaque(..)"),
        }
    }
}

impl RecoveryMap {
    pub fn linear(a: DVector<f64>) -> Self {
        RecoveryMap::Linear(LinearEstimator::new(a))
    }

    pub fn scalar_linear(a: f64) -> Self {
        RecoveryMap::Linear(LinearEstimator { a: vec![a] })
    }

    pub fn opaque(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        RecoveryMap::Opaque(Arc::new(f))
    }

    pub fn piecewise_affine(
        breakpoints: Vec<f64>,
        pieces: Vec<AffinePiece>,
        at_breakpoints: Vec<f64>,
    ) -> Result<Self> {
        if pieces.len() != breakpoints.len() + 1 {
            return Err(Error::dims("pieces", breakpoints.len() + 1, pieces.len()));
        }
        if at_breakpoints.len() != breakpoints.len() {
            return Err(Error::dims("at_breakpoints", breakpoints.len(), at_breakpoints.len()));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) || breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("breakpoints", "must be finite and strictly increasing"));
        }
        Ok(RecoveryMap::PiecewiseAffine1D {
            breakpoints,
            pieces,
            at_breakpoints,
        })
    }

    /// Evaluation of a scalar map.
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            RecoveryMap::Linear(a) => a.a[0] * y,
            RecoveryMap::PiecewiseAffine1D {
                breakpoints,
                pieces,
                at_breakpoints,
            } => {
                let idx = breakpoints.partition_point(|&b| b < y);
                if idx < breakpoints.len() && breakpoints[idx] == y {
                    at_breakpoints[idx]
                } else {
                    pieces[idx].eval(y)
                }
            }
            RecoveryMap::Opaque(f) => f(y),
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            RecoveryMap::Linear(a) => a.a.iter().all(|&x| x == 0.0),
            RecoveryMap::PiecewiseAffine1D {
                pieces,
                at_breakpoints,
                ..
            } => {
                pieces.iter().all(|p| p.slope == 0.0 && p.intercept == 0.0)
                    && at_breakpoints.iter().all(|&v| v == 0.0)
            }
            RecoveryMap::Opaque(_) => false,
        }
    }

    /// `sup_{|f| ≤ τ} |b·f − Δ(c·f + ξ)|` for a scalar map, and whether it
    /// is exact (opaque maps use a grid).
    fn scalar_sup(&self, setting: &SimplestSetting, xi: f64) -> (f64, bool) {
        let SimplestSetting { b, c, tau, .. } = *setting;
        match self {
            RecoveryMap::Linear(a) => {
                let a = a.a[0];
                ((b - a * c).abs() * tau + (a * xi).abs(), true)
            }
            RecoveryMap::PiecewiseAffine1D {
                breakpoints,
                pieces,
                at_breakpoints,
            } => {
                let mut best = 0.0_f64;
                for (j, piece) in pieces.iter().enumerate() {
                    let lo_y = if j == 0 { f64::NEG_INFINITY } else { breakpoints[j - 1] };
                    let hi_y = breakpoints.get(j).copied().unwrap_or(f64::INFINITY);
                    let (f_lo, f_hi) = if c > 0.0 {
                        ((lo_y - xi) / c, (hi_y - xi) / c)
                    } else {
                        ((hi_y - xi) / c, (lo_y - xi) / c)
                    };
                    let lo = f_lo.max(-tau);
                    let hi = f_hi.min(tau);
                    if lo < hi {
                        // error on this piece is affine in f; its sup sits at an end
                        let slope = b - piece.slope * c;
                        let offset = piece.slope * xi + piece.intercept;
                        best = best.max((slope * lo - offset).abs()).max((slope * hi - offset).abs());
                    }
                }
                for (beta, value) in breakpoints.iter().zip(at_breakpoints) {
                    let f = (beta - xi) / c;
                    if f.abs() <= tau {
                        best = best.max((b * f - value).abs());
                    }
                }
                (best, true)
            }
            RecoveryMap::Opaque(map) => {
                let mut best = 0.0_f64;
                for k in 0..OPAQUE_SUP_GRID {
                    let f = grid_point(tau, k, OPAQUE_SUP_GRID);
                    best = best.max((b * f - map(c * f + xi)).abs());
                }
                (best, false)
            }
        }
    }
}

fn grid_point(radius: f64, k: usize, points: usize) -> f64 {
    if 2 * k + 1 == points {
        return 0.0;
    }
    -radius + 2.0 * radius * k as f64 / (points - 1) as f64
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::invalid("p", "must be finite and at least 1"));
    }
    Ok(())
}

fn check_count(count: usize) -> Result<()> {
    if count < 2 {
        return Err(Error::invalid("samples", "need at least two samples"));
    }
    Ok(())
}

/// Weighted atoms `(probability, draw)` of a finitely supported law.
fn atoms(noise: &NoiseModel) -> Option<Vec<(f64, DVector<f64>)>> {
    match noise {
        NoiseModel::Rademacher { sigma } => Some(vec![
            (0.5, DVector::from_element(1, -sigma)),
            (0.5, DVector::from_element(1, *sigma)),
        ]),
        NoiseModel::Correlated { base, mixing } => atoms(base)
            .map(|list| list.into_iter().map(|(w, x)| (w, mixing * x)).collect()),
        _ if noise.is_degenerate() => Some(vec![(1.0, DVector::zeros(noise.dim()))]),
        _ => None,
    }
}

fn is_gaussian(noise: &NoiseModel) -> bool {
    matches!(noise.base_and_mixing().0, NoiseModel::GaussianIso { .. })
}

/// `sup_{f∈K} |⟨q − Λᵀa, f⟩|`, the noiseless worst-case error of `a`.
pub fn gwce(problem: &Problem, map: &LinearEstimator) -> Result<ExtendedReal> {
    let a = map.vector();
    if a.len() != problem.m() {
        return Err(Error::dims("a", problem.m(), a.len()));
    }
    problem.residual_support(&a)
}

fn finite_gwce(problem: &Problem, map: &LinearEstimator) -> Result<f64> {
    gwce(problem, map)?.finite().ok_or_else(|| {
        Error::Precondition("the residual functional is unbounded on the model set: infinite risk".into())
    })
}

/// `(mean^{1/p}, delta-method standard error)` from sums of `x` and `x²`.
fn root_of_mean(sum: f64, sum_sq: f64, count: usize, p: f64) -> (f64, f64) {
    let (mean, se) = mc::mean_and_se(sum, sum_sq, count);
    let value = mean.max(0.0).powf(1.0 / p);
    let std_error = if mean > 0.0 {
        value / (p * mean) * se
    } else {
        0.0
    };
    (value, std_error)
}

/// Draws `⟨a, e_i⟩` for sample `i`.
fn projected_draw(noise: &NoiseModel, a: &DVector<f64>, seed: u64, i: usize, buf: &mut [f64]) -> f64 {
    noise.sample_into(seed, i as u64, buf);
    a.iter().zip(buf.iter()).map(|(x, y)| x * y).sum()
}

/// `ge_or_p` of a linear map, exactly when possible.
///
/// Exact paths: zero map or degenerate noise, finitely supported noise, and
/// Gaussian noise with `p ∈ {1, 2}` (half-normal moments).
pub fn ge_or_linear(
    problem: &Problem,
    map: &LinearEstimator,
    p: f64,
    count: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    check_p(p)?;
    let h = finite_gwce(problem, map)?;
    let a = map.vector();
    let noise = problem.noise();
    if map.a.iter().all(|&x| x == 0.0) || noise.is_degenerate() {
        return Ok(RiskEstimate::exact(RiskKind::Or, p, h));
    }
    if let Some(list) = atoms(noise) {
        let moment: f64 = list
            .iter()
            .map(|(w, e)| w * (h + a.dot(e).abs()).powf(p))
            .sum();
        return Ok(RiskEstimate::exact(RiskKind::Or, p, moment.powf(1.0 / p)));
    }
    if is_gaussian(noise) && (p == 1.0 || p == 2.0) {
        let s = (a.transpose() * noise.covariance() * &a)[(0, 0)].max(0.0).sqrt();
        let mean_abs = s * (2.0 / PI).sqrt();
        let value = if p == 1.0 {
            h + mean_abs
        } else {
            (h * h + 2.0 * h * mean_abs + s * s).sqrt()
        };
        return Ok(RiskEstimate::exact(RiskKind::Or, p, value));
    }
    ge_or_linear_mc(problem, map, p, count, seed)
}

/// Monte Carlo `ge_or_p` of a linear map, regardless of closed forms.
pub fn ge_or_linear_mc(
    problem: &Problem,
    map: &LinearEstimator,
    p: f64,
    count: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    check_p(p)?;
    check_count(count)?;
    let h = finite_gwce(problem, map)?;
    let a = map.vector();
    let noise = problem.noise();
    let m = noise.dim();
    let sums = mc::sum_rows(
        count,
        2,
        || vec![0.0; m],
        |buf, i, out| {
            let zeta = projected_draw(noise, &a, seed, i, buf);
            let x = (h + zeta.abs()).powf(p);
            out[0] = x;
            out[1] = x * x;
        },
    );
    let (value, std_error) = root_of_mean(sums[0], sums[1], count, p);
    Ok(RiskEstimate::monte_carlo(RiskKind::Or, p, value, std_error, count))
}

/// `ge_se_p` of a linear map.
///
/// The supremum over `K` runs along the segment `t·f*`, `t ∈ [−1, 1]`, where
/// `f*` attains the support value `h`. For `p = 2` the value is
/// `√(h² + aᵀΣa)`; otherwise `E|h·t − ⟨a,e⟩|^p` is estimated on a `t`-grid
/// with common random numbers and the grid maximum is returned.
pub fn ge_se_linear(
    problem: &Problem,
    map: &LinearEstimator,
    p: f64,
    count: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    check_p(p)?;
    let h = finite_gwce(problem, map)?;
    let a = map.vector();
    let noise = problem.noise();
    if map.a.iter().all(|&x| x == 0.0) || noise.is_degenerate() {
        return Ok(RiskEstimate::exact(RiskKind::Se, p, h));
    }
    if p == 2.0 {
        let var = (a.transpose() * noise.covariance() * &a)[(0, 0)].max(0.0);
        return Ok(RiskEstimate::exact(RiskKind::Se, p, (h * h + var).sqrt()));
    }
    if let Some(list) = atoms(noise) {
        let best = (0..LINEAR_SE_GRID)
            .map(|k| {
                let t = grid_point(1.0, k, LINEAR_SE_GRID);
                list.iter()
                    .map(|(w, e)| w * (h * t - a.dot(e)).abs().powf(p))
                    .sum::<f64>()
            })
            .fold(0.0_f64, f64::max);
        return Ok(RiskEstimate::exact(RiskKind::Se, p, best.powf(1.0 / p)));
    }
    ge_se_linear_mc(problem, map, p, count, seed)
}

/// Monte Carlo `ge_se_p` of a linear map on the `t`-grid.
pub fn ge_se_linear_mc(
    problem: &Problem,
    map: &LinearEstimator,
    p: f64,
    count: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    check_p(p)?;
    check_count(count)?;
    let h = finite_gwce(problem, map)?;
    let a = map.vector();
    let noise = problem.noise();
    let m = noise.dim();
    let grid: Vec<f64> = (0..LINEAR_SE_GRID).map(|k| grid_point(1.0, k, LINEAR_SE_GRID)).collect();
    let sums = mc::sum_rows(
        count,
        2 * LINEAR_SE_GRID,
        || vec![0.0; m],
        |buf, i, out| {
            let zeta = projected_draw(noise, &a, seed, i, buf);
            for (k, t) in grid.iter().enumerate() {
                let x = (h * t - zeta).abs().powf(p);
                out[2 * k] = x;
                out[2 * k + 1] = x * x;
            }
        },
    );
    Ok(grid_max(&sums, LINEAR_SE_GRID, count, p, RiskKind::Se))
}

fn grid_max(sums: &[f64], points: usize, count: usize, p: f64, kind: RiskKind) -> RiskEstimate {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..points {
        let (value, se) = root_of_mean(sums[2 * k], sums[2 * k + 1], count, p);
        if value > best.0 {
            best = (value, se);
        }
    }
    RiskEstimate::monte_carlo(kind, p, best.0, best.1, count)
}

fn check_scalar_noise(noise: &NoiseModel) -> Result<()> {
    noise.validate()?;
    if noise.dim() != 1 {
        return Err(Error::dims("noise.m", 1, noise.dim()));
    }
    Ok(())
}

fn check_scalar_map(map: &RecoveryMap) -> Result<()> {
    if let RecoveryMap::Linear(a) = map {
        if a.a.len() != 1 {
            return Err(Error::dims("a", 1, a.a.len()));
        }
    }
    Ok(())
}

/// Scalar `ge_or_p` of an arbitrary map:
/// `(E sup_{|f|≤τ} |b·f − Δ(c·f + ξ)|^p)^{1/p}`.
///
/// Piecewise-affine maps are evaluated exactly per draw; opaque maps use a
/// dense grid and the result is flagged `one_sided`.
pub fn ge_or_general_1d(
    setting: &SimplestSetting,
    noise: &NoiseModel,
    map: &RecoveryMap,
    p: f64,
    count: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    check_p(p)?;
    check_scalar_noise(noise)?;
    check_scalar_map(map)?;
    if map.is_zero() {
        let value = setting.b.abs() * setting.tau;
        return Ok(RiskEstimate::exact(RiskKind::Or, p, value));
    }
    if let Some(list) = atoms(noise) {
        let mut exact = true;
        let moment: f64 = list
            .iter()
            .map(|(w, e)| {
                let (s, ok) = map.scalar_sup(setting, e[0]);
                exact &= ok;
                w * s.powf(p)
            })
            .sum();
        let mut r = RiskEstimate::exact(RiskKind::Or, p, moment.powf(1.0 / p));
        r.one_sided = !exact;
        return Ok(r);
    }
    check_count(count)?;
    let one_sided = matches!(map, RecoveryMap::Opaque(_));
    let sums = mc::sum_rows(
        count,
        2,
        || [0.0_f64],
        |buf, i, out| {
            noise.sample_into(seed, i as u64, buf);
            let (s, _) = map.scalar_sup(setting, buf[0]);
            let x = s.powf(p);
            out[0] = x;
            out[1] = x * x;
        },
    );
    let (value, std_error) = root_of_mean(sums[0], sums[1], count, p);
    let mut r = RiskEstimate::monte_carlo(RiskKind::Or, p, value, std_error, count);
    r.one_sided = one_sided;
    Ok(r)
}

/// Scalar `ge_se_p` of an arbitrary map: the maximum over a 129-point
/// `f`-grid of `(E|b·f − Δ(c·f + ξ)|^p)^{1/p}`, all grid points sharing one
/// noise sample.
pub fn ge_se_general_1d(
    setting: &SimplestSetting,
    noise: &NoiseModel,
    map: &RecoveryMap,
    p: f64,
    count: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    check_p(p)?;
    check_scalar_noise(noise)?;
    check_scalar_map(map)?;
    let SimplestSetting { b, c, tau, .. } = *setting;
    if map.is_zero() {
        return Ok(RiskEstimate::exact(RiskKind::Se, p, b.abs() * tau));
    }
    let grid: Vec<f64> = (0..SCALAR_SE_GRID).map(|k| grid_point(tau, k, SCALAR_SE_GRID)).collect();
    if let Some(list) = atoms(noise) {
        let best = grid
            .iter()
            .map(|&f| {
                list.iter()
                    .map(|(w, e)| w * (b * f - map.eval(c * f + e[0])).abs().powf(p))
                    .sum::<f64>()
            })
            .fold(0.0_f64, f64::max);
        return Ok(RiskEstimate::exact(RiskKind::Se, p, best.powf(1.0 / p)));
    }
    check_count(count)?;
    let sums = mc::sum_rows(
        count,
        2 * SCALAR_SE_GRID,
        || [0.0_f64],
        |buf, i, out| {
            noise.sample_into(seed, i as u64, buf);
            let xi = buf[0];
            for (k, &f) in grid.iter().enumerate() {
                let x = (b * f - map.eval(c * f + xi)).abs().powf(p);
                out[2 * k] = x;
                out[2 * k + 1] = x * x;
            }
        },
    );
    Ok(grid_max(&sums, SCALAR_SE_GRID, count, p, RiskKind::Se))
}
