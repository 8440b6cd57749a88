//! Design of the linear estimator `y ↦ ⟨a, y⟩`.
//!
//! With the noise replaced by the deterministic ball `E = {‖M⁻¹e‖₂ ≤ σ}`
//! (`M = Id` for isotropic noise), the worst-case error of `⟨a, ·⟩` is
//!
//! ```text
//! J(a) = sup_{f ∈ K} |⟨q − Λᵀa, f⟩| + σ‖Mᵀa‖₂,
//! ```
//!
//! and its minimum equals the null error
//!
//! ```text
//! N = sup { |⟨q, h⟩| : |h|_K ≤ 1, ‖M⁻¹Λh‖₂ ≤ σ }.
//! ```
//!
//! `J` is minimised by a projected subgradient method with Polyak steps.
//! `N` is computed independently: for ellipsoids and approximability sets
//! it is a linear functional maximised over two centred ellipsoids, which
//! reduces to a one-dimensional convex minimisation over the blend
//! parameter. For boxes, `N` is the minimum of `J`, with a primal lower
//! bound recovered from averaged support points as the stopping certificate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ExtendedReal, ModelSet};
use crate::linalg;
use crate::noise::NoiseModel;
use crate::oned::{self, SimplestSetting};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 5000;

const GOLDEN_MAX_ITER: usize = 200;
const GOLDEN_T_TOL: f64 = 1e-12;

/// One estimation instance: observe `y = Λf + e`, estimate `⟨q, f⟩`,
/// knowing `f ∈ K`.
#[derive(Debug, Clone)]
pub struct Problem {
    lambda: DMatrix<f64>,
    q: DVector<f64>,
    set: ModelSet,
    noise: NoiseModel,
}

impl Problem {
    pub fn new(lambda: DMatrix<f64>, q: DVector<f64>, set: ModelSet, noise: NoiseModel) -> Result<Self> {
        let n = set.dim();
        if lambda.ncols() != n {
            return Err(Error::dims("lambda", n, lambda.ncols()));
        }
        if q.len() != n {
            return Err(Error::dims("q", n, q.len()));
        }
        noise.validate()?;
        if lambda.nrows() != noise.dim() {
            return Err(Error::dims("lambda", noise.dim(), lambda.nrows()));
        }
        if lambda.iter().chain(q.iter()).any(|x| !x.is_finite()) {
            return Err(Error::invalid("lambda, q", "entries must be finite"));
        }
        Ok(Problem {
            lambda,
            q,
            set,
            noise,
        })
    }

    /// The scalar instance `b·f` from `c·f + ξ` with `f ∈ [−τ, τ]`.
    pub fn scalar(setting: &SimplestSetting, noise: NoiseModel) -> Result<Self> {
        Problem::new(
            DMatrix::from_element(1, 1, setting.c),
            DVector::from_element(1, setting.b),
            ModelSet::cube(1, setting.tau)?,
            noise,
        )
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn m(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn model_set(&self) -> &ModelSet {
        &self.set
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn with_q(&self, q: DVector<f64>) -> Result<Self> {
        Problem::new(self.lambda.clone(), q, self.set.clone(), self.noise.clone())
    }

    pub fn with_noise(&self, noise: NoiseModel) -> Result<Self> {
        Problem::new(self.lambda.clone(), self.q.clone(), self.set.clone(), noise)
    }

    /// `q − Λᵀa`, the residual functional left after estimating with `a`.
    pub fn residual(&self, a: &DVector<f64>) -> DVector<f64> {
        &self.q - self.lambda.tr_mul(a)
    }

    /// `sup_{f ∈ K} |⟨q − Λᵀa, f⟩|`, with finiteness judged at the scale of
    /// `q` and `Λᵀa` so that cancellation does not read as unboundedness.
    pub fn residual_support(&self, a: &DVector<f64>) -> Result<ExtendedReal> {
        if a.len() != self.m() {
            return Err(Error::dims("a", self.m(), a.len()));
        }
        let fitted = self.lambda.tr_mul(a);
        let scale = self.q.norm() + fitted.norm();
        Ok(self.set.support_at_scale(&(&self.q - fitted), scale))
    }

    fn check_regular(&self) -> Result<()> {
        let r = self.set.regularity(&self.lambda)?;
        match r.witness {
            Some(w) if !r.regular => Err(Error::Irregular {
                witness: w.iter().copied().collect(),
            }),
            _ => Ok(()),
        }
    }

    /// `σ` and `Mᵀ` describing the deterministic noise ball.
    fn noise_ball(&self) -> (f64, Option<DMatrix<f64>>) {
        let (_, mixing) = self.noise.base_and_mixing();
        (self.noise.sigma(), mixing.map(|m| m.transpose()))
    }
}

/// Coefficients `a` of the linear recovery map `y ↦ ⟨a, y⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinearEstimator {
    pub a: Vec<f64>,
}

impl LinearEstimator {
    pub fn new(a: DVector<f64>) -> Self {
        LinearEstimator {
            a: a.iter().copied().collect(),
        }
    }

    pub fn vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.a)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignReport {
    #[serde(rename = "a")]
    pub a_star: LinearEstimator,
    /// Worst-case objective `J(a_star)`: an upper bound on the expected
    /// worst-case error of `a_star` under any noise with this covariance.
    pub objective: f64,
    /// Null error from the independent route (a lower bound for boxes).
    pub null_error: f64,
    pub duality_gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// `J(a) = sup_{f∈K} |⟨q − Λᵀa, f⟩| + σ‖Mᵀa‖₂`; `+∞` when the residual is
/// unbounded on `K`.
pub fn det1_objective(problem: &Problem, a: &DVector<f64>) -> Result<ExtendedReal> {
    if a.len() != problem.m() {
        return Err(Error::dims("a", problem.m(), a.len()));
    }
    let support = problem.residual_support(a)?;
    let (sigma, mix_t) = problem.noise_ball();
    let noise = if sigma == 0.0 {
        0.0
    } else {
        match &mix_t {
            Some(mt) => sigma * (mt * a).norm(),
            None => sigma * a.norm(),
        }
    };
    Ok(support + noise)
}

/// Affine constraint keeping `q − Λᵀa ⊥ range V` for approximability sets.
struct Feasible {
    start: DVector<f64>,
    /// Orthonormal basis of the directions that keep the constraint.
    basis: DMatrix<f64>,
    projector: DMatrix<f64>,
}

/// Objective and subgradient oracle on the feasible set.
struct Objective<'a> {
    problem: &'a Problem,
    sigma: f64,
    mix_t: Option<DMatrix<f64>>,
    feasible: Option<Feasible>,
}

struct Eval {
    value: f64,
    grad: DVector<f64>,
    /// Support point of the residual; drives primal recovery.
    support_point: DVector<f64>,
}

impl<'a> Objective<'a> {
    fn new(problem: &'a Problem) -> Result<Self> {
        let (sigma, mix_t) = problem.noise_ball();
        let feasible = match problem.set.subspace() {
            Some((v, _)) if v.ncols() > 0 => {
                // need Vᵀ(q − Λᵀa) = 0, i.e. B a = Vᵀq with B = (ΛV)ᵀ
                let b = (problem.lambda() * v).transpose();
                let rhs = v.tr_mul(problem.q());
                let svd = b.clone().svd(true, true);
                let start = svd
                    .solve(&rhs, 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE))
                    .map_err(|_| Error::Infeasible)?;
                let residual = (&b * &start - &rhs).norm();
                if residual > 1e-9 * (1.0 + rhs.norm()) {
                    return Err(Error::Infeasible);
                }
                let z = linalg::null_space(&b, 1e-12);
                let projector = &z * z.transpose();
                Some(Feasible {
                    start,
                    basis: z,
                    projector,
                })
            }
            _ => None,
        };
        Ok(Objective {
            problem,
            sigma,
            mix_t,
            feasible,
        })
    }

    fn start(&self) -> DVector<f64> {
        match &self.feasible {
            Some(f) => f.start.clone(),
            None => DVector::zeros(self.problem.m()),
        }
    }

    fn noise_term(&self, a: &DVector<f64>) -> (f64, DVector<f64>) {
        if self.sigma == 0.0 {
            return (0.0, DVector::zeros(a.len()));
        }
        match &self.mix_t {
            None => {
                let norm = a.norm();
                let g = if norm > 0.0 { a * (self.sigma / norm) } else { DVector::zeros(a.len()) };
                (self.sigma * norm, g)
            }
            Some(mt) => {
                let w = mt * a;
                let norm = w.norm();
                let g = if norm > 0.0 {
                    mt.tr_mul(&w) * (self.sigma / norm)
                } else {
                    DVector::zeros(a.len())
                };
                (self.sigma * norm, g)
            }
        }
    }

    fn eval(&self, a: &DVector<f64>) -> Eval {
        let c = self.problem.residual(a);
        let f = self
            .problem
            .set
            .support_point(&c)
            .expect("support point exists on the feasible set");
        let support = c.dot(&f).max(0.0);
        let (noise, noise_grad) = self.noise_term(a);
        let mut grad = noise_grad - self.problem.lambda() * &f;
        if let Some(feasible) = &self.feasible {
            grad = &feasible.projector * grad;
        }
        Eval {
            value: support + noise,
            grad,
            support_point: f,
        }
    }

    /// Best certified lower bound obtainable from a candidate `h`: scaling
    /// `h` onto `{|h|_K ≤ 1, ‖M⁻¹Λh‖ ≤ σ}` yields `|⟨q,h⟩| / max(...)`.
    fn primal_bound(&self, h: &DVector<f64>) -> Option<f64> {
        if self.feasible.is_some() {
            return None;
        }
        if self.sigma == 0.0 {
            // E = {0}: move h into ker Λ first
            let z = linalg::null_space(self.problem.lambda(), 1e-12);
            let h = &z * z.tr_mul(h);
            let scale = self.problem.set.gauge_unchecked(&h);
            return (scale > 0.0).then(|| self.problem.q.dot(&h).abs() / scale);
        }
        let lh = self.problem.lambda() * h;
        let noise_gauge = match &self.mix_t {
            None => lh.norm(),
            Some(mt) => mt.transpose().clone().lu().solve(&lh)?.norm(),
        } / self.sigma;
        let scale = self.problem.set.gauge_unchecked(h).max(noise_gauge);
        if scale > 0.0 {
            Some(self.problem.q.dot(h).abs() / scale)
        } else {
            None
        }
    }
}

struct Minimum {
    a: DVector<f64>,
    objective: f64,
    lower: f64,
    iterations: usize,
    converged: bool,
}

/// How the Polyak level is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolyakTarget {
    /// A known lower bound on the minimum (typically the null error).
    Known(f64),
    /// Lower bounds recovered from step-weighted averages of support points,
    /// falling back to a shrinking level below the running best.
    Recovered,
}

fn minimize(objective: &Objective<'_>, target: PolyakTarget, opts: &SolverOptions) -> Minimum {
    let mut a = objective.start();
    let first = objective.eval(&a);
    let mut best_a = a.clone();
    let mut best = first.value;
    let mut lower = match target {
        PolyakTarget::Known(v) => v,
        PolyakTarget::Recovered => 0.0,
    };
    let gap_ok = |best: f64, lower: f64| best - lower <= opts.tol * (1.0 + lower.abs());

    let mut history: Vec<DVector<f64>> = Vec::with_capacity(opts.max_iter.min(1 << 16));
    let mut weighted_support = DVector::zeros(objective.problem.n());
    let mut weight_total = 0.0;
    // level offset for the target-free fallback
    let mut delta = 0.5 * first.value.max(f64::MIN_POSITIVE);
    let mut stall = 0usize;
    let mut iterations = 0;
    let mut current = first;

    while iterations < opts.max_iter && !gap_ok(best, lower) {
        let g2 = current.grad.norm_squared();
        if g2 == 0.0 {
            // zero subgradient certifies optimality of the current point
            lower = lower.max(current.value);
            break;
        }
        let level = if lower > 0.0 || matches!(target, PolyakTarget::Known(_)) {
            lower.max(best - delta)
        } else {
            best - delta
        }
        .min(current.value);
        let mut step = (current.value - level) / g2;
        if step <= 0.0 {
            step = delta / g2;
        }
        if matches!(target, PolyakTarget::Recovered) {
            weighted_support += &current.support_point * step;
            weight_total += step;
        }
        a -= &current.grad * step;
        iterations += 1;
        history.push(a.clone());
        current = objective.eval(&a);
        if current.value < best - 1e-15 * best.abs() {
            if best - current.value < 0.5 * delta {
                stall += 1;
            } else {
                stall = 0;
            }
            best = current.value;
            best_a = a.clone();
        } else {
            stall += 1;
        }
        if stall >= 20 {
            delta *= 0.5;
            stall = 0;
        }
        if matches!(target, PolyakTarget::Recovered) && weight_total > 0.0 {
            let h = &weighted_support / weight_total;
            if let Some(lb) = objective.primal_bound(&h) {
                lower = lower.max(lb.min(best));
            }
            if let Some(lb) = objective.primal_bound(&current.support_point) {
                lower = lower.max(lb.min(best));
            }
        }
    }

    // averaged iterate over the final half
    if history.len() >= 2 {
        let half = &history[history.len() / 2..];
        let mut avg = DVector::zeros(a.len());
        for x in half {
            avg += x;
        }
        avg /= half.len() as f64;
        let v = objective.eval(&avg).value;
        if v < best {
            best = v;
            best_a = avg;
        }
    }
    Minimum {
        a: best_a,
        objective: best,
        lower,
        iterations,
        converged: gap_ok(best, lower),
    }
}

/// Smooth surrogate of `J` in which every norm `‖x‖` becomes
/// `√(‖x‖² + μ²)` (coordinatewise for the box's ℓ₁ term).
struct Smoothed<'a> {
    objective: &'a Objective<'a>,
    /// `A⁻ᵀ` for ellipsoids.
    ellipsoid_inv_t: Option<DMatrix<f64>>,
}

struct SmoothEval {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl<'a> Smoothed<'a> {
    fn new(objective: &'a Objective<'a>) -> Result<Self> {
        let ellipsoid_inv_t = match objective.problem.set.ellipsoid_matrix() {
            Some(a) => Some(linalg::checked_inverse(a, "model_set.a")?.transpose()),
            None => None,
        };
        Ok(Smoothed {
            objective,
            ellipsoid_inv_t,
        })
    }

    /// Adds `c·√(‖u‖² + μ²)` with `u = L x` to value, gradient and Hessian.
    fn add_norm(
        out: &mut SmoothEval,
        c: f64,
        l: &DMatrix<f64>,
        x: &DVector<f64>,
        mu: f64,
    ) {
        let u = l * x;
        let psi = (u.norm_squared() + mu * mu).sqrt();
        out.value += c * psi;
        out.grad += l.tr_mul(&u) * (c / psi);
        let inner = (DMatrix::identity(u.len(), u.len()) / psi - &u * u.transpose() / psi.powi(3)) * c;
        out.hess += l.tr_mul(&inner) * l;
    }

    /// Value, gradient and Hessian with respect to `a`.
    fn eval(&self, a: &DVector<f64>, mu: f64) -> SmoothEval {
        let problem = self.objective.problem;
        let m = problem.m();
        let lambda = problem.lambda();
        let r = problem.residual(a);
        let mut out = SmoothEval {
            value: 0.0,
            grad: DVector::zeros(m),
            hess: DMatrix::zeros(m, m),
        };
        // residual term, as a function of r, then chained through r = q − Λᵀa
        let mut part = SmoothEval {
            value: 0.0,
            grad: DVector::zeros(r.len()),
            hess: DMatrix::zeros(r.len(), r.len()),
        };
        if let Some(tau) = problem.set.box_radius() {
            for (i, &ri) in r.iter().enumerate() {
                let psi = (ri * ri + mu * mu).sqrt();
                part.value += tau * psi;
                part.grad[i] = tau * ri / psi;
                part.hess[(i, i)] = tau * mu * mu / psi.powi(3);
            }
        } else if let Some(l) = &self.ellipsoid_inv_t {
            Self::add_norm(&mut part, 1.0, l, &r, mu);
        } else if let Some((_, eps)) = problem.set.subspace() {
            let id = DMatrix::identity(r.len(), r.len());
            Self::add_norm(&mut part, eps, &id, &r, mu);
        }
        out.value += part.value;
        out.grad -= lambda * &part.grad;
        out.hess += lambda * &part.hess * lambda.transpose();

        let sigma = self.objective.sigma;
        if sigma > 0.0 {
            match &self.objective.mix_t {
                Some(mt) => Self::add_norm(&mut out, sigma, mt, a, mu),
                None => Self::add_norm(&mut out, sigma, &DMatrix::identity(m, m), a, mu),
            }
        }
        out
    }

    /// Box point `τ·r/√(r² + μ²)` attached to the smoothed residual term.
    fn box_candidate(&self, a: &DVector<f64>, mu: f64) -> Option<DVector<f64>> {
        let tau = self.objective.problem.set.box_radius()?;
        let r = self.objective.problem.residual(a);
        Some(r.map(|ri| tau * ri / (ri * ri + mu * mu).sqrt()))
    }
}

const REFINE_STAGES: i32 = 11;
const NEWTON_MAX_STEPS: usize = 60;

struct Refined {
    a: DVector<f64>,
    lower: Option<f64>,
    steps: usize,
}

/// Damped Newton on the smoothed objective with `μ` driven from `10⁻²·s`
/// down to `10⁻¹²·s`, restricted to the feasible affine set when there is
/// one. For boxes each stage also yields a primal lower bound.
fn refine(objective: &Objective<'_>, start: &DVector<f64>, scale: f64) -> Result<Refined> {
    let smoothed = Smoothed::new(objective)?;
    let (origin, basis) = match &objective.feasible {
        Some(f) => (f.start.clone(), f.basis.clone()),
        None => {
            let m = objective.problem.m();
            (DVector::zeros(m), DMatrix::identity(m, m))
        }
    };
    let mut a = start.clone();
    let mut lower: Option<f64> = None;
    let mut steps = 0;
    if basis.ncols() == 0 || !(scale > 0.0) {
        return Ok(Refined { a, lower, steps });
    }
    // keep the iterate on the affine set exactly
    let mut w = basis.tr_mul(&(&a - &origin));
    a = &origin + &basis * &w;
    for stage in 0..=REFINE_STAGES {
        let mu = scale * 10f64.powi(-2 - stage);
        for _ in 0..NEWTON_MAX_STEPS {
            let e = smoothed.eval(&a, mu);
            let g = basis.tr_mul(&e.grad);
            let h = basis.tr_mul(&e.hess) * &basis;
            let Some(d) = newton_direction(&h, &g) else { break };
            let decrement = -g.dot(&d);
            if !(decrement > 1e-24 * scale * scale) {
                break;
            }
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-12 {
                let w_new = &w + &d * t;
                let a_new = &origin + &basis * &w_new;
                if smoothed.eval(&a_new, mu).value <= e.value - 0.25 * t * decrement {
                    w = w_new;
                    a = a_new;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            steps += 1;
            if !accepted {
                break;
            }
        }
        if let Some(h) = smoothed.box_candidate(&a, mu) {
            if let Some(lb) = objective.primal_bound(&h) {
                lower = Some(lower.map_or(lb, |l: f64| l.max(lb)));
            }
        }
    }
    Ok(Refined { a, lower, steps })
}

fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let k = h.nrows();
    let trace = (0..k).map(|i| h[(i, i)]).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut shift = 1e-14 * trace / k as f64;
    for _ in 0..20 {
        let shifted = h + DMatrix::identity(k, k) * shift;
        if let Some(ch) = shifted.cholesky() {
            let d = -ch.solve(g);
            if d.iter().all(|x| x.is_finite()) {
                return Some(d);
            }
        }
        shift *= 100.0;
    }
    None
}

/// Minimises `J` without any dual information, using recovered primal
/// bounds only. Exposed so the dual route can be cross-checked against an
/// untouched primal solve.
pub fn minimize_det1(problem: &Problem, opts: &SolverOptions) -> Result<DesignReport> {
    problem.check_regular()?;
    let objective = Objective::new(problem)?;
    let min = minimize(&objective, PolyakTarget::Recovered, opts);
    Ok(report(min, None))
}

fn report(min: Minimum, null_error: Option<f64>) -> DesignReport {
    let null_error = null_error.unwrap_or(min.lower);
    DesignReport {
        a_star: LinearEstimator::new(min.a),
        objective: min.objective,
        null_error,
        duality_gap: min.objective - null_error,
        iterations: min.iterations,
        converged: min.converged,
    }
}

/// Minimiser of `J` with a duality certificate.
///
/// Fails with [`Error::NotConverged`] (carrying the best iterate) when the
/// gap `J(a) − N` is still above `tol·(1 + N)` after `max_iter` steps.
pub fn design_linear(problem: &Problem, opts: &SolverOptions) -> Result<DesignReport> {
    problem.check_regular()?;
    let objective = Objective::new(problem)?;
    if problem.q.iter().all(|&x| x == 0.0) {
        let zero = DVector::zeros(problem.m());
        return Ok(DesignReport {
            a_star: LinearEstimator::new(zero),
            objective: 0.0,
            null_error: 0.0,
            duality_gap: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let dual = match problem.set.box_radius() {
        Some(_) => None,
        None => Some(two_ellipsoid_null_error(problem)?),
    };
    let target = dual.map_or(PolyakTarget::Recovered, PolyakTarget::Known);
    let mut min = minimize(&objective, target, opts);
    let refined = refine(&objective, &min.a, min.objective)?;
    let value = objective.eval(&refined.a).value;
    if value < min.objective {
        min.objective = value;
        min.a = refined.a;
    }
    if let Some(lb) = refined.lower {
        min.lower = min.lower.max(lb.min(min.objective));
    }
    min.iterations += refined.steps;
    let gap_base = dual.unwrap_or(min.lower);
    min.converged = min.objective - gap_base <= opts.tol * (1.0 + gap_base.abs());
    let report = report(min, dual);
    if report.converged {
        Ok(report)
    } else {
        Err(Error::NotConverged(Box::new(report)))
    }
}

/// `sup { |⟨q,h⟩| : |h|_K ≤ 1, ‖M⁻¹Λh‖₂ ≤ σ }`.
///
/// For boxes this is the minimum of [`det1_objective`], certified by the
/// recovered primal bound to `tol`.
pub fn null_error(problem: &Problem, opts: &SolverOptions) -> Result<f64> {
    problem.check_regular()?;
    match problem.set.box_radius() {
        None => two_ellipsoid_null_error(problem),
        Some(_) => design_linear(problem, opts).map(|r| r.objective),
    }
}

/// Quadratic form of the model-set gauge: `AᵀA`, or `P_{V⊥}/ε²`.
fn gauge_quadratic(set: &ModelSet) -> Option<DMatrix<f64>> {
    if let Some(a) = set.ellipsoid_matrix() {
        return Some(a.tr_mul(a));
    }
    let (v, eps) = set.subspace()?;
    let n = v.nrows();
    let perp = DMatrix::identity(n, n) - v * v.transpose();
    Some(perp / (eps * eps))
}

fn two_ellipsoid_null_error(problem: &Problem) -> Result<f64> {
    let g1 = gauge_quadratic(&problem.set).ok_or_else(|| {
        Error::Unsupported("the two-ellipsoid route needs an ellipsoid or approximability set".into())
    })?;
    let q = &problem.q;
    if q.norm() == 0.0 {
        return Ok(0.0);
    }
    let (sigma, mix_t) = problem.noise_ball();
    let whitened = match &mix_t {
        Some(mt) => {
            let m = mt.transpose();
            linalg::checked_inverse(&m, "noise.mixing")? * problem.lambda()
        }
        None => problem.lambda().clone(),
    };

    if sigma == 0.0 {
        // E = {0}: restrict to ker Λ
        let z = linalg::null_space(&whitened, 1e-12);
        if z.ncols() == 0 {
            return Ok(0.0);
        }
        let reduced = z.tr_mul(&g1) * &z;
        let qz = z.tr_mul(q);
        return Ok(linalg::pseudo_inverse_quadratic(&reduced, &qz).sqrt());
    }

    let g2 = whitened.tr_mul(&whitened) / (sigma * sigma);
    let s1 = g1.norm();
    let s2 = g2.norm();
    if s2 == 0.0 {
        return Ok(linalg::pseudo_inverse_quadratic(&g1, q).sqrt());
    }
    // Balance the two forms before blending. With u ∈ [0,1],
    // u·G₁/s₁ + (1−u)·G₂/s₂ = k·(t·G₁ + (1−t)·G₂) for k = u/s₁ + (1−u)/s₂,
    // so k·qᵀ(blend)⁻¹q reproduces the unscaled value at the matching t.
    let n1 = &g1 / s1;
    let n2 = &g2 / s2;
    let phi = |u: f64| -> f64 {
        let blend = &n1 * u + &n2 * (1.0 - u);
        let k = u / s1 + (1.0 - u) / s2;
        linalg::inverse_quadratic(&blend, q).map_or(f64::INFINITY, |v| k * v)
    };

    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = phi(x1);
    let mut f2 = phi(x2);
    for _ in 0..GOLDEN_MAX_ITER {
        if hi - lo <= GOLDEN_T_TOL {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = phi(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = phi(x2);
        }
    }
    let interior = f1.min(f2).min(phi(0.5 * (lo + hi)));
    let at_one = linalg::pseudo_inverse_quadratic(&g1, q);
    let at_zero = linalg::pseudo_inverse_quadratic(&g2, q);
    let best = interior.min(at_one).min(at_zero);
    if !best.is_finite() {
        return Err(Error::Irregular { witness: Vec::new() });
    }
    Ok(best.sqrt())
}

/// Closed-form best linear estimator in the scalar setting, returning
/// `(a*, value)` with value `|b|τσ/√(σ² + c²τ²)`.
pub fn oned_optimal_linear(b: f64, c: f64, tau: f64, sigma: f64) -> Result<(f64, f64)> {
    let setting = SimplestSetting::new(b, c, tau, sigma)?;
    Ok(oned::optimal_linear(&setting))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball_problem(sigma: f64) -> Problem {
        Problem::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![1.0, 0.0]),
            ModelSet::ellipsoid(DMatrix::identity(2, 2)).unwrap(),
            NoiseModel::GaussianIso { sigma, m: 2 },
        )
        .unwrap()
    }

    fn scalar(b: f64, c: f64, tau: f64, sigma: f64) -> Problem {
        Problem::scalar(
            &SimplestSetting::new(b, c, tau, sigma).unwrap(),
            NoiseModel::GaussianIso { sigma, m: 1 },
        )
        .unwrap()
    }

    #[test]
    fn objective_scalar_form() {
        let p = scalar(2.0, 1.5, 0.7, 0.3);
        for a in [-1.0, 0.0, 0.4, 2.0] {
            let v = det1_objective(&p, &DVector::from_element(1, a)).unwrap().to_f64();
            let expected = (2.0 - a * 1.5_f64).abs() * 0.7 + 0.3 * a.abs();
            assert!((v - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn objective_examples() {
        let p = ball_problem(0.5);
        let zero = det1_objective(&p, &DVector::zeros(2)).unwrap();
        assert_eq!(zero, ExtendedReal::Finite(1.0));
        let e1 = det1_objective(&p, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(e1, ExtendedReal::Finite(0.5));
        assert!(det1_objective(&p, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn objective_is_infinite_off_the_feasible_set() {
        let v = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let p = Problem::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![1.0, 1.0]),
            ModelSet::approximability(v, 1.0).unwrap(),
            NoiseModel::GaussianIso { sigma: 1.0, m: 2 },
        )
        .unwrap();
        assert_eq!(det1_objective(&p, &DVector::zeros(2)).unwrap(), ExtendedReal::Infinite);
        let fine = det1_objective(&p, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(fine, ExtendedReal::Finite(1.0 + 1.0));
    }

    #[test]
    fn design_ball_example() {
        let r = design_linear(&ball_problem(0.5), &SolverOptions::default()).unwrap();
        assert!((r.objective - 0.5).abs() < 1e-6);
        assert!((r.null_error - 0.5).abs() < 1e-12);
        assert!((r.a_star.a[0] - 1.0).abs() < 1e-3 && r.a_star.a[1].abs() < 1e-3);
    }

    #[test]
    fn design_scalar_unit_example() {
        // J(a) = |1 − a| + |a| is flat at 1 on [0, 1]
        let r = design_linear(&scalar(1.0, 1.0, 1.0, 1.0), &SolverOptions::default()).unwrap();
        assert!((r.objective - 1.0).abs() < 1e-6);
        assert!((r.null_error - 1.0).abs() < 1e-6);
        assert!(r.a_star.a[0] >= -1e-9 && r.a_star.a[0] <= 1.0 + 1e-9);
    }

    #[test]
    fn design_zero_functional() {
        let p = ball_problem(0.5).with_q(DVector::zeros(2)).unwrap();
        let r = design_linear(&p, &SolverOptions::default()).unwrap();
        assert_eq!(r.a_star.a, vec![0.0, 0.0]);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn null_error_ball_examples() {
        let opts = SolverOptions::default();
        assert!((null_error(&ball_problem(0.5), &opts).unwrap() - 0.5).abs() < 1e-12);
        assert!((null_error(&ball_problem(2.0), &opts).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_null_error_restricts_to_kernel() {
        // Λ = e₁ᵀ, σ = 0: h ∈ ker Λ = span{e₂}, so N = sup |⟨q,h⟩| over the unit segment
        let p = Problem::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_vec(vec![3.0, 4.0]),
            ModelSet::ellipsoid(DMatrix::identity(2, 2)).unwrap(),
            NoiseModel::GaussianIso { sigma: 0.0, m: 1 },
        )
        .unwrap();
        assert!((null_error(&p, &SolverOptions::default()).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn irregular_instances_rejected() {
        let v = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let p = Problem::new(
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DVector::from_vec(vec![1.0, 0.0]),
            ModelSet::approximability(v, 1.0).unwrap(),
            NoiseModel::GaussianIso { sigma: 1.0, m: 1 },
        )
        .unwrap();
        assert!(matches!(
            design_linear(&p, &SolverOptions::default()),
            Err(Error::Irregular { .. })
        ));
        assert!(matches!(
            null_error(&p, &SolverOptions::default()),
            Err(Error::Irregular { .. })
        ));
    }

    #[test]
    fn oned_optimal_linear_examples() {
        let (a, v) = oned_optimal_linear(1.0, 1.0, 1.0, 1.0).unwrap();
        assert!((a - 0.5).abs() < 1e-12 && (v - 0.5_f64.sqrt()).abs() < 1e-12);
        assert_eq!(oned_optimal_linear(1.0, 1.0, 1.0, 0.0).unwrap(), (1.0, 0.0));
        assert!(oned_optimal_linear(1.0, 0.0, 1.0, 1.0).is_err());
    }
}
