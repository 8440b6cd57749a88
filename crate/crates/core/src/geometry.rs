//! Symmetric convex closed model sets in ℝⁿ.
//!
//! Every set is handled through two functions: its Minkowski gauge
//! `|f|_K = inf { t > 0 : f ∈ tK }` and its (symmetric) support value
//! `sup_{f ∈ K} |⟨c, f⟩|`. Unbounded sets have support values equal to
//! [`ExtendedReal::Infinite`] along some directions.

use std::fmt;
use std::ops::Add;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance on `‖VᵀV − I‖_max` for approximability subspaces.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Relative tolerance below which `c` is treated as orthogonal to `range V`.
pub const ORTHOGONALITY_RTOL: f64 = 1e-9;

/// Relative singular-value cutoff used to decide `ker Λ ∩ range V = {0}`.
const REGULARITY_RTOL: f64 = 1e-10;

/// A nonnegative real or `+∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    Infinite,
}

impl ExtendedReal {
    pub fn is_finite(self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(v),
            ExtendedReal::Infinite => None,
        }
    }

    /// Lossy view as `f64`, mapping `Infinite` to `f64::INFINITY`.
    pub fn to_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }

    /// Multiplication by a nonnegative scalar, with `0 · ∞ = 0`.
    pub fn scale(self, s: f64) -> Self {
        match self {
            ExtendedReal::Finite(v) => ExtendedReal::Finite(v * s),
            ExtendedReal::Infinite if s == 0.0 => ExtendedReal::Finite(0.0),
            ExtendedReal::Infinite => ExtendedReal::Infinite,
        }
    }
}

impl Add for ExtendedReal {
    type Output = ExtendedReal;

    fn add(self, rhs: Self) -> Self {
        match (self, rhs) {
            (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => ExtendedReal::Finite(a + b),
            _ => ExtendedReal::Infinite,
        }
    }
}

impl Add<f64> for ExtendedReal {
    type Output = ExtendedReal;

    fn add(self, rhs: f64) -> Self {
        self + ExtendedReal::Finite(rhs)
    }
}

impl PartialOrd for ExtendedReal {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.to_f64().partial_cmp(&other.to_f64())
    }
}

impl fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedReal::Finite(v) => write!(f, "{v}"),
            ExtendedReal::Infinite => write!(f, "inf"),
        }
    }
}

// JSON has no infinity, so `+∞` travels as the string "inf".
impl Serialize for ExtendedReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtendedReal::Finite(v) => s.serialize_f64(*v),
            ExtendedReal::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for ExtendedReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(ExtendedReal::Finite(v)),
            Repr::Str(s) if s == "inf" => Ok(ExtendedReal::Infinite),
            Repr::Str(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
enum Shape {
    /// `{f : ‖Af‖₂ ≤ 1}`; keeps `A⁻ᵀ` for support values.
    Ellipsoid {
        a: DMatrix<f64>,
        a_inv_t: DMatrix<f64>,
    },
    /// `[−τ, τ]ⁿ`.
    Box { dim: usize, tau: f64 },
    /// `{f : dist₂(f, range V) ≤ ε}`; keeps the projector `VVᵀ`.
    Approximability {
        v: DMatrix<f64>,
        projector: DMatrix<f64>,
        epsilon: f64,
    },
}

/// A symmetric, convex, closed subset of ℝⁿ.
#[derive(Debug, Clone)]
pub struct ModelSet {
    shape: Shape,
}

/// Outcome of [`ModelSet::regularity`].
#[derive(Debug, Clone, PartialEq)]
pub struct Regularity {
    pub regular: bool,
    /// Nonzero `h` with `|h|_K = 0` and `Λh = 0` when irregular.
    pub witness: Option<DVector<f64>>,
}

impl ModelSet {
    pub fn ellipsoid(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::dims("model_set.a", a.nrows().max(1), a.ncols()));
        }
        let a_inv = linalg::checked_inverse(&a, "model_set.a")?;
        Ok(ModelSet {
            shape: Shape::Ellipsoid {
                a_inv_t: a_inv.transpose(),
                a,
            },
        })
    }

    /// The isotropic box `[−τ, τ]ⁿ`.
    pub fn cube(dim: usize, tau: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("n", "must be positive"));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid("model_set.tau", "must be positive and finite"));
        }
        Ok(ModelSet {
            shape: Shape::Box { dim, tau },
        })
    }

    pub fn approximability(v: DMatrix<f64>, epsilon: f64) -> Result<Self> {
        if v.nrows() == 0 {
            return Err(Error::invalid("model_set.v", "needs at least one row"));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(
                "model_set.epsilon",
                "must be positive and finite",
            ));
        }
        if v.ncols() > v.nrows() {
            return Err(Error::invalid(
                "model_set.v",
                "more columns than rows cannot be orthonormal",
            ));
        }
        let gram = v.transpose() * &v;
        let deviation = (gram - DMatrix::<f64>::identity(v.ncols(), v.ncols())).amax();
        if deviation > ORTHONORMAL_TOL {
            return Err(Error::invalid(
                "model_set.v",
                format!("columns are not orthonormal (deviation {deviation:e})"),
            ));
        }
        Ok(ModelSet {
            shape: Shape::Approximability {
                projector: &v * v.transpose(),
                v,
                epsilon,
            },
        })
    }

    pub fn dim(&self) -> usize {
        match &self.shape {
            Shape::Ellipsoid { a, .. } => a.ncols(),
            Shape::Box { dim, .. } => *dim,
            Shape::Approximability { v, .. } => v.nrows(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.shape {
            Shape::Ellipsoid { .. } => "ellipsoid",
            Shape::Box { .. } => "box",
            Shape::Approximability { .. } => "approximability",
        }
    }

    pub fn is_bounded(&self) -> bool {
        match &self.shape {
            Shape::Approximability { v, .. } => v.ncols() == 0,
            _ => true,
        }
    }

    pub fn ellipsoid_matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.shape {
            Shape::Ellipsoid { a, .. } => Some(a),
            _ => None,
        }
    }

    pub fn box_radius(&self) -> Option<f64> {
        match self.shape {
            Shape::Box { tau, .. } => Some(tau),
            _ => None,
        }
    }

    /// `(V, ε)` for approximability sets.
    pub fn subspace(&self) -> Option<(&DMatrix<f64>, f64)> {
        match &self.shape {
            Shape::Approximability { v, epsilon, .. } => Some((v, *epsilon)),
            _ => None,
        }
    }

    fn check_dim(&self, x: &DVector<f64>, field: &str) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dims(field, self.dim(), x.len()));
        }
        Ok(())
    }

    /// Minkowski gauge `|f|_K`.
    pub fn gauge(&self, f: &DVector<f64>) -> Result<ExtendedReal> {
        self.check_dim(f, "f")?;
        Ok(ExtendedReal::Finite(self.gauge_unchecked(f)))
    }

    pub(crate) fn gauge_unchecked(&self, f: &DVector<f64>) -> f64 {
        match &self.shape {
            Shape::Ellipsoid { a, .. } => (a * f).norm(),
            Shape::Box { tau, .. } => f.amax() / tau,
            Shape::Approximability {
                projector, epsilon, ..
            } => (f - projector * f).norm() / epsilon,
        }
    }

    /// `sup_{f ∈ K} |⟨c, f⟩|`.
    pub fn support_value(&self, c: &DVector<f64>) -> Result<ExtendedReal> {
        self.check_dim(c, "c")?;
        Ok(self.support_unchecked(c))
    }

    pub(crate) fn support_unchecked(&self, c: &DVector<f64>) -> ExtendedReal {
        self.support_at_scale(c, 0.0)
    }

    /// Support value of a vector computed as a difference of terms of size
    /// about `scale`; the orthogonality test for approximability sets is
    /// then relative to `max(‖c‖, scale)` rather than `‖c‖` alone.
    pub(crate) fn support_at_scale(&self, c: &DVector<f64>, scale: f64) -> ExtendedReal {
        match &self.shape {
            Shape::Ellipsoid { a_inv_t, .. } => ExtendedReal::Finite((a_inv_t * c).norm()),
            Shape::Box { tau, .. } => ExtendedReal::Finite(tau * c.lp_norm(1)),
            Shape::Approximability {
                projector, epsilon, ..
            } => {
                let along = (projector * c).norm();
                let norm = c.norm();
                if along <= ORTHOGONALITY_RTOL * norm || norm == 0.0 {
                    ExtendedReal::Finite(epsilon * norm)
                } else if along <= ORTHOGONALITY_RTOL * scale {
                    ExtendedReal::Finite(epsilon * (c - projector * c).norm())
                } else {
                    ExtendedReal::Infinite
                }
            }
        }
    }

    /// A point `f* ∈ K` with `⟨c, f*⟩ = sup_{f ∈ K} |⟨c, f⟩|`, or `None`
    /// when the supremum is infinite. For approximability sets the
    /// component of `c` along `range V` is discarded first.
    pub fn support_point(&self, c: &DVector<f64>) -> Option<DVector<f64>> {
        match &self.shape {
            Shape::Ellipsoid { a, a_inv_t } => {
                let w = a_inv_t * c;
                let norm = w.norm();
                if norm == 0.0 {
                    return Some(DVector::zeros(c.len()));
                }
                // f* = A⁻¹ A⁻ᵀ c / ‖A⁻ᵀ c‖
                let f = a.clone().lu().solve(&(w / norm))?;
                Some(f)
            }
            Shape::Box { tau, .. } => Some(c.map(|x| {
                if x > 0.0 {
                    *tau
                } else if x < 0.0 {
                    -tau
                } else {
                    0.0
                }
            })),
            Shape::Approximability {
                projector, epsilon, ..
            } => {
                let residual = c - projector * c;
                let norm = residual.norm();
                if norm == 0.0 {
                    Some(DVector::zeros(c.len()))
                } else {
                    Some(residual * (*epsilon / norm))
                }
            }
        }
    }

    /// Whether `max{|h|_K, ‖Λh‖₂} > 0` for every nonzero `h`.
    pub fn regularity(&self, lambda: &DMatrix<f64>) -> Result<Regularity> {
        if lambda.ncols() != self.dim() {
            return Err(Error::dims("lambda", self.dim(), lambda.ncols()));
        }
        let Shape::Approximability { v, .. } = &self.shape else {
            return Ok(Regularity {
                regular: true,
                witness: None,
            });
        };
        if v.ncols() == 0 {
            return Ok(Regularity {
                regular: true,
                witness: None,
            });
        }
        let lv = lambda * v;
        // relative to ‖Λ‖ so that rescaling the observations is harmless
        let scale = lambda.norm().max(f64::MIN_POSITIVE);
        let mut padded = DMatrix::zeros(lv.nrows().max(lv.ncols()), lv.ncols());
        padded.rows_mut(0, lv.nrows()).copy_from(&lv);
        let svd = padded.svd(false, true);
        let v_t = svd.v_t.expect("requested right singular vectors");
        let (idx, smin) = svd
            .singular_values
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, s)| if s < acc.1 { (i, s) } else { acc });
        if smin > REGULARITY_RTOL * scale {
            return Ok(Regularity {
                regular: true,
                witness: None,
            });
        }
        let coeffs = v_t.row(idx).transpose();
        Ok(Regularity {
            regular: false,
            witness: Some(v * coeffs),
        })
    }
}
