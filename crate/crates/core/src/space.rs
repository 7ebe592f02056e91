//! Geometry of the finite-dimensional sequence spaces `l_r^dim`.
//!
//! Elements are plain coordinate vectors. The norm exponent `r` fixes the
//! power type of the modulus of smoothness, `rho(u) <= gamma * u^q` with
//! `q = min(r, 2)`, and the dual exponent `p = q / (q - 1)` that drives every
//! rate and convergence condition of the greedy iteration.
//!
//! `l_1` is admitted only through [`SpaceSpec::l1`] as the model nonsmooth
//! space; it has no power type above one and the smoothness helpers reject it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::ops::{Add, Index, Mul, Neg, Sub};

/// Errors raised by space-level operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpaceError {
    #[error("norm exponent r = {0} is outside (1, inf)")]
    InvalidExponent(f64),
    #[error("dimension must be positive")]
    InvalidDimension,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operation is undefined for the zero vector")]
    ZeroVector,
    #[error("non-finite coordinate at index {0}")]
    NonFinite(usize),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("operation requires a space with nontrivial power type (r > 1)")]
    Nonsmooth,
}

/// The ambient space `l_r` truncated to `dim` coordinates together with its
/// smoothness constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceSpec {
    r: f64,
    q: f64,
    gamma: f64,
    p: f64,
    dim: usize,
}

impl SpaceSpec {
    /// Builds `l_r^dim` for `1 < r < inf`.
    pub fn new(r: f64, dim: usize) -> Result<Self, SpaceError> {
        if !r.is_finite() || r <= 1.0 {
            return Err(SpaceError::InvalidExponent(r));
        }
        if dim == 0 {
            return Err(SpaceError::InvalidDimension);
        }
        let q = r.min(2.0);
        let gamma = if r <= 2.0 { 1.0 / r } else { (r - 1.0) / 2.0 };
        let p = q / (q - 1.0);
        Ok(Self { r, q, gamma, p, dim })
    }

    /// The nonsmooth model space `l_1^dim`. Power type is the trivial
    /// `rho(u) <= u`, so `q = gamma = 1` and `p` is infinite.
    pub fn l1(dim: usize) -> Result<Self, SpaceError> {
        if dim == 0 {
            return Err(SpaceError::InvalidDimension);
        }
        Ok(Self {
            r: 1.0,
            q: 1.0,
            gamma: 1.0,
            p: f64::INFINITY,
            dim,
        })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// Smoothness power `q = min(r, 2)`.
    pub fn q(&self) -> f64 {
        self.q
    }

    /// Smoothness constant: `1/r` for `r <= 2`, `(r-1)/2` for `r >= 2`.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Dual smoothness exponent `q / (q - 1)`.
    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_smooth(&self) -> bool {
        self.r > 1.0
    }

    /// Exponent of the dual sequence space, `r / (r - 1)`.
    pub fn dual_exponent(&self) -> f64 {
        if self.r == 1.0 {
            f64::INFINITY
        } else {
            self.r / (self.r - 1.0)
        }
    }

    fn check_dim(&self, found: usize) -> Result<(), SpaceError> {
        if found != self.dim {
            return Err(SpaceError::DimensionMismatch {
                expected: self.dim,
                found,
            });
        }
        Ok(())
    }

    pub fn require_smooth(&self) -> Result<(), SpaceError> {
        if self.is_smooth() {
            Ok(())
        } else {
            Err(SpaceError::Nonsmooth)
        }
    }
}

macro_rules! coordinate_vector {
    ($name:ident, $what:literal) => {
        #[doc = concat!("Finite coordinate vector representing ", $what, ".")]
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
        pub struct $name(Vec<f64>);

        impl $name {
            /// Wraps coordinates, rejecting NaN and infinities.
            pub fn new(coords: Vec<f64>) -> Result<Self, SpaceError> {
                if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
                    return Err(SpaceError::NonFinite(i));
                }
                Ok(Self(coords))
            }

            pub fn zeros(dim: usize) -> Self {
                Self(vec![0.0; dim])
            }

            /// The `index`-th coordinate unit vector.
            pub fn unit(dim: usize, index: usize) -> Self {
                let mut coords = vec![0.0; dim];
                coords[index] = 1.0;
                Self(coords)
            }

            pub fn coords(&self) -> &[f64] {
                &self.0
            }

            pub fn into_coords(self) -> Vec<f64> {
                self.0
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn is_zero(&self) -> bool {
                self.0.iter().all(|&c| c == 0.0)
            }

            pub fn scaled(&self, factor: f64) -> Self {
                Self(self.0.iter().map(|c| c * factor).collect())
            }

            pub fn max_abs(&self) -> f64 {
                self.0.iter().fold(0.0_f64, |m, c| m.max(c.abs()))
            }

            /// Largest coordinatewise distance to `other`.
            pub fn max_abs_diff(&self, other: &Self) -> f64 {
                self.0
                    .iter()
                    .zip(&other.0)
                    .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
            }
        }

        impl TryFrom<Vec<f64>> for $name {
            type Error = SpaceError;
            fn try_from(coords: Vec<f64>) -> Result<Self, SpaceError> {
                Self::new(coords)
            }
        }

        impl From<$name> for Vec<f64> {
            fn from(v: $name) -> Vec<f64> {
                v.0
            }
        }

        impl Index<usize> for $name {
            type Output = f64;
            fn index(&self, i: usize) -> &f64 {
                &self.0[i]
            }
        }
    };
}

coordinate_vector!(Vector, "an element of the space");
coordinate_vector!(DualVector, "a linear functional on the space");

impl Vector {
    /// `self + factor * other`.
    pub fn axpy(&self, factor: f64, other: &Vector) -> Vector {
        Vector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + factor * b)
                .collect(),
        )
    }

    /// Linear combination `sum_j coeffs[j] * vectors[j]` in dimension `dim`.
    pub fn combination(dim: usize, coeffs: &[f64], vectors: &[Vector]) -> Vector {
        let mut out = vec![0.0; dim];
        for (c, v) in coeffs.iter().zip(vectors) {
            if *c == 0.0 {
                continue;
            }
            for (o, x) in out.iter_mut().zip(&v.0) {
                *o += c * x;
            }
        }
        Vector(out)
    }

    /// Euclidean inner product; used for rank tests, never for the geometry.
    pub fn dot(&self, other: &Vector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

impl<'a> Add<&'a Vector> for &'a Vector {
    type Output = Vector;
    fn add(self, rhs: &Vector) -> Vector {
        self.axpy(1.0, rhs)
    }
}

impl<'a> Sub<&'a Vector> for &'a Vector {
    type Output = Vector;
    fn sub(self, rhs: &Vector) -> Vector {
        self.axpy(-1.0, rhs)
    }
}

impl Neg for &Vector {
    type Output = Vector;
    fn neg(self) -> Vector {
        self.scaled(-1.0)
    }
}

impl Mul<&Vector> for f64 {
    type Output = Vector;
    fn mul(self, rhs: &Vector) -> Vector {
        rhs.scaled(self)
    }
}

/// `l_s` norm with scaling by the largest entry, so large exponents neither
/// overflow nor underflow.
pub(crate) fn lp_norm(coords: &[f64], s: f64) -> f64 {
    let m = coords.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    if m == 0.0 {
        return 0.0;
    }
    if s.is_infinite() {
        return m;
    }
    if s == 1.0 {
        return coords.iter().map(|c| c.abs()).sum();
    }
    if s == 2.0 {
        return m * coords.iter().map(|c| (c / m) * (c / m)).sum::<f64>().sqrt();
    }
    let sum: f64 = coords.iter().map(|c| (c.abs() / m).powf(s)).sum();
    m * sum.powf(1.0 / s)
}

/// `(sum |v_j|^r)^(1/r)`.
pub fn norm(v: &Vector, s: &SpaceSpec) -> Result<f64, SpaceError> {
    s.check_dim(v.dim())?;
    Ok(lp_norm(v.coords(), s.r))
}

/// Norm of a functional in the dual space `l_{r'}`, `1/r + 1/r' = 1`.
pub fn dual_norm(f: &DualVector, s: &SpaceSpec) -> Result<f64, SpaceError> {
    s.check_dim(f.dim())?;
    Ok(lp_norm(f.coords(), s.dual_exponent()))
}

/// The norming functional `F_f` with `||F_f|| = 1` and `F_f(f) = ||f||`.
///
/// Coordinates are `sign(f_j) (|f_j| / ||f||)^(r-1)`; in `l_1` this is
/// `sign(f_j)`, one of the many norming functionals there.
pub fn norming_functional(f: &Vector, s: &SpaceSpec) -> Result<DualVector, SpaceError> {
    s.check_dim(f.dim())?;
    let nf = lp_norm(f.coords(), s.r);
    if nf == 0.0 {
        return Err(SpaceError::ZeroVector);
    }
    let e = s.r - 1.0;
    let coords = f
        .coords()
        .iter()
        .map(|&x| {
            if x == 0.0 {
                0.0
            } else {
                x.signum() * (x.abs() / nf).powf(e)
            }
        })
        .collect();
    Ok(DualVector(coords))
}

/// Evaluates `F(v) = sum F_j v_j`.
pub fn apply(f: &DualVector, v: &Vector) -> Result<f64, SpaceError> {
    if f.dim() != v.dim() {
        return Err(SpaceError::DimensionMismatch {
            expected: f.dim(),
            found: v.dim(),
        });
    }
    Ok(f.coords().iter().zip(v.coords()).map(|(a, b)| a * b).sum())
}

/// Power-type upper bound `gamma * u^q` of the modulus of smoothness.
pub fn smoothness_bound(u: f64, s: &SpaceSpec) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    s.gamma * u.powf(s.q)
}

/// Monte-Carlo lower estimate of
/// `rho(u) = sup_{||x|| = ||y|| = 1} (||x + u y|| + ||x - u y||) / 2 - 1`.
///
/// Directions are Gaussian draws normalized onto the unit sphere of `l_r`,
/// generated by `ChaCha8Rng::seed_from_u64(seed)`.
pub fn empirical_modulus(u: f64, s: &SpaceSpec, samples: usize, seed: u64) -> f64 {
    if u <= 0.0 || samples == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = s.dim;
    let mut x = vec![0.0; dim];
    let mut y = vec![0.0; dim];
    let mut plus = vec![0.0; dim];
    let mut minus = vec![0.0; dim];
    let mut best = 0.0_f64;
    for _ in 0..samples {
        sample_unit(&mut rng, &mut x, s.r);
        sample_unit(&mut rng, &mut y, s.r);
        for j in 0..dim {
            plus[j] = x[j] + u * y[j];
            minus[j] = x[j] - u * y[j];
        }
        let value = 0.5 * (lp_norm(&plus, s.r) + lp_norm(&minus, s.r)) - 1.0;
        best = best.max(value);
    }
    best
}

fn sample_unit(rng: &mut ChaCha8Rng, out: &mut [f64], r: f64) {
    loop {
        for c in out.iter_mut() {
            *c = StandardNormal.sample(rng);
        }
        let n = lp_norm(out, r);
        if n > 0.0 {
            out.iter_mut().for_each(|c| *c /= n);
            return;
        }
    }
}

/// Minimizer and minimum of a one-dimensional auxiliary function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Infimum {
    pub argmin: f64,
    pub value: f64,
}

fn check_positive(name: &'static str, value: f64) -> Result<(), SpaceError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(SpaceError::NonPositive { name, value })
    }
}

/// `inf_{x > 0} a x^(q-1) + b / x` in closed form for smoothness power `q`.
pub fn phi_infimum(a: f64, b: f64, q: f64) -> Result<Infimum, SpaceError> {
    check_positive("a", a)?;
    check_positive("b", b)?;
    if !(q > 1.0 && q <= 2.0) {
        return Err(SpaceError::InvalidExponent(q));
    }
    let p = q / (q - 1.0);
    Ok(Infimum {
        argmin: (b / (a * (q - 1.0))).powf(1.0 / q),
        value: p * (q - 1.0).powf(1.0 / q) * a.powf(1.0 / q) * b.powf(1.0 / p),
    })
}

/// `inf_{x >= 0} a x^q - b x` in closed form for smoothness power `q`.
pub fn psi_infimum(a: f64, b: f64, q: f64) -> Result<Infimum, SpaceError> {
    check_positive("a", a)?;
    check_positive("b", b)?;
    if !(q > 1.0 && q <= 2.0) {
        return Err(SpaceError::InvalidExponent(q));
    }
    let p = q / (q - 1.0);
    Ok(Infimum {
        argmin: (b / (a * q)).powf(1.0 / (q - 1.0)),
        value: -(q - 1.0) * q.powf(-p) * a.powf(-p / q) * b.powf(p),
    })
}

/// [`phi_infimum`] with the smoothness power of `s`.
pub fn inf_phi(a: f64, b: f64, s: &SpaceSpec) -> Result<Infimum, SpaceError> {
    s.require_smooth()?;
    phi_infimum(a, b, s.q)
}

/// [`psi_infimum`] with the smoothness power of `s`.
pub fn inf_psi(a: f64, b: f64, s: &SpaceSpec) -> Result<Infimum, SpaceError> {
    s.require_smooth()?;
    psi_infimum(a, b, s.q)
}
