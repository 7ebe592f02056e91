//! Symmetric normalized dictionaries and the weak greedy selection step.
//!
//! Only one of each pair `{g, -g}` is stored; the sign is decided at
//! selection time. Membership in `A_1(D)` is certified constructively through
//! explicit convex weights ([`convex_hull_element`]), never decided.

use crate::space::{self, DualVector, SpaceError, SpaceSpec, Vector};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DictionaryError {
    #[error("dictionary is empty")]
    Empty,
    #[error("element {index} has norm {norm}, expected 1")]
    NotNormalized { index: usize, norm: f64 },
    #[error("weakness parameter t = {0} is outside [0, 1]")]
    InvalidWeakness(f64),
    #[error("weight {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weights sum to {0}, which exceeds 1")]
    MassExceeded(f64),
    #[error("{weights} weights supplied for a dictionary of {elements} elements")]
    TooManyWeights { weights: usize, elements: usize },
    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("constructed dictionary does not span the space (rank {rank} < {dim})")]
    RankDeficient { rank: usize, dim: usize },
    #[error("malformed dictionary text at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Which of `g` or `-g` was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }
}

/// A signed dictionary element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    pub sign: Sign,
}

impl Selection {
    pub fn plus(index: usize) -> Self {
        Self {
            index,
            sign: Sign::Plus,
        }
    }

    pub fn minus(index: usize) -> Self {
        Self {
            index,
            sign: Sign::Minus,
        }
    }
}

/// How to choose among several elements passing the weak threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Lowest index whose value reaches `t * sup`.
    #[default]
    LowestIndex,
    /// Element of largest value; lowest index among equal values.
    Greedy,
}

/// Result of [`weak_argmax`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakChoice {
    pub selection: Selection,
    /// `F(±g)` for the chosen signed element.
    pub value: f64,
    /// `sup_{g in D} F(g) = max_j |F(g_j)|` over the symmetrized dictionary.
    pub sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dictionary {
    /// `{±e_j}` on all coordinates.
    StandardBasis { dim: usize },
    /// Explicit unit-norm elements.
    ExplicitList { dim: usize, elements: Vec<Vector> },
}

impl Dictionary {
    pub fn standard_basis(dim: usize) -> Self {
        Dictionary::StandardBasis { dim }
    }

    /// Wraps `elements`, checking that each has norm one in `space`.
    pub fn explicit(elements: Vec<Vector>, space: &SpaceSpec) -> Result<Self, DictionaryError> {
        let dict = Dictionary::ExplicitList {
            dim: space.dim(),
            elements,
        };
        dict.validate(space)?;
        Ok(dict)
    }

    pub fn validate(&self, space: &SpaceSpec) -> Result<(), DictionaryError> {
        match self {
            Dictionary::StandardBasis { dim } => {
                if *dim == 0 {
                    return Err(DictionaryError::Empty);
                }
                if *dim != space.dim() {
                    return Err(SpaceError::DimensionMismatch {
                        expected: space.dim(),
                        found: *dim,
                    }
                    .into());
                }
            }
            Dictionary::ExplicitList { elements, .. } => {
                if elements.is_empty() {
                    return Err(DictionaryError::Empty);
                }
                for (index, g) in elements.iter().enumerate() {
                    let norm = space::norm(g, space)?;
                    if (norm - 1.0).abs() > 1e-12 {
                        return Err(DictionaryError::NotNormalized { index, norm });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Dictionary::StandardBasis { dim } | Dictionary::ExplicitList { dim, .. } => *dim,
        }
    }

    /// Number of stored elements (half the symmetric dictionary).
    pub fn len(&self) -> usize {
        match self {
            Dictionary::StandardBasis { dim } => *dim,
            Dictionary::ExplicitList { elements, .. } => elements.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn element(&self, index: usize) -> Vector {
        match self {
            Dictionary::StandardBasis { dim } => Vector::unit(*dim, index),
            Dictionary::ExplicitList { elements, .. } => elements[index].clone(),
        }
    }

    pub fn signed_element(&self, selection: Selection) -> Vector {
        self.element(selection.index).scaled(selection.sign.factor())
    }

    /// `F(g_j)` for every stored element.
    pub fn evaluate(&self, f: &DualVector) -> Result<Vec<f64>, DictionaryError> {
        match self {
            Dictionary::StandardBasis { dim } => {
                if f.dim() != *dim {
                    return Err(SpaceError::DimensionMismatch {
                        expected: *dim,
                        found: f.dim(),
                    }
                    .into());
                }
                Ok(f.coords().to_vec())
            }
            Dictionary::ExplicitList { elements, .. } => elements
                .iter()
                .map(|g| space::apply(f, g).map_err(DictionaryError::from))
                .collect(),
        }
    }

    /// Plain-text form: a kind line, a dim line, then one element per row.
    /// Coordinates use the shortest round-trip decimal representation.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        match self {
            Dictionary::StandardBasis { dim } => {
                let _ = writeln!(out, "kind standard_basis");
                let _ = writeln!(out, "dim {dim}");
            }
            Dictionary::ExplicitList { dim, elements } => {
                let _ = writeln!(out, "kind explicit_list");
                let _ = writeln!(out, "dim {dim}");
                for g in elements {
                    let row: Vec<String> = g.coords().iter().map(|c| format!("{c:?}")).collect();
                    let _ = writeln!(out, "{}", row.join(" "));
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, DictionaryError> {
        let parse_err = |line: usize, reason: &str| DictionaryError::Parse {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (ln, kind_line) = lines.next().ok_or_else(|| parse_err(1, "missing kind line"))?;
        let kind = kind_line
            .strip_prefix("kind ")
            .ok_or_else(|| parse_err(ln, "expected `kind <tag>`"))?
            .trim();
        let (ln, dim_line) = lines.next().ok_or_else(|| parse_err(ln + 1, "missing dim line"))?;
        let dim: usize = dim_line
            .strip_prefix("dim ")
            .and_then(|d| d.trim().parse().ok())
            .ok_or_else(|| parse_err(ln, "expected `dim <n>`"))?;
        match kind {
            "standard_basis" => {
                if let Some((ln, _)) = lines.next() {
                    return Err(parse_err(ln, "standard_basis takes no element rows"));
                }
                Ok(Dictionary::StandardBasis { dim })
            }
            "explicit_list" => {
                let mut elements = Vec::new();
                for (ln, row) in lines {
                    let coords = row
                        .split_whitespace()
                        .map(|t| t.parse::<f64>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|e| parse_err(ln, &e.to_string()))?;
                    if coords.len() != dim {
                        return Err(parse_err(ln, "row length differs from dim"));
                    }
                    elements.push(Vector::new(coords)?);
                }
                Ok(Dictionary::ExplicitList { dim, elements })
            }
            other => Err(parse_err(ln, &format!("unknown kind `{other}`"))),
        }
    }
}

/// Weak greedy selection: returns a signed element `g` with
/// `F(g) >= t * sup_{g' in D} F(g')`, the sup running over `D ∪ -D`.
pub fn weak_argmax(
    f: &DualVector,
    dict: &Dictionary,
    t: f64,
    tie_break: TieBreak,
) -> Result<WeakChoice, DictionaryError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(DictionaryError::InvalidWeakness(t));
    }
    if dict.is_empty() {
        return Err(DictionaryError::Empty);
    }
    let values = dict.evaluate(f)?;
    let sup = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let threshold = t * sup;
    let index = match tie_break {
        TieBreak::LowestIndex => values
            .iter()
            .position(|v| v.abs() >= threshold)
            .expect("the maximizer always passes"),
        TieBreak::Greedy => values
            .iter()
            .position(|v| v.abs() == sup)
            .expect("sup is attained on a finite dictionary"),
    };
    let value = values[index];
    let sign = if value >= 0.0 { Sign::Plus } else { Sign::Minus };
    Ok(WeakChoice {
        selection: Selection { index, sign },
        value: value.abs(),
        sup,
    })
}

/// `sum_j w_j g_j` for nonnegative weights of total mass at most one; the
/// result is a certified member of `A_1(D)`.
pub fn convex_hull_element(weights: &[f64], dict: &Dictionary) -> Result<Vector, DictionaryError> {
    if weights.len() > dict.len() {
        return Err(DictionaryError::TooManyWeights {
            weights: weights.len(),
            elements: dict.len(),
        });
    }
    let mut mass = 0.0;
    for (index, &w) in weights.iter().enumerate() {
        if !w.is_finite() {
            return Err(SpaceError::NonFinite(index).into());
        }
        if w < 0.0 {
            return Err(DictionaryError::NegativeWeight { index, value: w });
        }
        mass += w;
    }
    if mass > 1.0 + 1e-12 {
        return Err(DictionaryError::MassExceeded(mass));
    }
    let mut out = vec![0.0; dict.dim()];
    for (index, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        match dict {
            Dictionary::StandardBasis { .. } => out[index] += w,
            Dictionary::ExplicitList { elements, .. } => {
                for (o, g) in out.iter_mut().zip(elements[index].coords()) {
                    *o += w * g;
                }
            }
        }
    }
    Ok(Vector::new(out)?)
}

/// The counterexample dictionary in the nonsmooth space `l_1^dim`.
#[derive(Debug, Clone)]
pub struct NonsmoothConstruction {
    pub space: SpaceSpec,
    /// `[g_0, g_1, e'_j for j in kept]`.
    pub dictionary: Dictionary,
    /// Unit element with two distinct norming functionals.
    pub f: Vector,
    /// Norming functional used by the stuck realization.
    pub norming: DualVector,
    /// A second norming functional of `f`.
    pub alternative: DualVector,
    /// Separating element with `norming(g) > alternative(g)`.
    pub g: Vector,
    pub alpha0: f64,
    pub alpha1: f64,
    /// `(j, beta_j)` for every coordinate kept in the construction.
    pub betas: Vec<(usize, f64)>,
    /// Coordinates `j` with `e_j - (F(e_j)/F(g_0)) g_0 = 0`.
    pub excluded: Vec<usize>,
    /// `f = c_0 g_0 + c_1 g_1`.
    pub f_in_span: [f64; 2],
}

impl NonsmoothConstruction {
    pub fn g0(&self) -> Vector {
        self.dictionary.element(0)
    }

    pub fn g1(&self) -> Vector {
        self.dictionary.element(1)
    }
}

/// Builds `D = {±g_0, ±g_1} ∪ {±e'_j}` around `f = e_0` in `l_1^dim`, with
/// norming functionals `F = (1, 1, ..., 1)` and `F' = (1, -1, ..., -1)` and
/// separating element `g = e_1`.
pub fn build_nonsmooth_dictionary(dim: usize) -> Result<NonsmoothConstruction, DictionaryError> {
    if dim < 2 {
        return Err(DictionaryError::DimensionTooSmall(dim));
    }
    let space = SpaceSpec::l1(dim)?;
    let f = Vector::unit(dim, 0);
    let big_f = DualVector::new(vec![1.0; dim])?;
    let mut alt = vec![-1.0; dim];
    alt[0] = 1.0;
    let big_f_alt = DualVector::new(alt)?;
    let g = Vector::unit(dim, 1);

    let fg = space::apply(&big_f, &g)?;
    let fg_alt = space::apply(&big_f_alt, &g)?;
    let mid = 0.5 * (fg + fg_alt);

    let raw0 = g.axpy(-mid, &f);
    let alpha0 = 1.0 / space::norm(&raw0, &space)?;
    let g0 = raw0.scaled(alpha0);
    let raw1 = g.axpy(-fg, &f);
    let alpha1 = 1.0 / space::norm(&raw1, &space)?;
    let g1 = raw1.scaled(alpha1);

    let f_g0 = space::apply(&big_f, &g0)?;
    let mut elements = vec![g0.clone(), g1.clone()];
    let mut betas = Vec::new();
    let mut excluded = Vec::new();
    for j in 0..dim {
        let ej = Vector::unit(dim, j);
        let raw = ej.axpy(-space::apply(&big_f, &ej)? / f_g0, &g0);
        if raw.max_abs() <= 1e-14 {
            excluded.push(j);
            continue;
        }
        let beta = 1.0 / space::norm(&raw, &space)?;
        betas.push((j, beta));
        elements.push(raw.scaled(beta));
    }

    let rank = euclidean_rank(&elements, 1e-10);
    if rank < dim {
        return Err(DictionaryError::RankDeficient { rank, dim });
    }

    // g_0 / alpha_0 - g_1 / alpha_1 = (F(g) - mid) f
    let scale = fg - mid;
    let f_in_span = [1.0 / (alpha0 * scale), -1.0 / (alpha1 * scale)];

    Ok(NonsmoothConstruction {
        space,
        dictionary: Dictionary::ExplicitList { dim, elements },
        f,
        norming: big_f,
        alternative: big_f_alt,
        g,
        alpha0,
        alpha1,
        betas,
        excluded,
        f_in_span,
    })
}

/// Numerical rank by modified Gram-Schmidt with relative drop tolerance.
pub(crate) fn euclidean_rank(vectors: &[Vector], rel_tol: f64) -> usize {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        if let Some(q) = orthogonal_remainder(&basis, v.coords(), rel_tol) {
            basis.push(q);
        }
    }
    basis.len()
}

/// Normalized component of `v` orthogonal to the orthonormal `basis`, or
/// `None` when `v` lies in their span up to `rel_tol` relative residual.
pub(crate) fn orthogonal_remainder(basis: &[Vec<f64>], v: &[f64], rel_tol: f64) -> Option<Vec<f64>> {
    let scale = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return None;
    }
    let mut w = v.to_vec();
    // two passes of Gram-Schmidt keep the remainder orthogonal to working precision
    for _ in 0..2 {
        for q in basis {
            let c: f64 = q.iter().zip(&w).map(|(a, b)| a * b).sum();
            w.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
        }
    }
    let rest = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if rest <= rel_tol * scale {
        return None;
    }
    w.iter_mut().for_each(|x| *x /= rest);
    Some(w)
}
