//! Truncated multivariate Taylor ("jet") arithmetic in the four spacetime
//! variables `(t, x1, x2, x3)`.
//!
//! A [`Jet`] of order `K` at a cone point stores every scaled mixed partial
//! `∂^α f / α!` with `|α| <= K` of a scalar field `f`, in a dense
//! graded-lexicographic layout.  Sums, Leibniz products and univariate
//! compositions (Faà di Bruno, resummed as a truncated Taylor series in the
//! nilpotent part) are exact on the stored coefficients, so every derivative
//! extracted from a jet of a closed-form field is exact up to rounding.

use once_cell::sync::Lazy;
use thiserror::Error;

use crate::frame::ConePoint;

/// Number of jet variables: `t` plus three spatial coordinates.
pub const NVARS: usize = 4;

/// Hard cap on the jet order.  The deepest identity check differentiates a
/// commuted field twice, with the commuted order capped at four.
pub const MAX_ORDER: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JetError {
    #[error("point (t={t}, r={r}) lies outside the truncated cone t > |x| + 1")]
    OutsideCone { t: f64, r: f64 },
    #[error("requested order {requested} exceeds limit {limit}")]
    OrderTooHigh { requested: usize, limit: usize },
    #[error("jet operands disagree in base point or order")]
    JetMismatch,
    #[error("singular composition: {0}")]
    SingularComposition(&'static str),
}

/// A 4-variable multi-index `(α0, α1, α2, α3)` with `α0` counting `∂_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MultiIndex(pub [u8; NVARS]);

impl MultiIndex {
    pub const ZERO: MultiIndex = MultiIndex([0; NVARS]);

    pub fn unit(axis: usize) -> Self {
        let mut a = [0u8; NVARS];
        a[axis] = 1;
        MultiIndex(a)
    }

    pub fn order(&self) -> usize {
        self.0.iter().map(|&k| k as usize).sum()
    }

    /// `α!` as a float; exact for all orders stored here.
    pub fn factorial(&self) -> f64 {
        fn fact(n: u8) -> f64 {
            (1..=n as u64).product::<u64>().max(1) as f64
        }
        self.0.iter().map(|&k| fact(k)).product()
    }

    pub fn plus(&self, other: &MultiIndex) -> MultiIndex {
        let mut a = [0u8; NVARS];
        for i in 0..NVARS {
            a[i] = self.0[i] + other.0[i];
        }
        MultiIndex(a)
    }
}

/// A pair of commuting-budget multi-indices: `I` over the four translations
/// `∂_α` and `J` over the three Lorentz boosts `L_a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MultiIndexPair {
    pub i: [u8; 4],
    pub j: [u8; 3],
}

impl MultiIndexPair {
    pub fn new(i: [u8; 4], j: [u8; 3], budget: usize) -> Result<Self, JetError> {
        let pair = MultiIndexPair { i, j };
        if pair.order() > budget {
            return Err(JetError::OrderTooHigh {
                requested: pair.order(),
                limit: budget,
            });
        }
        Ok(pair)
    }

    pub fn order(&self) -> usize {
        self.i.iter().map(|&k| k as usize).sum::<usize>()
            + self.j.iter().map(|&k| k as usize).sum::<usize>()
    }

    pub fn order_i(&self) -> usize {
        self.i.iter().map(|&k| k as usize).sum()
    }

    pub fn order_j(&self) -> usize {
        self.j.iter().map(|&k| k as usize).sum()
    }

    /// All pairs with `|I| + |J| <= budget`.
    pub fn all_up_to(budget: usize) -> Vec<MultiIndexPair> {
        let mut out = Vec::new();
        for i in all_indices_up_to(budget) {
            let rem = budget - i.order();
            for j0 in 0..=rem {
                for j1 in 0..=rem - j0 {
                    for j2 in 0..=rem - j0 - j1 {
                        out.push(MultiIndexPair {
                            i: i.0,
                            j: [j0 as u8, j1 as u8, j2 as u8],
                        });
                    }
                }
            }
        }
        out
    }
}

/// All 4-variable multi-indices of total order `<= k`, graded-lexicographic.
pub fn all_indices_up_to(k: usize) -> Vec<MultiIndex> {
    LAYOUT.indices[..layout_len(k)].to_vec()
}

struct Layout {
    /// Graded-lex list of all multi-indices with |α| <= MAX_ORDER.  Indices of
    /// order <= K occupy a prefix, so one table serves every jet order.
    indices: Vec<MultiIndex>,
    /// Position lookup, -1 for |α| > MAX_ORDER.
    rank: Vec<i32>,
}

fn rank_slot(a: &MultiIndex) -> usize {
    let m = MAX_ORDER + 1;
    ((a.0[0] as usize * m + a.0[1] as usize) * m + a.0[2] as usize) * m + a.0[3] as usize
}

static LAYOUT: Lazy<Layout> = Lazy::new(|| {
    let mut indices = Vec::new();
    for total in 0..=MAX_ORDER {
        let t = total as u8;
        for a0 in (0..=t).rev() {
            for a1 in (0..=t - a0).rev() {
                for a2 in (0..=t - a0 - a1).rev() {
                    let a3 = t - a0 - a1 - a2;
                    indices.push(MultiIndex([a0, a1, a2, a3]));
                }
            }
        }
    }
    let m = MAX_ORDER + 1;
    let mut rank = vec![-1i32; m * m * m * m];
    for (pos, idx) in indices.iter().enumerate() {
        rank[rank_slot(idx)] = pos as i32;
    }
    Layout { indices, rank }
});

/// Number of coefficients stored at order `k`: C(k + 4, 4).
pub fn layout_len(k: usize) -> usize {
    let mut n = 1usize;
    for d in 1..=4 {
        n = n * (k + d) / d;
    }
    n
}

fn position(a: &MultiIndex) -> Option<usize> {
    if a.order() > MAX_ORDER {
        return None;
    }
    let r = LAYOUT.rank[rank_slot(a)];
    (r >= 0).then_some(r as usize)
}

/// What [`make_jet`] seeds a jet with.
#[derive(Debug, Clone, Copy)]
pub enum JetKind {
    Constant(f64),
    /// Coordinate function; axis 0 is `t`, axes 1..=3 are `x^a`.
    Coordinate(usize),
}

/// Univariate outer functions supported by [`Jet::compose`].
#[derive(Debug, Clone, Copy)]
pub enum Composition {
    Sqrt,
    Recip,
    Power(i32),
    Exp,
    Sin,
    Cos,
}

/// Truncated Taylor expansion of a scalar field at a [`ConePoint`].
///
/// `coeffs[pos(α)] = ∂^α f / α!` for every `|α| <= order`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    base: ConePoint,
    order: usize,
    coeffs: Vec<f64>,
}

/// Builds a constant or coordinate jet; every other jet is assembled from
/// these by arithmetic and composition.
pub fn make_jet(kind: JetKind, base: ConePoint, order: usize) -> Result<Jet, JetError> {
    if order > MAX_ORDER {
        return Err(JetError::OrderTooHigh {
            requested: order,
            limit: MAX_ORDER,
        });
    }
    let mut coeffs = vec![0.0; layout_len(order)];
    match kind {
        JetKind::Constant(v) => coeffs[0] = v,
        JetKind::Coordinate(axis) => {
            assert!(axis < NVARS, "coordinate axis out of range");
            coeffs[0] = if axis == 0 { base.t() } else { base.x()[axis - 1] };
            if order >= 1 {
                let pos = position(&MultiIndex::unit(axis)).unwrap();
                coeffs[pos] = 1.0;
            }
        }
    }
    Ok(Jet { base, order, coeffs })
}

impl Jet {
    pub fn constant(base: ConePoint, order: usize, value: f64) -> Result<Jet, JetError> {
        make_jet(JetKind::Constant(value), base, order)
    }

    pub fn coordinate(base: ConePoint, order: usize, axis: usize) -> Result<Jet, JetError> {
        make_jet(JetKind::Coordinate(axis), base, order)
    }

    pub fn base(&self) -> ConePoint {
        self.base
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Field value at the base point.
    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn coefficient(&self, alpha: &MultiIndex) -> f64 {
        if alpha.order() > self.order {
            return 0.0;
        }
        position(alpha).map_or(0.0, |p| self.coeffs[p])
    }

    /// The mixed partial `∂^α f` at the base point, i.e. `α! * coefficient`.
    pub fn extract_partial(&self, alpha: &MultiIndex) -> Result<f64, JetError> {
        if alpha.order() > self.order {
            return Err(JetError::OrderTooHigh {
                requested: alpha.order(),
                limit: self.order,
            });
        }
        Ok(alpha.factorial() * self.coefficient(alpha))
    }

    fn compatible(&self, other: &Jet) -> Result<(), JetError> {
        if self.order != other.order || !self.base.same_point(&other.base) {
            return Err(JetError::JetMismatch);
        }
        Ok(())
    }

    pub fn checked_add(&self, other: &Jet) -> Result<Jet, JetError> {
        self.compatible(other)?;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Jet { base: self.base, order: self.order, coeffs })
    }

    pub fn checked_mul(&self, other: &Jet) -> Result<Jet, JetError> {
        self.compatible(other)?;
        let mut coeffs = vec![0.0; self.coeffs.len()];
        let idx = &LAYOUT.indices;
        for (pa, a) in idx[..self.coeffs.len()].iter().enumerate() {
            let ca = self.coeffs[pa];
            if ca == 0.0 {
                continue;
            }
            let room = self.order - a.order();
            for (pb, b) in idx[..layout_len(room)].iter().enumerate() {
                let cb = other.coeffs[pb];
                if cb == 0.0 {
                    continue;
                }
                let pc = position(&a.plus(b)).unwrap();
                coeffs[pc] += ca * cb;
            }
        }
        Ok(Jet { base: self.base, order: self.order, coeffs })
    }

    pub fn neg(&self) -> Jet {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Jet {
        Jet {
            base: self.base,
            order: self.order,
            coeffs: self.coeffs.iter().map(|v| c * v).collect(),
        }
    }

    pub fn shift(&self, c: f64) -> Jet {
        let mut out = self.clone();
        out.coeffs[0] += c;
        out
    }

    /// Jet of `∂_axis f`, one order lower.
    pub fn derivative(&self, axis: usize) -> Result<Jet, JetError> {
        if self.order == 0 {
            return Err(JetError::OrderTooHigh { requested: 1, limit: 0 });
        }
        let order = self.order - 1;
        let mut coeffs = vec![0.0; layout_len(order)];
        for (pos, beta) in LAYOUT.indices[..coeffs.len()].iter().enumerate() {
            // ∂^β(∂_axis f)/β! = (β_axis + 1) * coeff_{β + e_axis}(f)
            let shifted = beta.plus(&MultiIndex::unit(axis));
            coeffs[pos] = (beta.0[axis] as f64 + 1.0) * self.coefficient(&shifted);
        }
        Ok(Jet { base: self.base, order, coeffs })
    }

    /// Truncate to a lower order (drops high coefficients).
    pub fn truncated(&self, order: usize) -> Jet {
        assert!(order <= self.order);
        Jet {
            base: self.base,
            order,
            coeffs: self.coeffs[..layout_len(order)].to_vec(),
        }
    }

    /// `f ∘ self` for a univariate outer function, truncated at this order.
    ///
    /// Writes the argument as `a0 + n` with `n` nilpotent and sums
    /// `Σ_k f^(k)(a0)/k! · n^k`, which is the Faà di Bruno expansion with the
    /// inner multi-index sums performed by jet multiplication.
    pub fn compose(&self, f: Composition) -> Result<Jet, JetError> {
        let a0 = self.value();
        let k = self.order;
        // Non-negative integer powers are plain products; no series needed.
        if let Composition::Power(n) = f {
            if n >= 0 {
                let mut acc = Jet::constant(self.base, k, 1.0)?;
                for _ in 0..n {
                    acc = acc.checked_mul(self)?;
                }
                return Ok(acc);
            }
        }
        // f^(j)(a0) / j! for j = 0..=k.
        let mut c = vec![0.0; k + 1];
        match f {
            Composition::Sqrt => {
                if a0 <= 0.0 {
                    return Err(JetError::SingularComposition("sqrt of non-positive value"));
                }
                // c[j] = c[j-1] * (1/2 - (j-1)) / (a0 * j)
                let mut prev = a0.sqrt();
                c[0] = prev;
                for (j, slot) in c.iter_mut().enumerate().skip(1) {
                    prev = prev * (0.5 - (j as f64 - 1.0)) / (a0 * j as f64);
                    *slot = prev;
                }
            }
            Composition::Recip => {
                if a0 == 0.0 {
                    return Err(JetError::SingularComposition("reciprocal of zero"));
                }
                // f^(j)(a0)/j! = (-1)^j a0^{-j-1}
                let mut prev = 1.0 / a0;
                c[0] = prev;
                for slot in c.iter_mut().skip(1) {
                    prev = -prev / a0;
                    *slot = prev;
                }
            }
            Composition::Power(n) => {
                if a0 == 0.0 {
                    return Err(JetError::SingularComposition("negative power of zero"));
                }
                let mut prev = a0.powi(n);
                c[0] = prev;
                for (j, slot) in c.iter_mut().enumerate().skip(1) {
                    prev = prev * (n as f64 - (j as f64 - 1.0)) / (a0 * j as f64);
                    *slot = prev;
                }
            }
            Composition::Exp => {
                let e = a0.exp();
                let mut prev = e;
                c[0] = e;
                for (j, slot) in c.iter_mut().enumerate().skip(1) {
                    prev /= j as f64;
                    *slot = prev;
                }
            }
            Composition::Sin | Composition::Cos => {
                let (s, co) = a0.sin_cos();
                let cycle = match f {
                    Composition::Sin => [s, co, -s, -co],
                    _ => [co, -s, -co, s],
                };
                let mut fj = 1.0;
                for (j, slot) in c.iter_mut().enumerate() {
                    if j > 0 {
                        fj *= j as f64;
                    }
                    *slot = cycle[j % 4] / fj;
                }
            }
        }

        let mut nil = self.clone();
        nil.coeffs[0] = 0.0;
        let mut acc = Jet::constant(self.base, k, c[0])?;
        let mut pw = Jet::constant(self.base, k, 1.0)?;
        for coef in c.iter().take(k + 1).skip(1) {
            pw = pw.checked_mul(&nil)?;
            acc = acc.checked_add(&pw.scale(*coef))?;
        }
        Ok(acc)
    }
}

/// Spec-level arithmetic entry point: `add`, `mul`, `neg` and `scale`.
#[derive(Debug, Clone, Copy)]
pub enum JetOp {
    Add,
    Mul,
    Neg,
    Scale(f64),
}

pub fn jet_arith(op: JetOp, a: &Jet, b: Option<&Jet>) -> Result<Jet, JetError> {
    match op {
        JetOp::Add => a.checked_add(b.ok_or(JetError::JetMismatch)?),
        JetOp::Mul => a.checked_mul(b.ok_or(JetError::JetMismatch)?),
        JetOp::Neg => Ok(a.neg()),
        JetOp::Scale(c) => Ok(a.scale(c)),
    }
}

pub fn jet_compose(f: Composition, a: &Jet) -> Result<Jet, JetError> {
    a.compose(f)
}

impl std::ops::Add for &Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        self.checked_add(rhs).expect("jet base/order mismatch")
    }
}

impl std::ops::Sub for &Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        self.checked_add(&rhs.neg()).expect("jet base/order mismatch")
    }
}

impl std::ops::Mul for &Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        self.checked_mul(rhs).expect("jet base/order mismatch")
    }
}
