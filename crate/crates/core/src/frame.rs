//! Hyperbolic variables and frames on the truncated light-cone interior
//! `K = {t > |x| + 1}`.
//!
//! The hyperbolic time is `s = sqrt(t^2 - r^2)`, the frame fields are
//! `∂̄_s = (s/t) ∂_t` and `∂̄_a = (x^a/t) ∂_t + ∂_a`, the Lorentz boosts are
//! `L_a = x^a ∂_t + t ∂_a`, and the conformal multiplier is
//! `K = s ∂̄_s + 2 x^a ∂̄_a`.  Frame changes go through the transition
//! matrices `Φ̄` / `Ψ̄` of [`FrameMatrices`].

use std::rc::Rc;

use rand::Rng;
use thiserror::Error;

use crate::jets::{Composition, Jet, JetError, MultiIndex};

/// Boundary guard: points closer than this to `t = |x| + 1` are rejected so
/// that `Ψ̄` entries (which carry `1/s` powers) stay finite.
pub const CONE_MARGIN: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("point (t={t}, r={r}) lies outside the truncated cone t > |x| + 1")]
    OutsideCone { t: f64, r: f64 },
    #[error("degenerate sample: field vanishes at a scaling sample (λ={lambda})")]
    DegenerateSample { lambda: f64 },
    #[error("homogeneity fit needs at least 3 positive scaling factors")]
    TooFewSamples,
    #[error(transparent)]
    Jet(#[from] JetError),
}

/// A spacetime point in the interior of the truncated light cone, carrying
/// both natural `(t, x)` and hyperbolic `(s, x̄ = x)` coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConePoint {
    t: f64,
    x: [f64; 3],
}

impl ConePoint {
    /// Requires `t > |x| + 1` (with a small margin).  Inside the cone the
    /// derived quantities automatically satisfy `s > 1` and `s^2 >= t`.
    pub fn new(t: f64, x: [f64; 3]) -> Result<Self, FrameError> {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(t > r + 1.0 + CONE_MARGIN) || !t.is_finite() || !r.is_finite() {
            return Err(FrameError::OutsideCone { t, r });
        }
        Ok(ConePoint { t, x })
    }

    /// Constructor without the cone check, for oracles and test fields that
    /// live outside `K`.  Frame matrices still require `t > r`.
    pub fn unchecked(t: f64, x: [f64; 3]) -> Self {
        ConePoint { t, x }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn x(&self) -> [f64; 3] {
        self.x
    }

    pub fn r(&self) -> f64 {
        self.x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Hyperbolic time `s = sqrt(t^2 - r^2)`.
    pub fn s(&self) -> f64 {
        (self.t * self.t - self.x.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn same_point(&self, other: &ConePoint) -> bool {
        self.t == other.t && self.x == other.x
    }

    /// `λ p`; for `λ >= 1` the scaled point stays inside the cone.
    pub fn scaled(&self, lambda: f64) -> ConePoint {
        ConePoint {
            t: lambda * self.t,
            x: [lambda * self.x[0], lambda * self.x[1], lambda * self.x[2]],
        }
    }
}

/// `(t, x) -> (s, x̄)`; fails outside the truncated cone.
pub fn to_hyperbolic(t: f64, x: [f64; 3]) -> Result<(f64, [f64; 3]), FrameError> {
    let p = ConePoint::new(t, x)?;
    Ok((p.s(), x))
}

/// Inverse parametrization `t = sqrt(s^2 + |x̄|^2)`.
pub fn from_hyperbolic(s: f64, xbar: [f64; 3]) -> (f64, [f64; 3]) {
    let r2 = xbar.iter().map(|v| v * v).sum::<f64>();
    ((s * s + r2).sqrt(), xbar)
}

/// Draw a point of `K_{[s_lo, s_hi]}` with `r/t <= rho_max`, respecting the
/// cone constraint `t > r + 1`.
pub fn sample_point<R: Rng + ?Sized>(rng: &mut R, s_lo: f64, s_hi: f64, rho_max: f64) -> ConePoint {
    let s = rng.gen_range(s_lo..s_hi);
    // t - r = s*sqrt((1-ρ)/(1+ρ)) must exceed 1: cap ρ accordingly.
    let cap = ((s * s - 1.0) / (s * s + 1.0) - 1e-3).min(rho_max).max(0.0);
    let rho = rng.gen_range(0.0..cap);
    let t = s / (1.0 - rho * rho).sqrt();
    let r = rho * t;
    // uniform direction
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let q = (1.0 - z * z).sqrt();
    ConePoint::new(t, [r * q * phi.cos(), r * q * phi.sin(), r * z]).expect("sampler stays inside cone")
}

/// Transition matrices between the natural and hyperbolic frames, plus the
/// Minkowski metric in hyperbolic components.
///
/// Rows index the lower (frame) slot: `∂̄_α = Φ̄_α^β ∂_β`, `∂_α = Ψ̄_α^β ∂̄_β`.
#[derive(Debug, Clone, Copy)]
pub struct FrameMatrices {
    pub phi: [[f64; 4]; 4],
    pub psi: [[f64; 4]; 4],
    pub mbar: [[f64; 4]; 4],
}

/// `Φ̄`, `Ψ̄` and `m̄` at a cone point.
pub fn frame_matrices(p: &ConePoint) -> FrameMatrices {
    let (t, x, s) = (p.t(), p.x(), p.s());
    let mut phi = [[0.0; 4]; 4];
    let mut psi = [[0.0; 4]; 4];
    let mut mbar = [[0.0; 4]; 4];
    phi[0][0] = s / t;
    psi[0][0] = t / s;
    mbar[0][0] = 1.0;
    for a in 1..4 {
        phi[a][0] = x[a - 1] / t;
        phi[a][a] = 1.0;
        psi[a][0] = -x[a - 1] / s;
        psi[a][a] = 1.0;
        mbar[0][a] = x[a - 1] / s;
        mbar[a][0] = x[a - 1] / s;
        mbar[a][a] = -1.0;
    }
    FrameMatrices { phi, psi, mbar }
}

/// First-order fields applied to jets.  Axis conventions: `D(0) = ∂_t`,
/// `D(a) = ∂_a`, `DBarA(a)` and `Boost(a)` take `a` in `1..=3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorField {
    /// Natural frame `∂_α`.
    D(usize),
    /// `∂̄_s = (s/t) ∂_t`.
    DBarS,
    /// `∂̄_a = (x^a/t) ∂_t + ∂_a`.
    DBarA(usize),
    /// Lorentz boost `L_a = x^a ∂_t + t ∂_a`.
    Boost(usize),
    /// Conformal multiplier `K = s ∂̄_s + 2 x^a ∂̄_a = ((t^2+r^2)/t) ∂_t + 2 x^a ∂_a`.
    ConformalK,
}

/// Jet of `r^2 = |x|^2` at the base of `u`, order `k`.
pub fn r_squared_jet(base: ConePoint, k: usize) -> Result<Jet, JetError> {
    let mut acc = Jet::constant(base, k, 0.0)?;
    for axis in 1..4 {
        let xa = Jet::coordinate(base, k, axis)?;
        acc = acc.checked_add(&xa.checked_mul(&xa)?)?;
    }
    Ok(acc)
}

/// Jet of `s = sqrt(t^2 - r^2)`; requires `t > r` at the base.
pub fn s_jet(base: ConePoint, k: usize) -> Result<Jet, JetError> {
    let t = Jet::coordinate(base, k, 0)?;
    let t2 = t.checked_mul(&t)?;
    let arg = t2.checked_add(&r_squared_jet(base, k)?.neg())?;
    arg.compose(Composition::Sqrt)
}

/// Jet of `1/t`.
pub fn recip_t_jet(base: ConePoint, k: usize) -> Result<Jet, JetError> {
    Jet::coordinate(base, k, 0)?.compose(Composition::Recip)
}

/// Jet of `1/s`.
pub fn recip_s_jet(base: ConePoint, k: usize) -> Result<Jet, JetError> {
    s_jet(base, k)?.compose(Composition::Recip)
}

/// Applies a frame field to a jet; the result is one order lower.
pub fn apply_field(v: VectorField, u: &Jet) -> Result<Jet, FrameError> {
    if u.order() == 0 {
        return Err(FrameError::Jet(JetError::OrderTooHigh { requested: 1, limit: 0 }));
    }
    let base = u.base();
    let k = u.order() - 1;
    let jet = match v {
        VectorField::D(axis) => u.derivative(axis)?,
        VectorField::DBarS => {
            let coeff = s_jet(base, k)?.checked_mul(&recip_t_jet(base, k)?)?;
            coeff.checked_mul(&u.derivative(0)?)?
        }
        VectorField::DBarA(a) => {
            debug_assert!((1..=3).contains(&a));
            let xa = Jet::coordinate(base, k, a)?;
            let coeff = xa.checked_mul(&recip_t_jet(base, k)?)?;
            coeff
                .checked_mul(&u.derivative(0)?)?
                .checked_add(&u.derivative(a)?)?
        }
        VectorField::Boost(a) => {
            debug_assert!((1..=3).contains(&a));
            let xa = Jet::coordinate(base, k, a)?;
            let t = Jet::coordinate(base, k, 0)?;
            xa.checked_mul(&u.derivative(0)?)?
                .checked_add(&t.checked_mul(&u.derivative(a)?)?)?
        }
        VectorField::ConformalK => {
            // ((t^2 + r^2)/t) ∂_t u + 2 x^a ∂_a u
            let t = Jet::coordinate(base, k, 0)?;
            let t2 = t.checked_mul(&t)?;
            let num = t2.checked_add(&r_squared_jet(base, k)?)?;
            let coeff = num.checked_mul(&recip_t_jet(base, k)?)?;
            let mut acc = coeff.checked_mul(&u.derivative(0)?)?;
            for a in 1..4 {
                let xa = Jet::coordinate(base, k, a)?;
                acc = acc.checked_add(&xa.checked_mul(&u.derivative(a)?)?.scale(2.0))?;
            }
            acc
        }
    };
    Ok(jet)
}

/// Applies a word of fields right-to-left: `apply_word(&[A, B], u) = A(B(u))`.
pub fn apply_word(word: &[VectorField], u: &Jet) -> Result<Jet, FrameError> {
    let mut acc = u.clone();
    for v in word.iter().rev() {
        acc = apply_field(*v, &acc)?;
    }
    Ok(acc)
}

/// `∂^I L^J u` with the fixed composition order `∂_t^{i0} ∂_1^{i1} ∂_2^{i2}
/// ∂_3^{i3} L_1^{j1} L_2^{j2} L_3^{j3}` (boosts applied first).
pub fn apply_pair(i: [u8; 4], j: [u8; 3], u: &Jet) -> Result<Jet, FrameError> {
    let mut word = Vec::new();
    for axis in 0..4 {
        for _ in 0..i[axis] {
            word.push(VectorField::D(axis));
        }
    }
    for a in 0..3 {
        for _ in 0..j[a] {
            word.push(VectorField::Boost(a + 1));
        }
    }
    apply_word(&word, u)
}

/// Jets of `Ψ̄_α^0` (the only non-constant transition entries): index 0 gives
/// `t/s`, index a gives `-x^a/s`.
fn psi_col0_jet(base: ConePoint, alpha: usize, k: usize) -> Result<Jet, JetError> {
    let rs = recip_s_jet(base, k)?;
    if alpha == 0 {
        Jet::coordinate(base, k, 0)?.checked_mul(&rs)
    } else {
        Ok(Jet::coordinate(base, k, alpha)?.checked_mul(&rs)?.neg())
    }
}

/// Maximum absolute residual of the displayed `∂_α(Ψ̄_β^0)` identities,
/// evaluated with jets:
///
/// * `∂_t(Ψ̄_0^0) = -s^{-1} Ψ̄_0^0 Ψ̄_0^0 + s^{-1}`
/// * `∂_t(Ψ̄_a^0) = -s^{-1} Ψ̄_0^0 Ψ̄_a^0`
/// * `∂_a(Ψ̄_0^0) = -s^{-1} Ψ̄_0^0 Ψ̄_a^0`
/// * `∂_a(Ψ̄_b^0) = -δ_ab s^{-1} - s^{-1} Ψ̄_a^0 Ψ̄_b^0`
pub fn psi_derivative_residual(p: &ConePoint) -> Result<f64, FrameError> {
    let inv_s = 1.0 / p.s();
    let mut psi0 = [0.0; 4];
    let mut dpsi = [[0.0; 4]; 4]; // dpsi[α][β] = ∂_α(Ψ̄_β^0)
    for beta in 0..4 {
        let jet = psi_col0_jet(*p, beta, 1)?;
        psi0[beta] = jet.value();
        for alpha in 0..4 {
            dpsi[alpha][beta] = jet.extract_partial(&MultiIndex::unit(alpha))?;
        }
    }
    let mut worst: f64 = 0.0;
    for alpha in 0..4 {
        for beta in 0..4 {
            // the four displays collapse to ∂_α Ψ̄_β^0 = -s^{-1} Ψ̄_α^0 Ψ̄_β^0 + s^{-1} m_{αβ}
            let kron = if alpha == beta {
                if alpha == 0 {
                    inv_s
                } else {
                    -inv_s
                }
            } else {
                0.0
            };
            let rhs = -inv_s * psi0[alpha] * psi0[beta] + kron;
            worst = worst.max((dpsi[alpha][beta] - rhs).abs());
        }
    }
    Ok(worst)
}

/// Result of a log-log scaling fit for the homogeneity degree.
#[derive(Debug, Clone, Copy)]
pub struct HomogeneityFit {
    /// Least-squares slope of `log |f(λp)|` against `log λ`.
    pub degree: f64,
    /// Distance from the nearest integer.
    pub integer_deviation: f64,
    pub nearest_integer: i64,
}

/// Estimates the homogeneity degree of `f` by scaling `p` with each `λ`.
pub fn homogeneity_degree(
    f: &dyn Fn(f64, [f64; 3]) -> f64,
    p: &ConePoint,
    lambdas: &[f64],
) -> Result<HomogeneityFit, FrameError> {
    if lambdas.len() < 3 || lambdas.iter().any(|l| *l <= 0.0) {
        return Err(FrameError::TooFewSamples);
    }
    let mut xs = Vec::with_capacity(lambdas.len());
    let mut ys = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let q = p.scaled(l);
        let v = f(q.t(), q.x());
        if v == 0.0 || !v.is_finite() {
            return Err(FrameError::DegenerateSample { lambda: l });
        }
        xs.push(l.ln());
        ys.push(v.abs().ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let nearest = slope.round();
    Ok(HomogeneityFit {
        degree: slope,
        integer_deviation: (slope - nearest).abs(),
        nearest_integer: nearest as i64,
    })
}

// ---------------------------------------------------------------------------
// Commutator coefficient families
// ---------------------------------------------------------------------------

/// A scalar coefficient function evaluable as a jet at any cone point.
pub type CoefFn = Rc<dyn Fn(&ConePoint, usize) -> Result<Jet, FrameError>>;

/// The coefficient families appearing in the commutator lemmas, each carrying
/// its declared homogeneity degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CoefficientFamily {
    /// Constants of `[L_a, ∂_α] = θ_{aα}^β ∂_β`.
    Theta,
    /// `[∂^I, ∂̄_a] = Σ σ_{aJ}^I ∂^J`, degree `|J| - |I| - 1`.
    Sigma,
    /// `[L^J, ∂̄_a] = Σ η ∂̄_c L^{J'}`, degree 0.
    Eta,
    /// `∂_α s = ρ_α (t/s)` with degree-0 `ρ_α`.
    Rho,
    /// `∂̄`-type coefficients of `[∂^I L^J, ∂̄_a]`, degree `|I'| - |I|`.
    RhoBar,
    /// `Λ^{IJ} = ∂^I L^J (s/t)`.
    CapitalLambda,
    /// `∂_α (s/t) = π_α s^{-1}` with degree-0 `π_α`.
    Pi,
    /// `L^J (s/t) = λ^J (s/t)` with degree-0 `λ^J`.
    Lambda,
    /// Reordering constants of `∂^{I1} L^{J1} ∂^{I2} L^{J2}`.
    Zeta,
}

/// One commutator coefficient: family, index data, declared degree and an
/// evaluation closure.
pub struct CommutatorCoefficient {
    pub family: CoefficientFamily,
    /// Free-form index label, e.g. `σ[a=1, I=(0,2,0,0), J=(1,0,0,0)]`.
    pub label: String,
    pub declared_degree: i64,
    pub eval: CoefFn,
}

impl CommutatorCoefficient {
    pub fn value(&self, p: &ConePoint) -> Result<f64, FrameError> {
        Ok((self.eval)(p, 0)?.value())
    }

    /// λ-scaling fit of the declared homogeneity degree.
    pub fn homogeneity_fit(&self, p: &ConePoint, lambdas: &[f64]) -> Result<HomogeneityFit, FrameError> {
        let eval = Rc::clone(&self.eval);
        let f = move |t: f64, x: [f64; 3]| {
            let q = ConePoint::unchecked(t, x);
            eval(&q, 0).map(|j| j.value()).unwrap_or(f64::NAN)
        };
        homogeneity_degree(&f, p, lambdas)
    }
}

fn coef_const(c: f64) -> CoefFn {
    Rc::new(move |p, k| Ok(Jet::constant(*p, k, c)?))
}

fn coef_mul(a: &CoefFn, b: &CoefFn) -> CoefFn {
    let (a, b) = (Rc::clone(a), Rc::clone(b));
    Rc::new(move |p, k| Ok(a(p, k)?.checked_mul(&b(p, k)?)?))
}

fn coef_add(a: &CoefFn, b: &CoefFn) -> CoefFn {
    let (a, b) = (Rc::clone(a), Rc::clone(b));
    Rc::new(move |p, k| Ok(a(p, k)?.checked_add(&b(p, k)?)?))
}

fn coef_deriv(a: &CoefFn, axis: usize) -> CoefFn {
    let a = Rc::clone(a);
    Rc::new(move |p, k| Ok(a(p, k + 1)?.derivative(axis)?))
}

fn coef_boost(a: &CoefFn, axis_a: usize) -> CoefFn {
    let a = Rc::clone(a);
    Rc::new(move |p, k| apply_field(VectorField::Boost(axis_a), &a(p, k + 1)?))
}

/// `x^b / t`, ubiquitous as `-η_b` and in `π_a`.
fn coef_xb_over_t(b: usize) -> CoefFn {
    Rc::new(move |p, k| {
        let xb = Jet::coordinate(*p, k, b)?;
        Ok(xb.checked_mul(&recip_t_jet(*p, k)?)?)
    })
}

/// Base σ coefficients: `[∂_t, ∂̄_b] = -(x^b/t^2) ∂_t`, `[∂_a, ∂̄_b] = (δ_ab/t) ∂_t`.
fn sigma_base(alpha: usize, b: usize) -> CoefFn {
    Rc::new(move |p, k| {
        let rt = recip_t_jet(*p, k)?;
        if alpha == 0 {
            let xb = Jet::coordinate(*p, k, b)?;
            Ok(xb.checked_mul(&rt)?.checked_mul(&rt)?.neg())
        } else if alpha == b {
            Ok(rt)
        } else {
            Ok(Jet::constant(*p, k, 0.0)?)
        }
    })
}

/// Expansion of `[∂^I, ∂̄_b]` as `Σ_{1<=|J|<=|I|} σ_{bJ}^I ∂^J`, built from the
/// induction `[∂_α ∂^I, ∂̄_b] = Σ σ ∂_α ∂^J + Σ (∂_α σ) ∂^J + σ_{αb} ∂_t ∂^I`.
pub fn sigma_family(i: MultiIndex, b: usize) -> Vec<(MultiIndex, CommutatorCoefficient)> {
    fn build(i: MultiIndex, b: usize) -> Vec<(MultiIndex, CoefFn)> {
        let n = i.order();
        assert!(n >= 1);
        if n == 1 {
            let alpha = (0..4).find(|&a| i.0[a] == 1).unwrap();
            return vec![(MultiIndex::unit(0), sigma_base(alpha, b))];
        }
        // split i = e_alpha + i'
        let alpha = (0..4).find(|&a| i.0[a] > 0).unwrap();
        let mut rest = i;
        rest.0[alpha] -= 1;
        let inner = build(rest, b);
        let mut terms: Vec<(MultiIndex, CoefFn)> = Vec::new();
        let mut push = |idx: MultiIndex, f: CoefFn| {
            if let Some(slot) = terms.iter_mut().find(|(j, _)| *j == idx) {
                slot.1 = coef_add(&slot.1, &f);
            } else {
                terms.push((idx, f));
            }
        };
        for (j, f) in &inner {
            push(j.plus(&MultiIndex::unit(alpha)), Rc::clone(f));
            push(*j, coef_deriv(f, alpha));
        }
        push(rest.plus(&MultiIndex::unit(0)), sigma_base(alpha, b));
        terms
    }
    build(i, b)
        .into_iter()
        .map(|(j, f)| {
            let degree = j.order() as i64 - i.order() as i64 - 1;
            (
                j,
                CommutatorCoefficient {
                    family: CoefficientFamily::Sigma,
                    label: format!("sigma[b={b}, I={:?}, J={:?}]", i.0, j.0),
                    declared_degree: degree,
                    eval: f,
                },
            )
        })
        .collect()
}

/// Expansion of `[L^J, ∂̄_b]` (boost word `word`, leftmost applied last) as
/// `Σ η ∂̄_c L^{J'}`, with `J'` returned as a boost word.
pub fn eta_family(word: &[usize], b: usize) -> Vec<(usize, Vec<usize>, CommutatorCoefficient)> {
    fn build(word: &[usize], b: usize) -> Vec<(usize, Vec<usize>, CoefFn)> {
        assert!(!word.is_empty());
        if word.len() == 1 {
            let a = word[0];
            // [L_a, ∂̄_b] = -(x^b/t) ∂̄_a
            let eta: CoefFn = {
                let f = coef_xb_over_t(b);
                Rc::new(move |p, k| Ok(f(p, k)?.neg()))
            };
            return vec![(a, Vec::new(), eta)];
        }
        // word = [a] ++ tail, [L_a L^T, ∂̄_b] = L_a([L^T,∂̄_b]) + [L_a,∂̄_b] L^T
        let a = word[0];
        let tail = &word[1..];
        let inner = build(tail, b);
        let mut terms: Vec<(usize, Vec<usize>, CoefFn)> = Vec::new();
        let mut push = |c: usize, w: Vec<usize>, f: CoefFn| {
            if let Some(slot) = terms.iter_mut().find(|(cc, ww, _)| *cc == c && *ww == w) {
                slot.2 = coef_add(&slot.2, &f);
            } else {
                terms.push((c, w, f));
            }
        };
        for (c, w, f) in &inner {
            // L_a(η ∂̄_c L^{J'}) = (L_a η) ∂̄_c L^{J'} + η [L_a, ∂̄_c] L^{J'} + η ∂̄_c L_a L^{J'}
            push(*c, w.clone(), coef_boost(f, a));
            let eta_c: CoefFn = {
                let g = coef_xb_over_t(*c);
                Rc::new(move |p, k| Ok(g(p, k)?.neg()))
            };
            push(a, w.clone(), coef_mul(f, &eta_c));
            let mut wa = vec![a];
            wa.extend_from_slice(w);
            push(*c, wa, Rc::clone(f));
        }
        let eta_b: CoefFn = {
            let g = coef_xb_over_t(b);
            Rc::new(move |p, k| Ok(g(p, k)?.neg()))
        };
        push(a, tail.to_vec(), eta_b);
        terms
    }
    build(word, b)
        .into_iter()
        .map(|(c, w, f)| {
            (
                c,
                w.clone(),
                CommutatorCoefficient {
                    family: CoefficientFamily::Eta,
                    label: format!("eta[b={b}, J={word:?}, c={c}, J'={w:?}]"),
                    declared_degree: 0,
                    eval: f,
                },
            )
        })
        .collect()
}

/// The simple degree-zero families `ρ_α` (`∂_α s = ρ_α t/s`) and `π_α`
/// (`∂_α (s/t) = π_α / s`), plus `λ^J` (`L^J(s/t) = λ^J (s/t)`).
pub fn rho_coefficient(alpha: usize) -> CommutatorCoefficient {
    let eval: CoefFn = if alpha == 0 {
        coef_const(1.0)
    } else {
        let f = coef_xb_over_t(alpha);
        Rc::new(move |p, k| Ok(f(p, k)?.neg()))
    };
    CommutatorCoefficient {
        family: CoefficientFamily::Rho,
        label: format!("rho[alpha={alpha}]"),
        declared_degree: 0,
        eval,
    }
}

pub fn pi_coefficient(alpha: usize) -> CommutatorCoefficient {
    let eval: CoefFn = if alpha == 0 {
        Rc::new(|p, k| {
            let rt = recip_t_jet(*p, k)?;
            Ok(r_squared_jet(*p, k)?.checked_mul(&rt)?.checked_mul(&rt)?)
        })
    } else {
        let f = coef_xb_over_t(alpha);
        Rc::new(move |p, k| Ok(f(p, k)?.neg()))
    };
    CommutatorCoefficient {
        family: CoefficientFamily::Pi,
        label: format!("pi[alpha={alpha}]"),
        declared_degree: 0,
        eval,
    }
}

/// `λ^J = L^J(s/t) / (s/t)` for a boost word.
pub fn lambda_coefficient(word: &[usize]) -> CommutatorCoefficient {
    let label = format!("lambda[J={word:?}]");
    let word = word.to_vec();
    let eval: CoefFn = Rc::new(move |p, k| {
        let need = k + word.len();
        let s_over_t = s_jet(*p, need)?.checked_mul(&recip_t_jet(*p, need)?)?;
        let mut acc = s_over_t;
        for a in word.iter().rev() {
            acc = apply_field(VectorField::Boost(*a), &acc)?;
        }
        let t_over_s = Jet::coordinate(*p, k, 0)?.checked_mul(&recip_s_jet(*p, k)?)?;
        Ok(acc.checked_mul(&t_over_s)?)
    });
    CommutatorCoefficient {
        family: CoefficientFamily::Lambda,
        label,
        declared_degree: 0,
        eval,
    }
}

/// `Λ^{IJ} = ∂^I L^J (s/t)` (not factored; tested against its bound, not a
/// single homogeneity degree).
pub fn capital_lambda(i: [u8; 4], j: [u8; 3]) -> CommutatorCoefficient {
    let order = i.iter().map(|&v| v as usize).sum::<usize>()
        + j.iter().map(|&v| v as usize).sum::<usize>();
    let eval: CoefFn = Rc::new(move |p, k| {
        let need = k + order;
        let s_over_t = s_jet(*p, need)?.checked_mul(&recip_t_jet(*p, need)?)?;
        apply_pair(i, j, &s_over_t)
    });
    CommutatorCoefficient {
        family: CoefficientFamily::CapitalLambda,
        label: format!("Lambda[I={i:?}, J={j:?}]"),
        declared_degree: 0,
        eval,
    }
}

// ---------------------------------------------------------------------------
// Operator words and the ζ-normalizer
// ---------------------------------------------------------------------------

/// A generator of the `{∂_α, L_a}` operator algebra.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpGen {
    D(usize),
    L(usize),
}

/// Normal form: constant × `∂^I` × ordered boost word.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalTerm {
    pub coeff: f64,
    pub i: MultiIndex,
    pub l_word: Vec<usize>,
}

/// Rewrites an operator word into `Σ c ∂^I (L-word)` using
/// `L_a ∂_t = ∂_t L_a - ∂_a` and `L_a ∂_b = ∂_b L_a - δ_ab ∂_t`.
/// Boost words keep their relative order (boosts do not commute).
pub fn normalize_word(word: &[OpGen]) -> Vec<NormalTerm> {
    let mut terms: Vec<(f64, Vec<OpGen>)> = vec![(1.0, word.to_vec())];
    let mut done: Vec<NormalTerm> = Vec::new();
    while let Some((c, w)) = terms.pop() {
        // find L immediately left of D
        let pos = w
            .windows(2)
            .position(|pair| matches!((pair[0], pair[1]), (OpGen::L(_), OpGen::D(_))));
        match pos {
            None => {
                let mut i = MultiIndex::ZERO;
                let mut l_word = Vec::new();
                for g in &w {
                    match g {
                        OpGen::D(axis) => i.0[*axis] += 1,
                        OpGen::L(a) => l_word.push(*a),
                    }
                }
                if let Some(t) = done.iter_mut().find(|t| t.i == i && t.l_word == l_word) {
                    t.coeff += c;
                } else {
                    done.push(NormalTerm { coeff: c, i, l_word });
                }
            }
            Some(p) => {
                let (a, alpha) = match (w[p], w[p + 1]) {
                    (OpGen::L(a), OpGen::D(alpha)) => (a, alpha),
                    _ => unreachable!(),
                };
                // swap
                let mut swapped = w.clone();
                swapped[p] = OpGen::D(alpha);
                swapped[p + 1] = OpGen::L(a);
                terms.push((c, swapped));
                // θ term: [L_a, ∂_t] = -∂_a ; [L_a, ∂_b] = -δ_ab ∂_t
                let theta_gen = if alpha == 0 {
                    Some(OpGen::D(a))
                } else if alpha == a {
                    Some(OpGen::D(0))
                } else {
                    None
                };
                if let Some(g) = theta_gen {
                    let mut reduced: Vec<OpGen> = Vec::with_capacity(w.len() - 1);
                    reduced.extend_from_slice(&w[..p]);
                    reduced.push(g);
                    reduced.extend_from_slice(&w[p + 2..]);
                    terms.push((-c, reduced));
                }
            }
        }
    }
    done.retain(|t| t.coeff != 0.0);
    done
}

/// ζ-expansion of `∂^{I1} L^{J1} ∂^{I2} L^{J2}` into normal form; the
/// coefficients are the integer constants of the reordering lemma.
pub fn zeta_expansion(i1: [u8; 4], j1: &[usize], i2: [u8; 4], j2: &[usize]) -> Vec<NormalTerm> {
    let mut word = Vec::new();
    for axis in 0..4 {
        for _ in 0..i1[axis] {
            word.push(OpGen::D(axis));
        }
    }
    for &a in j1 {
        word.push(OpGen::L(a));
    }
    for axis in 0..4 {
        for _ in 0..i2[axis] {
            word.push(OpGen::D(axis));
        }
    }
    for &a in j2 {
        word.push(OpGen::L(a));
    }
    normalize_word(&word)
}

/// Applies a normal form to a jet.
pub fn apply_normal_form(terms: &[NormalTerm], u: &Jet) -> Result<Jet, FrameError> {
    let mut acc = Jet::constant(u.base(), u.order() - terms.iter().map(|t| t.i.order() + t.l_word.len()).max().unwrap_or(0), 0.0)?;
    for term in terms {
        let mut v = u.clone();
        for &a in term.l_word.iter().rev() {
            v = apply_field(VectorField::Boost(a), &v)?;
        }
        for axis in (0..4).rev() {
            for _ in 0..term.i.0[axis] {
                v = apply_field(VectorField::D(axis), &v)?;
            }
        }
        let v = v.truncated(acc.order());
        acc = acc.checked_add(&v.scale(term.coeff))?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pt(t: f64, x: [f64; 3]) -> ConePoint {
        ConePoint::new(t, x).unwrap()
    }

    #[test]
    fn hyperbolic_coordinates_roundtrip() {
        let (s, xb) = to_hyperbolic(2.0, [0.0; 3]).unwrap();
        assert_eq!(s, 2.0);
        assert_eq!(xb, [0.0; 3]);

        let (s, _) = to_hyperbolic(5.0, [3.0, 0.0, 0.0]).unwrap();
        assert_eq!(s, 4.0);
        let (t, _) = from_hyperbolic(4.0, [3.0, 0.0, 0.0]);
        assert_relative_eq!(t, 5.0);

        assert!(matches!(
            to_hyperbolic(2.0, [1.5, 0.0, 0.0]),
            Err(FrameError::OutsideCone { .. })
        ));
    }

    #[test]
    fn frame_matrices_match_displayed_entries() {
        let p = pt(5.0, [3.0, 0.0, 0.0]);
        let fm = frame_matrices(&p);
        assert_relative_eq!(fm.psi[0][0], 1.25);
        assert_relative_eq!(fm.psi[1][0], -0.75);
        assert_relative_eq!(fm.mbar[0][0], 1.0);
        assert_relative_eq!(fm.mbar[0][1], 0.75);
        assert_relative_eq!(fm.mbar[1][1], -1.0);

        let p0 = pt(2.0, [0.0; 3]);
        let fm0 = frame_matrices(&p0);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(fm0.phi[i][j], expect);
            }
        }
    }

    #[test]
    fn phi_psi_are_inverse_at_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let p = sample_point(&mut rng, 2.0, 30.0, 0.95);
            let fm = frame_matrices(&p);
            for i in 0..4 {
                for j in 0..4 {
                    let mut acc = 0.0;
                    for k in 0..4 {
                        // ∂̄_i = Φ̄_i^k ∂_k and ∂_k = Ψ̄_k^j ∂̄_j
                        acc += fm.phi[i][k] * fm.psi[k][j];
                    }
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((acc - expect).abs() <= 1e-12, "entry ({i},{j}) = {acc}");
                }
            }
        }
    }

    #[test]
    fn conformal_multiplier_on_t() {
        // K t = (t^2 + r^2)/t
        let p = pt(5.0, [3.0, 0.0, 0.0]);
        let t = Jet::coordinate(p, 2, 0).unwrap();
        let kt = apply_field(VectorField::ConformalK, &t).unwrap();
        assert_relative_eq!(kt.value(), 34.0 / 5.0, max_relative = 1e-14);
    }

    #[test]
    fn boost_of_x1_is_t() {
        let p = pt(5.0, [3.0, 0.0, 0.0]);
        let x1 = Jet::coordinate(p, 2, 1).unwrap();
        let l1 = apply_field(VectorField::Boost(1), &x1).unwrap();
        assert_relative_eq!(l1.value(), 5.0, max_relative = 1e-14);
    }

    #[test]
    fn dbar_s_of_s_is_one() {
        // chain rule: ∂̄_s s = (s/t) ∂_t sqrt(t^2-r^2) = (s/t)(t/s) = 1
        let p = pt(5.0, [3.0, 0.0, 0.0]);
        let s = s_jet(p, 2).unwrap();
        let ds = apply_field(VectorField::DBarS, &s).unwrap();
        assert_relative_eq!(ds.value(), 1.0, max_relative = 1e-13);

        // and ∂̄_a s = 0: ∂̄_a is tangent to the hyperboloid
        let da = apply_field(VectorField::DBarA(1), &s_jet(p, 2).unwrap()).unwrap();
        assert!(da.value().abs() <= 1e-13);
    }

    #[test]
    fn psi_derivative_identities_hold() {
        assert!(psi_derivative_residual(&pt(2.0, [0.0; 3])).unwrap() <= 1e-12);
        assert!(psi_derivative_residual(&pt(5.0, [3.0, 0.0, 0.0])).unwrap() <= 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let p = sample_point(&mut rng, 2.0, 10.0, 0.9);
            let res = psi_derivative_residual(&p).unwrap();
            assert!(res <= 1e-10, "residual {res} at {p:?}");
        }
    }

    #[test]
    fn homogeneity_fits_match_known_degrees() {
        let p = pt(4.0, [1.0, 0.5, 0.0]);
        let lam = [1.0, 1.5, 2.0, 3.0, 4.0];
        let fit = homogeneity_degree(&|t, x| x[0] / t, &p, &lam).unwrap();
        assert_eq!(fit.nearest_integer, 0);
        assert!(fit.integer_deviation <= 1e-10);

        let fit = homogeneity_degree(&|t, _| t, &p, &lam).unwrap();
        assert_eq!(fit.nearest_integer, 1);
        assert!(fit.integer_deviation <= 1e-10);

        let fit = homogeneity_degree(
            &|t, x| x.iter().map(|v| v * v).sum::<f64>() / (t * t * t),
            &p,
            &[1.0, 2.0, 4.0],
        )
        .unwrap();
        assert_eq!(fit.nearest_integer, -1);
        assert!(fit.integer_deviation <= 1e-10);

        assert!(matches!(
            homogeneity_degree(&|_, _| 0.0, &p, &lam),
            Err(FrameError::DegenerateSample { .. })
        ));
    }

    #[test]
    fn frame_change_consistency_for_constant_fields() {
        // V^α ∂_α u computed directly equals the Ψ̄-recombined ∂̄ application.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let v = [0.3, -1.2, 0.7, 0.4];
        for _ in 0..50 {
            let p = sample_point(&mut rng, 2.0, 10.0, 0.9);
            let u = {
                let t = Jet::coordinate(p, 3, 0).unwrap();
                let x1 = Jet::coordinate(p, 3, 1).unwrap();
                let x3 = Jet::coordinate(p, 3, 3).unwrap();
                &(&t * &t) * &(&x1 - &x3.scale(0.5)).shift(1.0)
            };
            let mut direct = 0.0;
            for (alpha, va) in v.iter().enumerate() {
                direct += va * apply_field(VectorField::D(alpha), &u).unwrap().value();
            }
            let fm = frame_matrices(&p);
            let frame_fields = [
                VectorField::DBarS,
                VectorField::DBarA(1),
                VectorField::DBarA(2),
                VectorField::DBarA(3),
            ];
            let mut recombined = 0.0;
            for (alpha, va) in v.iter().enumerate() {
                for (beta, field) in frame_fields.iter().enumerate() {
                    recombined += va * fm.psi[alpha][beta] * apply_field(*field, &u).unwrap().value();
                }
            }
            let scale = direct.abs().max(1.0);
            assert!(
                (direct - recombined).abs() <= 1e-10 * scale,
                "direct {direct} vs recombined {recombined}"
            );
        }
    }

    #[test]
    fn sigma_family_reproduces_commutator() {
        // [∂^I, ∂̄_b] u = Σ σ_{bJ}^I ∂^J u, checked on a generic jet.
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let cases = [
            (MultiIndex([1, 0, 0, 0]), 1),
            (MultiIndex([0, 1, 1, 0]), 2),
            (MultiIndex([2, 0, 0, 0]), 1),
            (MultiIndex([1, 1, 0, 1]), 3),
        ];
        for _ in 0..20 {
            let p = sample_point(&mut rng, 2.0, 8.0, 0.8);
            let order = 6;
            let u = {
                let t = Jet::coordinate(p, order, 0).unwrap();
                let x1 = Jet::coordinate(p, order, 1).unwrap();
                let x2 = Jet::coordinate(p, order, 2).unwrap();
                &(&t * &x1) * &(&x2 * &x2).shift(2.0)
            };
            for (i, b) in &cases {
                let di_db = {
                    let inner = apply_field(VectorField::DBarA(*b), &u).unwrap();
                    apply_pair(i.0, [0; 3], &inner).unwrap()
                };
                let db_di = {
                    let inner = apply_pair(i.0, [0; 3], &u).unwrap();
                    apply_field(VectorField::DBarA(*b), &inner).unwrap()
                };
                let lhs = (&di_db - &db_di).value();
                let mut rhs = 0.0;
                for (j, coef) in sigma_family(*i, *b) {
                    let dj_u = apply_pair(j.0, [0; 3], &u).unwrap();
                    rhs += coef.value(&p).unwrap() * dj_u.value();
                }
                let scale = lhs.abs().max(rhs.abs()).max(1.0);
                assert!(
                    (lhs - rhs).abs() <= 1e-10 * scale,
                    "I={i:?} b={b}: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn eta_family_reproduces_commutator() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let words: [&[usize]; 3] = [&[1], &[1, 2], &[3, 1, 2]];
        for _ in 0..10 {
            let p = sample_point(&mut rng, 2.0, 8.0, 0.8);
            let order = 6;
            let u = {
                let t = Jet::coordinate(p, order, 0).unwrap();
                let x2 = Jet::coordinate(p, order, 2).unwrap();
                let x3 = Jet::coordinate(p, order, 3).unwrap();
                &(&t * &x3) * &(&x2 * &t).shift(1.5)
            };
            for word in words {
                let b = 2;
                let apply_lword = |w: &[usize], arg: &Jet| {
                    let mut acc = arg.clone();
                    for a in w.iter().rev() {
                        acc = apply_field(VectorField::Boost(*a), &acc).unwrap();
                    }
                    acc
                };
                let lhs = {
                    let lw_db = apply_lword(word, &apply_field(VectorField::DBarA(b), &u).unwrap());
                    let db_lw = apply_field(VectorField::DBarA(b), &apply_lword(word, &u)).unwrap();
                    (&lw_db - &db_lw).value()
                };
                let mut rhs = 0.0;
                for (c, w, coef) in eta_family(word, b) {
                    let v = apply_field(VectorField::DBarA(c), &apply_lword(&w, &u)).unwrap();
                    rhs += coef.value(&p).unwrap() * v.value();
                }
                let scale = lhs.abs().max(rhs.abs()).max(1.0);
                assert!((lhs - rhs).abs() <= 1e-10 * scale, "J={word:?}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn coefficient_families_have_declared_homogeneity() {
        let p = pt(6.0, [2.0, 1.0, 0.5]);
        let lambdas = [1.0, 1.5, 2.0, 3.0];
        let mut coeffs: Vec<CommutatorCoefficient> = Vec::new();
        for alpha in 0..4 {
            coeffs.push(rho_coefficient(alpha));
            coeffs.push(pi_coefficient(alpha));
        }
        coeffs.push(lambda_coefficient(&[1]));
        coeffs.push(lambda_coefficient(&[2, 1]));
        for (_, c) in sigma_family(MultiIndex([1, 1, 0, 0]), 2) {
            coeffs.push(c);
        }
        for (_, _, c) in eta_family(&[1, 2], 3) {
            coeffs.push(c);
        }
        for c in coeffs {
            match c.homogeneity_fit(&p, &lambdas) {
                Ok(fit) => {
                    assert!(
                        fit.integer_deviation <= 0.01,
                        "{}: slope {} not near an integer",
                        c.label,
                        fit.degree
                    );
                    assert_eq!(
                        fit.nearest_integer, c.declared_degree,
                        "{}: degree {} declared {}",
                        c.label, fit.nearest_integer, c.declared_degree
                    );
                }
                Err(FrameError::DegenerateSample { .. }) => {
                    // identically-zero component of a family; nothing to fit
                }
                Err(e) => panic!("{}: {e}", c.label),
            }
        }
    }

    #[test]
    fn normalizer_matches_direct_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let p = sample_point(&mut rng, 2.0, 8.0, 0.8);
        let order = 6;
        let u = {
            let t = Jet::coordinate(p, order, 0).unwrap();
            let x1 = Jet::coordinate(p, order, 1).unwrap();
            let x2 = Jet::coordinate(p, order, 2).unwrap();
            &(&(&t * &x1) * &x2).shift(0.5) * &t
        };
        let word = [
            OpGen::L(1),
            OpGen::D(0),
            OpGen::L(2),
            OpGen::D(1),
        ];
        // direct: apply right-to-left
        let mut direct = u.clone();
        for g in word.iter().rev() {
            direct = match g {
                OpGen::D(axis) => apply_field(VectorField::D(*axis), &direct).unwrap(),
                OpGen::L(a) => apply_field(VectorField::Boost(*a), &direct).unwrap(),
            };
        }
        let terms = normalize_word(&word);
        // all ∂'s precede all L's in every term
        for t in &terms {
            assert!(t.coeff.fract() == 0.0);
        }
        let via_normal = apply_normal_form(&terms, &u).unwrap();
        assert_relative_eq!(direct.value(), via_normal.value(), max_relative = 1e-12);
    }

    #[test]
    fn zeta_expansion_orders_match_lemma() {
        // |I| = |I1| + |I2| and L-word length <= |J1| + |J2| in every term.
        let terms = zeta_expansion([1, 0, 0, 0], &[1, 2], [0, 1, 0, 0], &[1]);
        for t in &terms {
            assert!(t.i.order() + t.l_word.len() <= 5);
            assert!(t.i.order() >= 2, "∂-order preserved: {t:?}");
            assert!(t.l_word.len() <= 3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let p = sample_point(&mut rng, 2.0, 8.0, 0.8);
        let u = {
            let t = Jet::coordinate(p, 6, 0).unwrap();
            let x1 = Jet::coordinate(p, 6, 1).unwrap();
            &(&t * &t) * &(&x1 * &x1).shift(1.0)
        };
        // lhs: ∂^{I1} L^{J1} ∂^{I2} L^{J2} u applied directly
        let lhs = {
            let step1 = apply_pair([0, 1, 0, 0], [1, 0, 0], &u).unwrap();
            apply_pair([1, 0, 0, 0], [1, 1, 0], &step1).unwrap()
        };
        let rhs = apply_normal_form(&terms, &u).unwrap();
        assert_relative_eq!(lhs.value(), rhs.value(), max_relative = 1e-11);
    }
}
