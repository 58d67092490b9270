//! Quadrature over hyperboloids and the energy functionals built on it:
//! flat and curved conformal energies, the controlled norms, the Hardy and
//! Klainerman-Sobolev constants, and the slack of the conformal energy
//! inequality along a trajectory of slices.
//!
//! Radial integrands use composite Simpson on the slice grid with the `4π r²`
//! weight.  Non-radial integrands (commuted fields `∂^I L^J u`) are handled
//! by rebuilding a spacetime jet at each node from the stored `(t, r)`
//! derivative table and angular quadrature that is exact for the low-degree
//! angular polynomials produced by radial fields.

use serde::Serialize;
use thiserror::Error;

use crate::forms::{check_lorentzian_values, CubicForm, FormError, MetricPerturbation};
use crate::frame::{apply_field, ConePoint, FrameError, VectorField};
use crate::identities::{curved_analysis_from_jets, IdentityError};
use crate::jets::{Composition, Jet, JetError, MultiIndexPair};

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("quadrature failed: {0}")]
    QuadratureFail(&'static str),
    #[error("slice does not provide the required derivative stack")]
    MissingDerivatives,
    #[error("degenerate input (identically zero field)")]
    Degenerate,
    #[error("structure condition `{condition}` fails at (t={t}, r={r}): |value| = {value}")]
    StructureConditionFailed {
        condition: &'static str,
        t: f64,
        r: f64,
        value: f64,
    },
    #[error("energy inequality violated at s={s}: slack {slack} < -{tol}")]
    InequalityViolation { s: f64, slack: f64, tol: f64 },
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Form(#[from] FormError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
}

// ---------------------------------------------------------------------------
// Slice data
// ---------------------------------------------------------------------------

/// `(t, r)` derivative table at one radial node of a hyperboloid slice:
/// `d[i][j] = ∂_t^i ∂_r^j u` for `i + j <= 3`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SliceNode {
    pub r: f64,
    pub t: f64,
    pub d: [[f64; 4]; 4],
}

/// Field data resampled onto a constant-`s` hyperboloid, on a uniform radial
/// grid starting at `r = 0`.
#[derive(Debug, Clone)]
pub struct RadialSlice {
    pub s: f64,
    pub dr: f64,
    pub nodes: Vec<SliceNode>,
}

impl RadialSlice {
    /// Verifies `t = sqrt(s^2 + r^2)` on every node.
    pub fn validate(&self) -> Result<(), EnergyError> {
        for (i, n) in self.nodes.iter().enumerate() {
            let expect = (self.s * self.s + n.r * n.r).sqrt();
            if (n.t - expect).abs() > 1e-8 * expect || (n.r - i as f64 * self.dr).abs() > 1e-9 {
                return Err(EnergyError::QuadratureFail("slice nodes off the hyperboloid"));
            }
        }
        Ok(())
    }

    pub fn r_max(&self) -> f64 {
        self.nodes.last().map_or(0.0, |n| n.r)
    }

    /// Largest radius with data above `tol` (in `u` or `∂_t u`), or 0.
    pub fn support_radius(&self, tol: f64) -> f64 {
        self.nodes
            .iter()
            .rev()
            .find(|n| n.d[0][0].abs() > tol || n.d[1][0].abs() > tol)
            .map_or(0.0, |n| n.r)
    }
}

/// Builds a slice by sampling a closed-form field (given as a jet builder)
/// on the hyperboloid `t = sqrt(s^2 + r^2)`.
pub fn slice_from_closed_form(
    field: &dyn Fn(&ConePoint, usize) -> Result<Jet, IdentityError>,
    s: f64,
    dr: f64,
    r_max: f64,
) -> Result<RadialSlice, EnergyError> {
    let n = (r_max / dr).round() as usize;
    let mut nodes = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let r = i as f64 * dr;
        let t = (s * s + r * r).sqrt();
        // on the positive x1-axis, ∂_r^j of a radial field is ∂_1^j
        let p = ConePoint::unchecked(t, [r, 0.0, 0.0]);
        let jet = field(&p, 3)?;
        let mut d = [[0.0; 4]; 4];
        for i_t in 0..4usize {
            for j_r in 0..4usize {
                if i_t + j_r <= 3 {
                    let mut alpha = [0u8; 4];
                    alpha[0] = i_t as u8;
                    alpha[1] = j_r as u8;
                    d[i_t][j_r] = jet.extract_partial(&crate::jets::MultiIndex(alpha))?;
                }
            }
        }
        nodes.push(SliceNode { r, t, d });
    }
    Ok(RadialSlice { s, dr, nodes })
}

/// Rebuilds the 4-variable jet of the slice field at `x = r ω` from the
/// node's `(t, r)` derivative table (order <= 3).
pub fn node_jet(node: &SliceNode, omega: [f64; 3], order: usize) -> Result<Jet, EnergyError> {
    assert!(order <= 3);
    let r0 = node.r;
    let x = [r0 * omega[0], r0 * omega[1], r0 * omega[2]];
    let base = ConePoint::unchecked(node.t, x);
    let dt = Jet::coordinate(base, order, 0)?.shift(-node.t); // nilpotent Δt

    if r0 < 1e-12 {
        // even radial extension: u = Σ_i Δt^i/i! (d[i][0] + d[i][2] |x|^2 / 2)
        let mut r2 = Jet::constant(base, order, 0.0)?;
        for axis in 1..4 {
            let xa = Jet::coordinate(base, order, axis)?;
            r2 = r2.checked_add(&xa.checked_mul(&xa)?)?;
        }
        let mut acc = Jet::constant(base, order, 0.0)?;
        let mut dt_pow = Jet::constant(base, order, 1.0)?;
        let mut fact = 1.0;
        for i in 0..=order.min(3) {
            if i > 0 {
                dt_pow = dt_pow.checked_mul(&dt)?;
                fact *= i as f64;
            }
            let mut term = Jet::constant(base, order, node.d[i][0])?;
            if i + 2 <= 3 {
                term = term.checked_add(&r2.scale(0.5 * node.d[i][2]))?;
            }
            acc = acc.checked_add(&dt_pow.checked_mul(&term)?.scale(1.0 / fact))?;
        }
        return Ok(acc);
    }

    let mut r2 = Jet::constant(base, order, 0.0)?;
    for axis in 1..4 {
        let xa = Jet::coordinate(base, order, axis)?;
        r2 = r2.checked_add(&xa.checked_mul(&xa)?)?;
    }
    let rho = r2.compose(Composition::Sqrt)?;
    let drho = rho.shift(-r0); // nilpotent Δρ

    let mut acc = Jet::constant(base, order, 0.0)?;
    let mut dt_pow = Jet::constant(base, order, 1.0)?;
    let mut fact_i = 1.0;
    for i in 0..=3usize {
        if i > order {
            break;
        }
        if i > 0 {
            dt_pow = dt_pow.checked_mul(&dt)?;
            fact_i *= i as f64;
        }
        let mut drho_pow = Jet::constant(base, order, 1.0)?;
        let mut fact_j = 1.0;
        for j in 0..=(3 - i) {
            if j > 0 {
                drho_pow = drho_pow.checked_mul(&drho)?;
                fact_j *= j as f64;
            }
            let c = node.d[i][j] / (fact_i * fact_j);
            if c != 0.0 {
                acc = acc.checked_add(&dt_pow.checked_mul(&drho_pow)?.scale(c))?;
            }
        }
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

/// Integral value with a Richardson-style error estimate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IntegralResult {
    pub value: f64,
    pub est_error: f64,
    /// Set when the integrand is non-negligible where the support condition
    /// `r <= t - 1` requires it to vanish (warning-grade).
    pub support_leak: bool,
}

/// Composite Simpson of `f(i) * weight(i)` over uniformly spaced samples.
fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut acc = 0.0;
    let pairs = (n - 1) / 2;
    for k in 0..pairs {
        let i = 2 * k;
        acc += h / 3.0 * (values[i] + 4.0 * values[i + 1] + values[i + 2]);
    }
    if (n - 1) % 2 == 1 {
        // one leftover interval: trapezoid
        acc += 0.5 * h * (values[n - 2] + values[n - 1]);
    }
    acc
}

fn simpson_with_error(values: &[f64], h: f64) -> (f64, f64) {
    let full = simpson(values, h);
    if values.len() < 5 {
        return (full, full.abs() * 1e-3);
    }
    let coarse: Vec<f64> = values.iter().step_by(2).copied().collect();
    let half = simpson(&coarse, 2.0 * h);
    (full, (full - half).abs() / 15.0)
}

/// `∫_{H_s} f dx = 4π ∫ f(t(r), r) r^2 dr` for a rotation-invariant sampler.
pub fn hyperboloid_integral_radial(
    f: &dyn Fn(f64, f64) -> f64,
    s: f64,
    dr: f64,
    r_max: f64,
    check_support: bool,
) -> IntegralResult {
    let n = (r_max / dr).round() as usize;
    let mut values = Vec::with_capacity(n + 1);
    let mut support_leak = false;
    let mut peak = 0.0f64;
    for i in 0..=n {
        let r = i as f64 * dr;
        let t = (s * s + r * r).sqrt();
        let v = f(t, r);
        peak = peak.max(v.abs());
        values.push(v * r * r);
    }
    if check_support {
        for i in 0..=n {
            let r = i as f64 * dr;
            let t = (s * s + r * r).sqrt();
            if r >= t - 1.0 && values[i].abs() > 1e-12 * peak.max(1e-300) * r * r {
                support_leak = true;
                break;
            }
        }
    }
    let (value, est) = simpson_with_error(&values, dr);
    IntegralResult {
        value: 4.0 * std::f64::consts::PI * value,
        est_error: 4.0 * std::f64::consts::PI * est,
        support_leak,
    }
}

/// Angular quadrature on the unit sphere, exact for spherical polynomials up
/// to the stated degree: Gauss-Legendre in `cos θ` times uniform `φ`.
/// Weights sum to one (the rule computes averages).
#[derive(Debug, Clone)]
pub struct SphereQuad {
    pub points: Vec<([f64; 3], f64)>,
    pub degree: usize,
}

impl SphereQuad {
    pub fn new(degree: usize) -> Self {
        let n_z = degree / 2 + 1;
        let n_phi = degree + 1;
        let (zs, ws) = gauss_legendre(n_z);
        let mut points = Vec::with_capacity(n_z * n_phi);
        for (z, wz) in zs.iter().zip(&ws) {
            let rho = (1.0 - z * z).sqrt();
            for k in 0..n_phi {
                let phi = std::f64::consts::TAU * k as f64 / n_phi as f64;
                points.push((
                    [rho * phi.cos(), rho * phi.sin(), *z],
                    wz / 2.0 / n_phi as f64,
                ));
            }
        }
        SphereQuad { points, degree }
    }
}

/// Gauss-Legendre nodes/weights on `[-1, 1]` by Newton iteration.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        xs[i] = x;
        ws[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (xs, ws)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = pk;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Full 3D hyperboloid integral for a non-rotation-invariant sampler.
pub fn hyperboloid_integral_3d(
    f: &dyn Fn(f64, [f64; 3]) -> f64,
    s: f64,
    dr: f64,
    r_max: f64,
    sphere: &SphereQuad,
) -> IntegralResult {
    let n = (r_max / dr).round() as usize;
    let mut values = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let r = i as f64 * dr;
        let t = (s * s + r * r).sqrt();
        let mut avg = 0.0;
        for (omega, w) in &sphere.points {
            avg += w * f(t, [r * omega[0], r * omega[1], r * omega[2]]);
        }
        values.push(avg * r * r);
    }
    let (value, est) = simpson_with_error(&values, dr);
    IntegralResult {
        value: 4.0 * std::f64::consts::PI * value,
        est_error: 4.0 * std::f64::consts::PI * est,
        support_leak: false,
    }
}

// ---------------------------------------------------------------------------
// Flat conformal energy and controlled norms
// ---------------------------------------------------------------------------

/// Pointwise flat quantities derived from a slice node.
#[derive(Debug, Clone, Copy)]
pub struct NodeFlatQuantities {
    pub u: f64,
    /// `∂̄_s u = (s/t) ∂_t u`.
    pub du_s: f64,
    /// `D1 = ∂_t u / t + ∂_r u / r`, so that `∂̄_a u = x^a D1`.
    pub d1: f64,
    /// `K u = ((t^2+r^2)/t) ∂_t u + 2 r ∂_r u`.
    pub ku: f64,
}

pub fn node_flat_quantities(s: f64, node: &SliceNode) -> NodeFlatQuantities {
    let (t, r) = (node.t, node.r);
    let u = node.d[0][0];
    let ut = node.d[1][0];
    let ur = node.d[0][1];
    let du_s = s / t * ut;
    // at the origin u_r/r -> u_rr by the even extension
    let d1 = if r < 1e-12 { ut / t + node.d[0][2] } else { ut / t + ur / r };
    let ku = (t * t + r * r) / t * ut + 2.0 * r * ur;
    NodeFlatQuantities { u, du_s, d1, ku }
}

/// Per-slice energy report; the layout mirrors the trajectory CSV.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    pub s: f64,
    /// `ℰ_c(s,u) = ‖Ku + 2u‖^2 + Σ_a ‖s ∂̄_a u‖^2`.
    pub e_flat: f64,
    /// The first displayed form `(Ku)^2 + Σ(s ∂̄_a u)^2 + 4uKu + 4u^2`.
    pub e_flat_alt: f64,
    pub norm_ku2u_sq: f64,
    pub sum_norm_sda_sq: f64,
    pub e_curved: Option<f64>,
    pub kappa: Option<f64>,
    pub mg: Option<f64>,
    /// `‖(s/r) u‖`, `‖(s^2/t) ∂̄_s u‖`, `‖s (s/t)^2 |∇u|‖`.
    pub norm_u_over_r: f64,
    pub norm_dsu: f64,
    pub norm_da: f64,
    /// Ratios of the three controlled norms to `ℰ^{1/2}`.
    pub ratio_u_over_r: f64,
    pub ratio_dsu: f64,
    pub ratio_da: f64,
    pub quad_error: f64,
    pub support_leak: bool,
    pub n_nodes: usize,
    pub dr: f64,
}

/// Flat conformal energy, both displayed forms, and the controlled norms.
pub fn flat_conformal_energy(slice: &RadialSlice) -> Result<EnergyReport, EnergyError> {
    let s = slice.s;
    let q = |f: &dyn Fn(f64, &SliceNode) -> f64| -> IntegralResult {
        let values: Vec<f64> = slice
            .nodes
            .iter()
            .map(|n| f(s, n) * n.r * n.r)
            .collect();
        let (value, est) = simpson_with_error(&values, slice.dr);
        IntegralResult {
            value: 4.0 * std::f64::consts::PI * value,
            est_error: 4.0 * std::f64::consts::PI * est,
            support_leak: false,
        }
    };

    let e2 = q(&|s, n| {
        let f = node_flat_quantities(s, n);
        let kn = f.ku + 2.0 * f.u;
        let sda2 = s * s * n.r * n.r * f.d1 * f.d1;
        kn * kn + sda2
    });
    let e1 = q(&|s, n| {
        let f = node_flat_quantities(s, n);
        let sda2 = s * s * n.r * n.r * f.d1 * f.d1;
        f.ku * f.ku + sda2 + 4.0 * f.u * f.ku + 4.0 * f.u * f.u
    });
    let ku2u = q(&|s, n| {
        let f = node_flat_quantities(s, n);
        (f.ku + 2.0 * f.u) * (f.ku + 2.0 * f.u)
    });
    let sda = q(&|s, n| {
        let f = node_flat_quantities(s, n);
        s * s * n.r * n.r * f.d1 * f.d1
    });
    // ‖(s/r)u‖^2: the integrand (s/r)^2 u^2 r^2 = s^2 u^2 is regular at r = 0
    let u_over_r = q(&|s, n| {
        let f = node_flat_quantities(s, n);
        if n.r < 1e-12 {
            s * s * f.u * f.u / (1e-12f64).max(n.r * n.r) * n.r * n.r // r^2 cancels below anyway
        } else {
            (s / n.r) * (s / n.r) * f.u * f.u
        }
    });
    let dsu = q(&|s, n| {
        let f = node_flat_quantities(s, n);
        let w = s * s / n.t;
        w * w * f.du_s * f.du_s
    });
    let da = q(&|s, n| {
        // Σ_a (∂_a u)^2 = (∂_r u)^2 for radial fields
        let w = s * (s / n.t) * (s / n.t);
        let ur = if n.r < 1e-12 { 0.0 } else { n.d[0][1] };
        w * w * ur * ur
    });

    let e_flat = e2.value;
    let sqrt_e = e_flat.max(0.0).sqrt();
    let denom = if sqrt_e > 0.0 { sqrt_e } else { f64::INFINITY };
    Ok(EnergyReport {
        s,
        e_flat,
        e_flat_alt: e1.value,
        norm_ku2u_sq: ku2u.value,
        sum_norm_sda_sq: sda.value,
        e_curved: None,
        kappa: None,
        mg: None,
        norm_u_over_r: u_over_r.value.max(0.0).sqrt(),
        norm_dsu: dsu.value.max(0.0).sqrt(),
        norm_da: da.value.max(0.0).sqrt(),
        ratio_u_over_r: u_over_r.value.max(0.0).sqrt() / denom,
        ratio_dsu: dsu.value.max(0.0).sqrt() / denom,
        ratio_da: da.value.max(0.0).sqrt() / denom,
        quad_error: e2.est_error,
        support_leak: false,
        n_nodes: slice.nodes.len(),
        dr: slice.dr,
    })
}

// ---------------------------------------------------------------------------
// Curved conformal energy
// ---------------------------------------------------------------------------

/// Where the metric perturbation on a slice comes from.
pub enum CurvedSource<'a> {
    /// Closed-form perturbation.
    Analytic(&'a MetricPerturbation),
    /// `h^{αβ} = Q^{αβγ} ∂_γ u` with `u` the slice's own field.
    SelfQuasilinear(&'a CubicForm),
}

/// Curved-energy figures for one slice.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurvedResult {
    pub e_curved: f64,
    /// `max(E_flat/E_curved, E_curved/E_flat)^{1/2}`.
    pub kappa: f64,
    /// `M_g = ‖R_g + (𝒦_g+N_g)u S_g + T_g‖_{L^1} / ℰ_c^{1/2}`.
    pub mg: f64,
}

/// Curved conformal energy `E_{con,g}`, the equivalence ratio κ and `M_g`.
///
/// The structure conditions `|h̄^{00}| <= (s/t) ε_s`, `|s ∂̄_s h̄^{00}| <= (s/t) ε_s`
/// and `|h^{αβ}| <= (s/t) ε_s` are checked on every sampled node first.
pub fn curved_conformal_energy(
    slice: &RadialSlice,
    source: &CurvedSource,
    eps_s: f64,
    e_flat: f64,
    stride: usize,
) -> Result<CurvedResult, EnergyError> {
    let s = slice.s;
    let stride = stride.max(1);
    let mut rs = Vec::new();
    let mut e_density = Vec::new();
    let mut mg_density = Vec::new();
    for (i, node) in slice.nodes.iter().enumerate().step_by(stride) {
        if i == 0 {
            // zero quadrature weight at r = 0
            rs.push(node.r);
            e_density.push(0.0);
            mg_density.push(0.0);
            continue;
        }
        let p = ConePoint::unchecked(node.t, [node.r, 0.0, 0.0]);
        let u_jet = node_jet(node, [1.0, 0.0, 0.0], 3)?;
        let h_jets = match source {
            CurvedSource::Analytic(h) => h.jets(&p, 2)?,
            CurvedSource::SelfQuasilinear(q) => {
                let mut grads = Vec::with_capacity(4);
                for axis in 0..4 {
                    grads.push(u_jet.derivative(axis)?);
                }
                let mut rows = Vec::with_capacity(4);
                for a in 0..4 {
                    let mut row = Vec::with_capacity(4);
                    for b in 0..4 {
                        let mut acc = Jet::constant(p, 2, 0.0)?;
                        for (g, du) in grads.iter().enumerate() {
                            if q.coeffs[a][b][g] != 0.0 {
                                acc = acc.checked_add(&du.scale(q.coeffs[a][b][g]))?;
                            }
                        }
                        row.push(acc);
                    }
                    rows.push(<[Jet; 4]>::try_from(row).expect("row of 4"));
                }
                <[[Jet; 4]; 4]>::try_from(rows).expect("4 rows")
            }
        };

        // structure conditions and signature before committing to the energy
        let mut h_vals = [[0.0; 4]; 4];
        let mut h_max = 0.0f64;
        for a in 0..4 {
            for b in 0..4 {
                h_vals[a][b] = h_jets[a][b].value();
                h_max = h_max.max(h_vals[a][b].abs());
            }
        }
        let is_active = h_max > 0.0 || node.d[0][0] != 0.0 || node.d[1][0] != 0.0;
        if is_active {
            check_lorentzian_values(&h_vals, &p)?;
        }
        let (_, terms) = curved_analysis_from_jets(&u_jet, &h_jets, &p)?;
        let cap = (s / node.t) * eps_s;
        if terms.hbar00.abs() > cap {
            return Err(EnergyError::StructureConditionFailed {
                condition: "|hbar00| <= (s/t) eps_s",
                t: node.t,
                r: node.r,
                value: terms.hbar00.abs(),
            });
        }
        if terms.s_ds_hbar00.abs() > cap {
            return Err(EnergyError::StructureConditionFailed {
                condition: "|s dbar_s hbar00| <= (s/t) eps_s",
                t: node.t,
                r: node.r,
                value: terms.s_ds_hbar00.abs(),
            });
        }
        if h_max > cap {
            return Err(EnergyError::StructureConditionFailed {
                condition: "|h^{αβ}| <= (s/t) eps_s",
                t: node.t,
                r: node.r,
                value: h_max,
            });
        }
        rs.push(node.r);
        e_density.push(terms.energy_density() * node.r * node.r);
        mg_density.push(terms.mg_density() * node.r * node.r);
    }
    let h = slice.dr * stride as f64;
    let e_curved = 4.0 * std::f64::consts::PI * simpson(&e_density, h);
    let mg_l1 = 4.0 * std::f64::consts::PI * simpson(&mg_density, h);
    let sqrt_e_flat = e_flat.max(0.0).sqrt();
    let kappa = if e_curved > 0.0 && e_flat > 0.0 {
        (e_flat / e_curved).max(e_curved / e_flat).sqrt()
    } else {
        1.0
    };
    let mg = if sqrt_e_flat > 0.0 { mg_l1 / sqrt_e_flat } else { 0.0 };
    Ok(CurvedResult { e_curved, kappa, mg })
}

/// Standalone `M_g` measurement (spec-level wrapper).
pub fn mg_measure(
    slice: &RadialSlice,
    source: &CurvedSource,
    eps_s: f64,
) -> Result<f64, EnergyError> {
    let e_flat = flat_conformal_energy(slice)?.e_flat;
    if e_flat <= 0.0 {
        return Err(EnergyError::Degenerate);
    }
    Ok(curved_conformal_energy(slice, source, eps_s, e_flat, 1)?.mg)
}

// ---------------------------------------------------------------------------
// Hardy inequality
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct HardyCheck {
    /// `‖w/r‖_{L^2(R^3)}`.
    pub lhs: f64,
    /// `2 Σ_a ‖∂_a w‖_{L^2(R^3)}`.
    pub rhs: f64,
    /// `lhs / rhs`, defined as 0 for the zero function.
    pub ratio: f64,
}

/// Hardy inequality check for a radial field; the sampler returns
/// `(w(r), w'(r))`.
pub fn hardy_check(
    w: &dyn Fn(f64) -> (f64, f64),
    dr: f64,
    r_max: f64,
) -> Result<HardyCheck, EnergyError> {
    let n = (r_max / dr).round() as usize;
    let mut lhs_vals = Vec::with_capacity(n + 1);
    let mut grad_vals = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let r = i as f64 * dr;
        let (wv, dwv) = w(r);
        if !wv.is_finite() || !dwv.is_finite() {
            return Err(EnergyError::QuadratureFail("Hardy sampler returned non-finite value"));
        }
        lhs_vals.push(wv * wv); // (w/r)^2 r^2
        grad_vals.push(dwv * dwv * r * r);
    }
    let four_pi = 4.0 * std::f64::consts::PI;
    let lhs = (four_pi * simpson(&lhs_vals, dr)).max(0.0).sqrt();
    // ∂_a w = (x^a/r) w': ‖∂_a w‖^2 = (4π/3) ∫ w'^2 r^2 dr, summed over a = 1..3
    let per_axis = ((four_pi / 3.0) * simpson(&grad_vals, dr)).max(0.0).sqrt();
    let rhs = 2.0 * 3.0 * per_axis;
    let ratio = if lhs == 0.0 && rhs == 0.0 { 0.0 } else { lhs / rhs };
    Ok(HardyCheck { lhs, rhs, ratio })
}

// ---------------------------------------------------------------------------
// Commuted energies, Sobolev constant
// ---------------------------------------------------------------------------

/// Flat conformal energy of the commuted field `∂^I L^J u`, computed by
/// rebuilding node jets and angular quadrature (exact for the angular
/// polynomial degree of radial fields).
pub fn commuted_flat_energy(
    slice: &RadialSlice,
    pair: &MultiIndexPair,
    sphere: &SphereQuad,
    stride: usize,
) -> Result<f64, EnergyError> {
    let s = slice.s;
    let stride = stride.max(1);
    let mut values = Vec::new();
    for (i, node) in slice.nodes.iter().enumerate().step_by(stride) {
        if i == 0 || node_is_zero(node) {
            values.push(0.0);
            continue;
        }
        let mut avg = 0.0;
        for (omega, w) in &sphere.points {
            let u_jet = node_jet(node, *omega, 3)?;
            let v = crate::frame::apply_pair(pair.i, pair.j, &u_jet)?;
            let kv = apply_field(VectorField::ConformalK, &v)?.value();
            let kn = kv + 2.0 * v.value();
            let mut sda2 = 0.0;
            for a in 1..4 {
                let da = apply_field(VectorField::DBarA(a), &v)?.value();
                sda2 += s * s * da * da;
            }
            avg += w * (kn * kn + sda2);
        }
        values.push(avg * node.r * node.r);
    }
    let h = slice.dr * stride as f64;
    Ok(4.0 * std::f64::consts::PI * simpson(&values, h))
}

fn node_is_zero(node: &SliceNode) -> bool {
    node.d.iter().all(|row| row.iter().all(|v| *v == 0.0))
}

/// `Σ_{|I|+|J| <= n} ℰ_c(s, ∂^I L^J u)^{1/2}` on a slice.
pub fn commuted_energy_sum(
    slice: &RadialSlice,
    n_budget: usize,
    sphere: &SphereQuad,
    stride: usize,
) -> Result<f64, EnergyError> {
    let mut acc = 0.0;
    for pair in MultiIndexPair::all_up_to(n_budget) {
        acc += commuted_flat_energy(slice, &pair, sphere, stride)?
            .max(0.0)
            .sqrt();
    }
    Ok(acc)
}

/// Measured Klainerman-Sobolev constant
/// `sup_{H_s} t^{3/2} |u| / Σ_{|I|+|J|<=2} ‖∂^I L^J u‖_{L^2(H_s)}`.
pub fn sobolev_constant(
    slice: &RadialSlice,
    sphere: &SphereQuad,
    stride: usize,
) -> Result<f64, EnergyError> {
    let mut sup = 0.0f64;
    for node in &slice.nodes {
        sup = sup.max(node.t.powf(1.5) * node.d[0][0].abs());
    }
    let mut denom = 0.0;
    for pair in MultiIndexPair::all_up_to(2) {
        let norm_sq = commuted_l2_norm_sq(slice, &pair, sphere, stride)?;
        denom += norm_sq.max(0.0).sqrt();
    }
    if denom <= 0.0 {
        return Err(EnergyError::Degenerate);
    }
    Ok(sup / denom)
}

/// `‖∂^I L^J u‖^2_{L^2(H_s)}`.
pub fn commuted_l2_norm_sq(
    slice: &RadialSlice,
    pair: &MultiIndexPair,
    sphere: &SphereQuad,
    stride: usize,
) -> Result<f64, EnergyError> {
    let stride = stride.max(1);
    let mut values = Vec::new();
    for (i, node) in slice.nodes.iter().enumerate().step_by(stride) {
        if i == 0 || node_is_zero(node) {
            values.push(0.0);
            continue;
        }
        let mut avg = 0.0;
        for (omega, w) in &sphere.points {
            let u_jet = node_jet(node, *omega, 3)?;
            let v = crate::frame::apply_pair(pair.i, pair.j, &u_jet)?.value();
            avg += w * v * v;
        }
        values.push(avg * node.r * node.r);
    }
    let h = slice.dr * stride as f64;
    Ok(4.0 * std::f64::consts::PI * simpson(&values, h))
}

// ---------------------------------------------------------------------------
// Energy inequality slack
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SlackSeries {
    /// `(s, slack(s))` per recorded slice.
    pub entries: Vec<(f64, f64)>,
    pub tolerance: f64,
    /// First `s` at which `slack < -tolerance`, if any.
    pub violation: Option<f64>,
}

/// Slack of the conformal energy inequality along a trajectory:
/// `slack(s) = E^{1/2}(s_0) + ∫_{s_0}^s (τ ‖source‖_{L^2(H_τ)} + M_g(τ)) dτ - E^{1/2}(s)`.
///
/// For the flat estimate pass `flat = true` (the source integrand is
/// `2 τ ‖□u‖` and `M_g` is ignored); for the curved estimate the `mg` field
/// of the reports is used.
pub fn energy_inequality_slack(
    reports: &[EnergyReport],
    source_l2: &dyn Fn(f64) -> f64,
    flat: bool,
    extra_tolerance: f64,
) -> Result<SlackSeries, EnergyError> {
    if reports.len() < 2 {
        return Err(EnergyError::QuadratureFail("need at least two slices for slack"));
    }
    let sqrt_e = |r: &EnergyReport| -> f64 {
        if flat { r.e_flat.max(0.0).sqrt() } else { r.e_curved.unwrap_or(r.e_flat).max(0.0).sqrt() }
    };
    // the source norm is a closed-form sampler, so its integral is refined
    // independently of the (possibly sparse) slice grid; M_g is only known
    // per slice and stays on the slice grid
    let source_part = |s: f64| -> f64 {
        if flat { 2.0 * s * source_l2(s) } else { s * source_l2(s) }
    };
    let refine = 16usize;
    let source_integral = |a: f64, b: f64, pieces: usize| -> f64 {
        let mut acc = 0.0;
        let h = (b - a) / pieces as f64;
        let mut prev = source_part(a);
        for k in 1..=pieces {
            let x = a + h * k as f64;
            let cur = source_part(x);
            acc += 0.5 * h * (prev + cur);
            prev = cur;
        }
        acc
    };
    let mg_of = |r: &EnergyReport| -> f64 { if flat { 0.0 } else { r.mg.unwrap_or(0.0) } };
    let mut rhs = vec![0.0; reports.len()];
    let mut rhs_coarse = vec![0.0; reports.len()];
    for k in 1..reports.len() {
        let (a, b) = (&reports[k - 1], &reports[k]);
        let mg_piece = 0.5 * (b.s - a.s) * (mg_of(a) + mg_of(b));
        rhs[k] = rhs[k - 1] + source_integral(a.s, b.s, refine) + mg_piece;
        rhs_coarse[k] = rhs_coarse[k - 1] + source_integral(a.s, b.s, refine / 2) + mg_piece;
    }
    let mut coarse_err = rhs
        .iter()
        .zip(&rhs_coarse)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    // M_g integration error estimate: compare against an every-other-slice pass
    if !flat {
        let idx: Vec<usize> = (0..reports.len()).step_by(2).collect();
        let mut fine_at = 0.0;
        let mut coarse_at = 0.0;
        for w in idx.windows(2) {
            let (a, b) = (&reports[w[0]], &reports[w[1]]);
            coarse_at += 0.5 * (b.s - a.s) * (mg_of(a) + mg_of(b));
            for k in w[0]..w[1] {
                let (x, y) = (&reports[k], &reports[k + 1]);
                fine_at += 0.5 * (y.s - x.s) * (mg_of(x) + mg_of(y));
            }
        }
        coarse_err = coarse_err.max((fine_at - coarse_at).abs());
    }
    let quad_err: f64 = reports
        .iter()
        .map(|r| {
            let e = sqrt_e(r);
            if e > 0.0 { r.quad_error / (2.0 * e) } else { 0.0 }
        })
        .fold(0.0, f64::max);
    let tolerance = 3.0 * quad_err + 10.0 * coarse_err + extra_tolerance + 1e-12;

    let base = sqrt_e(&reports[0]);
    let mut entries = Vec::with_capacity(reports.len());
    let mut violation = None;
    for (k, r) in reports.iter().enumerate() {
        let slack = base + rhs[k] - sqrt_e(r);
        if slack < -tolerance && violation.is_none() {
            violation = Some(r.s);
        }
        entries.push((r.s, slack));
    }
    Ok(SlackSeries { entries, tolerance, violation })
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

/// Writes the trajectory CSV with 17-significant-digit formatting:
/// `s,E_flat,E_curved,norm_u_over_r,norm_dsu,norm_da,slack,Mg,kappa`.
pub fn write_reports_csv(
    path: &std::path::Path,
    reports: &[EnergyReport],
    slack: Option<&SlackSeries>,
) -> std::io::Result<()> {
    let mut out = String::from("s,E_flat,E_curved,norm_u_over_r,norm_dsu,norm_da,slack,Mg,kappa\n");
    for (k, r) in reports.iter().enumerate() {
        let slack_v = slack
            .and_then(|sl| sl.entries.get(k))
            .map_or(f64::NAN, |e| e.1);
        out.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.s,
            r.e_flat,
            r.e_curved.unwrap_or(f64::NAN),
            r.norm_u_over_r,
            r.norm_dsu,
            r.norm_da,
            slack_v,
            r.mg.unwrap_or(f64::NAN),
            r.kappa.unwrap_or(f64::NAN),
        ));
    }
    std::fs::write(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identities::TestField;
    use approx::assert_relative_eq;

    fn wave_field(p: &ConePoint, k: usize) -> Result<Jet, IdentityError> {
        TestField::OutgoingWave.jet(p, k)
    }

    #[test]
    fn ball_volume_and_gaussian_integrals() {
        // smoothed indicator of r <= 1 integrates to ~ 4π/3
        let f = |_t: f64, r: f64| 0.5 * (1.0 - ((r - 1.0) / 0.002).tanh());
        let res = hyperboloid_integral_radial(&f, 2.0, 1e-3, 2.0, false);
        assert_relative_eq!(
            res.value,
            4.0 * std::f64::consts::PI / 3.0,
            max_relative = 1e-3
        );

        let g = |_t: f64, r: f64| (-r * r).exp();
        let res = hyperboloid_integral_radial(&g, 2.0, 1e-3, 12.0, false);
        assert_relative_eq!(
            res.value,
            std::f64::consts::PI.powf(1.5),
            max_relative = 1e-8
        );

        let z = |_t: f64, _r: f64| 0.0;
        assert_eq!(hyperboloid_integral_radial(&z, 2.0, 0.01, 3.0, true).value, 0.0);
    }

    #[test]
    fn quadrature_error_estimate_shrinks_at_nominal_order() {
        let g = |_t: f64, r: f64| (-r * r).exp() * (1.0 + r);
        let exact = hyperboloid_integral_radial(&g, 2.0, 1.0 / 3200.0, 14.0, false).value;
        let coarse = hyperboloid_integral_radial(&g, 2.0, 1.0 / 50.0, 14.0, false);
        let fine = hyperboloid_integral_radial(&g, 2.0, 1.0 / 100.0, 14.0, false);
        let e_coarse = (coarse.value - exact).abs();
        let e_fine = (fine.value - exact).abs();
        // composite Simpson: 4th order
        assert!(
            e_fine <= e_coarse / 8.0,
            "no 4th-order decay: {e_coarse} -> {e_fine}"
        );
        assert!(coarse.est_error >= e_coarse / 50.0);
    }

    #[test]
    fn support_leak_detected() {
        // a field that does not vanish near r = t - 1
        let f = |_t: f64, _r: f64| 1.0;
        let res = hyperboloid_integral_radial(&f, 2.0, 0.01, 3.0, true);
        assert!(res.support_leak);
    }

    #[test]
    fn sphere_quadrature_is_exact_on_monomials() {
        let sq = SphereQuad::new(6);
        // averages: <1> = 1, <ω_i ω_j> = δ/3, <ω_1^2 ω_2^2> = 1/15, <ω_1^4> = 1/5
        let avg = |f: &dyn Fn([f64; 3]) -> f64| -> f64 {
            sq.points.iter().map(|(o, w)| w * f(*o)).sum()
        };
        assert_relative_eq!(avg(&|_| 1.0), 1.0, max_relative = 1e-13);
        assert!(avg(&|o| o[0]).abs() <= 1e-14);
        assert_relative_eq!(avg(&|o| o[0] * o[0]), 1.0 / 3.0, max_relative = 1e-12);
        assert!(avg(&|o| o[0] * o[1]).abs() <= 1e-14);
        assert_relative_eq!(avg(&|o| o[0] * o[0] * o[1] * o[1]), 1.0 / 15.0, max_relative = 1e-12);
        assert_relative_eq!(avg(&|o| o[2] * o[2] * o[2] * o[2]), 1.0 / 5.0, max_relative = 1e-12);
        assert_relative_eq!(
            avg(&|o| o[0] * o[0] * o[0] * o[0] * o[1] * o[1]),
            1.0 / 35.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn zero_slice_has_zero_energy() {
        let zero = |p: &ConePoint, k: usize| -> Result<Jet, IdentityError> {
            Ok(Jet::constant(*p, k, 0.0)?)
        };
        let slice = slice_from_closed_form(&zero, 3.0, 0.01, 2.0).unwrap();
        let rep = flat_conformal_energy(&slice).unwrap();
        assert_eq!(rep.e_flat, 0.0);
    }

    #[test]
    fn flat_energy_two_display_forms_agree() {
        // static bump (not a solution): both displayed forms must agree
        let bump = |p: &ConePoint, k: usize| TestField::PolyBump.jet(p, k);
        let slice = slice_from_closed_form(&bump, 3.0, 0.005, 4.0).unwrap();
        let rep = flat_conformal_energy(&slice).unwrap();
        assert!(rep.e_flat > 0.0);
        assert_relative_eq!(rep.e_flat, rep.e_flat_alt, max_relative = 1e-10);
        assert_relative_eq!(
            rep.e_flat,
            rep.norm_ku2u_sq + rep.sum_norm_sda_sq,
            max_relative = 1e-12
        );
    }

    #[test]
    fn exact_solution_conserves_flat_energy() {
        let dr = 1.0 / 400.0;
        let mut values = Vec::new();
        for s in [2.0, 3.0, 4.5, 6.0] {
            let r_hi = (s * s - 1.2f64 * 1.2) / (2.0 * 1.2) + 1.0;
            let slice = slice_from_closed_form(&wave_field, s, dr, r_hi).unwrap();
            let rep = flat_conformal_energy(&slice).unwrap();
            values.push(rep.e_flat);
        }
        let base = values[0];
        assert!(base > 0.0);
        for v in &values {
            assert!(
                (v - base).abs() <= 2e-4 * base,
                "conservation drift: {values:?}"
            );
        }
    }

    #[test]
    fn controlled_norm_constants_hold() {
        // Hardy chain: ‖(s/r)u‖ <= 2 ℰ^{1/2}; proof constant: ‖(s²/t)∂̄_s u‖ <= 7 ℰ^{1/2}
        for s in [2.0, 4.0] {
            let r_hi = (s * s - 1.2f64 * 1.2) / (2.0 * 1.2) + 1.0;
            let slice = slice_from_closed_form(&wave_field, s, 0.004, r_hi).unwrap();
            let rep = flat_conformal_energy(&slice).unwrap();
            assert!(rep.ratio_u_over_r <= 2.0, "{}", rep.ratio_u_over_r);
            assert!(rep.ratio_dsu <= 7.0, "{}", rep.ratio_dsu);
            assert!(rep.ratio_da <= 8.0, "{}", rep.ratio_da);
        }
        let bump = |p: &ConePoint, k: usize| TestField::PolyBump.jet(p, k);
        let slice = slice_from_closed_form(&bump, 3.0, 0.004, 4.0).unwrap();
        let rep = flat_conformal_energy(&slice).unwrap();
        assert!(rep.ratio_u_over_r <= 2.0);
        assert!(rep.ratio_dsu <= 7.0);
    }

    #[test]
    fn curved_energy_flat_case_matches() {
        let bump = |p: &ConePoint, k: usize| TestField::PolyBump.jet(p, k);
        let slice = slice_from_closed_form(&bump, 3.0, 0.01, 4.0).unwrap();
        let rep = flat_conformal_energy(&slice).unwrap();
        let h = MetricPerturbation::zero();
        let res = curved_conformal_energy(
            &slice,
            &CurvedSource::Analytic(&h),
            0.05,
            rep.e_flat,
            1,
        )
        .unwrap();
        assert_relative_eq!(res.e_curved, rep.e_flat, max_relative = 1e-10);
        assert_relative_eq!(res.kappa, 1.0, max_relative = 1e-10);
        assert!(res.mg.abs() <= 1e-12);
    }

    #[test]
    fn curved_energy_structure_condition_trips() {
        let bump = |p: &ConePoint, k: usize| TestField::PolyBump.jet(p, k);
        let slice = slice_from_closed_form(&bump, 3.0, 0.01, 4.0).unwrap();
        let rep = flat_conformal_energy(&slice).unwrap();
        let h = MetricPerturbation::conformal(0.2);
        let err = curved_conformal_energy(
            &slice,
            &CurvedSource::Analytic(&h),
            0.05,
            rep.e_flat,
            1,
        );
        assert!(matches!(err, Err(EnergyError::StructureConditionFailed { .. })));
    }

    #[test]
    fn quasilinear_curved_energy_stays_equivalent() {
        // small-amplitude wave, h = Q ∂u from the slice's own field
        let small_wave = |p: &ConePoint, k: usize| -> Result<Jet, IdentityError> {
            Ok(wave_field(p, k)?.scale(2e-4))
        };
        let s = 3.0;
        let r_hi = (s * s - 1.2f64 * 1.2) / (2.0 * 1.2) + 1.0;
        let slice = slice_from_closed_form(&small_wave, s, 0.004, r_hi).unwrap();
        let rep = flat_conformal_energy(&slice).unwrap();
        let q = crate::identities::reference_null_form();
        let res = curved_conformal_energy(
            &slice,
            &CurvedSource::SelfQuasilinear(&q),
            0.05,
            rep.e_flat,
            1,
        )
        .unwrap();
        assert!(res.kappa < 1.25, "kappa = {}", res.kappa);
        assert!(res.mg >= 0.0);
    }

    #[test]
    fn hardy_ratios_below_one() {
        let fields: Vec<Box<dyn Fn(f64) -> (f64, f64)>> = vec![
            Box::new(|r: f64| ((-r * r).exp(), -2.0 * r * (-r * r).exp())),
            Box::new(|r: f64| {
                (r * (-r * r).exp(), (1.0 - 2.0 * r * r) * (-r * r).exp())
            }),
        ];
        for f in &fields {
            let c = hardy_check(f.as_ref(), 0.002, 14.0).unwrap();
            assert!(c.ratio <= 1.0, "ratio {}", c.ratio);
        }
        let zero = |_: f64| (0.0, 0.0);
        assert_eq!(hardy_check(&zero, 0.01, 5.0).unwrap().ratio, 0.0);
    }

    #[test]
    fn commuted_energy_reduces_to_flat_for_identity_pair() {
        let bump = |p: &ConePoint, k: usize| TestField::PolyBump.jet(p, k);
        let slice = slice_from_closed_form(&bump, 3.0, 0.01, 4.0).unwrap();
        let rep = flat_conformal_energy(&slice).unwrap();
        let sphere = SphereQuad::new(8);
        let pair = MultiIndexPair::new([0; 4], [0; 3], 2).unwrap();
        let e = commuted_flat_energy(&slice, &pair, &sphere, 1).unwrap();
        assert_relative_eq!(e, rep.e_flat, max_relative = 1e-6);
    }

    #[test]
    fn sobolev_constant_stable_under_refinement() {
        let bump = |p: &ConePoint, k: usize| TestField::PolyBump.jet(p, k);
        let sphere = SphereQuad::new(8);
        let slice1 = slice_from_closed_form(&bump, 2.2, 0.02, 4.0).unwrap();
        let slice2 = slice_from_closed_form(&bump, 2.2, 0.01, 4.0).unwrap();
        let c1 = sobolev_constant(&slice1, &sphere, 1).unwrap();
        let c2 = sobolev_constant(&slice2, &sphere, 1).unwrap();
        assert!(
            (c1 - c2).abs() <= 0.1 * c1.max(c2),
            "Sobolev constant unstable: {c1} vs {c2}"
        );
    }

    #[test]
    fn slack_nonnegative_for_conserved_trajectory() {
        let dr = 1.0 / 300.0;
        let mut reports = Vec::new();
        for s in [2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0] {
            let r_hi = (s * s - 1.2f64 * 1.2) / (2.0 * 1.2) + 1.0;
            let slice = slice_from_closed_form(&wave_field, s, dr, r_hi).unwrap();
            reports.push(flat_conformal_energy(&slice).unwrap());
        }
        let series =
            energy_inequality_slack(&reports, &|_| 0.0, true, 0.0).unwrap();
        assert!(series.violation.is_none(), "{series:?}");
        // conserved: slack stays near zero as well
        for (_, sl) in &series.entries {
            assert!(sl.abs() <= 10.0 * series.tolerance.max(1e-6), "{series:?}");
        }
    }

    #[test]
    fn csv_header_and_formatting() {
        let dir = std::env::temp_dir().join("hyperlab_energy_csv");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("traj.csv");
        let bump = |p: &ConePoint, k: usize| TestField::PolyBump.jet(p, k);
        let slice = slice_from_closed_form(&bump, 3.0, 0.02, 4.0).unwrap();
        let rep = flat_conformal_energy(&slice).unwrap();
        write_reports_csv(&path, &[rep], None).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "s,E_flat,E_curved,norm_u_over_r,norm_dsu,norm_da,slack,Mg,kappa\n"
        ));
        // 17 significant digits = 16 digits after the point in scientific form
        assert!(text.lines().nth(1).unwrap().contains("e"));
    }
}
