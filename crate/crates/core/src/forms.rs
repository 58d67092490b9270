//! Constant quadratic and cubic forms, the null condition, and their
//! hyperbolic-frame components.
//!
//! A form is *null* when its full contraction vanishes on every null covector
//! `ξ = (1, ω)`, `|ω| = 1`.  Nullity is decided by sampling the contraction on
//! a deterministic 642-vertex subdivided icosahedron: a trigonometric
//! polynomial of degree at most three that vanishes at that many well-spread
//! points vanishes identically within floating tolerance.

use std::fmt;
use std::path::Path;
use std::rc::Rc;

use once_cell::sync::Lazy;
use thiserror::Error;

use crate::frame::{frame_matrices, ConePoint, FrameError};
use crate::jets::{Jet, JetError};

#[derive(Debug, Error)]
pub enum FormError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error("metric g = m + h is not Lorentzian at (t={t}, r={r})")]
    NonLorentzian { t: f64, r: f64 },
}

/// Minkowski metric `m^{αβ} = diag(1, -1, -1, -1)`.
pub fn minkowski() -> [[f64; 4]; 4] {
    let mut m = [[0.0; 4]; 4];
    m[0][0] = 1.0;
    for a in 1..4 {
        m[a][a] = -1.0;
    }
    m
}

/// A constant two-tensor `T^{αβ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticForm {
    pub coeffs: [[f64; 4]; 4],
}

/// A constant cubic form `Q^{αβγ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicForm {
    pub coeffs: [[[f64; 4]; 4]; 4],
}

impl QuadraticForm {
    pub fn zero() -> Self {
        QuadraticForm { coeffs: [[0.0; 4]; 4] }
    }

    pub fn minkowski() -> Self {
        QuadraticForm { coeffs: minkowski() }
    }

    /// `T^{(αβ)}`.
    pub fn symmetrized(&self) -> Self {
        let mut out = [[0.0; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                out[a][b] = 0.5 * (self.coeffs[a][b] + self.coeffs[b][a]);
            }
        }
        QuadraticForm { coeffs: out }
    }

    pub fn norm(&self) -> f64 {
        self.coeffs
            .iter()
            .flatten()
            .fold(0.0f64, |m, c| m.max(c.abs()))
    }

    pub fn contract(&self, xi: &[f64; 4]) -> f64 {
        let mut acc = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                acc += self.coeffs[a][b] * xi[a] * xi[b];
            }
        }
        acc
    }
}

impl CubicForm {
    pub fn zero() -> Self {
        CubicForm { coeffs: [[[0.0; 4]; 4]; 4] }
    }

    /// `Q^{αβγ} = m^{αβ} n^γ`, a null form for any constant `n`.
    pub fn minkowski_tensor(n: [f64; 4]) -> Self {
        let m = minkowski();
        let mut q = [[[0.0; 4]; 4]; 4];
        for (a, row) in m.iter().enumerate() {
            for (b, mab) in row.iter().enumerate() {
                for (g, ng) in n.iter().enumerate() {
                    q[a][b][g] = mab * ng;
                }
            }
        }
        CubicForm { coeffs: q }
    }

    /// The non-null reference form with only `Q^{000} = d`.
    pub fn time_cubed(d: f64) -> Self {
        let mut q = CubicForm::zero();
        q.coeffs[0][0][0] = d;
        q
    }

    /// Symmetrization in the first two slots; the contraction
    /// `Q^{αβγ} ∂_γ u ∂_α ∂_β u` only sees this part.
    pub fn symmetrized(&self) -> Self {
        let mut out = [[[0.0; 4]; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                for g in 0..4 {
                    out[a][b][g] = 0.5 * (self.coeffs[a][b][g] + self.coeffs[b][a][g]);
                }
            }
        }
        CubicForm { coeffs: out }
    }

    pub fn norm(&self) -> f64 {
        self.coeffs
            .iter()
            .flatten()
            .flatten()
            .fold(0.0f64, |m, c| m.max(c.abs()))
    }

    pub fn contract(&self, xi: &[f64; 4]) -> f64 {
        let mut acc = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                for g in 0..4 {
                    acc += self.coeffs[a][b][g] * xi[a] * xi[b] * xi[g];
                }
            }
        }
        acc
    }
}

/// Either kind of constant form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Form {
    Quadratic(QuadraticForm),
    Cubic(CubicForm),
}

// ---------------------------------------------------------------------------
// Sphere mesh and the null test
// ---------------------------------------------------------------------------

/// Unit-sphere directions from an icosahedron subdivided three times
/// (12 -> 42 -> 162 -> 642 vertices), deterministic and well spread.
pub fn icosphere_642() -> &'static [[f64; 3]] {
    &SPHERE_642
}

static SPHERE_642: Lazy<Vec<[f64; 3]>> = Lazy::new(|| {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut verts: Vec<[f64; 3]> = vec![
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    for v in &mut verts {
        normalize(v);
    }
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..3 {
        let mut midpoint = std::collections::HashMap::new();
        let mut new_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0usize; 3];
            for e in 0..3 {
                let (i, j) = (f[e], f[(e + 1) % 3]);
                let key = (i.min(j), i.max(j));
                mid[e] = *midpoint.entry(key).or_insert_with(|| {
                    let mut v = [
                        0.5 * (verts[i][0] + verts[j][0]),
                        0.5 * (verts[i][1] + verts[j][1]),
                        0.5 * (verts[i][2] + verts[j][2]),
                    ];
                    normalize(&mut v);
                    verts.push(v);
                    verts.len() - 1
                });
            }
            new_faces.push([f[0], mid[0], mid[2]]);
            new_faces.push([f[1], mid[1], mid[0]]);
            new_faces.push([f[2], mid[2], mid[1]]);
            new_faces.push([mid[0], mid[1], mid[2]]);
        }
        faces = new_faces;
    }
    assert_eq!(verts.len(), 642);
    verts
});

fn normalize(v: &mut [f64; 3]) {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    for c in v {
        *c /= n;
    }
}

/// Outcome of the null test: the verdict plus, when non-null, the direction
/// maximising the contraction.
#[derive(Debug, Clone, Copy)]
pub struct NullVerdict {
    pub is_null: bool,
    pub max_contraction: f64,
    pub witness: Option<[f64; 3]>,
}

/// Evaluates the contraction on `ξ = (1, ω)` over the 642-point mesh.
pub fn is_null(form: &Form) -> NullVerdict {
    let norm = match form {
        Form::Quadratic(t) => t.norm(),
        Form::Cubic(q) => q.norm(),
    };
    let mut max_val = 0.0f64;
    let mut witness = None;
    for omega in icosphere_642() {
        let xi = [1.0, omega[0], omega[1], omega[2]];
        let c = match form {
            Form::Quadratic(t) => t.contract(&xi),
            Form::Cubic(q) => q.contract(&xi),
        }
        .abs();
        if c > max_val {
            max_val = c;
            witness = Some(*omega);
        }
    }
    let is_null = max_val <= 1e-12 * norm.max(f64::MIN_POSITIVE);
    NullVerdict {
        is_null,
        max_contraction: max_val,
        witness: if is_null { None } else { witness },
    }
}

// ---------------------------------------------------------------------------
// Hyperbolic components
// ---------------------------------------------------------------------------

/// `T̄^{αβ} = T^{α'β'} Ψ̄_{α'}^α Ψ̄_{β'}^β` at `p`.
pub fn quadratic_hyperbolic_components(t: &QuadraticForm, p: &ConePoint) -> [[f64; 4]; 4] {
    let psi = frame_matrices(p).psi;
    let mut out = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            let mut acc = 0.0;
            for ap in 0..4 {
                for bp in 0..4 {
                    acc += t.coeffs[ap][bp] * psi[ap][a] * psi[bp][b];
                }
            }
            out[a][b] = acc;
        }
    }
    out
}

/// `Q̄^{αβγ}` at `p` (triple `Ψ̄` contraction).
pub fn cubic_hyperbolic_components(q: &CubicForm, p: &ConePoint) -> [[[f64; 4]; 4]; 4] {
    let psi = frame_matrices(p).psi;
    let mut out = [[[0.0; 4]; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            for g in 0..4 {
                let mut acc = 0.0;
                for ap in 0..4 {
                    for bp in 0..4 {
                        for gp in 0..4 {
                            acc += q.coeffs[ap][bp][gp] * psi[ap][a] * psi[bp][b] * psi[gp][g];
                        }
                    }
                }
                out[a][b][g] = acc;
            }
        }
    }
    out
}

/// Spec-level entry point covering both kinds.
pub fn hyperbolic_components(form: &Form, p: &ConePoint) -> Vec<f64> {
    match form {
        Form::Quadratic(t) => quadratic_hyperbolic_components(t, p)
            .iter()
            .flatten()
            .copied()
            .collect(),
        Form::Cubic(q) => cubic_hyperbolic_components(q, p)
            .iter()
            .flatten()
            .flatten()
            .copied()
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Weighted bound profiles over cone regions
// ---------------------------------------------------------------------------

/// A scan region: log-spaced `s`, uniform `r/t`, and a deterministic
/// direction set (coordinate axes plus the icosahedron vertices).
#[derive(Debug, Clone, Copy)]
pub struct Region {
    pub s_lo: f64,
    pub s_hi: f64,
    pub n_s: usize,
    pub rho_max: f64,
    pub n_rho: usize,
}

impl Region {
    pub fn standard() -> Self {
        Region { s_lo: 2.0, s_hi: 10.0, n_s: 24, rho_max: 0.95, n_rho: 40 }
    }

    fn points(&self) -> Vec<ConePoint> {
        let mut dirs: Vec<[f64; 3]> = vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        dirs.extend_from_slice(&icosphere_642()[..12]);
        let mut pts = Vec::new();
        for is in 0..self.n_s {
            let f = is as f64 / (self.n_s - 1).max(1) as f64;
            let s = self.s_lo * (self.s_hi / self.s_lo).powf(f);
            let cap = ((s * s - 1.0) / (s * s + 1.0) - 1e-6).min(self.rho_max);
            for ir in 0..self.n_rho {
                let rho = cap * ir as f64 / (self.n_rho - 1) as f64;
                let t = s / (1.0 - rho * rho).sqrt();
                let r = rho * t;
                for d in &dirs {
                    if let Ok(p) = ConePoint::new(t, [r * d[0], r * d[1], r * d[2]]) {
                        pts.push(p);
                    }
                }
            }
        }
        pts
    }
}

/// One weighted component supremum: `sup (s/t)^k |component|`.
#[derive(Debug, Clone)]
pub struct WeightedSup {
    /// Component label, e.g. `Q[0][0][0]` or `T[0][1]`.
    pub component: String,
    /// Number of zero indices, i.e. the `(s/t)` weight power.
    pub weight_power: usize,
    pub sup: f64,
    pub attained_at: ConePoint,
}

/// Profile of the weighted component list over a region.
#[derive(Debug, Clone)]
pub struct NullBoundProfile {
    /// `sup |T̄^{00}|` (quadratic forms only).
    pub sup_t00: Option<f64>,
    /// `sup (s/t) |Q̄^{000}|` (cubic forms only).
    pub sup_weighted_q000: Option<f64>,
    pub weighted: Vec<WeightedSup>,
    /// `sup (t/s)` over the same grid, for growth comparisons.
    pub sup_t_over_s: f64,
}

/// Scans the weighted hyperbolic components of `form` over `region`.
pub fn null_bound_profile(form: &Form, region: &Region) -> NullBoundProfile {
    let pts = region.points();
    let mut weighted: Vec<WeightedSup> = Vec::new();
    let mut sup_t_over_s = 0.0f64;
    fn record(store: &mut Vec<WeightedSup>, label: String, k: usize, val: f64, p: &ConePoint) {
        if let Some(slot) = store.iter_mut().find(|w| w.component == label) {
            if val > slot.sup {
                slot.sup = val;
                slot.attained_at = *p;
            }
        } else {
            store.push(WeightedSup { component: label, weight_power: k, sup: val, attained_at: *p });
        }
    }
    for p in &pts {
        let w = p.s() / p.t();
        sup_t_over_s = sup_t_over_s.max(1.0 / w);
        match form {
            Form::Quadratic(t) => {
                let tb = quadratic_hyperbolic_components(t, p);
                for a in 0..4 {
                    for b in 0..4 {
                        let k = (a == 0) as usize + (b == 0) as usize;
                        let val = w.powi(k as i32) * tb[a][b].abs();
                        record(&mut weighted, format!("T[{a}][{b}]"), k, val, p);
                    }
                }
            }
            Form::Cubic(q) => {
                let qb = cubic_hyperbolic_components(q, p);
                for a in 0..4 {
                    for b in 0..4 {
                        for g in 0..4 {
                            let k = (a == 0) as usize + (b == 0) as usize + (g == 0) as usize;
                            let val = w.powi(k as i32) * qb[a][b][g].abs();
                            record(&mut weighted, format!("Q[{a}][{b}][{g}]"), k, val, p);
                        }
                    }
                }
            }
        }
    }
    let sup_t00 = weighted
        .iter()
        .find(|w| w.component == "T[0][0]")
        .map(|w| w.sup);
    // For the headline Q̄^000 number the weight is a single (s/t): the
    // null-condition bound is |Q̄^000| <= C (t/s).
    let sup_weighted_q000 = match form {
        Form::Cubic(q) => {
            let mut sup = 0.0f64;
            for p in &pts {
                let w = p.s() / p.t();
                let qb = cubic_hyperbolic_components(q, p);
                sup = sup.max(w * qb[0][0][0].abs());
            }
            Some(sup)
        }
        Form::Quadratic(_) => None,
    };
    NullBoundProfile { sup_t00, sup_weighted_q000, weighted, sup_t_over_s }
}

// ---------------------------------------------------------------------------
// Semi-linear elimination
// ---------------------------------------------------------------------------

/// Record of the change of unknown `v = u + (σ/2) u^2` that removes a
/// semi-linear term with coefficient matrix `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemilinearElimination {
    pub sigma: f64,
    pub description: String,
}

pub fn semilinear_eliminate(n: &QuadraticForm) -> SemilinearElimination {
    let sigma = n.coeffs[0][0];
    let description = if sigma == 0.0 {
        "identity transform (N^00 = 0)".to_string()
    } else {
        format!("v = u + ({sigma}/2) u^2")
    };
    SemilinearElimination { sigma, description }
}

// ---------------------------------------------------------------------------
// Metric perturbations h^{αβ}
// ---------------------------------------------------------------------------

type HJetFn = Rc<dyn Fn(&ConePoint, usize) -> Result<[[Jet; 4]; 4], FormError>>;

/// A metric perturbation `h^{αβ}(p)` with jet access; `g = m + h`.
#[derive(Clone)]
pub struct MetricPerturbation {
    jets: HJetFn,
    label: String,
}

impl fmt::Debug for MetricPerturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MetricPerturbation({})", self.label)
    }
}

fn jet_matrix<F: Fn(usize, usize) -> Result<Jet, FormError>>(
    f: F,
) -> Result<[[Jet; 4]; 4], FormError> {
    let mut rows = Vec::with_capacity(4);
    for a in 0..4 {
        let mut row = Vec::with_capacity(4);
        for b in 0..4 {
            row.push(f(a, b)?);
        }
        rows.push(<[Jet; 4]>::try_from(row).expect("row of 4"));
    }
    Ok(<[[Jet; 4]; 4]>::try_from(rows).expect("4 rows"))
}

impl MetricPerturbation {
    pub fn zero() -> Self {
        MetricPerturbation {
            jets: Rc::new(|p, k| jet_matrix(|_, _| Ok(Jet::constant(*p, k, 0.0)?))),
            label: "h = 0".into(),
        }
    }

    /// Conformal perturbation `h^{αβ} = ε m^{αβ}`.
    pub fn conformal(eps: f64) -> Self {
        MetricPerturbation {
            jets: Rc::new(move |p, k| {
                let m = minkowski();
                jet_matrix(|a, b| Ok(Jet::constant(*p, k, eps * m[a][b])?))
            }),
            label: format!("h = {eps} m"),
        }
    }

    /// Quasilinear coupling `h^{αβ} = Q^{αβγ} ∂_γ u` for a field given by its
    /// jet builder.
    pub fn quasilinear(
        q: CubicForm,
        field: Rc<dyn Fn(&ConePoint, usize) -> Result<Jet, FormError>>,
    ) -> Self {
        MetricPerturbation {
            jets: Rc::new(move |p, k| {
                let u = field(p, k + 1)?;
                let mut grads = Vec::with_capacity(4);
                for axis in 0..4 {
                    grads.push(u.derivative(axis)?);
                }
                jet_matrix(|a, b| {
                    let mut acc = Jet::constant(*p, k, 0.0)?;
                    for (g, du) in grads.iter().enumerate() {
                        if q.coeffs[a][b][g] != 0.0 {
                            acc = acc.checked_add(&du.scale(q.coeffs[a][b][g]))?;
                        }
                    }
                    Ok(acc)
                })
            }),
            label: "h = Q ∂u".into(),
        }
    }

    /// Jets of all components at `p`, order `k`.
    pub fn jets(&self, p: &ConePoint, k: usize) -> Result<[[Jet; 4]; 4], FormError> {
        (self.jets)(p, k)
    }

    /// Point values `h^{αβ}(p)`, symmetrized.
    pub fn values(&self, p: &ConePoint) -> Result<[[f64; 4]; 4], FormError> {
        let jets = self.jets(p, 0)?;
        let mut out = [[0.0; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                out[a][b] = 0.5 * (jets[a][b].value() + jets[b][a].value());
            }
        }
        Ok(out)
    }

    /// Checks that `g = m + h` has Lorentzian signature `(+,-,-,-)` at `p`
    /// via the alternating leading-principal-minor pattern.
    pub fn check_lorentzian(&self, p: &ConePoint) -> Result<(), FormError> {
        check_lorentzian_values(&self.values(p)?, p)
    }
}

/// Signature check for `g = m + h` from point values of `h`.
pub fn check_lorentzian_values(h: &[[f64; 4]; 4], p: &ConePoint) -> Result<(), FormError> {
    let m = minkowski();
    let mut g = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            g[a][b] = m[a][b] + 0.5 * (h[a][b] + h[b][a]);
        }
    }
    for k in 1..=4 {
        let minor = leading_minor(&g, k);
        let expected_sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        if minor.abs() < 1e-12 || minor.signum() != expected_sign {
            return Err(FormError::NonLorentzian { t: p.t(), r: p.r() });
        }
    }
    Ok(())
}

fn leading_minor(g: &[[f64; 4]; 4], k: usize) -> f64 {
    let mut a = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            a[i][j] = g[i][j];
        }
    }
    let mut det = 1.0;
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            a.swap(pivot, col);
            det = -det;
        }
        det *= a[col][col];
        for row in col + 1..k {
            let f = a[row][col] / a[col][col];
            for j in col..k {
                a[row][j] -= f * a[col][j];
            }
        }
    }
    det
}

// ---------------------------------------------------------------------------
// Plain-text coefficient files
// ---------------------------------------------------------------------------

/// Forms loaded from a coefficient file: lines `Q a b c value` and
/// `T a b value`, indices `0..=3`, `#` comments, missing entries zero.
#[derive(Debug, Clone, Default)]
pub struct FormFile {
    pub quadratic: Option<QuadraticForm>,
    pub cubic: Option<CubicForm>,
}

pub fn load_form_file(path: &Path) -> Result<FormFile, FormError> {
    parse_form_file(&std::fs::read_to_string(path)?)
}

pub fn parse_form_file(text: &str) -> Result<FormFile, FormError> {
    let mut out = FormFile::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let err = |msg: &str| FormError::Parse { line: lineno + 1, msg: msg.to_string() };
        let idx = |tok: &str| -> Result<usize, FormError> {
            let v: usize = tok.parse().map_err(|_| err("bad index"))?;
            if v > 3 {
                return Err(err("index out of range 0..=3"));
            }
            Ok(v)
        };
        match toks[0] {
            "Q" => {
                if toks.len() != 5 {
                    return Err(err("expected `Q a b c value`"));
                }
                let (a, b, g) = (idx(toks[1])?, idx(toks[2])?, idx(toks[3])?);
                let v: f64 = toks[4].parse().map_err(|_| err("bad value"))?;
                out.cubic.get_or_insert_with(CubicForm::zero).coeffs[a][b][g] = v;
            }
            "T" => {
                if toks.len() != 4 {
                    return Err(err("expected `T a b value`"));
                }
                let (a, b) = (idx(toks[1])?, idx(toks[2])?);
                let v: f64 = toks[3].parse().map_err(|_| err("bad value"))?;
                out.quadratic.get_or_insert_with(QuadraticForm::zero).coeffs[a][b] = v;
            }
            other => return Err(err(&format!("unknown record `{other}`"))),
        }
    }
    Ok(out)
}

pub fn save_form_file(path: &Path, file: &FormFile) -> Result<(), FormError> {
    let mut text = String::new();
    if let Some(t) = &file.quadratic {
        for a in 0..4 {
            for b in 0..4 {
                if t.coeffs[a][b] != 0.0 {
                    text.push_str(&format!("T {a} {b} {:.17e}\n", t.coeffs[a][b]));
                }
            }
        }
    }
    if let Some(q) = &file.cubic {
        for a in 0..4 {
            for b in 0..4 {
                for g in 0..4 {
                    if q.coeffs[a][b][g] != 0.0 {
                        text.push_str(&format!("Q {a} {b} {g} {:.17e}\n", q.coeffs[a][b][g]));
                    }
                }
            }
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pt(t: f64, x: [f64; 3]) -> ConePoint {
        ConePoint::new(t, x).unwrap()
    }

    #[test]
    fn icosphere_has_unit_vertices() {
        let mesh = icosphere_642();
        assert_eq!(mesh.len(), 642);
        for v in mesh {
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            assert_relative_eq!(n, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn minkowski_is_null_quadratic() {
        let verdict = is_null(&Form::Quadratic(QuadraticForm::minkowski()));
        assert!(verdict.is_null, "max contraction {}", verdict.max_contraction);
    }

    #[test]
    fn minkowski_tensor_n_is_null_cubic() {
        for n in [[1.0, 0.0, 0.0, 0.0], [0.3, -1.0, 2.0, 0.7]] {
            let verdict = is_null(&Form::Cubic(CubicForm::minkowski_tensor(n)));
            assert!(verdict.is_null);
        }
    }

    #[test]
    fn q000_is_not_null_with_witness() {
        let verdict = is_null(&Form::Cubic(CubicForm::time_cubed(1.0)));
        assert!(!verdict.is_null);
        assert_relative_eq!(verdict.max_contraction, 1.0, max_relative = 1e-12);
        assert!(verdict.witness.is_some());
    }

    #[test]
    fn antisymmetric_quadratic_is_null() {
        let mut t = QuadraticForm::zero();
        t.coeffs[0][1] = 1.0;
        t.coeffs[1][0] = -1.0;
        assert!(is_null(&Form::Quadratic(t)).is_null);
    }

    #[test]
    fn null_test_invariant_under_symmetrization() {
        let mut q = CubicForm::zero();
        q.coeffs[0][1][2] = 2.0;
        q.coeffs[1][0][2] = -1.0;
        let v1 = is_null(&Form::Cubic(q));
        let v2 = is_null(&Form::Cubic(q.symmetrized()));
        assert_eq!(v1.is_null, v2.is_null);
        assert_relative_eq!(v1.max_contraction, v2.max_contraction, max_relative = 1e-10);
    }

    #[test]
    fn hyperbolic_components_match_closed_forms() {
        let p = pt(5.0, [3.0, 0.0, 0.0]);
        let t_over_s: f64 = 5.0 / 4.0;

        // only Q^{000} = 1: Q̄^{000} = (t/s)^3
        let q = CubicForm::time_cubed(1.0);
        let qb = cubic_hyperbolic_components(&q, &p);
        assert_relative_eq!(qb[0][0][0], t_over_s.powi(3), max_relative = 1e-13);

        // Q = m ⊗ e_0: Q̄^{000} = m̄^{00} (t/s) = t/s
        let q = CubicForm::minkowski_tensor([1.0, 0.0, 0.0, 0.0]);
        let qb = cubic_hyperbolic_components(&q, &p);
        assert_relative_eq!(qb[0][0][0], t_over_s, max_relative = 1e-13);

        // T = m at a radial point: T̄ = m̄
        let p0 = pt(2.0, [0.0; 3]);
        let tb = quadratic_hyperbolic_components(&QuadraticForm::minkowski(), &p0);
        assert_relative_eq!(tb[0][0], 1.0, max_relative = 1e-14);
        for a in 1..4 {
            assert_relative_eq!(tb[a][a], -1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn null_decomposition_of_t00_pointwise() {
        // T̄^00 = ((t-r)/(t+r)) T^00 + (t/(t+r)) T^{0β} ξ_β + (t/(t+r)) T^{α0} ξ_α
        // with ξ = (r/t, -x/t), valid for null T; checked for r >= t/2.
        let forms = [
            QuadraticForm::minkowski(),
            {
                let mut t = QuadraticForm::zero();
                t.coeffs[0][2] = 1.5;
                t.coeffs[2][0] = -1.5;
                t
            },
        ];
        for t in forms {
            assert!(is_null(&Form::Quadratic(t)).is_null);
            for (tt, x) in [
                (5.0, [3.0, 0.0, 0.0]),
                (9.0, [2.0, 4.0, 1.0]),
                (12.0, [-6.0, 3.0, 2.0]),
            ] {
                let p = pt(tt, x);
                let r = p.r();
                assert!(r >= p.t() / 2.0 - 1e-12, "test point not in wave zone");
                let tb = quadratic_hyperbolic_components(&t, &p);
                let xi = [r / p.t(), -x[0] / p.t(), -x[1] / p.t(), -x[2] / p.t()];
                let mut t0b = 0.0;
                let mut ta0 = 0.0;
                for a in 0..4 {
                    t0b += t.coeffs[0][a] * xi[a];
                    ta0 += t.coeffs[a][0] * xi[a];
                }
                let rhs = (p.t() - r) / (p.t() + r) * t.coeffs[0][0]
                    + p.t() / (p.t() + r) * (t0b + ta0);
                assert!(
                    (tb[0][0] - rhs).abs() <= 1e-12 * tb[0][0].abs().max(1.0),
                    "{} vs {rhs}",
                    tb[0][0]
                );
            }
        }
    }

    #[test]
    fn weighted_components_are_degree_zero_homogeneous() {
        // (s/t)^k (component with k zero indices) is invariant under p -> λp.
        let mut q = CubicForm::zero();
        q.coeffs[0][1][2] = 1.0;
        q.coeffs[0][0][1] = -0.5;
        q.coeffs[3][3][3] = 0.25;
        let p = pt(6.0, [2.0, -1.0, 0.5]);
        for (a, b, g) in [(0, 0, 0), (0, 1, 2), (1, 0, 0), (3, 3, 3), (0, 0, 1)] {
            let k = (a == 0) as i32 + (b == 0) as i32 + (g == 0) as i32;
            let f = move |t: f64, x: [f64; 3]| -> f64 {
                let pp = ConePoint::unchecked(t, x);
                let w: f64 = (pp.s() / pp.t()).powi(k);
                w * cubic_hyperbolic_components(&q, &pp)[a][b][g]
            };
            match crate::frame::homogeneity_degree(&f, &p, &[1.0, 1.5, 2.0, 2.5]) {
                Ok(fit) => {
                    assert!(fit.degree.abs() <= 1e-8, "Q̄[{a}{b}{g}] degree {}", fit.degree)
                }
                Err(FrameError::DegenerateSample { .. }) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn bound_profile_closed_forms() {
        let region = Region::standard();

        // null Q = m ⊗ e0: sup (s/t)|Q̄^000| = sup (s/t)(t/s) = 1
        let q = CubicForm::minkowski_tensor([1.0, 0.0, 0.0, 0.0]);
        let prof = null_bound_profile(&Form::Cubic(q), &region);
        assert_relative_eq!(prof.sup_weighted_q000.unwrap(), 1.0, max_relative = 1e-12);

        // non-null Q^{000} = 1: sup (s/t)|Q̄^000| = sup (t/s)^2
        let q = CubicForm::time_cubed(1.0);
        let prof = null_bound_profile(&Form::Cubic(q), &region);
        let expect = prof.sup_t_over_s * prof.sup_t_over_s;
        assert_relative_eq!(prof.sup_weighted_q000.unwrap(), expect, max_relative = 1e-10);

        // T = m: sup |T̄^00| = 1 (m̄^00 = 1 everywhere)
        let prof = null_bound_profile(&Form::Quadratic(QuadraticForm::minkowski()), &region);
        assert_relative_eq!(prof.sup_t00.unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn null_profile_stable_under_region_growth() {
        let q = Form::Cubic(CubicForm::minkowski_tensor([0.0, 1.0, 0.0, 0.0]));
        let small = null_bound_profile(&q, &Region { s_hi: 6.0, ..Region::standard() });
        let large = null_bound_profile(&q, &Region { s_hi: 20.0, ..Region::standard() });
        let (a, b) = (
            small.sup_weighted_q000.unwrap(),
            large.sup_weighted_q000.unwrap(),
        );
        assert!((a - b).abs() <= 0.05 * a.max(b), "null sup drifted: {a} vs {b}");
    }

    #[test]
    fn semilinear_elimination_reads_n00() {
        assert_eq!(semilinear_eliminate(&QuadraticForm::minkowski()).sigma, 1.0);
        assert_eq!(semilinear_eliminate(&QuadraticForm::zero()).sigma, 0.0);
        let mut n = QuadraticForm::zero();
        n.coeffs[0][0] = -2.0;
        assert_eq!(semilinear_eliminate(&n).sigma, -2.0);
    }

    #[test]
    fn form_file_roundtrip() {
        let mut q = CubicForm::zero();
        q.coeffs[0][0][0] = 1.0;
        q.coeffs[1][2][3] = -0.25;
        let mut t = QuadraticForm::zero();
        t.coeffs[0][1] = 3.5;
        let dir = std::env::temp_dir().join("hyperlab_form_file_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("form.txt");
        save_form_file(&path, &FormFile { quadratic: Some(t), cubic: Some(q) }).unwrap();
        let loaded = load_form_file(&path).unwrap();
        assert_eq!(loaded.cubic.unwrap(), q);
        assert_eq!(loaded.quadratic.unwrap(), t);

        let parsed = parse_form_file("# comment\nQ 0 0 0 2.0\n").unwrap();
        assert_eq!(parsed.cubic.unwrap().coeffs[0][0][0], 2.0);
        assert!(parse_form_file("Q 0 0 4 1.0").is_err());
        assert!(parse_form_file("X 0 0 1.0").is_err());
    }

    #[test]
    fn lorentzian_check() {
        let p = pt(4.0, [1.0, 0.0, 0.0]);
        MetricPerturbation::zero().check_lorentzian(&p).unwrap();
        MetricPerturbation::conformal(0.01).check_lorentzian(&p).unwrap();
        assert!(MetricPerturbation::conformal(-1.5).check_lorentzian(&p).is_err());
    }
}
