//! Descriptor geometries, their kernels, and kernel-only Hilbert-space
//! distances.
//!
//! Three descriptor spaces are supported: plain vectors, symmetric positive
//! definite (SPD) matrices, and points on the Grassmannian `G(p, d)` stored as
//! `d × p` matrices with orthonormal columns. A [`KernelSpec`] ties one of
//! them to a compatible kernel and bandwidth and is the only place kernel
//! values are produced.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use libm::{exp, fabs, log, sqrt};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, log_det_from_cholesky, log_det_spd, symmetric_eigen, Matrix};

/// Relative tolerance for the symmetry check on SPD inputs.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Entrywise tolerance on `UᵀU - I` for Grassmann inputs.
pub const ORTHONORMALITY_TOL: f64 = 1e-8;
/// Most negative squared distance accepted as rounding noise.
pub const NEGATIVE_DIST_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeometryKind {
    Euclidean,
    Spd,
    Grassmann,
}

/// Shape of a descriptor space. `subdim` is only meaningful for Grassmann.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Geometry {
    pub kind: GeometryKind,
    pub dim: usize,
    pub subdim: usize,
}

impl Geometry {
    pub fn euclidean(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::param("d", "must be positive"));
        }
        Ok(Geometry {
            kind: GeometryKind::Euclidean,
            dim: d,
            subdim: 0,
        })
    }

    pub fn spd(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n", "must be positive"));
        }
        Ok(Geometry {
            kind: GeometryKind::Spd,
            dim: n,
            subdim: 0,
        })
    }

    pub fn grassmann(d: usize, p: usize) -> Result<Self> {
        if p == 0 || p > d {
            return Err(Error::param(
                "p",
                format!("need 0 < p <= d, got p={p}, d={d}"),
            ));
        }
        Ok(Geometry {
            kind: GeometryKind::Grassmann,
            dim: d,
            subdim: p,
        })
    }

    /// Number of stored reals per descriptor.
    pub fn value_count(&self) -> usize {
        match self.kind {
            GeometryKind::Euclidean => self.dim,
            GeometryKind::Spd => self.dim * self.dim,
            GeometryKind::Grassmann => self.dim * self.subdim,
        }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            GeometryKind::Euclidean => write!(f, "R^{}", self.dim),
            GeometryKind::Spd => write!(f, "SPD({})", self.dim),
            GeometryKind::Grassmann => write!(f, "G({},{})", self.subdim, self.dim),
        }
    }
}

/// A single local descriptor.
#[derive(Debug, Clone, PartialEq)]
pub enum Descriptor {
    Euclidean(Vec<f64>),
    Spd(Matrix),
    Grassmann(Matrix),
}

impl Descriptor {
    pub fn geometry(&self) -> Geometry {
        match self {
            Descriptor::Euclidean(v) => Geometry {
                kind: GeometryKind::Euclidean,
                dim: v.len(),
                subdim: 0,
            },
            Descriptor::Spd(m) => Geometry {
                kind: GeometryKind::Spd,
                dim: m.rows(),
                subdim: 0,
            },
            Descriptor::Grassmann(m) => Geometry {
                kind: GeometryKind::Grassmann,
                dim: m.rows(),
                subdim: m.cols(),
            },
        }
    }

    /// Row-major values.
    pub fn values(&self) -> &[f64] {
        match self {
            Descriptor::Euclidean(v) => v,
            Descriptor::Spd(m) | Descriptor::Grassmann(m) => m.as_slice(),
        }
    }

    /// Rebuilds a descriptor of geometry `g` from row-major values.
    pub fn from_values(g: Geometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != g.value_count() {
            return Err(Error::DimensionMismatch {
                expected: g.value_count(),
                got: values.len(),
            });
        }
        Ok(match g.kind {
            GeometryKind::Euclidean => Descriptor::Euclidean(values),
            GeometryKind::Spd => Descriptor::Spd(Matrix::from_vec(g.dim, g.dim, values)),
            GeometryKind::Grassmann => {
                Descriptor::Grassmann(Matrix::from_vec(g.dim, g.subdim, values))
            }
        })
    }

    pub fn as_euclidean(&self) -> Option<&[f64]> {
        match self {
            Descriptor::Euclidean(v) => Some(v),
            _ => None,
        }
    }

    fn lexicographic_cmp(&self, other: &Descriptor) -> Ordering {
        for (a, b) in self.values().iter().zip(other.values()) {
            match a.total_cmp(b) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    }
}

/// Why a descriptor failed validation.
#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    WrongGeometry { expected: Geometry, got: Geometry },
    NonFinite,
    Asymmetric(f64),
    NotPositiveDefinite,
    NotOrthonormal(f64),
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::WrongGeometry { expected, got } => {
                write!(f, "wrong geometry: expected {expected}, got {got}")
            }
            Diagnostic::NonFinite => f.write_str("non-finite value"),
            Diagnostic::Asymmetric(r) => write!(f, "asymmetric (relative deviation {r:e})"),
            Diagnostic::NotPositiveDefinite => f.write_str("not positive definite"),
            Diagnostic::NotOrthonormal(r) => {
                write!(f, "not orthonormal (max |U^T U - I| = {r:e})")
            }
        }
    }
}

/// Checks `x` against the invariants of geometry `g`.
pub fn validate(x: &Descriptor, g: &Geometry) -> core::result::Result<(), Diagnostic> {
    if x.geometry() != *g {
        return Err(Diagnostic::WrongGeometry {
            expected: *g,
            got: x.geometry(),
        });
    }
    if x.values().iter().any(|v| !v.is_finite()) {
        return Err(Diagnostic::NonFinite);
    }
    match x {
        Descriptor::Euclidean(_) => Ok(()),
        Descriptor::Spd(m) => {
            let asym = m.asymmetry();
            if asym > SYMMETRY_TOL {
                return Err(Diagnostic::Asymmetric(asym));
            }
            cholesky(m).map_err(|_| Diagnostic::NotPositiveDefinite)?;
            Ok(())
        }
        Descriptor::Grassmann(u) => {
            let dev = orthonormality_defect(u);
            if dev > ORTHONORMALITY_TOL {
                return Err(Diagnostic::NotOrthonormal(dev));
            }
            Ok(())
        }
    }
}

/// `max |UᵀU - I|`.
pub fn orthonormality_defect(u: &Matrix) -> f64 {
    let utu = u.t_matmul(u);
    let mut worst = 0.0f64;
    for i in 0..utu.rows() {
        for j in 0..utu.cols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max(fabs(utu[(i, j)] - target));
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    /// `exp(-‖x-y‖² / 2σ²)`
    EuclideanRbf,
    /// `xᵀy`
    Linear,
    /// `exp(-σ · S(A, B))`, `S` the Stein divergence
    Stein,
    /// `exp(σ ‖UᵀV‖_F²)`
    ProjectionRbf,
}

impl KernelFamily {
    pub fn geometry_kind(self) -> GeometryKind {
        match self {
            KernelFamily::EuclideanRbf | KernelFamily::Linear => GeometryKind::Euclidean,
            KernelFamily::Stein => GeometryKind::Spd,
            KernelFamily::ProjectionRbf => GeometryKind::Grassmann,
        }
    }

    pub fn uses_bandwidth(self) -> bool {
        !matches!(self, KernelFamily::Linear)
    }
}

/// A kernel bound to a geometry and bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub geometry: Geometry,
    pub family: KernelFamily,
    pub sigma: f64,
}

impl KernelSpec {
    pub fn new(geometry: Geometry, family: KernelFamily, sigma: f64) -> Result<Self> {
        if family.geometry_kind() != geometry.kind {
            return Err(Error::GeometryMismatch(format!(
                "kernel {family:?} cannot act on {geometry}"
            )));
        }
        if family.uses_bandwidth() && !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::param(
                "sigma",
                format!("must be positive, got {sigma}"),
            ));
        }
        if family == KernelFamily::Stein {
            warn_if_stein_not_pd(geometry.dim, sigma);
        }
        Ok(KernelSpec {
            geometry,
            family,
            sigma,
        })
    }

    pub fn linear(d: usize) -> Result<Self> {
        KernelSpec::new(Geometry::euclidean(d)?, KernelFamily::Linear, 1.0)
    }

    pub fn check(&self, x: &Descriptor) -> Result<()> {
        if x.geometry() != self.geometry {
            return Err(Error::GeometryMismatch(format!(
                "descriptor in {} but kernel expects {}",
                x.geometry(),
                self.geometry
            )));
        }
        Ok(())
    }

    /// Per-descriptor quantity reused across evaluations (`ln det` for Stein).
    pub fn prepare(&self, x: &Descriptor) -> Result<f64> {
        self.check(x)?;
        match (self.family, x) {
            (KernelFamily::Stein, Descriptor::Spd(m)) => log_det_spd(m),
            _ => Ok(0.0),
        }
    }

    /// Kernel value between two descriptors.
    pub fn eval(&self, x: &Descriptor, y: &Descriptor) -> Result<f64> {
        let ax = self.prepare(x)?;
        let ay = self.prepare(y)?;
        self.eval_prepared(x, ax, y, ay)
    }

    /// Kernel value given the [`prepare`](Self::prepare) outputs of both
    /// arguments. Geometry is assumed to be checked already.
    pub fn eval_prepared(&self, x: &Descriptor, ax: f64, y: &Descriptor, ay: f64) -> Result<f64> {
        // Fixed argument order so that k(x, y) and k(y, x) are bitwise equal.
        let (x, ax, y, ay) = if x.lexicographic_cmp(y) == Ordering::Greater {
            (y, ay, x, ax)
        } else {
            (x, ax, y, ay)
        };
        match (self.family, x, y) {
            (KernelFamily::EuclideanRbf, Descriptor::Euclidean(a), Descriptor::Euclidean(b)) => {
                Ok(rbf_unchecked(a, b, self.sigma))
            }
            (KernelFamily::Linear, Descriptor::Euclidean(a), Descriptor::Euclidean(b)) => {
                Ok(crate::linalg::dot(a, b))
            }
            (KernelFamily::Stein, Descriptor::Spd(a), Descriptor::Spd(b)) => {
                let div = stein_divergence_with(a, ax, b, ay)?;
                Ok(exp(-self.sigma * div))
            }
            (KernelFamily::ProjectionRbf, Descriptor::Grassmann(u), Descriptor::Grassmann(v)) => {
                Ok(exp(self.sigma * projection_overlap(u, v)))
            }
            _ => Err(Error::GeometryMismatch(String::from(
                "descriptor variant does not match kernel family",
            ))),
        }
    }
}

/// Whether the Stein kernel with this σ is guaranteed positive definite on SPD(n).
pub fn stein_sigma_is_pd(n: usize, sigma: f64) -> bool {
    let threshold = (n as f64 - 1.0) / 2.0;
    let twice = 2.0 * sigma;
    sigma >= threshold || (twice == libm::round(twice) && twice >= 1.0)
}

fn warn_if_stein_not_pd(n: usize, sigma: f64) {
    if !stein_sigma_is_pd(n, sigma) {
        log::warn!(
            "Stein kernel with sigma={sigma} on SPD({n}) is not guaranteed positive definite \
             (needs a half-integer or sigma >= {})",
            (n as f64 - 1.0) / 2.0
        );
    }
}

fn check_same_len(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

#[inline]
fn rbf_unchecked(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    exp(-crate::linalg::squared_distance(x, y) / (2.0 * sigma * sigma))
}

/// Gaussian RBF kernel `exp(-‖x-y‖² / 2σ²)`.
pub fn rbf_kernel(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    check_same_len(x, y)?;
    if !(sigma > 0.0) {
        return Err(Error::param("sigma", "must be positive"));
    }
    Ok(rbf_unchecked(x, y, sigma))
}

pub fn linear_kernel(x: &[f64], y: &[f64]) -> Result<f64> {
    check_same_len(x, y)?;
    Ok(crate::linalg::dot(x, y))
}

/// Stein (Jensen–Bregman log-det) divergence `ln det((A+B)/2) - ½ ln det(AB)`.
pub fn stein_divergence(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.rows() != b.rows() || !a.is_square() || !b.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            got: b.rows(),
        });
    }
    let la = log_det_spd(a)?;
    let lb = log_det_spd(b)?;
    stein_divergence_with(a, la, b, lb)
}

fn stein_divergence_with(a: &Matrix, log_det_a: f64, b: &Matrix, log_det_b: f64) -> Result<f64> {
    let n = a.rows();
    let mid = Matrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + b[(i, j)]));
    let l = cholesky(&mid)?;
    let div = log_det_from_cholesky(&l) - 0.5 * (log_det_a + log_det_b);
    // The divergence is non-negative; tiny negatives are rounding.
    Ok(div.max(0.0))
}

/// Stein kernel `exp(-σ · S(A, B))`. Logs a warning when σ is outside the
/// range where the kernel is known to be positive definite.
pub fn stein_kernel(a: &Matrix, b: &Matrix, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::param("sigma", "must be positive"));
    }
    warn_if_stein_not_pd(a.rows(), sigma);
    Ok(exp(-sigma * stein_divergence(a, b)?))
}

/// `‖UᵀV‖_F²`.
fn projection_overlap(u: &Matrix, v: &Matrix) -> f64 {
    let m = u.t_matmul(v);
    m.frobenius_sq()
}

/// Projection RBF kernel `exp(σ ‖UᵀV‖_F²)` on the Grassmannian.
pub fn projection_kernel(u: &Matrix, v: &Matrix, sigma: f64) -> Result<f64> {
    if u.rows() != v.rows() || u.cols() != v.cols() {
        return Err(Error::DimensionMismatch {
            expected: u.rows() * u.cols(),
            got: v.rows() * v.cols(),
        });
    }
    if !(sigma > 0.0) {
        return Err(Error::param("sigma", "must be positive"));
    }
    for m in [u, v] {
        if m.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let dev = orthonormality_defect(m);
        if dev > ORTHONORMALITY_TOL {
            return Err(Error::InvalidDescriptor(format!(
                "not orthonormal (max |U^T U - I| = {dev:e})"
            )));
        }
    }
    let g = Geometry::grassmann(u.rows(), u.cols())?;
    let spec = KernelSpec {
        geometry: g,
        family: KernelFamily::ProjectionRbf,
        sigma,
    };
    spec.eval_prepared(
        &Descriptor::Grassmann(u.clone()),
        0.0,
        &Descriptor::Grassmann(v.clone()),
        0.0,
    )
}

/// Length of the log-Euclidean vectorization of an `n × n` SPD matrix.
pub fn spd_log_vec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Principal matrix logarithm of an SPD matrix, vectorized as its upper
/// triangle (row-major) with off-diagonal entries scaled by √2, so that the
/// Euclidean inner product equals the Frobenius inner product of the logs.
pub fn spd_log_vec(a: &Matrix) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            got: a.cols(),
        });
    }
    if a.asymmetry() > SYMMETRY_TOL {
        return Err(Error::NotSpd);
    }
    let eig = symmetric_eigen(a)?;
    if eig.values.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::NotSpd);
    }
    let l = eig.reconstruct_with(log);
    let n = a.rows();
    let mut out = Vec::with_capacity(spd_log_vec_len(n));
    for i in 0..n {
        out.push(l[(i, i)]);
        for j in (i + 1)..n {
            out.push(core::f64::consts::SQRT_2 * 0.5 * (l[(i, j)] + l[(j, i)]));
        }
    }
    Ok(out)
}

/// Squared Hilbert-space distance from kernel values only:
/// `k(x,x) - 2k(x,y) + k(y,y)`, clamped at zero for rounding noise.
pub fn hilbert_dist_sq(kxx: f64, kxy: f64, kyy: f64) -> Result<f64> {
    if !(kxx.is_finite() && kxy.is_finite() && kyy.is_finite()) {
        return Err(Error::NonFinite);
    }
    let d = kxx - 2.0 * kxy + kyy;
    if d < -NEGATIVE_DIST_TOL {
        return Err(Error::InconsistentKernel(d));
    }
    Ok(d.max(0.0))
}

/// Symmetric matrix of inner products with the identities of its rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: Matrix,
    pub ids: Vec<u32>,
}

impl GramMatrix {
    pub fn new(values: Matrix, ids: Vec<u32>) -> Result<Self> {
        if !values.is_square() || values.rows() != ids.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                got: values.rows(),
            });
        }
        Ok(GramMatrix { values, ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::Empty("gram matrix"));
        }
        let eig = symmetric_eigen(&self.values)?;
        Ok(*eig.values.last().expect("non-empty"))
    }

    /// RBF built on top of the squared distances implied by this Gram:
    /// `exp(-γ (G_ii - 2 G_ij + G_jj))`.
    pub fn rbf_on_top(&self, gamma: f64) -> Result<GramMatrix> {
        let n = self.len();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let d = hilbert_dist_sq(
                    self.values[(i, i)],
                    self.values[(i, j)],
                    self.values[(j, j)],
                )?;
                let v = exp(-gamma * d);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        GramMatrix::new(out, self.ids.clone())
    }
}

/// Rectangular `rows × cols` inner products, e.g. test items against training items.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossGram {
    pub values: Matrix,
    pub row_ids: Vec<u32>,
    pub col_ids: Vec<u32>,
}

impl CrossGram {
    pub fn new(values: Matrix, row_ids: Vec<u32>, col_ids: Vec<u32>) -> Result<Self> {
        if values.rows() != row_ids.len() || values.cols() != col_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: row_ids.len() * col_ids.len(),
                got: values.rows() * values.cols(),
            });
        }
        Ok(CrossGram {
            values,
            row_ids,
            col_ids,
        })
    }
}

/// Kernel Gram matrix of a descriptor sequence. Only the upper triangle is
/// evaluated; the lower triangle is mirrored.
pub fn gram(descriptors: &[Descriptor], k: &KernelSpec) -> Result<GramMatrix> {
    let aux = descriptors
        .iter()
        .map(|x| k.prepare(x))
        .collect::<Result<Vec<_>>>()?;
    let n = descriptors.len();
    let mut values = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = k.eval_prepared(&descriptors[i], aux[i], &descriptors[j], aux[j])?;
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    GramMatrix::new(values, (0..n as u32).collect())
}

/// `sqrt` of a clamped squared distance; convenience for metric checks.
pub fn hilbert_dist(kxx: f64, kxy: f64, kyy: f64) -> Result<f64> {
    Ok(sqrt(hilbert_dist_sq(kxx, kxy, kyy)?))
}
