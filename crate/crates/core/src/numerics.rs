//! Shared numerical kernels: phase quantization, diagonally loaded
//! pseudo-inverses, truncated SVD, and the least-squares plumbing used by the
//! alternating solvers.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const TWO_PI: f64 = 2.0 * PI;

/// Phase-shifter resolution: `Finite(b)` uniformly quantizes the phase over
/// `[0, 2π)` with `2^b` levels, `Infinite` is a continuous phase shifter.
///
/// Serialized as an integer bit count or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bits {
    Finite(u32),
    Infinite,
}

impl Bits {
    pub fn new(bits: u32) -> Result<Self> {
        if bits == 0 {
            return Err(Error::InvalidInput(
                "phase shifter bits must be >= 1".into(),
            ));
        }
        if bits > 52 {
            return Err(Error::InvalidInput(format!(
                "{bits} phase bits exceed double precision; use Bits::Infinite"
            )));
        }
        Ok(Bits::Finite(bits))
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Bits::Finite(_))
    }

    /// Lattice spacing `2π / 2^B`, `None` for continuous phases.
    pub fn step(self) -> Option<f64> {
        match self {
            Bits::Finite(b) => Some(TWO_PI / (1u64 << b) as f64),
            Bits::Infinite => None,
        }
    }

    /// Number of lattice points `2^B`.
    pub fn levels(self) -> Option<u64> {
        match self {
            Bits::Finite(b) => Some(1u64 << b),
            Bits::Infinite => None,
        }
    }
}

impl fmt::Display for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bits::Finite(b) => write!(f, "{b}"),
            Bits::Infinite => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for Bits {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinite" | "infinity" => Ok(Bits::Infinite),
            other => {
                let b: u32 = other
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad bit count {s:?}")))?;
                Bits::new(b)
            }
        }
    }
}

impl Serialize for Bits {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bits::Finite(b) => s.serialize_u32(*b),
            Bits::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Bits {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u32),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(b) => Bits::new(b).map_err(serde::de::Error::custom),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(TWO_PI);
    if w >= TWO_PI {
        0.0
    } else {
        w
    }
}

/// Projects a phase onto the `B`-bit lattice `{0, 2π/2^B, ...}`.
///
/// Rounds half away from zero before reducing modulo `2π`; the identity for
/// continuous phase shifters.
pub fn quantize_phase(phi: f64, bits: Bits) -> f64 {
    match bits {
        Bits::Infinite => phi,
        Bits::Finite(_) => {
            let k = lattice_index(phi, bits).expect("finite bits");
            k as f64 * bits.step().expect("finite bits")
        }
    }
}

/// Elementwise [`quantize_phase`].
pub fn quantize_phases(phases: &DMatrix<f64>, bits: Bits) -> DMatrix<f64> {
    phases.map(|p| quantize_phase(p, bits))
}

/// Index `k` of the lattice point nearest to `phi`, so that the quantized
/// phase is `2πk/2^B` with `0 <= k < 2^B`.
pub fn lattice_index(phi: f64, bits: Bits) -> Option<u64> {
    let levels = bits.levels()?;
    let half = (levels / 2) as f64; // 2^(B-1)
    let k = (half / PI * phi).round();
    Some((k as i64).rem_euclid(levels as i64) as u64)
}

/// Whether `phi` lies on the `B`-bit lattice (within `tol` radians).
pub fn on_lattice(phi: f64, bits: Bits, tol: f64) -> bool {
    match bits {
        Bits::Infinite => phi.is_finite(),
        Bits::Finite(_) => {
            let step = bits.step().expect("finite bits");
            let w = wrap_phase(phi);
            let k = (w / step).round();
            (w - k * step).abs() <= tol
        }
    }
}

/// Smallest absolute difference between two angles.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TWO_PI);
    d.min(TWO_PI - d)
}

/// Diagonally loaded pseudo-inverse `(XᴴX + αI)⁻¹Xᴴ`.
///
/// With `alpha == 0` this is the exact pseudo-inverse of a full-column-rank
/// matrix; a rank-deficient input is reported as [`Error::Singular`].
pub fn pinv_regularized(x: &CMat, alpha: f64) -> Result<CMat> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidInput(format!(
            "diagonal loading must be >= 0, got {alpha}"
        )));
    }
    let xh = x.adjoint();
    let gram = &xh * x;
    solve_loaded(gram, xh, alpha)
}

/// Solves `(G + αI) Y = B` for a Hermitian positive semidefinite `G`.
fn solve_loaded(mut gram: CMat, rhs: CMat, alpha: f64) -> Result<CMat> {
    let n = gram.nrows();
    let scale = (0..n).map(|i| gram[(i, i)].re).fold(0.0_f64, f64::max);
    for i in 0..n {
        gram[(i, i)] += C64::new(alpha, 0.0);
    }
    if n == 0 {
        return Ok(rhs);
    }
    if let Some(chol) = gram.clone().cholesky() {
        if alpha == 0.0 {
            let l = chol.l_dirty();
            let min_pivot = (0..n)
                .map(|i| l[(i, i)].norm_sqr())
                .fold(f64::INFINITY, f64::min);
            if min_pivot <= 1e-13 * scale.max(f64::MIN_POSITIVE) * n as f64 {
                return Err(Error::Singular(format!(
                    "normal equations are rank deficient (pivot {min_pivot:.3e}, scale {scale:.3e})"
                )));
            }
        }
        return Ok(chol.solve(&rhs));
    }
    if alpha == 0.0 {
        return Err(Error::Singular(
            "normal equations are not positive definite".into(),
        ));
    }
    gram.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("loaded normal equations could not be factorized".into()))
}

/// Minimum-norm least-squares solution via the SVD pseudo-inverse.
pub fn lstsq_min_norm(x: &CMat, b: &CVec) -> Result<CVec> {
    if x.nrows() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "system has {} rows, right-hand side {}",
            x.nrows(),
            b.len()
        )));
    }
    if x.ncols() == 0 {
        return Ok(CVec::zeros(0));
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * f64::EPSILON * x.nrows().max(x.ncols()) as f64;
    let pinv = svd
        .pseudo_inverse(tol.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Singular(e.to_string()))?;
    Ok(pinv * b)
}

/// Leading singular triplets with singular values in descending order.
///
/// Each left singular vector is rotated so that its first nonzero entry is
/// real and positive; the matching right vector gets the same rotation, so
/// `U Σ Vᴴ` is unchanged.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: CMat,
    pub singular_values: DVector<f64>,
    /// Right singular vectors as columns (not `Vᴴ`).
    pub v: CMat,
}

impl TruncatedSvd {
    pub fn reconstruct(&self) -> CMat {
        let mut us = self.u.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.adjoint()
    }
}

pub fn svd_truncated(x: &CMat, q: usize) -> Result<TruncatedSvd> {
    let k = x.nrows().min(x.ncols());
    if q == 0 || q > k {
        return Err(Error::InvalidInput(format!(
            "requested {q} singular triplets from a {}x{} matrix",
            x.nrows(),
            x.ncols()
        )));
    }
    let svd = x.clone().svd(true, true);
    let u_full = svd.u.expect("u requested");
    let v_full = svd.v_t.expect("v_t requested").adjoint();
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));

    let mut u = CMat::zeros(x.nrows(), q);
    let mut v = CMat::zeros(x.ncols(), q);
    let mut sv = DVector::zeros(q);
    for (dst, &src) in order.iter().take(q).enumerate() {
        let mut ucol = u_full.column(src).into_owned();
        let mut vcol = v_full.column(src).into_owned();
        if let Some(first) = ucol.iter().find(|z| z.norm() > 1e-300).copied() {
            let rot = first.conj() / first.norm();
            ucol *= rot;
            vcol *= rot;
        }
        u.set_column(dst, &ucol);
        v.set_column(dst, &vcol);
        sv[dst] = s[src];
    }
    Ok(TruncatedSvd {
        u,
        singular_values: sv,
        v,
    })
}

/// Numerical rank with the usual `max(m, n)·eps·σ₁` threshold.
pub fn numerical_rank(x: &CMat) -> usize {
    if x.is_empty() {
        return 0;
    }
    let s = x.clone().singular_values();
    let smax = s.max();
    if smax == 0.0 {
        return 0;
    }
    let tol = smax * f64::EPSILON * x.nrows().max(x.ncols()) as f64 * 10.0;
    s.iter().filter(|&&v| v > tol).count()
}

/// Column-major `vec(·)`.
pub fn vectorize(x: &CMat) -> CVec {
    CVec::from_column_slice(x.as_slice())
}

/// `mat_{rows×cols}(·)`, inverse of [`vectorize`].
pub fn matricize(v: &CVec, rows: usize, cols: usize) -> Result<CMat> {
    if v.len() != rows * cols {
        return Err(Error::ShapeMismatch(format!(
            "cannot reshape {} entries into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(CMat::from_column_slice(rows, cols, v.as_slice()))
}

/// Column-wise Kronecker (Khatri-Rao) product: column `v` is `a[:,v] ⊗ b[:,v]`.
pub fn khatri_rao(a: &CMat, b: &CMat) -> Result<CMat> {
    if a.ncols() != b.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "Khatri-Rao operands have {} and {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    let (na, nb) = (a.nrows(), b.nrows());
    let mut out = CMat::zeros(na * nb, a.ncols());
    for v in 0..a.ncols() {
        for i in 0..na {
            let ai = a[(i, v)];
            for j in 0..nb {
                out[(i * nb + j, v)] = ai * b[(j, v)];
            }
        }
    }
    Ok(out)
}

pub fn norm_inf(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn norm_l1(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm()).sum()
}

/// Index of the largest-magnitude entry, lowest index on ties.
pub fn argmax_abs(v: &CVec) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, z) in v.iter().enumerate() {
        let m = z.norm();
        if best.is_none_or(|(_, b)| m > b) {
            best = Some((i, m));
        }
    }
    best.map(|(i, _)| i)
}

pub fn expj(phi: f64) -> C64 {
    C64::from_polar(1.0, phi)
}

/// Least-squares design matrix stored either densely or as sparse columns.
///
/// The co-array domain produces very sparse systems (each column touches at
/// most `N_t` co-array positions), so the normal equations are assembled
/// from column dot products instead of a dense product.
#[derive(Debug, Clone)]
pub(crate) enum Design {
    Dense(CMat),
    Sparse {
        rows: usize,
        cols: Vec<Vec<(usize, C64)>>,
    },
}

impl Design {
    pub(crate) fn nrows(&self) -> usize {
        match self {
            Design::Dense(m) => m.nrows(),
            Design::Sparse { rows, .. } => *rows,
        }
    }

    pub(crate) fn gram(&self) -> CMat {
        match self {
            Design::Dense(m) => m.adjoint() * m,
            Design::Sparse { rows, cols } => {
                let k = cols.len();
                let mut g = CMat::zeros(k, k);
                let mut buf = vec![C64::new(0.0, 0.0); *rows];
                for j in 0..k {
                    for &(r, v) in &cols[j] {
                        buf[r] += v;
                    }
                    for i in 0..=j {
                        let mut acc = C64::new(0.0, 0.0);
                        for &(r, v) in &cols[i] {
                            acc += v.conj() * buf[r];
                        }
                        g[(i, j)] = acc;
                        g[(j, i)] = acc.conj();
                    }
                    for &(r, _) in &cols[j] {
                        buf[r] = C64::new(0.0, 0.0);
                    }
                }
                g
            }
        }
    }

    pub(crate) fn adjoint_mul(&self, b: &CVec) -> CVec {
        match self {
            Design::Dense(m) => m.adjoint() * b,
            Design::Sparse { cols, .. } => CVec::from_iterator(
                cols.len(),
                cols.iter()
                    .map(|c| c.iter().map(|&(r, v)| v.conj() * b[r]).sum::<C64>()),
            ),
        }
    }

    #[cfg(test)]
    pub(crate) fn mul(&self, x: &CVec) -> CVec {
        match self {
            Design::Dense(m) => m * x,
            Design::Sparse { rows, cols } => {
                let mut out = CVec::zeros(*rows);
                for (c, &xi) in cols.iter().zip(x.iter()) {
                    for &(r, v) in c {
                        out[r] += v * xi;
                    }
                }
                out
            }
        }
    }

    #[cfg(test)]
    pub(crate) fn to_dense(&self) -> CMat {
        match self {
            Design::Dense(m) => m.clone(),
            Design::Sparse { rows, cols } => {
                let mut out = CMat::zeros(*rows, cols.len());
                for (j, c) in cols.iter().enumerate() {
                    for &(r, v) in c {
                        out[(r, j)] += v;
                    }
                }
                out
            }
        }
    }
}

/// `(XᴴX + αI)⁻¹Xᴴ b` for a [`Design`].
pub(crate) fn ridge_solve(design: &Design, b: &CVec, alpha: f64) -> Result<CVec> {
    if design.nrows() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "design has {} rows, right-hand side {}",
            design.nrows(),
            b.len()
        )));
    }
    let gram = design.gram();
    let rhs = design.adjoint_mul(b);
    let k = rhs.len();
    let sol = solve_loaded(gram, CMat::from_column_slice(k, 1, rhs.as_slice()), alpha)?;
    Ok(sol.column(0).into_owned())
}
