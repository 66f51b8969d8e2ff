//! Far-field steering vectors, Khatri-Rao effective steering, co-array
//! steering, PSF evaluation and target generators.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, Point, SelectionMatrix, SumCoarray};
use crate::numerics::{expj, khatri_rao, vectorize, CMat, CVec, C64};

/// A far-field look direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Direction {
    /// Azimuth in the array plane of a linear aperture, `φ ∈ [−π/2, π/2]`.
    Linear { phi: f64 },
    /// Azimuth/elevation pair for planar apertures in the x-z plane.
    Planar { phi: f64, theta: f64 },
    /// Reduced coordinates `(sinφ sinθ, cosθ)`.
    Reduced { ux: f64, uz: f64 },
}

impl Direction {
    pub fn broadside() -> Self {
        Direction::Linear { phi: 0.0 }
    }

    /// `(u_x, u_z)` so that the element phase is `π (x u_x + z u_z)`.
    pub fn reduced(&self) -> (f64, f64) {
        match *self {
            Direction::Linear { phi } => (phi.sin(), 0.0),
            Direction::Planar { phi, theta } => (phi.sin() * theta.sin(), theta.cos()),
            Direction::Reduced { ux, uz } => (ux, uz),
        }
    }

    /// Element amplitude response for the given pattern.
    pub fn gain(&self, pattern: GainPattern) -> f64 {
        match pattern {
            GainPattern::Omni => 1.0,
            GainPattern::Sinusoidal => match *self {
                Direction::Linear { phi } => phi.cos(),
                Direction::Planar { phi, theta } => phi.cos() * theta.sin(),
                Direction::Reduced { ux, uz } => (1.0 - ux * ux - uz * uz).max(0.0).sqrt(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let half = PI / 2.0 + 1e-12;
        let ok = match *self {
            Direction::Linear { phi } => phi.abs() <= half,
            Direction::Planar { phi, theta } => {
                phi.abs() <= half && (-1e-12..=PI + 1e-12).contains(&theta)
            }
            Direction::Reduced { ux, uz } => ux.abs() <= 1.0 + 1e-12 && uz.abs() <= 1.0 + 1e-12,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "direction {self:?} out of range"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainPattern {
    #[default]
    Omni,
    /// `cosφ sinθ`, the pattern used for the planar experiment.
    Sinusoidal,
}

/// Ordered list of directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionGrid {
    pub directions: Vec<Direction>,
}

fn linspace(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| {
        if n == 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as f64 / (n - 1) as f64
        }
    })
}

impl DirectionGrid {
    pub fn new(directions: Vec<Direction>) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::InvalidSize("direction grid must be nonempty".into()));
        }
        for d in &directions {
            d.validate()?;
        }
        Ok(Self { directions })
    }

    /// `v` azimuths uniformly spaced in `sinφ ∈ [−1, 1]`.
    pub fn uniform_sine(v: usize) -> Result<Self> {
        Self::new(
            linspace(v)
                .map(|s| Direction::Linear { phi: s.asin() })
                .collect(),
        )
    }

    /// `n × n` grid over `(u_x, u_z) ∈ [−1, 1]²`, row-major with `u_z`
    /// varying slowest.
    pub fn reduced_square(n: usize) -> Result<Self> {
        let axis: Vec<f64> = linspace(n).collect();
        Self::new(
            axis.iter()
                .flat_map(|&uz| axis.iter().map(move |&ux| Direction::Reduced { ux, uz }))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

fn phase_at(p: &Point, u: (f64, f64)) -> f64 {
    PI * (p[0] as f64 * u.0 + p[1] as f64 * u.1)
}

pub fn steering_vector(geom: &ArrayGeometry, dir: &Direction, gain: GainPattern) -> CVec {
    let u = dir.reduced();
    let g = dir.gain(gain);
    CVec::from_iterator(
        geom.len(),
        geom.positions().iter().map(|p| expj(phase_at(p, u)) * g),
    )
}

/// `N × V` matrix whose columns are steering vectors.
pub fn steering_matrix(geom: &ArrayGeometry, grid: &DirectionGrid, gain: GainPattern) -> CMat {
    let mut a = CMat::zeros(geom.len(), grid.len());
    for (v, d) in grid.directions.iter().enumerate() {
        a.set_column(v, &steering_vector(geom, d, gain));
    }
    a
}

/// `A = A_t ⊙ A_r`; column `v` is `a_t(v) ⊗ a_r(v)`.
pub fn effective_steering(at: &CMat, ar: &CMat) -> Result<CMat> {
    khatri_rao(at, ar).map_err(|e| Error::InvalidInput(e.to_string()))
}

/// `N_Σ × V` steering matrix over the co-array support.
///
/// Each virtual element carries the squared element gain, which makes
/// `A = Υᵀ A_Σ` hold whenever all physical elements share one pattern.
pub fn coarray_steering(ca: &SumCoarray, grid: &DirectionGrid, gain: GainPattern) -> CMat {
    let mut a = CMat::zeros(ca.n_sigma(), grid.len());
    for (v, d) in grid.directions.iter().enumerate() {
        let u = d.reduced();
        let g2 = d.gain(gain).powi(2);
        for (n, p) in ca.support().iter().enumerate() {
            a[(n, v)] = expj(phase_at(p, u)) * g2;
        }
    }
    a
}

/// `ψ = Aᵀ vec(W)` for an `N_r × N_t` weight matrix.
pub fn psf_eval(w: &CMat, a: &CMat) -> Result<CVec> {
    if w.len() != a.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "weight matrix has {} entries but steering matrix has {} rows",
            w.len(),
            a.nrows()
        )));
    }
    Ok(a.transpose() * vectorize(w))
}

/// `w_Σ = Υ vec(W)`.
pub fn coarray_weights(w: &CMat, sel: &SelectionMatrix) -> Result<CVec> {
    if w.nrows() != sel.n_r() || w.ncols() != sel.n_t() {
        return Err(Error::ShapeMismatch(format!(
            "expected {}x{} weights, got {}x{}",
            sel.n_r(),
            sel.n_t(),
            w.nrows(),
            w.ncols()
        )));
    }
    sel.apply(&vectorize(w))
}

/// Which index set a target vector lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetDomain {
    /// Samples of the desired PSF over a direction grid.
    Psf,
    /// Desired sum co-array weights.
    Coarray,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub domain: TargetDomain,
    #[serde(with = "crate::io::cvec_serde")]
    pub values: CVec,
}

impl TargetSpec {
    pub fn coarray(values: CVec) -> Self {
        Self {
            domain: TargetDomain::Coarray,
            values,
        }
    }

    pub fn psf(values: CVec) -> Self {
        Self {
            domain: TargetDomain::Psf,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.norm()
    }
}

/// Random co-array weights `√r e^{jφ}` with `r ~ U(0,1)`, `φ ~ U(0,2π)`.
pub fn target_stochastic(n_sigma: usize, seed: u64) -> TargetSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals = (0..n_sigma)
        .map(|_| {
            let r: f64 = rng.gen();
            let phi: f64 = rng.gen_range(0.0..2.0 * PI);
            C64::from_polar(r.sqrt(), phi)
        })
        .collect();
    TargetSpec::coarray(CVec::from_vec(vals))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Window {
    Rect,
    Triangular,
    Hann,
    Chebyshev { attenuation_db: f64 },
}

impl Window {
    pub fn chebyshev_default() -> Self {
        Window::Chebyshev {
            attenuation_db: 30.0,
        }
    }
}

/// Real, symmetric, peak-normalized window of length `n`.
pub fn window(kind: Window, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidSize("window length must be >= 1".into()));
    }
    let w = match kind {
        Window::Rect => vec![1.0; n],
        Window::Triangular => {
            let half: Vec<f64> = if n % 2 == 1 {
                (1..=n.div_ceil(2))
                    .map(|k| 2.0 * k as f64 / (n + 1) as f64)
                    .collect()
            } else {
                (1..=n / 2).map(|k| (2 * k - 1) as f64 / n as f64).collect()
            };
            mirror(&half, n)
        }
        // Non-zero-ended variant: both endpoints of the full cosine period
        // fall outside the window.
        Window::Hann => (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * (i + 1) as f64 / (n + 1) as f64).cos())
            .collect(),
        Window::Chebyshev { attenuation_db } => chebyshev(n, attenuation_db)?,
    };
    Ok(w)
}

fn mirror(half: &[f64], n: usize) -> Vec<f64> {
    let mut w = half.to_vec();
    let tail: Vec<f64> = half.iter().rev().skip(n % 2).copied().collect();
    w.extend(tail);
    w
}

/// Dolph-Chebyshev window via the frequency-sampling construction.
fn chebyshev(n: usize, attenuation_db: f64) -> Result<Vec<f64>> {
    if !(attenuation_db > 0.0) || !attenuation_db.is_finite() {
        return Err(Error::InvalidInput(format!(
            "Chebyshev attenuation must be > 0 dB, got {attenuation_db}"
        )));
    }
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let order = (n - 1) as f64;
    let beta = ((10f64.powf(attenuation_db / 20.0)).acosh() / order).cosh();
    let p: Vec<C64> = (0..n)
        .map(|k| {
            let x = beta * (PI * k as f64 / n as f64).cos();
            let val = if x > 1.0 {
                (order * x.acosh()).cosh()
            } else if x < -1.0 {
                let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
                sign * (order * (-x).acosh()).cosh()
            } else {
                (order * x.acos()).cos()
            };
            if n % 2 == 1 {
                C64::new(val, 0.0)
            } else {
                expj(PI * k as f64 / n as f64) * val
            }
        })
        .collect();
    let dft = |m: usize| -> f64 {
        p.iter()
            .enumerate()
            .map(|(k, &pk)| pk * expj(-2.0 * PI * (k * m % n) as f64 / n as f64))
            .sum::<C64>()
            .re
    };
    let w: Vec<f64> = if n % 2 == 1 {
        let h = n.div_ceil(2);
        let half: Vec<f64> = (0..h).map(dft).collect();
        (1..h)
            .rev()
            .map(|i| half[i])
            .chain(half.iter().copied())
            .collect()
    } else {
        let h = n / 2 + 1;
        let half: Vec<f64> = (0..h).map(dft).collect();
        (1..h)
            .rev()
            .map(|i| half[i])
            .chain(half[1..h].iter().copied())
            .collect()
    };
    let peak = w.iter().copied().fold(f64::MIN, f64::max);
    Ok(w.into_iter().map(|x| x / peak).collect())
}

/// Window over a linear co-array, or the separable product window over a
/// planar co-array whose support fills its bounding box.
pub fn target_window(kind: Window, ca: &SumCoarray) -> Result<TargetSpec> {
    let support = ca.support();
    if ca.dim() == 1 {
        let w = window(kind, ca.n_sigma())?;
        return Ok(TargetSpec::coarray(CVec::from_iterator(
            w.len(),
            w.into_iter().map(C64::from),
        )));
    }
    if !ca.is_contiguous() {
        return Err(Error::InvalidInput(
            "planar window targets need a co-array that fills its bounding box".into(),
        ));
    }
    let xmin = support.iter().map(|p| p[0]).min().expect("nonempty");
    let zmin = support.iter().map(|p| p[1]).min().expect("nonempty");
    let nx = (support.iter().map(|p| p[0]).max().expect("nonempty") - xmin + 1) as usize;
    let nz = (support.iter().map(|p| p[1]).max().expect("nonempty") - zmin + 1) as usize;
    let wx = window(kind, nx)?;
    let wz = window(kind, nz)?;
    let vals = support
        .iter()
        .map(|p| C64::from(wx[(p[0] - xmin) as usize] * wz[(p[1] - zmin) as usize]));
    Ok(TargetSpec::coarray(CVec::from_iterator(
        support.len(),
        vals,
    )))
}

/// Moves the main lobe of a co-array target to `dir` by applying the
/// conjugate co-array steering phases.
pub fn steer_target(spec: &TargetSpec, ca: &SumCoarray, dir: &Direction) -> Result<TargetSpec> {
    if spec.domain != TargetDomain::Coarray || spec.len() != ca.n_sigma() {
        return Err(Error::InvalidInput(
            "steering needs a co-array target indexed by the given co-array".into(),
        ));
    }
    let u = dir.reduced();
    let vals = spec
        .values
        .iter()
        .zip(ca.support())
        .map(|(w, p)| w * expj(-phase_at(p, u)));
    Ok(TargetSpec::coarray(CVec::from_iterator(spec.len(), vals)))
}

/// `‖target − achieved‖₂ / ‖target‖₂`.
pub fn relative_error(target: &TargetSpec, achieved: &CVec) -> Result<f64> {
    if target.len() != achieved.len() {
        return Err(Error::ShapeMismatch(format!(
            "target has {} entries, achieved {}",
            target.len(),
            achieved.len()
        )));
    }
    let nt = target.norm();
    if nt == 0.0 {
        return Err(Error::InvalidInput(
            "relative error of a zero target".into(),
        ));
    }
    Ok((&target.values - achieved).norm() / nt)
}
