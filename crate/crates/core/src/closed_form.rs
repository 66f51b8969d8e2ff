//! Exact hybrid and analog factorizations of digital weights.
//!
//! Phase matrices are returned in radians wrapped to `[0, 2π)`; every
//! constructor here reconstructs its input exactly (up to roundoff).

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::digital::DigitalBank;
use crate::error::{Error, Result};
use crate::hybrid::HybridBank;
use crate::numerics::{expj, norm_inf, norm_l1, wrap_phase, Bits, CMat, CVec, C64};

fn clamp_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Two unit-modulus columns and equal digital weights `‖w‖_∞/2` with
/// `F c = w`.
pub fn lemma1_factor(w: &CVec) -> (DMatrix<f64>, CVec) {
    let n = w.len();
    let peak = norm_inf(w);
    let mut phases = DMatrix::zeros(n, 2);
    if peak == 0.0 {
        return (phases, CVec::zeros(2));
    }
    for i in 0..n {
        let arg = w[i].arg();
        let delta = clamp_unit(w[i].norm() / peak).acos();
        phases[(i, 0)] = wrap_phase(arg + delta);
        phases[(i, 1)] = wrap_phase(arg - delta);
    }
    (phases, CVec::from_element(2, C64::new(peak / 2.0, 0.0)))
}

/// Phases such that `c1 e^{jθ_1} + c2 e^{jθ_2} = w` elementwise, for any
/// digital weights whose magnitudes `a, b` satisfy `a + b ≥ max|w_n|` and
/// `|a − b| ≤ min|w_n|`.
pub fn lemma1_general(w: &CVec, c1: C64, c2: C64) -> Result<DMatrix<f64>> {
    let (a, b) = (c1.norm(), c2.norm());
    let scale = a.max(b).max(norm_inf(w)).max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    let mut phases = DMatrix::zeros(w.len(), 2);
    for (i, wi) in w.iter().enumerate() {
        let r = wi.norm();
        if a + b < r - tol || (a - b).abs() > r + tol {
            return Err(Error::InfeasibleDecomposition(format!(
                "|c1| = {a}, |c2| = {b} cannot sum to |w_{i}| = {r}"
            )));
        }
        let base = wi.arg();
        let (alpha1, alpha2) = if r <= tol {
            (0.0, PI)
        } else if b <= tol {
            (base, 0.0)
        } else if a <= tol {
            (0.0, base)
        } else {
            let d1 = clamp_unit((r * r + a * a - b * b) / (2.0 * a * r)).acos();
            let d2 = clamp_unit((r * r + b * b - a * a) / (2.0 * b * r)).acos();
            (base + d1, base - d2)
        };
        let th1 = if a <= tol { 0.0 } else { alpha1 - c1.arg() };
        let th2 = if b <= tol { 0.0 } else { alpha2 - c2.arg() };
        phases[(i, 0)] = wrap_phase(th1);
        phases[(i, 1)] = wrap_phase(th2);
    }
    Ok(phases)
}

/// Best single-column analog approximation: phases of `w` and
/// `c = ‖w‖₁/N`. Also returns the achieved squared error.
pub fn lemma2_analog(w: &CVec) -> (Vec<f64>, C64, f64) {
    let n = w.len();
    let phases: Vec<f64> = w
        .iter()
        .map(|z| {
            if z.norm() == 0.0 {
                0.0
            } else {
                wrap_phase(z.arg())
            }
        })
        .collect();
    if n == 0 {
        return (phases, C64::new(0.0, 0.0), 0.0);
    }
    let c = C64::new(norm_l1(w) / n as f64, 0.0);
    let err = w
        .iter()
        .zip(&phases)
        .map(|(z, &p)| (z - expj(p) * c).norm_sqr())
        .sum();
    (phases, c, err)
}

/// Two front ends per side and continuous phases: each digital image is
/// split with [`lemma1_factor`].
pub fn thm1_hybrid_cont(bank: &DigitalBank) -> HybridBank {
    let q = bank.q();
    let mut out = HybridBank::empty(bank.n_t(), bank.n_r(), 2, 2, Bits::Infinite);
    for k in 0..q {
        let (pt, ct) = lemma1_factor(&bank.w_t.column(k).into_owned());
        let (pr, cr) = lemma1_factor(&bank.w_r.column(k).into_owned());
        out.push_image(&pt, &ct, &pr, &cr)
            .expect("lemma 1 shapes are consistent");
    }
    out
}

fn principal_sqrt(z: C64) -> C64 {
    z.sqrt()
}

/// One-bit construction with `N_r N_t` images, each realizing a single entry
/// of `W`. Image `q` (0-based) covers entry `(q mod N_r, ⌊q/N_r⌋)`.
pub fn thm2_hybrid_1bit(w: &CMat) -> HybridBank {
    let (n_r, n_t) = (w.nrows(), w.ncols());
    let mut out = HybridBank::empty(n_t, n_r, 2, 2, Bits::Finite(1));
    for q in 0..n_r * n_t {
        let (nr, nt) = (q % n_r, q / n_r);
        let s = principal_sqrt(w[(nr, nt)]) / 2.0;
        let c = CVec::from_element(2, s);
        out.push_image(&selector_phases(n_t, nt), &c, &selector_phases(n_r, nr), &c)
            .expect("shapes are consistent");
    }
    out
}

/// Columns `1` and `2e_n − 1` as phases in `{0, π}`.
fn selector_phases(n: usize, idx: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, 2, |i, j| if j == 1 && i != idx { PI } else { 0.0 })
}

/// Splits every hybrid image into `M_r M_t` single-front-end images.
///
/// Analog image `q` (0-based) takes hybrid image `⌊q/(M_r M_t)⌋`, Rx front
/// end `⌊(q mod M_r M_t)/M_t⌋` and Tx front end `q mod M_t`.
pub fn lemma3_flatten(bank: &HybridBank) -> HybridBank {
    let (mt, mr) = (bank.m_t, bank.m_r);
    let mut out = HybridBank::empty(bank.n_t(), bank.n_r(), 1, 1, bank.bits);
    for q in 0..bank.q() * mr * mt {
        let (k, rem) = (q / (mr * mt), q % (mr * mt));
        let (ir, it) = (rem / mt, rem % mt);
        let pt = bank.phases_t.columns(k * mt + it, 1).into_owned();
        let pr = bank.phases_r.columns(k * mr + ir, 1).into_owned();
        let ct = CVec::from_element(1, bank.c_t[(it, k)]);
        let cr = CVec::from_element(1, bank.c_r[(ir, k)]);
        out.push_image(&pt, &ct, &pr, &cr)
            .expect("shapes are consistent");
    }
    out
}

/// Analog, continuous phases: four images per digital image, with
/// `i_r = ⌊(q mod 4)/2⌋`, `i_t = q mod 2` selecting the `±acos` branch.
pub fn thm3_analog_cont(bank: &DigitalBank) -> HybridBank {
    lemma3_flatten(&thm1_hybrid_cont(bank))
}

/// Analog, one bit: four `±1` images per entry of `W`.
pub fn thm4_analog_1bit(w: &CMat) -> HybridBank {
    lemma3_flatten(&thm2_hybrid_1bit(w))
}

/// A single front end driving `M` phase shifters per element, equivalent to
/// an `M`-front-end hybrid beamformer whose digital weights are all equal.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedAnalog {
    pub phases: DMatrix<f64>,
    pub gain: C64,
}

impl MergedAnalog {
    /// `gain · Σ_m exp(jΦ[:, m])`.
    pub fn weights(&self) -> CVec {
        CVec::from_fn(self.phases.nrows(), |i, _| {
            self.phases.row(i).iter().map(|&p| expj(p)).sum::<C64>() * self.gain
        })
    }

    pub fn phase_shifters(&self) -> usize {
        self.phases.len()
    }
}

pub fn remark1_merge(phases: &DMatrix<f64>, c: &CVec) -> Result<MergedAnalog> {
    if phases.ncols() != c.len() || c.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} analog columns but {} digital weights",
            phases.ncols(),
            c.len()
        )));
    }
    let c0 = c[0];
    let tol = 1e-12
        * c.iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
    if c.iter().any(|z| (z - c0).norm() > tol) {
        return Err(Error::NotApplicable(
            "digital weights are not all equal".into(),
        ));
    }
    Ok(MergedAnalog {
        phases: phases.clone(),
        gain: c0,
    })
}
