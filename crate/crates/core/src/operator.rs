//! The linear map from a co-array weight matrix `W` to the quantity being
//! matched: either PSF samples `Aᵀ vec(W)` or co-array weights `Υ vec(W)`.

use crate::error::{Error, Result};
use crate::geometry::SelectionMatrix;
use crate::numerics::{matricize, vectorize, CMat, CVec, Design, C64};
use crate::steering::{TargetDomain, TargetSpec};

#[derive(Debug, Clone)]
pub enum SensingOperator {
    /// Stores `Aᵀ` (`V × N_t N_r`).
    Psf {
        at: CMat,
        n_t: usize,
        n_r: usize,
    },
    Coarray(SelectionMatrix),
}

/// Sparse linear combination of operator columns: `Σ coef · L[:, m]`.
pub(crate) type Combo = Vec<(usize, C64)>;

impl SensingOperator {
    /// PSF-domain operator from the effective steering matrix `A`
    /// (`N_t N_r × V`).
    pub fn psf(a: &CMat, n_t: usize, n_r: usize) -> Result<Self> {
        if a.nrows() != n_t * n_r {
            return Err(Error::ShapeMismatch(format!(
                "steering matrix has {} rows, expected {}",
                a.nrows(),
                n_t * n_r
            )));
        }
        Ok(SensingOperator::Psf {
            at: a.transpose(),
            n_t,
            n_r,
        })
    }

    pub fn coarray(sel: SelectionMatrix) -> Self {
        SensingOperator::Coarray(sel)
    }

    pub fn domain(&self) -> TargetDomain {
        match self {
            SensingOperator::Psf { .. } => TargetDomain::Psf,
            SensingOperator::Coarray(_) => TargetDomain::Coarray,
        }
    }

    pub fn n_t(&self) -> usize {
        match self {
            SensingOperator::Psf { n_t, .. } => *n_t,
            SensingOperator::Coarray(s) => s.n_t(),
        }
    }

    pub fn n_r(&self) -> usize {
        match self {
            SensingOperator::Psf { n_r, .. } => *n_r,
            SensingOperator::Coarray(s) => s.n_r(),
        }
    }

    pub fn out_len(&self) -> usize {
        match self {
            SensingOperator::Psf { at, .. } => at.nrows(),
            SensingOperator::Coarray(s) => s.n_sigma(),
        }
    }

    pub fn check_target(&self, target: &TargetSpec) -> Result<()> {
        if target.domain != self.domain() {
            return Err(Error::InvalidInput(format!(
                "{:?} target given to a {:?}-domain operator",
                target.domain,
                self.domain()
            )));
        }
        if target.len() != self.out_len() {
            return Err(Error::ShapeMismatch(format!(
                "target has {} entries, operator produces {}",
                target.len(),
                self.out_len()
            )));
        }
        Ok(())
    }

    /// `L vec(W)` for an `N_r × N_t` matrix.
    pub fn apply(&self, w: &CMat) -> Result<CVec> {
        if w.nrows() != self.n_r() || w.ncols() != self.n_t() {
            return Err(Error::ShapeMismatch(format!(
                "expected {}x{} weights, got {}x{}",
                self.n_r(),
                self.n_t(),
                w.nrows(),
                w.ncols()
            )));
        }
        let v = vectorize(w);
        match self {
            SensingOperator::Psf { at, .. } => Ok(at * v),
            SensingOperator::Coarray(s) => s.apply(&v),
        }
    }

    /// `L vec(W_r W_tᵀ)`.
    pub fn apply_factors(&self, w_r: &CMat, w_t: &CMat) -> Result<CVec> {
        if w_r.ncols() != w_t.ncols() {
            return Err(Error::ShapeMismatch("factor column counts differ".into()));
        }
        self.apply(&(w_r * w_t.transpose()))
    }

    /// `mat_{N_r×N_t}(Lᴴ y)`, the back-projection used for initialization.
    pub fn back_project(&self, y: &CVec) -> Result<CMat> {
        if y.len() != self.out_len() {
            return Err(Error::ShapeMismatch(format!(
                "vector has {} entries, operator produces {}",
                y.len(),
                self.out_len()
            )));
        }
        let v = match self {
            SensingOperator::Psf { at, .. } => at.adjoint() * y,
            SensingOperator::Coarray(s) => s.apply_transpose(y)?,
        };
        matricize(&v, self.n_r(), self.n_t())
    }

    /// Minimum-norm `W` with `L vec(W)` closest to `y`.
    pub fn least_squares(&self, y: &CVec) -> Result<CMat> {
        match self {
            SensingOperator::Psf { at, .. } => {
                let v = crate::numerics::lstsq_min_norm(at, y)?;
                matricize(&v, self.n_r(), self.n_t())
            }
            SensingOperator::Coarray(s) => {
                if y.len() != s.n_sigma() {
                    return Err(Error::ShapeMismatch(
                        "target length differs from N_Σ".into(),
                    ));
                }
                let mult = s.row_sums();
                let v = CVec::from_iterator(
                    s.column_rows().len(),
                    s.column_rows().iter().map(|&r| y[r] / mult[r] as f64),
                );
                matricize(&v, self.n_r(), self.n_t())
            }
        }
    }

    /// Design matrix whose column `j` is `Σ_k coef_k L[:, m_k]` for
    /// `combos[j] = [(m_k, coef_k), ...]`.
    pub(crate) fn design(&self, combos: &[Combo]) -> Design {
        match self {
            SensingOperator::Psf { at, .. } => {
                let mut d = CMat::zeros(at.nrows(), combos.len());
                for (j, combo) in combos.iter().enumerate() {
                    let mut col = d.column_mut(j);
                    for &(m, coef) in combo {
                        col.axpy(coef, &at.column(m), C64::new(1.0, 0.0));
                    }
                }
                Design::Dense(d)
            }
            SensingOperator::Coarray(s) => Design::Sparse {
                rows: s.n_sigma(),
                cols: combos
                    .iter()
                    .map(|combo| combo.iter().map(|&(m, coef)| (s.row_of(m), coef)).collect())
                    .collect(),
            },
        }
    }

    /// Kronecker column index of the pair `(t, r)`.
    pub(crate) fn pair(&self, t: usize, r: usize) -> usize {
        t * self.n_r() + r
    }
}
