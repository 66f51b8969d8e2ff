//! Fully digital beamformer design by alternating least squares over the
//! Tx and Rx factors of a rank-`Q` co-array weight matrix.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{matricize, numerical_rank, ridge_solve, svd_truncated, CMat, CVec, C64};
use crate::operator::{Combo, SensingOperator};
use crate::steering::TargetSpec;

/// Per-image Tx and Rx weights; column `q` of each is one component image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitalBank {
    #[serde(with = "crate::io::cmat_serde")]
    pub w_t: CMat,
    #[serde(with = "crate::io::cmat_serde")]
    pub w_r: CMat,
}

impl DigitalBank {
    pub fn new(w_t: CMat, w_r: CMat) -> Result<Self> {
        if w_t.ncols() != w_r.ncols() || w_t.ncols() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "Tx has {} images, Rx has {}; need equal and >= 1",
                w_t.ncols(),
                w_r.ncols()
            )));
        }
        Ok(Self { w_t, w_r })
    }

    pub fn q(&self) -> usize {
        self.w_t.ncols()
    }

    pub fn n_t(&self) -> usize {
        self.w_t.nrows()
    }

    pub fn n_r(&self) -> usize {
        self.w_r.nrows()
    }

    /// `W = W_r W_tᵀ`.
    pub fn matrix(&self) -> CMat {
        &self.w_r * self.w_t.transpose()
    }

    /// Scales each image so its largest Tx weight has unit modulus, moving
    /// the factor to the Rx side. Returns the images skipped because their
    /// Tx column is zero.
    pub fn normalize_tx(&mut self) -> Vec<usize> {
        normalize_columns(&mut self.w_t, &mut self.w_r)
    }
}

pub(crate) fn normalize_columns(w_t: &mut CMat, w_r: &mut CMat) -> Vec<usize> {
    let mut skipped = Vec::new();
    for q in 0..w_t.ncols() {
        let s = w_t.column(q).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if s == 0.0 {
            skipped.push(q);
            continue;
        }
        w_t.column_mut(q).unscale_mut(s);
        w_r.column_mut(q).scale_mut(s);
    }
    skipped
}

/// Iteration limits, stopping tolerance and regularization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub k_max: usize,
    /// Iterations of the digital-weight refinement inside the greedy solver.
    pub inner_k_max: usize,
    /// Stopping tolerance relative to `‖target‖²`.
    pub eps_rel: f64,
    /// Absolute tolerance; overrides `eps_rel` when set.
    pub eps_abs: Option<f64>,
    pub alpha: f64,
    pub seed: u64,
    /// Extra random initializations tried after the spectral one.
    pub restarts: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            k_max: 100,
            inner_k_max: 10,
            eps_rel: 1e-16,
            eps_abs: None,
            alpha: 1e-9,
            seed: 0,
            restarts: 0,
        }
    }
}

impl SolverConfig {
    /// Defaults used for the planar experiments.
    pub fn planar() -> Self {
        Self {
            alpha: 1e-4,
            eps_rel: 1e-6,
            ..Self::default()
        }
    }

    pub fn eps_max(&self, target_norm_sq: f64) -> f64 {
        self.eps_abs.unwrap_or(self.eps_rel * target_norm_sq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 || self.inner_k_max == 0 {
            return Err(Error::Config("iteration limits must be >= 1".into()));
        }
        if !(self.alpha >= 0.0)
            || !(self.eps_rel >= 0.0)
            || self.eps_abs.is_some_and(|e| !(e >= 0.0))
        {
            return Err(Error::Config(
                "alpha and tolerances must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Squared error after every full iteration, plus after every half step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorTrace {
    pub errors: Vec<f64>,
    pub half_steps: Vec<f64>,
}

impl ErrorTrace {
    pub fn last(&self) -> Option<f64> {
        self.errors.last().copied()
    }

    /// `(iteration, squared_error)` CSV with a header row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["iteration", "squared_error"])?;
        for (k, e) in self.errors.iter().enumerate() {
            w.write_record([(k + 1).to_string(), format!("{e:e}")])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn squared_error(op: &SensingOperator, target: &TargetSpec, bank: &DigitalBank) -> Result<f64> {
    Ok((&target.values - op.apply_factors(&bank.w_r, &bank.w_t)?).norm_squared())
}

/// `W_r` from the back-projected target and `W_t` from the conjugated top-`q`
/// right singular vectors.
pub fn spectral_init(op: &SensingOperator, target: &TargetSpec, q: usize) -> Result<DigitalBank> {
    op.check_target(target)?;
    let (n_t, n_r) = (op.n_t(), op.n_r());
    if q == 0 || q > n_t.min(n_r) {
        return Err(Error::InvalidInput(format!(
            "spectral initialization needs 1 <= Q <= min(N_t, N_r) = {}, got {q}",
            n_t.min(n_r)
        )));
    }
    let w = op.back_project(&target.values)?;
    if w.norm() == 0.0 {
        return DigitalBank::new(identity_columns(n_t, q), CMat::zeros(n_r, q));
    }
    let svd = svd_truncated(&w, q)?;
    let mut w_r = svd.u.clone();
    for (j, s) in svd.singular_values.iter().enumerate() {
        w_r.column_mut(j).scale_mut(*s);
    }
    DigitalBank::new(svd.v.conjugate(), w_r)
}

fn identity_columns(n: usize, q: usize) -> CMat {
    CMat::from_fn(n, q, |i, j| {
        if i == j {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Least-squares update of `W_r` with `W_t` fixed.
pub(crate) fn update_rx(op: &SensingOperator, psi: &CVec, w_t: &CMat, alpha: f64) -> Result<CMat> {
    let (n_t, n_r, q) = (op.n_t(), op.n_r(), w_t.ncols());
    let combos: Vec<Combo> = (0..q)
        .flat_map(|k| {
            (0..n_r).map(move |r| (0..n_t).map(|t| (op.pair(t, r), w_t[(t, k)])).collect())
        })
        .collect();
    let x = ridge_solve(&op.design(&combos), psi, alpha)?;
    matricize(&x, n_r, q)
}

/// Least-squares update of `W_t` with `W_r` fixed.
pub(crate) fn update_tx(op: &SensingOperator, psi: &CVec, w_r: &CMat, alpha: f64) -> Result<CMat> {
    let (n_t, n_r, q) = (op.n_t(), op.n_r(), w_r.ncols());
    let combos: Vec<Combo> = (0..n_t)
        .flat_map(|t| (0..q).map(move |k| (0..n_r).map(|r| (op.pair(t, r), w_r[(r, k)])).collect()))
        .collect();
    let x = ridge_solve(&op.design(&combos), psi, alpha)?;
    Ok(matricize(&x, q, n_t)?.transpose())
}

fn run_from(
    op: &SensingOperator,
    target: &TargetSpec,
    mut bank: DigitalBank,
    cfg: &SolverConfig,
) -> Result<(DigitalBank, ErrorTrace)> {
    let psi = &target.values;
    let eps = cfg.eps_max(psi.norm_squared());
    let mut trace = ErrorTrace::default();
    for _ in 0..cfg.k_max {
        bank.w_r = update_rx(op, psi, &bank.w_t, cfg.alpha)?;
        trace
            .half_steps
            .push((psi - op.apply_factors(&bank.w_r, &bank.w_t)?).norm_squared());
        bank.w_t = update_tx(op, psi, &bank.w_r, cfg.alpha)?;
        let err = (psi - op.apply_factors(&bank.w_r, &bank.w_t)?).norm_squared();
        if !err.is_finite() {
            return Err(Error::Singular("alternating minimization diverged".into()));
        }
        trace.half_steps.push(err);
        trace.errors.push(err);
        if err <= eps {
            break;
        }
    }
    Ok((bank, trace))
}

fn random_init(n_t: usize, n_r: usize, q: usize, seed: u64) -> DigitalBank {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || {
        C64::new(
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        )
    };
    let w_t = CMat::from_fn(n_t, q, |_, _| draw());
    DigitalBank {
        w_t,
        w_r: CMat::zeros(n_r, q),
    }
}

/// Rank-`q` alternating minimization from the spectral initialization, with
/// optional extra random restarts; the lowest final error wins.
pub fn altmin(
    op: &SensingOperator,
    target: &TargetSpec,
    q: usize,
    cfg: &SolverConfig,
) -> Result<(DigitalBank, ErrorTrace)> {
    cfg.validate()?;
    let init = spectral_init(op, target, q)?;
    if target.norm() == 0.0 {
        let bank = DigitalBank::new(init.w_t, CMat::zeros(op.n_r(), q))?;
        return Ok((
            bank,
            ErrorTrace {
                errors: vec![0.0],
                half_steps: vec![0.0, 0.0],
            },
        ));
    }
    let mut best = run_from(op, target, init, cfg)?;
    for k in 0..cfg.restarts {
        let seed = crate::seeds::mix(&[cfg.seed, k as u64]);
        let cand = run_from(op, target, random_init(op.n_t(), op.n_r(), q, seed), cfg)?;
        if cand.1.last() < best.1.last() {
            best = cand;
        }
    }
    Ok(best)
}

/// Factors `W` into `numerical_rank(W)` images with `W_r = UΣ`, `W_t = V̄`.
pub fn svd_factorize(w: &CMat) -> Result<DigitalBank> {
    let rank = numerical_rank(w).max(1);
    let svd = svd_truncated(w, rank)?;
    let mut w_r = svd.u.clone();
    for (j, s) in svd.singular_values.iter().enumerate() {
        w_r.column_mut(j).scale_mut(*s);
    }
    DigitalBank::new(svd.v.conjugate(), w_r)
}

/// Smallest `Q` in `q_range` whose alternating-minimization relative error
/// is at most `rel_tol`, scanning upward.
pub fn digital_min_q(
    op: &SensingOperator,
    target: &TargetSpec,
    q_range: std::ops::RangeInclusive<usize>,
    rel_tol: f64,
    cfg: &SolverConfig,
) -> Result<Option<(usize, DigitalBank)>> {
    let norm = target.norm();
    for q in q_range {
        let (bank, trace) = altmin(op, target, q, cfg)?;
        let rel = trace.last().unwrap_or(0.0).sqrt() / norm.max(f64::MIN_POSITIVE);
        if rel <= rel_tol {
            return Ok(Some((q, bank)));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_mra, make_ula, selection_matrix, sum_coarray};
    use crate::steering::target_stochastic;

    fn coarray_op(tx: &crate::geometry::ArrayGeometry) -> SensingOperator {
        let ca = sum_coarray(tx, tx).unwrap();
        SensingOperator::coarray(selection_matrix(tx, tx, &ca).unwrap())
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn spectral_init_of_zero_target() {
        let op = coarray_op(&make_ula(4).unwrap());
        let t = TargetSpec::coarray(CVec::zeros(7));
        let b = spectral_init(&op, &t, 2).unwrap();
        assert_eq!(b.matrix().norm(), 0.0);
        let (b2, tr) = altmin(&op, &t, 2, &SolverConfig::default()).unwrap();
        assert_eq!(b2.matrix().norm(), 0.0);
        assert_eq!(tr.errors, vec![0.0]);
    }

    #[test]
    fn spectral_init_matches_direct_sum() {
        let g = make_mra(5).unwrap();
        let op = coarray_op(&g);
        let t = target_stochastic(13, 4);
        // Σ_v ψ_v mat(column v of Υᵀ)
        let SensingOperator::Coarray(sel) = &op else {
            unreachable!()
        };
        let mut w = CMat::zeros(5, 5);
        for v in 0..13 {
            for m in 0..25 {
                if sel.row_of(m) == v {
                    w[(m % 5, m / 5)] += t.values[v];
                }
            }
        }
        let init = spectral_init(&op, &t, 5).unwrap();
        assert!((init.matrix() - &w).norm() < 1e-10 * w.norm());
        let rank1 = spectral_init(&op, &t, 1).unwrap();
        assert_eq!(numerical_rank(&rank1.matrix()), 1);
    }

    #[test]
    fn ula_rank_one_is_exact() {
        let op = coarray_op(&make_ula(11).unwrap());
        let t = target_stochastic(21, 11);
        let (bank, trace) = altmin(&op, &t, 1, &SolverConfig::default()).unwrap();
        let rel = squared_error(&op, &t, &bank).unwrap().sqrt() / t.norm();
        assert!(rel <= 1e-6, "rel {rel}");
        assert!(trace.errors.len() <= 100);
    }

    #[test]
    fn mra7_needs_two_images() {
        let op = coarray_op(&make_mra(7).unwrap());
        let t = target_stochastic(21, 5);
        let (b2, _) = altmin(&op, &t, 2, &SolverConfig::default()).unwrap();
        assert!(squared_error(&op, &t, &b2).unwrap().sqrt() / t.norm() <= 1e-6);
    }

    #[test]
    fn rank_one_fixed_point() {
        // Non-redundant pair: Υ is a permutation, so the spectral
        // initialization already recovers a rank-1 W exactly.
        let tx = crate::geometry::ArrayGeometry::linear(&[0, 1, 2]).unwrap();
        let rx = crate::geometry::ArrayGeometry::linear(&[0, 3, 6]).unwrap();
        let ca = sum_coarray(&tx, &rx).unwrap();
        let op = SensingOperator::coarray(selection_matrix(&tx, &rx, &ca).unwrap());
        let wr = CVec::from_fn(3, |i, _| c(1.0 + i as f64, 0.5));
        let wt = CVec::from_fn(3, |i, _| c(0.3, -(i as f64)));
        let t = TargetSpec::coarray(op.apply(&(&wr * wt.transpose())).unwrap());
        let cfg = SolverConfig {
            alpha: 0.0,
            ..SolverConfig::default()
        };
        let (bank, trace) = altmin(&op, &t, 1, &cfg).unwrap();
        assert!(trace.errors.len() <= 5);
        assert!(squared_error(&op, &t, &bank).unwrap() <= 1e-10);
    }

    #[test]
    fn reported_error_matches_recomputation() {
        let op = coarray_op(&make_mra(6).unwrap());
        let t = target_stochastic(17, 9);
        let (bank, trace) = altmin(&op, &t, 1, &SolverConfig::default()).unwrap();
        let again = squared_error(&op, &t, &bank).unwrap();
        assert!((trace.last().unwrap() - again).abs() <= 1e-12 * again.max(1e-300));
    }

    #[test]
    fn half_steps_do_not_increase() {
        let op = coarray_op(&make_mra(7).unwrap());
        let t = target_stochastic(21, 1);
        let cfg = SolverConfig {
            alpha: 0.0,
            k_max: 30,
            ..SolverConfig::default()
        };
        let (_, trace) = altmin(&op, &t, 1, &cfg).unwrap();
        for w in trace.half_steps.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn svd_factorize_examples() {
        let wr = CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 2.0), c(-1.0, 1.0)]);
        let wt = CVec::from_vec(vec![c(0.5, 0.5), c(1.0, 0.0)]);
        let w = &wr * wt.transpose();
        let b = svd_factorize(&w).unwrap();
        assert_eq!(b.q(), 1);
        assert!((b.matrix() - &w).norm() < 1e-12);

        let eye = CMat::identity(3, 3);
        let b3 = svd_factorize(&eye).unwrap();
        assert_eq!(b3.q(), 3);
        assert!((b3.matrix() - &eye).norm() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = CMat::from_fn(4, 6, |_, _| {
            C64::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            )
        });
        assert!((svd_factorize(&r).unwrap().matrix() - &r).norm() < 1e-10);
    }

    #[test]
    fn tx_normalization() {
        let mut b = DigitalBank::new(
            CMat::from_column_slice(2, 1, &[c(2.0, 0.0), c(1.0, 0.0)]),
            CMat::from_column_slice(2, 1, &[c(1.0, 0.0), c(1.0, 0.0)]),
        )
        .unwrap();
        let before = b.matrix();
        assert!(b.normalize_tx().is_empty());
        assert_eq!(b.w_t.as_slice(), &[c(1.0, 0.0), c(0.5, 0.0)]);
        assert_eq!(b.w_r.as_slice(), &[c(2.0, 0.0), c(2.0, 0.0)]);
        assert!((b.matrix() - before).norm() < 1e-15);
        let snapshot = b.clone();
        b.normalize_tx();
        assert_eq!(b, snapshot);

        let mut z = DigitalBank::new(CMat::zeros(2, 1), CMat::zeros(2, 1)).unwrap();
        assert_eq!(z.normalize_tx(), vec![0]);
    }

    #[test]
    fn trace_csv_layout() {
        let tr = ErrorTrace {
            errors: vec![0.5, 0.25],
            half_steps: vec![],
        };
        let s = tr.to_csv().unwrap();
        assert!(s.starts_with("iteration,squared_error\n1,5e-1\n2,2.5e-1"));
    }

    #[test]
    fn q_out_of_range_is_rejected() {
        let op = coarray_op(&make_ula(3).unwrap());
        let t = target_stochastic(5, 0);
        assert!(altmin(&op, &t, 4, &SolverConfig::default()).is_err());
        assert!(altmin(&op, &t, 0, &SolverConfig::default()).is_err());
    }
}
