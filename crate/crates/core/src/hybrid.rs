//! Hybrid and analog beamformer design with quantized phase shifters.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::closed_form::{
    lemma1_factor, thm1_hybrid_cont, thm2_hybrid_1bit, thm3_analog_cont, thm4_analog_1bit,
};
use crate::digital::{altmin, normalize_columns, DigitalBank, ErrorTrace, SolverConfig};
use crate::error::{Error, Result};
use crate::io::ComplexMatrixRecord;
use crate::numerics::{
    expj, lattice_index, lstsq_min_norm, on_lattice, quantize_phase, ridge_solve, Bits, CMat, CVec,
    Design, C64,
};
use crate::operator::{Combo, SensingOperator};
use crate::steering::TargetSpec;

/// `Q` images, each with `M_x` front ends per side. Analog column
/// `q·M_x + m` of `phases_x` feeds front end `m` of image `q`; digital
/// weights `c_x` are `M_x × Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridBank {
    pub bits: Bits,
    pub m_t: usize,
    pub m_r: usize,
    pub phases_t: DMatrix<f64>,
    pub phases_r: DMatrix<f64>,
    pub c_t: CMat,
    pub c_r: CMat,
}

impl HybridBank {
    /// A bank with no images.
    pub fn empty(n_t: usize, n_r: usize, m_t: usize, m_r: usize, bits: Bits) -> Self {
        Self {
            bits,
            m_t,
            m_r,
            phases_t: DMatrix::zeros(n_t, 0),
            phases_r: DMatrix::zeros(n_r, 0),
            c_t: CMat::zeros(m_t, 0),
            c_r: CMat::zeros(m_r, 0),
        }
    }

    pub fn q(&self) -> usize {
        self.c_t.ncols()
    }

    pub fn n_t(&self) -> usize {
        self.phases_t.nrows()
    }

    pub fn n_r(&self) -> usize {
        self.phases_r.nrows()
    }

    /// Appends one image given its `N_x × M_x` phases and `M_x` weights.
    pub fn push_image(
        &mut self,
        pt: &DMatrix<f64>,
        ct: &CVec,
        pr: &DMatrix<f64>,
        cr: &CVec,
    ) -> Result<()> {
        if pt.shape() != (self.n_t(), self.m_t)
            || pr.shape() != (self.n_r(), self.m_r)
            || ct.len() != self.m_t
            || cr.len() != self.m_r
        {
            return Err(Error::ShapeMismatch(
                "image does not match bank dimensions".into(),
            ));
        }
        let q = self.q();
        self.phases_t = append_columns(&self.phases_t, pt);
        self.phases_r = append_columns(&self.phases_r, pr);
        self.c_t = self.c_t.clone().insert_column(q, C64::new(0.0, 0.0));
        self.c_t.set_column(q, ct);
        self.c_r = self.c_r.clone().insert_column(q, C64::new(0.0, 0.0));
        self.c_r.set_column(q, cr);
        Ok(())
    }

    pub fn analog_t(&self) -> CMat {
        self.phases_t.map(expj)
    }

    pub fn analog_r(&self) -> CMat {
        self.phases_r.map(expj)
    }

    /// Per-image effective Tx weights `F_{t,q} c_{t,q}` as columns.
    pub fn tx_weights(&self) -> CMat {
        effective(&self.phases_t, &self.c_t)
    }

    pub fn rx_weights(&self) -> CMat {
        effective(&self.phases_r, &self.c_r)
    }

    pub fn to_digital(&self) -> Result<DigitalBank> {
        DigitalBank::new(self.tx_weights(), self.rx_weights())
    }

    /// `W = F_r(I ⊙ C_r)(I ⊙ C_t)ᵀF_tᵀ`.
    pub fn matrix(&self) -> CMat {
        self.rx_weights() * self.tx_weights().transpose()
    }

    /// Shapes, unit modulus by construction, and lattice membership of every
    /// phase when `bits` is finite.
    pub fn validate(&self) -> Result<()> {
        let q = self.q();
        if self.c_r.ncols() != q
            || self.phases_t.ncols() != q * self.m_t
            || self.phases_r.ncols() != q * self.m_r
            || self.c_t.nrows() != self.m_t
            || self.c_r.nrows() != self.m_r
        {
            return Err(Error::ShapeMismatch(
                "inconsistent hybrid bank dimensions".into(),
            ));
        }
        if self.m_t == 0 || self.m_r == 0 {
            return Err(Error::InvalidInput("front-end counts must be >= 1".into()));
        }
        if self.bits.is_finite() {
            for &p in self.phases_t.iter().chain(self.phases_r.iter()) {
                if !on_lattice(p, self.bits, 1e-12) {
                    return Err(Error::InvalidInput(format!(
                        "phase {p} is not on the {}-bit lattice",
                        self.bits
                    )));
                }
            }
        }
        if self
            .phases_t
            .iter()
            .chain(self.phases_r.iter())
            .any(|p| !p.is_finite())
        {
            return Err(Error::InvalidInput("non-finite phase".into()));
        }
        Ok(())
    }

    /// Per image, scales the Tx digital weights so the largest effective Tx
    /// weight has unit modulus and compensates on the Rx side. Returns the
    /// images skipped because their Tx weights vanish.
    pub fn normalize_tx(&mut self) -> Vec<usize> {
        let mut wt = self.tx_weights();
        let mut wr = CMat::from_element(1, self.q(), C64::new(1.0, 0.0));
        let skipped = normalize_columns(&mut wt, &mut wr);
        for q in 0..self.q() {
            let s = wr[(0, q)].re;
            self.c_t.column_mut(q).unscale_mut(s);
            self.c_r.column_mut(q).scale_mut(s);
        }
        skipped
    }

    /// Zero-weight front ends appended so each image has `m_t`/`m_r`.
    pub fn pad_front_ends(&self, m_t: usize, m_r: usize) -> Result<Self> {
        if m_t < self.m_t || m_r < self.m_r {
            return Err(Error::InvalidInput("cannot pad to fewer front ends".into()));
        }
        let mut out = HybridBank::empty(self.n_t(), self.n_r(), m_t, m_r, self.bits);
        for q in 0..self.q() {
            let (pt, ct) = pad_image(&self.phases_t, &self.c_t, q, self.m_t, m_t);
            let (pr, cr) = pad_image(&self.phases_r, &self.c_r, q, self.m_r, m_r);
            out.push_image(&pt, &ct, &pr, &cr)?;
        }
        Ok(out)
    }

    /// Appends all-zero images until the bank has `q` of them.
    pub fn pad_images(&mut self, q: usize) {
        while self.q() < q {
            let pt = DMatrix::zeros(self.n_t(), self.m_t);
            let pr = DMatrix::zeros(self.n_r(), self.m_r);
            let (ct, cr) = (CVec::zeros(self.m_t), CVec::zeros(self.m_r));
            self.push_image(&pt, &ct, &pr, &cr)
                .expect("shapes follow the bank");
        }
    }

    /// First `q` images.
    pub fn truncated(&self, q: usize) -> Self {
        let q = q.min(self.q());
        Self {
            bits: self.bits,
            m_t: self.m_t,
            m_r: self.m_r,
            phases_t: self.phases_t.columns(0, q * self.m_t).into_owned(),
            phases_r: self.phases_r.columns(0, q * self.m_r).into_owned(),
            c_t: self.c_t.columns(0, q).into_owned(),
            c_r: self.c_r.columns(0, q).into_owned(),
        }
    }

    /// Replaces every phase by its quantized value.
    pub fn quantized(&self, bits: Bits) -> Self {
        Self {
            bits,
            phases_t: self.phases_t.map(|p| quantize_phase(p, bits)),
            phases_r: self.phases_r.map(|p| quantize_phase(p, bits)),
            ..self.clone()
        }
    }
}

fn append_columns(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn pad_image(
    phases: &DMatrix<f64>,
    c: &CMat,
    q: usize,
    m: usize,
    m_new: usize,
) -> (DMatrix<f64>, CVec) {
    let mut p = DMatrix::zeros(phases.nrows(), m_new);
    p.columns_mut(0, m).copy_from(&phases.columns(q * m, m));
    let mut cv = CVec::zeros(m_new);
    cv.rows_mut(0, m).copy_from(&c.column(q));
    (p, cv)
}

fn effective(phases: &DMatrix<f64>, c: &CMat) -> CMat {
    let (m, q) = (c.nrows(), c.ncols());
    let mut out = CMat::zeros(phases.nrows(), q);
    for k in 0..q {
        for j in 0..m {
            let cj = c[(j, k)];
            for i in 0..phases.nrows() {
                out[(i, k)] += expj(phases[(i, k * m + j)]) * cj;
            }
        }
    }
    out
}

/// Analog phases either as lattice indices (finite bits) or radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhaseData {
    Indices { indices: Vec<u64> },
    Radians { radians: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMatrixRecord {
    pub rows: usize,
    pub cols: usize,
    #[serde(flatten)]
    pub data: PhaseData,
}

impl PhaseMatrixRecord {
    fn encode(p: &DMatrix<f64>, bits: Bits) -> Self {
        let data = if bits.is_finite() {
            PhaseData::Indices {
                indices: p
                    .iter()
                    .map(|&x| lattice_index(x, bits).expect("finite bits"))
                    .collect(),
            }
        } else {
            PhaseData::Radians {
                radians: p.iter().copied().collect(),
            }
        };
        Self {
            rows: p.nrows(),
            cols: p.ncols(),
            data,
        }
    }

    fn decode(&self, bits: Bits) -> Result<DMatrix<f64>> {
        let vals: Vec<f64> = match (&self.data, bits.step()) {
            (PhaseData::Indices { indices }, Some(step)) => {
                let levels = bits.levels().expect("finite bits");
                if let Some(bad) = indices.iter().find(|&&k| k >= levels) {
                    return Err(Error::InvalidInput(format!(
                        "phase index {bad} out of range"
                    )));
                }
                indices.iter().map(|&k| k as f64 * step).collect()
            }
            (PhaseData::Radians { radians }, None) => radians.clone(),
            _ => {
                return Err(Error::InvalidInput(
                    "phase encoding does not match the bit depth".into(),
                ))
            }
        };
        if vals.len() != self.rows * self.cols {
            return Err(Error::InvalidInput("phase matrix size mismatch".into()));
        }
        Ok(DMatrix::from_vec(self.rows, self.cols, vals))
    }
}

/// JSON form of [`HybridBank`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridBankRecord {
    pub bits: Bits,
    pub m_t: usize,
    pub m_r: usize,
    pub q: usize,
    pub phases_t: PhaseMatrixRecord,
    pub phases_r: PhaseMatrixRecord,
    pub c_t: ComplexMatrixRecord,
    pub c_r: ComplexMatrixRecord,
}

impl Serialize for HybridBank {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        HybridBankRecord {
            bits: self.bits,
            m_t: self.m_t,
            m_r: self.m_r,
            q: self.q(),
            phases_t: PhaseMatrixRecord::encode(&self.phases_t, self.bits),
            phases_r: PhaseMatrixRecord::encode(&self.phases_r, self.bits),
            c_t: (&self.c_t).into(),
            c_r: (&self.c_r).into(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for HybridBank {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = HybridBankRecord::deserialize(d)?;
        let bank = HybridBank {
            bits: r.bits,
            m_t: r.m_t,
            m_r: r.m_r,
            phases_t: r.phases_t.decode(r.bits).map_err(D::Error::custom)?,
            phases_r: r.phases_r.decode(r.bits).map_err(D::Error::custom)?,
            c_t: CMat::try_from(&r.c_t).map_err(D::Error::custom)?,
            c_r: CMat::try_from(&r.c_r).map_err(D::Error::custom)?,
        };
        bank.validate().map_err(D::Error::custom)?;
        if bank.q() != r.q {
            return Err(D::Error::custom("image count does not match weights"));
        }
        Ok(bank)
    }
}

fn least_squares(f: &CMat, w: &CVec, alpha: f64) -> Result<CVec> {
    if alpha > 0.0 {
        ridge_solve(&Design::Dense(f.clone()), w, alpha)
    } else {
        lstsq_min_norm(f, w)
    }
}

/// Greedy analog/digital split of one weight vector with `m` front ends.
///
/// Pairs of columns come from the two-phasor decomposition of the current
/// residual; an odd last column takes the residual's phases. Digital
/// weights are re-fit by least squares against `w` after every step.
pub fn greedy_sub(w: &CVec, m: usize, bits: Bits, alpha: f64) -> Result<(DMatrix<f64>, CVec)> {
    if m == 0 {
        return Err(Error::InvalidInput("need at least one front end".into()));
    }
    let n = w.len();
    let mut phases = DMatrix::zeros(n, m);
    let mut c = CVec::zeros(m);
    let mut residual = w.clone();
    for pair in 0..m / 2 {
        let (p2, _) = lemma1_factor(&residual);
        phases
            .columns_mut(2 * pair, 2)
            .copy_from(&p2.map(|p| quantize_phase(p, bits)));
        let used = 2 * pair + 2;
        let f = phases.columns(0, used).map(expj);
        let sol = least_squares(&f, w, alpha)?;
        c.rows_mut(0, used).copy_from(&sol);
        residual = w - f * sol;
    }
    if m % 2 == 1 {
        for i in 0..n {
            let z = residual[i];
            phases[(i, m - 1)] = if z.norm() == 0.0 {
                0.0
            } else {
                quantize_phase(z.arg(), bits)
            };
        }
        c = least_squares(&phases.map(expj), w, alpha)?;
    }
    Ok((phases, c))
}

fn rx_refine_design(op: &SensingOperator, bank: &HybridBank, wt: &CMat) -> Design {
    let (n_t, n_r, m_r) = (op.n_t(), op.n_r(), bank.m_r);
    let fr = bank.analog_r();
    let combos: Vec<Combo> = (0..bank.q())
        .flat_map(|l| {
            let fr = &fr;
            (0..m_r).map(move |m| {
                let col = l * m_r + m;
                let mut combo = Vec::with_capacity(n_t * n_r);
                for t in 0..n_t {
                    let wtl = wt[(t, l)];
                    for r in 0..n_r {
                        combo.push((op.pair(t, r), fr[(r, col)] * wtl));
                    }
                }
                combo
            })
        })
        .collect();
    op.design(&combos)
}

fn tx_refine_design(op: &SensingOperator, bank: &HybridBank, wr: &CMat) -> Design {
    let (n_t, n_r, m_t) = (op.n_t(), op.n_r(), bank.m_t);
    let ft = bank.analog_t();
    let combos: Vec<Combo> = (0..bank.q())
        .flat_map(|l| {
            let ft = &ft;
            (0..m_t).map(move |m| {
                let col = l * m_t + m;
                let mut combo = Vec::with_capacity(n_t * n_r);
                for t in 0..n_t {
                    let f = ft[(t, col)];
                    for r in 0..n_r {
                        combo.push((op.pair(t, r), wr[(r, l)] * f));
                    }
                }
                combo
            })
        })
        .collect();
    op.design(&combos)
}

pub fn bank_squared_error(
    op: &SensingOperator,
    target: &TargetSpec,
    bank: &HybridBank,
) -> Result<f64> {
    if bank.q() == 0 {
        return Ok(target.values.norm_squared());
    }
    Ok((&target.values - op.apply_factors(&bank.rx_weights(), &bank.tx_weights())?).norm_squared())
}

/// Alternating least squares over the digital weights with all analog
/// phases fixed, starting from the bank's current `C_t`. Returns the
/// squared error after each iteration.
pub fn refine_digital(
    op: &SensingOperator,
    target: &TargetSpec,
    bank: &mut HybridBank,
    k_max: usize,
    eps_max: f64,
    alpha: f64,
) -> Result<Vec<f64>> {
    op.check_target(target)?;
    let psi = &target.values;
    let mut errors = Vec::new();
    if bank.q() == 0 {
        return Ok(errors);
    }
    let (m_t, m_r, q) = (bank.m_t, bank.m_r, bank.q());
    for _ in 0..k_max {
        let x = ridge_solve(&rx_refine_design(op, bank, &bank.tx_weights()), psi, alpha)?;
        bank.c_r = CMat::from_column_slice(m_r, q, x.as_slice());
        let x = ridge_solve(&tx_refine_design(op, bank, &bank.rx_weights()), psi, alpha)?;
        bank.c_t = CMat::from_column_slice(m_t, q, x.as_slice());
        let err = bank_squared_error(op, target, bank)?;
        if !err.is_finite() {
            return Err(Error::Singular("digital weight refinement diverged".into()));
        }
        errors.push(err);
        if err <= eps_max {
            break;
        }
    }
    Ok(errors)
}

/// Front-end counts and phase resolution of a hybrid design problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub m_t: usize,
    pub m_r: usize,
    pub bits: Bits,
}

impl Architecture {
    pub fn new(m_t: usize, m_r: usize, bits: Bits) -> Result<Self> {
        if m_t == 0 || m_r == 0 {
            return Err(Error::InvalidInput("front-end counts must be >= 1".into()));
        }
        Ok(Self { m_t, m_r, bits })
    }
}

/// Result of the greedy solver run up to `Q` images. `snapshots[q-1]` is the
/// bank after `q` images (identical to a run stopped at `q`), and
/// `errors[q-1]` its squared error.
#[derive(Debug, Clone)]
pub struct GreedyRun {
    pub snapshots: Vec<HybridBank>,
    pub errors: Vec<f64>,
    pub initial_error: f64,
}

impl GreedyRun {
    pub fn bank(&self, q: usize) -> Option<&HybridBank> {
        q.checked_sub(1).and_then(|i| self.snapshots.get(i))
    }

    /// Squared error at `q` images; `q = 0` is the empty model.
    pub fn error(&self, q: usize) -> Option<f64> {
        if q == 0 {
            Some(self.initial_error)
        } else {
            self.errors.get(q - 1).copied()
        }
    }

    pub fn final_bank(&self) -> Option<&HybridBank> {
        self.snapshots.last()
    }
}

/// Builds the bank one image at a time: a rank-one digital fit of the
/// residual, split into analog/digital parts per side, followed by joint
/// refinement of all digital weights.
pub fn greedy_main(
    op: &SensingOperator,
    target: &TargetSpec,
    arch: Architecture,
    q: usize,
    cfg: &SolverConfig,
) -> Result<GreedyRun> {
    cfg.validate()?;
    op.check_target(target)?;
    let psi = &target.values;
    let eps = cfg.eps_max(psi.norm_squared());
    let inner_cfg = SolverConfig {
        eps_abs: Some(eps),
        restarts: 0,
        ..cfg.clone()
    };
    let mut bank = HybridBank::empty(op.n_t(), op.n_r(), arch.m_t, arch.m_r, arch.bits);
    let mut run = GreedyRun {
        snapshots: Vec::with_capacity(q),
        errors: Vec::with_capacity(q),
        initial_error: psi.norm_squared(),
    };
    let mut residual = psi.clone();
    for _ in 0..q {
        if residual.norm_squared() <= eps {
            bank.pad_images(bank.q() + 1);
        } else {
            let res_target = TargetSpec {
                domain: target.domain,
                values: residual.clone(),
            };
            let (digital, _) = altmin(op, &res_target, 1, &inner_cfg)?;
            let (pt, ct) = greedy_sub(
                &digital.w_t.column(0).into_owned(),
                arch.m_t,
                arch.bits,
                cfg.alpha,
            )?;
            let (pr, cr) = greedy_sub(
                &digital.w_r.column(0).into_owned(),
                arch.m_r,
                arch.bits,
                cfg.alpha,
            )?;
            bank.push_image(&pt, &ct, &pr, &cr)?;
            refine_digital(op, target, &mut bank, cfg.inner_k_max, eps, cfg.alpha)?;
        }
        residual = psi - op.apply_factors(&bank.rx_weights(), &bank.tx_weights())?;
        run.errors.push(residual.norm_squared());
        run.snapshots.push(bank.clone());
    }
    Ok(run)
}

/// Exact or near-exact constructions available for `q` images, if any:
/// continuous phases use a rank-limited digital fit split by the two-phasor
/// lemma (or its four-image analog form), and finite phases fall back to
/// the entrywise one-bit constructions once `q` is large enough.
pub fn closed_form_candidate(
    op: &SensingOperator,
    target: &TargetSpec,
    arch: Architecture,
    q: usize,
    cfg: &SolverConfig,
) -> Result<Option<HybridBank>> {
    let (n_t, n_r) = (op.n_t(), op.n_r());
    let max_rank = n_t.min(n_r);
    let hybrid = arch.m_t >= 2 && arch.m_r >= 2;
    let base = match arch.bits {
        Bits::Infinite if hybrid => {
            let (digital, _) = altmin(op, target, q.min(max_rank), cfg)?;
            thm1_hybrid_cont(&digital)
        }
        Bits::Infinite if q >= 4 => {
            let (digital, _) = altmin(op, target, (q / 4).min(max_rank), cfg)?;
            thm3_analog_cont(&digital)
        }
        Bits::Finite(_) if hybrid && q >= n_t * n_r => {
            thm2_hybrid_1bit(&op.least_squares(&target.values)?)
        }
        Bits::Finite(_) if q >= 4 * n_t * n_r => {
            thm4_analog_1bit(&op.least_squares(&target.values)?)
        }
        _ => return Ok(None),
    };
    let mut bank = base.pad_front_ends(arch.m_t, arch.m_r)?;
    bank.bits = arch.bits;
    bank.pad_images(q);
    Ok(Some(bank))
}

/// Bank with `q` images taken from a greedy run, or the closed-form
/// candidate when that one fits the target better.
fn best_at(
    op: &SensingOperator,
    target: &TargetSpec,
    arch: Architecture,
    run: &GreedyRun,
    q: usize,
    cfg: &SolverConfig,
) -> Result<(HybridBank, f64)> {
    let mut best = match run.bank(q) {
        Some(b) => (b.clone(), run.error(q).expect("recorded with its bank")),
        None => (
            HybridBank::empty(op.n_t(), op.n_r(), arch.m_t, arch.m_r, arch.bits),
            run.initial_error,
        ),
    };
    if q > 0 {
        if let Some(cand) = closed_form_candidate(op, target, arch, q, cfg)? {
            let err = bank_squared_error(op, target, &cand)?;
            if err < best.1 {
                best = (cand, err);
            }
        }
    }
    Ok(best)
}

/// Greedy design, replaced by the closed-form candidate when that one fits
/// the target better.
pub fn solve_hybrid(
    op: &SensingOperator,
    target: &TargetSpec,
    arch: Architecture,
    q: usize,
    cfg: &SolverConfig,
) -> Result<(HybridBank, f64)> {
    let run = greedy_main(op, target, arch, q, cfg)?;
    best_at(op, target, arch, &run, q, cfg)
}

/// Squared errors of [`solve_hybrid`] at every `Q` in `qs`, sharing one
/// greedy run.
pub fn solve_hybrid_sweep(
    op: &SensingOperator,
    target: &TargetSpec,
    arch: Architecture,
    qs: &[usize],
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let top = qs.iter().copied().max().unwrap_or(0);
    let run = greedy_main(op, target, arch, top, cfg)?;
    qs.iter()
        .map(|&q| best_at(op, target, arch, &run, q, cfg).map(|b| b.1))
        .collect()
}

/// Quantizes the two-front-end split of a rank-`q` digital solution and
/// re-fits the digital weights (`k_refine` iterations).
pub fn quantized_thm1_baseline(
    op: &SensingOperator,
    target: &TargetSpec,
    q: usize,
    bits: Bits,
    k_refine: usize,
    cfg: &SolverConfig,
) -> Result<(HybridBank, f64)> {
    let (digital, _) = altmin(op, target, q, cfg)?;
    let mut bank = thm1_hybrid_cont(&digital).quantized(bits);
    let eps = cfg.eps_max(target.values.norm_squared());
    refine_digital(op, target, &mut bank, k_refine, eps, cfg.alpha)?;
    let err = bank_squared_error(op, target, &bank)?;
    Ok((bank, err))
}

/// Outcome of the search for the fewest images meeting a tolerance.
#[derive(Debug, Clone)]
pub enum MinQOutcome {
    Found {
        q: usize,
        bank: HybridBank,
        error: f64,
    },
    /// No `Q` in range met the tolerance; reports the best one seen.
    Infeasible { best_q: usize, best_error: f64 },
}

/// Bisection over `Q` for the smallest image count whose squared error is at
/// most `eps_max`. A single greedy run to the top of the range provides the
/// error at every `Q`; when the realized curve is not monotone over the range,
/// every `Q` is scanned from the bottom instead.
pub fn min_q_search(
    op: &SensingOperator,
    target: &TargetSpec,
    arch: Architecture,
    eps_max: f64,
    q_range: std::ops::RangeInclusive<usize>,
    cfg: &SolverConfig,
) -> Result<MinQOutcome> {
    let (lo, hi) = (*q_range.start(), *q_range.end());
    if lo > hi {
        return Err(Error::InvalidInput("empty Q range".into()));
    }
    let run = greedy_main(op, target, arch, hi, cfg)?;
    let mut cache: Vec<Option<(HybridBank, f64)>> = vec![None; hi + 1];
    let mut eval = |q: usize| -> Result<(HybridBank, f64)> {
        if let Some(hit) = &cache[q] {
            return Ok(hit.clone());
        }
        let best = best_at(op, target, arch, &run, q, cfg)?;
        cache[q] = Some(best.clone());
        Ok(best)
    };

    let monotone = (lo..hi).all(|q| run.error(q + 1) <= run.error(q));
    let found = if monotone {
        let (mut a, mut b) = (lo, hi + 1);
        while a < b {
            let mid = a + (b - a) / 2;
            if eval(mid)?.1 <= eps_max {
                b = mid;
            } else {
                a = mid + 1;
            }
        }
        (a <= hi).then_some(a)
    } else {
        let mut hit = None;
        for q in lo..=hi {
            if eval(q)?.1 <= eps_max {
                hit = Some(q);
                break;
            }
        }
        hit
    };
    match found {
        Some(q) => {
            let (bank, error) = eval(q)?;
            Ok(MinQOutcome::Found { q, bank, error })
        }
        None => {
            let mut best = (hi, f64::INFINITY);
            for q in lo..=hi {
                let e = eval(q)?.1;
                if e < best.1 {
                    best = (q, e);
                }
            }
            Ok(MinQOutcome::Infeasible {
                best_q: best.0,
                best_error: best.1,
            })
        }
    }
}

/// Error trace of a greedy run in the digital solver's trace format.
pub fn greedy_trace(run: &GreedyRun) -> ErrorTrace {
    ErrorTrace {
        errors: run.errors.clone(),
        half_steps: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_mra, make_ula, selection_matrix, sum_coarray, ArrayGeometry};
    use crate::numerics::TWO_PI;
    use crate::steering::target_stochastic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn randv(seed: u64, n: usize) -> CVec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CVec::from_fn(n, |_, _| {
            c(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            )
        })
    }

    fn coarray_op(g: &ArrayGeometry) -> SensingOperator {
        let ca = sum_coarray(g, g).unwrap();
        SensingOperator::coarray(selection_matrix(g, g, &ca).unwrap())
    }

    #[test]
    fn greedy_sub_exact_for_two_front_ends_continuous() {
        for seed in 0..5 {
            let w = randv(seed, 9);
            let (p, cv) = greedy_sub(&w, 2, Bits::Infinite, 0.0).unwrap();
            assert!((&w - p.map(expj) * cv).norm() <= 1e-10 * w.norm());
        }
    }

    #[test]
    fn greedy_sub_one_bit_many_front_ends() {
        let w = randv(17, 8);
        let (p, cv) = greedy_sub(&w, 16, Bits::Finite(1), 1e-12).unwrap();
        assert!(p.iter().all(|&x| x == 0.0 || x == std::f64::consts::PI));
        assert!((&w - p.map(expj) * cv).norm() <= 1e-6 * w.norm());
    }

    #[test]
    fn greedy_sub_equal_magnitudes_single_front_end() {
        let w = CVec::from_fn(6, |i, _| C64::from_polar(2.0, 0.7 * i as f64));
        let (p, cv) = greedy_sub(&w, 1, Bits::Infinite, 0.0).unwrap();
        assert!((&w - p.map(expj) * cv).norm() <= 1e-12);
    }

    #[test]
    fn greedy_sub_zero_vector() {
        let (p, cv) = greedy_sub(&CVec::zeros(4), 3, Bits::Finite(2), 1e-9).unwrap();
        assert_eq!(p, DMatrix::zeros(4, 3));
        assert!(cv.norm() == 0.0);
    }

    #[test]
    fn greedy_sub_residual_is_orthogonal_to_used_columns() {
        let w = randv(2, 10);
        for m in 1..=5 {
            let (p, cv) = greedy_sub(&w, m, Bits::Finite(3), 1e-12).unwrap();
            let f = p.map(expj);
            let r = &w - &f * cv;
            assert!((f.adjoint() * r).norm() <= 1e-8 * w.norm());
        }
    }

    #[test]
    fn refine_identities_match_direct_expansion() {
        let g = make_mra(4).unwrap();
        let op = coarray_op(&g);
        let mut bank = HybridBank::empty(4, 4, 2, 3, Bits::Finite(3));
        for k in 0..2 {
            let pt = DMatrix::from_fn(4, 2, |i, j| {
                quantize_phase((i * 3 + j + k) as f64, Bits::Finite(3))
            });
            let pr = DMatrix::from_fn(4, 3, |i, j| {
                quantize_phase((i + 5 * j + k) as f64, Bits::Finite(3))
            });
            bank.push_image(&pt, &randv(k as u64, 2), &pr, &randv(10 + k as u64, 3))
                .unwrap();
        }
        let direct = op.apply(&bank.matrix()).unwrap();
        let dr = rx_refine_design(&op, &bank, &bank.tx_weights());
        let vec_cr = CVec::from_column_slice(bank.c_r.as_slice());
        assert!((dr.mul(&vec_cr) - &direct).norm() < 1e-12);
        let dt = tx_refine_design(&op, &bank, &bank.rx_weights());
        let vec_ct = CVec::from_column_slice(bank.c_t.as_slice());
        assert!((dt.mul(&vec_ct) - &direct).norm() < 1e-12);
    }

    #[test]
    fn refine_scalar_case_is_plain_least_squares() {
        let g = make_ula(3).unwrap();
        let op = coarray_op(&g);
        let t = target_stochastic(5, 1);
        let mut bank = HybridBank::empty(3, 3, 1, 1, Bits::Infinite);
        let pt = DMatrix::from_column_slice(3, 1, &[0.1, 0.5, 1.0]);
        let pr = DMatrix::from_column_slice(3, 1, &[2.0, 0.0, 1.5]);
        let one = CVec::from_element(1, c(1.0, 0.0));
        bank.push_image(&pt, &one, &pr, &one).unwrap();
        refine_digital(&op, &t, &mut bank, 3, 0.0, 0.0).unwrap();
        let a = op
            .apply(&(pr.map(expj) * pt.map(expj).transpose()))
            .unwrap();
        let coef = a.dotc(&t.values) / a.norm_squared();
        let got = bank.c_r[(0, 0)] * bank.c_t[(0, 0)];
        assert!((got - coef).norm() < 1e-10);
    }

    #[test]
    fn refine_zero_target_gives_zero_weights() {
        let g = make_ula(3).unwrap();
        let op = coarray_op(&g);
        let t = TargetSpec::coarray(CVec::zeros(5));
        let mut bank = HybridBank::empty(3, 3, 2, 2, Bits::Finite(2));
        let p = DMatrix::from_element(3, 2, 0.0);
        let cv = CVec::from_element(2, c(1.0, 0.0));
        bank.push_image(&p, &cv, &p, &cv).unwrap();
        refine_digital(&op, &t, &mut bank, 2, 0.0, 1e-9).unwrap();
        assert!(bank.c_r.norm() < 1e-12);
    }

    #[test]
    fn refine_from_exact_theorem1_does_not_increase_error() {
        let g = make_mra(5).unwrap();
        let op = coarray_op(&g);
        let t = target_stochastic(13, 6);
        let (digital, _) = altmin(&op, &t, 2, &SolverConfig::default()).unwrap();
        let mut bank = thm1_hybrid_cont(&digital);
        let before = bank_squared_error(&op, &t, &bank).unwrap();
        refine_digital(&op, &t, &mut bank, 10, 0.0, 1e-9).unwrap();
        let after = bank_squared_error(&op, &t, &bank).unwrap();
        assert!(after <= before * (1.0 + 1e-9) + 1e-20);
    }

    #[test]
    fn greedy_phases_on_lattice_and_error_decreases() {
        let g = make_ula(11).unwrap();
        let op = coarray_op(&g);
        let t = target_stochastic(21, 3);
        let arch = Architecture::new(2, 2, Bits::Finite(5)).unwrap();
        let run = greedy_main(&op, &t, arch, 8, &SolverConfig::default()).unwrap();
        assert_eq!(run.error(0).unwrap(), t.values.norm_squared());
        assert!(run.error(8).unwrap() < run.error(2).unwrap());
        for b in &run.snapshots {
            b.validate().unwrap();
        }
        let last = run.final_bank().unwrap();
        assert!(last.phases_t.iter().all(|&p| (0.0..TWO_PI).contains(&p)));
        let recomputed = bank_squared_error(&op, &t, last).unwrap();
        assert!((recomputed - run.error(8).unwrap()).abs() <= 1e-12 * recomputed.max(1e-300));
    }

    #[test]
    fn greedy_prefix_property() {
        let g = make_mra(5).unwrap();
        let op = coarray_op(&g);
        let t = target_stochastic(13, 8);
        let arch = Architecture::new(2, 1, Bits::Finite(3)).unwrap();
        let long = greedy_main(&op, &t, arch, 4, &SolverConfig::default()).unwrap();
        let short = greedy_main(&op, &t, arch, 2, &SolverConfig::default()).unwrap();
        assert_eq!(long.snapshots[1], short.snapshots[1]);
        assert_eq!(long.errors[..2], short.errors[..]);
    }

    #[test]
    fn continuous_two_front_ends_reach_digital_rank() {
        let g = make_mra(7).unwrap();
        let op = coarray_op(&g);
        let t = target_stochastic(21, 2);
        let arch = Architecture::new(2, 2, Bits::Infinite).unwrap();
        let (bank, err) = solve_hybrid(&op, &t, arch, 2, &SolverConfig::default()).unwrap();
        assert_eq!(bank.q(), 2);
        assert!(err.sqrt() / t.norm() <= 1e-6);
    }

    #[test]
    fn min_q_examples() {
        let g = make_mra(7).unwrap();
        let op = coarray_op(&g);
        let t = target_stochastic(21, 2);
        let cfg = SolverConfig::default();
        let arch = Architecture::new(2, 2, Bits::Infinite).unwrap();
        match min_q_search(&op, &t, arch, 1e-12 * t.values.norm_squared(), 1..=4, &cfg).unwrap() {
            MinQOutcome::Found { q, .. } => assert_eq!(q, 2),
            other => panic!("{other:?}"),
        }
        match min_q_search(&op, &t, arch, f64::INFINITY, 3..=5, &cfg).unwrap() {
            MinQOutcome::Found { q, .. } => assert_eq!(q, 3),
            other => panic!("{other:?}"),
        }
        let two = ArrayGeometry::linear(&[0, 1]).unwrap();
        let op2 = coarray_op(&two);
        let t2 = target_stochastic(3, 4);
        let arch1 = Architecture::new(2, 2, Bits::Finite(1)).unwrap();
        match min_q_search(&op2, &t2, arch1, 1e-10, 1..=4, &cfg).unwrap() {
            MinQOutcome::Found { q, bank, .. } => {
                assert!(q <= 4);
                bank.validate().unwrap();
            }
            other => panic!("{other:?}"),
        }
        let arch_a = Architecture::new(1, 1, Bits::Finite(1)).unwrap();
        assert!(matches!(
            min_q_search(&op, &t, arch_a, 0.0, 1..=2, &cfg).unwrap(),
            MinQOutcome::Infeasible { .. }
        ));
    }

    #[test]
    fn hybrid_normalization_keeps_product() {
        let mut bank = HybridBank::empty(3, 2, 2, 2, Bits::Finite(2));
        let pt = DMatrix::from_fn(3, 2, |i, j| {
            ((i + j) % 4) as f64 * std::f64::consts::FRAC_PI_2
        });
        let pr = DMatrix::from_fn(2, 2, |i, j| {
            ((i * j) % 4) as f64 * std::f64::consts::FRAC_PI_2
        });
        bank.push_image(
            &pt,
            &CVec::from_vec(vec![c(2.0, 1.0), c(0.5, 0.0)]),
            &pr,
            &CVec::from_element(2, c(1.0, -1.0)),
        )
        .unwrap();
        let before = bank.matrix();
        assert!(bank.normalize_tx().is_empty());
        let peak = bank
            .tx_weights()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 1e-14);
        assert!((bank.matrix() - before).norm() < 1e-13);
    }

    #[test]
    fn bank_json_uses_lattice_indices() {
        let g = make_ula(5).unwrap();
        let op = coarray_op(&g);
        let t = target_stochastic(9, 1);
        let arch = Architecture::new(2, 3, Bits::Finite(4)).unwrap();
        let run = greedy_main(&op, &t, arch, 2, &SolverConfig::default()).unwrap();
        let bank = run.final_bank().unwrap();
        let s = serde_json::to_string(bank).unwrap();
        assert!(s.contains("\"indices\""));
        let back: HybridBank = serde_json::from_str(&s).unwrap();
        assert_eq!(&back, bank);

        let cont = thm1_hybrid_cont(&crate::digital::svd_factorize(&bank.matrix()).unwrap());
        let s = serde_json::to_string(&cont).unwrap();
        assert!(s.contains("\"radians\"") && s.contains("\"bits\":\"inf\""));
        assert_eq!(serde_json::from_str::<HybridBank>(&s).unwrap(), cont);
    }

    #[test]
    fn pad_and_truncate() {
        let d = DigitalBank::new(
            CMat::from_element(3, 1, c(1.0, 0.0)),
            CMat::from_element(2, 1, c(0.5, 0.0)),
        )
        .unwrap();
        let h = thm1_hybrid_cont(&d);
        let mut p = h.pad_front_ends(3, 4).unwrap();
        assert!((p.matrix() - h.matrix()).norm() < 1e-15);
        p.pad_images(3);
        assert_eq!(p.q(), 3);
        assert!((p.matrix() - h.matrix()).norm() < 1e-15);
        assert_eq!(p.truncated(1).q(), 1);
        assert!(h.pad_front_ends(1, 2).is_err());
    }
}
