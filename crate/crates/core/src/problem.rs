//! JSON-facing problem descriptions: array geometries, targets, single
//! design problems and imaging runs.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::digital::{altmin, DigitalBank, ErrorTrace, SolverConfig};
use crate::error::{Error, Result};
use crate::geometry::{
    make_boundary, make_mra, make_ula, make_ura, selection_matrix, sum_coarray, ArrayGeometry,
    Point, SumCoarray,
};
use crate::hybrid::{min_q_search, solve_hybrid, Architecture, HybridBank, MinQOutcome};
use crate::imaging::{
    random_surface_points, scene_rough_surface, ImageResult, ImagingOptions, ImagingSystem,
    PixelBanks, Scene,
};
use crate::numerics::{Bits, CMat, CVec, C64};
use crate::operator::SensingOperator;
use crate::steering::{
    coarray_steering, steer_target, target_stochastic, target_window, Direction, DirectionGrid,
    GainPattern, TargetDomain, TargetSpec, Window,
};

/// Standard array families, parameterized by element count (linear) or
/// side length (planar).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrayFamily {
    Ula,
    Mra,
    Ura,
    Boundary,
}

impl ArrayFamily {
    pub fn build(self, n: usize) -> Result<ArrayGeometry> {
        match self {
            ArrayFamily::Ula => make_ula(n),
            ArrayFamily::Mra => make_mra(n),
            ArrayFamily::Ura => make_ura(n),
            ArrayFamily::Boundary => make_boundary(n),
        }
    }
}

/// An aperture, either from a family or from explicit integer positions
/// (one or two coordinates each).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GeometrySpec {
    Ula { n: usize },
    Mra { n: usize },
    Ura { side: usize },
    Boundary { side: usize },
    Custom { positions: Vec<Vec<i64>> },
}

impl GeometrySpec {
    pub fn build(&self) -> Result<ArrayGeometry> {
        match self {
            GeometrySpec::Ula { n } => make_ula(*n),
            GeometrySpec::Mra { n } => make_mra(*n),
            GeometrySpec::Ura { side } => make_ura(*side),
            GeometrySpec::Boundary { side } => make_boundary(*side),
            GeometrySpec::Custom { positions } => {
                let dim = positions.first().map_or(1, Vec::len);
                let pts = positions
                    .iter()
                    .map(|p| match p.as_slice() {
                        [x] if dim == 1 => Ok([*x, 0]),
                        [x, z] if dim == 2 => Ok([*x, *z]),
                        _ => Err(Error::Config(
                            "custom positions must all have one or all have two coordinates".into(),
                        )),
                    })
                    .collect::<Result<Vec<Point>>>()?;
                ArrayGeometry::new(crate::geometry::ArrayLabel::Custom, dim, pts)
            }
        }
    }
}

/// How desired co-array weights are generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetModel {
    /// Independent `√r e^{jφ}` entries.
    Stochastic,
    /// A tapering window over the co-array, optionally steered.
    Window { window: Window },
}

impl TargetModel {
    /// Target over `ca`; `seed` feeds the stochastic model and `steer` the
    /// window model.
    pub fn make(
        &self,
        ca: &SumCoarray,
        seed: u64,
        steer: Option<&Direction>,
    ) -> Result<TargetSpec> {
        match self {
            TargetModel::Stochastic => Ok(target_stochastic(ca.n_sigma(), seed)),
            TargetModel::Window { window } => {
                let base = target_window(*window, ca)?;
                match steer {
                    Some(d) => steer_target(&base, ca, d),
                    None => Ok(base),
                }
            }
        }
    }
}

/// A Tx/Rx pair with its co-array, selection operator and element pattern.
#[derive(Debug, Clone)]
pub struct ArraySetup {
    pub tx: ArrayGeometry,
    pub rx: ArrayGeometry,
    pub coarray: SumCoarray,
    pub op: SensingOperator,
    pub gain: GainPattern,
}

impl ArraySetup {
    pub fn new(tx: ArrayGeometry, rx: ArrayGeometry, gain: GainPattern) -> Result<Self> {
        let coarray = sum_coarray(&tx, &rx)?;
        let op = SensingOperator::coarray(selection_matrix(&tx, &rx, &coarray)?);
        Ok(Self {
            tx,
            rx,
            coarray,
            op,
            gain,
        })
    }

    /// Same array on transmit and receive.
    pub fn monostatic(g: ArrayGeometry, gain: GainPattern) -> Result<Self> {
        Self::new(g.clone(), g, gain)
    }

    /// PSF of the co-array weights `w_Σ` over `grid`.
    pub fn psf(&self, w_sigma: &CVec, grid: &DirectionGrid) -> CVec {
        coarray_steering(&self.coarray, grid, self.gain).transpose() * w_sigma
    }

    pub fn imaging_system(&self) -> ImagingSystem {
        ImagingSystem {
            tx: self.tx.clone(),
            rx: self.rx.clone(),
            gain: self.gain,
        }
    }
}

/// Default plotting grid: uniform in `sin φ` for linear arrays, square in
/// reduced coordinates for planar ones.
pub fn default_grid(setup: &ArraySetup, points: usize) -> Result<DirectionGrid> {
    if setup.coarray.dim() == 1 {
        DirectionGrid::uniform_sine(points)
    } else {
        DirectionGrid::reduced_square(points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    #[serde(flatten)]
    pub model: TargetModel,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub steer: Option<Direction>,
}

/// Search for the fewest images meeting `rel_tol`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinQConfig {
    pub lo: usize,
    pub hi: usize,
    pub rel_tol: f64,
}

/// One design problem. Without `m_t`, `m_r` and `bits` the beamformer is
/// fully digital; otherwise missing front-end counts default to 2 and a
/// missing bit depth to continuous phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub tx: GeometrySpec,
    #[serde(default)]
    pub rx: Option<GeometrySpec>,
    #[serde(default)]
    pub gain: GainPattern,
    pub target: TargetConfig,
    /// Match a sampled PSF with this many points instead of co-array weights.
    #[serde(default)]
    pub psf_points: Option<usize>,
    #[serde(default = "one")]
    pub q: usize,
    #[serde(default)]
    pub m_t: Option<usize>,
    #[serde(default)]
    pub m_r: Option<usize>,
    #[serde(default)]
    pub bits: Option<Bits>,
    #[serde(default)]
    pub min_q: Option<MinQConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn one() -> usize {
    1
}

impl SolveConfig {
    pub fn setup(&self) -> Result<ArraySetup> {
        let tx = self.tx.build()?;
        let rx = match &self.rx {
            Some(r) => r.build()?,
            None => tx.clone(),
        };
        ArraySetup::new(tx, rx, self.gain)
    }

    pub fn architecture(&self) -> Result<Option<Architecture>> {
        if self.m_t.is_none() && self.m_r.is_none() && self.bits.is_none() {
            return Ok(None);
        }
        Architecture::new(
            self.m_t.unwrap_or(2),
            self.m_r.unwrap_or(2),
            self.bits.unwrap_or(Bits::Infinite),
        )
        .map(Some)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.q == 0 {
            return Err(Error::Config("q must be >= 1".into()));
        }
        if let Some(m) = &self.min_q {
            if m.lo == 0 || m.lo > m.hi || !(m.rel_tol >= 0.0) {
                return Err(Error::Config(
                    "min_q needs 1 <= lo <= hi and rel_tol >= 0".into(),
                ));
            }
        }
        if self.psf_points == Some(0) {
            return Err(Error::Config("psf_points must be >= 1".into()));
        }
        self.architecture()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Operator and target for this problem, the co-array target kept for
    /// reporting.
    pub fn problem(&self, setup: &ArraySetup) -> Result<(SensingOperator, TargetSpec, TargetSpec)> {
        let co =
            self.target
                .model
                .make(&setup.coarray, self.target.seed, self.target.steer.as_ref())?;
        match self.psf_points {
            None => Ok((setup.op.clone(), co.clone(), co)),
            Some(v) => {
                let grid = default_grid(setup, v)?;
                let a_sigma = coarray_steering(&setup.coarray, &grid, setup.gain);
                let SensingOperator::Coarray(sel) = &setup.op else {
                    unreachable!("setups always carry a co-array operator")
                };
                let a = sel.expand_rows(&a_sigma)?;
                let op = SensingOperator::psf(&a, setup.tx.len(), setup.rx.len())?;
                let psf = TargetSpec {
                    domain: TargetDomain::Psf,
                    values: a_sigma.transpose() * &co.values,
                };
                Ok((op, psf, co))
            }
        }
    }
}

/// A designed bank of either kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AnyBank {
    Digital(DigitalBank),
    Hybrid(HybridBank),
}

impl AnyBank {
    pub fn q(&self) -> usize {
        match self {
            AnyBank::Digital(b) => b.q(),
            AnyBank::Hybrid(b) => b.q(),
        }
    }

    pub fn matrix(&self) -> CMat {
        match self {
            AnyBank::Digital(b) => b.matrix(),
            AnyBank::Hybrid(b) => b.matrix(),
        }
    }

    pub fn to_digital(&self) -> Result<DigitalBank> {
        match self {
            AnyBank::Digital(b) => Ok(b.clone()),
            AnyBank::Hybrid(b) => b.to_digital(),
        }
    }

    /// Architecture invariants checked before a bank is written.
    pub fn validate(&self, n_t: usize, n_r: usize) -> Result<()> {
        let (bt, br) = match self {
            AnyBank::Digital(b) => (b.n_t(), b.n_r()),
            AnyBank::Hybrid(b) => {
                b.validate()?;
                (b.n_t(), b.n_r())
            }
        };
        if (bt, br) != (n_t, n_r) {
            return Err(Error::ShapeMismatch(format!(
                "bank is {bt}x{br} elements, arrays have {n_t}x{n_r}"
            )));
        }
        Ok(())
    }

    /// Whether steering by element phase shifts keeps the bank realizable.
    pub fn steerable(&self) -> bool {
        match self {
            AnyBank::Digital(_) => true,
            AnyBank::Hybrid(b) => !b.bits.is_finite(),
        }
    }
}

/// Result file of a solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveOutput {
    pub tx: ArrayGeometry,
    pub rx: ArrayGeometry,
    pub gain: GainPattern,
    pub q: usize,
    pub squared_error: f64,
    pub relative_error: f64,
    /// Desired co-array weights.
    pub target: TargetSpec,
    pub bank: AnyBank,
    #[serde(default)]
    pub trace: Option<ErrorTrace>,
}

/// Solves one design problem. An unsuccessful `Q` search is reported as
/// [`Error::InfeasibleDecomposition`].
pub fn run_solve(cfg: &SolveConfig) -> Result<SolveOutput> {
    cfg.validate()?;
    let setup = cfg.setup()?;
    let (op, target, co_target) = cfg.problem(&setup)?;
    let norm = target.norm().max(f64::MIN_POSITIVE);
    let arch = cfg.architecture()?;
    let (bank, err, trace) = match (arch, cfg.min_q) {
        (None, None) => {
            let (b, tr) = altmin(&op, &target, cfg.q, &cfg.solver)?;
            let e = crate::digital::squared_error(&op, &target, &b)?;
            (AnyBank::Digital(b), e, Some(tr))
        }
        (None, Some(m)) => {
            match crate::digital::digital_min_q(&op, &target, m.lo..=m.hi, m.rel_tol, &cfg.solver)?
            {
                Some((_, b)) => {
                    let e = crate::digital::squared_error(&op, &target, &b)?;
                    (AnyBank::Digital(b), e, None)
                }
                None => {
                    return Err(Error::InfeasibleDecomposition(format!(
                        "no Q in {}..={} reaches relative error {}",
                        m.lo, m.hi, m.rel_tol
                    )))
                }
            }
        }
        (Some(a), None) => {
            let (b, e) = solve_hybrid(&op, &target, a, cfg.q, &cfg.solver)?;
            (AnyBank::Hybrid(b), e, None)
        }
        (Some(a), Some(m)) => {
            let eps = (m.rel_tol * norm).powi(2);
            match min_q_search(&op, &target, a, eps, m.lo..=m.hi, &cfg.solver)? {
                MinQOutcome::Found { bank, error, .. } => (AnyBank::Hybrid(bank), error, None),
                MinQOutcome::Infeasible { best_q, best_error } => {
                    return Err(Error::InfeasibleDecomposition(format!(
                        "no Q in {}..={} reaches relative error {}; best was Q = {best_q} with {}",
                        m.lo,
                        m.hi,
                        m.rel_tol,
                        best_error.sqrt() / norm
                    )))
                }
            }
        }
    };
    bank.validate(setup.tx.len(), setup.rx.len())?;
    Ok(SolveOutput {
        tx: setup.tx,
        rx: setup.rx,
        gain: setup.gain,
        q: bank.q(),
        squared_error: err,
        relative_error: err.sqrt() / norm,
        target: co_target,
        bank,
        trace,
    })
}

/// Desired and realized PSF of a solved bank over `grid`.
pub fn psf_trace(out: &SolveOutput, grid: &DirectionGrid) -> Result<(CVec, CVec)> {
    let setup = ArraySetup::new(out.tx.clone(), out.rx.clone(), out.gain)?;
    let SensingOperator::Coarray(sel) = &setup.op else {
        unreachable!()
    };
    let realized = crate::steering::coarray_weights(&out.bank.matrix(), sel)?;
    if out.target.len() != setup.coarray.n_sigma() {
        return Err(Error::InvalidInput(
            "stored target does not match the arrays".into(),
        ));
    }
    Ok((
        setup.psf(&out.target.values, grid),
        setup.psf(&realized, grid),
    ))
}

/// Reflectors for an imaging run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneSpec {
    /// `k` points uniform over `|u| ≤ extent` with the rough-surface law.
    RoughSurface {
        k: usize,
        #[serde(default = "full_extent")]
        extent: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Explicit scatterers; `gamma` holds `[re, im]` pairs.
    Points {
        directions: Vec<Direction>,
        gamma: Vec<[f64; 2]>,
    },
}

fn full_extent() -> f64 {
    1.0
}

fn unit_sigma2() -> f64 {
    1.0
}

impl SceneSpec {
    pub fn build(&self, sigma2: f64) -> Result<Scene> {
        let mut scene = match self {
            SceneSpec::RoughSurface { k, extent, seed } => {
                scene_rough_surface(random_surface_points(*k, *extent, *seed)?, *seed)?
            }
            SceneSpec::Points { directions, gamma } => Scene::new(
                directions.clone(),
                CVec::from_iterator(gamma.len(), gamma.iter().map(|g| C64::new(g[0], g[1]))),
                0.0,
            )?,
        };
        if !(sigma2 >= 0.0) {
            return Err(Error::Config("sigma2 must be nonnegative".into()));
        }
        scene.sigma2 = sigma2;
        Ok(scene)
    }
}

/// Imaging run: a solved bank steered to every pixel, or a design problem
/// re-solved per pixel with its target steered there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageConfig {
    #[serde(default)]
    pub bank: Option<PathBuf>,
    #[serde(default)]
    pub solve: Option<SolveConfig>,
    pub scene: SceneSpec,
    #[serde(default = "unit_sigma2")]
    pub sigma2: f64,
    /// Pixels per axis (planar) or total pixels (linear).
    #[serde(default = "default_pixels")]
    pub pixels: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "unit_sigma2")]
    pub tx_power: f64,
}

fn default_pixels() -> usize {
    64
}

/// Builds per-pixel banks for `solve` with the target steered to each
/// pixel; pixels are solved in parallel.
pub fn per_pixel_banks(cfg: &SolveConfig, grid: &DirectionGrid) -> Result<Vec<DigitalBank>> {
    use rayon::prelude::*;
    cfg.validate()?;
    if cfg.min_q.is_some() || cfg.psf_points.is_some() {
        return Err(Error::Config(
            "per-pixel solves support fixed-Q co-array problems only".into(),
        ));
    }
    let setup = cfg.setup()?;
    let arch = cfg.architecture()?;
    grid.directions
        .par_iter()
        .map(|d| {
            let target = cfg
                .target
                .model
                .make(&setup.coarray, cfg.target.seed, Some(d))?;
            match arch {
                None => Ok(altmin(&setup.op, &target, cfg.q, &cfg.solver)?.0),
                Some(a) => solve_hybrid(&setup.op, &target, a, cfg.q, &cfg.solver)?
                    .0
                    .to_digital(),
            }
        })
        .collect()
}

/// Forms the image described by `cfg`. `bank` is the parsed bank file when
/// the config names one.
pub fn run_image(cfg: &ImageConfig, bank: Option<&SolveOutput>) -> Result<ImageResult> {
    if !(cfg.tx_power > 0.0) {
        return Err(Error::Config("tx_power must be positive".into()));
    }
    if cfg.pixels == 0 {
        return Err(Error::Config("pixels must be >= 1".into()));
    }
    let scene = cfg.scene.build(cfg.sigma2)?;
    let (setup, banks) = match (bank, &cfg.solve) {
        (Some(out), None) => {
            if !out.bank.steerable() {
                return Err(Error::Config(
                    "quantized banks cannot be steered by phase shifts; give a `solve` section for per-pixel design".into(),
                ));
            }
            let setup = ArraySetup::new(out.tx.clone(), out.rx.clone(), out.gain)?;
            (setup, None)
        }
        (None, Some(s)) => (s.setup()?, Some(s)),
        _ => {
            return Err(Error::Config(
                "image config needs exactly one of `bank` and `solve`".into(),
            ))
        }
    };
    let grid = default_grid(&setup, cfg.pixels)?;
    let shape = (setup.coarray.dim() == 2).then_some((cfg.pixels, cfg.pixels));
    let source = match (bank, banks) {
        (Some(out), _) => PixelBanks::Steered(out.bank.to_digital()?),
        (None, Some(s)) => PixelBanks::PerPixel(per_pixel_banks(s, &grid)?),
        _ => unreachable!(),
    };
    let opts = ImagingOptions {
        seed: cfg.seed,
        tx_power: cfg.tx_power,
        shape,
    };
    setup
        .imaging_system()
        .form_image(&source, &scene, &grid, &opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mra_cfg() -> SolveConfig {
        serde_json::from_str(
            r#"{"tx":{"family":"mra","n":5},"target":{"kind":"stochastic","seed":3},"q":2,"bits":4}"#,
        )
        .unwrap()
    }

    #[test]
    fn custom_geometry_parsing() {
        let g: GeometrySpec =
            serde_json::from_str(r#"{"family":"custom","positions":[[0],[2],[5]]}"#).unwrap();
        assert_eq!(g.build().unwrap().xs(), vec![0, 2, 5]);
        let bad: GeometrySpec =
            serde_json::from_str(r#"{"family":"custom","positions":[[0],[2,1]]}"#).unwrap();
        assert!(bad.build().is_err());
    }

    #[test]
    fn hybrid_solve_emits_lattice_bank() {
        let out = run_solve(&mra_cfg()).unwrap();
        let AnyBank::Hybrid(b) = &out.bank else {
            panic!("expected hybrid bank")
        };
        assert_eq!((b.m_t, b.m_r, b.bits, b.q()), (2, 2, Bits::Finite(4), 2));
        b.validate().unwrap();
        let json = serde_json::to_string(&out).unwrap();
        let back: SolveOutput = serde_json::from_str(&json).unwrap();
        assert_eq!(back.bank, out.bank);
    }

    #[test]
    fn digital_and_psf_domain_solves() {
        let mut cfg = mra_cfg();
        cfg.bits = None;
        cfg.q = 3;
        let out = run_solve(&cfg).unwrap();
        assert!(matches!(out.bank, AnyBank::Digital(_)));
        assert!(out.relative_error < 1e-4, "{}", out.relative_error);
        cfg.psf_points = Some(64);
        let out = run_solve(&cfg).unwrap();
        assert!(out.relative_error < 1e-4);
        assert_eq!(out.target.domain, TargetDomain::Coarray);
    }

    #[test]
    fn min_q_reports_infeasible() {
        let mut cfg = mra_cfg();
        cfg.m_t = Some(1);
        cfg.m_r = Some(1);
        cfg.bits = Some(Bits::Finite(1));
        cfg.min_q = Some(MinQConfig {
            lo: 1,
            hi: 2,
            rel_tol: 1e-12,
        });
        assert!(matches!(
            run_solve(&cfg),
            Err(Error::InfeasibleDecomposition(_))
        ));
        cfg.min_q = Some(MinQConfig {
            lo: 3,
            hi: 1,
            rel_tol: 1e-3,
        });
        assert!(matches!(run_solve(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn psf_trace_of_exact_solution_matches_target() {
        let mut cfg = mra_cfg();
        cfg.bits = Some(Bits::Infinite);
        cfg.target.model = TargetModel::Window {
            window: Window::chebyshev_default(),
        };
        let out = run_solve(&cfg).unwrap();
        let (d, r) = psf_trace(&out, &DirectionGrid::uniform_sine(50).unwrap()).unwrap();
        assert!((d - r).norm() < 1e-5);
    }

    #[test]
    fn image_from_bank_and_from_per_pixel_solves() {
        let mut cfg = mra_cfg();
        cfg.bits = Some(Bits::Infinite);
        cfg.target.model = TargetModel::Window {
            window: Window::chebyshev_default(),
        };
        let out = run_solve(&cfg).unwrap();
        let scene = SceneSpec::Points {
            directions: vec![Direction::Linear { phi: 0.3 }],
            gamma: vec![[1.0, 0.0]],
        };
        let icfg = ImageConfig {
            bank: None,
            solve: None,
            scene,
            sigma2: 0.0,
            pixels: 21,
            seed: 1,
            tx_power: 1.0,
        };
        let steered = run_image(&icfg, Some(&out)).unwrap();
        let per_pixel = run_image(
            &ImageConfig {
                solve: Some(cfg.clone()),
                ..icfg.clone()
            },
            None,
        )
        .unwrap();
        let scale = steered.values.norm();
        assert!((steered.values - per_pixel.values).norm() < 1e-4 * scale);

        let mut quant = cfg;
        quant.bits = Some(Bits::Finite(3));
        let qout = run_solve(&quant).unwrap();
        assert!(matches!(
            run_image(&icfg, Some(&qout)),
            Err(Error::Config(_))
        ));
    }
}
