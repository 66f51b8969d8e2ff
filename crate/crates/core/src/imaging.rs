//! Narrowband far-field imaging: point-scatterer scenes, noisy
//! beamformed measurements and images formed by adding component images.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digital::DigitalBank;
use crate::error::{Error, Result};
use crate::geometry::ArrayGeometry;
use crate::io::{cvec_serde, write_complex_grid};
use crate::numerics::{expj, CMat, CVec, C64};
use crate::seeds::mix;
use crate::steering::{steering_matrix, Direction, DirectionGrid, GainPattern};

/// Point scatterers with complex reflectivities and the receiver noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub directions: Vec<Direction>,
    #[serde(with = "cvec_serde")]
    pub gamma: CVec,
    pub sigma2: f64,
}

impl Scene {
    pub fn new(directions: Vec<Direction>, gamma: CVec, sigma2: f64) -> Result<Self> {
        if directions.len() != gamma.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} directions but {} reflectivities",
                directions.len(),
                gamma.len()
            )));
        }
        if !(sigma2 >= 0.0) {
            return Err(Error::InvalidInput(
                "noise variance must be nonnegative".into(),
            ));
        }
        for d in &directions {
            d.validate()?;
        }
        Ok(Self {
            directions,
            gamma,
            sigma2,
        })
    }

    pub fn empty(sigma2: f64) -> Result<Self> {
        Self::new(Vec::new(), CVec::zeros(0), sigma2)
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }
}

/// Diffuse surface at the given points: `γ_k ~ CN(1/√(2K), 1/(2K))` i.i.d.,
/// unit noise variance.
pub fn scene_rough_surface(directions: Vec<Direction>, seed: u64) -> Result<Scene> {
    let k = directions.len();
    if k == 0 {
        return Scene::empty(1.0);
    }
    let kf = k as f64;
    let mean = 1.0 / (2.0 * kf).sqrt();
    let sd = (1.0 / (4.0 * kf)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sd).expect("positive standard deviation");
    let gamma = CVec::from_fn(k, |_, _| {
        C64::new(mean + normal.sample(&mut rng), normal.sample(&mut rng))
    });
    Scene::new(directions, gamma, 1.0)
}

/// `k` points drawn uniformly from the visible half of the reduced-coordinate
/// disk inside the box `|u_x| ≤ extent`, `|u_z| ≤ extent`.
pub fn random_surface_points(k: usize, extent: f64, seed: u64) -> Result<Vec<Direction>> {
    if !(extent > 0.0 && extent <= 1.0) {
        return Err(Error::InvalidInput(
            "surface extent must lie in (0, 1]".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = rand::distributions::Uniform::new_inclusive(-extent, extent);
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let (ux, uz) = (u.sample(&mut rng), u.sample(&mut rng));
        if ux * ux + uz * uz < 1.0 {
            out.push(Direction::Reduced { ux, uz });
        }
    }
    Ok(out)
}

/// Transmit and receive apertures sharing one element pattern.
#[derive(Debug, Clone)]
pub struct ImagingSystem {
    pub tx: ArrayGeometry,
    pub rx: ArrayGeometry,
    pub gain: GainPattern,
}

/// Scene steering matrices `A_t`, `A_r` (elements × scatterers).
struct SceneSteering {
    at: CMat,
    ar: CMat,
}

impl ImagingSystem {
    fn scene_steering(&self, scene: &Scene) -> Result<SceneSteering> {
        if scene.is_empty() {
            return Ok(SceneSteering {
                at: CMat::zeros(self.tx.len(), 0),
                ar: CMat::zeros(self.rx.len(), 0),
            });
        }
        let grid = DirectionGrid::new(scene.directions.clone())?;
        Ok(SceneSteering {
            at: steering_matrix(&self.tx, &grid, self.gain),
            ar: steering_matrix(&self.rx, &grid, self.gain),
        })
    }

    fn check_weights(&self, tx_w: &CVec, rx_w: &CVec) -> Result<()> {
        if tx_w.len() != self.tx.len() || rx_w.len() != self.rx.len() {
            return Err(Error::ShapeMismatch(format!(
                "weights of length {}/{} for arrays of {}/{} elements",
                tx_w.len(),
                rx_w.len(),
                self.tx.len(),
                self.rx.len()
            )));
        }
        Ok(())
    }

    /// One transmission: `w_rᵀ A_r Γ A_tᵀ w_t + w_rᵀ n` with fresh noise
    /// `n ~ CN(0, σ² I)` drawn from `seed`.
    pub fn measure(&self, scene: &Scene, tx_w: &CVec, rx_w: &CVec, seed: u64) -> Result<C64> {
        self.check_weights(tx_w, rx_w)?;
        let st = self.scene_steering(scene)?;
        Ok(measure_with(&st, scene, tx_w, rx_w, seed))
    }

    /// Image over `grid`: each pixel sums one noisy measurement per
    /// component. Pixel `p`, component `q` draws noise from
    /// `mix(seed, p, q)`, so the result does not depend on scheduling.
    pub fn form_image(
        &self,
        banks: &PixelBanks,
        scene: &Scene,
        grid: &DirectionGrid,
        opts: &ImagingOptions,
    ) -> Result<ImageResult> {
        if !(opts.tx_power > 0.0) {
            return Err(Error::InvalidInput(
                "transmit power must be positive".into(),
            ));
        }
        let st = self.scene_steering(scene)?;
        let v = grid.len();
        if let PixelBanks::PerPixel(list) = banks {
            if list.len() != v {
                return Err(Error::InvalidInput(format!(
                    "{} banks for {v} pixels",
                    list.len()
                )));
            }
        }
        let amp = opts.tx_power.sqrt();
        let pixels: Vec<Result<(C64, usize)>> = (0..v)
            .into_par_iter()
            .map(|p| {
                let mut bank = banks.bank_for(self, &grid.directions[p], p)?;
                if bank.n_t() != self.tx.len() || bank.n_r() != self.rx.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "bank for pixel {p} does not match the arrays"
                    )));
                }
                bank.normalize_tx();
                let mut y = C64::new(0.0, 0.0);
                for q in 0..bank.q() {
                    let wt = bank.w_t.column(q) * C64::from(amp);
                    let wr = bank.w_r.column(q).into_owned();
                    y += measure_with(&st, scene, &wt, &wr, mix(&[opts.seed, p as u64, q as u64]));
                }
                Ok((y, bank.q()))
            })
            .collect();
        let mut values = CVec::zeros(v);
        let mut components = Vec::with_capacity(v);
        for (p, r) in pixels.into_iter().enumerate() {
            let (y, q) = r?;
            values[p] = y;
            components.push(q);
        }
        Ok(ImageResult {
            grid: grid.clone(),
            values,
            components,
            shape: opts.shape,
        })
    }
}

fn measure_with(st: &SceneSteering, scene: &Scene, tx_w: &CVec, rx_w: &CVec, seed: u64) -> C64 {
    let mut y = C64::new(0.0, 0.0);
    if !scene.is_empty() {
        let tx_gain = st.at.transpose() * tx_w;
        let rx_gain = st.ar.transpose() * rx_w;
        for k in 0..scene.len() {
            y += rx_gain[k] * scene.gamma[k] * tx_gain[k];
        }
    }
    if scene.sigma2 > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = (scene.sigma2 / 2.0).sqrt();
        for w in rx_w.iter() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            y += w * C64::new(s * re, s * im);
        }
    }
    y
}

/// Where each pixel's weights come from.
#[derive(Debug, Clone)]
pub enum PixelBanks {
    /// One broadside bank steered to every pixel by conjugate element
    /// phases; valid for continuous phase shifters.
    Steered(DigitalBank),
    /// An independently designed bank per pixel, in grid order.
    PerPixel(Vec<DigitalBank>),
}

impl PixelBanks {
    fn bank_for(&self, sys: &ImagingSystem, dir: &Direction, p: usize) -> Result<DigitalBank> {
        match self {
            PixelBanks::Steered(b) => steer_bank(b, &sys.tx, &sys.rx, dir),
            PixelBanks::PerPixel(list) => list
                .get(p)
                .cloned()
                .ok_or_else(|| Error::InvalidInput(format!("no bank for pixel {p}"))),
        }
    }
}

/// Multiplies element weights by `exp(−jπ x·u)`, which moves the realized
/// co-array weighting (and hence the PSF peak) to `dir`.
pub fn steer_bank(
    bank: &DigitalBank,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    dir: &Direction,
) -> Result<DigitalBank> {
    let u = dir.reduced();
    let phase =
        |p: &[i64; 2]| expj(-std::f64::consts::PI * (p[0] as f64 * u.0 + p[1] as f64 * u.1));
    let mut w_t = bank.w_t.clone();
    let mut w_r = bank.w_r.clone();
    for (i, p) in tx.positions().iter().enumerate() {
        w_t.row_mut(i).iter_mut().for_each(|z| *z *= phase(p));
    }
    for (i, p) in rx.positions().iter().enumerate() {
        w_r.row_mut(i).iter_mut().for_each(|z| *z *= phase(p));
    }
    DigitalBank::new(w_t, w_r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImagingOptions {
    pub seed: u64,
    /// Power of every transmission relative to a unit peak Tx weight.
    pub tx_power: f64,
    /// `(rows, cols)` of the pixel grid when written as a 2-D image.
    pub shape: Option<(usize, usize)>,
}

impl Default for ImagingOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            tx_power: 1.0,
            shape: None,
        }
    }
}

/// Complex pixel values over a direction grid and the number of component
/// images that formed each pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub grid: DirectionGrid,
    pub values: CVec,
    pub components: Vec<usize>,
    pub shape: Option<(usize, usize)>,
}

/// Floor of the dB magnitude output.
pub const DB_FLOOR: f64 = -60.0;

impl ImageResult {
    /// Pixel values as a matrix, `shape` if set and a single row otherwise.
    pub fn as_matrix(&self) -> CMat {
        let (rows, cols) = self.shape.unwrap_or((1, self.values.len()));
        CMat::from_row_slice(rows, cols, self.values.as_slice())
    }

    /// Index of the pixel with the largest magnitude.
    pub fn peak(&self) -> usize {
        crate::numerics::argmax_abs(&self.values).unwrap_or(0)
    }

    /// `20 log10(|y| / max|y|)` clipped below at [`DB_FLOOR`].
    pub fn magnitude_db(&self) -> DMatrix<f64> {
        let m = self.as_matrix();
        let peak = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
        m.map(|z| {
            if peak == 0.0 {
                DB_FLOOR
            } else {
                (20.0 * (z.norm() / peak).log10()).max(DB_FLOOR)
            }
        })
    }

    pub fn write_grid(&self, path: &Path) -> Result<()> {
        write_complex_grid(path, &self.as_matrix())
    }

    /// One CSV line per grid row, no header.
    pub fn write_db_csv(&self, path: &Path) -> Result<()> {
        let db = self.magnitude_db();
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)?;
        for i in 0..db.nrows() {
            w.write_record(db.row(i).iter().map(|x| format!("{x:.6}")))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Mean of `|y|²` over the given pixels.
    pub fn mean_power(&self, pixels: impl IntoIterator<Item = usize>) -> f64 {
        let (mut s, mut n) = (0.0, 0usize);
        for p in pixels {
            s += self.values[p].norm_sqr();
            n += 1;
        }
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }
}
