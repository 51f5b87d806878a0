//! Monte Carlo simulation of dX = F(X)dt + dL for a band-limited periodic
//! drift F and an alpha-stable driver L, plus the statistics that connect the
//! paths back to the analytic objects: rescaled central-limit checks against
//! the effective model (Gaussian regime: covariance vs t·D; stable regime:
//! characteristic function vs e^{-t psi(z)}), reconstruction of the
//! martingale part M_t = X_t - t<F>_pi - X_0 - (chi(X_0) - chi(X_t)) - L_t
//! from the corrector, ergodic time averages, and torus-occupancy histograms
//! against the invariant density.
//!
//! Increments of L are sampled exactly: the law factorizes over the antipodal
//! atom pairs of the spherical measure, each pair contributing c_a S_a xi_a
//! with S_a standard symmetric alpha-stable (CF e^{-|u|^alpha}, sampled by
//! the Chambers-Mallows-Stuck transform). Matching characteristic functions
//! under the convention E e^{2 pi i <z, L_t>} = e^{-t psi(z)} fixes the
//! scale: psi(z) = sum_atoms w |<z, xi>|^alpha, each pair contributes
//! e^{-|2 pi c_a <z, xi_a>|^alpha}, so (2 pi c_a)^alpha = 2 w_a dt and
//!
//!     c_a = (2 w_a dt)^{1/alpha} / (2 pi).
//!
//! For alpha = 2 the symbol is psi(z) = |2 pi z|^2 / 2 and the same matching
//! yields increments N(0, dt·Id) exactly; both constants are frozen here and
//! verified against the tabulated symbol by the CF tests.
//!
//! Reproducibility: path p draws from a counter-based stream (master seed,
//! stream id = p), so ensembles are bit-identical regardless of how paths are
//! distributed over threads, and all reductions over stored ensembles run in
//! fixed path order with blocked (pairwise) summation.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read as IoRead, Write as IoWrite};
use std::path::Path;

use num_complex::Complex64;
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell_problem::{Corrector, EffectiveModel};
use crate::drift::mollify;
use crate::error::{Error, Result};
use crate::levy_generator::{MeasureSpec, SphericalMeasure};
use crate::torus_spectral::{PeriodicField, VectorField, TWO_PI};

/// Snapshots stored per path (the last one is the endpoint). The running
/// maximum in the martingale bound is taken over these checkpoints.
pub const CHECKPOINTS_PER_PATH: usize = 64;

/// Minimum ensemble size accepted by the statistical operations
/// (CLT reports, martingale diagnostics, ergodic averages, histograms).
pub const MIN_STATISTICAL_PATHS: usize = 1000;

/// Batches used for batch-mean standard errors (>= 30 by contract).
pub const BATCH_COUNT: usize = 40;

/// Magic bytes of the ensemble binary format.
pub const ENSEMBLE_MAGIC: [u8; 4] = *b"LSDE";

/// Version of the ensemble binary format.
pub const ENSEMBLE_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Simulation request: start point, horizon, step, ensemble size, seed and
/// the driving measure. `level` records the mollification level of the drift
/// the ensemble was generated with (None = the field was used as given).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Mollification level of the simulated drift, for provenance.
    pub level: Option<i32>,
    /// Start point in R^d (not reduced to the torus).
    pub x0: Vec<f64>,
    /// Final time T.
    pub horizon: f64,
    /// Requested Euler step; the effective step is T/ceil(T/dt).
    pub dt: f64,
    /// Number of paths M.
    pub paths: usize,
    /// Master seed; path p uses the counter-based stream (seed, p).
    pub master_seed: u64,
    /// Spherical measure of the driver (carries alpha).
    pub measure: MeasureSpec,
}

impl SimConfig {
    /// Stability index of the driver.
    pub fn alpha(&self) -> f64 {
        self.measure.alpha
    }

    /// Dimension, taken from the start point.
    pub fn d(&self) -> usize {
        self.x0.len()
    }

    /// Number of Euler steps actually taken (so that steps * dt_eff = T).
    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    /// Effective step T/steps <= dt.
    pub fn dt_eff(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    /// Basic well-posedness: positive horizon and step, dt <= T/100, at
    /// least one path, dimension between 1 and 3.
    pub fn validate(&self) -> Result<()> {
        let d = self.x0.len();
        if !(1..=3).contains(&d) {
            return Err(Error::BadDimension(d));
        }
        if !self.horizon.is_finite() || self.horizon <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "horizon {} must be positive and finite",
                self.horizon
            )));
        }
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "step {} must be positive and finite",
                self.dt
            )));
        }
        if self.dt > self.horizon / 100.0 * (1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "step dt = {} violates dt <= horizon/100 = {}",
                self.dt,
                self.horizon / 100.0
            )));
        }
        if self.paths == 0 {
            return Err(Error::InvalidInput("path count must be positive".into()));
        }
        if !self.x0.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidInput("start point must be finite".into()));
        }
        Ok(())
    }

    fn require_statistical(&self) -> Result<()> {
        if self.paths < MIN_STATISTICAL_PATHS {
            return Err(Error::InvalidInput(format!(
                "insufficient paths for statistics: M = {} < {}",
                self.paths, MIN_STATISTICAL_PATHS
            )));
        }
        Ok(())
    }
}

/// Step indices (1-based) at which the `count` checkpoints are recorded;
/// equispaced in time, the last one is the final step.
pub(crate) fn checkpoint_schedule(steps: usize, count: usize) -> Result<Vec<usize>> {
    if steps < count {
        return Err(Error::InvalidInput(format!(
            "{steps} steps cannot carry {count} distinct checkpoints"
        )));
    }
    let mut schedule: Vec<usize> = (1..=count)
        .map(|i| ((i as f64) * (steps as f64) / (count as f64)).round() as usize)
        .collect();
    schedule[count - 1] = steps;
    for w in schedule.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidInput(
                "checkpoint schedule is not strictly increasing".into(),
            ));
        }
    }
    Ok(schedule)
}

// ---------------------------------------------------------------------------
// Stable increments
// ---------------------------------------------------------------------------

/// One standard symmetric alpha-stable variate with characteristic function
/// E e^{iuS} = e^{-|u|^alpha}, by the Chambers-Mallows-Stuck transform
/// S = sin(alpha U)/(cos U)^{1/alpha} * (cos((1-alpha)U)/E)^{(1-alpha)/alpha}
/// with U uniform on (-pi/2, pi/2) and E standard exponential. Valid for
/// alpha in (1, 2]; at alpha = 2 it reduces to a N(0, 2) draw.
pub fn sample_standard_sas<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    let theta = PI * (u - 0.5);
    let e: f64 = rng.sample(Exp1);
    let s1 = (alpha * theta).sin() / theta.cos().powf(1.0 / alpha);
    let s2 = (((1.0 - alpha) * theta).cos() / e).powf((1.0 - alpha) / alpha);
    s1 * s2
}

#[derive(Clone, Debug)]
enum SamplerKind {
    Gaussian {
        sd: f64,
    },
    Stable {
        inv_alpha: f64,
        exp_ratio: f64,
        /// (direction, jump scale c_a) per antipodal atom pair.
        pairs: Vec<([f64; 3], f64)>,
    },
}

/// Sampler for one Euler increment of L over a fixed step dt, with the
/// characteristic-function matching constants frozen at construction.
#[derive(Clone, Debug)]
pub struct StableSampler {
    d: usize,
    alpha: f64,
    dt: f64,
    kind: SamplerKind,
}

impl StableSampler {
    pub fn new(measure: &SphericalMeasure, dt: f64) -> Result<Self> {
        let alpha = measure.alpha();
        if alpha <= 1.0 {
            return Err(Error::Inadmissible(format!(
                "stable increments need alpha in (1, 2], got {alpha}"
            )));
        }
        if !dt.is_finite() || dt < 0.0 {
            return Err(Error::InvalidInput(format!(
                "step {dt} must be nonnegative and finite"
            )));
        }
        let kind = if alpha == 2.0 {
            // E e^{2 pi i z.dL} = e^{-dt |2 pi z|^2 / 2}  <=>  dL ~ N(0, dt Id).
            SamplerKind::Gaussian { sd: dt.sqrt() }
        } else {
            let pairs = measure
                .atom_pairs()
                .into_iter()
                .map(|(dir, w)| {
                    let mut padded = [0.0; 3];
                    padded[..dir.len()].copy_from_slice(&dir);
                    // (2 pi c)^alpha = 2 w dt, the CF-matching constant.
                    (padded, (2.0 * w * dt).powf(1.0 / alpha) / TWO_PI)
                })
                .collect();
            SamplerKind::Stable {
                inv_alpha: 1.0 / alpha,
                exp_ratio: (1.0 - alpha) / alpha,
                pairs,
            }
        };
        Ok(StableSampler {
            d: measure.d(),
            alpha,
            dt,
            kind,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Draw one increment into `out` (length d). A zero step produces the
    /// zero vector without consuming randomness.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.d);
        if self.dt == 0.0 {
            out.fill(0.0);
            return;
        }
        match &self.kind {
            SamplerKind::Gaussian { sd } => {
                for slot in out.iter_mut() {
                    let g: f64 = rng.sample(StandardNormal);
                    *slot = sd * g;
                }
            }
            SamplerKind::Stable {
                inv_alpha,
                exp_ratio,
                pairs,
            } => {
                out.fill(0.0);
                for (dir, scale) in pairs {
                    let u: f64 = rng.sample(Open01);
                    let theta = PI * (u - 0.5);
                    let e: f64 = rng.sample(Exp1);
                    let s1 = (self.alpha * theta).sin() / theta.cos().powf(*inv_alpha);
                    let s2 = (((1.0 - self.alpha) * theta).cos() / e).powf(*exp_ratio);
                    let jump = scale * s1 * s2;
                    for (slot, c) in out.iter_mut().zip(dir) {
                        *slot += jump * c;
                    }
                }
            }
        }
    }
}

/// One increment of L over a step dt, as a fresh vector. Builds the sampler
/// per call; hot loops should construct a [`StableSampler`] once instead.
pub fn sample_stable_increment<R: Rng + ?Sized>(
    measure: &SphericalMeasure,
    dt: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let sampler = StableSampler::new(measure, dt)?;
    let mut out = vec![0.0; sampler.d()];
    sampler.sample_into(rng, &mut out);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Pointwise evaluation of band-limited fields
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
struct EvalMode {
    k: [i64; 3],
    /// 2 f^(k) for the representative of the Hermitian pair {k, -k}.
    coeff: Complex64,
}

#[derive(Clone, Debug)]
struct EvalComponent {
    mean: f64,
    modes: Vec<EvalMode>,
}

/// Exact pointwise evaluation of real band-limited fields by direct
/// trigonometric mode summation: f(x) = f^(0) + sum_pairs 2 Re(f^(k)
/// e^{2 pi i k.x}), with the per-axis phase tables e^{2 pi i k x_a} built by
/// recurrence. Shared across the components of a vector field.
#[derive(Clone, Debug)]
pub struct PointEvaluator {
    d: usize,
    kmax: [usize; 3],
    comps: Vec<EvalComponent>,
}

/// Reusable phase tables for one evaluation thread.
#[derive(Clone, Debug)]
pub struct EvalScratch {
    tables: Vec<Vec<Complex64>>,
}

impl PointEvaluator {
    pub fn new(fields: &[&PeriodicField]) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::InvalidInput("no fields to evaluate".into()));
        }
        let grid = fields[0].grid();
        let d = grid.d();
        let half = grid.n() as i64 / 2;
        let mut kmax = [0usize; 3];
        let mut comps = Vec::with_capacity(fields.len());
        for f in fields {
            grid.same_grid(f.grid())?;
            if !f.is_real() {
                return Err(Error::InvalidInput(
                    "pointwise evaluation expects a real field".into(),
                ));
            }
            let mut mean = 0.0;
            let mut modes = Vec::new();
            for idx in 0..grid.len() {
                let c = f.coeffs()[idx];
                if c == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let freq = grid.freq(idx);
                if freq.iter().all(|&k| k == 0) {
                    mean = c.re;
                    continue;
                }
                if freq.iter().any(|&k| k == -half) {
                    return Err(Error::InvalidInput(format!(
                        "mode {freq:?} sits on the Nyquist plane; the field is \
                         outside the symmetric band"
                    )));
                }
                // keep one representative per Hermitian pair
                let rep = freq.iter().find(|&&k| k != 0).is_none_or(|&k| k > 0);
                if !rep {
                    continue;
                }
                let mut k = [0i64; 3];
                k[..d].copy_from_slice(freq);
                for (a, &ka) in freq.iter().enumerate() {
                    kmax[a] = kmax[a].max(ka.unsigned_abs() as usize);
                }
                modes.push(EvalMode {
                    k,
                    coeff: 2.0 * c,
                });
            }
            comps.push(EvalComponent { mean, modes });
        }
        Ok(PointEvaluator { d, kmax, comps })
    }

    pub fn for_scalar(f: &PeriodicField) -> Result<Self> {
        Self::new(&[f])
    }

    pub fn for_vector(f: &VectorField) -> Result<Self> {
        let refs: Vec<&PeriodicField> = f.comps().iter().collect();
        Self::new(&refs)
    }

    pub fn ncomp(&self) -> usize {
        self.comps.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn scratch(&self) -> EvalScratch {
        EvalScratch {
            tables: (0..self.d)
                .map(|a| vec![Complex64::new(0.0, 0.0); self.kmax[a] + 1])
                .collect(),
        }
    }

    /// Evaluate every component at x (one value per component). x need not
    /// be reduced to [0,1): the phases are periodic by construction.
    pub fn eval_into(&self, x: &[f64], scratch: &mut EvalScratch, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.d);
        debug_assert_eq!(out.len(), self.comps.len());
        for (xa, table) in x.iter().zip(scratch.tables.iter_mut()) {
            let ang = TWO_PI * xa;
            let w = Complex64::new(ang.cos(), ang.sin());
            table[0] = Complex64::new(1.0, 0.0);
            for k in 1..table.len() {
                table[k] = table[k - 1] * w;
            }
        }
        for (comp, slot) in self.comps.iter().zip(out.iter_mut()) {
            let mut acc = comp.mean;
            for mode in &comp.modes {
                let mut phase = Complex64::new(1.0, 0.0);
                for (a, table) in scratch.tables.iter().enumerate() {
                    let k = mode.k[a];
                    if k > 0 {
                        phase *= table[k as usize];
                    } else if k < 0 {
                        phase *= table[(-k) as usize].conj();
                    }
                }
                acc += mode.coeff.re * phase.re - mode.coeff.im * phase.im;
            }
            *slot = acc;
        }
    }

    /// Convenience single-point evaluation (allocates scratch).
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut scratch = self.scratch();
        let mut out = vec![0.0; self.comps.len()];
        self.eval_into(x, &mut scratch, &mut out);
        out
    }
}

// ---------------------------------------------------------------------------
// Path simulation
// ---------------------------------------------------------------------------

/// Stored ensemble: per path, positions of X in R^d and the accumulated
/// driver L at the checkpoint times (the last checkpoint is the endpoint).
/// Torus positions are obtained by reducing mod 1 on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEnsemble {
    config: SimConfig,
    d: usize,
    dt_eff: f64,
    times: Vec<f64>,
    /// Row-major (path, checkpoint, component).
    positions: Vec<f64>,
    /// Accumulated driver, same layout.
    levy: Vec<f64>,
    stream_ids: Vec<u64>,
}

impl TrajectoryEnsemble {
    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn paths(&self) -> usize {
        self.config.paths
    }

    pub fn checkpoints(&self) -> usize {
        self.times.len()
    }

    pub fn dt_eff(&self) -> f64 {
        self.dt_eff
    }

    /// Checkpoint times, ascending; the last equals the horizon.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn stream_ids(&self) -> &[u64] {
        &self.stream_ids
    }

    /// Position of path p at checkpoint i (in R^d, not reduced).
    pub fn position(&self, path: usize, checkpoint: usize) -> &[f64] {
        let c = self.times.len();
        let at = (path * c + checkpoint) * self.d;
        &self.positions[at..at + self.d]
    }

    /// Accumulated driver of path p at checkpoint i.
    pub fn levy_sum(&self, path: usize, checkpoint: usize) -> &[f64] {
        let c = self.times.len();
        let at = (path * c + checkpoint) * self.d;
        &self.levy[at..at + self.d]
    }

    /// Endpoint of path p.
    pub fn endpoint(&self, path: usize) -> &[f64] {
        self.position(path, self.times.len() - 1)
    }

    /// Position reduced to the torus.
    pub fn torus_position(&self, path: usize, checkpoint: usize) -> Vec<f64> {
        self.position(path, checkpoint)
            .iter()
            .map(|c| c.rem_euclid(1.0))
            .collect()
    }

    /// Persist as flat binary: a 16-byte header (magic, version, d,
    /// checkpoint count, path count) followed by the effective step, the
    /// checkpoint times, the stream ids and the two data blocks, all
    /// little-endian.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&ENSEMBLE_MAGIC)?;
        w.write_all(&ENSEMBLE_VERSION.to_le_bytes())?;
        w.write_all(&(self.d as u16).to_le_bytes())?;
        w.write_all(&(self.times.len() as u16).to_le_bytes())?;
        w.write_all(&(self.config.paths as u32).to_le_bytes())?;
        w.write_all(&self.dt_eff.to_le_bytes())?;
        for t in &self.times {
            w.write_all(&t.to_le_bytes())?;
        }
        for id in &self.stream_ids {
            w.write_all(&id.to_le_bytes())?;
        }
        for v in &self.positions {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.levy {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read an ensemble persisted by [`write_binary`]; the configuration is
    /// supplied by the caller and checked against the header.
    pub fn read_binary(path: &Path, config: &SimConfig) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != ENSEMBLE_MAGIC {
            return Err(Error::InvalidInput(format!(
                "bad ensemble magic {magic:?}"
            )));
        }
        let version = read_u32(&mut r)?;
        if version != ENSEMBLE_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported ensemble version {version}"
            )));
        }
        let d = read_u16(&mut r)? as usize;
        let checkpoints = read_u16(&mut r)? as usize;
        let paths = read_u32(&mut r)? as usize;
        if d != config.x0.len() || paths != config.paths {
            return Err(Error::InvalidInput(format!(
                "ensemble header (d = {d}, M = {paths}) does not match the \
                 configuration (d = {}, M = {})",
                config.x0.len(),
                config.paths
            )));
        }
        let dt_eff = read_f64(&mut r)?;
        let times = read_f64_vec(&mut r, checkpoints)?;
        let mut stream_ids = vec![0u64; paths];
        for id in stream_ids.iter_mut() {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            *id = u64::from_le_bytes(buf);
        }
        let positions = read_f64_vec(&mut r, paths * checkpoints * d)?;
        let levy = read_f64_vec(&mut r, paths * checkpoints * d)?;
        Ok(TrajectoryEnsemble {
            config: config.clone(),
            d,
            dt_eff,
            times,
            positions,
            levy,
            stream_ids,
        })
    }
}

fn read_u16(r: &mut impl IoRead) -> Result<u16> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u32(r: &mut impl IoRead) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64(r: &mut impl IoRead) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_f64_vec(r: &mut impl IoRead, len: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; len];
    for v in out.iter_mut() {
        *v = read_f64(r)?;
    }
    Ok(out)
}

/// Drives one path: the Euler recursion with per-step hooks. `pre` sees the
/// state before each step (time index 0..steps-1), `post` sees the state and
/// the accumulated driver after each step (time index 1..=steps).
struct PathDriver<'a> {
    d: usize,
    steps: usize,
    dt: f64,
    master_seed: u64,
    x0: [f64; 3],
    evaluator: &'a PointEvaluator,
    sampler: &'a StableSampler,
}

impl PathDriver<'_> {
    fn run(
        &self,
        path: u64,
        mut pre: impl FnMut(usize, &[f64]),
        mut post: impl FnMut(usize, &[f64], &[f64]),
    ) {
        let d = self.d;
        let mut rng = ChaCha12Rng::seed_from_u64(self.master_seed);
        rng.set_stream(path);
        rng.set_word_pos(0);
        let mut scratch = self.evaluator.scratch();
        let mut x = self.x0;
        let mut l = [0.0f64; 3];
        let mut xt = [0.0f64; 3];
        let mut f = [0.0f64; 3];
        let mut dl = [0.0f64; 3];
        for step in 0..self.steps {
            pre(step, &x[..d]);
            for a in 0..d {
                xt[a] = x[a].rem_euclid(1.0);
            }
            self.evaluator.eval_into(&xt[..d], &mut scratch, &mut f[..d]);
            self.sampler.sample_into(&mut rng, &mut dl[..d]);
            for a in 0..d {
                x[a] += f[a] * self.dt + dl[a];
                l[a] += dl[a];
            }
            post(step + 1, &x[..d], &l[..d]);
        }
    }
}

fn build_driver<'a>(
    cfg: &SimConfig,
    evaluator: &'a PointEvaluator,
    sampler: &'a StableSampler,
) -> PathDriver<'a> {
    let mut x0 = [0.0f64; 3];
    x0[..cfg.x0.len()].copy_from_slice(&cfg.x0);
    PathDriver {
        d: cfg.x0.len(),
        steps: cfg.steps(),
        dt: cfg.dt_eff(),
        master_seed: cfg.master_seed,
        x0,
        evaluator,
        sampler,
    }
}

fn check_drift_dimensions(cfg: &SimConfig, drift_field: &VectorField) -> Result<SphericalMeasure> {
    cfg.validate()?;
    let d = cfg.x0.len();
    let measure = SphericalMeasure::from_spec(&cfg.measure)?;
    if measure.d() != d {
        return Err(Error::BadDimension(measure.d()));
    }
    if drift_field.grid().d() != d || drift_field.ncomp() != d {
        return Err(Error::InvalidInput(format!(
            "drift field has d = {}, ncomp = {}, expected {}",
            drift_field.grid().d(),
            drift_field.ncomp(),
            d
        )));
    }
    Ok(measure)
}

/// Euler-Maruyama ensemble X_{n+1} = X_n + F(X_n)dt + dL_n. The drift is
/// evaluated by exact mode summation at the mod-1-reduced particle position;
/// each path draws from its own counter-based stream, so the result is
/// bit-identical for a given configuration regardless of the number of
/// threads.
pub fn simulate_paths(cfg: &SimConfig, drift_field: &VectorField) -> Result<TrajectoryEnsemble> {
    let measure = check_drift_dimensions(cfg, drift_field)?;
    let d = cfg.x0.len();
    let steps = cfg.steps();
    let dt_eff = cfg.dt_eff();
    let schedule = checkpoint_schedule(steps, CHECKPOINTS_PER_PATH)?;
    let times: Vec<f64> = schedule.iter().map(|&s| s as f64 * dt_eff).collect();
    let evaluator = PointEvaluator::for_vector(drift_field)?;
    let sampler = StableSampler::new(&measure, dt_eff)?;
    let driver = build_driver(cfg, &evaluator, &sampler);

    let c = schedule.len();
    let mut positions = vec![0.0f64; cfg.paths * c * d];
    let mut levy = vec![0.0f64; cfg.paths * c * d];
    positions
        .par_chunks_mut(c * d)
        .zip(levy.par_chunks_mut(c * d))
        .enumerate()
        .for_each(|(p, (pos, lev))| {
            let mut cursor = 0usize;
            driver.run(
                p as u64,
                |_, _| {},
                |step, x, l| {
                    if cursor < c && step == schedule[cursor] {
                        pos[cursor * d..(cursor + 1) * d].copy_from_slice(x);
                        lev[cursor * d..(cursor + 1) * d].copy_from_slice(l);
                        cursor += 1;
                    }
                },
            );
            debug_assert_eq!(cursor, c);
        });

    if !positions.iter().all(|v| v.is_finite()) {
        return Err(Error::Diverged(
            "a path left the finite range; reduce the step or the drift".into(),
        ));
    }
    Ok(TrajectoryEnsemble {
        config: cfg.clone(),
        d,
        dt_eff,
        times,
        positions,
        levy,
        stream_ids: (0..cfg.paths as u64).collect(),
    })
}

// ---------------------------------------------------------------------------
// Deterministic reductions and regression helpers
// ---------------------------------------------------------------------------

/// Blocked (pairwise) summation in a fixed order; the result does not depend
/// on any parallel schedule and carries O(log n) rounding growth.
pub(crate) fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        v.iter().sum()
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

fn pairwise_mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        pairwise_sum(v) / v.len() as f64
    }
}

/// Mean of the batch means and its standard error over `batches` contiguous
/// near-equal blocks.
fn batch_mean_se(samples: &[f64], batches: usize) -> (f64, f64) {
    let m = samples.len();
    let b = batches.min(m).max(1);
    let mut means = Vec::with_capacity(b);
    for i in 0..b {
        let lo = i * m / b;
        let hi = (i + 1) * m / b;
        means.push(pairwise_mean(&samples[lo..hi]));
    }
    let mean = pairwise_mean(&means);
    if b < 2 {
        return (mean, 0.0);
    }
    let var: f64 = means.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (b as f64 - 1.0);
    (mean, (var / b as f64).sqrt())
}

/// Least-squares slope of ln y against ln x; the inputs must be positive.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidInput(
            "slope needs at least two points".into(),
        ));
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(x, y) in points {
        if x <= 0.0 || y <= 0.0 || !x.is_finite() || !y.is_finite() {
            return Err(Error::InvalidInput(format!(
                "log-log regression needs positive finite points, got ({x}, {y})"
            )));
        }
        xs.push(x.ln());
        ys.push(y.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Squared energy distance 2 E|X-Y| - E|X-X'| - E|Y-Y'| between two samples
/// (one-dimensional), computed from sorted copies in O(n log n). Nonnegative,
/// zero iff the empirical laws agree; NaN on empty input.
pub fn energy_distance(xs: &[f64], ys: &[f64]) -> f64 {
    if xs.is_empty() || ys.is_empty() {
        return f64::NAN;
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    let pa = prefix_sums(&a);
    let pb = prefix_sums(&b);
    let cross = mean_abs_cross(&a, &pa, &b) / (a.len() as f64 * b.len() as f64);
    2.0 * cross - mean_abs_within(&a, &pa) - mean_abs_within(&b, &pb)
}

fn prefix_sums(sorted: &[f64]) -> Vec<f64> {
    let mut p = Vec::with_capacity(sorted.len() + 1);
    p.push(0.0);
    let mut acc = 0.0;
    for v in sorted {
        acc += v;
        p.push(acc);
    }
    p
}

/// sum over all ordered pairs |a_i - b_j| with a sorted and prefixed.
fn mean_abs_cross(a: &[f64], pa: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let total = pa[n];
    let mut sum = 0.0;
    for &v in b {
        let idx = a.partition_point(|&x| x <= v);
        sum += v * idx as f64 - pa[idx] + (total - pa[idx]) - v * (n - idx) as f64;
    }
    sum
}

/// mean over all ordered pairs |a_i - a_j| (V-statistic, diagonal included).
fn mean_abs_within(a: &[f64], pa: &[f64]) -> f64 {
    let n = a.len();
    let mut sum = 0.0;
    for (j, &v) in a.iter().enumerate() {
        sum += v * j as f64 - pa[j];
    }
    2.0 * sum / (n as f64 * n as f64)
}

// ---------------------------------------------------------------------------
// Central-limit statistics
// ---------------------------------------------------------------------------

/// Which limit regime a report was evaluated against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitRegime {
    Brownian,
    Stable,
}

/// Pass bands for CLT checks: an entry passes when it is within `rel` of the
/// reference relatively, or within `se_factor` batch standard errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CltTolerances {
    pub rel: f64,
    pub se_factor: f64,
}

impl Default for CltTolerances {
    fn default() -> Self {
        CltTolerances {
            rel: 0.05,
            se_factor: 4.0,
        }
    }
}

/// One rescaled comparison at a macroscopic time t: empirical covariance
/// entries (row-major, Gaussian regime) or the real part of the empirical
/// characteristic function per probe (stable regime), against the reference
/// t·D or e^{-t psi(z)}.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CltCheck {
    /// Macroscopic time (physical time / n).
    pub t: f64,
    /// Physical time of the checkpoint used.
    pub physical_time: f64,
    pub statistic: Vec<f64>,
    pub reference: Vec<f64>,
    pub std_error: Vec<f64>,
    pub pass: bool,
}

/// Rescaled endpoint statistics of an ensemble against the effective model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CltReport {
    pub regime: LimitRegime,
    /// Diffusive rescaling factor (the ensemble horizon is n times the
    /// macroscopic horizon).
    pub n: f64,
    /// Physical ensemble horizon.
    pub horizon: f64,
    /// Probe frequencies of the stable regime (empty for the Gaussian one).
    pub probes: Vec<Vec<f64>>,
    pub checks: Vec<CltCheck>,
    pub pass: bool,
}

impl CltReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Largest absolute deviation |statistic - reference| of the final check.
    pub fn final_error(&self) -> f64 {
        self.checks
            .last()
            .map(|c| {
                c.statistic
                    .iter()
                    .zip(&c.reference)
                    .map(|(s, r)| (s - r).abs())
                    .fold(0.0, f64::max)
            })
            .unwrap_or(f64::NAN)
    }
}

/// Rescaled central-limit statistics of the ensemble at macroscopic times
/// t in {0.25, 0.5, 1} of the macroscopic horizon T = horizon/n: covariance
/// of n^{-1/2}(X_{nt} - nt<F>_pi - x0) against t·D when the model carries a
/// diffusivity, else the empirical characteristic function of
/// n^{-1/alpha}(X_{nt} - nt<F>_pi - x0) at probes z in {1, 2, 3} e_1 against
/// e^{-t psi(z)}. Standard errors are batch means over 40 batches.
pub fn clt_statistics(
    ens: &TrajectoryEnsemble,
    model: &EffectiveModel,
    n: f64,
    tol: &CltTolerances,
) -> Result<CltReport> {
    ens.config.require_statistical()?;
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::InvalidInput(format!(
            "rescaling n = {n} must be positive"
        )));
    }
    let d = ens.d();
    let m = ens.paths();
    let mean_f = model.mean_f();
    if mean_f.len() != d {
        return Err(Error::InvalidInput(
            "model dimension does not match the ensemble".into(),
        ));
    }
    let brownian = model.diffusivity().is_some();
    let scale = if brownian {
        n.powf(-0.5)
    } else {
        n.powf(-1.0 / model.alpha())
    };
    let stable_measure = if brownian {
        None
    } else {
        Some(SphericalMeasure::from_spec(model.limit_measure())?)
    };
    let probes: Vec<Vec<f64>> = if brownian {
        Vec::new()
    } else {
        (1..=3)
            .map(|j| {
                let mut z = vec![0.0; d];
                z[0] = j as f64;
                z
            })
            .collect()
    };

    let mut checks = Vec::new();
    for frac in [0.25, 0.5, 1.0] {
        let target = frac * ens.config.horizon;
        let ci = nearest_checkpoint(ens.times(), target);
        let phys = ens.times()[ci];
        let t_mac = phys / n;
        // rescaled endpoints
        let mut ys = vec![0.0f64; m * d];
        for p in 0..m {
            let pos = ens.position(p, ci);
            for a in 0..d {
                ys[p * d + a] = (pos[a] - phys * mean_f[a] - ens.config.x0[a]) * scale;
            }
        }
        let check = if brownian {
            let diff = model.diffusivity().expect("checked above");
            brownian_check(&ys, m, d, t_mac, phys, diff, tol)
        } else {
            stable_check(
                &ys,
                m,
                d,
                t_mac,
                phys,
                &probes,
                stable_measure.as_ref().expect("checked above"),
                tol,
            )
        };
        checks.push(check);
    }

    let pass = checks.iter().all(|c| c.pass);
    Ok(CltReport {
        regime: if brownian {
            LimitRegime::Brownian
        } else {
            LimitRegime::Stable
        },
        n,
        horizon: ens.config.horizon,
        probes,
        checks,
        pass,
    })
}

fn nearest_checkpoint(times: &[f64], target: f64) -> usize {
    let mut best = 0;
    let mut dist = f64::INFINITY;
    for (i, &t) in times.iter().enumerate() {
        let e = (t - target).abs();
        if e < dist {
            dist = e;
            best = i;
        }
    }
    best
}

fn brownian_check(
    ys: &[f64],
    m: usize,
    d: usize,
    t_mac: f64,
    phys: f64,
    diff: &[Vec<f64>],
    tol: &CltTolerances,
) -> CltCheck {
    let mut means = vec![0.0; d];
    let mut comp = vec![0.0f64; m];
    for a in 0..d {
        for p in 0..m {
            comp[p] = ys[p * d + a];
        }
        means[a] = pairwise_mean(&comp);
    }
    let mut statistic = Vec::with_capacity(d * d);
    let mut reference = Vec::with_capacity(d * d);
    let mut std_error = Vec::with_capacity(d * d);
    let mut samples = vec![0.0f64; m];
    let mut pass = true;
    let max_diag = (0..d).map(|i| diff[i][i]).fold(0.0, f64::max);
    for i in 0..d {
        for j in 0..d {
            for p in 0..m {
                samples[p] = (ys[p * d + i] - means[i]) * (ys[p * d + j] - means[j]);
            }
            let (stat, se) = batch_mean_se(&samples, BATCH_COUNT);
            let rf = t_mac * diff[i][j];
            let band = (tol.rel * t_mac * max_diag).max(tol.se_factor * se);
            if (stat - rf).abs() > band {
                pass = false;
            }
            statistic.push(stat);
            reference.push(rf);
            std_error.push(se);
        }
    }
    CltCheck {
        t: t_mac,
        physical_time: phys,
        statistic,
        reference,
        std_error,
        pass,
    }
}

#[allow(clippy::too_many_arguments)]
fn stable_check(
    ys: &[f64],
    m: usize,
    d: usize,
    t_mac: f64,
    phys: f64,
    probes: &[Vec<f64>],
    measure: &SphericalMeasure,
    tol: &CltTolerances,
) -> CltCheck {
    let mut statistic = Vec::with_capacity(probes.len());
    let mut reference = Vec::with_capacity(probes.len());
    let mut std_error = Vec::with_capacity(probes.len());
    let mut samples = vec![0.0f64; m];
    let mut pass = true;
    for z in probes {
        for p in 0..m {
            let dot: f64 = (0..d).map(|a| z[a] * ys[p * d + a]).sum();
            samples[p] = (TWO_PI * dot).cos();
        }
        let (stat, se) = batch_mean_se(&samples, BATCH_COUNT);
        let rf = (-t_mac * measure.symbol(z)).exp();
        if (stat - rf).abs() > (tol.se_factor * se).max(tol.rel * rf.abs()) {
            pass = false;
        }
        statistic.push(stat);
        reference.push(rf);
        std_error.push(se);
    }
    CltCheck {
        t: t_mac,
        physical_time: phys,
        statistic,
        reference,
        std_error,
        pass,
    }
}

// ---------------------------------------------------------------------------
// Martingale diagnostics
// ---------------------------------------------------------------------------

/// Diagnostics of the reconstructed martingale part
/// M_t = X_t - t<F>_pi - X_0 - (chi(X_0) - chi(X_t)) - L_t.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub alpha: f64,
    pub horizon: f64,
    pub times: Vec<f64>,
    /// Mean of M per checkpoint and component.
    pub mean: Vec<Vec<f64>>,
    /// Batch-mean standard error, same layout.
    pub std_error: Vec<Vec<f64>>,
    /// max_a |mean M_T^a| / se at the endpoint (0 when both vanish).
    pub endpoint_sigma: f64,
    /// Pooled lag-1 autocorrelation of checkpoint increments per component.
    pub increment_autocorr: Vec<f64>,
    /// 1/sqrt(#increment pairs), the null scale of the autocorrelation.
    pub autocorr_null_se: f64,
    /// E max over checkpoints of |M_t|^2 (the sup is approximated by the
    /// stored checkpoints; M_0 = 0 is included).
    pub sup_square_mean: f64,
    pub sup_square_se: f64,
    /// Endpoint mean within 3 standard errors.
    pub mean_pass: bool,
    /// All increment autocorrelations within 3 null standard errors.
    pub autocorr_pass: bool,
}

impl MartingaleReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Reconstruct M_t per path at the stored checkpoints and report (a) the mean
/// of M against its batch standard error, (b) the pooled lag-1
/// autocorrelation of checkpoint increments, (c) E[sup_t |M_t|^2] for the
/// growth-in-n regression of the stable regime.
pub fn martingale_diagnostics(
    ens: &TrajectoryEnsemble,
    chi: &Corrector,
    model: &EffectiveModel,
) -> Result<MartingaleReport> {
    ens.config.require_statistical()?;
    let d = ens.d();
    if chi.chi().ncomp() != d || chi.chi().grid().d() != d {
        return Err(Error::InvalidInput(format!(
            "corrector has {} components on a d = {} grid, ensemble needs d = {}",
            chi.chi().ncomp(),
            chi.chi().grid().d(),
            d
        )));
    }
    let mean_f = model.mean_f();
    if mean_f.len() != d {
        return Err(Error::InvalidInput(
            "model dimension does not match the ensemble".into(),
        ));
    }
    let evaluator = PointEvaluator::for_vector(chi.chi())?;
    let mut scratch = evaluator.scratch();
    let x0t: Vec<f64> = ens.config.x0.iter().map(|c| c.rem_euclid(1.0)).collect();
    let mut chi0 = vec![0.0; d];
    evaluator.eval_into(&x0t, &mut scratch, &mut chi0);

    let m = ens.paths();
    let c = ens.checkpoints();
    let b = BATCH_COUNT.min(m);
    // batch accumulators: sums of M per (batch, checkpoint, component) and of
    // the per-path sup of |M|^2 per batch
    let mut bsum = vec![0.0f64; b * c * d];
    let mut bsup = vec![0.0f64; b];
    let mut bcount = vec![0usize; b];
    // pooled autocorrelation sums per component
    let mut s_inc = vec![0.0f64; d];
    let mut s_inc_sq = vec![0.0f64; d];
    let mut s_lag = vec![0.0f64; d];
    let mut s_first = vec![0.0f64; d];
    let mut s_second = vec![0.0f64; d];

    let mut mt = vec![0.0f64; c * d];
    let mut xt = vec![0.0f64; d];
    let mut chit = vec![0.0f64; d];
    for p in 0..m {
        let batch = p * b / m;
        bcount[batch] += 1;
        let mut sup = 0.0f64;
        for i in 0..c {
            let pos = ens.position(p, i);
            let lev = ens.levy_sum(p, i);
            let t = ens.times()[i];
            for a in 0..d {
                xt[a] = pos[a].rem_euclid(1.0);
            }
            evaluator.eval_into(&xt, &mut scratch, &mut chit);
            let mut norm2 = 0.0;
            for a in 0..d {
                let v = pos[a]
                    - t * mean_f[a]
                    - ens.config.x0[a]
                    - (chi0[a] - chit[a])
                    - lev[a];
                mt[i * d + a] = v;
                norm2 += v * v;
                bsum[(batch * c + i) * d + a] += v;
            }
            sup = sup.max(norm2);
        }
        bsup[batch] += sup;
        // increments, including the first one from M_0 = 0
        for a in 0..d {
            let mut prev = 0.0f64;
            let mut last_inc = f64::NAN;
            for i in 0..c {
                let inc = mt[i * d + a] - prev;
                prev = mt[i * d + a];
                s_inc[a] += inc;
                s_inc_sq[a] += inc * inc;
                if i > 0 {
                    s_lag[a] += last_inc * inc;
                    s_first[a] += last_inc;
                    s_second[a] += inc;
                }
                last_inc = inc;
            }
        }
    }

    // per-checkpoint means and batch standard errors
    let mut mean = vec![vec![0.0; d]; c];
    let mut std_error = vec![vec![0.0; d]; c];
    for i in 0..c {
        for a in 0..d {
            let means: Vec<f64> = (0..b)
                .map(|bb| bsum[(bb * c + i) * d + a] / bcount[bb] as f64)
                .collect();
            let mu = pairwise_mean(&means);
            let var = means.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>()
                / ((b as f64 - 1.0).max(1.0));
            mean[i][a] = mu;
            std_error[i][a] = (var / b as f64).sqrt();
        }
    }
    let endpoint_sigma = (0..d)
        .map(|a| {
            let mu = mean[c - 1][a].abs();
            let se = std_error[c - 1][a];
            if mu == 0.0 {
                0.0
            } else {
                mu / se
            }
        })
        .fold(0.0, f64::max);

    let n_inc = (m * c) as f64;
    let n_pairs = (m * (c - 1)) as f64;
    let mut increment_autocorr = Vec::with_capacity(d);
    for a in 0..d {
        let mu = s_inc[a] / n_inc;
        let num = s_lag[a] - mu * (s_first[a] + s_second[a]) + n_pairs * mu * mu;
        let den = s_inc_sq[a] - n_inc * mu * mu;
        increment_autocorr.push(if den == 0.0 { 0.0 } else { num / den });
    }
    let autocorr_null_se = 1.0 / n_inc.sqrt();

    let sup_means: Vec<f64> = (0..b).map(|bb| bsup[bb] / bcount[bb] as f64).collect();
    let sup_square_mean = pairwise_mean(&sup_means);
    let sup_var = sup_means
        .iter()
        .map(|x| (x - sup_square_mean) * (x - sup_square_mean))
        .sum::<f64>()
        / ((b as f64 - 1.0).max(1.0));
    let sup_square_se = (sup_var / b as f64).sqrt();

    let mean_pass = endpoint_sigma <= 3.0;
    let autocorr_pass = increment_autocorr
        .iter()
        .all(|r| r.abs() <= 3.0 * autocorr_null_se);
    Ok(MartingaleReport {
        alpha: ens.config.alpha(),
        horizon: ens.config.horizon,
        times: ens.times().to_vec(),
        mean,
        std_error,
        endpoint_sigma,
        increment_autocorr,
        autocorr_null_se,
        sup_square_mean,
        sup_square_se,
        mean_pass,
        autocorr_pass,
    })
}

// ---------------------------------------------------------------------------
// Ergodic averages and occupancy
// ---------------------------------------------------------------------------

/// L2(P) errors of the time averages (1/h) int_0^h b(X_s^T) ds against the
/// target mean, one entry per requested horizon (ascending; the last must
/// equal the configured horizon). The integral is the left-point sum of the
/// Euler chain.
pub fn ergodic_l2_errors(
    cfg: &SimConfig,
    drift_field: &VectorField,
    b: &PeriodicField,
    b_mean: f64,
    horizons: &[f64],
) -> Result<Vec<f64>> {
    let measure = check_drift_dimensions(cfg, drift_field)?;
    cfg.require_statistical()?;
    if horizons.is_empty() {
        return Err(Error::InvalidInput("no horizons requested".into()));
    }
    for w in horizons.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidInput("horizons must be ascending".into()));
        }
    }
    let last = *horizons.last().expect("nonempty");
    if (cfg.horizon - last).abs() > 1e-9 * last.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "configured horizon {} must equal the last requested horizon {last}",
            cfg.horizon
        )));
    }
    let d = cfg.x0.len();
    let steps = cfg.steps();
    let dt_eff = cfg.dt_eff();
    let marks: Vec<usize> = horizons
        .iter()
        .map(|h| ((h / dt_eff).round() as usize).clamp(1, steps))
        .collect();
    for w in marks.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidInput(
                "horizons collapse onto the same step; refine dt".into(),
            ));
        }
    }
    let evaluator = PointEvaluator::for_vector(drift_field)?;
    let sampler = StableSampler::new(&measure, dt_eff)?;
    let driver = build_driver(cfg, &evaluator, &sampler);
    let b_eval = PointEvaluator::for_scalar(b)?;
    if b_eval.d() != d {
        return Err(Error::InvalidInput(
            "observable dimension does not match the paths".into(),
        ));
    }

    let h = marks.len();
    let mut samples = vec![0.0f64; cfg.paths * h];
    samples.par_chunks_mut(h).enumerate().for_each(|(p, row)| {
        // the running integral is read by the recording hook and written by
        // the accumulation hook, hence the Cell
        let acc = std::cell::Cell::new(0.0f64);
        let mut cursor = 0usize;
        let mut scratch = b_eval.scratch();
        let mut xt = [0.0f64; 3];
        let mut bv = [0.0f64; 1];
        driver.run(
            p as u64,
            |_, x| {
                for a in 0..d {
                    xt[a] = x[a].rem_euclid(1.0);
                }
                b_eval.eval_into(&xt[..d], &mut scratch, &mut bv);
                acc.set(acc.get() + bv[0] * dt_eff);
            },
            |step, _, _| {
                if cursor < h && step == marks[cursor] {
                    let t = step as f64 * dt_eff;
                    row[cursor] = acc.get() / t - b_mean;
                    cursor += 1;
                }
            },
        );
        debug_assert_eq!(cursor, h);
    });

    let m = cfg.paths;
    let mut errors = Vec::with_capacity(h);
    let mut col = vec![0.0f64; m];
    for j in 0..h {
        for p in 0..m {
            col[p] = samples[p * h + j] * samples[p * h + j];
        }
        errors.push(pairwise_mean(&col).sqrt());
    }
    Ok(errors)
}

/// Occupancy counts of the endpoint torus positions over equal bins of [0,1)
/// (one-dimensional ensembles). Endpoints of independent paths are used so
/// the counts are independent samples of the time-T law.
pub fn torus_endpoint_counts(ens: &TrajectoryEnsemble, bins: usize) -> Result<Vec<usize>> {
    if ens.d() != 1 {
        return Err(Error::BadDimension(ens.d()));
    }
    if bins < 2 {
        return Err(Error::InvalidInput("need at least two bins".into()));
    }
    let mut counts = vec![0usize; bins];
    for p in 0..ens.paths() {
        let x = ens.endpoint(p)[0].rem_euclid(1.0);
        let bin = ((x * bins as f64) as usize).min(bins - 1);
        counts[bin] += 1;
    }
    Ok(counts)
}

/// Bin probabilities of a normalized density on [0,1): the density is
/// band-limited, so the midpoint rule over 64 points per bin integrates it
/// exactly; the result is renormalized to sum to one.
pub fn bin_probabilities(rho: &PeriodicField, bins: usize) -> Result<Vec<f64>> {
    if rho.grid().d() != 1 {
        return Err(Error::BadDimension(rho.grid().d()));
    }
    if bins < 2 {
        return Err(Error::InvalidInput("need at least two bins".into()));
    }
    let sub = 64usize;
    let evaluator = PointEvaluator::for_scalar(rho)?;
    let mut scratch = evaluator.scratch();
    let mut value = [0.0f64; 1];
    let mut probs = vec![0.0; bins];
    for (i, slot) in probs.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in 0..sub {
            let x = (i as f64 + (k as f64 + 0.5) / sub as f64) / bins as f64;
            evaluator.eval_into(&[x], &mut scratch, &mut value);
            acc += value[0];
        }
        *slot = acc / (bins * sub) as f64;
    }
    let total: f64 = probs.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::InvalidInput(
            "density does not integrate to a positive mass".into(),
        ));
    }
    for p in probs.iter_mut() {
        *p /= total;
        if *p <= 0.0 {
            return Err(Error::InvalidInput(
                "density has a nonpositive bin; the chi-square test is undefined".into(),
            ));
        }
    }
    Ok(probs)
}

/// Pearson chi-square statistic sum (O_i - N p_i)^2 / (N p_i) for observed
/// counts against bin probabilities (counts may be aggregated over seeds).
pub fn chi_square_statistic(counts: &[usize], probs: &[f64]) -> Result<f64> {
    if counts.len() != probs.len() || counts.is_empty() {
        return Err(Error::InvalidInput(
            "counts and probabilities must have equal nonzero length".into(),
        ));
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidInput("no observations".into()));
    }
    let n = total as f64;
    let mut stat = 0.0;
    for (&o, &p) in counts.iter().zip(probs) {
        if p <= 0.0 {
            return Err(Error::InvalidInput("bin probability must be positive".into()));
        }
        let e = n * p;
        stat += (o as f64 - e) * (o as f64 - e) / e;
    }
    Ok(stat)
}

// ---------------------------------------------------------------------------
// Mollification-level stability
// ---------------------------------------------------------------------------

/// Endpoint difference between the ensembles driven by the level-m and
/// level-(m+1) mollifications of the same drift, coupled through identical
/// noise streams. Reports the root-mean-square and maximal endpoint
/// displacement; a small value certifies that the simulated level already
/// resolves the drift.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelComparison {
    pub level: i32,
    pub rms_difference: f64,
    pub max_difference: f64,
}

pub fn compare_mollification_levels(
    cfg: &SimConfig,
    drift_field: &VectorField,
    level: i32,
) -> Result<LevelComparison> {
    let coarse = mollify(drift_field, level)?;
    let fine = mollify(drift_field, level + 1)?;
    let mut cfg_c = cfg.clone();
    cfg_c.level = Some(level);
    let mut cfg_f = cfg.clone();
    cfg_f.level = Some(level + 1);
    let ens_c = simulate_paths(&cfg_c, &coarse)?;
    let ens_f = simulate_paths(&cfg_f, &fine)?;
    let m = cfg.paths;
    let mut sq = vec![0.0f64; m];
    let mut max = 0.0f64;
    for (p, slot) in sq.iter_mut().enumerate() {
        let a = ens_c.endpoint(p);
        let b = ens_f.endpoint(p);
        let n2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        *slot = n2;
        max = max.max(n2.sqrt());
    }
    Ok(LevelComparison {
        level,
        rms_difference: pairwise_mean(&sq).sqrt(),
        max_difference: max,
    })
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell_problem::{effective_diffusivity, solve_poisson, spectral_gap_estimate};
    use crate::drift::{build_drift, enhance, DriftSpec, TrigTerm};
    use crate::fokker_planck::invariant_density;
    use crate::levy_generator::LevySymbol;
    use crate::torus_spectral::{random_band_limited, SpectralGrid};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn grid1(n: usize) -> SpectralGrid {
        SpectralGrid::new(1, n).unwrap()
    }

    fn isotropic(alpha: f64, d: usize) -> SphericalMeasure {
        SphericalMeasure::standard_isotropic(alpha, d).unwrap()
    }

    fn config(measure: &SphericalMeasure, d: usize) -> SimConfig {
        SimConfig {
            level: None,
            x0: vec![0.0; d],
            horizon: 1.0,
            dt: 0.01,
            paths: 1200,
            master_seed: 7,
            measure: measure.to_spec(),
        }
    }

    /// Full analytic pipeline for a given drift field: enhancement, invariant
    /// density, corrector and effective model.
    fn pipeline(
        f: &VectorField,
        sym: &LevySymbol,
        beta: f64,
    ) -> (
        crate::drift::EnhancedDrift,
        crate::fokker_planck::InvariantDensity,
        Corrector,
        EffectiveModel,
    ) {
        let gamma = 2.0 * beta + sym.alpha() - 1.0;
        let drift = enhance(f, sym, beta, gamma).unwrap();
        let inv = invariant_density(&drift, &sym.clone()).unwrap();
        let chi = solve_poisson(&drift, sym, &inv).unwrap();
        let model = effective_diffusivity(&chi, &inv, sym).unwrap();
        (drift, inv, chi, model)
    }

    fn gradient_field(g: &SpectralGrid, cos_amp: f64) -> VectorField {
        build_drift(
            &DriftSpec::GradientOf {
                d: 1,
                potential: vec![TrigTerm {
                    k: vec![1],
                    cos: cos_amp,
                    sin: 0.0,
                }],
            },
            g,
        )
        .unwrap()
    }

    fn odd_field(g: &SpectralGrid, sin_amp: f64) -> VectorField {
        build_drift(
            &DriftSpec::FourierList {
                d: 1,
                components: vec![vec![TrigTerm {
                    k: vec![1],
                    cos: 0.0,
                    sin: sin_amp,
                }]],
            },
            g,
        )
        .unwrap()
    }

    #[test]
    fn config_rejects_coarse_steps() {
        let m = isotropic(2.0, 1);
        let mut cfg = config(&m, 1);
        cfg.dt = 0.02; // > horizon/100
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("dt <= horizon/100"));
        cfg.dt = 0.01;
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.steps(), 100);
    }

    #[test]
    fn checkpoint_schedule_is_strictly_increasing() {
        for steps in [100usize, 101, 128, 6400, 99991] {
            let s = checkpoint_schedule(steps, CHECKPOINTS_PER_PATH).unwrap();
            assert_eq!(s.len(), CHECKPOINTS_PER_PATH);
            assert_eq!(*s.last().unwrap(), steps);
            for w in s.windows(2) {
                assert!(w[1] > w[0]);
            }
        }
        assert!(checkpoint_schedule(100, 64).is_ok());
        // one checkpoint per step when the counts coincide
        assert_eq!(
            checkpoint_schedule(64, 64).unwrap(),
            (1..=64).collect::<Vec<_>>()
        );
        assert!(checkpoint_schedule(63, 64).is_err());
    }

    #[test]
    fn stable_increment_of_zero_step_is_zero() {
        let m = isotropic(1.5, 1);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..5 {
            let v = sample_stable_increment(&m, 0.0, &mut rng).unwrap();
            assert_eq!(v, vec![0.0]);
        }
        // negative steps are rejected
        assert!(sample_stable_increment(&m, -0.5, &mut rng).is_err());
    }

    #[test]
    fn stable_increment_cf_matches_symbol() {
        // empirical characteristic function against e^{-dt psi(u)}
        let m = isotropic(1.5, 1);
        let dt = 0.05;
        let sampler = StableSampler::new(&m, dt).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let count = 1_000_000usize;
        let mut sums = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut dl = [0.0f64; 1];
        for _ in 0..count {
            sampler.sample_into(&mut rng, &mut dl);
            for (j, u) in [1.0f64, 2.0, 3.0].iter().enumerate() {
                let c = (TWO_PI * u * dl[0]).cos();
                sums[j] += c;
                sq[j] += c * c;
            }
        }
        for (j, u) in [1.0f64, 2.0, 3.0].iter().enumerate() {
            let mean = sums[j] / count as f64;
            let var = (sq[j] / count as f64 - mean * mean).max(0.0);
            let se = (var / count as f64).sqrt();
            let reference = (-dt * m.symbol(&[*u])).exp();
            assert!(
                (mean - reference).abs() < 4.0 * se,
                "CF mismatch at u = {u}: {mean} vs {reference} (se {se})"
            );
        }
    }

    #[test]
    fn gaussian_increment_covariance_is_dt_identity() {
        let m = isotropic(2.0, 2);
        let dt = 0.3;
        let sampler = StableSampler::new(&m, dt).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let count = 200_000usize;
        let (mut c11, mut c22, mut c12) = (0.0f64, 0.0f64, 0.0f64);
        let mut dl = [0.0f64; 2];
        for _ in 0..count {
            sampler.sample_into(&mut rng, &mut dl);
            c11 += dl[0] * dl[0];
            c22 += dl[1] * dl[1];
            c12 += dl[0] * dl[1];
        }
        let n = count as f64;
        let se_var = dt * (2.0 / n).sqrt();
        let se_off = dt / n.sqrt();
        assert!((c11 / n - dt).abs() < 3.0 * se_var);
        assert!((c22 / n - dt).abs() < 3.0 * se_var);
        assert!((c12 / n).abs() < 3.0 * se_off);
    }

    #[test]
    fn point_evaluator_matches_direct_mode_sum() {
        for (d, n) in [(1usize, 32usize), (2, 16)] {
            let g = SpectralGrid::new(d, n).unwrap();
            let f = random_band_limited(&g, 5, false, 0xfeed + d as u64);
            let ev = PointEvaluator::for_scalar(&f).unwrap();
            let mut rng = ChaCha12Rng::seed_from_u64(9);
            for _ in 0..25 {
                let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                let direct: Complex64 = (0..g.len())
                    .map(|idx| {
                        let k = g.freq(idx);
                        let phase: f64 =
                            TWO_PI * k.iter().zip(&x).map(|(&ki, xi)| ki as f64 * xi).sum::<f64>();
                        f.coeffs()[idx] * Complex64::new(phase.cos(), phase.sin())
                    })
                    .sum();
                let got = ev.eval(&x)[0];
                assert!(
                    (got - direct.re).abs() < 1e-10,
                    "evaluator mismatch at {x:?}: {got} vs {}",
                    direct.re
                );
            }
        }
    }

    #[test]
    fn zero_drift_paths_are_levy_sums() {
        let g = grid1(8);
        let m = isotropic(1.7, 1);
        let mut cfg = config(&m, 1);
        cfg.paths = 40;
        let ens = simulate_paths(&cfg, &VectorField::zeros(&g, 1)).unwrap();
        assert_eq!(ens.checkpoints(), CHECKPOINTS_PER_PATH);
        // checkpoint times are exact multiples of the step, ending at T
        assert!((ens.times().last().unwrap() - cfg.horizon).abs() < 1e-12);
        for w in ens.times().windows(2) {
            assert!(w[1] > w[0]);
        }
        // with F = 0 and x0 = 0 the position IS the accumulated driver
        for p in 0..cfg.paths {
            for i in 0..ens.checkpoints() {
                assert_eq!(ens.position(p, i), ens.levy_sum(p, i));
            }
        }
    }

    #[test]
    fn identical_configs_and_thread_counts_agree() {
        let g = grid1(16);
        let m = isotropic(1.5, 1);
        let f = odd_field(&g, 0.9);
        let mut cfg = config(&m, 1);
        cfg.paths = 64;
        cfg.x0 = vec![0.3];
        let a = simulate_paths(&cfg, &f).unwrap();
        let b = simulate_paths(&cfg, &f).unwrap();
        assert_eq!(a, b);
        let pool1 = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let pool3 = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let c = pool1.install(|| simulate_paths(&cfg, &f).unwrap());
        let d = pool3.install(|| simulate_paths(&cfg, &f).unwrap());
        assert_eq!(c, d);
        assert_eq!(a, c);
    }

    #[test]
    fn binary_round_trip_preserves_ensemble() {
        let g = grid1(16);
        let m = isotropic(2.0, 1);
        let f = gradient_field(&g, 0.4);
        let mut cfg = config(&m, 1);
        cfg.paths = 32;
        let ens = simulate_paths(&cfg, &f).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ensemble.bin");
        ens.write_binary(&path).unwrap();
        let back = TrajectoryEnsemble::read_binary(&path, &cfg).unwrap();
        assert_eq!(ens, back);
        // wrong configuration is rejected
        let mut other = cfg.clone();
        other.paths = 31;
        assert!(TrajectoryEnsemble::read_binary(&path, &other).is_err());
        // corrupted magic is rejected
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(TrajectoryEnsemble::read_binary(&path, &cfg).is_err());
    }

    #[test]
    fn euler_weak_error_is_first_order() {
        // The squared energy distance between the endpoint law at step dt and
        // a much finer reference scales like the square of the law
        // discrepancy, so a weak-order-1 scheme shows a ~16x drop over a 4x
        // refinement. A steep drift keeps the bias above the O(1/M)
        // V-statistic noise floor at the finest step.
        let g = grid1(32);
        let m = isotropic(2.0, 1);
        let f = odd_field(&g, 8.0);
        let paths = 30_000usize;
        let run = |dt: f64| {
            let cfg = SimConfig {
                level: None,
                x0: vec![0.5],
                horizon: 1.0,
                dt,
                paths,
                master_seed: 11,
                measure: m.to_spec(),
            };
            let ens = simulate_paths(&cfg, &f).unwrap();
            let xs: Vec<f64> = (0..paths).map(|p| ens.endpoint(p)[0]).collect();
            xs
        };
        let reference = run(6.25e-4);
        let dts = [1e-2, 5e-3, 2.5e-3];
        let dists: Vec<f64> = dts
            .iter()
            .map(|&dt| energy_distance(&run(dt), &reference))
            .collect();
        assert!(
            dists[0] > dists[1] && dists[1] > dists[2],
            "energy distances not decreasing: {dists:?}"
        );
        let ratio = dists[0] / dists[2];
        assert!(
            ratio > 5.0 && ratio < 150.0,
            "refinement ratio {ratio} outside the first-order window ({dists:?})"
        );
    }

    #[test]
    fn brownian_clt_covariance_free_case() {
        let g = grid1(16);
        let sym = LevySymbol::new(&isotropic(2.0, 1), &g).unwrap();
        let f = VectorField::zeros(&g, 1);
        let (_, _, _, model) = pipeline(&f, &sym, -0.1);
        let n = 16.0;
        let cfg = SimConfig {
            level: None,
            x0: vec![0.0],
            horizon: 16.0,
            dt: 0.1,
            paths: 2000,
            master_seed: 21,
            measure: isotropic(2.0, 1).to_spec(),
        };
        let ens = simulate_paths(&cfg, &f).unwrap();
        let report = clt_statistics(&ens, &model, n, &CltTolerances::default()).unwrap();
        assert_eq!(report.regime, LimitRegime::Brownian);
        assert_eq!(report.checks.len(), 3);
        for check in &report.checks {
            assert!(
                check.pass,
                "free Brownian covariance failed at t = {}: {:?} vs {:?} (se {:?})",
                check.t, check.statistic, check.reference, check.std_error
            );
        }
        assert!(report.pass);
    }

    #[test]
    fn brownian_clt_matches_harmonic_diffusivity() {
        // gradient drift: D = 1/(<e^{2f}><e^{-2f}>), MC variance must track it
        let g = grid1(32);
        let sym = LevySymbol::new(&isotropic(2.0, 1), &g).unwrap();
        let f = gradient_field(&g, 0.35);
        let (_, _, _, model) = pipeline(&f, &sym, -0.1);
        let d_eff = model.diffusivity().unwrap()[0][0];
        let n = 16.0;
        let cfg = SimConfig {
            level: None,
            x0: vec![0.0],
            horizon: 16.0,
            dt: 4e-3,
            paths: 20_000,
            master_seed: 5,
            measure: isotropic(2.0, 1).to_spec(),
        };
        let ens = simulate_paths(&cfg, &f).unwrap();
        let report = clt_statistics(&ens, &model, n, &CltTolerances::default()).unwrap();
        let last = report.checks.last().unwrap();
        let var = last.statistic[0];
        let reference = last.t * d_eff;
        assert!(
            (var - reference).abs() <= (0.06 * reference).max(5.0 * last.std_error[0]),
            "rescaled variance {var} vs t D = {reference} (se {})",
            last.std_error[0]
        );
    }

    #[test]
    fn stable_clt_cf_error_shrinks_with_n() {
        let g = grid1(32);
        let sym = LevySymbol::new(&isotropic(1.5, 1), &g).unwrap();
        let f = odd_field(&g, 0.8);
        let (_, _, _, model) = pipeline(&f, &sym, -0.1);
        let run = |n: f64| {
            let cfg = SimConfig {
                level: None,
                x0: vec![0.0],
                horizon: n,
                dt: 0.01,
                paths: 20_000,
                master_seed: 13,
                measure: isotropic(1.5, 1).to_spec(),
            };
            let ens = simulate_paths(&cfg, &f).unwrap();
            clt_statistics(&ens, &model, n, &CltTolerances::default()).unwrap()
        };
        let coarse = run(4.0);
        let fine = run(16.0);
        assert_eq!(coarse.regime, LimitRegime::Stable);
        assert!(
            fine.final_error() < coarse.final_error(),
            "CF error did not shrink: {} -> {}",
            coarse.final_error(),
            fine.final_error()
        );
        let last = fine.checks.last().unwrap();
        for ((s, r), se) in last
            .statistic
            .iter()
            .zip(&last.reference)
            .zip(&last.std_error)
        {
            assert!(
                (s - r).abs() <= (4.0 * se).max(0.05 * r.abs()),
                "CF error at the finest rescaling too large: {s} vs {r} (se {se})"
            );
        }
    }

    #[test]
    fn martingale_vanishes_without_drift() {
        let g = grid1(16);
        let sym = LevySymbol::new(&isotropic(1.6, 1), &g).unwrap();
        let f = VectorField::zeros(&g, 1);
        let (_, _, chi, model) = pipeline(&f, &sym, -0.2);
        let cfg = SimConfig {
            level: None,
            x0: vec![0.0],
            horizon: 2.0,
            dt: 0.02,
            paths: 1000,
            master_seed: 2,
            measure: isotropic(1.6, 1).to_spec(),
        };
        let ens = simulate_paths(&cfg, &f).unwrap();
        let report = martingale_diagnostics(&ens, &chi, &model).unwrap();
        assert_eq!(report.sup_square_mean, 0.0);
        assert!(report.increment_autocorr.iter().all(|&r| r == 0.0));
        assert!(report.mean.iter().all(|row| row.iter().all(|&v| v == 0.0)));
        assert!(report.mean_pass && report.autocorr_pass);
    }

    #[test]
    fn martingale_mean_and_autocorrelation_alpha_two() {
        // the step must be small enough that the Euler defect (a smooth
        // function of position, hence positively autocorrelated between
        // checkpoints) stays below the autocorrelation resolution
        let g = grid1(32);
        let sym = LevySymbol::new(&isotropic(2.0, 1), &g).unwrap();
        let f = gradient_field(&g, 0.3);
        let (_, _, chi, model) = pipeline(&f, &sym, -0.1);
        let cfg = SimConfig {
            level: None,
            x0: vec![0.25],
            horizon: 8.0,
            dt: 1e-3,
            paths: 10_000,
            master_seed: 17,
            measure: isotropic(2.0, 1).to_spec(),
        };
        let ens = simulate_paths(&cfg, &f).unwrap();
        let report = martingale_diagnostics(&ens, &chi, &model).unwrap();
        assert!(
            report.mean_pass,
            "endpoint mean {} sigma away",
            report.endpoint_sigma
        );
        assert!(
            report.autocorr_pass,
            "autocorrelation {:?} vs null se {}",
            report.increment_autocorr, report.autocorr_null_se
        );
        assert!(report.sup_square_mean > 0.0);
    }

    #[test]
    fn martingale_sup_square_scales_linearly_alpha_15() {
        let g = grid1(32);
        let sym = LevySymbol::new(&isotropic(1.5, 1), &g).unwrap();
        let f = odd_field(&g, 0.8);
        let (_, _, chi, model) = pipeline(&f, &sym, -0.1);
        let mut points = Vec::new();
        for n in [4.0f64, 16.0, 64.0] {
            let cfg = SimConfig {
                level: None,
                x0: vec![0.0],
                horizon: n,
                dt: 0.01,
                paths: 2000,
                master_seed: 23,
                measure: isotropic(1.5, 1).to_spec(),
            };
            let ens = simulate_paths(&cfg, &f).unwrap();
            let report = martingale_diagnostics(&ens, &chi, &model).unwrap();
            points.push((n, report.sup_square_mean));
        }
        let slope = log_log_slope(&points).unwrap();
        assert!(
            (0.7..1.3).contains(&slope),
            "sup-square growth slope {slope} outside (0.7, 1.3): {points:?}"
        );
    }

    #[test]
    fn torus_histogram_matches_invariant_density() {
        let g = grid1(32);
        let sym = LevySymbol::new(&isotropic(2.0, 1), &g).unwrap();
        let f = gradient_field(&g, 0.4);
        let gamma = 2.0 * (-0.1) + 2.0 - 1.0;
        let drift = enhance(&f, &sym, -0.1, gamma).unwrap();
        let inv = invariant_density(&drift, &sym).unwrap();
        let probe = PeriodicField::trig_mode(&g, &[1], 1.0, 0.0);
        let rate = spectral_gap_estimate(&drift, &sym, &[probe], 2.0).unwrap();
        let burn_in = 10.0 / rate;
        let horizon = burn_in.max(4.0) * 2.0;
        let bins = 32usize;
        let mut counts = vec![0usize; bins];
        for seed in [101u64, 202, 303] {
            let cfg = SimConfig {
                level: None,
                x0: vec![0.5],
                horizon,
                // fine step: the invariant law of the Euler chain carries an
                // O(dt) density bias the chi-square test would detect
                dt: horizon / 3200.0,
                paths: 2000,
                master_seed: seed,
                measure: isotropic(2.0, 1).to_spec(),
            };
            let ens = simulate_paths(&cfg, &f).unwrap();
            for (slot, c) in counts
                .iter_mut()
                .zip(torus_endpoint_counts(&ens, bins).unwrap())
            {
                *slot += c;
            }
        }
        let probs = bin_probabilities(inv.rho(), bins).unwrap();
        let stat = chi_square_statistic(&counts, &probs).unwrap();
        let quantile = ChiSquared::new((bins - 1) as f64)
            .unwrap()
            .inverse_cdf(0.99);
        assert!(
            stat < quantile,
            "chi-square {stat} exceeds the 0.99 quantile {quantile}"
        );
    }

    #[test]
    fn ergodic_average_error_decays_like_sqrt() {
        let g = grid1(32);
        let sym = LevySymbol::new(&isotropic(2.0, 1), &g).unwrap();
        let f = gradient_field(&g, 0.35);
        let gamma = 2.0 * (-0.1) + 2.0 - 1.0;
        let drift = enhance(&f, &sym, -0.1, gamma).unwrap();
        let inv = invariant_density(&drift, &sym).unwrap();
        let b = PeriodicField::trig_mode(&g, &[1], 1.0, 0.0);
        let b_mean = inv.mean_of(&b).unwrap();
        let horizons = [8.0, 32.0, 128.0];
        let cfg = SimConfig {
            level: None,
            x0: vec![0.0],
            horizon: 128.0,
            dt: 5e-3,
            paths: 1500,
            master_seed: 29,
            measure: isotropic(2.0, 1).to_spec(),
        };
        let errors = ergodic_l2_errors(&cfg, &f, &b, b_mean, &horizons).unwrap();
        let points: Vec<(f64, f64)> = horizons.iter().copied().zip(errors.iter().copied()).collect();
        let slope = log_log_slope(&points).unwrap();
        assert!(
            (-0.65..=-0.35).contains(&slope),
            "ergodic error slope {slope} outside -0.5 +- 0.15: {errors:?}"
        );
        assert!(errors[2] < 0.03, "final ergodic error too large: {errors:?}");
    }

    #[test]
    fn time_average_of_drift_matches_quadrature_mean() {
        // the time average of F along the path converges to <F>_pi = 0
        let g = grid1(32);
        let f = gradient_field(&g, 0.35);
        let b = f.comp(0).clone();
        let cfg = SimConfig {
            level: None,
            x0: vec![0.0],
            horizon: 64.0,
            dt: 5e-3,
            paths: 1500,
            master_seed: 31,
            measure: isotropic(2.0, 1).to_spec(),
        };
        let errors = ergodic_l2_errors(&cfg, &f, &b, 0.0, &[64.0]).unwrap();
        assert!(
            errors[0] < 0.1,
            "time average of the drift should approach its pi-mean: {errors:?}"
        );
    }

    #[test]
    fn mollification_level_difference_is_reported() {
        let g = grid1(32);
        let f = build_drift(
            &DriftSpec::WhiteNoise {
                d: 1,
                seed: 11,
                regularity_target: -0.55,
            },
            &g,
        )
        .unwrap();
        let m = isotropic(2.0, 1);
        let mut cfg = config(&m, 1);
        cfg.paths = 400;
        cfg.dt = 5e-3;
        let cmp = compare_mollification_levels(&cfg, &f, 2).unwrap();
        assert_eq!(cmp.level, 2);
        assert!(cmp.rms_difference.is_finite() && cmp.rms_difference > 0.0);
        assert!(cmp.max_difference >= cmp.rms_difference);
    }

    #[test]
    fn clt_requires_minimum_paths() {
        let g = grid1(16);
        let sym = LevySymbol::new(&isotropic(2.0, 1), &g).unwrap();
        let f = VectorField::zeros(&g, 1);
        let (_, _, _, model) = pipeline(&f, &sym, -0.1);
        let mut cfg = config(&isotropic(2.0, 1), 1);
        cfg.paths = 200;
        let ens = simulate_paths(&cfg, &f).unwrap();
        let err = clt_statistics(&ens, &model, 1.0, &CltTolerances::default()).unwrap_err();
        assert!(err.to_string().contains("insufficient paths"));
    }

    #[test]
    fn regression_and_distance_utilities() {
        // exact power law recovers its exponent
        let pts: Vec<(f64, f64)> = [1.0f64, 2.0, 4.0, 8.0]
            .iter()
            .map(|&x| (x, 3.0 * x * x))
            .collect();
        assert!((log_log_slope(&pts).unwrap() - 2.0).abs() < 1e-12);
        assert!(log_log_slope(&pts[..1]).is_err());
        // energy distance separates shifted samples and vanishes on identity
        let a: Vec<f64> = (0..500).map(|i| (i as f64) / 500.0).collect();
        let shifted: Vec<f64> = a.iter().map(|x| x + 0.5).collect();
        assert!(energy_distance(&a, &a).abs() < 1e-12);
        assert!(energy_distance(&a, &shifted) > 0.1);
        // pairwise sums agree with plain summation
        let vals: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let plain: f64 = vals.iter().sum();
        assert!((pairwise_sum(&vals) - plain).abs() < 1e-9);
    }
}
