//! Configuration-driven experiment runner tying the solvers together:
//! drift construction → enhancement → invariant density → corrector →
//! effective model → spectral gap → Monte Carlo verification → multiscale
//! PDE comparison. Each run emits a JSON report embedding the full
//! configuration and a content hash, CSV tables, and binary field dumps; the
//! overall pass flag is the conjunction of all internal residual and
//! tolerance checks (the command-line wrapper maps it onto the exit code).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cell_problem::{
    effective_diffusivity, mean_under_pi, solve_poisson, spectral_gap_estimate, Corrector,
    EffectiveModel,
};
use crate::drift::{build_drift, enhance, DriftSpec, EnhancedDrift, Regime, TrigTerm};
use crate::error::{Error, Result};
use crate::fokker_planck::{advection_cfl, invariant_density, solve_backward_kolmogorov, InvariantDensity};
use crate::levy_generator::{LevySymbol, MeasureSpec, SphericalMeasure};
use crate::sde_mc::{
    clt_statistics, martingale_diagnostics, simulate_paths, CltReport, CltTolerances,
    MartingaleReport, PointEvaluator, SimConfig, TrajectoryEnsemble,
};
use crate::torus_spectral::{
    FieldData, Lp, Lq, PeriodicField, SpectralGrid, VectorField, TWO_PI,
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Which part of the pipeline to run. Later stages pull in the earlier ones
/// they depend on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subcommand {
    /// Build and enhance the drift.
    Enhance,
    /// ... and solve for the invariant density.
    Invariant,
    /// ... and solve the corrector equation.
    Corrector,
    /// ... and assemble the effective model (diffusivity or stable limit).
    Diffusivity,
    /// Fit the exponential relaxation rate of the dynamics.
    Gap,
    /// Monte Carlo central-limit verification against the effective model.
    Clt,
    /// Multiscale PDE comparison along an epsilon ladder.
    Pde,
    /// Everything.
    All,
}

impl FromStr for Subcommand {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "enhance" => Ok(Subcommand::Enhance),
            "invariant" => Ok(Subcommand::Invariant),
            "corrector" => Ok(Subcommand::Corrector),
            "diffusivity" => Ok(Subcommand::Diffusivity),
            "gap" => Ok(Subcommand::Gap),
            "clt" => Ok(Subcommand::Clt),
            "pde" => Ok(Subcommand::Pde),
            "all" => Ok(Subcommand::All),
            other => Err(Error::InvalidInput(format!(
                "unknown subcommand '{other}' (expected enhance, invariant, corrector, \
                 diffusivity, gap, clt, pde or all)"
            ))),
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Subcommand::Enhance => "enhance",
            Subcommand::Invariant => "invariant",
            Subcommand::Corrector => "corrector",
            Subcommand::Diffusivity => "diffusivity",
            Subcommand::Gap => "gap",
            Subcommand::Clt => "clt",
            Subcommand::Pde => "pde",
            Subcommand::All => "all",
        };
        write!(f, "{name}")
    }
}

/// Centralized tolerance block; every internal check reads from here and the
/// defaults are the contract.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Accepted fixed-point residual of the invariant-density solve.
    pub invariant_residual: f64,
    /// Accepted residual of the corrector (cell-problem) solve.
    pub corrector_residual: f64,
    /// |<F>_pi| above this refuses the PDE experiment (its hypothesis).
    pub drift_mean_zero: f64,
    /// Errors below this floor count as converged in trend checks (limit
    /// and multiscale solutions can agree to machine precision).
    pub trend_floor: f64,
    /// Pass bands of the Monte Carlo central-limit checks.
    pub clt: CltTolerances,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            invariant_residual: 1e-6,
            corrector_residual: 1e-6,
            drift_mean_zero: 1e-8,
            trend_floor: 1e-12,
            clt: CltTolerances::default(),
        }
    }
}

/// Monte Carlo stage sizes.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct McSettings {
    /// Number of paths M.
    pub paths: usize,
    /// Physical simulation horizon (n times the macroscopic horizon).
    pub horizon: f64,
    /// Euler step.
    pub dt: f64,
    /// Diffusive rescaling factor n.
    pub rescaling: f64,
    /// Start point (padded/truncated to the dimension).
    pub x0: Vec<f64>,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings {
            paths: 20_000,
            horizon: 16.0,
            dt: 4e-3,
            rescaling: 16.0,
            x0: vec![0.0; 3],
        }
    }
}

/// Multiscale PDE comparison settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PdeSettings {
    /// Comparison time t.
    pub time: f64,
    /// Inverse scales 1/epsilon (integers so the rescaled drift stays on a
    /// refined grid).
    pub epsilon_denominators: Vec<usize>,
    /// Minimum number of time steps of each backward solve (the advection
    /// stability bound may force more).
    pub min_steps: usize,
    /// Initial datum as a trigonometric polynomial; defaults to sin(2 pi x1).
    pub initial: Vec<TrigTerm>,
}

impl Default for PdeSettings {
    fn default() -> Self {
        PdeSettings {
            time: 0.5,
            epsilon_denominators: vec![2, 4, 8],
            min_steps: 64,
            initial: vec![TrigTerm {
                k: vec![1],
                cos: 0.0,
                sin: 1.0,
            }],
        }
    }
}

/// Full experiment description, loadable from JSON. Optional blocks fall
/// back to the documented defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Default subcommand when the caller does not name one.
    #[serde(default)]
    pub subcommand: Option<String>,
    /// Spatial dimension d.
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    /// Modes per axis N.
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    /// Stability index of the driving noise.
    pub alpha: f64,
    /// Drift regularity label; admissible range ((2-2alpha)/3, 0).
    pub beta: f64,
    /// Drift description.
    pub drift: DriftSpec,
    /// Spherical measure of the driver; defaults to the standard isotropic
    /// measure of the configured alpha.
    #[serde(default)]
    pub measure: Option<MeasureSpec>,
    /// Master seed of every stochastic stage.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mc: McSettings,
    #[serde(default)]
    pub pde: PdeSettings,
    /// Output directory of `run_and_write`.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_dimension() -> usize {
    1
}

fn default_grid_size() -> usize {
    64
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Remainder regularity derived from (alpha, beta).
    pub fn gamma(&self) -> f64 {
        2.0 * self.beta + self.alpha - 1.0
    }

    /// Admissibility of (alpha, beta) plus structural checks. Violations of
    /// the admissible region name the violated inequality.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0 && self.alpha <= 2.0) {
            return Err(Error::Inadmissible(format!(
                "alpha = {} violates alpha in (1, 2]",
                self.alpha
            )));
        }
        let lower = (2.0 - 2.0 * self.alpha) / 3.0;
        if self.beta <= lower {
            return Err(Error::Inadmissible(format!(
                "beta = {} violates beta > (2-2*alpha)/3 = {lower} (beta <= (2-2*alpha)/3)",
                self.beta
            )));
        }
        if self.beta >= 0.0 {
            return Err(Error::Inadmissible(format!(
                "beta = {} violates beta < 0",
                self.beta
            )));
        }
        if !(1..=3).contains(&self.dimension) {
            return Err(Error::BadDimension(self.dimension));
        }
        if self.drift.d() != self.dimension {
            return Err(Error::InvalidInput(format!(
                "drift dimension {} does not match the configured dimension {}",
                self.drift.d(),
                self.dimension
            )));
        }
        if let Some(spec) = &self.measure {
            if spec.alpha != self.alpha {
                return Err(Error::InvalidInput(format!(
                    "measure alpha {} does not match the configured alpha {}",
                    spec.alpha, self.alpha
                )));
            }
        }
        for &q in &self.pde.epsilon_denominators {
            if q < 2 {
                return Err(Error::InvalidInput(format!(
                    "epsilon denominator {q} must be at least 2"
                )));
            }
        }
        Ok(())
    }

    /// The driving measure: configured or standard isotropic.
    pub fn spherical_measure(&self) -> Result<SphericalMeasure> {
        match &self.measure {
            Some(spec) => SphericalMeasure::from_spec(spec),
            None => SphericalMeasure::standard_isotropic(self.alpha, self.dimension),
        }
    }

    /// SHA-256 over the canonical JSON serialization; identifies the inputs
    /// of a run in its report.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        format!("sha256:{:x}", hasher.finalize())
    }
}

// ---------------------------------------------------------------------------
// Report types
// ---------------------------------------------------------------------------

/// One named tolerance check; the run passes iff all of them do.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl CheckResult {
    fn upper(name: &str, value: f64, threshold: f64) -> Self {
        CheckResult {
            name: name.into(),
            value,
            threshold,
            pass: value.is_finite() && value <= threshold,
        }
    }

    fn lower(name: &str, value: f64, threshold: f64) -> Self {
        CheckResult {
            name: name.into(),
            value,
            threshold,
            pass: value.is_finite() && value > threshold,
        }
    }

    fn flag(name: &str, pass: bool) -> Self {
        CheckResult {
            name: name.into(),
            value: if pass { 1.0 } else { 0.0 },
            threshold: 1.0,
            pass,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnhanceReport {
    pub regime: Regime,
    pub beta: f64,
    pub gamma: f64,
    /// Besov norm of each mollification rung.
    pub ladder: Vec<(usize, f64)>,
    /// Largest enhancement Besov norm at the remainder index.
    pub enhancement_norm: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InvariantReport {
    pub residual: f64,
    pub iterations: usize,
    pub min_value: f64,
    pub argmin: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrectorReport {
    pub residual: f64,
    pub lambda_used: f64,
    pub outer_iterations: usize,
    pub chi_l2: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiffusivityReport {
    pub alpha: f64,
    /// Row-major effective diffusivity (Gaussian regime only).
    pub diffusivity: Option<Vec<Vec<f64>>>,
    pub mean_f: Vec<f64>,
    pub limit_measure: MeasureSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapReport {
    pub rate: f64,
    pub horizon_used: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CltStage {
    pub sim: SimConfig,
    pub report: CltReport,
    pub martingale: Option<MartingaleReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PdeRow {
    pub epsilon: f64,
    pub max_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PdeReport {
    pub time: f64,
    pub mean_f_abs: f64,
    /// Probe points (kept off the collocation lattice).
    pub probes: Vec<Vec<f64>>,
    pub rows: Vec<PdeRow>,
    /// Errors strictly decrease along the ladder (or everything already sits
    /// at the convergence floor).
    pub decreasing: bool,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StageReports {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enhance: Option<EnhanceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invariant: Option<InvariantReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrector: Option<CorrectorReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffusivity: Option<DiffusivityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<GapReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clt: Option<CltStage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pde: Option<PdeReport>,
}

/// Everything `run_and_write` persists as report.json.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineReport {
    pub subcommand: Subcommand,
    pub content_hash: String,
    pub config: ExperimentConfig,
    pub stages: StageReports,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
}

impl PipelineReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Computed objects a run leaves behind for file dumps and downstream use.
pub struct ExperimentOutput {
    pub report: PipelineReport,
    pub drift_field: VectorField,
    pub invariant: Option<InvariantDensity>,
    pub corrector: Option<Corrector>,
    pub model: Option<EffectiveModel>,
    pub ensemble: Option<TrajectoryEnsemble>,
}

fn stage_err(stage: &str, e: Error) -> Error {
    Error::InvalidInput(format!("stage {stage}: {e}"))
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// Run the requested part of the pipeline. Pure computation; see
/// [`run_and_write`] for the filesystem side.
pub fn run_experiment(sub: Subcommand, cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let need_invariant = !matches!(sub, Subcommand::Enhance);
    let need_corrector = matches!(
        sub,
        Subcommand::Corrector | Subcommand::Diffusivity | Subcommand::Clt | Subcommand::Pde | Subcommand::All
    );
    let need_model = matches!(
        sub,
        Subcommand::Diffusivity | Subcommand::Clt | Subcommand::Pde | Subcommand::All
    );
    let need_gap = matches!(sub, Subcommand::Gap | Subcommand::All);
    let need_clt = matches!(sub, Subcommand::Clt | Subcommand::All);
    let need_pde = matches!(sub, Subcommand::Pde | Subcommand::All);

    let mut stages = StageReports::default();
    let mut checks: Vec<CheckResult> = Vec::new();
    let tol = &cfg.tolerances;

    // enhance
    let grid = SpectralGrid::new(cfg.dimension, cfg.grid_size)?;
    let measure = cfg.spherical_measure()?;
    let sym = LevySymbol::new(&measure, &grid).map_err(|e| stage_err("enhance", e))?;
    let f = build_drift(&cfg.drift, &grid).map_err(|e| stage_err("enhance", e))?;
    let drift =
        enhance(&f, &sym, cfg.beta, cfg.gamma()).map_err(|e| stage_err("enhance", e))?;
    stages.enhance = Some(EnhanceReport {
        regime: drift.regime(),
        beta: drift.beta(),
        gamma: drift.gamma(),
        ladder: (0..drift.ladder_len())
            .map(|m| (m, drift.ladder(m).comps()[0].besov_norm(cfg.beta, Lp::Inf, Lq::Inf)))
            .collect(),
        enhancement_norm: drift.enhancement_norm(cfg.gamma(), Lp::Inf, Lq::Inf),
    });

    // invariant density
    let mut invariant = None;
    if need_invariant {
        let inv = invariant_density(&drift, &sym).map_err(|e| stage_err("invariant", e))?;
        checks.push(CheckResult::upper(
            "invariant_residual",
            inv.residual(),
            tol.invariant_residual,
        ));
        checks.push(CheckResult::lower("invariant_min", inv.min_value(), 0.0));
        stages.invariant = Some(InvariantReport {
            residual: inv.residual(),
            iterations: inv.iterations(),
            min_value: inv.min_value(),
            argmin: inv.argmin().to_vec(),
        });
        invariant = Some(inv);
    }

    // corrector
    let mut corrector = None;
    if need_corrector {
        let inv = invariant.as_ref().expect("invariant precedes corrector");
        let chi = solve_poisson(&drift, &sym, inv).map_err(|e| stage_err("corrector", e))?;
        checks.push(CheckResult::upper(
            "corrector_residual",
            chi.residual_norm(),
            tol.corrector_residual,
        ));
        stages.corrector = Some(CorrectorReport {
            residual: chi.residual_norm(),
            lambda_used: chi.lambda_used(),
            outer_iterations: chi.outer_iterations(),
            chi_l2: chi.chi().comps().iter().map(|c| c.l2_norm()).collect(),
        });
        corrector = Some(chi);
    }

    // effective model
    let mut model = None;
    if need_model {
        let inv = invariant.as_ref().expect("invariant precedes the model");
        let chi = corrector.as_ref().expect("corrector precedes the model");
        let m =
            effective_diffusivity(chi, inv, &sym).map_err(|e| stage_err("diffusivity", e))?;
        stages.diffusivity = Some(DiffusivityReport {
            alpha: m.alpha(),
            diffusivity: m.diffusivity().cloned(),
            mean_f: m.mean_f().to_vec(),
            limit_measure: m.limit_measure().clone(),
        });
        if let Some(d) = m.diffusivity() {
            let min_diag = (0..cfg.dimension)
                .map(|i| d[i][i])
                .fold(f64::INFINITY, f64::min);
            checks.push(CheckResult::lower("diffusivity_positive", min_diag, 0.0));
        }
        model = Some(m);
    }

    // spectral gap
    if need_gap {
        let (rate, horizon_used) =
            gap_with_adaptive_horizon(&drift, &sym).map_err(|e| stage_err("gap", e))?;
        checks.push(CheckResult::lower("gap_positive", rate, 0.0));
        stages.gap = Some(GapReport { rate, horizon_used });
        if let Some(m) = model.as_mut() {
            m.set_gap_rate(rate);
        }
    }

    // Monte Carlo central-limit verification
    let mut ensemble = None;
    if need_clt {
        let m = model.as_ref().expect("model precedes the CLT stage");
        let chi = corrector.as_ref().expect("corrector precedes the CLT stage");
        let sim = sim_config(cfg, &measure);
        sim.validate().map_err(|e| stage_err("clt", e))?;
        let ens = simulate_paths(&sim, &f).map_err(|e| stage_err("clt", e))?;
        let report = clt_statistics(&ens, m, cfg.mc.rescaling, &tol.clt)
            .map_err(|e| stage_err("clt", e))?;
        checks.push(CheckResult::flag("clt_pass", report.pass));
        let martingale = match martingale_diagnostics(&ens, chi, m) {
            Ok(mr) => {
                checks.push(CheckResult::flag(
                    "martingale_mean_and_autocorr",
                    mr.mean_pass && mr.autocorr_pass,
                ));
                Some(mr)
            }
            Err(_) => None,
        };
        stages.clt = Some(CltStage {
            sim,
            report,
            martingale,
        });
        ensemble = Some(ens);
    }

    // multiscale PDE comparison
    if need_pde {
        let m = model.as_ref().expect("model precedes the PDE stage");
        let inv = invariant.as_ref().expect("invariant precedes the PDE stage");
        let pde = pde_homogenization_experiment(cfg, &f, &drift, inv, m)
            .map_err(|e| stage_err("pde", e))?;
        checks.push(CheckResult::flag("pde_errors_decreasing", pde.decreasing));
        stages.pde = Some(pde);
    }

    let pass = checks.iter().all(|c| c.pass);
    Ok(ExperimentOutput {
        report: PipelineReport {
            subcommand: sub,
            content_hash: cfg.content_hash(),
            config: cfg.clone(),
            stages,
            checks,
            pass,
        },
        drift_field: f,
        invariant,
        corrector,
        model,
        ensemble,
    })
}

fn sim_config(cfg: &ExperimentConfig, measure: &SphericalMeasure) -> SimConfig {
    let mut x0 = cfg.mc.x0.clone();
    x0.resize(cfg.dimension, 0.0);
    SimConfig {
        level: None,
        x0,
        horizon: cfg.mc.horizon,
        dt: cfg.mc.dt,
        paths: cfg.mc.paths,
        master_seed: cfg.seed,
        measure: measure.to_spec(),
    }
}

/// Deterministic probes (the first cosine and sine mode of each axis) and a
/// horizon ladder: the fit needs its decay window inside the horizon, and
/// the relaxation rate of the drifted dynamics may sit well below the free
/// lattice gap, so the horizon grows until the fit succeeds.
fn gap_with_adaptive_horizon(
    drift: &EnhancedDrift,
    sym: &LevySymbol,
) -> Result<(f64, f64)> {
    let grid = sym.grid();
    let mut probes = Vec::new();
    for a in 0..grid.d() {
        let mut k = vec![0i64; grid.d()];
        k[a] = 1;
        probes.push(PeriodicField::trig_mode(grid, &k, 1.0, 0.0));
        probes.push(PeriodicField::trig_mode(grid, &k, 0.0, 1.0));
    }
    let mut horizon = 22.0 / sym.lattice_gap();
    let mut last = None;
    for _ in 0..4 {
        match spectral_gap_estimate(drift, sym, &probes, horizon) {
            Ok(rate) => return Ok((rate, horizon)),
            Err(e) => {
                last = Some(e);
                horizon *= 4.0;
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

// ---------------------------------------------------------------------------
// Multiscale PDE experiment
// ---------------------------------------------------------------------------

/// Compare u^eps, the backward evolution under the generator with drift
/// eps^{1-alpha} F(x/eps), against the constant-coefficient limit evolution
/// (multiplier (2 pi)^2 z.Dz/2 in the Gaussian regime, psi_nu(z) in the
/// stable one) at `cfg.pde.time`, reporting the max error over 8 fixed
/// off-lattice probe points per epsilon. Requires <F>_pi = 0, the
/// hypothesis under which the limit holds.
pub fn pde_homogenization_experiment(
    cfg: &ExperimentConfig,
    f: &VectorField,
    drift: &EnhancedDrift,
    inv: &InvariantDensity,
    model: &EffectiveModel,
) -> Result<PdeReport> {
    let d = cfg.dimension;
    let t = cfg.pde.time;
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidInput(format!(
            "comparison time {t} must be positive"
        )));
    }
    let mean = mean_under_pi(drift, inv)?;
    let mean_f_abs = mean.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if mean_f_abs > cfg.tolerances.drift_mean_zero {
        return Err(Error::Inadmissible(format!(
            "the drift mean under the invariant measure is {mean_f_abs:.3e}, but the \
             constant-coefficient limit requires <F>_pi = 0; recenter the drift first"
        )));
    }

    // probe points, offset from every dyadic collocation lattice
    let probes: Vec<Vec<f64>> = (0..8)
        .map(|j| {
            (0..d)
                .map(|a| ((j as f64 + 0.5) / 8.0 + 0.0173 * (a as f64 + 1.0)).rem_euclid(1.0))
                .collect()
        })
        .collect();

    // limit solution: initial modes decayed by the limit multiplier
    let base_grid = f.grid();
    let initial = trig_polynomial(base_grid, &cfg.pde.initial)?;
    let limit_multiplier = limit_multiplier(model)?;
    let u_bar = initial.apply_multiplier(|idx| {
        let z: Vec<f64> = base_grid.freq(idx).iter().map(|&k| k as f64).collect();
        (-t * limit_multiplier(&z)).exp()
    });
    let bar_eval = PointEvaluator::for_scalar(&u_bar)?;
    let bar_values: Vec<f64> = probes.iter().map(|x| bar_eval.eval(x)[0]).collect();

    let measure = cfg.spherical_measure()?;
    let mut rows = Vec::new();
    for &q in &cfg.pde.epsilon_denominators {
        let eps = 1.0 / q as f64;
        let fine_grid = SpectralGrid::new(d, cfg.grid_size * q)?;
        let f_eps = rescale_drift(f, &fine_grid, q, eps.powf(1.0 - cfg.alpha))?;
        let sym_eps = LevySymbol::new(&measure, &fine_grid)?;
        let drift_eps = enhance(&f_eps, &sym_eps, cfg.beta, cfg.gamma())?;
        let initial_eps = trig_polynomial(&fine_grid, &cfg.pde.initial)?;
        let steps = ((t / advection_cfl(&drift_eps)).ceil() as usize)
            .clamp(cfg.pde.min_steps.max(16), 2_000_000);
        let path = solve_backward_kolmogorov(&drift_eps, &sym_eps, &initial_eps, t, steps)?;
        let u_eps = path.endpoint().value();
        let eps_eval = PointEvaluator::for_scalar(u_eps)?;
        let max_error = probes
            .iter()
            .zip(&bar_values)
            .map(|(x, ub)| (eps_eval.eval(x)[0] - ub).abs())
            .fold(0.0f64, f64::max);
        rows.push(PdeRow { epsilon: eps, max_error });
    }

    let floor = cfg.tolerances.trend_floor;
    let decreasing = rows
        .windows(2)
        .all(|w| w[1].max_error < w[0].max_error || w[1].max_error <= floor);
    Ok(PdeReport {
        time: t,
        mean_f_abs,
        probes,
        rows,
        decreasing,
    })
}

/// Symbol of the limit generator evaluated at integer frequencies.
type LimitMultiplier = Box<dyn Fn(&[f64]) -> f64>;

/// The Fourier multiplier of the limit evolution d/dt u = -A u.
fn limit_multiplier(model: &EffectiveModel) -> Result<LimitMultiplier> {
    if let Some(dmat) = model.diffusivity() {
        let dmat = dmat.clone();
        Ok(Box::new(move |z: &[f64]| {
            let mut quad = 0.0;
            for (i, row) in dmat.iter().enumerate() {
                for (j, dij) in row.iter().enumerate() {
                    quad += z[i] * dij * z[j];
                }
            }
            0.5 * TWO_PI * TWO_PI * quad
        }))
    } else {
        let limit = SphericalMeasure::from_spec(model.limit_measure())?;
        Ok(Box::new(move |z: &[f64]| limit.symbol(z)))
    }
}

/// Build a real field from trigonometric terms on the given grid.
fn trig_polynomial(grid: &SpectralGrid, terms: &[TrigTerm]) -> Result<PeriodicField> {
    if terms.is_empty() {
        return Err(Error::InvalidInput(
            "the initial datum needs at least one trigonometric term".into(),
        ));
    }
    let mut out = PeriodicField::zeros(grid);
    for term in terms {
        if term.k.len() != grid.d() {
            return Err(Error::BadDimension(term.k.len()));
        }
        out = out.add(&PeriodicField::trig_mode(grid, &term.k, term.cos, term.sin));
    }
    Ok(out)
}

/// F_eps(x) = scale * F(x/eps) on the q-fold refined grid: the mode k of F
/// becomes the mode q*k of F_eps.
fn rescale_drift(
    f: &VectorField,
    fine_grid: &SpectralGrid,
    q: usize,
    scale: f64,
) -> Result<VectorField> {
    let base = f.grid();
    let mut comps = Vec::with_capacity(f.ncomp());
    for comp in f.comps() {
        let mut coeffs = vec![num_complex::Complex64::new(0.0, 0.0); fine_grid.len()];
        for idx in 0..base.len() {
            let c = comp.coeffs()[idx];
            if c == num_complex::Complex64::new(0.0, 0.0) {
                continue;
            }
            let scaled: Vec<i64> = base.freq(idx).iter().map(|&k| k * q as i64).collect();
            let target = fine_grid.index_of_freq(&scaled);
            coeffs[target] = c * scale;
        }
        comps.push(PeriodicField::from_coeffs(fine_grid, coeffs, true)?);
    }
    VectorField::new(comps)
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

/// Run the pipeline and persist report.json, tables/*.csv and fields/*.bin
/// under `out` (single writer; directories are created).
pub fn run_and_write(
    sub: Subcommand,
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<PipelineReport> {
    let output = run_experiment(sub, cfg)?;
    write_outputs(&output, out)?;
    Ok(output.report)
}

fn write_outputs(output: &ExperimentOutput, out: &Path) -> Result<()> {
    let tables = out.join("tables");
    let fields = out.join("fields");
    fs::create_dir_all(&tables)?;
    fs::create_dir_all(&fields)?;
    fs::write(out.join("report.json"), output.report.to_json()?)?;

    let report = &output.report;
    let mut checks_csv = String::from("name,value,threshold,pass\n");
    for c in &report.checks {
        checks_csv.push_str(&format!("{},{},{},{}\n", c.name, c.value, c.threshold, c.pass));
    }
    fs::write(tables.join("checks.csv"), checks_csv)?;

    if let Some(e) = &report.stages.enhance {
        let mut csv = String::from("level,besov_norm\n");
        for (m, norm) in &e.ladder {
            csv.push_str(&format!("{m},{norm}\n"));
        }
        fs::write(tables.join("ladder.csv"), csv)?;
    }
    FieldData::from_vector(&output.drift_field).write_binary(&fields.join("drift.bin"))?;

    if let Some(inv) = &output.invariant {
        FieldData::from_scalar(inv.rho()).write_binary(&fields.join("invariant_density.bin"))?;
        if inv.rho().grid().d() == 1 {
            let n = inv.rho().grid().n();
            let values = inv.rho().real_values();
            let mut csv = String::from("x,rho\n");
            for (i, v) in values.iter().enumerate() {
                csv.push_str(&format!("{},{v}\n", i as f64 / n as f64));
            }
            fs::write(tables.join("invariant_density.csv"), csv)?;
        }
    }

    if let Some(chi) = &output.corrector {
        FieldData::from_vector(chi.chi()).write_binary(&fields.join("corrector.bin"))?;
        if chi.chi().grid().d() == 1 {
            let n = chi.chi().grid().n();
            let values = chi.chi().comps()[0].real_values();
            let slope = chi.chi().comps()[0].derivative(0).real_values();
            let mut csv = String::from("x,chi,one_plus_dchi\n");
            for i in 0..n {
                csv.push_str(&format!(
                    "{},{},{}\n",
                    i as f64 / n as f64,
                    values[i],
                    1.0 + slope[i]
                ));
            }
            fs::write(tables.join("corrector.csv"), csv)?;
        }
    }

    if let Some(stage) = &report.stages.clt {
        let mut csv = String::from("t,entry,statistic,reference,std_error,pass\n");
        for check in &stage.report.checks {
            for (e, ((s, r), se)) in check
                .statistic
                .iter()
                .zip(&check.reference)
                .zip(&check.std_error)
                .enumerate()
            {
                csv.push_str(&format!(
                    "{},{e},{s},{r},{se},{}\n",
                    check.t, check.pass
                ));
            }
        }
        fs::write(tables.join("clt.csv"), csv)?;
    }
    if let Some(ens) = &output.ensemble {
        ens.write_binary(&fields.join("ensemble.bin"))?;
    }

    if let Some(pde) = &report.stages.pde {
        let mut csv = String::from("epsilon,max_error\n");
        for row in &pde.rows {
            csv.push_str(&format!("{},{}\n", row.epsilon, row.max_error));
        }
        fs::write(tables.join("pde.csv"), csv)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
