//! Drift construction and enhancement.
//!
//! Drifts come from explicit Fourier data (trig terms per component), from a
//! scalar potential (F = grad f, exact on the lattice), or from sampled
//! periodic white noise. White-noise coefficients are drawn per mode from a
//! counter-mode stream keyed by (component, k), so realizations on different
//! grids share their common modes; refinement comparisons of the enhancement
//! are then couplings of the same noise rather than independent draws.
//!
//! The mollifier is the Littlewood-Paley partial sum: F^m = S_{m+1} F keeps
//! blocks -1..m and is idempotent and exactly representable; F^{j_max} = F.
//!
//! The enhancement stores the time-integrated resonant family
//! E_{i,j,k} = I(d_i F^j) resonant F^k with I the steady integral of the
//! semigroup. It is finite at every truncation; whether it is *needed*
//! depends on the regime: for beta in ((1-alpha)/2, 0) (young) the drift is
//! mild enough for direct products, for beta in ((2-2alpha)/3, (1-alpha)/2]
//! (rough) the resonant family is part of the data.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy_generator::LevySymbol;
use crate::paracalc::resonant;
use crate::torus_spectral::{PeriodicField, SpectralGrid, VectorField};

/// One trigonometric term: cos * cos(2 pi k.x) + sin * sin(2 pi k.x).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrigTerm {
    pub k: Vec<i64>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// Declarative drift description, serializable as JSON with a `kind` tag.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftSpec {
    /// Explicit trig terms per component; `components.len()` must equal d.
    FourierList {
        d: usize,
        components: Vec<Vec<TrigTerm>>,
    },
    /// F = grad f for the scalar potential f given by trig terms.
    GradientOf { d: usize, potential: Vec<TrigTerm> },
    /// Sampled periodic white noise: independent complex Gaussian modes of
    /// unit variance (Hermitian-paired), deterministic in (seed, d, k).
    WhiteNoise {
        d: usize,
        seed: u64,
        regularity_target: f64,
    },
}

impl DriftSpec {
    pub fn d(&self) -> usize {
        match self {
            DriftSpec::FourierList { d, .. }
            | DriftSpec::GradientOf { d, .. }
            | DriftSpec::WhiteNoise { d, .. } => *d,
        }
    }
}

fn trig_field(grid: &SpectralGrid, terms: &[TrigTerm]) -> Result<PeriodicField> {
    let half = grid.n() as i64 / 2;
    let mut f = PeriodicField::zeros(grid);
    for term in terms {
        if term.k.len() != grid.d() {
            return Err(Error::InvalidInput(format!(
                "mode {:?} has wrong dimension (d = {})",
                term.k,
                grid.d()
            )));
        }
        // symmetric band: |k_i| <= N/2 - 1, so every mode has its conjugate
        if term.k.iter().any(|&c| c.abs() >= half) {
            return Err(Error::InvalidInput(format!(
                "mode {:?} outside the symmetric band |k_i| <= {} at N = {}",
                term.k,
                half - 1,
                grid.n()
            )));
        }
        f = f.add(&PeriodicField::trig_mode(grid, &term.k, term.cos, term.sin));
    }
    Ok(f)
}

/// Map a (component, mode) pair to a stream id that does not depend on the
/// grid size, so coarse and fine realizations agree on shared modes.
fn mode_stream(component: usize, k: &[i64; 3]) -> u64 {
    debug_assert!(component < 4);
    let mut key = component as u64;
    for &c in k {
        debug_assert!((-1024..1024).contains(&c));
        key = (key << 11) | ((c + 1024) as u64);
    }
    key
}

fn white_noise_field(grid: &SpectralGrid, seed: u64, component: usize) -> Result<PeriodicField> {
    if grid.n() > 1024 {
        return Err(Error::InvalidInput(format!(
            "white-noise drifts support N <= 1024, got {}",
            grid.n()
        )));
    }
    let master = ChaCha12Rng::seed_from_u64(seed);
    let half = grid.n() as i64 / 2;
    let mut f = PeriodicField::zeros(grid);
    let sigma = 0.5f64.sqrt();
    for idx in 0..grid.len() {
        let mut k = [0i64; 3];
        k[..grid.d()].copy_from_slice(grid.freq(idx));
        // Nyquist planes stay empty (symmetric-band convention).
        if k.iter().any(|&c| c == -half) {
            continue;
        }
        // draw only at the representative of each +-k pair
        let rep = k.iter().find(|&&c| c != 0).is_none_or(|&c| c > 0);
        if !rep {
            continue;
        }
        let mut rng = master.clone();
        rng.set_stream(mode_stream(component, &k));
        rng.set_word_pos(0);
        if idx == 0 {
            let v: f64 = rng.sample(StandardNormal);
            f.coeffs_mut()[idx] = Complex64::new(v, 0.0);
        } else {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let value = Complex64::new(sigma * re, sigma * im);
            f.coeffs_mut()[idx] = value;
            let mirror: Vec<i64> = k[..grid.d()].iter().map(|&c| -c).collect();
            f.set_coeff(&mirror, value.conj());
        }
    }
    Ok(f)
}

/// Realize a drift spec on a grid as a real vector field.
pub fn build_drift(spec: &DriftSpec, grid: &SpectralGrid) -> Result<VectorField> {
    if spec.d() != grid.d() {
        return Err(Error::GridMismatch(format!(
            "drift spec dimension {} vs grid dimension {}",
            spec.d(),
            grid.d()
        )));
    }
    let comps = match spec {
        DriftSpec::FourierList { d, components } => {
            if components.len() != *d {
                return Err(Error::InvalidInput(format!(
                    "fourier_list needs {} components, got {}",
                    d,
                    components.len()
                )));
            }
            components
                .iter()
                .map(|terms| trig_field(grid, terms))
                .collect::<Result<Vec<_>>>()?
        }
        DriftSpec::GradientOf { d, potential } => {
            let f = trig_field(grid, potential)?;
            (0..*d).map(|axis| f.derivative(axis)).collect()
        }
        DriftSpec::WhiteNoise { d, seed, .. } => (0..*d)
            .map(|c| white_noise_field(grid, *seed, c))
            .collect::<Result<Vec<_>>>()?,
    };
    let mut comps = comps;
    for c in &mut comps {
        c.enforce_hermitian()?;
    }
    VectorField::new(comps)
}

/// F^m = S_{m+1} F: Littlewood-Paley blocks -1..m kept. m = j_max leaves F
/// unchanged.
pub fn mollify(f: &VectorField, m: i32) -> Result<VectorField> {
    let j_max = f.grid().j_max();
    if m < 0 || m > j_max {
        return Err(Error::InvalidInput(format!(
            "mollification level {m} outside 0..={j_max}"
        )));
    }
    let comps = f.comps().iter().map(|c| c.partial_sum(m + 1)).collect();
    VectorField::new(comps)
}

/// Regularity regime of the pair (alpha, beta).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// beta in ((1-alpha)/2, 0): products with the drift converge directly.
    Young,
    /// beta in ((2-2alpha)/3, (1-alpha)/2]: the resonant enhancement is data.
    Rough,
}

/// Classify (alpha, beta), rejecting inadmissible pairs with the violated
/// inequality spelled out.
pub fn classify_regime(alpha: f64, beta: f64) -> Result<Regime> {
    if !(alpha > 1.0 && alpha <= 2.0) {
        return Err(Error::Inadmissible(format!(
            "alpha = {alpha} outside (1, 2]"
        )));
    }
    if beta >= 0.0 {
        return Err(Error::Inadmissible(format!(
            "beta = {beta} >= 0: drift regularity must be negative"
        )));
    }
    let young_floor = (1.0 - alpha) / 2.0;
    let rough_floor = (2.0 - 2.0 * alpha) / 3.0;
    if beta > young_floor {
        Ok(Regime::Young)
    } else if beta > rough_floor {
        Ok(Regime::Rough)
    } else {
        Err(Error::Inadmissible(format!(
            "beta = {beta} <= (2 - 2 alpha)/3 = {rough_floor}: below the rough window"
        )))
    }
}

/// A drift together with its mollification ladder and time-integrated
/// resonant enhancement.
#[derive(Clone, Debug)]
pub struct EnhancedDrift {
    f: VectorField,
    alpha: f64,
    beta: f64,
    gamma: f64,
    regime: Regime,
    /// ladder[m] = S_{m+1} F for m = 0..=j_max; last entry equals F.
    ladder: Vec<VectorField>,
    /// E_{i,j,k} flattened as ((i * d) + j) * d + k.
    enhancement: Vec<PeriodicField>,
}

/// Canonical lift: compute the ladder and the resonant family
/// E_{i,j,k} = I(d_i F^j) resonant F^k (I = steady integral of the
/// semigroup; the derivative kills the zero mode, so I is well defined).
pub fn enhance(f: &VectorField, sym: &LevySymbol, beta: f64, gamma: f64) -> Result<EnhancedDrift> {
    sym.grid().same_grid(f.grid())?;
    let alpha = sym.alpha();
    let regime = classify_regime(alpha, beta)?;
    let lift_regularity = 2.0 * beta + alpha - 1.0;
    if gamma > lift_regularity + 1e-12 {
        return Err(Error::Inadmissible(format!(
            "gamma = {gamma} > 2 beta + alpha - 1 = {lift_regularity}: \
             enhancement regularity not attainable by the canonical lift"
        )));
    }
    let d = f.grid().d();
    let j_max = f.grid().j_max();
    let ladder = (0..=j_max)
        .map(|m| mollify(f, m))
        .collect::<Result<Vec<_>>>()?;
    let mut enhancement = Vec::with_capacity(d * d * d);
    for i in 0..d {
        for j in 0..d {
            let integrated = sym.steady_integral(&f.comps()[j].derivative(i))?;
            for k in 0..d {
                enhancement.push(resonant(&integrated, &f.comps()[k])?);
            }
        }
    }
    Ok(EnhancedDrift {
        f: f.clone(),
        alpha,
        beta,
        gamma,
        regime,
        ladder,
        enhancement,
    })
}

impl EnhancedDrift {
    pub fn drift(&self) -> &VectorField {
        &self.f
    }

    pub fn grid(&self) -> &SpectralGrid {
        self.f.grid()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    /// Mollified drift F^m = S_{m+1} F.
    pub fn ladder(&self, m: usize) -> &VectorField {
        &self.ladder[m]
    }

    pub fn ladder_len(&self) -> usize {
        self.ladder.len()
    }

    /// E_{i,j,k} = I(d_i F^j) resonant F^k.
    pub fn enhancement(&self, i: usize, j: usize, k: usize) -> &PeriodicField {
        let d = self.f.grid().d();
        &self.enhancement[(i * d + j) * d + k]
    }

    /// Largest Besov norm over the enhancement family at index theta.
    pub fn enhancement_norm(
        &self,
        theta: f64,
        p: crate::torus_spectral::Lp,
        q: crate::torus_spectral::Lq,
    ) -> f64 {
        self.enhancement
            .iter()
            .map(|e| e.besov_norm(theta, p, q))
            .fold(0.0, f64::max)
    }
}
