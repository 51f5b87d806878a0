use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use super::fft;
use super::grid::{block_profile, SpectralGrid};
use crate::error::{Error, Result};

/// Tolerance on the Hermitian-symmetry drift of real fields, relative to the
/// largest coefficient modulus (floored at 1).
pub const HERMITIAN_TOL: f64 = 1e-10;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// L^p exponent for block norms (collocation quadrature for p = 1, infinity;
/// Parseval for p = 2).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lp {
    One,
    Two,
    Inf,
}

/// l^q exponent over the dyadic block index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lq {
    Two,
    Inf,
}

/// Which homogeneous (semi-)norm square to evaluate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HomogeneousKind {
    /// sum over k != 0 of |k|^{2s} |u^(k)|^2.
    Sobolev,
    /// Difference-quadrature square int |h|^{-2s} ||u(. + h) - u||_2^2 dh/|h|^d,
    /// s in (0, 1]; s = 1 delegates to Sobolev.
    Besov22,
}

/// Scalar trigonometric polynomial on T^d stored by its full complex
/// coefficient array in FFT order. Real-valued fields keep `real = true` and
/// maintain Hermitian symmetry; nonlinear operations re-enforce it and treat
/// drift beyond HERMITIAN_TOL as an internal error.
#[derive(Clone, Debug)]
pub struct PeriodicField {
    grid: SpectralGrid,
    coeffs: Vec<Complex64>,
    real: bool,
}

impl PeriodicField {
    pub fn zeros(grid: &SpectralGrid) -> Self {
        PeriodicField {
            grid: grid.clone(),
            coeffs: vec![Complex64::default(); grid.len()],
            real: true,
        }
    }

    pub fn constant(grid: &SpectralGrid, value: f64) -> Self {
        let mut f = Self::zeros(grid);
        f.coeffs[0] = Complex64::new(value, 0.0);
        f
    }

    pub fn from_coeffs(grid: &SpectralGrid, coeffs: Vec<Complex64>, real: bool) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "coefficient array length {} != lattice size {}",
                coeffs.len(),
                grid.len()
            )));
        }
        let mut f = PeriodicField {
            grid: grid.clone(),
            coeffs,
            real,
        };
        if real {
            f.enforce_hermitian()?;
        }
        Ok(f)
    }

    /// Field from complex collocation values (row-major over the lattice).
    pub fn from_values(grid: &SpectralGrid, mut values: Vec<Complex64>, real: bool) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "value array length {} != lattice size {}",
                values.len(),
                grid.len()
            )));
        }
        fft::values_to_coeffs(&mut values, grid.d(), grid.n());
        Self::from_coeffs(grid, values, real)
    }

    pub fn from_real_values(grid: &SpectralGrid, values: &[f64]) -> Result<Self> {
        let complex: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        Self::from_values(grid, complex, true)
    }

    /// Real field a cos(2 pi k.x) + b sin(2 pi k.x).
    pub fn trig_mode(grid: &SpectralGrid, k: &[i64], cos_amp: f64, sin_amp: f64) -> Self {
        let mut f = Self::zeros(grid);
        if k.iter().all(|&c| c == 0) {
            f.coeffs[0] = Complex64::new(cos_amp, 0.0);
            return f;
        }
        let half = Complex64::new(cos_amp / 2.0, -sin_amp / 2.0);
        let plus = grid.index_of_freq(k);
        let minus: Vec<i64> = k.iter().map(|&c| -c).collect();
        let minus = grid.index_of_freq(&minus);
        f.coeffs[plus] += half;
        f.coeffs[minus] += half.conj();
        f
    }

    /// Complex exponential e^{2 pi i k.x}.
    pub fn complex_mode(grid: &SpectralGrid, k: &[i64]) -> Self {
        let mut f = Self::zeros(grid);
        f.coeffs[grid.index_of_freq(k)] = Complex64::new(1.0, 0.0);
        f.real = k.iter().all(|&c| c == 0);
        f
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn is_real(&self) -> bool {
        self.real
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn coeff(&self, k: &[i64]) -> Complex64 {
        self.coeffs[self.grid.index_of_freq(k)]
    }

    pub fn set_coeff(&mut self, k: &[i64], value: Complex64) {
        let idx = self.grid.index_of_freq(k);
        self.coeffs[idx] = value;
    }

    /// Mode-0 coefficient, i.e. the average over the torus.
    pub fn mean(&self) -> Complex64 {
        self.coeffs[0]
    }

    pub fn values(&self) -> Vec<Complex64> {
        let mut data = self.coeffs.clone();
        fft::coeffs_to_values(&mut data, self.grid.d(), self.grid.n());
        data
    }

    /// Collocation values of a real field (imaginary parts dropped; they are
    /// at roundoff level once Hermitian symmetry holds).
    pub fn real_values(&self) -> Vec<f64> {
        self.values().iter().map(|v| v.re).collect()
    }

    /// Collocation values on the refined (factor * N)^d lattice obtained by
    /// zero-padding the spectrum; used to probe minima between grid points.
    pub fn oversampled_values(&self, factor: usize) -> Vec<Complex64> {
        let m = self.grid.n() * factor.max(1);
        let mut data = embed_coeffs(&self.coeffs, self.grid.d(), self.grid.n(), m);
        fft::coeffs_to_values(&mut data, self.grid.d(), m);
        data
    }

    /// Same trigonometric polynomial on a finer grid of the same dimension
    /// (shared modes copied, new modes zero).
    pub fn embed_to(&self, target: &SpectralGrid) -> Result<Self> {
        if target.d() != self.grid.d() || target.n() < self.grid.n() {
            return Err(Error::GridMismatch(format!(
                "cannot embed (d = {}, N = {}) into (d = {}, N = {})",
                self.grid.d(),
                self.grid.n(),
                target.d(),
                target.n()
            )));
        }
        let coeffs = embed_coeffs(&self.coeffs, self.grid.d(), self.grid.n(), target.n());
        PeriodicField::from_coeffs(target, coeffs, self.real)
    }

    /// Truncation onto a coarser grid of the same dimension.
    pub fn restrict_to(&self, target: &SpectralGrid) -> Result<Self> {
        if target.d() != self.grid.d() || target.n() > self.grid.n() {
            return Err(Error::GridMismatch(format!(
                "cannot restrict (d = {}, N = {}) to (d = {}, N = {})",
                self.grid.d(),
                self.grid.n(),
                target.d(),
                target.n()
            )));
        }
        let mut coeffs = restrict_coeffs(&self.coeffs, self.grid.d(), self.grid.n(), target.n());
        // Zero the target Nyquist planes: their conjugate partners live only
        // on the finer grid, so keeping them would break Hermitian symmetry.
        if target.n() < self.grid.n() {
            let nyq = target.n() as i64 / 2;
            for (idx, c) in coeffs.iter_mut().enumerate() {
                let k = super::grid::freq_of_flat_index(idx, target.d(), target.n());
                if k[..target.d()].iter().any(|&kc| kc == -nyq) {
                    *c = Complex64::default();
                }
            }
        }
        PeriodicField::from_coeffs(target, coeffs, self.real)
    }

    pub fn hermitian_drift(&self) -> f64 {
        let n = self.grid.n();
        let d = self.grid.d();
        let mut max_dev: f64 = 0.0;
        let mut max_mag: f64 = 0.0;
        for idx in 0..self.coeffs.len() {
            let k = super::grid::freq_of_flat_index(idx, d, n);
            let neg: Vec<i64> = k[..d].iter().map(|&c| -c).collect();
            let other = self.grid.index_of_freq(&neg);
            let dev = (self.coeffs[idx] - self.coeffs[other].conj()).norm();
            max_dev = max_dev.max(dev);
            max_mag = max_mag.max(self.coeffs[idx].norm());
        }
        max_dev / max_mag.max(1.0)
    }

    /// Symmetrize u^(k) and conj(u^(-k)); errors if the relative drift
    /// exceeds HERMITIAN_TOL, which indicates a logic error upstream.
    pub fn enforce_hermitian(&mut self) -> Result<()> {
        let drift = self.hermitian_drift();
        if drift > HERMITIAN_TOL {
            return Err(Error::HermitianDrift {
                drift,
                tol: HERMITIAN_TOL,
            });
        }
        let n = self.grid.n();
        let d = self.grid.d();
        for idx in 0..self.coeffs.len() {
            let k = super::grid::freq_of_flat_index(idx, d, n);
            let neg: Vec<i64> = k[..d].iter().map(|&c| -c).collect();
            let other = self.grid.index_of_freq(&neg);
            if other < idx {
                continue;
            }
            let avg = 0.5 * (self.coeffs[idx] + self.coeffs[other].conj());
            self.coeffs[idx] = avg;
            self.coeffs[other] = avg.conj();
        }
        self.real = true;
        Ok(())
    }

    // ----- linear operations -----

    pub fn scale(&self, s: f64) -> Self {
        let coeffs = self.coeffs.iter().map(|c| c * s).collect();
        PeriodicField {
            grid: self.grid.clone(),
            coeffs,
            real: self.real,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert!(self.grid == other.grid);
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a + b)
            .collect();
        PeriodicField {
            grid: self.grid.clone(),
            coeffs,
            real: self.real && other.real,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert!(self.grid == other.grid);
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        PeriodicField {
            grid: self.grid.clone(),
            coeffs,
            real: self.real && other.real,
        }
    }

    /// self += s * other.
    pub fn axpy(&mut self, s: f64, other: &Self) {
        debug_assert!(self.grid == other.grid);
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += s * b;
        }
        self.real = self.real && other.real;
    }

    /// Apply a real Fourier multiplier m(k) given per flat index.
    pub fn apply_multiplier(&self, m: impl Fn(usize) -> f64) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(idx, c)| c * m(idx))
            .collect();
        PeriodicField {
            grid: self.grid.clone(),
            coeffs,
            real: self.real,
        }
    }

    /// Spectral derivative along `axis`: multiplier 2 pi i k_axis. The
    /// Nyquist plane k_axis = -N/2 is self-conjugate and has no symmetric
    /// partner, so its derivative is set to zero (symmetric-band convention).
    pub fn derivative(&self, axis: usize) -> Self {
        assert!(axis < self.grid.d());
        let nyquist = -(self.grid.n() as i64) / 2;
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(idx, c)| {
                let k = self.grid.freq(idx)[axis];
                if k == nyquist {
                    Complex64::default()
                } else {
                    c * Complex64::new(0.0, TWO_PI * k as f64)
                }
            })
            .collect();
        PeriodicField {
            grid: self.grid.clone(),
            coeffs,
            real: self.real,
        }
    }

    // ----- Littlewood-Paley -----

    /// Dyadic block Delta_j u (multiplier p_j).
    pub fn lp_block(&self, j: i32) -> Self {
        self.apply_multiplier(|idx| self.grid.block_weight(j, idx))
    }

    /// Partial sum S_i u = sum of blocks j <= i - 1; S_i = 0 for i <= -1.
    /// Uses the telescoped multiplier (exact partial sum of the partition).
    pub fn partial_sum(&self, i: i32) -> Self {
        if i <= -1 {
            return Self::zeros(&self.grid);
        }
        let shift = f64::powi(2.0, i);
        self.apply_multiplier(|idx| block_profile(-1, self.grid.freq_norm2(idx).sqrt() / shift))
    }

    // ----- norms -----

    /// ||u||_{L^p} with the normalized torus measure.
    pub fn lp_norm(&self, p: Lp) -> f64 {
        match p {
            Lp::Two => self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt(),
            Lp::One => {
                let vals = self.values();
                vals.iter().map(|v| v.norm()).sum::<f64>() / vals.len() as f64
            }
            Lp::Inf => {
                let vals = self.values();
                vals.iter().map(|v| v.norm()).fold(0.0, f64::max)
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.lp_norm(Lp::Two)
    }

    /// ||Delta_j u||_{L^p}. p = 2 is evaluated by Parseval without a
    /// transform; p = 1, infinity via collocation values of the block.
    pub fn block_lp_norm(&self, j: i32, p: Lp) -> f64 {
        match p {
            Lp::Two => self
                .coeffs
                .iter()
                .enumerate()
                .map(|(idx, c)| {
                    let w = self.grid.block_weight(j, idx);
                    w * w * c.norm_sqr()
                })
                .sum::<f64>()
                .sqrt(),
            _ => self.lp_block(j).lp_norm(p),
        }
    }

    /// Finite-lattice Besov norm || (2^{j theta} ||Delta_j u||_{L^p})_j ||_{l^q}
    /// over blocks j = -1 ..= j_max. The j = -1 block carries weight
    /// 2^{-theta}, so the norm of a constant decreases in theta.
    pub fn besov_norm(&self, theta: f64, p: Lp, q: Lq) -> f64 {
        let mut acc: f64 = 0.0;
        for j in -1..=self.grid.j_max() {
            let term = f64::powf(2.0, theta * j as f64) * self.block_lp_norm(j, p);
            match q {
                Lq::Two => acc += term * term,
                Lq::Inf => acc = acc.max(term),
            }
        }
        match q {
            Lq::Two => acc.sqrt(),
            Lq::Inf => acc,
        }
    }

    /// Squared homogeneous seminorm (constants are annihilated).
    ///
    /// Sobolev returns sum_{k != 0} |k|^{2s} |u^(k)|^2. Besov22 returns the
    /// lattice difference quadrature of int |h|^{-2s} ||u(.+h) - u||^2_{L^2}
    /// dh / |h|^d with h ranging over nonzero collocation offsets in
    /// [-1/2, 1/2)^d; requires s in (0, 1] and delegates to Sobolev at s = 1.
    pub fn homogeneous_norm_sq(&self, s: f64, kind: HomogeneousKind) -> Result<f64> {
        match kind {
            HomogeneousKind::Sobolev => Ok(self
                .coeffs
                .iter()
                .enumerate()
                .map(|(idx, c)| {
                    let n2 = self.grid.freq_norm2(idx);
                    if n2 == 0.0 {
                        0.0
                    } else {
                        n2.powf(s) * c.norm_sqr()
                    }
                })
                .sum()),
            HomogeneousKind::Besov22 => {
                if !(0.0 < s && s <= 1.0) {
                    return Err(Error::InvalidInput(format!(
                        "difference-quadrature Besov norm needs s in (0, 1], got {s}"
                    )));
                }
                if s == 1.0 {
                    return self.homogeneous_norm_sq(1.0, HomogeneousKind::Sobolev);
                }
                let n = self.grid.n();
                let d = self.grid.d();
                let len = self.grid.len();
                let nonzero: Vec<(usize, f64)> = self
                    .coeffs
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.norm_sqr() > 0.0)
                    .map(|(idx, c)| (idx, c.norm_sqr()))
                    .collect();
                let mut total = 0.0;
                for h_idx in 1..len {
                    // offset h = j / n with j the signed lattice vector
                    let hvec = super::grid::freq_of_flat_index(h_idx, d, n);
                    let h2: f64 = hvec[..d]
                        .iter()
                        .map(|&j| {
                            let hj = j as f64 / n as f64;
                            hj * hj
                        })
                        .sum();
                    // ||u(.+h) - u||_2^2 = sum_k |u^(k)|^2 |e^{2 pi i k.h} - 1|^2
                    let mut diff = 0.0;
                    for &(idx, mag2) in &nonzero {
                        let k = self.grid.freq(idx);
                        let phase: f64 = k
                            .iter()
                            .zip(&hvec[..d])
                            .map(|(&kc, &jc)| kc as f64 * jc as f64 / n as f64)
                            .sum();
                        diff += mag2 * (2.0 - 2.0 * (TWO_PI * phase).cos());
                    }
                    total += h2.powf(-s - d as f64 / 2.0) * diff;
                }
                Ok(total / len as f64)
            }
        }
    }
}

/// L^2 inner product <f, g> = sum_k f^(k) conj(g^(k)); exact for trigonometric
/// polynomials.
pub fn l2_inner(f: &PeriodicField, g: &PeriodicField) -> Complex64 {
    debug_assert!(f.grid == g.grid);
    f.coeffs
        .iter()
        .zip(&g.coeffs)
        .map(|(a, b)| a * b.conj())
        .sum()
}

/// Bilinear pairing int f g dx = sum_k f^(k) g^(-k).
pub fn pairing(f: &PeriodicField, g: &PeriodicField) -> Complex64 {
    debug_assert!(f.grid == g.grid);
    let grid = &f.grid;
    let d = grid.d();
    let n = grid.n();
    f.coeffs
        .iter()
        .enumerate()
        .map(|(idx, a)| {
            let k = super::grid::freq_of_flat_index(idx, d, n);
            let neg: Vec<i64> = k[..d].iter().map(|&c| -c).collect();
            a * g.coeffs[grid.index_of_freq(&neg)]
        })
        .sum()
}

fn embed_coeffs(coeffs: &[Complex64], d: usize, n: usize, m: usize) -> Vec<Complex64> {
    debug_assert!(m >= n);
    let mut out = vec![Complex64::default(); m.pow(d as u32)];
    for (idx, &c) in coeffs.iter().enumerate() {
        let k = super::grid::freq_of_flat_index(idx, d, n);
        let mut target = 0usize;
        for &kc in k[..d].iter() {
            target = target * m + kc.rem_euclid(m as i64) as usize;
        }
        out[target] = c;
    }
    out
}

fn restrict_coeffs(coeffs: &[Complex64], d: usize, m: usize, n: usize) -> Vec<Complex64> {
    debug_assert!(m >= n);
    let len = n.pow(d as u32);
    let mut out = vec![Complex64::default(); len];
    for (idx, slot) in out.iter_mut().enumerate() {
        let k = super::grid::freq_of_flat_index(idx, d, n);
        let mut src = 0usize;
        for &kc in k[..d].iter() {
            src = src * m + kc.rem_euclid(m as i64) as usize;
        }
        *slot = coeffs[src];
    }
    out
}

/// Dealiased pointwise product: both factors are synthesized on the
/// 3N/2-padded grid, multiplied, transformed back and truncated, which gives
/// the exact Fourier truncation of the true product for modes in
/// {-N/2 .. N/2-1}^d. Real x real re-enforces Hermitian symmetry.
pub fn multiply(a: &PeriodicField, b: &PeriodicField) -> Result<PeriodicField> {
    a.grid.same_grid(&b.grid)?;
    let d = a.grid.d();
    let n = a.grid.n();
    let m = 3 * n / 2;
    let mut pa = embed_coeffs(&a.coeffs, d, n, m);
    fft::coeffs_to_values(&mut pa, d, m);
    let mut pb = embed_coeffs(&b.coeffs, d, n, m);
    fft::coeffs_to_values(&mut pb, d, m);
    for (x, y) in pa.iter_mut().zip(&pb) {
        *x *= y;
    }
    fft::values_to_coeffs(&mut pa, d, m);
    let mut coeffs = restrict_coeffs(&pa, d, m, n);
    // The retained band is kept symmetric: the Nyquist plane k = -N/2 has no
    // conjugate partner inside the lattice, so the product is truncated to
    // |k| <= N/2 - 1 along every axis.
    let nyq = -(n as i64) / 2;
    for (idx, c) in coeffs.iter_mut().enumerate() {
        let k = super::grid::freq_of_flat_index(idx, d, n);
        if k[..d].contains(&nyq) {
            *c = Complex64::default();
        }
    }
    let mut out = PeriodicField {
        grid: a.grid.clone(),
        coeffs,
        real: a.real && b.real,
    };
    if out.real {
        out.enforce_hermitian()?;
    }
    Ok(out)
}

/// Vector-valued field (for drifts, gradients, correctors).
#[derive(Clone, Debug)]
pub struct VectorField {
    comps: Vec<PeriodicField>,
}

impl VectorField {
    pub fn new(comps: Vec<PeriodicField>) -> Result<Self> {
        if comps.is_empty() {
            return Err(Error::InvalidInput("vector field needs components".into()));
        }
        for c in &comps[1..] {
            comps[0].grid.same_grid(&c.grid)?;
        }
        Ok(VectorField { comps })
    }

    pub fn zeros(grid: &SpectralGrid, ncomp: usize) -> Self {
        VectorField {
            comps: (0..ncomp).map(|_| PeriodicField::zeros(grid)).collect(),
        }
    }

    /// Gradient of a scalar (d components).
    pub fn gradient(f: &PeriodicField) -> Self {
        VectorField {
            comps: (0..f.grid.d()).map(|axis| f.derivative(axis)).collect(),
        }
    }

    pub fn grid(&self) -> &SpectralGrid {
        self.comps[0].grid()
    }

    pub fn ncomp(&self) -> usize {
        self.comps.len()
    }

    pub fn comp(&self, i: usize) -> &PeriodicField {
        &self.comps[i]
    }

    pub fn comp_mut(&mut self, i: usize) -> &mut PeriodicField {
        &mut self.comps[i]
    }

    pub fn comps(&self) -> &[PeriodicField] {
        &self.comps
    }

    pub fn into_comps(self) -> Vec<PeriodicField> {
        self.comps
    }

    /// Divergence sum_i d_i F^i (requires ncomp == d).
    pub fn divergence(&self) -> PeriodicField {
        assert_eq!(self.ncomp(), self.grid().d());
        let mut out = PeriodicField::zeros(self.grid());
        for (axis, c) in self.comps.iter().enumerate() {
            out = out.add(&c.derivative(axis));
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        VectorField {
            comps: self.comps.iter().map(|c| c.scale(s)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        VectorField {
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.add(b))
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        VectorField {
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.sub(b))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(&PeriodicField) -> PeriodicField) -> Self {
        VectorField {
            comps: self.comps.iter().map(f).collect(),
        }
    }

    /// Largest besov norm over components.
    pub fn besov_norm(&self, theta: f64, p: Lp, q: Lq) -> f64 {
        self.comps
            .iter()
            .map(|c| c.besov_norm(theta, p, q))
            .fold(0.0, f64::max)
    }

    pub fn l2_norm(&self) -> f64 {
        self.comps
            .iter()
            .map(|c| c.l2_norm().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Real band-limited field with independent standard-normal mode pairs on
/// 1 <= |k|_inf <= kmax, deterministic in the seed. Used by test corpora and
/// examples.
pub fn random_band_limited(
    grid: &SpectralGrid,
    kmax: i64,
    mean_zero: bool,
    seed: u64,
) -> PeriodicField {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut f = PeriodicField::zeros(grid);
    let d = grid.d();
    let n = grid.n() as i64;
    let kcap = kmax.min(n / 2 - 1);
    let len = grid.len();
    for idx in 0..len {
        let k = grid.freq(idx).to_vec();
        if k.iter().any(|&c| c.abs() > kcap) {
            continue;
        }
        if k.iter().all(|&c| c == 0) {
            continue;
        }
        // Fill each conjugate pair once, from its lexicographically positive
        // representative, so the result is Hermitian by construction.
        if !lexicographically_positive(&k) {
            continue;
        }
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        let c = Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
        let neg: Vec<i64> = k.iter().map(|&c| -c).collect();
        f.coeffs[idx] = c;
        let nidx = grid.index_of_freq(&neg);
        f.coeffs[nidx] = c.conj();
        let _ = d;
    }
    if !mean_zero {
        let re: f64 = StandardNormal.sample(&mut rng);
        f.coeffs[0] = Complex64::new(re, 0.0);
    }
    f.real = true;
    f
}

fn lexicographically_positive(k: &[i64]) -> bool {
    for &c in k {
        if c > 0 {
            return true;
        }
        if c < 0 {
            return false;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::super::grid::SpectralGrid;
    use super::*;

    fn grid1(n: usize) -> SpectralGrid {
        SpectralGrid::new(1, n).unwrap()
    }

    #[test]
    fn transform_round_trip_tight() {
        for n in [8usize, 64, 256] {
            let grid = grid1(n);
            let f = random_band_limited(&grid, n as i64 / 2 - 1, false, 7 + n as u64);
            let values = f.values();
            let g = PeriodicField::from_values(&grid, values, true).unwrap();
            let err: f64 = f
                .coeffs()
                .iter()
                .zip(g.coeffs())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-12, "round trip error {err} at N = {n}");
        }
    }

    #[test]
    fn single_mode_l2_norm_is_one() {
        let grid = grid1(32);
        let f = PeriodicField::complex_mode(&grid, &[5]);
        assert!((f.l2_norm() - 1.0).abs() < 1e-14);
        // and cos has L2 norm 1/sqrt(2)
        let c = PeriodicField::trig_mode(&grid, &[3], 1.0, 0.0);
        assert!((c.l2_norm() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-14);
    }

    #[test]
    fn derivative_of_cos_is_minus_two_pi_sin() {
        let grid = grid1(64);
        let f = PeriodicField::trig_mode(&grid, &[1], 1.0, 0.0);
        let df = f.derivative(0);
        let expect = PeriodicField::trig_mode(&grid, &[1], 0.0, -TWO_PI);
        let err = df.sub(&expect).l2_norm();
        assert!(err < 1e-13);
    }

    #[test]
    fn dealiased_product_matches_exact_convolution() {
        // cos(2 pi a x) * cos(2 pi b x) = (cos(2 pi (a+b) x) + cos(2 pi (a-b) x)) / 2
        let grid = grid1(32);
        let a = PeriodicField::trig_mode(&grid, &[5], 1.0, 0.0);
        let b = PeriodicField::trig_mode(&grid, &[3], 1.0, 0.0);
        let prod = multiply(&a, &b).unwrap();
        let expect = PeriodicField::trig_mode(&grid, &[8], 0.5, 0.0)
            .add(&PeriodicField::trig_mode(&grid, &[2], 0.5, 0.0));
        assert!(prod.sub(&expect).l2_norm() < 1e-13);
    }

    #[test]
    fn dealiased_product_truncates_not_wraps() {
        // Frequencies above N/2 - 1 must be discarded, not folded back.
        let grid = grid1(16);
        let a = PeriodicField::trig_mode(&grid, &[6], 1.0, 0.0);
        let prod = multiply(&a, &a).unwrap();
        // a^2 = 1/2 + cos(2 pi 12 x)/2; the 12-mode exceeds the lattice.
        let expect = PeriodicField::constant(&grid, 0.5);
        assert!(prod.sub(&expect).l2_norm() < 1e-13);
    }

    #[test]
    fn besov_single_mode_in_block_interior() {
        // |k| = 3 sits in the interior of block j = 1 (p_1(3) = 1).
        let grid = grid1(64);
        let f = PeriodicField::complex_mode(&grid, &[3]);
        for theta in [-0.6, 0.3, 1.4] {
            let norm = f.besov_norm(theta, Lp::Two, Lq::Inf);
            let expect = f64::powf(2.0, theta);
            assert!(
                (norm - expect).abs() < 1e-12,
                "theta {theta}: {norm} vs {expect}"
            );
        }
    }

    #[test]
    fn besov_constant_decays_in_theta() {
        let grid = grid1(32);
        let one = PeriodicField::constant(&grid, 1.0);
        for theta in [0.25, 0.5, 1.0] {
            let norm = one.besov_norm(theta, Lp::Inf, Lq::Inf);
            assert!((norm - f64::powf(2.0, -theta)).abs() < 1e-12);
        }
    }

    #[test]
    fn besov_monotone_in_theta_without_low_block() {
        // For fields with empty j = -1 block all weights are 2^{j theta} with
        // j >= 0, so the norm is nondecreasing in theta.
        let grid = grid1(64);
        let mut f = random_band_limited(&grid, 20, true, 99);
        f = f.apply_multiplier(|idx| if grid.freq_norm2(idx) < 4.0 { 0.0 } else { 1.0 });
        let thetas = [-0.9, -0.3, 0.0, 0.4, 1.1];
        let mut last = 0.0;
        for theta in thetas {
            let norm = f.besov_norm(theta, Lp::Two, Lq::Inf);
            assert!(norm >= last - 1e-12);
            last = norm;
        }
    }

    #[test]
    fn sobolev_square_of_cos() {
        let grid = grid1(32);
        let f = PeriodicField::trig_mode(&grid, &[1], 1.0, 0.0);
        let h1 = f.homogeneous_norm_sq(1.0, HomogeneousKind::Sobolev).unwrap();
        assert!((h1 - 0.5).abs() < 1e-14);
        // constants vanish
        let one = PeriodicField::constant(&grid, 3.0);
        assert_eq!(
            one.homogeneous_norm_sq(0.5, HomogeneousKind::Sobolev).unwrap(),
            0.0
        );
        assert_eq!(
            one.homogeneous_norm_sq(0.5, HomogeneousKind::Besov22).unwrap(),
            0.0
        );
    }

    #[test]
    fn besov22_refinement_within_ten_percent() {
        let coarse = grid1(128);
        let fine = grid1(256);
        let s = 0.5;
        let f_c = random_band_limited(&coarse, 12, true, 1234);
        // same trig polynomial on the doubled grid
        let mut f_f = PeriodicField::zeros(&fine);
        for idx in 0..coarse.len() {
            let k = coarse.freq(idx).to_vec();
            f_f.set_coeff(&k, f_c.coeffs()[idx]);
        }
        let a = f_c.homogeneous_norm_sq(s, HomogeneousKind::Besov22).unwrap();
        let b = f_f.homogeneous_norm_sq(s, HomogeneousKind::Besov22).unwrap();
        assert!((a - b).abs() / b < 0.10, "coarse {a} fine {b}");
    }

    #[test]
    fn besov22_equivalent_to_sobolev_half() {
        // ratio of the two s = 1/2 seminorms stays in a fixed band over a corpus
        let grid = grid1(64);
        let mut ratios = Vec::new();
        for seed in 0..100 {
            let f = random_band_limited(&grid, 21, true, 4000 + seed);
            let a = f
                .homogeneous_norm_sq(0.5, HomogeneousKind::Besov22)
                .unwrap()
                .sqrt();
            let b = f
                .homogeneous_norm_sq(0.5, HomogeneousKind::Sobolev)
                .unwrap()
                .sqrt();
            ratios.push(a / b);
        }
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0, f64::max);
        assert!(lo > 0.0);
        assert!(hi / lo < 3.0, "equivalence band [{lo}, {hi}] too wide");
    }

    #[test]
    fn hermitian_drift_detected() {
        let grid = grid1(16);
        let mut f = PeriodicField::zeros(&grid);
        f.coeffs_mut()[3] = Complex64::new(1.0, 0.5);
        // conjugate slot left empty: clearly asymmetric
        assert!(f.enforce_hermitian().is_err());
    }

    #[test]
    fn partial_sum_keeps_low_blocks() {
        let grid = grid1(64);
        // mode 12 lies in the interior of block 3
        let f = PeriodicField::complex_mode(&grid, &[12]);
        assert!(f.partial_sum(3).l2_norm() < 1e-15);
        assert!((f.partial_sum(4).l2_norm() - 1.0).abs() < 1e-13);
        // and S_0 keeps only the ball block
        let c = PeriodicField::constant(&grid, 2.0);
        assert!((c.partial_sum(0).l2_norm() - 2.0).abs() < 1e-14);
        assert!(c.partial_sum(-1).l2_norm() < 1e-15);
    }

    #[test]
    fn vector_divergence_of_gradient() {
        let grid = SpectralGrid::new(2, 16).unwrap();
        let f = PeriodicField::trig_mode(&grid, &[1, 2], 0.7, -0.3);
        let grad = VectorField::gradient(&f);
        let div = grad.divergence();
        // div grad f = -4 pi^2 |k|^2 f
        let expect = f.apply_multiplier(|idx| -TWO_PI * TWO_PI * grid.freq_norm2(idx));
        assert!(div.sub(&expect).l2_norm() < 1e-12);
    }
}
