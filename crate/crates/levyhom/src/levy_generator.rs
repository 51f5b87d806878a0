//! Symmetric alpha-stable generators on the torus as Fourier multipliers.
//!
//! A spectral measure nu on the sphere S^{d-1} (symmetric, full span) defines
//! the symbol psi(z) = int |<z, xi>|^alpha nu(dxi) and the generator acts
//! mode-wise as multiplication by psi(k). At alpha = 2 the convention is
//! L = -(1/2) Laplace, i.e. psi(z) = |2 pi z|^2 / 2, independent of nu.
//! Semigroup, resolvent and time integrals of the semigroup are exact
//! per-mode exponentials; only the Duhamel quadrature for time-dependent
//! integrands carries a time-discretization error (second order).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus_spectral::{PeriodicField, SpectralGrid, VectorField, TWO_PI};

/// Tolerance for the +/- symmetry of atomic spectral measures.
pub const MEASURE_SYMMETRY_TOL: f64 = 1e-12;

/// Default quadrature size for the uniform measure in d >= 2.
pub const UNIFORM_QUADRATURE_POINTS: usize = 64;

/// Symmetric spectral measure on S^{d-1}: either a finite atom list (closed
/// under negation) or the uniform measure of a given total mass, which is
/// discretized into an equal-weight antipodal quadrature at construction.
#[derive(Clone, Debug)]
pub struct SphericalMeasure {
    alpha: f64,
    d: usize,
    /// Flattened atoms (direction padded to 3 entries, weight), closed under
    /// negation.
    atoms: Vec<([f64; 3], f64)>,
    /// Relative quadrature error of the discretized uniform measure against
    /// the rotation-invariant symbol; zero for atomic measures.
    uniform_quadrature_error: f64,
}

/// Serialized form: either an explicit atom list or a uniform total mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureSpec {
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atoms: Option<Vec<(Vec<f64>, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 1.0 && alpha <= 2.0) {
        return Err(Error::Inadmissible(format!(
            "alpha must lie in (1, 2], got {alpha}"
        )));
    }
    Ok(())
}

impl SphericalMeasure {
    /// Atomic measure from an explicit list of (direction, weight) pairs.
    /// Directions must be unit vectors; the list must be closed under
    /// negation with equal weights and span R^d.
    pub fn from_atoms(alpha: f64, d: usize, atoms: &[(Vec<f64>, f64)]) -> Result<Self> {
        validate_alpha(alpha)?;
        if !(1..=3).contains(&d) {
            return Err(Error::BadDimension(d));
        }
        if atoms.is_empty() {
            return Err(Error::Measure("atom list is empty".into()));
        }
        let mut flat = Vec::with_capacity(atoms.len());
        for (dir, w) in atoms {
            if dir.len() != d {
                return Err(Error::Measure(format!(
                    "direction {dir:?} has wrong dimension (d = {d})"
                )));
            }
            if *w <= 0.0 {
                return Err(Error::Measure(format!("weight {w} must be positive")));
            }
            let norm: f64 = dir.iter().map(|c| c * c).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Measure(format!(
                    "direction {dir:?} is not a unit vector (|.| = {norm})"
                )));
            }
            let mut padded = [0.0; 3];
            padded[..d].copy_from_slice(dir);
            flat.push((padded, *w));
        }
        let measure = SphericalMeasure {
            alpha,
            d,
            atoms: flat,
            uniform_quadrature_error: 0.0,
        };
        measure.check_symmetry()?;
        measure.check_span()?;
        Ok(measure)
    }

    /// Convenience: atoms given for one hemisphere, mirrored automatically.
    pub fn from_half_atoms(alpha: f64, d: usize, half: &[(Vec<f64>, f64)]) -> Result<Self> {
        let mut atoms = Vec::with_capacity(2 * half.len());
        for (dir, w) in half {
            atoms.push((dir.clone(), *w));
            atoms.push((dir.iter().map(|c| -c).collect(), *w));
        }
        Self::from_atoms(alpha, d, &atoms)
    }

    /// Uniform measure of the given total mass, discretized by an
    /// equal-weight antipodal quadrature with `points` nodes (ignored in
    /// d = 1 where the sphere has two points).
    pub fn uniform(alpha: f64, d: usize, total_mass: f64, points: usize) -> Result<Self> {
        validate_alpha(alpha)?;
        if total_mass <= 0.0 {
            return Err(Error::Measure(format!(
                "uniform total mass {total_mass} must be positive"
            )));
        }
        let atoms: Vec<([f64; 3], f64)> = match d {
            1 => vec![
                ([1.0, 0.0, 0.0], total_mass / 2.0),
                ([-1.0, 0.0, 0.0], total_mass / 2.0),
            ],
            2 => {
                let m = points.max(4) & !1; // even
                let w = total_mass / m as f64;
                (0..m)
                    .map(|i| {
                        let theta = TWO_PI * (i as f64 + 0.5) / m as f64;
                        ([theta.cos(), theta.sin(), 0.0], w)
                    })
                    .collect()
            }
            3 => {
                // Fibonacci hemisphere, mirrored for symmetry.
                let half = (points.max(8) / 2).max(4);
                let w = total_mass / (2 * half) as f64;
                let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
                let mut atoms = Vec::with_capacity(2 * half);
                for i in 0..half {
                    let z = (i as f64 + 0.5) / half as f64; // upper hemisphere
                    let r = (1.0 - z * z).sqrt();
                    let phi = TWO_PI * (i as f64) / golden;
                    let dir = [r * phi.cos(), r * phi.sin(), z];
                    atoms.push((dir, w));
                    atoms.push(([-dir[0], -dir[1], -dir[2]], w));
                }
                atoms
            }
            _ => return Err(Error::BadDimension(d)),
        };
        let mut measure = SphericalMeasure {
            alpha,
            d,
            atoms,
            uniform_quadrature_error: 0.0,
        };
        measure.check_symmetry()?;
        measure.check_span()?;
        measure.uniform_quadrature_error = measure.isotropy_error();
        Ok(measure)
    }

    /// Uniform measure calibrated so that psi(z) = |2 pi z|^alpha (the mass
    /// is (2 pi)^alpha divided by the spherical average of |<e, xi>|^alpha).
    pub fn standard_isotropic(alpha: f64, d: usize) -> Result<Self> {
        validate_alpha(alpha)?;
        let mean = match d {
            1 => 1.0,
            2 => {
                // (1/2pi) int_0^{2pi} |cos t|^alpha dt by dense trapezoid
                let m = 1 << 14;
                (0..m)
                    .map(|i| {
                        let t = TWO_PI * (i as f64 + 0.5) / m as f64;
                        t.cos().abs().powf(alpha)
                    })
                    .sum::<f64>()
                    / m as f64
            }
            3 => {
                // average of |cos t|^alpha over the sphere = int_0^1 u^alpha du
                1.0 / (alpha + 1.0)
            }
            _ => return Err(Error::BadDimension(d)),
        };
        Self::uniform(
            alpha,
            d,
            TWO_PI.powf(alpha) / mean,
            UNIFORM_QUADRATURE_POINTS,
        )
    }

    pub fn from_spec(spec: &MeasureSpec) -> Result<Self> {
        match (&spec.atoms, spec.uniform) {
            (Some(atoms), None) => {
                let d = spec
                    .d
                    .or_else(|| atoms.first().map(|(dir, _)| dir.len()))
                    .ok_or_else(|| Error::Measure("cannot infer dimension".into()))?;
                Self::from_atoms(spec.alpha, d, atoms)
            }
            (None, Some(mass)) => {
                let d = spec
                    .d
                    .ok_or_else(|| Error::Measure("uniform measure needs d".into()))?;
                Self::uniform(spec.alpha, d, mass, UNIFORM_QUADRATURE_POINTS)
            }
            _ => Err(Error::Measure(
                "specify exactly one of `atoms` or `uniform`".into(),
            )),
        }
    }

    pub fn to_spec(&self) -> MeasureSpec {
        MeasureSpec {
            alpha: self.alpha,
            atoms: Some(
                self.atoms
                    .iter()
                    .map(|(dir, w)| (dir[..self.d].to_vec(), *w))
                    .collect(),
            ),
            uniform: None,
            d: Some(self.d),
        }
    }

    fn check_symmetry(&self) -> Result<()> {
        for (dir, w) in &self.atoms {
            let found = self.atoms.iter().any(|(other, ow)| {
                dir.iter()
                    .zip(other)
                    .all(|(a, b)| (a + b).abs() < MEASURE_SYMMETRY_TOL)
                    && (w - ow).abs() < MEASURE_SYMMETRY_TOL * w.max(*ow).max(1.0)
            });
            if !found {
                return Err(Error::Measure(format!(
                    "atom {:?} has no mirror atom of equal weight",
                    &dir[..self.d]
                )));
            }
        }
        Ok(())
    }

    fn check_span(&self) -> Result<()> {
        // Gram matrix of the directions must have full rank d.
        let d = self.d;
        let mut gram = [[0.0f64; 3]; 3];
        for (dir, w) in &self.atoms {
            for i in 0..d {
                for j in 0..d {
                    gram[i][j] += w * dir[i] * dir[j];
                }
            }
        }
        // Gaussian elimination with partial pivoting on the d x d block.
        let mut m = gram;
        let mut det: f64 = 1.0;
        for col in 0..d {
            let (pivot_row, pivot) = (col..d)
                .map(|r| (r, m[r][col].abs()))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            if pivot < 1e-12 {
                return Err(Error::Measure(
                    "atom directions do not span R^d (degenerate measure)".into(),
                ));
            }
            m.swap(col, pivot_row);
            det *= m[col][col];
            for r in (col + 1)..d {
                let f = m[r][col] / m[col][col];
                let (head, tail) = m.split_at_mut(r);
                for (c, t) in tail[0].iter_mut().enumerate().skip(col) {
                    *t -= f * head[col][c];
                }
            }
        }
        let _ = det;
        Ok(())
    }

    /// Worst relative deviation of the discretized symbol from rotation
    /// invariance, probed over a fan of directions.
    fn isotropy_error(&self) -> f64 {
        if self.d == 1 {
            return 0.0;
        }
        let probes = 360;
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for i in 0..probes {
            let t = TWO_PI * i as f64 / probes as f64;
            let z = match self.d {
                2 => [t.cos(), t.sin(), 0.0],
                _ => {
                    let u = (2.0 * (i as f64 + 0.5) / probes as f64) - 1.0;
                    let r = (1.0 - u * u).sqrt();
                    [r * (7.0 * t).cos(), r * (7.0 * t).sin(), u]
                }
            };
            let v = self.raw_symbol(&z[..self.d]);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (hi - lo) / lo
    }

    /// Symbol without the alpha = 2 override: sum_a w_a |<z, xi_a>|^alpha.
    fn raw_symbol(&self, z: &[f64]) -> f64 {
        self.atoms
            .iter()
            .map(|(dir, w)| {
                let dot: f64 = z.iter().zip(dir).map(|(a, b)| a * b).sum();
                w * dot.abs().powf(self.alpha)
            })
            .sum()
    }

    /// psi(z): the characteristic exponent under E e^{2 pi i z.L_t}
    /// = e^{-t psi(z)}. For alpha = 2 this is |2 pi z|^2 / 2.
    pub fn symbol(&self, z: &[f64]) -> f64 {
        if self.alpha == 2.0 {
            let n2: f64 = z.iter().map(|c| c * c).sum();
            0.5 * TWO_PI * TWO_PI * n2
        } else {
            self.raw_symbol(z)
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// One representative per antipodal atom pair, with the pair weight
    /// (i.e. the weight of a single atom; the mirror has the same weight).
    pub fn atom_pairs(&self) -> Vec<(Vec<f64>, f64)> {
        let mut out: Vec<(Vec<f64>, f64)> = Vec::new();
        for (dir, w) in &self.atoms {
            let dominated = out.iter().any(|(seen, _)| {
                seen.iter()
                    .zip(dir)
                    .all(|(a, b)| (a + b).abs() < MEASURE_SYMMETRY_TOL)
            });
            if !dominated {
                out.push((dir[..self.d].to_vec(), *w));
            }
        }
        out
    }

    pub fn uniform_quadrature_error(&self) -> f64 {
        self.uniform_quadrature_error
    }
}

/// Tabulated symbol psi(k) on a spectral grid together with the spectral
/// bounds c_min |k|^alpha <= psi(k) <= c_max |k|^alpha and the lattice gap
/// c_gap = min_{k != 0} psi(k).
#[derive(Clone, Debug)]
pub struct LevySymbol {
    measure: SphericalMeasure,
    grid: SpectralGrid,
    psi: Vec<f64>,
    c_gap: f64,
    c_min: f64,
    c_max: f64,
}

impl LevySymbol {
    pub fn new(measure: &SphericalMeasure, grid: &SpectralGrid) -> Result<Self> {
        if measure.d() != grid.d() {
            return Err(Error::GridMismatch(format!(
                "measure dimension {} vs grid dimension {}",
                measure.d(),
                grid.d()
            )));
        }
        let alpha = measure.alpha();
        let mut psi = Vec::with_capacity(grid.len());
        let mut c_gap = f64::INFINITY;
        let mut c_min = f64::INFINITY;
        let mut c_max = 0.0f64;
        for idx in 0..grid.len() {
            let k = grid.freq(idx);
            let z: Vec<f64> = k.iter().map(|&c| c as f64).collect();
            let value = measure.symbol(&z);
            if idx != 0 {
                c_gap = c_gap.min(value);
                let scale = grid.freq_norm2(idx).powf(alpha / 2.0);
                c_min = c_min.min(value / scale);
                c_max = c_max.max(value / scale);
            }
            psi.push(value);
        }
        if !c_gap.is_finite() || c_gap <= 0.0 {
            return Err(Error::Measure(format!(
                "symbol is not strictly positive off k = 0 (gap = {c_gap})"
            )));
        }
        Ok(LevySymbol {
            measure: measure.clone(),
            grid: grid.clone(),
            psi,
            c_gap,
            c_min,
            c_max,
        })
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn measure(&self) -> &SphericalMeasure {
        &self.measure
    }

    pub fn alpha(&self) -> f64 {
        self.measure.alpha()
    }

    pub fn psi(&self, idx: usize) -> f64 {
        self.psi[idx]
    }

    pub fn symbol_at(&self, z: &[f64]) -> f64 {
        self.measure.symbol(z)
    }

    /// Smallest symbol value off the zero mode.
    pub fn lattice_gap(&self) -> f64 {
        self.c_gap
    }

    /// Two-sided comparison constants: c_min |k|^alpha <= psi <= c_max |k|^alpha.
    pub fn comparison_bounds(&self) -> (f64, f64) {
        (self.c_min, self.c_max)
    }

    fn check_grid(&self, u: &PeriodicField) -> Result<()> {
        self.grid.same_grid(u.grid())
    }

    /// Generator application: (L u)^(k) = psi(k) u^(k).
    pub fn apply_generator(&self, u: &PeriodicField) -> Result<PeriodicField> {
        self.check_grid(u)?;
        Ok(u.apply_multiplier(|idx| self.psi[idx]))
    }

    /// Semigroup P_t = e^{-t L}, t >= 0.
    pub fn semigroup(&self, t: f64, u: &PeriodicField) -> Result<PeriodicField> {
        self.check_grid(u)?;
        if t < 0.0 {
            return Err(Error::InvalidInput(format!(
                "semigroup time must be nonnegative, got {t}"
            )));
        }
        Ok(u.apply_multiplier(|idx| (-t * self.psi[idx]).exp()))
    }

    /// Resolvent-type integral I_lambda u = int_0^inf e^{-lambda s} P_s u ds,
    /// i.e. the multiplier 1 / (lambda + psi(k)), lambda > 0.
    pub fn resolvent_integral(&self, lambda: f64, u: &PeriodicField) -> Result<PeriodicField> {
        self.check_grid(u)?;
        if lambda <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "resolvent parameter must be positive, got {lambda}"
            )));
        }
        Ok(u.apply_multiplier(|idx| 1.0 / (lambda + self.psi[idx])))
    }

    /// Steady integral I u = int_0^inf P_s u ds (multiplier 1/psi off k = 0);
    /// requires a vanishing mean.
    pub fn steady_integral(&self, u: &PeriodicField) -> Result<PeriodicField> {
        self.check_grid(u)?;
        let mean = u.mean().norm();
        let scale = u
            .coeffs()
            .iter()
            .map(|c| c.norm())
            .fold(0.0f64, f64::max)
            .max(1.0);
        if mean > 1e-12 * scale {
            return Err(Error::NonzeroMean(mean));
        }
        Ok(u.apply_multiplier(|idx| if idx == 0 { 0.0 } else { 1.0 / self.psi[idx] }))
    }

    /// I_t u = int_0^t P_{t-s} u ds for a time-constant u: multiplier
    /// (1 - e^{-t psi})/psi, with the k = 0 mode getting t u^(0).
    pub fn time_integral(&self, t: f64, u: &PeriodicField) -> Result<PeriodicField> {
        self.check_grid(u)?;
        if t < 0.0 {
            return Err(Error::InvalidInput(format!(
                "integration time must be nonnegative, got {t}"
            )));
        }
        Ok(u.apply_multiplier(|idx| {
            let p = self.psi[idx];
            if p == 0.0 {
                t
            } else {
                t * phi1(-t * p)
            }
        }))
    }

    /// Duhamel integral I_t(v) = int_0^t P_{t-s} v_s ds for a piecewise-
    /// linear-in-time integrand sampled at strictly increasing `times`;
    /// exact per interval for linear integrands (second-order quadrature).
    pub fn duhamel(
        &self,
        times: &[f64],
        fields: &[PeriodicField],
        t: f64,
    ) -> Result<PeriodicField> {
        if times.len() != fields.len() || times.len() < 2 {
            return Err(Error::InvalidInput(
                "duhamel needs matching times/fields with at least two samples".into(),
            ));
        }
        if t < times[0] || t > *times.last().unwrap() {
            return Err(Error::InvalidInput(format!(
                "evaluation time {t} outside sampled range [{}, {}]",
                times[0],
                times.last().unwrap()
            )));
        }
        for f in fields {
            self.check_grid(f)?;
        }
        let mut acc = PeriodicField::zeros(&self.grid);
        for seg in 0..times.len() - 1 {
            let (a, b) = (times[seg], times[seg + 1]);
            if b <= a {
                return Err(Error::InvalidInput(
                    "duhamel sample times must increase strictly".into(),
                ));
            }
            if a >= t {
                break;
            }
            let hi = b.min(t);
            let tau = hi - a;
            // linear interpolation of the integrand on [a, hi]
            let w = (hi - a) / (b - a);
            let va = &fields[seg];
            let vb_end = &fields[seg + 1];
            // value at hi: (1-w) v_a + w v_b
            for idx in 0..acc.coeffs().len() {
                let p = self.psi[idx];
                let ca = va.coeffs()[idx];
                let cb = (1.0 - w) * va.coeffs()[idx] + w * vb_end.coeffs()[idx];
                // int_0^tau e^{-(tau-u) p} (ca + (cb-ca) u/tau) du, then
                // transported to t by e^{-(t-hi) p}.
                let z = -tau * p;
                let block = tau * (ca * phi1(z) + (cb - ca) * phi2(z));
                let decay = (-(t - hi) * p).exp();
                acc.coeffs_mut()[idx] += decay * block;
            }
        }
        Ok(acc)
    }

    pub fn semigroup_vector(&self, t: f64, u: &VectorField) -> Result<VectorField> {
        let comps = u
            .comps()
            .iter()
            .map(|c| self.semigroup(t, c))
            .collect::<Result<Vec<_>>>()?;
        VectorField::new(comps)
    }

    pub fn steady_integral_vector(&self, u: &VectorField) -> Result<VectorField> {
        let comps = u
            .comps()
            .iter()
            .map(|c| self.steady_integral(c))
            .collect::<Result<Vec<_>>>()?;
        VectorField::new(comps)
    }

    pub fn resolvent_integral_vector(&self, lambda: f64, u: &VectorField) -> Result<VectorField> {
        let comps = u
            .comps()
            .iter()
            .map(|c| self.resolvent_integral(lambda, c))
            .collect::<Result<Vec<_>>>()?;
        VectorField::new(comps)
    }

    pub fn time_integral_vector(&self, t: f64, u: &VectorField) -> Result<VectorField> {
        let comps = u
            .comps()
            .iter()
            .map(|c| self.time_integral(t, c))
            .collect::<Result<Vec<_>>>()?;
        VectorField::new(comps)
    }
}

/// phi1(z) = (e^z - 1)/z, phi1(0) = 1, evaluated stably.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 + z / 2.0 + z * z / 6.0
    } else {
        z.exp_m1() / z
    }
}

/// phi2(z) = (e^z - 1 - z)/z^2, phi2(0) = 1/2, evaluated stably.
pub fn phi2(z: f64) -> f64 {
    if z.abs() < 1e-5 {
        0.5 + z / 6.0 + z * z / 24.0
    } else {
        (z.exp_m1() - z) / (z * z)
    }
}
