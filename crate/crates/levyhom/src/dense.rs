//! Dense reference solvers on small grids.
//!
//! These build the truncated generators as explicit matrices and solve them
//! with direct linear algebra (LU, matrix exponentials, eigenvalues). They
//! share no code with the pseudospectral evolution path - products are
//! convolution matrices assembled from raw coefficients, exponentials go
//! through Pade scaling-and-squaring - so they serve as independent
//! cross-checks for the mild solvers, the invariant density, the resolvent
//! and the spectral gap. Complexity is O(len^2)..O(len^3) in the flat grid
//! size, so callers keep len = N^d small (<= ~1024).
//!
//! Conventions match the lattice operators exactly: products are truncated
//! convolutions over the symmetric band (Nyquist planes annihilated), the
//! derivative multiplier is 2 pi i k with the per-axis Nyquist row zeroed.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::levy_generator::LevySymbol;
use crate::torus_spectral::{PeriodicField, SpectralGrid, VectorField, TWO_PI};

pub fn field_to_vector(f: &PeriodicField) -> DVector<Complex64> {
    DVector::from_column_slice(f.coeffs())
}

pub fn vector_to_field(grid: &SpectralGrid, v: &DVector<Complex64>) -> PeriodicField {
    PeriodicField::from_coeffs(grid, v.as_slice().to_vec(), false)
        .expect("vector length matches grid")
}

fn in_band(k: &[i64], half: i64) -> bool {
    k.iter().all(|&c| c.abs() < half)
}

/// Multiplication operator by f as a matrix on coefficient vectors:
/// row k, column k' holds f^(k - k'), zero outside the symmetric band.
/// Matches `multiply` exactly for band-limited inputs.
pub fn convolution_matrix(f: &PeriodicField) -> DMatrix<Complex64> {
    let grid = f.grid();
    let len = grid.len();
    let half = grid.n() as i64 / 2;
    let d = grid.d();
    let mut m = DMatrix::zeros(len, len);
    for row in 0..len {
        let k = grid.freq(row);
        if !in_band(k, half) {
            continue; // output truncated to the symmetric band
        }
        for col in 0..len {
            let kp = grid.freq(col);
            if !in_band(kp, half) {
                continue;
            }
            let mut diff = [0i64; 3];
            for a in 0..d {
                diff[a] = k[a] - kp[a];
            }
            if !in_band(&diff[..d], half) {
                continue;
            }
            m[(row, col)] = f.coeff(&diff[..d]);
        }
    }
    m
}

/// Derivative along `axis` as a diagonal matrix (2 pi i k_axis, Nyquist
/// row zeroed).
pub fn derivative_matrix(grid: &SpectralGrid, axis: usize) -> DMatrix<Complex64> {
    let len = grid.len();
    let nyquist = -(grid.n() as i64) / 2;
    DMatrix::from_fn(len, len, |r, c| {
        if r != c {
            return Complex64::default();
        }
        let k = grid.freq(r)[axis];
        if k == nyquist {
            Complex64::default()
        } else {
            Complex64::new(0.0, TWO_PI * k as f64)
        }
    })
}

fn symbol_diagonal(sym: &LevySymbol) -> DMatrix<Complex64> {
    let len = sym.grid().len();
    DMatrix::from_fn(len, len, |r, c| {
        if r == c {
            Complex64::new(sym.psi(r), 0.0)
        } else {
            Complex64::default()
        }
    })
}

/// Forward (Fokker-Planck) generator: A rho = -L rho - div(F rho).
pub fn fokker_planck_matrix(f: &VectorField, sym: &LevySymbol) -> Result<DMatrix<Complex64>> {
    sym.grid().same_grid(f.grid())?;
    let grid = f.grid();
    let mut a = -symbol_diagonal(sym);
    for (axis, comp) in f.comps().iter().enumerate() {
        a -= derivative_matrix(grid, axis) * convolution_matrix(comp);
    }
    Ok(a)
}

/// Backward (Kolmogorov) generator: A u = -L u + F . grad u.
pub fn backward_matrix(f: &VectorField, sym: &LevySymbol) -> Result<DMatrix<Complex64>> {
    sym.grid().same_grid(f.grid())?;
    let grid = f.grid();
    let mut a = -symbol_diagonal(sym);
    for (axis, comp) in f.comps().iter().enumerate() {
        a += convolution_matrix(comp) * derivative_matrix(grid, axis);
    }
    Ok(a)
}

fn one_norm(a: &DMatrix<Complex64>) -> f64 {
    (0..a.ncols())
        .map(|c| a.column(c).iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential e^A by [13/13] Pade approximation with scaling and
/// squaring (Higham's method).
pub fn expm(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    const THETA_13: f64 = 5.371_920_351_148_152;
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let n = a.nrows();
    let norm = one_norm(a);
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / Complex64::new(f64::powi(2.0, s), 0.0);
    let ident = DMatrix::<Complex64>::identity(n, n);
    let c = |i: usize| Complex64::new(B[i], 0.0);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let u_inner = &a6 * (&a6 * c(13) + &a4 * c(11) + &a2 * c(9))
        + &a6 * c(7)
        + &a4 * c(5)
        + &a2 * c(3)
        + &ident * c(1);
    let u = &scaled * u_inner;
    let v = &a6 * (&a6 * c(12) + &a4 * c(10) + &a2 * c(8))
        + &a6 * c(6)
        + &a4 * c(4)
        + &a2 * c(2)
        + &ident * c(0);
    let denom = &v - &u;
    let numer = &v + &u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .expect("Pade denominator is singular");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// rho with A rho = 0 and rho^(0) = 1: the zero-mode row is replaced by the
/// normalization constraint and the system solved directly.
pub fn nullspace_density(a: &DMatrix<Complex64>, grid: &SpectralGrid) -> Result<PeriodicField> {
    let len = grid.len();
    let mut m = a.clone();
    for c in 0..len {
        m[(0, c)] = Complex64::default();
    }
    m[(0, 0)] = Complex64::new(1.0, 0.0);
    let mut rhs = DVector::zeros(len);
    rhs[0] = Complex64::new(1.0, 0.0);
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Diverged("dense stationary system is singular".into()))?;
    Ok(vector_to_field(grid, &sol))
}

/// Solve (lambda - A) x = rhs.
pub fn solve_shifted(
    a: &DMatrix<Complex64>,
    lambda: f64,
    rhs: &DVector<Complex64>,
) -> Result<DVector<Complex64>> {
    let n = a.nrows();
    let m = DMatrix::<Complex64>::identity(n, n) * Complex64::new(lambda, 0.0) - a;
    m.lu()
        .solve(rhs)
        .ok_or_else(|| Error::Diverged(format!("shifted system singular at lambda = {lambda}")))
}

/// Backward generator assembled in physical space as a real matrix: columns
/// are -L u + F . grad u applied to collocation indicators, with the
/// advection product taken pointwise (no dealiasing). Independent of the
/// coefficient-space assembly; intended for eigenvalue estimates.
pub fn backward_matrix_physical(f: &VectorField, sym: &LevySymbol) -> Result<DMatrix<f64>> {
    sym.grid().same_grid(f.grid())?;
    let grid = f.grid();
    let len = grid.len();
    let f_vals: Vec<Vec<f64>> = f.comps().iter().map(|c| c.real_values()).collect();
    let mut m = DMatrix::zeros(len, len);
    for col in 0..len {
        let mut vals = vec![0.0; len];
        vals[col] = 1.0;
        let u = PeriodicField::from_real_values(grid, &vals)?;
        let mut out: Vec<f64> = sym
            .apply_generator(&u)?
            .real_values()
            .iter()
            .map(|v| -v)
            .collect();
        for (axis, fv) in f_vals.iter().enumerate() {
            let dv = u.derivative(axis).real_values();
            for (o, (dvx, fx)) in out.iter_mut().zip(dv.iter().zip(fv)) {
                *o += fx * dvx;
            }
        }
        for row in 0..len {
            m[(row, col)] = out[row];
        }
    }
    Ok(m)
}

/// Slowest nonzero decay rate of a generator matrix: eigenvalues have
/// nonpositive real parts with a simple zero; returns |Re| of the one
/// closest to (but off) the imaginary axis.
pub fn slowest_decay_rate(a: &DMatrix<f64>) -> Result<f64> {
    let eigs = a.clone().complex_eigenvalues();
    let mut rates: Vec<f64> = eigs.iter().map(|l| -l.re).collect();
    rates.sort_by(|x, y| x.total_cmp(y));
    // drop the invariant-measure eigenvalue (~0); everything else must decay
    let zero = rates
        .first()
        .copied()
        .ok_or_else(|| Error::InvalidInput("empty matrix".into()))?;
    if zero.abs() > 1e-6 {
        return Err(Error::Diverged(format!(
            "generator lacks the stationary eigenvalue (closest real part {zero:.3e})"
        )));
    }
    rates
        .into_iter()
        .skip(1)
        .find(|r| *r > 1e-9)
        .ok_or_else(|| Error::Diverged("no decaying eigenvalue found".into()))
}
