//! Bony paraproduct calculus on the truncated lattice.
//!
//! For u = sum_j Delta_j u the three parts of a product are
//!   u <. v = sum_i S_{i-1} u Delta_i v   (parap roduct, low-high)
//!   u .>. v ..
//!   u (.) v = sum_{|i-j| <= 1} Delta_i u Delta_j v   (resonant part)
//! and u v = (u <. v) + (u (.) v) + (v <. u) holds exactly here because the
//! partition sums to 1 on the lattice and every pointwise product is
//! dealiased on the 3N/2 grid. The commutator
//!   C1(g, f, h) = (g <. f) (.) h - g (f (.) h)
//! uses the same argument order everywhere in the crate.

use crate::error::Result;
use crate::torus_spectral::{multiply, PeriodicField, SpectralGrid};

/// Dyadic blocks of a field together with the running partial sums used by
/// the paraproducts; computed once when several products share a factor.
pub struct BlockDecomposition {
    /// blocks[j + 1] = Delta_j u for j = -1 ..= j_max.
    blocks: Vec<PeriodicField>,
    /// partial[m] = S_m u = sum of blocks j <= m - 1, for m = 0 ..= j_max + 1.
    partial: Vec<PeriodicField>,
    zero: PeriodicField,
}

impl BlockDecomposition {
    pub fn new(u: &PeriodicField) -> Self {
        let grid = u.grid().clone();
        let j_max = grid.j_max();
        let mut blocks = Vec::with_capacity((j_max + 2) as usize);
        for j in -1..=j_max {
            blocks.push(u.lp_block(j));
        }
        let mut partial = Vec::with_capacity((j_max + 2) as usize);
        let mut acc = blocks[0].clone(); // S_0 = Delta_{-1} u
        partial.push(acc.clone());
        for j in 0..=j_max {
            acc = acc.add(&blocks[(j + 1) as usize]);
            partial.push(acc.clone()); // S_{j+1}
        }
        BlockDecomposition {
            blocks,
            partial,
            zero: PeriodicField::zeros(&grid),
        }
    }

    pub fn j_max(&self) -> i32 {
        self.blocks.len() as i32 - 2
    }

    pub fn block(&self, j: i32) -> &PeriodicField {
        &self.blocks[(j + 1) as usize]
    }

    /// S_m u = sum of blocks j <= m - 1 (the zero field for m <= -1).
    pub fn partial_sum(&self, m: i32) -> &PeriodicField {
        if m < 0 {
            return &self.zero;
        }
        let idx = (m as usize).min(self.partial.len() - 1);
        &self.partial[idx]
    }
}

/// Paraproduct u <. v = sum_i S_{i-1} u Delta_i v (u modulated onto the
/// frequencies of v).
pub fn para_lt(u: &PeriodicField, v: &PeriodicField) -> Result<PeriodicField> {
    u.grid().same_grid(v.grid())?;
    para_lt_blocks(&BlockDecomposition::new(u), &BlockDecomposition::new(v))
}

pub fn para_lt_blocks(
    u: &BlockDecomposition,
    v: &BlockDecomposition,
) -> Result<PeriodicField> {
    let grid = u.blocks[0].grid().clone();
    let mut out = PeriodicField::zeros(&grid);
    // S_{i-1} vanishes for i <= 1, so start at i = 1.
    for i in 1..=u.j_max() {
        let term = multiply(u.partial_sum(i - 1), v.block(i))?;
        out = out.add(&term);
    }
    Ok(out)
}

/// Paraproduct u .> v = v <. u.
pub fn para_gt(u: &PeriodicField, v: &PeriodicField) -> Result<PeriodicField> {
    para_lt(v, u)
}

/// Resonant part u (.) v = sum over |i - j| <= 1 of Delta_i u Delta_j v.
pub fn resonant(u: &PeriodicField, v: &PeriodicField) -> Result<PeriodicField> {
    u.grid().same_grid(v.grid())?;
    resonant_blocks(&BlockDecomposition::new(u), &BlockDecomposition::new(v))
}

pub fn resonant_blocks(
    u: &BlockDecomposition,
    v: &BlockDecomposition,
) -> Result<PeriodicField> {
    let grid = u.blocks[0].grid().clone();
    let j_max = u.j_max();
    let mut out = PeriodicField::zeros(&grid);
    for i in -1..=j_max {
        for j in (i - 1).max(-1)..=(i + 1).min(j_max) {
            let term = multiply(u.block(i), v.block(j))?;
            out = out.add(&term);
        }
    }
    Ok(out)
}

/// Decomposition bundle for one product: (u <. v, u (.) v, u .> v).
pub fn bony_parts(
    u: &PeriodicField,
    v: &PeriodicField,
) -> Result<(PeriodicField, PeriodicField, PeriodicField)> {
    u.grid().same_grid(v.grid())?;
    let bu = BlockDecomposition::new(u);
    let bv = BlockDecomposition::new(v);
    let lt = para_lt_blocks(&bu, &bv)?;
    let res = resonant_blocks(&bu, &bv)?;
    let gt = para_lt_blocks(&bv, &bu)?;
    Ok((lt, res, gt))
}

/// Paraproduct commutator C1(g, f, h) = (g <. f) (.) h - g (f (.) h); smoother
/// than either term when the regularity exponents sum positively.
pub fn commutator_c1(
    g: &PeriodicField,
    f: &PeriodicField,
    h: &PeriodicField,
) -> Result<PeriodicField> {
    g.grid().same_grid(f.grid())?;
    g.grid().same_grid(h.grid())?;
    let first = resonant(&para_lt(g, f)?, h)?;
    let second = multiply(g, &resonant(f, h)?)?;
    Ok(first.sub(&second))
}

/// Convenience: strict low-frequency part used by the n-independence checks,
/// 1 <. v = v - Delta_{-1} v - Delta_0 v.
pub fn one_para_lt(v: &PeriodicField) -> PeriodicField {
    v.sub(&v.lp_block(-1)).sub(&v.lp_block(0))
}

fn _grid_of(b: &BlockDecomposition) -> &SpectralGrid {
    b.blocks[0].grid()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus_spectral::{random_band_limited, Lp, Lq, PeriodicField, SpectralGrid};

    fn grid1(n: usize) -> SpectralGrid {
        SpectralGrid::new(1, n).unwrap()
    }

    fn rel_err(a: &PeriodicField, b: &PeriodicField) -> f64 {
        a.sub(b).l2_norm() / b.l2_norm().max(1e-300)
    }

    #[test]
    fn bony_identity_reconstructs_product() {
        for (d, n, seed) in [(1usize, 64usize, 5u64), (1, 128, 6), (2, 32, 7)] {
            let grid = SpectralGrid::new(d, n).unwrap();
            let u = random_band_limited(&grid, n as i64 / 2 - 1, false, seed);
            let v = random_band_limited(&grid, n as i64 / 2 - 1, false, seed + 100);
            let (lt, res, gt) = bony_parts(&u, &v).unwrap();
            let sum = lt.add(&res).add(&gt);
            let direct = multiply(&u, &v).unwrap();
            let err = rel_err(&sum, &direct);
            assert!(err < 1e-11, "bony identity error {err} (d={d}, N={n})");
        }
    }

    #[test]
    fn paraproduct_of_one_drops_two_low_blocks() {
        let grid = grid1(64);
        let one = PeriodicField::constant(&grid, 1.0);
        let v = random_band_limited(&grid, 30, false, 11);
        let lt = para_lt(&one, &v).unwrap();
        let expect = one_para_lt(&v);
        assert!(rel_err(&lt, &expect) < 1e-12);
        // resonant part keeps exactly those two blocks
        let res = resonant(&one, &v).unwrap();
        let expect_res = v.lp_block(-1).add(&v.lp_block(0));
        assert!(res.sub(&expect_res).l2_norm() / v.l2_norm() < 1e-12);
    }

    #[test]
    fn resonant_of_block_interior_mode_with_itself() {
        // e_k (.) e_k = e_{2k} when k has a full block to itself.
        let grid = grid1(64);
        let u = PeriodicField::complex_mode(&grid, &[3]);
        let res = resonant(&u, &u).unwrap();
        let expect = PeriodicField::complex_mode(&grid, &[6]);
        assert!(res.sub(&expect).l2_norm() < 1e-12);
    }

    #[test]
    fn commutator_vanishes_if_any_argument_zero() {
        let grid = grid1(32);
        let zero = PeriodicField::zeros(&grid);
        let g = random_band_limited(&grid, 10, false, 1);
        let f = random_band_limited(&grid, 10, false, 2);
        assert_eq!(commutator_c1(&g, &zero, &f).unwrap().l2_norm(), 0.0);
        assert_eq!(commutator_c1(&g, &f, &zero).unwrap().l2_norm(), 0.0);
        assert_eq!(commutator_c1(&zero, &g, &f).unwrap().l2_norm(), 0.0);
    }

    #[test]
    fn paraproduct_estimate_constant_stable_under_refinement() {
        // || u <. v ||_{C^beta} <= C ||u||_inf ||v||_{C^beta}, C uniform in N.
        let beta = -0.55;
        let mut worst = Vec::new();
        for n in [32usize, 64, 128] {
            let grid = grid1(n);
            let mut c_n: f64 = 0.0;
            for seed in 0..30 {
                let u = random_band_limited(&grid, n as i64 / 2 - 1, false, 900 + seed);
                let v = random_band_limited(&grid, n as i64 / 2 - 1, false, 1900 + seed);
                let lt = para_lt(&u, &v).unwrap();
                let ratio = lt.besov_norm(beta, Lp::Inf, Lq::Inf)
                    / (u.lp_norm(Lp::Inf) * v.besov_norm(beta, Lp::Inf, Lq::Inf));
                c_n = c_n.max(ratio);
            }
            worst.push(c_n);
        }
        for &c in &worst {
            assert!(c < 3.0, "paraproduct constants {worst:?}");
        }
        // no growth with N: largest within 50% of smallest
        let lo = worst.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = worst.iter().cloned().fold(0.0, f64::max);
        assert!(hi / lo < 1.5, "paraproduct constants grow with N: {worst:?}");
    }

    #[test]
    fn commutator_smoothing_bounded_under_refinement() {
        // Fixed band-limited triple embedded on finer and finer grids: once
        // every intermediate product fits inside the band, C1 must be exactly
        // N-independent and its smoothed norm bounded.
        let sigma = 0.6;
        let beta = -0.4;
        let theta = sigma + beta + 0.7;
        let base = grid1(64);
        let make = |decay: f64, seed: u64| {
            random_band_limited(&base, 10, true, seed).apply_multiplier(|idx| {
                let n2 = base.freq_norm2(idx);
                if n2 == 0.0 {
                    0.0
                } else {
                    n2.powf(-decay / 2.0)
                }
            })
        };
        let g = make(1.1, 21);
        let f = make(sigma + 0.5, 22);
        let h = make(-beta + 0.5 - 1.0, 23);
        let mut norms = Vec::new();
        let mut restricted = Vec::new();
        for n in [64usize, 128, 256] {
            let grid = grid1(n);
            let c1 = commutator_c1(
                &g.embed_to(&grid).unwrap(),
                &f.embed_to(&grid).unwrap(),
                &h.embed_to(&grid).unwrap(),
            )
            .unwrap();
            // p = 2 block norms are Parseval-exact, hence N-independent here.
            norms.push(c1.besov_norm(theta, Lp::Two, Lq::Inf));
            restricted.push(c1.restrict_to(&base).unwrap());
        }
        for w in norms.windows(2) {
            assert!((w[0] - w[1]).abs() / w[0] < 1e-12, "norms {norms:?}");
        }
        assert!(norms[0].is_finite() && norms[0] > 0.0);
        for c in &restricted[1..] {
            assert!(c.sub(&restricted[0]).l2_norm() < 1e-12);
        }
    }

    #[test]
    fn grid_mismatch_rejected() {
        let a = random_band_limited(&grid1(32), 8, false, 1);
        let b = random_band_limited(&grid1(64), 8, false, 1);
        assert!(para_lt(&a, &b).is_err());
        assert!(resonant(&a, &b).is_err());
    }
}
