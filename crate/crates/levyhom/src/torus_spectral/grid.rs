use std::sync::Arc;

use crate::error::{Error, Result};

/// Radius up to which the low block p_{-1} is identically 1.
///
/// Must exceed sqrt(3)/2 so that after rescaling by 2^{-(j_max+1)} every
/// lattice point of a d <= 3 cube lands in the flat region and the dyadic
/// partition sums to exactly 1 on the whole truncated lattice.
pub const BLOCK_INNER_RADIUS: f64 = 0.875;

/// Radius at which p_{-1} support ends. Kept below 2 * BLOCK_INNER_RADIUS so
/// blocks with |i - j| > 1 have disjoint supports.
pub const BLOCK_OUTER_RADIUS: f64 = 1.5;

/// Tolerance for the partition-of-unity identity on the lattice.
pub const PARTITION_TOL: f64 = 1e-12;

fn ramp(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-1.0 / x).exp()
    }
}

/// C-infinity monotone step: 0 for t <= 0, 1 for t >= 1.
fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = ramp(t);
    let b = ramp(1.0 - t);
    a / (a + b)
}

/// Radial cutoff: 1 on [0, BLOCK_INNER_RADIUS], 0 beyond BLOCK_OUTER_RADIUS.
fn cutoff(r: f64) -> f64 {
    1.0 - smooth_step((r - BLOCK_INNER_RADIUS) / (BLOCK_OUTER_RADIUS - BLOCK_INNER_RADIUS))
}

/// Value of the dyadic block profile p_j at radius r (j = -1 is the ball
/// block, j >= 0 the annular blocks p_j(x) = p_0(2^{-j} x)).
pub fn block_profile(j: i32, r: f64) -> f64 {
    if j == -1 {
        cutoff(r)
    } else {
        let s = r / f64::powi(2.0, j);
        cutoff(s / 2.0) - cutoff(s)
    }
}

struct GridData {
    d: usize,
    n: usize,
    len: usize,
    j_max: i32,
    /// Integer frequency vector per flat index (FFT storage order), padded to 3.
    freq: Vec<[i64; 3]>,
    /// Squared Euclidean norm |k|^2 per flat index.
    freq_norm2: Vec<f64>,
    /// partition[j + 1][idx] = p_j(k_idx), j = -1 ..= j_max.
    partition: Vec<Vec<f64>>,
}

/// Collocation/frequency bookkeeping for the torus T^d sampled at N^d points.
///
/// Frequencies are the integer lattice {-N/2 .. N/2-1}^d stored in FFT order
/// (axis index i maps to k = i for i < N/2 and k = i - N otherwise). The
/// dyadic partition of unity is tabulated once per grid; construction fails
/// if it does not sum to 1 within PARTITION_TOL at every lattice point or if
/// non-adjacent blocks overlap.
#[derive(Clone)]
pub struct SpectralGrid(Arc<GridData>);

impl std::fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("d", &self.d())
            .field("n", &self.n())
            .field("j_max", &self.j_max())
            .finish()
    }
}

impl PartialEq for SpectralGrid {
    fn eq(&self, other: &Self) -> bool {
        self.d() == other.d() && self.n() == other.n()
    }
}

impl SpectralGrid {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::BadDimension(d));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::BadGridSize(n));
        }
        let j_max = (n.trailing_zeros() - 1) as i32;
        let len = n.pow(d as u32);

        let mut freq = Vec::with_capacity(len);
        let mut freq_norm2 = Vec::with_capacity(len);
        for idx in 0..len {
            let k = freq_of_flat_index(idx, d, n);
            let norm2: f64 = k.iter().map(|&c| (c * c) as f64).sum();
            freq.push(k);
            freq_norm2.push(norm2);
        }

        let mut partition = Vec::with_capacity((j_max + 2) as usize);
        for j in -1..=j_max {
            let row: Vec<f64> = freq_norm2
                .iter()
                .map(|&n2| block_profile(j, n2.sqrt()))
                .collect();
            partition.push(row);
        }

        // Partition of unity on the lattice.
        for idx in 0..len {
            let sum: f64 = partition.iter().map(|row| row[idx]).sum();
            if (sum - 1.0).abs() > PARTITION_TOL {
                return Err(Error::Partition(format!(
                    "sum over blocks at k = {:?} is {:.15} (N = {n}, d = {d})",
                    &freq[idx][..d],
                    sum
                )));
            }
        }
        // Non-adjacent blocks are disjoint.
        for i in -1..=j_max {
            for j in (i + 2)..=j_max {
                for idx in 0..len {
                    let a = partition[(i + 1) as usize][idx];
                    let b = partition[(j + 1) as usize][idx];
                    if a != 0.0 && b != 0.0 {
                        return Err(Error::Partition(format!(
                            "blocks {i} and {j} overlap at k = {:?}",
                            &freq[idx][..d]
                        )));
                    }
                }
            }
        }

        Ok(SpectralGrid(Arc::new(GridData {
            d,
            n,
            len,
            j_max,
            freq,
            freq_norm2,
            partition,
        })))
    }

    pub fn d(&self) -> usize {
        self.0.d
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.0.n
    }

    /// Total lattice size N^d.
    pub fn len(&self) -> usize {
        self.0.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Highest dyadic block index; blocks run j = -1 ..= j_max.
    pub fn j_max(&self) -> i32 {
        self.0.j_max
    }

    /// Integer frequency of the flat index (first d entries are meaningful).
    pub fn freq(&self, idx: usize) -> &[i64] {
        &self.0.freq[idx][..self.0.d]
    }

    /// Squared Euclidean norm |k|^2 of the frequency at the flat index.
    pub fn freq_norm2(&self, idx: usize) -> f64 {
        self.0.freq_norm2[idx]
    }

    /// p_j(k) at the flat index, j in -1 ..= j_max (0 outside that range).
    pub fn block_weight(&self, j: i32, idx: usize) -> f64 {
        if j < -1 || j > self.0.j_max {
            return 0.0;
        }
        self.0.partition[(j + 1) as usize][idx]
    }

    /// Flat index of an integer frequency vector (components simply reduced
    /// mod N, so any representative works).
    pub fn index_of_freq(&self, k: &[i64]) -> usize {
        let n = self.0.n as i64;
        let mut idx = 0usize;
        for &kc in k.iter().take(self.0.d) {
            let i = kc.rem_euclid(n) as usize;
            idx = idx * self.0.n + i;
        }
        idx
    }

    /// Collocation point x_idx in [0,1)^d for the flat index (row-major).
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let mut out = [0.0; 3];
        let mut rem = idx;
        for axis in (0..self.0.d).rev() {
            out[axis] = (rem % self.0.n) as f64 / self.0.n as f64;
            rem /= self.0.n;
        }
        out
    }

    pub fn same_grid(&self, other: &SpectralGrid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "(d = {}, N = {}) vs (d = {}, N = {})",
                self.d(),
                self.n(),
                other.d(),
                other.n()
            )));
        }
        Ok(())
    }
}

/// Integer frequency vector of a flat index on an N^d lattice in FFT order.
pub(crate) fn freq_of_flat_index(idx: usize, d: usize, n: usize) -> [i64; 3] {
    let mut out = [0i64; 3];
    let mut rem = idx;
    for axis in (0..d).rev() {
        let i = rem % n;
        rem /= n;
        out[axis] = if i < n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        };
    }
    out
}
