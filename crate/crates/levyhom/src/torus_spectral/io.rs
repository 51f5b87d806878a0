use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::field::{PeriodicField, VectorField};
use super::grid::SpectralGrid;
use crate::error::{Error, Result};

/// Portable field container: coefficients as interleaved re/im pairs in
/// row-major frequency order with each axis running k = -N/2 .. N/2-1,
/// components concatenated.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldData {
    pub d: usize,
    pub n: usize,
    pub components: usize,
    pub is_real: bool,
    pub re_im: Vec<f64>,
}

const BINARY_MAGIC: u32 = 0x4c48_4644; // "LHFD"

fn export_order(grid: &SpectralGrid) -> Vec<usize> {
    // row-major enumeration of k in {-N/2 .. N/2-1}^d mapped to flat FFT index
    let n = grid.n() as i64;
    let d = grid.d();
    let mut order = Vec::with_capacity(grid.len());
    let mut k = vec![-n / 2; d];
    loop {
        order.push(grid.index_of_freq(&k));
        let mut axis = d;
        while axis > 0 {
            axis -= 1;
            k[axis] += 1;
            if k[axis] < n / 2 {
                break;
            }
            k[axis] = -n / 2;
            if axis == 0 {
                return order;
            }
        }
        if d == 1 && k[0] == -n / 2 {
            return order;
        }
    }
}

impl FieldData {
    pub fn from_components(comps: &[PeriodicField]) -> Self {
        let grid = comps[0].grid();
        let order = export_order(grid);
        let mut re_im = Vec::with_capacity(2 * grid.len() * comps.len());
        let mut is_real = true;
        for comp in comps {
            is_real &= comp.is_real();
            for &idx in &order {
                let c = comp.coeffs()[idx];
                re_im.push(c.re);
                re_im.push(c.im);
            }
        }
        FieldData {
            d: grid.d(),
            n: grid.n(),
            components: comps.len(),
            is_real,
            re_im,
        }
    }

    pub fn from_scalar(f: &PeriodicField) -> Self {
        Self::from_components(std::slice::from_ref(f))
    }

    pub fn from_vector(f: &VectorField) -> Self {
        Self::from_components(f.comps())
    }

    pub fn to_components(&self) -> Result<Vec<PeriodicField>> {
        let grid = SpectralGrid::new(self.d, self.n)?;
        let expect = 2 * grid.len() * self.components;
        if self.re_im.len() != expect {
            return Err(Error::InvalidInput(format!(
                "field payload has {} floats, expected {expect}",
                self.re_im.len()
            )));
        }
        let order = export_order(&grid);
        let mut out = Vec::with_capacity(self.components);
        for c in 0..self.components {
            let base = 2 * grid.len() * c;
            let mut coeffs = vec![Complex64::default(); grid.len()];
            for (slot, &idx) in order.iter().enumerate() {
                coeffs[idx] = Complex64::new(
                    self.re_im[base + 2 * slot],
                    self.re_im[base + 2 * slot + 1],
                );
            }
            out.push(PeriodicField::from_coeffs(&grid, coeffs, self.is_real)?);
        }
        Ok(out)
    }

    pub fn to_scalar(&self) -> Result<PeriodicField> {
        let mut comps = self.to_components()?;
        if comps.len() != 1 {
            return Err(Error::InvalidInput(format!(
                "expected scalar field, found {} components",
                comps.len()
            )));
        }
        Ok(comps.pop().unwrap())
    }

    pub fn to_vector(&self) -> Result<VectorField> {
        VectorField::new(self.to_components()?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Flat little-endian binary: magic, d, n, components, is_real (u32 each)
    /// followed by the re/im payload.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        for word in [
            BINARY_MAGIC,
            self.d as u32,
            self.n as u32,
            self.components as u32,
            self.is_real as u32,
        ] {
            file.write_all(&word.to_le_bytes())?;
        }
        for v in &self.re_im {
            file.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path)?;
        let mut head = [0u8; 20];
        file.read_exact(&mut head)?;
        let word = |i: usize| u32::from_le_bytes(head[4 * i..4 * i + 4].try_into().unwrap());
        if word(0) != BINARY_MAGIC {
            return Err(Error::InvalidInput("bad field file magic".into()));
        }
        let (d, n, components, is_real) =
            (word(1) as usize, word(2) as usize, word(3) as usize, word(4) != 0);
        let mut payload = Vec::new();
        file.read_to_end(&mut payload)?;
        if payload.len() % 8 != 0 {
            return Err(Error::InvalidInput("truncated field payload".into()));
        }
        let re_im: Vec<f64> = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(FieldData {
            d,
            n,
            components,
            is_real,
            re_im,
        })
    }
}
