//! Complex subcarrier × symbol matrices.
//!
//! A [`ComplexGrid`] carries transmitted signals, received signals and effective
//! channels. Element `(k, l)` is subcarrier `k`, OFDM symbol `l`. Each element
//! also carries an allocation flag: elements that are not allocated (or whose
//! transmit reference was too weak to divide by) are masked out and hold zero.

use num_complex::Complex64;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Axis metadata of a grid: the physical spacing between rows and columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub carrier_freq_hz: f64,
    /// Spacing between consecutive rows (subcarriers), after any decimation.
    pub subcarrier_spacing_hz: f64,
    /// Spacing between consecutive columns (symbols), after any decimation.
    pub symbol_period_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    subcarriers: usize,
    symbols: usize,
    data: Vec<Complex64>,
    allocated: Vec<bool>,
    meta: GridMeta,
}

impl ComplexGrid {
    pub fn zeros(subcarriers: usize, symbols: usize, meta: GridMeta) -> Self {
        Self {
            subcarriers,
            symbols,
            data: vec![Complex64::new(0.0, 0.0); subcarriers * symbols],
            allocated: vec![true; subcarriers * symbols],
            meta,
        }
    }

    pub fn from_fn(
        subcarriers: usize,
        symbols: usize,
        meta: GridMeta,
        mut f: impl FnMut(usize, usize) -> Complex64,
    ) -> Self {
        let mut data = Vec::with_capacity(subcarriers * symbols);
        for k in 0..subcarriers {
            for l in 0..symbols {
                data.push(f(k, l));
            }
        }
        Self {
            subcarriers,
            symbols,
            data,
            allocated: vec![true; subcarriers * symbols],
            meta,
        }
    }

    /// Builds a grid from row-major data. Panics if the length does not match.
    pub fn from_vec(
        subcarriers: usize,
        symbols: usize,
        meta: GridMeta,
        data: Vec<Complex64>,
    ) -> Self {
        assert_eq!(
            data.len(),
            subcarriers * symbols,
            "grid data length mismatch"
        );
        Self {
            subcarriers,
            symbols,
            allocated: vec![true; data.len()],
            data,
            meta,
        }
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.subcarriers, self.symbols)
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn set_meta(&mut self, meta: GridMeta) {
        self.meta = meta;
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize) -> Complex64 {
        self.data[k * self.symbols + l]
    }

    #[inline]
    pub fn set(&mut self, k: usize, l: usize, value: Complex64) {
        self.data[k * self.symbols + l] = value;
    }

    #[inline]
    pub fn is_allocated(&self, k: usize, l: usize) -> bool {
        self.allocated[k * self.symbols + l]
    }

    /// Masks element `(k, l)` out and zeroes it.
    pub fn mask_out(&mut self, k: usize, l: usize) {
        let i = k * self.symbols + l;
        self.allocated[i] = false;
        self.data[i] = Complex64::new(0.0, 0.0);
    }

    pub fn masked_count(&self) -> usize {
        self.allocated.iter().filter(|a| !**a).count()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn row(&self, k: usize) -> &[Complex64] {
        &self.data[k * self.symbols..(k + 1) * self.symbols]
    }

    pub fn allocation(&self) -> &[bool] {
        &self.allocated
    }

    pub(crate) fn set_allocation(&mut self, allocated: Vec<bool>) {
        assert_eq!(allocated.len(), self.data.len());
        self.allocated = allocated;
    }

    /// Elementwise sum. Panics on shape mismatch.
    pub fn add(&self, other: &ComplexGrid) -> ComplexGrid {
        assert_eq!(self.shape(), other.shape(), "grid shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        let allocated = self
            .allocated
            .iter()
            .zip(&other.allocated)
            .map(|(a, b)| *a && *b)
            .collect();
        ComplexGrid {
            subcarriers: self.subcarriers,
            symbols: self.symbols,
            data,
            allocated,
            meta: self.meta,
        }
    }

    /// Elementwise product. Panics on shape mismatch.
    pub fn hadamard(&self, other: &ComplexGrid) -> ComplexGrid {
        assert_eq!(self.shape(), other.shape(), "grid shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        ComplexGrid {
            subcarriers: self.subcarriers,
            symbols: self.symbols,
            data,
            allocated: self.allocated.clone(),
            meta: self.meta,
        }
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    meta: GridMeta,
    subcarriers: usize,
    symbols: usize,
    /// Nested `[k][l]` array of `[re, im]` pairs.
    data: Vec<Vec<[f64; 2]>>,
    /// Row-major indices of masked-out elements.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    masked: Vec<usize>,
}

impl Serialize for ComplexGrid {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let data = (0..self.subcarriers)
            .map(|k| self.row(k).iter().map(|z| [z.re, z.im]).collect())
            .collect();
        let masked = self
            .allocated
            .iter()
            .enumerate()
            .filter(|(_, a)| !**a)
            .map(|(i, _)| i)
            .collect();
        GridRepr {
            meta: self.meta,
            subcarriers: self.subcarriers,
            symbols: self.symbols,
            data,
            masked,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ComplexGrid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = GridRepr::deserialize(d)?;
        if repr.data.len() != repr.subcarriers || repr.data.iter().any(|r| r.len() != repr.symbols)
        {
            return Err(D::Error::custom(
                "grid data is not rectangular or does not match its shape",
            ));
        }
        let data: Vec<Complex64> = repr
            .data
            .iter()
            .flat_map(|row| row.iter().map(|p| Complex64::new(p[0], p[1])))
            .collect();
        let mut allocated = vec![true; data.len()];
        for i in repr.masked {
            if i >= allocated.len() {
                return Err(D::Error::custom("masked index out of range"));
            }
            allocated[i] = false;
        }
        Ok(ComplexGrid {
            subcarriers: repr.subcarriers,
            symbols: repr.symbols,
            data,
            allocated,
            meta: repr.meta,
        })
    }
}
