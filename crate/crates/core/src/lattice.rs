//! Nested Z² lattice code.
//!
//! The fine lattice is the integer grid and the coarse (shaping) lattice is
//! `coarse_scale · Z²`. Only the eight non-zero points of `{-1, 0, 1}²` are
//! used as codewords, giving 3 bits per symbol. Transmit-side power
//! normalization is carried by [`Codebook::tx_power_scale`]; quantization always
//! happens on the integer grid.
//!
//! Bit mapping (index = 3-bit group read MSB first):
//!
//! | index | point    |
//! |-------|----------|
//! | 0     | ( 1,  0) |
//! | 1     | ( 1,  1) |
//! | 2     | ( 0,  1) |
//! | 3     | (-1,  1) |
//! | 4     | ( 1, -1) |
//! | 5     | ( 0, -1) |
//! | 6     | (-1, -1) |
//! | 7     | (-1,  0) |
//!
//! Indices 0..=3 run counterclockwise from (1, 0); index `7 - b` is the
//! antipode of index `b`, so complementing a bit group negates its symbol.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_complex::Complex64;

use crate::error::{AirconError, Result};

/// A point of the fine lattice Z².
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct LatticePoint {
    pub re: i64,
    pub im: i64,
}

impl LatticePoint {
    pub const ORIGIN: LatticePoint = LatticePoint { re: 0, im: 0 };

    pub const fn new(re: i64, im: i64) -> Self {
        LatticePoint { re, im }
    }

    /// Real inner product, treating the point as a vector in R².
    pub fn dot(self, other: LatticePoint) -> i64 {
        self.re * other.re + self.im * other.im
    }

    pub fn norm_sqr(self) -> i64 {
        self.dot(self)
    }

    pub fn to_complex(self) -> Complex64 {
        Complex64::new(self.re as f64, self.im as f64)
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.re, self.im)
    }
}

impl Add for LatticePoint {
    type Output = LatticePoint;
    fn add(self, rhs: LatticePoint) -> LatticePoint {
        LatticePoint::new(self.re + rhs.re, self.im + rhs.im)
    }
}

impl AddAssign for LatticePoint {
    fn add_assign(&mut self, rhs: LatticePoint) {
        self.re += rhs.re;
        self.im += rhs.im;
    }
}

impl Sub for LatticePoint {
    type Output = LatticePoint;
    fn sub(self, rhs: LatticePoint) -> LatticePoint {
        LatticePoint::new(self.re - rhs.re, self.im - rhs.im)
    }
}

impl Neg for LatticePoint {
    type Output = LatticePoint;
    fn neg(self) -> LatticePoint {
        LatticePoint::new(-self.re, -self.im)
    }
}

impl Mul<i64> for LatticePoint {
    type Output = LatticePoint;
    fn mul(self, rhs: i64) -> LatticePoint {
        LatticePoint::new(self.re * rhs, self.im * rhs)
    }
}

const TABLE: [LatticePoint; 8] = [
    LatticePoint::new(1, 0),
    LatticePoint::new(1, 1),
    LatticePoint::new(0, 1),
    LatticePoint::new(-1, 1),
    LatticePoint::new(1, -1),
    LatticePoint::new(0, -1),
    LatticePoint::new(-1, -1),
    LatticePoint::new(-1, 0),
];

pub const BITS_PER_SYMBOL: usize = 3;

/// The eight-codeword outer-tier codebook of the nested Z² lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    points: [LatticePoint; 8],
    coarse_scale: i64,
    tx_power_scale: f64,
}

impl Default for Codebook {
    fn default() -> Self {
        build_codebook()
    }
}

/// Builds the codebook with `coarse_scale = 3` and unit average transmit power.
pub fn build_codebook() -> Codebook {
    let sigma_s2 = TABLE.iter().map(|p| p.norm_sqr() as f64).sum::<f64>() / TABLE.len() as f64;
    Codebook {
        points: TABLE,
        coarse_scale: 3,
        tx_power_scale: 1.0 / sigma_s2.sqrt(),
    }
}

impl Codebook {
    pub fn points(&self) -> &[LatticePoint; 8] {
        &self.points
    }

    pub fn bits_per_symbol(&self) -> usize {
        BITS_PER_SYMBOL
    }

    pub fn coarse_scale(&self) -> i64 {
        self.coarse_scale
    }

    /// Amplitude factor applied at transmit so that symbols have unit mean power.
    pub fn tx_power_scale(&self) -> f64 {
        self.tx_power_scale
    }

    /// Mean squared norm of the codewords (σ_s²).
    pub fn symbol_energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr() as f64).sum::<f64>() / self.points.len() as f64
    }

    /// Codeword for a 3-bit index. Panics if `index >= 8`.
    pub fn point(&self, index: u8) -> LatticePoint {
        self.points[index as usize]
    }

    /// Inverse of [`Codebook::point`].
    pub fn index_of(&self, p: LatticePoint) -> Option<u8> {
        self.points.iter().position(|&q| q == p).map(|i| i as u8)
    }

    pub fn contains(&self, p: LatticePoint) -> bool {
        self.index_of(p).is_some()
    }

    /// Writes the bit mapping table as `index,re,im` CSV.
    pub fn write_table_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index,re,im")?;
        for (i, p) in self.points.iter().enumerate() {
            writeln!(w, "{},{},{}", i, p.re, p.im)?;
        }
        Ok(())
    }
}

/// A hash mapped onto codebook symbols, one symbol per subcarrier.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HashSymbolVector {
    symbols: Vec<LatticePoint>,
}

impl HashSymbolVector {
    /// Wraps symbols after checking every one is a codeword.
    pub fn new(symbols: Vec<LatticePoint>, cb: &Codebook) -> Result<Self> {
        if let Some(bad) = symbols.iter().find(|p| !cb.contains(**p)) {
            return Err(AirconError::invalid(format!("{bad} is not a codeword")));
        }
        Ok(HashSymbolVector { symbols })
    }

    pub fn symbols(&self) -> &[LatticePoint] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn norm_sqr(&self) -> i64 {
        self.symbols.iter().map(|p| p.norm_sqr()).sum()
    }

    /// Inner product in R^(2N).
    pub fn dot(&self, other: &[LatticePoint]) -> i64 {
        self.symbols.iter().zip(other).map(|(a, b)| a.dot(*b)).sum()
    }

    /// Position-wise negation; stays in the codebook by negation closure.
    pub fn negated(&self) -> HashSymbolVector {
        HashSymbolVector {
            symbols: self.symbols.iter().map(|p| -*p).collect(),
        }
    }

    /// Recovers the (zero-padded) bit string.
    pub fn decode_bits(&self, cb: &Codebook) -> Vec<bool> {
        let mut bits = Vec::with_capacity(self.symbols.len() * BITS_PER_SYMBOL);
        for p in &self.symbols {
            let idx = cb.index_of(*p).expect("symbols are codewords by construction");
            for shift in (0..BITS_PER_SYMBOL).rev() {
                bits.push((idx >> shift) & 1 == 1);
            }
        }
        bits
    }

    pub(crate) fn from_symbols_unchecked(symbols: Vec<LatticePoint>) -> Self {
        HashSymbolVector { symbols }
    }
}

/// Maps `bits` to `⌈L/3⌉` codewords, zero-padding the last group.
pub fn encode_bits(bits: &[bool], cb: &Codebook) -> Result<HashSymbolVector> {
    if bits.is_empty() {
        return Err(AirconError::invalid("cannot encode an empty bit string"));
    }
    let symbols = bits
        .chunks(BITS_PER_SYMBOL)
        .map(|group| {
            let idx = (0..BITS_PER_SYMBOL).fold(0u8, |acc, i| {
                (acc << 1) | u8::from(group.get(i).copied().unwrap_or(false))
            });
            cb.point(idx)
        })
        .collect();
    Ok(HashSymbolVector { symbols })
}

/// Nearest fine-lattice point. Half-integer coordinates round toward the
/// smaller integer.
pub fn quantize_to_fine(y: Complex64) -> Result<LatticePoint> {
    if !y.re.is_finite() || !y.im.is_finite() {
        return Err(AirconError::invalid(format!("non-finite sample {y}")));
    }
    Ok(LatticePoint::new(round_half_down(y.re), round_half_down(y.im)))
}

fn round_half_down(x: f64) -> i64 {
    (x - 0.5).ceil() as i64
}

/// Reduces each coordinate into `[-q/2, q/2)` for `q = coarse_scale`.
pub fn mod_coarse(p: LatticePoint, cb: &Codebook) -> LatticePoint {
    let q = cb.coarse_scale;
    let half = q / 2;
    let reduce = |v: i64| (v + half).rem_euclid(q) - half;
    LatticePoint::new(reduce(p.re), reduce(p.im))
}
