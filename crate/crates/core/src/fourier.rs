//! Exact Fourier analysis over the Boolean cube `{0,1}^n`.
//!
//! Inputs `x` and subsets `S ⊆ [n]` are both encoded as `n`-bit integers:
//! bit `i` (0-based) stands for coordinate `i + 1`. Functions take values in
//! `{-1, +1}`; the character `χ_S(x) = (-1)^{popcount(S & x)}`.

use serde::{Deserialize, Serialize};

use crate::distribution::Distribution;
use crate::error::{QsqError, Result};

/// Largest supported dimension (truth tables of 65 536 entries).
pub const MAX_DIMENSION: usize = 16;

pub(crate) fn check_dimension(n: usize) -> Result<()> {
    if n == 0 || n > MAX_DIMENSION {
        return Err(QsqError::DimensionOutOfRange { found: n, max: MAX_DIMENSION });
    }
    Ok(())
}

/// `χ_S(x)` as ±1.
#[inline]
pub fn character(set: usize, x: usize) -> i8 {
    if (set & x).count_ones() & 1 == 0 {
        1
    } else {
        -1
    }
}

/// Truth table of a function `{0,1}^n → {-1,+1}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawFunction")]
pub struct BooleanFunction {
    n: usize,
    values: Vec<i8>,
}

#[derive(Deserialize)]
struct RawFunction {
    n: usize,
    values: Vec<i8>,
}

impl TryFrom<RawFunction> for BooleanFunction {
    type Error = QsqError;
    fn try_from(raw: RawFunction) -> Result<Self> {
        BooleanFunction::new(raw.n, raw.values)
    }
}

impl BooleanFunction {
    pub fn new(n: usize, values: Vec<i8>) -> Result<Self> {
        check_dimension(n)?;
        if values.len() != 1 << n {
            return Err(QsqError::InvalidTable(format!(
                "expected {} entries for n = {n}, found {}",
                1usize << n,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| **v != 1 && **v != -1) {
            return Err(QsqError::InvalidTable(format!("entry {bad} is not ±1")));
        }
        Ok(Self { n, values })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize) -> i8) -> Result<Self> {
        check_dimension(n)?;
        Self::new(n, (0..1usize << n).map(f).collect())
    }

    pub fn constant(n: usize, value: i8) -> Result<Self> {
        Self::from_fn(n, |_| value)
    }

    /// The character `χ_s`.
    pub fn parity(n: usize, s: usize) -> Result<Self> {
        if s >= 1 << n.min(63) {
            return Err(QsqError::InvalidParameter(format!("parity index {s} needs more than {n} bits")));
        }
        Self::from_fn(n, |x| character(s, x))
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    #[inline]
    pub fn value(&self, x: usize) -> i8 {
        self.values[x]
    }

    pub fn negated(&self) -> Self {
        Self { n: self.n, values: self.values.iter().map(|v| -v).collect() }
    }

    /// Packs the table one bit per input, least significant bit first
    /// (`+1 ↦ 0`, `-1 ↦ 1`).
    pub fn to_bitstring(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.values.len().div_ceil(8)];
        for (x, v) in self.values.iter().enumerate() {
            if *v == -1 {
                out[x / 8] |= 1 << (x % 8);
            }
        }
        out
    }

    pub fn from_bitstring(n: usize, bytes: &[u8]) -> Result<Self> {
        check_dimension(n)?;
        let len = 1usize << n;
        if bytes.len() != len.div_ceil(8) {
            return Err(QsqError::InvalidTable(format!(
                "bitstring of {} bytes does not hold {len} entries",
                bytes.len()
            )));
        }
        Self::from_fn(n, |x| if bytes[x / 8] >> (x % 8) & 1 == 1 { -1 } else { 1 })
    }
}

/// Unnormalised in-place Walsh–Hadamard butterfly.
pub(crate) fn butterfly<T>(data: &mut [T])
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Sub<Output = T>,
{
    let len = data.len();
    debug_assert!(len.is_power_of_two());
    let mut h = 1;
    while h < len {
        for block in data.chunks_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (u, v) = (*a, *b);
                *a = u + v;
                *b = u - v;
            }
        }
        h *= 2;
    }
}

/// Fourier coefficients `f̂(S)` in index order.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierSpectrum {
    n: usize,
    coefficients: Vec<f64>,
}

impl Serialize for FourierSpectrum {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.coefficients.serialize(s)
    }
}

impl<'de> Deserialize<'de> for FourierSpectrum {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let coefficients = Vec::<f64>::deserialize(d)?;
        FourierSpectrum::from_coefficients(coefficients).map_err(serde::de::Error::custom)
    }
}

impl FourierSpectrum {
    pub fn from_coefficients(coefficients: Vec<f64>) -> Result<Self> {
        let len = coefficients.len();
        if !len.is_power_of_two() || len < 2 {
            return Err(QsqError::InvalidTable(format!("spectrum length {len} is not 2^n with n ≥ 1")));
        }
        let n = len.trailing_zeros() as usize;
        check_dimension(n)?;
        Ok(Self { n, coefficients })
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    #[inline]
    pub fn coefficient(&self, set: usize) -> f64 {
        self.coefficients[set]
    }

    pub fn parseval_sum(&self) -> f64 {
        self.coefficients.iter().map(|c| c * c).sum()
    }

    /// Real-valued function `Σ_S f̂(S) χ_S`.
    pub fn inverse(&self) -> Vec<f64> {
        let mut buf = self.coefficients.clone();
        butterfly(&mut buf);
        buf
    }

    /// Sign of the inverse transform, with `sign(0) = +1`.
    pub fn to_boolean_function(&self) -> BooleanFunction {
        let values = self.inverse().into_iter().map(|v| if v < 0.0 { -1 } else { 1 }).collect();
        BooleanFunction { n: self.n, values }
    }

    /// `Σ_{S ∈ pattern} f̂(S)²`, enumerating only the free coordinates.
    pub fn mass(&self, pattern: &SubsetPattern) -> Result<f64> {
        if pattern.dimension() != self.n {
            return Err(QsqError::DimensionMismatch { expected: self.n, found: pattern.dimension() });
        }
        let ones = pattern.ones_mask();
        let free = pattern.free_mask();
        let mut total = 0.0;
        let mut sub = free;
        loop {
            let c = self.coefficients[ones | sub];
            total += c * c;
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & free;
        }
        Ok(total)
    }

    /// `Inf_i = Σ_{S ∋ i} f̂(S)²` for the 0-based coordinate `i`.
    pub fn influence(&self, coordinate: usize) -> Result<f64> {
        self.mass(&SubsetPattern::influence(self.n, coordinate)?)
    }
}

/// Fast transform: `f̂(S) = 2^{-n} Σ_x f(x) χ_S(x)`, computed exactly in
/// integers and scaled once.
pub fn walsh_hadamard_transform(f: &BooleanFunction) -> FourierSpectrum {
    let mut buf: Vec<i32> = f.values.iter().map(|&v| v as i32).collect();
    butterfly(&mut buf);
    let scale = 1.0 / buf.len() as f64;
    FourierSpectrum { n: f.n, coefficients: buf.into_iter().map(|v| v as f64 * scale).collect() }
}

pub fn influence(f: &BooleanFunction, coordinate: usize) -> Result<f64> {
    if coordinate >= f.n {
        return Err(QsqError::CoordinateOutOfRange { coordinate, n: f.n });
    }
    walsh_hadamard_transform(f).influence(coordinate)
}

pub fn fourier_mass(spectrum: &FourierSpectrum, pattern: &SubsetPattern) -> Result<f64> {
    spectrum.mass(pattern)
}

/// Exact `E_{x∼D}[f(x) g(x)]`.
pub fn correlation(f: &BooleanFunction, g: &BooleanFunction, dist: &Distribution) -> Result<f64> {
    if f.n != g.n {
        return Err(QsqError::DimensionMismatch { expected: f.n, found: g.n });
    }
    if dist.dimension() != f.n {
        return Err(QsqError::DimensionMismatch { expected: f.n, found: dist.dimension() });
    }
    Ok(f.values
        .iter()
        .zip(&g.values)
        .zip(dist.probs())
        .map(|((a, b), p)| p * (*a as f64) * (*b as f64))
        .sum())
}

/// Per-coordinate constraint of a [`SubsetPattern`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    MustBeOne,
    MustBeZero,
    Free,
}

/// A structured family of subsets: each coordinate is forced in, forced out,
/// or free. The matched family always holds exactly `2^{#free}` sets, so it is
/// never empty.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPattern")]
pub struct SubsetPattern {
    n: usize,
    constraints: Vec<Constraint>,
}

#[derive(Deserialize)]
struct RawPattern {
    n: usize,
    constraints: Vec<Constraint>,
}

impl TryFrom<RawPattern> for SubsetPattern {
    type Error = QsqError;
    fn try_from(raw: RawPattern) -> Result<Self> {
        SubsetPattern::new(raw.n, raw.constraints)
    }
}

impl SubsetPattern {
    pub fn new(n: usize, constraints: Vec<Constraint>) -> Result<Self> {
        check_dimension(n)?;
        if constraints.len() != n {
            return Err(QsqError::DimensionMismatch { expected: n, found: constraints.len() });
        }
        Ok(Self { n, constraints })
    }

    pub fn all_free(n: usize) -> Result<Self> {
        Self::new(n, vec![Constraint::Free; n])
    }

    /// `{S : i ∈ S}`.
    pub fn influence(n: usize, coordinate: usize) -> Result<Self> {
        Self::all_free(n)?.with(coordinate, Constraint::MustBeOne)
    }

    /// Bucket of sets whose restriction to the coordinates in `fixed` equals
    /// `prefix`; coordinates outside `fixed` are free.
    pub fn bucket(n: usize, fixed: usize, prefix: usize) -> Result<Self> {
        check_dimension(n)?;
        if fixed >> n != 0 || prefix & !fixed != 0 {
            return Err(QsqError::InvalidParameter(format!(
                "prefix {prefix:#b} is not contained in fixed coordinates {fixed:#b}"
            )));
        }
        let constraints = (0..n)
            .map(|i| match (fixed >> i & 1, prefix >> i & 1) {
                (0, _) => Constraint::Free,
                (_, 1) => Constraint::MustBeOne,
                _ => Constraint::MustBeZero,
            })
            .collect();
        Ok(Self { n, constraints })
    }

    pub fn with(mut self, coordinate: usize, constraint: Constraint) -> Result<Self> {
        if coordinate >= self.n {
            return Err(QsqError::CoordinateOutOfRange { coordinate, n: self.n });
        }
        self.constraints[coordinate] = constraint;
        Ok(self)
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    fn mask_of(&self, which: Constraint) -> usize {
        self.constraints
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == which)
            .fold(0, |m, (i, _)| m | 1 << i)
    }

    pub fn ones_mask(&self) -> usize {
        self.mask_of(Constraint::MustBeOne)
    }

    pub fn zeros_mask(&self) -> usize {
        self.mask_of(Constraint::MustBeZero)
    }

    pub fn free_mask(&self) -> usize {
        self.mask_of(Constraint::Free)
    }

    pub fn matches(&self, set: usize) -> bool {
        set & self.ones_mask() == self.ones_mask() && set & self.zeros_mask() == 0
    }

    /// Number of matched sets, `2^{#free}`.
    pub fn size(&self) -> usize {
        1 << self.free_mask().count_ones()
    }

    /// Matched sets in increasing order.
    pub fn members(&self) -> Vec<usize> {
        (0..1usize << self.n).filter(|s| self.matches(*s)).collect()
    }
}

impl std::fmt::Display for SubsetPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.constraints {
            f.write_str(match c {
                Constraint::MustBeOne => "1",
                Constraint::MustBeZero => "0",
                Constraint::Free => "*",
            })?;
        }
        Ok(())
    }
}
