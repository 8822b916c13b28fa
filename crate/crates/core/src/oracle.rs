//! Observables on the labelled example register, exact expectations on the
//! (possibly noisy) example state, and the `Qstat` oracle with its tolerance
//! models and query ledger.
//!
//! The register has `n + 1` qubits. Basis index `x + (bit << n)` stands for
//! `|x, bit⟩`, where label bit 0 encodes the ±1 value `+1` and bit 1 encodes
//! `-1`.

use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::concepts::Concept;
use crate::distribution::Distribution;
use crate::error::{QsqError, Result};
use crate::exec::{sum_indexed, Execution};
use crate::fourier::{character, check_dimension, walsh_hadamard_transform, BooleanFunction, FourierSpectrum, SubsetPattern};
use crate::simulation::{hoeffding_copies, noisy_hoeffding_copies, MeasurementSampler};

/// Largest dimension for which dense observables are accepted.
pub const MAX_DENSE_DIMENSION: usize = 10;
/// Largest dimension for which the dense Fourier-mass projector is built.
pub const MAX_DENSE_PROJECTOR_DIMENSION: usize = 6;

const HERMITIAN_TOLERANCE: f64 = 1e-9;
const NORM_TOLERANCE: f64 = 1e-9;
/// Slack for float rounding in tolerance comparisons.
pub const CONTRACT_EPSILON: f64 = 1e-12;

#[inline]
pub fn label_bit(label: i8) -> usize {
    usize::from(label < 0)
}

#[inline]
pub fn basis_index(n: usize, x: usize, label: i8) -> usize {
    x | label_bit(label) << n
}

pub(crate) fn check_tolerance(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(QsqError::InvalidTolerance(tau))
    }
}

/// `M = Σ_{x,b} φ(x,b) |x,b⟩⟨x,b|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDiagonal")]
pub struct DiagonalObservable {
    n: usize,
    phi: Vec<f64>,
}

#[derive(Deserialize)]
struct RawDiagonal {
    n: usize,
    phi: Vec<f64>,
}

impl TryFrom<RawDiagonal> for DiagonalObservable {
    type Error = QsqError;
    fn try_from(raw: RawDiagonal) -> Result<Self> {
        DiagonalObservable::new(raw.n, raw.phi)
    }
}

impl DiagonalObservable {
    /// `phi` is indexed by [`basis_index`].
    pub fn new(n: usize, phi: Vec<f64>) -> Result<Self> {
        check_dimension(n)?;
        if phi.len() != 2 << n {
            return Err(QsqError::DimensionMismatch { expected: 2 << n, found: phi.len() });
        }
        if let Some(bad) = phi.iter().find(|v| !v.is_finite()) {
            return Err(QsqError::InvalidParameter(format!("phi entry {bad} is not finite")));
        }
        let norm = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if norm > 1.0 + NORM_TOLERANCE {
            return Err(QsqError::NormViolation(norm));
        }
        Ok(Self { n, phi })
    }

    pub fn from_fn(n: usize, phi: impl Fn(usize, i8) -> f64) -> Result<Self> {
        check_dimension(n)?;
        let len = 1usize << n;
        let table = (0..2 * len).map(|i| phi(i & (len - 1), if i < len { 1 } else { -1 })).collect();
        Self::new(n, table)
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn phi(&self, x: usize, label: i8) -> f64 {
        self.phi[basis_index(self.n, x, label)]
    }

    pub fn table(&self) -> &[f64] {
        &self.phi
    }
}

/// Hermitian matrix on the `(n+1)`-qubit register with its cached
/// eigendecomposition.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawDense", into = "RawDense")]
pub struct DenseObservable {
    n: usize,
    matrix: DMatrix<Complex<f64>>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<Complex<f64>>,
}

impl PartialEq for DenseObservable {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.matrix == other.matrix
    }
}

/// Row-major `[re, im]` pairs.
#[derive(Serialize, Deserialize)]
struct RawDense {
    n: usize,
    entries: Vec<[f64; 2]>,
}

impl TryFrom<RawDense> for DenseObservable {
    type Error = QsqError;
    fn try_from(raw: RawDense) -> Result<Self> {
        let dim = raw.entries.len();
        let side = 2usize << raw.n.min(MAX_DENSE_DIMENSION);
        if dim != side * side {
            return Err(QsqError::DimensionMismatch { expected: side * side, found: dim });
        }
        DenseObservable::new(
            raw.n,
            DMatrix::from_row_iterator(side, side, raw.entries.into_iter().map(|[re, im]| Complex::new(re, im))),
        )
    }
}

impl From<DenseObservable> for RawDense {
    fn from(d: DenseObservable) -> Self {
        let side = d.matrix.nrows();
        let entries = (0..side)
            .flat_map(|r| (0..side).map(move |c| (r, c)))
            .map(|(r, c)| {
                let z = d.matrix[(r, c)];
                [z.re, z.im]
            })
            .collect();
        RawDense { n: d.n, entries }
    }
}

impl DenseObservable {
    pub fn new(n: usize, matrix: DMatrix<Complex<f64>>) -> Result<Self> {
        check_dimension(n)?;
        if n > MAX_DENSE_DIMENSION {
            return Err(QsqError::DimensionOutOfRange { found: n, max: MAX_DENSE_DIMENSION });
        }
        let side = 2usize << n;
        if matrix.nrows() != side || matrix.ncols() != side {
            return Err(QsqError::DimensionMismatch { expected: side, found: matrix.nrows() });
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(QsqError::InvalidParameter("matrix entries must be finite".into()));
        }
        let deviation = (&matrix - matrix.adjoint()).iter().fold(0.0f64, |m, z| m.max(z.norm()));
        if deviation > HERMITIAN_TOLERANCE {
            return Err(QsqError::NotHermitian(deviation));
        }
        let eigen = SymmetricEigen::new(matrix.clone());
        let norm = eigen.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if norm > 1.0 + NORM_TOLERANCE {
            return Err(QsqError::NormViolation(norm));
        }
        Ok(Self { n, matrix, eigenvalues: eigen.eigenvalues, eigenvectors: eigen.eigenvectors })
    }

    pub fn identity(n: usize) -> Result<Self> {
        check_dimension(n)?;
        let side = 2usize << n.min(MAX_DENSE_DIMENSION);
        Self::new(n, DMatrix::identity(side, side))
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &DMatrix<Complex<f64>> {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<Complex<f64>> {
        &self.eigenvectors
    }

    pub fn operator_norm(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Born-rule distribution of eigenvalue outcomes for a real state vector.
    pub(crate) fn born_probabilities(&self, amplitudes: &[(usize, f64)]) -> Vec<f64> {
        (0..self.eigenvalues.len())
            .map(|k| {
                let col = self.eigenvectors.column(k);
                let overlap: Complex<f64> = amplitudes.iter().map(|&(i, a)| col[i].conj() * a).sum();
                overlap.norm_sqr()
            })
            .collect()
    }
}

/// Observable handed to the oracle. Every variant has operator norm ≤ 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    Diagonal(DiagonalObservable),
    /// `H^{⊗(n+1)} (P_T ⊗ |1⟩⟨1|) H^{⊗(n+1)}` for the pattern's family `T`,
    /// evaluated in closed form.
    FourierMass { pattern: SubsetPattern },
    Dense(DenseObservable),
}

impl Observable {
    pub fn dimension(&self) -> usize {
        match self {
            Observable::Diagonal(d) => d.dimension(),
            Observable::FourierMass { pattern } => pattern.dimension(),
            Observable::Dense(d) => d.dimension(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Observable::Diagonal(_) => "diagonal",
            Observable::FourierMass { .. } => "fourier_mass",
            Observable::Dense(_) => "dense",
        }
    }

    pub fn summary(&self) -> String {
        match self {
            Observable::FourierMass { pattern } => format!("fourier_mass[{pattern}]"),
            other => other.kind().to_string(),
        }
    }
}

/// The Fourier-mass projector for `pattern`.
pub fn fourier_mass_observable(pattern: SubsetPattern) -> Observable {
    Observable::FourierMass { pattern }
}

pub fn diagonal_from_phi(n: usize, phi: Vec<f64>) -> Result<Observable> {
    Ok(Observable::Diagonal(DiagonalObservable::new(n, phi)?))
}

/// `φ(x,b) = b·χ_S(x)`; its noiseless uniform expectation is `ĉ(S)`.
pub fn coefficient_observable(n: usize, set: usize) -> Result<Observable> {
    if set >> n != 0 {
        return Err(QsqError::InvalidParameter(format!("set {set} needs more than {n} bits")));
    }
    Ok(Observable::Diagonal(DiagonalObservable::from_fn(n, |x, b| (b * character(set, x)) as f64)?))
}

/// Materialises the Fourier-mass projector as a dense matrix.
pub fn fourier_mass_dense(pattern: &SubsetPattern) -> Result<DenseObservable> {
    let n = pattern.dimension();
    if n > MAX_DENSE_PROJECTOR_DIMENSION {
        return Err(QsqError::DimensionOutOfRange { found: n, max: MAX_DENSE_PROJECTOR_DIMENSION });
    }
    let side = 2usize << n;
    let keys: Vec<usize> = pattern.members().into_iter().map(|s| s | 1 << n).collect();
    let scale = 1.0 / side as f64;
    let m = DMatrix::from_fn(side, side, |i, j| {
        let v: f64 = keys
            .iter()
            .map(|&k| if ((i & k).count_ones() + (j & k).count_ones()) % 2 == 0 { 1.0 } else { -1.0 })
            .sum();
        Complex::new(v * scale, 0.0)
    });
    DenseObservable::new(n, m)
}

/// The hidden concept, the example distribution and the label-noise rate.
#[derive(Clone, Debug)]
pub struct ExampleSpec {
    concept: Arc<BooleanFunction>,
    spectrum: Arc<FourierSpectrum>,
    dist: Arc<Distribution>,
    eta: f64,
}

impl ExampleSpec {
    pub fn new<C: Concept + ?Sized>(concept: &C, dist: Distribution, eta: f64) -> Result<Self> {
        let f = concept.to_boolean_function()?;
        if f.dimension() != dist.dimension() {
            return Err(QsqError::DimensionMismatch { expected: f.dimension(), found: dist.dimension() });
        }
        if !(0.0..0.5).contains(&eta) {
            return Err(QsqError::InvalidParameter(format!("noise rate {eta} must lie in [0, 1/2)")));
        }
        let spectrum = walsh_hadamard_transform(&f);
        Ok(Self { concept: Arc::new(f), spectrum: Arc::new(spectrum), dist: Arc::new(dist), eta })
    }

    pub fn uniform<C: Concept + ?Sized>(concept: &C) -> Result<Self> {
        Self::new(concept, Distribution::uniform(concept.dimension())?, 0.0)
    }

    pub fn dimension(&self) -> usize {
        self.concept.dimension()
    }

    pub fn concept(&self) -> &BooleanFunction {
        &self.concept
    }

    pub fn spectrum(&self) -> &FourierSpectrum {
        &self.spectrum
    }

    pub fn distribution(&self) -> &Distribution {
        &self.dist
    }

    pub fn noise_rate(&self) -> f64 {
        self.eta
    }

    pub fn with_noise(&self, eta: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&eta) {
            return Err(QsqError::InvalidParameter(format!("noise rate {eta} must lie in [0, 1/2)")));
        }
        Ok(Self { eta, ..self.clone() })
    }

    pub fn noiseless(&self) -> Self {
        Self { eta: 0.0, ..self.clone() }
    }

    fn check_observable(&self, m: &Observable) -> Result<()> {
        if m.dimension() != self.dimension() {
            return Err(QsqError::DimensionMismatch { expected: self.dimension(), found: m.dimension() });
        }
        if matches!(m, Observable::FourierMass { .. }) && !self.dist.is_uniform() {
            return Err(QsqError::Unsupported(
                "Fourier-mass observables require the uniform example distribution".into(),
            ));
        }
        Ok(())
    }
}

/// Exact `E_b ⟨ψ_b|M|ψ_b⟩` where `|ψ_b⟩ = Σ_x √D(x) |x, c(x)⊕b_x⟩` and the
/// `b_x` are independent Bernoulli(η) flips (`η = 0` gives the pure state).
pub fn exact_expectation(spec: &ExampleSpec, m: &Observable) -> Result<f64> {
    spec.check_observable(m)?;
    let eta = spec.eta;
    let n = spec.dimension();
    let c = &spec.concept;
    let d = &spec.dist;
    match m {
        Observable::Diagonal(obs) => Ok(sum_indexed(Execution::default(), 1 << n, |x| {
            let label = c.value(x);
            d.prob(x) * ((1.0 - eta) * obs.phi(x, label) + eta * obs.phi(x, -label))
        })),
        Observable::FourierMass { pattern } => {
            // Averaging ĝ_b(S)² over the flips gives ρ² f̂(S)² + (1 − ρ²) 2^{-n}.
            let rho2 = (1.0 - 2.0 * eta).powi(2);
            let mass = spec.spectrum.mass(pattern)?;
            let flat = pattern.size() as f64 / (1usize << n) as f64;
            Ok(0.5 * (rho2 * mass + (1.0 - rho2) * flat))
        }
        Observable::Dense(obs) => Ok(dense_expectation(spec, obs)),
    }
}

fn dense_expectation(spec: &ExampleSpec, obs: &DenseObservable) -> f64 {
    let n = spec.dimension();
    let len = 1usize << n;
    let eta = spec.eta;
    let m = &obs.matrix;
    // v[(x,a)] = √D(x)·p_x(a); ρ = v vᵀ off the x-diagonal blocks and
    // D(x)·diag(p_x) on them.
    let mut v = vec![0.0; 2 * len];
    for x in 0..len {
        let amp = spec.dist.prob(x).sqrt();
        let own = basis_index(n, x, spec.concept.value(x));
        v[own] += amp * (1.0 - eta);
        v[own ^ len] += amp * eta;
    }
    let quadratic = sum_indexed(Execution::default(), 2 * len, |i| {
        if v[i] == 0.0 {
            return 0.0;
        }
        v[i] * (0..2 * len).map(|j| m[(i, j)].re * v[j]).sum::<f64>()
    });
    if eta == 0.0 {
        return quadratic;
    }
    let block: f64 = (0..len)
        .map(|x| {
            let p = spec.dist.prob(x);
            let own = basis_index(n, x, spec.concept.value(x));
            let other = own ^ len;
            let (q0, q1) = (1.0 - eta, eta);
            let coherent = q0 * q0 * m[(own, own)].re
                + q1 * q1 * m[(other, other)].re
                + q0 * q1 * (m[(own, other)].re + m[(other, own)].re);
            let mixed = q0 * m[(own, own)].re + q1 * m[(other, other)].re;
            p * (mixed - coherent)
        })
        .sum();
    quadratic + block
}

/// How a simulated oracle turns the exact expectation into an answer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ToleranceModel {
    Exact,
    /// Rounds the truth to the nearest multiple of `2·min(tau, τ_query)`.
    GridAdversary { tau: f64 },
    /// Mean of `copies` single-copy measurements.
    Sampling { copies: usize, seed: u64 },
    /// Mean of the Hoeffding number of copies for each query's tolerance and
    /// the per-query failure share. With label noise the answers target the
    /// noiseless expectation, so the oracle presents itself as noiseless.
    Hoeffding { delta_share: f64, seed: u64 },
}

/// One logged query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub index: usize,
    pub kind: String,
    pub summary: String,
    pub tau: f64,
    pub alpha: f64,
    pub exact: Option<f64>,
    pub copies: Option<usize>,
}

impl QueryRecord {
    pub fn abs_error(&self) -> Option<f64> {
        self.exact.map(|e| (self.alpha - e).abs())
    }

    pub fn within_tolerance(&self) -> Option<bool> {
        self.abs_error().map(|e| e <= self.tau + CONTRACT_EPSILON)
    }
}

#[derive(Serialize)]
struct QueryCsvRow<'a> {
    query_index: usize,
    kind: &'a str,
    tau: f64,
    alpha: f64,
    exact: Option<f64>,
    abs_error: Option<f64>,
}

/// Append-only ledger of answered queries.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryLog {
    records: Vec<QueryRecord>,
}

impl QueryLog {
    pub fn push(
        &mut self,
        m: &Observable,
        tau: f64,
        alpha: f64,
        exact: Option<f64>,
        copies: Option<usize>,
    ) -> &QueryRecord {
        let index = self.records.len();
        self.records.push(QueryRecord {
            index,
            kind: m.kind().to_string(),
            summary: m.summary(),
            tau,
            alpha,
            exact,
            copies,
        });
        &self.records[index]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[QueryRecord] {
        &self.records
    }

    pub fn min_tolerance(&self) -> Option<f64> {
        self.records.iter().map(|r| r.tau).reduce(f64::min)
    }

    /// Records whose answer lies outside the query's tolerance.
    pub fn violations(&self) -> Vec<&QueryRecord> {
        self.records.iter().filter(|r| r.within_tolerance() == Some(false)).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(QueryCsvRow {
                query_index: r.index,
                kind: &r.kind,
                tau: r.tau,
                alpha: r.alpha,
                exact: r.exact,
                abs_error: r.abs_error(),
            })?;
        }
        let bytes = w.into_inner().map_err(|e| QsqError::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| QsqError::Format(e.to_string()))
    }
}

/// Anything that answers statistical queries on quantum examples.
pub trait Qstat {
    fn dimension(&self) -> usize;

    /// The example distribution, known to the learner.
    fn distribution(&self) -> &Distribution;

    /// Label-noise rate of the answers' target state.
    fn noise_rate(&self) -> f64;

    /// Returns some `α` with `|α − ⟨ψ|M|ψ⟩| ≤ tau`.
    fn qstat(&mut self, m: &Observable, tau: f64) -> Result<f64>;

    fn query_count(&self) -> usize;
}

/// Simulated oracle bound to one hidden example specification.
#[derive(Debug)]
pub struct Oracle {
    spec: ExampleSpec,
    model: ToleranceModel,
    log: QueryLog,
    sampler: Option<MeasurementSampler>,
}

impl Oracle {
    pub fn new(spec: ExampleSpec, model: ToleranceModel) -> Result<Self> {
        let sampler = match &model {
            ToleranceModel::Exact => None,
            ToleranceModel::GridAdversary { tau } => {
                check_tolerance(*tau)?;
                None
            }
            ToleranceModel::Sampling { copies, seed } => {
                if *copies == 0 {
                    return Err(QsqError::InvalidParameter("sampling needs at least one copy".into()));
                }
                Some(MeasurementSampler::new(spec.clone(), *seed, 0))
            }
            ToleranceModel::Hoeffding { delta_share, seed } => {
                if !(*delta_share > 0.0 && *delta_share < 1.0) {
                    return Err(QsqError::InvalidParameter(format!("delta share {delta_share} must lie in (0,1)")));
                }
                Some(MeasurementSampler::new(spec.clone(), *seed, 0))
            }
        };
        Ok(Self { spec, model, log: QueryLog::default(), sampler })
    }

    pub fn exact(spec: ExampleSpec) -> Self {
        Self::new(spec, ToleranceModel::Exact).expect("exact model has no parameters")
    }

    pub fn spec(&self) -> &ExampleSpec {
        &self.spec
    }

    pub fn model(&self) -> &ToleranceModel {
        &self.model
    }

    pub fn log(&self) -> &QueryLog {
        &self.log
    }

    /// The value the model's answers must approximate.
    pub fn target(&self, m: &Observable) -> Result<f64> {
        match self.model {
            ToleranceModel::Hoeffding { .. } => exact_expectation(&self.spec.noiseless(), m),
            _ => exact_expectation(&self.spec, m),
        }
    }
}

impl Qstat for Oracle {
    fn dimension(&self) -> usize {
        self.spec.dimension()
    }

    fn distribution(&self) -> &Distribution {
        self.spec.distribution()
    }

    fn noise_rate(&self) -> f64 {
        match self.model {
            ToleranceModel::Hoeffding { .. } => 0.0,
            _ => self.spec.eta,
        }
    }

    fn qstat(&mut self, m: &Observable, tau: f64) -> Result<f64> {
        check_tolerance(tau)?;
        let truth = self.target(m)?;
        let (alpha, copies) = match self.model {
            ToleranceModel::Exact => (truth, None),
            ToleranceModel::GridAdversary { tau: model_tau } => {
                let spacing = 2.0 * model_tau.min(tau);
                ((truth / spacing).round() * spacing, None)
            }
            ToleranceModel::Sampling { copies, .. } => {
                let sampler = self.sampler.as_mut().expect("sampling model owns a sampler");
                (sampler.mean_outcome(m, copies)?, Some(copies))
            }
            ToleranceModel::Hoeffding { delta_share, .. } => {
                let eta = self.spec.eta;
                let copies =
                    if eta == 0.0 { hoeffding_copies(tau, delta_share)? } else { noisy_hoeffding_copies(tau, eta, delta_share)? };
                let sampler = self.sampler.as_mut().expect("hoeffding model owns a sampler");
                (sampler.mean_outcome(m, copies)?, Some(copies))
            }
        };
        self.log.push(m, tau, alpha, Some(truth), copies);
        Ok(alpha)
    }

    fn query_count(&self) -> usize {
        self.log.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::{random_concept, ConceptKind, ParityConcept};
    use crate::fourier::Constraint;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn maj3() -> BooleanFunction {
        BooleanFunction::from_fn(3, |x| if x.count_ones() >= 2 { -1 } else { 1 }).unwrap()
    }

    // Dense state-vector oracle: |ψ⟩ built explicitly, ⟨ψ|M|ψ⟩ by full contraction.
    fn dense_reference(f: &BooleanFunction, d: &Distribution, m: &DenseObservable) -> f64 {
        let n = f.dimension();
        let side = 2usize << n;
        let psi = DVector::from_fn(side, |i, _| {
            let x = i & ((1 << n) - 1);
            let want = basis_index(n, x, f.value(x));
            Complex::new(if i == want { d.prob(x).sqrt() } else { 0.0 }, 0.0)
        });
        (psi.adjoint() * m.matrix() * &psi)[(0, 0)].re
    }

    #[test]
    fn coefficient_queries_recover_fourier_coefficients() {
        let spec = ExampleSpec::uniform(&maj3()).unwrap();
        for (set, want) in [(0b001, 0.5), (0b111, -0.5), (0b011, 0.0), (0, 0.0)] {
            let m = coefficient_observable(3, set).unwrap();
            assert_abs_diff_eq!(exact_expectation(&spec, &m).unwrap(), want, epsilon = 1e-12);
        }
        let ones = diagonal_from_phi(3, vec![1.0; 16]).unwrap();
        let noisy = spec.with_noise(0.3).unwrap();
        assert_abs_diff_eq!(exact_expectation(&noisy, &ones).unwrap(), 1.0, epsilon = 1e-12);
        let skew = Distribution::from_weights(3, (1..=8).map(f64::from).collect()).unwrap();
        let spec = ExampleSpec::new(&maj3(), skew.clone(), 0.0).unwrap();
        let label = Observable::Diagonal(DiagonalObservable::from_fn(3, |_, b| b as f64).unwrap());
        let mean: f64 = (0..8).map(|x| skew.prob(x) * maj3().value(x) as f64).sum();
        assert_abs_diff_eq!(exact_expectation(&spec, &label).unwrap(), mean, epsilon = 1e-12);
    }

    #[test]
    fn fourier_mass_values() {
        let spec = ExampleSpec::uniform(&maj3()).unwrap();
        let all = fourier_mass_observable(SubsetPattern::all_free(3).unwrap());
        assert_abs_diff_eq!(exact_expectation(&spec, &all).unwrap(), 0.5, epsilon = 1e-12);
        let p = ParityConcept::new(6, 0b100110).unwrap();
        let spec = ExampleSpec::uniform(&p).unwrap();
        for i in 0..6 {
            let m = fourier_mass_observable(SubsetPattern::influence(6, i).unwrap());
            let want = if 0b100110 >> i & 1 == 1 { 0.5 } else { 0.0 };
            assert_abs_diff_eq!(exact_expectation(&spec, &m).unwrap(), want, epsilon = 1e-12);
        }
        let skew = Distribution::from_weights(3, (1..=8).map(f64::from).collect()).unwrap();
        let spec = ExampleSpec::new(&maj3(), skew, 0.0).unwrap();
        assert!(matches!(exact_expectation(&spec, &all), Err(QsqError::Unsupported(_))));
    }

    #[test]
    fn gl_bucket_is_half_the_bucket_mass() {
        let f = random_concept(&ConceptKind::Dnf { n: 6, terms: 2, literal_prob: 0.4 }, 5)
            .unwrap()
            .to_boolean_function()
            .unwrap();
        let spec = ExampleSpec::uniform(&f).unwrap();
        let spectrum = walsh_hadamard_transform(&f);
        // Q = {0,1,2}, S ∩ Q = {0,2}.
        let pattern = SubsetPattern::bucket(6, 0b000111, 0b000101).unwrap();
        let want: f64 = (0..8).map(|v| spectrum.coefficient(0b101 | v << 3).powi(2)).sum::<f64>() / 2.0;
        let got = exact_expectation(&spec, &fourier_mass_observable(pattern)).unwrap();
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn dense_projector_matches_state_vector_value() {
        let f = maj3();
        let u = Distribution::uniform(3).unwrap();
        let pattern = SubsetPattern::all_free(3).unwrap().with(0, Constraint::MustBeOne).unwrap();
        let dense = fourier_mass_dense(&pattern).unwrap();
        assert!((dense.operator_norm() - 1.0).abs() < 1e-9);
        let want = dense_reference(&f, &u, &dense);
        let spec = ExampleSpec::uniform(&f).unwrap();
        assert_abs_diff_eq!(exact_expectation(&spec, &Observable::Dense(dense)).unwrap(), want, epsilon = 1e-12);
        assert_abs_diff_eq!(
            exact_expectation(&spec, &fourier_mass_observable(pattern)).unwrap(),
            want,
            epsilon = 1e-9
        );
    }

    #[test]
    fn dense_validation() {
        let side = 4;
        let mut m = DMatrix::from_element(side, side, Complex::new(0.0, 0.0));
        m[(0, 1)] = Complex::new(0.0, 0.5);
        assert!(matches!(DenseObservable::new(1, m.clone()), Err(QsqError::NotHermitian(_))));
        m[(1, 0)] = Complex::new(0.0, -0.5);
        assert!(DenseObservable::new(1, m.clone()).is_ok());
        let big = DMatrix::identity(side, side) * Complex::new(1.5, 0.0);
        assert!(matches!(DenseObservable::new(1, big), Err(QsqError::NormViolation(_))));
        assert!(diagonal_from_phi(1, vec![1.2, 0.0, 0.0, 0.0]).is_err());
        assert!(DenseObservable::new(11, DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn dense_noisy_expectation_matches_explicit_average() {
        // Average ⟨ψ_b|M|ψ_b⟩ over all 2^{2^n} flip patterns for n = 2.
        let f = BooleanFunction::new(2, vec![1, -1, -1, -1]).unwrap();
        let d = Distribution::from_weights(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let raw = DMatrix::from_fn(8, 8, |i, j| Complex::new(((i * 3 + j * 5) % 7) as f64 - 3.0, (i as f64) - (j as f64)));
        let herm = (&raw + raw.adjoint()) * Complex::new(1.0 / 64.0, 0.0);
        let obs = DenseObservable::new(2, herm).unwrap();
        let eta = 0.2;
        let mut want = 0.0;
        for b in 0..16usize {
            let realized = BooleanFunction::from_fn(2, |x| f.value(x) * if b >> x & 1 == 1 { -1 } else { 1 }).unwrap();
            let w: f64 = (0..4).map(|x| if b >> x & 1 == 1 { eta } else { 1.0 - eta }).product();
            want += w * dense_reference(&realized, &d, &obs);
        }
        let spec = ExampleSpec::new(&f, d, eta).unwrap();
        assert_abs_diff_eq!(exact_expectation(&spec, &Observable::Dense(obs)).unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn noisy_fourier_mass_matches_explicit_average() {
        let f = maj3();
        let eta = 0.15;
        let pattern = SubsetPattern::all_free(3).unwrap().with(2, Constraint::MustBeZero).unwrap();
        let mut want = 0.0;
        for b in 0..256usize {
            let realized = BooleanFunction::from_fn(3, |x| f.value(x) * if b >> x & 1 == 1 { -1 } else { 1 }).unwrap();
            let w: f64 = (0..8).map(|x| if b >> x & 1 == 1 { eta } else { 1.0 - eta }).product();
            want += w * 0.5 * walsh_hadamard_transform(&realized).mass(&pattern).unwrap();
        }
        let spec = ExampleSpec::new(&f, Distribution::uniform(3).unwrap(), eta).unwrap();
        let got = exact_expectation(&spec, &fourier_mass_observable(pattern)).unwrap();
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn grid_adversary_rounds_to_spacing() {
        // Truth 0.13 comes from a label-mean observable with a skewed table.
        let f = BooleanFunction::constant(1, 1).unwrap();
        let spec = ExampleSpec::uniform(&f).unwrap();
        let m = diagonal_from_phi(1, vec![0.13, 0.13, 0.0, 0.0]).unwrap();
        let mut oracle = Oracle::new(spec, ToleranceModel::GridAdversary { tau: 0.1 }).unwrap();
        assert_abs_diff_eq!(oracle.qstat(&m, 0.1).unwrap(), 0.2, epsilon = 1e-12);
        assert_eq!(oracle.query_count(), 1);
        assert!(oracle.log().violations().is_empty());
        assert!(matches!(oracle.qstat(&m, 0.0), Err(QsqError::InvalidTolerance(_))));
        assert_eq!(oracle.query_count(), 1);
    }

    #[test]
    fn log_csv_layout() {
        let spec = ExampleSpec::uniform(&maj3()).unwrap();
        let mut oracle = Oracle::exact(spec);
        oracle.qstat(&coefficient_observable(3, 1).unwrap(), 0.25).unwrap();
        let csv = oracle.log().to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("query_index,kind,tau,alpha,exact,abs_error"));
        assert_eq!(lines.next(), Some("0,diagonal,0.25,0.5,0.5,0.0"));
    }

    #[test]
    fn observable_json() {
        let m = fourier_mass_observable(SubsetPattern::influence(2, 1).unwrap());
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(
            json,
            r#"{"kind":"fourier_mass","pattern":{"n":2,"constraints":["free","must_be_one"]}}"#
        );
        assert_eq!(serde_json::from_str::<Observable>(&json).unwrap(), m);
        let d = Observable::Dense(DenseObservable::identity(1).unwrap());
        let back: Observable = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(back, d);
        let bad = r#"{"kind":"diagonal","n":1,"phi":[2.0,0.0,0.0,0.0]}"#;
        assert!(serde_json::from_str::<Observable>(bad).is_err());
    }

    fn random_pattern(n: usize, code: u64) -> SubsetPattern {
        let constraints = (0..n)
            .map(|i| match code >> (2 * i) & 3 {
                0 => Constraint::MustBeOne,
                1 => Constraint::MustBeZero,
                _ => Constraint::Free,
            })
            .collect();
        SubsetPattern::new(n, constraints).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn structured_and_dense_projectors_agree(n in 1usize..=4, seed in any::<u64>(), code in any::<u64>()) {
            let f = random_concept(&ConceptKind::Dnf { n, terms: 2, literal_prob: 0.5 }, seed)
                .unwrap()
                .to_boolean_function()
                .unwrap();
            let pattern = random_pattern(n, code);
            let spec = ExampleSpec::uniform(&f).unwrap();
            let dense = fourier_mass_dense(&pattern).unwrap();
            let structured = exact_expectation(&spec, &fourier_mass_observable(pattern)).unwrap();
            prop_assert!((structured - exact_expectation(&spec, &Observable::Dense(dense)).unwrap()).abs() <= 1e-9);
        }

        #[test]
        fn diagonal_mixture_identity(seed in any::<u64>(), which in 0usize..3) {
            let eta = [0.0, 0.1, 0.3][which];
            let f = random_concept(&ConceptKind::Junta { n: 6, k: 3 }, seed).unwrap();
            let phi: Vec<f64> = (0..128).map(|i| (i as f64 * 0.731 + seed as f64).sin()).collect();
            let obs = DiagonalObservable::new(6, phi).unwrap();
            let d = Distribution::from_weights(6, (0..64).map(|x| 1.0 + (x % 5) as f64).collect()).unwrap();
            let spec = ExampleSpec::new(&f, d.clone(), eta).unwrap();
            let got = exact_expectation(&spec, &Observable::Diagonal(obs.clone())).unwrap();
            let c = f.to_boolean_function().unwrap();
            let clean: f64 = (0..64).map(|x| d.prob(x) * obs.phi(x, c.value(x))).sum();
            let flipped: f64 = (0..64).map(|x| d.prob(x) * obs.phi(x, -c.value(x))).sum();
            prop_assert!((got - ((1.0 - eta) * clean + eta * flipped)).abs() <= 1e-12);
        }

        #[test]
        fn noisy_deviation_is_at_most_sqrt_eta(seed in any::<u64>(), code in any::<u64>(), eta in 0.0f64..=0.25) {
            let f = random_concept(&ConceptKind::Dnf { n: 8, terms: 3, literal_prob: 0.3 }, seed).unwrap();
            let spec = ExampleSpec::uniform(&f).unwrap();
            let m = fourier_mass_observable(random_pattern(8, code));
            let clean = exact_expectation(&spec, &m).unwrap();
            let noisy = exact_expectation(&spec.with_noise(eta).unwrap(), &m).unwrap();
            prop_assert!((noisy - clean).abs() <= eta.sqrt() + 1e-15);
        }

        #[test]
        fn grid_answers_are_legal(seed in any::<u64>(), model_tau in 0.01f64..0.5, query_tau in 0.01f64..0.5) {
            let f = random_concept(&ConceptKind::Dnf { n: 5, terms: 2, literal_prob: 0.4 }, seed).unwrap();
            let spec = ExampleSpec::uniform(&f).unwrap();
            let mut oracle = Oracle::new(spec, ToleranceModel::GridAdversary { tau: model_tau }).unwrap();
            for s in 0..32 {
                oracle.qstat(&coefficient_observable(5, s).unwrap(), query_tau).unwrap();
            }
            for i in 0..5 {
                oracle.qstat(&fourier_mass_observable(SubsetPattern::influence(5, i).unwrap()), query_tau).unwrap();
            }
            prop_assert_eq!(oracle.query_count(), 37);
            prop_assert!(oracle.log().violations().is_empty());
        }
    }
}
