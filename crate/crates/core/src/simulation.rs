//! Answering statistical queries from measured copies of the example state.
//!
//! Each copy is measured once. Fourier-mass projectors yield Bernoulli
//! outcomes in `{0, 1}`, diagonal observables yield `φ(x, label)` for a
//! sampled `x`, and dense observables yield an eigenvalue by the Born rule.
//! With label noise every copy carries its own freshly drawn flip vector.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::concepts::{random_concept, Concept, ConceptKind};
use crate::distribution::Distribution;
use crate::error::{QsqError, Result};
use crate::exec::{map_indexed, Execution};
use crate::fourier::{walsh_hadamard_transform, BooleanFunction, Constraint, SubsetPattern};
use crate::oracle::{basis_index, check_tolerance, exact_expectation, fourier_mass_observable, DenseObservable, ExampleSpec, Observable, CONTRACT_EPSILON};
use crate::rng::{stream, StreamRng};

/// Copies needed for a two-sided Hoeffding bound on `[-1, 1]` outcomes:
/// `⌈2 ln(2/δ) / τ²⌉`.
pub fn hoeffding_copies(tau: f64, delta_share: f64) -> Result<usize> {
    check_tolerance(tau)?;
    check_delta(delta_share)?;
    Ok((2.0 * (2.0 / delta_share).ln() / (tau * tau)).ceil() as usize)
}

/// Copies for noisy examples: `⌈2 ln(2/δ) / (τ − √η)²⌉`.
pub fn noisy_hoeffding_copies(tau: f64, eta: f64, delta_share: f64) -> Result<usize> {
    check_noisy_regime(tau, eta)?;
    let margin = tau - eta.sqrt();
    hoeffding_copies(margin, delta_share)
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(QsqError::InvalidParameter(format!("failure probability {delta} must lie in (0,1)")))
    }
}

fn check_noisy_regime(tau: f64, eta: f64) -> Result<()> {
    check_tolerance(tau)?;
    if !(0.0..0.5).contains(&eta) {
        return Err(QsqError::InvalidParameter(format!("noise rate {eta} must lie in [0, 1/2)")));
    }
    if eta.sqrt() >= tau {
        return Err(QsqError::InvalidParameter(format!(
            "noisy simulation needs sqrt(eta) < tau, got sqrt({eta}) >= {tau}"
        )));
    }
    Ok(())
}

/// The realised concept `c ⊕ b` for a fresh flip vector `b`.
pub fn noisy_example_draw<R: Rng + ?Sized>(spec: &ExampleSpec, rng: &mut R) -> BooleanFunction {
    let c = spec.concept();
    let eta = spec.noise_rate();
    if eta == 0.0 {
        return c.clone();
    }
    let values = c.values().iter().map(|&v| if rng.random_bool(eta) { -v } else { v }).collect();
    BooleanFunction::new(c.dimension(), values).expect("flipping preserves ±1 entries")
}

/// Measures one fresh copy of the example state per call.
#[derive(Clone, Debug)]
pub struct MeasurementSampler {
    spec: ExampleSpec,
    rng: StreamRng,
    inputs: Option<WeightedIndex<f64>>,
}

impl MeasurementSampler {
    pub fn new(spec: ExampleSpec, seed: u64, index: u64) -> Self {
        Self { spec, rng: stream(seed, "measurement", index), inputs: None }
    }

    pub fn spec(&self) -> &ExampleSpec {
        &self.spec
    }

    fn draw_input(&mut self) -> usize {
        let index = self.inputs.get_or_insert_with(|| {
            WeightedIndex::new(self.spec.distribution().probs()).expect("validated distribution")
        });
        index.sample(&mut self.rng)
    }

    /// Outcomes of `copies` independent single-copy measurements.
    pub fn outcomes(&mut self, m: &Observable, copies: usize) -> Result<Vec<f64>> {
        // Validates dimension and distribution support for `m`.
        let truth = exact_expectation(self.spec(), m)?;
        let eta = self.spec.noise_rate();
        let mut out = Vec::with_capacity(copies);
        match m {
            Observable::Diagonal(obs) => {
                for _ in 0..copies {
                    let x = self.draw_input();
                    let mut label = self.spec.concept().value(x);
                    if eta > 0.0 && self.rng.random_bool(eta) {
                        label = -label;
                    }
                    out.push(obs.phi(x, label));
                }
            }
            Observable::FourierMass { pattern } => {
                if eta == 0.0 {
                    let p = truth.clamp(0.0, 1.0);
                    out.extend((0..copies).map(|_| if self.rng.random::<f64>() < p { 1.0 } else { 0.0 }));
                } else {
                    for _ in 0..copies {
                        let realized = noisy_example_draw(&self.spec, &mut self.rng);
                        let p = 0.5 * walsh_hadamard_transform(&realized).mass(pattern)?;
                        out.push(if self.rng.random::<f64>() < p.clamp(0.0, 1.0) { 1.0 } else { 0.0 });
                    }
                }
            }
            Observable::Dense(obs) => {
                if eta == 0.0 {
                    let weights = born_weights(obs, self.spec.concept(), self.spec.distribution())?;
                    out.extend((0..copies).map(|_| obs.eigenvalues()[weights.sample(&mut self.rng)]));
                } else {
                    for _ in 0..copies {
                        let realized = noisy_example_draw(&self.spec, &mut self.rng);
                        let weights = born_weights(obs, &realized, self.spec.distribution())?;
                        out.push(obs.eigenvalues()[weights.sample(&mut self.rng)]);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn mean_outcome(&mut self, m: &Observable, copies: usize) -> Result<f64> {
        if copies == 0 {
            return Err(QsqError::InvalidParameter("at least one copy is required".into()));
        }
        Ok(self.outcomes(m, copies)?.iter().sum::<f64>() / copies as f64)
    }
}

fn born_weights(obs: &DenseObservable, f: &BooleanFunction, d: &Distribution) -> Result<WeightedIndex<f64>> {
    let n = f.dimension();
    let amplitudes: Vec<(usize, f64)> = (0..1usize << n)
        .filter(|&x| d.prob(x) > 0.0)
        .map(|x| (basis_index(n, x, f.value(x)), d.prob(x).sqrt()))
        .collect();
    WeightedIndex::new(obs.born_probabilities(&amplitudes)).map_err(|e| QsqError::Format(e.to_string()))
}

/// One measurement outcome.
pub fn sample_measurement(sampler: &mut MeasurementSampler, m: &Observable) -> Result<f64> {
    Ok(sampler.outcomes(m, 1)?[0])
}

/// A simulated Qstat answer and the number of copies consumed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedAnswer {
    pub alpha: f64,
    pub copies: usize,
}

/// Mean of [`hoeffding_copies`] outcomes; within `tau` of the expectation
/// with probability at least `1 − delta_share`.
pub fn simulate_qstat(
    sampler: &mut MeasurementSampler,
    m: &Observable,
    tau: f64,
    delta_share: f64,
) -> Result<SimulatedAnswer> {
    let copies = hoeffding_copies(tau, delta_share)?;
    Ok(SimulatedAnswer { alpha: sampler.mean_outcome(m, copies)?, copies })
}

/// Mean of [`noisy_hoeffding_copies`] noisy outcomes; within `tau` of the
/// noiseless expectation with probability at least `1 − delta_share`.
pub fn simulate_noisy_qstat(
    sampler: &mut MeasurementSampler,
    m: &Observable,
    tau: f64,
    delta_share: f64,
) -> Result<SimulatedAnswer> {
    let copies = noisy_hoeffding_copies(tau, sampler.spec().noise_rate(), delta_share)?;
    Ok(SimulatedAnswer { alpha: sampler.mean_outcome(m, copies)?, copies })
}

/// Uniformly random pattern: each coordinate is forced in, forced out or
/// left free with equal probability.
pub fn random_pattern<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<SubsetPattern> {
    let constraints = (0..n)
        .map(|_| match rng.random_range(0..3) {
            0 => Constraint::MustBeOne,
            1 => Constraint::MustBeZero,
            _ => Constraint::Free,
        })
        .collect();
    SubsetPattern::new(n, constraints)
}

/// Seeded coverage experiment: random junta concepts and random projectors,
/// each trial answered by simulation and compared with the noiseless truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub n: usize,
    pub tau: f64,
    pub delta_share: f64,
    #[serde(default)]
    pub eta: f64,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub copies_used: usize,
    pub alpha: f64,
    pub exact: f64,
    pub abs_error: f64,
    pub within_tau: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub copies_per_query: usize,
    pub trials: usize,
    pub violations: usize,
    pub violation_rate: f64,
    pub max_abs_error: f64,
    pub records: Vec<TrialRecord>,
}

impl CoverageReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| QsqError::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| QsqError::Format(e.to_string()))
    }
}

pub fn run_coverage(config: &CoverageConfig, exec: Execution) -> Result<CoverageReport> {
    let copies = if config.eta == 0.0 {
        hoeffding_copies(config.tau, config.delta_share)?
    } else {
        noisy_hoeffding_copies(config.tau, config.eta, config.delta_share)?
    };
    let k = (config.n / 2).max(1);
    let records = map_indexed(exec, config.trials, |trial| -> Result<TrialRecord> {
        let concept_seed = stream(config.seed, "coverage-concept", trial as u64).random::<u64>();
        let concept = random_concept(&ConceptKind::Junta { n: config.n, k }, concept_seed)?;
        let pattern = random_pattern(config.n, &mut stream(config.seed, "coverage-pattern", trial as u64))?;
        let m = fourier_mass_observable(pattern);
        let spec = ExampleSpec::new(&concept, Distribution::uniform(concept.dimension())?, config.eta)?;
        let exact = exact_expectation(&spec.noiseless(), &m)?;
        let mut sampler = MeasurementSampler::new(spec, config.seed, trial as u64);
        let answer = if config.eta == 0.0 {
            simulate_qstat(&mut sampler, &m, config.tau, config.delta_share)?
        } else {
            simulate_noisy_qstat(&mut sampler, &m, config.tau, config.delta_share)?
        };
        let abs_error = (answer.alpha - exact).abs();
        Ok(TrialRecord {
            trial,
            copies_used: answer.copies,
            alpha: answer.alpha,
            exact,
            abs_error,
            within_tau: abs_error <= config.tau + CONTRACT_EPSILON,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let violations = records.iter().filter(|r| !r.within_tau).count();
    Ok(CoverageReport {
        copies_per_query: copies,
        trials: config.trials,
        violations,
        violation_rate: if config.trials == 0 { 0.0 } else { violations as f64 / config.trials as f64 },
        max_abs_error: records.iter().map(|r| r.abs_error).fold(0.0, f64::max),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::ParityConcept;
    use crate::oracle::{coefficient_observable, DiagonalObservable};

    #[test]
    fn copy_counts() {
        assert_eq!(hoeffding_copies(0.1, 0.01).unwrap(), 1060);
        assert_eq!(noisy_hoeffding_copies(0.2, 0.01, 0.05).unwrap(), 738);
        assert_eq!(noisy_hoeffding_copies(0.2, 0.0, 0.05).unwrap(), hoeffding_copies(0.2, 0.05).unwrap());
        assert!(noisy_hoeffding_copies(0.1, 0.01, 0.05).is_err());
        assert!(noisy_hoeffding_copies(0.9, 0.5, 0.05).is_err());
        assert!(hoeffding_copies(0.0, 0.05).is_err());
        assert!(hoeffding_copies(0.1, 1.0).is_err());
    }

    #[test]
    fn constant_observables_have_constant_outcomes() {
        let p = ParityConcept::new(4, 0b1010).unwrap();
        let spec = ExampleSpec::new(&p, Distribution::uniform(4).unwrap(), 0.2).unwrap();
        let mut sampler = MeasurementSampler::new(spec.clone(), 3, 0);
        let ones = Observable::Diagonal(DiagonalObservable::from_fn(4, |_, _| 1.0).unwrap());
        assert!(sampler.outcomes(&ones, 200).unwrap().iter().all(|v| *v == 1.0));
        let answer = simulate_qstat(&mut sampler, &ones, 0.1, 0.01).unwrap();
        assert_eq!(answer, SimulatedAnswer { alpha: 1.0, copies: 1060 });
        let id = Observable::Dense(DenseObservable::identity(4).unwrap());
        let mut sampler = MeasurementSampler::new(spec.noiseless(), 3, 1);
        assert!(sampler.outcomes(&id, 50).unwrap().iter().all(|v| (*v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn noise_free_draw_is_the_concept_and_noisy_draws_are_fresh() {
        let p = ParityConcept::new(10, 0b11).unwrap();
        let spec = ExampleSpec::uniform(&p).unwrap();
        let mut rng = stream(1, "t", 0);
        assert_eq!(&noisy_example_draw(&spec, &mut rng), spec.concept());
        let noisy = spec.with_noise(0.25).unwrap();
        let a = noisy_example_draw(&noisy, &mut rng);
        let b = noisy_example_draw(&noisy, &mut rng);
        assert_ne!(a, b);
        let flipped = a.values().iter().zip(spec.concept().values()).filter(|(x, y)| x != y).count();
        assert!((flipped as f64 / 1024.0 - 0.25).abs() <= 0.05);
    }

    #[test]
    fn coverage_is_deterministic_and_mostly_legal() {
        let config = CoverageConfig { n: 5, tau: 0.2, delta_share: 0.05, eta: 0.0, trials: 60, seed: 9 };
        let a = run_coverage(&config, Execution::Parallel).unwrap();
        let b = run_coverage(&config, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.copies_per_query, hoeffding_copies(0.2, 0.05).unwrap());
        assert!(a.records.iter().all(|r| r.copies_used == a.copies_per_query));
        assert!(a.violation_rate <= 0.1);
        assert!(a.to_csv().unwrap().starts_with("trial,copies_used,alpha,exact,abs_error,within_tau\n"));
    }

    #[test]
    fn coefficient_estimates_from_samples() {
        let p = ParityConcept::new(3, 0b101).unwrap();
        let mut sampler = MeasurementSampler::new(ExampleSpec::uniform(&p).unwrap(), 4, 0);
        let m = coefficient_observable(3, 0b101).unwrap();
        assert_eq!(sampler.mean_outcome(&m, 100).unwrap(), 1.0);
        assert!(sampler.mean_outcome(&m, 0).is_err());
    }
}
