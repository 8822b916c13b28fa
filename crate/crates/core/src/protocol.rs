//! One-way protocol in which Alice, holding the concept, answers a learner's
//! statistical queries with fixed-width quantised values, and Bob uses the
//! learned hypothesis to predict the label of his input.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use serde::{Deserialize, Serialize};

use crate::adversary::ConceptClassTable;
use crate::concepts::{Hypothesis, HypothesisTerm};
use crate::distribution::Distribution;
use crate::error::{QsqError, Result};
use crate::exec::{map_indexed, Execution};
use crate::learners::LearnerSpec;
use crate::oracle::{check_tolerance, exact_expectation, ExampleSpec, Observable, Qstat, CONTRACT_EPSILON};
use crate::rng::stream;

/// Fixed grid over `[-1, 1]` with spacing `2τ` and `⌈1/τ⌉ + 1` levels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    pub tau: f64,
    pub levels: usize,
    pub width: u32,
}

impl Quantizer {
    pub fn new(tau: f64) -> Result<Self> {
        check_tolerance(tau)?;
        let levels = (1.0 / tau - 1e-9).ceil().max(1.0) as usize + 1;
        let width = usize::BITS - (levels - 1).leading_zeros();
        Ok(Self { tau, levels, width })
    }

    pub fn encode(&self, value: f64) -> usize {
        let v = value.clamp(-1.0, 1.0);
        (((v + 1.0) / (2.0 * self.tau)).round() as usize).min(self.levels - 1)
    }

    pub fn decode(&self, code: usize) -> f64 {
        -1.0 + 2.0 * self.tau * code as f64
    }

    /// `log₂(1/τ)`, the idealised per-answer cost.
    pub fn ideal_bits(&self) -> f64 {
        (1.0 / self.tau).log2()
    }
}

/// `(code, decoded)` with `|decoded − value| ≤ τ` for `value ∈ [-1, 1]`.
pub fn quantize(value: f64, tau: f64) -> Result<(usize, f64)> {
    let q = Quantizer::new(tau)?;
    let code = q.encode(value);
    Ok((code, q.decode(code)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AliceMessage {
    pub code: usize,
    pub decoded: f64,
    pub exact: f64,
}

/// Alice's side: exact expectations under `μ2`, quantised.
#[derive(Clone, Debug)]
pub struct AliceOracle {
    spec: ExampleSpec,
    quantizer: Quantizer,
    messages: Vec<AliceMessage>,
}

impl AliceOracle {
    pub fn new(spec: ExampleSpec, tau: f64) -> Result<Self> {
        Ok(Self { spec, quantizer: Quantizer::new(tau)?, messages: Vec::new() })
    }

    pub fn messages(&self) -> &[AliceMessage] {
        &self.messages
    }

    pub fn bits_sent(&self) -> usize {
        self.messages.len() * self.quantizer.width as usize
    }
}

impl Qstat for AliceOracle {
    fn dimension(&self) -> usize {
        self.spec.dimension()
    }

    fn distribution(&self) -> &Distribution {
        self.spec.distribution()
    }

    fn noise_rate(&self) -> f64 {
        0.0
    }

    fn qstat(&mut self, m: &Observable, tau: f64) -> Result<f64> {
        check_tolerance(tau)?;
        if tau < self.quantizer.tau - CONTRACT_EPSILON {
            return Err(QsqError::IllegalQuery(format!(
                "requested tolerance {tau} is finer than the protocol's {}",
                self.quantizer.tau
            )));
        }
        let exact = exact_expectation(&self.spec, m)?;
        let code = self.quantizer.encode(exact);
        let decoded = self.quantizer.decode(code);
        self.messages.push(AliceMessage { code, decoded, exact });
        Ok(decoded)
    }

    fn query_count(&self) -> usize {
        self.messages.len()
    }
}

/// Bob's learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProtocolLearner {
    /// One of the query learners.
    Learner(LearnerSpec),
    /// Ignores Alice and predicts with a fixed hypothesis.
    Fixed { hypothesis: Hypothesis },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub class: ConceptClassTable,
    /// Weights over class indices.
    pub mu1: Vec<f64>,
    pub mu2: Distribution,
    pub tau: f64,
    pub learner: ProtocolLearner,
}

impl ProtocolConfig {
    /// Parities on `n` bits with uniform `μ1`, `μ2` and the parity learner.
    pub fn parity(n: usize, tau: f64) -> Result<Self> {
        let class = ConceptClassTable::parities(n)?;
        let mu1 = vec![1.0 / class.len() as f64; class.len()];
        Ok(Self { class, mu1, mu2: Distribution::uniform(n)?, tau, learner: ProtocolLearner::Learner(LearnerSpec::Parity) })
    }

    fn validate(&self) -> Result<WeightedIndex<f64>> {
        check_tolerance(self.tau)?;
        if self.mu1.len() != self.class.len() {
            return Err(QsqError::InvalidDistribution(format!(
                "mu1 has {} weights for {} concepts",
                self.mu1.len(),
                self.class.len()
            )));
        }
        if self.mu2.dimension() != self.class.dimension() {
            return Err(QsqError::DimensionMismatch { expected: self.class.dimension(), found: self.mu2.dimension() });
        }
        WeightedIndex::new(&self.mu1).map_err(|e| QsqError::InvalidDistribution(format!("mu1: {e}")))
    }

    /// Advantage over 1/2 the learner is expected to achieve.
    pub fn gamma_target(&self) -> Result<f64> {
        match &self.learner {
            ProtocolLearner::Learner(_) => Ok(0.5),
            ProtocolLearner::Fixed { hypothesis } => {
                let total: f64 = self.mu1.iter().sum();
                let mut agree = 0.0;
                for (w, c) in self.mu1.iter().zip(self.class.functions()) {
                    let err = crate::concepts::error_rate(hypothesis, c, &self.mu2)?;
                    agree += w / total * (1.0 - err);
                }
                Ok(agree - 0.5)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTrial {
    pub trial: usize,
    pub concept: usize,
    pub input: usize,
    pub queries: usize,
    pub bits: usize,
    pub prediction: i8,
    pub label: i8,
    pub answers_legal: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    /// Bits sent per execution (the maximum over trials).
    pub bits: usize,
    pub queries: usize,
    pub success: f64,
    pub trials: usize,
    pub gamma_target: f64,
    pub code_width: u32,
    pub ideal_bits_per_answer: f64,
    pub all_answers_legal: bool,
    pub records: Vec<ProtocolTrial>,
}

pub fn run_protocol(config: &ProtocolConfig, trials: usize, seed: u64, exec: Execution) -> Result<ProtocolReport> {
    let pick = config.validate()?;
    let quantizer = Quantizer::new(config.tau)?;
    let inputs = WeightedIndex::new(config.mu2.probs()).map_err(|e| QsqError::InvalidDistribution(e.to_string()))?;
    let records = map_indexed(exec, trials, |trial| -> Result<ProtocolTrial> {
        let mut rng = stream(seed, "protocol", trial as u64);
        let concept = pick.sample(&mut rng);
        let input = inputs.sample(&mut rng);
        let c = config.class.get(concept);
        let mut alice = AliceOracle::new(ExampleSpec::new(c, config.mu2.clone(), 0.0)?, config.tau)?;
        let h = match &config.learner {
            ProtocolLearner::Learner(spec) => spec.run(&mut alice)?.hypothesis,
            ProtocolLearner::Fixed { hypothesis } => hypothesis.clone(),
        };
        let answers_legal =
            alice.messages().iter().all(|m| (m.decoded - m.exact).abs() <= config.tau + CONTRACT_EPSILON);
        Ok(ProtocolTrial {
            trial,
            concept,
            input,
            queries: alice.query_count(),
            bits: alice.bits_sent(),
            prediction: h.predict(input),
            label: c.value(input),
            answers_legal,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let successes = records.iter().filter(|r| r.prediction == r.label).count();
    Ok(ProtocolReport {
        bits: records.iter().map(|r| r.bits).max().unwrap_or(0),
        queries: records.iter().map(|r| r.queries).max().unwrap_or(0),
        success: if trials == 0 { 0.0 } else { successes as f64 / trials as f64 },
        trials,
        gamma_target: config.gamma_target()?,
        code_width: quantizer.width,
        ideal_bits_per_answer: quantizer.ideal_bits(),
        all_answers_legal: records.iter().all(|r| r.answers_legal),
        records,
    })
}

/// Constant hypothesis helper for baseline runs.
pub fn constant_hypothesis(n: usize, value: i8) -> Result<Hypothesis> {
    Hypothesis::new(n, vec![HypothesisTerm { set: 0, coeff: value as f64 }])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::BooleanFunction;
    use proptest::prelude::*;

    #[test]
    fn quantizer_grids() {
        let q = Quantizer::new(0.25).unwrap();
        assert_eq!((q.levels, q.width), (5, 3));
        let decoded: Vec<f64> = (0..5).map(|c| q.decode(c)).collect();
        assert_eq!(decoded, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        let q = Quantizer::new(1.0 / 6.0).unwrap();
        assert_eq!((q.levels, q.width), (7, 3));
        assert_eq!(Quantizer::new(1.0).unwrap().width, 1);
        assert!(quantize(0.3, 0.0).is_err());
        let (_, d) = quantize(1.0, 0.3).unwrap();
        assert!((d - 1.0).abs() <= 0.3);
    }

    #[test]
    fn parity_protocol() {
        let config = ProtocolConfig::parity(6, 1.0 / 6.0).unwrap();
        let report = run_protocol(&config, 40, 3, Execution::default()).unwrap();
        assert_eq!(report.success, 1.0);
        assert_eq!(report.bits, 6 * 3);
        assert_eq!(report.queries, 6);
        assert!(report.all_answers_legal);
        assert_eq!(report, run_protocol(&config, 40, 3, Execution::Sequential).unwrap());
    }

    #[test]
    fn fixed_and_single_concept() {
        let mut config = ProtocolConfig::parity(4, 0.25).unwrap();
        config.learner = ProtocolLearner::Fixed { hypothesis: constant_hypothesis(4, 1).unwrap() };
        let gamma = config.gamma_target().unwrap();
        // χ_∅ is always right, every other parity is right half the time.
        assert!((gamma - (1.0 / 16.0 + 15.0 / 32.0 - 0.5)).abs() < 1e-12);
        let report = run_protocol(&config, 4000, 5, Execution::default()).unwrap();
        assert_eq!(report.bits, 0);
        assert!((report.success - (0.5 + gamma)).abs() < 0.04);

        let single = ConceptClassTable::new(vec![BooleanFunction::parity(4, 3).unwrap()]).unwrap();
        let config = ProtocolConfig {
            class: single,
            mu1: vec![1.0],
            mu2: Distribution::uniform(4).unwrap(),
            tau: 0.25,
            learner: ProtocolLearner::Fixed { hypothesis: Hypothesis::parity(4, 3).unwrap() },
        };
        let report = run_protocol(&config, 50, 1, Execution::default()).unwrap();
        assert_eq!((report.bits, report.success), (0, 1.0));
    }

    #[test]
    fn alice_rejects_fine_queries() {
        let spec = ExampleSpec::uniform(&BooleanFunction::parity(3, 1).unwrap()).unwrap();
        let mut alice = AliceOracle::new(spec, 0.25).unwrap();
        let m = crate::oracle::coefficient_observable(3, 1).unwrap();
        assert!(matches!(alice.qstat(&m, 0.1), Err(QsqError::IllegalQuery(_))));
        assert_eq!(alice.qstat(&m, 0.25).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn quantization_is_accurate_and_idempotent(v in -1.0f64..=1.0, tau in 0.01f64..=1.0) {
            let q = Quantizer::new(tau).unwrap();
            let code = q.encode(v);
            let decoded = q.decode(code);
            prop_assert!((decoded - v).abs() <= tau + 1e-12);
            prop_assert_eq!(q.encode(decoded), code);
            prop_assert!(code < q.levels);
            prop_assert!(q.levels <= 1 << q.width);
        }
    }
}
