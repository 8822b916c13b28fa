//! Laplace mechanism, a differentially private Qstat oracle built on
//! measured copies, and an empirical histogram audit of the e^α bound.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QsqError, Result};
use crate::exec::{map_indexed, Execution};
use crate::learners::{LearnerReport, LearnerSpec};
use crate::oracle::{check_tolerance, exact_expectation, ExampleSpec, Observable, QueryLog, Qstat, CONTRACT_EPSILON};
use crate::distribution::Distribution;
use crate::rng::{stream, StreamRng};
use crate::simulation::MeasurementSampler;

/// Constant in the per-query copy count.
pub const ACCURACY_CONSTANT: f64 = 2.0;
/// Minimum hits on both sides for a bin to be compared.
pub const MIN_BIN_HITS: usize = 50;

/// Laplace distribution with density `(λ/2) e^{−λ|x|}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplaceParams {
    rate: f64,
}

impl LaplaceParams {
    pub fn new(rate: f64) -> Result<Self> {
        if rate > 0.0 && rate.is_finite() {
            Ok(Self { rate })
        } else {
            Err(QsqError::InvalidParameter(format!("Laplace rate {rate} must be positive and finite")))
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn log_density(&self, x: f64) -> f64 {
        (self.rate / 2.0).ln() - self.rate * x.abs()
    }
}

/// Inverse-CDF draw: `u ∈ (−1/2, 1/2)`, `x = −sign(u)·ln(1 − 2|u|)/λ`.
pub fn laplace_sample<R: Rng + ?Sized>(params: LaplaceParams, rng: &mut R) -> f64 {
    let u = loop {
        let u = rng.random::<f64>() - 0.5;
        if u != -0.5 {
            break u;
        }
    };
    -u.signum() * (1.0 - 2.0 * u.abs()).ln() / params.rate
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(QsqError::InvalidParameter(format!("privacy parameter {alpha} must be positive and finite")))
    }
}

fn mean_in_unit_interval(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(QsqError::InvalidParameter("private average of an empty tuple".into()));
    }
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(QsqError::InvalidParameter(format!("value {v} lies outside [0, 1]")));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean of `values ⊂ [0,1]` plus Laplace noise of rate `α·T`.
pub fn private_average<R: Rng + ?Sized>(values: &[f64], alpha: f64, rng: &mut R) -> Result<f64> {
    check_alpha(alpha)?;
    let mean = mean_in_unit_interval(values)?;
    Ok(mean + laplace_sample(LaplaceParams::new(alpha * values.len() as f64)?, rng))
}

/// `ln(1/δ)/(αT)`: the noise exceeds this with probability exactly `δ`.
pub fn accuracy_radius(alpha: f64, count: usize, delta: f64) -> f64 {
    (1.0 / delta).ln() / (alpha * count as f64)
}

/// Closed-form privacy certificate for [`private_average`] on a neighbour
/// pair: the output log-density ratio is at most `λ·|mean_p − mean_q|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpCertificate {
    pub rate: f64,
    pub mean_shift: f64,
    pub bound: f64,
    pub alpha: f64,
    pub holds: bool,
}

pub fn private_average_certificate(p: &[f64], q: &[f64], alpha: f64) -> Result<DpCertificate> {
    check_alpha(alpha)?;
    if p.len() != q.len() {
        return Err(QsqError::InvalidParameter("neighbouring tuples must have equal length".into()));
    }
    let differing = p.iter().zip(q).filter(|(a, b)| a != b).count();
    if differing > 1 {
        return Err(QsqError::InvalidParameter(format!("tuples differ in {differing} entries, not a neighbour pair")));
    }
    let shift = (mean_in_unit_interval(p)? - mean_in_unit_interval(q)?).abs();
    let rate = alpha * p.len() as f64;
    let bound = rate * shift;
    Ok(DpCertificate { rate, mean_shift: shift, bound, alpha, holds: bound <= alpha + CONTRACT_EPSILON })
}

/// Log-density ratio of the two mechanism outputs at `y`.
pub fn private_average_log_ratio(p: &[f64], q: &[f64], alpha: f64, y: f64) -> Result<f64> {
    let params = LaplaceParams::new(alpha * p.len() as f64)?;
    let (mp, mq) = (mean_in_unit_interval(p)?, mean_in_unit_interval(q)?);
    Ok(params.log_density(y - mp) - params.log_density(y - mq))
}

/// `⌈C/α · (1/τ² + 2/τ) · ln(2d/δ)⌉` copies per query.
pub fn private_query_copies(alpha: f64, tau: f64, queries: usize, delta: f64) -> Result<usize> {
    check_alpha(alpha)?;
    check_tolerance(tau)?;
    if !(delta > 0.0 && delta < 1.0) || queries == 0 {
        return Err(QsqError::InvalidParameter("need δ ∈ (0,1) and at least one query".into()));
    }
    let value = ACCURACY_CONSTANT / alpha * (1.0 / (tau * tau) + 2.0 / tau) * (2.0 * queries as f64 / delta).ln();
    Ok(value.ceil() as usize)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivateAnswer {
    pub answer: f64,
    pub exact: f64,
    pub abs_error: f64,
    /// Laplace draw added in the `[0,1]` scale.
    pub noise: f64,
}

/// Answers up to `d` queries, each from `Q` fresh copies whose outcomes are
/// mapped to `[0,1]`, privately averaged, and mapped back.
#[derive(Debug)]
pub struct PrivateOracle {
    spec: ExampleSpec,
    sampler: MeasurementSampler,
    noise_rng: StreamRng,
    alpha: f64,
    tau: f64,
    max_queries: usize,
    copies: usize,
    answers: Vec<PrivateAnswer>,
    log: QueryLog,
}

impl PrivateOracle {
    pub fn new(spec: ExampleSpec, alpha: f64, delta: f64, tau: f64, max_queries: usize, seed: u64) -> Result<Self> {
        if spec.noise_rate() != 0.0 {
            return Err(QsqError::Unsupported("private learning is defined for noiseless examples".into()));
        }
        let copies = private_query_copies(alpha, tau, max_queries, delta)?;
        Ok(Self {
            sampler: MeasurementSampler::new(spec.clone(), seed, 1),
            noise_rng: stream(seed, "laplace", 0),
            spec,
            alpha,
            tau,
            max_queries,
            copies,
            answers: Vec::new(),
            log: QueryLog::default(),
        })
    }

    pub fn copies_per_query(&self) -> usize {
        self.copies
    }

    pub fn answers(&self) -> &[PrivateAnswer] {
        &self.answers
    }

    pub fn log(&self) -> &QueryLog {
        &self.log
    }
}

impl Qstat for PrivateOracle {
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
        if tau < self.tau - CONTRACT_EPSILON {
            return Err(QsqError::IllegalQuery(format!("tolerance {tau} is below the configured {}", self.tau)));
        }
        if self.answers.len() >= self.max_queries {
            return Err(QsqError::IllegalQuery(format!("query budget of {} exhausted", self.max_queries)));
        }
        let exact = exact_expectation(&self.spec, m)?;
        let mapped: Vec<f64> =
            self.sampler.outcomes(m, self.copies)?.into_iter().map(|a| ((a + 1.0) / 2.0).clamp(0.0, 1.0)).collect();
        let mean = mapped.iter().sum::<f64>() / mapped.len() as f64;
        let private = private_average(&mapped, self.alpha, &mut self.noise_rng)?;
        let answer = 2.0 * private - 1.0;
        self.answers.push(PrivateAnswer { answer, exact, abs_error: (answer - exact).abs(), noise: private - mean });
        self.log.push(m, tau, answer, Some(exact), Some(self.copies));
        Ok(answer)
    }

    fn query_count(&self) -> usize {
        self.answers.len()
    }
}

/// Learner with a query budget known in advance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivateLearnerDescriptor {
    pub learner: LearnerSpec,
    pub queries: usize,
    pub tau: f64,
}

impl PrivateLearnerDescriptor {
    pub fn parity(n: usize) -> Self {
        let (queries, tau) = LearnerSpec::Parity.fixed_budget(n).expect("parity budget is fixed");
        Self { learner: LearnerSpec::Parity, queries, tau }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivateLearnReport {
    pub learner: LearnerReport,
    pub d: usize,
    pub per_query_samples: usize,
    pub total_samples: usize,
    pub alpha: f64,
    pub delta: f64,
    pub tau: f64,
    pub noise_trace: Vec<f64>,
    pub answers: Vec<PrivateAnswer>,
    pub all_within_tau: bool,
}

pub fn private_pac_learn(
    descriptor: &PrivateLearnerDescriptor,
    spec: ExampleSpec,
    alpha: f64,
    delta: f64,
    seed: u64,
) -> Result<PrivateLearnReport> {
    let mut oracle = PrivateOracle::new(spec, alpha, delta, descriptor.tau, descriptor.queries, seed)?;
    let learner = descriptor.learner.run(&mut oracle)?;
    let answers = oracle.answers().to_vec();
    Ok(PrivateLearnReport {
        d: descriptor.queries,
        per_query_samples: oracle.copies_per_query(),
        total_samples: answers.len() * oracle.copies_per_query(),
        alpha,
        delta,
        tau: descriptor.tau,
        noise_trace: answers.iter().map(|a| a.noise).collect(),
        all_within_tau: answers.iter().all(|a| a.abs_error <= descriptor.tau + CONTRACT_EPSILON),
        answers,
        learner,
    })
}

/// Histogram layout: `bins` equal cells on `[lo, hi)` plus two overflow
/// cells, so every output lands somewhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub alpha: f64,
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinStatus {
    Compared,
    /// Too few hits on both sides.
    Excluded,
    /// Enough hits on one side and none on the other.
    OneSided,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditBin {
    pub lo: f64,
    pub hi: f64,
    pub count_p: usize,
    pub count_q: usize,
    pub status: BinStatus,
    pub log_ratio: Option<f64>,
    pub slack: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub alpha: f64,
    pub samples: usize,
    pub compared_bins: usize,
    pub excluded_bins: usize,
    pub max_log_ratio: f64,
    pub infinite_ratio: bool,
    pub pass: bool,
    pub bins: Vec<AuditBin>,
}

const AUDIT_CHUNK: usize = 8192;

fn histogram<M>(mechanism: &M, input: &[f64], config: &AuditConfig, side: &str) -> Result<Vec<usize>>
where
    M: Fn(&[f64], &mut StreamRng) -> Result<f64> + Sync,
{
    let cells = config.bins + 2;
    let width = (config.hi - config.lo) / config.bins as f64;
    let chunks = config.samples.div_ceil(AUDIT_CHUNK);
    let partial = map_indexed(Execution::default(), chunks, |c| -> Result<Vec<usize>> {
        let mut rng = stream(config.seed, side, c as u64);
        let mut counts = vec![0usize; cells];
        let count = AUDIT_CHUNK.min(config.samples - c * AUDIT_CHUNK);
        for _ in 0..count {
            let y = mechanism(input, &mut rng)?;
            let cell = if y < config.lo {
                0
            } else if y >= config.hi {
                cells - 1
            } else {
                1 + (((y - config.lo) / width) as usize).min(config.bins - 1)
            };
            counts[cell] += 1;
        }
        Ok(counts)
    });
    let mut total = vec![0usize; cells];
    for counts in partial {
        for (t, c) in total.iter_mut().zip(counts?) {
            *t += c;
        }
    }
    Ok(total)
}

/// Runs `mechanism` `samples` times on each neighbour and compares the
/// histograms bin by bin against `α` plus a three-sigma slack.
pub fn dp_audit<M>(mechanism: M, p: &[f64], q: &[f64], config: &AuditConfig) -> Result<AuditReport>
where
    M: Fn(&[f64], &mut StreamRng) -> Result<f64> + Sync,
{
    check_alpha(config.alpha)?;
    if config.bins == 0 || !(config.hi > config.lo) || config.samples == 0 {
        return Err(QsqError::InvalidParameter("audit needs bins > 0, hi > lo and samples > 0".into()));
    }
    let hp = histogram(&mechanism, p, config, "dp-audit-p")?;
    let hq = histogram(&mechanism, q, config, "dp-audit-q")?;
    let width = (config.hi - config.lo) / config.bins as f64;
    let mut bins = Vec::with_capacity(hp.len());
    for (i, (&cp, &cq)) in hp.iter().zip(&hq).enumerate() {
        let (lo, hi) = match i {
            0 => (f64::NEG_INFINITY, config.lo),
            _ if i == hp.len() - 1 => (config.hi, f64::INFINITY),
            _ => (config.lo + (i - 1) as f64 * width, config.lo + i as f64 * width),
        };
        let (status, log_ratio, slack) = if cp >= MIN_BIN_HITS && cq >= MIN_BIN_HITS {
            let ratio = (cp as f64 / cq as f64).ln();
            (BinStatus::Compared, Some(ratio), Some(3.0 * (1.0 / cp as f64 + 1.0 / cq as f64).sqrt()))
        } else if (cp >= MIN_BIN_HITS && cq == 0) || (cq >= MIN_BIN_HITS && cp == 0) {
            (BinStatus::OneSided, None, None)
        } else {
            (BinStatus::Excluded, None, None)
        };
        bins.push(AuditBin { lo, hi, count_p: cp, count_q: cq, status, log_ratio, slack });
    }
    let compared: Vec<&AuditBin> = bins.iter().filter(|b| b.status == BinStatus::Compared).collect();
    let infinite_ratio = bins.iter().any(|b| b.status == BinStatus::OneSided);
    let within = compared.iter().all(|b| b.log_ratio.unwrap().abs() <= config.alpha + b.slack.unwrap());
    Ok(AuditReport {
        alpha: config.alpha,
        samples: config.samples,
        compared_bins: compared.len(),
        excluded_bins: bins.iter().filter(|b| b.status == BinStatus::Excluded).count(),
        max_log_ratio: compared.iter().map(|b| b.log_ratio.unwrap().abs()).fold(0.0, f64::max),
        infinite_ratio,
        pass: within && !infinite_ratio && !compared.is_empty(),
        bins,
    })
}

/// The Laplace mechanism as an audit target.
pub fn private_average_mechanism(alpha: f64) -> impl Fn(&[f64], &mut StreamRng) -> Result<f64> + Sync {
    move |values: &[f64], rng: &mut StreamRng| private_average(values, alpha, rng)
}
