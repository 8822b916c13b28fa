//! Learners driving a `Qstat` oracle under the uniform distribution: exact
//! parity learning, junta learning, Goldreich–Levin heavy-coefficient search
//! and DNF learning from heavy coefficients.
//!
//! A Fourier-mass query returns half the matched Fourier mass. Learners
//! double the answer, so a raw tolerance `τ` becomes `2τ` on the doubled
//! estimate.
//!
//! GL constants: bucket queries use raw tolerance `τ²/8`, so the doubled
//! bucket estimate is within `τ²/4`. A bucket holding a coefficient with
//! `|f̂(T)| ≥ τ` has mass at least `τ²`, hence doubled estimate at least
//! `3τ²/4 ≥ τ²/2` and survives. A surviving bucket has mass at least `τ²/4`,
//! so at most `4/τ²` survive each level. Confirmation queries have tolerance
//! `τ/4`: a set with `|f̂| ≥ τ` is estimated at `≥ 3τ/4` and kept, and a kept
//! set has `|f̂| ≥ 3τ/4 − τ/4 = τ/2`.

use serde::{Deserialize, Serialize};

use crate::concepts::{Hypothesis, HypothesisTerm};
use crate::error::{QsqError, Result};
use crate::fourier::SubsetPattern;
use crate::oracle::{coefficient_observable, fourier_mass_observable, Observable, Qstat};

/// Raw tolerance of the parity learner's influence queries.
pub const PARITY_TOLERANCE: f64 = 1.0 / 6.0;
/// Largest junta size accepted by [`learn_junta`].
pub const MAX_JUNTA_SIZE: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub name: String,
    pub queries: usize,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerReport {
    pub hypothesis: Hypothesis,
    pub queries_used: usize,
    pub min_tolerance_used: Option<f64>,
    pub phases: Vec<PhaseReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub recovered_parity: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub selected_coordinates: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub heavy_sets: Option<Vec<usize>>,
}

/// Output of [`goldreich_levin`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlReport {
    pub tau: f64,
    /// Confirmed sets in increasing order.
    pub sets: Vec<usize>,
    /// Confirmation estimates of `f̂(S)`, aligned with `sets`.
    pub estimates: Vec<f64>,
    /// Surviving buckets after each level.
    pub live_per_level: Vec<usize>,
    pub queries_used: usize,
    pub min_tolerance_used: Option<f64>,
    pub phases: Vec<PhaseReport>,
}

impl GlReport {
    /// `n·(8/τ² + 1) + |candidates|`, the worst-case query count.
    pub fn query_bound(n: usize, tau: f64, candidates: usize) -> f64 {
        n as f64 * (8.0 / (tau * tau) + 1.0) + candidates as f64
    }
}

struct Session<'a, O: Qstat + ?Sized> {
    oracle: &'a mut O,
    start: usize,
    phases: Vec<PhaseReport>,
    min_tau: Option<f64>,
}

impl<'a, O: Qstat + ?Sized> Session<'a, O> {
    fn open(oracle: &'a mut O) -> Result<Self> {
        if !oracle.distribution().is_uniform() {
            return Err(QsqError::Unsupported("learners require the uniform distribution".into()));
        }
        if oracle.noise_rate() != 0.0 {
            return Err(QsqError::Unsupported(
                "learners require a noiseless oracle; route noisy examples through the simulation backend".into(),
            ));
        }
        let start = oracle.query_count();
        Ok(Self { oracle, start, phases: Vec::new(), min_tau: None })
    }

    fn n(&self) -> usize {
        self.oracle.dimension()
    }

    fn phase(&mut self, name: &str, tolerance: f64) {
        self.phases.push(PhaseReport { name: name.to_string(), queries: 0, tolerance });
    }

    fn ask(&mut self, m: &Observable, tau: f64) -> Result<f64> {
        let alpha = self.oracle.qstat(m, tau)?;
        if let Some(p) = self.phases.last_mut() {
            p.queries += 1;
        }
        self.min_tau = Some(self.min_tau.map_or(tau, |t| t.min(tau)));
        Ok(alpha)
    }

    fn used(&self) -> usize {
        self.oracle.query_count() - self.start
    }

    fn finish(self, hypothesis: Hypothesis) -> LearnerReport {
        LearnerReport {
            hypothesis,
            queries_used: self.used(),
            min_tolerance_used: self.min_tau,
            phases: self.phases,
            recovered_parity: None,
            selected_coordinates: None,
            heavy_sets: None,
        }
    }
}

fn check_epsilon(eps: f64) -> Result<()> {
    if eps > 0.0 && eps <= 1.0 {
        Ok(())
    } else {
        Err(QsqError::InvalidParameter(format!("accuracy {eps} must lie in (0, 1]")))
    }
}

/// Recovers `s` with one influence query per coordinate.
pub fn learn_parity<O: Qstat + ?Sized>(oracle: &mut O) -> Result<LearnerReport> {
    let n = oracle.dimension();
    learn_parity_prefix(oracle, n)
}

/// The parity learner stopped after the first `queries` coordinates; the
/// remaining bits of `s` are guessed as 0.
pub fn learn_parity_prefix<O: Qstat + ?Sized>(oracle: &mut O, queries: usize) -> Result<LearnerReport> {
    let mut session = Session::open(oracle)?;
    let n = session.n();
    if queries > n {
        return Err(QsqError::InvalidParameter(format!("{queries} influence queries exceed n = {n}")));
    }
    session.phase("influence", PARITY_TOLERANCE);
    let mut s = 0usize;
    for i in 0..queries {
        let m = fourier_mass_observable(SubsetPattern::influence(n, i)?);
        if 2.0 * session.ask(&m, PARITY_TOLERANCE)? >= 0.5 {
            s |= 1 << i;
        }
    }
    let mut report = session.finish(Hypothesis::parity(n, s)?);
    report.recovered_parity = Some(s);
    Ok(report)
}

/// Learns a `k`-junta to error `eps`: influence thresholding then one
/// coefficient query per subset of the selected coordinates.
pub fn learn_junta<O: Qstat + ?Sized>(oracle: &mut O, k: usize, eps: f64) -> Result<LearnerReport> {
    check_epsilon(eps)?;
    let mut session = Session::open(oracle)?;
    let n = session.n();
    if k > n || k > MAX_JUNTA_SIZE {
        return Err(QsqError::InvalidParameter(format!(
            "junta size {k} must be at most min(n, {MAX_JUNTA_SIZE}) with n = {n}"
        )));
    }
    let coefficient_tau = (eps / 2.0).sqrt() * 2f64.powf(-(k as f64) / 2.0);
    if k == 0 {
        session.phase("constant", coefficient_tau);
        let alpha = session.ask(&coefficient_observable(n, 0)?, coefficient_tau)?;
        let mut report = session.finish(Hypothesis::new(n, vec![HypothesisTerm { set: 0, coeff: alpha }])?);
        report.selected_coordinates = Some(Vec::new());
        return Ok(report);
    }

    let influence_tau = eps / (10.0 * k as f64);
    let threshold = eps / (4.0 * k as f64);
    session.phase("influence", influence_tau);
    let mut selected = 0usize;
    for i in 0..n {
        let m = fourier_mass_observable(SubsetPattern::influence(n, i)?);
        if 2.0 * session.ask(&m, influence_tau)? >= threshold {
            selected |= 1 << i;
        }
    }
    if selected.count_ones() as usize > k {
        return Err(QsqError::ContractViolation(format!(
            "influence answers select {} coordinates for a {k}-junta",
            selected.count_ones()
        )));
    }

    session.phase("coefficients", coefficient_tau);
    let mut entries = Vec::with_capacity(1 << selected.count_ones());
    let mut v = 0usize;
    loop {
        let alpha = session.ask(&coefficient_observable(n, v)?, coefficient_tau)?;
        entries.push(HypothesisTerm { set: v, coeff: alpha });
        if v == selected {
            break;
        }
        v = (v | !selected).wrapping_add(1) & selected;
    }
    let mut report = session.finish(Hypothesis::new(n, entries)?);
    report.selected_coordinates = Some((0..n).filter(|i| selected >> i & 1 == 1).collect());
    Ok(report)
}

fn check_gl_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(QsqError::InvalidParameter(format!("heavy-coefficient threshold {tau} must lie in (0, 1]")))
    }
}

/// Confirmed `(set, estimate)` pairs.
type Confirmed = Vec<(usize, f64)>;

fn gl_search<O: Qstat + ?Sized>(session: &mut Session<'_, O>, tau: f64) -> Result<(Confirmed, Vec<usize>)> {
    let n = session.n();
    let bucket_tau = tau * tau / 8.0;
    let keep = tau * tau / 2.0;
    session.phase("buckets", bucket_tau);
    let mut live = vec![0usize];
    let mut live_per_level = Vec::with_capacity(n);
    for j in 0..n {
        let fixed = (1usize << (j + 1)) - 1;
        let mut next = Vec::new();
        for &prefix in &live {
            for child in [prefix, prefix | 1 << j] {
                let m = fourier_mass_observable(SubsetPattern::bucket(n, fixed, child)?);
                if 2.0 * session.ask(&m, bucket_tau)? >= keep {
                    next.push(child);
                }
            }
        }
        live = next;
        live_per_level.push(live.len());
    }

    let confirm_tau = tau / 4.0;
    session.phase("confirm", confirm_tau);
    let mut confirmed = Vec::new();
    for &set in &live {
        let alpha = session.ask(&coefficient_observable(n, set)?, confirm_tau)?;
        if alpha.abs() >= 0.75 * tau {
            confirmed.push((set, alpha));
        }
    }
    confirmed.sort_by_key(|(s, _)| *s);
    Ok((confirmed, live_per_level))
}

/// Every `S` with `|f̂(S)| ≥ tau` is returned and every returned `S` has
/// `|f̂(S)| ≥ tau/2`, against any legal oracle.
pub fn goldreich_levin<O: Qstat + ?Sized>(oracle: &mut O, tau: f64) -> Result<GlReport> {
    check_gl_tau(tau)?;
    let mut session = Session::open(oracle)?;
    let (confirmed, live_per_level) = gl_search(&mut session, tau)?;
    Ok(GlReport {
        tau,
        sets: confirmed.iter().map(|(s, _)| *s).collect(),
        estimates: confirmed.iter().map(|(_, a)| *a).collect(),
        live_per_level,
        queries_used: session.used(),
        min_tolerance_used: session.min_tau,
        phases: session.phases,
    })
}

/// Threshold used by [`learn_dnf`]: `ε / (2(2s+1))`.
pub fn dnf_threshold(s: usize, eps: f64) -> f64 {
    eps / (2.0 * (2.0 * s as f64 + 1.0))
}

/// Sign of the heavy part of the spectrum, found by GL at threshold
/// [`dnf_threshold`] and re-estimated at half that threshold.
pub fn learn_dnf<O: Qstat + ?Sized>(oracle: &mut O, s: usize, eps: f64) -> Result<LearnerReport> {
    if s < 1 {
        return Err(QsqError::InvalidParameter("DNF size bound must be at least 1".into()));
    }
    check_epsilon(eps)?;
    let tau = dnf_threshold(s, eps);
    let mut session = Session::open(oracle)?;
    let n = session.n();
    let (heavy, _) = gl_search(&mut session, tau)?;
    session.phase("estimate", tau / 2.0);
    let mut entries = Vec::with_capacity(heavy.len());
    for &(set, _) in &heavy {
        let alpha = session.ask(&coefficient_observable(n, set)?, tau / 2.0)?;
        entries.push(HypothesisTerm { set, coeff: alpha });
    }
    let mut report = session.finish(Hypothesis::new(n, entries)?);
    report.heavy_sets = Some(heavy.into_iter().map(|(s, _)| s).collect());
    Ok(report)
}

/// A learner that can be named in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "snake_case")]
pub enum LearnerSpec {
    Parity,
    Junta { k: usize, eps: f64 },
    Dnf { s: usize, eps: f64 },
}

impl LearnerSpec {
    pub fn run<O: Qstat + ?Sized>(&self, oracle: &mut O) -> Result<LearnerReport> {
        match *self {
            LearnerSpec::Parity => learn_parity(oracle),
            LearnerSpec::Junta { k, eps } => learn_junta(oracle, k, eps),
            LearnerSpec::Dnf { s, eps } => learn_dnf(oracle, s, eps),
        }
    }

    /// Number of queries and smallest raw tolerance when they are fixed in
    /// advance.
    pub fn fixed_budget(&self, n: usize) -> Option<(usize, f64)> {
        match *self {
            LearnerSpec::Parity => Some((n, PARITY_TOLERANCE)),
            _ => None,
        }
    }
}
