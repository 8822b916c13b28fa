//! Weak statistical query dimension of explicit concept classes and the
//! covering-cell adversary that answers queries consistently with as many
//! candidates as possible.

use serde::{Deserialize, Serialize};

use crate::concepts::{error_rate, Hypothesis};
use crate::distribution::Distribution;
use crate::error::{QsqError, Result};
use crate::exec::{map_indexed, Execution};
use crate::fourier::{correlation, BooleanFunction};
use crate::oracle::{exact_expectation, ExampleSpec, Observable, Qstat, CONTRACT_EPSILON};

/// Largest class handled by the exact clique search.
pub const EXACT_SQDIM_LIMIT: usize = 64;

/// A finite concept class given by truth tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawClass")]
pub struct ConceptClassTable {
    functions: Vec<BooleanFunction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct RawClass {
    functions: Vec<BooleanFunction>,
    #[serde(default)]
    labels: Option<Vec<String>>,
}

impl TryFrom<RawClass> for ConceptClassTable {
    type Error = QsqError;
    fn try_from(raw: RawClass) -> Result<Self> {
        ConceptClassTable::with_labels(raw.functions, raw.labels)
    }
}

impl ConceptClassTable {
    pub fn new(functions: Vec<BooleanFunction>) -> Result<Self> {
        Self::with_labels(functions, None)
    }

    pub fn with_labels(functions: Vec<BooleanFunction>, labels: Option<Vec<String>>) -> Result<Self> {
        let Some(first) = functions.first() else {
            return Err(QsqError::InvalidParameter("concept class is empty".into()));
        };
        let n = first.dimension();
        if let Some(f) = functions.iter().find(|f| f.dimension() != n) {
            return Err(QsqError::DimensionMismatch { expected: n, found: f.dimension() });
        }
        if let Some(l) = &labels {
            if l.len() != functions.len() {
                return Err(QsqError::InvalidParameter(format!(
                    "{} labels for {} concepts",
                    l.len(),
                    functions.len()
                )));
            }
        }
        Ok(Self { functions, labels })
    }

    /// All `2^n` parities, labelled by their index.
    pub fn parities(n: usize) -> Result<Self> {
        let functions = (0..1usize << n).map(|s| BooleanFunction::parity(n, s)).collect::<Result<Vec<_>>>()?;
        let labels = (0..1usize << n).map(|s| format!("chi_{s}")).collect();
        Self::with_labels(functions, Some(labels))
    }

    pub fn dimension(&self) -> usize {
        self.functions[0].dimension()
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn functions(&self) -> &[BooleanFunction] {
        &self.functions
    }

    pub fn get(&self, i: usize) -> &BooleanFunction {
        &self.functions[i]
    }

    pub fn label(&self, i: usize) -> String {
        self.labels.as_ref().map_or_else(|| i.to_string(), |l| l[i].clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqDimMode {
    Exact,
    /// Greedy search; `d` is a certified lower bound.
    GreedyLowerBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqDimResult {
    pub d: usize,
    pub mode: SqDimMode,
    /// `d` concepts with pairwise `|correlation| ≤ 1/d`.
    pub witness: Vec<usize>,
}

fn correlation_matrix(class: &ConceptClassTable, dist: &Distribution) -> Result<Vec<Vec<f64>>> {
    if dist.dimension() != class.dimension() {
        return Err(QsqError::DimensionMismatch { expected: class.dimension(), found: dist.dimension() });
    }
    let len = class.len();
    map_indexed(Execution::default(), len, |i| {
        (0..len).map(|j| correlation(class.get(i), class.get(j), dist)).collect::<Result<Vec<_>>>()
    })
    .into_iter()
    .collect()
}

fn compatible(corr: &[Vec<f64>], i: usize, j: usize, d: usize) -> bool {
    corr[i][j].abs() <= 1.0 / d as f64 + CONTRACT_EPSILON
}

/// Bron–Kerbosch with pivoting over `u64` adjacency masks.
struct CliqueSearch<'a> {
    adjacency: &'a [u64],
    best: u64,
}

impl CliqueSearch<'_> {
    fn expand(&mut self, r: u64, mut p: u64, mut x: u64) {
        if p == 0 {
            if x == 0 && r.count_ones() > self.best.count_ones() {
                self.best = r;
            }
            return;
        }
        if r.count_ones() + p.count_ones() <= self.best.count_ones() {
            return;
        }
        let pivot = (p | x).trailing_zeros() as usize;
        let mut candidates = p & !self.adjacency[pivot];
        while candidates != 0 {
            let v = candidates.trailing_zeros() as usize;
            let bit = 1u64 << v;
            candidates &= !bit;
            self.expand(r | bit, p & self.adjacency[v], x & self.adjacency[v]);
            p &= !bit;
            x |= bit;
        }
    }
}

fn max_clique(adjacency: &[u64]) -> u64 {
    let all = if adjacency.len() == 64 { u64::MAX } else { (1u64 << adjacency.len()) - 1 };
    let mut search = CliqueSearch { adjacency, best: 0 };
    search.expand(0, all, 0);
    search.best
}

fn bits(mask: u64) -> Vec<usize> {
    (0..64).filter(|i| mask >> i & 1 == 1).collect()
}

/// Largest `d` with `d` concepts whose pairwise correlations under `dist`
/// are at most `1/d` in absolute value.
pub fn weak_sqdim(class: &ConceptClassTable, dist: &Distribution) -> Result<SqDimResult> {
    let corr = correlation_matrix(class, dist)?;
    let len = class.len();
    if len <= EXACT_SQDIM_LIMIT {
        for d in (1..=len).rev() {
            let adjacency: Vec<u64> = (0..len)
                .map(|i| (0..len).filter(|&j| j != i && compatible(&corr, i, j, d)).fold(0u64, |m, j| m | 1 << j))
                .collect();
            let clique = max_clique(&adjacency);
            if clique.count_ones() as usize >= d {
                let witness = bits(clique).into_iter().take(d).collect();
                return Ok(SqDimResult { d, mode: SqDimMode::Exact, witness });
            }
        }
        unreachable!("a single concept is always a feasible witness");
    }
    let greedy = |d: usize| {
        let mut chosen: Vec<usize> = Vec::new();
        for i in 0..len {
            if chosen.iter().all(|&j| compatible(&corr, i, j, d)) {
                chosen.push(i);
            }
        }
        chosen
    };
    let mut d = len;
    loop {
        let chosen = greedy(d);
        if chosen.len() >= d {
            return Ok(SqDimResult { d, mode: SqDimMode::GreedyLowerBound, witness: chosen[..d].to_vec() });
        }
        d = chosen.len().min(d - 1);
    }
}

/// Answer record kept for auditing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub query_index: usize,
    pub summary: String,
    pub tau_query: f64,
    pub answer: f64,
    pub cell: usize,
    pub live_before: usize,
    pub live_after: usize,
    /// `(candidate, exact value)` for every candidate live before the query.
    pub candidate_values: Vec<(usize, f64)>,
}

#[derive(Serialize)]
struct TranscriptCsvRow<'a> {
    query_index: usize,
    summary: &'a str,
    tau_query: f64,
    answer: f64,
    live_before: usize,
    live_after: usize,
}

/// Adversarial oracle over a finite class: answers each query with the
/// centre of the most populated width-`2τ` cell of candidate values and
/// discards the candidates outside that cell.
#[derive(Clone, Debug)]
pub struct Adversary {
    class: ConceptClassTable,
    specs: Vec<ExampleSpec>,
    dist: Distribution,
    tau: f64,
    cells: usize,
    live: Vec<usize>,
    transcript: Vec<TranscriptEntry>,
    exec: Execution,
}

impl Adversary {
    pub fn new(class: ConceptClassTable, dist: Distribution, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(QsqError::InvalidTolerance(tau));
        }
        if dist.dimension() != class.dimension() {
            return Err(QsqError::DimensionMismatch { expected: class.dimension(), found: dist.dimension() });
        }
        let specs = class
            .functions()
            .iter()
            .map(|f| ExampleSpec::new(f, dist.clone(), 0.0))
            .collect::<Result<Vec<_>>>()?;
        let cells = ((1.0 / tau) - 1e-9).ceil().max(1.0) as usize;
        let live = (0..class.len()).collect();
        Ok(Self { class, specs, dist, tau, cells, live, transcript: Vec::new(), exec: Execution::default() })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Number of cells, `⌈1/τ⌉`.
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn live(&self) -> &[usize] {
        &self.live
    }

    pub fn class(&self) -> &ConceptClassTable {
        &self.class
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    fn cell_of(&self, v: f64) -> usize {
        let raw = ((v + 1.0) / (2.0 * self.tau)).floor();
        (raw.max(0.0) as usize).min(self.cells - 1)
    }

    fn center(&self, cell: usize) -> f64 {
        -1.0 + (2 * cell + 1) as f64 * self.tau
    }

    /// Answers `m`; queries must have tolerance at least `2τ`.
    pub fn answer(&mut self, m: &Observable, tau_query: f64) -> Result<f64> {
        if !(tau_query.is_finite() && tau_query >= 2.0 * self.tau - CONTRACT_EPSILON) {
            return Err(QsqError::IllegalQuery(format!(
                "tolerance {tau_query} is below 2τ = {} for this adversary",
                2.0 * self.tau
            )));
        }
        let specs = &self.specs;
        let live = &self.live;
        let values = map_indexed(self.exec, live.len(), |k| exact_expectation(&specs[live[k]], m))
            .into_iter()
            .collect::<Result<Vec<f64>>>()?;
        let mut counts = vec![0usize; self.cells];
        for &v in &values {
            counts[self.cell_of(v)] += 1;
        }
        let best = counts.iter().max().copied().unwrap_or(0);
        let cell = counts.iter().position(|&c| c == best).unwrap_or(0);
        let answer = self.center(cell);
        let candidate_values: Vec<(usize, f64)> = live.iter().copied().zip(values.iter().copied()).collect();
        let survivors: Vec<usize> =
            candidate_values.iter().filter(|(_, v)| self.cell_of(*v) == cell).map(|(c, _)| *c).collect();
        self.transcript.push(TranscriptEntry {
            query_index: self.transcript.len(),
            summary: m.summary(),
            tau_query,
            answer,
            cell,
            live_before: self.live.len(),
            live_after: survivors.len(),
            candidate_values,
        });
        self.live = survivors;
        Ok(answer)
    }

    /// Every step keeps at least `⌈|live|/cells⌉` candidates.
    pub fn audit_shrinkage(&self) -> bool {
        self.transcript.iter().all(|e| e.live_after >= e.live_before.div_ceil(self.cells) && e.live_after >= 1)
    }

    /// Every answer is within the query tolerance (and within `τ`) of the
    /// value of every final survivor.
    pub fn audit_legality(&self) -> bool {
        self.transcript.iter().all(|e| {
            e.candidate_values.iter().filter(|(c, _)| self.live.contains(c)).all(|(_, v)| {
                let err = (e.answer - v).abs();
                err <= e.tau_query + CONTRACT_EPSILON && err <= self.tau + CONTRACT_EPSILON
            })
        })
    }

    pub fn transcript_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.transcript {
            w.serialize(TranscriptCsvRow {
                query_index: e.query_index,
                summary: &e.summary,
                tau_query: e.tau_query,
                answer: e.answer,
                live_before: e.live_before,
                live_after: e.live_after,
            })?;
        }
        let bytes = w.into_inner().map_err(|e| QsqError::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| QsqError::Format(e.to_string()))
    }
}

impl Qstat for Adversary {
    fn dimension(&self) -> usize {
        self.class.dimension()
    }

    fn distribution(&self) -> &Distribution {
        &self.dist
    }

    fn noise_rate(&self) -> f64 {
        0.0
    }

    fn qstat(&mut self, m: &Observable, tau: f64) -> Result<f64> {
        self.answer(m, tau)
    }

    fn query_count(&self) -> usize {
        self.transcript.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameStep {
    pub query_index: usize,
    pub summary: String,
    pub tau_query: f64,
    pub answer: f64,
    pub live_before: usize,
    pub live_after: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameReport {
    pub tau: f64,
    pub cells: usize,
    pub class_size: usize,
    pub queries: usize,
    pub surviving_count: usize,
    /// Survivor maximising the hypothesis error.
    pub worst_candidate: usize,
    pub worst_error: f64,
    pub error_target: f64,
    pub learned: bool,
    pub shrinkage_ok: bool,
    pub legality_ok: bool,
    pub steps: Vec<GameStep>,
}

/// Plays `learner` against the adversary; when it halts, the surviving
/// concept on which its hypothesis errs most is declared the target.
pub fn run_lower_bound_game<F>(
    learner: F,
    class: ConceptClassTable,
    dist: Distribution,
    tau: f64,
    error_target: f64,
) -> Result<(GameReport, Adversary)>
where
    F: FnOnce(&mut Adversary) -> Result<Hypothesis>,
{
    let mut adversary = Adversary::new(class, dist, tau)?;
    let h = learner(&mut adversary)?;
    let errors = adversary
        .live()
        .iter()
        .map(|&c| error_rate(&h, adversary.class().get(c), &adversary.dist).map(|e| (c, e)))
        .collect::<Result<Vec<_>>>()?;
    let (worst_candidate, worst_error) =
        errors.iter().copied().fold((adversary.live()[0], f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    let steps = adversary
        .transcript()
        .iter()
        .map(|e| GameStep {
            query_index: e.query_index,
            summary: e.summary.clone(),
            tau_query: e.tau_query,
            answer: e.answer,
            live_before: e.live_before,
            live_after: e.live_after,
        })
        .collect();
    let report = GameReport {
        tau,
        cells: adversary.cells(),
        class_size: adversary.class().len(),
        queries: adversary.query_count(),
        surviving_count: adversary.live().len(),
        worst_candidate,
        worst_error,
        error_target,
        learned: worst_error <= error_target,
        shrinkage_ok: adversary.audit_shrinkage(),
        legality_ok: adversary.audit_legality(),
        steps,
    };
    Ok((report, adversary))
}
