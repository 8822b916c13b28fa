//! Concept classes (parities, juntas, DNFs), the sparse sign hypothesis
//! returned by every learner, and exact error measurement.
//!
//! Outputs use the ±1 convention with `b ↦ (-1)^b`: a DNF that evaluates to
//! Boolean true outputs `-1`.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distribution::Distribution;
use crate::error::{QsqError, Result};
use crate::exec::{sum_indexed, Execution};
use crate::fourier::{butterfly, character, check_dimension, BooleanFunction};
use crate::rng::stream;

/// Anything that can be evaluated on `{0,1}^n`.
pub trait Concept {
    fn dimension(&self) -> usize;

    fn evaluate(&self, x: usize) -> i8;

    fn to_boolean_function(&self) -> Result<BooleanFunction> {
        BooleanFunction::from_fn(self.dimension(), |x| self.evaluate(x))
    }
}

impl Concept for BooleanFunction {
    fn dimension(&self) -> usize {
        BooleanFunction::dimension(self)
    }

    fn evaluate(&self, x: usize) -> i8 {
        self.value(x)
    }

    fn to_boolean_function(&self) -> Result<BooleanFunction> {
        Ok(self.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawParity")]
pub struct ParityConcept {
    pub n: usize,
    pub s: usize,
}

#[derive(Deserialize)]
struct RawParity {
    n: usize,
    s: usize,
}

impl TryFrom<RawParity> for ParityConcept {
    type Error = QsqError;
    fn try_from(raw: RawParity) -> Result<Self> {
        ParityConcept::new(raw.n, raw.s)
    }
}

impl ParityConcept {
    pub fn new(n: usize, s: usize) -> Result<Self> {
        check_dimension(n)?;
        if s >> n != 0 {
            return Err(QsqError::InvalidParameter(format!("parity index {s} needs more than {n} bits")));
        }
        Ok(Self { n, s })
    }
}

impl Concept for ParityConcept {
    fn dimension(&self) -> usize {
        self.n
    }

    fn evaluate(&self, x: usize) -> i8 {
        character(self.s, x)
    }
}

/// `c(x) = table[x restricted to relevant]`, where bit `j` of the table index
/// is the value of coordinate `relevant[j]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawJunta")]
pub struct JuntaConcept {
    pub n: usize,
    pub relevant: Vec<usize>,
    pub table: Vec<i8>,
}

#[derive(Deserialize)]
struct RawJunta {
    n: usize,
    relevant: Vec<usize>,
    table: Vec<i8>,
}

impl TryFrom<RawJunta> for JuntaConcept {
    type Error = QsqError;
    fn try_from(raw: RawJunta) -> Result<Self> {
        JuntaConcept::new(raw.n, raw.relevant, raw.table)
    }
}

impl JuntaConcept {
    pub fn new(n: usize, relevant: Vec<usize>, table: Vec<i8>) -> Result<Self> {
        check_dimension(n)?;
        if let Some(&bad) = relevant.iter().find(|&&i| i >= n) {
            return Err(QsqError::CoordinateOutOfRange { coordinate: bad, n });
        }
        let mut sorted = relevant.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != relevant.len() {
            return Err(QsqError::InvalidParameter("relevant coordinates must be distinct".into()));
        }
        if table.len() != 1 << relevant.len() || table.iter().any(|v| *v != 1 && *v != -1) {
            return Err(QsqError::InvalidTable(format!(
                "junta table must hold 2^{} entries in {{-1,+1}}",
                relevant.len()
            )));
        }
        Ok(Self { n, relevant, table })
    }

    pub fn k(&self) -> usize {
        self.relevant.len()
    }

    fn restrict(&self, x: usize) -> usize {
        self.relevant.iter().enumerate().fold(0, |acc, (j, &i)| acc | (x >> i & 1) << j)
    }
}

impl Concept for JuntaConcept {
    fn dimension(&self) -> usize {
        self.n
    }

    fn evaluate(&self, x: usize) -> i8 {
        self.table[self.restrict(x)]
    }
}

/// Literal `x_var` (or its negation when `neg`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Literal {
    pub var: usize,
    pub neg: bool,
}

impl Literal {
    fn satisfied(&self, x: usize) -> bool {
        (x >> self.var & 1 == 1) != self.neg
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawDnf")]
pub struct DnfConcept {
    pub n: usize,
    pub terms: Vec<Vec<Literal>>,
}

#[derive(Deserialize)]
struct RawDnf {
    n: usize,
    terms: Vec<Vec<Literal>>,
}

impl TryFrom<RawDnf> for DnfConcept {
    type Error = QsqError;
    fn try_from(raw: RawDnf) -> Result<Self> {
        DnfConcept::new(raw.n, raw.terms)
    }
}

impl DnfConcept {
    pub fn new(n: usize, terms: Vec<Vec<Literal>>) -> Result<Self> {
        check_dimension(n)?;
        for term in &terms {
            for (a, lit) in term.iter().enumerate() {
                if lit.var >= n {
                    return Err(QsqError::CoordinateOutOfRange { coordinate: lit.var, n });
                }
                if term[..a].iter().any(|other| other.var == lit.var && other.neg != lit.neg) {
                    return Err(QsqError::InvalidParameter(format!(
                        "term contains both polarities of x{}",
                        lit.var
                    )));
                }
            }
        }
        Ok(Self { n, terms })
    }
}

impl Concept for DnfConcept {
    fn dimension(&self) -> usize {
        self.n
    }

    fn evaluate(&self, x: usize) -> i8 {
        if self.terms.iter().any(|t| t.iter().all(|l| l.satisfied(x))) {
            -1
        } else {
            1
        }
    }
}

/// Any of the shipped concept classes, tagged by `kind` in JSON.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnyConcept {
    Parity(ParityConcept),
    Junta(JuntaConcept),
    Dnf(DnfConcept),
}

impl Concept for AnyConcept {
    fn dimension(&self) -> usize {
        match self {
            AnyConcept::Parity(c) => c.dimension(),
            AnyConcept::Junta(c) => c.dimension(),
            AnyConcept::Dnf(c) => c.dimension(),
        }
    }

    fn evaluate(&self, x: usize) -> i8 {
        match self {
            AnyConcept::Parity(c) => c.evaluate(x),
            AnyConcept::Junta(c) => c.evaluate(x),
            AnyConcept::Dnf(c) => c.evaluate(x),
        }
    }
}

/// One `(S, α_S)` entry of a hypothesis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisTerm {
    pub set: usize,
    pub coeff: f64,
}

/// `h(x) = sign(Σ_S α_S χ_S(x))` with `sign(0) = +1`.
///
/// Entries are kept sorted by set so predictions do not depend on the order
/// in which they were supplied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHypothesis")]
pub struct Hypothesis {
    n: usize,
    entries: Vec<HypothesisTerm>,
}

#[derive(Deserialize)]
struct RawHypothesis {
    n: usize,
    entries: Vec<HypothesisTerm>,
}

impl TryFrom<RawHypothesis> for Hypothesis {
    type Error = QsqError;
    fn try_from(raw: RawHypothesis) -> Result<Self> {
        Hypothesis::new(raw.n, raw.entries)
    }
}

/// Sums whose magnitude falls below this are treated as the tie `0`.
const TIE_EPSILON: f64 = 1e-12;
/// Above this many entries the full table is computed by one inverse transform.
const DENSE_EVALUATION_THRESHOLD: usize = 32;

impl Hypothesis {
    pub fn new(n: usize, mut entries: Vec<HypothesisTerm>) -> Result<Self> {
        check_dimension(n)?;
        if let Some(e) = entries.iter().find(|e| e.set >> n != 0 || !e.coeff.is_finite()) {
            return Err(QsqError::InvalidParameter(format!("invalid hypothesis entry {e:?}")));
        }
        entries.sort_by_key(|e| e.set);
        if entries.windows(2).any(|w| w[0].set == w[1].set) {
            return Err(QsqError::InvalidParameter("hypothesis entries must have distinct sets".into()));
        }
        Ok(Self { n, entries })
    }

    /// The exact representation `sign(χ_s)`.
    pub fn parity(n: usize, s: usize) -> Result<Self> {
        Self::new(n, vec![HypothesisTerm { set: s, coeff: 1.0 }])
    }

    pub fn constant(n: usize, value: i8) -> Result<Self> {
        Self::new(n, vec![HypothesisTerm { set: 0, coeff: value as f64 }])
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[HypothesisTerm] {
        &self.entries
    }

    fn sign(v: f64) -> i8 {
        if v < -TIE_EPSILON {
            -1
        } else {
            1
        }
    }

    pub fn predict(&self, x: usize) -> i8 {
        Self::sign(self.entries.iter().map(|e| e.coeff * character(e.set, x) as f64).sum())
    }

    /// Predictions on every input.
    pub fn table(&self) -> Vec<i8> {
        let len = 1usize << self.n;
        if self.entries.len() <= DENSE_EVALUATION_THRESHOLD {
            return (0..len).map(|x| self.predict(x)).collect();
        }
        let mut buf = vec![0.0; len];
        for e in &self.entries {
            buf[e.set] = e.coeff;
        }
        butterfly(&mut buf);
        buf.into_iter().map(Self::sign).collect()
    }

    pub fn to_boolean_function(&self) -> BooleanFunction {
        BooleanFunction::new(self.n, self.table()).expect("signs are ±1")
    }
}

impl Concept for Hypothesis {
    fn dimension(&self) -> usize {
        self.n
    }

    fn evaluate(&self, x: usize) -> i8 {
        self.predict(x)
    }
}

/// Exact `Pr_{x∼D}[h(x) ≠ c(x)]` by full enumeration.
pub fn error_rate<C: Concept + Sync + ?Sized>(h: &Hypothesis, c: &C, dist: &Distribution) -> Result<f64> {
    for found in [c.dimension(), dist.dimension()] {
        if found != h.n {
            return Err(QsqError::DimensionMismatch { expected: h.n, found });
        }
    }
    let predictions = h.table();
    Ok(sum_indexed(Execution::default(), predictions.len(), |x| {
        if predictions[x] != c.evaluate(x) {
            dist.prob(x)
        } else {
            0.0
        }
    }))
}

/// Parameters for [`random_concept`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConceptKind {
    Parity { n: usize },
    Junta { n: usize, k: usize },
    Dnf { n: usize, terms: usize, literal_prob: f64 },
}

/// Deterministic random concept: uniform `s`; uniform relevant set and
/// table; DNF terms with each literal kept independently with probability
/// `literal_prob` and uniform polarity, empty terms resampled.
pub fn random_concept(kind: &ConceptKind, seed: u64) -> Result<AnyConcept> {
    let mut rng = stream(seed, "random-concept", 0);
    match *kind {
        ConceptKind::Parity { n } => {
            check_dimension(n)?;
            let s = rng.random_range(0..1usize << n);
            Ok(AnyConcept::Parity(ParityConcept::new(n, s)?))
        }
        ConceptKind::Junta { n, k } => {
            check_dimension(n)?;
            if k > n {
                return Err(QsqError::InvalidParameter(format!("junta size k = {k} exceeds n = {n}")));
            }
            let relevant = sample(&mut rng, n, k).into_vec();
            let table = (0..1usize << k).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
            Ok(AnyConcept::Junta(JuntaConcept::new(n, relevant, table)?))
        }
        ConceptKind::Dnf { n, terms, literal_prob } => {
            check_dimension(n)?;
            if terms == 0 || !(literal_prob > 0.0 && literal_prob <= 1.0) {
                return Err(QsqError::InvalidParameter(
                    "DNF needs at least one term and literal probability in (0, 1]".into(),
                ));
            }
            let mut out = Vec::with_capacity(terms);
            while out.len() < terms {
                let mut term = Vec::new();
                for var in 0..n {
                    if rng.random_bool(literal_prob) {
                        term.push(Literal { var, neg: rng.random_bool(0.5) });
                    }
                }
                if !term.is_empty() {
                    out.push(term);
                }
            }
            Ok(AnyConcept::Dnf(DnfConcept::new(n, out)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::walsh_hadamard_transform;
    use proptest::prelude::*;

    #[test]
    fn evaluation_semantics() {
        let p = ParityConcept::new(4, 0).unwrap();
        assert!((0..16).all(|x| p.evaluate(x) == 1));
        let d = DnfConcept::new(3, vec![vec![Literal { var: 0, neg: false }]]).unwrap();
        assert_eq!(d.evaluate(0b001), -1);
        assert_eq!(d.evaluate(0b110), 1);
        let j = JuntaConcept::new(3, vec![2], vec![1, -1]).unwrap();
        assert_eq!(j.evaluate(0), 1);
        assert_eq!(j.evaluate(0b100), -1);
    }

    #[test]
    fn truth_tables() {
        let f = AnyConcept::Parity(ParityConcept::new(5, 0b10011).unwrap()).to_boolean_function().unwrap();
        let spec = walsh_hadamard_transform(&f);
        assert_eq!(spec.coefficient(0b10011), 1.0);
        let empty = DnfConcept::new(4, vec![]).unwrap().to_boolean_function().unwrap();
        assert!(empty.values().iter().all(|v| *v == 1));
    }

    #[test]
    fn invalid_concepts() {
        assert!(ParityConcept::new(3, 8).is_err());
        assert!(JuntaConcept::new(3, vec![0, 0], vec![1; 4]).is_err());
        assert!(JuntaConcept::new(3, vec![3], vec![1; 2]).is_err());
        let both = vec![Literal { var: 1, neg: false }, Literal { var: 1, neg: true }];
        assert!(DnfConcept::new(3, vec![both]).is_err());
        assert!(random_concept(&ConceptKind::Junta { n: 3, k: 4 }, 1).is_err());
        assert!(random_concept(&ConceptKind::Dnf { n: 3, terms: 0, literal_prob: 0.5 }, 1).is_err());
    }

    #[test]
    fn hypothesis_predictions() {
        let h = Hypothesis::parity(4, 0b0110).unwrap();
        assert!((0..16).all(|x| h.predict(x) == character(0b0110, x)));
        let empty = Hypothesis::new(4, vec![]).unwrap();
        assert!((0..16).all(|x| empty.predict(x) == 1));
        let h = Hypothesis::new(
            3,
            vec![HypothesisTerm { set: 0, coeff: 0.2 }, HypothesisTerm { set: 0b011, coeff: -0.9 }],
        )
        .unwrap();
        assert_eq!(h.predict(0b000), -1);
        assert!(Hypothesis::new(2, vec![HypothesisTerm { set: 1, coeff: 1.0 }; 2]).is_err());
    }

    #[test]
    fn error_rates() {
        let u = Distribution::uniform(3).unwrap();
        let maj = BooleanFunction::from_fn(3, |x| if x.count_ones() >= 2 { -1 } else { 1 }).unwrap();
        // Dictator on coordinate 1 vs MAJ3 disagrees on 2 of the 8 inputs.
        let dictator = Hypothesis::new(3, vec![HypothesisTerm { set: 0b001, coeff: 0.5 }]).unwrap();
        assert_eq!(error_rate(&dictator, &maj, &u).unwrap(), 0.25);
        let p = ParityConcept::new(3, 0b101).unwrap();
        assert_eq!(error_rate(&Hypothesis::parity(3, 0b101).unwrap(), &p, &u).unwrap(), 0.0);
        let neg = Hypothesis::new(3, vec![HypothesisTerm { set: 0b101, coeff: -1.0 }]).unwrap();
        assert_eq!(error_rate(&neg, &p, &u).unwrap(), 1.0);
    }

    #[test]
    fn random_concepts_are_deterministic() {
        let kinds = [
            ConceptKind::Parity { n: 4 },
            ConceptKind::Junta { n: 8, k: 3 },
            ConceptKind::Dnf { n: 8, terms: 3, literal_prob: 0.3 },
        ];
        for kind in &kinds {
            assert_eq!(random_concept(kind, 11).unwrap(), random_concept(kind, 11).unwrap());
        }
        let constant = random_concept(&ConceptKind::Junta { n: 5, k: 0 }, 3).unwrap();
        let f = constant.to_boolean_function().unwrap();
        assert!(f.values().iter().all(|v| *v == f.value(0)));
    }

    #[test]
    fn concept_json_forms() {
        let c: AnyConcept = serde_json::from_str(r#"{"kind":"parity","n":3,"s":5}"#).unwrap();
        assert_eq!(c, AnyConcept::Parity(ParityConcept { n: 3, s: 5 }));
        let c: AnyConcept =
            serde_json::from_str(r#"{"kind":"dnf","n":3,"terms":[[{"var":0,"neg":false},{"var":2,"neg":true}]]}"#)
                .unwrap();
        assert_eq!(c.evaluate(0b001), -1);
        let j = AnyConcept::Junta(JuntaConcept::new(3, vec![1], vec![1, -1]).unwrap());
        assert_eq!(serde_json::to_string(&j).unwrap(), r#"{"kind":"junta","n":3,"relevant":[1],"table":[1,-1]}"#);
        assert!(serde_json::from_str::<AnyConcept>(r#"{"kind":"parity","n":3,"s":9}"#).is_err());
        let h: Hypothesis = serde_json::from_str(r#"{"n":2,"entries":[{"set":3,"coeff":0.5}]}"#).unwrap();
        assert_eq!(h.predict(0b01), -1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn tables_agree_with_direct_evaluation(seed in any::<u64>(), which in 0usize..3) {
            let kind = match which {
                0 => ConceptKind::Parity { n: 7 },
                1 => ConceptKind::Junta { n: 8, k: 3 },
                _ => ConceptKind::Dnf { n: 7, terms: 4, literal_prob: 0.35 },
            };
            let c = random_concept(&kind, seed).unwrap();
            let f = c.to_boolean_function().unwrap();
            for x in 0..1usize << c.dimension() {
                prop_assert_eq!(f.value(x), c.evaluate(x));
            }
        }

        #[test]
        fn junta_ignores_irrelevant_coordinates(seed in any::<u64>()) {
            let AnyConcept::Junta(j) = random_concept(&ConceptKind::Junta { n: 8, k: 3 }, seed).unwrap() else {
                unreachable!()
            };
            for x in 0..256usize {
                for i in (0..8).filter(|i| !j.relevant.contains(i)) {
                    prop_assert_eq!(j.evaluate(x), j.evaluate(x ^ 1 << i));
                }
            }
        }

        #[test]
        fn error_rate_is_order_independent_and_complementary(
            coeffs in proptest::collection::vec(-1.0f64..1.0, 1..40),
            seed in any::<u64>(),
        ) {
            let n = 6;
            let entries: Vec<HypothesisTerm> = coeffs
                .iter()
                .enumerate()
                .map(|(i, &coeff)| ((i * 37 + 5) % 64, coeff))
                .collect::<std::collections::BTreeMap<_, _>>()
                .into_iter()
                .map(|(set, coeff)| HypothesisTerm { set, coeff })
                .collect();
            let mut reversed = entries.clone();
            reversed.reverse();
            let h = Hypothesis::new(n, entries).unwrap();
            let r = Hypothesis::new(n, reversed).unwrap();
            let c = random_concept(&ConceptKind::Dnf { n, terms: 3, literal_prob: 0.4 }, seed).unwrap();
            let d = Distribution::from_weights(n, (0..64).map(|x| 1.0 + (x % 7) as f64).collect()).unwrap();
            let e = error_rate(&h, &c, &d).unwrap();
            prop_assert_eq!(e, error_rate(&r, &c, &d).unwrap());
            let agree: f64 = (0..64).filter(|&x| h.predict(x) == c.evaluate(x)).map(|x| d.prob(x)).sum();
            prop_assert!((e + agree - 1.0).abs() <= 1e-12);
            prop_assert_eq!(h.table(), (0..64).map(|x| h.predict(x)).collect::<Vec<_>>());
        }
    }
}
