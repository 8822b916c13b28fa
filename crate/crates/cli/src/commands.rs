use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use qsq_core::adversary::{run_lower_bound_game, weak_sqdim, ConceptClassTable};
use qsq_core::concepts::{error_rate, random_concept, AnyConcept, Concept, ConceptKind};
use qsq_core::distribution::Distribution;
use qsq_core::exec::Execution;
use qsq_core::fourier::walsh_hadamard_transform;
use qsq_core::learners::{self, GlReport, LearnerReport, PARITY_TOLERANCE};
use qsq_core::oracle::{ExampleSpec, Oracle, ToleranceModel};
use qsq_core::privacy::{self, AuditConfig, PrivateLearnerDescriptor};
use qsq_core::protocol::{run_protocol, ProtocolConfig};
use qsq_core::rng::StreamRng;
use qsq_core::simulation::{run_coverage, CoverageConfig};
use qsq_core::QsqError;

use crate::{CliError, CliResult, Outcome, Params};

macro_rules! params {
    ($(#[$meta:meta])* $name:ident { $($(#[$fmeta:meta])* $field:ident : $ty:ty = $default:expr),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Args, Serialize, Deserialize, Clone, Debug, Default)]
        #[serde(default, deny_unknown_fields)]
        pub struct $name {
            $($(#[$fmeta])* #[arg(long)] pub $field: Option<$ty>,)*
        }

        impl Params for $name {
            fn overlay(self, base: Self) -> Self {
                Self { $($field: self.$field.or(base.$field)),* }
            }

            fn fill(self) -> Self {
                Self { $($field: self.$field.or($default)),* }
            }
        }
    };
}

params!(ParityParams {
    n: usize = Some(10),
    /// Target parity as an integer bit mask; random from the seed if absent.
    s: usize = None,
    seed: u64 = None,
    /// exact, grid, sampling or hoeffding.
    model: String = Some("grid".into()),
    /// Grid spacing is twice min(model_tau, query tolerance).
    model_tau: f64 = Some(1.0),
    delta_share: f64 = Some(0.01),
    copies: usize = None,
});

params!(JuntaParams {
    n: usize = Some(12),
    k: usize = Some(4),
    eps: f64 = Some(0.1),
    /// JSON concept file; random junta from the seed if absent.
    concept: PathBuf = None,
    seed: u64 = None,
    model: String = Some("grid".into()),
    model_tau: f64 = Some(1.0),
    delta_share: f64 = Some(0.01),
    copies: usize = None,
});

params!(GlParams {
    n: usize = Some(10),
    /// Junta size of the random target.
    k: usize = Some(3),
    tau: f64 = Some(0.3),
    concept: PathBuf = None,
    seed: u64 = None,
    model: String = Some("grid".into()),
    model_tau: f64 = Some(1.0),
    delta_share: f64 = Some(0.01),
    copies: usize = None,
});

params!(DnfParams {
    n: usize = Some(10),
    /// Term bound; also the number of terms of the random target.
    s: usize = Some(4),
    eps: f64 = Some(0.15),
    literal_prob: f64 = Some(0.3),
    concept: PathBuf = None,
    seed: u64 = None,
    model: String = Some("exact".into()),
    model_tau: f64 = Some(1.0),
    delta_share: f64 = Some(0.01),
    copies: usize = None,
});

params!(SimParams {
    n: usize = Some(8),
    tau: f64 = Some(0.1),
    delta_share: f64 = Some(0.05),
    /// Label noise rate; sim-noisy defaults to 0.01.
    eta: f64 = None,
    trials: usize = Some(1000),
    seed: u64 = None,
});

params!(SqdimParams {
    /// JSON concept class file.
    class: PathBuf = None,
    /// Use the parity class on n bits instead of a file.
    n: usize = None,
});

params!(GameParams {
    n: usize = Some(8),
    tau: f64 = Some(1.0 / 12.0),
    /// Influence queries before the learner halts; defaults to n.
    queries: usize = None,
    error_target: f64 = Some(0.1),
});

params!(ProtocolParams {
    n: usize = Some(8),
    tau: f64 = Some(PARITY_TOLERANCE),
    trials: usize = Some(500),
    seed: u64 = None,
});

params!(PrivateParams {
    n: usize = Some(8),
    s: usize = None,
    alpha: f64 = Some(0.5),
    delta: f64 = Some(0.05),
    seed: u64 = None,
});

params!(AuditParams {
    alpha: f64 = Some(0.5),
    /// Tuple length.
    t: usize = Some(100),
    samples: usize = Some(200_000),
    bins: usize = Some(40),
    /// laplace, or exact for the noiseless mean.
    mechanism: String = Some("laplace".into()),
    seed: u64 = None,
});

params!(SpectrumParams {
    n: usize = Some(6),
    k: usize = Some(3),
    concept: PathBuf = None,
    seed: u64 = None,
});

fn need_seed(seed: Option<u64>) -> CliResult<u64> {
    seed.ok_or_else(|| CliError::Usage("--seed is required for this run".into()))
}

fn to_value<T: Serialize>(v: &T) -> CliResult<Value> {
    serde_json::to_value(v).map_err(|e| CliError::Usage(e.to_string()))
}

fn tolerance_model(
    model: &str,
    model_tau: f64,
    delta_share: f64,
    copies: Option<usize>,
    seed: Option<u64>,
) -> CliResult<ToleranceModel> {
    Ok(match model {
        "exact" => ToleranceModel::Exact,
        "grid" => ToleranceModel::GridAdversary { tau: model_tau },
        "hoeffding" => ToleranceModel::Hoeffding { delta_share, seed: need_seed(seed)? },
        "sampling" => ToleranceModel::Sampling {
            copies: copies.ok_or_else(|| CliError::Usage("--copies is required for the sampling model".into()))?,
            seed: need_seed(seed)?,
        },
        other => return Err(CliError::Usage(format!("unknown tolerance model {other:?}"))),
    })
}

/// Loads `path` if given, otherwise draws from `kind` with the seed.
fn target(path: &Option<PathBuf>, n: usize, kind: ConceptKind, seed: Option<u64>) -> CliResult<AnyConcept> {
    let concept = match path {
        Some(p) => read_json::<AnyConcept>(p)?,
        None => random_concept(&kind, need_seed(seed)?)?,
    };
    if concept.dimension() != n {
        return Err(CliError::Usage(format!("concept has n = {}, but n = {n} was configured", concept.dimension())));
    }
    Ok(concept)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn learner_result(report: &LearnerReport, oracle: &Oracle) -> CliResult<(Value, String)> {
    let mut value = to_value(report)?;
    value["oracle_model"] = to_value(oracle.model())?;
    value["tolerance_violations"] = json!(oracle.log().violations().len());
    Ok((value, oracle.log().to_csv()?))
}

pub fn learn_parity(p: &ParityParams) -> CliResult<Outcome> {
    let n = p.n.unwrap();
    let s = match p.s {
        Some(s) => s,
        None => match random_concept(&ConceptKind::Parity { n }, need_seed(p.seed)?)? {
            AnyConcept::Parity(c) => c.s,
            _ => unreachable!(),
        },
    };
    let concept = qsq_core::concepts::ParityConcept::new(n, s)?;
    let model = tolerance_model(p.model.as_deref().unwrap(), p.model_tau.unwrap(), p.delta_share.unwrap(), p.copies, p.seed)?;
    let mut oracle = Oracle::new(ExampleSpec::uniform(&concept)?, model)?;
    let report = learners::learn_parity(&mut oracle)?;
    let holds = report.recovered_parity == Some(s);
    let (mut result, trace) = learner_result(&report, &oracle)?;
    result["target"] = json!(s);
    Ok(Outcome { predicate: "recovered_parity == target", holds, result, trace: Some(trace) })
}

fn run_learner(
    concept: &AnyConcept,
    model: ToleranceModel,
    eps: f64,
    learner: impl FnOnce(&mut Oracle) -> qsq_core::Result<LearnerReport>,
) -> CliResult<Outcome> {
    let mut oracle = Oracle::new(ExampleSpec::uniform(concept)?, model)?;
    let report = learner(&mut oracle)?;
    let err = error_rate(&report.hypothesis, concept, &Distribution::uniform(concept.dimension())?)?;
    let (mut result, trace) = learner_result(&report, &oracle)?;
    result["error_rate"] = json!(err);
    result["target"] = to_value(concept)?;
    Ok(Outcome { predicate: "error_rate <= eps", holds: err <= eps, result, trace: Some(trace) })
}

pub fn learn_junta(p: &JuntaParams) -> CliResult<Outcome> {
    let (n, k, eps) = (p.n.unwrap(), p.k.unwrap(), p.eps.unwrap());
    let concept = target(&p.concept, n, ConceptKind::Junta { n, k }, p.seed)?;
    let model = tolerance_model(p.model.as_deref().unwrap(), p.model_tau.unwrap(), p.delta_share.unwrap(), p.copies, p.seed)?;
    run_learner(&concept, model, eps, |o| learners::learn_junta(o, k, eps))
}

pub fn learn_dnf(p: &DnfParams) -> CliResult<Outcome> {
    let (n, s, eps) = (p.n.unwrap(), p.s.unwrap(), p.eps.unwrap());
    let kind = ConceptKind::Dnf { n, terms: s, literal_prob: p.literal_prob.unwrap() };
    let concept = target(&p.concept, n, kind, p.seed)?;
    let model = tolerance_model(p.model.as_deref().unwrap(), p.model_tau.unwrap(), p.delta_share.unwrap(), p.copies, p.seed)?;
    run_learner(&concept, model, eps, |o| learners::learn_dnf(o, s, eps))
}

pub fn gl(p: &GlParams) -> CliResult<Outcome> {
    let (n, tau) = (p.n.unwrap(), p.tau.unwrap());
    let concept = target(&p.concept, n, ConceptKind::Junta { n, k: p.k.unwrap() }, p.seed)?;
    let model = tolerance_model(p.model.as_deref().unwrap(), p.model_tau.unwrap(), p.delta_share.unwrap(), p.copies, p.seed)?;
    let spec = ExampleSpec::uniform(&concept)?;
    let spectrum = spec.spectrum().clone();
    let mut oracle = Oracle::new(spec, model)?;
    let report: GlReport = learners::goldreich_levin(&mut oracle, tau)?;
    let heavy: Vec<usize> = (0..1usize << n).filter(|&s| spectrum.coefficient(s).abs() >= tau).collect();
    let complete = heavy.iter().all(|s| report.sets.contains(s));
    let sound = report.sets.iter().all(|&s| spectrum.coefficient(s).abs() >= tau / 2.0);
    let mut result = to_value(&report)?;
    result["true_heavy_sets"] = json!(heavy);
    result["complete"] = json!(complete);
    result["sound"] = json!(sound);
    result["query_bound"] = json!(GlReport::query_bound(n, tau, report.sets.len()));
    Ok(Outcome {
        predicate: "every |coefficient| >= tau listed and every listed set has |coefficient| >= tau/2",
        holds: complete && sound,
        result,
        trace: Some(oracle.log().to_csv()?),
    })
}

pub fn simulate(p: &SimParams, noisy: bool) -> CliResult<Outcome> {
    let eta = p.eta.unwrap_or(if noisy { 0.01 } else { 0.0 });
    if !noisy && eta != 0.0 {
        return Err(CliError::Usage("sim-qstat is noiseless; use sim-noisy for eta > 0".into()));
    }
    let delta_share = p.delta_share.unwrap();
    let config = CoverageConfig {
        n: p.n.unwrap(),
        tau: p.tau.unwrap(),
        delta_share,
        eta,
        trials: p.trials.unwrap(),
        seed: need_seed(p.seed)?,
    };
    let report = run_coverage(&config, Execution::default())?;
    let allowed = 1.5 * delta_share;
    let mut result = to_value(&report)?;
    result["eta"] = json!(eta);
    result["allowed_violation_rate"] = json!(allowed);
    Ok(Outcome {
        predicate: "violation_rate <= 1.5 * delta_share",
        holds: report.violation_rate <= allowed,
        result,
        trace: Some(report.to_csv()?),
    })
}

pub fn sqdim(p: &SqdimParams) -> CliResult<Outcome> {
    let class = match (&p.class, p.n) {
        (Some(path), None) => read_json::<ConceptClassTable>(path)?,
        (None, Some(n)) => ConceptClassTable::parities(n)?,
        _ => return Err(CliError::Usage("give exactly one of --class or --n".into())),
    };
    let dist = Distribution::uniform(class.dimension())?;
    let r = weak_sqdim(&class, &dist)?;
    let witness_ok = r.witness.iter().all(|&i| {
        r.witness.iter().all(|&j| {
            i == j
                || qsq_core::fourier::correlation(class.get(i), class.get(j), &dist)
                    .map(|c| c.abs() <= 1.0 / r.d as f64 + 1e-12)
                    .unwrap_or(false)
        })
    });
    let labels: Vec<String> = r.witness.iter().map(|&i| class.label(i)).collect();
    let result = json!({
        "d": r.d,
        "mode": r.mode,
        "class_size": class.len(),
        "n": class.dimension(),
        "witness": r.witness,
        "witness_labels": labels,
    });
    Ok(Outcome { predicate: "witness is pairwise 1/d-uncorrelated", holds: witness_ok, result, trace: None })
}

pub fn adversary_game(p: &GameParams) -> CliResult<Outcome> {
    let (n, tau) = (p.n.unwrap(), p.tau.unwrap());
    if 2.0 * tau > PARITY_TOLERANCE + 1e-12 {
        return Err(CliError::Usage(format!("tau must be at most {} so the parity learner's queries are legal", PARITY_TOLERANCE / 2.0)));
    }
    let queries = p.queries.unwrap_or(n);
    let class = ConceptClassTable::parities(n)?;
    let (report, adversary) = run_lower_bound_game(
        |adv| learners::learn_parity_prefix(adv, queries).map(|r| r.hypothesis),
        class,
        Distribution::uniform(n)?,
        tau,
        p.error_target.unwrap(),
    )?;
    let lower_bound = n as f64 * 2f64.ln() / (1.0 / (2.0 * tau)).ln();
    let mut result = to_value(&report)?;
    result["query_lower_bound"] = json!(lower_bound);
    Ok(Outcome {
        predicate: "shrinkage and legality audits hold",
        holds: report.shrinkage_ok && report.legality_ok,
        result,
        trace: Some(adversary.transcript_csv()?),
    })
}

pub fn protocol(p: &ProtocolParams) -> CliResult<Outcome> {
    let trials = p.trials.unwrap();
    let config = ProtocolConfig::parity(p.n.unwrap(), p.tau.unwrap())?;
    let report = run_protocol(&config, trials, need_seed(p.seed)?, Execution::default())?;
    let floor = 0.5 + report.gamma_target - 1.5 / (trials.max(1) as f64).sqrt();
    let holds = report.success >= floor && report.all_answers_legal;
    let mut trace = String::from("trial,concept,input,queries,bits,prediction,label,answers_legal\n");
    for r in &report.records {
        let _ = writeln!(
            trace,
            "{},{},{},{},{},{},{},{}",
            r.trial, r.concept, r.input, r.queries, r.bits, r.prediction, r.label, r.answers_legal
        );
    }
    let mut result = to_value(&report)?;
    result["success_floor"] = json!(floor);
    Ok(Outcome { predicate: "success >= 1/2 + gamma - 3 sigma and all answers legal", holds, result, trace: Some(trace) })
}

pub fn private_learn(p: &PrivateParams) -> CliResult<Outcome> {
    let n = p.n.unwrap();
    let seed = need_seed(p.seed)?;
    let s = match p.s {
        Some(s) => s,
        None => match random_concept(&ConceptKind::Parity { n }, seed)? {
            AnyConcept::Parity(c) => c.s,
            _ => unreachable!(),
        },
    };
    let concept = qsq_core::concepts::ParityConcept::new(n, s)?;
    let report = privacy::private_pac_learn(
        &PrivateLearnerDescriptor::parity(n),
        ExampleSpec::uniform(&concept)?,
        p.alpha.unwrap(),
        p.delta.unwrap(),
        seed,
    )?;
    let mut trace = String::from("query,answer,exact,abs_error,noise\n");
    for (i, a) in report.answers.iter().enumerate() {
        let _ = writeln!(trace, "{i},{},{},{},{}", a.answer, a.exact, a.abs_error, a.noise);
    }
    let holds = report.learner.recovered_parity == Some(s);
    let mut result = to_value(&report)?;
    result["target"] = json!(s);
    Ok(Outcome { predicate: "recovered_parity == target", holds, result, trace: Some(trace) })
}

pub fn dp_audit(p: &AuditParams) -> CliResult<Outcome> {
    let (alpha, t) = (p.alpha.unwrap(), p.t.unwrap());
    if t == 0 {
        return Err(CliError::Usage("tuple length t must be positive".into()));
    }
    let base = vec![0.5; t];
    let mut neighbour = base.clone();
    neighbour[0] = 1.0;
    let cert = privacy::private_average_certificate(&base, &neighbour, alpha)?;
    let scale = 1.0 / (alpha * t as f64);
    let (lo, hi) = (0.5 - 5.0 * scale, 0.5 + 0.5 / t as f64 + 5.0 * scale);
    let config = AuditConfig {
        alpha,
        lo,
        hi,
        bins: p.bins.unwrap(),
        samples: p.samples.unwrap(),
        seed: need_seed(p.seed)?,
    };
    let report = match p.mechanism.as_deref().unwrap() {
        "laplace" => privacy::dp_audit(privacy::private_average_mechanism(alpha), &base, &neighbour, &config)?,
        "exact" => privacy::dp_audit(
            |v: &[f64], _: &mut StreamRng| -> qsq_core::Result<f64> { Ok(v.iter().sum::<f64>() / v.len() as f64) },
            &base,
            &neighbour,
            &config,
        )?,
        other => return Err(CliError::Usage(format!("unknown mechanism {other:?}"))),
    };
    let mut trace = String::from("lo,hi,count_p,count_q,status,log_ratio,slack\n");
    for b in &report.bins {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let status = to_value(&b.status)?;
        let _ = writeln!(
            trace,
            "{},{},{},{},{},{},{}",
            b.lo,
            b.hi,
            b.count_p,
            b.count_q,
            status.as_str().unwrap_or_default(),
            opt(b.log_ratio),
            opt(b.slack)
        );
    }
    let mut result = to_value(&report)?;
    result["certificate"] = to_value(&cert)?;
    Ok(Outcome { predicate: "every compared bin within alpha + slack", holds: report.pass, result, trace: Some(trace) })
}

pub fn spectrum(p: &SpectrumParams) -> CliResult<Outcome> {
    let n = p.n.unwrap();
    let concept = target(&p.concept, n, ConceptKind::Junta { n, k: p.k.unwrap() }, p.seed)?;
    let spectrum = walsh_hadamard_transform(&concept.to_boolean_function()?);
    let parseval = spectrum.parseval_sum();
    let mut trace = String::from("set,coefficient\n");
    for (s, c) in spectrum.coefficients().iter().enumerate() {
        let _ = writeln!(trace, "{s},{c}");
    }
    let influences = (0..n).map(|i| spectrum.influence(i)).collect::<Result<Vec<_>, QsqError>>()?;
    let result = json!({
        "target": to_value(&concept)?,
        "coefficients": spectrum.coefficients(),
        "influences": influences,
        "parseval_sum": parseval,
    });
    Ok(Outcome { predicate: "|parseval_sum - 1| <= 1e-9", holds: (parseval - 1.0).abs() <= 1e-9, result, trace: Some(trace) })
}
