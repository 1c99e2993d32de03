//! Suites: scenarios crossed with arms and seeds, aggregated per arm.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parley_core::domain::{load_domain_config_file, DomainConfig};
use parley_core::engine::{to_jsonl_line, AuditEvent, AuditKind, Engine, SessionSettings};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{detection_rates, load_corpus, DetectionRates, LabeledPhrase};
use crate::metrics::{compute_metrics, SessionMetrics};
use crate::persona::Persona;
use crate::policy::Policy;
use crate::runner::{run_session, session_rng, RunSpec};
use crate::stats::{describe, Stats};
use crate::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub scenario_id: String,
    pub config: String,
    pub persona: String,
    pub policy: Policy,
}

/// Settings overrides for one configuration of the suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub arm_id: String,
    #[serde(default)]
    pub stcc_enabled: Option<bool>,
    #[serde(default)]
    pub preflight_enabled: Option<bool>,
    #[serde(default)]
    pub tau_gate: Option<f64>,
}

impl ArmSpec {
    pub fn settings(&self) -> SessionSettings {
        let mut s = SessionSettings::default();
        if let Some(v) = self.stcc_enabled {
            s.stcc_enabled = v;
        }
        if let Some(v) = self.preflight_enabled {
            s.preflight_enabled = v;
        }
        s
    }

    pub fn apply(&self, config: &Arc<DomainConfig>) -> Arc<DomainConfig> {
        match self.tau_gate {
            Some(t) => {
                let mut c = (**config).clone();
                c.thresholds.tau_gate = t;
                Arc::new(c)
            }
            None => config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSpec {
    pub suite_id: String,
    pub scenarios: Vec<ScenarioSpec>,
    pub arms: Vec<ArmSpec>,
    #[serde(default)]
    pub corpus: Option<String>,
}

/// A suite with its files loaded. Paths resolve against the suite file.
#[derive(Debug, Clone)]
pub struct Suite {
    pub def: SuiteSpec,
    pub configs: BTreeMap<String, Arc<DomainConfig>>,
    pub personas: BTreeMap<String, Persona>,
    pub corpus: Vec<LabeledPhrase>,
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    base.join(rel)
}

impl Suite {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        let def: SuiteSpec = serde_json::from_str(&text).map_err(|e| SimError::Suite(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut configs = BTreeMap::new();
        let mut personas = BTreeMap::new();
        for sc in &def.scenarios {
            if !configs.contains_key(&sc.config) {
                let c = load_domain_config_file(resolve(base, &sc.config))
                    .map_err(|e| SimError::Suite(format!("{}: {e}", sc.config)))?;
                configs.insert(sc.config.clone(), Arc::new(c));
            }
            if !personas.contains_key(&sc.persona) {
                let p = Persona::load(resolve(base, &sc.persona))?;
                p.validate(&configs[&sc.config])?;
                personas.insert(sc.persona.clone(), p);
            }
        }
        let corpus = match &def.corpus {
            Some(c) => load_corpus(resolve(base, c))?,
            None => Vec::new(),
        };
        Ok(Suite { def, configs, personas, corpus })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub arm_id: String,
    pub scenario_id: String,
    pub seed: u64,
    pub metrics: SessionMetrics,
    #[serde(skip)]
    pub trace: Vec<AuditEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm_id: String,
    pub sessions: usize,
    pub agreement_rate: f64,
    pub censored: usize,
    pub total_rounds: Option<Stats>,
    pub screening_rounds: Option<Stats>,
    /// Over uncensored sessions only.
    pub tci_convergence_rounds: Option<Stats>,
    pub ig_total_bits: Option<Stats>,
    pub stcc_bits: Option<Stats>,
    pub screen_bits: Option<Stats>,
    pub round1_ig_bits: Option<Stats>,
    /// Over agreed sessions. A harness convention, not an elicited preference.
    pub normalized_utility: Option<Stats>,
    /// Escalation events per session, by trigger.
    pub escalation_frequency: BTreeMap<String, f64>,
    pub violation_rate_low: f64,
    pub violation_rate_medium: f64,
    pub violation_rate_high: f64,
    /// Detector scores per domain lexicon, keyed by domain id.
    pub commitment_detection: BTreeMap<String, DetectionRates>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite_id: String,
    pub seeds: Vec<u64>,
    pub arms: Vec<ArmReport>,
    pub sessions: Vec<SessionRecord>,
}

pub fn aggregate(arm_id: &str, records: &[&SessionRecord], detection: &BTreeMap<String, DetectionRates>) -> ArmReport {
    let n = records.len();
    let col = |f: &dyn Fn(&SessionMetrics) -> Option<f64>| -> Option<Stats> {
        let xs: Vec<f64> = records.iter().filter_map(|r| f(&r.metrics)).collect();
        describe(&xs)
    };
    let mut esc: BTreeMap<String, f64> = BTreeMap::new();
    let (mut low, mut med, mut high, mut denom) = (0u64, 0u64, 0u64, 0u64);
    for r in records {
        for (t, c) in &r.metrics.escalations {
            *esc.entry(t.clone()).or_default() += *c as f64;
        }
        let v = r.metrics.violations;
        low += v.low as u64;
        med += v.medium as u64;
        high += v.high as u64;
        denom += (r.metrics.delivered + r.metrics.blocked) as u64;
    }
    for v in esc.values_mut() {
        *v /= n.max(1) as f64;
    }
    let rate = |x: u64| if denom == 0 { 0.0 } else { x as f64 / denom as f64 };
    ArmReport {
        arm_id: arm_id.to_string(),
        sessions: n,
        agreement_rate: records.iter().filter(|r| r.metrics.agreed).count() as f64 / n.max(1) as f64,
        censored: records.iter().filter(|r| r.metrics.censored()).count(),
        total_rounds: col(&|m| Some(m.total_rounds as f64)),
        screening_rounds: col(&|m| Some(m.screening_rounds as f64)),
        tci_convergence_rounds: col(&|m| m.tci_convergence_rounds.map(f64::from)),
        ig_total_bits: col(&|m| Some(m.ig_total_bits)),
        stcc_bits: col(&|m| Some(m.stcc_bits)),
        screen_bits: col(&|m| Some(m.screen_bits)),
        round1_ig_bits: col(&|m| Some(m.round1_ig_bits)),
        normalized_utility: col(&|m| m.normalized_utility),
        escalation_frequency: esc,
        violation_rate_low: rate(low),
        violation_rate_medium: rate(med),
        violation_rate_high: rate(high),
        commitment_detection: detection.clone(),
    }
}

/// Run every (arm, scenario, seed) triple. Order of the output is fixed by
/// the suite file and the seed range, independent of scheduling.
pub fn run_suite(suite: &Suite, seeds: Range<u64>, engine: &Engine) -> Result<SuiteReport, SimError> {
    let seeds: Vec<u64> = seeds.collect();
    let mut jobs = Vec::new();
    for arm in &suite.def.arms {
        for (i, sc) in suite.def.scenarios.iter().enumerate() {
            for &seed in &seeds {
                jobs.push((arm, i, sc, seed));
            }
        }
    }
    let sessions: Vec<SessionRecord> = jobs
        .par_iter()
        .map(|&(arm, i, sc, seed)| {
            let config = arm.apply(&suite.configs[&sc.config]);
            let mut meta = BTreeMap::new();
            meta.insert("arm_id".to_string(), arm.arm_id.clone());
            meta.insert("scenario_id".to_string(), sc.scenario_id.clone());
            meta.insert("tau_gate".to_string(), config.thresholds.tau_gate.to_string());
            let job = RunSpec {
                session_id: format!("{}-{}-{}", arm.arm_id, sc.scenario_id, seed),
                config: config.clone(),
                persona: &suite.personas[&sc.persona],
                policy: sc.policy.clone(),
                settings: arm.settings(),
                seed,
                metadata: meta,
            };
            let mut rng = session_rng(seed, i as u64);
            let run = run_session(engine, job, &mut rng)
                .map_err(|e| SimError::Scenario { scenario: sc.scenario_id.clone(), source: Box::new(e) })?;
            let metrics = compute_metrics(&run.trace, &config)?;
            Ok(SessionRecord { arm_id: arm.arm_id.clone(), scenario_id: sc.scenario_id.clone(), seed, metrics, trace: run.trace })
        })
        .collect::<Result<_, SimError>>()?;

    let mut detection = BTreeMap::new();
    if !suite.corpus.is_empty() {
        for c in suite.configs.values() {
            detection.insert(c.domain_id.clone(), detection_rates(&suite.corpus, &c.lexicons));
        }
    }
    let arms = suite
        .def
        .arms
        .iter()
        .map(|a| {
            let rs: Vec<&SessionRecord> = sessions.iter().filter(|r| r.arm_id == a.arm_id).collect();
            aggregate(&a.arm_id, &rs, &detection)
        })
        .collect();
    Ok(SuiteReport { suite_id: suite.def.suite_id.clone(), seeds, arms, sessions })
}

/// Independent recount of escalation events per session, straight from traces.
pub fn escalations_per_session(records: &[&SessionRecord]) -> f64 {
    let total: usize =
        records.iter().map(|r| r.trace.iter().filter(|e| e.kind == AuditKind::Escalation).count()).sum();
    total as f64 / records.len().max(1) as f64
}

const SUMMARY_COLUMNS: [&str; 24] = [
    "arm_id",
    "sessions",
    "agreement_rate",
    "censored",
    "total_rounds_mean",
    "total_rounds_ci_low",
    "total_rounds_ci_high",
    "screening_rounds_mean",
    "screening_rounds_stdev",
    "tci_convergence_rounds_mean",
    "ig_total_bits_mean",
    "ig_total_bits_ci_low",
    "ig_total_bits_ci_high",
    "stcc_bits_mean",
    "screen_bits_mean",
    "round1_ig_bits_mean",
    "normalized_utility_mean",
    "normalized_utility_ci_low",
    "normalized_utility_ci_high",
    "escalations_per_session",
    "violation_rate_low",
    "violation_rate_medium",
    "violation_rate_high",
    "escalation_by_trigger",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

pub fn summary_rows(report: &SuiteReport) -> (Vec<String>, Vec<Vec<String>>) {
    let header = SUMMARY_COLUMNS.iter().map(|s| s.to_string()).collect();
    let rows = report
        .arms
        .iter()
        .map(|a| {
            let m = |s: &Option<Stats>| fmt_opt(s.map(|s| s.mean));
            let lo = |s: &Option<Stats>| fmt_opt(s.map(|s| s.ci_low));
            let hi = |s: &Option<Stats>| fmt_opt(s.map(|s| s.ci_high));
            let by_trigger: Vec<String> = a.escalation_frequency.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
            vec![
                a.arm_id.clone(),
                a.sessions.to_string(),
                format!("{:.4}", a.agreement_rate),
                a.censored.to_string(),
                m(&a.total_rounds),
                lo(&a.total_rounds),
                hi(&a.total_rounds),
                m(&a.screening_rounds),
                fmt_opt(a.screening_rounds.map(|s| s.stdev)),
                m(&a.tci_convergence_rounds),
                m(&a.ig_total_bits),
                lo(&a.ig_total_bits),
                hi(&a.ig_total_bits),
                m(&a.stcc_bits),
                m(&a.screen_bits),
                m(&a.round1_ig_bits),
                m(&a.normalized_utility),
                lo(&a.normalized_utility),
                hi(&a.normalized_utility),
                format!("{:.4}", a.escalation_frequency.values().sum::<f64>()),
                format!("{:.4}", a.violation_rate_low),
                format!("{:.4}", a.violation_rate_medium),
                format!("{:.4}", a.violation_rate_high),
                by_trigger.join(";"),
            ]
        })
        .collect();
    (header, rows)
}

pub fn to_csv(header: &[String], rows: &[Vec<String>]) -> Result<String, SimError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| SimError::Io(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| SimError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| SimError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| SimError::Io(e.to_string()))
}

/// Writes `summary.csv`, `summary.json`, `sessions.csv` and one audit log
/// per session under `traces/`.
pub fn write_report(report: &SuiteReport, out: &Path) -> Result<(), SimError> {
    let io = |e: std::io::Error| SimError::Io(format!("{}: {e}", out.display()));
    std::fs::create_dir_all(out.join("traces")).map_err(io)?;
    let (header, rows) = summary_rows(report);
    std::fs::write(out.join("summary.csv"), to_csv(&header, &rows)?).map_err(io)?;
    let json = serde_json::to_string_pretty(report).map_err(|e| SimError::Io(e.to_string()))?;
    std::fs::write(out.join("summary.json"), json + "\n").map_err(io)?;

    let sheader: Vec<String> = [
        "arm_id", "scenario_id", "seed", "outcome", "total_rounds", "tci_convergence_rounds", "screening_rounds",
        "ig_total_bits", "stcc_bits", "screen_bits", "normalized_utility", "escalations", "violations_high",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let srows: Vec<Vec<String>> = report
        .sessions
        .iter()
        .map(|r| {
            let m = &r.metrics;
            vec![
                r.arm_id.clone(),
                r.scenario_id.clone(),
                r.seed.to_string(),
                m.outcome.as_str().to_string(),
                m.total_rounds.to_string(),
                m.tci_convergence_rounds.map(|x| x.to_string()).unwrap_or_else(|| "censored".into()),
                m.screening_rounds.to_string(),
                format!("{:.4}", m.ig_total_bits),
                format!("{:.4}", m.stcc_bits),
                format!("{:.4}", m.screen_bits),
                fmt_opt(m.normalized_utility),
                m.escalations.values().sum::<u32>().to_string(),
                m.violations.high.to_string(),
            ]
        })
        .collect();
    std::fs::write(out.join("sessions.csv"), to_csv(&sheader, &srows)?).map_err(io)?;

    for r in &report.sessions {
        let mut buf = String::new();
        for e in &r.trace {
            buf.push_str(&to_jsonl_line(e));
            buf.push('\n');
        }
        let name = format!("{}-{}-{}.jsonl", r.arm_id, r.scenario_id, r.seed);
        std::fs::write(out.join("traces").join(name), buf).map_err(io)?;
    }
    Ok(())
}

/// Load a `summary.json` written by [`write_report`].
pub fn read_report(dir: &Path) -> Result<SuiteReport, SimError> {
    let p = dir.join("summary.json");
    let text = std::fs::read_to_string(&p).map_err(|e| SimError::Io(format!("{}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| SimError::Suite(e.to_string()))
}
