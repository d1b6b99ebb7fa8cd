//! Replay-based evaluation of privacy enhancements.
//!
//! Every login of a dataset is replayed in time order. Before a login is
//! recorded, its legitimate score and the scores of simulated attacker attempts
//! against the same user are computed from the current store. A sweep repeats
//! the replay for each truncation width or k, with the attack attempts fixed
//! up front so every step faces the same attackers.
//!
//! Per step and attacker model:
//!
//! * `tpr`: share of attacker attempts challenged by the threshold calibrated
//!   on the baseline step (frozen for all later steps).
//! * `rsr_basic`: mean attacker score over mean legitimate score.
//! * `tpr_relative`, `rsr_relative`: `(x - baseline) / baseline`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{worker_rng, AttackError, AttackSampler, AttackerKind, IpSource, RawAttempt};
use crate::codec::{CodecChain, CodecError, FeatureKind, HashPolicy};
use crate::model::{score_values, FeatureSchema, FeatureVector, LoginEvent, ModelError, RiskConfig};
use crate::store::{HistoryStore, KAnonymityPolicy, PaddingLedger, StoreConfig, StoreError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no attacker scores to calibrate on")]
    EmptyScores,
    #[error("target TPR {0} must lie in (0, 1)")]
    TargetTpr(f64),
    #[error("sweep steps must include the baseline step {0}")]
    MissingBaseline(u32),
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("baseline step is degenerate for attacker model {0}")]
    DegenerateBaseline(AttackerKind),
    #[error("dataset is not in time order at row {0}")]
    Unordered(usize),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub target_tpr: f64,
    pub attacker_models: Vec<AttackerKind>,
    pub attempts_per_victim: usize,
    pub truncation_bits: Vec<u32>,
    pub k_values: Vec<u32>,
    pub rsr_limit_delta: f64,
    pub seed: u64,
    pub risk: RiskConfig,
    /// Hash every feature value after truncation.
    pub hash: Option<HashPolicy>,
    pub coarse_user_agent: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            target_tpr: 0.995,
            attacker_models: AttackerKind::ALL.to_vec(),
            attempts_per_victim: 100,
            truncation_bits: (0..=24).collect(),
            k_values: (1..=6).collect(),
            rsr_limit_delta: 0.01,
            seed: 0,
            risk: RiskConfig::default(),
            hash: None,
            coarse_user_agent: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.target_tpr > 0.0 && self.target_tpr < 1.0) {
            return Err(EvalError::TargetTpr(self.target_tpr));
        }
        if self.truncation_bits.is_empty() || self.k_values.is_empty() {
            return Err(EvalError::Config("step lists must not be empty".into()));
        }
        if self.truncation_bits.iter().any(|b| *b > 32) || self.k_values.contains(&0) {
            return Err(EvalError::Config("truncation bits must be <= 32 and k >= 1".into()));
        }
        if self.rsr_limit_delta.is_nan() || self.rsr_limit_delta < 0.0 {
            return Err(EvalError::Config("rsr_limit_delta must be non-negative".into()));
        }
        self.risk.validate()?;
        Ok(())
    }

    fn codec(&self, truncation_bits: u32) -> CodecChain {
        CodecChain {
            truncation_bits,
            coarse_user_agent: self.coarse_user_agent,
            hash: self.hash.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhancementKind {
    Truncation,
    KAnonymity,
}

impl EnhancementKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Truncation => "truncation",
            Self::KAnonymity => "k_anonymity",
        }
    }

    pub fn baseline_step(self) -> u32 {
        match self {
            Self::Truncation => 0,
            Self::KAnonymity => 1,
        }
    }
}

impl fmt::Display for EnhancementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnhancementKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "truncation" => Ok(Self::Truncation),
            "k_anonymity" => Ok(Self::KAnonymity),
            other => Err(format!("unknown enhancement `{other}`")),
        }
    }
}

/// Settings of one replay: the codec for all feature values and the store policy.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplaySetup {
    pub codec: CodecChain,
    pub store: StoreConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegitScore {
    pub event: usize,
    pub score: f64,
    /// The user had no history yet.
    pub cold_start: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub legit: Vec<LegitScore>,
    pub attacker: BTreeMap<AttackerKind, Vec<f64>>,
    pub ledger: PaddingLedger,
}

impl ReplayOutcome {
    /// Legitimate scores that enter the RSR: every login after a user's first.
    pub fn warm_legit_scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.legit.iter().filter(|l| !l.cold_start).map(|l| l.score)
    }
}

#[derive(Debug, Clone, Copy)]
struct PlannedAttempt {
    event: u32,
    model: u8,
    attempt: RawAttempt,
}

/// A dataset together with the attack attempts sampled against it.
///
/// Attempts are drawn once for every login whose user already logged in
/// before (attacking an empty history tells nothing), `attempts_per_victim`
/// per enabled model. The generator for login `i` is stream `i` of the seed,
/// so the plan does not depend on evaluation order.
pub struct Replayer<'a> {
    schema: &'a FeatureSchema,
    events: &'a [LoginEvent],
    sampler: &'a AttackSampler,
    models: Vec<AttackerKind>,
    plan: Vec<PlannedAttempt>,
}

impl<'a> Replayer<'a> {
    pub fn new(
        schema: &'a FeatureSchema,
        events: &'a [LoginEvent],
        sampler: &'a AttackSampler,
        config: &EvalConfig,
    ) -> Result<Self, EvalError> {
        if let Some(i) = events.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
            return Err(EvalError::Unordered(i + 2));
        }
        for e in events {
            e.features.check_arity(schema)?;
        }
        let mut models = config.attacker_models.clone();
        models.dedup();
        let mut seen_users = std::collections::HashSet::new();
        let mut plan = Vec::new();
        for (i, e) in events.iter().enumerate() {
            if seen_users.insert(e.user.as_str()) {
                continue;
            }
            let mut rng = worker_rng(config.seed, i as u64);
            for (m, kind) in models.iter().enumerate() {
                for _ in 0..config.attempts_per_victim {
                    plan.push(PlannedAttempt {
                        event: i as u32,
                        model: m as u8,
                        attempt: sampler.sample(*kind, &e.user, &mut rng)?,
                    });
                }
            }
        }
        Ok(Self {
            schema,
            events,
            sampler,
            models,
            plan,
        })
    }

    pub fn models(&self) -> &[AttackerKind] {
        &self.models
    }

    pub fn planned_attempts(&self) -> usize {
        self.plan.len()
    }

    /// Raw feature vectors of the planned attempts at login `event`.
    pub fn attempts_at(&self, event: usize) -> Vec<(AttackerKind, FeatureVector)> {
        self.plan
            .iter()
            .filter(|p| p.event as usize == event)
            .map(|p| (self.models[p.model as usize], self.sampler.to_feature_vector(p.attempt)))
            .collect()
    }

    fn kinds(&self) -> Vec<FeatureKind> {
        self.schema.ids().iter().map(|id| FeatureKind::of(id)).collect()
    }

    pub fn replay(&self, setup: &ReplaySetup, risk: &RiskConfig) -> Result<ReplayOutcome, EvalError> {
        let kinds = self.kinds();
        let codec = &setup.codec;
        let encoded: Vec<FeatureVector> = self
            .events
            .iter()
            .map(|e| {
                let values = e
                    .features
                    .values()
                    .iter()
                    .zip(&kinds)
                    .map(|(v, k)| codec.encode(*k, v))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(FeatureVector::new(values)?)
            })
            .collect::<Result<_, EvalError>>()?;
        let pool_tokens = self
            .sampler
            .pool()
            .iter()
            .map(|ip| codec.encode(FeatureKind::Ip, &ip.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        let ip_tokens = self
            .sampler
            .dataset_ips()
            .iter()
            .map(|ip| codec.encode(FeatureKind::Ip, ip))
            .collect::<Result<Vec<_>, _>>()?;
        let ua_tokens = self
            .sampler
            .user_agents()
            .iter()
            .map(|ua| codec.encode(FeatureKind::UserAgent, ua))
            .collect::<Result<Vec<_>, _>>()?;
        let (ip_at, ua_at) = (self.sampler.ip_index(), self.sampler.ua_index());

        let mut store = HistoryStore::new(self.schema.clone(), setup.store.clone())?;
        let mut legit = Vec::with_capacity(self.events.len());
        let mut attacker: Vec<Vec<f64>> = vec![Vec::new(); self.models.len()];
        let mut next = 0;
        let mut values: Vec<&str> = vec![""; self.schema.len()];
        for (i, (event, fv)) in self.events.iter().zip(&encoded).enumerate() {
            let cold_start = !store.has_history(&event.user);
            let own: Vec<&str> = fv.values().iter().map(String::as_str).collect();
            legit.push(LegitScore {
                event: i,
                score: score_values(&store, risk, &event.user, &own).value,
                cold_start,
            });
            while next < self.plan.len() && self.plan[next].event as usize == i {
                let p = self.plan[next];
                values[ip_at] = match p.attempt.ip {
                    IpSource::Pool(j) => &pool_tokens[j as usize],
                    IpSource::Dataset(j) => &ip_tokens[j as usize],
                };
                values[ua_at] = &ua_tokens[p.attempt.user_agent as usize];
                attacker[p.model as usize].push(score_values(&store, risk, &event.user, &values).value);
                next += 1;
            }
            store.record_login(&event.user, fv, event.timestamp)?;
        }
        Ok(ReplayOutcome {
            legit,
            attacker: self.models.iter().copied().zip(attacker).collect(),
            ledger: store.ledger(),
        })
    }
}

/// Largest threshold that still challenges at least `target_tpr` of the scores.
///
/// With ascending scores `s`, this is `s[i]` for the largest index with
/// `n - i >= target_tpr * n`. Ties at the threshold are challenged, so the
/// achieved rate can exceed the target when the threshold value is repeated.
pub fn calibrate_threshold(attacker_scores: &[f64], target_tpr: f64) -> Result<f64, EvalError> {
    if attacker_scores.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    if !(target_tpr > 0.0 && target_tpr < 1.0) {
        return Err(EvalError::TargetTpr(target_tpr));
    }
    let mut sorted = attacker_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let need = target_tpr * n as f64 - 1e-9;
    let mut i = ((1.0 - target_tpr) * n as f64).floor() as usize;
    i = i.min(n - 1);
    while i + 1 < n && (n - i - 1) as f64 >= need {
        i += 1;
    }
    while i > 0 && ((n - i) as f64) < need {
        i -= 1;
    }
    Ok(sorted[i])
}

/// Share of scores challenged (`score >= threshold`).
pub fn true_positive_rate(attacker_scores: &[f64], threshold: f64) -> f64 {
    if attacker_scores.is_empty() {
        return f64::NAN;
    }
    let blocked = attacker_scores.iter().filter(|s| **s >= threshold).count();
    blocked as f64 / attacker_scores.len() as f64
}

/// Mean attacker score over mean legitimate score.
pub fn risk_score_relation(attacker_scores: &[f64], legit_scores: &[f64]) -> f64 {
    mean(attacker_scores) / mean(legit_scores)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `(value - baseline) / baseline`.
pub fn relative_change(value: f64, baseline: f64) -> f64 {
    (value - baseline) / baseline
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub model: AttackerKind,
    pub step: u32,
    pub threshold: f64,
    pub tpr: f64,
    pub rsr_basic: f64,
    pub tpr_relative: f64,
    pub rsr_relative: f64,
    pub additional_entries: u64,
    pub baseline_entries: u64,
    /// False when the step had no warm legitimate logins, no attacker
    /// attempts, or a non-positive legitimate mean.
    pub valid: bool,
}

impl StepRecord {
    pub fn ledger(&self) -> PaddingLedger {
        PaddingLedger {
            additional_entries: self.additional_entries,
            baseline_entries: self.baseline_entries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMeta {
    pub enhancement: EnhancementKind,
    pub seed: u64,
    pub target_tpr: f64,
    pub attempts_per_victim: usize,
    pub rsr_limit_delta: f64,
    pub models: Vec<AttackerKind>,
    pub steps: Vec<u32>,
    pub hashed: bool,
    pub coarse_user_agent: bool,
    pub risk: RiskConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub meta: SweepMeta,
    /// Grouped by model (in `meta.models` order), then by step.
    pub records: Vec<StepRecord>,
}

impl SweepResult {
    pub fn series(&self, model: AttackerKind) -> Vec<&StepRecord> {
        self.records.iter().filter(|r| r.model == model).collect()
    }

    pub fn has_invalid_steps(&self) -> bool {
        self.records.iter().any(|r| !r.valid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Enhancement {
    Truncation(Vec<u32>),
    KAnonymity(Vec<u32>),
}

impl Enhancement {
    pub fn kind(&self) -> EnhancementKind {
        match self {
            Self::Truncation(_) => EnhancementKind::Truncation,
            Self::KAnonymity(_) => EnhancementKind::KAnonymity,
        }
    }

    pub fn steps(&self) -> &[u32] {
        match self {
            Self::Truncation(s) | Self::KAnonymity(s) => s,
        }
    }

    pub fn setup(&self, step: u32, config: &EvalConfig) -> Result<ReplaySetup, EvalError> {
        Ok(match self {
            Self::Truncation(_) => ReplaySetup {
                codec: config.codec(step),
                store: StoreConfig { seed: config.seed, ..StoreConfig::default() },
            },
            Self::KAnonymity(_) => ReplaySetup {
                codec: config.codec(0),
                store: StoreConfig {
                    k_anonymity: Some(KAnonymityPolicy::ip(step)?),
                    seed: config.seed,
                    ..StoreConfig::default()
                },
            },
        })
    }
}

struct StepScores {
    step: u32,
    outcome: ReplayOutcome,
}

fn replay_steps(
    replayer: &Replayer<'_>,
    enhancement: &Enhancement,
    config: &EvalConfig,
) -> Result<Vec<StepScores>, EvalError> {
    let run = |step: &u32| -> Result<StepScores, EvalError> {
        let setup = enhancement.setup(*step, config)?;
        Ok(StepScores {
            step: *step,
            outcome: replayer.replay(&setup, &config.risk)?,
        })
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        enhancement.steps().par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        enhancement.steps().iter().map(run).collect()
    }
}

/// Runs every step of `enhancement`, calibrating one threshold per attacker
/// model on the baseline step and applying it unchanged to all steps.
pub fn run_sweep(
    replayer: &Replayer<'_>,
    config: &EvalConfig,
    enhancement: &Enhancement,
) -> Result<SweepResult, EvalError> {
    config.validate()?;
    let kind = enhancement.kind();
    let baseline_step = kind.baseline_step();
    let mut steps = enhancement.steps().to_vec();
    if !steps.contains(&baseline_step) {
        return Err(EvalError::MissingBaseline(baseline_step));
    }
    steps.sort_unstable();
    steps.dedup();
    let enhancement = match enhancement {
        Enhancement::Truncation(_) => Enhancement::Truncation(steps.clone()),
        Enhancement::KAnonymity(_) => Enhancement::KAnonymity(steps.clone()),
    };
    let scored = replay_steps(replayer, &enhancement, config)?;

    struct Raw {
        threshold: f64,
        tpr: f64,
        rsr: f64,
        valid: bool,
    }
    let baseline = scored
        .iter()
        .find(|s| s.step == baseline_step)
        .expect("baseline step present");
    let baseline_legit: Vec<f64> = baseline.outcome.warm_legit_scores().collect();

    let mut records = Vec::new();
    for model in replayer.models() {
        let base_attack = &baseline.outcome.attacker[model];
        let threshold = calibrate_threshold(base_attack, config.target_tpr)
            .map_err(|_| EvalError::DegenerateBaseline(*model))?;
        let raw: Vec<Raw> = scored
            .iter()
            .map(|s| {
                let attack = &s.outcome.attacker[model];
                let legit: Vec<f64> = s.outcome.warm_legit_scores().collect();
                let legit_mean = mean(&legit);
                let valid = !attack.is_empty() && legit_mean.is_finite() && legit_mean > 0.0;
                Raw {
                    threshold,
                    tpr: true_positive_rate(attack, threshold),
                    rsr: if valid { risk_score_relation(attack, &legit) } else { f64::NAN },
                    valid,
                }
            })
            .collect();
        let base = &raw[scored.iter().position(|s| s.step == baseline_step).unwrap()];
        if !base.valid || baseline_legit.is_empty() {
            return Err(EvalError::DegenerateBaseline(*model));
        }
        for (s, r) in scored.iter().zip(&raw) {
            records.push(StepRecord {
                model: *model,
                step: s.step,
                threshold: r.threshold,
                tpr: r.tpr,
                rsr_basic: r.rsr,
                tpr_relative: relative_change(r.tpr, base.tpr),
                rsr_relative: relative_change(r.rsr, base.rsr),
                additional_entries: s.outcome.ledger.additional_entries,
                baseline_entries: s.outcome.ledger.baseline_entries,
                valid: r.valid,
            });
        }
    }

    Ok(SweepResult {
        meta: SweepMeta {
            enhancement: kind,
            seed: config.seed,
            target_tpr: config.target_tpr,
            attempts_per_victim: config.attempts_per_victim,
            rsr_limit_delta: config.rsr_limit_delta,
            models: replayer.models().to_vec(),
            steps,
            hashed: config.hash.is_some(),
            coarse_user_agent: config.coarse_user_agent,
            risk: config.risk,
        },
        records,
    })
}

/// A step limit; `at_least` marks that no violation occurred up to the last step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limit {
    pub step: u32,
    pub at_least: bool,
}

impl fmt::Display for Limit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.at_least {
            write!(f, ">={}", self.step)
        } else {
            write!(f, "{}", self.step)
        }
    }
}

impl Limit {
    /// The smaller limit; an exact limit wins over an "at least" one at the same step.
    pub fn min(self, other: Limit) -> Limit {
        match self.step.cmp(&other.step) {
            std::cmp::Ordering::Less => self,
            std::cmp::Ordering::Greater => other,
            std::cmp::Ordering::Equal => Limit {
                step: self.step,
                at_least: self.at_least && other.at_least,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub tpr: Limit,
    pub rsr: Limit,
    pub combined: Limit,
}

/// Last step before the first step violating `violates`; the last step flagged
/// "at least" when none does.
fn limit_of(steps: &[u32], violates: impl Fn(usize) -> bool) -> Limit {
    match (0..steps.len()).find(|&i| violates(i)) {
        Some(0) => Limit { step: steps[0], at_least: false },
        Some(i) => Limit { step: steps[i - 1], at_least: false },
        None => Limit {
            step: *steps.last().expect("non-empty steps"),
            at_least: true,
        },
    }
}

/// Limits of one ordered series: TPR limit at the first decrease below the
/// baseline, RSR limit at the first decrease by more than `rsr_limit_delta`.
/// Invalid steps count as violations.
pub fn extract_limits(
    steps: &[u32],
    tpr_relative: &[f64],
    rsr_relative: &[f64],
    valid: &[bool],
    rsr_limit_delta: f64,
) -> Limits {
    assert!(!steps.is_empty(), "limit extraction needs at least one step");
    let tpr = limit_of(steps, |i| !valid[i] || tpr_relative[i] < 0.0);
    let rsr = limit_of(steps, |i| !valid[i] || rsr_relative[i] < -rsr_limit_delta);
    Limits {
        tpr,
        rsr,
        combined: tpr.min(rsr),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepLimits {
    pub per_model: Vec<(AttackerKind, Limits)>,
    /// Minimum over all models.
    pub overall: Limit,
}

pub fn extract_sweep_limits(sweep: &SweepResult, rsr_limit_delta: f64) -> SweepLimits {
    let per_model: Vec<(AttackerKind, Limits)> = sweep
        .meta
        .models
        .iter()
        .map(|m| {
            let mut series = sweep.series(*m);
            series.sort_by_key(|r| r.step);
            let steps: Vec<u32> = series.iter().map(|r| r.step).collect();
            let tpr: Vec<f64> = series.iter().map(|r| r.tpr_relative).collect();
            let rsr: Vec<f64> = series.iter().map(|r| r.rsr_relative).collect();
            let valid: Vec<bool> = series.iter().map(|r| r.valid).collect();
            (*m, extract_limits(&steps, &tpr, &rsr, &valid, rsr_limit_delta))
        })
        .collect();
    let overall = per_model
        .iter()
        .map(|(_, l)| l.combined)
        .reduce(Limit::min)
        .unwrap_or(Limit { step: 0, at_least: true });
    SweepLimits { per_model, overall }
}
