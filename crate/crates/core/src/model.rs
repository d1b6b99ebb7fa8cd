//! Login risk scoring over categorical feature histories.
//!
//! The score of a login attempt for user `u` with feature values
//! `(v_1, ..., v_d)` is
//!
//! ```text
//! S = prod_k p(v_k) / p(v_k | u, legit)  *  p(u | attack) / p(u | legit)
//! ```
//!
//! where `p(v_k)` is the frequency of the value in the global login history and
//! `p(v_k | u, legit)` its frequency in the user's own history. Global
//! frequencies are smoothed so unseen values keep a small share. A value missing
//! from the user's history gets `unseen_floor`, so anything the user never sent
//! weighs heavily. Probabilities are estimated from a [`FrequencySource`], which is implemented by the aggregated
//! [`HistoryStore`](crate::store::HistoryStore) and by anything else able to count
//! feature values (for instance a replayed event log).

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown feature id `{0}`")]
    UnknownFeature(String),
    #[error("user `{0}` has no login history")]
    NewUser(String),
    #[error("feature vector has {got} values, schema expects {expected}")]
    Arity { expected: usize, got: usize },
    #[error("feature value at position {0} is empty")]
    EmptyValue(usize),
    #[error("invalid risk configuration: {0}")]
    Config(String),
}

/// Ordered feature ids of a dataset, e.g. `["ip", "user_agent"]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSchema {
    ids: Vec<String>,
}

impl FeatureSchema {
    pub const IP: &'static str = "ip";
    pub const USER_AGENT: &'static str = "user_agent";

    pub fn new<I, S>(ids: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        if ids.is_empty() {
            return Err(ModelError::Config("schema needs at least one feature".into()));
        }
        for (i, id) in ids.iter().enumerate() {
            if id.is_empty() {
                return Err(ModelError::EmptyValue(i));
            }
            if ids[..i].contains(id) {
                return Err(ModelError::Config(format!("duplicate feature id `{id}`")));
            }
        }
        Ok(Self { ids })
    }

    /// The IP address + user agent schema used throughout the evaluation.
    pub fn ip_user_agent() -> Self {
        Self {
            ids: vec![Self::IP.to_string(), Self::USER_AGENT.to_string()],
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, feature_id: &str) -> Result<usize, ModelError> {
        self.ids
            .iter()
            .position(|id| id == feature_id)
            .ok_or_else(|| ModelError::UnknownFeature(feature_id.to_string()))
    }
}

/// Feature values of one login attempt, positionally aligned with a [`FeatureSchema`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureVector(Vec<String>);

impl FeatureVector {
    pub fn new<I, S>(values: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let values: Vec<String> = values.into_iter().map(Into::into).collect();
        if let Some(i) = values.iter().position(String::is_empty) {
            return Err(ModelError::EmptyValue(i));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[String] {
        &self.0
    }

    pub fn get(&self, index: usize) -> Option<&str> {
        self.0.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check_arity(&self, schema: &FeatureSchema) -> Result<(), ModelError> {
        if self.0.len() != schema.len() {
            return Err(ModelError::Arity {
                expected: schema.len(),
                got: self.0.len(),
            });
        }
        Ok(())
    }

    pub fn into_values(self) -> Vec<String> {
        self.0
    }
}

/// One authentication attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoginEvent {
    pub user: String,
    pub timestamp: DateTime<Utc>,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Smoothing {
    None,
    /// Add-α over the observed vocabulary plus one pseudo-value for "unseen".
    AddAlpha(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    pub attack_prior: f64,
    pub legit_prior: f64,
    pub smoothing: Smoothing,
    /// Probability of a value absent from the user's history, and lower bound
    /// for every estimate.
    pub unseen_floor: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            attack_prior: 1.0,
            legit_prior: 1.0,
            smoothing: Smoothing::AddAlpha(1.0),
            unseen_floor: 1e-9,
        }
    }
}

impl RiskConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let prior_ok = |p: f64| p > 0.0 && p <= 1.0;
        if !prior_ok(self.attack_prior) || !prior_ok(self.legit_prior) {
            return Err(ModelError::Config("priors must lie in (0, 1]".into()));
        }
        if let Smoothing::AddAlpha(alpha) = self.smoothing {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(ModelError::Config("smoothing alpha must be positive".into()));
            }
        }
        if !(self.unseen_floor > 0.0 && self.unseen_floor <= 1.0) {
            return Err(ModelError::Config("unseen_floor must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn prior_ratio(&self) -> f64 {
        self.attack_prior / self.legit_prior
    }

    /// Turns raw counts into a probability in (0, 1].
    pub fn estimate(&self, counts: Counts) -> f64 {
        if counts.total == 0 {
            return self.unseen_floor;
        }
        let p = match self.smoothing {
            Smoothing::None => counts.count as f64 / counts.total as f64,
            Smoothing::AddAlpha(alpha) => {
                (counts.count as f64 + alpha)
                    / (counts.total as f64 + alpha * (counts.vocabulary as f64 + 1.0))
            }
        };
        p.max(self.unseen_floor)
    }

    /// Like [`estimate`](Self::estimate), but a value the user never sent gets
    /// exactly `unseen_floor`.
    pub fn estimate_user(&self, counts: Counts) -> f64 {
        if counts.count == 0 {
            self.unseen_floor
        } else {
            self.estimate(counts)
        }
    }
}

/// Occurrences of one value within one history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub count: u64,
    /// Number of entries in the history for this feature.
    pub total: u64,
    /// Number of distinct values observed in the history for this feature.
    pub vocabulary: usize,
}

/// Anything that can report feature value frequencies for scoring.
pub trait FrequencySource {
    fn schema(&self) -> &FeatureSchema;

    fn global_counts(&self, feature: usize, value: &str) -> Counts;

    /// `None` when the user has never been recorded.
    fn user_counts(&self, user: &str, feature: usize, value: &str) -> Option<Counts>;
}

pub fn global_probability<S: FrequencySource + ?Sized>(
    source: &S,
    config: &RiskConfig,
    feature_id: &str,
    value: &str,
) -> Result<f64, ModelError> {
    let feature = source.schema().index_of(feature_id)?;
    Ok(config.estimate(source.global_counts(feature, value)))
}

/// Probability of `value` within `user`'s own history.
///
/// Fails with [`ModelError::NewUser`] for users that were never recorded; the
/// caller decides the policy (scoring treats them as having an empty history).
pub fn user_probability<S: FrequencySource + ?Sized>(
    source: &S,
    config: &RiskConfig,
    user: &str,
    feature_id: &str,
    value: &str,
) -> Result<f64, ModelError> {
    let feature = source.schema().index_of(feature_id)?;
    source
        .user_counts(user, feature, value)
        .map(|c| config.estimate_user(c))
        .ok_or_else(|| ModelError::NewUser(user.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskScore {
    pub value: f64,
    /// `p(v_k) / p(v_k | u, legit)` per feature, in schema order.
    pub per_feature_ratios: Vec<f64>,
}

pub fn risk_score<S: FrequencySource + ?Sized>(
    source: &S,
    config: &RiskConfig,
    user: &str,
    fv: &FeatureVector,
) -> Result<RiskScore, ModelError> {
    fv.check_arity(source.schema())?;
    let values: Vec<&str> = fv.values().iter().map(String::as_str).collect();
    Ok(score_values(source, config, user, &values))
}

/// Scores already-encoded tokens without allocating a [`FeatureVector`].
/// `values` must match the schema arity.
pub fn score_values<S: FrequencySource + ?Sized>(
    source: &S,
    config: &RiskConfig,
    user: &str,
    values: &[&str],
) -> RiskScore {
    debug_assert_eq!(values.len(), source.schema().len());
    let per_feature_ratios: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(k, value)| {
            let global = config.estimate(source.global_counts(k, value));
            let user = source
                .user_counts(user, k, value)
                .map_or(config.unseen_floor, |c| config.estimate_user(c));
            global / user
        })
        .collect();
    let value = per_feature_ratios.iter().product::<f64>() * config.prior_ratio();
    RiskScore {
        value,
        per_feature_ratios,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Grant,
    Challenge,
}

/// Grants strictly below the threshold; ties are challenged.
pub fn classify(score: &RiskScore, threshold: f64) -> Decision {
    classify_value(score.value, threshold)
}

pub fn classify_value(score: f64, threshold: f64) -> Decision {
    if score < threshold {
        Decision::Grant
    } else {
        Decision::Challenge
    }
}
