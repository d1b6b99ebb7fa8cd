//! Aggregated login history with write-time privacy policies.
//!
//! The store keeps only value histograms (global and per user), so login order
//! is not retained unless an event log is explicitly requested. Two policies can
//! be applied while recording:
//!
//! * **retention**: per-user windows bounded by entry count and age; evicted
//!   entries are subtracted from every histogram.
//! * **k-anonymity**: after each login, values of the target features held by
//!   fewer than `k` distinct users are padded with entries of synthetic users.
//!   Synthetic users never appear in scoring lookups, so padding only shifts the
//!   global probabilities.

use std::collections::{BTreeMap, HashMap, VecDeque};

use chrono::{DateTime, TimeDelta, Utc};
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Counts, FeatureSchema, FeatureVector, FrequencySource, LoginEvent, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("retention policy must bound entries or age")]
    EmptyRetention,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KAnonymityPolicy {
    pub k: u32,
    pub features: Vec<String>,
}

impl KAnonymityPolicy {
    /// Policy on the IP feature.
    pub fn ip(k: u32) -> Result<Self, StoreError> {
        Self::new(k, [FeatureSchema::IP])
    }

    pub fn new<I, S>(k: u32, features: I) -> Result<Self, StoreError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if k == 0 {
            return Err(StoreError::InvalidK);
        }
        Ok(Self {
            k,
            features: features.into_iter().map(Into::into).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionPolicy {
    pub max_entries_per_user: Option<usize>,
    pub max_age: Option<TimeDelta>,
}

impl RetentionPolicy {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.max_entries_per_user.is_none() && self.max_age.is_none() {
            return Err(StoreError::EmptyRetention);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StoreConfig {
    /// Keep the chronological event log next to the histograms.
    pub keep_event_log: bool,
    pub retention: Option<RetentionPolicy>,
    pub k_anonymity: Option<KAnonymityPolicy>,
    /// Seed for the synthetic-user draws of k-anonymity padding.
    pub seed: u64,
}

/// Padding overhead: synthetic entries added against real entries ingested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PaddingLedger {
    pub additional_entries: u64,
    pub baseline_entries: u64,
}

impl PaddingLedger {
    pub fn increase_ratio(&self) -> f64 {
        if self.baseline_entries == 0 {
            0.0
        } else {
            self.additional_entries as f64 / self.baseline_entries as f64
        }
    }
}

#[derive(Debug, Clone, Default)]
struct CountTable {
    counts: IndexMap<String, u64>,
    total: u64,
}

impl CountTable {
    /// Returns true when `value` was absent before.
    fn add(&mut self, value: &str) -> bool {
        self.total += 1;
        match self.counts.get_mut(value) {
            Some(c) => {
                *c += 1;
                false
            }
            None => {
                self.counts.insert(value.to_string(), 1);
                true
            }
        }
    }

    /// Returns true when the last occurrence of `value` was removed.
    fn remove(&mut self, value: &str) -> bool {
        let Some(c) = self.counts.get_mut(value) else {
            return false;
        };
        self.total -= 1;
        *c -= 1;
        if *c == 0 {
            self.counts.swap_remove(value);
            true
        } else {
            false
        }
    }

    fn counts(&self, value: &str) -> Counts {
        Counts {
            count: self.counts.get(value).copied().unwrap_or(0),
            total: self.total,
            vocabulary: self.counts.len(),
        }
    }

    fn contains(&self, value: &str) -> bool {
        self.counts.contains_key(value)
    }

    fn to_btree(&self) -> BTreeMap<String, u64> {
        self.counts.iter().map(|(k, v)| (k.clone(), *v)).collect()
    }
}

#[derive(Debug, Clone)]
struct History {
    features: Vec<CountTable>,
    total: u64,
    window: VecDeque<(DateTime<Utc>, Vec<String>)>,
}

impl History {
    fn new(d: usize) -> Self {
        Self {
            features: vec![CountTable::default(); d],
            total: 0,
            window: VecDeque::new(),
        }
    }

    fn holds(&self, feature: usize, value: &str) -> bool {
        self.features[feature].contains(value)
    }
}

#[derive(Debug, Clone)]
pub struct HistoryStore {
    schema: FeatureSchema,
    config: StoreConfig,
    /// Feature indices targeted by the k-anonymity policy.
    k_targets: Vec<usize>,
    global: Vec<CountTable>,
    /// Number of distinct users (real and synthetic) holding each value.
    holders: Vec<HashMap<String, u32>>,
    users: HashMap<String, History>,
    synthetic: Vec<History>,
    synthetic_entries: u64,
    total_logins: u64,
    ledger: PaddingLedger,
    event_log: Option<Vec<LoginEvent>>,
    rng: ChaCha8Rng,
}

impl HistoryStore {
    pub fn new(schema: FeatureSchema, config: StoreConfig) -> Result<Self, StoreError> {
        if let Some(r) = &config.retention {
            r.validate()?;
        }
        let k_targets = match &config.k_anonymity {
            Some(policy) => {
                if policy.k == 0 {
                    return Err(StoreError::InvalidK);
                }
                policy
                    .features
                    .iter()
                    .map(|f| schema.index_of(f))
                    .collect::<Result<Vec<_>, _>>()?
            }
            None => Vec::new(),
        };
        let d = schema.len();
        Ok(Self {
            k_targets,
            global: vec![CountTable::default(); d],
            holders: vec![HashMap::new(); d],
            users: HashMap::new(),
            synthetic: Vec::new(),
            synthetic_entries: 0,
            total_logins: 0,
            ledger: PaddingLedger::default(),
            event_log: config.keep_event_log.then(Vec::new),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            schema,
            config,
        })
    }

    /// Plain aggregated store without policies.
    pub fn aggregated(schema: FeatureSchema) -> Self {
        Self::new(schema, StoreConfig::default()).expect("default config is valid")
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn total_logins(&self) -> u64 {
        self.total_logins
    }

    pub fn real_user_count(&self) -> usize {
        self.users.len()
    }

    pub fn synthetic_user_count(&self) -> usize {
        self.synthetic.len()
    }

    pub fn user_login_total(&self, user: &str) -> Option<u64> {
        self.users.get(user).map(|h| h.total)
    }

    pub fn has_history(&self, user: &str) -> bool {
        self.users.get(user).is_some_and(|h| h.total > 0)
    }

    pub fn ledger(&self) -> PaddingLedger {
        self.ledger
    }

    pub fn event_log(&self) -> Option<&[LoginEvent]> {
        self.event_log.as_deref()
    }

    /// Sum of the global histogram of one feature (real plus padded entries).
    pub fn global_total(&self, feature: usize) -> u64 {
        self.global[feature].total
    }

    /// Mean entries per user over real and synthetic users together.
    pub fn mean_logins_all_users(&self) -> f64 {
        let users = self.users.len() + self.synthetic.len();
        if users == 0 {
            return 0.0;
        }
        (self.total_logins + self.synthetic_entries) as f64 / users as f64
    }

    pub fn mean_logins_real_users(&self) -> f64 {
        if self.users.is_empty() {
            return 0.0;
        }
        self.total_logins as f64 / self.users.len() as f64
    }

    /// Records a successful login; `fv` must already be encoded.
    pub fn record_login(
        &mut self,
        user: &str,
        fv: &FeatureVector,
        timestamp: DateTime<Utc>,
    ) -> Result<(), StoreError> {
        fv.check_arity(&self.schema)?;
        let values = fv.values();
        let retention = self.config.retention;

        let history = self
            .users
            .entry(user.to_string())
            .or_insert_with(|| History::new(values.len()));
        for (k, value) in values.iter().enumerate() {
            self.global[k].add(value);
            if history.features[k].add(value) {
                *self.holders[k].entry(value.clone()).or_default() += 1;
            }
        }
        history.total += 1;
        self.total_logins += 1;
        self.ledger.baseline_entries += 1;
        if retention.is_some() {
            history.window.push_back((timestamp, values.to_vec()));
        }
        if let Some(log) = &mut self.event_log {
            log.push(LoginEvent {
                user: user.to_string(),
                timestamp,
                features: fv.clone(),
            });
        }

        let mut evicted = Vec::new();
        if let Some(policy) = retention {
            evicted = self.enforce_retention(user, timestamp, policy);
        }

        if let Some(policy) = self.config.k_anonymity.clone() {
            for &k in &self.k_targets.clone() {
                self.pad_feature(&policy, k, &values[k]);
                for entry in &evicted {
                    self.pad_feature(&policy, k, &entry[k]);
                }
            }
        }
        Ok(())
    }

    fn enforce_retention(
        &mut self,
        user: &str,
        now: DateTime<Utc>,
        policy: RetentionPolicy,
    ) -> Vec<Vec<String>> {
        let history = self.users.get_mut(user).expect("user just recorded");
        let mut evicted = Vec::new();
        loop {
            let over_count = policy
                .max_entries_per_user
                .is_some_and(|max| history.window.len() > max);
            let too_old = match (policy.max_age, history.window.front()) {
                (Some(age), Some((ts, _))) => now - *ts > age,
                _ => false,
            };
            if !(over_count || too_old) {
                break;
            }
            let (_, values) = history.window.pop_front().expect("window non-empty");
            for (k, value) in values.iter().enumerate() {
                self.global[k].remove(value);
                if history.features[k].remove(value) {
                    release_holder(&mut self.holders[k], value);
                }
            }
            history.total -= 1;
            self.total_logins -= 1;
            evicted.push(values);
        }
        evicted
    }

    /// Pads `value` of `feature_id` until at least `policy.k` distinct users hold it.
    /// Returns the number of entries added.
    pub fn pad_to_k(
        &mut self,
        policy: &KAnonymityPolicy,
        feature_id: &str,
        value: &str,
    ) -> Result<u64, StoreError> {
        if policy.k == 0 {
            return Err(StoreError::InvalidK);
        }
        let k = self.schema.index_of(feature_id)?;
        Ok(self.pad_feature(policy, k, value))
    }

    fn pad_feature(&mut self, policy: &KAnonymityPolicy, feature: usize, value: &str) -> u64 {
        let held = self.holders[feature].get(value).copied().unwrap_or(0);
        // a value nobody holds any more needs no anonymity set
        if held == 0 || held >= policy.k {
            return 0;
        }
        let missing = policy.k - held;
        for _ in 0..missing {
            let target = self.pick_synthetic(feature, value);
            let entry = self.synthetic_entry(feature, value);
            let history = &mut self.synthetic[target];
            for (k, v) in entry.iter().enumerate() {
                self.global[k].add(v);
                if history.features[k].add(v) {
                    *self.holders[k].entry(v.clone()).or_default() += 1;
                }
            }
            history.total += 1;
            self.synthetic_entries += 1;
            self.ledger.additional_entries += 1;
        }
        u64::from(missing)
    }

    /// Chooses a synthetic user not yet holding `value`, creating one when the
    /// synthetic mean would otherwise exceed the real-user mean.
    fn pick_synthetic(&mut self, feature: usize, value: &str) -> usize {
        let real_mean = self.mean_logins_real_users();
        let n = self.synthetic.len();
        let grow = n == 0 || (self.synthetic_entries + 1) as f64 / n as f64 > real_mean;
        if !grow {
            for _ in 0..32 {
                let i = self.rng.gen_range(0..n);
                if !self.synthetic[i].holds(feature, value) {
                    return i;
                }
            }
            let eligible: Vec<usize> = (0..n)
                .filter(|&i| !self.synthetic[i].holds(feature, value))
                .collect();
            if !eligible.is_empty() {
                return eligible[self.rng.gen_range(0..eligible.len())];
            }
        }
        self.synthetic.push(History::new(self.schema.len()));
        n
    }

    /// Full entry for a padded login: the target value, other features drawn
    /// from their current global distribution.
    fn synthetic_entry(&mut self, feature: usize, value: &str) -> Vec<String> {
        (0..self.schema.len())
            .map(|k| {
                if k == feature {
                    return value.to_string();
                }
                let table = &self.global[k];
                let mut pick = self.rng.gen_range(0..table.total);
                for (v, c) in &table.counts {
                    if pick < *c {
                        return v.clone();
                    }
                    pick -= c;
                }
                unreachable!("draw below histogram total")
            })
            .collect()
    }

    /// Values of the policy's target features held by fewer than `k` distinct
    /// users, as `(feature id, value)` sorted for stable output.
    pub fn audit_k(&self, policy: &KAnonymityPolicy) -> Result<Vec<(String, String)>, StoreError> {
        let mut violations = Vec::new();
        for feature_id in &policy.features {
            let k = self.schema.index_of(feature_id)?;
            for (value, &held) in &self.holders[k] {
                if held < policy.k {
                    violations.push((feature_id.clone(), value.clone()));
                }
            }
        }
        violations.sort();
        Ok(violations)
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        StoreSnapshot {
            schema: self.schema.clone(),
            global: self.global.iter().map(CountTable::to_btree).collect(),
            users: self
                .users
                .iter()
                .map(|(u, h)| (u.clone(), h.features.iter().map(CountTable::to_btree).collect()))
                .collect(),
            synthetic_users: self.synthetic.len(),
            ledger: self.ledger,
        }
    }
}

fn release_holder(holders: &mut HashMap<String, u32>, value: &str) {
    if let Some(h) = holders.get_mut(value) {
        *h -= 1;
        if *h == 0 {
            holders.remove(value);
        }
    }
}

impl FrequencySource for HistoryStore {
    fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn global_counts(&self, feature: usize, value: &str) -> Counts {
        self.global[feature].counts(value)
    }

    fn user_counts(&self, user: &str, feature: usize, value: &str) -> Option<Counts> {
        self.users.get(user).map(|h| h.features[feature].counts(value))
    }
}

/// Serializable, read-only copy of the histograms of a [`HistoryStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreSnapshot {
    pub schema: FeatureSchema,
    pub global: Vec<BTreeMap<String, u64>>,
    pub users: BTreeMap<String, Vec<BTreeMap<String, u64>>>,
    pub synthetic_users: usize,
    pub ledger: PaddingLedger,
}

fn btree_counts(table: &BTreeMap<String, u64>, value: &str) -> Counts {
    Counts {
        count: table.get(value).copied().unwrap_or(0),
        total: table.values().sum(),
        vocabulary: table.len(),
    }
}

impl FrequencySource for StoreSnapshot {
    fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn global_counts(&self, feature: usize, value: &str) -> Counts {
        btree_counts(&self.global[feature], value)
    }

    fn user_counts(&self, user: &str, feature: usize, value: &str) -> Option<Counts> {
        self.users.get(user).map(|f| btree_counts(&f[feature], value))
    }
}

/// Scoring view that recounts a raw event log on every query.
pub struct EventLogView<'a> {
    schema: &'a FeatureSchema,
    events: &'a [LoginEvent],
}

impl<'a> EventLogView<'a> {
    pub fn new(schema: &'a FeatureSchema, events: &'a [LoginEvent]) -> Self {
        Self { schema, events }
    }

    fn count<'e>(&self, events: impl Iterator<Item = &'e LoginEvent>, feature: usize, value: &str) -> Counts {
        let mut seen: HashMap<&str, u64> = HashMap::new();
        let mut total = 0;
        for e in events {
            *seen.entry(e.features.values()[feature].as_str()).or_default() += 1;
            total += 1;
        }
        Counts {
            count: seen.get(value).copied().unwrap_or(0),
            total,
            vocabulary: seen.len(),
        }
    }
}

impl FrequencySource for EventLogView<'_> {
    fn schema(&self) -> &FeatureSchema {
        self.schema
    }

    fn global_counts(&self, feature: usize, value: &str) -> Counts {
        self.count(self.events.iter(), feature, value)
    }

    fn user_counts(&self, user: &str, feature: usize, value: &str) -> Option<Counts> {
        if !self.events.iter().any(|e| e.user == user) {
            return None;
        }
        Some(self.count(self.events.iter().filter(|e| e.user == user), feature, value))
    }
}

/// True iff recounting `events` (in any order) reproduces the store's histograms.
/// Only meaningful for stores built without padding or retention.
pub fn aggregate_equivalence_check(events: &[LoginEvent], store: &HistoryStore) -> bool {
    let d = store.schema.len();
    let mut global = vec![BTreeMap::<String, u64>::new(); d];
    let mut users: BTreeMap<String, Vec<BTreeMap<String, u64>>> = BTreeMap::new();
    for e in events {
        if e.features.len() != d {
            return false;
        }
        let per_user = users
            .entry(e.user.clone())
            .or_insert_with(|| vec![BTreeMap::new(); d]);
        for (k, v) in e.features.values().iter().enumerate() {
            *global[k].entry(v.clone()).or_default() += 1;
            *per_user[k].entry(v.clone()).or_default() += 1;
        }
    }
    let snap = store.snapshot();
    snap.synthetic_users == 0 && snap.global == global && snap.users == users
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{risk_score, RiskConfig};
    use chrono::TimeZone;
    use rand::seq::SliceRandom;

    fn ts(i: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_600_000_000 + i * 3600, 0).unwrap()
    }

    fn fv(ip: &str, ua: &str) -> FeatureVector {
        FeatureVector::new([ip, ua]).unwrap()
    }

    fn store(config: StoreConfig) -> HistoryStore {
        HistoryStore::new(FeatureSchema::ip_user_agent(), config).unwrap()
    }

    #[test]
    fn fresh_store_one_login() {
        let mut s = store(StoreConfig::default());
        s.record_login("alice", &fv("1.1.1.1", "ua"), ts(0)).unwrap();
        assert_eq!(s.total_logins(), 1);
        assert_eq!(s.user_login_total("alice"), Some(1));
        assert_eq!(s.real_user_count(), 1);
    }

    #[test]
    fn retention_keeps_newest_entries() {
        let mut s = store(StoreConfig {
            retention: Some(RetentionPolicy { max_entries_per_user: Some(2), max_age: None }),
            ..StoreConfig::default()
        });
        s.record_login("u", &fv("1.1.1.1", "a"), ts(0)).unwrap();
        s.record_login("u", &fv("2.2.2.2", "a"), ts(1)).unwrap();
        s.record_login("u", &fv("3.3.3.3", "a"), ts(2)).unwrap();
        assert_eq!(s.user_login_total("u"), Some(2));
        assert_eq!(s.total_logins(), 2);
        assert_eq!(s.global_counts(0, "1.1.1.1").count, 0);
        assert_eq!(s.global_counts(0, "1.1.1.1").vocabulary, 2);
        assert_eq!(s.user_counts("u", 1, "a").unwrap().count, 2);
    }

    #[test]
    fn retention_by_age() {
        let mut s = store(StoreConfig {
            retention: Some(RetentionPolicy { max_entries_per_user: None, max_age: Some(TimeDelta::hours(5)) }),
            ..StoreConfig::default()
        });
        for i in 0..10 {
            s.record_login("u", &fv(&format!("1.1.1.{i}"), "a"), ts(i)).unwrap();
        }
        // entries at hours 4..=9 are within 5h of hour 9
        assert_eq!(s.user_login_total("u"), Some(6));
        assert_eq!(s.global_counts(0, "1.1.1.3").count, 0);
        assert_eq!(s.global_counts(0, "1.1.1.4").count, 1);
        assert_eq!(
            HistoryStore::new(
                FeatureSchema::ip_user_agent(),
                StoreConfig {
                    retention: Some(RetentionPolicy { max_entries_per_user: None, max_age: None }),
                    ..StoreConfig::default()
                }
            )
            .unwrap_err(),
            StoreError::EmptyRetention
        );
    }

    #[test]
    fn k2_pads_new_value_once() {
        let policy = KAnonymityPolicy::ip(2).unwrap();
        let mut s = store(StoreConfig { k_anonymity: Some(policy.clone()), ..StoreConfig::default() });
        s.record_login("u", &fv("9.9.9.9", "a"), ts(0)).unwrap();
        assert_eq!(s.ledger().additional_entries, 1);
        assert_eq!(s.synthetic_user_count(), 1);
        assert_eq!(s.global_counts(0, "9.9.9.9").count, 2);
        // the padded entry does not reach the user's own history
        assert_eq!(s.user_counts("u", 0, "9.9.9.9").unwrap().count, 1);
        assert!(s.audit_k(&policy).unwrap().is_empty());
        // global histograms of all features include the padded entry
        assert_eq!(s.global_total(0), 2);
        assert_eq!(s.global_total(1), 2);
    }

    #[test]
    fn k1_never_pads() {
        let policy = KAnonymityPolicy::ip(1).unwrap();
        let mut s = store(StoreConfig { k_anonymity: Some(policy.clone()), ..StoreConfig::default() });
        for i in 0..20 {
            s.record_login(&format!("u{i}"), &fv(&format!("1.1.1.{i}"), "a"), ts(i)).unwrap();
        }
        assert_eq!(s.ledger().additional_entries, 0);
        assert_eq!(s.pad_to_k(&policy, "ip", "1.1.1.1").unwrap(), 0);
    }

    #[test]
    fn value_already_held_by_k_users_needs_no_padding() {
        let policy = KAnonymityPolicy::ip(2).unwrap();
        let mut s = store(StoreConfig::default());
        s.record_login("a", &fv("1.1.1.1", "x"), ts(0)).unwrap();
        s.record_login("b", &fv("1.1.1.1", "x"), ts(1)).unwrap();
        assert_eq!(s.pad_to_k(&policy, "ip", "1.1.1.1").unwrap(), 0);
        assert_eq!(s.pad_to_k(&policy, "ip", "7.7.7.7").unwrap(), 0);
        assert_eq!(s.pad_to_k(&policy, "nope", "1.1.1.1"), Err(StoreError::Model(ModelError::UnknownFeature("nope".into()))));
    }

    /// Counts values whose holder count is below k after each login of a
    /// replayed stream, assuming every shortfall is closed immediately.
    fn padding_oracle(stream: &[(String, String)], k: u32) -> u64 {
        let mut holders: HashMap<&str, std::collections::HashSet<&str>> = HashMap::new();
        let mut padded: HashMap<&str, u32> = HashMap::new();
        let mut added = 0;
        for (user, ip) in stream {
            holders.entry(ip).or_default().insert(user);
            let real = holders[ip.as_str()].len() as u32;
            let pad = padded.entry(ip).or_default();
            if real + *pad < k {
                added += u64::from(k - real - *pad);
                *pad = k - real;
            }
        }
        added
    }

    #[test]
    fn toy_run_thirty_unique_ips_k2() {
        let stream: Vec<(String, String)> = (0..30)
            .map(|i| (format!("user{}", i % 10), format!("10.0.{i}.1")))
            .collect();
        assert_eq!(padding_oracle(&stream, 2), 30);
        let policy = KAnonymityPolicy::ip(2).unwrap();
        let mut s = store(StoreConfig { k_anonymity: Some(policy.clone()), seed: 3, ..StoreConfig::default() });
        for (i, (u, ip)) in stream.iter().enumerate() {
            s.record_login(u, &fv(ip, "ua"), ts(i as i64)).unwrap();
        }
        assert_eq!(s.ledger().additional_entries, 30);
        assert_eq!(s.ledger().baseline_entries, 30);
        assert!((s.ledger().increase_ratio() - 1.0).abs() < 1e-12);
        assert!(s.audit_k(&policy).unwrap().is_empty());
    }

    #[test]
    fn padding_matches_oracle_on_shared_values() {
        let stream: Vec<(String, String)> = (0..200u32)
            .map(|i| (format!("user{}", (i * 7) % 23), format!("10.0.{}.1", (i * 13) % 37)))
            .collect();
        for k in 1..=6 {
            let mut s = store(StoreConfig {
                k_anonymity: Some(KAnonymityPolicy::ip(k).unwrap()),
                ..StoreConfig::default()
            });
            for (i, (u, ip)) in stream.iter().enumerate() {
                s.record_login(u, &fv(ip, "ua"), ts(i as i64)).unwrap();
            }
            assert_eq!(s.ledger().additional_entries, padding_oracle(&stream, k), "k={k}");
        }
    }

    #[test]
    fn audit_stricter_k_finds_violations() {
        let mut s = store(StoreConfig {
            k_anonymity: Some(KAnonymityPolicy::ip(2).unwrap()),
            ..StoreConfig::default()
        });
        s.record_login("a", &fv("1.1.1.1", "x"), ts(0)).unwrap();
        s.record_login("b", &fv("2.2.2.2", "x"), ts(1)).unwrap();
        assert!(s.audit_k(&KAnonymityPolicy::ip(2).unwrap()).unwrap().is_empty());
        let v = s.audit_k(&KAnonymityPolicy::ip(3).unwrap()).unwrap();
        assert_eq!(
            v,
            vec![("ip".to_string(), "1.1.1.1".to_string()), ("ip".to_string(), "2.2.2.2".to_string())]
        );
        assert!(store(StoreConfig::default()).audit_k(&KAnonymityPolicy::ip(4).unwrap()).unwrap().is_empty());
    }

    #[test]
    fn retention_eviction_repads() {
        let policy = KAnonymityPolicy::ip(3).unwrap();
        let mut s = store(StoreConfig {
            k_anonymity: Some(policy.clone()),
            retention: Some(RetentionPolicy { max_entries_per_user: Some(1), max_age: None }),
            ..StoreConfig::default()
        });
        s.record_login("a", &fv("1.1.1.1", "x"), ts(0)).unwrap();
        s.record_login("b", &fv("1.1.1.1", "x"), ts(1)).unwrap();
        s.record_login("a", &fv("2.2.2.2", "x"), ts(2)).unwrap();
        assert!(s.audit_k(&policy).unwrap().is_empty());
    }

    #[test]
    fn aggregation_check() {
        let events: Vec<LoginEvent> = (0..40)
            .map(|i| LoginEvent {
                user: format!("u{}", i % 4),
                timestamp: ts(i),
                features: fv(&format!("1.1.1.{}", i % 7), &format!("ua{}", i % 3)),
            })
            .collect();
        let mut s = store(StoreConfig { keep_event_log: true, ..StoreConfig::default() });
        for e in &events {
            s.record_login(&e.user, &e.features, e.timestamp).unwrap();
        }
        assert_eq!(s.event_log().unwrap(), events.as_slice());
        assert!(aggregate_equivalence_check(&events, &s));

        let mut shuffled = events.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
        assert!(aggregate_equivalence_check(&shuffled, &s));
        assert!(!aggregate_equivalence_check(&shuffled[1..], &s));

        let schema = FeatureSchema::ip_user_agent();
        let view = EventLogView::new(&schema, &shuffled);
        let cfg = RiskConfig::default();
        for e in &events {
            let a = risk_score(&s, &cfg, &e.user, &e.features).unwrap();
            let b = risk_score(&view, &cfg, &e.user, &e.features).unwrap();
            assert_eq!(a, b);
        }
        let snap = s.snapshot();
        for e in &events {
            assert_eq!(
                risk_score(&s, &cfg, &e.user, &e.features).unwrap(),
                risk_score(&snap, &cfg, &e.user, &e.features).unwrap()
            );
        }
    }
}
