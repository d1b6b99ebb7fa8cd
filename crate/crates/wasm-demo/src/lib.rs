//! Browser bindings for the demo page in `www/`.
//!
//! Three operations: encode a single feature value, and run a truncation or
//! k-anonymity sweep on a small generated dataset. The plain functions are
//! ordinary Rust so they can be tested natively; the `#[wasm_bindgen]`
//! wrappers only forward.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rba_privacy::attack::{parse_blocklist, AttackSampler};
use rba_privacy::codec::FeatureKind;
use rba_privacy::dataset::{self, DatasetProfile, World};
use rba_privacy::eval::{extract_sweep_limits, run_sweep, Enhancement, EnhancementKind, EvalConfig, Replayer};
use rba_privacy::{CodecChain, HashPolicy};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Encodes one raw value. `feature` is `ip` or `user_agent`; an empty salt
/// disables hashing.
pub fn encode_value(
    feature: &str,
    raw: &str,
    truncation_bits: u32,
    coarse_user_agent: bool,
    salt: &str,
    iterations: u32,
) -> Result<String, String> {
    let kind = match feature {
        "ip" => FeatureKind::Ip,
        "user_agent" => FeatureKind::UserAgent,
        other => return Err(format!("unknown feature `{other}`")),
    };
    let hash = if salt.is_empty() {
        None
    } else {
        Some(HashPolicy::new(salt.as_bytes().to_vec(), iterations).map_err(|e| e.to_string())?)
    };
    let codec = CodecChain {
        truncation_bits,
        coarse_user_agent,
        hash,
    };
    codec.encode(kind, raw).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct Series {
    pub model: String,
    pub tpr: Vec<f64>,
    pub tpr_relative: Vec<f64>,
    pub rsr_relative: Vec<f64>,
    pub additional_entries: Vec<u64>,
    pub tpr_limit: String,
    pub rsr_limit: String,
}

#[derive(Debug, Serialize)]
pub struct SweepView {
    pub enhancement: String,
    pub users: usize,
    pub logins: usize,
    pub steps: Vec<u32>,
    pub series: Vec<Series>,
    pub overall_limit: String,
}

/// Generates a dataset with `users` users and `logins` logins, then sweeps
/// `enhancement` over `steps`.
pub fn sweep(
    enhancement: EnhancementKind,
    users: usize,
    logins: usize,
    attempts: usize,
    seed: u64,
    steps: Vec<u32>,
) -> Result<SweepView, String> {
    let world = World::generate(seed);
    let profile = DatasetProfile {
        n_users: users,
        total_logins: logins,
        seed,
        ..DatasetProfile::default()
    };
    let events = dataset::generate(&profile, &world).map_err(|e| e.to_string())?;
    let blocklist = parse_blocklist(
        &world.synthetic_blocklist(2000, seed),
        256,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .map_err(|e| e.to_string())?;
    let schema = dataset::schema();
    let sampler = AttackSampler::new(&schema, &events, &blocklist, &world.geomap()).map_err(|e| e.to_string())?;
    let config = EvalConfig {
        attempts_per_victim: attempts,
        seed,
        ..EvalConfig::default()
    };
    let replayer = Replayer::new(&schema, &events, &sampler, &config).map_err(|e| e.to_string())?;
    let enhancement = match enhancement {
        EnhancementKind::Truncation => Enhancement::Truncation(steps),
        EnhancementKind::KAnonymity => Enhancement::KAnonymity(steps),
    };
    let result = run_sweep(&replayer, &config, &enhancement).map_err(|e| e.to_string())?;
    let limits = extract_sweep_limits(&result, config.rsr_limit_delta);

    let series = limits
        .per_model
        .iter()
        .map(|(model, l)| {
            let records = result.series(*model);
            Series {
                model: model.to_string(),
                tpr: records.iter().map(|r| r.tpr).collect(),
                tpr_relative: records.iter().map(|r| r.tpr_relative).collect(),
                rsr_relative: records.iter().map(|r| r.rsr_relative).collect(),
                additional_entries: records.iter().map(|r| r.additional_entries).collect(),
                tpr_limit: l.tpr.to_string(),
                rsr_limit: l.rsr.to_string(),
            }
        })
        .collect();
    Ok(SweepView {
        enhancement: result.meta.enhancement.to_string(),
        users,
        logins: events.len(),
        steps: result.meta.steps.clone(),
        series,
        overall_limit: limits.overall.to_string(),
    })
}

fn to_json(view: Result<SweepView, String>) -> Result<String, String> {
    view.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
}

#[wasm_bindgen]
pub fn encode(
    feature: &str,
    raw: &str,
    truncation_bits: u32,
    coarse_user_agent: bool,
    salt: &str,
    iterations: u32,
) -> Result<String, String> {
    encode_value(feature, raw, truncation_bits, coarse_user_agent, salt, iterations)
}

/// JSON [`SweepView`] of a truncation sweep over `0..=max_bits`.
#[wasm_bindgen]
pub fn truncation_sweep(users: usize, logins: usize, attempts: usize, seed: u64, max_bits: u32) -> Result<String, String> {
    to_json(sweep(EnhancementKind::Truncation, users, logins, attempts, seed, (0..=max_bits).collect()))
}

/// JSON [`SweepView`] of a k-anonymity sweep over `1..=max_k`.
#[wasm_bindgen]
pub fn k_sweep(users: usize, logins: usize, attempts: usize, seed: u64, max_k: u32) -> Result<String, String> {
    to_json(sweep(EnhancementKind::KAnonymity, users, logins, attempts, seed, (1..=max_k).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_truncates_and_hashes() {
        assert_eq!(encode_value("ip", "192.168.1.166", 8, false, "", 1).unwrap(), "192.168.1.0");
        let a = encode_value("ip", "192.168.1.166", 8, false, "s", 1).unwrap();
        let b = encode_value("ip", "192.168.1.7", 8, false, "s", 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        assert!(encode_value("ip", "192.168.1.166", 33, false, "", 1).is_err());
        assert!(encode_value("device", "x", 0, false, "", 1).is_err());
    }

    #[test]
    fn small_sweeps_serialize() {
        let json = truncation_sweep(40, 400, 2, 5, 8).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["steps"].as_array().unwrap().len(), 9);
        assert_eq!(v["series"].as_array().unwrap().len(), 3);
        assert_eq!(v["series"][0]["tpr_relative"][0], 0.0);

        let view = sweep(EnhancementKind::KAnonymity, 40, 400, 2, 5, vec![1, 2, 3]).unwrap();
        let padding = &view.series[0].additional_entries;
        assert_eq!(padding[0], 0);
        assert!(padding.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn infeasible_profiles_report_errors() {
        assert!(truncation_sweep(50, 10, 2, 1, 4).is_err());
    }
}
