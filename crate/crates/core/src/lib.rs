//! Risk-based authentication with privacy-enhanced login histories.
//!
//! * [`model`]: the risk score over global and per-user feature frequencies.
//! * [`codec`]: IP truncation, salted iterated hashing, user-agent coarsening.
//! * [`store`]: aggregated history store with k-anonymity padding and retention.
//! * [`attack`]: naive, VPN and targeted attacker simulation.
//! * [`dataset`]: synthetic login datasets and the synthetic IP world they live in.
//! * [`eval`]: replay, threshold calibration, truncation and k-anonymity sweeps.
//! * [`io`]: text file formats for datasets, blocklists, geo maps and results.

pub mod attack;
pub mod codec;
pub mod dataset;
pub mod eval;
pub mod io;
pub mod model;
pub mod store;

pub use codec::{CodecChain, HashPolicy, Ipv4Value};
pub use model::{
    classify, risk_score, Decision, FeatureSchema, FeatureVector, FrequencySource, LoginEvent,
    RiskConfig, RiskScore, Smoothing,
};
pub use store::{HistoryStore, KAnonymityPolicy, PaddingLedger, RetentionPolicy, StoreConfig};
