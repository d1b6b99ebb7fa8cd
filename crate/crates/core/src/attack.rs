//! Attacker login attempts for the naive, VPN and targeted models.
//!
//! Naive attackers log in from arbitrary blocklisted addresses, VPN attackers
//! from blocklisted addresses in the victim's region, and targeted attackers
//! replay `(ip, user agent)` combinations observed for users other than the
//! victim. Naive and VPN attackers pick their user agent from the global user
//! agent distribution of the dataset.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, Ipv4Value};
use crate::model::{FeatureSchema, FeatureVector, LoginEvent, ModelError};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no attacker material: {0}")]
    NoMaterial(String),
    #[error("dataset schema must contain `ip` and `user_agent`")]
    Schema,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackerKind {
    Naive,
    Vpn,
    Targeted,
}

impl AttackerKind {
    pub const ALL: [AttackerKind; 3] = [AttackerKind::Naive, AttackerKind::Vpn, AttackerKind::Targeted];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackerKind::Naive => "naive",
            AttackerKind::Vpn => "vpn",
            AttackerKind::Targeted => "targeted",
        }
    }

    /// Whether this model draws addresses from the blocklist.
    pub fn uses_blocklist(self) -> bool {
        !matches!(self, AttackerKind::Targeted)
    }
}

impl fmt::Display for AttackerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "naive" => Ok(AttackerKind::Naive),
            "vpn" => Ok(AttackerKind::Vpn),
            "targeted" => Ok(AttackerKind::Targeted),
            other => Err(format!("unknown attacker model `{other}`")),
        }
    }
}

/// An IPv4 prefix such as `10.0.0.0/30`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cidr {
    base: u32,
    len: u8,
}

impl Cidr {
    pub fn new(ip: Ipv4Value, len: u8) -> Result<Self, String> {
        if len > 32 {
            return Err(format!("prefix length {len} exceeds 32"));
        }
        Ok(Self {
            base: ip.to_u32() & Self::mask(len),
            len,
        })
    }

    fn mask(len: u8) -> u32 {
        u32::MAX.checked_shl(32 - u32::from(len)).unwrap_or(0)
    }

    pub fn prefix_len(&self) -> u8 {
        self.len
    }

    pub fn network(&self) -> Ipv4Value {
        Ipv4Value::from_u32(self.base)
    }

    pub fn size(&self) -> u64 {
        1u64 << (32 - u32::from(self.len))
    }

    pub fn contains(&self, ip: Ipv4Value) -> bool {
        ip.to_u32() & Self::mask(self.len) == self.base
    }

    /// The `offset`-th address of the range.
    pub fn nth(&self, offset: u64) -> Ipv4Value {
        debug_assert!(offset < self.size());
        Ipv4Value::from_u32(self.base.wrapping_add(offset as u32))
    }
}

impl FromStr for Cidr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (ip, len) = s
            .trim()
            .split_once('/')
            .ok_or_else(|| format!("`{s}` is not in a.b.c.d/len form"))?;
        let ip: Ipv4Value = ip.parse().map_err(|e: CodecError| e.to_string())?;
        let len: u8 = len
            .parse()
            .map_err(|_| format!("invalid prefix length `{len}`"))?;
        Cidr::new(ip, len)
    }
}

impl fmt::Display for Cidr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.network(), self.len)
    }
}

/// `count` distinct offsets in `0..size`, sorted (Floyd's sampling).
fn sample_offsets<R: Rng + ?Sized>(size: u64, count: u64, rng: &mut R) -> BTreeSet<u64> {
    let mut chosen = BTreeSet::new();
    for j in size - count..size {
        let t = rng.gen_range(0..=j);
        if !chosen.insert(t) {
            chosen.insert(j);
        }
    }
    chosen
}

/// Parses blocklist text: one IPv4 address or CIDR range per line, `#` starts
/// a comment. Ranges larger than `cap` are reduced to `cap` uniformly sampled
/// addresses. Repeated ranges and addresses are dropped, keeping first occurrences.
pub fn parse_blocklist<R: Rng + ?Sized>(
    text: &str,
    cap: u64,
    rng: &mut R,
) -> Result<Vec<Ipv4Value>, AttackError> {
    let mut seen = HashSet::new();
    let mut seen_ranges = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| AttackError::Parse { line: i + 1, message };
        let addrs: Vec<Ipv4Value> = if line.contains('/') {
            let cidr: Cidr = line.parse().map_err(parse_err)?;
            if !seen_ranges.insert(cidr) {
                continue;
            }
            if cidr.size() <= cap {
                (0..cidr.size()).map(|o| cidr.nth(o)).collect()
            } else {
                sample_offsets(cidr.size(), cap, rng)
                    .into_iter()
                    .map(|o| cidr.nth(o))
                    .collect()
            }
        } else {
            vec![line.parse().map_err(|e: CodecError| parse_err(e.to_string()))?]
        };
        for a in addrs {
            if seen.insert(a) {
                out.push(a);
            }
        }
    }
    Ok(out)
}

pub fn load_blocklist(path: &Path, cap: u64, seed: u64) -> Result<Vec<Ipv4Value>, AttackError> {
    let text = std::fs::read_to_string(path).map_err(|source| AttackError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_blocklist(&text, cap, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Prefix to region assignment with longest-prefix matching and a default region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeoMap {
    /// Sorted by descending prefix length.
    entries: Vec<(Cidr, String)>,
    default_region: String,
}

impl GeoMap {
    pub const DEFAULT_REGION: &'static str = "unknown";

    pub fn new(entries: impl IntoIterator<Item = (Cidr, String)>) -> Self {
        let mut entries: Vec<(Cidr, String)> = entries.into_iter().collect();
        entries.sort_by_key(|e| std::cmp::Reverse(e.0.prefix_len()));
        Self {
            entries,
            default_region: Self::DEFAULT_REGION.to_string(),
        }
    }

    pub fn with_default_region(mut self, region: impl Into<String>) -> Self {
        self.default_region = region.into();
        self
    }

    pub fn entries(&self) -> &[(Cidr, String)] {
        &self.entries
    }

    pub fn lookup(&self, ip: Ipv4Value) -> &str {
        self.entries
            .iter()
            .find(|(c, _)| c.contains(ip))
            .map_or(self.default_region.as_str(), |(_, r)| r.as_str())
    }

    /// Parses `cidr,region` lines; a `cidr,region` header, blank lines and `#`
    /// comments are skipped.
    pub fn parse_csv(text: &str) -> Result<Self, AttackError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || (i == 0 && line == "cidr,region") {
                continue;
            }
            let parse_err = |message: String| AttackError::Parse { line: i + 1, message };
            let (cidr, region) = line
                .split_once(',')
                .ok_or_else(|| parse_err("expected `cidr,region`".into()))?;
            let region = region.trim();
            if region.is_empty() || region.contains(',') {
                return Err(parse_err(format!("invalid region `{region}`")));
            }
            entries.push((cidr.parse().map_err(parse_err)?, region.to_string()));
        }
        Ok(Self::new(entries))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("cidr,region\n");
        let mut sorted = self.entries.clone();
        sorted.sort();
        for (c, r) in sorted {
            out.push_str(&format!("{c},{r}\n"));
        }
        out
    }
}

/// Attacker knowledge: model kind, address pool with region tags, user agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackerModel {
    pub kind: AttackerKind,
    pub ip_pool: Vec<(Ipv4Value, String)>,
    pub ua_pool: Vec<String>,
}

impl AttackerModel {
    /// Tags every blocklisted address with its region; the user agent pool is
    /// the dataset's user agent of every login (the global distribution).
    pub fn new(
        kind: AttackerKind,
        blocklist: &[Ipv4Value],
        geomap: &GeoMap,
        dataset: &[LoginEvent],
        schema: &FeatureSchema,
    ) -> Result<Self, AttackError> {
        let ua_index = schema.index_of(FeatureSchema::USER_AGENT).map_err(|_| AttackError::Schema)?;
        let ua_pool: Vec<String> = dataset
            .iter()
            .map(|e| e.features.values()[ua_index].clone())
            .collect();
        let ip_pool: Vec<(Ipv4Value, String)> = blocklist
            .iter()
            .map(|ip| (*ip, geomap.lookup(*ip).to_string()))
            .collect();
        if kind.uses_blocklist() && ip_pool.is_empty() {
            return Err(AttackError::NoMaterial("empty blocklist".into()));
        }
        if ua_pool.is_empty() {
            return Err(AttackError::NoMaterial("dataset has no logins".into()));
        }
        Ok(Self { kind, ip_pool, ua_pool })
    }
}

/// Where an attempt's address comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IpSource {
    Pool(u32),
    Dataset(u32),
}

/// A sampled attempt as indices into the sampler's vocabularies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RawAttempt {
    pub ip: IpSource,
    pub user_agent: u32,
}

#[derive(Debug, Clone, Copy)]
struct Combo {
    ip: u32,
    user_agent: u32,
    first_holder: u32,
    shared: bool,
}

/// Precomputed attacker material for one dataset; sampling is O(1) expected.
#[derive(Debug, Clone)]
pub struct AttackSampler {
    ip_index: usize,
    ua_index: usize,
    arity: usize,
    pool: Vec<Ipv4Value>,
    pool_by_region: HashMap<String, Vec<u32>>,
    users: HashMap<String, u32>,
    victim_region: Vec<String>,
    dataset_ips: Vec<String>,
    user_agents: Vec<String>,
    /// User agent id of every login, the global distribution.
    ua_draws: Vec<u32>,
    combos: Vec<Combo>,
}

impl AttackSampler {
    pub fn new(
        schema: &FeatureSchema,
        dataset: &[LoginEvent],
        blocklist: &[Ipv4Value],
        geomap: &GeoMap,
    ) -> Result<Self, AttackError> {
        let ip_index = schema.index_of(FeatureSchema::IP).map_err(|_| AttackError::Schema)?;
        let ua_index = schema.index_of(FeatureSchema::USER_AGENT).map_err(|_| AttackError::Schema)?;
        if schema.len() != 2 {
            return Err(AttackError::Schema);
        }

        let mut users: HashMap<String, u32> = HashMap::new();
        let mut user_names: Vec<&str> = Vec::new();
        let mut ip_ids: HashMap<&str, u32> = HashMap::new();
        let mut dataset_ips: Vec<String> = Vec::new();
        let mut ua_ids: HashMap<&str, u32> = HashMap::new();
        let mut user_agents: Vec<String> = Vec::new();
        let mut ua_draws = Vec::with_capacity(dataset.len());
        let mut combo_ids: HashMap<(u32, u32), usize> = HashMap::new();
        let mut combos: Vec<Combo> = Vec::new();
        // per user: ip id -> count, for the modal address
        let mut ip_use: Vec<HashMap<u32, (u32, usize)>> = Vec::new();

        for (n, e) in dataset.iter().enumerate() {
            e.features.check_arity(schema)?;
            let next = users.len() as u32;
            let user = *users.entry(e.user.clone()).or_insert(next);
            if user == next {
                user_names.push(&e.user);
                ip_use.push(HashMap::new());
            }
            let ip_raw = e.features.values()[ip_index].as_str();
            let ip = *ip_ids.entry(ip_raw).or_insert_with(|| {
                dataset_ips.push(ip_raw.to_string());
                (dataset_ips.len() - 1) as u32
            });
            let ua_raw = e.features.values()[ua_index].as_str();
            let ua = *ua_ids.entry(ua_raw).or_insert_with(|| {
                user_agents.push(ua_raw.to_string());
                (user_agents.len() - 1) as u32
            });
            ua_draws.push(ua);
            let use_count = ip_use[user as usize].entry(ip).or_insert((0, n));
            use_count.0 += 1;

            match combo_ids.get(&(ip, ua)) {
                Some(&c) => {
                    if combos[c].first_holder != user {
                        combos[c].shared = true;
                    }
                }
                None => {
                    combo_ids.insert((ip, ua), combos.len());
                    combos.push(Combo { ip, user_agent: ua, first_holder: user, shared: false });
                }
            }
        }

        let victim_region = ip_use
            .iter()
            .map(|uses| {
                // most frequent address, earliest first use on ties
                let (&ip, _) = uses
                    .iter()
                    .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
                    .expect("user has at least one login");
                match dataset_ips[ip as usize].parse::<Ipv4Value>() {
                    Ok(addr) => geomap.lookup(addr).to_string(),
                    Err(_) => GeoMap::DEFAULT_REGION.to_string(),
                }
            })
            .collect();

        let mut pool_by_region: HashMap<String, Vec<u32>> = HashMap::new();
        for (i, ip) in blocklist.iter().enumerate() {
            pool_by_region
                .entry(geomap.lookup(*ip).to_string())
                .or_default()
                .push(i as u32);
        }

        Ok(Self {
            ip_index,
            ua_index,
            arity: schema.len(),
            pool: blocklist.to_vec(),
            pool_by_region,
            users,
            victim_region,
            dataset_ips,
            user_agents,
            ua_draws,
            combos,
        })
    }

    pub fn region_of_victim(&self, victim: &str) -> Option<&str> {
        self.users
            .get(victim)
            .map(|&u| self.victim_region[u as usize].as_str())
    }

    pub fn pool(&self) -> &[Ipv4Value] {
        &self.pool
    }

    pub fn dataset_ips(&self) -> &[String] {
        &self.dataset_ips
    }

    pub fn user_agents(&self) -> &[String] {
        &self.user_agents
    }

    /// Draws one attempt against `victim`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        kind: AttackerKind,
        victim: &str,
        rng: &mut R,
    ) -> Result<RawAttempt, AttackError> {
        let victim_id = self.users.get(victim).copied();
        match kind {
            AttackerKind::Naive => {
                if self.pool.is_empty() {
                    return Err(AttackError::NoMaterial("empty blocklist".into()));
                }
                let ip = rng.gen_range(0..self.pool.len()) as u32;
                Ok(RawAttempt { ip: IpSource::Pool(ip), user_agent: self.global_ua(rng)? })
            }
            AttackerKind::Vpn => {
                let region = victim_id
                    .map(|u| self.victim_region[u as usize].as_str())
                    .ok_or_else(|| AttackError::NoMaterial(format!("unknown victim `{victim}`")))?;
                let candidates = self
                    .pool_by_region
                    .get(region)
                    .filter(|c| !c.is_empty())
                    .ok_or_else(|| {
                        AttackError::NoMaterial(format!("no blocklisted address in region `{region}`"))
                    })?;
                let ip = candidates[rng.gen_range(0..candidates.len())];
                Ok(RawAttempt { ip: IpSource::Pool(ip), user_agent: self.global_ua(rng)? })
            }
            AttackerKind::Targeted => {
                let usable = |c: &Combo| c.shared || Some(c.first_holder) != victim_id;
                if self.combos.is_empty() {
                    return Err(AttackError::NoMaterial("empty dataset".into()));
                }
                for _ in 0..64 {
                    let c = &self.combos[rng.gen_range(0..self.combos.len())];
                    if usable(c) {
                        return Ok(RawAttempt { ip: IpSource::Dataset(c.ip), user_agent: c.user_agent });
                    }
                }
                let eligible: Vec<&Combo> = self.combos.iter().filter(|c| usable(c)).collect();
                if eligible.is_empty() {
                    return Err(AttackError::NoMaterial(format!(
                        "no feature combination observed for users other than `{victim}`"
                    )));
                }
                let c = eligible[rng.gen_range(0..eligible.len())];
                Ok(RawAttempt { ip: IpSource::Dataset(c.ip), user_agent: c.user_agent })
            }
        }
    }

    fn global_ua<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<u32, AttackError> {
        if self.ua_draws.is_empty() {
            return Err(AttackError::NoMaterial("dataset has no logins".into()));
        }
        Ok(self.ua_draws[rng.gen_range(0..self.ua_draws.len())])
    }

    pub fn ip_text(&self, ip: IpSource) -> String {
        match ip {
            IpSource::Pool(i) => self.pool[i as usize].to_string(),
            IpSource::Dataset(i) => self.dataset_ips[i as usize].clone(),
        }
    }

    pub fn to_feature_vector(&self, attempt: RawAttempt) -> FeatureVector {
        let mut values = vec![String::new(); self.arity];
        values[self.ip_index] = self.ip_text(attempt.ip);
        values[self.ua_index] = self.user_agents[attempt.user_agent as usize].clone();
        FeatureVector::new(values).expect("sampled values are non-empty")
    }

    pub fn ip_index(&self) -> usize {
        self.ip_index
    }

    pub fn ua_index(&self) -> usize {
        self.ua_index
    }
}

/// Draws one attempt of `model` against `victim`, using `dataset` for the
/// global user agent distribution and the targeted attacker's combinations.
pub fn sample_attempt<R: Rng + ?Sized>(
    model: &AttackerModel,
    victim: &str,
    dataset: &[LoginEvent],
    schema: &FeatureSchema,
    geomap: &GeoMap,
    rng: &mut R,
) -> Result<FeatureVector, AttackError> {
    let blocklist: Vec<Ipv4Value> = model.ip_pool.iter().map(|(ip, _)| *ip).collect();
    let sampler = AttackSampler::new(schema, dataset, &blocklist, geomap)?;
    let attempt = sampler.sample(model.kind, victim, rng)?;
    Ok(sampler.to_feature_vector(attempt))
}

/// Independent generator stream `stream` derived from `seed`, for per-worker sampling.
pub fn worker_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
