//! Synthetic login datasets.
//!
//! A [`World`] assigns /16 address blocks to countries; one home country holds
//! a city whose ISPs serve most users. Each user gets a frequency class, a
//! small personal pool of address prefixes (home, campus, mobile, second home)
//! and one or two browsers whose versions advance over time. A small share of
//! logins comes from random addresses anywhere in the world.

use std::collections::HashSet;

use chrono::{DateTime, TimeDelta, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{Cidr, GeoMap};
use crate::codec::Ipv4Value;
use crate::model::{FeatureSchema, FeatureVector, LoginEvent};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("infeasible profile: {0}")]
    Infeasible(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrequencyClass {
    Daily,
    SeveralWeekly,
    Other,
}

impl FrequencyClass {
    const ALL: [FrequencyClass; 3] = [Self::Daily, Self::SeveralWeekly, Self::Other];

    /// Class of a login sequence from its median gap between logins.
    pub fn of_timestamps(timestamps: &[DateTime<Utc>]) -> Self {
        if timestamps.len() < 2 {
            return Self::Other;
        }
        let mut gaps: Vec<i64> = timestamps
            .windows(2)
            .map(|w| (w[1] - w[0]).num_seconds())
            .collect();
        gaps.sort_unstable();
        let median_days = gaps[gaps.len() / 2] as f64 / 86_400.0;
        if median_days <= 1.5 {
            Self::Daily
        } else if median_days <= 5.0 {
            Self::SeveralWeekly
        } else {
            Self::Other
        }
    }

    /// Range of gaps between consecutive logins, in hours.
    fn gap_hours(self) -> (f64, f64) {
        match self {
            Self::Daily => (12.0, 34.0),
            Self::SeveralWeekly => (44.0, 100.0),
            Self::Other => (7.0 * 24.0, 40.0 * 24.0),
        }
    }

    /// Median of the login count weight distribution.
    fn typical_logins(self) -> f64 {
        match self {
            Self::Daily => 20.0,
            Self::SeveralWeekly => 9.0,
            Self::Other => 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyMix {
    pub daily: f64,
    pub several_weekly: f64,
    pub other: f64,
}

impl FrequencyMix {
    fn share(&self, class: FrequencyClass) -> f64 {
        match class {
            FrequencyClass::Daily => self.daily,
            FrequencyClass::SeveralWeekly => self.several_weekly,
            FrequencyClass::Other => self.other,
        }
    }
}

impl Default for FrequencyMix {
    fn default() -> Self {
        Self {
            daily: 0.443,
            several_weekly: 0.392,
            other: 0.165,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub n_users: usize,
    pub total_logins: usize,
    pub frequency_mix: FrequencyMix,
    /// Share of users living in the city.
    pub region_concentration: f64,
    pub ip_pool_min: usize,
    pub ip_pool_max: usize,
    pub start: DateTime<Utc>,
    pub time_span: TimeDelta,
    /// Share of logins from a random address anywhere in the world.
    pub outlier_rate: f64,
    pub seed: u64,
}

impl Default for DatasetProfile {
    fn default() -> Self {
        Self {
            n_users: 780,
            total_logins: 9555,
            frequency_mix: FrequencyMix::default(),
            region_concentration: 0.85,
            ip_pool_min: 1,
            ip_pool_max: 4,
            start: Utc.with_ymd_and_hms(2018, 8, 1, 0, 0, 0).unwrap(),
            time_span: TimeDelta::days(670),
            outlier_rate: 0.02,
            seed: 0,
        }
    }
}

impl DatasetProfile {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::Infeasible(m.to_string()));
        if self.n_users == 0 {
            return bad("at least one user is required");
        }
        if self.total_logins < self.n_users {
            return bad("total_logins must be at least n_users");
        }
        let mix = self.frequency_mix;
        let parts = [mix.daily, mix.several_weekly, mix.other];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("frequency mix must be proportions summing to 1");
        }
        if !(0.0..=1.0).contains(&self.region_concentration) || !(0.0..=1.0).contains(&self.outlier_rate) {
            return bad("region_concentration and outlier_rate must lie in [0, 1]");
        }
        if self.ip_pool_min == 0 || self.ip_pool_min > self.ip_pool_max || self.ip_pool_max > 4 {
            return bad("ip pool size range must satisfy 1 <= min <= max <= 4");
        }
        if self.time_span <= TimeDelta::zero() {
            return bad("time span must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Country {
    pub label: String,
    pub blocks: Vec<Cidr>,
}

/// Synthetic IPv4 geography.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct World {
    pub countries: Vec<Country>,
    /// Index of the home country in `countries`.
    pub home: usize,
    /// Home-country blocks of the city ISPs: cable, university, DSL.
    pub city_blocks: Vec<Cidr>,
    /// Block of the nationwide mobile carrier.
    pub mobile_block: Cidr,
    /// NAT addresses of the university network shared by many users.
    pub campus: Vec<Ipv4Value>,
}

const COUNTRY_CODES: [&str; 40] = [
    "DE", "US", "CN", "RU", "BR", "IN", "FR", "GB", "NL", "UA", "VN", "ID", "KR", "JP", "TR",
    "IT", "ES", "PL", "RO", "IR", "MX", "AR", "CA", "AU", "SE", "CZ", "TH", "PK", "EG", "NG",
    "ZA", "CO", "CL", "TW", "HK", "SG", "MY", "PH", "BD", "KZ",
];

impl World {
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5745_4f52_4c44);
        let mut used = HashSet::new();
        let usable_first_octet = |o: u32| !matches!(o, 0 | 10 | 100 | 127 | 169 | 172 | 192 | 198) && o < 224;

        let mut fresh_block = |rng: &mut ChaCha8Rng, first: Option<u32>| loop {
            let a = first.unwrap_or_else(|| rng.gen_range(1..224));
            if !usable_first_octet(a) {
                continue;
            }
            let b = rng.gen_range(0..256u32);
            if used.insert((a, b)) {
                return Cidr::new(Ipv4Value::from_u32((a << 24) | (b << 16)), 16).expect("valid /16");
            }
        };

        // home country: 12 blocks spread over three /8s
        let home_octets: Vec<u32> = {
            let mut v = Vec::new();
            while v.len() < 3 {
                let o = rng.gen_range(1..224);
                if usable_first_octet(o) && !v.contains(&o) {
                    v.push(o);
                }
            }
            v
        };
        let home_blocks: Vec<Cidr> = (0..12)
            .map(|i| fresh_block(&mut rng, Some(home_octets[i % 3])))
            .collect();
        let mut countries = vec![Country {
            label: COUNTRY_CODES[0].to_string(),
            blocks: home_blocks.clone(),
        }];
        for code in &COUNTRY_CODES[1..] {
            let n = rng.gen_range(6..=14);
            countries.push(Country {
                label: code.to_string(),
                blocks: (0..n).map(|_| fresh_block(&mut rng, None)).collect(),
            });
        }

        let campus_net = home_blocks[1].nth(u64::from(rng.gen_range(0..256u32)) << 8);
        let campus = (0..8)
            .map(|i| Ipv4Value::from_u32(campus_net.to_u32() + 10 + i))
            .collect();
        Self {
            countries,
            home: 0,
            city_blocks: home_blocks[..3].to_vec(),
            mobile_block: home_blocks[3],
            campus,
        }
    }

    pub fn home_region(&self) -> &str {
        &self.countries[self.home].label
    }

    pub fn geomap(&self) -> GeoMap {
        GeoMap::new(
            self.countries
                .iter()
                .flat_map(|c| c.blocks.iter().map(move |b| (*b, c.label.clone()))),
        )
    }

    pub fn is_city(&self, ip: Ipv4Value) -> bool {
        self.city_blocks.iter().any(|b| b.contains(ip))
    }

    /// Home-country blocks outside the city and the mobile carrier.
    fn rural_blocks(&self) -> &[Cidr] {
        &self.countries[self.home].blocks[4..]
    }

    fn random_address<R: Rng + ?Sized>(block: Cidr, rng: &mut R) -> Ipv4Value {
        block.nth(rng.gen_range(1..block.size() - 1))
    }

    /// A random address in any country's blocks.
    pub fn random_worldwide<R: Rng + ?Sized>(&self, rng: &mut R) -> Ipv4Value {
        let country = &self.countries[rng.gen_range(0..self.countries.len())];
        let block = country.blocks[rng.gen_range(0..country.blocks.len())];
        Self::random_address(block, rng)
    }

    /// Blocklist text in the one-entry-per-line format: `addresses` single
    /// addresses from uniformly chosen countries, plus a few small CIDR ranges
    /// abroad.
    pub fn synthetic_blocklist(&self, addresses: usize, seed: u64) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0042_4c4f_434b);
        let mut out = String::from("# synthetic attacker addresses\n");
        for _ in 0..addresses {
            out.push_str(&format!("{}\n", self.random_worldwide(&mut rng)));
        }
        out.push_str("# small ranges\n");
        for _ in 0..5 {
            let c = &self.countries[rng.gen_range(1..self.countries.len())];
            let base = Self::random_address(c.blocks[rng.gen_range(0..c.blocks.len())], &mut rng);
            let cidr = Cidr::new(base, 29).expect("valid /29");
            out.push_str(&format!("{cidr}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
enum PoolEntry {
    /// Fixed /24 with a preferred host; occasionally re-assigned within the /24.
    Residential { net: u32, host: u8 },
    Campus,
    /// A /20 of the mobile carrier, any address per login.
    Mobile { net: u32 },
}

#[derive(Debug, Clone, Copy)]
struct BrowserTemplate {
    /// `{v}` is the dotted version, `{m}` the major version.
    pattern: &'static str,
    base_major: u32,
    cadence_days: i64,
    mobile: bool,
    weight: f64,
}

const BROWSERS: [BrowserTemplate; 7] = [
    BrowserTemplate {
        pattern: "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/{v} Safari/537.36",
        base_major: 68,
        cadence_days: 42,
        mobile: false,
        weight: 0.33,
    },
    BrowserTemplate {
        pattern: "Mozilla/5.0 (Windows NT 10.0; Win64; x64; rv:{m}.0) Gecko/20100101 Firefox/{m}.0",
        base_major: 61,
        cadence_days: 42,
        mobile: false,
        weight: 0.12,
    },
    BrowserTemplate {
        pattern: "Mozilla/5.0 (Macintosh; Intel Mac OS X 10_14_6) AppleWebKit/605.1.15 (KHTML, like Gecko) Version/{m}.1 Safari/605.1.15",
        base_major: 12,
        cadence_days: 365,
        mobile: false,
        weight: 0.10,
    },
    BrowserTemplate {
        pattern: "Mozilla/5.0 (Linux; Android 10; SM-G973F) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/{v} Mobile Safari/537.36",
        base_major: 68,
        cadence_days: 42,
        mobile: true,
        weight: 0.20,
    },
    BrowserTemplate {
        pattern: "Mozilla/5.0 (iPhone; CPU iPhone OS 13_3 like Mac OS X) AppleWebKit/605.1.15 (KHTML, like Gecko) Version/{m}.0 Mobile/15E148 Safari/604.1",
        base_major: 12,
        cadence_days: 365,
        mobile: true,
        weight: 0.16,
    },
    BrowserTemplate {
        pattern: "Mozilla/5.0 (X11; Linux x86_64; rv:{m}.0) Gecko/20100101 Firefox/{m}.0",
        base_major: 61,
        cadence_days: 42,
        mobile: false,
        weight: 0.04,
    },
    BrowserTemplate {
        pattern: "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/{v} Safari/537.36 Edg/{v}",
        base_major: 68,
        cadence_days: 42,
        mobile: false,
        weight: 0.05,
    },
];

#[derive(Debug, Clone, Copy)]
struct Device {
    browser: usize,
    /// Major versions behind the current release.
    lag: u32,
}

impl Device {
    fn user_agent(&self, at: DateTime<Utc>, epoch: DateTime<Utc>) -> String {
        let t = BROWSERS[self.browser];
        let days = (at - epoch).num_days().max(0);
        let release = (days / t.cadence_days) as u32;
        let major = (t.base_major + release).saturating_sub(self.lag).max(1);
        let patch = (days % t.cadence_days) / 14;
        let version = format!("{major}.0.{}.{}", 3000 + major * 60, 50 + patch * 20);
        t.pattern
            .replace("{v}", &version)
            .replace("{m}", &major.to_string())
    }
}

fn pick_weighted<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Splits `total` into integer parts proportional to `shares` (largest remainder).
fn apportion(total: usize, shares: &[f64]) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut parts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let assigned: usize = parts.iter().sum();
    for &i in order.iter().take(total - assigned) {
        parts[i] += 1;
    }
    parts
}

struct UserPlan {
    class: FrequencyClass,
    pool: Vec<PoolEntry>,
    weights: Vec<f64>,
    devices: Vec<Device>,
    logins: usize,
}

/// Generates a time-ordered login dataset over the schema `ip,user_agent`.
pub fn generate(profile: &DatasetProfile, world: &World) -> Result<Vec<LoginEvent>, DatasetError> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let n = profile.n_users;

    let mut classes: Vec<FrequencyClass> = FrequencyClass::ALL
        .iter()
        .zip(apportion(n, &FrequencyClass::ALL.map(|c| profile.frequency_mix.share(c))))
        .flat_map(|(c, k)| std::iter::repeat_n(*c, k))
        .collect();
    classes.shuffle(&mut rng);
    let city_users = (profile.region_concentration * n as f64).round() as usize;
    let mut in_city: Vec<bool> = (0..n).map(|i| i < city_users).collect();
    in_city.shuffle(&mut rng);

    // login counts: class-dependent log-normal weights, at least two logins
    // for frequent users so their gaps define the class
    let weights: Vec<f64> = classes
        .iter()
        .map(|c| LogNormal::new(c.typical_logins().ln(), 0.6).unwrap().sample(&mut rng))
        .collect();
    let mut minimum: Vec<usize> = classes
        .iter()
        .map(|c| if *c == FrequencyClass::Other { 1 } else { 2 })
        .collect();
    if minimum.iter().sum::<usize>() > profile.total_logins {
        minimum.iter_mut().for_each(|m| *m = 1);
    }
    let spare = profile.total_logins - minimum.iter().sum::<usize>();
    let counts: Vec<usize> = apportion(spare, &weights)
        .into_iter()
        .zip(&minimum)
        .map(|(a, m)| a + m)
        .collect();

    let rural = world.rural_blocks();
    let residential = |rng: &mut ChaCha8Rng, city: bool| {
        let block = if city {
            // cable or DSL
            world.city_blocks[if rng.gen_bool(0.5) { 0 } else { 2 }]
        } else {
            rural[rng.gen_range(0..rural.len())]
        };
        PoolEntry::Residential {
            net: block.nth(u64::from(rng.gen_range(0..256u32)) << 8).to_u32(),
            host: rng.gen_range(2..255),
        }
    };

    let browser_weights: Vec<f64> = BROWSERS.iter().map(|b| b.weight).collect();
    let plans: Vec<UserPlan> = (0..n)
        .map(|u| {
            let city = in_city[u];
            let size = rng.gen_range(profile.ip_pool_min..=profile.ip_pool_max);
            let mut pool = vec![residential(&mut rng, city)];
            let mut extras = vec![
                if city { PoolEntry::Campus } else { residential(&mut rng, false) },
                PoolEntry::Mobile {
                    net: world
                        .mobile_block
                        .nth(u64::from(rng.gen_range(0..16u32)) << 12)
                        .to_u32(),
                },
                residential(&mut rng, city),
            ];
            extras.shuffle(&mut rng);
            pool.extend(extras.into_iter().take(size - 1));
            let mut weights = vec![0.55];
            weights.extend(std::iter::repeat_n(0.45 / (size - 1).max(1) as f64, size - 1));

            let n_devices = if rng.gen_bool(0.4) { 2 } else { 1 };
            let devices = (0..n_devices)
                .map(|_| Device {
                    browser: pick_weighted(&browser_weights, &mut rng),
                    lag: if rng.gen_bool(0.7) { 0 } else { rng.gen_range(1..3) },
                })
                .collect();
            UserPlan {
                class: classes[u],
                pool,
                weights,
                devices,
                logins: counts[u],
            }
        })
        .collect();

    let span_hours = profile.time_span.num_seconds() as f64 / 3600.0;
    let mut events: Vec<(DateTime<Utc>, usize, usize, LoginEvent)> = Vec::with_capacity(profile.total_logins);
    for (u, plan) in plans.iter().enumerate() {
        let user = format!("u{u:04}");
        let (lo, hi) = plan.class.gap_hours();
        let mut gaps: Vec<f64> = (1..plan.logins).map(|_| rng.gen_range(lo..hi)).collect();
        let mut duration: f64 = gaps.iter().sum();
        if duration > span_hours * 0.98 {
            let scale = span_hours * 0.98 / duration;
            gaps.iter_mut().for_each(|g| *g *= scale);
            duration *= scale;
        }
        let offset = rng.gen_range(0.0..=(span_hours - duration).max(0.0));
        let mut t = offset;
        for i in 0..plan.logins {
            if i > 0 {
                t += gaps[i - 1];
            }
            let at = profile.start + TimeDelta::seconds((t * 3600.0).round() as i64);
            let outlier = i > 0 && rng.gen_bool(profile.outlier_rate);
            // first login comes from home
            let entry = if i == 0 { 0 } else { pick_weighted(&plan.weights, &mut rng) };
            let ip = if outlier {
                world.random_worldwide(&mut rng)
            } else {
                match plan.pool[entry] {
                    PoolEntry::Residential { net, host } => {
                        let host = if rng.gen_bool(0.25) { rng.gen_range(2..255) } else { host };
                        Ipv4Value::from_u32(net | u32::from(host))
                    }
                    PoolEntry::Campus => world.campus[rng.gen_range(0..world.campus.len())],
                    PoolEntry::Mobile { net } => Ipv4Value::from_u32(net + rng.gen_range(1..4095)),
                }
            };
            let on_mobile = matches!(plan.pool[entry], PoolEntry::Mobile { .. });
            let device = plan
                .devices
                .iter()
                .find(|d| BROWSERS[d.browser].mobile == on_mobile)
                .filter(|_| rng.gen_bool(0.8))
                .unwrap_or(&plan.devices[0]);
            let ua = device.user_agent(at, profile.start);
            events.push((
                at,
                u,
                i,
                LoginEvent {
                    user: user.clone(),
                    timestamp: at,
                    features: FeatureVector::new([ip.to_string(), ua]).expect("non-empty values"),
                },
            ));
        }
    }
    events.sort_by_key(|e| (e.0, e.1, e.2));
    Ok(events.into_iter().map(|e| e.3).collect())
}

/// Schema of generated datasets.
pub fn schema() -> FeatureSchema {
    FeatureSchema::ip_user_agent()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn small(seed: u64) -> DatasetProfile {
        DatasetProfile { n_users: 120, total_logins: 1500, seed, ..DatasetProfile::default() }
    }

    #[test]
    fn default_scale_mean() {
        let profile = DatasetProfile::default();
        let world = World::generate(1);
        let events = generate(&profile, &world).unwrap();
        let users: HashSet<&str> = events.iter().map(|e| e.user.as_str()).collect();
        assert_eq!(users.len(), 780);
        let mean = events.len() as f64 / users.len() as f64;
        assert!((mean - 12.25).abs() <= 0.01, "{mean}");
    }

    #[test]
    fn single_user_timestamps_strictly_increase() {
        let profile = DatasetProfile { n_users: 1, total_logins: 40, ..DatasetProfile::default() };
        let events = generate(&profile, &World::generate(0)).unwrap();
        assert_eq!(events.len(), 40);
        assert!(events.iter().all(|e| e.user == "u0000"));
        assert!(events.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let world = World::generate(3);
        assert_eq!(world, World::generate(3));
        assert_eq!(generate(&small(9), &world).unwrap(), generate(&small(9), &world).unwrap());
        assert_ne!(generate(&small(9), &world).unwrap(), generate(&small(10), &world).unwrap());
    }

    #[test]
    fn infeasible_profiles() {
        let world = World::generate(0);
        let p = DatasetProfile { n_users: 10, total_logins: 9, ..DatasetProfile::default() };
        assert!(matches!(generate(&p, &world), Err(DatasetError::Infeasible(_))));
        let p = DatasetProfile {
            frequency_mix: FrequencyMix { daily: 0.5, several_weekly: 0.5, other: 0.5 },
            ..DatasetProfile::default()
        };
        assert!(p.validate().is_err());
    }

    fn per_user(events: &[LoginEvent]) -> HashMap<&str, Vec<&LoginEvent>> {
        let mut m: HashMap<&str, Vec<&LoginEvent>> = HashMap::new();
        for e in events {
            m.entry(&e.user).or_default().push(e);
        }
        m
    }

    #[test]
    fn statistics_match_profile() {
        let profile = DatasetProfile::default();
        let world = World::generate(2);
        let events = generate(&profile, &world).unwrap();
        assert!(events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        let users = per_user(&events);

        let mut class_counts: HashMap<FrequencyClass, usize> = HashMap::new();
        let mut city = 0;
        for logins in users.values() {
            let ts: Vec<_> = logins.iter().map(|e| e.timestamp).collect();
            *class_counts.entry(FrequencyClass::of_timestamps(&ts)).or_default() += 1;

            let mut prefixes: HashMap<u32, (usize, usize)> = HashMap::new();
            for (i, e) in logins.iter().enumerate() {
                let ip: Ipv4Value = e.features.values()[0].parse().unwrap();
                prefixes.entry(ip.to_u32() >> 8).or_insert((0, i)).0 += 1;
            }
            let (&modal, _) = prefixes
                .iter()
                .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
                .unwrap();
            if world.is_city(Ipv4Value::from_u32(modal << 8)) {
                city += 1;
            }
        }
        let n = users.len() as f64;
        for class in FrequencyClass::ALL {
            let got = *class_counts.get(&class).unwrap_or(&0) as f64 / n;
            let want = profile.frequency_mix.share(class);
            assert!((got - want).abs() <= 0.05, "{class:?}: {got} vs {want}");
        }
        let got = city as f64 / n;
        assert!((got - profile.region_concentration).abs() <= 0.05, "city share {got}");
    }

    #[test]
    fn personal_pools_are_bounded() {
        // outliers aside, every user's addresses fall into at most ip_pool_max prefixes
        let profile = DatasetProfile { outlier_rate: 0.0, ip_pool_max: 2, ..small(4) };
        let world = World::generate(4);
        let events = generate(&profile, &world).unwrap();
        for logins in per_user(&events).values() {
            let mut entries = HashSet::new();
            for e in logins {
                let ip: Ipv4Value = e.features.values()[0].parse().unwrap();
                let is_campus = world.campus.contains(&ip);
                let is_mobile = world.mobile_block.contains(ip);
                entries.insert(if is_campus { 0 } else if is_mobile { 1 } else { ip.to_u32() >> 8 });
            }
            assert!(entries.len() <= 2, "{entries:?}");
        }
    }

    #[test]
    fn geomap_covers_world() {
        let world = World::generate(5);
        let g = world.geomap();
        for c in &world.countries {
            for b in &c.blocks {
                assert_eq!(g.lookup(b.nth(77)), c.label);
            }
        }
        assert!(world.campus.iter().all(|ip| world.is_city(*ip)));
        assert_eq!(g.lookup(world.mobile_block.nth(5)), world.home_region());
    }

    #[test]
    fn blocklist_spreads_over_all_countries() {
        let world = World::generate(6);
        let text = world.synthetic_blocklist(2000, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ips = crate::attack::parse_blocklist(&text, 16, &mut rng).unwrap();
        assert!(ips.len() >= 2000);
        let g = world.geomap();
        let home = ips.iter().filter(|ip| g.lookup(**ip) == world.home_region()).count();
        // 2000 / 40 countries
        assert!((25..=80).contains(&home), "{home}");
        let regions: HashSet<&str> = ips.iter().map(|ip| g.lookup(*ip)).collect();
        assert_eq!(regions.len(), world.countries.len());
    }

    #[test]
    fn browser_versions_advance() {
        let epoch = DatasetProfile::default().start;
        let d = Device { browser: 0, lag: 0 };
        let early = d.user_agent(epoch, epoch);
        let late = d.user_agent(epoch + TimeDelta::days(400), epoch);
        assert!(early.contains("Chrome/68."));
        assert!(late.contains("Chrome/77."));
    }
}
