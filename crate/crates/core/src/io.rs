//! Text file formats: datasets, sweep results, plot data, limits and store snapshots.
//!
//! Datasets and results are CSV bodies preceded by `# key: value` header lines.
//! The first header line names the format and its version. Floating point
//! numbers are written with 17 significant digits so they read back exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use thiserror::Error;

use crate::attack::AttackerKind;
use crate::codec::{CodecChain, HashPolicy};
use crate::eval::{EnhancementKind, Limit, StepRecord, SweepLimits, SweepMeta, SweepResult};
use crate::model::{FeatureSchema, FeatureVector, LoginEvent, RiskConfig, Smoothing};
use crate::store::StoreSnapshot;

pub const DATASET_FORMAT: &str = "rba-dataset";
pub const RESULT_FORMAT: &str = "rba-sweep";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported format `{found}` (expected `{expected}`)")]
    Version { found: String, expected: String },
    #[error("header: {0}")]
    Header(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("row {row}: timestamp earlier than the previous row")]
    Unordered { row: usize },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// How the feature values of a dataset file were encoded.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EncodingMeta {
    /// `None` for raw values, otherwise the digest id of the hash codec.
    pub digest: Option<String>,
    pub truncation_bits: u32,
    pub coarse_user_agent: bool,
}

impl EncodingMeta {
    pub fn of(codec: &CodecChain) -> Self {
        Self {
            digest: codec.hash.as_ref().map(|_| HashPolicy::DIGEST_ID.to_string()),
            truncation_bits: codec.truncation_bits,
            coarse_user_agent: codec.coarse_user_agent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetFile {
    pub schema: FeatureSchema,
    pub encoding: EncodingMeta,
    pub events: Vec<LoginEvent>,
}

/// Header lines: the leading lines starting with `#`, as ordered key/value pairs.
struct Header {
    format: String,
    fields: BTreeMap<String, String>,
}

fn split_header(text: &str) -> Result<(Header, &str), IoError> {
    let mut rest = text;
    let mut lines = Vec::new();
    while let Some(line) = rest.strip_prefix('#') {
        let (line, tail) = line.split_once('\n').unwrap_or((line, ""));
        lines.push(line.trim());
        rest = tail;
    }
    let (first, others) = lines
        .split_first()
        .ok_or_else(|| IoError::Header("missing format line".into()))?;
    let mut fields = BTreeMap::new();
    for line in others {
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| IoError::Header(format!("expected `key: value`, got `{line}`")))?;
        fields.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok((
        Header {
            format: first.to_string(),
            fields,
        },
        rest,
    ))
}

impl Header {
    fn expect_format(&self, name: &str) -> Result<(), IoError> {
        let expected = format!("{name} v{FORMAT_VERSION}");
        if self.format != expected {
            return Err(IoError::Version {
                found: self.format.clone(),
                expected,
            });
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Result<&str, IoError> {
        self.fields
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| IoError::Header(format!("missing `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, IoError> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| IoError::Header(format!("invalid `{key}`: `{raw}`")))
    }
}

fn list(raw: &str) -> Vec<&str> {
    raw.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub fn dataset_to_string(file: &DatasetFile) -> String {
    let mut out = format!("# {DATASET_FORMAT} v{FORMAT_VERSION}\n");
    out.push_str(&format!("# features: {}\n", file.schema.ids().join(",")));
    out.push_str(&format!(
        "# digest: {}\n",
        file.encoding.digest.as_deref().unwrap_or("none")
    ));
    out.push_str(&format!("# truncation_bits: {}\n", file.encoding.truncation_bits));
    out.push_str(&format!("# coarse_user_agent: {}\n", file.encoding.coarse_user_agent));
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut head = vec!["user", "timestamp"];
    head.extend(file.schema.ids().iter().map(String::as_str));
    writer.write_record(&head).expect("in-memory write");
    for event in &file.events {
        let ts = format_timestamp(&event.timestamp);
        let mut row = vec![event.user.as_str(), ts.as_str()];
        row.extend(event.features.values().iter().map(String::as_str));
        writer.write_record(&row).expect("in-memory write");
    }
    out.push_str(std::str::from_utf8(&writer.into_inner().expect("in-memory flush")).expect("utf-8 input"));
    out
}

/// Parses a dataset file. Data rows are numbered from 1.
pub fn dataset_from_str(text: &str) -> Result<DatasetFile, IoError> {
    let (header, body) = split_header(text)?;
    header.expect_format(DATASET_FORMAT)?;
    let schema = FeatureSchema::new(list(header.get("features")?))
        .map_err(|e| IoError::Header(e.to_string()))?;
    let digest = match header.get("digest")? {
        "none" => None,
        d => Some(d.to_string()),
    };
    let encoding = EncodingMeta {
        digest,
        truncation_bits: header.parse("truncation_bits")?,
        coarse_user_agent: header.parse("coarse_user_agent")?,
    };
    let arity = schema.len() + 2;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(body.as_bytes());
    let columns = reader
        .headers()
        .map_err(|e| IoError::Header(e.to_string()))?
        .clone();
    if columns.len() != arity
        || &columns[0] != "user"
        || &columns[1] != "timestamp"
        || columns.iter().skip(2).ne(schema.ids().iter().map(String::as_str))
    {
        return Err(IoError::Header(format!(
            "column line does not match features `{}`",
            schema.ids().join(",")
        )));
    }
    let mut events: Vec<LoginEvent> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| IoError::Row {
            row,
            message: e.to_string(),
        })?;
        if record.len() != arity {
            return Err(IoError::Row {
                row,
                message: format!("expected {arity} fields, found {}", record.len()),
            });
        }
        let timestamp = DateTime::parse_from_rfc3339(&record[1])
            .map_err(|e| IoError::Row {
                row,
                message: format!("timestamp `{}`: {e}", &record[1]),
            })?
            .with_timezone(&Utc);
        if events.last().is_some_and(|prev| timestamp < prev.timestamp) {
            return Err(IoError::Unordered { row });
        }
        if record[0].is_empty() {
            return Err(IoError::Row {
                row,
                message: "empty user id".into(),
            });
        }
        let features = FeatureVector::new(record.iter().skip(2)).map_err(|e| IoError::Row {
            row,
            message: e.to_string(),
        })?;
        events.push(LoginEvent {
            user: record[0].to_string(),
            timestamp,
            features,
        });
    }
    Ok(DatasetFile {
        schema,
        encoding,
        events,
    })
}

pub fn write_dataset(path: &Path, file: &DatasetFile) -> Result<(), IoError> {
    fs::write(path, dataset_to_string(file)).map_err(io_err(path))
}

pub fn read_dataset(path: &Path) -> Result<DatasetFile, IoError> {
    dataset_from_str(&fs::read_to_string(path).map_err(io_err(path))?)
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn smoothing_text(s: Smoothing) -> String {
    match s {
        Smoothing::None => "none".into(),
        Smoothing::AddAlpha(alpha) => format!("add_alpha:{}", num(alpha)),
    }
}

fn parse_smoothing(raw: &str) -> Option<Smoothing> {
    match raw {
        "none" => Some(Smoothing::None),
        other => other
            .strip_prefix("add_alpha:")
            .and_then(|a| a.parse().ok())
            .map(Smoothing::AddAlpha),
    }
}

const RESULT_COLUMNS: [&str; 10] = [
    "model",
    "step",
    "threshold",
    "tpr",
    "rsr_basic",
    "tpr_relative",
    "rsr_relative",
    "additional_entries",
    "baseline_entries",
    "valid",
];

pub fn sweep_to_string(sweep: &SweepResult) -> String {
    let m = &sweep.meta;
    let join = |xs: Vec<String>| xs.join(",");
    let mut out = format!("# {RESULT_FORMAT} v{FORMAT_VERSION}\n");
    out.push_str(&format!("# enhancement: {}\n", m.enhancement));
    out.push_str(&format!("# seed: {}\n", m.seed));
    out.push_str(&format!("# target_tpr: {}\n", num(m.target_tpr)));
    out.push_str(&format!("# attempts_per_victim: {}\n", m.attempts_per_victim));
    out.push_str(&format!("# rsr_limit_delta: {}\n", num(m.rsr_limit_delta)));
    out.push_str(&format!(
        "# models: {}\n",
        join(m.models.iter().map(|k| k.to_string()).collect())
    ));
    out.push_str(&format!("# steps: {}\n", join(m.steps.iter().map(u32::to_string).collect())));
    out.push_str(&format!("# hashed: {}\n", m.hashed));
    out.push_str(&format!("# coarse_user_agent: {}\n", m.coarse_user_agent));
    out.push_str(&format!("# attack_prior: {}\n", num(m.risk.attack_prior)));
    out.push_str(&format!("# legit_prior: {}\n", num(m.risk.legit_prior)));
    out.push_str(&format!("# smoothing: {}\n", smoothing_text(m.risk.smoothing)));
    out.push_str(&format!("# unseen_floor: {}\n", num(m.risk.unseen_floor)));
    out.push_str(&RESULT_COLUMNS.join(","));
    out.push('\n');
    for r in &sweep.records {
        let row = [
            r.model.to_string(),
            r.step.to_string(),
            num(r.threshold),
            num(r.tpr),
            num(r.rsr_basic),
            num(r.tpr_relative),
            num(r.rsr_relative),
            r.additional_entries.to_string(),
            r.baseline_entries.to_string(),
            r.valid.to_string(),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn sweep_from_str(text: &str) -> Result<SweepResult, IoError> {
    let (header, body) = split_header(text)?;
    header.expect_format(RESULT_FORMAT)?;
    let models = list(header.get("models")?)
        .into_iter()
        .map(|m| m.parse::<AttackerKind>().map_err(IoError::Header))
        .collect::<Result<Vec<_>, _>>()?;
    let steps = list(header.get("steps")?)
        .into_iter()
        .map(|s| s.parse::<u32>().map_err(|_| IoError::Header(format!("invalid step `{s}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    let smoothing = parse_smoothing(header.get("smoothing")?)
        .ok_or_else(|| IoError::Header("invalid `smoothing`".into()))?;
    let meta = SweepMeta {
        enhancement: header
            .get("enhancement")?
            .parse::<EnhancementKind>()
            .map_err(IoError::Header)?,
        seed: header.parse("seed")?,
        target_tpr: header.parse("target_tpr")?,
        attempts_per_victim: header.parse("attempts_per_victim")?,
        rsr_limit_delta: header.parse("rsr_limit_delta")?,
        models,
        steps,
        hashed: header.parse("hashed")?,
        coarse_user_agent: header.parse("coarse_user_agent")?,
        risk: RiskConfig {
            attack_prior: header.parse("attack_prior")?,
            legit_prior: header.parse("legit_prior")?,
            smoothing,
            unseen_floor: header.parse("unseen_floor")?,
        },
    };

    let mut lines = body.lines();
    if lines.next().map(str::trim) != Some(RESULT_COLUMNS.join(",").as_str()) {
        return Err(IoError::Header("unexpected column line".into()));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = i + 1;
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != RESULT_COLUMNS.len() {
            return Err(IoError::Row {
                row,
                message: format!("expected {} fields, found {}", RESULT_COLUMNS.len(), fields.len()),
            });
        }
        let bad = |col: usize| IoError::Row {
            row,
            message: format!("invalid {} `{}`", RESULT_COLUMNS[col], fields[col]),
        };
        let float = |col: usize| fields[col].parse::<f64>().map_err(|_| bad(col));
        records.push(StepRecord {
            model: fields[0].parse().map_err(|_| bad(0))?,
            step: fields[1].parse().map_err(|_| bad(1))?,
            threshold: float(2)?,
            tpr: float(3)?,
            rsr_basic: float(4)?,
            tpr_relative: float(5)?,
            rsr_relative: float(6)?,
            additional_entries: fields[7].parse().map_err(|_| bad(7))?,
            baseline_entries: fields[8].parse().map_err(|_| bad(8))?,
            valid: fields[9].parse().map_err(|_| bad(9))?,
        });
    }
    Ok(SweepResult { meta, records })
}

pub fn write_sweep(path: &Path, sweep: &SweepResult) -> Result<(), IoError> {
    fs::write(path, sweep_to_string(sweep)).map_err(io_err(path))
}

pub fn read_sweep(path: &Path) -> Result<SweepResult, IoError> {
    sweep_from_str(&fs::read_to_string(path).map_err(io_err(path))?)
}

/// Plot-ready series: one row per model and step with both relative metrics.
/// k-anonymity sweeps also carry the storage overhead.
pub fn plot_data_to_string(sweep: &SweepResult) -> String {
    let overhead = sweep.meta.enhancement == EnhancementKind::KAnonymity;
    let mut out = String::from("model,step,tpr_relative,rsr_relative");
    if overhead {
        out.push_str(",additional_entries,increase_to_baseline");
    }
    out.push('\n');
    for model in &sweep.meta.models {
        let mut series = sweep.series(*model);
        series.sort_by_key(|r| r.step);
        for r in series {
            out.push_str(&format!(
                "{},{},{},{}",
                model,
                r.step,
                num(r.tpr_relative),
                num(r.rsr_relative)
            ));
            if overhead {
                out.push_str(&format!(
                    ",{},{}",
                    r.additional_entries,
                    num(r.ledger().increase_ratio())
                ));
            }
            out.push('\n');
        }
    }
    out
}

pub fn export_plot_data(sweep: &SweepResult, path: &Path) -> Result<(), IoError> {
    fs::write(path, plot_data_to_string(sweep)).map_err(io_err(path))
}

const LIMIT_COLUMNS: &str = "scope,metric,step,at_least";

/// Limits in long form; the `all` scope holds the minimum over models.
pub fn limits_to_string(limits: &SweepLimits) -> String {
    let mut out = format!("{LIMIT_COLUMNS}\n");
    let mut line = |scope: &str, metric: &str, l: Limit| {
        out.push_str(&format!("{scope},{metric},{},{}\n", l.step, l.at_least));
    };
    for (model, l) in &limits.per_model {
        line(model.as_str(), "tpr", l.tpr);
        line(model.as_str(), "rsr", l.rsr);
        line(model.as_str(), "combined", l.combined);
    }
    line("all", "combined", limits.overall);
    out
}

pub fn limits_from_str(text: &str) -> Result<SweepLimits, IoError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(LIMIT_COLUMNS) {
        return Err(IoError::Header("unexpected column line".into()));
    }
    let mut per_model: Vec<(AttackerKind, [Option<Limit>; 3])> = Vec::new();
    let mut overall = None;
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = i + 1;
        let bad = |message: String| IoError::Row { row, message };
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", f.len())));
        }
        let limit = Limit {
            step: f[2].parse().map_err(|_| bad(format!("invalid step `{}`", f[2])))?,
            at_least: f[3].parse().map_err(|_| bad(format!("invalid flag `{}`", f[3])))?,
        };
        if f[0] == "all" {
            overall = Some(limit);
            continue;
        }
        let model: AttackerKind = f[0].parse().map_err(bad)?;
        let slot = match f[1] {
            "tpr" => 0,
            "rsr" => 1,
            "combined" => 2,
            other => return Err(bad(format!("unknown metric `{other}`"))),
        };
        match per_model.iter_mut().find(|(m, _)| *m == model) {
            Some((_, slots)) => slots[slot] = Some(limit),
            None => {
                let mut slots = [None; 3];
                slots[slot] = Some(limit);
                per_model.push((model, slots));
            }
        }
    }
    let per_model = per_model
        .into_iter()
        .map(|(m, [tpr, rsr, combined])| match (tpr, rsr, combined) {
            (Some(tpr), Some(rsr), Some(combined)) => Ok((m, crate::eval::Limits { tpr, rsr, combined })),
            _ => Err(IoError::Header(format!("incomplete limits for `{m}`"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepLimits {
        per_model,
        overall: overall.ok_or_else(|| IoError::Header("missing `all` row".into()))?,
    })
}

pub fn write_limits(path: &Path, limits: &SweepLimits) -> Result<(), IoError> {
    fs::write(path, limits_to_string(limits)).map_err(io_err(path))
}

pub fn read_limits(path: &Path) -> Result<SweepLimits, IoError> {
    limits_from_str(&fs::read_to_string(path).map_err(io_err(path))?)
}

pub fn write_snapshot(path: &Path, snapshot: &StoreSnapshot) -> Result<(), IoError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    serde_json::to_writer_pretty(&mut file, snapshot)?;
    file.write_all(b"\n").map_err(io_err(path))
}

pub fn read_snapshot(path: &Path) -> Result<StoreSnapshot, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}
