//! Per-step feature extraction: heart rate variability, skin conductance and
//! smartphone usage.
//!
//! Each step of a participant stream summarises the raw data recorded during
//! `[(k-1)·res, k·res)` and is stamped at `k·res`, the end of its extraction
//! period. Steps where a modality lacks enough data become partial rows, which
//! segmentation later treats as missing.

pub mod eda;
pub mod filter;
pub mod hrv;
pub mod phone;
pub mod spectral;

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

pub use eda::{detect_responses, sc_features, sc_features_with, ScFeatures, ScResponse, ScSeries, ScrConfig};
pub use hrv::{hrv_freq_features, hrv_time_features, BandSpec, HrvFreqFeatures, HrvTimeFeatures, RrSeries};
pub use phone::{phone_features, AppCategory, AppCategoryMap, PhoneEvent, PhoneEventLog, PhoneFeatures};

use crate::data::{parse_timestamp, ParticipantStream, Timestamp};
use crate::error::{Error, Result};

/// Raw recordings of one participant.
#[derive(Debug, Clone, Default)]
pub struct RawRecordings {
    /// `(beat timestamp, rr_ms)`
    pub rr: Vec<(Timestamp, f64)>,
    /// `(timestamp, µS)` at `sc_rate` Hz
    pub sc: Vec<(Timestamp, f64)>,
    pub sc_rate: Option<f64>,
    pub phone: Option<PhoneEventLog>,
}

/// Which modalities contribute columns, and in which order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Modalities {
    pub ecg: bool,
    pub sc: bool,
    pub phone: bool,
}

impl Modalities {
    pub fn feature_names(&self) -> Vec<String> {
        let mut names: Vec<&str> = Vec::new();
        if self.ecg {
            names.extend(HrvTimeFeatures::NAMES);
            names.extend(HrvFreqFeatures::NAMES);
        }
        if self.sc {
            names.extend(ScFeatures::NAMES);
        }
        if self.phone {
            names.extend(PhoneFeatures::NAMES);
        }
        names.into_iter().map(str::to_string).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ExtractConfig {
    pub resolution_minutes: f64,
    pub modalities: Modalities,
    pub bands: BandSpec,
    pub scr: ScrConfig,
    pub apps: AppCategoryMap,
    /// Keep only these columns, in this order; `None` keeps all.
    pub select: Option<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct ExtractedStreams {
    pub feature_names: Vec<String>,
    pub streams: Vec<ParticipantStream>,
    pub dropped_rr: usize,
}

fn in_slot<T: Copy>(data: &[(Timestamp, T)], lo: Timestamp, hi: Timestamp) -> Vec<T> {
    let a = data.partition_point(|(t, _)| *t < lo);
    let b = data.partition_point(|(t, _)| *t < hi);
    data[a..b].iter().map(|(_, v)| *v).collect()
}

/// Turn raw recordings into per-step feature rows.
pub fn extract_streams(
    recordings: &BTreeMap<String, RawRecordings>,
    cfg: &ExtractConfig,
) -> Result<ExtractedStreams> {
    let res_s = (cfg.resolution_minutes * 60.0).round() as i64;
    if res_s <= 0 {
        return Err(Error::invalid("resolution", "must be at least one second"));
    }
    let all_names = cfg.modalities.feature_names();
    let columns: Vec<usize> = match &cfg.select {
        None => (0..all_names.len()).collect(),
        Some(sel) => sel
            .iter()
            .map(|s| {
                all_names
                    .iter()
                    .position(|n| n == s)
                    .ok_or_else(|| Error::invalid("select", format!("unknown feature `{s}`")))
            })
            .collect::<Result<_>>()?,
    };
    let mut streams = Vec::new();
    let mut dropped_rr = 0;
    for (pid, rec) in recordings {
        let mut stamps: Vec<Timestamp> = rec.rr.iter().chain(&rec.sc).map(|(t, _)| *t).collect();
        if let Some(log) = &rec.phone {
            stamps.extend(log.events().iter().map(|(t, _)| *t));
        }
        let (Some(&lo), Some(&hi)) = (stamps.iter().min(), stamps.iter().max()) else {
            continue;
        };
        let mut rows = Vec::new();
        for k in lo.div_euclid(res_s) + 1..=hi.div_euclid(res_s) + 1 {
            let (start, end) = ((k - 1) * res_s, k * res_s);
            let mut values = Vec::with_capacity(all_names.len());
            let mut complete = true;
            if cfg.modalities.ecg {
                let (rr, dropped) = RrSeries::from_raw(&in_slot(&rec.rr, start, end), start);
                dropped_rr += dropped;
                match (hrv_time_features(&rr), hrv_freq_features(&rr, &cfg.bands)) {
                    (Ok(t), Ok(f)) => {
                        values.extend(t.values());
                        values.extend(f.values());
                    }
                    _ => complete = false,
                }
            }
            if cfg.modalities.sc && complete {
                let samples = in_slot(&rec.sc, start, end);
                let rate = rec.sc_rate.unwrap_or(0.0);
                match ScSeries::new(samples, rate).and_then(|s| sc_features_with(&s, &cfg.scr)) {
                    Ok(f) => values.extend(f.values()),
                    Err(_) => complete = false,
                }
            }
            if cfg.modalities.phone && complete {
                let empty = PhoneEventLog::default();
                let log = rec.phone.as_ref().unwrap_or(&empty);
                values.extend(phone_features(log, (start, end), &cfg.apps)?.values());
            }
            let row = complete.then(|| columns.iter().map(|&c| values[c]).collect());
            rows.push((end, row));
        }
        streams.push(ParticipantStream {
            participant_id: pid.clone(),
            rows,
        });
    }
    Ok(ExtractedStreams {
        feature_names: columns.iter().map(|&c| all_names[c].clone()).collect(),
        streams,
        dropped_rr,
    })
}

/// `participant_id,timestamp,rr_ms`
pub fn read_rr_csv(path: &Path, into: &mut BTreeMap<String, RawRecordings>) -> Result<()> {
    let mut rdr = csv::Reader::from_path(path)?;
    for rec in rdr.records() {
        let rec = rec?;
        let rr: f64 = rec
            .get(2)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::format(path.display().to_string(), "expected participant_id,timestamp,rr_ms"))?;
        into.entry(rec[0].to_string())
            .or_default()
            .rr
            .push((parse_timestamp(&rec[1])?, rr));
    }
    for r in into.values_mut() {
        r.rr.sort_by_key(|(t, _)| *t);
    }
    Ok(())
}

/// First line `sample_rate_hz,<rate>`, then `participant_id,timestamp,sc_us` with a header row.
pub fn read_sc_csv(path: &Path, into: &mut BTreeMap<String, RawRecordings>) -> Result<()> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = std::io::BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    let rate: f64 = first
        .trim()
        .strip_prefix("sample_rate_hz,")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::format(path.display().to_string(), "first line must be `sample_rate_hz,<rate>`"))?;
    let mut rdr = csv::Reader::from_reader(reader);
    for rec in rdr.records() {
        let rec = rec?;
        let v: f64 = rec
            .get(2)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::format(path.display().to_string(), "expected participant_id,timestamp,sc_us"))?;
        let entry = into.entry(rec[0].to_string()).or_default();
        entry.sc_rate = Some(rate);
        entry.sc.push((parse_timestamp(&rec[1])?, v));
    }
    for r in into.values_mut() {
        // stable: samples sharing a whole-second stamp keep file order
        r.sc.sort_by_key(|(t, _)| *t);
    }
    Ok(())
}

/// `participant_id,timestamp,kind,field1,field2,...`
pub fn read_phone_csv(path: &Path, into: &mut BTreeMap<String, RawRecordings>) -> Result<()> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let mut per: BTreeMap<String, Vec<(Timestamp, PhoneEvent)>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() < 3 {
            return Err(Error::format(path.display().to_string(), "expected participant_id,timestamp,kind,..."));
        }
        let fields: Vec<&str> = rec.iter().skip(3).collect();
        per.entry(rec[0].to_string())
            .or_default()
            .push((parse_timestamp(&rec[1])?, phone::parse_event(&rec[2], &fields)?));
    }
    for (pid, mut events) in per {
        events.sort_by_key(|(t, _)| *t);
        into.entry(pid).or_default().phone = Some(PhoneEventLog::new(events)?);
    }
    Ok(())
}

/// Write `participant_id,timestamp,<features...>`; partial rows become empty cells.
pub fn write_stream_csv(path: &Path, names: &[String], streams: &[ParticipantStream]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["participant_id".to_string(), "timestamp".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for s in streams {
        for (ts, row) in &s.rows {
            let mut rec = vec![s.participant_id.clone(), crate::data::format_timestamp(*ts)];
            match row {
                Some(v) => rec.extend(v.iter().map(|x| format!("{x}"))),
                None => rec.extend(std::iter::repeat_n(String::new(), names.len())),
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
