//! Sequence windows, labels, datasets and participant-level splits.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngSeed;

/// Seconds since the Unix epoch, UTC.
pub type Timestamp = i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryLabel {
    NonStressed = 0,
    Stressed = 1,
}

impl BinaryLabel {
    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn from_bool(stressed: bool) -> Self {
        if stressed {
            BinaryLabel::Stressed
        } else {
            BinaryLabel::NonStressed
        }
    }

    pub fn is_stressed(self) -> bool {
        self == BinaryLabel::Stressed
    }
}

/// How raw self-report levels map onto the binary stress label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BinarizationRule {
    /// `raw <= threshold` is non-stressed, anything above is stressed.
    Threshold { threshold: i64 },
    /// Levels above the participant's own mean are stressed.
    PerParticipantZscore,
}

impl BinarizationRule {
    pub fn threshold(threshold: i64) -> Self {
        BinarizationRule::Threshold { threshold }
    }
}

impl std::str::FromStr for BinarizationRule {
    type Err = Error;

    /// `threshold:<n>` or `zscore`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("zscore") {
            return Ok(BinarizationRule::PerParticipantZscore);
        }
        let n = s
            .strip_prefix("threshold:")
            .and_then(|v| v.trim().parse::<i64>().ok())
            .ok_or_else(|| Error::invalid("rule", format!("expected `threshold:<n>` or `zscore`, got `{s}`")))?;
        Ok(BinarizationRule::threshold(n))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binarized {
    pub labels: Vec<BinaryLabel>,
    /// `[non_stressed, stressed]`
    pub class_counts: [usize; 2],
}

/// Map raw self-report levels onto binary labels.
pub fn binarize(raw_levels: &[(String, i64)], rule: BinarizationRule) -> Result<Binarized> {
    if raw_levels.is_empty() {
        return Err(Error::invalid("raw_levels", "no levels to binarize"));
    }
    let labels: Vec<BinaryLabel> = match rule {
        BinarizationRule::Threshold { threshold } => raw_levels
            .iter()
            .map(|(_, level)| BinaryLabel::from_bool(*level > threshold))
            .collect(),
        BinarizationRule::PerParticipantZscore => {
            let mut per: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for (pid, level) in raw_levels {
                per.entry(pid.as_str()).or_default().push(*level as f64);
            }
            let mut means = HashMap::new();
            for (pid, levels) in &per {
                let first = levels[0];
                if levels.iter().all(|&l| l == first) {
                    return Err(Error::DegenerateParticipant((*pid).to_string()));
                }
                means.insert(*pid, levels.iter().sum::<f64>() / levels.len() as f64);
            }
            // z > 0 exactly when the level exceeds the participant mean
            raw_levels
                .iter()
                .map(|(pid, level)| BinaryLabel::from_bool(*level as f64 > means[pid.as_str()]))
                .collect()
        }
    };
    let stressed = labels.iter().filter(|l| l.is_stressed()).count();
    Ok(Binarized {
        class_counts: [labels.len() - stressed, stressed],
        labels,
    })
}

/// One participant-window: a `steps × features` matrix ending at `t_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceWindow {
    pub participant_id: String,
    pub t_end: Timestamp,
    pub features: Array2<f64>,
    pub label: Option<BinaryLabel>,
    pub raw_level: Option<i64>,
}

impl SequenceWindow {
    pub fn steps(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_count(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_labeled(&self) -> bool {
        self.label.is_some()
    }
}

/// Participant-keyed collection of equally shaped windows.
///
/// The labeled/unlabeled partition is implied by each window's `label`, so it
/// is disjoint and covering by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    windows: Vec<SequenceWindow>,
    feature_names: Vec<String>,
    steps: usize,
    step_minutes: f64,
    rule: Option<BinarizationRule>,
}

impl Dataset {
    pub fn new(
        windows: Vec<SequenceWindow>,
        feature_names: Vec<String>,
        steps: usize,
        step_minutes: f64,
        rule: Option<BinarizationRule>,
    ) -> Result<Self> {
        if steps == 0 || feature_names.is_empty() {
            return Err(Error::invalid("dataset", "steps and feature count must be positive"));
        }
        if !(step_minutes > 0.0) {
            return Err(Error::invalid("step_minutes", "resolution must be positive"));
        }
        for (i, w) in windows.iter().enumerate() {
            if w.features.dim() != (steps, feature_names.len()) {
                return Err(Error::DimensionMismatch {
                    context: "dataset window",
                    expected: format!("{}x{}", steps, feature_names.len()),
                    actual: format!("{}x{} (window {i})", w.steps(), w.feature_count()),
                });
            }
            if w.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("features of window {i}")));
            }
            if w.raw_level.is_some() && w.label.is_none() {
                return Err(Error::invalid("raw_level", format!("window {i} has a raw level but no label")));
            }
            if let (Some(BinarizationRule::Threshold { threshold }), Some(level), Some(label)) =
                (rule, w.raw_level, w.label)
            {
                if BinaryLabel::from_bool(level > threshold) != label {
                    return Err(Error::invalid(
                        "label",
                        format!("window {i}: label {label:?} disagrees with raw level {level}"),
                    ));
                }
            }
        }
        if rule == Some(BinarizationRule::PerParticipantZscore) {
            check_zscore_consistency(&windows)?;
        }
        Ok(Dataset {
            windows,
            feature_names,
            steps,
            step_minutes,
            rule,
        })
    }

    pub fn windows(&self) -> &[SequenceWindow] {
        &self.windows
    }

    pub fn window(&self, i: usize) -> &SequenceWindow {
        &self.windows[i]
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    pub fn step_minutes(&self) -> f64 {
        self.step_minutes
    }

    pub fn rule(&self) -> Option<BinarizationRule> {
        self.rule
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.windows[i].is_labeled()).collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.windows[i].is_labeled()).collect()
    }

    /// Sorted, de-duplicated participant ids.
    pub fn participants(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.windows.iter().map(|w| w.participant_id.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// Persist as `meta.json` + `windows.bin` + `index.csv` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = DatasetMeta {
            format_version: 1,
            feature_names: self.feature_names.clone(),
            steps: self.steps,
            features: self.feature_count(),
            step_minutes: self.step_minutes,
            rule: self.rule,
            window_count: self.len(),
        };
        let meta_path = dir.join("meta.json");
        fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&meta_path, e))?;

        let bin_path = dir.join("windows.bin");
        let file = fs::File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let mut out = BufWriter::new(file);
        for w in &self.windows {
            for v in w.features.iter() {
                out.write_all(&v.to_le_bytes()).map_err(|e| Error::io(&bin_path, e))?;
            }
        }
        out.flush().map_err(|e| Error::io(&bin_path, e))?;

        let mut idx = csv::Writer::from_path(dir.join("index.csv"))?;
        idx.write_record(["window_id", "participant_id", "t_end", "label", "raw_level"])?;
        for (i, w) in self.windows.iter().enumerate() {
            idx.write_record([
                i.to_string(),
                w.participant_id.clone(),
                format_timestamp(w.t_end),
                w.label.map(|l| (l as u8).to_string()).unwrap_or_default(),
                w.raw_level.map(|l| l.to_string()).unwrap_or_default(),
            ])?;
        }
        idx.flush().map_err(|e| Error::io(dir.join("index.csv"), e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DatasetMeta = serde_json::from_str(&text)?;
        if meta.features != meta.feature_names.len() {
            return Err(Error::format("meta.json", "feature count disagrees with feature_names"));
        }
        let bin_path = dir.join("windows.bin");
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let per_window = meta.steps * meta.features;
        if bytes.len() != meta.window_count * per_window * 8 {
            return Err(Error::format(
                "windows.bin",
                format!("expected {} bytes, found {}", meta.window_count * per_window * 8, bytes.len()),
            ));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();

        let mut rdr = csv::Reader::from_path(dir.join("index.csv"))?;
        let mut windows = Vec::with_capacity(meta.window_count);
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() < 4 {
                return Err(Error::format("index.csv", format!("row {i} has {} columns", rec.len())));
            }
            let id: usize = rec[0]
                .parse()
                .map_err(|_| Error::format("index.csv", format!("bad window id `{}`", &rec[0])))?;
            if id != i || i >= meta.window_count {
                return Err(Error::format("index.csv", format!("window id {id} out of order")));
            }
            let label = match rec[3].trim() {
                "" => None,
                "0" => Some(BinaryLabel::NonStressed),
                "1" => Some(BinaryLabel::Stressed),
                other => return Err(Error::format("index.csv", format!("bad label `{other}`"))),
            };
            let raw_level = match rec.get(4).map(str::trim) {
                None | Some("") => None,
                Some(s) => Some(
                    s.parse()
                        .map_err(|_| Error::format("index.csv", format!("bad raw level `{s}`")))?,
                ),
            };
            let chunk = values[i * per_window..(i + 1) * per_window].to_vec();
            windows.push(SequenceWindow {
                participant_id: rec[1].to_string(),
                t_end: parse_timestamp(&rec[2])?,
                features: Array2::from_shape_vec((meta.steps, meta.features), chunk)
                    .expect("shape checked above"),
                label,
                raw_level,
            });
        }
        if windows.len() != meta.window_count {
            return Err(Error::format(
                "index.csv",
                format!("{} rows for {} windows", windows.len(), meta.window_count),
            ));
        }
        Dataset::new(windows, meta.feature_names, meta.steps, meta.step_minutes, meta.rule)
    }
}

fn check_zscore_consistency(windows: &[SequenceWindow]) -> Result<()> {
    // per participant, every non-stressed raw level must sit below every stressed one
    let mut bounds: HashMap<&str, (i64, i64)> = HashMap::new();
    for w in windows {
        if let (Some(level), Some(label)) = (w.raw_level, w.label) {
            let e = bounds.entry(w.participant_id.as_str()).or_insert((i64::MIN, i64::MAX));
            match label {
                BinaryLabel::NonStressed => e.0 = e.0.max(level),
                BinaryLabel::Stressed => e.1 = e.1.min(level),
            }
        }
    }
    for (pid, (max_neg, min_pos)) in bounds {
        if max_neg >= min_pos {
            return Err(Error::invalid(
                "label",
                format!("participant `{pid}`: labels are not a per-participant threshold of raw levels"),
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    format_version: u32,
    feature_names: Vec<String>,
    steps: usize,
    features: usize,
    step_minutes: f64,
    rule: Option<BinarizationRule>,
    window_count: usize,
}

/// Participant-level fold assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub fold_count: usize,
    pub assignments: BTreeMap<String, usize>,
}

impl Split {
    pub fn fold_of(&self, participant: &str) -> Option<usize> {
        self.assignments.get(participant).copied()
    }

    pub fn participants_in(&self, fold: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(p, _)| p.as_str())
            .collect()
    }

    fn check_fold(&self, fold: usize) -> Result<()> {
        if fold >= self.fold_count {
            return Err(Error::invalid("fold", format!("fold {fold} out of range 0..{}", self.fold_count)));
        }
        Ok(())
    }

    /// Indices of windows whose participant is outside `fold`.
    pub fn train_indices(&self, dataset: &Dataset, fold: usize) -> Result<Vec<usize>> {
        self.check_fold(fold)?;
        Ok((0..dataset.len())
            .filter(|&i| {
                self.fold_of(&dataset.window(i).participant_id)
                    .is_some_and(|f| f != fold)
            })
            .collect())
    }

    /// Indices of windows whose participant belongs to `fold`.
    pub fn validation_indices(&self, dataset: &Dataset, fold: usize) -> Result<Vec<usize>> {
        self.check_fold(fold)?;
        Ok((0..dataset.len())
            .filter(|&i| self.fold_of(&dataset.window(i).participant_id) == Some(fold))
            .collect())
    }
}

/// Shuffle participants with the seed and deal them round-robin into folds.
pub fn make_splits(dataset: &Dataset, fold_count: usize, seed: RngSeed) -> Result<Split> {
    split_participants(&dataset.participants(), fold_count, seed)
}

pub fn split_participants(participants: &[String], fold_count: usize, seed: RngSeed) -> Result<Split> {
    if fold_count < 2 {
        return Err(Error::invalid("fold_count", "at least 2 folds are required"));
    }
    let mut ids: Vec<String> = participants.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if ids.len() < fold_count {
        return Err(Error::InsufficientData {
            what: "split",
            reason: format!("{} participants for {fold_count} folds", ids.len()),
        });
    }
    ids.shuffle(&mut seed.derive_rng(&[0x5971]));
    let assignments = ids
        .into_iter()
        .enumerate()
        .map(|(i, p)| (p, i % fold_count))
        .collect();
    Ok(Split {
        fold_count,
        assignments,
    })
}

/// Per-step feature rows for one participant. `None` marks a partial row.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantStream {
    pub participant_id: String,
    pub rows: Vec<(Timestamp, Option<Vec<f64>>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelEvent {
    pub participant_id: String,
    pub timestamp: Timestamp,
    pub raw_level: i64,
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub dataset: Dataset,
    /// Candidate windows discarded because a step was missing.
    pub dropped: usize,
}

/// Cut participant streams into fixed-length windows.
///
/// Steps live on the absolute grid `floor(timestamp / resolution)`. A label at
/// time `t` produces one labeled window whose last step is the slot holding
/// `t`; every other complete run of `length` slots becomes an unlabeled window
/// (stride one step). Windows touching an empty or partial slot are dropped.
pub fn segment(
    streams: &[ParticipantStream],
    feature_names: Vec<String>,
    length: usize,
    resolution_minutes: f64,
    labels: &[LabelEvent],
    rule: BinarizationRule,
) -> Result<Segmentation> {
    if length == 0 {
        return Err(Error::invalid("length", "window length must be positive"));
    }
    if !(resolution_minutes > 0.0) {
        return Err(Error::invalid("resolution", "must be positive"));
    }
    let res_s = resolution_minutes * 60.0;
    let f = feature_names.len();
    let slot_of = |ts: Timestamp| (ts as f64 / res_s).floor() as i64;

    let binarized = if labels.is_empty() {
        Vec::new()
    } else {
        let raw: Vec<(String, i64)> = labels
            .iter()
            .map(|l| (l.participant_id.clone(), l.raw_level))
            .collect();
        binarize(&raw, rule)?.labels
    };

    let mut windows = Vec::new();
    let mut dropped = 0usize;
    let mut ordered: Vec<&ParticipantStream> = streams.iter().collect();
    ordered.sort_by(|a, b| a.participant_id.cmp(&b.participant_id));
    for stream in ordered {
        for w in stream.rows.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::invalid(
                    "stream",
                    format!("timestamps of `{}` are not strictly increasing", stream.participant_id),
                ));
            }
        }
        let mut slots: BTreeMap<i64, Option<&Vec<f64>>> = BTreeMap::new();
        for (ts, row) in &stream.rows {
            let complete = row.as_ref().filter(|r| r.len() == f && r.iter().all(|v| v.is_finite()));
            slots.insert(slot_of(*ts), complete);
        }
        let (first, last) = match (slots.keys().next(), slots.keys().next_back()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => continue,
        };
        let gather = |end: i64| -> Option<(Array2<f64>, Timestamp)> {
            let mut m = Array2::zeros((length, f));
            let mut last_ts = 0;
            for (r, slot) in (end + 1 - length as i64..=end).enumerate() {
                let row = (*slots.get(&slot)?)?;
                m.row_mut(r).iter_mut().zip(row).for_each(|(d, s)| *d = *s);
                last_ts = slot;
            }
            Some((m, last_ts))
        };
        let row_ts: HashMap<i64, Timestamp> = stream.rows.iter().map(|(ts, _)| (slot_of(*ts), *ts)).collect();

        let mut labeled_slots = BTreeSet::new();
        let mut found = Vec::new();
        for (ev, label) in labels.iter().zip(&binarized) {
            if ev.participant_id != stream.participant_id {
                continue;
            }
            let end = slot_of(ev.timestamp);
            labeled_slots.insert(end);
            match gather(end) {
                Some((m, _)) => found.push(SequenceWindow {
                    participant_id: stream.participant_id.clone(),
                    t_end: ev.timestamp,
                    features: m,
                    label: Some(*label),
                    raw_level: Some(ev.raw_level),
                }),
                None => dropped += 1,
            }
        }
        for end in first + length as i64 - 1..=last {
            if labeled_slots.contains(&end) {
                continue;
            }
            match gather(end) {
                Some((m, slot)) => found.push(SequenceWindow {
                    participant_id: stream.participant_id.clone(),
                    t_end: row_ts[&slot],
                    features: m,
                    label: None,
                    raw_level: None,
                }),
                None => dropped += 1,
            }
        }
        found.sort_by_key(|w| w.t_end);
        windows.extend(found);
    }
    let dataset = Dataset::new(windows, feature_names, length, resolution_minutes, Some(rule))?;
    Ok(Segmentation { dataset, dropped })
}

pub fn parse_timestamp(s: &str) -> Result<Timestamp> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(naive.and_utc().timestamp());
        }
    }
    Err(Error::format("timestamp", format!("`{s}` is not ISO-8601")))
}

pub fn format_timestamp(ts: Timestamp) -> String {
    DateTime::<Utc>::from_timestamp(ts, 0)
        .map(|dt| dt.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| ts.to_string())
}

/// Read `participant_id,timestamp,<feature...>`. Empty cells make the row partial.
pub fn read_stream_csv(path: &Path) -> Result<(Vec<String>, Vec<ParticipantStream>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "participant_id" || &headers[1] != "timestamp" {
        return Err(Error::format(
            path.display().to_string(),
            "header must be `participant_id,timestamp,<feature_1>,...`",
        ));
    }
    let names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    let mut by_pid: BTreeMap<String, Vec<(Timestamp, Option<Vec<f64>>)>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let ts = parse_timestamp(&rec[1])?;
        let row: Option<Vec<f64>> = rec.iter().skip(2).map(|c| c.trim().parse::<f64>().ok()).collect();
        let row = row.filter(|r| r.len() == names.len());
        by_pid.entry(rec[0].to_string()).or_default().push((ts, row));
    }
    let streams = by_pid
        .into_iter()
        .map(|(participant_id, rows)| ParticipantStream { participant_id, rows })
        .collect();
    Ok((names, streams))
}

/// Read `participant_id,timestamp,raw_level`.
pub fn read_labels_csv(path: &Path) -> Result<Vec<LabelEvent>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() < 3 {
            return Err(Error::format(path.display().to_string(), "expected participant_id,timestamp,raw_level"));
        }
        out.push(LabelEvent {
            participant_id: rec[0].to_string(),
            timestamp: parse_timestamp(&rec[1])?,
            raw_level: rec[2]
                .trim()
                .parse()
                .map_err(|_| Error::format("label file", format!("bad raw level `{}`", &rec[2])))?,
        });
    }
    Ok(out)
}
