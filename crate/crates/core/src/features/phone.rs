//! Smartphone usage aggregates over a time window.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Timestamp;
use crate::error::{Error, Result};

const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppCategory {
    Communication,
    Entertainment,
    Productivity,
    Social,
    Fitness,
}

impl std::str::FromStr for AppCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "com" | "communication" => Ok(AppCategory::Communication),
            "entertain" | "entertainment" => Ok(AppCategory::Entertainment),
            "product" | "production" | "productivity" => Ok(AppCategory::Productivity),
            "social" => Ok(AppCategory::Social),
            "fit" | "fitness" | "health" => Ok(AppCategory::Fitness),
            other => Err(Error::format("app category", format!("unknown category `{other}`"))),
        }
    }
}

/// Direction of a call or SMS: 1 outgoing, 2 incoming.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Outgoing = 1,
    Incoming = 2,
}

impl Direction {
    pub fn from_code(code: i64) -> Result<Self> {
        match code {
            1 => Ok(Direction::Outgoing),
            2 => Ok(Direction::Incoming),
            other => Err(Error::format("call/sms type", format!("expected 1 or 2, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PhoneEvent {
    Accel { x: f64, y: f64, z: f64 },
    AppUse { app: String },
    Call { direction: Direction, duration_s: f64 },
    Sms { direction: Direction },
    Conversation { duration_s: f64 },
    Gps { lat: f64, lon: f64 },
    Screen { duration_s: f64 },
}

/// Time-ordered phone events for one participant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhoneEventLog {
    events: Vec<(Timestamp, PhoneEvent)>,
}

impl PhoneEventLog {
    pub fn new(events: Vec<(Timestamp, PhoneEvent)>) -> Result<Self> {
        if events.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::invalid("events", "timestamps must be non-decreasing"));
        }
        Ok(PhoneEventLog { events })
    }

    pub fn events(&self) -> &[(Timestamp, PhoneEvent)] {
        &self.events
    }
}

/// App name → category. Apps absent from the map only count toward `appall`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AppCategoryMap(HashMap<String, AppCategory>);

impl AppCategoryMap {
    pub fn insert(&mut self, app: impl Into<String>, category: AppCategory) {
        self.0.insert(app.into(), category);
    }

    pub fn get(&self, app: &str) -> Option<AppCategory> {
        self.0.get(app).copied()
    }

    /// Plain-text `app_name,category` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = AppCategoryMap::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (app, cat) = line
                .rsplit_once(',')
                .ok_or_else(|| Error::format("app map", format!("line {}: expected `app_name,category`", n + 1)))?;
            map.insert(app.trim(), cat.parse()?);
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhoneFeatures {
    pub accel_mean: f64,
    pub appall: f64,
    pub app_com: f64,
    pub app_entertain: f64,
    pub app_product: f64,
    pub app_social: f64,
    pub app_fit: f64,
    pub call_log_count_type1: f64,
    pub call_log_count_type2: f64,
    pub call_log_sum_type1: f64,
    pub call_log_sum_type2: f64,
    pub conversation_sum: f64,
    pub distances_sum: f64,
    pub screen_sum: f64,
    pub sms_log_count_type1: f64,
    pub sms_log_count_type2: f64,
}

impl PhoneFeatures {
    pub const NAMES: [&'static str; 16] = [
        "accel_mean",
        "appall",
        "app_com",
        "app_entertain",
        "app_product",
        "app_social",
        "app_fit",
        "call_log_count_type1",
        "call_log_count_type2",
        "call_log_sum_type1",
        "call_log_sum_type2",
        "conversation_sum",
        "distances_sum",
        "screen_sum",
        "sms_log_count_type1",
        "sms_log_count_type2",
    ];

    pub fn values(&self) -> [f64; 16] {
        [
            self.accel_mean,
            self.appall,
            self.app_com,
            self.app_entertain,
            self.app_product,
            self.app_social,
            self.app_fit,
            self.call_log_count_type1,
            self.call_log_count_type2,
            self.call_log_sum_type1,
            self.call_log_sum_type2,
            self.conversation_sum,
            self.distances_sum,
            self.screen_sum,
            self.sms_log_count_type1,
            self.sms_log_count_type2,
        ]
    }
}

/// Great-circle distance in metres.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().asin()
}

/// Aggregate events with `start <= t < end`.
pub fn phone_features(
    log: &PhoneEventLog,
    window: (Timestamp, Timestamp),
    apps: &AppCategoryMap,
) -> Result<PhoneFeatures> {
    let (start, end) = window;
    if end <= start {
        return Err(Error::invalid("window", "window must be non-empty"));
    }
    let mut f = PhoneFeatures::default();
    let mut accel = (0.0, 0usize);
    let mut used: BTreeSet<&str> = BTreeSet::new();
    let mut last_fix: Option<(f64, f64)> = None;
    for (_, ev) in log.events.iter().filter(|(t, _)| (start..end).contains(t)) {
        match ev {
            PhoneEvent::Accel { x, y, z } => {
                accel.0 += (x * x + y * y + z * z).sqrt();
                accel.1 += 1;
            }
            PhoneEvent::AppUse { app } => {
                used.insert(app);
            }
            PhoneEvent::Call { direction, duration_s } => match direction {
                Direction::Outgoing => {
                    f.call_log_count_type1 += 1.0;
                    f.call_log_sum_type1 += duration_s;
                }
                Direction::Incoming => {
                    f.call_log_count_type2 += 1.0;
                    f.call_log_sum_type2 += duration_s;
                }
            },
            PhoneEvent::Sms { direction } => match direction {
                Direction::Outgoing => f.sms_log_count_type1 += 1.0,
                Direction::Incoming => f.sms_log_count_type2 += 1.0,
            },
            PhoneEvent::Conversation { duration_s } => f.conversation_sum += duration_s,
            PhoneEvent::Gps { lat, lon } => {
                if let Some((plat, plon)) = last_fix {
                    f.distances_sum += haversine_m(plat, plon, *lat, *lon);
                }
                last_fix = Some((*lat, *lon));
            }
            PhoneEvent::Screen { duration_s } => f.screen_sum += duration_s,
        }
    }
    if accel.1 > 0 {
        f.accel_mean = accel.0 / accel.1 as f64;
    }
    f.appall = used.len() as f64;
    for app in used {
        match apps.get(app) {
            Some(AppCategory::Communication) => f.app_com += 1.0,
            Some(AppCategory::Entertainment) => f.app_entertain += 1.0,
            Some(AppCategory::Productivity) => f.app_product += 1.0,
            Some(AppCategory::Social) => f.app_social += 1.0,
            Some(AppCategory::Fitness) => f.app_fit += 1.0,
            None => {}
        }
    }
    Ok(f)
}

/// Parse one phone-log row's `kind` and trailing fields.
pub fn parse_event(kind: &str, fields: &[&str]) -> Result<PhoneEvent> {
    let num = |i: usize| -> Result<f64> {
        fields
            .get(i)
            .and_then(|s| s.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::format("phone log", format!("`{kind}` needs numeric field {}", i + 1)))
    };
    let code = |i: usize| -> Result<Direction> { Direction::from_code(num(i)? as i64) };
    Ok(match kind.trim() {
        "accel" => PhoneEvent::Accel {
            x: num(0)?,
            y: num(1)?,
            z: num(2)?,
        },
        "app_use" => PhoneEvent::AppUse {
            app: fields
                .first()
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::format("phone log", "`app_use` needs an app name"))?,
        },
        "call" => PhoneEvent::Call {
            direction: code(0)?,
            duration_s: num(1)?,
        },
        "sms" => PhoneEvent::Sms { direction: code(0)? },
        "conversation" => PhoneEvent::Conversation { duration_s: num(0)? },
        "gps" => PhoneEvent::Gps {
            lat: num(0)?,
            lon: num(1)?,
        },
        "screen" => PhoneEvent::Screen { duration_s: num(0)? },
        other => return Err(Error::format("phone log", format!("unknown event kind `{other}`"))),
    })
}
