//! Trade events, per-day series and the raw-record cleaning pipeline.
//!
//! Raw trades are reduced to one [`TradeEvent`] per market order: the order
//! sign comes from the trade price relative to the pre-trade mid, and the
//! label records whether the mid moved before the next event. Mid-prices are
//! kept as integer half-ticks until output so that "the mid did not move" is
//! an exact integer comparison.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{DateTime, NaiveDate};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MS_PER_DAY: i64 = 86_400_000;

/// Direction of the market order that triggered a trade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Buy,
    Sell,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Buy => 1.0,
            Sign::Sell => -1.0,
        }
    }

    pub fn as_int(self) -> i8 {
        match self {
            Sign::Buy => 1,
            Sign::Sell => -1,
        }
    }

    pub fn from_int(v: i64) -> Result<Self> {
        match v {
            1 => Ok(Sign::Buy),
            -1 => Ok(Sign::Sell),
            other => Err(Error::InvalidInput(format!("sign must be +1 or -1, got {other}"))),
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Sign::Buy => Sign::Sell,
            Sign::Sell => Sign::Buy,
        }
    }
}

/// Event type: `N` when the mid stayed put until the next event, `C` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "n")]
    N,
    #[serde(rename = "c")]
    C,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::N, Label::C];

    pub fn index(self) -> usize {
        match self {
            Label::N => 0,
            Label::C => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::N => "n",
            Label::C => "c",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(Label::N),
            "c" => Ok(Label::C),
            other => Err(Error::InvalidInput(format!("unknown label `{other}`"))),
        }
    }
}

/// One market order after cleaning and merging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeEvent {
    /// Milliseconds since the start of the trading day.
    pub timestamp: i64,
    pub sign: Sign,
    pub label: Label,
    /// Natural log of the pre-trade mid-price.
    pub log_mid: f64,
    /// Log-return from this event's mid to the next one.
    pub ret: f64,
    /// Unsigned volume.
    pub volume: f64,
}

impl TradeEvent {
    pub fn signed_volume(&self) -> f64 {
        self.sign.value() * self.volume
    }
}

/// All events of one trading day, in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct DaySeries {
    pub date: NaiveDate,
    pub events: Vec<TradeEvent>,
}

impl DaySeries {
    pub fn new(date: NaiveDate, events: Vec<TradeEvent>) -> Self {
        Self { date, events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn signs(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.sign.value()).collect()
    }

    pub fn returns(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.ret).collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.events.iter().map(|e| e.label).collect()
    }

    pub fn log_mids(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.log_mid).collect()
    }

    pub fn signed_volumes(&self) -> Vec<f64> {
        self.events.iter().map(TradeEvent::signed_volume).collect()
    }

    /// Indicator series `1[label(t) == label]`.
    pub fn indicator(&self, label: Label) -> Vec<f64> {
        self.events
            .iter()
            .map(|e| if e.label == label { 1.0 } else { 0.0 })
            .collect()
    }

    /// Label-masked sign series `1[label(t) == label] * sign(t)`.
    pub fn masked_signs(&self, label: Label) -> Vec<f64> {
        self.events
            .iter()
            .map(|e| if e.label == label { e.sign.value() } else { 0.0 })
            .collect()
    }

    /// Log-mid path with one extra point: the mid after the last event.
    pub fn mid_path(&self) -> Vec<f64> {
        let mut path = self.log_mids();
        if let Some(last) = self.events.last() {
            path.push(last.log_mid + last.ret);
        }
        path
    }

    /// Checks the label/return consistency: `n` iff the return is exactly zero,
    /// and an `n` event leaves the stored next mid bit-identical.
    pub fn check_labels(&self) -> Result<()> {
        for (i, e) in self.events.iter().enumerate() {
            let fail = |reason: &str| Error::LabelInvariant {
                date: self.date.to_string(),
                index: i,
                reason: reason.to_string(),
            };
            match e.label {
                Label::N if e.ret != 0.0 => return Err(fail("label n with nonzero return")),
                Label::C if e.ret == 0.0 => return Err(fail("label c with zero return")),
                _ => {}
            }
            if e.label == Label::N {
                if let Some(next) = self.events.get(i + 1) {
                    if next.log_mid.to_bits() != e.log_mid.to_bits() {
                        return Err(fail("label n but next mid differs"));
                    }
                }
            }
        }
        Ok(())
    }

    fn check_basic(&self) -> Result<()> {
        for (i, e) in self.events.iter().enumerate() {
            if !(e.volume >= 0.0) || !e.log_mid.is_finite() || !e.ret.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "day {} event {i}: non-finite field or negative volume",
                    self.date
                )));
            }
        }
        Ok(())
    }
}

/// Cleaned data for one instrument.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentData {
    pub instrument_id: String,
    pub days: Vec<DaySeries>,
    /// Number of events on the shortest day minus one.
    pub max_lag: usize,
}

impl InstrumentData {
    pub fn new(instrument_id: impl Into<String>, days: Vec<DaySeries>) -> Result<Self> {
        let shortest = days
            .iter()
            .map(DaySeries::len)
            .min()
            .ok_or_else(|| Error::Empty("no trading days".into()))?;
        if shortest == 0 {
            return Err(Error::Empty("a day without events".into()));
        }
        Ok(Self {
            instrument_id: instrument_id.into(),
            days,
            max_lag: shortest - 1,
        })
    }

    pub fn n_events(&self) -> usize {
        self.days.iter().map(DaySeries::len).sum()
    }

    /// Validates every day; `strict` additionally enforces the label invariant.
    pub fn validate(&self, strict: bool) -> Result<()> {
        for day in &self.days {
            day.check_basic()?;
            if strict {
                day.check_labels()?;
            }
        }
        Ok(())
    }

    /// True when every day satisfies the label/return invariant.
    pub fn labels_consistent(&self) -> bool {
        self.days.iter().all(|d| d.check_labels().is_ok())
    }
}

/// Which half of the odd/even day partition to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// First, third, ... day (0-based indices 0, 2, ...).
    Odd,
    /// Second, fourth, ... day.
    Even,
    /// All days, in-sample.
    None,
}

impl Split {
    pub fn complement(self) -> Split {
        match self {
            Split::Odd => Split::Even,
            Split::Even => Split::Odd,
            Split::None => Split::None,
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "odd" => Ok(Split::Odd),
            "even" => Ok(Split::Even),
            "none" => Ok(Split::None),
            other => Err(Error::InvalidInput(format!("unknown split `{other}`"))),
        }
    }
}

/// Partitions days by index parity: `(days 0, 2, 4..., days 1, 3, 5...)`.
pub fn split_odd_even(data: &InstrumentData) -> Result<(InstrumentData, InstrumentData)> {
    if data.days.len() < 2 {
        return Err(Error::SingleDay);
    }
    let (odd, even): (Vec<_>, Vec<_>) = data
        .days
        .iter()
        .cloned()
        .enumerate()
        .partition(|(i, _)| i % 2 == 0);
    let strip = |v: Vec<(usize, DaySeries)>| v.into_iter().map(|(_, d)| d).collect::<Vec<_>>();
    Ok((
        InstrumentData::new(data.instrument_id.clone(), strip(odd))?,
        InstrumentData::new(data.instrument_id.clone(), strip(even))?,
    ))
}

/// Selects one half of the odd/even partition, or everything for [`Split::None`].
pub fn select_split(data: &InstrumentData, split: Split) -> Result<InstrumentData> {
    match split {
        Split::None => Ok(data.clone()),
        Split::Odd => Ok(split_odd_even(data)?.0),
        Split::Even => Ok(split_odd_even(data)?.1),
    }
}

/// Microstructural parameter: continuations over twice the alternations of
/// consecutive nonzero price moves, counted within days.
pub fn compute_eta(data: &InstrumentData) -> Result<f64> {
    let mut continuations = 0u64;
    let mut alternations = 0u64;
    let mut moves = 0u64;
    for day in &data.days {
        let mut prev: Option<bool> = None;
        for e in day.events.iter().filter(|e| e.ret != 0.0) {
            moves += 1;
            let up = e.ret > 0.0;
            if let Some(p) = prev {
                if p == up {
                    continuations += 1;
                } else {
                    alternations += 1;
                }
            }
            prev = Some(up);
        }
    }
    if moves < 2 {
        return Err(Error::Undefined(format!(
            "eta needs at least two price moves, found {moves}"
        )));
    }
    if alternations == 0 {
        return Err(Error::Undefined("eta: no alternating price moves".into()));
    }
    Ok(continuations as f64 / (2.0 * alternations as f64))
}

// ---------------------------------------------------------------------------
// Raw trade ingestion
// ---------------------------------------------------------------------------

fn default_instrument() -> String {
    "UNKNOWN".into()
}
fn default_tick() -> f64 {
    0.01
}
fn default_trim() -> u32 {
    30
}
fn default_session_fraction() -> f64 {
    0.75
}
fn default_flags() -> Vec<String> {
    vec!["I".into(), "X".into()]
}

/// Cleaning configuration for [`parse_trades`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    #[serde(default = "default_instrument")]
    pub instrument_id: String,
    /// Price grid spacing; prices must be multiples of half a tick.
    #[serde(default = "default_tick")]
    pub tick_size: f64,
    /// Minutes discarded after the open and before the close.
    #[serde(default = "default_trim")]
    pub trim_minutes: u32,
    /// Session open, minutes after local midnight. Inferred per day if absent.
    #[serde(default)]
    pub session_open_minutes: Option<u32>,
    /// Session close, minutes after local midnight.
    #[serde(default)]
    pub session_close_minutes: Option<u32>,
    /// Days whose trading span is below this fraction of a full session are dropped.
    #[serde(default = "default_session_fraction")]
    pub min_session_fraction: f64,
    /// Offset from UTC used to assign epoch timestamps to calendar days.
    #[serde(default)]
    pub utc_offset_minutes: i32,
    /// Flag tokens marking a record as irregular.
    #[serde(default = "default_flags")]
    pub irregular_flags: Vec<String>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            instrument_id: default_instrument(),
            tick_size: default_tick(),
            trim_minutes: default_trim(),
            session_open_minutes: None,
            session_close_minutes: None,
            min_session_fraction: default_session_fraction(),
            utc_offset_minutes: 0,
            irregular_flags: default_flags(),
        }
    }
}

/// Counts of everything the cleaning pipeline discarded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records: u64,
    pub unparseable: u64,
    pub irregular: u64,
    pub at_mid: u64,
    pub trimmed: u64,
    pub merged: u64,
    pub mixed_sign_groups: u64,
    pub shortened_days: Vec<String>,
    pub empty_days: Vec<String>,
    pub days: u64,
    pub events: u64,
}

#[derive(Debug, Clone, Copy)]
struct RawRecord {
    ts: i64,
    /// Trade price in half-ticks.
    price2: i64,
    /// Mid-price in half-ticks (bid ticks + ask ticks).
    mid2: i64,
    volume: f64,
}

fn to_grid(value: f64, unit: f64) -> Option<i64> {
    let x = value / unit;
    let r = x.round();
    if (x - r).abs() <= 1e-6 * r.abs().max(1.0) && r.abs() < 9e15 {
        Some(r as i64)
    } else {
        None
    }
}

/// Parses, cleans and labels raw trade records.
///
/// The input is CSV with header columns `timestamp_ms` (epoch milliseconds),
/// `price`, `bid`, `ask`, `volume`, `flags`. Rejected records are counted in
/// the returned report rather than failing the run.
pub fn parse_trades<R: Read>(
    reader: R,
    config: &IngestConfig,
) -> Result<(InstrumentData, IngestReport)> {
    if !(config.tick_size > 0.0 && config.tick_size.is_finite()) {
        return Err(Error::InvalidInput("tick_size must be positive".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (c_ts, c_price, c_bid, c_ask, c_vol, c_flags) = (
        col("timestamp_ms")?,
        col("price")?,
        col("bid")?,
        col("ask")?,
        col("volume")?,
        col("flags")?,
    );
    let irregular: HashSet<&str> = config.irregular_flags.iter().map(String::as_str).collect();
    let offset_ms = i64::from(config.utc_offset_minutes) * 60_000;

    let mut report = IngestReport::default();
    // Records per day, in input order; quotes of every regular record are kept
    // for the end-of-day mid.
    let mut by_day: BTreeMap<NaiveDate, Vec<RawRecord>> = BTreeMap::new();

    for row in rdr.records() {
        report.records += 1;
        let Ok(row) = row else {
            report.unparseable += 1;
            continue;
        };
        let field = |i: usize| row.get(i).unwrap_or("");
        let parsed = (|| {
            let ts: i64 = field(c_ts).parse().ok()?;
            let price: f64 = field(c_price).parse().ok()?;
            let bid: f64 = field(c_bid).parse().ok()?;
            let ask: f64 = field(c_ask).parse().ok()?;
            let volume: f64 = field(c_vol).parse().ok()?;
            Some((ts, price, bid, ask, volume))
        })();
        let Some((ts, price, bid, ask, volume)) = parsed else {
            report.unparseable += 1;
            continue;
        };
        let flagged = field(c_flags)
            .split(|c: char| c == '|' || c == ';' || c.is_whitespace())
            .any(|tok| !tok.is_empty() && irregular.contains(tok));
        let finite = [price, bid, ask, volume].iter().all(|v| v.is_finite());
        if flagged || !finite || price <= 0.0 || bid <= 0.0 || ask < bid || volume < 0.0 {
            report.irregular += 1;
            continue;
        }
        let grid = (
            to_grid(price, config.tick_size / 2.0),
            to_grid(bid, config.tick_size),
            to_grid(ask, config.tick_size),
        );
        let (Some(price2), Some(bid_t), Some(ask_t)) = grid else {
            report.irregular += 1;
            continue;
        };
        let local = ts + offset_ms;
        let Some(dt) = DateTime::from_timestamp_millis(local) else {
            report.irregular += 1;
            continue;
        };
        let date = dt.date_naive();
        by_day.entry(date).or_default().push(RawRecord {
            ts: local.rem_euclid(MS_PER_DAY),
            price2,
            mid2: bid_t + ask_t,
            volume,
        });
    }

    // Shortened-day detection needs the typical span when no session is configured.
    let spans: Vec<i64> = by_day
        .values()
        .map(|recs| {
            let lo = recs.iter().map(|r| r.ts).min().unwrap_or(0);
            let hi = recs.iter().map(|r| r.ts).max().unwrap_or(0);
            hi - lo
        })
        .collect();
    let full_span = match (config.session_open_minutes, config.session_close_minutes) {
        (Some(o), Some(c)) if c > o => i64::from(c - o) * 60_000,
        _ => {
            let mut s = spans.clone();
            s.sort_unstable();
            s.get(s.len() / 2).copied().unwrap_or(0)
        }
    };
    let trim_ms = i64::from(config.trim_minutes) * 60_000;

    let mut days = Vec::new();
    for ((date, mut recs), span) in by_day.into_iter().zip(spans) {
        if (span as f64) < config.min_session_fraction * full_span as f64 {
            warn!("dropping shortened day {date}");
            report.shortened_days.push(date.to_string());
            continue;
        }
        recs.sort_by_key(|r| r.ts);
        let (open, close) = match (config.session_open_minutes, config.session_close_minutes) {
            (Some(o), Some(c)) => (i64::from(o) * 60_000, i64::from(c) * 60_000),
            _ => (recs[0].ts, recs[recs.len() - 1].ts + 1),
        };
        let events = build_day_events(&recs, open + trim_ms, close - trim_ms, config, &mut report);
        if events.is_empty() {
            warn!("day {date} is empty after cleaning");
            report.empty_days.push(date.to_string());
            continue;
        }
        days.push(DaySeries::new(date, events));
    }
    report.days = days.len() as u64;
    report.events = days.iter().map(|d| d.len() as u64).sum();
    let data = InstrumentData::new(config.instrument_id.clone(), days)?;
    Ok((data, report))
}

fn build_day_events(
    recs: &[RawRecord],
    start: i64,
    end: i64,
    config: &IngestConfig,
    report: &mut IngestReport,
) -> Vec<TradeEvent> {
    struct Pending {
        ts: i64,
        sign: Sign,
        mid2: i64,
        volume: f64,
    }
    let mut pending: Vec<Pending> = Vec::new();
    let mut i = 0;
    while i < recs.len() {
        let ts = recs[i].ts;
        let mut j = i;
        while j < recs.len() && recs[j].ts == ts {
            j += 1;
        }
        let group = &recs[i..j];
        i = j;
        if ts < start || ts >= end {
            report.trimmed += group.len() as u64;
            continue;
        }
        let mut signs = Vec::with_capacity(group.len());
        let mut first_mid = None;
        let mut volume = 0.0;
        for r in group {
            match r.price2.cmp(&r.mid2) {
                std::cmp::Ordering::Equal => report.at_mid += 1,
                ord => {
                    signs.push(if ord.is_gt() { Sign::Buy } else { Sign::Sell });
                    first_mid.get_or_insert(r.mid2);
                    volume += r.volume;
                }
            }
        }
        let Some(mid2) = first_mid else { continue };
        if signs.iter().any(|s| *s != signs[0]) {
            report.mixed_sign_groups += 1;
            continue;
        }
        report.merged += signs.len() as u64 - 1;
        pending.push(Pending {
            ts,
            sign: signs[0],
            mid2,
            volume,
        });
    }
    let Some(last) = pending.last() else {
        return Vec::new();
    };
    // Mid after the last event: the first quote seen later in the day.
    let final_mid2 = recs
        .iter()
        .find(|r| r.ts > last.ts)
        .map_or(last.mid2, |r| r.mid2);
    let half_tick = config.tick_size / 2.0;
    let log_mid = |m2: i64| (m2 as f64 * half_tick).ln();
    (0..pending.len())
        .map(|k| {
            let p = &pending[k];
            let next2 = pending.get(k + 1).map_or(final_mid2, |n| n.mid2);
            let lm = log_mid(p.mid2);
            let ret = if next2 == p.mid2 { 0.0 } else { log_mid(next2) - lm };
            TradeEvent {
                timestamp: p.ts,
                sign: p.sign,
                label: if next2 == p.mid2 { Label::N } else { Label::C },
                log_mid: lm,
                ret,
                volume: p.volume,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Canonical event CSV
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CanonicalRow {
    date: NaiveDate,
    t: i64,
    sign: i64,
    label: Label,
    log_mid: f64,
    ret: f64,
    volume: f64,
}

/// Writes the canonical event CSV (`date,t,sign,label,log_mid,ret,volume`).
pub fn write_events_csv<W: Write>(data: &InstrumentData, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for day in &data.days {
        for e in &day.events {
            wtr.serialize(CanonicalRow {
                date: day.date,
                t: e.timestamp,
                sign: i64::from(e.sign.as_int()),
                label: e.label,
                log_mid: e.log_mid,
                ret: e.ret,
                volume: e.volume,
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Reads the canonical event CSV. With `strict`, the label invariant is enforced.
pub fn read_events_csv<R: Read>(
    reader: R,
    instrument_id: &str,
    strict: bool,
) -> Result<InstrumentData> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    for name in ["date", "t", "sign", "label", "log_mid", "ret", "volume"] {
        if !headers.iter().any(|h| h == name) {
            return Err(Error::MissingColumn(name.to_string()));
        }
    }
    let mut days: Vec<DaySeries> = Vec::new();
    for row in rdr.deserialize::<CanonicalRow>() {
        let row = row?;
        let event = TradeEvent {
            timestamp: row.t,
            sign: Sign::from_int(row.sign)?,
            label: row.label,
            log_mid: row.log_mid,
            ret: row.ret,
            volume: row.volume,
        };
        match days.last_mut() {
            Some(d) if d.date == row.date => d.events.push(event),
            Some(d) if d.date > row.date => {
                return Err(Error::InvalidInput(format!(
                    "dates out of order: {} after {}",
                    row.date, d.date
                )))
            }
            _ => days.push(DaySeries::new(row.date, vec![event])),
        }
    }
    let data = InstrumentData::new(instrument_id, days)?;
    data.validate(strict)?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "timestamp_ms,price,bid,ask,volume,flags\n";

    fn cfg() -> IngestConfig {
        IngestConfig {
            trim_minutes: 0,
            min_session_fraction: 0.0,
            ..IngestConfig::default()
        }
    }

    fn ingest(body: &str) -> (InstrumentData, IngestReport) {
        parse_trades(format!("{HEADER}{body}").as_bytes(), &cfg()).unwrap()
    }

    #[test]
    fn merges_same_sign_same_millisecond() {
        let (data, report) = ingest(
            "1000,10.02,10.00,10.02,100,\n\
             1000,10.02,10.00,10.02,50,\n\
             2000,10.00,10.00,10.02,10,\n",
        );
        let ev = &data.days[0].events;
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[0].sign, Sign::Buy);
        assert_eq!(ev[0].volume, 150.0);
        assert_eq!(report.merged, 1);
    }

    #[test]
    fn discards_trades_at_mid() {
        let (data, report) = ingest(
            "1000,10.01,10.00,10.02,100,\n\
             2000,10.02,10.00,10.02,10,\n",
        );
        assert_eq!(data.days[0].len(), 1);
        assert_eq!(report.at_mid, 1);
    }

    #[test]
    fn labels_from_mid_changes() {
        // mids 10.00, 10.00, 10.01
        let (data, _) = ingest(
            "1000,10.01,9.99,10.01,1,\n\
             2000,9.99,9.99,10.01,1,\n\
             3000,10.02,10.00,10.02,1,\n",
        );
        let labels = data.days[0].labels();
        assert_eq!(&labels[..2], &[Label::N, Label::C]);
        assert_eq!(data.days[0].events[0].ret, 0.0);
        assert!(data.days[0].events[1].ret > 0.0);
        data.validate(true).unwrap();
    }

    #[test]
    fn rejects_mixed_sign_groups_and_bad_rows() {
        let (data, report) = ingest(
            "1000,10.02,10.00,10.02,1,\n\
             1000,10.00,10.00,10.02,1,\n\
             2000,abc,10.00,10.02,1,\n\
             3000,10.02,10.00,10.02,1,I\n\
             4000,NaN,10.00,10.02,1,\n\
             5000,10.02,10.00,10.02,1,\n",
        );
        assert_eq!(report.mixed_sign_groups, 1);
        assert_eq!(report.unparseable, 1);
        assert_eq!(report.irregular, 2);
        assert_eq!(data.days[0].len(), 1);
    }

    #[test]
    fn missing_column_is_an_error() {
        let err = parse_trades("timestamp_ms,price\n1,2\n".as_bytes(), &cfg()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(_)));
    }

    #[test]
    fn trims_session_edges() {
        let config = IngestConfig {
            trim_minutes: 1,
            min_session_fraction: 0.0,
            ..IngestConfig::default()
        };
        let body = "0,10.02,10.00,10.02,1,\n\
                    70000,10.02,10.00,10.02,1,\n\
                    80000,10.00,10.00,10.02,1,\n\
                    200000,10.02,10.00,10.02,1,\n";
        let (data, report) = parse_trades(format!("{HEADER}{body}").as_bytes(), &config).unwrap();
        assert_eq!(data.days[0].len(), 2);
        assert_eq!(report.trimmed, 2);
    }

    #[test]
    fn canonical_round_trip_is_exact() {
        let (data, _) = ingest(
            "1000,10.01,9.99,10.01,1,\n\
             2000,9.99,9.99,10.01,3,\n\
             3000,10.03,10.00,10.02,2,\n\
             4000,9.98,9.98,10.00,2,\n",
        );
        let mut first = Vec::new();
        write_events_csv(&data, &mut first).unwrap();
        let back = read_events_csv(first.as_slice(), &data.instrument_id, true).unwrap();
        assert_eq!(back, data);
        let mut second = Vec::new();
        write_events_csv(&back, &mut second).unwrap();
        assert_eq!(first, second);
    }

    fn day_from_moves(moves: &[f64]) -> DaySeries {
        let events = moves
            .iter()
            .enumerate()
            .map(|(i, &r)| TradeEvent {
                timestamp: i as i64,
                sign: Sign::Buy,
                label: if r == 0.0 { Label::N } else { Label::C },
                log_mid: 0.0,
                ret: r,
                volume: 1.0,
            })
            .collect();
        DaySeries::new(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), events)
    }

    #[test]
    fn eta_alternating_is_zero() {
        let data = InstrumentData::new("x", vec![day_from_moves(&[1.0, -1.0, 1.0, 0.0, -1.0])])
            .unwrap();
        assert_eq!(compute_eta(&data).unwrap(), 0.0);
    }

    #[test]
    fn eta_degenerate_cases_error() {
        let only_up = InstrumentData::new("x", vec![day_from_moves(&[1.0; 4])]).unwrap();
        assert!(matches!(compute_eta(&only_up), Err(Error::Undefined(_))));
        let one_move = InstrumentData::new("x", vec![day_from_moves(&[0.0, 1.0, 0.0])]).unwrap();
        assert!(compute_eta(&one_move).is_err());
    }

    #[test]
    fn eta_of_random_walk_is_one_half() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let moves: Vec<f64> = (0..100_000)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let data = InstrumentData::new("x", vec![day_from_moves(&moves)]).unwrap();
        let eta = compute_eta(&data).unwrap();
        assert!((eta - 0.5).abs() < 0.01, "eta = {eta}");
        let flipped: Vec<f64> = moves.iter().map(|m| -m).collect();
        let data_f = InstrumentData::new("x", vec![day_from_moves(&flipped)]).unwrap();
        assert_eq!(compute_eta(&data_f).unwrap(), eta);
    }

    #[test]
    fn odd_even_split_by_parity() {
        let days: Vec<DaySeries> = (0..4)
            .map(|i| {
                let mut d = day_from_moves(&vec![0.0; 3 + i]);
                d.date = NaiveDate::from_ymd_opt(2020, 1, 1 + i as u32).unwrap();
                d
            })
            .collect();
        let data = InstrumentData::new("x", days.clone()).unwrap();
        let (a, b) = split_odd_even(&data).unwrap();
        assert_eq!(a.days, vec![days[0].clone(), days[2].clone()]);
        assert_eq!(b.days, vec![days[1].clone(), days[3].clone()]);
        assert_eq!(a.max_lag, 2);
        assert_eq!(b.max_lag, 3);

        let two = InstrumentData::new("x", days[..2].to_vec()).unwrap();
        let (a, b) = split_odd_even(&two).unwrap();
        assert_eq!((a.days.len(), b.days.len()), (1, 1));

        let one = InstrumentData::new("x", days[..1].to_vec()).unwrap();
        assert!(matches!(split_odd_even(&one), Err(Error::SingleDay)));
    }
}
