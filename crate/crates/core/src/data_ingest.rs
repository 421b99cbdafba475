//! Minute-resolution vehicle-usage logs, hourly spot prices and the
//! per-minute-of-day transition statistics built from them.
//!
//! Trip logs are CSV with header `timestamp,state`, one row per minute,
//! state `1` = not driving and `2` = driving. Price files are CSV with header
//! `timestamp,price_eur_mwh`, one row per hour.

use std::fmt::Write as _;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of minutes in the diurnal cycle.
pub const MINUTES_PER_DAY: usize = 1440;

/// Observed symbol for "not driving".
pub const PARKED: u8 = 1;
/// Observed symbol for "driving".
pub const DRIVING: u8 = 2;
/// Number of observed symbols in a trip log.
pub const OBSERVED_SYMBOLS: usize = 2;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M";

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("empty trace")]
    EmptyTrace,
    #[error("empty price series")]
    EmptyPrices,
    #[error("split date {split} is not strictly inside the trace span {start} .. {end}")]
    SplitOutsideSpan {
        split: NaiveDate,
        start: NaiveDateTime,
        end: NaiveDateTime,
    },
    #[error("price series covers {available} minutes from {offset}, {required} required")]
    PriceCoverage {
        offset: i64,
        required: usize,
        available: usize,
    },
    #[error("price series must start on the hour, got {0}")]
    PriceAlignment(NaiveDateTime),
}

/// Minute of the diurnal cycle, `1..=1440`; 00:00–00:01 is minute 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MinuteOfDay(u16);

impl MinuteOfDay {
    pub fn new(s: u16) -> Option<Self> {
        (1..=MINUTES_PER_DAY as u16).contains(&s).then_some(Self(s))
    }

    /// Periodic lookup: any integer minute index wraps onto `1..=1440`.
    pub fn wrap(s: i64) -> Self {
        Self(((s - 1).rem_euclid(MINUTES_PER_DAY as i64) + 1) as u16)
    }

    pub fn of(ts: NaiveDateTime) -> Self {
        Self((ts.hour() * 60 + ts.minute() + 1) as u16)
    }

    pub fn get(self) -> u16 {
        self.0
    }

    /// Zero-based index into a 1440-long table.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn advance(self, minutes: usize) -> Self {
        Self::wrap(self.0 as i64 + minutes as i64)
    }

    /// Hour of day `0..24` containing this minute.
    pub fn hour(self) -> u32 {
        (self.index() / 60) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayKind {
    Weekday,
    Weekend,
}

impl DayKind {
    pub fn of(date: NaiveDate) -> Self {
        match date.weekday() {
            Weekday::Sat | Weekday::Sun => DayKind::Weekend,
            _ => DayKind::Weekday,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayFilter {
    #[default]
    Weekday,
    Weekend,
    All,
}

impl DayFilter {
    pub fn admits(self, date: NaiveDate) -> bool {
        match self {
            DayFilter::All => true,
            DayFilter::Weekday => DayKind::of(date) == DayKind::Weekday,
            DayFilter::Weekend => DayKind::of(date) == DayKind::Weekend,
        }
    }
}

/// Contiguous per-minute record of the observed driving state.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingTrace {
    start: NaiveDateTime,
    states: Vec<u8>,
}

impl DrivingTrace {
    pub fn new(start: NaiveDateTime, states: Vec<u8>) -> Result<Self, IngestError> {
        if states.is_empty() {
            return Err(IngestError::EmptyTrace);
        }
        if let Some(pos) = states.iter().position(|&x| !(PARKED..=DRIVING).contains(&x)) {
            return Err(IngestError::Parse {
                line: pos + 2,
                message: format!("unknown state id {}", states[pos]),
            });
        }
        Ok(Self {
            start: truncate_to_minute(start),
            states,
        })
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    /// First minute after the trace.
    pub fn end(&self) -> NaiveDateTime {
        self.start + Duration::minutes(self.states.len() as i64)
    }

    pub fn states(&self) -> &[u8] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn timestamp(&self, t: usize) -> NaiveDateTime {
        self.start + Duration::minutes(t as i64)
    }

    pub fn minute_of_day(&self, t: usize) -> MinuteOfDay {
        MinuteOfDay::of(self.start).advance(t)
    }

    pub fn day_labels(&self) -> Vec<DayKind> {
        (0..self.len())
            .map(|t| DayKind::of(self.timestamp(t).date()))
            .collect()
    }

    /// Number of trips: entries into the driving symbol, counting a trace
    /// that starts while driving as one trip.
    pub fn trip_count(&self) -> usize {
        let starts = self
            .states
            .windows(2)
            .filter(|w| w[0] == PARKED && w[1] == DRIVING)
            .count();
        starts + usize::from(self.states[0] == DRIVING)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.len() * 20 + 16);
        out.push_str("timestamp,state\n");
        for (t, &x) in self.states.iter().enumerate() {
            let _ = writeln!(out, "{},{}", self.timestamp(t).format(TIMESTAMP_FORMAT), x);
        }
        out
    }
}

fn truncate_to_minute(ts: NaiveDateTime) -> NaiveDateTime {
    ts.with_second(0).and_then(|t| t.with_nanosecond(0)).unwrap_or(ts)
}

pub fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    for fmt in [
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%d %H:%M:%S",
    ] {
        if let Ok(ts) = NaiveDateTime::parse_from_str(raw, fmt) {
            return (ts.second() == 0).then_some(ts);
        }
    }
    None
}

pub fn format_timestamp(ts: NaiveDateTime) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

/// Reads a two-column CSV with the expected header, returning
/// `(line number, timestamp, raw value)` triples.
fn read_rows(
    raw: &str,
    header: [&str; 2],
) -> Result<Vec<(usize, NaiveDateTime, String)>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(raw.as_bytes());
    let found = reader.headers().map_err(|e| IngestError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if found.len() != 2 || found.get(0) != Some(header[0]) || found.get(1) != Some(header[1]) {
        return Err(IngestError::Parse {
            line: 1,
            message: format!("expected header `{},{}`", header[0], header[1]),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != 2 {
            return Err(IngestError::Parse {
                line,
                message: format!("malformed row: expected 2 fields, found {}", record.len()),
            });
        }
        let ts = parse_timestamp(&record[0]).ok_or_else(|| IngestError::Parse {
            line,
            message: format!("malformed timestamp `{}`", &record[0]),
        })?;
        rows.push((line, ts, record[1].to_string()));
    }
    Ok(rows)
}

pub fn parse_trace(raw: &str) -> Result<DrivingTrace, IngestError> {
    let rows = read_rows(raw, ["timestamp", "state"])?;
    let Some(&(_, start, _)) = rows.first() else {
        return Err(IngestError::EmptyTrace);
    };
    let mut states = Vec::with_capacity(rows.len());
    let mut expected = start;
    for (line, ts, value) in rows {
        if ts != expected {
            return Err(IngestError::Parse {
                line,
                message: format!(
                    "non-contiguous timestamp {} (expected {})",
                    format_timestamp(ts),
                    format_timestamp(expected)
                ),
            });
        }
        let state: u8 = value.parse().map_err(|_| IngestError::Parse {
            line,
            message: format!("malformed state `{value}`"),
        })?;
        if !(PARKED..=DRIVING).contains(&state) {
            return Err(IngestError::Parse {
                line,
                message: format!("unknown state id {state}"),
            });
        }
        states.push(state);
        expected += Duration::minutes(1);
    }
    DrivingTrace::new(start, states)
}

/// Hourly spot prices in currency/MWh.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    start: NaiveDateTime,
    hourly: Vec<f64>,
}

impl PriceSeries {
    pub fn new(start: NaiveDateTime, hourly: Vec<f64>) -> Result<Self, IngestError> {
        if hourly.is_empty() {
            return Err(IngestError::EmptyPrices);
        }
        if start.minute() != 0 || start.second() != 0 {
            return Err(IngestError::PriceAlignment(start));
        }
        Ok(Self { start, hourly })
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn end(&self) -> NaiveDateTime {
        self.start + Duration::hours(self.hourly.len() as i64)
    }

    pub fn hourly(&self) -> &[f64] {
        &self.hourly
    }

    /// Minute-resolution expansion: every hourly value repeated 60 times.
    pub fn to_minutes(&self) -> Vec<f64> {
        self.hourly
            .iter()
            .flat_map(|&p| std::iter::repeat_n(p, 60))
            .collect()
    }

    /// Minute prices for `[from, from + minutes)`.
    pub fn minute_window(&self, from: NaiveDateTime, minutes: usize) -> Result<Vec<f64>, IngestError> {
        let offset = (from - self.start).num_minutes();
        let available = self.hourly.len() * 60;
        if offset < 0 || offset as usize + minutes > available {
            return Err(IngestError::PriceCoverage {
                offset,
                required: minutes,
                available: available.saturating_sub(offset.max(0) as usize),
            });
        }
        let offset = offset as usize;
        Ok((offset..offset + minutes)
            .map(|m| self.hourly[m / 60])
            .collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.hourly.len() * 28 + 24);
        out.push_str("timestamp,price_eur_mwh\n");
        for (h, p) in self.hourly.iter().enumerate() {
            let ts = self.start + Duration::hours(h as i64);
            let _ = writeln!(out, "{},{}", format_timestamp(ts), p);
        }
        out
    }
}

pub fn parse_prices(raw: &str) -> Result<PriceSeries, IngestError> {
    let rows = read_rows(raw, ["timestamp", "price_eur_mwh"])?;
    let Some(&(first_line, start, _)) = rows.first() else {
        return Err(IngestError::EmptyPrices);
    };
    if start.minute() != 0 {
        return Err(IngestError::Parse {
            line: first_line,
            message: "price timestamps must be on the hour".into(),
        });
    }
    let mut hourly = Vec::with_capacity(rows.len());
    let mut expected = start;
    for (line, ts, value) in rows {
        if ts != expected {
            return Err(IngestError::Parse {
                line,
                message: format!(
                    "non-contiguous timestamp {} (expected {})",
                    format_timestamp(ts),
                    format_timestamp(expected)
                ),
            });
        }
        let price: f64 = value
            .parse()
            .ok()
            .filter(|p: &f64| p.is_finite())
            .ok_or_else(|| IngestError::Parse {
                line,
                message: format!("malformed price `{value}`"),
            })?;
        hourly.push(price);
        expected += Duration::hours(1);
    }
    PriceSeries::new(start, hourly)
}

/// Splits at `split_date` 00:00; the training part ends the minute before.
pub fn split_train_test(
    trace: &DrivingTrace,
    split_date: NaiveDate,
) -> Result<(DrivingTrace, DrivingTrace), IngestError> {
    let split = split_date.and_hms_opt(0, 0, 0).expect("midnight exists");
    if split <= trace.start() || split >= trace.end() {
        return Err(IngestError::SplitOutsideSpan {
            split: split_date,
            start: trace.start(),
            end: trace.end(),
        });
    }
    let cut = (split - trace.start()).num_minutes() as usize;
    let (head, tail) = trace.states.split_at(cut);
    Ok((
        DrivingTrace {
            start: trace.start,
            states: head.to_vec(),
        },
        DrivingTrace {
            start: split,
            states: tail.to_vec(),
        },
    ))
}

/// Per-minute-of-day transition counts `n_jk(s)` between observed states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionCounts {
    n_states: usize,
    counts: Vec<u64>,
}

impl TransitionCounts {
    pub fn new(n_states: usize) -> Self {
        Self {
            n_states,
            counts: vec![0; n_states * n_states * MINUTES_PER_DAY],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    fn offset(&self, from: u8, to: u8, s: MinuteOfDay) -> usize {
        let (j, k) = (from as usize - 1, to as usize - 1);
        assert!(j < self.n_states && k < self.n_states, "state out of range");
        (j * self.n_states + k) * MINUTES_PER_DAY + s.index()
    }

    pub fn record(&mut self, from: u8, to: u8, s: MinuteOfDay) {
        let i = self.offset(from, to, s);
        self.counts[i] += 1;
    }

    /// `n_jk(s)`.
    pub fn n(&self, from: u8, to: u8, s: MinuteOfDay) -> u64 {
        self.counts[self.offset(from, to, s)]
    }

    /// `z_j(s) = Σ_k n_jk(s)`.
    pub fn trials(&self, from: u8, s: MinuteOfDay) -> u64 {
        (1..=self.n_states as u8).map(|k| self.n(from, k, s)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &TransitionCounts) {
        assert_eq!(self.n_states, other.n_states);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Counts transitions `t -> t+1`, attributed to the minute of day and the
/// calendar day of `t`.
pub fn count_transitions(trace: &DrivingTrace, day_filter: DayFilter) -> TransitionCounts {
    let mut counts = TransitionCounts::new(OBSERVED_SYMBOLS);
    let mut s = MinuteOfDay::of(trace.start());
    let mut ts = trace.start();
    for w in trace.states().windows(2) {
        if day_filter.admits(ts.date()) {
            counts.record(w[0], w[1], s);
        }
        s = s.advance(1);
        ts += Duration::minutes(1);
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> NaiveDateTime {
        parse_timestamp(s).unwrap()
    }

    #[test]
    fn parses_three_rows() {
        let doc = "timestamp,state\n2003-01-06T00:00,1\n2003-01-06T00:01,1\n2003-01-06T00:02,2\n";
        let trace = parse_trace(doc).unwrap();
        assert_eq!(trace.len(), 3);
        assert_eq!(trace.states(), &[1, 1, 2]);
        assert_eq!(trace.end(), ts("2003-01-06T00:03"));
    }

    #[test]
    fn rejects_gap() {
        let doc = "timestamp,state\n2003-01-06T00:00,1\n2003-01-06T00:02,1\n";
        let err = parse_trace(doc).unwrap_err();
        assert!(err.to_string().contains("non-contiguous"), "{err}");
        assert!(matches!(err, IngestError::Parse { line: 3, .. }));
    }

    #[test]
    fn rejects_empty_and_unknown_state() {
        assert_eq!(parse_trace("timestamp,state\n"), Err(IngestError::EmptyTrace));
        assert!(parse_trace("").is_err());
        let err = parse_trace("timestamp,state\n2003-01-06T00:00,3\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
        assert!(err.to_string().contains("unknown state"));
        let err = parse_trace("timestamp,state\n2003-01-06T00:00,x\n").unwrap_err();
        assert!(err.to_string().contains("malformed"));
        let err = parse_trace("time,state\n2003-01-06T00:00,1\n").unwrap_err();
        assert!(matches!(err, IngestError::Parse { line: 1, .. }));
    }

    #[test]
    fn normalizes_timestamps_with_seconds() {
        let doc = "timestamp,state\n2003-01-06 00:00:00,1\n2003-01-06T00:01:00,2\n";
        let trace = parse_trace(doc).unwrap();
        assert_eq!(
            trace.to_csv(),
            "timestamp,state\n2003-01-06T00:00,1\n2003-01-06T00:01,2\n"
        );
    }

    #[test]
    fn splits_half_year_span() {
        let start = ts("2002-10-23T00:00");
        let trace = DrivingTrace::new(start, vec![1; 183 * MINUTES_PER_DAY]).unwrap();
        let split = start.date() + Duration::days(93);
        let (train, test) = split_train_test(&trace, split).unwrap();
        assert_eq!(train.len(), 93 * MINUTES_PER_DAY);
        assert_eq!(test.len(), 90 * MINUTES_PER_DAY);
        assert_eq!(train.end(), test.start());
        assert!(split_train_test(&trace, start.date()).is_err());
        assert!(split_train_test(&trace, start.date() + Duration::days(183)).is_err());
    }

    #[test]
    fn splits_synthetic_mid_span() {
        let start = ts("2003-01-01T00:00");
        let trace = DrivingTrace::new(start, vec![1; 10 * MINUTES_PER_DAY]).unwrap();
        let (a, b) = split_train_test(&trace, start.date() + Duration::days(5)).unwrap();
        assert_eq!((a.len(), b.len()), (5 * MINUTES_PER_DAY, 5 * MINUTES_PER_DAY));
    }

    #[test]
    fn counts_hand_example() {
        // 2003-01-06 is a Monday.
        let trace = DrivingTrace::new(ts("2003-01-06T00:00"), vec![1, 1, 2]).unwrap();
        let c = count_transitions(&trace, DayFilter::All);
        let m = |s| MinuteOfDay::new(s).unwrap();
        assert_eq!(c.n(1, 1, m(1)), 1);
        assert_eq!(c.n(1, 2, m(2)), 1);
        assert_eq!(c.total(), 2);
        assert_eq!(c.trials(1, m(1)), 1);
    }

    #[test]
    fn counts_aggregate_across_days() {
        let mut states = vec![1; 2 * MINUTES_PER_DAY];
        states[1] = 2;
        states[MINUTES_PER_DAY + 1] = 2;
        let trace = DrivingTrace::new(ts("2003-01-06T00:00"), states).unwrap();
        let c = count_transitions(&trace, DayFilter::Weekday);
        assert_eq!(c.n(1, 2, MinuteOfDay::new(1).unwrap()), 2);
        // midnight transition belongs to minute 1440 of the earlier day
        assert_eq!(c.n(1, 1, MinuteOfDay::new(1440).unwrap()), 1);
    }

    #[test]
    fn weekday_filter_on_weekend() {
        // 2003-01-04 is a Saturday
        let trace = DrivingTrace::new(ts("2003-01-04T00:00"), vec![1; 2 * MINUTES_PER_DAY]).unwrap();
        assert_eq!(count_transitions(&trace, DayFilter::Weekday).total(), 0);
        assert_eq!(
            count_transitions(&trace, DayFilter::Weekend).total(),
            2 * MINUTES_PER_DAY as u64 - 1
        );
    }

    #[test]
    fn prices_expand_and_window() {
        let p = parse_prices("timestamp,price_eur_mwh\n2012-01-25T00:00,30.5\n2012-01-25T01:00,40\n").unwrap();
        let m = p.to_minutes();
        assert_eq!(m.len(), 120);
        assert!(m[..60].iter().all(|&x| x == 30.5) && m[60..].iter().all(|&x| x == 40.0));
        let w = p.minute_window(ts("2012-01-25T00:30"), 60).unwrap();
        assert_eq!(w[29], 30.5);
        assert_eq!(w[30], 40.0);
        assert!(p.minute_window(ts("2012-01-25T00:30"), 91).is_err());
        assert!(parse_prices("timestamp,price_eur_mwh\n2012-01-25T00:30,1\n").is_err());
        assert!(parse_prices("timestamp,price_eur_mwh\n2012-01-25T00:00,1\n2012-01-25T02:00,1\n").is_err());
    }

    #[test]
    fn minute_of_day_wraps() {
        assert_eq!(MinuteOfDay::wrap(1440).get(), 1440);
        assert_eq!(MinuteOfDay::wrap(1441).get(), 1);
        assert_eq!(MinuteOfDay::wrap(0).get(), 1440);
        assert_eq!(MinuteOfDay::of(ts("2003-01-06T23:59")).get(), 1440);
        assert_eq!(MinuteOfDay::new(1440).unwrap().advance(1).get(), 1);
    }
}
