//! Data model shared by every pipeline stage.
//!
//! All records serialize to one JSON object per line with the field names
//! used here.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{Taxonomy, TaxonomyError};

/// Maximum number of predecessors kept in an event chain.
pub const MAX_CHAIN_DEPTH: usize = 5;
/// Default trading-day lookback window.
pub const DEFAULT_WINDOW: usize = 5;
/// Absolute daily return at or below which a day is labeled flat.
pub const FLAT_THRESHOLD: f64 = 0.01;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum DomainError {
    #[error("daily return {0} is not finite")]
    NonFiniteReturn(f64),
    #[error("bit vectors differ in length ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("invalid bit vector text {0:?}")]
    BadBits(String),
    #[error("unknown label {0:?}")]
    BadLabel(String),
    #[error("event {id}: {reason}")]
    InvalidEvent { id: String, reason: String },
    #[error("chain of {head}: {reason}")]
    InvalidChain { head: String, reason: String },
    #[error("series for {company} at {anchor}: {reason}")]
    InvalidSeries { company: String, anchor: NaiveDate, reason: String },
    #[error("reflection for {company} at {anchor}: {reason}")]
    InvalidReflection { company: String, anchor: NaiveDate, reason: String },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsDoc {
    pub doc_id: String,
    pub company: String,
    pub date: NaiveDate,
    pub title: String,
    pub body: String,
}

/// Realized next-day move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Up,
    Down,
    Flat,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Up => "up",
            Label::Down => "down",
            Label::Flat => "flat",
        }
    }

    pub fn direction(self) -> Option<Direction> {
        match self {
            Label::Up => Some(Direction::Up),
            Label::Down => Some(Direction::Down),
            Label::Flat => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "up" => Ok(Label::Up),
            "down" => Ok(Label::Down),
            "flat" => Ok(Label::Flat),
            _ => Err(DomainError::BadLabel(s.to_string())),
        }
    }
}

/// Predicted direction; test-time predictions are strictly binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Labels a next-day return: above +1% is up, below -1% is down, and the
/// closed interval [-1%, +1%] is flat.
pub fn label_return(r: f64) -> Result<Label, DomainError> {
    if !r.is_finite() {
        return Err(DomainError::NonFiniteReturn(r));
    }
    Ok(if r > FLAT_THRESHOLD {
        Label::Up
    } else if r < -FLAT_THRESHOLD {
        Label::Down
    } else {
        Label::Flat
    })
}

/// Fixed-length occurrence bitmap. Serialized as a string of `0`/`1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct BitVector {
    len: usize,
    words: Vec<u64>,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        BitVector { len, words: vec![0; len.div_ceil(64)] }
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut v = Self::zeros(len);
        for i in indices {
            v.set(i);
        }
        v
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Self::from_indices(bits.len(), bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, i: usize) -> bool {
        i < self.len && self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&i| self.get(i))
    }

    /// `(|a ∧ b|, |a ∨ b|)`.
    pub fn overlap(&self, other: &BitVector) -> Result<(usize, usize), DomainError> {
        if self.len != other.len {
            return Err(DomainError::DimensionMismatch(self.len, other.len));
        }
        Ok(self.words.iter().zip(&other.words).fold((0, 0), |(i, u), (a, b)| {
            (i + (a & b).count_ones() as usize, u + (a | b).count_ones() as usize)
        }))
    }
}

impl From<BitVector> for String {
    fn from(v: BitVector) -> String {
        (0..v.len).map(|i| if v.get(i) { '1' } else { '0' }).collect()
    }
}

impl TryFrom<String> for BitVector {
    type Error = DomainError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        let bits: Result<Vec<bool>, _> = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(DomainError::BadBits(s.clone())),
            })
            .collect();
        Ok(BitVector::from_bools(&bits?))
    }
}

/// Dense unit-norm vector attached to an event description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f32>,
}

impl Embedding {
    pub fn new(mut vector: Vec<f32>) -> Self {
        crate::scalar::normalize(&mut vector);
        Embedding { vector }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        let a: Vec<f64> = self.vector.iter().map(|&x| x as f64).collect();
        let b: Vec<f64> = other.vector.iter().map(|&x| x as f64).collect();
        crate::scalar::cosine(&a, &b)
    }
}

/// Structured event: the atomic memory unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: String,
    pub group: String,
    #[serde(rename = "type")]
    pub event_type: String,
    pub time: NaiveDate,
    #[serde(default)]
    pub location: Option<String>,
    #[serde(default)]
    pub entities: Vec<String>,
    #[serde(default)]
    pub industries: Vec<String>,
    #[serde(default)]
    pub companies: Vec<String>,
    #[serde(default)]
    pub open_params: BTreeMap<String, String>,
    pub description: String,
    #[serde(default)]
    pub source_docs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Embedding>,
}

impl Event {
    /// Checks the taxonomy pairing and required fields.
    pub fn validate(&self, tax: &Taxonomy) -> Result<(), DomainError> {
        let invalid = |reason: &str| DomainError::InvalidEvent { id: self.event_id.clone(), reason: reason.to_string() };
        if self.event_id.is_empty() {
            return Err(invalid("empty event id"));
        }
        if self.description.trim().is_empty() {
            return Err(invalid("empty description"));
        }
        if self.source_docs.is_empty() {
            return Err(invalid("no source documents"));
        }
        tax.resolve_in_group(&self.group, &self.event_type)?;
        Ok(())
    }

    pub fn qualified_type(&self) -> String {
        format!("{} / {}", self.group, self.event_type)
    }
}

/// Incremental-information direction relative to the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    MorePositive,
    MoreNegative,
    Neutral,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::MorePositive => "more positive",
            Polarity::MoreNegative => "more negative",
            Polarity::Neutral => "neutral",
        }
    }

    /// Lenient parse of model output ("more positive", "more_positive", "Positive", ...).
    pub fn parse_loose(s: &str) -> Option<Polarity> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c.is_ascii_alphabetic() { c } else { ' ' })
            .collect();
        let words: Vec<&str> = norm.split_whitespace().collect();
        match words.as_slice() {
            ["more", "positive"] | ["positive"] => Some(Polarity::MorePositive),
            ["more", "negative"] | ["negative"] => Some(Polarity::MoreNegative),
            ["neutral"] => Some(Polarity::Neutral),
            _ => None,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainLink {
    pub event_id: String,
    pub date: NaiveDate,
}

/// Predecessors of one event, most recent first, plus its incremental
/// information.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventChain {
    pub head: String,
    pub company: String,
    pub date: NaiveDate,
    pub predecessors: Vec<ChainLink>,
    pub delta_info: String,
    pub delta_polarity: Polarity,
}

impl EventChain {
    pub fn depth(&self) -> usize {
        self.predecessors.len()
    }

    /// Depth bound and strictly decreasing dates, all before the head.
    pub fn validate(&self) -> Result<(), DomainError> {
        let invalid = |reason: String| DomainError::InvalidChain { head: self.head.clone(), reason };
        if self.predecessors.len() > MAX_CHAIN_DEPTH {
            return Err(invalid(format!("depth {} exceeds {MAX_CHAIN_DEPTH}", self.predecessors.len())));
        }
        let mut prev = self.date;
        for link in &self.predecessors {
            if link.date >= prev {
                return Err(invalid(format!("predecessor {} dated {} is not before {}", link.event_id, link.date, prev)));
            }
            prev = link.date;
        }
        Ok(())
    }

    pub fn is_first_occurrence(&self) -> bool {
        self.predecessors.is_empty()
    }
}

/// Merged events of one company-day with their occurrence vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyEventSet {
    pub company: String,
    pub date: NaiveDate,
    pub events: Vec<Event>,
    pub type_vector: BitVector,
    pub group_vector: BitVector,
}

impl DailyEventSet {
    pub fn new(company: impl Into<String>, date: NaiveDate, events: Vec<Event>, tax: &Taxonomy) -> Result<Self, DomainError> {
        let (type_vector, group_vector) = occurrence_vectors(&events, tax)?;
        Ok(DailyEventSet { company: company.into(), date, events, type_vector, group_vector })
    }

    pub fn empty(company: impl Into<String>, date: NaiveDate, tax: &Taxonomy) -> Self {
        DailyEventSet {
            company: company.into(),
            date,
            events: Vec::new(),
            type_vector: BitVector::zeros(tax.type_count()),
            group_vector: BitVector::zeros(tax.group_count()),
        }
    }

    /// Whether the stored vectors match a recomputation from the events.
    pub fn vectors_consistent(&self, tax: &Taxonomy) -> bool {
        occurrence_vectors(&self.events, tax)
            .map(|(t, g)| t == self.type_vector && g == self.group_vector)
            .unwrap_or(false)
    }
}

/// Type-level and group-level occurrence bitmaps for a set of events.
pub fn occurrence_vectors(events: &[Event], tax: &Taxonomy) -> Result<(BitVector, BitVector), DomainError> {
    let mut types = BitVector::zeros(tax.type_count());
    let mut groups = BitVector::zeros(tax.group_count());
    for e in events {
        let t = tax.resolve_in_group(&e.group, &e.event_type)?;
        types.set(t.id.0);
        groups.set(t.group.0);
    }
    Ok((types, groups))
}

/// Identity of a series: enough to rebuild it from stored daily sets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeriesRef {
    pub company: String,
    pub anchor_date: NaiveDate,
    pub window: usize,
}

/// `w + 1` consecutive trading days ending at the anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSeries {
    pub company: String,
    pub anchor_date: NaiveDate,
    pub window: usize,
    pub days: Vec<DailyEventSet>,
}

impl EventSeries {
    pub fn new(company: impl Into<String>, anchor_date: NaiveDate, window: usize, days: Vec<DailyEventSet>) -> Result<Self, DomainError> {
        let company = company.into();
        let invalid = |reason: String| DomainError::InvalidSeries { company: company.clone(), anchor: anchor_date, reason };
        if days.len() != window + 1 {
            return Err(invalid(format!("expected {} days, got {}", window + 1, days.len())));
        }
        if days.last().map(|d| d.date) != Some(anchor_date) {
            return Err(invalid("last day is not the anchor".into()));
        }
        if days.windows(2).any(|p| p[0].date >= p[1].date) {
            return Err(invalid("days are not strictly chronological".into()));
        }
        if days.iter().any(|d| d.company != company) {
            return Err(invalid("days from another company".into()));
        }
        Ok(EventSeries { company, anchor_date, window, days })
    }

    pub fn reference(&self) -> SeriesRef {
        SeriesRef { company: self.company.clone(), anchor_date: self.anchor_date, window: self.window }
    }

    /// Day at `offset` trading days before the anchor (0 = anchor).
    pub fn day_back(&self, offset: usize) -> &DailyEventSet {
        &self.days[self.window - offset]
    }

    pub fn anchor_day(&self) -> &DailyEventSet {
        self.day_back(0)
    }
}

/// Causal experience record produced from a labeled event sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reflection {
    pub company: String,
    pub anchor_date: NaiveDate,
    pub series_ref: SeriesRef,
    pub delta_info: String,
    pub realized_move: Label,
    pub reason: String,
    pub key_events: String,
}

impl Reflection {
    pub fn validate(&self) -> Result<(), DomainError> {
        let invalid = |reason: &str| DomainError::InvalidReflection {
            company: self.company.clone(),
            anchor: self.anchor_date,
            reason: reason.to_string(),
        };
        if self.reason.trim().is_empty() {
            return Err(invalid("empty reason"));
        }
        if self.key_events.trim().is_empty() {
            return Err(invalid("empty key events"));
        }
        if self.series_ref.company != self.company || self.series_ref.anchor_date != self.anchor_date {
            return Err(invalid("series reference does not match anchor"));
        }
        Ok(())
    }

    pub fn record_id(&self) -> String {
        format!("{}@{}", self.company, self.anchor_date)
    }
}

/// Daily return of one company on one trading day (`+0.015` = +1.5%).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceBar {
    pub company: String,
    pub date: NaiveDate,
    pub daily_return: f64,
}

impl PriceBar {
    pub fn label(&self) -> Result<Label, DomainError> {
        label_return(self.daily_return)
    }
}

/// Per-document plain-text summary, kept for the representation ablations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocSummary {
    pub doc_id: String,
    pub company: String,
    pub date: NaiveDate,
    pub summary: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn event(id: &str, group: &str, ty: &str) -> Event {
        Event {
            event_id: id.into(),
            group: group.into(),
            event_type: ty.into(),
            time: d("2024-01-02"),
            location: None,
            entities: vec![],
            industries: vec![],
            companies: vec![],
            open_params: BTreeMap::new(),
            description: "something happened".into(),
            source_docs: vec!["doc".into()],
            embedding: None,
        }
    }

    #[test]
    fn labeling_examples() {
        assert_eq!(label_return(0.015).unwrap(), Label::Up);
        assert_eq!(label_return(0.0).unwrap(), Label::Flat);
        assert_eq!(label_return(0.01).unwrap(), Label::Flat);
        assert_eq!(label_return(-0.01).unwrap(), Label::Flat);
        assert!(label_return(f64::NAN).is_err());
        assert!(label_return(f64::INFINITY).is_err());
    }

    proptest! {
        #[test]
        fn labeling_is_total(r in -1.0f64..1.0) {
            let l = label_return(r).unwrap();
            prop_assert_eq!(l == Label::Up, r > 0.01);
            prop_assert_eq!(l == Label::Down, r < -0.01);
        }

        #[test]
        fn bitvector_text_round_trip(bits in proptest::collection::vec(any::<bool>(), 0..130)) {
            let v = BitVector::from_bools(&bits);
            let s: String = v.clone().into();
            prop_assert_eq!(BitVector::try_from(s).unwrap(), v.clone());
            prop_assert_eq!(v.count_ones(), bits.iter().filter(|b| **b).count());
        }
    }

    #[test]
    fn vectors_follow_events() {
        let tax = Taxonomy::standard();
        let events = vec![
            event("a", "Products and Market", "New Product Launch"),
            event("b", "Products and Market", "New Product Launch"),
            event("c", "Macroeconomic Finance", "Taxation"),
        ];
        let day = DailyEventSet::new("X", d("2024-01-02"), events, tax).unwrap();
        assert_eq!(day.type_vector.count_ones(), 2);
        assert_eq!(day.group_vector.ones().collect::<Vec<_>>(), vec![1, 3]);
        assert!(day.vectors_consistent(tax));

        let mut tampered = day.clone();
        tampered.events.pop();
        assert!(!tampered.vectors_consistent(tax));

        let empty = DailyEventSet::empty("X", d("2024-01-02"), tax);
        assert_eq!(empty.type_vector.count_ones() + empty.group_vector.count_ones(), 0);
        assert_eq!(empty.type_vector.len(), 57);
    }

    #[test]
    fn event_validation() {
        let tax = Taxonomy::standard();
        assert!(event("a", "Macroeconomic Finance", "Taxation").validate(tax).is_ok());
        assert!(event("a", "Products and Market", "Taxation").validate(tax).is_err());
        let mut e = event("a", "Macroeconomic Finance", "Taxation");
        e.description = " ".into();
        assert!(e.validate(tax).is_err());
    }

    #[test]
    fn chain_validation() {
        let link = |id: &str, date: &str| ChainLink { event_id: id.into(), date: d(date) };
        let mut chain = EventChain {
            head: "h".into(),
            company: "X".into(),
            date: d("2024-01-10"),
            predecessors: vec![link("a", "2024-01-09"), link("b", "2024-01-08")],
            delta_info: String::new(),
            delta_polarity: Polarity::Neutral,
        };
        assert!(chain.validate().is_ok());
        chain.predecessors.swap(0, 1);
        assert!(chain.validate().is_err());
        chain.predecessors = (1..=6).map(|i| link(&format!("p{i}"), &format!("2024-01-0{}", 10 - i))).collect();
        assert!(chain.validate().is_err());
        chain.predecessors = vec![link("same-day", "2024-01-10")];
        assert!(chain.validate().is_err());
    }

    #[test]
    fn polarity_parsing() {
        assert_eq!(Polarity::parse_loose("more positive"), Some(Polarity::MorePositive));
        assert_eq!(Polarity::parse_loose("More_Negative"), Some(Polarity::MoreNegative));
        assert_eq!(Polarity::parse_loose("Neutral."), Some(Polarity::Neutral));
        assert_eq!(Polarity::parse_loose("sideways"), None);
    }

    #[test]
    fn series_shape() {
        let tax = Taxonomy::standard();
        let days: Vec<_> = ["2024-01-02", "2024-01-03", "2024-01-04"]
            .iter()
            .map(|s| DailyEventSet::empty("X", d(s), tax))
            .collect();
        let s = EventSeries::new("X", d("2024-01-04"), 2, days.clone()).unwrap();
        assert_eq!(s.day_back(0).date, d("2024-01-04"));
        assert_eq!(s.day_back(2).date, d("2024-01-02"));
        assert!(EventSeries::new("X", d("2024-01-04"), 3, days.clone()).is_err());
        let mut shuffled = days;
        shuffled.swap(0, 1);
        assert!(EventSeries::new("X", d("2024-01-04"), 2, shuffled).is_err());
    }

    #[test]
    fn event_serializes_type_field() {
        let e = event("a", "Macroeconomic Finance", "Taxation");
        let json = serde_json::to_value(&e).unwrap();
        assert_eq!(json["type"], "Taxation");
        assert!(json.get("embedding").is_none());
        let back: Event = serde_json::from_value(json).unwrap();
        assert_eq!(back, e);
    }
}
