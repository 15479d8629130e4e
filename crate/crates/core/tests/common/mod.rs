#![allow(dead_code)]

use chrono::{Days, NaiveDate};
use rand::Rng;

use stockmem::backends::mock::{Fallback, MockEmbedder, MockGenerator};
use stockmem::backends::Backends;
use stockmem::domain::{BitVector, DailyEventSet, EventSeries, Label, Reflection, SeriesRef};
use stockmem::harness::synthetic::SyntheticData;
use stockmem::retrieval::HistoricalCase;
use stockmem::taxonomy::{Taxonomy, TypeId};

pub fn backends(data: &SyntheticData) -> Backends {
    Backends::new(
        Box::new(MockGenerator::new(data.fixture.clone(), Fallback::Synthetic)),
        Box::new(MockEmbedder::new(data.config.backend.embedding_dim)),
        data.config.backend.retry_budget,
    )
}

pub fn date(n: u64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + Days::new(n)
}

/// A day whose types are drawn from `palette`; group bits follow the types.
pub fn random_day(rng: &mut impl Rng, company: &str, d: NaiveDate, palette: &[usize]) -> DailyEventSet {
    let tax = Taxonomy::standard();
    let n = rng.gen_range(0..=3);
    let types: Vec<usize> = (0..n).map(|_| palette[rng.gen_range(0..palette.len())]).collect();
    let groups: Vec<usize> = types.iter().map(|t| tax.event_type(TypeId(*t)).group.0).collect();
    DailyEventSet {
        company: company.to_string(),
        date: d,
        events: Vec::new(),
        type_vector: BitVector::from_indices(tax.type_count(), types),
        group_vector: BitVector::from_indices(tax.group_count(), groups),
    }
}

pub fn random_series(rng: &mut impl Rng, company: &str, anchor: u64, w: usize, palette: &[usize]) -> EventSeries {
    let days = (0..=w).map(|i| random_day(rng, company, date(anchor - (w - i) as u64), palette)).collect();
    EventSeries::new(company, date(anchor), w, days).unwrap()
}

pub fn case(series: EventSeries) -> HistoricalCase {
    let reflection = Reflection {
        company: series.company.clone(),
        anchor_date: series.anchor_date,
        series_ref: SeriesRef { company: series.company.clone(), anchor_date: series.anchor_date, window: series.window },
        delta_info: String::new(),
        realized_move: Label::Up,
        reason: "r".into(),
        key_events: "k".into(),
    };
    HistoricalCase { reflection, series }
}
