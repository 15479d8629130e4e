use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;

use crate::domain::PriceBar;

/// Trading days of one company, taken from its price bars.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TradingCalendar {
    days: Vec<NaiveDate>,
}

impl TradingCalendar {
    pub fn new(days: impl IntoIterator<Item = NaiveDate>) -> Self {
        let set: BTreeSet<NaiveDate> = days.into_iter().collect();
        TradingCalendar { days: set.into_iter().collect() }
    }

    /// One calendar per company.
    pub fn per_company(bars: &[PriceBar]) -> BTreeMap<String, TradingCalendar> {
        let mut days: BTreeMap<String, Vec<NaiveDate>> = BTreeMap::new();
        for b in bars {
            days.entry(b.company.clone()).or_default().push(b.date);
        }
        days.into_iter().map(|(c, d)| (c, TradingCalendar::new(d))).collect()
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn position(&self, d: NaiveDate) -> Option<usize> {
        self.days.binary_search(&d).ok()
    }

    /// The trading day `n` days before `d`.
    pub fn back(&self, d: NaiveDate, n: usize) -> Option<NaiveDate> {
        let i = self.position(d)?;
        i.checked_sub(n).map(|j| self.days[j])
    }

    pub fn next(&self, d: NaiveDate) -> Option<NaiveDate> {
        let i = self.position(d)?;
        self.days.get(i + 1).copied()
    }

    /// Trading days `d - n ..= d`, oldest first, if all exist.
    pub fn window_ending(&self, d: NaiveDate, n: usize) -> Option<&[NaiveDate]> {
        let i = self.position(d)?;
        let start = i.checked_sub(n)?;
        Some(&self.days[start..=i])
    }

    pub fn between(&self, start: NaiveDate, end: NaiveDate) -> impl Iterator<Item = NaiveDate> + '_ {
        self.days.iter().copied().filter(move |d| start <= *d && *d <= end)
    }
}
