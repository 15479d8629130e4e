//! Reflection memory: causal explanations of realized moves.

use chrono::NaiveDate;
use thiserror::Error;

use crate::backends::schema::text_of;
use crate::backends::{BackendError, GenRequest, SchemaId, TemplateId};
use crate::context::Context;
use crate::domain::{DomainError, EventSeries, Label, PriceBar, Reflection};
use crate::inference::EvidenceBundle;
use crate::prompts::PromptError;
use crate::store::{Store, StoreError};

pub const NO_DELTA: &str = "no incremental information";

#[derive(Error, Debug)]
pub enum ReflectionError {
    #[error("no price bar for {company} on {date}")]
    MissingPrice { company: String, date: NaiveDate },
    #[error("evidence for {got} does not match series anchored at {expected}")]
    AnchorMismatch { expected: NaiveDate, got: NaiveDate },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Label of the return realized on `next_date`.
pub fn realized_move(store: &Store, company: &str, next_date: NaiveDate) -> Result<Label, ReflectionError> {
    let bar: PriceBar = store
        .get(&format!("{company}@{next_date}"))
        .ok_or_else(|| ReflectionError::MissingPrice { company: company.to_string(), date: next_date })?;
    Ok(bar.label()?)
}

/// Asks the model why the series was followed by `realized` and stores the
/// answer as a reflection anchored at the series' last day.
pub fn reflect(
    ctx: &Context,
    store: &Store,
    stock: &str,
    series: &EventSeries,
    information: &str,
    delta_info: &str,
    realized: Label,
) -> Result<Reflection, ReflectionError> {
    let prompt = ctx.prompts.reason.render(&[
        ("stock", stock),
        ("information", information),
        ("price_change", realized.as_str()),
    ])?;
    let req = GenRequest::new(TemplateId::Reason, SchemaId::Reason, prompt)?;
    let reply = ctx.llm.generate(&req)?;
    let reflection = Reflection {
        company: series.company.clone(),
        anchor_date: series.anchor_date,
        series_ref: series.reference(),
        delta_info: if delta_info.trim().is_empty() { NO_DELTA.to_string() } else { delta_info.to_string() },
        realized_move: realized,
        reason: text_of(&reply["Reason for price movement"]),
        key_events: text_of(&reply["Events causing the impact"]),
    };
    reflection.validate()?;
    store.put(&reflection)?;
    Ok(reflection)
}

/// Reflects on a test day once its prediction is frozen and its label is
/// revealed. The reflection is anchored at the test day, so it is visible
/// only to predictions for later days.
pub fn online_update(
    ctx: &Context,
    store: &Store,
    stock: &str,
    series: &EventSeries,
    evidence: &EvidenceBundle,
    realized: Label,
) -> Result<Reflection, ReflectionError> {
    if evidence.anchor_date != series.anchor_date {
        return Err(ReflectionError::AnchorMismatch { expected: series.anchor_date, got: evidence.anchor_date });
    }
    reflect(ctx, store, stock, series, &evidence.series_current, &evidence.delta_info_current, realized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Backends, Fallback, FixtureEntry, MockEmbedder, MockGenerator};
    use crate::domain::DailyEventSet;
    use crate::prompts::PromptSet;
    use crate::store::{AsOfQuery, RecordKind};
    use crate::taxonomy::Taxonomy;
    use serde_json::json;

    fn d(n: u64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 2, 1).unwrap() + chrono::Days::new(n)
    }

    fn series(anchor: u64) -> EventSeries {
        let tax = Taxonomy::standard();
        let days = (anchor - 1..=anchor).map(|n| DailyEventSet::empty("ACME", d(n), tax)).collect();
        EventSeries::new("ACME", d(anchor), 1, days).unwrap()
    }

    fn backends() -> Backends {
        let reply = json!({"Reason for price movement": "orders beat", "Events causing the impact": ["launch", "orders"]});
        Backends::new(
            Box::new(MockGenerator::new(vec![FixtureEntry::new(TemplateId::Reason, "", reply)], Fallback::None)),
            Box::new(MockEmbedder::new(4)),
            2,
        )
    }

    #[test]
    fn reflect_stores_fields() {
        let b = backends();
        let prompts = PromptSet::default();
        let ctx = Context::new(Taxonomy::standard(), &prompts, &b);
        let store = Store::in_memory();
        let r = reflect(&ctx, &store, "ACME Corp", &series(3), "info", "", Label::Up).unwrap();
        assert_eq!(r.reason, "orders beat");
        assert_eq!(r.key_events, "launch; orders");
        assert_eq!(r.delta_info, NO_DELTA);
        assert_eq!(r.anchor_date, d(3));
        let flat = reflect(&ctx, &store, "ACME Corp", &series(4), "info", "d", Label::Flat).unwrap();
        assert_eq!(flat.realized_move, Label::Flat);
        assert_eq!(store.count(RecordKind::Reflections), 2);
        let prompt = &b.llm.log()[0];
        assert_eq!(prompt.template_id, TemplateId::Reason);
    }

    #[test]
    fn price_change_placeholder_is_label() {
        let prompts = PromptSet::default();
        let p = prompts.reason.render(&[("stock", "S"), ("information", "I"), ("price_change", Label::Down.as_str())]).unwrap();
        assert!(p.contains("=== Predicted Direction of Tomorrow's Stock Price Change ===\ndown"));
    }

    #[test]
    fn missing_next_day_price() {
        let store = Store::in_memory();
        store.put(&PriceBar { company: "ACME".into(), date: d(5), daily_return: 0.02 }).unwrap();
        assert_eq!(realized_move(&store, "ACME", d(5)).unwrap(), Label::Up);
        assert!(matches!(realized_move(&store, "ACME", d(6)), Err(ReflectionError::MissingPrice { .. })));
    }

    #[test]
    fn online_update_grows_memory_for_later_days_only() {
        let b = backends();
        let prompts = PromptSet::default();
        let ctx = Context::new(Taxonomy::standard(), &prompts, &b);
        let store = Store::in_memory();
        let s = series(7);
        let evidence = EvidenceBundle {
            company: "ACME".into(),
            anchor_date: d(7),
            series_current: "info".into(),
            delta_info_current: "delta".into(),
            reflections_ref: String::new(),
            reference_ids: vec![],
        };
        online_update(&ctx, &store, "ACME", &s, &evidence, Label::Down).unwrap();
        assert_eq!(store.count(RecordKind::Reflections), 1);
        let visible_today: Vec<Reflection> = store.query(&AsOfQuery::new(RecordKind::Reflections).before(d(7)));
        let visible_next: Vec<Reflection> = store.query(&AsOfQuery::new(RecordKind::Reflections).before(d(8)));
        assert!(visible_today.is_empty());
        assert_eq!(visible_next.len(), 1);
        let wrong = EvidenceBundle { anchor_date: d(6), ..evidence };
        assert!(matches!(online_update(&ctx, &store, "ACME", &s, &wrong, Label::Up), Err(ReflectionError::AnchorMismatch { .. })));
    }
}
