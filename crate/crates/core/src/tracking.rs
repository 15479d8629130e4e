//! Cross-day event tracking.
//!
//! Each merged event looks for its direct predecessor among the same
//! company's events of the previous `w` trading days, inherits that
//! predecessor's chain (bounded by depth and window), and gets a statement
//! of what is new relative to the chain.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::schema::{index_of, text_of};
use crate::backends::{BackendError, GenRequest, SchemaId, TemplateId};
use crate::context::Context;
use crate::domain::{ChainLink, DailyEventSet, Event, EventChain, Polarity, MAX_CHAIN_DEPTH};
use crate::prompts::PromptError;
use crate::store::{AsOfQuery, RecordKind, Store, StoreError, StoredEvent};

pub const DEFAULT_TRACK_K: usize = 10;
/// Prefix of the incremental information of an event without history.
pub const FIRST_OCCURRENCE: &str = "first occurrence; no prior context.";

#[derive(Error, Debug)]
pub enum TrackingError {
    #[error("event {0} has no embedding")]
    MissingEmbedding(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingParams {
    pub k_track: usize,
}

impl Default for TrackingParams {
    fn default() -> Self {
        TrackingParams { k_track: DEFAULT_TRACK_K }
    }
}

/// Trading-day span `[start, end]` searched for predecessors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEvent {
    pub event: Event,
    pub cosine: f64,
}

/// Orders candidates by cosine (descending), then more recent date, then id.
pub fn rank_candidates(mut scored: Vec<ScoredEvent>, k: usize) -> Vec<ScoredEvent> {
    scored.sort_by(|a, b| {
        b.cosine
            .total_cmp(&a.cosine)
            .then_with(|| b.event.time.cmp(&a.event.time))
            .then_with(|| a.event.event_id.cmp(&b.event.event_id))
    });
    scored.truncate(k);
    scored
}

/// Top-`k` same-company events in `window` by embedding cosine.
pub fn candidate_predecessors(
    store: &Store,
    company: &str,
    event: &Event,
    window: TrackWindow,
    k: usize,
) -> Result<Vec<ScoredEvent>, TrackingError> {
    let query = event.embedding.as_ref().ok_or_else(|| TrackingError::MissingEmbedding(event.event_id.clone()))?;
    let q = AsOfQuery::new(RecordKind::Events).company(company).since(window.start).through(window.end);
    let mut scored = Vec::new();
    for StoredEvent { event: hist, .. } in store.events(&q) {
        let emb = hist.embedding.as_ref().ok_or_else(|| TrackingError::MissingEmbedding(hist.event_id.clone()))?;
        let cosine = query.cosine(emb);
        scored.push(ScoredEvent { event: hist, cosine });
    }
    Ok(rank_candidates(scored, k))
}

fn render_event(e: &Event) -> String {
    format!("{} [{}] {}", e.time, e.qualified_type(), e.description)
}

/// Asks the model which candidate, if any, is the direct predecessor.
/// Selections outside the list are retried; if the model keeps
/// hallucinating, no predecessor is linked.
pub fn link_predecessor<'c>(
    ctx: &Context,
    event: &Event,
    candidates: &'c [ScoredEvent],
) -> Result<Option<&'c Event>, TrackingError> {
    if candidates.is_empty() {
        return Ok(None);
    }
    let listing: String = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| format!("[{}] {}\n", i + 1, render_event(&c.event)))
        .collect();
    let prompt = ctx.prompts.track_link.render(&[("current_event", &render_event(event)), ("candidates", &listing)])?;
    let req = GenRequest::new(TemplateId::Track, SchemaId::TrackLink, prompt)?;
    let n = candidates.len();
    let picked = ctx.llm.generate_with(&req, |v| match &v["predecessor"] {
        serde_json::Value::Null => Ok(None),
        x => match index_of(x) {
            Some(0) => Ok(None),
            Some(k) if k <= n => Ok(Some(k - 1)),
            _ => Err(format!("predecessor {x} is not a candidate number between 1 and {n}, or 0")),
        },
    });
    match picked {
        Ok(choice) => Ok(choice.map(|i| &candidates[i].event)),
        Err(BackendError::SchemaViolation { last_error, .. }) => {
            log::warn!("{}: no usable predecessor selection ({last_error}); treating as unlinked", event.event_id);
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

/// `[p] ++ chain(p)`, cut at the first link dated before `window_start`
/// and at the maximum depth.
pub fn chain_links(predecessor: Option<(&Event, &[ChainLink])>, window_start: NaiveDate) -> Vec<ChainLink> {
    let Some((p, inherited)) = predecessor else {
        return Vec::new();
    };
    std::iter::once(ChainLink { event_id: p.event_id.clone(), date: p.time })
        .chain(inherited.iter().cloned())
        .take_while(|l| l.date >= window_start)
        .take(MAX_CHAIN_DEPTH)
        .collect()
}

fn render_chain(chain: &[Event]) -> String {
    if chain.is_empty() {
        return "(none: this is the first report of the event)".to_string();
    }
    chain.iter().map(|e| format!("- {}\n", render_event(e))).collect()
}

/// What is new in `event` relative to `chain` (most recent first), with
/// its polarity. Events without history are marked as first occurrences;
/// their polarity comes from the event alone.
pub fn extract_delta_info(ctx: &Context, event: &Event, chain: &[Event]) -> Result<(String, Polarity), TrackingError> {
    let prompt = ctx
        .prompts
        .track_delta
        .render(&[("current_event", &render_event(event)), ("chain", &render_chain(chain))])?;
    let req = GenRequest::new(TemplateId::Track, SchemaId::TrackDelta, prompt)?;
    let (text, polarity) = ctx.llm.generate_with(&req, |v| {
        let polarity = Polarity::parse_loose(&text_of(&v["polarity"]))
            .ok_or_else(|| format!("polarity {} is not one of more positive, more negative, neutral", v["polarity"]))?;
        Ok((text_of(&v["incremental_information"]), polarity))
    })?;
    if chain.is_empty() {
        return Ok((format!("{FIRST_OCCURRENCE} {text}"), polarity));
    }
    Ok((text, polarity))
}

/// Links, chains and analyzes one event, then persists its chain.
pub fn track_event(
    ctx: &Context,
    store: &Store,
    company: &str,
    event: &Event,
    window: TrackWindow,
    params: &TrackingParams,
) -> Result<EventChain, TrackingError> {
    let candidates = candidate_predecessors(store, company, event, window, params.k_track)?;
    let predecessor = link_predecessor(ctx, event, &candidates)?;
    let inherited: Vec<ChainLink> = predecessor
        .and_then(|p| store.get::<EventChain>(&p.event_id))
        .map(|c| c.predecessors)
        .unwrap_or_default();
    let links = chain_links(predecessor.map(|p| (p, inherited.as_slice())), window.start);
    let chain_events: Vec<Event> = links
        .iter()
        .filter_map(|l| store.get::<StoredEvent>(&l.event_id).map(|s| s.event))
        .collect();
    let (delta_info, delta_polarity) = extract_delta_info(ctx, event, &chain_events)?;
    let chain = EventChain {
        head: event.event_id.clone(),
        company: company.to_string(),
        date: event.time,
        predecessors: links,
        delta_info,
        delta_polarity,
    };
    store.put(&chain)?;
    Ok(chain)
}

/// Tracks every event of a merged day, in the day's event order.
pub fn track_day(
    ctx: &Context,
    store: &Store,
    day: &DailyEventSet,
    window: TrackWindow,
    params: &TrackingParams,
) -> Result<Vec<EventChain>, TrackingError> {
    day.events.iter().map(|e| track_event(ctx, store, &day.company, e, window, params)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Backends, Fallback, FixtureEntry, MockEmbedder, MockGenerator};
    use crate::domain::Embedding;
    use crate::prompts::PromptSet;
    use crate::taxonomy::Taxonomy;
    use serde_json::json;
    use std::collections::BTreeMap;

    fn d(n: u64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + chrono::Days::new(n)
    }

    fn ev(id: &str, day: u64, v: Vec<f32>) -> Event {
        Event {
            event_id: id.into(),
            group: "Corporate Equity".into(),
            event_type: "Share Decrease".into(),
            time: d(day),
            location: None,
            entities: vec![],
            industries: vec![],
            companies: vec!["ACME".into()],
            open_params: BTreeMap::new(),
            description: format!("report {id}"),
            source_docs: vec![format!("doc-{id}")],
            embedding: Some(Embedding::new(v)),
        }
    }

    fn at(cos: f32) -> Vec<f32> {
        vec![cos, (1.0 - cos * cos).sqrt()]
    }

    fn window(start: u64, end: u64) -> TrackWindow {
        TrackWindow { start: d(start), end: d(end) }
    }

    #[test]
    fn candidates_rank_and_confine() {
        let store = Store::in_memory();
        for e in [ev("a", 5, at(0.5)), ev("b", 6, at(0.9)), ev("c", 7, at(0.4)), ev("old", 1, at(1.0)), ev("today", 10, at(1.0))] {
            store.put_event("ACME", &e).unwrap();
        }
        store.put_event("OTHER", &ev("x", 8, at(1.0))).unwrap();
        let query = ev("q", 10, vec![1.0, 0.0]);
        let top2 = candidate_predecessors(&store, "ACME", &query, window(5, 9), 2).unwrap();
        let ids: Vec<_> = top2.iter().map(|c| c.event.event_id.as_str()).collect();
        assert_eq!(ids, vec!["b", "a"]);
        assert_eq!(candidate_predecessors(&store, "ACME", &query, window(5, 9), 5).unwrap().len(), 3);
        assert!(candidate_predecessors(&store, "ACME", &query, window(11, 12), 5).unwrap().is_empty());
    }

    #[test]
    fn ranking_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let scored: Vec<ScoredEvent> = (0..15)
                .map(|i| ScoredEvent {
                    event: ev(&format!("e{i:02}"), rng.gen_range(0..4), vec![1.0]),
                    cosine: [0.2, 0.5, 0.9][rng.gen_range(0..3)],
                })
                .collect();
            let k = rng.gen_range(1..8);
            let got: Vec<String> = rank_candidates(scored.clone(), k).into_iter().map(|c| c.event.event_id).collect();
            // oracle: repeatedly pick the best remaining
            let mut pool = scored;
            let mut want = Vec::new();
            while want.len() < k && !pool.is_empty() {
                let mut best = 0;
                for i in 1..pool.len() {
                    let (a, b) = (&pool[i], &pool[best]);
                    let better = a.cosine > b.cosine
                        || (a.cosine == b.cosine && a.event.time > b.event.time)
                        || (a.cosine == b.cosine && a.event.time == b.event.time && a.event.event_id < b.event.event_id);
                    if better {
                        best = i;
                    }
                }
                want.push(pool.remove(best).event.event_id);
            }
            assert_eq!(got, want);
        }
    }

    fn link(n: u64) -> ChainLink {
        ChainLink { event_id: format!("p{n}"), date: d(n) }
    }

    #[test]
    fn chain_reuse_truncates() {
        let p = ev("p9", 9, vec![1.0]);
        let deep: Vec<ChainLink> = (4..9).rev().map(link).collect(); // depth 5: days 8..4
        let chain = chain_links(Some((&p, &deep)), d(0));
        let expected: Vec<ChainLink> = std::iter::once(link(9)).chain(deep[..4].iter().cloned()).collect();
        assert_eq!(chain, expected);
        assert_eq!(chain.len(), 5);
        assert!(chain_links(None, d(0)).is_empty());
        assert_eq!(chain_links(Some((&p, &[])), d(0)), vec![link(9)]);
        // window start cuts older links
        assert_eq!(chain_links(Some((&p, &deep)), d(7)), vec![link(9), link(8), link(7)]);
    }

    fn ctx_with<T>(entries: Vec<FixtureEntry>, f: impl FnOnce(&Context, &Backends) -> T) -> T {
        let b = Backends::new(Box::new(MockGenerator::new(entries, Fallback::None)), Box::new(MockEmbedder::new(4)), 2);
        let prompts = PromptSet::default();
        let ctx = Context::new(Taxonomy::standard(), &prompts, &b);
        f(&ctx, &b)
    }

    fn scored(ids: &[&str]) -> Vec<ScoredEvent> {
        ids.iter().enumerate().map(|(i, id)| ScoredEvent { event: ev(id, i as u64, vec![1.0]), cosine: 0.5 }).collect()
    }

    #[test]
    fn linking() {
        ctx_with(vec![], |ctx, b| {
            assert_eq!(link_predecessor(ctx, &ev("q", 9, vec![1.0]), &[]).unwrap(), None);
            assert_eq!(b.llm.call_count(), 0);
        });
        ctx_with(vec![FixtureEntry::new(TemplateId::Track, "", json!({"predecessor": 2}))], |ctx, _| {
            let c = scored(&["a", "b", "c"]);
            assert_eq!(link_predecessor(ctx, &ev("q", 9, vec![1.0]), &c).unwrap().unwrap().event_id, "b");
        });
        ctx_with(vec![FixtureEntry::new(TemplateId::Track, "", json!({"predecessor": 7}))], |ctx, b| {
            let c = scored(&["a", "b"]);
            assert_eq!(link_predecessor(ctx, &ev("q", 9, vec![1.0]), &c).unwrap(), None);
            assert_eq!(b.llm.call_count(), 3);
        });
    }

    #[test]
    fn delta_info_polarity() {
        let reply = json!({"incremental_information": "another reduction, nothing new", "polarity": "neutral"});
        ctx_with(vec![FixtureEntry::new(TemplateId::Track, "", reply)], |ctx, _| {
            let e = ev("q", 9, vec![1.0]);
            let (text, pol) = extract_delta_info(ctx, &e, &[ev("p", 8, vec![1.0])]).unwrap();
            assert_eq!((text.as_str(), pol), ("another reduction, nothing new", Polarity::Neutral));
            let (text, _) = extract_delta_info(ctx, &e, &[]).unwrap();
            assert!(text.starts_with(FIRST_OCCURRENCE));
        });
        let reply = json!({"incremental_information": "application progress beat expectations", "polarity": "more positive"});
        ctx_with(vec![FixtureEntry::new(TemplateId::Track, "", reply)], |ctx, _| {
            let (_, pol) = extract_delta_info(ctx, &ev("q", 9, vec![1.0]), &[ev("p", 8, vec![1.0])]).unwrap();
            assert_eq!(pol, Polarity::MorePositive);
        });
    }

    #[test]
    fn track_event_reuses_stored_chain() {
        let entries = vec![
            FixtureEntry::new(TemplateId::Track, "Candidate Earlier", json!({"predecessor": 1})),
            FixtureEntry::new(TemplateId::Track, "Earlier Developments", json!({"incremental_information": "more", "polarity": "more negative"})),
        ];
        ctx_with(entries, |ctx, _| {
            let store = Store::in_memory();
            let params = TrackingParams::default();
            let mut chains = Vec::new();
            for day in 0..8u64 {
                let e = ev(&format!("e{day}"), day, vec![1.0, 0.0]);
                store.put_event("ACME", &e).unwrap();
                let w = window(day.saturating_sub(5), day.saturating_sub(1));
                let w = if day == 0 { window(1, 0) } else { w };
                chains.push(track_event(ctx, &store, "ACME", &e, w, &params).unwrap());
            }
            assert!(chains[0].is_first_occurrence());
            assert!(chains[0].delta_info.starts_with(FIRST_OCCURRENCE));
            for c in &chains {
                c.validate().unwrap();
            }
            let last = &chains[7];
            assert_eq!(last.depth(), 5);
            let ids: Vec<_> = last.predecessors.iter().map(|l| l.event_id.as_str()).collect();
            assert_eq!(ids, vec!["e6", "e5", "e4", "e3", "e2"]);
            // reuse consistency: the tail beyond the predecessor is a prefix of its chain
            let prev: EventChain = store.get("e6").unwrap();
            assert!(prev.predecessors.starts_with(&last.predecessors[1..]));
            assert_eq!(last.delta_polarity, Polarity::MoreNegative);
        });
    }
}
