//! News document to raw structured events.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backends::schema::{index_of, text_of};
use crate::backends::{BackendError, GenRequest, SchemaId, TemplateId};
use crate::context::Context;
use crate::domain::{DocSummary, Event, NewsDoc};
use crate::prompts::PromptError;
use crate::taxonomy::EventType;

#[derive(Error, Debug)]
pub enum ExtractionError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Events extracted from one document, before merging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEventBatch {
    pub doc_id: String,
    pub company: String,
    pub date: NaiveDate,
    pub events: Vec<Event>,
}

/// An extracted event whose type has not been resolved yet.
struct Pending {
    group: Option<String>,
    type_name: String,
    event: Event,
}

fn strings(v: &Value) -> Vec<String> {
    match v {
        Value::Array(items) => items.iter().map(text_of).filter(|s| !s.is_empty()).collect(),
        Value::Null => Vec::new(),
        other => {
            let s = text_of(other);
            if s.is_empty() {
                Vec::new()
            } else {
                vec![s]
            }
        }
    }
}

fn optional_text(v: &Value) -> Option<String> {
    let s = text_of(v);
    match s.to_ascii_lowercase().as_str() {
        "" | "null" | "none" | "n/a" => None,
        _ => Some(s),
    }
}

/// Document block of the extraction prompt. The id line ends with a newline,
/// so `Document ID: <id>\n` identifies one document in scripted fixtures.
pub fn render_document(doc: &NewsDoc) -> String {
    format!("Document ID: {}\nCompany: {}\nDate: {}\nTitle: {}\n\n{}", doc.doc_id, doc.company, doc.date, doc.title, doc.body)
}

fn pending_from(doc: &NewsDoc, v: &Value) -> Pending {
    let mut companies = strings(&v["companies"]);
    if !companies.contains(&doc.company) {
        companies.push(doc.company.clone());
    }
    let open_params: BTreeMap<String, String> = v["open_params"]
        .as_object()
        .map(|m| m.iter().map(|(k, x)| (k.clone(), text_of(x))).collect())
        .unwrap_or_default();
    let mut description = text_of(&v["description"]);
    if description.is_empty() {
        description = doc.title.clone();
    }
    Pending {
        group: optional_text(&v["group"]),
        type_name: text_of(&v["type"]),
        event: Event {
            event_id: String::new(),
            group: String::new(),
            event_type: String::new(),
            time: doc.date,
            location: optional_text(&v["location"]),
            entities: strings(&v["entities"]),
            industries: strings(&v["industries"]),
            companies,
            open_params,
            description,
            source_docs: vec![doc.doc_id.clone()],
            embedding: None,
        },
    }
}

fn assign(event: &mut Event, ctx: &Context, t: &EventType) {
    event.group = ctx.taxonomy.group(t.group).name.clone();
    event.event_type = t.name.clone();
}

/// Asks the model once to re-pick types that failed to resolve. Returns
/// the indices (into `unresolved`) that were fixed.
fn recalibrate(ctx: &Context, unresolved: &mut [Pending]) -> Result<Vec<usize>, ExtractionError> {
    let listing: String = unresolved
        .iter()
        .enumerate()
        .map(|(i, p)| {
            format!(
                "[{}] type: {} (group: {})\n    {}\n",
                i + 1,
                p.type_name,
                p.group.as_deref().unwrap_or("none"),
                p.event.description
            )
        })
        .collect();
    let prompt = ctx
        .prompts
        .recalibrate
        .render(&[("taxonomy", &ctx.taxonomy.render_listing()), ("events", &listing)])?;
    let req = GenRequest::new(TemplateId::Extract, SchemaId::Recalibration, prompt)?;
    let reply = ctx.llm.generate(&req)?;
    let mut fixed = Vec::new();
    for c in reply["corrections"].as_array().into_iter().flatten() {
        let Some(n) = index_of(&c["event"]).filter(|n| (1..=unresolved.len()).contains(n)) else {
            continue;
        };
        let group = optional_text(&c["group"]);
        if let Ok(t) = ctx.taxonomy.resolve_pair(group.as_deref(), &text_of(&c["type"])) {
            assign(&mut unresolved[n - 1].event, ctx, t);
            fixed.push(n - 1);
        }
    }
    fixed.sort_unstable();
    fixed.dedup();
    Ok(fixed)
}

/// Extracts the events reported by one document. Types that do not resolve
/// get one recalibration pass and are dropped if still invalid.
pub fn extract_events(ctx: &Context, doc: &NewsDoc) -> Result<RawEventBatch, ExtractionError> {
    let prompt = ctx
        .prompts
        .extract
        .render(&[("taxonomy", &ctx.taxonomy.render_listing()), ("document", &render_document(doc))])?;
    let req = GenRequest::new(TemplateId::Extract, SchemaId::Extraction, prompt)?;
    let reply = ctx.llm.generate(&req)?;

    // (position in reply, event) so recalibrated events keep their place
    let mut resolved: Vec<(usize, Event)> = Vec::new();
    let mut unresolved: Vec<(usize, Pending)> = Vec::new();
    for (i, v) in reply["events"].as_array().into_iter().flatten().enumerate() {
        let mut p = pending_from(doc, v);
        match ctx.taxonomy.resolve_pair(p.group.as_deref(), &p.type_name) {
            Ok(t) => {
                assign(&mut p.event, ctx, t);
                resolved.push((i, p.event));
            }
            Err(_) => unresolved.push((i, p)),
        }
    }
    if !unresolved.is_empty() {
        let (positions, mut pending): (Vec<usize>, Vec<Pending>) = unresolved.into_iter().unzip();
        let fixed = recalibrate(ctx, &mut pending)?;
        for (k, p) in pending.into_iter().enumerate() {
            if fixed.binary_search(&k).is_ok() {
                resolved.push((positions[k], p.event));
            } else {
                log::warn!("{}: dropping event with unknown type {:?}", doc.doc_id, p.type_name);
            }
        }
        resolved.sort_by_key(|(i, _)| *i);
    }
    let events = resolved
        .into_iter()
        .enumerate()
        .map(|(n, (_, mut e))| {
            e.event_id = format!("{}#{}", doc.doc_id, n);
            e
        })
        .collect();
    Ok(RawEventBatch { doc_id: doc.doc_id.clone(), company: doc.company.clone(), date: doc.date, events })
}

/// Plain-text digest of a document used by the summary representation:
/// its event descriptions, or the title when nothing was extracted.
pub fn summarize(doc: &NewsDoc, batch: &RawEventBatch) -> DocSummary {
    let summary = if batch.events.is_empty() {
        doc.title.clone()
    } else {
        batch.events.iter().map(|e| e.description.as_str()).collect::<Vec<_>>().join(" ")
    };
    DocSummary { doc_id: doc.doc_id.clone(), company: doc.company.clone(), date: doc.date, summary }
}

/// Union of the raw events of one company-day, in doc_id order. No
/// deduplication happens here.
pub fn collect_daily_raw(company: &str, date: NaiveDate, batches: &[RawEventBatch]) -> Vec<Event> {
    let mut mine: Vec<&RawEventBatch> = batches.iter().filter(|b| b.company == company && b.date == date).collect();
    mine.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    mine.into_iter().flat_map(|b| b.events.iter().cloned()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Backends, Fallback, FixtureEntry, MockEmbedder, MockGenerator};
    use crate::prompts::PromptSet;
    use crate::taxonomy::Taxonomy;
    use serde_json::json;

    fn doc(id: &str) -> NewsDoc {
        NewsDoc {
            doc_id: id.into(),
            company: "ACME".into(),
            date: NaiveDate::from_ymd_opt(2024, 3, 4).unwrap(),
            title: format!("title {id}"),
            body: "body".into(),
        }
    }

    fn backends(entries: Vec<FixtureEntry>) -> Backends {
        Backends::new(Box::new(MockGenerator::new(entries, Fallback::None)), Box::new(MockEmbedder::new(8)), 2)
    }

    fn run(entries: Vec<FixtureEntry>, d: &NewsDoc) -> (Result<RawEventBatch, ExtractionError>, usize) {
        let b = backends(entries);
        let prompts = PromptSet::default();
        let ctx = Context::new(Taxonomy::standard(), &prompts, &b);
        let out = extract_events(&ctx, d);
        (out, b.llm.call_count())
    }

    #[test]
    fn product_launch_is_extracted() {
        let reply = json!({"events": [{
            "group": "Products and Market", "type": "New Product Launch", "location": "Hefei",
            "entities": ["ACME"], "industries": ["AI"], "companies": [],
            "open_params": {"product": "Spark X"}, "description": "ACME launched Spark X."
        }]});
        let (out, calls) = run(vec![FixtureEntry::new(TemplateId::Extract, "d1", reply)], &doc("d1"));
        let batch = out.unwrap();
        assert_eq!(calls, 1);
        assert_eq!(batch.events.len(), 1);
        let e = &batch.events[0];
        assert_eq!((e.group.as_str(), e.event_type.as_str()), ("Products and Market", "New Product Launch"));
        assert_eq!(e.companies, vec!["ACME".to_string()]);
        assert_eq!(e.source_docs, vec!["d1".to_string()]);
        assert_eq!(e.event_id, "d1#0");
        assert_eq!(e.open_params["product"], "Spark X");
        e.validate(Taxonomy::standard()).unwrap();
    }

    #[test]
    fn empty_reply_is_empty_batch() {
        let (out, _) = run(vec![FixtureEntry::new(TemplateId::Extract, "", json!({"events": []}))], &doc("d2"));
        assert!(out.unwrap().events.is_empty());
    }

    #[test]
    fn unknown_type_recalibrated_or_dropped() {
        let bad = json!({"events": [
            {"type": "Launch Party", "description": "party"},
            {"type": "Fiscal Policy", "description": "budget"},
        ]});
        // recalibration fixes it
        let fixed = vec![
            FixtureEntry::new(TemplateId::Extract, "News Document", bad.clone()),
            FixtureEntry::new(TemplateId::Extract, "Recategorize", json!({"corrections": [
                {"event": 1, "group": "Products and Market", "type": "New Product Launch"}
            ]})),
        ];
        let (out, calls) = run(fixed, &doc("d3"));
        let batch = out.unwrap();
        assert_eq!(calls, 2);
        let types: Vec<_> = batch.events.iter().map(|e| e.event_type.as_str()).collect();
        assert_eq!(types, vec!["New Product Launch", "Fiscal Policy"]);

        // recalibration still invalid: dropped
        let still_bad = vec![
            FixtureEntry::new(TemplateId::Extract, "News Document", bad),
            FixtureEntry::new(TemplateId::Extract, "Recategorize", json!({"corrections": [
                {"event": 1, "type": "Launch Party"}
            ]})),
        ];
        let (out, calls) = run(still_bad, &doc("d3"));
        let batch = out.unwrap();
        assert_eq!(calls, 2);
        assert_eq!(batch.events.len(), 1);
        assert_eq!(batch.events[0].event_id, "d3#0");
        assert_eq!(batch.events[0].event_type, "Fiscal Policy");
    }

    #[test]
    fn shared_type_name_uses_group() {
        let reply = json!({"events": [{"group": "Other Financial Market Performance", "type": "Capital Flows", "description": "flows"}]});
        let (out, _) = run(vec![FixtureEntry::new(TemplateId::Extract, "", reply)], &doc("d4"));
        assert_eq!(out.unwrap().events[0].group, "Other Financial Market Performance");
    }

    #[test]
    fn daily_union_keeps_duplicates_in_doc_order() {
        let mk = |id: &str, n: usize| {
            let d = doc(id);
            let events = (0..n)
                .map(|i| Event {
                    event_id: format!("{id}#{i}"),
                    group: "Macroeconomic Finance".into(),
                    event_type: "Fiscal Policy".into(),
                    time: d.date,
                    location: None,
                    entities: vec![],
                    industries: vec![],
                    companies: vec![],
                    open_params: BTreeMap::new(),
                    description: "same".into(),
                    source_docs: vec![id.into()],
                    embedding: None,
                })
                .collect();
            RawEventBatch { doc_id: id.into(), company: d.company, date: d.date, events }
        };
        let batches = vec![mk("c", 1), mk("a", 2), mk("b", 0)];
        let raw = collect_daily_raw("ACME", doc("x").date, &batches);
        let ids: Vec<_> = raw.iter().map(|e| e.event_id.as_str()).collect();
        assert_eq!(ids, vec!["a#0", "a#1", "c#0"]);
        assert!(collect_daily_raw("OTHER", doc("x").date, &batches).is_empty());
        assert_eq!(summarize(&doc("b"), &batches[2]).summary, "title b");
    }
}
