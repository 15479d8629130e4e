//! Evidence rendering and next-day direction prediction.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::schema::text_of;
use crate::backends::{BackendError, GenRequest, SchemaId, TemplateId};
use crate::context::Context;
use crate::domain::{Direction, Event, EventChain, EventSeries};
use crate::prompts::PromptError;
use crate::retrieval::{render_series_brief, HistoricalCase};
use crate::{digest_hex, Sim};

pub const NO_REFERENCE: &str = "No historical reference available.";
pub const FIRST_OCCURRENCE_TAG: &str = "first occurrence";

#[derive(Error, Debug)]
pub enum InferenceError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Chains of the series' events plus the predecessor events they point to.
#[derive(Debug, Clone, Default)]
pub struct ChainContext {
    /// Keyed by head event id.
    pub chains: BTreeMap<String, EventChain>,
    /// Predecessor events by id.
    pub history: BTreeMap<String, Event>,
}

fn chain_summary(chain: &EventChain, history: &BTreeMap<String, Event>) -> String {
    if chain.predecessors.is_empty() {
        return FIRST_OCCURRENCE_TAG.to_string();
    }
    chain
        .predecessors
        .iter()
        .map(|l| match history.get(&l.event_id) {
            Some(e) => format!("{} {}: {}", l.date, e.event_type, e.description),
            None => format!("{} {}", l.date, l.event_id),
        })
        .collect::<Vec<_>>()
        .join(" <- ")
}

/// Chronological day sections, events in id order, each with its type,
/// description and (when `with_delta`) chain summary and incremental
/// information tag.
pub fn render_information(series: &EventSeries, ctx: &ChainContext, with_delta: bool) -> String {
    let mut out = String::new();
    for day in &series.days {
        out.push_str(&format!("--- {} ---\n", day.date));
        let mut events: Vec<&Event> = day.events.iter().collect();
        events.sort_by(|a, b| a.event_id.cmp(&b.event_id));
        if events.is_empty() {
            out.push_str("(no events)\n");
        }
        for e in events {
            out.push_str(&format!("* [{}] {}\n", e.qualified_type(), e.description));
            if !with_delta {
                continue;
            }
            match ctx.chains.get(&e.event_id) {
                Some(c) => {
                    out.push_str(&format!("  Evolution: {}\n", chain_summary(c, &ctx.history)));
                    out.push_str(&format!("  Incremental information ({}): {}\n", c.delta_polarity, c.delta_info));
                }
                None => out.push_str(&format!("  Evolution: {FIRST_OCCURRENCE_TAG}\n")),
            }
        }
    }
    out
}

/// Plain-text day sections for the summary and opinion representations.
pub fn render_text_days(days: &[(NaiveDate, Vec<String>)]) -> String {
    let mut out = String::new();
    for (date, lines) in days {
        out.push_str(&format!("--- {date} ---\n"));
        if lines.is_empty() {
            out.push_str("(no news)\n");
        }
        for l in lines {
            out.push_str(&format!("* {l}\n"));
        }
    }
    out
}

/// Incremental information of the anchor day's events.
pub fn render_delta_current(series: &EventSeries, ctx: &ChainContext) -> String {
    let mut lines: Vec<(String, String)> = series
        .anchor_day()
        .events
        .iter()
        .filter_map(|e| {
            ctx.chains
                .get(&e.event_id)
                .map(|c| (e.event_id.clone(), format!("[{}] {}: {}", e.event_type, c.delta_polarity, c.delta_info)))
        })
        .collect();
    lines.sort();
    lines.into_iter().map(|(_, l)| l).collect::<Vec<_>>().join("\n")
}

/// Numbered reference cases, or an explicit no-reference notice.
pub fn render_references(refs: &[(&HistoricalCase, Sim)]) -> String {
    if refs.is_empty() {
        return NO_REFERENCE.to_string();
    }
    let mut out = String::new();
    for (i, (case, sim)) in refs.iter().enumerate() {
        let r = &case.reflection;
        out.push_str(&format!(
            "[{}] {} sequence ending {} (similarity {:.4})\nEvents:\n{}Incremental information: {}\nSubsequent price movement: {}\nReason: {}\nKey events: {}\n\n",
            i + 1,
            r.company,
            r.anchor_date,
            sim,
            render_series_brief(&case.series),
            r.delta_info,
            r.realized_move,
            r.reason,
            r.key_events
        ));
    }
    out
}

/// The three evidence sources of one prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub company: String,
    pub anchor_date: NaiveDate,
    pub series_current: String,
    pub delta_info_current: String,
    pub reflections_ref: String,
    /// Record ids of the referenced reflections.
    pub reference_ids: Vec<String>,
}

impl EvidenceBundle {
    pub fn digest(&self) -> String {
        digest_hex(&serde_json::to_string(self).expect("bundle serializes"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    /// `None` records an abstention.
    pub direction: Option<Direction>,
    pub reason: String,
    pub evidence_digest: String,
    pub prompt_digest: String,
}

pub fn render_prompt(ctx: &Context, stock: &str, bundle: &EvidenceBundle) -> Result<String, PromptError> {
    ctx.prompts.predict.render(&[
        ("stock", stock),
        ("information", &bundle.series_current),
        ("hist_reflection", &bundle.reflections_ref),
    ])
}

fn parse_direction(s: &str) -> Option<Direction> {
    match s.trim().trim_matches(|c: char| !c.is_ascii_alphabetic()).to_ascii_lowercase().as_str() {
        "up" => Some(Direction::Up),
        "down" => Some(Direction::Down),
        _ => None,
    }
}

/// Fills the test prompt and parses the direction. A reply that never
/// names up or down within the retry budget becomes an abstention.
pub fn predict(ctx: &Context, stock: &str, bundle: &EvidenceBundle) -> Result<Prediction, InferenceError> {
    let prompt = render_prompt(ctx, stock, bundle)?;
    let prompt_digest = digest_hex(&prompt);
    let req = GenRequest::new(TemplateId::Predict, SchemaId::Predict, prompt)?;
    let parsed = ctx.llm.generate_with(&req, |v| {
        let movement = text_of(&v["Price movement"]);
        let dir = parse_direction(&movement).ok_or_else(|| format!("\"Price movement\" must be up or down, got {movement:?}"))?;
        Ok((dir, text_of(&v["Reason for price movement"])))
    });
    let (direction, reason) = match parsed {
        Ok((d, r)) => (Some(d), r),
        Err(BackendError::SchemaViolation { last_error, .. }) => {
            log::warn!("{} {}: abstention ({last_error})", bundle.company, bundle.anchor_date);
            (None, format!("abstained: {last_error}"))
        }
        Err(e) => return Err(e.into()),
    };
    Ok(Prediction { direction, reason, evidence_digest: bundle.digest(), prompt_digest })
}
