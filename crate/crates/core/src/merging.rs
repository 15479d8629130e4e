//! Same-day consolidation of raw events.
//!
//! Raw events are bucketed by group, clustered by single-link cosine
//! similarity inside each bucket, and every multi-member cluster is handed
//! to the model, which decides which reports describe the same event and
//! writes one unified description per distinct event.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backends::schema::{index_of, text_of};
use crate::backends::{BackendError, GenRequest, SchemaId, TemplateId};
use crate::context::Context;
use crate::domain::{DailyEventSet, DomainError, Embedding, Event};
use crate::prompts::PromptError;
use crate::store::{Store, StoreError};

pub const DEFAULT_COSINE_THRESHOLD: f64 = 0.80;

#[derive(Error, Debug)]
pub enum MergeError {
    #[error("event {0} has no embedding")]
    MissingEmbedding(String),
    #[error("cluster input mixes groups {0:?} and {1:?}")]
    MixedGroups(String, String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub group: String,
    /// Sorted by event id.
    pub member_event_ids: Vec<String>,
    pub centroid: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeParams {
    pub cosine_threshold: f64,
}

impl Default for MergeParams {
    fn default() -> Self {
        MergeParams { cosine_threshold: DEFAULT_COSINE_THRESHOLD }
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Connected components of the graph joining vectors with cosine `>= tau`,
/// each sorted, ordered by smallest member index.
pub fn single_link(vectors: &[&Embedding], tau: f64) -> Vec<Vec<usize>> {
    let n = vectors.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if vectors[i].cosine(vectors[j]) >= tau {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                // keep the smaller index as root so cluster order follows input order
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        members.entry(root).or_default().push(i);
    }
    members.into_values().collect()
}

/// Single-link clusters of same-group events: two events share a cluster
/// iff a chain of pairwise cosines `>= tau` connects them. Clusters are
/// ordered by their smallest event id.
pub fn cluster_group(events: &[Event], tau: f64) -> Result<Vec<Cluster>, MergeError> {
    if events.is_empty() {
        return Ok(Vec::new());
    }
    let mut order: Vec<&Event> = events.iter().collect();
    order.sort_by(|a, b| a.event_id.cmp(&b.event_id));
    let group = order[0].group.clone();
    let mut vectors = Vec::with_capacity(order.len());
    for e in &order {
        if e.group != group {
            return Err(MergeError::MixedGroups(group, e.group.clone()));
        }
        vectors.push(e.embedding.as_ref().ok_or_else(|| MergeError::MissingEmbedding(e.event_id.clone()))?);
    }
    let components = single_link(&vectors, tau);
    Ok(components
        .into_iter()
        .map(|idx| {
            let dim = vectors[idx[0]].dim();
            let mut sum = vec![0f32; dim];
            for &i in &idx {
                for (s, x) in sum.iter_mut().zip(&vectors[i].vector) {
                    *s += x;
                }
            }
            Cluster {
                group: group.clone(),
                member_event_ids: idx.iter().map(|&i| order[i].event_id.clone()).collect(),
                centroid: Embedding::new(sum),
            }
        })
        .collect())
}

fn push_unique(into: &mut Vec<String>, from: &[String]) {
    for s in from {
        if !into.contains(s) {
            into.push(s.clone());
        }
    }
}

/// Combines member attributes into one event; the description and type are
/// filled by the caller.
fn combine(members: &[&Event]) -> Event {
    let mut out = members[0].clone();
    out.embedding = None;
    for m in &members[1..] {
        push_unique(&mut out.entities, &m.entities);
        push_unique(&mut out.industries, &m.industries);
        push_unique(&mut out.companies, &m.companies);
        if out.location.is_none() {
            out.location = m.location.clone();
        }
        for (k, v) in &m.open_params {
            out.open_params.entry(k.clone()).or_insert_with(|| v.clone());
        }
    }
    let docs: BTreeSet<&String> = members.iter().flat_map(|m| &m.source_docs).collect();
    out.source_docs = docs.into_iter().cloned().collect();
    out
}

fn render_cluster(members: &[Event]) -> String {
    members
        .iter()
        .enumerate()
        .map(|(i, e)| format!("[{}] {} (sources: {})\n    {}\n", i + 1, e.qualified_type(), e.source_docs.join(", "), e.description))
        .collect()
}

/// Splits or merges the members of one cluster into distinct events.
/// Singletons pass through without a model call. Members the model leaves
/// out are kept as they are.
pub fn refine_cluster(ctx: &Context, members: &[Event]) -> Result<Vec<Event>, MergeError> {
    if members.len() <= 1 {
        return Ok(members.to_vec());
    }
    let prompt = ctx
        .prompts
        .merge
        .render(&[("taxonomy", &ctx.taxonomy.render_listing()), ("cluster_events", &render_cluster(members))])?;
    let req = GenRequest::new(TemplateId::Merge, SchemaId::Merge, prompt)?;
    let n = members.len();
    let tax = ctx.taxonomy;
    let merged = ctx.llm.generate_with(&req, |v| {
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for item in v["events"].as_array().into_iter().flatten() {
            let idx: Vec<usize> = match item.get("members") {
                None | Some(Value::Null) => (0..n).filter(|&i| !seen[i]).collect(),
                Some(list) => list
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(|x| match index_of(x) {
                        Some(k) if (1..=n).contains(&k) => Ok(k - 1),
                        _ => Err(format!("member {x} is not a report number between 1 and {n}")),
                    })
                    .collect::<Result<_, _>>()?,
            };
            if idx.is_empty() {
                continue;
            }
            for &i in &idx {
                if std::mem::replace(&mut seen[i], true) {
                    return Err(format!("report {} appears in more than one event", i + 1));
                }
            }
            let group_of = members[idx[0]].group.clone();
            let ty = match text_of(&item["type"]) {
                t if t.is_empty() => tax.resolve_in_group(&group_of, &members[idx[0]].event_type),
                t => {
                    let g = text_of(&item["group"]);
                    tax.resolve_pair(Some(g.as_str()).filter(|g| !g.is_empty()), &t)
                }
            }
            .map_err(|e| e.to_string())?;
            let refs: Vec<&Event> = idx.iter().map(|&i| &members[i]).collect();
            let mut e = combine(&refs);
            e.group = tax.group(ty.group).name.clone();
            e.event_type = ty.name.clone();
            let description = text_of(&item["description"]);
            e.description = if description.is_empty() {
                let mut texts: Vec<String> = Vec::new();
                push_unique(&mut texts, &refs.iter().map(|m| m.description.clone()).collect::<Vec<_>>());
                texts.join(" ")
            } else {
                description
            };
            out.push(e);
        }
        for (i, m) in members.iter().enumerate() {
            if !seen[i] {
                let mut kept = m.clone();
                kept.embedding = None;
                out.push(kept);
            }
        }
        Ok(out)
    })?;
    Ok(merged)
}

fn group_order(ctx: &Context, name: &str) -> usize {
    ctx.taxonomy.group_by_name(name).map(|g| g.id.0).unwrap_or(usize::MAX)
}

/// Consolidates one company-day: embed, cluster within groups, refine,
/// re-embed, compute occurrence vectors and persist. Merged events get ids
/// `<company>@<date>#<n>`.
pub fn merge_day(
    ctx: &Context,
    store: &Store,
    company: &str,
    date: NaiveDate,
    raw: &[Event],
    params: &MergeParams,
) -> Result<DailyEventSet, MergeError> {
    let mut merged: Vec<Event> = Vec::new();
    if !raw.is_empty() {
        let texts: Vec<String> = raw.iter().map(|e| e.description.clone()).collect();
        let vectors = ctx.embedder.embed(&texts)?;
        let mut by_group: BTreeMap<(usize, String), Vec<Event>> = BTreeMap::new();
        for (e, v) in raw.iter().zip(vectors) {
            let mut e = e.clone();
            e.embedding = Some(v);
            by_group.entry((group_order(ctx, &e.group), e.group.clone())).or_default().push(e);
        }
        for events in by_group.values() {
            let lookup: BTreeMap<&str, &Event> = events.iter().map(|e| (e.event_id.as_str(), e)).collect();
            for cluster in cluster_group(events, params.cosine_threshold)? {
                let members: Vec<Event> =
                    cluster.member_event_ids.iter().map(|id| lookup[id.as_str()].clone()).collect();
                merged.extend(refine_cluster(ctx, &members)?);
            }
        }
        for (n, e) in merged.iter_mut().enumerate() {
            e.event_id = format!("{company}@{date}#{n}");
            e.time = date;
            e.embedding = None;
        }
        let texts: Vec<String> = merged.iter().map(|e| e.description.clone()).collect();
        for (e, v) in merged.iter_mut().zip(ctx.embedder.embed(&texts)?) {
            e.embedding = Some(v);
        }
    }
    let day = DailyEventSet::new(company, date, merged, ctx.taxonomy)?;
    for e in &day.events {
        store.put_event(company, e)?;
    }
    let mut stored = day.clone();
    for e in &mut stored.events {
        e.embedding = None;
    }
    store.put(&stored)?;
    Ok(day)
}
