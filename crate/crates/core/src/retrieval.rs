//! Historical sequence retrieval.
//!
//! Each day of a series is encoded by its type-level and group-level
//! occurrence bitmaps. Two days compare by a weighted blend of the two
//! Jaccard indices, and two series by the mean over aligned offsets
//! `0..w` counted back from their anchors. Coarse screening ranks every
//! eligible historical series by that score; an LLM pass then keeps the
//! candidates worth referencing.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, GenRequest, Llm, SchemaId, TemplateId};
use crate::backends::schema::index_of;
use crate::domain::{BitVector, DailyEventSet, DomainError, EventSeries, Reflection};
use crate::prompts::{PromptError, Template};
use crate::scalar::SimScalar;
use crate::ExactSim;

pub const DEFAULT_ALPHA: f64 = 0.7;
pub const DEFAULT_COARSE_K: usize = 5;

#[derive(Error, Debug)]
pub enum RetrievalError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("series windows differ ({0} vs {1})")]
    WindowMismatch(usize, usize),
    #[error("alpha {0} outside [0, 1]")]
    BadAlpha(f64),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityParams {
    pub alpha: f64,
    pub window: usize,
    pub coarse_k: usize,
}

impl Default for SimilarityParams {
    fn default() -> Self {
        SimilarityParams { alpha: DEFAULT_ALPHA, window: crate::domain::DEFAULT_WINDOW, coarse_k: DEFAULT_COARSE_K }
    }
}

impl SimilarityParams {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(RetrievalError::BadAlpha(self.alpha));
        }
        Ok(())
    }
}

/// Candidate pool used for historical references.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Every company's history, ranked by sequence similarity.
    #[default]
    Full,
    /// Only the current company's history, ranked by similarity.
    SameCompany,
    /// The most recent eligible sequences, ignoring similarity.
    RecentPeriod,
    /// No historical reference.
    None,
}

/// `|a ∧ b| / |a ∨ b|`, with two empty vectors scoring 1.
pub fn jaccard<S: SimScalar>(a: &BitVector, b: &BitVector) -> Result<S, DomainError> {
    let (inter, union) = a.overlap(b)?;
    if union == 0 {
        return Ok(S::one());
    }
    Ok(S::from_counts(inter, union))
}

/// `alpha * TypeSim + (1 - alpha) * GroupSim` on raw vectors.
pub fn daily_sim_vectors<S: SimScalar>(
    types_a: &BitVector,
    groups_a: &BitVector,
    types_b: &BitVector,
    groups_b: &BitVector,
    alpha: &S,
) -> Result<S, DomainError> {
    let t: S = jaccard(types_a, types_b)?;
    let g: S = jaccard(groups_a, groups_b)?;
    Ok(alpha.clone() * t + (S::one() - alpha.clone()) * g)
}

pub fn daily_sim<S: SimScalar>(a: &DailyEventSet, b: &DailyEventSet, alpha: &S) -> Result<S, DomainError> {
    daily_sim_vectors(&a.type_vector, &a.group_vector, &b.type_vector, &b.group_vector, alpha)
}

/// Mean daily similarity over offsets `0..w` back from each anchor.
pub fn seq_sim<S: SimScalar>(a: &EventSeries, b: &EventSeries, alpha: &S) -> Result<S, RetrievalError> {
    if a.window != b.window {
        return Err(RetrievalError::WindowMismatch(a.window, b.window));
    }
    let w = a.window;
    if w == 0 {
        return Ok(daily_sim(a.anchor_day(), b.anchor_day(), alpha)?);
    }
    let mut total = S::zero();
    for k in 0..w {
        total = total + daily_sim(a.day_back(k), b.day_back(k), alpha)?;
    }
    Ok(total / S::from_counts(w, 1))
}

/// A reflection together with the series it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalCase {
    pub reflection: Reflection,
    pub series: EventSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Position in the memory slice passed to [`coarse_screen`].
    pub index: usize,
    pub similarity: f64,
}

/// Top-K historical cases for `current` under `strategy`.
///
/// Only cases anchored strictly before the current anchor are eligible.
/// Ranking is by exact similarity (descending), then more recent anchor,
/// then company name ascending.
pub fn coarse_screen(
    current: &EventSeries,
    memory: &[HistoricalCase],
    params: &SimilarityParams,
    strategy: Strategy,
) -> Result<Vec<Candidate>, RetrievalError> {
    coarse_screen_with::<ExactSim>(current, memory, params, strategy)
}

/// [`coarse_screen`] with the ranking computed in scalar type `S`.
pub fn coarse_screen_with<S: SimScalar>(
    current: &EventSeries,
    memory: &[HistoricalCase],
    params: &SimilarityParams,
    strategy: Strategy,
) -> Result<Vec<Candidate>, RetrievalError> {
    params.validate()?;
    if strategy == Strategy::None || params.coarse_k == 0 {
        return Ok(Vec::new());
    }
    let alpha = S::from_weight(params.alpha);
    let mut scored: Vec<(usize, S)> = Vec::new();
    for (i, case) in memory.iter().enumerate() {
        if case.reflection.anchor_date >= current.anchor_date {
            continue;
        }
        if strategy == Strategy::SameCompany && case.reflection.company != current.company {
            continue;
        }
        scored.push((i, seq_sim(current, &case.series, &alpha)?));
    }
    let by_recency = |a: &HistoricalCase, b: &HistoricalCase| {
        b.reflection
            .anchor_date
            .cmp(&a.reflection.anchor_date)
            .then_with(|| a.reflection.company.cmp(&b.reflection.company))
    };
    if strategy == Strategy::RecentPeriod {
        scored.sort_by(|(i, _), (j, _)| by_recency(&memory[*i], &memory[*j]));
    } else {
        scored.sort_by(|(i, si), (j, sj)| {
            sj.partial_cmp(si).unwrap_or(Ordering::Equal).then_with(|| by_recency(&memory[*i], &memory[*j]))
        });
    }
    scored.truncate(params.coarse_k);
    Ok(scored.into_iter().map(|(index, s)| Candidate { index, similarity: s.as_f64() }).collect())
}

/// One line per event of each day, oldest day first.
pub fn render_series_brief(series: &EventSeries) -> String {
    let mut out = String::new();
    for day in &series.days {
        if day.events.is_empty() {
            out.push_str(&format!("{}: no events\n", day.date));
            continue;
        }
        for e in &day.events {
            out.push_str(&format!("{}: [{}] {}\n", day.date, e.qualified_type(), e.description));
        }
    }
    out
}

/// Renders the numbered candidate list shown to the filtering model.
pub fn render_candidates(memory: &[HistoricalCase], candidates: &[Candidate]) -> String {
    let mut out = String::new();
    for (n, c) in candidates.iter().enumerate() {
        let case = &memory[c.index];
        out.push_str(&format!(
            "[{}] {} sequence ending {} (similarity {:.4})\n{}\n",
            n + 1,
            case.series.company,
            case.series.anchor_date,
            c.similarity,
            render_series_brief(&case.series)
        ));
    }
    out
}

/// Asks the model which coarse candidates are genuine references.
/// Returns the kept candidates in their original order. No call is made
/// for an empty candidate list; selections outside the list are retried.
pub fn fine_filter(
    llm: &Llm,
    template: &Template,
    current: &EventSeries,
    memory: &[HistoricalCase],
    candidates: &[Candidate],
) -> Result<Vec<Candidate>, RetrievalError> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let prompt = template.render(&[
        ("current_series", &render_series_brief(current)),
        ("candidates", &render_candidates(memory, candidates)),
    ])?;
    let req = GenRequest::new(TemplateId::RetrieveFilter, SchemaId::RetrieveFilter, prompt)?;
    let n = candidates.len();
    let mut keep = llm.generate_with(&req, |v| {
        v["selected"]
            .as_array()
            .into_iter()
            .flatten()
            .map(|x| match index_of(x) {
                Some(k) if (1..=n).contains(&k) => Ok(k - 1),
                _ => Err(format!("selection {x} is not a candidate number between 1 and {n}")),
            })
            .collect::<Result<Vec<usize>, String>>()
    })?;
    keep.sort_unstable();
    keep.dedup();
    Ok(keep.into_iter().map(|k| candidates[k].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Fallback, FixtureEntry, MockGenerator};
    use crate::domain::{Label, SeriesRef};
    use crate::prompts::PromptSet;
    use chrono::NaiveDate;
    use num_rational::Rational64;
    use serde_json::json;

    fn bits(len: usize, ones: &[usize]) -> BitVector {
        BitVector::from_indices(len, ones.iter().copied())
    }

    fn day(company: &str, date: NaiveDate, types: &[usize], groups: &[usize]) -> DailyEventSet {
        DailyEventSet {
            company: company.into(),
            date,
            events: vec![],
            type_vector: bits(57, types),
            group_vector: bits(13, groups),
        }
    }

    fn date(n: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + chrono::Days::new(n as u64)
    }

    fn series(company: &str, anchor: u32, days: Vec<(&[usize], &[usize])>) -> EventSeries {
        let w = days.len() - 1;
        let ds = days
            .into_iter()
            .enumerate()
            .map(|(i, (t, g))| day(company, date(anchor - w as u32 + i as u32), t, g))
            .collect();
        EventSeries::new(company, date(anchor), w, ds).unwrap()
    }

    #[test]
    fn jaccard_examples() {
        let a = bits(57, &[1, 3, 5]);
        assert_eq!(jaccard::<f64>(&a, &a).unwrap(), 1.0);
        assert_eq!(jaccard::<f64>(&a, &bits(57, &[3, 5, 7])).unwrap(), 0.5);
        assert_eq!(jaccard::<Rational64>(&a, &bits(57, &[3, 5, 7])).unwrap(), Rational64::new(1, 2));
        assert_eq!(jaccard::<f64>(&bits(57, &[]), &bits(57, &[])).unwrap(), 1.0);
        assert_eq!(jaccard::<f64>(&bits(57, &[]), &a).unwrap(), 0.0);
        assert!(jaccard::<f64>(&a, &bits(13, &[])).is_err());
    }

    #[test]
    fn daily_sim_examples() {
        // TypeSim = 0.5, GroupSim = 1.0
        let (ta, tb) = (bits(57, &[1, 3, 5]), bits(57, &[3, 5, 7]));
        let g = bits(13, &[0, 2]);
        let s: f64 = daily_sim_vectors(&ta, &g, &tb, &g, &0.7).unwrap();
        assert!((s - 0.65).abs() < 1e-15);
        let exact: Rational64 = daily_sim_vectors(&ta, &g, &tb, &g, &Rational64::from_weight(0.7)).unwrap();
        assert_eq!(exact, Rational64::new(13, 20));
        let only_types: f64 = daily_sim_vectors(&ta, &g, &tb, &bits(13, &[4]), &1.0).unwrap();
        assert_eq!(only_types, 0.5);
        assert_eq!(daily_sim_vectors::<f64>(&ta, &g, &ta, &g, &0.7).unwrap(), 1.0);
    }

    #[test]
    fn seq_sim_examples() {
        // offsets 0 and 1 score 0.65 and 0.35; the oldest day (offset 2) is not averaged
        let a = series("A", 10, vec![(&[9], &[9]), (&[1, 2], &[0]), (&[1, 3, 5], &[0, 2])]);
        let b = series("B", 20, vec![(&[], &[]), (&[1, 2, 3, 4], &[1]), (&[3, 5, 7], &[0, 2])]);
        // offset 1: TypeSim 2/4, GroupSim 0 -> 0.7 * 0.5 = 0.35
        let s: Rational64 = seq_sim(&a, &b, &Rational64::from_weight(0.7)).unwrap();
        assert_eq!(s, Rational64::new(1, 2));
        let f: f64 = seq_sim(&a, &b, &0.7).unwrap();
        assert!((f - 0.5).abs() < 1e-15);
        assert_eq!(seq_sim::<f64>(&a, &a, &0.7).unwrap(), 1.0);
        let disjoint = series("C", 30, vec![(&[8], &[8]), (&[10], &[10]), (&[11], &[11])]);
        assert_eq!(seq_sim::<f64>(&a, &disjoint, &0.7).unwrap(), 0.0);
        let short = series("D", 30, vec![(&[1], &[1]), (&[1], &[1])]);
        assert!(matches!(seq_sim::<f64>(&a, &short, &0.7), Err(RetrievalError::WindowMismatch(2, 1))));
    }

    fn case(s: EventSeries) -> HistoricalCase {
        HistoricalCase {
            reflection: Reflection {
                company: s.company.clone(),
                anchor_date: s.anchor_date,
                series_ref: SeriesRef { company: s.company.clone(), anchor_date: s.anchor_date, window: s.window },
                delta_info: "d".into(),
                realized_move: Label::Up,
                reason: "r".into(),
                key_events: "k".into(),
            },
            series: s,
        }
    }

    fn params(k: usize) -> SimilarityParams {
        SimilarityParams { alpha: 0.7, window: 1, coarse_k: k }
    }

    #[test]
    fn coarse_screen_small_memory_and_leakage() {
        let current = series("A", 10, vec![(&[1], &[0]), (&[1], &[0])]);
        let memory = vec![
            case(series("A", 5, vec![(&[1], &[0]), (&[1], &[0])])),
            case(series("B", 6, vec![(&[2], &[0]), (&[2], &[0])])),
            case(series("B", 10, vec![(&[1], &[0]), (&[1], &[0])])), // same anchor: not eligible
            case(series("C", 12, vec![(&[1], &[0]), (&[1], &[0])])), // future
        ];
        let out = coarse_screen(&current, &memory, &params(5), Strategy::Full).unwrap();
        assert_eq!(out.iter().map(|c| c.index).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(out[0].similarity, 1.0);
        assert!((out[1].similarity - 0.3).abs() < 1e-12);

        let same = coarse_screen(&current, &memory, &params(5), Strategy::SameCompany).unwrap();
        assert_eq!(same.iter().map(|c| c.index).collect::<Vec<_>>(), vec![0]);
        let recent = coarse_screen(&current, &memory, &params(1), Strategy::RecentPeriod).unwrap();
        assert_eq!(recent.iter().map(|c| c.index).collect::<Vec<_>>(), vec![1]);
        assert!(coarse_screen(&current, &memory, &params(5), Strategy::None).unwrap().is_empty());
    }

    #[test]
    fn ties_break_by_recency_then_company() {
        let current = series("Z", 30, vec![(&[1], &[0]), (&[1], &[0])]);
        let memory = vec![
            case(series("B", 7, vec![(&[2], &[0]), (&[1, 2], &[0])])),
            case(series("A", 7, vec![(&[2], &[0]), (&[1, 2], &[0])])),
            case(series("C", 9, vec![(&[2], &[0]), (&[1, 2], &[0])])),
        ];
        let out = coarse_screen(&current, &memory, &params(3), Strategy::Full).unwrap();
        assert_eq!(out.iter().map(|c| c.index).collect::<Vec<_>>(), vec![2, 1, 0]);
    }

    #[test]
    fn alpha_is_validated() {
        let current = series("A", 10, vec![(&[1], &[0]), (&[1], &[0])]);
        let p = SimilarityParams { alpha: 1.5, ..params(1) };
        assert!(matches!(coarse_screen(&current, &[], &p, Strategy::Full), Err(RetrievalError::BadAlpha(_))));
    }

    fn memory5() -> (EventSeries, Vec<HistoricalCase>, Vec<Candidate>) {
        let current = series("A", 10, vec![(&[1], &[0]), (&[1], &[0])]);
        let memory: Vec<_> = (0..5).map(|i| case(series("B", 2 + i, vec![(&[1], &[0]), (&[1], &[0])]))).collect();
        let cands = coarse_screen(&current, &memory, &params(5), Strategy::Full).unwrap();
        (current, memory, cands)
    }

    #[test]
    fn fine_filter_keeps_scripted_subset() {
        let (current, memory, cands) = memory5();
        let mock = MockGenerator::new(vec![FixtureEntry::new(TemplateId::RetrieveFilter, "", json!({"selected": [3, 1]}))], Fallback::None);
        let llm = Llm::new(Box::new(mock), 2);
        let kept = fine_filter(&llm, &PromptSet::default().retrieve, &current, &memory, &cands).unwrap();
        assert_eq!(kept, vec![cands[0].clone(), cands[2].clone()]);

        let all = MockGenerator::new(vec![FixtureEntry::new(TemplateId::RetrieveFilter, "", json!({"selected": [1, 2, 3, 4, 5]}))], Fallback::None);
        let llm = Llm::new(Box::new(all), 2);
        assert_eq!(fine_filter(&llm, &PromptSet::default().retrieve, &current, &memory, &cands).unwrap(), cands);
    }

    #[test]
    fn fine_filter_skips_empty_and_rejects_hallucinations() {
        let (current, memory, cands) = memory5();
        let llm = Llm::new(Box::new(MockGenerator::new(vec![], Fallback::None)), 2);
        assert!(fine_filter(&llm, &PromptSet::default().retrieve, &current, &memory, &[]).unwrap().is_empty());
        assert_eq!(llm.call_count(), 0);

        let mock = MockGenerator::new(vec![FixtureEntry::new(TemplateId::RetrieveFilter, "", json!({"selected": [9]}))], Fallback::None);
        let llm = Llm::new(Box::new(mock), 1);
        let err = fine_filter(&llm, &PromptSet::default().retrieve, &current, &memory, &cands).unwrap_err();
        assert!(matches!(err, RetrievalError::Backend(BackendError::SchemaViolation { attempts: 2, .. })));
    }
}
