use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::calendar::TradingCalendar;
use super::config::{AblationFlags, BacktestConfig, Representation};
use super::metrics::{CompanyMetrics, ConfusionMatrix, MetricsReport};
use super::HarnessError;
use crate::backends::{Backends, GenLogEntry};
use crate::context::Context;
use crate::domain::{DailyEventSet, Direction, DocSummary, EventChain, EventSeries, Label, NewsDoc, Polarity, PriceBar, Reflection};
use crate::extraction::{collect_daily_raw, extract_events, summarize};
use crate::inference::{predict, render_delta_current, render_information, render_references, render_text_days, ChainContext, EvidenceBundle};
use crate::merging::{merge_day, single_link};
use crate::prompts::PromptSet;
use crate::reflection::{online_update, realized_move, reflect};
use crate::retrieval::{coarse_screen, fine_filter, HistoricalCase, Strategy};
use crate::store::{AsOfQuery, AuditSummary, RecordKind, Store, StoredEvent};
use crate::taxonomy::Taxonomy;
use crate::tracking::{track_day, TrackWindow};
use crate::{digest_hex, Sim};

/// Raw inputs of a run.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    pub news: Vec<NewsDoc>,
    pub prices: Vec<PriceBar>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredecessorTrace {
    pub event_id: String,
    pub date: NaiveDate,
    pub event_type: String,
    pub description: String,
}

/// Evolution of one anchor-day event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub event_id: String,
    pub event_type: String,
    pub description: String,
    pub delta_info: String,
    pub polarity: Option<Polarity>,
    /// Most recent first.
    pub predecessors: Vec<PredecessorTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrace {
    pub record_id: String,
    pub company: String,
    pub anchor_date: NaiveDate,
    pub similarity: Sim,
    pub realized_move: Label,
    pub delta_info: String,
    pub reason: String,
    pub key_events: String,
}

/// One test-day prediction with its evidence and outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestRecord {
    pub record_id: String,
    pub company: String,
    pub date: NaiveDate,
    pub predicted: Option<Direction>,
    pub reason: String,
    pub realized: Label,
    /// False for flat days, which are excluded from the metrics.
    pub scored: bool,
    pub correct: Option<bool>,
    pub prompt_digest: String,
    pub evidence: EvidenceBundle,
    pub chains: Vec<ChainTrace>,
    pub references: Vec<ReferenceTrace>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainStats {
    pub days_processed: usize,
    pub reflections: usize,
    /// Anchors without `w` earlier trading days or without a next-day price.
    pub skipped_anchors: usize,
}

pub struct BacktestOutcome {
    pub report: MetricsReport,
    pub records: Vec<BacktestRecord>,
    pub audit: AuditSummary,
    pub train: TrainStats,
    pub generation_log: Vec<GenLogEntry>,
    /// Digest over every prediction prompt of the run, in order.
    pub prompt_digest: String,
}

impl BacktestOutcome {
    pub fn records_jsonl(&self) -> String {
        super::io::write_jsonl(&self.records)
    }
}

/// The memory-building and prediction pipeline over one store.
pub struct Pipeline {
    pub cfg: BacktestConfig,
    pub store: Store,
    backends: Backends,
    prompts: PromptSet,
    taxonomy: &'static Taxonomy,
    calendars: BTreeMap<String, TradingCalendar>,
}

impl Pipeline {
    /// Stores the inputs and derives each company's trading calendar from
    /// its price bars.
    pub fn new(cfg: BacktestConfig, store: Store, backends: Backends, prompts: PromptSet, inputs: &Inputs) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let mut bars: Vec<PriceBar> = Vec::new();
        for c in &cfg.companies {
            let mine: Vec<PriceBar> = inputs.prices.iter().filter(|b| b.company == c.ticker).cloned().collect();
            if mine.is_empty() {
                return Err(HarnessError::Input(format!("no price data for {}", c.ticker)));
            }
            bars.extend(mine);
        }
        for b in &bars {
            store.put(b)?;
        }
        for d in inputs.news.iter().filter(|d| cfg.company(&d.company).is_some()) {
            store.put(d)?;
        }
        let calendars = TradingCalendar::per_company(&bars);
        Ok(Pipeline { cfg, store, backends, prompts, taxonomy: Taxonomy::standard(), calendars })
    }

    pub fn ctx(&self) -> Context<'_> {
        Context::new(self.taxonomy, &self.prompts, &self.backends)
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn calendar(&self, company: &str) -> Result<&TradingCalendar, HarnessError> {
        self.calendars.get(company).ok_or_else(|| HarnessError::UnknownCompany(company.to_string()))
    }

    fn stock_name(&self, company: &str) -> String {
        self.cfg.company(company).map(|c| c.display_name().to_string()).unwrap_or_else(|| company.to_string())
    }

    /// Dates across all companies in `[start, end]`, each with the companies
    /// trading that day, in config order.
    fn schedule(&self, start: NaiveDate, end: NaiveDate) -> Vec<(NaiveDate, Vec<String>)> {
        let mut by_date: BTreeMap<NaiveDate, Vec<String>> = BTreeMap::new();
        for c in &self.cfg.companies {
            if let Some(cal) = self.calendars.get(&c.ticker) {
                for d in cal.between(start, end) {
                    by_date.entry(d).or_default().push(c.ticker.clone());
                }
            }
        }
        by_date.into_iter().collect()
    }

    /// Extract, merge and track one company-day. Already processed days are
    /// returned from the store.
    pub fn process_day(&self, company: &str, t: NaiveDate) -> Result<DailyEventSet, HarnessError> {
        if let Some(day) = self.store.get::<DailyEventSet>(&format!("{company}@{t}")) {
            return Ok(day);
        }
        let ctx = self.ctx();
        let docs: Vec<NewsDoc> = self.store.query(&AsOfQuery::new(RecordKind::News).company(company).since(t).through(t));
        let mut batches = Vec::with_capacity(docs.len());
        for doc in &docs {
            let batch = extract_events(&ctx, doc)?;
            self.store.put(&summarize(doc, &batch))?;
            batches.push(batch);
        }
        let raw = collect_daily_raw(company, t, &batches);
        let day = merge_day(&ctx, &self.store, company, t, &raw, &self.cfg.merge)?;
        let cal = self.calendar(company)?;
        let w = self.cfg.window;
        let window = match cal.back(t, 1) {
            Some(end) => TrackWindow { start: cal.back(t, w).unwrap_or(cal.days()[0]), end },
            // first trading day: an empty window
            None => TrackWindow { start: t, end: t.pred_opt().expect("date underflow") },
        };
        track_day(&ctx, &self.store, &day, window, &self.cfg.tracking)?;
        Ok(day)
    }

    /// The `w + 1` processed days ending at `t`, or `None` when `t` has
    /// fewer than `w` earlier trading days.
    pub fn build_series(&self, company: &str, t: NaiveDate) -> Result<Option<EventSeries>, HarnessError> {
        let w = self.cfg.window;
        let Some(dates) = self.calendar(company)?.window_ending(t, w) else {
            return Ok(None);
        };
        let stored: Vec<DailyEventSet> =
            self.store.query(&AsOfQuery::new(RecordKind::Series).company(company).since(dates[0]).through(t));
        let by_date: BTreeMap<NaiveDate, DailyEventSet> = stored.into_iter().map(|d| (d.date, d)).collect();
        let days = dates
            .iter()
            .map(|d| {
                by_date.get(d).cloned().ok_or(HarnessError::MissingDay { company: company.to_string(), date: *d })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Some(EventSeries::new(company, t, w, days)?))
    }

    fn chain_context(&self, series: &EventSeries) -> ChainContext {
        let mut cc = ChainContext::default();
        for e in series.days.iter().flat_map(|d| &d.events) {
            if let Some(chain) = self.store.get::<EventChain>(&e.event_id) {
                for l in &chain.predecessors {
                    if let Some(p) = self.store.get::<StoredEvent>(&l.event_id) {
                        cc.history.insert(l.event_id.clone(), p.event);
                    }
                }
                cc.chains.insert(e.event_id.clone(), chain);
            }
        }
        cc
    }

    fn summaries_by_day(&self, series: &EventSeries) -> BTreeMap<NaiveDate, Vec<DocSummary>> {
        let rows: Vec<DocSummary> = self.store.query(
            &AsOfQuery::new(RecordKind::Summaries)
                .company(series.company.clone())
                .since(series.days[0].date)
                .through(series.anchor_date),
        );
        let mut out: BTreeMap<NaiveDate, Vec<DocSummary>> = BTreeMap::new();
        for r in rows {
            out.entry(r.date).or_default().push(r);
        }
        out
    }

    /// The `{information}` text and the anchor day's incremental
    /// information under the configured representation.
    pub fn information(&self, series: &EventSeries) -> Result<(String, String, ChainContext), HarnessError> {
        let flags = &self.cfg.ablation;
        let cc = self.chain_context(series);
        match flags.representation {
            Representation::Event => {
                let info = render_information(series, &cc, flags.delta_info);
                let delta = if flags.delta_info { render_delta_current(series, &cc) } else { String::new() };
                Ok((info, delta, cc))
            }
            Representation::Summary => {
                let by_day = self.summaries_by_day(series);
                let days: Vec<(NaiveDate, Vec<String>)> = series
                    .days
                    .iter()
                    .map(|d| (d.date, by_day.get(&d.date).map_or_else(Vec::new, |s| s.iter().map(|x| x.summary.clone()).collect())))
                    .collect();
                Ok((render_text_days(&days), String::new(), cc))
            }
            Representation::ClusterOpinion => {
                let by_day = self.summaries_by_day(series);
                let mut days = Vec::new();
                for d in &series.days {
                    let summaries: Vec<String> = by_day.get(&d.date).map_or_else(Vec::new, |s| s.iter().map(|x| x.summary.clone()).collect());
                    days.push((d.date, self.opinion_clusters(&summaries)?));
                }
                Ok((render_text_days(&days), String::new(), cc))
            }
        }
    }

    fn opinion_clusters(&self, summaries: &[String]) -> Result<Vec<String>, HarnessError> {
        if summaries.is_empty() {
            return Ok(Vec::new());
        }
        let vectors = self.backends.embedder.embed(summaries)?;
        let refs: Vec<_> = vectors.iter().collect();
        Ok(single_link(&refs, self.cfg.merge.cosine_threshold)
            .into_iter()
            .map(|members| format!("opinion shared by {} report(s): {}", members.len(), summaries[members[0]]))
            .collect())
    }

    /// Historical cases whose reflections are anchored before `t`.
    fn memory(&self, t: NaiveDate) -> Result<Vec<HistoricalCase>, HarnessError> {
        let reflections: Vec<Reflection> = self.store.query(&AsOfQuery::new(RecordKind::Reflections).before(t));
        if reflections.is_empty() {
            return Ok(Vec::new());
        }
        let days: Vec<DailyEventSet> = self.store.query(&AsOfQuery::new(RecordKind::Series).before(t));
        let by_key: BTreeMap<(&str, NaiveDate), &DailyEventSet> = days.iter().map(|d| ((d.company.as_str(), d.date), d)).collect();
        let mut cases = Vec::with_capacity(reflections.len());
        for r in reflections {
            let Some(dates) = self.calendar(&r.company)?.window_ending(r.anchor_date, r.series_ref.window) else {
                continue;
            };
            let series_days: Option<Vec<DailyEventSet>> =
                dates.iter().map(|d| by_key.get(&(r.company.as_str(), *d)).map(|x| (*x).clone())).collect();
            match series_days {
                Some(ds) if r.series_ref.window == self.cfg.window => {
                    let series = EventSeries::new(r.company.clone(), r.anchor_date, r.series_ref.window, ds)?;
                    cases.push(HistoricalCase { reflection: r, series });
                }
                _ => log::warn!("reflection {} has no matching stored series; skipped", r.record_id()),
            }
        }
        Ok(cases)
    }

    /// Memory building over the training range: every trading day is
    /// processed, and every anchor with a full window and a next-day price
    /// gets a reflection.
    pub fn train(&self) -> Result<TrainStats, HarnessError> {
        let mut stats = TrainStats::default();
        let ctx = self.ctx();
        for (t, companies) in self.schedule(self.cfg.train.start, self.cfg.train.end) {
            for company in companies {
                self.process_day(&company, t)?;
                stats.days_processed += 1;
                let next = self.calendar(&company)?.next(t);
                let (Some(series), Some(next)) = (self.build_series(&company, t)?, next) else {
                    stats.skipped_anchors += 1;
                    continue;
                };
                let realized = realized_move(&self.store, &company, next)?;
                if realized == Label::Flat && !self.cfg.reflection.include_flat {
                    continue;
                }
                if self.store.get::<Reflection>(&format!("{company}@{t}")).is_some() {
                    continue;
                }
                let (info, delta, _) = self.information(&series)?;
                reflect(&ctx, &self.store, &self.stock_name(&company), &series, &info, &delta, realized)?;
                stats.reflections += 1;
            }
        }
        // days between the ranges feed the event memory but are not reflected
        if let Some(gap_end) = self.cfg.test.start.pred_opt() {
            if let Some(gap_start) = self.cfg.train.end.succ_opt() {
                for (t, companies) in self.schedule(gap_start, gap_end) {
                    for company in companies {
                        self.process_day(&company, t)?;
                        stats.days_processed += 1;
                    }
                }
            }
        }
        Ok(stats)
    }

    /// Prediction for one test day under the store audit. Returns `None`
    /// when the day cannot be scored (no full window or no next-day price).
    fn predict_day(&self, company: &str, t: NaiveDate) -> Result<Option<(BacktestRecord, EventSeries)>, HarnessError> {
        let Some(next) = self.calendar(company)?.next(t) else {
            log::info!("{company} {t}: no next trading day; not predicted");
            self.process_day(company, t)?;
            return Ok(None);
        };
        self.store.begin_audit(t);
        let result = self.predict_audited(company, t);
        self.store.end_audit();
        let Some((mut record, series)) = result? else {
            return Ok(None);
        };
        let realized = realized_move(&self.store, company, next)?;
        record.realized = realized;
        record.scored = realized != Label::Flat;
        record.correct = realized.direction().map(|truth| record.predicted == Some(truth));
        Ok(Some((record, series)))
    }

    fn predict_audited(&self, company: &str, t: NaiveDate) -> Result<Option<(BacktestRecord, EventSeries)>, HarnessError> {
        let ctx = self.ctx();
        self.process_day(company, t)?;
        let Some(series) = self.build_series(company, t)? else {
            return Ok(None);
        };
        let (information, delta, cc) = self.information(&series)?;
        let memory = self.memory(t)?;
        let strategy = self.cfg.ablation.strategy;
        let candidates = coarse_screen(&series, &memory, &self.cfg.retrieval, strategy)?;
        let kept = if strategy == Strategy::None {
            Vec::new()
        } else {
            fine_filter(ctx.llm, &self.prompts.retrieve, &series, &memory, &candidates)?
        };
        let refs: Vec<(&HistoricalCase, Sim)> = kept.iter().map(|c| (&memory[c.index], c.similarity)).collect();
        let evidence = EvidenceBundle {
            company: company.to_string(),
            anchor_date: t,
            series_current: information,
            delta_info_current: delta,
            reflections_ref: render_references(&refs),
            reference_ids: refs.iter().map(|(c, _)| c.reflection.record_id()).collect(),
        };
        let prediction = predict(&ctx, &self.stock_name(company), &evidence)?;
        let chains = series
            .anchor_day()
            .events
            .iter()
            .map(|e| {
                let chain = cc.chains.get(&e.event_id);
                ChainTrace {
                    event_id: e.event_id.clone(),
                    event_type: e.qualified_type(),
                    description: e.description.clone(),
                    delta_info: chain.map(|c| c.delta_info.clone()).unwrap_or_default(),
                    polarity: chain.map(|c| c.delta_polarity),
                    predecessors: chain
                        .map(|c| {
                            c.predecessors
                                .iter()
                                .map(|l| {
                                    let p = cc.history.get(&l.event_id);
                                    PredecessorTrace {
                                        event_id: l.event_id.clone(),
                                        date: l.date,
                                        event_type: p.map(|p| p.qualified_type()).unwrap_or_default(),
                                        description: p.map(|p| p.description.clone()).unwrap_or_default(),
                                    }
                                })
                                .collect()
                        })
                        .unwrap_or_default(),
                }
            })
            .collect();
        let references = refs
            .iter()
            .map(|(c, sim)| ReferenceTrace {
                record_id: c.reflection.record_id(),
                company: c.reflection.company.clone(),
                anchor_date: c.reflection.anchor_date,
                similarity: *sim,
                realized_move: c.reflection.realized_move,
                delta_info: c.reflection.delta_info.clone(),
                reason: c.reflection.reason.clone(),
                key_events: c.reflection.key_events.clone(),
            })
            .collect();
        let record = BacktestRecord {
            record_id: format!("{company}@{t}"),
            company: company.to_string(),
            date: t,
            predicted: prediction.direction,
            reason: prediction.reason,
            realized: Label::Flat,
            scored: false,
            correct: None,
            prompt_digest: prediction.prompt_digest,
            evidence,
            chains,
            references,
        };
        Ok(Some((record, series)))
    }

    /// The online test loop: predict, reveal, reflect, day by day.
    pub fn test(&self) -> Result<Vec<BacktestRecord>, HarnessError> {
        let ctx = self.ctx();
        let mut records = Vec::new();
        for (t, companies) in self.schedule(self.cfg.test.start, self.cfg.test.end) {
            for company in companies {
                let Some((record, series)) = self.predict_day(&company, t)? else {
                    continue;
                };
                if record.realized != Label::Flat || self.cfg.reflection.include_flat {
                    online_update(&ctx, &self.store, &self.stock_name(&company), &series, &record.evidence, record.realized)?;
                }
                records.push(record);
            }
        }
        Ok(records)
    }

    pub fn score(&self, records: &[BacktestRecord]) -> MetricsReport {
        let mut per = BTreeMap::new();
        for c in &self.cfg.companies {
            let mut cm = ConfusionMatrix::default();
            let (mut abstentions, mut flat) = (0, 0);
            for r in records.iter().filter(|r| r.company == c.ticker) {
                match r.realized.direction() {
                    Some(truth) => {
                        cm.record(r.predicted, truth);
                        abstentions += u64::from(r.predicted.is_none());
                    }
                    None => flat += 1,
                }
            }
            per.insert(c.ticker.clone(), CompanyMetrics::from_counts(cm, abstentions, flat));
        }
        MetricsReport::from_companies(per)
    }
}

fn open_store(cfg: &BacktestConfig) -> Result<Store, HarnessError> {
    Ok(match &cfg.data.store {
        Some(dir) => Store::open(dir)?,
        None => Store::in_memory(),
    })
}

/// Training followed by the online test loop.
pub fn run_backtest(cfg: &BacktestConfig, inputs: &Inputs, backends: Backends, prompts: PromptSet) -> Result<BacktestOutcome, HarnessError> {
    let pipeline = Pipeline::new(cfg.clone(), open_store(cfg)?, backends, prompts, inputs)?;
    run_pipeline(&pipeline)
}

pub fn run_pipeline(pipeline: &Pipeline) -> Result<BacktestOutcome, HarnessError> {
    let train = pipeline.train()?;
    let records = pipeline.test()?;
    let report = pipeline.score(&records);
    let prompt_digest = digest_hex(&records.iter().map(|r| r.prompt_digest.as_str()).collect::<Vec<_>>().join("\n"));
    Ok(BacktestOutcome {
        report,
        records,
        audit: pipeline.store.audit_summary(),
        train,
        generation_log: pipeline.backends().llm.log(),
        prompt_digest,
    })
}

/// The ablation settings compared in the evaluation.
pub fn standard_variants() -> Vec<(String, AblationFlags)> {
    let full = AblationFlags::default();
    let v = |name: &str, f: AblationFlags| (name.to_string(), f);
    vec![
        v("full", full.clone()),
        v("summary", AblationFlags { representation: Representation::Summary, delta_info: false, ..full.clone() }),
        v("cluster_opinion", AblationFlags { representation: Representation::ClusterOpinion, delta_info: false, ..full.clone() }),
        v("no_delta_info", AblationFlags { delta_info: false, ..full.clone() }),
        v("same_company", AblationFlags { strategy: Strategy::SameCompany, ..full.clone() }),
        v("recent_period", AblationFlags { strategy: Strategy::RecentPeriod, ..full.clone() }),
        v("no_reference", AblationFlags { strategy: Strategy::None, ..full }),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub name: String,
    pub flags: AblationFlags,
    pub report: MetricsReport,
    pub prompt_digest: String,
    pub leakage_violations: usize,
}

/// Runs each variant from scratch on a fresh in-memory store.
pub fn ablate(
    cfg: &BacktestConfig,
    inputs: &Inputs,
    variants: &[(String, AblationFlags)],
    make_backends: impl Fn() -> Result<Backends, HarnessError>,
    prompts: &PromptSet,
) -> Result<Vec<AblationResult>, HarnessError> {
    let mut out = Vec::new();
    for (name, flags) in variants {
        let mut vcfg = cfg.clone();
        vcfg.ablation = flags.clone();
        vcfg.data.store = None;
        vcfg.validate()?;
        log::info!("ablation {name}");
        let outcome = run_backtest(&vcfg, inputs, make_backends()?, prompts.clone())?;
        out.push(AblationResult {
            name: name.clone(),
            flags: flags.clone(),
            report: outcome.report,
            prompt_digest: outcome.prompt_digest,
            leakage_violations: outcome.audit.violations,
        });
    }
    Ok(out)
}
