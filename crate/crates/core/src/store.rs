//! Append-only record store with as-of-date reads.
//!
//! Every read is an [`AsOfQuery`] bounded by an exclusive upper date.
//! While an audit horizon is set (the day currently being predicted), each
//! read is checked against it and violations are counted rather than
//! silently served.
//!
//! On-disk layout, when a root directory is given:
//!
//! ```text
//! <root>/<company>/news.jsonl
//! <root>/<company>/summaries.jsonl
//! <root>/<company>/events.jsonl
//! <root>/<company>/chains.jsonl
//! <root>/<company>/days.jsonl
//! <root>/<company>/reflections.jsonl
//! <root>/<company>/prices.jsonl
//! <root>/<company>/embeddings.tsv      event_id <TAB> space-separated components
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{Days, NaiveDate};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DailyEventSet, DocSummary, Embedding, Event, EventChain, NewsDoc, PriceBar, Reflection};

#[derive(Error, Debug)]
pub enum StoreError {
    #[error("invalid {kind} record {id}: {reason}")]
    Invalid { kind: RecordKind, id: String, reason: String },
    #[error("{kind} record {id} already stored with different content")]
    Conflict { kind: RecordKind, id: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    News,
    Summaries,
    Events,
    Chains,
    /// Daily event sets, the building blocks of event series.
    Series,
    Reflections,
    Prices,
}

impl RecordKind {
    pub fn file_stem(self) -> &'static str {
        match self {
            RecordKind::News => "news",
            RecordKind::Summaries => "summaries",
            RecordKind::Events => "events",
            RecordKind::Chains => "chains",
            RecordKind::Series => "days",
            RecordKind::Reflections => "reflections",
            RecordKind::Prices => "prices",
        }
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

/// Read request: records of one kind dated strictly before `before`,
/// optionally restricted to one company and to dates on or after `since`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsOfQuery {
    pub kind: RecordKind,
    pub company: Option<String>,
    pub before: Option<NaiveDate>,
    pub since: Option<NaiveDate>,
}

impl AsOfQuery {
    pub fn new(kind: RecordKind) -> Self {
        AsOfQuery { kind, company: None, before: None, since: None }
    }

    pub fn company(mut self, company: impl Into<String>) -> Self {
        self.company = Some(company.into());
        self
    }

    pub fn before(mut self, date: NaiveDate) -> Self {
        self.before = Some(date);
        self
    }

    /// Upper bound that admits `date` itself.
    pub fn through(self, date: NaiveDate) -> Self {
        self.before(next_day(date))
    }

    pub fn since(mut self, date: NaiveDate) -> Self {
        self.since = Some(date);
        self
    }
}

pub fn next_day(d: NaiveDate) -> NaiveDate {
    d.checked_add_days(Days::new(1)).expect("date overflow")
}

/// Event as persisted: the owning company plus the event itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEvent {
    pub company: String,
    #[serde(flatten)]
    pub event: Event,
}

pub trait StoredRecord: Serialize + DeserializeOwned + Clone + PartialEq + Send + Sync + 'static {
    const KIND: RecordKind;
    fn record_id(&self) -> String;
    fn record_date(&self) -> NaiveDate;
    fn record_company(&self) -> &str;
    fn check(&self) -> Result<(), String> {
        Ok(())
    }
    #[doc(hidden)]
    fn table(t: &Tables) -> &Table<Self>;
    #[doc(hidden)]
    fn table_mut(t: &mut Tables) -> &mut Table<Self>;
}

#[doc(hidden)]
pub struct Table<R> {
    rows: BTreeMap<(NaiveDate, String), R>,
    dates: HashMap<String, NaiveDate>,
}

impl<R> Default for Table<R> {
    fn default() -> Self {
        Table { rows: BTreeMap::new(), dates: HashMap::new() }
    }
}

#[doc(hidden)]
#[derive(Default)]
pub struct Tables {
    news: Table<NewsDoc>,
    summaries: Table<DocSummary>,
    events: Table<StoredEvent>,
    chains: Table<EventChain>,
    days: Table<DailyEventSet>,
    reflections: Table<Reflection>,
    prices: Table<PriceBar>,
    embeddings: HashMap<String, Embedding>,
}

macro_rules! stored {
    ($ty:ty, $kind:expr, $field:ident, |$s:ident| id: $id:expr, date: $date:expr, company: $company:expr $(, check: $check:expr)?) => {
        impl StoredRecord for $ty {
            const KIND: RecordKind = $kind;
            fn record_id(&self) -> String {
                let $s = self;
                $id
            }
            fn record_date(&self) -> NaiveDate {
                let $s = self;
                $date
            }
            fn record_company(&self) -> &str {
                let $s = self;
                $company
            }
            $(fn check(&self) -> Result<(), String> {
                let $s = self;
                $check
            })?
            fn table(t: &Tables) -> &Table<Self> {
                &t.$field
            }
            fn table_mut(t: &mut Tables) -> &mut Table<Self> {
                &mut t.$field
            }
        }
    };
}

stored!(NewsDoc, RecordKind::News, news, |s| id: s.doc_id.clone(), date: s.date, company: &s.company);
stored!(DocSummary, RecordKind::Summaries, summaries, |s| id: s.doc_id.clone(), date: s.date, company: &s.company);
stored!(StoredEvent, RecordKind::Events, events, |s| id: s.event.event_id.clone(), date: s.event.time, company: &s.company,
    check: if s.event.description.trim().is_empty() { Err("empty description".into()) } else { Ok(()) });
stored!(EventChain, RecordKind::Chains, chains, |s| id: s.head.clone(), date: s.date, company: &s.company,
    check: s.validate().map_err(|e| e.to_string()));
stored!(DailyEventSet, RecordKind::Series, days, |s| id: format!("{}@{}", s.company, s.date), date: s.date, company: &s.company);
stored!(Reflection, RecordKind::Reflections, reflections, |s| id: s.record_id(), date: s.anchor_date, company: &s.company,
    check: s.validate().map_err(|e| e.to_string()));
stored!(PriceBar, RecordKind::Prices, prices, |s| id: format!("{}@{}", s.company, s.date), date: s.date, company: &s.company,
    check: if s.daily_return.is_finite() { Ok(()) } else { Err("non-finite return".into()) });

/// Audit counters accumulated over a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub audited_queries: usize,
    pub violations: usize,
    pub details: Vec<String>,
}

#[derive(Default)]
struct AuditState {
    horizon: Option<NaiveDate>,
    summary: AuditSummary,
}

impl AuditState {
    /// Exclusive date limit for `kind` while predicting for `horizon`:
    /// reflections must be anchored before the prediction day, everything
    /// else may be dated up to and including it.
    fn limit(kind: RecordKind, horizon: NaiveDate) -> NaiveDate {
        match kind {
            RecordKind::Reflections => horizon,
            _ => next_day(horizon),
        }
    }

    fn violation(&mut self, msg: String) {
        log::warn!("as-of violation: {msg}");
        self.summary.violations += 1;
        if self.summary.details.len() < 100 {
            self.summary.details.push(msg);
        }
    }
}

pub struct Store {
    root: Option<PathBuf>,
    tables: RwLock<Tables>,
    audit: Mutex<AuditState>,
}

impl Store {
    pub fn in_memory() -> Self {
        Store { root: None, tables: RwLock::new(Tables::default()), audit: Mutex::new(AuditState::default()) }
    }

    /// Opens (creating if needed) a store directory and loads its contents.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|source| StoreError::Io { path: root.display().to_string(), source })?;
        let store = Store { root: None, tables: RwLock::new(Tables::default()), audit: Mutex::new(AuditState::default()) };
        let mut companies: Vec<PathBuf> = fs::read_dir(&root)
            .map_err(|source| StoreError::Io { path: root.display().to_string(), source })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        companies.sort();
        for dir in &companies {
            store.load_kind::<NewsDoc>(dir)?;
            store.load_kind::<DocSummary>(dir)?;
            store.load_kind::<StoredEvent>(dir)?;
            store.load_kind::<EventChain>(dir)?;
            store.load_kind::<DailyEventSet>(dir)?;
            store.load_kind::<Reflection>(dir)?;
            store.load_kind::<PriceBar>(dir)?;
            store.load_embeddings(dir)?;
        }
        Ok(Store { root: Some(root), ..store })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn load_kind<R: StoredRecord>(&self, dir: &Path) -> Result<(), StoreError> {
        let path = dir.join(format!("{}.jsonl", R::KIND.file_stem()));
        if !path.exists() {
            return Ok(());
        }
        let file = File::open(&path).map_err(|source| StoreError::Io { path: path.display().to_string(), source })?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| StoreError::Io { path: path.display().to_string(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: R = serde_json::from_str(&line).map_err(|e| StoreError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            self.insert(rec)?;
        }
        Ok(())
    }

    fn load_embeddings(&self, dir: &Path) -> Result<(), StoreError> {
        let path = dir.join("embeddings.tsv");
        if !path.exists() {
            return Ok(());
        }
        let text = fs::read_to_string(&path).map_err(|source| StoreError::Io { path: path.display().to_string(), source })?;
        let mut tables = self.tables.write().expect("store lock poisoned");
        for (i, line) in text.lines().enumerate() {
            let parse_err = |message: String| StoreError::Parse { path: path.display().to_string(), line: i + 1, message };
            let (id, values) = line.split_once('\t').ok_or_else(|| parse_err("missing tab".into()))?;
            let vector = values
                .split_whitespace()
                .map(|x| x.parse::<f32>().map_err(|e| parse_err(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            tables.embeddings.insert(id.to_string(), Embedding { vector });
        }
        Ok(())
    }

    /// Inserts into memory; returns whether the record is new.
    fn insert<R: StoredRecord>(&self, rec: R) -> Result<bool, StoreError> {
        let id = rec.record_id();
        let mut tables = self.tables.write().expect("store lock poisoned");
        let table = R::table_mut(&mut tables);
        if let Some(date) = table.dates.get(&id) {
            let existing = &table.rows[&(*date, id.clone())];
            return if *existing == rec { Ok(false) } else { Err(StoreError::Conflict { kind: R::KIND, id }) };
        }
        table.dates.insert(id.clone(), rec.record_date());
        table.rows.insert((rec.record_date(), id), rec);
        Ok(true)
    }

    fn company_dir(&self, company: &str) -> Result<Option<PathBuf>, StoreError> {
        let Some(root) = &self.root else { return Ok(None) };
        let dir = root.join(company);
        fs::create_dir_all(&dir).map_err(|source| StoreError::Io { path: dir.display().to_string(), source })?;
        Ok(Some(dir))
    }

    fn append(path: &Path, line: &str) -> Result<(), StoreError> {
        let io = |source| StoreError::Io { path: path.display().to_string(), source };
        let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        writeln!(f, "{line}").map_err(io)
    }

    /// Validates and appends a record. Re-putting identical content is a
    /// no-op; different content under an existing id is a conflict.
    pub fn put<R: StoredRecord>(&self, rec: &R) -> Result<String, StoreError> {
        let id = rec.record_id();
        let company = rec.record_company();
        if company.is_empty() || company.contains(['/', '\\']) || company.starts_with('.') {
            return Err(StoreError::Invalid { kind: R::KIND, id, reason: format!("bad company name {company:?}") });
        }
        rec.check().map_err(|reason| StoreError::Invalid { kind: R::KIND, id: id.clone(), reason })?;
        if self.insert(rec.clone())? {
            if let Some(dir) = self.company_dir(company)? {
                let line = serde_json::to_string(rec).expect("records serialize");
                Self::append(&dir.join(format!("{}.jsonl", R::KIND.file_stem())), &line)?;
            }
        }
        Ok(id)
    }

    /// Stores an event, moving its embedding (if any) to the sidecar.
    pub fn put_event(&self, company: &str, event: &Event) -> Result<String, StoreError> {
        let mut event = event.clone();
        if let Some(emb) = event.embedding.take() {
            self.put_embedding(company, &event.event_id, &emb)?;
        }
        self.put(&StoredEvent { company: company.to_string(), event })
    }

    pub fn put_embedding(&self, company: &str, id: &str, emb: &Embedding) -> Result<(), StoreError> {
        let fresh = {
            let mut tables = self.tables.write().expect("store lock poisoned");
            match tables.embeddings.get(id) {
                Some(existing) if existing == emb => false,
                Some(_) => return Err(StoreError::Conflict { kind: RecordKind::Events, id: format!("{id} (embedding)") }),
                None => {
                    tables.embeddings.insert(id.to_string(), emb.clone());
                    true
                }
            }
        };
        if fresh {
            if let Some(dir) = self.company_dir(company)? {
                let values: Vec<String> = emb.vector.iter().map(|x| format!("{x:.8e}")).collect();
                Self::append(&dir.join("embeddings.tsv"), &format!("{id}\t{}", values.join(" ")))?;
            }
        }
        Ok(())
    }

    pub fn embedding(&self, id: &str) -> Option<Embedding> {
        self.tables.read().expect("store lock poisoned").embeddings.get(id).cloned()
    }

    /// Records matching `q` in (date, id) order.
    pub fn query<R: StoredRecord>(&self, q: &AsOfQuery) -> Vec<R> {
        assert_eq!(q.kind, R::KIND, "query kind does not match record type");
        let rows: Vec<R> = {
            let tables = self.tables.read().expect("store lock poisoned");
            let table = R::table(&tables);
            table
                .rows
                .iter()
                .take_while(|((date, _), _)| q.before.is_none_or(|b| *date < b))
                .filter(|((date, _), _)| q.since.is_none_or(|s| *date >= s))
                .filter(|(_, r)| q.company.as_deref().is_none_or(|c| r.record_company() == c))
                .map(|(_, r)| r.clone())
                .collect()
        };
        self.audit_read(q.kind, q.before, rows.iter().map(|r| (r.record_id(), r.record_date())));
        rows
    }

    /// Events with their embeddings re-attached.
    pub fn events(&self, q: &AsOfQuery) -> Vec<StoredEvent> {
        let mut rows: Vec<StoredEvent> = self.query(q);
        let tables = self.tables.read().expect("store lock poisoned");
        for r in &mut rows {
            r.event.embedding = tables.embeddings.get(&r.event.event_id).cloned();
        }
        rows
    }

    /// Point lookup by id. Audited like a query with no date bound.
    pub fn get<R: StoredRecord>(&self, id: &str) -> Option<R> {
        let found = {
            let tables = self.tables.read().expect("store lock poisoned");
            let table = R::table(&tables);
            table.dates.get(id).map(|d| table.rows[&(*d, id.to_string())].clone())
        };
        if let Some(r) = &found {
            self.audit_read(R::KIND, Some(NaiveDate::MAX), std::iter::once((r.record_id(), r.record_date())));
        }
        found
    }

    pub fn count(&self, kind: RecordKind) -> usize {
        let tables = self.tables.read().expect("store lock poisoned");
        match kind {
            RecordKind::News => tables.news.rows.len(),
            RecordKind::Summaries => tables.summaries.rows.len(),
            RecordKind::Events => tables.events.rows.len(),
            RecordKind::Chains => tables.chains.rows.len(),
            RecordKind::Series => tables.days.rows.len(),
            RecordKind::Reflections => tables.reflections.rows.len(),
            RecordKind::Prices => tables.prices.rows.len(),
        }
    }

    fn audit_read(&self, kind: RecordKind, bound: Option<NaiveDate>, rows: impl Iterator<Item = (String, NaiveDate)>) {
        let mut audit = self.audit.lock().expect("audit lock poisoned");
        let Some(horizon) = audit.horizon else { return };
        audit.summary.audited_queries += 1;
        let limit = AuditState::limit(kind, horizon);
        // point lookups pass NaiveDate::MAX and are judged by the record alone
        if bound != Some(NaiveDate::MAX) && bound.is_none_or(|b| b > limit) {
            audit.violation(format!("{kind} query bound {bound:?} exceeds {limit} while predicting {horizon}"));
        }
        for (id, date) in rows {
            if date >= limit {
                audit.violation(format!("{kind} record {id} dated {date} read while predicting {horizon}"));
            }
        }
    }

    /// Starts checking reads against prediction day `horizon`.
    pub fn begin_audit(&self, horizon: NaiveDate) {
        self.audit.lock().expect("audit lock poisoned").horizon = Some(horizon);
    }

    pub fn end_audit(&self) {
        self.audit.lock().expect("audit lock poisoned").horizon = None;
    }

    pub fn audit_summary(&self) -> AuditSummary {
        self.audit.lock().expect("audit lock poisoned").summary.clone()
    }
}
