//! Deterministic synthetic corpus for offline runs: a weekday calendar,
//! storyline news per company over a shared pool of event types plus
//! market-wide days, normal daily returns, and a mock fixture
//! scripting the extraction of every document.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use super::config::{BacktestConfig, CompanySpec, DateRange};
use super::pipeline::Inputs;
use crate::backends::mock::FixtureEntry;
use crate::backends::TemplateId;
use crate::domain::{NewsDoc, PriceBar};
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub companies: usize,
    pub train_days: usize,
    pub test_days: usize,
    pub window: usize,
    /// Storylines per company; each day advances a random subset.
    pub storylines: usize,
    pub seed: u64,
    pub start: NaiveDate,
    pub return_sd: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            companies: 3,
            train_days: 30,
            test_days: 10,
            window: 5,
            storylines: 4,
            seed: 7,
            start: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            return_sd: 0.02,
        }
    }
}

pub struct SyntheticData {
    pub config: BacktestConfig,
    pub inputs: Inputs,
    pub fixture: Vec<FixtureEntry>,
}

fn weekdays(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(n)
        .collect()
}

pub fn generate(spec: &SyntheticSpec) -> SyntheticData {
    let tax = Taxonomy::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let returns = Normal::new(0.0, spec.return_sd).expect("finite sd");
    // one extra day so the last test day has a realized move
    let days = weekdays(spec.start, spec.train_days + spec.test_days + 1);
    let companies: Vec<CompanySpec> =
        (0..spec.companies).map(|i| CompanySpec::new(format!("C{:02}", i + 1), format!("Company {}", i + 1))).collect();

    // storylines draw from a small shared pool so that companies overlap
    let pool: Vec<usize> = (0..spec.storylines * 2).map(|_| rng.gen_range(0..tax.type_count())).collect();
    let market: Vec<bool> = days.iter().map(|_| rng.gen_bool(0.25)).collect();
    let market_type = tax.resolve_in_group("Stock Market Performance", "Capital Flows").expect("standard type").id.0;

    let mut news = Vec::new();
    let mut prices = Vec::new();
    let mut fixture = Vec::new();
    for c in &companies {
        let mut stories: Vec<usize> = (0..spec.storylines).map(|_| pool[rng.gen_range(0..pool.len())]).collect();
        stories.push(market_type);
        let mut progress = vec![0usize; stories.len()];
        for (di, date) in days.iter().enumerate() {
            prices.push(PriceBar { company: c.ticker.clone(), date: *date, daily_return: returns.sample(&mut rng) });
            let mut n = 0;
            for (si, &ty) in stories.iter().enumerate() {
                let fires = rng.gen_bool(0.4);
                if !(if si == spec.storylines { market[di] } else { fires }) {
                    continue;
                }
                progress[si] += 1;
                let t = tax.event_type(crate::taxonomy::TypeId(ty));
                let group = &tax.group(t.group).name;
                let description = format!("{} {} development {} of storyline {}", c.ticker, t.name.to_lowercase(), progress[si], si + 1);
                // a second outlet sometimes reports the same development
                let copies = if rng.gen_bool(0.3) { 2 } else { 1 };
                for _ in 0..copies {
                    n += 1;
                    let doc_id = format!("{}-{:03}-{}", c.ticker, di, n);
                    news.push(NewsDoc {
                        doc_id: doc_id.clone(),
                        company: c.ticker.clone(),
                        date: *date,
                        title: format!("{} news {}", c.ticker, n),
                        body: description.clone(),
                    });
                    fixture.push(FixtureEntry::new(
                        TemplateId::Extract,
                        format!("Document ID: {doc_id}\n"),
                        json!({"events": [{
                            "group": group,
                            "type": t.name,
                            "description": description,
                            "entities": [c.display_name()],
                            "companies": [c.ticker],
                        }]}),
                    ));
                }
            }
        }
    }

    let train = DateRange { start: days[0], end: days[spec.train_days - 1] };
    let test = DateRange { start: days[spec.train_days], end: days[spec.train_days + spec.test_days - 1] };
    let mut config = BacktestConfig::new(companies, train, test);
    config.window = spec.window;
    config.normalize();
    SyntheticData { config, inputs: Inputs { news, prices }, fixture }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_well_formed() {
        let spec = SyntheticSpec::default();
        let a = generate(&spec);
        let b = generate(&spec);
        assert_eq!(a.inputs.news, b.inputs.news);
        assert_eq!(a.inputs.prices, b.inputs.prices);
        assert_eq!(a.fixture, b.fixture);
        assert_eq!(a.inputs.prices.len(), 3 * 41);
        assert!(a.config.validate().is_ok());
        assert!(a.inputs.news.iter().all(|d| a.fixture.iter().any(|f| f.match_key == format!("Document ID: {}\n", d.doc_id))));
        let other = generate(&SyntheticSpec { seed: 8, ..spec });
        assert_ne!(a.inputs.prices, other.inputs.prices);
    }
}
