//! Input files: news as JSON lines, prices as CSV.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::Deserialize;

use super::HarnessError;
use crate::domain::{NewsDoc, PriceBar};

fn open(path: &Path) -> Result<File, HarnessError> {
    File::open(path).map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))
}

pub fn read_news(reader: impl Read, origin: &str) -> Result<Vec<NewsDoc>, HarnessError> {
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::Input(format!("{origin}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: NewsDoc =
            serde_json::from_str(&line).map_err(|e| HarnessError::Input(format!("{origin}:{}: {e}", i + 1)))?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn load_news(path: &Path) -> Result<Vec<NewsDoc>, HarnessError> {
    read_news(open(path)?, &path.display().to_string())
}

#[derive(Deserialize)]
struct PriceRow {
    company: String,
    date: chrono::NaiveDate,
    daily_return: f64,
}

pub fn read_prices(reader: impl Read, origin: &str) -> Result<Vec<PriceBar>, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut bars = Vec::new();
    for (i, row) in rdr.deserialize::<PriceRow>().enumerate() {
        let row = row.map_err(|e| HarnessError::Input(format!("{origin}: row {}: {e}", i + 1)))?;
        if !row.daily_return.is_finite() {
            return Err(HarnessError::Input(format!("{origin}: row {}: non-finite return", i + 1)));
        }
        bars.push(PriceBar { company: row.company, date: row.date, daily_return: row.daily_return });
    }
    Ok(bars)
}

pub fn load_prices(path: &Path) -> Result<Vec<PriceBar>, HarnessError> {
    read_prices(open(path)?, &path.display().to_string())
}

pub fn write_prices(bars: &[PriceBar]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["company", "date", "daily_return"]).expect("in-memory write");
    for b in bars {
        w.write_record([b.company.clone(), b.date.to_string(), format!("{}", b.daily_return)]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
}

pub fn write_jsonl<T: serde::Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("record serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn price_round_trip() {
        let csv = "company,date,daily_return\nACME, 2024-01-02 ,0.015\nACME,2024-01-03,-0.002\n";
        let bars = read_prices(csv.as_bytes(), "t").unwrap();
        assert_eq!(bars.len(), 2);
        assert_eq!(bars[0].daily_return, 0.015);
        assert_eq!(read_prices(write_prices(&bars).as_bytes(), "t").unwrap(), bars);
        assert!(read_prices("company,date,daily_return\nA,2024-13-01,0.1\n".as_bytes(), "t").is_err());
        assert!(read_prices("company,date,daily_return\nA,2024-01-01,NaN\n".as_bytes(), "t").is_err());
    }

    #[test]
    fn news_lines() {
        let text = "{\"doc_id\":\"n1\",\"company\":\"A\",\"date\":\"2024-01-02\",\"title\":\"t\",\"body\":\"b\"}\n\n";
        let docs = read_news(text.as_bytes(), "t").unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(read_news(write_jsonl(&docs).as_bytes(), "t").unwrap(), docs);
        assert!(read_news("{".as_bytes(), "t").is_err());
    }
}
