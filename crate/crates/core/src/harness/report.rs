use std::fmt::Write;

use super::pipeline::BacktestRecord;
use super::HarnessError;

/// Human-readable account of one prediction: the anchor-day events with
/// their evolution, the historical references, and the model's reasoning.
pub fn report_explainability(records: &[BacktestRecord], record_id: &str) -> Result<String, HarnessError> {
    let r = records
        .iter()
        .find(|r| r.record_id == record_id)
        .ok_or_else(|| HarnessError::UnknownRecord(record_id.to_string()))?;
    let mut out = String::new();
    let predicted = r.predicted.map_or("abstained".to_string(), |d| d.to_string());
    let _ = writeln!(out, "Prediction for {} on {}: {} (realized: {})", r.company, r.date, predicted, r.realized);
    let _ = writeln!(out, "\n== Key events and their evolution ==");
    if r.chains.is_empty() {
        let _ = writeln!(out, "No events on the anchor day.");
    }
    for c in &r.chains {
        let _ = writeln!(out, "* [{}] {}", c.event_type, c.description);
        for p in &c.predecessors {
            let _ = writeln!(out, "    <- {} [{}] {}", p.date, p.event_type, p.description);
        }
        if !c.delta_info.is_empty() {
            let polarity = c.polarity.map_or(String::new(), |p| format!(" ({})", p.as_str()));
            let _ = writeln!(out, "    incremental information{}: {}", polarity, c.delta_info);
        }
    }
    let _ = writeln!(out, "\n== Historical references ==");
    if r.references.is_empty() {
        let _ = writeln!(out, "No historical analog found.");
    }
    for h in &r.references {
        let _ = writeln!(out, "* {} (similarity {:.4}, moved {})", h.record_id, h.similarity, h.realized_move);
        let _ = writeln!(out, "    reason: {}", h.reason);
        let _ = writeln!(out, "    key events: {}", h.key_events);
    }
    let _ = writeln!(out, "\n== Model reasoning ==");
    let _ = writeln!(out, "{}", if r.reason.is_empty() { "(none given)" } else { &r.reason });
    Ok(out)
}
