//! Turns simulated marked events back into raw posts, so that a synthetic
//! corpus can go through the same ingestion path as real data.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate, SecondsFormat, TimeZone, Utc};
use hbtm_core::{Dictionary, HbtmError, MarkedEvent, NodeRoster, Result};
use serde::Serialize;

/// One input line in the format `corpus ingest` reads.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PostRecord {
    pub post_id: String,
    pub timestamp: String,
    pub node_id: String,
    pub text: String,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, String>,
}

/// ISO-8601 UTC timestamp `t` days after `epoch`, to the millisecond.
pub fn timestamp(epoch: NaiveDate, t: f64) -> String {
    let origin = Utc.from_utc_datetime(&epoch.and_hms_opt(0, 0, 0).expect("midnight exists"));
    let ms = (t * 86_400_000.0).round() as i64;
    (origin + Duration::milliseconds(ms)).to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Renders each event as a post whose text lists the mark's words in
/// dictionary order.
pub fn render_posts(
    events: &[MarkedEvent],
    dictionary: &Dictionary,
    roster: &NodeRoster,
    epoch: NaiveDate,
) -> Result<Vec<PostRecord>> {
    events
        .iter()
        .map(|e| {
            if e.mark.len() != dictionary.len() {
                return Err(HbtmError::LengthMismatch {
                    expected: dictionary.len(),
                    got: e.mark.len(),
                });
            }
            if e.node_index >= roster.len() {
                return Err(HbtmError::Domain(format!(
                    "node index {} has no roster entry",
                    e.node_index
                )));
            }
            let node = roster.get(e.node_index);
            let words = e.mark.ones().map(|w| dictionary.word(w));
            Ok(PostRecord {
                post_id: e.post_id.clone(),
                timestamp: timestamp(epoch, e.timestamp),
                node_id: node.node_id.clone(),
                text: words.collect::<Vec<_>>().join(" "),
                attrs: node.attrs.clone(),
            })
        })
        .collect()
}
