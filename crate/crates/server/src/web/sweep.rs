//! Retention: uploads and results older than the TTL are deleted, along
//! with feedback whose result is gone.

use std::collections::BTreeSet;
use std::time::Duration;

use pathquant_store::{ObjectStore, StoreError};
use serde::Deserialize;

use crate::records::{delete_prefix, key, FEEDBACK, RECORD, RESULTS, UPLOADS};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SweepReport {
    pub uploads: usize,
    pub results: usize,
    pub feedback: usize,
}

#[derive(Deserialize)]
struct Stamp {
    created_at: u64,
}

/// Second path segment of every key under `{top}/`.
fn ids_under(store: &dyn ObjectStore, top: &str) -> Result<BTreeSet<String>, StoreError> {
    Ok(store.list(&format!("{top}/"))?.iter().filter_map(|k| k.segments().nth(1).map(str::to_owned)).collect())
}

/// Deletes every record group whose `created_at` is older than `ttl` at
/// time `now` (Unix seconds). Groups without a record are left alone,
/// since they may still be being written.
pub fn sweep(store: &dyn ObjectStore, ttl: Duration, now: u64) -> Result<SweepReport, StoreError> {
    let cutoff = now.saturating_sub(ttl.as_secs());
    let mut report = SweepReport::default();
    for (top, count) in [(UPLOADS, &mut report.uploads), (RESULTS, &mut report.results)] {
        for id in ids_under(store, top)? {
            let Ok(record_key) = key(format!("{top}/{id}/{RECORD}")) else { continue };
            let stamp = match store.get(&record_key) {
                Ok(obj) => serde_json::from_slice::<Stamp>(&obj.bytes).ok(),
                Err(StoreError::NotFound(_)) => continue,
                Err(e) => return Err(e),
            };
            // Unreadable records are treated as expired.
            if stamp.is_none_or(|s| s.created_at < cutoff) {
                // Record first, so a half-deleted group reads as missing.
                store.delete(&record_key)?;
                delete_prefix(store, &format!("{top}/{id}/"))?;
                *count += 1;
            }
        }
    }
    let live = ids_under(store, RESULTS)?;
    for id in ids_under(store, FEEDBACK)? {
        if !live.contains(&id) {
            delete_prefix(store, &format!("{FEEDBACK}/{id}/"))?;
            report.feedback += 1;
        }
    }
    Ok(report)
}
