use log::warn;

use super::InteractionLog;
use crate::error::{GcmError, Result};

/// Keeps users with at least `k` records; single pass, user side only.
/// Items left without records disappear and all ids are re-densified.
pub fn apply_user_k_core(log: &InteractionLog, k: usize) -> Result<InteractionLog> {
    if k == 0 {
        return Err(GcmError::param("k-core threshold must be at least 1"));
    }
    let counts = user_counts(log);
    Ok(log.compact(|r| counts[r.user as usize] >= k))
}

fn user_counts(log: &InteractionLog) -> Vec<usize> {
    let mut counts = vec![0usize; log.n_users()];
    for r in &log.records {
        counts[r.user as usize] += 1;
    }
    counts
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: InteractionLog,
    pub test: InteractionLog,
    /// Users removed because they had fewer than two records.
    pub dropped_users: usize,
}

/// Holds out each user's latest record for testing.
///
/// "Latest" is the maximum timestamp; ties go to the later row. Training
/// keeps every other record except those on the held-out `(user, item)`
/// pair. Users with a single record are dropped (and ids re-densified)
/// first. Both halves share one id space.
pub fn split_leave_last_out(log: &InteractionLog) -> Split {
    let counts = user_counts(log);
    let dropped_users = counts.iter().filter(|&&c| c == 1).count();
    let base = if dropped_users > 0 {
        warn!("leave-last-out: dropping {dropped_users} users with a single record");
        log.compact(|r| counts[r.user as usize] >= 2)
    } else {
        log.clone()
    };

    let mut last: Vec<Option<usize>> = vec![None; base.n_users()];
    for (idx, r) in base.records.iter().enumerate() {
        let slot = &mut last[r.user as usize];
        match slot {
            Some(prev) if base.records[*prev].timestamp > r.timestamp => {}
            _ => *slot = Some(idx),
        }
    }
    let held_out_item: Vec<Option<u32>> = last
        .iter()
        .map(|l| l.map(|idx| base.records[idx].item))
        .collect();

    let mut is_test = vec![false; base.records.len()];
    for idx in last.iter().flatten() {
        is_test[*idx] = true;
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (idx, r) in base.records.iter().enumerate() {
        if is_test[idx] {
            test.push(r.clone());
        } else if held_out_item[r.user as usize] != Some(r.item) {
            train.push(r.clone());
        }
    }
    Split {
        train: base.with_records(train),
        test: base.with_records(test),
        dropped_users,
    }
}

#[cfg(test)]
mod tests {
    use super::super::{LogBuilder, Schema};
    use super::*;

    fn log_of(rows: &[(&str, &str, i64)]) -> InteractionLog {
        let mut b = LogBuilder::new(Schema::default());
        for (u, i, t) in rows {
            b.push(u, &[], i, &[], &[], *t);
        }
        b.finish()
    }

    #[test]
    fn ten_core_keeps_only_users_with_ten() {
        let mut rows = Vec::new();
        for t in 0..10 {
            rows.push(("A", "x", t));
        }
        for t in 0..9 {
            rows.push(("B", "y", t));
        }
        let log = log_of(&rows);
        let kept = apply_user_k_core(&log, 10).unwrap();
        assert_eq!(kept.users, vec!["A".to_string()]);
        assert_eq!(kept.items, vec!["x".to_string()]);
        assert_eq!(kept.len(), 10);
    }

    #[test]
    fn one_core_is_identity_and_empty_when_all_below() {
        let log = log_of(&[("a", "x", 1), ("b", "y", 2), ("a", "y", 3)]);
        assert_eq!(apply_user_k_core(&log, 1).unwrap(), log);
        let gone = apply_user_k_core(&log, 5).unwrap();
        assert!(gone.is_empty());
        assert_eq!(gone.n_users(), 0);
        assert!(apply_user_k_core(&log, 0).is_err());
    }

    #[test]
    fn last_record_goes_to_test() {
        let log = log_of(&[("u", "a", 1), ("u", "b", 2), ("u", "c", 3)]);
        let s = split_leave_last_out(&log);
        assert_eq!(s.test.len(), 1);
        assert_eq!(s.test.items[s.test.records[0].item as usize], "c");
        assert_eq!(s.test.records[0].timestamp, 3);
        let train_items: Vec<&str> = s
            .train
            .records
            .iter()
            .map(|r| s.train.items[r.item as usize].as_str())
            .collect();
        assert_eq!(train_items, vec!["a", "b"]);
    }

    #[test]
    fn repeated_test_pair_is_filtered_from_train() {
        let log = log_of(&[("u", "a", 1), ("u", "c", 2), ("u", "c", 3)]);
        let s = split_leave_last_out(&log);
        assert_eq!(s.test.records[0].timestamp, 3);
        assert_eq!(s.train.len(), 1);
        assert_eq!(s.train.items[s.train.records[0].item as usize], "a");
    }

    #[test]
    fn single_record_user_dropped() {
        let log = log_of(&[("solo", "a", 1), ("u", "a", 1), ("u", "b", 2)]);
        let s = split_leave_last_out(&log);
        assert_eq!(s.dropped_users, 1);
        assert_eq!(s.train.users, vec!["u".to_string()]);
        assert_eq!(s.test.len(), 1);
    }

    #[test]
    fn timestamp_tie_goes_to_later_row() {
        let log = log_of(&[("u", "a", 5), ("u", "b", 5), ("u", "c", 1)]);
        let s = split_leave_last_out(&log);
        assert_eq!(s.test.items[s.test.records[0].item as usize], "b");
    }
}
