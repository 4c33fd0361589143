use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{
    FeatureVocabulary, FieldKind, InteractionLog, InteractionRecord, LogBuilder, Schema,
    Vocabularies, ITEM_COLUMN, TIMESTAMP_COLUMN, USER_COLUMN,
};
use crate::error::{GcmError, Result};

pub const LOG_FORMAT_VERSION: u32 = 1;
const LOG_FORMAT_NAME: &str = "gcm-interaction-log";

/// Reads a tab-separated interaction log with a header row.
///
/// The header must contain `user`, `item` and `ts`, plus every field the
/// schema declares; other columns are ignored. Empty cells mean the feature
/// is absent. Line numbers in errors are 1-based and count the header.
pub fn parse_interaction_log<R: BufRead>(reader: R, schema: &Schema) -> Result<InteractionLog> {
    schema.validate()?;
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, line)) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => return Err(GcmError::Schema("missing header row".into())),
        }
    };
    let columns: Vec<&str> = header.trim_end_matches('\r').split('\t').collect();
    let find = |name: &str| -> Result<usize> {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| GcmError::Schema(format!("field `{name}` not present in header")))
    };
    let user_col = find(USER_COLUMN)?;
    let item_col = find(ITEM_COLUMN)?;
    let ts_col = find(TIMESTAMP_COLUMN)?;
    let lookup = |fields: &[String]| -> Result<Vec<(String, usize)>> {
        fields.iter().map(|f| Ok((f.clone(), find(f)?))).collect()
    };
    let user_cols = lookup(&schema.user_fields)?;
    let item_cols = lookup(&schema.item_fields)?;
    let ctx_cols = lookup(&schema.context_fields)?;

    let mut builder = LogBuilder::new(schema.clone());
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != columns.len() {
            return Err(GcmError::Parse {
                line: line_no,
                message: format!("expected {} columns, found {}", columns.len(), cells.len()),
            });
        }
        let user = cells[user_col];
        let item = cells[item_col];
        if user.is_empty() || item.is_empty() {
            return Err(GcmError::Parse {
                line: line_no,
                message: "empty user or item id".into(),
            });
        }
        let ts: i64 = cells[ts_col].parse().map_err(|_| GcmError::Parse {
            line: line_no,
            message: format!("invalid timestamp `{}`", cells[ts_col]),
        })?;
        builder.push(
            user,
            &pick(&user_cols, &cells),
            item,
            &pick(&item_cols, &cells),
            &pick(&ctx_cols, &cells),
            ts,
        );
    }
    Ok(builder.finish())
}

fn pick<'a>(cols: &'a [(String, usize)], cells: &[&'a str]) -> Vec<(&'a str, &'a str)> {
    cols.iter()
        .filter(|(_, c)| !cells[*c].is_empty())
        .map(|(f, c)| (f.as_str(), cells[*c]))
        .collect()
}

/// Writes the log in the same TSV layout [`parse_interaction_log`] reads.
pub fn write_log_tsv<W: Write>(log: &InteractionLog, mut out: W) -> Result<()> {
    let schema = &log.schema;
    let mut header = vec![USER_COLUMN, ITEM_COLUMN, TIMESTAMP_COLUMN];
    header.extend(schema.all_fields());
    writeln!(out, "{}", header.join("\t"))?;

    let check = |s: &str| -> Result<()> {
        if s.contains(['\t', '\n', '\r']) {
            Err(GcmError::format(format!("value `{s}` cannot be written as TSV")))
        } else {
            Ok(())
        }
    };
    for rec in &log.records {
        let user_attrs = log.user_attributes(rec.user);
        let item_attrs = log.item_attributes(rec.item);
        let ctx = log.context_values(rec);
        let mut row: Vec<String> = vec![
            log.users[rec.user as usize].clone(),
            log.items[rec.item as usize].clone(),
            rec.timestamp.to_string(),
        ];
        let cell = |attrs: &[(&str, &str)], field: &str| {
            attrs
                .iter()
                .find(|(f, _)| *f == field)
                .map(|(_, v)| v.to_string())
                .unwrap_or_default()
        };
        row.extend(schema.user_fields.iter().map(|f| cell(&user_attrs, f)));
        row.extend(schema.item_fields.iter().map(|f| cell(&item_attrs, f)));
        row.extend(schema.context_fields.iter().map(|f| cell(&ctx, f)));
        for c in &row {
            check(c)?;
        }
        writeln!(out, "{}", row.join("\t"))?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct LogHeader {
    format: String,
    version: u32,
    schema: Schema,
    users: Vec<String>,
    items: Vec<String>,
    user_features: Vec<Vec<u32>>,
    item_features: Vec<Vec<u32>>,
    user_vocab: Vec<(String, String)>,
    item_vocab: Vec<(String, String)>,
    context_vocab: Vec<(String, String)>,
    n_records: usize,
}

#[derive(Serialize, Deserialize)]
struct RecordLine(u32, u32, Vec<u32>, i64);

/// JSON-lines persistence preserving dense ids: a header line carrying the
/// format version, id spaces and vocabularies, then one record per line.
pub fn write_log_jsonl<W: Write>(log: &InteractionLog, mut out: W) -> Result<()> {
    let header = LogHeader {
        format: LOG_FORMAT_NAME.into(),
        version: LOG_FORMAT_VERSION,
        schema: log.schema.clone(),
        users: log.users.clone(),
        items: log.items.clone(),
        user_features: log.user_features.clone(),
        item_features: log.item_features.clone(),
        user_vocab: log.vocab.user.entries(),
        item_vocab: log.vocab.item.entries(),
        context_vocab: log.vocab.context.entries(),
        n_records: log.records.len(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for r in &log.records {
        serde_json::to_writer(
            &mut out,
            &RecordLine(r.user, r.item, r.context.clone(), r.timestamp),
        )?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_log_jsonl<R: BufRead>(reader: R) -> Result<InteractionLog> {
    let mut lines = reader.lines();
    let header: LogHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => return Err(GcmError::format("empty log file")),
    };
    if header.format != LOG_FORMAT_NAME {
        return Err(GcmError::format(format!("unexpected format `{}`", header.format)));
    }
    if header.version != LOG_FORMAT_VERSION {
        return Err(GcmError::format(format!(
            "log format version {} not supported (expected {LOG_FORMAT_VERSION})",
            header.version
        )));
    }
    let mut records = Vec::with_capacity(header.n_records);
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let RecordLine(user, item, context, timestamp) = serde_json::from_str(&line)?;
        if user as usize >= header.users.len() || item as usize >= header.items.len() {
            return Err(GcmError::format("record id out of range"));
        }
        records.push(InteractionRecord {
            user,
            item,
            context,
            timestamp,
        });
    }
    if records.len() != header.n_records {
        return Err(GcmError::format(format!(
            "truncated log: expected {} records, found {}",
            header.n_records,
            records.len()
        )));
    }
    Ok(InteractionLog {
        schema: header.schema,
        records,
        users: header.users,
        items: header.items,
        user_features: header.user_features,
        item_features: header.item_features,
        vocab: Vocabularies {
            user: FeatureVocabulary::from_entries(FieldKind::User, header.user_vocab)?,
            item: FeatureVocabulary::from_entries(FieldKind::Item, header.item_vocab)?,
            context: FeatureVocabulary::from_entries(FieldKind::Context, header.context_vocab)?,
        },
    })
}

/// `field<TAB>value<TAB>id`, one line per feature. An optional leading
/// `# key=value` comment line carries provenance (e.g. a run id).
pub fn write_vocabulary_tsv<W: Write>(
    vocab: &FeatureVocabulary,
    comment: Option<&str>,
    mut out: W,
) -> Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    for (id, field, value) in vocab.iter() {
        writeln!(out, "{field}\t{value}\t{id}")?;
    }
    Ok(())
}

/// Returns the vocabulary and any `#` comment lines (without the marker).
pub fn read_vocabulary_tsv<R: BufRead>(
    kind: FieldKind,
    reader: R,
) -> Result<(FeatureVocabulary, Vec<String>)> {
    let mut comments = Vec::new();
    let mut entries = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if let Some(c) = line.strip_prefix('#') {
            comments.push(c.trim().to_owned());
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        let bad = |message: String| GcmError::Parse {
            line: idx + 1,
            message,
        };
        if parts.len() != 3 {
            return Err(bad(format!("expected 3 columns, found {}", parts.len())));
        }
        let id: usize = parts[2]
            .parse()
            .map_err(|_| bad(format!("invalid id `{}`", parts[2])))?;
        if id != entries.len() {
            return Err(bad(format!("ids must be contiguous; expected {}", entries.len())));
        }
        entries.push((parts[0].to_owned(), parts[1].to_owned()));
    }
    Ok((FeatureVocabulary::from_entries(kind, entries)?, comments))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::new(["age"], ["color"], ["hour", "city"])
    }

    const SAMPLE: &str = "user\titem\tts\tage\tcolor\thour\tcity\n\
        alice\that\t10\t30\tblue\t9\tnyc\n\
        bob\that\t11\t\tblue\t\tsf\n\
        alice\tshirt\t12\t30\tred\t10\t\n";

    #[test]
    fn three_rows_two_users() {
        let log = parse_interaction_log(SAMPLE.as_bytes(), &schema()).unwrap();
        assert_eq!(log.n_users(), 2);
        assert_eq!(log.n_items(), 2);
        assert_eq!(log.len(), 3);
        // bob has no age, only the ID feature
        assert_eq!(log.user_features[1].len(), 1);
        assert_eq!(log.records[1].context.len(), 1);
    }

    #[test]
    fn header_only_is_empty() {
        let log = parse_interaction_log("user\titem\tts\tage\tcolor\thour\tcity\n".as_bytes(), &schema())
            .unwrap();
        assert_eq!(log.n_users(), 0);
        assert!(log.is_empty());
    }

    #[test]
    fn short_row_names_its_line() {
        let bad = "user\titem\tts\tage\tcolor\thour\tcity\n\
            a\tb\t1\t1\tx\t2\tc\n\
            a\tb\t2\t1\tx\t2\n";
        match parse_interaction_log(bad.as_bytes(), &schema()) {
            Err(GcmError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_schema_field() {
        let s = Schema::new(["height"], [""; 0], [""; 0]);
        assert!(matches!(
            parse_interaction_log(SAMPLE.as_bytes(), &s),
            Err(GcmError::Schema(_))
        ));
    }

    #[test]
    fn bad_timestamp() {
        let bad = "user\titem\tts\na\tb\tnoon\n";
        assert!(matches!(
            parse_interaction_log(bad.as_bytes(), &Schema::default()),
            Err(GcmError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn jsonl_round_trip_and_truncation() {
        let log = parse_interaction_log(SAMPLE.as_bytes(), &schema()).unwrap();
        let mut buf = Vec::new();
        write_log_jsonl(&log, &mut buf).unwrap();
        assert_eq!(read_log_jsonl(buf.as_slice()).unwrap(), log);

        let text = String::from_utf8(buf).unwrap();
        let cut: Vec<&str> = text.lines().take(2).collect();
        assert!(matches!(
            read_log_jsonl(cut.join("\n").as_bytes()),
            Err(GcmError::Format(_))
        ));
    }

    #[test]
    fn vocabulary_tsv_round_trip() {
        let log = parse_interaction_log(SAMPLE.as_bytes(), &schema()).unwrap();
        let mut buf = Vec::new();
        write_vocabulary_tsv(&log.vocab.context, Some("run_id=abc"), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("hour\t9\t0\n"));
        let (vocab, comments) = read_vocabulary_tsv(FieldKind::Context, buf.as_slice()).unwrap();
        assert_eq!(vocab, log.vocab.context);
        assert_eq!(comments, vec!["run_id=abc".to_string()]);
    }
}
