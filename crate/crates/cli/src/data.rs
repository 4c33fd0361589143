//! Dataset directories: `schema.json`, `train.jsonl`, `test.jsonl`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use gcm::dataset::{build_graph, read_log_jsonl, split_leave_last_out, write_log_jsonl, AttributedGraph, InteractionLog};

pub struct Dataset {
    pub train: InteractionLog,
    pub test: InteractionLog,
    pub graph: AttributedGraph,
}

fn read_log(path: &Path) -> Result<InteractionLog> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_log_jsonl(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn load(dir: &Path) -> Result<Dataset> {
    let train = read_log(&dir.join("train.jsonl"))?;
    let test = read_log(&dir.join("test.jsonl"))?;
    if train.users != test.users || train.items != test.items {
        anyhow::bail!("train and test logs in {} use different id spaces", dir.display());
    }
    let graph = build_graph(&train);
    Ok(Dataset { train, test, graph })
}

/// Splits `log` leave-last-out and writes the dataset directory.
pub fn write_split(dir: &Path, log: &InteractionLog) -> Result<(usize, usize)> {
    fs::create_dir_all(dir)?;
    let split = split_leave_last_out(log);
    for (name, part) in [("train.jsonl", &split.train), ("test.jsonl", &split.test)] {
        let mut w = BufWriter::new(File::create(dir.join(name))?);
        write_log_jsonl(part, &mut w)?;
        w.flush()?;
    }
    let mut schema = serde_json::to_string_pretty(&log.schema)?;
    schema.push('\n');
    fs::write(dir.join("schema.json"), schema)?;
    Ok((split.train.len(), split.test.len()))
}
