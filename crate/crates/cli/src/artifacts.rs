//! Artifact files. Every JSON artifact is `{"meta": {...}, "data": ...}` and
//! every CSV starts with a `# config_hash=... seed=...` comment line.
//!
//! Files are staged in memory and written together by [`Artifacts::commit`],
//! so a failing stage leaves nothing behind.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    meta: &'a Meta,
    data: &'a T,
}

#[derive(Deserialize)]
struct OwnedEnvelope<T> {
    data: T,
}

pub struct Artifacts {
    dir: PathBuf,
    meta: Meta,
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>, meta: Meta) -> Self {
        Self {
            dir: dir.into(),
            meta,
            files: Vec::new(),
        }
    }

    pub fn meta(&self) -> &Meta {
        &self.meta
    }

    pub fn json<T: Serialize>(&mut self, name: &str, data: &T) -> anyhow::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(&Envelope {
            meta: &self.meta,
            data,
        })?;
        bytes.push(b'\n');
        self.files.push((name.to_string(), bytes));
        Ok(())
    }

    pub fn csv(&mut self, name: &str, table: Csv) {
        let mut bytes = format!(
            "# config_hash={} seed={}\n",
            self.meta.config_hash, self.meta.seed
        )
        .into_bytes();
        bytes.extend(table.into_bytes());
        self.files.push((name.to_string(), bytes));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Writes every staged file; returns their paths.
    pub fn commit(self) -> anyhow::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.dir)
            .with_context(|| format!("creating {}", self.dir.display()))?;
        let mut written = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Reads a JSON artifact, with or without the meta envelope.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let enveloped = value
        .as_object()
        .is_some_and(|o| o.contains_key("meta") && o.contains_key("data"));
    let parsed = if enveloped {
        serde_json::from_value::<OwnedEnvelope<T>>(value).map(|e| e.data)
    } else {
        serde_json::from_value(value)
    };
    parsed.with_context(|| format!("decoding {}", path.display()))
}

/// CSV table staged in memory.
pub struct Csv {
    writer: csv::Writer<Vec<u8>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Self { writer }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("in-memory write");
    }

    fn into_bytes(self) -> Vec<u8> {
        self.writer.into_inner().expect("in-memory flush")
    }
}

/// Fixed formatting for floats in CSV output.
pub fn num(x: f64) -> String {
    format!("{x:.6}")
}
