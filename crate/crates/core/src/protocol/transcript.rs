use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Outcome, Party};

/// One plaintext value set a party held during the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty", with = "hex_bytes")]
    pub bytes: Vec<u8>,
}

impl ViewEntry {
    pub fn values(label: &str, values: &[f64]) -> Self {
        ViewEntry {
            label: label.into(),
            values: values.to_vec(),
            bytes: Vec::new(),
        }
    }

    pub fn bytes(label: &str, bytes: &[u8]) -> Self {
        ViewEntry {
            label: label.into(),
            values: Vec::new(),
            bytes: bytes.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: u32,
    pub from: Party,
    pub to: Party,
    pub tag: String,
    pub shape: String,
    /// SHA-256 of the encoded frame, hex.
    pub digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
    /// Microseconds since the session started. Ignored by comparisons.
    pub ts_us: u64,
}

/// Append-only record of a session: every frame sent, each party's plaintext view, and the
/// outcome.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
    pub views: BTreeMap<Party, Vec<ViewEntry>>,
    pub outcome: Option<Outcome>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Message(TranscriptEntry),
    View { party: Party, entry: ViewEntry },
    Outcome { outcome: Outcome },
}

impl Transcript {
    pub fn push(&mut self, entry: TranscriptEntry) {
        self.entries.push(entry);
    }

    /// Merges per-party send logs into schedule order.
    pub fn merge(parts: impl IntoIterator<Item = Transcript>) -> Transcript {
        let mut out = Transcript::default();
        for part in parts {
            out.entries.extend(part.entries);
            for (party, view) in part.views {
                out.views.entry(party).or_default().extend(view);
            }
            if out.outcome.is_none() {
                out.outcome = part.outcome;
            }
        }
        out.entries.sort_by_key(|e| (e.seq, e.from, e.to));
        out
    }

    pub fn view(&self, party: Party) -> &[ViewEntry] {
        self.views.get(&party).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Message records without timestamps, one JSON object per line.
    pub fn canonical_lines(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| {
                let mut e = e.clone();
                e.ts_us = 0;
                serde_json::to_string(&Record::Message(e)).expect("serializable")
            })
            .collect()
    }

    /// Writes line-delimited JSON. Views are only written in debug mode.
    pub fn write_jsonl(&self, mut w: impl Write, debug: bool) -> io::Result<()> {
        for e in &self.entries {
            let mut e = e.clone();
            if !debug {
                e.payload = None;
            }
            serde_json::to_writer(&mut w, &Record::Message(e))?;
            w.write_all(b"\n")?;
        }
        if debug {
            for (party, view) in &self.views {
                for entry in view {
                    let rec = Record::View {
                        party: *party,
                        entry: entry.clone(),
                    };
                    serde_json::to_writer(&mut w, &rec)?;
                    w.write_all(b"\n")?;
                }
            }
        }
        if let Some(outcome) = &self.outcome {
            serde_json::to_writer(
                &mut w,
                &Record::Outcome {
                    outcome: outcome.clone(),
                },
            )?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> io::Result<Transcript> {
        let mut t = Transcript::default();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line)? {
                Record::Message(e) => t.entries.push(e),
                Record::View { party, entry } => t.views.entry(party).or_default().push(entry),
                Record::Outcome { outcome } => t.outcome = Some(outcome),
            }
        }
        Ok(t)
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}
