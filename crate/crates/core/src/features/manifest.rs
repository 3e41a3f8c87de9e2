use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bonafide,
    Spoof,
}

impl Label {
    /// Class index used by the classifier head: spoof 0, bonafide 1.
    pub fn index(self) -> usize {
        match self {
            Label::Spoof => 0,
            Label::Bonafide => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bonafide => "bonafide",
            Label::Spoof => "spoof",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bonafide" => Some(Label::Bonafide),
            "spoof" => Some(Label::Spoof),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    EvalSeen,
    EvalUnseen,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Dev, Split::EvalSeen, Split::EvalUnseen];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::EvalSeen => "eval_seen",
            Split::EvalUnseen => "eval_unseen",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Split::ALL.into_iter().find(|sp| sp.as_str() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub path: String,
    pub label: Label,
    /// `"-"` for bonafide.
    pub generator: String,
    pub split: Split,
}

impl ManifestEntry {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.utt_id.is_empty() {
            return Err("empty utt_id".into());
        }
        match self.label {
            Label::Bonafide if self.generator != "-" => Err(format!(
                "bonafide entry {} has generator {:?}",
                self.utt_id, self.generator
            )),
            Label::Spoof if self.generator.is_empty() || self.generator == "-" => {
                Err(format!("spoof entry {} has no generator", self.utt_id))
            }
            _ => Ok(()),
        }
    }
}

/// Parses a JSON-lines manifest. Blank lines are skipped.
pub fn load_manifest<R: BufRead>(src: R) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in src.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        entry.validate().map_err(|msg| Error::Parse { line: i + 1, msg })?;
        if !ids.insert(entry.utt_id.clone()) {
            return Err(Error::Integrity(format!("duplicate utt_id {}", entry.utt_id)));
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn write_manifest<W: Write>(entries: &[ManifestEntry], mut dest: W) -> Result<()> {
    for e in entries {
        serde_json::to_writer(&mut dest, e)?;
        dest.write_all(b"\n")?;
    }
    dest.flush()?;
    Ok(())
}
