use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use super::{read_feature_stack, FeatureStack, ManifestEntry};
use crate::error::{Error, Result};

/// Resolves a manifest entry to its feature stack.
pub trait FeatureSource: Sync {
    fn load(&self, entry: &ManifestEntry) -> Result<FeatureStack>;
}

/// Reads ESDF files relative to a dataset root.
pub struct DirSource {
    root: PathBuf,
}

impl DirSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl FeatureSource for DirSource {
    fn load(&self, entry: &ManifestEntry) -> Result<FeatureStack> {
        let path = self.root.join(&entry.path);
        let file = File::open(&path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        read_feature_stack(BufReader::new(file))
    }
}

/// Stacks held in memory, keyed by utterance id.
#[derive(Default)]
pub struct MemorySource {
    stacks: HashMap<String, FeatureStack>,
}

impl MemorySource {
    pub fn materialize(source: &dyn FeatureSource, entries: &[ManifestEntry]) -> Result<Self> {
        let mut stacks = HashMap::with_capacity(entries.len());
        for e in entries {
            stacks.insert(e.utt_id.clone(), source.load(e)?);
        }
        Ok(Self { stacks })
    }

    pub fn insert(&mut self, utt_id: impl Into<String>, stack: FeatureStack) {
        self.stacks.insert(utt_id.into(), stack);
    }

    pub fn len(&self) -> usize {
        self.stacks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stacks.is_empty()
    }
}

impl FeatureSource for MemorySource {
    fn load(&self, entry: &ManifestEntry) -> Result<FeatureStack> {
        self.stacks
            .get(&entry.utt_id)
            .cloned()
            .ok_or_else(|| Error::Integrity(format!("no features for {}", entry.utt_id)))
    }
}
