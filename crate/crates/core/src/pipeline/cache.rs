//! Content-addressed stage outputs: every stage writes a `.key` stamp next
//! to its outputs holding a hash of everything it read.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::Result;

/// Incremental hash over labelled parts.
#[derive(Clone, Default)]
pub struct KeyBuilder {
    hasher: Sha256,
}

impl KeyBuilder {
    pub fn new(stage: &str) -> Self {
        let mut k = Self::default();
        k.part(stage.as_bytes());
        k
    }

    /// Length-prefixed so that part boundaries cannot be confused.
    pub fn part(&mut self, bytes: &[u8]) -> &mut Self {
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(bytes);
        self
    }

    pub fn file(&mut self, path: &Path) -> Result<&mut Self> {
        let bytes = fs::read(path)?;
        Ok(self.part(&bytes))
    }

    pub fn finish(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }
}

fn stamp_path(stamp: &Path) -> PathBuf {
    let mut s = stamp.as_os_str().to_owned();
    s.push(".key");
    PathBuf::from(s)
}

/// True when every output exists and the stamp of the first one matches `key`.
pub fn is_fresh(outputs: &[PathBuf], key: &str) -> bool {
    let Some(first) = outputs.first() else { return false };
    outputs.iter().all(|p| p.is_file())
        && fs::read_to_string(stamp_path(first)).is_ok_and(|k| k.trim() == key)
}

/// Records `key` for a set of outputs that have just been written.
pub fn stamp(outputs: &[PathBuf], key: &str) -> Result<()> {
    if let Some(first) = outputs.first() {
        fs::write(stamp_path(first), format!("{key}\n"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries_matter() {
        let a = KeyBuilder::new("s").part(b"ab").part(b"c").finish();
        let b = KeyBuilder::new("s").part(b"a").part(b"bc").finish();
        assert_ne!(a, b);
        assert_eq!(a, KeyBuilder::new("s").part(b"ab").part(b"c").finish());
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn freshness_follows_stamp() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("x.bin");
        let outs = vec![out.clone()];
        assert!(!is_fresh(&outs, "k1"));
        fs::write(&out, b"1").unwrap();
        assert!(!is_fresh(&outs, "k1"));
        stamp(&outs, "k1").unwrap();
        assert!(is_fresh(&outs, "k1"));
        assert!(!is_fresh(&outs, "k2"));
        fs::remove_file(&out).unwrap();
        assert!(!is_fresh(&outs, "k1"));
    }
}
