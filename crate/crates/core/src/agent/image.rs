use std::fs;
use std::path::{Path, PathBuf};

use rand::RngCore;

use crate::util::{derive_seed, rng, sha256_hex};
use crate::Result;

/// Image-generation backend.
pub trait ImageGenerator: Send + Sync {
    fn generate(&self, prompt: &str) -> Result<Vec<u8>>;
}

const STUB_IMAGE_BYTES: usize = 4096;

/// Offline generator: a seeded pseudo-random byte block keyed by the prompt hash.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubImageGenerator {
    seed: u64,
}

impl StubImageGenerator {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl ImageGenerator for StubImageGenerator {
    fn generate(&self, prompt: &str) -> Result<Vec<u8>> {
        let digest = sha256_hex(prompt.as_bytes());
        let key = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
        let mut bytes = vec![0u8; STUB_IMAGE_BYTES];
        rng(derive_seed(self.seed, key)).fill_bytes(&mut bytes);
        Ok(bytes)
    }
}

/// Content-addressed image store: `<dir>/<sha256>.bin`.
#[derive(Debug, Clone)]
pub struct ImageStore {
    dir: PathBuf,
}

impl ImageStore {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_of(&self, image_ref: &str) -> PathBuf {
        self.dir.join(format!("{image_ref}.bin"))
    }

    /// Store bytes and return their reference (the sha256 hex digest).
    pub fn put(&self, bytes: &[u8]) -> Result<String> {
        let image_ref = sha256_hex(bytes);
        let path = self.path_of(&image_ref);
        if !path.exists() {
            let tmp = self.dir.join(format!(".{image_ref}.tmp"));
            fs::write(&tmp, bytes)?;
            fs::rename(&tmp, &path)?;
        }
        Ok(image_ref)
    }

    pub fn get(&self, image_ref: &str) -> Result<Vec<u8>> {
        Ok(fs::read(self.path_of(image_ref))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_is_keyed_by_prompt() {
        let g = StubImageGenerator::new(7);
        assert_eq!(g.generate("a").unwrap(), g.generate("a").unwrap());
        assert_ne!(g.generate("a").unwrap(), g.generate("b").unwrap());
        assert_ne!(g.generate("a").unwrap(), StubImageGenerator::new(8).generate("a").unwrap());
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = ImageStore::new(dir.path().join("images")).unwrap();
        let r = store.put(b"pixels").unwrap();
        assert_eq!(r, sha256_hex(b"pixels"));
        assert_eq!(store.get(&r).unwrap(), b"pixels");
    }
}
