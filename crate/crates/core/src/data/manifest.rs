use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dsp::wav::probe_wav;
use crate::dsp::{CROP_LEN, SAMPLE_RATE};
use crate::{Error, Result};

/// One stem on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemRecord {
    pub id: String,
    pub path: PathBuf,
    /// Seconds.
    pub duration: f64,
    /// Name of the class subdirectory, when there is one.
    pub label: Option<String>,
}

/// File skipped during ingestion and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub path: PathBuf,
    pub reason: String,
}

/// Ingested stem collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<StemRecord>,
    #[serde(default)]
    pub rejected: Vec<Rejection>,
}

fn wav_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            wav_files(&path, out)?;
        } else if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        {
            out.push(path);
        }
    }
    Ok(())
}

fn check_stem(path: &Path) -> Result<f64> {
    let (sr, _, frames) = probe_wav(path)?;
    if sr != SAMPLE_RATE {
        return Err(Error::SampleRate {
            path: path.to_path_buf(),
            found: sr,
            expected: SAMPLE_RATE,
        });
    }
    if frames < CROP_LEN {
        return Err(Error::TooShort {
            len: frames,
            needed: CROP_LEN,
        });
    }
    Ok(frames as f64 / sr as f64)
}

impl Manifest {
    /// Scans `root` for WAV stems, laid out as `<root>/<class>/<stem>.wav`
    /// or flat. Stems shorter than one crop, at another sample rate or
    /// unreadable are listed in `rejected`.
    pub fn ingest(root: &Path) -> Result<Self> {
        let mut files = Vec::new();
        wav_files(root, &mut files)?;
        files.sort();
        let mut records = Vec::new();
        let mut rejected = Vec::new();
        for path in files {
            match check_stem(&path) {
                Ok(duration) => {
                    let rel = path.strip_prefix(root).unwrap_or(&path);
                    let label = rel
                        .parent()
                        .and_then(|p| p.components().next())
                        .map(|c| c.as_os_str().to_string_lossy().into_owned());
                    let id = rel.with_extension("").to_string_lossy().replace('\\', "/");
                    records.push(StemRecord {
                        id,
                        path,
                        duration,
                        label,
                    });
                }
                Err(e) => {
                    warn!("skipping {}: {e}", path.display());
                    rejected.push(Rejection {
                        path,
                        reason: e.to_string(),
                    });
                }
            }
        }
        if records.is_empty() {
            return Err(Error::Empty(format!("no usable stems under {}", root.display())));
        }
        Ok(Self {
            root: root.to_path_buf(),
            records,
            rejected,
        })
    }

    /// Loads `cache` when it exists and describes `root`, otherwise ingests
    /// and writes the cache.
    pub fn ingest_cached(root: &Path, cache: &Path) -> Result<Self> {
        if let Ok(text) = fs::read_to_string(cache) {
            match serde_json::from_str::<Manifest>(&text) {
                Ok(m) if m.root == root => return Ok(m),
                Ok(_) => warn!("manifest cache {} is for another root", cache.display()),
                Err(e) => warn!("ignoring unreadable manifest cache {}: {e}", cache.display()),
            }
        }
        let m = Self::ingest(root)?;
        m.save(cache)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct labels in sorted order.
    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self.records.iter().filter_map(|r| r.label.clone()).collect();
        labels.sort();
        labels.dedup();
        labels
    }
}
