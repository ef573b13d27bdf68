//! Dataset manifests, train/dev/test splitting and frame alignment.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tv::TvTrajectory;

/// Frame-count difference above which alignment is logged as suspicious.
pub const ALIGN_WARN_FRAMES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidValue(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[default]
    BySpeaker,
    ByUtterance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub speaker_id: String,
    pub audio_path: PathBuf,
    pub tv_path: PathBuf,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self { entries };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.utt_id.as_str()) {
                return Err(Error::InvalidValue(format!("duplicate utterance id {}", e.utt_id)));
            }
        }
        Ok(())
    }

    /// Checks that every entry's audio and trajectory files exist, resolving
    /// relative paths against `root`.
    pub fn check_files(&self, root: &Path) -> Result<()> {
        for e in &self.entries {
            for p in [&e.audio_path, &e.tv_path] {
                let full = root.join(p);
                if !full.is_file() {
                    return Err(Error::io(
                        full,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "manifest entry file missing"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn speakers(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.speaker_id.as_str()).collect()
    }

    pub fn speakers_in(&self, split: Split) -> BTreeSet<&str> {
        self.split(split).map(|e| e.speaker_id.as_str()).collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == Some(split))
    }

    /// True when no speaker appears in more than one split.
    pub fn is_speaker_disjoint(&self) -> bool {
        let sets: Vec<_> = Split::ALL.iter().map(|s| self.speakers_in(*s)).collect();
        (0..3).all(|i| (i + 1..3).all(|j| sets[i].is_disjoint(&sets[j])))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wr.write_record(["utt_id", "speaker_id", "audio_path", "tv_path", "split"])?;
        for e in &self.entries {
            wr.write_record([
                e.utt_id.as_str(),
                e.speaker_id.as_str(),
                &e.audio_path.to_string_lossy(),
                &e.tv_path.to_string_lossy(),
                e.split.map(Split::as_str).unwrap_or(""),
            ])?;
        }
        wr.flush().map_err(|e| Error::io("<manifest>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if header != ["utt_id", "speaker_id", "audio_path", "tv_path", "split"] {
            return Err(Error::SchemaMismatch(format!("manifest header {}", header.join(","))));
        }
        let mut entries = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let split = match rec[4].trim() {
                "" => None,
                s => Some(s.parse()?),
            };
            entries.push(ManifestEntry {
                utt_id: rec[0].to_string(),
                speaker_id: rec[1].to_string(),
                audio_path: PathBuf::from(&rec[2]),
                tv_path: PathBuf::from(&rec[3]),
                split,
            });
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

fn split_counts(n: usize, fractions: (f64, f64, f64)) -> [usize; 3] {
    let train = (fractions.0 * n as f64).round() as usize;
    let dev = (fractions.1 * n as f64).round() as usize;
    let mut counts = [train.min(n), dev.min(n - train.min(n)), 0];
    counts[2] = n - counts[0] - counts[1];
    // every split with a positive fraction gets at least one unit
    for k in 0..3 {
        if counts[k] == 0 {
            let donor = (0..3).max_by_key(|&j| counts[j]).unwrap();
            counts[donor] -= 1;
            counts[k] += 1;
        }
    }
    counts
}

/// Deterministically assigns every entry to train/dev/test.
///
/// In `BySpeaker` mode whole speakers are assigned, so the returned manifest
/// is speaker-disjoint. Proportions are honored to within one unit (speaker or
/// utterance).
pub fn make_splits(
    manifest: &DatasetManifest,
    mode: SplitMode,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetManifest> {
    let (a, b, c) = fractions;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be positive and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = manifest.clone();
    match mode {
        SplitMode::BySpeaker => {
            let mut speakers: Vec<String> = manifest.speakers().into_iter().map(str::to_string).collect();
            if speakers.len() < 3 {
                return Err(Error::InvalidArgument(format!(
                    "by_speaker splitting needs at least 3 speakers, found {}",
                    speakers.len()
                )));
            }
            speakers.shuffle(&mut rng);
            let counts = split_counts(speakers.len(), fractions);
            let assign = |idx: usize| -> Split {
                if idx < counts[0] {
                    Split::Train
                } else if idx < counts[0] + counts[1] {
                    Split::Dev
                } else {
                    Split::Test
                }
            };
            for e in &mut out.entries {
                let idx = speakers.iter().position(|s| *s == e.speaker_id).unwrap();
                e.split = Some(assign(idx));
            }
        }
        SplitMode::ByUtterance => {
            let n = out.entries.len();
            if n < 3 {
                return Err(Error::InvalidArgument(format!(
                    "by_utterance splitting needs at least 3 utterances, found {n}"
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let counts = split_counts(n, fractions);
            for (rank, &i) in order.iter().enumerate() {
                out.entries[i].split = Some(if rank < counts[0] {
                    Split::Train
                } else if rank < counts[0] + counts[1] {
                    Split::Dev
                } else {
                    Split::Test
                });
            }
        }
    }
    Ok(out)
}

/// Common frame count of a spectrogram and a trajectory sharing a 10 ms grid
/// from utterance onset.
pub fn align_frames(spectrogram_frames: usize, tv: &TvTrajectory) -> Result<usize> {
    let tv_frames = tv.n_frames();
    let n = spectrogram_frames.min(tv_frames);
    if n == 0 {
        return Err(Error::NoOverlap);
    }
    let diff = spectrogram_frames.abs_diff(tv_frames);
    if diff > ALIGN_WARN_FRAMES {
        log::warn!(
            "frame count mismatch: {spectrogram_frames} audio frames vs {tv_frames} trajectory frames; truncating to {n}"
        );
    }
    Ok(n)
}

/// Alignment result including whether the mismatch exceeded the warning threshold.
pub fn align_frames_checked(spectrogram_frames: usize, tv: &TvTrajectory) -> Result<(usize, bool)> {
    let n = align_frames(spectrogram_frames, tv)?;
    Ok((n, spectrogram_frames.abs_diff(tv.n_frames()) > ALIGN_WARN_FRAMES))
}
