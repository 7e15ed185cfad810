//! Transcript datasets: labels, samples, manifest ingestion and sentence
//! segmentation.
//!
//! A dataset lives in a directory holding `manifest.tsv`, one transcript file
//! per sample (one sentence per line) and the stimulus picture. The manifest
//! has a header row and the columns `sample_id`, `label`, `transcript_relpath`
//! plus an optional fourth `split` column (`train` / `test`).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "HC")]
    Hc,
    #[serde(rename = "AD")]
    Ad,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Hc, Label::Ad];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Hc => "HC",
            Label::Ad => "AD",
        }
    }

    pub fn other(self) -> Label {
        match self {
            Label::Hc => Label::Ad,
            Label::Ad => Label::Hc,
        }
    }

    /// Signed encoding used by margin classifiers: HC = -1, AD = +1.
    pub fn sign(self) -> f64 {
        match self {
            Label::Hc => -1.0,
            Label::Ad => 1.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "HC" => Ok(Label::Hc),
            "AD" => Ok(Label::Ad),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split tag `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub sample_id: String,
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptSample {
    pub sample_id: String,
    pub sentences: Vec<Sentence>,
    pub label: Label,
}

impl TranscriptSample {
    /// Builds a sample from raw sentence strings. Sentences are trimmed and
    /// blank ones dropped; indices are assigned consecutively.
    pub fn new<S: AsRef<str>>(
        sample_id: impl Into<String>,
        label: Label,
        texts: &[S],
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        let sentences: Vec<Sentence> = texts
            .iter()
            .map(|t| t.as_ref().trim())
            .filter(|t| !t.is_empty())
            .enumerate()
            .map(|(index, text)| Sentence {
                sample_id: sample_id.clone(),
                index,
                text: text.to_string(),
            })
            .collect();
        if sentences.is_empty() {
            return Err(Error::EmptySample(sample_id));
        }
        Ok(TranscriptSample {
            sample_id,
            sentences,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().map(|s| s.text.as_str())
    }

    /// All sentences joined in original order with the same delimiter the
    /// filtering step uses, so an unfiltered sample and a `(0, 0)` processed
    /// sample produce identical classifier input.
    pub fn full_text(&self) -> String {
        join_sentences(self.texts())
    }

    pub fn word_count(&self) -> usize {
        self.texts().map(|t| t.split_whitespace().count()).sum()
    }
}

pub(crate) fn join_sentences<'a>(parts: impl Iterator<Item = &'a str>) -> String {
    parts.collect::<Vec<_>>().join(". ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<TranscriptSample>,
    pub picture_path: PathBuf,
    pub split_tags: Option<BTreeMap<String, Split>>,
}

impl Dataset {
    pub fn new(samples: Vec<TranscriptSample>, picture_path: impl Into<PathBuf>) -> Result<Self> {
        let ds = Dataset {
            samples,
            picture_path: picture_path.into(),
            split_tags: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.samples {
            if s.sentences.is_empty() {
                return Err(Error::EmptySample(s.sample_id.clone()));
            }
            if !seen.insert(s.sample_id.as_str()) {
                return Err(Error::DuplicateSampleId(s.sample_id.clone()));
            }
        }
        if let Some(tags) = &self.split_tags {
            let tagged: HashSet<&str> = tags.keys().map(String::as_str).collect();
            if tagged != seen {
                return Err(Error::InvalidConfig(
                    "split tags must cover exactly the dataset's sample ids".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn label_counts(&self) -> BTreeMap<Label, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(s.label).or_insert(0) += 1;
        }
        counts
    }

    /// Fails unless both classes are represented.
    pub fn require_both_labels(&self) -> Result<()> {
        let counts = self.label_counts();
        for label in Label::ALL {
            if !counts.contains_key(&label) {
                return Err(Error::MissingLabelClass(label.as_str()));
            }
        }
        Ok(())
    }

    pub fn sentence_count(&self) -> usize {
        self.samples.iter().map(TranscriptSample::len).sum()
    }

    /// Indices of samples tagged with `split`. Errors when the dataset has no
    /// split tags.
    pub fn split_indices(&self, split: Split) -> Result<Vec<usize>> {
        let tags = self
            .split_tags
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("dataset has no train/test split".into()))?;
        Ok(self
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| tags.get(&s.sample_id) == Some(&split))
            .map(|(i, _)| i)
            .collect())
    }
}

/// Splits raw text on `.`, `?`, `!` and newlines, trimming each piece and
/// dropping empty fragments.
pub fn segment_sentences(raw_text: &str) -> Vec<String> {
    raw_text
        .split(['.', '?', '!', '\n', '\r'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn find_picture(dir: &Path) -> Result<PathBuf> {
    let preferred = dir.join("picture.png");
    if preferred.is_file() {
        return Ok(preferred);
    }
    let entries =
        fs::read_dir(dir).map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
    let mut candidates: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.file_stem().and_then(|s| s.to_str()) == Some("picture")
                && image::ImageFormat::from_path(p).is_ok()
        })
        .collect();
    candidates.sort();
    candidates
        .into_iter()
        .next()
        .ok_or_else(|| Error::MissingPicture(dir.to_path_buf()))
}

/// Loads and validates a dataset directory. `path` may point at the
/// directory or at its `manifest.tsv`.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let (dir, manifest) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (dir, path.to_path_buf())
    };
    let body = fs::read_to_string(&manifest)
        .map_err(|e| Error::io(format!("reading {}", manifest.display()), e))?;
    let picture_path = find_picture(&dir)?;

    let mut samples = Vec::new();
    let mut tags = BTreeMap::new();
    let mut seen = HashSet::new();
    let mut has_split_column = false;
    for (lineno, line) in body.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if lineno == 0 && cols.first() == Some(&"sample_id") {
            has_split_column = cols.get(3) == Some(&"split");
            continue;
        }
        if cols.len() < 3 {
            return Err(Error::Manifest {
                line: lineno + 1,
                reason: format!(
                    "expected at least 3 tab-separated columns, found {}",
                    cols.len()
                ),
            });
        }
        let sample_id = cols[0].trim().to_string();
        if sample_id.is_empty() {
            return Err(Error::Manifest {
                line: lineno + 1,
                reason: "empty sample_id".into(),
            });
        }
        if !seen.insert(sample_id.clone()) {
            return Err(Error::DuplicateSampleId(sample_id));
        }
        let label: Label = cols[1].trim().parse()?;
        let transcript = dir.join(cols[2].trim());
        let text = fs::read_to_string(&transcript)
            .map_err(|e| Error::io(format!("reading transcript {}", transcript.display()), e))?;
        let lines: Vec<&str> = text.lines().collect();
        let sample = TranscriptSample::new(sample_id.clone(), label, &lines)?;
        if has_split_column || cols.len() > 3 {
            if let Some(tag) = cols.get(3).map(|s| s.trim()).filter(|s| !s.is_empty()) {
                tags.insert(sample_id, tag.parse::<Split>()?);
            }
        }
        samples.push(sample);
    }

    let dataset = Dataset {
        split_tags: if tags.is_empty() { None } else { Some(tags) },
        samples,
        picture_path,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes `dataset` in manifest form into `dir`: transcripts go under
/// `transcripts/<sample_id>.txt` and the picture is copied beside the
/// manifest (keeping its extension) unless it already lives there.
pub fn write_manifest(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let tdir = dir.join("transcripts");
    fs::create_dir_all(&tdir).map_err(|e| Error::io(format!("creating {}", tdir.display()), e))?;

    let mut out = String::from("sample_id\tlabel\ttranscript_relpath");
    if dataset.split_tags.is_some() {
        out.push_str("\tsplit");
    }
    out.push('\n');
    for s in &dataset.samples {
        let rel = format!("transcripts/{}.txt", s.sample_id);
        let mut body = s.texts().collect::<Vec<_>>().join("\n");
        body.push('\n');
        let tpath = dir.join(&rel);
        fs::write(&tpath, body)
            .map_err(|e| Error::io(format!("writing {}", tpath.display()), e))?;
        out.push_str(&format!("{}\t{}\t{}", s.sample_id, s.label, rel));
        if let Some(tags) = &dataset.split_tags {
            out.push('\t');
            out.push_str(&tags[&s.sample_id].to_string());
        }
        out.push('\n');
    }
    let manifest = dir.join(MANIFEST_FILE);
    fs::write(&manifest, out)
        .map_err(|e| Error::io(format!("writing {}", manifest.display()), e))?;

    let ext = dataset
        .picture_path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("png");
    let target = dir.join(format!("picture.{ext}"));
    let same = match (
        fs::canonicalize(&dataset.picture_path),
        fs::canonicalize(&target),
    ) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if !same {
        fs::copy(&dataset.picture_path, &target).map_err(|e| {
            Error::io(
                format!("copying picture {}", dataset.picture_path.display()),
                e,
            )
        })?;
    }
    Ok(manifest)
}
