//! Dataset manifest and snippet-feature file formats.
//!
//! A dataset is a JSON manifest plus one binary feature file per video per
//! stream. Feature files hold `f32` values; everything is widened to `f64`
//! on load. Paths in the manifest are resolved relative to the manifest's
//! directory, so a corpus directory can be moved around freely.

use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Feature files start with this magic, then little-endian u32 snippet
/// count `T` and feature dimension `D`, then `T * D` little-endian f32
/// values, snippet-major (all dimensions of snippet 0, then snippet 1, ...).
pub const FEATURE_MAGIC: &[u8; 8] = b"ACSFEAT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Rgb,
    Flow,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Rgb => "rgb",
            Stream::Flow => "flow",
        }
    }
}

/// One annotated action instance, in seconds from video start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSegment {
    pub start: f64,
    pub end: f64,
    /// 1-based action class (0 is reserved for background throughout).
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub split: Split,
    pub snippet_count: usize,
    /// Seconds covered by one snippet; snippet `t` spans
    /// `[t * snippet_duration, (t + 1) * snippet_duration)`.
    pub snippet_duration: f64,
    /// Video-level labels: the set of action classes present (1-based).
    /// This is the only supervision training uses.
    pub labels: Vec<usize>,
    pub rgb_features: String,
    pub flow_features: String,
    /// Evaluation-only annotations; never read by training.
    #[serde(default)]
    pub ground_truth: Vec<GroundTruthSegment>,
}

impl VideoRecord {
    pub fn duration(&self) -> f64 {
        self.snippet_count as f64 * self.snippet_duration
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// `class_names[i]` names 1-based class `i + 1`.
    pub class_names: Vec<String>,
    pub videos: Vec<VideoRecord>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// A loaded manifest bound to the directory its feature paths resolve in.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    root: PathBuf,
}

/// A video with both feature streams in memory, each `[D x T]`.
#[derive(Debug, Clone)]
pub struct LoadedVideo {
    pub record: VideoRecord,
    pub rgb: Matrix,
    pub flow: Matrix,
}

impl LoadedVideo {
    /// The `[D x T]` features of one stream.
    pub fn features(&self, stream: Stream) -> &Matrix {
        match stream {
            Stream::Rgb => &self.rgb,
            Stream::Flow => &self.flow,
        }
    }
}

impl Dataset {
    /// Parse and validate a manifest. Label sets are normalized to sorted
    /// order; every referenced feature file must exist and its header must
    /// agree with the record. Feature dimensions must be consistent across
    /// all videos within each stream.
    pub fn load(manifest_path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(manifest_path)
            .map_err(|e| Error::io(manifest_path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::format(manifest_path, format!("manifest JSON: {e}")))?;
        let root = manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .to_path_buf();
        let mut dataset = Dataset { manifest, root };
        dataset.validate()?;
        Ok(dataset)
    }

    fn validate(&mut self) -> Result<()> {
        let n = self.manifest.num_classes();
        if n == 0 {
            return Err(Error::Data("manifest declares no classes".to_string()));
        }
        for (i, a) in self.manifest.class_names.iter().enumerate() {
            if a.is_empty() {
                return Err(Error::Data(format!("class {} has an empty name", i + 1)));
            }
            if self.manifest.class_names[..i].contains(a) {
                return Err(Error::Data(format!("duplicate class name {a:?}")));
            }
        }
        let mut dims: [Option<usize>; 2] = [None, None];
        let mut seen_ids = std::collections::BTreeSet::new();
        let root = self.root.clone();
        for rec in &mut self.manifest.videos {
            let id = &rec.video_id;
            if !seen_ids.insert(id.clone()) {
                return Err(Error::Data(format!("duplicate video_id {id:?}")));
            }
            if rec.snippet_count == 0 {
                return Err(Error::Data(format!("{id}: snippet_count must be positive")));
            }
            if !(rec.snippet_duration.is_finite() && rec.snippet_duration > 0.0) {
                return Err(Error::Data(format!(
                    "{id}: snippet_duration must be positive, got {}",
                    rec.snippet_duration
                )));
            }
            if rec.labels.is_empty() {
                return Err(Error::Data(format!("{id}: empty label set")));
            }
            rec.labels.sort_unstable();
            if rec.labels.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Data(format!("{id}: duplicate labels")));
            }
            if rec.labels.iter().any(|&l| l == 0 || l > n) {
                return Err(Error::Data(format!(
                    "{id}: labels must be in 1..={n}, got {:?}",
                    rec.labels
                )));
            }
            let duration = rec.duration();
            for seg in &rec.ground_truth {
                if seg.class == 0 || seg.class > n {
                    return Err(Error::Data(format!(
                        "{id}: ground-truth class {} out of range 1..={n}",
                        seg.class
                    )));
                }
                if !(seg.start.is_finite() && seg.end.is_finite())
                    || seg.start < 0.0
                    || seg.start >= seg.end
                    || seg.end > duration + 1e-9
                {
                    return Err(Error::Data(format!(
                        "{id}: ground-truth segment [{}, {}] outside [0, {duration}]",
                        seg.start, seg.end
                    )));
                }
            }
            for (slot, stream) in [(0, Stream::Rgb), (1, Stream::Flow)] {
                let path = feature_path(&root, rec, stream);
                let (t, d) = read_feature_header(&path)?;
                if t != rec.snippet_count {
                    return Err(Error::format(
                        &path,
                        format!(
                            "{id}/{}: file has {t} snippets, manifest says {}",
                            stream.name(),
                            rec.snippet_count
                        ),
                    ));
                }
                match dims[slot] {
                    None => dims[slot] = Some(d),
                    Some(expect) if expect != d => {
                        return Err(Error::format(
                            &path,
                            format!(
                                "{id}/{}: feature dimension {d} differs from {expect} used elsewhere",
                                stream.name()
                            ),
                        ));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes()
    }

    /// Videos of one split, in manifest order.
    pub fn videos(&self, split: Split) -> impl Iterator<Item = &VideoRecord> {
        self.manifest.videos.iter().filter(move |v| v.split == split)
    }

    pub fn feature_path(&self, rec: &VideoRecord, stream: Stream) -> PathBuf {
        feature_path(&self.root, rec, stream)
    }

    /// Load one stream of one video as a `[D x T]` matrix.
    pub fn load_features(&self, rec: &VideoRecord, stream: Stream) -> Result<Matrix> {
        let path = self.feature_path(rec, stream);
        let m = read_features(&path)?;
        if m.cols() != rec.snippet_count {
            return Err(Error::format(
                &path,
                format!(
                    "file has {} snippets, manifest says {}",
                    m.cols(),
                    rec.snippet_count
                ),
            ));
        }
        Ok(m)
    }

    /// Load both streams for every video of a split, in manifest order.
    pub fn load_videos(&self, split: Split) -> Result<Vec<LoadedVideo>> {
        self.videos(split)
            .map(|rec| {
                Ok(LoadedVideo {
                    record: rec.clone(),
                    rgb: self.load_features(rec, Stream::Rgb)?,
                    flow: self.load_features(rec, Stream::Flow)?,
                })
            })
            .collect()
    }
}

fn feature_path(root: &Path, rec: &VideoRecord, stream: Stream) -> PathBuf {
    let rel = match stream {
        Stream::Rgb => &rec.rgb_features,
        Stream::Flow => &rec.flow_features,
    };
    root.join(rel)
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write a `[D x T]` feature matrix; values are narrowed to `f32`.
pub fn write_features(path: &Path, features: &Matrix) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = io::BufWriter::new(file);
    let (d, t) = features.shape();
    let inner = |w: &mut dyn Write| -> io::Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        w.write_all(&(t as u32).to_le_bytes())?;
        w.write_all(&(d as u32).to_le_bytes())?;
        for snippet in 0..t {
            for dim in 0..d {
                w.write_all(&(features.get(dim, snippet) as f32).to_le_bytes())?;
            }
        }
        w.flush()
    };
    inner(&mut w).map_err(|e| Error::io(path, e))
}

/// Read just `(T, D)` from a feature file header.
pub fn read_feature_header(path: &Path) -> Result<(usize, usize)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = io::BufReader::new(file);
    read_header(&mut r).map_err(|e| header_error(path, e))
}

/// Read a whole feature file as a `[D x T]` matrix of finite values.
pub fn read_features(path: &Path) -> Result<Matrix> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = io::BufReader::new(file);
    let (t, d) = read_header(&mut r).map_err(|e| header_error(path, e))?;
    let mut m = Matrix::zeros(d, t);
    let mut buf = [0u8; 4];
    for snippet in 0..t {
        for dim in 0..d {
            r.read_exact(&mut buf).map_err(|e| {
                Error::format(
                    path,
                    format!("feature payload truncated ({t} x {d} declared): {e}"),
                )
            })?;
            m.set(dim, snippet, f32::from_le_bytes(buf) as f64);
        }
    }
    if r.read(&mut buf[..1]).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(
            path,
            format!("trailing bytes after {t} x {d} payload"),
        ));
    }
    if !m.all_finite() {
        return Err(Error::format(path, "non-finite feature values".to_string()));
    }
    Ok(m)
}

fn read_header<R: Read>(r: &mut R) -> io::Result<(usize, usize)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("bad feature magic {magic:x?}"),
        ));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let t = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let d = u32::from_le_bytes(word) as usize;
    if t == 0 || d == 0 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("degenerate feature shape {t} x {d}"),
        ));
    }
    Ok((t, d))
}

fn header_error(path: &Path, e: io::Error) -> Error {
    match e.kind() {
        io::ErrorKind::InvalidData | io::ErrorKind::UnexpectedEof => {
            Error::format(path, e.to_string())
        }
        _ => Error::io(path, e),
    }
}
