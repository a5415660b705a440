//! Point-track data model, the PTRK binary format, dataset manifests and the
//! track-level preprocessing transforms.
//!
//! Positions are stored frame-major (`[T][N][x, y]`) as `f32`, occlusion as one
//! byte per `(frame, track)` entry.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const PTRK_MAGIC: &[u8; 4] = b"PTRK";
pub const PTRK_VERSION: u16 = 1;
const FLAG_NORMALIZED: u16 = 1;

/// Border overshoot tolerated by [`normalize_coordinates`], as a fraction of
/// each image dimension.
pub const NORMALIZE_SLACK: f32 = 0.01;

/// Supervision attached to a clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(u32),
    Regression(Vec<f32>),
}

impl Label {
    pub fn class(&self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(*c as usize),
            Label::Regression(_) => None,
        }
    }

    pub fn target(&self) -> Option<&[f32]> {
        match self {
            Label::Class(_) => None,
            Label::Regression(v) => Some(v),
        }
    }
}

/// One video's point tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTrackSet {
    video_id: String,
    frames: usize,
    tracks: usize,
    positions: Vec<f32>,
    occlusion: Vec<u8>,
    width: Option<f32>,
    height: Option<f32>,
    fps: Option<f32>,
    label: Option<Label>,
    normalized: bool,
}

/// Builder-style constructor arguments for [`PointTrackSet::new`].
#[derive(Debug, Clone, Default)]
pub struct TrackMeta {
    pub video_id: String,
    pub width: Option<f32>,
    pub height: Option<f32>,
    pub fps: Option<f32>,
    pub label: Option<Label>,
    pub normalized: bool,
}

impl PointTrackSet {
    /// Validates and wraps the raw arrays. `positions` is `T·N·2` frame-major,
    /// `occlusion` is `T·N`.
    pub fn new(
        frames: usize,
        tracks: usize,
        positions: Vec<f32>,
        occlusion: Vec<u8>,
        meta: TrackMeta,
    ) -> Result<Self> {
        let set = PointTrackSet {
            video_id: meta.video_id,
            frames,
            tracks,
            positions,
            occlusion,
            width: meta.width,
            height: meta.height,
            fps: meta.fps,
            label: meta.label,
            normalized: meta.normalized,
        };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::validation(format!("T = {} < 2", self.frames)));
        }
        if self.tracks < 1 {
            return Err(Error::validation("N must be at least 1"));
        }
        let cells = self.frames * self.tracks;
        if self.positions.len() != cells * 2 {
            return Err(Error::validation(format!(
                "positions hold {} values, expected T·N·2 = {}",
                self.positions.len(),
                cells * 2
            )));
        }
        if self.occlusion.len() != cells {
            return Err(Error::validation(format!(
                "occlusion holds {} values, expected T·N = {}",
                self.occlusion.len(),
                cells
            )));
        }
        if let Some(i) = self.positions.iter().position(|p| !p.is_finite()) {
            return Err(Error::validation(format!("non-finite position at flat index {i}")));
        }
        if let Some(i) = self.occlusion.iter().position(|&o| o > 1) {
            return Err(Error::validation(format!("occlusion flag at flat index {i} is not 0/1")));
        }
        if self.normalized {
            if let Some(i) = self.positions.iter().position(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::validation(format!(
                    "normalized set has coordinate {} outside [0, 1] at flat index {i}",
                    self.positions[i]
                )));
            }
        }
        for (name, v) in [("width", self.width), ("height", self.height), ("fps", self.fps)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::validation(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if let Some(Label::Regression(v)) = &self.label {
            if v.is_empty() || v.len() > u16::MAX as usize || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::validation("regression label must be a finite, non-empty vector"));
            }
        }
        if self.video_id.len() > u16::MAX as usize {
            return Err(Error::validation("video_id longer than 65535 bytes"));
        }
        Ok(())
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn tracks(&self) -> usize {
        self.tracks
    }

    pub fn positions(&self) -> &[f32] {
        &self.positions
    }

    pub fn occlusion(&self) -> &[u8] {
        &self.occlusion
    }

    pub fn width(&self) -> Option<f32> {
        self.width
    }

    pub fn height(&self) -> Option<f32> {
        self.height
    }

    pub fn fps(&self) -> Option<f32> {
        self.fps
    }

    pub fn label(&self) -> Option<&Label> {
        self.label.as_ref()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// `(x, y)` of track `n` at frame `t`.
    #[inline]
    pub fn xy(&self, t: usize, n: usize) -> (f32, f32) {
        let i = (t * self.tracks + n) * 2;
        (self.positions[i], self.positions[i + 1])
    }

    #[inline]
    pub fn occluded(&self, t: usize, n: usize) -> bool {
        self.occlusion[t * self.tracks + n] == 1
    }

    pub fn meta(&self) -> TrackMeta {
        TrackMeta {
            video_id: self.video_id.clone(),
            width: self.width,
            height: self.height,
            fps: self.fps,
            label: self.label.clone(),
            normalized: self.normalized,
        }
    }

    pub fn with_label(mut self, label: Option<Label>) -> Result<Self> {
        self.label = label;
        self.validate()?;
        Ok(self)
    }

    pub fn with_video_id(mut self, id: impl Into<String>) -> Result<Self> {
        self.video_id = id.into();
        self.validate()?;
        Ok(self)
    }

    /// Keeps the listed tracks in the given order.
    pub fn select_tracks(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::invalid("track selection is empty"));
        }
        if let Some(&bad) = keep.iter().find(|&&n| n >= self.tracks) {
            return Err(Error::invalid(format!("track index {bad} out of range (N = {})", self.tracks)));
        }
        let mut positions = Vec::with_capacity(self.frames * keep.len() * 2);
        let mut occlusion = Vec::with_capacity(self.frames * keep.len());
        for t in 0..self.frames {
            for &n in keep {
                let (x, y) = self.xy(t, n);
                positions.extend([x, y]);
                occlusion.push(self.occlusion[t * self.tracks + n]);
            }
        }
        PointTrackSet::new(self.frames, keep.len(), positions, occlusion, self.meta())
    }
}

/// Adds the constant offset `c` to every position. The result is marked
/// unnormalized, since it may leave the unit square.
pub fn translate(set: &PointTrackSet, c: [f32; 2]) -> Result<PointTrackSet> {
    let positions = set
        .positions
        .chunks_exact(2)
        .flat_map(|p| [p[0] + c[0], p[1] + c[1]])
        .collect();
    let mut meta = set.meta();
    meta.normalized = false;
    PointTrackSet::new(set.frames, set.tracks, positions, set.occlusion.clone(), meta)
}

/// Per-track velocity and occlusion, laid out `[N][T][vx, vy, occ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityTensor {
    pub tracks: usize,
    pub frames: usize,
    pub values: Vec<f32>,
}

impl VelocityTensor {
    #[inline]
    pub fn at(&self, n: usize, t: usize) -> [f32; 3] {
        let i = (n * self.frames + t) * 3;
        [self.values[i], self.values[i + 1], self.values[i + 2]]
    }
}

/// Frame-to-frame displacement concatenated with the occlusion flag. Frame 0
/// has zero velocity so the tensor keeps length `T`.
pub fn compute_velocity(set: &PointTrackSet) -> VelocityTensor {
    let (t_len, n_len) = (set.frames, set.tracks);
    let mut values = vec![0.0f32; n_len * t_len * 3];
    for n in 0..n_len {
        for t in 0..t_len {
            let o = (n * t_len + t) * 3;
            if t > 0 {
                let (x1, y1) = set.xy(t, n);
                let (x0, y0) = set.xy(t - 1, n);
                values[o] = x1 - x0;
                values[o + 1] = y1 - y0;
            }
            values[o + 2] = f32::from(set.occlusion[t * n_len + n]);
        }
    }
    VelocityTensor {
        tracks: n_len,
        frames: t_len,
        values,
    }
}

/// Mean `(x, y)` of each track over all frames, occluded ones included.
/// Returned as `N` rows of two values.
pub fn mean_position(set: &PointTrackSet) -> Vec<[f64; 2]> {
    let mut sums = vec![[0.0f64; 2]; set.tracks];
    for t in 0..set.frames {
        for (n, s) in sums.iter_mut().enumerate() {
            let (x, y) = set.xy(t, n);
            s[0] += f64::from(x);
            s[1] += f64::from(y);
        }
    }
    let inv = 1.0 / set.frames as f64;
    sums.into_iter().map(|[x, y]| [x * inv, y * inv]).collect()
}

/// Keeps the middle `n` frames, starting at `⌊(T − n)/2⌋`.
pub fn temporal_crop(set: &PointTrackSet, n: usize) -> Result<PointTrackSet> {
    if n < 2 || n > set.frames {
        return Err(Error::invalid(format!(
            "crop length {n} outside [2, T = {}]",
            set.frames
        )));
    }
    let start = (set.frames - n) / 2;
    let row = set.tracks;
    let positions = set.positions[start * row * 2..(start + n) * row * 2].to_vec();
    let occlusion = set.occlusion[start * row..(start + n) * row].to_vec();
    PointTrackSet::new(n, row, positions, occlusion, set.meta())
}

/// Indices of `k` tracks drawn uniformly without replacement, ascending.
pub fn subsample_indices(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 1 || k > n {
        return Err(Error::invalid(format!("track count {k} outside [1, N = {n}]")));
    }
    let mut rng = seed::rng(seed, "subsample_tracks", 0);
    let mut idx = index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

pub fn subsample_tracks(set: &PointTrackSet, k: usize, seed: u64) -> Result<PointTrackSet> {
    if k == set.tracks {
        // still validate the range through the shared path
        subsample_indices(set.tracks, k, seed)?;
        return Ok(set.clone());
    }
    let keep = subsample_indices(set.tracks, k, seed)?;
    set.select_tracks(&keep)
}

/// Divides x by width and y by height.
pub fn normalize_coordinates(set: &PointTrackSet) -> Result<PointTrackSet> {
    if set.normalized {
        return Err(Error::validation("set is already normalized"));
    }
    let (w, h) = match (set.width, set.height) {
        (Some(w), Some(h)) => (w, h),
        _ => return Err(Error::validation("normalization needs width and height")),
    };
    let (sx, sy) = (w * NORMALIZE_SLACK, h * NORMALIZE_SLACK);
    let mut positions = Vec::with_capacity(set.positions.len());
    for (i, p) in set.positions.chunks_exact(2).enumerate() {
        let (x, y) = (p[0], p[1]);
        if x < -sx || x > w + sx || y < -sy || y > h + sy {
            return Err(Error::validation(format!(
                "point ({x}, {y}) at cell {i} lies outside {w}×{h} beyond the {}% slack",
                NORMALIZE_SLACK * 100.0
            )));
        }
        positions.push((x / w).clamp(0.0, 1.0));
        positions.push((y / h).clamp(0.0, 1.0));
    }
    let mut meta = set.meta();
    meta.normalized = true;
    PointTrackSet::new(set.frames, set.tracks, positions, set.occlusion.clone(), meta)
}

/// Uniform `rows × cols` grid in the unit square with half-cell margins,
/// row-major (x varies fastest).
pub fn make_grid(rows: usize, cols: usize) -> Result<Vec<[f32; 2]>> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("grid needs at least one row and one column"));
    }
    let mut pts = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            pts.push([
                ((c as f64 + 0.5) / cols as f64) as f32,
                ((r as f64 + 0.5) / rows as f64) as f32,
            ]);
        }
    }
    Ok(pts)
}

// ---------------------------------------------------------------------------
// PTRK serialization

pub fn encode_tracks(set: &PointTrackSet) -> Result<Vec<u8>> {
    set.validate()?;
    let mut buf = Vec::with_capacity(40 + set.video_id.len() + set.positions.len() * 4 + set.occlusion.len());
    buf.extend_from_slice(PTRK_MAGIC);
    buf.extend_from_slice(&PTRK_VERSION.to_le_bytes());
    let flags = if set.normalized { FLAG_NORMALIZED } else { 0 };
    buf.extend_from_slice(&flags.to_le_bytes());
    buf.extend_from_slice(&(set.frames as u32).to_le_bytes());
    buf.extend_from_slice(&(set.tracks as u32).to_le_bytes());
    for v in [set.width, set.height, set.fps] {
        buf.extend_from_slice(&v.unwrap_or(0.0).to_le_bytes());
    }
    buf.extend_from_slice(&(set.video_id.len() as u16).to_le_bytes());
    buf.extend_from_slice(set.video_id.as_bytes());
    for p in &set.positions {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    buf.extend_from_slice(&set.occlusion);
    match &set.label {
        None => buf.push(0),
        Some(Label::Class(c)) => {
            buf.push(1);
            buf.extend_from_slice(&c.to_le_bytes());
        }
        Some(Label::Regression(v)) => {
            buf.push(2);
            buf.extend_from_slice(&(v.len() as u16).to_le_bytes());
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    Ok(buf)
}

/// Little-endian cursor that reports truncation with the field being read.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Truncated(format!(
                "{what}: need {n} bytes at offset {}, {} available",
                self.pos,
                self.buf.len() - self.pos
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format(format!("{what}: length overflow")))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode_tracks(bytes: &[u8]) -> Result<PointTrackSet> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != PTRK_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"PTRK\"")));
    }
    let version = r.u16("version")?;
    if version != PTRK_VERSION {
        return Err(Error::Format(format!("unsupported PTRK version {version}")));
    }
    let flags = r.u16("flags")?;
    let frames = r.u32("T")? as usize;
    let tracks = r.u32("N")? as usize;
    let opt = |v: f32| if v == 0.0 { None } else { Some(v) };
    let width = opt(r.f32("width")?);
    let height = opt(r.f32("height")?);
    let fps = opt(r.f32("fps")?);
    let id_len = r.u16("video_id length")? as usize;
    let video_id = String::from_utf8(r.take(id_len, "video_id")?.to_vec())
        .map_err(|e| Error::Format(format!("video_id is not UTF-8: {e}")))?;
    let cells = frames
        .checked_mul(tracks)
        .ok_or_else(|| Error::Format("T·N overflows".into()))?;
    if cells.saturating_mul(9) > r.remaining() {
        return Err(Error::Truncated(format!(
            "payload for T = {frames}, N = {tracks} needs {} bytes, {} available",
            cells.saturating_mul(9),
            r.remaining()
        )));
    }
    let positions = r.f32s(cells * 2, "positions")?;
    let occlusion = r.take(cells, "occlusion")?.to_vec();
    let label = match r.u8("label tag")? {
        0 => None,
        1 => Some(Label::Class(r.u32("class label")?)),
        2 => {
            let len = r.u16("regression label length")? as usize;
            Some(Label::Regression(r.f32s(len, "regression label")?))
        }
        tag => return Err(Error::Format(format!("unknown label tag {tag}"))),
    };
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes after label block", r.remaining())));
    }
    PointTrackSet::new(
        frames,
        tracks,
        positions,
        occlusion,
        TrackMeta {
            video_id,
            width,
            height,
            fps,
            label,
            normalized: flags & FLAG_NORMALIZED != 0,
        },
    )
}

pub fn save_tracks(set: &PointTrackSet, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_tracks(set)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_tracks(path: impl AsRef<Path>) -> Result<PointTrackSet> {
    decode_tracks(&fs::read(path)?)
}

// ---------------------------------------------------------------------------
// Dataset manifests

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub split: Split,
    pub label: Label,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn write_manifest(dir: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<PathBuf> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(entries)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// A labeled clip loaded from a dataset directory.
#[derive(Debug, Clone)]
pub struct Sample {
    pub file: String,
    pub split: Split,
    pub label: Label,
    pub set: PointTrackSet,
}

/// Loads every manifest entry. Pixel-space files are normalized on load; a
/// label stored inside a file must agree with the manifest.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let dir = dir.as_ref();
    let entries = read_manifest(dir)?;
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let mut set = load_tracks(dir.join(&e.file))
            .map_err(|err| Error::Format(format!("{}: {err}", e.file)))?;
        if !set.is_normalized() {
            set = normalize_coordinates(&set)?;
        }
        if let Some(l) = set.label() {
            if *l != e.label {
                return Err(Error::validation(format!(
                    "{}: file label {l:?} disagrees with manifest label {:?}",
                    e.file, e.label
                )));
            }
        }
        out.push(Sample {
            file: e.file,
            split: e.split,
            label: e.label,
            set,
        });
    }
    Ok(out)
}
