//! Dual-mode frame sequences and respiration trace files.
//!
//! A sequence directory holds thermal frames as binary 16-bit graymaps
//! (`thermal_00000.pgm`, ...), optional RGB frames as binary pixmaps
//! (`rgb_00000.ppm`, ...) and a `boxes.jsonl` sidecar with one face box
//! per frame. When RGB frames are present the boxes are in RGB pixel
//! coordinates, otherwise they are in thermal coordinates.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sampling rate assumed when a sequence directory carries none.
pub const DEFAULT_SAMPLE_RATE: f64 = 10.0;

/// Smallest face box side accepted by the pipeline.
pub const MIN_FACE_SIDE: u32 = 8;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: not a sequence directory")]
    NotADirectory { path: PathBuf },
    #[error("{path}: malformed netpbm file: {reason}")]
    Netpbm { path: PathBuf, reason: String },
    #[error("gap in {kind} frames: index {index} is missing")]
    Gap { kind: &'static str, index: usize },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

pub type Result<T, E = FrameError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FrameError + '_ {
    move |source| FrameError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A single camera frame. Thermal frames are single-channel raw sensor
/// counts; RGB frames hold three 8-bit channels stored widened.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: u32,
    height: u32,
    channels: u8,
    samples: Vec<u16>,
}

impl Frame {
    pub fn new(width: u32, height: u32, channels: u8, samples: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(FrameError::Validation(format!(
                "frame dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(FrameError::Validation(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        let expected = width as usize * height as usize * channels as usize;
        if samples.len() != expected {
            return Err(FrameError::Validation(format!(
                "expected {expected} samples for {width}x{height}x{channels}, got {}",
                samples.len()
            )));
        }
        if channels == 3 && samples.iter().any(|&s| s > 255) {
            return Err(FrameError::Validation(
                "RGB samples must fit in 8 bits".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn thermal(width: u32, height: u32, samples: Vec<u16>) -> Result<Self> {
        Self::new(width, height, 1, samples)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn samples(&self) -> &[u16] {
        &self.samples
    }

    /// Sample at column `x`, row `y` of a single-channel frame.
    #[inline]
    pub fn at(&self, x: u32, y: u32) -> u16 {
        self.samples[(y as usize * self.width as usize + x as usize) * self.channels as usize]
    }
}

/// Face bounding box for one frame, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceBox {
    pub frame: usize,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl FaceBox {
    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.x as u64 + self.w as u64 <= width as u64
            && self.y as u64 + self.h as u64 <= height as u64
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        if self.w < MIN_FACE_SIDE || self.h < MIN_FACE_SIDE {
            return Err(FrameError::Validation(format!(
                "face box for frame {} is {}x{}, minimum side is {MIN_FACE_SIDE}",
                self.frame, self.w, self.h
            )));
        }
        if !self.fits_in(width, height) {
            return Err(FrameError::Validation(format!(
                "face box for frame {} ({},{} {}x{}) exceeds the {width}x{height} frame",
                self.frame, self.x, self.y, self.w, self.h
            )));
        }
        Ok(())
    }
}

/// Time-ordered paired frames with per-frame face boxes.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    thermal: Vec<Frame>,
    rgb: Vec<Frame>,
    boxes: Vec<FaceBox>,
    sample_rate: f64,
}

impl FrameSequence {
    /// Builds a sequence, checking every structural invariant. Boxes are
    /// sorted by frame index.
    pub fn new(
        thermal: Vec<Frame>,
        rgb: Vec<Frame>,
        mut boxes: Vec<FaceBox>,
        sample_rate: f64,
    ) -> Result<Self> {
        if thermal.is_empty() {
            return Err(FrameError::Validation(
                "sequence has no thermal frames".into(),
            ));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(FrameError::Validation(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        check_uniform(&thermal, "thermal", 1)?;
        if !rgb.is_empty() {
            check_uniform(&rgb, "rgb", 3)?;
            if rgb.len() != thermal.len() {
                return Err(FrameError::Validation(format!(
                    "{} rgb frames for {} thermal frames",
                    rgb.len(),
                    thermal.len()
                )));
            }
        }
        boxes.sort_by_key(|b| b.frame);
        if boxes.len() != thermal.len() {
            return Err(FrameError::Validation(format!(
                "{} face boxes for {} frames",
                boxes.len(),
                thermal.len()
            )));
        }
        let (bw, bh) = if rgb.is_empty() {
            thermal[0].dims()
        } else {
            rgb[0].dims()
        };
        for (i, b) in boxes.iter().enumerate() {
            if b.frame != i {
                return Err(FrameError::Validation(format!(
                    "expected exactly one face box for frame {i}, found frame {}",
                    b.frame
                )));
            }
            b.validate(bw, bh)?;
        }
        Ok(Self {
            thermal,
            rgb,
            boxes,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.thermal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thermal.is_empty()
    }

    pub fn thermal(&self) -> &[Frame] {
        &self.thermal
    }

    pub fn rgb(&self) -> &[Frame] {
        &self.rgb
    }

    pub fn boxes(&self) -> &[FaceBox] {
        &self.boxes
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn thermal_dims(&self) -> (u32, u32) {
        self.thermal[0].dims()
    }

    /// Dimensions of the frames the face boxes refer to.
    pub fn box_dims(&self) -> (u32, u32) {
        self.rgb.first().unwrap_or(&self.thermal[0]).dims()
    }
}

fn check_uniform(frames: &[Frame], kind: &str, channels: u8) -> Result<()> {
    let dims = frames[0].dims();
    for (i, f) in frames.iter().enumerate() {
        if f.channels() != channels {
            return Err(FrameError::Validation(format!(
                "{kind} frame {i} has {} channels, expected {channels}",
                f.channels()
            )));
        }
        if f.dims() != dims {
            return Err(FrameError::Validation(format!(
                "{kind} frame {i} is {}x{}, expected {}x{}",
                f.width(),
                f.height(),
                dims.0,
                dims.1
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    /// Class index used by the classifier (normal = 0, abnormal = 1).
    pub fn index(self) -> usize {
        match self {
            Label::Normal => 0,
            Label::Abnormal => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Label::Normal
        } else {
            Label::Abnormal
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Normal => "normal",
            Label::Abnormal => "abnormal",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "normal" | "0" => Ok(Label::Normal),
            "abnormal" | "1" => Ok(Label::Abnormal),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// ROI mean intensity per frame at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RespirationTrace {
    values: Vec<f64>,
    sample_rate: f64,
    pub label: Option<Label>,
    pub provenance: String,
}

impl RespirationTrace {
    pub fn new(values: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(FrameError::Validation("trace is empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FrameError::Validation(format!(
                "trace value {i} is not finite"
            )));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(FrameError::Validation(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        Ok(Self {
            values,
            sample_rate,
            label: None,
            provenance: String::new(),
        })
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

// ---------------------------------------------------------------------------
// netpbm

/// Reads a binary graymap (P5) or pixmap (P6). 16-bit samples are big-endian.
pub fn read_netpbm(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_netpbm(&bytes).map_err(|reason| FrameError::Netpbm {
        path: path.to_path_buf(),
        reason,
    })
}

fn decode_netpbm(bytes: &[u8]) -> std::result::Result<Frame, String> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos).ok_or("missing magic number")?;
    let channels = match magic {
        b"P5" => 1u8,
        b"P6" => 3u8,
        other => {
            return Err(format!(
                "unsupported magic {:?}",
                String::from_utf8_lossy(other)
            ))
        }
    };
    let mut fields = [0u32; 3];
    for (slot, name) in fields.iter_mut().zip(["width", "height", "maxval"]) {
        let tok = header_token(bytes, &mut pos).ok_or_else(|| format!("missing {name}"))?;
        *slot = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("bad {name}"))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing raster separator".into());
    }
    pos += 1;
    let count = width as usize * height as usize * channels as usize;
    let wide = maxval > 255;
    let needed = count * if wide { 2 } else { 1 };
    let raster = &bytes[pos..];
    if raster.len() < needed {
        return Err(format!(
            "raster truncated: need {needed} bytes, have {}",
            raster.len()
        ));
    }
    let samples: Vec<u16> = if wide {
        raster[..needed]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        raster[..needed].iter().map(|&b| b as u16).collect()
    };
    if let Some(s) = samples.iter().find(|&&s| s as u32 > maxval) {
        return Err(format!("sample {s} exceeds maxval {maxval}"));
    }
    Frame::new(width, height, channels, samples).map_err(|e| e.to_string())
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

/// Writes a thermal frame as P5 with maxval 65535 or an RGB frame as P6
/// with maxval 255.
pub fn write_netpbm(frame: &Frame, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(frame.samples.len() * 2 + 32);
    if frame.channels == 1 {
        write!(out, "P5\n{} {}\n65535\n", frame.width, frame.height).unwrap();
        for s in &frame.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        write!(out, "P6\n{} {}\n255\n", frame.width, frame.height).unwrap();
        out.extend(frame.samples.iter().map(|&s| s as u8));
    }
    fs::write(path, out).map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// sequence directories

fn indexed_files(dir: &Path, prefix: &str, ext: &str) -> Result<BTreeMap<usize, PathBuf>> {
    let mut found = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(stem) = name
            .strip_prefix(prefix)
            .and_then(|rest| rest.strip_suffix(ext))
        else {
            continue;
        };
        if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        let index: usize = stem.parse().map_err(|_| {
            FrameError::Validation(format!("frame index in {name} is out of range"))
        })?;
        found.insert(index, entry.path());
    }
    Ok(found)
}

fn contiguous(files: BTreeMap<usize, PathBuf>, kind: &'static str) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::with_capacity(files.len());
    for (expected, (index, path)) in files.into_iter().enumerate() {
        if index != expected {
            return Err(FrameError::Gap {
                kind,
                index: expected,
            });
        }
        paths.push(path);
    }
    Ok(paths)
}

/// Loads a sequence directory at the default 10 Hz sample rate.
pub fn load_sequence(dir: &Path) -> Result<FrameSequence> {
    load_sequence_with_rate(dir, DEFAULT_SAMPLE_RATE)
}

pub fn load_sequence_with_rate(dir: &Path, sample_rate: f64) -> Result<FrameSequence> {
    if !dir.is_dir() {
        return Err(FrameError::NotADirectory {
            path: dir.to_path_buf(),
        });
    }
    let thermal_paths = contiguous(indexed_files(dir, "thermal_", ".pgm")?, "thermal")?;
    let rgb_paths = contiguous(indexed_files(dir, "rgb_", ".ppm")?, "rgb")?;
    if !rgb_paths.is_empty() && rgb_paths.len() != thermal_paths.len() {
        // report the first index present on one side only
        let index = rgb_paths.len().min(thermal_paths.len());
        let kind = if rgb_paths.len() < thermal_paths.len() {
            "rgb"
        } else {
            "thermal"
        };
        return Err(FrameError::Gap { kind, index });
    }
    let thermal = thermal_paths
        .iter()
        .map(|p| read_netpbm(p))
        .collect::<Result<Vec<_>>>()?;
    let rgb = rgb_paths
        .iter()
        .map(|p| read_netpbm(p))
        .collect::<Result<Vec<_>>>()?;
    let boxes = read_boxes(&dir.join("boxes.jsonl"))?;

    let mut seen = vec![false; thermal.len()];
    for b in &boxes {
        match seen.get_mut(b.frame) {
            Some(s) if !*s => *s = true,
            Some(_) => {
                return Err(FrameError::Validation(format!(
                    "duplicate face box for frame {}",
                    b.frame
                )))
            }
            None => {
                return Err(FrameError::Validation(format!(
                    "face box refers to frame {} but the sequence has {} frames",
                    b.frame,
                    thermal.len()
                )))
            }
        }
    }
    if let Some(index) = seen.iter().position(|s| !s) {
        return Err(FrameError::Gap {
            kind: "face box",
            index,
        });
    }
    FrameSequence::new(thermal, rgb, boxes, sample_rate)
}

pub fn read_boxes(path: &Path) -> Result<Vec<FaceBox>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut boxes = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let b: FaceBox = serde_json::from_str(&line).map_err(|e| FrameError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        boxes.push(b);
    }
    Ok(boxes)
}

pub fn write_boxes(boxes: &[FaceBox], path: &Path) -> Result<()> {
    let mut out = String::new();
    for b in boxes {
        out.push_str(&serde_json::to_string(b).expect("face box serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Writes a sequence in the directory layout read by [`load_sequence`].
pub fn save_sequence(seq: &FrameSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, f) in seq.thermal().iter().enumerate() {
        write_netpbm(f, &dir.join(format!("thermal_{i:05}.pgm")))?;
    }
    for (i, f) in seq.rgb().iter().enumerate() {
        write_netpbm(f, &dir.join(format!("rgb_{i:05}.ppm")))?;
    }
    write_boxes(seq.boxes(), &dir.join("boxes.jsonl"))
}

// ---------------------------------------------------------------------------
// trace files

/// Writes `# sample_rate=.. label=.. provenance=..`, a `t,value` header and
/// one row per sample. Floats use the shortest representation that parses
/// back to the same bits.
pub fn save_trace(trace: &RespirationTrace, path: &Path) -> Result<()> {
    if trace.values.is_empty() {
        return Err(FrameError::Validation(
            "refusing to write an empty trace".into(),
        ));
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let label = trace
        .label
        .map(|l| l.to_string())
        .unwrap_or_else(|| "none".into());
    let provenance = trace.provenance.replace(['\n', '\r'], " ");
    (|| -> io::Result<()> {
        writeln!(
            w,
            "# sample_rate={} label={label} provenance={provenance}",
            trace.sample_rate
        )?;
        writeln!(w, "t,value")?;
        for (i, v) in trace.values.iter().enumerate() {
            writeln!(w, "{},{}", i as f64 / trace.sample_rate, v)?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

pub fn load_trace(path: &Path) -> Result<RespirationTrace> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let parse_err = |line: usize, reason: String| FrameError::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    let (_, meta) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file".into()))?;
    let meta = meta
        .strip_prefix("# ")
        .ok_or_else(|| parse_err(1, "expected '# ' metadata line".into()))?;
    let (sample_rate, label, provenance) = parse_meta(meta).map_err(|r| parse_err(1, r))?;
    match lines.next() {
        Some((_, "t,value")) => {}
        _ => return Err(parse_err(2, "expected header 't,value'".into())),
    }
    let mut values = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let value = line
            .split_once(',')
            .and_then(|(t, v)| t.parse::<f64>().ok().and(v.parse::<f64>().ok()))
            .ok_or_else(|| parse_err(i + 1, format!("malformed row {line:?}")))?;
        values.push(value);
    }
    let mut trace =
        RespirationTrace::new(values, sample_rate).map_err(|e| parse_err(0, e.to_string()))?;
    trace.label = label;
    trace.provenance = provenance;
    Ok(trace)
}

fn parse_meta(meta: &str) -> std::result::Result<(f64, Option<Label>, String), String> {
    let rest = meta
        .strip_prefix("sample_rate=")
        .ok_or("missing sample_rate")?;
    let (rate, rest) = rest.split_once(" label=").ok_or("missing label")?;
    let (label, provenance) = rest
        .split_once(" provenance=")
        .ok_or("missing provenance")?;
    let rate: f64 = rate
        .parse()
        .map_err(|_| format!("bad sample_rate {rate:?}"))?;
    let label = match label {
        "none" => None,
        l => Some(l.parse()?),
    };
    Ok((rate, label, provenance.to_string()))
}
