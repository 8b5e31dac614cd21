//! Synthetic respiration waveforms, thermal scenes and labelled datasets.
//!
//! Normal breathing is a slow sinusoid with at most 5% per-cycle jitter.
//! Abnormal breathing is faster, with strong per-cycle frequency and
//! amplitude jitter plus Poisson-placed bursts (rapid shallow breathing)
//! and pauses (breath holds). Scenes render the waveform as a Gaussian heat
//! spot inside the mask region of a face box, with attenuation for camera
//! distance and head rotation.
//!
//! Every generator is a pure function of its spec and seed.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use thiserror::Error;

use crate::frameio::{
    self, FaceBox, Frame, FrameError, FrameSequence, Label, RespirationTrace, MIN_FACE_SIDE,
};
use crate::roi::{self, RoiError};

/// Breathing frequency of the default normal spec (15 breaths/min).
pub const NORMAL_DEFAULT_FREQ: f64 = 0.25;

const NORMAL_MAX_JITTER: f64 = 0.05;
const ABNORMAL_MIN_JITTER: f64 = 0.15;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid waveform spec: {0}")]
    Waveform(String),
    #[error("invalid scene spec: {0}")]
    Scene(String),
    #[error("face box at frame {frame} is {w}x{h}, below the {MIN_FACE_SIDE}px minimum")]
    FaceTooSmall { frame: usize, w: u32, h: u32 },
    #[error("face box leaves the frame at frame {frame}")]
    FaceOutOfFrame { frame: usize },
    #[error("hotspot escapes the mask region at frame {frame}")]
    HotspotEscapes { frame: usize },
    #[error("waveform yields {0} samples, need at least 2")]
    TooShort(usize),
    #[error("invalid dataset request: {0}")]
    Dataset(String),
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Roi(#[from] RoiError),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveformSpec {
    pub label: Label,
    /// Breathing frequency in Hz.
    pub base_freq: f64,
    pub amp: f64,
    /// Per-cycle relative frequency jitter (uniform in `±freq_jitter`).
    pub freq_jitter: f64,
    /// Per-cycle relative amplitude jitter.
    pub amp_jitter: f64,
    /// Bursts and pauses per second.
    pub event_rate: f64,
    pub noise_sigma: f64,
    /// Seconds.
    pub duration: f64,
    pub sample_rate: f64,
}

impl WaveformSpec {
    pub fn normal() -> Self {
        Self {
            label: Label::Normal,
            base_freq: NORMAL_DEFAULT_FREQ,
            amp: 1.0,
            freq_jitter: 0.03,
            amp_jitter: 0.03,
            event_rate: 0.0,
            noise_sigma: 0.05,
            duration: 10.0,
            sample_rate: frameio::DEFAULT_SAMPLE_RATE,
        }
    }

    pub fn abnormal() -> Self {
        Self {
            label: Label::Abnormal,
            base_freq: 0.45,
            freq_jitter: 0.2,
            amp_jitter: 0.3,
            event_rate: 0.1,
            ..Self::normal()
        }
    }

    pub fn n_samples(&self) -> usize {
        (self.duration * self.sample_rate).round().max(0.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SynthError::Waveform(msg));
        let finite = [
            self.base_freq,
            self.amp,
            self.freq_jitter,
            self.amp_jitter,
            self.event_rate,
            self.noise_sigma,
            self.duration,
            self.sample_rate,
        ];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("all parameters must be finite and non-negative".into());
        }
        if self.base_freq <= 0.0 || self.sample_rate <= 0.0 || self.amp <= 0.0 {
            return bad("base_freq, amp and sample_rate must be positive".into());
        }
        if self.freq_jitter >= 1.0 {
            return bad("freq_jitter must be below 1".into());
        }
        match self.label {
            Label::Normal => {
                if self.freq_jitter > NORMAL_MAX_JITTER
                    || self.amp_jitter > NORMAL_MAX_JITTER
                    || self.event_rate != 0.0
                {
                    return bad(format!(
                        "normal breathing needs jitter <= {NORMAL_MAX_JITTER} and no events"
                    ));
                }
            }
            Label::Abnormal => {
                if self.base_freq <= NORMAL_DEFAULT_FREQ {
                    return bad(format!(
                        "abnormal base_freq must exceed {NORMAL_DEFAULT_FREQ} Hz"
                    ));
                }
                if self.freq_jitter <= ABNORMAL_MIN_JITTER
                    && self.amp_jitter <= ABNORMAL_MIN_JITTER
                    && self.event_rate <= 0.0
                {
                    return bad(format!(
                        "abnormal breathing needs jitter > {ABNORMAL_MIN_JITTER} or events"
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    Burst,
    Pause,
}

/// Burst/pause intervals `(start, end, kind)` in seconds, non-overlapping.
fn draw_events(rng: &mut ChaCha8Rng, rate: f64, duration: f64) -> Vec<(f64, f64, EventKind)> {
    let mut events = Vec::new();
    if rate <= 0.0 {
        return events;
    }
    let gap = Exp::new(rate).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += gap.sample(rng);
        if t >= duration {
            break;
        }
        let kind = if rng.gen_bool(0.5) {
            EventKind::Burst
        } else {
            EventKind::Pause
        };
        let len = rng.gen_range(1.5..3.0);
        events.push((t, t + len, kind));
        t += len;
    }
    events
}

/// Synthesises one breathing waveform.
///
/// The phase is integrated sample by sample; each new cycle draws its own
/// frequency and amplitude, so amplitude changes land on zero crossings.
/// Bursts double the frequency at half amplitude, pauses freeze the phase.
pub fn gen_waveform(spec: &WaveformSpec, seed: u64) -> Result<RespirationTrace> {
    spec.validate()?;
    let n = spec.n_samples();
    if n < 2 {
        return Err(SynthError::TooShort(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phase = rng.gen_range(0.0..2.0 * PI);
    let mut cycle = (phase / (2.0 * PI)).floor() as i64;
    let draw_cycle = |rng: &mut ChaCha8Rng| {
        let f = spec.base_freq * (1.0 + spec.freq_jitter * rng.gen_range(-1.0..=1.0));
        let a = spec.amp * (1.0 + spec.amp_jitter * rng.gen_range(-1.0..=1.0));
        (f, a)
    };
    let (mut freq, mut amp) = draw_cycle(&mut rng);
    let events = draw_events(&mut rng, spec.event_rate, spec.duration);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("finite sigma");

    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / spec.sample_rate;
        let event = events
            .iter()
            .find(|(s, e, _)| t >= *s && t < *e)
            .map(|(_, _, k)| *k);
        let (freq_mul, amp_mul) = match event {
            Some(EventKind::Burst) => (2.0, 0.5),
            Some(EventKind::Pause) => (0.0, 1.0),
            None => (1.0, 1.0),
        };
        let clean = amp * amp_mul * phase.sin();
        let jitter = if spec.noise_sigma > 0.0 {
            noise.sample(&mut rng)
        } else {
            0.0
        };
        values.push(clean + jitter);
        phase += 2.0 * PI * freq * freq_mul / spec.sample_rate;
        let c = (phase / (2.0 * PI)).floor() as i64;
        if c != cycle {
            cycle = c;
            (freq, amp) = draw_cycle(&mut rng);
        }
    }
    Ok(RespirationTrace::new(values, spec.sample_rate)?
        .with_label(spec.label)
        .with_provenance(format!("synth waveform seed={seed}")))
}

// ---------------------------------------------------------------------------
// scenes

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub frame_w: u32,
    pub frame_h: u32,
    /// Face box at frame 0, thermal pixels, at distance factor 1.
    pub face: FaceBox,
    /// Face drift in thermal pixels per frame.
    pub drift_x: f64,
    pub drift_y: f64,
    /// Hotspot centre as a fraction of the mask region, each in `[0, 1)`.
    pub hotspot_rel: (f64, f64),
    /// Gaussian spread of the hotspot in pixels at distance factor 1.
    pub hotspot_sigma: f64,
    pub ambient_level: f64,
    /// Extra warmth of the face area over ambient.
    pub face_level: f64,
    /// Peak intensity swing per unit waveform amplitude.
    pub hotspot_gain: f64,
    pub pixel_noise: f64,
    /// 1 is the nearest usable distance; faces shrink and gain falls as 1/d.
    pub distance_factor: f64,
    /// Nodding angle in degrees.
    pub vertical_angle: f64,
    /// Turning angle in degrees.
    pub horizontal_angle: f64,
    /// RGB frames are `rgb_scale` times the thermal resolution; 0 renders none.
    pub rgb_scale: u32,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            frame_w: 160,
            frame_h: 120,
            face: FaceBox {
                frame: 0,
                x: 40,
                y: 10,
                w: 80,
                h: 100,
            },
            drift_x: 0.0,
            drift_y: 0.0,
            hotspot_rel: (0.5, 0.25),
            hotspot_sigma: 4.0,
            ambient_level: 28000.0,
            face_level: 1500.0,
            hotspot_gain: 300.0,
            pixel_noise: 30.0,
            distance_factor: 1.0,
            vertical_angle: 0.0,
            horizontal_angle: 0.0,
            rgb_scale: 0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(SynthError::Scene(msg.into()));
        if self.frame_w == 0 || self.frame_h == 0 {
            return bad("frame dimensions must be positive");
        }
        if !(1.0..=20.0).contains(&self.distance_factor) {
            return bad("distance_factor must lie in [1, 20]");
        }
        let (rx, ry) = self.hotspot_rel;
        if !((0.0..1.0).contains(&rx) && (0.0..1.0).contains(&ry)) {
            return bad("hotspot_rel must lie in [0, 1)");
        }
        let levels = [
            self.drift_x,
            self.drift_y,
            self.hotspot_sigma,
            self.ambient_level,
            self.face_level,
            self.hotspot_gain,
            self.pixel_noise,
            self.vertical_angle,
            self.horizontal_angle,
        ];
        if levels.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite");
        }
        if self.hotspot_sigma <= 0.0 || self.pixel_noise < 0.0 || self.hotspot_gain < 0.0 {
            return bad("hotspot_sigma must be positive, gain and noise non-negative");
        }
        if !(0.0..=90.0).contains(&self.vertical_angle.abs())
            || !(0.0..=90.0).contains(&self.horizontal_angle.abs())
        {
            return bad("angles must lie within ±90 degrees");
        }
        Ok(())
    }

    /// Gain multiplier from head rotation. Turning costs only the cosine
    /// foreshortening; nodding past 30 degrees hides the breathing area
    /// and the gain collapses exponentially.
    pub fn rotation_attenuation(&self) -> f64 {
        let h = self.horizontal_angle.abs().to_radians().cos();
        let v_deg = self.vertical_angle.abs();
        let mut v = v_deg.to_radians().cos();
        if v_deg > 30.0 {
            v *= (-(v_deg - 30.0) / 4.0).exp();
        }
        h * v
    }

    pub fn effective_gain(&self) -> f64 {
        self.hotspot_gain * self.rotation_attenuation() / self.distance_factor
    }

    /// Face box at `frame` after drift and distance scaling, thermal pixels.
    pub fn face_at(&self, frame: usize) -> Result<FaceBox> {
        let d = self.distance_factor;
        let cx = self.face.x as f64 + self.face.w as f64 / 2.0 + self.drift_x * frame as f64;
        let cy = self.face.y as f64 + self.face.h as f64 / 2.0 + self.drift_y * frame as f64;
        let w = (self.face.w as f64 / d).round();
        let h = (self.face.h as f64 / d).round();
        if w < MIN_FACE_SIDE as f64 || h < MIN_FACE_SIDE as f64 {
            return Err(SynthError::FaceTooSmall {
                frame,
                w: w as u32,
                h: h as u32,
            });
        }
        let x = (cx - w / 2.0).round();
        let y = (cy - h / 2.0).round();
        if x < 0.0 || y < 0.0 || x + w > self.frame_w as f64 || y + h > self.frame_h as f64 {
            return Err(SynthError::FaceOutOfFrame { frame });
        }
        Ok(FaceBox {
            frame,
            x: x as u32,
            y: y as u32,
            w: w as u32,
            h: h as u32,
        })
    }
}

/// Renders a thermal (and optionally RGB) sequence breathing with `wave`.
/// Returns the sequence and the ground-truth waveform.
pub fn gen_sequence(
    scene: &SceneSpec,
    wave: &WaveformSpec,
) -> Result<(FrameSequence, RespirationTrace)> {
    scene.validate()?;
    let truth = gen_waveform(wave, scene.seed ^ 0x05ee_d0f5_7a7e)?;
    let n = truth.len();
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let noise = Normal::new(0.0, scene.pixel_noise).expect("finite sigma");
    let gain = scene.effective_gain();
    let sigma = scene.hotspot_sigma / scene.distance_factor;
    let (fw, fh) = (scene.frame_w, scene.frame_h);
    let rgb_dims = (fw * scene.rgb_scale, fh * scene.rgb_scale);

    let mut thermal = Vec::with_capacity(n);
    let mut rgb = Vec::new();
    let mut boxes = Vec::with_capacity(n);
    for (t, &w) in truth.values().iter().enumerate() {
        let face = scene.face_at(t)?;
        // the mask is located exactly as the pipeline will locate it
        let (detected, mask) = if scene.rgb_scale > 0 {
            let s = scene.rgb_scale;
            let b = FaceBox {
                frame: t,
                x: face.x * s,
                y: face.y * s,
                w: face.w * s,
                h: face.h * s,
            };
            let m = roi::map_to_thermal(&roi::mask_from_face(&b)?, rgb_dims, (fw, fh))?;
            (b, m)
        } else {
            (face, roi::mask_from_face(&face)?)
        };
        let hx = mask.x0 as f64 + scene.hotspot_rel.0 * mask.width() as f64;
        let hy = mask.y0 as f64 + scene.hotspot_rel.1 * mask.height() as f64;
        if hx < mask.x0 as f64
            || hx >= mask.x1 as f64
            || hy < mask.y0 as f64
            || hy >= mask.y1 as f64
        {
            return Err(SynthError::HotspotEscapes { frame: t });
        }
        // sample centres sit at +0.5
        let (hx, hy) = (hx + 0.5, hy + 0.5);

        let mut samples = Vec::with_capacity(fw as usize * fh as usize);
        for y in 0..fh {
            for x in 0..fw {
                let mut v = scene.ambient_level;
                if x >= face.x && x < face.x + face.w && y >= face.y && y < face.y + face.h {
                    v += scene.face_level;
                }
                let dx = x as f64 + 0.5 - hx;
                let dy = y as f64 + 0.5 - hy;
                v += gain * w * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                if scene.pixel_noise > 0.0 {
                    v += noise.sample(&mut rng);
                }
                samples.push(v.round().clamp(0.0, 65535.0) as u16);
            }
        }
        thermal.push(Frame::thermal(fw, fh, samples)?);
        if scene.rgb_scale > 0 {
            rgb.push(render_rgb(rgb_dims, &detected)?);
        }
        boxes.push(detected);
    }
    let seq = FrameSequence::new(thermal, rgb, boxes, wave.sample_rate)?;
    Ok((seq, truth))
}

fn render_rgb((w, h): (u32, u32), face: &FaceBox) -> Result<Frame> {
    let mut samples = Vec::with_capacity(w as usize * h as usize * 3);
    for y in 0..h {
        for x in 0..w {
            let inside = x >= face.x && x < face.x + face.w && y >= face.y && y < face.y + face.h;
            let px: [u16; 3] = if inside {
                [200, 160, 140]
            } else {
                [60, 60, 60]
            };
            samples.extend_from_slice(&px);
        }
    }
    Ok(Frame::new(w, h, 3, samples)?)
}

// ---------------------------------------------------------------------------
// datasets

/// Uniform parameter ranges for one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassProfile {
    pub base_freq: (f64, f64),
    pub amp: (f64, f64),
    pub freq_jitter: (f64, f64),
    pub amp_jitter: (f64, f64),
    pub event_rate: (f64, f64),
    pub noise_sigma: (f64, f64),
}

/// Per-class parameter distributions used by [`gen_dataset`].
///
/// The frequency ranges overlap, so breath counting alone cannot separate
/// the classes; the regularity of the waveform is the remaining cue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetProfile {
    pub normal: ClassProfile,
    pub abnormal: ClassProfile,
    /// Length of each generated recording, in segments.
    pub recording_segments: usize,
    pub sample_rate: f64,
}

impl Default for DatasetProfile {
    fn default() -> Self {
        Self {
            normal: ClassProfile {
                base_freq: (0.18, 0.42),
                amp: (0.8, 1.2),
                freq_jitter: (0.0, 0.05),
                amp_jitter: (0.0, 0.05),
                event_rate: (0.0, 0.0),
                noise_sigma: (0.05, 0.25),
            },
            abnormal: ClassProfile {
                base_freq: (0.32, 0.65),
                amp: (0.8, 1.2),
                freq_jitter: (0.1, 0.25),
                amp_jitter: (0.2, 0.45),
                event_rate: (0.0, 0.15),
                noise_sigma: (0.05, 0.25),
            },
            recording_segments: 2,
            sample_rate: frameio::DEFAULT_SAMPLE_RATE,
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

impl DatasetProfile {
    fn draw_spec(&self, label: Label, segment_len: usize, rng: &mut ChaCha8Rng) -> WaveformSpec {
        let p = match label {
            Label::Normal => &self.normal,
            Label::Abnormal => &self.abnormal,
        };
        WaveformSpec {
            label,
            base_freq: draw(rng, p.base_freq),
            amp: draw(rng, p.amp),
            freq_jitter: draw(rng, p.freq_jitter),
            amp_jitter: draw(rng, p.amp_jitter),
            event_rate: draw(rng, p.event_rate),
            noise_sigma: draw(rng, p.noise_sigma),
            duration: (segment_len * self.recording_segments) as f64 / self.sample_rate,
            sample_rate: self.sample_rate,
        }
    }
}

/// One normalised dataset segment with the seed of the recording it was
/// cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub trace: RespirationTrace,
    pub seed: u64,
}

/// Labelled, normalised segments drawn from the default profile.
pub fn gen_dataset(
    n_normal: usize,
    n_abnormal: usize,
    segment_len: usize,
    seed: u64,
) -> Result<Vec<RespirationTrace>> {
    Ok(gen_segments(
        &DatasetProfile::default(),
        n_normal,
        n_abnormal,
        segment_len,
        seed,
    )?
    .into_iter()
    .map(|s| s.trace)
    .collect())
}

/// Generates recordings per class, cuts them into half-overlapping
/// segments, normalises each segment and shuffles the result.
pub fn gen_segments(
    profile: &DatasetProfile,
    n_normal: usize,
    n_abnormal: usize,
    segment_len: usize,
    seed: u64,
) -> Result<Vec<Segment>> {
    if n_normal == 0 || n_abnormal == 0 {
        return Err(SynthError::Dataset(
            "each class needs at least one segment".into(),
        ));
    }
    if segment_len < 2 {
        return Err(SynthError::Dataset("segment_len must be at least 2".into()));
    }
    if profile.recording_segments == 0 {
        return Err(SynthError::Dataset(
            "recording_segments must be positive".into(),
        ));
    }
    let stride = (segment_len / 2).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_normal + n_abnormal);
    for (label, count) in [(Label::Normal, n_normal), (Label::Abnormal, n_abnormal)] {
        let mut made = 0;
        while made < count {
            let spec = profile.draw_spec(label, segment_len, &mut rng);
            let wave_seed = rng.next_u64();
            let wave = gen_waveform(&spec, wave_seed)?;
            let values = wave.values();
            let mut start = 0;
            while start + segment_len <= values.len() && made < count {
                let cut = RespirationTrace::new(
                    values[start..start + segment_len].to_vec(),
                    spec.sample_rate,
                )?
                .with_label(label)
                .with_provenance(format!("synth seed={wave_seed} offset={start}"));
                out.push(Segment {
                    trace: roi::normalize_trace(&cut)?,
                    seed: wave_seed,
                });
                made += 1;
                start += stride;
            }
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Writes `traces/NNNNN.csv` plus an `index.csv` with `path,label,seed`.
pub fn write_manifest(dir: &Path, segments: &[Segment]) -> Result<PathBuf> {
    let traces = dir.join("traces");
    fs::create_dir_all(&traces).map_err(|source| FrameError::Io {
        path: traces.clone(),
        source,
    })?;
    let mut index = String::from("path,label,seed\n");
    for (i, s) in segments.iter().enumerate() {
        let rel = format!("traces/{i:05}.csv");
        frameio::save_trace(&s.trace, &dir.join(&rel))?;
        let label = s.trace.label.map(|l| l.to_string()).unwrap_or_default();
        writeln!(index, "{rel},{label},{}", s.seed).unwrap();
    }
    let path = dir.join("index.csv");
    fs::write(&path, index).map_err(|source| FrameError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Reads an `index.csv` manifest; paths are relative to its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<Segment>> {
    let text = fs::read_to_string(path).map_err(|source| FrameError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let parse_err = |line: usize, reason: String| {
        SynthError::Frame(FrameError::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        })
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "path,label,seed")) => {}
        _ => return Err(parse_err(1, "expected header 'path,label,seed'".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [rel, label, seed] = fields[..] else {
            return Err(parse_err(i + 1, format!("expected 3 fields in {line:?}")));
        };
        let label: Label = label.parse().map_err(|e| parse_err(i + 1, e))?;
        let seed: u64 = seed
            .parse()
            .map_err(|_| parse_err(i + 1, format!("bad seed {seed:?}")))?;
        let mut trace = frameio::load_trace(&base.join(rel))?;
        trace.label = Some(label);
        out.push(Segment { trace, seed });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// key=value configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthMode {
    Dataset,
    Sequence,
}

/// Contents of a synth config file. Lines are `key = value`; `#` starts a
/// comment. Keys:
///
/// | key | meaning |
/// |-----|---------|
/// | `mode` | `dataset` or `sequence` |
/// | `seed` | master seed |
/// | `dataset.n_normal`, `dataset.n_abnormal`, `dataset.segment_len` | dataset shape |
/// | `wave.label`, `wave.base_freq`, `wave.amp`, `wave.freq_jitter`, `wave.amp_jitter`, `wave.event_rate`, `wave.noise_sigma`, `wave.duration`, `wave.sample_rate` | [`WaveformSpec`] |
/// | `scene.frame_w`, `scene.frame_h`, `scene.face_x`, `scene.face_y`, `scene.face_w`, `scene.face_h`, `scene.drift_x`, `scene.drift_y`, `scene.hotspot_x`, `scene.hotspot_y`, `scene.hotspot_sigma`, `scene.ambient`, `scene.face_level`, `scene.gain`, `scene.pixel_noise`, `scene.distance`, `scene.vertical_angle`, `scene.horizontal_angle`, `scene.rgb_scale` | [`SceneSpec`] |
///
/// In sequence mode the scene seed is the master seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub mode: SynthMode,
    pub seed: u64,
    pub n_normal: usize,
    pub n_abnormal: usize,
    pub segment_len: usize,
    pub wave: WaveformSpec,
    pub scene: SceneSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            mode: SynthMode::Dataset,
            seed: 0,
            n_normal: 1925,
            n_abnormal: 2292,
            segment_len: 100,
            wave: WaveformSpec::normal(),
            scene: SceneSpec::default(),
        }
    }
}

impl SynthConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| SynthError::Config {
                line: i + 1,
                reason: format!("expected key = value, got {line:?}"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                SynthError::Config { reason, .. } => SynthError::Config {
                    line: i + 1,
                    reason,
                },
                other => other,
            })?;
        }
        cfg.scene.seed = cfg.seed;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| SynthError::Config {
                line: 0,
                reason: format!("bad value {value:?} for {key}"),
            })
        }
        let w = &mut self.wave;
        let s = &mut self.scene;
        match key {
            "mode" => {
                self.mode = match value {
                    "dataset" => SynthMode::Dataset,
                    "sequence" => SynthMode::Sequence,
                    _ => {
                        return Err(SynthError::Config {
                            line: 0,
                            reason: format!("bad value {value:?} for mode"),
                        })
                    }
                }
            }
            "seed" => self.seed = num(key, value)?,
            "dataset.n_normal" => self.n_normal = num(key, value)?,
            "dataset.n_abnormal" => self.n_abnormal = num(key, value)?,
            "dataset.segment_len" => self.segment_len = num(key, value)?,
            "wave.label" => {
                w.label = value
                    .parse()
                    .map_err(|reason| SynthError::Config { line: 0, reason })?
            }
            "wave.base_freq" => w.base_freq = num(key, value)?,
            "wave.amp" => w.amp = num(key, value)?,
            "wave.freq_jitter" => w.freq_jitter = num(key, value)?,
            "wave.amp_jitter" => w.amp_jitter = num(key, value)?,
            "wave.event_rate" => w.event_rate = num(key, value)?,
            "wave.noise_sigma" => w.noise_sigma = num(key, value)?,
            "wave.duration" => w.duration = num(key, value)?,
            "wave.sample_rate" => w.sample_rate = num(key, value)?,
            "scene.frame_w" => s.frame_w = num(key, value)?,
            "scene.frame_h" => s.frame_h = num(key, value)?,
            "scene.face_x" => s.face.x = num(key, value)?,
            "scene.face_y" => s.face.y = num(key, value)?,
            "scene.face_w" => s.face.w = num(key, value)?,
            "scene.face_h" => s.face.h = num(key, value)?,
            "scene.drift_x" => s.drift_x = num(key, value)?,
            "scene.drift_y" => s.drift_y = num(key, value)?,
            "scene.hotspot_x" => s.hotspot_rel.0 = num(key, value)?,
            "scene.hotspot_y" => s.hotspot_rel.1 = num(key, value)?,
            "scene.hotspot_sigma" => s.hotspot_sigma = num(key, value)?,
            "scene.ambient" => s.ambient_level = num(key, value)?,
            "scene.face_level" => s.face_level = num(key, value)?,
            "scene.gain" => s.hotspot_gain = num(key, value)?,
            "scene.pixel_noise" => s.pixel_noise = num(key, value)?,
            "scene.distance" => s.distance_factor = num(key, value)?,
            "scene.vertical_angle" => s.vertical_angle = num(key, value)?,
            "scene.horizontal_angle" => s.horizontal_angle = num(key, value)?,
            "scene.rgb_scale" => s.rgb_scale = num(key, value)?,
            other => return Err(SynthError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Serialises every key; [`SynthConfig::parse`] reads it back exactly.
    pub fn to_text(&self) -> String {
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        let w = &self.wave;
        let s = &self.scene;
        kv.insert(
            "mode",
            match self.mode {
                SynthMode::Dataset => "dataset",
                SynthMode::Sequence => "sequence",
            }
            .into(),
        );
        kv.insert("seed", self.seed.to_string());
        kv.insert("dataset.n_normal", self.n_normal.to_string());
        kv.insert("dataset.n_abnormal", self.n_abnormal.to_string());
        kv.insert("dataset.segment_len", self.segment_len.to_string());
        kv.insert("wave.label", w.label.to_string());
        for (k, v) in [
            ("wave.base_freq", w.base_freq),
            ("wave.amp", w.amp),
            ("wave.freq_jitter", w.freq_jitter),
            ("wave.amp_jitter", w.amp_jitter),
            ("wave.event_rate", w.event_rate),
            ("wave.noise_sigma", w.noise_sigma),
            ("wave.duration", w.duration),
            ("wave.sample_rate", w.sample_rate),
            ("scene.drift_x", s.drift_x),
            ("scene.drift_y", s.drift_y),
            ("scene.hotspot_x", s.hotspot_rel.0),
            ("scene.hotspot_y", s.hotspot_rel.1),
            ("scene.hotspot_sigma", s.hotspot_sigma),
            ("scene.ambient", s.ambient_level),
            ("scene.face_level", s.face_level),
            ("scene.gain", s.hotspot_gain),
            ("scene.pixel_noise", s.pixel_noise),
            ("scene.distance", s.distance_factor),
            ("scene.vertical_angle", s.vertical_angle),
            ("scene.horizontal_angle", s.horizontal_angle),
        ] {
            kv.insert(k, v.to_string());
        }
        for (k, v) in [
            ("scene.frame_w", s.frame_w),
            ("scene.frame_h", s.frame_h),
            ("scene.face_x", s.face.x),
            ("scene.face_y", s.face.y),
            ("scene.face_w", s.face.w),
            ("scene.face_h", s.face.h),
            ("scene.rgb_scale", s.rgb_scale),
        ] {
            kv.insert(k, v.to_string());
        }
        kv.into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count_peaks(v: &[f64]) -> usize {
        v.windows(3).filter(|w| w[1] > w[0] && w[1] >= w[2]).count()
    }

    #[test]
    fn normal_peak_count() {
        for seed in 0..50 {
            for freq in [0.2, 0.25, 0.4] {
                let spec = WaveformSpec {
                    base_freq: freq,
                    noise_sigma: 0.0,
                    ..WaveformSpec::normal()
                };
                let w = gen_waveform(&spec, seed).unwrap();
                let peaks = count_peaks(w.values()) as f64;
                assert!(
                    (peaks - freq * 10.0).abs() <= 1.0,
                    "seed {seed} freq {freq}: {peaks}"
                );
            }
        }
    }

    #[test]
    fn deterministic() {
        let spec = WaveformSpec::abnormal();
        assert_eq!(
            gen_waveform(&spec, 9).unwrap(),
            gen_waveform(&spec, 9).unwrap()
        );
        assert_ne!(
            gen_waveform(&spec, 9).unwrap(),
            gen_waveform(&spec, 10).unwrap()
        );
    }

    #[test]
    fn too_short() {
        let spec = WaveformSpec {
            duration: 0.1,
            ..WaveformSpec::normal()
        };
        assert!(matches!(
            gen_waveform(&spec, 0),
            Err(SynthError::TooShort(1))
        ));
    }

    #[test]
    fn spec_invariants() {
        assert!(WaveformSpec::normal().validate().is_ok());
        assert!(WaveformSpec::abnormal().validate().is_ok());
        let jittery = WaveformSpec {
            freq_jitter: 0.2,
            ..WaveformSpec::normal()
        };
        assert!(jittery.validate().is_err());
        let slow = WaveformSpec {
            base_freq: NORMAL_DEFAULT_FREQ,
            ..WaveformSpec::abnormal()
        };
        assert!(slow.validate().is_err());
        let regular = WaveformSpec {
            freq_jitter: 0.1,
            amp_jitter: 0.1,
            event_rate: 0.0,
            ..WaveformSpec::abnormal()
        };
        assert!(regular.validate().is_err());
    }

    #[test]
    fn dataset_shape() {
        let d = gen_dataset(1, 1, 100, 3).unwrap();
        assert_eq!(d.len(), 2);
        let labels: Vec<_> = d.iter().map(|t| t.label.unwrap()).collect();
        assert!(labels.contains(&Label::Normal) && labels.contains(&Label::Abnormal));
        assert!(gen_dataset(0, 1, 100, 3).is_err());
        assert!(gen_dataset(1, 1, 1, 3).is_err());
    }

    #[test]
    fn distance_invalidates_face() {
        let scene = SceneSpec {
            distance_factor: 18.0,
            ..SceneSpec::default()
        };
        let err = gen_sequence(&scene, &WaveformSpec::normal()).unwrap_err();
        assert!(matches!(err, SynthError::FaceTooSmall { .. }), "{err}");
    }

    #[test]
    fn drift_out_of_frame() {
        let scene = SceneSpec {
            drift_x: 1.0,
            ..SceneSpec::default()
        };
        let err = gen_sequence(&scene, &WaveformSpec::normal()).unwrap_err();
        assert!(matches!(err, SynthError::FaceOutOfFrame { .. }), "{err}");
    }

    #[test]
    fn rotation_attenuation_ordering() {
        let at = |v: f64, h: f64| {
            SceneSpec {
                vertical_angle: v,
                horizontal_angle: h,
                ..SceneSpec::default()
            }
            .rotation_attenuation()
        };
        assert_eq!(at(0.0, 0.0), 1.0);
        assert!(at(45.0, 0.0) < 0.05);
        assert!(at(0.0, 45.0) > 0.7);
    }

    #[test]
    fn config_round_trip() {
        let mut cfg = SynthConfig::default();
        cfg.mode = SynthMode::Sequence;
        cfg.seed = 77;
        cfg.wave = WaveformSpec::abnormal();
        cfg.scene.drift_x = 0.125;
        cfg.scene.rgb_scale = 2;
        cfg.scene.seed = 77;
        assert_eq!(SynthConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn config_unknown_key() {
        let err = SynthConfig::parse("seed = 1\nscene.colour = 3\n").unwrap_err();
        assert!(matches!(&err, SynthError::UnknownKey(k) if k == "scene.colour"));
        let err = SynthConfig::parse("seed = x\n").unwrap_err();
        assert!(matches!(err, SynthError::Config { line: 1, .. }));
    }
}
