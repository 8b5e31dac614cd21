//! Mask region geometry and variance-maximising ROI selection.
//!
//! The mask region is a fixed proportion of the detected face box. Inside
//! it, every block position on a stride grid is scored by the population
//! variance of its mean intensity over the whole sequence, and the
//! highest-scoring position becomes the ROI for all frames.

use thiserror::Error;

use crate::frameio::{FaceBox, Frame, FrameSequence, RespirationTrace, MIN_FACE_SIDE};

#[derive(Debug, Error, PartialEq)]
pub enum RoiError {
    #[error("face box {w}x{h} is too small, minimum side is {MIN_FACE_SIDE}")]
    FaceTooSmall { w: u32, h: u32 },
    #[error("region ({x0},{y0})-({x1},{y1}) has zero area")]
    Degenerate { x0: u32, y0: u32, x1: u32, y1: u32 },
    #[error("region ({x0},{y0})-({x1},{y1}) exceeds the {width}x{height} frame")]
    OutOfFrame {
        x0: u32,
        y0: u32,
        x1: u32,
        y1: u32,
        width: u32,
        height: u32,
    },
    #[error("invalid dimensions: {0}")]
    BadDimensions(String),
    #[error("block is empty")]
    EmptyBlock,
    #[error("need at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("block {block_w}x{block_h} does not fit the smallest mask region {mask_w}x{mask_h}")]
    NoCandidate {
        block_w: u32,
        block_h: u32,
        mask_w: u32,
        mask_h: u32,
    },
    #[error("stride must be at least 1")]
    BadStride,
    #[error("trace has zero variance and carries no respiration signal")]
    FlatTrace,
    #[error("selection does not match the sequence: {0}")]
    Mismatch(String),
}

pub type Result<T, E = RoiError> = std::result::Result<T, E>;

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskRegion {
    pub frame: usize,
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl MaskRegion {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        if self.x1 <= self.x0 || self.y1 <= self.y0 {
            return Err(RoiError::Degenerate {
                x0: self.x0,
                y0: self.y0,
                x1: self.x1,
                y1: self.y1,
            });
        }
        if self.x1 > width || self.y1 > height {
            return Err(RoiError::OutOfFrame {
                x0: self.x0,
                y0: self.y0,
                x1: self.x1,
                y1: self.y1,
                width,
                height,
            });
        }
        Ok(())
    }
}

/// Absolute block rectangle in thermal pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// Mask corners sit at `(w/4, h/2)` and `(3w/4, 4h/5)` of the face box,
/// truncating integer division.
pub fn mask_from_face(face: &FaceBox) -> Result<MaskRegion> {
    if face.w < MIN_FACE_SIDE || face.h < MIN_FACE_SIDE {
        return Err(RoiError::FaceTooSmall {
            w: face.w,
            h: face.h,
        });
    }
    let region = MaskRegion {
        frame: face.frame,
        x0: face.x + face.w / 4,
        y0: face.y + face.h / 2,
        x1: face.x + 3 * face.w / 4,
        y1: face.y + 4 * face.h / 5,
    };
    if region.x1 <= region.x0 || region.y1 <= region.y0 {
        return Err(RoiError::Degenerate {
            x0: region.x0,
            y0: region.y0,
            x1: region.x1,
            y1: region.y1,
        });
    }
    Ok(region)
}

fn scale_half_up(v: u32, to: u32, from: u32) -> u32 {
    let (v, to, from) = (v as u64, to as u64, from as u64);
    ((2 * v * to + from) / (2 * from)) as u32
}

/// Proportional RGB to thermal mapping with round-half-up.
pub fn map_to_thermal(
    region: &MaskRegion,
    rgb_dims: (u32, u32),
    thermal_dims: (u32, u32),
) -> Result<MaskRegion> {
    let (rw, rh) = rgb_dims;
    let (tw, th) = thermal_dims;
    if rw == 0 || rh == 0 || tw == 0 || th == 0 {
        return Err(RoiError::BadDimensions(format!(
            "rgb {rw}x{rh}, thermal {tw}x{th}"
        )));
    }
    let mapped = if rgb_dims == thermal_dims {
        *region
    } else {
        MaskRegion {
            frame: region.frame,
            x0: scale_half_up(region.x0, tw, rw),
            y0: scale_half_up(region.y0, th, rh),
            x1: scale_half_up(region.x1, tw, rw),
            y1: scale_half_up(region.y1, th, rh),
        }
    };
    mapped.validate(tw, th)?;
    Ok(mapped)
}

/// Thermal mask region for every frame of the sequence.
pub fn mask_regions(seq: &FrameSequence) -> Result<Vec<MaskRegion>> {
    let box_dims = seq.box_dims();
    let thermal_dims = seq.thermal_dims();
    seq.boxes()
        .iter()
        .map(|b| {
            let m = mask_from_face(b)?;
            map_to_thermal(&m, box_dims, thermal_dims)
        })
        .collect()
}

/// Mean intensity of a block of a single-channel frame.
pub fn block_mean(frame: &Frame, block: Rect) -> Result<f64> {
    if block.w == 0 || block.h == 0 {
        return Err(RoiError::EmptyBlock);
    }
    if frame.channels() != 1 {
        return Err(RoiError::BadDimensions(format!(
            "block_mean needs a single-channel frame, got {} channels",
            frame.channels()
        )));
    }
    let (fw, fh) = frame.dims();
    if block.x as u64 + block.w as u64 > fw as u64 || block.y as u64 + block.h as u64 > fh as u64 {
        return Err(RoiError::OutOfFrame {
            x0: block.x,
            y0: block.y,
            x1: block.x + block.w,
            y1: block.y + block.h,
            width: fw,
            height: fh,
        });
    }
    let samples = frame.samples();
    let mut sum = 0u64;
    for y in block.y..block.y + block.h {
        let row = y as usize * fw as usize;
        sum += samples[row + block.x as usize..row + (block.x + block.w) as usize]
            .iter()
            .map(|&s| s as u64)
            .sum::<u64>();
    }
    Ok(sum as f64 / (block.w as u64 * block.h as u64) as f64)
}

/// Population variance (divisor `T`), two-pass.
pub fn temporal_variance(series: &[f64]) -> Result<f64> {
    if series.len() < 2 {
        return Err(RoiError::TooShort(series.len()));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    Ok(series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
}

/// Block placement relative to the mask region.
///
/// The offset is stored in pixels of a reference mask (the smallest mask of
/// the sequence) so the relative position is an exact rational; in a frame
/// whose mask is `mask_w` wide the block starts `offset_x * mask_w / ref_w`
/// pixels from the mask's left edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub offset_x: u32,
    pub offset_y: u32,
    pub ref_w: u32,
    pub ref_h: u32,
    pub block_w: u32,
    pub block_h: u32,
}

impl BlockSpec {
    pub fn rel_x(&self) -> f64 {
        self.offset_x as f64 / self.ref_w as f64
    }

    pub fn rel_y(&self) -> f64 {
        self.offset_y as f64 / self.ref_h as f64
    }

    /// Absolute block rectangle inside `mask`.
    pub fn place(&self, mask: &MaskRegion) -> Rect {
        let dx = self.offset_x as u64 * mask.width() as u64 / self.ref_w as u64;
        let dy = self.offset_y as u64 * mask.height() as u64 / self.ref_h as u64;
        Rect {
            x: mask.x0 + dx as u32,
            y: mask.y0 + dy as u32,
            w: self.block_w,
            h: self.block_h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiSelection {
    pub block: BlockSpec,
    pub variance: f64,
    pub candidates_evaluated: usize,
}

/// Default search grid: a fifth of the smallest mask per side, stride half
/// a block, all at least one pixel.
pub fn default_block_params(masks: &[MaskRegion]) -> (u32, u32, u32) {
    let ref_w = masks.iter().map(MaskRegion::width).min().unwrap_or(1);
    let ref_h = masks.iter().map(MaskRegion::height).min().unwrap_or(1);
    let bw = (ref_w / 5).max(1);
    let bh = (ref_h / 5).max(1);
    (bw, bh, (bw.min(bh) / 2).max(1))
}

/// Summed-area table over one mask region, so any block sum is O(1).
struct RegionIntegral {
    stride: usize,
    table: Vec<u64>,
}

impl RegionIntegral {
    fn new(frame: &Frame, mask: &MaskRegion) -> Self {
        let (w, h) = (mask.width() as usize, mask.height() as usize);
        let stride = w + 1;
        let mut table = vec![0u64; stride * (h + 1)];
        for y in 0..h {
            let mut row_sum = 0u64;
            for x in 0..w {
                row_sum += frame.at(mask.x0 + x as u32, mask.y0 + y as u32) as u64;
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row_sum;
            }
        }
        Self { stride, table }
    }

    /// Sum over `[x, x+w) x [y, y+h)` in region-local coordinates.
    fn sum(&self, x: usize, y: usize, w: usize, h: usize) -> u64 {
        let s = self.stride;
        self.table[(y + h) * s + x + w] + self.table[y * s + x]
            - self.table[y * s + x + w]
            - self.table[(y + h) * s + x]
    }
}

/// Scores every block position on the stride grid and returns the one with
/// the largest temporal variance. Ties go to the smallest `(offset_y,
/// offset_x)`.
pub fn select_roi(
    seq: &FrameSequence,
    block_w: u32,
    block_h: u32,
    stride: u32,
) -> Result<RoiSelection> {
    if stride == 0 {
        return Err(RoiError::BadStride);
    }
    if block_w == 0 || block_h == 0 {
        return Err(RoiError::EmptyBlock);
    }
    if seq.len() < 2 {
        return Err(RoiError::TooShort(seq.len()));
    }
    let masks = mask_regions(seq)?;
    let ref_w = masks.iter().map(MaskRegion::width).min().expect("nonempty");
    let ref_h = masks
        .iter()
        .map(MaskRegion::height)
        .min()
        .expect("nonempty");
    if block_w > ref_w || block_h > ref_h {
        return Err(RoiError::NoCandidate {
            block_w,
            block_h,
            mask_w: ref_w,
            mask_h: ref_h,
        });
    }
    let integrals: Vec<RegionIntegral> = seq
        .thermal()
        .iter()
        .zip(&masks)
        .map(|(f, m)| RegionIntegral::new(f, m))
        .collect();
    let area = (block_w as u64 * block_h as u64) as f64;

    let mut best: Option<(BlockSpec, f64)> = None;
    let mut evaluated = 0;
    let mut means = vec![0.0; seq.len()];
    for offset_y in (0..=ref_h - block_h).step_by(stride as usize) {
        for offset_x in (0..=ref_w - block_w).step_by(stride as usize) {
            let spec = BlockSpec {
                offset_x,
                offset_y,
                ref_w,
                ref_h,
                block_w,
                block_h,
            };
            for ((mean, integral), mask) in means.iter_mut().zip(&integrals).zip(&masks) {
                let r = spec.place(mask);
                let s = integral.sum(
                    (r.x - mask.x0) as usize,
                    (r.y - mask.y0) as usize,
                    block_w as usize,
                    block_h as usize,
                );
                *mean = s as f64 / area;
            }
            let variance = temporal_variance(&means)?;
            evaluated += 1;
            if best.is_none_or(|(_, v)| variance > v) {
                best = Some((spec, variance));
            }
        }
    }
    let (block, variance) = best.expect("at least one candidate fits");
    Ok(RoiSelection {
        block,
        variance,
        candidates_evaluated: evaluated,
    })
}

/// Mean intensity of the selected block in every frame.
pub fn extract_trace(seq: &FrameSequence, selection: &RoiSelection) -> Result<RespirationTrace> {
    let masks = mask_regions(seq)?;
    let spec = selection.block;
    let values = seq
        .thermal()
        .iter()
        .zip(&masks)
        .map(|(frame, mask)| {
            if spec.block_w > mask.width() || spec.block_h > mask.height() {
                return Err(RoiError::Mismatch(format!(
                    "block {}x{} does not fit mask {}x{} of frame {}",
                    spec.block_w,
                    spec.block_h,
                    mask.width(),
                    mask.height(),
                    mask.frame
                )));
            }
            block_mean(frame, spec.place(mask))
        })
        .collect::<Result<Vec<_>>>()?;
    let trace = RespirationTrace::new(values, seq.sample_rate())
        .map_err(|e| RoiError::Mismatch(e.to_string()))?;
    Ok(trace.with_provenance(format!(
        "roi offset=({},{}) of ({}x{}) block={}x{}",
        spec.offset_x, spec.offset_y, spec.ref_w, spec.ref_h, spec.block_w, spec.block_h
    )))
}

/// Z-score normalisation with the population standard deviation.
pub fn normalize_trace(trace: &RespirationTrace) -> Result<RespirationTrace> {
    let values = trace.values();
    let variance = temporal_variance(values)?;
    if variance <= 0.0 || variance.is_nan() {
        return Err(RoiError::FlatTrace);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = variance.sqrt();
    let normalized: Vec<f64> = values.iter().map(|v| (v - mean) / std).collect();
    let mut out =
        RespirationTrace::new(normalized, trace.sample_rate()).map_err(|_| RoiError::FlatTrace)?;
    out.label = trace.label;
    out.provenance = trace.provenance.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn face(x: u32, y: u32, w: u32, h: u32) -> FaceBox {
        FaceBox {
            frame: 0,
            x,
            y,
            w,
            h,
        }
    }

    #[test]
    fn mask_corners() {
        let m = mask_from_face(&face(0, 0, 100, 100)).unwrap();
        assert_eq!((m.x0, m.y0, m.x1, m.y1), (25, 50, 75, 80));
        let m = mask_from_face(&face(40, 20, 100, 100)).unwrap();
        assert_eq!((m.x0, m.y0, m.x1, m.y1), (65, 70, 115, 100));
    }

    #[test]
    fn tiny_face_is_rejected() {
        assert_eq!(
            mask_from_face(&face(0, 0, 4, 4)),
            Err(RoiError::FaceTooSmall { w: 4, h: 4 })
        );
        assert!(mask_from_face(&face(0, 0, 8, 8)).is_ok());
    }

    #[test]
    fn thermal_mapping() {
        let r = MaskRegion {
            frame: 0,
            x0: 100,
            y0: 100,
            x1: 200,
            y1: 200,
        };
        assert_eq!(map_to_thermal(&r, (640, 480), (640, 480)).unwrap(), r);
        let m = map_to_thermal(&r, (640, 480), (160, 120)).unwrap();
        assert_eq!((m.x0, m.y0, m.x1, m.y1), (25, 25, 50, 50));
        let odd = MaskRegion { x0: 101, ..r };
        assert_eq!(map_to_thermal(&odd, (640, 480), (320, 240)).unwrap().x0, 51);
        let tiny = MaskRegion {
            frame: 0,
            x0: 10,
            y0: 10,
            x1: 11,
            y1: 20,
        };
        assert!(matches!(
            map_to_thermal(&tiny, (640, 480), (160, 120)),
            Err(RoiError::Degenerate { .. })
        ));
    }

    #[test]
    fn block_means() {
        let f = Frame::thermal(2, 2, vec![1, 2, 3, 4]).unwrap();
        let all = Rect {
            x: 0,
            y: 0,
            w: 2,
            h: 2,
        };
        assert_eq!(block_mean(&f, all).unwrap(), 2.5);
        let c = Frame::thermal(4, 4, vec![777; 16]).unwrap();
        assert_eq!(
            block_mean(
                &c,
                Rect {
                    x: 1,
                    y: 1,
                    w: 3,
                    h: 2
                }
            )
            .unwrap(),
            777.0
        );
        assert_eq!(
            block_mean(&f, Rect { w: 0, ..all }),
            Err(RoiError::EmptyBlock)
        );
        assert!(matches!(
            block_mean(&f, Rect { x: 1, ..all }),
            Err(RoiError::OutOfFrame { .. })
        ));
    }

    #[test]
    fn variance_examples() {
        assert_eq!(temporal_variance(&[3.0; 10]).unwrap(), 0.0);
        assert_eq!(temporal_variance(&[0.0, 2.0]).unwrap(), 1.0);
        assert_eq!(temporal_variance(&[1.0]), Err(RoiError::TooShort(1)));
    }

    #[test]
    fn normalize_examples() {
        let t = RespirationTrace::new(vec![0.0, 2.0], 10.0).unwrap();
        assert_eq!(normalize_trace(&t).unwrap().values(), &[-1.0, 1.0]);
        let flat = RespirationTrace::new(vec![5.0; 8], 10.0).unwrap();
        assert_eq!(normalize_trace(&flat), Err(RoiError::FlatTrace));
    }

    #[test]
    fn placement_scales_with_mask() {
        let spec = BlockSpec {
            offset_x: 3,
            offset_y: 2,
            ref_w: 10,
            ref_h: 6,
            block_w: 2,
            block_h: 2,
        };
        let same = MaskRegion {
            frame: 0,
            x0: 5,
            y0: 7,
            x1: 15,
            y1: 13,
        };
        assert_eq!(
            spec.place(&same),
            Rect {
                x: 8,
                y: 9,
                w: 2,
                h: 2
            }
        );
        let wider = MaskRegion {
            x1: 25,
            y1: 19,
            ..same
        };
        assert_eq!(
            spec.place(&wider),
            Rect {
                x: 11,
                y: 11,
                w: 2,
                h: 2
            }
        );
    }
}
