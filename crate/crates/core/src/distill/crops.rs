//! Overlapping crop pairs of a frame and its flow field.

use super::DistillError;
use crate::dataio::{FlowField, ImageF32};
use crate::numerics::RngStream;

/// Axis-aligned square crop geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropSpec {
    pub x0: usize,
    pub y0: usize,
    pub size: usize,
}

/// Intersection-over-union of two crop boxes.
pub fn box_iou(a: &CropSpec, b: &CropSpec) -> f32 {
    let x_lo = a.x0.max(b.x0);
    let y_lo = a.y0.max(b.y0);
    let x_hi = (a.x0 + a.size).min(b.x0 + b.size);
    let y_hi = (a.y0 + a.size).min(b.y0 + b.size);
    if x_hi <= x_lo || y_hi <= y_lo {
        return 0.0;
    }
    let inter = ((x_hi - x_lo) * (y_hi - y_lo)) as f32;
    let union = (a.size * a.size + b.size * b.size) as f32 - inter;
    inter / union
}

/// A crop pair: views for teacher and student plus the matching flow crops.
#[derive(Debug, Clone)]
pub struct CropPair {
    pub v1: ImageF32,
    pub u1: FlowField,
    pub v2: ImageF32,
    pub u2: FlowField,
    pub spec1: CropSpec,
    pub spec2: CropSpec,
}

const MAX_ATTEMPTS: usize = 256;

/// Two same-scale random crops of the frame and the identically placed flow
/// crops, rejection-sampled until their box IoU reaches `min_overlap`. If
/// the attempt budget runs out the second crop falls back to the first.
pub fn sample_crop_pair(
    frame: &ImageF32,
    flow: &FlowField,
    size: usize,
    min_overlap: f32,
    rng: &mut RngStream,
) -> Result<CropPair, DistillError> {
    if size == 0 || size > frame.width.min(frame.height) {
        return Err(DistillError::CropTooLarge {
            size,
            width: frame.width,
            height: frame.height,
        });
    }
    if flow.width != frame.width || flow.height != frame.height {
        return Err(DistillError::ShapeMismatch(format!(
            "flow {}x{} does not match frame {}x{}",
            flow.width, flow.height, frame.width, frame.height
        )));
    }
    let max_x = frame.width - size;
    let max_y = frame.height - size;
    let draw = |rng: &mut RngStream| CropSpec {
        x0: rng.next_index(max_x + 1),
        y0: rng.next_index(max_y + 1),
        size,
    };
    let spec1 = draw(rng);
    let mut spec2 = spec1;
    for attempt in 0..MAX_ATTEMPTS {
        let cand = draw(rng);
        if box_iou(&spec1, &cand) >= min_overlap {
            spec2 = cand;
            break;
        }
        if attempt == MAX_ATTEMPTS - 1 {
            spec2 = spec1;
        }
    }
    Ok(CropPair {
        v1: frame.crop(spec1.x0, spec1.y0, size),
        u1: flow.crop(spec1.x0, spec1.y0, size),
        v2: frame.crop(spec2.x0, spec2.y0, size),
        u2: flow.crop(spec2.x0, spec2.y0, size),
        spec1,
        spec2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_and_flow(h: usize, w: usize) -> (ImageF32, FlowField) {
        let mut frame = ImageF32::zeros(h, w);
        for (i, v) in frame.data.iter_mut().enumerate() {
            *v = (i % 97) as f32 / 97.0;
        }
        let mut flow = FlowField::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                flow.set(y, x, x as f32, y as f32);
            }
        }
        (frame, flow)
    }

    #[test]
    fn full_size_crop_is_identity() {
        let (frame, flow) = frame_and_flow(16, 16);
        let mut rng = RngStream::new(1);
        let pair = sample_crop_pair(&frame, &flow, 16, 0.25, &mut rng).unwrap();
        assert_eq!(pair.v1, frame);
        assert_eq!(pair.v2, frame);
        assert_eq!(pair.u1, flow);
        assert_eq!(pair.u2, flow);
    }

    #[test]
    fn accepted_pairs_meet_overlap_floor() {
        let (frame, flow) = frame_and_flow(64, 64);
        let mut rng = RngStream::new(2);
        for _ in 0..500 {
            let pair = sample_crop_pair(&frame, &flow, 24, 0.25, &mut rng).unwrap();
            assert!(box_iou(&pair.spec1, &pair.spec2) >= 0.25);
        }
    }

    #[test]
    fn crops_align_with_flow() {
        let (frame, flow) = frame_and_flow(32, 32);
        let mut rng = RngStream::new(3);
        let pair = sample_crop_pair(&frame, &flow, 8, 0.25, &mut rng).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let (u, v) = pair.u2.get(y, x);
                assert_eq!(u, (pair.spec2.x0 + x) as f32);
                assert_eq!(v, (pair.spec2.y0 + y) as f32);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (frame, flow) = frame_and_flow(48, 48);
        let mut a = RngStream::new(9);
        let mut b = RngStream::new(9);
        let pa = sample_crop_pair(&frame, &flow, 16, 0.25, &mut a).unwrap();
        let pb = sample_crop_pair(&frame, &flow, 16, 0.25, &mut b).unwrap();
        assert_eq!(pa.spec1, pb.spec1);
        assert_eq!(pa.spec2, pb.spec2);
    }

    #[test]
    fn oversized_crop_rejected() {
        let (frame, flow) = frame_and_flow(16, 16);
        let mut rng = RngStream::new(4);
        assert!(matches!(
            sample_crop_pair(&frame, &flow, 17, 0.25, &mut rng),
            Err(DistillError::CropTooLarge { .. })
        ));
    }
}
