//! Temporal frame-pair sampling.

use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    /// `t` uniform; `t'` uniform over the window around `t`, excluding `t`.
    Window(usize),
    /// `t` uniform over frames with a successor; `t' = t + 1`.
    NextFrame,
}

/// Sample a frame pair `(t, t')` with `t' != t` from a sequence of length
/// `num_frames` (>= 2).
pub fn sample_frame_pair(num_frames: usize, mode: PairMode, rng: &mut RngStream) -> (usize, usize) {
    assert!(num_frames >= 2, "need at least two frames");
    match mode {
        PairMode::NextFrame => {
            let t = rng.next_index(num_frames - 1);
            (t, t + 1)
        }
        PairMode::Window(window) => {
            assert!(window >= 1, "window must be at least 1");
            let t = rng.next_index(num_frames);
            let lo = t.saturating_sub(window);
            let hi = (t + window).min(num_frames - 1);
            // candidates exclude t itself
            let count = hi - lo; // inclusive span minus the excluded t
            let pick = rng.next_index(count);
            let tp = if lo + pick >= t { lo + pick + 1 } else { lo + pick };
            (t, tp)
        }
    }
}
