use ndarray::{Array4, ArrayView4};

/// Floor applied before taking logs so black pixels stay finite.
pub const LOG_FLOOR: f32 = 1.0 / 255.0;

fn log_luma(r: f32, g: f32, b: f32) -> f32 {
    (0.299 * r + 0.587 * g + 0.114 * b).max(LOG_FLOOR).ln()
}

/// Event frames from an RGB stack by thresholded log-luminance differences.
///
/// Channel 0 marks brightening, channel 1 darkening, channel 2 carries the
/// magnitude of the change clamped to 1. Frame 0 has no predecessor and is
/// all zeros.
pub fn simulate_events(rgb: ArrayView4<f32>, threshold: f32) -> Array4<f32> {
    let (t, c, h, w) = rgb.dim();
    assert_eq!(c, 3, "expected RGB frames");
    let mut out = Array4::zeros((t, 3, h, w));
    for f in 1..t {
        for y in 0..h {
            for x in 0..w {
                let cur = log_luma(rgb[(f, 0, y, x)], rgb[(f, 1, y, x)], rgb[(f, 2, y, x)]);
                let prev = log_luma(rgb[(f - 1, 0, y, x)], rgb[(f - 1, 1, y, x)], rgb[(f - 1, 2, y, x)]);
                let d = cur - prev;
                if d.abs() > threshold {
                    out[(f, if d > 0.0 { 0 } else { 1 }, y, x)] = 1.0;
                    out[(f, 2, y, x)] = d.abs().min(1.0);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn static_video_has_no_events() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Array4::from_shape_simple_fn((1, 3, 8, 8), || rng.random::<f32>());
        let v = ndarray::concatenate![ndarray::Axis(0), f, f, f];
        assert!(simulate_events(v.view(), 0.1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_step_fires_positive_event() {
        let mut v = Array4::from_elem((2, 3, 4, 4), 0.2f32);
        for ch in 0..3 {
            v[(1, ch, 2, 1)] = 0.8;
        }
        let e = simulate_events(v.view(), 0.1);
        let fired: Vec<_> = e.indexed_iter().filter(|(_, &x)| x != 0.0).map(|(i, _)| i).collect();
        assert_eq!(fired, vec![(1, 0, 2, 1), (1, 2, 2, 1)]);
        assert_eq!(e[(1, 2, 2, 1)], 1.0, "ln 4 clamps to 1");
    }

    #[test]
    fn event_count_is_gain_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = Array4::from_shape_simple_fn((4, 3, 16, 16), || rng.random_range(0.05f32..0.4));
        let count = |e: &Array4<f32>| e.iter().filter(|&&x| x != 0.0).count();
        let base = simulate_events(v.view(), 0.3);
        let gained = simulate_events((&v * 2.0).view(), 0.3);
        assert!(count(&base) > 0);
        assert_eq!(count(&base), count(&gained));
    }
}
