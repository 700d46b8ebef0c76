//! Deterministic synthetic test scenes: smooth blobs on a ramp, used by the
//! benchmark command and the self-check suites where no image corpus is
//! available.

use trdpd_core::noise::CounterRng;
use trdpd_core::Image;

/// A smooth positive scene of the given size with maximum exactly `peak`.
/// Fully determined by `seed`.
pub fn synth_clean(width: usize, height: usize, seed: u64, peak: f64) -> Image {
    let mut rng = CounterRng::keyed(seed, 0);
    let blobs = 4 + (rng.next_u64() % 4) as usize;
    let mut centers = Vec::with_capacity(blobs);
    for _ in 0..blobs {
        let cx = rng.next_f64() * width as f64;
        let cy = rng.next_f64() * height as f64;
        let sigma = (3.0 + rng.next_f64() * 0.22 * width.max(height) as f64).max(2.0);
        let amp = 0.35 + rng.next_f64() * 0.65;
        centers.push((cx, cy, sigma, amp));
    }
    let ramp_x = (rng.next_f64() - 0.5) * 0.6;
    let ramp_y = (rng.next_f64() - 0.5) * 0.6;
    let base = 0.15 + rng.next_f64() * 0.2;

    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let mut v = base
                + ramp_x * (x as f64 / width.max(1) as f64)
                + ramp_y * (y as f64 / height.max(1) as f64);
            for &(cx, cy, sigma, amp) in &centers {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                v += amp * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            }
            data.push(v.max(0.01));
        }
    }
    let max = data.iter().cloned().fold(0.0_f64, f64::max);
    let s = peak / max;
    for v in data.iter_mut() {
        *v *= s;
    }
    Image::new(width, height, data).expect("synthetic scene construction")
}
