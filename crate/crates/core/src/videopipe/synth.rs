//! Seeded synthetic test content: drifting gratings with a moving edge.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::frame::{ChromaFormat, PlanarFrame, Plane};
use crate::error::{invalid, Result};

struct Grating {
    fx: f64,
    fy: f64,
    speed: f64,
    phase: f64,
    amp: f64,
}

impl Grating {
    fn random(rng: &mut ChaCha8Rng, amp: f64) -> Self {
        Grating {
            fx: rng.gen_range(0.01..0.12),
            fy: rng.gen_range(0.01..0.12),
            speed: rng.gen_range(0.1..0.6),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
            amp,
        }
    }

    fn at(&self, x: f64, y: f64, t: f64) -> f64 {
        self.amp * (self.fx * x + self.fy * y + self.speed * t + self.phase).sin()
    }
}

/// `frames` 8-bit 4:2:0 frames of `width x height` (both even). Luma is
/// three drifting gratings, a bright rectangle moving one pixel per frame
/// and light uniform noise; chroma holds a slower grating pair.
pub fn synthetic_sequence(width: usize, height: usize, frames: usize, seed: u64) -> Result<Vec<PlanarFrame>> {
    if width % 2 != 0 || height % 2 != 0 || frames == 0 {
        return Err(invalid(format!("synthetic sequence {width}x{height} with {frames} frames")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let luma: Vec<Grating> = (0..3).map(|i| Grating::random(&mut rng, 40.0 / (i + 1) as f64)).collect();
    let chroma: Vec<Grating> = (0..2).map(|_| Grating::random(&mut rng, 25.0)).collect();
    let (rw, rh) = (width / 3, height / 3);
    let (rx, ry) = (rng.gen_range(0..width - rw), rng.gen_range(0..height - rh));
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let tf = t as f64;
        let mut f = PlanarFrame::new(width, height, 8, ChromaFormat::Yuv420)?;
        for y in 0..height {
            for x in 0..width {
                let (xf, yf) = (x as f64, y as f64);
                let mut v = 128.0 + luma.iter().map(|g| g.at(xf, yf, tf)).sum::<f64>();
                let inside = (x + width - t % width) % width >= rx
                    && (x + width - t % width) % width < rx + rw
                    && y >= ry
                    && y < ry + rh;
                if inside {
                    v += 35.0;
                }
                v += rng.gen_range(-3.0..3.0);
                f.set(Plane::Y, x, y, v.round().clamp(0.0, 255.0) as u16);
            }
        }
        let (cw, ch) = f.chroma_dims();
        for (p, g) in [Plane::Cb, Plane::Cr].into_iter().zip(&chroma) {
            for y in 0..ch {
                for x in 0..cw {
                    let v = 128.0 + g.at(2.0 * x as f64, 2.0 * y as f64, 0.5 * tf);
                    f.set(p, x, y, v.round().clamp(0.0, 255.0) as u16);
                }
            }
        }
        out.push(f);
    }
    Ok(out)
}
