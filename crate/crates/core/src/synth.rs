//! Seeded synthetic detection corpus: square "faces" (bright disc, two dark
//! eyes, a mouth bar) planted among clutter on textured backgrounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bbox::BBox;
use crate::image::Image;
use crate::sampler::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub size: usize,
    pub min_face: f64,
    pub max_face: f64,
    pub max_faces: usize,
    /// Faces are separated, along x or y, by at least this fraction of
    /// their mean side.
    pub min_gap: f64,
    pub clutter: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { size: 131, min_face: 30.0, max_face: 60.0, max_faces: 2, min_gap: 1.0, clutter: 6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub id: String,
    pub image: Image,
    pub faces: Vec<BBox>,
}

fn paint(img: &mut Image, mut f: impl FnMut(f64, f64) -> Option<f32>) {
    let (h, w) = (img.height(), img.width());
    for y in 0..h {
        for x in 0..w {
            if let Some(v) = f(x as f64 + 0.5, y as f64 + 0.5) {
                img.set(0, y, x, v.clamp(0.0, 255.0));
            }
        }
    }
}

fn disc(img: &mut Image, cx: f64, cy: f64, r: f64, v: f32) {
    paint(img, |x, y| ((x - cx).powi(2) + (y - cy).powi(2) <= r * r).then_some(v));
}

fn rect(img: &mut Image, b: &BBox, v: f32) {
    paint(img, |x, y| (x >= b.x && x < b.right() && y >= b.y && y < b.bottom()).then_some(v));
}

/// Draws a face filling the square `b`.
pub fn draw_face(img: &mut Image, b: &BBox, skin: f32, dark: f32) {
    let s = b.width;
    disc(img, b.x + s / 2.0, b.y + s / 2.0, s / 2.0, skin);
    for ex in [0.32, 0.68] {
        disc(img, b.x + ex * s, b.y + 0.38 * s, 0.09 * s, dark);
    }
    rect(img, &BBox::new(b.x + 0.3 * s, b.y + 0.68 * s, 0.4 * s, 0.08 * s), dark);
}

fn background(rng: &mut ChaCha8Rng, size: usize) -> Image {
    let base = rng.gen_range(50.0..140.0f32);
    let gx = rng.gen_range(-0.4..0.4f32);
    let gy = rng.gen_range(-0.4..0.4f32);
    let noise: Vec<f32> = (0..size * size).map(|_| rng.gen_range(-12.0..12.0)).collect();
    Image::from_fn(1, size, size, |_, y, x| {
        (base + gx * x as f32 + gy * y as f32 + noise[y * size + x]).clamp(0.0, 255.0)
    })
}

fn clutter(rng: &mut ChaCha8Rng, img: &mut Image) {
    let n = img.width() as f64;
    match rng.gen_range(0..4) {
        0 => {
            let (w, h) = (rng.gen_range(8.0..60.0), rng.gen_range(8.0..60.0));
            let b = BBox::new(rng.gen_range(-10.0..n), rng.gen_range(-10.0..n), w, h);
            rect(img, &b, rng.gen_range(0.0..255.0));
        }
        1 => {
            let r = rng.gen_range(6.0..30.0);
            disc(img, rng.gen_range(0.0..n), rng.gen_range(0.0..n), r, rng.gen_range(0.0..255.0));
        }
        2 => {
            let (x0, y0) = (rng.gen_range(0.0..n), rng.gen_range(0.0..n));
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let (dx, dy) = (angle.cos(), angle.sin());
            let half = rng.gen_range(1.0..4.0);
            let v = rng.gen_range(0.0..255.0);
            paint(img, |x, y| (((x - x0) * dy - (y - y0) * dx).abs() <= half).then_some(v));
        }
        _ => {
            let b = BBox::new(
                rng.gen_range(0.0..n - 10.0),
                rng.gen_range(0.0..n - 10.0),
                rng.gen_range(10.0..40.0),
                rng.gen_range(10.0..40.0),
            );
            let amp = rng.gen_range(20.0..80.0f32);
            let mut noise = ChaCha8Rng::seed_from_u64(rng.gen());
            paint(img, |x, y| {
                (x >= b.x && x < b.right() && y >= b.y && y < b.bottom()).then(|| 128.0 + noise.gen_range(-amp..amp))
            });
        }
    }
}

/// One image; faces lie fully inside and keep `min_gap` apart.
pub fn generate_image(cfg: &SynthConfig, id: &str, seed: u64) -> SynthImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = background(&mut rng, cfg.size);
    for _ in 0..cfg.clutter {
        clutter(&mut rng, &mut image);
    }
    let n = cfg.size as f64;
    let want = rng.gen_range(1..=cfg.max_faces.max(1));
    let mut faces: Vec<BBox> = Vec::new();
    for _ in 0..want * 50 {
        if faces.len() == want {
            break;
        }
        let s = rng.gen_range(cfg.min_face..=cfg.max_face.min(n)).round();
        let b = BBox::new(rng.gen_range(0.0..=n - s).round(), rng.gen_range(0.0..=n - s).round(), s, s);
        let apart = |f: &BBox| {
            let gx = (b.x - f.right()).max(f.x - b.right());
            let gy = (b.y - f.bottom()).max(f.y - b.bottom());
            gx.max(gy) >= cfg.min_gap * 0.5 * (f.width + b.width)
        };
        if faces.iter().all(apart) {
            faces.push(b);
        }
    }
    for f in &faces {
        let skin = rng.gen_range(170.0..240.0f32);
        let dark = rng.gen_range(10.0..70.0f32);
        draw_face(&mut image, f, skin, dark);
    }
    SynthImage { id: id.to_string(), image, faces }
}

/// Image `i` is named `img{i:04}` and drawn with `derive_seed(seed, i)`.
pub fn generate_corpus(cfg: &SynthConfig, count: usize, seed: u64) -> Vec<SynthImage> {
    (0..count).map(|i| generate_image(cfg, &format!("img{i:04}"), derive_seed(seed, i as u64))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_bounds() {
        let cfg = SynthConfig::default();
        let a = generate_corpus(&cfg, 20, 3);
        assert_eq!(a, generate_corpus(&cfg, 20, 3));
        for s in &a {
            assert!(!s.faces.is_empty());
            if let [a, b] = s.faces[..] {
                let gap = (b.x - a.right()).max(a.x - b.right()).max((b.y - a.bottom()).max(a.y - b.bottom()));
                assert!(gap >= 0.5 * (a.width + b.width));
            }
            for f in &s.faces {
                assert!(f.x >= 0.0 && f.y >= 0.0 && f.right() <= 131.0 && f.bottom() <= 131.0);
                assert!((30.0..=60.0).contains(&f.width));
            }
        }
    }

    #[test]
    fn face_pattern() {
        let mut img = Image::filled(1, 40, 40, 100.0);
        draw_face(&mut img, &BBox::new(0.0, 0.0, 40.0, 40.0), 200.0, 20.0);
        assert_eq!(img.get(0, 20, 20), 200.0);
        assert_eq!(img.get(0, 15, 13), 20.0);
        assert_eq!(img.get(0, 28, 20), 20.0);
        assert_eq!(img.get(0, 0, 0), 100.0);
    }
}
