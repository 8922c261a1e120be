//! Procedural shapes on a black background: filled discs, squares and bars
//! with jittered position, scale and hue.

use rand::Rng as _;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Disc,
    Square,
    Bar,
}

impl ShapeClass {
    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(ShapeClass::Disc),
            1 => Ok(ShapeClass::Square),
            2 => Ok(ShapeClass::Bar),
            other => Err(Error::Config(format!("unknown synthetic shape class {other} (0 disc, 1 square, 2 bar)"))),
        }
    }

    pub fn id(self) -> u8 {
        match self {
            ShapeClass::Disc => 0,
            ShapeClass::Square => 1,
            ShapeClass::Bar => 2,
        }
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = (h * 6.0) % 6.0;
    let x = c * (1.0 - ((hp % 2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn draw(class: ShapeClass, size: usize, r: &mut rng::Rng, out: &mut [u8]) {
    let s = size as f64;
    let cx = s / 2.0 + r.random_range(-s / 6.0..=s / 6.0);
    let cy = s / 2.0 + r.random_range(-s / 6.0..=s / 6.0);
    let radius = s * r.random_range(0.2..=0.32);
    let vertical = r.random_bool(0.5);
    let rgb = hsv_to_rgb(r.random_range(0.0..1.0), r.random_range(0.6..=1.0), r.random_range(0.75..=1.0));
    let plane = size * size;
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let inside = match class {
                ShapeClass::Disc => dx * dx + dy * dy <= radius * radius,
                ShapeClass::Square => dx.abs() <= 0.85 * radius && dy.abs() <= 0.85 * radius,
                ShapeClass::Bar => {
                    let (along, across) = if vertical { (dy, dx) } else { (dx, dy) };
                    along.abs() <= 1.2 * radius && across.abs() <= 0.3 * radius
                }
            };
            if inside {
                for (ch, v) in rgb.iter().enumerate() {
                    out[ch * plane + y * size + x] = (v * 255.0).round() as u8;
                }
            }
        }
    }
}

/// `n_per_class` RGB images per listed class, grouped by class, labelled
/// with the class position in `classes`. Deterministic in `seed`.
pub fn synthetic_shapes_dataset(
    n_per_class: usize,
    size: usize,
    classes: &[ShapeClass],
    seed: u64,
) -> Result<Dataset> {
    if ![8, 16, 32].contains(&size) {
        return Err(Error::Config(format!("synthetic image size must be 8, 16 or 32, got {size}")));
    }
    if classes.is_empty() {
        return Err(Error::Config("synthetic dataset needs at least one class".into()));
    }
    let per = 3 * size * size;
    let total = n_per_class * classes.len();
    let mut pixels = vec![0u8; total * per];
    let mut labels = Vec::with_capacity(total);
    let mut r = rng::seeded(seed, rng::stream::DATA);
    for (label, &class) in classes.iter().enumerate() {
        for _ in 0..n_per_class {
            let i = labels.len();
            draw(class, size, &mut r, &mut pixels[i * per..(i + 1) * per]);
            labels.push(label as u8);
        }
    }
    Dataset::new(3, size, size, pixels, labels)
}
