use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Semantic classes painted into every scene.
pub const NUM_SEMANTIC_CLASSES: usize = 5;
pub const CLASS_SKY: u8 = 0;
pub const CLASS_GROUND: u8 = 1;
/// Rectangles, disks and triangles are classes 2, 3 and 4.
pub const CLASS_OBJECT_BASE: u8 = 2;

/// A clean synthetic frame and its per-pixel semantic labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: Tensor,
    pub labels: Vec<u8>,
}

#[derive(Clone, Copy)]
enum Shape {
    Rect {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
    },
    Disk {
        cx: f64,
        cy: f64,
        r: f64,
    },
    Triangle {
        cx: f64,
        base_y: f64,
        half: f64,
        height: f64,
    },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Triangle {
                cx,
                base_y,
                half,
                height,
            } => {
                let top = base_y - height;
                if y < top || y > base_y {
                    return false;
                }
                let w = half * (y - top) / height;
                (x - cx).abs() <= w
            }
        }
    }

    fn class(&self) -> u8 {
        CLASS_OBJECT_BASE
            + match self {
                Shape::Rect { .. } => 0,
                Shape::Disk { .. } => 1,
                Shape::Triangle { .. } => 2,
            }
    }
}

/// Object colour families, one per object class: red, green, violet.
fn object_color(rng: &mut ChaCha8Rng, class: u8) -> [f64; 3] {
    let j = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| rng.gen_range(lo..hi);
    match class - CLASS_OBJECT_BASE {
        0 => [j(rng, 0.65, 0.9), j(rng, 0.1, 0.3), j(rng, 0.1, 0.25)],
        1 => [j(rng, 0.1, 0.3), j(rng, 0.5, 0.75), j(rng, 0.1, 0.3)],
        _ => [j(rng, 0.45, 0.65), j(rng, 0.15, 0.3), j(rng, 0.6, 0.85)],
    }
}

/// Deterministic composite of a gradient sky, a textured ground plane and 3–8 objects.
pub fn gen_scene(seed: u64, height: usize, width: usize) -> Result<Scene> {
    if height < 16 || width < 16 {
        return Err(Error::Parameter(format!(
            "scene must be at least 16×16, got {height}×{width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f64, width as f64);

    let horizon = rng.gen_range(0.35..0.55) * h;
    let sky_top: [f64; 3] = [
        rng.gen_range(0.2..0.45),
        rng.gen_range(0.4..0.65),
        rng.gen_range(0.75..0.95),
    ];
    let lift: f64 = rng.gen_range(0.1..0.25);
    let sky_low = sky_top.map(|c| (c + lift).min(1.0));
    let ground = {
        let base = rng.gen_range(0.3..0.5);
        [
            base + rng.gen_range(0.0..0.1),
            base + rng.gen_range(-0.05..0.05),
            base - rng.gen_range(0.0..0.1),
        ]
    };
    let stripe_period = rng.gen_range(6.0..14.0) * w / 64.0;
    let stripe_phase = rng.gen_range(0.0..std::f64::consts::TAU);

    let n_objects = rng.gen_range(3..=8);
    let scale = h.min(w);
    let mut objects = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let kind = rng.gen_range(0..3);
        let size = rng.gen_range(0.1..0.3) * scale;
        let cx = rng.gen_range(0.0..w);
        let base_y = rng.gen_range(horizon + 0.1 * size..h + 0.3 * size);
        let shape = match kind {
            0 => {
                let aspect = rng.gen_range(0.6..1.6);
                Shape::Rect {
                    x0: cx - size * aspect / 2.0,
                    y0: base_y - size,
                    x1: cx + size * aspect / 2.0,
                    y1: base_y,
                }
            }
            1 => Shape::Disk {
                cx,
                cy: base_y - size / 2.0,
                r: size / 2.0,
            },
            _ => Shape::Triangle {
                cx,
                base_y,
                half: size * 0.6,
                height: size * 1.2,
            },
        };
        let color = object_color(&mut rng, shape.class());
        let shade = rng.gen_range(0.05..0.15);
        objects.push((shape, color, shade));
    }
    // nearer objects (larger base y) are painted last
    objects.sort_by(|a, b| bottom(&a.0).total_cmp(&bottom(&b.0)));

    let plane = height * width;
    let mut data = vec![0.0; 3 * plane];
    let mut labels = vec![0u8; plane];
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let (mut rgb, mut class) = if fy < horizon {
                let t = fy / horizon;
                let c = [0, 1, 2].map(|k| sky_top[k] * (1.0 - t) + sky_low[k] * t);
                (c, CLASS_SKY)
            } else {
                let depth = (fy - horizon) / (h - horizon).max(1.0);
                let tex = 0.05
                    * ((fx + 0.3 * fy) / stripe_period * std::f64::consts::TAU + stripe_phase)
                        .sin()
                    + 0.08 * depth;
                (ground.map(|c| c + tex), CLASS_GROUND)
            };
            for (shape, color, shade) in &objects {
                if shape.contains(fx, fy) {
                    let v = 1.0 - shade * (fy / h);
                    rgb = color.map(|c| c * v);
                    class = shape.class();
                }
            }
            for k in 0..3 {
                data[k * plane + y * width + x] = rgb[k].clamp(0.0, 1.0);
            }
            labels[y * width + x] = class;
        }
    }
    Ok(Scene {
        image: Tensor::new([3, height, width], data)?,
        labels,
    })
}

fn bottom(s: &Shape) -> f64 {
    match *s {
        Shape::Rect { y1, .. } => y1,
        Shape::Disk { cy, r, .. } => cy + r,
        Shape::Triangle { base_y, .. } => base_y,
    }
}

/// The image part of [`gen_scene`].
pub fn gen_clean_scene(seed: u64, height: usize, width: usize) -> Result<Tensor> {
    gen_scene(seed, height, width).map(|s| s.image)
}
