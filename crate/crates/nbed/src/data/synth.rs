//! Synthetic scenes with analytically known boundaries: filled ellipses and
//! convex polygons in distinct gray levels over a flat background, mild
//! pixel noise on the image, and an exact one-pixel ground-truth boundary.

use ndarray::{Array2, Array3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::Sample;

#[derive(Clone)]
enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64, rot: f64 },
    Polygon { pts: Vec<(f64, f64)> },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match self {
            Shape::Ellipse { cy, cx, ry, rx, rot } => {
                let (s, c) = rot.sin_cos();
                let dy = y - cy;
                let dx = x - cx;
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Polygon { pts } => {
                // crossing-number test on pixel centers
                let mut inside = false;
                let n = pts.len();
                for i in 0..n {
                    let (y1, x1) = pts[i];
                    let (y2, x2) = pts[(i + 1) % n];
                    if (y1 > y) != (y2 > y) {
                        let t = (y - y1) / (y2 - y1);
                        if x < x1 + t * (x2 - x1) {
                            inside = !inside;
                        }
                    }
                }
                inside
            }
        }
    }
}

fn random_shape(rng: &mut ChaCha8Rng, size: f64) -> Shape {
    let cy = rng.gen_range(0.2 * size..0.8 * size);
    let cx = rng.gen_range(0.2 * size..0.8 * size);
    let r = size * 0.08;
    if rng.gen_bool(0.5) {
        Shape::Ellipse {
            cy,
            cx,
            ry: rng.gen_range(r..2.5 * r),
            rx: rng.gen_range(r..2.5 * r),
            rot: rng.gen_range(0.0..std::f64::consts::PI),
        }
    } else {
        // convex polygon: random radii at sorted angles around the center
        let k = rng.gen_range(3..=6usize);
        let base = rng.gen_range(0.0..std::f64::consts::TAU);
        let pts = (0..k)
            .map(|i| {
                let ang = base + std::f64::consts::TAU * i as f64 / k as f64;
                let rad = rng.gen_range(r..2.5 * r);
                (cy + rad * ang.sin(), cx + rad * ang.cos())
            })
            .collect();
        Shape::Polygon { pts }
    }
}

/// Label map edges: a pixel is boundary if its label beats a 4-neighbor's.
/// Later shapes are drawn on top, so the boundary lies on the covering
/// shape's side and is exactly one pixel wide.
fn boundary_of_labels(labels: &Array2<usize>) -> Array2<u8> {
    let (h, w) = labels.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let l = labels[(i, j)];
        let beats = |ni: isize, nj: isize| {
            if ni < 0 || nj < 0 || ni >= h as isize || nj >= w as isize {
                return false;
            }
            l > labels[(ni as usize, nj as usize)]
        };
        let i = i as isize;
        let j = j as isize;
        (beats(i - 1, j) || beats(i + 1, j) || beats(i, j - 1) || beats(i, j + 1)) as u8
    })
}

/// Render a deterministic synthetic sample: `shape_count` shapes in distinct
/// gray levels, exact one-pixel boundaries as ground truth.
pub fn synth_sample(size: usize, shape_count: usize, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes: Vec<Shape> = (0..shape_count).map(|_| random_shape(&mut rng, size as f64)).collect();

    // distinct gray levels, background darkest
    let background = 30u8;
    let levels: Vec<u8> = (0..shape_count)
        .map(|i| 60 + ((i as f64 + 1.0) / (shape_count as f64 + 1.0) * 195.0) as u8)
        .collect();

    let labels = Array2::from_shape_fn((size, size), |(i, j)| {
        let (y, x) = (i as f64, j as f64);
        let mut label = 0usize;
        for (k, s) in shapes.iter().enumerate() {
            if s.contains(y, x) {
                label = k + 1;
            }
        }
        label
    });

    let gt = boundary_of_labels(&labels);

    let mut noise = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let image = Array3::from_shape_fn((size, size, 3), |(i, j, _)| {
        let base = match labels[(i, j)] {
            0 => background,
            k => levels[k - 1],
        };
        let jitter = noise.gen_range(-2i16..=2);
        (base as i16 + jitter).clamp(0, 255) as u8
    });

    Sample::new(image, vec![gt], format!("synth-{size}-{shape_count}-{seed}"))
        .expect("synthetic sample is well-formed by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_shapes_gives_empty_gt() {
        let s = synth_sample(48, 0, 3);
        assert_eq!(s.consensus_gt.sum(), 0.0);
        assert_eq!(s.image.dim(), (48, 48, 3));
    }

    #[test]
    fn same_seed_is_bitwise_identical_different_seed_is_not() {
        let a = synth_sample(64, 4, 11);
        let b = synth_sample(64, 4, 11);
        assert_eq!(a.image, b.image);
        assert_eq!(a.annotator_gts, b.annotator_gts);
        let c = synth_sample(64, 4, 12);
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn rectangle_boundary_matches_perimeter_oracle() {
        // axis-aligned rectangle as a polygon: pixel centers inside
        // [10.5, 20.5] x [8.5, 25.5] are rows 11..=20, cols 9..=25
        let labels = {
            let shape = Shape::Polygon {
                pts: vec![(10.5, 8.5), (10.5, 25.5), (20.5, 25.5), (20.5, 8.5)],
            };
            Array2::from_shape_fn((40, 40), |(i, j)| {
                shape.contains(i as f64, j as f64) as usize
            })
        };
        let gt = boundary_of_labels(&labels);
        // independent perimeter oracle
        for i in 0..40 {
            for j in 0..40 {
                let inside = (11..=20).contains(&i) && (9..=25).contains(&j);
                let interior = (12..=19).contains(&i) && (10..=24).contains(&j);
                let want = (inside && !interior) as u8;
                assert_eq!(gt[(i, j)], want, "at ({i},{j})");
            }
        }
    }

    #[test]
    fn shapes_produce_edges_and_boundary_is_thin() {
        let s = synth_sample(64, 5, 2);
        let edges = s.consensus_gt.sum();
        assert!(edges > 0.0, "no boundary pixels rendered");
        // a 1-pixel boundary occupies a small fraction of the image
        assert!(edges < (64 * 64) as f64 * 0.2, "boundary too thick: {edges}");
    }

    #[test]
    fn edge_pixels_sit_on_gray_level_transitions() {
        let s = synth_sample(64, 3, 5);
        let (h, w) = s.consensus_gt.dim();
        let mut on_transition = 0usize;
        let mut total = 0usize;
        for i in 1..h - 1 {
            for j in 1..w - 1 {
                if s.consensus_gt[(i, j)] == 1.0 {
                    total += 1;
                    let c = s.image[(i, j, 0)] as i16;
                    let jump = [(0i32, 1i32), (0, -1), (1, 0), (-1, 0)].iter().any(|&(di, dj)| {
                        let v = s.image[((i as i32 + di) as usize, (j as i32 + dj) as usize, 0)] as i16;
                        (c - v).abs() > 8
                    });
                    if jump {
                        on_transition += 1;
                    }
                }
            }
        }
        assert!(total > 0);
        assert!(
            on_transition as f64 >= 0.9 * total as f64,
            "{on_transition}/{total} edge pixels on gray transitions"
        );
    }
}
