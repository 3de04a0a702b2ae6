//! Training-time augmentation, resizing and normalization of 48×48 faces.

use rand::Rng;

use super::fer::IMAGE_SIDE;

/// Reflection padding before the random crop.
pub const PAD: usize = 4;
/// Largest rotation, in degrees, either way.
pub const MAX_ROTATION_DEG: f64 = 10.0;

/// One concrete augmentation draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    /// Crop origin inside the padded image, each in `0..=2·PAD`.
    pub dx: usize,
    pub dy: usize,
    pub angle_deg: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        dx: PAD,
        dy: PAD,
        angle_deg: 0.0,
    };

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        AugmentParams {
            dx: rng.random_range(0..=2 * PAD),
            dy: rng.random_range(0..=2 * PAD),
            angle_deg: rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG),
        }
    }
}

/// Random crop from the reflect-padded image followed by a random rotation.
pub fn augment<R: Rng + ?Sized>(image: &[f32], rng: &mut R) -> Vec<f32> {
    augment_with(image, AugmentParams::sample(rng))
}

pub fn augment_with(image: &[f32], p: AugmentParams) -> Vec<f32> {
    let cropped = reflect_crop(image, IMAGE_SIDE, p.dx, p.dy);
    rotate(&cropped, IMAGE_SIDE, p.angle_deg)
}

/// Mirror index into `0..n` without repeating the edge pixel.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period.max(1));
    (if m < n { m } else { period - m }) as usize
}

fn reflect_crop(image: &[f32], side: usize, dx: usize, dy: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(side * side);
    for y in 0..side {
        let sy = reflect(y as isize + dy as isize - PAD as isize, side);
        for x in 0..side {
            let sx = reflect(x as isize + dx as isize - PAD as isize, side);
            out.push(image[sy * side + sx]);
        }
    }
    out
}

/// Bilinear rotation about the image center; samples falling outside the
/// source read zero.
fn rotate(image: &[f32], side: usize, angle_deg: f64) -> Vec<f32> {
    if angle_deg == 0.0 {
        return image.to_vec();
    }
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let c = (side as f64 - 1.0) / 2.0;
    let at = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= side as isize || y >= side as isize {
            0.0
        } else {
            image[y as usize * side + x as usize] as f64
        }
    };
    let mut out = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            // inverse map: where in the source does this output pixel come from
            let (u, v) = (x as f64 - c, y as f64 - c);
            let sx = cos * u + sin * v + c;
            let sy = -sin * u + cos * v + c;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x0 + 1, y0))
                + fy * ((1.0 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1));
            out.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    out
}

/// Bilinear resize of a square image with align-corners sampling.
pub fn resize(image: &[f32], side: usize, target: usize) -> Vec<f32> {
    assert!(target >= 1 && image.len() == side * side, "resize: bad arguments");
    if target == side {
        return image.to_vec();
    }
    let coord = |i: usize| -> (usize, f64) {
        let s = if target > 1 { i as f64 * (side - 1) as f64 / (target - 1) as f64 } else { (side - 1) as f64 / 2.0 };
        let i0 = (s.floor() as usize).min(side - 1);
        (i0, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(target * target);
    for y in 0..target {
        let (y0, fy) = coord(y);
        let y1 = (y0 + 1).min(side - 1);
        for x in 0..target {
            let (x0, fx) = coord(x);
            let x1 = (x0 + 1).min(side - 1);
            let p = |yy: usize, xx: usize| image[yy * side + xx] as f64;
            let v = (1.0 - fy) * ((1.0 - fx) * p(y0, x0) + fx * p(y0, x1)) + fy * ((1.0 - fx) * p(y1, x0) + fx * p(y1, x1));
            out.push(v as f32);
        }
    }
    out
}

/// Maps [0, 1] onto [−1, 1].
pub fn normalize(image: &mut [f32]) {
    for v in image {
        *v = (*v - 0.5) / 0.5;
    }
}
