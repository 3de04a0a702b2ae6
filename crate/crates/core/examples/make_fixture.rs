//! Writes the synthetic 70-row training fixture: ten noisy variants of one
//! low-frequency pattern per class, all in the Training split.
//!
//! cargo run -p emonext --example make_fixture -- fixtures/fer_mini.csv

use std::f64::consts::PI;
use std::io::Write;

use emonext::data::IMAGE_SIDE;
use emonext::StreamRng;
use rand::Rng;
use rand_distr::{Distribution, Normal};

const PER_CLASS: usize = 10;

/// Base intensity in [0, 1] of class `c` at pixel `(x, y)`, with the pattern
/// origin moved by `(ox, oy)`.
fn pattern(c: usize, x: f64, y: f64, ox: f64, oy: f64) -> f64 {
    let s = IMAGE_SIDE as f64;
    let (u, v) = ((x - ox) / s, (y - oy) / s);
    let (du, dv) = (u - 0.5, v - 0.5);
    let r = (du * du + dv * dv).sqrt();
    match c {
        0 => if v < 0.5 { 0.85 } else { 0.15 },
        1 => if u < 0.5 { 0.85 } else { 0.15 },
        2 => 0.1 + 0.8 * (-(r * r) / 0.02).exp(),
        3 => if (0.18..0.34).contains(&r) { 0.9 } else { 0.2 },
        4 => 0.5 + 0.4 * (2.0 * PI * u * 3.0).sin(),
        5 => 0.5 + 0.4 * (2.0 * PI * v * 3.0).sin(),
        _ => 0.1 + 0.8 * ((u + v) / 2.0).clamp(0.0, 1.0),
    }
}

fn main() -> std::io::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "fixtures/fer_mini.csv".into());
    let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
    writeln!(out, "emotion,pixels,Usage")?;
    let noise = Normal::new(0.0, 0.04).expect("valid std");
    for k in 0..PER_CLASS {
        for c in 0..emonext::NUM_CLASSES {
            let mut rng = StreamRng::derive(2024, &[c as u64, k as u64]);
            let (ox, oy) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let gain = rng.random_range(0.85..1.0);
            let bias = rng.random_range(-0.05..0.05);
            let px: Vec<String> = (0..IMAGE_SIDE * IMAGE_SIDE)
                .map(|i| {
                    let (x, y) = ((i % IMAGE_SIDE) as f64, (i / IMAGE_SIDE) as f64);
                    let v = gain * pattern(c, x, y, ox, oy) + bias + noise.sample(&mut rng);
                    ((v.clamp(0.0, 1.0) * 255.0).round() as u8).to_string()
                })
                .collect();
            writeln!(out, "{c},{},Training", px.join(" "))?;
        }
    }
    out.flush()
}
