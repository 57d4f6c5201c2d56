//! Procedural albedo and height fields evaluated at continuous world
//! coordinates on the base plane.

use std::f64::consts::TAU;

use nalgebra::Vector3;

fn hash2(ix: i64, iy: i64, seed: u64) -> f64 {
    let mut h = seed ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Lattice value noise in [0, 1].
pub(crate) fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (fade(x - fx), fade(y - fy));
    let a = hash2(ix, iy, seed);
    let b = hash2(ix + 1, iy, seed);
    let c = hash2(ix, iy + 1, seed);
    let d = hash2(ix + 1, iy + 1, seed);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

/// Four octaves of value noise, normalized to [0, 1].
pub(crate) fn fbm(x: f64, y: f64, seed: u64) -> f64 {
    let (mut sum, mut amp, mut freq, mut norm) = (0.0, 1.0, 1.0, 0.0);
    for o in 0..4u64 {
        sum += amp * value_noise(x * freq, y * freq, seed.wrapping_add(o * 0x1000_0001));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}

pub(crate) fn smoothstep(lo: f64, hi: f64, x: f64) -> f64 {
    fade(((x - lo) / (hi - lo)).clamp(0.0, 1.0))
}

/// A resolved texture instance.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Albedo {
    Stripes {
        wavelength: f64,
        angle: f64,
        phase: f64,
        waviness: f64,
        grain: f64,
        colors: [[f64; 3]; 2],
        seed: u64,
    },
    Blobs {
        scale: f64,
        grain: f64,
        colors: [[f64; 3]; 2],
        seed: u64,
    },
}

impl Albedo {
    /// Linear RGB in [0, 1].
    pub(crate) fn eval(&self, x: f64, y: f64) -> [f64; 3] {
        let (m, grain, colors, seed) = match self {
            Albedo::Stripes { wavelength, angle, phase, waviness, grain, colors, seed } => {
                let along = x * angle.cos() + y * angle.sin();
                let wobble = waviness * (fbm(x / (2.0 * wavelength), y / (2.0 * wavelength), *seed) - 0.5);
                let s = 0.5 + 0.5 * (TAU * (along / wavelength + phase + wobble)).sin();
                (smoothstep(0.3, 0.7, s), *grain, colors, *seed)
            }
            Albedo::Blobs { scale, grain, colors, seed } => {
                let v = fbm(x / scale, y / scale, *seed);
                (smoothstep(0.42, 0.58, v), *grain, colors, *seed)
            }
        };
        let g = 1.0 + grain * (value_noise(x / 1.5, y / 1.5, seed ^ 0xA5A5) - 0.5);
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = ((colors[0][c] + (colors[1][c] - colors[0][c]) * m) * g).clamp(0.0, 1.0);
        }
        out
    }
}

/// A resolved height field `z = h(x, y)` with an analytic gradient.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum HeightField {
    Flat,
    /// Sum of sinusoids `a sin(k . p + phase)`.
    Waves(Vec<Wave>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Wave {
    pub amplitude: f64,
    pub k: [f64; 2],
    pub phase: f64,
}

impl HeightField {
    pub(crate) fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        match self {
            HeightField::Flat => [0.0, 0.0],
            HeightField::Waves(waves) => waves.iter().fold([0.0, 0.0], |g, w| {
                let c = w.amplitude * (w.k[0] * x + w.k[1] * y + w.phase).cos();
                [g[0] + c * w.k[0], g[1] + c * w.k[1]]
            }),
        }
    }

    /// World-frame unit normal, facing +z.
    pub(crate) fn normal(&self, x: f64, y: f64) -> Vector3<f64> {
        let [gx, gy] = self.gradient(x, y);
        Vector3::new(-gx, -gy, 1.0).normalize()
    }
}
