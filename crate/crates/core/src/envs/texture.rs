//! Background textures for the sprite arena.

use std::fmt;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use crate::error::{Result, VaiError};
use crate::frame::Frame;

/// A named background. `Grid` is the training texture; the photo-like
/// variants are procedural stand-ins for test-time table cloths.
#[derive(Debug, Clone, PartialEq)]
pub enum Texture {
    Grid,
    Solid([f32; 3]),
    Noise,
    Wood,
    Marble,
    Fabric,
    Blanket,
    Metal,
    Image(PathBuf),
}

pub const BUILTIN_TEXTURES: &[&str] = &[
    "grid", "black", "noise", "wood", "marble", "fabric", "blanket", "metal",
];

impl Texture {
    /// Parses `grid`, `black`, `white`, `solid:r,g,b`, one of the procedural
    /// names, or `image:<path>`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "grid" => Texture::Grid,
            "black" => Texture::Solid([0.0; 3]),
            "white" => Texture::Solid([1.0; 3]),
            "noise" => Texture::Noise,
            "wood" => Texture::Wood,
            "marble" => Texture::Marble,
            "fabric" => Texture::Fabric,
            "blanket" => Texture::Blanket,
            "metal" => Texture::Metal,
            _ => {
                if let Some(rgb) = s.strip_prefix("solid:") {
                    let parts: Vec<f32> = rgb
                        .split(',')
                        .map(|p| p.trim().parse::<f32>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| VaiError::InvalidArgument(format!("bad solid color {s:?}")))?;
                    if parts.len() != 3 || parts.iter().any(|v| !(0.0..=1.0).contains(v)) {
                        return Err(VaiError::InvalidArgument(format!("bad solid color {s:?}")));
                    }
                    Texture::Solid([parts[0], parts[1], parts[2]])
                } else if let Some(path) = s.strip_prefix("image:") {
                    Texture::Image(PathBuf::from(path))
                } else {
                    return Err(VaiError::InvalidArgument(format!("unknown texture {s:?}")));
                }
            }
        })
    }

    /// Renders the texture as an `height×width` RGB frame, quantised to 8 bits.
    pub fn render(&self, height: usize, width: usize) -> Result<Frame> {
        let frame = match self {
            Texture::Grid => {
                let cells = 6.0;
                let line = (width.max(height) as f32 / 42.0).max(1.0);
                procedural(height, width, |px, py, _, _| {
                    let cx = width as f32 / cells;
                    let cy = height as f32 / cells;
                    let on = px % cx < line || py % cy < line;
                    if on {
                        [0.30, 0.36, 0.46]
                    } else {
                        [0.11, 0.17, 0.26]
                    }
                })
            }
            Texture::Solid(c) => Frame::filled(height, width, c),
            Texture::Noise => procedural(height, width, |px, py, _, _| {
                let v = 0.15 + 0.55 * hash2(px as i64, py as i64, 11);
                [v, v * 0.95, v * 0.9]
            }),
            Texture::Wood => procedural(height, width, |_, _, u, v| {
                let n = fbm(u * 3.0, v * 12.0, 3);
                let rings = ((u * 9.0 + n * 4.0) * std::f32::consts::PI).sin() * 0.5 + 0.5;
                let t = 0.6 * rings + 0.4 * fbm(u * 20.0, v * 60.0, 7);
                lerp3([0.36, 0.21, 0.09], [0.62, 0.42, 0.22], t)
            }),
            Texture::Marble => procedural(height, width, |_, _, u, v| {
                let n = fbm(u * 4.0, v * 4.0, 5);
                let vein = ((u * 5.0 + v * 3.0 + n * 6.0) * std::f32::consts::PI).sin().abs();
                let t = vein.powf(0.35);
                lerp3([0.42, 0.44, 0.48], [0.80, 0.81, 0.84], t)
            }),
            Texture::Fabric => procedural(height, width, |px, py, u, v| {
                let weave = if (px as usize / 2 + py as usize / 2) % 2 == 0 { 0.0 } else { 1.0 };
                let t = 0.5 * weave + 0.5 * fbm(u * 16.0, v * 16.0, 13);
                lerp3([0.10, 0.28, 0.30], [0.22, 0.46, 0.44], t)
            }),
            Texture::Blanket => procedural(height, width, |_, _, u, v| {
                let sx = ((u * 7.0).fract() < 0.3) as u8 as f32;
                let sy = ((v * 7.0).fract() < 0.3) as u8 as f32;
                let base = [0.20, 0.24, 0.42];
                let band = [0.18, 0.40, 0.26];
                let cross = [0.62, 0.58, 0.46];
                let c = if sx > 0.0 && sy > 0.0 {
                    cross
                } else if sx > 0.0 || sy > 0.0 {
                    band
                } else {
                    base
                };
                let n = 0.85 + 0.15 * fbm(u * 30.0, v * 30.0, 17);
                [c[0] * n, c[1] * n, c[2] * n]
            }),
            Texture::Metal => procedural(height, width, |_, _, u, v| {
                let streak = fbm(u * 1.5, v * 40.0, 19);
                let t = 0.7 * streak + 0.3 * hash2((u * 200.0) as i64, (v * 200.0) as i64, 23);
                lerp3([0.36, 0.38, 0.40], [0.62, 0.64, 0.66], t)
            }),
            Texture::Image(path) => load_image_texture(path, height, width)?,
        };
        Ok(frame.quantized())
    }
}

impl fmt::Display for Texture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Texture::Grid => write!(f, "grid"),
            Texture::Solid(c) if *c == [0.0; 3] => write!(f, "black"),
            Texture::Solid(c) if *c == [1.0; 3] => write!(f, "white"),
            Texture::Solid(c) => write!(f, "solid:{},{},{}", c[0], c[1], c[2]),
            Texture::Noise => write!(f, "noise"),
            Texture::Wood => write!(f, "wood"),
            Texture::Marble => write!(f, "marble"),
            Texture::Fabric => write!(f, "fabric"),
            Texture::Blanket => write!(f, "blanket"),
            Texture::Metal => write!(f, "metal"),
            Texture::Image(p) => write!(f, "image:{}", p.display()),
        }
    }
}

/// Loads every readable image in `dir` (sorted by file name) as a texture.
pub fn textures_in_dir(dir: &Path) -> Result<Vec<Texture>> {
    let mut paths = image_files(dir)?;
    paths.sort();
    Ok(paths.into_iter().map(Texture::Image).collect())
}

pub(crate) fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| VaiError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| VaiError::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Reads an image file and resizes it to the requested frame size.
pub fn load_image_texture(path: &Path, height: usize, width: usize) -> Result<Frame> {
    let img = image::open(path).map_err(|source| VaiError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = image::imageops::resize(
        &img.to_rgb8(),
        width as u32,
        height as u32,
        image::imageops::FilterType::Triangle,
    );
    Frame::from_u8(height, width, 3, rgb.as_raw())
}

fn procedural(
    height: usize,
    width: usize,
    f: impl Fn(f32, f32, f32, f32) -> [f32; 3],
) -> Frame {
    let mut px = Array3::zeros((height, width, 3));
    for y in 0..height {
        for x in 0..width {
            let u = (x as f32 + 0.5) / width as f32;
            let v = (y as f32 + 0.5) / height as f32;
            let c = f(x as f32, y as f32, u, v);
            for k in 0..3 {
                px[[y, x, k]] = c[k];
            }
        }
    }
    Frame::from_clamped(px)
}

fn lerp3(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    let t = t.clamp(0.0, 1.0);
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn hash2(x: i64, y: i64, salt: u64) -> f32 {
    let mut h = (x as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (y as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
        ^ salt.wrapping_mul(0x1656_67b1_9e37_79f9);
    h ^= h >> 29;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 32;
    (h >> 40) as f32 / (1u64 << 24) as f32
}

fn value_noise(x: f32, y: f32, salt: u64) -> f32 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = hash2(ix, iy, salt);
    let b = hash2(ix + 1, iy, salt);
    let c = hash2(ix, iy + 1, salt);
    let d = hash2(ix + 1, iy + 1, salt);
    let top = a + (b - a) * sx;
    let bottom = c + (d - c) * sx;
    top + (bottom - top) * sy
}

fn fbm(x: f32, y: f32, salt: u64) -> f32 {
    let (mut sum, mut amp, mut freq, mut norm) = (0.0, 0.5, 1.0, 0.0);
    for octave in 0..4 {
        sum += amp * value_noise(x * freq, y * freq, salt + octave);
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}
