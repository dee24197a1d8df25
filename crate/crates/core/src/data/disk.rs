//! On-disk dataset layout:
//!
//! ```text
//! <dir>/manifest.txt            key = value lines
//! <dir>/episode_00000/frame_00000.png
//! <dir>/episode_00000/mask_00000.png   (masked datasets only)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, ImageFormat};

use super::store::{Episode, EpisodeStore, StoreMetadata};
use crate::error::{Result, VaiError};
use crate::frame::{BinaryMask, Frame};

pub const MANIFEST_FILE: &str = "manifest.txt";
const FORMAT: &str = "vai-episode-store";
const VERSION: u32 = 1;

/// Ordered `key = value` lines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut m = Manifest::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| VaiError::format(path, format!("line {}: expected `key = value`", n + 1)))?;
            m.push(k.trim(), v.trim());
        }
        Ok(m)
    }

    fn require<T: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<T> {
        let raw = self
            .get(key)
            .ok_or_else(|| VaiError::format(path, format!("missing key `{key}`")))?;
        raw.parse()
            .map_err(|_| VaiError::format(path, format!("bad value for `{key}`: {raw:?}")))
    }
}

pub(crate) fn episode_dir(root: &Path, episode: usize) -> PathBuf {
    root.join(format!("episode_{episode:05}"))
}

pub(crate) fn frame_path(root: &Path, episode: usize, frame: usize) -> PathBuf {
    episode_dir(root, episode).join(format!("frame_{frame:05}.png"))
}

pub(crate) fn mask_path(root: &Path, episode: usize, frame: usize) -> PathBuf {
    episode_dir(root, episode).join(format!("mask_{frame:05}.png"))
}

pub(crate) fn store_manifest(store: &EpisodeStore) -> Manifest {
    let (h, w, c) = store.frame_shape();
    let md = store.metadata();
    let mut m = Manifest::default();
    m.push("format", FORMAT);
    m.push("version", VERSION);
    m.push("env_id", &md.env_id);
    m.push("texture_id", &md.texture_id);
    m.push("seed", md.seed);
    m.push("height", h);
    m.push("width", w);
    m.push("channels", c);
    m.push("episodes", store.num_episodes());
    for (e, ep) in store.episodes().iter().enumerate() {
        m.push(format!("episode.{e}.start_step"), ep.start_step());
        m.push(format!("episode.{e}.frames"), ep.len());
    }
    m
}

pub(crate) fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.render()).map_err(|e| VaiError::io(path, e))
}

/// Writes frames as 8-bit PNG files plus the manifest.
///
/// Frames are quantised to multiples of 1/255; frames produced by the
/// environments already are, so for them the round trip is bit-exact.
pub fn save_store(store: &EpisodeStore, dir: &Path) -> Result<()> {
    write_frames(store, dir)?;
    write_manifest(dir, &store_manifest(store))
}

pub(crate) fn write_frames(store: &EpisodeStore, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| VaiError::io(dir, e))?;
    for (e, ep) in store.episodes().iter().enumerate() {
        let edir = episode_dir(dir, e);
        fs::create_dir_all(&edir).map_err(|err| VaiError::io(&edir, err))?;
        for (i, f) in ep.frames().iter().enumerate() {
            write_frame_png(&frame_path(dir, e, i), f)?;
        }
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| VaiError::io(&path, e))?;
    let m = Manifest::parse(&text, &path)?;
    match m.get("format") {
        Some(FORMAT) => {}
        other => {
            return Err(VaiError::format(
                &path,
                format!("expected format `{FORMAT}`, found {other:?}"),
            ))
        }
    }
    let version: u32 = m.require("version", &path)?;
    if version != VERSION {
        return Err(VaiError::format(&path, format!("unsupported version {version}")));
    }
    Ok(m)
}

pub fn load_store(dir: &Path) -> Result<EpisodeStore> {
    let m = read_manifest(dir)?;
    let path = dir.join(MANIFEST_FILE);
    let h: usize = m.require("height", &path)?;
    let w: usize = m.require("width", &path)?;
    let c: usize = m.require("channels", &path)?;
    let n: usize = m.require("episodes", &path)?;
    let mut episodes = Vec::with_capacity(n);
    for e in 0..n {
        let start: usize = m.require(&format!("episode.{e}.start_step"), &path)?;
        let len: usize = m.require(&format!("episode.{e}.frames"), &path)?;
        let frames = (0..len)
            .map(|i| read_frame_png(&frame_path(dir, e, i), (h, w, c)))
            .collect::<Result<Vec<_>>>()?;
        episodes.push(Episode::new(start, frames).map_err(|_| {
            VaiError::format(&path, format!("episode {e} has no frames"))
        })?);
    }
    EpisodeStore::new(
        StoreMetadata {
            env_id: m.require("env_id", &path)?,
            texture_id: m.require("texture_id", &path)?,
            seed: m.require("seed", &path)?,
        },
        episodes,
    )
}

fn color_type(channels: usize) -> Option<ColorType> {
    match channels {
        1 => Some(ColorType::L8),
        2 => Some(ColorType::La8),
        3 => Some(ColorType::Rgb8),
        4 => Some(ColorType::Rgba8),
        _ => None,
    }
}

pub(crate) fn write_png(path: &Path, bytes: &[u8], width: usize, height: usize, channels: usize) -> Result<()> {
    let ct = color_type(channels)
        .ok_or_else(|| VaiError::format(path, format!("cannot store {channels} channels as PNG")))?;
    image::save_buffer_with_format(path, bytes, width as u32, height as u32, ct, ImageFormat::Png)
        .map_err(|source| VaiError::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub(crate) fn write_frame_png(path: &Path, frame: &Frame) -> Result<()> {
    let (h, w, c) = frame.shape();
    write_png(path, &frame.to_u8(), w, h, c)
}

pub(crate) fn read_frame_png(path: &Path, shape: (usize, usize, usize)) -> Result<Frame> {
    let (h, w, c) = shape;
    let img = image::open(path).map_err(|source| VaiError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    if (img.height() as usize, img.width() as usize) != (h, w) {
        return Err(VaiError::format(
            path,
            format!("expected {w}x{h} image, found {}x{}", img.width(), img.height()),
        ));
    }
    let bytes = match c {
        1 => img.to_luma8().into_raw(),
        2 => img.to_luma_alpha8().into_raw(),
        3 => img.to_rgb8().into_raw(),
        4 => img.to_rgba8().into_raw(),
        _ => return Err(VaiError::format(path, format!("unsupported channel count {c}"))),
    };
    Frame::from_u8(h, w, c, &bytes)
}

pub(crate) fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    let bytes: Vec<u8> = mask.values().iter().map(|&v| v * 255).collect();
    write_png(path, &bytes, mask.width(), mask.height(), 1)
}

pub(crate) fn read_mask_png(path: &Path, height: usize, width: usize) -> Result<BinaryMask> {
    let f = read_frame_png(path, (height, width, 1))?;
    let values = f.pixels().index_axis(ndarray::Axis(2), 0).mapv(|v| {
        if v >= 0.5 {
            1u8
        } else {
            0u8
        }
    });
    BinaryMask::new(values)
}
