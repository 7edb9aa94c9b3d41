//! Weight visualization as PPM/PGM grids.

use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use crate::error::{Error, Result};

/// Kernels drawn for a depthwise grid.
pub const MAX_DEPTHWISE_TILES: usize = 64;
const GAP: usize = 1;
const BACKGROUND: u8 = 255;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VizTarget {
    PatchEmbed,
    /// Depthwise kernels of block `i`.
    Depthwise(usize),
}

impl FromStr for VizTarget {
    type Err = Error;

    /// Accepts `patch_embed`, `blocks.{i}.depthwise` and `depthwise:{i}`.
    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownTarget(s.to_string());
        if s == "patch_embed" {
            return Ok(VizTarget::PatchEmbed);
        }
        let index = s
            .strip_prefix("blocks.")
            .and_then(|r| r.strip_suffix(".depthwise"))
            .or_else(|| s.strip_prefix("depthwise:"))
            .ok_or_else(unknown)?;
        index
            .parse()
            .map(VizTarget::Depthwise)
            .map_err(|_| unknown())
    }
}

/// 8-bit raster, 1 (gray) or 3 (RGB) channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            pixels: vec![BACKGROUND; width * height * channels],
        }
    }

    /// Binary PGM (`P5`) or PPM (`P6`).
    pub fn to_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Reads the output of [`Raster::to_pnm`].
    pub fn from_pnm(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Config("not a binary PGM/PPM file".into());
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad());
            }
            fields.push(
                std::str::from_utf8(&bytes[start..pos])
                    .map_err(|_| bad())?
                    .to_string(),
            );
        }
        let channels = match fields[0].as_str() {
            "P5" => 1,
            "P6" => 3,
            _ => return Err(bad()),
        };
        let width: usize = fields[1].parse().map_err(|_| bad())?;
        let height: usize = fields[2].parse().map_err(|_| bad())?;
        if fields[3] != "255" {
            return Err(bad());
        }
        let pixels = bytes.get(pos + 1..).ok_or_else(bad)?.to_vec();
        if pixels.len() != width * height * channels {
            return Err(bad());
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VizOutput {
    pub raster: Raster,
    pub tiles: usize,
    pub tile_size: usize,
    pub cols: usize,
    pub rows: usize,
    /// Which filters were drawn, in grid order.
    pub indices: Vec<usize>,
}

impl VizOutput {
    /// Top-left pixel of tile `i`.
    pub fn tile_origin(&self, i: usize) -> (usize, usize) {
        let step = self.tile_size + GAP;
        (GAP + (i / self.cols) * step, GAP + (i % self.cols) * step)
    }
}

/// Min-max scales `values` to bytes; a constant tile maps to mid-gray.
fn normalize_tile(values: &[f32]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    values
        .iter()
        .map(|&v| {
            let unit = if range > 0.0 && range.is_finite() {
                (v - lo) / range
            } else {
                0.5
            };
            (unit * 255.0).round() as u8
        })
        .collect()
}

/// Lays out `tiles` tiles of `size`×`size`, as close to square as possible,
/// separated by one-pixel gaps.
fn grid(count: usize, size: usize, channels: usize) -> (Raster, usize, usize) {
    let cols = (count as f64).sqrt().ceil().max(1.0) as usize;
    let rows = count.div_ceil(cols);
    let step = size + GAP;
    (
        Raster::new(GAP + cols * step, GAP + rows * step, channels),
        cols,
        rows,
    )
}

/// Draws the filters named by `target` from a checkpoint. Depthwise kernels
/// are sampled without replacement using `seed`.
pub fn render(ckpt: &Checkpoint, target: VizTarget, seed: u64) -> Result<VizOutput> {
    let name = match target {
        VizTarget::PatchEmbed => "patch_embed.weight".to_string(),
        VizTarget::Depthwise(i) => {
            let depth = ckpt.config.model.depth;
            if i >= depth {
                return Err(Error::UnknownTarget(format!(
                    "block {i} of a depth-{depth} model"
                )));
            }
            format!("blocks.{i}.depthwise.weight")
        }
    };
    let rec = ckpt
        .tensor(&name)
        .ok_or_else(|| Error::UnknownTarget(name.clone()))?;
    let &[out_c, in_c, kh, kw] = rec.dims.as_slice() else {
        return Err(Error::Checkpoint(format!(
            "{name} is not a 4-d conv weight"
        )));
    };
    debug_assert_eq!(kh, kw);
    let plane = kh * kw;
    let per_filter = in_c * plane;
    let (indices, channels) = match target {
        VizTarget::PatchEmbed => (
            (0..out_c).collect::<Vec<_>>(),
            if in_c >= 3 { 3 } else { 1 },
        ),
        VizTarget::Depthwise(_) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked =
                rand::seq::index::sample(&mut rng, out_c, out_c.min(MAX_DEPTHWISE_TILES))
                    .into_vec();
            picked.sort_unstable();
            (picked, 1)
        }
    };
    let (mut raster, cols, rows) = grid(indices.len(), kh, channels);
    let mut out = VizOutput {
        raster: Raster::new(0, 0, channels),
        tiles: indices.len(),
        tile_size: kh,
        cols,
        rows,
        indices: indices.clone(),
    };
    for (slot, &f) in indices.iter().enumerate() {
        let filter = &rec.data[f * per_filter..(f + 1) * per_filter];
        // Pixel-interleaved values for this tile.
        let values: Vec<f32> = if channels == 3 {
            (0..plane)
                .flat_map(|px| (0..3).map(move |c| filter[c * plane + px]))
                .collect()
        } else {
            (0..plane)
                .map(|px| (0..in_c).map(|c| filter[c * plane + px]).sum::<f32>() / in_c as f32)
                .collect()
        };
        let bytes = normalize_tile(&values);
        let (y0, x0) = out.tile_origin(slot);
        for y in 0..kh {
            let dst = ((y0 + y) * raster.width + x0) * channels;
            raster.pixels[dst..dst + kw * channels]
                .copy_from_slice(&bytes[y * kw * channels..(y + 1) * kw * channels]);
        }
    }
    out.raster = raster;
    Ok(out)
}

/// Renders `target` (see [`VizTarget`]) from the checkpoint at `ckpt` into
/// a PPM/PGM file at `out_path`.
pub fn cmd_viz(ckpt: &Checkpoint, target: &str, out_path: impl AsRef<Path>) -> Result<VizOutput> {
    let target: VizTarget = target.parse()?;
    let out = render(ckpt, target, ckpt.config.seed)?;
    let path = out_path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, out.raster.to_pnm())?;
    Ok(out)
}
