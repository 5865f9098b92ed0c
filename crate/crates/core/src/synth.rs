//! Synthetic cross/4D light fields with exact ground-truth disparity.
//!
//! Scenes are stacks of fronto-parallel textured layers ordered back to
//! front (larger disparity = nearer). A view at camera offset `(u, v)` sees
//! the scene point with center-view coordinates `(x + u*d, y + v*d)`, so a
//! plane at integer disparity `d` is reproduced pixel-identically across
//! views after an EPI shift of `s = d`. Textures are procedural lattice
//! functions on all of Z^2, sampled bilinearly at fractional positions, so
//! views never run out of content at their borders.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lightfield::{DisparityMap, LightField4D, Mask, View};

/// Procedural texture families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextureKind {
    /// Grid of hashed per-cell colors.
    Checker,
    /// Multi-octave value noise.
    Noise,
    /// Sawtooth ramp.
    Gradient,
}

impl TextureKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "checker" => Ok(Self::Checker),
            "noise" => Ok(Self::Noise),
            "gradient" => Ok(Self::Gradient),
            other => Err(Error::SceneSpec(format!("unknown texture kind {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Checker => "checker",
            Self::Noise => "noise",
            Self::Gradient => "gradient",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureSpec {
    pub kind: TextureKind,
    /// Feature size in pixels (cell size, base noise wavelength, ramp period).
    pub period: u32,
    pub seed: u64,
}

impl TextureSpec {
    /// Texture value at an integer lattice position.
    fn lattice(&self, ix: i64, iy: i64, ch: usize) -> f32 {
        match self.kind {
            TextureKind::Checker => {
                let p = self.period.max(1) as i64;
                let (cx, cy) = (ix.div_euclid(p), iy.div_euclid(p));
                hash_unit(self.seed, cx, cy, ch as u64)
            }
            TextureKind::Noise => {
                // Three octaves of value noise with smoothstep interpolation.
                let mut value = 0.0f64;
                let mut amplitude = 1.0f64;
                let mut total = 0.0f64;
                let mut period = self.period.max(2) as f64;
                for octave in 0..3 {
                    value += amplitude * value_noise(self.seed ^ (octave as u64) << 32, ix as f64 / period, iy as f64 / period, ch);
                    total += amplitude;
                    amplitude *= 0.5;
                    period = (period * 0.5).max(1.0);
                }
                (value / total) as f32
            }
            TextureKind::Gradient => {
                let p = self.period.max(2) as f64;
                let phase = hash_unit(self.seed, 0, 0, ch as u64) as f64;
                let t = (ix as f64 + 0.37 * iy as f64) / p + phase;
                (t - t.floor()) as f32
            }
        }
    }

    /// Bilinear sample at a continuous position; exact lattice read at
    /// integer positions.
    pub fn sample(&self, fx: f64, fy: f64, ch: usize) -> f32 {
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = fx - x0;
        let ty = fy - y0;
        let (ix, iy) = (x0 as i64, y0 as i64);
        if tx == 0.0 && ty == 0.0 {
            return self.lattice(ix, iy, ch);
        }
        let v00 = self.lattice(ix, iy, ch) as f64;
        let v10 = self.lattice(ix + 1, iy, ch) as f64;
        let v01 = self.lattice(ix, iy + 1, ch) as f64;
        let v11 = self.lattice(ix + 1, iy + 1, ch) as f64;
        let top = v00 * (1.0 - tx) + v10 * tx;
        let bot = v01 * (1.0 - tx) + v11 * tx;
        (top * (1.0 - ty) + bot * ty) as f32
    }
}

/// Axis-aligned box in center-view pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x0: i64,
    pub y0: i64,
    pub w: i64,
    pub h: i64,
}

impl Region {
    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64
            && x < (self.x0 + self.w) as f64
            && y >= self.y0 as f64
            && y < (self.y0 + self.h) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layer {
    pub disparity: f32,
    pub texture: TextureSpec,
    /// `None` covers the full frame.
    pub region: Option<Region>,
}

impl Layer {
    fn covers(&self, x: f64, y: f64) -> bool {
        self.region.map_or(true, |r| r.contains(x, y))
    }
}

/// A renderable scene description.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub nu: usize,
    pub nv: usize,
    /// Back-to-front: strictly increasing disparity.
    pub layers: Vec<Layer>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::SceneSpec("scene has no layers".into()));
        }
        if self.layers[0].region.is_some() {
            return Err(Error::SceneSpec("the back layer must cover the full frame".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[1].disparity <= pair[0].disparity {
                return Err(Error::SceneSpec(
                    "layers must be ordered back-to-front with strictly increasing disparity"
                        .into(),
                ));
            }
        }
        if self.nu < 3 || self.nv < 3 || self.nu % 2 == 0 || self.nv % 2 == 0 {
            return Err(Error::SceneSpec(format!(
                "grid must be odd and >= 3 in both directions, got {}x{}",
                self.nv, self.nu
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::SceneSpec("empty image".into()));
        }
        Ok(())
    }

    pub fn disparity_bounds(&self) -> (f32, f32) {
        let ds: Vec<f32> = self.layers.iter().map(|l| l.disparity).collect();
        (
            ds.iter().copied().fold(f32::INFINITY, f32::min),
            ds.iter().copied().fold(f32::NEG_INFINITY, f32::max),
        )
    }

    /// Renders the full view grid and the center-view ground truth.
    ///
    /// The ground-truth validity mask excludes a border band of width
    /// `ceil(max |d|) * max camera offset` on each side, mirroring the pixels
    /// an EPI shift over the scene's range could pad.
    pub fn render(&self) -> Result<(LightField4D, DisparityMap)> {
        self.validate()?;
        let (h, w) = (self.height, self.width);
        let half_u = (self.nu / 2) as i64;
        let half_v = (self.nv / 2) as i64;

        let offsets: Vec<(i64, i64)> = (0..self.nv as i64)
            .flat_map(|v| (0..self.nu as i64).map(move |u| (v - half_v, u - half_u)))
            .collect();
        let views: Vec<View> = offsets
            .par_iter()
            .map(|&(dv, du)| self.render_view(du, dv))
            .collect();

        let mut gt = Array2::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                gt[(y, x)] = self.front_layer(x as f64, y as f64).disparity;
            }
        }
        let (dmin, dmax) = self.disparity_bounds();
        let max_abs = dmin.abs().max(dmax.abs());
        let band = max_abs.ceil() as i64;
        let bx = (band * half_u).max(0) as usize;
        let by = (band * half_v).max(0) as usize;
        let valid = Mask::from_shape_fn((h, w), |(y, x)| {
            x >= bx && x + bx < w && y >= by && y + by < h
        });

        let lf = LightField4D::new(views, self.nu, self.nv, dmin, dmax)
            .map_err(|e| Error::SceneSpec(e.to_string()))?;
        let gt = DisparityMap::new(gt, valid).map_err(|e| Error::SceneSpec(e.to_string()))?;
        Ok((lf, gt))
    }

    fn render_view(&self, du: i64, dv: i64) -> View {
        let (h, w) = (self.height, self.width);
        View::from_shape_fn((3, h, w), |(c, y, x)| {
            // Front-most layer covering this pixel's scene point wins.
            for layer in self.layers.iter().rev() {
                let d = layer.disparity as f64;
                let tx = x as f64 + du as f64 * d;
                let ty = y as f64 + dv as f64 * d;
                if layer.covers(tx, ty) {
                    return layer.texture.sample(tx, ty, c);
                }
            }
            unreachable!("back layer covers the full frame");
        })
    }

    fn front_layer(&self, x: f64, y: f64) -> &Layer {
        self.layers
            .iter()
            .rev()
            .find(|l| l.covers(x, y))
            .expect("back layer covers the full frame")
    }

    /// Parses the declarative scene text: global `key=value` lines followed
    /// by one `[layer]` section per layer.
    pub fn parse(text: &str) -> Result<Self> {
        let mut width = None;
        let mut height = None;
        let mut nu = None;
        let mut nv = None;
        let mut layers: Vec<LayerBuilder> = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |msg: String| Error::SceneSpec(format!("line {}: {msg}", lineno + 1));
            if line == "[layer]" {
                layers.push(LayerBuilder::default());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            macro_rules! parsed {
                () => {
                    value.parse().map_err(|_| at(format!("malformed value for {key}")))?
                };
            }
            if let Some(layer) = layers.last_mut() {
                match key {
                    "disparity" => layer.disparity = Some(parsed!()),
                    "texture" => layer.kind = Some(TextureKind::parse(value)?),
                    "period" => layer.period = Some(parsed!()),
                    "seed" => layer.seed = Some(parsed!()),
                    "region" => {
                        let parts: Vec<i64> = value
                            .split(',')
                            .map(|p| p.trim().parse())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| at(format!("malformed value for {key}")))?;
                        if parts.len() != 4 || parts[2] <= 0 || parts[3] <= 0 {
                            return Err(at("region must be x,y,w,h with positive size".into()));
                        }
                        layer.region =
                            Some(Region { x0: parts[0], y0: parts[1], w: parts[2], h: parts[3] });
                    }
                    _ => return Err(at(format!("unknown layer key {key:?}"))),
                }
            } else {
                match key {
                    "width" => width = Some(parsed!()),
                    "height" => height = Some(parsed!()),
                    "nu" => nu = Some(parsed!()),
                    "nv" => nv = Some(parsed!()),
                    _ => return Err(at(format!("unknown scene key {key:?}"))),
                }
            }
        }

        let missing = |k: &str| Error::SceneSpec(format!("missing key {k}"));
        let spec = SceneSpec {
            width: width.ok_or_else(|| missing("width"))?,
            height: height.ok_or_else(|| missing("height"))?,
            nu: nu.ok_or_else(|| missing("nu"))?,
            nv: nv.ok_or_else(|| missing("nv"))?,
            layers: layers
                .into_iter()
                .enumerate()
                .map(|(i, b)| b.build(i))
                .collect::<Result<_>>()?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        writeln!(s, "width={}", self.width).unwrap();
        writeln!(s, "height={}", self.height).unwrap();
        writeln!(s, "nu={}", self.nu).unwrap();
        writeln!(s, "nv={}", self.nv).unwrap();
        for layer in &self.layers {
            writeln!(s, "\n[layer]").unwrap();
            writeln!(s, "disparity={}", layer.disparity).unwrap();
            writeln!(s, "texture={}", layer.texture.kind.name()).unwrap();
            writeln!(s, "period={}", layer.texture.period).unwrap();
            writeln!(s, "seed={}", layer.texture.seed).unwrap();
            if let Some(r) = layer.region {
                writeln!(s, "region={},{},{},{}", r.x0, r.y0, r.w, r.h).unwrap();
            }
        }
        s
    }
}

#[derive(Default)]
struct LayerBuilder {
    disparity: Option<f32>,
    kind: Option<TextureKind>,
    period: Option<u32>,
    seed: Option<u64>,
    region: Option<Region>,
}

impl LayerBuilder {
    fn build(self, index: usize) -> Result<Layer> {
        let missing =
            |k: &str| Error::SceneSpec(format!("layer {}: missing key {k}", index + 1));
        Ok(Layer {
            disparity: self.disparity.ok_or_else(|| missing("disparity"))?,
            texture: TextureSpec {
                kind: self.kind.ok_or_else(|| missing("texture"))?,
                period: self.period.unwrap_or(8),
                seed: self.seed.unwrap_or(0),
            },
            region: self.region,
        })
    }
}

/// splitmix64-style hash of a seed and three coordinates, mapped to [0, 1).
fn hash_unit(seed: u64, a: i64, b: i64, c: u64) -> f32 {
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((a as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add((b as u64).wrapping_mul(0x94D0_49BB_1331_11EB))
        .wrapping_add(c.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 40) as f32 / (1u64 << 24) as f32
}

/// One octave of value noise: hashed lattice values blended with a quintic
/// smoothstep.
fn value_noise(seed: u64, x: f64, y: f64, ch: usize) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let (ix, iy) = (x0 as i64, y0 as i64);
    let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
    let tx = fade(x - x0);
    let ty = fade(y - y0);
    let g = |dx: i64, dy: i64| hash_unit(seed, ix + dx, iy + dy, ch as u64) as f64;
    let top = g(0, 0) * (1.0 - tx) + g(1, 0) * tx;
    let bot = g(0, 1) * (1.0 - tx) + g(1, 1) * tx;
    top * (1.0 - ty) + bot * ty
}

/// Convenience: a single full-frame plane.
pub fn plane_scene(
    width: usize,
    height: usize,
    nu: usize,
    nv: usize,
    disparity: f32,
    texture: TextureSpec,
) -> SceneSpec {
    SceneSpec {
        width,
        height,
        nu,
        nv,
        layers: vec![Layer { disparity, texture, region: None }],
    }
}
