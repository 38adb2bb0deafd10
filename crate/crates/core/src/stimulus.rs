//! Textured stimuli: PNG directories and procedural dead-leaves images.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// RGB image with values in `[0, 1]`, row-major, 3 channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Texture {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Texture {
    pub fn from_rgb(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "texture {width}x{height} with {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("texture".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn uniform(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Separable Gaussian blur with edge clamping; `sigma` in texels.
    pub fn gaussian_blur(&self, sigma: f64) -> Texture {
        if !(sigma > 0.0) {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let kernel: Vec<f32> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32).collect();
        let norm: f32 = kernel.iter().sum();
        let kernel: Vec<f32> = kernel.iter().map(|k| k / norm).collect();
        let (w, h) = (self.width as isize, self.height as isize);
        let pass = |src: &[f32], horizontal: bool| {
            let mut out = vec![0.0f32; src.len()];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = [0.0f32; 3];
                    for (k, &kv) in kernel.iter().enumerate() {
                        let o = k as isize - radius;
                        let (sx, sy) = if horizontal { ((x + o).clamp(0, w - 1), y) } else { (x, (y + o).clamp(0, h - 1)) };
                        let i = 3 * (sy * w + sx) as usize;
                        acc.iter_mut().zip(&src[i..i + 3]).for_each(|(a, &v)| *a += kv * v);
                    }
                    let i = 3 * (y * w + x) as usize;
                    out[i..i + 3].copy_from_slice(&acc);
                }
            }
            out
        };
        let data = pass(&pass(&self.data, true), false);
        Texture {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Bilinear sample at continuous texel coordinates (texel centers at
    /// integer positions), clamped to the edge.
    pub fn sample(&self, x: f64, y: f64) -> [f32; 3] {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = ((x - x0) as f32, (y - y0) as f32);
        let (x0, y0) = (x0 as usize, y0 as usize);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (a, b, c, d) = (self.pixel(x0, y0), self.pixel(x1, y0), self.pixel(x0, y1), self.pixel(x1, y1));
        std::array::from_fn(|k| {
            let top = a[k] + (b[k] - a[k]) * fx;
            let bottom = c[k] + (d[k] - c[k]) * fx;
            top + (bottom - top) * fy
        })
    }
}

/// Immutable collection of stimuli shown on the screen.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StimulusSet {
    textures: Vec<Texture>,
    names: Vec<String>,
}

impl StimulusSet {
    pub fn new(textures: Vec<Texture>, names: Vec<String>) -> Result<Self> {
        if textures.is_empty() {
            return Err(Error::EmptyStimulusSet);
        }
        if textures.len() != names.len() {
            return Err(Error::InvalidArgument("one name per texture".into()));
        }
        Ok(Self { textures, names })
    }

    pub fn len(&self) -> usize {
        self.textures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.textures.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Texture> {
        self.textures.get(id)
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    /// Applies `f` to every texture, keeping names.
    pub fn map(&self, f: impl Fn(&Texture) -> Texture) -> Self {
        Self {
            textures: self.textures.iter().map(f).collect(),
            names: self.names.clone(),
        }
    }

    /// `count` dead-leaves textures, seeded `seed, seed+1, ...`.
    pub fn procedural(count: usize, seed: u64, size: usize) -> Result<Self> {
        let textures = (0..count as u64)
            .map(|i| procedural_texture(seed.wrapping_add(i), size))
            .collect::<Result<Vec<_>>>()?;
        let names = (0..count as u64).map(|i| format!("procedural-{}", seed.wrapping_add(i))).collect();
        Self::new(textures, names)
    }

    /// Parses `procedural:<count>:<seed>` or treats the argument as a directory.
    pub fn from_spec(spec: &str, texture_size: usize) -> Result<Self> {
        match parse_procedural_spec(spec)? {
            Some((count, seed)) => Self::procedural(count, seed, texture_size),
            None => load_image_dir(Path::new(spec)),
        }
    }
}

/// `Some((count, seed))` for `procedural:<count>:<seed>`, `None` for anything
/// that does not start with `procedural:`.
pub fn parse_procedural_spec(spec: &str) -> Result<Option<(usize, u64)>> {
    let Some(rest) = spec.strip_prefix("procedural:") else {
        return Ok(None);
    };
    let bad = || Error::InvalidArgument(format!("expected procedural:<count>:<seed>, got `{spec}`"));
    let (count, seed) = rest.split_once(':').ok_or_else(bad)?;
    let count: usize = count.parse().map_err(|_| bad())?;
    let seed: u64 = seed.parse().map_err(|_| bad())?;
    if count == 0 {
        return Err(Error::EmptyStimulusSet);
    }
    Ok(Some((count, seed)))
}

/// Loads every decodable PNG in `path` (alphabetical order), scaled to `[0, 1]`.
/// Undecodable files are skipped with a warning.
pub fn load_image_dir(path: &Path) -> Result<StimulusSet> {
    let mut files: Vec<_> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    let mut textures = Vec::new();
    let mut names = Vec::new();
    for file in files {
        match image::open(&file) {
            Ok(img) => {
                let rgb = img.to_rgb32f();
                let (w, h) = rgb.dimensions();
                textures.push(Texture::from_rgb(w as usize, h as usize, rgb.into_raw())?);
                names.push(
                    file.file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                );
            }
            Err(e) => log::warn!("skipping {}: {e}", file.display()),
        }
    }
    if textures.is_empty() {
        return Err(Error::NoImages(path.to_path_buf()));
    }
    StimulusSet::new(textures, names)
}

const LEAF_MIN_RADIUS: f64 = 1.5;
const LEAF_MAX_FRACTION: f64 = 0.25;
const MAX_LEAVES: usize = 50_000;

/// Dead-leaves texture: occluding discs with power-law radii (`p(r) ∝ r⁻³`)
/// and random colors, painted front to back until the canvas is covered.
pub fn procedural_texture(seed: u64, size: usize) -> Result<Texture> {
    if size < 256 {
        return Err(Error::InvalidArgument(format!("texture size {size} < 256")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size * size;
    let mut data = vec![0.0f32; 3 * n];
    let mut covered = vec![false; n];
    let mut remaining = n;

    let r_min = LEAF_MIN_RADIUS;
    let r_max = LEAF_MAX_FRACTION * size as f64;
    let (a, b) = (r_min.powi(-2), r_max.powi(-2));
    let span = size as f64 + 2.0 * r_max;

    for _ in 0..MAX_LEAVES {
        if remaining == 0 {
            break;
        }
        let u: f64 = rng.gen();
        let r = (a - u * (a - b)).powf(-0.5);
        let cx = rng.gen::<f64>() * span - r_max;
        let cy = rng.gen::<f64>() * span - r_max;
        let lum: f32 = rng.gen_range(0.05..0.95);
        let color: [f32; 3] = std::array::from_fn(|_| (lum + rng.gen_range(-0.15f32..0.15)).clamp(0.0, 1.0));

        let x0 = (cx - r).floor().max(0.0) as usize;
        let y0 = (cy - r).floor().max(0.0) as usize;
        let x1 = ((cx + r).ceil().max(0.0) as usize).min(size);
        let y1 = ((cy + r).ceil().max(0.0) as usize).min(size);
        for y in y0..y1 {
            let dy = y as f64 + 0.5 - cy;
            for x in x0..x1 {
                let dx = x as f64 + 0.5 - cx;
                let i = y * size + x;
                if !covered[i] && dx * dx + dy * dy <= r * r {
                    covered[i] = true;
                    data[3 * i..3 * i + 3].copy_from_slice(&color);
                    remaining -= 1;
                }
            }
        }
    }
    if remaining > 0 {
        for (i, _) in covered.iter().enumerate().filter(|(_, c)| !**c) {
            data[3 * i..3 * i + 3].copy_from_slice(&[0.5; 3]);
        }
    }
    Texture::from_rgb(size, size, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn procedural_is_seed_deterministic() {
        assert_eq!(procedural_texture(3, 256).unwrap(), procedural_texture(3, 256).unwrap());
    }

    #[test]
    fn procedural_seeds_differ() {
        let a = procedural_texture(1, 256).unwrap();
        let b = procedural_texture(2, 256).unwrap();
        let mad: f32 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f32>()
            / a.data().len() as f32;
        assert!(mad > 0.05, "mean abs diff {mad}");
    }

    #[test]
    fn procedural_values_in_unit_range() {
        let t = procedural_texture(9, 300).unwrap();
        assert_eq!((t.width(), t.height()), (300, 300));
        assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(procedural_texture(0, 255).is_err());
    }

    #[test]
    fn bilinear_midpoint() {
        let t = Texture::from_rgb(2, 1, vec![0.0, 0.0, 0.0, 1.0, 0.5, 0.25]).unwrap();
        assert_eq!(t.sample(0.5, 0.0), [0.5, 0.25, 0.125]);
        assert_eq!(t.sample(-3.0, 0.0), [0.0; 3]);
    }

    #[test]
    fn procedural_spec_parsing() {
        assert_eq!(parse_procedural_spec("procedural:20:7").unwrap(), Some((20, 7)));
        assert_eq!(parse_procedural_spec("some/dir").unwrap(), None);
        assert!(parse_procedural_spec("procedural:x:1").is_err());
        assert!(parse_procedural_spec("procedural:3").is_err());
        assert!(matches!(parse_procedural_spec("procedural:0:1"), Err(Error::EmptyStimulusSet)));
    }
}
