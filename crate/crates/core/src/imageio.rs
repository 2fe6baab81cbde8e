//! Linear images, validity masks and the dataset manifest.
//!
//! Images are decoded from 8/16-bit PNG or TIFF into camera-linear `f64`
//! samples after black-level subtraction. A dataset is described by a CSV
//! manifest with header `image,er,eg,eb,polygons`; the polygons column lists
//! exclusion polygons separated by `|`, vertices by `;` and coordinates as
//! `x:y` in pixel units with the origin at the top-left pixel center.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Rgb};

use crate::error::{Error, Result};
use crate::map::ScalarMap;

/// Smallest side accepted by [`load_image`]; σ=5 filtering needs a 16 pixel support.
pub const MIN_SIDE: usize = 16;

/// Default validity thresholds, as fractions of the white level.
pub const DEFAULT_DARK_FRAC: f64 = 0.02;
pub const DEFAULT_SAT_FRAC: f64 = 0.98;

pub const MANIFEST_HEADER: &str = "image,er,eg,eb,polygons";

/// Camera-linear RGB radiance in `[0, white_level]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
    white_level: f64,
}

impl LinearImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>, white_level: f64) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::Structural(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if !(white_level.is_finite() && white_level > 0.0) {
            return Err(Error::Input(format!("white level {white_level} must be positive")));
        }
        if pixels.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Input("pixel values must be finite and non-negative".into()));
        }
        Ok(Self {
            width,
            height,
            pixels,
            white_level,
        })
    }

    /// Build an image from a per-pixel closure. Panics on negative or non-finite values.
    pub fn from_fn(
        width: usize,
        height: usize,
        white_level: f64,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels, white_level).expect("invalid pixel values")
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn white_level(&self) -> f64 {
        self.white_level
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn channel(&self, c: usize) -> ScalarMap {
        ScalarMap::new(
            self.width,
            self.height,
            self.pixels.iter().map(|p| p[c]).collect(),
        )
        .expect("dimensions agree")
    }

    /// Per-channel gains, i.e. `diag(gains) * I`. The white level is unchanged.
    pub fn scaled(&self, gains: [f64; 3]) -> LinearImage {
        LinearImage {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .map(|p| [p[0] * gains[0], p[1] * gains[1], p[2] * gains[2]])
                .collect(),
            white_level: self.white_level,
        }
    }

    pub fn with_white_level(mut self, white_level: f64) -> LinearImage {
        assert!(white_level > 0.0);
        self.white_level = white_level;
        self
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> LinearImage {
        assert!(x0 + w <= self.width && y0 + h <= self.height && w > 0 && h > 0);
        LinearImage::from_fn(w, h, self.white_level, |x, y| self.pixel(x0 + x, y0 + y))
    }

    pub fn flip_horizontal(&self) -> LinearImage {
        LinearImage::from_fn(self.width, self.height, self.white_level, |x, y| {
            self.pixel(self.width - 1 - x, y)
        })
    }

    /// Bilinear resampling with pixel-center alignment.
    pub fn resize_bilinear(&self, w: usize, h: usize) -> LinearImage {
        let sx = self.width as f64 / w as f64;
        let sy = self.height as f64 / h as f64;
        LinearImage::from_fn(w, h, self.white_level, |x, y| {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
            let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
            let (a, b) = (self.pixel(x0, y0), self.pixel(x1, y0));
            let (c, d) = (self.pixel(x0, y1), self.pixel(x1, y1));
            let mut out = [0.0; 3];
            for i in 0..3 {
                let top = a[i] + (b[i] - a[i]) * tx;
                let bottom = c[i] + (d[i] - c[i]) * tx;
                out[i] = top + (bottom - top) * ty;
            }
            out
        })
    }

    /// Every channel divided by its mean over `mask` (all pixels when `None`), white level 1.
    /// Channels without a positive mean are left as they are.
    ///
    /// Global per-channel gains cancel here, so maps computed from the result do
    /// not depend on them even where a method mixes channels before the log.
    pub fn gain_normalized(&self, mask: Option<&Mask>) -> LinearImage {
        let means = self.channel_means(mask);
        self.scaled(means.map(|m| if m > 0.0 { 1.0 / m } else { 1.0 }))
            .with_white_level(1.0)
    }

    /// Per-channel means over the pixels where `mask` is valid (all pixels if none are).
    pub fn channel_means(&self, mask: Option<&Mask>) -> [f64; 3] {
        let mut sum = [0.0; 3];
        let mut n = 0usize;
        for (i, p) in self.pixels.iter().enumerate() {
            if mask.is_none_or(|m| m.valid[i]) {
                for c in 0..3 {
                    sum[c] += p[c];
                }
                n += 1;
            }
        }
        if n == 0 {
            return self.channel_means(None);
        }
        sum.map(|s| s / n as f64)
    }
}

/// Per-pixel validity flags for an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub valid: Vec<bool>,
}

impl Mask {
    pub fn all(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            valid: vec![true; width * height],
        }
    }

    pub fn for_image(img: &LinearImage) -> Self {
        Self::all(img.width(), img.height())
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn matches(&self, img: &LinearImage) -> bool {
        self.width == img.width() && self.height == img.height()
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Mask {
        let mut valid = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                valid.push(self.get(x0 + x, y0 + y));
            }
        }
        Mask { width: w, height: h, valid }
    }

    /// Nearest-neighbour resampling with pixel-center alignment.
    pub fn resize_nearest(&self, w: usize, h: usize) -> Mask {
        let mut valid = Vec::with_capacity(w * h);
        for y in 0..h {
            let sy = (((y as f64 + 0.5) * self.height as f64 / h as f64) as usize).min(self.height - 1);
            for x in 0..w {
                let sx = (((x as f64 + 0.5) * self.width as f64 / w as f64) as usize).min(self.width - 1);
                valid.push(self.get(sx, sy));
            }
        }
        Mask { width: w, height: h, valid }
    }

    pub fn flip_horizontal(&self) -> Mask {
        let mut valid = Vec::with_capacity(self.valid.len());
        for y in 0..self.height {
            for x in 0..self.width {
                valid.push(self.get(self.width - 1 - x, y));
            }
        }
        Mask { width: self.width, height: self.height, valid }
    }
}

/// Unit-L2 RGB illuminant direction with strictly positive components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Illuminant([f64; 3]);

impl Illuminant {
    pub fn new(rgb: [f64; 3]) -> Result<Self> {
        if rgb.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Input(format!(
                "illuminant components must be positive, got {rgb:?}"
            )));
        }
        let norm = rgb.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Self(rgb.map(|v| v / norm)))
    }

    #[inline]
    pub fn rgb(&self) -> [f64; 3] {
        self.0
    }

    /// Componentwise product with `gains`, renormalized.
    pub fn scaled(&self, gains: [f64; 3]) -> Result<Self> {
        Self::new([self.0[0] * gains[0], self.0[1] * gains[1], self.0[2] * gains[2]])
    }
}

/// Closed polygon in pixel coordinates (`[x, y]` vertices).
pub type Polygon = Vec<[f64; 2]>;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    /// Path as written in the manifest, relative to the manifest directory unless absolute.
    pub image_path: String,
    pub gt: Illuminant,
    pub polygons: Vec<Polygon>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// Directory relative image paths are resolved against.
    pub root: PathBuf,
    pub entries: Vec<DatasetEntry>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, entry: &DatasetEntry) -> PathBuf {
        self.root.join(&entry.image_path)
    }

    /// Dataset restricted to `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            root: self.root.clone(),
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
        }
    }
}

/// Decode a PNG or TIFF and subtract `black_level` from every sample.
pub fn load_image(path: impl AsRef<Path>, black_level: f64) -> Result<LinearImage> {
    let path = path.as_ref();
    if !(black_level.is_finite() && black_level >= 0.0) {
        return Err(Error::Input(format!("black level {black_level} must be >= 0")));
    }
    let decode_err = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let decoded = image::ImageReader::open(path)
        .map_err(|e| decode_err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| decode_err(e.to_string()))?
        .decode()
        .map_err(|e| decode_err(e.to_string()))?;

    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    if width < MIN_SIDE || height < MIN_SIDE {
        return Err(Error::Dimension {
            width,
            height,
            min: MIN_SIDE,
        });
    }
    let (max_code, samples): (f64, Vec<f64>) = match decoded {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => (
            255.0,
            decoded.to_rgb8().into_raw().into_iter().map(f64::from).collect(),
        ),
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => (
            65535.0,
            decoded.to_rgb16().into_raw().into_iter().map(f64::from).collect(),
        ),
        other => {
            return Err(decode_err(format!(
                "unsupported sample format {:?}",
                other.color()
            )))
        }
    };
    let white_level = max_code - black_level;
    if white_level <= 0.0 {
        return Err(Error::Input(format!(
            "black level {black_level} leaves no signal range"
        )));
    }
    let pixels = samples
        .chunks_exact(3)
        .map(|s| {
            [
                (s[0] - black_level).max(0.0),
                (s[1] - black_level).max(0.0),
                (s[2] - black_level).max(0.0),
            ]
        })
        .collect();
    LinearImage::new(width, height, pixels, white_level)
}

/// Write `img` as a 16-bit RGB PNG, mapping `white_level` to 65535.
pub fn save_png16(img: &LinearImage, path: impl AsRef<Path>) -> Result<()> {
    let scale = 65535.0 / img.white_level();
    let raw: Vec<u16> = img
        .pixels()
        .iter()
        .flatten()
        .map(|&v| (v * scale).round().clamp(0.0, 65535.0) as u16)
        .collect();
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw)
            .expect("buffer size matches");
    buf.save(path.as_ref()).map_err(|e| Error::Decode {
        path: path.as_ref().to_path_buf(),
        reason: e.to_string(),
    })
}

/// Even–odd containment test, pixel centers at integer coordinates.
pub fn polygon_contains(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let [xi, yi] = poly[i];
        let [xj, yj] = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Valid pixels are neither dark, saturated, nor inside an exclusion polygon.
pub fn valid_mask(
    img: &LinearImage,
    polygons: &[Polygon],
    dark_frac: f64,
    sat_frac: f64,
) -> Result<Mask> {
    if !(0.0 <= dark_frac && dark_frac < sat_frac && sat_frac <= 1.0) {
        return Err(Error::Input(format!(
            "need 0 <= dark_frac < sat_frac <= 1, got ({dark_frac}, {sat_frac})"
        )));
    }
    if let Some(p) = polygons.iter().find(|p| p.len() < 3) {
        return Err(Error::Input(format!(
            "exclusion polygon with {} vertices",
            p.len()
        )));
    }
    let hi = sat_frac * img.white_level();
    let lo = dark_frac * img.white_level();
    let mut valid = Vec::with_capacity(img.width() * img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = img.pixel(x, y);
            let m = p[0].max(p[1]).max(p[2]);
            let ok = m < hi
                && m > lo
                && !polygons
                    .iter()
                    .any(|poly| polygon_contains(poly, x as f64, y as f64));
            valid.push(ok);
        }
    }
    Ok(Mask {
        width: img.width(),
        height: img.height(),
        valid,
    })
}

fn parse_polygons(field: &str, line: usize) -> Result<Vec<Polygon>> {
    let bad = |reason: String| Error::Manifest { line, reason };
    let field = field.trim();
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split('|')
        .map(|poly| {
            poly.split(';')
                .map(|vertex| {
                    let (x, y) = vertex
                        .split_once(':')
                        .ok_or_else(|| bad(format!("vertex `{vertex}` is not x:y")))?;
                    let x: f64 = x.trim().parse().map_err(|_| bad(format!("bad x in `{vertex}`")))?;
                    let y: f64 = y.trim().parse().map_err(|_| bad(format!("bad y in `{vertex}`")))?;
                    Ok([x, y])
                })
                .collect::<Result<Polygon>>()
        })
        .collect()
}

/// Parse a manifest CSV. Image files are not opened here.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());

    let header = reader.headers().map_err(|e| Error::Manifest {
        line: 1,
        reason: e.to_string(),
    })?;
    let expected: Vec<&str> = MANIFEST_HEADER.split(',').collect();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got.len() < 4 || got[..4] != expected[..4] {
        return Err(Error::Manifest {
            line: 1,
            reason: format!("expected header `{MANIFEST_HEADER}`"),
        });
    }

    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Manifest {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() < 4 || record.len() > 5 {
            return Err(Error::Manifest {
                line,
                reason: format!("expected 4 or 5 fields, got {}", record.len()),
            });
        }
        let mut rgb = [0.0; 3];
        for (c, v) in rgb.iter_mut().enumerate() {
            let field = record[c + 1].trim();
            *v = field.parse().map_err(|_| Error::Manifest {
                line,
                reason: format!("illuminant component `{field}` is not a number"),
            })?;
        }
        let gt = Illuminant::new(rgb).map_err(|_| Error::Manifest {
            line,
            reason: format!("illuminant {rgb:?} must be strictly positive"),
        })?;
        let polygons = match record.get(4) {
            Some(f) => parse_polygons(f, line)?,
            None => Vec::new(),
        };
        entries.push(DatasetEntry {
            image_path: record[0].trim().to_string(),
            gt,
            polygons,
        });
    }

    Ok(Dataset {
        name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        entries,
    })
}

/// Serialize a dataset in manifest form; numbers use shortest round-trip formatting.
pub fn manifest_string(data: &Dataset) -> Result<String> {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for e in &data.entries {
        if e.image_path.contains([',', '"', '\n']) {
            return Err(Error::Input(format!(
                "image path `{}` cannot be written to a manifest",
                e.image_path
            )));
        }
        let [r, g, b] = e.gt.rgb();
        let polys = e
            .polygons
            .iter()
            .map(|p| {
                p.iter()
                    .map(|[x, y]| format!("{x}:{y}"))
                    .collect::<Vec<_>>()
                    .join(";")
            })
            .collect::<Vec<_>>()
            .join("|");
        writeln!(out, "{},{r},{g},{b},{polys}", e.image_path).expect("write to String");
    }
    Ok(out)
}

pub fn save_manifest(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, manifest_string(data)?)?;
    Ok(())
}
