//! Pixel grids, YCrCb conversion, chrominance skin detection and skin
//! luminance histograms.
//!
//! Conversion uses the full-range BT.601 matrix with a 128 offset on the
//! chroma channels. Every conversion rounds half-up and clips to `[0, 255]`,
//! so results are identical on every platform.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("pixel buffer holds {actual} pixels, expected {width}x{height}")]
    Dimensions {
        width: usize,
        height: usize,
        actual: usize,
    },
    #[error("mask is {mask_width}x{mask_height} but image is {width}x{height}")]
    MaskMismatch {
        width: usize,
        height: usize,
        mask_width: usize,
        mask_height: usize,
    },
    #[error("skin mask is empty")]
    EmptyMask,
    #[error("no skin pixels in any image")]
    NoSkinPixels,
    #[error("crop box does not intersect the image")]
    EmptyCrop,
    #[error("invalid skin rule: {0}")]
    InvalidRule(String),
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = ImagingError> = std::result::Result<T, E>;

fn check_len(width: usize, height: usize, actual: usize) -> Result<()> {
    if width * height != actual {
        return Err(ImagingError::Dimensions {
            width,
            height,
            actual,
        });
    }
    Ok(())
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        check_len(width, height, pixels.len())?;
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![rgb; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }

    /// Loads any 8-bit raster the `image` crate can decode, dropping alpha.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let rgb = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&rgb))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8().save(path)?;
        Ok(())
    }

    pub fn from_rgb8(buf: &image::RgbImage) -> Self {
        let pixels = buf.pixels().map(|p| p.0).collect();
        Self {
            width: buf.width() as usize,
            height: buf.height() as usize,
            pixels,
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self.pixels.iter().flatten().copied().collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }
}

/// Row-major YCrCb image, channel order `(Y, Cr, Cb)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct YCrCbImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl YCrCbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        check_len(width, height, pixels.len())?;
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [[u8; 3]] {
        &mut self.pixels
    }

    pub fn luma(&self) -> impl Iterator<Item = u8> + '_ {
        self.pixels.iter().map(|p| p[0])
    }
}

/// Rounds half-up and clips to the 8-bit range.
#[inline]
pub(crate) fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn rgb_pixel_to_ycrcb([r, g, b]: [u8; 3]) -> [u8; 3] {
    let (r, g, b) = (f64::from(r), f64::from(g), f64::from(b));
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
    let cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    [quantize(y), quantize(cr), quantize(cb)]
}

pub fn ycrcb_pixel_to_rgb([y, cr, cb]: [u8; 3]) -> [u8; 3] {
    let y = f64::from(y);
    let cr = f64::from(cr) - 128.0;
    let cb = f64::from(cb) - 128.0;
    let r = y + 1.402 * cr;
    let g = y - 0.344136 * cb - 0.714136 * cr;
    let b = y + 1.772 * cb;
    [quantize(r), quantize(g), quantize(b)]
}

pub fn rgb_to_ycrcb(img: &RasterImage) -> YCrCbImage {
    YCrCbImage {
        width: img.width,
        height: img.height,
        pixels: img.pixels.iter().map(|&p| rgb_pixel_to_ycrcb(p)).collect(),
    }
}

pub fn ycrcb_to_rgb(img: &YCrCbImage) -> RasterImage {
    RasterImage {
        width: img.width,
        height: img.height,
        pixels: img.pixels.iter().map(|&p| ycrcb_pixel_to_rgb(p)).collect(),
    }
}

/// Inclusive chrominance box classifying a pixel as skin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SkinRule {
    pub cr_min: u8,
    pub cr_max: u8,
    pub cb_min: u8,
    pub cb_max: u8,
}

impl Default for SkinRule {
    fn default() -> Self {
        Self {
            cr_min: 90,
            cr_max: 115,
            cb_min: 140,
            cb_max: 195,
        }
    }
}

impl SkinRule {
    pub fn new(cr_min: u8, cr_max: u8, cb_min: u8, cb_max: u8) -> Result<Self> {
        if cr_min > cr_max || cb_min > cb_max {
            return Err(ImagingError::InvalidRule(format!(
                "cr [{cr_min}, {cr_max}], cb [{cb_min}, {cb_max}]"
            )));
        }
        Ok(Self {
            cr_min,
            cr_max,
            cb_min,
            cb_max,
        })
    }

    #[inline]
    pub fn contains(&self, cr: u8, cb: u8) -> bool {
        (self.cr_min..=self.cr_max).contains(&cr) && (self.cb_min..=self.cb_max).contains(&cb)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkinMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl SkinMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        check_len(width, height, bits.len())?;
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Row-major indices of the masked pixels.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub(crate) fn check_matches(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(ImagingError::MaskMismatch {
                width,
                height,
                mask_width: self.width,
                mask_height: self.height,
            });
        }
        Ok(())
    }

    /// White-on-black rendering for inspection.
    pub fn to_image(&self) -> RasterImage {
        let pixels = self
            .bits
            .iter()
            .map(|&b| if b { [255; 3] } else { [0; 3] })
            .collect();
        RasterImage {
            width: self.width,
            height: self.height,
            pixels,
        }
    }
}

pub fn detect_skin(img: &YCrCbImage, rule: &SkinRule) -> SkinMask {
    SkinMask {
        width: img.width,
        height: img.height,
        bits: img
            .pixels
            .iter()
            .map(|&[_, cr, cb]| rule.contains(cr, cb))
            .collect(),
    }
}

/// Counts of skin pixels per luminance level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LuminanceHistogram {
    counts: [u64; 256],
    total: u64,
}

impl Default for LuminanceHistogram {
    fn default() -> Self {
        Self {
            counts: [0; 256],
            total: 0,
        }
    }
}

impl LuminanceHistogram {
    pub fn from_counts(counts: [u64; 256]) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    /// Histogram of a bag of luminance values.
    pub fn from_values(values: impl IntoIterator<Item = u8>) -> Self {
        let mut h = Self::default();
        for v in values {
            h.counts[v as usize] += 1;
            h.total += 1;
        }
        h
    }

    pub fn counts(&self) -> &[u64; 256] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn normalized(&self) -> Option<[f64; 256]> {
        if self.total == 0 {
            return None;
        }
        let n = self.total as f64;
        Some(std::array::from_fn(|y| self.counts[y] as f64 / n))
    }

    pub fn mean(&self) -> Option<f64> {
        (self.total > 0).then(|| {
            let s: f64 = self
                .counts
                .iter()
                .enumerate()
                .map(|(y, &c)| y as f64 * c as f64)
                .sum();
            s / self.total as f64
        })
    }

    pub fn merge(&mut self, other: &LuminanceHistogram) {
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += b;
        }
        self.total += other.total;
    }

    /// Two-column `value count` text, one line per level.
    pub fn to_text(&self) -> String {
        two_column(&self.counts)
    }
}

fn two_column(counts: &[u64; 256]) -> String {
    let mut out = String::with_capacity(256 * 6);
    for (v, c) in counts.iter().enumerate() {
        let _ = writeln!(out, "{v} {c}");
    }
    out
}

pub fn skin_luminance_histogram(img: &YCrCbImage, mask: &SkinMask) -> Result<LuminanceHistogram> {
    mask.check_matches(img.width, img.height)?;
    let hist = LuminanceHistogram::from_values(mask.indices().map(|i| img.pixels[i][0]));
    if hist.total == 0 {
        return Err(ImagingError::EmptyMask);
    }
    Ok(hist)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChromaHistogram {
    pub cr_counts: [u64; 256],
    pub cb_counts: [u64; 256],
}

impl ChromaHistogram {
    pub fn total(&self) -> u64 {
        self.cr_counts.iter().sum()
    }

    pub fn cr_text(&self) -> String {
        two_column(&self.cr_counts)
    }

    pub fn cb_text(&self) -> String {
        two_column(&self.cb_counts)
    }
}

/// Cr and Cb frequencies pooled over the skin pixels of every image.
pub fn chroma_histograms<'a, I>(images: I) -> Result<ChromaHistogram>
where
    I: IntoIterator<Item = (&'a YCrCbImage, &'a SkinMask)>,
{
    let mut hist = ChromaHistogram {
        cr_counts: [0; 256],
        cb_counts: [0; 256],
    };
    for (img, mask) in images {
        mask.check_matches(img.width, img.height)?;
        for i in mask.indices() {
            let [_, cr, cb] = img.pixels[i];
            hist.cr_counts[cr as usize] += 1;
            hist.cb_counts[cb as usize] += 1;
        }
    }
    if hist.total() == 0 {
        return Err(ImagingError::NoSkinPixels);
    }
    Ok(hist)
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CropBox {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Crops `box_` grown by `pad_fraction` of its size on every side, clipped to
/// the image. Padding per side is rounded half-up to whole pixels.
pub fn crop_face(img: &RasterImage, box_: CropBox, pad_fraction: f64) -> Result<RasterImage> {
    let pad_fraction = if pad_fraction.is_finite() {
        pad_fraction.max(0.0)
    } else {
        0.0
    };
    let pad_x = (box_.width as f64 * pad_fraction + 0.5).floor() as i64;
    let pad_y = (box_.height as f64 * pad_fraction + 0.5).floor() as i64;
    let x0 = (box_.x as i64 - pad_x).max(0);
    let y0 = (box_.y as i64 - pad_y).max(0);
    let x1 = (box_.x as i64 + box_.width as i64 + pad_x).min(img.width as i64);
    let y1 = (box_.y as i64 + box_.height as i64 + pad_y).min(img.height as i64);
    if x1 <= x0 || y1 <= y0 {
        return Err(ImagingError::EmptyCrop);
    }
    let (x0, y0, x1, y1) = (x0 as usize, y0 as usize, x1 as usize, y1 as usize);
    let mut pixels = Vec::with_capacity((x1 - x0) * (y1 - y0));
    for row in y0..y1 {
        pixels.extend_from_slice(&img.pixels[row * img.width + x0..row * img.width + x1]);
    }
    Ok(RasterImage {
        width: x1 - x0,
        height: y1 - y0,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(y: u8, cr: u8, cb: u8) -> YCrCbImage {
        YCrCbImage::new(1, 1, vec![[y, cr, cb]]).unwrap()
    }

    #[test]
    fn white_and_black_have_neutral_chroma() {
        assert_eq!(rgb_pixel_to_ycrcb([255, 255, 255]), [255, 128, 128]);
        assert_eq!(rgb_pixel_to_ycrcb([0, 0, 0]), [0, 128, 128]);
        assert_eq!(ycrcb_pixel_to_rgb([255, 128, 128]), [255, 255, 255]);
        assert_eq!(ycrcb_pixel_to_rgb([0, 128, 128]), [0, 0, 0]);
    }

    #[test]
    fn pure_red_golden() {
        // Y = 76.245, Cr = 255.5 -> clipped, Cb = 84.97
        assert_eq!(rgb_pixel_to_ycrcb([255, 0, 0]), [76, 255, 85]);
    }

    #[test]
    fn skin_rule_bounds_are_inclusive() {
        let rule = SkinRule::default();
        assert!(detect_skin(&single(120, 100, 150), &rule).bits()[0]);
        assert!(!detect_skin(&single(120, 89, 150), &rule).bits()[0]);
        assert!(detect_skin(&single(40, 115, 195), &rule).bits()[0]);
        assert!(detect_skin(&single(40, 90, 140), &rule).bits()[0]);
        assert!(!detect_skin(&single(40, 116, 150), &rule).bits()[0]);
        assert!(!detect_skin(&single(40, 100, 196), &rule).bits()[0]);
        assert!(!detect_skin(&single(40, 100, 139), &rule).bits()[0]);
    }

    #[test]
    fn inverted_rule_rejected() {
        assert!(SkinRule::new(120, 90, 140, 195).is_err());
    }

    #[test]
    fn luminance_histogram_counts() {
        let img = YCrCbImage::new(3, 1, vec![[80, 100, 150], [80, 100, 150], [80, 0, 0]]).unwrap();
        let mask = detect_skin(&img, &SkinRule::default());
        let h = skin_luminance_histogram(&img, &mask).unwrap();
        assert_eq!(h.counts()[80], 2);
        assert_eq!(h.total(), 2);

        let img = YCrCbImage::new(4, 4, vec![[128, 100, 150]; 16]).unwrap();
        let mask = detect_skin(&img, &SkinRule::default());
        assert_eq!(skin_luminance_histogram(&img, &mask).unwrap().counts()[128], 16);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let img = single(80, 0, 0);
        let mask = detect_skin(&img, &SkinRule::default());
        assert!(matches!(
            skin_luminance_histogram(&img, &mask),
            Err(ImagingError::EmptyMask)
        ));
    }

    #[test]
    fn mask_dimension_mismatch() {
        let img = single(80, 100, 150);
        let mask = SkinMask::new(2, 1, vec![true, true]).unwrap();
        assert!(matches!(
            skin_luminance_histogram(&img, &mask),
            Err(ImagingError::MaskMismatch { .. })
        ));
    }

    #[test]
    fn chroma_histogram_single_and_doubled() {
        let img = YCrCbImage::new(2, 1, vec![[60, 100, 150], [60, 10, 10]]).unwrap();
        let mask = detect_skin(&img, &SkinRule::default());
        let once = chroma_histograms([(&img, &mask)]).unwrap();
        assert_eq!(once.cr_counts[100], 1);
        assert_eq!(once.cb_counts[150], 1);
        assert_eq!(once.total(), 1);
        let twice = chroma_histograms([(&img, &mask), (&img, &mask)]).unwrap();
        for v in 0..256 {
            assert_eq!(twice.cr_counts[v], 2 * once.cr_counts[v]);
            assert_eq!(twice.cb_counts[v], 2 * once.cb_counts[v]);
        }
    }

    #[test]
    fn chroma_histogram_without_skin() {
        let img = single(60, 0, 0);
        let mask = detect_skin(&img, &SkinRule::default());
        assert!(matches!(
            chroma_histograms([(&img, &mask)]),
            Err(ImagingError::NoSkinPixels)
        ));
    }

    #[test]
    fn crop_identity_and_corner() {
        let mut img = RasterImage::filled(100, 100, [1, 2, 3]);
        img.set(5, 5, [9, 9, 9]);
        let full = CropBox {
            x: 0,
            y: 0,
            width: 100,
            height: 100,
        };
        assert_eq!(crop_face(&img, full, 0.0).unwrap(), img);
        let corner = CropBox {
            x: 0,
            y: 0,
            width: 10,
            height: 10,
        };
        let c = crop_face(&img, corner, 0.0).unwrap();
        assert_eq!((c.width(), c.height()), (10, 10));
        assert_eq!(c.get(5, 5), [9, 9, 9]);
    }

    #[test]
    fn crop_clips_padding_at_right_edge() {
        // box x in [80, 100), y in [40, 60); pad 0.2 * 20 = 4 px per side.
        // x range [76, 104) clips to [76, 100): width 24; y range [36, 64): 28.
        let img = RasterImage::filled(100, 100, [0; 3]);
        let b = CropBox {
            x: 80,
            y: 40,
            width: 20,
            height: 20,
        };
        let c = crop_face(&img, b, 0.2).unwrap();
        assert_eq!((c.width(), c.height()), (24, 28));
    }

    #[test]
    fn crop_outside_is_empty() {
        let img = RasterImage::filled(10, 10, [0; 3]);
        let b = CropBox {
            x: 20,
            y: 20,
            width: 5,
            height: 5,
        };
        assert!(matches!(crop_face(&img, b, 0.0), Err(ImagingError::EmptyCrop)));
    }

    #[test]
    fn histogram_text_has_256_lines() {
        let h = LuminanceHistogram::from_values([3u8, 3, 7]);
        let text = h.to_text();
        assert_eq!(text.lines().count(), 256);
        assert_eq!(text.lines().nth(3), Some("3 2"));
    }

    #[test]
    fn mismatched_buffer_rejected() {
        assert!(RasterImage::new(2, 2, vec![[0; 3]; 3]).is_err());
    }
}
