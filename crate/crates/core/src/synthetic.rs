//! Seeded synthetic face fixtures.
//!
//! Real audit sets cannot ship with the crate, so examples and tests draw
//! cartoon faces instead: a skin-colored ellipse on a non-skin background,
//! hair, two eyes and a mouth. Skin luminance follows the requested skin
//! type while skin chroma stays well inside the default skin rule. The
//! gender cue is the mouth region: a saturated red mouth for female faces,
//! a dark beard band for male faces.

use std::fs;
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audit::{HairLength, Manifest, ManifestRow, SkinType};
use crate::imaging::{
    detect_skin, rgb_to_ycrcb, skin_luminance_histogram, ycrcb_pixel_to_rgb, CropBox, RasterImage,
    SkinRule,
};
use crate::model::Gender;
use crate::transform::Palette;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceSpec {
    pub side: usize,
    pub gender: Gender,
    /// Center of the skin luminance distribution.
    pub skin_y: u8,
    pub hair: HairLength,
    pub seed: u64,
}

pub struct Face {
    pub image: RasterImage,
    /// Bounding box of the face ellipse.
    pub face_box: CropBox,
}

fn ycc(y: f64, cr: f64, cb: f64) -> [u8; 3] {
    let q = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    ycrcb_pixel_to_rgb([q(y), q(cr), q(cb)])
}

pub fn draw_face(spec: &FaceSpec) -> Face {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s = spec.side as f64;
    let mut img = RasterImage::filled(spec.side, spec.side, [0; 3]);
    // background: neutral-to-bluish chroma, outside the skin rule
    let bg_y = rng.random_range(40.0..200.0);
    let bg_cb = rng.random_range(120.0..132.0);
    let bg_cr = rng.random_range(122.0..134.0);
    let (cx, cy) = (s / 2.0 + rng.random_range(-1.5..1.5), s * 0.55);
    let (rx, ry) = (s * 0.30, s * 0.38);
    let skin_y = f64::from(spec.skin_y);
    let skin_cr = rng.random_range(100.0..106.0);
    let skin_cb = rng.random_range(150.0..160.0);
    let hair_y = rng.random_range(15.0..40.0);
    let long = spec.hair == HairLength::Long;
    for py in 0..spec.side {
        for px in 0..spec.side {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let u = (x - cx) / rx;
            let v = (y - cy) / ry;
            let in_face = u * u + v * v <= 1.0;
            let noise = rng.random_range(-6.0..6.0);
            let hair_top = y < cy - ry * 0.55 && (x - cx).abs() < rx * 1.25;
            let hair_side = long && (x - cx).abs() > rx * 0.8 && (x - cx).abs() < rx * 1.35 && y < s * 0.95;
            let px_val = if in_face && !hair_top {
                ycc(skin_y + noise, skin_cr + noise * 0.1, skin_cb + noise * 0.1)
            } else if hair_top || hair_side {
                ycc(hair_y + noise, 128.0, 128.0)
            } else {
                ycc(bg_y + noise, bg_cr, bg_cb)
            };
            img.set(px, py, px_val);
        }
    }
    // eyes
    for ex in [cx - rx * 0.4, cx + rx * 0.4] {
        fill_rect(&mut img, ex - s * 0.04, cy - ry * 0.2, s * 0.08, s * 0.05, ycc(20.0, 128.0, 128.0));
    }
    // mouth or beard
    match spec.gender {
        Gender::Female => fill_rect(
            &mut img,
            cx - rx * 0.35,
            cy + ry * 0.45,
            rx * 0.7,
            s * 0.06,
            ycc(90.0, 175.0, 110.0),
        ),
        Gender::Male => fill_rect(
            &mut img,
            cx - rx * 0.6,
            cy + ry * 0.4,
            rx * 1.2,
            s * 0.14,
            ycc(30.0, 130.0, 126.0),
        ),
    }
    let face_box = CropBox {
        x: (cx - rx).floor().max(0.0) as usize,
        y: (cy - ry).floor().max(0.0) as usize,
        width: (2.0 * rx).ceil() as usize,
        height: (2.0 * ry).ceil() as usize,
    };
    Face {
        image: img,
        face_box,
    }
}

fn fill_rect(img: &mut RasterImage, x: f64, y: f64, w: f64, h: f64, rgb: [u8; 3]) {
    let x0 = x.round().max(0.0) as usize;
    let y0 = y.round().max(0.0) as usize;
    let x1 = ((x + w).round() as usize).min(img.width());
    let y1 = ((y + h).round() as usize).min(img.height());
    for py in y0..y1 {
        for px in x0..x1 {
            img.set(px, py, rgb);
        }
    }
}

/// Typical skin luminance drawn for a skin type.
pub fn sample_skin_y(rng: &mut impl rand::Rng, skin: SkinType) -> u8 {
    match skin {
        SkinType::Dark => rng.random_range(60..110),
        SkinType::Light => rng.random_range(150..200),
    }
}

/// Writes `n` faces balanced over gender × skin type plus `manifest.csv`.
pub fn write_dataset(dir: impl AsRef<Path>, n: usize, side: usize, seed: u64) -> crate::Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("images"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let gender = if i % 2 == 0 { Gender::Female } else { Gender::Male };
        let skin_type = if (i / 2) % 2 == 0 { SkinType::Dark } else { SkinType::Light };
        let hair = match gender {
            Gender::Female if rng.random_bool(0.5) => HairLength::Long,
            Gender::Female => HairLength::Short,
            Gender::Male => HairLength::Short,
        };
        let face = draw_face(&FaceSpec {
            side,
            gender,
            skin_y: sample_skin_y(&mut rng, skin_type),
            hair,
            seed: rng.random(),
        });
        let rel = format!("images/face_{i:03}.png");
        face.image.save(dir.join(&rel))?;
        rows.push(ManifestRow {
            path: rel.into(),
            gender,
            skin_type,
            hair_length: hair,
            crop: Some(face.face_box),
        });
    }
    let manifest = Manifest::new(dir, rows);
    manifest.save(dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Reference palettes: skin luminance histograms of faces whose skin
/// centers are spread evenly over `[lo, hi]`.
pub fn reference_palettes(count: usize, lo: u8, hi: u8, seed: u64) -> Vec<Palette> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let t = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.5 };
            let skin_y = (f64::from(lo) + t * f64::from(hi - lo)).round() as u8;
            let face = draw_face(&FaceSpec {
                side: 64,
                gender: Gender::Female,
                skin_y,
                hair: HairLength::Short,
                seed: rng.random(),
            });
            let ycc = rgb_to_ycrcb(&face.image);
            let mask = detect_skin(&ycc, &SkinRule::default());
            let hist = skin_luminance_histogram(&ycc, &mask).expect("faces have skin");
            Palette::from_histogram(format!("palette_{i:02}_y{skin_y:03}"), &hist)
                .expect("nonempty histogram")
        })
        .collect()
}
