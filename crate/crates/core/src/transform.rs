//! Skin-type changes in YCrCb space.
//!
//! Two procedures are provided. [`mode_shift`] moves the modal skin luminance
//! to a target level by adding a constant to the Y plane. [`transport_map`]
//! and [`apply_transport`] remap the skin luminance distribution onto a
//! reference distribution with minimal squared movement. On a line with
//! quadratic cost the optimal coupling is the monotone (quantile matching)
//! one, so no general solver is needed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{
    skin_luminance_histogram, ImagingError, LuminanceHistogram, SkinMask, YCrCbImage,
};

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("histogram has no mass")]
    EmptyHistogram,
    #[error("skin mask is empty")]
    EmptyMask,
    #[error("transport map was built for a different skin histogram")]
    MapMismatch,
    #[error("no ensemble member matches direction {0:?}")]
    EmptyEnsemble(Direction),
    #[error("palette {id}: {reason}")]
    Palette { id: String, reason: String },
    #[error(transparent)]
    Imaging(ImagingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<ImagingError> for TransformError {
    fn from(e: ImagingError) -> Self {
        match e {
            ImagingError::EmptyMask => TransformError::EmptyMask,
            other => TransformError::Imaging(other),
        }
    }
}

pub type Result<T, E = TransformError> = std::result::Result<T, E>;

/// Most frequent luminance level; ties go to the darkest level.
pub fn luminance_mode(hist: &LuminanceHistogram) -> Result<u8> {
    if hist.total() == 0 {
        return Err(TransformError::EmptyHistogram);
    }
    let mut best = 0usize;
    for (y, &c) in hist.counts().iter().enumerate() {
        if c > hist.counts()[best] {
            best = y;
        }
    }
    Ok(best as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftScope {
    #[default]
    WholeImage,
    SkinOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeShiftSpec {
    pub target_mode: u8,
    pub scope: ShiftScope,
}

impl ModeShiftSpec {
    pub fn new(target_mode: u8) -> Self {
        Self {
            target_mode,
            scope: ShiftScope::default(),
        }
    }
}

/// Adds `delta` to Y in scope, clipping to `[0, 255]`. Chroma is untouched.
pub fn shift_luminance(
    img: &YCrCbImage,
    mask: &SkinMask,
    delta: i32,
    scope: ShiftScope,
) -> Result<YCrCbImage> {
    let mut out = img.clone();
    let bits = mask.bits();
    mask.check_matches(img.width(), img.height())?;
    for (i, px) in out.pixels_mut().iter_mut().enumerate() {
        if scope == ShiftScope::SkinOnly && !bits[i] {
            continue;
        }
        px[0] = (i32::from(px[0]) + delta).clamp(0, 255) as u8;
    }
    Ok(out)
}

/// Shift amount `target - old_mode` that [`mode_shift`] applies.
pub fn mode_shift_delta(img: &YCrCbImage, mask: &SkinMask, target_mode: u8) -> Result<i32> {
    let old = luminance_mode(&skin_luminance_histogram(img, mask)?)?;
    Ok(i32::from(target_mode) - i32::from(old))
}

pub fn mode_shift(img: &YCrCbImage, mask: &SkinMask, spec: ModeShiftSpec) -> Result<YCrCbImage> {
    let delta = mode_shift_delta(img, mask, spec.target_mode)?;
    shift_luminance(img, mask, delta, spec.scope)
}

/// How the pixels of one source luminance bin are spread over target levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinSplit {
    pub source: u8,
    /// `(count, target)` pairs in ascending target order.
    pub pieces: Vec<(u64, u8)>,
}

/// Discrete monotone transport plan between two luminance histograms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonotoneMap {
    source: LuminanceHistogram,
    map: [u8; 256],
    fractional_splits: Vec<BinSplit>,
}

impl MonotoneMap {
    pub fn source(&self) -> &LuminanceHistogram {
        &self.source
    }

    /// Target of each source level. Split bins report their lowest target;
    /// empty bins map to themselves.
    pub fn map(&self) -> &[u8; 256] {
        &self.map
    }

    pub fn fractional_splits(&self) -> &[BinSplit] {
        &self.fractional_splits
    }

    /// `(count, target)` pieces for a source level, empty if the bin has no mass.
    pub fn pieces(&self, y: u8) -> Vec<(u64, u8)> {
        let c = self.source.counts()[y as usize];
        if c == 0 {
            return Vec::new();
        }
        match self.fractional_splits.iter().find(|s| s.source == y) {
            Some(split) => split.pieces.clone(),
            None => vec![(c, self.map[y as usize])],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.fractional_splits.is_empty()
            && (0..256).all(|y| self.source.counts()[y] == 0 || self.map[y] as usize == y)
    }

    /// Histogram reached after applying the plan.
    pub fn pushforward(&self) -> LuminanceHistogram {
        let mut counts = [0u64; 256];
        for y in 0..=255u8 {
            for (c, t) in self.pieces(y) {
                counts[t as usize] += c;
            }
        }
        LuminanceHistogram::from_counts(counts)
    }
}

/// Scales nonnegative masses to integers summing to `total` by largest
/// remainder. Remainder ties go to the lower level. Whole-number masses are
/// rounded in exact integer arithmetic.
pub fn round_masses(masses: &[f64; 256], total: u64) -> Result<[u64; 256]> {
    if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
        return Err(TransformError::Palette {
            id: String::new(),
            reason: "masses must be finite and nonnegative".into(),
        });
    }
    let sum: f64 = masses.iter().sum();
    if sum <= 0.0 {
        return Err(TransformError::EmptyHistogram);
    }
    let whole = masses.iter().all(|m| m.fract() == 0.0 && *m < 9.0e15);
    let (mut out, mut rems) = if whole {
        let sum: u128 = masses.iter().map(|&m| m as u128).sum();
        let mut out = [0u64; 256];
        let mut rems = Vec::new();
        for (y, &m) in masses.iter().enumerate() {
            let scaled = m as u128 * u128::from(total);
            out[y] = (scaled / sum) as u64;
            if m > 0.0 {
                // remainders share the denominator `sum`, so compare numerators
                rems.push(((scaled % sum) as f64, y));
            }
        }
        (out, rems)
    } else {
        let mut out = [0u64; 256];
        let mut rems = Vec::new();
        for (y, &m) in masses.iter().enumerate() {
            let quota = m / sum * total as f64;
            out[y] = quota.floor() as u64;
            if m > 0.0 {
                rems.push((quota - quota.floor(), y));
            }
        }
        (out, rems)
    };
    let mut assigned: u64 = out.iter().sum();
    // float quotas can overshoot by a unit; take it back from the smallest remainders
    while assigned > total {
        rems.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        let y = rems
            .iter()
            .find(|(_, y)| out[*y] > 0)
            .map(|(_, y)| *y)
            .expect("some bin is positive");
        out[y] -= 1;
        assigned -= 1;
    }
    rems.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = total - assigned;
    for &(_, y) in rems.iter().cycle() {
        if left == 0 {
            break;
        }
        out[y] += 1;
        left -= 1;
    }
    Ok(out)
}

/// Monotone coupling of `source` onto the target masses rescaled to the
/// source pixel count.
#[allow(clippy::needless_range_loop)]
pub fn transport_map_to_masses(
    source: &LuminanceHistogram,
    target: &[f64; 256],
) -> Result<MonotoneMap> {
    if source.total() == 0 {
        return Err(TransformError::EmptyHistogram);
    }
    let mut remaining = round_masses(target, source.total())?;
    let mut map: [u8; 256] = std::array::from_fn(|y| y as u8);
    let mut fractional_splits = Vec::new();
    let mut t = 0usize;
    for y in 0..256 {
        let mut need = source.counts()[y];
        if need == 0 {
            continue;
        }
        let mut pieces = Vec::new();
        while need > 0 {
            while remaining[t] == 0 {
                t += 1;
            }
            let take = need.min(remaining[t]);
            pieces.push((take, t as u8));
            remaining[t] -= take;
            need -= take;
        }
        map[y] = pieces[0].1;
        if pieces.len() > 1 {
            fractional_splits.push(BinSplit {
                source: y as u8,
                pieces,
            });
        }
    }
    Ok(MonotoneMap {
        source: source.clone(),
        map,
        fractional_splits,
    })
}

pub fn transport_map(
    source: &LuminanceHistogram,
    target: &LuminanceHistogram,
) -> Result<MonotoneMap> {
    if target.total() == 0 {
        return Err(TransformError::EmptyHistogram);
    }
    let masses = std::array::from_fn(|y| target.counts()[y] as f64);
    transport_map_to_masses(source, &masses)
}

/// Rewrites skin luminance through `map`. Within a split bin, pixels take the
/// targets in ascending order, visiting pixels in row-major order.
pub fn apply_transport(
    img: &YCrCbImage,
    mask: &SkinMask,
    map: &MonotoneMap,
) -> Result<YCrCbImage> {
    let hist = skin_luminance_histogram(img, mask)?;
    if &hist != map.source() {
        return Err(TransformError::MapMismatch);
    }
    let pieces: Vec<Vec<(u64, u8)>> = (0..=255u8).map(|y| map.pieces(y)).collect();
    // per bin: (piece index, pixels already placed in that piece)
    let mut cursor = vec![(0usize, 0u64); 256];
    let mut out = img.clone();
    let px = out.pixels_mut();
    for i in mask.indices() {
        let y = px[i][0] as usize;
        let (piece, used) = &mut cursor[y];
        let (count, target) = pieces[y][*piece];
        px[i][0] = target;
        *used += 1;
        if *used == count {
            *piece += 1;
            *used = 0;
        }
    }
    Ok(out)
}

/// Reference luminance distribution used as a transport target.
#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    pub id: String,
    pub masses: [f64; 256],
}

impl Palette {
    pub fn new(id: impl Into<String>, masses: [f64; 256]) -> Result<Self> {
        let id = id.into();
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(TransformError::Palette {
                id,
                reason: "masses must be finite and nonnegative".into(),
            });
        }
        if masses.iter().sum::<f64>() <= 0.0 {
            return Err(TransformError::Palette {
                id,
                reason: "palette has no mass".into(),
            });
        }
        Ok(Self { id, masses })
    }

    pub fn from_histogram(id: impl Into<String>, hist: &LuminanceHistogram) -> Result<Self> {
        Self::new(id, std::array::from_fn(|y| hist.counts()[y] as f64))
    }

    /// Parses 256 whitespace-separated masses.
    pub fn parse(id: impl Into<String>, text: &str) -> Result<Self> {
        let id = id.into();
        let fail = |reason: String| TransformError::Palette {
            id: id.clone(),
            reason,
        };
        let values = text
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| fail(format!("not a number: {tok:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let masses: [f64; 256] = values
            .try_into()
            .map_err(|v: Vec<f64>| fail(format!("expected 256 values, found {}", v.len())))?;
        Self::new(id, masses)
    }

    /// Loads a palette file; the id is the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(id, &fs::read_to_string(path)?)
    }

    /// All `*.txt` palettes in a directory, sorted by id.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<Self>> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect();
        paths.sort();
        paths.iter().map(Self::load).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, m) in self.masses.iter().enumerate() {
            out.push_str(&m.to_string());
            out.push(if i % 16 == 15 { '\n' } else { ' ' });
        }
        out
    }

    pub fn mean(&self) -> f64 {
        let sum: f64 = self.masses.iter().sum();
        self.masses
            .iter()
            .enumerate()
            .map(|(y, m)| y as f64 * m)
            .sum::<f64>()
            / sum
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Lighten,
    Darken,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Lighten => "lighten",
            Direction::Darken => "darken",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ModeShift,
    #[serde(rename = "ot")]
    OptimalTransport,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::ModeShift => "mode-shift",
            Method::OptimalTransport => "ot",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    /// Spacing between consecutive target modes.
    pub step: u8,
    pub min_mode: u8,
    pub max_mode: u8,
    pub scope: ShiftScope,
    pub palettes: Vec<Palette>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            step: 10,
            min_mode: 10,
            max_mode: 245,
            scope: ShiftScope::WholeImage,
            palettes: Vec::new(),
        }
    }
}

/// Target modes `old ± step, old ± 2·step, …` in the requested direction.
/// The first grid point past the bound is replaced by the bound itself.
pub fn mode_shift_targets(old_mode: u8, direction: Direction, config: &EnsembleConfig) -> Vec<u8> {
    let step = i32::from(config.step.max(1));
    let old = i32::from(old_mode);
    let (sign, bound) = match direction {
        Direction::Lighten => (1, i32::from(config.max_mode)),
        Direction::Darken => (-1, i32::from(config.min_mode)),
    };
    let mut out = Vec::new();
    for k in 1.. {
        let t = old + sign * k * step;
        if (t - bound) * sign > 0 {
            if (bound - old) * sign > 0 && out.last() != Some(&(bound as u8)) {
                out.push(bound as u8);
            }
            break;
        }
        out.push(t as u8);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum MemberSpec {
    ModeShift { target_mode: u8, delta: i32 },
    #[serde(rename = "ot")]
    Transport { palette_id: String },
}

#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub image: YCrCbImage,
    pub spec: MemberSpec,
}

#[derive(Debug, Clone)]
pub struct TransformEnsemble {
    pub direction: Direction,
    pub method: Method,
    pub members: Vec<EnsembleMember>,
}

impl TransformEnsemble {
    /// Writes `member_NNN.png` plus a `member_NNN.json` sidecar per member.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (i, m) in self.members.iter().enumerate() {
            crate::imaging::ycrcb_to_rgb(&m.image).save(dir.join(format!("member_{i:03}.png")))?;
            let meta = serde_json::json!({
                "direction": self.direction,
                "spec": m.spec,
            });
            fs::write(
                dir.join(format!("member_{i:03}.json")),
                serde_json::to_string_pretty(&meta)?,
            )?;
        }
        Ok(())
    }
}

pub fn build_ensemble(
    img: &YCrCbImage,
    mask: &SkinMask,
    direction: Direction,
    method: Method,
    config: &EnsembleConfig,
) -> Result<TransformEnsemble> {
    let hist = skin_luminance_histogram(img, mask)?;
    let members = match method {
        Method::ModeShift => {
            let old = luminance_mode(&hist)?;
            mode_shift_targets(old, direction, config)
                .into_iter()
                .map(|target_mode| {
                    let delta = i32::from(target_mode) - i32::from(old);
                    Ok(EnsembleMember {
                        image: shift_luminance(img, mask, delta, config.scope)?,
                        spec: MemberSpec::ModeShift { target_mode, delta },
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        Method::OptimalTransport => {
            let skin_mean = hist.mean().ok_or(TransformError::EmptyHistogram)?;
            config
                .palettes
                .iter()
                .filter(|p| match direction {
                    Direction::Lighten => p.mean() > skin_mean,
                    Direction::Darken => p.mean() < skin_mean,
                })
                .map(|p| {
                    let map = transport_map_to_masses(&hist, &p.masses)?;
                    Ok(EnsembleMember {
                        image: apply_transport(img, mask, &map)?,
                        spec: MemberSpec::Transport {
                            palette_id: p.id.clone(),
                        },
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    if members.is_empty() {
        return Err(TransformError::EmptyEnsemble(direction));
    }
    Ok(TransformEnsemble {
        direction,
        method,
        members,
    })
}
