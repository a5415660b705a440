//! Seed-deterministic synthetic motion dataset: eight parametric motion
//! families applied to a shared random point cloud, plus a Gaussian-blob
//! renderer that gives the pixel model a view of the same scenes.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::trackio::{self, Label, ManifestEntry, PointTrackSet, Split, TrackMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    SwipeLeft,
    SwipeRight,
    SwipeUp,
    SwipeDown,
    CircleCw,
    CircleCcw,
    ZoomIn,
    ZoomOut,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::SwipeLeft,
        Family::SwipeRight,
        Family::SwipeUp,
        Family::SwipeDown,
        Family::CircleCw,
        Family::CircleCcw,
        Family::ZoomIn,
        Family::ZoomOut,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Family::SwipeLeft => "swipe_left",
            Family::SwipeRight => "swipe_right",
            Family::SwipeUp => "swipe_up",
            Family::SwipeDown => "swipe_down",
            Family::CircleCw => "circle_cw",
            Family::CircleCcw => "circle_ccw",
            Family::ZoomIn => "zoom_in",
            Family::ZoomOut => "zoom_out",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Class `i` is `families[i]`.
    pub families: Vec<Family>,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub frames: usize,
    pub tracks: usize,
    /// Gaussian position noise, normalized units.
    pub noise_sigma: f64,
    /// Expected fraction of occluded `(frame, track)` entries.
    pub occlusion_rate: f64,
    /// Per-sample speed multiplier range.
    pub speed_jitter: [f64; 2],
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            families: Family::ALL.to_vec(),
            train_per_class: 200,
            val_per_class: 25,
            test_per_class: 50,
            frames: 32,
            tracks: 60,
            noise_sigma: 0.005,
            occlusion_rate: 0.05,
            speed_jitter: [0.8, 1.2],
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.families.len() < 2 {
            return fail("need at least two motion families");
        }
        let mut seen = self.families.clone();
        seen.sort_by_key(|f| f.name());
        seen.dedup();
        if seen.len() != self.families.len() {
            return fail("motion families must be distinct");
        }
        if self.train_per_class < 1 || self.val_per_class < 1 || self.test_per_class < 1 {
            return fail("per-class counts must be at least 1");
        }
        if self.frames < 2 || self.tracks < 1 {
            return fail("frames must be ≥ 2 and tracks ≥ 1");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma must be ≥ 0");
        }
        if !(0.0..1.0).contains(&self.occlusion_rate) {
            return fail("occlusion_rate must lie in [0, 1)");
        }
        let [lo, hi] = self.speed_jitter;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return fail("speed_jitter must be a positive range [lo, hi]");
        }
        Ok(())
    }
}

// Scene geometry, normalized units.
const CLOUD_RADIUS: f64 = 0.12;
const CENTRE_JITTER: f64 = 0.05;
const SWIPE_DISTANCE: f64 = 0.25;
const SWEEP_ANGLE: f64 = std::f64::consts::FRAC_PI_2;
const ZOOM_GAIN: f64 = 0.8;

/// Clean (noise- and occlusion-free) trajectory of one sample, frame-major.
fn clean_positions(family: Family, base: &[[f64; 2]], centre: [f64; 2], speed: f64, frames: usize) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(frames * base.len());
    for t in 0..frames {
        let s = speed * t as f64 / (frames - 1) as f64;
        for p in base {
            let (rx, ry) = (p[0] - centre[0], p[1] - centre[1]);
            let q = match family {
                Family::SwipeLeft => [p[0] - SWIPE_DISTANCE * s, p[1]],
                Family::SwipeRight => [p[0] + SWIPE_DISTANCE * s, p[1]],
                // image coordinates: y grows downwards
                Family::SwipeUp => [p[0], p[1] - SWIPE_DISTANCE * s],
                Family::SwipeDown => [p[0], p[1] + SWIPE_DISTANCE * s],
                Family::CircleCw | Family::CircleCcw => {
                    // with y pointing down, a positive angle turns clockwise on screen
                    let sign = if family == Family::CircleCw { 1.0 } else { -1.0 };
                    let a = sign * SWEEP_ANGLE * s;
                    let (sn, cs) = a.sin_cos();
                    [centre[0] + cs * rx - sn * ry, centre[1] + sn * rx + cs * ry]
                }
                Family::ZoomIn => {
                    let k = 1.0 + ZOOM_GAIN * s;
                    [centre[0] + k * rx, centre[1] + k * ry]
                }
                Family::ZoomOut => {
                    let k = 1.0 / (1.0 + ZOOM_GAIN * s);
                    [centre[0] + k * rx, centre[1] + k * ry]
                }
            };
            out.push(q);
        }
    }
    out
}

/// Generates one sample. `index` selects the per-sample seed stream.
pub fn generate_sample(cfg: &GenConfig, family: Family, index: u64, video_id: &str, label: u32) -> Result<PointTrackSet> {
    let mut rng = seed::rng(cfg.seed, "sample", index);
    let centre = [
        0.5 + rng.random_range(-CENTRE_JITTER..=CENTRE_JITTER),
        0.5 + rng.random_range(-CENTRE_JITTER..=CENTRE_JITTER),
    ];
    let base: Vec<[f64; 2]> = (0..cfg.tracks)
        .map(|_| {
            let r = CLOUD_RADIUS * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            [centre[0] + r * a.cos(), centre[1] + r * a.sin()]
        })
        .collect();
    let [lo, hi] = cfg.speed_jitter;
    let speed = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let clean = clean_positions(family, &base, centre, speed, cfg.frames);

    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut positions = Vec::with_capacity(clean.len() * 2);
    for q in &clean {
        for c in q {
            let v = if cfg.noise_sigma > 0.0 { c + noise.sample(&mut rng) } else { *c };
            positions.push(v.clamp(0.0, 1.0) as f32);
        }
    }

    // half the tracks get one occluded span; span length doubles the rate so
    // the expected occluded fraction equals `occlusion_rate`
    let mut occlusion = vec![0u8; cfg.frames * cfg.tracks];
    if cfg.occlusion_rate > 0.0 {
        let span = ((2.0 * cfg.occlusion_rate * cfg.frames as f64).round() as usize).clamp(1, cfg.frames);
        for n in 0..cfg.tracks {
            if rng.random_bool(0.5) {
                let start = rng.random_range(0..=cfg.frames - span);
                for t in start..start + span {
                    occlusion[t * cfg.tracks + n] = 1;
                }
            }
        }
    }

    PointTrackSet::new(
        cfg.frames,
        cfg.tracks,
        positions,
        occlusion,
        TrackMeta {
            video_id: video_id.to_string(),
            width: None,
            height: None,
            fps: Some(30.0),
            label: Some(Label::Class(label)),
            normalized: true,
        },
    )
}

/// In-memory generation of every split, in manifest order.
pub fn generate_samples(cfg: &GenConfig) -> Result<Vec<(ManifestEntry, PointTrackSet)>> {
    cfg.validate()?;
    let mut out = Vec::new();
    let mut index = 0u64;
    for (split, count) in [
        (Split::Train, cfg.train_per_class),
        (Split::Val, cfg.val_per_class),
        (Split::Test, cfg.test_per_class),
    ] {
        let tag = match split {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        for (class, family) in cfg.families.iter().enumerate() {
            for i in 0..count {
                let id = format!("{tag}_{}_{i:05}", family.name());
                let set = generate_sample(cfg, *family, index, &id, class as u32)?;
                index += 1;
                out.push((
                    ManifestEntry {
                        file: format!("{id}.ptrk"),
                        split,
                        label: Label::Class(class as u32),
                    },
                    set,
                ));
            }
        }
    }
    Ok(out)
}

/// Writes the `.ptrk` files and `manifest.json` into `out_dir` (created if
/// missing) and returns the manifest.
pub fn generate_dataset(cfg: &GenConfig, out_dir: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let dir = out_dir.as_ref();
    let samples = generate_samples(cfg)?;
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(samples.len());
    for (entry, set) in samples {
        trackio::save_tracks(&set, dir.join(&entry.file))?;
        entries.push(entry);
    }
    trackio::write_manifest(dir, &entries)?;
    Ok(entries)
}

// ---------------------------------------------------------------------------
// Frames

pub const FRMS_MAGIC: &[u8; 4] = b"FRMS";

/// `T×H×W×3` intensity volume in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Frames {
    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        Frames {
            frames,
            height,
            width,
            data: vec![0.0; frames * height * width * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, t: usize, y: usize, x: usize) -> [f32; 3] {
        let i = ((t * self.height + y) * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + self.data.len() * 4);
        buf.extend_from_slice(FRMS_MAGIC);
        for d in [self.frames, self.height, self.width] {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = trackio::Reader::new(bytes);
        if r.take(4, "magic")? != FRMS_MAGIC {
            return Err(Error::Format("not an FRMS volume".into()));
        }
        let t = r.u32("T")? as usize;
        let h = r.u32("H")? as usize;
        let w = r.u32("W")? as usize;
        let n = t
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .and_then(|v| v.checked_mul(3))
            .ok_or_else(|| Error::Format("FRMS extents overflow".into()))?;
        let data = r.f32s(n, "pixels")?;
        if r.remaining() != 0 {
            return Err(Error::Format("trailing bytes after FRMS payload".into()));
        }
        Ok(Frames {
            frames: t,
            height: h,
            width: w,
            data,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

/// Renders every visible point as an isotropic Gaussian of peak 1 and
/// radius `sigma_px`; overlapping blobs add and saturate at 1. Point
/// `(x, y)` maps to pixel coordinates `(x·W, y·H)`, pixel `(i, j)` being
/// centred at `(j + ½, i + ½)`.
pub fn render_frames(set: &PointTrackSet, height: usize, width: usize, sigma_px: f64) -> Result<Frames> {
    if !set.is_normalized() {
        return Err(Error::validation("rendering needs normalized coordinates"));
    }
    if !(sigma_px > 0.0 && sigma_px.is_finite()) {
        return Err(Error::invalid("blob sigma must be positive"));
    }
    let reach = (3.0 * sigma_px).ceil() as usize;
    if height.min(width) < 2 * reach + 1 {
        return Err(Error::invalid(format!(
            "{height}×{width} frame is too small for a blob of sigma {sigma_px} px"
        )));
    }
    let mut out = Frames::zeros(set.frames(), height, width);
    let inv2s2 = 1.0 / (2.0 * sigma_px * sigma_px);
    let mut plane = vec![0.0f64; height * width];
    for t in 0..set.frames() {
        plane.iter_mut().for_each(|v| *v = 0.0);
        for n in 0..set.tracks() {
            if set.occluded(t, n) {
                continue;
            }
            let (x, y) = set.xy(t, n);
            let (cx, cy) = (f64::from(x) * width as f64, f64::from(y) * height as f64);
            let x0 = (cx - 0.5 - reach as f64).floor().max(0.0) as usize;
            let x1 = ((cx - 0.5 + reach as f64).ceil() as usize).min(width - 1);
            let y0 = (cy - 0.5 - reach as f64).floor().max(0.0) as usize;
            let y1 = ((cy - 0.5 + reach as f64).ceil() as usize).min(height - 1);
            for py in y0..=y1 {
                let dy = py as f64 + 0.5 - cy;
                for px in x0..=x1 {
                    let dx = px as f64 + 0.5 - cx;
                    plane[py * width + px] += (-(dx * dx + dy * dy) * inv2s2).exp();
                }
            }
        }
        let base = t * height * width * 3;
        for (i, &v) in plane.iter().enumerate() {
            let v = v.min(1.0) as f32;
            out.data[base + i * 3..base + i * 3 + 3].copy_from_slice(&[v, v, v]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trackio::compute_velocity;

    fn quiet(family: Family) -> GenConfig {
        GenConfig {
            families: vec![family, Family::ZoomIn],
            noise_sigma: 0.0,
            occlusion_rate: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn clean_left_swipe_moves_left_every_frame() {
        let cfg = quiet(Family::SwipeLeft);
        let set = generate_sample(&cfg, Family::SwipeLeft, 3, "s", 0).unwrap();
        let v = compute_velocity(&set);
        for n in 0..set.tracks() {
            for t in 1..set.frames() {
                assert!(v.at(n, t)[0] < 0.0, "track {n} frame {t}");
            }
        }
    }

    #[test]
    fn clean_swipe_velocity_is_constant() {
        let cfg = quiet(Family::SwipeDown);
        let set = generate_sample(&cfg, Family::SwipeDown, 5, "s", 0).unwrap();
        let v = compute_velocity(&set);
        let first = v.at(0, 1);
        for n in 0..set.tracks() {
            for t in 1..set.frames() {
                let c = v.at(n, t);
                assert!((c[0] - first[0]).abs() < 1e-6 && (c[1] - first[1]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn clean_rotation_preserves_radius() {
        let cfg = quiet(Family::CircleCw);
        let set = generate_sample(&cfg, Family::CircleCw, 9, "c", 0).unwrap();
        let centroid = |t: usize| {
            let (mut sx, mut sy) = (0.0f64, 0.0f64);
            for n in 0..set.tracks() {
                sx += set.xy(t, n).0 as f64;
                sy += set.xy(t, n).1 as f64;
            }
            (sx / set.tracks() as f64, sy / set.tracks() as f64)
        };
        let c0 = centroid(0);
        for n in 0..set.tracks() {
            let r0 = ((set.xy(0, n).0 as f64 - c0.0).hypot(set.xy(0, n).1 as f64 - c0.1)) as f64;
            for t in 1..set.frames() {
                let c = centroid(t);
                let r = (set.xy(t, n).0 as f64 - c.0).hypot(set.xy(t, n).1 as f64 - c.1);
                assert!((r - r0).abs() < 1e-6, "track {n} frame {t}: {r} vs {r0}");
            }
        }
    }

    #[test]
    fn counts_and_splits() {
        let cfg = GenConfig {
            train_per_class: 3,
            val_per_class: 1,
            test_per_class: 2,
            frames: 4,
            tracks: 5,
            ..Default::default()
        };
        let s = generate_samples(&cfg).unwrap();
        assert_eq!(s.len(), 8 * 6);
        for class in 0..8u32 {
            for (split, want) in [(Split::Train, 3), (Split::Val, 1), (Split::Test, 2)] {
                let got = s
                    .iter()
                    .filter(|(e, _)| e.split == split && e.label == Label::Class(class))
                    .count();
                assert_eq!(got, want);
            }
        }
        let mut ids: Vec<_> = s.iter().map(|(_, set)| set.video_id().to_string()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), s.len());
    }

    #[test]
    fn config_validation() {
        let mut cfg = GenConfig::default();
        cfg.families = vec![Family::SwipeLeft];
        assert!(cfg.validate().is_err());
        let mut cfg = GenConfig::default();
        cfg.occlusion_rate = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = GenConfig::default();
        cfg.noise_sigma = -1.0;
        assert!(cfg.validate().is_err());
    }

    fn single_point(x: f32, y: f32, occluded: bool) -> PointTrackSet {
        PointTrackSet::new(
            2,
            1,
            vec![x, y, x, y],
            vec![u8::from(occluded); 2],
            TrackMeta {
                normalized: true,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn occluded_points_render_black() {
        let f = render_frames(&single_point(0.5, 0.5, true), 16, 16, 1.0).unwrap();
        assert!(f.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centred_point_peaks_at_centre_pixel() {
        let f = render_frames(&single_point(0.5, 0.5, false), 31, 31, 1.5).unwrap();
        let mut best = (0, 0, -1.0f32);
        for y in 0..31 {
            for x in 0..31 {
                let v = f.pixel(0, y, x)[0];
                if v > best.2 {
                    best = (y, x, v);
                }
            }
        }
        assert_eq!((best.0, best.1), (15, 15));
        assert_eq!(f.pixel(0, 15, 15), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn blob_mass_matches_gaussian_integral() {
        let sigma = 2.0;
        // centre of pixel (32, 32) on a 64×64 frame
        let c = 32.5 / 64.0;
        let f = render_frames(&single_point(c, c, false), 64, 64, sigma).unwrap();
        let mass: f64 = (0..64)
            .flat_map(|y| (0..64).map(move |x| (y, x)))
            .map(|(y, x)| f64::from(f.pixel(0, y, x)[0]))
            .sum();
        let peak = f64::from(f.pixel(0, 32, 32)[0]);
        let want = 2.0 * std::f64::consts::PI * sigma * sigma * peak;
        assert!((mass - want).abs() / want < 0.02, "{mass} vs {want}");
    }

    #[test]
    fn tiny_frame_is_rejected() {
        assert!(render_frames(&single_point(0.5, 0.5, false), 4, 4, 2.0).is_err());
    }

    #[test]
    fn frms_round_trip() {
        let f = render_frames(&single_point(0.3, 0.6, false), 9, 12, 1.0).unwrap();
        assert_eq!(Frames::decode(&f.encode()).unwrap(), f);
        let mut bad = f.encode();
        bad.truncate(bad.len() - 1);
        assert!(Frames::decode(&bad).is_err());
    }
}
