//! Procedural 2-D scenes with exact ground truth.
//!
//! Multi-part objects (rectangles, circles, triangles) sit on a textured
//! background and are rendered under a panning or zooming camera with
//! nearest-sample rasterization and no anti-aliasing, so integer pans are
//! exact pixel shifts. Every scene carries two palettes over identical
//! geometry, which gives a deterministic recolor ground truth, plus per-pixel
//! part masks and an exact inverse-camera flow between any two frames.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::frame::{Frame, VideoSequence};
use crate::{err, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeKind {
    /// Axis-aligned rectangle anchored at its top-left corner.
    Rect { x: f64, y: f64, w: f64, h: f64 },
    Circle { cx: f64, cy: f64, r: f64 },
    Triangle { a: [f64; 2], b: [f64; 2], c: [f64; 2] },
}

impl ShapeKind {
    fn contains(&self, px: f64, py: f64) -> bool {
        match *self {
            ShapeKind::Rect { x, y, w, h } => px >= x && px < x + w && py >= y && py < y + h,
            ShapeKind::Circle { cx, cy, r } => {
                let (dx, dy) = (px - cx, py - cy);
                dx * dx + dy * dy <= r * r
            }
            ShapeKind::Triangle { a, b, c } => {
                let sign =
                    |p: [f64; 2], q: [f64; 2]| (px - q[0]) * (p[1] - q[1]) - (p[0] - q[0]) * (py - q[1]);
                let d1 = sign(a, b);
                let d2 = sign(b, c);
                let d3 = sign(c, a);
                let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(has_neg && has_pos)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Background {
    /// Parity checkerboard in world coordinates.
    Checker { period: f64, base: [u8; 3], alt: [u8; 3] },
    /// Linear ramp in world coordinates, clamped per channel.
    Gradient { offset: [f64; 3], gx: [f64; 3], gy: [f64; 3] },
}

impl Background {
    fn color(&self, wx: f64, wy: f64) -> [u8; 3] {
        match *self {
            Background::Checker { period, base, alt } => {
                let cx = crate::fmath::floor(wx / period) as i64;
                let cy = crate::fmath::floor(wy / period) as i64;
                if (cx + cy).rem_euclid(2) == 0 {
                    base
                } else {
                    alt
                }
            }
            Background::Gradient { offset, gx, gy } => {
                let mut rgb = [0u8; 3];
                for c in 0..3 {
                    let v = offset[c] + gx[c] * wx + gy[c] * wy;
                    rgb[c] = crate::fmath::round_half_up(v.clamp(0.0, 255.0)) as u8;
                }
                rgb
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CameraPath {
    /// Per-frame translation in pixels; integer values give exact shifts.
    Pan { dx: f64, dy: f64 },
    /// Per-frame zoom-in factor (> 1 grows the object on screen).
    Zoom { factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaletteSel {
    A,
    B,
}

/// One scene: object parts in painter's order, a background, two palettes
/// over the same geometry, and a camera path.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub name: String,
    pub parts: Vec<ShapeKind>,
    pub background: Background,
    pub palette_a: Vec<[u8; 3]>,
    pub palette_b: Vec<[u8; 3]>,
    pub camera: CameraPath,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.width == 0 || self.height == 0 {
            return Err(err!(Config, "scene {}: empty frames or canvas", self.name));
        }
        if self.palette_a.len() != self.parts.len() || self.palette_b.len() != self.parts.len() {
            return Err(err!(Config, "scene {}: palette/part count mismatch", self.name));
        }
        if let CameraPath::Zoom { factor } = self.camera {
            if factor <= 0.0 {
                return Err(err!(Config, "scene {}: degenerate zoom factor {factor}", self.name));
            }
        }
        Ok(())
    }

    /// World coordinates seen by the center of pixel (px, py) in frame j.
    pub fn world_of(&self, j: usize, px: f64, py: f64) -> (f64, f64) {
        match self.camera {
            CameraPath::Pan { dx, dy } => (px + j as f64 * dx, py + j as f64 * dy),
            CameraPath::Zoom { factor } => {
                let s = crate::fmath::pow(factor, j as f64);
                let (cx, cy) = (self.width as f64 / 2.0, self.height as f64 / 2.0);
                (cx + (px - cx) / s, cy + (py - cy) / s)
            }
        }
    }

    /// Pixel coordinates in frame j that observe the given world point.
    pub fn pixel_of(&self, j: usize, wx: f64, wy: f64) -> (f64, f64) {
        match self.camera {
            CameraPath::Pan { dx, dy } => (wx - j as f64 * dx, wy - j as f64 * dy),
            CameraPath::Zoom { factor } => {
                let s = crate::fmath::pow(factor, j as f64);
                let (cx, cy) = (self.width as f64 / 2.0, self.height as f64 / 2.0);
                (cx + (wx - cx) * s, cy + (wy - cy) * s)
            }
        }
    }

    fn palette(&self, sel: PaletteSel) -> &[[u8; 3]] {
        match sel {
            PaletteSel::A => &self.palette_a,
            PaletteSel::B => &self.palette_b,
        }
    }

    /// Topmost part containing the world point, if any (painter's order).
    fn part_at(&self, wx: f64, wy: f64) -> Option<usize> {
        self.parts.iter().rposition(|p| p.contains(wx, wy))
    }

    pub fn render_frame(&self, sel: PaletteSel, j: usize) -> Frame {
        let pal = self.palette(sel);
        Frame::from_fn(self.width, self.height, |x, y| {
            let (wx, wy) = self.world_of(j, x as f64 + 0.5, y as f64 + 0.5);
            match self.part_at(wx, wy) {
                Some(i) => pal[i],
                None => self.background.color(wx, wy),
            }
        })
    }

    /// Per-pixel part ids for frame j: 0 = background, i+1 = part i.
    pub fn part_mask(&self, j: usize) -> Vec<u8> {
        let mut mask = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let (wx, wy) = self.world_of(j, x as f64 + 0.5, y as f64 + 0.5);
                mask.push(match self.part_at(wx, wy) {
                    Some(i) => (i + 1) as u8,
                    None => 0,
                });
            }
        }
        mask
    }
}

impl Default for SceneSpec {
    fn default() -> Self {
        bundled_scene("wagon", CameraPath::Pan { dx: 4.0, dy: 0.0 }, SceneScale::Standard)
    }
}

/// Exact per-frame ground truth: part masks (palette-independent) and the
/// renders under both palettes.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub masks: Vec<Vec<u8>>,
    pub renders_a: VideoSequence,
    pub renders_b: VideoSequence,
}

impl GroundTruth {
    pub fn render(&self, sel: PaletteSel) -> &VideoSequence {
        match sel {
            PaletteSel::A => &self.renders_a,
            PaletteSel::B => &self.renders_b,
        }
    }
}

/// Renders all frames under the requested palette, together with the full
/// ground-truth bundle.
pub fn render_sequence(spec: &SceneSpec, sel: PaletteSel) -> Result<(VideoSequence, GroundTruth)> {
    spec.validate()?;
    let a: Vec<Frame> = (0..spec.frames).map(|j| spec.render_frame(PaletteSel::A, j)).collect();
    let b: Vec<Frame> = (0..spec.frames).map(|j| spec.render_frame(PaletteSel::B, j)).collect();
    let masks: Vec<Vec<u8>> = (0..spec.frames).map(|j| spec.part_mask(j)).collect();
    let gt = GroundTruth {
        masks,
        renders_a: VideoSequence::new(a),
        renders_b: VideoSequence::new(b),
    };
    let seq = gt.render(sel).clone();
    Ok((seq, gt))
}

/// Rec. 601 luma, replicated to all three channels, rounded half-up.
pub fn grayscale_frame(f: &Frame) -> Frame {
    Frame::from_fn(f.width(), f.height(), |x, y| {
        let [r, g, b] = f.pixel(x, y);
        let yv = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
        let q = crate::fmath::round_half_up(yv).clamp(0.0, 255.0) as u8;
        [q, q, q]
    })
}

pub fn grayscale(seq: &VideoSequence) -> VideoSequence {
    VideoSequence::new(seq.frames.iter().map(grayscale_frame).collect())
}

/// Pixel mapping from frame j into frame i via the exact inverse camera
/// transform; `None` marks out-of-bounds destinations.
#[derive(Debug, Clone)]
pub struct FlowMap {
    pub width: usize,
    pub height: usize,
    /// For each frame-j pixel, the (x, y) pixel it came from in frame i.
    pub map: Vec<Option<(usize, usize)>>,
}

/// Exact correspondence between frames i and j of a scene: maps each pixel
/// of frame j to its source pixel in frame i.
pub fn ground_truth_flow(spec: &SceneSpec, i: usize, j: usize) -> Result<FlowMap> {
    if i >= spec.frames || j >= spec.frames {
        return Err(err!(Index, "flow: frames {i},{j} out of {}", spec.frames));
    }
    let (w, h) = (spec.width, spec.height);
    let mut map = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (wx, wy) = spec.world_of(j, x as f64 + 0.5, y as f64 + 0.5);
            let (px, py) = spec.pixel_of(i, wx, wy);
            let (ix, iy) = (crate::fmath::floor(px), crate::fmath::floor(py));
            if ix >= 0.0 && iy >= 0.0 && (ix as usize) < w && (iy as usize) < h {
                map.push(Some((ix as usize, iy as usize)));
            } else {
                map.push(None);
            }
        }
    }
    Ok(FlowMap { width: w, height: h, map })
}

/// Token-level flow on a patch grid: for each frame-j token, the frame-i
/// token its patch maps into, or `None` when any part of the mapped patch
/// leaves the canvas.
pub fn token_flow(spec: &SceneSpec, i: usize, j: usize, patch: usize) -> Result<Vec<Option<usize>>> {
    if spec.width % patch != 0 || spec.height % patch != 0 {
        return Err(err!(Config, "token_flow: canvas not divisible by patch {patch}"));
    }
    if i >= spec.frames || j >= spec.frames {
        return Err(err!(Index, "token_flow: frames {i},{j} out of {}", spec.frames));
    }
    let (tw, th) = (spec.width / patch, spec.height / patch);
    let mut out = Vec::with_capacity(tw * th);
    for ty in 0..th {
        for tx in 0..tw {
            let cx = (tx * patch) as f64 + patch as f64 / 2.0;
            let cy = (ty * patch) as f64 + patch as f64 / 2.0;
            let (wx, wy) = spec.world_of(j, cx, cy);
            let (px, py) = spec.pixel_of(i, wx, wy);
            // Reject tokens whose mapped patch spills off the canvas.
            let half = patch as f64 / 2.0;
            let inside = px - half >= 0.0
                && py - half >= 0.0
                && px + half <= spec.width as f64
                && py + half <= spec.height as f64;
            if !inside {
                out.push(None);
                continue;
            }
            let ttx = (((px - half) / patch as f64) + 0.5) as usize;
            let tty = (((py - half) / patch as f64) + 0.5) as usize;
            let (ttx, tty) = (ttx.min(tw - 1), tty.min(th - 1));
            out.push(Some(tty * tw + ttx));
        }
    }
    Ok(out)
}

/// Fraction of patch pixels covered by any object part, per token.
pub fn object_coverage(mask: &[u8], width: usize, height: usize, patch: usize) -> Vec<f64> {
    let (tw, th) = (width / patch, height / patch);
    let mut out = vec![0.0; tw * th];
    for ty in 0..th {
        for tx in 0..tw {
            let mut hits = 0usize;
            for dy in 0..patch {
                for dx in 0..patch {
                    if mask[(ty * patch + dy) * width + tx * patch + dx] != 0 {
                        hits += 1;
                    }
                }
            }
            out[ty * tw + tx] = hits as f64 / (patch * patch) as f64;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Bundled scenes
// ---------------------------------------------------------------------------

/// Canvas/tempo tiers for the bundled scenes. `Standard` matches the default
/// spec (48x48, 16 frames); `Compact` is the quick-evaluation tier (32x32,
/// 6-8 frames) used by the ablation suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneScale {
    Standard,
    Compact,
}

pub const BUNDLED_OBJECTS: [&str; 5] = ["wagon", "rocket", "house", "fish", "robot"];

fn gradient_bg() -> Background {
    Background::Gradient {
        offset: [150.0, 155.0, 170.0],
        gx: [0.55, 0.30, -0.35],
        gy: [-0.30, 0.45, 0.55],
    }
}

fn checker_bg() -> Background {
    Background::Checker {
        period: 8.0,
        base: [168, 168, 178],
        alt: [140, 146, 150],
    }
}

struct ObjectDef {
    parts: Vec<ShapeKind>,
    palette_a: Vec<[u8; 3]>,
    palette_b: Vec<[u8; 3]>,
}

/// Object geometry inside a box at (ox, oy) with side s.
fn object_def(name: &str, ox: f64, oy: f64, s: f64) -> ObjectDef {
    let u = s / 12.0; // object-local unit
    let rect = |x: f64, y: f64, w: f64, h: f64| ShapeKind::Rect {
        x: ox + x * u,
        y: oy + y * u,
        w: w * u,
        h: h * u,
    };
    let circle = |cx: f64, cy: f64, r: f64| ShapeKind::Circle {
        cx: ox + cx * u,
        cy: oy + cy * u,
        r: r * u,
    };
    let tri = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| ShapeKind::Triangle {
        a: [ox + a[0] * u, oy + a[1] * u],
        b: [ox + b[0] * u, oy + b[1] * u],
        c: [ox + c[0] * u, oy + c[1] * u],
    };
    match name {
        "wagon" => ObjectDef {
            parts: vec![
                rect(1.0, 4.0, 10.0, 4.5),
                tri([2.0, 4.0], [10.0, 4.0], [6.0, 0.5]),
                circle(3.5, 9.5, 2.0),
                circle(8.5, 9.5, 2.0),
            ],
            palette_a: vec![[122, 78, 44], [96, 110, 60], [70, 70, 80], [70, 70, 80]],
            palette_b: vec![[204, 44, 44], [232, 200, 48], [46, 88, 200], [46, 160, 90]],
        },
        "rocket" => ObjectDef {
            parts: vec![
                rect(4.5, 3.5, 3.0, 6.0),
                tri([4.5, 3.5], [7.5, 3.5], [6.0, 0.5]),
                tri([4.5, 9.5], [1.5, 11.5], [4.5, 6.5]),
                tri([7.5, 9.5], [10.5, 11.5], [7.5, 6.5]),
                circle(6.0, 5.5, 1.1),
            ],
            palette_a: vec![
                [130, 130, 140],
                [110, 60, 60],
                [90, 90, 60],
                [90, 90, 60],
                [60, 90, 110],
            ],
            palette_b: vec![
                [235, 235, 240],
                [220, 60, 36],
                [250, 140, 30],
                [255, 200, 40],
                [60, 200, 220],
            ],
        },
        "house" => ObjectDef {
            parts: vec![
                rect(2.0, 5.0, 8.0, 6.5),
                tri([1.0, 5.0], [11.0, 5.0], [6.0, 0.5]),
                rect(3.2, 7.5, 2.2, 4.0),
                circle(8.0, 7.5, 1.3),
            ],
            palette_a: vec![[150, 120, 90], [100, 70, 50], [80, 60, 40], [110, 120, 130]],
            palette_b: vec![[240, 220, 170], [200, 40, 60], [60, 140, 70], [80, 180, 240]],
        },
        "fish" => ObjectDef {
            parts: vec![
                circle(5.5, 6.0, 3.6),
                tri([8.2, 6.0], [11.5, 3.0], [11.5, 9.0]),
                tri([4.0, 4.0], [6.5, 2.0], [6.5, 5.0]),
                circle(3.8, 5.2, 0.9),
            ],
            palette_a: vec![[90, 110, 130], [80, 95, 110], [85, 100, 115], [50, 50, 60]],
            palette_b: vec![[250, 130, 40], [240, 70, 100], [255, 190, 60], [30, 30, 40]],
        },
        "robot" => ObjectDef {
            parts: vec![
                rect(3.0, 5.0, 6.0, 6.5),
                rect(3.8, 1.0, 4.4, 3.4),
                circle(5.0, 2.6, 0.8),
                circle(7.0, 2.6, 0.8),
                tri([5.2, 5.0], [6.8, 5.0], [6.0, 7.2]),
            ],
            palette_a: vec![
                [110, 115, 125],
                [95, 100, 112],
                [70, 60, 60],
                [70, 60, 60],
                [120, 95, 60],
            ],
            palette_b: vec![
                [70, 190, 160],
                [120, 90, 220],
                [255, 220, 60],
                [255, 120, 50],
                [230, 60, 120],
            ],
        },
        other => panic!("unknown bundled object {other}"),
    }
}

/// Builds a bundled scene for one object and camera path at the given tier.
///
/// Pans use patch-aligned per-frame steps (multiples of 4 px) so token-level
/// correspondence against the anchor frame is exact on every frame.
pub fn bundled_scene(object: &str, camera: CameraPath, scale: SceneScale) -> SceneSpec {
    let (size, frames) = match (scale, &camera) {
        (SceneScale::Standard, _) => (48usize, 16usize),
        (SceneScale::Compact, CameraPath::Pan { .. }) => (32, 6),
        (SceneScale::Compact, CameraPath::Zoom { .. }) => (32, 8),
    };
    // Pan moves scene content left over time, so the object starts on the
    // right side of the first frame and stays visible as long as possible.
    let (ox, oy, s) = match (&camera, scale) {
        (CameraPath::Pan { .. }, SceneScale::Compact) => (20.0, 9.0, 12.0),
        (CameraPath::Pan { .. }, SceneScale::Standard) => (32.0, 16.0, 14.0),
        (CameraPath::Zoom { .. }, SceneScale::Compact) => (9.5, 9.5, 13.0),
        (CameraPath::Zoom { .. }, SceneScale::Standard) => (16.0, 16.0, 16.0),
    };
    let def = object_def(object, ox, oy, s);
    let background = match object {
        "house" => checker_bg(),
        _ => gradient_bg(),
    };
    let cam_tag = match camera {
        CameraPath::Pan { .. } => "pan",
        CameraPath::Zoom { .. } => "zoom",
    };
    let scale_tag = match scale {
        SceneScale::Standard => "std",
        SceneScale::Compact => "c",
    };
    SceneSpec {
        name: alloc::format!("{object}_{cam_tag}_{scale_tag}"),
        parts: def.parts,
        background,
        palette_a: def.palette_a,
        palette_b: def.palette_b,
        camera,
        frames,
        width: size,
        height: size,
    }
}

/// Default camera for each path at a tier.
pub fn default_camera(pan: bool, scale: SceneScale) -> CameraPath {
    match (pan, scale) {
        (true, _) => CameraPath::Pan { dx: 4.0, dy: 0.0 },
        (false, SceneScale::Compact) => CameraPath::Zoom { factor: 1.045 },
        (false, SceneScale::Standard) => CameraPath::Zoom { factor: 1.03 },
    }
}

/// The five-scene evaluation set: three pans and two zooms over the five
/// bundled objects.
pub fn bundled_eval_set(scale: SceneScale) -> Vec<SceneSpec> {
    vec![
        bundled_scene("wagon", default_camera(true, scale), scale),
        bundled_scene("rocket", default_camera(false, scale), scale),
        bundled_scene("house", default_camera(true, scale), scale),
        bundled_scene("fish", default_camera(false, scale), scale),
        bundled_scene("robot", default_camera(true, scale), scale),
    ]
}

/// All bundled scenes at a tier: every object under both camera paths.
pub fn bundled_all(scale: SceneScale) -> Vec<SceneSpec> {
    let mut out = Vec::new();
    for object in BUNDLED_OBJECTS {
        out.push(bundled_scene(object, default_camera(true, scale), scale));
        out.push(bundled_scene(object, default_camera(false, scale), scale));
    }
    out
}

/// Looks up a bundled scene by its full name, for example `wagon_pan_c`.
pub fn bundled_by_name(name: &str) -> Option<SceneSpec> {
    for scale in [SceneScale::Standard, SceneScale::Compact] {
        for spec in bundled_all(scale) {
            if spec.name == name {
                return Some(spec);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pan_is_exact_pixel_shift() {
        let spec = bundled_scene("wagon", CameraPath::Pan { dx: 2.0, dy: 0.0 }, SceneScale::Standard);
        let f0 = spec.render_frame(PaletteSel::A, 0);
        let f3 = spec.render_frame(PaletteSel::A, 3);
        for y in 0..spec.height {
            for x in 0..spec.width - 6 {
                assert_eq!(f3.pixel(x, y), f0.pixel(x + 6, y), "at ({x},{y})");
            }
        }
    }

    #[test]
    fn masks_identical_across_palettes() {
        for spec in bundled_eval_set(SceneScale::Compact) {
            let (_, gt) = render_sequence(&spec, PaletteSel::A).unwrap();
            for j in 0..spec.frames {
                let fa = &gt.renders_a.frames[j];
                let fb = &gt.renders_b.frames[j];
                for y in 0..spec.height {
                    for x in 0..spec.width {
                        let id = gt.masks[j][y * spec.width + x] as usize;
                        if id == 0 {
                            assert_eq!(fa.pixel(x, y), fb.pixel(x, y));
                        } else {
                            assert_eq!(fa.pixel(x, y), spec.palette_a[id - 1]);
                            assert_eq!(fb.pixel(x, y), spec.palette_b[id - 1]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn default_spec_is_sixteen_48x48_frames() {
        let spec = SceneSpec::default();
        let (seq, _) = render_sequence(&spec, PaletteSel::A).unwrap();
        assert_eq!(seq.len(), 16);
        assert_eq!(seq.frames[0].width(), 48);
        assert_eq!(seq.frames[0].height(), 48);
    }

    #[test]
    fn render_is_deterministic() {
        let spec = bundled_scene("fish", default_camera(false, SceneScale::Compact), SceneScale::Compact);
        let a = spec.render_frame(PaletteSel::B, 5);
        let b = spec.render_frame(PaletteSel::B, 5);
        assert_eq!(a, b);
    }

    #[test]
    fn recolor_ground_truth_is_palette_map() {
        let spec = bundled_scene("robot", default_camera(true, SceneScale::Compact), SceneScale::Compact);
        let (_, gt) = render_sequence(&spec, PaletteSel::A).unwrap();
        for j in 0..spec.frames {
            let fa = &gt.renders_a.frames[j];
            let fb = &gt.renders_b.frames[j];
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let id = gt.masks[j][y * spec.width + x] as usize;
                    if id != 0 {
                        assert_eq!(fa.pixel(x, y), spec.palette_a[id - 1]);
                        assert_eq!(fb.pixel(x, y), spec.palette_b[id - 1]);
                    }
                }
            }
        }
    }

    #[test]
    fn grayscale_white_unchanged_red_luma() {
        let white = Frame::filled(8, 8, [255, 255, 255]);
        assert_eq!(grayscale_frame(&white), white);
        let red = Frame::filled(8, 8, [255, 0, 0]);
        assert_eq!(grayscale_frame(&red).pixel(0, 0), [76, 76, 76]);
    }

    #[test]
    fn grayscale_idempotent() {
        let spec = bundled_scene("house", default_camera(true, SceneScale::Compact), SceneScale::Compact);
        let f = spec.render_frame(PaletteSel::A, 2);
        let g1 = grayscale_frame(&f);
        let g2 = grayscale_frame(&g1);
        assert_eq!(g1, g2);
    }

    #[test]
    fn flow_identity_when_same_frame() {
        let spec = bundled_scene("wagon", default_camera(true, SceneScale::Compact), SceneScale::Compact);
        let flow = ground_truth_flow(&spec, 2, 2).unwrap();
        for y in 0..spec.height {
            for x in 0..spec.width {
                assert_eq!(flow.map[y * spec.width + x], Some((x, y)));
            }
        }
    }

    #[test]
    fn flow_pan_formula() {
        let spec = bundled_scene("wagon", CameraPath::Pan { dx: 2.0, dy: 0.0 }, SceneScale::Standard);
        let flow = ground_truth_flow(&spec, 0, 5).unwrap();
        for y in 0..spec.height {
            for x in 0..spec.width {
                let expect = if x + 10 < spec.width { Some((x + 10, y)) } else { None };
                assert_eq!(flow.map[y * spec.width + x], expect, "at ({x},{y})");
            }
        }
    }

    #[test]
    fn flow_out_of_range_frames_rejected() {
        let spec = bundled_scene("wagon", default_camera(true, SceneScale::Compact), SceneScale::Compact);
        assert!(ground_truth_flow(&spec, 0, 99).is_err());
    }

    #[test]
    fn zero_zoom_is_degenerate() {
        let mut spec = bundled_scene("fish", CameraPath::Zoom { factor: 0.0 }, SceneScale::Compact);
        spec.frames = 4;
        assert!(render_sequence(&spec, PaletteSel::A).is_err());
    }

    #[test]
    fn token_flow_matches_shift_on_aligned_pan() {
        let spec = bundled_scene("wagon", default_camera(true, SceneScale::Compact), SceneScale::Compact);
        let tf = token_flow(&spec, 0, 3, 4).unwrap();
        let tw = spec.width / 4;
        for ty in 0..spec.height / 4 {
            for tx in 0..tw {
                let got = tf[ty * tw + tx];
                // dx=4: frame-3 token (tx,ty) maps to token (tx+3,ty).
                let expect = if tx + 3 < tw { Some(ty * tw + tx + 3) } else { None };
                assert_eq!(got, expect);
            }
        }
    }
}
