//! Procedural sprite scenes with exact ground-truth flow and instance masks.
//!
//! Sprites move rigidly (constant translation + rotation), so the
//! displacement of every scene point between two frames is available in
//! closed form. Frames are rendered by compositing textured sprites over a
//! textured background with bilinear sampling of materialized texture maps.
//! Textures are band-limited noise: three random sinusoids per channel.

use super::{DataError, FlowField, ImageF32, LabelGrid};
use crate::numerics::RngStream;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub sprites_min: usize,
    pub sprites_max: usize,
    /// Max sprite translation speed, px/frame.
    pub max_speed: f32,
    /// Max sprite rotation speed, rad/frame.
    pub max_spin: f32,
    /// Probability that a sequence is fully static.
    pub static_prob: f32,
    /// Give the background a small constant drift (camera pan).
    pub camera_pan: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 128,
            width: 128,
            frames: 12,
            sprites_min: 1,
            sprites_max: 4,
            max_speed: 6.0,
            max_spin: 0.15,
            static_prob: 0.1,
            camera_pan: false,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.height == 0 || self.width == 0 || self.frames == 0 {
            return Err(DataError::InvalidConfig(format!(
                "non-positive dims {}x{}x{}",
                self.height, self.width, self.frames
            )));
        }
        if self.sprites_max == 0 && self.static_prob < 1.0 {
            return Err(DataError::InvalidConfig(
                "no sprites with static_prob < 1".into(),
            ));
        }
        if self.sprites_min > self.sprites_max {
            return Err(DataError::InvalidConfig(format!(
                "sprites_min {} > sprites_max {}",
                self.sprites_min, self.sprites_max
            )));
        }
        if !(0.0..=1.0).contains(&self.static_prob) {
            return Err(DataError::InvalidConfig("static_prob outside [0,1]".into()));
        }
        if self.max_speed < 0.0 || self.max_spin < 0.0 {
            return Err(DataError::InvalidConfig("negative motion bound".into()));
        }
        Ok(())
    }
}

/// One sinusoid of a band-limited texture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    pub amp: f32,
    pub freq_x: f32,
    pub freq_y: f32,
    pub phase: f32,
}

/// Band-limited noise texture: three sinusoids per RGB channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    pub waves: Vec<Wave>, // len 9, indexed channel*3 + k
}

impl Texture {
    pub fn random(rng: &mut RngStream) -> Texture {
        let mut waves = Vec::with_capacity(9);
        for _ in 0..9 {
            let wavelength = rng.next_range(6.0, 24.0);
            let dir = rng.next_range(0.0, std::f32::consts::TAU);
            let k = std::f32::consts::TAU / wavelength;
            waves.push(Wave {
                amp: rng.next_range(0.05, 0.15),
                freq_x: k * dir.cos(),
                freq_y: k * dir.sin(),
                phase: rng.next_range(0.0, std::f32::consts::TAU),
            });
        }
        Texture { waves }
    }

    fn eval(&self, channel: usize, x: f32, y: f32) -> f32 {
        let mut v = 0.5f32;
        for w in &self.waves[channel * 3..channel * 3 + 3] {
            v += w.amp * (w.freq_x * x + w.freq_y * y + w.phase).sin();
        }
        v.clamp(0.0, 1.0)
    }
}

/// Discrete texture map sampled bilinearly at render time.
struct TextureMap {
    size_x: usize,
    size_y: usize,
    origin_x: f32,
    origin_y: f32,
    data: Vec<f32>, // size_y * size_x * 3
}

impl TextureMap {
    fn materialize(tex: &Texture, extent_x: f32, extent_y: f32) -> TextureMap {
        let size_x = (2.0 * extent_x).ceil() as usize + 3;
        let size_y = (2.0 * extent_y).ceil() as usize + 3;
        let origin_x = (size_x - 1) as f32 / 2.0;
        let origin_y = (size_y - 1) as f32 / 2.0;
        let mut data = vec![0.0f32; size_x * size_y * 3];
        for ty in 0..size_y {
            for tx in 0..size_x {
                let x = tx as f32 - origin_x;
                let y = ty as f32 - origin_y;
                for c in 0..3 {
                    data[(ty * size_x + tx) * 3 + c] = tex.eval(c, x, y);
                }
            }
        }
        TextureMap {
            size_x,
            size_y,
            origin_x,
            origin_y,
            data,
        }
    }

    /// Bilinear sample at texture-space coordinates (centered at the origin).
    fn sample(&self, x: f32, y: f32, out: &mut [f32; 3]) {
        let fx = (x + self.origin_x).clamp(0.0, (self.size_x - 1) as f32);
        let fy = (y + self.origin_y).clamp(0.0, (self.size_y - 1) as f32);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.size_x - 1);
        let y1 = (y0 + 1).min(self.size_y - 1);
        let ax = fx - x0 as f32;
        let ay = fy - y0 as f32;
        for c in 0..3 {
            let v00 = self.data[(y0 * self.size_x + x0) * 3 + c];
            let v01 = self.data[(y0 * self.size_x + x1) * 3 + c];
            let v10 = self.data[(y1 * self.size_x + x0) * 3 + c];
            let v11 = self.data[(y1 * self.size_x + x1) * 3 + c];
            out[c] = (1.0 - ay) * ((1.0 - ax) * v00 + ax * v01) + ay * ((1.0 - ax) * v10 + ax * v11);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpriteShape {
    Disk,
    Square,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sprite {
    pub shape: SpriteShape,
    /// Radius (disk) or half-side (square), px.
    pub size: f32,
    pub center0: (f32, f32),
    pub velocity: (f32, f32),
    pub angle0: f32,
    pub spin: f32,
    pub texture: Texture,
}

impl Sprite {
    pub fn center(&self, t: usize) -> (f32, f32) {
        (
            self.center0.0 + self.velocity.0 * t as f32,
            self.center0.1 + self.velocity.1 * t as f32,
        )
    }

    pub fn angle(&self, t: usize) -> f32 {
        self.angle0 + self.spin * t as f32
    }

    fn contains_local(&self, lx: f32, ly: f32) -> bool {
        match self.shape {
            SpriteShape::Disk => lx * lx + ly * ly <= self.size * self.size,
            SpriteShape::Square => lx.abs() <= self.size && ly.abs() <= self.size,
        }
    }
}

/// Full parametric scene state; the authority for rendering and flow.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Background drift velocity (camera pan), px/frame.
    pub pan: (f32, f32),
    pub background: Texture,
    pub sprites: Vec<Sprite>,
}

/// Frame sequence with masks and the scene that produced them. `flows`
/// carries externally ingested fields; oracle flow is computed on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub frames: Vec<ImageF32>,
    pub masks: Vec<LabelGrid>,
    pub scene: Scene,
    pub flows: BTreeMap<(usize, usize), FlowField>,
}

impl VideoSample {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}

pub fn generate_sequence(config: &SceneConfig, seed: u64) -> Result<VideoSample, DataError> {
    config.validate()?;
    let root = RngStream::new(seed);
    let is_static = root.child("static", 0).next_uniform() < config.static_prob;

    let background = Texture::random(&mut root.child("background", 0));
    let pan = if config.camera_pan && !is_static {
        let mut prng = root.child("pan", 0);
        let angle = prng.next_range(0.0, std::f32::consts::TAU);
        let speed = prng.next_range(0.3, 1.0);
        (speed * angle.cos(), speed * angle.sin())
    } else {
        (0.0, 0.0)
    };

    let n_sprites = if config.sprites_max == 0 {
        0
    } else {
        let mut srng = root.child("count", 0);
        config.sprites_min + srng.next_index(config.sprites_max - config.sprites_min + 1)
    };

    let min_dim = config.width.min(config.height) as f32;
    let span = (config.frames - 1) as f32;
    let mut sprites: Vec<Sprite> = Vec::with_capacity(n_sprites);
    for k in 0..n_sprites {
        let mut rng = root.child("sprite", k as u64);
        let shape = if rng.next_uniform() < 0.5 {
            SpriteShape::Disk
        } else {
            SpriteShape::Square
        };
        let size = rng.next_range(0.08 * min_dim, 0.17 * min_dim);
        let texture = Texture::random(&mut rng);
        let angle0 = rng.next_range(0.0, std::f32::consts::TAU);
        let (spin, mut velocity) = if is_static {
            (0.0, (0.0, 0.0))
        } else {
            let spin = rng.next_range(-config.max_spin, config.max_spin);
            let dir = rng.next_range(0.0, std::f32::consts::TAU);
            let speed = rng.next_range(0.25 * config.max_speed, config.max_speed);
            (spin, (speed * dir.cos(), speed * dir.sin()))
        };
        // keep the whole trajectory inside the frame (rotation-safe margin)
        let margin = size * std::f32::consts::SQRT_2 + 1.0;
        let usable_x = (config.width - 1) as f32 - 2.0 * margin;
        let usable_y = (config.height - 1) as f32 - 2.0 * margin;
        if usable_x <= 0.0 || usable_y <= 0.0 {
            return Err(DataError::InvalidConfig(format!(
                "frame {}x{} too small for sprite size {size}",
                config.width, config.height
            )));
        }
        if span > 0.0 {
            let cap_x = usable_x / span;
            let cap_y = usable_y / span;
            if velocity.0.abs() > cap_x {
                velocity.0 = velocity.0.signum() * cap_x;
            }
            if velocity.1.abs() > cap_y {
                velocity.1 = velocity.1.signum() * cap_y;
            }
        }
        let lo_x = margin + (-velocity.0 * span).max(0.0);
        let hi_x = (config.width - 1) as f32 - margin - (velocity.0 * span).max(0.0);
        let lo_y = margin + (-velocity.1 * span).max(0.0);
        let hi_y = (config.height - 1) as f32 - margin - (velocity.1 * span).max(0.0);
        // prefer initial placements clear of earlier sprites
        let mut center0 = (0.0f32, 0.0f32);
        for attempt in 0..20 {
            center0 = (rng.next_range(lo_x, hi_x), rng.next_range(lo_y, hi_y));
            let clear = sprites.iter().all(|s| {
                let dx = s.center0.0 - center0.0;
                let dy = s.center0.1 - center0.1;
                let min_dist = 0.9 * (s.size + size);
                dx * dx + dy * dy >= min_dist * min_dist
            });
            if clear || attempt == 19 {
                break;
            }
        }
        sprites.push(Sprite {
            shape,
            size,
            center0,
            velocity,
            angle0,
            spin,
            texture,
        });
    }

    let scene = Scene {
        height: config.height,
        width: config.width,
        frames: config.frames,
        pan,
        background,
        sprites,
    };
    Ok(render_sample(scene))
}

/// Render frames and masks from a parametric scene.
pub(crate) fn render_sample(scene: Scene) -> VideoSample {
    let bg_pad = ((scene.pan.0.abs().max(scene.pan.1.abs())) * (scene.frames - 1) as f32).ceil();
    let bg_map = TextureMap::materialize(
        &scene.background,
        (scene.width as f32 + 2.0 * bg_pad) / 2.0,
        (scene.height as f32 + 2.0 * bg_pad) / 2.0,
    );
    let bg_center = ((scene.width - 1) as f32 / 2.0, (scene.height - 1) as f32 / 2.0);
    let sprite_maps: Vec<TextureMap> = scene
        .sprites
        .iter()
        .map(|s| TextureMap::materialize(&s.texture, s.size + 1.0, s.size + 1.0))
        .collect();

    let mut frames = Vec::with_capacity(scene.frames);
    let mut masks = Vec::with_capacity(scene.frames);
    for t in 0..scene.frames {
        let poses: Vec<((f32, f32), f32, f32)> = scene
            .sprites
            .iter()
            .map(|s| {
                let a = s.angle(t);
                (s.center(t), a.cos(), a.sin())
            })
            .collect();
        let mut frame = ImageF32::zeros(scene.height, scene.width);
        let mut mask = LabelGrid::zeros(scene.height, scene.width);
        let mut rgb = [0.0f32; 3];
        for y in 0..scene.height {
            for x in 0..scene.width {
                let (px, py) = (x as f32, y as f32);
                let mut id = 0u8;
                for k in (0..scene.sprites.len()).rev() {
                    let ((cx, cy), cos_a, sin_a) = poses[k];
                    let dx = px - cx;
                    let dy = py - cy;
                    let lx = cos_a * dx + sin_a * dy;
                    let ly = -sin_a * dx + cos_a * dy;
                    if scene.sprites[k].contains_local(lx, ly) {
                        sprite_maps[k].sample(lx, ly, &mut rgb);
                        id = (k + 1) as u8;
                        break;
                    }
                }
                if id == 0 {
                    bg_map.sample(
                        px + scene.pan.0 * t as f32 - bg_center.0,
                        py + scene.pan.1 * t as f32 - bg_center.1,
                        &mut rgb,
                    );
                }
                for c in 0..3 {
                    frame.set(y, x, c, rgb[c]);
                }
                mask.set(y, x, id);
            }
        }
        frames.push(frame);
        masks.push(mask);
    }
    VideoSample {
        frames,
        masks,
        scene,
        flows: BTreeMap::new(),
    }
}

/// Topmost sprite id at a (possibly fractional) point, 0 for background.
pub fn visible_id_at(scene: &Scene, t: usize, x: f32, y: f32) -> u8 {
    for k in (0..scene.sprites.len()).rev() {
        let s = &scene.sprites[k];
        let (cx, cy) = s.center(t);
        let a = s.angle(t);
        let (dx, dy) = (x - cx, y - cy);
        let lx = a.cos() * dx + a.sin() * dy;
        let ly = -a.sin() * dx + a.cos() * dy;
        if s.contains_local(lx, ly) {
            return (k + 1) as u8;
        }
    }
    0
}

/// Displacement of the scene point visible at `(x, y)` in frame `t` towards
/// frame `tp`, regardless of its visibility in `tp`.
pub fn point_flow(scene: &Scene, t: usize, tp: usize, x: f32, y: f32) -> (f32, f32) {
    let id = visible_id_at(scene, t, x, y);
    point_flow_for_id(scene, t, tp, x, y, id)
}

fn point_flow_for_id(scene: &Scene, t: usize, tp: usize, x: f32, y: f32, id: u8) -> (f32, f32) {
    if id == 0 {
        let dt = t as f32 - tp as f32;
        return (scene.pan.0 * dt, scene.pan.1 * dt);
    }
    let s = &scene.sprites[id as usize - 1];
    let (cx_t, cy_t) = s.center(t);
    let (cx_p, cy_p) = s.center(tp);
    let dtheta = s.spin * (tp as f32 - t as f32);
    let (cos_d, sin_d) = (dtheta.cos(), dtheta.sin());
    let (rx, ry) = (x - cx_t, y - cy_t);
    let nx = cx_p + cos_d * rx - sin_d * ry;
    let ny = cy_p + sin_d * rx + cos_d * ry;
    (nx - x, ny - y)
}

/// Exact flow from frame `t` to frame `tp`. Occluded pixels carry the
/// displacement of the scene point the mask assigns them in frame `t`.
pub fn oracle_flow(sample: &VideoSample, t: usize, tp: usize) -> Result<FlowField, DataError> {
    let n = sample.num_frames();
    if t >= n || tp >= n {
        return Err(DataError::OutOfRange(format!(
            "frame pair ({t}, {tp}) outside 0..{n}"
        )));
    }
    let scene = &sample.scene;
    let mut flow = FlowField::zeros(scene.width, scene.height);
    if t == tp {
        return Ok(flow);
    }
    let mask = &sample.masks[t];
    for y in 0..scene.height {
        for x in 0..scene.width {
            let id = mask.get(y, x);
            let (u, v) = point_flow_for_id(scene, t, tp, x as f32, y as f32, id);
            flow.set(y, x, u, v);
        }
    }
    Ok(flow)
}
