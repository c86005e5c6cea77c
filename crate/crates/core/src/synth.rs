//! Seeded synthetic scenes: textured static backgrounds with uniformly
//! coloured rectangular actors that translate by whole pixels per frame.
//!
//! The action class is carried by the motion pattern: class 0 moves
//! horizontally, class 1 vertically and class 2 diagonally.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::geom::BBox;
use crate::tensor::Tensor;

pub const MAX_CLASSES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actor {
    /// Rectangle at frame 0.
    pub rect: BBox,
    /// Pixels per frame.
    pub velocity: (i32, i32),
    pub color: [u8; 3],
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Number of random actors; ignored when `placed` is non-empty.
    pub actors: usize,
    pub min_size: usize,
    pub max_size: usize,
    /// Speeds are drawn from `1..=max_speed`; zero makes every actor static.
    pub max_speed: i32,
    pub classes: usize,
    pub placed: Vec<Actor>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 64,
            width: 64,
            frames: 8,
            actors: 1,
            min_size: 16,
            max_size: 28,
            max_speed: 3,
            classes: 2,
            placed: Vec::new(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.frames == 0 {
            return Err(Error::invalid("scene dimensions and frame count must be positive"));
        }
        if self.classes == 0 || self.classes > MAX_CLASSES {
            return Err(Error::invalid(format!("classes must be in 1..={MAX_CLASSES}")));
        }
        if self.max_speed < 0 {
            return Err(Error::invalid("max_speed must be non-negative"));
        }
        if self.placed.is_empty() && self.actors > 0 {
            if self.min_size == 0 || self.min_size > self.max_size {
                return Err(Error::invalid("actor sizes must satisfy 0 < min_size <= max_size"));
            }
            if self.max_size > self.height || self.max_size > self.width {
                return Err(Error::invalid(format!(
                    "actor size {} exceeds the {}x{} image",
                    self.max_size, self.height, self.width
                )));
            }
        }
        for a in &self.placed {
            let r = a.rect;
            if r.is_empty() || r.x1 < 0 || r.y1 < 0 || r.x2 as usize > self.width || r.y2 as usize > self.height {
                return Err(Error::invalid(format!("actor {r:?} does not fit the {}x{} image", self.height, self.width)));
            }
            if a.class >= self.classes {
                return Err(Error::invalid(format!("actor class {} >= {}", a.class, self.classes)));
            }
        }
        Ok(())
    }
}

/// A rendered still image with exact boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticImage {
    pub image: Tensor<f32>,
    pub boxes: Vec<BBox>,
    pub classes: Vec<usize>,
}

/// A rendered clip. `flows[t]` is the displacement from frame `t` to frame
/// `t + 1` (the motion after the last frame is simulated one step further).
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticVideo {
    pub frames: Vec<Tensor<f32>>,
    pub flows: Vec<FlowField>,
    /// `boxes[t][k]` is actor `k` at frame `t`.
    pub boxes: Vec<Vec<BBox>>,
    pub actors: Vec<Actor>,
}

impl SyntheticVideo {
    /// Class of the first actor, if any.
    pub fn label(&self) -> Option<usize> {
        self.actors.first().map(|a| a.class)
    }
}

fn u8_unit(q: u8) -> f32 {
    q as f32 / 255.0
}

/// Low-contrast texture from a few random plane waves plus per-pixel noise,
/// quantized to 8 bits and kept below 0.5.
fn background(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<[u8; 3]> {
    let waves: Vec<(f32, f32, f32, [f32; 3])> = (0..3)
        .map(|_| {
            (
                rng.random_range(-0.6f32..0.6),
                rng.random_range(-0.6f32..0.6),
                rng.random_range(0.0f32..std::f32::consts::TAU),
                [rng.random_range(0.0f32..0.08), rng.random_range(0.0f32..0.08), rng.random_range(0.0f32..0.08)],
            )
        })
        .collect();
    let base: [f32; 3] = [rng.random_range(0.1..0.25), rng.random_range(0.1..0.25), rng.random_range(0.1..0.25)];
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let mut px = [0u8; 3];
            for (ch, p) in px.iter_mut().enumerate() {
                let mut v = base[ch];
                for (fx, fy, phase, amp) in &waves {
                    v += amp[ch] * (fx * c as f32 + fy * r as f32 + phase).sin();
                }
                v += rng.random_range(-0.05f32..0.05);
                *p = (v.clamp(0.0, 0.49) * 255.0).round() as u8;
            }
            out.push(px);
        }
    }
    out
}

fn random_actor(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> Actor {
    let side = |rng: &mut ChaCha8Rng| rng.random_range(cfg.min_size..=cfg.max_size) as i32;
    let (aw, ah) = (side(rng), side(rng));
    let x1 = rng.random_range(0..=cfg.width as i32 - aw);
    let y1 = rng.random_range(0..=cfg.height as i32 - ah);
    let class = rng.random_range(0..cfg.classes);
    let speed = if cfg.max_speed == 0 { 0 } else { rng.random_range(1..=cfg.max_speed) };
    let sign = if rng.random_bool(0.5) { 1 } else { -1 };
    let velocity = match class {
        0 => (sign * speed, 0),
        1 => (0, sign * speed),
        _ => (sign * speed, if rng.random_bool(0.5) { speed } else { -speed }),
    };
    // bright: one channel saturated high, the others anywhere above the background
    let mut color = [0u8; 3];
    for c in color.iter_mut() {
        *c = rng.random_range(140..=255);
    }
    color[rng.random_range(0..3)] = rng.random_range(220..=255);
    Actor {
        rect: BBox::new(x1, y1, x1 + aw, y1 + ah),
        velocity,
        color,
        class,
    }
}

/// Advance one axis by `v`, reflecting off `0..=limit`.
fn reflect(pos: i32, v: i32, limit: i32) -> (i32, i32) {
    if limit <= 0 {
        return (0, v);
    }
    let mut p = pos + v;
    let mut v = v;
    // speeds never exceed the free range by more than one bounce in practice,
    // but loop for safety
    while p < 0 || p > limit {
        if p < 0 {
            p = -p;
        } else {
            p = 2 * limit - p;
        }
        v = -v;
    }
    (p, v)
}

fn trajectory(actor: &Actor, steps: usize, h: usize, w: usize) -> Vec<BBox> {
    let (aw, ah) = (actor.rect.width() as i32, actor.rect.height() as i32);
    let (mut x, mut y) = (actor.rect.x1, actor.rect.y1);
    let (mut vx, mut vy) = actor.velocity;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        out.push(BBox::new(x, y, x + aw, y + ah));
        (x, vx) = reflect(x, vx, w as i32 - aw);
        (y, vy) = reflect(y, vy, h as i32 - ah);
    }
    out
}

fn render(bg: &[[u8; 3]], h: usize, w: usize, actors: &[(Actor, BBox)]) -> Tensor<f32> {
    let mut px = bg.to_vec();
    for (a, b) in actors {
        for y in b.y1..b.y2 {
            for x in b.x1..b.x2 {
                px[y as usize * w + x as usize] = a.color;
            }
        }
    }
    Tensor::new(h, w, 3, px.iter().flat_map(|p| p.map(u8_unit)).collect()).expect("sized buffer")
}

fn actors_for(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> Vec<Actor> {
    if cfg.placed.is_empty() {
        (0..cfg.actors).map(|_| random_actor(rng, cfg)).collect()
    } else {
        cfg.placed.clone()
    }
}

/// A still image: the first frame of the scene described by `config`.
pub fn gen_action_image(seed: u64, config: &SceneConfig) -> Result<SyntheticImage> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = background(&mut rng, config.height, config.width);
    let actors = actors_for(&mut rng, config);
    let placed: Vec<(Actor, BBox)> = actors.iter().map(|a| (*a, a.rect)).collect();
    Ok(SyntheticImage {
        image: render(&bg, config.height, config.width, &placed),
        boxes: actors.iter().map(|a| a.rect).collect(),
        classes: actors.iter().map(|a| a.class).collect(),
    })
}

/// A clip of `config.frames` frames with exact flow. Actors later in the list
/// are drawn on top; the flow inside overlapping regions is that of the
/// topmost actor.
pub fn gen_action_video(seed: u64, config: &SceneConfig) -> Result<SyntheticVideo> {
    config.validate()?;
    let (h, w, t) = (config.height, config.width, config.frames);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = background(&mut rng, h, w);
    let actors = actors_for(&mut rng, config);
    let tracks: Vec<Vec<BBox>> = actors.iter().map(|a| trajectory(a, t + 1, h, w)).collect();

    let mut frames = Vec::with_capacity(t);
    let mut flows = Vec::with_capacity(t);
    let mut boxes = Vec::with_capacity(t);
    for f in 0..t {
        let here: Vec<(Actor, BBox)> = actors.iter().zip(&tracks).map(|(a, tr)| (*a, tr[f])).collect();
        frames.push(render(&bg, h, w, &here));
        let mut u = vec![0.0f32; h * w];
        let mut v = vec![0.0f32; h * w];
        for tr in &tracks {
            let (b, next) = (tr[f], tr[f + 1]);
            let (du, dv) = ((next.x1 - b.x1) as f32, (next.y1 - b.y1) as f32);
            for y in b.y1..b.y2 {
                for x in b.x1..b.x2 {
                    let i = y as usize * w + x as usize;
                    u[i] = du;
                    v[i] = dv;
                }
            }
        }
        flows.push(FlowField::new(h, w, u, v)?);
        boxes.push(here.iter().map(|(_, b)| *b).collect());
    }
    Ok(SyntheticVideo {
        frames,
        flows,
        boxes,
        actors,
    })
}

/// `count` videos with seeds drawn from a stream seeded by `seed`.
pub fn gen_video_set(seed: u64, count: usize, config: &SceneConfig) -> Result<Vec<SyntheticVideo>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..count).map(|_| rng.random()).collect();
    seeds.iter().map(|&s| gen_action_video(s, config)).collect()
}
