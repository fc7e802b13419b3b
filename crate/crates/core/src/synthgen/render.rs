use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DomainSpec, DomainStyle, Image};
use crate::error::{LpsError, Result};
use crate::geometry::BoundingBox;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Garment {
    Hair,
    Upper,
    Lower,
}

impl Garment {
    pub const ALL: [Garment; 3] = [Garment::Hair, Garment::Upper, Garment::Lower];

    fn offset(self) -> usize {
        match self {
            Garment::Hair => 0,
            Garment::Upper => 3,
            Garment::Lower => 6,
        }
    }
}

/// Three RGB garment colors.
pub const APPEARANCE_DIM: usize = 9;

const COLOR_LO: f64 = 0.08;
const COLOR_HI: f64 = 0.95;

/// Identity base appearance vectors for one domain.
#[derive(Debug, Clone)]
pub struct IdentityBank {
    bases: Vec<[f64; APPEARANCE_DIM]>,
    stable_dims: Vec<usize>,
    jitter: f64,
}

impl IdentityBank {
    /// Base vectors come from a seeded hash of the identity id; candidates
    /// closer than `min_identity_separation` (over stable garments) to an
    /// earlier identity are re-hashed.
    pub fn new(spec: &DomainSpec) -> Result<Self> {
        let style = &spec.style;
        let stable_dims: Vec<usize> = Garment::ALL
            .iter()
            .filter(|g| !style.volatile_garments.contains(g))
            .flat_map(|g| g.offset()..g.offset() + 3)
            .collect();
        let mut bases: Vec<[f64; APPEARANCE_DIM]> = Vec::with_capacity(spec.num_identities);
        for k in 0..spec.num_identities {
            let id = spec.identity_id(k) as u64;
            let mut accepted = None;
            for attempt in 0..10_000u64 {
                let mut v = [0.0; APPEARANCE_DIM];
                for (d, x) in v.iter_mut().enumerate() {
                    *x = COLOR_LO + (COLOR_HI - COLOR_LO) * rng::hash_unit(spec.seed, &[id, attempt, d as u64]);
                }
                let ok = bases
                    .iter()
                    .all(|b| distance(b, &v, &stable_dims) >= style.min_identity_separation);
                if ok {
                    accepted = Some(v);
                    break;
                }
            }
            let v = accepted.ok_or_else(|| {
                LpsError::InvalidSpec(format!(
                    "cannot place {} identities at separation {}",
                    spec.num_identities, style.min_identity_separation
                ))
            })?;
            bases.push(v);
        }
        Ok(Self {
            bases,
            stable_dims,
            jitter: style.appearance_jitter,
        })
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn base(&self, k: usize) -> &[f64; APPEARANCE_DIM] {
        &self.bases[k]
    }

    /// Dimensions that carry identity in this domain.
    pub fn stable_dims(&self) -> &[usize] {
        &self.stable_dims
    }

    /// Distance restricted to the identity-bearing dimensions.
    pub fn identity_distance(&self, a: &[f64; APPEARANCE_DIM], b: &[f64; APPEARANCE_DIM]) -> f64 {
        distance(a, b, &self.stable_dims)
    }

    /// Appearance of one sighting: stable garments get Gaussian jitter
    /// truncated to the jitter radius, volatile garments are redrawn.
    pub fn sample_instance(&self, k: usize, rng: &mut impl Rng) -> [f64; APPEARANCE_DIM] {
        let mut v = self.bases[k];
        let noise: Vec<f64> = self
            .stable_dims
            .iter()
            .map(|_| StandardNormal.sample(rng))
            .collect::<Vec<f64>>();
        let norm = noise.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = if norm > 0.0 {
            // half-sigma Gaussian, truncated at the radius
            (0.5 * self.jitter).min(self.jitter / norm)
        } else {
            0.0
        };
        for (&d, n) in self.stable_dims.iter().zip(&noise) {
            v[d] += n * scale;
        }
        for d in 0..APPEARANCE_DIM {
            if !self.stable_dims.contains(&d) {
                v[d] = rng.gen_range(COLOR_LO..COLOR_HI);
            }
        }
        v
    }
}

fn distance(a: &[f64; APPEARANCE_DIM], b: &[f64; APPEARANCE_DIM], dims: &[usize]) -> f64 {
    dims.iter().map(|&d| (a[d] - b[d]).powi(2)).sum::<f64>().sqrt()
}

pub(super) fn background(style: &DomainStyle, rng: &mut impl Rng) -> Image {
    let (h, w) = (style.image_height, style.image_width);
    let mut img = Image::filled(h, w, 3, 0.0);
    let shift: f64 = rng.gen_range(-0.04..0.04);
    for y in 0..h {
        let ramp = style.background_gradient * (y as f64 / h as f64 - 0.5);
        for x in 0..w {
            for c in 0..3 {
                *img.at_mut(y, x, c) = (style.background[c] + ramp + shift).clamp(0.0, 1.0) as f32;
            }
        }
    }
    for _ in 0..style.clutter {
        let cw = rng.gen_range(3.0..(w as f64 / 4.0));
        let ch = rng.gen_range(3.0..(h as f64 / 4.0));
        let x1 = rng.gen_range(0.0..(w as f64 - cw));
        let y1 = rng.gen_range(0.0..(h as f64 - ch));
        let color: [f64; 3] = std::array::from_fn(|c| (style.background[c] + rng.gen_range(-0.25..0.25)).clamp(0.0, 1.0));
        fill_rect(&mut img, x1, y1, x1 + cw, y1 + ch, &color);
    }
    img
}

fn fill_rect(img: &mut Image, x1: f64, y1: f64, x2: f64, y2: f64, color: &[f64; 3]) {
    let ys = (y1.max(0.0).round() as usize)..(y2.min(img.height as f64).round() as usize);
    let xs = (x1.max(0.0).round() as usize)..(x2.min(img.width as f64).round() as usize);
    for y in ys {
        for x in xs.clone() {
            for c in 0..3 {
                *img.at_mut(y, x, c) = color[c] as f32;
            }
        }
    }
}

/// Hair ellipse over a torso block over two legs, filling `bbox`.
pub(super) fn draw_person(img: &mut Image, bbox: &BoundingBox, appearance: &[f64; APPEARANCE_DIM], style: &DomainStyle) {
    let tinted = |g: Garment| -> [f64; 3] {
        let o = g.offset();
        std::array::from_fn(|c| (appearance[o + c] * style.tint[c]).clamp(0.0, 1.0))
    };
    let (hair, upper, lower) = (tinted(Garment::Hair), tinted(Garment::Upper), tinted(Garment::Lower));
    let (w, h) = (bbox.width(), bbox.height());
    let (cx, _) = bbox.center();
    let y_of = |f: f64| bbox.y1 + f * h;

    // head
    let (hcy, hry, hrx) = (y_of(0.11), 0.11 * h, 0.3 * w);
    let ys = (hcy - hry).floor().max(0.0) as usize..((hcy + hry).ceil() as usize).min(img.height);
    for y in ys {
        for x in (cx - hrx).floor().max(0.0) as usize..((cx + hrx).ceil() as usize).min(img.width) {
            let dy = (y as f64 + 0.5 - hcy) / hry;
            let dx = (x as f64 + 0.5 - cx) / hrx;
            if dx * dx + dy * dy <= 1.0 {
                for c in 0..3 {
                    *img.at_mut(y, x, c) = hair[c] as f32;
                }
            }
        }
    }
    fill_rect(img, bbox.x1, y_of(0.22), bbox.x2, y_of(0.58), &upper);
    fill_rect(img, bbox.x1 + 0.05 * w, y_of(0.58), cx - 0.06 * w, bbox.y2, &lower);
    fill_rect(img, cx + 0.06 * w, y_of(0.58), bbox.x2 - 0.05 * w, bbox.y2, &lower);
}

pub(super) fn add_noise(img: &mut Image, std: f64, rng: &mut impl Rng) {
    if std <= 0.0 {
        return;
    }
    for v in img.data.iter_mut() {
        let n: f64 = StandardNormal.sample(rng);
        *v = (*v as f64 + std * n).clamp(0.0, 1.0) as f32;
    }
}
