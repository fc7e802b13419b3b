//! Reproducible synthetic multi-domain person-search scenes.
//!
//! Every identity is a simple glyph (hair, upper garment, lower garment)
//! whose colors come from a seeded hash of the identity id plus bounded
//! per-instance jitter. Domains differ in background palette, noise,
//! person scale, illumination tint and which garments change between
//! sightings of the same person.

pub(crate) mod io;
mod render;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LpsError, Result};
use crate::geometry::{iou, BoundingBox};
use crate::rng;

pub use io::{load_dataset, save_dataset, MANIFEST_FILE};
pub use render::{Garment, IdentityBank, APPEARANCE_DIM};

/// Identity ids are `domain_id * ID_STRIDE + k`, unique across domains.
pub const ID_STRIDE: u32 = 100_000;

/// Ground-truth identity of a person instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "i64", into = "i64")]
pub enum Identity {
    Labeled(u32),
    Unlabeled,
}

impl Identity {
    /// Sentinel used in annotation records.
    pub const UNLABELED_SENTINEL: i64 = -1;

    pub fn label(self) -> Option<u32> {
        match self {
            Identity::Labeled(id) => Some(id),
            Identity::Unlabeled => None,
        }
    }

    pub fn is_labeled(self) -> bool {
        matches!(self, Identity::Labeled(_))
    }
}

impl From<i64> for Identity {
    fn from(v: i64) -> Self {
        if v < 0 {
            Identity::Unlabeled
        } else {
            Identity::Labeled(v as u32)
        }
    }
}

impl From<Identity> for i64 {
    fn from(v: Identity) -> Self {
        match v {
            Identity::Labeled(id) => id as i64,
            Identity::Unlabeled => Identity::UNLABELED_SENTINEL,
        }
    }
}

/// Row-major H x W x C image with values in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize, c: usize) -> &mut f32 {
        &mut self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn hflip(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    *out.at_mut(y, x, c) = self.at(y, self.width - 1 - x, c);
                }
            }
        }
        out
    }

    /// Per-channel mean.
    pub fn channel_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0f64; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (s, &v) in sums.iter_mut().zip(px) {
                *s += v as f64;
            }
        }
        let n = (self.height * self.width) as f64;
        sums.into_iter().map(|s| s / n).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSample {
    pub image: Image,
    pub gt_boxes: Vec<BoundingBox>,
    pub gt_identities: Vec<Identity>,
    pub domain_id: u32,
}

impl SceneSample {
    pub fn hflip(&self) -> SceneSample {
        let w = self.image.width as f64;
        SceneSample {
            image: self.image.hflip(),
            gt_boxes: self.gt_boxes.iter().map(|b| b.hflip(w)).collect(),
            gt_identities: self.gt_identities.clone(),
            domain_id: self.domain_id,
        }
    }

    pub fn labeled_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.gt_identities.iter().filter_map(|i| i.label())
    }

    pub fn num_labeled(&self) -> usize {
        self.labeled_ids().count()
    }
}

/// Visual style of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStyle {
    pub image_height: usize,
    pub image_width: usize,
    /// Mean background color.
    pub background: [f64; 3],
    /// Vertical brightness ramp added to the background.
    pub background_gradient: f64,
    /// Number of random rectangles drawn behind persons.
    pub clutter: usize,
    /// Std-dev of per-pixel Gaussian noise.
    pub noise_std: f64,
    /// Person box height range in pixels.
    pub person_height: (f64, f64),
    /// Person width as a fraction of its height.
    pub person_aspect: f64,
    pub persons_per_scene: (usize, usize),
    /// Multiplicative illumination tint on person colors.
    pub tint: [f64; 3],
    /// Garments re-drawn at random on every sighting.
    #[serde(default)]
    pub volatile_garments: Vec<Garment>,
    /// Minimum distance between identity base vectors.
    pub min_identity_separation: f64,
    /// Radius bound of per-instance appearance jitter.
    pub appearance_jitter: f64,
    /// Largest IoU allowed between two persons when placing them.
    pub max_person_overlap: f64,
}

impl DomainStyle {
    /// Built-in styles with distinct palettes, scales and cues.
    pub fn preset(index: usize) -> DomainStyle {
        let base = DomainStyle {
            image_height: 64,
            image_width: 64,
            background: [0.25, 0.3, 0.25],
            background_gradient: 0.1,
            clutter: 3,
            noise_std: 0.02,
            person_height: (16.0, 26.0),
            person_aspect: 0.45,
            persons_per_scene: (2, 5),
            tint: [1.0, 1.0, 1.0],
            volatile_garments: Vec::new(),
            min_identity_separation: 0.35,
            appearance_jitter: 0.06,
            max_person_overlap: 0.25,
        };
        match index % 3 {
            0 => base,
            1 => DomainStyle {
                background: [0.62, 0.58, 0.5],
                background_gradient: -0.15,
                clutter: 5,
                noise_std: 0.05,
                person_height: (28.0, 40.0),
                persons_per_scene: (1, 3),
                tint: [0.85, 0.9, 1.15],
                volatile_garments: vec![Garment::Upper],
                ..base
            },
            _ => DomainStyle {
                background: [0.35, 0.35, 0.55],
                background_gradient: 0.05,
                clutter: 4,
                noise_std: 0.035,
                person_height: (20.0, 32.0),
                persons_per_scene: (2, 4),
                tint: [1.1, 0.95, 0.85],
                volatile_garments: vec![Garment::Lower],
                ..base
            },
        }
    }
}

/// Parameters of one synthetic domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub domain_id: u32,
    pub style: DomainStyle,
    /// Number of training scenes.
    pub num_scenes: usize,
    #[serde(default = "default_test_scenes")]
    pub num_test_scenes: usize,
    pub num_identities: usize,
    pub unlabeled_fraction: f64,
    pub seed: u64,
}

fn default_test_scenes() -> usize {
    100
}

impl DomainSpec {
    pub fn preset(domain_id: u32, seed: u64) -> DomainSpec {
        DomainSpec {
            domain_id,
            style: DomainStyle::preset(domain_id as usize),
            num_scenes: 300,
            num_test_scenes: 100,
            num_identities: 30,
            unlabeled_fraction: 0.2,
            seed,
        }
    }

    pub fn identity_id(&self, k: usize) -> u32 {
        self.domain_id * ID_STRIDE + k as u32
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.style;
        let bad = |m: String| Err(LpsError::InvalidSpec(m));
        if self.num_identities == 0 {
            return bad("num_identities must be at least 1".into());
        }
        if self.num_identities >= ID_STRIDE as usize {
            return bad(format!("num_identities must be below {ID_STRIDE}"));
        }
        if self.num_scenes == 0 {
            return bad("num_scenes must be at least 1".into());
        }
        if self.num_test_scenes < 2 {
            return bad("num_test_scenes must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.unlabeled_fraction) {
            return bad(format!(
                "unlabeled_fraction {} must lie in [0, 1)",
                self.unlabeled_fraction
            ));
        }
        if s.image_height < 8 || s.image_width < 8 {
            return bad("image must be at least 8x8".into());
        }
        let (hmin, hmax) = s.person_height;
        if !(hmin > 0.0 && hmin <= hmax) {
            return bad(format!("invalid person height range {:?}", s.person_height));
        }
        if !(s.person_aspect > 0.0) {
            return bad("person_aspect must be positive".into());
        }
        if hmax > s.image_height as f64 || hmax * s.person_aspect > s.image_width as f64 {
            return bad("persons do not fit inside the image".into());
        }
        let (pmin, pmax) = s.persons_per_scene;
        if pmin > pmax || pmax == 0 {
            return bad(format!("invalid persons_per_scene {:?}", s.persons_per_scene));
        }
        let image_area = (s.image_height * s.image_width) as f64;
        let min_area = hmin * hmin * s.person_aspect;
        // Even at 90% mutual overlap every extra person adds 10% of its area.
        if pmax as f64 * min_area * 0.1 > image_area {
            return bad(format!(
                "{pmax} persons per scene cannot fit in {}x{} without >90% mutual overlap",
                s.image_height, s.image_width
            ));
        }
        if s.appearance_jitter < 0.0 || 2.0 * s.appearance_jitter >= s.min_identity_separation {
            return bad("appearance_jitter must be below half the identity separation".into());
        }
        if !(0.0..=1.0).contains(&s.max_person_overlap) {
            return bad("max_person_overlap must lie in [0, 1]".into());
        }
        if s.noise_std < 0.0 {
            return bad("noise_std must be non-negative".into());
        }
        Ok(())
    }
}

/// A query person: scene index in the gallery and box index in that scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRef {
    pub scene: usize,
    pub box_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub spec: DomainSpec,
    pub train: Vec<SceneSample>,
    pub test_gallery: Vec<SceneSample>,
    pub test_queries: Vec<QueryRef>,
}

impl DomainDataset {
    pub fn domain_id(&self) -> u32 {
        self.spec.domain_id
    }

    pub fn query_identity(&self, q: &QueryRef) -> Option<u32> {
        self.test_gallery[q.scene].gt_identities[q.box_index].label()
    }

    /// Labeled identities present in the training split.
    pub fn train_identities(&self) -> BTreeSet<u32> {
        self.train.iter().flat_map(|s| s.labeled_ids()).collect()
    }
}

#[derive(Clone, Copy)]
enum Split {
    Train,
    Test,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
        }
    }
}

/// Generates a full domain dataset; a pure function of the spec.
pub fn generate_domain(spec: &DomainSpec) -> Result<DomainDataset> {
    spec.validate()?;
    let bank = IdentityBank::new(spec)?;
    let train = generate_split(spec, &bank, Split::Train, spec.num_scenes);
    let test_gallery = generate_split(spec, &bank, Split::Test, spec.num_test_scenes);
    let test_queries = select_queries(&test_gallery);
    Ok(DomainDataset {
        spec: spec.clone(),
        train,
        test_gallery,
        test_queries,
    })
}

/// Identities whose labels are withheld everywhere: `round(fraction * n)`
/// of them, leaving at least one labeled.
pub fn withheld_identities(spec: &DomainSpec) -> BTreeSet<usize> {
    let n = spec.num_identities;
    let count = ((spec.unlabeled_fraction * n as f64).round() as usize).min(n.saturating_sub(1));
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(&mut rng::stream(spec.seed, &[spec.domain_id as u64, 0x0A1]));
    all.into_iter().take(count).collect()
}

fn generate_split(spec: &DomainSpec, bank: &IdentityBank, split: Split, count: usize) -> Vec<SceneSample> {
    let withheld = withheld_identities(spec);
    let mut deck_rng = rng::stream(spec.seed, &[spec.domain_id as u64, split.tag(), 0xDEC]);
    let mut deck: Vec<usize> = Vec::new();
    (0..count)
        .map(|index| {
            let mut scene_rng = rng::stream(spec.seed, &[spec.domain_id as u64, split.tag(), index as u64]);
            let (pmin, pmax) = spec.style.persons_per_scene;
            let n = scene_rng.gen_range(pmin..=pmax).min(spec.num_identities);
            let mut chosen: Vec<usize> = Vec::with_capacity(n);
            let mut skipped: Vec<usize> = Vec::new();
            while chosen.len() < n {
                if deck.is_empty() {
                    deck = (0..spec.num_identities).collect();
                    deck.shuffle(&mut deck_rng);
                    // identities skipped for a duplicate go first in the new round
                    deck.retain(|k| !skipped.contains(k));
                    deck.extend(skipped.drain(..));
                }
                let k = deck.pop().expect("deck refilled above");
                if chosen.contains(&k) {
                    skipped.push(k);
                } else {
                    chosen.push(k);
                }
            }
            deck.extend(skipped.drain(..));
            render_scene(spec, bank, &chosen, &withheld, &mut scene_rng)
        })
        .collect()
}

fn render_scene(
    spec: &DomainSpec,
    bank: &IdentityBank,
    identities: &[usize],
    withheld: &BTreeSet<usize>,
    rng: &mut impl Rng,
) -> SceneSample {
    let style = &spec.style;
    let (h, w) = (style.image_height as f64, style.image_width as f64);
    let mut image = render::background(style, rng);
    let mut gt_boxes: Vec<BoundingBox> = Vec::new();
    let mut gt_identities = Vec::new();
    for &k in identities {
        let ph = rng.gen_range(style.person_height.0..=style.person_height.1);
        let pw = ph * style.person_aspect;
        let mut best: Option<(BoundingBox, f64)> = None;
        for _ in 0..50 {
            let x1 = rng.gen_range(0.0..=(w - pw)).floor();
            let y1 = rng.gen_range(0.0..=(h - ph)).floor();
            let cand = BoundingBox::new(x1, y1, (x1 + pw).min(w), (y1 + ph).min(h));
            let overlap = gt_boxes.iter().map(|b| iou(b, &cand)).fold(0.0, f64::max);
            if best.map_or(true, |(_, o)| overlap < o) {
                best = Some((cand, overlap));
            }
            if overlap <= style.max_person_overlap {
                break;
            }
        }
        let (bbox, overlap) = best.expect("at least one placement attempt");
        if overlap > style.max_person_overlap {
            continue;
        }
        let appearance = bank.sample_instance(k, rng);
        render::draw_person(&mut image, &bbox, &appearance, style);
        gt_boxes.push(bbox);
        gt_identities.push(if withheld.contains(&k) {
            Identity::Unlabeled
        } else {
            Identity::Labeled(spec.identity_id(k))
        });
    }
    render::add_noise(&mut image, style.noise_std, rng);
    SceneSample {
        image,
        gt_boxes,
        gt_identities,
        domain_id: spec.domain_id,
    }
}

/// One query per labeled identity that is also labeled in another scene.
pub fn select_queries(gallery: &[SceneSample]) -> Vec<QueryRef> {
    let mut ids: BTreeSet<u32> = BTreeSet::new();
    for s in gallery {
        ids.extend(s.labeled_ids());
    }
    ids.into_iter()
        .filter_map(|id| {
            let occurrences: Vec<QueryRef> = gallery
                .iter()
                .enumerate()
                .filter_map(|(si, s)| {
                    s.gt_identities
                        .iter()
                        .position(|i| *i == Identity::Labeled(id))
                        .map(|bi| QueryRef {
                            scene: si,
                            box_index: bi,
                        })
                })
                .collect();
            (occurrences.len() >= 2).then(|| occurrences[0])
        })
        .collect()
}
