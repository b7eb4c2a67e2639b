//! Synthetic tabletop scenes, pick-and-place episodes, and their commands.
//!
//! Everything here is a pure function of `(seed, config)`: a ChaCha stream
//! seeded from the 64-bit seed drives object choice, size, pose, and sensor
//! noise, so regeneration is bit-identical on any thread.
//!
//! Coordinates are pixels with `x` to the right and `y` down; pixel `(i, j)`
//! covers the point `(j + 0.5, i + 0.5)`. An object's orientation `phi` is the
//! direction of its `w` axis in degrees, measured from the `+x` axis towards
//! `+y`, in `[0, 180)`.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::raster::{ChannelMode, RasterFrame};
use crate::tensor::Tensor;

pub const PAD: &str = "PAD";
pub const BOS: &str = "BOS";
pub const EOC: &str = "EOC";
pub const UNK: &str = "UNK";
pub const MAX_COMMAND_TOKENS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rectangle,
    Ellipse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Block,
    Fruit,
    Plate,
    Cup,
}

/// A labelled object type: how it looks, how tall it is, and its size range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub kind: ObjectKind,
    pub shape: Shape,
    pub color: [u8; 3],
    /// Synthetic depth value in `[0, 1]`.
    pub height: f64,
    /// Range of the long side `w`, pixels.
    pub long: (f64, f64),
    /// Range of the short side `h`; `None` means round (`h = w`).
    pub short: Option<(f64, f64)>,
}

impl Category {
    #[allow(clippy::too_many_arguments)]
    fn new(
        name: &str,
        kind: ObjectKind,
        shape: Shape,
        color: [u8; 3],
        height: f64,
        long: (f64, f64),
        short: Option<(f64, f64)>,
    ) -> Self {
        Self {
            name: name.to_string(),
            kind,
            shape,
            color,
            height,
            long,
            short,
        }
    }
}

/// The ordered category list; a category's index is its class id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategorySet {
    categories: Vec<Category>,
}

impl Default for CategorySet {
    fn default() -> Self {
        use ObjectKind::*;
        use Shape::*;
        let block = |n: &str, c| Category::new(n, Block, Rectangle, c, 0.3, (16.0, 22.0), Some((9.0, 12.0)));
        let cats = vec![
            block("pink_block", [255, 130, 200]),
            block("blue_block", [40, 80, 220]),
            block("yellow_block", [235, 215, 30]),
            block("green_block", [40, 170, 60]),
            block("red_block", [215, 35, 35]),
            block("purple_block", [130, 50, 170]),
            block("orange_block", [245, 140, 20]),
            Category::new("pear", Fruit, Ellipse, [180, 210, 80], 0.45, (17.0, 21.0), Some((10.0, 12.0))),
            Category::new("kiwi", Fruit, Ellipse, [110, 80, 40], 0.4, (15.0, 18.0), Some((9.0, 11.0))),
            Category::new("apple", Fruit, Ellipse, [160, 10, 70], 0.5, (13.0, 15.0), None),
            Category::new("lemon", Fruit, Ellipse, [255, 250, 120], 0.4, (16.0, 19.0), Some((9.0, 11.0))),
            Category::new("orange", Fruit, Ellipse, [255, 180, 70], 0.5, (13.0, 16.0), None),
            Category::new("green_plate", Plate, Ellipse, [120, 230, 150], 0.05, (24.0, 27.0), None),
            Category::new("blue_plate", Plate, Ellipse, [120, 170, 255], 0.05, (24.0, 27.0), None),
            Category::new("red_plate", Plate, Ellipse, [250, 100, 100], 0.05, (24.0, 27.0), None),
            Category::new("blue_cup", Cup, Ellipse, [20, 30, 120], 0.6, (16.0, 19.0), None),
            Category::new("red_cup", Cup, Ellipse, [120, 20, 20], 0.6, (16.0, 19.0), None),
        ];
        Self { categories: cats }
    }
}

impl CategorySet {
    pub fn new(categories: Vec<Category>) -> Result<Self> {
        if categories.is_empty() {
            return arg("category set is empty");
        }
        for (i, c) in categories.iter().enumerate() {
            if categories[..i].iter().any(|o| o.name == c.name) {
                return arg(format!("duplicate category {:?}", c.name));
            }
            if c.long.0 < 8.0 || c.short.is_some_and(|s| s.0 < 8.0) {
                return arg(format!("category {:?} can be smaller than 8 px", c.name));
            }
        }
        Ok(Self { categories })
    }

    /// The default set plus a copy of `base` that differs only in height.
    ///
    /// The twin shares color, shape, and size with its original, so only the
    /// depth channel can tell them apart.
    pub fn with_height_twin(base: &str, twin: &str, twin_height: f64) -> Result<Self> {
        let mut set = Self::default();
        let Some(orig) = set.get_by_name(base).cloned() else {
            return arg(format!("unknown category {base:?}"));
        };
        set.categories.push(Category {
            name: twin.to_string(),
            height: twin_height,
            ..orig
        });
        Self::new(set.categories)
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Category> {
        self.categories.get(index)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.name == name)
    }

    pub fn get_by_name(&self, name: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Category> {
        self.categories.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.categories.iter().map(|c| c.name.clone()).collect()
    }

    /// True when no two categories share a color.
    pub fn has_distinct_colors(&self) -> bool {
        self.categories
            .iter()
            .enumerate()
            .all(|(i, c)| self.categories[..i].iter().all(|o| o.color != c.color))
    }

    pub fn indices_of_kind(&self, kind: ObjectKind) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.categories[i].kind == kind).collect()
    }
}

/// An object instance: its category's look plus a sampled size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub category: usize,
    pub shape: Shape,
    /// `(w, h)` in pixels; `w` lies along `phi`.
    pub size: (f64, f64),
    pub color: [u8; 3],
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedObject {
    pub spec: ObjectSpec,
    pub cx: f64,
    pub cy: f64,
    /// Degrees in `[0, 180)`.
    pub phi: f64,
}

impl PlacedObject {
    /// Whether the point `(x, y)` lies on the footprint (boundary inclusive).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi.to_radians().sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        let (a, b) = (self.spec.size.0 / 2.0, self.spec.size.1 / 2.0);
        match self.spec.shape {
            Shape::Rectangle => u.abs() <= a && v.abs() <= b,
            Shape::Ellipse => (u / a).powi(2) + (v / b).powi(2) <= 1.0,
        }
    }

    /// Half extents of the axis-aligned box around the footprint.
    pub fn extent(&self) -> (f64, f64) {
        let (s, c) = self.phi.to_radians().sin_cos();
        let (a, b) = (self.spec.size.0 / 2.0, self.spec.size.1 / 2.0);
        match self.spec.shape {
            Shape::Rectangle => (a * c.abs() + b * s.abs(), a * s.abs() + b * c.abs()),
            Shape::Ellipse => (
                ((a * c).powi(2) + (b * s).powi(2)).sqrt(),
                ((a * s).powi(2) + (b * c).powi(2)).sqrt(),
            ),
        }
    }

    /// Row-major flat indices of the pixels whose centers are on the footprint.
    pub fn footprint(&self, height: usize, width: usize) -> Vec<usize> {
        let (ex, ey) = self.extent();
        let i0 = (self.cy - ey - 1.0).floor().max(0.0) as usize;
        let i1 = ((self.cy + ey + 1.0).ceil().max(0.0) as usize).min(height);
        let j0 = (self.cx - ex - 1.0).floor().max(0.0) as usize;
        let j1 = ((self.cx + ex + 1.0).ceil().max(0.0) as usize).min(width);
        let mut out = Vec::new();
        for i in i0..i1 {
            for j in j0..j1 {
                if self.contains(j as f64 + 0.5, i as f64 + 0.5) {
                    out.push(i * width + j);
                }
            }
        }
        out
    }

    /// Orientation of the long axis, degrees in `[0, 180)`.
    pub fn long_axis_deg(&self) -> f64 {
        let t = if self.spec.size.0 >= self.spec.size.1 {
            self.phi
        } else {
            self.phi + 90.0
        };
        t.rem_euclid(180.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Per-pixel, per-channel Gaussian noise, in `[0, 1]` intensity units.
    pub pixel_sigma: f64,
    /// Standard deviation of one global brightness offset per scene.
    pub brightness_sigma: f64,
}

impl NoiseConfig {
    pub const NONE: NoiseConfig = NoiseConfig {
        pixel_sigma: 0.0,
        brightness_sigma: 0.0,
    };
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            pixel_sigma: 8.0 / 255.0,
            brightness_sigma: 8.0 / 255.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<PlacedObject>,
    /// `(H, W)`.
    pub canvas: (usize, usize),
    pub background: [u8; 3],
    pub noise: NoiseConfig,
    pub rng_seed: u64,
}

impl Scene {
    /// Index of the topmost object covering `(x, y)`.
    pub fn object_at(&self, x: f64, y: f64) -> Option<usize> {
        (0..self.objects.len()).rev().find(|&k| self.objects[k].contains(x, y))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub canvas: (usize, usize),
    pub min_objects: usize,
    pub max_objects: usize,
    pub categories: CategorySet,
    /// Category indices eligible for random placement; `None` means all.
    pub allowed: Option<Vec<usize>>,
    pub background: [u8; 3],
    pub noise: NoiseConfig,
    /// Placement attempts per object before giving up.
    pub max_retries: usize,
    /// Minimum free pixels between footprints, so objects never touch.
    pub gap: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            canvas: (96, 96),
            min_objects: 3,
            max_objects: 5,
            categories: CategorySet::default(),
            allowed: None,
            background: [150, 140, 125],
            noise: NoiseConfig::default(),
            max_retries: 200,
            gap: 2,
        }
    }
}

impl SceneConfig {
    fn eligible(&self) -> Vec<usize> {
        self.allowed
            .clone()
            .unwrap_or_else(|| (0..self.categories.len()).collect())
    }
}

/// Derives an independent seed for item `index` of stream `stream`
/// (splitmix64 finalizer over the combined words).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<Scene> {
    generate_scene_with(seed, config, &[])
}

/// Like [`generate_scene`], but the scene is guaranteed to contain one object
/// of each `required` category, placed first and in the given order.
pub fn generate_scene_with(seed: u64, config: &SceneConfig, required: &[usize]) -> Result<Scene> {
    if config.min_objects > config.max_objects {
        return arg("min_objects exceeds max_objects");
    }
    let (h, w) = config.canvas;
    if h == 0 || w == 0 {
        return arg("canvas must be non-empty");
    }
    if let Some(&bad) = required.iter().find(|&&c| c >= config.categories.len()) {
        return arg(format!("required category {bad} out of range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng
        .random_range(config.min_objects..=config.max_objects)
        .max(required.len());
    let mut pool: Vec<usize> = config
        .eligible()
        .into_iter()
        .filter(|c| !required.contains(c))
        .collect();
    pool.shuffle(&mut rng);
    let mut chosen = required.to_vec();
    chosen.extend(pool.into_iter().take(n - required.len()));
    if chosen.len() < n {
        return arg(format!("{n} objects requested but only {} categories eligible", chosen.len()));
    }

    let mut occupied = vec![false; h * w];
    let mut objects = Vec::with_capacity(n);
    for &cat in &chosen {
        let spec = sample_spec(&config.categories, cat, &mut rng);
        let placed = (0..config.max_retries).find_map(|_| {
            let cand = PlacedObject {
                spec: spec.clone(),
                cx: rng.random_range(0.0..w as f64),
                cy: rng.random_range(0.0..h as f64),
                phi: rng.random_range(0.0..180.0),
            };
            let (ex, ey) = cand.extent();
            if cand.cx - ex < 0.0 || cand.cx + ex > w as f64 || cand.cy - ey < 0.0 || cand.cy + ey > h as f64 {
                return None;
            }
            let fp = cand.footprint(h, w);
            if fp.is_empty() || fp.iter().any(|&k| occupied[k]) {
                return None;
            }
            Some((cand, fp))
        });
        let Some((obj, fp)) = placed else {
            return Err(Error::Unplaceable(format!(
                "no room for {} after {} attempts on a {h}×{w} canvas",
                config.categories.get(cat).map_or("?", |c| c.name.as_str()),
                config.max_retries
            )));
        };
        mark_dilated(&mut occupied, &fp, h, w, config.gap);
        objects.push(obj);
    }
    Ok(Scene {
        objects,
        canvas: (h, w),
        background: config.background,
        noise: config.noise,
        rng_seed: seed,
    })
}

fn sample_spec(categories: &CategorySet, cat: usize, rng: &mut ChaCha8Rng) -> ObjectSpec {
    let c = categories.get(cat).expect("checked index");
    let long = rng.random_range(c.long.0..=c.long.1);
    let short = match c.short {
        Some((lo, hi)) => rng.random_range(lo..=hi),
        None => long,
    };
    ObjectSpec {
        category: cat,
        shape: c.shape,
        size: (long, short),
        color: c.color,
        height: c.height,
    }
}

fn mark_dilated(occupied: &mut [bool], fp: &[usize], h: usize, w: usize, gap: usize) {
    for &k in fp {
        let (i, j) = (k / w, k % w);
        for ii in i.saturating_sub(gap)..(i + gap + 1).min(h) {
            for jj in j.saturating_sub(gap)..(j + gap + 1).min(w) {
                occupied[ii * w + jj] = true;
            }
        }
    }
}

/// Renders a scene: colors, sensor noise, per-pixel labels, optional depth.
///
/// Labels are `0` for background and `category + 1` for the topmost object.
/// Noise depends only on `scene.rng_seed`, so two scenes sharing a seed get
/// the same noise field and differ exactly where their objects differ.
pub fn render(scene: &Scene, channels: ChannelMode) -> RasterFrame {
    let (h, w) = scene.canvas;
    let n = h * w;
    let mut rgb = vec![0.0; 3 * n];
    let mut depth = vec![0.0; n];
    let mut labels = vec![0u16; n];
    for k in 0..n {
        for ch in 0..3 {
            rgb[ch * n + k] = scene.background[ch] as f64 / 255.0;
        }
    }
    for obj in &scene.objects {
        for k in obj.footprint(h, w) {
            for ch in 0..3 {
                rgb[ch * n + k] = obj.spec.color[ch] as f64 / 255.0;
            }
            depth[k] = obj.spec.height;
            labels[k] = obj.spec.category as u16 + 1;
        }
    }
    let noise = scene.noise;
    if noise.pixel_sigma > 0.0 || noise.brightness_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.rng_seed ^ 0x9e37_79b9_7f4a_7c15);
        let offset = if noise.brightness_sigma > 0.0 {
            Normal::new(0.0, noise.brightness_sigma).expect("positive sigma").sample(&mut rng)
        } else {
            0.0
        };
        let pixel = (noise.pixel_sigma > 0.0).then(|| Normal::new(0.0, noise.pixel_sigma).expect("positive sigma"));
        for v in rgb.iter_mut() {
            let e = pixel.as_ref().map_or(0.0, |d| d.sample(&mut rng));
            *v = (*v + offset + e).clamp(0.0, 1.0);
        }
    }
    let mut data = rgb;
    if channels == ChannelMode::Rgbd {
        data.extend_from_slice(&depth);
    }
    let c = channels.count();
    RasterFrame::new(Tensor::from_vec(&[c, h, w], data).expect("sized"), Some(labels)).expect("valid raster")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    PickPlace,
    Stack,
}

impl Verb {
    pub fn token(self) -> &'static str {
        match self {
            Verb::PickPlace => "place",
            Verb::Stack => "stack",
        }
    }

    pub fn from_token(t: &str) -> Option<Self> {
        match t {
            "place" => Some(Verb::PickPlace),
            "stack" => Some(Verb::Stack),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preposition {
    On,
    Into,
}

impl Preposition {
    pub fn token(self) -> &'static str {
        match self {
            Preposition::On => "on",
            Preposition::Into => "into",
        }
    }

    pub fn from_token(t: &str) -> Option<Self> {
        match t {
            "on" => Some(Preposition::On),
            "into" => Some(Preposition::Into),
            _ => None,
        }
    }
}

/// What a demonstration does: verb, moved object, preposition, target.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionTriple {
    pub verb: Verb,
    pub object_category: String,
    pub preposition: Preposition,
    pub target_category: String,
}

impl ActionTriple {
    pub fn command(&self) -> CommandSentence {
        CommandSentence::new(vec![
            self.verb.token().to_string(),
            self.object_category.clone(),
            self.preposition.token().to_string(),
            self.target_category.clone(),
            EOC.to_string(),
        ])
        .expect("template commands are well formed")
    }
}

/// A grammar-free command: words followed by a single `EOC`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct CommandSentence {
    tokens: Vec<String>,
}

impl CommandSentence {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() > MAX_COMMAND_TOKENS {
            return Err(Error::Dataset(format!(
                "command has {} tokens, the limit is {MAX_COMMAND_TOKENS}",
                tokens.len()
            )));
        }
        let eocs = tokens.iter().filter(|t| *t == EOC).count();
        if eocs != 1 || tokens.last().map(String::as_str) != Some(EOC) {
            return arg("a command ends with exactly one EOC");
        }
        if tokens.iter().any(|t| t == PAD || t == BOS) {
            return arg("PAD or BOS inside a command");
        }
        Ok(Self { tokens })
    }

    /// Builds a well-formed sentence from raw decoder output: reading stops
    /// at the first `EOC`, special tokens are dropped, and the result is cut
    /// to fit the length limit before `EOC` is appended.
    pub fn from_decoded<S: AsRef<str>>(raw: &[S]) -> Self {
        let mut tokens: Vec<String> = raw
            .iter()
            .map(AsRef::as_ref)
            .take_while(|t| *t != EOC)
            .filter(|t| *t != PAD && *t != BOS)
            .map(str::to_string)
            .take(MAX_COMMAND_TOKENS - 1)
            .collect();
        tokens.push(EOC.to_string());
        Self { tokens }
    }

    /// All tokens including the trailing `EOC`.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Tokens before `EOC`.
    pub fn words(&self) -> &[String] {
        &self.tokens[..self.tokens.len() - 1]
    }

    /// Tokens padded with `PAD` to `len`.
    pub fn padded(&self, len: usize) -> Vec<String> {
        let mut out = self.tokens.clone();
        out.resize(len.max(out.len()), PAD.to_string());
        out
    }
}

impl TryFrom<Vec<String>> for CommandSentence {
    type Error = Error;
    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::new(tokens)
    }
}

impl From<CommandSentence> for Vec<String> {
    fn from(c: CommandSentence) -> Self {
        c.tokens
    }
}

impl std::fmt::Display for CommandSentence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.tokens.join(" "))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub scene: SceneConfig,
    pub n_frames: usize,
    /// Maximum offset of the placed object from the target's center, pixels.
    pub place_jitter: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            n_frames: 30,
            place_jitter: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub seed: u64,
    pub start: Scene,
    pub action: ActionTriple,
    pub end: Scene,
    /// Index of the manipulated object in both scenes' object lists.
    pub moved: usize,
    pub n_frames: usize,
    pub command: CommandSentence,
}

/// Every `(object, target, verb, preposition)` a category set admits:
/// blocks stack on other blocks, fruit goes into cups or onto plates.
pub fn valid_actions(categories: &CategorySet, eligible: &[usize]) -> Vec<(usize, usize, Verb, Preposition)> {
    let kind = |i: usize| categories.get(i).map(|c| c.kind);
    let mut out = Vec::new();
    for &o in eligible {
        for &t in eligible {
            if o == t {
                continue;
            }
            match (kind(o), kind(t)) {
                (Some(ObjectKind::Block), Some(ObjectKind::Block)) => {
                    out.push((o, t, Verb::Stack, Preposition::On))
                }
                (Some(ObjectKind::Fruit), Some(ObjectKind::Cup)) => {
                    out.push((o, t, Verb::PickPlace, Preposition::Into))
                }
                (Some(ObjectKind::Fruit), Some(ObjectKind::Plate)) => {
                    out.push((o, t, Verb::PickPlace, Preposition::On))
                }
                _ => {}
            }
        }
    }
    out
}

pub fn generate_episode(seed: u64, config: &EpisodeConfig) -> Result<Episode> {
    let cats = &config.scene.categories;
    let actions = valid_actions(cats, &config.scene.eligible());
    if actions.is_empty() {
        return arg("no movable object with a valid target among the eligible categories");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stack: Vec<_> = actions.iter().filter(|a| a.2 == Verb::Stack).collect();
    let place: Vec<_> = actions.iter().filter(|a| a.2 == Verb::PickPlace).collect();
    let pool = match (stack.is_empty(), place.is_empty()) {
        (false, false) if rng.random_bool(0.5) => &stack,
        (false, false) => &place,
        (true, _) => &place,
        (false, true) => &stack,
    };
    let &&(object, target, verb, preposition) = pool.choose(&mut rng).expect("non-empty pool");
    let scene_seed = rng.random::<u64>();

    // target first, moved object last so it renders on top when placed
    let mut start = generate_scene_with(scene_seed, &config.scene, &[target, object])?;
    let moved_obj = start.objects.remove(1);
    start.objects.push(moved_obj);
    let moved = start.objects.len() - 1;

    let mut end = start.clone();
    let tgt = &start.objects[0];
    let (h, w) = start.canvas;
    let mut obj = end.objects[moved].clone();
    obj.phi = rng.random_range(0.0..180.0);
    let j = config.place_jitter;
    obj.cx = tgt.cx + if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
    obj.cy = tgt.cy + if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
    let (ex, ey) = obj.extent();
    obj.cx = obj.cx.clamp(ex, w as f64 - ex);
    obj.cy = obj.cy.clamp(ey, h as f64 - ey);
    end.objects[moved] = obj;

    let action = ActionTriple {
        verb,
        object_category: cats.get(object).expect("index").name.clone(),
        preposition,
        target_category: cats.get(target).expect("index").name.clone(),
    };
    let command = action.command();
    Ok(Episode {
        seed,
        start,
        action,
        end,
        moved,
        n_frames: config.n_frames,
        command,
    })
}

impl Episode {
    /// The scene at interpolation parameter `t ∈ [0, 1]`.
    pub fn scene_at(&self, t: f64) -> Scene {
        let mut s = self.start.clone();
        let a = &self.start.objects[self.moved];
        let b = &self.end.objects[self.moved];
        let o = &mut s.objects[self.moved];
        o.cx = a.cx + (b.cx - a.cx) * t;
        o.cy = a.cy + (b.cy - a.cy) * t;
        o.phi = a.phi + (b.phi - a.phi) * t;
        s
    }
}

/// `n` frames uniformly spaced over the demonstration; the moved object's
/// `(cx, cy, phi)` is interpolated linearly between start and end.
pub fn sample_frames(episode: &Episode, n: usize, channels: ChannelMode) -> Result<Vec<RasterFrame>> {
    if n < 2 {
        return arg(format!("need at least 2 frames, got {n}"));
    }
    Ok((0..n)
        .map(|k| {
            if k == n - 1 {
                render(&episode.end, channels)
            } else {
                render(&episode.scene_at(k as f64 / (n - 1) as f64), channels)
            }
        })
        .collect())
}
