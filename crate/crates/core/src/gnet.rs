//! The grasp network: encoder–decoder segmentation, grasp rectangles from
//! mask clusters, and a region classifier, trained jointly.
//!
//! Segmentation uses two conv/pool encoder blocks whose pooling indices drive
//! two unpool/conv decoder blocks, then a 1×1 two-class head. The classifier
//! sees a fixed-size crop of the color mask (probability ⊙ image during
//! training, binary mask ⊙ image at inference) at an object's box.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg, shape, Error, Result};
use crate::geom::{assemble_grasp, grasp_from_cluster, BoundingBox, GraspSolution};
use crate::micrograd::{
    grad_check, train_loop, EpochLog, GradCheckReport, Graph, NodeId, ParameterSet, SampleGrad, TrainConfig, TrainState,
};
use crate::raster::{
    binarize, color_mask, connected_components_with, crop, crop_indices, default_min_size, BinaryMask, ChannelMode,
    Connectivity, RasterFrame,
};
use crate::scenegen::{render, CategorySet, Scene};
use crate::simeval::GraspDetector;
use crate::tensor::{argmax, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegArch {
    pub in_channels: usize,
    /// Filters of the first and second encoder blocks.
    pub widths: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClsArch {
    pub in_channels: usize,
    /// Side of the square input crop.
    pub size: usize,
    /// Filters of each conv/pool block.
    pub widths: Vec<usize>,
    pub hidden: usize,
    pub n_classes: usize,
}

impl SegArch {
    pub fn new(channels: ChannelMode) -> Self {
        Self {
            in_channels: channels.count(),
            widths: (16, 32),
        }
    }
}

impl ClsArch {
    pub fn new(channels: ChannelMode, n_classes: usize) -> Self {
        Self {
            in_channels: channels.count(),
            size: 32,
            widths: vec![8, 16, 16],
            hidden: 64,
            n_classes,
        }
    }

    pub fn flat_len(&self) -> Result<usize> {
        let k = 1usize << self.widths.len();
        if self.size % k != 0 || self.size < k {
            return shape(format!("crop size {} must be divisible by {k}", self.size));
        }
        let side = self.size / k;
        Ok(self.widths.last().copied().unwrap_or(self.in_channels) * side * side)
    }
}

/// He init for layers followed by a ReLU, Glorot for output layers.
pub(crate) fn insert_conv(p: &mut ParameterSet, name: &str, c_in: usize, c_out: usize, k: usize, relu: bool, rng: &mut ChaCha8Rng) -> Result<()> {
    let w = format!("{name}.w");
    if relu {
        p.insert_he_uniform(w, &[c_out, c_in, k, k], c_in * k * k, rng)?;
    } else {
        p.insert_uniform(w, &[c_out, c_in, k, k], c_in * k * k, c_out * k * k, rng)?;
    }
    p.insert_zeros(format!("{name}.b"), &[c_out])
}

pub(crate) fn insert_fc(p: &mut ParameterSet, name: &str, n_in: usize, n_out: usize, relu: bool, rng: &mut ChaCha8Rng) -> Result<()> {
    let w = format!("{name}.w");
    if relu {
        p.insert_he_uniform(w, &[n_out, n_in], n_in, rng)?;
    } else {
        p.insert_uniform(w, &[n_out, n_in], n_in, n_out, rng)?;
    }
    p.insert_zeros(format!("{name}.b"), &[n_out])
}

pub(crate) fn conv(g: &mut Graph, p: &ParameterSet, name: &str, x: NodeId, pad: usize) -> Result<NodeId> {
    let w = g.param(p, &format!("{name}.w"))?;
    let b = g.param(p, &format!("{name}.b"))?;
    g.conv2d(x, w, b, 1, pad)
}

pub(crate) fn fc(g: &mut Graph, p: &ParameterSet, name: &str, x: NodeId) -> Result<NodeId> {
    let w = g.param(p, &format!("{name}.w"))?;
    let b = g.param(p, &format!("{name}.b"))?;
    g.fc(x, w, b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegModel {
    pub arch: SegArch,
    pub params: ParameterSet,
}

impl SegModel {
    pub fn new(arch: SegArch, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParameterSet::new();
        let (c1, c2) = arch.widths;
        insert_conv(&mut p, "seg.enc1", arch.in_channels, c1, 3, true, &mut rng)?;
        insert_conv(&mut p, "seg.enc2", c1, c2, 3, true, &mut rng)?;
        insert_conv(&mut p, "seg.dec2", c2, c1, 3, true, &mut rng)?;
        insert_conv(&mut p, "seg.dec1", c1, c1, 3, true, &mut rng)?;
        insert_conv(&mut p, "seg.head", c1, 2, 1, false, &mut rng)?;
        Ok(Self { arch, params: p })
    }

    /// Records the per-pixel `(2, H, W)` distribution over background/object.
    pub fn forward(&self, g: &mut Graph, params: &ParameterSet, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = g.value(x).chw()?;
        if c != self.arch.in_channels {
            return shape(format!("segmenter expects {} channels, frame has {c}", self.arch.in_channels));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return shape(format!("segmenter needs sides divisible by 4, got {h}×{w}"));
        }
        let x = g.shift(x, -0.5)?;
        let e1 = conv(g, params, "seg.enc1", x, 1)?;
        let e1 = g.relu(e1)?;
        let (p1, i1) = g.maxpool(e1, 2)?;
        let e2 = conv(g, params, "seg.enc2", p1, 1)?;
        let e2 = g.relu(e2)?;
        let (p2, i2) = g.maxpool(e2, 2)?;
        let u2 = g.maxunpool(p2, &i2)?;
        let d2 = conv(g, params, "seg.dec2", u2, 1)?;
        let d2 = g.relu(d2)?;
        let u1 = g.maxunpool(d2, &i1)?;
        let d1 = conv(g, params, "seg.dec1", u1, 1)?;
        let d1 = g.relu(d1)?;
        let logits = conv(g, params, "seg.head", d1, 0)?;
        g.softmax(logits)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClsModel {
    pub arch: ClsArch,
    pub params: ParameterSet,
}

impl ClsModel {
    pub fn new(arch: ClsArch, seed: u64) -> Result<Self> {
        let flat = arch.flat_len()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParameterSet::new();
        let mut c_in = arch.in_channels;
        for (k, &c_out) in arch.widths.iter().enumerate() {
            insert_conv(&mut p, &format!("cls.conv{}", k + 1), c_in, c_out, 3, true, &mut rng)?;
            c_in = c_out;
        }
        insert_fc(&mut p, "cls.fc1", flat, arch.hidden, true, &mut rng)?;
        insert_fc(&mut p, "cls.fc2", arch.hidden, arch.n_classes, false, &mut rng)?;
        Ok(Self { arch, params: p })
    }

    /// Records the class distribution of a `(C, R, R)` crop.
    pub fn forward(&self, g: &mut Graph, params: &ParameterSet, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = g.value(x).chw()?;
        if (c, h, w) != (self.arch.in_channels, self.arch.size, self.arch.size) {
            return shape(format!(
                "classifier expects ({}, {s}, {s}), got ({c}, {h}, {w})",
                self.arch.in_channels,
                s = self.arch.size
            ));
        }
        let mut y = g.shift(x, -0.5)?;
        for k in 1..=self.arch.widths.len() {
            y = conv(g, params, &format!("cls.conv{k}"), y, 1)?;
            y = g.relu(y)?;
            y = g.maxpool(y, 2)?.0;
        }
        let y = fc(g, params, "cls.fc1", y)?;
        let y = g.relu(y)?;
        let y = fc(g, params, "cls.fc2", y)?;
        g.softmax(y)
    }
}

/// What the classifier sees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClsInput {
    /// Mask ⊙ image.
    #[default]
    ColorMask,
    /// The image alone.
    Raw,
}

/// Segments a frame: the `(2, H, W)` distribution and the object mask at 0.5.
pub fn segment(frame: &RasterFrame, model: &SegModel) -> Result<(Tensor, BinaryMask)> {
    let mut g = Graph::new();
    let x = g.input(frame.channels.clone());
    let probs = model.forward(&mut g, &model.params, x)?;
    let p = g.value(probs).clone();
    let (_, h, w) = p.chw()?;
    let fg = Tensor::from_vec(&[h, w], p.data()[h * w..].to_vec())?;
    Ok((p, binarize(&fg, 0.5)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub label: usize,
    pub confidence: f64,
    pub distribution: Vec<f64>,
}

/// Classifies a crop already resampled to the classifier's input size.
pub fn classify(region: &RasterFrame, model: &ClsModel) -> Result<Classification> {
    let mut g = Graph::new();
    let x = g.input(region.channels.clone());
    let probs = model.forward(&mut g, &model.params, x)?;
    let distribution = g.value(probs).data().to_vec();
    let label = argmax(&distribution);
    Ok(Classification {
        label,
        confidence: distribution[label],
        distribution,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectOptions {
    /// Clusters must be larger than this; `None` scales 200 points at 360×480.
    pub min_size: Option<usize>,
    pub connectivity: Connectivity,
    pub cls_input: ClsInput,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            min_size: None,
            connectivity: Connectivity::Four,
            cls_input: ClsInput::ColorMask,
        }
    }
}

/// Grasp candidates from a given object mask, scored by `label_fn`.
///
/// `label_fn` gets the classifier input crop and the cluster's box.
pub fn grasps_from_mask<L>(
    frame: &RasterFrame,
    mask: &BinaryMask,
    categories: &CategorySet,
    opts: &DetectOptions,
    crop_size: usize,
    label_fn: L,
) -> Result<Vec<GraspSolution>>
where
    L: Fn(&RasterFrame, &crate::raster::PixelCluster) -> Result<(usize, f64)>,
{
    let min_size = opts
        .min_size
        .unwrap_or_else(|| default_min_size(frame.height(), frame.width()));
    let source = match opts.cls_input {
        ClsInput::ColorMask => RasterFrame::new(color_mask(frame, mask)?.data, None)?,
        ClsInput::Raw => frame.clone(),
    };
    let mut out = Vec::new();
    for cluster in connected_components_with(mask, min_size, opts.connectivity) {
        let (rect, bbox) = grasp_from_cluster(&cluster)?;
        let region = crop(&source, &bbox, (crop_size, crop_size))?;
        let (label, score) = label_fn(&region, &cluster)?;
        let Some(cat) = categories.get(label) else {
            return arg(format!("classifier produced class {label} outside the category set"));
        };
        out.push(assemble_grasp(rect, bbox, &cat.name, score, categories)?);
    }
    // stable: equal scores keep cluster order
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

/// segment → clusters → rectangles → color-mask crops → classes.
pub fn detect_grasps(
    frame: &RasterFrame,
    seg: &SegModel,
    cls: &ClsModel,
    categories: &CategorySet,
    opts: &DetectOptions,
) -> Result<Vec<GraspSolution>> {
    let (_, mask) = segment(frame, seg)?;
    grasps_from_mask(frame, &mask, categories, opts, cls.arch.size, |region, _| {
        let c = classify(region, cls)?;
        Ok((c.label, c.confidence))
    })
}

/// A trained segmenter and classifier with their category names.
#[derive(Clone, Debug, PartialEq)]
pub struct GNet {
    pub seg: SegModel,
    pub cls: ClsModel,
    pub categories: CategorySet,
    pub options: DetectOptions,
}

impl GNet {
    pub fn new(channels: ChannelMode, categories: CategorySet, seed: u64) -> Result<Self> {
        let seg = SegModel::new(SegArch::new(channels), seed)?;
        let cls = ClsModel::new(ClsArch::new(channels, categories.len()), seed.wrapping_add(1))?;
        Ok(Self {
            seg,
            cls,
            categories,
            options: DetectOptions::default(),
        })
    }

    pub fn from_archs(seg: SegArch, cls: ClsArch, categories: CategorySet, options: DetectOptions, seed: u64) -> Result<Self> {
        if cls.n_classes != categories.len() {
            return arg(format!(
                "classifier has {} classes for {} categories",
                cls.n_classes,
                categories.len()
            ));
        }
        if seg.in_channels != cls.in_channels {
            return arg("segmenter and classifier disagree on input channels");
        }
        Ok(Self {
            seg: SegModel::new(seg, seed)?,
            cls: ClsModel::new(cls, seed.wrapping_add(1))?,
            categories,
            options,
        })
    }

    /// Both models' parameters in one set.
    pub fn joint_params(&self) -> Result<ParameterSet> {
        let mut p = self.seg.params.clone();
        for (name, v) in self.cls.params.iter() {
            p.insert(name, v.value.clone())?;
        }
        Ok(p)
    }

    /// Writes values from a joint set back into the two models.
    pub fn set_joint_params(&mut self, joint: &ParameterSet) -> Result<()> {
        for model in [&mut self.seg.params, &mut self.cls.params] {
            let names: Vec<String> = model.names().map(String::from).collect();
            for name in names {
                let Some(v) = joint.get(&name) else {
                    return arg(format!("missing parameter {name:?}"));
                };
                let dst = model.value_mut(&name).expect("listed name");
                if !dst.same_shape(v) {
                    return shape(format!("parameter {name:?} changed shape"));
                }
                *dst = v.clone();
            }
        }
        Ok(())
    }
}

impl GraspDetector for GNet {
    fn detect(&self, frame: &RasterFrame) -> Result<Vec<GraspSolution>> {
        detect_grasps(frame, &self.seg, &self.cls, &self.categories, &self.options)
    }
}

/// Substitutes ground-truth labels for segmentation and classification:
/// the mask is the labelled foreground and each cluster takes its majority
/// label with score 1.
pub struct OracleDetector {
    pub categories: CategorySet,
    pub options: DetectOptions,
}

impl GraspDetector for OracleDetector {
    fn detect(&self, frame: &RasterFrame) -> Result<Vec<GraspSolution>> {
        let Some(labels) = frame.labels.as_ref() else {
            return Err(Error::Dataset("oracle detection needs a labelled frame".into()));
        };
        let mask = frame.label_mask().expect("labels present");
        let w = frame.width();
        grasps_from_mask(frame, &mask, &self.categories, &self.options, 1, |_, cluster| {
            let mut counts = vec![0usize; self.categories.len() + 1];
            for &(i, j) in &cluster.pixels {
                counts[labels[i * w + j] as usize] += 1;
            }
            // index 0 is background and never wins inside a foreground cluster
            let best = (1..counts.len()).max_by_key(|&k| (counts[k], std::cmp::Reverse(k))).unwrap_or(1);
            Ok((best - 1, 1.0))
        })
    }
}

/// One training/evaluation record: a labelled frame and its objects.
#[derive(Clone, Debug, PartialEq)]
pub struct GNetSample {
    pub frame: RasterFrame,
    /// Per-pixel 0/1 object labels.
    pub seg_labels: Arc<Vec<usize>>,
    /// Category and tight box of each visible object.
    pub objects: Vec<(usize, BoundingBox)>,
}

impl GNetSample {
    pub fn from_frame(frame: RasterFrame) -> Result<Self> {
        let Some(labels) = frame.labels.as_ref() else {
            return Err(Error::Dataset("training frame has no labels".into()));
        };
        let w = frame.width();
        let seg_labels = labels.iter().map(|&l| (l != 0) as usize).collect();
        let mut present: Vec<u16> = labels.iter().copied().filter(|&l| l != 0).collect();
        present.sort_unstable();
        present.dedup();
        let mut objects = Vec::new();
        for l in present {
            let pixels: Vec<(usize, usize)> = labels
                .iter()
                .enumerate()
                .filter(|&(_, &v)| v == l)
                .map(|(k, _)| (k / w, k % w))
                .collect();
            objects.push((l as usize - 1, BoundingBox::from_pixels(&pixels)?));
        }
        Ok(Self {
            frame,
            seg_labels: Arc::new(seg_labels),
            objects,
        })
    }

    pub fn from_scene(scene: &Scene, channels: ChannelMode) -> Result<Self> {
        Self::from_frame(render(scene, channels))
    }
}

/// Records the joint loss of one sample; returns `(loss, seg, cls)` nodes.
pub fn record_joint_loss(
    g: &mut Graph,
    params: &ParameterSet,
    net: &GNet,
    sample: &GNetSample,
) -> Result<(NodeId, NodeId, Option<NodeId>)> {
    let x = g.input(sample.frame.channels.clone());
    let probs = net.seg.forward(g, params, x)?;
    let seg = g.seg_loss(probs, sample.seg_labels.clone())?;
    if sample.objects.is_empty() {
        return Ok((seg, seg, None));
    }
    let (c, h, w) = sample.frame.channels.chw()?;
    let n = h * w;
    let source = match net.options.cls_input {
        ClsInput::ColorMask => {
            let fg = g.slice(probs, n, &[h, w])?;
            g.mask_mul(fg, x)?
        }
        ClsInput::Raw => x,
    };
    let r = net.cls.arch.size;
    let mut losses = Vec::with_capacity(sample.objects.len());
    for &(class, bbox) in &sample.objects {
        let idx = crop_indices(h, w, &bbox, (r, r))?;
        let full: Vec<usize> = (0..c).flat_map(|ch| idx.iter().map(move |&k| ch * n + k)).collect();
        let region = g.gather(source, Arc::new(full), &[c, r, r])?;
        let p = net.cls.forward(g, params, region)?;
        losses.push(g.cls_loss(p, class)?);
    }
    let cls = g.mean(&losses)?;
    Ok((g.add(seg, cls)?, seg, Some(cls)))
}

/// Mean `(seg, cls)` loss components over samples, without training.
pub fn mean_loss(net: &GNet, samples: &[GNetSample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Dataset("no samples".into()));
    }
    let params = net.joint_params()?;
    let parts: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|s| {
            let mut g = Graph::new();
            let (_, seg, cls) = record_joint_loss(&mut g, &params, net, s)?;
            Ok((g.value(seg).item(), cls.map_or(0.0, |c| g.value(c).item())))
        })
        .collect::<Result<_>>()?;
    let n = samples.len() as f64;
    Ok((
        parts.iter().map(|p| p.0).sum::<f64>() / n,
        parts.iter().map(|p| p.1).sum::<f64>() / n,
    ))
}

/// Joint SGD on `seg_loss + mean cls_loss`; logs components `[seg, cls]`.
pub fn train_gnet<C>(
    net: &mut GNet,
    samples: &[GNetSample],
    cfg: &TrainConfig,
    state: &mut TrainState,
    mut on_epoch: C,
) -> Result<Vec<EpochLog>>
where
    C: FnMut(&EpochLog, &GNet, &TrainState) -> Result<()>,
{
    if samples.is_empty() {
        return Err(Error::Dataset("GNet training set is empty".into()));
    }
    let ch = net.seg.arch.in_channels;
    if let Some(bad) = samples.iter().find(|s| s.frame.n_channels() != ch) {
        return shape(format!(
            "sample has {} channels, model expects {ch}",
            bad.frame.n_channels()
        ));
    }
    let mut params = net.joint_params()?;
    let template = net.clone();
    let logs = train_loop(
        &mut params,
        samples.len(),
        cfg,
        state,
        |p, i| {
            let mut g = Graph::new();
            let (loss, seg, cls) = record_joint_loss(&mut g, p, &template, &samples[i])?;
            g.backward(loss)?;
            let comps = vec![g.value(seg).item(), cls.map_or(0.0, |c| g.value(c).item())];
            Ok(SampleGrad::from_graph(&g, p, g.value(loss).item(), comps))
        },
        |log, p, st| {
            let mut snapshot = template.clone();
            snapshot.set_joint_params(p)?;
            on_epoch(log, &snapshot, st)
        },
    )?;
    net.set_joint_params(&params)?;
    Ok(logs)
}

/// Central-difference check of the joint loss over every segmenter and
/// classifier parameter, on a random 16×16 frame holding two labelled
/// objects. Biases are randomized so no ReLU sits exactly at its kink.
pub fn joint_grad_check(h: f64, seed: u64) -> Result<GradCheckReport> {
    let categories = CategorySet::default();
    let seg = SegModel::new(SegArch { in_channels: 3, widths: (3, 4) }, seed)?;
    let cls = ClsModel::new(
        ClsArch {
            in_channels: 3,
            size: 8,
            widths: vec![3, 4],
            hidden: 6,
            n_classes: categories.len(),
        },
        seed.wrapping_add(1),
    )?;
    let net = GNet {
        seg,
        cls,
        categories,
        options: DetectOptions::default(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = net.joint_params()?;
    for (name, p) in params.iter_mut() {
        if name.ends_with(".b") {
            for v in p.value.data_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
    let (n, side) = (3 * 16 * 16, 16);
    let image = Tensor::from_vec(&[3, side, side], (0..n).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let labels = (0..side * side)
        .map(|k| {
            let (i, j) = (k / side, k % side);
            match (i, j) {
                (2..=6, 3..=10) => 4,
                (9..=14, 8..=13) => 10,
                _ => 0,
            }
        })
        .collect();
    let sample = GNetSample::from_frame(RasterFrame::new(image, Some(labels))?)?;
    grad_check(
        |g, p| Ok(record_joint_loss(g, p, &net, &sample)?.0),
        &params,
        h,
        usize::MAX,
        seed,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GNetMetrics {
    /// Foreground IoU pooled over all pixels of all samples.
    pub iou: f64,
    pub pixel_accuracy: f64,
    /// Per ground-truth object: class of the predicted-mask crop at its box.
    pub cls_accuracy: f64,
    pub objects: usize,
    /// Fraction of predicted foreground pixels on object-free samples, if any.
    pub empty_fg_fraction: Option<f64>,
}

pub fn evaluate_gnet(net: &GNet, samples: &[GNetSample]) -> Result<GNetMetrics> {
    if samples.is_empty() {
        return Err(Error::Dataset("no evaluation samples".into()));
    }
    let r = net.cls.arch.size;
    // (inter, union, correct pixels, pixels, correct objects, objects, fg on empty, empty pixels)
    let rows: Vec<[usize; 8]> = samples
        .par_iter()
        .map(|s| {
            let (_, mask) = segment(&s.frame, &net.seg)?;
            let mut row = [0usize; 8];
            for (k, &t) in s.seg_labels.iter().enumerate() {
                let p = mask.data()[k] as usize;
                row[0] += (p & t) as usize;
                row[1] += (p | t) as usize;
                row[2] += (p == t) as usize;
                row[3] += 1;
            }
            let source = match net.options.cls_input {
                ClsInput::ColorMask => RasterFrame::new(color_mask(&s.frame, &mask)?.data, None)?,
                ClsInput::Raw => s.frame.clone(),
            };
            for &(class, bbox) in &s.objects {
                let c = classify(&crop(&source, &bbox, (r, r))?, &net.cls)?;
                row[4] += (c.label == class) as usize;
                row[5] += 1;
            }
            if s.objects.is_empty() {
                row[6] += mask.count();
                row[7] += mask.data().len();
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let mut t = [0usize; 8];
    for row in &rows {
        for (a, b) in t.iter_mut().zip(row) {
            *a += b;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    Ok(GNetMetrics {
        iou: ratio(t[0], t[1]),
        pixel_accuracy: ratio(t[2], t[3]),
        cls_accuracy: ratio(t[4], t[5]),
        objects: t[5],
        empty_fg_fraction: (t[7] > 0).then(|| t[6] as f64 / t[7] as f64),
    })
}
