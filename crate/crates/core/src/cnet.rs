//! The captioning network.
//!
//! Two micro-CNNs (one for frames, one for the video difference map) feed
//! learned projections whose outputs fill the two halves of each LSTM input
//! `x_t`. A two-layer LSTM follows the sequence-to-sequence video captioning
//! schedule: `n` encode steps read `x_t`, then `m` decode steps emit words.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg, shape, Error, Result};
use crate::gnet::{conv, fc, insert_conv, insert_fc, segment, GNet};
use crate::micrograd::{
    grad_check, train_loop, EpochLog, GradCheckReport, Graph, NodeId, ParameterSet, SampleGrad, TrainConfig, TrainState,
};
use crate::raster::{color_mask, vdm, BinaryMask, ChannelMode, ColorMask, RasterFrame};
use crate::scenegen::{sample_frames, CommandSentence, Episode, BOS, EOC, MAX_COMMAND_TOKENS, PAD, UNK};
use crate::simeval::Captioner;
use crate::tensor::{argmax, Tensor};

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOC_ID: usize = 2;
pub const UNK_ID: usize = 3;

/// Token list with the four specials first, then the training words sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_commands<'a>(commands: impl IntoIterator<Item = &'a CommandSentence>) -> Self {
        let mut words: Vec<String> = commands
            .into_iter()
            .flat_map(|c| c.words().iter().cloned())
            .collect();
        words.sort();
        words.dedup();
        let mut tokens: Vec<String> = [PAD, BOS, EOC, UNK].iter().map(|s| s.to_string()).collect();
        tokens.extend(words.into_iter().filter(|w| ![PAD, BOS, EOC, UNK].contains(&w.as_str())));
        Self::from_tokens(tokens).expect("specials first, words unique")
    }

    /// Index = position. The first four tokens must be `PAD BOS EOC UNK`.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 4 || tokens[..4] != [PAD, BOS, EOC, UNK] {
            return arg("vocabulary must start with PAD, BOS, EOC, UNK");
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return arg(format!("bad vocabulary token {t:?}"));
            }
            if index.insert(t.clone(), i).is_some() {
                return arg(format!("duplicate vocabulary token {t:?}"));
            }
        }
        Ok(Self { tokens, index })
    }

    /// One token per line.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
    }

    pub fn to_lines(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Unseen words map to `UNK`.
    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token ids of `command` (ending in `EOC`), padded with `PAD` to `len`.
    pub fn encode(&self, command: &CommandSentence, len: usize) -> Result<Vec<usize>> {
        let toks = command.tokens();
        if toks.len() > len {
            return Err(Error::Dataset(format!(
                "command has {} tokens, the decoder emits at most {len}",
                toks.len()
            )));
        }
        let mut ids: Vec<usize> = toks.iter().map(|t| self.id(t)).collect();
        ids.resize(len, PAD_ID);
        Ok(ids)
    }

    pub fn decode(&self, ids: &[usize]) -> CommandSentence {
        let words: Vec<&str> = ids.iter().map(|&i| self.token(i).unwrap_or(UNK)).collect();
        CommandSentence::from_decoded(&words)
    }
}

/// What fills the second half of `x_t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Projected difference-map feature.
    #[default]
    Fused,
    /// Zeros: the frame-only ablation.
    FrameOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CNetArch {
    pub in_channels: usize,
    /// Input frame `(height, width)`.
    pub frame_size: (usize, usize),
    /// Average-pooling factor applied to inputs before the extractor.
    pub input_pool: usize,
    /// Filters of the two conv/pool blocks.
    pub widths: (usize, usize),
    /// Extractor output size F.
    pub feature: usize,
    /// LSTM hidden size d (also the size of `x_t`).
    pub hidden: usize,
    pub embed: usize,
    /// Encode steps n; the decoder runs the same number m.
    pub steps: usize,
    pub forget_bias: f64,
}

impl CNetArch {
    pub fn new(channels: ChannelMode) -> Self {
        Self {
            in_channels: channels.count(),
            frame_size: (96, 96),
            input_pool: 4,
            widths: (8, 16),
            feature: 64,
            hidden: 64,
            embed: 32,
            steps: 30,
            forget_bias: 1.0,
        }
    }

    /// 512 hidden units.
    pub fn paper_scale(channels: ChannelMode) -> Self {
        Self {
            hidden: 512,
            ..Self::new(channels)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.hidden % 2 != 0 {
            return arg(format!("hidden size must be even and positive, got {}", self.hidden));
        }
        if self.steps < 2 {
            return arg(format!("need at least 2 steps, got {}", self.steps));
        }
        let (h, w) = self.frame_size;
        let k = self.input_pool * 2;
        if self.input_pool == 0 || h != w || h % k != 0 || h == 0 {
            return shape(format!(
                "frame {h}×{w} must be square and divisible by {k} (input pool {} and one 2×2 pool)",
                self.input_pool
            ));
        }
        Ok(())
    }

    fn flat_len(&self) -> usize {
        self.widths.1
    }
}

/// Pooled extractor inputs for one video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoInput {
    /// Frames pooled and centered (value − 0.5).
    pub frames: Vec<Tensor>,
    /// Pooled difference map.
    pub vdm: Tensor,
}

fn avg_pool(t: &Tensor, k: usize, offset: f64) -> Result<Tensor> {
    let (c, h, w) = t.chw()?;
    if h % k != 0 || w % k != 0 {
        return shape(format!("{h}×{w} not divisible by {k}"));
    }
    let (oh, ow) = (h / k, w / k);
    let s = 1.0 / (k * k) as f64;
    let src = t.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                out[(ch * oh + i / k) * ow + j / k] += src[(ch * h + i) * w + j] * s;
            }
        }
    }
    for v in &mut out {
        *v += offset;
    }
    Tensor::from_vec(&[c, oh, ow], out)
}

impl VideoInput {
    pub fn new(frames: &[RasterFrame], start_cm: &ColorMask, end_cm: &ColorMask, arch: &CNetArch) -> Result<Self> {
        if frames.len() != arch.steps {
            return arg(format!("expected {} frames, got {}", arch.steps, frames.len()));
        }
        let want = (arch.in_channels, arch.frame_size.0, arch.frame_size.1);
        for f in frames {
            let got = f.channels.chw()?;
            if got != want {
                return shape(format!("frame is {got:?}, model expects {want:?}"));
            }
        }
        let d = vdm(start_cm, end_cm)?;
        if d.data.chw()? != want {
            return shape(format!("difference map is {:?}, model expects {want:?}", d.data.shape()));
        }
        Ok(Self {
            frames: frames
                .iter()
                .map(|f| avg_pool(&f.channels, arch.input_pool, -0.5))
                .collect::<Result<_>>()?,
            vdm: avg_pool(&d.data, arch.input_pool, 0.0)?,
        })
    }

    /// Frames and color masks from the given start/end object masks.
    pub fn from_masks(frames: &[RasterFrame], start: &BinaryMask, end: &BinaryMask, arch: &CNetArch) -> Result<Self> {
        let (Some(first), Some(last)) = (frames.first(), frames.last()) else {
            return arg("no frames");
        };
        Self::new(frames, &color_mask(first, start)?, &color_mask(last, end)?, arch)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionModel {
    pub arch: CNetArch,
    pub vocab: Vocabulary,
    pub fusion: Fusion,
    pub params: ParameterSet,
}

fn insert_extractor(p: &mut ParameterSet, prefix: &str, arch: &CNetArch, rng: &mut ChaCha8Rng) -> Result<()> {
    let (w1, w2) = arch.widths;
    insert_conv(p, &format!("{prefix}.conv1"), arch.in_channels, w1, 3, true, rng)?;
    insert_conv(p, &format!("{prefix}.conv2"), w1, w2, 3, true, rng)?;
    insert_fc(p, &format!("{prefix}.fc"), arch.flat_len(), arch.feature, true, rng)
}

fn record_extractor(g: &mut Graph, p: &ParameterSet, prefix: &str, x: NodeId) -> Result<NodeId> {
    let y = conv(g, p, &format!("{prefix}.conv1"), x, 1)?;
    let y = g.relu(y)?;
    let (y, _) = g.maxpool(y, 2)?;
    let y = conv(g, p, &format!("{prefix}.conv2"), y, 1)?;
    let y = g.relu(y)?;
    let side = g.value(y).shape()[1];
    let (y, _) = g.maxpool(y, side)?;
    let y = fc(g, p, &format!("{prefix}.fc"), y)?;
    g.relu(y)
}

enum Decode<'a> {
    Teacher(&'a [usize]),
    Greedy,
}

impl CaptionModel {
    pub fn new(arch: CNetArch, vocab: Vocabulary, fusion: Fusion, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParameterSet::new();
        let (d, e, v) = (arch.hidden, arch.embed, vocab.len());
        insert_extractor(&mut p, "cnet.frame", &arch, &mut rng)?;
        insert_extractor(&mut p, "cnet.vdm", &arch, &mut rng)?;
        insert_fc(&mut p, "cnet.proj_g", arch.feature, d / 2, false, &mut rng)?;
        insert_fc(&mut p, "cnet.proj_l", arch.feature, d / 2, false, &mut rng)?;
        for (name, n_in) in [("cnet.lstm1", d), ("cnet.lstm2", d + e)] {
            p.insert_uniform(format!("{name}.w"), &[4 * d, n_in + d], n_in + d, 4 * d, &mut rng)?;
            let mut b = Tensor::zeros(&[4 * d]);
            b.data_mut()[d..2 * d].fill(arch.forget_bias);
            p.insert(format!("{name}.b"), b)?;
        }
        p.insert_uniform("cnet.embed", &[v, e], v, e, &mut rng)?;
        insert_fc(&mut p, "cnet.out", d, v, false, &mut rng)?;
        Ok(Self { arch, vocab, fusion, params: p })
    }

    /// Same weights, different fusion.
    pub fn with_fusion(&self, fusion: Fusion) -> Self {
        Self { fusion, ..self.clone() }
    }

    /// Records `x_t` for every frame.
    fn record_inputs(&self, g: &mut Graph, p: &ParameterSet, video: &VideoInput) -> Result<Vec<NodeId>> {
        if video.frames.len() != self.arch.steps {
            return arg(format!("expected {} frames, got {}", self.arch.steps, video.frames.len()));
        }
        let half = self.arch.hidden / 2;
        let local = match self.fusion {
            Fusion::Fused => {
                let v = g.input(video.vdm.clone());
                let f = record_extractor(g, p, "cnet.vdm", v)?;
                fc(g, p, "cnet.proj_l", f)?
            }
            Fusion::FrameOnly => g.input(Tensor::zeros(&[half])),
        };
        video
            .frames
            .iter()
            .map(|frame| {
                let x = g.input(frame.clone());
                let f = record_extractor(g, p, "cnet.frame", x)?;
                let global = fc(g, p, "cnet.proj_g", f)?;
                g.concat(&[global, local])
            })
            .collect()
    }

    /// Runs the encoder over `xs`, then decodes. Returns per-step logits and
    /// the emitted (or teacher-forced) token ids.
    fn record_sequence(
        &self,
        g: &mut Graph,
        p: &ParameterSet,
        xs: &[NodeId],
        mode: Decode,
    ) -> Result<(Vec<NodeId>, Vec<usize>)> {
        let d = self.arch.hidden;
        let w1 = g.param(p, "cnet.lstm1.w")?;
        let b1 = g.param(p, "cnet.lstm1.b")?;
        let w2 = g.param(p, "cnet.lstm2.w")?;
        let b2 = g.param(p, "cnet.lstm2.b")?;
        let table = g.param(p, "cnet.embed")?;
        let zero = g.input(Tensor::zeros(&[d]));
        let (mut h1, mut c1, mut h2, mut c2) = (zero, zero, zero, zero);

        let pad = g.embed(table, PAD_ID)?;
        for &x in xs {
            (h1, c1) = g.lstm_step(x, h1, c1, w1, b1)?;
            let in2 = g.concat(&[h1, pad])?;
            (h2, c2) = g.lstm_step(in2, h2, c2, w2, b2)?;
        }

        let steps = match mode {
            Decode::Teacher(t) => t.len(),
            Decode::Greedy => self.arch.steps,
        };
        let mut logits = Vec::with_capacity(steps);
        let mut words = Vec::with_capacity(steps);
        let mut prev = BOS_ID;
        for s in 0..steps {
            (h1, c1) = g.lstm_step(zero, h1, c1, w1, b1)?;
            let e = g.embed(table, prev)?;
            let in2 = g.concat(&[h1, e])?;
            (h2, c2) = g.lstm_step(in2, h2, c2, w2, b2)?;
            let l = fc(g, p, "cnet.out", h2)?;
            logits.push(l);
            prev = match mode {
                Decode::Teacher(t) => t[s],
                Decode::Greedy => argmax(g.value(l).data()),
            };
            words.push(prev);
            if matches!(mode, Decode::Greedy) && prev == EOC_ID {
                break;
            }
        }
        Ok((logits, words))
    }

    /// `x_t` for t = 1..n.
    pub fn video_features(&self, video: &VideoInput) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let xs = self.record_inputs(&mut g, &self.params, video)?;
        Ok(xs.iter().map(|&x| g.value(x).clone()).collect())
    }

    /// Teacher-forced logits `(m, |V|)` for `targets` of length m.
    pub fn train_logits(&self, video: &VideoInput, targets: &[usize]) -> Result<Tensor> {
        if targets.len() != self.arch.steps {
            return arg(format!("expected {} targets, got {}", self.arch.steps, targets.len()));
        }
        let mut g = Graph::new();
        let xs = self.record_inputs(&mut g, &self.params, video)?;
        let (logits, _) = self.record_sequence(&mut g, &self.params, &xs, Decode::Teacher(targets))?;
        let flat = g.concat(&logits)?;
        Ok(g.value(flat).clone().reshape(&[targets.len(), self.vocab.len()])?)
    }

    /// Greedy decode; stops at `EOC` or after m words.
    pub fn decode_ids(&self, video: &VideoInput) -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let xs = self.record_inputs(&mut g, &self.params, video)?;
        Ok(self.record_sequence(&mut g, &self.params, &xs, Decode::Greedy)?.1)
    }

    pub fn caption(&self, video: &VideoInput) -> Result<CommandSentence> {
        Ok(self.vocab.decode(&self.decode_ids(video)?))
    }

    /// Captions an episode, taking start/end object masks from `gnet` when
    /// given and from the rendered labels otherwise.
    pub fn caption_episode(&self, episode: &Episode, gnet: Option<&GNet>) -> Result<CommandSentence> {
        let channels = if self.arch.in_channels == 4 { ChannelMode::Rgbd } else { ChannelMode::Rgb };
        let frames = sample_frames(episode, self.arch.steps, channels)?;
        let (first, last) = (&frames[0], &frames[frames.len() - 1]);
        let (start, end) = match gnet {
            Some(net) => (segment(first, &net.seg)?.1, segment(last, &net.seg)?.1),
            None => (oracle_mask(first)?, oracle_mask(last)?),
        };
        self.caption(&VideoInput::from_masks(&frames, &start, &end, &self.arch)?)
    }
}

fn oracle_mask(frame: &RasterFrame) -> Result<BinaryMask> {
    frame
        .label_mask()
        .ok_or_else(|| Error::Dataset("frame has no labels for an oracle mask".into()))
}

impl Captioner for CaptionModel {
    fn caption(&self, episode: &Episode) -> Result<CommandSentence> {
        self.caption_episode(episode, None)
    }
}

/// Captions with masks from a trained segmenter.
pub struct SegmentedCaptioner<'a> {
    pub model: &'a CaptionModel,
    pub gnet: &'a GNet,
}

impl Captioner for SegmentedCaptioner<'_> {
    fn caption(&self, episode: &Episode) -> Result<CommandSentence> {
        self.model.caption_episode(episode, Some(self.gnet))
    }
}

/// One training record: pooled video and padded target ids.
#[derive(Clone, Debug, PartialEq)]
pub struct CNetSample {
    pub video: VideoInput,
    pub targets: Vec<usize>,
}

impl CNetSample {
    /// Renders the episode's frames and uses ground-truth masks.
    pub fn from_episode(episode: &Episode, vocab: &Vocabulary, arch: &CNetArch, channels: ChannelMode) -> Result<Self> {
        Self::from_episode_with(episode, vocab, arch, channels, None)
    }

    /// As [`CNetSample::from_episode`], with masks segmented by `gnet` when given.
    pub fn from_episode_with(
        episode: &Episode,
        vocab: &Vocabulary,
        arch: &CNetArch,
        channels: ChannelMode,
        gnet: Option<&GNet>,
    ) -> Result<Self> {
        let frames = sample_frames(episode, arch.steps, channels)?;
        let (first, last) = (&frames[0], &frames[frames.len() - 1]);
        let (start, end) = match gnet {
            Some(net) => (segment(first, &net.seg)?.1, segment(last, &net.seg)?.1),
            None => (oracle_mask(first)?, oracle_mask(last)?),
        };
        let video = VideoInput::from_masks(&frames, &start, &end, arch)?;
        Ok(Self {
            video,
            targets: vocab.encode(&episode.command, arch.steps)?,
        })
    }
}

/// Records the sequence loss. Decoding stops after the last non-`PAD` target;
/// later steps cannot affect the loss.
pub fn record_loss(g: &mut Graph, params: &ParameterSet, model: &CaptionModel, sample: &CNetSample) -> Result<NodeId> {
    let used = sample
        .targets
        .iter()
        .rposition(|&t| t != PAD_ID)
        .map_or(0, |i| i + 1);
    if used == 0 {
        return Err(Error::Dataset("target sequence is all padding".into()));
    }
    let xs = model.record_inputs(g, params, &sample.video)?;
    let targets = &sample.targets[..used];
    let (logits, _) = model.record_sequence(g, params, &xs, Decode::Teacher(targets))?;
    let flat = g.concat(&logits)?;
    let l = g.reshape(flat, &[used, model.vocab.len()])?;
    g.seq_nll(l, targets, PAD_ID)
}

pub fn train_cnet<C>(
    model: &mut CaptionModel,
    samples: &[CNetSample],
    cfg: &TrainConfig,
    state: &mut TrainState,
    mut on_epoch: C,
) -> Result<Vec<EpochLog>>
where
    C: FnMut(&EpochLog, &CaptionModel, &TrainState) -> Result<()>,
{
    if samples.is_empty() {
        return Err(Error::Dataset("CNet training set is empty".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.targets.len() != model.arch.steps) {
        return Err(Error::Dataset(format!(
            "sample has {} targets, decoder runs {} steps",
            s.targets.len(),
            model.arch.steps
        )));
    }
    let mut params = model.params.clone();
    let template = model.clone();
    let logs = train_loop(
        &mut params,
        samples.len(),
        cfg,
        state,
        |p, i| {
            let mut g = Graph::new();
            let loss = record_loss(&mut g, p, &template, &samples[i])?;
            g.backward(loss)?;
            let l = g.value(loss).item();
            Ok(SampleGrad::from_graph(&g, p, l, vec![l]))
        },
        |log, p, st| {
            let snapshot = CaptionModel {
                params: p.clone(),
                ..template.clone()
            };
            on_epoch(log, &snapshot, st)
        },
    )?;
    model.params = params;
    Ok(logs)
}

/// Always emits the greedy most-frequent word chain of the training
/// commands, starting after `BOS`. Ties go to the lexicographically smaller
/// word.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BigramBaseline {
    counts: BTreeMap<String, BTreeMap<String, usize>>,
}

impl BigramBaseline {
    pub fn fit<'a>(commands: impl IntoIterator<Item = &'a CommandSentence>) -> Self {
        let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for c in commands {
            let mut prev = BOS.to_string();
            for t in c.tokens() {
                *counts.entry(prev).or_default().entry(t.clone()).or_default() += 1;
                prev = t.clone();
            }
        }
        Self { counts }
    }

    pub fn sentence(&self) -> CommandSentence {
        let mut out: Vec<String> = Vec::new();
        let mut prev = BOS.to_string();
        while out.len() < MAX_COMMAND_TOKENS {
            let Some(next) = self.counts.get(&prev).and_then(|m| {
                m.iter()
                    .fold(None, |best: Option<(&String, usize)>, (w, &n)| match best {
                        Some((_, b)) if b >= n => best,
                        _ => Some((w, n)),
                    })
                    .map(|(w, _)| w.clone())
            }) else {
                break;
            };
            if next == EOC {
                break;
            }
            out.push(next.clone());
            prev = next;
        }
        CommandSentence::from_decoded(&out)
    }
}

impl Captioner for BigramBaseline {
    fn caption(&self, _episode: &Episode) -> Result<CommandSentence> {
        Ok(self.sentence())
    }
}

/// Central-difference check of the full sequence loss over every parameter
/// of a toy model: 3 frames, d = 8, a 6-token vocabulary.
pub fn loss_grad_check(h: f64, seed: u64) -> Result<GradCheckReport> {
    let arch = CNetArch {
        in_channels: 3,
        frame_size: (8, 8),
        input_pool: 2,
        widths: (2, 3),
        feature: 4,
        hidden: 8,
        embed: 3,
        steps: 3,
        forget_bias: 1.0,
    };
    let words = |s: &str| CommandSentence::new(s.split(' ').map(String::from).collect());
    let vocab = Vocabulary::from_commands(&[words("a b EOC")?, words("b a EOC")?]);
    let mut model = CaptionModel::new(arch.clone(), vocab, Fusion::Fused, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // zero biases over the all-zero parts of the difference map would put
    // ReLU inputs exactly on the kink
    for (name, p) in model.params.iter_mut() {
        if name.ends_with(".b") {
            for v in p.value.data_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
    let frames = (0..arch.steps)
        .map(|_| {
            let data = (0..3 * 64).map(|_| rng.random_range(0.0..1.0)).collect();
            RasterFrame::new(Tensor::from_vec(&[3, 8, 8], data)?, None)
        })
        .collect::<Result<Vec<_>>>()?;
    let start = BinaryMask::from_fn(8, 8, |i, j| i < 3 && j < 3);
    let end = BinaryMask::from_fn(8, 8, |i, j| i > 4 && j > 2);
    let sample = CNetSample {
        video: VideoInput::from_masks(&frames, &start, &end, &arch)?,
        targets: vec![4, 5, EOC_ID],
    };
    grad_check(|g, p| record_loss(g, p, &model, &sample), &model.params, h, usize::MAX, seed)
}
