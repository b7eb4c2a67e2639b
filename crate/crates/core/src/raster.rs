//! Image and mask operations: frames, binary and color masks, the video
//! difference map, connected components, thresholding, and box cropping.

use serde::{Deserialize, Serialize};

use crate::error::{arg, shape, Error, Result};
use crate::geom::BoundingBox;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    Rgb,
    Rgbd,
}

impl ChannelMode {
    pub fn count(self) -> usize {
        match self {
            ChannelMode::Rgb => 3,
            ChannelMode::Rgbd => 4,
        }
    }
}

/// A `(C, H, W)` image in `[0, 1]` with an optional per-pixel label mask.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterFrame {
    pub channels: Tensor,
    pub labels: Option<Vec<u16>>,
}

impl RasterFrame {
    /// Validates the layout and clamps values into `[0, 1]`.
    pub fn new(mut channels: Tensor, labels: Option<Vec<u16>>) -> Result<Self> {
        let [c, h, w] = channels.shape()[..] else {
            return shape(format!("frame must be (C, H, W), got {:?}", channels.shape()));
        };
        if c != 3 && c != 4 {
            return shape(format!("frame has {c} channels, expected 3 or 4"));
        }
        if h == 0 || w == 0 {
            return shape("frame has zero area");
        }
        if let Some(l) = &labels {
            if l.len() != h * w {
                return shape(format!("{} labels for a {h}×{w} frame", l.len()));
            }
        }
        channels.ensure_finite("frame")?;
        for v in channels.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self { channels, labels })
    }

    pub fn n_channels(&self) -> usize {
        self.channels.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.channels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.channels.shape()[2]
    }

    pub fn has_depth(&self) -> bool {
        self.n_channels() == 4
    }

    /// Foreground (any nonzero label) as a binary mask.
    pub fn label_mask(&self) -> Option<BinaryMask> {
        let labels = self.labels.as_ref()?;
        Some(BinaryMask {
            height: self.height(),
            width: self.width(),
            data: labels.iter().map(|&l| (l != 0) as u8).collect(),
        })
    }

    /// Only the first three channels.
    pub fn rgb(&self) -> RasterFrame {
        let n = self.height() * self.width();
        let data = self.channels.data()[..3 * n].to_vec();
        RasterFrame {
            channels: Tensor::from_vec(&[3, self.height(), self.width()], data).expect("sized"),
            labels: self.labels.clone(),
        }
    }
}

/// An `(H, W)` mask whose entries are exactly 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return shape(format!("{} mask values for {height}×{width}", data.len()));
        }
        if data.iter().any(|&v| v > 1) {
            return arg("mask values must be 0 or 1");
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..height * width).map(|k| f(k / width, k % width) as u8).collect();
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.width + j] == 1
    }

    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        self.data[i * self.width + j] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::from_vec(
            &[self.height, self.width],
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("sized")
    }
}

/// Image ⊙ mask, broadcast over channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorMask {
    pub data: Tensor,
}

/// Per-channel absolute difference of two color masks.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceMap {
    pub data: Tensor,
}

impl DifferenceMap {
    /// Pixels where any channel is nonzero.
    pub fn support(&self) -> BinaryMask {
        let (c, h, w) = self.data.chw().expect("rank 3");
        let n = h * w;
        let d = self.data.data();
        BinaryMask::from_fn(h, w, |i, j| (0..c).any(|ch| d[ch * n + i * w + j] != 0.0))
    }
}

pub fn color_mask(image: &RasterFrame, mask: &BinaryMask) -> Result<ColorMask> {
    let (h, w) = (image.height(), image.width());
    if (mask.height, mask.width) != (h, w) {
        return shape(format!(
            "mask is {}×{}, image is {h}×{w}",
            mask.height, mask.width
        ));
    }
    let n = h * w;
    let mut out = image.channels.clone();
    for (k, v) in out.data_mut().iter_mut().enumerate() {
        *v *= mask.data[k % n] as f64;
    }
    Ok(ColorMask { data: out })
}

pub fn vdm(start_cm: &ColorMask, end_cm: &ColorMask) -> Result<DifferenceMap> {
    if !start_cm.data.same_shape(&end_cm.data) {
        return shape(format!(
            "color masks differ in shape: {:?} vs {:?}",
            start_cm.data.shape(),
            end_cm.data.shape()
        ));
    }
    let data = start_cm
        .data
        .data()
        .iter()
        .zip(end_cm.data.data())
        .map(|(a, b)| (b - a).abs())
        .collect();
    Ok(DifferenceMap {
        data: Tensor::from_vec(start_cm.data.shape(), data)?,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

/// A connected set of foreground pixels, as `(row, col)` in scan order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelCluster {
    pub pixels: Vec<(usize, usize)>,
}

impl PixelCluster {
    pub fn size(&self) -> usize {
        self.pixels.len()
    }

    /// Pixel centers `(j + 0.5, i + 0.5)`.
    pub fn centers(&self) -> Vec<(f64, f64)> {
        self.pixels
            .iter()
            .map(|&(i, j)| (j as f64 + 0.5, i as f64 + 0.5))
            .collect()
    }
}

/// The size threshold that matches a 200-point rule at 360×480.
pub fn default_min_size(height: usize, width: usize) -> usize {
    (200.0 * (height * width) as f64 / (360.0 * 480.0)).round() as usize
}

/// 4-connected components with more than `min_size` pixels, largest first.
pub fn connected_components(mask: &BinaryMask, min_size: usize) -> Vec<PixelCluster> {
    connected_components_with(mask, min_size, Connectivity::Four)
}

pub fn connected_components_with(mask: &BinaryMask, min_size: usize, conn: Connectivity) -> Vec<PixelCluster> {
    let (h, w) = (mask.height, mask.width);
    let mut seen = vec![false; h * w];
    let mut clusters = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if seen[start] || mask.data[start] == 0 {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut members = Vec::new();
        while let Some(k) = stack.pop() {
            members.push(k);
            let (i, j) = ((k / w) as isize, (k % w) as isize);
            let mut visit = |di: isize, dj: isize| {
                let (ni, nj) = (i + di, j + dj);
                if ni < 0 || nj < 0 || ni >= h as isize || nj >= w as isize {
                    return;
                }
                let nk = ni as usize * w + nj as usize;
                if !seen[nk] && mask.data[nk] == 1 {
                    seen[nk] = true;
                    stack.push(nk);
                }
            };
            visit(-1, 0);
            visit(1, 0);
            visit(0, -1);
            visit(0, 1);
            if conn == Connectivity::Eight {
                visit(-1, -1);
                visit(-1, 1);
                visit(1, -1);
                visit(1, 1);
            }
        }
        if members.len() > min_size {
            members.sort_unstable();
            clusters.push(PixelCluster {
                pixels: members.into_iter().map(|k| (k / w, k % w)).collect(),
            });
        }
    }
    // stable: equal sizes keep scan order of their first pixel
    clusters.sort_by(|a, b| b.size().cmp(&a.size()));
    clusters
}

/// `1` where `prob ≥ tau`.
pub fn binarize(prob: &Tensor, tau: f64) -> Result<BinaryMask> {
    let [h, w] = prob.shape()[..] else {
        return shape(format!("probability map must be (H, W), got {:?}", prob.shape()));
    };
    Ok(BinaryMask {
        height: h,
        width: w,
        data: prob.data().iter().map(|&p| (p >= tau) as u8).collect(),
    })
}

/// Source pixel (flat `i * W + j`) for each pixel of an `out`-sized crop of
/// `box` from an `H×W` canvas. The box is clipped to the canvas first and
/// then sampled at nearest neighbours.
pub fn crop_indices(height: usize, width: usize, bbox: &BoundingBox, out: (usize, usize)) -> Result<Vec<usize>> {
    if !(bbox.w > 0.0 && bbox.h > 0.0) {
        return arg(format!("box has zero area: {bbox:?}"));
    }
    if out.0 == 0 || out.1 == 0 {
        return arg("crop output size must be positive");
    }
    let clip = |lo: f64, hi: f64, n: usize| -> (usize, usize) {
        let a = lo.floor().clamp(0.0, n as f64) as usize;
        let b = hi.ceil().clamp(0.0, n as f64) as usize;
        (a, b)
    };
    let (c0, c1) = clip(bbox.x - bbox.w / 2.0, bbox.x + bbox.w / 2.0, width);
    let (r0, r1) = clip(bbox.y - bbox.h / 2.0, bbox.y + bbox.h / 2.0, height);
    if c1 <= c0 || r1 <= r0 {
        return Err(Error::Argument(format!("box {bbox:?} does not intersect the canvas")));
    }
    let (oh, ow) = out;
    let rows: Vec<usize> = (0..oh).map(|i| r0 + (2 * i + 1) * (r1 - r0) / (2 * oh)).collect();
    let cols: Vec<usize> = (0..ow).map(|j| c0 + (2 * j + 1) * (c1 - c0) / (2 * ow)).collect();
    Ok(rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| r * width + c))
        .collect())
}

/// Crops `bbox` out of `image` and resamples it to `out = (rows, cols)`.
pub fn crop(image: &RasterFrame, bbox: &BoundingBox, out: (usize, usize)) -> Result<RasterFrame> {
    let (c, h, w) = image.channels.chw()?;
    let idx = crop_indices(h, w, bbox, out)?;
    let n = h * w;
    let src = image.channels.data();
    let mut data = Vec::with_capacity(c * idx.len());
    for ch in 0..c {
        data.extend(idx.iter().map(|&k| src[ch * n + k]));
    }
    let labels = image
        .labels
        .as_ref()
        .map(|l| idx.iter().map(|&k| l[k]).collect());
    RasterFrame::new(Tensor::from_vec(&[c, out.0, out.1], data)?, labels)
}
