//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs every criterion by default. `D2C_ACCEPT=1,4,8` selects a subset.
//! Trained models are shared between criteria, so running 6, 9 or 10
//! alone still trains what they depend on.

use std::cell::OnceCell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use d2c_core::capmetrics::{bleu4, cider, meteor, rouge_l, score_corpus, EvalPair, MetricRow, ROUGE_BETA};
use d2c_core::cnet::{
    loss_grad_check, train_cnet, BigramBaseline, CNetArch, CNetSample, CaptionModel, Fusion, Vocabulary,
};
use d2c_core::geom::{convex_hull, min_area_rect, Point};
use d2c_core::gnet::{evaluate_gnet, joint_grad_check, train_gnet, DetectOptions, GNet, GNetMetrics, GNetSample, OracleDetector};
use d2c_core::micrograd::{cls_loss, layer_suite, seg_loss, EpochLog, ParameterSet, TrainConfig, TrainState};
use d2c_core::raster::ChannelMode;
use d2c_core::scenegen::{
    derive_seed, generate_episode, generate_scene, generate_scene_with, render, Category, CategorySet, EpisodeConfig,
    NoiseConfig, ObjectKind, SceneConfig, Shape, BOS, EOC, PAD,
};
use d2c_core::simeval::{
    grasp_protocol, grasp_trial, run_pipeline, success_rate, Captioner, FailureStage, GraspDetector,
    GraspTolerances, OracleCaptioner, SuccessKind, SuccessRate,
};
use d2c_core::{CommandSentence, Episode, Error, GraspSolution, RasterFrame, Tensor};

const SEED: u64 = 1;
const GNET_INIT: u64 = 7;
const CNET_INIT: u64 = 3;
const H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------------------------------------------------------------- training runs

fn gnet_config() -> TrainConfig {
    TrainConfig { lr: 0.3, clip_norm: 5.0, batch: 10, epochs: 30, lr_decay: 0.5, patience: 2, seed: 1 }
}

fn cnet_config() -> TrainConfig {
    TrainConfig { lr: 0.5, clip_norm: 5.0, batch: 15, epochs: 30, lr_decay: 0.5, patience: 2, seed: 1 }
}

fn scene_samples(cfg: &SceneConfig, stream: u64, n: usize, channels: ChannelMode) -> Vec<GNetSample> {
    (0..n as u64)
        .map(|i| GNetSample::from_scene(&generate_scene(derive_seed(SEED, stream, i), cfg).unwrap(), channels).unwrap())
        .collect()
}

fn param_bits(p: &ParameterSet) -> Vec<(String, Vec<u64>)> {
    p.iter()
        .map(|(n, v)| (n.to_string(), v.value.data().iter().map(|x| x.to_bits()).collect()))
        .collect()
}

fn log_bits(logs: &[EpochLog]) -> Vec<Vec<u64>> {
    logs.iter()
        .map(|l| {
            let mut v = vec![l.epoch as u64, l.loss.to_bits(), l.lr.to_bits(), l.clamped as u64];
            v.extend(l.components.iter().map(|c| c.to_bits()));
            v
        })
        .collect()
}

fn gnet_metric_bits(m: &GNetMetrics) -> Vec<u64> {
    vec![
        m.iou.to_bits(),
        m.pixel_accuracy.to_bits(),
        m.cls_accuracy.to_bits(),
        m.objects as u64,
        m.empty_fg_fraction.map_or(u64::MAX, f64::to_bits),
    ]
}

fn row_bits(r: &MetricRow) -> [u64; 4] {
    [r.bleu4.to_bits(), r.meteor.to_bits(), r.rouge_l.to_bits(), r.cider.to_bits()]
}

struct GnetRun {
    net: GNet,
    metrics: GNetMetrics,
    logs: Vec<EpochLog>,
    elapsed: Duration,
}

impl GnetRun {
    fn fingerprint(&self) -> (Vec<(String, Vec<u64>)>, Vec<Vec<u64>>, Vec<u64>) {
        (param_bits(&self.net.joint_params().unwrap()), log_bits(&self.logs), gnet_metric_bits(&self.metrics))
    }
}

/// 200 training scenes, 60 held out, default categories and noise.
fn run_gnet() -> GnetRun {
    let t0 = Instant::now();
    let cfg = SceneConfig::default();
    let train = scene_samples(&cfg, 1, 200, ChannelMode::Rgb);
    let test = scene_samples(&cfg, 2, 60, ChannelMode::Rgb);
    let mut net = GNet::new(ChannelMode::Rgb, cfg.categories.clone(), GNET_INIT).unwrap();
    let tc = gnet_config();
    let logs = train_gnet(&mut net, &train, &tc, &mut TrainState::new(&tc), |_, _, _| Ok(())).unwrap();
    let metrics = evaluate_gnet(&net, &test).unwrap();
    GnetRun { net, metrics, logs, elapsed: t0.elapsed() }
}

struct CnetRun {
    fused: CaptionModel,
    frame_only: CaptionModel,
    rows: [MetricRow; 3],
    logs: [Vec<EpochLog>; 2],
    test: Vec<Episode>,
    elapsed: Duration,
}

impl CnetRun {
    fn fingerprint(&self) -> Vec<u64> {
        let mut v = Vec::new();
        for m in [&self.fused, &self.frame_only] {
            v.extend(param_bits(&m.params).into_iter().flat_map(|(_, b)| b));
        }
        for l in &self.logs {
            v.extend(log_bits(l).into_iter().flatten());
        }
        v.extend(self.rows.iter().flat_map(row_bits));
        v
    }
}

/// 300 episodes, first 210 for training; bigram, frame-only and fused rows.
fn run_cnet() -> CnetRun {
    let t0 = Instant::now();
    let cfg = EpisodeConfig::default();
    let eps: Vec<Episode> = (0..300u64)
        .map(|i| generate_episode(derive_seed(SEED, 3, i), &cfg).unwrap())
        .collect();
    let (tr, te) = eps.split_at(210);
    let vocab = Vocabulary::from_commands(tr.iter().map(|e| &e.command));
    let arch = CNetArch::new(ChannelMode::Rgb);
    let samples = |set: &[Episode]| -> Vec<CNetSample> {
        set.iter()
            .map(|e| CNetSample::from_episode(e, &vocab, &arch, ChannelMode::Rgb).unwrap())
            .collect()
    };
    let (train, test) = (samples(tr), samples(te));
    let score = |captions: Vec<CommandSentence>| {
        let pairs: Vec<EvalPair> = captions
            .iter()
            .zip(te)
            .map(|(c, e)| EvalPair::single(c.tokens(), e.command.tokens()))
            .collect();
        score_corpus(&pairs).unwrap()
    };
    let bigram = BigramBaseline::fit(tr.iter().map(|e| &e.command)).sentence();
    let bigram_row = score(vec![bigram; te.len()]);
    let tc = cnet_config();
    let train_one = |fusion| {
        let mut m = CaptionModel::new(arch.clone(), vocab.clone(), fusion, CNET_INIT).unwrap();
        let logs = train_cnet(&mut m, &train, &tc, &mut TrainState::new(&tc), |_, _, _| Ok(())).unwrap();
        let row = score(test.iter().map(|s| m.caption(&s.video).unwrap()).collect());
        (m, logs, row)
    };
    let (frame_only, frame_logs, frame_row) = train_one(Fusion::FrameOnly);
    let (fused, fused_logs, fused_row) = train_one(Fusion::Fused);
    CnetRun {
        fused,
        frame_only,
        rows: [bigram_row, frame_row, fused_row],
        logs: [frame_logs, fused_logs],
        test: te.to_vec(),
        elapsed: t0.elapsed(),
    }
}

#[derive(Default)]
struct Runs {
    gnet: OnceCell<GnetRun>,
    cnet: OnceCell<CnetRun>,
}

impl Runs {
    fn gnet(&self) -> &GnetRun {
        self.gnet.get_or_init(run_gnet)
    }

    fn cnet(&self) -> &CnetRun {
        self.cnet.get_or_init(run_cnet)
    }
}

// ---------------------------------------------------------------- 1: geometry

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Every ordered pair whose supporting line has all other points on its left
/// (or on the segment itself) is a hull edge; the vertices are their ends.
fn brute_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let on_segment = |a: Point, b: Point, p: Point| {
        p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
    };
    let mut verts = Vec::new();
    for (i, &a) in pts.iter().enumerate() {
        for (j, &b) in pts.iter().enumerate() {
            if i == j {
                continue;
            }
            let edge = pts.iter().enumerate().all(|(k, &p)| {
                if k == i || k == j {
                    return true;
                }
                let c = cross(a, b, p);
                c > 0.0 || (c == 0.0 && on_segment(a, b, p))
            });
            if edge {
                verts.push(a);
                verts.push(b);
            }
        }
    }
    verts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    verts.dedup();
    verts
}

fn sweep_min_area(points: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for step in 0..900 {
        let (s, c) = (step as f64 * 0.1).to_radians().sin_cos();
        let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in points {
            let (u, v) = (x * c + y * s, -x * s + y * c);
            u0 = u0.min(u);
            u1 = u1.max(u);
            v0 = v0.min(v);
            v1 = v1.max(v);
        }
        best = best.min((u1 - u0) * (v1 - v0));
    }
    best
}

fn criterion_1(_: &Runs) -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut failures = Vec::new();
    for cloud in 0..100 {
        let n = rng.random_range(3..=50);
        // odd clouds sit on a small integer grid to force duplicates and collinear runs
        let pts: Vec<Point> = (0..n)
            .map(|_| {
                if cloud % 2 == 1 {
                    (rng.random_range(0..12) as f64, rng.random_range(0..12) as f64)
                } else {
                    (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0))
                }
            })
            .collect();
        let hull = convex_hull(&pts).unwrap();
        let mut sorted = hull.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted != brute_hull(&pts) {
            failures.push(format!("cloud {cloud}: hull mismatch"));
            continue;
        }
        if hull.len() < 3 {
            continue;
        }
        let r = min_area_rect(&hull).unwrap();
        let area = 4.0 * r.half_extents.0 * r.half_extents.1;
        let sweep = sweep_min_area(&pts);
        if area > sweep * (1.0 + 1e-9) {
            failures.push(format!("cloud {cloud}: rect {area} > sweep {sweep}"));
        }
    }
    let t = t0.elapsed();
    check(
        failures.is_empty() && t < Duration::from_secs(5),
        format!("100 clouds, {} failures{}, {:.2}s", failures.len(), first_of(&failures), secs(t)),
    )
}

// ---------------------------------------------------------------- 2: grasp recovery

/// Share of single-object scenes whose oracle grasp lands within 1 px and
/// 2 degrees of the placed rectangle; also the worst errors seen.
fn recovery(cfg: &SceneConfig, stream: u64, n: u64) -> (usize, f64, f64) {
    let det = OracleDetector { categories: cfg.categories.clone(), options: DetectOptions::default() };
    let (mut worst_xy, mut worst_theta, mut passed) = (0.0f64, 0.0f64, 0);
    for k in 0..n {
        let scene = generate_scene_with(derive_seed(SEED, stream, k), cfg, &[k as usize % cfg.categories.len()]).unwrap();
        let obj = &scene.objects[0];
        let grasps = det.detect(&render(&scene, ChannelMode::Rgb)).unwrap();
        let Some(g) = grasps.first() else { continue };
        let dxy = (g.x - obj.cx).hypot(g.y - obj.cy);
        let d = (g.theta - obj.long_axis_deg()).rem_euclid(180.0);
        let dth = d.min(180.0 - d);
        worst_xy = worst_xy.max(dxy);
        worst_theta = worst_theta.max(dth);
        passed += (grasps.len() == 1 && dxy <= 1.0 && dth <= 2.0) as usize;
    }
    (passed, worst_xy, worst_theta)
}

fn criterion_2(_: &Runs) -> Outcome {
    // A binary mask only pins an edge of length L to within about 1/L rad,
    // so the rectangles are drawn at a scale where 2 degrees is resolvable.
    let rect = Category {
        name: "rectangle".into(),
        kind: ObjectKind::Block,
        shape: Shape::Rectangle,
        color: [200, 40, 40],
        height: 0.3,
        long: (48.0, 80.0),
        short: Some((24.0, 40.0)),
    };
    let cfg = SceneConfig {
        canvas: (192, 192),
        categories: CategorySet::new(vec![rect]).unwrap(),
        min_objects: 1,
        max_objects: 1,
        noise: NoiseConfig::NONE,
        ..SceneConfig::default()
    };
    let (passed, worst_xy, worst_theta) = recovery(&cfg, 20, 100);
    let cats = SceneConfig::default().categories;
    let blocks = CategorySet::new(cats.indices_of_kind(ObjectKind::Block).iter().map(|&i| cats.get(i).unwrap().clone()).collect())
        .unwrap();
    let small = SceneConfig { categories: blocks, min_objects: 1, max_objects: 1, noise: NoiseConfig::NONE, ..SceneConfig::default() };
    let (small_passed, _, small_theta) = recovery(&small, 21, 100);
    check(
        passed == 100,
        format!(
            "{passed}/100 within 1 px and 2 deg; worst {worst_xy:.3} px, {worst_theta:.3} deg \
             (96 px canvas blocks: {small_passed}/100, worst {small_theta:.2} deg)"
        ),
    )
}

// ---------------------------------------------------------------- 3: gradients

fn criterion_3(_: &Runs) -> Outcome {
    let t0 = Instant::now();
    let mut reports = layer_suite(H, 3).map_err(|e| e.to_string())?;
    reports.push(("gnet_joint_loss", joint_grad_check(H, 3).map_err(|e| e.to_string())?));
    reports.push(("cnet_loss", loss_grad_check(H, 3).map_err(|e| e.to_string())?));
    let t = t0.elapsed();
    let worst = reports
        .iter()
        .max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error))
        .unwrap();
    let all = reports.iter().all(|(_, r)| r.max_rel_error < GRAD_TOL && r.checked > 0);
    check(
        all && t < Duration::from_secs(120),
        format!(
            "{} checks, worst {} at {:.2e}, {:.1}s",
            reports.len(),
            worst.0,
            worst.1.max_rel_error,
            secs(t)
        ),
    )
}

// ---------------------------------------------------------------- 4: loss anchors

fn criterion_4(_: &Runs) -> Outcome {
    let uniform17 = vec![1.0 / 17.0; 17];
    let cls = cls_loss(&uniform17, 5).unwrap();
    let seg = seg_loss(&Tensor::full(&[2, 4, 4], 0.5), &[0, 1, 1, 0, 1, 0, 0, 0, 1, 1, 1, 1, 0, 0, 0, 1]).unwrap();
    let mut onehot = vec![0.0; 17];
    onehot[3] = 1.0;
    let cls_perfect = cls_loss(&onehot, 3).unwrap();
    let labels = [0usize, 1, 1, 0];
    let mut p = Tensor::zeros(&[2, 2, 2]);
    for (k, &l) in labels.iter().enumerate() {
        p.data_mut()[l * 4 + k] = 1.0;
    }
    let seg_perfect = seg_loss(&p, &labels).unwrap();
    let ok = (cls - 17f64.ln()).abs() <= 1e-9
        && (seg - 2f64.ln()).abs() <= 1e-9
        && cls_perfect.abs() <= 1e-9
        && seg_perfect.abs() <= 1e-9;
    check(
        ok,
        format!("cls {cls:.12} seg {seg:.12} perfect {cls_perfect:.1e}/{seg_perfect:.1e}"),
    )
}

// ---------------------------------------------------------------- 5: GNet training

fn criterion_5(runs: &Runs) -> Outcome {
    let r = runs.gnet();
    let m = &r.metrics;
    check(
        m.iou >= 0.85 && m.pixel_accuracy >= 0.97 && m.cls_accuracy >= 0.90 && r.elapsed <= Duration::from_secs(900),
        format!(
            "IoU {:.3} pixel acc {:.3} cls acc {:.3} ({} objects), {} epochs, {:.0}s",
            m.iou,
            m.pixel_accuracy,
            m.cls_accuracy,
            m.objects,
            r.logs.len(),
            secs(r.elapsed)
        ),
    )
}

// ---------------------------------------------------------------- 6: grasp success

fn twin_success(channels: ChannelMode) -> SuccessRate {
    let cats = CategorySet::with_height_twin("red_block", "tall_red_block", 0.9).unwrap();
    let cfg = SceneConfig { categories: cats.clone(), ..SceneConfig::default() };
    let train = scene_samples(&cfg, 5, 200, channels);
    let mut net = GNet::new(channels, cats.clone(), GNET_INIT).unwrap();
    let tc = gnet_config();
    train_gnet(&mut net, &train, &tc, &mut TrainState::new(&tc), |_, _, _| Ok(())).unwrap();
    let pair = [cats.index_of("red_block").unwrap(), cats.index_of("tall_red_block").unwrap()];
    let tol = GraspTolerances::default();
    let hits = (0..120u64)
        .filter(|&k| {
            let c = pair[k as usize % 2];
            let scene = generate_scene_with(derive_seed(SEED, 6, k), &cfg, &[c]).unwrap();
            let name = &cats.get(c).unwrap().name;
            grasp_trial(&scene, name, &net, &cats, &tol, channels).unwrap().success
        })
        .count();
    SuccessRate::new(hits, 120).unwrap()
}

fn criterion_6(runs: &Runs) -> Outcome {
    let net = &runs.gnet().net;
    let cfg = SceneConfig::default();
    let tasks = grasp_protocol(derive_seed(SEED, 4, 0), &cfg, 120).unwrap();
    let tol = GraspTolerances::default();
    let hits = tasks
        .iter()
        .filter(|t| grasp_trial(&t.scene, &t.category, net, &cfg.categories, &tol, ChannelMode::Rgb).unwrap().success)
        .count();
    let rate = SuccessRate::new(hits, 120).unwrap();
    let rgb = twin_success(ChannelMode::Rgb);
    let rgbd = twin_success(ChannelMode::Rgbd);
    check(
        rate.fraction() >= 0.90 && rgbd.successes >= rgb.successes,
        format!("held-out {rate}; height twins rgb {rgb}, rgbd {rgbd}"),
    )
}

// ---------------------------------------------------------------- 7: caption ordering

fn criterion_7(runs: &Runs) -> Outcome {
    let r = runs.cnet();
    let [bigram, frame, fused] = &r.rows;
    check(
        fused.bleu4 >= frame.bleu4
            && frame.bleu4 > bigram.bleu4
            && fused.bleu4 > bigram.bleu4
            && r.elapsed <= Duration::from_secs(1800),
        format!(
            "BLEU-4 fused {:.3} frame-only {:.3} bigram {:.3}; CIDEr {:.2}/{:.2}/{:.2}, {:.0}s",
            fused.bleu4,
            frame.bleu4,
            bigram.bleu4,
            fused.cider,
            frame.cider,
            bigram.cider,
            secs(r.elapsed)
        ),
    )
}

// ---------------------------------------------------------------- 8: metrics

fn norm(tokens: &[String]) -> Vec<String> {
    tokens
        .iter()
        .filter(|t| !matches!(t.as_str(), PAD | EOC | BOS))
        .map(|t| t.to_lowercase())
        .collect()
}

/// All length-`n` windows, with repeats.
fn windows(t: &[String], n: usize) -> Vec<Vec<String>> {
    if t.len() < n {
        return Vec::new();
    }
    (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
}

fn count(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn distinct(list: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut v = list.to_vec();
    v.sort();
    v.dedup();
    v
}

/// Corpus BLEU-4 from its textbook definition.
fn oracle_bleu(corpus: &[(Vec<String>, Vec<Vec<String>>)]) -> f64 {
    let (mut matched, mut total) = ([0usize; 4], [0usize; 4]);
    let (mut c, mut r) = (0usize, 0usize);
    for (cand, refs) in corpus {
        for n in 1..=4 {
            let cw = windows(cand, n);
            total[n - 1] += cw.len();
            for g in distinct(&cw) {
                let best_ref = refs.iter().map(|rf| count(&windows(rf, n), &g)).max().unwrap();
                matched[n - 1] += count(&cw, &g).min(best_ref);
            }
        }
        c += cand.len();
        let mut best = refs[0].len();
        for rf in refs {
            let (d, bd) = (rf.len().abs_diff(cand.len()), best.abs_diff(cand.len()));
            if d < bd || (d == bd && rf.len() < best) {
                best = rf.len();
            }
        }
        r += best;
    }
    if c == 0 || matched.contains(&0) {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        log_sum += (matched[n] as f64 / total[n] as f64).ln() / 4.0;
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * log_sum.exp()
}

/// Exhaustive METEOR: every one-to-one exact alignment is enumerated.
fn oracle_meteor(cand: &[String], refr: &[String]) -> f64 {
    fn all(i: usize, cand: &[String], refr: &[String], map: &mut Vec<Option<usize>>, out: &mut Vec<Vec<Option<usize>>>) {
        if i == cand.len() {
            out.push(map.clone());
            return;
        }
        map.push(None);
        all(i + 1, cand, refr, map, out);
        map.pop();
        for j in 0..refr.len() {
            if refr[j] == cand[i] && !map.contains(&Some(j)) {
                map.push(Some(j));
                all(i + 1, cand, refr, map, out);
                map.pop();
            }
        }
    }
    let mut aligns = Vec::new();
    all(0, cand, refr, &mut Vec::new(), &mut aligns);
    let (mut m, mut chunks) = (0usize, usize::MAX);
    for a in &aligns {
        let mm = a.iter().flatten().count();
        let ch = (0..a.len())
            .filter(|&i| match a[i] {
                None => false,
                Some(j) => !(i > 0 && j > 0 && a[i - 1] == Some(j - 1)),
            })
            .count();
        if mm > m || (mm == m && ch < chunks) {
            (m, chunks) = (mm, ch);
        }
    }
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / refr.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    f_mean * (1.0 - 0.5 * (chunks as f64 / m as f64).powi(3))
}

/// ROUGE-L with the LCS found by trying every candidate subsequence.
fn oracle_rouge(cand: &[String], refr: &[String]) -> f64 {
    let is_subseq = |s: &[&String]| {
        let mut it = refr.iter();
        s.iter().all(|x| it.any(|y| y == *x))
    };
    let mut l = 0;
    for mask in 0u32..(1 << cand.len()) {
        let sub: Vec<&String> = (0..cand.len()).filter(|&i| mask >> i & 1 == 1).map(|i| &cand[i]).collect();
        if sub.len() > l && is_subseq(&sub) {
            l = sub.len();
        }
    }
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / cand.len() as f64;
    let r = l as f64 / refr.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * r * p / (r + b2 * p)
}

/// CIDEr with explicit TF-IDF vectors over the sorted n-gram vocabulary.
fn oracle_cider(corpus: &[(Vec<String>, Vec<Vec<String>>)]) -> f64 {
    let n_docs = corpus.len() as f64;
    let mut total = 0.0;
    for (cand, refs) in corpus {
        let mut score = 0.0;
        for n in 1..=4 {
            let mut vocab: Vec<Vec<String>> = windows(cand, n);
            for (c2, r2) in corpus {
                vocab.extend(windows(c2, n));
                for rf in r2 {
                    vocab.extend(windows(rf, n));
                }
            }
            let vocab = distinct(&vocab);
            let idf: Vec<f64> = vocab
                .iter()
                .map(|g| {
                    let df = corpus
                        .iter()
                        .filter(|(_, r2)| r2.iter().any(|rf| count(&windows(rf, n), g) > 0))
                        .count();
                    (n_docs / df.max(1) as f64).ln()
                })
                .collect();
            let cw = windows(cand, n);
            let a: Vec<usize> = vocab.iter().map(|g| count(&cw, g)).collect();
            let mut per_ref = 0.0;
            for rf in refs {
                let rw = windows(rf, n);
                let b: Vec<usize> = vocab.iter().map(|g| count(&rw, g)).collect();
                let (mut na, mut nb, mut dot) = (0.0, 0.0, 0.0);
                for k in 0..vocab.len() {
                    let w = idf[k];
                    if a[k] > 0 {
                        na += (a[k] as f64 * w).powi(2);
                    }
                    if b[k] > 0 {
                        nb += (b[k] as f64 * w).powi(2);
                    }
                    if a[k] > 0 && b[k] > 0 {
                        dot += (a[k].min(b[k]) as f64 * w) * (b[k] as f64 * w);
                    }
                }
                let denom: f64 = (na * nb).sqrt();
                if denom > 0.0 {
                    per_ref += dot / denom;
                }
            }
            score += per_ref / refs.len() as f64;
        }
        total += 10.0 / 4.0 * score;
    }
    total / corpus.len() as f64
}

fn criterion_8(_: &Runs) -> Outcome {
    let s = |t: &str| t.split_whitespace().map(String::from).collect::<Vec<_>>();
    let same = s("stack red_block on blue_block EOC");
    let ident = EvalPair::single(&same, &same);
    let multi = vec![
        ident.clone(),
        EvalPair::single(&s("place apple into red_cup"), &s("place apple into red_cup")),
        EvalPair::single(&s("stack blue_block on green_block"), &s("stack blue_block on green_block")),
    ];
    let anchors = [
        ("BLEU-4", bleu4(&[ident.clone()]).unwrap(), 1.0),
        ("ROUGE-L", rouge_l(&ident), 1.0),
        ("METEOR", meteor(&ident), 0.9921875),
        ("CIDEr", cider(&multi).unwrap(), 10.0),
    ];
    let mut bad: Vec<String> = anchors
        .iter()
        .filter(|(_, got, want)| got != want)
        .map(|(n, got, want)| format!("{n} {got} != {want}"))
        .collect();

    let words = ["a", "b", "c", "d", "E", EOC, PAD];
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let sentence = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let len = rng.random_range(1..=7);
        (0..len).map(|_| words[rng.random_range(0..words.len())].to_string()).collect()
    };
    let mut pairs = Vec::new();
    let mut raw = Vec::new();
    for _ in 0..50 {
        let cand = sentence(&mut rng);
        let refs: Vec<Vec<String>> = (0..rng.random_range(1..=3)).map(|_| sentence(&mut rng)).collect();
        pairs.push(EvalPair::new(&cand, &refs).unwrap());
        raw.push((norm(&cand), refs.iter().map(|r| norm(r)).collect::<Vec<_>>()));
    }
    for (k, (p, (c, r))) in pairs.iter().zip(&raw).enumerate() {
        let one = std::slice::from_ref(&raw[k]);
        let got = [bleu4(std::slice::from_ref(p)).unwrap(), meteor(p), rouge_l(p)];
        let want = [oracle_bleu(one), oracle_meteor(c, &r[0]), oracle_rouge(c, &r[0])];
        for (name, g, w) in [("BLEU-4", got[0], want[0]), ("METEOR", got[1], want[1]), ("ROUGE-L", got[2], want[2])] {
            if g.to_bits() != w.to_bits() {
                bad.push(format!("pair {k} {name} {g} != {w}"));
            }
        }
    }
    for (name, g, w) in [
        ("corpus BLEU-4", bleu4(&pairs).unwrap(), oracle_bleu(&raw)),
        ("corpus CIDEr", cider(&pairs).unwrap(), oracle_cider(&raw)),
        ("half CIDEr", cider(&pairs[..25]).unwrap(), oracle_cider(&raw[..25])),
    ] {
        if g.to_bits() != w.to_bits() {
            bad.push(format!("{name} {g} != {w}"));
        }
    }
    let nonzero = raw.iter().filter(|(c, r)| oracle_meteor(c, &r[0]) > 0.0).count();
    check(
        bad.is_empty(),
        format!("anchors exact; 50 random pairs ({nonzero} with matches) agree bit for bit{}", first_of(&bad)),
    )
}

// ---------------------------------------------------------------- 9: pipeline

struct Broken;

impl Captioner for Broken {
    fn caption(&self, _: &Episode) -> d2c_core::Result<CommandSentence> {
        Err(Error::Dataset("no frames".into()))
    }
}

impl GraspDetector for Broken {
    fn detect(&self, _: &RasterFrame) -> d2c_core::Result<Vec<GraspSolution>> {
        Err(Error::Dataset("no frame".into()))
    }
}

struct Gibberish;

impl Captioner for Gibberish {
    fn caption(&self, _: &Episode) -> d2c_core::Result<CommandSentence> {
        Ok(CommandSentence::from_decoded(&["on", "on", "EOC"]))
    }
}

struct Blind;

impl GraspDetector for Blind {
    fn detect(&self, _: &RasterFrame) -> d2c_core::Result<Vec<GraspSolution>> {
        Ok(Vec::new())
    }
}

/// Puts every grasp of the wrapped detector at the canvas corner.
struct Offset(OracleDetector);

impl GraspDetector for Offset {
    fn detect(&self, frame: &RasterFrame) -> d2c_core::Result<Vec<GraspSolution>> {
        let mut g = self.0.detect(frame)?;
        for s in &mut g {
            (s.x, s.y) = (0.0, 0.0);
        }
        Ok(g)
    }
}

fn criterion_9(runs: &Runs) -> Outcome {
    let scene = SceneConfig { noise: NoiseConfig::NONE, ..SceneConfig::default() };
    let cfg = EpisodeConfig { scene, n_frames: 4, ..EpisodeConfig::default() };
    let cats = cfg.scene.categories.clone();
    let tol = GraspTolerances::default();
    let eps: Vec<Episode> = (0..20u64).map(|i| generate_episode(derive_seed(SEED, 9, i), &cfg).unwrap()).collect();
    let oracle = OracleDetector { categories: cats.clone(), options: DetectOptions::default() };
    let run = |det: &dyn GraspDetector, cap: &dyn Captioner, eps: &[Episode]| {
        eps.iter()
            .enumerate()
            .map(|(k, e)| run_pipeline(k as u64, e, det, cap, &cats, &tol, ChannelMode::Rgb))
            .collect::<Vec<_>>()
    };
    let closure = success_rate(&run(&oracle, &OracleCaptioner, &eps), SuccessKind::Task).unwrap();

    let stages = [
        (run(&oracle, &Broken, &eps[..2]), FailureStage::Caption),
        (run(&oracle, &Gibberish, &eps[..2]), FailureStage::Parse),
        (run(&Broken, &OracleCaptioner, &eps[..2]), FailureStage::Detect),
        (run(&Blind, &OracleCaptioner, &eps[..2]), FailureStage::Detect),
        (run(&Offset(oracle), &OracleCaptioner, &eps[..2]), FailureStage::Grasp),
    ];
    let paths_ok = stages
        .iter()
        .all(|(reports, stage)| reports.iter().all(|r| !r.task_success && r.failure_stage == *stage));

    let gnet = &runs.gnet().net;
    let cnet = runs.cnet();
    let trained = success_rate(&run(gnet, &cnet.fused, &cnet.test[..20]), SuccessKind::Task).unwrap();
    let shown = format!("{}/{}", trained.successes, trained.total);
    check(
        closure.successes == 20 && closure.total == 20 && paths_ok && trained.total == 20,
        format!(
            "oracle {}/20, failure paths {}, trained models {shown}",
            closure.successes,
            if paths_ok { "reported" } else { "misreported" }
        ),
    )
}

// ---------------------------------------------------------------- 10: determinism

fn criterion_10(runs: &Runs) -> Outcome {
    let g = runs.gnet().fingerprint() == run_gnet().fingerprint();
    let c = runs.cnet().fingerprint() == run_cnet().fingerprint();
    check(g && c, format!("GNet repeat identical: {g}; CNet repeat identical: {c}"))
}

// ---------------------------------------------------------------- driver

type Criterion = fn(&Runs) -> Outcome;

fn main() {
    let all: [(usize, Criterion); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    // libtest flags (--nocapture, --quiet, ...) are accepted and ignored
    let listing = std::env::args().any(|a| a == "--list");
    if listing {
        for (n, _) in &all {
            println!("criterion_{n}: test");
        }
        return;
    }
    let selected: Option<Vec<usize>> = std::env::var("D2C_ACCEPT")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let runs = Runs::default();
    let mut failed = 0;
    for (n, f) in all {
        if selected.as_ref().is_some_and(|s| !s.contains(&n)) {
            continue;
        }
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| f(&runs)))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_text(&p))));
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2}: {tag}  {detail}  [{:.1}s]", secs(t0.elapsed()));
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn first_of(v: &[String]) -> String {
    v.first().map_or(String::new(), |f| format!(" (first: {f})"))
}
