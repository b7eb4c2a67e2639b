//! Subcommand implementations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use d2c_core::capmetrics::{score_corpus, EvalPair, MetricRow};
use d2c_core::cnet::{
    loss_grad_check, train_cnet, BigramBaseline, CNetSample, CaptionModel, Fusion, VideoInput, Vocabulary,
};
use d2c_core::gnet::{evaluate_gnet, joint_grad_check, segment, train_gnet, DetectOptions, GNet, GNetSample, OracleDetector};
use d2c_core::micrograd::{layer_suite, EpochLog, GradCheckReport, TrainConfig, TrainState};
use d2c_core::raster::{ChannelMode, RasterFrame};
use d2c_core::scenegen::derive_seed;
use d2c_core::simeval::{
    grasp_protocol, grasp_trial, parse_command, run_pipeline, success_rate, Captioner, ExecutionReport, GraspDetector,
    OracleCaptioner, SuccessKind, SuccessRate,
};
use d2c_core::{CommandSentence, Episode, Tensor};

use crate::config::RunConfig;
use crate::dataset::{self, Dataset, Split};
use crate::error::{data, CliError, CliResult};
use crate::{pnm, weights, CaptionArgs, Cli, Command, EvalWhich, FusionArg, TrainOverrides, TrainWhich};

pub const VOCAB_FILE: &str = "vocab.txt";

/// Resolved configuration and output directories for one invocation.
pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn new(cfg: RunConfig, out: PathBuf) -> Self {
        Self { cfg, out }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out.join(&self.cfg.paths.data)
    }

    pub fn models_dir(&self) -> PathBuf {
        self.out.join(&self.cfg.paths.models)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out.join(&self.cfg.paths.reports)
    }

    fn model_path(&self, name: &str, ext: &str) -> PathBuf {
        self.models_dir().join(format!("{name}.{ext}"))
    }

    fn dataset(&self) -> CliResult<Dataset> {
        let ds = Dataset::open(&self.data_dir())?;
        ds.check_config(&self.cfg)?;
        Ok(ds)
    }
}

pub fn cnet_name(fusion: Fusion) -> &'static str {
    match fusion {
        Fusion::Fused => "cnet_fused",
        Fusion::FrameOnly => "cnet_frame_only",
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let ctx = Context::new(cfg, cli.out.clone());
    match &cli.command {
        Command::GenData { force } => gen_data(&ctx, *force),
        Command::Train { which } => match which {
            TrainWhich::Gnet(o) => train_gnet_cmd(&ctx, o).map(|_| ()),
            TrainWhich::Cnet {
                train,
                use_oracle_masks,
                fusion,
            } => train_cnet_cmd(&ctx, train, *use_oracle_masks, (*fusion).into()).map(|_| ()),
        },
        Command::Eval { which } => match which {
            EvalWhich::Gnet => eval_gnet(&ctx).map(|_| ()),
            EvalWhich::Cnet { use_oracle_masks } => eval_cnet(&ctx, *use_oracle_masks).map(|_| ()),
            EvalWhich::Pipeline {
                oracle,
                use_oracle_masks,
                fusion,
            } => eval_pipeline(&ctx, *oracle, *use_oracle_masks, *fusion).map(|_| ()),
        },
        Command::Caption(args) => caption(&ctx, args).map(|line| println!("{line}")),
        Command::GradCheck { step, tolerance } => grad_check(&ctx, *step, *tolerance).map(|_| ()),
        Command::Metrics { candidates, references } => {
            let row = metrics(candidates, references)?;
            println!("{}", serde_json::to_string(&row)?);
            Ok(())
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CliError::Data(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn gen_data(ctx: &Context, force: bool) -> CliResult<()> {
    let h = dataset::generate(&ctx.cfg, &ctx.data_dir(), force)?;
    println!(
        "wrote {} train + {} test scenes, {} train + {} test episodes to {}",
        h.train_scenes,
        h.test_scenes,
        h.train_episodes,
        h.test_episodes,
        ctx.data_dir().display()
    );
    Ok(())
}

fn apply_overrides(base: &TrainConfig, o: &TrainOverrides) -> CliResult<TrainConfig> {
    let mut t = base.clone();
    if let Some(e) = o.epochs {
        t.epochs = e;
    }
    if let Some(b) = o.batch {
        t.batch = b;
    }
    if let Some(lr) = o.lr {
        t.lr = lr;
    }
    t.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(t)
}

/// CSV training log; appends on resume, starts over otherwise.
struct TrainLog {
    file: fs::File,
    start: Instant,
}

impl TrainLog {
    fn open(path: &Path, columns: &[&str], resume: bool) -> CliResult<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let fresh = !resume || !path.exists();
        let mut file = fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(!fresh)
            .truncate(fresh)
            .open(path)?;
        if fresh {
            writeln!(file, "epoch,loss,{},lr,clamped,wall_s", columns.join(","))?;
        }
        Ok(Self {
            file,
            start: Instant::now(),
        })
    }

    fn row(&mut self, log: &EpochLog) -> CliResult<()> {
        let comps: Vec<String> = log.components.iter().map(|c| format!("{c}")).collect();
        writeln!(
            self.file,
            "{},{},{},{},{},{:.3}",
            log.epoch,
            log.loss,
            comps.join(","),
            log.lr,
            log.clamped,
            self.start.elapsed().as_secs_f64()
        )?;
        self.file.flush()?;
        Ok(())
    }
}

fn resume_state<F>(ckpt: &Path, resume: bool, cfg: &TrainConfig, install: F) -> CliResult<TrainState>
where
    F: FnOnce(&d2c_core::micrograd::ParameterSet) -> CliResult<()>,
{
    if !resume {
        return Ok(TrainState::new(cfg));
    }
    let (params, state) = weights::load(ckpt)?;
    let Some(state) = state else {
        return data(format!("{} has no epoch record", ckpt.display()));
    };
    install(&params)?;
    eprintln!("resuming at epoch {}", state.epoch);
    Ok(state)
}

pub fn build_gnet(cfg: &RunConfig) -> CliResult<GNet> {
    let options = DetectOptions {
        cls_input: cfg.gnet.cls_input,
        ..DetectOptions::default()
    };
    Ok(GNet::from_archs(cfg.seg_arch(), cfg.cls_arch(), cfg.category_set()?, options, cfg.gnet.init_seed)?)
}

fn install_gnet(net: &mut GNet, params: &d2c_core::micrograd::ParameterSet) -> CliResult<()> {
    weights::check_compatible(&net.joint_params()?, params)?;
    net.set_joint_params(params)?;
    Ok(())
}

pub fn load_gnet(ctx: &Context) -> CliResult<GNet> {
    let mut net = build_gnet(&ctx.cfg)?;
    let (params, _) = weights::load(&ctx.model_path("gnet", "d2cw"))?;
    install_gnet(&mut net, &params)?;
    Ok(net)
}

/// Trains the grasp network; returns the final weights' path.
pub fn train_gnet_cmd(ctx: &Context, o: &TrainOverrides) -> CliResult<PathBuf> {
    let cfg = &ctx.cfg;
    let tc = apply_overrides(&cfg.gnet.train, o)?;
    let ds = ctx.dataset()?;
    let samples: Vec<GNetSample> = ds
        .scenes(Split::Train)?
        .par_iter()
        .map(|s| GNetSample::from_scene(s, cfg.channels))
        .collect::<Result<_, _>>()?;
    let mut net = build_gnet(cfg)?;
    let ckpt = ctx.model_path("gnet", "ckpt");
    let mut state = resume_state(&ckpt, o.resume, &tc, |p| install_gnet(&mut net, p))?;
    let mut log = TrainLog::open(&ctx.reports_dir().join("gnet_train.csv"), &["seg_loss", "cls_loss"], o.resume)?;
    fs::create_dir_all(ctx.models_dir())?;
    let every = cfg.checkpoint_every;
    let mut io_error = None;
    train_gnet(&mut net, &samples, &tc, &mut state, |l, n, st| {
        eprintln!("gnet epoch {} loss {:.5} lr {}", l.epoch, l.loss, l.lr);
        let r = log.row(l).and_then(|_| {
            if l.epoch % every == 0 || l.epoch == tc.epochs {
                weights::save(&ckpt, &n.joint_params()?, Some(st))
            } else {
                Ok(())
            }
        });
        if let Err(e) = r {
            io_error.get_or_insert(e);
        }
        Ok(())
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    let path = ctx.model_path("gnet", "d2cw");
    weights::save(&path, &net.joint_params()?, None)?;
    println!("saved {}", path.display());
    Ok(path)
}

pub fn build_cnet(cfg: &RunConfig, vocab: Vocabulary, fusion: Fusion) -> CliResult<CaptionModel> {
    Ok(CaptionModel::new(cfg.cnet_arch(), vocab, fusion, cfg.cnet.init_seed)?)
}

fn install_cnet(model: &mut CaptionModel, params: &d2c_core::micrograd::ParameterSet) -> CliResult<()> {
    weights::check_compatible(&model.params, params)?;
    model.params = params.clone();
    Ok(())
}

pub fn load_vocab(ctx: &Context) -> CliResult<Vocabulary> {
    let path = ctx.models_dir().join(VOCAB_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(Vocabulary::parse(&text)?)
}

/// `None` when the variant has not been trained.
pub fn load_cnet(ctx: &Context, fusion: Fusion) -> CliResult<Option<CaptionModel>> {
    let path = ctx.model_path(cnet_name(fusion), "d2cw");
    if !path.exists() {
        return Ok(None);
    }
    let mut model = build_cnet(&ctx.cfg, load_vocab(ctx)?, fusion)?;
    let (params, _) = weights::load(&path)?;
    install_cnet(&mut model, &params)?;
    Ok(Some(model))
}

/// Grasp network for difference-map masks, or `None` for ground truth.
fn mask_source(ctx: &Context, use_oracle_masks: bool) -> CliResult<Option<GNet>> {
    if use_oracle_masks || ctx.cfg.cnet.use_oracle_masks {
        return Ok(None);
    }
    load_gnet(ctx)
        .map(Some)
        .map_err(|e| CliError::Data(format!("{e}; train gnet first or pass --use-oracle-masks")))
}

pub fn train_cnet_cmd(ctx: &Context, o: &TrainOverrides, use_oracle_masks: bool, fusion: Fusion) -> CliResult<PathBuf> {
    let cfg = &ctx.cfg;
    let tc = apply_overrides(&cfg.cnet.train, o)?;
    let ds = ctx.dataset()?;
    let gnet = mask_source(ctx, use_oracle_masks)?;
    let train = ds.episodes(Split::Train)?;
    let vocab = Vocabulary::from_commands(train.iter().map(|(_, e)| &e.command));
    let vocab_path = ctx.models_dir().join(VOCAB_FILE);
    if o.resume || vocab_path.exists() {
        // every variant must share one vocabulary
        if vocab_path.exists() && load_vocab(ctx)? != vocab {
            return data(format!("{} does not match the training commands", vocab_path.display()));
        }
    }
    write_atomic(&vocab_path, vocab.to_lines().as_bytes())?;
    let arch = cfg.cnet_arch();
    let samples: Vec<CNetSample> = train
        .par_iter()
        .map(|(_, e)| CNetSample::from_episode_with(e, &vocab, &arch, cfg.channels, gnet.as_ref()))
        .collect::<Result<_, _>>()?;
    let mut model = build_cnet(cfg, vocab, fusion)?;
    let name = cnet_name(fusion);
    let ckpt = ctx.model_path(name, "ckpt");
    let mut state = resume_state(&ckpt, o.resume, &tc, |p| install_cnet(&mut model, p))?;
    let mut log = TrainLog::open(&ctx.reports_dir().join(format!("{name}_train.csv")), &["nll"], o.resume)?;
    let every = cfg.checkpoint_every;
    let mut io_error = None;
    train_cnet(&mut model, &samples, &tc, &mut state, |l, m, st| {
        eprintln!("{name} epoch {} loss {:.5} lr {}", l.epoch, l.loss, l.lr);
        let r = log.row(l).and_then(|_| {
            if l.epoch % every == 0 || l.epoch == tc.epochs {
                weights::save(&ckpt, &m.params, Some(st))
            } else {
                Ok(())
            }
        });
        if let Err(e) = r {
            io_error.get_or_insert(e);
        }
        Ok(())
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    let path = ctx.model_path(name, "d2cw");
    weights::save(&path, &model.params, None)?;
    println!("saved {}", path.display());
    Ok(path)
}

fn channel_label(c: ChannelMode) -> &'static str {
    match c {
        ChannelMode::Rgb => "RGB",
        ChannelMode::Rgbd => "RGBD",
    }
}

/// Flat report of `eval gnet`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GNetReport {
    pub model: String,
    pub channels: ChannelMode,
    pub iou: f64,
    pub pixel_accuracy: f64,
    pub cls_accuracy: f64,
    pub objects: usize,
    pub grasp_success: String,
    pub grasp_rate: f64,
}

pub fn eval_gnet(ctx: &Context) -> CliResult<GNetReport> {
    let cfg = &ctx.cfg;
    let net = load_gnet(ctx)?;
    let ds = ctx.dataset()?;
    let test: Vec<GNetSample> = ds
        .scenes(Split::Test)?
        .par_iter()
        .map(|s| GNetSample::from_scene(s, cfg.channels))
        .collect::<Result<_, _>>()?;
    let m = evaluate_gnet(&net, &test)?;
    let categories = cfg.category_set()?;
    let tasks = grasp_protocol(derive_seed(cfg.seed, dataset::STREAM_GRASP, 0), &cfg.scene_config()?, cfg.grasp.trials)?;
    let outcomes: Vec<bool> = tasks
        .par_iter()
        .map(|t| Ok(grasp_trial(&t.scene, &t.category, &net, &categories, &cfg.grasp.tolerances, cfg.channels)?.success))
        .collect::<CliResult<_>>()?;
    let rate = SuccessRate::new(outcomes.iter().filter(|&&s| s).count(), outcomes.len())?;
    let report = GNetReport {
        model: format!("GNet-{}", channel_label(cfg.channels)),
        channels: cfg.channels,
        iou: m.iou,
        pixel_accuracy: m.pixel_accuracy,
        cls_accuracy: m.cls_accuracy,
        objects: m.objects,
        grasp_success: format!("{}/{}", rate.successes, rate.total),
        grasp_rate: rate.fraction(),
    };
    write_jsonl(&ctx.reports_dir().join("gnet_eval.jsonl"), std::slice::from_ref(&report))?;
    println!("{:<10} {:>8} {:>10} {:>8}  grasp", "model", "IoU", "pixel_acc", "cls_acc");
    println!(
        "{:<10} {:>8.4} {:>10.4} {:>8.4}  {}",
        report.model, report.iou, report.pixel_accuracy, report.cls_accuracy, rate
    );
    Ok(report)
}

/// One row of the caption table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaptionRow {
    pub model: String,
    #[serde(flatten)]
    pub scores: MetricRow,
}

fn score_captioner(captioner: &(dyn Captioner + Sync), episodes: &[(usize, Episode)]) -> CliResult<MetricRow> {
    let pairs: Vec<EvalPair> = episodes
        .par_iter()
        .map(|(_, e)| Ok(EvalPair::single(captioner.caption(e)?.tokens(), e.command.tokens())))
        .collect::<CliResult<_>>()?;
    if pairs.is_empty() {
        return data("no held-out episodes to score");
    }
    Ok(score_corpus(&pairs)?)
}

struct MaskedCaptioner<'a> {
    model: &'a CaptionModel,
    gnet: Option<&'a GNet>,
}

impl Captioner for MaskedCaptioner<'_> {
    fn caption(&self, episode: &Episode) -> d2c_core::Result<CommandSentence> {
        self.model.caption_episode(episode, self.gnet)
    }
}

/// Scores the bigram baseline and every trained captioner on the test split.
pub fn eval_cnet(ctx: &Context, use_oracle_masks: bool) -> CliResult<Vec<CaptionRow>> {
    let ds = ctx.dataset()?;
    let train = ds.episodes(Split::Train)?;
    let test = ds.episodes(Split::Test)?;
    let gnet = mask_source(ctx, use_oracle_masks)?;
    let mut rows = vec![CaptionRow {
        model: "bigram".into(),
        scores: score_captioner(&BigramBaseline::fit(train.iter().map(|(_, e)| &e.command)), &test)?,
    }];
    for fusion in [Fusion::FrameOnly, Fusion::Fused] {
        if let Some(model) = load_cnet(ctx, fusion)? {
            let c = MaskedCaptioner {
                model: &model,
                gnet: gnet.as_ref(),
            };
            rows.push(CaptionRow {
                model: cnet_name(fusion).trim_start_matches("cnet_").into(),
                scores: score_captioner(&c, &test)?,
            });
        }
    }
    if rows.len() == 1 {
        return data(format!("no trained captioner in {}", ctx.models_dir().display()));
    }
    write_jsonl(&ctx.reports_dir().join("cnet_eval.jsonl"), &rows)?;
    println!("{:<12} {:>8} {:>8} {:>8} {:>8}", "model", "BLEU-4", "METEOR", "ROUGE-L", "CIDEr");
    for r in &rows {
        let s = r.scores;
        println!("{:<12} {:>8.4} {:>8.4} {:>8.4} {:>8.4}", r.model, s.bleu4, s.meteor, s.rouge_l, s.cider);
    }
    Ok(rows)
}

/// Runs the pipeline on the first `grasp.tasks` held-out episodes.
pub fn eval_pipeline(
    ctx: &Context,
    oracle: bool,
    use_oracle_masks: bool,
    fusion: FusionArg,
) -> CliResult<(Vec<ExecutionReport>, SuccessRate)> {
    let cfg = &ctx.cfg;
    let ds = ctx.dataset()?;
    let mut test = ds.episodes(Split::Test)?;
    test.truncate(cfg.grasp.tasks);
    if test.is_empty() {
        return data("no held-out episodes for the pipeline");
    }
    let categories = cfg.category_set()?;
    let gnet;
    let model;
    let (detector, captioner): (Box<dyn GraspDetector + Sync>, Box<dyn Captioner + Sync + '_>) = if oracle {
        let options = DetectOptions {
            cls_input: cfg.gnet.cls_input,
            ..DetectOptions::default()
        };
        (
            Box::new(OracleDetector {
                categories: categories.clone(),
                options,
            }),
            Box::new(OracleCaptioner),
        )
    } else {
        gnet = load_gnet(ctx)?;
        let fusion: Fusion = fusion.into();
        model = load_cnet(ctx, fusion)?
            .ok_or_else(|| CliError::Data(format!("{} is not trained", cnet_name(fusion))))?;
        let masks = if use_oracle_masks || cfg.cnet.use_oracle_masks { None } else { Some(&gnet) };
        (
            Box::new(gnet.clone()),
            Box::new(MaskedCaptioner {
                model: &model,
                gnet: masks,
            }),
        )
    };
    let reports: Vec<ExecutionReport> = test
        .par_iter()
        .map(|(id, e)| {
            run_pipeline(*id as u64, e, detector.as_ref(), captioner.as_ref(), &categories, &cfg.grasp.tolerances, cfg.channels)
        })
        .collect();
    let task = success_rate(&reports, SuccessKind::Task)?;
    let grasp = success_rate(&reports, SuccessKind::Grasp)?;
    let path = ctx.reports_dir().join("pipeline.jsonl");
    let mut rows: Vec<serde_json::Value> = reports.iter().map(serde_json::to_value).collect::<Result<_, _>>()?;
    rows.push(json!({
        "summary": true,
        "task_success": format!("{}/{}", task.successes, task.total),
        "grasp_success": format!("{}/{}", grasp.successes, grasp.total),
    }));
    write_jsonl(&path, &rows)?;
    for r in &reports {
        println!(
            "episode {:>5}  {:<40} {}",
            r.episode_id,
            r.predicted_command.join(" "),
            if r.task_success { "ok".to_string() } else { format!("{:?}", r.failure_stage).to_lowercase() }
        );
    }
    println!("grasp success {}/{}", grasp.successes, grasp.total);
    println!("task success {}/{}", task.successes, task.total);
    Ok((reports, task))
}

fn read_frame_dir(dir: &Path, channels: ChannelMode) -> CliResult<Vec<RasterFrame>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.starts_with('f') && n.ends_with(".ppm"))
        .collect();
    names.sort();
    names
        .iter()
        .map(|name| {
            let stem = name.trim_end_matches(".ppm");
            let rgb = pnm::read_ppm(&dir.join(name))?;
            let (h, w) = (rgb.shape()[1], rgb.shape()[2]);
            let mut values = rgb.data().to_vec();
            if channels == ChannelMode::Rgbd {
                let (dw, dh, d) = pnm::read_pgm16(&dir.join(format!("{stem}_depth.pgm")))?;
                if (dh, dw) != (h, w) {
                    return data(format!("{stem}_depth.pgm size differs from {name}"));
                }
                values.extend(d.iter().map(|&v| v as f64 / pnm::DEPTH_SCALE));
            }
            let labels_path = dir.join(format!("{stem}_labels.pgm"));
            let labels = if labels_path.exists() {
                let (lw, lh, l) = pnm::read_pgm16(&labels_path)?;
                if (lh, lw) != (h, w) {
                    return data(format!("{stem}_labels.pgm size differs from {name}"));
                }
                Some(l)
            } else {
                None
            };
            Ok(RasterFrame::new(Tensor::from_vec(&[channels.count(), h, w], values)?, labels)?)
        })
        .collect()
}

/// Captions one demonstration; returns the printed text.
pub fn caption(ctx: &Context, args: &CaptionArgs) -> CliResult<String> {
    let fusion: Fusion = args.fusion.into();
    let model = load_cnet(ctx, fusion)?
        .ok_or_else(|| CliError::Data(format!("{} is not trained", cnet_name(fusion))))?;
    let gnet = mask_source(ctx, args.use_oracle_masks)?;
    let mut out = String::new();
    let command = if let Some(id) = args.episode {
        let ep = Dataset::open(&ctx.data_dir())?.episode(id)?;
        out.push_str(&format!("episode {id}\ntruth:   {}\n", ep.command));
        model.caption_episode(&ep, gnet.as_ref())?
    } else {
        let dir = args.frames.as_ref().expect("clap requires one source");
        let frames = read_frame_dir(dir, ctx.cfg.channels)?;
        if frames.len() != model.arch.steps {
            return data(format!("{} holds {} frames, the model needs {}", dir.display(), frames.len(), model.arch.steps));
        }
        let (first, last) = (&frames[0], &frames[frames.len() - 1]);
        let (start, end) = match &gnet {
            Some(net) => (segment(first, &net.seg)?.1, segment(last, &net.seg)?.1),
            None => match (first.label_mask(), last.label_mask()) {
                (Some(a), Some(b)) => (a, b),
                _ => return data("oracle masks need label files for the first and last frame"),
            },
        };
        model.caption(&VideoInput::from_masks(&frames, &start, &end, &model.arch)?)?
    };
    out.push_str(&format!("command: {command}\n"));
    match parse_command(&command, &ctx.cfg.category_set()?) {
        Ok(t) => out.push_str(&format!(
            "parsed:  verb={} object={} preposition={} target={}",
            t.verb.token(),
            t.object_category,
            t.preposition.token(),
            t.target_category
        )),
        Err(e) => out.push_str(&format!("parse failed: {e}")),
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckRow {
    pub case: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub pass: bool,
}

/// Every layer kind, the joint grasp loss and the caption loss. Fails with a
/// numeric error when any case exceeds `tolerance`.
pub fn grad_check(ctx: &Context, step: f64, tolerance: f64) -> CliResult<Vec<GradCheckRow>> {
    let seed = ctx.cfg.seed;
    let mut cases: Vec<(String, GradCheckReport)> =
        layer_suite(step, seed)?.into_iter().map(|(n, r)| (n.to_string(), r)).collect();
    cases.push(("gnet_joint_loss".into(), joint_grad_check(step, seed)?));
    cases.push(("cnet_loss".into(), loss_grad_check(step, seed)?));
    let rows: Vec<GradCheckRow> = cases
        .into_iter()
        .map(|(case, r)| GradCheckRow {
            case,
            checked: r.checked,
            max_rel_error: r.max_rel_error,
            pass: r.max_rel_error < tolerance,
        })
        .collect();
    for r in &rows {
        println!(
            "{:<18} {:>6} coords  max rel err {:.3e}  {}",
            r.case,
            r.checked,
            r.max_rel_error,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    write_jsonl(&ctx.reports_dir().join("grad_check.jsonl"), &rows)?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(CliError::Numeric(format!("{failed} gradient check(s) above {tolerance:e}")));
    }
    Ok(rows)
}

/// Scores line-aligned candidate and reference files.
pub fn metrics(candidates: &Path, references: &Path) -> CliResult<MetricRow> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())));
    let cands = read(candidates)?;
    let refs = read(references)?;
    let cands: Vec<&str> = cands.lines().collect();
    let refs: Vec<&str> = refs.lines().collect();
    if cands.len() != refs.len() {
        return data(format!("{} candidates but {} reference lines", cands.len(), refs.len()));
    }
    if cands.is_empty() {
        return data("no sentences to score");
    }
    let pairs: Vec<EvalPair> = cands
        .iter()
        .zip(&refs)
        .map(|(c, r)| {
            let cand: Vec<&str> = c.split_whitespace().collect();
            let rs: Vec<Vec<&str>> = r.split('|').map(|s| s.split_whitespace().collect()).collect();
            Ok(EvalPair::new(&cand, &rs)?)
        })
        .collect::<CliResult<_>>()?;
    Ok(score_corpus(&pairs)?)
}
