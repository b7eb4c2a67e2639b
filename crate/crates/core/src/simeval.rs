//! Geometric grasp simulation and end-to-end video → command → grasp runs.
//!
//! A grasp succeeds when its center lands on an object, its label names that
//! object's category, and, for blocks, its angle agrees with the long axis. This
//! is a geometric surrogate for a physical lift test.

use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::geom::GraspSolution;
use crate::raster::{ChannelMode, RasterFrame};
use crate::scenegen::{
    derive_seed, generate_scene_with, render, CategorySet, CommandSentence, Episode, ObjectKind, Preposition, Scene,
    SceneConfig, Shape, Verb,
};

pub use crate::scenegen::ActionTriple;

/// Strict template match: `verb object preposition target EOC`.
pub fn parse_command(sentence: &CommandSentence, categories: &CategorySet) -> Result<ActionTriple, String> {
    let w = sentence.words();
    let [verb, object, prep, target] = w else {
        return Err(format!("expected 4 words before EOC, found {}", w.len()));
    };
    let verb = Verb::from_token(verb).ok_or_else(|| format!("unknown verb {verb:?}"))?;
    let preposition = Preposition::from_token(prep).ok_or_else(|| format!("unknown preposition {prep:?}"))?;
    for name in [object, target] {
        if categories.index_of(name).is_none() {
            return Err(format!("unknown object {name:?}"));
        }
    }
    Ok(ActionTriple {
        verb,
        object_category: object.clone(),
        preposition,
        target_category: target.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraspTolerances {
    /// Maximum angle between grasp and long axis, degrees.
    pub angle_deg: f64,
    /// Ellipses with `long / short` below this count as round: any angle passes.
    pub round_aspect: f64,
    /// Apply the angle check to elongated ellipses too. Off by default: the
    /// minimum-area rectangle of a small rasterized ellipse does not pin down
    /// its axis, so even ground-truth masks would fail about a fifth of the time.
    pub check_ellipse_orientation: bool,
}

impl Default for GraspTolerances {
    fn default() -> Self {
        Self {
            angle_deg: 15.0,
            round_aspect: 1.25,
            check_ellipse_orientation: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspFailure {
    /// Center is not on any object.
    Miss,
    LabelMismatch,
    Orientation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspOutcome {
    pub success: bool,
    pub failure: Option<GraspFailure>,
    /// Index of the object under the grasp center.
    pub object: Option<usize>,
    pub angle_error: Option<f64>,
}

/// Angle between two orientations modulo `period` degrees.
pub fn angular_error(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

pub fn simulate_grasp(
    grasp: &GraspSolution,
    scene: &Scene,
    categories: &CategorySet,
    tol: &GraspTolerances,
) -> GraspOutcome {
    let fail = |failure, object, angle_error| GraspOutcome {
        success: false,
        failure: Some(failure),
        object,
        angle_error,
    };
    let Some(k) = scene.object_at(grasp.x, grasp.y) else {
        return fail(GraspFailure::Miss, None, None);
    };
    let obj = &scene.objects[k];
    let name = categories.get(obj.spec.category).map(|c| c.name.as_str());
    if name != Some(grasp.label.as_str()) {
        return fail(GraspFailure::LabelMismatch, Some(k), None);
    }
    let (w, h) = obj.spec.size;
    let aspect = w.max(h) / w.min(h);
    let period = match obj.spec.shape {
        Shape::Ellipse if !tol.check_ellipse_orientation || aspect < tol.round_aspect => None,
        Shape::Rectangle if aspect == 1.0 => Some(90.0),
        _ => Some(180.0),
    };
    let err = period.map(|p| angular_error(grasp.theta, obj.long_axis_deg(), p));
    if err.is_some_and(|e| e > tol.angle_deg) {
        return fail(GraspFailure::Orientation, Some(k), err);
    }
    GraspOutcome {
        success: true,
        failure: None,
        object: Some(k),
        angle_error: err,
    }
}

/// Anything that turns a frame into scored grasp candidates.
pub trait GraspDetector {
    fn detect(&self, frame: &RasterFrame) -> Result<Vec<GraspSolution>>;
}

/// Anything that turns a demonstration into a command.
pub trait Captioner {
    fn caption(&self, episode: &Episode) -> Result<CommandSentence>;
}

/// Returns the episode's own command.
pub struct OracleCaptioner;

impl Captioner for OracleCaptioner {
    fn caption(&self, episode: &Episode) -> Result<CommandSentence> {
        Ok(episode.command.clone())
    }
}

/// Picks the highest-scoring grasp labelled `category`; ties keep the first.
pub fn select_grasp<'a>(grasps: &'a [GraspSolution], category: &str) -> Option<&'a GraspSolution> {
    grasps
        .iter()
        .filter(|g| g.label == category)
        .fold(None, |best: Option<&GraspSolution>, g| match best {
            Some(b) if b.score >= g.score => Some(b),
            _ => Some(g),
        })
}

/// One grasp trial: detect on the rendered scene, grasp `category`.
pub fn grasp_trial(
    scene: &Scene,
    category: &str,
    detector: &dyn GraspDetector,
    categories: &CategorySet,
    tol: &GraspTolerances,
    channels: ChannelMode,
) -> Result<GraspOutcome> {
    let frame = render(scene, channels);
    let grasps = detector.detect(&frame)?;
    Ok(match select_grasp(&grasps, category) {
        Some(g) => simulate_grasp(g, scene, categories, tol),
        None => GraspOutcome {
            success: false,
            failure: Some(GraspFailure::Miss),
            object: None,
            angle_error: None,
        },
    })
}

/// A scene and the category to pick up in it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspTask {
    pub scene: Scene,
    pub category: String,
}

/// `n` grasp tasks cycling over the graspable categories (blocks and fruit);
/// each scene holds the requested category plus random distractors.
pub fn grasp_protocol(seed: u64, config: &SceneConfig, n: usize) -> Result<Vec<GraspTask>> {
    let cats = &config.categories;
    let mut graspable = cats.indices_of_kind(ObjectKind::Block);
    graspable.extend(cats.indices_of_kind(ObjectKind::Fruit));
    graspable.sort_unstable();
    if graspable.is_empty() && n > 0 {
        return arg("category set has nothing graspable");
    }
    (0..n)
        .map(|k| {
            let c = graspable[k % graspable.len()];
            Ok(GraspTask {
                scene: generate_scene_with(derive_seed(seed, 7, k as u64), config, &[c])?,
                category: cats.get(c).expect("index").name.clone(),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureStage {
    Caption,
    Parse,
    Detect,
    Grasp,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub episode_id: u64,
    pub predicted_command: Vec<String>,
    pub parsed: Option<ActionTriple>,
    pub parse_error: Option<String>,
    pub grasp: Option<GraspSolution>,
    pub grasp_success: bool,
    pub task_success: bool,
    pub failure_stage: FailureStage,
    pub diagnostics: Option<String>,
}

/// Caption → parse → detect on the start frame → grasp → compare with truth.
///
/// Every failure is recorded in the report; the first failing stage wins.
pub fn run_pipeline(
    episode_id: u64,
    episode: &Episode,
    detector: &dyn GraspDetector,
    captioner: &dyn Captioner,
    categories: &CategorySet,
    tol: &GraspTolerances,
    channels: ChannelMode,
) -> ExecutionReport {
    let mut report = ExecutionReport {
        episode_id,
        predicted_command: Vec::new(),
        parsed: None,
        parse_error: None,
        grasp: None,
        grasp_success: false,
        task_success: false,
        failure_stage: FailureStage::Caption,
        diagnostics: None,
    };
    let command = match captioner.caption(episode) {
        Ok(c) => c,
        Err(e) => {
            report.diagnostics = Some(e.to_string());
            return report;
        }
    };
    report.predicted_command = command.tokens().to_vec();
    let triple = match parse_command(&command, categories) {
        Ok(t) => t,
        Err(e) => {
            report.parse_error = Some(e);
            report.failure_stage = FailureStage::Parse;
            return report;
        }
    };
    report.parsed = Some(triple.clone());
    let frame = render(&episode.start, channels);
    let grasps = match detector.detect(&frame) {
        Ok(g) => g,
        Err(e) => {
            report.failure_stage = FailureStage::Detect;
            report.diagnostics = Some(e.to_string());
            return report;
        }
    };
    let Some(grasp) = select_grasp(&grasps, &triple.object_category).cloned() else {
        report.failure_stage = FailureStage::Detect;
        report.diagnostics = Some(format!("no grasp labelled {}", triple.object_category));
        return report;
    };
    let outcome = simulate_grasp(&grasp, &episode.start, categories, tol);
    report.grasp = Some(grasp);
    report.grasp_success = outcome.success;
    if let Some(f) = outcome.failure {
        report.failure_stage = FailureStage::Grasp;
        report.diagnostics = Some(format!("{f:?}"));
        return report;
    }
    if triple != episode.action {
        report.failure_stage = FailureStage::Caption;
        report.diagnostics = Some("parsed command differs from the demonstration".into());
        return report;
    }
    report.task_success = true;
    report.failure_stage = FailureStage::None;
    report
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessKind {
    Grasp,
    Task,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuccessRate {
    pub successes: usize,
    pub total: usize,
}

impl SuccessRate {
    pub fn new(successes: usize, total: usize) -> Result<Self> {
        if total == 0 {
            return arg("success rate of no trials");
        }
        if successes > total {
            return arg("more successes than trials");
        }
        Ok(Self { successes, total })
    }

    pub fn fraction(&self) -> f64 {
        self.successes as f64 / self.total as f64
    }

    pub fn percent(&self) -> u32 {
        (100.0 * self.fraction()).round() as u32
    }
}

impl std::fmt::Display for SuccessRate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}% ({}/{})", self.percent(), self.successes, self.total)
    }
}

pub fn success_rate(reports: &[ExecutionReport], which: SuccessKind) -> Result<SuccessRate> {
    let k = reports
        .iter()
        .filter(|r| match which {
            SuccessKind::Grasp => r.grasp_success,
            SuccessKind::Task => r.task_success,
        })
        .count();
    SuccessRate::new(k, reports.len())
}
