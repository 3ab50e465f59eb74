//! The subcommands. Each validates its inputs before writing anything and
//! returns a short summary for the terminal.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use robust_mvs::evaluation::{cloud_distance_metrics, depth_validation_metrics, CloudMetrics, DepthMetrics};
use robust_mvs::fusion::{fuse, Fusion, FusionView};
use robust_mvs::imaging::{is_valid_depth, DepthMap, ValidityMask, View};
use robust_mvs::io;
use robust_mvs::loss::{
    check_gradients, topk_selection_frequency, total_loss, GradientCheckConfig, GradientCheckReport, LossBreakdown,
    LossConfig,
};
use robust_mvs::sweep::{
    estimate_depth, refine_depth_descent, select_views, Aggregation, ConfidenceMap, MatchingCost, Refinement,
    SweepConfig, ViewSelection,
};
use robust_mvs::synth::{make_ablation_scene_sized, render, Covisibility, SceneKind};

use crate::config::PipelineConfig;
use crate::scene_dir::{stems, write_scene, SceneDir};

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("{}", path.display()))
}

pub fn cmd_synth(kind: SceneKind, seed: u64, size: (usize, usize), out: &Path, ply_format: io::PlyFormat) -> Result<String> {
    let scene = make_ablation_scene_sized(kind, seed, size.0, size.1)?;
    write_scene(&scene, out, ply_format)?;
    Ok(format!(
        "wrote {kind} scene (seed {seed}, {} views, {}x{}) to {}",
        scene.cameras.len(),
        size.0,
        size.1,
        out.display()
    ))
}

/// Views of `all` ranked for reference `r`, truncated to `m`.
pub fn ranked_views(all: &[View], r: usize, m: usize) -> Result<(ViewSelection, Vec<View>)> {
    let cams: Vec<_> = all.iter().map(|v| v.camera.clone()).collect();
    let sel = select_views(&cams, r, m)?;
    let views = sel.views.iter().map(|&i| all[i].clone()).collect();
    Ok((sel, views))
}

#[derive(Debug, Clone)]
pub struct ViewDepth {
    pub selection: ViewSelection,
    pub depth: DepthMap,
    pub confidence: ConfidenceMap,
    pub temperature: f64,
    pub refinement: Option<Refinement>,
    pub breakdown: LossBreakdown,
}

/// Sweep, soft-argmin, confidence and optional refinement for reference `r`.
pub fn infer_view(all: &[View], r: usize, cfg: &PipelineConfig) -> Result<ViewDepth> {
    let (selection, views) = ranked_views(all, r, cfg.loss.num_views)?;
    let reference = &all[r];
    let est = estimate_depth(&reference.image, &reference.camera, &views, &cfg.loss, &cfg.sweep)?;
    let refinement = if cfg.refine_steps > 0 {
        Some(refine_depth_descent(
            &reference.image,
            &reference.camera,
            &views,
            &est.depth,
            &cfg.loss,
            cfg.refine_steps,
            cfg.refine_step_size,
        )?)
    } else {
        None
    };
    let depth = refinement.as_ref().map_or(est.depth, |r| r.depth.clone());
    let breakdown = total_loss(&reference.image, &reference.camera, &views, &depth, &cfg.loss)?;
    Ok(ViewDepth {
        selection,
        depth,
        confidence: est.confidence,
        temperature: est.temperature,
        refinement,
        breakdown,
    })
}

fn view_report(id: &str, scene: &SceneDir, v: &ViewDepth) -> String {
    let ids: Vec<&str> = v.selection.views.iter().map(|&i| scene.ids[i].as_str()).collect();
    let mut out = format!(
        "view = {id}\nsource_views = {}\nviews_truncated = {}\ntemperature = {}\nconfidence_filtered = {}\n",
        ids.join(","),
        v.selection.truncated,
        v.temperature,
        v.confidence.filtered_count()
    );
    if let Some(r) = &v.refinement {
        out.push_str(&format!(
            "refine.initial_loss = {}\nrefine.final_loss = {}\nrefine.accepted_steps = {}\n",
            r.initial_loss, r.final_loss, r.accepted_steps
        ));
    }
    out.push_str(&v.breakdown.report());
    out
}

/// Writes `depths/<id>.pfm`, `confidence/<id>.pfm` and `reports/<id>_loss.txt` for every view.
pub fn cmd_depth(cfg: &PipelineConfig) -> Result<String> {
    cfg.validate()?;
    let scene = SceneDir::open(&cfg.scene)?;
    let all = scene.load_views()?;
    let (depths, confs, reports) = (cfg.output.join("depths"), cfg.output.join("confidence"), cfg.output.join("reports"));
    for d in [&depths, &confs, &reports] {
        create_dir(d)?;
    }
    io::atomic_write(&reports.join("config.toml"), cfg.to_toml().as_bytes())?;
    let mut filtered = 0;
    for (r, id) in scene.ids.iter().enumerate() {
        let v = infer_view(&all, r, cfg).with_context(|| format!("view {id}"))?;
        io::write_depth_pfm(&depths.join(format!("{id}.pfm")), &v.depth)?;
        let c = &v.confidence;
        io::write_pfm(&confs.join(format!("{id}.pfm")), c.width(), c.height(), c.data())?;
        io::atomic_write(&reports.join(format!("{id}_loss.txt")), view_report(id, &scene, &v).as_bytes())?;
        filtered += c.filtered_count();
    }
    Ok(format!(
        "wrote {} depth maps to {} ({filtered} pixels below confidence {})",
        scene.len(),
        depths.display(),
        cfg.sweep.confidence_threshold
    ))
}

/// Fusion of the depth maps in `<output>/depths`, with confidence maps from
/// `<output>/confidence` where present.
pub fn fuse_outputs(cfg: &PipelineConfig) -> Result<(SceneDir, Vec<String>, Fusion)> {
    cfg.validate()?;
    let scene = SceneDir::open(&cfg.scene)?;
    let dir = cfg.output.join("depths");
    let ids: Vec<String> = if dir.is_dir() { stems(&dir, ".pfm")?.into_iter().collect() } else { Vec::new() };
    if ids.is_empty() {
        bail!("no depth maps in {}", dir.display());
    }
    let min = cfg.fusion.min_consistent_views;
    if ids.len() < min + 1 && !(ids.len() == 1 && min == 1) {
        bail!(
            "fusion needs depth maps for at least {} views (min_consistent_views = {min}), found {}",
            min + 1,
            ids.len()
        );
    }
    let all = scene.load_views()?;
    let mut views = Vec::with_capacity(ids.len());
    for id in &ids {
        let Some(i) = scene.ids.iter().position(|s| s == id) else {
            bail!("depth map {} has no view in {}", dir.join(format!("{id}.pfm")).display(), scene.root.display());
        };
        let depth = io::read_depth_pfm(&dir.join(format!("{id}.pfm")))?;
        let conf_path = cfg.output.join("confidence").join(format!("{id}.pfm"));
        let confidence = if conf_path.is_file() {
            let (w, h, data) = io::read_pfm(&conf_path)?;
            Some(ConfidenceMap::new(w, h, data, cfg.sweep.confidence_threshold).with_context(|| format!("{}", conf_path.display()))?)
        } else {
            None
        };
        views.push(FusionView {
            depth,
            confidence,
            camera: all[i].camera.clone(),
            image: all[i].image.clone(),
        });
    }
    let fused = fuse(&views, &cfg.fusion)?;
    Ok((scene, ids, fused))
}

/// Writes `fused.ply` and `fusion_stats.txt`.
pub fn cmd_fuse(cfg: &PipelineConfig) -> Result<String> {
    let (_, ids, fused) = fuse_outputs(cfg)?;
    let ply = cfg.output.join("fused.ply");
    io::write_ply(&ply, &fused.cloud, cfg.ply_format)?;
    let stats = format!("views = {}\n{}", ids.join(","), fused.stats.report());
    io::atomic_write(&cfg.output.join("fusion_stats.txt"), stats.as_bytes())?;
    Ok(format!("fused {} views into {} points at {}", ids.len(), fused.cloud.len(), ply.display()))
}

pub const DEFAULT_THRESHOLDS: [f64; 3] = [1.0, 2.0, 3.0];

pub fn evaluate_clouds(reconstruction: &Path, reference: &Path, thresholds: &[f64]) -> Result<CloudMetrics> {
    let recon = io::read_ply(reconstruction)?;
    let truth = io::read_ply(reference)?;
    cloud_distance_metrics(&recon, &truth, thresholds)
        .with_context(|| format!("{} vs {}", reconstruction.display(), reference.display()))
}

/// Prints the cloud metrics and, when `report` is given, writes them there.
pub fn cmd_eval(reconstruction: &Path, reference: &Path, thresholds: &[f64], report: Option<&Path>) -> Result<String> {
    if thresholds.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        bail!("invalid configuration: thresholds must be positive");
    }
    let text = evaluate_clouds(reconstruction, reference, thresholds)?.report();
    if let Some(path) = report {
        io::atomic_write(path, text.as_bytes())?;
    }
    Ok(text.trim_end().to_string())
}

#[derive(Debug, Clone)]
pub struct AblationCell {
    /// `None` for variance aggregation, which ignores K.
    pub top_k: Option<usize>,
    pub matching_cost: MatchingCost,
    pub aggregation: Aggregation,
    pub metrics: DepthMetrics,
    /// Median absolute depth error over pixels valid in both maps.
    pub median_error: f64,
    pub depth: DepthMap,
}

impl AblationCell {
    pub fn label(&self) -> String {
        let k = self.top_k.map_or("all".to_string(), |k| k.to_string());
        format!("k={k} cost={} aggregation={}", self.matching_cost, self.aggregation)
    }
}

#[derive(Debug, Clone)]
pub struct Ablation {
    pub reference: usize,
    pub ranked: Vec<usize>,
    pub cells: Vec<AblationCell>,
    /// Top-K selections per view rank at the default configuration's depth.
    pub histogram: Vec<u64>,
}

fn median_abs_error(pred: &DepthMap, truth: &DepthMap) -> f64 {
    let mut e: Vec<f64> = pred
        .data()
        .iter()
        .zip(truth.data())
        .filter(|(p, t)| is_valid_depth(**p) && is_valid_depth(**t))
        .map(|(p, t)| (p - t).abs())
        .collect();
    if e.is_empty() {
        return f64::NAN;
    }
    let mid = e.len() / 2;
    e.select_nth_unstable_by(mid, f64::total_cmp);
    e[mid]
}

/// One ablation run: sweep `views` (already ranked) for `reference` and score
/// the soft-argmin depth against `truth`.
pub fn ablation_cell(
    reference: &View,
    views: &[View],
    truth: &DepthMap,
    loss: &LossConfig,
    sweep: &SweepConfig,
) -> Result<AblationCell> {
    let est = estimate_depth(&reference.image, &reference.camera, views, loss, sweep)?;
    let metrics = depth_validation_metrics(&est.depth, truth)?;
    Ok(AblationCell {
        top_k: (sweep.aggregation == Aggregation::TopK).then_some(loss.top_k),
        matching_cost: sweep.matching_cost,
        aggregation: sweep.aggregation,
        metrics,
        median_error: median_abs_error(&est.depth, truth),
        depth: est.depth,
    })
}

/// Every combination of K in {1, M/2, M}, naive and first-order costs, and
/// top-K and variance aggregation (variance once per cost, since it has no K).
pub fn run_ablation(all: &[View], reference: usize, truth: &DepthMap, cfg: &PipelineConfig) -> Result<Ablation> {
    cfg.validate()?;
    let (selection, views) = ranked_views(all, reference, cfg.loss.num_views)?;
    let m = views.len();
    let mut ks = vec![1, (m / 2).max(1), m];
    ks.dedup();
    let mut cells = Vec::new();
    for cost in [MatchingCost::Naive, MatchingCost::FirstOrder] {
        for &k in &ks {
            let loss = LossConfig { top_k: k, ..cfg.loss.clone() };
            let sweep = SweepConfig {
                aggregation: Aggregation::TopK,
                matching_cost: cost,
                ..cfg.sweep.clone()
            };
            cells.push(ablation_cell(&all[reference], &views, truth, &loss, &sweep)?);
        }
        let sweep = SweepConfig {
            aggregation: Aggregation::Variance,
            matching_cost: cost,
            ..cfg.sweep.clone()
        };
        cells.push(ablation_cell(&all[reference], &views, truth, &cfg.loss, &sweep)?);
    }
    let default_k = cfg.loss.top_k.min(m);
    let depth = &cells
        .iter()
        .find(|c| c.top_k == Some(default_k) && c.matching_cost == MatchingCost::FirstOrder)
        .map_or_else(|| cells[0].depth.clone(), |c| c.depth.clone());
    let reference_view = &all[reference];
    let loss = LossConfig { top_k: default_k, ..cfg.loss.clone() };
    let breakdown = total_loss(&reference_view.image, &reference_view.camera, &views, depth, &loss)?;
    let ranking: Vec<usize> = (0..breakdown.selection.views).collect();
    let histogram = topk_selection_frequency(&[breakdown.selection], &ranking)?;
    Ok(Ablation {
        reference,
        ranked: selection.views,
        cells,
        histogram,
    })
}

impl Ablation {
    pub fn report(&self, ids: &[String]) -> String {
        let mut out = format!("reference = {}\n", ids[self.reference]);
        for c in &self.cells {
            let m = &c.metrics;
            out.push_str(&format!(
                "{} l1 = {} median_error = {} within_1 = {} within_3 = {} within_3_percent = {}\n",
                c.label(),
                m.l1.map_or("nan".to_string(), |v| v.to_string()),
                c.median_error,
                m.within_1,
                m.within_3,
                m.within_3_percent
            ));
        }
        let total: u64 = self.histogram.iter().sum();
        for (rank, (count, view)) in self.histogram.iter().zip(&self.ranked).enumerate() {
            let pct = if total > 0 { 100.0 * *count as f64 / total as f64 } else { 0.0 };
            out.push_str(&format!("selection rank {rank} view {} = {count} ({pct:.2}%)\n", ids[*view]));
        }
        out
    }
}

/// Runs the ablation grid on `reference` and writes `reports/ablation.txt`.
pub fn cmd_ablate(cfg: &PipelineConfig, reference: usize) -> Result<String> {
    cfg.validate()?;
    let scene = SceneDir::open(&cfg.scene)?;
    if reference >= scene.len() {
        bail!("reference view {reference} out of range ({} views)", scene.len());
    }
    let truth = scene.load_gt_depth(reference)?;
    let all = scene.load_views()?;
    let ablation = run_ablation(&all, reference, &truth, cfg)?;
    let text = ablation.report(&scene.ids);
    let reports = cfg.output.join("reports");
    create_dir(&reports)?;
    io::atomic_write(&reports.join("ablation.txt"), text.as_bytes())?;
    Ok(text.trim_end().to_string())
}

#[derive(Debug, Clone)]
pub struct GradientCheckSetup {
    pub kind: SceneKind,
    pub seed: u64,
    pub size: (usize, usize),
    /// Amplitude of the smooth perturbation added to the true depth.
    pub amplitude: f64,
}

impl Default for GradientCheckSetup {
    fn default() -> Self {
        Self {
            kind: SceneKind::TexturedPlane,
            seed: 3,
            size: (128, 96),
            amplitude: 0.2,
        }
    }
}

/// Finite-difference check of the loss gradient on a synthetic scene at the
/// true depth plus `amplitude * (sin 0.21x + cos 0.17y)`, skipping pixels
/// occluded in any view.
pub fn gradient_check(setup: &GradientCheckSetup, loss: &LossConfig, check: &GradientCheckConfig) -> Result<GradientCheckReport> {
    let (w, h) = setup.size;
    let scene = make_ablation_scene_sized(setup.kind, setup.seed, w, h)?;
    let reference = render(&scene, 0)?;
    let views = (1..scene.cameras.len())
        .map(|v| {
            Ok(View {
                image: render(&scene, v)?.image,
                camera: scene.cameras[v].clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let a = setup.amplitude;
    let truth = &reference.depth;
    let depth = DepthMap::from_fn(w, h, |x, y| truth.get(x, y) + a * ((0.21 * x as f64).sin() + (0.17 * y as f64).cos()));
    let occluded: Vec<bool> = (0..w * h)
        .map(|p| reference.covisibility.iter().any(|m| m.labels[p] == Covisibility::Occluded))
        .collect();
    let check = GradientCheckConfig {
        exclude: Some(ValidityMask::new(w, h, occluded)?),
        ..check.clone()
    };
    Ok(check_gradients(&reference.image, &scene.cameras[0], &views, &depth, loss, &check)?)
}

pub fn cmd_check_gradients(setup: &GradientCheckSetup, loss: &LossConfig, check: &GradientCheckConfig) -> Result<String> {
    loss.validate()?;
    let report = gradient_check(setup, loss, check)?;
    let excluded: Vec<String> = report.excluded.iter().map(|(e, n)| format!("{e:?}={n}")).collect();
    let summary = format!(
        "max_relative_error = {:e}\nsamples = {}\neligible = {}\nexcluded = {}\npassed = {}",
        report.max_relative_error,
        report.samples.len(),
        report.eligible,
        excluded.join(","),
        report.passed
    );
    if !report.passed {
        bail!(
            "gradient check failed: max relative error {:e} over {} samples exceeds {:e}",
            report.max_relative_error,
            report.samples.len(),
            check.tolerance
        );
    }
    Ok(summary)
}
