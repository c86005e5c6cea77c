//! End-to-end synthetic experiment: train both actionness streams and the
//! two-stream proposal classifier, then estimate, propose, detect, link and
//! evaluate on held-out clips.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detect::{
    classify_proposals, crop_and_resize, detect_frame, fuse_streams, link_tubes, select_training_examples, Detection,
    LinkConfig, Tube,
};
use crate::error::{Error, Result};
use crate::eval::{
    frame_ap, grid_actionness_ap_video, mean, mean_ap, proposal_recall, recall_vs_count, recall_vs_iou, video_ap,
    ClassAp, GridProtocolConfig, GroundTruth,
};
use crate::exec::Exec;
use crate::fcn::{
    boxes_to_binary_map, build_network, fine_tune_with, hybrid_fuse, multiscale_estimate, train_classifier,
    Network, NetworkSpec, TrainReport, TrainSchedule,
};
use crate::flow::{quantize_flow, stack_flow_pair};
use crate::geom::BBox;
use crate::map::ActionnessMap;
use crate::proposal::{generate_proposals, ProposalConfig, ScoredBox};
use crate::synth::{gen_video_set, SceneConfig, SyntheticVideo};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub scene: SceneConfig,
    pub train_videos: usize,
    pub test_videos: usize,
    /// Use every `frame_stride`-th frame of each training clip.
    pub frame_stride: usize,
    pub flow_bound: f32,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            scene: SceneConfig::default(),
            train_videos: 200,
            test_videos: 50,
            frame_stride: 2,
            flow_bound: 4.0,
        }
    }
}

/// Network spec references: a path or `builtin:<name>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub appearance: PathBuf,
    pub motion: PathBuf,
    pub classifier: PathBuf,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            appearance: "builtin:toy-local".into(),
            motion: "builtin:toy-local".into(),
            classifier: "builtin:toy-classifier".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub actionness: TrainSchedule,
    pub classifier: TrainSchedule,
    /// Background crops kept per training frame.
    pub negatives_per_frame: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            actionness: TrainSchedule {
                batch_size: 16,
                momentum: 0.9,
                milestones: vec![(0, 0.02), (300, 0.005), (400, 0.001)],
                total_iterations: 500,
                frozen_layers: 0,
                reduced_lr_layers: 0,
                reduced_lr_multiplier: 1.0,
                input_size: [64, 64],
                target_size: [64, 64],
            },
            classifier: TrainSchedule {
                batch_size: 32,
                momentum: 0.9,
                milestones: vec![(0, 0.02), (300, 0.005)],
                total_iterations: 400,
                frozen_layers: 0,
                reduced_lr_layers: 0,
                reduced_lr_multiplier: 1.0,
                input_size: [16, 16],
                target_size: [1, 1],
            },
            negatives_per_frame: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub scales: Vec<f64>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            // averaging across scales blurs the flat interior of uniform actors
            scales: vec![1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    /// Per-class NMS threshold applied to detections, if any.
    pub nms: Option<f64>,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig { nms: Some(0.5) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub grid: GridProtocolConfig,
    pub match_iou: f64,
    pub recall_iou: f64,
    pub recall_count: usize,
    pub recall_counts: Vec<usize>,
    pub recall_ious: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            grid: GridProtocolConfig::default(),
            match_iou: 0.5,
            recall_iou: 0.5,
            recall_count: 5,
            recall_counts: vec![1, 2, 3, 4, 5, 6, 8, 10],
            recall_ious: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub output: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig { output: "out".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub networks: NetworkConfig,
    pub train: TrainConfig,
    pub estimate: EstimateConfig,
    pub proposals: ProposalConfig,
    pub detect: DetectConfig,
    pub link: LinkConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            data: DataConfig::default(),
            networks: NetworkConfig::default(),
            train: TrainConfig::default(),
            estimate: EstimateConfig::default(),
            proposals: ProposalConfig {
                count: 10,
                suppress_iou: 0.7,
            },
            detect: DetectConfig::default(),
            link: LinkConfig::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::format(path, e.to_string()))?;
        cfg.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(cfg)
    }

    /// Parse and validate, and check that every referenced network spec loads.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::parse(&text, path)?;
        cfg.specs()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// First 16 hex digits of the SHA-256 of the canonical serialisation.
    pub fn hash(&self) -> u64 {
        let canonical = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(canonical.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn validate(&self) -> Result<()> {
        self.data.scene.validate()?;
        self.train.actionness.validate()?;
        self.train.classifier.validate()?;
        if self.data.frame_stride == 0 {
            return Err(Error::invalid("frame_stride must be positive"));
        }
        if !(self.data.flow_bound > 0.0) {
            return Err(Error::invalid("flow_bound must be positive"));
        }
        if self.estimate.scales.is_empty() {
            return Err(Error::invalid("at least one scale is required"));
        }
        Ok(())
    }

    pub fn specs(&self) -> Result<Specs> {
        let appearance = NetworkSpec::load(&self.networks.appearance)?.with_input_channels(3).with_name("a-fcn");
        let motion = NetworkSpec::load(&self.networks.motion)?.with_input_channels(4).with_name("m-fcn");
        let classifier = NetworkSpec::load(&self.networks.classifier)?;
        let classes = self.data.scene.classes;
        if classifier.classes() != classes + 1 {
            return Err(Error::InvalidSpec(format!(
                "classifier {} has {} outputs, the scenes need {} classes plus background",
                classifier.name,
                classifier.classes(),
                classes
            )));
        }
        if classifier.input_size.is_none() {
            return Err(Error::InvalidSpec(format!("classifier {} must declare input_size", classifier.name)));
        }
        Ok(Specs {
            appearance,
            motion,
            spatial: classifier.with_input_channels(3).with_name("s-net"),
            temporal: classifier.with_input_channels(4).with_name("t-net"),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Specs {
    pub appearance: NetworkSpec,
    pub motion: NetworkSpec,
    pub spatial: NetworkSpec,
    pub temporal: NetworkSpec,
}

/// All four trained networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Models {
    pub appearance: Network,
    pub motion: Network,
    pub spatial: Network,
    pub temporal: Network,
}

/// Per-stream seeds derived from the global seed.
pub mod seeds {
    pub const TRAIN_DATA: u64 = 1;
    pub const TEST_DATA: u64 = 2;
    pub const APPEARANCE: u64 = 3;
    pub const MOTION: u64 = 4;
    pub const SPATIAL: u64 = 5;
    pub const TEMPORAL: u64 = 6;

    pub fn derive(global: u64, stream: u64) -> u64 {
        global.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
    }
}

pub fn train_videos(cfg: &PipelineConfig) -> Result<Vec<SyntheticVideo>> {
    gen_video_set(seeds::derive(cfg.seed, seeds::TRAIN_DATA), cfg.data.train_videos, &cfg.data.scene)
}

pub fn test_videos(cfg: &PipelineConfig) -> Result<Vec<SyntheticVideo>> {
    gen_video_set(seeds::derive(cfg.seed, seeds::TEST_DATA), cfg.data.test_videos, &cfg.data.scene)
}

/// Motion-stream input for frame `t`: quantized flow at `t` stacked with the
/// flow at `t + 1` (the last frame reuses its own flow).
pub fn motion_input(video: &SyntheticVideo, t: usize, bound: f32) -> Result<Tensor<f32>> {
    let next = (t + 1).min(video.flows.len() - 1);
    stack_flow_pair(&quantize_flow(&video.flows[t], bound)?, &quantize_flow(&video.flows[next], bound)?)
}

fn training_frames(videos: &[SyntheticVideo], stride: usize) -> Vec<(usize, usize)> {
    videos
        .iter()
        .enumerate()
        .flat_map(|(v, video)| (0..video.frames.len()).step_by(stride).map(move |t| (v, t)))
        .collect()
}

type Pairs = Vec<(Tensor<f32>, ActionnessMap)>;

/// Binary-target training pairs for the appearance and motion streams.
pub fn actionness_pairs(videos: &[SyntheticVideo], stride: usize, bound: f32) -> Result<(Pairs, Pairs)> {
    let mut app = Vec::new();
    let mut mot = Vec::new();
    for (v, t) in training_frames(videos, stride) {
        let video = &videos[v];
        let f = &video.frames[t];
        let target = boxes_to_binary_map(&video.boxes[t], f.height(), f.width());
        app.push((f.clone(), target.clone()));
        mot.push((motion_input(video, t, bound)?, target));
    }
    Ok((app, mot))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReports {
    pub appearance: TrainReport,
    pub motion: TrainReport,
    pub spatial: TrainReport,
    pub temporal: TrainReport,
}

/// Train the appearance and motion actionness networks.
pub fn train_actionness(
    cfg: &PipelineConfig,
    specs: &Specs,
    videos: &[SyntheticVideo],
    exec: Exec,
) -> Result<(Network, Network, TrainReport, TrainReport)> {
    let (app, mot) = actionness_pairs(videos, cfg.data.frame_stride, cfg.data.flow_bound)?;
    let sched = &cfg.train.actionness;
    let a0 = build_network(&specs.appearance, seeds::derive(cfg.seed, seeds::APPEARANCE))?;
    let m0 = build_network(&specs.motion, seeds::derive(cfg.seed, seeds::MOTION))?;
    log::info!("training {} on {} frames", specs.appearance.name, app.len());
    let (a, ra) = fine_tune_with(a0, &app, sched, seeds::derive(cfg.seed, seeds::APPEARANCE), exec)?;
    log::info!("training {} on {} flow stacks", specs.motion.name, mot.len());
    let (m, rm) = fine_tune_with(m0, &mot, sched, seeds::derive(cfg.seed, seeds::MOTION), exec)?;
    Ok((a, m, ra, rm))
}

/// Appearance, motion and hybrid maps of one frame at frame resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMaps {
    pub appearance: ActionnessMap,
    pub motion: ActionnessMap,
    pub hybrid: ActionnessMap,
}

pub fn estimate_frame(
    appearance: &Network,
    motion: &Network,
    video: &SyntheticVideo,
    t: usize,
    scales: &[f64],
    bound: f32,
) -> Result<FrameMaps> {
    let a = multiscale_estimate(appearance, &video.frames[t], scales)?;
    let m = multiscale_estimate(motion, &motion_input(video, t, bound)?, scales)?;
    let hybrid = hybrid_fuse(&a, &m)?;
    Ok(FrameMaps {
        appearance: a,
        motion: m,
        hybrid,
    })
}

pub fn estimate_video(
    appearance: &Network,
    motion: &Network,
    video: &SyntheticVideo,
    scales: &[f64],
    bound: f32,
    exec: Exec,
) -> Result<Vec<FrameMaps>> {
    exec.map_range(0..video.frames.len(), |t| estimate_frame(appearance, motion, video, t, scales, bound))
        .into_iter()
        .collect()
}

pub fn propose_video(maps: &[FrameMaps], cfg: &ProposalConfig, exec: Exec) -> Result<Vec<Vec<ScoredBox>>> {
    exec.try_map(maps, |m| {
        generate_proposals(&m.hybrid, cfg, m.hybrid.height(), m.hybrid.width())
    })
}

/// Crops of `boxes` from the frame and from the motion input.
fn crop_pair(video: &SyntheticVideo, t: usize, boxes: &[BBox], size: [usize; 2], bound: f32) -> Result<(Vec<Tensor<f32>>, Vec<Tensor<f32>>)> {
    let motion = motion_input(video, t, bound)?;
    let mut s = Vec::with_capacity(boxes.len());
    let mut m = Vec::with_capacity(boxes.len());
    for b in boxes {
        s.push(crop_and_resize(&video.frames[t], b, size[0], size[1])?);
        m.push(crop_and_resize(&motion, b, size[0], size[1])?);
    }
    Ok((s, m))
}

type Labelled = Vec<(Tensor<f32>, usize)>;

/// Ground-truth crops labelled with their class and up to
/// `negatives_per_frame` background crops from low-overlap proposals.
pub fn classifier_examples(
    cfg: &PipelineConfig,
    specs: &Specs,
    videos: &[SyntheticVideo],
    proposals: &[Vec<Vec<ScoredBox>>],
) -> Result<(Labelled, Labelled)> {
    let size = specs.spatial.input_size.expect("checked by PipelineConfig::specs");
    let background = cfg.data.scene.classes;
    let mut spatial = Vec::new();
    let mut temporal = Vec::new();
    for (v, t) in training_frames(videos, cfg.data.frame_stride) {
        let video = &videos[v];
        let props: Vec<BBox> = proposals[v][t].iter().map(|p| p.bbox).collect();
        let (pos, neg) = select_training_examples(&props, &video.boxes[t]);
        let labels: Vec<usize> = video
            .actors
            .iter()
            .map(|a| a.class)
            .chain(std::iter::repeat_n(background, neg.len().min(cfg.train.negatives_per_frame)))
            .collect();
        let boxes: Vec<BBox> = pos.into_iter().chain(neg.into_iter().take(cfg.train.negatives_per_frame)).collect();
        let (s, m) = crop_pair(video, t, &boxes, size, cfg.data.flow_bound)?;
        spatial.extend(s.into_iter().zip(labels.iter().copied()));
        temporal.extend(m.into_iter().zip(labels.iter().copied()));
    }
    Ok((spatial, temporal))
}

/// Detections of one clip: every proposal scored by both classifier streams.
pub fn detect_video(
    cfg: &PipelineConfig,
    models: &Models,
    video_id: usize,
    video: &SyntheticVideo,
    proposals: &[Vec<ScoredBox>],
) -> Result<Vec<Vec<Detection>>> {
    let size = models.spatial.spec().input_size.expect("classifier declares input_size");
    proposals
        .iter()
        .enumerate()
        .map(|(t, props)| {
            let boxes: Vec<BBox> = props.iter().map(|p| p.bbox).collect();
            let (s, m) = crop_pair(video, t, &boxes, size, cfg.data.flow_bound)?;
            let fused = fuse_streams(&classify_proposals(&models.spatial, &s)?, &classify_proposals(&models.temporal, &m)?)?;
            detect_frame(video_id, t, &boxes, &fused, cfg.data.scene.classes, cfg.detect.nms)
        })
        .collect()
}

/// Tubes of one clip, linked class by class.
pub fn link_video(per_frame: &[Vec<Detection>], classes: usize, cfg: &LinkConfig) -> Result<Vec<Tube>> {
    let mut tubes = Vec::new();
    for k in 0..classes {
        let frames: Vec<Vec<Detection>> = per_frame
            .iter()
            .map(|f| f.iter().filter(|d| d.class == k).copied().collect())
            .collect();
        if frames.iter().any(|f| f.is_empty()) {
            continue;
        }
        tubes.extend(link_tubes(&frames, cfg)?);
    }
    Ok(tubes)
}

/// Everything produced for one held-out clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipResult {
    pub maps: Vec<FrameMaps>,
    pub proposals: Vec<Vec<ScoredBox>>,
    pub detections: Vec<Vec<Detection>>,
    pub tubes: Vec<Tube>,
}

pub fn run_clip(cfg: &PipelineConfig, models: &Models, video_id: usize, video: &SyntheticVideo, exec: Exec) -> Result<ClipResult> {
    let maps = estimate_video(&models.appearance, &models.motion, video, &cfg.estimate.scales, cfg.data.flow_bound, exec)?;
    let proposals = propose_video(&maps, &cfg.proposals, exec)?;
    let detections = detect_video(cfg, models, video_id, video, &proposals)?;
    let tubes = link_video(&detections, cfg.data.scene.classes, &cfg.link)?;
    Ok(ClipResult {
        maps,
        proposals,
        detections,
        tubes,
    })
}

/// Train all four networks on the training clips.
pub fn train_models(cfg: &PipelineConfig, videos: &[SyntheticVideo], exec: Exec) -> Result<(Models, TrainReports)> {
    cfg.validate()?;
    let specs = cfg.specs()?;
    let (appearance, motion, ra, rm) = train_actionness(cfg, &specs, videos, exec)?;

    log::info!("proposals on training clips for classifier negatives");
    let stride = cfg.data.frame_stride;
    let proposals = exec.try_map(videos, |video| -> Result<Vec<Vec<ScoredBox>>> {
        (0..video.frames.len())
            .map(|t| {
                if t % stride != 0 {
                    return Ok(Vec::new());
                }
                let m = estimate_frame(&appearance, &motion, video, t, &cfg.estimate.scales, cfg.data.flow_bound)?;
                generate_proposals(&m.hybrid, &cfg.proposals, m.hybrid.height(), m.hybrid.width())
            })
            .collect()
    })?;
    let (spatial_set, temporal_set) = classifier_examples(cfg, &specs, videos, &proposals)?;
    log::info!("training classifiers on {} crops", spatial_set.len());
    let s0 = build_network(&specs.spatial, seeds::derive(cfg.seed, seeds::SPATIAL))?;
    let t0 = build_network(&specs.temporal, seeds::derive(cfg.seed, seeds::TEMPORAL))?;
    let (spatial, rs) = train_classifier(s0, &spatial_set, &cfg.train.classifier, seeds::derive(cfg.seed, seeds::SPATIAL))?;
    let (temporal, rt) = train_classifier(t0, &temporal_set, &cfg.train.classifier, seeds::derive(cfg.seed, seeds::TEMPORAL))?;
    Ok((
        Models {
            appearance,
            motion,
            spatial,
            temporal,
        },
        TrainReports {
            appearance: ra,
            motion: rm,
            spatial: rs,
            temporal: rt,
        },
    ))
}

/// Summary metrics over the held-out clips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub appearance_map: f64,
    pub motion_map: f64,
    pub hybrid_map: f64,
    pub proposal_recall: f64,
    pub recall_vs_count: Vec<(f64, f64)>,
    pub recall_vs_iou: Vec<(f64, f64)>,
    pub frame_ap: Vec<ClassAp>,
    pub frame_map: f64,
    pub video_ap: Vec<ClassAp>,
    pub video_map: f64,
}

pub fn ground_truth_frames(videos: &[SyntheticVideo]) -> Vec<GroundTruth> {
    videos
        .iter()
        .enumerate()
        .flat_map(|(v, video)| {
            video.boxes.iter().enumerate().flat_map(move |(t, bs)| {
                bs.iter().zip(&video.actors).map(move |(b, a)| GroundTruth {
                    video: v,
                    frame: t,
                    bbox: *b,
                    class: a.class,
                })
            })
        })
        .collect()
}

pub fn ground_truth_tubes(videos: &[SyntheticVideo]) -> Vec<Tube> {
    videos
        .iter()
        .enumerate()
        .flat_map(|(v, video)| {
            video.actors.iter().enumerate().map(move |(k, a)| Tube {
                video: v,
                class: a.class,
                start: 0,
                boxes: video.boxes.iter().map(|bs| bs[k]).collect(),
                score: 1.0,
            })
        })
        .collect()
}

/// Grid-protocol actionness mAP: per-clip AP averaged over clips.
/// `maps[v][t]` is the map of frame `t` of clip `v`.
pub fn grid_map(cfg: &PipelineConfig, videos: &[SyntheticVideo], maps: &[Vec<ActionnessMap>]) -> Result<f64> {
    if maps.len() != videos.len() {
        return Err(Error::shape(format!("{} clips of maps for {} clips", maps.len(), videos.len())));
    }
    let aps = videos
        .iter()
        .zip(maps)
        .map(|(v, m)| grid_actionness_ap_video(m, &v.boxes, &cfg.eval.grid))
        .collect::<Result<Vec<f64>>>()?;
    mean(&aps)
}

/// Recall at the configured count, recall vs count and recall vs IoU.
/// `proposals[v][t]` are the boxes of frame `t` of clip `v`.
pub fn proposal_metrics(
    cfg: &PipelineConfig,
    videos: &[SyntheticVideo],
    proposals: &[Vec<Vec<BBox>>],
) -> Result<(f64, Vec<(f64, f64)>, Vec<(f64, f64)>)> {
    let e = &cfg.eval;
    let mut props = Vec::new();
    let mut gts = Vec::new();
    for (v, video) in videos.iter().enumerate() {
        for (t, bs) in video.boxes.iter().enumerate() {
            props.push(proposals.get(v).and_then(|p| p.get(t)).cloned().unwrap_or_default());
            gts.push(bs.clone());
        }
    }
    Ok((
        proposal_recall(&props, &gts, e.recall_count, e.recall_iou)?,
        recall_vs_count(&props, &gts, &e.recall_counts, e.recall_iou)?,
        recall_vs_iou(&props, &gts, e.recall_count, &e.recall_ious)?,
    ))
}

pub fn frame_metrics(cfg: &PipelineConfig, videos: &[SyntheticVideo], detections: &[Detection]) -> Result<(Vec<ClassAp>, f64)> {
    let aps = frame_ap(detections, &ground_truth_frames(videos), cfg.data.scene.classes, cfg.eval.match_iou)?;
    let m = mean_ap(&aps)?;
    Ok((aps, m))
}

pub fn video_metrics(cfg: &PipelineConfig, videos: &[SyntheticVideo], tubes: &[Tube]) -> Result<(Vec<ClassAp>, f64)> {
    let aps = video_ap(tubes, &ground_truth_tubes(videos), cfg.data.scene.classes, cfg.eval.match_iou)?;
    let m = mean_ap(&aps)?;
    Ok((aps, m))
}

pub fn evaluate(cfg: &PipelineConfig, videos: &[SyntheticVideo], results: &[ClipResult]) -> Result<Metrics> {
    let pick = |f: fn(&FrameMaps) -> &ActionnessMap| -> Vec<Vec<ActionnessMap>> {
        results.iter().map(|r| r.maps.iter().map(|m| f(m).clone()).collect()).collect()
    };
    let props: Vec<Vec<Vec<BBox>>> = results
        .iter()
        .map(|r| r.proposals.iter().map(|p| p.iter().map(|s| s.bbox).collect()).collect())
        .collect();
    let (proposal_recall, recall_vs_count, recall_vs_iou) = proposal_metrics(cfg, videos, &props)?;
    let dets: Vec<Detection> = results.iter().flat_map(|r| r.detections.iter().flatten().copied()).collect();
    let tubes: Vec<Tube> = results.iter().flat_map(|r| r.tubes.iter().cloned()).collect();
    let (frame_ap, frame_map) = frame_metrics(cfg, videos, &dets)?;
    let (video_ap, video_map) = video_metrics(cfg, videos, &tubes)?;
    Ok(Metrics {
        appearance_map: grid_map(cfg, videos, &pick(|m| &m.appearance))?,
        motion_map: grid_map(cfg, videos, &pick(|m| &m.motion))?,
        hybrid_map: grid_map(cfg, videos, &pick(|m| &m.hybrid))?,
        proposal_recall,
        recall_vs_count,
        recall_vs_iou,
        frame_ap,
        frame_map,
        video_ap,
        video_map,
    })
}

/// Train, run every held-out clip and evaluate, all in memory.
pub fn run_experiment(cfg: &PipelineConfig, exec: Exec) -> Result<(Models, TrainReports, Vec<ClipResult>, Metrics)> {
    let train = train_videos(cfg)?;
    let (models, reports) = train_models(cfg, &train, exec)?;
    let test = test_videos(cfg)?;
    log::info!("running {} held-out clips", test.len());
    let results = test
        .iter()
        .enumerate()
        .map(|(i, v)| run_clip(cfg, &models, i, v, exec))
        .collect::<Result<Vec<_>>>()?;
    let metrics = evaluate(cfg, &test, &results)?;
    Ok((models, reports, results, metrics))
}
