//! The pipeline as separate stages over files: synthesise a dataset, train,
//! estimate maps, propose, detect, link and evaluate. Each stage reads the
//! previous stage's artifacts, so any stage can be rerun on its own.
//!
//! Layout under a run directory:
//!
//! ```text
//! config.toml
//! data/{train,test}/annotations.txt, v####/f####.{png,flo}
//! weights/{appearance,motion,spatial,temporal}.awts
//! train/{appearance,motion,spatial,temporal}_loss.txt
//! maps/v####/f####.{appearance,motion,hybrid}.amap
//! proposals.txt  detections.txt  tubes.txt
//! eval/metrics.txt, eval/recall_vs_count.txt, eval/recall_vs_iou.txt
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detect::{Detection, Tube};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fcn::Network;
use crate::geom::BBox;
use crate::io::{self, ProposalRecord, Provenance};
use crate::map::ActionnessMap;
use crate::pipeline::{
    detect_video, estimate_frame, frame_metrics, grid_map, link_video, proposal_metrics, test_videos, train_models,
    train_videos, video_metrics, Models, PipelineConfig, TrainReports,
};
use crate::proposal::{generate_proposals, ScoredBox};
use crate::synth::SyntheticVideo;

pub const STREAMS: [&str; 4] = ["appearance", "motion", "spatial", "temporal"];

/// Paths of every artifact of a run rooted at `root`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn train_data(&self) -> PathBuf {
        self.data().join("train")
    }
    pub fn test_data(&self) -> PathBuf {
        self.data().join("test")
    }
    pub fn weights(&self) -> PathBuf {
        self.root.join("weights")
    }
    pub fn losses(&self) -> PathBuf {
        self.root.join("train")
    }
    pub fn maps(&self) -> PathBuf {
        self.root.join("maps")
    }
    pub fn proposals(&self) -> PathBuf {
        self.root.join("proposals.txt")
    }
    pub fn detections(&self) -> PathBuf {
        self.root.join("detections.txt")
    }
    pub fn tubes(&self) -> PathBuf {
        self.root.join("tubes.txt")
    }
    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
}

/// Which maps [`estimate`] writes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapKind {
    Appearance,
    Motion,
    #[default]
    Hybrid,
}

impl MapKind {
    pub const ALL: [MapKind; 3] = [MapKind::Appearance, MapKind::Motion, MapKind::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            MapKind::Appearance => "appearance",
            MapKind::Motion => "motion",
            MapKind::Hybrid => "hybrid",
        }
    }
}

impl std::str::FromStr for MapKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MapKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown map kind {s:?} (appearance, motion, hybrid)")))
    }
}

pub fn map_path(dir: &Path, video: usize, frame: usize, kind: MapKind) -> PathBuf {
    io::video_dir(dir, video).join(format!("f{frame:04}.{}.amap", kind.name()))
}

pub fn provenance(cfg: &PipelineConfig) -> Provenance {
    Provenance {
        seed: cfg.seed,
        config_hash: cfg.hash(),
    }
}

fn check_provenance(cfg: &PipelineConfig, found: Provenance, path: &Path) {
    let want = provenance(cfg);
    if found != want {
        log::warn!(
            "{}: produced with seed {} config {:016x}, current run uses seed {} config {:016x}",
            path.display(),
            found.seed,
            found.config_hash,
            want.seed,
            want.config_hash
        );
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    io::write_file(path, text.as_bytes())
}

/// Training and held-out clips written under `dir/train` and `dir/test`.
pub fn synth(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let prov = provenance(cfg);
    let train = train_videos(cfg)?;
    io::write_dataset(&dir.join("train"), &train, prov)?;
    let test = test_videos(cfg)?;
    io::write_dataset(&dir.join("test"), &test, prov)?;
    log::info!("wrote {} training and {} test clips to {}", train.len(), test.len(), dir.display());
    Ok(())
}

pub fn read_dataset(cfg: &PipelineConfig, dir: &Path) -> Result<Vec<SyntheticVideo>> {
    let (videos, prov) = io::read_dataset(dir)?;
    check_provenance(cfg, prov, &dir.join(io::ANNOTATIONS_FILE));
    Ok(videos)
}

fn models_as_slice(m: &Models) -> [&Network; 4] {
    [&m.appearance, &m.motion, &m.spatial, &m.temporal]
}

/// Train all networks on the dataset in `data`; write weights and loss curves.
pub fn train(cfg: &PipelineConfig, data: &Path, weights: &Path, losses: &Path, exec: Exec) -> Result<(Models, TrainReports)> {
    let videos = read_dataset(cfg, data)?;
    let (models, reports) = train_models(cfg, &videos, exec)?;
    let prov = provenance(cfg);
    let curves = [&reports.appearance, &reports.motion, &reports.spatial, &reports.temporal];
    for ((name, net), report) in STREAMS.iter().zip(models_as_slice(&models)).zip(curves) {
        io::write_weights(&weights.join(format!("{name}.awts")), net, prov)?;
        let pts: Vec<(f64, f64)> = report.losses.iter().enumerate().map(|(i, &l)| (i as f64, l as f64)).collect();
        write_text(&losses.join(format!("{name}_loss.txt")), &io::format_curve(&format!("{name} loss per iteration"), &pts, prov))?;
    }
    Ok((models, reports))
}

pub fn load_models(cfg: &PipelineConfig, weights: &Path) -> Result<Models> {
    let specs = cfg.specs()?;
    let load = |name: &str, spec| -> Result<Network> {
        let path = weights.join(format!("{name}.awts"));
        let (net, prov) = io::read_weights(&path, spec)?;
        check_provenance(cfg, prov, &path);
        Ok(net)
    };
    Ok(Models {
        appearance: load("appearance", &specs.appearance)?,
        motion: load("motion", &specs.motion)?,
        spatial: load("spatial", &specs.spatial)?,
        temporal: load("temporal", &specs.temporal)?,
    })
}

/// Actionness maps of every frame of the dataset in `data`.
pub fn estimate(cfg: &PipelineConfig, models: &Models, data: &Path, out: &Path, kinds: &[MapKind], exec: Exec) -> Result<usize> {
    let videos = read_dataset(cfg, data)?;
    let prov = provenance(cfg);
    let jobs: Vec<(usize, usize)> = videos
        .iter()
        .enumerate()
        .flat_map(|(v, video)| (0..video.frames.len()).map(move |t| (v, t)))
        .collect();
    exec.try_map(&jobs, |&(v, t)| -> Result<()> {
        let m = estimate_frame(&models.appearance, &models.motion, &videos[v], t, &cfg.estimate.scales, cfg.data.flow_bound)?;
        for &k in kinds {
            let map = match k {
                MapKind::Appearance => &m.appearance,
                MapKind::Motion => &m.motion,
                MapKind::Hybrid => &m.hybrid,
            };
            io::write_map(&map_path(out, v, t, k), map, prov)?;
        }
        Ok(())
    })?;
    Ok(jobs.len())
}

/// `maps[v][t]` for every clip and frame of `videos`.
pub fn read_maps(cfg: &PipelineConfig, dir: &Path, videos: &[SyntheticVideo], kind: MapKind) -> Result<Vec<Vec<ActionnessMap>>> {
    videos
        .iter()
        .enumerate()
        .map(|(v, video)| {
            (0..video.frames.len())
                .map(|t| {
                    let path = map_path(dir, v, t, kind);
                    let (map, prov) = io::read_map(&path)?;
                    check_provenance(cfg, prov, &path);
                    Ok(map)
                })
                .collect()
        })
        .collect()
}

/// `(video, frame)` of every map of `kind` in `dir`, sorted.
fn list_maps(dir: &Path, kind: MapKind) -> Result<Vec<(usize, usize, PathBuf)>> {
    let suffix = format!(".{}.amap", kind.name());
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(v) = name.strip_prefix('v').and_then(|s| s.parse::<usize>().ok()) else { continue };
        let sub = entry.path();
        for f in std::fs::read_dir(&sub).map_err(|e| Error::io(&sub, e))? {
            let f = f.map_err(|e| Error::io(&sub, e))?;
            let fname = f.file_name().to_string_lossy().into_owned();
            if let Some(t) = fname.strip_suffix(&suffix).and_then(|s| s.strip_prefix('f')).and_then(|s| s.parse().ok()) {
                out.push((v, t, f.path()));
            }
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::format(dir, format!("no *{suffix} maps found")));
    }
    Ok(out)
}

/// Proposals from every `kind` map found in `maps`, projected to map size.
pub fn propose(cfg: &PipelineConfig, maps: &Path, kind: MapKind, out: &Path, exec: Exec) -> Result<Vec<ProposalRecord>> {
    let found = list_maps(maps, kind)?;
    let per_map = exec.try_map(&found, |(v, t, path)| -> Result<Vec<ProposalRecord>> {
        let (map, prov) = io::read_map(path)?;
        check_provenance(cfg, prov, path);
        Ok(generate_proposals(&map, &cfg.proposals, map.height(), map.width())?
            .into_iter()
            .map(|proposal| ProposalRecord { video: *v, frame: *t, proposal })
            .collect())
    })?;
    let records: Vec<ProposalRecord> = per_map.into_iter().flatten().collect();
    write_text(out, &io::format_proposals(&records, provenance(cfg)))?;
    Ok(records)
}

pub fn read_proposals(cfg: &PipelineConfig, path: &Path) -> Result<Vec<ProposalRecord>> {
    let (r, prov) = io::read_records(path, io::parse_proposals)?;
    check_provenance(cfg, prov, path);
    Ok(r)
}

/// `grouped[v][t]` proposals, sized to the clips in `videos`.
fn group_proposals(records: &[ProposalRecord], videos: &[SyntheticVideo], path: &Path) -> Result<Vec<Vec<Vec<ScoredBox>>>> {
    let mut out: Vec<Vec<Vec<ScoredBox>>> = videos.iter().map(|v| vec![Vec::new(); v.frames.len()]).collect();
    for r in records {
        let slot = out
            .get_mut(r.video)
            .and_then(|v| v.get_mut(r.frame))
            .ok_or_else(|| Error::format(path, format!("proposal for video {} frame {} outside the dataset", r.video, r.frame)))?;
        slot.push(r.proposal);
    }
    Ok(out)
}

/// Classify every proposal of the dataset's clips.
pub fn detect(cfg: &PipelineConfig, models: &Models, data: &Path, proposals: &Path, out: &Path, exec: Exec) -> Result<Vec<Detection>> {
    let videos = read_dataset(cfg, data)?;
    let grouped = group_proposals(&read_proposals(cfg, proposals)?, &videos, proposals)?;
    let ids: Vec<usize> = (0..videos.len()).collect();
    let per_clip = exec.try_map(&ids, |&v| detect_video(cfg, models, v, &videos[v], &grouped[v]))?;
    let dets: Vec<Detection> = per_clip.into_iter().flatten().flatten().collect();
    write_text(out, &io::format_detections(&dets, provenance(cfg)))?;
    Ok(dets)
}

pub fn read_detections(cfg: &PipelineConfig, path: &Path) -> Result<Vec<Detection>> {
    let (r, prov) = io::read_records(path, io::parse_detections)?;
    check_provenance(cfg, prov, path);
    Ok(r)
}

/// Link detections clip by clip. A clip spans frames `0..=max frame` of its
/// detections.
pub fn link(cfg: &PipelineConfig, detections: &Path, out: &Path) -> Result<Vec<Tube>> {
    let dets = read_detections(cfg, detections)?;
    let mut clips: BTreeMap<usize, Vec<Vec<Detection>>> = BTreeMap::new();
    for d in dets {
        let frames = clips.entry(d.video).or_default();
        if frames.len() <= d.frame {
            frames.resize(d.frame + 1, Vec::new());
        }
        frames[d.frame].push(d);
    }
    let mut tubes = Vec::new();
    for frames in clips.values() {
        tubes.extend(link_video(frames, cfg.data.scene.classes, &cfg.link)?);
    }
    write_text(out, &io::format_tubes(&tubes, provenance(cfg)))?;
    Ok(tubes)
}

pub fn read_tubes(cfg: &PipelineConfig, path: &Path) -> Result<Vec<Tube>> {
    let (r, prov) = io::read_records(path, io::parse_tubes)?;
    check_provenance(cfg, prov, path);
    Ok(r)
}

/// Inputs to [`evaluate`]; each protocol runs only when its input is given.
#[derive(Clone, Debug, Default)]
pub struct EvalInputs {
    pub maps: Option<PathBuf>,
    pub proposals: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub tubes: Option<PathBuf>,
}

/// Evaluate against the dataset in `data`; writes `metrics.txt` and recall
/// curves into `out` and returns the metric entries.
pub fn evaluate(cfg: &PipelineConfig, data: &Path, inputs: &EvalInputs, out: &Path) -> Result<Vec<(String, f64)>> {
    let videos = read_dataset(cfg, data)?;
    let prov = provenance(cfg);
    let mut entries: Vec<(String, f64)> = Vec::new();
    if let Some(dir) = &inputs.maps {
        for kind in MapKind::ALL {
            let maps = read_maps(cfg, dir, &videos, kind)?;
            entries.push((format!("{}_map", kind.name()), grid_map(cfg, &videos, &maps)?));
        }
    }
    if let Some(path) = &inputs.proposals {
        let grouped = group_proposals(&read_proposals(cfg, path)?, &videos, path)?;
        let boxes: Vec<Vec<Vec<BBox>>> = grouped
            .iter()
            .map(|v| v.iter().map(|f| f.iter().map(|p| p.bbox).collect()).collect())
            .collect();
        let (recall, by_count, by_iou) = proposal_metrics(cfg, &videos, &boxes)?;
        entries.push(("proposal_recall".into(), recall));
        write_text(&out.join("recall_vs_count.txt"), &io::format_curve("recall vs proposals per frame", &by_count, prov))?;
        write_text(&out.join("recall_vs_iou.txt"), &io::format_curve("recall vs IoU threshold", &by_iou, prov))?;
    }
    if let Some(path) = &inputs.detections {
        let (aps, m) = frame_metrics(cfg, &videos, &read_detections(cfg, path)?)?;
        entries.push(("frame_map".into(), m));
        entries.extend(aps.iter().map(|a| (format!("frame_ap_class{}", a.class), a.ap)));
    }
    if let Some(path) = &inputs.tubes {
        let (aps, m) = video_metrics(cfg, &videos, &read_tubes(cfg, path)?)?;
        entries.push(("video_map".into(), m));
        entries.extend(aps.iter().map(|a| (format!("video_ap_class{}", a.class), a.ap)));
    }
    if entries.is_empty() {
        return Err(Error::invalid("nothing to evaluate: give maps, proposals, detections or tubes"));
    }
    write_text(&out.join("metrics.txt"), &io::format_metrics(&entries, prov))?;
    Ok(entries)
}

/// Every stage in order under `layout`, each reading the previous stage's
/// files.
pub fn run_all(cfg: &PipelineConfig, layout: &Layout, exec: Exec) -> Result<Vec<(String, f64)>> {
    cfg.validate()?;
    write_text(&layout.config(), &cfg.to_toml())?;
    synth(cfg, &layout.data())?;
    let (models, _) = train(cfg, &layout.train_data(), &layout.weights(), &layout.losses(), exec)?;
    estimate(cfg, &models, &layout.test_data(), &layout.maps(), &MapKind::ALL, exec)?;
    propose(cfg, &layout.maps(), MapKind::Hybrid, &layout.proposals(), exec)?;
    detect(cfg, &models, &layout.test_data(), &layout.proposals(), &layout.detections(), exec)?;
    link(cfg, &layout.detections(), &layout.tubes())?;
    let inputs = EvalInputs {
        maps: Some(layout.maps()),
        proposals: Some(layout.proposals()),
        detections: Some(layout.detections()),
        tubes: Some(layout.tubes()),
    };
    evaluate(cfg, &layout.test_data(), &inputs, &layout.eval())
}
