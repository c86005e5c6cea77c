//! File formats: actionness maps, weight containers, line-oriented records
//! (annotations, proposals, detections, tubes), curves, metrics and datasets.
//!
//! Every file starts with a header carrying the format version, the seed and
//! the configuration hash that produced it.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detect::{Detection, Tube};
use crate::error::{Error, Result};
use crate::fcn::{build_network, Network, NetworkSpec};
use crate::flow::{read_flow_file, write_flow_file};
use crate::geom::BBox;
use crate::map::ActionnessMap;
use crate::proposal::ScoredBox;
use crate::synth::{Actor, SyntheticVideo};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const MAP_MAGIC: &[u8; 4] = b"AMAP";
pub const WEIGHTS_MAGIC: &[u8; 4] = b"AWTS";

/// Seed and configuration hash recorded in every artifact.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: u64,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Write `bytes`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "size overflow"))?, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.path, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

// ---- actionness maps ----

/// `AMAP`, version, seed, config hash (u64), height, width (u32), then
/// row-major f32 values; all little-endian.
pub fn encode_map(map: &ActionnessMap, prov: Provenance) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 4 * map.values().len());
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&prov.seed.to_le_bytes());
    out.extend_from_slice(&prov.config_hash.to_le_bytes());
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    for v in map.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_map(bytes: &[u8], path: &Path) -> Result<(ActionnessMap, Provenance)> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4, "magic")? != MAP_MAGIC {
        return Err(Error::format(path, "magic: not an AMAP file"));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("version: {version}, expected {FORMAT_VERSION}")));
    }
    let prov = Provenance {
        seed: r.u64("seed")?,
        config_hash: r.u64("config hash")?,
    };
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let values = r.f32s(h * w, "values")?;
    r.finish()?;
    let map = ActionnessMap::new(h, w, values).map_err(|e| Error::format(path, format!("values: {e}")))?;
    Ok((map, prov))
}

pub fn write_map(path: &Path, map: &ActionnessMap, prov: Provenance) -> Result<()> {
    write_file(path, &encode_map(map, prov))
}

pub fn read_map(path: &Path) -> Result<(ActionnessMap, Provenance)> {
    decode_map(&read_bytes(path)?, path)
}

/// Binary PGM (P5) with values scaled to 0..=255 and a provenance comment.
pub fn encode_pgm(map: &ActionnessMap, prov: Provenance) -> Vec<u8> {
    let mut out = format!(
        "P5\n# actionness v{FORMAT_VERSION} seed={} config={:016x}\n{} {}\n255\n",
        prov.seed,
        prov.config_hash,
        map.width(),
        map.height()
    )
    .into_bytes();
    out.extend(map.values().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write_pgm(path: &Path, map: &ActionnessMap, prov: Provenance) -> Result<()> {
    write_file(path, &encode_pgm(map, prov))
}

// ---- weights ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct WeightHeader {
    version: u32,
    seed: u64,
    config_hash: u64,
    spec_name: String,
    spec_hash: String,
    layers: Vec<WeightLayer>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct WeightLayer {
    name: String,
    /// `[ky, kx, in, out]`, the in-memory weight layout.
    shape: [usize; 4],
    bias: usize,
}

/// `AWTS`, u32 header length, JSON header, then weights and bias of every
/// convolution in layer order as little-endian f32.
pub fn encode_weights(net: &Network, prov: Provenance) -> Vec<u8> {
    let header = WeightHeader {
        version: FORMAT_VERSION,
        seed: prov.seed,
        config_hash: prov.config_hash,
        spec_name: net.spec().name.clone(),
        spec_hash: net.spec().hash(),
        layers: net
            .named_kernels()
            .map(|(name, k)| WeightLayer {
                name: name.to_string(),
                shape: [k.size, k.size, k.in_channels, k.out_channels],
                bias: k.bias.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, k) in net.named_kernels() {
        for v in k.weights.iter().chain(&k.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Rebuild a network for `spec` from a weight container. The container must
/// have been written for the same spec (hash and layer shapes).
pub fn decode_weights(bytes: &[u8], spec: &NetworkSpec, path: &Path) -> Result<(Network, Provenance)> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4, "magic")? != WEIGHTS_MAGIC {
        return Err(Error::format(path, "magic: not a weight container"));
    }
    let len = r.u32("header length")? as usize;
    let header: WeightHeader =
        serde_json::from_slice(r.take(len, "header")?).map_err(|e| Error::format(path, format!("header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::format(path, format!("version: {}, expected {FORMAT_VERSION}", header.version)));
    }
    let hash = spec.hash();
    if header.spec_hash != hash {
        return Err(Error::format(
            path,
            format!("spec_hash: file was written for {} ({}), expected {} ({hash})", header.spec_name, header.spec_hash, spec.name),
        ));
    }
    let mut net = build_network(spec, 0)?;
    let expected: Vec<(String, [usize; 4], usize)> = net
        .named_kernels()
        .map(|(n, k)| (n.to_string(), [k.size, k.size, k.in_channels, k.out_channels], k.bias.len()))
        .collect();
    if expected.len() != header.layers.len() {
        return Err(Error::format(path, format!("layers: {} declared, spec has {}", header.layers.len(), expected.len())));
    }
    let mut params = Vec::with_capacity(expected.len());
    for ((name, shape, bias), l) in expected.iter().zip(&header.layers) {
        if (name, shape, bias) != (&l.name, &l.shape, &l.bias) {
            return Err(Error::format(path, format!("layers: {} declared as {:?}+{}, spec needs {name} {shape:?}+{bias}", l.name, l.shape, l.bias)));
        }
        let n: usize = shape.iter().product();
        let w = r.f32s(n, &format!("weights of {name}"))?;
        let b = r.f32s(*bias, &format!("bias of {name}"))?;
        params.push((name.clone(), w, b));
    }
    r.finish()?;
    for (name, w, b) in params {
        net.set_params(&name, w, b)?;
    }
    Ok((
        net,
        Provenance {
            seed: header.seed,
            config_hash: header.config_hash,
        },
    ))
}

pub fn write_weights(path: &Path, net: &Network, prov: Provenance) -> Result<()> {
    write_file(path, &encode_weights(net, prov))
}

pub fn read_weights(path: &Path, spec: &NetworkSpec) -> Result<(Network, Provenance)> {
    decode_weights(&read_bytes(path)?, spec, path)
}

// ---- line-oriented records ----

/// Header line: `# actionness <kind> v<version> seed=<seed> config=<hash>`.
fn header_line(kind: &str, prov: Provenance) -> String {
    format!("# actionness {kind} v{FORMAT_VERSION} seed={} config={:016x}\n", prov.seed, prov.config_hash)
}

fn parse_header(line: Option<&str>, kind: &str, path: &Path) -> Result<Provenance> {
    let bad = |m: String| Error::format(path, format!("line 1: {m}"));
    let line = line.ok_or_else(|| bad("missing header".into()))?;
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 6 || parts[0] != "#" || parts[1] != "actionness" {
        return Err(bad(format!("malformed header {line:?}")));
    }
    if parts[2] != kind {
        return Err(bad(format!("kind: {} file, expected {kind}", parts[2])));
    }
    let version = parts[3].strip_prefix('v').and_then(|v| v.parse::<u32>().ok());
    if version != Some(FORMAT_VERSION) {
        return Err(bad(format!("version: {}, expected v{FORMAT_VERSION}", parts[3])));
    }
    let seed = parts[4].strip_prefix("seed=").and_then(|s| s.parse().ok());
    let hash = parts[5].strip_prefix("config=").and_then(|s| u64::from_str_radix(s, 16).ok());
    match (seed, hash) {
        (Some(seed), Some(config_hash)) => Ok(Provenance { seed, config_hash }),
        _ => Err(bad(format!("malformed seed/config in {line:?}"))),
    }
}

/// Parse a record file: header, then whitespace-separated fields per line
/// (blank lines and further `#` lines are skipped).
fn parse_records<T>(
    text: &str,
    kind: &str,
    path: &Path,
    mut f: impl FnMut(&[&str]) -> std::result::Result<T, String>,
) -> Result<(Vec<T>, Provenance)> {
    let mut lines = text.lines();
    let prov = parse_header(lines.next(), kind, path)?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        out.push(f(&fields).map_err(|m| Error::format(path, format!("line {}: {m}", i + 2)))?);
    }
    Ok((out, prov))
}

fn field<T: std::str::FromStr>(fields: &[&str], i: usize, name: &str) -> std::result::Result<T, String> {
    let s = fields.get(i).ok_or_else(|| format!("missing field {name}"))?;
    s.parse().map_err(|_| format!("field {name}: cannot parse {s:?}"))
}

fn expect_len(fields: &[&str], n: usize) -> std::result::Result<(), String> {
    if fields.len() != n {
        return Err(format!("{} fields, expected {n}", fields.len()));
    }
    Ok(())
}

fn bbox_at(fields: &[&str], i: usize) -> std::result::Result<BBox, String> {
    Ok(BBox::new(
        field(fields, i, "x1")?,
        field(fields, i + 1, "y1")?,
        field(fields, i + 2, "x2")?,
        field(fields, i + 3, "y2")?,
    ))
}

fn finite(x: f64, name: &str) -> std::result::Result<f64, String> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("field {name}: non-finite value"))
    }
}

/// Ground truth of one frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameAnnotation {
    pub video: usize,
    pub frame: usize,
    /// `(box, class)` per actor, in actor order.
    pub boxes: Vec<(BBox, usize)>,
}

/// `video frame count (x1 y1 x2 y2 class)*count`
pub fn format_annotations(records: &[FrameAnnotation], prov: Provenance) -> String {
    let mut s = header_line("annotations", prov);
    for r in records {
        write!(s, "{} {} {}", r.video, r.frame, r.boxes.len()).unwrap();
        for (b, c) in &r.boxes {
            write!(s, " {} {} {} {} {c}", b.x1, b.y1, b.x2, b.y2).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn parse_annotations(text: &str, path: &Path) -> Result<(Vec<FrameAnnotation>, Provenance)> {
    parse_records(text, "annotations", path, |f| {
        let n: usize = field(f, 2, "count")?;
        expect_len(f, 3 + 5 * n)?;
        let boxes = (0..n)
            .map(|k| Ok((bbox_at(f, 3 + 5 * k)?, field(f, 7 + 5 * k, "class")?)))
            .collect::<std::result::Result<_, String>>()?;
        Ok(FrameAnnotation {
            video: field(f, 0, "video")?,
            frame: field(f, 1, "frame")?,
            boxes,
        })
    })
}

/// A proposal tagged with its clip and frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProposalRecord {
    pub video: usize,
    pub frame: usize,
    pub proposal: ScoredBox,
}

/// `video frame x1 y1 x2 y2 score`
pub fn format_proposals(records: &[ProposalRecord], prov: Provenance) -> String {
    let mut s = header_line("proposals", prov);
    for r in records {
        let b = r.proposal.bbox;
        writeln!(s, "{} {} {} {} {} {} {}", r.video, r.frame, b.x1, b.y1, b.x2, b.y2, r.proposal.score).unwrap();
    }
    s
}

pub fn parse_proposals(text: &str, path: &Path) -> Result<(Vec<ProposalRecord>, Provenance)> {
    parse_records(text, "proposals", path, |f| {
        expect_len(f, 7)?;
        let score: f32 = field(f, 6, "score")?;
        finite(score as f64, "score")?;
        Ok(ProposalRecord {
            video: field(f, 0, "video")?,
            frame: field(f, 1, "frame")?,
            proposal: ScoredBox { bbox: bbox_at(f, 2)?, score },
        })
    })
}

/// `video frame class x1 y1 x2 y2 score`
pub fn format_detections(records: &[Detection], prov: Provenance) -> String {
    let mut s = header_line("detections", prov);
    for d in records {
        let b = d.bbox;
        writeln!(s, "{} {} {} {} {} {} {} {}", d.video, d.frame, d.class, b.x1, b.y1, b.x2, b.y2, d.score).unwrap();
    }
    s
}

pub fn parse_detections(text: &str, path: &Path) -> Result<(Vec<Detection>, Provenance)> {
    parse_records(text, "detections", path, |f| {
        expect_len(f, 8)?;
        Ok(Detection {
            video: field(f, 0, "video")?,
            frame: field(f, 1, "frame")?,
            class: field(f, 2, "class")?,
            bbox: bbox_at(f, 3)?,
            score: finite(field(f, 7, "score")?, "score")?,
        })
    })
}

/// One line per tube frame: `tube video frame class x1 y1 x2 y2 score`,
/// where `score` is the tube score repeated on each line.
pub fn format_tubes(tubes: &[Tube], prov: Provenance) -> String {
    let mut s = header_line("tubes", prov);
    for (id, t) in tubes.iter().enumerate() {
        for (i, b) in t.boxes.iter().enumerate() {
            writeln!(s, "{id} {} {} {} {} {} {} {} {}", t.video, t.start + i, t.class, b.x1, b.y1, b.x2, b.y2, t.score).unwrap();
        }
    }
    s
}

pub fn parse_tubes(text: &str, path: &Path) -> Result<(Vec<Tube>, Provenance)> {
    type Row = (usize, usize, usize, usize, BBox, f64);
    let (rows, prov) = parse_records(text, "tubes", path, |f| -> std::result::Result<Row, String> {
        expect_len(f, 9)?;
        Ok((
            field(f, 0, "tube")?,
            field(f, 1, "video")?,
            field(f, 2, "frame")?,
            field(f, 3, "class")?,
            bbox_at(f, 4)?,
            finite(field(f, 8, "score")?, "score")?,
        ))
    })?;
    let mut tubes: Vec<Tube> = Vec::new();
    let mut last_id = None;
    for (id, video, frame, class, bbox, score) in rows {
        if last_id == Some(id) {
            let t = tubes.last_mut().expect("tube started");
            if (t.video, t.class, t.end(), t.score) != (video, class, frame, score) {
                return Err(Error::format(path, format!("tube {id}: frames must be contiguous with constant video, class and score")));
            }
            t.boxes.push(bbox);
        } else {
            if last_id.is_some_and(|l| id != l + 1) || (last_id.is_none() && id != 0) {
                return Err(Error::format(path, format!("tube {id}: ids must be consecutive from 0")));
            }
            tubes.push(Tube {
                video,
                class,
                start: frame,
                boxes: vec![bbox],
                score,
            });
            last_id = Some(id);
        }
    }
    Ok((tubes, prov))
}

/// Two-column `x y` curve.
pub fn format_curve(name: &str, points: &[(f64, f64)], prov: Provenance) -> String {
    let mut s = header_line("curve", prov);
    writeln!(s, "# {name}").unwrap();
    for (x, y) in points {
        writeln!(s, "{x} {y}").unwrap();
    }
    s
}

pub fn parse_curve(text: &str, path: &Path) -> Result<(Vec<(f64, f64)>, Provenance)> {
    parse_records(text, "curve", path, |f| {
        expect_len(f, 2)?;
        Ok((field(f, 0, "x")?, field(f, 1, "y")?))
    })
}

/// `key=value` lines.
pub fn format_metrics(entries: &[(String, f64)], prov: Provenance) -> String {
    let mut s = header_line("metrics", prov);
    for (k, v) in entries {
        writeln!(s, "{k}={v}").unwrap();
    }
    s
}

pub fn parse_metrics(text: &str, path: &Path) -> Result<(Vec<(String, f64)>, Provenance)> {
    parse_records(text, "metrics", path, |f| {
        expect_len(f, 1)?;
        let (k, v) = f[0].split_once('=').ok_or_else(|| format!("expected key=value, got {:?}", f[0]))?;
        Ok((k.to_string(), v.parse().map_err(|_| format!("value of {k}: cannot parse {v:?}"))?))
    })
}

pub fn read_records<T>(path: &Path, parse: fn(&str, &Path) -> Result<(Vec<T>, Provenance)>) -> Result<(Vec<T>, Provenance)> {
    parse(&read_text(path)?, path)
}

// ---- images and datasets ----

/// 8-bit RGB PNG of a 3-channel tensor with values in `[0, 1]`.
pub fn encode_png(image: &Tensor<f32>) -> Result<Vec<u8>> {
    if image.channels() != 3 {
        return Err(Error::shape(format!("PNG export needs 3 channels, got {}", image.channels())));
    }
    let raw: Vec<u8> = image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf = image::RgbImage::from_raw(image.width() as u32, image.height() as u32, raw).expect("sized buffer");
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::invalid(format!("PNG encoding failed: {e}")))?;
    Ok(out.into_inner())
}

pub fn decode_png(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Tensor::new(h as usize, w as usize, 3, img.into_raw().into_iter().map(|q| q as f32 / 255.0).collect())
}

pub fn read_png(path: &Path) -> Result<Tensor<f32>> {
    decode_png(&read_bytes(path)?, path)
}

pub fn write_png(path: &Path, image: &Tensor<f32>) -> Result<()> {
    write_file(path, &encode_png(image)?)
}

pub const ANNOTATIONS_FILE: &str = "annotations.txt";

pub fn video_dir(root: &Path, video: usize) -> PathBuf {
    root.join(format!("v{video:04}"))
}

pub fn frame_path(root: &Path, video: usize, frame: usize) -> PathBuf {
    video_dir(root, video).join(format!("f{frame:04}.png"))
}

pub fn flow_path(root: &Path, video: usize, frame: usize) -> PathBuf {
    video_dir(root, video).join(format!("f{frame:04}.flo"))
}

/// Per-frame annotation records of a clip set.
pub fn annotations_of(videos: &[SyntheticVideo]) -> Vec<FrameAnnotation> {
    videos
        .iter()
        .enumerate()
        .flat_map(|(v, video)| {
            video.boxes.iter().enumerate().map(move |(t, bs)| FrameAnnotation {
                video: v,
                frame: t,
                boxes: bs.iter().zip(&video.actors).map(|(b, a)| (*b, a.class)).collect(),
            })
        })
        .collect()
}

/// Write clips as `v####/f####.png` frames, `v####/f####.flo` flows and one
/// annotation file.
pub fn write_dataset(root: &Path, videos: &[SyntheticVideo], prov: Provenance) -> Result<()> {
    for (v, video) in videos.iter().enumerate() {
        for (t, (frame, flow)) in video.frames.iter().zip(&video.flows).enumerate() {
            write_png(&frame_path(root, v, t), frame)?;
            write_flow_file(&flow_path(root, v, t), flow)?;
        }
    }
    write_file(&root.join(ANNOTATIONS_FILE), format_annotations(&annotations_of(videos), prov).as_bytes())
}

/// Read a dataset written by [`write_dataset`]. Frames, flows, boxes and
/// classes are restored exactly; each actor's `rect` is its frame-0 box, its
/// velocity the frame-0 flow inside that box and its colour the frame-0 pixel
/// at the box corner.
pub fn read_dataset(root: &Path) -> Result<(Vec<SyntheticVideo>, Provenance)> {
    let ann_path = root.join(ANNOTATIONS_FILE);
    let (records, prov) = read_records(&ann_path, parse_annotations)?;
    let mut videos: Vec<Vec<FrameAnnotation>> = Vec::new();
    for r in records {
        if r.video == videos.len() {
            videos.push(Vec::new());
        }
        let clip = videos
            .get_mut(r.video)
            .ok_or_else(|| Error::format(&ann_path, format!("video {}: records must be grouped in order", r.video)))?;
        if r.frame != clip.len() {
            return Err(Error::format(&ann_path, format!("video {} frame {}: frames must be consecutive from 0", r.video, r.frame)));
        }
        if clip.first().is_some_and(|f| f.boxes.len() != r.boxes.len()) {
            return Err(Error::format(&ann_path, format!("video {} frame {}: actor count changes", r.video, r.frame)));
        }
        clip.push(r);
    }
    let out = videos
        .iter()
        .enumerate()
        .map(|(v, clip)| {
            let frames = (0..clip.len()).map(|t| read_png(&frame_path(root, v, t))).collect::<Result<Vec<_>>>()?;
            let flows = (0..clip.len()).map(|t| read_flow_file(&flow_path(root, v, t))).collect::<Result<Vec<_>>>()?;
            for (t, (f, fl)) in frames.iter().zip(&flows).enumerate() {
                if (f.height(), f.width()) != (fl.height(), fl.width()) || (f.height(), f.width()) != (frames[0].height(), frames[0].width()) {
                    return Err(Error::format(flow_path(root, v, t), "size does not match the clip's frames"));
                }
            }
            let actors = clip[0]
                .boxes
                .iter()
                .map(|&(rect, class)| {
                    let (u, vv) = if rect.is_empty() { (0.0, 0.0) } else { flows[0].at(rect.y1 as usize, rect.x1 as usize) };
                    let px = frames[0].pixel(rect.y1.max(0) as usize, rect.x1.max(0) as usize);
                    Actor {
                        rect,
                        velocity: (u.round() as i32, vv.round() as i32),
                        color: [0, 1, 2].map(|c| (px[c] * 255.0).round() as u8),
                        class,
                    }
                })
                .collect();
            Ok(SyntheticVideo {
                frames,
                flows,
                boxes: clip.iter().map(|r| r.boxes.iter().map(|(b, _)| *b).collect()).collect(),
                actors,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((out, prov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_video_set, SceneConfig};

    const P: Provenance = Provenance { seed: 42, config_hash: 0xdead_beef_0123_4567 };

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn map_round_trip_and_layout() {
        let map = ActionnessMap::from_fn(3, 5, |r, c| (r * 5 + c) as f32 / 15.0);
        let bytes = encode_map(&map, P);
        assert_eq!(&bytes[..4], b"AMAP");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[28..32].try_into().unwrap()), 5);
        assert_eq!(bytes.len(), 32 + 4 * 15);
        let (back, prov) = decode_map(&bytes, p()).unwrap();
        assert_eq!(back, map);
        assert_eq!(prov, P);
    }

    #[test]
    fn map_rejects_bad_files() {
        let map = ActionnessMap::filled(2, 2, 0.5);
        let good = encode_map(&map, P);
        assert!(decode_map(&good[..good.len() - 1], p()).is_err());
        let mut extra = good.clone();
        extra.push(0);
        assert!(decode_map(&extra, p()).is_err());
        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(decode_map(&magic, p()).unwrap_err().to_string().contains("magic"));
        let mut version = good.clone();
        version[4] = 9;
        assert!(decode_map(&version, p()).unwrap_err().to_string().contains("version"));
        let mut out_of_range = good;
        out_of_range[32..36].copy_from_slice(&1.5f32.to_le_bytes());
        assert!(decode_map(&out_of_range, p()).is_err());
    }

    #[test]
    fn pgm_header_and_pixels() {
        let map = ActionnessMap::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        let bytes = encode_pgm(&map, P);
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.starts_with("P5\n# actionness v1 seed=42 config=deadbeef01234567\n3 1\n255\n"));
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
    }

    #[test]
    fn weights_round_trip_bitwise() {
        let spec = NetworkSpec::toy_stride4();
        let net = build_network(&spec, 9).unwrap();
        let bytes = encode_weights(&net, P);
        let (back, prov) = decode_weights(&bytes, &spec, p()).unwrap();
        assert_eq!(prov, P);
        for ((_, a), (_, b)) in net.named_kernels().zip(back.named_kernels()) {
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.weights), bits(&b.weights));
            assert_eq!(bits(&a.bias), bits(&b.bias));
        }
    }

    #[test]
    fn weights_reject_spec_mismatch_and_truncation() {
        let spec = NetworkSpec::toy_stride4();
        let bytes = encode_weights(&build_network(&spec, 1).unwrap(), P);
        let other = spec.with_input_channels(4);
        assert!(decode_weights(&bytes, &other, p()).unwrap_err().to_string().contains("spec_hash"));
        assert!(decode_weights(&bytes[..bytes.len() - 4], &spec, p()).unwrap_err().to_string().contains("truncated"));
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 4]);
        assert!(decode_weights(&extra, &spec, p()).is_err());
        assert!(decode_weights(b"NOPE", &spec, p()).is_err());
    }

    #[test]
    fn annotation_round_trip() {
        let recs = vec![
            FrameAnnotation { video: 0, frame: 0, boxes: vec![(BBox::new(1, 2, 3, 4), 1), (BBox::new(0, 0, 5, 5), 0)] },
            FrameAnnotation { video: 0, frame: 1, boxes: vec![] },
        ];
        let text = format_annotations(&recs, P);
        assert!(text.starts_with("# actionness annotations v1 seed=42 config=deadbeef01234567\n"));
        assert_eq!(text.lines().nth(1), Some("0 0 2 1 2 3 4 1 0 0 5 5 0"));
        assert_eq!(parse_annotations(&text, p()).unwrap(), (recs, P));
    }

    #[test]
    fn proposal_and_detection_round_trip() {
        let props = vec![ProposalRecord {
            video: 3,
            frame: 7,
            proposal: ScoredBox { bbox: BBox::new(2, 4, 30, 40), score: 0.123_456_79 },
        }];
        assert_eq!(parse_proposals(&format_proposals(&props, P), p()).unwrap(), (props, P));
        let dets = vec![Detection { video: 1, frame: 2, bbox: BBox::new(0, 1, 2, 3), class: 1, score: 1.0 / 3.0 }];
        assert_eq!(parse_detections(&format_detections(&dets, P), p()).unwrap(), (dets, P));
    }

    #[test]
    fn tube_round_trip() {
        let tubes = vec![
            Tube { video: 0, class: 1, start: 2, boxes: vec![BBox::new(0, 0, 4, 4), BBox::new(1, 0, 5, 4)], score: 0.75 },
            Tube { video: 1, class: 0, start: 0, boxes: vec![BBox::new(3, 3, 9, 9)], score: 0.1 },
        ];
        let text = format_tubes(&tubes, P);
        assert_eq!(text.lines().count(), 4);
        assert_eq!(parse_tubes(&text, p()).unwrap(), (tubes, P));
    }

    #[test]
    fn tube_rejects_gaps() {
        let text = format!("{}0 0 0 0 0 0 1 1 0.5\n0 0 2 0 0 0 1 1 0.5\n", header_line("tubes", P));
        assert!(parse_tubes(&text, p()).is_err());
    }

    #[test]
    fn records_report_line_numbers_and_kind() {
        let text = format!("{}0 0 1 2 3 4\n", header_line("proposals", P));
        let err = parse_proposals(&text, p()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let det = format_detections(&[], P);
        assert!(parse_proposals(&det, p()).unwrap_err().to_string().contains("kind"));
        assert!(parse_proposals("", p()).is_err());
        let v2 = "# actionness proposals v2 seed=1 config=0\n";
        assert!(parse_proposals(v2, p()).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn curve_and_metrics_round_trip() {
        let pts = vec![(0.1, 0.5), (1.0, 1.0 / 3.0)];
        assert_eq!(parse_curve(&format_curve("recall", &pts, P), p()).unwrap(), (pts, P));
        let m = vec![("frame_map".to_string(), 0.25), ("video_map".to_string(), 2.0 / 3.0)];
        let text = format_metrics(&m, P);
        assert!(text.contains("frame_map=0.25\n"));
        assert_eq!(parse_metrics(&text, p()).unwrap(), (m, P));
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SceneConfig { frames: 3, ..SceneConfig::default() };
        let videos = gen_video_set(5, 2, &cfg).unwrap();
        write_dataset(dir.path(), &videos, P).unwrap();
        let (back, prov) = read_dataset(dir.path()).unwrap();
        assert_eq!(prov, P);
        assert_eq!(back.len(), 2);
        for (a, b) in videos.iter().zip(&back) {
            assert_eq!(a.frames, b.frames);
            assert_eq!(a.flows, b.flows);
            assert_eq!(a.boxes, b.boxes);
            assert_eq!(a.actors.iter().map(|x| (x.rect, x.class, x.color)).collect::<Vec<_>>(),
                       b.actors.iter().map(|x| (x.rect, x.class, x.color)).collect::<Vec<_>>());
        }
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_map(Path::new("/nonexistent/x.amap")).unwrap_err().to_string();
        assert!(err.contains("/nonexistent/x.amap"));
    }
}
