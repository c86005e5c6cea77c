use std::path::{Path, PathBuf};
use std::process::ExitCode;

use actionness::io::{self, Provenance};
use actionness::pipeline::PipelineConfig;
use actionness::render::{self, Palette};
use actionness::stages::{self, EvalInputs, Layout, MapKind};
use actionness::{BBox, Error, Exec};
use clap::{ArgGroup, Args, CommandFactory, Parser, Subcommand};

/// Two-stream actionness estimation, proposals, detection and evaluation.
#[derive(Debug, Parser)]
#[command(name = "actionness", version)]
struct Cli {
    /// Run everything on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Pipeline configuration (TOML); built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArg {
    fn load(&self) -> actionness::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the default configuration.
    Config,
    /// Generate training and test clips (frames, flow, annotations).
    Synth {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train the actionness networks and proposal classifiers on a dataset.
    TrainToy {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Dataset directory (with annotations.txt).
        #[arg(long)]
        data: PathBuf,
        /// Directory for the weight files.
        #[arg(long, short)]
        out: PathBuf,
        /// Directory for loss curves (defaults to the weight directory).
        #[arg(long)]
        losses: Option<PathBuf>,
    },
    /// Actionness maps for every frame of a dataset.
    Estimate {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Maps to write.
        #[arg(long = "kind", value_delimiter = ',', default_values = ["hybrid"])]
        kinds: Vec<MapKind>,
        /// Pyramid scales, overriding the configuration.
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<f64>>,
    },
    /// Action proposals from actionness maps.
    Propose {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        maps: PathBuf,
        #[arg(long, default_value = "hybrid")]
        kind: MapKind,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Classify proposals into actions.
    Detect {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        proposals: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Link detections into action tubes.
    Link {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Score maps, proposals, detections and tubes against a dataset.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        maps: Option<PathBuf>,
        #[arg(long)]
        proposals: Option<PathBuf>,
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        tubes: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Render a map or flow magnitude as an image, optionally over a frame
    /// and with boxes. `.pgm` output writes the raw map in 8-bit gray.
    Render(RenderArgs),
    /// Every stage end to end under one directory.
    Run {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Run directory (defaults to the configuration's `paths.output`).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").required(true).multiple(true).args(["map", "flow", "frame"])))]
struct RenderArgs {
    /// Actionness map (.amap).
    #[arg(long, conflicts_with = "flow")]
    map: Option<PathBuf>,
    /// Flow file (.flo); rendered as normalised magnitude.
    #[arg(long)]
    flow: Option<PathBuf>,
    /// Frame (.png) to draw on.
    #[arg(long)]
    frame: Option<PathBuf>,
    /// Proposal, detection, tube or annotation file.
    #[arg(long, requires = "video")]
    boxes: Option<PathBuf>,
    #[arg(long, requires = "frame_index")]
    video: Option<usize>,
    #[arg(long)]
    frame_index: Option<usize>,
    /// Draw at most this many boxes (in file order).
    #[arg(long)]
    top: Option<usize>,
    #[arg(long, default_value = "heat")]
    palette: Palette,
    /// Heatmap weight when blending over a frame.
    #[arg(long, default_value_t = 0.5)]
    alpha: f32,
    #[arg(long, short)]
    out: PathBuf,
}

fn exec(cli: &Cli) -> Exec {
    if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

fn print_entries(entries: &[(String, f64)]) {
    for (k, v) in entries {
        println!("{k}={v}");
    }
}

fn boxes_for(path: &Path, video: usize, frame: usize) -> actionness::Result<Vec<BBox>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    let kind = text.lines().next().and_then(|l| l.split_whitespace().nth(2)).unwrap_or("");
    Ok(match kind {
        "proposals" => io::parse_proposals(&text, path)?
            .0
            .into_iter()
            .filter(|r| (r.video, r.frame) == (video, frame))
            .map(|r| r.proposal.bbox)
            .collect(),
        "detections" => io::parse_detections(&text, path)?
            .0
            .into_iter()
            .filter(|d| (d.video, d.frame) == (video, frame))
            .map(|d| d.bbox)
            .collect(),
        "tubes" => io::parse_tubes(&text, path)?
            .0
            .into_iter()
            .filter(|t| t.video == video)
            .filter_map(|t| t.box_at(frame).copied())
            .collect(),
        "annotations" => io::parse_annotations(&text, path)?
            .0
            .into_iter()
            .filter(|a| (a.video, a.frame) == (video, frame))
            .flat_map(|a| a.boxes.into_iter().map(|(b, _)| b))
            .collect(),
        other => return Err(Error::Format { path: path.into(), message: format!("line 1: cannot draw boxes from a {other:?} file") }),
    })
}

fn render(args: &RenderArgs) -> actionness::Result<()> {
    let frame = args.frame.as_deref().map(io::read_png).transpose()?;
    let (map, prov) = match (&args.map, &args.flow) {
        (Some(p), _) => {
            let (m, prov) = io::read_map(p)?;
            (Some(m), prov)
        }
        (None, Some(p)) => {
            let flow = actionness::flow::read_flow_file(p)?;
            let mag = flow.magnitude();
            let max = mag.iter().cloned().fold(0.0f32, f32::max);
            let scaled = mag.iter().map(|&m| if max > 0.0 { m / max } else { 0.0 }).collect();
            (Some(actionness::ActionnessMap::new(flow.height(), flow.width(), scaled)?), Provenance::default())
        }
        (None, None) => (None, Provenance::default()),
    };
    if args.out.extension().is_some_and(|e| e == "pgm") {
        let map = map.expect("checked when parsing");
        return io::write_pgm(&args.out, &map, prov);
    }
    let mut image = match (frame, &map) {
        (Some(f), Some(m)) => render::blend(&f, m, args.alpha, args.palette)?,
        (Some(f), None) => f,
        (None, Some(m)) => render::heatmap(m, args.palette),
        (None, None) => unreachable!("clap requires an input"),
    };
    if let (Some(path), Some(v)) = (&args.boxes, args.video) {
        let mut boxes = boxes_for(path, v, args.frame_index.unwrap_or(0))?;
        if let Some(n) = args.top {
            boxes.truncate(n);
        }
        image = render::draw_boxes(&image, &boxes, [0.0, 1.0, 0.0])?;
    }
    io::write_png(&args.out, &image)
}

fn run(cli: &Cli) -> actionness::Result<()> {
    let ex = exec(cli);
    match &cli.command {
        Command::Config => print!("{}", PipelineConfig::default().to_toml()),
        Command::Synth { cfg, out } => stages::synth(&cfg.load()?, out)?,
        Command::TrainToy { cfg, data, out, losses } => {
            let cfg = cfg.load()?;
            let (_, reports) = stages::train(&cfg, data, out, losses.as_deref().unwrap_or(out), ex)?;
            for (name, r) in stages::STREAMS.iter().zip([&reports.appearance, &reports.motion, &reports.spatial, &reports.temporal]) {
                if let Some(l) = r.losses.last() {
                    println!("{name}_final_loss={l}");
                }
            }
        }
        Command::Estimate { cfg, weights, data, out, kinds, scales } => {
            let mut cfg = cfg.load()?;
            if let Some(s) = scales {
                cfg.estimate.scales = s.clone();
                cfg.validate()?;
            }
            let models = stages::load_models(&cfg, weights)?;
            let n = stages::estimate(&cfg, &models, data, out, kinds, ex)?;
            log::info!("wrote maps for {n} frames");
        }
        Command::Propose { cfg, maps, kind, out } => {
            let n = stages::propose(&cfg.load()?, maps, *kind, out, ex)?.len();
            log::info!("wrote {n} proposals");
        }
        Command::Detect { cfg, weights, data, proposals, out } => {
            let cfg = cfg.load()?;
            let models = stages::load_models(&cfg, weights)?;
            let n = stages::detect(&cfg, &models, data, proposals, out, ex)?.len();
            log::info!("wrote {n} detections");
        }
        Command::Link { cfg, detections, out } => {
            let n = stages::link(&cfg.load()?, detections, out)?.len();
            log::info!("wrote {n} tubes");
        }
        Command::Evaluate { cfg, data, maps, proposals, detections, tubes, out } => {
            let inputs = EvalInputs {
                maps: maps.clone(),
                proposals: proposals.clone(),
                detections: detections.clone(),
                tubes: tubes.clone(),
            };
            print_entries(&stages::evaluate(&cfg.load()?, data, &inputs, out)?);
        }
        Command::Render(args) => render(args)?,
        Command::Run { cfg, out } => {
            let cfg = cfg.load()?;
            let root = out.clone().unwrap_or_else(|| cfg.paths.output.clone());
            print_entries(&stages::run_all(&cfg, &Layout::new(root), ex)?)
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Command::Render(r) = &cli.command {
        if r.out.extension().is_some_and(|e| e == "pgm") && r.map.is_none() && r.flow.is_none() {
            let _ = Cli::command()
                .error(clap::error::ErrorKind::MissingRequiredArgument, "PGM output needs --map or --flow")
                .print();
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
