use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ttogm::cleaner::{clean_map_with, CleanerKind};
use ttogm::datagen::{builtin_floorplans, generate_dataset, load_floorplan_dir, DatagenConfig};
use ttogm::eval::{benchmark_pipeline, iou, Alignment2D, IouClass};
use ttogm::gridmap::{read_map, write_map};
use ttogm::pipeline::{list_scans, load_scan, run_directory, PipelineConfig};
use ttogm::{Error, Result};

#[derive(Parser)]
#[command(name = "ttogm", version, about = "Occupancy grid mapping from 3D LiDAR scans")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Map a directory of scans (.pcd, .csv, .xyzi, processed in name order).
    Map(MapArgs),
    /// Clean an existing map offline.
    Clean(CleanArgs),
    /// Generate (erroneous, clean) map pairs.
    Datagen(DatagenArgs),
    /// IoU of a map against a ground truth raster.
    Eval(EvalArgs),
    /// Per-stage latency of the mapping pipeline on a scan directory.
    Bench(MapArgs),
}

#[derive(Args)]
struct PipelineArgs {
    /// TOML pipeline configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// none, identity, morph or model:<path>
    #[arg(long)]
    cleaner: Option<String>,
    /// Clean a snapshot every N scans (0: only at the end).
    #[arg(long)]
    every_n: Option<usize>,
}

impl PipelineArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(c) = &self.cleaner {
            cfg.cleaner.kind = c.clone();
        }
        if let Some(n) = self.every_n {
            cfg.cleaner.every_n = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct MapArgs {
    /// Scan directory; falls back to `io.input` of the config.
    input: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Output directory; falls back to `io.output`, then `./ttogm-out`.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl MapArgs {
    fn resolve(&self) -> Result<(PipelineConfig, PathBuf, PathBuf)> {
        let cfg = self.pipeline.load()?;
        let input = self
            .input
            .clone()
            .or_else(|| cfg.io.input.clone())
            .ok_or_else(|| Error::InvalidConfig("no input directory given".into()))?;
        let output = self
            .output
            .clone()
            .or_else(|| cfg.io.output.clone())
            .unwrap_or_else(|| PathBuf::from("ttogm-out"));
        Ok((cfg, input, output))
    }
}

#[derive(Args)]
struct CleanArgs {
    /// Map PGM with its metadata sidecar.
    map: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct DatagenArgs {
    /// Number of pairs.
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Directory of PNG/PGM floorplans; the built-in fixtures when omitted.
    #[arg(long)]
    floorplans: Option<PathBuf>,
    /// TOML datagen configuration (error ranges, renderer, planner).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Map PGM with its metadata sidecar.
    map: PathBuf,
    /// Ground truth PGM with its metadata sidecar.
    #[arg(long)]
    truth: PathBuf,
    /// occupied, unoccupied or both
    #[arg(long, default_value = "both")]
    class: String,
    /// Alignment p_map = scale * R(yaw) * p_truth + (tx, ty); yaw in degrees.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    tx: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    ty: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    yaw: f64,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Also write the scores as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn cmd_map(args: &MapArgs) -> Result<()> {
    let (cfg, input, output) = args.resolve()?;
    let result = run_directory(&input, &cfg)?;
    result.write(&output, &cfg.filtration)?;
    println!(
        "mapped {} scans into {} ({} x {} cells)",
        result.trajectory.len(),
        output.display(),
        result.map.width(),
        result.map.height()
    );
    Ok(())
}

fn cmd_clean(args: &CleanArgs) -> Result<()> {
    let cfg = args.pipeline.load()?;
    let kind = cfg.cleaner.parsed_kind()?.unwrap_or(CleanerKind::Identity);
    let (map, _) = read_map(&args.map)?;
    let cleaned = clean_map_with(&map, &kind, &cfg.cleaner.tiling(), &cfg.filtration)?;
    fs::create_dir_all(&args.output).map_err(|e| io_err(&args.output, e))?;
    let name = args.map.file_name().unwrap_or_else(|| "map.pgm".as_ref());
    let out = args.output.join(name);
    write_map(&out, &cleaned, Some(&cfg.filtration))?;
    println!("cleaned {} with {} into {}", args.map.display(), kind.label(), out.display());
    Ok(())
}

fn cmd_datagen(args: &DatagenArgs) -> Result<()> {
    let cfg: DatagenConfig = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?
        }
        None => DatagenConfig::default(),
    };
    cfg.validate()?;
    let plans = match &args.floorplans {
        Some(dir) => load_floorplan_dir(dir, cfg.resolution())?,
        None => builtin_floorplans(cfg.resolution()),
    };
    let pairs = generate_dataset(&plans, args.count, args.seed, &cfg, &args.output)?;
    println!("wrote {} pairs to {}", pairs.len(), args.output.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let classes = match args.class.as_str() {
        "both" => vec![IouClass::Occupied, IouClass::Unoccupied],
        s => vec![s.parse::<IouClass>()?],
    };
    let align = Alignment2D {
        tx: args.tx,
        ty: args.ty,
        yaw: args.yaw,
        scale: args.scale,
    };
    align.validate()?;
    let (map, _) = read_map(&args.map)?;
    let (truth, _) = read_map(&args.truth)?;
    let mut csv = String::from("class,iou\n");
    for class in classes {
        let v = iou(&map, &truth, &align, class)?;
        println!("{class} IoU {v:.6}");
        csv.push_str(&format!("{class},{v}\n"));
    }
    if let Some(p) = &args.csv {
        fs::write(p, csv).map_err(|e| io_err(p, e))?;
    }
    Ok(())
}

fn cmd_bench(args: &MapArgs) -> Result<()> {
    let (cfg, input, output) = args.resolve()?;
    let clouds = list_scans(&input)?
        .iter()
        .enumerate()
        .map(|(i, p)| load_scan(p, i as u64, &cfg))
        .collect::<Result<Vec<_>>>()?;
    let report = benchmark_pipeline(&clouds, &cfg)?;
    print!("{}", report.to_table());
    fs::create_dir_all(&output).map_err(|e| io_err(&output, e))?;
    let path = output.join("latency.csv");
    fs::write(&path, report.to_csv()).map_err(|e| io_err(&path, e))?;
    Ok(())
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    if source.kind() == std::io::ErrorKind::NotFound {
        Error::MissingFile(path.to_path_buf())
    } else {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Map(a) => cmd_map(a),
        Command::Clean(a) => cmd_clean(a),
        Command::Datagen(a) => cmd_datagen(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
