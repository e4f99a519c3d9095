use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::warn;

use foodcal::dataset::{
    apply_nutrition, default_params, load_annotations, load_ground_truth, load_nutrition, load_params,
    write_params_csv, AnnotationFormat, AnnotationSet, BoundingBox, FoodClass, ParamTable, Taxonomy,
};
use foodcal::evaluation::{emit_report, render_table, Interpolation};
use foodcal::measurement::DEFAULT_COIN_DIAMETER_CM;
use foodcal::pipeline::{
    load_calories_csv, run_calibrate, run_detect_eval, run_estimate, run_evaluate, write_calories_csv,
    write_detection_report, write_fit_report, write_issues_csv, write_volumes_csv, FileImages, Issue,
    PipelineConfig, Severity,
};
use foodcal::segmentation::{grabcut, largest_component, Mask, Raster, SegConfig};
use foodcal::synth::{render, RenderOptions, ShapeKind, ShapeSpec};

const EXIT_PARTIAL: u8 = 2;

#[derive(Parser)]
#[command(name = "foodcal", version, about = "Food volume, mass and calorie estimation from top/side image pairs")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Per-food parameter CSV (defaults to the built-in table).
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    /// Energy density CSV (`food,energy_kcal_per_g`).
    #[arg(long, global = true)]
    nutrition: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = DEFAULT_COIN_DIAMETER_CM)]
    coin_diameter_cm: f64,
    /// Root seed for all randomised steps.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long = "seg.max-side", global = true)]
    seg_max_side: Option<u32>,
    #[arg(long = "seg.gamma", global = true)]
    seg_gamma: Option<f64>,
    #[arg(long = "seg.components", global = true)]
    seg_components: Option<usize>,
    #[arg(long = "seg.iterations", global = true)]
    seg_iterations: Option<usize>,
    /// Overrides `--seed` for segmentation only.
    #[arg(long = "seg.seed", global = true)]
    seg_seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate volume, mass and calories for annotated scenes.
    Estimate {
        /// Annotation CSV or VOC XML files, or directories of them.
        #[arg(required = true)]
        annotations: Vec<PathBuf>,
    },
    /// Fit per-food beta and rho against ground truth.
    Calibrate {
        #[arg(required = true)]
        annotations: Vec<PathBuf>,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Compare estimates with ground truth and print the per-food report.
    Evaluate {
        /// `calories.csv` from `estimate`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Segment one box of one image and write a full-size mask PNG.
    Segment {
        image: PathBuf,
        /// `x_min,y_min,x_max,y_max` with exclusive max.
        #[arg(long = "box")]
        bbox: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Render a synthetic scene directory.
    Synth {
        /// e.g. `sphere:r=1.5`, `cylinder:r=1.25,h=2.5`, `ellipsoid:a=2,b=1.5,c=1`,
        /// `box:w=3,d=2,h=1`, `blob:r=2,h=3`.
        #[arg(long)]
        shape: String,
        #[arg(long, default_value = "synthetic")]
        scene_id: String,
        #[arg(long, default_value = "apple")]
        food: String,
        /// Pixels per centimetre.
        #[arg(long, default_value_t = 40.0)]
        scale: f64,
        /// Gaussian pixel noise sigma.
        #[arg(long)]
        noise: Option<f64>,
        /// Density (g/cm^3) used for the truth mass.
        #[arg(long, default_value_t = 1.0)]
        density: f64,
    },
    /// Per-class AP of predicted boxes against ground-truth boxes.
    DetectEval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long)]
        eleven_point: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let g = &cli.global;
    match &cli.command {
        Command::Estimate { annotations } => estimate(g, annotations),
        Command::Calibrate { annotations, truth } => calibrate(g, annotations, truth),
        Command::Evaluate { results, truth } => evaluate(g, results, truth),
        Command::Segment { image, bbox, output } => segment(g, image, bbox, output),
        Command::Synth {
            shape,
            scene_id,
            food,
            scale,
            noise,
            density,
        } => synth(g, shape, scene_id, food, *scale, *noise, *density),
        Command::DetectEval {
            predictions,
            truth,
            iou,
            eleven_point,
        } => {
            let interp = if *eleven_point {
                Interpolation::ElevenPoint
            } else {
                Interpolation::AllPoints
            };
            detect_eval(g, predictions, truth, *iou, interp)
        }
    }
}

fn seg_config(g: &Global) -> SegConfig {
    let d = SegConfig::default();
    SegConfig {
        max_side: g.seg_max_side.unwrap_or(d.max_side),
        gamma: g.seg_gamma.unwrap_or(d.gamma),
        components: g.seg_components.unwrap_or(d.components),
        iterations: g.seg_iterations.unwrap_or(d.iterations),
        seed: g.seg_seed.unwrap_or(g.seed),
        ..d
    }
}

fn param_table(g: &Global) -> Result<(ParamTable, bool)> {
    let mut table = match &g.params {
        Some(p) => load_params(p)?,
        None => default_params(),
    };
    let with_energy = match &g.nutrition {
        Some(path) => {
            let nutrition = load_nutrition(path)?;
            for food in apply_nutrition(&mut table, &nutrition) {
                warn!("no energy density for `{food}` in {}", path.display());
            }
            true
        }
        None => false,
    };
    Ok((table, with_energy))
}

fn pipeline_config(g: &Global) -> Result<PipelineConfig> {
    if g.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    if !(g.coin_diameter_cm.is_finite() && g.coin_diameter_cm > 0.0) {
        bail!("--coin-diameter-cm must be positive");
    }
    let (params, require_energy) = param_table(g)?;
    Ok(PipelineConfig {
        params,
        coin_diameter_cm: g.coin_diameter_cm,
        seg: seg_config(g),
        jobs: g.jobs,
        require_energy,
    })
}

fn annotation_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .with_context(|| format!("reading {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && AnnotationFormat::from_path(p).is_some())
                .collect();
            found.sort();
            if found.is_empty() {
                bail!("no annotation files in {}", input.display());
            }
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    Ok(files)
}

fn load_all(inputs: &[PathBuf]) -> Result<AnnotationSet> {
    let taxonomy = Taxonomy::open();
    let mut set = AnnotationSet::default();
    for path in annotation_files(inputs)? {
        let format = AnnotationFormat::from_path(&path)
            .with_context(|| format!("{}: unknown annotation format (expected .csv or .xml)", path.display()))?;
        set.merge(load_annotations(&path, format, &taxonomy)?)?;
    }
    for u in &set.unknown_labels {
        warn!("{}:{}: unknown label `{}`", u.file.display(), u.line, u.label);
    }
    Ok(set)
}

fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn out_file(dir: &Path, name: &str) -> Result<fs::File> {
    let path = dir.join(name);
    fs::File::create(&path).with_context(|| format!("creating {}", path.display()))
}

fn report_issues(issues: &[Issue]) -> ExitCode {
    let errors = issues.iter().filter(|i| i.severity() == Severity::Error).count();
    for i in issues {
        let what = i.food.as_ref().map(|f| format!(" `{f}`")).unwrap_or_default();
        match i.severity() {
            Severity::Error => eprintln!("error: {}{what}: {}", i.scene_id, i.message),
            Severity::Warning => warn!("{}{what}: {}", i.scene_id, i.message),
        }
    }
    if errors > 0 {
        eprintln!("{errors} per-scene error(s); see issues.csv");
        ExitCode::from(EXIT_PARTIAL)
    } else {
        ExitCode::SUCCESS
    }
}

fn estimate(g: &Global, inputs: &[PathBuf]) -> Result<ExitCode> {
    let config = pipeline_config(g)?;
    let set = load_all(inputs)?;
    let out = run_estimate(&config, &set.pairs(), &FileImages)?;
    create_out_dir(&g.out_dir)?;
    write_volumes_csv(&out.estimates, out_file(&g.out_dir, "volumes.csv")?)?;
    write_calories_csv(&out.estimates, out_file(&g.out_dir, "calories.csv")?)?;
    write_issues_csv(&out.issues, out_file(&g.out_dir, "issues.csv")?)?;
    println!("{} estimate(s) written to {}", out.estimates.len(), g.out_dir.display());
    Ok(report_issues(&out.issues))
}

fn calibrate(g: &Global, inputs: &[PathBuf], truth: &Path) -> Result<ExitCode> {
    let config = pipeline_config(g)?;
    let set = load_all(inputs)?;
    let truth = load_ground_truth(truth)?;
    let out = run_calibrate(&config, &set.pairs(), &FileImages, &truth)?;
    for w in &out.warnings {
        warn!("{w}");
    }
    create_out_dir(&g.out_dir)?;
    write_params_csv(&out.params, out_file(&g.out_dir, "params.csv")?)?;
    write_fit_report(&out.fits, out_file(&g.out_dir, "fit_report.csv")?)?;
    write_issues_csv(&out.raw.issues, out_file(&g.out_dir, "issues.csv")?)?;
    println!(
        "fitted {} food(s); parameters written to {}",
        out.fits.iter().filter(|f| f.n > 0).count(),
        g.out_dir.join("params.csv").display()
    );
    Ok(report_issues(&out.raw.issues))
}

fn evaluate(g: &Global, results: &Path, truth: &Path) -> Result<ExitCode> {
    let records = load_calories_csv(results)?;
    let truth = load_ground_truth(truth)?;
    let out = run_evaluate(&records, &truth)?;
    for w in &out.warnings {
        warn!("{w}");
    }
    create_out_dir(&g.out_dir)?;
    emit_report(&out.summaries, out_file(&g.out_dir, "report.csv")?)?;
    print!("{}", render_table(&out.summaries));
    Ok(ExitCode::SUCCESS)
}

fn parse_box(text: &str) -> Result<BoundingBox> {
    let v: Vec<u32> = text
        .split(',')
        .map(|s| s.trim().parse::<u32>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad box `{text}`"))?;
    let [x0, y0, x1, y1] = v[..] else {
        bail!("box needs four integers, got `{text}`");
    };
    Ok(BoundingBox::new(x0, y0, x1, y1)?)
}

fn segment(g: &Global, image: &Path, bbox: &str, output: &Path) -> Result<ExitCode> {
    let raster = Raster::load(image)?;
    let bbox = parse_box(bbox)?;
    let local = largest_component(&grabcut(&raster, &bbox, &seg_config(g))?);
    let mask = Mask::from_fn(raster.width(), raster.height(), |x, y| {
        bbox.contains(x, y) && local.get(x - bbox.x_min, y - bbox.y_min)
    });
    mask.save_png(output)?;
    println!("{} foreground pixel(s) written to {}", mask.count(), output.display());
    Ok(ExitCode::SUCCESS)
}

fn synth(
    g: &Global,
    shape: &str,
    scene_id: &str,
    food: &str,
    scale: f64,
    noise: Option<f64>,
    density: f64,
) -> Result<ExitCode> {
    let spec = ShapeSpec::new(shape.parse::<ShapeKind>()?);
    let opts = RenderOptions {
        scale,
        noise_sigma: noise,
        seed: g.seed,
        coin_diameter_cm: g.coin_diameter_cm,
        ..RenderOptions::default()
    };
    let scene = render(&spec, &opts)?;
    let food = FoodClass::new(food)?;
    scene.write_dir(&g.out_dir, scene_id, &food, density)?;
    let mut stdout = io::stdout().lock();
    writeln!(
        stdout,
        "scene `{scene_id}` written to {} (true volume {:.4} cm^3)",
        g.out_dir.display(),
        scene.true_volume
    )?;
    Ok(ExitCode::SUCCESS)
}

fn detect_eval(g: &Global, predictions: &Path, truth: &Path, iou: f64, interp: Interpolation) -> Result<ExitCode> {
    if !(iou > 0.0 && iou <= 1.0) {
        bail!("--iou must lie in (0, 1]");
    }
    let preds = load_all(&[predictions.to_path_buf()])?;
    let gts = load_all(&[truth.to_path_buf()])?;
    let report = run_detect_eval(&preds.scenes, &gts.scenes, iou, interp);
    for w in &report.warnings {
        warn!("{w}");
    }
    create_out_dir(&g.out_dir)?;
    write_detection_report(&report, out_file(&g.out_dir, "detection_ap.csv")?)?;
    for c in &report.classes {
        println!("{:<24} {:>6.2}%  ({} gt, {} pred)", c.label, 100.0 * c.ap, c.n_ground_truth, c.n_predictions);
    }
    println!("{:<24} {:>6.2}%", "mAP", 100.0 * report.map);
    Ok(ExitCode::SUCCESS)
}
