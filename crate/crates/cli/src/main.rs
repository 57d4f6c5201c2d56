use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geomat_core::dataset::{synth_generate, Manifest, SceneImage, SceneRecord, SynthSpec};
use geomat_core::error::Error;
use geomat_core::pipeline::{
    evaluate, evaluate_scene_records, parse_features, write_difference, Report, RunConfig, SceneSettings, TrainedModel,
};
use log::info;

#[derive(Parser)]
#[command(name = "geomat", version, about = "Material recognition from image texture and surface geometry")]
struct Cli {
    /// Worker threads (0 uses every core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train dictionaries, encoders and the SVM from a manifest's training split.
    Train(TrainArgs),
    /// Classify the test split and write report tables.
    Eval(EvalArgs),
    /// Label scene images superpixel by superpixel and score them against the cloud.
    SceneEval(SceneArgs),
    /// Re-render a saved report, or compare it with a baseline.
    Report(ReportArgs),
}

#[derive(Args)]
struct OutArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON dataset spec; the built-in benchmark when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Print the spec as JSON and exit.
    #[arg(long)]
    print_spec: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, required_unless_present = "print_spec")]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated features: rfs, mr8, rfs_n, mr8_n, hsv, n3d, fv, fv_n, emb.
    #[arg(long)]
    features: Option<String>,
    /// Frontally rectify patches before texture features.
    #[arg(long)]
    rectify: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    svm_c: Option<f64>,
    /// Chi-squared kernel bandwidth; inverse mean distance when omitted.
    #[arg(long)]
    gamma: Option<f64>,
    /// Directory of per-patch embedding files for the emb feature.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Refuse unless the model was trained with exactly these features.
    #[arg(long)]
    features: Option<String>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SceneArgs {
    #[arg(long)]
    model: PathBuf,
    /// Manifest listing scenes.
    #[arg(long, conflicts_with_all = ["cloud", "image", "camera"])]
    manifest: Option<PathBuf>,
    /// Labeled PLY cloud, used with --image and --camera.
    #[arg(long, requires = "image")]
    cloud: Option<PathBuf>,
    /// Scene image; repeat for several, each with its own --camera.
    #[arg(long)]
    image: Vec<PathBuf>,
    #[arg(long)]
    camera: Vec<PathBuf>,
    /// Superpixel target per image.
    #[arg(long)]
    superpixels: Option<usize>,
    #[arg(long, default_value_t = 10.0)]
    compactness: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding a report.json from `eval`.
    #[arg(long)]
    input: PathBuf,
    /// Second report to subtract for a difference confusion matrix.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_data_error() || matches!(e, Error::DegenerateGeometry(_)) { 3 } else { 2 };
        Self { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

fn prepare_out(out: &OutArgs) -> Result<(), Failure> {
    if out.out.exists() {
        let busy = fs::read_dir(&out.out)
            .map_err(|e| Failure::from(Error::Io { path: out.out.clone(), source: e }))?
            .next()
            .is_some();
        if busy && !out.force {
            return Err(usage(format!("{} is not empty; pass --force to write into it", out.out.display())));
        }
    }
    fs::create_dir_all(&out.out).map_err(|e| Failure::from(Error::Io { path: out.out.clone(), source: e }))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("bad {what} {}: {e}", path.display())))
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let mut spec = match &args.spec {
        Some(p) => read_json::<SynthSpec>(p, "spec")?,
        None => SynthSpec::benchmark(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(|e| usage(format!("bad spec: {e}")))?;
    if args.print_spec {
        println!("{}", serde_json::to_string_pretty(&spec).expect("spec serializes"));
        return Ok(());
    }
    let out = OutArgs { out: args.out.clone().ok_or_else(|| usage("--out is required"))?, force: args.force };
    prepare_out(&out)?;
    let manifest = synth_generate(&spec, &out.out)?;
    let views: usize = manifest.surfaces.iter().map(|s| s.images.len()).sum();
    println!(
        "{} categories, {} surfaces, {} views, {} scenes written to {}",
        manifest.categories.len(),
        manifest.surfaces.len(),
        views,
        manifest.scenes.len(),
        out.out.display()
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut config = match &args.config {
        Some(p) => read_json::<RunConfig>(p, "config")?,
        None => RunConfig::default(),
    };
    if let Some(list) = &args.features {
        config.features = parse_features(list)?;
    }
    config.rectify |= args.rectify;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(c) = args.svm_c {
        config.svm.c = c;
    }
    if args.gamma.is_some() {
        config.svm.gamma = args.gamma;
    }
    if args.embeddings.is_some() {
        config.embeddings = args.embeddings.clone();
    }
    config.validate()?;
    prepare_out(&args.out)?;
    let manifest = Manifest::load(&args.manifest)?;
    let model = TrainedModel::train(&manifest, &config)?;
    model.save(&args.out.out)?;
    println!("config hash {}", config.hash());
    if let Some(acc) = model.classifier.loo_accuracy {
        println!("histogram weights {:?}, leave-one-out accuracy {acc:.4}", model.classifier.weights);
    }
    println!("wrote {} to {}", model.file_names().join(", "), args.out.out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let model = TrainedModel::load(&args.model)?;
    if let Some(list) = &args.features {
        model.require_features(&parse_features(list)?)?;
    }
    prepare_out(&args.out)?;
    let manifest = Manifest::load(&args.manifest)?;
    let report = evaluate(&model, &manifest)?;
    report.write(&args.out.out)?;
    print_report(&report);
    Ok(())
}

fn print_report(report: &Report) {
    for (name, acc) in report.categories.iter().zip(&report.per_class) {
        match acc {
            Some(a) => println!("{name:>24}  {a:.4}"),
            None => println!("{name:>24}  -"),
        }
    }
    println!("mean accuracy {:.4} over {} patches", report.mean_accuracy, report.outcomes.len());
}

fn scene_eval(args: SceneArgs) -> Result<(), Failure> {
    let model = TrainedModel::load(&args.model)?;
    let (base, scenes) = match (&args.manifest, &args.cloud) {
        (Some(m), _) => {
            let manifest = Manifest::load(m)?;
            if manifest.scenes.is_empty() {
                return Err(Failure::from(Error::MissingData(format!("{} lists no scenes", m.display()))));
            }
            (manifest.base_dir().to_path_buf(), manifest.scenes)
        }
        (None, Some(cloud)) => {
            if args.image.len() != args.camera.len() {
                return Err(usage("give one --camera per --image"));
            }
            let path = |p: &Path| p.to_string_lossy().into_owned();
            let record = SceneRecord {
                name: cloud.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scene".into()),
                cloud: path(cloud),
                images: args
                    .image
                    .iter()
                    .zip(&args.camera)
                    .map(|(i, c)| SceneImage { image: path(i), camera: path(c) })
                    .collect(),
                superpixels: args.superpixels.unwrap_or(300),
            };
            (PathBuf::from("."), vec![record])
        }
        (None, None) => return Err(usage("give --manifest, or --cloud with --image and --camera")),
    };
    prepare_out(&args.out)?;
    let settings = SceneSettings { superpixels: args.superpixels, compactness: args.compactness };
    let result = evaluate_scene_records(&model, &base, &scenes, &settings)?;
    result.write(&args.out.out)?;
    for (name, acc) in result.categories.iter().zip(&result.accuracy.per_class) {
        if let Some(a) = acc {
            println!("{name:>24}  {a:.4}");
        }
    }
    println!(
        "per-class mean {:.4}, per-pixel {:.4} over {} labeled pixels",
        result.accuracy.class_mean,
        result.accuracy.pixel_mean,
        result.tally.pixels()
    );
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), Failure> {
    let load = |dir: &Path| -> Result<Report, Failure> {
        let path = if dir.is_dir() { dir.join("report.json") } else { dir.to_path_buf() };
        Ok(Report::load_json(&path)?)
    };
    let main = load(&args.input)?;
    let baseline = args.baseline.as_deref().map(load).transpose()?;
    prepare_out(&args.out)?;
    main.write(&args.out.out)?;
    print_report(&main);
    if let Some(b) = baseline {
        write_difference(&main, &b, &args.out.out)?;
        println!("mean accuracy difference {:+.4}", main.mean_accuracy - b.mean_accuracy);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    info!("geomat {}", env!("CARGO_PKG_VERSION"));
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::SceneEval(a) => scene_eval(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
