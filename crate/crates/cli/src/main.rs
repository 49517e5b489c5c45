use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use handfit::camera::{CameraSpec, Intrinsics, WeakCamera};
use handfit::gradcheck::{coordinate_name, run_gradcheck, GradcheckConfig};
use handfit::metrics::MetricsConfig;
use handfit::model::{load_model, make_toy_model, save_model, write_obj, HandModel, HandParams};
use handfit::observations::load_observations;
use handfit::pipeline::{evaluate_dirs, fit_dataset};
use handfit::synth::{generate_dataset, load_params, Manifest, ModelDigest, SynthConfig};
use handfit::tailor::{tailor_fit, FitConfig, FitMode};

const TOY_SEED: u64 = 1;
const TOY_VERTICES: usize = 512;

#[derive(Parser)]
#[command(name = "handfit", version, about = "Fit a parametric hand mesh to 2D keypoints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArg {
    /// Model JSON; the built-in toy hand when unset.
    #[arg(long, env = "HANDFIT_MODEL")]
    model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Refine pose and shape against one keypoint file or a whole dataset.
    Fit(FitArgs),
    /// Generate a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Compare analytic energy gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Write the model as JSON.
    ExportModel(ExportModelArgs),
    /// Write the posed model as an OBJ mesh.
    ExportMesh(ExportMeshArgs),
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, required_unless_present = "dataset", conflicts_with = "dataset")]
    keypoints: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArg,
    /// Intrinsics JSON (fx, fy, cx, cy).
    #[arg(long, conflicts_with = "weak")]
    camera: Option<PathBuf>,
    /// Weak-perspective mode; no camera needed.
    #[arg(long)]
    weak: bool,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long, default_value_t = 0.003)]
    lr: f64,
    #[arg(long, conflicts_with = "dataset")]
    out_mesh: Option<PathBuf>,
    #[arg(long, conflicts_with = "dataset")]
    report: Option<PathBuf>,
    /// Initial parameters; identity pose and mean shape when unset.
    #[arg(long, conflicts_with = "dataset")]
    init: Option<PathBuf>,
    /// Synthetic dataset directory; fits every case.
    #[arg(long, requires = "out_dir")]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// Synthesis config or an existing dataset manifest.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    model: ModelArg,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred_dir: PathBuf,
    #[arg(long)]
    gt_dir: PathBuf,
    /// Metrics config JSON; meters with default ranges when unset.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// JSON report path; a CSV is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Prediction files are `<case>.<suffix>.json`.
    #[arg(long, default_value = "fit")]
    suffix: String,
    #[command(flatten)]
    model: ModelArg,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    model: ModelArg,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct ExportModelArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = TOY_SEED)]
    seed: u64,
    #[arg(long, default_value_t = TOY_VERTICES)]
    vertices: usize,
}

#[derive(Args)]
struct ExportMeshArgs {
    #[arg(long)]
    out: PathBuf,
    /// Parameters (or a fit report); rest pose when unset.
    #[arg(long)]
    params: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArg,
}

enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<handfit::Error> for Failure {
    fn from(e: handfit::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

fn write_file(path: &Path, text: &str) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn model(arg: &ModelArg) -> Result<HandModel, Failure> {
    Ok(match &arg.model {
        Some(path) => load_model(path)?,
        None => make_toy_model(TOY_SEED, TOY_VERTICES)?,
    })
}

fn obj_text(mesh: &handfit::model::Mesh) -> String {
    let mut buf = Vec::new();
    write_obj(mesh, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("OBJ is ASCII")
}

fn fit(args: FitArgs) -> Outcome {
    let mode = if args.weak { FitMode::Weak } else { FitMode::Perspective };
    let cfg = FitConfig {
        mode,
        iterations: args.iters,
        learning_rate: args.lr,
        ..FitConfig::default()
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let model = model(&args.model)?;

    if let Some(dataset) = &args.dataset {
        let out_dir = args.out_dir.as_ref().expect("clap enforces --out-dir");
        let reports = fit_dataset(&model, dataset, out_dir, &cfg, args.jobs)?;
        let mean = reports.iter().map(|r| r.final_energy).sum::<f64>() / reports.len().max(1) as f64;
        println!("fitted={} mean_final_energy={mean:e}", reports.len());
        return Ok(());
    }

    let camera = match (&args.camera, mode) {
        (Some(path), FitMode::Perspective) => CameraSpec::Perspective(Intrinsics::load(path)?),
        (None, FitMode::Perspective) => {
            return Err(Failure::Usage(
                "perspective fitting needs --camera (or pass --weak)".into(),
            ))
        }
        (_, FitMode::Weak) => CameraSpec::Weak(WeakCamera { s: 1.0, t: [0.0, 0.0] }),
    };
    let keypoints = args.keypoints.as_ref().expect("clap enforces --keypoints");
    let obs = load_observations(keypoints)?;
    let init = match &args.init {
        Some(path) => load_params(path)?,
        None => HandParams::default(),
    };
    let result = tailor_fit(&model, &init, &obs, &camera, &cfg)?;
    if let Some(path) = &args.out_mesh {
        write_file(path, &obj_text(&result.mesh(&model)?))?;
    }
    let report = result.report();
    if let Some(path) = &args.report {
        write_file(path, &report.to_json())?;
    }
    println!(
        "mode={} s_star={:e} final_energy={:e} elapsed_ms={:.3}",
        match mode {
            FitMode::Perspective => "perspective",
            FitMode::Weak => "weak",
        },
        report.s_star,
        report.final_energy,
        result.elapsed.as_secs_f64() * 1e3
    );
    Ok(())
}

fn synth(args: SynthArgs) -> Outcome {
    let model = model(&args.model)?;
    let mut cfg = SynthConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let text =
        fs::read_to_string(&args.config).map_err(|e| Failure::Data(format!("{}: {e}", args.config.display())))?;
    if let Ok(previous) = serde_json::from_str::<Manifest>(&text) {
        if previous.model != ModelDigest::of(&model) {
            return Err(Failure::Data(format!(
                "manifest {} was generated with a different model ({})",
                args.config.display(),
                previous.model.sha256
            )));
        }
    }
    let manifest = generate_dataset(&cfg, &model, &args.out_dir, args.jobs)?;
    println!("cases={} digest={}", cfg.sample_count, manifest.digest);
    Ok(())
}

fn eval(args: EvalArgs) -> Outcome {
    let model = model(&args.model)?;
    let cfg = match &args.metrics {
        Some(path) => MetricsConfig::load(path)?,
        None => MetricsConfig::new(1000.0),
    };
    let report = evaluate_dirs(&model, &args.pred_dir, &args.gt_dir, &args.suffix, &cfg, args.jobs)?;
    write_file(&args.out, &report.to_json())?;
    write_file(&args.out.with_extension("csv"), &report.to_csv())?;
    print!("{}", report.to_csv());
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Outcome {
    let model = model(&args.model)?;
    let cfg = GradcheckConfig {
        eps: args.eps,
        tol: args.tol,
        trials: args.trials,
        seed: args.seed,
        jobs: args.jobs,
        ..GradcheckConfig::default()
    };
    let report = run_gradcheck(&model, &cfg).map_err(|e| Failure::Usage(e.to_string()))?;
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    let worst = report.worst.map(|w| {
        format!(
            "worst {} in trial {}: analytic {:e}, numeric {:e}, relative error {:e}",
            coordinate_name(w.coordinate),
            w.trial,
            w.analytic,
            w.numeric,
            w.rel_error
        )
    });
    if report.passed() {
        if let Some(w) = worst {
            eprintln!("{w}");
        }
        Ok(())
    } else {
        Err(Failure::Numerical(format!(
            "{} of {} coordinates exceed tolerance {:e}; {}",
            report.failures,
            report.checked,
            args.tol,
            worst.unwrap_or_default()
        )))
    }
}

fn export_model(args: ExportModelArgs) -> Outcome {
    let model = make_toy_model(args.seed, args.vertices).map_err(|e| Failure::Usage(e.to_string()))?;
    save_model(&model, &args.out)?;
    println!(
        "vertices={} sha256={}",
        model.vertex_count(),
        ModelDigest::of(&model).sha256
    );
    Ok(())
}

fn export_mesh(args: ExportMeshArgs) -> Outcome {
    let model = model(&args.model)?;
    let params = match &args.params {
        Some(path) => load_params(path)?,
        None => HandParams::default(),
    };
    write_file(&args.out, &obj_text(&model.skin(&params)?))?;
    println!("vertices={}", model.vertex_count());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Synth(a) => synth(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::ExportModel(a) => export_model(a),
        Command::ExportMesh(a) => export_mesh(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("handfit: {}", f.message().replace('\n', " "));
            ExitCode::from(f.code())
        }
    }
}
