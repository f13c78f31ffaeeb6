//! Command-line front end.
//!
//! Every command writes its files atomically and produces byte-identical
//! output for identical flags; timings go to stdout only.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::dataset::{generate, Dataset};
use crate::em_forward::{reflection_curve, FrequencyGrid, ReflectionCurve, StackSpec};
use crate::error::{Error, Result};
use crate::geometry::{SweepTable, UnitCellGeometry};
use crate::io_util::{read_to_string, write_atomic};
use crate::pipeline::{
    depth_summary_csv, layer_depth_study, round_trip_validate, sample_label, train_case1,
    train_case2, CaseTag, TrainConfig, TrainedModel,
};
use crate::svg::{line_plot, Series};

#[derive(Debug, Parser)]
#[command(
    name = "fss-absorber",
    version,
    about = "Forward simulation and inverse design of resistive Jerusalem-cross absorbers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a sweep dataset (CSV plus .meta.toml sidecar).
    Gen(GenArgs),
    /// Train an inverse model on one or more datasets.
    Train(TrainArgs),
    /// Predict dimensions for a single reflection curve.
    Predict(PredictArgs),
    /// Round-trip validation on seeded random test samples.
    Validate(ValidateArgs),
    /// Compare hidden-layer depths.
    Study(StudyArgs),
    /// Simulate one geometry and write its reflection curve.
    Simulate(SimulateArgs),
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        Ok(v) => Err(format!("must be a positive number, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Sweep configuration; defaults to the built-in sweep.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Thicknesses in mm (comma-separated), overriding the config.
    #[arg(long = "t", value_delimiter = ',', value_parser = positive_f64)]
    pub thicknesses: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Default split seed recorded in the metadata.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct Hyper {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// L2 weight-decay coefficient.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Requested PCA components.
    #[arg(long)]
    pub pca: Option<usize>,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
}

impl Hyper {
    fn config(&self, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::default().with_seed(seed);
        c.split.train_fraction = self.train_fraction;
        if let Some(v) = self.epochs {
            c.fit.max_epochs = v;
        }
        if let Some(v) = self.patience {
            c.fit.patience = v;
        }
        if let Some(v) = self.batch_size {
            c.fit.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.fit.adam.learning_rate = v;
        }
        if let Some(v) = self.lambda {
            c.l2_lambda = v;
        }
        if let Some(v) = self.pca {
            c.pca_components = v;
        }
        c
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// 1: fixed thickness, predicts a,b,c,d. 2: variable thickness, adds t.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub case: u8,
    /// Dataset CSV; repeat to combine datasets.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch history CSV; defaults to the model path with extension `history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: Hyper,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Curve CSV with columns `f_GHz,r_dB`.
    #[arg(long)]
    pub curve: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    /// Number of random test samples.
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for the report and per-sample curve CSVs.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also write an SVG plot per sample.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 6, 8])]
    pub depths: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub hyper: Hyper,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// `a,b,c,d,t` in mm.
    #[arg(long, value_parser = parse_geometry)]
    pub geometry: UnitCellGeometry,
    #[arg(long)]
    pub out: PathBuf,
    /// Stack and grid from this config instead of the defaults.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

fn parse_geometry(s: &str) -> std::result::Result<UnitCellGeometry, String> {
    let v = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let arr: [f64; 5] = v
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected 5 values a,b,c,d,t, got {}", v.len()))?;
    let g = UnitCellGeometry::from_array(arr);
    g.check().map_err(|e| e.to_string())?;
    Ok(g)
}

/// Contents of a sweep config file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct GenConfig {
    #[serde(default)]
    pub grid: FrequencyGrid,
    #[serde(default)]
    pub stack: StackSpec,
    pub sweep: SweepTable,
}

impl GenConfig {
    pub fn table1() -> Self {
        Self {
            grid: FrequencyGrid::default(),
            stack: StackSpec::default(),
            sweep: SweepTable::table1(&[2.0]),
        }
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: GenConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start].matches('\n').count() as u64 + 1);
            Error::parse(origin, line, e.message().to_string())
        })?;
        cfg.grid.validate()?;
        cfg.stack.validate()?;
        cfg.sweep.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::parse(&read_to_string(p)?, p),
            None => Ok(Self::table1()),
        }
    }
}

/// Parses arguments and runs the command. Returns the process exit code;
/// diagnostics go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::Study(a) => cmd_study(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    }
}

fn load_datasets(paths: &[PathBuf]) -> Result<Dataset> {
    let parts = paths.iter().map(|p| Dataset::load(p)).collect::<Result<Vec<_>>>()?;
    if parts.len() == 1 {
        Ok(parts.into_iter().next().expect("one part"))
    } else {
        Dataset::concat(&parts)
    }
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    let mut cfg = GenConfig::load(args.table.as_deref())?;
    if !args.thicknesses.is_empty() {
        cfg.sweep.thicknesses = args.thicknesses.clone();
    }
    let start = Instant::now();
    let ds = generate(&cfg.sweep, &cfg.stack, &cfg.grid, args.seed)?;
    ds.save(&args.out)?;
    println!(
        "generated {} samples ({} grid points, t = {:?} mm) in {:.2} s -> {}",
        ds.len(),
        cfg.grid.len(),
        ds.thicknesses(),
        start.elapsed().as_secs_f64(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let ds = load_datasets(&args.data)?;
    let cfg = args.hyper.config(args.seed);
    let start = Instant::now();
    let model = match args.case {
        1 => train_case1(&ds, &cfg)?,
        _ => train_case2(&ds, &cfg)?,
    };
    model.save(&args.out)?;
    let history = args
        .history
        .clone()
        .unwrap_or_else(|| args.out.with_extension("history.csv"));
    write_atomic(&history, model.history.to_csv().as_bytes())?;
    for w in &model.warnings {
        println!("warning: {w}");
    }
    println!(
        "{}: {} train / {} test, {} PCA components, {} epochs (best {}), test MSE {:.5}, R² {:.4}, {:.1} s",
        model.case,
        model.metrics.n_train,
        model.metrics.n_test,
        model.pca.n_components(),
        model.history.len(),
        model.history.best_epoch,
        model.metrics.test_mse,
        model.metrics.r2,
        start.elapsed().as_secs_f64()
    );
    println!("model -> {}, history -> {}", args.out.display(), history.display());
    Ok(())
}

/// Reads a `f_GHz,r_dB` curve and checks it against `grid`.
pub fn read_curve(path: &Path, grid: &FrequencyGrid) -> Result<ReflectionCurve> {
    let text = read_to_string(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut freqs = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 1;
        let rec = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
        if i == 0 {
            if rec.len() != 2 || &rec[0] != "f_GHz" || &rec[1] != "r_dB" {
                return Err(Error::parse(path, line, "expected header 'f_GHz,r_dB'"));
            }
            continue;
        }
        if rec.len() != 2 {
            return Err(Error::parse(path, line, format!("expected 2 columns, found {}", rec.len())));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(path, line, format!("not a number: {s:?}")))
        };
        freqs.push(num(&rec[0])?);
        values.push(num(&rec[1])?);
    }
    let grid_ok = freqs.len() == grid.len()
        && freqs
            .iter()
            .enumerate()
            .all(|(i, f)| (f - grid.frequency(i)).abs() <= 1e-6);
    if !grid_ok {
        return Err(Error::InvalidInput(format!(
            "{}: curve has {} points that do not match the expected grid {}",
            path.display(),
            freqs.len(),
            grid
        )));
    }
    ReflectionCurve::new(*grid, values)
}

pub fn curve_csv(curve: &ReflectionCurve) -> String {
    let mut s = String::from("f_GHz,r_dB\n");
    for (i, v) in curve.values_db.iter().enumerate() {
        let _ = writeln!(s, "{:.4},{v:.6}", curve.grid.frequency(i));
    }
    s
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model = TrainedModel::load(&args.model)?;
    let curve = read_curve(&args.curve, &model.grid)?;
    let pred = model.predict_geometry(&curve)?;
    let g = pred.geometry;
    for (name, v) in model.case.output_names().iter().zip(g.to_array()) {
        println!("{name} = {v:.2} mm");
    }
    if let CaseTag::Case1 { thickness_mm } = model.case {
        println!("t = {thickness_mm:.2} mm (fixed by model)");
    }
    if pred.clamped.is_empty() {
        println!("clamped: none");
    } else {
        println!("clamped: {}", pred.clamped.join(","));
    }
    Ok(())
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let model = TrainedModel::load(&args.model)?;
    let ds = load_datasets(&args.data)?;
    // Draw from the model's own test split when the data is what it was
    // trained on; otherwise every sample is unseen.
    let pool: Vec<usize> = if ds.fingerprint() == model.fingerprint {
        model.config.split.indices(ds.len())?.1
    } else {
        println!("note: dataset differs from the training data; sampling from all of it");
        (0..ds.len()).collect()
    };
    let mut pool = pool;
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(args.seed));
    pool.truncate(args.n.max(1));
    let chosen = ds.subset(&pool)?;
    let report = round_trip_validate(&model, chosen.samples())?;
    let text = report.to_text();
    print!("{text}");

    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("report.txt"), text.as_bytes())?;
        let freqs: Vec<f64> = model.grid.frequencies().collect();
        for (i, s) in report.samples.iter().enumerate() {
            let label = sample_label(i).trim_matches(|c| c == '(' || c == ')').to_string();
            write_atomic(
                &dir.join(format!("curve_{label}.csv")),
                s.curve_csv(&model.grid).as_bytes(),
            )?;
            if args.svg {
                let (lo, hi): (Vec<f64>, Vec<f64>) =
                    s.true_db.iter().map(|t| crate::pipeline::band_db(*t)).unzip();
                let rt = s.roundtrip_db.clone().unwrap_or_default();
                let mut series = vec![
                    Series { label: "true", x: &freqs, y: &s.true_db, color: "black", dashed: false },
                    Series { label: "band -5%", x: &freqs, y: &lo, color: "#999", dashed: true },
                    Series { label: "band +5%", x: &freqs, y: &hi, color: "#999", dashed: true },
                ];
                if !rt.is_empty() {
                    series.push(Series { label: "round trip", x: &freqs, y: &rt, color: "#c00", dashed: false });
                }
                let svg = line_plot(
                    &format!("sample {} ({})", sample_label(i), s.true_geometry),
                    "frequency (GHz)",
                    "reflection (dB)",
                    &series,
                );
                write_atomic(&dir.join(format!("curve_{label}.svg")), svg.as_bytes())?;
            }
        }
        println!("report and curves -> {}", dir.display());
    }
    Ok(())
}

pub fn cmd_study(args: &StudyArgs) -> Result<()> {
    let ds = load_datasets(&args.data)?;
    let cfg = args.hyper.config(args.seed);
    let start = Instant::now();
    let runs = layer_depth_study(&ds, &args.depths, &cfg)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    for r in &runs {
        write_atomic(
            &args.out_dir.join(format!("history_depth{}.csv", r.depth)),
            r.history.to_csv().as_bytes(),
        )?;
    }
    let summary = depth_summary_csv(&runs);
    write_atomic(&args.out_dir.join("depth_summary.csv"), summary.as_bytes())?;
    print!("{summary}");
    println!(
        "{} depths in {:.1} s -> {}",
        runs.len(),
        start.elapsed().as_secs_f64(),
        args.out_dir.display()
    );
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = GenConfig::load(args.table.as_deref())?;
    let g = args.geometry;
    let curve = reflection_curve(&g, &cfg.stack, &cfg.grid)?;
    write_atomic(&args.out, curve_csv(&curve).as_bytes())?;
    if let Some(svg_path) = &args.svg {
        let freqs: Vec<f64> = cfg.grid.frequencies().collect();
        let svg = line_plot(
            &g.to_string(),
            "frequency (GHz)",
            "reflection (dB)",
            &[Series { label: "|Γ|", x: &freqs, y: &curve.values_db, color: "black", dashed: false }],
        );
        write_atomic(svg_path, svg.as_bytes())?;
    }
    let (i, min) = curve
        .values_db
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if *v < acc.1 { (i, *v) } else { acc });
    println!(
        "{g}: minimum {min:.2} dB at {:.2} GHz -> {}",
        cfg.grid.frequency(i),
        args.out.display()
    );
    Ok(())
}
