use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, ValueEnum};
use ctxnet::data::{
    encode_hsic, encode_hsil, read_envi_cube, read_envi_labels, read_hsic, read_hsil, sample_split,
    standardize, BandStats, DatasetPreset, HsiCube, LabelMap, SplitSpec, SyntheticScene,
    TrainingPool,
};
use ctxnet::eval::{
    encode_ppm, fp_by_category, overall_accuracy, run_protocol, EvalReport, Protocol,
    ProtocolSummary, PALETTE,
};
use ctxnet::network::{load_weights, param_count, write_weights, ContextualNet};
use ctxnet::optim::{train_with, TrainLog};

use crate::artifacts::Artifacts;
use crate::config::ExperimentConfig;

/// Options shared by the commands that train.
#[derive(Args, Debug)]
pub struct RunArgs {
    /// Experiment configuration file (`key = value` lines).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shortened schedule: 10K iterations, rate steps at 3333 and 6666.
    #[arg(long, conflicts_with = "max_iters")]
    fast: bool,
    /// Iteration budget; the rate steps move to one and two thirds of it.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set {kv:?}: expected KEY=VALUE"))?;
            cfg.set(k.trim(), v.trim(), Path::new("."))
                .with_context(|| format!("--set {kv:?}"))?;
        }
        if self.fast {
            cfg.rescale_iterations(10_000);
        }
        if let Some(n) = self.max_iters {
            cfg.rescale_iterations(n);
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }
}

fn load_scene(cfg: &ExperimentConfig) -> Result<(HsiCube, LabelMap)> {
    let cube_path = cfg.cube.as_ref().context("configuration key `cube` is not set")?;
    let labels_path = cfg.labels.as_ref().context("configuration key `labels` is not set")?;
    let cube = read_hsic(cube_path)?;
    let labels = read_hsil(labels_path)?;
    labels.check_matches(&cube)?;
    let labels = match (&cfg.preset, cfg.classes.is_empty()) {
        (Some(_), false) => bail!("set either `preset` or `classes`, not both"),
        (Some(name), true) => DatasetPreset::by_name(name)?.select(&labels)?,
        (None, false) => labels.select(&cfg.classes)?,
        (None, true) => labels,
    };
    Ok((cube, labels))
}

fn csv<T>(write: impl FnOnce(&mut Vec<u8>) -> ctxnet::Result<T>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn weights_bytes(net: &ContextualNet<f32>) -> ctxnet::Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_weights(net, &mut buf)?;
    Ok(buf)
}

fn band_stats_csv(stats: &BandStats) -> String {
    let mut s = String::from("band,mean,std\n");
    for (i, (m, sd)) in stats.mean.iter().zip(&stats.std).enumerate() {
        let _ = writeln!(s, "{i},{m},{sd}");
    }
    s
}

fn parse_band_stats(path: &Path) -> Result<BandStats> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut stats = BandStats {
        mean: Vec::new(),
        std: Vec::new(),
    };
    for (i, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let parsed = match fields.as_slice() {
            [band, mean, std] => band
                .parse::<usize>()
                .ok()
                .filter(|&b| b == stats.mean.len())
                .zip(mean.parse::<f64>().ok().zip(std.parse::<f64>().ok())),
            _ => None,
        };
        let (_, (mean, std)) =
            parsed.with_context(|| format!("{} line {}: expected band,mean,std", path.display(), i + 1))?;
        ensure!(std > 0.0, "{} line {}: std must be positive", path.display(), i + 1);
        stats.mean.push(mean);
        stats.std.push(std);
    }
    Ok(stats)
}

fn split_csv(split: &SplitSpec, width: usize) -> String {
    let mut s = String::from("pixel,row,col,class,set\n");
    for (set, pairs) in [("train", split.train_pairs()), ("test", split.test_pairs())] {
        for (p, c) in pairs {
            let _ = writeln!(s, "{p},{},{},{},{set}", p / width, p % width, c + 1);
        }
    }
    s
}

fn map_ppm(map: &LabelMap) -> Result<Vec<u8>> {
    Ok(encode_ppm(map, &PALETTE)?)
}

fn training_seconds(log: &TrainLog) -> f64 {
    log.entries.last().map_or(0.0, |e| e.seconds)
}

/// Mean and sample standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn io_error(e: anyhow::Error) -> ctxnet::Error {
    ctxnet::Error::Io(std::io::Error::other(format!("{e:#}")))
}

pub fn train(args: RunArgs) -> Result<()> {
    let cfg = args.config()?;
    let (cube, labels) = load_scene(&cfg)?;
    let network = cfg.network(cube.bands(), labels.classes)?;
    let plan = cfg.plan()?;
    if network.plain_modules > 0 && plan.snapshot_every > 0 {
        bail!("snapshots need a weight encoding, which nets with plain_modules > 0 do not have");
    }
    let split = sample_split(&labels, cfg.n_per_class, cfg.seed)?;
    ensure!(
        split.test_len() > 0,
        "no test pixels left after taking {} training pixels per class",
        cfg.n_per_class
    );
    let (std_cube, stats) = standardize(&cube, &split.train_pixels())?;
    let pool = TrainingPool::new(&std_cube, &split, network.patch_size(), plan.augmentation)?;
    let mut net = ContextualNet::<f32>::build_with(&network, cfg.seed, cfg.init)?;

    let out = cfg.out_dir.clone();
    let mut art = Artifacts::new();
    art.create_dir(&out)?;
    art.write(&out.join("config.txt"), cfg.to_text().as_bytes())?;
    eprintln!(
        "{} classes, {} bands, {} train / {} test pixels, pool {}, {} parameters, {} iterations",
        labels.classes,
        cube.bands(),
        split.train_len(),
        split.test_len(),
        pool.len(),
        net.num_parameters(),
        plan.max_iters
    );

    let log = train_with(&mut net, &pool, &plan, |done, net| {
        if plan.snapshot_every > 0 && done % plan.snapshot_every == 0 {
            let path = out.join(format!("snapshot_{done:07}.hsiw"));
            art.write(&path, &weights_bytes(net)?).map_err(io_error)?;
            eprintln!("iteration {done}/{}: snapshot {}", plan.max_iters, path.display());
        }
        Ok(None)
    })?;
    if let Some(last) = log.entries.last() {
        eprintln!("trained in {:.1}s, final batch loss {:.4}", last.seconds, last.loss);
    }

    let mut prediction = net.predict(std_cube.tensor(), cfg.tile())?;
    prediction.class_names = labels.class_names.clone();
    let test = split.test_pixels();
    let report = EvalReport::new(&prediction, &labels, &test)?;
    let boundary = fp_by_category(&prediction, &labels, &test)?;

    if network.plain_modules == 0 {
        art.write(&out.join("weights.hsiw"), &weights_bytes(&net)?)?;
    } else {
        eprintln!("note: no weights.hsiw for a net with plain modules");
    }
    art.write(&out.join("band_stats.csv"), band_stats_csv(&stats).as_bytes())?;
    art.write(&out.join("train_log.csv"), &csv(|b| log.write_csv(b))?)?;
    art.write(&out.join("split.csv"), split_csv(&split, cube.width()).as_bytes())?;
    art.write(&out.join("report.txt"), format!("{report}\n{boundary}").as_bytes())?;
    art.write(&out.join("report.csv"), &csv(|b| report.write_csv(b))?)?;
    art.write(&out.join("prediction.hsil"), &encode_hsil(&prediction)?)?;
    art.write(&out.join("map.ppm"), &map_ppm(&prediction)?)?;
    let files = art.commit();

    println!("overall accuracy {:.2}%", report.overall_accuracy);
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct ProtocolArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Number of random partitions (overrides `partitions`).
    #[arg(long)]
    partitions: Option<usize>,
}

fn protocol_for(cfg: &ExperimentConfig, bands: usize, classes: usize) -> Result<Protocol> {
    Ok(Protocol {
        init: cfg.init,
        n_per_class: cfg.n_per_class,
        partitions: cfg.partitions,
        seed: cfg.seed,
        tile: cfg.tile(),
        ..Protocol::new(cfg.network(bands, classes)?, cfg.plan()?)
    })
}

fn run_logged(cube: &HsiCube, labels: &LabelMap, protocol: &Protocol) -> Result<ProtocolSummary> {
    let n = protocol.partitions;
    let mut i = 0;
    let summary = run_protocol(cube, labels, protocol, |r| {
        i += 1;
        eprintln!(
            "partition {i}/{n} (seed {}): {:.2}% in {:.1}s",
            r.seed,
            r.report.overall_accuracy,
            training_seconds(&r.log)
        );
    })?;
    Ok(summary)
}

fn partitions_csv(summary: &ProtocolSummary, classes: usize) -> String {
    let mut s = String::from("partition,seed,overall_accuracy,train_seconds");
    for c in 1..=classes {
        let _ = write!(s, ",class_{c}");
    }
    s.push('\n');
    for (i, p) in summary.partitions.iter().enumerate() {
        let _ = write!(
            s,
            "{},{},{},{}",
            i + 1,
            p.seed,
            p.report.overall_accuracy,
            training_seconds(&p.log)
        );
        for acc in &p.report.per_class_accuracy {
            let _ = match acc {
                Some(a) => write!(s, ",{a}"),
                None => write!(s, ","),
            };
        }
        s.push('\n');
    }
    s
}

fn summary_text(summary: &ProtocolSummary, labels: &LabelMap) -> String {
    let mut s = format!(
        "overall accuracy over {} partitions: {summary}\n\nper-class accuracy (mean ± std over partitions with test pixels)\n",
        summary.partitions.len()
    );
    for c in 0..labels.classes {
        let accs: Vec<f64> = summary
            .partitions
            .iter()
            .filter_map(|p| p.report.per_class_accuracy[c])
            .collect();
        let name = labels.class_names.get(c).cloned().unwrap_or_else(|| format!("class {}", c + 1));
        let value = if accs.is_empty() {
            "undefined".to_string()
        } else {
            let (m, sd) = mean_std(&accs);
            format!("{m:.2} ± {sd:.2}")
        };
        let _ = writeln!(s, "{:>3}  {name}: {value}", c + 1);
    }
    let _ = write!(s, "\nfalse positives by boundary category (pooled)\n{}", summary.boundary());
    s
}

pub fn protocol(args: ProtocolArgs) -> Result<()> {
    let mut cfg = args.run.config()?;
    if let Some(n) = args.partitions {
        cfg.partitions = n;
    }
    let (cube, labels) = load_scene(&cfg)?;
    let protocol = protocol_for(&cfg, cube.bands(), labels.classes)?;
    let out = cfg.out_dir.clone();
    let mut art = Artifacts::new();
    art.create_dir(&out)?;
    art.write(&out.join("config.txt"), cfg.to_text().as_bytes())?;

    let summary = run_logged(&cube, &labels, &protocol)?;
    art.write(&out.join("partitions.csv"), partitions_csv(&summary, labels.classes).as_bytes())?;
    art.write(&out.join("summary.txt"), summary_text(&summary, &labels).as_bytes())?;
    art.commit();
    println!("overall accuracy {summary}");
    Ok(())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Axis {
    /// Filters per hidden layer.
    Width,
    /// Number of residual modules.
    Depth,
    /// Largest bank scale `v`; the bank uses scales 1, 3, ..., v.
    Bank,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum)]
    axis: Axis,
    /// Comma-separated values of the swept setting.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<usize>,
    /// Partitions per value (overrides `partitions`).
    #[arg(long)]
    partitions: Option<usize>,
}

fn apply_axis(cfg: &mut ExperimentConfig, axis: Axis, value: usize) -> Result<()> {
    match axis {
        Axis::Width => cfg.width = value,
        Axis::Depth => cfg.residual_modules = value,
        Axis::Bank => {
            ensure!(value % 2 == 1, "bank value {value} must be odd");
            cfg.bank_scales = (1..=value).step_by(2).collect();
        }
    }
    Ok(())
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let mut base = args.run.config()?;
    if let Some(n) = args.partitions {
        base.partitions = n;
    }
    let (cube, labels) = load_scene(&base)?;
    // reject bad values before spending time on the good ones
    let mut protocols = Vec::with_capacity(args.values.len());
    for &v in &args.values {
        let mut cfg = base.clone();
        apply_axis(&mut cfg, args.axis, v)?;
        protocols.push((v, protocol_for(&cfg, cube.bands(), labels.classes)?));
    }
    let out = base.out_dir.clone();
    let mut art = Artifacts::new();
    art.create_dir(&out)?;
    art.write(&out.join("config.txt"), base.to_text().as_bytes())?;

    let axis = format!("{:?}", args.axis).to_lowercase();
    let mut table = format!("{axis},parameters,mean_accuracy,std_accuracy,best_accuracy,mean_train_seconds\n");
    println!(
        "{axis:>6}  {:>10}  {:>16}  {:>7}  {:>9}",
        "params", "accuracy", "best", "train s"
    );
    for (v, protocol) in &protocols {
        eprintln!("{axis} = {v}");
        let start = Instant::now();
        let summary = run_logged(&cube, &labels, protocol)?;
        let secs: Vec<f64> = summary.partitions.iter().map(|p| training_seconds(&p.log)).collect();
        let (mean_secs, _) = mean_std(&secs);
        let params = param_count(&protocol.network);
        let _ = writeln!(
            table,
            "{v},{params},{},{},{},{mean_secs}",
            summary.mean, summary.std, summary.best
        );
        println!(
            "{v:>6}  {params:>10}  {:>16}  {:>7.2}  {mean_secs:>9.1}",
            format!("{:.2} ± {:.2}", summary.mean, summary.std),
            summary.best
        );
        eprintln!("{axis} = {v} done in {:.1}s", start.elapsed().as_secs_f64());
    }
    art.write(&out.join("sweep.csv"), table.as_bytes())?;
    art.commit();
    Ok(())
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    /// Trained weights (HSIW).
    #[arg(long)]
    weights: PathBuf,
    /// Cube to classify (HSIC).
    #[arg(long)]
    cube: PathBuf,
    /// Band statistics written by `train`; without them the cube is used as is.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Output label map (HSIL).
    #[arg(long)]
    out_map: PathBuf,
    /// Optional colour rendering (PPM).
    #[arg(long)]
    out_ppm: Option<PathBuf>,
    /// Tile edge for prediction; 0 predicts in one piece.
    #[arg(long, default_value_t = 64)]
    tile: usize,
    /// Reference labels (HSIL); prints accuracy over every labeled pixel.
    #[arg(long)]
    labels: Option<PathBuf>,
}

pub fn classify(args: ClassifyArgs) -> Result<()> {
    let net = load_weights(&args.weights)?;
    let cube = read_hsic(&args.cube)?;
    let expected = net.config().bands;
    ensure!(
        cube.bands() == expected,
        "band mismatch: weights expect {expected} bands, cube {} has {}",
        args.cube.display(),
        cube.bands()
    );
    let reference = args.labels.as_ref().map(read_hsil).transpose()?;
    let cube = match &args.stats {
        Some(path) => {
            let stats = parse_band_stats(path)?;
            ensure!(
                stats.mean.len() == expected,
                "band mismatch: statistics in {} cover {} bands, weights expect {expected}",
                path.display(),
                stats.mean.len()
            );
            stats.apply(&cube)?
        }
        None => cube,
    };
    let prediction = net.predict(cube.tensor(), (args.tile > 0).then_some(args.tile))?;

    let mut art = Artifacts::new();
    art.write(&args.out_map, &encode_hsil(&prediction)?)?;
    if let Some(ppm) = &args.out_ppm {
        art.write(ppm, &map_ppm(&prediction)?)?;
    }
    if let Some(labels) = &reference {
        labels.check_matches(&cube)?;
        ensure!(
            labels.classes == prediction.classes,
            "reference has {} classes, weights predict {}",
            labels.classes,
            prediction.classes
        );
        let labeled: Vec<usize> = (0..labels.len()).filter(|&p| labels.labels[p] > 0).collect();
        println!(
            "overall accuracy {:.2}% over {} labeled pixels",
            overall_accuracy(&prediction, labels, &labeled)?,
            labeled.len()
        );
    }
    art.commit();
    println!(
        "classified {}x{} pixels into {} classes",
        prediction.height, prediction.width, prediction.classes
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    /// ENVI header (.hdr).
    #[arg(long)]
    envi_header: PathBuf,
    /// ENVI raw payload.
    #[arg(long)]
    envi_raw: PathBuf,
    /// Output file: HSIC, or HSIL with `--labels`.
    #[arg(long)]
    out: PathBuf,
    /// Treat the input as a single-band class raster.
    #[arg(long)]
    labels: bool,
}

pub fn convert(args: ConvertArgs) -> Result<()> {
    let mut art = Artifacts::new();
    if args.labels {
        let labels = read_envi_labels(&args.envi_header, &args.envi_raw)?;
        art.write(&args.out, &encode_hsil(&labels)?)?;
        println!("H={} W={} C={}", labels.height, labels.width, labels.classes);
    } else {
        let cube = read_envi_cube(&args.envi_header, &args.envi_raw)?;
        art.write(&args.out, &encode_hsic(&cube)?)?;
        println!("H={} W={} B={}", cube.height(), cube.width(), cube.bands());
    }
    art.commit();
    Ok(())
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Directory for cube.hsic, labels.hsil and experiment.cfg.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    bands: usize,
    /// Edge of each square class block.
    #[arg(long, default_value_t = 12)]
    block: usize,
    /// Per-pixel noise standard deviation.
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let scene = SyntheticScene {
        block: args.block,
        noise: args.noise,
        seed: args.seed,
        ..SyntheticScene::new(args.classes, args.bands)
    };
    let (cube, labels) = scene.build()?;
    let per_class = args.block * args.block;
    let experiment = format!(
        "# synthetic scene: {c} classes, {b} bands, {per_class} pixels per class\n\
         cube = cube.hsic\n\
         labels = labels.hsil\n\
         width = 32\n\
         init = scaled\n\
         n_per_class = {n}\n\
         partitions = 3\n\
         max_iters = 2000\n\
         step_iters = 666,1333\n\
         tile = 32\n\
         out_dir = run\n",
        c = args.classes,
        b = args.bands,
        n = (per_class / 4).max(2),
    );
    let mut art = Artifacts::new();
    art.write(&args.out.join("cube.hsic"), &encode_hsic(&cube)?)?;
    art.write(&args.out.join("labels.hsil"), &encode_hsil(&labels)?)?;
    art.write(&args.out.join("experiment.cfg"), experiment.as_bytes())?;
    art.commit();
    println!(
        "H={} W={} B={} C={} in {}",
        cube.height(),
        cube.width(),
        cube.bands(),
        labels.classes,
        args.out.display()
    );
    Ok(())
}
