use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use spray_core::ablation::{
    addition_study, build_poisoned_dataset, channel_stats, inject, make_artifact, removal_study, unhans_experiment,
    Anchor, ArtifactKind, ArtifactMask, ArtifactParams, Fill, GeneratorParams,
};
use spray_core::attribution::io::{decode_checkpoint, decode_dataset, encode_checkpoint, encode_dataset, write_bytes};
use spray_core::attribution::{accuracy, train_sgd, LabeledDataset, ToyNetwork, TrainConfig};
use spray_core::pipeline::{demo_fig2, demo_fig3, run_pipeline, PipelineConfig, RunOptions, Stage, KEYS};
use spray_core::Error;

#[derive(Parser)]
#[command(name = "spray", version, about = "Spectral relevance analysis of attribution maps")]
struct Cli {
    /// Plain-text `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps the number of worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Omit timestamps so repeated runs write identical files.
    #[arg(long, global = true)]
    reproducible: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute LRP attributions for dataset.sds with model.spnn.
    Attribute(StageArgs),
    /// Run through the pairwise distance stage.
    Distances(StageArgs),
    /// Run through the spectral embedding stage.
    Spectral(StageArgs),
    /// Run through τ scoring and write tau_ranking.csv.
    Rank(StageArgs),
    /// Run through the t-SNE stage.
    Embed(StageArgs),
    /// Run every stage and render the report.
    Report(StageArgs),
    /// Alias for `report`.
    Run(StageArgs),
    /// Generate the synthetic shape dataset with a planted artifact.
    Generate(GenerateArgs),
    /// Train a toy classifier on a dataset file.
    Train(TrainArgs),
    /// Paste an artifact into the images of a dataset file.
    Inject(InjectArgs),
    /// Artifact addition and removal studies.
    Ablate(AblateArgs),
    /// Fine-tune with the artifact on every sample and compare.
    Unhans(UnhansArgs),
    /// Spectral clustering of four 2D blobs.
    #[command(name = "demo-fig2")]
    DemoFig2(OutArgs),
    /// Barycenter mosaic of four transformed glyphs.
    #[command(name = "demo-fig3")]
    DemoFig3(Fig3Args),
}

/// Overrides mirroring the configuration keys.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long = "knn_k", alias = "knn-k")]
    knn_k: Option<String>,
    #[arg(long)]
    q: Option<String>,
    #[arg(long = "kmeans_k_min", alias = "kmeans-k-min")]
    kmeans_k_min: Option<String>,
    #[arg(long = "kmeans_k_max", alias = "kmeans-k-max")]
    kmeans_k_max: Option<String>,
    #[arg(long = "distance_metric", visible_alias = "metric", alias = "distance-metric")]
    distance_metric: Option<String>,
    #[arg(long = "sinkhorn_epsilon", alias = "sinkhorn-epsilon")]
    sinkhorn_epsilon: Option<String>,
    #[arg(long = "sinkhorn_tol", alias = "sinkhorn-tol")]
    sinkhorn_tol: Option<String>,
    #[arg(long = "sinkhorn_max_iter", alias = "sinkhorn-max-iter")]
    sinkhorn_max_iter: Option<String>,
    #[arg(long = "gw_outer_iter", alias = "gw-outer-iter")]
    gw_outer_iter: Option<String>,
    #[arg(long = "gw_epsilon", alias = "gw-epsilon")]
    gw_epsilon: Option<String>,
    #[arg(long = "tsne_perplexity", alias = "tsne-perplexity")]
    tsne_perplexity: Option<String>,
    #[arg(long = "tsne_iters", alias = "tsne-iters")]
    tsne_iters: Option<String>,
    #[arg(long)]
    ridge: Option<String>,
    #[arg(long = "preprocess_grid", alias = "preprocess-grid")]
    preprocess_grid: Option<String>,
    #[arg(long = "data_dir", visible_alias = "data", alias = "data-dir")]
    data_dir: Option<String>,
    #[arg(long = "out_dir", visible_alias = "out", alias = "out-dir")]
    out_dir: Option<String>,
    #[arg(long)]
    title: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> [(&'static str, &Option<String>); 17] {
        [
            ("knn_k", &self.knn_k),
            ("q", &self.q),
            ("kmeans_k_min", &self.kmeans_k_min),
            ("kmeans_k_max", &self.kmeans_k_max),
            ("distance_metric", &self.distance_metric),
            ("sinkhorn_epsilon", &self.sinkhorn_epsilon),
            ("sinkhorn_tol", &self.sinkhorn_tol),
            ("sinkhorn_max_iter", &self.sinkhorn_max_iter),
            ("gw_outer_iter", &self.gw_outer_iter),
            ("gw_epsilon", &self.gw_epsilon),
            ("tsne_perplexity", &self.tsne_perplexity),
            ("tsne_iters", &self.tsne_iters),
            ("ridge", &self.ridge),
            ("preprocess_grid", &self.preprocess_grid),
            ("data_dir", &self.data_dir),
            ("out_dir", &self.out_dir),
            ("title", &self.title),
        ]
    }
}

#[derive(Args)]
struct StageArgs {
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct OutArgs {
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Fig3Args {
    #[arg(long)]
    out: PathBuf,
    /// Cells per side of the mosaic.
    #[arg(long, default_value_t = 5)]
    steps: usize,
    /// Glyph side length in pixels.
    #[arg(long, default_value_t = 20)]
    size: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnchorArg {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    Random,
}

#[derive(Args)]
struct ArtifactArgs {
    #[arg(long, default_value = "watermark")]
    kind: ArtifactKind,
    /// Patch side, border width or corner radius.
    #[arg(long, default_value_t = 3)]
    artifact_size: usize,
    #[arg(long, default_value_t = 1.0)]
    value: f64,
    #[arg(long, value_enum, default_value = "bottom-left")]
    anchor: AnchorArg,
}

impl ArtifactArgs {
    fn mask(&self, shape: spray_core::attribution::Shape, seed: u64) -> spray_core::Result<ArtifactMask> {
        let anchor = match self.anchor {
            AnchorArg::TopLeft => Anchor::TopLeft,
            AnchorArg::TopRight => Anchor::TopRight,
            AnchorArg::BottomLeft => Anchor::BottomLeft,
            AnchorArg::BottomRight => Anchor::BottomRight,
            AnchorArg::Random => Anchor::Random { r0: 0, c0: 0, r1: shape.h, c1: shape.w },
        };
        let params = ArtifactParams { shape, size: self.artifact_size, value: self.value, anchor };
        make_artifact(self.kind, &params, seed)
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory for dataset.sds and val.sds.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 500)]
    per_class: usize,
    #[arg(long, default_value_t = 100)]
    val_per_class: usize,
    #[arg(long, default_value_t = 0.2)]
    poison_fraction: f64,
    #[arg(long, default_value_t = 0)]
    artifact_class: usize,
    /// Make the artifact the only feature of its class.
    #[arg(long)]
    artifact_only: bool,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    Cnn,
    Mlp,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding dataset.sds; model.spnn is written next to it.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "cnn")]
    arch: Arch,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
}

#[derive(Args)]
struct InjectArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Only touch samples of this class.
    #[arg(long)]
    class: Option<usize>,
    #[command(flatten)]
    artifact: ArtifactArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum FillArg {
    Mean,
    Noise,
}

#[derive(Args)]
struct AblateArgs {
    /// Directory holding dataset.sds and model.spnn.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    class: usize,
    /// Foreign samples receiving the artifact.
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, value_enum, default_value = "mean")]
    fill: FillArg,
    #[command(flatten)]
    artifact: ArtifactArgs,
}

#[derive(Args)]
struct UnhansArgs {
    /// Directory holding dataset.sds, val.sds and model.spnn.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    class: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[command(flatten)]
    artifact: ArtifactArgs,
}

fn error_code(e: &Error) -> u8 {
    match e {
        Error::InvalidParameter { .. } | Error::LabelOutOfRange { .. } => 2,
        Error::Io(_) | Error::Csv(_) | Error::Format(_) => 3,
        _ => 1,
    }
}

fn load_dataset(path: &Path) -> spray_core::Result<(LabeledDataset, Vec<bool>)> {
    decode_dataset(&fs::read(path)?)
}

fn load_model(path: &Path) -> spray_core::Result<ToyNetwork> {
    decode_checkpoint(&fs::read(path)?)
}

fn pipeline(cli: &Cli, args: &StageArgs, until: Stage) -> Result<(), (u8, String)> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| (2, e.to_string()))?,
        None => PipelineConfig::default(),
    };
    for (key, value) in args.overrides.pairs() {
        if let Some(v) = value {
            debug_assert!(KEYS.contains(&key));
            cfg.set(key, v).map_err(|e| (2, e.to_string()))?;
        }
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let opts = RunOptions { until, reproducible: cli.reproducible };
    let manifest = run_pipeline(&cfg, &opts).map_err(|e| (e.exit_code() as u8, e.to_string()))?;
    print!("{}", manifest.to_text());
    Ok(())
}

fn generate(a: &GenerateArgs, seed: u64) -> spray_core::Result<()> {
    let size = 28;
    let params = GeneratorParams {
        num_classes: a.classes,
        per_class: a.per_class,
        noise_sigma: a.noise,
        artifact_class: a.artifact_class,
        artifact_only: a.artifact_only,
        size,
        ..GeneratorParams::default()
    };
    let mask = make_artifact(ArtifactKind::Watermark, &ArtifactParams::watermark_28(), seed)?;
    let (train, flags) = build_poisoned_dataset(&params, a.poison_fraction, &mask, seed)?;
    write_bytes(&a.out.join("dataset.sds"), &encode_dataset(&train, Some(&flags))?)?;
    if a.val_per_class > 0 {
        let vp = GeneratorParams { per_class: a.val_per_class, ..params };
        let (val, _) = build_poisoned_dataset(&vp, 0.0, &mask, seed.wrapping_add(1))?;
        write_bytes(&a.out.join("val.sds"), &encode_dataset(&val, None)?)?;
    }
    println!("{} training samples, {} poisoned", train.len(), flags.iter().filter(|&&f| f).count());
    Ok(())
}

fn train(a: &TrainArgs, seed: u64) -> spray_core::Result<()> {
    let (data, _) = load_dataset(&a.data.join("dataset.sds"))?;
    let shape = data.image_shape().ok_or(Error::EmptyDataset)?;
    let net = match a.arch {
        Arch::Cnn => ToyNetwork::toy_cnn(shape, data.num_classes, seed)?,
        Arch::Mlp => ToyNetwork::mlp(shape, &[64], data.num_classes, seed),
    };
    let cfg = TrainConfig { learning_rate: a.lr, epochs: a.epochs, batch_size: a.batch, seed, ..TrainConfig::default() };
    let net = train_sgd(&net, &data, &cfg)?;
    write_bytes(&a.data.join("model.spnn"), &encode_checkpoint(&net)?)?;
    println!("train accuracy {:.4}", accuracy(&net, &data)?);
    Ok(())
}

fn inject_cmd(a: &InjectArgs, seed: u64) -> spray_core::Result<()> {
    let (data, flags) = load_dataset(&a.input)?;
    let shape = data.image_shape().ok_or(Error::EmptyDataset)?;
    let mask = a.artifact.mask(shape, seed)?;
    let mut touched = flags.clone();
    let out = data.map_images(|i, img| {
        if a.class.is_none_or(|c| data.labels[i] == c) {
            touched[i] = true;
            inject(img, &mask)
        } else {
            Ok(img.clone())
        }
    })?;
    write_bytes(&a.output, &encode_dataset(&out, Some(&touched))?)?;
    Ok(())
}

fn ablate(a: &AblateArgs, seed: u64) -> spray_core::Result<()> {
    let (data, flags) = load_dataset(&a.data.join("dataset.sds"))?;
    let model = load_model(&a.data.join("model.spnn"))?;
    let shape = data.image_shape().ok_or(Error::EmptyDataset)?;
    let mask = a.artifact.mask(shape, seed)?;
    let foreign: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] != a.class).collect();
    let add = addition_study(&model, &data.subset(&foreign), &mask, a.class, Some(a.samples), seed)?;
    let mut affected: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == a.class && flags[i]).collect();
    if affected.is_empty() {
        affected = data.indices_of(a.class);
    }
    let (means, stds) = channel_stats(&data)?;
    let fill = match a.fill {
        FillArg::Mean => Fill::Mean(means),
        FillArg::Noise => Fill::Noise { mean: means, std: stds, seed },
    };
    let rem = removal_study(&model, &data.subset(&affected), &mask, a.class, &fill)?;
    fs::create_dir_all(&a.out)?;
    add.write_csv(fs::File::create(a.out.join("addition.csv"))?)?;
    rem.write_csv(fs::File::create(a.out.join("removal.csv"))?)?;
    println!("addition: mean delta rank {:.4}, mean delta prob {:.4}", add.mean_delta_rank, add.mean_delta_prob);
    println!("removal: mean delta rank {:.4}, mean delta prob {:.4}", rem.mean_delta_rank, rem.mean_delta_prob);
    Ok(())
}

fn unhans(a: &UnhansArgs, seed: u64) -> spray_core::Result<()> {
    let (train_set, _) = load_dataset(&a.data.join("dataset.sds"))?;
    let (val, _) = load_dataset(&a.data.join("val.sds"))?;
    let model = load_model(&a.data.join("model.spnn"))?;
    let shape = train_set.image_shape().ok_or(Error::EmptyDataset)?;
    let mask = a.artifact.mask(shape, seed)?;
    let cfg = TrainConfig { learning_rate: a.lr, epochs: a.epochs, batch_size: a.batch, seed, ..TrainConfig::default() };
    let rec = unhans_experiment(&model, &train_set, &val, a.class, &mask, &cfg)?;
    fs::create_dir_all(&a.out)?;
    rec.write_accuracy_csv(fs::File::create(a.out.join("unhans_accuracy.csv"))?)?;
    rec.write_mass_csv(fs::File::create(a.out.join("unhans_mass.csv"))?)?;
    let acc = rec.accuracy;
    println!("model A: val-A {:.4}, val-B {:.4}", acc[0][0], acc[0][1]);
    println!("model B: val-A {:.4}, val-B {:.4}", acc[1][0], acc[1][1]);
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), (u8, String)> {
    let seed = cli.seed.unwrap_or(0);
    let plain = |r: spray_core::Result<()>| r.map_err(|e| (error_code(&e), e.to_string()));
    match &cli.command {
        Command::Attribute(a) => pipeline(cli, a, Stage::Attribute),
        Command::Distances(a) => pipeline(cli, a, Stage::Distances),
        Command::Spectral(a) => pipeline(cli, a, Stage::Spectral),
        Command::Rank(a) => pipeline(cli, a, Stage::Rank),
        Command::Embed(a) => pipeline(cli, a, Stage::Embed),
        Command::Report(a) | Command::Run(a) => pipeline(cli, a, Stage::Report),
        Command::Generate(a) => plain(generate(a, seed)),
        Command::Train(a) => plain(train(a, seed)),
        Command::Inject(a) => plain(inject_cmd(a, seed)),
        Command::Ablate(a) => plain(ablate(a, seed)),
        Command::Unhans(a) => plain(unhans(a, seed)),
        Command::DemoFig2(a) => plain(demo_fig2(&a.out, seed).map(|r| {
            info!("estimated k = {}", r.estimated_k);
            println!("estimated k {}, adjusted rand index {:.4}", r.estimated_k, r.ari);
        })),
        Command::DemoFig3(a) => plain(demo_fig3(&a.out, a.steps, a.size).map(|r| {
            for f in r.files {
                println!("{}", f.display());
            }
        })),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --jobs: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
