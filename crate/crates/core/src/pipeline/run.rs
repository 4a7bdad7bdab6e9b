use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use super::cache::{is_fresh, stamp, KeyBuilder};
use super::config::PipelineConfig;
use crate::attribution::io::{
    decode_atr1, decode_checkpoint, decode_dataset, encode_atr1, read_meta_csv, write_meta_csv, SampleMeta,
};
use crate::attribution::{lrp_composite, rank_of, sum_pool_grid, AttributionMap};
use crate::cluster::{kmeans, rank_classes, tau_score, write_ranking_csv, ClusterAssignment, KMeansParams, SeparabilityReport, TauParams};
use crate::distance::{decode_dst1, encode_dst1, pairwise_distance_matrix, DistanceParams, GwParams, SinkhornParams};
use crate::spectral::{
    affinity_from_coo, affinity_to_coo, decode_emb1, eigengap_estimate, encode_emb1, knn_affinity, lanczos_eigs,
    laplacians, LanczosParams,
};
use crate::viz::{render_report, tsne, ClassView, PlanarEmbedding, ReportOptions, TsneParams};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Attribute = 1,
    Preprocess = 2,
    Distances = 3,
    Affinity = 4,
    Spectral = 5,
    Rank = 6,
    Embed = 7,
    Report = 8,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Attribute,
        Stage::Preprocess,
        Stage::Distances,
        Stage::Affinity,
        Stage::Spectral,
        Stage::Rank,
        Stage::Embed,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Attribute => "attribute",
            Stage::Preprocess => "preprocess",
            Stage::Distances => "distances",
            Stage::Affinity => "affinity",
            Stage::Spectral => "spectral",
            Stage::Rank => "rank",
            Stage::Embed => "embed",
            Stage::Report => "report",
        }
    }

    /// Process exit status when this stage fails.
    pub fn exit_code(self) -> i32 {
        10 + self as i32
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug)]
pub enum PipelineError {
    Config(Error),
    Stage { stage: Stage, source: Error },
}

impl PipelineError {
    /// 2 for configuration problems, 3 for I/O, `10 + stage` otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { source: Error::Io(_), .. } => 3,
            PipelineError::Stage { stage, .. } => stage.exit_code(),
        }
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineError::Config(e) => write!(f, "configuration: {e}"),
            PipelineError::Stage { stage, source } => write!(f, "stage {stage}: {source}"),
        }
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            PipelineError::Config(e) | PipelineError::Stage { source: e, .. } => Some(e),
        }
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError> {
        self.map_err(|source| PipelineError::Stage { stage, source })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageStatus {
    Computed,
    Cached,
    /// Read from the data directory instead of computed.
    Provided,
    Skipped,
}

impl fmt::Display for StageStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageStatus::Computed => "computed",
            StageStatus::Cached => "cached",
            StageStatus::Provided => "provided",
            StageStatus::Skipped => "skipped",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageRecord {
    pub stage: Stage,
    pub class_id: Option<usize>,
    pub status: StageStatus,
    pub outputs: Vec<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<StageRecord>,
    /// Classes ordered by descending τ, present once the rank stage ran.
    pub ranking: Vec<SeparabilityReport>,
}

impl Manifest {
    pub fn files(&self) -> Vec<PathBuf> {
        self.records.iter().flat_map(|r| r.outputs.iter().cloned()).collect()
    }

    pub fn status(&self, stage: Stage, class_id: Option<usize>) -> Option<StageStatus> {
        self.records
            .iter()
            .find(|r| r.stage == stage && r.class_id == class_id)
            .map(|r| r.status)
    }

    /// Text listing, one `stage class status path` line per output.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let class = r.class_id.map_or("-".to_string(), |c| c.to_string());
            if r.outputs.is_empty() {
                s.push_str(&format!("{} {} {}\n", r.stage, class, r.status));
            }
            for p in &r.outputs {
                s.push_str(&format!("{} {} {} {}\n", r.stage, class, r.status, p.display()));
            }
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    /// Last stage to execute.
    pub until: Stage,
    pub reproducible: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { until: Stage::Report, reproducible: false }
    }
}

/// Input file names inside `data_dir`.
pub const DATASET_FILE: &str = "dataset.sds";
pub const MODEL_FILE: &str = "model.spnn";
pub const META_FILE: &str = "meta.csv";

pub fn class_atr_name(class: usize) -> String {
    format!("class_{class}.atr")
}

struct Ctx {
    out: PathBuf,
    manifest: Manifest,
}

impl Ctx {
    /// Runs `compute` unless `outputs` are fresh for `key`.
    fn stage(
        &mut self,
        stage: Stage,
        class_id: Option<usize>,
        outputs: Vec<PathBuf>,
        key: &str,
        compute: impl FnOnce() -> Result<()>,
    ) -> std::result::Result<(), PipelineError> {
        let status = if is_fresh(&outputs, key) {
            StageStatus::Cached
        } else {
            compute().at(stage)?;
            stamp(&outputs, key).at(stage)?;
            StageStatus::Computed
        };
        let class = class_id.map_or(String::new(), |c| format!(" class {c}"));
        info!("{stage}{class}: {status}");
        self.manifest.records.push(StageRecord { stage, class_id, status, outputs });
        Ok(())
    }

    fn class_dir(&self, c: usize) -> PathBuf {
        self.out.join("cache").join(format!("class_{c}"))
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn load_class(meta: &[SampleMeta], class: usize, atr: &Path) -> Result<Vec<AttributionMap>> {
    let sample_ids: Vec<u64> = meta.iter().filter(|m| m.class_id == class).map(|m| m.sample_id).collect();
    let (h, w, values) = decode_atr1(&fs::read(atr)?)?;
    if values.len() != sample_ids.len() {
        return Err(Error::Format(format!(
            "{} holds {} maps but the metadata lists {} samples of class {class}",
            atr.display(),
            values.len(),
            sample_ids.len()
        )));
    }
    let maps = values
        .into_iter()
        .zip(&sample_ids)
        .map(|(v, &id)| Ok(AttributionMap::new(h, w, v)?.with_sample_id(id)))
        .collect::<Result<Vec<_>>>()?;
    Ok(maps)
}

fn attribute(data_dir: &Path, meta_out: &Path, atr_dir: &Path) -> Result<Vec<PathBuf>> {
    let (data, _) = decode_dataset(&fs::read(data_dir.join(DATASET_FILE))?)?;
    let net = decode_checkpoint(&fs::read(data_dir.join(MODEL_FILE))?)?;
    if data.num_classes > net.num_classes() {
        return Err(Error::LabelOutOfRange { label: data.num_classes - 1, num_classes: net.num_classes() });
    }
    let mut meta = Vec::with_capacity(data.len());
    let mut by_class: BTreeMap<usize, Vec<AttributionMap>> = BTreeMap::new();
    let results: Vec<Result<(AttributionMap, Vec<f64>)>> = {
        use rayon::prelude::*;
        (0..data.len())
            .into_par_iter()
            .map(|i| {
                let map = lrp_composite(&net, &data.images[i], data.labels[i])?.with_sample_id(data.sample_ids[i]);
                Ok((map, net.logits(&data.images[i])?))
            })
            .collect()
    };
    for (i, r) in results.into_iter().enumerate() {
        let (mut map, logits) = r?;
        let label = data.labels[i];
        map.predicted_rank_of_true_label = rank_of(&logits, label);
        meta.push(SampleMeta {
            sample_id: data.sample_ids[i],
            class_id: label,
            predicted_class: crate::attribution::argmax(&logits),
            true_label_rank: map.predicted_rank_of_true_label,
        });
        by_class.entry(label).or_default().push(map);
    }
    // Metadata rows grouped by class keep the per-class file order obvious.
    meta.sort_by_key(|m| m.class_id);
    fs::create_dir_all(atr_dir)?;
    write_meta_csv(meta_out, &meta)?;
    let mut written = vec![meta_out.to_path_buf()];
    for (c, maps) in by_class {
        let p = atr_dir.join(class_atr_name(c));
        write(&p, &encode_atr1(&maps)?)?;
        written.push(p);
    }
    Ok(written)
}

fn distance_params(cfg: &PipelineConfig) -> DistanceParams {
    let sinkhorn = SinkhornParams {
        epsilon: cfg.sinkhorn_epsilon,
        marginal_tol: cfg.sinkhorn_tol,
        max_iter: cfg.sinkhorn_max_iter,
    };
    DistanceParams {
        sinkhorn,
        gw: GwParams {
            epsilon: cfg.gw_epsilon,
            outer_iter: cfg.gw_outer_iter,
            inner: SinkhornParams { epsilon: cfg.gw_epsilon, ..sinkhorn },
            ..GwParams::default()
        },
        ..DistanceParams::default()
    }
}

fn write_tau_csv(path: &Path, rep: &SeparabilityReport) -> Result<()> {
    let mut s = String::from("k,score\n");
    for (k, v) in &rep.per_k_scores {
        s.push_str(&format!("{k},{v}\n"));
    }
    write(path, s.as_bytes())
}

fn read_tau_csv(path: &Path, class_id: usize) -> Result<SeparabilityReport> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut per_k_scores = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let bad = || Error::Format(format!("bad row in {}", path.display()));
        per_k_scores.push((rec[0].parse().map_err(|_| bad())?, rec[1].parse().map_err(|_| bad())?));
    }
    if per_k_scores.is_empty() {
        return Err(Error::Format(format!("{} is empty", path.display())));
    }
    let tau = per_k_scores.iter().map(|(_, v): &(usize, f64)| v).sum::<f64>() / per_k_scores.len() as f64;
    Ok(SeparabilityReport { class_id, per_k_scores, tau })
}

fn write_labels(path: &Path, ids: &[u64], labels: &[usize]) -> Result<()> {
    let mut s = String::from("sample_id,cluster\n");
    for (id, l) in ids.iter().zip(labels) {
        s.push_str(&format!("{id},{l}\n"));
    }
    write(path, s.as_bytes())
}

fn read_labels(path: &Path, seed: u64) -> Result<ClusterAssignment> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut labels = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        labels.push(rec[1].parse::<usize>().map_err(|_| Error::Format(format!("bad row in {}", path.display())))?);
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    Ok(ClusterAssignment { labels, k, inertia: 0.0, seed })
}

fn write_coords(path: &Path, coords: &[[f64; 2]]) -> Result<()> {
    let mut s = String::from("x,y\n");
    for [x, y] in coords {
        s.push_str(&format!("{x},{y}\n"));
    }
    write(path, s.as_bytes())
}

fn read_coords(path: &Path) -> Result<Vec<[f64; 2]>> {
    let mut rd = csv::Reader::from_path(path)?;
    rd.records()
        .map(|rec| {
            let rec = rec?;
            let bad = || Error::Format(format!("bad row in {}", path.display()));
            Ok([rec[0].parse().map_err(|_| bad())?, rec[1].parse().map_err(|_| bad())?])
        })
        .collect()
}

/// Clusters used for the report: k-means with the eigengap's cluster count
/// on the matching number of leading eigenvectors.
fn report_clusters(eigenvalues: &[f64], rows: &[Vec<f64>], cfg: &PipelineConfig) -> Result<(usize, ClusterAssignment)> {
    let n = rows.len();
    let max_k = cfg.kmeans_k_max.min(eigenvalues.len().saturating_sub(1));
    let estimated = eigengap_estimate(eigenvalues, max_k);
    let k = estimated.clamp(2, n);
    let lead: Vec<Vec<f64>> = rows.iter().map(|r| r[..k.min(r.len())].to_vec()).collect();
    let clusters = kmeans(&lead, k, &KMeansParams { seed: cfg.seed, ..KMeansParams::default() })?;
    Ok((estimated, clusters))
}

/// Runs the analysis for every class found in the inputs, up to
/// `opts.until`, reusing stage outputs whose inputs are unchanged.
pub fn run_pipeline(cfg: &PipelineConfig, opts: &RunOptions) -> std::result::Result<Manifest, PipelineError> {
    cfg.validate().map_err(PipelineError::Config)?;
    let out = cfg.resolved_out_dir().map_err(PipelineError::Config)?;
    fs::create_dir_all(&out).map_err(Error::from).at(Stage::Attribute)?;
    let mut ctx = Ctx { out, manifest: Manifest::default() };
    let data_dir = cfg.data_dir.clone();

    // attribute
    let (meta_path, atr_dir) = if data_dir.join(DATASET_FILE).is_file() {
        let atr_dir = ctx.out.join("attributions");
        let meta_path = atr_dir.join(META_FILE);
        let mut key = KeyBuilder::new("attribute");
        key.file(&data_dir.join(DATASET_FILE)).at(Stage::Attribute)?;
        key.file(&data_dir.join(MODEL_FILE)).at(Stage::Attribute)?;
        let key = key.finish();
        let mut outputs = vec![meta_path.clone()];
        if let Ok(meta) = read_meta_csv(&meta_path) {
            let classes: std::collections::BTreeSet<usize> = meta.iter().map(|m| m.class_id).collect();
            outputs.extend(classes.iter().map(|&c| atr_dir.join(class_atr_name(c))));
        }
        let fresh = is_fresh(&outputs, &key);
        let outputs = if fresh {
            outputs
        } else {
            let written = attribute(&data_dir, &meta_path, &atr_dir).at(Stage::Attribute)?;
            stamp(&written, &key).at(Stage::Attribute)?;
            written
        };
        let status = if fresh { StageStatus::Cached } else { StageStatus::Computed };
        info!("attribute: {status}");
        ctx.manifest.records.push(StageRecord { stage: Stage::Attribute, class_id: None, status, outputs });
        (meta_path, atr_dir)
    } else if data_dir.join(META_FILE).is_file() {
        ctx.manifest.records.push(StageRecord {
            stage: Stage::Attribute,
            class_id: None,
            status: StageStatus::Provided,
            outputs: Vec::new(),
        });
        (data_dir.join(META_FILE), data_dir.clone())
    } else {
        return Err(PipelineError::Stage {
            stage: Stage::Attribute,
            source: Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!(
                    "{} holds neither {DATASET_FILE} + {MODEL_FILE} nor {META_FILE} + class_<c>.atr",
                    data_dir.display()
                ),
            )),
        });
    };
    if opts.until == Stage::Attribute {
        return Ok(ctx.manifest);
    }

    let meta = read_meta_csv(&meta_path).at(Stage::Attribute)?;
    let classes: Vec<usize> = {
        let mut c: Vec<usize> = meta.iter().map(|m| m.class_id).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    if classes.is_empty() {
        return Err(PipelineError::Stage { stage: Stage::Attribute, source: Error::EmptyDataset });
    }
    let cfg_text = |extra: &[(&str, String)]| {
        let mut s = String::new();
        for (k, v) in extra {
            s.push_str(&format!("{k}={v};"));
        }
        s
    };

    let mut reports = Vec::new();
    let mut class_outputs = Vec::new();
    for &c in &classes {
        let dir = ctx.class_dir(c);
        let source = atr_dir.join(class_atr_name(c));

        // preprocess
        let maps_path = match cfg.preprocess_grid {
            None => {
                ctx.manifest.records.push(StageRecord {
                    stage: Stage::Preprocess,
                    class_id: Some(c),
                    status: StageStatus::Skipped,
                    outputs: Vec::new(),
                });
                source.clone()
            }
            Some((gh, gw)) => {
                let p = dir.join("pooled.atr");
                let mut key = KeyBuilder::new("preprocess");
                key.part(format!("{gh},{gw}").as_bytes()).file(&source).at(Stage::Preprocess)?;
                let src = source.clone();
                let dst = p.clone();
                let meta_ref = &meta;
                ctx.stage(Stage::Preprocess, Some(c), vec![p.clone()], &key.finish(), move || {
                    let cm = load_class(meta_ref, c, &src)?;
                    let pooled = cm.iter().map(|m| sum_pool_grid(m, (gh, gw))).collect::<Result<Vec<_>>>()?;
                    write(&dst, &encode_atr1(&pooled)?)
                })?;
                p
            }
        };
        if opts.until == Stage::Preprocess {
            continue;
        }

        // distances
        let dst_path = dir.join("distances.dst");
        let mut key = KeyBuilder::new("distances");
        key.part(
            cfg_text(&[
                ("metric", cfg.distance_metric.name().into()),
                ("se", cfg.sinkhorn_epsilon.to_string()),
                ("st", cfg.sinkhorn_tol.to_string()),
                ("si", cfg.sinkhorn_max_iter.to_string()),
                ("ge", cfg.gw_epsilon.to_string()),
                ("go", cfg.gw_outer_iter.to_string()),
            ])
            .as_bytes(),
        )
        .file(&maps_path)
        .at(Stage::Distances)?;
        {
            let (mp, dp, meta_ref) = (maps_path.clone(), dst_path.clone(), &meta);
            let params = distance_params(cfg);
            ctx.stage(Stage::Distances, Some(c), vec![dst_path.clone()], &key.finish(), move || {
                let cm = load_class(meta_ref, c, &mp)?;
                let d = pairwise_distance_matrix(&cm, cfg.distance_metric, &params)?;
                write(&dp, &encode_dst1(&d)?)
            })?;
        }
        if opts.until == Stage::Distances {
            continue;
        }

        // affinity
        let aff_path = dir.join("affinity.coo");
        let mut key = KeyBuilder::new("affinity");
        key.part(cfg.knn_k.to_string().as_bytes()).file(&dst_path).at(Stage::Affinity)?;
        {
            let (dp, ap) = (dst_path.clone(), aff_path.clone());
            ctx.stage(Stage::Affinity, Some(c), vec![aff_path.clone()], &key.finish(), move || {
                let d = decode_dst1(&fs::read(&dp)?)?;
                let g = knn_affinity(&d, cfg.knn_k)?;
                write(&ap, affinity_to_coo(&g).as_bytes())
            })?;
        }
        if opts.until == Stage::Affinity {
            continue;
        }

        // spectral
        let n = meta.iter().filter(|m| m.class_id == c).count();
        let emb_path = dir.join("embedding.emb");
        let q = cfg.q.min(n);
        if q < cfg.q {
            warn!("class {c}: q = {} exceeds {n} samples, using {q}", cfg.q);
        }
        let mut key = KeyBuilder::new("spectral");
        key.part(format!("{q};{}", cfg.seed).as_bytes()).file(&aff_path).at(Stage::Spectral)?;
        {
            let (ap, ep) = (aff_path.clone(), emb_path.clone());
            ctx.stage(Stage::Spectral, Some(c), vec![emb_path.clone()], &key.finish(), move || {
                let g = affinity_from_coo(&fs::read_to_string(&ap)?, n, cfg.knn_k)?;
                let l = laplacians(&g)?;
                let e = lanczos_eigs(&l.l_sym, q, &LanczosParams { seed: cfg.seed, ..LanczosParams::default() })?;
                write(&ep, &encode_emb1(&e)?)
            })?;
        }
        if opts.until == Stage::Spectral {
            continue;
        }

        // rank
        let tau_path = dir.join("tau.csv");
        let labels_path = dir.join("clusters.csv");
        let mut key = KeyBuilder::new("rank");
        key.part(
            cfg_text(&[
                ("kmin", cfg.kmeans_k_min.to_string()),
                ("kmax", cfg.kmeans_k_max.to_string()),
                ("ridge", cfg.ridge.to_string()),
                ("seed", cfg.seed.to_string()),
            ])
            .as_bytes(),
        )
        .file(&emb_path)
        .at(Stage::Rank)?;
        key.file(&meta_path).at(Stage::Rank)?;
        {
            let (ep, tp, lp, meta_ref) = (emb_path.clone(), tau_path.clone(), labels_path.clone(), &meta);
            ctx.stage(Stage::Rank, Some(c), vec![tau_path.clone(), labels_path.clone()], &key.finish(), move || {
                let e = decode_emb1(&fs::read(&ep)?)?;
                let rows = e.rows();
                let params = TauParams {
                    k_min: cfg.kmeans_k_min,
                    k_max: cfg.kmeans_k_max,
                    seed: cfg.seed,
                    ridge: cfg.ridge,
                    ..TauParams::default()
                };
                let rep = tau_score(c, &rows, &params)?;
                write_tau_csv(&tp, &rep)?;
                let (_, clusters) = report_clusters(&e.eigenvalues, &rows, cfg)?;
                let ids: Vec<u64> = meta_ref.iter().filter(|m| m.class_id == c).map(|m| m.sample_id).collect();
                write_labels(&lp, &ids, &clusters.labels)
            })?;
        }
        reports.push(read_tau_csv(&tau_path, c).at(Stage::Rank)?);
        if opts.until == Stage::Rank {
            continue;
        }

        // embed
        let tsne_path = dir.join("tsne.csv");
        let perplexity = cfg.tsne_perplexity.min(n as f64 / 3.0 * 0.999);
        if perplexity < cfg.tsne_perplexity {
            warn!("class {c}: perplexity {} too large for {n} samples, using {perplexity}", cfg.tsne_perplexity);
        }
        let mut key = KeyBuilder::new("embed");
        key.part(format!("{perplexity};{};{}", cfg.tsne_iters, cfg.seed).as_bytes())
            .file(&emb_path)
            .at(Stage::Embed)?;
        {
            let (ep, tp) = (emb_path.clone(), tsne_path.clone());
            ctx.stage(Stage::Embed, Some(c), vec![tsne_path.clone()], &key.finish(), move || {
                let e = decode_emb1(&fs::read(&ep)?)?;
                let params = TsneParams {
                    perplexity,
                    iters: cfg.tsne_iters,
                    seed: cfg.seed,
                    ..TsneParams::default()
                };
                write_coords(&tp, &tsne(&e.rows(), &params)?.coords)
            })?;
        }
        class_outputs.push((c, emb_path, labels_path, tsne_path));
    }

    if opts.until < Stage::Rank {
        return Ok(ctx.manifest);
    }
    ctx.manifest.ranking = rank_classes(reports);
    let ranking_path = ctx.out.join("tau_ranking.csv");
    let mut key = KeyBuilder::new("ranking");
    for &c in &classes {
        key.file(&ctx.class_dir(c).join("tau.csv")).at(Stage::Rank)?;
    }
    {
        let (rp, ranking) = (ranking_path.clone(), &ctx.manifest.ranking.clone());
        ctx.stage(Stage::Rank, None, vec![ranking_path], &key.finish(), move || {
            let mut buf = Vec::new();
            write_ranking_csv(&mut buf, ranking)?;
            write(&rp, &buf)
        })?;
    }
    if opts.until < Stage::Report {
        return Ok(ctx.manifest);
    }

    // report: its file list depends on the clusters, so it is kept beside the stamp
    let mut key = KeyBuilder::new("report");
    key.part(format!("{};{}", cfg.title, opts.reproducible).as_bytes());
    for (_, emb_path, labels_path, tsne_path) in &class_outputs {
        for p in [emb_path, labels_path, tsne_path] {
            key.file(p).at(Stage::Report)?;
        }
    }
    key.file(&ctx.out.join("tau_ranking.csv")).at(Stage::Report)?;
    let key = key.finish();
    let list_path = ctx.out.join("cache").join("report.files");
    let listed: Vec<PathBuf> = fs::read_to_string(&list_path)
        .map(|t| t.lines().map(|l| ctx.out.join(l)).collect())
        .unwrap_or_default();
    let (status, outputs) = if is_fresh(&listed, &key) {
        (StageStatus::Cached, listed)
    } else {
        let written = render(cfg, opts, &meta, &class_outputs, &ctx.manifest.ranking, &ctx.out).at(Stage::Report)?;
        let text: String = written
            .iter()
            .map(|p| format!("{}\n", p.strip_prefix(&ctx.out).unwrap_or(p).display()))
            .collect();
        write(&list_path, text.as_bytes()).at(Stage::Report)?;
        stamp(&written, &key).at(Stage::Report)?;
        (StageStatus::Computed, written)
    };
    info!("report: {status}");
    ctx.manifest.records.push(StageRecord { stage: Stage::Report, class_id: None, status, outputs });
    Ok(ctx.manifest)
}

fn render(
    cfg: &PipelineConfig,
    opts: &RunOptions,
    meta: &[SampleMeta],
    class_outputs: &[(usize, PathBuf, PathBuf, PathBuf)],
    ranking: &[SeparabilityReport],
    out: &Path,
) -> Result<Vec<PathBuf>> {
    struct Loaded {
        class_id: usize,
        ids: Vec<u64>,
        eigenvalues: Vec<f64>,
        estimated_k: usize,
        embedding: PlanarEmbedding,
        clusters: ClusterAssignment,
    }
    let mut loaded = Vec::new();
    for (c, emb_path, labels_path, tsne_path) in class_outputs {
        let e = decode_emb1(&fs::read(emb_path)?)?;
        let max_k = cfg.kmeans_k_max.min(e.eigenvalues.len().saturating_sub(1));
        loaded.push(Loaded {
            class_id: *c,
            ids: meta.iter().filter(|m| m.class_id == *c).map(|m| m.sample_id).collect(),
            estimated_k: eigengap_estimate(&e.eigenvalues, max_k),
            eigenvalues: e.eigenvalues,
            embedding: PlanarEmbedding {
                coords: read_coords(tsne_path)?,
                kl_divergence: 0.0,
                perplexity: cfg.tsne_perplexity,
                seed: cfg.seed,
                checkpoints: Vec::new(),
            },
            clusters: read_labels(labels_path, cfg.seed)?,
        });
    }
    let views: Vec<ClassView> = loaded
        .iter()
        .map(|l| ClassView {
            class_id: l.class_id,
            sample_ids: &l.ids,
            eigenvalues: &l.eigenvalues,
            estimated_k: l.estimated_k,
            embedding: &l.embedding,
            clusters: &l.clusters,
        })
        .collect();
    let title = if cfg.title.is_empty() { "Spectral relevance analysis".to_string() } else { cfg.title.clone() };
    render_report(&views, ranking, out, &ReportOptions { title, reproducible: opts.reproducible })
}
