//! Run orchestration: corpus synthesis, training, segmentation, evaluation,
//! sweeps and saliency rendering over a [`RunConfig`].

mod config;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use image::{Rgb, RgbImage};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{
    ArchKind, CorpusSection, EvalSection, GridSection, ModelSection, PairSection, RunConfig, SegmentSection,
};

use crate::blob_detect::{pca_project, threshold_blob_lines, to_pseudo_rgb, BlobLineMap, PseudoRgbImage};
use crate::doc_io::{
    binarize, generate_synthetic_page, load_document, load_label_png, parse_page_xml, rasterize_ground_truth,
    save_document_png, save_label_png, save_mask_png, write_page_xml, BinaryImage, DocumentImage, LabelMap,
};
use crate::error::{Error, Result};
use crate::eval_metrics::{evaluate, mean_scores, write_metrics_csv, PageMetrics};
use crate::feature_grid::{extract_grid, saliency_map, EmbeddingGrid};
use crate::line_extract::{extract_lines, SegmentationResult};
use crate::nn::{load_checkpoint, save_checkpoint, train, DatasetView, ModelState, TrainLog};
use crate::pair_gen::{build_pair_dataset, PageSampler, Split};

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "tif", "tiff"];

/// What a command managed to do; pages it had to skip make the run partial.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Outcome {
    pub skipped: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        if self.skipped.is_empty() {
            0
        } else {
            2
        }
    }
}

/// Map `f` over `items` on up to `jobs` threads, keeping input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write the resolved config next to a command's outputs.
pub fn write_effective_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join("config.toml"), cfg.effective().to_toml())
}

pub fn page_id(index: usize) -> String {
    format!("page_{index:04}")
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }

    /// Paths whose current content no longer matches the recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for entry in &self.files {
            let path = dir.join(&entry.path);
            if !path.exists() || sha256_file(&path)? != entry.sha256 {
                bad.push(entry.path.clone());
            }
        }
        Ok(bad)
    }
}

/// Render pages `first..first + count` into `dir/{images,labels,xml}` plus a manifest.
pub fn synth_corpus(cfg: &RunConfig, dir: &Path, first: usize, count: usize) -> Result<Manifest> {
    for sub in ["images", "labels", "xml"] {
        create_dir(&dir.join(sub))?;
    }
    let mut manifest = Manifest::default();
    for index in first..first + count {
        let page = generate_synthetic_page(&cfg.synth_config(index))?;
        let id = page_id(index);
        let image_name = format!("{id}.png");
        let rel = [
            format!("images/{image_name}"),
            format!("labels/{id}.png"),
            format!("xml/{id}.xml"),
        ];
        save_document_png(&page.image, dir.join(&rel[0]))?;
        save_label_png(&page.labels, dir.join(&rel[1]))?;
        let (h, w) = page.image.dims();
        write_file(&dir.join(&rel[2]), write_page_xml(&page.lines, &image_name, h, w))?;
        for r in rel {
            let sha256 = sha256_file(&dir.join(&r))?;
            manifest.files.push(ManifestEntry { path: r, sha256 });
        }
    }
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join("manifest.json"), json)?;
    Ok(manifest)
}

/// `corpus/train` and `corpus/holdout` under `out`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let train_dir = out.join("train");
    let holdout_dir = out.join("holdout");
    let n = cfg.corpus.pages;
    synth_corpus(cfg, &train_dir, 0, n)?;
    synth_corpus(cfg, &holdout_dir, n, cfg.corpus.holdout_pages)?;
    write_effective_config(cfg, out)?;
    info!("wrote {n} training and {} held-out pages to {}", cfg.corpus.holdout_pages, out.display());
    Ok(Outcome::default())
}

// ---------------------------------------------------------------- inputs

/// Image files directly in `path`, or `path` itself, sorted by name.
pub fn list_images(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let dir = if path.join("images").is_dir() {
        path.join("images")
    } else {
        path.to_path_buf()
    };
    let rd = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut out: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    Ok(out)
}

pub fn load_pages(path: &Path) -> Result<Vec<DocumentImage>> {
    list_images(path)?.iter().map(load_document).collect()
}

// ---------------------------------------------------------------- train

pub fn init_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Build pairs from `docs` and train, continuing from `resume` when given.
pub fn train_model(cfg: &RunConfig, docs: &[DocumentImage], resume: Option<ModelState>) -> Result<(ModelState, TrainLog)> {
    if docs.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    let ds = build_pair_dataset(docs, &cfg.pair_config(), cfg.seed)?;
    info!("built {} pairs from {} pages", ds.len(), docs.len());
    let tr = DatasetView {
        dataset: &ds,
        indices: ds.split_indices(Split::Train),
    };
    let va = DatasetView {
        dataset: &ds,
        indices: ds.split_indices(Split::Validation),
    };
    let model = match resume {
        Some(m) => {
            if m.arch() != &cfg.arch() {
                return Err(Error::Config("checkpoint architecture differs from the configured one".into()));
            }
            m
        }
        None => ModelState::init(&cfg.arch(), init_seed(cfg.seed))?,
    };
    train(model, &tr, &va, &cfg.train_config())
}

pub fn cmd_train(cfg: &RunConfig, corpus: &Path, resume: bool) -> Result<Outcome> {
    let docs = load_pages(corpus)?;
    let ckpt = cfg.checkpoint_path(cfg.patch_size);
    let start = if resume {
        Some(load_checkpoint(&ckpt)?)
    } else {
        None
    };
    let (model, log) = train_model(cfg, &docs, start)?;
    create_dir(&cfg.run_dir)?;
    save_checkpoint(&model, &ckpt)?;
    let csv = cfg.run_dir.join(format!("train_log_p{}.csv", cfg.patch_size));
    if resume && csv.exists() {
        let old = std::fs::read_to_string(&csv).map_err(|e| Error::io(&csv, e))?;
        let new = log.to_csv();
        let rows = new.lines().skip(1).map(|l| format!("{l}\n")).collect::<String>();
        write_file(&csv, old + &rows)?;
    } else {
        log.write_csv(&csv)?;
    }
    write_effective_config(cfg, &cfg.run_dir)?;
    if let Some(best) = log.best_record() {
        info!("best epoch {} val_acc {:.4}; checkpoint {}", best.epoch, best.val_acc, ckpt.display());
    }
    Ok(Outcome::default())
}

pub fn load_model(cfg: &RunConfig, patch_size: usize) -> Result<ModelState> {
    let path = cfg.checkpoint_path(patch_size);
    if !path.exists() {
        return Err(Error::Checkpoint(format!("missing checkpoint {}", path.display())));
    }
    let model: ModelState = load_checkpoint(&path)?;
    if model.input_side() != patch_size {
        return Err(Error::Checkpoint(format!(
            "{} takes {}px patches, config asks for {patch_size}",
            path.display(),
            model.input_side()
        )));
    }
    Ok(model)
}

// ---------------------------------------------------------------- segment

/// Every stage output for one page.
#[derive(Debug, Clone)]
pub struct PageSegmentation {
    pub page_id: String,
    pub ink: BinaryImage,
    pub grid: EmbeddingGrid,
    pub pseudo_rgb: PseudoRgbImage,
    pub blobs: BlobLineMap,
    pub result: SegmentationResult,
}

pub fn segment_page(model: &ModelState, doc: &DocumentImage, cfg: &RunConfig) -> Result<PageSegmentation> {
    let (ink, _) = binarize(doc);
    let grid = extract_grid(model, doc, &cfg.grid_config()?)?;
    let proj = pca_project(&grid)?;
    let pseudo_rgb = to_pseudo_rgb(&proj);
    let blobs = threshold_blob_lines(&pseudo_rgb, &ink, &cfg.blobs)?;
    let result = extract_lines(&ink, &blobs, &cfg.lines)?;
    if result.fallback {
        warn!("{}: no blob lines found, all ink assigned to one line", doc.id);
    }
    Ok(PageSegmentation {
        page_id: doc.id.clone(),
        ink,
        grid,
        pseudo_rgb,
        blobs,
        result,
    })
}

pub fn write_page_outputs(seg: &PageSegmentation, image_filename: &str, dir: &Path, save_intermediate: bool) -> Result<()> {
    create_dir(dir)?;
    seg.pseudo_rgb.save_png(seg.grid.cfg.window, dir.join("pseudo_rgb.png"))?;
    save_mask_png(&seg.ink, dir.join("ink.png"))?;
    save_mask_png(&seg.blobs.mask, dir.join("blobs.png"))?;
    save_label_png(&seg.blobs.labels, dir.join("blob_labels.png"))?;
    save_label_png(&seg.result.labels, dir.join("labels.png"))?;
    save_color_labels(&seg.result.labels, dir.join("lines_color.png"))?;
    seg.result.save_json(dir.join("lines.json"))?;
    write_file(&dir.join("lines.xml"), seg.result.to_page_xml(image_filename))?;
    let grid_path = dir.join("grid.lwgr");
    if save_intermediate {
        seg.grid.save(&grid_path)?;
    } else if grid_path.exists() {
        std::fs::remove_file(&grid_path).map_err(|e| Error::io(&grid_path, e))?;
    }
    Ok(())
}

/// Segment one image or every image of a directory into `out/<page id>/`.
pub fn cmd_segment(cfg: &RunConfig, input: &Path, out: &Path) -> Result<Outcome> {
    let model = load_model(cfg, cfg.patch_size)?;
    let files = list_images(input)?;
    if files.is_empty() {
        return Err(Error::invalid(format!("no images under {}", input.display())));
    }
    create_dir(out)?;
    write_effective_config(cfg, out)?;
    let results = par_map(&files, cfg.jobs, |path| -> Result<String> {
        let doc = load_document(path)?;
        let seg = segment_page(&model, &doc, cfg)?;
        let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        write_page_outputs(&seg, &name, &out.join(&doc.id), cfg.segment.save_intermediate)?;
        info!("{}: {} lines", doc.id, seg.result.line_count());
        Ok(doc.id)
    });
    let mut outcome = Outcome::default();
    for (path, r) in files.iter().zip(results) {
        if let Err(e) = r {
            eprintln!("skipped {}: {e}", path.display());
            outcome.skipped.push(path.display().to_string());
        }
    }
    Ok(outcome)
}

// ---------------------------------------------------------------- eval

fn stems(dir: &Path, ext: &str) -> BTreeSet<String> {
    let Ok(rd) = std::fs::read_dir(dir) else {
        return BTreeSet::new();
    };
    rd.filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(ext))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect()
}

/// Page ids with a prediction: `dir/<id>/labels.png` or `dir/labels/<id>.png`.
pub fn prediction_ids(dir: &Path) -> BTreeSet<String> {
    let mut ids = stems(&dir.join("labels"), "png");
    if let Ok(rd) = std::fs::read_dir(dir) {
        for e in rd.flatten() {
            if e.path().join("labels.png").is_file() {
                ids.insert(e.file_name().to_string_lossy().into_owned());
            }
        }
    }
    ids
}

fn prediction_path(dir: &Path, id: &str) -> PathBuf {
    let nested = dir.join(id).join("labels.png");
    if nested.is_file() {
        nested
    } else {
        dir.join("labels").join(format!("{id}.png"))
    }
}

/// Page ids with ground truth: `dir/labels/<id>.png` or `dir/xml/<id>.xml`.
pub fn ground_truth_ids(dir: &Path) -> BTreeSet<String> {
    let mut ids = stems(&dir.join("labels"), "png");
    ids.extend(stems(&dir.join("xml"), "xml"));
    ids
}

fn foreground_for(pred_dir: &Path, gt_dir: &Path, id: &str) -> Result<Option<BinaryImage>> {
    let ink = pred_dir.join(id).join("ink.png");
    if ink.is_file() {
        let m = load_label_png(&ink)?;
        let mask = m.labels().iter().map(|&v| v > 0).collect();
        return Ok(Some(BinaryImage::new(m.height(), m.width(), mask)?));
    }
    for ext in IMAGE_EXTENSIONS {
        let img = gt_dir.join("images").join(format!("{id}.{ext}"));
        if img.is_file() {
            return Ok(Some(binarize(&load_document(&img)?).0));
        }
    }
    Ok(None)
}

/// Score a prediction against `gt_dir`'s ground truth for `id`. PAGE-XML is
/// rasterized at the prediction's size and, with `eval.foreground_only`,
/// restricted to `ink`.
pub fn score_page(
    cfg: &RunConfig,
    pred: &LabelMap,
    ink: impl FnOnce() -> Result<Option<BinaryImage>>,
    gt_dir: &Path,
    id: &str,
) -> Result<PageMetrics> {
    let gt_png = gt_dir.join("labels").join(format!("{id}.png"));
    let (gt, from_xml): (LabelMap, bool) = if gt_png.is_file() {
        (load_label_png(&gt_png)?, false)
    } else {
        let lines = parse_page_xml(gt_dir.join("xml").join(format!("{id}.xml")))?;
        (rasterize_ground_truth(&lines, pred.height(), pred.width()).labels, true)
    };
    let fg = if from_xml && cfg.eval.foreground_only {
        ink()?
    } else {
        None
    };
    let report = evaluate(pred, &gt, cfg.eval.theta, fg.as_ref())?;
    Ok(PageMetrics::from_report(id, &report))
}

pub fn evaluate_page(cfg: &RunConfig, pred_dir: &Path, gt_dir: &Path, id: &str) -> Result<PageMetrics> {
    let pred = load_label_png(prediction_path(pred_dir, id))?;
    score_page(cfg, &pred, || foreground_for(pred_dir, gt_dir, id), gt_dir, id)
}

/// Per-page rows plus the ids present on only one side.
pub fn evaluate_dirs(cfg: &RunConfig, pred_dir: &Path, gt_dir: &Path) -> Result<(Vec<PageMetrics>, Vec<String>)> {
    let pred = prediction_ids(pred_dir);
    let gt = ground_truth_ids(gt_dir);
    let mut missing: Vec<String> = pred.symmetric_difference(&gt).cloned().collect();
    let common: Vec<String> = pred.intersection(&gt).cloned().collect();
    let scored = par_map(&common, cfg.jobs, |id| evaluate_page(cfg, pred_dir, gt_dir, id));
    let mut rows = Vec::new();
    for (id, r) in common.iter().zip(scored) {
        match r {
            Ok(m) => rows.push(m),
            Err(e) => {
                eprintln!("{id}: {e}");
                missing.push(id.clone());
            }
        }
    }
    missing.sort();
    Ok((rows, missing))
}

pub fn cmd_eval(cfg: &RunConfig, pred_dir: &Path, gt_dir: &Path, out: &Path) -> Result<Outcome> {
    let (rows, missing) = evaluate_dirs(cfg, pred_dir, gt_dir)?;
    for id in &missing {
        eprintln!("missing or unreadable page: {id}");
    }
    if rows.is_empty() {
        return Err(Error::invalid("no page has both a prediction and ground truth"));
    }
    create_dir(out)?;
    write_metrics_csv(&rows, out.join("metrics.csv"))?;
    let (liu, piu) = mean_scores(&rows);
    info!("{} pages: mean LIU {liu:.4}, mean PIU {piu:.4}", rows.len());
    Ok(Outcome { skipped: missing })
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PatchSize,
    CentralWindow,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::PatchSize => "patch_size",
            SweepAxis::CentralWindow => "central_window",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: &'static str,
    pub value: usize,
    pub pages: usize,
    pub mean_liu: f64,
    pub mean_piu: f64,
    pub skipped: usize,
}

/// Segment and score `input` pages once per value; the checkpoint is only
/// reloaded when the patch size changes.
pub fn run_sweep(cfg: &RunConfig, axis: SweepAxis, values: &[usize], input: &Path, gt_dir: &Path) -> Result<Vec<SweepRow>> {
    let mut variants = Vec::with_capacity(values.len());
    for &v in values {
        let mut c = cfg.clone();
        match axis {
            SweepAxis::PatchSize => c.patch_size = v,
            SweepAxis::CentralWindow => c.central_window = v,
        }
        c.validate()?;
        variants.push(c);
    }
    let missing: Vec<String> = variants
        .iter()
        .map(|c| c.checkpoint_path(c.patch_size))
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !missing.is_empty() {
        return Err(Error::Checkpoint(format!("missing checkpoints: {}", missing.join(", "))));
    }
    let files = list_images(input)?;
    let gt_ids = ground_truth_ids(gt_dir);
    let mut rows = Vec::new();
    let mut loaded: Option<(usize, ModelState)> = None;
    for (c, &value) in variants.iter().zip(values) {
        if loaded.as_ref().map(|(p, _)| *p) != Some(c.patch_size) {
            loaded = Some((c.patch_size, load_model(c, c.patch_size)?));
        }
        let model = &loaded.as_ref().expect("model loaded").1;
        let scored = par_map(&files, c.jobs, |path| -> Result<PageMetrics> {
            let doc = load_document(path)?;
            if !gt_ids.contains(&doc.id) {
                return Err(Error::invalid(format!("no ground truth for {}", doc.id)));
            }
            let seg = segment_page(model, &doc, c)?;
            score_page(c, &seg.result.labels, || Ok(Some(seg.ink.clone())), gt_dir, &doc.id)
        });
        let mut ok = Vec::new();
        let mut skipped = 0;
        for (path, r) in files.iter().zip(scored) {
            match r {
                Ok(m) => ok.push(m),
                Err(e) => {
                    eprintln!("{}={value}: skipped {}: {e}", axis.name(), path.display());
                    skipped += 1;
                }
            }
        }
        let (mean_liu, mean_piu) = mean_scores(&ok);
        info!("{}={value}: LIU {mean_liu:.4} PIU {mean_piu:.4} over {} pages", axis.name(), ok.len());
        rows.push(SweepRow {
            axis: axis.name(),
            value,
            pages: ok.len(),
            mean_liu,
            mean_piu,
            skipped,
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Other(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Other(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn cmd_sweep(cfg: &RunConfig, axis: SweepAxis, values: &[usize], input: &Path, gt_dir: &Path, out: &Path) -> Result<Outcome> {
    let rows = run_sweep(cfg, axis, values, input, gt_dir)?;
    create_dir(out)?;
    write_sweep_csv(&rows, &out.join(format!("sweep_{}.csv", axis.name())))?;
    write_effective_config(cfg, out)?;
    let skipped = rows
        .iter()
        .filter(|r| r.skipped > 0)
        .map(|r| format!("{}={}", r.axis, r.value))
        .collect();
    Ok(Outcome { skipped })
}

// ---------------------------------------------------------------- visualize

/// A stable, well-spread colour per label; 0 stays white.
pub fn label_color(label: u32) -> [u8; 3] {
    if label == 0 {
        return [255, 255, 255];
    }
    let h = label.wrapping_mul(0x9e37_79b1);
    [
        40 + (h >> 24) as u8 % 180,
        40 + (h >> 16) as u8 % 180,
        40 + (h >> 8) as u8 % 180,
    ]
}

pub fn save_color_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = labels.dims();
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| Rgb(label_color(labels.get(y as usize, x as usize))));
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Saliency renderings for `count` sampled patches of one page.
pub fn cmd_visualize(cfg: &RunConfig, input: &Path, out: &Path, count: usize) -> Result<Outcome> {
    let model = load_model(cfg, cfg.patch_size)?;
    let doc = load_document(input)?;
    let (ink, _) = binarize(&doc);
    let sampler = PageSampler::new(&doc, &ink, &cfg.pair_config())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dir = out.join(&doc.id);
    create_dir(&dir)?;
    let p = cfg.patch_size;
    for k in 0..count {
        let patch = sampler.sample_first(&mut rng)?;
        let sal = saliency_map(&model, &patch)?;
        let img = DocumentImage::new(format!("patch_{k}"), p, p, patch.pixels.clone())?;
        save_document_png(&img, dir.join(format!("patch_{k}.png")))?;
        let scale = p.div_ceil(sal.side).max(1);
        let side = (sal.side * scale) as u32;
        let rgb = RgbImage::from_fn(side, side, |x, y| {
            let c = sal.rgb[(y as usize / scale) * sal.side + x as usize / scale];
            Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        });
        let path = dir.join(format!("saliency_{k}.png"));
        rgb.save(&path).map_err(|e| Error::Image {
            path: path.clone(),
            message: e.to_string(),
        })?;
    }
    info!("wrote {count} saliency maps to {}", dir.display());
    Ok(Outcome::default())
}

#[cfg(test)]
mod tests;
