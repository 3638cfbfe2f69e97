use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use densescan::bbox::BBox;
use densescan::detector::{render_heatmap, write_jsonl, DetectConfig, Detector};
use densescan::eval::{evaluate_files, load_ground_truth, GtFormat};
use densescan::image::Image;
use densescan::model_io::{load_model_prefix, parse_manifest, save_model_prefix, ModelPaths};
use densescan::nms::{NmsConfig, NmsStrategy};
use densescan::nnet::{mininet, LayerSpec, Network};
use densescan::overlay::render_overlay;
use densescan::pyramid::PyramidConfig;
use densescan::regressor::{load_regressor, pair_samples, save_regressor, train_regressor, PAIRING_IOU};
use densescan::sampler::{build_pools, derive_seed, parse_poses, pose_histogram, BatchSpec, PatchConfig, PoolConfig};
use densescan::trainer::{train_on_corpus, TrainConfig};

use crate::{Command, DetectArgs, EvalArgs, GtChoice, ModelInfoArgs, NmsChoice, PoseArgs, SampleArgs, TrainArgs};

const IMAGE_EXTENSIONS: [&str; 4] = ["pgm", "ppm", "pnm", "png"];

pub(crate) fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Detect(a) => detect(a),
        Command::Eval(a) => eval(a),
        Command::Train(a) => train(a),
        Command::Sample(a) => sample(a),
        Command::AnalyzePoses(a) => analyze_poses(a),
        Command::ModelInfo(a) => model_info(a),
    }
}

fn load_model(prefix: &Path) -> Result<Network> {
    load_model_prefix(prefix).with_context(|| format!("loading model {}", prefix.display()))
}

/// Writes to `path`, or to standard output when there is none.
fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn file_stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .with_context(|| format!("cannot derive an image id from {}", path.display()))
}

fn detect(a: DetectArgs) -> Result<()> {
    let net = load_model(&a.model)?;
    let img = Image::load(&a.image).with_context(|| format!("loading image {}", a.image.display()))?;
    let image_id = match a.image_id {
        Some(id) => id,
        None => file_stem(&a.image)?,
    };
    let mut nms = match a.nms {
        NmsChoice::Avg => NmsConfig::avg(),
        NmsChoice::Max => NmsConfig::max(),
    };
    if let Some(t) = a.nms_threshold {
        nms.overlap = t;
    }
    let cfg = DetectConfig {
        pyramid: PyramidConfig { upscale: a.upscale, ratio: a.fs, ..Default::default() },
        score_floor: a.score_floor,
        nms,
        threads: a.threads,
    };
    let mut detector = Detector::new(&net, cfg)?;
    if let Some(r) = &a.regressor {
        let model = load_regressor(r).with_context(|| format!("loading regressor {}", r.display()))?;
        detector = detector.with_regressor(model)?;
    }
    let dets = detector.detect(&img)?;
    eprintln!(
        "{image_id}: {} detections ({} nms)",
        dets.len(),
        if nms.strategy == NmsStrategy::Avg { "avg" } else { "max" }
    );

    let mut buf = Vec::new();
    write_jsonl(&mut buf, &image_id, &dets)?;
    write_output(a.out.as_deref(), std::str::from_utf8(&buf)?)?;

    if let Some(path) = &a.overlay {
        render_overlay(&img, &dets)?.save(path).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(dir) = &a.heatmap_out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for map in detector.heatmaps(&img)? {
            render_heatmap(&map).save(dir.join(format!("level_{:02}.pgm", map.level)))?;
        }
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let format = match a.format {
        GtChoice::Rect => GtFormat::Rect,
        GtChoice::Fddb => GtFormat::Fddb,
    };
    let report = evaluate_files(&a.dets, &a.gt, format, a.iou)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(path) = &a.pr_out {
        std::fs::write(path, report.curve.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{}", report.summary());
    Ok(())
}

/// Every image in `dir` (sorted by name) with its boxes; images without
/// annotations contribute negatives only.
fn load_corpus(dir: &Path, gt: &Path) -> Result<Vec<(String, Image, Vec<BBox>)>> {
    let gts = load_ground_truth(gt, GtFormat::Rect)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| {
        p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
    });
    files.sort();
    let mut corpus = Vec::with_capacity(files.len());
    for path in &files {
        let id = file_stem(path)?;
        let boxes = gts.iter().find(|g| g.image == id).map(|g| g.boxes.clone()).unwrap_or_default();
        let img = Image::load(path).with_context(|| format!("loading image {}", path.display()))?;
        corpus.push((id, img, boxes));
    }
    for g in &gts {
        if !corpus.iter().any(|(id, _, _)| *id == g.image) {
            eprintln!("warning: no image for annotated id `{}`", g.image);
        }
    }
    if corpus.is_empty() {
        bail!("no pgm, ppm or png images in {}", dir.display());
    }
    if corpus.iter().all(|(_, _, b)| b.is_empty()) {
        bail!("no annotated faces among the images in {}", dir.display());
    }
    Ok(corpus)
}

fn train(a: TrainArgs) -> Result<()> {
    let corpus = load_corpus(&a.images, &a.gt)?;
    // independent streams for initialisation, pools and batches
    let init =
        if a.init == "random" { mininet::mininet(derive_seed(a.seed, 0)) } else { load_model(Path::new(&a.init))? };
    let cfg = TrainConfig {
        learning_rate: a.learning_rate,
        iterations: a.iterations,
        batch: BatchSpec { size: a.batch_size, positive_fraction: a.positive_fraction },
        seed: derive_seed(a.seed, 2),
        ..Default::default()
    };
    let faces: usize = corpus.iter().map(|c| c.2.len()).sum();
    eprintln!("training on {} images with {faces} faces for {} iterations", corpus.len(), a.iterations);
    let every = (a.iterations / 10).max(1);
    let (net, outcome) =
        train_on_corpus(&init, &corpus, &PoolConfig::default(), &cfg, derive_seed(a.seed, 1), |i, r| {
            if i % every == 0 || i + 1 == a.iterations {
                eprintln!("iteration {i} risk {r:.6}");
            }
        })?;
    let paths = save_model_prefix(&net, &a.out)?;
    eprintln!("wrote {} and {}", paths.manifest.display(), paths.weights.display());
    if let Some(path) = &a.risk_out {
        std::fs::write(path, outcome.risk_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(prefix) = &a.regressor_out {
        let detector = Detector::new(&net, DetectConfig::default())?;
        let mut samples = Vec::new();
        for (_, img, boxes) in corpus.iter().filter(|c| !c.2.is_empty()) {
            samples.extend(pair_samples(&detector.candidates_with_features(img)?, boxes, PAIRING_IOU));
        }
        if samples.is_empty() {
            bail!("no detections overlap a face by {PAIRING_IOU}; cannot fit a regressor");
        }
        let model = train_regressor(&samples, a.lambda)?;
        let paths = save_regressor(&model, prefix)?;
        eprintln!("regressor fitted on {} pairs, wrote {}", samples.len(), paths.manifest.display());
    }
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let corpus: Vec<_> =
        load_corpus(&a.images, &a.gt)?.into_iter().map(|(id, img, b)| (id, img.to_gray(), b)).collect();
    let pools = PoolConfig {
        positives_per_image: a.positives_per_image,
        negatives_per_image: a.negatives_per_image,
        ..Default::default()
    };
    let (pos, neg) = build_pools(&corpus, &pools, &PatchConfig::new(a.window), a.seed)?;
    densescan::sampler::write_patch_dump(a.out.join("positive"), &pos)?;
    densescan::sampler::write_patch_dump(a.out.join("negative"), &neg)?;
    println!("positives {}\nnegatives {}", pos.len(), neg.len());
    Ok(())
}

fn analyze_poses(a: PoseArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.poses).with_context(|| format!("reading {}", a.poses.display()))?;
    let annos = parse_poses(&text, &a.poses.display().to_string())?;
    let hist = pose_histogram(&annos, a.bin_width)?;
    eprintln!("{} annotations", annos.len());
    write_output(a.out.as_deref(), &hist.to_csv())
}

fn model_info(a: ModelInfoArgs) -> Result<()> {
    let paths = ModelPaths::from_prefix(&a.model);
    let text =
        std::fs::read_to_string(&paths.manifest).with_context(|| format!("reading {}", paths.manifest.display()))?;
    let manifest = parse_manifest(&text, &paths.manifest.display().to_string())?;
    let specs: Vec<LayerSpec> = manifest.layers.iter().map(|(s, _)| s.clone()).collect();
    let geometry = densescan::nnet::receptive_geometry(&specs)?;
    let params: u64 = manifest.layers.iter().filter_map(|(_, s)| s.map(|s| s.count)).sum();

    let mut out = BufWriter::new(std::io::stdout().lock());
    writeln!(out, "input_channels {}", manifest.input_channels)?;
    writeln!(out, "window {}", geometry.window)?;
    writeln!(out, "stride {}", geometry.stride)?;
    writeln!(out, "exact_geometry {}", geometry.valid)?;
    writeln!(out, "parameters {params}")?;
    writeln!(out, "layers {}", specs.len())?;
    for (i, spec) in specs.iter().enumerate() {
        writeln!(out, "{i} {}", describe(spec))?;
    }
    out.flush()?;
    Ok(())
}

fn describe(spec: &LayerSpec) -> String {
    match spec {
        LayerSpec::Convolution(c) => format!(
            "conv {}x{} stride {} pad {} {} -> {}{}",
            c.kernel,
            c.kernel,
            c.stride,
            c.padding,
            c.in_channels,
            c.out_channels,
            if c.from_fc { " (from fc)" } else { "" }
        ),
        LayerSpec::MaxPool(p) => format!("maxpool {}x{} stride {} pad {}", p.kernel, p.kernel, p.stride, p.padding),
        LayerSpec::FullyConnected(f) => format!("fc {} -> {}", f.input, f.outputs),
        LayerSpec::LocalResponseNorm(l) => {
            format!("lrn size {} alpha {} beta {} k {}", l.local_size, l.alpha, l.beta, l.k)
        }
        LayerSpec::Relu => "relu".to_string(),
        LayerSpec::Softmax => "softmax".to_string(),
    }
}
