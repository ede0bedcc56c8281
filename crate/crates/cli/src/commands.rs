use std::fs;
use std::path::{Path, PathBuf};

use damage_core::cnn::{
    assemble, build_paper_cnn, cae_pretrain_stage, extract_features, predict_probs, train_cnn, CaeConfig,
    PaperCnnConfig,
};
use damage_core::data::augment::augment_to_counts_with;
use damage_core::data::manifest::{boxes_from_tsv, boxes_to_tsv, BOXES_FILE};
use damage_core::data::{
    class_index, pnm, stratified_split, synth_dataset, AugmentSpec, DatasetManifest, LabeledImage, ManifestEntry,
    Split, CLASS_NAMES, NO_DAMAGE, NUM_CLASSES,
};
use damage_core::eval::{
    align, argmax, confusion, format_id_values, metrics_with, read_id_values, Averaging, MetricsOptions, Report,
};
use damage_core::localize::{
    regions_to_tsv, render_overlay, sliding_window_map, threshold_regions, top_region, LocalizeConfig, Palette,
};
use damage_core::nn::{Network, StageCheckpoint, TrainConfig};
use damage_core::transfer::{
    read_feature_file, train_head, write_feature_file, EnsembleSpec, FeatureSet, HeadHyper, HeadKind, LinearHead,
    Selection, Weighting,
};
use damage_core::Error;

use crate::config::RunConfig;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(Error::Format(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes") + "\n"
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(Error::Format(format!("{}: {e}", path.display()))))
}

/// Output directory with the resolved config recorded in it.
fn prepare_out(cfg: &RunConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    cfg.save(dir)
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let out = cfg.path("out");
    let corpus = synth_dataset(cfg.usize("n")?, cfg.usize("size")?, cfg.u64("seed")?)?;
    prepare_out(cfg, &out)?;
    corpus.write(&out)?;
    println!("wrote {} images to {}", corpus.images.len(), out.display());
    Ok(())
}

fn read_counts(path: &Path) -> Result<Vec<usize>> {
    let v: serde_json::Value = read_json(path)?;
    let bad = || CliError::Config(format!("{}: expected {NUM_CLASSES} non-negative counts", path.display()));
    match v {
        serde_json::Value::Array(items) if items.len() == NUM_CLASSES => items
            .iter()
            .map(|i| i.as_u64().map(|n| n as usize).ok_or_else(bad))
            .collect(),
        serde_json::Value::Object(map) => {
            let mut counts = vec![None; NUM_CLASSES];
            for (name, n) in &map {
                let c = class_index(name)
                    .ok_or_else(|| CliError::Config(format!("{}: unknown class {name:?}", path.display())))?;
                counts[c] = Some(n.as_u64().ok_or_else(bad)? as usize);
            }
            counts.into_iter().map(|c| c.ok_or_else(bad)).collect()
        }
        _ => Err(bad()),
    }
}

pub fn augment(cfg: &RunConfig) -> Result<()> {
    let (input, out) = (cfg.path("in"), cfg.path("out"));
    let spec = AugmentSpec {
        rotation_deg: (cfg.f64("augment.rotation_min")?, cfg.f64("augment.rotation_max")?),
        flip_prob: cfg.f64("augment.flip_prob")?,
        target_counts: Some(read_counts(&cfg.path("counts"))?),
        seed: cfg.u64("seed")?,
    };
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let manifest = DatasetManifest::load(&input)?;
    // Augment the training split, or the whole corpus if nothing is split yet.
    let any_train = manifest.entries.iter().any(|e| e.split == Split::Train);
    let is_source = |e: &ManifestEntry| !any_train || e.split == Split::Train;
    let sources: Vec<LabeledImage> = manifest
        .entries
        .iter()
        .filter(|e| is_source(e))
        .map(|e| {
            let pixels = pnm::read(&manifest.image_path(&input, e), None)?;
            LabeledImage::new(pixels, e.class, e.id.clone())
        })
        .collect::<damage_core::Result<_>>()?;

    prepare_out(cfg, &out)?;
    for name in &manifest.class_names {
        create_dir(&out.join(name))?;
    }
    let mut entries = Vec::new();
    for e in &manifest.entries {
        let src = manifest.image_path(&input, e);
        let dst = manifest.image_path(&out, e);
        fs::copy(&src, &dst).map_err(|err| io_err(&src, err))?;
        let split = if is_source(e) { Split::Train } else { e.split };
        entries.push(ManifestEntry { split, ..e.clone() });
    }
    let mut new_entries = Vec::new();
    augment_to_counts_with(&sources, &spec, |img| {
        let entry = ManifestEntry {
            id: img.source_id.clone(),
            class: img.label,
            split: Split::Train,
        };
        pnm::write(&manifest.image_path(&out, &entry), &img.pixels)?;
        new_entries.push(entry);
        Ok(())
    })?;
    entries.extend(new_entries);
    let result = DatasetManifest {
        class_names: manifest.class_names.clone(),
        entries,
    };
    result.save(&out)?;
    copy_boxes(&input, &out)?;
    let sizes = result.counts(Some(Split::Train));
    let text: Vec<String> = sizes.iter().map(usize::to_string).collect();
    println!("augmented sizes {}", text.join("/"));
    Ok(())
}

fn copy_boxes(from: &Path, to: &Path) -> Result<()> {
    let src = from.join(BOXES_FILE);
    if src.exists() && from != to {
        let text = fs::read_to_string(&src).map_err(|e| io_err(&src, e))?;
        write(&to.join(BOXES_FILE), &boxes_to_tsv(&boxes_from_tsv(&text)?))?;
    }
    Ok(())
}

pub fn split(cfg: &RunConfig) -> Result<()> {
    let input = cfg.path("in");
    let out = cfg.opt_path("out").unwrap_or_else(|| input.clone());
    let manifest = DatasetManifest::load(&input)?;
    let result = stratified_split(&manifest, cfg.f64("split.train_frac")?, cfg.u64("seed")?)?;
    prepare_out(cfg, &out)?;
    if out != input {
        for name in &manifest.class_names {
            create_dir(&out.join(name))?;
        }
        for e in &manifest.entries {
            let src = manifest.image_path(&input, e);
            fs::copy(&src, manifest.image_path(&out, e)).map_err(|err| io_err(&src, err))?;
        }
        copy_boxes(&input, &out)?;
    }
    result.save(&out)?;
    let (train, test) = (result.counts(Some(Split::Train)), result.counts(Some(Split::Test)));
    println!(
        "train {} / test {} images",
        train.iter().sum::<usize>(),
        test.iter().sum::<usize>()
    );
    Ok(())
}

fn load_split(data: &Path, split: Option<Split>) -> Result<Vec<LabeledImage>> {
    let manifest = DatasetManifest::load(data)?;
    let images = manifest.load_images(data, split, None)?;
    if images.is_empty() {
        let which = split.map_or_else(|| "any".to_string(), |s| s.to_string());
        return Err(CliError::Runtime(Error::Data(format!(
            "{}: no images in the {which} split",
            data.display()
        ))));
    }
    Ok(images)
}

fn net_config(cfg: &RunConfig, input: &[usize], seed: u64) -> Result<PaperCnnConfig> {
    let c = PaperCnnConfig {
        input: [input[0], input[1], input[2]],
        filters: cfg.usize("net.filters")?,
        kernel: cfg.usize("net.kernel")?,
        fc_hidden: cfg.usize("net.fc_hidden")?,
        classes: NUM_CLASSES,
        dropout_pool: cfg.f64("net.dropout_pool")?,
        dropout_fc: cfg.f64("net.dropout_fc")?,
        seed,
    };
    c.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(c)
}

/// Save the network, its per-split features and the training history.
fn save_trained(out: &Path, net: &Network, data: &Path, history: &impl serde::Serialize) -> Result<()> {
    net.save(&out.join("model.dnet"))?;
    write(&out.join("history.json"), &to_json(history))?;
    let manifest = DatasetManifest::load(data)?;
    for split in [Split::Train, Split::Test] {
        let images = manifest.load_images(data, Some(split), None)?;
        if !images.is_empty() {
            let fs_ = extract_features(net, &images, "cnn")?;
            write_feature_file(&out.join(format!("{split}.feat")), &fs_)?;
        }
    }
    Ok(())
}

pub fn train_cnn_cmd(cfg: &RunConfig) -> Result<()> {
    let (data, out) = (cfg.path("data"), cfg.path("out"));
    let seed = cfg.u64("seed")?;
    let train = load_split(&data, Some(Split::Train))?;
    let net_cfg = net_config(cfg, train[0].pixels.shape(), seed)?;
    let train_cfg = TrainConfig {
        learning_rate: cfg.f64("train.lr")?,
        momentum: cfg.f64("train.momentum")?,
        batch_size: cfg.usize("train.batch_size")?,
        epochs: cfg.usize("train.epochs")?,
        seed,
        shuffle: cfg.bool("train.shuffle")?,
    };
    train_cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    prepare_out(cfg, &out)?;
    let mut net = build_paper_cnn(&net_cfg)?;
    let history = train_cnn(&mut net, &train, &train_cfg)?;
    save_trained(&out, &net, &data, &history)?;
    if let Some(last) = history.epochs.last() {
        println!("epoch {} loss {:.4} train accuracy {:.2}", last.epoch + 1, last.loss, last.accuracy * 100.0);
    }
    Ok(())
}

fn stage_path(dir: &Path, stage: usize) -> PathBuf {
    dir.join(format!("stage{stage}.dnet"))
}

pub fn pretrain_cae(cfg: &RunConfig) -> Result<()> {
    let (data, out) = (cfg.path("data"), cfg.path("out"));
    let seed = cfg.u64("seed")?;
    let images: Vec<_> = load_split(&data, None)?.into_iter().map(|i| i.pixels).collect();
    let net_cfg = net_config(cfg, images[0].shape(), seed)?;
    let cae = CaeConfig {
        stages: cfg.usize("cae.stages")?,
        pretrain_lr: cfg.f64("cae.lr")?,
        momentum: cfg.f64("cae.momentum")?,
        batch_size: cfg.usize("cae.batch_size")?,
        epochs_per_stage: cfg.usize("cae.epochs")?,
        seed,
        ..Default::default()
    };
    cae.validate().map_err(|e| CliError::Config(e.to_string()))?;
    prepare_out(cfg, &out)?;
    let mut stages = Vec::new();
    let mut reports = Vec::new();
    for stage in 0..cae.stages {
        let (ck, report) = cae_pretrain_stage(stage, &images, &stages, &net_cfg, &cae)?;
        ck.save(&stage_path(&out, stage))?;
        println!("stage {stage}: reconstruction mse {:.6} -> {:.6}", report.mse_init, report.mse_final);
        stages.push(ck);
        reports.push(report);
    }
    write(&out.join("cae_report.json"), &to_json(&reports))
}

pub fn finetune(cfg: &RunConfig) -> Result<()> {
    let (data, dir, out) = (cfg.path("data"), cfg.path("stages"), cfg.path("out"));
    let seed = cfg.u64("seed")?;
    let train = load_split(&data, Some(Split::Train))?;
    let net_cfg = net_config(cfg, train[0].pixels.shape(), seed)?;
    // Fine-tuning must run below the pretraining rate recorded by pretrain-cae.
    let recorded: serde_json::Value = read_json(&dir.join(RunConfig::file_name("pretrain-cae"))).unwrap_or_default();
    let pretrain_lr = recorded["cae.lr"].as_f64().unwrap_or(CaeConfig::default().pretrain_lr);
    let mut stages = Vec::new();
    while stage_path(&dir, stages.len()).exists() {
        stages.push(StageCheckpoint::load(&stage_path(&dir, stages.len()))?);
    }
    let cae = CaeConfig {
        stages: stages.len(),
        pretrain_lr,
        finetune_lr: cfg.f64("cae.finetune_lr")?,
        finetune_epochs: cfg.usize("cae.finetune_epochs")?,
        momentum: cfg.f64("train.momentum")?,
        batch_size: cfg.usize("train.batch_size")?,
        seed,
        ..Default::default()
    };
    cae.validate().map_err(|e| CliError::Config(e.to_string()))?;
    prepare_out(cfg, &out)?;
    let mut net = assemble(&stages, &net_cfg, &cae)?;
    let train_cfg = TrainConfig {
        learning_rate: cae.finetune_lr,
        momentum: cae.momentum,
        batch_size: cae.batch_size,
        epochs: cae.finetune_epochs,
        seed,
        shuffle: cfg.bool("train.shuffle")?,
    };
    let history = train_cnn(&mut net, &train, &train_cfg)?;
    save_trained(&out, &net, &data, &history)?;
    if let Some(last) = history.epochs.last() {
        println!("epoch {} loss {:.4} train accuracy {:.2}", last.epoch + 1, last.loss, last.accuracy * 100.0);
    }
    Ok(())
}

pub fn train_head_cmd(cfg: &RunConfig) -> Result<()> {
    let out = cfg.path("out");
    let kind = match cfg.str("head.kind") {
        "softmax" => HeadKind::Softmax,
        "svm" => HeadKind::Svm,
        other => return Err(CliError::Config(format!("head.kind must be softmax or svm, got {other:?}"))),
    };
    let hyper = HeadHyper {
        lr: cfg.f64("head.lr")?,
        l2: cfg.f64("head.l2")?,
        epochs: cfg.usize("head.epochs")?,
        batch_size: cfg.usize("head.batch_size")?,
        seed: cfg.u64("seed")?,
    };
    hyper.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let fs_ = read_feature_file(&cfg.path("features"))?;
    prepare_out(cfg, &out)?;
    let head = train_head(kind, &fs_, &hyper)?;
    write(&out.join("head.json"), &to_json(&head))?;
    println!("train accuracy {:.2}", head.accuracy(&fs_)? * 100.0);
    if let Some(val) = cfg.opt_path("val") {
        println!("validation accuracy {:.2}", head.accuracy(&read_feature_file(&val)?)? * 100.0);
    }
    Ok(())
}

fn row_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("row{i:05}")).collect()
}

pub fn ensemble(cfg: &RunConfig) -> Result<()> {
    let out = cfg.path("out");
    let heads: Vec<LinearHead> = cfg
        .list("heads")
        .iter()
        .map(|p| read_json(Path::new(p)))
        .collect::<Result<_>>()?;
    let load = |key: &str| -> Result<Vec<FeatureSet>> {
        cfg.list(key)
            .iter()
            .map(|p| Ok(read_feature_file(Path::new(p))?))
            .collect()
    };
    let features = load("features")?;
    let mut val = load("val")?;
    if val.is_empty() {
        val = features.clone();
    }
    if heads.len() != features.len() {
        return Err(CliError::Config(format!(
            "{} heads but {} feature files",
            heads.len(),
            features.len()
        )));
    }
    let selection = match cfg.str("ensemble.select") {
        "all" => Selection::All,
        "top" => Selection::TopK(cfg.usize("ensemble.k")?),
        other => return Err(CliError::Config(format!("ensemble.select must be all or top, got {other:?}"))),
    };
    let weighting = match cfg.str("ensemble.weighting") {
        "uniform" => Weighting::Uniform,
        "accuracy" => Weighting::Accuracy,
        other => {
            return Err(CliError::Config(format!(
                "ensemble.weighting must be uniform or accuracy, got {other:?}"
            )))
        }
    };
    prepare_out(cfg, &out)?;
    let names: Vec<String> = heads.iter().map(|h| h.extractor.clone()).collect();
    let val_refs: Vec<&FeatureSet> = val.iter().collect();
    let (spec, chosen) = EnsembleSpec::build_indexed(heads, &val_refs, selection, weighting)?;
    let member_features: Vec<&FeatureSet> = chosen.iter().map(|&i| &features[i]).collect();
    let probs = spec.predict_proba(&member_features)?;
    let ids = row_ids(probs.len());
    let preds = format_id_values(ids.iter().map(String::as_str).zip(probs.iter().map(|p| argmax(p))));
    let labels = format_id_values(ids.iter().map(String::as_str).zip(features[0].labels.iter().copied()));
    write(&out.join("preds.tsv"), &preds)?;
    write(&out.join("labels.tsv"), &labels)?;
    let summary = serde_json::json!({
        "members": chosen.iter().map(|&i| &names[i]).collect::<Vec<_>>(),
        "member_indices": chosen,
        "weights": spec.weights,
    });
    write(&out.join("ensemble.json"), &to_json(&summary))?;
    for (&i, w) in chosen.iter().zip(&spec.weights) {
        println!("member {} ({}) weight {w:.4}", i, names[i]);
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let averaging = match cfg.str("eval.averaging") {
        "macro" => Averaging::Macro,
        "micro" => Averaging::Micro,
        other => return Err(CliError::Config(format!("eval.averaging must be macro or micro, got {other:?}"))),
    };
    let opts = MetricsOptions {
        averaging,
        empty_value: cfg.f64("eval.empty_value")?,
    };
    let (preds, labels) = match (cfg.opt_path("preds"), cfg.opt_path("labels"), cfg.opt_path("model")) {
        (Some(p), Some(l), None) => align(&read_id_values(&p)?, &read_id_values(&l)?)?,
        (None, None, Some(m)) => {
            let data = cfg
                .opt_path("data")
                .ok_or_else(|| CliError::Config("--model needs --data".into()))?;
            let split = match cfg.str("eval.split") {
                "train" => Some(Split::Train),
                "test" => Some(Split::Test),
                "all" => None,
                other => return Err(CliError::Config(format!("eval.split must be train, test or all, got {other:?}"))),
            };
            let net = Network::load(&m)?;
            let images = load_split(&data, split)?;
            let pixels: Vec<_> = images.iter().map(|i| &i.pixels).collect();
            let probs = predict_probs(&net, &pixels, 64)?;
            let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
            let labels: Vec<usize> = images.iter().map(|i| i.label).collect();
            if let Some(out) = cfg.opt_path("out") {
                prepare_out(cfg, &out)?;
                let ids: Vec<&str> = images.iter().map(|i| i.source_id.as_str()).collect();
                write(&out.join("preds.tsv"), &format_id_values(ids.iter().copied().zip(preds.iter().copied())))?;
                write(&out.join("labels.tsv"), &format_id_values(ids.iter().copied().zip(labels.iter().copied())))?;
            }
            (preds, labels)
        }
        _ => {
            return Err(CliError::Config(
                "eval needs either --preds and --labels, or --model and --data".into(),
            ))
        }
    };
    let classes = NUM_CLASSES.max(preds.iter().chain(&labels).max().map_or(0, |m| m + 1));
    let cm = confusion(&preds, &labels, classes)?;
    let report = Report::new(&cm, &metrics_with(&cm, opts)?);
    println!("accuracy {:.2}", report.accuracy);
    println!("precision {:.2}", report.precision);
    println!("recall {:.2}", report.recall);
    print!("\n{}", report.to_table(cfg.str("eval.method"), &CLASS_NAMES));
    if let Some(out) = cfg.opt_path("out") {
        prepare_out(cfg, &out)?;
        write(&out.join("metrics.json"), &(report.to_json() + "\n"))?;
        write(&out.join("report.txt"), &report.to_table(cfg.str("eval.method"), &CLASS_NAMES))?;
    }
    Ok(())
}

pub fn localize(cfg: &RunConfig) -> Result<()> {
    let out = cfg.path("out");
    let classes = match cfg.list("localize.classes") {
        names if names.is_empty() => (0..NUM_CLASSES).filter(|&c| c != NO_DAMAGE).collect(),
        names => names
            .iter()
            .map(|n| class_index(n).ok_or_else(|| CliError::Config(format!("unknown class {n:?}"))))
            .collect::<Result<Vec<_>>>()?,
    };
    let loc = LocalizeConfig {
        window: cfg.usize("localize.window")?,
        resize_to: cfg.usize("localize.resize_to")?,
        stride: cfg.usize("localize.stride")?,
        threshold: cfg.f64("localize.threshold")?,
        classes,
    };
    loc.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let net = Network::load(&cfg.path("model"))?;
    let channels = net.input_shape()[2];
    let image = pnm::read(&cfg.path("image"), Some(channels))?;
    prepare_out(cfg, &out)?;
    let heatmap = sliding_window_map(&image, &net, &loc)?;
    let regions = threshold_regions(&heatmap, &loc);
    write(&out.join("heatmap.json"), &(heatmap.to_json() + "\n"))?;
    write(&out.join("regions.tsv"), &regions_to_tsv(&regions))?;
    pnm::write(&out.join("overlay.ppm"), &render_overlay(&image, &regions, &Palette::default())?)?;
    match top_region(&regions) {
        Some(r) => println!(
            "top region {} at ({}, {}) {}x{} score {:.4}",
            CLASS_NAMES[r.class], r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h, r.score
        ),
        None => println!("no region above threshold {}", loc.threshold),
    }
    Ok(())
}
