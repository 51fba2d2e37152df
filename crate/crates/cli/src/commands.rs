use std::fs;
use std::path::{Path, PathBuf};

use forgeloc::cam::{
    activation_map, binarize_map, heatmap_gray, heatmap_overlay, normalize_map, tensor_to_rgb, visualize_kernel, KernelViz,
};
use forgeloc::checkpoint::load_checkpoint;
use forgeloc::data::{center_crop_pair, compute_mask, image_to_tensor, synth_benchmark, Manifest, Record, Split, TamperMode};
use forgeloc::eval::{evaluate_run, EvalMode, EvalOptions};
use forgeloc::train::{train, TrainConfig};
use forgeloc::{Error, MaskOrigin, Model, Result};
use serde_json::{json, Value};

use crate::{CamArgs, Command, EvalArgs, MakeMasksArgs, SynthArgs, TrainArgs, VizArgs};

pub fn run(cmd: Command) -> Result<Value> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::MakeMasks(a) => make_masks(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Cam(a) => cam(a),
        Command::VizKernels(a) => viz(a),
    }
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::Io { path: p.to_path_buf(), source: e })
}

fn save_rgb(img: &image::RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Record { path: path.to_path_buf(), message: e.to_string() })
}

fn synth(a: SynthArgs) -> Result<Value> {
    let mode = match a.mode.to_ascii_lowercase().as_str() {
        "mixed" => None,
        other => Some(other.parse::<TamperMode>()?),
    };
    let pairs = synth_benchmark(a.count, a.size, a.seed, mode)?;
    mkdir(&a.out.join("images"))?;
    mkdir(&a.out.join("masks"))?;
    let mut records = Vec::with_capacity(2 * pairs.len());
    for p in &pairs {
        let real_path = format!("images/{}.png", p.pristine.id);
        save_rgb(&p.pristine.image, &a.out.join(&real_path))?;
        records.push(Record {
            id: p.pristine.id.clone(),
            image_path: real_path.clone(),
            original_path: None,
            mask_path: None,
            face_bbox: None,
            label: 0,
            method: p.pristine.method,
            split: p.split,
        });
        let t = &p.tampered;
        let fake_path = format!("images/{}.png", t.id);
        save_rgb(&t.image, &a.out.join(&fake_path))?;
        let mask_path = t.mask.as_ref().map(|m| {
            let rel = format!("masks/{}.png", t.id);
            m.save_png(&a.out.join(&rel)).map(|_| rel)
        });
        records.push(Record {
            id: t.id.clone(),
            image_path: fake_path,
            original_path: Some(real_path),
            mask_path: mask_path.transpose()?,
            face_bbox: None,
            label: t.label,
            method: t.method,
            split: p.split,
        });
    }
    let manifest = Manifest::new(&a.out, records);
    let path = a.out.join("manifest.jsonl");
    manifest.save(&path)?;
    let count = |s: Split| manifest.records.iter().filter(|r| r.split == s).count();
    Ok(json!({
        "command": "synth",
        "manifest": path,
        "records": manifest.records.len(),
        "fake": manifest.records.iter().filter(|r| r.label == 1).count(),
        "train": count(Split::Train),
        "val": count(Split::Val),
        "test": count(Split::Test),
    }))
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Express `path` relative to `root` when it lies beneath it.
fn relative_to(root: &Path, path: &Path) -> String {
    let (root, path) = (absolute(root), absolute(path));
    path.strip_prefix(&root).unwrap_or(&path).to_string_lossy().into_owned()
}

fn make_masks(a: MakeMasksArgs) -> Result<Value> {
    let manifest = Manifest::load(&a.manifest)?;
    let mask_dir = a.mask_dir.unwrap_or_else(|| manifest.root.join("masks_computed"));
    let out_manifest = a.out_manifest.unwrap_or_else(|| {
        let stem = a.manifest.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        manifest.root.join(format!("{stem}.masks.jsonl"))
    });
    if absolute(&out_manifest) == absolute(&a.manifest) {
        return Err(Error::Argument("refusing to overwrite the input manifest".into()));
    }
    mkdir(&mask_dir)?;
    let new_root = out_manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let rebase = |p: &str| relative_to(&new_root, &manifest.resolve(p));
    let (mut written, mut skipped) = (0usize, 0usize);
    let mut records = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        let mut out = rec.clone();
        out.image_path = rebase(&rec.image_path);
        out.original_path = rec.original_path.as_deref().map(rebase);
        out.mask_path = rec.mask_path.as_deref().map(rebase);
        match &rec.original_path {
            Some(orig) => {
                let load = |p: &str| {
                    let path = manifest.resolve(p);
                    image::open(&path).map(|i| i.to_rgb8()).map_err(|e| Error::Record { path, message: e.to_string() })
                };
                let mask = compute_mask(&load(&rec.image_path)?, &load(orig)?, a.delta)?;
                let path = mask_dir.join(format!("{}.png", rec.id));
                mask.save_png(&path)?;
                out.mask_path = Some(relative_to(&new_root, &path));
                written += 1;
            }
            None => skipped += 1,
        }
        records.push(out);
    }
    if skipped > 0 {
        eprintln!("warning: {skipped} record(s) without original_path skipped");
    }
    Manifest::new(&new_root, records).save(&out_manifest)?;
    Ok(json!({
        "command": "make-masks",
        "manifest": out_manifest,
        "mask_dir": mask_dir,
        "written": written,
        "skipped": skipped,
        "delta": a.delta,
    }))
}

fn build_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut c = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            let mut c = TrainConfig::from_json(&text)?;
            if let Some(a) = &a.arch {
                c.arch_id = a.parse()?;
            }
            if let Some(t) = &a.task {
                c.task = t.parse()?;
            }
            if let Some(e) = a.epochs {
                c.epochs = e;
            }
            c
        }
        None => {
            let missing = |what: &str| Error::Argument(format!("--{what} is required without --config"));
            let arch = a.arch.as_deref().ok_or_else(|| missing("arch"))?.parse()?;
            let task = a.task.as_deref().ok_or_else(|| missing("task"))?.parse()?;
            TrainConfig::new(arch, task, a.epochs.ok_or_else(|| missing("epochs"))?)
        }
    };
    if a.paper_scale {
        c = c.paper_scale();
    }
    if let Some(v) = &a.manifest {
        c.manifest_path = Some(v.clone());
    }
    if let Some(v) = a.lr {
        c.lr = v;
    }
    if let Some(v) = a.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = a.crop {
        c.crop_size = v;
    }
    if let Some(v) = a.width {
        c.width_multiplier = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = &a.out {
        c.output_dir = Some(v.clone());
    }
    if let Some(v) = a.eval_every {
        c.eval_every = v;
    }
    if a.max_steps.is_some() {
        c.max_steps = a.max_steps;
    }
    if c.output_dir.is_none() {
        return Err(Error::Argument("an output directory is required (--out)".into()));
    }
    Ok(c)
}

fn train_cmd(a: TrainArgs) -> Result<Value> {
    let config = build_config(&a)?;
    let outcome = train(&config)?;
    Ok(json!({
        "command": "train",
        "arch": config.spec().label(),
        "steps": outcome.history.len(),
        "final_loss": outcome.history.last().map(|r| r.loss),
        "best_metric": outcome.best_metric,
        "best_step": outcome.best_step,
        "output_dir": config.output_dir,
    }))
}

fn eval(a: EvalArgs) -> Result<Value> {
    let model: Model<f32> = load_checkpoint(&a.checkpoint)?;
    let manifest = Manifest::load(&a.manifest)?;
    let split: Split = a.split.parse()?;
    let mut opts = EvalOptions::new(a.mode.parse::<EvalMode>()?, a.crop);
    opts.tau1 = a.tau1;
    opts.tau2 = a.tau2;
    opts.batch_size = a.batch_size;
    let source = manifest.split(split);
    if source.records().next().is_none() {
        return Err(Error::Load(format!("{}: split {split:?} is empty", a.manifest.display())));
    }
    let report = evaluate_run(&model, &source, opts)?;
    print!("{}", report.table());
    if let Some(dir) = &a.report_dir {
        mkdir(dir)?;
        report.save(&dir.join("report.csv"), &dir.join("report.json"))?;
    }
    Ok(json!({
        "command": "eval",
        "arch": model.spec().label(),
        "mode": opts.mode.as_str(),
        "images": report.average.images,
        "accuracy": report.average.accuracy,
        "miou": report.average.miou,
        "fg_iou": report.average.fg_iou,
        "bg_iou": report.average.bg_iou,
    }))
}

fn cam(a: CamArgs) -> Result<Value> {
    let model: Model<f32> = load_checkpoint(&a.checkpoint)?;
    mkdir(&a.out)?;
    let mut files = 0usize;
    for input in &a.input {
        let mut img = image::open(input).map_err(|e| Error::Record { path: input.clone(), message: e.to_string() })?.to_rgb8();
        if let Some(c) = a.crop {
            img = center_crop_pair(&img, None, c)?.0;
        }
        let maps = activation_map(&model, &image_to_tensor(&img))?;
        let norm = normalize_map(&maps[0]);
        let (w, h) = img.dimensions();
        let mask = binarize_map(&norm, a.tau1, w as usize, h as usize)?.with_origin(MaskOrigin::Cam);
        let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into());
        let heat = a.out.join(format!("{stem}_heatmap.png"));
        heatmap_gray(&norm, w, h)
            .save_with_format(&heat, image::ImageFormat::Png)
            .map_err(|e| Error::Record { path: heat.clone(), message: e.to_string() })?;
        save_rgb(&heatmap_overlay(&img, &norm), &a.out.join(format!("{stem}_overlay.png")))?;
        mask.save_png(&a.out.join(format!("{stem}_mask.png")))?;
        files += 3;
    }
    Ok(json!({
        "command": "cam",
        "inputs": a.input.len(),
        "files": files,
        "tau1": a.tau1,
        "out": a.out,
    }))
}

fn viz(a: VizArgs) -> Result<Value> {
    let model: Model<f32> = load_checkpoint(&a.checkpoint)?;
    let idx = model.layer_index(&a.layer).ok_or_else(|| Error::Argument(format!("unknown layer {:?}", a.layer)))?;
    let channels = if a.channels.is_empty() { (0..model.layer_channels()[idx]).collect() } else { a.channels.clone() };
    mkdir(&a.out)?;
    let opts = KernelViz { steps: a.steps, step_size: a.step_size, size: a.size, seed: a.seed };
    for &c in &channels {
        let x = visualize_kernel(&model, &a.layer, c, opts)?;
        save_rgb(&tensor_to_rgb(&x)?, &a.out.join(format!("{}_c{c}.png", a.layer)))?;
    }
    Ok(json!({
        "command": "viz-kernels",
        "layer": a.layer,
        "channels": channels.len(),
        "out": a.out,
    }))
}
