use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use tivis_core::dataset::{generate_dataset, ShapeDataset};
use tivis_core::entropy::{
    default_gray_levels, entropy_map, image_entropy, init_sweep, second_order_entropy,
    sweep_image_id, to_grayscale, SweepEntropy,
};
use tivis_core::nn::Objective;
use tivis_core::ppm::{read_ppm, write_ppm};
use tivis_core::report::{baseline_report, class_report, entropy_report, run_report, sweep_report};
use tivis_core::screening::{classify_report, invert, zero_square, ScreenRect, Variant};
use tivis_core::train::{self, TrainConfig};
use tivis_core::transforms::{battery_summary, parse_transforms, run_battery};
use tivis_core::visualizer::{
    baseline_visualize, noise_init, visualize, GradientMode, OptimConfig, StoppingCriterion,
};
use tivis_core::{load_model, save_model, ImageBuffer, Model, TransformSchedule};

use crate::errors::usage;
use crate::{
    BaselineArgs, ClassifyArgs, Cli, Command, EntropyArgs, OptimArgs, ScheduleArgs, SweepArgs,
    TrainArgs, VisualizeArgs,
};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::MakeDataset { count_per_class } => make_dataset(cli, *count_per_class),
        Command::Train(a) => train_cmd(cli, a),
        Command::Classify(a) => classify(cli, a),
        Command::Visualize(a) => visualize_cmd(cli, a),
        Command::Baseline(a) => baseline_cmd(cli, a),
        Command::SweepInit(a) => sweep_cmd(cli, a),
        Command::Entropy(a) => entropy_cmd(cli, a),
        Command::Invert(a) => invert_cmd(cli, &a.image),
        Command::Screen(a) => screen_cmd(cli, &a.image, &a.rect),
    }
}

fn require_out(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| usage("this command needs --out"))
}

fn require_model(cli: &Cli) -> Result<Model> {
    let path = cli
        .model
        .as_deref()
        .ok_or_else(|| usage("this command needs --model"))?;
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

/// Writes the report to `--report`, or prints it when no path was given.
fn emit_report(cli: &Cli, text: &str) -> Result<()> {
    match &cli.report {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_image(img: &ImageBuffer, path: &Path) -> Result<()> {
    write_ppm(img, path).with_context(|| format!("writing {}", path.display()))
}

fn read_image(path: &Path) -> Result<ImageBuffer> {
    read_ppm(path).with_context(|| format!("reading {}", path.display()))
}

fn make_dataset(cli: &Cli, count_per_class: usize) -> Result<()> {
    let out = require_out(cli)?;
    let ds = generate_dataset(cli.seed, count_per_class)?;
    ds.save(out)?;
    println!("wrote {} images to {}", ds.len(), out.display());
    Ok(())
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let out = cli
        .out
        .as_deref()
        .or(cli.model.as_deref())
        .ok_or_else(|| usage("train needs --out (or --model) for the model file"))?;
    let ds = match &a.dataset {
        Some(dir) => ShapeDataset::load(dir)
            .with_context(|| format!("loading dataset {}", dir.display()))?,
        None => generate_dataset(cli.seed, a.count_per_class)?,
    };
    let config = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        seed: cli.seed,
        val_fraction: a.val_fraction,
    };
    let template = train::reference_architecture(cli.seed, ds.class_names.clone())?;
    let outcome = train::train(&ds, &template, &config)?;
    save_model(&outcome.model, out).with_context(|| format!("saving {}", out.display()))?;
    if let Some(path) = &cli.report {
        fs::write(path, outcome.log_text()).with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "trained {} epochs, val accuracy {:.4}, model written to {}",
        outcome.log.len(),
        outcome.final_val_accuracy().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn collect_images(inputs: &[PathBuf]) -> Result<Vec<(String, ImageBuffer)>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .with_context(|| format!("listing {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    if files.is_empty() {
        return Err(usage("no .ppm images found in the given inputs"));
    }
    files
        .iter()
        .map(|p| Ok((p.display().to_string(), read_image(p)?)))
        .collect()
}

fn parse_rect(s: &str) -> Result<ScreenRect> {
    ScreenRect::parse(s).ok_or_else(|| usage(format!("bad rectangle {s:?}, expected x,y,w,h")))
}

fn classify(cli: &Cli, a: &ClassifyArgs) -> Result<()> {
    let model = require_model(cli)?;
    let variants = a
        .variants
        .split(',')
        .map(|v| {
            Variant::parse(v.trim()).ok_or_else(|| usage(format!("unknown variant {v:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let rect = a.rect.as_deref().map(parse_rect).transpose()?;
    let images = collect_images(&a.inputs)?;
    let report = classify_report(&model, &images, a.k, &variants, rect)?;
    emit_report(cli, &class_report(&report))
}

fn target_class(model: &Model, class: &str) -> Result<usize> {
    if let Some(i) = model.class_index(class) {
        return Ok(i);
    }
    match class.parse::<usize>() {
        Ok(i) if i < model.num_classes() => Ok(i),
        _ => Err(usage(format!(
            "unknown class {class:?}; the model knows {}",
            model.class_names().join(", ")
        ))),
    }
}

fn init_image(model: &Model, spec: &str, seed: u64) -> Result<ImageBuffer> {
    let [_, h, w] = model.input_shape();
    if h != w {
        return Err(usage("visualization needs a model with square inputs"));
    }
    let level = |s: &str| {
        s.parse::<u8>()
            .map_err(|_| usage(format!("bad init {spec:?}: {s:?} is not in 0..=255")))
    };
    if let Some(g) = spec.strip_prefix("gray:") {
        return Ok(ImageBuffer::gray(h, w, f64::from(level(g)?)));
    }
    if let Some(m) = spec.strip_prefix("noise:") {
        return Ok(noise_init(h, level(m)?, seed, 0));
    }
    let img = read_image(Path::new(spec))?;
    if img.dims() != (h, w) {
        return Err(usage(format!(
            "init image is {}x{}, the model expects {h}x{w}",
            img.height(),
            img.width()
        )));
    }
    Ok(img)
}

fn optim_config(a: &OptimArgs) -> Result<OptimConfig> {
    Ok(OptimConfig {
        q_target: a.q_target,
        step_size: a.step_size,
        max_inner_steps: a.max_inner_steps,
        gradient_mode: GradientMode::parse(&a.gradient_mode)
            .ok_or_else(|| usage(format!("unknown gradient mode {:?}", a.gradient_mode)))?,
        objective: Objective::parse(&a.objective)
            .ok_or_else(|| usage(format!("unknown objective {:?}", a.objective)))?,
    })
}

fn schedule_and_stop(a: &ScheduleArgs) -> Result<(TransformSchedule, StoppingCriterion)> {
    let schedule = TransformSchedule::parse(&a.schedule, &a.battery)?;
    let mut stop = StoppingCriterion::for_schedule(&schedule);
    stop.q_test = a.q_test;
    if let Some(n) = a.max_outer {
        stop.max_outer_iterations = n;
    }
    Ok((schedule, stop))
}

fn visualize_cmd(cli: &Cli, a: &VisualizeArgs) -> Result<()> {
    let model = require_model(cli)?;
    let target = target_class(&model, &a.optim.class)?;
    let init = init_image(&model, &a.optim.init, cli.seed)?;
    let config = optim_config(&a.optim)?;
    let (schedule, stop) = schedule_and_stop(&a.schedule)?;
    let (img, trace) = visualize(&model, target, &init, &schedule, &config, &stop)?;
    if let Some(out) = &cli.out {
        write_image(&img, out)?;
    }
    if let Some(path) = &cli.report {
        let text = run_report(&model, target, &a.optim.init, &schedule, &config, &stop, &trace);
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "status {} after {} iterations, min battery confidence {:.4}",
        trace.status.name(),
        trace.records.len(),
        trace.battery_min()
    );
    Ok(())
}

fn baseline_cmd(cli: &Cli, a: &BaselineArgs) -> Result<()> {
    let model = require_model(cli)?;
    let target = target_class(&model, &a.optim.class)?;
    let init = init_image(&model, &a.optim.init, cli.seed)?;
    let config = optim_config(&a.optim)?;
    let battery = parse_transforms(&a.battery)?;
    let (img, trace) = baseline_visualize(&model, target, &init, &config)?;
    let entries = run_battery(&model, &img, target, &battery)?;
    if let Some(out) = &cli.out {
        write_image(&img, out)?;
    }
    if let Some(path) = &cli.report {
        let text = baseline_report(
            &model,
            target,
            &a.optim.init,
            &config,
            trace.steps,
            trace.reached_target,
            trace.final_confidence(),
            &entries,
        );
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "{} steps, confidence {:.4}, min battery confidence {:.4}",
        trace.steps,
        trace.final_confidence(),
        battery_summary(&entries).0
    );
    Ok(())
}

fn sweep_cmd(cli: &Cli, a: &SweepArgs) -> Result<()> {
    let model = require_model(cli)?;
    let target = target_class(&model, &a.optim.class)?;
    let config = optim_config(&a.optim)?;
    let (schedule, stop) = schedule_and_stop(&a.schedule)?;
    let levels = match &a.levels {
        Some(s) => s
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<u8>()
                    .map_err(|_| usage(format!("bad gray level {v:?}")))
            })
            .collect::<Result<Vec<_>>>()?,
        None => default_gray_levels(),
    };
    let entropy = SweepEntropy {
        window: a.window,
        stride: a.stride,
    };
    let (report, images) = init_sweep(&model, target, &schedule, &config, &stop, &levels, entropy)?;
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (g, img) in &images {
            write_image(img, &dir.join(format!("{}.ppm", sweep_image_id(*g))))?;
        }
    }
    let text = sweep_report(&model, target, &schedule, &config, &stop, &report);
    if let Some(path) = &cli.report {
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    let failed = report.records.iter().filter(|r| r.outcome.is_err()).count();
    match report.best_init {
        Some(g) => println!("best init gray level {g} ({failed} of {} runs failed)", report.records.len()),
        None => println!("every run failed"),
    }
    Ok(())
}

fn entropy_cmd(cli: &Cli, a: &EntropyArgs) -> Result<()> {
    let img = read_image(&a.image)?;
    let gray = to_grayscale(&img);
    let whole = image_entropy(&gray)?;
    let map = entropy_map(&gray, a.window, a.stride)?;
    // maps smaller than 3x3 have no second-order entropy
    let second = second_order_entropy(&map).ok();
    if let Some(out) = &cli.out {
        write_image(&map.quantize().to_image(), out)?;
    }
    let text = entropy_report(&a.image.display().to_string(), whole, &map, second.as_ref().map(|s| s.total));
    emit_report(cli, &text)
}

/// Writes the inverted image; with --model, also reports the top classes
/// before and after inversion.
fn invert_cmd(cli: &Cli, image: &Path) -> Result<()> {
    let img = read_image(image)?;
    let out = require_out(cli)?;
    write_image(&invert(&img), out)?;
    if cli.model.is_some() {
        let model = require_model(cli)?;
        let images = vec![(image.display().to_string(), img)];
        let report = classify_report(&model, &images, 3, &[Variant::Original, Variant::Inverted], None)?;
        emit_report(cli, &class_report(&report))?;
    }
    Ok(())
}

fn screen_cmd(cli: &Cli, image: &Path, rect: &str) -> Result<()> {
    let model = require_model(cli)?;
    let img = read_image(image)?;
    let rect = parse_rect(rect)?;
    let out = require_out(cli)?;
    write_image(&zero_square(&img, rect, &model)?, out)?;
    let images = vec![(image.display().to_string(), img)];
    let report = classify_report(&model, &images, 3, &[Variant::Original, Variant::Screened], Some(rect))?;
    emit_report(cli, &class_report(&report))
}
