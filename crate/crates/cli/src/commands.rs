use std::fs;
use std::path::{Path, PathBuf};

use liftseg::dataset::{
    load_labels, load_rig, load_scan, synth_scene, write_labels, write_scan, ClassMap, PointCloud, SensorId, SensorRig,
};
use liftseg::geometry::{apply, surface_normals};
use liftseg::harness::{
    bench, evaluate, infer_dual, infer_images, prepare_samples, preprocess, train, write_synth_dataset, BenchMode,
    DatasetManifest, PipelineConfig, SynthDatasetSpec,
};
use liftseg::projection::{destagger, project, render_png, unproject, Channel, SphericalImageSet};
use liftseg::segnet::SegModel;
use serde::Serialize;

use crate::error::CliError;
use crate::{BenchArgs, Cli, Command, EvalArgs, InferArgs, RenderArgs, ScanArgs, SynthArgs, TrainArgs};

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Synth(a) => synth(&cfg, a),
        Command::Project(a) => project_cmd(&cfg, a, false),
        Command::Normals(a) => project_cmd(&cfg, a, true),
        Command::Render(a) => render(&cfg, a),
        Command::Train(a) => train_cmd(cfg, a),
        Command::Infer(a) => infer(&cfg, a),
        Command::Eval(a) => eval(&cfg, a),
        Command::Bench(a) => bench_cmd(cfg, a),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::user(format!("cannot create {}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| CliError::user(format!("cannot write {}: {e}", path.display())))
}

fn rig_for(cfg: &PipelineConfig, explicit: Option<&PathBuf>) -> Result<SensorRig, CliError> {
    match explicit {
        Some(p) => Ok(load_rig(p)?),
        None => Ok(cfg.load_rig()?),
    }
}

fn load_model(path: &Path) -> Result<SegModel<f32>, CliError> {
    Ok(SegModel::load(path)?)
}

fn load_cloud(scan: &Path, labels: Option<&PathBuf>, sensor: SensorId) -> Result<PointCloud, CliError> {
    let read = load_scan(scan)?;
    let mut cloud = read.cloud.with_sensor(sensor, 0);
    if let Some(l) = labels {
        let lr = load_labels(l, cloud.len(), &ClassMap::standard())?;
        cloud = cloud.with_labels(lr.labels)?;
    }
    Ok(cloud)
}

fn synth(cfg: &PipelineConfig, a: SynthArgs) -> Result<(), CliError> {
    let mut rig = cfg.load_rig()?;
    if a.rows.is_some() || a.cols.is_some() {
        let rows = a.rows.unwrap_or(rig.front.rows);
        let cols = a.cols.unwrap_or(rig.front.cols);
        rig = SensorRig { front: rig.front.with_resolution(rows, cols), down: rig.down.with_resolution(rows, cols) };
        rig.validate()?;
    }
    let spec = SynthDatasetSpec {
        sequences: a.sequences.unwrap_or(cfg.synth.sequences),
        frames_per_sequence: a.frames.unwrap_or(cfg.synth.frames_per_sequence),
        seed: a.seed.unwrap_or(cfg.synth.seed),
        scene: cfg.scene.clone(),
    };
    let manifest = write_synth_dataset(&a.out, &spec, &rig)?;
    println!(
        "wrote {} scans ({} sequences x {} frames x 2 sensors) to {}",
        manifest.entries.len(),
        spec.sequences,
        spec.frames_per_sequence,
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ScanReport<'a> {
    sensor: &'a str,
    points: usize,
    rows: usize,
    cols: usize,
    valid_pixels: usize,
    projection: liftseg::projection::ProjectionStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    normals: Option<liftseg::geometry::NormalStats>,
}

fn project_cmd(cfg: &PipelineConfig, a: ScanArgs, with_normals: bool) -> Result<(), CliError> {
    let rig = rig_for(cfg, a.rig.as_ref())?;
    let sensor = rig.sensor(a.sensor);
    let cloud = load_cloud(&a.scan, a.labels.as_ref(), a.sensor)?;
    let model = sensor.projection_model()?;
    let (img, pstats) = project(&cloud, &model)?;
    let img = destagger(&img, &sensor.destagger_shifts)?;
    create_dir(&a.out)?;
    let classes = ClassMap::standard();
    let (img, nstats) = if with_normals {
        let (img, n) = surface_normals(&apply(&sensor.extrinsic, &img)?)?;
        render_png(&img, Channel::Normals, &classes, &a.out.join("normals.png"))?;
        (img, Some(n))
    } else {
        render_png(&img, Channel::Range, &classes, &a.out.join("range.png"))?;
        render_png(&img, Channel::Reflectivity, &classes, &a.out.join("reflectivity.png"))?;
        write_scan(&a.out.join("projected.bin"), &unproject(&img, a.sensor))?;
        (img, None)
    };
    if img.has_labels {
        render_png(&img, Channel::Labels, &classes, &a.out.join("labels.png"))?;
    }
    let report = ScanReport {
        sensor: a.sensor.name(),
        points: cloud.len(),
        rows: img.rows,
        cols: img.cols,
        valid_pixels: img.valid_count(),
        projection: pstats,
        normals: nstats,
    };
    write_json(&a.out.join("stats.json"), &report)?;
    println!(
        "{}: {} of {} points projected, {} occluded, {} outside the field of view",
        a.sensor.name(),
        pstats.projected,
        cloud.len(),
        pstats.occluded,
        pstats.out_of_fov
    );
    Ok(())
}

fn render(cfg: &PipelineConfig, a: RenderArgs) -> Result<(), CliError> {
    let rig = rig_for(cfg, a.rig.as_ref())?;
    let cloud = load_cloud(&a.scan, a.labels.as_ref(), a.sensor)?;
    let (mut img, _) = preprocess(&cloud, rig.sensor(a.sensor))?;
    let mut channel = a.channel;
    if let Some(path) = &a.model {
        let model = load_model(path)?;
        img.labels = infer_images(&model, &[&img])?.pop().expect("one output");
        img.has_labels = true;
        channel = Channel::Labels;
    }
    if channel == Channel::Labels && !img.has_labels {
        return Err(CliError::user("the labels channel needs --labels or --model"));
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    render_png(&img, channel, &ClassMap::standard(), &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    train_scans: usize,
    epochs: usize,
    steps: u64,
    epoch_losses: Vec<f64>,
}

fn train_cmd(mut cfg: PipelineConfig, a: TrainArgs) -> Result<(), CliError> {
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if a.no_reflectivity {
        cfg.net.use_reflectivity = false;
    }
    cfg.validate()?;
    let manifest = DatasetManifest::scan(&a.data)?;
    let entries = manifest.train_entries();
    if entries.is_empty() {
        return Err(CliError::user(format!("{} has no training sequences", a.data.display())));
    }
    let samples = prepare_samples(&entries, &manifest.rig, &ClassMap::standard())?;
    let model = SegModel::<f32>::build(cfg.net.clone(), a.init_seed)?;
    create_dir(&a.out)?;
    let ckpt_dir = a.out.join("checkpoints");
    let epochs = cfg.train.epochs;
    let outcome = train(model, &samples, &cfg.train, &cfg.loss, Some(&ckpt_dir), |epoch, loss| {
        println!("epoch {:>4}/{epochs}  loss {loss:.5}", epoch + 1);
    })?;
    outcome.model.save(&a.out.join("model.ckpt"))?;
    write_json(
        &a.out.join("loss_curve.json"),
        &TrainSummary { train_scans: samples.len(), epochs, steps: outcome.steps, epoch_losses: outcome.epoch_losses },
    )?;
    println!("saved {}", a.out.join("model.ckpt").display());
    Ok(())
}

#[derive(Serialize)]
struct InferSummary {
    rows: usize,
    cols: usize,
    front_points: usize,
    down_points: usize,
    front_class_pixels: Vec<(String, usize)>,
    down_class_pixels: Vec<(String, usize)>,
}

fn class_histogram(plane: &[u8], valid: &[bool], classes: &ClassMap) -> Vec<(String, usize)> {
    classes
        .classes()
        .iter()
        .map(|c| {
            let n = plane.iter().zip(valid).filter(|(p, v)| **v && **p == c.id).count();
            (c.name.clone(), n)
        })
        .collect()
}

fn infer(cfg: &PipelineConfig, a: InferArgs) -> Result<(), CliError> {
    let rig = rig_for(cfg, a.rig.as_ref())?;
    let model = load_model(&a.model)?;
    let pred = infer_dual(&model, &a.front, &a.down, &rig)?;
    create_dir(&a.out)?;
    let classes = ClassMap::standard();
    for (sensor, points, img) in [
        (SensorId::Front, &pred.front_points, &pred.front_image),
        (SensorId::Down, &pred.down_points, &pred.down_image),
    ] {
        write_labels(&a.out.join(format!("{}.label", sensor.name())), points, &classes)?;
        let shown = SphericalImageSet { labels: pred.plane(sensor).to_vec(), has_labels: true, ..img.clone() };
        render_png(&shown, Channel::Labels, &classes, &a.out.join(format!("{}.png", sensor.name())))?;
    }
    let summary = InferSummary {
        rows: pred.rows,
        cols: pred.cols,
        front_points: pred.front_points.len(),
        down_points: pred.down_points.len(),
        front_class_pixels: class_histogram(&pred.front, &pred.front_image.valid, &classes),
        down_class_pixels: class_histogram(&pred.down, &pred.down_image.valid, &classes),
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    println!("segmented {} + {} points into {}", summary.front_points, summary.down_points, a.out.display());
    Ok(())
}

fn eval(_cfg: &PipelineConfig, a: EvalArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let manifest = DatasetManifest::scan(&a.data)?;
    let entries = manifest.test_entries();
    if entries.is_empty() {
        return Err(CliError::user(format!("{} has no test sequence", a.data.display())));
    }
    let classes = ClassMap::standard();
    let samples = prepare_samples(&entries, &manifest.rig, &classes)?;
    let report = evaluate(&model, &samples, a.workers)?;
    let table = report.iou.to_table(&classes);
    if let Some(dir) = a.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_json(&a.report, &report)?;
    if let Some(t) = &a.table {
        fs::write(t, &table).map_err(|e| CliError::user(format!("cannot write {}: {e}", t.display())))?;
    }
    print!("{table}");
    Ok(())
}

fn bench_cmd(mut cfg: PipelineConfig, a: BenchArgs) -> Result<(), CliError> {
    if let Some(r) = a.repetitions {
        cfg.bench.repetitions = r;
    }
    if let Some(w) = a.warmup {
        cfg.bench.warmup = w;
    }
    cfg.bench.validate()?;
    let rig = rig_for(&cfg, a.rig.as_ref())?;
    let model = match &a.model {
        Some(p) => load_model(p)?,
        None => SegModel::<f32>::build(cfg.net.clone(), a.seed)?,
    };
    let (front, down) = match (&a.front, &a.down) {
        (Some(f), Some(d)) => (load_cloud(f, None, SensorId::Front)?, load_cloud(d, None, SensorId::Down)?),
        _ => {
            let s = synth_scene(a.seed, &cfg.scene, &rig)?;
            (s.front, s.down)
        }
    };
    let modes = match a.mode {
        Some(m) => vec![m],
        None => vec![BenchMode::Single, BenchMode::Dual],
    };
    let mut reports = Vec::new();
    for mode in modes {
        let r = bench(&model, &front, &down, &rig, mode, &cfg.bench)?;
        println!(
            "{:<6} median {:7.2} ms  p95 {:7.2} ms  budget {:6.2} ms  {}",
            format!("{mode:?}").to_lowercase(),
            r.median_ms,
            r.p95_ms,
            r.budget_ms,
            if r.within_budget { "ok" } else { "over budget" }
        );
        reports.push(r);
    }
    if let Some(dir) = a.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_json(&a.report, &reports)?;
    Ok(())
}
