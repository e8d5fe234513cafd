use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;

use super::data::pretrain_data;
use super::{
    classification_task, plot_inputs, pretrain_groups, segmentation_task, AblateArgs, CliError, EvalArgs, EvalMode,
    PlotArgs, PlotInput, PretrainArgs, RunConfig, RunManifest, SynthArgs, TileArgs,
};
use crate::contrastcore::{ContrastError, Pretrainer};
use crate::encoders::Checkpoint;
use crate::evalsuite::{
    ablate_flights, probe, synthetic_corpus, train_segmentation, AblationPlan, EncoderWeights, ProbeKind,
    SegLoss,
};
use crate::fieldstore::{
    ingest_scene, tile_scene, write_container, write_tile_images, SceneMetadata, SceneSource, SynthConfig,
    TileManifest,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.tar";
pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const ABLATION_FILE: &str = "ablation.csv";

const SEGMENT_PROTOCOLS: [&str; 2] = ["coarse", "fine_grained"];

fn resolve_config(path: Option<&Path>, preset: Option<&str>) -> Result<RunConfig, CliError> {
    let cfg = match (path, preset) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "--preset cannot be combined with --config; set `preset` in the file".into(),
            ))
        }
        (Some(p), None) => RunConfig::load(p)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::desk(),
    };
    Ok(cfg)
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn finish_manifest(manifest: &mut RunManifest, dir: &Path, artifacts: &[(&str, &str)]) -> Result<(), CliError> {
    for (name, rel) in artifacts {
        manifest.add_artifact(dir, name, rel).map_err(CliError::runtime)?;
    }
    manifest.finish(dir).map_err(CliError::runtime)
}

/// Scene directories below `input`: `input` itself when it holds a
/// `scene.json`, otherwise its immediate subdirectories that do, sorted.
fn scene_dirs(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if input.join("scene.json").is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let entries = fs::read_dir(input).map_err(|e| CliError::Usage(format!("--input {}: {e}", input.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("scene.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Usage(format!(
            "--input {}: no scene.json found in it or its subdirectories",
            input.display()
        )));
    }
    Ok(dirs)
}

fn scene_source(dir: &Path) -> SceneSource {
    let container = dir.join("scene.nrgb");
    if container.is_file() {
        SceneSource::Container(container)
    } else {
        SceneSource::RgbNir {
            rgb: dir.join("rgb.png"),
            nir: dir.join("nir.png"),
        }
    }
}

pub fn cmd_tile(args: &TileArgs) -> Result<(), CliError> {
    if args.tile_size == 0 {
        return Err(CliError::Usage("--tile-size must be at least 1".into()));
    }
    let dirs = scene_dirs(&args.input)?;
    prepare_dir(&args.out)?;
    let mut manifest = TileManifest::default();
    for dir in &dirs {
        let meta_path = dir.join("scene.json");
        let text = fs::read_to_string(&meta_path).map_err(CliError::runtime)?;
        let meta: SceneMetadata =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", meta_path.display())))?;
        let scene = ingest_scene(&scene_source(dir), &meta)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        let (tiles, part) =
            tile_scene(&scene, args.tile_size).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        for (tile, entry) in tiles.iter().zip(&part.entries) {
            write_tile_images(&args.out, &entry.tile_uri, tile).map_err(CliError::runtime)?;
        }
        info!("{}: {} tiles", dir.display(), tiles.len());
        manifest.extend(part);
    }
    let manifest_path = args.manifest.clone().unwrap_or_else(|| args.out.join("manifest.csv"));
    if let Some(parent) = manifest_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_dir(parent)?;
    }
    manifest.save(&manifest_path).map_err(CliError::runtime)?;
    println!("{} tiles from {} scenes -> {}", manifest.len(), dirs.len(), manifest_path.display());
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let cfg = SynthConfig {
        height: args.size,
        width: args.size,
        flights: args.flights,
        illumination: 0.15,
        ..Default::default()
    };
    cfg.validate().map_err(CliError::usage)?;
    prepare_dir(&args.out)?;
    let corpus = synthetic_corpus(args.seed, args.fields, &cfg).map_err(CliError::runtime)?;
    let mut n = 0;
    for series in &corpus {
        for scene in &series.group.scenes {
            let dir = args.out.join(format!("{}_{}", scene.field_id, scene.flight_time.compact()));
            prepare_dir(&dir)?;
            let meta = SceneMetadata {
                field_id: scene.field_id.clone(),
                flight_time: scene.flight_time,
                gsd_cm: scene.gsd_cm,
            };
            let json = serde_json::to_string_pretty(&meta).map_err(CliError::runtime)?;
            write_text(&dir.join("scene.json"), &(json + "\n"))?;
            write_container(&dir.join("scene.nrgb"), scene.height, scene.width, &scene.pixels)
                .map_err(CliError::runtime)?;
            n += 1;
        }
    }
    println!("{n} scenes from {} fields -> {}", corpus.len(), args.out.display());
    Ok(())
}

fn checkpoint_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(CHECKPOINT_FILE)
    } else {
        p.to_path_buf()
    }
}

fn load_checkpoint(p: &Path) -> Result<(PathBuf, Checkpoint), CliError> {
    let path = checkpoint_path(p);
    if !path.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} not found", path.display())));
    }
    let ck = Checkpoint::load(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok((path, ck))
}

pub fn cmd_pretrain(args: &PretrainArgs) -> Result<(), CliError> {
    let resumed = match &args.resume {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    let mut cfg = match (&resumed, &args.config, &args.preset) {
        (Some((path, ck)), None, None) => RunConfig::from_toml_str(&ck.run_config)
            .map_err(|e| CliError::Usage(format!("config stored in {}: {e}", path.display())))?,
        _ => resolve_config(args.config.as_deref(), args.preset.as_deref())?,
    };
    if let Some(m) = args.method {
        cfg.pretrain.method = m.into();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    } else if let Some((_, ck)) = &resumed {
        if let Some(s) = ck.meta["seed"].as_u64() {
            cfg.seed = s;
        }
    }
    if let Some(n) = args.flights {
        cfg.data.flights = Some(n);
    }
    if let Some(n) = args.steps {
        cfg.pretrain.max_steps = Some(n);
    }
    cfg.validate()?;
    let seed = cfg.seed;
    let method = cfg.pretrain.method;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join(format!("{method}-seed{seed}")));
    let data = pretrain_data(&cfg, seed)?;
    let config_text = cfg.to_toml_string();
    let mut manifest = RunManifest::start(seed, config_text.clone());
    let mut trainer = match &resumed {
        Some((_, ck)) => Pretrainer::resume(cfg.pretrain.clone(), &data, seed, ck),
        None => Pretrainer::new(cfg.pretrain.clone(), &data, seed),
    }
    .map_err(CliError::usage)?;
    prepare_dir(&out)?;
    write_text(&out.join(CONFIG_FILE), &config_text)?;
    let metrics_path = out.join(METRICS_FILE);
    let mut metrics = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resumed.is_some())
        .truncate(resumed.is_none())
        .open(&metrics_path)
        .map_err(CliError::runtime)?;
    info!(
        "{method}: {} steps ({} per epoch), seed {seed}, starting at step {}",
        trainer.total_steps(),
        trainer.steps_per_epoch(),
        trainer.learner.step
    );
    let every = cfg.checkpoint_every;
    let ck_path = out.join(CHECKPOINT_FILE);
    let mut last = None;
    trainer
        .run(args.stop_after, |t, report| {
            let line = serde_json::to_string(report).map_err(|e| ContrastError::Io(std::io::Error::other(e)))?;
            writeln!(metrics, "{line}")?;
            if report.step % 50 == 0 || report.step + 1 == t.total_steps() {
                info!("step {} loss {:.4}", report.step, report.total);
            }
            if every > 0 && (report.step + 1) % every == 0 {
                t.checkpoint(&config_text).save(&ck_path)?;
            }
            last = Some(report.clone());
            Ok(())
        })
        .map_err(CliError::runtime)?;
    metrics.flush().map_err(CliError::runtime)?;
    trainer.checkpoint(&config_text).save(&ck_path).map_err(CliError::runtime)?;
    manifest.metrics.insert("step".into(), trainer.learner.step as f64);
    if let Some(r) = &last {
        manifest.metrics.insert("loss_total".into(), r.total);
        manifest.metrics.insert("loss_instance".into(), r.l_inst);
        if let Some(p) = r.l_pixpro {
            manifest.metrics.insert("loss_pixpro".into(), p);
        }
    }
    finish_manifest(
        &mut manifest,
        &out,
        &[("checkpoint", CHECKPOINT_FILE), ("config", CONFIG_FILE), ("metrics", METRICS_FILE)],
    )?;
    let state = if trainer.is_done() { "finished" } else { "stopped" };
    println!(
        "{state} at step {}/{}; checkpoint {}",
        trainer.learner.step,
        trainer.total_steps(),
        ck_path.display()
    );
    Ok(())
}

fn load_weights(spec: &str, cfg: &RunConfig, seed: u64) -> Result<EncoderWeights, CliError> {
    if spec == "random" {
        return EncoderWeights::random(&cfg.pretrain.encoder, seed).map_err(CliError::usage);
    }
    let (path, ck) = load_checkpoint(Path::new(spec))?;
    let digest = super::file_digest(&path).map_err(CliError::runtime)?;
    let provenance = format!("checkpoint({}, sha256={})", path.display(), &digest[..16]);
    EncoderWeights::from_checkpoint(&ck, provenance).map_err(CliError::usage)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let mut cfg = resolve_config(args.config.as_deref(), args.preset.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let seed = cfg.seed;
    let freeze = args.freeze_flag();
    let protocol_name = match args.mode {
        EvalMode::Probe => {
            let name = args.protocol.as_deref().unwrap_or(cfg.probe.kind.name());
            let kind = match ProbeKind::parse(name) {
                Some(k) if k != ProbeKind::Finetune => k,
                _ => {
                    return Err(CliError::Usage(format!(
                        "unknown probe protocol `{name}`; valid options: linear, nonlinear_mlp"
                    )))
                }
            };
            if freeze == Some(false) {
                return Err(CliError::Usage(
                    "probing keeps the encoder frozen; use `eval finetune` to train it".into(),
                ));
            }
            cfg.probe.kind = kind;
            name.to_string()
        }
        EvalMode::Finetune => {
            let name = args.protocol.as_deref().unwrap_or("finetune");
            if name != "finetune" {
                return Err(CliError::Usage(format!(
                    "unknown finetune protocol `{name}`; valid options: finetune"
                )));
            }
            if freeze == Some(true) {
                return Err(CliError::Usage("fine-tuning trains the encoder; use `eval probe` instead".into()));
            }
            cfg.probe.kind = ProbeKind::Finetune;
            name.to_string()
        }
        EvalMode::Segment => {
            let name = args.protocol.as_deref().unwrap_or("coarse");
            cfg.segmentation.loss = match name {
                "coarse" => SegLoss::CrossEntropy,
                "fine_grained" => SegLoss::Focal { gamma: 2.0 },
                _ => {
                    return Err(CliError::Usage(format!(
                        "unknown segmentation protocol `{name}`; valid options: {}",
                        SEGMENT_PROTOCOLS.join(", ")
                    )))
                }
            };
            if let Some(f) = freeze {
                cfg.segmentation.freeze_encoder = f;
            }
            name.to_string()
        }
    };
    if let Some(f) = args.fraction {
        cfg.probe.label_fraction = f;
        cfg.segmentation.label_fraction = f;
    }
    if let Some(e) = args.epochs {
        cfg.probe.epochs = e;
        cfg.segmentation.epochs = e;
    }
    cfg.validate()?;
    let weights = load_weights(&args.weights, &cfg, seed)?;
    let mode = format!("{:?}", args.mode).to_lowercase();
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join(format!("eval-{mode}-{protocol_name}-seed{seed}")));
    let config_text = cfg.to_toml_string();
    let mut manifest = RunManifest::start(seed, config_text.clone());
    let report = match args.mode {
        EvalMode::Probe | EvalMode::Finetune => probe(&weights, &classification_task(&cfg)?, &cfg.probe, seed),
        EvalMode::Segment => train_segmentation(&weights, &segmentation_task(&cfg)?, &cfg.segmentation, seed),
    }
    .map_err(CliError::runtime)?;
    prepare_dir(&out)?;
    write_text(&out.join(CONFIG_FILE), &config_text)?;
    report.save(&out.join(REPORT_FILE)).map_err(CliError::runtime)?;
    let (metric, value) = report.headline();
    manifest.metrics.insert(metric.into(), value);
    finish_manifest(&mut manifest, &out, &[("config", CONFIG_FILE), ("report", REPORT_FILE)])?;
    println!(
        "{} {}: {metric} = {:.4} (weights: {}, fraction {})",
        report.task, report.protocol, value, report.weights, report.label_fraction
    );
    Ok(())
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<(), CliError> {
    let mut cfg = resolve_config(args.config.as_deref(), args.preset.as_deref())?;
    if let Some(m) = args.method {
        cfg.pretrain.method = m.into();
    }
    if let Some(c) = &args.counts {
        cfg.ablation.counts = c.clone();
    }
    if let Some(f) = &args.fractions {
        cfg.ablation.fractions = f.clone();
    }
    if let Some(s) = &args.seeds {
        cfg.ablation.seeds = s.clone();
    }
    if let Some(n) = args.steps {
        cfg.pretrain.max_steps = Some(n);
    }
    cfg.validate()?;
    let groups = pretrain_groups(&cfg)?;
    let plan = AblationPlan {
        counts: cfg.ablation.counts.clone(),
        fractions: cfg.ablation.fractions.clone(),
        seeds: cfg.ablation.seeds.clone(),
        tile_size: cfg.data.tile_size,
        pretrain: cfg.pretrain.clone(),
        protocol: cfg.probe.clone(),
    };
    crate::evalsuite::nested_subsets(groups.len(), &plan.counts, 0).map_err(CliError::usage)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join(format!("ablate-{}", cfg.pretrain.method)));
    let config_text = cfg.to_toml_string();
    let mut manifest = RunManifest::start(cfg.seed, config_text.clone());
    let task = classification_task(&cfg)?;
    let (table, reports) = ablate_flights(&groups, &plan, &task).map_err(CliError::runtime)?;
    prepare_dir(&out.join("reports"))?;
    write_text(&out.join(CONFIG_FILE), &config_text)?;
    table.save(&out.join(ABLATION_FILE)).map_err(CliError::runtime)?;
    let mut artifacts = vec![("config".to_string(), CONFIG_FILE.to_string()), ("table".into(), ABLATION_FILE.into())];
    for (i, r) in reports.iter().enumerate() {
        let rel = format!("reports/{i:03}.json");
        r.save(&out.join(&rel)).map_err(CliError::runtime)?;
        artifacts.push((format!("report{i:03}"), rel));
    }
    for ((count, fraction), mean) in table.cell_means() {
        let f = f64::from_bits(fraction);
        manifest.metrics.insert(format!("mean@{count}groups,fraction={f}"), mean);
        println!("{count} groups, fraction {f}: mean {mean:.4}");
    }
    let refs: Vec<(&str, &str)> = artifacts.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    finish_manifest(&mut manifest, &out, &refs)?;
    Ok(())
}

pub fn cmd_plot(args: &PlotArgs) -> Result<(), CliError> {
    if args.inputs.is_empty() {
        return Err(CliError::Usage("plot needs at least one metrics file".into()));
    }
    let inputs = args
        .inputs
        .iter()
        .map(|p| PlotInput::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let title = args.title.as_deref().unwrap_or("Label efficiency");
    plot_inputs(&inputs, title, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}
