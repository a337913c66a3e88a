use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use mgtr_core::checkpoint::Checkpoint;
use mgtr_core::config::RunConfig;
use mgtr_core::decoder::IntentionGoalSet;
use mgtr_core::numerics::{ParamStore, Tape};
use mgtr_core::scene::{generate_synthetic, load_scenarios, save_scenarios, Scenario};
use mgtr_core::tokenizer::{Token, TokenEncoders};
use mgtr_core::train::{cluster_goals, evaluate, Trainer};
use mgtr_core::{Error, Result};

use crate::svg;

/// Salt that separates the validation seed stream from the training one.
const VAL_SEED_SALT: u64 = 0x5641_4c5f_5345_4544;

pub const PREDICTION_SCHEMA_VERSION: u32 = 1;

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Result<Vec<Scenario>> {
    load_scenarios(path).map_err(|e| match e {
        Error::Io(io) => io_at(path)(io),
        other => other,
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(io_at(p)),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(io_at(path))
}

pub fn gen_data(config: &RunConfig, train_out: Option<PathBuf>, val_out: Option<PathBuf>) -> Result<()> {
    let train_path = train_out.unwrap_or_else(|| config.data.train.clone());
    let val_path = val_out.unwrap_or_else(|| config.data.val.clone());
    let train = generate_synthetic(config.seed, &config.synthetic)?;
    let mut val_cfg = config.synthetic.clone();
    val_cfg.num_scenarios = config.val_scenarios;
    let val = generate_synthetic(config.seed ^ VAL_SEED_SALT, &val_cfg)?;
    for (path, set) in [(&train_path, &train), (&val_path, &val)] {
        ensure_parent(path)?;
        save_scenarios(path, set).map_err(|e| match e {
            Error::Io(io) => io_at(path)(io),
            other => other,
        })?;
    }
    let targets = |s: &[Scenario]| s.iter().map(|x| x.targets.len()).sum::<usize>();
    println!(
        "train: {} scenarios, {} targets -> {}",
        train.len(),
        targets(&train),
        train_path.display()
    );
    println!("val: {} scenarios, {} targets -> {}", val.len(), targets(&val), val_path.display());
    Ok(())
}

pub fn cluster(
    config: &RunConfig,
    train: Option<PathBuf>,
    k: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let train = train.unwrap_or_else(|| config.data.train.clone());
    let out = out.unwrap_or_else(|| config.data.goals.clone());
    let k = k.unwrap_or(config.model.decoder.modes);
    let scenarios = load(&train)?;
    let goals = cluster_goals(&scenarios, k, seed.unwrap_or(config.seed))?;
    write_file(&out, (goals.to_json()? + "\n").as_bytes())?;
    println!("{k} goals per type from {} scenarios -> {}", scenarios.len(), out.display());
    Ok(())
}

fn load_goals(path: &Path) -> Result<IntentionGoalSet> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("goals file {}: {e} (run cluster-intentions first)", path.display()),
        ))
    })?;
    IntentionGoalSet::from_json(&text)
}

pub fn checkpoint_dir(root: &Path, epoch: usize) -> PathBuf {
    root.join(format!("epoch-{epoch:04}"))
}

pub fn train(config: &RunConfig) -> Result<()> {
    let scenarios = load(&config.data.train)?;
    let goals = load_goals(&config.data.goals)?;
    let mut trainer = Trainer::new(config, &scenarios, goals)?;
    info!(
        "training on {} targets, {} parameters, config {}",
        trainer.samples.len(),
        trainer.model.store.scalar_count(),
        &config.hash()[..12]
    );
    let log_path = &config.data.metrics_log;
    ensure_parent(log_path)?;
    let mut log = BufWriter::new(File::create(log_path).map_err(io_at(log_path))?);
    let mut write_err = None;
    let root = config.data.checkpoints.clone();
    trainer.run(
        |step| {
            let line = serde_json::to_string(step).expect("step log serializes");
            if let Err(e) = writeln!(log, "{line}") {
                write_err.get_or_insert(e);
            }
            if step.step % 50 == 0 {
                info!("step {} epoch {} loss {:.4}", step.step, step.epoch, step.total);
            }
        },
        |ckpt| {
            let dir = checkpoint_dir(&root, ckpt.manifest.epoch);
            ckpt.save(&dir)?;
            info!("epoch {} -> {}", ckpt.manifest.epoch, dir.display());
            Ok(())
        },
    )?;
    if let Some(e) = write_err {
        return Err(io_at(log_path)(e));
    }
    log.flush().map_err(io_at(log_path))?;
    println!("trained {} steps over {} epochs", trainer.step, trainer.epoch);
    Ok(())
}

pub fn eval(config: &RunConfig, checkpoint: &Path, data: Option<PathBuf>, json: Option<PathBuf>) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = ckpt.to_model()?;
    let data = data.unwrap_or_else(|| config.data.val.clone());
    let scenarios = load(&data)?;
    let inputs = model.scenario_inputs(&scenarios)?;
    let (report, _) = evaluate(&model, &inputs, &config.nms, ckpt.manifest.config.synthetic.dt)?;
    print!("{}", report.table());
    if let Some(path) = json {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        write_file(&path, (text + "\n").as_bytes())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ModeOut {
    probability: f64,
    /// World-frame positions, one per future step.
    trajectory: Vec<[f64; 2]>,
}

#[derive(Serialize)]
struct TargetOut {
    scenario_id: String,
    target_id: u64,
    agent_type: String,
    modes: Vec<ModeOut>,
}

#[derive(Serialize)]
struct PredictionFile {
    schema_version: u32,
    frame: &'static str,
    dt: f64,
    predictions: Vec<TargetOut>,
}

pub fn predict(checkpoint: &Path, scenarios: &Path, out: &Path, svg_dir: Option<PathBuf>) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = ckpt.to_model()?;
    let nms = ckpt.manifest.config.nms;
    let scenes = load(scenarios)?;
    let mut file = PredictionFile {
        schema_version: PREDICTION_SCHEMA_VERSION,
        frame: "world",
        dt: ckpt.manifest.config.synthetic.dt,
        predictions: Vec::new(),
    };
    for scene in &scenes {
        let prepared = model.prepare(scene)?;
        let mut plotted = Vec::new();
        for &t in &scene.targets {
            let inputs = model.target_inputs(scene, &prepared, t)?;
            let p = model.predict(&inputs, &nms)?;
            let modes: Vec<ModeOut> = p
                .trajectories()
                .into_iter()
                .zip(&p.selected.modes.probabilities)
                .map(|(traj, &probability)| ModeOut {
                    probability,
                    trajectory: traj.iter().map(|q| p.pose.to_world(*q)).collect(),
                })
                .collect();
            plotted.push(svg::TargetPlot {
                target_id: t,
                modes: modes.iter().map(|m| (m.probability, m.trajectory.clone())).collect(),
            });
            file.predictions.push(TargetOut {
                scenario_id: p.scenario_id,
                target_id: p.target_id,
                agent_type: p.agent_type.name().to_string(),
                modes,
            });
        }
        if let Some(dir) = &svg_dir {
            let path = dir.join(format!("{}.svg", scene.scenario_id));
            write_file(&path, svg::render(scene, &plotted).as_bytes())?;
        }
    }
    let text = serde_json::to_string_pretty(&file).expect("predictions serialize");
    write_file(out, (text + "\n").as_bytes())?;
    println!("{} targets -> {}", file.predictions.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct TokenDump<'a> {
    scenario_id: &'a str,
    target_id: u64,
    tokens: Vec<Token>,
}

pub fn tokenize(
    config: &RunConfig,
    scenarios: &Path,
    dump: bool,
    checkpoint: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let scenes = load(scenarios)?;
    let first = scenes
        .first()
        .ok_or_else(|| Error::Contract(format!("{} holds no scenarios", scenarios.display())))?;
    let (model_cfg, store, encoders) = match checkpoint {
        Some(path) => {
            let model = Checkpoint::load(&path)?.to_model()?;
            (model.config.clone(), model.store, model.tokenizer)
        }
        None => {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let enc = TokenEncoders::new(
                &mut store,
                &config.model.granularity,
                first.history_len(),
                first.voxels.channels(),
                config.model.encoder.model_dim,
                &mut rng,
            )?;
            (config.model.clone(), store, enc)
        }
    };
    let mut lines = Vec::new();
    for scene in &scenes {
        let prepared = mgtr_core::tokenizer::PreparedScene::new(scene, &model_cfg.granularity)?;
        for &t in &scene.targets {
            let inputs =
                mgtr_core::tokenizer::build_target_inputs(scene, &prepared, t, &model_cfg.effective_selection())?;
            if dump {
                let mut tape = Tape::new();
                let set = encoders.forward(&mut tape, &store, &inputs)?;
                let d = TokenDump {
                    scenario_id: &scene.scenario_id,
                    target_id: t,
                    tokens: set.tokens(&tape),
                };
                lines.push(serde_json::to_string(&d).expect("tokens serialize"));
            } else {
                let maps: Vec<String> = inputs.maps.iter().map(|l| l.tokens().to_string()).collect();
                let voxels: Vec<String> = inputs.voxels.iter().map(|l| l.tokens().to_string()).collect();
                lines.push(format!(
                    "{} target {}: {} agents, map [{}], voxel [{}]",
                    scene.scenario_id,
                    t,
                    inputs.agents.tokens(),
                    maps.join(", "),
                    voxels.join(", ")
                ));
            }
        }
    }
    let mut text = lines.join("\n");
    text.push('\n');
    match out {
        Some(path) => write_file(&path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
