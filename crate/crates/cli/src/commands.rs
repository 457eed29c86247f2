//! Subcommand bodies. Each writes its artifacts under the output
//! directory together with the effective configuration.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cvegan::evalcli::{
    complexity_ledger, evaluate_tool, write_complexity_csv, ArtifactConfig, ConvStub, ModelSpec, ProbeModel,
    Sequence,
};
use cvegan::losscal::{cross_validate, read_records, synthetic_database};
use cvegan::nnarch::{Checkpoint, CveNet, Discriminator, Network};
use cvegan::spheregan::{gradcheck_north_pole, gradcheck_relativistic};
use cvegan::trainer::{stage1_train, stage2_train, PairDataset, Tool};
use cvegan::videopipe::{
    build_training_pairs, load_pairs, read_y4m, save_pairs, synthetic_sequence, write_y4m, PlanarFrame, Y4mVideo,
};
use cvegan::Error;

use crate::{Command, Common};

pub enum Outcome {
    Complete,
    /// Some items failed; the count is reported.
    Partial(usize),
}

/// 1 for configuration problems, 2 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 1,
        _ => 2,
    }
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn load_config(common: &Common) -> Result<ArtifactConfig> {
    let mut cfg = ArtifactConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(dir) = &common.out_dir {
        cfg.out_dir = dir.clone();
    }
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(cfg)
}

pub fn run(common: &Common, command: &Command) -> Result<Outcome> {
    let cfg = load_config(common)?;
    match command {
        Command::CalibrateLoss => calibrate(&cfg),
        Command::MakeDataset => make_dataset(&cfg),
        Command::TrainStage1 => train_stage1(&cfg),
        Command::TrainStage2 { generator, discriminator } => {
            train_stage2(&cfg, generator.as_deref(), discriminator.as_deref())
        }
        Command::Enhance => enhance(&cfg, Tool::Pp, "enhanced.y4m"),
        Command::SraRestore => enhance(&cfg, Tool::Sra, "restored.y4m"),
        Command::Evaluate => evaluate(&cfg),
        Command::Gradcheck => gradcheck(&cfg),
        Command::Complexity => complexity(&cfg),
    }
}

fn calibrate(cfg: &ArtifactConfig) -> Result<Outcome> {
    let c = &cfg.calibrate;
    let databases = if c.databases.is_empty() {
        info!("no databases configured; generating {} synthetic ones", c.synthetic_databases);
        (0..c.synthetic_databases)
            .map(|i| synthetic_database(cfg.seed.wrapping_add(i as u64), c.synthetic_records, c.synthetic_driver))
            .collect::<cvegan::Result<Vec<_>>>()?
    } else {
        c.databases
            .iter()
            .map(|p| read_records(p).with_context(|| format!("reading {}", p.display())))
            .collect::<Result<Vec<_>>>()?
    };
    let result = cross_validate(&databases, &c.grid)?;
    result.write_csv(&cfg.out_dir.join("calibration.csv"))?;
    print!("{}", result.summary());
    Ok(Outcome::Complete)
}

fn source_frames(cfg: &ArtifactConfig) -> Result<Vec<PlanarFrame>> {
    let d = &cfg.dataset;
    if d.sources.is_empty() {
        info!("no sources configured; generating {} synthetic frames", d.synthetic_frames);
        return Ok(synthetic_sequence(d.synthetic_size, d.synthetic_size, d.synthetic_frames, cfg.seed)?);
    }
    let mut frames = Vec::new();
    for s in &d.sources {
        frames.extend(Sequence::load(s).with_context(|| format!("loading source {}", s.name))?.frames);
    }
    Ok(frames)
}

fn make_dataset(cfg: &ArtifactConfig) -> Result<Outcome> {
    let sources = source_frames(cfg)?;
    let sets = build_training_pairs(&sources, &cfg.codec, &cfg.codec.qps, cfg.dataset.tool, &cfg.dataset.pairs)?;
    let dir = cfg.manifest_path().parent().map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.clone());
    let manifest = save_pairs(&dir, &sets)?;
    println!(
        "{} QP groups of {} pairs written to {}",
        sets.len(),
        sets.first().map_or(0, PairDataset::len),
        manifest.display()
    );
    Ok(Outcome::Complete)
}

fn training_set(cfg: &ArtifactConfig) -> Result<PairDataset> {
    let manifest = cfg.manifest_path();
    let sets = load_pairs(&manifest).with_context(|| format!("loading {}", manifest.display()))?;
    let pick = match cfg.dataset.qp {
        Some(qp) => sets.into_iter().find(|s| s.qp == qp && s.tool == cfg.dataset.tool),
        None => sets.into_iter().find(|s| s.tool == cfg.dataset.tool),
    };
    pick.ok_or_else(|| {
        config_error(format!(
            "{} has no {} pairs{}",
            manifest.display(),
            cfg.dataset.tool.name(),
            cfg.dataset.qp.map(|q| format!(" at QP {q}")).unwrap_or_default()
        ))
    })
}

fn train_stage1(cfg: &ArtifactConfig) -> Result<Outcome> {
    let data = training_set(cfg)?;
    info!("stage 1 on {} pairs at QP {}", data.len(), data.qp);
    let out = stage1_train(&data, &cfg.net, &cfg.train)?;
    out.history.write_csv(&cfg.out_dir.join("stage1_history.csv"))?;
    let path = cfg.out_dir.join("generator_stage1.ckpt");
    out.generator.to_checkpoint().save(&path)?;
    let means = out.epoch_means();
    if let (Some(a), Some(b)) = (means.first(), means.last()) {
        println!("mean L_P {a:.6} -> {b:.6}; generator saved to {}", path.display());
    }
    Ok(Outcome::Complete)
}

fn load_generator(path: &Path) -> Result<CveNet> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(CveNet::from_checkpoint(&ck)?)
}

fn train_stage2(cfg: &ArtifactConfig, generator: Option<&Path>, discriminator: Option<&Path>) -> Result<Outcome> {
    let data = training_set(cfg)?;
    let gpath = generator.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join("generator_stage1.ckpt"));
    let g = load_generator(&gpath)?;
    let d = match discriminator {
        Some(p) => Some(Discriminator::from_checkpoint(
            &Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?,
        )?),
        None => None,
    };
    let out = stage2_train(g, d, &data, &cfg.train)?;
    out.history.write_csv(&cfg.out_dir.join("stage2_history.csv"))?;
    out.generator.to_checkpoint().save(&cfg.out_dir.join("generator_stage2.ckpt"))?;
    out.discriminator.to_checkpoint().save(&cfg.out_dir.join("discriminator.ckpt"))?;
    println!("stage 2 done; checkpoints in {}", cfg.out_dir.display());
    Ok(Outcome::Complete)
}

fn enhance(cfg: &ArtifactConfig, tool: Tool, default_name: &str) -> Result<Outcome> {
    let e = &cfg.enhance;
    let spec = e.input.as_ref().ok_or_else(|| config_error("enhance.input is not set"))?;
    let ckpt = e.checkpoint.as_ref().ok_or_else(|| config_error("enhance.checkpoint is not set"))?;
    let g = load_generator(ckpt)?;
    let fps = if spec.format.is_none() {
        let v = read_y4m(&spec.path)?;
        (v.fps_num, v.fps_den)
    } else {
        (30, 1)
    };
    let input = Sequence::load(spec)?;
    let frames = cvegan::videopipe::enhance_decoded(&input.frames, &g, tool)?;
    let output = e.output.clone().unwrap_or_else(|| cfg.out_dir.join(default_name));
    write_y4m(
        &output,
        &Y4mVideo {
            frames,
            fps_num: fps.0,
            fps_den: fps.1,
        },
    )?;
    println!("{} frames written to {}", input.frames.len(), output.display());
    Ok(Outcome::Complete)
}

fn evaluate(cfg: &ArtifactConfig) -> Result<Outcome> {
    if cfg.eval.sequences.is_empty() {
        return Err(config_error("eval.sequences is empty"));
    }
    let report = evaluate_tool(&cfg.eval);
    report.write_csv(&cfg.out_dir.join("eval.csv"))?;
    report.write_bd_csv(&cfg.out_dir.join("bd_rates.csv"))?;
    report.write_errors_csv(&cfg.out_dir.join("errors.csv"))?;
    print!("{}", report.summary());
    Ok(if report.has_errors() {
        Outcome::Partial(report.errors.len())
    } else {
        Outcome::Complete
    })
}

/// Draws a point in `[-2, 2)^dim`.
fn draw(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

fn gradcheck(cfg: &ArtifactConfig) -> Result<Outcome> {
    let g = &cfg.gradcheck;
    if g.dim == 0 || g.points == 0 {
        return Err(config_error("gradcheck.points and gradcheck.dim must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let path = cfg.out_dir.join("gradcheck.csv");
    let mut lines = vec!["objective,moment,point,grad_rel_error,hessian_rel_error,finite".to_string()];
    let mut failures = 0;
    let mut worst = 0.0f64;
    for &m in &g.moments {
        for objective in ["north-pole", "relativistic"] {
            let mut done = 0;
            let mut attempts = 0;
            while done < g.points {
                attempts += 1;
                if attempts > 100 * g.points {
                    bail!("could not draw {} non-degenerate points", g.points);
                }
                let x = draw(&mut rng, g.dim);
                let r = if objective == "north-pole" {
                    gradcheck_north_pole(&x, m, g.step)
                } else {
                    gradcheck_relativistic(&x, &draw(&mut rng, g.dim), m, g.step)
                };
                // degenerate draws are rejected by the checker and redrawn
                let Ok(r) = r else { continue };
                let ok = r.all_finite() && r.max_rel_error() < g.tolerance;
                failures += usize::from(!ok);
                worst = worst.max(r.max_rel_error());
                lines.push(format!(
                    "{objective},{m},{done},{:e},{},{}",
                    r.grad_rel_error,
                    r.hessian_rel_error.map(|v| format!("{v:e}")).unwrap_or_default(),
                    r.all_finite()
                ));
                done += 1;
            }
        }
    }
    fs::write(&path, lines.join("\n") + "\n")?;
    println!(
        "{} checks, {failures} above tolerance {:e}, worst relative error {worst:e}",
        lines.len() - 1,
        g.tolerance
    );
    Ok(if failures > 0 { Outcome::Partial(failures) } else { Outcome::Complete })
}

fn complexity(cfg: &ArtifactConfig) -> Result<Outcome> {
    let mut models: Vec<Box<dyn ProbeModel>> = Vec::new();
    for spec in &cfg.complexity.models {
        models.push(match spec {
            ModelSpec::Checkpoint { path } => Box::new(load_generator(path)?),
            ModelSpec::Generator { net } => Box::new(CveNet::new(net)?),
            &ModelSpec::ConvStub {
                width,
                depth,
                kernel,
                size,
            } => Box::new(ConvStub::new(width, depth, kernel, size, cfg.seed)?),
        });
    }
    let refs: Vec<&dyn ProbeModel> = models.iter().map(|m| m.as_ref()).collect();
    let rows = complexity_ledger(&refs, &cfg.complexity.probe)?;
    write_complexity_csv(&cfg.out_dir.join("complexity.csv"), &rows)?;
    for r in &rows {
        println!(
            "{:<28} {:>10} params ({:.3}x)  {:>9.2} ms ({:.3}x)",
            r.model, r.parameters, r.parameter_ratio, r.forward_ms, r.runtime_ratio
        );
    }
    Ok(Outcome::Complete)
}

