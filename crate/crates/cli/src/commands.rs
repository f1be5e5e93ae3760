use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thermo_core::data::{
    clip_samples, extract_flow_cache, filter_subset, load_manifest, manifest_samples, synth_clips, to_examples,
    write_synth_dataset, Manifest, MotionSource, Split, SynthClip, SynthConfig, WindowSample,
};
use thermo_core::imaging::Plane;
use thermo_core::metrics::{evaluate, measure_psit, measure_psit_with, DEFAULT_THRESHOLD};
use thermo_core::model::{estimate_flops, load_weights, save_weights, Model, ModelSpec};
use thermo_core::rtpipeline::{
    budget_report, stream_process, Debouncer, DirectorySource, FrameSource, LengthPrefixedSource, EVENT_HEADER,
};
use thermo_core::tensor::Tensor;
use thermo_core::train::{fit, predict_examples, save_history};

use crate::args::{BenchArgs, EvalArgs, FlowArgs, StreamArgs, SynthArgs, TrainArgs};
use crate::settings::{RunConfig, SEED_ENV};
use crate::{conflict, CmdResult};

pub const WEIGHTS_FILE: &str = "weights.tfwt";
pub const HISTORY_FILE: &str = "history.csv";
pub const EVENTS_FILE: &str = "events.log";

pub fn flow(a: FlowArgs) -> CmdResult {
    let mut rc = RunConfig::from_args(&a.model)?;
    rc.set_opt("flow.preset", a.preset.as_deref());
    rc.set("data.manifest", a.manifest.display());
    let spec = rc.model_spec()?;
    let cfg = rc.flow_config()?;
    let manifest = load_manifest(&a.manifest)?;
    rc.write_resolved(&a.out, &spec, None)?;
    let started = Instant::now();
    let stats = extract_flow_cache(&manifest, &a.out, (spec.height, spec.width), &cfg)?;
    println!(
        "flow cache {}: {} written, {} up to date ({} videos, {:.1} s)",
        a.out.display(),
        stats.written,
        stats.skipped,
        manifest.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let seed = match a.seed {
        Some(s) => s,
        None => match std::env::var(SEED_ENV) {
            Ok(s) => s.trim().parse().with_context(|| format!("{SEED_ENV}={s:?} is not a seed"))?,
            Err(_) => 0,
        },
    };
    let mut cfg = SynthConfig::new(a.n_fall, a.n_nonfall, a.extent, seed);
    cfg.frames = a.frames;
    if let Some(n) = a.noise {
        cfg.noise = n;
    }
    let manifest = write_synth_dataset(&cfg, &a.out)?;
    let falls = manifest.rows.iter().filter(|r| r.fall).count();
    println!(
        "wrote {} videos ({} fall, {} non-fall) to {}",
        manifest.len(),
        falls,
        manifest.len() - falls,
        a.out.join("manifest.csv").display()
    );
    Ok(())
}

/// Labelled windows of one split, from the synthetic generator or a manifest.
fn load_split(rc: &RunConfig, spec: &ModelSpec, split: Split) -> anyhow::Result<Vec<WindowSample>> {
    let hop = rc.parsed::<usize>("data.hop")?.unwrap_or(1);
    let subset = rc.get("data.subset");
    match rc.get("data.source") {
        Some("synthetic") => {
            let motion = if spec.variant.uses_motion() {
                MotionSource::Compute(rc.flow_config()?)
            } else {
                MotionSource::None
            };
            let mut clips = synth_clips(&rc.synth_config(spec)?)?;
            if let Some(tag) = subset {
                clips = synth_subset(clips, tag)?;
            }
            Ok(clip_samples(&clips, split, &motion, hop)?)
        }
        Some("manifest") => {
            let path = rc.path("data.manifest").ok_or_else(|| anyhow!("data.manifest is not set"))?;
            let mut manifest: Manifest = load_manifest(&path)?;
            if let Some(tag) = subset {
                manifest = filter_subset(&manifest, tag)?;
            }
            let motion = match (spec.variant.uses_motion(), rc.path("data.flow_cache")) {
                (false, _) => MotionSource::None,
                (true, Some(cache)) => MotionSource::Cache(cache),
                (true, None) => bail!("m1 on a manifest needs --flow-cache"),
            };
            Ok(manifest_samples(&manifest, split, (spec.height, spec.width), &motion, hop)?)
        }
        Some(other) => bail!("data.source must be synthetic or manifest, got {other:?}"),
        None => bail!("no data source: pass --manifest or --synthetic"),
    }
}

fn synth_subset(clips: Vec<SynthClip>, tag: &str) -> anyhow::Result<Vec<SynthClip>> {
    let valid: std::collections::BTreeSet<&str> = clips.iter().flat_map(|c| c.tags.iter().map(String::as_str)).collect();
    if !valid.contains(tag) {
        return Err(thermo_core::Error::UnknownTag {
            tag: tag.to_string(),
            valid: valid.into_iter().collect::<Vec<_>>().join(", "),
        }
        .into());
    }
    Ok(clips.into_iter().filter(|c| c.tags.iter().any(|t| t == tag)).collect())
}

fn set_data_source(rc: &mut RunConfig, manifest: Option<&Path>, synthetic: bool, flow_cache: Option<&Path>, subset: Option<&str>) {
    if synthetic {
        rc.set("data.source", "synthetic");
    }
    if let Some(m) = manifest {
        rc.set("data.source", "manifest");
        rc.set("data.manifest", m.display());
    }
    rc.set_opt("data.flow_cache", flow_cache.map(Path::display));
    rc.set_opt("data.subset", subset);
}

pub fn train(a: TrainArgs) -> CmdResult {
    let mut rc = RunConfig::from_args(&a.model)?;
    set_data_source(&mut rc, a.manifest.as_deref(), a.synthetic, a.flow_cache.as_deref(), a.subset.as_deref());
    rc.set_opt("train.max_epochs", a.epochs);
    rc.set_opt("train.learning_rate", a.lr);
    rc.set_opt("train.batch_size", a.batch_size);
    rc.set_opt("train.patience", a.patience);
    let seed = rc.resolve_seed(a.seed)?;
    let spec = rc.model_spec()?;
    if a.motion_flow && !spec.variant.uses_motion() {
        return Err(conflict(format!(
            "--motion-flow conflicts with --variant {}: only m1 takes a motion channel",
            spec.variant
        )));
    }
    if spec.variant.uses_motion() && rc.get("data.source") == Some("manifest") && rc.get("data.flow_cache").is_none() {
        return Err(conflict("m1 on a manifest needs --flow-cache (run `thermo flow` first) or --synthetic"));
    }
    if rc.get("data.source").is_none() {
        return Err(conflict("no data source: pass --manifest or --synthetic"));
    }
    let cfg = rc.train_config()?;
    rc.write_resolved(&a.out, &spec, Some(&cfg))?;

    let train = to_examples(&load_split(&rc, &spec, Split::Train)?)?;
    let val = to_examples(&load_split(&rc, &spec, Split::Val)?)?;
    log::info!("{} training and {} validation windows", train.len(), val.len());

    let mut init = ChaCha8Rng::seed_from_u64(seed);
    init.set_stream(1);
    let mut model = Model::build(&spec, &mut init)?;
    log::info!("{} ({} scale): {} parameters", spec.variant, spec.scale, model.count_params());
    let started = Instant::now();
    let result = fit(&mut model, &train, &val, &cfg, |r| {
        log::info!(
            "epoch {:>3}  train_loss {:.4}  val_loss {:.4}  val_auc {:.4}  ({:.0} s)",
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.val_auc,
            started.elapsed().as_secs_f64()
        )
    })?;
    save_weights(&model, &a.out.join(WEIGHTS_FILE))?;
    save_history(&result.history, &a.out.join(HISTORY_FILE))?;
    let best = &result.history[result.best_epoch - 1];
    println!(
        "best epoch {} of {}: val_loss {:.4} val_auc {:.4}; outputs in {}",
        result.best_epoch,
        result.history.len(),
        best.val_loss,
        best.val_auc,
        a.out.display()
    );
    Ok(())
}

fn load_model(weights: &Path, spec: &ModelSpec) -> anyhow::Result<Model<f32>> {
    load_weights(spec, weights).with_context(|| format!("loading {}", weights.display()))
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let mut rc = RunConfig::for_weights(Some(&a.weights), &a.model)?;
    set_data_source(&mut rc, a.manifest.as_deref(), a.synthetic, a.flow_cache.as_deref(), a.subset.as_deref());
    rc.set_opt("eval.threshold", a.threshold);
    let split: Split = a.split.parse()?;
    let spec = rc.model_spec()?;
    log::info!("resolved configuration:\n{}", rc.resolved(&spec, None)?.render().trim_end());
    let model = load_model(&a.weights, &spec)?;
    let threshold = rc.parsed("eval.threshold")?.unwrap_or(DEFAULT_THRESHOLD);
    let samples = to_examples(&load_split(&rc, &spec, split)?)?;
    if samples.is_empty() {
        return Err(anyhow!("the {split} split holds no windows").into());
    }
    let scores = predict_examples(&model, &samples, 16)?;
    let labels: Vec<bool> = samples.iter().map(|e| e.label).collect();
    println!("{}", evaluate(&scores, &labels, threshold)?);
    Ok(())
}

pub fn bench(a: BenchArgs) -> CmdResult {
    let rc = RunConfig::for_weights(a.weights.as_deref(), &a.model)?;
    let spec = rc.model_spec()?;
    let (do_flops, do_psit) = if a.flops || a.psit { (a.flops, a.psit) } else { (true, true) };
    println!("variant {} scale {} input {:?}", spec.variant, spec.scale, spec.input_extents());
    if do_flops {
        println!("gflops {:.3}", estimate_flops(&spec) / 1e9);
    }
    if !do_psit {
        return Ok(());
    }
    if !(a.budget > 0.0) || !(a.fps > 0.0) {
        return Err(anyhow!("--budget and --fps must be positive").into());
    }
    let model = match &a.weights {
        Some(w) => load_model(w, &spec)?,
        None => Model::build(&spec, &mut ChaCha8Rng::seed_from_u64(0))?,
    };
    let mut shape = vec![a.batch];
    shape.extend(spec.input_extents());
    let x = Tensor::from_fn(&shape, |i| ((i.iter().sum::<usize>() * 7919) % 255) as f32 / 255.0);
    let psit = measure_psit(&model, &x, a.reps)?;
    println!("psit_median_ms {:.3}", psit.median_ms);
    println!("psit_p95_ms {:.3}", psit.p95_ms);
    let mut total_p95 = psit.p95_ms;
    if spec.variant.uses_motion() {
        let cfg = rc.flow_config()?;
        let (h, w) = (spec.height, spec.width);
        let prev = Plane::from_fn(h, w, |y, x| ((y * 3 + x * 5) % 17) as f64 / 17.0);
        let next = Plane::from_fn(h, w, |y, x| ((y * 3 + x * 5 + 4) % 17) as f64 / 17.0);
        let flow = measure_psit_with(1, a.reps, 1, || {
            thermo_core::data::motion_plane(&prev, &next, &cfg)?;
            Ok(())
        })?;
        println!("flow_median_ms {:.3}", flow.median_ms);
        println!("flow_p95_ms {:.3}", flow.p95_ms);
        total_p95 += flow.p95_ms;
    }
    let limit = a.budget.min(1e3 / a.fps);
    println!("window_budget_ms {limit:.1}");
    println!("budget_met {}", total_p95 <= limit);
    Ok(())
}

pub fn stream(a: StreamArgs) -> CmdResult {
    let mut rc = RunConfig::for_weights(Some(&a.weights), &a.model)?;
    rc.set_opt("stream.fps", a.fps);
    rc.set_opt("stream.budget_ms", a.budget);
    rc.set_opt("stream.threshold", a.threshold);
    rc.set_opt("stream.cooldown", a.cooldown);
    let spec = rc.model_spec()?;
    if a.flow && !spec.variant.uses_motion() {
        return Err(conflict(format!("--flow conflicts with {}: only m1 takes a motion channel", spec.variant)));
    }
    if !a.flow && spec.variant.uses_motion() {
        return Err(conflict("m1 weights need --flow for the inline motion channel"));
    }
    let cfg = rc.stream_config(&spec)?;
    let model = load_model(&a.weights, &spec)?;
    if let Some(out) = &a.out {
        rc.write_resolved(out, &spec, None)?;
    } else {
        log::info!("resolved configuration:\n{}", rc.resolved(&spec, None)?.render().trim_end());
    }

    let source: Box<dyn FrameSource> = if a.source == "-" {
        Box::new(LengthPrefixedSource::new(std::io::stdin(), "<stdin>"))
    } else {
        let dir = PathBuf::from(&a.source);
        if !dir.is_dir() {
            return Err(anyhow!("frame source {} is not a directory", dir.display()).into());
        }
        Box::new(DirectorySource::open(&dir, (!a.no_pace).then_some(cfg.fps))?)
    };
    let mut log_file = match &a.out {
        Some(out) => {
            let path = out.join(EVENTS_FILE);
            let mut f = std::io::BufWriter::new(
                std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?,
            );
            writeln!(f, "{EVENT_HEADER}")?;
            Some(f)
        }
        None => None,
    };
    let mut debouncer = Debouncer::new(cfg.cooldown);
    let mut alerts = 0usize;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "{EVENT_HEADER}")?;
    let events = stream_process(source, &model, &cfg, |e| {
        let line = e.to_line();
        let io = |r: std::io::Result<()>| r.map_err(|err| thermo_core::Error::Stream(err.to_string()));
        io(writeln!(out, "{line}"))?;
        if let Some(f) = log_file.as_mut() {
            io(writeln!(f, "{line}"))?;
        }
        if let Some(alert) = debouncer.push(e) {
            alerts += 1;
            io(writeln!(out, "ALERT fall at window {} (score {:.3})", alert.window, alert.score))?;
        }
        Ok(())
    })?;
    if let Some(mut f) = log_file {
        f.flush()?;
    }
    if events.is_empty() {
        writeln!(out, "stream ended before the first full window; alerts 0")?;
        return Ok(());
    }
    writeln!(out, "alerts {alerts}")?;
    writeln!(out, "budget {} (budget {} ms)", budget_report(&events)?, cfg.budget_ms)?;
    Ok(())
}
