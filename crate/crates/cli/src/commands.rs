use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use fungrasp_core::demo::{EditAction, STATIC_EPS};
use fungrasp_core::eval::{ablation_run, evaluate, random_baseline, Actor, Component, EvalConfig, Metrics};
use fungrasp_core::io::{self, load_checkpoint};
use fungrasp_core::policy::{CloudBank, PolicyParams, Squash};
use fungrasp_core::rng::{rng_for, Stream};
use fungrasp_core::sim::{reset_env, rollout};
use fungrasp_core::trainer::{build_pool, check_task_gradients, train_grasp, GraspTask, TrainConfig};
use fungrasp_core::Scene;
use serde::Serialize;

use crate::config::RunConfig;
use crate::{ActorArgs, ActorKind, EvalArgs, UserError};

/// Relative error the gradient check must stay under.
const GRADIENT_GATE: f64 = 1e-4;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| UserError::new(format!("cannot write {}: {e}", path.display())).into())
}

fn prepare_out(cfg: &RunConfig) -> Result<std::path::PathBuf> {
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| UserError::new(format!("cannot create {}: {e}", out.display())))?;
    Ok(out)
}

fn user(e: fungrasp_core::Error) -> anyhow::Error {
    UserError::new(e.to_string()).into()
}

#[derive(Serialize)]
struct TrainReport<'a> {
    seed: u64,
    config_digest: String,
    iterations: usize,
    final_eval: &'a Metrics,
    metrics_log: &'a str,
    checkpoint: &'a str,
    config: &'a RunConfig,
}

pub fn train(mut cfg: RunConfig, iterations: Option<usize>) -> Result<()> {
    let seed = cfg.require_seed()?;
    if let Some(n) = iterations {
        cfg.train.iterations = n;
    }
    let train = cfg.train_config()?;
    let scene = cfg.scene()?;
    let out = prepare_out(&cfg)?;
    let t0 = Instant::now();
    let run = train_grasp(&scene, &train, cfg.workers(), Some(&out))?;
    log::info!("trained {} iterations in {:.1?}", train.iterations, t0.elapsed());
    write_json(
        &out.join("train_report.json"),
        &TrainReport {
            seed,
            config_digest: cfg.digest(),
            iterations: train.iterations,
            final_eval: &run.final_eval,
            metrics_log: fungrasp_core::trainer::METRICS_LOG,
            checkpoint: fungrasp_core::trainer::FINAL_CHECKPOINT,
            config: &cfg,
        },
    )?;
    println!("final evaluation: {}", run.final_eval);
    Ok(())
}

/// Loaded policy inputs for `--actor policy`.
struct LoadedPolicy {
    params: PolicyParams,
    bank: CloudBank,
    squash: Squash,
}

fn load_actor(scene: &Scene, train: &TrainConfig, args: &ActorArgs) -> Result<Option<LoadedPolicy>> {
    if args.actor != ActorKind::Policy {
        return Ok(None);
    }
    let path = args
        .checkpoint
        .as_ref()
        .ok_or_else(|| UserError::new("--actor policy needs --checkpoint PATH"))?;
    let (params, meta) = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    meta.ensure_compatible(&scene.spec.name, scene.style_count(), scene.spec.dof(), meta.points)?;
    Ok(Some(LoadedPolicy {
        bank: CloudBank::new(scene, meta.points, meta.fps_seed)?,
        squash: Squash::new(&train.bounds, scene.spec.dof())?,
        params,
    }))
}

fn actor<'a>(scene: &Scene, train: &TrainConfig, kind: ActorKind, policy: Option<&'a LoadedPolicy>, stochastic: bool) -> Actor<'a> {
    match (kind, policy) {
        (ActorKind::Policy, Some(p)) => Actor::Policy {
            params: &p.params,
            bank: &p.bank,
            squash: &p.squash,
            stochastic,
        },
        (ActorKind::Random, _) => Actor::Uniform(train.bounds.intervals(scene.spec.dof())),
        _ => Actor::Fixed(EditAction::identity(scene.spec.dof())),
    }
}

fn eval_config(cfg: &RunConfig, train: &TrainConfig, seed: u64, episodes: Option<usize>) -> EvalConfig {
    let mut ec = EvalConfig::new(episodes.unwrap_or(cfg.eval.episodes), seed);
    ec.strict = cfg.eval.strict_success;
    ec.exhaustive_styles = cfg.eval.exhaustive_styles;
    ec.sim = train.sim;
    ec.reward = train.reward;
    ec
}

#[derive(Serialize)]
struct EvalReport<'a> {
    metrics: &'a Metrics,
    baseline: &'a Metrics,
    config_digest: String,
    episodes_file: &'a str,
}

pub fn eval(cfg: RunConfig, args: &ActorArgs, ea: &EvalArgs) -> Result<()> {
    let seed = cfg.require_seed()?;
    let train = cfg.train_config()?;
    let scene = cfg.scene()?;
    let objects = train.object_indices(&scene).map_err(user)?;
    let mut ec = eval_config(&cfg, &train, seed, ea.episodes);
    ec.stochastic = args.stochastic;
    ec.strict |= ea.strict_success;
    ec.exhaustive_styles |= ea.exhaustive_styles;
    let policy = load_actor(&scene, &train, args)?;
    let a = actor(&scene, &train, args.actor, policy.as_ref(), args.stochastic);
    let cameras = io::load_cameras(cfg.assets()?.cameras)?;
    let out = prepare_out(&cfg)?;
    let pool = build_pool(cfg.workers())?;
    let (evaluation, baseline) = pool.install(|| -> Result<_> {
        let e = evaluate(&scene, &objects, &a, &ec)?;
        let b = random_baseline(&scene, &objects, &train.bounds, &ec)?;
        Ok((e, b))
    })?;
    let metrics = evaluation.metrics.clone().with_baseline(&baseline.metrics);
    let episodes_file = "episodes.jsonl";
    let digest = cfg.digest();
    io::export_rollouts(&scene, &evaluation.records, &cameras, out.join(episodes_file), false, &digest)?;
    write_json(
        &out.join("eval_report.json"),
        &EvalReport {
            metrics: &metrics,
            baseline: &baseline.metrics,
            config_digest: digest,
            episodes_file,
        },
    )?;
    println!("policy:   {metrics}");
    println!("baseline: {}", baseline.metrics);
    Ok(())
}

pub fn ablate(mut cfg: RunConfig, component: Component, iterations: Option<usize>, episodes: Option<usize>) -> Result<()> {
    cfg.require_seed()?;
    if let Some(n) = iterations {
        cfg.train.iterations = n;
    }
    if let Some(n) = episodes {
        cfg.train.eval_episodes = n;
    }
    let train = cfg.train_config()?;
    let scene = cfg.scene()?;
    let out = prepare_out(&cfg)?;
    let report = ablation_run(&scene, &train, component, cfg.workers())?;
    write_json(&out.join(format!("ablation_{component}.json")), &report)?;
    println!("full:        {}", report.full);
    println!("w/o {component:<8} {}", report.ablated);
    Ok(())
}

pub fn collect(cfg: RunConfig, args: &ActorArgs, episodes: Option<usize>, success_only: bool) -> Result<()> {
    let seed = cfg.require_seed()?;
    let train = cfg.train_config()?;
    let scene = cfg.scene()?;
    let objects = train.object_indices(&scene).map_err(user)?;
    let mut ec = eval_config(&cfg, &train, seed, episodes);
    ec.stochastic = args.stochastic;
    let policy = load_actor(&scene, &train, args)?;
    let a = actor(&scene, &train, args.actor, policy.as_ref(), args.stochastic);
    let cameras = io::load_cameras(cfg.assets()?.cameras)?;
    let out = prepare_out(&cfg)?;
    let pool = build_pool(cfg.workers())?;
    let evaluation = pool.install(|| evaluate(&scene, &objects, &a, &ec))?;
    let m = io::export_rollouts(&scene, &evaluation.records, &cameras, out.join("rollouts.jsonl"), success_only, &cfg.digest())?;
    println!(
        "exported {} of {} episodes ({} frames, {} successes) to {}",
        m.episodes_exported,
        m.episodes_seen,
        m.frames,
        m.successes,
        out.join("rollouts.jsonl").display()
    );
    Ok(())
}

#[derive(Serialize)]
struct AffordanceSample<'a> {
    object: &'a str,
    index: usize,
    point: [f64; 3],
    normal: [f64; 3],
    weight: f64,
}

pub fn sample_affordance(cfg: RunConfig, per_object: usize) -> Result<()> {
    let seed = cfg.seed.unwrap_or(0);
    let scene = cfg.scene()?;
    for (k, o) in scene.objects.iter().enumerate() {
        let mut rng = rng_for(seed, Stream::Misc, 3, k as u64);
        for _ in 0..per_object {
            let (i, p) = o.afford.sample(&o.model, &mut rng);
            let n = o.model.normals[i];
            let line = AffordanceSample {
                object: &o.model.name,
                index: i,
                point: [p.x, p.y, p.z],
                normal: [n.x, n.y, n.z],
                weight: o.afford.weights[i],
            };
            println!("{}", serde_json::to_string(&line)?);
        }
    }
    Ok(())
}

pub fn demo_inspect(cfg: RunConfig) -> Result<()> {
    let seed = cfg.seed.unwrap_or(0);
    let train = cfg.train_config()?;
    let scene = cfg.scene()?;
    let demo = &scene.demo;
    let spec = &scene.spec;
    println!(
        "hand {} ({} joints), {} frames, grasp frame {}",
        spec.name,
        spec.dof(),
        demo.frames.len(),
        demo.grasp_index
    );
    let moving: Vec<&str> = (0..spec.dof())
        .filter(|&j| (demo.q_grasp()[j] - demo.q0()[j]).abs() > STATIC_EPS)
        .map(|j| spec.joint_names[j].as_str())
        .collect();
    println!("moving joints: {}", if moving.is_empty() { "none".to_string() } else { moving.join(", ") });
    let path: f64 = demo.frames.windows(2).map(|w| (w[1].p.t - w[0].p.t).norm()).sum();
    let lift = demo.frames.last().map_or(0.0, |f| f.p.t.z) - demo.frames[demo.grasp_index].p.t.z;
    println!("wrist path {path:.3} m in the object frame, lift {lift:.3} m after the grasp");

    println!("unedited replay (d_final in cm):");
    let names: Vec<&str> = scene.styles.iter().map(|s| s.id.as_str()).collect();
    println!("  {:<10} {}", "", names.iter().map(|n| format!("{n:>14}")).collect::<String>());
    let identity = EditAction::identity(spec.dof());
    let s = scene.style_count();
    for (k, o) in scene.objects.iter().enumerate() {
        let mut row = String::new();
        for style in 0..s {
            let mut rng = rng_for(seed, Stream::Eval, 0, (k * s + style) as u64);
            let env = reset_env(&scene, k, Some(style), None, &train.sim, &mut rng);
            let rec = rollout(&scene, &env, &identity, &train.sim)?;
            let tag = if rec.success { "ok" } else { "fail" };
            row.push_str(&format!("{:>14}", format!("{tag} {:.1}", 100.0 * rec.d_final)));
        }
        println!("  {:<10} {row}", o.model.name);
    }
    Ok(())
}

pub fn check_gradients(cfg: RunConfig, count: usize) -> Result<()> {
    let seed = cfg.seed.unwrap_or(0);
    let train = cfg.train_config()?;
    let scene = cfg.scene()?;
    let task = GraspTask::new(&scene, &train)?;
    let t0 = Instant::now();
    let pool = build_pool(cfg.workers())?;
    let r = pool.install(|| check_task_gradients(&task, 4, count, seed))?;
    for (block, e) in &r.per_block {
        println!("  {block:<8} {e:.3e}");
    }
    println!(
        "max relative error {:.3e} over {} parameters ({} skipped at kinks) in {:.2?}",
        r.max_rel_error,
        r.checked,
        r.skipped,
        t0.elapsed()
    );
    if r.max_rel_error < GRADIENT_GATE {
        println!("gradient gate (< {GRADIENT_GATE:e}): pass");
        Ok(())
    } else {
        anyhow::bail!("gradient gate (< {GRADIENT_GATE:e}) failed")
    }
}
