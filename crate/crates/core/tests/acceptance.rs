//! Acceptance suite. Prints one line per criterion and exits non-zero if a
//! gated criterion fails. Criterion 7 is reported but never gates.

use std::collections::BTreeMap;
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use fungrasp_core::demo::{edit_demo, interpolate_joints_raw, interpolation_fraction, target_joint_config, ActionBounds, EditAction, Fraction};
use fungrasp_core::eval::{evaluate, random_baseline, Actor, EvalConfig, Metrics};
use fungrasp_core::io::{self, CameraModel};
use fungrasp_core::reward::{combine, total_reward, RewardConfig, RewardInputs};
use fungrasp_core::rng::{rng_for, Stream};
use fungrasp_core::sim::{grasp_success, Contact, GraspCheck, Outcome, Scene, SimConfig};
use fungrasp_core::trainer::{check_task_gradients, eval_seed, train_grasp, GraspTask, QuadraticBandit, TrainConfig, TrainRun, Trainer, METRICS_LOG};
use fungrasp_core::{Pose, Vec3};
use rand::Rng;

/// Iterations of the desk training runs (the budget allows up to 500).
const DESK_ITERATIONS: usize = 200;
const DESK_SEED: u64 = 1;

struct Line {
    id: usize,
    name: &'static str,
    pass: bool,
    gated: bool,
    detail: String,
}

fn line(id: usize, name: &'static str, pass: bool, detail: String) -> Line {
    Line { id, name, pass, gated: true, detail }
}

fn scene() -> Scene {
    Scene::bundled("inspire_like").expect("bundled assets load")
}

fn c1_gradients(s: &Scene) -> Line {
    let t0 = Instant::now();
    let task = GraspTask::new(s, &TrainConfig::default()).unwrap();
    let r = check_task_gradients(&task, 4, 256, 7).unwrap();
    let dt = t0.elapsed();
    let pass = r.checked >= 200 && r.max_rel_error < 1e-4 && dt < Duration::from_secs(30);
    line(1, "gradient gate", pass, format!("max rel error {:.2e} over {} params in {dt:.1?}", r.max_rel_error, r.checked))
}

fn c2_replay(s: &Scene) -> Line {
    let demo = &s.demo;
    let mut rng = rng_for(2, Stream::Misc, 0, 0);
    let mut worst_q: f64 = 0.0;
    let mut worst_p: f64 = 0.0;
    for _ in 0..20 {
        let object_pose = Pose::new(
            Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0),
            [rng.random_range(-1.0..1.0), 0.0, 0.0, rng.random_range(-1.0..1.0)],
        );
        let id = EditAction::identity(s.spec.dof());
        let traj = edit_demo(demo, &id, demo.q_grasp(), &object_pose, &s.spec).unwrap();
        let f = interpolation_fraction(demo.q0(), demo.q_grasp(), &traj.q_star);
        let inv = object_pose.inverse();
        for (t, fr) in traj.frames.iter().enumerate() {
            let q = interpolate_joints_raw(demo, &f, t, &traj.q_star);
            for (a, b) in q.iter().zip(&demo.frames[t].q) {
                worst_q = worst_q.max((a - b).abs());
            }
            let local = inv.compose(&fr.ee_world);
            let (dt, dr) = local.distance(&demo.frames[t].p);
            worst_p = worst_p.max(dt).max(dr);
        }
    }
    let pass = worst_q < 1e-12 && worst_p < 1e-12;
    line(2, "replay identity", pass, format!("max joint error {worst_q:.1e}, max object-frame pose error {worst_p:.1e}"))
}

fn c3_endpoint(s: &Scene) -> Line {
    let demo = &s.demo;
    let b = ActionBounds::default();
    let mut rng = rng_for(3, Stream::Misc, 0, 0);
    let mut worst: f64 = 0.0;
    let mut moving = 0;
    for _ in 0..1000 {
        let style = &s.styles[rng.random_range(0..s.style_count())];
        let k = rng.random_range(b.k_min..b.k_max);
        let dq: Vec<f64> = (0..s.spec.dof()).map(|_| rng.random_range(-b.joint..b.joint)).collect();
        let q_star = target_joint_config(&style.q, k, &dq, &s.spec);
        let f = interpolation_fraction(demo.q0(), demo.q_grasp(), &q_star);
        let at = interpolate_joints_raw(demo, &f, demo.grasp_index, &q_star);
        for (j, fr) in f.iter().enumerate() {
            if matches!(fr, Fraction::Moving(_)) {
                moving += 1;
                worst = worst.max((at[j] - q_star[j]).abs());
            }
        }
    }
    line(3, "interpolation endpoint", moving > 0 && worst < 1e-12, format!("max |q(T_l) - q*| {worst:.1e} over {moving} moving-joint checks"))
}

fn c4_force_closure() -> Line {
    let t0 = Instant::now();
    let r = 0.035;
    let center = Vec3::new(0.0, 0.0, r);
    let c = |finger, point: Vec3, normal: Vec3| Contact { finger, point, normal, penetration: 0.0 };
    let check = |contacts: &[Contact], mu: f64| {
        let cfg = SimConfig { mu, ..Default::default() };
        grasp_success(&GraspCheck { contacts, mask: &[0, 1], com: center, obj_bb: 2.0 * r, table_collision: false }, &cfg)
    };
    let antipodal = [c(0, center + Vec3::new(r, 0.0, 0.0), Vec3::x()), c(1, center - Vec3::new(r, 0.0, 0.0), -Vec3::x())];
    let single = [c(0, center + Vec3::new(r, 0.0, 0.0), Vec3::x())];
    let parallel = [c(0, center + Vec3::new(r, 0.01, 0.0), Vec3::x()), c(1, center + Vec3::new(r, -0.01, 0.0), Vec3::x())];
    let a = check(&antipodal, 0.5) == Outcome::Success;
    let s = !check(&single, 0.5).is_success();
    let p = !check(&parallel, 0.1).is_success();
    let grid: Vec<bool> = (0..=40).map(|i| check(&antipodal, i as f64 * 0.025).is_success()).collect();
    let first = grid.iter().position(|&x| x);
    let monotone = first.is_some_and(|k| grid[k..].iter().all(|&x| x)) && !grid[0];
    let dt = t0.elapsed();
    let pass = a && s && p && monotone && dt < Duration::from_secs(10);
    line(
        4,
        "force-closure oracle",
        pass,
        format!(
            "antipodal {a}, single rejected {s}, parallel rejected {p}, monotone over 41 mu values {monotone} (closure from mu = {:.3}) in {dt:.1?}",
            first.map_or(f64::NAN, |k| k as f64 * 0.025)
        ),
    )
}

fn c5_bandit() -> Line {
    let t0 = Instant::now();
    let mut reached = Vec::new();
    for seed in 0..3 {
        let task = QuadraticBandit::new(&ActionBounds::default(), 6).unwrap();
        let mut t = Trainer::new(&task, TrainConfig { seed, ..Default::default() }, 1).unwrap();
        let mut hit = None;
        for _ in 0..200 {
            let l = t.step().unwrap();
            if l.mean_reward >= -0.05 {
                hit = Some((l.iteration, l.mean_reward));
                break;
            }
        }
        reached.push(hit);
    }
    let dt = t0.elapsed();
    let pass = reached.iter().all(Option::is_some) && dt < Duration::from_secs(120);
    let detail = reached
        .iter()
        .enumerate()
        .map(|(s, h)| match h {
            Some((it, r)) => format!("seed {s}: {r:.4} at iter {it}"),
            None => format!("seed {s}: not reached"),
        })
        .collect::<Vec<_>>()
        .join("; ");
    line(5, "PPO bandit", pass, format!("{detail}; {dt:.1?}"))
}

fn desk_config(seed: u64) -> TrainConfig {
    TrainConfig {
        iterations: DESK_ITERATIONS,
        eval_episodes: 500,
        seed,
        ..Default::default()
    }
}

fn eval_cfg(cfg: &TrainConfig) -> EvalConfig {
    let mut e = EvalConfig::new(cfg.eval_episodes, eval_seed(cfg.seed));
    e.sim = cfg.sim;
    e.reward = cfg.reward;
    e
}

fn c6_desk(s: &Scene, full: &TrainRun, cfg: &TrainConfig, dt: Duration) -> (Line, Metrics) {
    let objects: Vec<usize> = (0..s.objects.len()).collect();
    let base = random_baseline(s, &objects, &cfg.bounds, &eval_cfg(cfg)).unwrap().metrics;
    let gain = full.final_eval.gsr - base.gsr;
    let pass = gain >= 0.30 && cfg.iterations <= 500 && dt < Duration::from_secs(1800);
    (
        line(
            6,
            "desk training vs random baseline",
            pass,
            format!(
                "trained GSR {:.1}% vs baseline {:.1}% (+{:.1} points) after {} iterations in {dt:.1?}",
                100.0 * full.final_eval.gsr,
                100.0 * base.gsr,
                100.0 * gain,
                cfg.iterations
            ),
        ),
        base,
    )
}

fn c7_ablation(s: &Scene, full: &Metrics, cfg: &TrainConfig) -> Line {
    let no_afford = TrainConfig {
        reward: RewardConfig { afford_on: false, ..cfg.reward },
        ..cfg.clone()
    };
    let no_dist = TrainConfig { sigma_style: 0.0, ..cfg.clone() };
    let a = train_grasp(s, &no_afford, 1, None).unwrap().final_eval;
    let d = train_grasp(s, &no_dist, 1, None).unwrap().final_eval;
    let sad_ok = matches!((a.sad, full.sad), (Some(x), Some(y)) if x >= y);
    let sa_ok = d.sa == Some(1.0);
    let gsr_ok = d.gsr < full.gsr;
    let f = |v: Option<f64>| v.map_or("n/a".into(), |x| format!("{:.2}", 100.0 * x));
    Line {
        id: 7,
        name: "ablation direction (soft)",
        pass: sad_ok && sa_ok && gsr_ok,
        gated: false,
        detail: format!(
            "w/o afford SAD {} cm vs full {} cm ({}); w/o disturbance SA {}% ({}), GSR {:.1}% vs full {:.1}% ({})",
            f(a.sad),
            f(full.sad),
            if sad_ok { "ok" } else { "reversed" },
            f(d.sa),
            if sa_ok { "ok" } else { "below 100" },
            100.0 * d.gsr,
            100.0 * full.gsr,
            if gsr_ok { "ok" } else { "not lower" }
        ),
    }
}

/// Metrics recomputed from the exported JSONL alone, reading it as untyped JSON.
fn brute_force_metrics(path: &std::path::Path, strict: bool) -> (f64, Option<f64>, f64, Option<f64>, usize) {
    let text = fs::read_to_string(path).unwrap();
    let mut episodes: BTreeMap<u64, serde_json::Value> = BTreeMap::new();
    for l in text.lines().skip(1) {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        if v["episode_end"].as_bool().unwrap() {
            episodes.insert(v["episode"].as_u64().unwrap(), v);
        }
    }
    let mut d = Vec::new();
    let mut qs: Vec<Vec<f64>> = Vec::new();
    let mut matched = 0usize;
    for v in episodes.values() {
        let r = &v["result"];
        let ok = r["success"].as_bool().unwrap();
        let df = r["d_final"].as_f64().unwrap();
        let same_style = r["executed_style"].as_u64() == v["style"].as_u64();
        if ok && (!strict || (df < 0.04 && same_style)) {
            d.push(df);
            qs.push(r["q_final"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect());
            matched += same_style as usize;
        }
    }
    let n = episodes.len();
    let k = d.len();
    let mut pair_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..k {
        for j in 0..i {
            let mut s = 0.0;
            for (a, b) in qs[i].iter().zip(&qs[j]) {
                s += (a - b) * (a - b);
            }
            pair_sum += s.sqrt();
            pairs += 1;
        }
    }
    let gsr = k as f64 / n as f64;
    let sad = (k > 0).then(|| d.iter().sum::<f64>() / k as f64);
    let sd = if pairs > 0 { pair_sum / pairs as f64 } else { 0.0 };
    let sa = (k > 0).then(|| matched as f64 / k as f64);
    (gsr, sad, sd, sa, n)
}

fn c8_oracle(s: &Scene, run: &TrainRun, cfg: &TrainConfig) -> Line {
    let task = GraspTask::new(s, cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cams = io::default_cameras().unwrap();
    let mut worst: f64 = 0.0;
    let mut ok = true;
    let mut detail = Vec::new();
    for (strict, stochastic) in [(false, false), (true, false), (false, true)] {
        let mut ec = eval_cfg(cfg);
        ec.episodes = 300;
        ec.strict = strict;
        ec.stochastic = stochastic;
        let actor = Actor::Policy {
            params: &run.params,
            bank: &task.bank,
            squash: fungrasp_core::trainer::OneStepTask::squash(&task),
            stochastic,
        };
        let e = evaluate(s, &task.objects, &actor, &ec).unwrap();
        let path = dir.path().join(format!("ep_{strict}_{stochastic}.jsonl"));
        io::export_rollouts(s, &e.records, &cams, &path, false, "").unwrap();
        let (gsr, sad, sd, sa, n) = brute_force_metrics(&path, strict);
        let m = &e.metrics;
        let diff = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => (x - y).abs(),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        };
        let errs = [(gsr - m.gsr).abs(), diff(sad, m.sad), (sd - m.sd).abs(), diff(sa, m.sa)];
        worst = errs.iter().fold(worst, |w, e| w.max(*e));
        ok &= n == m.n_episodes;
        detail.push(format!("{} successes{}", m.n_success, if strict { " strict" } else if stochastic { " sampled" } else { "" }));
    }
    line(8, "metric oracle equivalence", ok && worst <= 1e-9, format!("max |diff| {worst:.1e} ({})", detail.join(", ")))
}

fn c9_reward() -> Line {
    let mut rng = rng_for(9, Stream::Misc, 0, 0);
    let s = scene();
    let mut radius_ok = true;
    for o in &s.objects {
        for gamma in [1.0, 3.0, 4.0, 7.5] {
            let cfg = RewardConfig { gamma, ..Default::default() };
            radius_ok &= cfg.afford_radius(o.model.obj_bb) == o.model.obj_bb / gamma;
            // the indicator switches exactly at the radius
            let r = o.model.obj_bb / gamma;
            let inside = total_reward(
                &RewardInputs { success: true, d_final: r * (1.0 - 1e-12), d_min: 1.0, obj_bb: o.model.obj_bb, q_style: &[0.0], q_star: &[0.0] },
                &cfg,
            );
            let at = total_reward(&RewardInputs { d_final: r, ..RewardInputs { success: true, d_final: 0.0, d_min: 1.0, obj_bb: o.model.obj_bb, q_style: &[0.0], q_star: &[0.0] } }, &cfg);
            radius_ok &= inside.r_afford > 0.0 && at.r_afford == 0.0;
        }
    }
    let mut sum_ok = 0;
    for _ in 0..10_000 {
        let cfg = RewardConfig {
            lambda_afford: rng.random_range(0.0..5.0),
            lambda_close: rng.random_range(0.0..5.0),
            lambda_qpos: rng.random_range(0.0..5.0),
            success_reward: rng.random_range(0.0..3.0),
            ..Default::default()
        };
        let (a, c, q) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let succ = if rng.random_bool(0.5) { cfg.success_reward } else { 0.0 };
        let t = combine(a, c, q, succ, &cfg);
        let expect = cfg.lambda_afford * a + cfg.lambda_close * c + cfg.lambda_qpos * q + succ;
        sum_ok += (t.total == expect) as usize;
    }
    line(9, "reward algebra", radius_ok && sum_ok == 10_000, format!("radius = obj_bb/gamma exact: {radius_ok}; weighted sum exact in {sum_ok}/10000"))
}

fn c10_projection() -> Line {
    let mut rng = rng_for(10, Stream::Misc, 0, 0);
    let mut worst: f64 = 0.0;
    let cams = io::default_cameras().unwrap();
    for _ in 0..10_000 {
        let cam = &cams[rng.random_range(0..cams.len())];
        let w = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(0.0..0.4));
        let p = cam.project(&w);
        let (u, v) = p.pixel.unwrap();
        worst = worst.max((cam.unproject(u, v, p.depth) - w).norm());
    }
    let cam = CameraModel {
        extrinsic: Pose::identity(),
        ..cams[0].clone()
    };
    let pp = cam.project(&Vec3::new(0.0, 0.0, 1.0));
    let exact = pp.pixel == Some((cam.cx, cam.cy)) && pp.depth == 1.0;
    line(10, "projection round trip", worst < 1e-9 && exact, format!("max round-trip error {worst:.1e} m over 10000 points; principal point exact: {exact}"))
}

fn c11_determinism(s: &Scene) -> Line {
    let cfg = TrainConfig {
        envs_per_iter: 128,
        minibatch: 64,
        iterations: 5,
        eval_every: 5,
        eval_episodes: 100,
        seed: 11,
        ..Default::default()
    };
    let logs: Vec<Vec<u8>> = [1, 8]
        .iter()
        .map(|&w| {
            let dir = tempfile::tempdir().unwrap();
            train_grasp(s, &cfg, w, Some(dir.path())).unwrap();
            fs::read(dir.path().join(METRICS_LOG)).unwrap()
        })
        .collect();
    let same = logs[0] == logs[1];
    line(11, "determinism across worker counts", same && !logs[0].is_empty(), format!("metrics logs with 1 and 8 workers identical: {same} ({} bytes)", logs[0].len()))
}

fn main() -> ExitCode {
    let s = scene();
    let mut lines = vec![c1_gradients(&s), c2_replay(&s), c3_endpoint(&s), c4_force_closure(), c5_bandit()];

    let cfg = desk_config(DESK_SEED);
    let t0 = Instant::now();
    let full = train_grasp(&s, &cfg, 1, None).unwrap();
    let dt = t0.elapsed();
    let (l6, _) = c6_desk(&s, &full, &cfg, dt);
    lines.push(l6);
    lines.push(c7_ablation(&s, &full.final_eval, &cfg));
    lines.push(c8_oracle(&s, &full, &cfg));
    lines.push(c9_reward());
    lines.push(c10_projection());
    lines.push(c11_determinism(&s));

    println!();
    let mut failed = false;
    for l in &lines {
        let tag = match (l.pass, l.gated) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "MISS",
        };
        println!("criterion {:>2} [{tag}] {}: {}", l.id, l.name, l.detail);
        failed |= l.gated && !l.pass;
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
