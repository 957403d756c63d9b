//! Acceptance criteria 1–11, one PASS/FAIL line each.
//!
//! Pass criterion numbers as arguments to run a subset:
//! `cargo test --test acceptance -- 1 4 10`.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sami_core::encoder::{encode_batch_on_tape, ContextEmbedding, EncoderParams, MomentumEncoder, SimilarityConfig};
use sami_core::envs::{Physics, Skill, SplitName, TaskFeatures};
use sami_core::estimators::{
    contrastive_on_tape, infonce, sa_plus_infonce, sance, soft_sance_on_tape, DistanceMode, EstimatorBatch, Provenance,
    SampleSpaceSpec, SoftSanceConfig,
};
use sami_core::numerics::{check_gradients, Mlp, ParamSet, Tape, Tensor, Var};
use sami_core::replay::{CrossTaskPool, RankedBuffer, ReplayConfig, TaskId, Trajectory, Transition};
use sami_core::rl::{actor_loss_on_tape, critic_loss_on_tape, SacConfig};
use sami_harness::config::Splits;
use sami_harness::io::write_json;
use sami_harness::report;
use sami_harness::stats::paired_t_test;
use sami_harness::suites;
use sami_harness::train::{meta_train, meta_train_with, RunResult, TrainOptions};
use sami_harness::{ExperimentConfig, Variant};

/// Criteria whose target is known to be out of reach; see the project notes.
const EXPECTED_FAIL: &[u32] = &[2];

type Check = Result<(bool, String), Box<dyn std::error::Error>>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

const CRITERIA: &[Criterion] = &[
    Criterion {
        id: 1,
        name: "log-K bound on InfoNCE and SaNCE",
        budget: Duration::from_secs(10),
        run: c1_bounds,
    },
    Criterion {
        id: 2,
        name: "optimal-critic tightness",
        budget: Duration::from_secs(60),
        run: c2_tightness,
    },
    Criterion {
        id: 3,
        name: "SaMI sandwich",
        budget: Duration::from_secs(30),
        run: c3_sandwich,
    },
    Criterion {
        id: 4,
        name: "gradient correctness",
        budget: Duration::from_secs(120),
        run: c4_gradients,
    },
    Criterion {
        id: 5,
        name: "momentum convergence",
        budget: Duration::from_secs(1),
        run: c5_momentum,
    },
    Criterion {
        id: 6,
        name: "sampling contracts",
        budget: Duration::from_secs(10),
        run: c6_sampling,
    },
    Criterion {
        id: 7,
        name: "K* accounting",
        budget: Duration::from_secs(1),
        run: c7_k_star,
    },
    Criterion {
        id: 8,
        name: "skill-structure oracle",
        budget: Duration::from_secs(30),
        run: c8_skills,
    },
    Criterion {
        id: 9,
        name: "end-to-end directional claim",
        budget: Duration::from_secs(4 * 3600),
        run: c9_end_to_end,
    },
    Criterion {
        id: 10,
        name: "variant reductions",
        budget: Duration::from_secs(300),
        run: c10_reductions,
    },
    Criterion {
        id: 11,
        name: "paired t-test oracle",
        budget: Duration::from_secs(1),
        run: c11_t_test,
    },
];

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> ContextEmbedding {
    ContextEmbedding::new((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

fn c1_bounds() -> Check {
    let rows = suites::bounds(&[2, 4, 8, 64], &[0.1, 1.0], 1000, 6, 1)?;
    let worst = rows
        .iter()
        .map(|r| r.max_infonce.max(r.max_sance) - r.log_k)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((
        rows.iter().all(|r| r.holds),
        format!("max(estimate − log K) = {worst:.3e} over {} settings", rows.len()),
    ))
}

fn c2_tightness() -> Check {
    let row = suites::tightness(64, &[128], 100_000, 2)?.remove(0);
    let gap = (row.estimate.mean - row.reference).abs();
    Ok((
        gap <= 0.05,
        format!(
            "estimate {:.4} ± {:.4}, target {:.4}, |gap| {:.4} (tol 0.05); exact expectation {:.4}",
            row.estimate.mean, row.estimate.std_err, row.reference, gap, row.exact_expectation
        ),
    ))
}

fn c3_sandwich() -> Check {
    let s = suites::sandwich(1000, 4, 3)?;
    Ok((
        s.violations == 0,
        format!(
            "{} joints, {} violations, min SaMI {:.2e}, max SaMI − I(c;τ) {:.2e}",
            s.joints, s.violations, s.min_sami, s.max_excess
        ),
    ))
}

fn rand_tensor(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

fn c4_gradients() -> Check {
    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-8;
    let mut worst = [0.0f64; 6];
    let names = [
        "infonce",
        "sance",
        "soft_sance_loss",
        "critic_loss",
        "actor_loss",
        "encoder(5 steps)",
    ];
    let sac = SacConfig {
        hidden: vec![8, 8],
        ..SacConfig::default()
    };
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut record =
            |i: usize, leaves: &[Tensor], f: &dyn for<'a> Fn(&mut Tape<'a>, &[Var]) -> sami_core::Result<Var>| {
                let r = check_gradients(leaves, f, H, FLOOR)?;
                worst[i] = worst[i].max(r.max_relative_error);
                Ok::<(), sami_core::Error>(())
            };

        let q = rand_tensor(&[1, 6], 1.0, &mut rng);
        let keys = rand_tensor(&[8, 6], 1.0, &mut rng);
        let unit = SimilarityConfig {
            beta: 1.0,
            normalize: false,
        };
        record(0, &[q.clone(), keys.clone()], &|t, v| {
            contrastive_on_tape(t, v[0], v[1], &unit)
        })?;
        let default_sim = SimilarityConfig::default();
        record(1, &[q, keys], &|t, v| contrastive_on_tape(t, v[0], v[1], &default_sim))?;

        let pos = rand_tensor(&[2, 6], 1.0, &mut rng);
        let neg = rand_tensor(&[4, 6], 1.0, &mut rng).map(|x| x + 1.5);
        let soft = SoftSanceConfig {
            similarity: unit,
            distance: if seed % 2 == 0 {
                DistanceMode::MeanEmbedding
            } else {
                DistanceMode::MeanPairwise
            },
            detach_multiplier: false,
        };
        record(2, &[pos, neg], &|t, v| {
            let q = t.pick_rows(&[(v[0], 0)])?;
            let keys = t.pick_rows(&[(v[0], 1), (v[1], 0), (v[1], 1), (v[1], 2), (v[1], 3)])?;
            let value = contrastive_on_tape(t, q, keys, &soft.similarity)?;
            soft_sance_on_tape(t, v[0], v[1], value, &soft)
        })?;

        let actor = Mlp::new(5, &sac.hidden, 4, &mut rng);
        let critic1 = Mlp::new(7, &sac.hidden, 1, &mut rng);
        let critic2 = Mlp::new(7, &sac.hidden, 1, &mut rng);
        let states = rand_tensor(&[6, 3], 1.0, &mut rng);
        let actions = rand_tensor(&[6, 2], 0.9, &mut rng);
        let emb = rand_tensor(&[6, 2], 1.0, &mut rng);
        let target = rand_tensor(&[6, 1], 1.0, &mut rng);
        let eps = rand_tensor(&[6, 2], 1.0, &mut rng);
        let mut leaves: Vec<Tensor> = critic1.params().into_iter().cloned().collect();
        leaves.extend(critic2.params().into_iter().cloned());
        leaves.push(emb.clone());
        record(3, &leaves, &|t, v| {
            let s = t.constant(states.clone());
            let a = t.constant(actions.clone());
            let y = t.constant(target.clone());
            critic_loss_on_tape(t, &v[0..6], &v[6..12], s, a, v[12], y)
        })?;
        let leaves: Vec<Tensor> = actor.params().into_iter().cloned().collect();
        record(4, &leaves, &|t, v| {
            let c1: Vec<Var> = critic1.params().into_iter().map(|p| t.constant(p.clone())).collect();
            let c2: Vec<Var> = critic2.params().into_iter().map(|p| t.constant(p.clone())).collect();
            let s = t.constant(states.clone());
            let e = t.constant(emb.clone());
            let n = t.constant(eps.clone());
            Ok(actor_loss_on_tape(t, v, &c1, &c2, s, e, n, 0.2, &sac)?.0)
        })?;

        let params = EncoderParams::new(3, 4, 2, &mut rng);
        let seqs: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|_| {
                (0..5)
                    .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();
        let refs: Vec<&[Vec<f64>]> = seqs.iter().map(|s| s.as_slice()).collect();
        let leaves: Vec<Tensor> = params.params().into_iter().cloned().collect();
        record(5, &leaves, &|t, v| {
            let e = encode_batch_on_tape(t, &params, v, &refs, &[(0, 4), (1, 2), (2, 4)])?;
            let s = t.square(e);
            Ok(t.sum(s))
        })?;
    }
    let detail = names
        .iter()
        .zip(worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((
        worst.iter().all(|&w| w < 1e-4),
        format!("max relative error over 100 seeds: {detail}"),
    ))
}

fn c5_momentum() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let live = EncoderParams::new(14, 16, 6, &mut rng);
    let start = EncoderParams::new(14, 16, 6, &mut rng);
    let dist = |a: &EncoderParams| -> f64 {
        a.params()
            .iter()
            .zip(live.params())
            .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(u, v)| (u - v).powi(2)))
            .sum::<f64>()
            .sqrt()
    };
    let d0 = dist(&start);
    let mut target = MomentumEncoder::new(&start, 0.05);
    let mut ok = true;
    let mut detail = Vec::new();
    for n in 1..=100 {
        target.momentum_update(&live)?;
        let bound = 0.95f64.powi(n) * d0 + 1e-12;
        let d = dist(&target.params);
        if [1, 10, 100].contains(&n) {
            ok &= d <= bound;
            detail.push(format!("n={n}: {d:.6e} ≤ {bound:.6e}"));
        }
    }
    Ok((ok, detail.join(", ")))
}

fn c6_sampling() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut buffer = RankedBuffer::new(ReplayConfig::default())?;
    for i in 0..200u32 {
        let task = TaskId(i % 5);
        let len = rng.random_range(1..6);
        let steps = (0..len)
            .map(|_| {
                let r = (rng.random_range(-10.0f64..0.0) * 4.0).round() / 4.0;
                Transition {
                    state: vec![r],
                    action: vec![0.0],
                    reward: r,
                    next_state: vec![r],
                    done: false,
                }
            })
            .collect();
        buffer.push(Trajectory::new(task, TaskFeatures::new(1.0, 1.0), steps)?)?;
    }
    let k = 12;
    let (mut ordered, mut intra, mut cross_ok, mut checked) = (true, true, true, 0usize);
    for draw in 0..10_000 {
        let task = TaskId(draw % 5);
        let s = buffer.sample_skill_aware(task, k, &mut rng)?;
        intra &= s.query.task_id == task && s.positive.task_id == task && s.negatives.iter().all(|t| t.task_id == task);
        let mut returns: Vec<f64> = buffer.ranked(task).iter().map(|t| t.episode_return).collect();
        returns.dedup();
        if returns.len() >= k {
            checked += 1;
            ordered &= s
                .negatives
                .iter()
                .all(|t| t.episode_return <= s.positive.episode_return);
        }
        let pool = if draw % 2 == 0 {
            CrossTaskPool::Whole
        } else {
            CrossTaskPool::LowReturn
        };
        cross_ok &= buffer
            .sample_cross_task(task, k - 1, pool, &mut rng)?
            .iter()
            .all(|t| t.task_id != task);
    }
    Ok((
        ordered && intra && cross_ok && checked > 0,
        format!("10000 draws ({checked} with ≥ K distinct returns): ordered {ordered}, intra-task {intra}, cross-task excludes current {cross_ok}"),
    ))
}

fn c7_k_star() -> Check {
    let spec = SampleSpaceSpec::new(3, 2, 5)?;
    let buffer = suites::synthetic_skill_buffer(&spec)?;
    let c = suites::sample_space_counts(&buffer, spec);
    let ok = c.sance.iter().all(|&n| n == 10 && n == c.expected_sance)
        && c.infonce == 30
        && c.infonce == c.expected_infonce
        && c.sa_plus_infonce.iter().all(|&n| n == c.expected_sa_plus_infonce);
    Ok((
        ok,
        format!(
            "SaNCE {:?} (K* {}), InfoNCE {} (K* {}), Sa+InfoNCE {:?} (K* {})",
            c.sance, c.expected_sance, c.infonce, c.expected_infonce, c.sa_plus_infonce, c.expected_sa_plus_infonce
        ),
    ))
}

fn c8_skills() -> Check {
    let cells = suites::skill_structure(&Splits::default(), &Physics::default(), 10, 8)?;
    let lift_only: Vec<_> = cells.iter().filter(|c| c.liftable && !c.pushable).collect();
    let push_only: Vec<_> = cells.iter().filter(|c| c.pushable && !c.liftable).collect();
    let bad: Vec<String> = cells
        .iter()
        .filter(|c| !c.consistent())
        .map(|c| format!("({}, {})", c.mass, c.friction))
        .collect();
    Ok((
        bad.is_empty() && !lift_only.is_empty() && !push_only.is_empty(),
        format!(
            "{} cells: {} lift-only, {} push-only; inconsistent {:?}",
            cells.len(),
            lift_only.len(),
            push_only.len(),
            bad
        ),
    ))
}

fn end_to_end_config(variant: Variant) -> ExperimentConfig {
    let text = include_str!("../../../configs/block_relocate_200k.json");
    let mut cfg: ExperimentConfig = serde_json::from_str(text).expect("bundled config parses");
    cfg.variant = variant;
    cfg
}

fn output_dir(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::create_dir_all(&dir).expect("create output dir");
    dir
}

fn c9_end_to_end() -> Check {
    let dir = output_dir("end_to_end");
    let jobs: Vec<(ExperimentConfig, u64)> = [Variant::Tesac, Variant::Satesac]
        .into_iter()
        .flat_map(|v| {
            let cfg = end_to_end_config(v);
            cfg.seeds.clone().into_iter().map(move |s| (cfg.clone(), s))
        })
        .collect();
    // Runs share nothing; spread them over the available cores.
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len());
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<sami_harness::Result<RunResult>>>> =
        jobs.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some((cfg, seed)) = jobs.get(i) else { break };
                let started = Instant::now();
                let r = meta_train(cfg, *seed).map(|o| o.result);
                if let Ok(r) = &r {
                    let ext = r.split(SplitName::Extreme).expect("extreme evaluated");
                    eprintln!(
                        "  [9] {} seed {seed}: extreme success {:.3}, push {:.2}, lift {:.2} ({:.0} s)",
                        cfg.variant,
                        ext.success_rate,
                        ext.skills.fraction(Skill::Push),
                        ext.skills.fraction(Skill::Lift),
                        started.elapsed().as_secs_f64()
                    );
                }
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    let mut results = Vec::new();
    for slot in slots {
        let r = slot.into_inner().expect("slot lock").expect("every job ran")?;
        write_json(&dir.join(format!("{}-seed{}.json", r.variant, r.seed)), &r)?;
        results.push(r);
    }
    let rep = report::build(&results)?;
    let cmp = rep
        .comparisons
        .iter()
        .find(|c| c.split == SplitName::Extreme && c.variant == Variant::Satesac && c.baseline == Variant::Tesac)
        .expect("both variants ran");
    let row = |v: Variant| {
        rep.rows
            .iter()
            .find(|r| r.split == SplitName::Extreme && r.variant == v)
            .expect("row present")
    };
    let (sa, te) = (row(Variant::Satesac), row(Variant::Tesac));
    let diverse = results
        .iter()
        .filter(|r| r.variant == Variant::Satesac)
        .filter(|r| {
            let s = &r.split(SplitName::Extreme).expect("extreme evaluated").skills;
            s.fraction(Skill::Push) >= 0.10 && s.fraction(Skill::Lift) >= 0.10
        })
        .count();
    let p = cmp.test.map(|t| t.p).unwrap_or(f64::NAN);
    Ok((
        sa.success_mean >= te.success_mean && diverse >= 4,
        format!(
            "extreme success satesac {:.3} ± {:.3} vs tesac {:.3} ± {:.3} (paired p = {p:.4}); push and lift ≥ 10% in {diverse}/5 satesac seeds; results in {}",
            sa.success_mean,
            sa.success_std,
            te.success_mean,
            te.success_std,
            dir.display()
        ),
    ))
}

fn c10_reductions() -> Check {
    let mut sa = end_to_end_config(Variant::Satesac);
    sa.contrastive.alpha = 0.0;
    sa.training.total_timesteps = 5_000;
    sa.training.probe_every = 2_500;
    sa.training.eval_episodes_per_task = 5;
    let mut te = sa.clone();
    te.variant = Variant::Tesac;
    let options = TrainOptions::default();
    let a = meta_train_with(&sa, 0, options, &mut |_| {})?;
    let b = meta_train_with(&te, 0, options, &mut |_| {})?;
    let bits = |x: &sami_harness::train::TrainOutput| {
        serde_json::to_string(&(
            &x.checkpoint.encoder,
            &x.checkpoint.momentum,
            &x.checkpoint.sac,
            &x.result.buffer_fill,
            &x.result.probes,
            &x.result.evaluation,
            &x.result.diagnostics,
            &x.metrics,
        ))
    };
    let identical = bits(&a)? == bits(&b)? && a.result.gradient_steps > 0;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let sim = SimilarityConfig::default();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.random_range(2..32);
        let batch = EstimatorBatch::new(
            gaussian(&mut rng, 6),
            gaussian(&mut rng, 6),
            (1..k).map(|_| gaussian(&mut rng, 6)).collect(),
        )
        .with_provenance(vec![
            Provenance {
                task: TaskId(0),
                skill: None
            };
            k + 1
        ]);
        let s = sance(&batch, &sim)?;
        worst = worst.max((sa_plus_infonce(&batch, &[], &sim)? - s).abs());
        worst = worst.max((infonce(&batch, &sim)? - s).abs());
    }
    Ok((
        identical && worst <= 1e-12,
        format!(
            "satesac(α=0) vs tesac over 5k steps ({} gradient steps): bitwise identical {identical}; max |sa+infonce(∅) − sance| {worst:.1e}",
            a.result.gradient_steps
        ),
    ))
}

fn c11_t_test() -> Check {
    let r = paired_t_test(&[30.0, 31.0, 34.0, 38.0, 40.0], &[28.0, 30.0, 35.0, 36.0, 37.0])?;
    // Differences [2, 1, −1, 2, 3]; the p reference integrates the df = 4 density.
    let t_ref = 1.4 / (2.3f64.sqrt() / 5f64.sqrt());
    let p_ref = 2.0 * simpson_sf_df4(t_ref);
    let zero = paired_t_test(&[0.2, 0.4, 0.9], &[0.2, 0.4, 0.9])?;
    Ok((
        (r.t - t_ref).abs() <= 1e-6 && (r.p - p_ref).abs() <= 1e-6 && zero.p == 1.0,
        format!(
            "t {:.9} (ref {t_ref:.9}), p {:.9} (ref {p_ref:.9}), zero-difference p {}",
            r.t, r.p, zero.p
        ),
    ))
}

fn simpson_sf_df4(t: f64) -> f64 {
    let f = |x: f64| 0.375 * (1.0 + x * x / 4.0).powf(-2.5);
    let n = 200_000;
    let h = t / n as f64;
    let mut s = f(0.0) + f(t);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    0.5 - s * h / 3.0
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = Vec::new();
    for c in CRITERIA {
        if !selected.is_empty() && !selected.contains(&c.id) {
            continue;
        }
        let started = Instant::now();
        let outcome = (c.run)();
        let elapsed = started.elapsed();
        let (passed, detail) = match outcome {
            Ok((ok, detail)) => (ok && elapsed <= c.budget, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let within = if elapsed <= c.budget { "" } else { ", over budget" };
        let expected_fail = EXPECTED_FAIL.contains(&c.id);
        let verdict = match (passed, expected_fail) {
            (true, false) => "PASS",
            (false, true) => "FAIL (expected, see notes)",
            (true, true) => "XPASS",
            (false, false) => "FAIL",
        };
        if passed == expected_fail {
            unexpected.push(c.id);
        }
        println!(
            "criterion {:>2} {:<32} {verdict}  [{:.2} s of {} s{within}]  {detail}",
            c.id,
            c.name,
            elapsed.as_secs_f64(),
            c.budget.as_secs()
        );
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
