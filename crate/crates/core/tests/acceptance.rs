//! Acceptance suite. Runs every criterion in order and prints one PASS/FAIL
//! line each; exits nonzero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use mtlsp::amr::{self, linearize, parse_penman, restore};
use mtlsp::corpus::{self, align_tasks, load_dataset, TaskSpec};
use mtlsp::eval::{smatch, smatch_exhaustive, DEFAULT_RESTARTS};
use mtlsp::model::{ArchMode, ModelConfig, ParamPlan, Parser, Preset};
use mtlsp::numkernel::{KernelError, ParamStore, Tape, Tensor, Var};
use mtlsp::sampler::{AnnealSchedule, SamplerState, Strategy};
use mtlsp::toy::{self, toy_task, Grammar, ToyGrammarSpec};
use mtlsp::trainer::{score_split, train, train_seed, EarlyStopping, StopDecision, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{fd_check, random_reentrant, random_small, random_tensor, random_tree, rel_error, FD_STEP, FD_TOLERANCE};

type Outcome = Result<String, String>;

const DATASET_SIZES: [usize; 5] = [540, 16172, 28414, 18781, 36521];

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn state(strategy: Strategy, sizes: &[usize]) -> SamplerState {
    let s = SamplerState::new(strategy, sizes.to_vec()).unwrap();
    if strategy == Strategy::Loss {
        s.with_dev_losses(vec![2.0, 1.0, 0.5, 1.5, 3.0]).unwrap()
    } else {
        s
    }
}

fn sampling_analytics() -> Outcome {
    for st in Strategy::ALL {
        let p = state(st, &DATASET_SIZES).probabilities().unwrap();
        let total: f64 = p.iter().sum();
        ensure((total - 1.0).abs() <= 1e-12, format!("{st}: sum {total}"))?;
        ensure(p.iter().all(|&x| x > 0.0), format!("{st}: nonpositive entry"))?;
    }
    let prop = state(Strategy::Proportional, &DATASET_SIZES).probabilities().unwrap();
    ensure(
        (prop[0] - 540.0 / 100428.0).abs() < 1e-15,
        format!("proportional p(Geoquery) = {}", prop[0]),
    )?;
    let inv = state(Strategy::Inverse, &DATASET_SIZES).probabilities().unwrap();
    let argmax = inv.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    ensure(argmax == 0, format!("inverse argmax is task {argmax}"))?;
    Ok(format!(
        "8 strategies sum to 1; p(Geoquery) = {:.6}; inverse favors Geoquery",
        prop[0]
    ))
}

fn sampling_empirics() -> Outcome {
    let draws = 100_000;
    let mut worst: f64 = 0.0;
    for (k, st) in Strategy::ALL.into_iter().enumerate() {
        let s = state(st, &DATASET_SIZES);
        let p = s.probabilities().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + k as u64);
        let mut counts = [0usize; 5];
        for _ in 0..draws {
            counts[s.draw_task(&mut rng).unwrap()] += 1;
        }
        for t in 0..5 {
            let dev = (counts[t] as f64 / draws as f64 - p[t]).abs();
            worst = worst.max(dev);
            ensure(dev <= 0.01, format!("{st} task {t}: deviation {dev:.4}"))?;
        }
    }
    Ok(format!("100000 draws per strategy; worst deviation {worst:.4}"))
}

fn annealed_bridge() -> Outcome {
    let prop = state(Strategy::Proportional, &DATASET_SIZES).probabilities().unwrap();
    let at_one = SamplerState::new(Strategy::Annealed, DATASET_SIZES.to_vec())
        .unwrap()
        .with_alpha(1.0)
        .unwrap()
        .probabilities()
        .unwrap();
    ensure(at_one == prop, "alpha = 1 differs from proportional")?;
    let tiny = SamplerState::new(Strategy::Annealed, DATASET_SIZES.to_vec())
        .unwrap()
        .with_alpha(0.001)
        .unwrap()
        .probabilities()
        .unwrap();
    let gap = tiny.iter().map(|p| (p - 0.2).abs()).fold(0.0, f64::max);
    ensure(gap <= 0.01, format!("alpha = 0.001 is {gap:.4} from uniform"))?;
    let sched = AnnealSchedule::default();
    ensure(sched.alpha_at(1) == 1.0, "schedule starts below 1")?;
    Ok(format!(
        "alpha=1 equals proportional; alpha=0.001 within {gap:.5} of uniform"
    ))
}

type Op = fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var, KernelError>;
type Case = (&'static str, Vec<Tensor<f64>>, Option<u64>, Op);
type Criterion = (&'static str, fn() -> Outcome);

/// Reduces `y` to a scalar through fixed weights, so every output element
/// contributes a distinct gradient.
fn weighted_sum(t: &mut Tape<'_, f64>, y: Var, w: &Tensor<f64>) -> Result<Var, KernelError> {
    if t.value(y).numel() == 1 {
        return Ok(y);
    }
    let shape = t.value(y).shape().to_vec();
    let wv = t.constant(Tensor::from_fn(&shape, |k| w.data()[k % w.numel()]))?;
    let p = t.mul(y, wv)?;
    t.sum(p)
}

fn gradient_audit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut r = |s: &[usize]| random_tensor(&mut rng, s);
    let (a, b, c, bt) = (r(&[3, 4]), r(&[4, 5]), r(&[3, 4]), r(&[5, 4]));
    let (row, gain, bias) = (r(&[4]), r(&[4]), r(&[4]));
    let (sq, wide, table) = (r(&[3, 3]), r(&[3, 5]), r(&[6, 4]));
    let weights = r(&[3, 5]);
    let cases: Vec<Case> = vec![
        ("matmul", vec![a.clone(), b], None, |t, v| t.matmul(v[0], v[1])),
        ("matmul_nt", vec![a.clone(), bt], None, |t, v| t.matmul_nt(v[0], v[1])),
        ("add", vec![a.clone(), c.clone()], None, |t, v| t.add(v[0], v[1])),
        ("add_row", vec![a.clone(), row], None, |t, v| t.add_row(v[0], v[1])),
        ("mul", vec![a.clone(), c.clone()], None, |t, v| t.mul(v[0], v[1])),
        ("scale", vec![a.clone()], None, |t, v| t.scale(v[0], -1.7)),
        ("relu", vec![a.clone()], None, |t, v| t.relu(v[0])),
        ("layer_norm", vec![a.clone(), gain, bias], None, |t, v| {
            t.layer_norm(v[0], v[1], v[2])
        }),
        ("softmax", vec![wide.clone()], None, |t, v| t.softmax(v[0])),
        ("causal_softmax", vec![sq], None, |t, v| t.causal_softmax(v[0])),
        ("cross_entropy", vec![wide.clone()], None, |t, v| {
            t.cross_entropy(v[0], &[4, 0, 2])
        }),
        ("embedding", vec![table], None, |t, v| t.embedding(v[0], &[5, 1, 5])),
        // a seeded training tape replays the same mask on every evaluation
        ("dropout", vec![wide.clone()], Some(11), |t, v| t.dropout(v[0], 0.3)),
        ("concat_cols", vec![a.clone(), wide.clone()], None, |t, v| {
            t.concat_cols(&[v[0], v[1]])
        }),
        ("concat_rows", vec![a.clone(), c], None, |t, v| {
            t.concat_rows(&[v[0], v[1]])
        }),
        ("slice_cols", vec![wide.clone()], None, |t, v| t.slice_cols(v[0], 1, 4)),
        ("slice_rows", vec![wide], None, |t, v| t.slice_rows(v[0], 1, 3)),
        ("sum", vec![a.clone()], None, |t, v| t.sum(v[0])),
        ("mean", vec![a], None, |t, v| t.mean(v[0])),
    ];
    let mut worst: f64 = 0.0;
    for (name, inputs, seed, op) in &cases {
        let err = fd_check(inputs, *seed, |t, v| {
            let y = op(t, v)?;
            weighted_sum(t, y, &weights)
        });
        ensure(err < FD_TOLERANCE, format!("{name}: relative error {err:.2e}"))?;
        worst = worst.max(err);
    }

    // End to end through a 2-layer, 32-unit one-to-one model with dropout.
    let mut tasks = vec![
        toy_task(&spec(Grammar::BracketedQuery, 20, 5), "geo").unwrap(),
        toy_task(&spec(Grammar::Reverse, 20, 6), "rev").unwrap(),
    ];
    let config = ModelConfig {
        mode: ArchMode::OneToOne,
        layers: 2,
        units: 32,
        heads: 4,
        dropout: 0.1,
        max_len: 16,
        beam: 1,
    };
    let mut model: Parser<f64> = Parser::for_tasks(config, &tasks, 7).map_err(|e| e.to_string())?;
    align_tasks(&mut tasks, model.vocabs());
    let ex = tasks[0].train[0].clone();
    let loss = |m: &Parser<f64>| {
        let mut tape = Tape::training(m.params(), 99);
        let l = m.loss_on(&mut tape, &ex.source_tokens, 0, &ex.gold_actions).unwrap();
        tape.value(l).item()
    };
    let analytic = {
        let mut tape = Tape::training(model.params(), 99);
        let l = model
            .loss_on(&mut tape, &ex.source_tokens, 0, &ex.gold_actions)
            .unwrap();
        tape.backward(l).unwrap().dense(model.params())
    };
    let ids: Vec<_> = model.param_specs().map(|(id, s)| (id, s.name.clone())).collect();
    let mut checked = 0;
    let mut e2e: f64 = 0.0;
    let mut pick = ChaCha8Rng::seed_from_u64(5);
    for (k, (id, name)) in ids.iter().enumerate() {
        let n = model.params().get(*id).numel();
        let mut entries: Vec<usize> = (0..3).map(|_| pick.gen_range(0..n)).collect();
        // embedding rows that the example touches carry the signal
        if let Some(i) = analytic[k].data().iter().position(|g| g.abs() > 1e-8) {
            entries.push(i);
        }
        for i in entries {
            let orig = model.params().get(*id).data()[i];
            model.params_mut().get_mut(*id).data_mut()[i] = orig + FD_STEP;
            let up = loss(&model);
            model.params_mut().get_mut(*id).data_mut()[i] = orig - FD_STEP;
            let down = loss(&model);
            model.params_mut().get_mut(*id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = rel_error(analytic[k].data()[i], numeric);
            ensure(
                err < FD_TOLERANCE,
                format!("sequence_loss wrt {name}[{i}]: relative error {err:.2e}"),
            )?;
            e2e = e2e.max(err);
            checked += 1;
        }
    }
    Ok(format!(
        "{} ops, worst {worst:.1e}; sequence_loss {checked} entries over {} tensors, worst {e2e:.1e}",
        cases.len(),
        ids.len()
    ))
}

fn spec(grammar: Grammar, count: usize, seed: u64) -> ToyGrammarSpec {
    ToyGrammarSpec {
        grammar,
        count,
        vocab_size: if grammar == Grammar::BracketedQuery { 20 } else { 26 },
        max_len: 6,
        seed,
    }
}

fn toy_config(mode: ArchMode, layers: usize, units: usize, dropout: f64) -> ModelConfig {
    ModelConfig {
        mode,
        layers,
        units,
        heads: 4,
        dropout,
        max_len: 32,
        beam: 4,
    }
}

fn toy_training(max_epochs: usize, patience: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 10,
        lr: 1e-3,
        warmup_steps: 0,
        patience,
        max_epochs,
        seeds: vec![1],
        strategy: Strategy::Proportional,
        dev_metrics: false,
        ..TrainConfig::default()
    }
}

fn overfit_capability() -> Outcome {
    // 62 examples split 50/6/6; dev is replaced by train so early stopping
    // tracks the fit itself.
    let mut task = toy_task(&spec(Grammar::BracketedQuery, 62, 1), "geo").unwrap();
    ensure(task.train.len() == 50, format!("{} train examples", task.train.len()))?;
    task.dev = task.train.clone();
    let run = train_seed::<f64>(
        std::slice::from_ref(&task),
        &toy_config(ArchMode::Single, 3, 64, 0.0),
        &toy_training(200, 20),
        1,
        None,
    )
    .map_err(|e| e.to_string())?;
    let mut tasks = vec![task];
    align_tasks(&mut tasks, run.model.vocabs());
    let em = score_split(&run.model, &tasks[0].train, 0, 1, DEFAULT_RESTARTS, 0).map_err(|e| e.to_string())?;
    ensure(
        em == 1.0,
        format!("train exact match {em:.3} after {} epochs", run.result.epochs_run),
    )?;
    Ok(format!(
        "train exact match 1.000 (epochs run {}, best {})",
        run.result.epochs_run, run.result.best_epoch
    ))
}

fn mtl_parity() -> Outcome {
    let copy = toy_task(&spec(Grammar::Copy, 250, 1), "copy").unwrap();
    let geo = toy_task(&spec(Grammar::BracketedQuery, 250, 2), "geo").unwrap();
    ensure(
        copy.train.len() == 200 && geo.train.len() == 200,
        "expected 200 train examples per task",
    )?;
    let cfg = toy_training(100, 15);
    let run = |tasks: &[TaskSpec], mode| {
        train_seed::<f64>(tasks, &toy_config(mode, 2, 64, 0.1), &cfg, 1, None)
            .map(|r| r.result.test_metrics)
            .map_err(|e| e.to_string())
    };
    let mtl = run(&[copy.clone(), geo.clone()], ArchMode::OneToOne)?;
    let single_copy = run(&[copy], ArchMode::Single)?["copy"];
    let single_geo = run(&[geo], ArchMode::Single)?["geo"];
    for (task, single) in [("copy", single_copy), ("geo", single_geo)] {
        let m = mtl[task];
        ensure(m >= 0.95, format!("1-to-1 {task} test exact match {m:.3}"))?;
        ensure(
            (m - single).abs() <= 0.03,
            format!("1-to-1 {task} {m:.3} vs single {single:.3}"),
        )?;
    }
    Ok(format!(
        "1-to-1 copy {:.3} / geo {:.3}; single copy {single_copy:.3} / geo {single_geo:.3}",
        mtl["copy"], mtl["geo"]
    ))
}

fn gradient_isolation() -> Outcome {
    let mut tasks = vec![
        toy_task(&spec(Grammar::Copy, 20, 1), "copy").unwrap(),
        toy_task(&spec(Grammar::BracketedQuery, 20, 2), "geo").unwrap(),
        toy_task(&spec(Grammar::Reverse, 20, 3), "rev").unwrap(),
    ];
    let model: Parser<f64> =
        Parser::for_tasks(toy_config(ArchMode::OneToN, 2, 16, 0.1), &tasks, 3).map_err(|e| e.to_string())?;
    align_tasks(&mut tasks, model.vocabs());
    for (t, task) in tasks.iter().enumerate() {
        let batch: Vec<_> = task.train.iter().take(4).collect();
        let mut tape = Tape::training(model.params(), 1);
        let loss = model.batch_loss(&mut tape, &batch, t).map_err(|e| e.to_string())?;
        let grads = tape.backward(loss).unwrap().dense(model.params());
        let own = format!("decoder.{}.", task.name);
        let mut own_norm = 0.0;
        for ((_, spec), g) in model.param_specs().zip(&grads) {
            let norm = g.sq_norm();
            if spec.name.starts_with("decoder.") && !spec.name.starts_with(&own) {
                ensure(norm == 0.0, format!("task {} leaks into {}", task.name, spec.name))?;
            } else if spec.name.starts_with(&own) {
                own_norm += norm;
            }
        }
        ensure(
            own_norm > 0.0,
            format!("task {} has no gradient on its own decoder", task.name),
        )?;
    }
    Ok("3 tasks; other decoders receive exactly zero gradient".into())
}

fn parameter_ordering() -> Outcome {
    // (name, source vocab, target vocab) per dataset
    let stats = [
        ("geoquery", 279, 103),
        ("nlmaps", 8628, 1012),
        ("top", 11873, 116),
        ("overnight", 1921, 311),
        ("amr", 30169, 28880),
    ];
    let reserved = corpus::SPECIAL_TOKENS.len();
    let names: Vec<String> = stats.iter().map(|s| s.0.to_string()).collect();
    let src_union: usize = stats.iter().map(|s| s.1).sum::<usize>() + reserved;
    let tgt_sizes: Vec<usize> = stats.iter().map(|s| s.2 + reserved).collect();
    let tgt_union: usize = stats.iter().map(|s| s.2).sum::<usize>() + reserved;

    let baselines: usize = Preset::BASELINES
        .iter()
        .zip(&stats)
        .map(|(p, s)| {
            ParamPlan::new(&p.model_config(), s.1 + reserved, &[s.2 + reserved], &names[..1])
                .count()
                .total
        })
        .sum();
    let one_to_n = ParamPlan::new(&Preset::OneToN.model_config(), src_union, &tgt_sizes, &names)
        .count()
        .total;
    let shared = ["shared".to_string()];
    let one_to_one = |p: Preset| {
        ParamPlan::new(&p.model_config(), src_union + names.len(), &[tgt_union], &shared)
            .count()
            .total
    };
    let (big, small) = (one_to_one(Preset::OneToOne), one_to_one(Preset::OneToOneSmall));
    let m = |n: usize| format!("{:.1}M", n as f64 / 1e6);
    let detail = format!(
        "1-to-1-Small {} < 1-to-N {} < 1-to-1 {} < baselines {}; 1-to-1 saves {:.1}% vs a 68% reference",
        m(small),
        m(one_to_n),
        m(big),
        m(baselines),
        100.0 * (1.0 - big as f64 / baselines as f64)
    );
    ensure(small < one_to_n && one_to_n < big && big < baselines, detail.clone())?;
    Ok(detail)
}

fn smatch_correctness() -> Outcome {
    let sample =
        parse_penman("(p / pollute-01 :polarity - :ARG0 (m / method :mod (t / this)) :ARG1 (e / environment))")
            .unwrap();
    let same = smatch(&sample, &sample, DEFAULT_RESTARTS, 0).f1;
    ensure(same == 1.0, format!("identical graphs F1 {same}"))?;
    let gold = parse_penman("(p / pollute-01 :ARG1 (e / environment))").unwrap();
    let pred = parse_penman("(p / pollute-01 :ARG1 (e / environ))").unwrap();
    let r = smatch(&gold, &pred, DEFAULT_RESTARTS, 0);
    ensure((r.f1 - 0.75).abs() < 1e-12, format!("environ example F1 {}", r.f1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..1000 {
        let (g, h) = (random_small(&mut rng, 6), random_small(&mut rng, 6));
        let hill = smatch(&g, &h, DEFAULT_RESTARTS, i).f1;
        let exact = smatch_exhaustive(&g, &h).map_err(|e| e.to_string())?.f1;
        ensure(
            hill == exact,
            format!("pair {i}: hill-climb {hill} vs exhaustive {exact}"),
        )?;
    }
    Ok("identical 1.0; environ 0.75; 1000 random pairs agree with the exhaustive oracle".into())
}

fn amr_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for i in 0..500 {
        let g = random_tree(&mut rng, 8);
        let back = restore(&linearize(&g)).map_err(|e| format!("tree {i}: {e}"))?;
        let f1 = smatch(&back, &g, DEFAULT_RESTARTS, i).f1;
        ensure(f1 == 1.0, format!("tree {i}: F1 {f1} for {}", g.to_penman()))?;
    }
    let mut total = 0.0;
    for i in 0..200 {
        let g = random_reentrant(&mut rng, 8);
        let back = amr::restore_lenient(&linearize(&g));
        total += smatch(&back, &g, DEFAULT_RESTARTS, i).f1;
    }
    let mean = total / 200.0;
    ensure(mean >= 0.95, format!("re-entrant mean F1 {mean:.4}"))?;
    Ok(format!("500 trees exact; 200 re-entrant graphs mean F1 {mean:.4}"))
}

fn early_stopping() -> Outcome {
    // Scripted losses; the "checkpoint" is a one-element parameter holding
    // the loss seen at that evaluation.
    let script = [3.0, 2.5, 2.6, 2.7, 2.0];
    let mut params = ParamStore::<f64>::new();
    let id = params.add("w", Tensor::scalar(0.0)).unwrap();
    let mut best = params.clone();
    let mut stopper = EarlyStopping::new(2);
    let mut stopped_at = None;
    for (i, &l) in script.iter().enumerate() {
        *params.get_mut(id) = Tensor::scalar(l);
        match stopper.observe(l) {
            StopDecision::Improved => best = params.clone(),
            StopDecision::Stop => {
                stopped_at = Some(i + 1);
                break;
            }
            StopDecision::Continue => {}
        }
    }
    ensure(stopped_at == Some(4), format!("stopped at evaluation {stopped_at:?}"))?;
    let restored = best.get(id).item();
    ensure(restored == 2.5, format!("restored checkpoint holds {restored}"))?;

    // A real run: the returned model's dev loss is the minimum observed.
    let task = toy_task(&spec(Grammar::Reverse, 60, 4), "rev").unwrap();
    let cfg = TrainConfig {
        patience: 2,
        lr: 3e-3,
        ..toy_training(40, 2)
    };
    let run = train_seed::<f64>(
        std::slice::from_ref(&task),
        &toy_config(ArchMode::Single, 1, 16, 0.0),
        &cfg,
        2,
        None,
    )
    .map_err(|e| e.to_string())?;
    let min = run.metrics.iter().map(|r| r.dev_loss).fold(f64::INFINITY, f64::min);
    let mut tasks = vec![task];
    align_tasks(&mut tasks, run.model.vocabs());
    let (mut nll, mut n) = (0.0, 0);
    for ex in &tasks[0].dev {
        nll += run.model.sequence_loss(ex, 0).unwrap() * ex.gold_actions.len() as f64;
        n += ex.gold_actions.len();
    }
    let returned = nll / n as f64;
    ensure(
        (returned - min).abs() < 1e-12,
        format!("returned dev loss {returned} vs minimum {min}"),
    )?;
    ensure(
        run.result.epochs_run - run.result.best_epoch <= 2,
        format!("ran {} epochs past best", run.result.epochs_run - run.result.best_epoch),
    )?;
    Ok(format!(
        "scripted run stops at evaluation 4 and restores 2.5; trained run restores epoch {} of {}",
        run.result.best_epoch, run.result.epochs_run
    ))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let entries = vec![
        toy::write_task(&spec(Grammar::Copy, 30, 1), "copy", dir.path()).unwrap(),
        toy::write_task(&spec(Grammar::BracketedQuery, 30, 2), "geo", dir.path()).unwrap(),
    ];
    let manifest = dir.path().join("manifest.json");
    toy::write_manifest(&manifest, entries).unwrap();
    let cfg = TrainConfig {
        seeds: vec![5, 6],
        strategy: Strategy::Annealed,
        dev_metrics: true,
        ..toy_training(3, 3)
    };
    let model = toy_config(ArchMode::OneToOne, 1, 16, 0.1);
    let once = || {
        let tasks = load_dataset(&manifest).unwrap();
        train::<f64>(&tasks, &model, &cfg, None)
            .map(|r| r.1)
            .map_err(|e| e.to_string())
    };
    let (a, b) = (once()?, once()?);
    for (x, y) in a.seeds.iter().zip(&b.seeds) {
        ensure(!x.train_losses.is_empty(), "no training steps recorded")?;
        ensure(
            x.train_losses == y.train_losses,
            format!("seed {} per-step losses differ", x.seed),
        )?;
    }
    ensure(a.without_timing() == b.without_timing(), "run reports differ")?;
    Ok(format!(
        "2 seeds x {} steps: identical losses and reports",
        a.seeds[0].train_losses.len()
    ))
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("sampling analytics", sampling_analytics),
        ("sampling empirics", sampling_empirics),
        ("annealed bridge", annealed_bridge),
        ("gradient audit", gradient_audit),
        ("overfit capability", overfit_capability),
        ("MTL parity at toy scale", mtl_parity),
        ("gradient isolation", gradient_isolation),
        ("parameter-count ordering", parameter_ordering),
        ("smatch correctness", smatch_correctness),
        ("AMR round trip", amr_round_trip),
        ("early stopping", early_stopping),
        ("determinism", determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {:>2} {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {:>2} {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
