//! Acceptance checks. Prints one `PASS` / `FAIL` line per criterion and
//! exits non-zero if any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use adauc::attack::{
    attack_suite, fgsm, pgd_fixed_batch, pgd_fosc_batch, AttackConfig, AttackSpec,
};
use adauc::checkpoint::Checkpoint;
use adauc::data::{
    binarize_longtail, encode_mnist_idx, gen_synthetic_longtail, longtail_class_sizes,
    parse_cifar10_bin, parse_mnist_idx, Dataset, LongTailSpec, RawPool, CIFAR_RECORD,
};
use adauc::eval::{evaluate_grid, NamedModel};
use adauc::linalg::{linf_dist, Matrix};
use adauc::model::ScorerParams;
use adauc::objective::{AuxParams, BatchGrad, ObjectiveContext};
use adauc::oracle::{run_suite, CheckResult, Suite};
use adauc::rng::Prng;
use adauc::trainer::{
    ct_schedule, sgda_step, stationarity_probe, train, train_with, TrainConfig, TrainMode,
    TrainOutput,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn find<'a>(results: &'a [CheckResult], name: &str) -> &'a CheckResult {
    results
        .iter()
        .find(|r| r.name == name)
        .unwrap_or_else(|| panic!("missing check {name}"))
}

fn c01_minmax_equivalence() -> Outcome {
    let start = Instant::now();
    let r = run_suite(Suite::Prop1, 1).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let gap = find(&r, "minmax_gap_100_random");
    check(
        gap.passed && elapsed < Duration::from_secs(5),
        format!(
            "max gap {:.3e} (<= 1e-8) in {:.2}s (< 5s)",
            gap.value,
            elapsed.as_secs_f64()
        ),
    )
}

fn c02_closed_form_stationarity() -> Outcome {
    let r = run_suite(Suite::Prop1, 2).map_err(|e| e.to_string())?;
    let c = find(&r, "closed_form_stationarity");
    check(
        c.passed,
        format!("max |batch-mean partial| {:.3e} (<= 1e-10)", c.value),
    )
}

fn c03_fosc_zero_at_stationary_points() -> Outcome {
    let r = run_suite(Suite::Lemma1, 3).map_err(|e| e.to_string())?;
    let stat = find(&r, "stationary_point_fosc");
    let bnd = find(&r, "boundary_fixed_point_fosc");
    let gen = find(&r, "generic_point_fosc_min");
    let cor = find(&r, "corner_enumeration_gap");
    check(
        stat.passed && bnd.passed && gen.passed && cor.passed,
        format!(
            "stationary {:.3e} (<= 1e-10), boundary {:.3e} (<= 1e-8), generic min {:.3e} (> 0), corner gap {:.3e} (<= 1e-10)",
            stat.value, bnd.value, gen.value, cor.value
        ),
    )
}

fn c04_gradient_exactness() -> Outcome {
    let r = run_suite(Suite::Gradcheck, 4).map_err(|e| e.to_string())?;
    let lin = find(&r, "linear_max_rel_error");
    let mlp = find(&r, "mlp_max_rel_error");
    check(
        lin.passed && mlp.passed,
        format!(
            "max rel error linear {:.3e}, mlp {:.3e} (<= 1e-6)",
            lin.value, mlp.value
        ),
    )
}

fn c05_alpha_strong_concavity() -> Outcome {
    let r = run_suite(Suite::Concavity, 5).map_err(|e| e.to_string())?;
    let c = find(&r, "alpha_second_difference");
    check(
        c.passed,
        format!("max deviation {:.3e} (<= 1e-12)", c.value),
    )
}

fn c06_regularized_concavity() -> Outcome {
    let r = run_suite(Suite::Concavity, 6).map_err(|e| e.to_string())?;
    let gamma = find(&r, "gamma_hat");
    let strong = find(&r, "strong_concavity_violations");
    let control = find(&r, "negative_control_violations");
    check(
        strong.passed && control.passed,
        format!(
            "gamma_hat {:.3}: {} of 1000 violations (== 0); gamma 0 control: {} violations (>= 1)",
            gamma.value, strong.value, control.value
        ),
    )
}

fn small_problem(seed: u64) -> (Dataset, Dataset) {
    let all = gen_synthetic_longtail(seed, 600, 8, 0.2, 2.0).unwrap();
    all.split_at(300).unwrap()
}

fn c07_fosc_schedule() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (c_max, t_prime) in [(0.37, 30usize), (1.0, 7), (1e-3, 1), (0.123456789, 31)] {
        let seq: Vec<f64> = (0..=2 * t_prime)
            .map(|t| ct_schedule(t, c_max, t_prime))
            .collect();
        ok &= seq[0] == c_max;
        ok &= seq[t_prime] == 0.0;
        ok &= seq.windows(2).all(|w| w[1] <= w[0]);
        ok &= seq[t_prime..].iter().all(|&c| c == 0.0);
    }
    notes.push(format!(
        "endpoints/monotone {}",
        if ok { "ok" } else { "broken" }
    ));

    let (tr, te) = small_problem(70);
    let widths = [8, 5, 1];
    let ctx = ObjectiveContext::new(tr.p(), 0.0).unwrap();
    let run = |mode, c_max| {
        let attack = AttackConfig {
            c_max,
            ..Default::default()
        };
        let cfg = TrainConfig {
            epochs: 6,
            mode,
            eta_w: 0.3,
            eta_alpha: 0.3,
            seed: 5,
            ..Default::default()
        };
        train(&tr, Some(&te), &widths, &attack, &cfg, &ctx).unwrap()
    };
    let plain = run(TrainMode::AtPlain, None);
    let fosc = run(TrainMode::AtFosc, Some(0.0));
    let bits = |o: &TrainOutput| -> Vec<u64> {
        let mut v: Vec<u64> = o.params.as_flat().iter().map(|x| x.to_bits()).collect();
        v.extend([o.aux.a, o.aux.b, o.aux.alpha].map(f64::to_bits));
        for r in &o.history.records {
            v.extend(
                [r.objective, r.auc_clean, r.grad_norm_w, r.mean_fosc, r.c_t].map(f64::to_bits),
            );
        }
        v
    };
    let same = bits(&plain) == bits(&fosc);
    notes.push(format!(
        "c_max = 0 vs at1 bitwise {}",
        if same { "identical" } else { "different" }
    ));
    check(ok && same, notes.join(", "))
}

fn in_box_and_ball(x0: &Matrix, xa: &Matrix, eps: f64) -> (f64, bool) {
    let mut worst = 0.0f64;
    let mut boxed = true;
    for i in 0..x0.rows() {
        worst = worst.max(linf_dist(x0.row(i), xa.row(i)).unwrap());
        boxed &= xa.row(i).iter().all(|v| (0.0..=1.0).contains(v));
    }
    (worst, boxed && worst <= eps + 1e-12)
}

fn c08_constraint_integrity() -> Outcome {
    let (tr, _) = small_problem(80);
    let ctx = ObjectiveContext::new(tr.p(), 0.1).unwrap();
    let mut ok = true;
    let mut worst_ratio = 0.0f64;
    for (k, eps) in [8.0 / 255.0, 0.1, 0.5].into_iter().enumerate() {
        let params = ScorerParams::init(&[8, 6, 1], k as u64).unwrap();
        let aux = AuxParams::new(0.3, 0.6, 0.2).unwrap();
        let (xs, ys) = (tr.features(), tr.labels());
        let cfg = AttackConfig {
            eps,
            beta: eps / 4.0,
            k_steps: 12,
            random_start: true,
            ..Default::default()
        };
        let mut batches = vec![
            pgd_fixed_batch(&ctx, &params, &aux, xs, ys, eps, eps / 4.0, 12, Some(9))
                .unwrap()
                .x_adv,
            pgd_fixed_batch(&ctx, &params, &aux, xs, ys, eps, eps, 3, None)
                .unwrap()
                .x_adv,
            pgd_fosc_batch(&ctx, &params, &aux, xs, ys, &cfg, 0.0)
                .unwrap()
                .x_adv,
        ];
        let specs = [AttackSpec::Fgsm, AttackSpec::Pgd(1), AttackSpec::Pgd(20)];
        let suite = attack_suite(&ctx, &params, &aux, &tr, &specs, &cfg, 3).unwrap();
        batches.extend(suite.into_iter().map(|(_, ds)| ds.features().clone()));
        let mut single = Matrix::zeros(xs.rows(), xs.cols());
        for i in 0..xs.rows() {
            let v = fgsm(&ctx, &params, &aux, xs.row(i), ys[i], eps).unwrap();
            single.row_mut(i).copy_from_slice(&v);
        }
        batches.push(single);
        for xa in &batches {
            let (w, good) = in_box_and_ball(xs, xa, eps);
            ok &= good;
            worst_ratio = worst_ratio.max(w / eps);
        }
    }

    let mut rng = Prng::new(8);
    let mut params = ScorerParams::init(&[8, 1], 8).unwrap();
    let mut aux = AuxParams::new(0.5, 0.5, 0.0).unwrap();
    let mut domain_ok = true;
    for _ in 0..2000 {
        let grads = BatchGrad {
            value: 0.0,
            d_theta: (0..params.num_params())
                .map(|_| rng.normal(0.0, 1.0))
                .collect(),
            d_a: rng.normal(0.0, 5.0),
            d_b: rng.normal(0.0, 5.0),
            d_alpha: rng.normal(0.0, 5.0),
        };
        sgda_step(&mut params, &mut aux, &grads, 0.5, 0.5, 5e-4).unwrap();
        domain_ok &= (0.0..=1.0).contains(&aux.a)
            && (0.0..=1.0).contains(&aux.b)
            && (-1.0..=1.0).contains(&aux.alpha);
    }
    // also through full training, checked after every epoch
    let (tr, te) = small_problem(81);
    let tctx = ObjectiveContext::new(tr.p(), 0.0).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        eta_w: 2.0,
        eta_alpha: 2.0,
        batch_size: 16,
        ..Default::default()
    };
    let mut epochs_ok = true;
    let out = train_with(
        &tr,
        Some(&te),
        &[8, 4, 1],
        &AttackConfig::default(),
        &cfg,
        &tctx,
        |_| {},
    )
    .unwrap();
    epochs_ok &= (0.0..=1.0).contains(&out.aux.a)
        && (0.0..=1.0).contains(&out.aux.b)
        && out.aux.alpha.abs() <= 1.0;
    check(
        ok && domain_ok && epochs_ok,
        format!(
            "max ||x_adv - x0||_inf / eps = {worst_ratio:.6}, box {}; aux domain after 2000 sgda steps {}",
            if ok { "ok" } else { "violated" },
            if domain_ok && epochs_ok { "ok" } else { "violated" }
        ),
    )
}

fn c09_long_tail_and_fixtures() -> Outcome {
    let spec = LongTailSpec::ten_class(5000);
    let sizes = longtail_class_sizes(&spec).map_err(|e| e.to_string())?;
    let (pos, neg, rho) =
        binarize_longtail(&sizes, &spec.positive_class_ids).map_err(|e| e.to_string())?;
    let inv = 1.0 / rho;
    let ratio_ok = (8.5..=9.5).contains(&inv);

    let mut rng = Prng::new(9);
    let pool = RawPool {
        dim: 12,
        pixels: (0..12 * 37).map(|_| rng.next_u64() as u8).collect(),
        labels: (0..37).map(|_| rng.index(10) as u8).collect(),
    };
    let (img, lab) = encode_mnist_idx(&pool, 3, 4);
    let mut expected_head = vec![0, 0, 8, 3, 0, 0, 0, 37, 0, 0, 0, 3, 0, 0, 0, 4];
    expected_head.extend(&pool.pixels[..4]);
    let idx_ok = img.len() == 16 + 12 * 37
        && img[..20] == expected_head[..]
        && lab[..8] == [0, 0, 8, 1, 0, 0, 0, 37]
        && parse_mnist_idx(&img, &lab)
            .map(|p| p == pool)
            .unwrap_or(false);

    let mut bytes = Vec::new();
    let mut want_px = Vec::new();
    for k in 0..5u8 {
        bytes.push(k * 2);
        for j in 0..CIFAR_RECORD - 1 {
            let v = (j as u8).wrapping_mul(31).wrapping_add(k);
            bytes.push(v);
            want_px.push(v);
        }
    }
    let cifar = parse_cifar10_bin(&bytes).map_err(|e| e.to_string())?;
    let cifar_ok = cifar.dim == 3072 && cifar.labels == [0, 2, 4, 6, 8] && cifar.pixels == want_px;

    check(
        ratio_ok && idx_ok && cifar_ok,
        format!(
            "sizes {sizes:?}: {pos}:{neg} = 1:{inv:.2} (want 1:[8.5, 9.5]); IDX {}, CIFAR-10 {}",
            if idx_ok { "bit-exact" } else { "mismatch" },
            if cifar_ok { "bit-exact" } else { "mismatch" }
        ),
    )
}

/// Hyperparameters for the desk-scale training comparison.
fn directional_config(mode: TrainMode) -> TrainConfig {
    TrainConfig {
        epochs: 60,
        mode,
        eta_w: 0.3,
        eta_alpha: 0.3,
        batch_size: 256,
        ..Default::default()
    }
}

struct DirectionalRun {
    lines10: Vec<String>,
    lines11: Vec<String>,
    ok10: bool,
    ok11: bool,
}

fn directional_runs() -> DirectionalRun {
    let start = Instant::now();
    let all = gen_synthetic_longtail(11, 4000, 20, 0.1, 2.5).unwrap();
    let (tr, te) = all.split_at(2000).unwrap();
    let attack = AttackConfig::default();
    let ctx = ObjectiveContext::new(tr.p(), 0.0).unwrap();
    let (mut lines10, mut lines11) = (Vec::new(), Vec::new());
    let (mut ok10, mut ok11) = (true, true);
    for (arch, widths) in [("linear", vec![20, 1]), ("mlp:16", vec![20, 16, 1])] {
        let mut models = Vec::new();
        let mut at2 = None;
        for mode in [TrainMode::Natural, TrainMode::AtPlain, TrainMode::AtFosc] {
            let out = train(
                &tr,
                Some(&te),
                &widths,
                &attack,
                &directional_config(mode),
                &ctx,
            )
            .unwrap();
            let ck = Checkpoint {
                mode,
                params: out.params.clone(),
                aux: out.aux,
            };
            models.push(NamedModel {
                method: mode.to_string(),
                checkpoint: ck,
            });
            if mode == TrainMode::AtFosc {
                at2 = Some(out);
            }
        }
        let specs = [AttackSpec::Clean, AttackSpec::Pgd(10)];
        let report = evaluate_grid(&models, &te, &specs, &attack, 3).unwrap();
        let auc = |m: &str, a| report.get(m, a).unwrap();
        let drop = auc("nt", AttackSpec::Clean) - auc("nt", AttackSpec::Pgd(10));
        let gain = auc("at2", AttackSpec::Pgd(10)) - auc("nt", AttackSpec::Pgd(10));
        let clean = auc("at2", AttackSpec::Clean) - auc("at1", AttackSpec::Clean);
        ok10 &= drop >= 0.15 && gain >= 0.05 && clean >= -0.02;
        lines10.push(format!(
            "{arch}: nt drop {drop:+.3} (>= 0.15), at2-nt pgd-10 {gain:+.3} (>= 0.05), at2-at1 clean {clean:+.3} (>= -0.02)"
        ));

        let h = at2.unwrap().history;
        let (g_first, g_last) = stationarity_probe(&h).unwrap();
        let n = h.records.len();
        let mean_auc = |r: &[adauc::trainer::EpochRecord]| {
            r.iter().map(|e| e.auc_clean).sum::<f64>() / r.len() as f64
        };
        let (a_first, a_last) = (mean_auc(&h.records[..10]), mean_auc(&h.records[n - 10..]));
        ok11 &= g_last < g_first && a_last > a_first;
        lines11.push(format!(
            "{arch} at2: grad norm {g_first:.4} -> {g_last:.4}, clean auc {a_first:.3} -> {a_last:.3}"
        ));
    }
    let elapsed = start.elapsed();
    ok10 &= elapsed < Duration::from_secs(300);
    lines10.push(format!("{:.1}s (< 300s)", elapsed.as_secs_f64()));
    DirectionalRun {
        lines10,
        lines11,
        ok10,
        ok11,
    }
}

fn adauc(dir: &Path, threads: &str, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_adauc"))
        .current_dir(dir)
        .arg("--threads")
        .arg(threads)
        .args(args)
        .env_remove("ADAUC_THREADS")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "adauc {args:?}: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn c12_thread_determinism() -> Outcome {
    let runs: Vec<(tempfile::TempDir, &str)> = ["1", "4"]
        .into_iter()
        .map(|t| (tempfile::tempdir().unwrap(), t))
        .collect();
    let steps: [&[&str]; 7] = [
        &[
            "gen-data",
            "--kind",
            "synthetic",
            "--seed",
            "12",
            "--out",
            "train.ads",
            "--out-test",
            "test.ads",
            "--set",
            "n=400",
            "--set",
            "d=10",
        ],
        &[
            "train",
            "--data",
            "train.ads",
            "--test-data",
            "test.ads",
            "--mode",
            "at2",
            "--arch",
            "mlp:6",
            "--epochs",
            "4",
            "--set",
            "eta_w=0.3",
            "--set",
            "track_attacked=5",
            "--out-model",
            "at2.ckpt",
            "--out-history",
            "at2.csv",
        ],
        &[
            "train",
            "--data",
            "train.ads",
            "--mode",
            "nt",
            "--epochs",
            "3",
            "--out-model",
            "nt.ckpt",
            "--out-history",
            "nt.csv",
        ],
        &[
            "eval",
            "--model",
            "at2.ckpt",
            "--model",
            "nt.ckpt",
            "--data",
            "test.ads",
            "--attacks",
            "clean,fgsm,pgd-10",
            "--set",
            "random_start=true",
            "--out",
            "report.csv",
            "--histogram-out",
            "hist.csv",
        ],
        &["verify", "--suite", "prop1", "--out", "prop1.csv"],
        &["plot", "--history", "at2.csv", "--out", "history.svg"],
        &["plot", "--histogram", "hist.csv", "--out", "hist.svg"],
    ];
    for (dir, threads) in &runs {
        for step in steps {
            adauc(dir.path(), threads, step)?;
        }
    }
    let files = [
        "train.ads",
        "test.ads",
        "at2.ckpt",
        "at2.csv",
        "nt.ckpt",
        "nt.csv",
        "report.csv",
        "hist.csv",
        "prop1.csv",
        "history.svg",
        "hist.svg",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| {
            fs::read(runs[0].0.path().join(f)).ok() != fs::read(runs[1].0.path().join(f)).ok()
        })
        .collect();
    check(
        differing.is_empty(),
        format!(
            "{} files compared across --threads 1 and 4, differing: {differing:?}",
            files.len()
        ),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n, name, outcome: Outcome| {
        match &outcome {
            Ok(msg) => println!("PASS [{n:>2}] {name}: {msg}"),
            Err(msg) => println!("FAIL [{n:>2}] {name}: {msg}"),
        }
        results.push((n, name, outcome));
    };
    report(1, "min-max equivalence", guarded(c01_minmax_equivalence));
    report(
        2,
        "closed-form stationarity",
        guarded(c02_closed_form_stationarity),
    );
    report(
        3,
        "fosc at stationary points",
        guarded(c03_fosc_zero_at_stationary_points),
    );
    report(4, "gradient exactness", guarded(c04_gradient_exactness));
    report(
        5,
        "alpha strong concavity",
        guarded(c05_alpha_strong_concavity),
    );
    report(
        6,
        "regularized concavity",
        guarded(c06_regularized_concavity),
    );
    report(7, "fosc schedule", guarded(c07_fosc_schedule));
    report(8, "constraint integrity", guarded(c08_constraint_integrity));
    report(
        9,
        "long-tail construction",
        guarded(c09_long_tail_and_fixtures),
    );
    match catch_unwind(directional_runs) {
        Ok(run) => {
            report(
                10,
                "directional robustness",
                check(run.ok10, run.lines10.join("; ")),
            );
            report(
                11,
                "convergence trend",
                check(run.ok11, run.lines11.join("; ")),
            );
        }
        Err(_) => {
            report(10, "directional robustness", Err("panicked".into()));
            report(11, "convergence trend", Err("panicked".into()));
        }
    }
    report(12, "thread determinism", guarded(c12_thread_determinism));

    let failed: Vec<usize> = results
        .iter()
        .filter(|r| r.2.is_err())
        .map(|r| r.0)
        .collect();
    println!(
        "{} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
