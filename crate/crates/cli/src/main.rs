//! `adauc`: data generation, adversarial AUC training, evaluation under
//! attack, oracle verification and plotting.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use adauc::attack::{parse_attack_list, AttackConfig, AttackSpec};
use adauc::checkpoint::Checkpoint;
use adauc::data::{
    gen_synthetic_longtail, load_cifar10_bin, load_dataset, load_mnist_idx, merge_pools,
    save_dataset, subsample_longtail, LongTailSpec, RawPool,
};
use adauc::eval::{
    evaluate_grid, histogram_series, history_series, parse_histogram_csv, parse_history_csv,
    score_histogram, write_histogram_csv, write_history_csv, write_report_csv, write_svg_lines,
    NamedModel,
};
use adauc::io::write_atomic;
use adauc::model::parse_arch;
use adauc::objective::ObjectiveContext;
use adauc::oracle::{self, run_suite, Suite};
use adauc::trainer::{train_with, TrainConfig, TrainMode};

use config::Config;

#[derive(Parser, Debug)]
#[command(
    name = "adauc",
    version,
    about = "Adversarial AUC optimization toolkit"
)]
struct Cli {
    /// Worker threads (falls back to ADAUC_THREADS, then the core count).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Kind {
    Synthetic,
    MnistLt,
    Cifar10Lt,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate or import a dataset.
    GenData {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write a held-out test set.
        #[arg(long)]
        out_test: Option<PathBuf>,
        /// IDX image file (mnist-lt).
        #[arg(long)]
        images: Option<PathBuf>,
        /// IDX label file (mnist-lt).
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        test_images: Option<PathBuf>,
        #[arg(long)]
        test_labels: Option<PathBuf>,
        /// CIFAR-10 binary batch (cifar10-lt, repeatable).
        #[arg(long = "batch")]
        batches: Vec<PathBuf>,
        #[arg(long)]
        test_batch: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a scorer with natural, plain adversarial or FOSC-scheduled training.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Evaluation set for the per-epoch history (defaults to the training set).
        #[arg(long)]
        test_data: Option<PathBuf>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long)]
        out_history: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate checkpoints under a list of attacks.
    Eval {
        /// Checkpoint file; the method name is its file stem (repeatable).
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        attacks: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Score histogram of the first model under `histogram_attack`.
        #[arg(long)]
        histogram_out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the brute-force oracle suites.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a history or histogram CSV as an SVG line chart.
    Plot {
        #[arg(
            long,
            conflicts_with = "histogram",
            required_unless_present = "histogram"
        )]
        history: Option<PathBuf>,
        #[arg(long)]
        histogram: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn eight_255() -> String {
    (8.0f64 / 255.0).to_string()
}

fn two_255() -> String {
    (2.0f64 / 255.0).to_string()
}

fn load_config(defaults: &[(&str, &str)], args: &ConfigArgs) -> Result<Config> {
    let mut cfg = Config::with_defaults(defaults);
    if let Some(path) = &args.config {
        cfg.merge_file(path)?;
    }
    cfg.set_pairs(&args.set)?;
    Ok(cfg)
}

fn attack_config(cfg: &Config) -> Result<AttackConfig> {
    Ok(AttackConfig {
        eps: cfg.get("eps")?,
        beta: cfg.get("beta")?,
        k_steps: cfg.get("k_steps")?,
        c_max: cfg.get_opt("c_max")?,
        t_prime: cfg.get_opt("t_prime")?,
        random_start: cfg.get("random_start")?,
    })
}

fn parse_classes(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse().map_err(|_| anyhow!("bad class id `{t}`")))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen_data(
    kind: Kind,
    seed: Option<u64>,
    out: &Path,
    out_test: Option<&Path>,
    images: Option<&Path>,
    labels: Option<&Path>,
    test_images: Option<&Path>,
    test_labels: Option<&Path>,
    batches: &[PathBuf],
    test_batch: Option<&Path>,
    args: &ConfigArgs,
) -> Result<()> {
    let mut cfg = load_config(
        &[
            ("seed", "0"),
            ("n", "2000"),
            ("n_test", "2000"),
            ("d", "50"),
            ("rho", "0.1"),
            ("separation", "3.0"),
            ("n_max", "5000"),
            ("imbalance", "0.01"),
            ("positive_classes", "5,6,7,8,9"),
        ],
        args,
    )?;
    cfg.set_opt("seed", seed)?;
    let seed: u64 = cfg.get("seed")?;
    let positive = parse_classes(cfg.raw("positive_classes"))?;
    let spec = LongTailSpec {
        n_classes: 10,
        n_max: cfg.get("n_max")?,
        imbalance: cfg.get("imbalance")?,
        positive_class_ids: positive.clone(),
    };

    let (train, test) = match kind {
        Kind::Synthetic => {
            let n: usize = cfg.get("n")?;
            let n_test: usize = if out_test.is_some() {
                cfg.get("n_test")?
            } else {
                0
            };
            let all = gen_synthetic_longtail(
                seed,
                n + n_test,
                cfg.get("d")?,
                cfg.get("rho")?,
                cfg.get("separation")?,
            )?;
            if n_test > 0 {
                let (a, b) = all.split_at(n)?;
                (a, Some(b))
            } else {
                (all, None)
            }
        }
        Kind::MnistLt => {
            let (img, lab) = images
                .zip(labels)
                .ok_or_else(|| anyhow!("mnist-lt needs --images and --labels"))?;
            let pool = load_mnist_idx(img, lab)?;
            let train = subsample_longtail(&pool, &spec, seed)?;
            let test = match (out_test, test_images.zip(test_labels)) {
                (Some(_), Some((ti, tl))) => {
                    Some(load_mnist_idx(ti, tl)?.binarize(&positive, "mnist-test")?)
                }
                (Some(_), None) => bail!("--out-test needs --test-images and --test-labels"),
                _ => None,
            };
            (train, test)
        }
        Kind::Cifar10Lt => {
            if batches.is_empty() {
                bail!("cifar10-lt needs at least one --batch");
            }
            let pools: Vec<RawPool> = batches
                .iter()
                .map(|p| load_cifar10_bin(p))
                .collect::<adauc::Result<_>>()?;
            let train = subsample_longtail(&merge_pools(pools)?, &spec, seed)?;
            let test = match (out_test, test_batch) {
                (Some(_), Some(tb)) => {
                    Some(load_cifar10_bin(tb)?.binarize(&positive, "cifar10-test")?)
                }
                (Some(_), None) => bail!("--out-test needs --test-batch"),
                _ => None,
            };
            (train, test)
        }
    };
    save_dataset(&train, out)?;
    eprintln!(
        "wrote {} ({} rows, d={}, {} positive)",
        out.display(),
        train.len(),
        train.dim(),
        train.n_pos()
    );
    if let (Some(path), Some(test)) = (out_test, test) {
        save_dataset(&test, path)?;
        eprintln!("wrote {} ({} rows)", path.display(), test.len());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    data: &Path,
    test_data: Option<&Path>,
    mode: Option<String>,
    arch: Option<String>,
    epochs: Option<usize>,
    seed: Option<u64>,
    out_model: &Path,
    out_history: Option<&Path>,
    args: &ConfigArgs,
) -> Result<()> {
    let (eps, beta) = (eight_255(), two_255());
    let mut cfg = load_config(
        &[
            ("arch", "linear"),
            ("mode", "at2"),
            ("epochs", "60"),
            ("seed", "0"),
            ("eta_w", "0.01"),
            ("eta_alpha", "0.1"),
            ("batch_size", "128"),
            ("lr_decay_factor", "0.1"),
            ("lr_decay_every", "30"),
            ("lr_floor", "0"),
            ("weight_decay", "0.0005"),
            ("momentum", "0"),
            ("gamma", "0"),
            ("eps", &eps),
            ("beta", &beta),
            ("k_steps", "10"),
            ("c_max", "auto"),
            ("t_prime", "auto"),
            ("random_start", "false"),
            ("track_attacked", "none"),
        ],
        args,
    )?;
    cfg.set_opt("mode", mode)?;
    cfg.set_opt("arch", arch)?;
    cfg.set_opt("epochs", epochs)?;
    cfg.set_opt("seed", seed)?;

    let train = load_dataset(data)?;
    let test = test_data.map(load_dataset).transpose()?;
    let widths = parse_arch(cfg.raw("arch"), train.dim())?;
    let attack = attack_config(&cfg)?;
    let mode: TrainMode = cfg.get("mode")?;
    let tc = TrainConfig {
        eta_w: cfg.get("eta_w")?,
        eta_alpha: cfg.get("eta_alpha")?,
        batch_size: cfg.get("batch_size")?,
        epochs: cfg.get("epochs")?,
        lr_decay_factor: cfg.get("lr_decay_factor")?,
        lr_decay_every: cfg.get("lr_decay_every")?,
        lr_floor: cfg.get("lr_floor")?,
        weight_decay: cfg.get("weight_decay")?,
        momentum: cfg.get("momentum")?,
        seed: cfg.get("seed")?,
        mode,
        track_attacked: cfg.get_opt("track_attacked")?,
    };
    let ctx = ObjectiveContext::new(train.p(), cfg.get("gamma")?)?;
    let out = train_with(&train, test.as_ref(), &widths, &attack, &tc, &ctx, |r| {
        let attacked = r
            .auc_attacked
            .map(|a| format!(" auc_attacked={a:.4}"))
            .unwrap_or_default();
        eprintln!(
            "epoch {:>3} objective={:.6} auc_clean={:.4}{attacked} grad_norm_w={:.4} c_t={:.5}",
            r.epoch, r.objective, r.auc_clean, r.grad_norm_w, r.c_t
        );
    })?;
    Checkpoint {
        mode,
        params: out.params,
        aux: out.aux,
    }
    .save(out_model)?;
    if let Some(path) = out_history {
        let mut header = vec![
            ("command".to_string(), "train".to_string()),
            ("data".to_string(), train.name().to_string()),
        ];
        if let Some(t) = &test {
            header.push(("test_data".into(), t.name().to_string()));
        }
        header.extend(cfg.header());
        header.push(("resolved_c_max".into(), out.c_max.to_string()));
        header.push(("resolved_t_prime".into(), out.t_prime.to_string()));
        write_history_csv(&out.history, &header, path)?;
    }
    Ok(())
}

fn method_name(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| anyhow!("cannot derive a method name from {}", path.display()))
}

fn cmd_eval(
    models: &[PathBuf],
    data: &Path,
    attacks: Option<String>,
    seed: Option<u64>,
    out: &Path,
    histogram_out: Option<&Path>,
    args: &ConfigArgs,
) -> Result<()> {
    let (eps, beta) = (eight_255(), two_255());
    let mut cfg = load_config(
        &[
            ("attacks", "clean,fgsm,pgd-5,pgd-10,pgd-20"),
            ("seed", "0"),
            ("eps", &eps),
            ("beta", &beta),
            ("k_steps", "10"),
            ("c_max", "auto"),
            ("t_prime", "auto"),
            ("random_start", "false"),
            ("histogram_attack", "pgd-10"),
            ("bins", "20"),
        ],
        args,
    )?;
    cfg.set_opt("attacks", attacks)?;
    cfg.set_opt("seed", seed)?;
    let specs = parse_attack_list(cfg.raw("attacks"))?;
    if specs.is_empty() {
        bail!("no attacks given");
    }
    let attack = attack_config(&cfg)?;
    let seed: u64 = cfg.get("seed")?;
    let ds = load_dataset(data)?;
    let named: Vec<NamedModel> = models
        .iter()
        .map(|p| {
            Ok(NamedModel {
                method: method_name(p)?,
                checkpoint: Checkpoint::load(p)?,
            })
        })
        .collect::<Result<_>>()?;
    let report = evaluate_grid(&named, &ds, &specs, &attack, seed)?;
    let mut header = vec![("command".to_string(), "eval".to_string())];
    header.extend(cfg.header());
    write_report_csv(&report, &header, out)?;
    for c in &report.cells {
        eprintln!("{} ({}) {}: auc={:.4}", c.method, c.mode, c.attack, c.auc);
    }
    if let Some(path) = histogram_out {
        let spec: AttackSpec = cfg.raw("histogram_attack").parse()?;
        let (h, _) = score_histogram(
            &named[0].checkpoint,
            &ds,
            spec,
            &attack,
            seed,
            cfg.get("bins")?,
        )?;
        header.push(("method".into(), named[0].method.clone()));
        write_histogram_csv(&h, &header, path)?;
    }
    Ok(())
}

fn cmd_verify(suite: &str, seed: u64, out: Option<&Path>) -> Result<bool> {
    let suite: Suite = suite.parse()?;
    let results = run_suite(suite, seed)?;
    for r in &results {
        println!(
            "{} {}/{}: {:e} ({})",
            if r.passed { "PASS" } else { "FAIL" },
            r.suite,
            r.name,
            r.value,
            r.bound
        );
    }
    if let Some(path) = out {
        let header = vec![
            ("command".to_string(), "verify".to_string()),
            ("suite".to_string(), suite.to_string()),
            ("seed".to_string(), seed.to_string()),
        ];
        write_atomic(path, oracle::report_csv(&results, &header).as_bytes())?;
    }
    Ok(results.iter().all(|r| r.passed))
}

/// `# key = value` lines of a CSV file, carried into derived outputs.
fn comment_header(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.strip_prefix("# "))
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (format!("input.{k}"), v.to_string()))
        .collect()
}

fn cmd_plot(history: Option<&Path>, histogram: Option<&Path>, out: &Path) -> Result<()> {
    let (input, text) = match history.or(histogram) {
        Some(p) => (
            p,
            std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        ),
        None => bail!("one of --history or --histogram is required"),
    };
    let mut header = vec![("command".to_string(), "plot".to_string())];
    header.extend(comment_header(&text));
    let ctx = || format!("parsing {}", input.display());
    if history.is_some() {
        let h = parse_history_csv(&text).with_context(ctx)?;
        write_svg_lines(
            &history_series(&h),
            "Test AUC per epoch",
            "epoch",
            "AUC",
            &header,
            out,
        )?;
    } else {
        let rows = parse_histogram_csv(&text).with_context(ctx)?;
        write_svg_lines(
            &histogram_series(&rows),
            "Score histogram",
            "score",
            "count",
            &header,
            out,
        )?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData {
            kind,
            seed,
            out,
            out_test,
            images,
            labels,
            test_images,
            test_labels,
            batches,
            test_batch,
            cfg,
        } => cmd_gen_data(
            kind,
            seed,
            &out,
            out_test.as_deref(),
            images.as_deref(),
            labels.as_deref(),
            test_images.as_deref(),
            test_labels.as_deref(),
            &batches,
            test_batch.as_deref(),
            &cfg,
        )
        .map(|_| true),
        Command::Train {
            data,
            test_data,
            mode,
            arch,
            epochs,
            seed,
            out_model,
            out_history,
            cfg,
        } => cmd_train(
            &data,
            test_data.as_deref(),
            mode,
            arch,
            epochs,
            seed,
            &out_model,
            out_history.as_deref(),
            &cfg,
        )
        .map(|_| true),
        Command::Eval {
            models,
            data,
            attacks,
            seed,
            out,
            histogram_out,
            cfg,
        } => cmd_eval(
            &models,
            &data,
            attacks,
            seed,
            &out,
            histogram_out.as_deref(),
            &cfg,
        )
        .map(|_| true),
        Command::Verify { suite, seed, out } => cmd_verify(&suite, seed, out.as_deref()),
        Command::Plot {
            history,
            histogram,
            out,
        } => cmd_plot(history.as_deref(), histogram.as_deref(), &out).map(|_| true),
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("ADAUC_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| anyhow!("ADAUC_THREADS must be a positive integer, got `{v}`")),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("adauc: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let outcome = thread_count(cli.threads).and_then(|threads| {
        if threads == Some(0) {
            bail!("--threads must be >= 1");
        }
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().context("building thread pool")?;
        pool.install(|| run(cli))
    });
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("adauc: verification failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("adauc: {e:#}");
            ExitCode::from(1)
        }
    }
}
