use std::fs;
use std::path::Path;

use mowe::checkpoint::Checkpoint;
use mowe::gradsuite::{run_suite, GradCheck, GRAD_TOLERANCE};
use mowe::metrics::{
    degradation_sweep, spearman, train_recognizer, MetricReport, Passthrough, RecognitionModel,
    Restorer, SweepPoint, SUMMARY_COLUMNS, SUMMARY_METRICS, SWEEP_LEVELS,
};
use mowe::model::{mean_js_divergence, routing_scores, MoweModel, RoutingTable};
use mowe::synth::{build_dataset, Dataset, WeatherKind, WeatherSample, MANIFEST_FILE};
use mowe::train::{write_epoch_csv, Trainer};

use crate::{CliError, RunConfig};

pub const EPOCH_CSV: &str = "epochs.csv";
pub const EVAL_IMAGES_CSV: &str = "eval_images.csv";
pub const EVAL_SUMMARY_CSV: &str = "eval_summary.csv";
pub const ROUTING_CSV: &str = "routing.csv";
pub const SWEEP_CSV: &str = "metric_sweep.csv";

/// Generates the dataset described by `[dataset]` and writes it with its manifest.
pub fn gen_data(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let dataset = build_dataset(&cfg.dataset_config()?)?;
    let dir = cfg.dataset_dir();
    dataset.write(&dir)?;
    println!(
        "wrote {} samples to {}",
        dataset.samples.len(),
        dir.display()
    );
    for kind in WeatherKind::ALL {
        let n = dataset.samples.iter().filter(|s| s.label == kind).count();
        println!("  {kind:<6} {n}");
    }
    Ok(dataset)
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let dir = cfg.dataset_dir();
    if !dir.join(MANIFEST_FILE).is_file() {
        return Err(CliError::Config(format!(
            "no dataset at {}; run gen-data first",
            dir.display()
        )));
    }
    let dataset = Dataset::load(&dir)?;
    let want = cfg.dataset_config()?;
    if (dataset.config.height, dataset.config.width) != (want.height, want.width) {
        return Err(CliError::Config(format!(
            "dataset at {} is {}×{}, config asks for {}×{}",
            dir.display(),
            dataset.config.height,
            dataset.config.width,
            want.height,
            want.width
        )));
    }
    Ok(dataset)
}

/// Trains on every weather kind of the training split, checkpointing after each epoch.
///
/// With `resume`, continues from the checkpoint in the output directory, which must match the
/// model and training settings except for the epoch budget.
pub fn train(cfg: &RunConfig, resume: bool) -> Result<Trainer, CliError> {
    let dataset = load_dataset(cfg)?;
    let model_cfg = cfg.model_config()?;
    let train_cfg = cfg.train_config()?;
    let ckpt_path = cfg.checkpoint_path();
    let mut trainer = if resume {
        let ckpt = Checkpoint::read(&ckpt_path).map_err(|e| {
            CliError::Config(format!("cannot resume from {}: {e}", ckpt_path.display()))
        })?;
        let t = Trainer::from_checkpoint(&ckpt, Some(&model_cfg), train_cfg)?;
        println!("resuming after epoch {}", t.epoch);
        t
    } else {
        Trainer::new(MoweModel::new(model_cfg, cfg.seed)?, train_cfg)?
    };
    fs::create_dir_all(&cfg.out)?;
    let samples = dataset.subset(mowe::synth::Split::Train);
    let csv_path = cfg.out.join(EPOCH_CSV);
    trainer.fit(&samples, |t, r| {
        println!("epoch {:>3}  l1 {:.5}  ce {:.4}", r.epoch, r.l1, r.ce);
        t.to_checkpoint().write(&ckpt_path)?;
        write_epoch_csv(&csv_path, &t.history)
    })?;
    Ok(trainer)
}

pub fn load_model(cfg: &RunConfig) -> Result<MoweModel, CliError> {
    let path = cfg.checkpoint_path();
    let ckpt = Checkpoint::read(&path)
        .map_err(|e| CliError::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
    Ok(MoweModel::from_checkpoint(
        &ckpt,
        Some(&cfg.model_config()?),
    )?)
}

/// Loads the recognizer from the output directory, training and saving it on first use.
pub fn recognizer(cfg: &RunConfig) -> Result<RecognitionModel, CliError> {
    let path = cfg.recognizer_path();
    if path.is_file() {
        return Ok(RecognitionModel::from_checkpoint(&Checkpoint::read(
            &path,
        )?)?);
    }
    let d = cfg.dataset_config()?;
    println!("training recognizer at {}×{}", d.height, d.width);
    let r = train_recognizer(d.height, d.width, cfg.seed)?;
    fs::create_dir_all(&cfg.out)?;
    r.to_checkpoint().write(&path)?;
    Ok(r)
}

/// Scores the trained model, or the identity restorer with `passthrough`, on `eval.split`.
pub fn eval(cfg: &RunConfig, passthrough: bool) -> Result<MetricReport, CliError> {
    let dataset = load_dataset(cfg)?;
    let samples = dataset.subset(cfg.split()?);
    let r = recognizer(cfg)?;
    let restorer: Box<dyn Restorer> = if passthrough {
        Box::new(Passthrough)
    } else {
        Box::new(load_model(cfg)?)
    };
    let report = MetricReport::evaluate(restorer.as_ref(), &samples, &r, cfg.eval.gamma)?;
    let prefix = if passthrough { "passthrough_" } else { "" };
    report.write_images_csv(&cfg.out.join(format!("{prefix}{EVAL_IMAGES_CSV}")))?;
    report.write_summary_csv(&cfg.out.join(format!("{prefix}{EVAL_SUMMARY_CSV}")))?;
    print_summary(&report);
    Ok(report)
}

fn print_summary(report: &MetricReport) {
    let mut header = format!("{:<16}", "metric");
    for (name, _) in SUMMARY_COLUMNS {
        header.push_str(&format!("{name:>10}"));
    }
    println!("{header}{:>10}", "average");
    for (name, f) in SUMMARY_METRICS {
        let mut line = format!("{name:<16}");
        for v in report.summary_row(f) {
            line.push_str(&v.map_or(format!("{:>10}", "-"), |v| format!("{v:>10.4}")));
        }
        println!("{line}");
    }
}

/// Routing-score tables of the trained model over `eval.split`.
pub fn route_analyze(cfg: &RunConfig) -> Result<Vec<RoutingTable>, CliError> {
    let dataset = load_dataset(cfg)?;
    let model = load_model(cfg)?;
    let samples = dataset.subset(cfg.split()?);
    let tables = routing_tables(&model, &samples)?;
    write_routing_csv(&cfg.out.join(ROUTING_CSV), &tables)?;
    for t in &tables {
        println!("layer {}", t.layer);
        for (kind, row) in t.present() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
            println!("  {kind:<6} {}", cells.join(" "));
        }
    }
    println!("mean JS divergence {:.6}", mean_js_divergence(&tables));
    Ok(tables)
}

pub fn routing_tables(
    model: &MoweModel,
    samples: &[&WeatherSample],
) -> Result<Vec<RoutingTable>, CliError> {
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        records.push(model.restore(&s.degraded)?.records);
    }
    let labels: Vec<WeatherKind> = samples.iter().map(|s| s.label).collect();
    Ok(routing_scores(&records, &labels)?)
}

/// One row per layer and present weather kind: `layer, weather, images, e0..e{M-1}`.
pub fn write_routing_csv(path: &Path, tables: &[RoutingTable]) -> Result<(), CliError> {
    let mut text = String::from("layer,weather,images");
    let m = tables.first().map_or(0, |t| t.rows[0].len());
    for e in 0..m {
        text.push_str(&format!(",e{e}"));
    }
    text.push('\n');
    for t in tables {
        for (kind, row) in t.present() {
            text.push_str(&format!("{},{kind},{}", t.layer, t.counts[kind.index()]));
            for v in row {
                text.push_str(&format!(",{v:.6}"));
            }
            text.push('\n');
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Finite-difference checks of every op and the tiny model over `seeds` seeds.
pub fn grad_check(seeds: u64) -> Result<Vec<GradCheck>, CliError> {
    let checks = run_suite(0..seeds, None)?;
    let mut failed = 0;
    for c in &checks {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        failed += usize::from(!c.passed());
        println!(
            "{status} {:<28} seed {:>2}  max rel err {:.3e}",
            c.name, c.seed, c.max_rel_err
        );
    }
    if failed > 0 {
        return Err(CliError::Numeric(format!(
            "{failed} of {} gradient checks exceed {GRAD_TOLERANCE:e}",
            checks.len()
        )));
    }
    println!(
        "all {} gradient checks below {GRAD_TOLERANCE:e}",
        checks.len()
    );
    Ok(checks)
}

/// Perception metric, PSNR and recognizer error over a sweep of mixed-weather intensities.
pub fn metric_sweep(cfg: &RunConfig) -> Result<Vec<SweepPoint>, CliError> {
    let r = recognizer(cfg)?;
    let d = cfg.dataset_config()?;
    let scenes = cfg.eval.sweep_scenes as usize;
    let points = degradation_sweep(
        &r,
        scenes,
        &SWEEP_LEVELS,
        d.height,
        d.width,
        cfg.seed,
        cfg.eval.gamma,
    )?;
    let mut text = String::from("scene,level,m_pa,psnr,pixel_error\n");
    for p in &points {
        text.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            p.scene, p.level, p.m_pa, p.psnr, p.pixel_error
        ));
    }
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join(SWEEP_CSV), text)?;
    let err: Vec<f64> = points.iter().map(|p| p.pixel_error).collect();
    let mpa: Vec<f64> = points.iter().map(|p| p.m_pa).collect();
    // lower PSNR means worse, so rank its negation against the error
    let neg_psnr: Vec<f64> = points.iter().map(|p| -p.psnr).collect();
    let show = |rho: Option<f64>| rho.map_or("undefined".to_string(), |r| format!("{r:.4}"));
    if points.len() >= 5 {
        println!(
            "spearman(m_pa, pixel error) = {}",
            show(spearman(&mpa, &err)?)
        );
        println!(
            "spearman(-psnr, pixel error) = {}",
            show(spearman(&neg_psnr, &err)?)
        );
    }
    Ok(points)
}
