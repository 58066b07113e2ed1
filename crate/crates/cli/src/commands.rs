//! The five subcommands. Each one loads data/config, calls into the
//! core crate and writes CSV artifacts into the output directory.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use earlynet::checkpoint;
use earlynet::data::Dataset;
use earlynet::evaluator::{cascade_sweep, expected_accuracy, per_head_curve, ExpectedAccuracyReport};
use earlynet::inference::{costs_csv, predict_anytime, CostModel, StopCriterion};
use earlynet::trainer::train;
use earlynet::{Net32, Tensor32};

use crate::config::RunConfig;

const DEFAULT_EVAL_SCHEMES: &[&str] = &["eq", "lin", "poly", "ilin", "ipoly", "norm"];

pub fn cmd_train(cfg: &RunConfig, out: &Path, ckpt: &Path) -> Result<()> {
    let (train_ds, val_ds, _) = cfg.splits()?;
    let mut net = cfg.build_net(train_ds.num_classes())?;
    let model = CostModel::analytic(&net)?;
    let tc = cfg.train_config(Some(&model))?;

    let log = train(&mut net, &train_ds, val_ds.as_ref(), &tc)
        .context("training failed")?;
    for r in &log.records {
        let accs: Vec<String> = r.val_acc.iter().map(|a| format!("{a:.3}")).collect();
        println!(
            "epoch {:>3}: loss {:.4} | val acc per head [{}]",
            r.epoch,
            r.total_loss,
            accs.join(" ")
        );
    }

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    checkpoint::save(&net, ckpt)?;
    let log_path = out.join("trainlog.csv");
    fs::write(&log_path, log.to_csv()).with_context(|| format!("writing {}", log_path.display()))?;
    println!("wrote {} and {}", ckpt.display(), log_path.display());
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path, ckpt: &Path, schemes: Option<&str>) -> Result<()> {
    let (net, eval_ds) = load_trained(cfg, ckpt)?;
    let model = CostModel::analytic(&net)?;

    let names: Vec<String> = match schemes {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => DEFAULT_EVAL_SCHEMES.iter().map(|s| s.to_string()).collect(),
    };
    if names.is_empty() || names.iter().any(|n| n.is_empty()) {
        bail!("--schemes wants a comma-separated list of scheme names");
    }

    let mut csv = String::from(ExpectedAccuracyReport::CSV_HEADER);
    csv.push('\n');
    for name in &names {
        let scheme = cfg.scheme(name, Some(&model))?;
        let report = expected_accuracy(&net, &eval_ds, &scheme)?;
        println!("{}", report.summary());
        csv.push_str(&report.csv_rows());
    }

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("expected_accuracy.csv");
    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_costs(cfg: &RunConfig, out: &Path, ckpt: Option<&Path>, measure: bool) -> Result<()> {
    let mut net = cfg.build_net(cfg.num_classes()?)?;
    if let Some(p) = ckpt {
        checkpoint::load(&mut net, p)?;
    }
    let analytic = CostModel::analytic(&net)?;
    let measured = if measure {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        let mut shape = vec![8];
        shape.extend_from_slice(&cfg.arch.input);
        let calibration = Tensor32::randn(&shape, 1.0, &mut rng);
        Some(CostModel::measured(&net, &calibration, 5)?)
    } else {
        None
    };

    let csv = costs_csv(&analytic, measured.as_ref());
    print!("{csv}");
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("costs.csv");
    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_cascade(cfg: &RunConfig, out: &Path, ckpt: &Path) -> Result<()> {
    let criteria = cfg.stop_criteria()?;
    for &c in &criteria {
        if cfg.thresholds_for(c).is_empty() {
            bail!("[cascade] threshold grid for {} is empty", criterion_name(c));
        }
    }
    let (net, eval_ds) = load_trained(cfg, ckpt)?;
    let model = CostModel::analytic(&net)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let heads = per_head_curve(&net, &eval_ds, &model, None)?;
    for p in &heads.points {
        println!(
            "head {}: cost {} accuracy {:.4}",
            p.head.map(|h| h + 1).unwrap_or(0),
            p.cost,
            p.accuracy
        );
    }
    let path = out.join("per_head_curve.csv");
    fs::write(&path, heads.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());

    for c in criteria {
        let sweep = cascade_sweep(&net, &eval_ds, c, cfg.thresholds_for(c), &model, None)?;
        let first = sweep.points.first().expect("nonempty grid checked above");
        let last = sweep.points.last().expect("nonempty grid checked above");
        println!(
            "{} sweep: threshold {} -> mean cost {:.1} acc {:.4}; threshold {} -> mean cost {:.1} acc {:.4}",
            criterion_name(c),
            first.threshold.unwrap_or(f64::NAN),
            first.cost,
            first.accuracy,
            last.threshold.unwrap_or(f64::NAN),
            last.cost,
            last.accuracy
        );
        let path = out.join(format!("cascade_sweep_{}.csv", criterion_name(c)));
        fs::write(&path, sweep.to_csv()).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn cmd_anytime(cfg: &RunConfig, out: &Path, ckpt: &Path) -> Result<()> {
    let points = cfg.anytime.points;
    if points < 2 {
        bail!("[anytime] points must be at least 2 to span the head schedule");
    }
    let (net, eval_ds) = load_trained(cfg, ckpt)?;
    let model = CostModel::analytic(&net)?;

    let first = model.anytime[0];
    let last = *model.anytime.last().expect("nonempty");
    let labels = eval_ds.labels();
    let mut csv = String::from("interrupt_at,head,cost_macs,accuracy\n");
    for i in 0..points {
        let t = first + (last - first) * i as f64 / (points - 1) as f64;
        let results = predict_anytime(&net, eval_ds.images(), t, &model)?;
        let correct = results
            .iter()
            .zip(labels)
            .filter(|(r, &l)| r.class == l)
            .count();
        let acc = correct as f64 / labels.len() as f64;
        // the chosen head depends only on the interrupt time
        let head = results[0].head;
        let cost = results[0].cost;
        println!("interrupt at {t:.1}: head {} (cost {cost}) accuracy {acc:.4}", head + 1);
        csv.push_str(&format!("{t},{},{cost},{acc}\n", head + 1));
    }

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("anytime.csv");
    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn load_trained(cfg: &RunConfig, ckpt: &Path) -> Result<(Net32, Dataset<f32>)> {
    let (_, _, eval_ds) = cfg.splits()?;
    let mut net = cfg.build_net(eval_ds.num_classes())?;
    checkpoint::load(&mut net, ckpt)?;
    Ok((net, eval_ds))
}

fn criterion_name(c: StopCriterion) -> &'static str {
    match c {
        StopCriterion::Ratio => "ratio",
        StopCriterion::Entropy => "entropy",
    }
}
