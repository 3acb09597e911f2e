//! Subcommand implementations.

use crate::config::RunConfig;
use crate::{BprMode, CliError, FormatArg, LevelsArg, PolicyArg, Toggle};
use fcos_core::analysis::{ambiguity as run_ambiguity, bpr_anchor, bpr_fcos, AmbiguityReport, BPRReport, LevelsConfig};
use fcos_core::anchors::LowQualityPolicy;
use fcos_core::assignment::{assign, AssignConfig};
use fcos_core::geometry::ResizeSpec;
use fcos_core::ingestion::{
    fmt6, load_annotations, load_detections, sig6, write_annotations, write_detections,
    write_report, Dataset, Report, ReportFormat,
};
use fcos_core::losses::{bce, focal, giou_loss, LossConfig};
use fcos_core::metrics::{evaluate as run_evaluate, PrCurveReport};
use fcos_core::synth::{generate, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write as _;
use std::path::Path;

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    Ok(load_annotations(cfg.annotations_path()?)?)
}

fn levels_config(cfg: &RunConfig, levels: LevelsArg, no_resize: bool) -> Result<LevelsConfig, CliError> {
    let resize: Option<ResizeSpec> = if no_resize || !cfg.apply_resize {
        None
    } else {
        Some(cfg.resize)
    };
    Ok(match levels {
        LevelsArg::Fpn => LevelsConfig {
            strides: cfg.strides.clone(),
            ranges: cfg.ranges()?,
            resize,
        },
        LevelsArg::P4 => LevelsConfig {
            resize,
            ..LevelsConfig::single_level_p4()
        },
    })
}

fn maybe_write<R: Report>(report: &R, out: Option<&Path>, format: FormatArg) -> Result<(), CliError> {
    if let Some(path) = out {
        write_report(report, path, format.as_format())?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

/// Published values for the canonical recall setups, with the tolerances
/// used by `--check`.
fn bpr_expectation(mode: BprMode, levels: LevelsArg, policy: LowQualityPolicy) -> Option<(f64, f64)> {
    match (mode, levels, policy) {
        (BprMode::Fcos, LevelsArg::Fpn, _) => Some((98.95, 0.5)),
        (BprMode::Fcos, LevelsArg::P4, _) => Some((96.34, 0.7)),
        (BprMode::Anchor, LevelsArg::Fpn, LowQualityPolicy::All) => Some((99.32, 0.5)),
        (BprMode::Anchor, LevelsArg::Fpn, LowQualityPolicy::Threshold(_)) => Some((91.94, 1.5)),
        (BprMode::Anchor, LevelsArg::Fpn, LowQualityPolicy::None) => Some((88.16, 2.0)),
        _ => None,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn bpr(
    cfg: &RunConfig,
    mode: BprMode,
    policy: Option<PolicyArg>,
    levels: LevelsArg,
    no_resize: bool,
    include_crowd: bool,
    check: bool,
    out: Option<&Path>,
    format: FormatArg,
) -> Result<(), CliError> {
    let dataset = load_dataset(cfg)?;
    let levels_cfg = levels_config(cfg, levels, no_resize)?;
    let include_crowd = include_crowd || cfg.include_crowd;

    let mut anchor_cfg = cfg.anchor_config();
    if let Some(policy) = policy {
        anchor_cfg.low_quality = match policy {
            PolicyArg::None => LowQualityPolicy::None,
            PolicyArg::Threshold => LowQualityPolicy::Threshold(cfg.anchor_low_quality_iou),
            PolicyArg::All => LowQualityPolicy::All,
        };
    }

    let report: BPRReport = match mode {
        BprMode::Fcos => bpr_fcos(&dataset, &levels_cfg, &cfg.assign_config(), include_crowd)?,
        BprMode::Anchor => bpr_anchor(&dataset, &levels_cfg, &anchor_cfg, include_crowd)?,
    };

    println!("method            w/FPN  low-quality       BPR(%)");
    let (method, low_quality) = match mode {
        BprMode::Fcos => ("fcos", "-".to_string()),
        BprMode::Anchor => (
            "retinanet",
            match anchor_cfg.low_quality {
                LowQualityPolicy::None => "not used".into(),
                LowQualityPolicy::Threshold(t) => format!(">= {t}"),
                LowQualityPolicy::All => "all".into(),
            },
        ),
    };
    println!(
        "{method:<17} {:<6} {low_quality:<17} {:.2}",
        if levels_cfg.is_fpn() { "yes" } else { "no" },
        report.bpr_percent()
    );
    println!("recalled {} of {}", report.recalled, report.total);

    maybe_write(&report, out, format)?;

    if check {
        let Some((want, tol)) = bpr_expectation(mode, levels, anchor_cfg.low_quality) else {
            return Err(CliError::config(
                "--check has no published value for this setup".into(),
            ));
        };
        let got = report.bpr_percent();
        if (got - want).abs() > tol {
            return Err(CliError::check(format!(
                "BPR {got:.2}% outside {want} ± {tol}"
            )));
        }
        println!("check passed: {got:.2} within {want} ± {tol}");
    }
    Ok(())
}

/// A sweep of ambiguity reports, written as one file.
struct AmbiguitySweep(Vec<AmbiguityReport>);

impl Report for AmbiguitySweep {
    fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(self.0.iter().map(|r| r.to_json()).collect())
    }

    fn csv_header(&self) -> String {
        self.0
            .first()
            .map(|r| r.csv_header())
            .unwrap_or_else(|| "center_sampling,fpn,bucket,percent".into())
    }

    fn csv_rows(&self) -> Vec<String> {
        self.0.iter().flat_map(|r| r.csv_rows()).collect()
    }
}

fn print_ambiguity_row(report: &AmbiguityReport, crowd_buckets: bool) {
    let cs = if report.center_sampling { "yes" } else { "no" };
    let fpn = if report.fpn { "yes" } else { "no" };
    if crowd_buckets {
        let [one, two, three, four_plus] = report.buckets_4();
        println!(
            "{cs:<13} {fpn:<5} {one:>7.2} {two:>7.2} {three:>7.2} {four_plus:>7.2}",
        );
    } else {
        let [one, two, three_plus] = report.buckets_3();
        println!("{cs:<13} {fpn:<5} {one:>7.2} {two:>7.2} {three_plus:>7.2}");
    }
}

#[allow(clippy::too_many_arguments)]
pub fn ambiguity(
    cfg: &RunConfig,
    center_sampling: Option<Toggle>,
    fpn: Option<Toggle>,
    sweep: bool,
    crowd_buckets: bool,
    no_resize: bool,
    include_crowd: bool,
    check: bool,
    out: Option<&Path>,
    format: FormatArg,
) -> Result<(), CliError> {
    let dataset = load_dataset(cfg)?;
    let include_crowd = include_crowd || cfg.include_crowd;

    let run_one = |with_sampling: bool, with_fpn: bool| -> Result<AmbiguityReport, CliError> {
        let levels_cfg = levels_config(
            cfg,
            if with_fpn { LevelsArg::Fpn } else { LevelsArg::P4 },
            no_resize,
        )?;
        let assign_cfg = AssignConfig {
            center_sampling: with_sampling,
            ..cfg.assign_config()
        };
        Ok(run_ambiguity(&dataset, &levels_cfg, &assign_cfg, include_crowd)?)
    };

    let reports = if sweep {
        vec![
            run_one(false, false)?,
            run_one(false, true)?,
            run_one(true, false)?,
            run_one(true, true)?,
        ]
    } else {
        vec![run_one(
            center_sampling.map_or(cfg.center_sampling, Toggle::as_bool),
            fpn.is_none_or(Toggle::as_bool),
        )?]
    };

    if crowd_buckets {
        println!("ctr. sampling  fpn        1       2       3     >=4   (% of positive locations)");
    } else {
        println!("ctr. sampling  fpn        1       2     >=3   (% of positive locations)");
    }
    for report in &reports {
        print_ambiguity_row(report, crowd_buckets);
    }

    if reports.len() == 1 {
        maybe_write(&reports[0], out, format)?;
    } else {
        maybe_write(&AmbiguitySweep(reports.clone()), out, format)?;
    }

    if check {
        if !sweep {
            return Err(CliError::config("--check requires --sweep".into()));
        }
        let expected: [[f64; 3]; 4] = [
            [76.60, 20.05, 3.35],
            [92.58, 6.97, 0.45],
            [96.52, 3.34, 0.14],
            [97.34, 2.59, 0.07],
        ];
        for (report, want) in reports.iter().zip(expected) {
            let got = report.buckets_3();
            for (g, w) in got.iter().zip(want) {
                if (g - w).abs() > 1.0 {
                    return Err(CliError::check(format!(
                        "ambiguity row (cs={}, fpn={}) {:.2}/{:.2}/{:.2} outside ±1.0 of {w}",
                        report.center_sampling, report.fpn, got[0], got[1], got[2]
                    )));
                }
            }
        }
        println!("check passed: all four rows within ±1.0 of the published ratios");
    }
    Ok(())
}

pub fn evaluate(
    cfg: &RunConfig,
    detections: Option<&Path>,
    out: Option<&Path>,
    format: FormatArg,
    pr_curve: Option<&Path>,
) -> Result<(), CliError> {
    let dataset = load_dataset(cfg)?;
    let det_path = detections
        .or(cfg.detections.as_deref())
        .ok_or_else(|| CliError::config("no detection file set (data.detections or --detections)".into()))?;
    let dets = load_detections(det_path)?;
    let report = run_evaluate(&dets, &dataset, cfg.ji_iou)?;

    println!("metric        value");
    for (name, value) in [
        ("AP", report.coco.ap),
        ("AP50", report.coco.ap50),
        ("AP75", report.coco.ap75),
        ("AP_S", report.coco.ap_small),
        ("AP_M", report.coco.ap_medium),
        ("AP_L", report.coco.ap_large),
        ("AR@1", report.coco.ar1),
        ("AR@10", report.coco.ar10),
        ("AR@100", report.coco.ar100),
        ("AR_S", report.coco.ar_small),
        ("AR_M", report.coco.ar_medium),
        ("AR_L", report.coco.ar_large),
        ("MR-2", report.mr2),
        ("JI", report.ji.ji),
    ] {
        println!("{name:<13} {}", fmt6(sig6(value)));
    }
    println!("JI threshold  {}", fmt6(report.ji.threshold));

    maybe_write(&report, out, format)?;
    if let Some(path) = pr_curve {
        write_report(&PrCurveReport(&report.coco.pr_curve), path, ReportFormat::Csv)?;
        println!("PR curve written to {}", path.display());
    }
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig, samples: usize, seed: u64, inject_flip: bool) -> Result<(), CliError> {
    if samples == 0 {
        println!("warning: --samples 0, nothing checked");
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loss_cfg = LossConfig {
        focal_alpha: cfg.loss.focal_alpha,
        focal_gamma: cfg.loss.focal_gamma,
        lambda: cfg.loss.lambda,
    };
    let h = 1e-5;
    let tol = 1e-4;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);

    let mut all_ok = true;
    let mut run = |name: &str, max_err: f64, failures: usize| {
        let ok = failures == 0;
        all_ok &= ok;
        println!(
            "{name:<12} {samples} samples  max rel err {max_err:.2e}  {}",
            if ok { "ok" } else { "FAILED" }
        );
    };

    let flip = if inject_flip { -1.0 } else { 1.0 };

    let mut max_err = 0.0f64;
    let mut failures = 0;
    for _ in 0..samples {
        let p = 0.01 + rng.gen::<f64>() * 0.98;
        let y = rng.gen::<bool>();
        let analytic = flip * focal(p, y, &loss_cfg).grad;
        let fd = (focal(p + h, y, &loss_cfg).value - focal(p - h, y, &loss_cfg).value) / (2.0 * h);
        let e = rel(analytic, fd);
        max_err = max_err.max(e);
        failures += usize::from(e >= tol);
    }
    run("focal", max_err, failures);

    let mut max_err = 0.0f64;
    let mut failures = 0;
    for _ in 0..samples {
        let o = 0.01 + rng.gen::<f64>() * 0.98;
        let c = rng.gen::<f64>();
        let analytic = bce(o, c).grad;
        let fd = (bce(o + h, c).value - bce(o - h, c).value) / (2.0 * h);
        let e = rel(analytic, fd);
        max_err = max_err.max(e);
        failures += usize::from(e >= tol);
    }
    run("bce", max_err, failures);

    let mut max_err = 0.0f64;
    let mut failures = 0;
    let mut done = 0;
    while done < samples {
        let mut component = || 0.05 + rng.gen::<f64>() * 9.95;
        let pred = fcos_core::assignment::RegTarget {
            left: component(),
            top: component(),
            right: component(),
            bottom: component(),
        };
        let target = fcos_core::assignment::RegTarget {
            left: component(),
            top: component(),
            right: component(),
            bottom: component(),
        };
        let near_kink = [
            (pred.left, target.left),
            (pred.top, target.top),
            (pred.right, target.right),
            (pred.bottom, target.bottom),
        ]
        .iter()
        .any(|(a, b)| (a - b).abs() < 1e-3);
        if near_kink {
            continue;
        }
        done += 1;
        let analytic = giou_loss(&pred, &target).grad;
        for (k, &a) in analytic.iter().enumerate() {
            let perturbed = |delta: f64| {
                let mut q = pred;
                match k {
                    0 => q.left += delta,
                    1 => q.top += delta,
                    2 => q.right += delta,
                    _ => q.bottom += delta,
                }
                giou_loss(&q, &target).value
            };
            let fd = (perturbed(h) - perturbed(-h)) / (2.0 * h);
            let e = rel(a, fd);
            max_err = max_err.max(e);
            failures += usize::from(e >= tol);
        }
    }
    run("giou_loss", max_err, failures);

    if all_ok {
        println!("all gradients match finite differences (rel err < {tol:e})");
        Ok(())
    } else {
        Err(CliError::check("gradient check failed".into()))
    }
}

pub fn synth(out_dir: &Path, scenes: usize, seed: u64, crowd: bool) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", out_dir.display())))?;
    let (dataset, detections) = generate(&SynthConfig {
        scenes,
        seed,
        crowd,
        ..SynthConfig::default()
    });
    let ann_path = out_dir.join("annotations.json");
    let det_path = out_dir.join("detections.json");
    write_annotations(&dataset, &ann_path)?;
    write_detections(&detections, &det_path)?;
    println!(
        "wrote {} scenes ({} boxes, {} detections) to {} and {}",
        scenes,
        dataset.total_annotations(),
        detections.values().map(Vec::len).sum::<usize>(),
        ann_path.display(),
        det_path.display()
    );
    Ok(())
}

pub fn assign_dump(cfg: &RunConfig, image_id: i64, out: Option<&Path>) -> Result<(), CliError> {
    let dataset = load_dataset(cfg)?;
    let image = dataset
        .images
        .iter()
        .find(|i| i.image_id == image_id)
        .ok_or_else(|| CliError::io(format!("image id {image_id} not in the annotation file")))?;

    let levels_cfg = levels_config(cfg, LevelsArg::Fpn, !cfg.apply_resize)?;
    let (annotations, levels) = levels_cfg
        .prepare(image)
        .map_err(|e| CliError::config(e.to_string()))?;
    let result = assign(&annotations, &levels, &cfg.assign_config());

    let mut text = String::from(
        "level,stride,grid_x,grid_y,image_x,image_y,candidate_count,slot,class_target,source,l,t,r,b,centerness\n",
    );
    for a in &result.per_location {
        let level = &levels[a.location.level_index];
        let prefix = format!(
            "{},{},{},{},{},{},{}",
            a.location.level_index,
            level.stride,
            a.location.grid_x,
            a.location.grid_y,
            a.location.image_x,
            a.location.image_y,
            a.candidate_count
        );
        if a.targets.is_empty() {
            text.push_str(&format!("{prefix},0,0,,,,,,\n"));
        } else {
            for (slot, t) in a.targets.iter().enumerate() {
                text.push_str(&format!(
                    "{prefix},{slot},{},{},{},{},{},{},{}\n",
                    t.class,
                    t.source,
                    fmt6(t.reg.left),
                    fmt6(t.reg.top),
                    fmt6(t.reg.right),
                    fmt6(t.reg.bottom),
                    fmt6(t.centerness)
                ));
            }
        }
    }

    match out {
        Some(path) => {
            std::fs::write(path, text)
                .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
            println!("assignment dump written to {}", path.display());
        }
        None => {
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| CliError::io(e.to_string()))?;
        }
    }
    Ok(())
}
