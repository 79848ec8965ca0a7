use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use devimplicit::checkpoint::Checkpoint;
use devimplicit::eval::{evaluate_detailed, export_histogram, sample_surface, EvalReport, HistogramScale};
use devimplicit::mesher::{load_mesh, marching_cubes, mesh_stats, save_mesh, TriangleMesh};
use devimplicit::mlp::MlpParams;
use devimplicit::regularizers::{RegularizerConfig, RegularizerKind};
use devimplicit::sampling::{
    add_noise, load_cloud, make_samples, normalize_unit_box, save_cloud, NormalizationTransform, PointCloud,
};
use devimplicit::trainer::{finetune_stage_with, fit_stage_with, save_history, LossReport};
use devimplicit::{Error, Point3, Result};

use crate::config::RunConfig;

fn progress(stage: &'static str) -> impl FnMut(&LossReport) {
    move |r| {
        if r.epoch % 10 == 0 {
            eprintln!(
                "{stage} epoch {:>5}  data {:.6}  reg {:.6}  total {:.6}",
                r.epoch, r.data_loss, r.reg_loss, r.total
            );
        }
    }
}

fn write_json<S: serde::Serialize>(value: &S, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json { path: path.into(), source: e })?;
    fs::write(path, text + "\n").map_err(|e| Error::Io { path: path.into(), source: e })
}

/// The configured cloud in the frame a network is trained in.
fn training_cloud(cfg: &RunConfig, transform: Option<Option<&NormalizationTransform>>) -> Result<(PointCloud, Option<NormalizationTransform>)> {
    let raw = load_cloud(cfg.input()?)?;
    match transform {
        // fresh fit: normalization decided by the config
        None if cfg.normalize => {
            let (pc, t) = normalize_unit_box(&raw)?;
            Ok((pc, Some(t)))
        }
        None => Ok((raw, None)),
        // existing checkpoint: reuse its frame
        Some(Some(t)) => {
            let pts = raw.points.iter().map(|&p| t.apply(p)).collect();
            Ok((PointCloud::new(pts, raw.normals)?, Some(*t)))
        }
        Some(None) => Ok((raw, None)),
    }
}

fn fit(cfg: &RunConfig) -> Result<Checkpoint<f64>> {
    let (pc, transform) = training_cloud(cfg, None)?;
    let samples = make_samples(&pc, &cfg.sampling)?;
    let init = MlpParams::<f64>::init(&cfg.network)?;
    let (params, history) = fit_stage_with(&init, &samples, &cfg.training, progress("fit"))?;
    let dir = cfg.output_dir()?;
    save_history(&history, dir.join("fit_history.csv"))?;
    if let Some(last) = history.last() {
        eprintln!("fit: {} epochs, data loss {:.6}", history.len(), last.data_loss);
    }
    Ok(Checkpoint::new(params, transform))
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<PathBuf> {
    let ck = fit(cfg)?;
    let path = cfg.output_dir()?.join("fit.json");
    ck.save(&path)?;
    eprintln!("wrote {}", path.display());
    Ok(path)
}

fn finetune(cfg: &RunConfig, base: &Checkpoint<f64>, reg: RegularizerConfig, history: &Path) -> Result<Checkpoint<f64>> {
    let (pc, transform) = training_cloud(cfg, Some(base.transform.as_ref()))?;
    let samples = make_samples(&pc, &cfg.sampling)?;
    let mut tc = cfg.training.clone();
    tc.reg = Some(reg);
    let (params, h) = finetune_stage_with(&base.params, &samples, &pc, &tc, progress("finetune"))?;
    save_history(&h, history)?;
    Ok(Checkpoint::new(params, transform))
}

pub fn cmd_finetune(cfg: &RunConfig, checkpoint: &Path) -> Result<PathBuf> {
    let reg = cfg.regularizer()?;
    let base = Checkpoint::<f64>::load(checkpoint)?;
    let dir = cfg.output_dir()?;
    let ck = finetune(cfg, &base, reg, &dir.join("finetune_history.csv"))?;
    let path = dir.join("finetune.json");
    ck.save(&path)?;
    eprintln!("wrote {}", path.display());
    Ok(path)
}

fn extract_field_frame(cfg: &RunConfig, ck: &Checkpoint<f64>) -> Result<TriangleMesh> {
    marching_cubes(&ck.params, &cfg.meshing)
}

pub fn cmd_extract(cfg: &RunConfig, checkpoint: &Path, output: Option<&Path>) -> Result<PathBuf> {
    let ck = Checkpoint::<f64>::load(checkpoint)?;
    let mesh = extract_field_frame(cfg, &ck)?;
    let mesh = match &ck.transform {
        Some(t) => mesh.map_vertices(|p| t.invert(p)),
        None => mesh,
    };
    if mesh.is_empty() {
        eprintln!("warning: the field has no zero crossing inside the meshing bounds; writing an empty mesh");
    }
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => cfg.output_dir()?.join("mesh.obj"),
    };
    save_mesh(&mesh, &path)?;
    let stats = mesh_stats(&mesh);
    println!("{}", serde_json::to_string(&stats).expect("plain struct"));
    eprintln!("wrote {}", path.display());
    Ok(path)
}

/// Points of a reference surface: sampled from a mesh, or a cloud's points.
fn reference_points(path: &Path, cfg: &RunConfig) -> Result<Vec<Point3>> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if ext == "obj" || ext == "ply" {
        let mesh = load_mesh(path)?;
        if !mesh.triangles.is_empty() {
            return sample_surface(&mesh, cfg.eval.samples, cfg.eval.seed.wrapping_add(2));
        }
        if !mesh.vertices.is_empty() {
            return Ok(mesh.vertices);
        }
    }
    Ok(load_cloud(path)?.points)
}

fn score(cfg: &RunConfig, ck: &Checkpoint<f64>, reference: &[Point3]) -> Result<(EvalReport, Vec<f64>)> {
    let mesh = extract_field_frame(cfg, ck)?;
    if mesh.is_empty() {
        return Err(Error::Degenerate("the extracted surface is empty".into()));
    }
    let (report, stats) = evaluate_detailed(&ck.params, &mesh, reference, ck.transform.as_ref(), &cfg.eval)?;
    Ok((report, stats.k))
}

pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    reference: Option<&Path>,
    output: Option<&Path>,
    histogram: Option<&Path>,
    bins: usize,
) -> Result<EvalReport> {
    let ck = Checkpoint::<f64>::load(checkpoint)?;
    let ref_path = match reference {
        Some(p) => p,
        None => cfg.reference()?,
    };
    let reference = reference_points(ref_path, cfg)?;
    let (report, k) = score(cfg, &ck, &reference)?;
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => cfg.output_dir()?.join("report.json"),
    };
    report.save_json(&path)?;
    if let Some(h) = histogram {
        export_histogram(&k, bins, HistogramScale::Log, h)?;
    }
    println!("{}", serde_json::to_string(&report).expect("plain struct"));
    Ok(report)
}

/// One row of the sweep table.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub lambda: f64,
    pub outcome: std::result::Result<EvalReport, String>,
}

fn sweep_one(cfg: &RunConfig, base: &Checkpoint<f64>, reference: &[Point3], index: usize, lambda: f64) -> Result<EvalReport> {
    let mut reg = cfg.training.reg.unwrap_or(RegularizerConfig::new(RegularizerKind::Hdet, 0.0));
    reg.lambda = lambda;
    reg.validate()?;
    let dir = cfg.output_dir()?;
    let stem = format!("sweep_{index}_lambda_{lambda}");
    let ck = finetune(cfg, base, reg, &dir.join(format!("{stem}_history.csv")))?;
    ck.save(dir.join(format!("{stem}.json")))?;
    let (report, _) = score(cfg, &ck, reference)?;
    report.save_json(dir.join(format!("{stem}_report.json")))?;
    Ok(report)
}

fn csv_field(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("lambda,median_K,mean_K,median_Kmin,chamfer,status\n");
    for r in rows {
        match &r.outcome {
            Ok(e) => {
                let _ = writeln!(out, "{},{},{},{},{},ok", r.lambda, e.median_k, e.mean_k, e.median_k_min, e.chamfer_mean);
            }
            Err(msg) => {
                let _ = writeln!(out, "{},,,,,{}", r.lambda, csv_field(&format!("error: {msg}")));
            }
        }
    }
    out
}

pub fn cmd_sweep(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    lambdas: &[f64],
    output: Option<&Path>,
    parallel: bool,
) -> Result<Vec<SweepRow>> {
    let base = match checkpoint {
        Some(p) => Checkpoint::<f64>::load(p)?,
        None => {
            let path = cmd_fit(cfg)?;
            Checkpoint::<f64>::load(path)?
        }
    };
    let reference = reference_points(cfg.reference()?, cfg)?;
    let run = |(i, &lambda): (usize, &f64)| SweepRow {
        lambda,
        outcome: sweep_one(cfg, &base, &reference, i, lambda).map_err(|e| {
            eprintln!("sweep: lambda {lambda} failed: {e}");
            e.to_string()
        }),
    };
    let rows: Vec<SweepRow> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = lambdas.iter().enumerate().map(|item| s.spawn(move || run(item))).collect();
            handles
                .into_iter()
                .zip(lambdas)
                .map(|(h, &lambda)| {
                    h.join().unwrap_or_else(|_| SweepRow { lambda, outcome: Err("worker panicked".into()) })
                })
                .collect()
        })
    } else {
        lambdas.iter().enumerate().map(run).collect()
    };
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => cfg.output_dir()?.join("sweep.csv"),
    };
    fs::write(&path, sweep_table(&rows)).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    eprintln!("wrote {}", path.display());
    Ok(rows)
}

#[derive(serde::Serialize)]
struct NoiseReport {
    fraction: f64,
    fit: EvalReport,
    finetune: Option<EvalReport>,
}

pub fn cmd_noise(cfg: &RunConfig, fraction: f64) -> Result<()> {
    let dir = cfg.output_dir()?;
    let clean_path = cfg.reference()?.to_path_buf();
    let clean = load_cloud(cfg.input()?)?;
    let noisy = add_noise(&clean, fraction, cfg.sampling.seed)?;
    let noisy_path = dir.join("noisy.xyz");
    save_cloud(&noisy, &noisy_path)?;
    let mut noisy_cfg = cfg.clone();
    noisy_cfg.input = Some(noisy_path);

    let fitted = fit(&noisy_cfg)?;
    fitted.save(dir.join("noise_fit.json"))?;
    let reference = reference_points(&clean_path, cfg)?;
    let (fit_report, _) = score(cfg, &fitted, &reference)?;
    let finetune = match cfg.training.reg {
        Some(reg) => {
            let ck = finetune(&noisy_cfg, &fitted, reg, &dir.join("noise_finetune_history.csv"))?;
            ck.save(dir.join("noise_finetune.json"))?;
            Some(score(cfg, &ck, &reference)?.0)
        }
        None => None,
    };
    let report = NoiseReport { fraction, fit: fit_report, finetune };
    let path = dir.join("noise_report.json");
    write_json(&report, &path)?;
    println!("{}", serde_json::to_string(&report).expect("plain struct"));
    Ok(())
}
