use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use log::{info, warn};
use rayon::prelude::*;
use relpose_core::estimator::estimate;
use relpose_core::evaluation::{generate_pairs_where, score, EvaluationReport, PairRecord, SamplingMode};
use relpose_core::losses::{LossBreakdown, LossMode};
use relpose_core::rotations::Rotation;
use serde::Serialize;

use crate::config::{ConfigArgs, Settings};
use crate::error::{CliError, Result};
use crate::io;
use crate::manifest::Manifest;

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for report.json and report.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Pairs drawn per object.
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Pair sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 means one per logical core.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Largest in-plane-omitted angle between paired views, in degrees.
    #[arg(long)]
    pub max_overlap: Option<f64>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

impl EvaluateArgs {
    pub fn settings(&self) -> Result<Settings> {
        let mut s = self.config.resolve()?;
        let ev = &mut s.evaluation;
        if let Some(n) = self.pairs {
            ev.pairs = n;
        }
        if let Some(seed) = self.seed {
            ev.seed = seed;
        }
        if let Some(w) = self.workers {
            ev.workers = w;
        }
        if let Some(d) = self.max_overlap {
            ev.max_overlap_deg = d;
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ObjectSampling {
    pub name: String,
    pub sampling: SamplingMode,
    /// Qualifying ordered pairs the sample was drawn from.
    pub pool: usize,
    pub pairs: usize,
    pub seed: u64,
}

/// One row of the batch, successful or not.
#[derive(Debug, Clone, Serialize)]
pub struct PairOutcome {
    pub reference: String,
    pub query: String,
    pub error_deg: Option<f64>,
    pub initial_error_deg: Option<f64>,
    pub loss: Option<LossBreakdown>,
    pub prediction: Option<Rotation>,
    pub initial: Option<Rotation>,
    pub failure: Option<String>,
    #[serde(skip)]
    pub exit_code: Option<i32>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationOutput {
    pub config: Settings,
    pub mode: LossMode,
    pub objects: Vec<ObjectSampling>,
    pub pairs: Vec<PairOutcome>,
    pub failed: usize,
    /// Refined predictions of the successful pairs.
    pub report: Option<EvaluationReport>,
    /// The same pairs scored at the initialization winner.
    pub initialization: Option<EvaluationReport>,
}

struct Job {
    object: usize,
    reference: usize,
    query: usize,
    record: PairRecord,
}

fn sample_jobs(manifest: &Manifest, settings: &Settings) -> Result<(Vec<Job>, Vec<ObjectSampling>)> {
    let ev = &settings.evaluation;
    let mut jobs = Vec::new();
    let mut sampling = Vec::new();
    for (oi, o) in manifest.objects.iter().enumerate() {
        // frame indices of posed frames, and their poses
        let posed: Vec<usize> = (0..o.frames.len()).filter(|&i| o.frames[i].rotation.is_some()).collect();
        let poses: Vec<(String, Rotation)> = posed
            .iter()
            .map(|&i| (format!("{}/{}", o.name, o.frames[i].id), o.frames[i].rotation.unwrap()))
            .collect();
        if poses.len() < 2 {
            return Err(CliError::Usage(format!(
                "object {} has {} frames with ground truth, need at least 2",
                o.name,
                poses.len()
            )));
        }
        let seed = ev.seed.wrapping_add(oi as u64);
        let set = generate_pairs_where(&poses, ev.pairs, seed, ev.max_overlap_deg, |i, _| {
            o.frames[posed[i]].depth.is_some()
        })
        .map_err(|e| CliError::Usage(format!("object {}: {e}", o.name)))?;
        let index_of = |id: &str| posed[poses.iter().position(|(n, _)| n == id).expect("sampled from poses")];
        for record in set.pairs {
            jobs.push(Job {
                object: oi,
                reference: index_of(&record.reference),
                query: index_of(&record.query),
                record,
            });
        }
        sampling.push(ObjectSampling {
            name: o.name.clone(),
            sampling: set.mode,
            pool: set.pool,
            pairs: ev.pairs,
            seed,
        });
    }
    Ok((jobs, sampling))
}

fn run_job(manifest: &Manifest, settings: &Settings, job: &Job) -> PairOutcome {
    let o = &manifest.objects[job.object];
    let result = (|| {
        let reference = o.load_reference(&o.frames[job.reference])?;
        let query = o.load_query(&o.frames[job.query])?;
        Ok::<_, CliError>(estimate(&reference, &query, &settings.estimator)?)
    })();
    let mut out = PairOutcome {
        reference: job.record.reference.clone(),
        query: job.record.query.clone(),
        error_deg: None,
        initial_error_deg: None,
        loss: None,
        prediction: None,
        initial: None,
        failure: None,
        exit_code: None,
    };
    match result {
        Ok(est) => {
            let refined = job.record.clone().with_prediction(est.rotation);
            let init = job.record.clone().with_prediction(est.initial.rotation);
            out.error_deg = refined.error_deg();
            out.initial_error_deg = init.error_deg();
            out.loss = Some(est.loss);
            out.prediction = Some(est.rotation);
            out.initial = Some(est.initial.rotation);
        }
        Err(e) => {
            warn!("{}: {e}", job.record.id());
            out.failure = Some(e.to_string());
            out.exit_code = Some(e.exit_code());
        }
    }
    out
}

/// Samples pairs, estimates each one on a bounded pool and scores the
/// successes. Failed pairs are kept in the output and excluded from scores.
pub fn run_evaluation(manifest: &Manifest, settings: &Settings) -> Result<EvaluationOutput> {
    let (jobs, objects) = sample_jobs(manifest, settings)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.evaluation.workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    info!("{} pairs on {} workers", jobs.len(), pool.current_num_threads());
    let start = Instant::now();
    // collect() keeps job order whatever the scheduling
    let pairs: Vec<PairOutcome> = pool.install(|| jobs.par_iter().map(|j| run_job(manifest, settings, j)).collect());
    info!("evaluation took {:.1} s", start.elapsed().as_secs_f64());

    let mut refined = Vec::new();
    let mut initial = Vec::new();
    for (job, p) in jobs.iter().zip(&pairs) {
        if let (Some(pred), Some(init)) = (p.prediction, p.initial) {
            refined.push(job.record.clone().with_prediction(pred));
            initial.push(job.record.clone().with_prediction(init));
        }
    }
    let failed = pairs.len() - refined.len();
    let (report, initialization) = if refined.is_empty() {
        (None, None)
    } else {
        (Some(score(&refined)?), Some(score(&initial)?))
    };
    Ok(EvaluationOutput {
        mode: settings.estimator.mode,
        config: settings.clone(),
        objects,
        pairs,
        failed,
        report,
        initialization,
    })
}

pub fn report_paths(out: &Path) -> (PathBuf, PathBuf) {
    (out.join("report.json"), out.join("report.csv"))
}

/// Writes report.json and report.csv from one thread, after the batch.
pub fn write_reports(out_dir: &Path, output: &EvaluationOutput) -> Result<()> {
    io::create_dir(out_dir)?;
    let (json, csv) = report_paths(out_dir);
    let text = serde_json::to_string_pretty(output).expect("evaluation output always serializes");
    io::write_text(&json, &(text + "\n"))?;
    let table = match &output.report {
        Some(r) => r.to_csv()?,
        None => String::new(),
    };
    io::write_text(&csv, &table)
}

pub fn summary(output: &EvaluationOutput) -> String {
    let mut s = format!("mode: {}\n", output.mode);
    match (&output.report, &output.initialization) {
        (Some(r), Some(i)) => {
            s.push_str(&format!("median error: {:.3} deg\n", r.median_error_deg()));
            if !output.config.estimator.init_only {
                s.push_str(&format!("median error at initialization: {:.3} deg\n", i.median_error_deg()));
            }
            s.push_str(&r.summary_table());
        }
        _ => s.push_str("no pair succeeded\n"),
    }
    if output.failed > 0 {
        s.push_str(&format!("{} of {} pairs failed:\n", output.failed, output.pairs.len()));
        for p in output.pairs.iter().filter(|p| p.failure.is_some()) {
            s.push_str(&format!("  {} -> {}: {}\n", p.reference, p.query, p.failure.as_deref().unwrap_or("")));
        }
    }
    s
}

/// Exit status of a finished batch: success if anything was scored,
/// otherwise the code of the first failure.
pub fn exit_code(output: &EvaluationOutput) -> i32 {
    if output.report.is_some() {
        return 0;
    }
    output
        .pairs
        .iter()
        .find_map(|p| p.exit_code)
        .unwrap_or(crate::error::EXIT_OTHER)
}

pub fn evaluate(args: &EvaluateArgs) -> Result<EvaluationOutput> {
    let settings = args.settings()?;
    let manifest = Manifest::load(&args.manifest)?;
    let output = run_evaluation(&manifest, &settings)?;
    write_reports(&args.out, &output)?;
    Ok(output)
}
