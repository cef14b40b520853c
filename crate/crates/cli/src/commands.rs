use std::cell::Cell;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use pointalign::data::{generate_dataset, Dataset};
use pointalign::model::{load_checkpoint, save_checkpoint, Checkpoint};
use pointalign::parallel::Execution;
use pointalign::train::{
    evaluate, MetricsReport, TrainMode, TrainState, Trainer, METRICS_CSV_HEADER,
};
use pointalign::Error;
use serde::Serialize;

use crate::config::{row_name, Component, ExperimentConfig};
use crate::GlobalArgs;

type Result<T> = std::result::Result<T, Error>;

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory. Defaults to `<out>/data`, generated there from
    /// the [data] section when missing.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Continue from `<out>/last.ckpt`.
    #[arg(long)]
    resume: bool,
    /// Stop once this many epochs are complete (the run can be resumed).
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoints to score, one table row each.
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Score the training split instead of the validation split.
    #[arg(long)]
    train_split: bool,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Overrides `ablation.seeds`.
    #[arg(long)]
    seeds: Option<usize>,
}

fn data_dir(cfg: &ExperimentConfig, arg: &Option<PathBuf>) -> PathBuf {
    arg.clone().unwrap_or_else(|| cfg.output.dir.join("data"))
}

pub fn gen_data(g: &GlobalArgs) -> Result<()> {
    let cfg = g.resolve()?;
    let ds = generate_dataset(&cfg.data, cfg.train.seed, g.execution())?;
    ds.save(&cfg.output.dir)?;
    let hist = ds.class_histogram(&ds.train);
    println!(
        "wrote {} train + {} val scenes to {}",
        ds.train.len(),
        ds.val.len(),
        cfg.output.dir.display()
    );
    for (name, n) in ds.catalog.names().iter().zip(hist) {
        println!("  {name:<14} {n}");
    }
    Ok(())
}

fn load_or_generate(cfg: &ExperimentConfig, dir: &Path, exec: Execution) -> Result<Dataset> {
    if dir.join("catalog.txt").exists() {
        return Dataset::load(dir);
    }
    log::info!("generating dataset into {}", dir.display());
    let ds = generate_dataset(&cfg.data, cfg.train.seed, exec)?;
    ds.save(dir)?;
    Ok(ds)
}

#[derive(Serialize)]
struct Scores {
    miou_s: Option<f64>,
    miou_u: Option<f64>,
    miou_all: Option<f64>,
    hmiou: Option<f64>,
    per_class: Vec<(String, Option<f64>)>,
}

impl Scores {
    fn new(m: &MetricsReport, names: &[String]) -> Self {
        Self {
            miou_s: m.miou_s,
            miou_u: m.miou_u,
            miou_all: m.miou_all,
            hmiou: m.hmiou,
            per_class: names
                .iter()
                .cloned()
                .zip(m.iou.iter().map(|v| v.map(|x| 100.0 * x)))
                .collect(),
        }
    }
}

#[derive(Serialize)]
struct Summary {
    mode: TrainMode,
    seed: u64,
    epochs: usize,
    stage1_epochs: usize,
    num_params: usize,
    seen_label_reads: usize,
    stage1: Option<Scores>,
    #[serde(rename = "final")]
    last: Scores,
}

/// Writes via a sibling temp file so an interrupted write never leaves a
/// truncated checkpoint behind.
fn save_atomic(ck: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    save_checkpoint(ck, &tmp)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Drops metric rows past `epoch` so a resumed run appends where the
/// checkpoint left off.
fn truncate_metrics(path: &Path, epoch: usize) -> Result<()> {
    let text = fs::read_to_string(path)?;
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0
            || line
                .split(',')
                .next()
                .and_then(|e| e.parse::<usize>().ok())
                .is_some_and(|e| e <= epoch);
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn train(g: &GlobalArgs, a: &TrainArgs) -> Result<()> {
    let cfg = g.resolve()?;
    let exec = g.execution();
    let out = cfg.output.dir.clone();
    fs::create_dir_all(&out)?;
    let dataset = load_or_generate(&cfg, &data_dir(&cfg, &a.data), exec)?;
    let trainer = Trainer::new(&dataset, cfg.train.clone(), exec)?;
    let tc = trainer.config();
    let (s1, s2) = tc.stage_epochs();

    let last = out.join("last.ckpt");
    let stage1 = out.join("stage1.ckpt");
    let metrics = out.join("metrics.csv");
    let mut boundary = None;
    let mut state = if a.resume && last.exists() {
        let state = TrainState::from_checkpoint(load_checkpoint(&last)?, tc);
        if state.epoch > s1 && !tc.regenerate_labels {
            boundary = Some(load_checkpoint(&stage1)?.encoder);
        }
        truncate_metrics(&metrics, state.epoch)?;
        log::info!("resuming after epoch {}", state.epoch);
        state
    } else {
        fs::write(&metrics, format!("{METRICS_CSV_HEADER}\n"))?;
        fs::write(
            out.join("config.toml"),
            toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?,
        )?;
        trainer.init_state()?
    };

    let stopped = Cell::new(false);
    let result = trainer.run(&mut state, boundary.as_ref(), |st, rec| {
        let mut f = OpenOptions::new().append(true).open(&metrics)?;
        writeln!(f, "{}", rec.csv_row())?;
        let ck = st.to_checkpoint(rec.stage);
        save_atomic(&ck, &last)?;
        if rec.epoch == s1 {
            save_atomic(&ck, &stage1)?;
        }
        if rec.epoch == s1 + s2 {
            save_atomic(&ck, &out.join("final.ckpt"))?;
        }
        if a.stop_after.is_some_and(|n| rec.epoch >= n) && rec.epoch < s1 + s2 {
            stopped.set(true);
            return Err(Error::Contract(format!(
                "stopped after epoch {}",
                rec.epoch
            )));
        }
        Ok(())
    });
    match result {
        Err(_) if stopped.get() => {
            println!(
                "stopped after epoch {}; continue with --resume",
                state.epoch
            );
            return Ok(());
        }
        r => r?,
    };

    let names = trainer.catalog().names();
    let fin = trainer.evaluate(&state.encoder)?;
    let first = if s2 > 0 {
        Some(trainer.evaluate(&load_checkpoint(&stage1)?.encoder)?)
    } else {
        None
    };
    println!("{}", MetricsReport::table_header());
    if let Some(m) = &first {
        println!("{}", m.table("stage 1"));
    }
    println!("{}", fin.table("final"));
    let summary = Summary {
        mode: tc.mode,
        seed: tc.seed,
        epochs: s1 + s2,
        stage1_epochs: s1,
        num_params: state.encoder.num_params(),
        seen_label_reads: trainer.gt_reads(),
        stage1: first.as_ref().map(|m| Scores::new(m, names)),
        last: Scores::new(&fin, names),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(out.join("summary.json"), json + "\n")?;
    Ok(())
}

pub fn eval(g: &GlobalArgs, a: &EvalArgs) -> Result<()> {
    let cfg = g.resolve()?;
    let dataset = Dataset::load(data_dir(&cfg, &a.data))?;
    let catalog = match cfg.train.mode {
        TrainMode::AnnotationFree => dataset.catalog.annotation_free(),
        _ => dataset.catalog.clone(),
    };
    let allowed = match cfg.train.mode {
        TrainMode::SeenOnly => catalog.seen().to_vec(),
        _ => catalog.all(),
    };
    let scenes = if a.train_split {
        &dataset.train
    } else {
        &dataset.val
    };
    println!("{}", MetricsReport::table_header());
    for path in &a.checkpoints {
        let ck = load_checkpoint(path)?;
        let m = evaluate(
            &ck.encoder,
            scenes,
            &dataset.embeddings,
            &catalog,
            &allowed,
            g.execution(),
        )?;
        let title = path
            .file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        println!("{}", m.table(&title));
    }
    Ok(())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn ablate(g: &GlobalArgs, a: &AblateArgs) -> Result<()> {
    let cfg = g.resolve()?;
    let exec = g.execution();
    let seeds = a.seeds.unwrap_or(cfg.ablation.seeds);
    if seeds == 0 {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let out = cfg.output.dir.clone();
    fs::create_dir_all(&out)?;
    let (s1, _) = cfg.train.stage_epochs();

    // rows[combo][seed] = [mIoU-S, mIoU-U, mIoU-All, hmIoU]
    let mut rows = vec![Vec::new(); cfg.ablation.grid.len()];
    let mut runs = String::from("combo,seed,miou_s,miou_u,miou_all,hmiou\n");
    for k in 0..seeds as u64 {
        let seed = cfg.train.seed + k;
        let dataset = generate_dataset(&cfg.data, seed, exec)?;
        for (ci, combo) in cfg.ablation.grid.iter().enumerate() {
            let mut tc = cfg.train.clone();
            tc.seed = seed;
            tc.epochs = s1;
            tc.stage1_epochs = Some(s1);
            tc.eval_every_epoch = false;
            tc.mcfa.class_loss = combo.contains(&Component::Class);
            tc.mcfa.patch_loss = combo.contains(&Component::Patch);
            let trainer = Trainer::new(&dataset, tc, exec)?;
            let mut state = trainer.init_state()?;
            trainer.run_stage1(&mut state, |_, _| Ok(()))?;
            let m = trainer.evaluate(&state.encoder)?;
            let vals = [m.miou_s, m.miou_u, m.miou_all, m.hmiou].map(|v| v.unwrap_or(f64::NAN));
            log::info!("{} seed {seed}: hmIoU {:.2}", row_name(combo), vals[3]);
            runs.push_str(&format!(
                "{},{seed},{:.4},{:.4},{:.4},{:.4}\n",
                row_name(combo),
                vals[0],
                vals[1],
                vals[2],
                vals[3]
            ));
            rows[ci].push(vals);
        }
    }
    fs::write(out.join("ablation_runs.csv"), runs)?;

    let mut csv = String::from(
        "combo,seeds,miou_s_mean,miou_s_std,miou_u_mean,miou_u_std,miou_all_mean,miou_all_std,hmiou_mean,hmiou_std\n",
    );
    println!(
        "{:<12} {:>14} {:>14} {:>14} {:>14}",
        "", "mIoU-S", "mIoU-U", "mIoU-All", "hmIoU"
    );
    for (combo, vals) in cfg.ablation.grid.iter().zip(&rows) {
        let stats: Vec<(f64, f64)> = (0..4)
            .map(|j| mean_std(&vals.iter().map(|v| v[j]).collect::<Vec<_>>()))
            .collect();
        csv.push_str(&format!("{},{seeds}", row_name(combo)));
        let mut line = format!("{:<12}", row_name(combo));
        for (m, s) in &stats {
            csv.push_str(&format!(",{m:.4},{s:.4}"));
            line.push_str(&format!(" {:>14}", format!("{m:.2} ± {s:.2}")));
        }
        csv.push('\n');
        println!("{line}");
    }
    fs::write(out.join("ablation.csv"), csv)?;
    Ok(())
}
