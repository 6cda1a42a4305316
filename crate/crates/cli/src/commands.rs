use std::fs;
use std::io::Write as _;
use std::path::Path;

use tinyppg::data::{
    bandpass_filter, decode_dataset, generate_synthetic, load_dataset, read_raw_dump, save_dataset,
    segment_and_normalize, FilterSpec, SyntheticConfig, DATASET_MAGIC,
};
use tinyppg::model::{load_model, save_model, ModelConfig, TinyPpg};
use tinyppg::prune::{apply_prune, check_ratio, compact, finetune};
use tinyppg::runtime::{infer_stream, plan_memory, StreamConfig};
use tinyppg::train::{evaluate, export_embeddings, split_subjects, train_with_progress, EpochLog, SplitSpec};
use tinyppg::{Error, LossConfig, SignalSegment, TrainConfig};

use crate::args::*;

pub type CmdResult = Result<(), Error>;

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let cfg = SyntheticConfig {
        n_segments: a.segments,
        seed: a.seed,
        artifact_rate: a.artifact_rate,
        n_subjects: a.subjects,
        ..SyntheticConfig::default()
    };
    let segs = generate_synthetic(&cfg)?;
    save_dataset(&segs, &a.out)?;
    eprintln!("wrote {} segments to {}", segs.len(), a.out.display());
    Ok(())
}

pub fn preprocess(a: PreprocessArgs) -> CmdResult {
    let spec = FilterSpec { low_hz: a.low_hz, high_hz: a.high_hz, order: a.order, zero_phase: !a.causal };
    let mut all = Vec::new();
    for (id, path) in &a.raw {
        let rec = read_raw_dump(path, *id)?;
        let filtered = bandpass_filter(&rec, &spec)?;
        let segs = segment_and_normalize(&filtered)?;
        eprintln!("subject {id}: {} samples -> {} segments", rec.len(), segs.len());
        all.extend(segs);
    }
    save_dataset(&all, &a.out)?;
    eprintln!("wrote {} segments to {}", all.len(), a.out.display());
    Ok(())
}

fn train_config(a: &TrainArgs, default_epochs: usize) -> Result<TrainConfig, Error> {
    let cfg = TrainConfig {
        batch_size: a.batch_size,
        lr0: a.lr,
        epochs: a.epochs.unwrap_or(default_epochs),
        lr_halving_period: a.lr_halving,
        seed: a.seed,
        loss: LossConfig {
            lambda: a.lambda,
            tau: a.tau,
            strategy: a.contrastive,
            bank_enabled: a.bank_size > 0,
            bank_capacity: a.bank_size,
            ..LossConfig::default()
        },
        l1_gamma_weight: a.l1_gamma,
        threshold: a.threshold,
        checkpoint_period: a.checkpoint_every,
        checkpoint_dir: a.checkpoint_dir.clone(),
    };
    cfg.validate()?;
    if cfg.checkpoint_period > 0 && cfg.checkpoint_dir.is_none() {
        return Err(Error::Config("--checkpoint-every needs --checkpoint-dir".into()));
    }
    Ok(cfg)
}

/// Training and validation sets from `--data` / `--val-data` / `--val-fraction`.
fn training_sets(a: &TrainArgs) -> Result<(Vec<SignalSegment>, Vec<SignalSegment>), Error> {
    let data = load_dataset(&a.data)?;
    if data.is_empty() {
        return Err(Error::Input(format!("{}: dataset has no segments", a.data.display())));
    }
    if let Some(v) = &a.val_data {
        return Ok((data, load_dataset(v)?));
    }
    if a.val_fraction == 0.0 {
        return Ok((data, Vec::new()));
    }
    let mut ids: Vec<u16> = data.iter().map(|s| s.subject_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let spec = SplitSpec { train_subject_ids: ids, test_subject_ids: Vec::new(), val_fraction: a.val_fraction, seed: a.seed };
    let s = split_subjects(&data, &spec)?;
    Ok((s.train, s.val))
}

fn progress(quiet: bool) -> impl FnMut(&EpochLog) {
    move |row: &EpochLog| {
        if !quiet {
            match row.val_dice {
                Some(d) => eprintln!("epoch {:>4}  lr {:.3e}  loss {:.6}  val_dice {d:.4}", row.epoch, row.lr, row.train_loss),
                None => eprintln!("epoch {:>4}  lr {:.3e}  loss {:.6}", row.epoch, row.lr, row.train_loss),
            }
        }
    }
}

fn finish_training(a: &TrainArgs, outcome: tinyppg::train::TrainOutcome, compact_out: bool) -> CmdResult {
    if let Some(log) = &a.log {
        write_text(log, &outcome.log.to_csv())?;
    }
    let model = if compact_out && outcome.model.prune_mask.is_some() { compact(&outcome.model)? } else { outcome.model };
    save_model(&model, &a.out)?;
    if let (Some(e), Some(d)) = (outcome.best_epoch, outcome.best_val_dice) {
        eprintln!("best validation DICE {d:.4} at epoch {e}");
    }
    eprintln!("saved {}", a.out.display());
    Ok(())
}

pub fn train(c: TrainCmd) -> CmdResult {
    let a = &c.train;
    let cfg = train_config(a, TrainConfig::default().epochs)?;
    let (train_set, val_set) = training_sets(a)?;
    let model_cfg = if cfg.loss.contrast_active() { ModelConfig::with_projection() } else { ModelConfig::default() };
    let model = TinyPpg::build(model_cfg, a.seed)?;
    let outcome = train_with_progress(model, &train_set, &val_set, &cfg, progress(a.quiet))?;
    finish_training(a, outcome, false)
}

pub fn finetune_cmd(c: FinetuneCmd) -> CmdResult {
    let a = &c.train;
    let cfg = train_config(a, 100)?;
    let model = load_model(&c.model)?;
    let (train_set, val_set) = training_sets(a)?;
    let outcome = finetune(model, &train_set, &val_set, &cfg, progress(a.quiet))?;
    finish_training(a, outcome, c.compact)
}

pub fn prune(a: PruneArgs) -> CmdResult {
    check_ratio(a.ratio)?;
    let model = load_model(&a.model)?;
    let before = model.count_parameters();
    let masked = apply_prune(&model, a.ratio)?;
    let out = if a.compact { compact(&masked)? } else { masked };
    let kept: usize = match &out.prune_mask {
        Some(m) => m.iter().flatten().filter(|&&k| k).count(),
        None => out.blocks.iter().map(|b| b.out_channels()).sum(),
    };
    let after = if a.compact { out.count_parameters() } else { compact(&out)?.count_parameters() };
    save_model(&out, &a.out)?;
    eprintln!("kept {kept} block channels; parameters {before} -> {after}");
    Ok(())
}

pub fn eval(a: EvalArgs) -> CmdResult {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(Error::Config(format!("threshold must be in [0, 1], got {}", a.threshold)));
    }
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.data)?;
    let report = evaluate(&model, &data, a.threshold)?;
    let c = &report.counts;
    println!("segments\t{}", data.len());
    println!("tp\t{}\nfp\t{}\nfn\t{}\ntn\t{}", c.true_pos, c.false_pos, c.false_neg, c.true_neg);
    println!("dice\t{:.6}", report.dice);
    if let Some(out) = &a.out {
        write_text(out, &report.to_text())?;
    }
    Ok(())
}

/// Raw float32 samples, or the concatenated samples of a TPPG dataset.
fn read_stream(path: &Path) -> Result<Vec<f32>, Error> {
    let bytes = fs::read(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    if bytes.starts_with(&DATASET_MAGIC) {
        let segs = decode_dataset(&bytes)?;
        return Ok(segs.into_iter().flat_map(|s| s.samples).collect());
    }
    if bytes.len() % 4 != 0 {
        return Err(Error::Input(format!(
            "{}: {} bytes is not a whole number of float32 samples",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn format_runs(start: usize, runs: &[(usize, usize)]) -> String {
    if runs.is_empty() {
        return "-".into();
    }
    runs.iter().map(|(o, l)| format!("{}+{l}", start + o)).collect::<Vec<_>>().join(",")
}

pub fn infer(a: InferArgs) -> CmdResult {
    let cfg = StreamConfig { window: a.window, hop: a.hop.unwrap_or(a.window), threshold: a.threshold };
    cfg.validate()?;
    let model = load_model(&a.model)?.without_head();
    let plan = plan_memory(&model)?;
    if let Some(budget) = a.budget_bytes {
        if !plan.fits(budget) {
            return Err(Error::Input(format!(
                "{}: arena needs {} bytes, budget is {budget}",
                a.model.display(),
                plan.arena_total_bytes
            )));
        }
    }
    let samples = read_stream(&a.data)?;
    let out = infer_stream(&model, &samples, &cfg)?;
    let mut text = String::from("window\tstart\tartifact_runs\n");
    for w in &out.windows {
        text.push_str(&format!("{}\t{}\t{}\n", w.index, w.start, format_runs(w.start, &w.artifact_runs())));
    }
    match &a.out {
        Some(p) => write_text(p, &text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(text.as_bytes());
        }
    }
    let s = &out.stats;
    eprintln!(
        "windows {}  mean_latency {:.6}s  max_latency {:.6}s  peak_bytes {}  arena_bytes {}",
        s.windows_processed, s.mean_latency, s.max_latency, s.peak_bytes, s.arena_bytes
    );
    Ok(())
}

pub fn export(a: ExportArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.data)?;
    let n = export_embeddings(&model, &data, &a.out, a.max_points, a.seed)?;
    eprintln!("wrote {n} points to {}", a.out.display());
    Ok(())
}

pub fn plan(a: PlanArgs) -> CmdResult {
    let model = load_model(&a.model)?.without_head();
    let report = plan_memory(&model)?.report(a.budget_bytes);
    match &a.out {
        Some(p) => write_text(p, &report),
        None => {
            print!("{report}");
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_are_absolute_start_plus_length() {
        assert_eq!(format_runs(960, &[]), "-");
        assert_eq!(format_runs(960, &[(0, 5), (100, 20)]), "960+5,1060+20");
    }
}
