use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use emonext::data::{eval_batches, parse_csv, read_pgm, Sample, Split, IMAGE_SIDE};
use emonext::gradcheck::{format_table, run_checks};
use emonext::model::Model;
use emonext::train::{
    evaluate_state, load_checkpoint, load_checkpoint_for, train as run_training, DataSplits, TrainConfig, TrainState,
};
use emonext::{Error, ModelConfig, Preset, StreamRng, CLASS_NAMES};
use emonext_tensor::no_grad;

use crate::error::{CliError, Result};
use crate::{EvalArgs, GradcheckArgs, ModelArgs, PredictArgs, TrainArgs};

/// Test hook: `op` or `op:factor` scales that op's backward output so the
/// gradient checker has something to catch.
const CORRUPT_ENV: &str = "EMONEXT_TEST_CORRUPT_BACKWARD";

fn model_config(args: &ModelArgs) -> Result<Option<ModelConfig>> {
    let cfg = match (&args.preset, &args.config_file) {
        (Some(p), _) => p.config(),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        (None, None) => return Ok(None),
    };
    cfg.validate()?;
    Ok(Some(cfg))
}

fn open_checkpoint(path: &Path, model: &ModelArgs) -> Result<TrainState> {
    Ok(match model_config(model)? {
        Some(cfg) => load_checkpoint_for(path, &cfg)?,
        None => load_checkpoint(path)?,
    })
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = model_config(&a.model)?.unwrap_or_else(|| Preset::Micro.config());
    if let Some(lambda) = a.lambda {
        cfg.lambda = lambda;
        cfg.validate()?;
    }
    let (samples, summary) = parse_csv(&a.data)?;
    let data = DataSplits::from_samples(&samples)?;
    eprintln!(
        "{} rows: {} train, validating on {} {} rows",
        summary.total(),
        data.train.len(),
        data.val.len(),
        data.val_split
    );

    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
        ..Default::default()
    };
    let model = Model::build(cfg, &StreamRng::new(a.seed))?;
    let out = run_training(model, &data, &tc, Some(a.out.clone()))?;
    for m in &out.history {
        eprintln!(
            "epoch {:>3}  loss {:.4} (ce {:.4}, sa {:.3e})  train_acc {:.4}  val_acc {:.4}",
            m.epoch, m.loss_total, m.loss_ce, m.loss_sa, m.train_acc, m.val_acc
        );
    }
    let last = out.history.last().map_or(0.0, |m| m.val_acc);
    println!("final validation accuracy: {last}");
    println!("best validation accuracy: {}", out.best_val_acc);
    println!("checkpoints and metrics in {}", a.out.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let state = open_checkpoint(&a.checkpoint, &a.model)?;
    let split = match a.split {
        Some(s) => Split::from(s),
        None => state.meta.val_split.parse().map_err(Error::Format)?,
    };
    let (samples, _) = parse_csv(&a.data)?;
    let rows: Vec<Sample> = samples.into_iter().filter(|s| s.split == split).collect();
    if rows.is_empty() {
        return Err(Error::data(format!("{} has no {split} rows", a.data.display())).into());
    }
    if a.batch_size == 0 {
        return Err(CliError::Usage("--batch-size must be at least 1".into()));
    }
    let cm = evaluate_state(&state, &rows, a.batch_size)?;

    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let path = a.out.join(format!("confusion_{split}.csv"));
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    cm.write_csv(BufWriter::new(file)).map_err(|e| Error::io(&path, e))?;

    println!("split: {split} ({} rows)", rows.len());
    println!("accuracy: {}", cm.accuracy());
    println!("confusion matrix: {}", path.display());
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let img = read_pgm(&a.image)?;
    if (img.width, img.height) != (IMAGE_SIDE, IMAGE_SIDE) {
        return Err(Error::data(format!(
            "{}: expected a {IMAGE_SIDE}×{IMAGE_SIDE} image, got {}×{}",
            a.image.display(),
            img.width,
            img.height
        ))
        .into());
    }
    let state = open_checkpoint(&a.checkpoint, &a.model)?;
    let config = state.meta.config.clone();
    let model = Model::from_params(config.clone(), state.eval_params().clone())?;
    // same resize and normalization as evaluation
    let sample = Sample {
        image: img.pixels,
        label: 0,
        split: Split::Training,
    };
    let batch = eval_batches(std::slice::from_ref(&sample), 1, config.input_size)?
        .next()
        .ok_or_else(|| Error::data("empty batch"))?;
    let pred = no_grad(|| model.predict(&batch.images))?.remove(0);
    println!("{}", CLASS_NAMES[pred.class]);
    for (name, p) in CLASS_NAMES.iter().zip(&pred.probabilities) {
        println!("{name:<9} {p:.4}");
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    if let Ok(spec) = std::env::var(CORRUPT_ENV) {
        let (op, factor) = match spec.split_once(':') {
            Some((op, f)) => (op, f.parse().map_err(|_| CliError::Usage(format!("{CORRUPT_ENV}: bad factor `{f}`")))?),
            None => (spec.as_str(), 2.0),
        };
        eprintln!("warning: backward of `{op}` scaled by {factor}");
        emonext_tensor::testing::corrupt_backward(Some((op, factor)));
    }
    let rows = run_checks(a.op.as_deref())?;
    print!("{}", format_table(&rows));
    let failed = rows.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(CliError::GradcheckFailed(failed));
    }
    Ok(())
}
