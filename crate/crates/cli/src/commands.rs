use std::fs;
use std::path::{Path, PathBuf};

use frpt::container::{file_digest, write_atomic};
use frpt::data::{synth_dataset, LabeledDataset};
use frpt::embedding::EmbeddingMethod;
use frpt::nn::{checkpoint, evaluate, Network};
use frpt::posttrain::{
    build_recon_dataset, instance_heatmap, mean_deviation, pretrain, run_posttrain, Mode, PostTrainConfig,
    PretrainConfig, ReconDataset, SweepReport,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{load_data, read_json, CheckpointMeta, PretrainFile, SYNTH_TEST, SYNTH_TRAIN};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::{
    Cli, Command, CompareArgs, EvalArgs, HeatmapArgs, PosttrainArgs, PretrainArgs, ReconArgs, Split, SynthArgs,
};

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Pretrain(a) => cmd_pretrain(&a),
        Command::Recon(a) => cmd_recon(&a),
        Command::Posttrain(a) => cmd_posttrain(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Heatmap(a) => cmd_heatmap(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn load_checkpoint(path: &Path) -> CliResult<(Network, CheckpointMeta)> {
    let (net, meta) = checkpoint::load(path)?;
    Ok((net, CheckpointMeta::from_value(meta)))
}

fn meta_value(meta: &CheckpointMeta) -> CliResult<serde_json::Value> {
    Ok(serde_json::to_value(meta).map_err(frpt::Error::from)?)
}

fn pick(split: Split, train: LabeledDataset, test: LabeledDataset) -> LabeledDataset {
    match split {
        Split::Train => train,
        Split::Test => test,
    }
}

/// `dir/name.ext` → `dir/name<suffix>.ext`.
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    let name = match path.extension() {
        Some(ext) => format!("{stem}{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}{suffix}"),
    };
    path.with_file_name(name)
}

fn cmd_pretrain(a: &PretrainArgs) -> CliResult<()> {
    let mut manifest = RunManifest::start("pretrain");
    let (cfg, raw): (PretrainFile, _) = read_json(&a.config)?;
    manifest.config(&raw);
    manifest.seeds.push(cfg.seed);
    if a.snapshot_every == Some(0) {
        return Err(CliError::Config("--snapshot-every must be positive".into()));
    }
    let (train, test) = load_data(&a.data, &cfg.data)?;
    let classes = train.class_count().max(test.class_count());
    let mut net = cfg.preset.build(train.instance_shape(), classes, cfg.seed)?;
    let pcfg = PretrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        seed: cfg.seed,
    };
    let meta = |epoch, acc| CheckpointMeta {
        preset: Some(cfg.preset),
        data: cfg.data,
        epoch,
        test_accuracy: Some(acc),
    };
    let mut snapshots = Vec::new();
    let acc = pretrain(&mut net, &train, &test, &pcfg, |epoch, net, acc| {
        println!("epoch {epoch} test_accuracy {acc:.4}");
        if a.snapshot_every.is_some_and(|k| epoch % k == 0) {
            let path = with_suffix(&a.out, &format!("_epoch{epoch}"));
            let value = serde_json::to_value(meta(epoch, acc))?;
            checkpoint::save(&path, net, value)?;
            snapshots.push(path);
        }
        Ok(())
    })?;
    checkpoint::save(&a.out, &net, meta_value(&meta(cfg.epochs, acc))?)?;
    for p in snapshots.iter().chain([&a.out]) {
        manifest.output(p)?;
    }
    manifest.finish(&a.out)?;
    println!("wrote {} (test accuracy {acc:.4})", a.out.display());
    Ok(())
}

fn cmd_recon(a: &ReconArgs) -> CliResult<()> {
    let mut manifest = RunManifest::start("recon");
    let (net, meta) = load_checkpoint(&a.model)?;
    manifest.input(&a.model)?;
    let (train, _) = load_data(&a.data, &meta.data)?;
    let digest = file_digest(&a.model)?;
    let (recon, diagnostics) = build_recon_dataset(&net, &train, a.unit, a.embed, &digest)?;
    for d in &diagnostics {
        println!(
            "unit {} branch {:?} mean_consistency {:.3e} max_consistency {:.3e}",
            d.unit, d.branch, d.mean_consistency, d.max_consistency
        );
    }
    recon.save(&a.out)?;
    manifest.output(&a.out)?;
    manifest.finish(&a.out)?;
    println!("wrote {} ({} targets of shape {:?})", a.out.display(), recon.len(), recon.header.shape);
    Ok(())
}

fn load_recon_for(path: &Path, model_digest: &str) -> CliResult<ReconDataset> {
    let recon = ReconDataset::load(path)?;
    if recon.header.source_digest != model_digest {
        return Err(frpt::Error::ConfigMismatch(format!(
            "{} was built from checkpoint {}, not {model_digest}",
            path.display(),
            recon.header.source_digest
        ))
        .into());
    }
    Ok(recon)
}

fn cmd_posttrain(a: &PosttrainArgs) -> CliResult<()> {
    let mut manifest = RunManifest::start("posttrain");
    let (cfg, raw): (PostTrainConfig, _) = read_json(&a.config)?;
    manifest.config(&raw);
    manifest.seeds = cfg.seeds.clone();
    let (net, meta) = load_checkpoint(&a.model)?;
    manifest.input(&a.model)?;
    cfg.validate(net.depth())?;
    let recon = match (cfg.mode, &a.recon) {
        (Mode::Reconstruction, None) => return Err(CliError::Config("FR mode needs --recon".into())),
        (Mode::Reconstruction, Some(p)) => {
            manifest.input(p)?;
            Some(load_recon_for(p, &file_digest(&a.model)?)?)
        }
        (Mode::Backprop, _) => None,
    };
    let (train, test) = load_data(&a.data, &meta.data)?;
    let mut report = SweepReport::default();
    let params = net.param_count(cfg.start, cfg.end);
    for &seed in &cfg.seeds {
        let result = run_posttrain(&net, &cfg, seed, &train, &test, recon.as_ref())?;
        for &(epoch, acc) in &result.accuracies {
            println!("seed {seed} epoch {epoch} accuracy {acc:.4}");
        }
        if let Some(dir) = &a.save_dir {
            for (epoch, snap) in &result.snapshots {
                let path = dir.join(format!("seed{seed}_epoch{epoch}.frpt"));
                let m = CheckpointMeta {
                    epoch: meta.epoch + epoch,
                    test_accuracy: result.accuracies.iter().find(|x| x.0 == *epoch).map(|x| x.1),
                    ..meta.clone()
                };
                checkpoint::save(&path, snap, meta_value(&m)?)?;
                manifest.output(&path)?;
            }
        }
        report.extend_run(&cfg, params, &result);
    }
    let agg = with_suffix(&a.out, "_agg");
    report.write(&a.out, &agg)?;
    print!("{}", report.aggregate_csv()?);
    manifest.output(&a.out)?;
    manifest.output(&agg)?;
    manifest.finish(&a.out)?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let (net, meta) = load_checkpoint(&a.model)?;
    let (train, test) = load_data(&a.data, &meta.data)?;
    let ds = pick(a.split, train, test);
    println!("{:.3}", evaluate(&net, ds.images(), ds.labels())?);
    Ok(())
}

#[derive(Debug, Serialize)]
struct HeatmapSummary {
    layer: usize,
    embed: EmbeddingMethod,
    index: usize,
    channels: usize,
    mean: f64,
    samples: usize,
    mean_over_samples: f64,
}

fn cmd_heatmap(a: &HeatmapArgs) -> CliResult<()> {
    let mut manifest = RunManifest::start("heatmap");
    let (net, meta) = load_checkpoint(&a.model)?;
    manifest.input(&a.model)?;
    let (train, test) = load_data(&a.data, &meta.data)?;
    let ds = pick(a.split, train, test);
    let map = instance_heatmap(&net, &ds, a.index, a.layer, a.embed)?;
    let channels = map.channels();
    for (k, ch) in channels.iter().enumerate() {
        let pgm = a.out.join(format!("channel{k}.pgm"));
        let csv = a.out.join(format!("channel{k}.csv"));
        write_atomic(&pgm, &ch.to_pgm())?;
        write_atomic(&csv, ch.to_csv().as_bytes())?;
        manifest.output(&pgm)?;
        manifest.output(&csv)?;
    }
    let summary = HeatmapSummary {
        layer: a.layer,
        embed: a.embed,
        index: a.index,
        channels: channels.len(),
        mean: map.mean,
        samples: a.samples,
        mean_over_samples: mean_deviation(&net, &ds, a.samples, a.layer, a.embed)?,
    };
    let path = a.out.join("summary.json");
    write_atomic(&path, &serde_json::to_vec_pretty(&summary).map_err(frpt::Error::from)?)?;
    manifest.output(&path)?;
    manifest.finish(&path)?;
    println!("mean {:.6e}", summary.mean);
    println!("mean_over_samples {:.6e}", summary.mean_over_samples);
    Ok(())
}

fn default_eval_epochs() -> Vec<usize> {
    vec![1, 5, 10]
}

fn default_batch() -> usize {
    frpt::posttrain::DEFAULT_BATCH
}

fn default_lr() -> f64 {
    frpt::nn::AdamConfig::default().lr
}

/// Settings shared by every run of a sweep.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareFile {
    alpha: f64,
    epochs: usize,
    seeds: Vec<u64>,
    #[serde(default = "default_eval_epochs")]
    eval_epochs: Vec<usize>,
    #[serde(default = "default_batch")]
    batch_size: usize,
    #[serde(default = "default_lr")]
    lr: f64,
}

/// Every configuration of a comparison sweep, BP before FR per `(l_S, l_R)`.
fn compare_configs(base: &CompareFile, depth: usize, embeds: &[EmbeddingMethod], last_only: bool) -> Vec<PostTrainConfig> {
    let pairs: Vec<(usize, usize)> = if last_only {
        vec![(depth - 1, depth)]
    } else {
        (1..=depth).flat_map(|end| (0..end).map(move |start| (start, end))).collect()
    };
    let mut configs = Vec::new();
    for (start, end) in pairs {
        let make = |mode, embedding| PostTrainConfig {
            mode,
            start,
            end,
            alpha: if mode == Mode::Backprop { 0.0 } else { base.alpha },
            epochs: base.epochs,
            batch_size: base.batch_size,
            lr: base.lr,
            seeds: base.seeds.clone(),
            embedding,
            eval_epochs: base.eval_epochs.clone(),
        };
        configs.push(make(Mode::Backprop, None));
        for &e in embeds {
            configs.push(make(Mode::Reconstruction, Some(e)));
        }
    }
    configs
}

fn cmd_compare(a: &CompareArgs) -> CliResult<()> {
    let mut manifest = RunManifest::start("compare");
    let (base, raw): (CompareFile, _) = read_json(&a.config)?;
    manifest.config(&raw);
    manifest.seeds = base.seeds.clone();
    if a.embed.is_empty() {
        return Err(CliError::Config("--embed needs at least one method".into()));
    }
    let (net, meta) = load_checkpoint(&a.model)?;
    manifest.input(&a.model)?;
    let digest = file_digest(&a.model)?;
    let configs = compare_configs(&base, net.depth(), &a.embed, a.last_only);
    for c in &configs {
        c.validate(net.depth())?;
    }
    let (train, test) = load_data(&a.data, &meta.data)?;
    fs::create_dir_all(&a.out)?;

    // one target set per (l_R, embedding), shared by every l_S
    let mut recons: Vec<((usize, EmbeddingMethod), ReconDataset)> = Vec::new();
    for c in configs.iter().filter(|c| c.mode == Mode::Reconstruction) {
        let key = (c.end, c.embedding.expect("validated"));
        if recons.iter().any(|(k, _)| *k == key) {
            continue;
        }
        let (r, _) = build_recon_dataset(&net, &train, key.0, key.1, &digest)?;
        let path = a.out.join(format!("recon_l{}_{}.frrc", key.0, key.1));
        r.save(&path)?;
        manifest.output(&path)?;
        recons.push((key, r));
    }
    let recon_for = |c: &PostTrainConfig| {
        c.embedding
            .and_then(|e| recons.iter().find(|(k, _)| *k == (c.end, e)))
            .map(|(_, r)| r)
    };

    let jobs: Vec<(&PostTrainConfig, u64)> = configs.iter().flat_map(|c| c.seeds.iter().map(move |&s| (c, s))).collect();
    let results = jobs
        .par_iter()
        .map(|&(c, seed)| run_posttrain(&net, c, seed, &train, &test, recon_for(c)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut report = SweepReport::default();
    for (&(c, _), result) in jobs.iter().zip(&results) {
        report.extend_run(c, net.param_count(c.start, c.end), result);
    }
    let raw_csv = a.out.join("compare.csv");
    let agg_csv = a.out.join("compare_agg.csv");
    report.write(&raw_csv, &agg_csv)?;
    print!("{}", report.aggregate_csv()?);
    manifest.output(&raw_csv)?;
    manifest.output(&agg_csv)?;
    manifest.finish(&raw_csv)?;
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let mut manifest = RunManifest::start("synth");
    manifest.seeds = vec![a.seed, a.seed.wrapping_add(1)];
    let train = synth_dataset(a.classes, a.per_class, a.size, a.size, a.seed)?;
    let test = synth_dataset(a.classes, a.test_per_class, a.size, a.size, a.seed.wrapping_add(1))?;
    let (tp, vp) = (a.out.join(SYNTH_TRAIN), a.out.join(SYNTH_TEST));
    train.save(&tp)?;
    test.save(&vp)?;
    manifest.output(&tp)?;
    manifest.output(&vp)?;
    manifest.finish(&tp)?;
    println!("wrote {} train and {} test instances to {}", train.len(), test.len(), a.out.display());
    Ok(())
}
