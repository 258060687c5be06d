use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::{Array2, ArrayView2};

use semiseq::active::{select_k, select_unlabeled, fit_gmm, pca_project, GmmSpace};
use semiseq::augment::{augment_window, AugmentOp, AugmentationSpec};
use semiseq::autoencoder::{pretrain, Autoencoder, UnlabeledSource};
use semiseq::config::ExperimentConfig;
use semiseq::data::{make_splits, read_labels_csv, read_stream_csv, segment, BinarizationRule, Dataset, Split};
use semiseq::eval::{
    paired_t_test, sublevel_accuracy, sweep_active_sampling, threshold_predictions, Confusion, SweepArm, SweepGrid, SweepSpec,
};
use semiseq::features::{
    extract_streams, read_phone_csv, read_rr_csv, read_sc_csv, write_stream_csv, AppCategoryMap, BandSpec, ExtractConfig,
    Modalities, ScrConfig,
};
use semiseq::nn::Checkpoint;
use semiseq::saliency::{average_saliency, effective_horizon};
use semiseq::synth::{generate, run_ablation, run_sampling_sweep, AblationSpec, SynthSpec};
use semiseq::trainer::{density_scores, train, FoldData, Method, Scaler, TrainedModel};
use semiseq::{Error, Result, RngSeed};

#[derive(Parser)]
#[command(name = "semiseq", version, about = "Semi-supervised stress detection from sensor sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort.
    Synth(SynthArgs),
    /// Extract per-step features from raw RR, skin conductance and phone logs.
    Features(FeaturesArgs),
    /// Cut feature streams into labeled and unlabeled windows.
    Segment(SegmentArgs),
    /// Write augmented copies of windows for inspection.
    Augment(AugmentArgs),
    /// Pretrain the sequence autoencoder on one fold.
    Pretrain(PretrainArgs),
    /// Fit the latent mixture and select unlabeled windows.
    Select(SelectArgs),
    /// Train a classifier on one fold.
    Train(TrainArgs),
    /// Score a trained model on a validation fold.
    Evaluate(EvaluateArgs),
    /// Compare active and random unlabeled selection across thresholds.
    ///
    /// A config with a `[synth]` table and no dataset draws one synthetic
    /// cohort per seed and scores against the true labels.
    Sweep(SweepArgs),
    /// Average gradient saliency of a trained model.
    Saliency(SaliencyArgs),
    /// Run the method ablation on synthetic cohorts.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// TOML synth spec (defaults when omitted).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    rr: Option<PathBuf>,
    #[arg(long)]
    sc: Option<PathBuf>,
    #[arg(long)]
    phone: Option<PathBuf>,
    #[arg(long)]
    app_map: Option<PathBuf>,
    #[arg(long, default_value_t = 5.0)]
    resolution: f64,
    /// Comma-separated feature names to keep.
    #[arg(long, value_delimiter = ',')]
    select: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    streams: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    length: usize,
    #[arg(long, default_value_t = 5.0)]
    resolution: f64,
    /// `threshold:<n>` or `zscore`.
    #[arg(long, default_value = "threshold:1")]
    rule: BinarizationRule,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Experiment config whose `[augmentation]` table is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Windows to augment, from the start of the dataset.
    #[arg(long, default_value_t = 10)]
    windows: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, alias = "spec")]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train on labeled windows (for latent scoring) instead of unlabeled ones.
    #[arg(long)]
    labeled: bool,
    #[arg(long)]
    reverse_decode: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    loss_curve: Option<PathBuf>,
    /// Write `labeled_latents.csv` and `unlabeled_latents.csv` here.
    #[arg(long)]
    latents: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    labeled_latents: PathBuf,
    #[arg(long)]
    unlabeled_latents: PathBuf,
    #[arg(long, default_value = "1:10")]
    k_range: String,
    #[arg(long)]
    threshold: f64,
    /// `latent` or `pca:<d>`.
    #[arg(long, default_value = "latent")]
    gmm_space: GmmSpace,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Autoencoder checkpoint to start from.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    fold: usize,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// NLL thresholds, ascending.
    #[arg(long, value_delimiter = ',', conflicts_with = "fractions")]
    thresholds: Option<Vec<f64>>,
    /// Target selected fractions of the unlabeled pool, ascending.
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    /// `1,2,3` or `1..10`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SaliencyArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Restrict to this validation fold; all labeled windows otherwise.
    #[arg(long)]
    fold: Option<usize>,
    #[command(flatten)]
    split: SplitArgs,
    /// Average only over correctly classified windows.
    #[arg(long)]
    correct_only: bool,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment config with a `[synth]` table.
    #[arg(long, alias = "spec")]
    config: PathBuf,
    /// `all` or a comma list of methods.
    #[arg(long, default_value = "all")]
    methods: String,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Features(a) => features(a),
        Command::Segment(a) => segment_cmd(a),
        Command::Augment(a) => augment(a),
        Command::Pretrain(a) => pretrain_cmd(a),
        Command::Select(a) => select(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => sweep(a),
        Command::Saliency(a) => saliency(a),
        Command::Bench(a) => bench(a),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::invalid("seeds", format!("expected `a,b,c` or `a..b`, got `{s}`"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().trim_start_matches('s').parse().map_err(|_| bad())?;
        let b: u64 = b.trim().trim_start_matches('s').parse().map_err(|_| bad())?;
        return if a <= b { Ok((a..=b).collect()) } else { Err(bad()) };
    }
    s.split(',').map(|v| v.trim().trim_start_matches('s').parse().map_err(|_| bad())).collect()
}

fn load_config_dataset(cfg: &ExperimentConfig, over: Option<&Path>) -> Result<(Dataset, Split)> {
    let path = match over {
        Some(p) => p,
        None => cfg.dataset_path()?,
    };
    let dataset = Dataset::load(path)?;
    let split = make_splits(&dataset, cfg.folds, RngSeed(cfg.split_seed))?;
    Ok((dataset, split))
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<SynthSpec>(&text).map_err(|e| Error::format("synth spec", e.to_string()))?
        }
        None => SynthSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let data = generate(&spec)?;
    data.dataset.save(&a.out)?;
    let mut t = String::from("window_id,stressed,level,contaminant\n");
    for (i, w) in data.truth.iter().enumerate() {
        t.push_str(&format!("{i},{},{},{}\n", u8::from(w.stressed), w.level, u8::from(w.contaminant)));
    }
    write_file(&a.out.join("truth.csv"), &t)?;
    println!(
        "{} windows ({} labeled) from {} participants -> {}",
        data.dataset.len(),
        data.dataset.labeled_indices().len(),
        spec.participants,
        a.out.display()
    );
    Ok(())
}

fn features(a: FeaturesArgs) -> Result<()> {
    let mut rec = BTreeMap::new();
    if let Some(p) = &a.rr {
        read_rr_csv(p, &mut rec)?;
    }
    if let Some(p) = &a.sc {
        read_sc_csv(p, &mut rec)?;
    }
    if let Some(p) = &a.phone {
        read_phone_csv(p, &mut rec)?;
    }
    let apps = match &a.app_map {
        Some(p) => AppCategoryMap::load(p)?,
        None => AppCategoryMap::default(),
    };
    let cfg = ExtractConfig {
        resolution_minutes: a.resolution,
        modalities: Modalities {
            ecg: a.rr.is_some(),
            sc: a.sc.is_some(),
            phone: a.phone.is_some(),
        },
        bands: BandSpec::default(),
        scr: ScrConfig::default(),
        apps,
        select: a.select,
    };
    let out = extract_streams(&rec, &cfg)?;
    write_stream_csv(&a.out, &out.feature_names, &out.streams)?;
    println!(
        "{} features for {} participants; {} implausible RR intervals dropped",
        out.feature_names.len(),
        out.streams.len(),
        out.dropped_rr
    );
    Ok(())
}

fn segment_cmd(a: SegmentArgs) -> Result<()> {
    let (names, streams) = read_stream_csv(&a.streams)?;
    let labels = read_labels_csv(&a.labels)?;
    let seg = segment(&streams, names, a.length, a.resolution, &labels, a.rule)?;
    seg.dataset.save(&a.out)?;
    println!(
        "{} labeled and {} unlabeled windows; {} dropped for missing steps",
        seg.dataset.labeled_indices().len(),
        seg.dataset.unlabeled_indices().len(),
        seg.dropped
    );
    Ok(())
}

fn augment(a: AugmentArgs) -> Result<()> {
    let dataset = Dataset::load(&a.dataset)?;
    let spec = match &a.config {
        Some(p) => ExperimentConfig::load(p)?.augmentation.unwrap_or_default(),
        None => AugmentationSpec::default(),
    };
    spec.validate()?;
    let views: Vec<_> = dataset.windows().iter().map(|w| w.features.view()).collect();
    let scaler = Scaler::fit(&views)?;
    let names = dataset.feature_names();
    mkdir(&a.out)?;
    let n = a.windows.min(dataset.len());
    let seed = RngSeed(a.seed);
    let header = |lead: &str| {
        let mut h = lead.to_string();
        for f in names {
            h.push(',');
            h.push_str(f);
        }
        h.push('\n');
        h
    };
    let mut copies = header("window_id,copy,step");
    let mut ops = String::from("window_id,step,feature,original");
    for op in AugmentOp::ALL {
        ops.push(',');
        ops.push_str(op.name());
    }
    ops.push('\n');
    let row = |out: &mut String, lead: String, r: ndarray::ArrayView1<'_, f64>| {
        out.push_str(&lead);
        for v in r {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    };
    for i in 0..n {
        let x = scaler.transform(views[i])?;
        for m in 0..spec.count {
            let aug = augment_window(x.view(), &spec, &mut seed.derive_rng(&[i as u64, m as u64]));
            for (t, r) in aug.outer_iter().enumerate() {
                row(&mut copies, format!("{i},{m},{t}"), r);
            }
        }
        let singles: Vec<Array2<f64>> = AugmentOp::ALL
            .iter()
            .map(|&op| {
                let one = AugmentationSpec { ops: vec![op], ..spec.clone() };
                augment_window(x.view(), &one, &mut seed.derive_rng(&[i as u64, 0x0b, op as u64]))
            })
            .collect();
        for ((t, f), v) in x.indexed_iter() {
            ops.push_str(&format!("{i},{t},{},{v}", names[f]));
            for s in &singles {
                ops.push_str(&format!(",{}", s[[t, f]]));
            }
            ops.push('\n');
        }
    }
    write_file(&a.out.join("augmented.csv"), &copies)?;
    write_file(&a.out.join("operators.csv"), &ops)?;
    println!("{} copies of {n} standardized windows -> {}", spec.count, a.out.display());
    Ok(())
}

fn latents_csv(path: &Path, ids: &[usize], z: &Array2<f64>) -> Result<()> {
    let mut s = String::from("window_id");
    for j in 0..z.ncols() {
        s.push_str(&format!(",z{j}"));
    }
    s.push('\n');
    for (id, row) in ids.iter().zip(z.outer_iter()) {
        s.push_str(&id.to_string());
        for v in row {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    write_file(path, &s)
}

fn read_latents(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut width = None;
    for rec in r.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>().map_err(|_| Error::format(path.display().to_string(), format!("bad number `{v}`"))))
            .collect::<Result<_>>()?;
        if *width.get_or_insert(vals.len()) != vals.len() || vals.is_empty() {
            return Err(Error::format(path.display().to_string(), "ragged latent rows"));
        }
        ids.push(rec.get(0).unwrap_or_default().to_string());
        data.extend(vals);
    }
    let w = width.ok_or_else(|| Error::format(path.display().to_string(), "no latent rows"))?;
    let z = Array2::from_shape_vec((ids.len(), w), data).expect("row-major latents");
    Ok((ids, z))
}

fn pretrain_cmd(a: PretrainArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let (dataset, split) = load_config_dataset(&cfg, a.dataset.as_deref())?;
    let mut spec = cfg.train_spec(dataset.feature_count())?;
    spec.ae.reverse_decode |= a.reverse_decode;
    let fd = FoldData::prepare(&dataset, &split, a.fold, spec.scaler_uses_unlabeled)?;
    let seed = RngSeed(a.seed);
    let (windows, source) = if a.labeled {
        (fd.labeled_views(), "labeled")
    } else {
        let used: Vec<usize> = match spec.ae.unlabeled_source {
            UnlabeledSource::All => (0..fd.unlabeled.len()).collect(),
            UnlabeledSource::ActiveSelected => {
                let scores = density_scores(&fd, &spec, seed)?;
                semiseq::active::select_by_nll(&scores.unlabeled_nll, &scores.labeled_nll, spec.active.threshold).selected
            }
        };
        (used.iter().map(|&i| fd.unlabeled[i].view()).collect(), "unlabeled")
    };
    let out = pretrain(&windows, &spec.network, &spec.ae, seed.derive(&[0xae]))?;
    let meta = serde_json::json!({ "fold": a.fold, "source": source, "windows": windows.len(), "scaler": fd.scaler });
    out.model.to_checkpoint(Some(a.seed), spec.ae.epochs as u64, meta)?.save(&a.out)?;
    if let Some(p) = &a.loss_curve {
        let mut s = String::from("epoch,train_mse,holdout_mse\n");
        s.push_str(&format!("0,,{}\n", out.initial_holdout_mse));
        for pt in &out.curve {
            s.push_str(&format!("{},{},{}\n", pt.epoch, pt.train_mse, pt.holdout_mse));
        }
        write_file(p, &s)?;
    }
    if let Some(dir) = &a.latents {
        mkdir(dir)?;
        let ids = |n: usize| (0..n).collect::<Vec<_>>();
        latents_csv(&dir.join("labeled_latents.csv"), &ids(fd.labeled.len()), &out.model.latents(&fd.labeled_views())?)?;
        latents_csv(&dir.join("unlabeled_latents.csv"), &ids(fd.unlabeled.len()), &out.model.latents(&fd.unlabeled_views())?)?;
    }
    let last = out.curve.last().map_or(f64::NAN, |p| p.holdout_mse);
    println!(
        "pretrained on {} {source} windows; holdout mse {:.4} -> {:.4}",
        windows.len(),
        out.initial_holdout_mse,
        last
    );
    Ok(())
}

fn select(a: SelectArgs) -> Result<()> {
    let (k_lo, k_hi) = a
        .k_range
        .split_once(':')
        .and_then(|(x, y)| Some((x.trim().parse::<usize>().ok()?, y.trim().parse::<usize>().ok()?)))
        .ok_or_else(|| Error::invalid("k-range", "expected `min:max`"))?;
    let (_, zl) = read_latents(&a.labeled_latents)?;
    let (uid, zu) = read_latents(&a.unlabeled_latents)?;
    let (zl, zu) = match a.gmm_space {
        GmmSpace::Latent => (zl, zu),
        GmmSpace::Pca(d) => {
            let pca = pca_project(zl.view(), d)?;
            (pca.projected.clone(), pca.transform(zu.view()))
        }
    };
    let seed = RngSeed(a.seed);
    let (k, table) = select_k(zl.view(), k_lo..=k_hi, seed)?;
    let gmm = fit_gmm(zl.view(), k, seed.derive(&[1]))?;
    let rep = select_unlabeled(&gmm, zu.view(), zl.view(), a.threshold);
    let mut s = String::from("section,key,value1,value2,value3\n");
    for c in &table {
        s.push_str(&format!("criterion,{},{},{},{}\n", c.k, c.log_likelihood, c.aic, c.bic));
    }
    s.push_str(&format!("summary,k,{k},,\n"));
    s.push_str(&format!("summary,threshold,{},,\n", rep.threshold));
    s.push_str(&format!("summary,fraction_unlabeled_selected,{},,\n", rep.fraction_unlabeled_selected));
    s.push_str(&format!("summary,fraction_labeled_below_threshold,{},,\n", rep.fraction_labeled_below_threshold));
    let chosen: std::collections::BTreeSet<usize> = rep.selected.iter().copied().collect();
    for (i, (id, nll)) in uid.iter().zip(&rep.unlabeled_nll).enumerate() {
        s.push_str(&format!("window,{id},{nll},{},\n", u8::from(chosen.contains(&i))));
    }
    write_file(&a.report, &s)?;
    println!(
        "K={k}; selected {} of {} unlabeled windows ({:.1}%)",
        rep.selected.len(),
        uid.len(),
        100.0 * rep.fraction_unlabeled_selected
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(m) = a.method {
        cfg.method = m;
    }
    let (dataset, split) = load_config_dataset(&cfg, None)?;
    let spec = cfg.train_spec(dataset.feature_count())?;
    let pretrained = match &a.pretrained {
        Some(p) => Some(Autoencoder::from_checkpoint(&Checkpoint::load(p)?)?),
        None => None,
    };
    let out = train(&dataset, &split, a.fold, &spec, pretrained.as_ref(), RngSeed(a.seed))?;
    mkdir(&a.out)?;
    let mut log = String::from("epoch,loss_ce,loss_kl_l,loss_kl_u,val_f1,val_loss\n");
    for l in &out.log {
        log.push_str(&format!("{},{},{},{},{},{}\n", l.epoch, l.loss_ce, l.loss_kl_l, l.loss_kl_u, l.val_f1, l.val_loss));
    }
    write_file(&a.out.join("log.csv"), &log)?;
    let model = TrainedModel {
        classifier: out.model,
        scaler: out.scaler,
        feature_names: dataset.feature_names().to_vec(),
        method: spec.method,
    };
    model.save(&a.out.join("model.ckpt"), Some(a.seed))?;
    write_file(&a.out.join("scaler.json"), &serde_json::to_string_pretty(&model.scaler)?)?;
    write_file(&a.out.join("provenance.json"), &serde_json::to_string_pretty(&out.provenance)?)?;
    let best = &out.log[out.best_epoch - 1];
    println!("{}: best epoch {} (val f1 {:.3})", spec.method, out.best_epoch, best.val_f1);
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let model = TrainedModel::load(&a.checkpoint)?;
    let dataset = Dataset::load(&a.dataset)?;
    let split = make_splits(&dataset, a.split.folds, RngSeed(a.split.split_seed))?;
    let idx: Vec<usize> = split
        .validation_indices(&dataset, a.fold)?
        .into_iter()
        .filter(|&i| dataset.window(i).is_labeled())
        .collect();
    let windows: Vec<_> = idx.iter().map(|&i| dataset.window(i).features.view()).collect();
    let probs = model.predict(&windows)?;
    let pred = threshold_predictions(&probs, 0.5);
    let truth: Vec<bool> = idx.iter().map(|&i| dataset.window(i).label.is_some_and(|l| l.is_stressed())).collect();
    let c = Confusion::from_predictions(&pred, &truth);
    let mut s = String::from("metric,value\n");
    for (k, v) in [
        ("f1", c.f1()),
        ("precision", c.precision()),
        ("recall", c.recall()),
        ("f1_negative", c.f1_negative()),
        ("macro_f1", c.macro_f1()),
        ("accuracy", c.accuracy()),
    ] {
        s.push_str(&format!("{k},{v}\n"));
    }
    for (k, v) in [("tn", c.tn), ("fp", c.fp), ("fn", c.fn_), ("tp", c.tp)] {
        s.push_str(&format!("{k},{v}\n"));
    }
    s.push_str(&format!("fold,{}\nfold_count,{}\nwindows,{}\n", a.fold, a.split.folds, idx.len()));
    if let Some(rule) = dataset.rule() {
        let with_level: Vec<usize> = (0..idx.len()).filter(|&j| dataset.window(idx[j]).raw_level.is_some()).collect();
        if !with_level.is_empty() {
            let p: Vec<bool> = with_level.iter().map(|&j| pred[j]).collect();
            let parts: Vec<String> = with_level.iter().map(|&j| dataset.window(idx[j]).participant_id.clone()).collect();
            let levels: Vec<i64> = with_level.iter().map(|&j| dataset.window(idx[j]).raw_level.unwrap_or_default()).collect();
            for (level, acc) in sublevel_accuracy(&p, &parts, &levels, rule)? {
                s.push_str(&format!("level_{level}_accuracy,{}\nlevel_{level}_count,{}\n", acc.accuracy, acc.count));
            }
        }
    }
    write_file(&a.report, &s)?;
    println!("fold {}: f1 {:.3} on {} windows", a.fold, c.f1(), idx.len());
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let grid = match (a.thresholds, a.fractions, cfg.sweep.clone()) {
        (Some(t), _, _) => SweepGrid::Thresholds(t),
        (None, Some(f), _) => SweepGrid::Fractions(f),
        (None, None, Some(g)) => g,
        (None, None, None) => return Err(Error::invalid("sweep", "give --thresholds, --fractions or a [sweep] table")),
    };
    let seeds = match &a.seeds {
        Some(s) => parse_seeds(s)?,
        None => cfg.seeds.clone(),
    };
    let folds = cfg.eval_folds.clone().unwrap_or_else(|| vec![0]);
    let points = match (&cfg.dataset, &cfg.synth) {
        (None, Some(synth)) => {
            let spec = SweepSpec {
                grid,
                seeds: seeds.clone(),
                folds,
                train: cfg.train_spec(synth.features)?,
            };
            run_sampling_sweep(synth, &spec, cfg.folds)?
        }
        _ => {
            let (dataset, split) = load_config_dataset(&cfg, None)?;
            let spec = SweepSpec {
                grid,
                seeds: seeds.clone(),
                folds,
                train: cfg.train_spec(dataset.feature_count())?,
            };
            sweep_active_sampling(&dataset, &split, &spec)?
        }
    };
    mkdir(&a.out)?;
    let mut s = String::from("threshold,arm,f1_mean,f1_std,frac_labeled,frac_unlabeled,empty_runs\n");
    for p in &points {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.threshold,
            p.arm.name(),
            p.f1.mean,
            p.f1.std,
            p.frac_labeled,
            p.frac_unlabeled,
            p.empty_runs
        ));
    }
    write_file(&a.out.join("sweep.csv"), &s)?;
    let mut m = String::from("threshold,arm");
    for sd in &seeds {
        m.push_str(&format!(",seed_{sd}"));
    }
    m.push('\n');
    for p in &points {
        m.push_str(&format!("{},{}", p.threshold, p.arm.name()));
        for v in &p.f1_by_seed {
            m.push_str(&format!(",{v}"));
        }
        m.push('\n');
    }
    write_file(&a.out.join("f1_matrix.csv"), &m)?;
    let mut t = String::from("threshold,mean_difference,t,p_greater,p_two_sided\n");
    let by: BTreeMap<(u64, SweepArm), &Vec<f64>> =
        points.iter().map(|p| ((p.threshold.to_bits(), p.arm), &p.f1_by_seed)).collect();
    for p in points.iter().filter(|p| p.arm == SweepArm::Active) {
        if let (Some(act), Some(rnd)) = (by.get(&(p.threshold.to_bits(), SweepArm::Active)), by.get(&(p.threshold.to_bits(), SweepArm::Random))) {
            if act.len() >= 2 {
                let r = paired_t_test(act, rnd)?;
                let tv = r.t.map_or(String::new(), |v| v.to_string());
                t.push_str(&format!("{},{},{tv},{},{}\n", p.threshold, r.mean_difference, r.p_greater, r.p_two_sided));
            }
        }
    }
    write_file(&a.out.join("paired_tests.csv"), &t)?;
    for p in &points {
        println!(
            "{:>10} {:6} f1 {:.3} ± {:.3}  unlabeled {:.1}%",
            p.threshold,
            p.arm.name(),
            p.f1.mean,
            p.f1.std,
            100.0 * p.frac_unlabeled
        );
    }
    Ok(())
}

fn saliency(a: SaliencyArgs) -> Result<()> {
    let model = TrainedModel::load(&a.checkpoint)?;
    let dataset = Dataset::load(&a.dataset)?;
    let idx: Vec<usize> = match a.fold {
        Some(f) => make_splits(&dataset, a.split.folds, RngSeed(a.split.split_seed))?.validation_indices(&dataset, f)?,
        None => (0..dataset.len()).collect(),
    }
    .into_iter()
    .filter(|&i| dataset.window(i).is_labeled())
    .collect();
    let scaled: Vec<Array2<f64>> = idx
        .iter()
        .map(|&i| model.scaler.transform(dataset.window(i).features.view()))
        .collect::<Result<_>>()?;
    let mut views: Vec<ArrayView2<'_, f64>> = scaled.iter().map(|w| w.view()).collect();
    if a.correct_only {
        let probs = model.classifier.predict_proba(&semiseq::nn::to_time_major(views.iter().copied()))?;
        views = views
            .into_iter()
            .zip(&idx)
            .zip(probs)
            .filter(|((_, &i), p)| (*p >= 0.5) == dataset.window(i).label.is_some_and(|l| l.is_stressed()))
            .map(|((v, _), _)| v)
            .collect();
    }
    let map = average_saliency(&model.classifier, &views, dataset.feature_names().to_vec(), dataset.step_minutes())?;
    map.write_csv(&a.out, a.threshold)?;
    if let Some(h) = &a.heatmap {
        map.write_heatmap_csv(h)?;
    }
    println!(
        "saliency over {} windows; effective horizon {} minutes{}",
        map.sample_count,
        effective_horizon(&map, a.threshold),
        if map.degenerate { " (degenerate: all gradients zero)" } else { "" }
    );
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let synth = cfg.synth.clone().unwrap_or_default();
    let methods: Vec<Method> = if a.methods.trim() == "all" {
        Method::ALL.to_vec()
    } else {
        a.methods.split(',').map(str::parse).collect::<Result<_>>()?
    };
    let seeds = match &a.seeds {
        Some(s) => parse_seeds(s)?,
        None => cfg.seeds.clone(),
    };
    let spec = AblationSpec {
        train: cfg.train_spec(synth.features)?,
        synth,
        methods,
        seeds,
        fold_count: cfg.folds,
        folds: cfg.eval_folds.clone().unwrap_or_else(|| vec![0]),
    };
    let result = run_ablation(&spec)?;
    result.write_csv(&a.out)?;
    let mut md = result.markdown();
    md.push_str(&format!("\nAnalytic chance f1: {:.3}\n", result.analytic_random_f1));
    write_file(&a.out.with_extension("md"), &md)?;
    print!("{md}");
    Ok(())
}
