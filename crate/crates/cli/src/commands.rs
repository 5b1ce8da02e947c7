use std::path::{Path, PathBuf};

use log::info;
use onestep::dataio::{load_png, save_png_item, upsample, write_synthetic_corpus, PairDataset};
use onestep::evalkit::{
    analyze_steps, eval_noise, evaluate, linear_slope, spearman, viz, EvalSet, MetricsReport, Method, SpectrumReport,
};
use onestep::losses::LossWeights;
use onestep::models::checkpoint::{Checkpoint, Meta};
use onestep::models::{Codec, Denoiser, Embedder};
use onestep::sampler::{student_infer, teacher_infer, teacher_sample};
use onestep::trainer::{
    config_hash, distill, load_codec, load_student, load_teacher, pretrain_codec, store_codec, train_teacher,
    Precision, RunSpec, TrainLog,
};
use onestep::{Scalar, Tensor};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{Cli, CliError, Command, ExperimentConfig, RunDir};

/// Environment variable naming a directory where pretrained codecs are
/// cached across runs.
pub const CACHE_ENV: &str = "ONESTEP_CACHE_DIR";

/// Seed offsets of the independent random streams derived from the global
/// seed.
const CODEC_DATA_SEED: u64 = 0x00c0_dec0;
const EVAL_PAIR_SEED: u64 = 0x0e7a_1000;
const VAL_CORPUS_SEED: u64 = 0x7a1_0000;

/// Loss combinations of the ablation, in table order: label and
/// `(lambda_hfp, lambda_sd, lambda_adv)` switches.
pub const ABLATIONS: [(&str, [bool; 3]); 4] = [
    ("distill", [false, false, false]),
    ("distill+hfp", [true, false, false]),
    ("distill+hfp+sd", [true, true, false]),
    ("distill+hfp+sd+adv", [true, true, true]),
];

/// Parse the config, create the run directory and execute the subcommand.
/// Returns the run directory.
pub fn run(cli: &Cli) -> Result<PathBuf, CliError> {
    let mut cfg = ExperimentConfig::load(cli.common.config.as_deref(), &cli.common.overrides)?;
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(out) = &cli.common.out {
        cfg.out_dir = out.clone();
    }
    check_inputs(&cli.command)?;
    let dir = RunDir::create(&cfg.out_dir, cli.command.name(), &cfg)?;
    info!("run directory {}", dir.path.display());
    match cfg.train.precision {
        Precision::F32 => dispatch::<f32>(&cli.command, &cfg, &dir)?,
        Precision::F64 => dispatch::<f64>(&cli.command, &cfg, &dir)?,
    }
    Ok(dir.path)
}

/// Referenced files must exist before a run directory is created.
fn check_inputs(cmd: &Command) -> Result<(), CliError> {
    let need = |p: &Path, what: &str| -> Result<(), CliError> {
        if p.exists() {
            Ok(())
        } else {
            Err(CliError::Config(format!("{what} {} does not exist", p.display())))
        }
    };
    match cmd {
        Command::TrainTeacher { resume: Some(p) } => need(p, "--resume"),
        Command::Distill { teacher, resume } => {
            need(teacher, "--teacher")?;
            resume.as_deref().map_or(Ok(()), |p| need(p, "--resume"))
        }
        Command::Infer { student, teacher, input } => {
            need(input, "--input")?;
            student.iter().chain(teacher).try_for_each(|p| need(p, "checkpoint"))
        }
        Command::Eval { teacher, student } => teacher.iter().chain(student).try_for_each(|p| need(p, "checkpoint")),
        Command::AnalyzeSteps { teacher } | Command::Ablate { teacher } => need(teacher, "--teacher"),
        _ => Ok(()),
    }
}

fn dispatch<T: Scalar>(cmd: &Command, cfg: &ExperimentConfig, dir: &RunDir) -> Result<(), CliError> {
    match cmd {
        Command::MakeDataset => make_dataset(cfg, dir),
        Command::TrainTeacher { resume } => train_teacher_cmd::<T>(cfg, dir, resume.as_deref()),
        Command::Distill { teacher, resume } => distill_cmd::<T>(cfg, dir, teacher, resume.as_deref()),
        Command::Infer { student, teacher, input } => infer_cmd::<T>(cfg, dir, student.as_deref(), teacher.as_deref(), input),
        Command::Eval { teacher, student } => eval_cmd::<T>(cfg, dir, teacher.as_deref(), student.as_deref()),
        Command::AnalyzeSteps { teacher } => analyze_cmd::<T>(cfg, dir, teacher),
        Command::Ablate { teacher } => ablate_cmd::<T>(cfg, dir, teacher),
    }
}

/// A checkpoint argument may name the file or the run directory holding it.
fn checkpoint_path(p: &Path, file: &str) -> PathBuf {
    if p.is_dir() {
        p.join(file)
    } else {
        p.to_path_buf()
    }
}

fn run_spec(cfg: &ExperimentConfig, dir: &Path) -> RunSpec {
    RunSpec::new(dir, cfg.to_json())
}

fn open_dataset<T: Scalar>(dir: &Path, cfg: &ExperimentConfig) -> Result<PairDataset<T>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Config(format!(
            "data directory {} does not exist (run make-dataset first)",
            dir.display()
        )));
    }
    Ok(PairDataset::open(dir, cfg.data.pairs.patch)?)
}

fn embedder<T: Scalar>(cfg: &ExperimentConfig) -> Result<Embedder<T>, CliError> {
    let mut e = Embedder::new(&cfg.embedder.net);
    if let Some(w) = &cfg.embedder.weights {
        e.load_weights(w, "embedder")?;
    }
    Ok(e)
}

fn make_dataset(cfg: &ExperimentConfig, dir: &RunDir) -> Result<(), CliError> {
    let d = &cfg.dataset;
    let train = write_synthetic_corpus(&cfg.data.train_dir, d.train_count, d.size, cfg.seed)?;
    let val = write_synthetic_corpus(&cfg.data.val_dir, d.val_count, d.size, cfg.seed ^ VAL_CORPUS_SEED)?;
    info!("wrote {} training and {} validation images", train.len(), val.len());
    dir.write_json(
        "dataset.json",
        &serde_json::json!({
            "train_dir": cfg.data.train_dir,
            "val_dir": cfg.data.val_dir,
            "train_count": train.len(),
            "val_count": val.len(),
            "size": d.size,
        }),
    )?;
    Ok(())
}

/// Key of a pretrained codec: everything that determines its weights.
fn codec_key<T: Scalar>(cfg: &ExperimentConfig, ds: &PairDataset<T>) -> String {
    let mut h = Sha256::new();
    let settings = serde_json::json!({
        "codec": cfg.codec,
        "codec_train": cfg.codec_train,
        "pairs": cfg.data.pairs,
        "seed": cfg.seed,
        "dtype": std::any::type_name::<T>(),
    });
    h.update(settings.to_string().as_bytes());
    for i in 0..ds.len() {
        h.update(ds.image(i).content_hash().as_bytes());
    }
    h.finalize().iter().take(16).map(|b| format!("{b:02x}")).collect()
}

/// Pretrain the codec on the training pairs, or fetch it from the cache.
fn prepare_codec<T: Scalar>(cfg: &ExperimentConfig, ds: &PairDataset<T>, dir: &RunDir) -> Result<Codec<T>, CliError> {
    let cache = std::env::var_os(CACHE_ENV).map(PathBuf::from);
    let key = codec_key(cfg, ds);
    let cached = cache.as_ref().map(|c| c.join(format!("codec-{key}.json")));
    if let Some(p) = cached.as_ref().filter(|p| p.is_file()) {
        info!("codec cache hit {}", p.display());
        return Ok(load_codec(&Checkpoint::<T>::read(p)?, &cfg.codec)?);
    }
    let mut codec = Codec::new(&cfg.codec);
    let mut stream = ds.stream(&cfg.data.pairs, cfg.codec_train.batch_size, cfg.seed ^ CODEC_DATA_SEED)?;
    let mut log = TrainLog::open(&dir.join("codec_log.jsonl"))?;
    let loss = pretrain_codec(&mut codec, &mut stream, &cfg.codec_train, &mut log)?;
    info!("codec pretrained, final loss {loss:.3e}, latent scale {:.4}", codec.latent_scale());
    if let Some(p) = cached {
        std::fs::create_dir_all(p.parent().expect("cache file has a parent"))?;
        let mut ck = Checkpoint::new();
        store_codec(&mut ck, &codec);
        let config = serde_json::json!({ "codec": cfg.codec, "codec_train": cfg.codec_train, "key": key });
        ck.write(&p, Meta { config_hash: config_hash(&config), config, ..Default::default() })?;
    }
    Ok(codec)
}

fn train_teacher_cmd<T: Scalar>(cfg: &ExperimentConfig, dir: &RunDir, resume: Option<&Path>) -> Result<(), CliError> {
    let s = cfg.schedule.build()?;
    let ds = open_dataset::<T>(&cfg.data.train_dir, cfg)?;
    let resume = resume.map(|p| checkpoint_path(p, "teacher.json"));
    let codec = match &resume {
        Some(p) => load_codec(&Checkpoint::<T>::read(p)?, &cfg.codec)?,
        None => prepare_codec(cfg, &ds, dir)?,
    };
    let mut teacher = Denoiser::new(&cfg.denoiser);
    let mut data = ds.stream(&cfg.data.pairs, cfg.train.batch_size, cfg.seed)?;
    let out = train_teacher(&cfg.train, &s, &codec, &mut teacher, &mut data, &run_spec(cfg, &dir.path), resume.as_deref())?;
    info!("teacher trained for {} iterations: {}", out.iterations, out.checkpoint.display());
    Ok(())
}

/// Codec and teacher stored together by `train-teacher`.
fn load_trained<T: Scalar>(cfg: &ExperimentConfig, teacher: &Path) -> Result<(Codec<T>, Denoiser<T>), CliError> {
    let path = checkpoint_path(teacher, "teacher.json");
    let ck = Checkpoint::<T>::read(&path)?;
    if !ck.has_prefix("codec") {
        return Err(CliError::Config(format!("{} holds no codec weights", path.display())));
    }
    Ok((load_codec(&ck, &cfg.codec)?, load_teacher(&path, &cfg.denoiser)?))
}

fn distill_into<T: Scalar>(
    cfg: &ExperimentConfig,
    run_dir: &Path,
    codec: &Codec<T>,
    teacher: &Denoiser<T>,
    ds: &PairDataset<T>,
    resume: Option<&Path>,
) -> Result<Denoiser<T>, CliError> {
    let s = cfg.schedule.build()?;
    let emb = embedder::<T>(cfg)?;
    let mut data = ds.stream(&cfg.data.pairs, cfg.train.batch_size, cfg.seed)?;
    let out = distill(&cfg.train, &s, codec, teacher, &emb, &cfg.discriminator, &mut data, &run_spec(cfg, run_dir), resume)?;
    info!("student distilled for {} iterations: {}", cfg.train.iterations, out.checkpoint.display());
    Ok(out.student)
}

fn distill_cmd<T: Scalar>(cfg: &ExperimentConfig, dir: &RunDir, teacher: &Path, resume: Option<&Path>) -> Result<(), CliError> {
    let (codec, teacher) = load_trained::<T>(cfg, teacher)?;
    let ds = open_dataset::<T>(&cfg.data.train_dir, cfg)?;
    let resume = resume.map(|p| checkpoint_path(p, "student.json"));
    distill_into(cfg, &dir.path, &codec, &teacher, &ds, resume.as_deref())?;
    Ok(())
}

fn png_inputs(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut v: Vec<PathBuf> = std::fs::read_dir(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    v.sort();
    if v.is_empty() {
        return Err(CliError::Config(format!("no PNG files in {}", input.display())));
    }
    Ok(v)
}

fn infer_cmd<T: Scalar>(
    cfg: &ExperimentConfig,
    dir: &RunDir,
    student: Option<&Path>,
    teacher: Option<&Path>,
    input: &Path,
) -> Result<(), CliError> {
    let s = cfg.schedule.build()?;
    let (ckpt, file) = match (student, teacher) {
        (Some(p), _) => (p, "student.json"),
        (None, Some(p)) => (p, "teacher.json"),
        (None, None) => return Err(CliError::Config("infer needs --student or --teacher".into())),
    };
    let path = checkpoint_path(ckpt, file);
    let codec = load_codec(&Checkpoint::<T>::read(&path)?, &cfg.codec)?;
    let net =
        if student.is_some() { load_student::<T>(&path, &cfg.denoiser)? } else { load_teacher::<T>(&path, &cfg.denoiser)? };
    let out_dir = dir.join("sr");
    std::fs::create_dir_all(&out_dir)?;
    for (i, p) in png_inputs(input)?.iter().enumerate() {
        let lr: Tensor<T> = load_png(p)?;
        let lr_up = upsample(&lr, cfg.data.pairs.degrade.scale)?;
        let noise = eval_noise(&codec.latent_shape(lr_up.shape())?, cfg.seed, i);
        let sr = if student.is_some() {
            student_infer(&net, &codec, &lr_up, &s, &noise)?
        } else {
            teacher_infer(&net, &codec, &lr_up, &s, &noise, cfg.eval.teacher_mode)?
        };
        let name = p.file_name().expect("file has a name");
        save_png_item(&sr, 0, &out_dir.join(name))?;
    }
    Ok(())
}

fn eval_set<T: Scalar>(cfg: &ExperimentConfig, limit: Option<usize>) -> Result<EvalSet<T>, CliError> {
    let ds = open_dataset::<T>(&cfg.data.val_dir, cfg)?;
    let limit = limit.or((cfg.data.eval_images > 0).then_some(cfg.data.eval_images));
    Ok(EvalSet::from_dataset(&ds, &cfg.data.pairs, cfg.seed ^ EVAL_PAIR_SEED, limit)?)
}

fn write_report(dir: &Path, name: &str, r: &MetricsReport) -> Result<(), CliError> {
    r.write_json(&dir.join(format!("{name}.json")))?;
    r.write_csv(&dir.join(format!("{name}.csv")))?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryRow {
    method: String,
    steps: usize,
    psnr: f64,
    ssim: f64,
    semantic_consistency: f64,
    seconds: f64,
}

impl From<&MetricsReport> for SummaryRow {
    fn from(r: &MetricsReport) -> Self {
        Self {
            method: r.method.clone(),
            steps: r.steps,
            psnr: r.mean.psnr,
            ssim: r.mean.ssim,
            semantic_consistency: r.mean.semantic_consistency,
            seconds: r.mean.seconds,
        }
    }
}

fn eval_cmd<T: Scalar>(
    cfg: &ExperimentConfig,
    dir: &RunDir,
    teacher: Option<&Path>,
    student: Option<&Path>,
) -> Result<(), CliError> {
    let s = cfg.schedule.build()?;
    let set = eval_set::<T>(cfg, None)?;
    let emb = embedder::<T>(cfg)?;
    let trained = teacher.map(|p| load_trained::<T>(cfg, p)).transpose()?;
    let student = match student {
        Some(p) => {
            let path = checkpoint_path(p, "student.json");
            Some((load_codec(&Checkpoint::<T>::read(&path)?, &cfg.codec)?, load_student::<T>(&path, &cfg.denoiser)?))
        }
        None => None,
    };
    let pixel_codec = Codec::identity(3);
    let base_codec = trained.as_ref().map(|t| &t.0).or(student.as_ref().map(|t| &t.0)).unwrap_or(&pixel_codec);
    let json = cfg.to_json();
    let mut reports = vec![evaluate("bicubic", &Method::Bicubic, base_codec, &s, &emb, &set, cfg.seed)?];
    if let Some((codec, t)) = &trained {
        reports.push(evaluate("teacher", &Method::Teacher(t, cfg.eval.teacher_mode), codec, &s, &emb, &set, cfg.seed)?);
    }
    if let Some((codec, st)) = &student {
        reports.push(evaluate("student", &Method::Student(st), codec, &s, &emb, &set, cfg.seed)?);
    }
    let mut rows = Vec::new();
    for r in reports {
        let r = r.with_config(json.clone());
        info!("{}: psnr {:.3} ssim {:.4} {:.4}s/image", r.method, r.mean.psnr, r.mean.ssim, r.mean.seconds);
        write_report(&dir.path, &r.method, &r)?;
        rows.push(SummaryRow::from(&r));
    }
    dir.write_json("summary.json", &rows)?;
    Ok(())
}

/// Trend statistics of a spectral analysis.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct AnalysisSummary {
    pub images: usize,
    /// Spearman correlation between step progress `T - t` and the mean
    /// HF-energy ratio of the predictions.
    pub spearman_progress_hf: f64,
    pub slope_full: f64,
    pub slope_lowpass: f64,
    /// `|slope_lowpass| / |slope_full|`.
    pub slope_ratio: f64,
}

pub fn analysis_summary(rep: &SpectrumReport, images: usize) -> AnalysisSummary {
    let x = rep.progress();
    let slope_full = linear_slope(&x, &rep.hf_ratio);
    let slope_lowpass = linear_slope(&x, &rep.lowpass_hf_ratio);
    AnalysisSummary {
        images,
        spearman_progress_hf: spearman(&x, &rep.hf_ratio),
        slope_full,
        slope_lowpass,
        slope_ratio: slope_lowpass.abs() / slope_full.abs().max(f64::MIN_POSITIVE),
    }
}

fn analyze_cmd<T: Scalar>(cfg: &ExperimentConfig, dir: &RunDir, teacher: &Path) -> Result<(), CliError> {
    let s = cfg.schedule.build()?;
    let a = &cfg.analysis;
    let (codec, teacher) = load_trained::<T>(cfg, teacher)?;
    let set = eval_set::<T>(cfg, Some(a.images))?;
    if set.len() < a.images {
        log::warn!("only {} validation images available, {} requested", set.len(), a.images);
    }
    let lr_up = Tensor::cat(&set.lr_up)?;
    let zy = codec.encode(&lr_up)?;
    let item_shape = codec.latent_shape(set.lr_up[0].shape())?;
    let noise = Tensor::cat(&(0..set.len()).map(|i| eval_noise(&item_shape, cfg.seed, i)).collect::<Vec<_>>())?;
    let z_t = s.init_state(&zy, &noise)?;
    let (_, trace) = teacher_sample(&teacher, &z_t, &zy, &s, cfg.eval.teacher_mode, true)?;
    let mut trace = trace.expect("trace was requested");
    trace.decode_with(&codec)?;
    let rep = analyze_steps(&trace, &codec, a.rho, a.lowpass_frac, a.domain)?;
    let summary = analysis_summary(&rep, set.len());
    info!(
        "spearman {:.3}, low-pass slope ratio {:.3}",
        summary.spearman_progress_hf, summary.slope_ratio
    );
    dir.write_json("spectrum.json", &rep)?;
    dir.write_json("analysis_summary.json", &summary)?;
    render_analysis(dir, &rep, &trace.steps.iter().filter_map(|st| st.decoded.as_ref()).collect::<Vec<_>>(), a.render)?;
    Ok(())
}

fn render_analysis<T: Scalar>(dir: &RunDir, rep: &SpectrumReport, decoded: &[&Tensor<T>], render: usize) -> Result<(), CliError> {
    let fig = dir.join("figures");
    std::fs::create_dir_all(&fig)?;
    viz::save_line_plot(&[(&rep.hf_ratio, [200, 30, 30]), (&rep.lowpass_hf_ratio, [30, 30, 200])], &fig.join("hf_trajectory.png"))?;
    let spectra: Vec<&Tensor<f64>> = rep.spectra.iter().collect();
    let diffs: Vec<&Tensor<f64>> = rep.diff_maps.iter().collect();
    let lows: Vec<&Tensor<f64>> = rep.lowpass.iter().collect();
    let preds: Vec<Tensor<f64>> = decoded.iter().map(|d| d.cast()).collect();
    let preds: Vec<&Tensor<f64>> = preds.iter().collect();
    let n = spectra.first().map_or(0, |t| t.batch());
    for i in 0..render.min(n) {
        viz::save_strip(&spectra, i, false, &fig.join(format!("spectra_{i:02}.png")))?;
        if !diffs.is_empty() {
            viz::save_strip(&diffs, i, true, &fig.join(format!("spectral_diff_{i:02}.png")))?;
        }
        if rep.domain == onestep::evalkit::AnalysisDomain::Pixels {
            viz::save_image_strip(&lows, i, &fig.join(format!("lowpass_{i:02}.png")))?;
            if !preds.is_empty() {
                viz::save_image_strip(&preds, i, &fig.join(format!("x0_hat_{i:02}.png")))?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    label: String,
    weights: LossWeights,
    psnr: f64,
    ssim: f64,
    semantic_consistency: f64,
    /// PSNR change relative to the distillation-only row.
    delta_psnr: f64,
    delta_ssim: f64,
    delta_semantic_consistency: f64,
}

fn ablate_cmd<T: Scalar>(cfg: &ExperimentConfig, dir: &RunDir, teacher: &Path) -> Result<(), CliError> {
    let s = cfg.schedule.build()?;
    let (codec, teacher) = load_trained::<T>(cfg, teacher)?;
    let ds = open_dataset::<T>(&cfg.data.train_dir, cfg)?;
    let set = eval_set::<T>(cfg, None)?;
    let emb = embedder::<T>(cfg)?;
    let full = cfg.train.weights;
    let mut reports = Vec::new();
    for (label, on) in ABLATIONS {
        let mut c = cfg.clone();
        c.train.weights = LossWeights {
            lambda_hfp: if on[0] { full.lambda_hfp } else { 0.0 },
            lambda_sd: if on[1] { full.lambda_sd } else { 0.0 },
            lambda_adv: if on[2] { full.lambda_adv } else { 0.0 },
        };
        let sub = dir.join(label);
        std::fs::create_dir_all(&sub)?;
        std::fs::write(sub.join("config.toml"), c.to_toml())?;
        info!("ablation {label}: {:?}", c.train.weights);
        let student = distill_into(&c, &sub, &codec, &teacher, &ds, None)?;
        let r = evaluate(label, &Method::Student(&student), &codec, &s, &emb, &set, cfg.seed)?.with_config(c.to_json());
        write_report(&dir.path, label, &r)?;
        reports.push((c.train.weights, r));
    }
    let base = reports[0].1.mean.clone();
    let rows: Vec<AblationRow> = reports
        .iter()
        .map(|(w, r)| AblationRow {
            label: r.method.clone(),
            weights: *w,
            psnr: r.mean.psnr,
            ssim: r.mean.ssim,
            semantic_consistency: r.mean.semantic_consistency,
            delta_psnr: r.mean.psnr - base.psnr,
            delta_ssim: r.mean.ssim - base.ssim,
            delta_semantic_consistency: r.mean.semantic_consistency - base.semantic_consistency,
        })
        .collect();
    dir.write_json("ablation_summary.json", &rows)?;
    Ok(())
}
