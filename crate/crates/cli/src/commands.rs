use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, ValueEnum};
use ihi_core::calibrate::{calibrate_all, synthetic_calibration_set, CalibrationSet};
use ihi_core::cube::{
    read_cube, resample_hsi_to_wavenumber, resample_wavenumber_to_hsi, write_cube, AxisKind, Cube, Dtype,
    InstrumentProfile,
};
use ihi_core::degrade::{
    degrade_with, synthetic_params, synthetic_truth, DegradationParams, NoiseMode, SyntheticParamsConfig,
};
use ihi_core::evaluate::{evaluate_run, psnr, ssim, EvalConfig, EvalMethod, SsimOptions};
use ihi_core::reconstruct::{Alpha, BackgroundMode, Method, PriorSpec, Reconstructor, UnfoldConfig};
use ihi_core::rng::RngHandle;
use ihi_core::synthesize::{self, photometric_scale, synthetic_scene, DatasetConfig};
use ihi_core::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::{digest, Failure};

/// What a subcommand reports: a JSON result and the same facts as table rows.
pub struct Outcome {
    pub command: &'static str,
    pub config_digest: String,
    pub result: Value,
    pub rows: Vec<(String, String)>,
    pub status: std::result::Result<(), Failure>,
}

impl Outcome {
    fn ok(command: &'static str, config_digest: String, result: Value, rows: Vec<(String, String)>) -> Self {
        Self {
            command,
            config_digest,
            result,
            rows,
            status: Ok(()),
        }
    }

    /// Writes to stdout. A closed pipe is not an error.
    pub fn print(&self, as_json: bool) {
        let _ = self.write(&mut std::io::stdout().lock(), as_json);
    }

    fn write(&self, out: &mut impl Write, as_json: bool) -> std::io::Result<()> {
        if as_json {
            let v = json!({
                "command": self.command,
                "config_digest": self.config_digest,
                "result": self.result,
            });
            return writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("serializable"));
        }
        let width = self.rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0).max(13);
        writeln!(out, "{:width$}  {}", "config digest", self.config_digest)?;
        for (k, v) in &self.rows {
            writeln!(out, "{k:width$}  {v}")?;
        }
        Ok(())
    }
}

fn row(k: impl Into<String>, v: impl ToString) -> (String, String) {
    (k.into(), v.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileArg {
    /// 64 columns, 64 OPD samples, 16 wavelengths.
    Desk,
    /// 2048 columns, 256 OPD samples, 70 wavelengths.
    Standard,
}

impl ProfileArg {
    pub fn build(self, rows: usize, width: Option<usize>) -> Arc<InstrumentProfile> {
        let p = match self {
            ProfileArg::Desk => InstrumentProfile::desk().with_rows(rows),
            ProfileArg::Standard => InstrumentProfile::standard(rows),
        };
        Arc::new(match width {
            Some(w) => p.with_width(w),
            None => p,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DtypeArg {
    F32,
    F64,
}

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Self {
        match d {
            DtypeArg::F32 => Dtype::F32,
            DtypeArg::F64 => Dtype::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    /// Pseudo-inverse of the calibrated imaging operator.
    Fprime,
    /// Flat-field, apodize, cosine fit, divide by |A|.
    Traditional,
    /// Unrolled gradient steps alternating with a prior.
    Unfold,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MethodArgs {
    #[arg(long, value_enum, default_value_t = MethodKind::Fprime)]
    pub method: MethodKind,
    /// identity, soft:<tau>, tv:<lambda>[:<iters>], tv-auto:<factor>[:<iters>] or external:<cmd> [args]
    #[arg(long, default_value = "identity")]
    pub prior: PriorSpec,
    #[arg(long, default_value_t = 5)]
    pub stages: usize,
    /// Scalar step weight.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long)]
    pub momentum: bool,
    /// none, dark or dark+background; used by unfold.
    #[arg(long, default_value = "dark")]
    pub background: BackgroundMode,
}

impl MethodArgs {
    pub fn unfold_config(&self) -> UnfoldConfig {
        UnfoldConfig {
            stages: self.stages,
            alpha: Alpha::Scalar(self.alpha),
            prior: self.prior.clone(),
            background: self.background,
            momentum: self.momentum,
        }
    }

    pub fn method(&self) -> Method {
        match self.method {
            MethodKind::Fprime => Method::Fprime,
            MethodKind::Traditional => Method::Traditional,
            MethodKind::Unfold => Method::Unfold(self.unfold_config()),
        }
    }

    fn check(&self) -> std::result::Result<(), Failure> {
        if self.method != MethodKind::Unfold {
            return Ok(());
        }
        if self.stages == 0 {
            return Err(Failure::Usage("--stages must be at least 1".into()));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Failure::Usage(format!("--alpha must be finite and >= 0, got {}", self.alpha)));
        }
        self.prior.validate().map_err(|e| Failure::Usage(e.to_string()))
    }
}

/// Restricts parameters to the detector columns an input covers.
fn window(params: DegradationParams, offset: Option<usize>, width: usize) -> Result<DegradationParams> {
    if offset.is_none() && width == params.width() {
        return Ok(params);
    }
    params.column_window(offset.unwrap_or(0), width)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn fmt_db(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.2} dB")
    } else {
        "inf".into()
    }
}

fn db_json(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!("inf")
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Wavelength-domain cube.
    #[arg(long)]
    #[serde(skip)]
    pub input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub params: PathBuf,
    /// Interferogram output.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Also write the wavelength cube a perfect reconstruction would return.
    #[arg(long)]
    #[serde(skip)]
    pub reference_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scale the input so its in-band wavenumber mean equals this rate.
    #[arg(long)]
    pub target_rate: Option<f64>,
    /// Skip photon, gain and read noise.
    #[arg(long)]
    pub deterministic: bool,
    /// First detector column when the input is narrower than the detector.
    #[arg(long)]
    pub column_offset: Option<usize>,
    #[arg(long, value_enum, default_value_t = DtypeArg::F64)]
    pub dtype: DtypeArg,
}

pub fn simulate(a: &SimulateArgs) -> std::result::Result<Outcome, Failure> {
    let inputs = [("input", digest::file(&a.input)?), ("params", digest::dir(&a.params)?)];
    let cfg_digest = digest::config("simulate", a, &inputs);
    let hsi = read_cube(&a.input)?;
    hsi.require_axis(AxisKind::Wavelength)?;
    let params = window(DegradationParams::load(&a.params)?, a.column_offset, hsi.dim().1)?;
    let (hsi, factor) = match a.target_rate {
        Some(rate) => {
            let (scaled, rec) = photometric_scale(&hsi, rate)?;
            (scaled, rec.factor)
        }
        None => (hsi, 1.0),
    };
    let gt_nu = resample_hsi_to_wavenumber(&hsi)?;
    let mode = if a.deterministic {
        NoiseMode::Deterministic
    } else {
        NoiseMode::Stochastic
    };
    log::info!("degrading {:?} cube", hsi.dim());
    let y = degrade_with(&gt_nu, &params, &RngHandle::new(a.seed), mode)?;
    write_cube(&y, &a.out, a.dtype.into())?;
    if let Some(path) = &a.reference_out {
        write_cube(&resample_wavenumber_to_hsi(&gt_nu)?, path, Dtype::F64)?;
    }
    let (h, w, l) = y.dim();
    Ok(Outcome::ok(
        "simulate",
        cfg_digest,
        json!({ "shape": [h, w, l], "scale_factor": factor, "output": a.out }),
        vec![
            row("interferogram", format!("{h} x {w} x {l}")),
            row("scale factor", factor),
            row("written", a.out.display()),
        ],
    ))
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    /// Directory holding dark, relative and absolute captures.
    #[arg(long)]
    #[serde(skip)]
    pub captures: PathBuf,
    /// Parameter directory to write.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// JSON report path.
    #[arg(long)]
    #[serde(skip)]
    pub report: Option<PathBuf>,
    /// Known parameters to score the estimate against.
    #[arg(long)]
    #[serde(skip)]
    pub truth: Option<PathBuf>,
    /// Electronic gain spread recorded with the parameters.
    #[arg(long, default_value_t = 0.0)]
    pub e: f64,
}

pub fn calibrate(a: &CalibrateArgs) -> std::result::Result<Outcome, Failure> {
    let mut inputs = vec![("captures", digest::dir(&a.captures)?)];
    if let Some(t) = &a.truth {
        inputs.push(("truth", digest::dir(t)?));
    }
    let cfg_digest = digest::config("calibrate", a, &inputs);
    if !(a.e.is_finite() && a.e >= 0.0) {
        return Err(Failure::Usage(format!("--e must be finite and >= 0, got {}", a.e)));
    }
    let set = CalibrationSet::load(&a.captures)?;
    let (params, mut report) = calibrate_all(&set, a.e)?;
    if let Some(t) = &a.truth {
        report.compare_with(&params, &DegradationParams::load(t)?);
    }
    params.save(&a.out)?;
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    let mut rows = Vec::new();
    for (stage, s) in &report.stages {
        let err = s.median_rel_err.map(|e| format!(", median rel err {:.3}%", 100.0 * e));
        rows.push(row(format!("stage {stage}"), format!("{} invalid{}", s.invalid_count, err.unwrap_or_default())));
    }
    rows.push(row("written", a.out.display()));
    Ok(Outcome::ok(
        "calibrate",
        cfg_digest,
        serde_json::to_value(&report).expect("serializable"),
        rows,
    ))
}

#[derive(Debug, Args, Serialize)]
pub struct MakeDatasetArgs {
    /// Directory of wavelength-domain source cubes.
    #[arg(long)]
    #[serde(skip)]
    pub sources: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub params: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub patch: usize,
    /// Defaults to the patch size.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, default_value_t = synthesize::DEFAULT_TARGET_RATE)]
    pub target_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Source file stems kept whole for the test split.
    #[arg(long, value_delimiter = ',')]
    pub test_sources: Vec<String>,
    #[arg(long)]
    pub max_patches: Option<usize>,
    #[arg(long, value_enum, default_value_t = DtypeArg::F32)]
    pub dtype: DtypeArg,
}

pub fn make_dataset(a: &MakeDatasetArgs) -> std::result::Result<Outcome, Failure> {
    let inputs = [("sources", digest::dir(&a.sources)?), ("params", digest::dir(&a.params)?)];
    let cfg_digest = digest::config("make-dataset", a, &inputs);
    let params = DegradationParams::load(&a.params)?;
    let cfg = DatasetConfig {
        patch_h: a.patch,
        patch_w: a.patch,
        stride: a.stride.unwrap_or(a.patch),
        target_rate: a.target_rate,
        master_seed: a.seed,
        test_sources: a.test_sources.clone(),
        max_patches_per_image: a.max_patches,
        dtype: a.dtype.into(),
    };
    let manifest = synthesize::make_dataset(&a.sources, &params, &cfg, &a.out)?;
    let count = |s| manifest.samples.iter().filter(|e| e.split == s).count();
    let (train, test) = (count(synthesize::Split::Train), count(synthesize::Split::Test));
    Ok(Outcome::ok(
        "make-dataset",
        cfg_digest,
        json!({ "train": train, "test": test, "output": a.out }),
        vec![row("train samples", train), row("test scenes", test), row("written", a.out.display())],
    ))
}

#[derive(Debug, Args, Serialize)]
pub struct ReconstructArgs {
    /// Interferogram cube.
    #[arg(long)]
    #[serde(skip)]
    pub input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub params: PathBuf,
    /// Wavelength-domain output.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Wavelength cube to score the output against.
    #[arg(long)]
    #[serde(skip)]
    pub reference: Option<PathBuf>,
    #[command(flatten)]
    pub method: MethodArgs,
    /// First detector column when the input is narrower than the detector.
    #[arg(long)]
    pub column_offset: Option<usize>,
    #[arg(long, value_enum, default_value_t = DtypeArg::F32)]
    pub dtype: DtypeArg,
}

pub fn reconstruct(a: &ReconstructArgs) -> std::result::Result<Outcome, Failure> {
    a.method.check()?;
    let mut inputs = vec![("input", digest::file(&a.input)?), ("params", digest::dir(&a.params)?)];
    if let Some(r) = &a.reference {
        inputs.push(("reference", digest::file(r)?));
    }
    let cfg_digest = digest::config("reconstruct", a, &inputs);
    let y = read_cube(&a.input)?;
    y.require_axis(AxisKind::Opd)?;
    let params = window(DegradationParams::load(&a.params)?, a.column_offset, y.dim().1)?;
    let rec = Reconstructor::new(&params)?;
    let mut result = json!({ "method": a.method.method.to_possible_value().map(|v| v.get_name().to_owned()) });
    let mut rows = vec![row("method", result["method"].as_str().unwrap_or_default())];
    let x = match a.method.method() {
        Method::Unfold(cfg) => {
            let mut prior = cfg.prior.build().map_err(|source| Error::Prior { stage: 0, source })?;
            let out = rec.unfold(&y, &cfg, prior.as_mut())?;
            let last = out.trace.last().copied().unwrap_or(f64::NAN);
            rows.push(row("final fidelity", format!("{last:.6e}")));
            result["trace"] = json!(out.trace);
            out.hsi
        }
        m => rec.run(&y, &m)?,
    };
    write_cube(&x, &a.out, a.dtype.into())?;
    if let Some(path) = &a.reference {
        let reference = read_cube(path)?;
        let p = psnr(&x, &reference, None)?;
        result["psnr_db"] = db_json(p);
        rows.push(row("PSNR", fmt_db(p)));
        match ssim(&x, &reference, &SsimOptions::default()) {
            Ok(s) => {
                result["ssim"] = json!(s);
                rows.push(row("SSIM", format!("{s:.4}")));
            }
            Err(Error::Degenerate(msg)) => log::warn!("SSIM skipped: {msg}"),
            Err(e) => return Err(e.into()),
        }
    }
    let (h, w, c) = x.dim();
    result["shape"] = json!([h, w, c]);
    result["output"] = json!(a.out);
    rows.push(row("written", a.out.display()));
    Ok(Outcome::ok("reconstruct", cfg_digest, result, rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalKind {
    Fprime,
    Traditional,
    Unfold,
    /// Score the stored ground truth against itself.
    GroundTruth,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub dataset: PathBuf,
    /// JSON report path.
    #[arg(long)]
    #[serde(skip)]
    pub report: Option<PathBuf>,
    /// Write per-scene absolute error cubes here.
    #[arg(long)]
    #[serde(skip)]
    pub error_dir: Option<PathBuf>,
    #[arg(long = "method", value_enum, default_value_t = EvalKind::Fprime)]
    pub kind: EvalKind,
    #[command(flatten)]
    #[serde(flatten)]
    pub unfold: UnfoldArgs,
}

/// Unfolding knobs for `evaluate`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct UnfoldArgs {
    #[arg(long, default_value = "identity")]
    pub prior: PriorSpec,
    #[arg(long, default_value_t = 5)]
    pub stages: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long)]
    pub momentum: bool,
    #[arg(long, default_value = "dark")]
    pub background: BackgroundMode,
}

pub fn evaluate(a: &EvaluateArgs) -> std::result::Result<Outcome, Failure> {
    let method_args = MethodArgs {
        method: match a.kind {
            EvalKind::Traditional => MethodKind::Traditional,
            EvalKind::Unfold => MethodKind::Unfold,
            _ => MethodKind::Fprime,
        },
        prior: a.unfold.prior.clone(),
        stages: a.unfold.stages,
        alpha: a.unfold.alpha,
        momentum: a.unfold.momentum,
        background: a.unfold.background,
    };
    method_args.check()?;
    let manifest = a.dataset.join("manifest.json");
    let inputs = [("manifest", digest::file(&manifest)?), ("dataset", digest::dir(&a.dataset.join("test"))?)];
    let cfg_digest = digest::config("evaluate", a, &inputs);
    let method = match a.kind {
        EvalKind::GroundTruth => EvalMethod::GroundTruth,
        _ => EvalMethod::Reconstruct(method_args.method()),
    };
    let cfg = EvalConfig {
        method,
        ssim: SsimOptions::default(),
        error_dir: a.error_dir.clone(),
    };
    let report = evaluate_run(&a.dataset, &cfg)?;
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    let mut rows = vec![row("method", &report.method)];
    for s in &report.scenes {
        rows.push(row(
            format!("scene {:04} {}", s.index, s.source),
            format!("{}  SSIM {:.4}", fmt_db(s.psnr()), s.ssim),
        ));
    }
    let mean = report.mean_psnr_db.unwrap_or(f64::INFINITY);
    rows.push(row("mean", format!("{}  SSIM {:.4}", fmt_db(mean), report.mean_ssim)));
    rows.push(row("report digest", &report.digest));
    Ok(Outcome::ok(
        "evaluate",
        cfg_digest,
        serde_json::to_value(&report).expect("serializable"),
        rows,
    ))
}

#[derive(Debug, Args, Serialize)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthParamsArgs {
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[command(flatten)]
    pub params: ParamKnobs,
}

pub fn synth_params(a: &SynthParamsArgs) -> std::result::Result<Outcome, Failure> {
    let cfg_digest = digest::config("synth-params", a, &[]);
    let params = synthetic_params(a.params.profile()?, &a.params.config());
    params.validate()?;
    params.save(&a.out)?;
    Ok(Outcome::ok(
        "synth-params",
        cfg_digest,
        json!({ "width": params.width(), "output": a.out }),
        vec![row("columns", params.width()), row("written", a.out.display())],
    ))
}

#[derive(Debug, Args, Serialize)]
pub struct SynthCalibrationArgs {
    /// Capture directory to write.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Where to write the parameters the captures were made with.
    #[arg(long)]
    #[serde(skip)]
    pub truth_out: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamKnobs,
    #[arg(long, default_value_t = 1024)]
    pub rows: usize,
    /// Brightness of each capture pair, photoelectrons per sample.
    #[arg(long, value_delimiter = ',', default_values_t = [2e3, 5e3, 1e4])]
    pub levels: Vec<f64>,
}

/// Synthetic instrument settings.
#[derive(Debug, Args, Serialize)]
pub struct ParamKnobs {
    #[arg(long, value_enum, default_value_t = ProfileArg::Desk)]
    pub profile: ProfileArg,
    /// Detector columns; defaults to the profile's width.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Constant phase added to A, radians.
    #[arg(long, default_value_t = 0.0)]
    pub phase_offset: f64,
    #[arg(long, default_value_t = 5.0)]
    pub sigma_read: f64,
    #[arg(long, default_value_t = 0.0)]
    pub e: f64,
}

impl ParamKnobs {
    fn profile(&self) -> Result<Arc<InstrumentProfile>> {
        let p = self.profile.build(1, self.width);
        p.validate()?;
        Ok(p)
    }

    fn config(&self) -> SyntheticParamsConfig {
        SyntheticParamsConfig {
            seed: self.seed,
            sigma_read_mean: self.sigma_read,
            e: self.e,
            phase_offset: self.phase_offset,
            ..Default::default()
        }
    }
}

pub fn synth_calibration(a: &SynthCalibrationArgs) -> std::result::Result<Outcome, Failure> {
    let cfg_digest = digest::config("synth-calibration", a, &[]);
    let truth = synthetic_truth(a.params.profile()?, &a.params.config());
    let rng = RngHandle::new(a.params.seed);
    let set = synthetic_calibration_set(&truth.params, &truth.m_r, a.rows, &a.levels, &rng)?;
    set.validate()?;
    set.save(&a.out)?;
    if let Some(t) = &a.truth_out {
        truth.params.save(t)?;
    }
    Ok(Outcome::ok(
        "synth-calibration",
        cfg_digest,
        json!({ "levels": a.levels, "rows": a.rows, "output": a.out }),
        vec![row("levels", a.levels.len()), row("rows", a.rows), row("written", a.out.display())],
    ))
}

#[derive(Debug, Args, Serialize)]
pub struct SynthSceneArgs {
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ProfileArg::Desk)]
    pub profile: ProfileArg,
    #[arg(long, default_value_t = 32)]
    pub rows: usize,
    #[arg(long, default_value_t = 64)]
    pub cols: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn synth_scene(a: &SynthSceneArgs) -> std::result::Result<Outcome, Failure> {
    let cfg_digest = digest::config("synth-scene", a, &[]);
    if a.rows == 0 || a.cols == 0 {
        return Err(Failure::Usage("--rows and --cols must be positive".into()));
    }
    let profile = a.profile.build(a.rows, None);
    let scene: Cube = synthetic_scene(&profile, a.rows, a.cols, a.seed);
    write_cube(&scene, &a.out, Dtype::F64)?;
    Ok(Outcome::ok(
        "synth-scene",
        cfg_digest,
        json!({ "shape": [a.rows, a.cols, profile.n_lambda()], "output": a.out }),
        vec![row("scene", format!("{} x {} x {}", a.rows, a.cols, profile.n_lambda())), row("written", a.out.display())],
    ))
}
