//! Batch front end: one subcommand per pipeline stage, file in, file out.
//!
//! Every run writes `<command>.manifest.json` next to its outputs. Exit
//! codes: 0 success, 2 invalid input, 3 non-convergence, 4 I/O.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::correlator::{
    background_correct, coincidence_histogram,
    io::{read_curve, write_curve, write_time_tags},
    normalize, signal_fraction,
};
use crate::error::{from_toml, Error, Result};
use crate::fitkit::{
    self, fit_amplitude_vs_power, fit_g2, fit_linewidth_vs_power, fit_lorentzians, fit_saturation,
    global_photophysics_fit,
    io::{read_fit, read_json, read_saturation_csv, write_json, SeriesManifest},
    FitResult, G2FitOptions, GlobalFitOptions, LorentzianOptions, OdmrSpectrum, PeakTable,
    SaturationIntensity, SeriesPoint,
};
use crate::ratemodel::{
    g2_parameters, rates_from_limits_3level, simulate_photon_stream, LevelModel,
    PhotophysicsLimits, RateCoefficients, StreamConfig,
};
use crate::spinsim::{decompose_spectrum, linewidth_scan, odmr_sweep, SimConfig};

/// Pump rate per unit intensity: `k_ge = κ·I`, ns⁻¹ per kW/cm².
pub const DEFAULT_KAPPA: f64 = 0.019048 / 44.0;

#[derive(Debug, Parser)]
#[command(
    name = "colorcenter",
    version,
    about = "Photophysics and ODMR pipeline for single spin-3/2 emitters"
)]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "COLORCENTER_OUT", default_value = ".")]
    pub out: PathBuf,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum Levels {
    #[value(name = "3")]
    Three,
    #[value(name = "4")]
    Four,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate an HBT time-tag stream and its g² curve from a TOML config.
    SimulateG2 {
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit one g² curve CSV.
    FitG2 {
        curve: PathBuf,
        #[arg(long)]
        free_visibility: bool,
        /// Known zero-delay offset, ns.
        #[arg(long)]
        fixed_tau0: Option<f64>,
        /// Compare the model at bin centers instead of bin averages.
        #[arg(long)]
        no_bin_average: bool,
    },
    /// Joint fit of an intensity series listed in a JSON manifest.
    GlobalFit {
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "3")]
        levels: Levels,
        /// Saturation intensity, kW/cm².
        #[arg(long, default_value_t = 44.0)]
        i0: f64,
        /// Fit I₀ in the four-level model instead of fixing it.
        #[arg(long)]
        free_i0: bool,
        #[arg(long, default_value_t = 785.0)]
        wavelength_nm: f64,
        /// Per-curve fits with free dip visibility.
        #[arg(long)]
        free_visibility: bool,
    },
    /// Fit the PL saturation law to `intensity_kw_cm2,signal_cps,background_cps`.
    FitSaturation { data: PathBuf },
    /// Simulated ODMR spectra, one CSV per Ω₁, plus a peak table.
    SimulateOdmr { config: PathBuf },
    /// Lorentzian decomposition of a spectrum CSV, or of a power series
    /// manifest (JSON) followed by the amplitude and linewidth power laws.
    FitOdmr {
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        peaks: usize,
    },
    /// Linewidth against Ω₁ from simulated spectra.
    LinewidthScan { config: PathBuf },
    /// Re-run the command recorded in a run manifest.
    Replay { manifest: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SimulateG2 { .. } => "simulate-g2",
            Command::FitG2 { .. } => "fit-g2",
            Command::GlobalFit { .. } => "global-fit",
            Command::FitSaturation { .. } => "fit-saturation",
            Command::SimulateOdmr { .. } => "simulate-odmr",
            Command::FitOdmr { .. } => "fit-odmr",
            Command::LinewidthScan { .. } => "linewidth-scan",
            Command::Replay { .. } => "replay",
        }
    }
}

/// Provenance of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<PathBuf>,
    /// Resolved configuration, including the argument vector under `argv`.
    pub parameters: serde_json::Value,
    pub seed: Option<u64>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
}

/// Outcome of a command before it is mapped to an exit code.
#[derive(Debug)]
pub enum Outcome {
    Done,
    /// Results were written but a fit did not converge.
    NotConverged(String),
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => 4,
        Error::NonConvergence { .. } | Error::RankDeficient { .. } | Error::Integration(_) => 3,
        _ => 2,
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with_args<I: IntoIterator<Item = String>>(argv: I) -> i32 {
    let argv: Vec<String> = argv.into_iter().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    if let Some(n) = cli.jobs {
        // a second build in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    match execute(&cli, &argv[1..]) {
        Ok(Outcome::Done) => 0,
        Ok(Outcome::NotConverged(what)) => {
            eprintln!("error: {what} did not converge; diagnostics were written");
            3
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

struct Run<'a> {
    out: &'a Path,
    manifest: RunManifest,
}

impl<'a> Run<'a> {
    fn new(out: &'a Path, command: &str, args: &[String]) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(Self {
            out,
            manifest: RunManifest {
                command: command.into(),
                inputs: Vec::new(),
                parameters: json!({ "argv": args }),
                seed: None,
                outputs: Vec::new(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
            },
        })
    }

    fn input(&mut self, p: &Path) {
        self.manifest.inputs.push(p.to_path_buf());
    }

    fn param<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        let v = serde_json::to_value(value).map_err(|e| Error::Serde(e.to_string()))?;
        self.manifest.parameters[key] = v;
        Ok(())
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        info!("writing {}", p.display());
        self.manifest.outputs.push(PathBuf::from(name));
        p
    }

    fn finish(self) -> Result<()> {
        let p = self
            .out
            .join(format!("{}.manifest.json", self.manifest.command));
        write_json(&p, &self.manifest)
    }
}

fn execute(cli: &Cli, args: &[String]) -> Result<Outcome> {
    let mut run = Run::new(&cli.out, cli.command.name(), args)?;
    let outcome = match &cli.command {
        Command::SimulateG2 { config, seed } => simulate_g2(&mut run, config, *seed)?,
        Command::FitG2 {
            curve,
            free_visibility,
            fixed_tau0,
            no_bin_average,
        } => {
            let opts = G2FitOptions {
                free_visibility: *free_visibility,
                fixed_tau0: *fixed_tau0,
                bin_average: !no_bin_average,
                ..Default::default()
            };
            fit_g2_file(&mut run, curve, &opts)?
        }
        Command::GlobalFit {
            manifest,
            levels,
            i0,
            free_i0,
            wavelength_nm,
            free_visibility,
        } => {
            let opts = GlobalFitOptions {
                model: match levels {
                    Levels::Three => LevelModel::ThreeLevel,
                    Levels::Four => LevelModel::FourLevel,
                },
                i0_sat: if *free_i0 {
                    SaturationIntensity::Free(*i0)
                } else {
                    SaturationIntensity::Shared(*i0)
                },
                wavelength_nm: *wavelength_nm,
                ..Default::default()
            };
            global_fit(&mut run, manifest, &opts, *free_visibility)?
        }
        Command::FitSaturation { data } => {
            run.input(data);
            let fit = fit_saturation(&read_saturation_csv(data)?)?;
            write_fit_checked(&mut run, "saturation_fit.json", &fit)?
        }
        Command::SimulateOdmr { config } => simulate_odmr(&mut run, config)?,
        Command::FitOdmr { input, peaks } => fit_odmr(&mut run, input, *peaks)?,
        Command::LinewidthScan { config } => scan(&mut run, config)?,
        Command::Replay { manifest } => {
            let m: RunManifest = read_json(manifest)?;
            let argv = m.parameters["argv"]
                .as_array()
                .ok_or_else(|| Error::Configuration("manifest has no argv".into()))?
                .iter()
                .map(|v| v.as_str().map(String::from))
                .collect::<Option<Vec<String>>>()
                .ok_or_else(|| Error::Configuration("argv must be strings".into()))?;
            let mut full = vec!["colorcenter".to_string()];
            let mut skip = false;
            for a in argv {
                if std::mem::take(&mut skip) {
                    continue;
                }
                if a == "--out" {
                    skip = true;
                } else if !a.starts_with("--out=") {
                    full.push(a);
                }
            }
            full.push(format!("--out={}", cli.out.display()));
            let inner =
                Cli::try_parse_from(&full).map_err(|e| Error::Configuration(e.to_string()))?;
            if matches!(inner.command, Command::Replay { .. }) {
                return Err(Error::Configuration(
                    "a replay manifest cannot be replayed".into(),
                ));
            }
            return execute(&inner, &full[1..]);
        }
    };
    run.finish()?;
    Ok(outcome)
}

fn write_fit_checked(run: &mut Run, name: &str, fit: &FitResult) -> Result<Outcome> {
    for w in &fit.warnings {
        warn!("{name}: {w}");
    }
    fitkit::io::write_fit(&run.path(name), fit)?;
    Ok(if fit.converged {
        Outcome::Done
    } else {
        Outcome::NotConverged(name.into())
    })
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map_or("input".into(), |s| s.to_string_lossy().into_owned())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagsFormat {
    #[default]
    Binary,
    Csv,
    None,
}

/// Rates in ns⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    pub k_ge: f64,
    pub k_eg: f64,
    pub k_es: f64,
    pub k_sg: f64,
}

/// Three-level rates from asymptotic limits, pumped at one intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsSection {
    pub tau1_0: f64,
    pub tau2_inf: f64,
    pub c_inf: f64,
    pub intensity_kw_cm2: f64,
    /// ns⁻¹ per kW/cm².
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}
fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}

/// `simulate-g2` configuration.
///
/// ```toml
/// seed = 7
/// duration_s = 20.0
/// bin_width_ps = 100
/// max_delay_ns = 500.0
/// background_rates = [251.0, 129.0]
///
/// [photophysics]
/// tau1_0 = 7.5
/// tau2_inf = 17.2
/// c_inf = 6.0
/// intensity_kw_cm2 = 44.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct G2SimConfig {
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default = "one")]
    pub detection_efficiency: f64,
    #[serde(default)]
    pub background_rates: [f64; 2],
    #[serde(default = "half")]
    pub split: f64,
    #[serde(default)]
    pub channel_offset_ps: i64,
    pub bin_width_ps: u64,
    pub max_delay_ns: f64,
    #[serde(default)]
    pub tags_format: TagsFormat,
    /// Remove the known detector background from the curve.
    #[serde(default)]
    pub background_correct: bool,
    #[serde(default)]
    pub rates: Option<RatesSection>,
    #[serde(default)]
    pub photophysics: Option<LimitsSection>,
}

impl G2SimConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        from_toml(&text, path)
    }

    pub fn rate_coefficients(&self) -> Result<RateCoefficients> {
        match (self.rates, self.photophysics) {
            (Some(r), None) => RateCoefficients::new(r.k_ge, r.k_eg, r.k_es, r.k_sg),
            (None, Some(l)) => {
                if !(l.intensity_kw_cm2 >= 0.0 && l.kappa > 0.0) {
                    return Err(Error::domain(
                        "intensity must be nonnegative and kappa positive",
                    ));
                }
                rates_from_limits_3level(&PhotophysicsLimits::three_level(
                    l.tau1_0, l.tau2_inf, l.c_inf,
                ))?
                .with_pump(l.kappa * l.intensity_kw_cm2)
            }
            _ => Err(Error::Configuration(
                "give exactly one of [rates] or [photophysics]".into(),
            )),
        }
    }

    pub fn stream_config(&self) -> StreamConfig {
        StreamConfig {
            duration_s: self.duration_s,
            detection_efficiency: self.detection_efficiency,
            background_rates: self.background_rates,
            split: self.split,
            channel_offset_ps: self.channel_offset_ps,
            seed: self.seed,
        }
    }
}

fn simulate_g2(run: &mut Run, config: &Path, seed: Option<u64>) -> Result<Outcome> {
    run.input(config);
    let mut cfg = G2SimConfig::read(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let rc = cfg.rate_coefficients()?;
    let sc = cfg.stream_config();
    sc.validate()?;
    run.param("config", &cfg)?;
    run.param("rates", &rc)?;
    run.manifest.seed = Some(cfg.seed);

    let stream = simulate_photon_stream(&rc, &sc)?;
    match cfg.tags_format {
        TagsFormat::Binary => write_time_tags(&run.path("tags.ttag"), &stream)?,
        TagsFormat::Csv => write_time_tags(&run.path("tags.csv"), &stream)?,
        TagsFormat::None => {}
    }
    let hist = coincidence_histogram(&stream, cfg.bin_width_ps, cfg.max_delay_ns)?;
    let mut curve = normalize(&hist)?;
    if cfg.background_correct {
        let r = stream.rates();
        let rho: Vec<f64> = (0..2)
            .map(|k| {
                signal_fraction(
                    (r[k] - cfg.background_rates[k]).max(0.0),
                    cfg.background_rates[k],
                )
            })
            .collect();
        curve = background_correct(&curve, (rho[0] * rho[1]).sqrt())?;
    }
    write_curve(&run.path("g2.csv"), &curve)?;
    run.manifest.outputs.push("g2.json".into());

    // generating model at the bin centers, for plotting against the data
    let (t1, t2, c) = g2_parameters(&rc)?;
    let mut text = String::from("delay_ns,g2_model\n");
    for &d in &curve.delays_ns {
        text.push_str(&format!(
            "{:e},{:e}\n",
            d,
            crate::ratemodel::g2_analytic(t1, t2, c, d)
        ));
    }
    let p = run.path("g2_model.csv");
    fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    Ok(Outcome::Done)
}

fn fit_g2_file(run: &mut Run, curve: &Path, opts: &G2FitOptions) -> Result<Outcome> {
    run.input(curve);
    run.param("free_visibility", &opts.free_visibility)?;
    run.param("fixed_tau0", &opts.fixed_tau0)?;
    run.param("bin_average", &opts.bin_average)?;
    let fit = fit_g2(&read_curve(curve)?, opts)?;
    write_fit_checked(run, &format!("{}.fit.json", stem(curve)), &fit)
}

fn global_fit(
    run: &mut Run,
    manifest: &Path,
    opts: &GlobalFitOptions,
    free_visibility: bool,
) -> Result<Outcome> {
    run.input(manifest);
    let m = SeriesManifest::read(manifest)?;
    let g2_opts = G2FitOptions {
        free_visibility,
        ..Default::default()
    };
    let mut series = Vec::new();
    let mut per_curve = Vec::new();
    for e in &m.entries {
        run.input(&e.file);
        let intensity = e.intensity_kw_cm2.ok_or_else(|| {
            Error::Configuration(format!(
                "{}: intensity_kw_cm2 missing in manifest",
                e.file.display()
            ))
        })?;
        let fit = if e.file.extension().is_some_and(|x| x == "json") {
            read_fit(&e.file)?
        } else {
            fit_g2(&read_curve(&e.file)?, &g2_opts)?
        };
        per_curve.push(json!({ "file": e.file, "intensity_kw_cm2": intensity, "fit": fit }));
        series.push(SeriesPoint { intensity, fit });
    }
    run.param("model", &opts.model)?;
    run.param("i0_sat", &opts.i0_sat)?;
    run.param("wavelength_nm", &opts.wavelength_nm)?;
    let fit = global_photophysics_fit(&series, opts)?;
    write_json(&run.path("per_curve_fits.json"), &per_curve)?;
    write_fit_checked(run, "global_fit.json", &fit)
}

fn simulate_odmr(run: &mut Run, config: &Path) -> Result<Outcome> {
    run.input(config);
    let cfg = SimConfig::read(config)?;
    run.param("config", &cfg)?;
    let freqs = cfg.grid.points()?;
    let diss = cfg.dissipators();
    let mut rows = Vec::new();
    for &w1 in &cfg.omega1_mhz {
        let spec = odmr_sweep(&freqs, &cfg.drive(w1), &diss, &cfg.sweep_options())?;
        spec.write_csv(&run.path(&format!("odmr_omega1_{w1}.csv")))?;
        if w1 > 0.0 {
            rows.push(decompose_spectrum(w1, &spec, cfg.d_mhz));
        }
    }
    write_json(&run.path("peaks.json"), &rows)?;
    Ok(Outcome::Done)
}

fn scan(run: &mut Run, config: &Path) -> Result<Outcome> {
    run.input(config);
    let cfg = SimConfig::read(config)?;
    run.param("config", &cfg)?;
    let s = linewidth_scan(
        &cfg.omega1_mhz,
        &cfg.grid.points()?,
        &cfg.drive(0.0),
        &cfg.dissipators(),
        &cfg.sweep_options(),
    )?;
    let mut text = String::from("omega1_mhz,lw_1photon_mhz,lw_2photon_mhz,flag\n");
    for r in &s.rows {
        let f = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:e}"));
        let flag = r.flag.clone().unwrap_or_default().replace(',', ";");
        text.push_str(&format!(
            "{:e},{},{},{}\n",
            r.omega1_mhz,
            f(r.one_photon_fwhm),
            f(r.two_photon_fwhm),
            flag
        ));
    }
    let p = run.path("linewidths.csv");
    fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    write_json(&run.path("linewidth_scan.json"), &s)?;
    let ok = s.one_photon.converged && s.two_photon.converged;
    Ok(if ok {
        Outcome::Done
    } else {
        Outcome::NotConverged("linewidth fit".into())
    })
}

/// Per-spectrum peaks of an RF power series and the power-law fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdmrSeriesFit {
    pub rf_power_w: Vec<f64>,
    pub peaks: Vec<PeakTable>,
    /// Peak 1 (`c = 1`) and peak 2 (`c = 2`).
    pub amplitude: Vec<FitResult>,
    pub linewidth: Vec<FitResult>,
}

fn fit_odmr(run: &mut Run, input: &Path, peaks: usize) -> Result<Outcome> {
    run.input(input);
    run.param("peaks", &peaks)?;
    let opts = LorentzianOptions::default();
    if input.extension().is_some_and(|x| x == "json") {
        let m = SeriesManifest::read(input)?;
        let mut power = Vec::new();
        let mut tables = Vec::new();
        for e in &m.entries {
            run.input(&e.file);
            let spec = OdmrSpectrum::read_csv(&e.file)?;
            let p = e.rf_power_w.or(spec.rf_power_w).ok_or_else(|| {
                Error::Configuration(format!("{}: rf_power_w missing", e.file.display()))
            })?;
            let fit = fit_lorentzians(&spec, e.n_peaks.unwrap_or(peaks), &opts)?;
            power.push(p);
            tables.push(PeakTable::from_fit(&fit));
        }
        let mut amplitude = Vec::new();
        let mut linewidth = Vec::new();
        for (k, c) in [(0usize, 1u32), (1, 2)] {
            let a: Vec<f64> = tables.iter().map(|t| t.amplitudes[k]).collect();
            let w: Vec<f64> = tables.iter().map(|t| t.fwhm[k]).collect();
            let sw: Vec<f64> = tables.iter().map(|t| t.fwhm_sigma[k].max(1e-6)).collect();
            // amplitudes are weighted equally; their scatter sets the error
            let sa = vec![1.0; a.len()];
            let mut af = fit_amplitude_vs_power(&power, &a, &sa, c)?;
            rescale_to_scatter(&mut af);
            amplitude.push(af);
            linewidth.push(fit_linewidth_vs_power(&power, &w, &sw)?);
        }
        let converged = amplitude.iter().chain(&linewidth).all(|f| f.converged);
        let result = OdmrSeriesFit {
            rf_power_w: power,
            peaks: tables,
            amplitude,
            linewidth,
        };
        write_json(&run.path("odmr_series_fit.json"), &result)?;
        Ok(if converged {
            Outcome::Done
        } else {
            Outcome::NotConverged("power-law fit".into())
        })
    } else {
        let spec = OdmrSpectrum::read_csv(input)?;
        let fit = fit_lorentzians(&spec, peaks, &opts)?;
        write_fit_checked(run, &format!("{}.fit.json", stem(input)), &fit)
    }
}

/// Scales the covariance by the reduced χ² of a unit-weight fit.
fn rescale_to_scatter(f: &mut FitResult) {
    let s = f.reduced_chi_square();
    for row in &mut f.covariance {
        for v in row.iter_mut() {
            *v *= s;
        }
    }
    for p in &mut f.parameters {
        p.uncertainty *= s.sqrt();
    }
    f.uncertainty_model = "covariance scaled by reduced chi-square".into();
}
