use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use heraldsim::analysis::{fit_gaussian, heralded_profile, marginal_signal, DetectorSpec};
use heraldsim::experiment::{
    diffraction_limit, linspace, reproduce_fig2, reproduce_fig4, sweep, Pipeline, DEFAULT_FS_RANGE_MM,
    DEFAULT_HERALD_POSITIONS_UM, DEFAULT_SWEEP_POINTS,
};
use heraldsim::export::{
    num, write_fig2, write_fig4, write_fit_sidecar, write_limit, write_profile_csv, write_results_csv,
    write_sweep_plots,
};
use heraldsim::{default_lab_system, load_config, Error, GridSpec, OpticalSystem};

#[derive(Parser, Debug)]
#[command(name = "heraldsim", version, about = "Heralded imaging with spatially entangled photon pairs")]
struct Cli {
    /// TOML configuration; the laboratory system is used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One configuration: widths, transmissions and slope.
    Simulate(ScenarioArgs),
    /// Widths and transmissions over a range of signal focal lengths.
    Sweep(SweepArgs),
    /// Spot of a point source propagated through the signal arm.
    Limit(SystemArgs),
    /// Oracle, slope, normalization and invariance checks.
    Verify(SystemArgs),
    /// Output joint density, marginals, conditionals and contours.
    Fig2(SystemArgs),
    /// Mid-plane intensity and phase maps.
    Fig4(Fig4Args),
}

#[derive(Args, Debug)]
struct SystemArgs {
    /// Signal collimating lens focal length (sets its distance too).
    #[arg(long = "fs-mm", value_name = "F")]
    fs_mm: Option<f64>,
    /// Momentum correlation of the source.
    #[arg(long, value_name = "R", allow_negative_numbers = true)]
    rho: Option<f64>,
}

#[derive(Args, Debug)]
struct DetectorArgs {
    /// Point-like idler detector at X_UM.
    #[arg(long, value_name = "X_UM", allow_negative_numbers = true, conflicts_with = "fsd")]
    pld: Option<f64>,
    /// Finite idler detector, centre and diameter in um.
    #[arg(long, value_name = "CENTER_UM:DIAM_UM", allow_hyphen_values = true)]
    fsd: Option<String>,
}

impl DetectorArgs {
    fn detector(&self) -> Result<DetectorSpec, Error> {
        if let Some(spec) = &self.fsd {
            let (c, d) = spec
                .split_once(':')
                .ok_or_else(|| Error::InvalidArgument(format!("--fsd expects CENTER_UM:DIAM_UM, got `{spec}`")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("--fsd: `{v}` is not a number")))
            };
            return DetectorSpec::finite(parse(c)?, parse(d)?);
        }
        Ok(DetectorSpec::point(self.pld.unwrap_or(0.0)))
    }
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[command(flatten)]
    detector: DetectorArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Correlations to sweep; repeat for several. Default: 0 and 0.9.
    #[arg(long, value_name = "R", allow_negative_numbers = true)]
    rho: Vec<f64>,
    /// Number of focal lengths between 30 and 150 mm.
    #[arg(long, value_name = "N", default_value_t = DEFAULT_SWEEP_POINTS)]
    points: usize,
    #[command(flatten)]
    detector: DetectorArgs,
    /// Also write SVG charts.
    #[arg(long)]
    plot: bool,
}

#[derive(Args, Debug)]
struct Fig4Args {
    /// Signal focal lengths; repeat for several. Default: 30 and 150.
    #[arg(long = "fs-mm", value_name = "F")]
    fs_mm: Vec<f64>,
    #[arg(long, value_name = "R", allow_negative_numbers = true)]
    rho: Option<f64>,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(Error::Io(e))
    }
}

fn load(path: Option<&Path>) -> Result<(OpticalSystem, GridSpec), Failure> {
    match path {
        None => Ok((default_lab_system(30.0).with_rho(0.9), GridSpec::default())),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", p.display())))?;
            load_config(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))
        }
    }
}

fn apply(system: OpticalSystem, args: &SystemArgs) -> Result<OpticalSystem, Error> {
    let mut s = system;
    if let Some(f) = args.fs_mm {
        s = s.with_signal_focal(f);
    }
    if let Some(r) = args.rho {
        s = s.with_rho(r);
    }
    Ok(s.validated()?)
}

fn simulate(out: &Path, system: &OpticalSystem, grid: &GridSpec, args: &ScenarioArgs) -> Result<(), Failure> {
    let system = apply(*system, &args.system)?;
    let detector = args.detector.detector()?;
    let pipeline = Pipeline::new(&system, grid, None)?;
    let result = pipeline.scenario(&detector, &DEFAULT_HERALD_POSITIONS_UM)?;
    write_results_csv(&out.join("results.csv"), std::slice::from_ref(&result))?;

    let field = pipeline.output_field()?.normalize()?;
    for (name, profile) in [("nonheralded", marginal_signal(&field)?), ("heralded", heralded_profile(&field, &detector)?)] {
        let fit = fit_gaussian(&profile).map_err(|e| Error::Fit { context: format!("{name} profile"), source: e })?;
        write_profile_csv(&out.join(format!("profile_{name}.csv")), &profile)?;
        write_fit_sidecar(&out.join(format!("profile_{name}.fit.txt")), &fit)?;
    }
    println!(
        "f_s = {} mm, rho = {}, detector {} at {} um",
        result.f_s_mm,
        result.rho,
        result.detector.kind(),
        result.detector.center_um()
    );
    println!(
        "FWHM heralded {:.2} nm, non-heralded {:.2} nm (HWHM {:.2} / {:.2} nm)",
        result.width_heralded.fwhm_nm,
        result.width_nonheralded.fwhm_nm,
        result.width_heralded.hwhm_nm,
        result.width_nonheralded.hwhm_nm
    );
    println!(
        "sigma_mid {:.1} um, transmission heralded {:.4}, non-heralded {:.4}",
        result.sigma_mid_um, result.transmission_heralded, result.transmission_nonheralded
    );
    println!("slope {} (linear residual {:.2e})", num(result.slope.slope), result.slope.relative_residual);
    Ok(())
}

fn run_sweep(out: &Path, system: &OpticalSystem, grid: &GridSpec, args: &SweepArgs) -> Result<(), Failure> {
    let rhos = if args.rho.is_empty() { vec![0.0, 0.9] } else { args.rho.clone() };
    if args.points == 0 {
        return Err(Failure::Usage("--points must be at least 1".into()));
    }
    let fs = linspace(DEFAULT_FS_RANGE_MM.0, DEFAULT_FS_RANGE_MM.1, args.points);
    let detector = args.detector.detector()?;
    let results = sweep(system, grid, &fs, &rhos, &[detector])?;
    let path = out.join("sweep.csv");
    write_results_csv(&path, &results)?;
    println!("{} scenarios written to {}", results.len(), path.display());
    if args.plot {
        for p in write_sweep_plots(out, &results)? {
            println!("plot {}", p.display());
        }
    }
    Ok(())
}

fn limit(out: &Path, system: &OpticalSystem, grid: &GridSpec, args: &SystemArgs) -> Result<(), Failure> {
    let system = apply(*system, args)?;
    let l = diffraction_limit(&system, grid)?;
    write_limit(out, &l)?;
    println!(
        "diffraction limit: FWHM {:.3} nm, HWHM {:.3} nm, sigma {:.3} nm (fit residual {:.3e})",
        l.width.fwhm_nm, l.width.hwhm_nm, l.width.sigma_nm, l.fit.residual
    );
    Ok(())
}

fn verify(system: &OpticalSystem, grid: &GridSpec, args: &SystemArgs) -> Result<ExitCode, Failure> {
    let system = apply(*system, args)?;
    let checks = heraldsim::verify::verify(&system, grid);
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed).collect();
    Ok(if failed.is_empty() {
        ExitCode::SUCCESS
    } else if failed.iter().any(|c| c.numerical) {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    })
}

fn fig2(out: &Path, system: &OpticalSystem, grid: &GridSpec, args: &SystemArgs) -> Result<(), Failure> {
    let system = apply(*system, args)?;
    let data = reproduce_fig2(&system, grid)?;
    let dir = out.join("fig2");
    write_fig2(&dir, &data)?;
    for (c, p) in &data.conditionals {
        println!("conditional at x_i = {c} um: mean {:.4} um", p.mean());
    }
    println!("written to {}", dir.display());
    Ok(())
}

fn fig4(out: &Path, system: &OpticalSystem, grid: &GridSpec, args: &Fig4Args) -> Result<(), Failure> {
    let fs = if args.fs_mm.is_empty() { vec![30.0, 150.0] } else { args.fs_mm.clone() };
    let rho = args.rho.unwrap_or(system.source.rho);
    let base = system.with_rho(rho).validated().map_err(Error::from)?;
    let data = reproduce_fig4(&base, grid, &fs, rho)?;
    let dir = out.join("fig4");
    write_fig4(&dir, &data)?;
    for d in &data {
        println!(
            "f_s = {} mm: Pearson mid {:.4}, out {:.4}, phase cross {:.4}",
            d.f_s_mm, d.pearson_mid, d.pearson_out, d.phase_cross
        );
    }
    println!("written to {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = load(cli.config.as_deref()).and_then(|(system, grid)| {
        let out = cli.out.as_path();
        match &cli.command {
            Command::Simulate(a) => simulate(out, &system, &grid, a).map(|_| ExitCode::SUCCESS),
            Command::Sweep(a) => run_sweep(out, &system, &grid, a).map(|_| ExitCode::SUCCESS),
            Command::Limit(a) => limit(out, &system, &grid, a).map(|_| ExitCode::SUCCESS),
            Command::Verify(a) => verify(&system, &grid, a),
            Command::Fig2(a) => fig2(out, &system, &grid, a).map(|_| ExitCode::SUCCESS),
            Command::Fig4(a) => fig4(out, &system, &grid, a).map(|_| ExitCode::SUCCESS),
        }
    });
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
