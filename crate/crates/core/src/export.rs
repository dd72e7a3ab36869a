//! CSV output (9 significant digits throughout) and static SVG charts.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::analysis::GaussianFit;
use crate::experiment::{DiffractionLimit, Fig2Data, Fig4Data, ScenarioResult};
use crate::grid::BeamProfile1D;

/// Scientific notation with 9 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.8e}")
}

fn create(path: &Path) -> io::Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

pub const RESULTS_HEADER: &str = "scenario_id,f_s_mm,rho,detector_kind,detector_diam_um,sigma_mid_um,w_out_nh_nm,w_out_h_nm,fwhm_out_nh_nm,fwhm_out_h_nm,transmission_nh,transmission_h,slope,slope_residual";

pub fn results_csv(results: &[ScenarioResult]) -> String {
    let mut s = String::from(RESULTS_HEADER);
    s.push('\n');
    for (id, r) in results.iter().enumerate() {
        let diam = r.detector.diameter_um().map(num).unwrap_or_default();
        let cols = [
            id.to_string(),
            num(r.f_s_mm),
            num(r.rho),
            r.detector.kind().to_string(),
            diam,
            num(r.sigma_mid_um),
            num(r.width_nonheralded.hwhm_nm),
            num(r.width_heralded.hwhm_nm),
            num(r.width_nonheralded.fwhm_nm),
            num(r.width_heralded.fwhm_nm),
            num(r.transmission_nonheralded),
            num(r.transmission_heralded),
            num(r.slope.slope),
            num(r.slope.relative_residual),
        ];
        s.push_str(&cols.join(","));
        s.push('\n');
    }
    s
}

pub fn write_results_csv(path: &Path, results: &[ScenarioResult]) -> io::Result<()> {
    let mut w = create(path)?;
    w.write_all(results_csv(results).as_bytes())?;
    w.flush()
}

pub fn write_profile_csv(path: &Path, profile: &BeamProfile1D) -> io::Result<()> {
    let mut w = create(path)?;
    writeln!(w, "x_um,density_per_um")?;
    for (x, v) in profile.axis.positions().iter().zip(&profile.values) {
        writeln!(w, "{},{}", num(*x), num(*v))?;
    }
    w.flush()
}

/// Fit parameters stored next to a profile as `key = value` lines.
pub fn write_fit_sidecar(path: &Path, fit: &GaussianFit) -> io::Result<()> {
    let mut w = create(path)?;
    let width = fit.width();
    writeln!(w, "amplitude_per_um = {}", num(fit.amplitude))?;
    writeln!(w, "center_um = {}", num(fit.center))?;
    writeln!(w, "sigma_um = {}", num(fit.sigma))?;
    writeln!(w, "hwhm_nm = {}", num(width.hwhm_nm))?;
    writeln!(w, "fwhm_nm = {}", num(width.fwhm_nm))?;
    writeln!(w, "residual = {}", num(fit.residual))?;
    w.flush()
}

pub fn write_limit(dir: &Path, limit: &DiffractionLimit) -> io::Result<()> {
    let mut w = create(&dir.join("limit.csv"))?;
    writeln!(w, "sigma_nm,hwhm_nm,fwhm_nm,fit_residual")?;
    writeln!(
        w,
        "{},{},{},{}",
        num(limit.width.sigma_nm),
        num(limit.width.hwhm_nm),
        num(limit.width.fwhm_nm),
        num(limit.fit.residual)
    )?;
    w.flush()?;
    write_profile_csv(&dir.join("limit_profile.csv"), &limit.profile)?;
    write_fit_sidecar(&dir.join("limit_profile.fit.txt"), &limit.fit)
}

/// Largest number of samples per axis in the joint-density export.
const JOINT_SAMPLES: usize = 257;

pub fn write_fig2(dir: &Path, data: &Fig2Data) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let density = data.density();
    let (ns, ni) = density.dim();
    let (step_s, step_i) = (ns.div_ceil(JOINT_SAMPLES), ni.div_ceil(JOINT_SAMPLES));
    let mut w = create(&dir.join("joint_density.csv"))?;
    writeln!(w, "x_s_um,x_i_um,density_per_um2")?;
    for s in (0..ns).step_by(step_s) {
        for i in (0..ni).step_by(step_i) {
            writeln!(w, "{},{},{}", num(data.joint.axis_s.x(s)), num(data.joint.axis_i.x(i)), num(density[[s, i]]))?;
        }
    }
    w.flush()?;

    let mut w = create(&dir.join("contours.csv"))?;
    writeln!(w, "level_fraction,x_s_um_a,x_i_um_a,x_s_um_b,x_i_um_b")?;
    for c in &data.contours {
        for [a, b] in &c.segments {
            writeln!(w, "{},{},{},{},{}", num(c.level_fraction), num(a.0), num(a.1), num(b.0), num(b.1))?;
        }
    }
    w.flush()?;

    write_profile_csv(&dir.join("marginal_signal.csv"), &data.marginal_signal)?;
    write_profile_csv(&dir.join("marginal_idler.csv"), &data.marginal_idler)?;
    for (c, p) in &data.conditionals {
        write_profile_csv(&dir.join(format!("conditional_xi_{c}um.csv")), p)?;
    }
    Ok(())
}

pub fn write_fig4(dir: &Path, data: &[Fig4Data]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = create(&dir.join("fig4_summary.csv"))?;
    writeln!(w, "f_s_mm,rho,pearson_mid,pearson_out,phase_cross,aperture_support_um,mass_beyond_aperture")?;
    for d in data {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            num(d.f_s_mm),
            num(d.rho),
            num(d.pearson_mid),
            num(d.pearson_out),
            num(d.phase_cross),
            num(d.aperture_support_um),
            num(d.mass_beyond_aperture)
        )?;
    }
    w.flush()?;
    for d in data {
        let mut w = create(&dir.join(format!("mid_fs{}mm.csv", d.f_s_mm)))?;
        writeln!(w, "x_s_um,x_i_um,intensity,phase_rad,phase_valid")?;
        for (a, xs) in d.axis_s.iter().enumerate() {
            for (b, xi) in d.axis_i.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    num(*xs),
                    num(*xi),
                    num(d.intensity[[a, b]]),
                    num(d.phase.values[[a, b]]),
                    u8::from(d.phase.valid[[a, b]])
                )?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YAxis {
    Left,
    Right,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub color: &'static str,
    pub axis: YAxis,
    pub points: Vec<(f64, f64)>,
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1.0) };
    (lo - pad, hi + pad)
}

/// Line chart with markers and up to two y axes.
pub fn svg_line_chart(title: &str, x_label: &str, left_label: &str, right_label: &str, series: &[Series]) -> String {
    let (w, h) = (720.0, 440.0);
    let (l, r, t, b) = (80.0, 80.0, 40.0, 60.0);
    let (pw, ph) = (w - l - r, h - t - b);
    let xr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let yr = |axis| range(series.iter().filter(|s| s.axis == axis).flat_map(|s| s.points.iter().map(|p| p.1)));
    let (yl, yrr) = (yr(YAxis::Left), yr(YAxis::Right));
    let px = |x: f64| l + (x - xr.0) / (xr.1 - xr.0) * pw;
    let py = |y: f64, (lo, hi): (f64, f64)| t + ph - (y - lo) / (hi - lo) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#, w / 2.0);
    let _ = writeln!(s, r#"<rect x="{l}" y="{t}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for k in 0..=5 {
        let f = k as f64 / 5.0;
        let x = xr.0 + f * (xr.1 - xr.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.4}</text>"#, px(x), t + ph + 18.0, x);
        let yv = yl.0 + f * (yl.1 - yl.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.4}</text>"#, l - 6.0, py(yv, yl) + 4.0, yv);
        if series.iter().any(|s| s.axis == YAxis::Right) {
            let yv = yrr.0 + f * (yrr.1 - yrr.0);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{:.4}</text>"#, l + pw + 6.0, py(yv, yrr) + 4.0, yv);
        }
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, l + pw / 2.0, h - 16.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{left_label}</text>"#,
        t + ph / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{0}" y="{1}" text-anchor="middle" transform="rotate(90 {0} {1})">{right_label}</text>"#,
        w - 18.0,
        t + ph / 2.0
    );
    for (k, ser) in series.iter().enumerate() {
        let range = if ser.axis == YAxis::Left { yl } else { yrr };
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y, range))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#, ser.color, pts.join(" "));
        for &(x, y) in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#, px(x), py(y, range), ser.color);
        }
        let ly = t + 16.0 + 16.0 * k as f64;
        let _ = writeln!(s, r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="{3}" stroke-width="2"/>"#, l + 10.0, ly, l + 30.0, ser.color);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, l + 36.0, ly + 4.0, ser.name);
    }
    s.push_str("</svg>\n");
    s
}

/// Widths and transmissions against the mid-plane beam size, one chart per
/// correlation value present in `results`.
pub fn write_sweep_plots(dir: &Path, results: &[ScenarioResult]) -> io::Result<Vec<std::path::PathBuf>> {
    let mut rhos: Vec<f64> = results.iter().map(|r| r.rho).collect();
    rhos.dedup();
    let mut written = Vec::new();
    for rho in rhos {
        let rows: Vec<&ScenarioResult> = results.iter().filter(|r| r.rho == rho).collect();
        let pts = |f: &dyn Fn(&ScenarioResult) -> f64| rows.iter().map(|r| (r.sigma_mid_um / 1e3, f(r))).collect();
        let series = vec![
            Series { name: "FWHM non-heralded (nm)".into(), color: "gray", axis: YAxis::Left, points: pts(&|r| r.width_nonheralded.fwhm_nm) },
            Series { name: "FWHM heralded (nm)".into(), color: "crimson", axis: YAxis::Left, points: pts(&|r| r.width_heralded.fwhm_nm) },
            Series { name: "T non-heralded".into(), color: "steelblue", axis: YAxis::Right, points: pts(&|r| r.transmission_nonheralded) },
            Series { name: "T heralded".into(), color: "darkorange", axis: YAxis::Right, points: pts(&|r| r.transmission_heralded) },
        ];
        let svg = svg_line_chart(&format!("rho = {rho}"), "sigma_mid (mm)", "output width (nm)", "transmission", &series);
        let path = dir.join(format!("sweep_rho{rho}.svg"));
        let mut w = create(&path)?;
        w.write_all(svg.as_bytes())?;
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(num(142.163), "1.42163000e2");
        assert_eq!(num(-2.25e-3), "-2.25000000e-3");
        assert_eq!(num(0.0), "0.00000000e0");
    }

    #[test]
    fn chart_contains_every_series() {
        let series = vec![
            Series { name: "a".into(), color: "red", axis: YAxis::Left, points: vec![(0.0, 1.0), (1.0, 2.0)] },
            Series { name: "b".into(), color: "blue", axis: YAxis::Right, points: vec![(0.0, 0.5), (1.0, 0.25)] },
        ];
        let svg = svg_line_chart("t", "x", "y", "z", &series);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 4);
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
