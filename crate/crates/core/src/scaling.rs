//! Power-law fits and finite-size scaling collapse.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Critical exponents entering the scaling forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingExponents {
    pub z: f64,
    pub nu: f64,
    pub delta_o: f64,
    pub d: f64,
}

impl Default for ScalingExponents {
    /// Open Rabi model with n̂ as the encoding operator.
    fn default() -> Self {
        Self {
            z: 1.0,
            nu: 2.0,
            delta_o: -0.5,
            d: 0.0,
        }
    }
}

impl ScalingExponents {
    pub fn validate(&self) -> Result<()> {
        if ![self.z, self.nu, self.delta_o, self.d].iter().all(|x| x.is_finite()) {
            return Err(invalid("exponents must be finite"));
        }
        if !(self.z > 0.0 && self.nu > 0.0) {
            return Err(invalid("z and nu must be positive"));
        }
        if self.d < 0.0 {
            return Err(invalid("d must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Transient,
    LongTime,
}

/// Which information quantity a scaling form refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantity {
    GlobalQfi,
    PhotonCountingFi,
}

/// Exponents of I ∼ t^a L^b together with the reference lines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedExponents {
    pub t_exponent: f64,
    pub size_exponent: f64,
    /// Heisenberg-limit reference t² L^{2d}.
    pub heisenberg: (f64, f64),
    /// Critical bound t² L^{2d − 2Δ}.
    pub bound: (f64, f64),
}

/// Global QFI: transient t^{(d−2Δ)/z+2} L^d, long-time t·L^{2d−2Δ+z}.
pub fn predicted_exponents(exps: &ScalingExponents, regime: Regime) -> Result<PredictedExponents> {
    exps.validate()?;
    let (t_exponent, size_exponent) = match regime {
        Regime::Transient => ((exps.d - 2.0 * exps.delta_o) / exps.z + 2.0, exps.d),
        Regime::LongTime => (1.0, 2.0 * exps.d - 2.0 * exps.delta_o + exps.z),
    };
    Ok(PredictedExponents {
        t_exponent,
        size_exponent,
        heisenberg: (2.0, 2.0 * exps.d),
        bound: (2.0, 2.0 * exps.d - 2.0 * exps.delta_o),
    })
}

/// Exponents for either quantity; photon counting of the open Rabi model
/// follows (κt)² f_F(κt/η) and κtη.
pub fn predicted_for(quantity: Quantity, exps: &ScalingExponents, regime: Regime) -> Result<PredictedExponents> {
    let q = predicted_exponents(exps, regime)?;
    Ok(match quantity {
        Quantity::GlobalQfi => q,
        Quantity::PhotonCountingFi => match regime {
            Regime::Transient => PredictedExponents { t_exponent: q.t_exponent - 1.0, ..q },
            Regime::LongTime => PredictedExponents { size_exponent: q.size_exponent - 1.0, ..q },
        },
    })
}

/// Result of a log-log least-squares fit y = A·x^k.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub stderr: f64,
    pub prefactor: f64,
    pub r_squared: f64,
}

/// Weighted least squares of ln y on ln x. Needs at least four points
/// spanning a factor four in x.
pub fn fit_power_law(xs: &[f64], ys: &[f64], weights: Option<&[f64]>) -> Result<PowerLawFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 4 {
        return Err(Error::InsufficientData(format!("need at least 4 points, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(invalid("power-law fit needs positive finite data"));
    }
    let (lo, hi) = xs.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    if hi / lo < 4.0 {
        return Err(Error::InsufficientData(format!("x spans only a factor {:.3}", hi / lo)));
    }
    let w: Vec<f64> = match weights {
        Some(w) if w.len() != xs.len() => {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                found: w.len(),
            })
        }
        Some(w) if w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) => return Err(invalid("weights must be positive")),
        Some(w) => w.to_vec(),
        None => vec![1.0; xs.len()],
    };
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let sw: f64 = w.iter().sum();
    let mx = w.iter().zip(&lx).map(|(w, x)| w * x).sum::<f64>() / sw;
    let my = w.iter().zip(&ly).map(|(w, y)| w * y).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..xs.len() {
        let (dx, dy) = (lx[i] - mx, ly[i] - my);
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * dy;
        syy += w[i] * dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = (0..xs.len())
        .map(|i| w[i] * (ly[i] - intercept - slope * lx[i]).powi(2))
        .sum();
    let sigma2 = ss_res / (xs.len() - 2) as f64;
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(PowerLawFit {
        exponent: slope,
        stderr: (sigma2 / sxx).sqrt(),
        prefactor: intercept.exp(),
        r_squared,
    })
}

/// One sample of a size-dependent curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub size: f64,
    pub t: f64,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingDataset {
    pub points: Vec<ScalingPoint>,
    pub quantity: String,
    pub regime: Regime,
}

impl ScalingDataset {
    pub fn new(points: Vec<ScalingPoint>, quantity: impl Into<String>, regime: Regime) -> Result<Self> {
        let ds = Self {
            points,
            quantity: quantity.into(),
            regime,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.points {
            if !(p.value.is_finite() && p.stderr.is_finite()) {
                return Err(invalid("scaling data must be finite"));
            }
            if !(p.size > 0.0 && p.t > 0.0) {
                return Err(invalid("sizes and times must be positive"));
            }
        }
        Ok(())
    }

    /// Points grouped by size, each sorted by time.
    pub fn curves(&self) -> Vec<(f64, Vec<ScalingPoint>)> {
        let mut map: BTreeMap<u64, (f64, Vec<ScalingPoint>)> = BTreeMap::new();
        for p in &self.points {
            map.entry(p.size.to_bits()).or_insert_with(|| (p.size, Vec::new())).1.push(*p);
        }
        let mut out: Vec<_> = map.into_values().collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (_, c) in &mut out {
            c.sort_by(|a, b| a.t.total_cmp(&b.t));
        }
        out
    }
}

/// Rescaled axes X = t^{x_t}·L^{x_size} and Y = value / (t^{y_t}·L^{y_size}).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescaling {
    pub x_t: f64,
    pub x_size: f64,
    pub y_t: f64,
    pub y_size: f64,
}

impl Rescaling {
    /// Scaling form of `quantity` in `regime`: abscissa t/L^z, ordinate
    /// divided by the predicted powers of t and L.
    pub fn predicted(quantity: Quantity, exps: &ScalingExponents, regime: Regime) -> Result<Self> {
        let e = predicted_for(quantity, exps, regime)?;
        Ok(Self {
            x_t: 1.0,
            x_size: -exps.z,
            y_t: e.t_exponent,
            y_size: e.size_exponent,
        })
    }

    pub fn apply(&self, p: &ScalingPoint) -> (f64, f64) {
        (
            p.t.powf(self.x_t) * p.size.powf(self.x_size),
            p.value / (p.t.powf(self.y_t) * p.size.powf(self.y_size)),
        )
    }
}

fn interpolate(curve: &[(f64, f64)], x: f64) -> f64 {
    let k = curve.partition_point(|&(cx, _)| cx < x).clamp(1, curve.len() - 1);
    let (x0, y0) = curve[k - 1];
    let (x1, y1) = curve[k];
    if x1 == x0 {
        return y0;
    }
    let f = (x.ln() - x0.ln()) / (x1.ln() - x0.ln());
    y0 + f * (y1 - y0)
}

/// Rescaled curves, one per size, sorted by abscissa.
pub fn rescaled_curves(ds: &ScalingDataset, r: &Rescaling) -> Vec<(f64, Vec<(f64, f64)>)> {
    ds.curves()
        .into_iter()
        .map(|(size, pts)| {
            let mut c: Vec<(f64, f64)> = pts.iter().map(|p| r.apply(p)).collect();
            c.sort_by(|a, b| a.0.total_cmp(&b.0));
            (size, c)
        })
        .collect()
}

/// Mean-squared vertical spread of the rescaled curves on their common
/// abscissa range, divided by the mean-squared value (0 is perfect).
pub fn collapse_quality(ds: &ScalingDataset, r: &Rescaling) -> Result<f64> {
    ds.validate()?;
    let curves = rescaled_curves(ds, r);
    if curves.len() < 2 {
        return Err(Error::InsufficientData("collapse needs at least two sizes".into()));
    }
    if curves.iter().any(|(_, c)| c.len() < 2) {
        return Err(Error::InsufficientData("every size needs at least two points".into()));
    }
    let lo = curves.iter().map(|(_, c)| c[0].0).fold(f64::NEG_INFINITY, f64::max);
    let hi = curves.iter().map(|(_, c)| c[c.len() - 1].0).fold(f64::INFINITY, f64::min);
    if !(hi > lo) {
        if hi == lo && curves.iter().all(|(_, c)| c.iter().any(|p| p.0 == lo)) {
            // single shared abscissa
        } else {
            return Err(Error::InsufficientData("rescaled abscissa ranges do not overlap".into()));
        }
    }
    let n_eval = if hi > lo { 64 } else { 1 };
    let mut spread = 0.0;
    let mut scale = 0.0;
    for k in 0..n_eval {
        let x = if n_eval == 1 {
            lo
        } else {
            (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (n_eval - 1) as f64).exp()
        };
        let ys: Vec<f64> = curves.iter().map(|(_, c)| interpolate(c, x)).collect();
        let m = ys.iter().sum::<f64>() / ys.len() as f64;
        spread += ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / ys.len() as f64;
        scale += m * m;
    }
    if scale == 0.0 {
        return Ok(if spread == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(spread / scale)
}

/// Relative spread (max − min)/mean of values.
pub fn relative_spread(values: &[f64]) -> f64 {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (hi - lo) / mean.abs()
}

/// Transient fit window κt ∈ [t_cut, 0.2η].
pub fn transient_window(eta: f64, t_cut: f64) -> (f64, f64) {
    (t_cut, 0.2 * eta)
}

/// Long-time fit window starts at κt = 3η.
pub fn long_time_start(eta: f64) -> f64 {
    3.0 * eta
}

const PALETTE: [&str; 6] = ["#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#6c4ba8", "#333333"];

/// Log-log plot of rescaled curves, one polyline per size.
pub fn collapse_svg(ds: &ScalingDataset, r: &Rescaling, x_label: &str, y_label: &str) -> Result<String> {
    let curves = rescaled_curves(ds, r);
    let pts: Vec<(f64, f64)> = curves.iter().flat_map(|(_, c)| c.iter().copied()).filter(|p| p.0 > 0.0 && p.1 > 0.0).collect();
    if pts.is_empty() {
        return Err(Error::InsufficientData("nothing positive to plot".into()));
    }
    let (w, h, m) = (640.0, 440.0, 70.0);
    let lx = |x: f64| x.log10();
    let (x0, x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(lx(p.0)), b.max(lx(p.0))));
    let (y0, y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(lx(p.1)), b.max(lx(p.1))));
    let (x0, x1) = (x0.floor(), x1.ceil().max(x0.floor() + 1.0));
    let (y0, y1) = (y0.floor(), y1.ceil().max(y0.floor() + 1.0));
    let px = |x: f64| m + (lx(x) - x0) / (x1 - x0) * (w - 1.5 * m);
    let py = |y: f64| h - m - (lx(y) - y0) / (y1 - y0) * (h - 1.5 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<rect x="{m}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#, m / 2.0, w - 1.5 * m, h - 1.5 * m);
    for e in x0 as i32..=x1 as i32 {
        let x = px(10f64.powi(e));
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">1e{e}</text>"#, h - m + 18.0);
    }
    for e in y0 as i32..=y1 as i32 {
        let y = py(10f64.powi(e));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">1e{e}</text>"#, m - 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, m + (w - 1.5 * m) / 2.0, h - 20.0);
    let _ = writeln!(s, r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">{y_label}</text>"#, h / 2.0, h / 2.0);
    for (k, (size, c)) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = c
            .iter()
            .filter(|p| p.0 > 0.0 && p.1 > 0.0)
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{}"/>"#, path.join(" "));
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{color}">η = {size}</text>"#, w - m * 1.4, m + 16.0 * k as f64);
    }
    s.push_str("</svg>\n");
    Ok(s)
}
