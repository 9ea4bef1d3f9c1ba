use serde::{Deserialize, Serialize};

use super::StabilityError;

/// `L(w) = A·w^(−α) + L∞` fitted at one training step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub amplitude: f64,
    pub exponent: f64,
    pub irreducible_loss: f64,
    /// Largest absolute loss-space residual over the fitted points.
    pub fit_residual: f64,
    pub step: u64,
    /// Losses (nearly) constant or increasing overall; the power law is not identified.
    pub degenerate: bool,
    /// Some wider model is strictly worse than a narrower one.
    pub non_monotone: bool,
}

const GRID_RESOLUTION: f64 = 1e-3;

struct Candidate {
    l_inf: f64,
    amplitude: f64,
    exponent: f64,
    sse: f64,
}

/// Log-linear regression of `ln(L − L∞)` on `ln w`.
fn regress(points: &[(f64, f64)], l_inf: f64) -> Candidate {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| (p.1 - l_inf).ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let amplitude = (my - slope * mx).exp();
    let exponent = -slope;
    let sse: f64 = points.iter().map(|&(w, l)| (amplitude * w.powf(-exponent) + l_inf - l).powi(2)).sum();
    Candidate { l_inf, amplitude, exponent, sse: if sse.is_nan() { f64::INFINITY } else { sse } }
}

/// Least-squares power-law fit: grid over `L∞ ∈ [0, min loss)` refined by
/// golden-section search, with a log-linear regression per candidate.
pub fn fit_loss_scaling(points: &[(usize, f64)], step: u64) -> Result<ScalingFit, StabilityError> {
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for &(w, l) in points {
        if w == 0 || !l.is_finite() || l <= 0.0 {
            return Err(StabilityError::InvalidArgument(format!("bad point (width {w}, loss {l})")));
        }
        pts.push((w as f64, l));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut distinct = pts.iter().map(|p| p.0 as u64).collect::<Vec<_>>();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(StabilityError::TooFewWidths(distinct.len()));
    }
    let non_monotone = pts.windows(2).any(|w| w[1].0 > w[0].0 && w[1].1 > w[0].1);
    let lo = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-12 * hi {
        return Ok(ScalingFit {
            amplitude: 0.0,
            exponent: 0.0,
            irreducible_loss: lo,
            fit_residual: hi - lo,
            step,
            degenerate: true,
            non_monotone,
        });
    }

    let h = GRID_RESOLUTION * lo;
    let n = (lo / h).ceil() as usize;
    let mut best = regress(&pts, 0.0);
    for i in 1..n {
        let c = regress(&pts, i as f64 * h);
        if c.sse < best.sse {
            best = c;
        }
    }
    // Golden-section refinement inside the neighbouring grid cells.
    let (mut a, mut b) = ((best.l_inf - h).max(0.0), (best.l_inf + h).min(lo * (1.0 - 1e-12)));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (regress(&pts, c), regress(&pts, d));
    for _ in 0..200 {
        if fc.sse < fd.sse {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = regress(&pts, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = regress(&pts, d);
        }
    }
    for cand in [fc, fd] {
        if cand.sse < best.sse {
            best = cand;
        }
    }
    let fit_residual = pts
        .iter()
        .map(|&(w, l)| (best.amplitude * w.powf(-best.exponent) + best.l_inf - l).abs())
        .fold(0.0, f64::max);
    Ok(ScalingFit {
        amplitude: best.amplitude,
        exponent: best.exponent,
        irreducible_loss: best.l_inf,
        fit_residual,
        step,
        degenerate: !(best.exponent > 0.0),
        non_monotone,
    })
}

pub fn predict_loss(fit: &ScalingFit, width: usize) -> f64 {
    fit.amplitude * (width.max(1) as f64).powf(-fit.exponent) + fit.irreducible_loss
}
