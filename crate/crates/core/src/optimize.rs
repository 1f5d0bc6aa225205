//! Frequency optimization of the generator spectrum, `(ρ, φ)` o-QFI sweeps,
//! `(ω, ε)` landscapes of `A_ll`, and scans away from the exceptional surface.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gwsm::{gwsm_a, gwsm_eigenvalues};
use crate::qfi::{oqfi_value, StateKind};
use crate::resonator::{is_near_singular, omega_eigenvalues, SystemParams};

pub const DEFAULT_WINDOW: f64 = 10.0;
pub const DEFAULT_GRID: usize = 2048;
pub const MIN_GRID: usize = 64;

/// Golden-section stopping width, in units of `γ`.
const REFINE_TOL: f64 = 1e-10;
/// Seed points placed around each resonance.
const RESONANCE_SEEDS: usize = 65;
/// Seeds cover `Re Ω ± RESONANCE_SPAN·|Im Ω|`.
const RESONANCE_SPAN: f64 = 8.0;
/// Local extrema within this relative distance of the best grid value are refined.
const CANDIDATE_REL: f64 = 1e-6;
const MAX_CANDIDATES: usize = 16;
/// Refined optima closer than this (relative) count as ties.
const TIE_REL: f64 = 1e-10;
/// Half-width of the final parabolic polish, in units of `γ`.
const POLISH_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyOptimum {
    pub lambda_max: f64,
    pub omega_max: f64,
    pub lambda_min: f64,
    pub omega_min: f64,
    pub lambda_abs: f64,
    /// False when either optimum sits on the edge of the search window.
    pub converged: bool,
    /// True when either optimum lies next to a resolvent pole.
    pub near_singular: bool,
    /// Scan points skipped because the resolvent was singular there.
    pub skipped: usize,
}

impl FrequencyOptimum {
    /// Frequency of `λ_abs` and whether it belongs to the `λ+` branch.
    /// Equal magnitudes select `λ+`.
    pub fn abs_choice(&self) -> (f64, bool) {
        if self.lambda_max.abs() >= self.lambda_min.abs() {
            (self.omega_max, true)
        } else {
            (self.omega_min, false)
        }
    }

    pub fn spread(&self) -> f64 {
        self.lambda_max - self.lambda_min
    }
}

/// Optimizer over `[−10γ, 10γ]` with a 2048-point coarse grid.
pub fn optimize_spectrum_default(p: &SystemParams) -> Result<FrequencyOptimum> {
    let w = DEFAULT_WINDOW * p.gamma();
    optimize_spectrum(p, (-w, w), DEFAULT_GRID)
}

/// Finds `max_ω λ+(ω)` and `min_ω λ−(ω)` inside `window`.
///
/// A uniform grid plus a dense cluster around each resonance frequency
/// `Re Ω±` is scanned; every near-best local extremum is then refined by
/// golden-section search on its neighbouring grid bracket. Ties resolve to
/// positive `ω` for the maximum and negative `ω` for the minimum.
pub fn optimize_spectrum(p: &SystemParams, window: (f64, f64), grid_n: usize) -> Result<FrequencyOptimum> {
    let (lo, hi) = window;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidParams(format!("empty frequency window [{lo}, {hi}]")));
    }
    if grid_n < MIN_GRID {
        return Err(Error::InvalidParams(format!("grid must have at least {MIN_GRID} points, got {grid_n}")));
    }
    let points = scan_points(p, lo, hi, grid_n);
    let mut plus = Vec::with_capacity(points.len());
    let mut minus_neg = Vec::with_capacity(points.len());
    let mut skipped = 0;
    for &w in &points {
        match gwsm_eigenvalues(p, w) {
            Ok((lm, lp)) => {
                plus.push(lp);
                minus_neg.push(-lm);
            }
            Err(e) if e.is_singular() => {
                skipped += 1;
                plus.push(f64::NAN);
                minus_neg.push(f64::NAN);
            }
            Err(e) => return Err(e),
        }
    }

    let upper = |w: f64| gwsm_eigenvalues(p, w).map(|(_, lp)| lp).unwrap_or(f64::NAN);
    let lower = |w: f64| gwsm_eigenvalues(p, w).map(|(lm, _)| -lm).unwrap_or(f64::NAN);
    let max = refine_extremum(&points, &plus, upper, true, p.gamma())?;
    let min = refine_extremum(&points, &minus_neg, lower, false, p.gamma())?;

    let lambda_max = max.value;
    let lambda_min = -min.value;
    Ok(FrequencyOptimum {
        lambda_max,
        omega_max: max.omega,
        lambda_min,
        omega_min: min.omega,
        lambda_abs: lambda_max.abs().max(lambda_min.abs()),
        converged: !max.on_boundary && !min.on_boundary,
        near_singular: is_near_singular(p, max.omega) || is_near_singular(p, min.omega),
        skipped,
    })
}

fn scan_points(p: &SystemParams, lo: f64, hi: f64, grid_n: usize) -> Vec<f64> {
    let step = (hi - lo) / (grid_n - 1) as f64;
    let mut pts: Vec<f64> = (0..grid_n).map(|i| lo + step * i as f64).collect();
    pts[grid_n - 1] = hi;
    let (a, b) = omega_eigenvalues(p);
    for pole in [a, b] {
        let half = RESONANCE_SPAN * pole.im.abs();
        if half <= 0.0 || !half.is_finite() {
            continue;
        }
        let half_seeds = (RESONANCE_SEEDS - 1) as f64 / 2.0;
        for k in 0..RESONANCE_SEEDS {
            let w = pole.re + half * (k as f64 / half_seeds - 1.0);
            if w > lo && w < hi {
                pts.push(w);
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * (1.0 + a.abs()));
    pts
}

struct Extremum {
    omega: f64,
    value: f64,
    on_boundary: bool,
}

/// Maximizes `f` starting from sampled values `vals` at `pts`.
fn refine_extremum<F>(pts: &[f64], vals: &[f64], f: F, prefer_positive: bool, gamma: f64) -> Result<Extremum>
where
    F: Fn(f64) -> f64,
{
    let n = pts.len();
    let best = vals
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return Err(Error::SingularDenominator { denom_abs: 0.0 });
    }
    let at = |i: usize| if vals[i].is_finite() { vals[i] } else { f64::NEG_INFINITY };
    let threshold = best - CANDIDATE_REL * best.abs();
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&i| {
            let v = at(i);
            v >= threshold
                && (i == 0 || v >= at(i - 1))
                && (i + 1 == n || v >= at(i + 1))
        })
        .collect();
    candidates.sort_by(|&a, &b| at(b).total_cmp(&at(a)).then(a.cmp(&b)));
    candidates.truncate(MAX_CANDIDATES);

    let g = |w: f64| {
        let v = f(w);
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    };
    let mut refined: Vec<Extremum> = candidates
        .iter()
        .map(|&i| {
            let a = pts[i.saturating_sub(1)];
            let b = pts[(i + 1).min(n - 1)];
            let (w, v) = golden_section_max(&g, a, b, REFINE_TOL * gamma);
            let (omega, value) = if v >= at(i) { (w, v) } else { (pts[i], at(i)) };
            let (omega, value) = parabolic_polish(&g, omega, value, POLISH_STEP * gamma);
            Extremum {
                omega,
                value,
                on_boundary: i == 0 || i == n - 1,
            }
        })
        .collect();

    let top = refined.iter().map(|e| e.value).fold(f64::NEG_INFINITY, f64::max);
    let tie = TIE_REL * top.abs();
    refined.retain(|e| e.value >= top - tie);
    let pick = refined
        .into_iter()
        .reduce(|acc, e| {
            let better = if prefer_positive { e.omega > acc.omega } else { e.omega < acc.omega };
            if better {
                e
            } else {
                acc
            }
        })
        .expect("at least one candidate");
    Ok(pick)
}

/// One parabolic step through `x ± h`. Near a flat maximum, value comparisons
/// only locate `x` to about `√ε_mach`; the vertex of the local parabola does
/// much better. Returns the larger of the two values so the result never
/// drops below an already evaluated sample.
fn parabolic_polish<F: Fn(f64) -> f64>(f: &F, x: f64, fx: f64, h: f64) -> (f64, f64) {
    let (up, down) = (f(x + h), f(x - h));
    let curvature = up - 2.0 * fx + down;
    if !(curvature < 0.0 && up.is_finite() && down.is_finite()) {
        return (x, fx);
    }
    let vertex = x - 0.5 * h * (up - down) / curvature;
    if (vertex - x).abs() > h {
        return (x, fx);
    }
    let fv = f(vertex);
    if fv.is_finite() && fv >= fx - 4.0 * f64::EPSILON * fx.abs() {
        (vertex, fv.max(fx))
    } else {
        (x, fx)
    }
}

/// Golden-section search for a maximum of `f` on `[a, b]`; returns the best point seen.
pub fn golden_section_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    let mut iterations = 0;
    while (b - a).abs() > tol && iterations < 200 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
            if fc > best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
            if fd > best.1 {
                best = (d, fd);
            }
        }
        iterations += 1;
    }
    best
}

/// One grid dimension: `count` evenly spaced values from `min` to `max` inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(name: &str, min: f64, max: f64, count: usize) -> Result<Self> {
        if count == 0 || !min.is_finite() || !max.is_finite() || (count > 1 && min > max) {
            return Err(Error::InvalidParams(format!("invalid axis {name}: {min}:{max}:{count}")));
        }
        if count == 1 && min != max {
            return Err(Error::InvalidParams(format!("single-point axis {name} needs min == max")));
        }
        Ok(Self { name: name.to_string(), min, max, count })
    }

    pub fn point(name: &str, value: f64) -> Result<Self> {
        Self::new(name, value, value, 1)
    }

    pub fn value(&self, i: usize) -> f64 {
        if self.count == 1 {
            return self.min;
        }
        if i + 1 == self.count {
            return self.max;
        }
        self.min + (self.max - self.min) * i as f64 / (self.count - 1) as f64
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.value(i)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepMeta {
    pub quantity: String,
    pub template: SystemParams,
    pub state: Option<StateKind>,
}

/// Dense row-major grid: the first axis varies slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub axes: Vec<Axis>,
    pub values: Vec<f64>,
    pub flags: Vec<bool>,
    pub meta: SweepMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridWire {
    meta: SweepMeta,
    axes: Vec<Axis>,
    values: Vec<Option<f64>>,
    near_singular: Vec<bool>,
}

impl SweepGrid {
    fn build(axes: Vec<Axis>, cells: Vec<(f64, bool)>, meta: SweepMeta) -> Self {
        let (values, flags) = cells.into_iter().unzip();
        Self { axes, values, flags, meta }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.count).collect()
    }

    /// Row-major index of a two-axis cell.
    pub fn index2(&self, i: usize, j: usize) -> usize {
        i * self.axes[1].count + j
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.values[self.index2(i, j)]
    }

    pub fn coordinates(&self, flat: usize) -> Vec<f64> {
        let mut rem = flat;
        let mut coords = vec![0.0; self.axes.len()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            coords[k] = axis.value(rem % axis.count);
            rem /= axis.count;
        }
        coords
    }

    pub fn finite_max(&self) -> Option<f64> {
        self.values.iter().copied().filter(|v| v.is_finite()).reduce(f64::max)
    }

    pub fn finite_min(&self) -> Option<f64> {
        self.values.iter().copied().filter(|v| v.is_finite()).reduce(f64::min)
    }

    fn check_shape(&self) -> Result<()> {
        let n: usize = self.axes.iter().map(|a| a.count).product();
        if self.values.len() != n || self.flags.len() != n {
            return Err(Error::Format(format!(
                "grid has {} values and {} flags, axes imply {n}",
                self.values.len(),
                self.flags.len()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let wire = GridWire {
            meta: self.meta.clone(),
            axes: self.axes.clone(),
            values: self.values.iter().map(|v| v.is_finite().then_some(*v)).collect(),
            near_singular: self.flags.clone(),
        };
        Ok(serde_json::to_string_pretty(&wire)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let wire: GridWire = serde_json::from_str(s)?;
        let grid = SweepGrid {
            axes: wire.axes,
            values: wire.values.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
            flags: wire.near_singular,
            meta: wire.meta,
        };
        grid.check_shape()?;
        Ok(grid)
    }

    /// Long-format CSV: `#` header lines carry axes and metadata, then one row per cell.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        let _ = writeln!(out, "# quantity,{}", self.meta.quantity);
        for a in &self.axes {
            let _ = writeln!(out, "# axis,{},{},{},{}", a.name, fmt_num(a.min), fmt_num(a.max), a.count);
        }
        let _ = writeln!(out, "# params,{}", serde_json::to_string(&self.meta.template)?);
        if let Some(state) = &self.meta.state {
            let _ = writeln!(out, "# state,{}", serde_json::to_string(state)?);
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<&str> = self.axes.iter().map(|a| a.name.as_str()).collect();
        header.extend(["value", "near_singular"]);
        w.write_record(&header)?;
        for flat in 0..self.values.len() {
            let mut rec: Vec<String> = self.coordinates(flat).into_iter().map(fmt_num).collect();
            rec.push(fmt_num(self.values[flat]));
            rec.push(u8::from(self.flags[flat]).to_string());
            w.write_record(&rec)?;
        }
        let body = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        out.push_str(&String::from_utf8(body).map_err(|e| Error::Format(e.to_string()))?);
        Ok(out)
    }

    pub fn from_csv(s: &str) -> Result<Self> {
        let mut quantity = None;
        let mut template = None;
        let mut state = None;
        let mut axes = Vec::new();
        for line in s.lines().filter_map(|l| l.strip_prefix("# ")) {
            let (key, rest) = line.split_once(',').ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
            match key {
                "quantity" => quantity = Some(rest.to_string()),
                "params" => template = Some(serde_json::from_str(rest)?),
                "state" => state = Some(serde_json::from_str(rest)?),
                "axis" => {
                    let f: Vec<&str> = rest.split(',').collect();
                    if f.len() != 4 {
                        return Err(Error::Format(format!("bad axis line {line:?}")));
                    }
                    axes.push(Axis::new(f[0], parse_num(f[1])?, parse_num(f[2])?, parse_count(f[3])?)?);
                }
                other => return Err(Error::Format(format!("unknown header key {other:?}"))),
            }
        }
        let meta = SweepMeta {
            quantity: quantity.ok_or_else(|| Error::Format("missing quantity header".into()))?,
            template: template.ok_or_else(|| Error::Format("missing params header".into()))?,
            state,
        };
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(s.as_bytes());
        let mut values = Vec::new();
        let mut flags = Vec::new();
        let ncoord = axes.len();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != ncoord + 2 {
                return Err(Error::Format(format!("row has {} fields, expected {}", rec.len(), ncoord + 2)));
            }
            values.push(parse_num(&rec[ncoord])?);
            flags.push(match &rec[ncoord + 1] {
                "0" => false,
                "1" => true,
                other => return Err(Error::Format(format!("bad flag {other:?}"))),
            });
        }
        let grid = SweepGrid { axes, values, flags, meta };
        grid.check_shape()?;
        Ok(grid)
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn parse_num(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad number {s:?}")))
}

fn parse_count(s: &str) -> Result<usize> {
    s.trim().parse::<usize>().map_err(|_| Error::Format(format!("bad count {s:?}")))
}

fn cell_or_flag(r: Result<(f64, bool)>) -> Result<(f64, bool)> {
    match r {
        Err(e) if e.is_singular() => Ok((f64::NAN, true)),
        other => other,
    }
}

/// Frequency-optimized QFI over a `(ρ, φ)` grid at fixed `ε` (in units of `γ`).
pub fn sweep_oqfi(
    state: StateKind,
    rho_axis: &Axis,
    phi_axis: &Axis,
    epsilon: f64,
    gamma: f64,
) -> Result<SweepGrid> {
    if rho_axis.min < 0.0 || rho_axis.max > 1.0 {
        return Err(Error::InvalidParams("rho axis must lie in [0, 1]".into()));
    }
    let template = SystemParams::new(gamma, rho_axis.min, phi_axis.min, epsilon * gamma)?;
    let n = rho_axis.count * phi_axis.count;
    let cells: Vec<(f64, bool)> = (0..n)
        .into_par_iter()
        .map(|flat| {
            let rho = rho_axis.value(flat / phi_axis.count);
            let phi = phi_axis.value(flat % phi_axis.count);
            let p = SystemParams::new(gamma, rho, phi, epsilon * gamma)?;
            cell_or_flag(oqfi_value(&p, state, epsilon * gamma).map(|r| (r.value, r.near_singular)))
        })
        .collect::<Result<_>>()?;
    Ok(SweepGrid::build(
        vec![rho_axis.clone(), phi_axis.clone()],
        cells,
        SweepMeta { quantity: "oqfi".into(), template, state: Some(state) },
    ))
}

/// `A_ll(ω, ε)` over an `(ω, ε)` grid (axes in units of `γ`). Cells next to a
/// resolvent pole are flagged; cells exactly on one hold NaN.
pub fn landscape_all(
    phi: f64,
    omega_axis: &Axis,
    epsilon_axis: &Axis,
    rho: f64,
    gamma: f64,
) -> Result<SweepGrid> {
    let template = SystemParams::new(gamma, rho, phi, epsilon_axis.min * gamma)?;
    let n = omega_axis.count * epsilon_axis.count;
    let cells: Vec<(f64, bool)> = (0..n)
        .into_par_iter()
        .map(|flat| {
            let w = omega_axis.value(flat / epsilon_axis.count) * gamma;
            let eps = epsilon_axis.value(flat % epsilon_axis.count) * gamma;
            let p = template.with_epsilon(eps)?;
            let flag = is_near_singular(&p, w);
            cell_or_flag(gwsm_a(&p, w).map(|a| (a[(0, 0)].re, flag)))
        })
        .collect::<Result<_>>()?;
    Ok(SweepGrid::build(
        vec![omega_axis.clone(), epsilon_axis.clone()],
        cells,
        SweepMeta { quantity: "a_ll".into(), template, state: None },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub epsilon: f64,
    pub oqfi: f64,
    pub near_singular: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsurfaceScan {
    pub template: SystemParams,
    pub state: StateKind,
    pub rows: Vec<ScanRow>,
}

impl OffsurfaceScan {
    /// True when the o-QFI rises strictly at every step from `ε = 0` toward
    /// `target` (rows strictly between the two, plus `ε = 0` itself).
    pub fn increases_toward(&self, target: f64) -> bool {
        let mut path: Vec<&ScanRow> = self
            .rows
            .iter()
            .filter(|r| {
                let (lo, hi) = if target < 0.0 { (target, 0.0) } else { (0.0, target) };
                r.epsilon >= lo && r.epsilon <= hi && r.epsilon != target
            })
            .collect();
        path.sort_by(|a, b| a.epsilon.abs().total_cmp(&b.epsilon.abs()));
        path.len() >= 2
            && path.iter().all(|r| r.oqfi.is_finite())
            && path.windows(2).all(|w| w[1].oqfi > w[0].oqfi)
    }

    pub fn value_at(&self, epsilon: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| (r.epsilon - epsilon).abs() <= 1e-12 * (1.0 + epsilon.abs()))
            .map(|r| r.oqfi)
    }
}

/// o-QFI as a function of `ε` (axis in units of `γ`) at the template's `(γ, ρ, φ)`.
pub fn offsurface_scan(template: &SystemParams, state: StateKind, epsilon_axis: &Axis) -> Result<OffsurfaceScan> {
    let g = template.gamma();
    let rows: Vec<ScanRow> = (0..epsilon_axis.count)
        .into_par_iter()
        .map(|i| {
            let eps = epsilon_axis.value(i) * g;
            let p = template.with_epsilon(eps)?;
            let (oqfi, near_singular) =
                cell_or_flag(oqfi_value(&p, state, eps).map(|r| (r.value, r.near_singular)))?;
            Ok(ScanRow { epsilon: eps, oqfi, near_singular })
        })
        .collect::<Result<_>>()?;
    Ok(OffsurfaceScan { template: *template, state, rows })
}
