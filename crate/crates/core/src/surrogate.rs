//! Analytic S-parameter oracle for coupled square-resonator filters.
//!
//! Each resonator is a lossy lumped resonance at `f_i = K_f / l_i`. Resonators
//! whose edge gap is below a threshold are coupled with a strength that decays
//! exponentially with the gap and is modulated by the relative orientation of
//! their openings. The port resonators additionally couple to the feed lines
//! through their opening width. For each frequency the normalized system
//! matrix
//!
//! ```text
//! A_ii = δ_u + e_i + j·λ_i(f),   λ_i(f) = (f/f_i − f_i/f) / FBW
//! A_ij = j·k_ij / FBW
//! ```
//!
//! is factored and `s21 = 2·sqrt(e_0·e_{N−1})·(A⁻¹)[N−1, 0]`.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::circuit::Layout;
use crate::error::{CoreError, Result};

/// Amplitude floor applied before conversion to dB.
pub const AMPLITUDE_FLOOR: f64 = 1e-6;

/// Condition number above which a frequency sample is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub f_min: f64,
    pub f_max: f64,
    pub n_points: usize,
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        FrequencyGrid {
            f_min: 200.0,
            f_max: 400.0,
            n_points: 256,
        }
    }
}

impl FrequencyGrid {
    pub fn new(f_min: f64, f_max: f64, n_points: usize) -> Result<Self> {
        if !(f_min < f_max) || n_points < 2 {
            return Err(CoreError::Contract(format!(
                "frequency grid needs f_min < f_max and at least two points, got [{f_min}, {f_max}] x {n_points}"
            )));
        }
        Ok(FrequencyGrid {
            f_min,
            f_max,
            n_points,
        })
    }

    pub fn step(&self) -> f64 {
        (self.f_max - self.f_min) / (self.n_points - 1) as f64
    }

    pub fn freq(&self, k: usize) -> f64 {
        self.f_min + (self.f_max - self.f_min) * k as f64 / (self.n_points - 1) as f64
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.freq(k)).collect()
    }
}

pub fn amplitude_to_db(a: f64) -> f64 {
    20.0 * a.clamp(AMPLITUDE_FLOOR, 1.0).log10()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SParams {
    pub grid: FrequencyGrid,
    pub s21: Vec<Complex64>,
    pub s21_db: Vec<f64>,
    /// Grid indices where the system matrix was numerically singular.
    pub singular: Vec<usize>,
}

impl SParams {
    pub fn from_complex(grid: FrequencyGrid, s21: Vec<Complex64>) -> Self {
        let s21_db = s21.iter().map(|z| amplitude_to_db(z.norm())).collect();
        SParams {
            grid,
            s21,
            s21_db,
            singular: Vec::new(),
        }
    }

    /// A response given directly in dB with zero phase. Used for synthetic
    /// test responses.
    pub fn from_db(grid: FrequencyGrid, db: &[f64]) -> Self {
        let s21 = db
            .iter()
            .map(|d| Complex64::new(10f64.powf(d / 20.0), 0.0))
            .collect();
        SParams {
            grid,
            s21,
            s21_db: db.iter().map(|d| d.clamp(-120.0, 0.0)).collect(),
            singular: Vec::new(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.s21.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// CSV with header `freq_ghz,s21_re,s21_im,s21_db`, nine significant
    /// digits per value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_ghz,s21_re,s21_im,s21_db\n");
        for (k, (z, db)) in self.s21.iter().zip(&self.s21_db).enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                fmt_sig(self.grid.freq(k), 9),
                fmt_sig(z.re, 9),
                fmt_sig(z.im, 9),
                fmt_sig(*db, 9)
            );
        }
        out
    }

    /// Parses the CSV written by [`SParams::to_csv`]. The grid is rebuilt
    /// from the first and last frequency.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == "freq_ghz,s21_re,s21_im,s21_db" => {}
            other => {
                return Err(CoreError::Parse(format!("unexpected s21 CSV header {other:?}")))
            }
        }
        let mut freqs = Vec::new();
        let mut s21 = Vec::new();
        let mut dbs = Vec::new();
        for (n, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| CoreError::Parse(format!("line {}: {e}", n + 2)))?;
            if vals.len() != 4 {
                return Err(CoreError::Parse(format!(
                    "line {}: expected 4 columns, got {}",
                    n + 2,
                    vals.len()
                )));
            }
            freqs.push(vals[0]);
            s21.push(Complex64::new(vals[1], vals[2]));
            dbs.push(vals[3]);
        }
        if freqs.len() < 2 {
            return Err(CoreError::Parse("s21 CSV needs at least two rows".into()));
        }
        let grid = FrequencyGrid::new(freqs[0], *freqs.last().unwrap(), freqs.len())?;
        Ok(SParams {
            grid,
            s21,
            s21_db: dbs,
            singular: Vec::new(),
        })
    }
}

/// Formats `v` with `sig` significant digits, `%g` style.
pub fn fmt_sig(v: f64, sig: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if exp < -5 || exp >= sig as i32 {
        let s = format!("{:.*e}", sig - 1, v);
        // trim mantissa zeros
        match s.split_once('e') {
            Some((m, e)) if m.contains('.') => {
                format!("{}e{}", m.trim_end_matches('0').trim_end_matches('.'), e)
            }
            _ => s,
        }
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, v);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    /// Frequency-length constant, GHz·unit.
    pub k_f: f64,
    pub k_max: f64,
    /// Coupling decay length, layout units.
    pub lambda_c: f64,
    /// Gaps beyond this many decay lengths carry no coupling.
    pub threshold_lengths: f64,
    pub orientation_depth: f64,
    pub fbw: f64,
    pub q_u: f64,
    /// External-coupling reference, in multiples of `fbw`.
    pub q_ref_per_fbw: f64,
    pub gap_w_ref: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            k_f: 210.0,
            k_max: 0.25,
            lambda_c: 0.12,
            threshold_lengths: 3.0,
            orientation_depth: 0.25,
            fbw: 0.06,
            q_u: 500.0,
            q_ref_per_fbw: 18.0,
            gap_w_ref: 0.1,
        }
    }
}

impl SurrogateConfig {
    pub fn g_threshold(&self) -> f64 {
        self.threshold_lengths * self.lambda_c
    }

    pub fn delta_u(&self) -> f64 {
        1.0 / (self.fbw * self.q_u)
    }

    pub fn q_ref(&self) -> f64 {
        self.q_ref_per_fbw * self.fbw
    }

    pub fn check(&self) -> Result<()> {
        let all = [
            self.k_f,
            self.k_max,
            self.lambda_c,
            self.threshold_lengths,
            self.orientation_depth,
            self.fbw,
            self.q_u,
            self.q_ref_per_fbw,
            self.gap_w_ref,
        ];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(CoreError::Contract(
                "surrogate constants must be positive".into(),
            ))
        }
    }

    /// Coupling coefficient for edge gap `gap` and opening angles `u_i, u_j`,
    /// or `None` beyond the threshold.
    pub fn coupling(&self, gap: f64, u_i: f64, u_j: f64) -> Option<f64> {
        if gap > self.g_threshold() {
            return None;
        }
        let orient = 1.0 + self.orientation_depth * (TAU * (u_i - u_j)).cos();
        Some(self.k_max * (-gap / self.lambda_c).exp() * orient)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingEdge {
    pub i: usize,
    pub j: usize,
    pub k: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingGraph {
    pub resonance_ghz: Vec<f64>,
    pub external: Vec<f64>,
    pub delta_u: f64,
    pub fbw: f64,
    /// Edges with `i < j`; coupling is symmetric.
    pub edges: Vec<CouplingEdge>,
}

impl CouplingGraph {
    pub fn len(&self) -> usize {
        self.resonance_ghz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resonance_ghz.is_empty()
    }

    pub fn k(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.edges
            .iter()
            .find(|e| e.i == a && e.j == b)
            .map_or(0.0, |e| e.k)
    }
}

/// Edge-to-edge gap between two resonators, clamped at zero.
pub fn edge_gap(layout: &Layout, i: usize, j: usize) -> f64 {
    let (a, b) = (&layout.resonators[i], &layout.resonators[j]);
    let d = (a.x - b.x).hypot(a.y - b.y);
    (d - 0.5 * (a.l + b.l)).max(0.0)
}

/// Pairs `(i, j)`, `i < j`, whose edge gap is within the coupling threshold.
pub fn coupled_pairs(layout: &Layout, cfg: &SurrogateConfig) -> Vec<(usize, usize)> {
    let n = layout.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if edge_gap(layout, i, j) <= cfg.g_threshold() {
                out.push((i, j));
            }
        }
    }
    out
}

pub fn build_coupling_graph(layout: &Layout, cfg: &SurrogateConfig) -> CouplingGraph {
    let n = layout.len();
    let rs = &layout.resonators;
    let resonance_ghz = rs.iter().map(|r| cfg.k_f / r.l).collect();
    let mut external = vec![0.0; n];
    if n > 0 {
        for p in [0, n - 1] {
            external[p] = (rs[p].gap_w / cfg.gap_w_ref) / cfg.q_ref();
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let gap = edge_gap(layout, i, j);
            if let Some(k) = cfg.coupling(gap, rs[i].u, rs[j].u) {
                edges.push(CouplingEdge { i, j, k, gap });
            }
        }
    }
    CouplingGraph {
        resonance_ghz,
        external,
        delta_u: cfg.delta_u(),
        fbw: cfg.fbw,
        edges,
    }
}

/// Dense LU factorization with partial pivoting, row-major `n × n`.
struct Lu {
    n: usize,
    a: Vec<Complex64>,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(mut a: Vec<Complex64>, n: usize) -> Option<Self> {
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let (piv, mag) = (col..n)
                .map(|r| (r, a[r * n + col].norm()))
                .fold((col, -1.0), |best, c| if c.1 > best.1 { c } else { best });
            if mag == 0.0 || !mag.is_finite() {
                return None;
            }
            if piv != col {
                for c in 0..n {
                    a.swap(piv * n + c, col * n + c);
                }
                perm.swap(piv, col);
            }
            let d = a[col * n + col];
            for r in col + 1..n {
                let f = a[r * n + col] / d;
                a[r * n + col] = f;
                for c in col + 1..n {
                    let t = a[col * n + c];
                    a[r * n + c] -= f * t;
                }
            }
        }
        Some(Lu { n, a, perm })
    }

    fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut x: Vec<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            for c in 0..r {
                let t = self.a[r * n + c] * x[c];
                x[r] -= t;
            }
        }
        for r in (0..n).rev() {
            for c in r + 1..n {
                let t = self.a[r * n + c] * x[c];
                x[r] -= t;
            }
            x[r] /= self.a[r * n + r];
        }
        x
    }
}

fn one_norm(a: &[Complex64], n: usize) -> f64 {
    (0..n)
        .map(|c| (0..n).map(|r| a[r * n + c].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// System matrix at frequency `f`, row-major.
pub fn system_matrix(graph: &CouplingGraph, f: f64) -> Vec<Complex64> {
    let n = graph.len();
    let mut a = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        let fi = graph.resonance_ghz[i];
        let lam = (f / fi - fi / f) / graph.fbw;
        a[i * n + i] = Complex64::new(graph.delta_u + graph.external[i], lam);
    }
    for e in &graph.edges {
        let v = Complex64::new(0.0, e.k / graph.fbw);
        a[e.i * n + e.j] = v;
        a[e.j * n + e.i] = v;
    }
    a
}

/// Transmission at a single frequency, `None` when the system is singular.
/// Returns `(s21, s12)`.
pub fn transmission_at(graph: &CouplingGraph, f: f64) -> Option<(Complex64, Complex64)> {
    let n = graph.len();
    let a = system_matrix(graph, f);
    let norm_a = one_norm(&a, n);
    let lu = Lu::factor(a, n)?;
    let mut inv = vec![Complex64::new(0.0, 0.0); n * n];
    let mut e = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..n {
        e.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        e[c] = Complex64::new(1.0, 0.0);
        let col = lu.solve(&e);
        for r in 0..n {
            inv[r * n + c] = col[r];
        }
    }
    let cond = norm_a * one_norm(&inv, n);
    if !(cond <= SINGULAR_CONDITION) {
        return None;
    }
    let scale = 2.0 * (graph.external[0] * graph.external[n - 1]).sqrt();
    Some((inv[(n - 1) * n] * scale, inv[n - 1] * scale))
}

/// s21 over the grid, unclamped complex values, plus flagged singular indices.
pub fn solve_s21(graph: &CouplingGraph, grid: &FrequencyGrid) -> SParams {
    let mut s21 = Vec::with_capacity(grid.n_points);
    let mut singular = Vec::new();
    for k in 0..grid.n_points {
        match transmission_at(graph, grid.freq(k)) {
            Some((z, _)) => s21.push(z),
            None => {
                singular.push(k);
                s21.push(Complex64::new(0.0, 0.0));
            }
        }
    }
    let mut sp = SParams::from_complex(*grid, s21);
    sp.singular = singular;
    sp
}

/// s12 over the grid (reverse transmission), used for reciprocity checks.
pub fn solve_s12(graph: &CouplingGraph, grid: &FrequencyGrid) -> Vec<Complex64> {
    (0..grid.n_points)
        .map(|k| transmission_at(graph, grid.freq(k)).map_or(Complex64::new(0.0, 0.0), |t| t.1))
        .collect()
}

/// Anything that maps a layout to its transmission response.
pub trait Oracle: Send + Sync {
    fn grid(&self) -> &FrequencyGrid;
    fn evaluate(&self, layout: &Layout) -> SParams;
    fn name(&self) -> &'static str;
}

#[derive(Debug, Clone, Default)]
pub struct AnalyticOracle {
    pub cfg: SurrogateConfig,
    pub grid: FrequencyGrid,
}

impl AnalyticOracle {
    pub fn new(cfg: SurrogateConfig, grid: FrequencyGrid) -> Self {
        AnalyticOracle { cfg, grid }
    }
}

impl Oracle for AnalyticOracle {
    fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    fn evaluate(&self, layout: &Layout) -> SParams {
        solve_s21(&build_coupling_graph(layout, &self.cfg), &self.grid)
    }

    fn name(&self) -> &'static str {
        "analytic"
    }
}
