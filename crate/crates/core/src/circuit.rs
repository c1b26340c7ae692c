//! Square open-loop resonators, layouts built from them, parameter bounds,
//! validity checking and random layout generation.
//!
//! A resonator carries nine numbers: its centre `(x, y)`, cavity side `l`,
//! wall thickness `w`, the opening position `(gap_x, gap_y)`, the opening
//! size `(gap_h, gap_w)` and the opening angle `u`. Only `x, y, l, w, u` are
//! free; the four gap fields are re-derived whenever `w` or `u` changes.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Number of geometric parameters per resonator.
pub const PARAMS_PER_RESONATOR: usize = 9;

/// Minimum clearance between the bounding squares of two resonators.
pub const MIN_CLEARANCE: f64 = 0.02;

/// Ratio between the opening width and the wall thickness.
pub const GAP_W_PER_W: f64 = 1.25;

/// Maximum number of rejected draws before layout sampling gives up.
pub const MAX_REJECTIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resonator {
    pub x: f64,
    pub y: f64,
    pub l: f64,
    pub w: f64,
    pub gap_x: f64,
    pub gap_y: f64,
    pub gap_h: f64,
    pub gap_w: f64,
    pub u: f64,
}

impl Resonator {
    /// Builds a resonator from its free parameters and derives the gap fields
    /// without bounds checking.
    pub fn new(x: f64, y: f64, l: f64, w: f64, u: f64, bounds: &ParamBounds) -> Self {
        let mut r = Resonator {
            x,
            y,
            l,
            w,
            gap_x: 0.0,
            gap_y: 0.0,
            gap_h: 0.0,
            gap_w: 0.0,
            u,
        };
        r.rederive(bounds);
        r
    }

    /// The nine parameters in canonical order
    /// `[x, y, l, w, gap_x, gap_y, gap_h, gap_w, u]`.
    pub fn to_array(&self) -> [f64; PARAMS_PER_RESONATOR] {
        [
            self.x, self.y, self.l, self.w, self.gap_x, self.gap_y, self.gap_h, self.gap_w, self.u,
        ]
    }

    pub fn from_array(v: [f64; PARAMS_PER_RESONATOR]) -> Self {
        Resonator {
            x: v[0],
            y: v[1],
            l: v[2],
            w: v[3],
            gap_x: v[4],
            gap_y: v[5],
            gap_h: v[6],
            gap_w: v[7],
            u: v[8],
        }
    }

    /// Recomputes the gap fields from `x, y, l, w, u`. Never fails; callers
    /// that need the bounds contract use [`derive_gap_fields`].
    pub(crate) fn rederive(&mut self, bounds: &ParamBounds) {
        let (gx, gy) = perimeter_point(self.x, self.y, self.l, self.u);
        self.gap_x = gx;
        self.gap_y = gy;
        self.gap_h = self.w;
        self.gap_w = (GAP_W_PER_W * self.w).clamp(bounds.gap_w.lo, bounds.gap_w.hi);
    }
}

/// Point on the boundary of the square of side `l` centred at `(x, y)` hit by
/// the ray leaving the centre at angle `2πu` counterclockwise from +x.
fn perimeter_point(x: f64, y: f64, l: f64, u: f64) -> (f64, f64) {
    let theta = TAU * u;
    let (s, c) = theta.sin_cos();
    let t = 0.5 * l / c.abs().max(s.abs());
    (x + t * c, y + t * s)
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn span(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.lo) / self.span()
    }

    pub fn denormalize(&self, t: f64) -> f64 {
        self.lo + t * self.span()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub x: Interval,
    pub y: Interval,
    pub l: Interval,
    pub w: Interval,
    pub gap_w: Interval,
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds {
            x: Interval::new(0.0, 6.0),
            y: Interval::new(0.0, 6.0),
            l: Interval::new(0.57, 0.91),
            w: Interval::new(0.08, 0.16),
            gap_w: Interval::new(0.05, 0.20),
        }
    }
}

impl ParamBounds {
    pub fn check(&self) -> Result<()> {
        for (name, iv) in [
            ("x", self.x),
            ("y", self.y),
            ("l", self.l),
            ("w", self.w),
            ("gap_w", self.gap_w),
        ] {
            if !(iv.lo < iv.hi) {
                return Err(CoreError::Contract(format!(
                    "bound `{name}` must satisfy lo < hi, got [{}, {}]",
                    iv.lo, iv.hi
                )));
            }
        }
        Ok(())
    }

    /// Normalization interval for each of the nine state columns. `u` is
    /// passed through, so its interval is `[0, 1]`.
    fn column_intervals(&self) -> [Interval; PARAMS_PER_RESONATOR] {
        [
            self.x,
            self.y,
            self.l,
            self.w,
            self.x,
            self.y,
            self.w,
            self.gap_w,
            Interval::new(0.0, 1.0),
        ]
    }

    /// Bounds violations of the free parameters of `r`, in field order.
    fn violations(&self, index: usize, r: &Resonator) -> Vec<CoreError> {
        let mut out = Vec::new();
        let mut check = |field: &'static str, value: f64, iv: Interval| {
            if !iv.contains(value) || !value.is_finite() {
                out.push(CoreError::OutOfBounds {
                    index,
                    field,
                    value,
                    lo: iv.lo,
                    hi: iv.hi,
                });
            }
        };
        check("x", r.x, self.x);
        check("y", r.y, self.y);
        check("l", r.l, self.l);
        check("w", r.w, self.w);
        check("gap_w", r.gap_w, self.gap_w);
        if !(0.0..1.0).contains(&r.u) {
            out.push(CoreError::OutOfBounds {
                index,
                field: "u",
                value: r.u,
                lo: 0.0,
                hi: 1.0,
            });
        }
        out
    }
}

/// Returns `r` with `gap_x, gap_y, gap_h, gap_w` derived from its free
/// parameters. Fails with the first out-of-bounds free parameter.
pub fn derive_gap_fields(r: &Resonator, bounds: &ParamBounds) -> Result<Resonator> {
    let mut out = *r;
    out.rederive(bounds);
    // gap_w is derived and always clamped, so only free fields can fail here.
    match bounds.violations(0, &out).into_iter().next() {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub template_id: String,
    pub resonators: Vec<Resonator>,
}

impl Layout {
    pub fn new(template_id: impl Into<String>, resonators: Vec<Resonator>) -> Self {
        Layout {
            template_id: template_id.into(),
            resonators,
        }
    }

    pub fn len(&self) -> usize {
        self.resonators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resonators.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serialization is infallible")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Signed clearance between the bounding squares of two resonators: the
/// larger of the x- and y-separations between facing edges. Negative means
/// the squares intersect.
pub fn square_clearance(a: &Resonator, b: &Resonator) -> f64 {
    let half = 0.5 * (a.l + b.l);
    ((a.x - b.x).abs() - half).max((a.y - b.y).abs() - half)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    TooFewResonators(usize),
    Bounds {
        index: usize,
        field: &'static str,
        value: f64,
    },
    Overlap {
        i: usize,
        j: usize,
        clearance: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidityReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    pub fn overlapping_pairs(&self) -> Vec<(usize, usize)> {
        self.violations
            .iter()
            .filter_map(|v| match v {
                Violation::Overlap { i, j, .. } => Some((*i, *j)),
                _ => None,
            })
            .collect()
    }
}

pub fn validate_layout(layout: &Layout, bounds: &ParamBounds) -> ValidityReport {
    let mut violations = Vec::new();
    if layout.len() < 2 {
        violations.push(Violation::TooFewResonators(layout.len()));
    }
    for (i, r) in layout.resonators.iter().enumerate() {
        for e in bounds.violations(i, r) {
            if let CoreError::OutOfBounds {
                index, field, value, ..
            } = e
            {
                violations.push(Violation::Bounds {
                    index,
                    field,
                    value,
                });
            }
        }
    }
    let rs = &layout.resonators;
    for i in 0..rs.len() {
        for j in i + 1..rs.len() {
            let c = square_clearance(&rs[i], &rs[j]);
            // NaN clearance counts as overlap.
            if !(c >= MIN_CLEARANCE) {
                violations.push(Violation::Overlap { i, j, clearance: c });
            }
        }
    }
    ValidityReport {
        valid: violations.is_empty(),
        violations,
    }
}

pub fn is_valid(layout: &Layout, bounds: &ParamBounds) -> bool {
    if layout.len() < 2 {
        return false;
    }
    let rs = &layout.resonators;
    for (i, r) in rs.iter().enumerate() {
        if !bounds.violations(i, r).is_empty() {
            return false;
        }
    }
    for i in 0..rs.len() {
        for j in i + 1..rs.len() {
            if !(square_clearance(&rs[i], &rs[j]) >= MIN_CLEARANCE) {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    /// Each resonator sits to the right of the previous one with a small
    /// random perpendicular offset.
    Chain,
    /// Like `Chain`, but perpendicular offsets alternate in sign so the
    /// resonators zig-zag.
    OffsetChain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub n: usize,
    pub pattern: Pattern,
    /// Edge-to-edge gap between consecutive resonators.
    pub link_gap: Interval,
    /// Perpendicular offset between consecutive centres. For `OffsetChain`
    /// this is the magnitude range and the sign alternates.
    pub link_offset: Interval,
}

pub const SUPPORTED_COUNTS: [usize; 6] = [2, 3, 4, 5, 6, 8];

impl TemplateSpec {
    pub fn chain(n: usize) -> Self {
        TemplateSpec {
            n,
            pattern: Pattern::Chain,
            link_gap: Interval::new(0.05, 0.40),
            link_offset: Interval::new(-0.3, 0.3),
        }
    }

    pub fn offset_chain(n: usize) -> Self {
        TemplateSpec {
            n,
            pattern: Pattern::OffsetChain,
            link_gap: Interval::new(0.05, 0.40),
            link_offset: Interval::new(0.15, 0.45),
        }
    }

    pub fn id(&self) -> String {
        match self.pattern {
            Pattern::Chain => format!("chain-{}", self.n),
            Pattern::OffsetChain => format!("offset-chain-{}", self.n),
        }
    }

    pub fn check(&self) -> Result<()> {
        if !SUPPORTED_COUNTS.contains(&self.n) {
            return Err(CoreError::InvalidTemplate(format!(
                "resonator count {} not in {:?}",
                self.n, SUPPORTED_COUNTS
            )));
        }
        if !(self.link_gap.lo < self.link_gap.hi) || self.link_gap.lo < MIN_CLEARANCE {
            return Err(CoreError::InvalidTemplate(format!(
                "link gap range [{}, {}] must be increasing and at least {MIN_CLEARANCE}",
                self.link_gap.lo, self.link_gap.hi
            )));
        }
        if !(self.link_offset.lo <= self.link_offset.hi) {
            return Err(CoreError::InvalidTemplate(
                "link offset range must be non-decreasing".into(),
            ));
        }
        Ok(())
    }
}

/// Draws one layout from `template` using the caller's generator.
///
/// The cavity side `l` and wall thickness `w` are drawn once per layout and
/// shared by every resonator; opening angles are per resonator. The chain is
/// laid out from the origin and then centred in the bounds box. Draws that
/// fail validation are rejected, up to [`MAX_REJECTIONS`] times.
pub fn sample_layout_with<R: Rng + ?Sized>(
    template: &TemplateSpec,
    bounds: &ParamBounds,
    rng: &mut R,
) -> Result<Layout> {
    template.check()?;
    bounds.check()?;
    for _ in 0..MAX_REJECTIONS {
        let l = rng.gen_range(bounds.l.lo..=bounds.l.hi);
        let w = rng.gen_range(bounds.w.lo..=bounds.w.hi);
        let mut centres = Vec::with_capacity(template.n);
        let (mut x, mut y) = (0.0f64, 0.0f64);
        for i in 0..template.n {
            if i > 0 {
                let gap = rng.gen_range(template.link_gap.lo..=template.link_gap.hi);
                let off = rng.gen_range(template.link_offset.lo..=template.link_offset.hi);
                let off = match template.pattern {
                    Pattern::Chain => off,
                    Pattern::OffsetChain if i % 2 == 1 => off,
                    Pattern::OffsetChain => -off,
                };
                x += l + gap;
                y += off;
            }
            centres.push((x, y, rng.gen_range(0.0..1.0)));
        }
        let (xmin, xmax) = min_max(centres.iter().map(|c| c.0));
        let (ymin, ymax) = min_max(centres.iter().map(|c| c.1));
        let dx = 0.5 * (bounds.x.lo + bounds.x.hi) - 0.5 * (xmin + xmax);
        let dy = 0.5 * (bounds.y.lo + bounds.y.hi) - 0.5 * (ymin + ymax);
        let resonators = centres
            .into_iter()
            .map(|(cx, cy, u)| Resonator::new(cx + dx, cy + dy, l, w, u, bounds))
            .collect();
        let layout = Layout::new(template.id(), resonators);
        if is_valid(&layout, bounds) {
            return Ok(layout);
        }
    }
    Err(CoreError::SamplingExhausted {
        attempts: MAX_REJECTIONS,
    })
}

pub fn sample_random_layout(
    template: &TemplateSpec,
    bounds: &ParamBounds,
    rng_seed: u64,
) -> Result<Layout> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_layout_with(template, bounds, &mut rng)
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// Min-max normalized parameter matrix, one row per resonator.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    pub rows: Vec<[f64; PARAMS_PER_RESONATOR]>,
}

impl StateMatrix {
    pub fn flatten(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.iter().copied()).collect()
    }

    /// Inverse of [`state_matrix`].
    pub fn denormalize(&self, bounds: &ParamBounds) -> Vec<Resonator> {
        let cols = bounds.column_intervals();
        self.rows
            .iter()
            .map(|row| {
                let mut v = [0.0; PARAMS_PER_RESONATOR];
                for k in 0..PARAMS_PER_RESONATOR {
                    v[k] = cols[k].denormalize(row[k]);
                }
                Resonator::from_array(v)
            })
            .collect()
    }
}

pub fn state_matrix(layout: &Layout, bounds: &ParamBounds) -> StateMatrix {
    let cols = bounds.column_intervals();
    let rows = layout
        .resonators
        .iter()
        .map(|r| {
            let v = r.to_array();
            let mut row = [0.0; PARAMS_PER_RESONATOR];
            for k in 0..PARAMS_PER_RESONATOR {
                row[k] = cols[k].normalize(v[k]);
            }
            row
        })
        .collect();
    StateMatrix { rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b() -> ParamBounds {
        ParamBounds::default()
    }

    fn res(x: f64, y: f64, l: f64) -> Resonator {
        Resonator::new(x, y, l, 0.1, 0.0, &b())
    }

    #[test]
    fn gap_at_angle_zero_is_right_edge_midpoint() {
        let r = derive_gap_fields(&res(1.0, 1.0, 0.6), &b()).unwrap();
        assert!((r.gap_x - 1.3).abs() < 1e-12);
        assert!((r.gap_y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gap_at_quarter_turn_is_top_edge_midpoint() {
        let mut r = res(1.0, 1.0, 0.6);
        r.u = 0.25;
        let r = derive_gap_fields(&r, &b()).unwrap();
        assert!((r.gap_x - 1.0).abs() < 1e-12);
        assert!((r.gap_y - 1.3).abs() < 1e-12);
    }

    #[test]
    fn gap_size_follows_wall_thickness() {
        let r = derive_gap_fields(&res(1.0, 1.0, 0.6), &b()).unwrap();
        assert_eq!(r.gap_h, 0.10);
        assert!((r.gap_w - 0.125).abs() < 1e-15);
    }

    #[test]
    fn derive_rejects_out_of_bounds_and_names_field() {
        let mut r = res(1.0, 1.0, 0.6);
        r.l = 0.95;
        match derive_gap_fields(&r, &b()) {
            Err(CoreError::OutOfBounds { field, .. }) => assert_eq!(field, "l"),
            other => panic!("unexpected {other:?}"),
        }
        r.l = 0.6;
        r.u = 1.0;
        match derive_gap_fields(&r, &b()) {
            Err(CoreError::OutOfBounds { field, .. }) => assert_eq!(field, "u"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn identical_placement_overlaps() {
        let l = Layout::new("t", vec![res(1.0, 1.0, 0.6), res(1.0, 1.0, 0.6)]);
        let rep = validate_layout(&l, &b());
        assert!(!rep.valid);
        assert_eq!(rep.overlapping_pairs(), vec![(0, 1)]);
    }

    #[test]
    fn separated_squares_are_valid() {
        let l = Layout::new("t", vec![res(0.0, 0.0, 0.6), res(2.0, 0.0, 0.6)]);
        let rep = validate_layout(&l, &b());
        assert!(rep.valid, "{rep:?}");
        assert!((square_clearance(&l.resonators[0], &l.resonators[1]) - 1.4).abs() < 1e-12);
    }

    #[test]
    fn oversized_side_is_a_bounds_violation() {
        let mut l = Layout::new("t", vec![res(0.0, 0.0, 0.6), res(3.0, 0.0, 0.6)]);
        l.resonators[1].l = 0.95;
        let rep = validate_layout(&l, &b());
        assert!(!rep.valid);
        assert!(rep.violations.iter().any(
            |v| matches!(v, Violation::Bounds { index: 1, field: "l", .. })
        ));
    }

    #[test]
    fn single_resonator_is_invalid() {
        let l = Layout::new("t", vec![res(1.0, 1.0, 0.6)]);
        assert!(!validate_layout(&l, &b()).valid);
        assert!(!is_valid(&l, &b()));
    }

    #[test]
    fn sampling_is_deterministic_and_valid() {
        let t = TemplateSpec::chain(4);
        let a = sample_random_layout(&t, &b(), 7).unwrap();
        let c = sample_random_layout(&t, &b(), 7).unwrap();
        assert_eq!(a, c);
        assert!(validate_layout(&a, &b()).valid);
        assert_eq!(a.len(), 4);
        assert_eq!(a.template_id, "chain-4");
    }

    #[test]
    fn sampling_covers_the_side_length_range() {
        let t = TemplateSpec::chain(4);
        let bounds = b();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut seen = std::collections::HashSet::new();
        for seed in 0..1000u64 {
            let l = sample_random_layout(&t, &bounds, seed).unwrap();
            assert!(validate_layout(&l, &bounds).valid);
            seen.insert(l.to_json());
            for r in &l.resonators {
                lo = lo.min(r.l);
                hi = hi.max(r.l);
            }
        }
        assert!((hi - lo) / bounds.l.span() >= 0.8);
        // distinct seeds give distinct layouts
        assert!(seen.len() >= 999);
    }

    #[test]
    fn every_template_size_samples() {
        for n in SUPPORTED_COUNTS {
            for t in [TemplateSpec::chain(n), TemplateSpec::offset_chain(n)] {
                let l = sample_random_layout(&t, &b(), 11).unwrap();
                assert!(validate_layout(&l, &b()).valid, "{}", t.id());
            }
        }
    }

    #[test]
    fn impossible_template_exhausts() {
        let mut t = TemplateSpec::chain(8);
        t.link_gap = Interval::new(3.0, 4.0);
        assert_eq!(
            sample_random_layout(&t, &b(), 0),
            Err(CoreError::SamplingExhausted { attempts: MAX_REJECTIONS })
        );
    }

    #[test]
    fn unsupported_count_is_rejected() {
        assert!(matches!(
            sample_random_layout(&TemplateSpec::chain(7), &b(), 0),
            Err(CoreError::InvalidTemplate(_))
        ));
    }

    #[test]
    fn state_matrix_extremes_and_round_trip() {
        let bounds = b();
        let lo = Resonator::new(0.0, 0.0, 0.57, 0.08, 0.0, &bounds);
        let hi = Resonator::new(6.0, 6.0, 0.91, 0.16, 0.5, &bounds);
        let l = Layout::new("t", vec![lo, hi]);
        let m = state_matrix(&l, &bounds);
        for k in [0, 1, 2, 3, 6] {
            assert_eq!(m.rows[0][k], 0.0);
            assert_eq!(m.rows[1][k], 1.0);
        }
        assert_eq!(m.rows[1][8], 0.5);
        let back = m.denormalize(&bounds);
        for (a, c) in back.iter().zip(&l.resonators) {
            for (p, q) in a.to_array().iter().zip(c.to_array()) {
                assert!((p - q).abs() <= 1e-12);
            }
        }
        assert_eq!(m.flatten().len(), 18);
    }

    #[test]
    fn layout_json_uses_exact_field_names() {
        let l = sample_random_layout(&TemplateSpec::chain(2), &b(), 3).unwrap();
        let v: serde_json::Value = serde_json::from_str(&l.to_json()).unwrap();
        let keys: Vec<_> = v["resonators"][0].as_object().unwrap().keys().cloned().collect();
        for k in ["x", "y", "l", "w", "gap_x", "gap_y", "gap_h", "gap_w", "u"] {
            assert!(keys.contains(&k.to_string()));
        }
        assert_eq!(v["template_id"], "chain-2");
        assert_eq!(Layout::from_json(&l.to_json()).unwrap(), l);
    }

    proptest! {
        #[test]
        fn derive_is_idempotent_and_on_boundary(
            x in 0.0..6.0f64, y in 0.0..6.0f64, l in 0.57..0.91f64,
            w in 0.08..0.16f64, u in 0.0..1.0f64,
        ) {
            let bounds = b();
            let r = Resonator { x, y, l, w, gap_x: 0.0, gap_y: 0.0, gap_h: 0.0, gap_w: 0.0, u };
            let once = derive_gap_fields(&r, &bounds).unwrap();
            let twice = derive_gap_fields(&once, &bounds).unwrap();
            prop_assert_eq!(once, twice);
            let d = (once.gap_x - x).abs().max((once.gap_y - y).abs());
            prop_assert!((d - 0.5 * l).abs() < 1e-9);
            prop_assert_eq!(once.gap_h, w);
        }

        #[test]
        fn validity_is_order_independent(seed in 0u64..500, rot in 0usize..4) {
            let bounds = b();
            let mut l = sample_random_layout(&TemplateSpec::chain(4), &bounds, seed).unwrap();
            // squeeze the chain so some pairs overlap
            if seed % 2 == 0 {
                for (i, r) in l.resonators.iter_mut().enumerate() {
                    r.x = 1.0 + 0.5 * i as f64;
                }
            }
            let v0 = validate_layout(&l, &bounds).valid;
            l.resonators.rotate_left(rot);
            l.resonators.reverse();
            prop_assert_eq!(v0, validate_layout(&l, &bounds).valid);
        }
    }
}
