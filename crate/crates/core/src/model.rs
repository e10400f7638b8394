//! Model parameters and the marked network intensity.
//!
//! An event at node `s`, time `t` with mark `m` has intensity
//!
//! ```text
//! λ_s(t, m) = μ_s(t) · J0(m | p0_s)
//!           + Σ_{t_i < t} θ[s][s_i] · ω[s][s_i] · exp(-ω[s][s_i] (t - t_i)) · J1(m, m_i | p_on, p_off)
//! ```
//!
//! where `J0` is a product of independent Bernoulli(p0_s) word indicators and
//! `J1` switches absent parent words on with `p_on` and present ones off with
//! `p_off`. Both masses are normalized over the 2^W mark space and are only
//! ever handled in log space.
//!
//! Matrices are indexed `[receiver][source]`: `theta[s][s2]` is the expected
//! number of events at `s` directly triggered by one event at `s2`.

use serde::{Deserialize, Serialize};

use crate::corpus::MarkedEvent;
use crate::error::{HbtmError, Result};
use crate::mark::Mark;

/// Probability clipping margin.
pub const PROB_EPS: f64 = 1e-6;
pub const OMEGA_MIN: f64 = 1e-3;
pub const OMEGA_MAX: f64 = 1e3;

/// Legal parameter ranges used when clipping estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub prob_eps: f64,
    pub omega_min: f64,
    pub omega_max: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            prob_eps: PROB_EPS,
            omega_min: OMEGA_MIN,
            omega_max: OMEGA_MAX,
        }
    }
}

impl Bounds {
    pub fn clip_prob(&self, p: f64) -> f64 {
        p.clamp(self.prob_eps, 1.0 - self.prob_eps)
    }

    pub fn clip_omega(&self, w: f64) -> f64 {
        w.clamp(self.omega_min, self.omega_max)
    }
}

/// Piecewise-constant background rate per node.
///
/// Bin `k` covers `[t_start + kΔ, t_start + (k+1)Δ)`, the last bin is closed
/// on the right and cut at `t_end`. The rate is zero outside the window.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundRate {
    pub bin_width: f64,
    pub t_start: f64,
    pub t_end: f64,
    /// `bins[s][k]`, events per day.
    pub bins: Vec<Vec<f64>>,
}

impl BackgroundRate {
    /// Number of bins needed to cover `[t_start, t_end]` at width `bin_width`.
    pub fn bin_count(t_start: f64, t_end: f64, bin_width: f64) -> usize {
        (((t_end - t_start) / bin_width).ceil() as usize).max(1)
    }

    pub fn zeros(n_nodes: usize, t_start: f64, t_end: f64, bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0) || !bin_width.is_finite() {
            return Err(HbtmError::InvalidConfig(format!("bin width must be positive, got {bin_width}")));
        }
        if !(t_end >= t_start) || !t_start.is_finite() || !t_end.is_finite() {
            return Err(HbtmError::InvalidConfig(format!(
                "invalid background window [{t_start}, {t_end}]"
            )));
        }
        let k = Self::bin_count(t_start, t_end, bin_width);
        Ok(BackgroundRate {
            bin_width,
            t_start,
            t_end,
            bins: vec![vec![0.0; k]; n_nodes],
        })
    }

    pub fn n_bins(&self) -> usize {
        self.bins.first().map_or(0, Vec::len)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start && t <= self.t_end
    }

    /// Bin holding `t`, or `None` outside the window.
    pub fn bin_index(&self, t: f64) -> Option<usize> {
        if !self.contains(t) {
            return None;
        }
        let k = ((t - self.t_start) / self.bin_width).floor() as usize;
        Some(k.min(self.n_bins().saturating_sub(1)))
    }

    /// Length of bin `k` inside the window.
    pub fn bin_length(&self, k: usize) -> f64 {
        let lo = self.t_start + k as f64 * self.bin_width;
        let hi = if k + 1 == self.n_bins() {
            self.t_end
        } else {
            lo + self.bin_width
        };
        (hi - lo).max(0.0)
    }

    /// Clipped overlap of bin `k` with `[a, b]`.
    fn bin_overlap(&self, k: usize, a: f64, b: f64) -> f64 {
        let lo = self.t_start + k as f64 * self.bin_width;
        let hi = lo + self.bin_length(k);
        (hi.min(b) - lo.max(a)).max(0.0)
    }

    pub fn rate(&self, s: usize, t: f64) -> f64 {
        self.bin_index(t).map_or(0.0, |k| self.bins[s][k])
    }

    /// ∫ μ_s(t) dt over `[a, b]` ∩ window.
    pub fn integral(&self, s: usize, a: f64, b: f64) -> f64 {
        self.bins[s]
            .iter()
            .enumerate()
            .map(|(k, &v)| v * self.bin_overlap(k, a, b))
            .sum()
    }

    pub fn total_integral(&self, s: usize) -> f64 {
        self.integral(s, self.t_start, self.t_end)
    }

    /// Shifts the window by `dt` without touching bin values.
    pub fn shifted(&self, dt: f64) -> Self {
        BackgroundRate {
            t_start: self.t_start + dt,
            t_end: self.t_end + dt,
            ..self.clone()
        }
    }
}

/// All model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsDoc", into = "ParamsDoc")]
pub struct ModelParams {
    pub n_nodes: usize,
    pub dict_size: usize,
    pub background: BackgroundRate,
    pub p0: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
    pub omega: Vec<Vec<f64>>,
    pub p_on: Vec<Vec<f64>>,
    pub p_off: Vec<Vec<f64>>,
}

/// JSON layout of [`ModelParams`].
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDoc {
    #[serde(rename = "S")]
    s: usize,
    #[serde(rename = "W")]
    w: usize,
    bin_width: f64,
    t_start: f64,
    t_end: f64,
    p0: Vec<f64>,
    theta: Vec<Vec<f64>>,
    omega: Vec<Vec<f64>>,
    p_on: Vec<Vec<f64>>,
    p_off: Vec<Vec<f64>>,
    background: Vec<Vec<f64>>,
}

impl From<ModelParams> for ParamsDoc {
    fn from(p: ModelParams) -> Self {
        ParamsDoc {
            s: p.n_nodes,
            w: p.dict_size,
            bin_width: p.background.bin_width,
            t_start: p.background.t_start,
            t_end: p.background.t_end,
            p0: p.p0,
            theta: p.theta,
            omega: p.omega,
            p_on: p.p_on,
            p_off: p.p_off,
            background: p.background.bins,
        }
    }
}

impl TryFrom<ParamsDoc> for ModelParams {
    type Error = HbtmError;

    fn try_from(d: ParamsDoc) -> Result<Self> {
        let p = ModelParams {
            n_nodes: d.s,
            dict_size: d.w,
            background: BackgroundRate {
                bin_width: d.bin_width,
                t_start: d.t_start,
                t_end: d.t_end,
                bins: d.background,
            },
            p0: d.p0,
            theta: d.theta,
            omega: d.omega,
            p_on: d.p_on,
            p_off: d.p_off,
        };
        p.check_shapes()?;
        Ok(p)
    }
}

fn square(n: usize, v: f64) -> Vec<Vec<f64>> {
    vec![vec![v; n]; n]
}

impl ModelParams {
    /// Parameters with uniform pairwise values and the given background.
    pub fn uniform(
        dict_size: usize,
        background: BackgroundRate,
        p0: f64,
        theta: f64,
        omega: f64,
        p_on: f64,
        p_off: f64,
    ) -> Self {
        let n = background.bins.len();
        ModelParams {
            n_nodes: n,
            dict_size,
            background,
            p0: vec![p0; n],
            theta: square(n, theta),
            omega: square(n, omega),
            p_on: square(n, p_on),
            p_off: square(n, p_off),
        }
    }

    fn check_shapes(&self) -> Result<()> {
        let n = self.n_nodes;
        let bad = |what: &str| Err(HbtmError::Domain(format!("{what} has the wrong shape for S={n}")));
        if self.p0.len() != n {
            return bad("p0");
        }
        for (name, m) in [
            ("theta", &self.theta),
            ("omega", &self.omega),
            ("p_on", &self.p_on),
            ("p_off", &self.p_off),
        ] {
            if m.len() != n || m.iter().any(|r| r.len() != n) {
                return bad(name);
            }
        }
        if self.background.bins.len() != n {
            return bad("background");
        }
        let k = self.background.n_bins();
        if self.background.bins.iter().any(|r| r.len() != k) {
            return bad("background bins");
        }
        if !(self.background.bin_width > 0.0) {
            return Err(HbtmError::Domain("bin_width must be positive".into()));
        }
        Ok(())
    }

    /// Checks shapes and that every parameter lies in its legal range.
    pub fn validate(&self, bounds: &Bounds) -> Result<()> {
        self.check_shapes()?;
        let inside = |p: f64| p > 0.0 && p < 1.0;
        if let Some(p) = self.p0.iter().find(|&&p| !inside(p)) {
            return Err(HbtmError::Domain(format!("p0 value {p} outside (0,1)")));
        }
        for (name, m) in [("p_on", &self.p_on), ("p_off", &self.p_off)] {
            if let Some(p) = m.iter().flatten().find(|&&p| !inside(p)) {
                return Err(HbtmError::Domain(format!("{name} value {p} outside (0,1)")));
            }
        }
        if let Some(t) = self.theta.iter().flatten().find(|&&t| !(t >= 0.0) || !t.is_finite()) {
            return Err(HbtmError::Domain(format!("theta value {t} is not a finite nonnegative number")));
        }
        if let Some(w) = self
            .omega
            .iter()
            .flatten()
            .find(|&&w| !(w >= bounds.omega_min && w <= bounds.omega_max))
        {
            return Err(HbtmError::Domain(format!(
                "omega value {w} outside [{}, {}]",
                bounds.omega_min, bounds.omega_max
            )));
        }
        if let Some(b) = self.background.bins.iter().flatten().find(|&&b| !(b >= 0.0) || !b.is_finite()) {
            return Err(HbtmError::Domain(format!("background value {b} is not a finite nonnegative number")));
        }
        Ok(())
    }

    /// Mean spontaneous rate integrated over the window, summed over nodes.
    pub fn expected_immigrants(&self) -> f64 {
        (0..self.n_nodes).map(|s| self.background.total_integral(s)).sum()
    }
}

// ---------------------------------------------------------------------------
// Mark masses

/// Word-level agreement between a child mark and a parent mark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OverlapCounts {
    /// On in the child, off in the parent.
    pub w1: usize,
    /// Off in both.
    pub w2: usize,
    /// Off in the child, on in the parent.
    pub w3: usize,
    /// On in both.
    pub w4: usize,
}

impl OverlapCounts {
    pub fn total(&self) -> usize {
        self.w1 + self.w2 + self.w3 + self.w4
    }

    /// Counts from the sizes of the child and parent marks and their intersection.
    pub fn from_counts(dict_size: usize, child_ones: usize, parent_ones: usize, common: usize) -> Self {
        let w4 = common;
        let w1 = child_ones - common;
        let w3 = parent_ones - common;
        OverlapCounts {
            w1,
            w2: dict_size - w1 - w3 - w4,
            w3,
            w4,
        }
    }
}

pub fn mark_overlap(child: &Mark, parent: &Mark) -> Result<OverlapCounts> {
    if child.len() != parent.len() {
        return Err(HbtmError::LengthMismatch {
            expected: parent.len(),
            got: child.len(),
        });
    }
    Ok(OverlapCounts::from_counts(
        child.len(),
        child.count_ones(),
        parent.count_ones(),
        child.count_common(parent),
    ))
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(HbtmError::Domain(format!("{name} = {p} must lie strictly inside (0,1)")))
    }
}

/// `ln p^k (1-p)^(W-k)` for a mark with `k` of `W` words on.
#[inline]
pub fn j0_log_mass_counts(ones: usize, dict_size: usize, p0: f64) -> f64 {
    ones as f64 * p0.ln() + (dict_size - ones) as f64 * (-p0).ln_1p()
}

/// Log-probability of `mark` as the mark of a spontaneous event.
pub fn j0_log_mass(mark: &Mark, p0: f64) -> Result<f64> {
    check_prob("p0", p0)?;
    Ok(j0_log_mass_counts(mark.count_ones(), mark.len(), p0))
}

#[inline]
pub fn j1_log_mass_counts(o: &OverlapCounts, p_on: f64, p_off: f64) -> f64 {
    o.w1 as f64 * p_on.ln()
        + o.w2 as f64 * (-p_on).ln_1p()
        + o.w3 as f64 * p_off.ln()
        + o.w4 as f64 * (-p_off).ln_1p()
}

/// Log-probability that a parent with mark `parent` produces a child with mark `child`.
pub fn j1_log_mass(child: &Mark, parent: &Mark, p_on: f64, p_off: f64) -> Result<f64> {
    check_prob("p_on", p_on)?;
    check_prob("p_off", p_off)?;
    Ok(j1_log_mass_counts(&mark_overlap(child, parent)?, p_on, p_off))
}

// ---------------------------------------------------------------------------
// Intensity and likelihood

/// Log of one parent's triggering term.
#[inline]
pub(crate) fn log_trigger(theta: f64, omega: f64, dt: f64, log_j1: f64) -> f64 {
    theta.ln() + omega.ln() - omega * dt + log_j1
}

/// `ln(a + b)` from `ln a`, `ln b`.
#[inline]
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Marked intensity at node `s`, time `t`, for `mark`, given events before `t`.
///
/// History events at or after `t` are ignored.
pub fn intensity(params: &ModelParams, history: &[MarkedEvent], t: f64, mark: &Mark, s: usize) -> Result<f64> {
    Ok(log_intensity(params, history, t, mark, s, None)?.exp())
}

/// Log of the marked intensity. With `tau_max`, parents older than `tau_max`
/// contribute nothing (the kernel is truncated).
pub fn log_intensity(
    params: &ModelParams,
    history: &[MarkedEvent],
    t: f64,
    mark: &Mark,
    s: usize,
    tau_max: Option<f64>,
) -> Result<f64> {
    let bg = &params.background;
    if !bg.contains(t) {
        return Err(HbtmError::OutsideWindow {
            t,
            start: bg.t_start,
            end: bg.t_end,
        });
    }
    if mark.len() != params.dict_size {
        return Err(HbtmError::LengthMismatch {
            expected: params.dict_size,
            got: mark.len(),
        });
    }
    let mu = bg.rate(s, t);
    let mut acc = if mu > 0.0 {
        mu.ln() + j0_log_mass(mark, params.p0[s])?
    } else {
        f64::NEG_INFINITY
    };
    for ev in history {
        let dt = t - ev.timestamp;
        if !(dt > 0.0) || tau_max.is_some_and(|tau| dt > tau) {
            continue;
        }
        let src = ev.node_index;
        let theta = params.theta[s][src];
        if theta == 0.0 {
            continue;
        }
        let lj1 = j1_log_mass(mark, &ev.mark, params.p_on[s][src], params.p_off[s][src])?;
        acc = log_add(acc, log_trigger(theta, params.omega[s][src], dt, lj1));
    }
    Ok(acc)
}

/// Expected number of events triggered at all nodes by an event at `src`,
/// time `t`, observed up to `t_end`.
pub(crate) fn trigger_compensator(params: &ModelParams, src: usize, t: f64, t_end: f64, tau_max: Option<f64>) -> f64 {
    let mut horizon = (t_end - t).max(0.0);
    if let Some(tau) = tau_max {
        horizon = horizon.min(tau);
    }
    (0..params.n_nodes)
        .map(|s| params.theta[s][src] * -(-params.omega[s][src] * horizon).exp_m1())
        .sum()
}

/// Point-process log-likelihood of `events` observed on `[t_start, t_end]`.
///
/// Returns `-inf` (with a warning) when some event has zero intensity.
pub fn log_likelihood(params: &ModelParams, events: &[MarkedEvent], t_end: f64) -> Result<f64> {
    log_likelihood_windowed(params, events, t_end, None)
}

/// As [`log_likelihood`], with the kernel truncated at `tau_max` in both the
/// intensity and the compensator.
pub fn log_likelihood_windowed(
    params: &ModelParams,
    events: &[MarkedEvent],
    t_end: f64,
    tau_max: Option<f64>,
) -> Result<f64> {
    let mut ll = 0.0;
    for (i, ev) in events.iter().enumerate() {
        let li = log_intensity(params, &events[..i], ev.timestamp, &ev.mark, ev.node_index, tau_max)?;
        if li == f64::NEG_INFINITY {
            log::warn!("event {i} ({}) has zero intensity", ev.post_id);
            return Ok(f64::NEG_INFINITY);
        }
        ll += li;
    }
    let bg = &params.background;
    for s in 0..params.n_nodes {
        ll -= bg.integral(s, bg.t_start, t_end);
    }
    for ev in events {
        ll -= trigger_compensator(params, ev.node_index, ev.timestamp, t_end, tau_max);
    }
    Ok(ll)
}
