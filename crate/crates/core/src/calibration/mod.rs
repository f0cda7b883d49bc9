//! Kernel calibration for the transient (TIM1, TIM2), history-dependent
//! (HDIM2, HDIM2*) and constant (CIM2) impact models.
//!
//! Every kernel model solves a linear system `S = C k` whose right-hand side
//! holds label-conditioned responses of returns to past signs and whose matrix
//! holds sign correlations. Both sides come from the same spectral estimates
//! (one pass over the data), so in-sample solutions reproduce the measured
//! responses at non-negative lags.

mod smoothing;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{DaySeries, InstrumentData, Label};
use crate::linalg::{self, IllConditionedPolicy};
use crate::spectral::{CrossCorr2, CrossCorr3, DayAverage, Estimates, SpectralPlan};

pub use smoothing::{smooth_kernel, DEFAULT_CUTOFF};

/// Upper bound on the lag range unless configured otherwise; bounds the
/// memory of three-point tensors.
pub const DEFAULT_MAX_LAG_CAP: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Tim1,
    Tim2,
    Hdim2,
    #[serde(rename = "hdim2star")]
    Hdim2Star,
    Cim2,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Tim1,
        ModelKind::Tim2,
        ModelKind::Hdim2,
        ModelKind::Hdim2Star,
        ModelKind::Cim2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Tim1 => "tim1",
            ModelKind::Tim2 => "tim2",
            ModelKind::Hdim2 => "hdim2",
            ModelKind::Hdim2Star => "hdim2star",
            ModelKind::Cim2 => "cim2",
        }
    }

    /// Kernel names stored in [`CalibratedModel::kernels`].
    pub fn kernel_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::Tim1 => &["g"],
            ModelKind::Tim2 => &["g_n", "g_c"],
            ModelKind::Hdim2 | ModelKind::Hdim2Star => &["kappa_nc", "kappa_cc"],
            ModelKind::Cim2 => &["delta_c"],
        }
    }

    /// True when predictions vanish on `n` events by construction.
    pub fn label_consistent(self) -> bool {
        matches!(self, ModelKind::Hdim2 | ModelKind::Hdim2Star | ModelKind::Cim2)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown model kind `{s}`")))
    }
}

/// Matrix used for the single-kernel transient model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tim1Matrix {
    /// `C[l][j] = <eps(t) eps(t + l - j)>`, symmetric Toeplitz.
    #[default]
    SignAutocorr,
    /// `C[l][j] = <r(t) eps(t + l - j)>`, solved densely.
    ReturnSign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Largest kernel lag; defaults to the data's bound capped at `max_lag_cap`.
    pub max_lag: Option<usize>,
    pub max_lag_cap: usize,
    /// Segment length for spectral estimation; defaults to `2 * max_lag`.
    pub segment_len: Option<usize>,
    /// Tail smoothing; defaults to on for history-dependent models only.
    pub smooth: Option<bool>,
    pub smooth_cutoff: usize,
    pub cond_limit: f64,
    pub ridge_rel: f64,
    /// Regularise ill-conditioned transient models instead of failing.
    pub tim_ridge: bool,
    pub tim1_matrix: Tim1Matrix,
    /// Number of contiguous day blocks for jackknife standard errors; below 2 disables.
    pub jackknife_groups: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            max_lag: None,
            max_lag_cap: DEFAULT_MAX_LAG_CAP,
            segment_len: None,
            smooth: None,
            smooth_cutoff: DEFAULT_CUTOFF,
            cond_limit: linalg::DEFAULT_COND_LIMIT,
            ridge_rel: 1e-8,
            tim_ridge: false,
            tim1_matrix: Tim1Matrix::SignAutocorr,
            jackknife_groups: 0,
        }
    }
}

impl CalibrationConfig {
    /// Lag bound to use on `data`, validated against its shortest day.
    pub fn lag_for(&self, data: &InstrumentData) -> Result<usize> {
        let l = self.max_lag.unwrap_or(data.max_lag.min(self.max_lag_cap));
        if l > data.max_lag {
            return Err(Error::LagTooLarge {
                max_lag: l,
                len: data.max_lag + 1,
            });
        }
        if l == 0 {
            return Err(Error::InvalidInput("max lag must be positive".into()));
        }
        Ok(l)
    }

    pub fn segment_for(&self, max_lag: usize) -> usize {
        self.segment_len.unwrap_or(2 * max_lag).max(max_lag + 1)
    }

    pub fn smooth_for(&self, kind: ModelKind) -> bool {
        self.smooth
            .unwrap_or(matches!(kind, ModelKind::Hdim2 | ModelKind::Hdim2Star))
    }
}

// ---------------------------------------------------------------------------
// Responses and correlations
// ---------------------------------------------------------------------------

/// Label-conditioned responses `S_{pi,pi'}(l) = <1[pi(t) = pi'] r(t) 1[pi(t-l) = pi] eps(t-l)>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSet {
    /// Indexed `[pi][pi']`: lagged label first, current label second.
    pub by_labels: [[CrossCorr2; 2]; 2],
}

impl ResponseSet {
    pub fn max_lag(&self) -> usize {
        self.by_labels[0][0].max_lag()
    }

    pub fn s_pair(&self, lagged: Label, current: Label) -> &CrossCorr2 {
        &self.by_labels[lagged.index()][current.index()]
    }

    /// `S_pi = sum_pi' S_{pi,pi'}`.
    pub fn s_pi(&self, lagged: Label) -> CrossCorr2 {
        let row = &self.by_labels[lagged.index()];
        sum2(&row[0], &row[1])
    }

    /// `S = sum_pi S_pi`.
    pub fn s(&self) -> CrossCorr2 {
        sum2(&self.s_pi(Label::N), &self.s_pi(Label::C))
    }

    /// `sum_pi S_{pi,current}`: response carried by events with the given current label.
    pub fn s_current(&self, current: Label) -> CrossCorr2 {
        let c = current.index();
        sum2(&self.by_labels[0][c], &self.by_labels[1][c])
    }
}

fn sum2(a: &CrossCorr2, b: &CrossCorr2) -> CrossCorr2 {
    let values = a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect();
    let counts = a.lags().map(|l| a.count(l)).collect();
    CrossCorr2::new(a.max_lag(), values, counts).expect("matching shapes")
}

/// Everything the linear systems need, estimated in one spectral pass.
#[derive(Debug, Clone)]
pub struct Correlations {
    pub max_lag: usize,
    pub responses: ResponseSet,
    /// `<eps(t) eps(t + l)>`.
    pub sign_auto: CrossCorr2,
    /// `<r(t) eps(t + l)>`.
    pub return_sign: CrossCorr2,
    /// `[pi][pi']`: `<b_pi(t) b_pi'(t + l)>` with `b_pi = 1[pi(t) = pi] eps(t)`.
    pub labeled_signs: [[CrossCorr2; 2]; 2],
    /// `<1[pi(t) = c] b_pi(t + l) b_pi'(t + j)>` for `(n, n)`, `(n, c)`, `(c, c)`.
    pub triples: Option<[CrossCorr3; 3]>,
    /// Probability of a price-changing event.
    pub p_c: f64,
    /// Whether each label occurs at all, indexed by [`Label::index`].
    pub label_present: [bool; 2],
}

impl Correlations {
    /// Three-point tensor `<1[pi(t) = c] b_a(t + l) b_b(t + j)>`, `None` in the blind spot.
    pub fn triple(&self, a: Label, b: Label, l: isize, j: isize) -> Option<f64> {
        let t = self.triples.as_ref()?;
        match (a, b) {
            (Label::N, Label::N) => t[0].get(l, j),
            (Label::N, Label::C) => t[1].get(l, j),
            (Label::C, Label::N) => t[1].get(j, l),
            (Label::C, Label::C) => t[2].get(l, j),
        }
    }

    /// `C_{pi pi' c}(l, j) = <1[pi(t) = c] b_pi'(t - j) b_pi(t - l)>`.
    pub fn hdim_entry(&self, lagged: Label, kernel: Label, l: isize, j: isize) -> Option<f64> {
        self.triple(lagged, kernel, -l, -j)
    }
}

const N_SERIES: usize = 8;
// Series layout per day.
const EPS: usize = 0;
const B_N: usize = 1;
const B_C: usize = 2;
const D_C: usize = 3;
const RET: usize = 4;
const D_N_RET: usize = 5;
const D_C_RET: usize = 6;
const ONES: usize = 7;

fn day_series(day: &DaySeries, returns: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(day.len()); N_SERIES];
    for (e, &r) in day.events.iter().zip(returns) {
        let s = e.sign.value();
        let is_c = e.label == Label::C;
        out[EPS].push(s);
        out[B_N].push(if is_c { 0.0 } else { s });
        out[B_C].push(if is_c { s } else { 0.0 });
        out[D_C].push(if is_c { 1.0 } else { 0.0 });
        out[RET].push(r);
        out[D_N_RET].push(if is_c { 0.0 } else { r });
        out[D_C_RET].push(if is_c { r } else { 0.0 });
        out[ONES].push(1.0);
    }
    out
}

fn correlation_plan(max_lag: usize, segment_len: usize, three_point: bool) -> SpectralPlan {
    let mut plan = SpectralPlan::new(max_lag, segment_len)
        .with_pair(B_N, D_N_RET)
        .with_pair(B_N, D_C_RET)
        .with_pair(B_C, D_N_RET)
        .with_pair(B_C, D_C_RET)
        .with_pair(EPS, EPS)
        .with_pair(B_N, B_N)
        .with_pair(B_N, B_C)
        .with_pair(B_C, B_N)
        .with_pair(B_C, B_C)
        .with_pair(RET, EPS)
        .with_pair(ONES, D_C);
    if three_point {
        plan = plan
            .with_triple(D_C, B_N, B_N)
            .with_triple(D_C, B_N, B_C)
            .with_triple(D_C, B_C, B_C);
    }
    plan
}

/// Day-grouped correlation estimates, for point estimates and jackknife replicates.
#[derive(Debug, Clone)]
pub struct CorrelationSample {
    avg: DayAverage<Estimates>,
    pub max_lag: usize,
    pub segment_len: usize,
    pub label_present: [bool; 2],
}

impl CorrelationSample {
    /// Estimates from the data's own returns.
    pub fn estimate(
        data: &InstrumentData,
        max_lag: usize,
        segment_len: usize,
        three_point: bool,
        groups: usize,
    ) -> Result<Self> {
        let returns: Vec<Vec<f64>> = data.days.iter().map(DaySeries::returns).collect();
        Self::estimate_with(data, &returns, max_lag, segment_len, three_point, groups)
    }

    /// Estimates with `returns` (aligned to `data`'s days) in place of the data's returns.
    pub fn estimate_with(
        data: &InstrumentData,
        returns: &[Vec<f64>],
        max_lag: usize,
        segment_len: usize,
        three_point: bool,
        groups: usize,
    ) -> Result<Self> {
        if returns.len() != data.days.len()
            || data.days.iter().zip(returns).any(|(d, r)| d.len() != r.len())
        {
            return Err(Error::ShapeMismatch("returns not aligned with days".into()));
        }
        if max_lag > data.max_lag {
            return Err(Error::LagTooLarge {
                max_lag,
                len: data.max_lag + 1,
            });
        }
        let mut label_present = [false; 2];
        for e in data.days.iter().flat_map(|d| &d.events) {
            label_present[e.label.index()] = true;
        }
        let plan = correlation_plan(max_lag, segment_len, three_point);
        let series: Vec<Vec<Vec<f64>>> = data
            .days
            .iter()
            .zip(returns)
            .map(|(d, r)| day_series(d, r))
            .collect();
        let avg = plan.estimate_days(&series, groups.max(1))?;
        Ok(Self {
            avg,
            max_lag,
            segment_len: plan.segment_len,
            label_present,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.avg.n_groups()
    }

    /// Equal-day-weight point estimate.
    pub fn correlations(&self) -> Result<Correlations> {
        self.assemble(self.avg.mean()?)
    }

    /// Delete-one-group replicates, one per non-empty group.
    pub fn jackknife(&self) -> Result<Vec<Correlations>> {
        self.avg
            .groups()
            .into_iter()
            .map(|g| self.assemble(self.avg.mean_excluding(g)?))
            .collect()
    }

    fn assemble(&self, est: Estimates) -> Result<Correlations> {
        let Estimates { pairs, triples } = est;
        let mut p = pairs.into_iter();
        let mut next = || p.next().expect("plan pair count");
        let (s_nn, s_nc, s_cn, s_cc) = (next(), next(), next(), next());
        let sign_auto = next();
        let (b_nn, b_nc, b_cn, b_cc) = (next(), next(), next(), next());
        let return_sign = next();
        let p_c = next().at(0);
        let triples = match triples.len() {
            0 => None,
            3 => {
                let mut t = triples.into_iter();
                Some([t.next().unwrap(), t.next().unwrap(), t.next().unwrap()])
            }
            n => return Err(Error::ShapeMismatch(format!("{n} three-point estimates"))),
        };
        Ok(Correlations {
            max_lag: self.max_lag,
            responses: ResponseSet {
                by_labels: [[s_nn, s_nc], [s_cn, s_cc]],
            },
            sign_auto,
            return_sign,
            labeled_signs: [[b_nn, b_nc], [b_cn, b_cc]],
            triples,
            p_c,
            label_present: self.label_present,
        })
    }
}

/// Label-conditioned responses of `data`'s own returns.
pub fn estimate_responses(
    data: &InstrumentData,
    max_lag: usize,
    segment_len: usize,
) -> Result<ResponseSet> {
    Ok(CorrelationSample::estimate(data, max_lag, segment_len, false, 1)?
        .correlations()?
        .responses)
}

// ---------------------------------------------------------------------------
// Linear systems
// ---------------------------------------------------------------------------

/// A block system `S = C k` with one block of `L + 1` unknowns per kernel.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub kind: ModelKind,
    pub max_lag: usize,
    pub matrix: DMatrix<f64>,
    pub rhs: Vec<f64>,
    /// Kernel names in block order.
    pub blocks: Vec<&'static str>,
    /// Blocks whose label never occurs are dropped and their kernel set to zero.
    pub active: Vec<bool>,
    /// First column of a symmetric Toeplitz matrix, when the matrix is one.
    pub toeplitz: Option<Vec<f64>>,
}

fn check_lag(corr: &Correlations, max_lag: usize) -> Result<usize> {
    if max_lag > corr.max_lag || max_lag == 0 {
        return Err(Error::LagTooLarge {
            max_lag,
            len: corr.max_lag + 1,
        });
    }
    Ok(max_lag + 1)
}

pub fn assemble_tim1(corr: &Correlations, max_lag: usize, variant: Tim1Matrix) -> Result<LinearSystem> {
    let m = check_lag(corr, max_lag)?;
    let s = corr.responses.s();
    let (matrix, toeplitz) = match variant {
        Tim1Matrix::SignAutocorr => {
            let col: Vec<f64> = (0..m).map(|k| corr.sign_auto.at(k as isize)).collect();
            (DMatrix::from_fn(m, m, |l, j| col[l.abs_diff(j)]), Some(col))
        }
        Tim1Matrix::ReturnSign => (
            DMatrix::from_fn(m, m, |l, j| corr.return_sign.at(l as isize - j as isize)),
            None,
        ),
    };
    Ok(LinearSystem {
        kind: ModelKind::Tim1,
        max_lag,
        matrix,
        rhs: (0..m).map(|l| s.at(l as isize)).collect(),
        blocks: vec!["g"],
        active: vec![true],
        toeplitz,
    })
}

fn block_system(
    kind: ModelKind,
    max_lag: usize,
    active: [bool; 2],
    rhs_of: impl Fn(Label, usize) -> f64,
    entry: impl Fn(Label, Label, usize, usize) -> Result<f64>,
) -> Result<LinearSystem> {
    let m = max_lag + 1;
    let mut matrix = DMatrix::zeros(2 * m, 2 * m);
    let mut rhs = vec![0.0; 2 * m];
    for a in Label::ALL {
        for l in 0..m {
            let row = a.index() * m + l;
            rhs[row] = rhs_of(a, l);
            for b in Label::ALL {
                for j in 0..m {
                    matrix[(row, b.index() * m + j)] = entry(a, b, l, j)?;
                }
            }
        }
    }
    Ok(LinearSystem {
        kind,
        max_lag,
        matrix,
        rhs,
        blocks: kind.kernel_names().to_vec(),
        active: active.to_vec(),
        toeplitz: None,
    })
}

/// Two-kernel transient model: row `(pi, l)`, column `(pi', j)` holds
/// `<b_pi(t - l) b_pi'(t - j)>`; the right-hand side is `S_pi(l)`.
pub fn assemble_tim2(corr: &Correlations, max_lag: usize) -> Result<LinearSystem> {
    check_lag(corr, max_lag)?;
    let s = [corr.responses.s_pi(Label::N), corr.responses.s_pi(Label::C)];
    block_system(
        ModelKind::Tim2,
        max_lag,
        corr.label_present,
        |a, l| s[a.index()].at(l as isize),
        |a, b, l, j| Ok(corr.labeled_signs[a.index()][b.index()].at(l as isize - j as isize)),
    )
}

fn hdim_constraint(sys: &mut LinearSystem) {
    // kappa_nc(0) multiplies only terms that vanish identically; pin it to zero.
    let m = sys.max_lag + 1;
    let k0 = Label::N.index() * m;
    for r in 0..sys.matrix.nrows() {
        sys.matrix[(r, k0)] = 0.0;
    }
    for c in 0..sys.matrix.ncols() {
        sys.matrix[(k0, c)] = 0.0;
    }
    sys.matrix[(k0, k0)] = 1.0;
    sys.rhs[k0] = 0.0;
}

fn hdim_active(corr: &Correlations) -> Result<[bool; 2]> {
    if !corr.label_present[Label::C.index()] {
        return Err(Error::Undefined("no price-changing events".into()));
    }
    Ok(corr.label_present)
}

/// History-dependent model with the exact three-point matrix: row `(pi, l)`,
/// column `(pi', j)` holds `C_{pi pi' c}(l, j)`; the right-hand side is `S_{pi,c}(l)`.
pub fn assemble_hdim2(corr: &Correlations, max_lag: usize) -> Result<LinearSystem> {
    check_lag(corr, max_lag)?;
    if corr.triples.is_none() {
        return Err(Error::InvalidInput(
            "three-point correlations were not estimated".into(),
        ));
    }
    let active = hdim_active(corr)?;
    let mut sys = block_system(
        ModelKind::Hdim2,
        max_lag,
        active,
        |a, l| corr.responses.s_pair(a, Label::C).at(l as isize),
        |a, b, l, j| {
            corr.hdim_entry(a, b, l as isize, j as isize)
                .ok_or_else(|| Error::Undefined(format!("three-point entry ({l}, {j}) masked")))
        },
    )?;
    hdim_constraint(&mut sys);
    Ok(sys)
}

/// Two-point approximation `C_{pi pi' c}(l, j) ~ P(c) <b_pi(t - l) b_pi'(t - j)>`.
pub fn assemble_hdim2_star(corr: &Correlations, max_lag: usize) -> Result<LinearSystem> {
    check_lag(corr, max_lag)?;
    let active = hdim_active(corr)?;
    let mut sys = block_system(
        ModelKind::Hdim2Star,
        max_lag,
        active,
        |a, l| corr.responses.s_pair(a, Label::C).at(l as isize),
        |a, b, l, j| {
            Ok(corr.p_c * corr.labeled_signs[a.index()][b.index()].at(l as isize - j as isize))
        },
    )?;
    hdim_constraint(&mut sys);
    Ok(sys)
}

pub fn assemble(kind: ModelKind, corr: &Correlations, max_lag: usize, cfg: &CalibrationConfig) -> Result<LinearSystem> {
    match kind {
        ModelKind::Tim1 => assemble_tim1(corr, max_lag, cfg.tim1_matrix),
        ModelKind::Tim2 => assemble_tim2(corr, max_lag),
        ModelKind::Hdim2 => assemble_hdim2(corr, max_lag),
        ModelKind::Hdim2Star => assemble_hdim2_star(corr, max_lag),
        ModelKind::Cim2 => Err(Error::UnsupportedModel(
            "cim2 has no linear system".into(),
        )),
    }
}

/// Solved kernels with solver diagnostics.
#[derive(Debug, Clone)]
pub struct SystemSolution {
    pub kernels: BTreeMap<String, Vec<f64>>,
    pub cond: f64,
    pub ridge: f64,
}

impl LinearSystem {
    pub fn solve(&self, cond_limit: f64, policy: IllConditionedPolicy) -> Result<SystemSolution> {
        let m = self.max_lag + 1;
        let idx: Vec<usize> = self
            .active
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .flat_map(|(b, _)| b * m..(b + 1) * m)
            .collect();
        if idx.is_empty() {
            return Err(Error::Undefined("no event label occurs in the data".into()));
        }
        let sub = self.matrix.select_rows(&idx).select_columns(&idx);
        let rhs: Vec<f64> = idx.iter().map(|&i| self.rhs[i]).collect();
        let sol = match (&self.toeplitz, idx.len() == self.rhs.len()) {
            (Some(col), true) => solve_toeplitz(col, &sub, &rhs, cond_limit, policy)?,
            _ => linalg::solve_dense(&sub, &rhs, cond_limit, policy)?,
        };
        let mut full = vec![0.0; self.rhs.len()];
        for (&i, v) in idx.iter().zip(&sol.x) {
            full[i] = *v;
        }
        let kernels = self
            .blocks
            .iter()
            .enumerate()
            .map(|(b, name)| (name.to_string(), full[b * m..(b + 1) * m].to_vec()))
            .collect();
        Ok(SystemSolution {
            kernels,
            cond: sol.cond,
            ridge: sol.ridge,
        })
    }
}

fn solve_toeplitz(
    col: &[f64],
    dense: &DMatrix<f64>,
    rhs: &[f64],
    cond_limit: f64,
    policy: IllConditionedPolicy,
) -> Result<linalg::Solution> {
    let cond = linalg::condition_estimate(dense);
    if cond > cond_limit {
        return linalg::solve_dense(dense, rhs, cond_limit, policy);
    }
    match linalg::levinson_symmetric(col, rhs) {
        Ok(x) => Ok(linalg::Solution { x, cond, ridge: 0.0 }),
        // Not positive definite but well-conditioned: LU still applies.
        Err(Error::IllConditioned { .. }) => linalg::solve_dense(dense, rhs, cond_limit, policy),
        Err(e) => Err(e),
    }
}

// ---------------------------------------------------------------------------
// Calibrated models
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instrument_id: Option<String>,
    /// Days the model was calibrated on (`odd`, `even` or `none` for all).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<String>,
    pub n_days: usize,
    pub n_events: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segment_len: Option<usize>,
    pub smoothed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition: Option<f64>,
    pub ridge_lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_c: Option<f64>,
    /// Jackknife standard errors per kernel.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub stderr: BTreeMap<String, Vec<f64>>,
}

/// A model kind with its kernels over lags `0..=L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedModel {
    pub kind: ModelKind,
    #[serde(rename = "L")]
    pub max_lag: usize,
    pub kernels: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub meta: ModelMeta,
}

impl CalibratedModel {
    fn from_kernels(kind: ModelKind, max_lag: usize, kernels: Vec<Vec<f64>>) -> Result<Self> {
        let model = Self {
            kind,
            max_lag,
            kernels: kind
                .kernel_names()
                .iter()
                .map(|n| n.to_string())
                .zip(kernels)
                .collect(),
            meta: ModelMeta::default(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn tim1(g: Vec<f64>) -> Result<Self> {
        let l = g.len().saturating_sub(1);
        Self::from_kernels(ModelKind::Tim1, l, vec![g])
    }

    pub fn tim2(g_n: Vec<f64>, g_c: Vec<f64>) -> Result<Self> {
        let l = g_c.len().saturating_sub(1);
        Self::from_kernels(ModelKind::Tim2, l, vec![g_n, g_c])
    }

    pub fn hdim2(kappa_nc: Vec<f64>, kappa_cc: Vec<f64>) -> Result<Self> {
        let l = kappa_cc.len().saturating_sub(1);
        Self::from_kernels(ModelKind::Hdim2, l, vec![kappa_nc, kappa_cc])
    }

    pub fn cim2(delta_c: f64) -> Result<Self> {
        Self::from_kernels(ModelKind::Cim2, 0, vec![vec![delta_c]])
    }

    pub fn kernel(&self, name: &str) -> Result<&[f64]> {
        self.kernels
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidInput(format!("{} model lacks kernel `{name}`", self.kind)))
    }

    /// `Delta_c` of a constant impact model.
    pub fn delta_c(&self) -> Result<f64> {
        Ok(self.kernel("delta_c")?[0])
    }

    pub fn validate(&self) -> Result<()> {
        let names = self.kind.kernel_names();
        if self.kernels.len() != names.len() {
            return Err(Error::InvalidInput(format!(
                "{} model needs kernels {names:?}",
                self.kind
            )));
        }
        let want = if self.kind == ModelKind::Cim2 { 1 } else { self.max_lag + 1 };
        for name in names {
            let k = self.kernel(name)?;
            if k.len() != want {
                return Err(Error::ShapeMismatch(format!(
                    "kernel `{name}` has {} values, expected {want}",
                    k.len()
                )));
            }
            if k.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("kernel `{name}` is not finite")));
            }
        }
        match self.kind {
            ModelKind::Hdim2 | ModelKind::Hdim2Star if self.kernel("kappa_nc")?[0] != 0.0 => Err(
                Error::InvalidInput("kappa_nc(0) must be exactly zero".into()),
            ),
            ModelKind::Cim2 if !(self.delta_c()? > 0.0) => {
                Err(Error::InvalidInput("delta_c must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Integrated kernels `G(l) = sum_{l' <= l} k(l')`.
    pub fn integrated(&self) -> BTreeMap<String, Vec<f64>> {
        self.kernels
            .iter()
            .map(|(name, k)| {
                let cum = k
                    .iter()
                    .scan(0.0, |acc, v| {
                        *acc += v;
                        Some(*acc)
                    })
                    .collect();
                (name.clone(), cum)
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }
}

/// `Delta_c = <|r(t)| | pi(t) = c>` pooled over all price-changing events.
pub fn estimate_cim2(data: &InstrumentData) -> Result<CalibratedModel> {
    let delta = cim2_delta(data.days.iter())?;
    let mut model = CalibratedModel::cim2(delta)?;
    model.meta.n_days = data.days.len();
    model.meta.n_events = data.n_events();
    Ok(model)
}

fn cim2_delta<'a>(days: impl Iterator<Item = &'a DaySeries>) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for e in days.flat_map(|d| &d.events).filter(|e| e.label == Label::C) {
        sum += e.ret.abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::Undefined("no price-changing events".into()));
    }
    Ok(sum / n as f64)
}

fn policy_for(kind: ModelKind, cfg: &CalibrationConfig) -> IllConditionedPolicy {
    let ridge = IllConditionedPolicy::Ridge { rel: cfg.ridge_rel };
    match kind {
        ModelKind::Tim1 | ModelKind::Tim2 if !cfg.tim_ridge => IllConditionedPolicy::Fail,
        _ => ridge,
    }
}

/// Solves one kernel model from a correlation set, smoothing as configured.
pub fn solve_model(
    kind: ModelKind,
    corr: &Correlations,
    max_lag: usize,
    cfg: &CalibrationConfig,
) -> Result<CalibratedModel> {
    let sys = assemble(kind, corr, max_lag, cfg)?;
    let sol = sys.solve(cfg.cond_limit, policy_for(kind, cfg))?;
    if sol.ridge > 0.0 {
        log::warn!(
            "{kind}: condition estimate {:.3e}, ridge lambda {:.3e} applied",
            sol.cond,
            sol.ridge
        );
    }
    let smooth = cfg.smooth_for(kind);
    let mut smoothed = false;
    let mut kernels = sol.kernels;
    if smooth {
        for k in kernels.values_mut() {
            let (s, applied) = smooth_kernel(k, cfg.smooth_cutoff);
            *k = s;
            smoothed |= applied;
        }
    }
    if let Some(k) = kernels.get_mut("kappa_nc") {
        k[0] = 0.0;
    }
    let model = CalibratedModel {
        kind,
        max_lag,
        kernels,
        meta: ModelMeta {
            smoothed,
            condition: Some(sol.cond),
            ridge_lambda: sol.ridge,
            p_c: Some(corr.p_c),
            ..ModelMeta::default()
        },
    };
    model.validate()?;
    Ok(model)
}

fn jackknife_stderr(replicates: &[BTreeMap<String, Vec<f64>>]) -> BTreeMap<String, Vec<f64>> {
    let g = replicates.len() as f64;
    let mut out = BTreeMap::new();
    let Some(first) = replicates.first() else {
        return out;
    };
    for name in first.keys() {
        let len = first[name].len();
        let se = (0..len)
            .map(|i| {
                let vals: Vec<f64> = replicates.iter().map(|r| r[name][i]).collect();
                let mean = vals.iter().sum::<f64>() / g;
                ((g - 1.0) / g * vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sqrt()
            })
            .collect();
        out.insert(name.clone(), se);
    }
    out
}

fn day_groups(n_days: usize, groups: usize) -> Vec<Vec<usize>> {
    let g = groups.clamp(1, n_days.max(1));
    let mut out = vec![Vec::new(); g];
    for d in 0..n_days {
        out[d * g / n_days].push(d);
    }
    out
}

/// Calibrates every requested model on `data`, sharing one correlation pass.
pub fn calibrate(
    data: &InstrumentData,
    kinds: &[ModelKind],
    cfg: &CalibrationConfig,
) -> Result<Vec<CalibratedModel>> {
    data.validate(false)?;
    let max_lag = cfg.lag_for(data)?;
    let segment_len = cfg.segment_for(max_lag);
    let groups = if cfg.jackknife_groups >= 2 {
        cfg.jackknife_groups.min(data.days.len())
    } else {
        1
    };
    let needs_kernels = kinds.iter().any(|&k| k != ModelKind::Cim2);
    let three_point = kinds.contains(&ModelKind::Hdim2);
    let sample = if needs_kernels {
        Some(CorrelationSample::estimate(data, max_lag, segment_len, three_point, groups)?)
    } else {
        None
    };
    let corr = sample.as_ref().map(CorrelationSample::correlations).transpose()?;
    let replicates = match (&sample, groups >= 2) {
        (Some(s), true) => s.jackknife()?,
        _ => Vec::new(),
    };

    let mut out = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let mut model = if kind == ModelKind::Cim2 {
            let mut m = estimate_cim2(data)?;
            if groups >= 2 {
                let reps: Result<Vec<_>> = day_groups(data.days.len(), groups)
                    .iter()
                    .map(|skip| {
                        let delta = cim2_delta(
                            data.days
                                .iter()
                                .enumerate()
                                .filter(|(i, _)| !skip.contains(i))
                                .map(|(_, d)| d),
                        )?;
                        Ok(BTreeMap::from([("delta_c".to_string(), vec![delta])]))
                    })
                    .collect();
                m.meta.stderr = jackknife_stderr(&reps?);
            }
            m
        } else {
            let corr = corr.as_ref().expect("correlations estimated");
            let mut m = solve_model(kind, corr, max_lag, cfg)?;
            if !replicates.is_empty() {
                let reps: Result<Vec<_>> = replicates
                    .iter()
                    .map(|c| Ok(solve_model(kind, c, max_lag, cfg)?.kernels))
                    .collect();
                m.meta.stderr = jackknife_stderr(&reps?);
            }
            m.meta.segment_len = Some(segment_len);
            m
        };
        model.meta.instrument_id = Some(data.instrument_id.clone());
        model.meta.n_days = data.days.len();
        model.meta.n_events = data.n_events();
        out.push(model);
    }
    Ok(out)
}
