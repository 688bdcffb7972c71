//! Mask- and direction-gated spatial covariances, MVDR filters and
//! head-movement-aware filtering.
//!
//! With gates `phi_{d,t}` the per-direction covariances are
//!
//! ```text
//! V_fd = sum_t phi_{d,t} z_ft x_ft x_ft^H      R_fd = sum_t phi_{d,t} (1 - z_ft) x_ft x_ft^H
//! w_fd = R~^-1 V [tr(R~^-1 V)]^-1 u           s^_ft = w_{f,d(t)}^H x_ft
//! ```
//!
//! where `R~ = R + (loading tr(R) / M) I`. Every stage also exists as a
//! tape operation so the enhanced waveform can be differentiated with
//! respect to the mask.

use std::sync::Arc;

use ndarray::{Array3, Array4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::autodiff::{CustomOp, Tape, Tensor, Var};
use crate::dereverb::WpeConfig;
use crate::diffsp::{istft_op, pack, unpack};
use crate::error::{Error, Result};
use crate::linalg::{hermitian, inverse, matmul, trace, CMat};
use crate::masknet::{front_end, MaskEstimator, MaskMatrix};
use crate::scene::{DirectionTrace, SteeringField};
use crate::signal::{ComplexSpectrogram, StftPlan, WaveBuffer};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Relative diagonal loading of the noise covariance.
pub const DEFAULT_LOADING: f64 = 1e-6;
/// `|tr(R~^-1 V)|` below this means no usable speech in the direction.
pub const DEGENERATE_TRACE: f64 = 1e-10;
/// Absolute loading (relative to `tr V / M`) keeping `R~` invertible when
/// the mask leaves no noise.
const ABSOLUTE_LOADING: f64 = 1e-10;

/// Speech and noise covariances, `D x F x M x M`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScmSet {
    pub v: Array4<Complex64>,
    pub r: Array4<Complex64>,
    /// `sum_t phi_{d,t}` per direction; zero marks an empty direction.
    pub support: Vec<f64>,
}

impl ScmSet {
    pub fn is_empty(&self, d: usize) -> bool {
        self.support[d] == 0.0
    }

    pub fn speech(&self, d: usize, f: usize) -> CMat {
        self.v.slice(ndarray::s![d, f, .., ..]).to_owned()
    }

    pub fn noise(&self, d: usize, f: usize) -> CMat {
        self.r.slice(ndarray::s![d, f, .., ..]).to_owned()
    }
}

fn check_shapes(x: &ComplexSpectrogram, z: &MaskMatrix, trace: &DirectionTrace) -> Result<Vec<usize>> {
    if z.bins() != x.bins() || z.frames() != x.frames() || trace.frames() != x.frames() {
        return Err(Error::invalid(format!(
            "mixture {}x{}, mask {}x{}, trace {} frames",
            x.bins(),
            x.frames(),
            z.bins(),
            z.frames(),
            trace.frames()
        )));
    }
    trace.indices()
}

pub fn accumulate_scms(x: &ComplexSpectrogram, z: &MaskMatrix, trace: &DirectionTrace) -> Result<ScmSet> {
    let idx = check_shapes(x, z, trace)?;
    let (m, bins, frames) = x.data.dim();
    let dirs = trace.num_directions;
    let mut v = Array4::zeros((dirs, bins, m, m));
    let mut r = Array4::zeros((dirs, bins, m, m));
    let mut support = vec![0.0; dirs];
    for (t, &d) in idx.iter().enumerate().take(frames) {
        support[d] += 1.0;
        for f in 0..bins {
            let zf = z.z[[f, t]];
            for i in 0..m {
                let xi = x.data[[i, f, t]];
                for j in 0..m {
                    let c = xi * x.data[[j, f, t]].conj();
                    v[[d, f, i, j]] += c * zf;
                    r[[d, f, i, j]] += c * (1.0 - zf);
                }
            }
        }
    }
    Ok(ScmSet { v, r, support })
}

/// Intermediate values of one MVDR solve, kept for the backward pass.
#[derive(Clone, Debug)]
struct MvdrSolve {
    p: CMat,
    a: CMat,
    tau: Complex64,
    w: Vec<Complex64>,
}

fn mvdr_solve(v: &CMat, r: &CMat, reference: usize, loading: f64) -> Result<MvdrSolve> {
    let m = v.nrows();
    if reference >= m {
        return Err(Error::invalid("reference out of range"));
    }
    if !(loading > 0.0) {
        return Err(Error::invalid("loading must be positive"));
    }
    let tr_r = trace(r).re;
    let tr_v = trace(v).re;
    let diag = loading * tr_r / m as f64 + ABSOLUTE_LOADING * tr_v / m as f64;
    if !(diag > 0.0) || !diag.is_finite() {
        return Err(Error::DegenerateFilter("no signal in either covariance".into()));
    }
    let mut rt = r.clone();
    for i in 0..m {
        rt[[i, i]] += diag;
    }
    let p = inverse(&rt)?;
    let a = matmul(&p, v);
    let tau = trace(&a);
    if tau.norm() < DEGENERATE_TRACE || !tau.is_finite() {
        return Err(Error::DegenerateFilter(format!("tr(R^-1 V) = {tau}")));
    }
    let w = (0..m).map(|i| a[[i, reference]] / tau).collect();
    Ok(MvdrSolve { p, a, tau, w })
}

/// `w = R~^-1 V [tr(R~^-1 V)]^-1 u` with `R~ = R + loading tr(R)/M I`.
pub fn mvdr(v: &CMat, r: &CMat, reference: usize, loading: f64) -> Result<Vec<Complex64>> {
    Ok(mvdr_solve(v, r, reference, loading)?.w)
}

pub fn selector(m: usize, reference: usize) -> Vec<Complex64> {
    (0..m)
        .map(|i| if i == reference { Complex64::new(1.0, 0.0) } else { ZERO })
        .collect()
}

/// Per-direction filters `D x F x M`; entries without a usable solve hold
/// the reference selector.
#[derive(Clone, Debug, PartialEq)]
pub struct DemixingFilters {
    pub w: Array3<Complex64>,
    pub fallback: ndarray::Array2<bool>,
}

pub fn mvdr_filters(scms: &ScmSet, reference: usize, loading: f64) -> Result<DemixingFilters> {
    let (dirs, bins, m, _) = scms.v.dim();
    let u = selector(m, reference);
    let mut w = Array3::zeros((dirs, bins, m));
    let mut fallback = ndarray::Array2::from_elem((dirs, bins), false);
    for d in 0..dirs {
        for f in 0..bins {
            let filt = if scms.is_empty(d) {
                None
            } else {
                match mvdr(&scms.speech(d, f), &scms.noise(d, f), reference, loading) {
                    Ok(w) => Some(w),
                    Err(Error::DegenerateFilter(_)) => None,
                    Err(e) => return Err(e),
                }
            };
            fallback[[d, f]] = filt.is_none();
            for (i, v) in filt.unwrap_or_else(|| u.clone()).into_iter().enumerate() {
                w[[d, f, i]] = v;
            }
        }
    }
    Ok(DemixingFilters { w, fallback })
}

/// `s^_ft = w_{f,d(t)}^H x_ft`.
pub fn apply_hma(
    x: &ComplexSpectrogram,
    filters: &DemixingFilters,
    trace: &DirectionTrace,
) -> Result<ComplexSpectrogram> {
    let idx = trace.indices()?;
    let (m, bins, frames) = x.data.dim();
    if filters.w.dim().1 != bins || filters.w.dim().2 != m || idx.len() != frames {
        return Err(Error::invalid("filters, mixture and trace shapes disagree"));
    }
    let mut out = ComplexSpectrogram::zeros(1, x.window, x.hop, x.signal_len);
    out.data = Array3::zeros((1, bins, frames));
    for (t, &d) in idx.iter().enumerate() {
        if d >= filters.w.dim().0 {
            return Err(Error::invalid(format!("direction {d} has no filter")));
        }
        for f in 0..bins {
            let mut s = ZERO;
            for i in 0..m {
                s += filters.w[[d, f, i]].conj() * x.data[[i, f, t]];
            }
            out.data[[0, f, t]] = s;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// tape operations

/// Active directions of a trace and the slot of every frame.
#[derive(Clone, Debug)]
pub struct Slots {
    pub directions: Vec<usize>,
    pub of_frame: Vec<usize>,
}

impl Slots {
    pub fn new(trace: &DirectionTrace) -> Result<Self> {
        let idx = trace.indices()?;
        let mut directions = trace.distinct();
        directions.sort_unstable();
        let of_frame = idx
            .iter()
            .map(|d| directions.iter().position(|x| x == d).expect("distinct"))
            .collect();
        Ok(Self { directions, of_frame })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// Packed covariances: row `slot * F + f`, columns
/// `[Re V, Im V, Re R, Im R]` (each `M*M`, row-major).
pub fn scm_op(tape: &mut Tape, z: Var, x: Arc<ComplexSpectrogram>, slots: Arc<Slots>) -> Result<Var> {
    let zt = tape.value(z);
    let (m, bins, frames) = x.data.dim();
    if zt.dim() != (frames, bins) || slots.of_frame.len() != frames {
        return Err(Error::invalid("scm_op: mask, mixture and trace shapes disagree"));
    }
    let mm = m * m;
    let mut out = Tensor::zeros((slots.len() * bins, 4 * mm));
    for t in 0..frames {
        let s = slots.of_frame[t];
        for f in 0..bins {
            let zf = zt[[t, f]];
            let row = s * bins + f;
            for i in 0..m {
                let xi = x.data[[i, f, t]];
                for j in 0..m {
                    let c = xi * x.data[[j, f, t]].conj();
                    let k = i * m + j;
                    out[[row, k]] += zf * c.re;
                    out[[row, mm + k]] += zf * c.im;
                    out[[row, 2 * mm + k]] += (1.0 - zf) * c.re;
                    out[[row, 3 * mm + k]] += (1.0 - zf) * c.im;
                }
            }
        }
    }
    Ok(tape.custom(Box::new(ScmOp { x, slots }), vec![z], out))
}

struct ScmOp {
    x: Arc<ComplexSpectrogram>,
    slots: Arc<Slots>,
}

impl CustomOp for ScmOp {
    fn name(&self) -> &'static str {
        "scm"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let (m, bins, frames) = self.x.data.dim();
        let mm = m * m;
        let mut gz = Tensor::zeros(inputs[0].dim());
        for t in 0..frames {
            let s = self.slots.of_frame[t];
            for f in 0..bins {
                let row = s * bins + f;
                let mut acc = 0.0;
                for i in 0..m {
                    let xi = self.x.data[[i, f, t]];
                    for j in 0..m {
                        let c = xi * self.x.data[[j, f, t]].conj();
                        let k = i * m + j;
                        let gv = grad[[row, k]] * c.re + grad[[row, mm + k]] * c.im;
                        let gr = grad[[row, 2 * mm + k]] * c.re + grad[[row, 3 * mm + k]] * c.im;
                        acc += gv - gr;
                    }
                }
                gz[[t, f]] = acc;
            }
        }
        vec![gz]
    }
}

fn unpack_matrix(row: ndarray::ArrayView1<'_, f64>, m: usize, offset: usize) -> CMat {
    let mm = m * m;
    CMat::from_shape_fn((m, m), |(i, j)| {
        Complex64::new(row[offset + i * m + j], row[offset + mm + i * m + j])
    })
}

/// MVDR per packed row; output row `slot * F + f` holds `[Re w, Im w]`.
/// Degenerate rows use the reference selector and pass no gradient.
pub fn mvdr_op(tape: &mut Tape, scms: Var, mics: usize, reference: usize, loading: f64) -> Result<Var> {
    let packed = tape.value(scms);
    let m = mics;
    if packed.ncols() != 4 * m * m {
        return Err(Error::invalid("mvdr_op: packed width does not match mic count"));
    }
    let rows = packed.nrows();
    let u = selector(m, reference);
    let mut solves = Vec::with_capacity(rows);
    let mut out = Tensor::zeros((rows, 2 * m));
    for row in 0..rows {
        let r = packed.row(row);
        let v = unpack_matrix(r, m, 0);
        let n = unpack_matrix(r, m, 2 * m * m);
        let solve = match mvdr_solve(&v, &n, reference, loading) {
            Ok(s) => Some(s),
            Err(Error::DegenerateFilter(_)) => None,
            Err(e) => return Err(e),
        };
        let w = solve.as_ref().map(|s| s.w.clone()).unwrap_or_else(|| u.clone());
        for i in 0..m {
            out[[row, i]] = w[i].re;
            out[[row, m + i]] = w[i].im;
        }
        solves.push(solve);
    }
    let op = MvdrOp {
        solves,
        m,
        reference,
        loading,
    };
    Ok(tape.custom(Box::new(op), vec![scms], out))
}

struct MvdrOp {
    solves: Vec<Option<MvdrSolve>>,
    m: usize,
    reference: usize,
    loading: f64,
}

impl CustomOp for MvdrOp {
    fn name(&self) -> &'static str {
        "mvdr"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let m = self.m;
        let mm = m * m;
        let mut g_in = Tensor::zeros(inputs[0].dim());
        for (row, solve) in self.solves.iter().enumerate() {
            let Some(sv) = solve else { continue };
            let gw: Vec<Complex64> = (0..m)
                .map(|i| Complex64::new(grad[[row, i]], grad[[row, m + i]]))
                .collect();
            if gw.iter().all(|g| *g == ZERO) {
                continue;
            }
            // w = a / tau with a = A[:, r], tau = tr(A), A = P V, P = R~^-1
            let tc = sv.tau.conj();
            let mut g_a = CMat::zeros((m, m));
            let mut g_tau = ZERO;
            for i in 0..m {
                g_a[[i, self.reference]] += gw[i] / tc;
                g_tau -= sv.a[[i, self.reference]].conj() * gw[i] / (tc * tc);
            }
            for i in 0..m {
                g_a[[i, i]] += g_tau;
            }
            let ph = hermitian(&sv.p);
            let g_v = matmul(&ph, &g_a);
            let g_rt = matmul(&matmul(&ph, &g_a), &hermitian(&sv.a)).mapv(|c| -c);
            let c = self.loading / m as f64;
            let tr_g = trace(&g_rt);
            for i in 0..m {
                for j in 0..m {
                    let mut gr = g_rt[[i, j]];
                    if i == j {
                        // the loading depends on Re tr(R) only
                        gr += c * tr_g.re;
                    }
                    let k = i * m + j;
                    g_in[[row, k]] = g_v[[i, j]].re;
                    g_in[[row, mm + k]] = g_v[[i, j]].im;
                    g_in[[row, 2 * mm + k]] = gr.re;
                    g_in[[row, 3 * mm + k]] = gr.im;
                }
            }
        }
        vec![g_in]
    }
}

/// Applies packed filters frame by frame; output is the packed `T x 2F`
/// enhanced spectrum.
pub fn hma_op(tape: &mut Tape, filters: Var, x: Arc<ComplexSpectrogram>, slots: Arc<Slots>) -> Result<Var> {
    let w = tape.value(filters);
    let (m, bins, frames) = x.data.dim();
    if w.nrows() != slots.len() * bins || w.ncols() != 2 * m || slots.of_frame.len() != frames {
        return Err(Error::invalid("hma_op: filter, mixture and trace shapes disagree"));
    }
    let out = pack(frames, bins, |t, f| {
        let row = slots.of_frame[t] * bins + f;
        (0..m)
            .map(|i| unpack(w, row, i).conj() * x.data[[i, f, t]])
            .sum()
    });
    Ok(tape.custom(Box::new(HmaOp { x, slots }), vec![filters], out))
}

struct HmaOp {
    x: Arc<ComplexSpectrogram>,
    slots: Arc<Slots>,
}

impl CustomOp for HmaOp {
    fn name(&self) -> &'static str {
        "hma"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let (m, bins, frames) = self.x.data.dim();
        let mut g = Tensor::zeros(inputs[0].dim());
        for t in 0..frames {
            for f in 0..bins {
                let gs = unpack(grad, t, f);
                if gs == ZERO {
                    continue;
                }
                let row = self.slots.of_frame[t] * bins + f;
                for i in 0..m {
                    // s = sum conj(w_i) x_i  =>  G_w = x_i conj(G_s)
                    let gw = self.x.data[[i, f, t]] * gs.conj();
                    g[[row, i]] += gw.re;
                    g[[row, m + i]] += gw.im;
                }
            }
        }
        vec![g]
    }
}

/// Mask (`T x F` var) to enhanced waveform (`1 x len` var).
pub fn beamform_on_tape(
    tape: &mut Tape,
    z: Var,
    x: Arc<ComplexSpectrogram>,
    trace: &DirectionTrace,
    reference: usize,
    loading: f64,
    plan: Arc<StftPlan>,
) -> Result<Var> {
    let slots = Arc::new(Slots::new(trace)?);
    let m = x.channels();
    let len = x.signal_len;
    let scm = scm_op(tape, z, x.clone(), slots.clone())?;
    let w = mvdr_op(tape, scm, m, reference, loading)?;
    let s = hma_op(tape, w, x, slots)?;
    Ok(istft_op(tape, s, plan, len))
}

// ---------------------------------------------------------------------------
// pipeline

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamMode {
    /// Reference microphone only.
    Passthrough,
    /// One filter per frequency from all frames.
    TimeInvariant,
    /// Per-direction filters switched by the trace.
    HeadMovementAware,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhanceConfig {
    pub mode: BeamMode,
    pub wpe: Option<WpeConfig>,
    pub loading: f64,
    pub reference: usize,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            mode: BeamMode::HeadMovementAware,
            wpe: Some(WpeConfig::default()),
            loading: DEFAULT_LOADING,
            reference: 0,
        }
    }
}

/// Where the mask comes from.
pub enum MaskSource<'a> {
    Network(&'a MaskEstimator),
    Constant(f64),
    Given(MaskMatrix),
}

#[derive(Clone, Debug)]
pub struct Enhanced {
    pub wave: WaveBuffer,
    pub spectrum: ComplexSpectrogram,
    pub mask: Option<MaskMatrix>,
    /// Number of `(direction, bin)` pairs that fell back to the reference.
    pub fallbacks: usize,
}

/// WPE, features, mask, covariances, MVDR and filtering, then iSTFT.
pub fn enhance(
    x: &ComplexSpectrogram,
    field: &SteeringField,
    trace: &DirectionTrace,
    mask: MaskSource<'_>,
    cfg: &EnhanceConfig,
) -> Result<Enhanced> {
    let plan = StftPlan::new(x.window, x.hop)?;
    if cfg.mode == BeamMode::Passthrough {
        let spectrum = x.select_channel(cfg.reference);
        let wave = crate::signal::istft_with(&plan, &spectrum)?;
        return Ok(Enhanced {
            wave,
            spectrum,
            mask: None,
            fallbacks: 0,
        });
    }
    let (y, feats) = front_end(x, field, trace, cfg.reference, cfg.wpe.as_ref())?;
    let z = match mask {
        MaskSource::Network(net) => net.estimate(&feats)?,
        MaskSource::Constant(v) => MaskMatrix::constant(y.bins(), y.frames(), v),
        MaskSource::Given(z) => z,
    };
    let beam_trace = match cfg.mode {
        BeamMode::TimeInvariant => trace.collapsed(),
        _ => trace.clone(),
    };
    let scms = accumulate_scms(&y, &z, &beam_trace)?;
    let filters = mvdr_filters(&scms, cfg.reference, cfg.loading)?;
    let fallbacks = beam_trace
        .distinct()
        .iter()
        .map(|&d| filters.fallback.row(d).iter().filter(|&&b| b).count())
        .sum();
    let spectrum = apply_hma(&y, &filters, &beam_trace)?;
    let wave = crate::signal::istft_with(&plan, &spectrum)?;
    Ok(Enhanced {
        wave,
        spectrum,
        mask: Some(z),
        fallbacks,
    })
}
