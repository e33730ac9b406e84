//! Classical estimation chain: pilot least squares, subcarrier
//! interpolation, training-symbol stacking, reflection-pattern unmixing,
//! (distortion-aware) LMMSE filtering, the ON/OFF baseline and the NMSE
//! metric.
//!
//! The chain recovers, per user, the direct channel `D` and the cascaded
//! sub-surface channels `G` from the per-symbol effective channels: the LS
//! estimate at the pilot tones is interpolated across subcarriers, the `T`
//! training symbols are stacked, and the stack is unmixed through the
//! training matrix, `[D G] = H * pattern^{-1}`. LMMSE optionally filters the
//! pilot-tone estimates before interpolation using the effective channel's
//! spatial covariance, which is supplied by a Monte-Carlo oracle (the model
//! is synthetic, so the exact second-order statistics are ours to sample).

use crate::channel::{ChannelModel, UserChannel};
use crate::frame::{PatternKind, PilotPlan, ReflectionPattern};
use crate::linalg::{invert, solve_hermitian, CMatrix, LinalgError, RngStream};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("interpolation needs at least 2 pilot tones, got {pilots}")]
    TooFewPilots { pilots: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training pattern is singular and cannot be unmixed")]
    SingularPattern,
    #[error("estimator requires a {expected:?} pattern, got {got:?}")]
    PatternMismatch {
        expected: PatternKind,
        got: PatternKind,
    },
    #[error("NMSE reference has zero norm")]
    ZeroReference,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Which stage of the chain produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    LsRaw,
    LsInterp,
    Lmmse,
    DipDenoised,
}

/// Per-pilot-tone estimate of one user's effective channel: for each
/// training symbol a `N_p x K` matrix whose row `i` is the estimate at
/// `tones[i]`.
#[derive(Debug, Clone)]
pub struct SparseEstimate {
    pub tones: Vec<usize>,
    pub per_symbol: Vec<CMatrix>,
    pub provenance: Provenance,
}

/// Full-grid effective-channel estimate: one `N x K` matrix per training
/// symbol (the `(N, K, T)` stack).
#[derive(Debug, Clone)]
pub struct EffectiveChannelGrid {
    pub symbols: Vec<CMatrix>,
    pub provenance: Provenance,
}

impl EffectiveChannelGrid {
    pub fn subcarriers(&self) -> usize {
        self.symbols[0].rows()
    }

    pub fn antennas(&self) -> usize {
        self.symbols[0].cols()
    }

    pub fn training_symbols(&self) -> usize {
        self.symbols.len()
    }
}

/// Unmixed per-user estimate: direct channel (`N x K`) and cascaded
/// channels (per subcarrier `K x M`), mirroring the ground-truth layout.
#[derive(Debug, Clone)]
pub struct ChannelEstimate {
    pub direct: CMatrix,
    pub cascade: Vec<CMatrix>,
}

/// Least-squares estimate at one user's pilot tones: divide the received
/// samples by the known pilot. Exact at the pilots when noiseless.
pub fn ls_pilot_estimate(
    received: &[CMatrix],
    plan: &PilotPlan,
    user: usize,
    pilot: &[Complex64],
) -> SparseEstimate {
    let tones = plan.tones(user).to_vec();
    assert_eq!(pilot.len(), tones.len(), "one pilot symbol per tone");
    let k = received[0].cols();
    let per_symbol = received
        .iter()
        .map(|y| {
            let mut est = CMatrix::zeros(tones.len(), k);
            for (i, &tone) in tones.iter().enumerate() {
                for kk in 0..k {
                    est.set(i, kk, y.get(tone, kk) / pilot[i]);
                }
            }
            est
        })
        .collect();
    SparseEstimate {
        tones,
        per_symbol,
        provenance: Provenance::LsRaw,
    }
}

/// Subcarrier interpolation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpMethod {
    /// Piecewise-linear between pilots (real and imaginary parts
    /// independently), nearest-pilot constant extrapolation at the edges.
    Linear,
    /// Natural cubic spline between pilots, same edge handling.
    CubicSpline,
}

/// Natural cubic spline through `(x[i], y[i])`: returns the second
/// derivatives at the knots (zero at both ends), via the standard
/// tridiagonal solve.
fn spline_second_derivatives(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior knots.
    let mut diag = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for i in 1..n - 1 {
        let h0 = x[i] - x[i - 1];
        let h1 = x[i + 1] - x[i];
        diag[i] = 2.0 * (h0 + h1);
        rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
    }
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    for i in 1..n - 1 {
        let h0 = x[i] - x[i - 1];
        let h1 = x[i + 1] - x[i];
        let lower = if i == 1 { 0.0 } else { h0 };
        let denom = diag[i] - lower * c_prime[i - 1];
        c_prime[i] = if i == n - 2 { 0.0 } else { h1 / denom };
        d_prime[i] = (rhs[i] - lower * d_prime[i - 1]) / denom;
    }
    for i in (1..n - 1).rev() {
        m[i] = d_prime[i] - c_prime[i] * m[i + 1];
    }
    m
}

fn spline_eval(x: &[f64], y: &[f64], m: &[f64], seg: usize, xq: f64) -> f64 {
    let h = x[seg + 1] - x[seg];
    let a = (x[seg + 1] - xq) / h;
    let b = (xq - x[seg]) / h;
    a * y[seg]
        + b * y[seg + 1]
        + ((a * a * a - a) * m[seg] + (b * b * b - b) * m[seg + 1]) * h * h / 6.0
}

/// Interpolate a sparse pilot-tone estimate to the full subcarrier grid.
pub fn interpolate_subcarriers(
    sparse: &SparseEstimate,
    subcarriers: usize,
    method: InterpMethod,
) -> Result<EffectiveChannelGrid, EstimatorError> {
    let np = sparse.tones.len();
    if np < 2 {
        return Err(EstimatorError::TooFewPilots { pilots: np });
    }
    let k = sparse.per_symbol[0].cols();
    let xs: Vec<f64> = sparse.tones.iter().map(|&t| t as f64).collect();
    let first = sparse.tones[0];
    let last = sparse.tones[np - 1];

    let symbols = sparse
        .per_symbol
        .iter()
        .map(|vals| {
            let mut full = CMatrix::zeros(subcarriers, k);
            for kk in 0..k {
                let re: Vec<f64> = (0..np).map(|i| vals.get(i, kk).re).collect();
                let im: Vec<f64> = (0..np).map(|i| vals.get(i, kk).im).collect();
                let (m_re, m_im) = match method {
                    InterpMethod::Linear => (Vec::new(), Vec::new()),
                    InterpMethod::CubicSpline => (
                        spline_second_derivatives(&xs, &re),
                        spline_second_derivatives(&xs, &im),
                    ),
                };
                let mut seg = 0usize;
                for n in 0..subcarriers {
                    let value = if n <= first {
                        Complex64::new(re[0], im[0])
                    } else if n >= last {
                        Complex64::new(re[np - 1], im[np - 1])
                    } else {
                        while sparse.tones[seg + 1] < n {
                            seg += 1;
                        }
                        match method {
                            InterpMethod::Linear => {
                                let w = (n as f64 - xs[seg]) / (xs[seg + 1] - xs[seg]);
                                Complex64::new(
                                    (1.0 - w) * re[seg] + w * re[seg + 1],
                                    (1.0 - w) * im[seg] + w * im[seg + 1],
                                )
                            }
                            InterpMethod::CubicSpline => Complex64::new(
                                spline_eval(&xs, &re, &m_re, seg, n as f64),
                                spline_eval(&xs, &im, &m_im, seg, n as f64),
                            ),
                        }
                    };
                    full.set(n, kk, value);
                }
            }
            full
        })
        .collect();

    Ok(EffectiveChannelGrid {
        symbols,
        provenance: Provenance::LsInterp,
    })
}

/// Stack per-symbol grids into the `(N, K, T)` training stack.
pub fn stack_training_symbols(
    grids: Vec<CMatrix>,
    provenance: Provenance,
) -> Result<EffectiveChannelGrid, EstimatorError> {
    assert!(!grids.is_empty());
    let (rows, cols) = (grids[0].rows(), grids[0].cols());
    for (t, g) in grids.iter().enumerate() {
        if g.rows() != rows || g.cols() != cols {
            return Err(EstimatorError::ShapeMismatch(format!(
                "symbol {t} is {}x{}, expected {rows}x{cols}",
                g.rows(),
                g.cols()
            )));
        }
    }
    Ok(EffectiveChannelGrid {
        symbols: grids,
        provenance,
    })
}

/// Invert the training pattern: `[D G][n,k,:] = H[n,k,:] * pattern^{-1}`.
///
/// The DFT pattern is unmixed by its scaled adjoint (exactly unitary up to
/// the `M+1` factor, no explicit inversion); the ON/OFF pattern by direct
/// subtraction (its algebraic inverse); custom patterns by Gauss-Jordan
/// inversion of the training matrix.
pub fn unmix(
    grid: &EffectiveChannelGrid,
    pattern: &ReflectionPattern,
) -> Result<ChannelEstimate, EstimatorError> {
    let t_sym = grid.training_symbols();
    let size = pattern.symbols();
    if t_sym != size {
        return Err(EstimatorError::ShapeMismatch(format!(
            "{t_sym} stacked symbols vs {size}-symbol pattern"
        )));
    }
    let n_sub = grid.subcarriers();
    let k = grid.antennas();
    let m = pattern.subsurfaces();

    // Column j of `inverse` holds the coefficients combining the T symbols
    // into output j (j = 0 is the direct channel).
    let inverse: CMatrix = match pattern.kind() {
        PatternKind::Dft => {
            let scale = Complex64::new(1.0 / size as f64, 0.0);
            pattern.matrix().adjoint().scale(scale)
        }
        PatternKind::OnOff => {
            // d = h_0, g_m = h_{m+1} - h_0.
            CMatrix::from_fn(size, size, |t, j| {
                if j == 0 {
                    if t == 0 {
                        Complex64::new(1.0, 0.0)
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                } else if t == j {
                    Complex64::new(1.0, 0.0)
                } else if t == 0 {
                    Complex64::new(-1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
        }
        PatternKind::Custom => invert(pattern.matrix()).map_err(|e| match e {
            LinalgError::SingularMatrix { .. } => EstimatorError::SingularPattern,
            other => EstimatorError::Linalg(other),
        })?,
    };

    let mut direct = CMatrix::zeros(n_sub, k);
    let mut cascade = Vec::with_capacity(n_sub);
    for n in 0..n_sub {
        let mut g_n = CMatrix::zeros(k, m);
        for kk in 0..k {
            for j in 0..size {
                let mut acc = Complex64::new(0.0, 0.0);
                for t in 0..t_sym {
                    acc += grid.symbols[t].get(n, kk) * inverse.get(t, j);
                }
                if j == 0 {
                    direct.set(n, kk, acc);
                } else {
                    g_n.set(kk, j - 1, acc);
                }
            }
        }
        cascade.push(g_n);
    }
    Ok(ChannelEstimate { direct, cascade })
}

/// The switched baseline: estimate with an ON/OFF pattern, where symbol 0
/// observes the direct channel alone and symbol `m+1` adds sub-surface `m`.
/// Identical to [`unmix`] but guarded against being fed the wrong pattern.
pub fn onoff_estimate(
    grid: &EffectiveChannelGrid,
    pattern: &ReflectionPattern,
) -> Result<ChannelEstimate, EstimatorError> {
    if pattern.kind() != PatternKind::OnOff {
        return Err(EstimatorError::PatternMismatch {
            expected: PatternKind::OnOff,
            got: pattern.kind(),
        });
    }
    unmix(grid, pattern)
}

/// Spatial covariances of the effective channel at pilot tones, estimated by
/// Monte-Carlo over fresh channel realizations with the training pattern
/// held fixed: one `K x K` matrix per (user, tone, training symbol).
#[derive(Debug, Clone)]
pub struct CovarianceSet {
    tones: Vec<usize>,
    /// `cov[user][tone_slot][symbol]`.
    cov: Vec<Vec<Vec<CMatrix>>>,
    trials: usize,
}

impl CovarianceSet {
    /// Estimate covariances for every user at each listed tone and every
    /// training symbol. One set of realizations (drawn from the dedicated
    /// "covariance" stream of `master_seed`) is shared across all cells.
    pub fn estimate(
        model: &ChannelModel,
        pattern: &ReflectionPattern,
        tones: &[usize],
        trials: usize,
        master_seed: u64,
    ) -> Self {
        assert!(trials >= 100, "covariance oracle needs at least 100 trials");
        let users = model.params().geometry.ue_count();
        let k = model.params().geometry.bs_antennas;
        let symbols = pattern.symbols();
        let phases: Vec<Vec<Complex64>> = (0..symbols).map(|t| pattern.phase_vector(t)).collect();
        let mut rng = RngStream::for_purpose(master_seed, 0, "covariance");
        let mut acc = vec![vec![vec![CMatrix::zeros(k, k); symbols]; tones.len()]; users];
        let mut h = vec![Complex64::new(0.0, 0.0); k];
        for _ in 0..trials {
            let real = model.draw_realization(&mut rng, false);
            for (u, user) in real.users.iter().enumerate() {
                for (slot, &tone) in tones.iter().enumerate() {
                    for t in 0..symbols {
                        // Effective channel at this tone only.
                        let refl = user.cascade[tone].mul_vec(&phases[t]);
                        for kk in 0..k {
                            h[kk] = user.direct.get(tone, kk) + refl[kk];
                        }
                        let a = &mut acc[u][slot][t];
                        for i in 0..k {
                            for j in 0..k {
                                let v = a.get(i, j) + h[i] * h[j].conj();
                                a.set(i, j, v);
                            }
                        }
                    }
                }
            }
        }
        // Normalize and symmetrize (outer-product sums are Hermitian up to
        // rounding; make it exact).
        let scale = Complex64::new(1.0 / trials as f64, 0.0);
        for per_user in &mut acc {
            for per_tone in per_user {
                for c in per_tone {
                    let m = c.scale(scale);
                    let sym = m.add(&m.adjoint()).scale(Complex64::new(0.5, 0.0));
                    *c = sym;
                }
            }
        }
        CovarianceSet {
            tones: tones.to_vec(),
            cov: acc,
            trials,
        }
    }

    /// Build a set from externally supplied matrices (`cov[user][tone
    /// slot][symbol]`), e.g. analytic covariances in tests.
    pub fn from_matrices(tones: Vec<usize>, cov: Vec<Vec<Vec<CMatrix>>>) -> Self {
        CovarianceSet {
            tones,
            cov,
            trials: 0,
        }
    }

    pub fn trials(&self) -> usize {
        self.trials
    }

    fn slot(&self, tone: usize) -> usize {
        self.tones
            .iter()
            .position(|&t| t == tone)
            .unwrap_or_else(|| panic!("tone {tone} not covered by this covariance set"))
    }

    pub fn get(&self, user: usize, tone: usize, symbol: usize) -> &CMatrix {
        &self.cov[user][self.slot(tone)][symbol]
    }

    /// Sum of all users' covariances at a tone/symbol (the distortion-aware
    /// filter's interference statistic).
    pub fn sum_over_users(&self, tone: usize, symbol: usize) -> CMatrix {
        let slot = self.slot(tone);
        let k = self.cov[0][slot][symbol].rows();
        let mut sum = CMatrix::zeros(k, k);
        for per_user in &self.cov {
            sum = sum.add(&per_user[slot][symbol]);
        }
        sum
    }
}

/// Single-cell covariance oracle, as the natural query shape; delegates to
/// the shared-realization batch estimator so repeated queries at different
/// tones agree with [`CovarianceSet::estimate`].
pub fn estimate_covariance_oracle(
    model: &ChannelModel,
    pattern: &ReflectionPattern,
    user: usize,
    tone: usize,
    symbol: usize,
    trials: usize,
    master_seed: u64,
) -> CMatrix {
    let set = CovarianceSet::estimate(model, pattern, &[tone], trials, master_seed);
    set.get(user, tone, symbol).clone()
}

/// LMMSE filter applied per pilot tone and symbol:
/// `C (C + I/snr)^{-1} r_ls`. With nonzero kappas the regularizer grows by
/// the distortion statistics, `Lambda = C_u + kappa_ue * sum_j C_j +
/// kappa_bs * diag(sum_j C_j) + I/snr`; at `kappa = 0` the code path is the
/// ideal one, so both modes agree exactly.
pub fn lmmse_filter(
    sparse: &SparseEstimate,
    covs: &CovarianceSet,
    user: usize,
    snr: f64,
    kappa_ue: f64,
    kappa_bs: f64,
) -> Result<SparseEstimate, EstimatorError> {
    assert!(snr > 0.0, "LMMSE needs a positive SNR");
    let k = sparse.per_symbol[0].cols();
    let inv_snr = Complex64::new(1.0 / snr, 0.0);
    let distortion_aware = kappa_ue != 0.0 || kappa_bs != 0.0;

    let mut out = Vec::with_capacity(sparse.per_symbol.len());
    for (t, vals) in sparse.per_symbol.iter().enumerate() {
        let mut filtered = CMatrix::zeros(vals.rows(), k);
        for (i, &tone) in sparse.tones.iter().enumerate() {
            let c = covs.get(user, tone, t);
            let mut lambda = c.clone();
            if distortion_aware {
                let total = covs.sum_over_users(tone, t);
                for r in 0..k {
                    for cc in 0..k {
                        let mut v =
                            lambda.get(r, cc) + Complex64::new(kappa_ue, 0.0) * total.get(r, cc);
                        if r == cc {
                            v += Complex64::new(kappa_bs, 0.0) * total.get(r, cc);
                        }
                        lambda.set(r, cc, v);
                    }
                }
            }
            for d in 0..k {
                let v = lambda.get(d, d) + inv_snr;
                lambda.set(d, d, v);
            }
            let r_vec: Vec<Complex64> = (0..k).map(|kk| vals.get(i, kk)).collect();
            let r_ls = CMatrix::col_vector(&r_vec);
            let solved = solve_hermitian(&lambda, &r_ls)?;
            let refined = c.mul(&solved);
            for kk in 0..k {
                filtered.set(i, kk, refined.get(kk, 0));
            }
        }
        out.push(filtered);
    }
    Ok(SparseEstimate {
        tones: sparse.tones.clone(),
        per_symbol: out,
        provenance: Provenance::Lmmse,
    })
}

/// NMSE over the stacked `[D G]` block of one user:
/// `(||D_hat - D||^2 + sum_n ||G_hat[n] - G[n]||^2) / (||D||^2 + sum_n ||G[n]||^2)`.
pub fn nmse_dg(truth: &UserChannel, est: &ChannelEstimate) -> Result<f64, EstimatorError> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in truth.direct.as_slice().iter().zip(est.direct.as_slice()) {
        num += (a - b).norm_sqr();
        den += a.norm_sqr();
    }
    if truth.cascade.len() != est.cascade.len() {
        return Err(EstimatorError::ShapeMismatch(format!(
            "{} vs {} cascade subcarriers",
            truth.cascade.len(),
            est.cascade.len()
        )));
    }
    for (ta, ea) in truth.cascade.iter().zip(&est.cascade) {
        for (a, b) in ta.as_slice().iter().zip(ea.as_slice()) {
            num += (a - b).norm_sqr();
            den += a.norm_sqr();
        }
    }
    if den == 0.0 {
        return Err(EstimatorError::ZeroReference);
    }
    Ok(num / den)
}

/// NMSE on the effective channel: recombine the estimate through the
/// nominal pattern (`H_hat_t = D_hat + G_hat * phi_t`) and compare with the
/// impairment-free effective channels.
pub fn nmse_effective(
    truth_effective: &[CMatrix],
    est: &ChannelEstimate,
    pattern: &ReflectionPattern,
) -> Result<f64, EstimatorError> {
    if truth_effective.len() != pattern.symbols() {
        return Err(EstimatorError::ShapeMismatch(format!(
            "{} truth symbols vs {}-symbol pattern",
            truth_effective.len(),
            pattern.symbols()
        )));
    }
    let n_sub = est.direct.rows();
    let k = est.direct.cols();
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, truth) in truth_effective.iter().enumerate() {
        let phases = pattern.phase_vector(t);
        for n in 0..n_sub {
            let refl = est.cascade[n].mul_vec(&phases);
            for kk in 0..k {
                let h_hat = est.direct.get(n, kk) + refl[kk];
                num += (truth.get(n, kk) - h_hat).norm_sqr();
                den += truth.get(n, kk).norm_sqr();
            }
        }
    }
    if den == 0.0 {
        return Err(EstimatorError::ZeroReference);
    }
    Ok(num / den)
}
