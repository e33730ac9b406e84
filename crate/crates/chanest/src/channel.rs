//! Correlated-Rayleigh channel synthesis.
//!
//! Three links are modeled per user: the direct UE→BS link, the UE→RIS link
//! and the RIS→BS link. Each link is a tapped delay line whose taps are drawn
//! once per frame (quasi-static fading): tap `l` of a link with large-scale
//! gain `beta` and `L+1` taps is
//!
//! ```text
//! A_l = sqrt(beta / (L+1)) * C_rx^{1/2} * Z_l * C_tx^{1/2},   Z_l ~ CN(0, I)
//! ```
//!
//! with Toeplitz antenna correlation at the BS and sinc spatial correlation
//! across the RIS aperture. Per-subcarrier responses follow by an `L+1`-term
//! DFT of the taps. The RIS is modeled element by element and then aggregated
//! into sub-surfaces (rectangular tiles that share one phase shifter) by
//! summing element columns; a config switch allows drawing the aggregated
//! sub-surface channel directly instead.

use crate::linalg::{complex_gaussian, hermitian_sqrt, CMatrix, LinalgError, RngStream};
use num_complex::Complex64;
use thiserror::Error;

/// Errors from geometry validation and channel assembly.
#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("link distance {distance} m is below the model's 1 m validity floor")]
    InvalidDistance { distance: f64 },
    #[error("reflection coefficient {index} has modulus {modulus}; training phases must be unit-modulus (or exactly zero for off elements)")]
    NonUnitModulus { index: usize, modulus: f64 },
    #[error("cannot tile a {side}x{side} element grid into {groups} sub-surfaces: {reason}")]
    BadGrouping {
        side: usize,
        groups: usize,
        reason: String,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Which pathloss law applies to a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    /// UE-RIS and RIS-BS hops (low-exponent law, exponent 2.1).
    RisSide,
    /// Direct UE-BS link (exponent 3.19).
    Direct,
}

/// Standard distance exponents (in dB-per-decade form) for the two laws.
pub const PL_EXPONENT_RIS_SIDE: f64 = 21.0;
pub const PL_EXPONENT_DIRECT: f64 = 31.9;

/// Pathloss in dB: `32.4 + exp_db * log10(d_m) + 20 * log10(f_GHz)`.
pub fn pathloss_db_with_exponent(
    distance_m: f64,
    carrier_ghz: f64,
    exponent_db: f64,
) -> Result<f64, ChannelError> {
    if distance_m.is_nan() || distance_m < 1.0 {
        return Err(ChannelError::InvalidDistance {
            distance: distance_m,
        });
    }
    Ok(32.4 + exponent_db * distance_m.log10() + 20.0 * carrier_ghz.log10())
}

/// Linear large-scale power gain `beta = 10^(-PL_dB / 10)` for a link.
pub fn pathloss_linear(
    distance_m: f64,
    carrier_ghz: f64,
    kind: LinkKind,
) -> Result<f64, ChannelError> {
    let exponent = match kind {
        LinkKind::RisSide => PL_EXPONENT_RIS_SIDE,
        LinkKind::Direct => PL_EXPONENT_DIRECT,
    };
    let pl = pathloss_db_with_exponent(distance_m, carrier_ghz, exponent)?;
    Ok(10f64.powf(-pl / 10.0))
}

/// Exponential (Toeplitz) antenna correlation `r^|i-j|` at the BS.
pub fn bs_correlation(antennas: usize, r: f64) -> CMatrix {
    assert!(
        (0.0..1.0).contains(&r),
        "correlation factor must be in [0, 1), got {r}"
    );
    CMatrix::from_fn(antennas, antennas, |i, j| {
        let d = i.abs_diff(j) as u32;
        Complex64::new(r.powi(d as i32), 0.0)
    })
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x == x.trunc() {
        // sin(pi*n) vanishes for integer n, but evaluating it in floating
        // point leaves an O(1e-16) residue. Half-wavelength element spacings
        // land exactly on these zeros, so return them exactly.
        0.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Sinc spatial correlation for scatterers at the given positions, in
/// wavelengths: `C[e,e'] = sinc(2 * ||u_e - u_e'|| / lambda)`.
pub fn ris_correlation_from_positions(positions: &[(f64, f64)]) -> CMatrix {
    let n = positions.len();
    CMatrix::from_fn(n, n, |i, j| {
        let (xi, yi) = positions[i];
        let (xj, yj) = positions[j];
        let d = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
        Complex64::new(sinc(2.0 * d), 0.0)
    })
}

/// Element positions of a `side x side` RIS grid at half-wavelength spacing,
/// row-major, in wavelengths.
pub fn ris_element_positions(side: usize) -> Vec<(f64, f64)> {
    let mut pos = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            pos.push((0.5 * row as f64, 0.5 * col as f64));
        }
    }
    pos
}

/// Spatial correlation across a square RIS of `side x side` elements at
/// half-wavelength spacing. Horizontally/vertically adjacent elements land on
/// sinc zeros; diagonal neighbours do not, so the matrix is not the identity
/// and is in general rank-deficient.
pub fn ris_correlation(side: usize) -> CMatrix {
    ris_correlation_from_positions(&ris_element_positions(side))
}

/// Partition a `side x side` element grid into `groups` rectangular tiles of
/// adjacent elements (the elements that share one phase shifter). Tiles are
/// as close to square as the divisibility of the grid allows; returned as
/// row-major element indices per tile, tiles ordered row-major.
pub fn subsurface_tiles(side: usize, groups: usize) -> Result<Vec<Vec<usize>>, ChannelError> {
    let total = side * side;
    if groups == 0 || total % groups != 0 {
        return Err(ChannelError::BadGrouping {
            side,
            groups,
            reason: format!("{total} elements are not divisible into {groups} equal tiles"),
        });
    }
    let per_tile = total / groups;
    // Pick tile dimensions (tr, tc) with tr*tc = per_tile that divide the
    // grid evenly, preferring the most compact (closest to square) shape.
    let mut best: Option<(usize, usize)> = None;
    for tr in 1..=per_tile {
        if per_tile % tr != 0 {
            continue;
        }
        let tc = per_tile / tr;
        if side % tr != 0 || side % tc != 0 {
            continue;
        }
        let better = match best {
            None => true,
            Some((br, bc)) => {
                let cand = tr.abs_diff(tc);
                let cur = br.abs_diff(bc);
                cand < cur || (cand == cur && tr < br)
            }
        };
        if better {
            best = Some((tr, tc));
        }
    }
    let (tr, tc) = best.ok_or_else(|| ChannelError::BadGrouping {
        side,
        groups,
        reason: format!("no {per_tile}-element rectangle tiles a {side}x{side} grid"),
    })?;
    let tiles_per_row = side / tc;
    let mut tiles = Vec::with_capacity(groups);
    for tile_row in 0..side / tr {
        for tile_col in 0..tiles_per_row {
            let mut tile = Vec::with_capacity(per_tile);
            for dr in 0..tr {
                for dc in 0..tc {
                    let row = tile_row * tr + dr;
                    let col = tile_col * tc + dc;
                    tile.push(row * side + col);
                }
            }
            tiles.push(tile);
        }
    }
    Ok(tiles)
}

/// Scenario geometry: placements, carrier and correlation factors.
#[derive(Debug, Clone)]
pub struct ScenarioGeometry {
    pub bs_antennas: usize,
    /// RIS elements per grid side (total elements = side^2).
    pub ris_side: usize,
    /// Number of sub-surfaces (phase-shifter groups).
    pub subsurfaces: usize,
    /// Horizontal BS-RIS distance in meters.
    pub bs_ris_distance_m: f64,
    /// Per-UE horizontal distance from the BS, meters.
    pub ue_horizontal_m: Vec<f64>,
    /// Per-UE perpendicular offset from the BS-RIS axis, meters.
    pub ue_vertical_m: Vec<f64>,
    pub carrier_ghz: f64,
    /// Toeplitz correlation factor at the BS.
    pub bs_correlation_factor: f64,
    /// dB-per-decade distance exponent for RIS-side links.
    pub pl_exponent_ris: f64,
    /// dB-per-decade distance exponent for the direct link.
    pub pl_exponent_direct: f64,
}

impl ScenarioGeometry {
    pub fn ue_count(&self) -> usize {
        self.ue_horizontal_m.len()
    }

    pub fn element_count(&self) -> usize {
        self.ris_side * self.ris_side
    }

    pub fn ue_bs_distance(&self, user: usize) -> f64 {
        (self.ue_horizontal_m[user].powi(2) + self.ue_vertical_m[user].powi(2)).sqrt()
    }

    pub fn ue_ris_distance(&self, user: usize) -> f64 {
        ((self.ue_horizontal_m[user] - self.bs_ris_distance_m).powi(2)
            + self.ue_vertical_m[user].powi(2))
        .sqrt()
    }
}

/// Large-scale link gains (linear power), one direct and one UE-RIS gain per
/// user plus the shared RIS-BS gain.
#[derive(Debug, Clone)]
pub struct LinkGains {
    pub direct: Vec<f64>,
    pub ue_ris: Vec<f64>,
    pub ris_bs: f64,
}

/// Evaluate the pathloss law for every link in the scenario.
pub fn link_gains(geometry: &ScenarioGeometry) -> Result<LinkGains, ChannelError> {
    let mut direct = Vec::with_capacity(geometry.ue_count());
    let mut ue_ris = Vec::with_capacity(geometry.ue_count());
    for u in 0..geometry.ue_count() {
        let pl_d = pathloss_db_with_exponent(
            geometry.ue_bs_distance(u),
            geometry.carrier_ghz,
            geometry.pl_exponent_direct,
        )?;
        direct.push(10f64.powf(-pl_d / 10.0));
        let pl_q = pathloss_db_with_exponent(
            geometry.ue_ris_distance(u),
            geometry.carrier_ghz,
            geometry.pl_exponent_ris,
        )?;
        ue_ris.push(10f64.powf(-pl_q / 10.0));
    }
    let pl_b = pathloss_db_with_exponent(
        geometry.bs_ris_distance_m,
        geometry.carrier_ghz,
        geometry.pl_exponent_ris,
    )?;
    Ok(LinkGains {
        direct,
        ue_ris,
        ris_bs: 10f64.powf(-pl_b / 10.0),
    })
}

impl LinkGains {
    /// Rescale all gains by a common factor so the mean direct-link gain is
    /// one. Pure change of reference (relative link strengths are untouched);
    /// it makes the swept SNR a receiver-referenced quantity instead of a
    /// transmit-referenced one. Returns the applied factor.
    pub fn normalize_to_unit_direct(&mut self) -> f64 {
        let mean: f64 = self.direct.iter().sum::<f64>() / self.direct.len() as f64;
        assert!(mean > 0.0, "cannot normalize all-zero direct gains");
        let scale = 1.0 / mean;
        for g in &mut self.direct {
            *g *= scale;
        }
        // The cascaded link's power is the product ue_ris * ris_bs; scaling
        // the shared hop once scales every cascade by the same factor.
        self.ris_bs *= scale;
        scale
    }
}

/// Taps of one link; `taps[l]` is the `rx_dim x tx_dim` coefficient of delay
/// `l`. A link configured with delay spread `L` carries `L+1` taps.
#[derive(Debug, Clone)]
pub struct LinkTaps {
    pub taps: Vec<CMatrix>,
}

/// Draw correlated Rayleigh taps for one link. `None` correlation means
/// uncorrelated on that side. `delay_spread` is the maximum delay index, so
/// `delay_spread + 1` taps are drawn, each with power `beta / (L+1)` per
/// entry (uniform power-delay profile).
pub fn draw_link_taps(
    beta: f64,
    delay_spread: usize,
    c_rx: Option<&CMatrix>,
    c_tx: Option<&CMatrix>,
    rx_dim: usize,
    tx_dim: usize,
    rng: &mut RngStream,
) -> Result<LinkTaps, ChannelError> {
    let rx_sqrt = c_rx.map(hermitian_sqrt).transpose()?;
    let tx_sqrt = c_tx.map(hermitian_sqrt).transpose()?;
    Ok(draw_link_taps_presqrt(
        beta,
        delay_spread,
        rx_sqrt.as_ref(),
        tx_sqrt.as_ref(),
        rx_dim,
        tx_dim,
        rng,
    ))
}

/// Same as [`draw_link_taps`] but with the correlation square roots already
/// computed (the synthesis hot path caches them per configuration).
pub fn draw_link_taps_presqrt(
    beta: f64,
    delay_spread: usize,
    rx_sqrt: Option<&CMatrix>,
    tx_sqrt: Option<&CMatrix>,
    rx_dim: usize,
    tx_dim: usize,
    rng: &mut RngStream,
) -> LinkTaps {
    if let Some(s) = rx_sqrt {
        assert_eq!(s.rows(), rx_dim, "rx correlation dimension mismatch");
    }
    if let Some(s) = tx_sqrt {
        assert_eq!(s.rows(), tx_dim, "tx correlation dimension mismatch");
    }
    let count = delay_spread + 1;
    let amp = (beta / count as f64).sqrt();
    let mut taps = Vec::with_capacity(count);
    for _ in 0..count {
        // Z is always drawn, even for beta = 0, so the stream position does
        // not depend on link gains (keeps paired-seed comparisons aligned).
        let z = complex_gaussian(rx_dim, tx_dim, rng);
        let mut t = match rx_sqrt {
            Some(s) => s.mul(&z),
            None => z,
        };
        if let Some(s) = tx_sqrt {
            t = t.mul(s);
        }
        taps.push(t.scale(Complex64::new(amp, 0.0)));
    }
    LinkTaps { taps }
}

/// Per-subcarrier frequency response of a tapped link:
/// `H[n] = sum_l taps[l] * exp(-j 2 pi n l / N)`.
pub fn freq_response(taps: &LinkTaps, subcarriers: usize) -> Vec<CMatrix> {
    let first = &taps.taps[0];
    let (rows, cols) = (first.rows(), first.cols());
    let mut out = Vec::with_capacity(subcarriers);
    for n in 0..subcarriers {
        let mut h = CMatrix::zeros(rows, cols);
        for (l, tap) in taps.taps.iter().enumerate() {
            let k = (n * l) % subcarriers;
            let w = if k == 0 {
                Complex64::new(1.0, 0.0)
            } else {
                let angle = -2.0 * std::f64::consts::PI * k as f64 / subcarriers as f64;
                Complex64::new(angle.cos(), angle.sin())
            };
            for (acc, &t) in h.as_mut_slice().iter_mut().zip(tap.as_slice()) {
                *acc += t * w;
            }
        }
        out.push(h);
    }
    out
}

/// One user's synthesized channel for a frame.
#[derive(Debug, Clone)]
pub struct UserChannel {
    /// Direct link, `N x K` (row `n` is the response across BS antennas).
    pub direct: CMatrix,
    /// Aggregated cascaded link, per subcarrier `K x M`.
    pub cascade: Vec<CMatrix>,
    /// Element-level cascade (`K x M~` per subcarrier), kept for oracle
    /// tests when requested.
    pub element_cascade: Option<Vec<CMatrix>>,
    /// UE-RIS frequency response (`M~ x 1` per subcarrier), kept on request.
    pub ue_ris_freq: Option<Vec<CMatrix>>,
    /// RIS-BS frequency response (`K x M~` per subcarrier), kept on request.
    pub ris_bs_freq: Option<Vec<CMatrix>>,
}

/// All users' channels for one frame (quasi-static over the frame).
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub users: Vec<UserChannel>,
}

/// Effective uplink channel for one user under reflection coefficients
/// `phases` (one per sub-surface): `H[n] = cascade[n] * phases + direct[n]`,
/// returned `N x K`. Coefficients must be unit-modulus, or exactly zero for
/// switched-off sub-surfaces.
pub fn effective_channel(
    user: &UserChannel,
    phases: &[Complex64],
) -> Result<CMatrix, ChannelError> {
    let n_sub = user.direct.rows();
    let m = user.cascade[0].cols();
    if phases.len() != m {
        return Err(ChannelError::DimensionMismatch(format!(
            "{} reflection coefficients for {} sub-surfaces",
            phases.len(),
            m
        )));
    }
    for (i, p) in phases.iter().enumerate() {
        let modulus = p.norm();
        if modulus != 0.0 && (modulus - 1.0).abs() > 1e-9 {
            return Err(ChannelError::NonUnitModulus { index: i, modulus });
        }
    }
    let k = user.direct.cols();
    let mut h = CMatrix::zeros(n_sub, k);
    for n in 0..n_sub {
        let refl = user.cascade[n].mul_vec(phases);
        for kk in 0..k {
            h.set(n, kk, user.direct.get(n, kk) + refl[kk]);
        }
    }
    Ok(h)
}

/// Parameters fixing a [`ChannelModel`].
#[derive(Debug, Clone)]
pub struct ChannelModelParams {
    pub geometry: ScenarioGeometry,
    pub subcarriers: usize,
    /// Delay spread (max delay index) of the direct link.
    pub taps_direct: usize,
    /// Delay spread of the UE-RIS link.
    pub taps_ue_ris: usize,
    /// Delay spread of the RIS-BS link.
    pub taps_ris_bs: usize,
    /// Model each RIS element and aggregate into sub-surfaces (true), or
    /// draw the aggregated sub-surface channel directly (false).
    pub element_level: bool,
    /// Rescale link gains to a unit mean direct gain (receiver-referenced
    /// SNR axis).
    pub normalize_gains: bool,
}

/// Precomputed synthesis context: link gains, correlation square roots and
/// the sub-surface tiling. Construction does all eigendecompositions once;
/// drawing a realization is then cheap.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    params: ChannelModelParams,
    gains: LinkGains,
    c_bs: CMatrix,
    c_bs_sqrt: CMatrix,
    c_ris: CMatrix,
    c_ris_sqrt: CMatrix,
    tiles: Vec<Vec<usize>>,
    /// Dimension of the drawn RIS-side vectors (element count or M).
    ris_dim: usize,
}

impl ChannelModel {
    pub fn new(params: ChannelModelParams) -> Result<Self, ChannelError> {
        let geom = &params.geometry;
        if geom.ue_horizontal_m.len() != geom.ue_vertical_m.len() {
            return Err(ChannelError::DimensionMismatch(format!(
                "{} horizontal vs {} vertical UE coordinates",
                geom.ue_horizontal_m.len(),
                geom.ue_vertical_m.len()
            )));
        }
        let mut gains = link_gains(geom)?;
        if params.normalize_gains {
            gains.normalize_to_unit_direct();
        }
        let tiles = subsurface_tiles(geom.ris_side, geom.subsurfaces)?;
        let c_bs = bs_correlation(geom.bs_antennas, geom.bs_correlation_factor);
        let c_bs_sqrt = hermitian_sqrt(&c_bs)?;
        let (c_ris, ris_dim) = if params.element_level {
            (ris_correlation(geom.ris_side), geom.element_count())
        } else {
            // Sub-surface-level modeling: correlation between tile centers.
            let positions = ris_element_positions(geom.ris_side);
            let centers: Vec<(f64, f64)> = tiles
                .iter()
                .map(|tile| {
                    let (mut x, mut y) = (0.0, 0.0);
                    for &e in tile {
                        x += positions[e].0;
                        y += positions[e].1;
                    }
                    (x / tile.len() as f64, y / tile.len() as f64)
                })
                .collect();
            (ris_correlation_from_positions(&centers), geom.subsurfaces)
        };
        let c_ris_sqrt = hermitian_sqrt(&c_ris)?;
        Ok(ChannelModel {
            params,
            gains,
            c_bs,
            c_bs_sqrt,
            c_ris,
            c_ris_sqrt,
            tiles,
            ris_dim,
        })
    }

    pub fn params(&self) -> &ChannelModelParams {
        &self.params
    }

    /// Replace the link gains while keeping the correlation structure —
    /// lets what-if scenarios (e.g. a disabled RIS) reuse the cached
    /// eigendecompositions.
    pub fn with_gains(mut self, gains: LinkGains) -> Self {
        assert_eq!(gains.direct.len(), self.params.geometry.ue_count());
        assert_eq!(gains.ue_ris.len(), self.params.geometry.ue_count());
        self.gains = gains;
        self
    }

    pub fn gains(&self) -> &LinkGains {
        &self.gains
    }

    pub fn bs_correlation_matrix(&self) -> &CMatrix {
        &self.c_bs
    }

    pub fn ris_correlation_matrix(&self) -> &CMatrix {
        &self.c_ris
    }

    pub fn tiles(&self) -> &[Vec<usize>] {
        &self.tiles
    }

    /// Draw one quasi-static realization for every user. Draw order is fixed
    /// (per user: direct taps, UE-RIS taps, RIS-BS taps; users in index
    /// order) so a given stream always produces the same channels.
    pub fn draw_realization(&self, rng: &mut RngStream, retain: bool) -> ChannelRealization {
        let geom = &self.params.geometry;
        let n_sub = self.params.subcarriers;
        let k = geom.bs_antennas;
        let m = geom.subsurfaces;
        let users = (0..geom.ue_count())
            .map(|u| {
                let d_taps = draw_link_taps_presqrt(
                    self.gains.direct[u],
                    self.params.taps_direct,
                    Some(&self.c_bs_sqrt),
                    None,
                    k,
                    1,
                    rng,
                );
                let q_taps = draw_link_taps_presqrt(
                    self.gains.ue_ris[u],
                    self.params.taps_ue_ris,
                    Some(&self.c_ris_sqrt),
                    None,
                    self.ris_dim,
                    1,
                    rng,
                );
                let b_taps = draw_link_taps_presqrt(
                    self.gains.ris_bs,
                    self.params.taps_ris_bs,
                    Some(&self.c_bs_sqrt),
                    Some(&self.c_ris_sqrt),
                    k,
                    self.ris_dim,
                    rng,
                );

                let d_freq = freq_response(&d_taps, n_sub);
                let q_freq = freq_response(&q_taps, n_sub);
                let b_freq = freq_response(&b_taps, n_sub);

                let mut direct = CMatrix::zeros(n_sub, k);
                for n in 0..n_sub {
                    for kk in 0..k {
                        direct.set(n, kk, d_freq[n].get(kk, 0));
                    }
                }

                // Cascade per subcarrier: B[n] * diag(q[n]), element columns
                // summed tile-wise into sub-surface columns.
                let mut cascade = Vec::with_capacity(n_sub);
                let mut element_cascade = if retain && self.params.element_level {
                    Some(Vec::with_capacity(n_sub))
                } else {
                    None
                };
                for n in 0..n_sub {
                    let mut elem = CMatrix::zeros(k, self.ris_dim);
                    for kk in 0..k {
                        for e in 0..self.ris_dim {
                            elem.set(kk, e, b_freq[n].get(kk, e) * q_freq[n].get(e, 0));
                        }
                    }
                    let agg = if self.params.element_level {
                        let mut g = CMatrix::zeros(k, m);
                        for (mi, tile) in self.tiles.iter().enumerate() {
                            for kk in 0..k {
                                let mut acc = Complex64::new(0.0, 0.0);
                                for &e in tile {
                                    acc += elem.get(kk, e);
                                }
                                g.set(kk, mi, acc);
                            }
                        }
                        g
                    } else {
                        elem.clone()
                    };
                    if let Some(ec) = element_cascade.as_mut() {
                        ec.push(elem);
                    }
                    cascade.push(agg);
                }

                UserChannel {
                    direct,
                    cascade,
                    element_cascade,
                    ue_ris_freq: retain.then(|| q_freq.clone()),
                    ris_bs_freq: retain.then_some(b_freq),
                }
            })
            .collect();
        ChannelRealization { users }
    }
}
