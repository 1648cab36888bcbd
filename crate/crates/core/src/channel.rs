//! Network geometry, large-scale fading and imperfect-CSIT channel draws.
//!
//! Matrices are `N×K`: row `n` is an access point, column `k` a user. The
//! estimate is modelled statistically,
//!
//! ```text
//! ĝ = √ζ (τ·h − σe·h̃),   g̃ = σe·√ζ·h̃,   g = √ζ·h,   τ = √(1 + σe²)
//! ```
//!
//! so that `ĝ + g̃ = τ·g` holds entry by entry.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::units::db_to_linear;

/// Physical constants of the propagation and receiver noise model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagationParams {
    pub carrier_freq_mhz: f64,
    pub h_ap: f64,
    pub h_user: f64,
    pub d0: f64,
    pub d1: f64,
    pub shadow_std_db: f64,
    pub noise_temp: f64,
    pub boltzmann: f64,
    pub bandwidth: f64,
    pub noise_figure_db: f64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self {
            carrier_freq_mhz: 1900.0,
            h_ap: 15.0,
            h_user: 1.65,
            d0: 10.0,
            d1: 50.0,
            shadow_std_db: 8.0,
            noise_temp: 290.0,
            boltzmann: 1.381e-23,
            bandwidth: 50e6,
            noise_figure_db: 10.0,
        }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier_freq_mhz", self.carrier_freq_mhz),
            ("h_ap", self.h_ap),
            ("h_user", self.h_user),
            ("d0", self.d0),
            ("d1", self.d1),
            ("noise_temp", self.noise_temp),
            ("boltzmann", self.boltzmann),
            ("bandwidth", self.bandwidth),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!(
                    "propagation.{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.shadow_std_db >= 0.0 && self.shadow_std_db.is_finite()) {
            return Err(Error::domain(
                "propagation.shadow_std_db must be nonnegative",
            ));
        }
        if !self.noise_figure_db.is_finite() {
            return Err(Error::domain("propagation.noise_figure_db must be finite"));
        }
        if self.d0 >= self.d1 {
            return Err(Error::domain(format!(
                "propagation.d0 ({}) must be below d1 ({})",
                self.d0, self.d1
            )));
        }
        Ok(())
    }
}

/// Hata-style attenuation constant `L` in dB.
pub fn attenuation_constant(p: &PropagationParams) -> Result<f64> {
    for (name, v) in [
        ("carrier_freq_mhz", p.carrier_freq_mhz),
        ("h_ap", p.h_ap),
        ("h_user", p.h_user),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::domain(format!("{name} must be positive, got {v}")));
        }
    }
    let lf = p.carrier_freq_mhz.log10();
    Ok(46.3 + 33.9 * lf - 13.82 * p.h_ap.log10() - (1.1 * lf - 0.7) * p.h_user + (1.56 * lf - 0.8))
}

/// Three-slope path loss in dB (a negative number) at distance `d` meters.
pub fn path_loss(d: f64, p: &PropagationParams) -> Result<f64> {
    if !(d >= 0.0 && d.is_finite()) {
        return Err(Error::domain(format!(
            "distance must be nonnegative, got {d}"
        )));
    }
    let l = attenuation_constant(p)?;
    Ok(path_loss_with(d, l, p.d0, p.d1))
}

fn path_loss_with(d: f64, l: f64, d0: f64, d1: f64) -> f64 {
    if d > d1 {
        -l - 35.0 * d.log10()
    } else if d > d0 {
        -l - 15.0 * d1.log10() - 20.0 * d.log10()
    } else {
        -l - 15.0 * d1.log10() - 20.0 * d0.log10()
    }
}

/// Receiver noise power `T·k_B·B·N_f` in watts.
pub fn noise_variance(p: &PropagationParams) -> f64 {
    p.noise_temp * p.boltzmann * p.bandwidth * db_to_linear(p.noise_figure_db)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub ap_positions: Vec<[f64; 2]>,
    pub user_positions: Vec<[f64; 2]>,
    pub area_side: f64,
}

impl Geometry {
    pub fn n_aps(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn n_users(&self) -> usize {
        self.user_positions.len()
    }

    pub fn distance(&self, ap: usize, user: usize) -> f64 {
        let [ax, ay] = self.ap_positions[ap];
        let [ux, uy] = self.user_positions[user];
        (ax - ux).hypot(ay - uy)
    }
}

/// Drops `n_aps` APs and `n_users` users uniformly in `[0, area_side]²`.
pub fn place_network<R: Rng + ?Sized>(
    n_aps: usize,
    n_users: usize,
    area_side: f64,
    rng: &mut R,
) -> Result<Geometry> {
    if n_aps == 0 || n_users == 0 {
        return Err(Error::domain("network needs at least one AP and one user"));
    }
    if !(area_side > 0.0 && area_side.is_finite()) {
        return Err(Error::domain(format!(
            "area_side must be positive, got {area_side}"
        )));
    }
    let mut point = || {
        [
            rng.random::<f64>() * area_side,
            rng.random::<f64>() * area_side,
        ]
    };
    let ap_positions = (0..n_aps).map(|_| point()).collect();
    let user_positions = (0..n_users).map(|_| point()).collect();
    Ok(Geometry {
        ap_positions,
        user_positions,
        area_side,
    })
}

/// Linear-scale large-scale fading coefficients ζ, `N×K`, all strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LargeScaleMatrix(DMatrix<f64>);

impl LargeScaleMatrix {
    pub fn new(zeta: DMatrix<f64>) -> Result<Self> {
        if zeta.is_empty() {
            return Err(Error::domain("large-scale matrix is empty"));
        }
        if let Some(bad) = zeta.iter().find(|z| !(**z > 0.0 && z.is_finite())) {
            return Err(Error::domain(format!(
                "large-scale coefficients must be positive and finite, found {bad}"
            )));
        }
        Ok(Self(zeta))
    }

    pub fn from_row_slice(n_aps: usize, n_users: usize, data: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(n_aps, n_users, data))
    }

    pub fn n_aps(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, ap: usize, user: usize) -> f64 {
        self.0[(ap, user)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.sum()
    }
}

/// ζ_{n,k} = 10^((PL(d_{n,k}) + σ_s·z_{n,k})/10) with i.i.d. standard normal `z`.
pub fn large_scale_coefficients<R: Rng + ?Sized>(
    geometry: &Geometry,
    p: &PropagationParams,
    rng: &mut R,
) -> Result<LargeScaleMatrix> {
    p.validate()?;
    let l = attenuation_constant(p)?;
    let (n, k) = (geometry.n_aps(), geometry.n_users());
    let mut zeta = DMatrix::zeros(n, k);
    // Column-major draw order: user by user.
    for user in 0..k {
        for ap in 0..n {
            let z: f64 = StandardNormal.sample(rng);
            let pl = path_loss_with(geometry.distance(ap, user), l, p.d0, p.d1);
            zeta[(ap, user)] = db_to_linear(pl + p.shadow_std_db * z);
        }
    }
    LargeScaleMatrix::new(zeta)
}

/// Circularly symmetric `CN(0, 1)` sample.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * FRAC_1_SQRT_2
}

pub fn tau(sigma_e: f64) -> f64 {
    (1.0 + sigma_e * sigma_e).sqrt()
}

fn check_sigma_e(sigma_e: f64) -> Result<()> {
    if !(sigma_e >= 0.0 && sigma_e.is_finite()) {
        return Err(Error::domain(format!(
            "sigma_e must be nonnegative, got {sigma_e}"
        )));
    }
    Ok(())
}

/// A consistent (true, estimate, error) channel triple.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    pub g_true: CMatrix,
    pub g_hat: CMatrix,
    pub g_err: CMatrix,
    pub zeta: LargeScaleMatrix,
    pub sigma_e: f64,
    pub tau: f64,
}

impl ChannelSet {
    pub fn n_aps(&self) -> usize {
        self.g_hat.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.g_hat.ncols()
    }

    /// Largest `|ĝ + g̃ − τ·g|` relative to the largest `|τ·g|`.
    pub fn consistency_error(&self) -> f64 {
        consistency_error(&self.g_hat, &self.g_err, &self.g_true, self.tau)
    }
}

pub(crate) fn consistency_error(
    g_hat: &CMatrix,
    g_err: &CMatrix,
    g_true: &CMatrix,
    tau: f64,
) -> f64 {
    let scale = g_true.iter().map(|z| z.norm() * tau).fold(0.0, f64::max);
    let worst = g_hat
        .iter()
        .zip(g_err.iter())
        .zip(g_true.iter())
        .map(|((h, e), g)| (h + e - g * tau).norm())
        .fold(0.0, f64::max);
    if scale > 0.0 {
        worst / scale
    } else {
        worst
    }
}

/// Draws `h` then `h̃` (all entries of each, column-major) and forms the triple.
///
/// Both matrices are drawn even when `sigma_e = 0`, so the same stream
/// yields coupled draws across different error levels.
pub fn draw_channel_triple<R: Rng + ?Sized>(
    zeta: &LargeScaleMatrix,
    sigma_e: f64,
    rng: &mut R,
) -> Result<ChannelSet> {
    check_sigma_e(sigma_e)?;
    let (n, k) = (zeta.n_aps(), zeta.n_users());
    let tau = tau(sigma_e);
    let h = CMatrix::from_fn(n, k, |_, _| complex_normal(rng));
    let h_err = CMatrix::from_fn(n, k, |_, _| complex_normal(rng));

    let sqrt_zeta = |i: usize, j: usize| zeta.get(i, j).sqrt();
    let g_true = CMatrix::from_fn(n, k, |i, j| h[(i, j)] * sqrt_zeta(i, j));
    let g_err = CMatrix::from_fn(n, k, |i, j| h_err[(i, j)] * (sigma_e * sqrt_zeta(i, j)));
    let g_hat = CMatrix::from_fn(n, k, |i, j| {
        (h[(i, j)] * tau - h_err[(i, j)] * sigma_e) * sqrt_zeta(i, j)
    });
    Ok(ChannelSet {
        g_true,
        g_hat,
        g_err,
        zeta: zeta.clone(),
        sigma_e,
        tau,
    })
}

/// Fresh estimation error for a fixed estimate: returns `(g̃, g)` with
/// `g̃ = σe·√ζ·h̃` and `g = (ĝ + g̃)/τ`.
pub fn redraw_error<R: Rng + ?Sized>(
    g_hat: &CMatrix,
    zeta: &LargeScaleMatrix,
    sigma_e: f64,
    rng: &mut R,
) -> Result<(CMatrix, CMatrix)> {
    check_sigma_e(sigma_e)?;
    if g_hat.shape() != zeta.matrix().shape() {
        return Err(Error::domain(format!(
            "estimate is {:?} but large-scale matrix is {:?}",
            g_hat.shape(),
            zeta.matrix().shape()
        )));
    }
    let tau = tau(sigma_e);
    let (n, k) = g_hat.shape();
    let g_err = CMatrix::from_fn(n, k, |i, j| {
        complex_normal(rng) * (sigma_e * zeta.get(i, j).sqrt())
    });
    let g_true = CMatrix::from_fn(n, k, |i, j| (g_hat[(i, j)] + g_err[(i, j)]) / tau);
    Ok((g_err, g_true))
}

/// Transmit power that yields `snr_linear` under the expected channel trace:
/// `P_t = snr·N·K·σn² / Σζ`.
pub fn power_for_snr(zeta: &LargeScaleMatrix, snr_linear: f64, sigma_n2: f64) -> Result<f64> {
    if !(snr_linear > 0.0 && snr_linear.is_finite()) {
        return Err(Error::domain(format!(
            "snr must be positive, got {snr_linear}"
        )));
    }
    if !(sigma_n2 > 0.0) {
        return Err(Error::domain("noise variance must be positive"));
    }
    let total = zeta.total();
    if !(total > 0.0) {
        return Err(Error::domain("large-scale coefficients sum to zero"));
    }
    let (n, k) = (zeta.n_aps() as f64, zeta.n_users() as f64);
    Ok(snr_linear * n * k * sigma_n2 / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Purpose};
    use proptest::prelude::*;

    fn params() -> PropagationParams {
        PropagationParams::default()
    }

    #[test]
    fn attenuation_matches_hand_values() {
        // Independent evaluation with each log10 term written out.
        let lf = 1900f64.log10();
        let expected =
            46.3 + 33.9 * lf - 13.82 * 15f64.log10() - (1.1 * lf - 0.7) * 1.65 + 1.56 * lf - 0.8;
        let l = attenuation_constant(&params()).unwrap();
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 140.715).abs() < 5e-4, "L = {l}");

        let unit = PropagationParams {
            carrier_freq_mhz: 10.0,
            h_ap: 10.0,
            h_user: 1.0,
            ..params()
        };
        assert!((attenuation_constant(&unit).unwrap() - 66.74).abs() < 1e-10);

        let bad = PropagationParams {
            h_ap: 0.0,
            ..params()
        };
        assert!(matches!(attenuation_constant(&bad), Err(Error::Domain(_))));
    }

    #[test]
    fn three_slope_branches() {
        let p = params();
        let l = attenuation_constant(&p).unwrap();
        let near = path_loss(5.0, &p).unwrap();
        assert!((near - (-l - 15.0 * 50f64.log10() - 20.0)).abs() < 1e-12);
        assert!((near + 186.199).abs() < 1e-3, "{near}");
        assert!((path_loss(30.0, &p).unwrap() + 195.742).abs() < 1e-3);
        let at_d1 = path_loss(50.0, &p).unwrap();
        assert!((at_d1 - (-l - 35.0 * 50f64.log10())).abs() < 1e-9);
        assert!((at_d1 + 200.179).abs() < 1e-3, "{at_d1}");
        assert!(path_loss(-1.0, &p).is_err());
    }

    #[test]
    fn path_loss_is_continuous_at_breakpoints() {
        let p = params();
        for d in [p.d0, p.d1] {
            let below = path_loss(d * (1.0 - 1e-12), &p).unwrap();
            let above = path_loss(d * (1.0 + 1e-12), &p).unwrap();
            assert!((below - above).abs() < 1e-8, "jump at {d}");
        }
    }

    proptest! {
        #[test]
        fn path_loss_nonincreasing(a in 0.0f64..3000.0, b in 0.0f64..3000.0) {
            let p = params();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(path_loss(hi, &p).unwrap() <= path_loss(lo, &p).unwrap() + 1e-12);
        }

        #[test]
        fn triple_is_consistent(seed in any::<u64>(), sigma_e in 0.0f64..2.0) {
            let mut rng = substream(seed, Purpose::Check, &[]);
            let zeta = LargeScaleMatrix::new(DMatrix::from_fn(5, 3, |i, j| 1e-15 * (1 + i + 2 * j) as f64)).unwrap();
            let set = draw_channel_triple(&zeta, sigma_e, &mut rng).unwrap();
            prop_assert!(set.consistency_error() < 1e-12);
            let (g_err, g_true) = redraw_error(&set.g_hat, &zeta, sigma_e, &mut rng).unwrap();
            prop_assert!(consistency_error(&set.g_hat, &g_err, &g_true, set.tau) < 1e-12);
        }
    }

    #[test]
    fn noise_power_values() {
        let p = params();
        let s = noise_variance(&p);
        assert!((s - 290.0 * 1.381e-23 * 50e6 * 10.0).abs() < 1e-24);
        assert!((s - 2.0024e-12).abs() / 2.0024e-12 < 1e-4);
        let unit = PropagationParams {
            noise_figure_db: 0.0,
            ..p.clone()
        };
        assert!((noise_variance(&unit) - 290.0 * 1.381e-23 * 50e6).abs() < 1e-25);
        let wide = PropagationParams {
            bandwidth: 100e6,
            ..p.clone()
        };
        assert!((noise_variance(&wide) / s - 2.0).abs() < 1e-12);
    }

    #[test]
    fn placement_is_deterministic_and_bounded() {
        let a = place_network(128, 16, 1000.0, &mut substream(1, Purpose::Geometry, &[])).unwrap();
        let b = place_network(128, 16, 1000.0, &mut substream(1, Purpose::Geometry, &[])).unwrap();
        assert_eq!(a, b);
        let single =
            place_network(1, 1, 1000.0, &mut substream(2, Purpose::Geometry, &[])).unwrap();
        for [x, y] in single.ap_positions.iter().chain(&single.user_positions) {
            assert!((0.0..=1000.0).contains(x) && (0.0..=1000.0).contains(y));
        }
        assert!(place_network(4, 4, 0.0, &mut substream(1, Purpose::Geometry, &[])).is_err());
        assert!(place_network(0, 4, 10.0, &mut substream(1, Purpose::Geometry, &[])).is_err());
    }

    #[test]
    fn no_shadowing_gives_plain_path_loss() {
        let p = PropagationParams {
            shadow_std_db: 0.0,
            ..params()
        };
        let geometry =
            place_network(6, 3, 500.0, &mut substream(3, Purpose::Geometry, &[])).unwrap();
        let zeta =
            large_scale_coefficients(&geometry, &p, &mut substream(3, Purpose::Shadowing, &[]))
                .unwrap();
        for n in 0..6 {
            for k in 0..3 {
                let expected = db_to_linear(path_loss(geometry.distance(n, k), &p).unwrap());
                assert_eq!(zeta.get(n, k), expected);
            }
        }
    }

    #[test]
    fn shadowing_is_zero_mean_in_db() {
        let p = params();
        let geometry = Geometry {
            ap_positions: vec![[0.0, 0.0]],
            user_positions: vec![[30.0, 40.0]],
            area_side: 100.0,
        };
        let pl = path_loss(50.0, &p).unwrap();
        let mut rng = substream(11, Purpose::Shadowing, &[]);
        let draws = 100_000;
        let mean: f64 = (0..draws)
            .map(|_| {
                let zeta = large_scale_coefficients(&geometry, &p, &mut rng).unwrap();
                10.0 * zeta.get(0, 0).log10() - pl
            })
            .sum::<f64>()
            / draws as f64;
        assert!(mean.abs() < 0.1, "mean shadowing {mean} dB");
    }

    #[test]
    fn zero_error_gives_perfect_estimate() {
        let zeta = LargeScaleMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let set =
            draw_channel_triple(&zeta, 0.0, &mut substream(5, Purpose::Estimate, &[])).unwrap();
        assert_eq!(set.tau, 1.0);
        assert_eq!(set.g_hat, set.g_true);
        assert!(set.g_err.iter().all(|z| *z == Complex64::new(0.0, 0.0)));
        let (g_err, g_true) = redraw_error(
            &set.g_hat,
            &zeta,
            0.0,
            &mut substream(6, Purpose::Error, &[]),
        )
        .unwrap();
        assert!(g_err.iter().all(|z| z.norm() == 0.0));
        assert_eq!(g_true, set.g_hat);
        assert!(
            draw_channel_triple(&zeta, -0.1, &mut substream(5, Purpose::Estimate, &[])).is_err()
        );
    }

    #[test]
    fn redraw_keeps_estimate_and_changes_error() {
        let zeta = LargeScaleMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let set =
            draw_channel_triple(&zeta, 0.5, &mut substream(5, Purpose::Estimate, &[])).unwrap();
        let (e1, _) = redraw_error(
            &set.g_hat,
            &zeta,
            0.5,
            &mut substream(1, Purpose::Error, &[]),
        )
        .unwrap();
        let (e2, _) = redraw_error(
            &set.g_hat,
            &zeta,
            0.5,
            &mut substream(2, Purpose::Error, &[]),
        )
        .unwrap();
        assert_ne!(e1, e2);
    }

    #[test]
    fn power_calibration() {
        let unit = LargeScaleMatrix::from_row_slice(2, 2, &[1.0; 4]).unwrap();
        assert!((power_for_snr(&unit, 3.0, 0.5).unwrap() - 1.5).abs() < 1e-15);
        let half = LargeScaleMatrix::from_row_slice(2, 2, &[0.5; 4]).unwrap();
        assert_eq!(power_for_snr(&half, 4.0, 1.0).unwrap(), 8.0);
        assert_eq!(power_for_snr(&half, 8.0, 1.0).unwrap(), 16.0);
        assert!(power_for_snr(&half, 0.0, 1.0).is_err());
        assert!(LargeScaleMatrix::from_row_slice(1, 2, &[0.0, 0.0]).is_err());
    }
}
