//! Scenario geometry, large-scale attenuation, Rayleigh fast fading and the
//! cascade form of the RIS-reflected channel.
//!
//! The reflected uplink channel from user `k` to BS `i` is `H_i Φ h_k`. With
//! `φ = diag(Φ)` it equals `D_{i,k} φ`, where `D_{i,k}(m, n) = H_i(m, n) h_k(n)`.
//! Every downstream module works with the cascade matrices `D_{i,k}` and the
//! direct vectors `h^(d)_{i,k}`, grouped per BS in a [`LinkSet`].

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Result, RisError};
use crate::scalar::{cis, lit, real, to_f64, CMatrix, CVector, Cplx, Real};

/// Intercept of the distance-based attenuation model (`10^-3.53`).
pub const PATH_LOSS_INTERCEPT: f64 = 2.951_209_226_666_384_6e-4;
/// Exponent of the distance-based attenuation model.
pub const PATH_LOSS_EXPONENT: f64 = 3.76;

/// Physical and system-level constants of a two-cell deployment.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConstants {
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub noise_density_dbm_hz: f64,
    pub noise_figure_db: f64,
    /// Reflection amplitude `ρ` of every RIS element, in `(0, 1]`.
    pub ris_amplitude: f64,
    /// Antennas per BS.
    pub bs_antennas: usize,
    pub ris_elements: usize,
    pub users: usize,
    pub inter_site_distance_m: f64,
    pub bs_height_m: f64,
    pub ris_height_m: f64,
    pub ms_height_m: f64,
    /// Minimum horizontal distance between a user and the BS of its cell.
    pub min_bs_distance_m: f64,
}

impl Default for SystemConstants {
    fn default() -> Self {
        Self {
            carrier_freq_hz: 3e9,
            bandwidth_hz: 20e6,
            noise_density_dbm_hz: -174.0,
            noise_figure_db: 9.0,
            ris_amplitude: 1.0,
            bs_antennas: 64,
            ris_elements: 64,
            users: 20,
            inter_site_distance_m: 300.0,
            bs_height_m: 25.0,
            ris_height_m: 40.0,
            ms_height_m: 1.5,
            min_bs_distance_m: 10.0,
        }
    }
}

impl SystemConstants {
    /// Small configuration used for fast experiments and CI.
    pub fn desk_scale() -> Self {
        Self {
            bs_antennas: 8,
            ris_elements: 16,
            users: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bs_antennas == 0 || self.ris_elements == 0 || self.users == 0 {
            return Err(RisError::InvalidParameter(
                "bs_antennas, ris_elements and users must all be at least 1".into(),
            ));
        }
        if !(self.ris_amplitude > 0.0 && self.ris_amplitude <= 1.0) {
            return Err(RisError::InvalidParameter(format!(
                "ris_amplitude must lie in (0, 1], got {}",
                self.ris_amplitude
            )));
        }
        let lengths = [
            ("inter_site_distance_m", self.inter_site_distance_m),
            ("bs_height_m", self.bs_height_m),
            ("ris_height_m", self.ris_height_m),
            ("ms_height_m", self.ms_height_m),
            ("bandwidth_hz", self.bandwidth_hz),
            ("carrier_freq_hz", self.carrier_freq_hz),
        ];
        for (name, v) in lengths {
            if !(v > 0.0 && v.is_finite()) {
                return Err(RisError::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.min_bs_distance_m >= 0.0
            && self.min_bs_distance_m < self.inter_site_distance_m / 2.0)
        {
            return Err(RisError::InvalidParameter(format!(
                "min_bs_distance_m must lie in [0, inter_site_distance_m / 2), got {}",
                self.min_bs_distance_m
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathLossKind {
    /// BS to MS distance.
    Direct,
    /// `d(BS, RIS) + d(RIS, MS)`.
    ReflectedSum,
}

/// Linear power attenuation `10^-3.53 / d^3.76`.
///
/// Both link kinds share the same law; for [`PathLossKind::ReflectedSum`] the
/// caller passes the summed two-hop distance.
pub fn path_loss<T: Real>(distance_m: T, _kind: PathLossKind) -> Result<T> {
    let d = to_f64(distance_m);
    if !(d > 0.0) || !d.is_finite() {
        return Err(RisError::Domain(format!(
            "path loss needs a positive finite distance, got {d}"
        )));
    }
    Ok(lit(PATH_LOSS_INTERCEPT / d.powf(PATH_LOSS_EXPONENT)))
}

/// Thermal noise power in watts over the system bandwidth.
pub fn noise_power<T: Real>(constants: &SystemConstants) -> T {
    let dbm = constants.noise_density_dbm_hz
        + 10.0 * constants.bandwidth_hz.log10()
        + constants.noise_figure_db;
    lit(10f64.powf((dbm - 30.0) / 10.0))
}

/// Which BSs serve which users (`I_{i,k}`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Association {
    serves: Vec<Vec<bool>>,
}

impl Association {
    /// Builds an association from a `[bs][user]` flag table.
    pub fn new(serves: Vec<Vec<bool>>) -> Result<Self> {
        let users = serves.first().map(|r| r.len()).unwrap_or(0);
        for row in &serves {
            check_dim("association row", users, row.len())?;
        }
        for k in 0..users {
            if !serves.iter().any(|row| row[k]) {
                return Err(RisError::InvalidParameter(format!(
                    "user {k} is not served by any BS"
                )));
            }
        }
        Ok(Self { serves })
    }

    /// Every user served by every BS.
    pub fn all(num_bs: usize, users: usize) -> Self {
        Self {
            serves: vec![vec![true; users]; num_bs],
        }
    }

    #[inline]
    pub fn serves(&self, bs: usize, user: usize) -> bool {
        self.serves[bs][user]
    }

    pub fn num_bs(&self) -> usize {
        self.serves.len()
    }

    pub fn num_users(&self) -> usize {
        self.serves.first().map(|r| r.len()).unwrap_or(0)
    }

    /// Number of users served by `bs`.
    pub fn load(&self, bs: usize) -> usize {
        self.serves[bs].iter().filter(|&&s| s).count()
    }

    /// Users served by more than one BS.
    pub fn joint_users(&self) -> Vec<usize> {
        (0..self.num_users())
            .filter(|&k| self.serves.iter().filter(|row| row[k]).count() > 1)
            .collect()
    }

    pub fn as_rows(&self) -> &[Vec<bool>] {
        &self.serves
    }
}

/// Geometry and large-scale coefficients of one network drop.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T: Real> {
    pub bs_positions: Vec<[T; 3]>,
    pub ris_position: [T; 3],
    pub user_positions: Vec<[T; 3]>,
    /// Cell (BS index) each user was dropped in.
    pub user_cells: Vec<usize>,
    /// `β_{i,k}` indexed `[bs][user]`.
    pub beta_reflected: Vec<Vec<T>>,
    /// `β^(d)_{i,k}` indexed `[bs][user]`.
    pub beta_direct: Vec<Vec<T>>,
    /// Unset until an association rule is applied.
    pub association: Option<Association>,
}

impl<T: Real> Scenario<T> {
    pub fn num_bs(&self) -> usize {
        self.bs_positions.len()
    }

    pub fn num_users(&self) -> usize {
        self.user_positions.len()
    }

    pub fn with_association(mut self, association: Association) -> Self {
        self.association = Some(association);
        self
    }
}

pub fn distance<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Drops users in a two-cell layout and fills in the path losses.
pub fn generate_scenario<T: Real>(constants: &SystemConstants, rng_seed: u64) -> Result<Scenario<T>> {
    let mut rng = StdRng::seed_from_u64(rng_seed);
    generate_scenario_with(constants, &mut rng)
}

/// BSs sit at `(0, 0)` and `(isd, 0)`, the RIS midway between them. The first
/// `ceil(K/2)` users are dropped uniformly in the disc of radius `isd/2`
/// around BS 0, the others around BS 1, never closer than
/// `min_bs_distance_m` horizontally to their own BS.
pub fn generate_scenario_with<T: Real, R: Rng + ?Sized>(
    constants: &SystemConstants,
    rng: &mut R,
) -> Result<Scenario<T>> {
    constants.validate()?;
    let isd = constants.inter_site_distance_m;
    let bs = [
        [0.0, 0.0, constants.bs_height_m],
        [isd, 0.0, constants.bs_height_m],
    ];
    let ris = [isd / 2.0, 0.0, constants.ris_height_m];
    let radius = isd / 2.0;
    let r0 = constants.min_bs_distance_m;

    let k = constants.users;
    let first_cell = k.div_ceil(2);
    let mut users = Vec::with_capacity(k);
    let mut cells = Vec::with_capacity(k);
    for u in 0..k {
        let cell = usize::from(u >= first_cell);
        let area: f64 = rng.random();
        let r = (area * (radius * radius - r0 * r0) + r0 * r0).sqrt();
        let theta: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        users.push([
            bs[cell][0] + r * theta.cos(),
            bs[cell][1] + r * theta.sin(),
            constants.ms_height_m,
        ]);
        cells.push(cell);
    }

    let mut beta_reflected = vec![vec![T::zero(); k]; 2];
    let mut beta_direct = vec![vec![T::zero(); k]; 2];
    for (i, b) in bs.iter().enumerate() {
        let d_bs_ris = distance(b, &ris);
        for (u, p) in users.iter().enumerate() {
            let d_ris_ms = distance(&ris, p);
            beta_reflected[i][u] = path_loss(lit::<T>(d_bs_ris + d_ris_ms), PathLossKind::ReflectedSum)?;
            beta_direct[i][u] = path_loss(lit::<T>(distance(b, p)), PathLossKind::Direct)?;
        }
    }

    let conv = |p: [f64; 3]| [lit::<T>(p[0]), lit::<T>(p[1]), lit::<T>(p[2])];
    Ok(Scenario {
        bs_positions: bs.iter().copied().map(conv).collect(),
        ris_position: conv(ris),
        user_positions: users.into_iter().map(conv).collect(),
        user_cells: cells,
        beta_reflected,
        beta_direct,
        association: None,
    })
}

/// RIS reflection state: amplitude `ρ` and phases `φ̃` in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct RisConfig<T: Real> {
    pub rho: T,
    pub phases: Vec<T>,
}

impl<T: Real> RisConfig<T> {
    pub fn new(rho: T, phases: Vec<T>) -> Self {
        Self { rho, phases }
    }

    pub fn zeros(elements: usize, rho: T) -> Self {
        Self::new(rho, vec![T::zero(); elements])
    }

    /// Phases drawn i.i.d. uniform on `[-π, π)`.
    pub fn random<R: Rng + ?Sized>(elements: usize, rho: T, rng: &mut R) -> Self {
        let phases = (0..elements)
            .map(|_| lit::<T>((rng.random::<f64>() * 2.0 - 1.0) * std::f64::consts::PI))
            .collect();
        Self::new(rho, phases)
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    /// Reflection vector `φ` with entries `ρ e^{jφ̃_n}`.
    pub fn vector(&self) -> CVector<T> {
        CVector::from_iterator(self.len(), self.phases.iter().map(|&p| cis(p) * self.rho))
    }

    /// Same configuration with every phase wrapped into `[-π, π]`.
    pub fn canonical(&self) -> Self {
        Self::new(self.rho, self.phases.iter().map(|&p| crate::scalar::wrap_phase(p)).collect())
    }
}

/// Per-BS collection of cascade matrices and direct vectors, one per user.
///
/// Holds either true channels or their estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSet<T: Real> {
    /// `D_k`, `N_B × N_R`.
    pub cascade: Vec<CMatrix<T>>,
    /// `h^(d)_k`, length `N_B`.
    pub direct: Vec<CVector<T>>,
}

impl<T: Real> LinkSet<T> {
    pub fn new(cascade: Vec<CMatrix<T>>, direct: Vec<CVector<T>>) -> Result<Self> {
        check_dim("link set users", cascade.len(), direct.len())?;
        if let Some(d0) = cascade.first() {
            for (d, h) in cascade.iter().zip(&direct) {
                check_dim("cascade rows", d0.nrows(), d.nrows())?;
                check_dim("cascade columns", d0.ncols(), d.ncols())?;
                check_dim("direct length", d0.nrows(), h.len())?;
            }
        }
        Ok(Self { cascade, direct })
    }

    pub fn zeros(users: usize, bs_antennas: usize, ris_elements: usize) -> Self {
        Self {
            cascade: vec![CMatrix::zeros(bs_antennas, ris_elements); users],
            direct: vec![CVector::zeros(bs_antennas); users],
        }
    }

    pub fn num_users(&self) -> usize {
        self.cascade.len()
    }

    pub fn bs_antennas(&self) -> usize {
        self.direct.first().map(|h| h.len()).unwrap_or(0)
    }

    pub fn ris_elements(&self) -> usize {
        self.cascade.first().map(|d| d.ncols()).unwrap_or(0)
    }

    /// Composite channel of `user` under `cfg`.
    pub fn composite(&self, user: usize, cfg: &RisConfig<T>) -> Result<CVector<T>> {
        composite_channel(&self.cascade[user], &self.direct[user], cfg)
    }
}

/// One fading realization for every BS and user.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet<T: Real> {
    /// Unit-variance fast fading `H̃_i`, `N_B × N_R`.
    pub ris_to_bs: Vec<CMatrix<T>>,
    /// Unit-variance fast fading `h̃_k`, length `N_R`.
    pub user_to_ris: Vec<CVector<T>>,
    /// `β_{i,k}`, copied from the scenario.
    pub beta_reflected: Vec<Vec<T>>,
    /// Path-loss scaled cascades and direct links, one [`LinkSet`] per BS.
    pub links: Vec<LinkSet<T>>,
}

impl<T: Real> ChannelSet<T> {
    /// Reflected channel evaluated in its product form `√β H̃ Φ h̃`.
    pub fn reflected(&self, bs: usize, user: usize, cfg: &RisConfig<T>) -> CVector<T> {
        let phi = cfg.vector();
        let scaled = self.user_to_ris[user].component_mul(&phi);
        (&self.ris_to_bs[bs] * scaled) * real(self.beta_reflected[bs][user].sqrt())
    }
}

/// Circularly-symmetric complex Gaussian sample with the given variance.
pub fn complex_gaussian<T: Real, R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Cplx<T> {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Cplx::new(lit(re * s), lit(im * s))
}

pub(crate) fn gaussian_vector<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize, variance: f64) -> CVector<T> {
    DVector::from_fn(n, |_, _| complex_gaussian(rng, variance))
}

pub(crate) fn gaussian_matrix<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    variance: f64,
) -> CMatrix<T> {
    DMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng, variance))
}

/// Draws i.i.d. `CN(0, 1)` fast fading and assembles the scaled links.
///
/// Draw order is fixed (all `H̃_i`, then all `h̃_k`, then `h̃^(d)_{i,k}` BS by
/// BS) so a seeded generator reproduces the set bit for bit.
pub fn sample_fading<T: Real, R: Rng + ?Sized>(
    scenario: &Scenario<T>,
    constants: &SystemConstants,
    rng: &mut R,
) -> ChannelSet<T> {
    let nb = constants.bs_antennas;
    let nr = constants.ris_elements;
    let k = scenario.num_users();
    let num_bs = scenario.num_bs();

    let ris_to_bs: Vec<CMatrix<T>> = (0..num_bs).map(|_| gaussian_matrix(rng, nb, nr, 1.0)).collect();
    let user_to_ris: Vec<CVector<T>> = (0..k).map(|_| gaussian_vector(rng, nr, 1.0)).collect();
    let mut links = Vec::with_capacity(num_bs);
    for i in 0..num_bs {
        let direct = (0..k)
            .map(|u| gaussian_vector::<T, R>(rng, nb, 1.0) * real(scenario.beta_direct[i][u].sqrt()))
            .collect();
        let cascade = (0..k)
            .map(|u| cascade_matrix(&ris_to_bs[i], &user_to_ris[u], scenario.beta_reflected[i][u]))
            .collect();
        links.push(LinkSet { cascade, direct });
    }
    ChannelSet {
        ris_to_bs,
        user_to_ris,
        beta_reflected: scenario.beta_reflected.clone(),
        links,
    }
}

/// `D(m, n) = √β · H(m, n) · h(n)`.
pub fn cascade_matrix<T: Real>(ris_to_bs: &CMatrix<T>, user_to_ris: &CVector<T>, beta: T) -> CMatrix<T> {
    let g = real(beta.sqrt());
    CMatrix::from_fn(ris_to_bs.nrows(), ris_to_bs.ncols(), |m, n| {
        ris_to_bs[(m, n)] * user_to_ris[n] * g
    })
}

/// `D φ + h^(d)` with `φ_n = ρ e^{jφ̃_n}`.
pub fn composite_channel<T: Real>(
    cascade: &CMatrix<T>,
    direct: &CVector<T>,
    cfg: &RisConfig<T>,
) -> Result<CVector<T>> {
    check_dim("composite channel: cascade rows vs direct", cascade.nrows(), direct.len())?;
    check_dim("composite channel: cascade columns vs RIS", cascade.ncols(), cfg.len())?;
    Ok(cascade * cfg.vector() + direct)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn path_loss_reference_points() {
        // 10^-3.53 / 100^3.76 = 10^(-3.53 - 7.52)
        let b: f64 = path_loss(100.0, PathLossKind::Direct).unwrap();
        assert_relative_eq!(b, 10f64.powf(-11.05), max_relative = 1e-12);
        assert_relative_eq!(b, 8.91e-12, max_relative = 1e-3);
        let b1: f64 = path_loss(1.0, PathLossKind::ReflectedSum).unwrap();
        assert_relative_eq!(b1, 10f64.powf(-3.53), max_relative = 1e-14);
        let near: f64 = path_loss(100.0, PathLossKind::Direct).unwrap();
        let far: f64 = path_loss(200.0, PathLossKind::Direct).unwrap();
        assert!(far < near);
    }

    #[test]
    fn path_loss_rejects_non_positive_distance() {
        assert!(matches!(path_loss(0.0f64, PathLossKind::Direct), Err(RisError::Domain(_))));
        assert!(path_loss(-3.0f64, PathLossKind::ReflectedSum).is_err());
        assert!(path_loss(f64::NAN, PathLossKind::Direct).is_err());
    }

    #[test]
    fn noise_power_reference_points() {
        let c = SystemConstants::default();
        let p: f64 = noise_power(&c);
        // -174 + 10 log10(20e6) + 9 = -91.9897 dBm
        assert_relative_eq!(p, 10f64.powf((-91.989_700_043_360_2 - 30.0) / 10.0), max_relative = 1e-12);
        assert_relative_eq!(p, 6.3246e-13, max_relative = 1e-4);

        let c = SystemConstants {
            noise_figure_db: 0.0,
            bandwidth_hz: 1.0,
            ..SystemConstants::default()
        };
        let p: f64 = noise_power(&c);
        assert_relative_eq!(p, 10f64.powf(-20.4), max_relative = 1e-12);

        let doubled = SystemConstants {
            bandwidth_hz: 40e6,
            ..SystemConstants::default()
        };
        let ratio_db = 10.0 * (noise_power::<f64>(&doubled) / noise_power::<f64>(&SystemConstants::default())).log10();
        assert_relative_eq!(ratio_db, 10.0 * 2f64.log10(), max_relative = 1e-12);
    }

    #[test]
    fn scenario_is_deterministic_and_well_formed() {
        let c = SystemConstants::desk_scale();
        let a: Scenario<f64> = generate_scenario(&c, 7).unwrap();
        let b: Scenario<f64> = generate_scenario(&c, 7).unwrap();
        assert_eq!(a, b);
        let d0 = distance(&a.bs_positions[0], &a.ris_position);
        let d1 = distance(&a.bs_positions[1], &a.ris_position);
        assert_relative_eq!(d0, d1, max_relative = 1e-15);
        for i in 0..2 {
            for k in 0..c.users {
                assert!(a.beta_direct[i][k] > 0.0 && a.beta_direct[i][k] <= PATH_LOSS_INTERCEPT);
                assert!(a.beta_reflected[i][k] > 0.0 && a.beta_reflected[i][k] <= 1.0);
            }
        }
        assert!(a.association.is_none());
        assert_eq!(a.user_cells, vec![0, 0, 1, 1]);
        for (p, &cell) in a.user_positions.iter().zip(&a.user_cells) {
            let dx = p[0] - a.bs_positions[cell][0];
            let dy = p[1] - a.bs_positions[cell][1];
            let r = (dx * dx + dy * dy).sqrt();
            assert!(r >= c.min_bs_distance_m - 1e-9 && r <= c.inter_site_distance_m / 2.0 + 1e-9);
        }
    }

    #[test]
    fn invalid_constants_are_rejected() {
        let c = SystemConstants {
            ris_amplitude: 1.5,
            ..SystemConstants::desk_scale()
        };
        assert!(generate_scenario::<f64>(&c, 0).is_err());
        let c = SystemConstants {
            users: 0,
            ..SystemConstants::desk_scale()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn fading_respects_cascade_identity() {
        let c = SystemConstants::desk_scale();
        let s: Scenario<f64> = generate_scenario(&c, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ch = sample_fading(&s, &c, &mut rng);
        let cfg = RisConfig::random(c.ris_elements, 0.8, &mut rng);
        for i in 0..2 {
            for k in 0..c.users {
                let d = &ch.links[i].cascade[k];
                let g = s.beta_reflected[i][k].sqrt();
                for m in 0..c.bs_antennas {
                    for n in 0..c.ris_elements {
                        let expect = ch.ris_to_bs[i][(m, n)] * ch.user_to_ris[k][n] * g;
                        assert_eq!(d[(m, n)], expect);
                    }
                }
                let lhs = ch.reflected(i, k, &cfg);
                let rhs = d * cfg.vector();
                assert!((lhs - &rhs).norm() <= 1e-12 * rhs.norm());
            }
        }
    }

    #[test]
    fn fading_is_reproducible() {
        let c = SystemConstants::desk_scale();
        let s: Scenario<f64> = generate_scenario(&c, 3).unwrap();
        let a = sample_fading(&s, &c, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_fading(&s, &c, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn composite_channel_special_configurations() {
        let c = SystemConstants::desk_scale();
        let s: Scenario<f64> = generate_scenario(&c, 1).unwrap();
        let ch = sample_fading(&s, &c, &mut ChaCha8Rng::seed_from_u64(2));
        let link = &ch.links[0];
        let identity = RisConfig::zeros(c.ris_elements, 1.0);
        let got = link.composite(0, &identity).unwrap();
        let hh = &ch.ris_to_bs[0] * &ch.user_to_ris[0] * real(s.beta_reflected[0][0].sqrt()) + &link.direct[0];
        assert!((got - hh.clone()).norm() <= 1e-12 * hh.norm());

        let absorbing = RisConfig::zeros(c.ris_elements, 0.0);
        assert_eq!(link.composite(0, &absorbing).unwrap(), link.direct[0]);

        let short = RisConfig::zeros(c.ris_elements - 1, 1.0);
        assert!(matches!(
            link.composite(0, &short),
            Err(RisError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn config_vector_has_constant_modulus() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = RisConfig::<f32>::random(32, 0.7, &mut rng);
        for z in cfg.vector().iter() {
            assert!((z.norm() - 0.7).abs() < 1e-6);
        }
        let wrapped = RisConfig::new(1.0f64, vec![7.0, -9.0, 3.0]).canonical();
        assert!(wrapped.phases.iter().all(|p| p.abs() <= std::f64::consts::PI));
    }

    #[test]
    fn association_requires_coverage() {
        assert!(Association::new(vec![vec![true, false], vec![false, false]]).is_err());
        let a = Association::new(vec![vec![true, true], vec![false, true]]).unwrap();
        assert_eq!(a.joint_users(), vec![1]);
        assert_eq!(a.load(0), 2);
    }
}
