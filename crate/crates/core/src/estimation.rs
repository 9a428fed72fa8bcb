//! Uplink pilot training over several RIS configurations and linear
//! estimation of the cascade matrices and direct channels seen by one BS.
//!
//! The unknown vector stacks, user by user, `vec(D_k)` (column-major) followed
//! by `h^(d)_k`. Observations stack, configuration by configuration, the
//! projections `Y^(q) p_k / √η_k` of every user.
//!
//! With orthogonal pilots the stacked system is block diagonal across users,
//! and inside each user block every BS antenna sees the same
//! `Q × (N_R + 1)` configuration matrix. The estimators exploit that
//! structure; the dense stacked matrix is still available for small systems
//! and for non-orthogonal pilot books.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::channel::{gaussian_matrix, LinkSet, RisConfig, Scenario};
use crate::error::{check_dim, Result, RisError};
use crate::scalar::{cis, lit, real, to_f64, CMatrix, CVector, Cplx, Real};

/// Condition number above which a training system is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// Tolerance on `|p_j^H p_k|` for treating a pilot book as orthogonal.
const ORTHOGONALITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    /// Least squares over `N_R + 1` configurations.
    Ls,
    /// Linear MMSE over `N_R + 1` configurations.
    MmseQ,
    /// Linear MMSE from a single random configuration.
    Mmse1,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::Ls, EstimatorKind::Mmse1, EstimatorKind::MmseQ];

    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Ls => "LS",
            EstimatorKind::MmseQ => "MMSEQ",
            EstimatorKind::Mmse1 => "MMSE1",
        }
    }

    /// Number of RIS configurations used during training.
    pub fn configurations(self, ris_elements: usize) -> usize {
        match self {
            EstimatorKind::Ls | EstimatorKind::MmseQ => ris_elements + 1,
            EstimatorKind::Mmse1 => 1,
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Training sequences (columns of `pilots`) and per-user training power
/// `η_k = τ_p η̄_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBook<T: Real> {
    pub pilots: CMatrix<T>,
    pub powers: Vec<T>,
}

impl<T: Real> PilotBook<T> {
    /// Wraps arbitrary sequences; every column must have unit energy.
    pub fn from_sequences(pilots: CMatrix<T>, powers: Vec<T>) -> Result<Self> {
        check_dim("pilot powers", pilots.ncols(), powers.len())?;
        for (k, col) in pilots.column_iter().enumerate() {
            let e = to_f64(col.iter().fold(T::zero(), |a, z| a + z.norm_sqr()));
            if (e - 1.0).abs() > 1e-6 {
                return Err(RisError::InvalidParameter(format!(
                    "pilot {k} has energy {e}, expected 1"
                )));
            }
        }
        if powers.iter().any(|&p| p <= T::zero()) {
            return Err(RisError::InvalidParameter("pilot powers must be positive".into()));
        }
        Ok(Self { pilots, powers })
    }

    pub fn num_users(&self) -> usize {
        self.pilots.ncols()
    }

    pub fn length(&self) -> usize {
        self.pilots.nrows()
    }

    /// `p_{j,k} = p_j^H p_k`.
    pub fn cross(&self, j: usize, k: usize) -> Cplx<T> {
        self.pilots.column(j).dotc(&self.pilots.column(k))
    }

    pub fn is_orthogonal(&self) -> bool {
        let k = self.num_users();
        (0..k).all(|a| (0..k).all(|b| a == b || to_f64(self.cross(a, b).norm_sqr()).sqrt() < ORTHOGONALITY_TOL))
    }
}

/// Orthogonal DFT pilot book of length `length ≥ users`, each user
/// transmitting `power_per_symbol` watts per training symbol.
pub fn generate_pilot_book<T: Real>(users: usize, length: usize, power_per_symbol: T) -> Result<PilotBook<T>> {
    if users == 0 {
        return Err(RisError::InvalidParameter("pilot book needs at least one user".into()));
    }
    if length < users {
        return Err(RisError::InvalidParameter(format!(
            "orthogonal pilots need length >= users, got length {length} for {users} users"
        )));
    }
    if power_per_symbol <= T::zero() {
        return Err(RisError::InvalidParameter("pilot power must be positive".into()));
    }
    let scale = lit::<T>(1.0 / (length as f64).sqrt());
    let pilots = DMatrix::from_fn(length, users, |t, k| {
        let angle = -2.0 * std::f64::consts::PI * (t * k) as f64 / length as f64;
        cis(lit::<T>(angle)) * scale
    });
    let eta = power_per_symbol * lit(length as f64);
    Ok(PilotBook {
        pilots,
        powers: vec![eta; users],
    })
}

/// RIS configurations used during training.
///
/// `Q = 1` draws one uniformly random configuration. For `Q ≥ 2` element `n`
/// of configuration `q` gets phase `-2π (n + 1) q / Q`, i.e. rows `1..=N_R` of
/// a `Q`-point DFT; stacking them over a row of ones gives a matrix with
/// orthogonal rows, which is invertible when `Q = N_R + 1`.
pub fn generate_training_configs<T: Real, R: Rng + ?Sized>(
    ris_elements: usize,
    configurations: usize,
    rho: T,
    rng: &mut R,
) -> Result<Vec<RisConfig<T>>> {
    match configurations {
        0 => Err(RisError::InvalidParameter("at least one training configuration is required".into())),
        1 => Ok(vec![RisConfig::random(ris_elements, rho, rng)]),
        q => Ok((0..q)
            .map(|c| {
                let phases = (0..ris_elements)
                    .map(|n| {
                        let k = ((n + 1) * c) % q;
                        crate::scalar::wrap_phase(lit::<T>(-2.0 * std::f64::consts::PI * k as f64 / q as f64))
                    })
                    .collect();
                RisConfig::new(rho, phases)
            })
            .collect()),
    }
}

/// Received training blocks `Y^(q)` (`N_B × τ_p`), one per configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingObservation<T: Real> {
    pub received: Vec<CMatrix<T>>,
    pub configs: Vec<RisConfig<T>>,
}

/// `Y^(q) = Σ_k √η_k (D_k φ^(q) + h^(d)_k) p_k^H + W^(q)` with
/// `W^(q)` entries i.i.d. `CN(0, noise_var)`.
pub fn simulate_training<T: Real, R: Rng + ?Sized>(
    links: &LinkSet<T>,
    pilots: &PilotBook<T>,
    configs: &[RisConfig<T>],
    noise_var: T,
    rng: &mut R,
) -> Result<TrainingObservation<T>> {
    check_dim("training users", links.num_users(), pilots.num_users())?;
    if configs.is_empty() {
        return Err(RisError::InvalidParameter("at least one training configuration is required".into()));
    }
    let nb = links.bs_antennas();
    let tau = pilots.length();
    let mut received = Vec::with_capacity(configs.len());
    for cfg in configs {
        check_dim("training configuration length", links.ris_elements(), cfg.len())?;
        let mut y: CMatrix<T> = gaussian_matrix(rng, nb, tau, to_f64(noise_var));
        for k in 0..links.num_users() {
            let c = links.composite(k, cfg)? * real(pilots.powers[k].sqrt());
            y += c * pilots.pilots.column(k).adjoint();
        }
        received.push(y);
    }
    Ok(TrainingObservation {
        received,
        configs: configs.to_vec(),
    })
}

/// Stacked linear model `ỹ_Q = Ã_Q d + w̃_Q` for one BS.
///
/// The dense `Ã_Q` is only built on request: it has `(K N_B Q)` rows and
/// `K N_B (N_R + 1)` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem<T: Real> {
    /// `ȳ_k^(q)` indexed `[q][k]`.
    projections: Vec<Vec<CVector<T>>>,
    configs: Vec<RisConfig<T>>,
    /// `p_{j,k}` stored at `(j, k)`.
    cross: CMatrix<T>,
    powers: Vec<T>,
    bs_antennas: usize,
    ris_elements: usize,
}

/// Projects every `Y^(q)` on each pilot and records the structure needed to
/// rebuild `Ã_Q`.
pub fn build_stacked_system<T: Real>(obs: &TrainingObservation<T>, pilots: &PilotBook<T>) -> Result<StackedSystem<T>> {
    check_dim("observation count", obs.configs.len(), obs.received.len())?;
    let first = obs
        .received
        .first()
        .ok_or_else(|| RisError::InvalidParameter("empty training observation".into()))?;
    let nb = first.nrows();
    let nr = obs.configs[0].len();
    let k = pilots.num_users();
    let mut projections = Vec::with_capacity(obs.received.len());
    for (y, cfg) in obs.received.iter().zip(&obs.configs) {
        check_dim("received block rows", nb, y.nrows())?;
        check_dim("received block length", pilots.length(), y.ncols())?;
        check_dim("configuration length", nr, cfg.len())?;
        projections.push(
            (0..k)
                .map(|u| (y * pilots.pilots.column(u)) * real(T::one() / pilots.powers[u].sqrt()))
                .collect(),
        );
    }
    let cross = CMatrix::from_fn(k, k, |a, b| pilots.cross(a, b));
    Ok(StackedSystem {
        projections,
        configs: obs.configs.clone(),
        cross,
        powers: pilots.powers.clone(),
        bs_antennas: nb,
        ris_elements: nr,
    })
}

impl<T: Real> StackedSystem<T> {
    pub fn num_users(&self) -> usize {
        self.powers.len()
    }

    pub fn num_configs(&self) -> usize {
        self.configs.len()
    }

    pub fn bs_antennas(&self) -> usize {
        self.bs_antennas
    }

    pub fn ris_elements(&self) -> usize {
        self.ris_elements
    }

    pub fn rows(&self) -> usize {
        self.num_users() * self.bs_antennas * self.num_configs()
    }

    pub fn unknowns(&self) -> usize {
        self.num_users() * self.bs_antennas * (self.ris_elements + 1)
    }

    pub fn is_orthogonal(&self) -> bool {
        let k = self.num_users();
        (0..k).all(|a| (0..k).all(|b| a == b || to_f64(self.cross[(a, b)].norm_sqr()).sqrt() < ORTHOGONALITY_TOL))
    }

    /// `ỹ_Q`: projections stacked over users, then configurations.
    pub fn observation(&self) -> CVector<T> {
        let mut y = CVector::zeros(self.rows());
        let nb = self.bs_antennas;
        let k = self.num_users();
        for (q, per_user) in self.projections.iter().enumerate() {
            for (u, v) in per_user.iter().enumerate() {
                y.rows_mut((q * k + u) * nb, nb).copy_from(v);
            }
        }
        y
    }

    /// Configuration matrix `B` (`Q × (N_R + 1)`): row `q` is `[φ^(q)ᵀ, 1]`.
    pub fn config_matrix(&self) -> CMatrix<T> {
        let nr = self.ris_elements;
        let mut b = CMatrix::zeros(self.num_configs(), nr + 1);
        for (q, cfg) in self.configs.iter().enumerate() {
            let phi = cfg.vector();
            for n in 0..nr {
                b[(q, n)] = phi[n];
            }
            b[(q, nr)] = real(T::one());
        }
        b
    }

    /// Dense `Ã_Q`; block `(k, j)` of configuration `q` is
    /// `√(η_j/η_k) p_{j,k} [φ^(q)ᵀ ⊗ I_{N_B}, I_{N_B}]`.
    pub fn dense_matrix(&self) -> CMatrix<T> {
        let nb = self.bs_antennas;
        let nr = self.ris_elements;
        let k = self.num_users();
        let width = nb * (nr + 1);
        let mut a = CMatrix::zeros(self.rows(), self.unknowns());
        for (q, cfg) in self.configs.iter().enumerate() {
            let phi = cfg.vector();
            for row_user in 0..k {
                for col_user in 0..k {
                    let s = self.cross[(col_user, row_user)]
                        * real((self.powers[col_user] / self.powers[row_user]).sqrt());
                    if s.norm_sqr() == T::zero() {
                        continue;
                    }
                    let r0 = (q * k + row_user) * nb;
                    let c0 = col_user * width;
                    for m in 0..nb {
                        for n in 0..nr {
                            a[(r0 + m, c0 + n * nb + m)] = s * phi[n];
                        }
                        a[(r0 + m, c0 + nr * nb + m)] = s;
                    }
                }
            }
        }
        a
    }

    /// Covariance of `w̃_Q` when the training noise has variance `noise_var`:
    /// block `(k, j)` of each configuration is `σ² p_j^H p_k / √(η_k η_j) I`.
    pub fn noise_covariance(&self, noise_var: T) -> CMatrix<T> {
        let nb = self.bs_antennas;
        let k = self.num_users();
        let mut c = CMatrix::zeros(self.rows(), self.rows());
        for q in 0..self.num_configs() {
            for a in 0..k {
                for b in 0..k {
                    let v = self.cross[(b, a)] * real(noise_var / (self.powers[a] * self.powers[b]).sqrt());
                    let r0 = (q * k + a) * nb;
                    let c0 = (q * k + b) * nb;
                    for m in 0..nb {
                        c[(r0 + m, c0 + m)] = v;
                    }
                }
            }
        }
        c
    }

    /// Per-user observation matrix `[ȳ_k^(1), …, ȳ_k^(Q)]` (`N_B × Q`).
    fn user_block(&self, user: usize) -> CMatrix<T> {
        let mut y = CMatrix::zeros(self.bs_antennas, self.num_configs());
        for (q, per_user) in self.projections.iter().enumerate() {
            y.set_column(q, &per_user[user]);
        }
        y
    }

    /// Returns a copy whose observations are multiplied by `scale`.
    pub fn scaled(&self, scale: Cplx<T>) -> Self {
        let mut out = self.clone();
        for per_user in &mut out.projections {
            for v in per_user {
                *v *= scale;
            }
        }
        out
    }
}

/// Stacks the true channels into the unknown vector `d`.
pub fn pack_unknowns<T: Real>(links: &LinkSet<T>) -> CVector<T> {
    let nb = links.bs_antennas();
    let nr = links.ris_elements();
    let width = nb * (nr + 1);
    let mut d = CVector::zeros(links.num_users() * width);
    for (u, (dm, h)) in links.cascade.iter().zip(&links.direct).enumerate() {
        let base = u * width;
        for n in 0..nr {
            for m in 0..nb {
                d[base + n * nb + m] = dm[(m, n)];
            }
        }
        d.rows_mut(base + nr * nb, nb).copy_from(h);
    }
    d
}

/// Inverse of [`pack_unknowns`].
pub fn unpack_unknowns<T: Real>(d: &CVector<T>, users: usize, bs_antennas: usize, ris_elements: usize) -> Result<LinkSet<T>> {
    let width = bs_antennas * (ris_elements + 1);
    check_dim("unknown vector length", users * width, d.len())?;
    let mut cascade = Vec::with_capacity(users);
    let mut direct = Vec::with_capacity(users);
    for u in 0..users {
        let base = u * width;
        cascade.push(CMatrix::from_fn(bs_antennas, ris_elements, |m, n| d[base + n * bs_antennas + m]));
        direct.push(CVector::from_fn(bs_antennas, |m, _| d[base + ris_elements * bs_antennas + m]));
    }
    LinkSet::new(cascade, direct)
}

/// Estimated links of one BS tagged with the estimator that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSet<T: Real> {
    pub links: LinkSet<T>,
    pub method: EstimatorKind,
}

fn condition_number<T: Real>(singular_values: &DVector<T>) -> f64 {
    let max = singular_values.iter().fold(0.0f64, |a, &s| a.max(to_f64(s)));
    let min = singular_values.iter().fold(f64::INFINITY, |a, &s| a.min(to_f64(s)));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Least-squares solve of `matrix x = rhs` (columns of `rhs` are independent
/// right-hand sides); square systems reduce to plain inversion.
fn least_squares<T: Real>(matrix: CMatrix<T>, rhs: &CMatrix<T>, what: &str) -> Result<CMatrix<T>> {
    let (rows, cols) = matrix.shape();
    if rows < cols {
        return Err(RisError::Singular(format!(
            "{what}: {rows} observations for {cols} unknowns per antenna; LS needs at least N_R + 1 = {cols} distinct RIS configurations"
        )));
    }
    let svd = matrix.svd(true, true);
    let cond = condition_number(&svd.singular_values);
    if cond > SINGULAR_CONDITION {
        return Err(RisError::Singular(format!(
            "{what}: condition number {cond:.3e} exceeds {SINGULAR_CONDITION:e}; the training configurations are not linearly independent"
        )));
    }
    svd.solve(rhs, T::zero()).map_err(|e| RisError::Singular(format!("{what}: {e}")))
}

fn unpack_transposed<T: Real>(xt: &CMatrix<T>, nb: usize, nr: usize) -> (CMatrix<T>, CVector<T>) {
    let d = CMatrix::from_fn(nb, nr, |m, n| xt[(n, m)]);
    let h = CVector::from_fn(nb, |m, _| xt[(nr, m)]);
    (d, h)
}

/// LS estimate `d̂ = Ã_Q⁻¹ ỹ_Q`; overdetermined systems are solved in the
/// least-squares sense.
pub fn estimate_ls<T: Real>(sys: &StackedSystem<T>) -> Result<EstimateSet<T>> {
    let links = if sys.is_orthogonal() {
        let b = sys.config_matrix();
        let nb = sys.bs_antennas;
        let nr = sys.ris_elements;
        let svd = b.clone().svd(true, true);
        let cond = condition_number(&svd.singular_values);
        if b.nrows() < b.ncols() || cond > SINGULAR_CONDITION {
            // re-run through the checked path for the diagnostic
            least_squares(b, &CMatrix::zeros(sys.num_configs(), 1), "LS training system")?;
            unreachable!("singular configuration matrix passed the LS check");
        }
        let mut cascade = Vec::with_capacity(sys.num_users());
        let mut direct = Vec::with_capacity(sys.num_users());
        for u in 0..sys.num_users() {
            let gain = sys.cross[(u, u)];
            let yt = sys.user_block(u).transpose() * (real(T::one()) / gain);
            let xt = svd
                .solve(&yt, T::zero())
                .map_err(|e| RisError::Singular(format!("LS training system: {e}")))?;
            let (d, h) = unpack_transposed(&xt, nb, nr);
            cascade.push(d);
            direct.push(h);
        }
        LinkSet::new(cascade, direct)?
    } else {
        estimate_ls_dense(sys)?
    };
    Ok(EstimateSet {
        links,
        method: EstimatorKind::Ls,
    })
}

/// LS estimate through the dense stacked matrix. Only viable for small
/// systems; used for non-orthogonal pilots.
pub fn estimate_ls_dense<T: Real>(sys: &StackedSystem<T>) -> Result<LinkSet<T>> {
    let a = sys.dense_matrix();
    let y = sys.observation();
    let rhs = CMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let x = least_squares(a, &rhs, "LS stacked system")?;
    unpack_unknowns(&x.column(0).into_owned(), sys.num_users(), sys.bs_antennas, sys.ris_elements)
}

/// Diagonal prior covariance of the unknowns at one BS: `β_k` for the
/// `N_B N_R` cascade entries of user `k`, `β_{k,d}` for its `N_B` direct
/// entries.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorCovariance<T: Real> {
    pub reflected: Vec<T>,
    pub direct: Vec<T>,
}

impl<T: Real> PriorCovariance<T> {
    pub fn new(reflected: Vec<T>, direct: Vec<T>) -> Result<Self> {
        check_dim("prior users", reflected.len(), direct.len())?;
        if reflected.iter().chain(&direct).any(|&b| b <= T::zero()) {
            return Err(RisError::InvalidParameter("prior variances must be positive".into()));
        }
        Ok(Self { reflected, direct })
    }

    pub fn num_users(&self) -> usize {
        self.reflected.len()
    }

    /// Diagonal of `R_d^(k)`, length `N_B (N_R + 1)`.
    pub fn user_diagonal(&self, user: usize, bs_antennas: usize, ris_elements: usize) -> Vec<T> {
        let mut out = vec![self.reflected[user]; bs_antennas * ris_elements];
        out.extend(std::iter::repeat_n(self.direct[user], bs_antennas));
        out
    }

    /// Diagonal of the full block-diagonal `R_d`.
    pub fn diagonal(&self, bs_antennas: usize, ris_elements: usize) -> Vec<T> {
        (0..self.num_users())
            .flat_map(|u| self.user_diagonal(u, bs_antennas, ris_elements))
            .collect()
    }
}

/// Prior for BS `bs` from the scenario's large-scale coefficients.
pub fn build_prior_covariance<T: Real>(scenario: &Scenario<T>, bs: usize) -> Result<PriorCovariance<T>> {
    if bs >= scenario.num_bs() {
        return Err(RisError::InvalidParameter(format!(
            "BS index {bs} out of range for {} BSs",
            scenario.num_bs()
        )));
    }
    PriorCovariance::new(scenario.beta_reflected[bs].clone(), scenario.beta_direct[bs].clone())
}

/// Linear MMSE estimate `d̂ = E_Q^H ỹ_Q`,
/// `E_Q = (Ã_Q R_d Ã_Q^H + C_w)⁻¹ Ã_Q R_d`.
///
/// `C_w` is the covariance of the projected training noise: for orthogonal
/// unit-energy pilots it is `σ²_w / η_k` on user `k`'s rows, which reduces to
/// `σ²_w I` when `η_k = 1`.
pub fn estimate_mmse<T: Real>(sys: &StackedSystem<T>, prior: &PriorCovariance<T>, noise_var: T) -> Result<EstimateSet<T>> {
    check_dim("prior users", sys.num_users(), prior.num_users())?;
    if noise_var < T::zero() {
        return Err(RisError::InvalidParameter("noise variance must be non-negative".into()));
    }
    let method = if sys.num_configs() == 1 {
        EstimatorKind::Mmse1
    } else {
        EstimatorKind::MmseQ
    };
    let links = if sys.is_orthogonal() {
        estimate_mmse_structured(sys, prior, noise_var)?
    } else {
        estimate_mmse_dense(sys, prior, noise_var)?
    };
    Ok(EstimateSet { links, method })
}

fn estimate_mmse_structured<T: Real>(sys: &StackedSystem<T>, prior: &PriorCovariance<T>, noise_var: T) -> Result<LinkSet<T>> {
    let b = sys.config_matrix();
    let nb = sys.bs_antennas;
    let nr = sys.ris_elements;
    let q = sys.num_configs();
    let mut cascade = Vec::with_capacity(sys.num_users());
    let mut direct = Vec::with_capacity(sys.num_users());
    for u in 0..sys.num_users() {
        let gain = sys.cross[(u, u)];
        // ȳ = gain (B x) + w̄, with w̄ ~ CN(0, σ² p_kk / η_k)
        let a = &b * gain;
        let r: Vec<T> = (0..=nr)
            .map(|n| if n < nr { prior.reflected[u] } else { prior.direct[u] })
            .collect();
        let mut ra_h = a.adjoint();
        for (n, &rv) in r.iter().enumerate() {
            ra_h.row_mut(n).scale_mut(rv);
        }
        let noise = noise_var * gain.re / sys.powers[u];
        let mut s = &a * &ra_h;
        for i in 0..q {
            s[(i, i)] += real(noise);
        }
        let yt = sys.user_block(u).transpose();
        let solved = s
            .lu()
            .solve(&yt)
            .ok_or_else(|| RisError::Singular("MMSE system is singular (zero noise and rank-deficient training)".into()))?;
        let xt = ra_h * solved;
        let (d, h) = unpack_transposed(&xt, nb, nr);
        cascade.push(d);
        direct.push(h);
    }
    LinkSet::new(cascade, direct)
}

/// MMSE estimate through the dense stacked matrix.
pub fn estimate_mmse_dense<T: Real>(sys: &StackedSystem<T>, prior: &PriorCovariance<T>, noise_var: T) -> Result<LinkSet<T>> {
    let a = sys.dense_matrix();
    let r = prior.diagonal(sys.bs_antennas, sys.ris_elements);
    let mut ra_h = a.adjoint();
    for (n, &rv) in r.iter().enumerate() {
        ra_h.row_mut(n).scale_mut(rv);
    }
    let s = &a * &ra_h + sys.noise_covariance(noise_var);
    let y = sys.observation();
    let solved = s
        .lu()
        .solve(&y)
        .ok_or_else(|| RisError::Singular("MMSE system is singular (zero noise and rank-deficient training)".into()))?;
    unpack_unknowns(&(ra_h * solved), sys.num_users(), sys.bs_antennas, sys.ris_elements)
}

/// Summed squared estimation error and summed true energy over every direct
/// vector and cascade column.
pub fn nmse_parts<T: Real>(truth: &LinkSet<T>, estimate: &LinkSet<T>) -> Result<(T, T)> {
    check_dim("nmse users", truth.num_users(), estimate.num_users())?;
    let mut err = T::zero();
    let mut energy = T::zero();
    for u in 0..truth.num_users() {
        let (d, dh) = (&truth.cascade[u], &estimate.cascade[u]);
        let (h, hh) = (&truth.direct[u], &estimate.direct[u]);
        check_dim("nmse cascade rows", d.nrows(), dh.nrows())?;
        check_dim("nmse cascade columns", d.ncols(), dh.ncols())?;
        check_dim("nmse direct length", h.len(), hh.len())?;
        err += (d - dh).norm_squared() + (h - hh).norm_squared();
        energy += d.norm_squared() + h.norm_squared();
    }
    Ok((err, energy))
}

/// Normalized mean-square error of one BS's estimates.
pub fn nmse<T: Real>(truth: &LinkSet<T>, estimate: &LinkSet<T>) -> Result<T> {
    let (err, energy) = nmse_parts(truth, estimate)?;
    if energy <= T::zero() {
        return Err(RisError::Domain("NMSE undefined for all-zero true channels".into()));
    }
    Ok(err / energy)
}

/// Knobs of the uplink training phase.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingParams<T: Real> {
    /// `η̄_k`, watts per training symbol.
    pub pilot_power_w: T,
    /// `τ_p`; `None` uses `K`.
    pub pilot_length: Option<usize>,
    /// `σ²_w`, watts.
    pub noise_var: T,
    pub rho: T,
}

/// Full training pipeline for one BS: pilots, configurations, simulated
/// reception and the selected estimator.
pub fn estimate_links<T: Real, R: Rng + ?Sized>(
    truth: &LinkSet<T>,
    prior: &PriorCovariance<T>,
    kind: EstimatorKind,
    params: &TrainingParams<T>,
    rng: &mut R,
) -> Result<EstimateSet<T>> {
    let k = truth.num_users();
    let pilots = generate_pilot_book(k, params.pilot_length.unwrap_or(k), params.pilot_power_w)?;
    let q = kind.configurations(truth.ris_elements());
    let configs = generate_training_configs(truth.ris_elements(), q, params.rho, rng)?;
    let obs = simulate_training(truth, &pilots, &configs, params.noise_var, rng)?;
    let sys = build_stacked_system(&obs, &pilots)?;
    let mut est = match kind {
        EstimatorKind::Ls => estimate_ls(&sys)?,
        EstimatorKind::MmseQ | EstimatorKind::Mmse1 => estimate_mmse(&sys, prior, params.noise_var)?,
    };
    est.method = kind;
    Ok(est)
}
