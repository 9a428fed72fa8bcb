//! Multi-cell, multi-user allocation: channel-matched beamformers, RIS phase
//! ascent on the log geometric-mean SINR, SCA power allocation, association
//! with joint transmission and the alternating outer loop.
//!
//! Every routine is written for an arbitrary number of BSs; the two-cell
//! deployment is the case the harness exercises. Quantities indexed by BS come
//! first: `links[i]`, `eta[i][k]`, `F[i][(k, ℓ)]`.

use rand::Rng;

use crate::channel::{composite_channel, Association, LinkSet, RisConfig, Scenario};
use crate::error::{check_dim, Result, RisError};
use crate::scalar::{inner, lit, norm_sqr, real, CMatrix, CVector, Cplx, Real};

/// Per-BS, per-user downlink powers in watts and the per-BS budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation<T: Real> {
    /// `η_{i,k}`, indexed `[bs][user]`.
    pub eta: Vec<Vec<T>>,
    pub budgets: Vec<T>,
}

impl<T: Real> PowerAllocation<T> {
    /// Each BS splits its budget evenly among the users it serves.
    pub fn uniform(association: &Association, budgets: &[T]) -> Result<Self> {
        check_dim("power budgets", association.num_bs(), budgets.len())?;
        validate_budgets(budgets)?;
        let k = association.num_users();
        let eta = (0..association.num_bs())
            .map(|i| {
                let load = association.load(i);
                (0..k)
                    .map(|u| {
                        if association.serves(i, u) {
                            budgets[i] / lit::<T>(load as f64)
                        } else {
                            T::zero()
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self { eta, budgets: budgets.to_vec() })
    }

    pub fn num_bs(&self) -> usize {
        self.eta.len()
    }

    pub fn num_users(&self) -> usize {
        self.eta.first().map(|r| r.len()).unwrap_or(0)
    }

    /// Total power spent by `bs` on the users it serves.
    pub fn spent(&self, bs: usize, association: &Association) -> T {
        (0..self.num_users())
            .filter(|&k| association.serves(bs, k))
            .fold(T::zero(), |acc, k| acc + self.eta[bs][k])
    }

    /// Non-negativity and per-BS budgets, with `slack` watts of tolerance.
    pub fn is_feasible(&self, association: &Association, slack: T) -> bool {
        self.eta.iter().flatten().all(|&e| e >= T::zero())
            && (0..self.num_bs()).all(|i| self.spent(i, association) <= self.budgets[i] + slack)
    }
}

fn validate_budgets<T: Real>(budgets: &[T]) -> Result<()> {
    for (i, &p) in budgets.iter().enumerate() {
        if !(p > T::zero()) || !p.is_finite() {
            return Err(RisError::Infeasible(format!(
                "budget of BS {i} must be positive and finite"
            )));
        }
    }
    Ok(())
}

/// `w = (ρ D e^{jφ̃} + h) / ‖·‖`.
pub fn cm_beamformer<T: Real>(
    cascade: &CMatrix<T>,
    direct: &CVector<T>,
    cfg: &RisConfig<T>,
) -> Result<CVector<T>> {
    let c = composite_channel(cascade, direct, cfg)?;
    let n = norm_sqr(&c).sqrt();
    if !(n > T::zero()) {
        return Err(RisError::Domain("channel-matched beamformer of a zero channel".into()));
    }
    Ok(c * real(T::one() / n))
}

/// Channel-matched beamformers `[bs][user]`; unserved or zero-channel pairs
/// get a zero vector, which contributes nothing to any SINR.
pub fn cm_beamformers<T: Real>(
    links: &[LinkSet<T>],
    cfg: &RisConfig<T>,
    association: &Association,
) -> Result<Vec<Vec<CVector<T>>>> {
    check_links(links, association)?;
    links
        .iter()
        .enumerate()
        .map(|(i, ls)| {
            (0..ls.num_users())
                .map(|k| {
                    if !association.serves(i, k) {
                        return Ok(CVector::zeros(ls.bs_antennas()));
                    }
                    match cm_beamformer(&ls.cascade[k], &ls.direct[k], cfg) {
                        Err(RisError::Domain(_)) => Ok(CVector::zeros(ls.bs_antennas())),
                        other => other,
                    }
                })
                .collect()
        })
        .collect()
}

fn check_links<T: Real>(links: &[LinkSet<T>], association: &Association) -> Result<()> {
    check_dim("link sets vs association BSs", association.num_bs(), links.len())?;
    for ls in links {
        check_dim("link set users", association.num_users(), ls.num_users())?;
    }
    Ok(())
}

fn check_powers<T: Real>(powers: &PowerAllocation<T>, association: &Association) -> Result<()> {
    check_dim("power allocation BSs", association.num_bs(), powers.num_bs())?;
    check_dim("power allocation users", association.num_users(), powers.num_users())?;
    check_dim("power budgets", association.num_bs(), powers.budgets.len())
}

fn composites<T: Real>(links: &[LinkSet<T>], cfg: &RisConfig<T>) -> Result<Vec<Vec<CVector<T>>>> {
    links
        .iter()
        .map(|ls| (0..ls.num_users()).map(|k| ls.composite(k, cfg)).collect())
        .collect()
}

/// Downlink SINR of every user for arbitrary beamformers:
/// numerator `|Σ_i I_{i,k} √η_{i,k} c_{i,k}^H w_{i,k}|²`, interference
/// `Σ_{ℓ≠k} |Σ_i I_{i,ℓ} √η_{i,ℓ} c_{i,k}^H w_{i,ℓ}|²`, plus `σ²`.
pub fn evaluate_sinr<T: Real>(
    links: &[LinkSet<T>],
    beamformers: &[Vec<CVector<T>>],
    powers: &PowerAllocation<T>,
    cfg: &RisConfig<T>,
    association: &Association,
    noise_var: T,
) -> Result<Vec<T>> {
    check_links(links, association)?;
    check_powers(powers, association)?;
    check_dim("beamformer BSs", links.len(), beamformers.len())?;
    let c = composites(links, cfg)?;
    let k_users = association.num_users();
    let amp: Vec<Vec<T>> = powers.eta.iter().map(|r| r.iter().map(|&e| e.max(T::zero()).sqrt()).collect()).collect();

    let mut out = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let mut signal = Cplx::new(T::zero(), T::zero());
        let mut interference = T::zero();
        for l in 0..k_users {
            let mut acc = Cplx::new(T::zero(), T::zero());
            for i in 0..links.len() {
                if association.serves(i, l) {
                    check_dim("beamformer length", c[i][k].len(), beamformers[i][l].len())?;
                    acc += inner(&c[i][k], &beamformers[i][l]) * amp[i][l];
                }
            }
            if l == k {
                signal = acc;
            } else {
                interference += acc.norm_sqr();
            }
        }
        out.push(signal.norm_sqr() / (interference + noise_var));
    }
    Ok(out)
}

/// `F^{(i)}_{k,ℓ} = I_{i,ℓ} η_{i,ℓ} c_{i,k}^H c_{i,ℓ}` and the power-step
/// coefficients `a^{(i)}_{k,ℓ} = c_{i,k}^H c_{i,ℓ} / ‖c_{i,ℓ}‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingCoefficients<T: Real> {
    pub f: Vec<CMatrix<T>>,
    pub a: Vec<CMatrix<T>>,
}

pub fn coupling_f<T: Real>(
    links: &[LinkSet<T>],
    powers: &PowerAllocation<T>,
    cfg: &RisConfig<T>,
    association: &Association,
) -> Result<CouplingCoefficients<T>> {
    check_links(links, association)?;
    check_powers(powers, association)?;
    let c = composites(links, cfg)?;
    Ok(coupling_from_composites(&c, powers, association))
}

fn coupling_from_composites<T: Real>(
    c: &[Vec<CVector<T>>],
    powers: &PowerAllocation<T>,
    association: &Association,
) -> CouplingCoefficients<T> {
    let k_users = association.num_users();
    let mut f = Vec::with_capacity(c.len());
    let mut a = Vec::with_capacity(c.len());
    for (i, ci) in c.iter().enumerate() {
        let norms: Vec<T> = ci.iter().map(|v| norm_sqr(v).sqrt()).collect();
        let gram = CMatrix::from_fn(k_users, k_users, |k, l| inner(&ci[k], &ci[l]));
        let fi = CMatrix::from_fn(k_users, k_users, |k, l| {
            if association.serves(i, l) {
                gram[(k, l)] * powers.eta[i][l]
            } else {
                Cplx::new(T::zero(), T::zero())
            }
        });
        let ai = CMatrix::from_fn(k_users, k_users, |k, l| {
            if norms[l] > T::zero() {
                gram[(k, l)] / norms[l]
            } else {
                Cplx::new(T::zero(), T::zero())
            }
        });
        f.push(fi);
        a.push(ai);
    }
    CouplingCoefficients { f, a }
}

/// A BS–user pair contributes only when it is served with positive power
/// over a nonzero channel (`F_{ℓ,ℓ} > 0`).
fn active<T: Real>(f: &[CMatrix<T>], i: usize, l: usize) -> bool {
    f[i][(l, l)].re > T::zero()
}

/// Per-user numerator and interference-plus-noise assembled from `F`:
/// `N_k = (Σ_i √F_{k,k})²` and `D_k = σ² + Σ_{ℓ≠k} |Σ_i F_{k,ℓ}/√F_{ℓ,ℓ}|²`.
/// For two BSs the squared sums expand into the `2√(F¹F²)` and
/// `2Re{F¹F²*}/√(F¹_{ℓℓ}F²_{ℓℓ})` cross terms.
fn sinr_parts<T: Real>(f: &[CMatrix<T>], noise_var: T) -> Vec<(T, T)> {
    let k_users = f.first().map(|m| m.nrows()).unwrap_or(0);
    (0..k_users)
        .map(|k| {
            let s = (0..f.len())
                .filter(|&i| active(f, i, k))
                .fold(T::zero(), |acc, i| acc + f[i][(k, k)].re.sqrt());
            let mut d = noise_var;
            for l in (0..k_users).filter(|&l| l != k) {
                let mut u = Cplx::new(T::zero(), T::zero());
                for i in (0..f.len()).filter(|&i| active(f, i, l)) {
                    u += f[i][(k, l)] / f[i][(l, l)].re.sqrt();
                }
                d += u.norm_sqr();
            }
            (s * s, d)
        })
        .collect()
}

/// SINRs obtained with channel-matched beamforming, from `F` alone.
pub fn sinr_from_coupling<T: Real>(f: &[CMatrix<T>], noise_var: T) -> Vec<T> {
    sinr_parts(f, noise_var).into_iter().map(|(n, d)| n / d).collect()
}

/// `G = Σ_k log₂ SINR_k` from `F`; `-∞` when some user receives nothing.
pub fn objective_from_coupling<T: Real>(f: &[CMatrix<T>], noise_var: T) -> T {
    sinr_parts(f, noise_var)
        .into_iter()
        .fold(T::zero(), |acc, (n, d)| acc + log2(n / d))
}

fn log2<T: Real>(x: T) -> T {
    if x > T::zero() {
        x.ln() / T::ln_2()
    } else {
        -T::one() / T::zero()
    }
}

/// `G(φ̃) = Σ_k log₂ SINR_k` under channel-matched beamforming.
pub fn objective_g<T: Real>(
    cfg: &RisConfig<T>,
    links: &[LinkSet<T>],
    powers: &PowerAllocation<T>,
    association: &Association,
    noise_var: T,
) -> Result<T> {
    let cc = coupling_f(links, powers, cfg, association)?;
    Ok(objective_from_coupling(&cc.f, noise_var))
}

/// Geometric mean of the SINRs, `2^{G/K}`.
pub fn geometric_mean<T: Real>(sinr: &[T]) -> T {
    if sinr.is_empty() {
        return T::zero();
    }
    let mean_ln = sinr.iter().fold(T::zero(), |acc, &s| acc + s.ln()) / lit::<T>(sinr.len() as f64);
    mean_ln.exp()
}

/// Analytic `∂G/∂φ̃`.
///
/// `∂F^{(i)}_{k,ℓ}/∂φ̃ = I η_{i,ℓ} ρ j [e^{jφ̃} ⊙ conj(D_{i,ℓ}^H c_{i,k}) − e^{−jφ̃} ⊙ (D_{i,k}^H c_{i,ℓ})]`,
/// propagated through `√F_{k,k}`, `F_{k,ℓ}/√F_{ℓ,ℓ}` and the logarithms.
pub fn grad_g<T: Real>(
    cfg: &RisConfig<T>,
    links: &[LinkSet<T>],
    powers: &PowerAllocation<T>,
    association: &Association,
    noise_var: T,
) -> Result<Vec<T>> {
    check_links(links, association)?;
    check_powers(powers, association)?;
    let nr = cfg.len();
    for ls in links {
        if ls.num_users() > 0 {
            check_dim("cascade columns vs RIS", ls.ris_elements(), nr)?;
        }
    }
    let c = composites(links, cfg)?;
    let cc = coupling_from_composites(&c, powers, association);
    let f = &cc.f;
    let k_users = association.num_users();
    let num_bs = links.len();
    let rho = cfg.rho;
    let e_pos: Vec<Cplx<T>> = cfg.phases.iter().map(|&p| crate::scalar::cis(p)).collect();

    // D_{i,k}^H c_{i,ℓ}, computed lazily since only active pairs need it
    let proj = |i: usize, k: usize, l: usize| crate::scalar::adjoint_mul(&links[i].cascade[k], &c[i][l]);
    let d_f = |i: usize, k: usize, l: usize| -> Vec<Cplx<T>> {
        let scale = powers.eta[i][l] * rho;
        let j = Cplx::new(T::zero(), scale);
        let p_lk = proj(i, l, k);
        let p_kl = if k == l { p_lk.clone() } else { proj(i, k, l) };
        (0..nr)
            .map(|n| j * (e_pos[n] * p_lk[n].conj() - e_pos[n].conj() * p_kl[n]))
            .collect()
    };

    let mut diag_deriv: Vec<Vec<Option<Vec<T>>>> = vec![vec![None; k_users]; num_bs];
    for (i, row) in diag_deriv.iter_mut().enumerate() {
        for (l, slot) in row.iter_mut().enumerate() {
            if active(f, i, l) {
                *slot = Some(d_f(i, l, l).into_iter().map(|z| z.re).collect());
            }
        }
    }

    let parts = sinr_parts(f, noise_var);
    let two = lit::<T>(2.0);
    let mut grad = vec![T::zero(); nr];
    for k in 0..k_users {
        let (num, den) = parts[k];
        if !(num > T::zero()) {
            continue;
        }
        // numerator: N = S², dN = 2 S dS, dS = Σ_i dF_kk / (2√F_kk)
        let s = num.sqrt();
        let mut d_num = vec![T::zero(); nr];
        for i in 0..num_bs {
            if let Some(dfkk) = &diag_deriv[i][k] {
                let root = f[i][(k, k)].re.sqrt();
                for n in 0..nr {
                    d_num[n] += two * s * dfkk[n] / (two * root);
                }
            }
        }

        // interference: |U_ℓ|², U_ℓ = Σ_i F_kℓ / √F_ℓℓ
        let mut d_den = vec![T::zero(); nr];
        for l in (0..k_users).filter(|&l| l != k) {
            let mut u = Cplx::new(T::zero(), T::zero());
            let mut du = vec![Cplx::new(T::zero(), T::zero()); nr];
            for i in 0..num_bs {
                let Some(dfll) = &diag_deriv[i][l] else { continue };
                let fll = f[i][(l, l)].re;
                let root = fll.sqrt();
                let fkl = f[i][(k, l)];
                u += fkl / root;
                let dfkl = d_f(i, k, l);
                for n in 0..nr {
                    du[n] += dfkl[n] / root - fkl * (dfll[n] / (two * fll * root));
                }
            }
            for n in 0..nr {
                d_den[n] += two * (u.conj() * du[n]).re;
            }
        }

        for n in 0..nr {
            grad[n] += (d_num[n] / num - d_den[n] / den) / T::ln_2();
        }
    }
    Ok(grad)
}

/// Backtracking gradient ascent parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseOptions {
    pub initial_step: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Sufficient-increase constant of the Armijo test.
    pub armijo: f64,
    /// Stop once an accepted step raises `G` by less than this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PhaseOptions {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            shrink: 0.5,
            max_backtracks: 30,
            armijo: 1e-4,
            tol: 1e-6,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseResult<T: Real> {
    pub config: RisConfig<T>,
    /// `G` at the start and after every accepted step.
    pub trace: Vec<T>,
}

/// Gradient ascent on `G(φ̃)` with Armijo backtracking.
///
/// The step that was accepted is doubled before the next iteration, so the
/// step size adapts in both directions.
pub fn optimize_phases<T: Real>(
    init: &RisConfig<T>,
    links: &[LinkSet<T>],
    powers: &PowerAllocation<T>,
    association: &Association,
    noise_var: T,
    opts: &PhaseOptions,
) -> Result<PhaseResult<T>> {
    if opts.max_iter == 0 {
        return Err(RisError::InvalidParameter("phase ascent needs max_iter >= 1".into()));
    }
    let mut cfg = init.clone();
    let mut g = objective_g(&cfg, links, powers, association, noise_var)?;
    let mut trace = vec![g];
    if !g.is_finite() || cfg.is_empty() {
        return Ok(PhaseResult { config: cfg.canonical(), trace });
    }
    let mut step = lit::<T>(opts.initial_step);
    let shrink = lit::<T>(opts.shrink);
    let armijo = lit::<T>(opts.armijo);
    let tol = lit::<T>(opts.tol);

    for _ in 0..opts.max_iter {
        let grad = grad_g(&cfg, links, powers, association, noise_var)?;
        let gnorm2 = grad.iter().fold(T::zero(), |a, &x| a + x * x);
        if !(gnorm2 > T::zero()) {
            break;
        }
        let mut accepted = None;
        let mut nu = step;
        for _ in 0..=opts.max_backtracks {
            let trial = RisConfig::new(
                cfg.rho,
                cfg.phases.iter().zip(&grad).map(|(&p, &d)| p + nu * d).collect(),
            );
            let gt = objective_g(&trial, links, powers, association, noise_var)?;
            if gt >= g + armijo * nu * gnorm2 {
                accepted = Some((trial, gt));
                break;
            }
            nu *= shrink;
        }
        let Some((trial, gt)) = accepted else { break };
        let gain = gt - g;
        cfg = trial.canonical();
        g = gt;
        trace.push(g);
        step = nu * lit::<T>(2.0);
        if gain < tol {
            break;
        }
    }
    Ok(PhaseResult { config: cfg.canonical(), trace })
}

/// Successive convex approximation parameters for the power step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerOptions {
    /// Stop the SCA loop once the sum of log-SINRs improves by less than this (relative).
    pub tol: f64,
    pub max_iter: usize,
    /// Relative improvement at which the inner projected-gradient solve stops.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 50,
            inner_tol: 1e-7,
            inner_max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerResult<T: Real> {
    pub powers: PowerAllocation<T>,
    /// Sum of log₂ SINRs at the start and after every SCA iteration.
    pub trace: Vec<T>,
}

/// Sum of log₂ SINRs as a function of the powers for fixed coefficients `a`.
pub fn sum_log_sinr<T: Real>(
    eta: &[Vec<T>],
    a: &[CMatrix<T>],
    association: &Association,
    noise_var: T,
) -> T {
    let k_users = association.num_users();
    let mut total = T::zero();
    for k in 0..k_users {
        let mut s = T::zero();
        for i in 0..a.len() {
            if association.serves(i, k) {
                s += eta[i][k].max(T::zero()).sqrt() * a[i][(k, k)].re;
            }
        }
        total += log2(s * s) - log2(interference_plus_noise(eta, a, association, noise_var, k));
    }
    total
}

fn interference_plus_noise<T: Real>(
    eta: &[Vec<T>],
    a: &[CMatrix<T>],
    association: &Association,
    noise_var: T,
    k: usize,
) -> T {
    let mut d = noise_var;
    for l in (0..association.num_users()).filter(|&l| l != k) {
        let mut u = Cplx::new(T::zero(), T::zero());
        for i in 0..a.len() {
            if association.serves(i, l) {
                u += a[i][(k, l)] * eta[i][l].max(T::zero()).sqrt();
            }
        }
        d += u.norm_sqr();
    }
    d
}

/// Euclidean projection of `v` onto `{x ≥ 0, Σx ≤ cap}`.
pub fn project_capped_simplex<T: Real>(v: &[T], cap: T) -> Vec<T> {
    let clipped: Vec<T> = v.iter().map(|&x| x.max(T::zero())).collect();
    if clipped.iter().fold(T::zero(), |a, &x| a + x) <= cap {
        return clipped;
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumsum = T::zero();
    let mut theta = T::zero();
    for (j, &x) in sorted.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - cap) / lit::<T>((j + 1) as f64);
        if x - t > T::zero() {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(T::zero())).collect()
}

struct PowerProblem<'a, T: Real> {
    a: &'a [CMatrix<T>],
    association: &'a Association,
    budgets: &'a [T],
    noise_var: T,
    floor: Vec<T>,
}

impl<T: Real> PowerProblem<'_, T> {
    fn num_bs(&self) -> usize {
        self.a.len()
    }

    fn num_users(&self) -> usize {
        self.association.num_users()
    }

    fn sqrt_floor(&self, i: usize, x: T) -> T {
        x.max(self.floor[i]).sqrt()
    }

    /// Coefficients `c_{i,ℓ}` of the linearized subtrahend at `eta`.
    fn linearization(&self, eta: &[Vec<T>]) -> Vec<Vec<T>> {
        let k_users = self.num_users();
        let mut lin = vec![vec![T::zero(); k_users]; self.num_bs()];
        for k in 0..k_users {
            let d = interference_plus_noise(eta, self.a, self.association, self.noise_var, k);
            for l in (0..k_users).filter(|&l| l != k) {
                let mut u = Cplx::new(T::zero(), T::zero());
                for i in 0..self.num_bs() {
                    if self.association.serves(i, l) {
                        u += self.a[i][(k, l)] * eta[i][l].max(T::zero()).sqrt();
                    }
                }
                for i in 0..self.num_bs() {
                    if self.association.serves(i, l) {
                        let dd = (u.conj() * self.a[i][(k, l)]).re / self.sqrt_floor(i, eta[i][l]);
                        lin[i][l] += dd / (d * T::ln_2());
                    }
                }
            }
        }
        lin
    }

    /// Concave surrogate `Σ_k log₂ S_k² − Σ c_{i,ℓ} η_{i,ℓ}`.
    fn surrogate(&self, eta: &[Vec<T>], lin: &[Vec<T>]) -> T {
        let mut total = T::zero();
        for k in 0..self.num_users() {
            let mut s = T::zero();
            for i in 0..self.num_bs() {
                if self.association.serves(i, k) {
                    s += eta[i][k].max(T::zero()).sqrt() * self.a[i][(k, k)].re;
                    total -= lin[i][k] * eta[i][k];
                }
            }
            total += log2(s * s);
        }
        total
    }

    fn surrogate_grad(&self, eta: &[Vec<T>], lin: &[Vec<T>]) -> Vec<Vec<T>> {
        let k_users = self.num_users();
        let mut g = vec![vec![T::zero(); k_users]; self.num_bs()];
        for k in 0..k_users {
            let s = (0..self.num_bs())
                .filter(|&i| self.association.serves(i, k))
                .fold(T::zero(), |acc, i| acc + eta[i][k].max(T::zero()).sqrt() * self.a[i][(k, k)].re);
            for i in 0..self.num_bs() {
                if !self.association.serves(i, k) {
                    continue;
                }
                let own = if s > T::zero() {
                    self.a[i][(k, k)].re / (self.sqrt_floor(i, eta[i][k]) * s * T::ln_2())
                } else {
                    T::zero()
                };
                g[i][k] = own - lin[i][k];
            }
        }
        g
    }

    fn project(&self, eta: &[Vec<T>]) -> Vec<Vec<T>> {
        (0..self.num_bs())
            .map(|i| {
                let served: Vec<usize> = (0..self.num_users()).filter(|&k| self.association.serves(i, k)).collect();
                let v: Vec<T> = served.iter().map(|&k| eta[i][k]).collect();
                let p = project_capped_simplex(&v, self.budgets[i]);
                let mut row = vec![T::zero(); self.num_users()];
                for (&k, x) in served.iter().zip(p) {
                    row[k] = x;
                }
                row
            })
            .collect()
    }

    /// Projected gradient ascent on the surrogate from `start`.
    fn solve_surrogate(&self, start: &[Vec<T>], lin: &[Vec<T>], opts: &PowerOptions) -> Vec<Vec<T>> {
        let mut x = start.to_vec();
        let mut val = self.surrogate(&x, lin);
        let max_budget = self.budgets.iter().fold(T::zero(), |a, &b| a.max(b));
        let g0 = self.surrogate_grad(&x, lin);
        let gmax = g0.iter().flatten().fold(T::zero(), |a, &v| a.max(v.abs()));
        let mut step = if gmax > T::zero() { max_budget / gmax } else { max_budget };
        let armijo = lit::<T>(1e-4);
        let inner_tol = lit::<T>(opts.inner_tol);
        let half = lit::<T>(0.5);

        for _ in 0..opts.inner_max_iter {
            let g = self.surrogate_grad(&x, lin);
            let mut accepted = None;
            let mut t = step;
            for _ in 0..40 {
                let moved: Vec<Vec<T>> = x
                    .iter()
                    .zip(&g)
                    .map(|(xr, gr)| xr.iter().zip(gr).map(|(&xv, &gv)| xv + t * gv).collect())
                    .collect();
                let cand = self.project(&moved);
                let dir = cand
                    .iter()
                    .flatten()
                    .zip(x.iter().flatten())
                    .zip(g.iter().flatten())
                    .fold(T::zero(), |acc, ((&c, &xv), &gv)| acc + gv * (c - xv));
                let cv = self.surrogate(&cand, lin);
                if cv.is_finite() && cv >= val + armijo * dir {
                    accepted = Some((cand, cv));
                    break;
                }
                t *= half;
            }
            let Some((cand, cv)) = accepted else { break };
            let gain = cv - val;
            x = cand;
            val = cv;
            step = t * lit::<T>(2.0);
            if gain <= inner_tol * val.abs().max(T::one()) {
                break;
            }
        }
        x
    }
}

/// SCA power allocation for fixed coefficients `a` (fixed phases).
///
/// Each iteration linearizes the interference logarithms at the current point
/// and maximizes the concave surrogate over the per-BS budget sets. The new
/// point is accepted only if the true objective does not drop; otherwise the
/// segment towards it is bisected, and the loop stops if nothing improves.
pub fn optimize_powers<T: Real>(
    init: &PowerAllocation<T>,
    a: &[CMatrix<T>],
    association: &Association,
    noise_var: T,
    opts: &PowerOptions,
) -> Result<PowerResult<T>> {
    check_powers(init, association)?;
    check_dim("coefficient BSs", association.num_bs(), a.len())?;
    validate_budgets(&init.budgets)?;
    if opts.max_iter == 0 {
        return Err(RisError::InvalidParameter("power step needs max_iter >= 1".into()));
    }
    let floor = init.budgets.iter().map(|&p| p * lit::<T>(1e-12)).collect();
    let problem = PowerProblem {
        a,
        association,
        budgets: &init.budgets,
        noise_var,
        floor,
    };
    let mut eta = problem.project(&init.eta);
    let mut sr = sum_log_sinr(&eta, a, association, noise_var);
    let mut trace = vec![sr];
    let tol = lit::<T>(opts.tol);
    let half = lit::<T>(0.5);

    if sr.is_finite() {
        for _ in 0..opts.max_iter {
            let lin = problem.linearization(&eta);
            let target = problem.solve_surrogate(&eta, &lin, opts);
            let mut s = T::one();
            let mut accepted = None;
            for _ in 0..20 {
                let cand: Vec<Vec<T>> = eta
                    .iter()
                    .zip(&target)
                    .map(|(er, tr)| er.iter().zip(tr).map(|(&e, &t)| e + s * (t - e)).collect())
                    .collect();
                let v = sum_log_sinr(&cand, a, association, noise_var);
                if v.is_finite() && v >= sr {
                    accepted = Some((cand, v));
                    break;
                }
                s *= half;
            }
            let Some((cand, v)) = accepted else { break };
            let gain = v - sr;
            eta = cand;
            sr = v;
            trace.push(sr);
            if gain <= tol * sr.abs().max(T::one()) {
                break;
            }
        }
    }

    Ok(PowerResult {
        powers: PowerAllocation { eta, budgets: init.budgets.clone() },
        trace,
    })
}

/// Serves every user from the BS with the largest direct-link coefficient,
/// then adds the other BS for the `⌊p_JT K + ½⌋` users with the smallest
/// `γ = max β^(d) / min β^(d)` (ties keep user order).
pub fn associate_users<T: Real>(scenario: &Scenario<T>, p_jt: f64) -> Result<Association> {
    if !(0.0..=1.0).contains(&p_jt) {
        return Err(RisError::InvalidParameter(format!("p_JT must be in [0, 1], got {p_jt}")));
    }
    let num_bs = scenario.num_bs();
    let k_users = scenario.num_users();
    let mut serves = vec![vec![false; k_users]; num_bs];
    let mut gamma = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let betas: Vec<f64> = (0..num_bs).map(|i| crate::scalar::to_f64(scenario.beta_direct[i][k])).collect();
        let (best, _) = betas
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        serves[best][k] = true;
        let max = betas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = betas.iter().cloned().fold(f64::INFINITY, f64::min);
        gamma.push(max / min);
    }
    let k_jt = (p_jt * k_users as f64 + 0.5).floor() as usize;
    let mut order: Vec<usize> = (0..k_users).collect();
    order.sort_by(|&x, &y| gamma[x].partial_cmp(&gamma[y]).unwrap_or(std::cmp::Ordering::Equal));
    for &k in order.iter().take(k_jt.min(k_users)) {
        for row in serves.iter_mut() {
            row[k] = true;
        }
    }
    Association::new(serves)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    /// Alternating phase ascent and SCA power allocation.
    Joint,
    /// Phase ascent with uniform powers.
    OnlyRis,
    /// SCA power allocation with random phases.
    OnlyPowers,
    /// Random phases and uniform powers.
    NoOpt,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Joint, Strategy::OnlyRis, Strategy::OnlyPowers, Strategy::NoOpt];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Joint => "Joint-Opt",
            Strategy::OnlyRis => "Only-RIS",
            Strategy::OnlyPowers => "Only-Powers",
            Strategy::NoOpt => "No-Opt",
        }
    }

    pub fn optimizes_phases(self) -> bool {
        matches!(self, Strategy::Joint | Strategy::OnlyRis)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationParams<T: Real> {
    pub strategy: Strategy,
    pub budgets: Vec<T>,
    pub noise_var: T,
    pub rho: T,
    pub phase: PhaseOptions,
    pub power: PowerOptions,
    /// Stop alternating once `G` improves by less than this.
    pub outer_tol: f64,
    pub outer_max_iter: usize,
}

impl<T: Real> AllocationParams<T> {
    pub fn new(strategy: Strategy, budgets: Vec<T>, noise_var: T, rho: T) -> Self {
        Self {
            strategy,
            budgets,
            noise_var,
            rho,
            phase: PhaseOptions::default(),
            power: PowerOptions::default(),
            outer_tol: 1e-4,
            outer_max_iter: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult<T: Real> {
    /// `[bs][user]`; zero for unserved pairs.
    pub beamformers: Vec<Vec<CVector<T>>>,
    pub powers: PowerAllocation<T>,
    pub config: RisConfig<T>,
    /// SINRs on the channels the allocation was computed from.
    pub sinr: Vec<T>,
    pub geometric_mean: T,
    /// `G = Σ log₂ SINR` at the start and after every outer iteration.
    pub trace: Vec<T>,
}

/// Resource allocation on `links` (true channels or estimates) for the given
/// association. `rng` supplies the random phases of the strategies that do not
/// optimize the RIS.
pub fn allocate<T: Real, R: Rng + ?Sized>(
    links: &[LinkSet<T>],
    association: &Association,
    params: &AllocationParams<T>,
    rng: &mut R,
) -> Result<AllocationResult<T>> {
    check_links(links, association)?;
    if params.outer_max_iter == 0 {
        return Err(RisError::InvalidParameter("allocation needs outer_max_iter >= 1".into()));
    }
    let nr = links.first().map(|l| l.ris_elements()).unwrap_or(0);
    let mut powers = PowerAllocation::uniform(association, &params.budgets)?;
    let mut cfg = if params.strategy.optimizes_phases() {
        RisConfig::zeros(nr, params.rho)
    } else {
        RisConfig::random(nr, params.rho, rng)
    };
    let noise = params.noise_var;
    let mut g = objective_g(&cfg, links, &powers, association, noise)?;
    let mut trace = vec![g];

    match params.strategy {
        Strategy::NoOpt => {}
        Strategy::OnlyRis => {
            let res = optimize_phases(&cfg, links, &powers, association, noise, &params.phase)?;
            cfg = res.config;
            g = objective_g(&cfg, links, &powers, association, noise)?;
            trace.push(g);
        }
        Strategy::OnlyPowers => {
            let a = coupling_f(links, &powers, &cfg, association)?.a;
            powers = optimize_powers(&powers, &a, association, noise, &params.power)?.powers;
            g = objective_g(&cfg, links, &powers, association, noise)?;
            trace.push(g);
        }
        Strategy::Joint => {
            let tol = lit::<T>(params.outer_tol);
            for _ in 0..params.outer_max_iter {
                let res = optimize_phases(&cfg, links, &powers, association, noise, &params.phase)?;
                cfg = res.config;
                let a = coupling_f(links, &powers, &cfg, association)?.a;
                powers = optimize_powers(&powers, &a, association, noise, &params.power)?.powers;
                let next = objective_g(&cfg, links, &powers, association, noise)?;
                let gain = next - g;
                g = next;
                trace.push(g);
                if !(gain.abs() >= tol) {
                    break;
                }
            }
        }
    }

    let beamformers = cm_beamformers(links, &cfg, association)?;
    let sinr = evaluate_sinr(links, &beamformers, &powers, &cfg, association, noise)?;
    Ok(AllocationResult {
        geometric_mean: geometric_mean(&sinr),
        beamformers,
        powers,
        config: cfg,
        sinr,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::complex_gaussian;
    use crate::scalar::cplx;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_links(num_bs: usize, k: usize, nb: usize, nr: usize, rng: &mut ChaCha8Rng) -> Vec<LinkSet<f64>> {
        (0..num_bs)
            .map(|_| {
                let cascade = (0..k)
                    .map(|_| CMatrix::from_fn(nb, nr, |_, _| complex_gaussian(rng, 1.0)))
                    .collect();
                let direct = (0..k).map(|_| CVector::from_fn(nb, |_, _| complex_gaussian(rng, 1.0))).collect();
                LinkSet::new(cascade, direct).unwrap()
            })
            .collect()
    }

    fn random_association(k: usize, joint: bool, rng: &mut ChaCha8Rng) -> Association {
        let mut serves = vec![vec![false; k]; 2];
        for u in 0..k {
            let home = rng.random_range(0..2usize);
            serves[home][u] = true;
            if joint && u % 2 == 0 {
                serves[1 - home][u] = true;
            }
        }
        Association::new(serves).unwrap()
    }

    fn random_powers(assoc: &Association, rng: &mut ChaCha8Rng) -> PowerAllocation<f64> {
        let mut p = PowerAllocation::uniform(assoc, &[10.0, 10.0]).unwrap();
        for row in p.eta.iter_mut() {
            for e in row.iter_mut() {
                *e *= rng.random_range(0.3..1.0);
            }
        }
        p
    }

    #[test]
    fn beamformer_is_unit_norm_and_matches_composite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let links = random_links(1, 1, 4, 6, &mut rng);
        let cfg = RisConfig::random(6, 0.8, &mut rng);
        let w = cm_beamformer(&links[0].cascade[0], &links[0].direct[0], &cfg).unwrap();
        assert_relative_eq!(w.norm(), 1.0, epsilon = 1e-12);
        let c = links[0].composite(0, &cfg).unwrap();
        assert_relative_eq!(inner(&w, &c).re, c.norm(), max_relative = 1e-12);
        let zero = CMatrix::zeros(4, 6);
        assert!(cm_beamformer(&zero, &CVector::zeros(4), &cfg).is_err());
    }

    #[test]
    fn single_user_sinr_is_matched_filter_snr() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let links = random_links(2, 1, 3, 5, &mut rng);
        let assoc = Association::new(vec![vec![true], vec![false]]).unwrap();
        let cfg = RisConfig::random(5, 1.0, &mut rng);
        let powers = PowerAllocation::uniform(&assoc, &[2.0, 2.0]).unwrap();
        let w = cm_beamformers(&links, &cfg, &assoc).unwrap();
        let sinr = evaluate_sinr(&links, &w, &powers, &cfg, &assoc, 0.5).unwrap();
        let c = links[0].composite(0, &cfg).unwrap();
        assert_relative_eq!(sinr[0], 2.0 * c.norm_squared() / 0.5, max_relative = 1e-12);

        let g = objective_g(&cfg, &links, &powers, &assoc, 0.5).unwrap();
        assert_relative_eq!(g, (2.0 * c.norm_squared()).log2() - 0.5f64.log2(), max_relative = 1e-12);
    }

    #[test]
    fn zero_powers_give_zero_sinr_and_zero_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let links = random_links(2, 3, 3, 4, &mut rng);
        let assoc = Association::all(2, 3);
        let cfg = RisConfig::zeros(4, 1.0);
        let powers = PowerAllocation { eta: vec![vec![0.0; 3]; 2], budgets: vec![1.0, 1.0] };
        let w = cm_beamformers(&links, &cfg, &assoc).unwrap();
        let sinr = evaluate_sinr(&links, &w, &powers, &cfg, &assoc, 1.0).unwrap();
        assert!(sinr.iter().all(|&s| s == 0.0));
        let cc = coupling_f(&links, &powers, &cfg, &assoc).unwrap();
        assert!(cc.f.iter().all(|m| m.iter().all(|z| z.norm() == 0.0)));
    }

    #[test]
    fn coupling_diagonal_is_real_and_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let links = random_links(2, 4, 3, 6, &mut rng);
        let assoc = random_association(4, true, &mut rng);
        let powers = random_powers(&assoc, &mut rng);
        let cfg = RisConfig::random(6, 1.0, &mut rng);
        let cc = coupling_f(&links, &powers, &cfg, &assoc).unwrap();
        for i in 0..2 {
            for l in 0..4 {
                assert!(cc.f[i][(l, l)].re >= 0.0);
                assert!(cc.f[i][(l, l)].im.abs() <= 1e-12 * cc.f[i][(l, l)].re.max(1.0));
                let c = links[i].composite(l, &cfg).unwrap();
                let expected = if assoc.serves(i, l) { powers.eta[i][l] * c.norm_squared() } else { 0.0 };
                assert_relative_eq!(cc.f[i][(l, l)].re, expected, max_relative = 1e-12);
                assert_relative_eq!(cc.a[i][(l, l)].re, c.norm(), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn coupling_objective_matches_sinr_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let k = 1 + trial % 5;
            let links = random_links(2, k, 4, 6, &mut rng);
            let assoc = random_association(k, trial % 2 == 0, &mut rng);
            let powers = random_powers(&assoc, &mut rng);
            let cfg = RisConfig::random(6, 0.9, &mut rng);
            let noise = 0.3;
            let w = cm_beamformers(&links, &cfg, &assoc).unwrap();
            let sinr = evaluate_sinr(&links, &w, &powers, &cfg, &assoc, noise).unwrap();
            let via_eq7: f64 = sinr.iter().map(|s| s.log2()).sum();
            let g = objective_g(&cfg, &links, &powers, &assoc, noise).unwrap();
            assert_relative_eq!(g, via_eq7, max_relative = 1e-9);
            let cc = coupling_f(&links, &powers, &cfg, &assoc).unwrap();
            for (x, y) in sinr_from_coupling(&cc.f, noise).iter().zip(&sinr) {
                assert_relative_eq!(x, y, max_relative = 1e-9);
            }
            let sr = sum_log_sinr(&powers.eta, &cc.a, &assoc, noise);
            assert_relative_eq!(sr, via_eq7, max_relative = 1e-9);
            assert_relative_eq!(geometric_mean(&sinr).log2() * k as f64, g, max_relative = 1e-9);
        }
    }

    #[test]
    fn two_bs_objective_matches_expanded_cross_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let links = random_links(2, 3, 3, 4, &mut rng);
        let assoc = Association::all(2, 3);
        let powers = random_powers(&assoc, &mut rng);
        let cfg = RisConfig::random(4, 1.0, &mut rng);
        let noise = 0.7;
        let f = coupling_f(&links, &powers, &cfg, &assoc).unwrap().f;
        let mut g = 0.0;
        for k in 0..3 {
            let (f1, f2) = (f[0][(k, k)].re, f[1][(k, k)].re);
            let num = f1 + f2 + 2.0 * (f1 * f2).sqrt();
            let mut den = noise;
            for l in (0..3).filter(|&l| l != k) {
                let (a, b) = (f[0][(k, l)], f[1][(k, l)]);
                let (d1, d2) = (f[0][(l, l)].re, f[1][(l, l)].re);
                den += a.norm_sqr() / d1 + b.norm_sqr() / d2 + 2.0 * (a * b.conj()).re / (d1 * d2).sqrt();
            }
            g += (num / den).log2();
        }
        assert_relative_eq!(objective_from_coupling(&f, noise), g, max_relative = 1e-12);
    }

    #[test]
    fn sinr_matches_symbol_level_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = 3;
        let links = random_links(2, k, 2, 3, &mut rng);
        let assoc = random_association(k, true, &mut rng);
        let powers = random_powers(&assoc, &mut rng);
        let cfg = RisConfig::random(3, 1.0, &mut rng);
        let noise = 2.0;
        let w = cm_beamformers(&links, &cfg, &assoc).unwrap();
        let sinr = evaluate_sinr(&links, &w, &powers, &cfg, &assoc, noise).unwrap();

        let c: Vec<Vec<CVector<f64>>> = (0..2).map(|i| (0..k).map(|u| links[i].composite(u, &cfg).unwrap()).collect()).collect();
        let symbols = 40_000;
        let mut sig = vec![0.0; k];
        let mut other = vec![0.0; k];
        for _ in 0..symbols {
            let s: Vec<Cplx<f64>> = (0..k).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
            let z: Vec<Cplx<f64>> = (0..k).map(|_| complex_gaussian(&mut rng, noise)).collect();
            for u in 0..k {
                let mut desired = cplx(0.0, 0.0);
                let mut rest = z[u];
                for l in 0..k {
                    let mut gain = cplx(0.0, 0.0);
                    for i in 0..2 {
                        if assoc.serves(i, l) {
                            // y = c^H x with x = Σ √η w s
                            gain += inner(&c[i][u], &w[i][l]) * powers.eta[i][l].sqrt();
                        }
                    }
                    if l == u {
                        desired += gain * s[l];
                    } else {
                        rest += gain * s[l];
                    }
                }
                sig[u] += desired.norm_sqr();
                other[u] += rest.norm_sqr();
            }
        }
        for u in 0..k {
            let empirical = sig[u] / other[u];
            assert!((empirical / sinr[u] - 1.0).abs() < 0.05, "user {u}: {empirical} vs {}", sinr[u]);
        }
    }

    fn fd_gradient(
        cfg: &RisConfig<f64>,
        links: &[LinkSet<f64>],
        powers: &PowerAllocation<f64>,
        assoc: &Association,
        noise: f64,
    ) -> Vec<f64> {
        let h = 1e-6;
        (0..cfg.len())
            .map(|n| {
                let mut p = cfg.clone();
                p.phases[n] += h;
                let mut m = cfg.clone();
                m.phases[n] -= h;
                (objective_g(&p, links, powers, assoc, noise).unwrap() - objective_g(&m, links, powers, assoc, noise).unwrap())
                    / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..36 {
            let k = [1, 2, 4][trial % 3];
            let nr = [2, 8, 16][(trial / 3) % 3];
            let joint = trial % 2 == 0;
            let links = random_links(2, k, 3, nr, &mut rng);
            let assoc = random_association(k, joint, &mut rng);
            let powers = random_powers(&assoc, &mut rng);
            let cfg = RisConfig::random(nr, 1.0, &mut rng);
            let noise = 0.5;
            let an = grad_g(&cfg, &links, &powers, &assoc, noise).unwrap();
            let fd = fd_gradient(&cfg, &links, &powers, &assoc, noise);
            let scale = 1.0 + an.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            for (x, y) in an.iter().zip(&fd) {
                assert!((x - y).abs() / scale < 1e-5, "trial {trial}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn scalar_gradient_matches_hand_derivative() {
        // N_B = 1, N_R = 1: G = log2(η|ρ d e^{jφ} + h|²/σ²),
        // dG/dφ = -2ρ Im(conj(d e^{jφ}) h) ... written via Re(conj(c) jρ d e^{jφ})
        let d = cplx(0.7, -0.2);
        let h = cplx(-0.1, 0.5);
        let rho = 0.8;
        let phi = 0.4;
        let links = vec![LinkSet::new(vec![CMatrix::from_element(1, 1, d)], vec![CVector::from_element(1, h)]).unwrap()];
        let assoc = Association::new(vec![vec![true]]).unwrap();
        let powers = PowerAllocation { eta: vec![vec![3.0]], budgets: vec![3.0] };
        let cfg = RisConfig::new(rho, vec![phi]);
        let c = d * crate::scalar::cis(phi) * rho + h;
        let dc = cplx(0.0, 1.0) * d * crate::scalar::cis(phi) * rho;
        let expected = 2.0 * (c.conj() * dc).re / c.norm_sqr() / std::f64::consts::LN_2;
        let got = grad_g(&cfg, &links, &powers, &assoc, 1.0).unwrap();
        assert_relative_eq!(got[0], expected, max_relative = 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_aligned_phase() {
        let d = cplx(0.3, 0.4);
        let h = cplx(1.0, 1.0);
        let phi = crate::scalar::carg(h) - crate::scalar::carg(d);
        let links = vec![LinkSet::new(vec![CMatrix::from_element(2, 1, d)], vec![CVector::from_element(2, h)]).unwrap()];
        let assoc = Association::new(vec![vec![true]]).unwrap();
        let powers = PowerAllocation { eta: vec![vec![1.0]], budgets: vec![1.0] };
        let g: Vec<f64> = grad_g(&RisConfig::new(1.0, vec![phi]), &links, &powers, &assoc, 1.0).unwrap();
        assert!(g[0].abs() < 1e-12);
    }

    #[test]
    fn objective_is_periodic_in_each_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let links = random_links(2, 3, 3, 5, &mut rng);
        let assoc = random_association(3, true, &mut rng);
        let powers = random_powers(&assoc, &mut rng);
        let cfg = RisConfig::random(5, 1.0, &mut rng);
        let g0 = objective_g(&cfg, &links, &powers, &assoc, 1.0).unwrap();
        let mut shifted = cfg.clone();
        shifted.phases[2] += 2.0 * std::f64::consts::PI;
        assert_relative_eq!(objective_g(&shifted, &links, &powers, &assoc, 1.0).unwrap(), g0, max_relative = 1e-12);
    }

    #[test]
    fn phase_ascent_is_monotone_and_matches_single_user_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let links = random_links(1, 1, 4, 8, &mut rng);
            let assoc = Association::new(vec![vec![true]]).unwrap();
            let powers = PowerAllocation::uniform(&assoc, &[1.0]).unwrap();
            let res = optimize_phases(&RisConfig::zeros(8, 1.0), &links, &powers, &assoc, 1.0, &PhaseOptions::default()).unwrap();
            for w in res.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9);
            }
            let am = crate::single_user::optimize_am(
                &links[0].cascade[0],
                &links[0].direct[0],
                &RisConfig::zeros(8, 1.0),
                &Default::default(),
            )
            .unwrap();
            let gap_db = 10.0 * am.objective.log10() - 10.0 * 2f64.powf(*res.trace.last().unwrap()).log10();
            assert!(gap_db < 0.5, "gap {gap_db} dB");
        }
    }

    #[test]
    fn capped_simplex_projection() {
        assert_eq!(project_capped_simplex(&[0.2, -1.0, 0.3], 1.0), vec![0.2, 0.0, 0.3]);
        let p = project_capped_simplex(&[2.0, 1.0, -0.5], 2.0);
        assert_relative_eq!(p[0], 1.5, epsilon = 1e-12);
        assert_relative_eq!(p[1], 0.5, epsilon = 1e-12);
        assert_eq!(p[2], 0.0);
        // brute force: projection is the closest feasible point on a fine grid
        let v = [0.9, 0.7];
        let p = project_capped_simplex(&v, 1.0);
        let dist = |x: f64, y: f64| (x - v[0]).powi(2) + (y - v[1]).powi(2);
        let mut best = f64::MAX;
        for a in 0..=200 {
            for b in 0..=(200 - a) {
                best = best.min(dist(a as f64 / 200.0, b as f64 / 200.0));
            }
        }
        assert!(dist(p[0], p[1]) <= best + 1e-12);
    }

    #[test]
    fn single_user_takes_the_full_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let links = random_links(2, 1, 3, 4, &mut rng);
        for serves in [vec![vec![true], vec![false]], vec![vec![true], vec![true]]] {
            let assoc = Association::new(serves).unwrap();
            let init = PowerAllocation {
                eta: vec![vec![if assoc.serves(0, 0) { 1.0 } else { 0.0 }], vec![if assoc.serves(1, 0) { 1.0 } else { 0.0 }]],
                budgets: vec![10.0, 10.0],
            };
            let a = coupling_f(&links, &init, &RisConfig::zeros(4, 1.0), &assoc).unwrap().a;
            let res = optimize_powers(&init, &a, &assoc, 1.0, &PowerOptions::default()).unwrap();
            for i in 0..2 {
                if assoc.serves(i, 0) {
                    assert_relative_eq!(res.powers.eta[i][0], 10.0, max_relative = 1e-6);
                }
            }
        }
    }

    #[test]
    fn symmetric_two_user_instance_matches_grid_search() {
        // one BS, two mirror-image users: a = [[A, b], [b, A]]
        let big = 2.0;
        let b = cplx(0.9, 0.3);
        let a = vec![CMatrix::from_row_slice(2, 2, &[real(big), b, b.conj(), real(big)])];
        let assoc = Association::all(1, 2);
        let noise = 0.1;
        let init = PowerAllocation::uniform(&assoc, &[1.0]).unwrap();
        let init = PowerAllocation { eta: vec![vec![0.8 * init.eta[0][0], 0.3 * init.eta[0][1]]], ..init };
        let res = optimize_powers(&init, &a, &assoc, noise, &PowerOptions::default()).unwrap();
        let mut best = f64::NEG_INFINITY;
        let n = 400;
        for x in 1..=n {
            for y in 1..=(n - x) {
                let eta = vec![vec![x as f64 / n as f64, y as f64 / n as f64]];
                best = best.max(sum_log_sinr(&eta, &a, &assoc, noise));
            }
        }
        let got = *res.trace.last().unwrap();
        assert!(got >= best - 1e-6, "{got} < {best}");
        assert_relative_eq!(res.powers.eta[0][0], res.powers.eta[0][1], max_relative = 5e-3);
        for w in res.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
    }

    #[test]
    fn power_step_is_monotone_and_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..20 {
            let k = 2 + trial % 4;
            let links = random_links(2, k, 3, 6, &mut rng);
            let assoc = random_association(k, trial % 2 == 0, &mut rng);
            let init = PowerAllocation::uniform(&assoc, &[10.0, 10.0]).unwrap();
            let cfg = RisConfig::random(6, 1.0, &mut rng);
            let a = coupling_f(&links, &init, &cfg, &assoc).unwrap().a;
            let res = optimize_powers(&init, &a, &assoc, 5.0, &PowerOptions::default()).unwrap();
            for w in res.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9);
            }
            assert!(res.powers.is_feasible(&assoc, 1e-9));
        }
    }

    #[test]
    fn nonpositive_budget_is_infeasible() {
        let assoc = Association::all(2, 2);
        assert!(matches!(PowerAllocation::<f64>::uniform(&assoc, &[1.0, 0.0]), Err(RisError::Infeasible(_))));
        let init = PowerAllocation { eta: vec![vec![0.0; 2]; 2], budgets: vec![-1.0, 1.0] };
        let a = vec![CMatrix::zeros(2, 2); 2];
        assert!(matches!(optimize_powers(&init, &a, &assoc, 1.0, &PowerOptions::default()), Err(RisError::Infeasible(_))));
    }

    fn scenario_with_betas(beta_direct: Vec<Vec<f64>>) -> Scenario<f64> {
        let k = beta_direct[0].len();
        Scenario {
            bs_positions: vec![[0.0; 3]; 2],
            ris_position: [0.0; 3],
            user_positions: vec![[0.0; 3]; k],
            user_cells: vec![0; k],
            beta_reflected: vec![vec![1.0; k]; 2],
            beta_direct,
            association: None,
        }
    }

    #[test]
    fn association_rules() {
        let sc = scenario_with_betas(vec![vec![1.0, 0.1, 0.5, 0.02], vec![0.2, 1.0, 0.5, 0.01]]);
        let a0 = associate_users(&sc, 0.0).unwrap();
        for k in 0..4 {
            assert_eq!((0..2).filter(|&i| a0.serves(i, k)).count(), 1);
        }
        assert!(a0.serves(0, 0) && a0.serves(1, 1) && a0.serves(0, 3));
        let a1 = associate_users(&sc, 1.0).unwrap();
        assert_eq!(a1, Association::all(2, 4));
        // user 2 is equidistant (γ = 1) and is picked first; 0.25·4 = 1 joint user
        let aq = associate_users(&sc, 0.25).unwrap();
        assert_eq!(aq.joint_users(), vec![2]);
        // round half up: 0.125·4 = 0.5 → 1
        assert_eq!(associate_users(&sc, 0.125).unwrap().joint_users().len(), 1);
        assert!(associate_users(&sc, 1.5).is_err());
    }

    #[test]
    fn joint_allocation_trace_is_monotone_and_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for trial in 0..6 {
            let k = 2 + trial % 3;
            let links = random_links(2, k, 4, 8, &mut rng);
            let assoc = random_association(k, true, &mut rng);
            for strategy in Strategy::ALL {
                let params = AllocationParams::new(strategy, vec![10.0, 10.0], 1.0, 1.0);
                let res = allocate(&links, &assoc, &params, &mut rng).unwrap();
                for w in res.trace.windows(2) {
                    assert!(w[1] >= w[0] - 1e-9, "{strategy}: {:?}", res.trace);
                }
                assert!(res.powers.is_feasible(&assoc, 1e-9));
                assert!(res.sinr.iter().all(|&s| s > 0.0));
                let g: f64 = res.sinr.iter().map(|s| s.log2()).sum();
                assert_relative_eq!(g, *res.trace.last().unwrap(), max_relative = 1e-9);
                assert_relative_eq!(res.geometric_mean, 2f64.powf(g / k as f64), max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn relabeling_users_permutes_sinrs() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let k = 4;
        let links = random_links(2, k, 3, 5, &mut rng);
        let assoc = random_association(k, true, &mut rng);
        let powers = random_powers(&assoc, &mut rng);
        let cfg = RisConfig::random(5, 1.0, &mut rng);
        let perm = [2, 0, 3, 1];
        let plinks: Vec<LinkSet<f64>> = links
            .iter()
            .map(|ls| {
                LinkSet::new(perm.iter().map(|&p| ls.cascade[p].clone()).collect(), perm.iter().map(|&p| ls.direct[p].clone()).collect())
                    .unwrap()
            })
            .collect();
        let passoc = Association::new(assoc.as_rows().iter().map(|r| perm.iter().map(|&p| r[p]).collect()).collect()).unwrap();
        let ppowers = PowerAllocation {
            eta: powers.eta.iter().map(|r| perm.iter().map(|&p| r[p]).collect()).collect(),
            budgets: powers.budgets.clone(),
        };
        let w = cm_beamformers(&links, &cfg, &assoc).unwrap();
        let pw = cm_beamformers(&plinks, &cfg, &passoc).unwrap();
        let s = evaluate_sinr(&links, &w, &powers, &cfg, &assoc, 1.0).unwrap();
        let ps = evaluate_sinr(&plinks, &pw, &ppowers, &cfg, &passoc, 1.0).unwrap();
        for (j, &p) in perm.iter().enumerate() {
            assert_relative_eq!(ps[j], s[p], max_relative = 1e-12);
        }
        assert_relative_eq!(geometric_mean(&ps), geometric_mean(&s), max_relative = 1e-12);
    }
}
