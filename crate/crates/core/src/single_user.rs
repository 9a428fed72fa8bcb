//! Joint BS beamformer and RIS phase design for one user served by one BS:
//! maximize `|w^H (D φ + h)|²` over unit-norm `w` and `|φ_n| = ρ`.

use crate::channel::RisConfig;
use crate::error::{check_dim, Result, RisError};
use crate::scalar::{adjoint_mul, cabs, carg, inner, lit, norm_sqr, real, CMatrix, CVector, Cplx, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SingleUserMethod {
    /// Closed form maximizing the SVD-based upper bound.
    UpperBound,
    /// Closed form maximizing the column-sum lower bound.
    LowerBound,
    /// Alternating maximization over `w` and `φ`.
    Alternating,
    /// Given (typically random) phases with a matched beamformer.
    NoOpt,
}

impl SingleUserMethod {
    pub const ALL: [SingleUserMethod; 4] = [
        SingleUserMethod::UpperBound,
        SingleUserMethod::LowerBound,
        SingleUserMethod::Alternating,
        SingleUserMethod::NoOpt,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SingleUserMethod::UpperBound => "CF-UB",
            SingleUserMethod::LowerBound => "CF-LB",
            SingleUserMethod::Alternating => "AM",
            SingleUserMethod::NoOpt => "No-Opt",
        }
    }
}

impl std::fmt::Display for SingleUserMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleUserSolution<T: Real> {
    pub beamformer: CVector<T>,
    pub config: RisConfig<T>,
    /// `|w^H (D φ + h)|²` at the returned point.
    pub objective: T,
    pub method: SingleUserMethod,
    /// Value of the relaxation the closed form maximizes (upper-bound method only).
    pub bound: Option<T>,
    /// Objective after every alternation (alternating method only).
    pub trace: Vec<T>,
}

fn check_shapes<T: Real>(cascade: &CMatrix<T>, direct: &CVector<T>) -> Result<()> {
    check_dim("cascade rows vs direct length", cascade.nrows(), direct.len())
}

/// `|w^H (D φ + h)|²`.
pub fn beamforming_gain<T: Real>(
    w: &CVector<T>,
    cascade: &CMatrix<T>,
    direct: &CVector<T>,
    cfg: &RisConfig<T>,
) -> Result<T> {
    let c = crate::channel::composite_channel(cascade, direct, cfg)?;
    check_dim("beamformer length", c.len(), w.len())?;
    Ok(inner(w, &c).norm_sqr())
}

/// `(η / σ²) |w^H (D φ + h)|²` for a unit-norm `w`.
pub fn snr<T: Real>(
    w: &CVector<T>,
    cascade: &CMatrix<T>,
    direct: &CVector<T>,
    cfg: &RisConfig<T>,
    tx_power: T,
    noise_var: T,
) -> Result<T> {
    Ok(beamforming_gain(w, cascade, direct, cfg)? * tx_power / noise_var)
}

/// Phases maximizing `|g^H φ + t|`: every term `conj(g_n) ρ e^{jφ̃_n}` is
/// rotated onto the phase of `t`, giving `ρ Σ|g_n| + |t|`.
pub fn align_phases<T: Real>(g: &CVector<T>, t: Cplx<T>, rho: T) -> RisConfig<T> {
    let target = carg(t);
    let phases = g
        .iter()
        .map(|&gn| crate::scalar::wrap_phase(carg(gn) + target))
        .collect();
    RisConfig::new(rho, phases)
}

fn normalized<T: Real>(v: &CVector<T>) -> Option<CVector<T>> {
    let n = norm_sqr(v).sqrt();
    if n > T::zero() && n.is_finite() {
        Some(v * real(T::one() / n))
    } else {
        None
    }
}

fn unit_vector<T: Real>(len: usize) -> CVector<T> {
    let mut e = CVector::zeros(len);
    if len > 0 {
        e[0] = real(T::one());
    }
    e
}

fn matched_filter_solution<T: Real>(
    cascade: &CMatrix<T>,
    direct: &CVector<T>,
    cfg: RisConfig<T>,
    method: SingleUserMethod,
) -> Result<SingleUserSolution<T>> {
    let c = crate::channel::composite_channel(cascade, direct, &cfg)?;
    let beamformer = normalized(&c).unwrap_or_else(|| unit_vector(c.len()));
    let objective = inner(&beamformer, &c).norm_sqr();
    Ok(SingleUserSolution {
        beamformer,
        config: cfg,
        objective,
        method,
        bound: None,
        trace: Vec::new(),
    })
}

/// Keeps `cfg` and uses the matched beamformer `w = c / ‖c‖`.
pub fn no_optimization<T: Real>(
    cascade: &CMatrix<T>,
    direct: &CVector<T>,
    cfg: &RisConfig<T>,
) -> Result<SingleUserSolution<T>> {
    check_shapes(cascade, direct)?;
    matched_filter_solution(cascade, direct, cfg.clone(), SingleUserMethod::NoOpt)
}

/// Upper-bound closed form.
///
/// With `D = Σ λ_i u_i v_i^H` and `α_i = u_i^H h`, each singular direction is
/// paired with phases aligning `λ_i v_i^H φ` to `α_i`; the direction with the
/// largest `c_i = |λ_i v_i^H φ_i + α_i|²` wins (ties go to the smallest index)
/// and `w = u_{i+}`. When `N_B > N_R` the component of `h` outside the range
/// of `D` forms one more candidate direction with `c = ‖h_⊥‖²`.
pub fn optimize_ub<T: Real>(cascade: &CMatrix<T>, direct: &CVector<T>, rho: T) -> Result<SingleUserSolution<T>> {
    check_shapes(cascade, direct)?;
    let nr = cascade.ncols();
    let nb = cascade.nrows();
    if nr == 0 || cascade.iter().all(|z| z.norm_sqr() == T::zero()) {
        let mut sol = matched_filter_solution(cascade, direct, RisConfig::zeros(nr, rho), SingleUserMethod::UpperBound)?;
        sol.bound = Some(lit::<T>(nb as f64) * sol.objective);
        return Ok(sol);
    }

    let svd = cascade.clone().svd(true, true);
    let u = svd.u.as_ref().expect("SVD computed with U");
    let v_t = svd.v_t.as_ref().expect("SVD computed with V^H");

    let mut best: Option<(T, CVector<T>, RisConfig<T>)> = None;
    for (i, &lambda) in svd.singular_values.iter().enumerate() {
        let ui = u.column(i).into_owned();
        let vi = CVector::from_iterator(nr, v_t.row(i).iter().map(|z| z.conj()));
        let alpha = inner(&ui, direct);
        let cfg = align_phases(&vi, alpha, rho);
        let c = (inner(&vi, &cfg.vector()) * real(lambda) + alpha).norm_sqr();
        if best.as_ref().is_none_or(|(b, _, _)| c > *b) {
            best = Some((c, ui, cfg));
        }
    }

    let projected = u * (u.adjoint() * direct);
    let residual = direct - projected;
    let res_energy = norm_sqr(&residual);
    if res_energy > lit::<T>(1e-24) * norm_sqr(direct) {
        if let Some(w_perp) = normalized(&residual) {
            if best.as_ref().is_none_or(|(b, _, _)| res_energy > *b) {
                best = Some((res_energy, w_perp, RisConfig::zeros(nr, rho)));
            }
        }
    }

    let (c_best, beamformer, config) = best.expect("at least one singular direction");
    let objective = beamforming_gain(&beamformer, cascade, direct, &config)?;
    Ok(SingleUserSolution {
        beamformer,
        config,
        objective,
        method: SingleUserMethod::UpperBound,
        bound: Some(lit::<T>(nb as f64) * c_best),
        trace: Vec::new(),
    })
}

/// Lower-bound closed form: `w` matched to `Σ_n d_n + h` (sum over the
/// `N_R` columns of `D`), then phases aligned for that `w`.
pub fn optimize_lb<T: Real>(cascade: &CMatrix<T>, direct: &CVector<T>, rho: T) -> Result<SingleUserSolution<T>> {
    check_shapes(cascade, direct)?;
    let mut sum = direct.clone();
    for col in cascade.column_iter() {
        sum += col;
    }
    // zero column sum: fall back to the direct link, then the strongest column
    let beamformer = normalized(&sum)
        .or_else(|| normalized(direct))
        .or_else(|| {
            cascade
                .column_iter()
                .max_by(|a, b| a.norm_squared().partial_cmp(&b.norm_squared()).unwrap_or(std::cmp::Ordering::Equal))
                .and_then(|c| normalized(&c.into_owned()))
        })
        .unwrap_or_else(|| unit_vector(direct.len()));
    let config = phases_for_beamformer(cascade, direct, &beamformer, rho);
    let objective = beamforming_gain(&beamformer, cascade, direct, &config)?;
    Ok(SingleUserSolution {
        beamformer,
        config,
        objective,
        method: SingleUserMethod::LowerBound,
        bound: None,
        trace: Vec::new(),
    })
}

/// Best phases for a fixed beamformer: align `g_w = D^H w` with `t_w = w^H h`.
pub fn phases_for_beamformer<T: Real>(cascade: &CMatrix<T>, direct: &CVector<T>, w: &CVector<T>, rho: T) -> RisConfig<T> {
    let g = adjoint_mul(cascade, w);
    let t = inner(w, direct);
    align_phases(&g, t, rho)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmOptions {
    /// Stop once the relative objective improvement falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for AmOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200 }
    }
}

/// Alternating maximization from `init`.
///
/// Each iteration aligns the phases to the current beamformer and then
/// re-matches the beamformer to the new composite channel; `trace[0]` is the
/// matched-filter objective at `init` and the trace never decreases.
pub fn optimize_am<T: Real>(
    cascade: &CMatrix<T>,
    direct: &CVector<T>,
    init: &RisConfig<T>,
    opts: &AmOptions,
) -> Result<SingleUserSolution<T>> {
    check_shapes(cascade, direct)?;
    check_dim("initial configuration length", cascade.ncols(), init.len())?;
    if opts.max_iter == 0 {
        return Err(RisError::InvalidParameter("alternating maximization needs max_iter >= 1".into()));
    }
    let rho = init.rho;
    let mut config = init.clone();
    let c = crate::channel::composite_channel(cascade, direct, &config)?;
    let mut beamformer = normalized(&c).unwrap_or_else(|| unit_vector(c.len()));
    let mut objective = norm_sqr(&c);
    let mut trace = vec![objective];
    let tol = lit::<T>(opts.tol);

    for _ in 0..opts.max_iter {
        let next_cfg = phases_for_beamformer(cascade, direct, &beamformer, rho);
        let c = crate::channel::composite_channel(cascade, direct, &next_cfg)?;
        let next_obj = norm_sqr(&c);
        if next_obj < objective {
            // rounding only; the phase step cannot lose ground
            break;
        }
        let gain = next_obj - objective;
        config = next_cfg;
        if let Some(w) = normalized(&c) {
            beamformer = w;
        }
        objective = next_obj;
        trace.push(objective);
        if gain <= tol * objective.abs() {
            break;
        }
    }

    Ok(SingleUserSolution {
        objective: inner(&beamformer, &crate::channel::composite_channel(cascade, direct, &config)?).norm_sqr(),
        beamformer,
        config,
        method: SingleUserMethod::Alternating,
        bound: None,
        trace,
    })
}

/// `ρ Σ|g_n| + |t|`, the value reached by [`align_phases`].
pub fn aligned_magnitude<T: Real>(g: &CVector<T>, t: Cplx<T>, rho: T) -> T {
    g.iter().fold(T::zero(), |a, &z| a + cabs(z)) * rho + cabs(t)
}
