//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All channel, estimation and optimization code is written once against
//! [`Real`] and instantiated for `f32` and `f64`. Complex quantities are
//! `num_complex::Complex<T>`, which nalgebra treats as a `ComplexField`, so
//! decompositions (SVD, LU, Cholesky) work for either precision.

use nalgebra::{DMatrix, DVector, RealField};
use num_complex::Complex;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating point scalar: `f32` or `f64`.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Default + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: RealField + Copy + FromPrimitive + ToPrimitive + Default + Send + Sync + 'static
{
}

pub type Cplx<T> = Complex<T>;
pub type CVector<T> = DVector<Complex<T>>;
pub type CMatrix<T> = DMatrix<Complex<T>>;

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().expect("scalar convertible to f64")
}

#[inline]
pub fn cplx<T: Real>(re: T, im: T) -> Cplx<T> {
    Complex::new(re, im)
}

#[inline]
pub fn real<T: Real>(re: T) -> Cplx<T> {
    Complex::new(re, T::zero())
}

/// `e^{j theta}`.
#[inline]
pub fn cis<T: Real>(theta: T) -> Cplx<T> {
    Complex::new(theta.cos(), theta.sin())
}

/// Magnitude of a complex number.
#[inline]
pub fn cabs<T: Real>(z: Cplx<T>) -> T {
    z.re.hypot(z.im)
}

/// Phase angle of a complex number in `(-pi, pi]`.
#[inline]
pub fn carg<T: Real>(z: Cplx<T>) -> T {
    z.im.atan2(z.re)
}

/// Wraps a phase into the canonical interval `[-pi, pi]`.
pub fn wrap_phase<T: Real>(theta: T) -> T {
    let pi = T::pi();
    let two_pi = T::two_pi();
    if theta >= -pi && theta <= pi {
        return theta;
    }
    let mut t = theta - two_pi * ((theta + pi) / two_pi).floor();
    // floor can land exactly on +pi or slightly past it through rounding
    if t > pi {
        t -= two_pi;
    }
    if t < -pi {
        t += two_pi;
    }
    t
}

/// Squared Euclidean norm of a complex vector.
pub fn norm_sqr<T: Real>(v: &CVector<T>) -> T {
    v.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr())
}

/// Squared Frobenius norm of a complex matrix.
pub fn frob_sqr<T: Real>(m: &CMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr())
}

/// Hermitian inner product `a^H b`.
pub fn inner<T: Real>(a: &CVector<T>, b: &CVector<T>) -> Cplx<T> {
    a.iter()
        .zip(b.iter())
        .fold(Complex::new(T::zero(), T::zero()), |acc, (x, y)| {
            acc + x.conj() * y
        })
}

/// `D^H v` without materializing the adjoint.
pub fn adjoint_mul<T: Real>(d: &CMatrix<T>, v: &CVector<T>) -> CVector<T> {
    CVector::from_iterator(
        d.ncols(),
        d.column_iter().map(|col| {
            col.iter()
                .zip(v.iter())
                .fold(Complex::new(T::zero(), T::zero()), |acc, (x, y)| {
                    acc + x.conj() * y
                })
        }),
    )
}
