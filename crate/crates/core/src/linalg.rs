//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

pub fn skew<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m - m.transpose()) * T::lit(0.5)
}

pub fn trace_product<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    a.component_mul(&b.transpose()).sum()
}

pub fn ensure_square<T: Real>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn ensure_shape<T: Real>(m: &DMatrix<T>, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Dimension(format!(
            "{what} must be {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Eigenvalues (ascending) and eigenvectors of the symmetric part of `m`.
pub fn sym_eigen<T: Real>(m: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    if m.is_empty() {
        return (DVector::zeros(0), DMatrix::zeros(m.nrows(), m.ncols()));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .partial_cmp(&eig.eigenvalues[j])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn min_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    sym_eigen(m).0[0]
}

/// `V diag(f(λ)) Vᵀ` for the symmetric part of `m`.
pub fn map_eigenvalues<T: Real>(m: &DMatrix<T>, f: impl Fn(T) -> T) -> DMatrix<T> {
    let (values, vectors) = sym_eigen(m);
    let mut scaled = vectors.clone();
    for (j, &lambda) in values.iter().enumerate() {
        let s = f(lambda);
        scaled.column_mut(j).scale_mut(s);
    }
    symmetrize(&(scaled * vectors.transpose()))
}

/// Symmetric square root of a PSD matrix; negative roundoff eigenvalues are clamped to zero.
pub fn psd_sqrt<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    map_eigenvalues(m, |l| if l > T::zero() { l.sqrt() } else { T::zero() })
}

/// Cone membership `m - floor·I ⪰ 0` up to `-1e-8·(1+‖m‖_F)` slack.
pub fn in_cone<T: Real>(m: &DMatrix<T>, floor: T) -> bool {
    let slack = T::tol(1e-8) * (T::one() + m.norm());
    min_eigenvalue(m) - floor >= -slack
}

pub fn spectral_radius<T: Real>(m: &DMatrix<T>) -> Result<T> {
    ensure_square(m, "matrix")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(T::zero());
    }
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::Validation("matrix has non-finite entries".into()));
    }
    if n == 1 {
        return Ok(m[(0, 0)].abs());
    }
    match Schur::try_new(m.clone(), T::default_epsilon(), 10_000) {
        Some(schur) => Ok(schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re.hypot(z.im))
            .fold(T::zero(), |acc, x| if x > acc { x } else { acc })),
        None => Ok(gelfand_radius(m)),
    }
}

/// `lim ‖M^(2^k)‖^(1/2^k)` with renormalisation at each squaring; only used when
/// the Schur iteration fails.
fn gelfand_radius<T: Real>(m: &DMatrix<T>) -> T {
    let norm = m.norm();
    if norm == T::zero() {
        return T::zero();
    }
    let mut g = m / norm;
    let mut log_norm = norm.ln();
    let mut power = T::one();
    for _ in 0..60 {
        g = &g * &g;
        power *= T::lit(2.0);
        let s = g.norm();
        if s == T::zero() {
            return T::zero();
        }
        log_norm = log_norm * T::lit(2.0) + s.ln();
        g /= s;
    }
    (log_norm / power).exp()
}

/// Outcome of a Stein (discrete Lyapunov) solve `X = Fᵀ X F + C`.
#[derive(Debug, Clone)]
pub struct SteinSolution<T: Real> {
    pub x: DMatrix<T>,
    pub relative_residual: T,
    pub iterations: usize,
}

/// Solves `X = Fᵀ X F + C` by doubling: `X ← X + Gᵀ X G`, `G ← G²`.
///
/// Requires `ρ(F) < 1`. Stops once the relative update falls below `1e-12`
/// or after 200 doublings.
pub fn solve_stein<T: Real>(f: &DMatrix<T>, c: &DMatrix<T>) -> Result<SteinSolution<T>> {
    ensure_square(f, "F")?;
    ensure_shape(c, f.nrows(), f.nrows(), "C")?;
    let tol = T::tol(1e-12);
    let mut x = c.clone();
    let mut g = f.clone();
    let mut iterations = 0;
    while iterations < 200 {
        iterations += 1;
        let update = g.transpose() * &x * &g;
        x += &update;
        x = symmetrize(&x);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NotConverged {
                solver: "stein doubling",
                iterations,
                residual: f64::INFINITY,
            });
        }
        let un = update.norm();
        if un <= tol * x.norm() || un == T::zero() {
            break;
        }
        g = &g * &g;
    }
    let residual = (f.transpose() * &x * f + c - &x).norm();
    let scale = x.norm();
    let relative_residual = if scale > T::zero() { residual / scale } else { residual };
    Ok(SteinSolution {
        x,
        relative_residual,
        iterations,
    })
}

/// Solves the symmetric positive definite system `a x = b`, falling back to LU.
pub fn solve_spd<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Option<DMatrix<T>> {
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(b));
    }
    a.clone().lu().solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spectral_radius_small_cases() {
        let nil = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(spectral_radius(&nil).unwrap(), 0.0);
        let id = DMatrix::<f64>::identity(3, 3);
        assert_relative_eq!(spectral_radius(&id).unwrap(), 1.0, epsilon = 1e-12);
        let s = DMatrix::from_element(1, 1, 0.5);
        assert_eq!(spectral_radius(&s).unwrap(), 0.5);
    }

    #[test]
    fn spectral_radius_rotation_and_nonsquare() {
        let th: f64 = 0.3;
        let rot = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]) * 0.9;
        assert_relative_eq!(spectral_radius(&rot).unwrap(), 0.9, epsilon = 1e-12);
        assert!(matches!(
            spectral_radius(&DMatrix::<f64>::zeros(2, 3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn gelfand_matches_schur() {
        let m = DMatrix::from_row_slice(3, 3, &[0.2, 1.0, 0.0, -0.4, 0.1, 0.3, 0.0, 0.5, -0.7]);
        let a = spectral_radius(&m).unwrap();
        let b = gelfand_radius(&m);
        assert_relative_eq!(a, b, max_relative = 1e-6);
    }

    #[test]
    fn stein_scalar_geometric_series() {
        let f = DMatrix::from_element(1, 1, 0.5);
        let c = DMatrix::from_element(1, 1, 1.0);
        let sol = solve_stein(&f, &c).unwrap();
        assert_relative_eq!(sol.x[(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
        assert!(sol.relative_residual < 1e-12);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = psd_sqrt(&m);
        assert_relative_eq!(&r * &r, m, epsilon = 1e-12);
    }
}
