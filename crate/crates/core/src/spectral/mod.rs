//! Smallest singular value of a generator Jacobian without forming the
//! Jacobian: single-vector LOBPCG on `JᵀJ`, whose products come from one
//! forward tangent pass and one reverse pass. Exact-Jacobian and SVD
//! oracles are provided for verification.

mod jacobi;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Linearization, Mapping, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LobpcgConfig {
    pub max_iterations: usize,
    /// Stop once `‖JᵀJv − ρv‖ ≤ tolerance · ‖JᵀJv‖`.
    pub tolerance: f64,
    /// Basis directions whose norm falls below this after orthogonalization
    /// are dropped.
    pub drop_threshold: f64,
}

impl Default for LobpcgConfig {
    fn default() -> Self {
        LobpcgConfig {
            max_iterations: 10,
            tolerance: 1e-8,
            drop_threshold: 1e-10,
        }
    }
}

impl LobpcgConfig {
    /// Budget large enough to reach the tolerance on toy-scale problems.
    pub fn converged() -> Self {
        LobpcgConfig {
            max_iterations: 500,
            tolerance: 1e-10,
            drop_threshold: 1e-10,
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::config(format!("{field}.max_iterations"), "must be at least 1"));
        }
        if !(self.tolerance >= 0.0) || !(self.drop_threshold > 0.0) {
            return Err(Error::config(field, "tolerance must be ≥ 0 and drop_threshold > 0"));
        }
        Ok(())
    }
}

/// Result of the iteration for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEstimate<T: Real> {
    /// `√ρ(v_min)`.
    pub s1_hat: T,
    /// Unit vector attaining the final Rayleigh quotient.
    pub v_min: Vec<T>,
    pub iterations: usize,
    pub residual_norm: T,
    pub converged: bool,
    /// Rayleigh quotient at the start and after every accepted step.
    pub history: Vec<T>,
}

impl<T: Real> SpectralEstimate<T> {
    pub fn rayleigh(&self) -> T {
        *self.history.last().expect("history is never empty")
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn scale<T: Real>(y: &mut [T], alpha: T) {
    for yi in y.iter_mut() {
        *yi *= alpha;
    }
}

fn rows_of<T: Real>(t: &Tensor<T>) -> Vec<Vec<T>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn tensor_of<T: Real>(rows: &[Vec<T>], d: usize) -> Tensor<T> {
    let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Tensor::new(vec![rows.len(), d], data).expect("rows have width d")
}

fn apply<T: Real>(lin: &Linearization<T>, rows: &[Vec<T>], d: usize) -> Result<Vec<Vec<T>>> {
    Ok(rows_of(&lin.jtjv(&tensor_of(rows, d))?))
}

/// Uniform random unit vector.
pub fn random_unit<T: Real, R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<T> {
    loop {
        let mut v: Vec<T> = (0..d).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
        let n = norm(&v);
        if n > T::zero() && n.is_finite() {
            scale(&mut v, T::one() / n);
            return v;
        }
    }
}

/// Normalizes `x` then removes its components along each orthonormal `q`
/// (two passes). Applies the same operations to `ax` when tracked. Returns
/// `false` if the remainder is below `threshold`.
fn orthonormalize<T: Real>(
    x: &mut [T],
    mut ax: Option<&mut Vec<T>>,
    basis: &[(&[T], &[T])],
    threshold: T,
) -> bool {
    let n0 = norm(x);
    if !(n0 > T::zero()) || !n0.is_finite() {
        return false;
    }
    scale(x, T::one() / n0);
    if let Some(a) = ax.as_deref_mut() {
        scale(a, T::one() / n0);
    }
    for _pass in 0..2 {
        for (q, aq) in basis {
            let c = dot(q, x);
            axpy(x, -c, q);
            if let Some(a) = ax.as_deref_mut() {
                axpy(a, -c, aq);
            }
        }
    }
    let n = norm(x);
    if n < threshold {
        return false;
    }
    scale(x, T::one() / n);
    if let Some(a) = ax {
        scale(a, T::one() / n);
    }
    true
}

/// `JᵀJ v` at every row of `z`, as `vjp(G, z, detach(jvp(G, z, v)))`.
pub fn jtjv<T: Real, M: Mapping<T> + ?Sized>(g: &M, z: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    if z.shape() != v.shape() {
        return Err(Error::shape("jtjv", z.shape(), v.shape()));
    }
    if let Some(i) = (0..v.rows()).find(|&i| v.row(i).iter().all(|x| *x == T::zero())) {
        return Err(Error::domain("jtjv", format!("direction for sample {i} is zero")));
    }
    g.linearize(z)?.jtjv(v)
}

/// Single-vector LOBPCG for the smallest eigenpair of `JᵀJ` at every row of
/// `z`. Rows run in lockstep so each iteration costs two batched operator
/// applications. `v0` supplies warm-start vectors; rows without one (or a
/// zero one) start uniformly on the sphere.
pub fn smallest_singular<T, M, R>(
    g: &M,
    z: &Tensor<T>,
    config: &LobpcgConfig,
    v0: Option<&Tensor<T>>,
    rng: &mut R,
) -> Result<Vec<SpectralEstimate<T>>>
where
    T: Real,
    M: Mapping<T> + ?Sized,
    R: Rng + ?Sized,
{
    lobpcg(&g.linearize(z)?, config, v0, rng)
}

/// [`smallest_singular`] on an existing linearization.
pub fn lobpcg<T: Real, R: Rng + ?Sized>(
    lin: &Linearization<T>,
    config: &LobpcgConfig,
    v0: Option<&Tensor<T>>,
    rng: &mut R,
) -> Result<Vec<SpectralEstimate<T>>> {
    config.validate("spectral")?;
    let point = lin.point();
    let (n, d) = (point.rows(), point.cols());
    let tol = T::lit(config.tolerance);
    let thr = T::lit(config.drop_threshold);

    let mut v: Vec<Vec<T>> = (0..n)
        .map(|i| {
            let mut start = v0
                .filter(|w| w.shape() == point.shape())
                .map(|w| w.row(i).to_vec())
                .unwrap_or_default();
            let nv = norm(&start);
            if start.len() == d && nv > T::zero() && nv.is_finite() {
                scale(&mut start, T::one() / nv);
                start
            } else {
                random_unit(rng, d)
            }
        })
        .collect();
    let mut av = apply(lin, &v, d)?;
    let mut rho: Vec<T> = (0..n).map(|i| dot(&v[i], &av[i])).collect();
    if let Some(i) = rho.iter().position(|r| !r.is_finite()) {
        return Err(Error::NonFiniteRayleigh { sample: i, iteration: 0 });
    }
    let mut p: Vec<Option<(Vec<T>, Vec<T>)>> = vec![None; n];
    let mut history: Vec<Vec<T>> = rho.iter().map(|&r| vec![r]).collect();
    let mut iterations = vec![0usize; n];
    let mut active = vec![true; n];
    let mut converged = vec![false; n];
    let residual = |v: &[T], av: &[T], rho: T| -> (Vec<T>, T, T) {
        let mut r = av.to_vec();
        axpy(&mut r, -rho, v);
        let rn = norm(&r);
        (r, rn, norm(av))
    };

    for iteration in 1..=config.max_iterations {
        let mut q1: Vec<Option<Vec<T>>> = vec![None; n];
        for i in 0..n {
            if !active[i] {
                continue;
            }
            let (mut r, rn, avn) = residual(&v[i], &av[i], rho[i]);
            if rn <= tol * avn {
                converged[i] = true;
                active[i] = false;
                continue;
            }
            if orthonormalize(&mut r, None, &[(&v[i], &av[i])], thr) {
                q1[i] = Some(r);
            }
        }
        if !active.iter().any(|&a| a) {
            break;
        }
        let q1_batch: Vec<Vec<T>> = q1
            .iter()
            .map(|q| q.clone().unwrap_or_else(|| vec![T::zero(); d]))
            .collect();
        let aq1_batch = if q1.iter().any(Option::is_some) {
            apply(lin, &q1_batch, d)?
        } else {
            q1_batch.clone()
        };

        let mut v_new = vec![vec![T::zero(); d]; n];
        let mut y0 = vec![T::zero(); n];
        let mut step_norm = vec![T::one(); n];
        for i in 0..n {
            if !active[i] {
                continue;
            }
            let mut basis: Vec<(Vec<T>, Vec<T>)> = vec![(v[i].clone(), av[i].clone())];
            if q1[i].is_some() {
                basis.push((q1_batch[i].clone(), aq1_batch[i].clone()));
            }
            if let Some((pv, pav)) = &p[i] {
                let (mut x, mut ax) = (pv.clone(), pav.clone());
                let refs: Vec<(&[T], &[T])> =
                    basis.iter().map(|(q, aq)| (q.as_slice(), aq.as_slice())).collect();
                if orthonormalize(&mut x, Some(&mut ax), &refs, thr) {
                    basis.push((x, ax));
                }
            }
            let k = basis.len();
            if k == 1 {
                // nothing to improve with; the residual test will decide
                active[i] = false;
                continue;
            }
            let gram: Vec<Vec<T>> = (0..k)
                .map(|a| {
                    (0..k)
                        .map(|b| {
                            let h = T::lit(0.5);
                            h * (dot(&basis[a].0, &basis[b].1) + dot(&basis[b].0, &basis[a].1))
                        })
                        .collect()
                })
                .collect();
            let (_, y) = jacobi::smallest_eigenpair(&gram);
            let mut w = vec![T::zero(); d];
            for (j, (q, _)) in basis.iter().enumerate() {
                axpy(&mut w, y[j], q);
            }
            let s = norm(&w);
            scale(&mut w, T::one() / s);
            v_new[i] = w;
            y0[i] = y[0];
            step_norm[i] = s;
        }
        if !active.iter().any(|&a| a) {
            break;
        }
        let av_new = apply(lin, &v_new, d)?;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            let rho_new = dot(&v_new[i], &av_new[i]);
            if !rho_new.is_finite() {
                return Err(Error::NonFiniteRayleigh { sample: i, iteration });
            }
            if rho_new > rho[i] {
                // rounding has taken over; keep the better vector
                active[i] = false;
                continue;
            }
            // p = Σ_{j≥1} y_j q_j = s·v_new − y0·v
            let mut pv = v_new[i].clone();
            scale(&mut pv, step_norm[i]);
            axpy(&mut pv, -y0[i], &v[i]);
            let mut pav = av_new[i].clone();
            scale(&mut pav, step_norm[i]);
            axpy(&mut pav, -y0[i], &av[i]);
            p[i] = Some((pv, pav));
            v[i] = std::mem::take(&mut v_new[i]);
            av[i] = av_new[i].clone();
            rho[i] = rho_new;
            history[i].push(rho_new);
            iterations[i] = iteration;
        }
    }

    Ok((0..n)
        .map(|i| {
            let (_, rn, avn) = residual(&v[i], &av[i], rho[i]);
            SpectralEstimate {
                s1_hat: rho[i].max(T::zero()).sqrt(),
                v_min: std::mem::take(&mut v[i]),
                iterations: iterations[i],
                residual_norm: rn,
                converged: converged[i] || rn <= tol * avn,
                history: std::mem::take(&mut history[i]),
            }
        })
        .collect())
}

/// Jacobian of every row of `z` as a `[D, d]` tensor, column `i` being
/// `J e_i` from a forward tangent pass.
pub fn exact_jacobian<T: Real, M: Mapping<T> + ?Sized>(g: &M, z: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let lin = g.linearize(z)?;
    let (n, d) = (z.rows(), z.cols());
    let dd = g.output_dim();
    let mut jac = vec![vec![T::zero(); dd * d]; n];
    for c in 0..d {
        let mut e = vec![T::zero(); n * d];
        for i in 0..n {
            e[i * d + c] = T::one();
        }
        let col = lin.jvp(&Tensor::new(vec![n, d], e)?)?;
        for (i, ji) in jac.iter_mut().enumerate() {
            for r in 0..dd {
                ji[r * d + c] = col.row(i)[r];
            }
        }
    }
    jac.into_iter().map(|data| Tensor::new(vec![dd, d], data)).collect()
}

/// Singular values of a `[D, d]` matrix, ascending.
pub fn singular_values<T: Real>(j: &Tensor<T>) -> Vec<f64> {
    let (r, c) = (j.rows(), j.cols());
    let m = DMatrix::from_row_iterator(r, c, j.data().iter().map(|x| x.to_f64_lossy()));
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(f64::total_cmp);
    s
}

/// Smallest singular value per row of `z`, from the exact Jacobian.
pub fn exact_smallest_singular<T: Real, M: Mapping<T> + ?Sized>(g: &M, z: &Tensor<T>) -> Result<Vec<f64>> {
    Ok(exact_jacobian(g, z)?
        .iter()
        .map(|j| singular_values(j).first().copied().unwrap_or(0.0))
        .collect())
}

/// `½ log det(JᵀJ) = Σ log sᵢ` per row of `z`.
pub fn exact_logdet_half<T: Real, M: Mapping<T> + ?Sized>(g: &M, z: &Tensor<T>) -> Result<Vec<f64>> {
    exact_jacobian(g, z)?
        .iter()
        .enumerate()
        .map(|(i, j)| {
            let s = singular_values(j);
            let s1 = s.first().copied().unwrap_or(0.0);
            if !(s1 > 1e-12) {
                return Err(Error::DegenerateJacobian { sample: i, s1 });
            }
            Ok(s.iter().map(|x| x.ln()).sum())
        })
        .collect()
}
