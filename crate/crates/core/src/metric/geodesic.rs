use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{metric_at, metric_with_gradient, norm_at, sym_index, ChartMetric, MetricError};
use crate::jets::{Jet, Powers};
use crate::ode::{dopri5, OdeError, OdeOptions};
use crate::scalar::solve_linear;

/// Tolerances for geodesic integration and logarithm shooting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicOptions {
    pub ode: OdeOptions,
    /// Chart-coordinate residual at which shooting stops.
    pub newton_tol: f64,
    /// Residual still accepted when the line search stalls (the integrated
    /// exponential is only smooth up to its local tolerance).
    pub newton_accept: f64,
    pub newton_max_iter: usize,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        GeodesicOptions {
            ode: OdeOptions::default(),
            newton_tol: 1e-11,
            newton_accept: 1e-8,
            newton_max_iter: 50,
        }
    }
}

impl GeodesicOptions {
    pub fn with_tol(tol: f64) -> Self {
        GeodesicOptions {
            ode: OdeOptions::with_tol(tol),
            ..Default::default()
        }
    }
}

/// Point on a geodesic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicState {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub s: f64,
}

fn map_ode(e: OdeError<MetricError>) -> MetricError {
    match e {
        OdeError::Rhs(e) => e,
        other => MetricError::Integration(other.to_string()),
    }
}

/// `Γᵏᵢⱼ` as `gamma[k][i][j]`.
pub fn christoffel(m: &dyn ChartMetric, p: &[f64]) -> Result<Vec<Vec<Vec<f64>>>, MetricError> {
    let d = m.dim();
    let (g, dg) = metric_with_gradient(m, p)?;
    let gi = g
        .try_inverse()
        .ok_or_else(|| MetricError::NotPositiveDefinite {
            point: p.to_vec(),
            min_eig: 0.0,
        })?;
    let mut out = vec![vec![vec![0.0; d]; d]; d];
    for (k, gk) in out.iter_mut().enumerate() {
        for i in 0..d {
            for j in i..d {
                let mut s = 0.0;
                for l in 0..d {
                    s += gi[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                }
                gk[i][j] = 0.5 * s;
                gk[j][i] = 0.5 * s;
            }
        }
    }
    Ok(out)
}

/// Geodesic acceleration at `x` for velocity `v`, from `g` and `∂g`.
fn acceleration(m: &dyn ChartMetric, x: &[f64], v: &[f64]) -> Result<Vec<f64>, MetricError> {
    let d = x.len();
    let (g, dg) = metric_with_gradient(m, x)?;
    let mut w = DVector::zeros(d);
    for l in 0..d {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += (dg[i][(j, l)] - 0.5 * dg[l][(i, j)]) * v[i] * v[j];
            }
        }
        w[l] = -s;
    }
    let a = g
        .lu()
        .solve(&w)
        .ok_or_else(|| MetricError::NotPositiveDefinite {
            point: x.to_vec(),
            min_eig: 0.0,
        })?;
    Ok(a.iter().copied().collect())
}

fn integrate_f64(
    m: &dyn ChartMetric,
    p: &[f64],
    v: &[f64],
    s1: f64,
    opts: &GeodesicOptions,
) -> Result<Vec<f64>, MetricError> {
    let d = m.dim();
    if p.len() != d || v.len() != d {
        return Err(MetricError::Invalid(
            "point/vector dimension mismatch".into(),
        ));
    }
    if !m.region().contains(p) {
        return Err(MetricError::OutsideRegion(p.to_vec()));
    }
    let y0: Vec<f64> = p.iter().chain(v).copied().collect();
    let rhs = |s: f64, y: &Vec<f64>| -> Result<Vec<f64>, MetricError> {
        let (x, vel) = y.split_at(d);
        if !m.region().contains(x) {
            return Err(MetricError::GeodesicExit(s));
        }
        let a = acceleration(m, x, vel)?;
        Ok(vel.iter().copied().chain(a).collect())
    };
    let (y, _) = dopri5(rhs, 0.0, s1, y0, &opts.ode, |s, y: &Vec<f64>| {
        if m.region().contains(&y[..d]) {
            Ok(())
        } else {
            Err(MetricError::GeodesicExit(s))
        }
    })
    .map_err(map_ode)?;
    Ok(y)
}

/// `exp_p(v)`: the time-one point of the geodesic with `γ(0) = p`,
/// `γ'(0) = v`.
pub fn exp_map(
    m: &dyn ChartMetric,
    p: &[f64],
    v: &[f64],
    opts: &GeodesicOptions,
) -> Result<Vec<f64>, MetricError> {
    let d = m.dim();
    let y = integrate_f64(m, p, v, 1.0, opts)?;
    Ok(y[..d].to_vec())
}

/// Geodesic states at the requested arc parameters (sorted ascending).
pub fn geodesic_samples(
    m: &dyn ChartMetric,
    p: &[f64],
    v: &[f64],
    s_values: &[f64],
    opts: &GeodesicOptions,
) -> Result<Vec<GeodesicState>, MetricError> {
    let d = m.dim();
    let mut out = Vec::with_capacity(s_values.len());
    let mut state: Vec<f64> = p.iter().chain(v).copied().collect();
    let mut s_prev = 0.0;
    for &s in s_values {
        if s < s_prev {
            return Err(MetricError::Invalid(
                "arc parameters must be ascending".into(),
            ));
        }
        if s > s_prev {
            state = integrate_f64(m, &state[..d], &state[d..], s - s_prev, opts)?;
        }
        out.push(GeodesicState {
            position: state[..d].to_vec(),
            velocity: state[d..].to_vec(),
            s,
        });
        s_prev = s;
    }
    Ok(out)
}

struct TaylorCache {
    center: Vec<f64>,
    /// Components truncated to the state degree.
    g: Vec<Jet>,
    /// `dg[l][c]`: partial `∂_l` of packed component `c`.
    dg: Vec<Vec<Jet>>,
}

/// Right-hand side of the geodesic equation on jet-valued states.
fn jet_rhs(
    m: &dyn ChartMetric,
    s: f64,
    state: &[Jet],
    cache: &mut Option<TaylorCache>,
) -> Result<Vec<Jet>, MetricError> {
    let d = m.dim();
    let (pos, vel) = state.split_at(d);
    let c: Vec<f64> = pos.iter().map(|j| j.value()).collect();
    if !m.region().contains(&c) {
        return Err(MetricError::GeodesicExit(s));
    }
    let k = pos[0].degree();
    let hit = matches!(cache, Some(tc) if tc.center == c);
    if !hit {
        let t = m.taylor(&c, k + 1)?;
        let g = t
            .iter()
            .map(|j| j.truncate(k))
            .collect::<Result<Vec<_>, _>>()?;
        let dg = (0..d)
            .map(|l| t.iter().map(|j| j.derivative(l)).collect())
            .collect();
        *cache = Some(TaylorCache {
            center: c.clone(),
            g,
            dg,
        });
    }
    let tc = cache.as_ref().unwrap();
    let y: Vec<Jet> = pos
        .iter()
        .map(|j| {
            let mut y = j.clone();
            y.coeffs_mut()[0] = 0.0;
            y
        })
        .collect();
    let powers = Powers::new(&y, k);
    let at = |p: &Jet| powers.eval(p).pop().unwrap();
    let g: Vec<Jet> = tc.g.iter().map(at).collect();
    let dg: Vec<Vec<Jet>> = tc
        .dg
        .iter()
        .map(|row| row.iter().map(at).collect())
        .collect();
    let mut vv = vec![pos[0].zeros_like(); d * d];
    for i in 0..d {
        for j in i..d {
            let p = vel[i].clone() * vel[j].clone();
            vv[j * d + i] = p.clone();
            vv[i * d + j] = p;
        }
    }
    let mut w = Vec::with_capacity(d);
    for l in 0..d {
        let mut acc = pos[0].zeros_like();
        for i in 0..d {
            for j in 0..d {
                let coef =
                    dg[i][sym_index(j, l, d)].clone() - dg[l][sym_index(i, j, d)].clone() * 0.5;
                acc = acc + coef * vv[i * d + j].clone();
            }
        }
        w.push(-acc);
    }
    let gm: Vec<Vec<Jet>> = (0..d)
        .map(|i| (0..d).map(|j| g[sym_index(i, j, d)].clone()).collect())
        .collect();
    let a = solve_linear(&gm, &w).ok_or_else(|| MetricError::NotPositiveDefinite {
        point: c.clone(),
        min_eig: 0.0,
    })?;
    Ok(vel.iter().cloned().chain(a).collect())
}

/// Jet transport: the Taylor expansion in `x ∈ R^k` of
/// `x ↦ exp_p(v0 + A x)` up to `degree`, one scalar jet per chart
/// coordinate.
pub fn exp_jet(
    m: &dyn ChartMetric,
    p: &[f64],
    v0: &[f64],
    a: &DMatrix<f64>,
    degree: usize,
    opts: &GeodesicOptions,
) -> Result<Vec<Jet>, MetricError> {
    let d = m.dim();
    if p.len() != d || v0.len() != d || a.nrows() != d {
        return Err(MetricError::Invalid("exp_jet dimension mismatch".into()));
    }
    if !m.region().contains(p) {
        return Err(MetricError::OutsideRegion(p.to_vec()));
    }
    let k = a.ncols();
    let mut y0 = Vec::with_capacity(2 * d);
    for &pi in p {
        y0.push(Jet::constant(k, degree, pi));
    }
    for i in 0..d {
        let mut j = Jet::constant(k, degree, v0[i]);
        if degree > 0 {
            for c in 0..k {
                j.coeffs_mut()[1 + c] = a[(i, c)];
            }
        }
        y0.push(j);
    }
    let mut cache = None;
    let rhs = |s: f64, y: &Vec<Jet>| jet_rhs(m, s, y, &mut cache);
    let (y, _) = dopri5(rhs, 0.0, 1.0, y0, &opts.ode, |s, y: &Vec<Jet>| {
        let c: Vec<f64> = y[..d].iter().map(|j| j.value()).collect();
        if m.region().contains(&c) {
            Ok(())
        } else {
            Err(MetricError::GeodesicExit(s))
        }
    })
    .map_err(map_ode)?;
    Ok(y[..d].to_vec())
}

/// `exp_p(v)` together with its differential `d(exp_p)_v` (chart
/// coordinates), by degree-one jet transport.
pub fn exp_with_jacobian(
    m: &dyn ChartMetric,
    p: &[f64],
    v: &[f64],
    opts: &GeodesicOptions,
) -> Result<(Vec<f64>, DMatrix<f64>), MetricError> {
    let d = m.dim();
    let jets = exp_jet(m, p, v, &DMatrix::identity(d, d), 1, opts)?;
    let x = jets.iter().map(|j| j.value()).collect();
    let jac = DMatrix::from_fn(d, d, |i, k| jets[i].coeffs()[1 + k]);
    Ok((x, jac))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `log_p(q)` by damped Newton shooting from the flat guess `q − p`.
pub fn log_map(
    m: &dyn ChartMetric,
    p: &[f64],
    q: &[f64],
    opts: &GeodesicOptions,
) -> Result<Vec<f64>, MetricError> {
    let d = m.dim();
    metric_at(m, p)?;
    if !m.region().contains(q) {
        return Err(MetricError::OutsideRegion(q.to_vec()));
    }
    if max_abs_diff(p, q) == 0.0 {
        return Ok(vec![0.0; d]);
    }
    let mut v: Vec<f64> = q.iter().zip(p).map(|(a, b)| a - b).collect();
    let (mut x, mut jac) = exp_with_jacobian(m, p, &v, opts)?;
    let mut res = max_abs_diff(&x, q);
    for _ in 0..opts.newton_max_iter {
        if res < opts.newton_tol {
            return Ok(v);
        }
        let r = DVector::from_iterator(d, q.iter().zip(&x).map(|(a, b)| a - b));
        let Some(step) = jac.clone().lu().solve(&r) else {
            break;
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let vt: Vec<f64> = v
                .iter()
                .zip(step.iter())
                .map(|(a, s)| a + lambda * s)
                .collect();
            if let Ok((xt, jt)) = exp_with_jacobian(m, p, &vt, opts) {
                let rt = max_abs_diff(&xt, q);
                if rt < res {
                    v = vt;
                    x = xt;
                    jac = jt;
                    res = rt;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if res < opts.newton_accept {
        return Ok(v);
    }
    Err(MetricError::ShootingFailed {
        iters: opts.newton_max_iter,
        residual: res,
    })
}

/// Riemannian distance estimate `|log_p q|_g`.
pub fn log_distance(
    m: &dyn ChartMetric,
    p: &[f64],
    q: &[f64],
    opts: &GeodesicOptions,
) -> Result<f64, MetricError> {
    let v = log_map(m, p, q, opts)?;
    norm_at(m, p, &v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{
        ConformalForm, ConformalScalar, Euclidean, PoincareDisc, Region, SpherePatch,
    };

    fn opts() -> GeodesicOptions {
        GeodesicOptions::default()
    }

    #[test]
    fn flat_exp_and_log_are_affine() {
        let e = Euclidean::new(2);
        let x = exp_map(&e, &[1.0, 2.0], &[0.5, -3.0], &opts()).unwrap();
        assert!(max_abs_diff(&x, &[1.5, -1.0]) < 1e-14);
        let v = log_map(&e, &[1.0, 2.0], &[0.0, 0.0], &opts()).unwrap();
        assert!(max_abs_diff(&v, &[-1.0, -2.0]) < 1e-14);
        assert_eq!(
            log_map(&e, &[1.0, 2.0], &[1.0, 2.0], &opts()).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn christoffel_of_exponential_conformal_line() {
        // g = e^{2x}: Γ = ½ g⁻¹ g' = 1
        let m = ConformalScalar::new(
            1,
            ConformalForm::Exponential,
            vec![1.0],
            vec![],
            Region::Everywhere,
        )
        .unwrap();
        for x in [-1.0, 0.0, 0.7] {
            let gam = christoffel(&m, &[x]).unwrap();
            assert!((gam[0][0][0] - 1.0).abs() < 1e-14);
        }
        assert!(christoffel(&Euclidean::new(3), &[0.1, 0.2, 0.3])
            .unwrap()
            .iter()
            .flatten()
            .flatten()
            .all(|c| *c == 0.0));
    }

    #[test]
    fn poincare_radial_geodesic() {
        let disc = PoincareDisc::new(2);
        // r is the hyperbolic length of the initial velocity; g(0) = 4I
        for r in [0.1, 1.0, 2.5] {
            let x = exp_map(&disc, &[0.0, 0.0], &[r / 2.0, 0.0], &opts()).unwrap();
            assert!((x[0] - (r / 2.0).tanh()).abs() < 1e-9, "r = {r}: {x:?}");
            assert!(x[1].abs() < 1e-14);
        }
    }

    #[test]
    fn jet_transport_linear_part_matches_jacobian_fd() {
        let sphere = SpherePatch::new(2, 10.0);
        let p = [0.3, -0.2];
        let v = [0.4, 0.25];
        let (x, jac) = exp_with_jacobian(&sphere, &p, &v, &opts()).unwrap();
        let x0 = exp_map(&sphere, &p, &v, &opts()).unwrap();
        assert!(max_abs_diff(&x, &x0) < 1e-9);
        let h = 1e-5;
        for k in 0..2 {
            let mut vp = v;
            let mut vm = v;
            vp[k] += h;
            vm[k] -= h;
            let a = exp_map(&sphere, &p, &vp, &opts()).unwrap();
            let b = exp_map(&sphere, &p, &vm, &opts()).unwrap();
            for i in 0..2 {
                assert!(((a[i] - b[i]) / (2.0 * h) - jac[(i, k)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn log_inverts_exp_on_disc() {
        let disc = PoincareDisc::new(2);
        let p = [0.2, -0.1];
        let v = [0.3, 0.2];
        let q = exp_map(&disc, &p, &v, &opts()).unwrap();
        let w = log_map(&disc, &p, &q, &opts()).unwrap();
        assert!(max_abs_diff(&w, &v) < 1e-9);
    }

    #[test]
    fn geodesic_leaving_region_is_reported() {
        let disc = PoincareDisc::new(2);
        let r = exp_map(&disc, &[0.0, 0.0], &[60.0, 0.0], &opts());
        assert!(matches!(
            r,
            Err(MetricError::GeodesicExit(_)) | Err(MetricError::Integration(_))
        ));
    }
}
