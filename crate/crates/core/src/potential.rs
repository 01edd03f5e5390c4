//! Double-well bond potential, influence function, and the analytically
//! computable constants derived from them.
//!
//! The bond energy profile `f` is positive, smooth, strictly increasing and
//! strictly concave on r > 0 with `f(0) = 0`, a finite slope `f'(0)` at the
//! origin, and a finite plateau `f_inf` at infinity. The composite
//! `F1(s) = f(s^2)` is convex inside `(-rbar, rbar)` and concave outside;
//! `rbar` marks where a bond stops stiffening and starts to soften.

use crate::error::{Error, Result};

/// Shipped profile families. Only the exponential prototype is implemented;
/// the tag keeps the parametrization open for other concave profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialKind {
    /// f(r) = c (1 - exp(-beta r))
    Exponential,
}

/// Double-well potential profile.
///
/// `scale` is the plateau `f_inf`; `rate` controls how fast the profile
/// saturates, with `f'(0) = scale * rate`.
#[derive(Debug, Clone, Copy)]
pub struct PotentialSpec {
    pub scale: f64,
    pub rate: f64,
    pub kind: PotentialKind,
}

impl PotentialSpec {
    pub fn new(scale: f64, rate: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!("potential scale must be positive, got {scale}")));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::Config(format!("potential rate must be positive, got {rate}")));
        }
        Ok(Self { scale, rate, kind: PotentialKind::Exponential })
    }

    /// Profile value f(r) for r >= 0.
    pub fn f(&self, r: f64) -> Result<f64> {
        if r < 0.0 {
            return Err(Error::Domain(format!("potential profile requires r >= 0, got {r}")));
        }
        Ok(self.f_raw(r))
    }

    #[inline]
    pub(crate) fn f_raw(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::Exponential => self.scale * (1.0 - (-self.rate * r).exp()),
        }
    }

    #[inline]
    fn fd1(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::Exponential => self.scale * self.rate * (-self.rate * r).exp(),
        }
    }

    #[inline]
    fn fd2(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::Exponential => -self.scale * self.rate * self.rate * (-self.rate * r).exp(),
        }
    }

    #[inline]
    fn fd3(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::Exponential => self.scale * self.rate.powi(3) * (-self.rate * r).exp(),
        }
    }

    #[inline]
    fn fd4(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::Exponential => -self.scale * self.rate.powi(4) * (-self.rate * r).exp(),
        }
    }

    /// Slope of the profile at the origin, `f'(0)`.
    pub fn f_prime_zero(&self) -> f64 {
        self.fd1(0.0)
    }

    /// Plateau value `f_inf`.
    pub fn f_inf(&self) -> f64 {
        self.scale
    }

    /// F1(s) = f(s^2).
    #[inline]
    pub fn f1(&self, s: f64) -> f64 {
        self.f_raw(s * s)
    }

    /// `f(base + dx) - f(base)` without subtractive cancellation; used by
    /// gradient diagnostics where the increment is tiny.
    #[inline]
    pub fn f_diff(&self, base: f64, dx: f64) -> f64 {
        match self.kind {
            PotentialKind::Exponential => {
                -self.scale * (-self.rate * base).exp() * (-self.rate * dx).exp_m1()
            }
        }
    }

    /// First derivative of F1 by the chain rule: F1'(s) = 2 s f'(s^2).
    #[inline]
    pub fn f1_prime(&self, s: f64) -> f64 {
        2.0 * s * self.fd1(s * s)
    }

    /// (F1', F1'', F1''') at `s`, all by the chain rule through f.
    pub fn f1_derivatives(&self, s: f64) -> (f64, f64, f64) {
        let r = s * s;
        let d1 = self.fd1(r);
        let d2 = self.fd2(r);
        let d3 = self.fd3(r);
        let f1p = 2.0 * s * d1;
        let f1pp = 2.0 * d1 + 4.0 * r * d2;
        let f1ppp = 12.0 * s * d2 + 8.0 * s * r * d3;
        (f1p, f1pp, f1ppp)
    }

    #[inline]
    fn f1_d2(&self, s: f64) -> f64 {
        let r = s * s;
        2.0 * self.fd1(r) + 4.0 * r * self.fd2(r)
    }

    #[inline]
    fn f1_d3(&self, s: f64) -> f64 {
        let r = s * s;
        12.0 * s * self.fd2(r) + 8.0 * s * r * self.fd3(r)
    }

    #[inline]
    fn f1_d4(&self, s: f64) -> f64 {
        let r = s * s;
        12.0 * self.fd2(r) + 48.0 * r * self.fd3(r) + 16.0 * r * r * self.fd4(r)
    }
}

/// Radial influence weight over the unit horizon ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfluenceKind {
    /// J == 1 on the unit ball.
    Constant,
    /// J(r) = 1 - r, vanishing at the horizon edge.
    Ramp,
}

#[derive(Debug, Clone, Copy)]
pub struct InfluenceSpec {
    pub kind: InfluenceKind,
    /// Upper bound M with 0 <= J <= M on the unit ball.
    pub bound: f64,
}

impl InfluenceSpec {
    pub fn new(kind: InfluenceKind) -> Self {
        Self { kind, bound: 1.0 }
    }

    /// J(|xi|) for |xi| in [0, 1]; zero outside.
    #[inline]
    pub fn eval(&self, xi: f64) -> f64 {
        if xi > 1.0 {
            return 0.0;
        }
        match self.kind {
            InfluenceKind::Constant => 1.0,
            InfluenceKind::Ramp => 1.0 - xi,
        }
    }
}

/// Volume of the unit ball in d dimensions, d in {1, 2, 3}.
pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI / 3.0,
        _ => panic!("unsupported dimension {dim}"),
    }
}

const BISECT_REL_TOL: f64 = 1e-12;

fn bisect(mut lo: f64, mut hi: f64, g: impl Fn(f64) -> f64) -> f64 {
    let mut glo = g(lo);
    debug_assert!(glo * g(hi) <= 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo) <= BISECT_REL_TOL * mid.abs().max(f64::MIN_POSITIVE) {
            return mid;
        }
        let gm = g(mid);
        if glo * gm <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            glo = gm;
        }
    }
    0.5 * (lo + hi)
}

/// Scans a geometric ladder for a sign change of `g` starting positive near 0.
fn bracket_root(scale: f64, g: impl Fn(f64) -> f64) -> Option<(f64, f64)> {
    let mut lo = 1e-6 * scale;
    if g(lo) <= 0.0 {
        return None;
    }
    let mut r = lo;
    for _ in 0..60 {
        r *= 2.0;
        if g(r) <= 0.0 {
            return Some((lo, r));
        }
        lo = r;
    }
    None
}

/// Inflection point `rbar` of s -> f(s^2): the unique positive root of
/// `f'(r^2) + 2 r^2 f''(r^2) = 0`, located by bracketed bisection.
pub fn inflection_point(spec: &PotentialSpec) -> Result<f64> {
    let scale = 1.0 / spec.rate.sqrt();
    let g = |r: f64| spec.f1_d2(r);
    let (lo, hi) = bracket_root(scale, g)
        .ok_or_else(|| Error::Config("inflection point not bracketed on (0, R_max)".into()))?;
    Ok(bisect(lo, hi, g))
}

/// Critical strain of a bond of the given length: `rbar / sqrt(length)`.
/// The bond force peaks there and softens beyond.
pub fn critical_strain(bond_length: f64, spec: &PotentialSpec) -> Result<f64> {
    if !(bond_length > 0.0) {
        return Err(Error::Domain(format!(
            "critical strain requires a positive bond length, got {bond_length}"
        )));
    }
    Ok(inflection_point(spec)? / bond_length.sqrt())
}

/// Global bounds (C1, C2, C3) on |F1'|, |F1''|, |F1'''|.
///
/// C1 is attained at the inflection point. C2 compares the two candidate
/// maxima of |F1''| (the origin and the first zero of F1'''). C3 scans the
/// sign changes of F1'''' and takes the largest |F1'''| over those critical
/// points.
pub fn derivative_bounds(spec: &PotentialSpec) -> Result<(f64, f64, f64)> {
    let rbar = inflection_point(spec)?;
    let c1 = spec.f1_prime(rbar).abs();

    // F1''' is negative just past rbar and turns positive where the concave
    // branch flattens; the sign change is the second candidate for max |F1''|.
    let g3 = |s: f64| -spec.f1_d3(s);
    let (lo, hi) = bracket_root(rbar, |s| g3(rbar + s))
        .map(|(a, b)| (rbar + a, rbar + b))
        .ok_or_else(|| Error::Config("F1''' sign change not bracketed".into()))?;
    let u_hat = bisect(lo, hi, g3);
    let c2 = spec.f1_d2(0.0).abs().max(spec.f1_d2(u_hat).abs());

    // Critical points of F1''' are the roots of F1''''; scan for sign changes.
    let hi = 8.0 / spec.rate.sqrt();
    let n = 4096;
    let mut c3 = 0.0f64;
    let mut prev_s = hi / n as f64 * 1e-3;
    let mut prev_g = spec.f1_d4(prev_s);
    for k in 1..=n {
        let s = hi * k as f64 / n as f64;
        let g = spec.f1_d4(s);
        if prev_g == 0.0 {
            c3 = c3.max(spec.f1_d3(prev_s).abs());
        } else if prev_g * g < 0.0 {
            let root = bisect(prev_s, s, |x| spec.f1_d4(x));
            c3 = c3.max(spec.f1_d3(root).abs());
        }
        prev_s = s;
        prev_g = g;
    }
    if c3 == 0.0 {
        return Err(Error::Config("no critical point of F1''' found".into()));
    }
    Ok((c1, c2, c3))
}

/// Adaptive Simpson quadrature to the requested absolute tolerance.
fn simpson_adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(fa, fm, fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}

const MOMENT_REL_TOL: f64 = 1e-10;

/// Normalized influence moment
/// `Jbar_alpha = (1/omega_d) \int_{H_1(0)} J(|xi|) |xi|^{-alpha} dxi`,
/// reduced to the radial integral `d \int_0^1 J(r) r^{d-1-alpha} dr` and
/// evaluated by adaptive quadrature after a power substitution that removes
/// the endpoint singularity.
pub fn influence_moment(alpha: f64, dim: usize, infl: &InfluenceSpec) -> Result<f64> {
    if !(0.0..ved_dim(dim)?).contains(&alpha) {
        return Err(Error::Domain(format!(
            "influence moment diverges: alpha = {alpha} must lie in [0, {dim})"
        )));
    }
    let q = dim as f64 - 1.0 - alpha; // exponent of r, q > -1
    let p = (2.0 / (q + 1.0)).ceil().max(1.0);
    // r = t^p turns r^q dr into p t^{p(q+1)-1} dt with a nonnegative exponent.
    let e = p * (q + 1.0) - 1.0;
    let integrand = |t: f64| infl.eval(t.powf(p)) * t.powf(e) * p;
    let rough = simpson_adaptive(&integrand, 0.0, 1.0, 1e-6);
    let value = simpson_adaptive(&integrand, 0.0, 1.0, MOMENT_REL_TOL * rough.abs().max(1e-30));
    Ok(dim as f64 * value)
}

fn ved_dim(dim: usize) -> Result<f64> {
    if (1..=3).contains(&dim) {
        Ok(dim as f64)
    } else {
        Err(Error::Config(format!("unsupported dimension {dim}")))
    }
}

/// The force Lipschitz constant `Cbar = C2 * Jbar_1`.
pub fn cbar(spec: &PotentialSpec, infl: &InfluenceSpec, dim: usize) -> Result<f64> {
    let (_, c2, _) = derivative_bounds(spec)?;
    Ok(c2 * influence_moment(1.0, dim, infl)?)
}

/// Lame moduli and fracture energy of the vanishing-horizon limit:
/// `mu = lambda = (1/5) f'(0) \int_0^1 r^d J(r) dr` and
/// `Gc = (3/2) f_inf \int_0^1 r^d J(r) dr`, for d in {2, 3} only.
/// `mu = lambda` is forced by the central-force form of the bond interaction.
pub fn lefm_constants(
    spec: &PotentialSpec,
    infl: &InfluenceSpec,
    dim: usize,
) -> Result<(f64, f64, f64)> {
    if dim != 2 && dim != 3 {
        return Err(Error::Config(format!(
            "limit elastic constants are defined for d in {{2, 3}}, got {dim}"
        )));
    }
    let integrand = |r: f64| infl.eval(r) * r.powi(dim as i32);
    let rough = simpson_adaptive(&integrand, 0.0, 1.0, 1e-6);
    let moment = simpson_adaptive(&integrand, 0.0, 1.0, MOMENT_REL_TOL * rough.abs().max(1e-30));
    let mu = 0.2 * spec.f_prime_zero() * moment;
    let gc = 1.5 * spec.f_inf() * moment;
    Ok((mu, mu, gc))
}

/// Every computable constant for a (potential, influence, dimension, gamma)
/// configuration. Entries whose defining integral diverges in the requested
/// dimension are omitted and listed in `warnings`.
#[derive(Debug, Clone)]
pub struct ConstantsReport {
    pub rbar: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// (alpha, Jbar_alpha) pairs, sorted by alpha.
    pub jbar: Vec<(f64, f64)>,
    pub cbar: Option<f64>,
    pub lefm: Option<(f64, f64, f64)>,
    pub warnings: Vec<String>,
}

pub fn constants_report(
    spec: &PotentialSpec,
    infl: &InfluenceSpec,
    dim: usize,
    gamma: f64,
) -> Result<ConstantsReport> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    ved_dim(dim)?;
    let rbar = inflection_point(spec)?;
    let (c1, c2, c3) = derivative_bounds(spec)?;

    let mut warnings = Vec::new();
    let mut alphas = vec![0.5, 1.0 - gamma, 1.0, 1.5 - gamma];
    alphas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    alphas.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let mut jbar = Vec::new();
    for &alpha in &alphas {
        match influence_moment(alpha, dim, infl) {
            Ok(v) => jbar.push((alpha, v)),
            Err(_) => warnings.push(format!(
                "Jbar_{alpha} omitted: the moment integral diverges for d = {dim}"
            )),
        }
    }
    let cbar = match influence_moment(1.0, dim, infl) {
        Ok(j1) => Some(c2 * j1),
        Err(_) => {
            warnings.push(format!(
                "Cbar omitted: Jbar_1 diverges for d = {dim}; use the discrete stencil moment instead"
            ));
            None
        }
    };
    let lefm = match lefm_constants(spec, infl, dim) {
        Ok(t) => Some(t),
        Err(_) => {
            warnings.push(format!("limit elastic constants omitted for d = {dim}"));
            None
        }
    };

    let report = ConstantsReport { rbar, c1, c2, c3, jbar, cbar, lefm, warnings };
    for &(a, v) in &report.jbar {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Config(format!("Jbar_{a} is not finite and positive: {v}")));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_spec() -> PotentialSpec {
        PotentialSpec::new(1.0, 1.0).unwrap()
    }

    #[test]
    fn profile_vanishes_at_origin() {
        assert_eq!(unit_spec().f(0.0).unwrap(), 0.0);
    }

    #[test]
    fn profile_slope_at_origin_matches_series() {
        // (1 - exp(-r)) / r at r = 0.001, expanded independently
        let r = 0.001f64;
        let expected = (1.0 - (-r).exp()) / r;
        let spec = unit_spec();
        assert_relative_eq!(spec.f(r).unwrap() / r, expected, max_relative = 1e-15);
        assert!((spec.f(r).unwrap() / r - 0.9995).abs() < 1e-3);
        assert_relative_eq!(spec.f_prime_zero(), 1.0);
    }

    #[test]
    fn profile_reaches_plateau() {
        let spec = unit_spec();
        assert!((spec.f(50.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn profile_rejects_negative_argument() {
        assert!(unit_spec().f(-0.1).is_err());
    }

    #[test]
    fn f1_derivative_values() {
        let spec = unit_spec();
        let (p0, pp0, _) = spec.f1_derivatives(0.0);
        assert_eq!(p0, 0.0);
        assert_relative_eq!(pp0, 2.0);
        // F1'(1/sqrt(2)) = sqrt(2) e^{-1/2}
        let s = 0.5f64.sqrt();
        let oracle = 2.0 * s * (-0.5f64).exp();
        assert_relative_eq!(spec.f1_derivatives(s).0, oracle, max_relative = 1e-14);
    }

    #[test]
    fn f1_derivatives_match_finite_differences() {
        let spec = PotentialSpec::new(1.3, 0.7).unwrap();
        let d = 1e-5;
        for k in 0..100 {
            let s = -3.0 + 6.0 * k as f64 / 99.0;
            let (p, pp, ppp) = spec.f1_derivatives(s);
            let fd1 = (spec.f1(s + d) - spec.f1(s - d)) / (2.0 * d);
            let fd2 = (spec.f1(s + d) - 2.0 * spec.f1(s) + spec.f1(s - d)) / (d * d);
            let fd3 = (spec.f1_derivatives(s + d).1 - spec.f1_derivatives(s - d).1) / (2.0 * d);
            assert_relative_eq!(p, fd1, max_relative = 1e-6, epsilon = 1e-8);
            assert_relative_eq!(pp, fd2, max_relative = 1e-4, epsilon = 1e-5);
            assert_relative_eq!(ppp, fd3, max_relative = 1e-4, epsilon = 1e-5);
        }
    }

    #[test]
    fn inflection_point_closed_forms() {
        // rbar = 1/sqrt(2 beta) for the exponential family
        let spec = unit_spec();
        let rbar = inflection_point(&spec).unwrap();
        assert_relative_eq!(rbar, 0.5f64.sqrt(), max_relative = 1e-11);
        let spec2 = PotentialSpec::new(1.0, 2.0).unwrap();
        assert_relative_eq!(inflection_point(&spec2).unwrap(), 0.5, max_relative = 1e-11);
        // F1''(rbar) = 0 by definition
        assert!(spec.f1_d2(rbar).abs() < 1e-10);
    }

    #[test]
    fn critical_strain_closed_forms() {
        let spec = unit_spec();
        assert_relative_eq!(critical_strain(0.5, &spec).unwrap(), 1.0, max_relative = 1e-11);
        let rbar = inflection_point(&spec).unwrap();
        assert_relative_eq!(critical_strain(1.0, &spec).unwrap(), rbar, max_relative = 1e-12);
        assert_relative_eq!(
            critical_strain(0.25, &spec).unwrap(),
            2.0f64.sqrt(),
            max_relative = 1e-11
        );
        assert!(critical_strain(0.0, &spec).is_err());
        assert!(critical_strain(-1.0, &spec).is_err());
    }

    #[test]
    fn derivative_bounds_closed_forms() {
        let spec = unit_spec();
        let (c1, c2, c3) = derivative_bounds(&spec).unwrap();
        assert_relative_eq!(c1, 2.0 * 0.5f64.sqrt() * (-0.5f64).exp(), max_relative = 1e-10);
        assert_relative_eq!(c2, 2.0, max_relative = 1e-12);
        // second C2 candidate: |F1''(sqrt(3/2))| = 4 e^{-3/2}
        assert_relative_eq!(spec.f1_d2((1.5f64).sqrt()).abs(), 4.0 * (-1.5f64).exp());
        // C3 oracle: max |F1'''| sits at s = sqrt(x1), x1 = (3 - sqrt(6)) / 2,
        // where |F1'''| = 4 sqrt(x1) * sqrt(6) * e^{-x1}
        let x1 = (3.0 - 6.0f64.sqrt()) / 2.0;
        let oracle = 4.0 * x1.sqrt() * 6.0f64.sqrt() * (-x1).exp();
        assert_relative_eq!(c3, oracle, max_relative = 1e-9);
    }

    #[test]
    fn derivative_bounds_hold_on_sampled_interval() {
        let spec = PotentialSpec::new(0.8, 1.7).unwrap();
        let (c1, c2, c3) = derivative_bounds(&spec).unwrap();
        let rbar = inflection_point(&spec).unwrap();
        for k in 0..10_000 {
            let s = -20.0 + 40.0 * k as f64 / 9999.0;
            let (p, pp, ppp) = spec.f1_derivatives(s);
            assert!(p.abs() <= c1 * (1.0 + 1e-12));
            assert!(pp.abs() <= c2 * (1.0 + 1e-12));
            assert!(ppp.abs() <= c3 * (1.0 + 1e-12));
            // convex well inside |s| < rbar, softening outside
            if s.abs() < rbar - 1e-9 {
                assert!(pp > 0.0);
            } else if s.abs() > rbar + 1e-9 {
                assert!(pp < 0.0);
            }
        }
    }

    #[test]
    fn profile_concavity_random_pairs() {
        let spec = PotentialSpec::new(1.4, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let a: f64 = rng.random::<f64>() * 10.0;
            let b: f64 = rng.random::<f64>() * 10.0;
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if hi - lo < 1e-12 {
                continue;
            }
            let mid = 0.5 * (lo + hi);
            let lhs = spec.f(mid).unwrap();
            let rhs = 0.5 * (spec.f(lo).unwrap() + spec.f(hi).unwrap());
            assert!(lhs >= rhs - 1e-14);
        }
    }

    #[test]
    fn moments_match_closed_forms() {
        let constant = InfluenceSpec::new(InfluenceKind::Constant);
        // d / (d - alpha) for J == 1
        assert_relative_eq!(influence_moment(1.0, 2, &constant).unwrap(), 2.0, max_relative = 1e-10);
        assert_relative_eq!(
            influence_moment(0.5, 2, &constant).unwrap(),
            4.0 / 3.0,
            max_relative = 1e-10
        );
        assert_relative_eq!(influence_moment(0.0, 2, &constant).unwrap(), 1.0, max_relative = 1e-10);
        // d / ((d - alpha)(d - alpha + 1)) for the ramp
        let ramp = InfluenceSpec::new(InfluenceKind::Ramp);
        assert_relative_eq!(
            influence_moment(1.0, 2, &ramp).unwrap(),
            2.0 / (1.0 * 2.0),
            max_relative = 1e-10
        );
        assert_relative_eq!(
            influence_moment(0.5, 3, &ramp).unwrap(),
            3.0 / (2.5 * 3.5),
            max_relative = 1e-10
        );
        assert!(influence_moment(2.0, 2, &constant).is_err());
        assert!(influence_moment(1.0, 1, &constant).is_err());
        assert!(influence_moment(-0.5, 2, &constant).is_err());
    }

    #[test]
    fn moment_monotone_in_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for infl in [
            InfluenceSpec::new(InfluenceKind::Constant),
            InfluenceSpec::new(InfluenceKind::Ramp),
        ] {
            for _ in 0..50 {
                let a: f64 = rng.random::<f64>() * 1.9;
                let b: f64 = rng.random::<f64>() * 1.9;
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                let mlo = influence_moment(lo, 2, &infl).unwrap();
                let mhi = influence_moment(hi, 2, &infl).unwrap();
                assert!(mhi >= mlo - 1e-11);
            }
        }
    }

    #[test]
    fn cbar_closed_form_and_linearity() {
        let constant = InfluenceSpec::new(InfluenceKind::Constant);
        let spec = unit_spec();
        assert_relative_eq!(cbar(&spec, &constant, 2).unwrap(), 4.0, max_relative = 1e-10);
        // halving C2 (via the rate) halves Cbar
        let half = PotentialSpec::new(1.0, 0.5).unwrap();
        assert_relative_eq!(
            cbar(&half, &constant, 2).unwrap(),
            2.0,
            max_relative = 1e-10
        );
    }

    #[test]
    fn lefm_closed_forms() {
        let spec = unit_spec();
        let constant = InfluenceSpec::new(InfluenceKind::Constant);
        let (mu, lambda, gc) = lefm_constants(&spec, &constant, 2).unwrap();
        assert_relative_eq!(mu, 1.0 / 15.0, max_relative = 1e-10);
        assert_eq!(mu, lambda);
        assert_relative_eq!(gc, 0.5, max_relative = 1e-10);
        assert!(lefm_constants(&spec, &constant, 1).is_err());
    }

    #[test]
    fn lefm_mu_equals_lambda_for_random_specs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let spec =
                PotentialSpec::new(0.1 + rng.random::<f64>() * 5.0, 0.1 + rng.random::<f64>() * 5.0)
                    .unwrap();
            for dim in [2, 3] {
                let (mu, lambda, _) =
                    lefm_constants(&spec, &InfluenceSpec::new(InfluenceKind::Ramp), dim).unwrap();
                assert_eq!(mu, lambda);
            }
        }
    }

    #[test]
    fn report_carries_exact_cbar_product() {
        let spec = unit_spec();
        let infl = InfluenceSpec::new(InfluenceKind::Constant);
        let report = constants_report(&spec, &infl, 2, 1.0).unwrap();
        let j1 = report.jbar.iter().find(|(a, _)| (*a - 1.0).abs() < 1e-14).unwrap().1;
        assert_eq!(report.cbar.unwrap(), report.c2 * j1);
        assert!(report.warnings.is_empty());
        assert!(report.lefm.is_some());
    }

    #[test]
    fn report_omits_divergent_entries_in_one_dimension() {
        let spec = unit_spec();
        let infl = InfluenceSpec::new(InfluenceKind::Constant);
        let report = constants_report(&spec, &infl, 1, 1.0).unwrap();
        assert!(report.cbar.is_none());
        assert!(report.lefm.is_none());
        assert!(!report.warnings.is_empty());
        assert!(report.jbar.iter().all(|(a, _)| *a < 1.0));
    }
}
