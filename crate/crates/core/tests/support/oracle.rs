//! Exact rational reference implementation for small fixtures.
//!
//! Everything is built from explicit n×n projection matrices and the joint
//! k-class formula on `[X:W]`, so it shares no code path with the library.
//! The only irrational inputs are LIML kappas, found by bisection on the
//! exact characteristic polynomial to 1e-40. Inputs are the exact values
//! of the library's `f64` data.

#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Q = BigRational;

pub fn q(v: f64) -> Q {
    BigRational::from_float(v).expect("finite")
}

pub fn qi(v: i64) -> Q {
    BigRational::from_integer(BigInt::from(v))
}

pub fn f(v: &Q) -> f64 {
    v.to_f64().expect("representable")
}

#[derive(Clone, Debug, PartialEq)]
pub struct M {
    pub r: usize,
    pub c: usize,
    pub a: Vec<Q>,
}

impl M {
    pub fn zeros(r: usize, c: usize) -> Self {
        Self { r, c, a: vec![Q::zero(); r * c] }
    }
    pub fn eye(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.a[i * n + i] = Q::one();
        }
        m
    }
    pub fn from_fn(r: usize, c: usize, mut g: impl FnMut(usize, usize) -> Q) -> Self {
        let mut a = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                a.push(g(i, j));
            }
        }
        Self { r, c, a }
    }
    pub fn at(&self, i: usize, j: usize) -> &Q {
        &self.a[i * self.c + j]
    }
    pub fn set(&mut self, i: usize, j: usize, v: Q) {
        self.a[i * self.c + j] = v;
    }
    pub fn t(&self) -> Self {
        Self::from_fn(self.c, self.r, |i, j| self.at(j, i).clone())
    }
    pub fn mul(&self, o: &M) -> Self {
        assert_eq!(self.c, o.r);
        Self::from_fn(self.r, o.c, |i, j| {
            let mut s = Q::zero();
            for k in 0..self.c {
                let x = self.at(i, k);
                if !x.is_zero() {
                    s += x * o.at(k, j);
                }
            }
            s
        })
    }
    pub fn add(&self, o: &M) -> Self {
        Self::from_fn(self.r, self.c, |i, j| self.at(i, j) + o.at(i, j))
    }
    pub fn sub(&self, o: &M) -> Self {
        Self::from_fn(self.r, self.c, |i, j| self.at(i, j) - o.at(i, j))
    }
    pub fn scale(&self, s: &Q) -> Self {
        Self::from_fn(self.r, self.c, |i, j| self.at(i, j) * s)
    }
    pub fn hcat(&self, o: &M) -> Self {
        assert_eq!(self.r, o.r);
        Self::from_fn(self.r, self.c + o.c, |i, j| {
            if j < self.c {
                self.at(i, j).clone()
            } else {
                o.at(i, j - self.c).clone()
            }
        })
    }
    pub fn cols(&self, start: usize, count: usize) -> Self {
        Self::from_fn(self.r, count, |i, j| self.at(i, start + j).clone())
    }
    pub fn rows(&self, rows: &[usize]) -> Self {
        Self::from_fn(rows.len(), self.c, |i, j| self.at(rows[i], j).clone())
    }
    /// Gauss–Jordan inverse; `None` when singular.
    pub fn inv(&self) -> Option<Self> {
        assert_eq!(self.r, self.c);
        let n = self.r;
        let mut a = self.clone();
        let mut b = M::eye(n);
        for col in 0..n {
            let piv = (col..n).find(|&i| !a.at(i, col).is_zero())?;
            if piv != col {
                for j in 0..n {
                    a.a.swap(piv * n + j, col * n + j);
                    b.a.swap(piv * n + j, col * n + j);
                }
            }
            let p = a.at(col, col).clone();
            for j in 0..n {
                let v = a.at(col, j) / &p;
                a.set(col, j, v);
                let v = b.at(col, j) / &p;
                b.set(col, j, v);
            }
            for i in 0..n {
                if i == col || a.at(i, col).is_zero() {
                    continue;
                }
                let factor = a.at(i, col).clone();
                for j in 0..n {
                    let v = a.at(i, j) - &factor * a.at(col, j);
                    a.set(i, j, v);
                    let v = b.at(i, j) - &factor * b.at(col, j);
                    b.set(i, j, v);
                }
            }
        }
        Some(b)
    }
    pub fn det2(&self) -> Q {
        assert!(self.r == 2 && self.c == 2);
        self.at(0, 0) * self.at(1, 1) - self.at(0, 1) * self.at(1, 0)
    }
    pub fn scalar(&self) -> Q {
        assert!(self.r == 1 && self.c == 1);
        self.a[0].clone()
    }
    pub fn col_vec(v: &[Q]) -> Self {
        Self::from_fn(v.len(), 1, |i, _| v[i].clone())
    }
    pub fn to_f64(&self) -> Vec<f64> {
        self.a.iter().map(f).collect()
    }
}

/// `A (A'A)^{-1} A'`.
pub fn proj(a: &M) -> M {
    let inv = a.t().mul(a).inv().expect("full column rank");
    a.mul(&inv).mul(&a.t())
}

pub fn resid_maker(a: &M) -> M {
    M::eye(a.r).sub(&proj(a))
}

/// Data with exact entries, rows grouped by cluster.
#[derive(Clone, Debug)]
pub struct Data {
    pub y: M,
    pub x: M,
    pub z: M,
    pub w: M,
    /// Row indices of each cluster.
    pub clusters: Vec<Vec<usize>>,
}

impl Data {
    pub fn n(&self) -> usize {
        self.y.r
    }
    pub fn q(&self) -> usize {
        self.clusters.len()
    }
    pub fn from_lib(d: &wildiv::ClusteredDataset) -> Self {
        let conv = |m: &nalgebra::DMatrix<f64>| M::from_fn(m.nrows(), m.ncols(), |i, j| q(m[(i, j)]));
        Self {
            y: M::from_fn(d.n(), 1, |i, _| q(d.y()[i])),
            x: conv(d.x()),
            z: conv(d.z()),
            w: conv(d.w()),
            clusters: d.ranges().iter().map(|r| r.clone().collect()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Est {
    Tsls,
    Liml,
    Full,
    Ba,
}

/// Smallest root of `det(A - k B) = 0` for 2×2 symmetric pencils, by
/// bisection to `1e-40`.
fn min_root_2x2(a: &M, b: &M) -> Q {
    let det = |k: &Q| a.sub(&b.scale(k)).det2();
    // det(A - kB) = det(B) k^2 - s k + det(A).
    let c2 = b.det2();
    let c0 = a.det2();
    let c1 = det(&Q::one()) - &c2 - &c0;
    // Polynomial c2 k^2 + c1 k + c0; the vertex bounds the smaller root.
    let vertex = -c1.clone() / (qi(2) * &c2);
    let poly = |k: &Q| &c2 * k * k + &c1 * k + &c0;
    let mut hi = vertex;
    let mut lo = hi.clone() - Q::one();
    while poly(&lo).is_negative() == poly(&hi).is_negative() {
        lo = lo.clone() - (hi.clone() - lo.clone()) * qi(2);
    }
    let tol = Q::new(BigInt::one(), BigInt::from(10).pow(40));
    let s_lo = poly(&lo).is_negative();
    while hi.clone() - lo.clone() > tol {
        let mid = (lo.clone() + hi.clone()) / qi(2);
        // Keep denominators short.
        let mid = round_to(&mid, 140);
        if poly(&mid).is_negative() == s_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) / qi(2)
}

fn round_to(v: &Q, bits: u32) -> Q {
    let scale = BigInt::one() << bits;
    let num = (v * Q::from_integer(scale.clone())).round().to_integer();
    Q::new(num, scale)
}

/// Everything about one k-class fit.
#[derive(Clone, Debug)]
pub struct Fit {
    pub kappa: Q,
    pub beta: M,
    pub gamma: M,
    pub resid: M,
}

pub struct Model {
    pub d: Data,
    pub mw: M,
    pub mzw: M,
    pub zt: M,
}

impl Model {
    pub fn new(d: Data) -> Self {
        let mw = resid_maker(&d.w);
        let mzw = resid_maker(&d.z.hcat(&d.w));
        let zt = mw.mul(&d.z);
        Self { d, mw, mzw, zt }
    }

    pub fn n(&self) -> Q {
        qi(self.d.n() as i64)
    }

    pub fn kappa(&self, est: Est, y: &M, x: &M) -> Q {
        let d = &self.d;
        let (n, dz, dw) = (d.n() as i64, d.z.c as i64, d.w.c as i64);
        let liml = || {
            let yb = y.hcat(x);
            let a = yb.t().mul(&self.mw).mul(&yb);
            let b = yb.t().mul(&self.mzw).mul(&yb);
            let k = min_root_2x2(&a, &b);
            if k < Q::one() {
                Q::one()
            } else {
                k
            }
        };
        match est {
            Est::Tsls => Q::one(),
            Est::Liml => liml(),
            Est::Full => liml() - Q::new(BigInt::one(), BigInt::from(n - dz - dw)),
            Est::Ba => Q::new(BigInt::from(n), BigInt::from(n - dz + 2)),
        }
    }

    /// Joint k-class on `[X:W]` with instruments `[Z:W]`.
    pub fn fit_with(&self, kappa: &Q, y: &M, x: &M) -> Fit {
        let xw = x.hcat(&self.d.w);
        let wk = M::eye(self.d.n()).sub(&self.mzw.scale(kappa));
        let lhs = xw.t().mul(&wk).mul(&xw);
        let rhs = xw.t().mul(&wk).mul(y);
        let coef = lhs.inv().expect("identified").mul(&rhs);
        let dx = x.c;
        let beta = M::from_fn(dx, 1, |i, _| coef.at(i, 0).clone());
        let gamma = M::from_fn(self.d.w.c, 1, |i, _| coef.at(dx + i, 0).clone());
        let resid = y.sub(&xw.mul(&coef));
        Fit {
            kappa: kappa.clone(),
            beta,
            gamma,
            resid,
        }
    }

    pub fn fit(&self, est: Est, y: &M, x: &M) -> Fit {
        self.fit_with(&self.kappa(est, y, x), y, x)
    }

    /// `S_j = sum_{i in j} Z~_i e_i`.
    pub fn scores(&self, e: &M) -> Vec<M> {
        self.d
            .clusters
            .iter()
            .map(|rows| self.zt.rows(rows).t().mul(&e.rows(rows)))
            .collect()
    }

    pub fn omega(&self, e: &M) -> M {
        let dz = self.zt.c;
        let mut o = M::zeros(dz, dz);
        for s in self.scores(e) {
            o = o.add(&s.mul(&s.t()));
        }
        o.scale(&(Q::one() / self.n()))
    }

    /// Sandwich `V` for `sqrt(n)(beta_hat - beta)` with Jacobian `Z~'X/n`.
    pub fn v_hat(&self, x: &M, e: &M) -> M {
        let n = self.n();
        let qzx = self.zt.t().mul(x).scale(&(Q::one() / &n));
        let qzz_inv = self.zt.t().mul(&self.zt).scale(&(Q::one() / &n)).inv().unwrap();
        let qh = qzx.t().mul(&qzz_inv).mul(&qzx);
        let qh_inv = qh.inv().unwrap();
        let left = qh_inv.mul(&qzx.t()).mul(&qzz_inv);
        left.mul(&self.omega(e)).mul(&left.t())
    }

    /// Squared Wald statistic for `beta = beta_0` (scalar beta).
    pub fn wald_sq(&self, beta: &M, beta_0: &Q, studentize: Option<(&M, &M)>) -> Q {
        let gap = beta.scalar() - beta_0;
        let t2 = self.n() * &gap * &gap;
        match studentize {
            None => t2,
            Some((x, e)) => t2 / self.v_hat(x, e).scalar(),
        }
    }

    /// Restricted estimates and residual at `beta = beta_0`.
    pub fn restricted(&self, beta_0: &M) -> (M, M) {
        let net = self.d.y.sub(&self.d.x.mul(beta_0));
        let w = &self.d.w;
        let gamma = w.t().mul(w).inv().unwrap().mul(&w.t()).mul(&net);
        let e = net.sub(&w.mul(&gamma));
        (gamma, e)
    }

    /// Efficient first stage: `(fitted, v~)` from OLS of X on `[Zbar, W, e_hat]`.
    pub fn first_stage(&self, e_hat: &M) -> (M, M) {
        let d = &self.d;
        let (n, dz, qn) = (d.n(), self.zt.c, d.q());
        let mut zbar = M::zeros(n, qn * dz);
        for (j, rows) in d.clusters.iter().enumerate() {
            for &i in rows {
                for k in 0..dz {
                    zbar.set(i, j * dz + k, self.zt.at(i, k).clone());
                }
            }
        }
        let reg = zbar.hcat(&d.w).hcat(e_hat);
        let coef = reg.t().mul(&reg).inv().expect("first-stage regressors").mul(&reg.t()).mul(&d.x);
        let k = zbar.c + d.w.c;
        let fitted = reg.cols(0, k).mul(&M::from_fn(k, d.x.c, |i, j| coef.at(i, j).clone()));
        let v = d.x.sub(&fitted);
        (fitted, v)
    }

    fn cluster_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.d.n()];
        for (j, rows) in self.d.clusters.iter().enumerate() {
            for &i in rows {
                out[i] = j;
            }
        }
        out
    }

    /// Squared WREC bootstrap Wald statistics at each sign vector.
    pub fn wald_bootstrap_sq(&self, est: Est, beta_0: &Q, studentize: bool, signs: &[Vec<i8>]) -> Vec<Q> {
        let d = &self.d;
        let sample = self.fit(est, &d.y, &d.x);
        let b0 = M::col_vec(&[beta_0.clone()]);
        let (gamma_r, e_r) = self.restricted(&b0);
        let (fitted, v) = self.first_stage(&sample.resid);
        let cl = self.cluster_of();
        signs
            .iter()
            .map(|g| {
                let gi = |i: usize| qi(g[cl[i]] as i64);
                let xs = M::from_fn(d.n(), d.x.c, |i, j| fitted.at(i, j) + gi(i) * v.at(i, j));
                let base = xs.mul(&b0).add(&d.w.mul(&gamma_r));
                let ys = M::from_fn(d.n(), 1, |i, _| base.at(i, 0) + gi(i) * e_r.at(i, 0));
                let fs = self.fit(est, &ys, &xs);
                let st = studentize.then_some((&xs, &fs.resid));
                self.wald_sq(&fs.beta, beta_0, st)
            })
            .collect()
    }

    /// Null-imposed scores, `f_hat` and the null CCE.
    pub fn ar_parts(&self, beta_0: &M) -> (Vec<M>, M, M) {
        let (_, e) = self.restricted(beta_0);
        let s = self.scores(&e);
        let mut fsum = M::zeros(self.zt.c, 1);
        for sj in &s {
            fsum = fsum.add(sj);
        }
        let fhat = fsum.scale(&(Q::one() / self.n()));
        (s, fhat, self.omega(&e))
    }

    fn f_star(&self, s: &[M], g: &[i8]) -> M {
        let mut acc = M::zeros(self.zt.c, 1);
        for (sj, &gj) in s.iter().zip(g) {
            acc = acc.add(&sj.scale(&qi(gj as i64)));
        }
        acc.scale(&(Q::one() / self.n()))
    }

    /// `(AR^2, AR_CR^2)` at `beta_0`.
    pub fn ar_sq(&self, beta_0: &M) -> (Q, Option<Q>) {
        let (_, fhat, om) = self.ar_parts(beta_0);
        let n = self.n();
        let ar = fhat.t().mul(&fhat).scalar() * &n;
        let cr = om.inv().map(|oi| fhat.t().mul(&oi).mul(&fhat).scalar() * &n);
        (ar, cr)
    }

    pub fn ar_bootstrap_sq(&self, beta_0: &M, studentize: bool, signs: &[Vec<i8>]) -> Vec<Q> {
        let (s, _, om) = self.ar_parts(beta_0);
        let a = if studentize { om.inv().unwrap() } else { M::eye(self.zt.c) };
        let n = self.n();
        signs
            .iter()
            .map(|g| {
                let fs = self.f_star(&s, g);
                fs.t().mul(&a).mul(&fs).scalar() * &n
            })
            .collect()
    }

    /// `(LM, rk, LM*(g) for each g)` with Omega, G and rk fixed at sample values.
    pub fn lm_parts(&self, beta_0: &M, signs: &[Vec<i8>]) -> (Q, Q, Q, Vec<Q>, Vec<Q>) {
        let d = &self.d;
        let n = self.n();
        let (s, fhat, om) = self.ar_parts(beta_0);
        let oi = om.inv().unwrap();
        let g_hat = self.zt.t().mul(&d.x).scale(&(Q::one() / &n));
        let h: Vec<M> = d.clusters.iter().map(|rows| self.zt.rows(rows).t().mul(&d.x.rows(rows))).collect();
        let dmat = |f: &M, g: Option<&[i8]>| -> M {
            let mut gamma = M::zeros(self.zt.c, self.zt.c);
            for (j, (hj, sj)) in h.iter().zip(&s).enumerate() {
                let w = g.map_or(Q::one(), |g| qi(g[j] as i64));
                gamma = gamma.add(&hj.mul(&sj.t()).scale(&w));
            }
            let gamma = gamma.scale(&(Q::one() / &n));
            g_hat.sub(&gamma.mul(&oi).mul(f))
        };
        let lm = |f: &M, dm: &M| -> Q {
            let a = dm.t().mul(&oi).mul(f);
            let b = dm.t().mul(&oi).mul(dm);
            a.t().mul(&b.inv().unwrap()).mul(&a).scalar() * &n
        };
        let d0 = dmat(&fhat, None);
        let lm0 = lm(&fhat, &d0);
        let rk = d0.t().mul(&oi).mul(&d0).scalar() * &n;
        let ar2 = fhat.t().mul(&oi).mul(&fhat).scalar() * &n;
        let mut lms = Vec::new();
        let mut ars = Vec::new();
        for g in signs {
            let fs = self.f_star(&s, g);
            let ds = dmat(&fs, Some(g));
            lms.push(lm(&fs, &ds));
            ars.push(fs.t().mul(&oi).mul(&fs).scalar() * &n);
        }
        (lm0, rk, ar2, lms, ars)
    }

    /// Score-bootstrap Wald: sample `n (beta_tsls - b0)^2` and
    /// `(sum_j g_j S_j)^2 / (n Q_ZX^2)` per sign vector.
    pub fn score_wald_sq(&self, beta_0: &Q, signs: &[Vec<i8>]) -> (Q, Vec<Q>) {
        let d = &self.d;
        let n = self.n();
        let fit = self.fit(Est::Tsls, &d.y, &d.x);
        let gap = fit.beta.scalar() - beta_0;
        let stat = &n * &gap * &gap;
        let qzx = self.zt.t().mul(&d.x).scalar() / &n;
        let (s, _, _) = self.ar_parts(&M::col_vec(&[beta_0.clone()]));
        let dist = signs
            .iter()
            .map(|g| {
                let mut acc = Q::zero();
                for (sj, &gj) in s.iter().zip(g) {
                    acc += sj.scalar() * qi(gj as i64);
                }
                &acc * &acc / (&n * &qzx * &qzx)
            })
            .collect();
        (stat, dist)
    }
}

/// Stable CQLR in floating point from exact inputs.
pub fn cqlr(ar2: f64, lm: f64, rk: f64) -> f64 {
    let a = ar2 - rk;
    let disc = (a * a + 4.0 * lm * rk).sqrt();
    if a >= 0.0 {
        0.5 * (a + disc)
    } else if disc - a == 0.0 {
        0.0
    } else {
        2.0 * lm * rk / (disc - a)
    }
}

pub fn sqrt_f(v: &Q) -> f64 {
    f(v).sqrt()
}
