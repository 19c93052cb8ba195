//! Library-versus-oracle comparisons on the toy fixtures.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use wildiv::ar;
use wildiv::cce;
use wildiv::fixtures;
use wildiv::inference::SignSet;
use wildiv::kclass::{KClassFit, Method};
use wildiv::robust::{self, RobustStatistic};
use wildiv::wald::{self, WaldBootstrap, WaldOptions};
use wildiv::{ClusteredDataset, Hypothesis, PartialledDesign};

use super::oracle::{self, Est, Model};

/// One compared quantity.
#[derive(Debug, Clone)]
pub struct Compared {
    pub name: String,
    pub library: f64,
    pub oracle: f64,
}

impl Compared {
    pub fn error(&self) -> f64 {
        (self.library - self.oracle).abs() / self.oracle.abs().max(1.0)
    }
}

fn est(m: Method) -> Est {
    match m {
        Method::Tsls => Est::Tsls,
        Method::Liml => Est::Liml,
        Method::Full => Est::Full,
        Method::Ba => Est::Ba,
    }
}

fn sign_rows(s: &SignSet) -> Vec<Vec<i8>> {
    s.iter().map(|g| g.to_vec()).collect()
}

struct Out(Vec<Compared>);

impl Out {
    fn push(&mut self, name: impl Into<String>, library: f64, oracle: f64) {
        self.0.push(Compared {
            name: name.into(),
            library,
            oracle,
        });
    }
    fn many(&mut self, name: &str, library: &[f64], oracle: &[f64]) {
        assert_eq!(library.len(), oracle.len(), "{name}: length");
        for (k, (a, b)) in library.iter().zip(oracle).enumerate() {
            self.push(format!("{name}[{k}]"), *a, *b);
        }
    }
}

fn sqrt_all(v: &[oracle::Q]) -> Vec<f64> {
    v.iter().map(oracle::sqrt_f).collect()
}

fn compare_dataset(tag: &str, d: &ClusteredDataset, nulls: &[f64], out: &mut Out) {
    let model = Model::new(oracle::Data::from_lib(d));
    let design = PartialledDesign::new(d).unwrap();
    let signs = SignSet::exhaustive(d.q()).unwrap();
    let g = sign_rows(&signs);
    let od = &model.d;

    for m in Method::ALL {
        let fit = KClassFit::estimate(d, &design, m, 1.0).unwrap();
        let of = model.fit(est(m), &od.y, &od.x);
        out.push(format!("{tag} {m} kappa"), fit.kappa, oracle::f(&of.kappa));
        out.many(&format!("{tag} {m} beta"), fit.beta_hat.as_slice(), &of.beta.to_f64());
        out.many(&format!("{tag} {m} gamma"), fit.gamma_hat.as_slice(), &of.gamma.to_f64());
        out.many(&format!("{tag} {m} resid"), fit.resid_unrestricted.as_slice(), &of.resid.to_f64());

        let bundle = cce::cce_matrix(&design, &fit.resid_unrestricted, &DMatrix::identity(1, 1)).unwrap();
        out.many(&format!("{tag} {m} omega_cr"), bundle.omega_cr.transpose().as_slice(), &model.omega(&of.resid).to_f64());
        out.push(format!("{tag} {m} v_hat"), bundle.v_hat[(0, 0)], oracle::f(&model.v_hat(&od.x, &of.resid).scalar()));

        for stud in [false, true] {
            let boot = WaldBootstrap::new(d, WaldOptions::new(m, stud)).unwrap();
            for &b0 in nulls {
                let hyp = Hypothesis::scalar(b0);
                let b0q = oracle::q(b0);
                let res = boot.test(&hyp, &signs, 0.1).unwrap();
                let label = format!("{tag} {m} {} b0={b0}", if stud { "T_CR" } else { "T" });
                let st = stud.then_some((&od.x, &of.resid));
                out.push(format!("{label} stat"), res.statistic, oracle::sqrt_f(&model.wald_sq(&of.beta, &b0q, st)));
                let dist = model.wald_bootstrap_sq(est(m), &b0q, stud, &g);
                out.many(&format!("{label} dist"), &res.distribution, &sqrt_all(&dist));
            }
        }
    }

    for &b0 in nulls {
        let b0v = DVector::from_element(1, b0);
        let b0m = oracle::M::col_vec(&[oracle::q(b0)]);
        let st = ar::ar_statistics_for(d, &design, &b0v, None).unwrap();
        let (ar2, cr2) = model.ar_sq(&b0m);
        out.push(format!("{tag} AR b0={b0}"), st.ar, oracle::sqrt_f(&ar2));
        if let (Some(a), Some(b)) = (st.ar_cr, cr2) {
            out.push(format!("{tag} AR_CR b0={b0}"), a, oracle::sqrt_f(&b));
        }
        let res = ar::ar_bootstrap_test(d, &b0v, false, &signs, 0.1, None).unwrap();
        out.many(&format!("{tag} AR dist b0={b0}"), &res.distribution, &sqrt_all(&model.ar_bootstrap_sq(&b0m, false, &g)));
        if d.q() > d.dz() {
            let res = ar::ar_bootstrap_test(d, &b0v, true, &signs, 0.1, None).unwrap();
            out.many(
                &format!("{tag} AR_CR dist b0={b0}"),
                &res.distribution,
                &sqrt_all(&model.ar_bootstrap_sq(&b0m, true, &g)),
            );

            let (lm, lr, bundle) = robust::robust_statistics(d, &design, &b0v).unwrap();
            let (olm, ork, oar2, olms, oars) = model.lm_parts(&b0m, &g);
            out.push(format!("{tag} LM b0={b0}"), lm, oracle::f(&olm));
            out.push(format!("{tag} rk b0={b0}"), bundle.rk.unwrap(), oracle::f(&ork));
            let ocq = oracle::cqlr(oracle::f(&oar2), oracle::f(&olm), oracle::f(&ork));
            out.push(format!("{tag} CQLR b0={b0}"), lr.unwrap(), ocq);
            let res = robust::lm_cqlr_bootstrap_test(d, &b0v, RobustStatistic::Lm, &signs, 0.1).unwrap();
            let olm_f: Vec<f64> = olms.iter().map(oracle::f).collect();
            out.many(&format!("{tag} LM dist b0={b0}"), &res.distribution, &olm_f);
            let res = robust::lm_cqlr_bootstrap_test(d, &b0v, RobustStatistic::Cqlr, &signs, 0.1).unwrap();
            let ocq_d: Vec<f64> = olms
                .iter()
                .zip(&oars)
                .map(|(l, a)| oracle::cqlr(oracle::f(a), oracle::f(l), oracle::f(&ork)))
                .collect();
            out.many(&format!("{tag} CQLR dist b0={b0}"), &res.distribution, &ocq_d);
        }
        if d.dz() == 1 {
            let res = wald::score_bootstrap_wald_test(d, b0, &signs, 0.1).unwrap();
            let (s, dist) = model.score_wald_sq(&oracle::q(b0), &g);
            out.push(format!("{tag} score-Wald b0={b0}"), res.statistic, oracle::sqrt_f(&s));
            out.many(&format!("{tag} score-Wald dist b0={b0}"), &res.distribution, &sqrt_all(&dist));
        }
    }
}

/// Null values used on the fixtures.
pub const NULLS: [f64; 3] = [0.0, 0.5, 1.25];

/// Every statistic on T1 and its two-instrument augmentation.
pub fn fixture_comparisons() -> Vec<Compared> {
    let mut out = Out(Vec::new());
    compare_dataset("T1", &fixtures::t1(), &NULLS, &mut out);
    compare_dataset("T1aug", &fixtures::t1_augmented(), &NULLS, &mut out);
    out.0
}
