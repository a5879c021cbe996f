//! Property suites behind `uqh verify`. Every check reports a residual and
//! its own tolerance (a multiple of `Params::tol`).

use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::context::Ctx;
use crate::error::{Error, Result};
use crate::hermitian::signature_of;
use crate::invariants::{
    braid_closure, constants, kinked_unknot, kirby_unknot_presentation, surgery_d0, unknot_presentation,
    SurgeryPresentation,
};
use crate::linalg::{c, eye, kron, rel_diff, zeros, Mat, C64};
use crate::mtrace::spread;
use crate::repcore::{gamma, relation_residual, same_character, Descriptor, Morphism, WeightModule};
use crate::ribbon::DualityKind;
use crate::scalars::{residual, Params};

pub const SUITES: [&str; 7] = ["relations", "yang-baxter", "ribbon", "halftwist", "hermitian", "mtrace", "invariants"];

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub suite: String,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn worst(&self) -> f64 {
        self.checks.iter().map(|c| c.residual).fold(0.0, f64::max)
    }
}

/// Accumulates checks; a failing computation becomes an infinite residual.
pub struct Checks {
    base: f64,
    pub items: Vec<Check>,
}

impl Checks {
    pub fn new(base: f64) -> Self {
        Self { base, items: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, factor: f64, value: Result<f64>) {
        let tol = factor * self.base;
        let (residual, note) = match value {
            Ok(x) if x.is_nan() => (f64::INFINITY, Some("NaN residual".to_string())),
            Ok(x) => (x, None),
            Err(e) => (f64::INFINITY, Some(e.to_string())),
        };
        self.items.push(Check { name: name.into(), residual, tol, pass: residual <= tol, note });
    }

    /// A yes/no property, reported with residual 0 or 1.
    pub fn flag(&mut self, name: impl Into<String>, value: Result<bool>) {
        self.push(name, 0.0, value.map(|ok| if ok { 0.0 } else { 1.0 }));
    }

    pub fn skip(&mut self, name: impl Into<String>, why: &str) {
        self.items.push(Check { name: name.into(), residual: 0.0, tol: 0.0, pass: true, note: Some(format!("skipped: {why}")) });
    }
}

fn seeded_alphas(cx: &Ctx, purpose: &str, n: usize) -> Vec<f64> {
    let mut rng = cx.rng_for(purpose);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let a: f64 = rng.gen_range(-3.0..3.0);
        if (a - a.round()).abs() > 0.05 {
            out.push(a);
        }
    }
    out
}

fn random_hom(cx: &Ctx, v: &Arc<WeightModule>, w: &Arc<WeightModule>, rng: &mut impl Rng) -> Morphism {
    let mut mat = zeros(w.dim(), v.dim());
    for b in cx.hom_space(v, w) {
        mat += &b.mat * c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    }
    Morphism { source: v.clone(), target: w.clone(), mat }
}

/// `V_α` for ten seeded `α`, every `S_n`, `C^H_{±r}` and every `P_i`.
pub fn corpus(cx: &Ctx) -> Vec<Descriptor> {
    let r = cx.r();
    let mut out: Vec<Descriptor> = seeded_alphas(cx, "corpus", 10).into_iter().map(Descriptor::valpha).collect();
    out.extend((0..=r - 2).map(|n| Descriptor::S { n }));
    out.push(Descriptor::CH { a: 1 });
    out.push(Descriptor::CH { a: -1 });
    out.extend((0..=r - 2).map(|i| Descriptor::P { i }));
    out
}

/// `{S_0, S_1, V_{1/2}, C^H_r}` (without `S_1` at `r = 2`).
pub fn braid_family(cx: &Ctx) -> Result<Vec<Arc<WeightModule>>> {
    let mut ds = vec![Descriptor::S { n: 0 }];
    if cx.r() >= 3 {
        ds.push(Descriptor::S { n: 1 });
    }
    ds.push(Descriptor::valpha(0.5));
    ds.push(Descriptor::CH { a: 1 });
    ds.iter().map(|d| cx.module(d)).collect()
}

fn generators(cx: &Ctx) -> Vec<Descriptor> {
    let r = cx.r();
    let mut ds = vec![Descriptor::valpha(0.5), Descriptor::valpha(0.0), Descriptor::valpha(-1.3), Descriptor::valpha(r as f64)];
    ds.extend((0..=r - 2).map(|n| Descriptor::S { n }));
    ds.push(Descriptor::CH { a: 1 });
    ds.push(Descriptor::CH { a: -1 });
    ds
}

pub fn relations(cx: &Ctx, out: &mut Checks) {
    for d in corpus(cx) {
        out.push(format!("relations {d}"), 1.0, cx.module(&d).map(|m| relation_residual(&cx.params, &m)));
    }
}

pub fn yang_baxter(cx: &Ctx, out: &mut Checks) {
    let fam = match braid_family(cx) {
        Ok(f) => f,
        Err(e) => return out.push("braid family", 10.0, Err(e)),
    };
    let br = |a: &WeightModule, b: &WeightModule| cx.braiding(a, b).map(|m| m.mat);
    for a in &fam {
        for b in &fam {
            for d in &fam {
                let label = format!("{}|{}|{}", a.label(), b.label(), d.label());
                let (da, db, dd) = (a.dim(), b.dim(), d.dim());
                out.push(format!("yang-baxter {label}"), 10.0, (|| {
                    let lhs = kron(&br(b, d)?, &eye(da)) * kron(&eye(db), &br(a, d)?) * kron(&br(a, b)?, &eye(dd));
                    let rhs = kron(&eye(dd), &br(a, b)?) * kron(&br(a, d)?, &eye(db)) * kron(&eye(da), &br(b, d)?);
                    Ok(rel_diff(&lhs, &rhs))
                })());
                out.push(format!("hexagon {label}"), 10.0, (|| {
                    let bd = cx.tensor(b, d)?;
                    let lhs = br(a, &bd)?;
                    let rhs = kron(&eye(db), &br(a, d)?) * kron(&br(a, b)?, &eye(dd));
                    let ab = cx.tensor(a, b)?;
                    let lhs2 = br(&ab, d)?;
                    let rhs2 = kron(&br(a, d)?, &eye(db)) * kron(&eye(da), &br(b, d)?);
                    Ok(rel_diff(&lhs, &rhs).max(rel_diff(&lhs2, &rhs2)))
                })());
            }
            out.push(format!("twist on tensor {}|{}", a.label(), b.label()), 10.0, (|| {
                let ab = cx.tensor(a, b)?;
                let lhs = cx.twist_mat(&ab)?;
                let rhs = kron(&*cx.twist_mat(a)?, &*cx.twist_mat(b)?) * br(b, a)? * br(a, b)?;
                Ok(rel_diff(&lhs, &rhs))
            })());
        }
    }
}

pub fn ribbon(cx: &Ctx, out: &mut Checks) {
    let p = cx.params;
    let rf = p.rf();
    for d in generators(cx) {
        out.push(format!("zigzags {d}"), 10.0, (|| {
            let v = cx.module(&d)?;
            let n = v.dim();
            let id = eye(n);
            let du = |k| cx.duality(&v, k).map(|m| m.mat);
            let (cr, er, cl, el) = (du(DualityKind::CoevR)?, du(DualityKind::EvR)?, du(DualityKind::CoevL)?, du(DualityKind::EvL)?);
            let zs = [
                kron(&id, &er) * kron(&cr, &id),
                kron(&er, &id) * kron(&id, &cr),
                kron(&el, &id) * kron(&id, &cl),
                kron(&id, &el) * kron(&cl, &id),
            ];
            let mut worst = zs.iter().map(|z| rel_diff(z, &id)).fold(0.0, f64::max);
            for k in DualityKind::ALL {
                worst = worst.max(cx.duality(&v, k)?.intertwining_residual());
            }
            let th = cx.twist_mat(&v)?;
            let cvv = cx.braiding(&v, &*cx.dual(&v)?)?.mat;
            worst = worst.max(rel_diff(&(&er * &cvv * kron(&th, &id)), &el));
            worst = worst.max(rel_diff(&(&cvv * kron(&th, &id) * &cr), &cl));
            Ok(worst)
        })());
        out.push(format!("twist natural {d}"), 10.0, (|| {
            let v = cx.module(&d)?;
            Ok(cx.twist(&v)?.intertwining_residual())
        })());
    }
    for a in [0.5, 0.0, -1.3, rf] {
        out.push(format!("twist eigenvalue V_alpha({a})"), 1.0, (|| {
            let v = cx.module(&Descriptor::valpha(a))?;
            let expect = p.qpow((a * a - (rf - 1.0) * (rf - 1.0)) / 2.0);
            Ok(rel_diff(&*cx.twist_mat(&v)?, &(eye(v.dim()) * expect)))
        })());
    }
    for a in seeded_alphas(cx, "qdim", 20) {
        out.push(format!("qdim V_alpha({a:.6})"), 1.0, cx.module(&Descriptor::valpha(a)).map(|v| cx.qdim(&v).norm()));
    }
    yang_baxter(cx, out);
}

fn phase_residual(m: &Mat, expect: C64) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    (m.trace() / c(n as f64, 0.0) - expect).norm()
}

pub fn halftwist(cx: &Ctx, out: &mut Checks) {
    let p = cx.params;
    let rf = p.rf();
    let mut mods: Vec<Descriptor> = generators(cx);
    mods.extend((0..=cx.r() - 2).map(|i| Descriptor::P { i }));
    for d in &mods {
        out.push(format!("sqrt-twist squared {d}"), 10.0, (|| {
            let v = cx.module(d)?;
            let h = cx.half_twist_mat(&v)?;
            Ok(rel_diff(&(h.as_ref() * h.as_ref()), &*cx.twist_mat(&v)?))
        })());
    }
    for a in [0.5, -0.7, 0.0, rf] {
        out.push(format!("phase V_alpha({a})"), 1.0, (|| {
            let v = cx.module(&Descriptor::valpha(a))?;
            Ok(phase_residual(&*cx.half_twist_mat(&v)?, p.qpow((a * a - (rf - 1.0) * (rf - 1.0)) / 4.0)))
        })());
    }
    for n in 0..=cx.r() - 2 {
        for k in [0i64, 1, -1] {
            out.push(format!("phase S_{n} x C^H_{k}r"), 1.0, (|| {
                let v = cx.tensor(&*cx.module(&Descriptor::S { n })?, &*cx.module(&Descriptor::CH { a: k })?)?;
                let e = if k % 2 == 0 { n as f64 } else { rf - 2.0 - n as f64 };
                Ok(phase_residual(&*cx.half_twist_mat(&v)?, p.qpow(e * (e + 2.0 - 2.0 * rf) / 4.0)))
            })());
        }
    }
    out.push("phase unit", 1.0, cx.half_twist_mat(&cx.unit()).map(|h| rel_diff(&h, &eye(1))));
    let fam = match braid_family(cx) {
        Ok(f) => f,
        Err(e) => return out.push("braid family", 10.0, Err(e)),
    };
    for a in &fam {
        for b in &fam {
            if a.dim() * b.dim() > (cx.r() * cx.r()) as usize {
                continue;
            }
            out.push(format!("X involutive {}|{}", a.label(), b.label()), 10.0, (|| {
                let x = cx.xop(a, b)?.mat;
                let y = cx.xop(b, a)?.mat;
                Ok(rel_diff(&(y * x), &eye(a.dim() * b.dim())))
            })());
            for d in &fam {
                if a.dim() * b.dim() * d.dim() > (cx.r() * cx.r() * cx.r()) as usize {
                    continue;
                }
                out.push(format!("X coherence {}|{}|{}", a.label(), b.label(), d.label()), 10.0, (|| {
                    let ba = cx.tensor(b, a)?;
                    let db = cx.tensor(d, b)?;
                    let lhs = cx.xop(&ba, d)?.mat * kron(&cx.xop(a, b)?.mat, &eye(d.dim()));
                    let rhs = cx.xop(a, &db)?.mat * kron(&eye(a.dim()), &cx.xop(b, d)?.mat);
                    Ok(rel_diff(&lhs, &rhs))
                })());
            }
        }
        out.push(format!("X with dual {}", a.label()), 10.0, (|| {
            let ad = cx.dual(a)?;
            let x = cx.xop(a, &ad)?.mat;
            let du = |k| cx.duality(a, k).map(|m| m.mat);
            let r1 = rel_diff(&(&x * du(DualityKind::CoevR)?), &du(DualityKind::CoevL)?);
            let r2 = rel_diff(&(du(DualityKind::EvR)? * &x), &du(DualityKind::EvL)?);
            Ok(r1.max(r2))
        })());
    }
}

pub fn hermitian(cx: &Ctx, out: &mut Checks) {
    for d in corpus(cx) {
        out.push(format!("compatible form {d}"), 10.0, (|| {
            let v = cx.module(&d)?;
            let f = cx.form_of(&v)?;
            Ok(f.compatibility_residual().max(f.hermitian_residual()))
        })());
    }
    let fam = match braid_family(cx) {
        Ok(f) => f,
        Err(e) => return out.push("braid family", 10.0, Err(e)),
    };
    let r2 = (cx.r() * cx.r()) as usize;
    for a in &fam {
        for b in &fam {
            if a.dim() * b.dim() > r2 {
                continue;
            }
            let label = format!("{}|{}", a.label(), b.label());
            out.push(format!("tensor form {label}"), 10.0, (|| {
                let t = cx.form_tensor(&*cx.form_of(a)?, &*cx.form_of(b)?)?;
                t.check()?;
                Ok(t.hermitian_residual().max(t.compatibility_residual()))
            })());
            out.push(format!("braiding dagger {label}"), 10.0, (|| {
                let bd = cx.dagger(&cx.braiding(a, b)?)?;
                Ok(rel_diff(&bd.mat, &cx.braiding_inv(a, b)?.mat))
            })());
            for d in &fam {
                if a.dim() * b.dim() * d.dim() > r2 * cx.r() as usize {
                    continue;
                }
                out.push(format!("tensor form associative {label}|{}", d.label()), 10.0, (|| {
                    let (fa, fb, fd) = (cx.form_of(a)?, cx.form_of(b)?, cx.form_of(d)?);
                    let left = cx.form_tensor(&cx.form_tensor(&fa, &fb)?, &fd)?;
                    let right = cx.form_tensor(&fa, &cx.form_tensor(&fb, &fd)?)?;
                    Ok(rel_diff(&left.gram, &right.gram))
                })());
            }
        }
        out.push(format!("twist dagger {}", a.label()), 10.0, (|| {
            let th = cx.twist(a)?;
            Ok(rel_diff(&(cx.dagger(&th)?.mat * &th.mat), &eye(a.dim())))
        })());
        out.push(format!("duality daggers {}", a.label()), 10.0, (|| {
            let n = a.dim();
            let du = |k| cx.duality(a, k);
            let (cr, er, cl, el) = (du(DualityKind::CoevR)?, du(DualityKind::EvR)?, du(DualityKind::CoevL)?, du(DualityKind::EvL)?);
            let th = cx.twist_mat(a)?;
            let cvv = cx.braiding(a, &*cx.dual(a)?)?.mat;
            let mut worst = rel_diff(&cx.dagger(&cl)?.mat, &er.mat);
            worst = worst.max(rel_diff(&cx.dagger(&el)?.mat, &cr.mat));
            worst = worst.max(rel_diff(&cx.dagger(&cr)?.mat, &(&er.mat * &cvv * kron(&th, &eye(n)))));
            worst = worst.max(rel_diff(&cx.dagger(&er)?.mat, &(kron(&eye(n), &th) * &cvv * &cr.mat)));
            Ok(worst)
        })());
    }
    pi_structure(cx, out);
}

/// Shape of `P_i`, the seeded form values, socle isotropy and the radical
/// of the degenerate form.
pub fn pi_structure(cx: &Ctx, out: &mut Checks) {
    let p = cx.params;
    let r = cx.r();
    for i in 0..=r - 2 {
        let j = r - 2 - i;
        out.flag(format!("P_{i} shape"), (|| {
            let pd = cx.make_pi(i)?;
            let m = pd.module();
            let mut want: Vec<f64> = Vec::new();
            for k in 0..=i {
                let w = i as f64 - 2.0 * k as f64;
                want.push(w);
                want.push(w);
            }
            for k in 0..=j {
                let w = j as f64 - 2.0 * k as f64;
                want.push(w - p.rf());
                want.push(w + p.rf());
            }
            want.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let got = m.character();
            Ok(m.dim() == 2 * r as usize
                && (m.highest_weight() - (2.0 * p.rf() - 2.0 - i as f64)).abs() < 1e-9
                && got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-9))
        })());
        out.push(format!("P_{i} seeded form"), 10.0, (|| {
            let pd = cx.make_pi(i)?;
            let bl = &pd.blocks;
            let (a, b) = (1.7, -0.6);
            let f = cx.form_pi(i, a, b)?;
            let g = &f.gram;
            let mut worst = residual(g[(bl.l.end - 1, bl.l.end - 1)], c(a, 0.0));
            worst = worst.max(residual(g[(bl.h.end - 1, bl.h.end - 1)], c(b, 0.0)));
            worst = worst.max(g[(bl.s.end - 1, bl.s.end - 1)].norm());
            let prod: f64 = (1..=j).map(|m| -gamma(&p, j, m)).product();
            worst = worst.max(residual(g[(bl.l.start, bl.l.start)], c(a / prod, 0.0)));
            Ok(worst.max(f.compatibility_residual()))
        })());
        out.push(format!("P_{i} socle isotropic"), 10.0, (|| {
            let mut rng = cx.rng_for(&format!("socle:{i}"));
            let mut worst: f64 = 0.0;
            for _ in 0..5 {
                let a = rng.gen_range(0.2..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let b = rng.gen_range(0.2..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let pd = cx.make_pi(i)?;
                let f = cx.form_pi(i, a, b)?;
                for s in pd.blocks.s.clone() {
                    for t in pd.blocks.s.clone() {
                        worst = worst.max(f.gram[(s, t)].norm());
                    }
                }
            }
            Ok(worst)
        })());
        out.flag(format!("P_{i} radical quotient"), (|| {
            let f = cx.form_pi_degenerate(i, 1.0)?;
            let (q, rdim) = cx.radical_quotient(&f)?;
            let s = cx.module(&Descriptor::S { n: i })?;
            Ok(rdim == 2 * r as usize - i as usize - 1 && same_character(&q, &s))
        })());
    }
}

pub fn mtrace(cx: &Ctx, out: &mut Checks, instances: usize) {
    let p = cx.params;
    for a in [0.5, -0.3, 1.25, 0.0, p.rf()] {
        out.push(format!("mdim V_alpha({a})"), 1.0, (|| {
            let d = cx.mdim(&cx.module(&Descriptor::valpha(a))?)?;
            let expect = if p.is_multiple_of_r(a) {
                p.modified_dim(a)?
            } else {
                p.d0 * (a * std::f64::consts::PI / p.rf()).sin() / (a * std::f64::consts::PI).sin()
            };
            Ok(residual(d, c(expect, 0.0)))
        })());
    }
    let setup = || -> Result<_> {
        let p0 = cx.make_pi(0)?.module().clone();
        let a = cx.module(&Descriptor::valpha(0.5))?;
        let b = cx.module(&Descriptor::valpha(-0.5))?;
        let ab = cx.tensor(&a, &b)?;
        let pres_p0 = cx.find_presentation(&p0)?;
        let pres_ab = cx.find_presentation(&ab)?;
        Ok((p0, ab, pres_p0, pres_ab))
    };
    match setup() {
        Err(e) => out.push("mtrace setup", 100.0, Err(e)),
        Ok((p0, ab, pres_p0, pres_ab)) => {
            out.push(format!("cyclicity x{instances}"), 100.0, (|| {
                let mut rng = cx.rng_for("cyclicity");
                let mut worst: f64 = 0.0;
                for _ in 0..instances {
                    let f = random_hom(cx, &p0, &ab, &mut rng);
                    let g = random_hom(cx, &ab, &p0, &mut rng);
                    let t1 = cx.mtrace_with(&g.compose(&f)?, &pres_p0)?;
                    let t2 = cx.mtrace_with(&f.compose(&g)?, &pres_ab)?;
                    worst = worst.max(residual(t1, t2));
                }
                Ok(worst)
            })());
            out.push(format!("conjugation symmetry x{instances}"), 100.0, (|| {
                let mut rng = cx.rng_for("dagger-trace");
                let mut worst: f64 = 0.0;
                for k in 0..instances {
                    let (m, pres) = if k % 2 == 0 { (&p0, &pres_p0) } else { (&ab, &pres_ab) };
                    let f = random_hom(cx, m, m, &mut rng);
                    let t = cx.mtrace_with(&f, pres)?;
                    let td = cx.mtrace_with(&cx.dagger(&f)?, pres)?;
                    worst = worst.max(residual(td, t.conj()));
                }
                Ok(worst)
            })());
        }
    }
    out.push(format!("partial trace x{instances}"), 100.0, (|| {
        let u = cx.module(&Descriptor::valpha(0.5))?;
        let w = cx.module(&Descriptor::S { n: cx.r() - 2 })?;
        let uw = cx.tensor(&u, &w)?;
        let parts = cx.decompose(&uw)?;
        let pres: Vec<_> = parts.iter().map(|s| cx.find_presentation(&s.summand)).collect::<Result<_>>()?;
        let pres_u = cx.find_presentation(&u)?;
        let mut rng = cx.rng_for("partial-trace");
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let f = random_hom(cx, &uw, &uw, &mut rng);
            let mut lhs = C64::new(0.0, 0.0);
            for (s, pr) in parts.iter().zip(&pres) {
                let g = s.project.compose(&f)?.compose(&s.inject)?;
                lhs += cx.mtrace_with(&g, pr)?;
            }
            let rhs = cx.mtrace_with(&cx.ptr_right(&f, &u, &w)?, &pres_u)?;
            worst = worst.max(residual(lhs, rhs));
        }
        Ok(worst)
    })());
    let mut pis = vec![0u32];
    if cx.r() >= 3 {
        pis.push(1);
    }
    for i in pis {
        out.push(format!("presentation independence P_{i}"), 100.0, (|| {
            let m = cx.make_pi(i)?.module().clone();
            let pres = cx.find_presentations(&m, 3)?;
            if pres.len() < 2 {
                return Err(Error::NoPresentation(format!("only one presentation of P_{i}")));
            }
            let mut rng = cx.rng_for("independence");
            let mut worst: f64 = 0.0;
            for _ in 0..4 {
                let f = random_hom(cx, &m, &m, &mut rng);
                let vals: Vec<C64> = pres.iter().map(|pr| cx.mtrace_with(&f, pr)).collect::<Result<_>>()?;
                worst = worst.max(spread(&vals) / 1f64.max(vals[0].norm()));
            }
            Ok(worst)
        })());
    }
    let ev_pairing = |a: f64| -> Result<f64> {
        let v = cx.module(&Descriptor::valpha(a))?;
        let ev = cx.duality(&v, DualityKind::EvR)?;
        let z = cx.hermitian_pairing(&ev, &ev)?;
        if z.im.abs() > 1e-9 * 1f64.max(z.norm()) {
            return Err(Error::Numerical(format!("<ev, ev> = {z} is not real")));
        }
        Ok(z.re)
    };
    for a in [0.5, 1.5, -0.25] {
        out.push(format!("<ev,ev> V_alpha({a})"), 1.0, (|| {
            let expect = p.d0 * (a * std::f64::consts::PI / p.rf()).sin() / (a * std::f64::consts::PI).sin();
            Ok((ev_pairing(a)? - expect).abs() / 1f64.max(expect.abs()))
        })());
    }
    out.flag("<ev,ev> changes sign over the simple family", (|| {
        let vals: Vec<f64> = [0.5, 1.5, 2.5].iter().map(|&a| ev_pairing(a)).collect::<Result<_>>()?;
        Ok(vals.iter().any(|x| *x > 0.0) && vals.iter().any(|x| *x < 0.0))
    })());
    out.flag("V_alpha form indefinite for some alpha", (|| {
        let mut sigs = Vec::new();
        for a in [0.5, 1.5, 2.5] {
            let f = cx.form_of(&cx.module(&Descriptor::valpha(a))?)?;
            sigs.push(signature_of(&f.gram, 1e-9)?);
        }
        Ok(sigs.iter().any(|s| s.0 > 0 && s.1 > 0))
    })());
}

/// `F′` anchors and, unless `r ∈ 4ℤ`, the surgery invariant checks.
pub fn invariants(cx: &Ctx, out: &mut Checks) {
    let p = cx.params;
    let rf = p.rf();
    for a in [0.5, -0.3] {
        out.push(format!("F' unknot V_alpha({a})"), 1.0, (|| {
            let (f, _) = cx.renormalized_invariant(&kinked_unknot(Descriptor::valpha(a), 0), None)?;
            Ok(residual(f, c(p.modified_dim(a)?, 0.0)))
        })());
        for k in [1i64, -1] {
            out.push(format!("F' kink {k:+} V_alpha({a})"), 1.0, (|| {
                let (f0, _) = cx.renormalized_invariant(&kinked_unknot(Descriptor::valpha(a), 0), None)?;
                let (f1, _) = cx.renormalized_invariant(&kinked_unknot(Descriptor::valpha(a), k), None)?;
                let phase = p.qpow(k as f64 * (a * a - (rf - 1.0) * (rf - 1.0)) / 2.0);
                Ok((f1 / f0 - phase).norm())
            })());
        }
    }
    for (a, b) in [(0.5, 0.25), (0.3, -0.7)] {
        out.push(format!("F' Hopf cut independence ({a}, {b})"), 10.0, (|| {
            let d = braid_closure(2, &[1, 1], &[Descriptor::valpha(a), Descriptor::valpha(b)], &[])?;
            let (x, _) = cx.renormalized_invariant(&d, Some(0))?;
            let (y, _) = cx.renormalized_invariant(&d, Some(1))?;
            Ok(residual(x, y))
        })());
    }
    if p.r.is_multiple_of(4) {
        out.flag("Z refused", Ok(matches!(cx.z_invariant(&unknot_presentation(0.5)), Err(Error::RDivisibleBy4(_)))));
        out.skip("Z", "r ∈ 4ℤ");
        return;
    }
    z_checks(cx, out, &[0.5, 0.25]);
}

/// The two `S³` presentations, conjugation symmetry and multiplicativity.
pub fn z_checks(cx: &Ctx, out: &mut Checks, alphas: &[f64]) {
    let r = cx.r();
    for &a in alphas {
        for fr in [1i64, -1] {
            out.push(format!("Z Kirby move alpha={a} framing={fr:+}"), 1e3, (|| {
                let z0 = cx.z_invariant(&unknot_presentation(a))?.value;
                let z1 = cx.z_invariant(&kirby_unknot_presentation(r, a, fr)?)?.value;
                Ok((z0 - z1).norm())
            })());
        }
    }
    out.push("Z empty surgery = eta mdim", 1.0, (|| {
        let (_, _, eta) = constants(&cx.params)?;
        let d = Params::with(r, surgery_d0(r), cx.params.tol)?.modified_dim(0.5)?;
        Ok(residual(cx.z_invariant(&unknot_presentation(0.5))?.value, c(eta * d, 0.0)))
    })());
    let corpus = || -> Result<Vec<SurgeryPresentation>> {
        Ok(vec![
            unknot_presentation(0.5),
            kirby_unknot_presentation(r, 0.5, 1)?,
            kirby_unknot_presentation(r, 0.25, -1)?,
            SurgeryPresentation::graph(kinked_unknot(Descriptor::valpha(0.3), 2)),
            SurgeryPresentation::graph(braid_closure(
                2,
                &[1, 1, 1, 1],
                &[Descriptor::valpha(0.5), Descriptor::valpha(-0.25)],
                &[1, 0],
            )?),
        ])
    };
    out.push("Z dagger is conjugate", 10.0, (|| {
        let mut worst: f64 = 0.0;
        for pres in corpus()? {
            let z = cx.z_invariant(&pres)?.value;
            let zd = cx.z_invariant(&pres.dagger(cx)?)?.value;
            worst = worst.max((zd - z.conj()).norm());
        }
        Ok(worst)
    })());
    out.push("Z multiplicative", 1.0, (|| {
        let parts = corpus()?;
        let whole = cx.z_disjoint(&parts[..3])?;
        let mut prod = C64::new(1.0, 0.0);
        for p in &parts[..3] {
            prod *= cx.z_invariant(p)?.value;
        }
        Ok((whole - prod).norm())
    })());
}

pub fn run_suite(cx: &Ctx, suite: &str) -> Result<Vec<Report>> {
    let names: Vec<&str> = match suite {
        "all" => SUITES.to_vec(),
        s if SUITES.contains(&s) => vec![s],
        s => return Err(Error::Mismatch(format!("unknown suite {s}; expected one of {} or all", SUITES.join(", ")))),
    };
    Ok(names
        .into_iter()
        .map(|name| {
            let mut out = Checks::new(cx.params.tol);
            match name {
                "relations" => relations(cx, &mut out),
                "yang-baxter" => yang_baxter(cx, &mut out),
                "ribbon" => ribbon(cx, &mut out),
                "halftwist" => halftwist(cx, &mut out),
                "hermitian" => hermitian(cx, &mut out),
                "mtrace" => mtrace(cx, &mut out, 50),
                _ => invariants(cx, &mut out),
            }
            Report { suite: name.to_string(), checks: out.items }
        })
        .collect())
}
