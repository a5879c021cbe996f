use std::sync::Arc;

use crate::context::Ctx;
use crate::error::{Error, Result};
use crate::linalg::{c, inverse, kron, zeros, Mat, C64};
use crate::repcore::{find_isomorphism, make_valpha, Descriptor, Morphism, SummandWitness, WeightModule};
use crate::scalars::{Params, WEIGHT_TOL};

/// `P` as a retract of `V_α ⊗ W`; `witness.summand` is `P` itself.
#[derive(Clone, Debug)]
pub struct AmbientPresentation {
    pub projective: Arc<WeightModule>,
    pub alpha: f64,
    pub cofactor: Arc<WeightModule>,
    pub witness: SummandWitness,
}

impl AmbientPresentation {
    pub fn residual(&self) -> f64 {
        self.witness.residual()
    }
}

/// `(Id ⊗ evL)(f ⊗ Id)(Id ⊗ coevR)` for `f` on `V ⊗ W` with `dim V = dv`.
pub fn ptr_right_mat(p: &Params, f: &Mat, dv: usize, w: &WeightModule) -> Mat {
    let dw = w.dim();
    let mut out = zeros(dv, dv);
    for j in 0..dw {
        let s = p.qpow((1.0 - p.rf()) * w.weights[j]);
        for a in 0..dv {
            for b in 0..dv {
                out[(a, b)] += f[(a * dw + j, b * dw + j)] * s;
            }
        }
    }
    out
}

/// `(evR ⊗ Id)(Id ⊗ f)(coevL ⊗ Id)` for `f` on `V ⊗ W`.
pub fn ptr_left_mat(p: &Params, f: &Mat, v: &WeightModule, dw: usize) -> Mat {
    let mut out = zeros(dw, dw);
    for i in 0..v.dim() {
        let s = p.qpow((p.rf() - 1.0) * v.weights[i]);
        for a in 0..dw {
            for b in 0..dw {
                out[(a, b)] += f[(i * dw + a, i * dw + b)] * s;
            }
        }
    }
    out
}

fn admissible_color(p: &Params, alpha: f64) -> bool {
    !p.is_integer(alpha) || p.is_multiple_of_r(alpha)
}

/// Highest weight of `V_β` is `β + r − 1`.
fn color_of_top(p: &Params, hw: f64) -> f64 {
    hw - p.rf() + 1.0
}

impl Ctx {
    pub fn ptr_right(&self, f: &Morphism, v: &Arc<WeightModule>, w: &Arc<WeightModule>) -> Result<Morphism> {
        if f.mat.nrows() != v.dim() * w.dim() || !f.is_endo() {
            return Err(Error::Mismatch("ptr_right expects an endomorphism of V ⊗ W".into()));
        }
        Ok(Morphism { source: v.clone(), target: v.clone(), mat: ptr_right_mat(&self.params, &f.mat, v.dim(), w) })
    }

    pub fn ptr_left(&self, f: &Morphism, v: &Arc<WeightModule>, w: &Arc<WeightModule>) -> Result<Morphism> {
        if f.mat.nrows() != v.dim() * w.dim() || !f.is_endo() {
            return Err(Error::Mismatch("ptr_left expects an endomorphism of V ⊗ W".into()));
        }
        Ok(Morphism { source: w.clone(), target: w.clone(), mat: ptr_left_mat(&self.params, &f.mat, v, w.dim()) })
    }

    fn presentation_from(
        &self,
        pmod: &Arc<WeightModule>,
        alpha: f64,
        cofactor: Arc<WeightModule>,
        inject: Mat,
        project: Mat,
    ) -> Result<AmbientPresentation> {
        let va = self.module(&Descriptor::valpha(alpha))?;
        let ambient = self.tensor(&va, &cofactor)?;
        let witness = SummandWitness {
            ambient: ambient.clone(),
            summand: pmod.clone(),
            inject: Morphism { source: pmod.clone(), target: ambient.clone(), mat: inject },
            project: Morphism { source: ambient, target: pmod.clone(), mat: project },
        };
        let res = witness.residual();
        if res > 1e-6 {
            return Err(Error::Splitting { msg: format!("presentation of {}", pmod.label()), residual: res });
        }
        Ok(AmbientPresentation { projective: pmod.clone(), alpha, cofactor, witness })
    }

    /// `P ≅ V_β` for some admissible `β`, realized as `V_β ⊗ 𝕀`.
    fn simple_presentation(&self, pm: &Arc<WeightModule>) -> Option<AmbientPresentation> {
        let p = &self.params;
        if pm.dim() != p.r as usize {
            return None;
        }
        let beta = color_of_top(p, pm.highest_weight());
        if !admissible_color(p, beta) {
            return None;
        }
        let vb = make_valpha(p, beta).ok()?;
        let mut rng = self.rng_for(&format!("iso:{}:{beta}", pm.label()));
        let phi = find_isomorphism(p, pm, &vb, &mut rng)?;
        let inv = inverse(&phi).ok()?;
        self.presentation_from(pm, beta, self.unit(), phi, inv).ok()
    }

    /// `P = U ⊗ W'` with `U ≅ V_β`.
    fn factored_presentation(&self, pm: &Arc<WeightModule>) -> Option<AmbientPresentation> {
        let Descriptor::Tensor { factors } = &pm.desc else { return None };
        if factors.len() < 2 {
            return None;
        }
        let first = self.module(&factors[0]).ok()?;
        let rest_desc = if factors.len() == 2 {
            factors[1].clone()
        } else {
            Descriptor::Tensor { factors: factors[1..].to_vec() }
        };
        let rest = self.module(&rest_desc).ok()?;
        let inner = self.simple_presentation(&first)?;
        let dw = rest.dim();
        let id = crate::linalg::eye(dw);
        let inject = kron(&inner.witness.inject.mat, &id);
        let project = kron(&inner.witness.project.mat, &id);
        self.presentation_from(pm, inner.alpha, rest, inject, project).ok()
    }

    /// Searches `V_α ⊗ W` for a retract isomorphic to `pm`.
    pub fn find_presentations(&self, pm: &Arc<WeightModule>, limit: usize) -> Result<Vec<AmbientPresentation>> {
        let p = self.params;
        let rf = p.rf();
        let mut out = Vec::new();
        if let Some(pr) = self.simple_presentation(pm) {
            out.push(pr);
        }
        if out.len() < limit {
            if let Some(pr) = self.factored_presentation(pm) {
                out.push(pr);
            }
        }
        let mut cofactors: Vec<Descriptor> = Vec::new();
        for k in [0i64, -1, 1] {
            for n in 0..=p.r - 2 {
                let s = Descriptor::S { n };
                cofactors.push(if k == 0 { s } else { Descriptor::tensor(s, Descriptor::CH { a: k }) });
            }
        }
        for b in [0.0, rf, -rf] {
            cofactors.push(Descriptor::valpha(b));
        }
        let mut tried = Vec::new();
        for wd in cofactors {
            if out.len() >= limit {
                break;
            }
            let w = self.module(&wd)?;
            let mut alphas = vec![0.0, rf, -rf];
            for m in 0..(pm.dim() + w.dim()) {
                alphas.push(color_of_top(&p, pm.highest_weight()) - w.highest_weight() + 2.0 * m as f64);
            }
            let mut seen: Vec<f64> = Vec::new();
            for alpha in alphas {
                if out.len() >= limit {
                    break;
                }
                if !admissible_color(&p, alpha) || seen.iter().any(|s| (s - alpha).abs() < WEIGHT_TOL) {
                    continue;
                }
                seen.push(alpha);
                let amb_hw = alpha + rf - 1.0 + w.highest_weight();
                let amb_lw = alpha - rf + 1.0 + w.weights.iter().copied().fold(f64::INFINITY, f64::min);
                let lw = pm.weights.iter().copied().fold(f64::INFINITY, f64::min);
                if pm.highest_weight() > amb_hw + WEIGHT_TOL || lw < amb_lw - WEIGHT_TOL {
                    continue;
                }
                if !crate::repcore::same_mod2(pm.degree, alpha + rf - 1.0 + w.degree) {
                    continue;
                }
                let va = self.module(&Descriptor::valpha(alpha))?;
                let amb = self.tensor(&va, &w)?;
                tried.push(amb.label());
                let parts = self.decompose(&amb)?;
                let mut rng = self.rng_for(&format!("iso:{}:{}", pm.label(), amb.label()));
                for part in parts.iter() {
                    if let Some(phi) = find_isomorphism(&p, pm, &part.summand, &mut rng) {
                        let inv = inverse(&phi)?;
                        let inject = &part.inject.mat * &phi;
                        let project = &inv * &part.project.mat;
                        if let Ok(pr) = self.presentation_from(pm, alpha, w.clone(), inject, project) {
                            out.push(pr);
                            break;
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::NoPresentation(format!("{}; ambients tried: {}", pm.label(), tried.join(", "))));
        }
        Ok(out)
    }

    pub fn find_presentation(&self, pm: &Arc<WeightModule>) -> Result<AmbientPresentation> {
        Ok(self.find_presentations(pm, 1)?.remove(0))
    }

    /// `t(f) = d(α) ⟨ptr_R(ι f π)⟩_{V_α}`.
    pub fn mtrace_with(&self, f: &Morphism, pres: &AmbientPresentation) -> Result<C64> {
        let p = &self.params;
        let pm = &pres.projective;
        if f.mat.shape() != (pm.dim(), pm.dim()) {
            return Err(Error::Mismatch(format!("mtrace: endomorphism does not act on {}", pm.label())));
        }
        let res = pres.residual();
        if res > 1e-6 {
            return Err(Error::Splitting { msg: "invalid presentation".into(), residual: res });
        }
        let lifted = &pres.witness.inject.mat * &f.mat * &pres.witness.project.mat;
        let pt = ptr_right_mat(p, &lifted, p.r as usize, &pres.cofactor);
        let scalar = pt.trace() / c(p.rf(), 0.0);
        Ok(scalar * p.modified_dim(pres.alpha)?)
    }

    pub fn mtrace(&self, f: &Morphism) -> Result<C64> {
        let pres = self.find_presentation(&f.source)?;
        self.mtrace_with(f, &pres)
    }

    pub fn mdim(&self, pm: &Arc<WeightModule>) -> Result<C64> {
        self.mtrace(&Morphism::identity(pm.clone()))
    }

    /// `t(g ∘ f)` on `V` or `t(f ∘ g)` on `W`, whichever is projective.
    pub fn trace_pairing(&self, f: &Morphism, g: &Morphism) -> Result<C64> {
        if f.mat.shape() != (g.mat.ncols(), g.mat.nrows()) {
            return Err(Error::Mismatch("trace_pairing expects f: V → W and g: W → V".into()));
        }
        if let Ok(pres) = self.find_presentation(&f.source) {
            return self.mtrace_with(&Morphism { source: f.source.clone(), target: f.source.clone(), mat: &g.mat * &f.mat }, &pres);
        }
        if let Ok(pres) = self.find_presentation(&f.target) {
            return self.mtrace_with(&Morphism { source: f.target.clone(), target: f.target.clone(), mat: &f.mat * &g.mat }, &pres);
        }
        Err(Error::NoPresentation(format!("neither {} nor {} is projective", f.source.label(), f.target.label())))
    }

    /// `⟨f, g⟩ = t_V(f† g)` for `f, g: V → W`.
    pub fn hermitian_pairing(&self, f: &Morphism, g: &Morphism) -> Result<C64> {
        if f.mat.shape() != g.mat.shape() {
            return Err(Error::Mismatch("hermitian_pairing expects two morphisms V → W".into()));
        }
        let fd = self.dagger(f)?;
        self.trace_pairing(g, &fd)
    }
}

/// Largest deviation between a list of traces.
pub fn spread(values: &[C64]) -> f64 {
    values.iter().flat_map(|a| values.iter().map(move |b| (a - b).norm())).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eye, max_abs};
    use crate::ribbon::DualityKind;
    use crate::scalars::residual;
    use proptest::prelude::*;
    use rand::Rng;

    fn ctx(r: u32) -> Ctx {
        Ctx::new(Params::new(r).unwrap())
    }

    fn m(cx: &Ctx, d: Descriptor) -> Arc<WeightModule> {
        cx.module(&d).unwrap()
    }

    fn random_hom(cx: &Ctx, v: &Arc<WeightModule>, w: &Arc<WeightModule>, seed: &str) -> Morphism {
        let mut rng = cx.rng_for(seed);
        let basis = cx.hom_space(v, w);
        let mut mat = zeros(w.dim(), v.dim());
        for b in &basis {
            mat += &b.mat * c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        Morphism { source: v.clone(), target: w.clone(), mat }
    }

    #[test]
    fn partial_trace_examples() {
        let cx = ctx(3);
        let v = m(&cx, Descriptor::valpha(0.5));
        let s1 = m(&cx, Descriptor::S { n: 1 });
        let vw = cx.tensor(&v, &s1).unwrap();
        let id = Morphism::identity(vw.clone());
        let pr = cx.ptr_right(&id, &v, &s1).unwrap();
        assert!(max_abs(&(pr.mat - eye(3) * cx.qdim(&s1))) < 1e-12);
        let w = m(&cx, Descriptor::valpha(-0.2));
        let vw2 = cx.tensor(&s1, &w).unwrap();
        let pr = cx.ptr_right(&Morphism::identity(vw2), &s1, &w).unwrap();
        assert!(max_abs(&pr.mat) < 1e-12);
        let th = cx.twist_mat(&s1).unwrap();
        let g = cx.twist_mat(&v).unwrap();
        let f = Morphism { source: vw.clone(), target: vw.clone(), mat: kron(&g, &th) };
        let pl = cx.ptr_left(&f, &v, &s1).unwrap();
        let ptr_g: C64 = (0..3).map(|i| g[(i, i)] * cx.params.qpow((cx.params.rf() - 1.0) * v.weights[i])).sum();
        assert!(max_abs(&(pl.mat - th.as_ref() * ptr_g)) < 1e-12);
    }

    #[test]
    fn modified_dimensions() {
        for r in 2..=5u32 {
            let cx = ctx(r);
            let rf = r as f64;
            for a in [0.5, -0.3, 1.25] {
                let d = cx.mdim(&m(&cx, Descriptor::valpha(a))).unwrap();
                let expect = (a * std::f64::consts::PI / rf).sin() / (a * std::f64::consts::PI).sin();
                assert!(residual(d, c(expect, 0.0)) < 1e-9);
            }
            for k in [0i64, 1, -2] {
                let a = k as f64 * rf;
                let d = cx.mdim(&m(&cx, Descriptor::valpha(a))).unwrap();
                let sign = if (k * (r as i64 + 1)).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                assert!(residual(d, c(sign / rf, 0.0)) < 1e-9);
            }
        }
        let cx = ctx(2);
        let d = cx.mdim(&m(&cx, Descriptor::valpha(0.5))).unwrap();
        assert!(residual(d, c(0.5f64.sqrt(), 0.0)) < 1e-12);
        let cx = Ctx::new(Params::with(3, 2.5, 1e-9).unwrap());
        let d = cx.mdim(&m(&cx, Descriptor::valpha(0.5))).unwrap();
        let expect = 2.5 * (0.5 * std::f64::consts::PI / 3.0).sin();
        assert!(residual(d, c(expect, 0.0)) < 1e-12);
    }

    #[test]
    fn trace_vanishes_on_valpha_tensor_valpha() {
        let cx = ctx(3);
        let a = m(&cx, Descriptor::valpha(0.5));
        let b = m(&cx, Descriptor::valpha(0.25));
        let ab = cx.tensor(&a, &b).unwrap();
        let pres = cx.find_presentation(&ab).unwrap();
        assert!((pres.alpha - 0.5).abs() < 1e-12);
        assert!(cx.mtrace_with(&Morphism::identity(ab), &pres).unwrap().norm() < 1e-9);
    }

    #[test]
    fn presentation_independence() {
        let cx = ctx(2);
        let p0 = cx.make_pi(0).unwrap().module().clone();
        let pres = cx.find_presentations(&p0, 3).unwrap();
        assert!(pres.len() >= 2);
        let f = random_hom(&cx, &p0, &p0, "pi-end");
        let vals: Vec<C64> = pres.iter().map(|pr| cx.mtrace_with(&f, pr).unwrap()).collect();
        assert!(spread(&vals) < 1e-8, "{vals:?}");
        let ids: Vec<C64> =
            pres.iter().map(|pr| cx.mtrace_with(&Morphism::identity(p0.clone()), pr).unwrap()).collect();
        assert!(spread(&ids) < 1e-8);

        let cx = ctx(3);
        for i in 0..=1 {
            let pm = cx.make_pi(i).unwrap().module().clone();
            let pres = cx.find_presentations(&pm, 3).unwrap();
            assert!(pres.len() >= 2);
            let f = random_hom(&cx, &pm, &pm, "pi-end");
            let vals: Vec<C64> = pres.iter().map(|pr| cx.mtrace_with(&f, pr).unwrap()).collect();
            assert!(spread(&vals) < 1e-8, "{vals:?}");
        }
    }

    #[test]
    fn cyclicity_between_p0_and_tensor() {
        let cx = ctx(2);
        let p0 = cx.make_pi(0).unwrap().module().clone();
        let a = m(&cx, Descriptor::valpha(0.5));
        let b = m(&cx, Descriptor::valpha(-0.5));
        let ab = cx.tensor(&a, &b).unwrap();
        for seed in 0..4 {
            let f = random_hom(&cx, &p0, &ab, &format!("f{seed}"));
            let g = random_hom(&cx, &ab, &p0, &format!("g{seed}"));
            let gf = g.compose(&f).unwrap();
            let fg = f.compose(&g).unwrap();
            let t1 = cx.mtrace(&gf).unwrap();
            let t2 = cx.mtrace(&fg).unwrap();
            assert!((t1 - t2).norm() < 1e-8 * t1.norm().max(1.0), "{t1} vs {t2}");
            let p1 = cx.trace_pairing(&f, &g).unwrap();
            let p2 = cx.trace_pairing(&g, &f).unwrap();
            assert!((p1 - p2).norm() < 1e-8 * p1.norm().max(1.0));
        }
    }

    #[test]
    fn right_partial_trace_property() {
        // t_{U ⊗ W}(f) = t_U(ptr_R(f))
        let cx = ctx(3);
        let u = m(&cx, Descriptor::valpha(0.5));
        let w = m(&cx, Descriptor::S { n: 1 });
        let uw = cx.tensor(&u, &w).unwrap();
        let f = random_hom(&cx, &uw, &uw, "vw");
        let lhs = cx.mtrace(&f).unwrap();
        let rhs = cx.mtrace(&cx.ptr_right(&f, &u, &w).unwrap()).unwrap();
        assert!((lhs - rhs).norm() < 1e-9);
    }

    #[test]
    fn conjugation_symmetry_and_hermitian_pairing() {
        let cx = ctx(3);
        let v = m(&cx, Descriptor::valpha(0.0));
        let vv = cx.tensor(&v, &v).unwrap();
        for seed in 0..3 {
            let f = random_hom(&cx, &vv, &vv, &format!("h{seed}"));
            let t = cx.mtrace(&f).unwrap();
            let td = cx.mtrace(&cx.dagger(&f).unwrap()).unwrap();
            assert!((td - t.conj()).norm() < 1e-8);
            let g = random_hom(&cx, &vv, &vv, &format!("k{seed}"));
            let fg = cx.hermitian_pairing(&f, &g).unwrap();
            let gf = cx.hermitian_pairing(&g, &f).unwrap();
            assert!((fg - gf.conj()).norm() < 1e-8);
            assert!(cx.hermitian_pairing(&f, &f).unwrap().im.abs() < 1e-8);
        }
    }

    #[test]
    fn ev_ev_pairing() {
        for r in [2u32, 3] {
            let cx = ctx(r);
            for a in [0.5, -0.25] {
                let v = m(&cx, Descriptor::valpha(a));
                let ev = cx.duality(&v, DualityKind::EvR).unwrap();
                let val = cx.hermitian_pairing(&ev, &ev).unwrap();
                let d = cx.params.modified_dim(a).unwrap();
                assert!(residual(val, c(d, 0.0)) < 1e-9, "r={r} a={a}: {val}");
            }
        }
    }

    #[test]
    fn pairing_nondegenerate() {
        let cx = ctx(2);
        let p0 = cx.make_pi(0).unwrap().module().clone();
        let ends = cx.hom_space(&p0, &p0);
        let gram = Mat::from_fn(ends.len(), ends.len(), |i, j| cx.trace_pairing(&ends[i], &ends[j]).unwrap());
        let s = crate::linalg::singular_values(&gram);
        assert!(s.last().unwrap() > &(1e-6 * s[0]));
        let a = m(&cx, Descriptor::valpha(0.5));
        let f = Morphism::identity(a.clone());
        assert!(cx.trace_pairing(&f, &f).unwrap().norm() > 0.1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn mdim_matches_normalization(a in -2.9f64..2.9, r in 2u32..5) {
            prop_assume!((a - a.round()).abs() > 1e-2);
            let cx = ctx(r);
            let d = cx.mdim(&m(&cx, Descriptor::valpha(a))).unwrap();
            let expect = cx.params.modified_dim(a).unwrap();
            prop_assert!(residual(d, c(expect, 0.0)) < 1e-9);
        }
    }
}
