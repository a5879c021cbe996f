use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::context::Ctx;
use crate::error::{Error, Result};
use crate::linalg::{self, c, eye, hermitian_eigen, inverse, kron, max_abs, singular_values, zeros, Mat, C64, ONE, ZERO};
use crate::repcore::{decompose_module, sub_module, Descriptor, Gen, Morphism, SummandWitness, WeightModule};
use crate::scalars::{Params, WEIGHT_TOL};

/// Relative residual accepted for Hermitian symmetry and compatibility.
pub const FORM_TOL: f64 = 1e-7;

/// Grid size for the rotation scans.
const ANGLE_GRID: usize = 64;

/// A Hermitian form antilinear in the first slot: `(x, y) = x^H B y`.
#[derive(Clone, Debug)]
pub struct HermitianForm {
    pub module: Arc<WeightModule>,
    pub gram: Mat,
}

fn dagger_gen(g: Gen) -> Gen {
    match g {
        Gen::E => Gen::F,
        Gen::F => Gen::E,
        Gen::K => Gen::Kinv,
        Gen::Kinv => Gen::K,
        Gen::H => Gen::H,
    }
}

fn scale_of(m: &Mat) -> f64 {
    max_abs(m).max(1.0)
}

impl HermitianForm {
    /// Builds a form and checks every invariant.
    pub fn new(module: Arc<WeightModule>, gram: Mat) -> Result<Self> {
        let f = Self { module, gram };
        f.check()?;
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn hermitian_residual(&self) -> f64 {
        max_abs(&(&self.gram - self.gram.adjoint())) / scale_of(&self.gram)
    }

    /// `max_x ‖ρ(x)^H B − B ρ(†x)‖` over the generators, relative.
    pub fn compatibility_residual(&self) -> f64 {
        let b = &self.gram;
        let m = &self.module;
        [Gen::E, Gen::F, Gen::K, Gen::H]
            .into_iter()
            .map(|g| {
                let x = m.act(g);
                let y = m.act(dagger_gen(g));
                max_abs(&(x.adjoint() * b - b * y)) / (scale_of(b) * scale_of(x).max(scale_of(y)))
            })
            .fold(0.0, f64::max)
    }

    /// `σ_min / σ_max` of the Gram matrix after symmetric diagonal
    /// equilibration, so that rescaling basis vectors does not change it.
    pub fn conditioning(&self) -> f64 {
        let n = self.gram.nrows();
        let d: Vec<f64> = (0..n)
            .map(|i| {
                let m = self.gram.row(i).iter().map(|z| z.norm()).fold(0.0, f64::max);
                if m > 0.0 { 1.0 / m.sqrt() } else { 1.0 }
            })
            .collect();
        let g = Mat::from_fn(n, n, |i, j| self.gram[(i, j)] * (d[i] * d[j]));
        let s = singular_values(&g);
        match (s.first(), s.last()) {
            (Some(&hi), Some(&lo)) if hi > 0.0 => lo / hi,
            _ => 0.0,
        }
    }

    pub fn weight_orthogonality_residual(&self) -> f64 {
        let w = &self.module.weights;
        let mut worst: f64 = 0.0;
        for i in 0..w.len() {
            for j in 0..w.len() {
                if (w[i] - w[j]).abs() > WEIGHT_TOL {
                    worst = worst.max(self.gram[(i, j)].norm());
                }
            }
        }
        worst / scale_of(&self.gram)
    }

    pub fn check(&self) -> Result<()> {
        let n = self.module.dim();
        if self.gram.shape() != (n, n) {
            return Err(Error::Mismatch(format!("Gram of shape {:?} on a module of dimension {n}", self.gram.shape())));
        }
        if n == 0 {
            return Ok(());
        }
        let checks = [
            ("not Hermitian", self.hermitian_residual(), FORM_TOL),
            ("not compatible", self.compatibility_residual(), FORM_TOL),
            ("weight spaces not orthogonal", self.weight_orthogonality_residual(), FORM_TOL),
        ];
        for (what, res, tol) in checks {
            if !(res <= tol) {
                return Err(Error::NoHermitian(format!("form on {} is {what} (residual {res:e})", self.module.label())));
            }
        }
        let cond = self.conditioning();
        if cond <= FORM_TOL.sqrt() * 1e-2 {
            return Err(Error::NoHermitian(format!(
                "form on {} is degenerate (σ_min/σ_max = {cond:e})",
                self.module.label()
            )));
        }
        Ok(())
    }

    pub fn pair(&self, x: &Mat, y: &Mat) -> C64 {
        (x.adjoint() * &self.gram * y)[(0, 0)]
    }

    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Out {
            module: Descriptor,
            gram: Vec<Vec<[f64; 2]>>,
        }
        let gram = (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| [self.gram[(i, j)].re, self.gram[(i, j)].im]).collect())
            .collect();
        serde_json::to_value(Out { module: self.module.desc.clone(), gram }).expect("serializable")
    }
}

/// A monomial `coeff · x_1 x_2 ⋯ x_k` in the generators.
#[derive(Clone, Debug, PartialEq)]
pub struct AlgWord {
    pub coeff: C64,
    pub letters: Vec<Gen>,
}

impl AlgWord {
    pub fn new(coeff: C64, letters: &[Gen]) -> Self {
        Self { coeff, letters: letters.to_vec() }
    }

    /// Matrix of the word acting on `v`.
    pub fn act(&self, v: &WeightModule) -> Mat {
        let mut m = eye(v.dim()) * self.coeff;
        for g in self.letters.iter().rev() {
            m = v.act(*g) * m;
        }
        m
    }
}

/// `†` on words: antilinear, reverses order, `E ↔ F`, `K ↔ K⁻¹`, `H ↦ H`.
pub fn dagger_alg(w: &AlgWord) -> AlgWord {
    AlgWord { coeff: w.coeff.conj(), letters: w.letters.iter().rev().map(|g| dagger_gen(*g)).collect() }
}

/// Compatible sesquilinear forms on `v` as matrices `A = Φᵀ`, `Φ ∈ Hom(conj V, V*)`.
fn sesquilinear_basis(cx: &Ctx, v: &Arc<WeightModule>) -> Result<Vec<Mat>> {
    let p = &cx.params;
    let cv = Arc::new(crate::repcore::conj_module(p, v));
    let dv = Arc::new(crate::repcore::dual_module(p, v));
    let homs = crate::repcore::hom_space_mats(p, &cv, &dv);
    if homs.is_empty() {
        return Err(Error::NoHermitian(format!("conj({0}) and ({0})* are not isomorphic", v.label())));
    }
    Ok(homs.into_iter().map(|phi| phi.transpose()).collect())
}

fn hermitian_part(a: &Mat) -> Mat {
    (a + a.adjoint()) * c(0.5, 0.0)
}

fn realvec(m: &Mat) -> Vec<f64> {
    m.iter().map(|z| z.re).chain(m.iter().map(|z| z.im)).collect()
}

/// Real basis of the compatible Hermitian forms on `v`.
pub fn hermitian_basis(cx: &Ctx, v: &Arc<WeightModule>) -> Result<Vec<Mat>> {
    let mut cands = Vec::new();
    for a in sesquilinear_basis(cx, v)? {
        cands.push(hermitian_part(&a));
        cands.push(hermitian_part(&(&a * c(0.0, 1.0))));
    }
    let cols: Vec<Vec<f64>> = cands.iter().map(realvec).collect();
    let len = cols[0].len();
    let m = DMatrix::from_fn(len, cols.len(), |i, j| cols[j][i]);
    let svd = m.clone().svd(true, false);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let u = svd.u.expect("requested U");
    let n = v.dim();
    let mut out = Vec::new();
    for k in 0..svd.singular_values.len() {
        if svd.singular_values[k] > 1e-9 * smax {
            let col = u.column(k);
            out.push(Mat::from_fn(n, n, |i, j| c(col[j * n + i], col[n * n + j * n + i])));
        }
    }
    Ok(out)
}

fn nondegenerate(m: &Mat) -> bool {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) => hi > 0.0 && lo > 1e-6 * hi,
        _ => true,
    }
}

/// Principal square root: nonnegative real part, or positive imaginary part
/// on the negative real axis.
pub fn principal_sqrt(z: C64) -> C64 {
    let s = z.sqrt();
    if s.re.abs() < 1e-14 && s.im < 0.0 {
        -s
    } else {
        s
    }
}

/// If `A⁻¹A^H` is a scalar `λ²`, returns `λ`.
pub fn hermitian_scale(a: &Mat) -> Option<C64> {
    let mu = inverse(a).ok()? * a.adjoint();
    let n = mu.nrows();
    let (mut best, mut pos) = (0.0, 0);
    for k in 0..n {
        if mu[(k, k)].norm() > best {
            best = mu[(k, k)].norm();
            pos = k;
        }
    }
    let s = mu[(pos, pos)];
    if max_abs(&(&mu - eye(n) * s)) > 1e-8 * s.norm().max(1.0) {
        return None;
    }
    Some(principal_sqrt(s))
}

/// Restriction of a Gram-like constraint to weight blocks: null space of
/// `rows` acting on the weight vectors of `weights`, computed block by block.
fn graded_null_space(weights: &[f64], rows: &Mat, row_weights: &[f64]) -> (Mat, Vec<f64>) {
    let mut cols: Vec<(f64, nalgebra::DVector<C64>)> = Vec::new();
    let mut seen: Vec<f64> = Vec::new();
    let scale = max_abs(rows).max(1e-300);
    for &w in weights {
        if seen.iter().any(|s| (s - w).abs() < WEIGHT_TOL) {
            continue;
        }
        seen.push(w);
        let ci: Vec<usize> = (0..weights.len()).filter(|&k| (weights[k] - w).abs() < WEIGHT_TOL).collect();
        let ri: Vec<usize> = (0..row_weights.len()).filter(|&k| (row_weights[k] - w).abs() < WEIGHT_TOL).collect();
        let sub = Mat::from_fn(ri.len(), ci.len(), |a, b| rows[(ri[a], ci[b])]);
        let local = max_abs(&sub);
        let ns = if ri.is_empty() || local <= 1e-9 * scale {
            eye(ci.len())
        } else {
            linalg::null_space(&sub, 1e-9 * scale / local)
        };
        for k in 0..ns.ncols() {
            let mut v = nalgebra::DVector::from_element(weights.len(), ZERO);
            for (a, &idx) in ci.iter().enumerate() {
                v[idx] = ns[(a, k)];
            }
            cols.push((w, v));
        }
    }
    cols.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut m = zeros(weights.len(), cols.len());
    for (k, (_, v)) in cols.iter().enumerate() {
        m.set_column(k, v);
    }
    (m, cols.iter().map(|x| x.0).collect())
}

fn conj_m(m: &Mat) -> Mat {
    m.map(|z| z.conj())
}

impl Ctx {
    /// Diagonal form on a module with one-dimensional weight spaces forming a
    /// single `E`/`F` string, normalized by `(v_0, v_0) = 1`.
    pub fn form_simple(&self, v: &Arc<WeightModule>) -> Result<HermitianForm> {
        let n = v.dim();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| v.weights[b].partial_cmp(&v.weights[a]).unwrap());
        for k in 1..n {
            if (v.weights[order[k - 1]] - v.weights[order[k]] - 2.0).abs() > WEIGHT_TOL {
                return Err(Error::NoHermitian(format!("{} is not a simple string module", v.label())));
            }
        }
        let mut g = vec![ZERO; n];
        if n > 0 {
            g[order[0]] = ONE;
        }
        for k in 1..n {
            let (prev, cur) = (order[k - 1], order[k]);
            let e = v.e[(prev, cur)];
            let f = v.f[(cur, prev)];
            if e.norm() < 1e-12 || f.norm() < 1e-12 {
                return Err(Error::NoHermitian(format!("{} is not simple", v.label())));
            }
            // (F v, F v) = (v, E F v)
            let val = e * g[prev] / f.conj();
            if val.im.abs() > 1e-9 * val.norm().max(1.0) {
                return Err(Error::NoHermitian(format!("{}: conj V is not isomorphic to V*", v.label())));
            }
            g[cur] = c(val.re, 0.0);
        }
        HermitianForm::new(v.clone(), linalg::diag(&g))
    }

    /// Form on `V ⊗ C^H_{kr}`: `(x, y)' = a (x, q^{krH/2} y)` with `a² = ⟨K^{−kr}⟩_V`.
    pub fn form_shifted(&self, form: &HermitianForm, k: i64) -> Result<HermitianForm> {
        let p = &self.params;
        let v = &form.module;
        let kr = k as f64 * p.rf();
        let ch = self.module(&Descriptor::CH { a: k })?;
        let target = self.tensor(v, &ch)?;
        if v.dim() == 0 {
            return HermitianForm::new(target, form.gram.clone());
        }
        let vals: Vec<C64> = v.weights.iter().map(|w| p.qpow(-kr * w)).collect();
        if vals.iter().any(|z| (z - vals[0]).norm() > 1e-9) {
            return Err(Error::NoHermitian(format!("K^(-{kr}) is not scalar on {}", v.label())));
        }
        let a = principal_sqrt(vals[0]);
        let d = linalg::diag(&v.weights.iter().map(|w| p.qpow(kr * w / 2.0)).collect::<Vec<_>>());
        HermitianForm::new(target, &form.gram * d * a)
    }

    /// Form from an isomorphism `conj V ≅ V*`, rescaled to be Hermitian.
    pub fn form_indec(&self, v: &Arc<WeightModule>) -> Result<HermitianForm> {
        let basis = sesquilinear_basis(self, v)?;
        let mut rng = self.rng_for(&format!("form_indec:{}", v.label()));
        let mut last = Error::NoHermitian(format!("no nondegenerate form on {}", v.label()));
        for _ in 0..8 {
            let mut a = zeros(v.dim(), v.dim());
            for b in &basis {
                a += b * c(rng.gen_range(-1.0..1.0), 0.0);
            }
            if !nondegenerate(&a) {
                continue;
            }
            if let Some(lam) = hermitian_scale(&a) {
                match HermitianForm::new(v.clone(), &a * lam) {
                    Ok(f) => return Ok(f),
                    Err(e) => last = e,
                }
            }
            for t in 0..ANGLE_GRID {
                let th = std::f64::consts::PI * t as f64 / ANGLE_GRID as f64;
                let h = hermitian_part(&(&a * C64::from_polar(1.0, th)));
                if nondegenerate(&h) {
                    match HermitianForm::new(v.clone(), h) {
                        Ok(f) => return Ok(f),
                        Err(e) => last = e,
                    }
                }
            }
        }
        Err(last)
    }

    /// A random nondegenerate element of the compatible Hermitian forms.
    pub fn form_generic(&self, v: &Arc<WeightModule>) -> Result<HermitianForm> {
        let basis = hermitian_basis(self, v)?;
        let mut rng = self.rng_for(&format!("form_generic:{}", v.label()));
        for _ in 0..16 {
            let mut g = zeros(v.dim(), v.dim());
            for b in &basis {
                g += b * c(rng.gen_range(-1.0..1.0), 0.0);
            }
            if let Ok(f) = HermitianForm::new(v.clone(), g) {
                return Ok(f);
            }
        }
        Err(Error::NoHermitian(format!("no nondegenerate Hermitian form found on {}", v.label())))
    }

    /// Gram of the `(a, b)` form on `P_i` in its adapted basis, unchecked.
    pub fn form_pi_gram(&self, i: u32, a: f64, b: f64) -> Result<(Arc<WeightModule>, Mat)> {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidParams(format!("form parameters must be finite reals, got ({a}, {b})")));
        }
        let pd = self.make_pi(i)?;
        let m = pd.module().clone();
        let basis = hermitian_basis(self, &m)?;
        if basis.len() != 2 {
            return Err(Error::NoHermitian(format!(
                "P_{i} has a {}-dimensional space of compatible Hermitian forms, expected 2",
                basis.len()
            )));
        }
        let lb = pd.blocks.l.end - 1;
        let hb = pd.blocks.h.end - 1;
        let sys = nalgebra::Matrix2::new(basis[0][(lb, lb)].re, basis[1][(lb, lb)].re, basis[0][(hb, hb)].re, basis[1][(hb, hb)].re);
        let x = sys
            .try_inverse()
            .ok_or_else(|| Error::NoHermitian(format!("seed pairings do not determine the form on P_{i}")))?
            * nalgebra::Vector2::new(a, b);
        let g = &basis[0] * c(x[0], 0.0) + &basis[1] * c(x[1], 0.0);
        let g = hermitian_part(&g);
        Ok((m, g))
    }

    /// The Hermitian form on `P_i` with `(w^L_{−j−r}, w^L_{−j−r}) = a` and `(w^H_{−i}, w^H_{−i}) = b`.
    pub fn form_pi(&self, i: u32, a: f64, b: f64) -> Result<HermitianForm> {
        if a == 0.0 || b == 0.0 {
            return Err(Error::InvalidParams(format!("form on P_{i} needs nonzero parameters, got ({a}, {b})")));
        }
        let (m, g) = self.form_pi_gram(i, a, b)?;
        HermitianForm::new(m, g)
    }

    /// The degenerate specialization `a = 0`.
    pub fn form_pi_degenerate(&self, i: u32, b: f64) -> Result<HermitianForm> {
        if b == 0.0 {
            return Err(Error::InvalidParams("degenerate form on P_i needs b != 0".into()));
        }
        let (m, g) = self.form_pi_gram(i, 0.0, b)?;
        Ok(HermitianForm { module: m, gram: g })
    }

    /// Quotient of the module by the radical of a (degenerate) compatible form.
    /// Returns the quotient and the radical dimension.
    pub fn radical_quotient(&self, form: &HermitianForm) -> Result<(WeightModule, usize)> {
        let m = &form.module;
        let scale = max_abs(&form.gram).max(1e-300);
        let g = &form.gram / c(scale, 0.0);
        let (rad, rad_w) = graded_null_space(&m.weights, &g, &m.weights);
        let rdim = rad.ncols();
        if let Descriptor::P { i } = m.desc {
            let expect = 2 * self.params.r as usize - i as usize - 1;
            if rdim != expect {
                return Err(Error::NoHermitian(format!("radical of dimension {rdim}, expected {expect}")));
            }
        }
        let (comp, weights) = graded_null_space(&m.weights, &rad.adjoint(), &rad_w);
        let quot = Descriptor::Opaque { label: format!("quotient of {} by a radical", m.label()) };
        let mut out = WeightModule::from_ef(
            &self.params,
            quot,
            weights,
            comp.adjoint() * &m.e * &comp,
            comp.adjoint() * &m.f * &comp,
        );
        out.degree = m.degree;
        Ok((out, rdim))
    }

    /// `(v, v') = (v, τ X_{V,W} v')_p` on `V ⊗ W`.
    pub fn form_tensor(&self, f1: &HermitianForm, f2: &HermitianForm) -> Result<HermitianForm> {
        let (v, w) = (&f1.module, &f2.module);
        let target = self.tensor(v, w)?;
        let x = self.xop(v, w)?;
        let gram = kron(&f1.gram, &f2.gram) * linalg::swap(w.dim(), v.dim()) * x.mat;
        HermitianForm::new(target, gram)
    }

    /// `C = conj(B)⁻¹` on `V*`.
    pub fn form_dual(&self, f: &HermitianForm) -> Result<HermitianForm> {
        let target = self.dual(&f.module)?;
        HermitianForm::new(target, inverse(&conj_m(&f.gram))?)
    }

    /// The form attached to a module, built from its descriptor and cached.
    pub fn form_of(&self, v: &Arc<WeightModule>) -> Result<Arc<HermitianForm>> {
        let key = v.label();
        self.forms.get_or_try(&key, || {
            let f = match &v.desc {
                Descriptor::Valpha { .. } | Descriptor::S { .. } | Descriptor::CH { .. } => self.form_simple(v)?,
                Descriptor::P { i } => self.form_pi(*i, 1.0, 1.0)?,
                Descriptor::Dual { of } => {
                    let inner = self.module(of)?;
                    self.form_dual(self.form_of(&inner)?.as_ref())?
                }
                Descriptor::Tensor { factors } if factors.len() >= 2 => {
                    let first = self.module(&factors[0])?;
                    let mut acc = (*self.form_of(&first)?).clone();
                    for d in &factors[1..] {
                        let next = self.module(d)?;
                        acc = self.form_tensor(&acc, self.form_of(&next)?.as_ref())?;
                    }
                    acc
                }
                Descriptor::Conj { of } => {
                    let inner = self.form_of(&self.module(of)?)?;
                    HermitianForm::new(v.clone(), inner.gram.transpose())
                        .or_else(|_| self.form_generic(v))?
                }
                _ => self.form_indec(v).or_else(|_| self.form_generic(v))?,
            };
            Ok(Arc::new(f))
        })
    }

    /// `f† = B_src⁻¹ f^H B_tgt`.
    pub fn adjoint(&self, f: &Morphism, src: &HermitianForm, tgt: &HermitianForm) -> Result<Morphism> {
        if src.dim() != f.mat.ncols() || tgt.dim() != f.mat.nrows() {
            return Err(Error::Mismatch("adjoint: forms do not match the morphism".into()));
        }
        let mat = inverse(&src.gram)? * f.mat.adjoint() * &tgt.gram;
        Ok(Morphism { source: f.target.clone(), target: f.source.clone(), mat })
    }

    /// Adjoint with the forms attached to source and target.
    pub fn dagger(&self, f: &Morphism) -> Result<Morphism> {
        let fs = self.form_of(&f.source)?;
        let ft = self.form_of(&f.target)?;
        self.adjoint(f, &fs, &ft)
    }

    /// Splits a Hermitian module into pairwise orthogonal Hermitian indecomposables.
    pub fn orthogonal_decompose(&self, form: &HermitianForm) -> Result<Vec<(SummandWitness, HermitianForm)>> {
        let p = &self.params;
        let v = form.module.clone();
        let n = v.dim();
        let mut rng = self.rng_for(&format!("orthogonal:{}", v.label()));
        let mut pieces: Vec<(Arc<WeightModule>, Mat, Mat)> = Vec::new();
        let mut j_cur = eye(n);
        let mut cur = v.clone();
        let mut step = 0;
        while cur.dim() > 0 {
            let g = j_cur.adjoint() * &form.gram * &j_cur;
            let parts = decompose_module(p, &cur, &mut rng)?;
            let w0 = &parts[0];
            let iota = &w0.inject.mat;
            let a0 = iota.adjoint() * &g * iota;
            let emb = if parts.len() == 1 || nondegenerate(&a0) {
                iota.clone()
            } else {
                self.rotate_into_hermitian(p, &cur, &g, &parts, &mut rng)?
            };
            let gw = emb.adjoint() * &g * &emb;
            let inject = &j_cur * &emb;
            pieces.push((w0.summand.clone(), inject, gw));
            let (rest, rest_w) = graded_null_space(&cur.weights, &(emb.adjoint() * &g), &w0.summand.weights);
            step += 1;
            let desc = Descriptor::Opaque { label: format!("orthogonal complement {step} in {}", v.label()) };
            cur = Arc::new(sub_module(p, &cur, &rest, &rest.adjoint(), rest_w, desc));
            j_cur = &j_cur * rest;
        }
        let mut out = Vec::with_capacity(pieces.len());
        for (k, (summand, inject, gw)) in pieces.into_iter().enumerate() {
            let desc = Descriptor::Opaque { label: format!("orthogonal summand {k} of {}", v.label()) };
            let mut sm = (*summand).clone();
            sm.desc = desc;
            let sm = Arc::new(sm);
            let project = inverse(&gw)? * inject.adjoint() * &form.gram;
            let witness = SummandWitness {
                ambient: v.clone(),
                summand: sm.clone(),
                inject: Morphism { source: sm.clone(), target: v.clone(), mat: inject },
                project: Morphism { source: v.clone(), target: sm.clone(), mat: project },
            };
            let hf = HermitianForm::new(sm, gw)?;
            out.push((witness, hf));
        }
        Ok(out)
    }

    /// The rotation `W'' = (h + e^{iα} Id)(W_0)` making the first summand Hermitian.
    fn rotate_into_hermitian(
        &self,
        p: &Params,
        cur: &Arc<WeightModule>,
        g: &Mat,
        parts: &[SummandWitness],
        rng: &mut impl Rng,
    ) -> Result<Mat> {
        let w0 = &parts[0];
        let iota = &w0.inject.mat;
        let rest_cols: Vec<Mat> = parts[1..].iter().map(|w| w.inject.mat.clone()).collect();
        let rest_w: Vec<f64> = parts[1..].iter().flat_map(|w| w.summand.weights.clone()).collect();
        let mut rest = zeros(cur.dim(), rest_w.len());
        let mut col = 0;
        for m in &rest_cols {
            for k in 0..m.ncols() {
                rest.set_column(col, &m.column(k));
                col += 1;
            }
        }
        let (iw, iw_weights) = graded_null_space(&cur.weights, &(rest.adjoint() * g), &rest_w);
        let wprime = Arc::new(sub_module(
            p,
            cur,
            &iw,
            &iw.adjoint(),
            iw_weights,
            Descriptor::Opaque { label: "dual complement".into() },
        ));
        let homs = crate::repcore::hom_space_mats(p, &w0.summand, &wprime);
        if homs.is_empty() {
            return Err(Error::NoHermitian("summand and its dual complement are not isomorphic".into()));
        }
        let t = iw.adjoint() * g * iota;
        // S(h) = H^H T must be Hermitian; solve for the real coefficients.
        let mut gens: Vec<(Mat, Mat)> = Vec::new();
        for h in &homs {
            for coef in [ONE, c(0.0, 1.0)] {
                let hm = h * coef;
                let s = hm.adjoint() * &t;
                gens.push((hm, s));
            }
        }
        let anti: Vec<Vec<f64>> = gens.iter().map(|(_, s)| realvec(&(s - s.adjoint()))).collect();
        let sys = DMatrix::from_fn(anti[0].len(), anti.len(), |i, j| anti[j][i]);
        let ns = linalg::real_null_space(&sys, 1e-9);
        if ns.ncols() == 0 {
            return Err(Error::NoHermitian("no Hermitian pairing between a summand and its dual complement".into()));
        }
        for _ in 0..16 {
            let mut hm = zeros(wprime.dim(), w0.summand.dim());
            let mut bw = zeros(w0.summand.dim(), w0.summand.dim());
            for k in 0..ns.ncols() {
                let x = rng.gen_range(-1.0..1.0);
                for (idx, (h, s)) in gens.iter().enumerate() {
                    let cf = c(x * ns[(idx, k)], 0.0);
                    hm += h * cf;
                    bw += s * cf;
                }
            }
            if !nondegenerate(&hm) {
                continue;
            }
            let hv = &iw * &hm;
            for t in 0..ANGLE_GRID {
                let alpha = std::f64::consts::PI * t as f64 / ANGLE_GRID as f64;
                let emb = &hv + iota * C64::from_polar(1.0, alpha);
                if nondegenerate(&(emb.adjoint() * g * &emb)) {
                    return Ok(emb);
                }
            }
            let a = iota.adjoint() * g * iota;
            let a2 = hv.adjoint() * g * &hv;
            let spec = linalg::eigenvalues(&(inverse(&bw)? * (a + a2)))?;
            return Err(Error::NoHermitian(format!("no rotation angle avoids the spectrum {spec:?}")));
        }
        Err(Error::NoHermitian("no invertible Hermitian pairing found".into()))
    }

    /// Counts of positive and negative eigenvalues of the Gram matrix.
    pub fn signature(&self, form: &HermitianForm) -> Result<(usize, usize)> {
        signature_of(&form.gram, self.params.tol)
    }
}

pub fn signature_of(gram: &Mat, tol: f64) -> Result<(usize, usize)> {
    let (vals, _) = hermitian_eigen(&hermitian_part(gram));
    let scale = vals.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    if vals.iter().any(|x| x.abs() <= tol * scale) {
        return Err(Error::NoHermitian(format!("degenerate Gram, eigenvalues {vals:?}")));
    }
    Ok((vals.iter().filter(|x| **x > 0.0).count(), vals.iter().filter(|x| **x < 0.0).count()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repcore::{gamma, same_character};
    use crate::ribbon::DualityKind;
    use crate::scalars::residual;
    use proptest::prelude::*;

    fn ctx(r: u32) -> Ctx {
        Ctx::new(Params::new(r).unwrap())
    }

    fn m(cx: &Ctx, d: Descriptor) -> Arc<WeightModule> {
        cx.module(&d).unwrap()
    }

    #[test]
    fn dagger_on_words() {
        let e = AlgWord::new(ONE, &[Gen::E]);
        assert_eq!(dagger_alg(&e), AlgWord::new(ONE, &[Gen::F]));
        let ek = AlgWord::new(c(0.0, 2.0), &[Gen::E, Gen::K]);
        assert_eq!(dagger_alg(&ek), AlgWord::new(c(0.0, -2.0), &[Gen::Kinv, Gen::F]));
        let fh = AlgWord::new(c(1.0, 1.0), &[Gen::F, Gen::H]);
        assert_eq!(dagger_alg(&dagger_alg(&fh)), fh);
    }

    #[test]
    fn simple_forms() {
        for r in 2..=5u32 {
            let cx = ctx(r);
            let rf = r as f64;
            for a in [0.5, -0.3, 1.7, 0.0, rf] {
                let f = cx.form_simple(&m(&cx, Descriptor::valpha(a))).unwrap();
                let expect = ((1.0 - a) * std::f64::consts::PI / rf).sin() / (std::f64::consts::PI / rf).sin();
                assert!(residual(f.gram[(1, 1)], c(expect, 0.0)) < 1e-12);
            }
            for n in 0..=r - 2 {
                let f = cx.form_simple(&m(&cx, Descriptor::S { n })).unwrap();
                assert!(residual(f.gram[(0, 0)], ONE) < 1e-12);
                if n >= 1 {
                    let expect = (n as f64 * std::f64::consts::PI / rf).sin() / (std::f64::consts::PI / rf).sin();
                    assert!(residual(f.gram[(1, 1)], c(expect, 0.0)) < 1e-12);
                }
            }
        }
        let cx = ctx(2);
        let f = cx.form_simple(&m(&cx, Descriptor::valpha(0.5))).unwrap();
        assert!(residual(f.gram[(1, 1)], c(0.5f64.sqrt(), 0.0)) < 1e-12);
        assert_eq!(cx.signature(&f).unwrap(), (2, 0));
    }

    #[test]
    fn signature_flips_with_alpha() {
        let cx = ctx(3);
        let sig = |a: f64| cx.signature(&cx.form_simple(&m(&cx, Descriptor::valpha(a))).unwrap()).unwrap();
        let sigs: Vec<_> = [0.5, 1.5, 2.5].iter().map(|&a| sig(a)).collect();
        assert!(sigs.iter().any(|s| s.1 > 0));
        assert!(sigs.windows(2).any(|w| w[0] != w[1]));
        assert_eq!(signature_of(&linalg::diag(&[ONE, -ONE]), 1e-9).unwrap(), (1, 1));
        assert!(signature_of(&linalg::diag(&[ONE, ZERO]), 1e-9).is_err());
    }

    #[test]
    fn shifted_forms() {
        let cx = ctx(2);
        let v0 = m(&cx, Descriptor::valpha(0.0));
        let f = cx.form_simple(&v0).unwrap();
        let same = cx.form_shifted(&f, 0).unwrap();
        assert!(max_abs(&(same.gram - &f.gram)) < 1e-12);
        let sh = cx.form_shifted(&f, 1).unwrap();
        sh.check().unwrap();
        let u = cx.form_simple(&cx.unit()).unwrap();
        for k in [-2, 1, 3] {
            let s = cx.form_shifted(&u, k).unwrap();
            assert!(residual(s.gram[(0, 0)], ONE) < 1e-12);
        }
        let cx = ctx(4);
        let f = cx.form_simple(&m(&cx, Descriptor::S { n: 2 })).unwrap();
        cx.form_shifted(&f, 1).unwrap().check().unwrap();
    }

    #[test]
    fn indec_forms_agree_with_simple_up_to_real_scalar() {
        let cx = ctx(3);
        for a in [0.5, -1.2, 3.0] {
            let v = m(&cx, Descriptor::valpha(a));
            let f1 = cx.form_simple(&v).unwrap();
            let f2 = cx.form_indec(&v).unwrap();
            let ratio = f2.gram[(0, 0)] / f1.gram[(0, 0)];
            assert!(ratio.im.abs() < 1e-9);
            assert!(max_abs(&(&f2.gram - &f1.gram * ratio)) < 1e-9);
            let basis = sesquilinear_basis(&cx, &v).unwrap();
            let lam = hermitian_scale(&basis[0]).unwrap();
            assert!((lam.norm() - 1.0).abs() < 1e-9);
        }
        let cx = ctx(2);
        let p0 = cx.make_pi(0).unwrap().module().clone();
        cx.form_indec(&p0).unwrap().check().unwrap();
    }

    #[test]
    fn pi_forms_match_closed_formulas() {
        for r in 2..=5u32 {
            let cx = ctx(r);
            let p = cx.params;
            for i in 0..=r - 2 {
                let j = r - 2 - i;
                let pd = cx.make_pi(i).unwrap();
                let bl = pd.blocks.clone();
                let (a, b) = (1.7, -0.6);
                let f = cx.form_pi(i, a, b).unwrap();
                let g = &f.gram;
                let gj = |k: u32| gamma(&p, j, k);
                let gi = |k: u32| gamma(&p, i, k);
                let prod_neg_j = |lo: u32, hi: u32| (lo..=hi).map(|mm| -gj(mm)).product::<f64>();
                assert!(residual(g[(bl.l.end - 1, bl.l.end - 1)], c(a, 0.0)) < 1e-9);
                assert!(residual(g[(bl.h.end - 1, bl.h.end - 1)], c(b, 0.0)) < 1e-9);
                for k in 0..=j {
                    let pos = bl.l.start + k as usize;
                    let expect = a / prod_neg_j(k + 1, j);
                    assert!(residual(g[(pos, pos)], c(expect, 0.0)) < 1e-8, "L diag r={r} i={i} k={k}");
                }
                for s in bl.s.clone() {
                    for t in bl.s.clone() {
                        assert!(g[(s, t)].norm() < 1e-8, "S block isotropic");
                    }
                }
                let top_l = a / prod_neg_j(1, j);
                let hs = g[(bl.h.end - 1, bl.s.end - 1)];
                assert!(residual(hs, c(top_l, 0.0)) < 1e-8);
                let rbot = bl.r.end - 1;
                let gprod_i: f64 = (1..=i).map(gi).product();
                assert!(residual(g[(rbot, rbot)], c(top_l / gprod_i, 0.0)) < 1e-8, "R bottom r={r} i={i}");
                for k in 0..=j {
                    let pos = bl.r.end - 1 - k as usize;
                    let expect = g[(rbot, rbot)] * prod_neg_j(1, k);
                    assert!(residual(g[(pos, pos)], expect) < 1e-8, "R chain r={r} i={i} k={k}");
                }
            }
        }
    }

    #[test]
    fn radical_quotients_are_simple() {
        for r in 2..=4u32 {
            let cx = ctx(r);
            for i in 0..=r - 2 {
                let f = cx.form_pi_degenerate(i, 1.0).unwrap();
                let (q, rdim) = cx.radical_quotient(&f).unwrap();
                assert_eq!(rdim, 2 * r as usize - i as usize - 1);
                assert_eq!(q.dim(), i as usize + 1);
                assert!((q.highest_weight() - i as f64).abs() < 1e-9);
                let s = make_s(&cx, i);
                assert!(same_character(&q, &s));
                let homs = crate::repcore::hom_space_mats(&cx.params, &q, &s);
                assert!(homs.iter().any(nondegenerate));
            }
        }
    }

    fn make_s(cx: &Ctx, i: u32) -> WeightModule {
        (*m(cx, Descriptor::S { n: i })).clone()
    }

    #[test]
    fn tensor_forms() {
        let cx = ctx(3);
        let v = m(&cx, Descriptor::valpha(0.5));
        let fv = cx.form_of(&v).unwrap();
        let fu = cx.form_of(&cx.unit()).unwrap();
        let t = cx.form_tensor(&fu, &fv).unwrap();
        assert!(max_abs(&(&t.gram - &fv.gram)) < 1e-9);
        // X on one-dimensional modules is the phase q^{abr²/2} √θ_a √θ_b / √θ_{a+b}.
        let p = cx.params;
        let h = |k: i64| if k.rem_euclid(2) == 0 { 0.0 } else { -3.0 / 4.0 };
        for (ka, kb) in [(1i64, -2i64), (1, 1), (1, -1), (2, 3)] {
            let a = m(&cx, Descriptor::CH { a: ka });
            let b = m(&cx, Descriptor::CH { a: kb });
            let t = cx.form_tensor(&cx.form_of(&a).unwrap(), &cx.form_of(&b).unwrap()).unwrap();
            let x = p.qpow((ka * kb) as f64 * 9.0 / 2.0 + h(ka) + h(kb) - h(ka + kb));
            assert!(t.gram[(0, 0)].im.abs() < 1e-12);
            assert!(residual(t.gram[(0, 0)], x) < 1e-12);
        }

        let cx = ctx(5);
        let s1 = m(&cx, Descriptor::S { n: 1 });
        let f1 = cx.form_of(&s1).unwrap();
        let left = cx.form_tensor(&cx.form_tensor(&f1, &f1).unwrap(), &f1).unwrap();
        let s11 = cx.tensor(&s1, &s1).unwrap();
        let right = cx.form_tensor(&f1, &cx.form_of(&s11).unwrap()).unwrap();
        assert!(max_abs(&(left.gram - right.gram)) < 1e-9);
    }

    #[test]
    fn dual_forms() {
        let cx = ctx(2);
        let v = m(&cx, Descriptor::valpha(0.5));
        let f = cx.form_of(&v).unwrap();
        let d = cx.form_dual(&f).unwrap();
        assert!(residual(d.gram[(1, 1)], c(2f64.sqrt(), 0.0)) < 1e-12);
        let dd = cx.form_dual(&d).unwrap();
        assert!(max_abs(&(dd.gram - &f.gram)) < 1e-12);
    }

    #[test]
    fn adjoint_axioms_and_ribbon() {
        let cx = ctx(3);
        let mods = [
            m(&cx, Descriptor::valpha(0.5)),
            m(&cx, Descriptor::S { n: 1 }),
            m(&cx, Descriptor::CH { a: 1 }),
        ];
        for v in &mods {
            let fv = cx.form_of(v).unwrap();
            let id = Morphism::identity(v.clone());
            assert!(max_abs(&(cx.adjoint(&id, &fv, &fv).unwrap().mat - eye(v.dim()))) < 1e-9);
            let th = cx.twist(v).unwrap();
            let thd = cx.dagger(&th).unwrap();
            assert!(max_abs(&(thd.mat * &th.mat - eye(v.dim()))) < 1e-9);

            let vs = cx.dual(v).unwrap();
            let coev_l = cx.duality(v, DualityKind::CoevL).unwrap();
            let ev_r = cx.duality(v, DualityKind::EvR).unwrap();
            assert!(max_abs(&(cx.dagger(&coev_l).unwrap().mat - &ev_r.mat)) < 1e-9);
            let ev_l = cx.duality(v, DualityKind::EvL).unwrap();
            let coev_r = cx.duality(v, DualityKind::CoevR).unwrap();
            assert!(max_abs(&(cx.dagger(&ev_l).unwrap().mat - &coev_r.mat)) < 1e-9);
            // coevR† = evR ∘ c_{V,V*} ∘ (θ ⊗ Id)
            let c = cx.braiding(v, &vs).unwrap().mat;
            let rhs = &ev_r.mat * &c * kron(&th.mat, &eye(v.dim()));
            assert!(max_abs(&(cx.dagger(&coev_r).unwrap().mat - rhs)) < 1e-9);
            // evR† = (Id ⊗ θ) ∘ c_{V,V*} ∘ coevR, on V* ⊗ V
            let rhs = kron(&eye(v.dim()), &th.mat) * &c * &coev_r.mat;
            assert!(max_abs(&(cx.dagger(&ev_r).unwrap().mat - rhs)) < 1e-9);

            for w in &mods {
                if v.dim() * w.dim() > 9 {
                    continue;
                }
                let b = cx.braiding(v, w).unwrap();
                let bd = cx.dagger(&b).unwrap();
                assert!(max_abs(&(bd.mat - cx.braiding_inv(v, w).unwrap().mat)) < 1e-9);
            }
        }
    }

    #[test]
    fn adjoint_is_contravariant_and_monoidal() {
        let cx = ctx(3);
        let v = m(&cx, Descriptor::valpha(0.0));
        let vv = cx.tensor(&v, &v).unwrap();
        let ends = cx.hom_space(&vv, &vv);
        let f = ends[0].scaled(c(0.3, 0.7));
        let g = ends[ends.len() - 1].clone();
        let fg = f.compose(&g).unwrap();
        let lhs = cx.dagger(&fg).unwrap();
        let rhs = cx.dagger(&g).unwrap().compose(&cx.dagger(&f).unwrap()).unwrap();
        assert!(max_abs(&(lhs.mat - rhs.mat)) < 1e-8);
        let ff = cx.dagger(&cx.dagger(&f).unwrap()).unwrap();
        assert!(max_abs(&(ff.mat - &f.mat)) < 1e-8);

        let a = m(&cx, Descriptor::valpha(0.5));
        let s1 = m(&cx, Descriptor::S { n: 1 });
        let ta = cx.twist(&a).unwrap();
        let ts = cx.twist(&s1).unwrap();
        let fa = cx.form_of(&a).unwrap();
        let fs = cx.form_of(&s1).unwrap();
        let ft = cx.form_tensor(&fa, &fs).unwrap();
        let tt = Morphism { source: ft.module.clone(), target: ft.module.clone(), mat: kron(&ta.mat, &ts.mat) };
        let lhs = cx.adjoint(&tt, &ft, &ft).unwrap().mat;
        let rhs = kron(&cx.adjoint(&ta, &fa, &fa).unwrap().mat, &cx.adjoint(&ts, &fs, &fs).unwrap().mat);
        assert!(max_abs(&(lhs - rhs)) < 1e-8);
    }

    #[test]
    fn orthogonal_splitting() {
        let cx = ctx(4);
        let s1 = m(&cx, Descriptor::S { n: 1 });
        let ss = cx.tensor(&s1, &s1).unwrap();
        let f = cx.form_of(&ss).unwrap();
        let parts = cx.orthogonal_decompose(&f).unwrap();
        let mut dims: Vec<usize> = parts.iter().map(|(w, _)| w.summand.dim()).collect();
        dims.sort();
        assert_eq!(dims, vec![1, 3]);
        check_orthogonal(&f, &parts);

        let cx = ctx(3);
        let v = m(&cx, Descriptor::valpha(0.0));
        let vv = cx.tensor(&v, &v).unwrap();
        let f = cx.form_of(&vv).unwrap();
        let parts = cx.orthogonal_decompose(&f).unwrap();
        assert_eq!(parts.len(), 2);
        check_orthogonal(&f, &parts);

        let single = cx.form_of(&v).unwrap();
        assert_eq!(cx.orthogonal_decompose(&single).unwrap().len(), 1);
    }

    #[test]
    fn orthogonal_splitting_of_isotypic_sum() {
        // V ⊕ V with a form pairing the two copies off-diagonally: neither
        // copy is Hermitian on its own, so the rotation is required.
        let cx = ctx(3);
        let v = m(&cx, Descriptor::valpha(0.5));
        let fv = cx.form_of(&v).unwrap();
        let n = v.dim();
        let mut e = zeros(2 * n, 2 * n);
        let mut fm = zeros(2 * n, 2 * n);
        let mut g = zeros(2 * n, 2 * n);
        e.view_mut((0, 0), (n, n)).copy_from(&v.e);
        e.view_mut((n, n), (n, n)).copy_from(&v.e);
        fm.view_mut((0, 0), (n, n)).copy_from(&v.f);
        fm.view_mut((n, n), (n, n)).copy_from(&v.f);
        g.view_mut((0, n), (n, n)).copy_from(&fv.gram);
        g.view_mut((n, 0), (n, n)).copy_from(&fv.gram);
        let mut w: Vec<f64> = v.weights.clone();
        w.extend(v.weights.iter());
        let vv = Arc::new(WeightModule::from_ef(
            &cx.params,
            Descriptor::Opaque { label: "V+V".into() },
            w,
            e,
            fm,
        ));
        let form = HermitianForm::new(vv, g).unwrap();
        let parts = cx.orthogonal_decompose(&form).unwrap();
        assert_eq!(parts.len(), 2);
        check_orthogonal(&form, &parts);
    }

    fn check_orthogonal(f: &HermitianForm, parts: &[(SummandWitness, HermitianForm)]) {
        let n = f.dim();
        let mut sum = zeros(n, n);
        for (a, (wa, ha)) in parts.iter().enumerate() {
            assert!(wa.residual() < 1e-8);
            ha.check().unwrap();
            sum += &wa.inject.mat * &wa.project.mat;
            for (b, (wb, _)) in parts.iter().enumerate() {
                if a != b {
                    let cross = wa.inject.mat.adjoint() * &f.gram * &wb.inject.mat;
                    assert!(max_abs(&cross) < 1e-8);
                }
            }
        }
        assert!(max_abs(&(sum - eye(n))) < 1e-8);
        let total: usize = parts.iter().map(|(w, _)| w.summand.dim()).sum();
        assert_eq!(total, n);
    }

    #[test]
    fn forms_of_constructed_modules() {
        let cx = ctx(3);
        let v = m(&cx, Descriptor::valpha(0.5));
        let s1 = m(&cx, Descriptor::S { n: 1 });
        let d = Descriptor::tensor(Descriptor::dual(v.desc.clone()), s1.desc.clone());
        let f = cx.form_of(&m(&cx, d)).unwrap();
        f.check().unwrap();
        let p1 = m(&cx, Descriptor::P { i: 1 });
        cx.form_of(&p1).unwrap().check().unwrap();
        let conj = m(&cx, Descriptor::conj(v.desc.clone()));
        cx.form_of(&conj).unwrap().check().unwrap();
        let vv = cx.tensor(&v, &v).unwrap();
        for part in cx.decompose(&vv).unwrap().iter() {
            cx.form_of(&part.summand).unwrap().check().unwrap();
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn simple_forms_compatible(a in -3.0f64..3.0, r in 2u32..6) {
            let cx = ctx(r);
            let a = if (a - a.round()).abs() < 1e-3 { a + 0.01 } else { a };
            let f = cx.form_simple(&m(&cx, Descriptor::valpha(a))).unwrap();
            prop_assert!(f.compatibility_residual() < 1e-9);
            let g = cx.form_indec(&f.module).unwrap();
            let ratio = g.gram[(0, 0)] / f.gram[(0, 0)];
            prop_assert!(ratio.im.abs() < 1e-8);
            prop_assert!(max_abs(&(&g.gram - &f.gram * ratio)) < 1e-8);
        }
    }
}
