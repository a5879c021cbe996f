use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::context::Ctx;
use crate::error::{Error, Result};
use crate::linalg::{self, c, diag, eye, inverse, kron, mat_pow, max_abs, zeros, Mat, C64, ONE, ZERO};
use crate::repcore::{Morphism, WeightModule};
use crate::scalars::Params;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DualityKind {
    /// `𝕀 → V ⊗ V*`, `1 ↦ Σ v_i ⊗ v_i*`.
    #[serde(rename = "coevR")]
    CoevR,
    /// `V* ⊗ V → 𝕀`, `f ⊗ w ↦ f(w)`.
    #[serde(rename = "evR")]
    EvR,
    /// `𝕀 → V* ⊗ V`, `1 ↦ Σ v_i* ⊗ K^{r−1} v_i`.
    #[serde(rename = "coevL")]
    CoevL,
    /// `V ⊗ V* → 𝕀`, `v ⊗ f ↦ f(K^{1−r} v)`.
    #[serde(rename = "evL")]
    EvL,
}

impl DualityKind {
    pub const ALL: [DualityKind; 4] = [Self::CoevR, Self::EvR, Self::CoevL, Self::EvL];
}

fn ef_series(p: &Params, v: &WeightModule, w: &WeightModule, sign: f64) -> Mat {
    let n = v.dim() * w.dim();
    let q1 = p.qnum(1.0);
    let mut acc = zeros(n, n);
    let (mut en, mut fn_) = (eye(v.dim()), eye(w.dim()));
    for k in 0..p.r {
        if max_abs(&en) == 0.0 || max_abs(&fn_) == 0.0 {
            break;
        }
        let kf = k as f64;
        let coef = q1.powu(2 * k) / p.qfact(k) * p.qpow(sign * kf * (kf - 1.0) / 2.0) * sign.powi(k as i32);
        acc += kron(&en, &fn_) * coef;
        en = &v.e * en;
        fn_ = &w.f * fn_;
    }
    acc
}

fn hh_diag(p: &Params, v: &WeightModule, w: &WeightModule, sign: f64) -> Vec<C64> {
    v.weights
        .iter()
        .flat_map(|a| w.weights.iter().map(move |b| p.qpow(sign * a * b / 2.0)))
        .collect()
}

/// `R` acting on `V ⊗ W`.
pub fn rmatrix_mat(p: &Params, v: &WeightModule, w: &WeightModule) -> Mat {
    let d = hh_diag(p, v, w, 1.0);
    let mut s = ef_series(p, v, w, 1.0);
    for (i, di) in d.iter().enumerate() {
        for j in 0..s.ncols() {
            s[(i, j)] *= di;
        }
    }
    s
}

/// `R⁻¹` by the closed formula, not by inversion.
pub fn rmatrix_inv_mat(p: &Params, v: &WeightModule, w: &WeightModule) -> Mat {
    let d = hh_diag(p, v, w, -1.0);
    let mut s = ef_series(p, v, w, -1.0);
    for j in 0..s.ncols() {
        for i in 0..s.nrows() {
            s[(i, j)] *= d[j];
        }
    }
    s
}

/// The operator `K^{r−1} Σ_n c_n (−KF)^n q^{−H²/2} E^n`, whose inverse is the twist.
pub fn theta_operator(p: &Params, v: &WeightModule) -> Mat {
    let d = v.dim();
    let q1 = p.qnum(1.0);
    let mkf = -(&v.k * &v.f);
    let h2 = diag(&v.weights.iter().map(|w| p.qpow(-w * w / 2.0)).collect::<Vec<_>>());
    let mut acc = zeros(d, d);
    let (mut left, mut right) = (eye(d), eye(d));
    for n in 0..p.r {
        if max_abs(&left) == 0.0 || max_abs(&right) == 0.0 {
            break;
        }
        let nf = n as f64;
        let coef = q1.powu(2 * n) / p.qfact(n) * p.qpow(nf * (nf - 1.0) / 2.0);
        acc += &left * &h2 * &right * coef;
        left = &left * &mkf;
        right = &v.e * right;
    }
    mat_pow(&v.k, p.r - 1) * acc
}

/// `sqr(x)` on a unipotent matrix: the binomial series of `√x` about `Id`.
pub fn sqr(x: &Mat) -> Mat {
    let d = x.nrows();
    let n = eye(d) - x;
    let mut out = eye(d);
    let mut pow = n.clone();
    let mut coef = 0.5;
    for k in 0..=d {
        if max_abs(&pow) < 1e-300 || k == d {
            break;
        }
        out -= &pow * c(coef, 0.0);
        let kf = k as f64;
        coef *= (2.0 * kf + 1.0) * (2.0 * kf + 2.0) / (4.0 * (kf + 1.0) * (kf + 2.0));
        pow = &pow * &n;
    }
    out
}

/// `⟨√θ⟩` on an indecomposable with the given dimension and highest weight.
pub fn table_value(p: &Params, dim: usize, hw: f64) -> Result<C64> {
    let r = p.rf();
    let ri = p.r as usize;
    let si_value = |i: f64, k: f64| -> Result<C64> {
        if !p.is_integer(k) {
            return Err(Error::HalfTwist(format!("no half-twist row for dimension {dim}, highest weight {hw}")));
        }
        let k = k.round() as i64;
        let e = if k.rem_euclid(2) == 0 { i } else { r - 2.0 - i };
        Ok(p.qpow(e * (e + 2.0 - 2.0 * r) / 4.0))
    };
    if dim == ri {
        let g = hw - r + 1.0;
        if p.is_integer(g) && !p.is_multiple_of_r(g) {
            return Err(Error::HalfTwist(format!("dimension {dim} block with integral weight {g} is not simple")));
        }
        Ok(p.qpow((g * g - (r - 1.0) * (r - 1.0)) / 4.0))
    } else if dim < ri {
        let i = (dim - 1) as f64;
        si_value(i, (hw - i) / r)
    } else if dim == 2 * ri {
        if !p.is_integer(hw) {
            return Err(Error::HalfTwist(format!("dimension {dim} block with weight {hw}")));
        }
        let i = (2 * p.r as i64 - 2 - hw.round() as i64).rem_euclid(p.r as i64);
        if i == p.r as i64 - 1 {
            return Err(Error::HalfTwist(format!("dimension {dim} block with highest weight {hw}")));
        }
        let i = i as f64;
        si_value(i, (hw - 2.0 * r + 2.0 + i) / r)
    } else {
        Err(Error::HalfTwist(format!("no half-twist row for dimension {dim}")))
    }
}

fn from_unit(cx: &Ctx, target: Arc<WeightModule>, col: Vec<C64>) -> Morphism {
    let mat = Mat::from_column_slice(col.len(), 1, &col);
    Morphism { source: cx.unit(), target, mat }
}

fn to_unit(cx: &Ctx, source: Arc<WeightModule>, row: Vec<C64>) -> Morphism {
    let mat = Mat::from_row_slice(1, row.len(), &row);
    Morphism { source, target: cx.unit(), mat }
}

impl Ctx {
    pub fn rmatrix(&self, v: &WeightModule, w: &WeightModule) -> Result<Morphism> {
        let vw = self.tensor(v, w)?;
        Ok(Morphism { source: vw.clone(), target: vw, mat: rmatrix_mat(&self.params, v, w) })
    }

    pub fn rmatrix_inv(&self, v: &WeightModule, w: &WeightModule) -> Result<Morphism> {
        let vw = self.tensor(v, w)?;
        Ok(Morphism { source: vw.clone(), target: vw, mat: rmatrix_inv_mat(&self.params, v, w) })
    }

    /// `c_{V,W} = τ ∘ R : V ⊗ W → W ⊗ V`.
    pub fn braiding(&self, v: &WeightModule, w: &WeightModule) -> Result<Morphism> {
        let mat = self.braidings.get_or_try(&(v.label(), w.label(), false), || {
            Ok(Arc::new(linalg::swap(v.dim(), w.dim()) * rmatrix_mat(&self.params, v, w)))
        })?;
        Ok(Morphism { source: self.tensor(v, w)?, target: self.tensor(w, v)?, mat: (*mat).clone() })
    }

    /// `c_{V,W}⁻¹ = R⁻¹ ∘ τ : W ⊗ V → V ⊗ W`.
    pub fn braiding_inv(&self, v: &WeightModule, w: &WeightModule) -> Result<Morphism> {
        let mat = self.braidings.get_or_try(&(v.label(), w.label(), true), || {
            Ok(Arc::new(rmatrix_inv_mat(&self.params, v, w) * linalg::swap(w.dim(), v.dim())))
        })?;
        Ok(Morphism { source: self.tensor(w, v)?, target: self.tensor(v, w)?, mat: (*mat).clone() })
    }

    pub fn twist_mat(&self, v: &WeightModule) -> Result<Arc<Mat>> {
        self.twists.get_or_try(&v.label(), || Ok(Arc::new(inverse(&theta_operator(&self.params, v))?)))
    }

    pub fn twist(&self, v: &Arc<WeightModule>) -> Result<Morphism> {
        Ok(Morphism { source: v.clone(), target: v.clone(), mat: (*self.twist_mat(v)?).clone() })
    }

    pub fn twist_inv(&self, v: &Arc<WeightModule>) -> Result<Morphism> {
        Ok(Morphism { source: v.clone(), target: v.clone(), mat: theta_operator(&self.params, v) })
    }

    pub fn duality(&self, v: &WeightModule, kind: DualityKind) -> Result<Morphism> {
        let p = &self.params;
        let d = v.dim();
        let vs = self.dual(v)?;
        let diag_vec = |f: &dyn Fn(usize) -> C64| {
            let mut x = vec![ZERO; d * d];
            for i in 0..d {
                x[i * d + i] = f(i);
            }
            x
        };
        Ok(match kind {
            DualityKind::CoevR => from_unit(self, self.tensor(v, &vs)?, diag_vec(&|_| ONE)),
            DualityKind::EvR => to_unit(self, self.tensor(&vs, v)?, diag_vec(&|_| ONE)),
            DualityKind::CoevL => {
                from_unit(self, self.tensor(&vs, v)?, diag_vec(&|i| p.qpow((p.rf() - 1.0) * v.weights[i])))
            }
            DualityKind::EvL => {
                to_unit(self, self.tensor(v, &vs)?, diag_vec(&|i| p.qpow((1.0 - p.rf()) * v.weights[i])))
            }
        })
    }

    /// `evL ∘ coevR`.
    pub fn qdim(&self, v: &WeightModule) -> C64 {
        let p = &self.params;
        linalg::pairwise_sum(&v.weights.iter().map(|w| p.qpow((1.0 - p.rf()) * w)).collect::<Vec<_>>())
    }

    /// `√θ_V`, assembled summand by summand from the fixed table values.
    pub fn half_twist_mat(&self, v: &Arc<WeightModule>) -> Result<Arc<Mat>> {
        self.half_twists.get_or_try(&v.label(), || {
            let theta = self.twist_mat(v)?;
            let parts = self.decompose(v)?;
            let mut out = zeros(v.dim(), v.dim());
            for part in parts.iter() {
                let u = &part.summand;
                let s = table_value(&self.params, u.dim(), u.highest_weight())?;
                let block = &part.project.mat * theta.as_ref() * &part.inject.mat;
                let scaled = &block / (s * s);
                let mean = scaled.trace() / c(u.dim() as f64, 0.0);
                if (mean - ONE).norm() > 1e-6 {
                    return Err(Error::HalfTwist(format!(
                        "twist on summand {} has eigenvalue {} but the table gives {}",
                        u.label(),
                        block.trace() / c(u.dim() as f64, 0.0),
                        s * s
                    )));
                }
                out += &part.inject.mat * sqr(&scaled) * s * &part.project.mat;
            }
            Ok(Arc::new(out))
        })
    }

    pub fn half_twist(&self, v: &Arc<WeightModule>) -> Result<Morphism> {
        Ok(Morphism { source: v.clone(), target: v.clone(), mat: (*self.half_twist_mat(v)?).clone() })
    }

    /// `X_{V,W} = (√θ_{W⊗V})⁻¹ c_{V,W} (√θ_V ⊗ √θ_W)`.
    pub fn xop(&self, v: &Arc<WeightModule>, w: &Arc<WeightModule>) -> Result<Morphism> {
        let wv = self.tensor(w, v)?;
        let c = self.braiding(v, w)?;
        let outer = inverse(self.half_twist_mat(&wv)?.as_ref())?;
        let inner = kron(self.half_twist_mat(v)?.as_ref(), self.half_twist_mat(w)?.as_ref());
        Ok(Morphism { source: c.source.clone(), target: c.target.clone(), mat: outer * c.mat * inner })
    }
}
