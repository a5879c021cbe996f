//! Colored framed tangles in Morse form, their Reshetikhin–Turaev
//! evaluation, the renormalized link invariant `F′` and the surgery
//! invariant `Z` of closed 3-manifolds.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::Ctx;
use crate::error::{Error, Result};
use crate::linalg::{apply_local, c, eye, max_abs, pairwise_sum, Mat, C64, ONE};
use crate::repcore::{same_mod2, Descriptor, Morphism, WeightModule};
use crate::ribbon::DualityKind;
use crate::scalars::Params;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Sign {
    pub fn flip(self) -> Self {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    pub fn value(self) -> i64 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }
}

/// A strand of an object: an edge id (whose color lives in the diagram) and
/// an orientation; `(V, −)` is evaluated as `V*`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strand {
    pub component: usize,
    pub sign: Sign,
}

impl Strand {
    pub fn new(component: usize, sign: Sign) -> Self {
        Self { component, sign }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Slice {
    Braid { at: usize, sign: Sign },
    Cap { at: usize, kind: DualityKind },
    Cup { at: usize, kind: DualityKind, component: usize },
    Twist { at: usize, sign: Sign },
    Coupon {
        at: usize,
        width: usize,
        outputs: Vec<Strand>,
        #[serde(with = "cmat")]
        matrix: Mat,
    },
}

impl Slice {
    fn at(&self) -> usize {
        match self {
            Slice::Braid { at, .. }
            | Slice::Cap { at, .. }
            | Slice::Cup { at, .. }
            | Slice::Twist { at, .. }
            | Slice::Coupon { at, .. } => *at,
        }
    }

    fn with_at(&self, at: usize) -> Slice {
        let mut s = self.clone();
        match &mut s {
            Slice::Braid { at: a, .. }
            | Slice::Cap { at: a, .. }
            | Slice::Cup { at: a, .. }
            | Slice::Twist { at: a, .. }
            | Slice::Coupon { at: a, .. } => *a = at,
        }
        s
    }

    /// Number of strands consumed and produced.
    fn arity(&self) -> (usize, usize) {
        match self {
            Slice::Braid { .. } => (2, 2),
            Slice::Cap { .. } => (2, 0),
            Slice::Cup { .. } => (0, 2),
            Slice::Twist { .. } => (1, 1),
            Slice::Coupon { width, outputs, .. } => (*width, outputs.len()),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Slice::Braid { .. } => "braid",
            Slice::Cap { .. } => "cap",
            Slice::Cup { .. } => "cup",
            Slice::Twist { .. } => "twist",
            Slice::Coupon { .. } => "coupon",
        }
    }
}

/// `{re, im}` entries, row-major nested lists.
pub mod cmat {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    pub struct Entry {
        pub re: f64,
        pub im: f64,
    }

    pub fn to_rows(m: &Mat) -> Vec<Vec<Entry>> {
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| Entry { re: m[(i, j)].re, im: m[(i, j)].im }).collect()).collect()
    }

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Mat, D::Error> {
        let rows: Vec<Vec<Entry>> = Vec::deserialize(d)?;
        let nr = rows.len();
        let nc = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != nc) {
            return Err(serde::de::Error::custom("ragged coupon matrix"));
        }
        Ok(Mat::from_fn(nr, nc, |i, j| c(rows[i][j].re, rows[i][j].im)))
    }
}

/// A colored framed tangle as a sequence of elementary events. Colors are
/// attached to edge ids; a surgery component may leave its color unset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SliceDiagram {
    pub components: Vec<Option<Descriptor>>,
    #[serde(default)]
    pub inputs: Vec<Strand>,
    pub slices: Vec<Slice>,
    #[serde(default)]
    pub outputs: Vec<Strand>,
}

fn derr(slice: usize, msg: impl Into<String>) -> Error {
    Error::Diagram { slice, msg: msg.into() }
}

/// Parses a diagram-shaped document; a schema violation inside `slices` is
/// reported with the index of the offending slice.
fn parse_with_slices<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match serde_json::from_value::<T>(value.clone()) {
        Ok(t) => Ok(t),
        Err(e) => {
            if let Some(slices) = value.get("slices").and_then(|v| v.as_array()) {
                for (i, sl) in slices.iter().enumerate() {
                    if let Err(se) = serde_json::from_value::<Slice>(sl.clone()) {
                        return Err(derr(i, format!("invalid slice {sl}: {se}")));
                    }
                }
            }
            Err(e.into())
        }
    }
}

impl SliceDiagram {
    pub fn from_json(text: &str) -> Result<Self> {
        parse_with_slices(text)
    }

    pub fn is_closed(&self) -> bool {
        self.inputs.is_empty() && self.outputs.is_empty()
    }

    pub fn color(&self, component: usize) -> Result<&Descriptor> {
        match self.components.get(component) {
            Some(Some(d)) => Ok(d),
            Some(None) => Err(Error::Mismatch(format!("component {component} has no color"))),
            None => Err(Error::Mismatch(format!("unknown component {component}"))),
        }
    }

    /// Object below each slice, plus the final object. Purely combinatorial.
    pub fn levels(&self) -> Result<Vec<Vec<Strand>>> {
        let known = |s: usize, st: &Strand| -> Result<()> {
            if st.component >= self.components.len() {
                return Err(derr(s, format!("unknown component {}", st.component)));
            }
            Ok(())
        };
        let mut cur = self.inputs.clone();
        for st in &cur {
            known(0, st)?;
        }
        let mut out = Vec::with_capacity(self.slices.len() + 1);
        for (s, sl) in self.slices.iter().enumerate() {
            out.push(cur.clone());
            let at = sl.at();
            let (n_in, _) = sl.arity();
            if at + n_in > cur.len() || (n_in == 0 && at > cur.len()) {
                return Err(derr(s, format!("{} at {at} exceeds an object of {} strands", sl.name(), cur.len())));
            }
            match sl {
                Slice::Braid { .. } => cur.swap(at, at + 1),
                Slice::Cap { kind, .. } => {
                    let (a, b) = (cur[at], cur[at + 1]);
                    let want = match kind {
                        DualityKind::EvR => (Sign::Minus, Sign::Plus),
                        DualityKind::EvL => (Sign::Plus, Sign::Minus),
                        _ => return Err(derr(s, format!("cap kind must be evR or evL, got {kind:?}"))),
                    };
                    if a.component != b.component {
                        return Err(derr(s, format!("cap joins components {} and {}", a.component, b.component)));
                    }
                    if (a.sign, b.sign) != want {
                        return Err(derr(s, format!("cap {kind:?} needs orientations {want:?}")));
                    }
                    cur.drain(at..at + 2);
                }
                Slice::Cup { kind, component, .. } => {
                    let st = |sg| Strand::new(*component, sg);
                    known(s, &st(Sign::Plus))?;
                    let pair = match kind {
                        DualityKind::CoevR => [st(Sign::Plus), st(Sign::Minus)],
                        DualityKind::CoevL => [st(Sign::Minus), st(Sign::Plus)],
                        _ => return Err(derr(s, format!("cup kind must be coevR or coevL, got {kind:?}"))),
                    };
                    cur.splice(at..at, pair);
                }
                Slice::Twist { .. } => {}
                Slice::Coupon { width, outputs, matrix, .. } => {
                    for st in outputs {
                        known(s, st)?;
                    }
                    let _ = (width, matrix);
                    cur.splice(at..at + width, outputs.iter().copied());
                }
            }
        }
        if cur != self.outputs {
            return Err(derr(self.slices.len(), "final object does not match the declared outputs"));
        }
        out.push(cur);
        Ok(out)
    }

    /// Signed crossings `(a, b, ±1)` between components, and twist counts.
    fn crossings(&self) -> Result<(Vec<(usize, usize, i64)>, HashMap<usize, i64>)> {
        let levels = self.levels()?;
        let mut xs = Vec::new();
        let mut twists: HashMap<usize, i64> = HashMap::new();
        for (sl, obj) in self.slices.iter().zip(&levels) {
            match sl {
                Slice::Braid { at, sign } => {
                    let (a, b) = (obj[*at], obj[*at + 1]);
                    xs.push((a.component, b.component, sign.value() * a.sign.value() * b.sign.value()));
                }
                Slice::Twist { at, sign } => *twists.entry(obj[*at].component).or_default() += sign.value(),
                _ => {}
            }
        }
        Ok((xs, twists))
    }

    /// Blackboard framing plus explicit twists.
    pub fn framing(&self, component: usize) -> Result<i64> {
        let (xs, tw) = self.crossings()?;
        let writhe: i64 = xs.iter().filter(|(a, b, _)| *a == component && *b == component).map(|x| x.2).sum();
        Ok(writhe + tw.get(&component).copied().unwrap_or(0))
    }

    /// Twice the linking number of two distinct components.
    pub fn double_linking(&self, i: usize, j: usize) -> Result<i64> {
        let (xs, _) = self.crossings()?;
        Ok(xs.iter().filter(|(a, b, _)| (*a == i && *b == j) || (*a == j && *b == i)).map(|x| x.2).sum())
    }

    /// Components that actually occur in the diagram.
    pub fn used_components(&self) -> Result<Vec<usize>> {
        let mut used = vec![false; self.components.len()];
        for obj in self.levels()? {
            for st in obj {
                used[st.component] = true;
            }
        }
        Ok((0..used.len()).filter(|&i| used[i]).collect())
    }
}

/// Trace closure of a braid word on `n` strands. Letters are `±(i+1)` for
/// `σ_i^{±1}`; `colors` has one entry per cycle of the permutation, in order
/// of the smallest strand; `framings` adds twists on each bottom strand.
pub fn braid_closure(n: usize, word: &[i32], colors: &[Descriptor], framings: &[i64]) -> Result<SliceDiagram> {
    let mut perm: Vec<usize> = (0..n).collect();
    for &l in word {
        let i = l.unsigned_abs() as usize;
        if l == 0 || i >= n {
            return Err(Error::Mismatch(format!("braid letter {l} on {n} strands")));
        }
        perm.swap(i - 1, i);
    }
    // perm[k] = bottom strand arriving at top position k
    let mut comp = vec![usize::MAX; n];
    let mut ncomp = 0;
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut k = s;
        while comp[k] == usize::MAX {
            comp[k] = ncomp;
            k = perm[k];
        }
        ncomp += 1;
    }
    if colors.len() != ncomp {
        return Err(Error::Mismatch(format!("closure has {ncomp} components, {} colors given", colors.len())));
    }
    let mut slices = Vec::new();
    for (k, &cp) in comp.iter().enumerate() {
        slices.push(Slice::Cup { at: k, kind: DualityKind::CoevR, component: cp });
    }
    for (k, &f) in framings.iter().enumerate().take(n) {
        let sign = if f >= 0 { Sign::Plus } else { Sign::Minus };
        for _ in 0..f.unsigned_abs() {
            slices.push(Slice::Twist { at: k, sign });
        }
    }
    for &l in word {
        let sign = if l > 0 { Sign::Plus } else { Sign::Minus };
        slices.push(Slice::Braid { at: l.unsigned_abs() as usize - 1, sign });
    }
    for k in (0..n).rev() {
        slices.push(Slice::Cap { at: k, kind: DualityKind::EvL });
    }
    Ok(SliceDiagram { components: colors.iter().cloned().map(Some).collect(), inputs: vec![], slices, outputs: vec![] })
}

/// Unknot with `kinks` curls (each realized by a self-crossing).
pub fn kinked_unknot(color: Descriptor, kinks: i64) -> SliceDiagram {
    let mut slices = vec![Slice::Cup { at: 0, kind: DualityKind::CoevR, component: 0 }];
    let sign = if kinks >= 0 { Sign::Plus } else { Sign::Minus };
    for _ in 0..kinks.unsigned_abs() {
        slices.push(Slice::Cup { at: 1, kind: DualityKind::CoevR, component: 0 });
        slices.push(Slice::Braid { at: 0, sign });
        slices.push(Slice::Cap { at: 1, kind: DualityKind::EvL });
    }
    slices.push(Slice::Cap { at: 0, kind: DualityKind::EvL });
    SliceDiagram { components: vec![Some(color)], inputs: vec![], slices, outputs: vec![] }
}

impl Ctx {
    fn strand_module(&self, d: &SliceDiagram, st: &Strand) -> Result<Arc<WeightModule>> {
        let m = self.module(d.color(st.component)?)?;
        match st.sign {
            Sign::Plus => Ok(m),
            Sign::Minus => self.dual(&m),
        }
    }

    fn object_module(&self, d: &SliceDiagram, obj: &[Strand]) -> Result<Arc<WeightModule>> {
        let mut acc: Option<Arc<WeightModule>> = None;
        for st in obj {
            let m = self.strand_module(d, st)?;
            acc = Some(match acc {
                None => m,
                Some(a) => self.tensor(&a, &m)?,
            });
        }
        Ok(acc.unwrap_or_else(|| self.unit()))
    }

    /// Structural checks that need colors: every used edge is colored and
    /// coupons preserve the total degree.
    pub fn check_diagram(&self, d: &SliceDiagram) -> Result<Vec<Vec<Strand>>> {
        let levels = d.levels()?;
        let deg = |st: &Strand| -> Result<f64> {
            let m = self.module(d.color(st.component)?)?;
            Ok(st.sign.value() as f64 * m.degree)
        };
        for (s, (sl, obj)) in d.slices.iter().zip(&levels).enumerate() {
            for st in obj {
                deg(st).map_err(|e| derr(s, e.to_string()))?;
            }
            if let Slice::Coupon { at, width, outputs, .. } = sl {
                let din: f64 = obj[*at..at + width].iter().map(deg).sum::<Result<f64>>()?;
                let dout: f64 = outputs.iter().map(deg).sum::<Result<f64>>().map_err(|e| derr(s, e.to_string()))?;
                if !same_mod2(din, dout) {
                    return Err(derr(s, format!("coupon changes the degree ({din} -> {dout})")));
                }
            }
        }
        for st in &levels[levels.len() - 1] {
            deg(st).map_err(|e| derr(d.slices.len(), e.to_string()))?;
        }
        Ok(levels)
    }

    /// The Reshetikhin–Turaev value, composed slice by slice.
    pub fn rt_eval(&self, d: &SliceDiagram) -> Result<Morphism> {
        let levels = self.check_diagram(d)?;
        let source = self.object_module(d, &d.inputs)?;
        let target = self.object_module(d, &d.outputs)?;
        let mut state = eye(source.dim());
        for (s, (sl, obj)) in d.slices.iter().zip(&levels).enumerate() {
            let mods: Vec<Arc<WeightModule>> = obj.iter().map(|st| self.strand_module(d, st)).collect::<Result<_>>()?;
            let at = sl.at();
            let (n_in, _) = sl.arity();
            let dl: usize = mods[..at].iter().map(|m| m.dim()).product();
            let dr: usize = mods[at + n_in..].iter().map(|m| m.dim()).product();
            let local = match sl {
                Slice::Braid { sign: Sign::Plus, .. } => self.braiding(&mods[at], &mods[at + 1])?.mat,
                Slice::Braid { sign: Sign::Minus, .. } => self.braiding_inv(&mods[at + 1], &mods[at])?.mat,
                Slice::Cap { kind, .. } => {
                    let v = self.module(d.color(obj[at].component)?)?;
                    self.duality(&v, *kind)?.mat
                }
                Slice::Cup { kind, component, .. } => {
                    let v = self.module(d.color(*component)?)?;
                    self.duality(&v, *kind)?.mat
                }
                Slice::Twist { sign: Sign::Plus, .. } => (*self.twist_mat(&mods[at])?).clone(),
                Slice::Twist { sign: Sign::Minus, .. } => self.twist_inv(&mods[at])?.mat,
                Slice::Coupon { width, outputs, matrix, .. } => {
                    let src = self.object_module(d, &obj[at..at + width])?;
                    let tgt = self.object_module(d, outputs)?;
                    let f = Morphism::new(src, tgt, matrix.clone()).map_err(|e| derr(s, e.to_string()))?;
                    let res = f.intertwining_residual();
                    if res > 1e-6 {
                        return Err(derr(s, format!("coupon is not a module map (residual {res:.2e})")));
                    }
                    f.mat
                }
            };
            state = apply_local(&state, dl, dr, &local);
        }
        Ok(Morphism { source, target, mat: state })
    }

    /// Mirror image `T†`: slices reversed, crossings and twists inverted,
    /// caps and cups exchanged, coupons replaced by their adjoints.
    pub fn dagger_diagram(&self, d: &SliceDiagram) -> Result<SliceDiagram> {
        let levels = d.levels()?;
        let mut slices = Vec::with_capacity(d.slices.len());
        for (sl, obj) in d.slices.iter().zip(&levels).rev() {
            let at = sl.at();
            slices.push(match sl {
                Slice::Braid { sign, .. } => Slice::Braid { at, sign: sign.flip() },
                Slice::Twist { sign, .. } => Slice::Twist { at, sign: sign.flip() },
                Slice::Cap { kind, .. } => Slice::Cup {
                    at,
                    kind: match kind {
                        DualityKind::EvR => DualityKind::CoevL,
                        _ => DualityKind::CoevR,
                    },
                    component: obj[at].component,
                },
                Slice::Cup { kind, .. } => Slice::Cap {
                    at,
                    kind: match kind {
                        DualityKind::CoevR => DualityKind::EvL,
                        _ => DualityKind::EvR,
                    },
                },
                Slice::Coupon { width, outputs, matrix, .. } => {
                    let ins = &obj[at..at + width];
                    let src = self.object_module(d, ins)?;
                    let tgt = self.object_module(d, outputs)?;
                    let f = self.dagger(&Morphism::new(src, tgt, matrix.clone())?)?;
                    Slice::Coupon { at, width: outputs.len(), outputs: ins.to_vec(), matrix: f.mat }
                }
            });
        }
        Ok(SliceDiagram { components: d.components.clone(), inputs: d.outputs.clone(), slices, outputs: d.inputs.clone() })
    }

    /// Closed components colored by a simple projective `V_α`.
    pub fn cuttable_components(&self, d: &SliceDiagram) -> Result<Vec<usize>> {
        let p = &self.params;
        Ok(d
            .used_components()?
            .into_iter()
            .filter(|&i| match d.components[i] {
                Some(Descriptor::Valpha { alpha }) => !p.is_integer(alpha) || p.is_multiple_of_r(alpha),
                _ => false,
            })
            .collect())
    }

    /// `F′ = d(V_α) ⟨T⟩` where `T` is the diagram cut open along `cut`
    /// (default: smallest admissible component). Returns the value and the
    /// component used.
    pub fn renormalized_invariant(&self, d: &SliceDiagram, cut: Option<usize>) -> Result<(C64, usize)> {
        if !d.is_closed() {
            return Err(Error::InadmissibleDiagram("F′ needs a closed diagram".into()));
        }
        self.check_diagram(d)?;
        let eligible = self.cuttable_components(d)?;
        let comp = match cut {
            Some(c) if eligible.contains(&c) => c,
            Some(c) => {
                return Err(Error::InadmissibleDiagram(format!("component {c} is not colored by a simple projective")))
            }
            None => *eligible
                .first()
                .ok_or_else(|| Error::InadmissibleDiagram("no component colored by a simple projective".into()))?,
        };
        let Some(Descriptor::Valpha { alpha }) = d.components[comp] else { unreachable!() };
        let t = self.cut_endomorphism(d, comp)?;
        let dim = t.nrows();
        let avg = t.trace() / c(dim as f64, 0.0);
        let dev = max_abs(&(&t - eye(dim) * avg));
        if dev > 1e-6 * 1f64.max(avg.norm()) {
            return Err(Error::Numerical(format!("cut tangle is not scalar (deviation {dev:.2e})")));
        }
        Ok((avg * self.params.modified_dim(alpha)?, comp))
    }

    /// `End(V)` element of the (1,1)-tangle obtained by cutting `comp` at its
    /// first cap; the loose ends are carried to the top over all strands.
    pub fn cut_endomorphism(&self, d: &SliceDiagram, comp: usize) -> Result<Mat> {
        let levels = d.levels()?;
        let s0 = d
            .slices
            .iter()
            .zip(&levels)
            .position(|(sl, obj)| matches!(sl, Slice::Cap { at, .. } if obj[*at].component == comp))
            .ok_or_else(|| Error::InadmissibleDiagram(format!("component {comp} has no cap")))?;
        let Slice::Cap { at: p0, kind } = d.slices[s0] else { unreachable!() };
        let mut slices: Vec<Slice> = d.slices[..s0].to_vec();
        let mut p = p0;
        for sl in &d.slices[s0 + 1..] {
            let j = sl.at();
            let (n_in, n_out) = sl.arity();
            if n_in == 0 {
                if j <= p {
                    slices.push(sl.clone());
                    p += n_out;
                } else {
                    slices.push(sl.with_at(j + 2));
                }
                continue;
            }
            if j >= p {
                slices.push(sl.with_at(j + 2));
                continue;
            }
            while j + n_in > p {
                slices.push(Slice::Braid { at: p + 1, sign: Sign::Plus });
                slices.push(Slice::Braid { at: p, sign: Sign::Plus });
                p += 1;
            }
            slices.push(sl.clone());
            p = p + n_out - n_in;
        }
        let pair = [levels[s0][p0], levels[s0][p0 + 1]];
        let mut outputs = d.outputs.clone();
        outputs.splice(p..p, pair);
        let open = SliceDiagram { components: d.components.clone(), inputs: d.inputs.clone(), slices, outputs };
        let x = self.rt_eval(&open)?.mat;
        if x.ncols() != 1 || x.nrows() != pair_dim(self, d, comp)? {
            return Err(Error::InadmissibleDiagram("cut diagram has open strands besides the cut".into()));
        }
        let v = self.module(d.color(comp)?)?;
        let n = v.dim();
        let pr = &self.params;
        Ok(match kind {
            DualityKind::EvL => Mat::from_fn(n, n, |a, b| x[a * n + b]),
            _ => Mat::from_fn(n, n, |b, c| x[c * n + b] * pr.qpow((1.0 - pr.rf()) * v.weights[c])),
        })
    }
}

fn pair_dim(cx: &Ctx, d: &SliceDiagram, comp: usize) -> Result<usize> {
    let n = cx.module(d.color(comp)?)?.dim();
    Ok(n * n)
}

/// `Ω_α = Σ_k d(α+1−r+2k) V_{α+1−r+2k}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KirbyColor {
    pub alpha: f64,
    /// `(d(γ), γ)` pairs.
    pub terms: Vec<(f64, f64)>,
}

pub fn kirby_color(p: &Params, alpha: f64) -> Result<KirbyColor> {
    let rf = p.rf();
    let terms = (0..p.r)
        .map(|k| {
            let g = alpha + 1.0 - rf + 2.0 * k as f64;
            p.modified_dim(g).map(|d| (d, g))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|_| {
            Error::Inadmissible(format!(
                "Kirby color of integral degree {alpha} has colors with undefined modified dimension"
            ))
        })?;
    Ok(KirbyColor { alpha, terms })
}

/// `(δ, λ, η)`, defined for `r ∉ 4ℤ`.
pub fn constants(p: &Params) -> Result<(C64, f64, f64)> {
    if p.r.is_multiple_of(4) {
        return Err(Error::RDivisibleBy4(p.r));
    }
    let s = (p.r % 4) as f64;
    let delta = p.qpow(-1.5) * C64::from_polar(1.0, -(s + 1.0) * PI / 4.0);
    let rp = p.rprime as f64;
    let lambda = rp.sqrt() / (p.rf() * p.rf());
    let eta = 1.0 / (p.rf() * rp.sqrt());
    Ok((delta, lambda, eta))
}

/// Trace normalization under which the Kirby expansion is invariant.
pub fn surgery_d0(r: u32) -> f64 {
    if r % 2 == 1 {
        r as f64
    } else {
        -(r as f64)
    }
}

/// `#positive − #negative` eigenvalues of a symmetric integer matrix.
pub fn linking_signature(m: &[Vec<i64>]) -> i64 {
    let n = m.len();
    if n == 0 {
        return 0;
    }
    let a = DMatrix::from_fn(n, n, |i, j| m[i][j] as f64);
    let ev = SymmetricEigen::new(a).eigenvalues;
    ev.iter().map(|&x| if x > 0.5e-9 { 1 } else if x < -0.5e-9 { -1 } else { 0 }).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurgeryComponent {
    pub component: usize,
    pub framing: i64,
    pub alpha: f64,
}

/// Surgery on the components listed in `surgery`; all other components form
/// the colored graph `T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurgeryPresentation {
    #[serde(flatten)]
    pub link: SliceDiagram,
    #[serde(default)]
    pub surgery: Vec<SurgeryComponent>,
    #[serde(default)]
    pub defect: i64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ZReport {
    #[serde(serialize_with = "ser_c64")]
    pub value: C64,
    pub m: usize,
    pub sigma: i64,
    pub n: i64,
    pub terms: usize,
}

fn ser_c64<S: serde::Serializer>(z: &C64, s: S) -> std::result::Result<S::Ok, S::Error> {
    cmat::Entry { re: z.re, im: z.im }.serialize(s)
}

pub const DEFAULT_TERM_BUDGET: u128 = 1 << 16;

impl SurgeryPresentation {
    pub fn from_json(text: &str) -> Result<Self> {
        parse_with_slices(text)
    }

    pub fn graph(link: SliceDiagram) -> Self {
        Self { link, surgery: vec![], defect: 0 }
    }

    pub fn linking_matrix(&self) -> Result<Vec<Vec<i64>>> {
        let m = self.surgery.len();
        let mut out = vec![vec![0; m]; m];
        for i in 0..m {
            for j in 0..m {
                let (a, b) = (self.surgery[i].component, self.surgery[j].component);
                out[i][j] = if i == j { self.link.framing(a)? } else { self.link.double_linking(a, b)? / 2 };
            }
        }
        Ok(out)
    }

    /// Mirror image with coupons replaced by adjoints and `n ↦ −n`.
    pub fn dagger(&self, cx: &Ctx) -> Result<SurgeryPresentation> {
        Ok(SurgeryPresentation {
            link: cx.dagger_diagram(&self.link)?,
            surgery: self
                .surgery
                .iter()
                .map(|s| SurgeryComponent { framing: -s.framing, ..s.clone() })
                .collect(),
            defect: -self.defect,
        })
    }
}

impl Ctx {
    /// Checks framings, the degree condition on every surgery meridian and
    /// admissibility.
    pub fn check_presentation(&self, pres: &SurgeryPresentation) -> Result<()> {
        let d = &pres.link;
        d.levels()?;
        if !d.is_closed() {
            return Err(Error::InadmissibleDiagram("surgery link must be closed".into()));
        }
        let surg: Vec<usize> = pres.surgery.iter().map(|s| s.component).collect();
        for (i, s) in pres.surgery.iter().enumerate() {
            if surg[..i].contains(&s.component) {
                return Err(Error::Mismatch(format!("component {} listed twice", s.component)));
            }
            let fr = d.framing(s.component)?;
            if fr != s.framing {
                return Err(Error::Mismatch(format!(
                    "component {} has blackboard framing {fr}, declared {}",
                    s.component, s.framing
                )));
            }
        }
        let used = d.used_components()?;
        let graph: Vec<usize> = used.iter().copied().filter(|c| !surg.contains(c)).collect();
        for s in &pres.surgery {
            let mut flux = s.framing as f64 * s.alpha;
            for t in &pres.surgery {
                if t.component != s.component {
                    flux += d.double_linking(s.component, t.component)? as f64 / 2.0 * t.alpha;
                }
            }
            for &e in &graph {
                let lk2 = d.double_linking(s.component, e)?;
                if lk2 != 0 {
                    flux += lk2 as f64 / 2.0 * self.module(d.color(e)?)?.degree;
                }
            }
            if !same_mod2(flux, 0.0) {
                return Err(Error::Inadmissible(format!(
                    "degree {} on component {} violates the cohomology condition (flux {flux} mod 2)",
                    s.alpha, s.component
                )));
            }
        }
        let p = &self.params;
        let projective_edge = graph.iter().any(|&e| match d.components[e] {
            Some(Descriptor::Valpha { alpha }) => !p.is_integer(alpha) || p.is_multiple_of_r(alpha),
            Some(Descriptor::P { .. }) => true,
            _ => false,
        });
        let generic_degree = pres.surgery.iter().any(|s| !p.is_integer(s.alpha))
            || graph.iter().any(|&e| self.module(d.color(e).unwrap()).map(|m| !p.is_integer(m.degree)).unwrap_or(false));
        if !projective_edge && !generic_degree {
            return Err(Error::Inadmissible("no projective edge and no curve with non-integral degree".into()));
        }
        Ok(())
    }

    pub fn z_invariant(&self, pres: &SurgeryPresentation) -> Result<ZReport> {
        self.z_invariant_with_budget(pres, DEFAULT_TERM_BUDGET)
    }

    /// `Z = η λ^{m+n} δ^{−σ} F′(L ∪ T)` with Kirby colors expanded
    /// multilinearly. Traces use `d0 = (−1)^{r−1} r`.
    pub fn z_invariant_with_budget(&self, pres: &SurgeryPresentation, budget: u128) -> Result<ZReport> {
        let (delta, lambda, eta) = constants(&self.params)?;
        let params = Params::with(self.params.r, surgery_d0(self.params.r), self.params.tol)?;
        let zcx = if params == self.params { None } else { Some(Ctx::with_seed(params, self.seed)) };
        let zcx = zcx.as_ref().unwrap_or(self);
        zcx.check_presentation(pres)?;
        let m = pres.surgery.len();
        let terms = (params.r as u128).checked_pow(m as u32).unwrap_or(u128::MAX);
        if terms > budget {
            return Err(Error::Budget { terms, budget });
        }
        let colors: Vec<KirbyColor> = pres.surgery.iter().map(|s| kirby_color(&params, s.alpha)).collect::<Result<_>>()?;
        let r = params.r as usize;
        let values: Vec<C64> = (0..terms as usize)
            .into_par_iter()
            .map(|t| {
                let mut d = pres.link.clone();
                let mut coeff = ONE;
                let mut idx = t;
                for (s, kc) in pres.surgery.iter().zip(&colors) {
                    let (dk, g) = kc.terms[idx % r];
                    idx /= r;
                    coeff *= dk;
                    d.components[s.component] = Some(Descriptor::valpha(g));
                }
                Ok(coeff * zcx.renormalized_invariant(&d, None)?.0)
            })
            .collect::<Result<Vec<_>>>()?;
        let fprime = pairwise_sum(&values);
        let sigma = linking_signature(&pres.linking_matrix()?);
        let value = fprime * eta * lambda.powi(m as i32 + pres.defect as i32) * delta.powi(-sigma as i32);
        Ok(ZReport { value, m, sigma, n: pres.defect, terms: terms as usize })
    }

    /// `Z` of a disjoint union.
    pub fn z_disjoint(&self, parts: &[SurgeryPresentation]) -> Result<C64> {
        parts.iter().try_fold(ONE, |acc, p| Ok(acc * self.z_invariant(p)?.value))
    }
}

/// `S³` with a `V_α` unknot, presented by a `framing = ±1` Kirby unknot
/// linked once with the graph unknot; the graph carries the compensating
/// framing so the pair presents the 0-framed unknot in `S³`.
pub fn kirby_unknot_presentation(r: u32, alpha: f64, framing: i64) -> Result<SurgeryPresentation> {
    if framing.abs() != 1 {
        return Err(Error::Mismatch("Kirby unknot must be ±1-framed".into()));
    }
    let deg = alpha + r as f64 - 1.0;
    let beta = -(framing as f64) * deg;
    let link = braid_closure(2, &[1, 1], &[Descriptor::valpha(alpha), Descriptor::valpha(beta)], &[framing, framing])?;
    Ok(SurgeryPresentation { link, surgery: vec![SurgeryComponent { component: 1, framing, alpha: beta }], defect: 0 })
}

/// `S³` with a 0-framed `V_α` unknot and empty surgery.
pub fn unknot_presentation(alpha: f64) -> SurgeryPresentation {
    SurgeryPresentation::graph(kinked_unknot(Descriptor::valpha(alpha), 0))
}
