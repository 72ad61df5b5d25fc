//! Connected components of excursion sets, level-set functionals and arm events.
//!
//! The excursion set of `f - ν` is `E = {f > ν}`; both `E` and its complement
//! in the domain are labelled. The cluster count `Ξ_D(E)` counts components
//! of either set that avoid the inner boundary `∂D`.

use crate::error::{Error, Result};
use crate::lattice::Domain;

/// Disjoint sets with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n as u32).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = self.parent[x as usize];
        }
        x
    }

    pub fn union(&mut self, a: u32, b: u32) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
        true
    }
}

/// One connected component of `E` or of `D \ E`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    /// `true` for components of `E`.
    pub plus: bool,
    pub size: usize,
    pub touches_boundary: bool,
    lo: Vec<i64>,
    hi: Vec<i64>,
}

impl Component {
    /// `ℓ^∞` diameter.
    pub fn diam(&self) -> i64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).max().unwrap_or(0)
    }
}

/// Component labels of a two-colouring of a domain.
#[derive(Debug, Clone)]
pub struct ClusterLabeling {
    pub label: Vec<u32>,
    pub components: Vec<Component>,
}

impl ClusterLabeling {
    pub fn component_of(&self, site: usize) -> &Component {
        &self.components[self.label[site] as usize]
    }
}

/// Label the components of `E = {i : mask[i]}` and of its complement.
pub fn label(domain: &Domain, mask: &[bool]) -> ClusterLabeling {
    let n = domain.len();
    assert_eq!(mask.len(), n, "mask length differs from the domain");
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for &j in domain.neighbors(i) {
            if (j as usize) > i && mask[j as usize] == mask[i] {
                uf.union(i as u32, j);
            }
        }
    }
    let mut root_label = vec![u32::MAX; n];
    let mut label = vec![0u32; n];
    let mut components: Vec<Component> = Vec::new();
    for i in 0..n {
        let r = uf.find(i as u32) as usize;
        if root_label[r] == u32::MAX {
            root_label[r] = components.len() as u32;
            let x = domain.coords(i);
            components.push(Component {
                plus: mask[i],
                size: 0,
                touches_boundary: false,
                lo: x.to_vec(),
                hi: x.to_vec(),
            });
        }
        let l = root_label[r];
        label[i] = l;
        let c = &mut components[l as usize];
        c.size += 1;
        c.touches_boundary |= domain.is_boundary(i);
        for (k, &v) in domain.coords(i).iter().enumerate() {
            c.lo[k] = c.lo[k].min(v);
            c.hi[k] = c.hi[k].max(v);
        }
    }
    ClusterLabeling { label, components }
}

/// The mask of `{f > level}`.
pub fn excursion(field: &[f64], level: f64) -> Vec<bool> {
    field.iter().map(|&v| v > level).collect()
}

/// The mask of `{f > ν}` for a site-dependent level.
pub fn excursion_at(field: &[f64], levels: &[f64]) -> Vec<bool> {
    field.iter().zip(levels).map(|(v, l)| v > l).collect()
}

/// Boundary-avoiding component counts `N^+`, `N^-`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClusterCount {
    pub plus: usize,
    pub minus: usize,
}

impl ClusterCount {
    pub fn total(&self) -> usize {
        self.plus + self.minus
    }
}

/// Count components avoiding `∂D`, optionally only those of `ℓ^∞` diameter at most `max_diam`.
pub fn count_clusters(lab: &ClusterLabeling, max_diam: Option<i64>) -> ClusterCount {
    let mut out = ClusterCount::default();
    for c in &lab.components {
        if c.touches_boundary || max_diam.is_some_and(|r| c.diam() > r) {
            continue;
        }
        if c.plus {
            out.plus += 1;
        } else {
            out.minus += 1;
        }
    }
    out
}

/// How the cluster density is estimated from one labelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityMode {
    /// Boundary-avoiding component count divided by the number of sites.
    Count,
    /// Average of `1/|C_x|` over sites whose component avoids the boundary.
    InverseSize,
}

/// Density estimate from a labelling. `core` restricts the site average of
/// the inverse-size mode to a subset of sites; the count mode ignores it.
pub fn density_estimator(lab: &ClusterLabeling, mode: DensityMode, core: Option<&[usize]>) -> f64 {
    match mode {
        DensityMode::Count => count_clusters(lab, None).total() as f64 / lab.label.len() as f64,
        DensityMode::InverseSize => {
            let term = |i: usize| {
                let c = lab.component_of(i);
                if c.touches_boundary {
                    0.0
                } else {
                    1.0 / c.size as f64
                }
            };
            match core {
                None => (0..lab.label.len()).map(term).sum::<f64>() / lab.label.len() as f64,
                Some(sites) => sites.iter().map(|&i| term(i)).sum::<f64>() / sites.len() as f64,
            }
        }
    }
}

/// A function of the excursion set on a fixed domain.
pub trait LevelSetFunctional: Sync {
    fn eval(&self, domain: &Domain, mask: &[bool]) -> f64;
}

/// `Ξ_D`: components of `E` or `D \ E` that avoid `∂D`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CountFunctional;

impl LevelSetFunctional for CountFunctional {
    fn eval(&self, domain: &Domain, mask: &[bool]) -> f64 {
        count_clusters(&label(domain, mask), None).total() as f64
    }
}

/// `N_{≤r}`: boundary-avoiding components of `ℓ^∞` diameter at most `r`.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedCountFunctional {
    pub max_diam: i64,
}

impl LevelSetFunctional for TruncatedCountFunctional {
    fn eval(&self, domain: &Domain, mask: &[bool]) -> f64 {
        count_clusters(&label(domain, mask), Some(self.max_diam)).total() as f64
    }
}

/// Every component of `E` and of `D \ E`, boundary or not.
///
/// On domains without interior sites `Ξ_D` vanishes identically; this
/// variant is the non-degenerate functional used on such domains.
#[derive(Debug, Clone, Copy, Default)]
pub struct AllComponentsFunctional;

impl LevelSetFunctional for AllComponentsFunctional {
    fn eval(&self, domain: &Domain, mask: &[bool]) -> f64 {
        label(domain, mask).components.len() as f64
    }
}

/// `d_{y_1..y_k} Ξ(E) = Σ_{S ⊆ y} (-1)^{k - |S|} Ξ((E \ y) ∪ S)` for distinct sites.
pub fn discrete_derivative(
    functional: &dyn LevelSetFunctional,
    domain: &Domain,
    mask: &[bool],
    points: &[usize],
) -> Result<f64> {
    let k = points.len();
    for (i, p) in points.iter().enumerate() {
        if *p >= domain.len() {
            return Err(Error::arg(format!("site index {p} outside the domain")));
        }
        if points[..i].contains(p) {
            return Err(Error::arg("discrete derivative needs distinct points"));
        }
    }
    if k > 16 {
        return Err(Error::arg("too many derivative points"));
    }
    let mut work = mask.to_vec();
    let mut total = 0.0;
    for subset in 0u32..(1 << k) {
        for (b, &p) in points.iter().enumerate() {
            work[p] = subset >> b & 1 == 1;
        }
        let sign = if (k as u32 - subset.count_ones()).is_multiple_of(2) { 1.0 } else { -1.0 };
        total += sign * functional.eval(domain, &work);
    }
    Ok(total)
}

/// Largest `ℓ^∞` distance from `center` reached by a boundary-avoiding
/// component of `E \ pins` that contains a neighbour of some pin.
///
/// With no pins the neighbours of `center` are used and the set is `E`. The
/// event that the component reaches `center + ∂Λ_r` is `reach ≥ r`.
pub fn arm_reach(domain: &Domain, mask: &[bool], center: usize, pins: &[usize]) -> i64 {
    let mut work = mask.to_vec();
    for &p in pins {
        work[p] = false;
    }
    let lab = label(domain, &work);
    let anchors: &[usize] = if pins.is_empty() { std::slice::from_ref(&center) } else { pins };
    let c0 = domain.coords(center).to_vec();
    let mut best = -1;
    let mut seen: Vec<u32> = Vec::new();
    for &a in anchors {
        for &nb in domain.neighbors(a) {
            let nb = nb as usize;
            if !work[nb] || pins.contains(&nb) {
                continue;
            }
            let l = lab.label[nb];
            let comp = &lab.components[l as usize];
            if comp.touches_boundary || seen.contains(&l) {
                continue;
            }
            seen.push(l);
            let reach = comp
                .lo
                .iter()
                .zip(&comp.hi)
                .zip(&c0)
                .map(|((lo, hi), c)| (c - lo).max(hi - c))
                .max()
                .unwrap_or(0);
            best = best.max(reach);
        }
    }
    best
}

/// Bounded one-arm event with radius `r`.
pub fn arm_event(domain: &Domain, mask: &[bool], center: usize, pins: &[usize], r: i64) -> bool {
    arm_reach(domain, mask, center, pins) >= r
}

/// Two-arm event on a box domain centred at `center`: `(E ∩ D) \ {center}`
/// has two distinct components each joining a neighbour of `center` to `∂D`.
pub fn two_arm_event(domain: &Domain, mask: &[bool], center: usize) -> bool {
    let mut work = mask.to_vec();
    work[center] = false;
    let lab = label(domain, &work);
    let mut hits: Vec<u32> = Vec::new();
    for &nb in domain.neighbors(center) {
        let nb = nb as usize;
        if work[nb] && lab.component_of(nb).touches_boundary && !hits.contains(&lab.label[nb]) {
            hits.push(lab.label[nb]);
        }
    }
    hits.len() >= 2
}
