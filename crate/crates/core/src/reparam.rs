//! Fine-tuning methods as reparameterization maps `g: R^k → R^d`.
//!
//! A tuned model is the base network shifted by `Δθ = g(Φ)`. Subspace,
//! BitFit and LoRA with a frozen `B` factor are linear (`g(Φ) = PΦ`);
//! LoRA with both factors trainable is bilinear.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::netcore::DenseNet;
use crate::numerics::{numerical_rank, orthonormalize, project_onto, Matrix, DEFAULT_RANK_TOL};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum MapKind {
    Subspace,
    Bitfit,
    LoraLinear,
    LoraBilinear,
}

impl MapKind {
    pub const ALL: [MapKind; 4] = [MapKind::Subspace, MapKind::Bitfit, MapKind::LoraLinear, MapKind::LoraBilinear];

    pub fn name(self) -> &'static str {
        match self {
            MapKind::Subspace => "subspace",
            MapKind::Bitfit => "bitfit",
            MapKind::LoraLinear => "lora-linear",
            MapKind::LoraBilinear => "lora-bilinear",
        }
    }

    pub fn is_linear(self) -> bool {
        !matches!(self, MapKind::LoraBilinear)
    }
}

/// Weight block of one layer inside the flattened parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct LayerBlock {
    pub layer: usize,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl LayerBlock {
    fn of(net: &DenseNet, layer: usize) -> Result<Self> {
        let slot = *net.layout().get(layer).ok_or_else(|| shape_err!("net has no layer {}", layer))?;
        Ok(Self { layer, offset: slot.weight_offset, rows: slot.rows, cols: slot.cols })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
enum Repr {
    Subspace { p: Matrix },
    Bitfit { indices: Vec<usize> },
    /// `ΔW = B·A` with `B` frozen; `Φ = vec(A)`, `A` is `rank × cols`.
    LoraLinear { block: LayerBlock, b: Matrix },
    /// `ΔW = B·A`; `Φ = [vec(B), vec(A)]`, `B` is `rows × rank`.
    LoraBilinear { block: LayerBlock, rank: usize },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ReparamMap {
    d: usize,
    k: usize,
    #[cfg_attr(feature = "serde", serde(flatten))]
    repr: Repr,
}

/// `ε = ε_par + ε_perp` with `ε_par = QQᵀε`, `Q` an orthonormal basis of `span(P)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PerturbationDecomposition {
    pub eps: Vec<f64>,
    pub eps_par: Vec<f64>,
    pub eps_perp: Vec<f64>,
}

fn require_strict(k: usize, d: usize) -> Result<()> {
    if k == 0 || k >= d {
        return Err(Error::ConfigInvalid(alloc::format!("need 0 < k < d, got k = {k}, d = {d}")));
    }
    Ok(())
}

impl ReparamMap {
    /// Explicit `d × k` basis matrix; requires full column rank and `k < d`.
    pub fn subspace(p: Matrix) -> Result<Self> {
        require_strict(p.cols(), p.rows())?;
        Self::subspace_unchecked_dim(p)
    }

    /// Control arm that may span all of parameter space (`k <= d`); used to
    /// check that PEFT with a full-space map reproduces full fine-tuning.
    pub fn subspace_control(p: Matrix) -> Result<Self> {
        if p.cols() == 0 || p.cols() > p.rows() {
            return Err(Error::ConfigInvalid(alloc::format!("need 0 < k <= d, got {:?}", p.shape())));
        }
        Self::subspace_unchecked_dim(p)
    }

    fn subspace_unchecked_dim(p: Matrix) -> Result<Self> {
        let rank = numerical_rank(&p, DEFAULT_RANK_TOL)?;
        if rank < p.cols() {
            return Err(Error::RankDeficient { rank, expected: p.cols() });
        }
        Ok(Self { d: p.rows(), k: p.cols(), repr: Repr::Subspace { p } })
    }

    /// Random `k`-dimensional subspace with an orthonormal Gaussian basis.
    pub fn random_subspace(d: usize, k: usize, rng: &mut Rng) -> Result<Self> {
        require_strict(k, d)?;
        Self::subspace(random_orthonormal(d, k, rng)?)
    }

    /// Random orthonormal basis of the whole space (`k = d` control).
    pub fn random_full_subspace(d: usize, rng: &mut Rng) -> Result<Self> {
        Self::subspace_control(random_orthonormal(d, d, rng)?)
    }

    /// Subspace selecting the contiguous block `start..start+len`; this is how
    /// prefix-style methods with a dedicated parameter block are represented.
    pub fn prefix_block(d: usize, start: usize, len: usize) -> Result<Self> {
        if start + len > d {
            return Err(shape_err!("block {}..{} outside d = {}", start, start + len, d));
        }
        Self::subspace(Matrix::from_fn(d, len, |i, j| if i == start + j { 1.0 } else { 0.0 }))
    }

    pub fn bitfit(d: usize, indices: Vec<usize>) -> Result<Self> {
        require_strict(indices.len(), d)?;
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::ConfigInvalid("bitfit indices must be distinct".into()));
        }
        if let Some(&bad) = sorted.last().filter(|&&i| i >= d) {
            return Err(shape_err!("bitfit index {} outside d = {}", bad, d));
        }
        Ok(Self { d, k: indices.len(), repr: Repr::Bitfit { indices } })
    }

    /// LoRA on `layer` with the given frozen `B` (`rows × rank`).
    pub fn lora_linear(net: &DenseNet, layer: usize, b: Matrix) -> Result<Self> {
        let block = LayerBlock::of(net, layer)?;
        if b.rows() != block.rows {
            return Err(shape_err!("B has {} rows for a layer with {} outputs", b.rows(), block.rows));
        }
        let rank = b.cols();
        let d = net.param_count();
        require_strict(rank * block.cols, d)?;
        let brank = numerical_rank(&b, DEFAULT_RANK_TOL)?;
        if brank < rank {
            return Err(Error::RankDeficient { rank: brank, expected: rank });
        }
        Ok(Self { d, k: rank * block.cols, repr: Repr::LoraLinear { block, b } })
    }

    /// LoRA with frozen Gaussian `B` scaled by `1/sqrt(rank)`.
    pub fn lora_linear_random(net: &DenseNet, layer: usize, rank: usize, rng: &mut Rng) -> Result<Self> {
        let block = LayerBlock::of(net, layer)?;
        if rank == 0 || rank > block.rows {
            return Err(Error::ConfigInvalid(alloc::format!("rank {rank} for a layer with {} outputs", block.rows)));
        }
        let s = 1.0 / libm::sqrt(rank as f64);
        let b = Matrix::from_vec(block.rows, rank, rng::gaussian_vec(rng, block.rows * rank).into_iter().map(|v| v * s).collect())?;
        Self::lora_linear(net, layer, b)
    }

    pub fn lora_bilinear(net: &DenseNet, layer: usize, rank: usize) -> Result<Self> {
        let block = LayerBlock::of(net, layer)?;
        if rank == 0 {
            return Err(Error::ConfigInvalid("lora rank must be positive".into()));
        }
        let k = rank * (block.rows + block.cols);
        require_strict(k, net.param_count())?;
        Ok(Self { d: net.param_count(), k, repr: Repr::LoraBilinear { block, rank } })
    }

    pub fn kind(&self) -> MapKind {
        match self.repr {
            Repr::Subspace { .. } => MapKind::Subspace,
            Repr::Bitfit { .. } => MapKind::Bitfit,
            Repr::LoraLinear { .. } => MapKind::LoraLinear,
            Repr::LoraBilinear { .. } => MapKind::LoraBilinear,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_linear(&self) -> bool {
        self.kind().is_linear()
    }

    /// Layer touched by a LoRA map.
    pub fn layer(&self) -> Option<usize> {
        match &self.repr {
            Repr::LoraLinear { block, .. } | Repr::LoraBilinear { block, .. } => Some(block.layer),
            _ => None,
        }
    }

    fn check_phi(&self, phi: &[f64]) -> Result<()> {
        if phi.len() != self.k {
            return Err(shape_err!("phi of {} for a map with k = {}", phi.len(), self.k));
        }
        Ok(())
    }

    /// `Δθ = g(Φ)`.
    pub fn apply(&self, phi: &[f64]) -> Result<Vec<f64>> {
        self.check_phi(phi)?;
        let mut out = vec![0.0; self.d];
        match &self.repr {
            Repr::Subspace { p } => return p.matvec(phi),
            Repr::Bitfit { indices } => {
                for (&i, &v) in indices.iter().zip(phi) {
                    out[i] = v;
                }
            }
            Repr::LoraLinear { block, b } => {
                let rank = b.cols();
                for r in 0..block.rows {
                    for c in 0..block.cols {
                        out[block.offset + r * block.cols + c] =
                            (0..rank).map(|s| b[(r, s)] * phi[s * block.cols + c]).sum();
                    }
                }
            }
            Repr::LoraBilinear { block, rank } => {
                let (bf, af) = phi.split_at(block.rows * rank);
                for r in 0..block.rows {
                    for c in 0..block.cols {
                        out[block.offset + r * block.cols + c] =
                            (0..*rank).map(|s| bf[r * rank + s] * af[s * block.cols + c]).sum();
                    }
                }
            }
        }
        Ok(out)
    }

    /// `P` with `g(Φ) = PΦ`; `NotLinear` for bilinear LoRA.
    pub fn materialize_projection(&self) -> Result<Matrix> {
        match &self.repr {
            Repr::Subspace { p } => Ok(p.clone()),
            Repr::Bitfit { indices } => {
                let mut p = Matrix::zeros(self.d, self.k);
                for (j, &i) in indices.iter().enumerate() {
                    p[(i, j)] = 1.0;
                }
                Ok(p)
            }
            Repr::LoraLinear { block, b } => {
                // Column (s, c) of P is vec(B E_sc): B's column s placed in column c of the block.
                let mut p = Matrix::zeros(self.d, self.k);
                for s in 0..b.cols() {
                    for c in 0..block.cols {
                        let j = s * block.cols + c;
                        for r in 0..block.rows {
                            p[(block.offset + r * block.cols + c, j)] = b[(r, s)];
                        }
                    }
                }
                Ok(p)
            }
            Repr::LoraBilinear { .. } => Err(Error::NotLinear),
        }
    }

    /// Jacobian `∂g/∂Φ` at `phi` (`d × k`); equals `P` for linear kinds.
    pub fn jacobian(&self, phi: &[f64]) -> Result<Matrix> {
        self.check_phi(phi)?;
        match &self.repr {
            Repr::LoraBilinear { block, rank } => {
                let rank = *rank;
                let (bf, af) = phi.split_at(block.rows * rank);
                let mut j = Matrix::zeros(self.d, self.k);
                for r in 0..block.rows {
                    for c in 0..block.cols {
                        let row = block.offset + r * block.cols + c;
                        for s in 0..rank {
                            j[(row, r * rank + s)] = af[s * block.cols + c];
                            j[(row, block.rows * rank + s * block.cols + c)] = bf[r * rank + s];
                        }
                    }
                }
                Ok(j)
            }
            _ => self.materialize_projection(),
        }
    }

    /// Chain rule `(∂g/∂Φ)ᵀ ∇_θ L`.
    pub fn pull_back(&self, phi: &[f64], grad_theta: &[f64]) -> Result<Vec<f64>> {
        self.check_phi(phi)?;
        if grad_theta.len() != self.d {
            return Err(shape_err!("gradient of {} for d = {}", grad_theta.len(), self.d));
        }
        Ok(match &self.repr {
            Repr::Subspace { p } => p.t_matvec(grad_theta)?,
            Repr::Bitfit { indices } => indices.iter().map(|&i| grad_theta[i]).collect(),
            Repr::LoraLinear { block, b } => {
                let g = &grad_theta[block.offset..block.offset + block.rows * block.cols];
                let mut out = vec![0.0; self.k];
                for s in 0..b.cols() {
                    for c in 0..block.cols {
                        out[s * block.cols + c] = (0..block.rows).map(|r| b[(r, s)] * g[r * block.cols + c]).sum();
                    }
                }
                out
            }
            Repr::LoraBilinear { block, rank } => {
                let rank = *rank;
                let g = &grad_theta[block.offset..block.offset + block.rows * block.cols];
                let (bf, af) = phi.split_at(block.rows * rank);
                let mut out = vec![0.0; self.k];
                for r in 0..block.rows {
                    for s in 0..rank {
                        out[r * rank + s] = (0..block.cols).map(|c| g[r * block.cols + c] * af[s * block.cols + c]).sum();
                    }
                }
                for s in 0..rank {
                    for c in 0..block.cols {
                        out[block.rows * rank + s * block.cols + c] =
                            (0..block.rows).map(|r| bf[r * rank + s] * g[r * block.cols + c]).sum();
                    }
                }
                out
            }
        })
    }

    /// Curvature of `g` contracted with `∇_θ L`: `Σ_i (∇_θ L)_i ∇²_Φ g_i`.
    /// Zero for linear kinds.
    pub fn second_order_term(&self, phi: &[f64], grad_theta: &[f64]) -> Result<Matrix> {
        self.check_phi(phi)?;
        let mut m = Matrix::zeros(self.k, self.k);
        if let Repr::LoraBilinear { block, rank } = &self.repr {
            let rank = *rank;
            let g = &grad_theta[block.offset..block.offset + block.rows * block.cols];
            for r in 0..block.rows {
                for s in 0..rank {
                    for c in 0..block.cols {
                        let (ib, ia) = (r * rank + s, block.rows * rank + s * block.cols + c);
                        m[(ib, ia)] += g[r * block.cols + c];
                        m[(ia, ib)] += g[r * block.cols + c];
                    }
                }
            }
        }
        Ok(m)
    }

    /// Starting point of training. Linear kinds start at zero; bilinear LoRA
    /// starts with `B = 0` and Gaussian `A`, so `g(Φ₀) = 0` in every case.
    pub fn initial_phi(&self, rng: &mut Rng) -> Vec<f64> {
        match &self.repr {
            Repr::LoraBilinear { block, rank } => {
                let mut phi = vec![0.0; block.rows * rank];
                let s = 1.0 / libm::sqrt(block.cols as f64);
                phi.extend(rng::gaussian_vec(rng, rank * block.cols).into_iter().map(|v| v * s));
                phi
            }
            _ => vec![0.0; self.k],
        }
    }

    /// Orthonormal basis `Q` of `span(P)`.
    pub fn orthonormal_basis(&self) -> Result<Matrix> {
        orthonormalize(&self.materialize_projection()?)
    }

    pub fn decompose(&self, eps: &[f64]) -> Result<PerturbationDecomposition> {
        if eps.len() != self.d {
            return Err(shape_err!("perturbation of {} for d = {}", eps.len(), self.d));
        }
        let q = self.orthonormal_basis()?;
        Ok(decompose_with_basis(&q, eps)?)
    }
}

/// Declarative description of a map, resolved against a concrete net.
/// A subspace with `k = d` builds the full-space control arm.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields))]
pub enum MapSpec {
    Subspace {
        k: usize,
        #[cfg_attr(feature = "serde", serde(default))]
        seed: u64,
    },
    Bitfit {
        indices: Vec<usize>,
    },
    LoraLinear {
        layer: usize,
        rank: usize,
        #[cfg_attr(feature = "serde", serde(default))]
        seed: u64,
    },
    LoraBilinear {
        layer: usize,
        rank: usize,
    },
}

impl MapSpec {
    pub fn build(&self, net: &DenseNet) -> Result<ReparamMap> {
        let d = net.param_count();
        match self {
            MapSpec::Subspace { k, seed } => {
                let mut r = rng::stream(*seed, 0, "map-subspace");
                if *k == d {
                    ReparamMap::random_full_subspace(d, &mut r)
                } else {
                    ReparamMap::random_subspace(d, *k, &mut r)
                }
            }
            MapSpec::Bitfit { indices } => ReparamMap::bitfit(d, indices.clone()),
            MapSpec::LoraLinear { layer, rank, seed } => {
                ReparamMap::lora_linear_random(net, *layer, *rank, &mut rng::stream(*seed, 0, "map-lora"))
            }
            MapSpec::LoraBilinear { layer, rank } => ReparamMap::lora_bilinear(net, *layer, *rank),
        }
    }

    pub fn kind(&self) -> MapKind {
        match self {
            MapSpec::Subspace { .. } => MapKind::Subspace,
            MapSpec::Bitfit { .. } => MapKind::Bitfit,
            MapSpec::LoraLinear { .. } => MapKind::LoraLinear,
            MapSpec::LoraBilinear { .. } => MapKind::LoraBilinear,
        }
    }

    /// Short tag used in reports and CSV rows.
    pub fn label(&self) -> alloc::string::String {
        match self {
            MapSpec::Subspace { k, .. } => alloc::format!("subspace-k{k}"),
            MapSpec::Bitfit { indices } => alloc::format!("bitfit-k{}", indices.len()),
            MapSpec::LoraLinear { layer, rank, .. } => alloc::format!("lora-linear-l{layer}-r{rank}"),
            MapSpec::LoraBilinear { layer, rank } => alloc::format!("lora-bilinear-l{layer}-r{rank}"),
        }
    }
}

/// Decomposition against an already orthonormal basis.
pub fn decompose_with_basis(q: &Matrix, eps: &[f64]) -> Result<PerturbationDecomposition> {
    let eps_par = project_onto(q, eps)?;
    let eps_perp = eps.iter().zip(&eps_par).map(|(e, p)| e - p).collect();
    Ok(PerturbationDecomposition { eps: eps.to_vec(), eps_par, eps_perp })
}

pub fn random_orthonormal(d: usize, k: usize, rng: &mut Rng) -> Result<Matrix> {
    orthonormalize(&Matrix::from_vec(d, k, rng::gaussian_vec(rng, d * k))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{Activation, Layer};
    use crate::numerics::{dot, norm, relative_error};

    fn linear_net(rows: usize, cols: usize) -> DenseNet {
        DenseNet::new(vec![
            Layer::new(Matrix::identity(cols), None, Activation::Identity).unwrap(),
            Layer::new(Matrix::zeros(rows, cols), None, Activation::Identity).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn bitfit_selection() {
        let m = ReparamMap::bitfit(3, vec![0, 2]).unwrap();
        assert_eq!(m.materialize_projection().unwrap(), Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 1.0]]).unwrap());
        assert_eq!(m.apply(&[5.0, 7.0]).unwrap(), vec![5.0, 0.0, 7.0]);
        assert!(ReparamMap::bitfit(3, vec![0, 0]).is_err());
        assert!(ReparamMap::bitfit(3, vec![0, 1, 2]).is_err());
        assert!(ReparamMap::bitfit(3, vec![3]).is_err());
    }

    #[test]
    fn subspace_returns_stored_basis() {
        let p = Matrix::from_rows(&[&[1.0], &[1.0], &[0.0]]).unwrap();
        assert_eq!(ReparamMap::subspace(p.clone()).unwrap().materialize_projection().unwrap(), p);
        assert!(ReparamMap::subspace(Matrix::identity(3)).is_err());
        assert!(ReparamMap::subspace_control(Matrix::identity(3)).is_ok());
        let dep = Matrix::from_rows(&[&[1.0, 2.0], &[1.0, 2.0], &[0.0, 0.0]]).unwrap();
        assert!(matches!(ReparamMap::subspace(dep), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn lora_linear_projection_matches_apply() {
        // Identity first layer (4 params) then the 2x2 target layer.
        let net = linear_net(2, 2);
        let b = Matrix::from_rows(&[&[1.0], &[1.0]]).unwrap();
        let map = ReparamMap::lora_linear(&net, 1, b).unwrap();
        assert_eq!(map.k(), 2);
        let p = map.materialize_projection().unwrap();
        let mut r = rng::from_seed(8);
        for _ in 0..100 {
            let a = rng::gaussian_vec(&mut r, 2);
            assert_eq!(map.apply(&a).unwrap(), p.matvec(&a).unwrap());
        }
    }

    #[test]
    fn bilinear_outer_product() {
        let net = linear_net(2, 2);
        let map = ReparamMap::lora_bilinear(&net, 1, 1).unwrap();
        let delta = map.apply(&[3.0, 4.0, 1.0, 2.0]).unwrap();
        assert_eq!(&delta[4..], &[3.0, 6.0, 4.0, 8.0]);
        assert_eq!(map.materialize_projection(), Err(Error::NotLinear));
        let mut r = rng::from_seed(2);
        let phi0 = map.initial_phi(&mut r);
        assert_eq!(map.apply(&phi0).unwrap(), vec![0.0; 8]);
    }

    #[test]
    fn bilinear_jacobian_and_pullback() {
        let mut r = rng::from_seed(4);
        let net = DenseNet::random(&[3, 4, 2], &[Activation::Tanh, Activation::Identity], false, &mut r).unwrap();
        let map = ReparamMap::lora_bilinear(&net, 0, 2).unwrap();
        let phi = rng::gaussian_vec(&mut r, map.k());
        let g = rng::gaussian_vec(&mut r, map.d());
        let j = map.jacobian(&phi).unwrap();
        assert!(relative_error(&map.pull_back(&phi, &g).unwrap(), &j.t_matvec(&g).unwrap()) < 1e-14);
        let h = 1e-6;
        for col in 0..map.k() {
            let mut pp = phi.clone();
            pp[col] += h;
            let mut pm = phi.clone();
            pm[col] -= h;
            let fd: Vec<f64> = map.apply(&pp).unwrap().iter().zip(map.apply(&pm).unwrap()).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            assert!(relative_error(&fd, &j.column(col)) < 1e-8);
        }
    }

    #[test]
    fn zero_phi_is_zero_update() {
        let mut r = rng::from_seed(6);
        let net = DenseNet::random(&[3, 4, 2], &[Activation::Relu, Activation::Identity], false, &mut r).unwrap();
        let maps = [
            ReparamMap::random_subspace(net.param_count(), 3, &mut r).unwrap(),
            ReparamMap::bitfit(net.param_count(), vec![1, 5]).unwrap(),
            ReparamMap::lora_linear_random(&net, 1, 1, &mut r).unwrap(),
            ReparamMap::lora_bilinear(&net, 0, 1).unwrap(),
        ];
        for m in &maps {
            assert_eq!(m.apply(&vec![0.0; m.k()]).unwrap(), vec![0.0; m.d()]);
        }
    }

    #[test]
    fn decompose_examples() {
        let map = ReparamMap::subspace(Matrix::from_rows(&[&[1.0], &[0.0]]).unwrap()).unwrap();
        let dec = map.decompose(&[1.0, 1.0]).unwrap();
        assert_eq!(dec.eps_par, vec![1.0, 0.0]);
        assert_eq!(dec.eps_perp, vec![0.0, 1.0]);
        let dec = map.decompose(&[2.0, 0.0]).unwrap();
        assert_eq!(dec.eps_perp, vec![0.0, 0.0]);

        let mut r = rng::from_seed(12);
        let p = Matrix::from_vec(8, 3, rng::gaussian_vec(&mut r, 24)).unwrap();
        let map = ReparamMap::subspace(p).unwrap();
        let eps = rng::gaussian_vec(&mut r, 8);
        let dec = map.decompose(&eps).unwrap();
        let recombined: Vec<f64> = dec.eps_par.iter().zip(&dec.eps_perp).map(|(a, b)| a + b).collect();
        assert!(norm(&crate::numerics::sub(&recombined, &eps)) < 1e-12);
        assert!(dot(&dec.eps_par, &dec.eps_perp).abs() < 1e-10 * dot(&eps, &eps));
    }
}
