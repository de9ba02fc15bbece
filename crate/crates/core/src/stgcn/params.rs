use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numkit::Tensor;

/// Shape descriptor for the layer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    /// Input window length `T`.
    pub history: usize,
    /// Forecast horizon `Δ`.
    pub horizon: usize,
    pub in_features: usize,
    pub out_features: usize,
    /// Width of every hidden layer.
    pub hidden: usize,
    pub layers: usize,
    /// Adjacency embedding width `d`.
    pub embed_dim: usize,
    /// Weight-pool embedding width `d′`.
    pub pool_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            history: 12,
            horizon: 12,
            in_features: 1,
            out_features: 1,
            hidden: 32,
            layers: 2,
            embed_dim: 10,
            pool_dim: 10,
        }
    }
}

impl Architecture {
    pub fn input_width(&self) -> usize {
        self.history * self.in_features
    }

    pub fn output_width(&self) -> usize {
        self.horizon * self.out_features
    }

    /// `(C, F)` for each layer; widths chain from `T·F_in` to `Δ·F_out`.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|l| {
                let c = if l == 0 { self.input_width() } else { self.hidden };
                let f = if l + 1 == self.layers {
                    self.output_width()
                } else {
                    self.hidden
                };
                (c, f)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("history", self.history),
            ("horizon", self.horizon),
            ("in_features", self.in_features),
            ("out_features", self.out_features),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("embed_dim", self.embed_dim),
            ("pool_dim", self.pool_dim),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Which forecaster family the parameters describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Learned adjacency from `E^A` and node-specific weights `Θ = E^G·W`.
    Adaptive,
    /// Ablation: one weight set shared by all nodes and a fixed uniform
    /// adjacency. Pools have a leading extent of 1 and no embeddings exist.
    Shared,
}

impl ModelKind {
    pub fn code(self) -> u8 {
        match self {
            ModelKind::Adaptive => 0,
            ModelKind::Shared => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ModelKind::Adaptive),
            1 => Some(ModelKind::Shared),
            _ => None,
        }
    }
}

/// Learnable state of one forecaster.
///
/// Blocks are stored in serialization order: `E^A`, `E^G` (adaptive kind
/// only), then `W_ℓ`, `b_ℓ` for each layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    kind: ModelKind,
    nodes: usize,
    blocks: Vec<Tensor>,
}

impl ModelParams {
    /// Wraps existing blocks after checking every extent against `arch`.
    pub fn from_blocks(
        arch: Architecture,
        kind: ModelKind,
        nodes: usize,
        blocks: Vec<Tensor>,
    ) -> Result<Self> {
        arch.validate()?;
        if nodes == 0 {
            return Err(Error::Contract("model needs at least one node".into()));
        }
        let expected = Self::block_shapes(&arch, kind, nodes);
        if blocks.len() != expected.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter blocks, got {}",
                expected.len(),
                blocks.len()
            )));
        }
        for (b, shape) in blocks.iter().zip(&expected) {
            if b.shape() != shape.as_slice() {
                return Err(Error::dim("model_params", b.shape(), shape));
            }
        }
        Ok(ModelParams {
            arch,
            kind,
            nodes,
            blocks,
        })
    }

    pub fn block_shapes(arch: &Architecture, kind: ModelKind, nodes: usize) -> Vec<Vec<usize>> {
        let pool = match kind {
            ModelKind::Adaptive => arch.pool_dim,
            ModelKind::Shared => 1,
        };
        let mut shapes = Vec::new();
        if kind == ModelKind::Adaptive {
            shapes.push(vec![nodes, arch.embed_dim]);
            shapes.push(vec![nodes, arch.pool_dim]);
        }
        for (c, f) in arch.layer_dims() {
            shapes.push(vec![pool, c, f]);
            shapes.push(vec![pool, f]);
        }
        shapes
    }

    /// Seeded initialization: embeddings `0.1·N(0,1)`, pools uniform in
    /// `±1/√fan_in`.
    pub fn init(arch: Architecture, kind: ModelKind, nodes: usize, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = Self::block_shapes(&arch, kind, nodes);
        let n_emb = Self::embedding_count(kind);
        let dims = arch.layer_dims();
        let mut blocks = Vec::with_capacity(shapes.len());
        for (i, shape) in shapes.iter().enumerate() {
            let numel = shape.iter().product();
            let data: Vec<f64> = if i < n_emb {
                (0..numel)
                    .map(|_| 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect::<Vec<f64>>()
            } else {
                let fan_in = dims[(i - n_emb) / 2].0 as f64;
                let bound = 1.0 / fan_in.sqrt();
                (0..numel).map(|_| rng.random_range(-bound..bound)).collect()
            };
            blocks.push(Tensor::new(shape, data)?);
        }
        Self::from_blocks(arch, kind, nodes, blocks)
    }

    fn embedding_count(kind: ModelKind) -> usize {
        match kind {
            ModelKind::Adaptive => 2,
            ModelKind::Shared => 0,
        }
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn blocks(&self) -> &[Tensor] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Tensor] {
        &mut self.blocks
    }

    /// Number of leading blocks that are per-node embeddings.
    pub fn embedding_blocks(&self) -> usize {
        Self::embedding_count(self.kind)
    }

    pub fn emb_a(&self) -> Option<&Tensor> {
        (self.kind == ModelKind::Adaptive).then(|| &self.blocks[0])
    }

    pub fn emb_g(&self) -> Option<&Tensor> {
        (self.kind == ModelKind::Adaptive).then(|| &self.blocks[1])
    }

    pub fn weight(&self, layer: usize) -> &Tensor {
        &self.blocks[self.embedding_blocks() + 2 * layer]
    }

    pub fn bias(&self, layer: usize) -> &Tensor {
        &self.blocks[self.embedding_blocks() + 2 * layer + 1]
    }

    pub fn block_label(&self, index: usize) -> String {
        let e = self.embedding_blocks();
        match (index < e, index) {
            (true, 0) => "E^A".to_string(),
            (true, _) => "E^G".to_string(),
            _ => {
                let l = (index - e) / 2;
                if (index - e) % 2 == 0 {
                    format!("W[{l}]")
                } else {
                    format!("b[{l}]")
                }
            }
        }
    }

    pub fn numel(&self) -> usize {
        self.blocks.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(Tensor::is_finite)
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.arch == other.arch
            && self.kind == other.kind
            && self.nodes == other.nodes
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// All values concatenated in block order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.numel());
        for b in &self.blocks {
            out.extend_from_slice(b.data());
        }
        out
    }

    /// Same layout as `self`, values taken from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<ModelParams> {
        if flat.len() != self.numel() {
            return Err(Error::dim("with_flat", &[self.numel()], &[flat.len()]));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for b in &mut out.blocks {
            let n = b.numel();
            b.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }

    /// View restricted to nodes `lo..hi`: embedding rows are sliced, pools
    /// are copied whole.
    pub fn slice_nodes(&self, lo: usize, hi: usize) -> Result<ModelParams> {
        if lo >= hi || hi > self.nodes {
            return Err(Error::Contract(format!(
                "node range {lo}..{hi} invalid for {} nodes",
                self.nodes
            )));
        }
        let e = self.embedding_blocks();
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| if i < e { b.slice_rows(lo, hi) } else { Ok(b.clone()) })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelParams {
            arch: self.arch,
            kind: self.kind,
            nodes: hi - lo,
            blocks,
        })
    }

    /// Copy of `self` with the embedding rows starting at `lo` replaced by
    /// `local`'s rows and every pool replaced by `local`'s pools.
    pub fn splice(&self, lo: usize, local: &ModelParams) -> Result<ModelParams> {
        if local.arch != self.arch || local.kind != self.kind || lo + local.nodes > self.nodes {
            return Err(Error::Contract("splice: incompatible local model".into()));
        }
        let e = self.embedding_blocks();
        let mut out = self.clone();
        for (i, (dst, src)) in out.blocks.iter_mut().zip(&local.blocks).enumerate() {
            if i < e {
                dst.set_rows(lo, src)?;
            } else {
                *dst = src.clone();
            }
        }
        Ok(out)
    }

    /// Reorders embedding rows so that new row `i` is old row `perm[i]`.
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<ModelParams> {
        if perm.len() != self.nodes {
            return Err(Error::dim("permute_nodes", &[self.nodes], &[perm.len()]));
        }
        let e = self.embedding_blocks();
        let mut out = self.clone();
        for b in out.blocks.iter_mut().take(e) {
            let rows: Vec<Vec<f64>> = perm.iter().map(|&p| b.row(p).to_vec()).collect();
            *b = Tensor::from_rows(&rows)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Architecture {
        Architecture {
            history: 3,
            horizon: 2,
            hidden: 4,
            layers: 3,
            embed_dim: 2,
            pool_dim: 3,
            ..Architecture::default()
        }
    }

    #[test]
    fn layer_widths_chain() {
        assert_eq!(tiny().layer_dims(), vec![(3, 4), (4, 4), (4, 2)]);
        let one = Architecture {
            layers: 1,
            ..tiny()
        };
        assert_eq!(one.layer_dims(), vec![(3, 2)]);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = ModelParams::init(tiny(), ModelKind::Adaptive, 5, 7).unwrap();
        let b = ModelParams::init(tiny(), ModelKind::Adaptive, 5, 7).unwrap();
        assert_eq!(a, b);
        let bound = 1.0 / 3f64.sqrt();
        assert!(a.weight(0).data().iter().all(|v| v.abs() <= bound));
        assert_eq!(a.emb_a().unwrap().shape(), &[5, 2]);
        assert_eq!(a.emb_g().unwrap().shape(), &[5, 3]);
        assert_eq!(a.weight(2).shape(), &[3, 4, 2]);
        let s = ModelParams::init(tiny(), ModelKind::Shared, 5, 7).unwrap();
        assert!(s.emb_a().is_none());
        assert_eq!(s.weight(0).shape(), &[1, 3, 4]);
    }

    #[test]
    fn slice_then_splice_restores() {
        let p = ModelParams::init(tiny(), ModelKind::Adaptive, 6, 1).unwrap();
        let s = p.slice_nodes(2, 5).unwrap();
        assert_eq!(s.nodes(), 3);
        assert_eq!(s.emb_a().unwrap().row(0), p.emb_a().unwrap().row(2));
        assert_eq!(p.splice(2, &s).unwrap(), p);
        assert!(p.slice_nodes(4, 7).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let p = ModelParams::init(tiny(), ModelKind::Adaptive, 4, 3).unwrap();
        let q = p.with_flat(&p.flatten()).unwrap();
        assert_eq!(p, q);
        assert!(p.with_flat(&[0.0]).is_err());
    }

    #[test]
    fn labels() {
        let p = ModelParams::init(tiny(), ModelKind::Adaptive, 4, 3).unwrap();
        let labels: Vec<_> = (0..4).map(|i| p.block_label(i)).collect();
        assert_eq!(labels, ["E^A", "E^G", "W[0]", "b[0]"]);
    }
}
