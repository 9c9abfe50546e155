//! The hierarchical model: per-session interaction encoder, decayed session
//! encoder, retrieval encoder and answering decoder.

pub mod ac;
pub mod head;
pub mod row;
pub mod rr;
#[cfg(test)]
pub(crate) mod tests_oracle;

use rand::Rng;

use crate::config::{Ablation, ModelConfig};
use crate::embedding::{EmbeddingTables, PositionalTable};
use crate::error::{Error, Result};
use crate::kernel::layer_norm::LayerNorm;
use crate::kernel::tensor::{join, Parameters, Tensor};
use crate::kernel::{Block, BlockOptions, KeyScale, Weighting};
use crate::segmentation::SequenceLengths;

pub use head::PredictionHead;
pub use row::{forward_row, RowOutput, SessionPrediction};

/// Vocabulary sizes and padded lengths a parameter set is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelShape {
    pub num_skills: usize,
    pub num_questions: usize,
    pub lengths: SequenceLengths,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HitsktParams {
    pub emb: EmbeddingTables,
    pub inner: Block,
    pub inter: Block,
    pub ksr: Vec<Block>,
    pub ksr_norm: LayerNorm,
    pub decoder: Vec<Block>,
    pub out_norm: LayerNorm,
    pub head: PredictionHead,
}

impl HitsktParams {
    pub fn new<R: Rng>(config: &ModelConfig, shape: &ModelShape, rng: &mut R) -> Result<Self> {
        let d = config.d_model;
        let block = |rng: &mut R| Block::new(d, config.heads, config.d_ff, rng);
        let emb = EmbeddingTables::new(shape.num_skills, shape.num_questions, config.f_max, d, rng);
        let inner = block(rng)?;
        let inter = block(rng)?;
        let ksr = (0..config.ksr_layers).map(|_| block(rng)).collect::<Result<_>>()?;
        let decoder = (0..config.decoder_layers).map(|_| block(rng)).collect::<Result<_>>()?;
        Ok(HitsktParams {
            emb,
            inner,
            inter,
            ksr,
            ksr_norm: LayerNorm::new(d),
            decoder,
            out_norm: LayerNorm::new(d),
            head: PredictionHead::new(d, rng),
        })
    }
}

impl Parameters for HitsktParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.emb.visit(&join(prefix, "emb"), f);
        self.inner.visit(&join(prefix, "inner"), f);
        self.inter.visit(&join(prefix, "inter"), f);
        for (i, b) in self.ksr.iter().enumerate() {
            b.visit(&join(prefix, &format!("ksr{i}")), f);
        }
        self.ksr_norm.visit(&join(prefix, "ksr_norm"), f);
        for (i, b) in self.decoder.iter().enumerate() {
            b.visit(&join(prefix, &format!("decoder{i}")), f);
        }
        self.out_norm.visit(&join(prefix, "out_norm"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.emb.visit_mut(&join(prefix, "emb"), f);
        self.inner.visit_mut(&join(prefix, "inner"), f);
        self.inter.visit_mut(&join(prefix, "inter"), f);
        for (i, b) in self.ksr.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("ksr{i}")), f);
        }
        self.ksr_norm.visit_mut(&join(prefix, "ksr_norm"), f);
        for (i, b) in self.decoder.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("decoder{i}")), f);
        }
        self.out_norm.visit_mut(&join(prefix, "out_norm"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// Parameters together with the configuration and cached positional table
/// needed to run them.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub shape: ModelShape,
    pub params: HitsktParams,
    pe: PositionalTable,
}

impl Model {
    pub fn new<R: Rng>(config: ModelConfig, shape: ModelShape, rng: &mut R) -> Result<Self> {
        let params = HitsktParams::new(&config, &shape, rng)?;
        Model::from_params(config, shape, params)
    }

    pub fn from_params(config: ModelConfig, shape: ModelShape, params: HitsktParams) -> Result<Self> {
        if params.emb.dim() != config.d_model {
            return Err(Error::Shape(format!(
                "parameters have width {}, config says {}",
                params.emb.dim(),
                config.d_model
            )));
        }
        let pe = PositionalTable::new(shape.lengths.l_int + 1, config.d_model, config.ablation != Ablation::NoPos)?;
        Ok(Model {
            config,
            shape,
            params,
            pe,
        })
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn l_int(&self) -> usize {
        self.shape.lengths.l_int
    }

    pub(crate) fn pe(&self, pos: usize) -> &[f64] {
        self.pe.get(pos)
    }

    pub(crate) fn token_weighting(&self) -> Weighting {
        if self.config.ablation == Ablation::AvgPool {
            Weighting::Uniform
        } else {
            Weighting::Softmax
        }
    }

    pub(crate) fn block_options<'a>(&self, scale: KeyScale<'a>, weighting: Weighting) -> BlockOptions<'a> {
        BlockOptions {
            residual: self.config.residual,
            scale,
            weighting,
        }
    }
}

pub(crate) fn row_tensor(v: &[f64]) -> Tensor {
    Tensor::from_vec(&[1, v.len()], v.to_vec()).expect("row shape")
}

pub(crate) fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}
