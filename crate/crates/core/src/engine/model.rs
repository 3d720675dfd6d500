use std::borrow::Cow;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{LeakageConfig, TrainConfig};
use crate::container::{read_container, write_container, Block};
use crate::diffmath::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::proposals::{init_proposal_params, ProposalConfig};
use crate::synthcorpus::{ClassCatalog, Corpus};

pub const PARAMS_MAGIC: &str = "FPADPARM1";
const FORMAT_VERSION: u32 = 1;
/// Stream reserved for weight initialisation; training episodes use streams `0..iterations`.
const INIT_STREAM: u64 = u64::MAX;

/// Trained or initialised network plus the frozen feature transform it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ProposalConfig,
    pub feature_dim: usize,
    pub leakage: LeakageConfig,
    pub params: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    version: u32,
    feature_dim: usize,
    model: ProposalConfig,
    leakage: LeakageConfig,
    shapes: Vec<(String, Vec<usize>)>,
}

impl Model {
    /// Glorot initialisation seeded from `config.seed`.
    pub fn init(config: &TrainConfig, feature_dim: usize) -> Result<Self> {
        config.model.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(INIT_STREAM);
        let mut params = ParamStore::new();
        init_proposal_params(&mut params, &config.model, feature_dim, &mut rng);
        Ok(Self {
            config: config.model.clone(),
            feature_dim,
            leakage: config.leakage,
            params,
        })
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let shapes = self
            .params
            .iter()
            .map(|(n, t)| (n.to_owned(), t.dims().to_vec()))
            .collect();
        let header = ParamHeader {
            version: FORMAT_VERSION,
            feature_dim: self.feature_dim,
            model: self.config.clone(),
            leakage: self.leakage,
            shapes,
        };
        let blocks: Vec<Block<'_>> = self
            .params
            .iter()
            .map(|(name, t)| Block {
                name,
                values: t.values(),
            })
            .collect();
        write_container(out, PARAMS_MAGIC, &header, &blocks)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(fs::File::create(path)?))
    }

    pub fn read(bytes: &[u8]) -> Result<Self> {
        let mut c = read_container(bytes, PARAMS_MAGIC)?;
        let header: ParamHeader =
            serde_json::from_value(c.header.clone()).map_err(|e| Error::Header(e.to_string()))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Header(format!(
                "unsupported parameter format version {}",
                header.version
            )));
        }
        let mut params = ParamStore::new();
        for (name, dims) in header.shapes {
            let values = c.take_block(&name)?;
            let t = Tensor::new(dims, values)
                .map_err(|e| Error::Payload(format!("parameter `{name}`: {e}")))?;
            params.insert(name, t);
        }
        Ok(Self {
            config: header.model,
            feature_dim: header.feature_dim,
            leakage: header.leakage,
            params,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(&fs::read(path)?)
    }

    /// The corpus as seen through this model's frozen feature transform.
    pub fn view<'a>(&self, corpus: &'a Corpus) -> Result<Cow<'a, Corpus>> {
        if corpus.feature_dim() != self.feature_dim {
            return Err(Error::config(
                "corpus",
                format!(
                    "feature dim {} does not match model ({})",
                    corpus.feature_dim(),
                    self.feature_dim
                ),
            ));
        }
        Ok(if self.leakage.enabled {
            Cow::Owned(apply_leakage(corpus, &self.leakage))
        } else {
            Cow::Borrowed(corpus)
        })
    }
}

/// Orthonormal basis of the span of the pretraining references of visible classes.
pub fn visible_basis(catalog: &ClassCatalog) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for (class, q) in catalog.classes.iter().zip(&catalog.pretrain_prototypes) {
        if !class.pretrain_visible {
            continue;
        }
        let scale = dot(q, q).sqrt();
        let mut v = q.clone();
        for b in &basis {
            let c = dot(b, &v);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-9 * scale.max(1.0) {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adds `gain · P x` to `row`, with `P` the orthogonal projection onto `basis`.
pub fn leak_row(basis: &[Vec<f64>], gain: f64, row: &mut [f64]) {
    let coeffs: Vec<f64> = basis.iter().map(|b| gain * dot(b, row)).collect();
    for (b, c) in basis.iter().zip(coeffs) {
        row.iter_mut().zip(b).for_each(|(r, v)| *r += c * v);
    }
}

/// Copy of `corpus` with every exemplar and sequence row passed through [`leak_row`].
pub fn apply_leakage(corpus: &Corpus, config: &LeakageConfig) -> Corpus {
    let basis = visible_basis(&corpus.catalog);
    let mut out = corpus.clone();
    for clip in &mut out.exemplars {
        leak_row(&basis, config.gain, &mut clip.feature);
    }
    let d = corpus.feature_dim();
    for seq in &mut out.sequences {
        for row in seq.features.values_mut().chunks_mut(d) {
            leak_row(&basis, config.gain, row);
        }
    }
    out
}
