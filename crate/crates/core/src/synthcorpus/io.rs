use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ClassCatalog, ClassInfo, Corpus, CorpusConfig, ExemplarClip, GtSegment, UntrimmedSequence,
};
use crate::container::{read_container, write_container, Block};
use crate::diffmath::Tensor;
use crate::error::{Error, Result};

pub const CORPUS_MAGIC: &str = "FPADCORP1";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Counts {
    exemplars: usize,
    sequences: usize,
    segments: usize,
}

#[derive(Serialize, Deserialize)]
struct ClassMeta {
    name: String,
    pretrain_visible: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusHeader {
    version: u32,
    num_classes: usize,
    feature_dim: usize,
    sequence_length: usize,
    counts: Counts,
    seed: u64,
    config: CorpusConfig,
    classes: Vec<ClassMeta>,
    exemplar_classes: Vec<usize>,
    /// Per sequence, the class id of each segment (bounds live in the `segments` block).
    segment_classes: Vec<Vec<usize>>,
}

pub fn write_corpus<W: Write>(corpus: &Corpus, out: W) -> Result<()> {
    let d = corpus.feature_dim();
    let header = CorpusHeader {
        version: FORMAT_VERSION,
        num_classes: corpus.catalog.len(),
        feature_dim: d,
        sequence_length: corpus.sequence_length(),
        counts: Counts {
            exemplars: corpus.exemplars.len(),
            sequences: corpus.sequences.len(),
            segments: corpus.sequences.iter().map(|s| s.segments.len()).sum(),
        },
        seed: corpus.config.seed,
        config: corpus.config.clone(),
        classes: corpus
            .catalog
            .classes
            .iter()
            .map(|c| ClassMeta {
                name: c.name.clone(),
                pretrain_visible: c.pretrain_visible,
            })
            .collect(),
        exemplar_classes: corpus.exemplars.iter().map(|e| e.class_id).collect(),
        segment_classes: corpus
            .sequences
            .iter()
            .map(|s| s.segments.iter().map(|g| g.class_id).collect())
            .collect(),
    };

    let prototypes: Vec<f64> = corpus
        .catalog
        .classes
        .iter()
        .flat_map(|c| c.prototype.iter().copied())
        .collect();
    let pretrain: Vec<f64> = corpus
        .catalog
        .pretrain_prototypes
        .iter()
        .flatten()
        .copied()
        .collect();
    let correlation: Vec<f64> = corpus
        .catalog
        .classes
        .iter()
        .map(|c| c.correlation)
        .collect();
    let ex_features: Vec<f64> = corpus
        .exemplars
        .iter()
        .flat_map(|e| e.feature.iter().copied())
        .collect();
    let durations: Vec<f64> = corpus.exemplars.iter().map(|e| e.duration).collect();
    let seq_features: Vec<f64> = corpus
        .sequences
        .iter()
        .flat_map(|s| s.features.values().iter().copied())
        .collect();
    let bounds: Vec<f64> = corpus
        .sequences
        .iter()
        .flat_map(|s| s.segments.iter().flat_map(|g| [g.start, g.end]))
        .collect();

    write_container(
        out,
        CORPUS_MAGIC,
        &header,
        &[
            Block {
                name: "prototypes",
                values: &prototypes,
            },
            Block {
                name: "pretrain_prototypes",
                values: &pretrain,
            },
            Block {
                name: "bias_direction",
                values: &corpus.catalog.bias_direction,
            },
            Block {
                name: "action_offset",
                values: &corpus.catalog.action_offset,
            },
            Block {
                name: "class_correlation",
                values: &correlation,
            },
            Block {
                name: "exemplar_features",
                values: &ex_features,
            },
            Block {
                name: "exemplar_durations",
                values: &durations,
            },
            Block {
                name: "sequence_features",
                values: &seq_features,
            },
            Block {
                name: "segments",
                values: &bounds,
            },
        ],
    )
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    write_corpus(corpus, BufWriter::new(file))
}

fn expect_len(name: &str, block: &[f64], len: usize) -> Result<()> {
    if block.len() == len {
        Ok(())
    } else {
        Err(Error::Payload(format!(
            "block `{name}` has {} values, header implies {len}",
            block.len()
        )))
    }
}

pub fn read_corpus(bytes: &[u8]) -> Result<Corpus> {
    let mut container = read_container(bytes, CORPUS_MAGIC)?;
    let header: CorpusHeader = serde_json::from_value(container.header.clone())
        .map_err(|e| Error::Header(e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Header(format!(
            "unsupported version {}",
            header.version
        )));
    }
    let c = header.num_classes;
    let d = header.feature_dim;
    let t = header.sequence_length;
    if header.classes.len() != c
        || header.exemplar_classes.len() != header.counts.exemplars
        || header.segment_classes.len() != header.counts.sequences
        || header.config.feature_dim != d
        || header.config.sequence_length != t
    {
        return Err(Error::Header("inconsistent counts in header".into()));
    }
    let n_segments: usize = header.segment_classes.iter().map(Vec::len).sum();
    if n_segments != header.counts.segments {
        return Err(Error::Header("segment count mismatch".into()));
    }

    let prototypes = container.take_block("prototypes")?;
    expect_len("prototypes", &prototypes, c * d)?;
    let pretrain = container.take_block("pretrain_prototypes")?;
    expect_len("pretrain_prototypes", &pretrain, c * d)?;
    let bias_direction = container.take_block("bias_direction")?;
    expect_len("bias_direction", &bias_direction, d)?;
    let action_offset = container.take_block("action_offset")?;
    expect_len("action_offset", &action_offset, d)?;
    let correlation = container.take_block("class_correlation")?;
    expect_len("class_correlation", &correlation, c)?;
    let ex_features = container.take_block("exemplar_features")?;
    expect_len(
        "exemplar_features",
        &ex_features,
        header.counts.exemplars * d,
    )?;
    let durations = container.take_block("exemplar_durations")?;
    expect_len("exemplar_durations", &durations, header.counts.exemplars)?;
    let seq_features = container.take_block("sequence_features")?;
    expect_len(
        "sequence_features",
        &seq_features,
        header.counts.sequences * t * d,
    )?;
    let bounds = container.take_block("segments")?;
    expect_len("segments", &bounds, n_segments * 2)?;

    let classes = header
        .classes
        .into_iter()
        .enumerate()
        .map(|(i, meta)| ClassInfo {
            name: meta.name,
            prototype: prototypes[i * d..(i + 1) * d].to_vec(),
            pretrain_visible: meta.pretrain_visible,
            correlation: correlation[i],
        })
        .collect();
    let catalog = ClassCatalog {
        classes,
        pretrain_prototypes: pretrain.chunks(d).map(<[f64]>::to_vec).collect(),
        bias_direction,
        action_offset,
    };

    let mut exemplars = Vec::with_capacity(header.counts.exemplars);
    for (i, &class_id) in header.exemplar_classes.iter().enumerate() {
        if class_id >= c {
            return Err(Error::Header(format!(
                "exemplar class {class_id} out of range"
            )));
        }
        exemplars.push(ExemplarClip {
            class_id,
            duration: durations[i],
            feature: ex_features[i * d..(i + 1) * d].to_vec(),
        });
    }

    let mut sequences = Vec::with_capacity(header.counts.sequences);
    let mut bound_iter = bounds.chunks_exact(2);
    for (i, seg_classes) in header.segment_classes.iter().enumerate() {
        let mut segments = Vec::with_capacity(seg_classes.len());
        for &class_id in seg_classes {
            let b = bound_iter.next().expect("length checked above");
            if class_id >= c {
                return Err(Error::Header(format!(
                    "segment class {class_id} out of range"
                )));
            }
            segments.push(GtSegment {
                start: b[0],
                end: b[1],
                class_id,
            });
        }
        let features = seq_features[i * t * d..(i + 1) * t * d].to_vec();
        sequences.push(UntrimmedSequence {
            features: Tensor::new(vec![t, d], features)?,
            segments,
            frame_rate: header.config.frame_rate,
            temporal_stride: header.config.temporal_stride,
        });
    }

    Ok(Corpus {
        config: header.config,
        catalog,
        exemplars,
        sequences,
    })
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    read_corpus(&fs::read(path)?)
}
