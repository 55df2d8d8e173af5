use std::collections::BTreeMap;

use super::network::{BatchForward, Mode, Model};
use crate::data::{Dataset, Utterance};
use crate::embedding::{BranchEmbedding, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::mlvae::GaussianPosterior;
use crate::tensor::{Graph, Tensor};
use crate::vq::QuantizationResult;

/// Evaluation-mode outputs, one entry per input utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub reconstruction: Vec<Vec<Vec<f64>>>,
    pub speaker_posterior: Vec<GaussianPosterior>,
    pub accent_posterior: Vec<GaussianPosterior>,
    /// Quantization of each utterance's group latent; `None` without VQ.
    pub speaker_q: Vec<Option<QuantizationResult>>,
    pub accent_q: Vec<Option<QuantizationResult>>,
}

struct EvalPass {
    graph: Graph,
    fwd: BatchForward,
}

fn row(graph: &Graph, node: crate::tensor::NodeId, i: usize) -> Result<Vec<f64>> {
    Ok(graph.value(node)?.row_slice(i)?.to_vec())
}

impl Model {
    fn eval_pass(&self, utterances: &[&Utterance]) -> Result<EvalPass> {
        let mut graph = Graph::new();
        let bound = self.bind(&mut graph, false);
        let fwd = self.forward(&mut graph, &bound, utterances, Mode::Eval)?;
        Ok(EvalPass { graph, fwd })
    }

    /// Noise-free forward pass with every utterance in one group batch.
    pub fn forward_output(&self, utterances: &[&Utterance]) -> Result<ForwardOutput> {
        let EvalPass { graph, fwd } = self.eval_pass(utterances)?;
        let n = utterances.len();
        let mut out = ForwardOutput {
            reconstruction: Vec::with_capacity(n),
            speaker_posterior: Vec::with_capacity(n),
            accent_posterior: Vec::with_capacity(n),
            speaker_q: Vec::with_capacity(n),
            accent_q: Vec::with_capacity(n),
        };
        for i in 0..n {
            out.reconstruction.push(fwd.reconstruction(&graph, i)?);
            for (branch, post, q) in [
                (&fwd.speaker, &mut out.speaker_posterior, &mut out.speaker_q),
                (&fwd.accent, &mut out.accent_posterior, &mut out.accent_q),
            ] {
                post.push(branch.observed.row(&graph, i)?);
                let g = branch.groups.group_of()[i];
                q.push(match &branch.quantized {
                    None => None,
                    Some(qn) => Some(QuantizationResult {
                        index: qn.indices[g],
                        quantized: row(&graph, qn.codewords, g)?,
                        pre_quantized: row(&graph, qn.pre_quantized, g)?,
                    }),
                });
            }
        }
        Ok(out)
    }
}

/// Posterior-mean embeddings for every utterance, in dataset order. Groups
/// span the whole dataset.
pub fn extract_embeddings(model: &Model, data: &Dataset) -> Result<Vec<EmbeddingRecord>> {
    let utts: Vec<&Utterance> = data.utterances.iter().collect();
    let EvalPass { graph, fwd } = model.eval_pass(&utts)?;
    utts.iter()
        .enumerate()
        .map(|(i, u)| {
            let branch = |b: &super::network::BranchForward| -> Result<BranchEmbedding> {
                let g = b.groups.group_of()[i];
                Ok(BranchEmbedding {
                    pre_vq: row(&graph, b.observed.mean, i)?,
                    grouped: row(&graph, b.grouped.mean, g)?,
                    quantized: row(&graph, b.decoder_latent, g)?,
                })
            };
            Ok(EmbeddingRecord {
                utterance_id: u.utterance_id.clone(),
                speaker_id: u.speaker_id.clone(),
                accent_id: u.accent_id.clone(),
                speaker: branch(&fwd.speaker)?,
                accent: branch(&fwd.accent)?,
            })
        })
        .collect()
}

/// `T x F` reconstructions in dataset order, groups spanning the dataset.
pub fn reconstruct(model: &Model, data: &Dataset) -> Result<Vec<Vec<Vec<f64>>>> {
    let utts: Vec<&Utterance> = data.utterances.iter().collect();
    let EvalPass { graph, fwd } = model.eval_pass(&utts)?;
    (0..utts.len()).map(|i| fwd.reconstruction(&graph, i)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversion {
    pub features: Vec<Vec<f64>>,
    pub speaker_latent: Vec<f64>,
    pub accent_latent: Vec<f64>,
}

/// Accent conversion against a fixed reference set.
///
/// The accent latent is the decoder-side latent of the target accent's group
/// over the reference set. The speaker latent is the utterance's own: its
/// speaker group's latent when the utterance belongs to the reference set,
/// otherwise its standalone encoding.
pub struct Converter<'m> {
    model: &'m Model,
    reference: Vec<Utterance>,
    speaker_latents: Vec<Vec<f64>>,
    accent_latents: BTreeMap<String, Vec<f64>>,
}

impl<'m> Converter<'m> {
    pub fn new(model: &'m Model, reference: &Dataset) -> Result<Self> {
        let utts: Vec<&Utterance> = reference.utterances.iter().collect();
        let EvalPass { graph, fwd } = model.eval_pass(&utts)?;
        let speaker_latents = (0..utts.len())
            .map(|i| row(&graph, fwd.speaker.decoder_latent, fwd.speaker.groups.group_of()[i]))
            .collect::<Result<Vec<_>>>()?;
        let accent_latents = fwd
            .accent
            .groups
            .labels()
            .iter()
            .enumerate()
            .map(|(g, label)| Ok((label.clone(), row(&graph, fwd.accent.decoder_latent, g)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self {
            model,
            reference: reference.utterances.clone(),
            speaker_latents,
            accent_latents,
        })
    }

    pub fn accents(&self) -> impl Iterator<Item = &str> {
        self.accent_latents.keys().map(String::as_str)
    }

    pub fn accent_latent(&self, accent: &str) -> Result<&[f64]> {
        self.accent_latents.get(accent).map(Vec::as_slice).ok_or_else(|| Error::Lookup {
            kind: "accent",
            id: accent.to_string(),
        })
    }

    fn speaker_latent(&self, utt: &Utterance) -> Result<Vec<f64>> {
        if let Some(i) = self.reference.iter().position(|r| r == utt) {
            return Ok(self.speaker_latents[i].clone());
        }
        let EvalPass { graph, fwd } = self.model.eval_pass(&[utt])?;
        row(&graph, fwd.speaker.decoder_latent, 0)
    }

    pub fn convert(&self, utt: &Utterance, target_accent: &str) -> Result<Conversion> {
        let accent_latent = self.accent_latent(target_accent)?.to_vec();
        let speaker_latent = self.speaker_latent(utt)?;
        let mut graph = Graph::new();
        let bound = self.model.bind(&mut graph, false);
        let s = graph.constant(Tensor::row(&speaker_latent)?);
        let a = graph.constant(Tensor::row(&accent_latent)?);
        let decoded = self.model.decode(&mut graph, &bound, s, a)?;
        let frame = graph.value(decoded)?.values().to_vec();
        Ok(Conversion {
            features: vec![frame; utt.frames()],
            speaker_latent,
            accent_latent,
        })
    }
}

/// Converts `utt` to `target_accent` using `reference` for accent latents.
pub fn convert(model: &Model, utt: &Utterance, target_accent: &str, reference: &Dataset) -> Result<Vec<Vec<f64>>> {
    Ok(Converter::new(model, reference)?.convert(utt, target_accent)?.features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SynthSpec};
    use crate::embedding::EmbeddingKind;
    use crate::model::config::{CodebookSizes, ModelConfig};
    use crate::model::network::build_model;
    use crate::vq::Branch;

    fn setup(use_vq: bool) -> (Model, Dataset) {
        let spec = SynthSpec {
            n_accents: 3,
            speakers_per_accent: 2,
            utterances_per_speaker: 2,
            frames: 5,
            feature_dim: 4,
            ..SynthSpec::default()
        };
        let cfg = ModelConfig {
            feature_dim: 4,
            hidden_dim: 8,
            latent_dim: 3,
            codebook_sizes: CodebookSizes { speaker: 6, accent: 5 },
            use_vq,
            ..ModelConfig::default()
        };
        (build_model(&cfg).unwrap(), synth_dataset(&spec).unwrap())
    }

    #[test]
    fn embeddings_are_per_utterance_and_group_shared() {
        let (model, data) = setup(true);
        let recs = extract_embeddings(&model, &data).unwrap();
        assert_eq!(recs.len(), data.len());
        let same_accent: Vec<_> = recs.iter().filter(|r| r.accent_id == recs[0].accent_id).collect();
        assert!(same_accent.len() > 1);
        for r in &same_accent {
            assert_eq!(r.accent.grouped, same_accent[0].accent.grouped);
        }
        assert_eq!(extract_embeddings(&model, &data).unwrap(), recs);
        for r in &recs {
            let q = r.vector(Branch::Accent, EmbeddingKind::Quantized);
            let idx = model.codebook(Branch::Accent).nearest(&r.accent.grouped).unwrap();
            assert_eq!(q, model.codebook(Branch::Accent).entry(idx));
        }
    }

    #[test]
    fn without_vq_quantized_equals_grouped() {
        let (model, data) = setup(false);
        for r in extract_embeddings(&model, &data).unwrap() {
            assert_eq!(r.speaker.quantized, r.speaker.grouped);
            assert_eq!(r.accent.quantized, r.accent.grouped);
        }
    }

    #[test]
    fn forward_output_matches_input_shapes() {
        let (model, data) = setup(true);
        let utts: Vec<&Utterance> = data.utterances.iter().collect();
        let out = model.forward_output(&utts).unwrap();
        for (u, x) in utts.iter().zip(&out.reconstruction) {
            assert_eq!(x.len(), u.frames());
            assert_eq!(x[0].len(), u.feature_dim());
        }
        assert!(out.accent_q.iter().all(Option::is_some));
        assert_eq!(out.speaker_posterior.len(), utts.len());
    }

    #[test]
    fn self_conversion_is_reconstruction() {
        let (model, data) = setup(true);
        let recon = reconstruct(&model, &data).unwrap();
        for (u, r) in data.utterances.iter().zip(&recon) {
            assert_eq!(&convert(&model, u, &u.accent_id, &data).unwrap(), r);
        }
    }

    #[test]
    fn conversion_shares_target_accent_latent() {
        let (model, data) = setup(true);
        let conv = Converter::new(&model, &data).unwrap();
        let target = "accent_02";
        let outs: Vec<Conversion> = data
            .utterances
            .iter()
            .filter(|u| u.speaker_id == "spk_00_00")
            .map(|u| conv.convert(u, target).unwrap())
            .collect();
        assert!(outs.len() > 1);
        for (o, u) in outs.iter().zip(&data.utterances) {
            assert_eq!(o.accent_latent, outs[0].accent_latent);
            assert_eq!(o.features.len(), u.frames());
        }
        assert!(matches!(
            conv.convert(&data.utterances[0], "accent_99"),
            Err(Error::Lookup { kind: "accent", .. })
        ));
    }
}
