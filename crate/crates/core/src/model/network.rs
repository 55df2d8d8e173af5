use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::ModelConfig;
use super::loss::{reconstruction_loss_rows, LossBreakdown, LossNodes};
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::mlvae::{
    accumulate_all_groups, kl_standard_normal_nodes, reparameterize_nodes, GroupIndex, PosteriorNodes,
    LOG_VARIANCE_MAX, LOG_VARIANCE_MIN,
};
use crate::tensor::{Graph, NodeId, Tensor};
use crate::vq::{codebook_loss, commitment_loss, quantize_nodes, Branch, Codebook, QuantizedNodes};

/// Dense parameters in storage (and checkpoint) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    EncoderInW,
    EncoderInB,
    EncoderHiddenW,
    EncoderHiddenB,
    SpeakerMeanW,
    SpeakerMeanB,
    SpeakerLogVarW,
    SpeakerLogVarB,
    AccentMeanW,
    AccentMeanB,
    AccentLogVarW,
    AccentLogVarB,
    DecoderInW,
    DecoderInB,
    DecoderHiddenW,
    DecoderHiddenB,
    DecoderOutW,
    DecoderOutB,
}

impl Param {
    pub const ALL: [Param; 18] = [
        Param::EncoderInW,
        Param::EncoderInB,
        Param::EncoderHiddenW,
        Param::EncoderHiddenB,
        Param::SpeakerMeanW,
        Param::SpeakerMeanB,
        Param::SpeakerLogVarW,
        Param::SpeakerLogVarB,
        Param::AccentMeanW,
        Param::AccentMeanB,
        Param::AccentLogVarW,
        Param::AccentLogVarB,
        Param::DecoderInW,
        Param::DecoderInB,
        Param::DecoderHiddenW,
        Param::DecoderHiddenB,
        Param::DecoderOutW,
        Param::DecoderOutB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::EncoderInW => "encoder.input.weight",
            Param::EncoderInB => "encoder.input.bias",
            Param::EncoderHiddenW => "encoder.hidden.weight",
            Param::EncoderHiddenB => "encoder.hidden.bias",
            Param::SpeakerMeanW => "speaker.mean.weight",
            Param::SpeakerMeanB => "speaker.mean.bias",
            Param::SpeakerLogVarW => "speaker.log_variance.weight",
            Param::SpeakerLogVarB => "speaker.log_variance.bias",
            Param::AccentMeanW => "accent.mean.weight",
            Param::AccentMeanB => "accent.mean.bias",
            Param::AccentLogVarW => "accent.log_variance.weight",
            Param::AccentLogVarB => "accent.log_variance.bias",
            Param::DecoderInW => "decoder.input.weight",
            Param::DecoderInB => "decoder.input.bias",
            Param::DecoderHiddenW => "decoder.hidden.weight",
            Param::DecoderHiddenB => "decoder.hidden.bias",
            Param::DecoderOutW => "decoder.output.weight",
            Param::DecoderOutB => "decoder.output.bias",
        }
    }

    pub fn is_decoder(self) -> bool {
        matches!(
            self,
            Param::DecoderInW
                | Param::DecoderInB
                | Param::DecoderHiddenW
                | Param::DecoderHiddenB
                | Param::DecoderOutW
                | Param::DecoderOutB
        )
    }

    fn is_bias(self) -> bool {
        self.name().ends_with(".bias")
    }

    /// `[fan_in, fan_out]` for weights, `[1, fan_out]` for biases.
    pub fn shape(self, cfg: &ModelConfig) -> [usize; 2] {
        let (f, h, d) = (cfg.feature_dim, cfg.hidden_dim, cfg.latent_dim);
        match self {
            Param::EncoderInW => [f, h],
            Param::EncoderHiddenW => [h, h],
            Param::SpeakerMeanW | Param::SpeakerLogVarW | Param::AccentMeanW | Param::AccentLogVarW => [h, d],
            Param::DecoderInW => [2 * d, h],
            Param::DecoderHiddenW => [h, h],
            Param::DecoderOutW => [h, f],
            Param::EncoderInB | Param::EncoderHiddenB | Param::DecoderInB | Param::DecoderHiddenB => [1, h],
            Param::SpeakerMeanB | Param::SpeakerLogVarB | Param::AccentMeanB | Param::AccentLogVarB => [1, d],
            Param::DecoderOutB => [1, f],
        }
    }
}

/// The toy encoder/decoder with two grouped, quantized latent branches.
///
/// Encoder: frame-wise dense + tanh, mean over frames, dense + tanh, then
/// per-branch mean and log-variance heads. Decoder: the concatenated
/// speaker and accent latents through two dense + tanh layers and a linear
/// output of width `feature_dim`, repeated over the utterance's frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub(crate) config: ModelConfig,
    pub(crate) params: Vec<Tensor>,
    pub(crate) speaker_codebook: Codebook,
    pub(crate) accent_codebook: Codebook,
}

/// Fresh model with Glorot-uniform weights, zero biases, and codebooks drawn
/// from `[-1/size, 1/size]`, all from `cfg.seed`.
pub fn build_model(cfg: &ModelConfig) -> Result<Model> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = Param::ALL
        .iter()
        .map(|&p| {
            let [rows, cols] = p.shape(cfg);
            if p.is_bias() {
                return Tensor::zeros(&[rows, cols]);
            }
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let values = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
            Tensor::new(&[rows, cols], values)
        })
        .collect::<Result<Vec<_>>>()?;
    let speaker_codebook = Codebook::init(Branch::Speaker, cfg.codebook_sizes.speaker, cfg.latent_dim, &mut rng)?;
    let accent_codebook = Codebook::init(Branch::Accent, cfg.codebook_sizes.accent, cfg.latent_dim, &mut rng)?;
    Ok(Model {
        config: cfg.clone(),
        params,
        speaker_codebook,
        accent_codebook,
    })
}

/// Closed-form count of trainable scalars, codebooks included.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    let (f, h, d) = (cfg.feature_dim, cfg.hidden_dim, cfg.latent_dim);
    let encoder = f * h + h + h * h + h + 4 * (h * d + d);
    let decoder = 2 * d * h + h + h * h + h + h * f + f;
    encoder + decoder + (cfg.codebook_sizes.speaker + cfg.codebook_sizes.accent) * d
}

/// Training draws reparameterization noise; evaluation uses posterior means.
pub enum Mode<'a> {
    Train { noise: &'a mut ChaCha8Rng },
    Eval,
}

/// Node handles for every model tensor bound into one graph.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub params: Vec<NodeId>,
    pub speaker_codebook: NodeId,
    pub accent_codebook: NodeId,
}

impl BoundParams {
    fn get(&self, p: Param) -> NodeId {
        self.params[p as usize]
    }
}

/// One branch of a batch forward pass.
#[derive(Debug, Clone)]
pub struct BranchForward {
    pub groups: GroupIndex,
    /// Per-utterance posteriors `[B, D]`.
    pub observed: PosteriorNodes,
    /// Group posteriors `[G, D]` in group-id order.
    pub grouped: PosteriorNodes,
    /// Sampled (training) or mean (evaluation) group latents `[G, D]`.
    pub latent: NodeId,
    pub quantized: Option<QuantizedNodes>,
    /// What the decoder consumes per group `[G, D]`.
    pub decoder_latent: NodeId,
}

#[derive(Debug, Clone)]
pub struct BatchForward {
    pub speaker: BranchForward,
    pub accent: BranchForward,
    /// Decoder output, one row per utterance `[B, F]`.
    pub decoded: NodeId,
    pub frames: Vec<usize>,
}

impl BatchForward {
    pub fn branch(&self, b: Branch) -> &BranchForward {
        match b {
            Branch::Speaker => &self.speaker,
            Branch::Accent => &self.accent,
        }
    }

    /// The `T x F` reconstruction of utterance `i` of the batch.
    pub fn reconstruction(&self, graph: &Graph, i: usize) -> Result<Vec<Vec<f64>>> {
        let row = graph.value(self.decoded)?.row_slice(i)?.to_vec();
        Ok(vec![row; self.frames[i]])
    }
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param(&self, p: Param) -> &Tensor {
        &self.params[p as usize]
    }

    pub fn codebook(&self, b: Branch) -> &Codebook {
        match b {
            Branch::Speaker => &self.speaker_codebook,
            Branch::Accent => &self.accent_codebook,
        }
    }

    pub fn codebook_mut(&mut self, b: Branch) -> &mut Codebook {
        match b {
            Branch::Speaker => &mut self.speaker_codebook,
            Branch::Accent => &mut self.accent_codebook,
        }
    }

    /// All tensors with their names: dense parameters, then codebooks.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out: Vec<(&'static str, &Tensor)> =
            Param::ALL.iter().map(|&p| (p.name(), &self.params[p as usize])).collect();
        out.push(("codebook.speaker", self.speaker_codebook.entries()));
        out.push(("codebook.accent", self.accent_codebook.entries()));
        out
    }

    pub(crate) fn trainable_tensors_mut(&mut self) -> Vec<(bool, &mut Tensor)> {
        let freeze = self.config.freeze_decoder;
        let mut out: Vec<(bool, &mut Tensor)> = Param::ALL
            .iter()
            .zip(self.params.iter_mut())
            .map(|(p, t)| (!(freeze && p.is_decoder()), t))
            .collect();
        out.push((true, self.speaker_codebook.entries_mut()));
        out.push((true, self.accent_codebook.entries_mut()));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Loads every tensor into `graph`; `trainable` marks them as leaves that
    /// receive gradients (frozen decoder tensors always enter as constants).
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> BoundParams {
        let freeze = self.config.freeze_decoder;
        let params = Param::ALL
            .iter()
            .map(|&p| {
                let t = self.params[p as usize].clone();
                if trainable && !(freeze && p.is_decoder()) {
                    graph.parameter(t)
                } else {
                    graph.constant(t)
                }
            })
            .collect();
        let mut book = |b: &Codebook| {
            let t = b.entries().clone();
            if trainable {
                graph.parameter(t)
            } else {
                graph.constant(t)
            }
        };
        BoundParams {
            speaker_codebook: book(&self.speaker_codebook),
            accent_codebook: book(&self.accent_codebook),
            params,
        }
    }

    fn check_utterances(&self, utterances: &[&Utterance]) -> Result<()> {
        if utterances.is_empty() {
            return Err(Error::contract("a batch needs at least one utterance"));
        }
        if let Some(u) = utterances.iter().find(|u| u.feature_dim() != self.config.feature_dim) {
            return Err(Error::dim(format!(
                "utterance `{}` has feature_dim {}, model expects {}",
                u.utterance_id,
                u.feature_dim(),
                self.config.feature_dim
            )));
        }
        Ok(())
    }

    /// Per-utterance posteriors for both branches.
    pub fn encode(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        utterances: &[&Utterance],
    ) -> Result<(PosteriorNodes, PosteriorNodes)> {
        self.check_utterances(utterances)?;
        let frames: Vec<usize> = utterances.iter().map(|u| u.frames()).collect();
        let total: usize = frames.iter().sum();
        let flat: Vec<f64> = utterances.iter().flat_map(|u| u.features.iter().flatten().copied()).collect();
        let x = graph.constant(Tensor::new(&[total, self.config.feature_dim], flat)?);

        let pre1 = graph.affine(x, bound.get(Param::EncoderInW), bound.get(Param::EncoderInB))?;
        let h1 = graph.tanh(pre1)?;
        let pooled = graph.segment_mean(h1, frames)?;
        let pre2 = graph.affine(pooled, bound.get(Param::EncoderHiddenW), bound.get(Param::EncoderHiddenB))?;
        let h2 = graph.tanh(pre2)?;

        let mut head = |mean_w, mean_b, lv_w, lv_b| -> Result<PosteriorNodes> {
            let mean = graph.affine(h2, bound.get(mean_w), bound.get(mean_b))?;
            let raw_lv = graph.affine(h2, bound.get(lv_w), bound.get(lv_b))?;
            let log_variance = graph.clamp(raw_lv, LOG_VARIANCE_MIN, LOG_VARIANCE_MAX)?;
            Ok(PosteriorNodes { mean, log_variance })
        };
        let speaker = head(
            Param::SpeakerMeanW,
            Param::SpeakerMeanB,
            Param::SpeakerLogVarW,
            Param::SpeakerLogVarB,
        )?;
        let accent = head(
            Param::AccentMeanW,
            Param::AccentMeanB,
            Param::AccentLogVarW,
            Param::AccentLogVarB,
        )?;
        Ok((speaker, accent))
    }

    /// Decoder rows `[n, F]` from per-row speaker and accent latents `[n, D]`.
    pub fn decode(&self, graph: &mut Graph, bound: &BoundParams, speaker: NodeId, accent: NodeId) -> Result<NodeId> {
        let z = graph.concat_last(&[speaker, accent])?;
        let pre1 = graph.affine(z, bound.get(Param::DecoderInW), bound.get(Param::DecoderInB))?;
        let d1 = graph.tanh(pre1)?;
        let pre2 = graph.affine(d1, bound.get(Param::DecoderHiddenW), bound.get(Param::DecoderHiddenB))?;
        let d2 = graph.tanh(pre2)?;
        graph.affine(d2, bound.get(Param::DecoderOutW), bound.get(Param::DecoderOutB))
    }

    fn branch_forward(
        &self,
        graph: &mut Graph,
        codebook_node: NodeId,
        branch: Branch,
        observed: PosteriorNodes,
        labels: &[&str],
        mode: &mut Mode<'_>,
    ) -> Result<BranchForward> {
        let groups = GroupIndex::from_labels(labels);
        let grouped = accumulate_all_groups(graph, observed, &groups)?;
        let latent = match mode {
            Mode::Eval => grouped.mean,
            Mode::Train { noise } => {
                let n = groups.len() * self.config.latent_dim;
                let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut **noise)).collect();
                reparameterize_nodes(
                    graph,
                    grouped,
                    Tensor::new(&[groups.len(), self.config.latent_dim], eps)?,
                )?
            }
        };
        let (quantized, decoder_latent) = if self.config.use_vq {
            let q = quantize_nodes(graph, latent, codebook_node, self.codebook(branch))?;
            let out = q.quantized;
            (Some(q), out)
        } else {
            (None, latent)
        };
        Ok(BranchForward {
            groups,
            observed,
            grouped,
            latent,
            quantized,
            decoder_latent,
        })
    }

    /// Full batch forward pass. Groups are formed from the labels of the
    /// utterances in this batch only.
    pub fn forward(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        utterances: &[&Utterance],
        mut mode: Mode<'_>,
    ) -> Result<BatchForward> {
        let (spk_obs, acc_obs) = self.encode(graph, bound, utterances)?;
        let spk_labels: Vec<&str> = utterances.iter().map(|u| u.speaker_id.as_str()).collect();
        let acc_labels: Vec<&str> = utterances.iter().map(|u| u.accent_id.as_str()).collect();
        let speaker = self.branch_forward(graph, bound.speaker_codebook, Branch::Speaker, spk_obs, &spk_labels, &mut mode)?;
        let accent = self.branch_forward(graph, bound.accent_codebook, Branch::Accent, acc_obs, &acc_labels, &mut mode)?;

        let spk_rows = graph.gather_rows(speaker.decoder_latent, speaker.groups.group_of().to_vec())?;
        let acc_rows = graph.gather_rows(accent.decoder_latent, accent.groups.group_of().to_vec())?;
        let decoded = self.decode(graph, bound, spk_rows, acc_rows)?;
        Ok(BatchForward {
            speaker,
            accent,
            decoded,
            frames: utterances.iter().map(|u| u.frames()).collect(),
        })
    }

    /// Loss terms for a batch forward pass:
    /// `total = recon + beta * kl + commitment + codebook`.
    pub fn loss(
        &self,
        graph: &mut Graph,
        fwd: &BatchForward,
        utterances: &[&Utterance],
    ) -> Result<LossNodes> {
        let batch = utterances.len() as f64;
        let recon = reconstruction_loss_rows(graph, fwd.decoded, utterances)?;

        let mut kl_terms = Vec::with_capacity(2);
        let mut commit_terms = Vec::with_capacity(2);
        let mut book_terms = Vec::with_capacity(2);
        for branch in [&fwd.speaker, &fwd.accent] {
            kl_terms.push(kl_standard_normal_nodes(graph, branch.grouped)?);
            if let Some(q) = &branch.quantized {
                let idx = branch.groups.group_of().to_vec();
                let pre = graph.gather_rows(q.pre_quantized, idx.clone())?;
                let code = graph.gather_rows(q.codewords, idx)?;
                commit_terms.push(commitment_loss(graph, pre, code)?);
                book_terms.push(codebook_loss(graph, pre, code)?);
            }
        }
        let kl_sum = graph.add(kl_terms[0], kl_terms[1])?;
        let kl = graph.scale(kl_sum, 1.0 / batch)?;
        let mut zero = || graph.constant(Tensor::scalar(0.0));
        let (commitment, codebook) = if commit_terms.is_empty() {
            (zero(), zero())
        } else {
            let c = graph.add(commit_terms[0], commit_terms[1])?;
            let b = graph.add(book_terms[0], book_terms[1])?;
            (graph.scale(c, 1.0 / batch)?, graph.scale(b, 1.0 / batch)?)
        };

        let weighted_kl = graph.scale(kl, self.config.beta)?;
        let t = graph.add(recon, weighted_kl)?;
        let t = graph.add(t, commitment)?;
        let total = graph.add(t, codebook)?;
        Ok(LossNodes {
            recon,
            kl,
            commitment,
            codebook,
            total,
            beta: self.config.beta,
        })
    }

    /// Evaluation-mode loss breakdown for a set of utterances, grouped as one batch.
    pub fn evaluate_loss(&self, utterances: &[&Utterance]) -> Result<LossBreakdown> {
        let mut graph = Graph::new();
        let bound = self.bind(&mut graph, false);
        let fwd = self.forward(&mut graph, &bound, utterances, Mode::Eval)?;
        let nodes = self.loss(&mut graph, &fwd, utterances)?;
        nodes.read(&graph)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SynthSpec};
    use crate::model::config::CodebookSizes;

    #[test]
    fn parameter_count_matches_layers() {
        let cfg = ModelConfig {
            feature_dim: 8,
            latent_dim: 4,
            ..ModelConfig::default()
        };
        let model = build_model(&cfg).unwrap();
        // encoder: 8*256+256 + 256*256+256 + 4*(256*4+4)
        // decoder: 8*256+256 + 256*256+256 + 256*8+8
        // codebooks: (512+512)*4
        let expected = (2048 + 256 + 65_536 + 256 + 4 * 1028) + (2048 + 256 + 65_536 + 256 + 2048 + 8) + 4096;
        assert_eq!(expected, 146_456);
        assert_eq!(model.num_parameters(), expected);
        assert_eq!(parameter_count(&cfg), expected);
    }

    #[test]
    fn same_seed_same_init() {
        let cfg = ModelConfig {
            hidden_dim: 8,
            ..ModelConfig::default()
        };
        assert_eq!(build_model(&cfg).unwrap(), build_model(&cfg).unwrap());
        let other = ModelConfig { seed: 1, ..cfg.clone() };
        assert_ne!(build_model(&cfg).unwrap(), build_model(&other).unwrap());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = ModelConfig {
            latent_dim: 0,
            ..ModelConfig::default()
        };
        assert!(matches!(build_model(&cfg), Err(Error::Validation(_))));
    }

    #[test]
    fn forward_shapes_and_group_sharing() {
        let spec = SynthSpec {
            n_accents: 2,
            speakers_per_accent: 2,
            utterances_per_speaker: 2,
            frames: 3,
            feature_dim: 5,
            ..SynthSpec::default()
        };
        let data = synth_dataset(&spec).unwrap();
        let cfg = ModelConfig {
            feature_dim: 5,
            hidden_dim: 6,
            latent_dim: 2,
            codebook_sizes: CodebookSizes { speaker: 4, accent: 3 },
            ..ModelConfig::default()
        };
        let model = build_model(&cfg).unwrap();
        let utts: Vec<&Utterance> = data.utterances.iter().collect();
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let fwd = model.forward(&mut g, &bound, &utts, Mode::Eval).unwrap();
        assert_eq!(g.value(fwd.decoded).unwrap().shape(), &[8, 5]);
        assert_eq!(fwd.accent.groups.len(), 2);
        assert_eq!(fwd.speaker.groups.len(), 4);
        for (i, u) in utts.iter().enumerate() {
            let r = fwd.reconstruction(&g, i).unwrap();
            assert_eq!((r.len(), r[0].len()), (u.frames(), u.feature_dim()));
        }
        let loss = model.loss(&mut g, &fwd, &utts).unwrap().read(&g).unwrap();
        assert!(loss.total.is_finite());
        assert_eq!(loss.total, loss.recon + loss.beta * loss.kl + loss.commitment + loss.codebook);

        let wrong = ModelConfig { feature_dim: 4, ..cfg };
        let m2 = build_model(&wrong).unwrap();
        let mut g = Graph::new();
        let bound = m2.bind(&mut g, false);
        assert!(matches!(m2.forward(&mut g, &bound, &utts, Mode::Eval), Err(Error::Dimension(_))));
    }
}
