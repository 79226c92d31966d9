//! The full report generator: image encoder, knowledge encoder and fusion,
//! text encoder with a matching head, and the decoder, trained jointly on the
//! sum of the contrastive, matching and language-modelling losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{SyntheticImage, BOS, CLS, ENC, EOS};
use crate::decoder::{DecodeConfig, DecoderStack, Generation};
use crate::encoders::{
    momentum_update, EnhancedVisualFeatures, KnowledgeEncoder, KnowledgeFusion, Linear, ModelConfig, TextEncoder,
    TextMode, VisionEncoder,
};
use crate::error::{Error, Result};
use crate::objectives::{
    clamp_temperature, itc_loss, itm_loss, lm_loss, sample_itm_negatives, total_loss, ContrastiveState,
    LossBreakdown, TAU_MAX, TAU_MIN,
};
use crate::tensor::{AdamW, ParamId, ParamStore, Tape, Tensor, Var};

/// One training or evaluation item in token form.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub image: SyntheticImage,
    /// Report ids without control tokens.
    pub report: Vec<usize>,
    /// Serialized knowledge ids (node names joined by [SEP], or [NONE]).
    pub knowledge: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportModel {
    pub config: ModelConfig,
    pub vision: VisionEncoder,
    pub text: TextEncoder,
    pub knowledge: KnowledgeEncoder,
    pub fusion: KnowledgeFusion,
    pub decoder: DecoderStack,
    pub itm_head: Linear,
    pub temperature: ParamId,
    vocab_size: usize,
}

/// Batch forward result; `loss` is ready for `backward`.
pub struct BatchLoss<'t> {
    pub loss: Var<'t>,
    pub breakdown: LossBreakdown,
    /// Momentum projections to enqueue after the update.
    pub momentum_image: Tensor,
    pub momentum_text: Tensor,
    pub itm_positives_only: bool,
}

impl ReportModel {
    /// Builds the model and its parameters. Parameter names are stable, so a
    /// store built with the same config and vocabulary size can load a
    /// checkpoint of this one.
    pub fn new(config: &ModelConfig, vocab_size: usize, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let vision = VisionEncoder::new(&mut store, "vision", config, &mut rng)?;
        let text = TextEncoder::new(&mut store, "text", config, vocab_size, &mut rng)?;
        let knowledge = KnowledgeEncoder::sharing(&text, &mut store, "knowledge", &mut rng)?;
        let fusion = KnowledgeFusion::new(&mut store, "fusion", config.width, config.heads, &mut rng)?;
        let decoder = DecoderStack::sharing(&text, &mut store, "decoder", config, vocab_size, &mut rng)?;
        let itm_head = Linear::new(&mut store, "itm_head", config.width, 2, &mut rng)?;
        let temperature = store.register("temperature", Tensor::scalar(config.temperature.clamp(TAU_MIN, TAU_MAX)))?;
        let model = ReportModel {
            config: config.clone(),
            vision,
            text,
            knowledge,
            fusion,
            decoder,
            itm_head,
            temperature,
            vocab_size,
        };
        Ok((model, store))
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Longest report (in tokens) the text stacks accept.
    pub fn max_report_len(&self) -> usize {
        self.config.max_len - 1
    }

    pub fn enhance<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        pixels: Var<'t>,
        knowledge: &[usize],
    ) -> Result<EnhancedVisualFeatures<'t>> {
        let visual = self.vision.encode(tape, store, pixels)?;
        let k = self.knowledge.encode_knowledge(tape, store, knowledge)?;
        self.fusion.fuse(tape, store, &visual, &k)
    }

    pub fn enhance_image<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        image: &SyntheticImage,
        knowledge: &[usize],
    ) -> Result<EnhancedVisualFeatures<'t>> {
        let visual = self.vision.encode_image(tape, store, image)?;
        let k = self.knowledge.encode_knowledge(tape, store, knowledge)?;
        self.fusion.fuse(tape, store, &visual, &k)
    }

    pub fn generate(
        &self,
        store: &ParamStore,
        image: &SyntheticImage,
        knowledge: &[usize],
        decode: &DecodeConfig,
    ) -> Result<Generation> {
        let tape = Tape::new();
        let visual = self.enhance_image(&tape, store, image, knowledge)?.features.value();
        self.decoder.generate(store, &visual, decode)
    }

    fn check_report(&self, report: &[usize]) -> Result<()> {
        if report.len() > self.max_report_len() {
            return Err(Error::contract(format!(
                "report of {} tokens exceeds {}",
                report.len(),
                self.max_report_len()
            )));
        }
        Ok(())
    }

    /// Contrastive projections (enhanced image [CLS], text [CLS]) of a batch.
    fn projections<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        batch: &[Example],
    ) -> Result<(Vec<EnhancedVisualFeatures<'t>>, Var<'t>, Var<'t>)> {
        let mut enhanced = Vec::with_capacity(batch.len());
        let mut image_proj = Vec::with_capacity(batch.len());
        let mut text_proj = Vec::with_capacity(batch.len());
        for ex in batch {
            self.check_report(&ex.report)?;
            let enh = self.enhance_image(tape, store, &ex.image, &ex.knowledge)?;
            image_proj.push(self.vision.project_cls(tape, store, enh.features)?);
            let tokens = with_prefix(CLS, &ex.report);
            text_proj.push(self.text.encode_text(tape, store, &tokens, TextMode::Bidirectional)?.cls_projection);
            enhanced.push(enh);
        }
        Ok((enhanced, Var::concat_rows(&image_proj)?, Var::concat_rows(&text_proj)?))
    }

    fn itm_logits<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        report: &[usize],
        visual: &EnhancedVisualFeatures<'t>,
    ) -> Result<Var<'t>> {
        let tokens = with_prefix(ENC, report);
        let h = self.text.encode_text(tape, store, &tokens, TextMode::WithImageCross(visual))?.h_t;
        self.itm_head.forward(tape, store, h.slice_rows(0..1)?)
    }

    /// Decoder logits and shifted targets for teacher forcing.
    pub fn lm_logits<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        report: &[usize],
        visual: &EnhancedVisualFeatures<'t>,
    ) -> Result<(Var<'t>, Vec<usize>)> {
        self.check_report(report)?;
        let input = with_prefix(BOS, report);
        let mut targets = report.to_vec();
        targets.push(EOS);
        Ok((self.decoder.forward_causal(tape, store, &input, visual)?, targets))
    }

    /// Momentum-encoder projections, computed without gradients.
    pub fn momentum_projections(&self, momentum: &ParamStore, batch: &[Example]) -> Result<(Tensor, Tensor)> {
        let tape = Tape::new();
        let (_, image, text) = self.projections(&tape, momentum, batch)?;
        Ok((image.value(), text.value()))
    }

    /// Sum of the three losses on one batch.
    pub fn batch_loss<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        momentum: &ParamStore,
        state: &ContrastiveState,
        batch: &[Example],
        rng: &mut impl Rng,
    ) -> Result<BatchLoss<'t>> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let (enhanced, image_proj, text_proj) = self.projections(tape, store, batch)?;
        let (momentum_image, momentum_text) = self.momentum_projections(momentum, batch)?;
        let tau = clamp_temperature(tape.param(store, self.temperature));
        let l_itc = itc_loss(image_proj, text_proj, &momentum_image, &momentum_text, tau, state)?;

        let similarity = if self.config.hard_negatives {
            Some(image_proj.matmul(text_proj.transpose()?)?.value())
        } else {
            None
        };
        let negatives = sample_itm_negatives(
            batch.len(),
            similarity.as_ref().map(|s| (s, tau.item())),
            |i, j| batch[i].report == batch[j].report,
            rng,
        );
        let mut itm_rows = Vec::new();
        let mut matches = Vec::new();
        for (ex, enh) in batch.iter().zip(&enhanced) {
            itm_rows.push(self.itm_logits(tape, store, &ex.report, enh)?);
            matches.push(true);
        }
        if let Some(neg) = &negatives {
            for (i, &j) in neg.iter().enumerate() {
                itm_rows.push(self.itm_logits(tape, store, &batch[j].report, &enhanced[i])?);
                matches.push(false);
            }
        }
        let itm = itm_loss(Var::concat_rows(&itm_rows)?, &matches)?;

        let mut logits = Vec::with_capacity(batch.len());
        let mut targets = Vec::new();
        for (ex, enh) in batch.iter().zip(&enhanced) {
            let (l, t) = self.lm_logits(tape, store, &ex.report, enh)?;
            logits.push(l);
            targets.extend(t);
        }
        let l_lm = lm_loss(Var::concat_rows(&logits)?, &targets)?;

        let (loss, breakdown) = total_loss(l_itc, itm.loss, l_lm)?;
        Ok(BatchLoss { loss, breakdown, momentum_image, momentum_text, itm_positives_only: itm.positives_only })
    }

    /// Teacher-forced language-model loss of one example (no other losses).
    pub fn example_lm_loss(&self, store: &ParamStore, ex: &Example) -> Result<f64> {
        let tape = Tape::new();
        let enh = self.enhance_image(&tape, store, &ex.image, &ex.knowledge)?;
        let (logits, targets) = self.lm_logits(&tape, store, &ex.report, &enh)?;
        Ok(lm_loss(logits, &targets)?.item())
    }
}

/// Everything that changes during generator training.
pub struct GeneratorTrainer {
    pub model: ReportModel,
    pub store: ParamStore,
    pub momentum: ParamStore,
    pub optimizer: AdamW,
    pub state: ContrastiveState,
    rng: ChaCha8Rng,
}

impl GeneratorTrainer {
    pub fn new(model: ReportModel, store: ParamStore, optimizer: AdamW, seed: u64) -> Self {
        let state = ContrastiveState::new(model.config.queue_capacity);
        GeneratorTrainer { momentum: store.clone(), model, store, optimizer, state, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Forward, backward, optimizer step, momentum update, queue update.
    pub fn step(&mut self, batch: &[Example]) -> Result<LossBreakdown> {
        self.store.zero_grads();
        let (breakdown, image, text) = {
            let tape = Tape::new();
            let out = self.model.batch_loss(&tape, &self.store, &self.momentum, &self.state, batch, &mut self.rng)?;
            if !out.breakdown.total.is_finite() {
                return Err(Error::Numerical { op: "train_step", detail: format!("non-finite loss {:?}", out.breakdown) });
            }
            out.loss.backward()?;
            self.store.accumulate_grads(&tape);
            (out.breakdown, out.momentum_image, out.momentum_text)
        };
        self.optimizer.step(&mut self.store);
        let tau = self.store.value_mut(self.model.temperature);
        tau.data_mut()[0] = tau.data()[0].clamp(TAU_MIN, TAU_MAX);
        momentum_update(&self.store, &mut self.momentum, self.model.config.momentum)?;
        self.state.enqueue(&image, &text)?;
        Ok(breakdown)
    }

    pub fn temperature(&self) -> f64 {
        self.store.value(self.model.temperature).item()
    }
}

fn with_prefix(first: usize, rest: &[usize]) -> Vec<usize> {
    let mut v = Vec::with_capacity(rest.len() + 1);
    v.push(first);
    v.extend_from_slice(rest);
    v
}
