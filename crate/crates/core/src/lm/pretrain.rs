use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::CorpusRecord;
use super::model::{decoder_forward, encoder_forward, FrozenLm, ModelConfig};
use super::synthetic::LEXICON;
use super::vocab::{split_words, Vocabulary, BOS, EOS};
use crate::diff::{OptimizerState, Tape};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once the relative epoch-loss improvement stays below
    /// `min_rel_improvement` for `patience` consecutive epochs.
    pub patience: usize,
    pub min_rel_improvement: f64,
    pub seed: u64,
    /// Extra texts whose words must be in the vocabulary.
    pub extra_vocab: Vec<String>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            learning_rate: 3e-3,
            batch_size: 16,
            max_epochs: 500,
            patience: 10,
            min_rel_improvement: 1e-4,
            seed: 0,
            extra_vocab: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    pub epoch_losses: Vec<f64>,
    pub converged: bool,
}

/// Specials, the clinical lexicon, and every word in the corpus and extras.
pub fn build_vocabulary(corpus: &[CorpusRecord], extra: &[String]) -> Vocabulary {
    let mut words: std::collections::BTreeSet<String> = split_words(LEXICON).into_iter().collect();
    for r in corpus {
        words.extend(split_words(&r.findings));
        words.extend(split_words(&r.impression));
    }
    for t in extra {
        words.extend(split_words(t));
    }
    Vocabulary::from_words(words)
}

struct Example {
    source: Vec<usize>,
    target: Vec<usize>,
}

/// Relative-improvement stopping rule shared by the training loops.
#[derive(Clone, Debug)]
pub(crate) struct Plateau {
    patience: usize,
    tol: f64,
    prev: f64,
    stale: usize,
}

impl Plateau {
    pub(crate) fn new(patience: usize, tol: f64) -> Self {
        Self {
            patience,
            tol,
            prev: f64::INFINITY,
            stale: 0,
        }
    }

    /// Records an epoch loss; true once training should stop. Improvement is
    /// measured against the previous epoch, so a loss that is recovering from
    /// a spike does not count as stalled.
    pub(crate) fn observe(&mut self, loss: f64) -> bool {
        if self.prev.is_finite() && (self.prev - loss) / self.prev.abs().max(1e-12) < self.tol {
            self.stale += 1;
        } else {
            self.stale = 0;
        }
        self.prev = loss;
        self.patience > 0 && self.stale >= self.patience
    }
}

/// Teacher-forced training of a fresh model on findings → impression, then
/// freezing. `on_epoch(epoch, mean_loss)` is called after each epoch.
pub fn pretrain(
    corpus: &[CorpusRecord],
    config: &PretrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(FrozenLm, PretrainReport)> {
    config.model.validate()?;
    if config.batch_size == 0 || config.max_epochs == 0 {
        return Err(Error::contract("batch_size and max_epochs must be positive"));
    }
    let usable: Vec<&CorpusRecord> = corpus.iter().filter(|r| r.has_impression()).collect();
    if usable.is_empty() {
        return Err(Error::contract("pretraining corpus has no record with an impression"));
    }
    let vocab = build_vocabulary(corpus, &config.extra_vocab);
    let mut lm = FrozenLm::new_random(vocab, config.model, config.seed)?;
    let heads = config.model.heads;
    let max_len = config.model.max_seq_len;

    let examples: Vec<Example> = usable
        .iter()
        .map(|r| {
            let mut target = lm.tokenize(&r.impression).ids;
            target.truncate(max_len - 1);
            target.push(EOS);
            let mut source = lm.tokenize(&r.findings).ids;
            source.truncate(max_len);
            Example { source, target }
        })
        .collect();
    let mut order: Vec<usize> = (0..examples.len()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_c0de);
    let mut opt = OptimizerState::adam(config.learning_rate)?;
    let mut plateau = Plateau::new(config.patience, config.min_rel_improvement);
    let mut report = PretrainReport {
        epoch_losses: Vec::new(),
        converged: false,
    };

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);

        let mut total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let grads = {
                let mut tape = Tape::new();
                let enc = lm.encoder.bind(&mut tape, true);
                let dec = lm.decoder.bind(&mut tape, true);
                let mut losses = Vec::with_capacity(batch.len());
                for &i in batch {
                    let ex = &examples[i];
                    let (_, pooled) = encoder_forward(&mut tape, &enc, &ex.source, heads)?;
                    let mut input = vec![BOS];
                    input.extend_from_slice(&ex.target[..ex.target.len() - 1]);
                    let logits = decoder_forward(&mut tape, &dec, pooled, &input, heads, false)?;
                    losses.push(tape.nll(logits, &ex.target)?);
                }
                let loss = tape.mean(&losses)?;
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        pair: Some(b * config.batch_size),
                        loss: value,
                    });
                }
                total += value * batch.len() as f64;
                tape.backward(loss)?;
                enc.vars()
                    .iter()
                    .chain(dec.vars())
                    .map(|&v| tape.take_grad(v))
                    .collect::<Vec<_>>()
            };
            let (encoder, decoder) = lm.params_mut()?;
            let mut params: Vec<_> = encoder.tensors_mut();
            params.extend(decoder.tensors_mut());
            for (p, g) in params.iter_mut().zip(grads) {
                if let Some(g) = g {
                    p.accumulate_grad(&g)?;
                }
            }
            opt.step(&mut params)?;
        }
        let mean = total / order.len() as f64;
        report.epoch_losses.push(mean);
        on_epoch(epoch, mean);
        if plateau.observe(mean) {
            report.converged = true;
            break;
        }
    }
    lm.freeze();
    Ok((lm, report))
}
