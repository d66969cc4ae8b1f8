use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::lm::model::{digest_tensors, encoder_forward, EncoderParams, WeightDigest};
use crate::lm::vocab::{TokenSequence, SEP};
use crate::lm::FrozenLm;

pub const DEFAULT_SOFT_TOKEN: &str = "radiologist describe stable normality and abnormality exam";
pub const OOD_SOFT_TOKEN: &str = "##1 ##2";

/// The fixed token string fed to the soft prompt encoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SoftPromptToken {
    pub text: String,
    pub ids: TokenSequence,
    pub in_distribution: bool,
    pub length: usize,
}

impl SoftPromptToken {
    pub fn new(text: &str, lm: &FrozenLm) -> Result<Self> {
        let ids = lm.tokenize(text);
        if ids.is_empty() {
            return Err(Error::contract("soft prompt token must contain at least one token"));
        }
        if ids.len() > lm.config().max_seq_len {
            return Err(Error::contract("soft prompt token is longer than max_seq_len"));
        }
        Ok(Self {
            text: text.to_string(),
            in_distribution: !ids.contains_unk(),
            length: ids.len(),
            ids,
        })
    }

    /// The first `length` words of this token.
    pub fn truncated(&self, length: usize, lm: &FrozenLm) -> Result<Self> {
        if length == 0 || length > self.length {
            return Err(Error::contract(format!(
                "soft token length {length} is outside 1..={} for {:?}",
                self.length, self.text
            )));
        }
        let words = crate::lm::vocab::split_words(&self.text);
        Self::new(&words[..length].join(" "), lm)
    }
}

/// How the instruction and the note are joined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeparatorPolicy {
    /// `prompt SEP note`
    #[default]
    PromptFirst,
    /// `note SEP prompt`
    NoteFirst,
}

impl SeparatorPolicy {
    pub fn join(self, t_llm: &[usize], t_org: &[usize], max_len: usize) -> Vec<usize> {
        let mut ids = Vec::with_capacity(t_llm.len() + 1 + t_org.len());
        match self {
            _ if t_llm.is_empty() => ids.extend_from_slice(t_org),
            SeparatorPolicy::PromptFirst => {
                ids.extend_from_slice(t_llm);
                ids.push(SEP);
                ids.extend_from_slice(t_org);
            }
            SeparatorPolicy::NoteFirst => {
                ids.extend_from_slice(t_org);
                ids.push(SEP);
                ids.extend_from_slice(t_llm);
            }
        }
        ids.truncate(max_len);
        ids
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Distance {
    #[default]
    Mse,
    CrossEntropy,
}

impl Distance {
    pub fn apply(self, tape: &mut Tape<'_>, p: Var, q: Var) -> Result<Var> {
        match self {
            Distance::Mse => tape.mse_distance(p, q),
            Distance::CrossEntropy => tape.cross_entropy_distance(p, q),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Distance::Mse => "mse",
            Distance::CrossEntropy => "cross-entropy",
        }
    }
}

impl std::str::FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(Distance::Mse),
            "ce" | "cross-entropy" | "crossentropy" => Ok(Distance::CrossEntropy),
            other => Err(Error::contract(format!("unknown distance {other:?} (expected mse or cross-entropy)"))),
        }
    }
}

/// Trainable copy of the frozen encoder mapping the soft token to `h_soft`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftPromptEncoder {
    pub(crate) params: EncoderParams,
    pub(crate) heads: usize,
    pub(crate) trained: bool,
}

impl SoftPromptEncoder {
    /// Bit-exact copy of the frozen encoder weights, all trainable.
    pub fn from_frozen(lm: &FrozenLm) -> Self {
        let mut params = lm.encoder().clone();
        params.set_requires_grad(true);
        Self {
            params,
            heads: lm.config().heads,
            trained: false,
        }
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    /// Width of the token representations fed to the blocks.
    pub fn input_dim(&self) -> usize {
        self.params.d_model()
    }

    pub fn output_dim(&self) -> usize {
        self.params.d_model()
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn digest(&self) -> WeightDigest {
        digest_tensors(self.params.named_tensors("soft"))
    }

    /// Records `h_soft` on `tape` with the soft parameters bound as trainable leaves.
    pub fn encode_on<'p>(&'p self, tape: &mut Tape<'p>, tok: &SoftPromptToken) -> Result<(Var, Vec<Var>)> {
        if tok.ids.is_empty() {
            return Err(Error::contract("cannot embed empty input"));
        }
        let bound = self.params.bind(tape, true);
        let (_, pooled) = encoder_forward(tape, &bound, &tok.ids.ids, self.heads)?;
        Ok((pooled, bound.vars().to_vec()))
    }
}

pub fn encode_soft(tok: &SoftPromptToken, enc: &SoftPromptEncoder) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let (h, _) = enc.encode_on(&mut tape, tok)?;
    Ok(tape.value(h).to_vec())
}

fn check_org(t_org: &TokenSequence) -> Result<()> {
    if t_org.is_empty() {
        return Err(Error::contract("cannot embed empty input"));
    }
    Ok(())
}

/// Records `(Enc(t_llm ⊕ SEP ⊕ t_org) + h_soft) / 2` and the bare-note
/// embedding on `tape`; only the soft encoder's leaves are trainable.
/// Returns `(e_org, prompted, soft leaves)`.
pub fn record_infosum_operands<'p>(
    tape: &mut Tape<'p>,
    t_org: &TokenSequence,
    t_llm: &TokenSequence,
    tok: &SoftPromptToken,
    lm: &'p FrozenLm,
    enc: &'p SoftPromptEncoder,
    policy: SeparatorPolicy,
) -> Result<(Var, Var, Vec<Var>)> {
    check_org(t_org)?;
    let joined = policy.join(&t_llm.ids, &t_org.ids, lm.config().max_seq_len);
    let (_, e_pr) = lm.encode_on(tape, &joined)?;
    let (_, e_org) = lm.encode_on(tape, &t_org.ids)?;
    let (h, leaves) = enc.encode_on(tape, tok)?;
    let prompted = tape.mean_pair(e_pr, h)?;
    Ok((e_org, prompted, leaves))
}

pub fn prompted_embedding(
    t_org: &TokenSequence,
    t_llm: &TokenSequence,
    tok: &SoftPromptToken,
    lm: &FrozenLm,
    enc: &SoftPromptEncoder,
    policy: SeparatorPolicy,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let (_, prompted, _) = record_infosum_operands(&mut tape, t_org, t_llm, tok, lm, enc, policy)?;
    Ok(tape.value(prompted).to_vec())
}

pub fn infosum_loss(
    t_org: &TokenSequence,
    t_llm: &TokenSequence,
    tok: &SoftPromptToken,
    lm: &FrozenLm,
    enc: &SoftPromptEncoder,
    distance: Distance,
    policy: SeparatorPolicy,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (e_org, prompted, _) = record_infosum_operands(&mut tape, t_org, t_llm, tok, lm, enc, policy)?;
    let loss = distance.apply(&mut tape, e_org, prompted)?;
    Ok(tape.scalar(loss))
}
