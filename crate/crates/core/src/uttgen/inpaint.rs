use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::templates::{PartialConversation, Role, Slot};

/// Request body: the conversation so far with exactly one masked (null) user
/// slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InpaintRequest {
    pub turns: Vec<Slot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InpaintResponse {
    pub text: String,
}

/// Request body in one-shot mode: every user slot is masked at once.
pub type OneShotRequest = InpaintRequest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneShotResponse {
    pub texts: Vec<String>,
}

#[derive(Debug, Error)]
pub enum InpaintError {
    #[error("inpainter request timed out after {attempts} attempt(s)")]
    Timeout { attempts: usize },
    #[error("inpainter transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("malformed inpainter response: {0}")]
    Malformed(String),
    #[error("inpainter returned {got} utterance(s) for {expected} mask(s)")]
    CountMismatch { expected: usize, got: usize },
}

/// A dialog inpainting backend.
pub trait Inpainter {
    /// Fills the single masked slot of `request`.
    fn fill(&self, request: &InpaintRequest) -> Result<InpaintResponse, InpaintError>;

    /// Fills every masked slot at once. Backends that only support one mask
    /// per request can keep the default, which reports a count mismatch.
    fn fill_all(&self, request: &OneShotRequest) -> Result<OneShotResponse, InpaintError> {
        let expected = request.turns.iter().filter(|s| s.text.is_none()).count();
        Err(InpaintError::CountMismatch { expected, got: 0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InpaintMode {
    /// One request per mask, left to right; each request carries the
    /// utterances filled so far and ends at the system response of the
    /// masked turn.
    #[default]
    Iterative,
    OneShot,
}

fn check_utterance(text: String) -> Result<String, InpaintError> {
    if text.trim().is_empty() {
        return Err(InpaintError::Malformed("empty utterance".into()));
    }
    Ok(text)
}

/// One user utterance per masked slot of `partial`, in order.
pub fn inpaint(
    client: &dyn Inpainter,
    partial: &PartialConversation,
    mode: InpaintMode,
) -> Result<Vec<String>, InpaintError> {
    let masks = partial.masks();
    match mode {
        InpaintMode::OneShot => {
            let resp = client.fill_all(&InpaintRequest {
                turns: partial.turns.clone(),
            })?;
            if resp.texts.len() != masks {
                return Err(InpaintError::CountMismatch {
                    expected: masks,
                    got: resp.texts.len(),
                });
            }
            resp.texts.into_iter().map(check_utterance).collect()
        }
        InpaintMode::Iterative => {
            let mut turns: Vec<Slot> = Vec::with_capacity(partial.turns.len());
            let mut out = Vec::with_capacity(masks);
            for (i, slot) in partial.turns.iter().enumerate() {
                if slot.text.is_some() {
                    turns.push(slot.clone());
                    continue;
                }
                let mut request = turns.clone();
                request.push(slot.clone());
                if let Some(next) = partial.turns.get(i + 1).filter(|s| s.role == Role::System) {
                    request.push(next.clone());
                }
                let text = check_utterance(client.fill(&InpaintRequest { turns: request })?.text)?;
                turns.push(Slot {
                    role: slot.role,
                    text: Some(text.clone()),
                });
                out.push(text);
            }
            Ok(out)
        }
    }
}
