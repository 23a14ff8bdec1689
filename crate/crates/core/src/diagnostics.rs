use serde::{Deserialize, Serialize};

/// A non-fatal condition raised by a batch transform.
///
/// Operations that degrade gracefully (constant rater, constant attribute
/// column, colliding frame choice, ...) return these alongside their result
/// so that callers can audit them; each one is also logged at `warn` level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub code: String,
    pub message: String,
}

impl Warning {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        let w = Warning {
            code: code.to_string(),
            message: message.into(),
        };
        log::warn!("{}: {}", w.code, w.message);
        w
    }
}
