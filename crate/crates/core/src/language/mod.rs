//! Text side of the controller: the token vocabulary, prompt verbalization of
//! lane observations, and extraction of the chosen phase from a response.

mod extract;
mod prompt;
mod vocab;

pub use extract::{
    extract_phase, extract_phase_tokens, parse_fixture, phase_histogram, tagged_spans,
    FixtureCase,
};
pub use prompt::{
    render_phase, verbalize, HistoryEntry, PhaseCounts, PromptContext, HISTORY_LEN,
};
pub use vocab::{Token, Vocabulary, SIGNAL_CLOSE, SIGNAL_OPEN};
