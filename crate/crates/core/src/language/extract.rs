use super::vocab::{Vocabulary, SIGNAL_CLOSE, SIGNAL_OPEN};
use crate::error::{Error, Result};
use crate::sim::PhaseSpec;

/// Contents of every non-overlapping `<signal>…</signal>` span, left to
/// right. Spans close at the first following close tag.
pub fn tagged_spans(text: &str) -> Vec<&str> {
    let mut spans = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find(SIGNAL_OPEN) {
        let after = &rest[open + SIGNAL_OPEN.len()..];
        match after.find(SIGNAL_CLOSE) {
            Some(close) => {
                spans.push(&after[..close]);
                rest = &after[close + SIGNAL_CLOSE.len()..];
            }
            None => break,
        }
    }
    spans
}

/// Maps free-form response text to a phase index; never fails.
///
/// 1. The last tagged span whose content is exactly a mnemonic wins.
/// 2. Otherwise the phase whose mnemonic or description occurs last in the
///    lower-cased text wins (earlier table entries win exact ties).
/// 3. Otherwise `default_code`.
pub fn extract_phase(text: &str, phases: &[PhaseSpec], default_code: usize) -> usize {
    debug_assert!(default_code < phases.len());
    for span in tagged_spans(text).into_iter().rev() {
        if let Some(p) = phases.iter().find(|p| p.mnemonic == span) {
            return p.index;
        }
    }

    let lower = text.to_lowercase();
    let mut best: Option<(usize, usize)> = None;
    for p in phases {
        let jk = lower.rfind(&p.mnemonic.to_lowercase());
        let jd = lower.rfind(&p.description.to_lowercase());
        let Some(j) = jk.max(jd) else { continue };
        if best.map_or(true, |(_, i)| j > i) {
            best = Some((p.index, j));
        }
    }
    best.map_or(default_code, |(idx, _)| idx)
}

pub fn extract_phase_tokens(
    tokens: &[usize],
    vocab: &Vocabulary,
    phases: &[PhaseSpec],
    default_code: usize,
) -> Result<usize> {
    let text = vocab.decode(tokens)?;
    Ok(extract_phase(&text, phases, default_code))
}

/// Counts of extracted phases over a set of responses.
pub fn phase_histogram<'a>(
    responses: impl IntoIterator<Item = &'a str>,
    phases: &[PhaseSpec],
    default_code: usize,
) -> Vec<usize> {
    let mut counts = vec![0; phases.len()];
    for r in responses {
        counts[extract_phase(r, phases, default_code)] += 1;
    }
    counts
}

/// One case of an extraction corpus: `input_text<TAB>expected_mnemonic`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureCase {
    pub line: usize,
    pub input: String,
    pub expected: String,
}

/// Parses an extraction corpus. Blank lines and lines starting with `#` are
/// skipped; the input may be empty but the tab is mandatory.
pub fn parse_fixture(text: &str) -> Result<Vec<FixtureCase>> {
    let mut cases = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let (input, expected) = raw.rsplit_once('\t').ok_or_else(|| Error::MalformedLog {
            line: i + 1,
            reason: "expected `input<TAB>mnemonic`".into(),
        })?;
        cases.push(FixtureCase {
            line: i + 1,
            input: input.to_string(),
            expected: expected.trim().to_string(),
        });
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{build_topology, Preset, Topology, TopologyConfig};

    fn toy8() -> Topology {
        build_topology(&TopologyConfig::preset(Preset::Toy8)).unwrap()
    }

    fn idx(t: &Topology, m: &str) -> usize {
        t.phase_by_mnemonic(m).unwrap()
    }

    #[test]
    fn tagged_choice() {
        let t = toy8();
        let text = "Step 2: the optimal signal is <signal>ETEL</signal>";
        assert_eq!(extract_phase(text, &t.phases, 0), idx(&t, "ETEL"));
    }

    #[test]
    fn invalid_tag_falls_back_to_last_mention() {
        let t = toy8();
        let text = "<signal>XYZ</signal> considering NTST but prefer WTWL overall";
        assert_eq!(extract_phase(text, &t.phases, 0), idx(&t, "WTWL"));
    }

    #[test]
    fn empty_text_returns_default() {
        let t = toy8();
        assert_eq!(extract_phase("", &t.phases, 3), 3);
        assert_eq!(extract_phase("no phase here", &t.phases, 5), 5);
    }

    #[test]
    fn tag_beats_later_mention() {
        let t = toy8();
        let text = "<signal>NLSL</signal> although ETWT looks busy";
        assert_eq!(extract_phase(text, &t.phases, 0), idx(&t, "NLSL"));
    }

    #[test]
    fn histogram_counts() {
        let t = toy8();
        let mut responses = vec!["<signal>ETEL</signal>"; 6];
        responses.extend(["<signal>NTST</signal>"; 2]);
        let h = phase_histogram(responses, &t.phases, 0);
        assert_eq!(h, vec![2, 0, 0, 0, 0, 0, 6, 0]);

        let garbage = ["", "foo", "<signal>", "</signal>"];
        let h = phase_histogram(garbage, &t.phases, 2);
        assert_eq!(h[2], 4);
        assert_eq!(h.iter().sum::<usize>(), 4);
    }

    #[test]
    fn fixture_parsing() {
        let cases = parse_fixture("# comment\n\tNTST\nabc <signal>ETEL</signal>\tETEL\n").unwrap();
        assert_eq!(cases.len(), 2);
        assert_eq!(cases[0].input, "");
        assert_eq!(cases[1].expected, "ETEL");
        assert!(parse_fixture("no tab here").is_err());
    }
}
