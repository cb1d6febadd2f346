use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::Topology;

pub const SIGNAL_OPEN: &str = "<signal>";
pub const SIGNAL_CLOSE: &str = "</signal>";

/// Words used to render filler ("reasoning") tokens. None of them contains a
/// phase mnemonic or a full phase description.
const FILLER_WORDS: [&str; 16] = [
    "analyze", "queue", "compare", "segment", "approaching", "early", "lane", "flow",
    "pressure", "step", "choose", "because", "then", "wait", "therefore", "traffic",
];

const DIGITS: usize = 10;

/// Decoded meaning of a token id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token {
    Phase(usize),
    SignalOpen,
    SignalClose,
    Eos,
    Digit(u8),
    Filler(usize),
}

/// Dense token ids: phase mnemonics first, then the tag pair, EOS, the ten
/// numerals, and the filler tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    mnemonics: Vec<String>,
    filler: usize,
}

impl Vocabulary {
    pub fn new(topology: &Topology, filler: usize) -> Self {
        Vocabulary {
            mnemonics: topology.phases.iter().map(|p| p.mnemonic.clone()).collect(),
            filler,
        }
    }

    pub fn size(&self) -> usize {
        self.mnemonics.len() + 3 + DIGITS + self.filler
    }

    pub fn num_phases(&self) -> usize {
        self.mnemonics.len()
    }

    pub fn phase_token(&self, phase: usize) -> usize {
        debug_assert!(phase < self.mnemonics.len());
        phase
    }

    pub fn signal_open(&self) -> usize {
        self.mnemonics.len()
    }

    pub fn signal_close(&self) -> usize {
        self.mnemonics.len() + 1
    }

    pub fn eos(&self) -> usize {
        self.mnemonics.len() + 2
    }

    pub fn digit(&self, d: u8) -> usize {
        debug_assert!((d as usize) < DIGITS);
        self.mnemonics.len() + 3 + d as usize
    }

    pub fn filler(&self, k: usize) -> usize {
        debug_assert!(k < self.filler);
        self.mnemonics.len() + 3 + DIGITS + k
    }

    pub fn token(&self, id: usize) -> Result<Token> {
        let np = self.mnemonics.len();
        let tok = match id {
            i if i < np => Token::Phase(i),
            i if i == np => Token::SignalOpen,
            i if i == np + 1 => Token::SignalClose,
            i if i == np + 2 => Token::Eos,
            i if i < np + 3 + DIGITS => Token::Digit((i - np - 3) as u8),
            i if i < self.size() => Token::Filler(i - np - 3 - DIGITS),
            _ => {
                return Err(Error::TokenOutOfVocab {
                    token: id,
                    vocab: self.size(),
                })
            }
        };
        Ok(tok)
    }

    pub fn check(&self, tokens: &[usize]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.size()) {
            Some(&token) => Err(Error::TokenOutOfVocab {
                token,
                vocab: self.size(),
            }),
            None => Ok(()),
        }
    }

    fn render(&self, tok: Token) -> String {
        match tok {
            Token::Phase(p) => self.mnemonics[p].clone(),
            Token::SignalOpen => SIGNAL_OPEN.to_string(),
            Token::SignalClose => SIGNAL_CLOSE.to_string(),
            Token::Eos => String::new(),
            Token::Digit(d) => d.to_string(),
            Token::Filler(k) if k < FILLER_WORDS.len() => FILLER_WORDS[k].to_string(),
            Token::Filler(k) => format!("{}{}", FILLER_WORDS[k % FILLER_WORDS.len()], k),
        }
    }

    /// Text form of a response. Rendering stops at the first EOS; tags hug
    /// their content so `<signal> ETEL </signal>` reads `<signal>ETEL</signal>`.
    pub fn decode(&self, tokens: &[usize]) -> Result<String> {
        let mut out = String::new();
        let mut prev_open = true;
        for &id in tokens {
            let tok = self.token(id)?;
            if tok == Token::Eos {
                break;
            }
            if !out.is_empty() && !prev_open && tok != Token::SignalClose {
                out.push(' ');
            }
            out.push_str(&self.render(tok));
            prev_open = tok == Token::SignalOpen;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{build_topology, Preset, TopologyConfig};

    fn vocab() -> Vocabulary {
        let t = build_topology(&TopologyConfig::preset(Preset::Toy8)).unwrap();
        Vocabulary::new(&t, 16)
    }

    #[test]
    fn ids_are_dense_and_unique() {
        let v = vocab();
        assert_eq!(v.size(), 8 + 3 + 10 + 16);
        let kinds: Vec<_> = (0..v.size()).map(|i| v.token(i).unwrap()).collect();
        for (i, a) in kinds.iter().enumerate() {
            for b in &kinds[i + 1..] {
                assert_ne!(a, b);
            }
        }
        assert_eq!(v.token(v.eos()).unwrap(), Token::Eos);
        assert!(v.token(v.size()).is_err());
    }

    #[test]
    fn decode_hugs_tags_and_stops_at_eos() {
        let v = vocab();
        let toks = [
            v.filler(0),
            v.digit(4),
            v.signal_open(),
            v.phase_token(6),
            v.signal_close(),
            v.eos(),
            v.phase_token(1),
        ];
        assert_eq!(v.decode(&toks).unwrap(), "analyze 4 <signal>ETEL</signal>");
    }

    #[test]
    fn filler_words_never_spell_a_phase() {
        let v = vocab();
        let t = build_topology(&TopologyConfig::preset(Preset::Toy8)).unwrap();
        let t4 = build_topology(&TopologyConfig::preset(Preset::Toy4)).unwrap();
        for k in 0..16 {
            let w = v.decode(&[v.filler(k)]).unwrap().to_lowercase();
            for p in t.phases.iter().chain(&t4.phases) {
                assert!(!w.contains(&p.mnemonic.to_lowercase()));
            }
        }
    }
}
