//! Viterbi pronunciation of character sequences under
//! `Pr(P) · ∏ Pr(c_i | p_i)^k`, and a brute-force oracle with the same
//! scoring function.

use crate::channel::ChannelTable;
use crate::error::{Error, Result};
use crate::lm::NgramLM;
use crate::symbols::{SymbolId, BOS};

/// Channel probability used for characters no syllable row supports.
pub const FALLBACK_EPSILON: f64 = 1e-12;

/// Largest search space [`exhaustive_decode`] accepts.
pub const EXHAUSTIVE_LIMIT: f64 = 1e7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeConfig {
    /// Power applied to channel probabilities.
    pub exponent: f64,
    /// Language model order; 1 and 2 are supported.
    pub lm_order: usize,
    /// States kept per position; 0 keeps all (exact search).
    pub beam: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            exponent: 3.0,
            lm_order: 2,
            beam: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// Syllable ids in the language model's vocabulary.
    pub syllables: Vec<SymbolId>,
    pub log_score: f64,
    /// Positions decoded with the ε fallback.
    pub fallback: Vec<usize>,
}

/// Precomputed log tables joining an LM and a channel over the LM's
/// syllable vocabulary.
#[derive(Clone, Debug)]
pub struct Decoder<'a> {
    lm: &'a NgramLM,
    channel: &'a ChannelTable,
    cfg: DecodeConfig,
    states: usize,
    // [(h + 1) * states + w], row 0 is the start context
    log_trans: Vec<f64>,
    // [c * states + s]
    log_emit: Vec<f64>,
    supported: Vec<bool>,
}

impl<'a> Decoder<'a> {
    pub fn new(lm: &'a NgramLM, channel: &'a ChannelTable, cfg: DecodeConfig) -> Result<Self> {
        if cfg.exponent < 1.0 || !cfg.exponent.is_finite() {
            return Err(Error::Config("channel exponent must be at least 1".into()));
        }
        if lm.order() != cfg.lm_order {
            return Err(Error::Config(format!(
                "decoder configured for order {} but the language model has order {}",
                cfg.lm_order,
                lm.order()
            )));
        }
        if !(1..=2).contains(&lm.order()) {
            return Err(Error::Unsupported(format!("decoding with an order-{} model", lm.order())));
        }
        let states = lm.vocab_size();
        if states == 0 {
            return Err(Error::Empty("language model vocabulary"));
        }
        let mut log_trans = vec![0.0; (states + 1) * states];
        for h in 0..=states {
            let hist: Vec<SymbolId> = match lm.order() {
                1 => vec![],
                _ if h == 0 => vec![BOS],
                _ => vec![(h - 1) as SymbolId],
            };
            for w in 0..states {
                log_trans[h * states + w] = lm.cond_prob(&hist, w as SymbolId).ln();
            }
        }
        // LM state -> channel syllable row
        let rows: Vec<Option<SymbolId>> = lm
            .vocab()
            .iter()
            .map(|(_, s)| channel.syllables().get(s))
            .collect();
        let nc = channel.n_chars();
        let mut log_emit = vec![f64::NEG_INFINITY; nc * states];
        let mut supported = vec![false; nc];
        for c in 0..nc {
            for (s, row) in rows.iter().enumerate() {
                if let Some(p) = row {
                    let v = channel.prob(c as SymbolId, *p);
                    if v > 0.0 {
                        log_emit[c * states + s] = v.ln();
                        supported[c] = true;
                    }
                }
            }
        }
        Ok(Self {
            lm,
            channel,
            cfg,
            states,
            log_trans,
            log_emit,
            supported,
        })
    }

    pub fn num_states(&self) -> usize {
        self.states
    }

    pub fn lm(&self) -> &NgramLM {
        self.lm
    }

    pub fn channel(&self) -> &ChannelTable {
        self.channel
    }

    fn trans(&self, prev: Option<usize>, w: usize) -> f64 {
        let h = prev.map_or(0, |p| p + 1);
        self.log_trans[h * self.states + w]
    }

    /// Weighted log emission; `None` marks the ε fallback.
    fn emit(&self, c: Option<SymbolId>, s: usize) -> (f64, bool) {
        match c {
            Some(c) if (c as usize) < self.supported.len() && self.supported[c as usize] => {
                (self.cfg.exponent * self.log_emit[c as usize * self.states + s], false)
            }
            _ => (self.cfg.exponent * FALLBACK_EPSILON.ln(), true),
        }
    }

    /// Maps characters of a line to channel ids (`None` for unknown).
    pub fn encode_line(&self, line: &str) -> Vec<Option<SymbolId>> {
        let mut buf = [0u8; 4];
        line.chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| self.channel.chars().get(c.encode_utf8(&mut buf)))
            .collect()
    }

    /// Log score of a complete syllable sequence.
    pub fn score(&self, chars: &[Option<SymbolId>], states: &[SymbolId]) -> f64 {
        assert_eq!(chars.len(), states.len());
        let mut total = 0.0;
        let mut prev = None;
        for (&c, &s) in chars.iter().zip(states) {
            let s = s as usize;
            total += self.trans(prev, s) + self.emit(c, s).0;
            prev = Some(s);
        }
        total
    }

    pub fn viterbi(&self, chars: &[Option<SymbolId>]) -> Decoded {
        let n = self.states;
        let fallback: Vec<usize> = chars
            .iter()
            .enumerate()
            .filter(|(_, &c)| self.emit(c, 0).1)
            .map(|(i, _)| i)
            .collect();
        if chars.is_empty() {
            return Decoded {
                syllables: vec![],
                log_score: 0.0,
                fallback,
            };
        }
        let mut back = vec![0u32; chars.len() * n];
        let mut delta: Vec<f64> = (0..n).map(|s| self.trans(None, s) + self.emit(chars[0], s).0).collect();
        self.prune(&mut delta);
        let mut next = vec![f64::NEG_INFINITY; n];
        let mut active: Vec<usize> = Vec::with_capacity(n);
        for (t, &c) in chars.iter().enumerate().skip(1) {
            active.clear();
            active.extend((0..n).filter(|&s| delta[s] > f64::NEG_INFINITY));
            if active.is_empty() {
                // everything died; keep all states so the path stays well defined
                active.extend(0..n);
            }
            for s in 0..n {
                let mut best = f64::NEG_INFINITY;
                let mut arg = active[0];
                let lm_order_one = self.lm.order() == 1;
                if lm_order_one {
                    // transition does not depend on the previous state
                    for &r in &active {
                        if delta[r] > best {
                            best = delta[r];
                            arg = r;
                        }
                    }
                    best += self.trans(None, s);
                } else {
                    for &r in &active {
                        let v = delta[r] + self.log_trans[(r + 1) * n + s];
                        if v > best {
                            best = v;
                            arg = r;
                        }
                    }
                }
                next[s] = best + self.emit(c, s).0;
                back[t * n + s] = arg as u32;
            }
            std::mem::swap(&mut delta, &mut next);
            self.prune(&mut delta);
        }
        let mut last = 0;
        for s in 1..n {
            if delta[s] > delta[last] {
                last = s;
            }
        }
        let log_score = delta[last];
        let mut path = vec![0u32; chars.len()];
        path[chars.len() - 1] = last as u32;
        for t in (1..chars.len()).rev() {
            path[t - 1] = back[t * n + path[t] as usize];
        }
        Decoded {
            syllables: path,
            log_score,
            fallback,
        }
    }

    fn prune(&self, delta: &mut [f64]) {
        let b = self.cfg.beam;
        if b == 0 || b >= delta.len() {
            return;
        }
        let mut order: Vec<usize> = (0..delta.len()).collect();
        order.sort_by(|&x, &y| delta[y].total_cmp(&delta[x]).then(x.cmp(&y)));
        for &s in &order[b..] {
            delta[s] = f64::NEG_INFINITY;
        }
    }

    /// Brute-force argmax over all `states^len` sequences; ties go to the
    /// lexicographically smallest sequence.
    pub fn exhaustive(&self, chars: &[Option<SymbolId>]) -> Result<Decoded> {
        let space = (self.states as f64).powi(chars.len() as i32);
        if space > EXHAUSTIVE_LIMIT {
            return Err(Error::TooLarge(space));
        }
        let fallback: Vec<usize> = chars
            .iter()
            .enumerate()
            .filter(|(_, &c)| self.emit(c, 0).1)
            .map(|(i, _)| i)
            .collect();
        let len = chars.len();
        let mut cur = vec![0u32; len];
        let mut best = cur.clone();
        let mut best_score = self.score(chars, &cur);
        'outer: loop {
            // odometer increment, last position fastest
            let mut i = len;
            loop {
                if i == 0 {
                    break 'outer;
                }
                i -= 1;
                cur[i] += 1;
                if (cur[i] as usize) < self.states {
                    break;
                }
                cur[i] = 0;
            }
            let s = self.score(chars, &cur);
            if s > best_score {
                best_score = s;
                best.copy_from_slice(&cur);
            }
        }
        Ok(Decoded {
            syllables: best,
            log_score: best_score,
            fallback,
        })
    }
}

/// Viterbi decoding of a character id sequence (ids in the channel's
/// character table; `None` for characters the channel never saw).
pub fn viterbi_decode(
    chars: &[Option<SymbolId>],
    lm: &NgramLM,
    channel: &ChannelTable,
    cfg: DecodeConfig,
) -> Result<Decoded> {
    Ok(Decoder::new(lm, channel, cfg)?.viterbi(chars))
}

pub fn exhaustive_decode(
    chars: &[Option<SymbolId>],
    lm: &NgramLM,
    channel: &ChannelTable,
    cfg: DecodeConfig,
) -> Result<Decoded> {
    Decoder::new(lm, channel, cfg)?.exhaustive(chars)
}
