//! Synthetic dialogues with controlled pronoun-drop dynamics between
//! consecutive utterances.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, LabelSet, Turn, NONE_LABEL};
use crate::error::{Error, Result};

const WORDS: &[&str] = &[
    "吃", "饭", "去", "学校", "看", "书", "好", "今天", "明天", "喜欢", "工作", "电影", "买", "东西", "回家", "觉得", "知道", "想", "没有", "可以",
];
/// Non-initial cue after which a dropped 他 is always restored.
pub const CUE_TOKEN: &str = "来了";
const CUE_LABEL: &str = "他";
const ACKNOWLEDGMENTS: &[&str] = &["嗯", "哈哈"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Speakers alternate and the dropped pronoun flips between 我 and 你.
    Reply,
    /// One speaker keeps the same pronoun for a few utterances, sometimes
    /// stating it overtly in the first one.
    Expansion,
    /// Expansion, reply and acknowledgment transitions mixed at random.
    Mixed,
    /// An overt pronoun opens the dialogue and every later utterance drops
    /// the next pronoun in the rotation 我 → 你 → 他 → 我. Tokens and
    /// speakers are random, so only the chain of utterance-initial labels
    /// carries the information.
    Cycle,
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reply" => Ok(Pattern::Reply),
            "expansion" => Ok(Pattern::Expansion),
            "mixed" => Ok(Pattern::Mixed),
            "cycle" => Ok(Pattern::Cycle),
            _ => Err(Error::Config(format!("unknown pattern {s:?}; expected reply, expansion, mixed or cycle"))),
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pattern::Reply => "reply",
            Pattern::Expansion => "expansion",
            Pattern::Mixed => "mixed",
            Pattern::Cycle => "cycle",
        })
    }
}

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub pattern: Pattern,
    pub conversations: usize,
    pub utterances: usize,
    pub seed: u64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Chance that an utterance contains the cue token.
    pub cue_rate: f64,
}

impl SynthOptions {
    pub fn new(pattern: Pattern, conversations: usize, seed: u64) -> Self {
        Self {
            pattern,
            conversations,
            utterances: crate::corpus::DEFAULT_SNIPPET_LEN,
            seed,
            min_tokens: 2,
            max_tokens: 4,
            cue_rate: 0.25,
        }
    }
}

struct Line {
    speaker: usize,
    /// Dropped pronoun before the first token, or an overt/interjection opener.
    opener: Opener,
}

enum Opener {
    Dropped(&'static str),
    Overt(&'static str),
    Acknowledgment,
}

/// Generates `opts.conversations` labeled records.
pub fn synthesize(labels: &LabelSet, opts: &SynthOptions) -> Result<Vec<Conversation>> {
    for l in ["我", "你", "他"] {
        if labels.index(l).is_none() {
            return Err(Error::Config(format!("label set lacks {l:?}, required by the generator")));
        }
    }
    if opts.utterances == 0 || opts.min_tokens == 0 || opts.max_tokens < opts.min_tokens {
        return Err(Error::Config("invalid synthetic corpus dimensions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    (0..opts.conversations)
        .map(|c| {
            let lines = plan(opts.pattern, opts.utterances, &mut rng);
            Ok(Conversation {
                id: format!("{}-{c}", opts.pattern),
                turns: lines.iter().map(|l| realize(l, opts, &mut rng)).collect(),
            })
        })
        .collect()
}

fn swap(label: &str) -> &'static str {
    if label == "我" {
        "你"
    } else {
        "我"
    }
}

fn rotate(label: &str) -> &'static str {
    match label {
        "我" => "你",
        "你" => "他",
        _ => "我",
    }
}

fn plan(pattern: Pattern, n: usize, rng: &mut ChaCha8Rng) -> Vec<Line> {
    let pronouns = ["我", "你", "他"];
    let mut lines = Vec::with_capacity(n);
    match pattern {
        Pattern::Reply => {
            let mut label = *["我", "你"].choose(rng).expect("non-empty");
            for i in 0..n {
                lines.push(Line {
                    speaker: i % 2,
                    opener: Opener::Dropped(label),
                });
                label = swap(label);
            }
        }
        Pattern::Expansion => {
            let mut speaker = 0;
            while lines.len() < n {
                let label = *pronouns.choose(rng).expect("non-empty");
                let overt = rng.gen_bool(0.5);
                for j in 0..rng.gen_range(2..=4) {
                    lines.push(Line {
                        speaker,
                        opener: if overt && j == 0 {
                            Opener::Overt(label)
                        } else {
                            Opener::Dropped(label)
                        },
                    });
                }
                speaker = 1 - speaker;
            }
            lines.truncate(n);
        }
        Pattern::Mixed => {
            let mut speaker = 0;
            let mut label = *pronouns.choose(rng).expect("non-empty");
            lines.push(Line {
                speaker,
                opener: Opener::Dropped(label),
            });
            while lines.len() < n {
                let roll: f64 = rng.gen();
                if roll < 0.4 {
                    lines.push(Line {
                        speaker,
                        opener: Opener::Dropped(label),
                    });
                } else if roll < 0.8 {
                    speaker = 1 - speaker;
                    label = swap(label);
                    lines.push(Line {
                        speaker,
                        opener: Opener::Dropped(label),
                    });
                } else {
                    lines.push(Line {
                        speaker: 1 - speaker,
                        opener: Opener::Acknowledgment,
                    });
                }
            }
        }
        Pattern::Cycle => {
            let mut label = *pronouns.choose(rng).expect("non-empty");
            lines.push(Line {
                speaker: rng.gen_range(0..3),
                opener: Opener::Overt(label),
            });
            while lines.len() < n {
                label = rotate(label);
                lines.push(Line {
                    speaker: rng.gen_range(0..3),
                    opener: Opener::Dropped(label),
                });
            }
        }
    }
    lines
}

fn realize(line: &Line, opts: &SynthOptions, rng: &mut ChaCha8Rng) -> Turn {
    let len = rng.gen_range(opts.min_tokens..=opts.max_tokens);
    let mut tokens: Vec<String> = (0..len).map(|_| WORDS.choose(rng).expect("non-empty").to_string()).collect();
    let mut labels = vec![NONE_LABEL.to_string(); len];
    match line.opener {
        Opener::Dropped(l) => labels[0] = l.to_string(),
        Opener::Overt(p) => tokens[0] = p.to_string(),
        Opener::Acknowledgment => tokens[0] = ACKNOWLEDGMENTS.choose(rng).expect("non-empty").to_string(),
    }
    if len > 1 && rng.gen_bool(opts.cue_rate) {
        let j = rng.gen_range(1..len);
        tokens[j] = CUE_TOKEN.to_string();
        labels[j] = CUE_LABEL.to_string();
    }
    Turn {
        speaker: format!("S{}", line.speaker),
        tokens,
        labels,
        predicted: None,
    }
}
